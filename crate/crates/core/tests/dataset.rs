use statrs::distribution::{ChiSquared, ContinuousCDF};
use tsvt::flow::{flow_sequence, FlowSolverConfig};
use tsvt::video::{
    generate_synthetic_dataset, split_counts, ClassSpec, Motion, Shape, SynthClip, SynthDataset, SynthDatasetConfig,
};

const BINS: usize = 10;

fn dataset(seed: u64) -> SynthDataset {
    generate_synthetic_dataset(&SynthDatasetConfig {
        seed,
        ..SynthDatasetConfig::default()
    })
    .unwrap()
}

fn all(ds: &SynthDataset) -> impl Iterator<Item = &SynthClip> {
    ds.train.iter().chain(&ds.val).chain(&ds.test)
}

fn histogram(clips: &[&SynthClip], t: usize) -> Vec<f64> {
    let mut h = vec![0.0; BINS];
    for c in clips {
        for &v in c.clip.frame_data(t) {
            h[((v * BINS as f64) as usize).min(BINS - 1)] += 1.0;
        }
    }
    h
}

/// Pearson χ² homogeneity test of two count vectors; returns the p-value.
fn homogeneity_p(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    let n = na + nb;
    let mut stat = 0.0;
    let mut cells = 0;
    for (&x, &y) in a.iter().zip(b) {
        let col = x + y;
        if col == 0.0 {
            continue;
        }
        cells += 1;
        let (ea, eb) = (na * col / n, nb * col / n);
        stat += (x - ea).powi(2) / ea + (y - eb).powi(2) / eb;
    }
    let dof = (cells - 1) as f64;
    1.0 - ChiSquared::new(dof).unwrap().cdf(stat)
}

#[test]
fn motion_only_classes_have_matching_pixel_histograms() {
    let ds = dataset(0);
    let names = ds.class_names();
    let pick = |name: &str| {
        let k = names.iter().position(|n| n == name).unwrap();
        all(&ds).filter(|c| c.class == k).collect::<Vec<_>>()
    };
    let (right, left) = (pick("square_right"), pick("square_left"));
    assert_eq!((right.len(), left.len()), (30, 30));
    for t in 0..ds.config.frames {
        let p = homogeneity_p(&histogram(&right, t), &histogram(&left, t));
        assert!(p > 0.01, "frame {t}: p = {p}");
    }
    // same appearance, opposite motion
    assert_eq!(right[0].spec.shape, left[0].spec.shape);
    assert!(right.iter().all(|c| c.velocity.0 > 0.0 && c.velocity.1 == 0.0));
    assert!(left.iter().all(|c| c.velocity.0 < 0.0 && c.velocity.1 == 0.0));
}

#[test]
fn estimated_flow_follows_ground_truth_motion() {
    let ds = generate_synthetic_dataset(&SynthDatasetConfig {
        clips_per_class: 4,
        ..SynthDatasetConfig::default()
    })
    .unwrap();
    let cfg = FlowSolverConfig::default();
    for c in all(&ds) {
        let flows = flow_sequence(&c.clip, &cfg).unwrap();
        let (vx, vy) = c.velocity;
        for (t, f) in flows.iter().enumerate().take(c.clip.frames() - 1) {
            let support = c.support(t);
            let (mut su, mut sv) = (0.0, 0.0);
            for &(y, x) in &support {
                let (u, v) = f.get(y, x);
                su += u;
                sv += v;
            }
            let n = support.len() as f64;
            let (mu, mv) = (su / n, sv / n);
            // mean flow on the shape points along the true velocity
            let cos = (mu * vx + mv * vy) / (mu.hypot(mv) * vx.hypot(vy));
            assert!(cos > 0.9, "{} frame {t}: mean ({mu:.3}, {mv:.3}) vs ({vx}, {vy})", c.id);
        }
    }
}

#[test]
fn splits_are_stratified_and_disjoint() {
    let ds = dataset(3);
    let cfg = &ds.config;
    let (tr, va, te) = split_counts(cfg.clips_per_class);
    assert_eq!(tr + va + te, cfg.clips_per_class);
    assert!(va >= 1 && te >= 1);
    for k in 0..cfg.classes.len() {
        assert_eq!(ds.train.iter().filter(|c| c.class == k).count(), tr);
        assert_eq!(ds.val.iter().filter(|c| c.class == k).count(), va);
        assert_eq!(ds.test.iter().filter(|c| c.class == k).count(), te);
    }
    let mut ids: Vec<&str> = all(&ds).map(|c| c.id.as_str()).collect();
    let n = ids.len();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), n);
    assert_eq!(n, ds.len());
    assert!(all(&ds).all(|c| c.clip.label == Some(c.class)));
}

#[test]
fn generation_is_seed_deterministic() {
    assert_eq!(dataset(7), dataset(7));
    assert_ne!(dataset(7).train[0].clip, dataset(8).train[0].clip);
}

#[test]
fn pixels_stay_in_unit_range_and_shapes_stay_inside() {
    let ds = generate_synthetic_dataset(&SynthDatasetConfig {
        classes: vec![
            ClassSpec { shape: Shape::Disc, motion: Motion::Up },
            ClassSpec { shape: Shape::Square, motion: Motion::Down },
        ],
        clips_per_class: 6,
        noise: 0.3,
        ..SynthDatasetConfig::default()
    })
    .unwrap();
    let area = |c: &SynthClip, t| c.support(t).len();
    for c in all(&ds) {
        assert!(c.clip.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let a0 = area(c, 0);
        assert!(a0 > 0);
        for t in 1..c.clip.frames() {
            assert!(area(c, t).abs_diff(a0) <= 2 * ds.config.shape_size as usize, "{}", c.id);
        }
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        SynthDatasetConfig { clips_per_class: 0, ..SynthDatasetConfig::default() },
        SynthDatasetConfig { classes: vec![], ..SynthDatasetConfig::default() },
        SynthDatasetConfig { shape_size: 40.0, ..SynthDatasetConfig::default() },
        SynthDatasetConfig { noise: -0.1, ..SynthDatasetConfig::default() },
    ];
    for cfg in bad {
        assert!(generate_synthetic_dataset(&cfg).is_err(), "{cfg:?}");
    }
}
