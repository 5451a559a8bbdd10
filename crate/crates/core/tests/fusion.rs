mod common;

use common::grad::{randn, reduced_model_config, store_check, weighted_sum, TOLERANCE};
use proptest::prelude::*;
use tsvt::fusion::{EncoderLayer, FusionClassifier, FusionConfig, FusionTokens};
use tsvt::model::{Sample, Streams, TwoStreamModel};
use tsvt::nn::ForwardCtx;
use tsvt::rng::seeded;
use tsvt::tensor::ParamStore;
use tsvt::train::argmax;
use tsvt::{Tape, Tensor};

fn logits(
    clf: &FusionClassifier,
    store: &ParamStore,
    rgb: Option<&Tensor>,
    flow: Option<&Tensor>,
) -> Vec<f64> {
    let mut tape = Tape::new();
    let r = rgb.map(|t| tape.constant(t.clone()));
    let f = flow.map(|t| tape.constant(t.clone()));
    let y = clf.forward(&mut tape, store, r, f, 0.5, &mut ForwardCtx::eval()).unwrap();
    tape.value(y).data().to_vec()
}

fn classifier(tokens: FusionTokens, seed: u64) -> (ParamStore, FusionClassifier) {
    let cfg = FusionConfig {
        heads: 4,
        ffn_dim: 32,
        tokens,
        ..FusionConfig::default()
    };
    let mut store = ParamStore::new();
    let clf = FusionClassifier::new(&mut store, "fusion", 16, 4, 5, &cfg, &mut seeded(seed, 0)).unwrap();
    (store, clf)
}

#[test]
fn stream_order_matters() {
    for tokens in [FusionTokens::Pooled, FusionTokens::AllTokens] {
        let (store, clf) = classifier(tokens, 1);
        let (r, f) = (randn(&[4, 16], 1, 0), randn(&[4, 16], 1, 1));
        let a = logits(&clf, &store, Some(&r), Some(&f));
        let b = logits(&clf, &store, Some(&f), Some(&r));
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-9), "{tokens:?}");
    }
}

#[test]
fn ablated_stream_equals_zero_tokens() {
    let (store, clf) = classifier(FusionTokens::Pooled, 2);
    let r = randn(&[4, 16], 2, 0);
    let zeros = Tensor::zeros([4, 16]);
    assert_eq!(
        logits(&clf, &store, Some(&r), None),
        logits(&clf, &store, Some(&r), Some(&zeros))
    );
    assert_eq!(
        logits(&clf, &store, None, Some(&r)),
        logits(&clf, &store, Some(&zeros), Some(&r))
    );
}

#[test]
fn flow_patches_reach_the_logits() {
    let cfg = reduced_model_config(3);
    let model = TwoStreamModel::new(&cfg).unwrap();
    let sample = Sample {
        id: "m".into(),
        label: None,
        rgb: randn(&[8, 48], 3, 0),
        flow: randn(&[8, 48], 3, 1),
    };
    let zero_flow = Sample {
        flow: Tensor::zeros([8, 48]),
        ..sample.clone()
    };
    let a = model.logits(&sample).unwrap();
    assert_ne!(a, model.logits(&zero_flow).unwrap());

    let rgb_only = TwoStreamModel::new(&tsvt::model::ModelConfig {
        streams: Streams::RgbOnly,
        ..cfg
    })
    .unwrap();
    assert_eq!(rgb_only.logits(&sample).unwrap(), rgb_only.logits(&zero_flow).unwrap());
}

#[test]
fn encoder_layer_gradients_match_finite_differences() {
    let cfg = FusionConfig {
        heads: 4,
        ffn_dim: 32,
        ..FusionConfig::default()
    };
    for seed in 0..3 {
        let mut store = ParamStore::new();
        let layer = EncoderLayer::new(&mut store, "enc", 16, &cfg, &mut seeded(seed, 0)).unwrap();
        let x = randn(&[3, 16], seed, 0);
        let loss = |s: &ParamStore, tape: &mut Tape| {
            let xv = tape.constant(x.clone());
            let mut ctx = ForwardCtx::train(seed, 1);
            let y = layer.forward(tape, s, xv, &mut ctx).unwrap();
            weighted_sum(tape, y, seed).unwrap()
        };
        let (worst, _) = store_check(&mut store, &loss, None, 0);
        assert!(worst < TOLERANCE, "seed {seed}: {worst:e}");
    }
}

proptest! {
    #[test]
    fn argmax_ignores_a_common_shift(
        row in proptest::collection::vec(-50.0f64..50.0, 2..12),
        shift in -1e3f64..1e3,
    ) {
        let shifted: Vec<f64> = row.iter().map(|v| v + shift).collect();
        let best = argmax(&row);
        let moved = argmax(&shifted);
        // rounding can only merge near-ties
        prop_assert!(moved == best || (row[moved] - row[best]).abs() < 1e-9 * (1.0 + shift.abs()));
    }

    #[test]
    fn class_probabilities_sum_to_one(seed in 0u64..1000) {
        let (store, clf) = classifier(FusionTokens::Pooled, seed % 7);
        let (r, f) = (randn(&[4, 16], seed, 0), randn(&[4, 16], seed, 1));
        let mut tape = Tape::new();
        let (rv, fv) = (tape.constant(r), tape.constant(f));
        let y = clf.forward(&mut tape, &store, Some(rv), Some(fv), 0.0, &mut ForwardCtx::eval()).unwrap();
        let p = tape.softmax(y, 1).unwrap();
        let sum: f64 = tape.value(p).data().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
    }
}
