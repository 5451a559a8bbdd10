//! Central finite-difference gradient oracle.

use tsvt::backbone::BackboneConfig;
use tsvt::fusion::FusionConfig;
use tsvt::model::{ModelConfig, Sample, TwoStreamModel};
use tsvt::nn::{normal_init, ForwardCtx};
use tsvt::rng::seeded;
use tsvt::tensor::ParamStore;
use tsvt::{Result, Tape, Tensor, Var};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor so vanishing gradients compare absolutely.
pub const FLOOR: f64 = 1e-6;
pub const SEEDS: u64 = 10;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

pub fn randn(shape: &[usize], seed: u64, stream: u64) -> Tensor {
    normal_init(shape, 1.0, &mut seeded(seed, 1000 + stream))
}

/// `Σ y ⊙ R` for a fixed random `R`, turning any output into a scalar whose
/// gradient exercises every output entry differently.
pub fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let r = randn(tape.shape(y), seed, 999);
    let r = tape.constant(r);
    let p = tape.mul(y, r)?;
    Ok(tape.sum(p))
}

type Build<'a> = dyn Fn(&mut Tape, &[Var]) -> Result<Var> + 'a;

/// Max relative error between backward and central differences over every
/// entry of every input.
pub fn check(inputs: &[Tensor], build: &Build) -> f64 {
    let eval = |xs: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let loss = build(&mut tape, &vars).expect("forward");
        tape.value(loss).data()[0]
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone().with_grad())).collect();
    let loss = build(&mut tape, &vars).expect("forward");
    tape.backward(loss).expect("backward");
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = tape.grad(*v).unwrap_or_else(|| panic!("input {i} got no gradient")).to_vec();
        for (j, &a) in analytic.iter().enumerate() {
            let mut xs = inputs.to_vec();
            xs[i].data_mut()[j] += STEP;
            let up = eval(&xs);
            xs[i].data_mut()[j] -= 2.0 * STEP;
            let down = eval(&xs);
            worst = worst.max(rel_err(a, (up - down) / (2.0 * STEP)));
        }
    }
    worst
}

pub type OpCase = (&'static str, fn(u64) -> f64);

/// Gradient check of every differentiable tape op at one seed.
pub fn op_cases() -> Vec<OpCase> {
    vec![
        ("add", |s| {
            check(&[randn(&[3, 4], s, 0), randn(&[3, 4], s, 1)], &|t, v| {
                let y = t.add(v[0], v[1])?;
                weighted_sum(t, y, s)
            })
        }),
        ("add_row", |s| {
            check(&[randn(&[3, 4], s, 0), randn(&[4], s, 1)], &|t, v| {
                let y = t.add_row(v[0], v[1])?;
                weighted_sum(t, y, s)
            })
        }),
        ("mul", |s| {
            check(&[randn(&[3, 4], s, 0), randn(&[3, 4], s, 1)], &|t, v| {
                let y = t.mul(v[0], v[1])?;
                weighted_sum(t, y, s)
            })
        }),
        ("scale", |s| {
            check(&[randn(&[2, 5], s, 0)], &|t, v| {
                let y = t.scale(v[0], -1.7);
                weighted_sum(t, y, s)
            })
        }),
        ("matmul", |s| {
            check(&[randn(&[3, 4], s, 0), randn(&[4, 2], s, 1)], &|t, v| {
                let y = t.matmul(v[0], v[1])?;
                weighted_sum(t, y, s)
            })
        }),
        ("transpose", |s| {
            check(&[randn(&[3, 5], s, 0)], &|t, v| {
                let y = t.transpose(v[0])?;
                weighted_sum(t, y, s)
            })
        }),
        ("reshape", |s| {
            check(&[randn(&[3, 4], s, 0)], &|t, v| {
                let y = t.reshape(v[0], &[2, 6])?;
                weighted_sum(t, y, s)
            })
        }),
        ("softmax", |s| {
            check(&[randn(&[3, 4], s, 0)], &|t, v| {
                let a = t.softmax(v[0], 1)?;
                let b = t.softmax(v[0], 0)?;
                let y = t.concat(&[a, b], 0)?;
                weighted_sum(t, y, s)
            })
        }),
        ("layer_norm", |s| {
            check(
                &[randn(&[4, 8], s, 0), randn(&[8], s, 1), randn(&[8], s, 2)],
                &|t, v| {
                    let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
                    weighted_sum(t, y, s)
                },
            )
        }),
        ("gelu", |s| {
            check(&[randn(&[3, 5], s, 0)], &|t, v| {
                let y = t.gelu(v[0]);
                weighted_sum(t, y, s)
            })
        }),
        ("dropout", |s| {
            check(&[randn(&[4, 6], s, 0)], &|t, v| {
                // fresh generator per evaluation: the mask is a fixed function of the seed
                let y = t.dropout(v[0], 0.3, &mut seeded(s, 77), true)?;
                weighted_sum(t, y, s)
            })
        }),
        ("concat", |s| {
            check(
                &[randn(&[2, 3], s, 0), randn(&[1, 3], s, 1), randn(&[3, 2], s, 2)],
                &|t, v| {
                    let rows = t.concat(&[v[0], v[1]], 0)?;
                    let cols = t.concat(&[rows, v[2]], 1)?;
                    weighted_sum(t, cols, s)
                },
            )
        }),
        ("mean", |s| {
            check(&[randn(&[3, 4], s, 0)], &|t, v| {
                let a = t.mean(v[0], 0)?;
                let b = t.mean(v[0], 1)?;
                let b = t.transpose(b)?;
                let y = t.concat(&[a, b], 1)?;
                weighted_sum(t, y, s)
            })
        }),
        ("mean_pool_rows", |s| {
            check(&[randn(&[7, 3], s, 0)], &|t, v| {
                let y = t.mean_pool_rows(v[0], 3)?;
                weighted_sum(t, y, s)
            })
        }),
        ("rows", |s| {
            check(&[randn(&[5, 3], s, 0)], &|t, v| {
                let y = t.rows(v[0], 1, 4)?;
                weighted_sum(t, y, s)
            })
        }),
        ("sum", |s| {
            check(&[randn(&[2, 3], s, 0)], &|t, v| {
                let sq = t.mul(v[0], v[0])?;
                Ok(t.sum(sq))
            })
        }),
        ("linear", |s| {
            check(
                &[randn(&[3, 4], s, 0), randn(&[4, 2], s, 1), randn(&[2], s, 2)],
                &|t, v| {
                    let y = t.linear(v[0], v[1], Some(v[2]))?;
                    weighted_sum(t, y, s)
                },
            )
        }),
        ("cross_entropy", |s| {
            check(&[randn(&[4, 5], s, 0)], &|t, v| {
                let labels = [s as usize % 5, 1, 4, 0];
                t.cross_entropy(v[0], &labels)
            })
        }),
        ("attention", |s| {
            check(
                &[randn(&[3, 4], s, 0), randn(&[5, 4], s, 1), randn(&[5, 2], s, 2)],
                &|t, v| {
                    let y = tsvt::nn::attention(t, v[0], v[1], v[2])?;
                    weighted_sum(t, y, s)
                },
            )
        }),
    ]
}

/// Reduced two-stream model: fused width 32 with 4 heads, 2 backbone blocks.
pub fn reduced_model_config(seed: u64) -> ModelConfig {
    ModelConfig {
        frames: 2,
        height: 8,
        width: 8,
        num_classes: 3,
        backbone: BackboneConfig {
            patch: [1, 4, 4],
            embed_dim: 16,
            heads: 4,
            strides: vec![2, 2],
            ffn_dim: 16,
            dropout: 0.1,
            out_dim: 32,
            positional: true,
        },
        fusion: FusionConfig {
            heads: 4,
            ffn_dim: 32,
            ..FusionConfig::default()
        },
        seed,
        ..ModelConfig::default()
    }
}

/// Max relative error of parameter gradients of `loss` (recorded afresh on
/// each call). `per_tensor` limits the checked entries of each tensor to
/// evenly spread indices; `None` checks every scalar.
pub fn store_check(
    store: &mut ParamStore,
    loss: &dyn Fn(&ParamStore, &mut Tape) -> Var,
    per_tensor: Option<usize>,
    offset: usize,
) -> (f64, usize) {
    let mut tape = Tape::new();
    let l = loss(store, &mut tape);
    tape.backward(l).unwrap();
    store.zero_grads();
    store.accumulate_grads(&tape, 1.0);
    let ids: Vec<_> = store.ids().collect();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for id in ids {
        let n = store.get(id).len();
        let analytic = store.get(id).grad().unwrap().to_vec();
        let picks: Vec<usize> = match per_tensor {
            Some(k) if k < n => (0..k).map(|i| i * n / k + offset % (n / k)).collect(),
            _ => (0..n).collect(),
        };
        for j in picks {
            let value =|delta: f64, s: &mut ParamStore| {
                s.get_mut(id).data_mut()[j] += delta;
                let mut t = Tape::new();
                let l = loss(s, &mut t);
                t.value(l).data()[0]
            };
            let up = value(STEP, store);
            let down = value(-2.0 * STEP, store);
            value(STEP, store);
            worst = worst.max(rel_err(analytic[j], (up - down) / (2.0 * STEP)));
            checked += 1;
        }
    }
    (worst, checked)
}

/// [`store_check`] of the reduced two-stream model on random patches.
pub fn model_check(seed: u64, per_tensor: Option<usize>) -> (f64, usize) {
    let cfg = reduced_model_config(seed);
    let model = TwoStreamModel::new(&cfg).unwrap();
    let TwoStreamModel { mut store, .. } = model.clone();
    let sample = Sample {
        id: "g".into(),
        label: Some(seed as usize % 3),
        rgb: randn(&[8, 48], seed, 10),
        flow: randn(&[8, 48], seed, 11),
    };
    let loss = |s: &ParamStore, tape: &mut Tape| -> Var {
        let m = TwoStreamModel {
            store: s.clone(),
            ..model.clone()
        };
        let mut ctx = ForwardCtx::train(seed, 5);
        let logits = m.forward(tape, &sample, 0.5, &mut ctx).unwrap();
        tape.cross_entropy(logits, &[sample.label.unwrap()]).unwrap()
    };
    store_check(&mut store, &loss, per_tensor, seed as usize)
}
