//! Parameterized layers shared by the stream backbones and the fusion
//! encoder. Layers hold [`ParamId`]s; values live in a [`ParamStore`] and
//! are bound onto a [`Tape`] per forward pass.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{seeded, Rng};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

pub const LN_EPS: f64 = 1e-5;

/// Training/eval switch plus the dropout generator.
pub struct ForwardCtx {
    pub training: bool,
    rng: Rng,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        ForwardCtx {
            training: false,
            rng: seeded(0, 0),
        }
    }

    pub fn train(seed: u64, stream: u64) -> Self {
        ForwardCtx {
            training: true,
            rng: seeded(seed, stream),
        }
    }

    pub fn dropout(&mut self, tape: &mut Tape, x: Var, p: f64) -> Result<Var> {
        tape.dropout(x, p, &mut self.rng, self.training)
    }
}

/// Zero-mean uniform init with half-width `1/√fan_in`.
pub fn uniform_init(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

/// `N(0, std²)` init.
pub fn normal_init(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor {
    let dist = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            uniform_init(&[in_dim, out_dim], in_dim, rng),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros([out_dim])));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        tape.linear(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.gain"), Tensor::full([dim], 1.0)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros([dim])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layer_norm(x, g, b, LN_EPS)
    }
}

/// `softmax(q·kᵀ/√d_k)·v`, softmax over the key axis.
pub fn attention(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<Var> {
    let (sq, sk, sv) = (tape.shape(q), tape.shape(k), tape.shape(v));
    if sq.len() != 2 || sk.len() != 2 || sv.len() != 2 || sq[1] != sk[1] || sk[0] != sv[0] {
        return Err(Error::Dimension {
            op: "attention",
            lhs: [sq, sk].concat(),
            rhs: sv.to_vec(),
        });
    }
    let d_k = sq[1];
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, 1.0 / (d_k as f64).sqrt());
    let weights = tape.softmax(scaled, 1)?;
    tape.matmul(weights, v)
}

#[derive(Clone, Debug)]
pub struct Head {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
}

/// Multi-head attention with per-head projections `D → d_k`, concatenation
/// of the head outputs and an output projection `h·d_v → D`. No biases.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub heads: Vec<Head>,
    pub output: ParamId,
    pub dim: usize,
    pub head_dim: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        num_heads: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if num_heads == 0 || dim % num_heads != 0 {
            return Err(Error::Config(format!(
                "{name}: dim {dim} is not divisible by {num_heads} heads"
            )));
        }
        let head_dim = dim / num_heads;
        let heads = (0..num_heads)
            .map(|i| {
                let mut proj = |kind: &str| {
                    store.add(
                        format!("{name}.head{i}.{kind}"),
                        uniform_init(&[dim, head_dim], dim, rng),
                    )
                };
                Head {
                    query: proj("query"),
                    key: proj("key"),
                    value: proj("value"),
                }
            })
            .collect();
        let output = store.add(
            format!("{name}.output"),
            uniform_init(&[num_heads * head_dim, dim], num_heads * head_dim, rng),
        );
        Ok(MultiHeadAttention {
            heads,
            output,
            dim,
            head_dim,
        })
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    /// Queries from `q_in`, keys and values from `kv_in`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, q_in: Var, kv_in: Var) -> Result<Var> {
        for x in [q_in, kv_in] {
            let s = tape.shape(x);
            if s.len() != 2 || s[1] != self.dim {
                return Err(Error::dim("mha", s, &[self.dim]));
            }
        }
        let mut outs = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let wq = tape.param(store, head.query);
            let wk = tape.param(store, head.key);
            let wv = tape.param(store, head.value);
            let q = tape.matmul(q_in, wq)?;
            let k = tape.matmul(kv_in, wk)?;
            let v = tape.matmul(kv_in, wv)?;
            outs.push(attention(tape, q, k, v)?);
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat(&outs, 1)?
        };
        let wo = tape.param(store, self.output);
        tape.matmul(cat, wo)
    }
}

/// `linear → GELU → linear`.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        FeedForward {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, true, rng),
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, true, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.up.forward(tape, store, x)?;
        let h = tape.gelu(h);
        self.down.forward(tape, store, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        normal_init(shape, 1.0, &mut seeded(seed, 7))
    }

    #[test]
    fn single_key_broadcasts_its_value() {
        let mut tape = Tape::new();
        let q = tape.constant(rand_tensor(&[4, 3], 1));
        let k = tape.constant(rand_tensor(&[1, 3], 2));
        let v = tape.constant(Tensor::new([1, 2], vec![0.25, -4.0]).unwrap());
        let out = attention(&mut tape, q, k, v).unwrap();
        for row in tape.value(out).data().chunks(2) {
            assert_eq!(row, &[0.25, -4.0]);
        }
    }

    #[test]
    fn orthogonal_queries_average_values() {
        let mut tape = Tape::new();
        let q = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0]]).unwrap());
        let k = tape.constant(Tensor::from_rows(&[vec![0.0, 1.0], vec![0.0, -3.0], vec![0.0, 2.0]]).unwrap());
        let v = tape.constant(Tensor::from_rows(&[vec![1.0], vec![2.0], vec![6.0]]).unwrap());
        let out = attention(&mut tape, q, k, v).unwrap();
        for &x in tape.value(out).data() {
            assert!((x - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_are_convex_combinations() {
        let mut tape = Tape::new();
        let (qt, kt, vt) = (rand_tensor(&[4, 8], 3), rand_tensor(&[4, 8], 4), rand_tensor(&[4, 8], 5));
        let q = tape.constant(qt.clone());
        let k = tape.constant(kt.clone());
        let v = tape.constant(vt.clone());
        let out = attention(&mut tape, q, k, v).unwrap();
        // recompute the weights explicitly
        for i in 0..4 {
            let scores: Vec<f64> = (0..4)
                .map(|j| (0..8).map(|c| qt.at(i, c) * kt.at(j, c)).sum::<f64>() / 8f64.sqrt())
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = e.iter().sum();
            let w: Vec<f64> = e.iter().map(|x| x / z).collect();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
            for c in 0..8 {
                let expect: f64 = (0..4).map(|j| w[j] * vt.at(j, c)).sum();
                let got = tape.value(out).at(i, c);
                assert!((got - expect).abs() < 1e-12);
                let lo = (0..4).map(|j| vt.at(j, c)).fold(f64::INFINITY, f64::min);
                let hi = (0..4).map(|j| vt.at(j, c)).fold(f64::NEG_INFINITY, f64::max);
                assert!(got >= lo - 1e-12 && got <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn attention_shape_mismatch() {
        let mut tape = Tape::new();
        let q = tape.constant(Tensor::zeros([2, 3]));
        let k = tape.constant(Tensor::zeros([2, 4]));
        let v = tape.constant(Tensor::zeros([2, 4]));
        assert!(matches!(attention(&mut tape, q, k, v), Err(Error::Dimension { .. })));
    }

    #[test]
    fn mha_rejects_indivisible_heads() {
        let mut store = ParamStore::new();
        let err = MultiHeadAttention::new(&mut store, "m", 10, 4, &mut seeded(0, 0));
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
