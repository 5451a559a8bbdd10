//! Stream fusion: each stream output is summarized, projected by a shared
//! matrix, placed after a class token and offset by a positional table; a
//! global encoder mixes the sequence and the class row is classified.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{normal_init, FeedForward, ForwardCtx, LayerNorm, Linear, MultiHeadAttention};
use crate::rng::Rng;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// How stream outputs enter the fused sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionTokens {
    /// One mean-pooled token per stream; sequence length 3.
    Pooled,
    /// Every stream token; sequence length `2·L_o + 1`.
    AllTokens,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub heads: usize,
    pub ffn_dim: usize,
    pub layers: usize,
    pub encoder_dropout: f64,
    pub tokens: FusionTokens,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            heads: 8,
            ffn_dim: 1024,
            layers: 1,
            encoder_dropout: 0.1,
            tokens: FusionTokens::Pooled,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.heads == 0 || dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "fusion dim {dim} is not divisible by {} heads",
                self.heads
            )));
        }
        if self.ffn_dim == 0 {
            return Err(Error::Config("fusion ffn_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.encoder_dropout) {
            return Err(Error::Config(format!(
                "encoder_dropout {} not in [0, 1)",
                self.encoder_dropout
            )));
        }
        Ok(())
    }

    pub fn sequence_len(&self, stream_tokens: usize) -> usize {
        match self.tokens {
            FusionTokens::Pooled => 3,
            FusionTokens::AllTokens => 2 * stream_tokens + 1,
        }
    }
}

/// Class token, shared stream projection `E` and positional table `E_pos`.
#[derive(Clone, Debug)]
pub struct FusionInput {
    pub class_token: ParamId,
    pub projection: ParamId,
    pub position: ParamId,
    pub tokens: FusionTokens,
    pub dim: usize,
    pub stream_tokens: usize,
}

impl FusionInput {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        stream_tokens: usize,
        tokens: FusionTokens,
        rng: &mut Rng,
    ) -> Self {
        let seq = match tokens {
            FusionTokens::Pooled => 3,
            FusionTokens::AllTokens => 2 * stream_tokens + 1,
        };
        FusionInput {
            class_token: store.add(format!("{name}.class_token"), normal_init(&[1, dim], 0.02, rng)),
            projection: store.add(
                format!("{name}.projection"),
                crate::nn::uniform_init(&[dim, dim], dim, rng),
            ),
            position: store.add(format!("{name}.position"), normal_init(&[seq, dim], 0.02, rng)),
            tokens,
            dim,
            stream_tokens,
        }
    }

    /// `[X_class; r·E; f·E] + E_pos`. `None` stands for an ablated stream,
    /// whose tokens are zero.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, rgb: Option<Var>, flow: Option<Var>) -> Result<Var> {
        let expect = [self.stream_tokens, self.dim];
        if let (Some(r), Some(f)) = (rgb, flow) {
            if tape.shape(r) != tape.shape(f) {
                let (a, b) = (tape.shape(r).to_vec(), tape.shape(f).to_vec());
                return Err(Error::dim("fusion input", &a, &b));
            }
        }
        let rows = match self.tokens {
            FusionTokens::Pooled => 1,
            FusionTokens::AllTokens => self.stream_tokens,
        };
        let e = tape.param(store, self.projection);
        let mut parts = vec![tape.param(store, self.class_token)];
        for stream in [rgb, flow] {
            let summary = match stream {
                Some(s) => {
                    if tape.shape(s) != expect {
                        let got = tape.shape(s).to_vec();
                        return Err(Error::dim("fusion input", &got, &expect));
                    }
                    match self.tokens {
                        FusionTokens::Pooled => tape.mean(s, 0)?,
                        FusionTokens::AllTokens => s,
                    }
                }
                None => tape.constant(Tensor::zeros([rows, self.dim])),
            };
            parts.push(tape.matmul(summary, e)?);
        }
        let seq = tape.concat(&parts, 0)?;
        let pos = tape.param(store, self.position);
        tape.add(seq, pos)
    }
}

/// Pre-norm encoder layer: `x + MHA(LN(x))`, then `+ FFN(LN(·))`.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
    pub dropout: f64,
}

impl EncoderLayer {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, cfg: &FusionConfig, rng: &mut Rng) -> Result<Self> {
        Ok(EncoderLayer {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, cfg.heads, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), dim, cfg.ffn_dim, rng),
            dropout: cfg.encoder_dropout,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        let n = self.norm1.forward(tape, store, x)?;
        let a = self.attn.forward(tape, store, n, n)?;
        let a = ctx.dropout(tape, a, self.dropout)?;
        let x = tape.add(x, a)?;
        let n = self.norm2.forward(tape, store, x)?;
        let f = self.ffn.forward(tape, store, n)?;
        let f = ctx.dropout(tape, f, self.dropout)?;
        tape.add(x, f)
    }
}

/// Class-row readout: layer norm, dropout, linear.
#[derive(Clone, Debug)]
pub struct ClassifierHead {
    pub norm: LayerNorm,
    pub linear: Linear,
    pub num_classes: usize,
}

impl ClassifierHead {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, num_classes: usize, rng: &mut Rng) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {num_classes}")));
        }
        Ok(ClassifierHead {
            norm: LayerNorm::new(store, &format!("{name}.norm"), dim),
            linear: Linear::new(store, &format!("{name}.linear"), dim, num_classes, true, rng),
            num_classes,
        })
    }

    /// `encoded[S×D]` → logits `[1×K]` from row 0 only.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, encoded: Var, dropout: f64, ctx: &mut ForwardCtx) -> Result<Var> {
        let cls = tape.rows(encoded, 0, 1)?;
        let n = self.norm.forward(tape, store, cls)?;
        let d = ctx.dropout(tape, n, dropout)?;
        self.linear.forward(tape, store, d)
    }
}

/// Fusion input, encoder stack and head.
#[derive(Clone, Debug)]
pub struct FusionClassifier {
    pub input: FusionInput,
    pub layers: Vec<EncoderLayer>,
    pub head: ClassifierHead,
}

impl FusionClassifier {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        stream_tokens: usize,
        num_classes: usize,
        cfg: &FusionConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        cfg.validate(dim)?;
        let input = FusionInput::new(store, &format!("{name}.input"), dim, stream_tokens, cfg.tokens, rng);
        let layers = (0..cfg.layers)
            .map(|i| EncoderLayer::new(store, &format!("{name}.layer{i}"), dim, cfg, rng))
            .collect::<Result<Vec<_>>>()?;
        let head = ClassifierHead::new(store, &format!("{name}.head"), dim, num_classes, rng)?;
        Ok(FusionClassifier { input, layers, head })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        rgb: Option<Var>,
        flow: Option<Var>,
        head_dropout: f64,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let mut x = self.input.forward(tape, store, rgb, flow)?;
        for layer in &self.layers {
            x = layer.forward(tape, store, x, ctx)?;
        }
        self.head.forward(tape, store, x, head_dropout, ctx)
    }
}
