//! Per-stream encoder: tubelet patch embedding followed by pooled-attention
//! blocks, where each block mean-pools its queries by a stride so the token
//! sequence shrinks through the network while keys and values stay at the
//! block's input resolution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{normal_init, FeedForward, ForwardCtx, LayerNorm, Linear, MultiHeadAttention};
use crate::rng::Rng;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::video::{VideoClip, CHANNELS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    /// Patch extents `(t, h, w)`.
    pub patch: [usize; 3],
    pub embed_dim: usize,
    pub heads: usize,
    /// Query pooling stride of each block; one block per entry.
    pub strides: Vec<usize>,
    pub ffn_dim: usize,
    pub dropout: f64,
    /// Channels of the stream output.
    pub out_dim: usize,
    /// Learned absolute positional embedding on patch tokens.
    pub positional: bool,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            patch: [2, 4, 4],
            embed_dim: 32,
            heads: 2,
            strides: vec![2, 2, 2],
            ffn_dim: 64,
            dropout: 0.0,
            out_dim: 128,
            positional: true,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self, frames: usize, height: usize, width: usize) -> Result<()> {
        for (axis, (&extent, &p)) in ["frames", "height", "width"]
            .iter()
            .zip([frames, height, width].iter().zip(&self.patch))
        {
            if p == 0 || extent % p != 0 {
                return Err(Error::Config(format!(
                    "patch extent {p} does not divide clip {axis} {extent}"
                )));
            }
        }
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.strides.iter().any(|&s| s == 0) {
            return Err(Error::Config("pool strides must be >= 1".into()));
        }
        if self.ffn_dim == 0 || self.out_dim == 0 {
            return Err(Error::Config("ffn_dim and out_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn patch_dim(&self) -> usize {
        self.patch.iter().product::<usize>() * CHANNELS
    }

    pub fn token_count(&self, frames: usize, height: usize, width: usize) -> usize {
        (frames / self.patch[0]) * (height / self.patch[1]) * (width / self.patch[2])
    }

    /// Tokens left after the block stack: `⌈L / ∏ strides⌉`.
    pub fn output_tokens(&self, tokens: usize) -> usize {
        self.strides.iter().fold(tokens, |l, &s| l.div_ceil(s))
    }
}

/// `L_o × D_o` token matrix produced by one stream.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamOutput(pub Tensor);

impl StreamOutput {
    pub fn tokens(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.0.shape()[1]
    }
}

/// Rearranges a clip into flattened `(t_p, h_p, w_p, C)` patches, one row per
/// token in `(t, y, x)` patch order.
pub fn extract_patches(clip: &VideoClip, patch: [usize; 3]) -> Result<Tensor> {
    let (t, h, w) = (clip.frames(), clip.height(), clip.width());
    let [pt, ph, pw] = patch;
    for (axis, extent, p) in [("frames", t, pt), ("height", h, ph), ("width", w, pw)] {
        if p == 0 || extent % p != 0 {
            return Err(Error::Config(format!(
                "patch extent {p} does not divide clip {axis} {extent}"
            )));
        }
    }
    let (nt, nh, nw) = (t / pt, h / ph, w / pw);
    let dim = pt * ph * pw * CHANNELS;
    let mut data = Vec::with_capacity(nt * nh * nw * dim);
    for bt in 0..nt {
        for by in 0..nh {
            for bx in 0..nw {
                for dt in 0..pt {
                    for dy in 0..ph {
                        let (ft, fy) = (bt * pt + dt, by * ph + dy);
                        let start = ((ft * h + fy) * w + bx * pw) * CHANNELS;
                        data.extend_from_slice(&clip.data()[start..start + pw * CHANNELS]);
                    }
                }
            }
        }
    }
    Tensor::new([nt * nh * nw, dim], data)
}

#[derive(Clone, Debug)]
pub struct PooledBlock {
    pub stride: usize,
    pub attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ffn: FeedForward,
    pub norm2: LayerNorm,
    pub dropout: f64,
}

impl PooledBlock {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &BackboneConfig, stride: usize, rng: &mut Rng) -> Result<Self> {
        Ok(PooledBlock {
            stride,
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), cfg.embed_dim, cfg.heads, rng)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), cfg.embed_dim),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), cfg.embed_dim, cfg.ffn_dim, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), cfg.embed_dim),
            dropout: cfg.dropout,
        })
    }

    /// `L×D → ⌈L/s⌉×D`: pooled queries attend over all input tokens, with a
    /// residual from the pooled path, then norm, FFN, residual, norm.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        let pooled = tape.mean_pool_rows(x, self.stride)?;
        let a = self.attn.forward(tape, store, pooled, x)?;
        let a = ctx.dropout(tape, a, self.dropout)?;
        let h = tape.add(pooled, a)?;
        let h = self.norm1.forward(tape, store, h)?;
        let f = self.ffn.forward(tape, store, h)?;
        let f = ctx.dropout(tape, f, self.dropout)?;
        let out = tape.add(h, f)?;
        self.norm2.forward(tape, store, out)
    }
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub patch_embed: Linear,
    pub position: Option<ParamId>,
    pub blocks: Vec<PooledBlock>,
    pub project: Linear,
    pub tokens: usize,
}

impl Backbone {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &BackboneConfig,
        clip_dims: (usize, usize, usize),
        rng: &mut Rng,
    ) -> Result<Self> {
        let (t, h, w) = clip_dims;
        cfg.validate(t, h, w)?;
        let tokens = cfg.token_count(t, h, w);
        let patch_embed = Linear::new(store, &format!("{name}.patch_embed"), cfg.patch_dim(), cfg.embed_dim, true, rng);
        let position = cfg.positional.then(|| {
            store.add(
                format!("{name}.position"),
                normal_init(&[tokens, cfg.embed_dim], 0.02, rng),
            )
        });
        let blocks = cfg
            .strides
            .iter()
            .enumerate()
            .map(|(i, &s)| PooledBlock::new(store, &format!("{name}.block{i}"), cfg, s, rng))
            .collect::<Result<Vec<_>>>()?;
        let project = Linear::new(store, &format!("{name}.project"), cfg.embed_dim, cfg.out_dim, true, rng);
        Ok(Backbone {
            config: cfg.clone(),
            patch_embed,
            position,
            blocks,
            project,
            tokens,
        })
    }

    /// Patch rows `[L × patch_dim]` → embedded tokens `[L × D_b]`.
    pub fn patchify(&self, tape: &mut Tape, store: &ParamStore, patches: Var) -> Result<Var> {
        let s = tape.shape(patches);
        if s != [self.tokens, self.config.patch_dim()] {
            return Err(Error::dim("patchify", s, &[self.tokens, self.config.patch_dim()]));
        }
        let x = self.patch_embed.forward(tape, store, patches)?;
        match self.position {
            Some(p) => {
                let pos = tape.param(store, p);
                tape.add(x, pos)
            }
            None => Ok(x),
        }
    }

    /// Patch rows → stream output `[L_o × D_o]`.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, patches: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        let mut x = self.patchify(tape, store, patches)?;
        for block in &self.blocks {
            x = block.forward(tape, store, x, ctx)?;
        }
        self.project.forward(tape, store, x)
    }

    /// Eval-mode encoding of a whole clip.
    pub fn encode_stream(&self, store: &ParamStore, clip: &VideoClip) -> Result<StreamOutput> {
        let patches = extract_patches(clip, self.config.patch)?;
        let mut tape = Tape::new();
        let p = tape.constant(patches);
        let out = self.encode(&mut tape, store, p, &mut ForwardCtx::eval())?;
        Ok(StreamOutput(tape.value(out).clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn clip(t: usize, h: usize, w: usize, f: impl Fn(usize, usize, usize, usize) -> f64) -> VideoClip {
        let mut data = Vec::new();
        for ti in 0..t {
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        data.push(f(ti, y, x, c));
                    }
                }
            }
        }
        VideoClip::new(t, h, w, data, None).unwrap()
    }

    #[test]
    fn token_arithmetic() {
        let cfg = BackboneConfig::default();
        assert_eq!(cfg.token_count(8, 32, 32), 256);
        assert_eq!(cfg.output_tokens(256), 32);
        let whole = BackboneConfig {
            patch: [8, 32, 32],
            ..cfg
        };
        assert_eq!(whole.token_count(8, 32, 32), 1);
    }

    #[test]
    fn indivisible_patch_names_axis() {
        let cfg = BackboneConfig {
            patch: [3, 4, 4],
            ..BackboneConfig::default()
        };
        let err = cfg.validate(8, 32, 32).unwrap_err();
        assert!(err.to_string().contains("frames"), "{err}");
        let err = extract_patches(&clip(8, 30, 32, |_, _, _, _| 0.0), [2, 4, 4]).unwrap_err();
        assert!(err.to_string().contains("height"), "{err}");
    }

    #[test]
    fn patch_layout_is_t_y_x_major() {
        let c = clip(2, 2, 4, |t, y, x, ch| (((t * 2 + y) * 4 + x) * 3 + ch) as f64);
        let p = extract_patches(&c, [1, 2, 2]).unwrap();
        assert_eq!(p.shape(), &[4, 12]);
        // token 1 = frame 0, patch column 1: pixels (0,2),(0,3),(1,2),(1,3)
        let row: Vec<f64> = p.data()[12..24].to_vec();
        let expect: Vec<f64> = [(0, 2), (0, 3), (1, 2), (1, 3)]
            .iter()
            .flat_map(|&(y, x)| (0..3).map(move |ch| ((y * 4 + x) * 3 + ch) as f64))
            .collect();
        assert_eq!(row, expect);
    }

    #[test]
    fn zero_clip_zero_bias_gives_zero_tokens() {
        let cfg = BackboneConfig {
            positional: false,
            strides: vec![1],
            ..BackboneConfig::default()
        };
        let mut store = ParamStore::new();
        let bb = Backbone::new(&mut store, "rgb", &cfg, (8, 32, 32), &mut seeded(1, 0)).unwrap();
        let patches = extract_patches(&clip(8, 32, 32, |_, _, _, _| 0.0), cfg.patch).unwrap();
        let mut tape = Tape::new();
        let p = tape.constant(patches);
        let tokens = bb.patchify(&mut tape, &store, p).unwrap();
        assert_eq!(tape.shape(tokens), &[256, 32]);
        assert!(tape.value(tokens).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn block_stride_controls_length_and_preserves_constant_rows() {
        let cfg = BackboneConfig {
            embed_dim: 8,
            ..BackboneConfig::default()
        };
        let mut store = ParamStore::new();
        let mut rng = seeded(2, 0);
        let row: Vec<f64> = (0..8).map(|i| (i as f64 * 0.9).sin()).collect();
        for (stride, expect) in [(1, 10), (3, 4), (10, 1)] {
            let block = PooledBlock::new(&mut store, &format!("b{stride}"), &cfg, stride, &mut rng).unwrap();
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::new([10, 8], row.repeat(10)).unwrap());
            let y = block.forward(&mut tape, &store, x, &mut ForwardCtx::eval()).unwrap();
            assert_eq!(tape.shape(y), &[expect, 8]);
            let out = tape.value(y).data();
            for r in out.chunks(8) {
                for (a, b) in r.iter().zip(&out[..8]) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}
