//! The full two-stream classifier and the per-clip sample preparation that
//! feeds it (flow estimation, flow rendering, normalization, patching).

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::{extract_patches, Backbone, BackboneConfig};
use crate::error::{Error, Result};
use crate::flow::{flow_sequence, flow_to_rgb, read_flo2, write_flo2, FlowField, FlowSolverConfig};
use crate::fusion::{FusionClassifier, FusionConfig};
use crate::nn::ForwardCtx;
use crate::rng::seeded;
use crate::tensor::{ParamStore, Tape, Tensor, Var};
use crate::video::{normalize, NormalizationSpec, VideoClip};

/// Which streams reach the fusion stage; an absent stream contributes zero
/// tokens.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Streams {
    #[default]
    Both,
    RgbOnly,
    FlowOnly,
}

impl Streams {
    pub fn uses_rgb(self) -> bool {
        self != Streams::FlowOnly
    }

    pub fn uses_flow(self) -> bool {
        self != Streams::RgbOnly
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub backbone: BackboneConfig,
    pub fusion: FusionConfig,
    pub streams: Streams,
    pub normalization: NormalizationSpec,
    /// Parameter initialization seed.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            frames: 8,
            height: 32,
            width: 32,
            num_classes: 8,
            backbone: BackboneConfig::default(),
            fusion: FusionConfig::default(),
            streams: Streams::Both,
            normalization: NormalizationSpec::default(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate(self.frames, self.height, self.width)?;
        self.fusion.validate(self.backbone.out_dim)?;
        self.normalization.validate()?;
        if self.num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        Ok(())
    }

    pub fn stream_tokens(&self) -> usize {
        let l = self.backbone.token_count(self.frames, self.height, self.width);
        self.backbone.output_tokens(l)
    }
}

/// Model-ready inputs of one clip: patch matrices of both streams.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub label: Option<usize>,
    pub rgb: Tensor,
    pub flow: Tensor,
}

#[derive(Clone, Debug)]
pub struct TwoStreamModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub rgb: Backbone,
    pub flow: Backbone,
    pub fusion: FusionClassifier,
}

impl TwoStreamModel {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let dims = (config.frames, config.height, config.width);
        let mut rng = seeded(config.seed, 0);
        let rgb = Backbone::new(&mut store, "rgb", &config.backbone, dims, &mut rng)?;
        let flow = Backbone::new(&mut store, "flow", &config.backbone, dims, &mut rng)?;
        let fusion = FusionClassifier::new(
            &mut store,
            "fusion",
            config.backbone.out_dim,
            config.stream_tokens(),
            config.num_classes,
            &config.fusion,
            &mut rng,
        )?;
        Ok(TwoStreamModel {
            config: config.clone(),
            store,
            rgb,
            flow,
            fusion,
        })
    }

    /// Records the forward pass of one sample; returns logits `[1×K]`.
    pub fn forward(&self, tape: &mut Tape, sample: &Sample, head_dropout: f64, ctx: &mut ForwardCtx) -> Result<Var> {
        let streams = self.config.streams;
        let rgb = if streams.uses_rgb() {
            let p = tape.constant(sample.rgb.clone());
            Some(self.rgb.encode(tape, &self.store, p, ctx)?)
        } else {
            None
        };
        let flow = if streams.uses_flow() {
            let p = tape.constant(sample.flow.clone());
            Some(self.flow.encode(tape, &self.store, p, ctx)?)
        } else {
            None
        };
        self.fusion.forward(tape, &self.store, rgb, flow, head_dropout, ctx)
    }

    /// Eval-mode logits.
    pub fn logits(&self, sample: &Sample) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, sample, 0.0, &mut ForwardCtx::eval())?;
        Ok(tape.value(out).data().to_vec())
    }
}

/// On-disk flow fields keyed by clip id and a digest of the solver config.
#[derive(Clone, Debug)]
pub struct FlowCache {
    root: PathBuf,
}

impl FlowCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FlowCache { root: root.into() }
    }

    pub fn config_key(cfg: &FlowSolverConfig) -> String {
        let json = serde_json::to_vec(cfg).expect("solver config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    fn clip_dir(&self, id: &str, cfg: &FlowSolverConfig) -> PathBuf {
        let safe: String = id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        self.root.join(Self::config_key(cfg)).join(safe)
    }

    /// Cached fields for `id`, computing and storing them on a miss.
    pub fn flows(&self, id: &str, clip: &VideoClip, cfg: &FlowSolverConfig) -> Result<Vec<FlowField>> {
        let dir = self.clip_dir(id, cfg);
        let paths: Vec<PathBuf> = (0..clip.frames())
            .map(|t| dir.join(format!("flow_{t:04}.flo2")))
            .collect();
        if paths.iter().all(|p| p.is_file()) {
            let cached: Result<Vec<FlowField>> = paths.iter().map(|p| read_flo2(p)).collect();
            match cached {
                Ok(f) if f.iter().all(|f| (f.height(), f.width()) == (clip.height(), clip.width())) => return Ok(f),
                _ => log::warn!("discarding unreadable flow cache in {}", dir.display()),
            }
        }
        let flows = quantized_flows(clip, cfg)?;
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (f, p) in flows.iter().zip(&paths) {
            write_flo2(p, f)?;
        }
        Ok(flows)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

/// Flow fields rounded to f32, the cache's storage precision, so cached and
/// uncached preparation give identical samples.
pub fn quantized_flows(clip: &VideoClip, cfg: &FlowSolverConfig) -> Result<Vec<FlowField>> {
    let mut flows = flow_sequence(clip, cfg)?;
    for f in &mut flows {
        f.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
    Ok(flows)
}

/// The flow stream's input clip: one color-coded field per frame.
pub fn flow_clip(flows: &[FlowField], label: Option<usize>) -> Result<VideoClip> {
    let images: Vec<_> = flows.iter().map(|f| flow_to_rgb(f, None)).collect();
    VideoClip::from_frames(&images, label)
}

/// Turns a raw clip in [0,1] into a [`Sample`].
pub fn prepare_sample(
    id: &str,
    clip: &VideoClip,
    model: &ModelConfig,
    flow_cfg: &FlowSolverConfig,
    cache: Option<&FlowCache>,
) -> Result<Sample> {
    let got = [clip.frames(), clip.height(), clip.width()];
    let want = [model.frames, model.height, model.width];
    if got != want {
        return Err(Error::dim("prepare_sample", &got, &want));
    }
    let flows = match cache {
        Some(c) => c.flows(id, clip, flow_cfg)?,
        None => quantized_flows(clip, flow_cfg)?,
    };
    let fclip = flow_clip(&flows, clip.label)?;
    let norm = &model.normalization;
    let patch = model.backbone.patch;
    Ok(Sample {
        id: id.to_string(),
        label: clip.label,
        rgb: extract_patches(&normalize(clip, norm), patch)?,
        flow: extract_patches(&normalize(&fclip, norm), patch)?,
    })
}

/// [`prepare_sample`] over many clips in parallel; output order follows input.
pub fn prepare_samples<'a>(
    clips: impl IntoParallelIterator<Item = (&'a str, &'a VideoClip)>,
    model: &ModelConfig,
    flow_cfg: &FlowSolverConfig,
    cache: Option<&FlowCache>,
) -> Result<Vec<Sample>> {
    clips
        .into_par_iter()
        .map(|(id, clip)| prepare_sample(id, clip, model, flow_cfg, cache))
        .collect()
}
