use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::Image;
use crate::tensor::Tensor;

/// `T×H×W×3` frame stack, interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
    pub label: Option<usize>,
}

pub const CHANNELS: usize = 3;

impl VideoClip {
    pub fn new(
        frames: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
        label: Option<usize>,
    ) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(Error::Param("clip extents must be positive".into()));
        }
        if data.len() != frames * height * width * CHANNELS {
            return Err(Error::dim(
                "clip",
                &[frames, height, width, CHANNELS],
                &[data.len()],
            ));
        }
        Ok(VideoClip {
            frames,
            height,
            width,
            data,
            label,
        })
    }

    /// Stacks RGB frames of identical size.
    pub fn from_frames(frames: &[Image], label: Option<usize>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Input("clip needs at least one frame".into()))?;
        let (h, w) = (first.height(), first.width());
        let mut data = Vec::with_capacity(frames.len() * h * w * CHANNELS);
        for f in frames {
            if (f.height(), f.width(), f.channels()) != (h, w, CHANNELS) {
                return Err(Error::dim(
                    "clip frame",
                    &[h, w, CHANNELS],
                    &[f.height(), f.width(), f.channels()],
                ));
            }
            data.extend_from_slice(f.data());
        }
        Self::new(frames.len(), h, w, data, label)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * CHANNELS
    }

    pub fn frame_data(&self, t: usize) -> &[f64] {
        &self.data[t * self.frame_len()..(t + 1) * self.frame_len()]
    }

    /// Frame `t` as an image (values clamped to [0,1]).
    pub fn frame(&self, t: usize) -> Image {
        Image::new(self.height, self.width, CHANNELS, self.frame_data(t).to_vec())
            .expect("clip frames are valid images")
    }

    pub fn get(&self, t: usize, y: usize, x: usize, c: usize) -> f64 {
        self.data[((t * self.height + y) * self.width + x) * CHANNELS + c]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            [self.frames, self.height, self.width, CHANNELS],
            self.data.clone(),
        )
        .expect("clip extents are consistent")
    }

    /// Every frame replaced by frame 0.
    pub fn frozen(&self) -> VideoClip {
        let first = self.frame_data(0);
        VideoClip {
            data: first.repeat(self.frames),
            ..self.clone()
        }
    }

    pub fn map(&self, f: impl Fn(usize, f64) -> f64) -> VideoClip {
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| f(i % CHANNELS, v))
            .collect();
        VideoClip {
            data,
            ..self.clone()
        }
    }
}

/// Per-channel affine normalization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationSpec {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        NormalizationSpec {
            mean: [0.45; 3],
            std: [0.225; 3],
        }
    }
}

impl NormalizationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.std.iter().all(|&s| s > 0.0) {
            Ok(())
        } else {
            Err(Error::Config(format!("normalization std must be positive: {:?}", self.std)))
        }
    }
}

/// `(x − mean) / std` per channel.
pub fn normalize(clip: &VideoClip, spec: &NormalizationSpec) -> VideoClip {
    clip.map(|c, v| (v - spec.mean[c]) / spec.std[c])
}

pub fn denormalize(clip: &VideoClip, spec: &NormalizationSpec) -> VideoClip {
    clip.map(|c, v| v * spec.std[c] + spec.mean[c])
}

/// `S` evenly spaced frame indices in `[0, L−1]`:
/// `floor(i·(L−1)/(S−1))`, or `[0]` when `S = 1`.
pub fn temporal_subsample(total: usize, target: usize) -> Vec<usize> {
    if total == 0 || target == 0 {
        return Vec::new();
    }
    if target == 1 {
        return vec![0];
    }
    let (l, s) = (total as u64 - 1, target as u64 - 1);
    (0..target as u64).map(|i| (i * l / s) as usize).collect()
}
