//! Synthetic moving-shapes clips.
//!
//! Each class pairs a shape (the appearance) with a compass direction (the
//! motion). Classes sharing a shape differ only in how it moves, and classes
//! sharing a direction differ only in what moves.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::clip::{VideoClip, CHANNELS};
use crate::error::{Error, Result};
use crate::rng::{seeded, stream_id};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    Right,
    Left,
    Down,
    Up,
    DownRight,
    DownLeft,
    UpRight,
    UpLeft,
}

impl Motion {
    /// Unit displacement in (x, y) image coordinates, y pointing down.
    pub fn unit(self) -> (f64, f64) {
        let d = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            Motion::Right => (1.0, 0.0),
            Motion::Left => (-1.0, 0.0),
            Motion::Down => (0.0, 1.0),
            Motion::Up => (0.0, -1.0),
            Motion::DownRight => (d, d),
            Motion::DownLeft => (-d, d),
            Motion::UpRight => (d, -d),
            Motion::UpLeft => (-d, -d),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Motion::Right => "right",
            Motion::Left => "left",
            Motion::Down => "down",
            Motion::Up => "up",
            Motion::DownRight => "down_right",
            Motion::DownLeft => "down_left",
            Motion::UpRight => "up_right",
            Motion::UpLeft => "up_left",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Square,
    Disc,
}

impl Shape {
    pub fn name(self) -> &'static str {
        match self {
            Shape::Square => "square",
            Shape::Disc => "disc",
        }
    }

    /// Whether `(px, py)` relative to the bounding-box origin is inside a
    /// shape of side/diameter `size`.
    fn contains(self, px: f64, py: f64, size: f64) -> bool {
        match self {
            Shape::Square => (0.0..size).contains(&px) && (0.0..size).contains(&py),
            Shape::Disc => {
                let r = size / 2.0;
                let (dx, dy) = (px - r, py - r);
                dx * dx + dy * dy < r * r
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub shape: Shape,
    pub motion: Motion,
}

impl ClassSpec {
    pub fn name(&self) -> String {
        format!("{}_{}", self.shape.name(), self.motion.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthDatasetConfig {
    pub classes: Vec<ClassSpec>,
    pub clips_per_class: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Amplitude of uniform per-pixel noise.
    pub noise: f64,
    /// Square side / disc diameter in pixels.
    pub shape_size: f64,
    /// Pixels travelled per frame.
    pub speed: f64,
}

impl Default for SynthDatasetConfig {
    fn default() -> Self {
        let shapes = [Shape::Square, Shape::Disc];
        let motions = [Motion::Right, Motion::Left, Motion::Down, Motion::Up];
        SynthDatasetConfig {
            classes: shapes
                .iter()
                .flat_map(|&shape| motions.iter().map(move |&motion| ClassSpec { shape, motion }))
                .collect(),
            clips_per_class: 30,
            frames: 8,
            height: 32,
            width: 32,
            seed: 0,
            noise: 0.1,
            shape_size: 10.0,
            speed: 1.5,
        }
    }
}

const BACKGROUND: f64 = 0.5;
const SHAPE_COLOR: [f64; 3] = [0.95, 0.8, 0.25];
const SUPERSAMPLE: usize = 4;

impl SynthDatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if self.classes[..i].contains(c) {
                return Err(Error::Config(format!("duplicate class {}", c.name())));
            }
        }
        if !(0.0..=0.5).contains(&self.noise) {
            return Err(Error::Config(format!("noise {} not in [0, 0.5]", self.noise)));
        }
        if self.clips_per_class == 0 || self.frames == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config("clip counts and extents must be positive".into()));
        }
        if self.shape_size <= 0.0 || self.speed < 0.0 {
            return Err(Error::Config("shape size must be positive, speed non-negative".into()));
        }
        let travel = self.speed * (self.frames - 1) as f64;
        for c in &self.classes {
            let (ux, uy) = c.motion.unit();
            let need_x = self.shape_size + travel * ux.abs();
            let need_y = self.shape_size + travel * uy.abs();
            if need_x > self.width as f64 || need_y > self.height as f64 {
                return Err(Error::Config(format!(
                    "shape of size {} moving {} over {} frames does not fit a {}x{} frame",
                    self.shape_size,
                    c.motion.name(),
                    self.frames,
                    self.height,
                    self.width
                )));
            }
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(ClassSpec::name).collect()
    }
}

/// A generated clip together with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthClip {
    pub id: String,
    pub class: usize,
    pub spec: ClassSpec,
    pub clip: VideoClip,
    /// Bounding-box origin in frame 0, pixels.
    pub start: (f64, f64),
    /// Displacement per frame, pixels.
    pub velocity: (f64, f64),
    pub size: f64,
}

impl SynthClip {
    /// Pixels whose centre lies inside the shape in frame `t`.
    pub fn support(&self, t: usize) -> Vec<(usize, usize)> {
        let (ox, oy) = self.origin(t);
        let mut out = Vec::new();
        for y in 0..self.clip.height() {
            for x in 0..self.clip.width() {
                if self
                    .spec
                    .shape
                    .contains(x as f64 + 0.5 - ox, y as f64 + 0.5 - oy, self.size)
                {
                    out.push((y, x));
                }
            }
        }
        out
    }

    fn origin(&self, t: usize) -> (f64, f64) {
        (
            self.start.0 + t as f64 * self.velocity.0,
            self.start.1 + t as f64 * self.velocity.1,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub config: SynthDatasetConfig,
    pub train: Vec<SynthClip>,
    pub val: Vec<SynthClip>,
    pub test: Vec<SynthClip>,
}

impl SynthDataset {
    pub fn class_names(&self) -> Vec<String> {
        self.config.class_names()
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

const SPLIT_STREAM: u64 = 0x5350_4c49_54;

/// Per-class counts for a 70/10/20 split, keeping one clip in validation
/// and test once a class has at least 3 clips.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let mut val = (0.1 * n as f64).round() as usize;
    let mut test = (0.2 * n as f64).round() as usize;
    if n >= 3 {
        val = val.max(1);
        test = test.max(1);
    }
    let val = val.min(n);
    let test = test.min(n - val);
    (n - val - test, val, test)
}

pub fn generate_synthetic_dataset(cfg: &SynthDatasetConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut ds = SynthDataset {
        config: cfg.clone(),
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (class, spec) in cfg.classes.iter().enumerate() {
        let mut clips: Vec<SynthClip> = (0..cfg.clips_per_class)
            .map(|i| render_clip(cfg, class, *spec, i))
            .collect();
        let mut rng = seeded(cfg.seed, stream_id(&[SPLIT_STREAM, class as u64]));
        // Fisher–Yates with the split stream
        for i in (1..clips.len()).rev() {
            let j = rng.random_range(0..=i);
            clips.swap(i, j);
        }
        let (n_train, n_val, _) = split_counts(clips.len());
        let test = clips.split_off(n_train + n_val);
        let val = clips.split_off(n_train);
        ds.train.extend(clips);
        ds.val.extend(val);
        ds.test.extend(test);
    }
    Ok(ds)
}

fn render_clip(cfg: &SynthDatasetConfig, class: usize, spec: ClassSpec, index: usize) -> SynthClip {
    let mut rng = seeded(cfg.seed, stream_id(&[class as u64, index as u64]));
    let (ux, uy) = spec.motion.unit();
    let velocity = (ux * cfg.speed, uy * cfg.speed);
    let travel = cfg.speed * (cfg.frames - 1) as f64;
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    // Origin range such that every frame keeps the shape fully inside.
    let span = |extent: f64, u: f64| {
        let lo = if u < 0.0 { travel * -u } else { 0.0 };
        let hi = extent - cfg.shape_size - if u > 0.0 { travel * u } else { 0.0 };
        (lo, hi.max(lo))
    };
    let (x_lo, x_hi) = span(w, ux);
    let (y_lo, y_hi) = span(h, uy);
    let start = (
        x_lo + (x_hi - x_lo) * rng.random::<f64>(),
        y_lo + (y_hi - y_lo) * rng.random::<f64>(),
    );

    let frame_len = cfg.height * cfg.width * CHANNELS;
    let mut data = Vec::with_capacity(cfg.frames * frame_len);
    let sub = 1.0 / SUPERSAMPLE as f64;
    for t in 0..cfg.frames {
        let ox = start.0 + t as f64 * velocity.0;
        let oy = start.1 + t as f64 * velocity.1;
        for y in 0..cfg.height {
            for x in 0..cfg.width {
                let mut hits = 0usize;
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let px = x as f64 + (sx as f64 + 0.5) * sub - ox;
                        let py = y as f64 + (sy as f64 + 0.5) * sub - oy;
                        hits += usize::from(spec.shape.contains(px, py, cfg.shape_size));
                    }
                }
                let cover = hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
                for color in SHAPE_COLOR {
                    let base = (1.0 - cover) * BACKGROUND + cover * color;
                    let n = cfg.noise * (2.0 * rng.random::<f64>() - 1.0);
                    data.push((base + n).clamp(0.0, 1.0));
                }
            }
        }
    }
    let clip = VideoClip::new(cfg.frames, cfg.height, cfg.width, data, Some(class))
        .expect("generator geometry is consistent");
    SynthClip {
        id: format!("{}_{:04}", spec.name(), index),
        class,
        spec,
        clip,
        start,
        velocity,
        size: cfg.shape_size,
    }
}
