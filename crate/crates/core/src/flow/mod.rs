//! Optical flow: warping, Horn–Schunck estimation and color rendering.

mod color;
mod horn_schunck;
mod image;

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

pub use color::{color_wheel, flow_to_rgb, flow_to_rgb8, vector_color, MIN_NORM, WHEEL_BINS};
pub use horn_schunck::{estimate_flow, FlowSolverConfig, MAX_LEVEL_INCREMENT};
pub use image::{FlowField, Image};

use crate::error::{Error, Result};
use crate::video::VideoClip;

/// Samples `image` at `(x + f¹, y + f²)` for every pixel, bilinearly, with
/// coordinates clamped to the border.
pub fn warp(image: &Image, flow: &FlowField) -> Result<Image> {
    if image.height() != flow.height() || image.width() != flow.width() {
        return Err(Error::dim(
            "warp",
            &[image.height(), image.width()],
            &[flow.height(), flow.width()],
        ));
    }
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let mut data = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = flow.get(y, x);
            for ch in 0..c {
                data.push(image.sample(x as f64 + u, y as f64 + v, ch));
            }
        }
    }
    Image::new(h, w, c, data)
}

/// Single-plane warp without the [0,1] clamp, for solver intensities.
pub(crate) fn warp_plane(plane: &[f64], h: usize, w: usize, flow: &FlowField) -> Vec<f64> {
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = flow.get(y, x);
            out.push(image::bilinear(plane, h, w, 1, x as f64 + u, y as f64 + v, 0));
        }
    }
    out
}

/// One flow per frame: flow `t` maps frame `t` to `t+1`, and the last entry
/// repeats the flow of the final pair.
pub fn flow_sequence(clip: &VideoClip, cfg: &FlowSolverConfig) -> Result<Vec<FlowField>> {
    let t = clip.frames();
    if t < 2 {
        return Err(Error::Input(format!(
            "flow needs at least 2 frames, clip has {t}"
        )));
    }
    let frames: Vec<Image> = (0..t).map(|i| clip.frame(i)).collect();
    let mut flows = (0..t - 1)
        .into_par_iter()
        .map(|i| estimate_flow(&frames[i], &frames[i + 1], cfg))
        .collect::<Result<Vec<_>>>()?;
    flows.push(flows[t - 2].clone());
    Ok(flows)
}

const FLO2_MAGIC: &[u8; 4] = b"FLO2";

/// Little-endian `FLO2`, u32 height, u32 width, then `H·W·2` f32 values.
pub fn write_flo2(path: &Path, flow: &FlowField) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + flow.data().len() * 4);
    buf.extend_from_slice(FLO2_MAGIC);
    buf.extend_from_slice(&(flow.height() as u32).to_le_bytes());
    buf.extend_from_slice(&(flow.width() as u32).to_le_bytes());
    for v in flow.data() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_flo2(path: &Path) -> Result<FlowField> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Decode {
        path: path.to_path_buf(),
        message: m.to_string(),
    };
    if buf.len() < 12 || &buf[..4] != FLO2_MAGIC {
        return Err(bad("missing FLO2 header"));
    }
    let word = |i: usize| u32::from_le_bytes(buf[i..i + 4].try_into().unwrap()) as usize;
    let (h, w) = (word(4), word(8));
    if buf.len() != 12 + h * w * 8 {
        return Err(bad("payload length does not match header"));
    }
    let data = buf[12..]
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
        .collect();
    FlowField::new(h, w, data)
}
