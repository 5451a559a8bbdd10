//! Flow visualization on the Middlebury color wheel.

use super::image::{FlowField, Image};

/// Hue segment lengths: red→yellow, yellow→green, green→cyan, cyan→blue,
/// blue→magenta, magenta→red.
const SEGMENTS: [usize; 6] = [15, 6, 4, 11, 13, 6];
pub const WHEEL_BINS: usize = 55;

/// Floor applied to the normalizing magnitude.
pub const MIN_NORM: f64 = 1e-5;

/// The 55-entry wheel, 8-bit RGB per bin.
pub fn color_wheel() -> [[u8; 3]; WHEEL_BINS] {
    let mut wheel = [[0u8; 3]; WHEEL_BINS];
    let ramp = |i: usize, n: usize| (255.0 * i as f64 / n as f64).floor() as u8;
    let mut col = 0;
    let [ry, yg, gc, cb, bm, mr] = SEGMENTS;
    for i in 0..ry {
        wheel[col + i] = [255, ramp(i, ry), 0];
    }
    col += ry;
    for i in 0..yg {
        wheel[col + i] = [255 - ramp(i, yg), 255, 0];
    }
    col += yg;
    for i in 0..gc {
        wheel[col + i] = [0, 255, ramp(i, gc)];
    }
    col += gc;
    for i in 0..cb {
        wheel[col + i] = [0, 255 - ramp(i, cb), 255];
    }
    col += cb;
    for i in 0..bm {
        wheel[col + i] = [ramp(i, bm), 0, 255];
    }
    col += bm;
    for i in 0..mr {
        wheel[col + i] = [255, 0, 255 - ramp(i, mr)];
    }
    wheel
}

/// Color of one already-normalized vector (magnitude ≤ 1).
pub fn vector_color(wheel: &[[u8; 3]; WHEEL_BINS], u: f64, v: f64) -> [u8; 3] {
    let rad = u.hypot(v);
    let a = (-v).atan2(-u) / std::f64::consts::PI;
    let fk = (a + 1.0) / 2.0 * (WHEEL_BINS - 1) as f64;
    let k0 = fk.floor() as usize;
    let k1 = if k0 + 1 == WHEEL_BINS { 0 } else { k0 + 1 };
    let f = fk - k0 as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        let c0 = f64::from(wheel[k0][c]) / 255.0;
        let c1 = f64::from(wheel[k1][c]) / 255.0;
        let col = (1.0 - f) * c0 + f * c1;
        let col = 1.0 - rad * (1.0 - col);
        out[c] = (255.0 * col).floor() as u8;
    }
    out
}

/// 8-bit interleaved RGB rendering of `flow`.
///
/// Vectors are divided by `max_norm`, defaulting to the largest magnitude in
/// the field; the divisor never drops below [`MIN_NORM`].
pub fn flow_to_rgb8(flow: &FlowField, max_norm: Option<f64>) -> Vec<u8> {
    let norm = max_norm.unwrap_or_else(|| flow.max_magnitude()).max(MIN_NORM);
    let wheel = color_wheel();
    flow.data()
        .chunks(2)
        .flat_map(|p| vector_color(&wheel, p[0] / norm, p[1] / norm))
        .collect()
}

pub fn flow_to_rgb(flow: &FlowField, max_norm: Option<f64>) -> Image {
    Image::from_rgb8(flow.height(), flow.width(), &flow_to_rgb8(flow, max_norm))
        .expect("flow geometry is a valid image")
}
