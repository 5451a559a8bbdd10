//! Coarse-to-fine Horn–Schunck estimation.
//!
//! Each pyramid level warps the second frame by the current flow, linearizes
//! brightness constancy around it and solves for the flow with Jacobi sweeps
//! of the Horn–Schunck update. Intensities are scaled to [0,255] internally,
//! the range the smoothness weight is calibrated for.

use serde::{Deserialize, Serialize};

use super::image::{FlowField, Image};
use super::warp_plane;
use crate::error::{Error, Result};

/// Largest per-level flow increment, in pixels of that level.
pub const MAX_LEVEL_INCREMENT: f64 = 2.0;

/// Smallest side a pyramid level may have.
const MIN_LEVEL_SIDE: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowSolverConfig {
    /// Smoothness weight α.
    pub alpha: f64,
    /// Maximum Jacobi iterations per pyramid level.
    pub iterations: usize,
    pub levels: usize,
    /// Early exit when the mean per-pixel update falls below this.
    pub tolerance: f64,
}

impl Default for FlowSolverConfig {
    fn default() -> Self {
        FlowSolverConfig {
            alpha: 15.0,
            iterations: 200,
            levels: 3,
            tolerance: 1e-4,
        }
    }
}

impl FlowSolverConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha > 0.0 && self.iterations > 0 && self.levels > 0 && self.tolerance > 0.0;
        if ok && self.alpha.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "flow solver parameters must be positive: {self:?}"
            )))
        }
    }

    /// Bound on the magnitude of any flow the solver can return, in pixels.
    pub fn max_displacement(&self) -> f64 {
        let per_axis = MAX_LEVEL_INCREMENT * ((1u64 << self.levels) - 1) as f64;
        per_axis * std::f64::consts::SQRT_2
    }
}

/// Single-channel plane used inside the solver.
#[derive(Clone)]
struct Plane {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Plane {
    fn at(&self, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.h as isize - 1) as usize;
        let x = x.clamp(0, self.w as isize - 1) as usize;
        self.data[y * self.w + x]
    }

    fn downsample(&self) -> Plane {
        let h = self.h.div_ceil(2);
        let w = self.w.div_ceil(2);
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let (yy, xx) = (2 * y as isize, 2 * x as isize);
                let s = self.at(yy, xx) + self.at(yy, xx + 1) + self.at(yy + 1, xx) + self.at(yy + 1, xx + 1);
                data.push(0.25 * s);
            }
        }
        Plane { h, w, data }
    }
}

fn pyramid(base: Plane, levels: usize) -> Vec<Plane> {
    let mut out = vec![base];
    while out.len() < levels {
        let last = out.last().unwrap();
        if last.h.div_ceil(2) < MIN_LEVEL_SIDE || last.w.div_ceil(2) < MIN_LEVEL_SIDE {
            break;
        }
        let next = last.downsample();
        out.push(next);
    }
    out
}

/// Dense flow from `i1` to `i2`: `i2(p + flow(p)) ≈ i1(p)`.
pub fn estimate_flow(i1: &Image, i2: &Image, cfg: &FlowSolverConfig) -> Result<FlowField> {
    cfg.validate()?;
    if (i1.height(), i1.width(), i1.channels()) != (i2.height(), i2.width(), i2.channels()) {
        return Err(Error::dim(
            "estimate_flow",
            &[i1.height(), i1.width(), i1.channels()],
            &[i2.height(), i2.width(), i2.channels()],
        ));
    }
    let to_plane = |img: &Image| Plane {
        h: img.height(),
        w: img.width(),
        data: img.to_gray().data().iter().map(|v| v * 255.0).collect(),
    };
    let p1 = pyramid(to_plane(i1), cfg.levels);
    let p2 = pyramid(to_plane(i2), cfg.levels);

    let coarsest = p1.len() - 1;
    let mut flow = FlowField::zeros(p1[coarsest].h, p1[coarsest].w);
    for level in (0..=coarsest).rev() {
        let (a, b) = (&p1[level], &p2[level]);
        if flow.height() != a.h || flow.width() != a.w {
            flow = flow.resize(a.h, a.w);
        }
        refine(a, b, &mut flow, cfg);
    }
    Ok(flow)
}

fn refine(i1: &Plane, i2: &Plane, flow: &mut FlowField, cfg: &FlowSolverConfig) {
    let (h, w) = (i1.h, i1.w);
    let warped = Plane {
        h,
        w,
        data: warp_plane(&i2.data, h, w, flow),
    };

    let n = h * w;
    let mut ix = vec![0.0; n];
    let mut iy = vec![0.0; n];
    let mut it = vec![0.0; n];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let k = y as usize * w + x as usize;
            let dx1 = 0.5 * (i1.at(y, x + 1) - i1.at(y, x - 1));
            let dx2 = 0.5 * (warped.at(y, x + 1) - warped.at(y, x - 1));
            let dy1 = 0.5 * (i1.at(y + 1, x) - i1.at(y - 1, x));
            let dy2 = 0.5 * (warped.at(y + 1, x) - warped.at(y - 1, x));
            ix[k] = 0.5 * (dx1 + dx2);
            iy[k] = 0.5 * (dy1 + dy2);
            it[k] = warped.data[k] - i1.data[k];
        }
    }

    let base: Vec<f64> = flow.data().to_vec();
    let mut u: Vec<f64> = base.iter().step_by(2).copied().collect();
    let mut v: Vec<f64> = base.iter().skip(1).step_by(2).copied().collect();
    let u0 = u.clone();
    let v0 = v.clone();
    let alpha2 = cfg.alpha * cfg.alpha;
    let denom: Vec<f64> = (0..n).map(|k| alpha2 + ix[k] * ix[k] + iy[k] * iy[k]).collect();
    let mut nu = vec![0.0; n];
    let mut nv = vec![0.0; n];

    for _ in 0..cfg.iterations {
        let mut change = 0.0;
        for y in 0..h {
            for x in 0..w {
                let k = y * w + x;
                let ub = neighbour_mean(&u, h, w, y, x);
                let vb = neighbour_mean(&v, h, w, y, x);
                let r = (ix[k] * (ub - u0[k]) + iy[k] * (vb - v0[k]) + it[k]) / denom[k];
                nu[k] = ub - ix[k] * r;
                nv[k] = vb - iy[k] * r;
                change += (nu[k] - u[k]).abs() + (nv[k] - v[k]).abs();
            }
        }
        std::mem::swap(&mut u, &mut nu);
        std::mem::swap(&mut v, &mut nv);
        if change / n as f64 <= cfg.tolerance {
            break;
        }
    }

    let out = flow.data_mut();
    for k in 0..n {
        let du = (u[k] - u0[k]).clamp(-MAX_LEVEL_INCREMENT, MAX_LEVEL_INCREMENT);
        let dv = (v[k] - v0[k]).clamp(-MAX_LEVEL_INCREMENT, MAX_LEVEL_INCREMENT);
        out[2 * k] = u0[k] + du;
        out[2 * k + 1] = v0[k] + dv;
    }
}

/// Horn–Schunck weighted neighbourhood average (1/6 edge, 1/12 corner
/// neighbours) with replicated borders.
fn neighbour_mean(f: &[f64], h: usize, w: usize, y: usize, x: usize) -> f64 {
    let ym = y.saturating_sub(1);
    let yp = (y + 1).min(h - 1);
    let xm = x.saturating_sub(1);
    let xp = (x + 1).min(w - 1);
    let at = |yy: usize, xx: usize| f[yy * w + xx];
    (at(ym, x) + at(yp, x) + at(y, xm) + at(y, xp)) / 6.0
        + (at(ym, xm) + at(ym, xp) + at(yp, xm) + at(yp, xp)) / 12.0
}
