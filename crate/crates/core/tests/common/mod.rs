//! Shared test oracles and fixtures.
#![allow(dead_code)]

pub mod grad;
pub mod mha;

use tsvt::flow::{FlowField, Image};

/// Periodic smooth texture on an `n×n` grid: a sum of low integer-frequency
/// sinusoids, so integer translations with wrap-around are exact.
pub fn periodic_texture(n: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f64, f64, f64, f64)> = (0..12)
        .map(|_| {
            let fx = rng.random_range(-4i32..=4) as f64;
            let fy = rng.random_range(-4i32..=4) as f64;
            let phase = rng.random::<f64>() * std::f64::consts::TAU;
            let amp = 0.5 + rng.random::<f64>();
            (fx, fy, phase, amp)
        })
        .collect();
    let total: f64 = waves.iter().map(|w| w.3).sum();
    let mut out = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let s: f64 = waves
                .iter()
                .map(|&(fx, fy, p, a)| {
                    let arg = std::f64::consts::TAU * (fx * x as f64 + fy * y as f64) / n as f64 + p;
                    a * arg.sin()
                })
                .sum();
            out.push(0.5 + 0.45 * s / total);
        }
    }
    out
}

/// `(first, second, truth)` where the second frame is the first translated by
/// `(dx, dy)` with wrap-around.
pub fn translated_pair(n: usize, dx: i64, dy: i64, seed: u64) -> (Image, Image, FlowField) {
    let tex = periodic_texture(n, seed);
    let at = |y: i64, x: i64| tex[(y.rem_euclid(n as i64) as usize) * n + x.rem_euclid(n as i64) as usize];
    let first = Image::from_fn(n, n, 1, |y, x, _| at(y as i64, x as i64));
    let second = Image::from_fn(n, n, 1, |y, x, _| at(y as i64 - dy, x as i64 - dx));
    (first, second, FlowField::constant(n, n, dx as f64, dy as f64))
}
