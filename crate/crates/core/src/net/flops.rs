//! Multiply-accumulate accounting for one forward pass.

use std::time::Instant;

use ndarray::Array2;

use super::layers::{gaussian, macs, reset_macs};
use super::{forward, predict, ArchConfig, Params, N_OUT};
use crate::error::Result;

/// Closed-form MAC count of one forward pass over `n_input` rows. Only
/// matrix products are counted; normalization, softmax and activations are
/// linear-cost elementwise work and ignored.
pub fn flop_count(cfg: &ArchConfig, n_input: usize) -> u64 {
    let (l, c, ci, h) = (cfg.n_latent as u64, cfg.c_latent as u64, cfg.c_input as u64, cfg.hidden() as u64);
    let n = n_input as u64;
    let kv = 2 * n * ci * c;
    let mlp = 2 * l * c * h;
    let cross = 2 * l * c * c + 2 * l * n * c + mlp;
    let selfl = 4 * l * c * c + 2 * l * l * c + mlp;
    kv + cfg.n_blocks as u64 * (cross + cfg.self_per_block as u64 * selfl) + N_OUT as u64 * c
}

/// Runs an instrumented forward pass on zero input and returns the counted
/// MACs.
pub fn measured_macs(params: &Params<f32>, n_input: usize) -> Result<u64> {
    let x = Array2::<f32>::zeros((n_input, params.cfg.c_input));
    reset_macs();
    forward(params, &x.view())?;
    Ok(macs())
}

/// Median wall-clock seconds of `repeats` inference passes over random
/// input with `n_input` rows.
pub fn time_forward(params: &Params<f32>, n_input: usize, repeats: usize, seed: u64) -> Result<f64> {
    let x: Array2<f32> = gaussian(&mut crate::seed::rng(seed, &[0xbe4c]), (n_input, params.cfg.c_input), 1.0);
    let mut times = Vec::with_capacity(repeats.max(1));
    for _ in 0..repeats.max(1) {
        let t0 = Instant::now();
        std::hint::black_box(predict(params, &x.view())?);
        times.push(t0.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    Ok(times[times.len() / 2])
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}
