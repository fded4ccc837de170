//! Wall-clock benchmark of the clustering loop across iteration counts,
//! with a least-squares linearity fit.

use std::time::Instant;

use crate::error::Result;
use crate::flow::build_flow_matrix;
use crate::grid::GridShape;
use crate::labeling::{build_attractor_mask, ground_truth_flows};
use crate::mcl::{markov_cluster, MclConfig};
use crate::scalar::Scalar;
use crate::toy::{synth_scene, SceneConfig};

/// Timing for one iteration count.
#[derive(Debug, Clone, Copy)]
pub struct BenchSample {
    pub iters: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
}

/// Ordinary least-squares line fit.
#[derive(Debug, Clone, Copy)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Benchmark outcome: per-N samples plus the fit (absent for a single N).
#[derive(Debug, Clone)]
pub struct BenchResult {
    pub samples: Vec<BenchSample>,
    pub fit: Option<LineFit>,
}

/// Fits `y = slope * x + intercept`, reporting the coefficient of
/// determination. Returns `None` for fewer than two points.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mean_x = xs.iter().sum::<f64>() / nf;
    let mean_y = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let pred = slope * x + intercept;
        ss_res += (y - pred) * (y - pred);
        ss_tot += (y - mean_y) * (y - mean_y);
    }
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some(LineFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Times `markov_cluster` over a range of iteration counts on one fixed
/// seeded absorbing matrix, early stopping disabled so每run executes the
/// full count.
pub fn bench_mcl<T: Scalar>(
    shape: GridShape,
    iter_range: std::ops::RangeInclusive<usize>,
    trials: usize,
    seed: u64,
) -> Result<BenchResult> {
    assert!(trials >= 1);
    let cfg = SceneConfig {
        shape,
        box_count: (2, 4),
        ..SceneConfig::default()
    };
    let (_, boxes) = synth_scene::<T>(&cfg, seed)?;
    let mask = build_attractor_mask(&boxes, &shape)?;
    let flows = ground_truth_flows::<T>(&mask)?;
    let m0 = build_flow_matrix(&flows)?;

    let mut samples = Vec::new();
    for iters in iter_range {
        let mcl_cfg = MclConfig::<T> {
            max_iters: iters,
            prune_threshold: T::from_f64_c(0.15),
            convergence_eps: None,
            final_renormalize: true,
        };
        // One warmup run outside the clock.
        let _ = markov_cluster(&m0, &mcl_cfg, false)?;
        let mut times = Vec::with_capacity(trials);
        for _ in 0..trials {
            let t0 = Instant::now();
            let out = markov_cluster(&m0, &mcl_cfg, false)?;
            let dt = t0.elapsed().as_secs_f64() * 1e3;
            debug_assert_eq!(out.iterations_run, iters);
            times.push(dt);
        }
        let mean = times.iter().sum::<f64>() / trials as f64;
        let var = times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / trials as f64;
        samples.push(BenchSample {
            iters,
            mean_ms: mean,
            std_ms: var.sqrt(),
        });
    }
    let xs: Vec<f64> = samples.iter().map(|s| s.iters as f64).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.mean_ms).collect();
    Ok(BenchResult {
        samples: samples.clone(),
        fit: fit_line(&xs, &ys),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_exact_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [3.0, 5.0, 7.0, 9.0];
        let fit = fit_line(&xs, &ys).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.intercept - 1.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reference_iteration_timings_are_linear() {
        // Published per-iteration-count timings in milliseconds; the fitter
        // itself is under test here.
        let xs: Vec<f64> = (1..=8).map(|n| n as f64).collect();
        let ys = [0.32, 0.51, 0.67, 0.86, 1.05, 1.23, 1.41, 1.60];
        let fit = fit_line(&xs, &ys).unwrap();
        assert!(fit.r_squared > 0.99, "r^2 = {}", fit.r_squared);
        assert!(fit.slope > 0.0);
    }

    #[test]
    fn single_point_fit_is_degenerate() {
        assert!(fit_line(&[1.0], &[0.5]).is_none());
    }

    #[test]
    fn small_bench_produces_positive_times() {
        let result = bench_mcl::<f64>(GridShape::square(8), 1..=3, 3, 7).unwrap();
        assert_eq!(result.samples.len(), 3);
        for s in &result.samples {
            assert!(s.mean_ms > 0.0);
        }
        assert!(result.fit.is_some());
    }
}
