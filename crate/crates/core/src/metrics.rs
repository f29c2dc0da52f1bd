//! Ensemble statistics: normalized bias and SDE, steady-state levels and
//! convergence times.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

fn check(estimates: &[f64], r_true: f64) -> Result<()> {
    if estimates.is_empty() {
        return Err(Error::InvalidArgument("no estimates to summarize".into()));
    }
    if !(r_true > 0.0) {
        return Err(Error::InvalidArgument(format!("true value must be positive, got {r_true}")));
    }
    Ok(())
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// `(mean(R̂) − R)/R · 100`.
pub fn normalized_bias(estimates: &[f64], r_true: f64) -> Result<f64> {
    check(estimates, r_true)?;
    Ok((mean(estimates) - r_true) / r_true * 100.0)
}

/// `√(mean((R̂ − R)²))/R · 100`. The deviation is taken about the true value,
/// not about the ensemble mean.
pub fn normalized_sde(estimates: &[f64], r_true: f64) -> Result<f64> {
    check(estimates, r_true)?;
    let mse = estimates.iter().map(|e| (e - r_true).powi(2)).sum::<f64>() / estimates.len() as f64;
    Ok(mse.sqrt() / r_true * 100.0)
}

/// Standard error of the ensemble mean, normalized like the bias (percent).
pub fn normalized_bias_se(estimates: &[f64], r_true: f64) -> Result<f64> {
    check(estimates, r_true)?;
    Ok(standard_error(estimates) / r_true * 100.0)
}

/// Sample standard deviation over `√n`; zero for a single value.
pub fn standard_error(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mu = mean(xs);
    let var = xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// Per-batch normalized SDE from per-run traces indexed `[run][batch]`.
/// Non-finite entries (cold estimators) are skipped.
pub fn sde_trace(runs: &[Vec<f64>], r_true: f64) -> Vec<f64> {
    sde_trace_indexed(runs, r_true, None)
}

fn sde_trace_indexed(runs: &[Vec<f64>], r_true: f64, pick: Option<&[usize]>) -> Vec<f64> {
    let n_batches = runs.first().map_or(0, Vec::len);
    let mut sum = vec![0.0; n_batches];
    let mut count = vec![0usize; n_batches];
    let mut visit = |run: &Vec<f64>| {
        for (k, &v) in run.iter().enumerate() {
            if v.is_finite() {
                sum[k] += (v - r_true).powi(2);
                count[k] += 1;
            }
        }
    };
    match pick {
        Some(idx) => idx.iter().for_each(|&j| visit(&runs[j])),
        None => runs.iter().for_each(&mut visit),
    }
    sum.iter()
        .zip(&count)
        .map(|(s, &c)| if c == 0 { f64::NAN } else { (s / c as f64).sqrt() / r_true * 100.0 })
        .collect()
}

/// First batch (1-based) after which every later value stays within
/// `band·|ref|` of `ref`, where `ref` is the mean of the final `tail`
/// fraction of the trace.
pub fn settling_batch(trace: &[f64], band: f64, tail: f64) -> usize {
    let n = trace.len();
    if n == 0 {
        return 0;
    }
    let tail_len = ((n as f64 * tail).ceil() as usize).clamp(1, n);
    let reference = mean(&trace[n - tail_len..]);
    let tol = band * reference.abs();
    let mut settled = n;
    for k in (0..n).rev() {
        if (trace[k] - reference).abs() > tol || !trace[k].is_finite() {
            break;
        }
        settled = k;
    }
    settled + 1
}

/// First batch (1-based) at which the trace comes within `band·|ref|` of the
/// tail reference used by [`settling_batch`]. Unlike settling, a late
/// Monte-Carlo excursion does not move it.
pub fn first_passage_batch(trace: &[f64], band: f64, tail: f64) -> usize {
    let n = trace.len();
    if n == 0 {
        return 0;
    }
    let tail_len = ((n as f64 * tail).ceil() as usize).clamp(1, n);
    let reference = mean(&trace[n - tail_len..]);
    let tol = band * reference.abs();
    trace.iter().position(|v| (v - reference).abs() <= tol).map_or(n, |k| k + 1)
}

/// First batch after which the ensemble-mean estimate stays within `band`
/// (relative) of its value at the final batch.
pub fn mean_convergence_batch(mean_trace: &[f64], band: f64) -> usize {
    let Some(&last) = mean_trace.last() else { return 0 };
    let tol = band * last.abs();
    let mut settled = mean_trace.len();
    for k in (0..mean_trace.len()).rev() {
        if (mean_trace[k] - last).abs() > tol || !mean_trace[k].is_finite() {
            break;
        }
        settled = k;
    }
    settled + 1
}

/// Steady-state normalized SDE over the final `tail` fraction of batches,
/// with its standard error from the spread of per-run mean squared errors.
pub fn steady_state_sde(runs: &[Vec<f64>], r_true: f64, tail: f64) -> (f64, f64) {
    let n = runs.first().map_or(0, Vec::len);
    let tail_len = ((n as f64 * tail).ceil() as usize).clamp(1, n.max(1));
    let per_run: Vec<f64> = runs
        .iter()
        .map(|run| {
            let w: Vec<f64> =
                run[n - tail_len..].iter().filter(|v| v.is_finite()).map(|v| (v - r_true).powi(2)).collect();
            mean(&w)
        })
        .filter(|v| v.is_finite())
        .collect();
    let mse = mean(&per_run);
    let sde = mse.sqrt();
    let se = standard_error(&per_run) / (2.0 * sde);
    (sde / r_true * 100.0, se / r_true * 100.0)
}

/// Convergence time of the SDE trace (first passage into the band around its
/// terminal level) and its bootstrap standard error over resampled runs.
pub fn sde_convergence_with_se(
    runs: &[Vec<f64>],
    r_true: f64,
    band: f64,
    tail: f64,
    resamples: usize,
    seed: u64,
) -> (usize, f64) {
    let point = first_passage_batch(&sde_trace(runs, r_true), band, tail);
    let m = runs.len();
    if m < 2 || resamples < 2 {
        return (point, 0.0);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut idx = vec![0usize; m];
    let samples: Vec<f64> = (0..resamples)
        .map(|_| {
            idx.iter_mut().for_each(|i| *i = rng.random_range(0..m));
            first_passage_batch(&sde_trace_indexed(runs, r_true, Some(&idx)), band, tail) as f64
        })
        .collect();
    let mu = mean(&samples);
    let sd = (samples.iter().map(|s| (s - mu).powi(2)).sum::<f64>() / (resamples - 1) as f64).sqrt();
    (point, sd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bias_examples() {
        assert_eq!(normalized_bias(&[0.25; 4], 0.25).unwrap(), 0.0);
        assert_abs_diff_eq!(normalized_bias(&[0.3, 0.2], 0.25).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(normalized_bias(&[0.228; 3], 0.25).unwrap(), -8.8, epsilon = 1e-12);
        assert!(normalized_bias(&[], 0.25).is_err());
        assert!(normalized_bias(&[0.1], 0.0).is_err());
    }

    #[test]
    fn sde_examples() {
        assert_eq!(normalized_sde(&[0.25; 4], 0.25).unwrap(), 0.0);
        assert_abs_diff_eq!(normalized_sde(&[0.3, 0.2], 0.25).unwrap(), 20.0, epsilon = 1e-12);
        // single run: |R̂ − R|/R·100
        assert_abs_diff_eq!(normalized_sde(&[0.26], 0.25).unwrap(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn settling_detects_transient() {
        let trace: Vec<f64> = (0..100).map(|k| 1.0 + 10.0 * (-(k as f64) / 5.0).exp()).collect();
        let k = settling_batch(&trace, 0.1, 0.1);
        // 10·e^{-k/5} ≤ 0.1 ⇒ k ≥ 5·ln(100) ≈ 23.03, so the first settled index is 24 (batch 25)
        assert_eq!(k, 25);
        assert_eq!(settling_batch(&[1.0; 10], 0.01, 0.1), 1);
    }

    #[test]
    fn first_passage_ignores_late_excursions() {
        let mut trace: Vec<f64> = (0..100).map(|k| 1.0 + 10.0 * (-(k as f64) / 5.0).exp()).collect();
        assert_eq!(first_passage_batch(&trace, 0.1, 0.1), 25);
        trace[80] = 1.5;
        assert_eq!(first_passage_batch(&trace, 0.1, 0.1), 25);
        assert_eq!(settling_batch(&trace, 0.1, 0.1), 82);
    }

    #[test]
    fn mean_convergence_uses_final_value() {
        let trace = [0.0, 0.1, 0.2, 0.246, 0.249, 0.25];
        assert_eq!(mean_convergence_batch(&trace, 0.02), 4);
    }

    #[test]
    fn sde_trace_skips_cold_runs() {
        let runs = vec![vec![f64::NAN, 0.3], vec![0.2, 0.2]];
        let t = sde_trace(&runs, 0.25);
        assert_abs_diff_eq!(t[0], 20.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t[1], 20.0, epsilon = 1e-12);
    }
}
