//! Monte-Carlo driver for the three experiment families.
//!
//! Runs are independent tasks seeded from `(seed, point, run)`. Results are
//! gathered in run order, so tables do not depend on the schedule.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::batch::{crlb_batch, ls_estimate, tls_estimate, Method, NoiseCovariance};
use crate::config::{ExperimentConfig, ExperimentKind, NoiseModel, SigmaICoupling};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::metrics;
use crate::recursive::{pcrlb_step, rls_init, BoundCovariance, RlsState, RtlsState, TkfState};
use crate::signals::{gen_constant_profile, snr_dynamic, synthesize_measurements, CurrentProfile, NoiseSpec};

/// How runs are scheduled. `Parallel` falls back to sequential when the crate
/// is built without the `parallel` feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// `f(0..n)` in index order. On failure the error of the lowest index wins.
pub fn map_runs<T, F>(exec: Execution, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let results: Vec<Result<T>> = match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
        _ => (0..n).map(f).collect(),
    };
    results.into_iter().collect()
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of run `run` at grid point `point`.
pub fn run_seed(base: u64, point: usize, run: usize) -> u64 {
    base ^ splitmix64(((point as u64) << 32) | run as u64)
}

fn expect_kind(cfg: &ExperimentConfig, kind: ExperimentKind) -> Result<()> {
    cfg.validate()?;
    if cfg.experiment != kind {
        return Err(Error::Config(format!("config describes {:?}, not {:?}", cfg.experiment, kind)));
    }
    Ok(())
}

// ---------------------------------------------------------------- SNR sweep

/// One `(SNR, m, estimator)` cell of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRecord {
    pub snr_db: f64,
    pub m: usize,
    pub estimator: Method,
    pub sigma_v: f64,
    pub sigma_i: f64,
    pub mean_estimate: f64,
    pub norm_bias_pct: f64,
    /// Standard error of `norm_bias_pct`.
    pub bias_se_pct: f64,
    pub norm_sde_pct: f64,
    pub norm_sqrt_crlb_pct: f64,
    /// Runs that produced an estimate.
    pub n_runs: usize,
    /// Per-run estimates in run order; `NaN` where the estimator had no unique solution.
    pub estimates: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub r_true: f64,
    pub runs: usize,
    pub records: Vec<SweepRecord>,
}

impl SweepTable {
    pub fn find(&self, snr_db: f64, m: usize, estimator: Method) -> Option<&SweepRecord> {
        self.records.iter().find(|r| r.snr_db == snr_db && r.m == m && r.estimator == estimator)
    }
}

fn sweep_sigma_i(cfg: &ExperimentConfig, sigma_v: f64) -> f64 {
    match (cfg.noise_model, cfg.sigma_i) {
        (NoiseModel::Ideal, _) => 0.0,
        (NoiseModel::Noisy, Some(s)) => s,
        (NoiseModel::Noisy, None) => match cfg.sigma_i_coupling {
            SigmaICoupling::Equal => sigma_v,
            SigmaICoupling::VoltageEquivalent => sigma_v / cfg.r_true,
        },
    }
}

pub fn run_snr_sweep(cfg: &ExperimentConfig) -> Result<SweepTable> {
    run_snr_sweep_with(cfg, Execution::default())
}

pub fn run_snr_sweep_with(cfg: &ExperimentConfig, exec: Execution) -> Result<SweepTable> {
    expect_kind(cfg, ExperimentKind::SnrSweep)?;
    let r = cfg.r_true;
    let mut records = Vec::new();
    let mut point = 0usize;
    for m in cfg.block_lengths() {
        let profile = gen_constant_profile(cfg.current_a, m, 1, cfg.dt)?;
        let crlb = crlb_batch(profile.currents(), 1.0);
        for &snr in &cfg.snr_grid_db {
            let sigma_v = cfg.snr_convention.sigma_v(snr, cfg.current_a, r)?;
            let sigma_i = sweep_sigma_i(cfg, sigma_v);
            let noise = NoiseSpec::new(sigma_v, sigma_i, cfg.seed)?;
            let sigma = NoiseCovariance::isotropic(sigma_v)?;
            let estimators = &cfg.estimators;
            let p = point;
            let per_run: Vec<Vec<f64>> = map_runs(exec, cfg.runs, |j| {
                let blocks = synthesize_measurements(&profile, &noise.with_seed(run_seed(cfg.seed, p, j)), r, m)?;
                let block = &blocks[0];
                let a = block.model();
                let z = block.observation();
                estimators
                    .iter()
                    .map(|method| match method {
                        Method::Ls => ls_estimate(&a, z, &sigma).map(|e| e.scalar()),
                        Method::Tls => match tls_estimate(&a, z) {
                            Ok(e) => Ok(e.scalar()),
                            Err(Error::NonUniqueSolution { .. } | Error::VerticalSolution) => Ok(f64::NAN),
                            Err(e) => Err(e),
                        },
                        other => Err(Error::Config(format!("{other} is not a batch estimator"))),
                    })
                    .collect()
            })?;
            point += 1;

            // crlb_batch scales with σ_v²
            let sqrt_crlb = (crlb * sigma_v * sigma_v).sqrt() / r * 100.0;
            for (e, &method) in cfg.estimators.iter().enumerate() {
                let estimates: Vec<f64> = per_run.iter().map(|v| v[e]).collect();
                let valid: Vec<f64> = estimates.iter().copied().filter(|v| v.is_finite()).collect();
                let (mean, bias, se, sde) = if valid.is_empty() {
                    (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
                } else {
                    (
                        metrics::mean(&valid),
                        metrics::normalized_bias(&valid, r)?,
                        metrics::normalized_bias_se(&valid, r)?,
                        metrics::normalized_sde(&valid, r)?,
                    )
                };
                records.push(SweepRecord {
                    snr_db: snr,
                    m,
                    estimator: method,
                    sigma_v,
                    sigma_i,
                    mean_estimate: mean,
                    norm_bias_pct: bias,
                    bias_se_pct: se,
                    norm_sde_pct: sde,
                    norm_sqrt_crlb_pct: sqrt_crlb,
                    n_runs: valid.len(),
                    estimates,
                });
            }
        }
    }
    Ok(SweepTable { r_true: r, runs: cfg.runs, records })
}

// ------------------------------------------------------ recursive experiments

/// Per-batch ensemble statistics of one recursive estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorTrace {
    pub method: Method,
    pub mean: Vec<f64>,
    pub norm_bias_pct: Vec<f64>,
    /// Standard error of the normalized bias.
    pub bias_se_pct: Vec<f64>,
    pub norm_sde_pct: Vec<f64>,
    /// Runs with an estimate at this batch (cold filters are excluded).
    pub n_valid: Vec<usize>,
    /// Fraction of runs whose block was gated.
    pub gated_frac: Vec<f64>,
    /// Per-run estimates, `[run][batch]`.
    pub runs: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceTable {
    pub r_true: f64,
    pub sigma_v: f64,
    pub sigma_i: f64,
    pub m: usize,
    pub batch_index: Vec<usize>,
    /// Time of the last sample in each batch.
    pub time_s: Vec<f64>,
    /// RMS of the true current over each batch.
    pub rms_current: Vec<f64>,
    /// Scalar PCRLB (Ω²); `+∞` while diffuse.
    pub pcrlb: Vec<f64>,
    pub norm_sqrt_pcrlb_pct: Vec<f64>,
    /// Per-batch SNR of the RMS current (dynamic runs only).
    pub snr_db: Option<Vec<f64>>,
    pub estimators: Vec<EstimatorTrace>,
    pub profile: CurrentProfile,
}

impl TraceTable {
    pub fn estimator(&self, method: Method) -> Option<&EstimatorTrace> {
        self.estimators.iter().find(|e| e.method == method)
    }

    pub fn n_batches(&self) -> usize {
        self.batch_index.len()
    }
}

enum Filter {
    Rls(RlsState),
    Rtls(RtlsState),
    Tkf(Box<TkfState>),
}

impl Filter {
    fn new(method: Method, cfg: &ExperimentConfig) -> Result<Self> {
        Ok(match method {
            Method::Rls => Filter::Rls(rls_init(1, cfg.p0)?),
            Method::Rtls => Filter::Rtls(RtlsState::new(1, cfg.lambda, cfg.gate())?),
            Method::Tkf => {
                Filter::Tkf(Box::new(TkfState::new(cfg.p0, cfg.gamma, RtlsState::new(1, cfg.lambda, cfg.gate())?)?))
            }
            other => return Err(Error::Config(format!("{other} is not a recursive estimator"))),
        })
    }

    /// Estimate and gated flag; `NaN` while cold.
    fn step(&mut self, a: &Matrix, z: &[f64], sigma: &NoiseCovariance) -> Result<(f64, bool)> {
        let out = match self {
            Filter::Rls(s) => s.step(a, z, sigma),
            Filter::Rtls(s) => s.step(a, z, sigma),
            Filter::Tkf(s) => s.step(a, z, sigma),
        };
        match out {
            Ok(e) => Ok((e.scalar(), e.diagnostics.gated)),
            Err(Error::ColdStart { .. }) => Ok((f64::NAN, true)),
            Err(e) => Err(e),
        }
    }
}

struct RunTrace {
    values: Vec<Vec<f64>>,
    gated: Vec<Vec<bool>>,
}

fn run_once(
    cfg: &ExperimentConfig,
    profile: &CurrentProfile,
    noise: &NoiseSpec,
    sigma: &NoiseCovariance,
) -> Result<RunTrace> {
    let blocks = synthesize_measurements(profile, noise, cfg.r_true, cfg.m)?;
    let mut filters: Vec<Filter> = cfg.estimators.iter().map(|&m| Filter::new(m, cfg)).collect::<Result<_>>()?;
    let n = blocks.len();
    let mut values = vec![Vec::with_capacity(n); filters.len()];
    let mut gated = vec![Vec::with_capacity(n); filters.len()];
    for block in &blocks {
        let a = block.model();
        for (e, f) in filters.iter_mut().enumerate() {
            let (v, g) = f.step(&a, block.observation(), sigma)?;
            values[e].push(v);
            gated[e].push(g);
        }
    }
    Ok(RunTrace { values, gated })
}

/// PCRLB over the noiseless profile, one value per batch.
pub fn pcrlb_trace(profile: &CurrentProfile, m: usize, sigma_v: f64) -> Result<Vec<f64>> {
    let sigma = NoiseCovariance::isotropic(sigma_v)?;
    let mut p = BoundCovariance::Diffuse { n: 1 };
    profile
        .currents()
        .chunks(m)
        .map(|chunk| {
            p = pcrlb_step(&p, &Matrix::column(chunk), &sigma)?;
            Ok(p.scalar())
        })
        .collect()
}

fn aggregate(method: Method, runs: Vec<Vec<f64>>, gated: Vec<Vec<bool>>, r: f64) -> Result<EstimatorTrace> {
    let n = runs.first().map_or(0, Vec::len);
    let n_runs = runs.len();
    let mut t = EstimatorTrace {
        method,
        mean: Vec::with_capacity(n),
        norm_bias_pct: Vec::with_capacity(n),
        bias_se_pct: Vec::with_capacity(n),
        norm_sde_pct: Vec::with_capacity(n),
        n_valid: Vec::with_capacity(n),
        gated_frac: Vec::with_capacity(n),
        runs: Vec::new(),
    };
    for k in 0..n {
        let col: Vec<f64> = runs.iter().map(|r| r[k]).filter(|v| v.is_finite()).collect();
        if col.is_empty() {
            t.mean.push(f64::NAN);
            t.norm_bias_pct.push(f64::NAN);
            t.bias_se_pct.push(f64::NAN);
            t.norm_sde_pct.push(f64::NAN);
        } else {
            t.mean.push(metrics::mean(&col));
            t.norm_bias_pct.push(metrics::normalized_bias(&col, r)?);
            t.bias_se_pct.push(metrics::normalized_bias_se(&col, r)?);
            t.norm_sde_pct.push(metrics::normalized_sde(&col, r)?);
        }
        t.n_valid.push(col.len());
        t.gated_frac.push(gated.iter().filter(|g| g[k]).count() as f64 / n_runs as f64);
    }
    t.runs = runs;
    Ok(t)
}

fn run_traces(cfg: &ExperimentConfig, exec: Execution, dynamic: bool) -> Result<TraceTable> {
    let profile = cfg.build_profile()?;
    let r = cfg.r_true;
    let m = cfg.m;
    let sigma_v = cfg.sigma_v.ok_or_else(|| Error::Config("sigma_v missing".into()))?;
    let sigma_i = cfg.sigma_i.ok_or_else(|| Error::Config("sigma_i missing".into()))?;
    let noise = NoiseSpec::new(sigma_v, sigma_i, cfg.seed)?;
    let sigma = NoiseCovariance::isotropic(sigma_v)?;

    let per_run =
        map_runs(exec, cfg.runs, |j| run_once(cfg, &profile, &noise.with_seed(run_seed(cfg.seed, 0, j)), &sigma))?;

    let n_batches = profile.len() / m;
    let batch_index: Vec<usize> = (1..=n_batches).collect();
    let time_s: Vec<f64> = batch_index.iter().map(|&k| profile.time(k * m - 1)).collect();
    let rms_current: Vec<f64> =
        profile.currents().chunks(m).map(|c| (c.iter().map(|i| i * i).sum::<f64>() / c.len() as f64).sqrt()).collect();
    let pcrlb = pcrlb_trace(&profile, m, sigma_v)?;
    let norm_sqrt_pcrlb_pct = pcrlb.iter().map(|p| p.sqrt() / r * 100.0).collect();
    let snr_db = if dynamic {
        Some(rms_current.iter().map(|&i| snr_dynamic(i, r, sigma_v, sigma_i)).collect::<Result<Vec<_>>>()?)
    } else {
        None
    };

    let mut per_run = per_run;
    let estimators = cfg
        .estimators
        .iter()
        .enumerate()
        .map(|(e, &method)| {
            let runs: Vec<Vec<f64>> = per_run.iter_mut().map(|t| std::mem::take(&mut t.values[e])).collect();
            let gated: Vec<Vec<bool>> = per_run.iter_mut().map(|t| std::mem::take(&mut t.gated[e])).collect();
            aggregate(method, runs, gated, r)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(TraceTable {
        r_true: r,
        sigma_v,
        sigma_i,
        m,
        batch_index,
        time_s,
        rms_current,
        pcrlb,
        norm_sqrt_pcrlb_pct,
        snr_db,
        estimators,
        profile,
    })
}

pub fn run_recursive_compare(cfg: &ExperimentConfig) -> Result<TraceTable> {
    run_recursive_compare_with(cfg, Execution::default())
}

pub fn run_recursive_compare_with(cfg: &ExperimentConfig, exec: Execution) -> Result<TraceTable> {
    expect_kind(cfg, ExperimentKind::RecursiveCompare)?;
    run_traces(cfg, exec, false)
}

pub fn run_dynamic_snr(cfg: &ExperimentConfig) -> Result<TraceTable> {
    run_dynamic_snr_with(cfg, Execution::default())
}

pub fn run_dynamic_snr_with(cfg: &ExperimentConfig, exec: Execution) -> Result<TraceTable> {
    expect_kind(cfg, ExperimentKind::DynamicSnr)?;
    run_traces(cfg, exec, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::load_recipe;

    fn small(name: &str, runs: usize) -> ExperimentConfig {
        let mut cfg = load_recipe(name).unwrap();
        cfg.runs = runs;
        cfg
    }

    #[test]
    fn run_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for p in 0..4 {
            for j in 0..1000 {
                assert!(seen.insert(run_seed(7, p, j)));
            }
        }
    }

    #[test]
    fn map_runs_keeps_order_and_first_error() {
        let v = map_runs(Execution::Parallel, 100, |j| Ok(j * 2)).unwrap();
        assert_eq!(v, (0..100).map(|j| j * 2).collect::<Vec<_>>());
        let err = map_runs(Execution::Parallel, 100, |j| {
            if j >= 40 {
                Err(Error::InvalidArgument(format!("{j}")))
            } else {
                Ok(j)
            }
        })
        .unwrap_err();
        assert_eq!(err.to_string(), Error::InvalidArgument("40".into()).to_string());
    }

    #[test]
    fn single_run_sde_is_absolute_error() {
        let mut cfg = small("fig2", 1);
        cfg.snr_grid_db = vec![20.0];
        let t = run_snr_sweep(&cfg).unwrap();
        let rec = &t.records[0];
        let expect = (rec.estimates[0] - 0.25).abs() / 0.25 * 100.0;
        assert!((rec.norm_sde_pct - expect).abs() < 1e-12);
    }

    #[test]
    fn schedule_does_not_change_results() {
        let cfg = small("fig4", 20);
        assert_eq!(
            run_snr_sweep_with(&cfg, Execution::Sequential).unwrap(),
            run_snr_sweep_with(&cfg, Execution::Parallel).unwrap()
        );
        let mut cfg = small("fig7", 5);
        cfg.n_blocks = 20;
        assert_eq!(
            run_recursive_compare_with(&cfg, Execution::Sequential).unwrap(),
            run_recursive_compare_with(&cfg, Execution::Parallel).unwrap()
        );
    }

    #[test]
    fn noiseless_traces_pinned_at_truth() {
        let mut cfg = small("fig7", 3);
        cfg.n_blocks = 10;
        cfg.sigma_i = Some(0.0);
        cfg.sigma_v = Some(1e-12);
        let t = run_recursive_compare(&cfg).unwrap();
        for e in &t.estimators {
            // the TKF prior at zero carries weight ~Σ_TLS/p0 ≈ 2.5e-7
            for &v in e.runs.iter().flatten() {
                assert!((v - 0.25).abs() < 1e-6, "{:?} {v}", e.method);
            }
        }
    }

    #[test]
    fn all_zero_profile_holds_cold() {
        let text = r#"{"experiment":"dynamic_snr","profile":"pulse","pulse_segments":[[50,0]],"m":50,
            "runs":2,"sigma_v":0.2,"sigma_i":0.2,"estimators":["RTLS","TKF"],"lambda":0.7}"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        let t = run_dynamic_snr(&cfg).unwrap();
        assert!(t.pcrlb.iter().all(|p| p.is_infinite()));
        assert!(t.snr_db.as_ref().unwrap().iter().all(|s| *s == f64::NEG_INFINITY));
        assert_eq!(t.n_batches(), 10);
    }

    #[test]
    fn wrong_experiment_kind_rejected() {
        let cfg = small("fig2", 1);
        assert!(matches!(run_recursive_compare(&cfg), Err(Error::Config(_))));
    }
}
