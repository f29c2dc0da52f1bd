//! Streaming estimators over blocks: RLS, recursive TLS with fading memory and
//! information gating, the total Kalman filter (TKF) and the posterior CRLB
//! recursion.
//!
//! Every step borrows its state mutably; one state belongs to one stream.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::batch::{normal_matrix, tls_from_information, Diagnostics, Estimate, Method, NoiseCovariance};
use crate::error::{Error, Result};
use crate::linalg::{eig_sym, invert_spd, Cholesky, Matrix, SymMatrix};

fn check_dims(a: &Matrix, z: &[f64], n: usize) -> Result<()> {
    if a.rows() != z.len() {
        return Err(Error::InvalidArgument(format!("model has {} rows but the measurement has {}", a.rows(), z.len())));
    }
    if a.cols() != n {
        return Err(Error::InvalidArgument(format!("model has {} columns, state has {n}", a.cols())));
    }
    Ok(())
}

fn numerical(batch: usize, e: Error) -> Error {
    Error::NumericalFailure { batch, detail: e.to_string() }
}

/// `AᵀΣ⁻¹A` for one block, computed from the measured model. Only an
/// approximate guide to the information a block carries.
pub fn info_content(a: &Matrix, sigma: &NoiseCovariance) -> Result<SymMatrix> {
    normal_matrix(a, sigma)
}

/// Recursive least squares in information form.
#[derive(Clone, Debug, PartialEq)]
pub struct RlsState {
    pub b_hat: Vec<f64>,
    /// `P⁻¹`.
    pub info: SymMatrix,
    pub batch_index: usize,
}

/// Zero estimate with covariance `p0·I`.
pub fn rls_init(n: usize, p0: f64) -> Result<RlsState> {
    if n == 0 {
        return Err(Error::InvalidArgument("parameter dimension must be positive".into()));
    }
    if !(p0 > 0.0) || !p0.is_finite() {
        return Err(Error::InvalidArgument(format!("initial covariance scale must be positive, got {p0}")));
    }
    Ok(RlsState { b_hat: vec![0.0; n], info: SymMatrix::identity(n).scale(1.0 / p0), batch_index: 0 })
}

impl RlsState {
    /// One block update.
    ///
    /// `P'⁻¹ = P⁻¹ + AᵀΣ⁻¹A`, then `b̂' = b̂ + W(z − A·b̂)` with the gain
    /// `W = P'·AᵀΣ⁻¹`, which equals `P·Aᵀ(A·P·Aᵀ + Σ)⁻¹` by the matrix
    /// inversion lemma.
    pub fn step(&mut self, a: &Matrix, z: &[f64], sigma: &NoiseCovariance) -> Result<Estimate> {
        let n = self.b_hat.len();
        check_dims(a, z, n)?;
        let batch = self.batch_index + 1;
        let weighted = sigma.solve(a)?;
        let info = self.info.add(&SymMatrix::new(a.t_matmul(&weighted)?)?);
        let cov = invert_spd(&info).map_err(|e| numerical(batch, e))?;

        let pred = a.matmul(&Matrix::column(&self.b_hat))?;
        let resid: Vec<f64> = z.iter().zip(pred.as_slice()).map(|(z, p)| z - p).collect();
        let score = weighted.t_matmul(&Matrix::column(&resid))?;
        let delta = cov.as_matrix().matmul(&score)?;
        let b_hat: Vec<f64> = self.b_hat.iter().zip(delta.as_slice()).map(|(b, d)| b + d).collect();
        if b_hat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure { batch, detail: "non-finite RLS estimate".into() });
        }

        self.b_hat = b_hat.clone();
        self.info = info;
        self.batch_index = batch;
        Ok(Estimate {
            value: b_hat,
            covariance: cov,
            method: Method::Rls,
            batch_index: batch,
            diagnostics: Diagnostics::default(),
        })
    }
}

/// When a block counts as too uninformative for the TLS update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "value", rename_all = "snake_case")]
pub enum Gate {
    Off,
    /// Gate when the smallest eigenvalue of `INFO(κ)` is below this value.
    Absolute(f64),
    /// Gate when `INFO(κ)` is below this fraction of the median over earlier blocks.
    Relative(f64),
}

impl Default for Gate {
    fn default() -> Self {
        Gate::Relative(0.05)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Ordered(f64);

impl Eq for Ordered {}

impl PartialOrd for Ordered {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ordered {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Streaming median over two heaps.
#[derive(Clone, Debug, Default)]
struct RunningMedian {
    low: BinaryHeap<Ordered>,
    high: BinaryHeap<Reverse<Ordered>>,
}

impl RunningMedian {
    fn push(&mut self, v: f64) {
        match self.low.peek() {
            Some(top) if v > top.0 => self.high.push(Reverse(Ordered(v))),
            _ => self.low.push(Ordered(v)),
        }
        if self.low.len() > self.high.len() + 1 {
            let x = self.low.pop().expect("non-empty");
            self.high.push(Reverse(x));
        } else if self.high.len() > self.low.len() {
            let Reverse(x) = self.high.pop().expect("non-empty");
            self.low.push(x);
        }
    }

    fn median(&self) -> Option<f64> {
        let lo = self.low.peek()?.0;
        if self.low.len() > self.high.len() {
            Some(lo)
        } else {
            Some(0.5 * (lo + self.high.peek().expect("balanced heaps").0 .0))
        }
    }
}

/// Recursive TLS with fading memory.
#[derive(Clone, Debug)]
pub struct RtlsState {
    /// Augmented information `R_κ`, ordered `[A z]`.
    pub info_aug: SymMatrix,
    pub lambda: f64,
    pub gate: Gate,
    pub last_estimate: Option<Estimate>,
    pub batch_index: usize,
    history: RunningMedian,
}

impl RtlsState {
    /// Cold state with zero information.
    pub fn new(n: usize, lambda: f64, gate: Gate) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("parameter dimension must be positive".into()));
        }
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::InvalidArgument(format!("forgetting factor must lie in (0, 1], got {lambda}")));
        }
        match gate {
            Gate::Absolute(v) | Gate::Relative(v) if !(v >= 0.0) || !v.is_finite() => {
                return Err(Error::InvalidArgument(format!("gate threshold must be non-negative, got {v}")))
            }
            _ => {}
        }
        Ok(Self {
            info_aug: SymMatrix::zeros(n + 1),
            lambda,
            gate,
            last_estimate: None,
            batch_index: 0,
            history: RunningMedian::default(),
        })
    }

    pub fn n(&self) -> usize {
        self.info_aug.dim() - 1
    }

    pub fn is_cold(&self) -> bool {
        self.last_estimate.is_none()
    }

    fn gated(&mut self, info: f64) -> bool {
        let gated = match self.gate {
            Gate::Off => false,
            Gate::Absolute(t) => info < t,
            Gate::Relative(f) => self.history.median().is_some_and(|med| info < f * med),
        };
        self.history.push(info);
        gated
    }

    fn hold(&self, batch: usize, gated: bool) -> Result<Estimate> {
        let mut e = self.last_estimate.clone().ok_or(Error::ColdStart { batch })?;
        e.batch_index = batch;
        e.diagnostics.gated = gated;
        e.diagnostics.degenerate = !gated;
        Ok(e)
    }

    /// One block update. Gated blocks leave the information matrix untouched and
    /// return the previous estimate flagged `gated`; a degenerate eigenproblem
    /// returns it flagged `degenerate`. Without a previous estimate both yield
    /// [`Error::ColdStart`].
    pub fn step(&mut self, a: &Matrix, z: &[f64], sigma: &NoiseCovariance) -> Result<Estimate> {
        let n = self.n();
        check_dims(a, z, n)?;
        let m = a.rows();
        if m < 2 {
            return Err(Error::InvalidArgument("recursive TLS needs at least two rows per block".into()));
        }
        let batch = self.batch_index + 1;
        self.batch_index = batch;

        let info = info_content(a, sigma)?;
        let level = if n == 1 { info.get(0, 0) } else { eig_sym(&info)?.smallest() };
        if self.gated(level) {
            return self.hold(batch, true);
        }

        let h = a.hstack(&Matrix::column(z))?;
        self.info_aug = self.info_aug.scale(self.lambda).add(&h.gram().scale(1.0 / (m - 1) as f64));

        match tls_from_information(&self.info_aug, n) {
            Ok(mut e) => {
                e.method = Method::Rtls;
                e.batch_index = batch;
                self.last_estimate = Some(e.clone());
                Ok(e)
            }
            Err(Error::NonUniqueSolution { .. } | Error::VerticalSolution) => self.hold(batch, false),
            Err(e) => Err(numerical(batch, e)),
        }
    }
}

/// Total Kalman filter: a random-walk parameter observed through RTLS estimates.
#[derive(Clone, Debug)]
pub struct TkfState {
    pub b_post: Vec<f64>,
    pub p_post: SymMatrix,
    /// Process noise `Q = γ·I`.
    pub q: SymMatrix,
    pub inner: RtlsState,
    pub batch_index: usize,
}

impl TkfState {
    /// Zero estimate with covariance `p0·I` and `Q = γ·I`.
    pub fn new(p0: f64, gamma: f64, inner: RtlsState) -> Result<Self> {
        if !(p0 > 0.0) || !p0.is_finite() {
            return Err(Error::InvalidArgument(format!("initial covariance scale must be positive, got {p0}")));
        }
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidArgument(format!("process noise γ must be non-negative, got {gamma}")));
        }
        let n = inner.n();
        Ok(Self {
            b_post: vec![0.0; n],
            p_post: SymMatrix::identity(n).scale(p0),
            q: SymMatrix::identity(n).scale(gamma),
            inner,
            batch_index: 0,
        })
    }

    /// Predict, run the inner RTLS step, and fuse its estimate as a direct
    /// measurement of the parameter. Gated or degenerate inner steps leave the
    /// prediction in place.
    pub fn step(&mut self, a: &Matrix, z: &[f64], sigma: &NoiseCovariance) -> Result<Estimate> {
        let batch = self.batch_index + 1;
        self.batch_index = batch;
        let b_pred = self.b_post.clone();
        let p_pred = self.p_post.add(&self.q);
        self.b_post = b_pred.clone();
        self.p_post = p_pred.clone();

        let meas = self.inner.step(a, z, sigma)?;
        if meas.diagnostics.gated || meas.diagnostics.degenerate {
            return Ok(Estimate {
                value: b_pred,
                covariance: p_pred,
                method: Method::Tkf,
                batch_index: batch,
                diagnostics: Diagnostics {
                    gated: meas.diagnostics.gated,
                    degenerate: meas.diagnostics.degenerate,
                    ..Diagnostics::default()
                },
            });
        }

        let n = b_pred.len();
        let innovation: Vec<f64> = meas.value.iter().zip(&b_pred).map(|(m, p)| m - p).collect();
        let s = meas.covariance.add(&p_pred);
        let s_inv = invert_spd(&s).map_err(|e| numerical(batch, e))?;
        let gain = p_pred.as_matrix().matmul(s_inv.as_matrix())?;
        let corr = gain.matmul(&Matrix::column(&innovation))?;
        let b_post: Vec<f64> = (0..n).map(|i| b_pred[i] + corr[(i, 0)]).collect();
        let p_post = p_pred.sub(&s.congruence(&gain));

        self.b_post = b_post.clone();
        self.p_post = p_post.clone();
        Ok(Estimate {
            value: b_post,
            covariance: p_post,
            method: Method::Tkf,
            batch_index: batch,
            diagnostics: Diagnostics {
                clamped_covariance: meas.diagnostics.clamped_covariance,
                eigen_clamped: meas.diagnostics.eigen_clamped,
                min_eigenvalue: meas.diagnostics.min_eigenvalue,
                ..Diagnostics::default()
            },
        })
    }
}

/// Posterior CRLB state: diffuse until the first full-rank block arrives.
#[derive(Clone, Debug, PartialEq)]
pub enum BoundCovariance {
    Diffuse { n: usize },
    Finite(SymMatrix),
}

impl BoundCovariance {
    pub fn scalar(&self) -> f64 {
        match self {
            BoundCovariance::Diffuse { .. } => f64::INFINITY,
            BoundCovariance::Finite(p) => p.get(0, 0),
        }
    }
}

/// One step of the PCRLB recursion on the noiseless model:
/// `S = Σ + A·P·Aᵀ`, `W = P·Aᵀ·S⁻¹`, `P' = P − W·S·Wᵀ`.
///
/// From a diffuse state the first full-rank block gives `P' = (AᵀΣ⁻¹A)⁻¹`.
pub fn pcrlb_step(p: &BoundCovariance, a_true: &Matrix, sigma: &NoiseCovariance) -> Result<BoundCovariance> {
    match p {
        BoundCovariance::Diffuse { n } => {
            if a_true.cols() != *n {
                return Err(Error::InvalidArgument("model width does not match the bound".into()));
            }
            let info = normal_matrix(a_true, sigma)?;
            match invert_spd(&info) {
                Ok(cov) => Ok(BoundCovariance::Finite(cov)),
                Err(Error::SingularMatrix { .. }) => Ok(p.clone()),
                Err(e) => Err(e),
            }
        }
        BoundCovariance::Finite(p) => {
            if a_true.cols() != p.dim() {
                return Err(Error::InvalidArgument("model width does not match the bound".into()));
            }
            let ap = a_true.matmul(p.as_matrix())?;
            let s = sigma.add_to(&SymMatrix::new(ap.matmul(&a_true.transpose())?)?)?;
            // W = P·Aᵀ·S⁻¹ = (S⁻¹·A·P)ᵀ since S and P are symmetric
            let gain = Cholesky::new(&s)?.solve(&ap)?.transpose();
            let next = p.sub(&s.congruence(&gain));
            Ok(BoundCovariance::Finite(next))
        }
    }
}
