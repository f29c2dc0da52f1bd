//! One-shot estimators over a single block: LS, TLS and the batch CRLB.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eig_sym, invert_spd, Cholesky, Matrix, SymMatrix};

/// Relative floor for the TLS covariance matrix `AᵀA − λ_min·I`.
const TLS_COV_FLOOR: f64 = 1e-12;
/// `|V₂₂|` below this means the null vector lies in the model subspace.
const VERTICAL_TOL: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "LS")]
    Ls,
    #[serde(rename = "TLS")]
    Tls,
    #[serde(rename = "RLS")]
    Rls,
    #[serde(rename = "RTLS")]
    Rtls,
    #[serde(rename = "TKF")]
    Tkf,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Ls => "LS",
            Method::Tls => "TLS",
            Method::Rls => "RLS",
            Method::Rtls => "RTLS",
            Method::Tkf => "TKF",
        }
    }

    pub fn is_batch(self) -> bool {
        matches!(self, Method::Ls | Method::Tls)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics {
    /// TLS covariance was floored to stay positive definite.
    pub clamped_covariance: bool,
    /// Block fell below the information gate; the previous estimate was reused.
    pub gated: bool,
    /// Smallest eigenpair was not unique; the previous estimate was reused.
    pub degenerate: bool,
    /// Tiny negative Gram eigenvalues clamped to zero.
    pub eigen_clamped: usize,
    /// Smallest eigenvalue of the augmented information matrix (TLS family).
    pub min_eigenvalue: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub value: Vec<f64>,
    pub covariance: SymMatrix,
    pub method: Method,
    pub batch_index: usize,
    pub diagnostics: Diagnostics,
}

impl Estimate {
    /// First parameter; the resistance in the scalar model.
    pub fn scalar(&self) -> f64 {
        self.value[0]
    }

    pub fn variance(&self) -> f64 {
        self.covariance.get(0, 0)
    }
}

/// Measurement noise covariance `Σ`.
#[derive(Clone, Debug, PartialEq)]
pub enum NoiseCovariance {
    /// `σ²·I` of whatever dimension the block has.
    Isotropic {
        variance: f64,
    },
    Full(SymMatrix),
}

impl NoiseCovariance {
    pub fn isotropic(sigma: f64) -> Result<Self> {
        let variance = sigma * sigma;
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(Error::InvalidArgument(format!("noise covariance must be positive definite (σ = {sigma})")));
        }
        Ok(Self::Isotropic { variance })
    }

    pub fn full(sigma: SymMatrix) -> Result<Self> {
        Cholesky::new(&sigma).map_err(|_| Error::InvalidArgument("noise covariance is not SPD".into()))?;
        Ok(Self::Full(sigma))
    }

    fn check_dim(&self, m: usize) -> Result<()> {
        match self {
            NoiseCovariance::Full(s) if s.dim() != m => {
                Err(Error::InvalidArgument(format!("noise covariance is {0}x{0} but the block has {m} rows", s.dim())))
            }
            _ => Ok(()),
        }
    }

    /// `Σ⁻¹·B`.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        self.check_dim(b.rows())?;
        match self {
            NoiseCovariance::Isotropic { variance } => Ok(b.scale(1.0 / variance)),
            NoiseCovariance::Full(s) => Cholesky::new(s)?.solve(b),
        }
    }

    /// `Σ + S` for an m×m `S`.
    pub fn add_to(&self, s: &SymMatrix) -> Result<SymMatrix> {
        self.check_dim(s.dim())?;
        Ok(match self {
            NoiseCovariance::Isotropic { variance } => s.shift(*variance),
            NoiseCovariance::Full(full) => full.add(s),
        })
    }
}

/// `AᵀΣ⁻¹A`, the information carried by one block.
pub fn normal_matrix(a: &Matrix, sigma: &NoiseCovariance) -> Result<SymMatrix> {
    let w = sigma.solve(a)?;
    SymMatrix::new(a.t_matmul(&w)?)
}

fn check_block(a: &Matrix, z: &[f64]) -> Result<()> {
    if a.rows() != z.len() {
        return Err(Error::InvalidArgument(format!("model has {} rows but the measurement has {}", a.rows(), z.len())));
    }
    if a.cols() == 0 {
        return Err(Error::InvalidArgument("model has no columns".into()));
    }
    Ok(())
}

/// Weighted least squares `b̂ = (AᵀΣ⁻¹A)⁻¹AᵀΣ⁻¹z` with covariance `(AᵀΣ⁻¹A)⁻¹`.
pub fn ls_estimate(a: &Matrix, z: &[f64], sigma: &NoiseCovariance) -> Result<Estimate> {
    check_block(a, z)?;
    if a.rows() < a.cols() {
        return Err(Error::InvalidArgument(format!(
            "need at least as many rows ({}) as parameters ({})",
            a.rows(),
            a.cols()
        )));
    }
    let weighted = sigma.solve(a)?;
    let normal = SymMatrix::new(a.t_matmul(&weighted)?)?;
    let covariance = invert_spd(&normal).map_err(|e| match e {
        Error::SingularMatrix { eigenvalue, .. } => Error::SingularModel(format!(
            "normal matrix AᵀΣ⁻¹A is singular (eigenvalue {eigenvalue:e}); the block has no excitation"
        )),
        other => other,
    })?;
    let rhs = weighted.t_matmul(&Matrix::column(z))?;
    let value = covariance.as_matrix().matmul(&rhs)?.col(0);
    Ok(Estimate { value, covariance, method: Method::Ls, batch_index: 1, diagnostics: Diagnostics::default() })
}

/// Total least squares on `H = [A z]` (model columns first).
pub fn tls_estimate(a: &Matrix, z: &[f64]) -> Result<Estimate> {
    check_block(a, z)?;
    let n = a.cols();
    if a.rows() < n + 1 {
        return Err(Error::InvalidArgument(format!(
            "TLS needs at least {} rows for {n} parameters, got {}",
            n + 1,
            a.rows()
        )));
    }
    let h = a.hstack(&Matrix::column(z))?;
    let mut est = tls_from_information(&h.gram(), n)?;
    est.method = Method::Tls;
    Ok(est)
}

/// TLS solution from an augmented information matrix ordered `[A z]`.
///
/// The estimate is `−V₁₂/V₂₂` from the eigenvector of the smallest eigenvalue;
/// the covariance is `(R_AA − λ_min·I)⁻¹`, where `R_AA` is the leading n×n block
/// of the same information matrix.
pub fn tls_from_information(info_aug: &SymMatrix, n: usize) -> Result<Estimate> {
    if info_aug.dim() != n + 1 {
        return Err(Error::InvalidArgument(format!(
            "augmented information must be {0}x{0}, got {1}x{1}",
            n + 1,
            info_aug.dim()
        )));
    }
    let eig = eig_sym(info_aug)?;
    if eig.smallest_is_degenerate() {
        return Err(Error::NonUniqueSolution { gap: eig.smallest_gap() });
    }
    let null = eig.vector(n);
    let v22 = null[n];
    if v22.abs() < VERTICAL_TOL {
        return Err(Error::VerticalSolution);
    }
    let value: Vec<f64> = null[..n].iter().map(|v| -v / v22).collect();
    if value.iter().any(|v| !v.is_finite()) {
        return Err(Error::VerticalSolution);
    }
    let lambda_min = eig.smallest();

    let info_aa = info_aug.leading_block(n);
    let shifted = info_aa.shift(-lambda_min);
    let floor = TLS_COV_FLOOR * info_aa.frobenius();
    let shifted_eig = eig_sym(&shifted)?;
    let mut clamped = false;
    let inv_values: Vec<f64> = shifted_eig
        .values
        .iter()
        .map(|&l| {
            if l < floor || l <= 0.0 {
                clamped = true;
                1.0 / floor.max(f64::MIN_POSITIVE)
            } else {
                1.0 / l
            }
        })
        .collect();
    let cov = Matrix::from_fn(n, n, |r, c| {
        (0..n).map(|k| shifted_eig.vectors[(r, k)] * inv_values[k] * shifted_eig.vectors[(c, k)]).sum()
    });
    let covariance = SymMatrix::new(cov)?;

    Ok(Estimate {
        value,
        covariance,
        method: Method::Tls,
        batch_index: 1,
        diagnostics: Diagnostics {
            clamped_covariance: clamped,
            eigen_clamped: eig.clamped,
            min_eigenvalue: Some(lambda_min),
            ..Diagnostics::default()
        },
    })
}

/// `σ_v² / Σ i(k)²`; infinite for a block without excitation.
pub fn crlb_batch(true_current: &[f64], sigma_v: f64) -> f64 {
    let energy: f64 = true_current.iter().map(|i| i * i).sum();
    if energy == 0.0 {
        return f64::INFINITY;
    }
    sigma_v * sigma_v / energy
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn col(v: &[f64]) -> Matrix {
        Matrix::column(v)
    }

    fn iso(s: f64) -> NoiseCovariance {
        NoiseCovariance::isotropic(s).unwrap()
    }

    #[test]
    fn ls_noiseless_and_symmetric_noise() {
        let e = ls_estimate(&col(&[2.0, 2.0]), &[0.5, 0.5], &iso(0.01)).unwrap();
        assert_abs_diff_eq!(e.scalar(), 0.25, epsilon = 1e-15);
        let e = ls_estimate(&col(&[2.0, 2.0]), &[0.501, 0.499], &iso(0.01)).unwrap();
        assert_abs_diff_eq!(e.scalar(), 0.25, epsilon = 1e-15);
        let e = ls_estimate(&col(&[1.0, 2.0, 3.0]), &[2.0, 4.0, 6.0], &iso(1.0)).unwrap();
        assert_abs_diff_eq!(e.scalar(), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e.variance(), 1.0 / 14.0, epsilon = 1e-15);
    }

    #[test]
    fn ls_rejects_zero_current() {
        let err = ls_estimate(&col(&[0.0, 0.0, 0.0]), &[0.1, -0.1, 0.0], &iso(0.1)).unwrap_err();
        assert!(matches!(err, Error::SingularModel(_)), "{err}");
    }

    #[test]
    fn ls_full_covariance_matches_isotropic() {
        let a = col(&[1.0, 2.0, 1.5]);
        let z = [0.3, 0.4, 0.41];
        let full = NoiseCovariance::full(SymMatrix::identity(3).scale(0.04)).unwrap();
        let e1 = ls_estimate(&a, &z, &iso(0.2)).unwrap();
        let e2 = ls_estimate(&a, &z, &full).unwrap();
        assert_abs_diff_eq!(e1.scalar(), e2.scalar(), epsilon = 1e-14);
        assert_abs_diff_eq!(e1.variance(), e2.variance(), epsilon = 1e-14);
    }

    #[test]
    fn ls_two_parameters() {
        // z = 1.0·x + 0.5 exactly
        let a = Matrix::from_rows(&[&[1.0, 1.0], &[2.0, 1.0], &[3.0, 1.0]]).unwrap();
        let e = ls_estimate(&a, &[1.5, 2.5, 3.5], &iso(1.0)).unwrap();
        assert_abs_diff_eq!(e.value[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.value[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn tls_noiseless_recovers_r() {
        let e = tls_estimate(&col(&[1.0, 2.0]), &[0.25, 0.5]).unwrap();
        assert_abs_diff_eq!(e.scalar(), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(e.diagnostics.min_eigenvalue.unwrap(), 0.0, epsilon = 1e-15);
        assert_eq!(e.method, Method::Tls);
    }

    #[test]
    fn tls_rejects_degenerate_and_vertical() {
        // Gram matrix proportional to the identity: every direction is a null vector
        let err = tls_estimate(&col(&[1.0, 0.0]), &[0.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::NonUniqueSolution { .. }), "{err}");
        let err = tls_estimate(&col(&[0.0, 0.0, 0.0]), &[1.0, 2.0, 0.5]).unwrap_err();
        assert!(matches!(err, Error::VerticalSolution), "{err}");
        assert!(tls_estimate(&col(&[1.0]), &[0.25]).is_err());
    }

    #[test]
    fn tls_covariance_is_positive() {
        let e = tls_estimate(&col(&[1.9, 2.1, 2.05, 1.95]), &[0.52, 0.49, 0.5, 0.47]).unwrap();
        assert!(e.variance() > 0.0);
        let lam = e.diagnostics.min_eigenvalue.unwrap();
        let aa: f64 = [1.9f64, 2.1, 2.05, 1.95].iter().map(|v| v * v).sum();
        assert_abs_diff_eq!(e.variance(), 1.0 / (aa - lam), epsilon = 1e-12);
    }

    #[test]
    fn crlb_values() {
        let i = vec![2.0; 100];
        assert_abs_diff_eq!(crlb_batch(&i, 1e-3), 2.5e-9, epsilon = 1e-22);
        let i2 = vec![2.0; 200];
        assert_abs_diff_eq!(crlb_batch(&i2, 1e-3), 0.5 * crlb_batch(&i, 1e-3), epsilon = 1e-22);
        assert_eq!(crlb_batch(&[0.0; 10], 1e-3), f64::INFINITY);
    }
}
