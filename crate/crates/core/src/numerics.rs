//! Small dense linear algebra and normal-distribution utilities.
//!
//! Everything here works on plain `f64` slices. Matrices are tiny in practice
//! (one row per candidate outcome model, one column per selected feature), so
//! no sparse or blocked paths exist.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericError {
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("probability {0} is outside (0, 1)")]
    OutOfRange(f64),
    #[error("need at least {needed} rows, got {actual}")]
    TooFewRows { needed: usize, actual: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
}

/// Dense symmetric matrix stored row-major. Symmetry is exact: every
/// constructor writes the upper triangle and mirrors it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl SymmetricMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, entries: vec![0.0; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_fn(dim, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn diagonal(values: &[f64]) -> Self {
        Self::from_fn(values.len(), |i, j| if i == j { values[i] } else { 0.0 })
    }

    /// Builds the matrix from `f(i, j)` evaluated on the upper triangle only.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut entries = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                entries[i * dim + j] = v;
                entries[j * dim + i] = v;
            }
        }
        Self { dim, entries }
    }

    /// Builds from nested rows, reading the upper triangle and mirroring it.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericError> {
        let dim = rows.len();
        for row in rows {
            if row.len() != dim {
                return Err(NumericError::DimensionMismatch { expected: dim, actual: row.len() });
            }
        }
        Ok(Self::from_fn(dim, |i, j| rows[i][j]))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn mean_diagonal(&self) -> f64 {
        if self.dim == 0 {
            return 0.0;
        }
        self.diag().iter().sum::<f64>() / self.dim as f64
    }

    /// Returns `self + shift * I`.
    pub fn shifted(&self, shift: f64) -> Self {
        Self::from_fn(self.dim, |i, j| self.get(i, j) + if i == j { shift } else { 0.0 })
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    /// `xᵀ M x`
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let mx = self.mul_vec(x);
        dot(x, &mx)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| self.entries[i * self.dim..(i + 1) * self.dim].to_vec())
            .collect()
    }
}

/// Lower-triangular Cholesky factor `L` with `M = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    pub fn factor(m: &SymmetricMatrix) -> Result<Self, NumericError> {
        let n = m.dim();
        let mut lower = vec![0.0; n * n];
        for j in 0..n {
            let mut d = m.get(j, j);
            for k in 0..j {
                d -= lower[j * n + k] * lower[j * n + k];
            }
            // A pivot lost to rounding counts as breakdown.
            if !(d > f64::EPSILON * n as f64 * m.get(j, j)) || !d.is_finite() {
                return Err(NumericError::NotPositiveDefinite { pivot: j, value: d });
            }
            let ljj = d.sqrt();
            lower[j * n + j] = ljj;
            for i in (j + 1)..n {
                let mut s = m.get(i, j);
                for k in 0..j {
                    s -= lower[i * n + k] * lower[j * n + k];
                }
                lower[i * n + j] = s / ljj;
            }
        }
        Ok(Self { dim: n, lower })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut y = rhs.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.lower[i * n + k] * y[k];
            }
            y[i] = s / self.lower[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.lower[k * n + i] * y[k];
            }
            y[i] = s / self.lower[i * n + i];
        }
        y
    }
}

/// Solves `m x = rhs` for symmetric positive-definite `m` via Cholesky.
/// Factorization breakdown is reported, never patched up here.
pub fn solve_spd(m: &SymmetricMatrix, rhs: &[f64]) -> Result<Vec<f64>, NumericError> {
    if rhs.len() != m.dim() {
        return Err(NumericError::DimensionMismatch { expected: m.dim(), actual: rhs.len() });
    }
    let chol = Cholesky::factor(m)?;
    Ok(chol.solve(rhs))
}

/// Ratio of the largest to the smallest eigenvalue, estimated by power
/// iteration on `m` and on `m⁻¹` (through its Cholesky factor). Returns
/// infinity when `m` is not positive definite.
pub fn condition_estimate(m: &SymmetricMatrix) -> f64 {
    let n = m.dim();
    if n == 0 {
        return 1.0;
    }
    if n == 1 {
        return if m.get(0, 0) > 0.0 { 1.0 } else { f64::INFINITY };
    }
    let chol = match Cholesky::factor(m) {
        Ok(c) => c,
        Err(_) => return f64::INFINITY,
    };
    let largest = power_iteration(n, |v| m.mul_vec(v));
    let inverse_largest = power_iteration(n, |v| chol.solve(v));
    if !(inverse_largest > 0.0) || !largest.is_finite() {
        return f64::INFINITY;
    }
    largest * inverse_largest
}

fn power_iteration(n: usize, apply: impl Fn(&[f64]) -> Vec<f64>) -> f64 {
    // Unequal start vector so it is not orthogonal to the dominant direction
    // for the symmetric test matrices that show up in practice.
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
    normalize(&mut v);
    let mut estimate = 0.0;
    for _ in 0..1000 {
        let mut w = apply(&v);
        let next = dot(&v, &w);
        let norm = normalize(&mut w);
        if norm == 0.0 || !norm.is_finite() {
            return norm;
        }
        let converged = (next - estimate).abs() <= 1e-13 * next.abs();
        estimate = next;
        v = w;
        if converged {
            break;
        }
    }
    estimate
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Centered cross-product sum divided by `n - 1`. Shared by
/// [`sample_variance`] and [`sample_covariance`] so both produce identical
/// bits for the same column.
fn centered_cross(x: &[f64], x_mean: f64, y: &[f64], y_mean: f64) -> f64 {
    let n = x.len();
    let s: f64 = x.iter().zip(y).map(|(a, b)| (a - x_mean) * (b - y_mean)).sum();
    s / (n as f64 - 1.0)
}

/// Unbiased sample variance (divisor `n - 1`).
pub fn sample_variance(values: &[f64]) -> Result<f64, NumericError> {
    if values.len() < 2 {
        return Err(NumericError::TooFewRows { needed: 2, actual: values.len() });
    }
    let m = mean(values);
    Ok(centered_cross(values, m, values, m))
}

/// Unbiased sample covariance of `columns` (each of length `n`), centered at
/// the column means.
pub fn sample_covariance(columns: &[Vec<f64>]) -> Result<SymmetricMatrix, NumericError> {
    let n = columns.first().map_or(0, Vec::len);
    for c in columns {
        if c.len() != n {
            return Err(NumericError::LengthMismatch { left: n, right: c.len() });
        }
    }
    if n < 2 {
        return Err(NumericError::TooFewRows { needed: 2, actual: n });
    }
    let means: Vec<f64> = columns.iter().map(|c| mean(c)).collect();
    Ok(SymmetricMatrix::from_fn(columns.len(), |i, j| {
        centered_cross(&columns[i], means[i], &columns[j], means[j])
    }))
}

/// Pearson correlation. A constant input yields 0 rather than NaN.
pub fn pearson_correlation(x: &[f64], y: &[f64]) -> Result<f64, NumericError> {
    if x.len() != y.len() {
        return Err(NumericError::LengthMismatch { left: x.len(), right: y.len() });
    }
    if x.len() < 2 {
        return Err(NumericError::TooFewRows { needed: 2, actual: x.len() });
    }
    let mx = mean(x);
    let my = mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Ok(0.0);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

/// Complementary error function.
///
/// `|x| < 2.5` uses the all-positive series
/// `erf(x) = 2/√π · e^{-x²} · Σ 2ⁿ x^{2n+1} / (1·3···(2n+1))`;
/// larger arguments use the Laplace continued fraction for `erfc`, which keeps
/// full relative precision in the tail.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x.abs() < 2.5 {
        return 1.0 - erf_series(x);
    }
    if x < 0.0 {
        return 2.0 - erfc_continued_fraction(-x);
    }
    erfc_continued_fraction(x)
}

pub fn erf(x: f64) -> f64 {
    if x.abs() < 2.5 {
        erf_series(x)
    } else {
        1.0 - erfc(x)
    }
}

fn erf_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut k = 0.0;
    loop {
        k += 1.0;
        term *= 2.0 * x2 / (2.0 * k + 1.0);
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() || k > 200.0 {
            break;
        }
    }
    FRAC_2_SQRT_PI * (-x2).exp() * sum
}

// Modified Lentz evaluation of
// erfc(x) = e^{-x²}/√π · 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + 2/(x + ...))))).
fn erfc_continued_fraction(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..500 {
        let a = k as f64 * 0.5;
        d = x + a * d;
        d = if d.abs() < TINY { TINY } else { d };
        c = x + a / c;
        c = if c.abs() < TINY { TINY } else { c };
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() / (f * std::f64::consts::PI.sqrt())
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse standard normal CDF: Acklam's rational approximation followed by
/// one Halley refinement step against [`normal_cdf`].
pub fn normal_quantile(p: f64) -> Result<f64, NumericError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(NumericError::OutOfRange(p));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    if p > 0.5 {
        return Ok(-lower_half_quantile(1.0 - p));
    }
    Ok(lower_half_quantile(p))
}

fn lower_half_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };

    let e = normal_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Alternating Maclaurin series, used only as an independent oracle.
    fn erf_oracle(x: f64) -> f64 {
        let mut sum = 0.0;
        let mut power = x;
        let mut factorial = 1.0;
        for n in 0..80 {
            if n > 0 {
                factorial *= n as f64;
                power *= -x * x;
            }
            sum += power / (factorial * (2 * n + 1) as f64);
        }
        FRAC_2_SQRT_PI * sum
    }

    fn quantile_oracle(p: f64) -> f64 {
        let (mut lo, mut hi) = (-6.0f64, 6.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if 0.5 * (1.0 + erf_oracle(mid / std::f64::consts::SQRT_2)) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn solve_identity() {
        let x = solve_spd(&SymmetricMatrix::identity(3), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn solve_diagonal() {
        let x = solve_spd(&SymmetricMatrix::diagonal(&[4.0, 1.0]), &[1.0, 1.0]).unwrap();
        assert!((x[0] - 0.25).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn solve_two_by_two_multiplies_back() {
        let m = SymmetricMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let x = solve_spd(&m, &[1.0, 1.0]).unwrap();
        let back = m.mul_vec(&x);
        assert!((back[0] - 1.0).abs() < 1e-14 && (back[1] - 1.0).abs() < 1e-14);
        assert!((x[0] - 1.0 / 3.0).abs() < 1e-15 && (x[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn solve_rejects_indefinite() {
        let m = SymmetricMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(solve_spd(&m, &[1.0, 1.0]), Err(NumericError::NotPositiveDefinite { .. })));
        let singular = SymmetricMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(solve_spd(&singular, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
        let oracle = quantile_oracle(0.975);
        assert!((oracle - 1.95996398).abs() < 1e-8, "oracle {oracle}");
        assert!((normal_quantile(0.975).unwrap() - oracle).abs() < 1e-8);
        assert!((normal_quantile(0.841344746).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn quantile_matches_oracle_on_grid() {
        for i in 1..200 {
            let p = i as f64 / 200.0;
            let q = normal_quantile(p).unwrap();
            assert!((q - quantile_oracle(p)).abs() < 1e-8, "p={p}");
        }
    }

    #[test]
    fn quantile_tails_invert_cdf() {
        for &p in &[1e-12, 1e-8, 1e-5, 1e-3, 0.02] {
            let x = normal_quantile(p).unwrap();
            assert!(((normal_cdf(x) - p) / p).abs() < 1e-9, "p={p}");
        }
    }

    #[test]
    fn quantile_out_of_range() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(normal_quantile(p).is_err());
        }
    }

    #[test]
    fn erf_against_oracle() {
        for i in -40..=40 {
            let x = i as f64 * 0.1;
            // The alternating series cancels badly beyond |x| = 3.
            let tol = if x.abs() <= 3.0 { 1e-13 } else { 1e-10 };
            assert!((erf(x) - erf_oracle(x)).abs() < tol, "x={x}");
        }
        assert!((erfc(3.0) - 2.209049699858544e-05).abs() < 1e-19);
    }

    #[test]
    fn covariance_examples() {
        let c = sample_covariance(&[vec![1.0, -1.0]]).unwrap();
        assert_eq!(c.get(0, 0), 2.0);
        let c = sample_covariance(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((c.get(i, j) - 1.0).abs() < 1e-15);
            }
        }
        let c = sample_covariance(&[vec![1.0, 2.0, 4.0], vec![5.0, 5.0, 5.0]]).unwrap();
        assert_eq!(c.get(1, 1), 0.0);
        assert_eq!(c.get(0, 1), 0.0);
        assert!(matches!(sample_covariance(&[vec![1.0]]), Err(NumericError::TooFewRows { .. })));
    }

    #[test]
    fn correlation_examples() {
        let x = [1.0, 2.0, 3.0];
        assert!((pearson_correlation(&x, &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson_correlation(&x, &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!((pearson_correlation(&x, &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(pearson_correlation(&x, &[7.0, 7.0, 7.0]).unwrap(), 0.0);
        assert!(pearson_correlation(&x, &[1.0]).is_err());
    }

    #[test]
    fn condition_of_known_matrices() {
        let m = SymmetricMatrix::diagonal(&[4.0, 1.0]);
        assert!((condition_estimate(&m) - 4.0).abs() < 1e-9);
        let singular = SymmetricMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(condition_estimate(&singular) > 1e10);
    }

    fn spd_strategy() -> impl Strategy<Value = SymmetricMatrix> {
        (1usize..7).prop_flat_map(|n| {
            proptest::collection::vec(-1.0f64..1.0, n * n).prop_map(move |a| {
                // AᵀA + n·I has eigenvalues in [n, n + ‖A‖²], so it is well conditioned.
                SymmetricMatrix::from_fn(n, |i, j| {
                    let s: f64 = (0..n).map(|k| a[k * n + i] * a[k * n + j]).sum();
                    s + if i == j { n as f64 } else { 0.0 }
                })
            })
        })
    }

    proptest! {
        #[test]
        fn quantile_is_antisymmetric(p in 1e-6f64..0.5) {
            let lo = normal_quantile(p).unwrap();
            let hi = normal_quantile(1.0 - p).unwrap();
            prop_assert!((lo + hi).abs() <= 1e-12 * (1.0 + lo.abs()) + 2e-16 / normal_pdf(lo));
        }

        #[test]
        fn solve_residual_is_small(m in spd_strategy(), seed in proptest::collection::vec(-10.0f64..10.0, 7)) {
            let rhs = &seed[..m.dim()];
            let x = solve_spd(&m, rhs).unwrap();
            let r = m.mul_vec(&x);
            let scale = 1.0 + rhs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for (ri, bi) in r.iter().zip(rhs) {
                prop_assert!((ri - bi).abs() <= 1e-10 * scale);
            }
        }

        #[test]
        fn covariance_is_symmetric_psd(cols in (1usize..5, 2usize..30).prop_flat_map(|(m, n)| {
            proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, n), m)
        })) {
            let c = sample_covariance(&cols).unwrap();
            for i in 0..c.dim() {
                for j in 0..c.dim() {
                    prop_assert_eq!(c.get(i, j).to_bits(), c.get(j, i).to_bits());
                }
            }
            // Smallest eigenvalue via power iteration on (s·I − C).
            let s = c.diag().iter().sum::<f64>() + 1.0;
            let shifted = SymmetricMatrix::from_fn(c.dim(), |i, j| if i == j { s } else { 0.0 } - c.get(i, j));
            let top = power_iteration(c.dim(), |v| shifted.mul_vec(v));
            prop_assert!(s - top >= -1e-10 * s);
        }
    }
}
