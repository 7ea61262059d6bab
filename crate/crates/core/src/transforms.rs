//! Uniform-to-target transport: inverse CDFs and the maps `T = F o Phi^{-1}`
//! that push a uniform point onto a Gaussian or Student-t proposal.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::DMatrix;
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};
use crate::linalg::CholeskyFactor;

/// Inputs to every inverse CDF are clamped into `[U_MIN, 1 - U_MIN]`.
/// Scrambled nets can emit an exact 0.
pub const U_MIN: f64 = 1.0 / 9_007_199_254_740_992.0;
pub const U_MAX: f64 = 1.0 - U_MIN;

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// Parametric proposal family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    /// `N(theta, Sigma)` with `Sigma` fixed; `theta` is the mean.
    GaussianFixedCov,
    /// `N(mu, Sigma)` with `theta = (mu, vec Sigma)`.
    GaussianMeanCov,
    /// Multivariate `t_nu(mu, Sigma)` with fixed `nu` and `theta = (mu, vec Sigma)`.
    StudentT,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::GaussianFixedCov => "gaussian_fixed_cov",
            Family::GaussianMeanCov => "gaussian_mean_cov",
            Family::StudentT => "student_t",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "gaussian_fixed_cov" => Ok(Family::GaussianFixedCov),
            "gaussian_mean_cov" | "gaussian" => Ok(Family::GaussianMeanCov),
            "student_t" | "t" => Ok(Family::StudentT),
            other => Err(Error::Unknown {
                kind: "family",
                name: other.to_string(),
            }),
        }
    }
}

/// Everything needed to realize a proposal family from uniforms, except the
/// adapted parameter itself.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportSpec {
    family: Family,
    dim: usize,
    nu: Option<f64>,
    fixed_cov: Option<(DMatrix<f64>, CholeskyFactor)>,
}

impl TransportSpec {
    pub fn gaussian_fixed_cov(cov: DMatrix<f64>) -> Result<Self> {
        let dim = cov.nrows();
        if dim == 0 || cov.ncols() != dim {
            return Err(Error::invalid("fixed covariance must be square and non-empty"));
        }
        if (&cov - cov.transpose()).abs().max() > 1e-12 * cov.abs().max().max(1.0) {
            return Err(Error::invalid("fixed covariance must be symmetric"));
        }
        let chol = CholeskyFactor::new(&cov)?;
        Ok(Self {
            family: Family::GaussianFixedCov,
            dim,
            nu: None,
            fixed_cov: Some((cov, chol)),
        })
    }

    pub fn gaussian_mean_cov(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        Ok(Self {
            family: Family::GaussianMeanCov,
            dim,
            nu: None,
            fixed_cov: None,
        })
    }

    pub fn student_t(dim: usize, nu: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::invalid(format!("degrees of freedom must be positive, got {nu}")));
        }
        Ok(Self {
            family: Family::StudentT,
            dim,
            nu: Some(nu),
            fixed_cov: None,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nu(&self) -> Option<f64> {
        self.nu
    }

    pub fn fixed_cov(&self) -> Option<&DMatrix<f64>> {
        self.fixed_cov.as_ref().map(|(c, _)| c)
    }

    pub(crate) fn fixed_chol(&self) -> Option<&CholeskyFactor> {
        self.fixed_cov.as_ref().map(|(_, l)| l)
    }

    /// Number of uniform coordinates consumed per sample.
    pub fn input_dim(&self) -> usize {
        match self.family {
            Family::StudentT => self.dim + 1,
            _ => self.dim,
        }
    }

    /// Length `D` of the packed parameter vector.
    pub fn param_len(&self) -> usize {
        match self.family {
            Family::GaussianFixedCov => self.dim,
            _ => self.dim + self.dim * self.dim,
        }
    }
}

#[inline]
fn clamp_unit(u: f64) -> f64 {
    u.clamp(U_MIN, U_MAX)
}

fn check_unit(u: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&u) {
        Ok(clamp_unit(u))
    } else {
        Err(Error::invalid(format!("probability {u} outside [0, 1]")))
    }
}

/// Standard normal CDF.
#[inline]
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// Standard normal quantile. `u` is clamped into `[U_MIN, U_MAX]`; values
/// outside `[0, 1]` are rejected.
pub fn inv_norm_cdf(u: f64) -> Result<f64> {
    check_unit(u).map(inv_norm_cdf_unchecked)
}

/// Quantile for `u` already inside the clamped range. The lower half is
/// computed directly and the upper half by reflection, so `z(1-u) = -z(u)`
/// holds exactly.
#[inline]
pub(crate) fn inv_norm_cdf_clamped(u: f64) -> f64 {
    inv_norm_cdf_unchecked(clamp_unit(u))
}

fn inv_norm_cdf_unchecked(u: f64) -> f64 {
    if u > 0.5 {
        -lower_quantile(1.0 - u)
    } else {
        lower_quantile(u)
    }
}

/// Acklam's rational approximation on `(0, 0.5]` followed by one Halley
/// step against the erfc-based CDF.
fn lower_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    if p == 0.5 {
        return 0.0;
    }
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
    let e = norm_cdf(x) - p;
    let u = e * SQRT_2PI * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// Chi-square CDF with `nu` degrees of freedom.
pub fn chi2_cdf(w: f64, nu: f64) -> f64 {
    if w <= 0.0 {
        0.0
    } else if w.is_infinite() {
        1.0
    } else {
        gamma_lr(0.5 * nu, 0.5 * w)
    }
}

fn chi2_sf(w: f64, nu: f64) -> f64 {
    if w <= 0.0 {
        1.0
    } else if w.is_infinite() {
        0.0
    } else {
        gamma_ur(0.5 * nu, 0.5 * w)
    }
}

fn chi2_log_pdf(w: f64, nu: f64) -> f64 {
    let a = 0.5 * nu;
    (a - 1.0) * w.ln() - 0.5 * w - a * std::f64::consts::LN_2 - ln_gamma(a)
}

/// Chi-square quantile by safeguarded Newton iteration on the regularized
/// incomplete gamma function. `u` is clamped like [`inv_norm_cdf`].
pub fn inv_chi2_cdf(u: f64, nu: f64) -> Result<f64> {
    let u = check_unit(u)?;
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::invalid(format!("degrees of freedom must be positive, got {nu}")));
    }
    Ok(inv_chi2_unchecked(u, nu))
}

pub(crate) fn inv_chi2_clamped(u: f64, nu: f64) -> f64 {
    inv_chi2_unchecked(clamp_unit(u), nu)
}

fn inv_chi2_unchecked(u: f64, nu: f64) -> f64 {
    let a = 0.5 * nu;
    // Solve in whichever tail keeps the residual free of cancellation.
    let upper = u > 0.5;
    let target = if upper { 1.0 - u } else { u };
    let residual = |w: f64| {
        if upper {
            target - chi2_sf(w, nu)
        } else {
            chi2_cdf(w, nu) - target
        }
    };

    // Initial guess: small-u series P(a, x) ~ x^a / Gamma(a + 1) in the lower
    // tail, Wilson-Hilferty elsewhere.
    let z = inv_norm_cdf_unchecked(u);
    let k = 2.0 / (9.0 * nu);
    let wh = nu * (1.0 - k + z * k.sqrt()).powi(3);
    let series = 2.0 * ((u.ln() + ln_gamma(a + 1.0)) / a).exp();
    let mut w = if wh > 0.0 && u > 0.05 { wh } else { series.max(f64::MIN_POSITIVE) };

    // Bracket the root.
    let mut lo = 0.0;
    let mut hi = w.max(1.0);
    while residual(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    if !(w > lo && w < hi) {
        w = 0.5 * (lo + hi);
    }

    for _ in 0..200 {
        let f = residual(w);
        if f == 0.0 {
            return w;
        }
        if f < 0.0 {
            lo = w;
        } else {
            hi = w;
        }
        let step = f / chi2_log_pdf(w, nu).exp();
        let mut next = w - step;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - w).abs() <= 1e-15 * w || hi - lo <= 1e-15 * hi {
            return next;
        }
        w = next;
    }
    w
}

fn check_row(row: &[f64], expected: usize) -> Result<()> {
    if row.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: row.len(),
        });
    }
    Ok(())
}

/// `mean + L Phi^{-1}(row)`, with `Phi^{-1}` applied componentwise.
pub fn gaussian_transport(mean: &[f64], chol_lower: &CholeskyFactor, row: &[f64]) -> Result<Vec<f64>> {
    let d = chol_lower.dim();
    check_row(mean, d)?;
    check_row(row, d)?;
    let mut z = vec![0.0; d];
    let mut out = vec![0.0; d];
    gaussian_transport_into(mean, chol_lower, row, &mut z, &mut out);
    Ok(out)
}

/// Student-t transport from a `(d + 1)`-coordinate row: the first `d`
/// coordinates drive the normal part, the last the chi-square mixing variate.
pub fn student_t_transport(
    mean: &[f64],
    chol_lower: &CholeskyFactor,
    nu: f64,
    row: &[f64],
) -> Result<Vec<f64>> {
    let d = chol_lower.dim();
    check_row(mean, d)?;
    check_row(row, d + 1)?;
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::invalid(format!("degrees of freedom must be positive, got {nu}")));
    }
    let mut z = vec![0.0; d];
    let mut out = vec![0.0; d];
    student_t_transport_into(mean, chol_lower, nu, row, &mut z, &mut out);
    Ok(out)
}

#[inline]
pub(crate) fn gaussian_transport_into(
    mean: &[f64],
    chol: &CholeskyFactor,
    row: &[f64],
    z: &mut [f64],
    out: &mut [f64],
) {
    for (zj, &u) in z.iter_mut().zip(row) {
        *zj = inv_norm_cdf_clamped(u);
    }
    chol.affine(mean, z, out);
}

#[inline]
pub(crate) fn student_t_transport_into(
    mean: &[f64],
    chol: &CholeskyFactor,
    nu: f64,
    row: &[f64],
    z: &mut [f64],
    out: &mut [f64],
) {
    let d = chol.dim();
    let w = inv_chi2_clamped(row[d], nu);
    let scale = (nu / w).sqrt();
    for (zj, &u) in z.iter_mut().zip(&row[..d]) {
        *zj = inv_norm_cdf_clamped(u) * scale;
    }
    chol.affine(mean, z, out);
}

/// `ln` of the standard normal density at `z`.
#[inline]
pub fn ln_std_normal_pdf(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * (2.0 * PI).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Normal CDF from the Taylor series of erf, summed with compensated
    /// arithmetic. Independent of statrs; accurate to ~1e-15 for |z| <= 4.
    fn series_cdf(z: f64) -> f64 {
        let x = z * FRAC_1_SQRT_2;
        let mut term = x;
        let mut sum = x;
        let mut comp = 0.0;
        let mut n = 0.0;
        while term.abs() > 1e-300 && n < 500.0 {
            n += 1.0;
            term *= -x * x / n;
            let add = term / (2.0 * n + 1.0) - comp;
            let t = sum + add;
            comp = (t - sum) - add;
            sum = t;
        }
        0.5 + sum / PI.sqrt()
    }

    fn bisect_quantile(u: f64) -> f64 {
        let (mut lo, mut hi) = (-8.0, 8.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if series_cdf(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn quantile_reference_values() {
        assert_eq!(inv_norm_cdf(0.5).unwrap(), 0.0);
        let oracle = bisect_quantile(0.975);
        assert!((oracle - 1.959964).abs() < 1e-5);
        assert!((inv_norm_cdf(0.975).unwrap() - oracle).abs() < 1e-12, "{} vs {oracle}", inv_norm_cdf(0.975).unwrap());
        for &u in &[0.001, 0.02, 0.1, 0.3, 0.7, 0.9, 0.999] {
            assert!((inv_norm_cdf(u).unwrap() - bisect_quantile(u)).abs() < 1e-11);
        }
    }

    #[test]
    fn quantile_antisymmetry_and_clamping() {
        for &u in &[1e-12, 0.01, 0.2, 0.49] {
            assert_eq!(inv_norm_cdf(1.0 - u).unwrap(), -inv_norm_cdf(1.0 - (1.0 - u)).unwrap());
        }
        let lo = inv_norm_cdf(0.0).unwrap();
        let hi = inv_norm_cdf(1.0).unwrap();
        assert!(lo.is_finite() && hi.is_finite());
        assert_eq!(lo, -hi);
        assert!(lo < -8.0);
        assert!(inv_norm_cdf(-0.1).is_err());
        assert!(inv_norm_cdf(1.1).is_err());
        assert!(inv_norm_cdf(f64::NAN).is_err());
    }

    #[test]
    fn quantile_tail_relative_accuracy() {
        for k in 10..300 {
            let u = 10f64.powf(-(k as f64) / 20.0);
            let z = inv_norm_cdf(u).unwrap();
            let back = norm_cdf(z);
            assert!(((back - u) / u).abs() < 1e-9, "u={u:e}");
        }
    }

    #[test]
    fn chi2_quantile_closed_forms() {
        // nu = 2: CDF is 1 - exp(-w/2)
        let w = inv_chi2_cdf(0.5, 2.0).unwrap();
        assert!((w - 2.0 * 2f64.ln()).abs() < 1e-9);
        assert!((w - 1.386294).abs() < 1e-6);
        let w = inv_chi2_cdf(0.9, 2.0).unwrap();
        assert!((w + 2.0 * 0.1f64.ln()).abs() < 1e-9);
        let tiny = inv_chi2_cdf(0.0, 2.0).unwrap();
        assert!(tiny > 0.0 && tiny < 1e-14);
        assert!(inv_chi2_cdf(0.5, 0.0).is_err());
        assert!(inv_chi2_cdf(1.5, 2.0).is_err());
    }

    #[test]
    fn chi2_quantile_residuals() {
        for &nu in &[0.5, 1.0, 2.0, 3.0, 7.5, 30.0, 200.0] {
            for k in 1..200 {
                let u = k as f64 / 200.0;
                let w = inv_chi2_cdf(u, nu).unwrap();
                assert!((chi2_cdf(w, nu) - u).abs() <= 1e-10, "nu={nu} u={u}");
            }
            for &u in &[1e-12, 1e-6, 1.0 - 1e-9] {
                let w = inv_chi2_cdf(u, nu).unwrap();
                assert!((chi2_cdf(w, nu) - u).abs() <= 1e-10, "nu={nu} u={u}");
            }
        }
    }

    #[test]
    fn transport_examples() {
        let chol = CholeskyFactor::identity(3);
        let center = [0.5; 3];
        assert_eq!(gaussian_transport(&[0.0; 3], &chol, &center).unwrap(), vec![0.0; 3]);
        let mu = [1.0, -2.0, 3.5];
        assert_eq!(gaussian_transport(&mu, &chol, &center).unwrap(), mu.to_vec());
        let t = student_t_transport(&mu, &chol, 2.0, &[0.5, 0.5, 0.5, 0.9]).unwrap();
        assert_eq!(t, mu.to_vec());
        assert!(matches!(
            gaussian_transport(&mu, &chol, &[0.5; 2]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(student_t_transport(&mu, &chol, 2.0, &center).is_err());
    }

    #[test]
    fn student_t_approaches_gaussian_for_large_nu() {
        let chol = CholeskyFactor::identity(2);
        let row = [0.8, 0.3];
        let g = gaussian_transport(&[0.0; 2], &chol, &row).unwrap();
        let t = student_t_transport(&[0.0; 2], &chol, 1e8, &[0.8, 0.3, 0.5]).unwrap();
        for (a, b) in g.iter().zip(&t) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn family_spec_validation() {
        assert!(TransportSpec::student_t(2, -1.0).is_err());
        assert!(TransportSpec::gaussian_mean_cov(0).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.1, 1.0]);
        assert!(TransportSpec::gaussian_fixed_cov(asym).is_err());
        let s = TransportSpec::student_t(3, 2.0).unwrap();
        assert_eq!(s.input_dim(), 4);
        assert_eq!(s.param_len(), 12);
    }
}
