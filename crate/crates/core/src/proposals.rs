//! Parametric proposal families `q(x, theta)`.
//!
//! The parameter vector packs the location first and, for the mean+covariance
//! families, the covariance block row-major after it:
//! `theta = (mu_1..mu_d, S_11, S_12, .., S_1d, S_21, .., S_dd)`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::{CholeskyFactor, RowMatrix};
use crate::pointgen::UniformPointSet;
use crate::transforms::{gaussian_transport_into, student_t_transport_into};

pub use crate::transforms::Family;

/// The family a run adapts over: tag, dimension, fixed `nu`, fixed covariance.
pub type FamilySpec = crate::transforms::TransportSpec;

/// Smallest eigenvalue allowed in an adapted covariance block.
pub const EIGEN_FLOOR: f64 = 1e-8;

/// A validated member `Q(theta)` of a [`FamilySpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalParam {
    family: Family,
    dim: usize,
    theta: Vec<f64>,
    nu: Option<f64>,
    chol: CholeskyFactor,
    log_norm: f64,
}

impl FamilySpec {
    /// Builds the proposal for a packed parameter. Covariance blocks pass
    /// through [`spd_repair`]; the stored parameter holds the repaired block.
    pub fn param(&self, mut theta: Vec<f64>) -> Result<ProposalParam> {
        if theta.len() != self.param_len() {
            return Err(Error::DimensionMismatch {
                expected: self.param_len(),
                actual: theta.len(),
            });
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite entry in theta".into()));
        }
        let d = self.dim();
        let chol = match self.family() {
            Family::GaussianFixedCov => self
                .fixed_chol()
                .cloned()
                .ok_or_else(|| Error::invalid("fixed-covariance family without covariance"))?,
            Family::GaussianMeanCov | Family::StudentT => {
                let block = DMatrix::from_row_slice(d, d, &theta[d..]);
                let (repaired, chol) = spd_repair(&block)?;
                for i in 0..d {
                    for j in 0..d {
                        theta[d + i * d + j] = repaired[(i, j)];
                    }
                }
                chol
            }
        };
        let half_log_det = 0.5 * chol.log_det();
        let log_norm = match self.family() {
            Family::StudentT => {
                let nu = self.nu().expect("t family carries nu");
                ln_gamma(0.5 * (nu + d as f64)) - ln_gamma(0.5 * nu)
                    - 0.5 * d as f64 * (nu * PI).ln()
                    - half_log_det
            }
            _ => -0.5 * d as f64 * (2.0 * PI).ln() - half_log_det,
        };
        Ok(ProposalParam {
            family: self.family(),
            dim: d,
            theta,
            nu: self.nu(),
            chol,
            log_norm,
        })
    }

    /// Parameter with the given location and covariance (ignored for the
    /// fixed-covariance family).
    pub fn param_from(&self, mean: &[f64], cov: &DMatrix<f64>) -> Result<ProposalParam> {
        let d = self.dim();
        if mean.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: mean.len(),
            });
        }
        let mut theta = mean.to_vec();
        if self.family() != Family::GaussianFixedCov {
            if cov.nrows() != d || cov.ncols() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: cov.nrows(),
                });
            }
            for i in 0..d {
                for j in 0..d {
                    theta.push(cov[(i, j)]);
                }
            }
        }
        self.param(theta)
    }
}

impl ProposalParam {
    pub fn family(&self) -> Family {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Packed parameter vector.
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn pack(&self) -> Vec<f64> {
        self.theta.clone()
    }

    pub fn location(&self) -> &[f64] {
        &self.theta[..self.dim]
    }

    pub fn nu(&self) -> Option<f64> {
        self.nu
    }

    /// Covariance (Gaussian) or scale matrix (Student-t).
    pub fn scale_matrix(&self) -> DMatrix<f64> {
        match self.family {
            Family::GaussianFixedCov => self.chol.covariance(),
            _ => DMatrix::from_row_slice(self.dim, self.dim, &self.theta[self.dim..]),
        }
    }

    pub fn chol(&self) -> &CholeskyFactor {
        &self.chol
    }

    /// `ln q(x, theta)`. `scratch` must have length `dim`.
    #[inline]
    pub fn log_density_with(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        let m = self.chol.mahalanobis_sq(x, self.location(), scratch);
        match self.family {
            Family::StudentT => {
                let nu = self.nu.unwrap_or(f64::INFINITY);
                self.log_norm - 0.5 * (nu + self.dim as f64) * (m / nu).ln_1p()
            }
            _ => self.log_norm - 0.5 * m,
        }
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        let mut scratch = vec![0.0; self.dim];
        Ok(self.log_density_with(x, &mut scratch))
    }

    /// Number of uniform coordinates one draw consumes.
    pub fn input_dim(&self) -> usize {
        match self.family {
            Family::StudentT => self.dim + 1,
            _ => self.dim,
        }
    }

    /// Transports uniform row `u` to a draw from this proposal.
    #[inline]
    pub(crate) fn transport_into(&self, u: &[f64], z: &mut [f64], out: &mut [f64]) {
        match self.family {
            Family::StudentT => student_t_transport_into(
                self.location(),
                &self.chol,
                self.nu.unwrap_or(f64::INFINITY),
                u,
                z,
                out,
            ),
            _ => gaussian_transport_into(self.location(), &self.chol, u, z, out),
        }
    }
}

/// `ln q(x, theta)` for a parameter of `spec`.
pub fn log_density(spec: &FamilySpec, theta: &ProposalParam, x: &[f64]) -> Result<f64> {
    if theta.family() != spec.family() || theta.dim() != spec.dim() {
        return Err(Error::invalid("parameter does not belong to the family"));
    }
    theta.log_density(x)
}

/// Row `i` of the result is the transport image of point `i` of `ps`.
pub fn sample(spec: &FamilySpec, theta: &ProposalParam, ps: &UniformPointSet) -> Result<RowMatrix> {
    if theta.family() != spec.family() || theta.dim() != spec.dim() {
        return Err(Error::invalid("parameter does not belong to the family"));
    }
    if ps.d() != spec.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.input_dim(),
            actual: ps.d(),
        });
    }
    let d = spec.dim();
    let mut out = RowMatrix::zeros(ps.n(), d);
    let mut z = vec![0.0; d];
    for i in 0..ps.n() {
        theta.transport_into(ps.row(i), &mut z, out.row_mut(i));
    }
    Ok(out)
}

/// The moment-matching statistic `h` with `theta* = E_pi[h(X)]`.
#[derive(Debug, Clone, PartialEq)]
pub enum HStatistic {
    /// `h(x) = x` (mean-only family).
    Identity,
    /// `h(x) = (x, vec((x - m)(x - m)^T))` around an auxiliary mean `m`.
    Centered(Vec<f64>),
    /// `h(x) = (x, vec(x x^T))`, used by pilot runs before a mean is known.
    Raw,
}

impl HStatistic {
    /// The statistic matching `spec`: identity for the mean-only family,
    /// otherwise centered when `aux_mean` is given and raw when it is not.
    pub fn for_family(spec: &FamilySpec, aux_mean: Option<Vec<f64>>) -> Result<Self> {
        match (spec.family(), aux_mean) {
            (Family::GaussianFixedCov, _) => Ok(HStatistic::Identity),
            (_, Some(m)) if m.len() == spec.dim() => Ok(HStatistic::Centered(m)),
            (_, Some(m)) => Err(Error::DimensionMismatch {
                expected: spec.dim(),
                actual: m.len(),
            }),
            (_, None) => Ok(HStatistic::Raw),
        }
    }

    pub fn output_len(&self, d: usize) -> usize {
        match self {
            HStatistic::Identity => d,
            _ => d + d * d,
        }
    }

    /// `acc += weight * h(x)`.
    #[inline]
    pub(crate) fn accumulate(&self, x: &[f64], weight: f64, acc: &mut [f64]) {
        let d = x.len();
        for (a, &xi) in acc.iter_mut().zip(x) {
            *a += weight * xi;
        }
        let center: Option<&[f64]> = match self {
            HStatistic::Identity => return,
            HStatistic::Centered(m) => Some(m),
            HStatistic::Raw => None,
        };
        let block = &mut acc[d..];
        for i in 0..d {
            let ci = center.map_or(x[i], |m| x[i] - m[i]);
            let wi = weight * ci;
            for j in 0..d {
                let cj = center.map_or(x[j], |m| x[j] - m[j]);
                block[i * d + j] += wi * cj;
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_len(x.len())];
        self.accumulate(x, 1.0, &mut out);
        out
    }
}

/// `h(x)` for the statistic implied by `spec` and `aux_mean`.
pub fn h_statistic(spec: &FamilySpec, x: &[f64], aux_mean: Option<&[f64]>) -> Result<Vec<f64>> {
    if x.len() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            actual: x.len(),
        });
    }
    Ok(HStatistic::for_family(spec, aux_mean.map(<[f64]>::to_vec))?.eval(x))
}

/// Symmetrizes `sigma` and floors its eigenvalues at [`EIGEN_FLOOR`].
/// A matrix that is already comfortably SPD comes back only symmetrized.
pub fn spd_repair(sigma: &DMatrix<f64>) -> Result<(DMatrix<f64>, CholeskyFactor)> {
    let d = sigma.nrows();
    if sigma.ncols() != d || d == 0 {
        return Err(Error::InvalidParameter("covariance block must be square".into()));
    }
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite covariance entry".into()));
    }
    let sym = (sigma + sigma.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min > EIGEN_FLOOR {
        if let Ok(chol) = CholeskyFactor::new(&sym) {
            return Ok((sym, chol));
        }
    }
    let floored = eig.eigenvalues.map(|l| l.max(EIGEN_FLOOR));
    let v = &eig.eigenvectors;
    let rebuilt = v * DMatrix::from_diagonal(&floored) * v.transpose();
    let rebuilt = (&rebuilt + rebuilt.transpose()) * 0.5;
    let chol = CholeskyFactor::new(&rebuilt)
        .map_err(|_| Error::InvalidParameter("covariance block irreparable".into()))?;
    Ok((rebuilt, chol))
}
