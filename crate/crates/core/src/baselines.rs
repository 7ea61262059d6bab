//! Fixed-proposal importance sampling comparators: mode-centred Gaussian
//! with a given covariance, and Laplace-approximation proposals (Gaussian
//! or Student-t).

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::CholeskyFactor;
use crate::mamis::{mamis_estimate, recycle_weights, run_stage, Estimate, Trace, WeightMode};
use crate::pointgen::SamplerKind;
use crate::proposals::{spd_repair, FamilySpec, ProposalParam};
use crate::targets::{Integrand, Target};

const MAX_NEWTON_ITERS: usize = 200;
const GRAD_TOL: f64 = 1e-6;

/// Output of [`find_mode`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModeResult {
    pub mode: Vec<f64>,
    /// `-grad^2 log_f` at the mode.
    pub neg_hessian: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
}

#[inline]
fn fd_step(x: f64) -> f64 {
    1e-5 * (1.0 + x.abs())
}

/// Second differences use a wider step: for a quadratic they are exact up to
/// rounding, which shrinks with the step squared.
#[inline]
fn fd_hessian_step(x: f64) -> f64 {
    1e-3 * (1.0 + x.abs())
}

fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|j| {
            let h = fd_step(x[j]);
            p[j] = x[j] + h;
            let up = f(&p);
            p[j] = x[j] - h;
            let down = f(&p);
            p[j] = x[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn fd_hessian(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> DMatrix<f64> {
    let d = x.len();
    let f0 = f(x);
    let mut p = x.to_vec();
    let mut hess = DMatrix::zeros(d, d);
    for i in 0..d {
        let hi = fd_hessian_step(x[i]);
        p[i] = x[i] + hi;
        let up = f(&p);
        p[i] = x[i] - hi;
        let down = f(&p);
        p[i] = x[i];
        hess[(i, i)] = (up - 2.0 * f0 + down) / (hi * hi);
        for j in 0..i {
            let hj = fd_hessian_step(x[j]);
            let mut corner = |si: f64, sj: f64| {
                p[i] = x[i] + si * hi;
                p[j] = x[j] + sj * hj;
                let v = f(&p);
                p[i] = x[i];
                p[j] = x[j];
                v
            };
            let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0)) / (4.0 * hi * hj);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Damped Newton ascent on `log_f` with finite-difference derivatives and
/// backtracking. Falls back to the gradient direction where `-H` is not
/// positive definite.
pub fn find_mode(log_f: &dyn Fn(&[f64]) -> f64, x0: &[f64]) -> Result<ModeResult> {
    if x0.is_empty() {
        return Err(Error::invalid("mode search needs a non-empty start point"));
    }
    let mut x = x0.to_vec();
    let mut fx = log_f(&x);
    if !fx.is_finite() {
        return Err(Error::invalid(format!("objective is not finite at the start point ({fx})")));
    }
    let mut iterations = 0;
    let mut grad = fd_gradient(log_f, &x);
    while iterations < MAX_NEWTON_ITERS && norm(&grad) > GRAD_TOL {
        iterations += 1;
        let neg_h = -fd_hessian(log_f, &x);
        let g = nalgebra::DVector::from_column_slice(&grad);
        let dir: Vec<f64> = match neg_h.clone().cholesky() {
            Some(c) => c.solve(&g).iter().copied().collect(),
            None => grad.clone(),
        };
        let mut step = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
            let fc = log_f(&cand);
            if fc.is_finite() && fc >= fx {
                moved = cand != x;
                x = cand;
                fx = fc;
                break;
            }
            step *= 0.5;
        }
        grad = fd_gradient(log_f, &x);
        if !moved {
            break;
        }
    }
    let grad_norm = norm(&grad);
    Ok(ModeResult {
        neg_hessian: -fd_hessian(log_f, &x),
        mode: x,
        iterations,
        converged: grad_norm <= GRAD_TOL,
        grad_norm,
    })
}

/// Best point of a regular grid of `per_axis^d` cell centres covering
/// `[lo, hi]^d`.
pub fn grid_scan(log_f: &dyn Fn(&[f64]) -> f64, d: usize, lo: f64, hi: f64, per_axis: usize) -> Vec<f64> {
    let width = (hi - lo) / per_axis as f64;
    let total = per_axis.pow(d as u32);
    let mut best = (f64::NEG_INFINITY, vec![0.5 * (lo + hi); d]);
    let mut p = vec![0.0; d];
    for k in 0..total {
        let mut rest = k;
        for pj in p.iter_mut() {
            *pj = lo + (rest % per_axis) as f64 * width + 0.5 * width;
            rest /= per_axis;
        }
        let v = log_f(&p);
        if v > best.0 {
            best = (v, p.clone());
        }
    }
    best.1
}

/// Laplace covariance: the inverse of the negative Hessian at the mode,
/// passed through `spd_repair`.
pub fn laplace_cov(mode: &ModeResult) -> Result<(DMatrix<f64>, CholeskyFactor)> {
    if !mode.converged {
        return Err(Error::ModeNotConverged {
            iterations: mode.iterations,
            grad_norm: mode.grad_norm,
        });
    }
    let (precision, _) = spd_repair(&mode.neg_hessian)?;
    let inv = precision
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Fit("negative Hessian is not invertible".into()))?;
    spd_repair(&inv)
}

/// Which fixed proposal to centre at the mode.
#[derive(Debug, Clone, PartialEq)]
pub enum BaselineVariant {
    /// `N(mu*, cov)` with a caller-chosen covariance.
    Odis(DMatrix<f64>),
    /// `N(mu*, Sigma*)` with the Laplace covariance.
    Lapis,
    /// `t_nu(mu*, Sigma*)`.
    LapisT(f64),
}

impl BaselineVariant {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineVariant::Odis(_) => "odis",
            BaselineVariant::Lapis => "lapis",
            BaselineVariant::LapisT(_) => "lapis_t",
        }
    }
}

/// A fixed proposal built once per experiment and reused across repetitions.
#[derive(Debug, Clone)]
pub struct BaselineProposal {
    pub variant: BaselineVariant,
    pub spec: FamilySpec,
    pub param: ProposalParam,
    pub mode: ModeResult,
}

/// The log of the function whose mode centres the proposal: `ln psi + ln pi~`
/// for a positive scalar integrand, `ln pi~` alone otherwise.
pub fn mode_objective<'a>(target: &'a Target, psi: &'a Integrand) -> impl Fn(&[f64]) -> f64 + 'a {
    move |x: &[f64]| {
        let lp = target.log_density(x);
        match psi {
            Integrand::FirstCoordSquared | Integrand::SquaredNorm => psi.eval(x)[0].ln() + lp,
            _ => lp,
        }
    }
}

/// Finds the mode from `x0` and builds the proposal of `variant`.
pub fn prepare_baseline(
    target: &Target,
    psi: &Integrand,
    variant: BaselineVariant,
    x0: &[f64],
) -> Result<BaselineProposal> {
    let d = target.dim();
    if x0.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: x0.len(),
        });
    }
    let objective = mode_objective(target, psi);
    let mode = find_mode(&objective, x0)?;
    if !mode.converged {
        return Err(Error::ModeNotConverged {
            iterations: mode.iterations,
            grad_norm: mode.grad_norm,
        });
    }
    let (spec, cov) = match &variant {
        BaselineVariant::Odis(cov) => {
            if cov.nrows() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: cov.nrows(),
                });
            }
            (FamilySpec::gaussian_mean_cov(d)?, cov.clone())
        }
        BaselineVariant::Lapis => (FamilySpec::gaussian_mean_cov(d)?, laplace_cov(&mode)?.0),
        BaselineVariant::LapisT(nu) => (FamilySpec::student_t(d, *nu)?, laplace_cov(&mode)?.0),
    };
    let param = spec.param_from(&mode.mode, &cov)?;
    Ok(BaselineProposal {
        variant,
        spec,
        param,
        mode,
    })
}

/// Default start for the mode search: the origin, or the first unit vector
/// when the objective vanishes there (e.g. `psi = x_1^2`).
pub fn default_start(target: &Target, psi: &Integrand) -> Vec<f64> {
    let d = target.dim();
    let mut x0 = vec![0.0; d];
    if !mode_objective(target, psi)(&x0).is_finite() {
        x0[0] = 1.0;
    }
    x0
}

impl BaselineProposal {
    /// Single-proposal IS estimate from `total` points, self-normalized when
    /// the target's constant is unknown.
    pub fn estimate(
        &self,
        target: &Target,
        psi: &Integrand,
        total: usize,
        sampler: SamplerKind,
        seed: u64,
    ) -> Result<Estimate> {
        let rec = run_stage(target, &self.spec, &self.param, total, sampler, seed)?;
        let mode = if target.normalized() {
            WeightMode::Unnormalized
        } else {
            WeightMode::SelfNormalized
        };
        let mut trace = Trace::from_stages(vec![rec], sampler, mode)?;
        recycle_weights(&mut trace);
        let mut est = mamis_estimate(&trace, psi)?;
        est.method = self.variant.name().to_string();
        Ok(est)
    }
}

/// Mode search from [`default_start`], proposal construction and one IS run.
pub fn run_is_baseline(
    target: &Target,
    psi: &Integrand,
    variant: BaselineVariant,
    total: usize,
    sampler: SamplerKind,
    seed: u64,
) -> Result<Estimate> {
    let x0 = default_start(target, psi);
    prepare_baseline(target, psi, variant, &x0)?.estimate(target, psi, total, sampler, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{make_banana, make_logistic_posterior, Gaussian, LogisticPosterior, PimaDesign};
    use std::sync::Arc;

    #[test]
    fn quadratic_mode_and_curvature() {
        let a = [1.5, -0.7, 3.0];
        let f = |x: &[f64]| -0.5 * x.iter().zip(&a).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
        let m = find_mode(&f, &[0.0; 3]).unwrap();
        assert!(m.converged);
        for (x, y) in m.mode.iter().zip(&a) {
            assert!((x - y).abs() < 1e-7);
        }
        let (cov, _) = laplace_cov(&m).unwrap();
        assert!((cov - DMatrix::identity(3, 3)).abs().max() < 1e-8);
    }

    #[test]
    fn one_dimensional_laplace_variance() {
        let s2 = 2.5;
        let f = |x: &[f64]| -x[0] * x[0] / (2.0 * s2);
        let m = find_mode(&f, &[1.0]).unwrap();
        let (cov, _) = laplace_cov(&m).unwrap();
        assert!((cov[(0, 0)] - s2).abs() < 1e-8);
    }

    #[test]
    fn correlated_gaussian_covariance_recovered() {
        let cov = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.0, -0.3, 0.1, -0.3, 0.7]);
        let g = Gaussian::new(vec![0.2, -1.0, 0.4], &cov).unwrap();
        let t = Target::new("g", Arc::new(g), true);
        let m = find_mode(&|x: &[f64]| t.log_density(x), &[0.0; 3]).unwrap();
        let (lc, _) = laplace_cov(&m).unwrap();
        assert!((lc - cov).abs().max() < 1e-8);
    }

    #[test]
    fn banana_stationary_point() {
        let b = make_banana(3.0, 2.0, 10.0).unwrap();
        let f = |x: &[f64]| b.log_density(x);
        let start = grid_scan(&f, 2, -2.0, 2.0, 40);
        let m = find_mode(&f, &start).unwrap();
        assert!(m.converged && m.grad_norm <= 1e-6);
        let m = find_mode(&f, &[0.4, 1.0]).unwrap();
        assert!(m.converged && m.grad_norm <= 1e-6);
    }

    /// Newton iteration with the analytic gradient and Hessian.
    fn analytic_newton(post: &LogisticPosterior, d: usize) -> (Vec<f64>, DMatrix<f64>) {
        let design = post.design();
        let neg_hessian = |z: &[f64]| {
            let mut h = DMatrix::identity(d, d);
            for i in 0..design.n() {
                let row = design.x.row(i);
                let eta: f64 = row.iter().zip(z).map(|(a, b)| a * b).sum();
                let p = 1.0 / (1.0 + (-eta).exp());
                for a in 0..d {
                    for b in 0..d {
                        h[(a, b)] += p * (1.0 - p) * row[a] * row[b];
                    }
                }
            }
            h
        };
        let mut z = vec![0.0; d];
        for _ in 0..50 {
            let g = nalgebra::DVector::from_vec(post.gradient(&z));
            let step = neg_hessian(&z).cholesky().unwrap().solve(&g);
            z.iter_mut().zip(step.iter()).for_each(|(a, s)| *a += s);
        }
        let h = neg_hessian(&z);
        (z, h.cholesky().unwrap().inverse())
    }

    #[test]
    fn logistic_mode_and_laplace_cov_match_analytic_oracle() {
        let design = PimaDesign::bundled().unwrap();
        let post = LogisticPosterior::new(design.clone());
        let (z_star, cov_star) = analytic_newton(&post, 9);
        let t = make_logistic_posterior(design);
        let m = find_mode(&|x: &[f64]| t.log_density(x), &[0.0; 9]).unwrap();
        assert!(m.converged);
        for (a, b) in m.mode.iter().zip(&z_star) {
            assert!((a - b).abs() < 1e-5);
        }
        let (cov, _) = laplace_cov(&m).unwrap();
        let rel = (&cov - &cov_star).abs().max() / cov_star.abs().max();
        assert!(rel < 1e-4, "relative error {rel}");
    }

    #[test]
    fn baseline_on_gaussian_target_recovers_mean() {
        let a = vec![0.5, -1.0];
        let g = Gaussian::new(a.clone(), &DMatrix::identity(2, 2)).unwrap();
        let t = Target::new("g", Arc::new(g), true);
        let est = run_is_baseline(&t, &Integrand::Identity, BaselineVariant::Lapis, 1 << 12, SamplerKind::Rqmc, 1)
            .unwrap();
        assert_eq!(est.method, "lapis");
        for (x, y) in est.value.iter().zip(&a) {
            assert!((x - y).abs() < 0.01);
        }
    }

    #[test]
    fn self_normalized_baseline_integrates_constant_exactly() {
        let b = make_banana(3.0, 2.0, 10.0).unwrap();
        let est = run_is_baseline(&b, &Integrand::Constant(1.0), BaselineVariant::LapisT(2.0), 256, SamplerKind::Mc, 4)
            .unwrap();
        assert_eq!(est.value, vec![1.0]);
    }

    #[test]
    fn baselines_are_deterministic() {
        let b = make_banana(3.0, 2.0, 10.0).unwrap();
        let v = BaselineVariant::Odis(DMatrix::identity(2, 2));
        let x = run_is_baseline(&b, &Integrand::Identity, v.clone(), 128, SamplerKind::Rqmc, 9).unwrap();
        let y = run_is_baseline(&b, &Integrand::Identity, v, 128, SamplerKind::Rqmc, 9).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn non_converged_mode_is_rejected() {
        let m = ModeResult {
            mode: vec![0.0],
            neg_hessian: DMatrix::identity(1, 1),
            iterations: 200,
            converged: false,
            grad_norm: 1.0,
        };
        assert!(matches!(laplace_cov(&m), Err(Error::ModeNotConverged { .. })));
    }
}
