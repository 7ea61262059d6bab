//! The smoothed projection operator used in the `L^q` error analysis, and an
//! empirical `L^q` error meter for plain (R)QMC estimators under `N(0, I)`.

use crate::error::{Error, Result};
use crate::numeric::derive_seed;
use crate::pointgen::{generate, SamplerKind};
use crate::transforms::inv_norm_cdf_clamped;

/// Projection radius `R > 1`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ProjectionRadius(f64);

impl ProjectionRadius {
    pub fn new(r: f64) -> Result<Self> {
        if r > 1.0 && r.is_finite() {
            Ok(Self(r))
        } else {
            Err(Error::invalid(format!("projection radius must exceed 1, got {r}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// C^1 clamp of `x` into `[-R + 1/2, R - 1/2]`: identity on `[-R+1, R-1]`,
/// quadratic blends on the two unit-width shoulders, constant beyond `R`.
/// Evaluated on `|x|` and reflected, so the map is exactly odd.
pub fn smoothed_projection(x: f64, r: ProjectionRadius) -> f64 {
    let r = r.get();
    let a = x.abs();
    let y = if a <= r - 1.0 {
        a
    } else if a < r {
        // -a^2/2 + R a - (R-1)^2/2, rewritten around the top of the parabola
        let gap = r - a;
        r - 0.5 - 0.5 * gap * gap
    } else {
        r - 0.5
    };
    if x.is_sign_negative() {
        -y
    } else {
        y
    }
}

/// Componentwise [`smoothed_projection`].
pub fn smoothed_projection_vec(x: &[f64], r: ProjectionRadius) -> Vec<f64> {
    x.iter().map(|&v| smoothed_projection(v, r)).collect()
}

/// The plain estimates `I_n(f) = n^{-1} sum_j f(Phi^{-1}(u_j))`, one per
/// repetition, each over a fresh `d`-dimensional point set.
pub fn plain_estimates(
    f: &dyn Fn(&[f64]) -> f64,
    d: usize,
    sampler: SamplerKind,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut x = vec![0.0; d];
    (0..reps)
        .map(|r| {
            let ps = generate(sampler, n, d, derive_seed(seed, &[n as u64, r as u64]))?;
            let mut sum = 0.0;
            for i in 0..n {
                for (xj, &u) in x.iter_mut().zip(ps.row(i)) {
                    *xj = inv_norm_cdf_clamped(u);
                }
                sum += f(&x);
            }
            Ok(sum / n as f64)
        })
        .collect()
}

/// `((1/reps) sum_r |I_n(f) - truth|^q)^{1/q}` over [`plain_estimates`].
#[allow(clippy::too_many_arguments)]
pub fn empirical_lq_error(
    f: &dyn Fn(&[f64]) -> f64,
    d: usize,
    sampler: SamplerKind,
    n: usize,
    q: f64,
    reps: usize,
    truth: f64,
    seed: u64,
) -> Result<f64> {
    if !(q >= 1.0 && q.is_finite()) {
        return Err(Error::invalid(format!("moment order must be at least 1, got {q}")));
    }
    if reps == 0 {
        return Err(Error::invalid("need at least one repetition"));
    }
    let est = plain_estimates(f, d, sampler, n, reps, seed)?;
    Ok(lq_deviation(&est, truth, q))
}

/// `((1/J) sum_r |e_r - truth|^q)^{1/q}`.
pub fn lq_deviation(estimates: &[f64], truth: f64, q: f64) -> f64 {
    let m = estimates.iter().map(|e| (e - truth).abs().powf(q)).sum::<f64>() / estimates.len() as f64;
    m.powf(1.0 / q)
}
