//! Target densities `pi`, integrands `psi`, ground truths, and the pima
//! design used by the logistic-regression posterior.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{CholeskyFactor, RowMatrix};
use crate::numeric::{log1p_exp, logsumexp, sigmoid};

/// An (unnormalized) log density on `R^d`.
pub trait LogDensity: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn log_density(&self, x: &[f64]) -> f64;
}

/// Where a ground-truth value comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Analytic,
    Quadrature,
    /// A long reference run of the method itself.
    SelfOracle,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Analytic => "analytic",
            Provenance::Quadrature => "quadrature",
            Provenance::SelfOracle => "self_oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub integrand: String,
    pub value: Vec<f64>,
    pub provenance: Provenance,
}

/// A target distribution together with whatever is known about it.
#[derive(Debug, Clone)]
pub struct Target {
    name: String,
    normalized: bool,
    density: Arc<dyn LogDensity>,
    truths: Vec<GroundTruth>,
}

impl Target {
    pub fn new(name: impl Into<String>, density: Arc<dyn LogDensity>, normalized: bool) -> Self {
        Self {
            name: name.into(),
            normalized,
            density,
            truths: Vec::new(),
        }
    }

    pub fn with_truth(mut self, integrand: &str, value: Vec<f64>, provenance: Provenance) -> Self {
        self.truths.retain(|t| t.integrand != integrand);
        self.truths.push(GroundTruth {
            integrand: integrand.to_string(),
            value,
            provenance,
        });
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.density.dim()
    }

    /// True when `exp(log_density)` integrates to one.
    pub fn normalized(&self) -> bool {
        self.normalized
    }

    #[inline]
    pub fn log_density(&self, x: &[f64]) -> f64 {
        self.density.log_density(x)
    }

    pub fn density(&self) -> &Arc<dyn LogDensity> {
        &self.density
    }

    pub fn ground_truth(&self, integrand: &str) -> Option<&GroundTruth> {
        self.truths.iter().find(|t| t.integrand == integrand)
    }

    pub fn ground_truths(&self) -> &[GroundTruth] {
        &self.truths
    }

    /// The same target with `log pi` shifted by `log_c`; marked unnormalized.
    pub fn scaled(&self, log_c: f64) -> Target {
        Target {
            name: format!("{}*exp({log_c})", self.name),
            normalized: false,
            density: Arc::new(Shifted {
                inner: self.density.clone(),
                shift: log_c,
            }),
            truths: self.truths.clone(),
        }
    }
}

#[derive(Debug)]
struct Shifted {
    inner: Arc<dyn LogDensity>,
    shift: f64,
}

impl LogDensity for Shifted {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.inner.log_density(x) + self.shift
    }
}

/// Runs `f` with a zeroed scratch buffer of at least `d` entries.
#[inline]
pub(crate) fn with_scratch<R>(d: usize, f: impl FnOnce(&mut [f64]) -> R) -> R {
    const STACK: usize = 64;
    if d <= STACK {
        let mut buf = [0.0; STACK];
        f(&mut buf[..d])
    } else {
        let mut buf = vec![0.0; d];
        f(&mut buf)
    }
}

/// Multivariate normal `N(mean, cov)`.
#[derive(Debug, Clone)]
pub struct Gaussian {
    mean: Vec<f64>,
    chol: CholeskyFactor,
    log_norm: f64,
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                actual: cov.nrows(),
            });
        }
        let chol = CholeskyFactor::new(cov)?;
        let log_norm = -0.5 * mean.len() as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * chol.log_det();
        Ok(Self { mean, chol, log_norm })
    }
}

impl LogDensity for Gaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        with_scratch(self.mean.len(), |s| {
            self.log_norm - 0.5 * self.chol.mahalanobis_sq(x, &self.mean, s)
        })
    }
}

#[derive(Debug, Clone)]
struct MixtureComponent {
    log_weight: f64,
    mean: Vec<f64>,
    chol: CholeskyFactor,
}

/// Finite Gaussian mixture `sum_k w_k N(mu_k, Sigma_k)`.
///
/// When every component shares one covariance the density whitens `x` once
/// and compares it to pre-whitened means.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<MixtureComponent>,
    shared: Option<SharedCov>,
}

#[derive(Debug, Clone)]
struct SharedCov {
    chol: CholeskyFactor,
    whitened_means: Vec<Vec<f64>>,
    log_consts: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(weights: &[f64], means: &[Vec<f64>], covs: &[DMatrix<f64>]) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || means.len() != covs.len() {
            return Err(Error::invalid("mixture needs matching, non-empty weights/means/covs"));
        }
        let dim = means[0].len();
        let total: f64 = weights.iter().sum();
        let mut components = Vec::with_capacity(weights.len());
        for ((w, m), c) in weights.iter().zip(means).zip(covs) {
            if m.len() != dim || c.nrows() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: m.len(),
                });
            }
            if !(*w > 0.0) {
                return Err(Error::invalid("mixture weights must be positive"));
            }
            components.push(MixtureComponent {
                log_weight: (w / total).ln(),
                mean: m.clone(),
                chol: CholeskyFactor::new(c)?,
            });
        }
        let half_log_2pi_d = 0.5 * dim as f64 * (2.0 * std::f64::consts::PI).ln();
        let shared = covs.windows(2).all(|w| w[0] == w[1]).then(|| {
            let chol = components[0].chol.clone();
            let whitened_means = components
                .iter()
                .map(|c| {
                    let mut out = vec![0.0; dim];
                    chol.solve_lower(&c.mean, &mut out);
                    out
                })
                .collect();
            let log_consts = components
                .iter()
                .map(|c| c.log_weight - half_log_2pi_d - 0.5 * chol.log_det())
                .collect();
            SharedCov {
                chol,
                whitened_means,
                log_consts,
            }
        });
        Ok(Self {
            dim,
            components,
            shared,
        })
    }

    /// Mixture mean `sum_k w_k mu_k`.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for c in &self.components {
            let w = c.log_weight.exp();
            for (o, m) in out.iter_mut().zip(&c.mean) {
                *o += w * m;
            }
        }
        out
    }

    /// Log density of component `k` alone (unweighted).
    pub fn component_log_density(&self, k: usize, x: &[f64]) -> f64 {
        let c = &self.components[k];
        let half_log_2pi_d = 0.5 * self.dim as f64 * (2.0 * std::f64::consts::PI).ln();
        with_scratch(self.dim, |s| {
            -half_log_2pi_d - 0.5 * c.chol.log_det() - 0.5 * c.chol.mahalanobis_sq(x, &c.mean, s)
        })
    }
}

impl LogDensity for GaussianMixture {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        const MAX_COMPONENTS: usize = 16;
        let k = self.components.len();
        let mut terms_stack = [0.0; MAX_COMPONENTS];
        let mut terms_heap;
        let terms: &mut [f64] = if k <= MAX_COMPONENTS {
            &mut terms_stack[..k]
        } else {
            terms_heap = vec![0.0; k];
            &mut terms_heap
        };
        match &self.shared {
            Some(sh) => with_scratch(self.dim, |y| {
                sh.chol.solve_lower(x, y);
                for ((t, wm), lc) in terms.iter_mut().zip(&sh.whitened_means).zip(&sh.log_consts) {
                    let m: f64 = y.iter().zip(wm).map(|(a, b)| (a - b) * (a - b)).sum();
                    *t = lc - 0.5 * m;
                }
            }),
            None => {
                for (i, c) in self.components.iter().enumerate() {
                    terms[i] = c.log_weight + self.component_log_density(i, x);
                }
            }
        }
        logsumexp(terms)
    }
}

/// Equal-weight three-component mixture with means `1`, `0`, `-1` (all-ones
/// vectors) and shared covariance with `d` on the diagonal and `1` elsewhere.
pub fn make_shared_cov_gmm(d: usize) -> Result<Target> {
    if d < 2 {
        return Err(Error::invalid(format!("shared-covariance mixture needs d >= 2, got {d}")));
    }
    let cov = shared_gmm_covariance(d);
    let means = vec![vec![1.0; d], vec![0.0; d], vec![-1.0; d]];
    let mix = GaussianMixture::new(&[1.0; 3], &means, &[cov.clone(), cov.clone(), cov])?;
    Ok(Target::new(format!("toy_gmm_d{d}"), Arc::new(mix), true)
        .with_truth("first_coord_squared", vec![d as f64 + 2.0 / 3.0], Provenance::Analytic)
        .with_truth("identity", vec![0.0; d], Provenance::Analytic))
}

/// Covariance shared by the toy mixture's components.
pub fn shared_gmm_covariance(d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| if i == j { d as f64 } else { 1.0 })
}

/// The mean printed alongside the five-normal mixture in the literature this
/// experiment reproduces. It disagrees with the listed component means in the
/// second coordinate; the analytic mean is used as the truth.
pub const FIVE_MIXTURE_REPORTED_MEAN: [f64; 2] = [2.16, 2.14];

pub fn five_mixture_components() -> (Vec<Vec<f64>>, Vec<DMatrix<f64>>) {
    let means = vec![
        vec![1.0, 1.0],
        vec![2.0, 3.6],
        vec![3.3, 2.8],
        vec![1.1, 2.9],
        vec![3.4, 0.6],
    ];
    let s = 1.0 / (40.0 * 40.0);
    let covs = [
        [2.0, 0.6, 0.6, 1.0],
        [2.0, -0.4, -0.4, 2.0],
        [2.0, 0.8, 0.8, 2.0],
        [3.0, 0.0, 0.0, 0.5],
        [2.0, -0.1, -0.1, 2.0],
    ]
    .iter()
    .map(|c| DMatrix::from_row_slice(2, 2, c) * s)
    .collect();
    (means, covs)
}

/// Two-dimensional equal-weight mixture of five narrow normals.
pub fn make_five_mixture() -> Result<Target> {
    let (means, covs) = five_mixture_components();
    let mix = GaussianMixture::new(&[1.0; 5], &means, &covs)?;
    let mean = mix.mean();
    Ok(Target::new("five_mixture", Arc::new(mix), true).with_truth("identity", mean, Provenance::Analytic))
}

/// Banana-shaped density
/// `log pi(x) = -(4 - b x1 - x2^2)^2 / (2 eta1^2) - x2^2 / (2 eta2^2)` (unnormalized).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Banana {
    pub eta1: f64,
    pub eta2: f64,
    pub b: f64,
}

impl LogDensity for Banana {
    fn dim(&self) -> usize {
        2
    }

    #[inline]
    fn log_density(&self, x: &[f64]) -> f64 {
        let r = 4.0 - self.b * x[0] - x[1] * x[1];
        -r * r / (2.0 * self.eta1 * self.eta1) - x[1] * x[1] / (2.0 * self.eta2 * self.eta2)
    }
}

impl Banana {
    /// Normalizing constant and mean by trapezoid quadrature. The `x1` grid of
    /// each `x2` row is centred on the ridge `x1 = (4 - x2^2) / b`, where all
    /// the mass sits.
    pub fn quadrature_moments(&self, rows: usize, cols: usize) -> (f64, [f64; 2]) {
        let half2 = 10.0 * self.eta2;
        let half1 = 12.0 * self.eta1 / self.b;
        let h2 = 2.0 * half2 / (rows - 1) as f64;
        let h1 = 2.0 * half1 / (cols - 1) as f64;
        let trap = |k: usize, n: usize| if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
        let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for r in 0..rows {
            let x2 = -half2 + r as f64 * h2;
            let c = (4.0 - x2 * x2) / self.b;
            let (mut rz, mut rm1) = (0.0, 0.0);
            for k in 0..cols {
                let x1 = c - half1 + k as f64 * h1;
                let p = trap(k, cols) * self.log_density(&[x1, x2]).exp();
                rz += p;
                rm1 += p * x1;
            }
            let wr = trap(r, rows) * h1 * h2;
            z += wr * rz;
            m1 += wr * rm1;
            m2 += wr * rz * x2;
        }
        (z, [m1 / z, m2 / z])
    }
}

pub fn make_banana(eta1: f64, eta2: f64, b: f64) -> Result<Target> {
    if !(eta1 > 0.0 && eta2 > 0.0 && b > 0.0) {
        return Err(Error::invalid("banana parameters must be positive"));
    }
    let banana = Banana { eta1, eta2, b };
    let (_, mean) = banana.quadrature_moments(4001, 2001);
    Ok(Target::new("banana", Arc::new(banana), false).with_truth(
        "identity",
        mean.to_vec(),
        Provenance::Quadrature,
    ))
}

/// Predictors (intercept first, then standardized features) and binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PimaDesign {
    pub x: RowMatrix,
    pub y: Vec<f64>,
}

/// Rows taken from the head of the file.
pub const PIMA_ROWS: usize = 30;
const PIMA_FEATURES: usize = 8;
const BUNDLED_PIMA: &str = include_str!("../data/pima_first30.csv");

impl PimaDesign {
    /// The first 30 rows of the pima data set shipped with the crate.
    pub fn bundled() -> Result<Self> {
        parse_pima(BUNDLED_PIMA, Path::new("<bundled pima_first30.csv>"))
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }
}

pub fn load_pima(path: impl AsRef<Path>) -> Result<PimaDesign> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pima(&text, path)
}

/// Parses pima CSV text: 8 numeric features then a 0/1 outcome, optional
/// header. Keeps the first 30 rows, standardizes each feature over them
/// (population variance) and prepends an intercept column.
pub fn parse_pima(text: &str, path: &Path) -> Result<PimaDesign> {
    let ingest = |message: String| Error::Ingest {
        path: path.to_path_buf(),
        message,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).peekable();
    let mut header: Option<Vec<String>> = None;
    if let Some((_, first)) = lines.peek() {
        let looks_numeric = first.split(',').all(|f| f.trim().parse::<f64>().is_ok());
        if !looks_numeric {
            header = Some(first.split(',').map(|s| s.trim().to_string()).collect());
            lines.next();
        }
    }
    let column_name = |j: usize| {
        header
            .as_ref()
            .and_then(|h| h.get(j).cloned())
            .unwrap_or_else(|| format!("column {}", j + 1))
    };

    let mut feats: Vec<[f64; PIMA_FEATURES]> = Vec::with_capacity(PIMA_ROWS);
    let mut y = Vec::with_capacity(PIMA_ROWS);
    for (lineno, line) in lines.take(PIMA_ROWS) {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != PIMA_FEATURES + 1 {
            return Err(ingest(format!(
                "line {}: expected {} columns, found {}",
                lineno + 1,
                PIMA_FEATURES + 1,
                fields.len()
            )));
        }
        let mut row = [0.0; PIMA_FEATURES];
        for (j, f) in fields.iter().enumerate() {
            let v: f64 = f.parse().map_err(|_| {
                ingest(format!("line {}: {} is not numeric: `{f}`", lineno + 1, column_name(j)))
            })?;
            if !v.is_finite() {
                return Err(ingest(format!("line {}: {} is not finite", lineno + 1, column_name(j))));
            }
            if j < PIMA_FEATURES {
                row[j] = v;
            } else if v == 0.0 || v == 1.0 {
                y.push(v);
            } else {
                return Err(ingest(format!(
                    "line {}: outcome {} must be 0 or 1, found {v}",
                    lineno + 1,
                    column_name(j)
                )));
            }
        }
        feats.push(row);
    }
    if feats.len() < PIMA_ROWS {
        return Err(ingest(format!("need at least {PIMA_ROWS} data rows, found {}", feats.len())));
    }

    let n = feats.len() as f64;
    let mut x = RowMatrix::zeros(feats.len(), PIMA_FEATURES + 1);
    for j in 0..PIMA_FEATURES {
        let mean = feats.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = feats.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        if var <= 0.0 {
            return Err(ingest(format!("{} is constant over the first {PIMA_ROWS} rows", column_name(j))));
        }
        let sd = var.sqrt();
        for (i, r) in feats.iter().enumerate() {
            x.row_mut(i)[j + 1] = (r[j] - mean) / sd;
        }
    }
    for i in 0..feats.len() {
        x.row_mut(i)[0] = 1.0;
    }
    Ok(PimaDesign { x, y })
}

/// Bayesian logistic regression posterior with a standard normal prior,
/// unnormalized and without the prior's `(2 pi)^{-d/2}` constant.
#[derive(Debug, Clone)]
pub struct LogisticPosterior {
    design: PimaDesign,
}

impl LogisticPosterior {
    pub fn new(design: PimaDesign) -> Self {
        Self { design }
    }

    pub fn design(&self) -> &PimaDesign {
        &self.design
    }

    #[inline]
    fn linear(&self, i: usize, z: &[f64]) -> f64 {
        self.design.x.row(i).iter().zip(z).map(|(a, b)| a * b).sum()
    }

    /// Analytic gradient `-z + sum_i (y_i - sigmoid(x_i^T z)) x_i`.
    pub fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let mut g: Vec<f64> = z.iter().map(|v| -v).collect();
        for i in 0..self.design.n() {
            let r = self.design.y[i] - sigmoid(self.linear(i, z));
            for (gj, xj) in g.iter_mut().zip(self.design.x.row(i)) {
                *gj += r * xj;
            }
        }
        g
    }
}

impl LogDensity for LogisticPosterior {
    fn dim(&self) -> usize {
        self.design.dim()
    }

    fn log_density(&self, z: &[f64]) -> f64 {
        let mut acc = -0.5 * z.iter().map(|v| v * v).sum::<f64>();
        for i in 0..self.design.n() {
            let eta = self.linear(i, z);
            acc += self.design.y[i] * eta - log1p_exp(eta);
        }
        acc
    }
}

pub fn make_logistic_posterior(design: PimaDesign) -> Target {
    Target::new("logistic", Arc::new(LogisticPosterior::new(design)), false)
}

/// A function of interest `psi: R^d -> R^k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Integrand {
    /// `x_1^2`
    FirstCoordSquared,
    /// `x` itself (vector valued).
    Identity,
    /// `|x|^2`
    SquaredNorm,
    /// The constant `c`.
    Constant(f64),
}

impl Integrand {
    pub fn name(&self) -> &'static str {
        match self {
            Integrand::FirstCoordSquared => "first_coord_squared",
            Integrand::Identity => "identity",
            Integrand::SquaredNorm => "squared_norm",
            Integrand::Constant(_) => "constant",
        }
    }

    pub fn output_len(&self, d: usize) -> usize {
        match self {
            Integrand::Identity => d,
            _ => 1,
        }
    }

    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Integrand::FirstCoordSquared => out[0] = x[0] * x[0],
            Integrand::Identity => out.copy_from_slice(x),
            Integrand::SquaredNorm => out[0] = x.iter().map(|v| v * v).sum(),
            Integrand::Constant(c) => out[0] = *c,
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_len(x.len())];
        self.eval_into(x, &mut out);
        out
    }

    pub fn is_scalar(&self) -> bool {
        !matches!(self, Integrand::Identity)
    }
}

pub fn integrand_registry(name: &str) -> Result<Integrand> {
    match name.trim() {
        "first_coord_squared" => Ok(Integrand::FirstCoordSquared),
        "identity" => Ok(Integrand::Identity),
        "squared_norm" => Ok(Integrand::SquaredNorm),
        other => Err(Error::Unknown {
            kind: "integrand",
            name: other.to_string(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn toy_truth_and_symmetry() {
        let t = make_shared_cov_gmm(20).unwrap();
        let truth = &t.ground_truth("first_coord_squared").unwrap().value;
        assert!((truth[0] - 20.666_666_666_666_668).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let x: Vec<f64> = (0..20).map(|_| rng.random_range(-8.0..8.0)).collect();
            let neg: Vec<f64> = x.iter().map(|v| -v).collect();
            let (a, b) = (t.log_density(&x), t.log_density(&neg));
            assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn shared_cov_fast_path_matches_generic() {
        let d = 4;
        let cov = shared_gmm_covariance(d);
        let means = vec![vec![1.0; d], vec![0.0; d], vec![-1.0; d]];
        let fast = GaussianMixture::new(&[1.0; 3], &means, &[cov.clone(), cov.clone(), cov.clone()]).unwrap();
        assert!(fast.shared.is_some());
        let x = [0.3, -1.2, 2.0, 0.1];
        let direct = logsumexp(&[
            (1.0f64 / 3.0).ln() + fast.component_log_density(0, &x),
            (1.0f64 / 3.0).ln() + fast.component_log_density(1, &x),
            (1.0f64 / 3.0).ln() + fast.component_log_density(2, &x),
        ]);
        assert!((fast.log_density(&x) - direct).abs() < 1e-12);
    }

    #[test]
    fn toy_density_integrates_to_one_in_2d() {
        let t = make_shared_cov_gmm(2).unwrap();
        let h = 0.05;
        let mut sum = 0.0;
        for i in -400..=400 {
            for j in -400..=400 {
                sum += t.log_density(&[i as f64 * h, j as f64 * h]).exp();
            }
        }
        assert!((sum * h * h - 1.0).abs() < 1e-3);
    }

    #[test]
    fn five_mixture_mean_and_peak() {
        let t = make_five_mixture().unwrap();
        let (means, covs) = five_mixture_components();
        let avg: Vec<f64> = (0..2).map(|j| means.iter().map(|m| m[j]).sum::<f64>() / 5.0).collect();
        let truth = &t.ground_truth("identity").unwrap().value;
        assert!((truth[0] - 2.16).abs() < 1e-12 && (truth[1] - 2.18).abs() < 1e-12);
        assert!((truth[0] - avg[0]).abs() < 1e-12 && (truth[1] - avg[1]).abs() < 1e-12);
        // reported value agrees in the first coordinate only
        assert_eq!(FIVE_MIXTURE_REPORTED_MEAN[0], 2.16);
        let comp = Gaussian::new(means[0].clone(), &covs[0]).unwrap();
        let lower = (0.2f64).ln() + comp.log_density(&means[0]);
        assert!(t.log_density(&means[0]) >= lower);
        assert!(t.log_density(&means[0]).is_finite());
    }

    #[test]
    fn banana_properties() {
        let t = make_banana(3.0, 2.0, 10.0).unwrap();
        assert!(!t.normalized());
        // on the ridge with x2 = 0 the exponent vanishes
        assert_eq!(t.log_density(&[0.4, 0.0]), 0.0);
        assert_eq!(t.log_density(&[0.1, 1.7]), t.log_density(&[0.1, -1.7]));
        let truth = t.ground_truth("identity").unwrap();
        assert_eq!(truth.provenance, Provenance::Quadrature);
        assert!(truth.value[0].abs() < 1e-6 && truth.value[1].abs() < 1e-12);
    }

    #[test]
    fn banana_quadrature_normalizer_matches_closed_form() {
        // Integrating the x1 Gaussian leaves sqrt(2 pi) eta1 / b, and the x2
        // factor is sqrt(2 pi) eta2.
        let b = Banana { eta1: 3.0, eta2: 2.0, b: 10.0 };
        let (z, _) = b.quadrature_moments(2001, 1001);
        let exact = 2.0 * std::f64::consts::PI * 3.0 * 2.0 / 10.0;
        assert!((z - exact).abs() < 1e-9 * exact);
    }

    fn pima() -> PimaDesign {
        PimaDesign::bundled().unwrap()
    }

    #[test]
    fn pima_standardization() {
        let p = pima();
        assert_eq!(p.n(), 30);
        assert_eq!(p.dim(), 9);
        for i in 0..30 {
            assert_eq!(p.x.row(i)[0], 1.0);
        }
        for j in 1..9 {
            let col: Vec<f64> = (0..30).map(|i| p.x.row(i)[j]).collect();
            let m = col.iter().sum::<f64>() / 30.0;
            let v = col.iter().map(|c| (c - m).powi(2)).sum::<f64>() / 30.0;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        }
        assert!(p.y.iter().all(|&y| y == 0.0 || y == 1.0));
    }

    #[test]
    fn pima_ingest_errors() {
        let p = Path::new("x.csv");
        let good_row = "1,2,3,4,5,6,7,8,1\n";
        assert!(matches!(parse_pima(&good_row.repeat(5), p), Err(Error::Ingest { .. })));
        let mut text = String::from("a,b,c,d,e,f,g,h,outcome\n");
        for i in 0..30 {
            text.push_str(&format!("{i},2,{},4,5,6,7,8,{}\n", i * i, i % 2));
        }
        let err = parse_pima(&text, p).unwrap_err().to_string();
        assert!(err.contains("b is constant"), "{err}");
        let bad = text.replace("3,2,9,", "3,x,9,");
        let err = parse_pima(&bad, p).unwrap_err().to_string();
        assert!(err.contains("not numeric"), "{err}");
        assert!(matches!(load_pima("/nonexistent/pima.csv"), Err(Error::Io { .. })));
    }

    #[test]
    fn logistic_posterior_values() {
        let t = make_logistic_posterior(pima());
        assert!((t.log_density(&[0.0; 9]) + 30.0 * 2f64.ln()).abs() < 1e-12);

        // a single huge linear predictor with y = 1 contributes ~0, no overflow
        let one = PimaDesign {
            x: RowMatrix::from_vec(1, 1, vec![1.0]).unwrap(),
            y: vec![1.0],
        };
        let post = LogisticPosterior::new(one);
        let v = post.log_density(&[700.0]);
        assert!((v + 0.5 * 700.0 * 700.0).abs() < 1e-9);
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let p = pima();
        let post = LogisticPosterior::new(p.clone());
        let g0 = post.gradient(&[0.0; 9]);
        for j in 0..9 {
            let expect: f64 = (0..30).map(|i| (p.y[i] - 0.5) * p.x.row(i)[j]).sum();
            assert!((g0[j] - expect).abs() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let z: Vec<f64> = (0..9).map(|_| rng.random_range(-1.5..1.5)).collect();
            let g = post.gradient(&z);
            for j in 0..9 {
                let h = 1e-5;
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[j] += h;
                zm[j] -= h;
                let fd = (post.log_density(&zp) - post.log_density(&zm)) / (2.0 * h);
                assert!((fd - g[j]).abs() <= 1e-5 * g[j].abs().max(1.0), "fd {fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn targets_finite_on_wide_cloud() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let toy = make_shared_cov_gmm(20).unwrap();
        let five = make_five_mixture().unwrap();
        let banana = make_banana(3.0, 2.0, 10.0).unwrap();
        let logit = make_logistic_posterior(pima());
        for _ in 0..10_000 {
            let x20: Vec<f64> = (0..20).map(|_| rng.random_range(-45.0..45.0)).collect();
            assert!(toy.log_density(&x20).is_finite());
            let x2 = [rng.random_range(-8.0..12.0), rng.random_range(-8.0..12.0)];
            assert!(five.log_density(&x2).is_finite());
            let xb = [rng.random_range(-30.0..30.0), rng.random_range(-20.0..20.0)];
            assert!(banana.log_density(&xb).is_finite());
            let z: Vec<f64> = (0..9).map(|_| rng.random_range(-10.0..10.0)).collect();
            assert!(logit.log_density(&z).is_finite());
        }
    }

    #[test]
    fn integrands() {
        assert_eq!(integrand_registry("first_coord_squared").unwrap().eval(&[3.0, 4.0]), vec![9.0]);
        assert_eq!(integrand_registry("identity").unwrap().eval(&[3.0, 4.0]), vec![3.0, 4.0]);
        assert_eq!(integrand_registry("squared_norm").unwrap().eval(&[3.0, 4.0]), vec![25.0]);
        assert!(matches!(integrand_registry("cube"), Err(Error::Unknown { .. })));
    }
}
