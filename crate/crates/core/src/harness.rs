//! Experiment driver: configuration, repetition loops, RMSE aggregation,
//! log-log slope fits and CSV output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::baselines::{default_start, grid_scan, prepare_baseline, BaselineProposal, BaselineVariant};
use crate::error::{Error, Result};
use crate::mamis::{mamis_estimate, pilot_mean, run_mamis, run_self_normalized_mamis, PilotConfig};
use crate::numeric::{derive_seed, format_sig17};
use crate::pointgen::SamplerKind;
use crate::proposals::{Family, FamilySpec, HStatistic, ProposalParam};
use crate::targets::{
    make_banana, make_five_mixture, make_logistic_posterior, make_shared_cov_gmm, shared_gmm_covariance, load_pima,
    Integrand, PimaDesign, Provenance, Target,
};
use crate::theory::{lq_deviation, plain_estimates};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "QMC_AMIS_OUTPUT_DIR";

const PILOT_TAG: u64 = 0x0070_696c_6f74;
const TRUTH_TAG: u64 = 0x0074_7275_7468;
const MAX_MOMENT_ORDER: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    ToyGmm,
    FiveMixture,
    Banana,
    Logistic,
    LqRates,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::ToyGmm,
        ExperimentKind::FiveMixture,
        ExperimentKind::Banana,
        ExperimentKind::Logistic,
        ExperimentKind::LqRates,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::ToyGmm => "toy_gmm",
            ExperimentKind::FiveMixture => "five_mixture",
            ExperimentKind::Banana => "banana",
            ExperimentKind::Logistic => "logistic",
            ExperimentKind::LqRates => "lq_rates",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentKind::ToyGmm => "three-component shared-covariance Gaussian mixture, psi = x_1^2",
            ExperimentKind::FiveMixture => "2-D mixture of five narrow normals, psi = x",
            ExperimentKind::Banana => "2-D banana-shaped density (eta1=3, eta2=2, b=10), psi = x",
            ExperimentKind::Logistic => "Bayesian logistic regression on pima (first 30 rows), psi = |z|^2",
            ExperimentKind::LqRates => "plain estimator of E[x_1^2] under N(0, I_2), L^q error",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim())
            .ok_or_else(|| Error::Unknown {
                kind: "experiment",
                name: s.trim().to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Mamis,
    SnMamis,
    Odis,
    Lapis,
    LapisT,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Mamis => "mamis",
            Method::SnMamis => "sn_mamis",
            Method::Odis => "odis",
            Method::Lapis => "lapis",
            Method::LapisT => "lapis_t",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "mamis" => Ok(Method::Mamis),
            "sn_mamis" => Ok(Method::SnMamis),
            "odis" => Ok(Method::Odis),
            "lapis" => Ok(Method::Lapis),
            "lapis_t" => Ok(Method::LapisT),
            other => Err(Error::Unknown {
                kind: "method",
                name: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub samplers: Vec<SamplerKind>,
    pub methods: Vec<Method>,
    /// Stages `T` per run.
    pub stages: usize,
    /// Per-stage sample counts `N_bar_T`, strictly increasing.
    pub budgets: Vec<usize>,
    /// Repetitions `J` per budget.
    pub reps: usize,
    pub seed: u64,
    pub family: Family,
    pub nu: f64,
    /// Dimension of the toy mixture and the `L^q` lab.
    pub dim: usize,
    pub pima: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub pilot: PilotConfig,
    /// Per-stage size and stage count of the logistic reference run.
    pub truth_budget: usize,
    pub truth_stages: usize,
    /// Moment order of the `L^q` lab.
    pub q: f64,
}

fn pow2_range(lo: u32, hi: u32) -> Vec<usize> {
    (lo..=hi).map(|k| 1usize << k).collect()
}

impl ExperimentConfig {
    /// Desk-scale defaults for `experiment`.
    pub fn new(experiment: ExperimentKind) -> Self {
        let (methods, budgets, family, reps, dim) = match experiment {
            ExperimentKind::ToyGmm => (vec![Method::Mamis], pow2_range(8, 13), Family::GaussianFixedCov, 20, 20),
            ExperimentKind::FiveMixture => (vec![Method::SnMamis], pow2_range(9, 13), Family::GaussianMeanCov, 20, 2),
            ExperimentKind::Banana => (vec![Method::SnMamis], pow2_range(9, 13), Family::GaussianMeanCov, 20, 2),
            ExperimentKind::Logistic => (vec![Method::SnMamis], pow2_range(8, 12), Family::StudentT, 20, 9),
            ExperimentKind::LqRates => (vec![], pow2_range(6, 13), Family::GaussianMeanCov, 50, 2),
        };
        Self {
            experiment,
            samplers: vec![SamplerKind::Mc, SamplerKind::Rqmc],
            methods,
            stages: 16,
            budgets,
            reps,
            seed: 1,
            family,
            nu: 2.0,
            dim,
            pima: None,
            output_dir: None,
            pilot: PilotConfig::default(),
            truth_budget: 1 << 15,
            truth_stages: 32,
            q: 2.0,
        }
    }

    /// Parses the flat `key = value` format. `#` starts a comment; lists
    /// are comma separated; budgets may be written as `2^k`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                line: idx + 1,
                message: format!("expected `key = value`, found `{line}`"),
            })?;
            pairs.push((idx + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let (exp_line, exp) = pairs
            .iter()
            .find(|(_, k, _)| k == "experiment")
            .map(|(l, _, v)| (*l, v.clone()))
            .ok_or_else(|| Error::Config {
                line: 0,
                message: "missing `experiment`".into(),
            })?;
        let kind = ExperimentKind::parse(&exp).map_err(|e| Error::Config {
            line: exp_line,
            message: e.to_string(),
        })?;
        let mut cfg = Self::new(kind);
        for (line, key, value) in &pairs {
            let err = |message: String| Error::Config { line: *line, message };
            let wrap = |e: Error| err(e.to_string());
            let int = |v: &str| v.parse::<usize>().map_err(|_| err(format!("`{key}` expects an integer, got `{v}`")));
            match key.as_str() {
                "experiment" => {}
                "sampler" | "samplers" => {
                    cfg.samplers = list(value).map(SamplerKind::parse).collect::<Result<_>>().map_err(wrap)?
                }
                "method" | "methods" => {
                    cfg.methods = list(value).map(Method::parse).collect::<Result<_>>().map_err(wrap)?
                }
                "T" | "stages" => cfg.stages = int(value)?,
                "budgets" => cfg.budgets = list(value).map(parse_budget).collect::<Result<_>>().map_err(wrap)?,
                "reps" | "J" => cfg.reps = int(value)?,
                "seed" => {
                    cfg.seed = value
                        .parse()
                        .map_err(|_| err(format!("`seed` expects an unsigned integer, got `{value}`")))?
                }
                "family" => cfg.family = Family::parse(value).map_err(wrap)?,
                "nu" => cfg.nu = value.parse().map_err(|_| err(format!("`nu` expects a number, got `{value}`")))?,
                "dim" | "d" => cfg.dim = int(value)?,
                "pima" => cfg.pima = Some(PathBuf::from(value)),
                "output_dir" => cfg.output_dir = Some(PathBuf::from(value)),
                "pilot_stages" => cfg.pilot.stages = int(value)?,
                "pilot_points" => cfg.pilot.points = int(value)?,
                "pilot_reps" => cfg.pilot.reps = int(value)?,
                "truth_budget" => cfg.truth_budget = parse_budget(value).map_err(wrap)?,
                "truth_stages" => cfg.truth_stages = int(value)?,
                "q" => cfg.q = value.parse().map_err(|_| err(format!("`q` expects a number, got `{value}`")))?,
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |message: String| Err(Error::Config { line: 0, message });
        if self.budgets.len() < 3 {
            return bad("need at least three budgets for a slope fit".into());
        }
        if self.budgets.windows(2).any(|w| w[0] >= w[1]) || self.budgets[0] == 0 {
            return bad("budgets must be positive and strictly increasing".into());
        }
        if self.reps < 2 {
            return bad("reps must be at least 2".into());
        }
        if self.samplers.is_empty() {
            return bad("no samplers configured".into());
        }
        if self.samplers.contains(&SamplerKind::Rqmc) && self.budgets.iter().any(|b| !b.is_power_of_two()) {
            return bad("RQMC budgets must be powers of two".into());
        }
        if self.experiment != ExperimentKind::LqRates {
            if self.methods.is_empty() {
                return bad("no methods configured".into());
            }
            if self.stages == 0 {
                return bad("T must be at least 1".into());
            }
        }
        if self.methods.contains(&Method::Mamis)
            && matches!(self.experiment, ExperimentKind::Banana | ExperimentKind::Logistic)
        {
            return bad(format!(
                "`mamis` needs a normalized target; {} is unnormalized, use `sn_mamis`",
                self.experiment.as_str()
            ));
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return bad("nu must be positive".into());
        }
        if !(self.q >= 1.0 && self.q <= MAX_MOMENT_ORDER) {
            return bad(format!("q must lie in [1, {MAX_MOMENT_ORDER}]"));
        }
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        Ok(())
    }

    /// Output directory: the config's, else `$QMC_AMIS_OUTPUT_DIR`, else `results`.
    pub fn resolved_output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("results"))
    }
}

fn list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn parse_budget(s: &str) -> Result<usize> {
    let s = s.trim();
    let parsed = match s.split_once('^') {
        Some(("2", k)) => k.trim().parse::<u32>().ok().filter(|k| *k < 48).map(|k| 1usize << k),
        Some(_) => None,
        None => s.parse().ok(),
    };
    parsed.ok_or_else(|| Error::invalid(format!("bad budget `{s}`")))
}

/// One `(method, sampler, budget)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesResult {
    pub method: String,
    pub sampler: SamplerKind,
    pub budget: usize,
    pub estimates: Vec<Vec<f64>>,
    pub rmse: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlopeFit {
    pub method: String,
    pub sampler: SamplerKind,
    pub slope: f64,
    pub intercept: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub experiment: String,
    pub stages: usize,
    pub truth: Vec<f64>,
    pub provenance: Provenance,
    pub series: Vec<SeriesResult>,
    pub fits: Vec<SlopeFit>,
}

impl ExperimentResult {
    pub fn rmse(&self, method: &str, sampler: SamplerKind, budget: usize) -> Option<f64> {
        self.series
            .iter()
            .find(|s| s.method == method && s.sampler == sampler && s.budget == budget)
            .and_then(|s| s.rmse)
    }

    pub fn slope(&self, method: &str, sampler: SamplerKind) -> Option<f64> {
        self.fits
            .iter()
            .find(|f| f.method == method && f.sampler == sampler)
            .map(|f| f.slope)
    }

    pub fn failures(&self) -> impl Iterator<Item = &SeriesResult> {
        self.series.iter().filter(|s| s.failure.is_some())
    }
}

/// `sqrt(J^{-1} sum_r |est_r - truth|^2)`.
pub fn rmse(estimates: &[Vec<f64>], truth: &[f64]) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::invalid("rmse needs at least one estimate"));
    }
    let mut acc = 0.0;
    for e in estimates {
        if e.len() != truth.len() {
            return Err(Error::DimensionMismatch {
                expected: truth.len(),
                actual: e.len(),
            });
        }
        acc += e.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok((acc / estimates.len() as f64).sqrt())
}

/// Least-squares line through `(ln budget, ln rmse)`; returns `(slope, intercept)`.
pub fn fit_loglog_slope(budgets: &[f64], rmses: &[f64]) -> Result<(f64, f64)> {
    if budgets.len() != rmses.len() || budgets.len() < 3 {
        return Err(Error::Fit("need at least three (budget, rmse) pairs".into()));
    }
    if let Some(r) = rmses.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
        return Err(Error::Fit(format!("rmse must be positive and finite, got {r}")));
    }
    if let Some(b) = budgets.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
        return Err(Error::Fit(format!("budget must be positive, got {b}")));
    }
    let xs: Vec<f64> = budgets.iter().map(|b| b.ln()).collect();
    let ys: Vec<f64> = rmses.iter().map(|r| r.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("budgets must not all be equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Everything shared by the repetitions of one experiment.
struct Setup {
    target: Target,
    psi: Integrand,
    truth: Vec<f64>,
    provenance: Provenance,
    spec: FamilySpec,
    theta_1: ProposalParam,
    h: HStatistic,
    odis_cov: DMatrix<f64>,
    mode_start: Vec<f64>,
}

fn build_target(cfg: &ExperimentConfig) -> Result<(Target, Integrand)> {
    Ok(match cfg.experiment {
        ExperimentKind::ToyGmm => (make_shared_cov_gmm(cfg.dim)?, Integrand::FirstCoordSquared),
        ExperimentKind::FiveMixture => (make_five_mixture()?, Integrand::Identity),
        ExperimentKind::Banana => (make_banana(3.0, 2.0, 10.0)?, Integrand::Identity),
        ExperimentKind::Logistic => {
            let design = match &cfg.pima {
                Some(p) => load_pima(p)?,
                None => PimaDesign::bundled()?,
            };
            (make_logistic_posterior(design), Integrand::SquaredNorm)
        }
        ExperimentKind::LqRates => return Err(Error::invalid("the L^q lab has no target")),
    })
}

fn build_setup(cfg: &ExperimentConfig) -> Result<Setup> {
    let (target, psi) = build_target(cfg)?;
    let d = target.dim();
    let odis_cov = match cfg.experiment {
        ExperimentKind::ToyGmm => shared_gmm_covariance(d),
        _ => DMatrix::identity(d, d),
    };
    let pilot_seed = derive_seed(cfg.seed, &[PILOT_TAG]);
    let (spec, theta_1, h) = match cfg.family {
        Family::GaussianFixedCov => {
            let spec = FamilySpec::gaussian_fixed_cov(odis_cov.clone())?;
            let start = if cfg.experiment == ExperimentKind::ToyGmm {
                vec![0.1; d]
            } else {
                let pilot_spec = FamilySpec::gaussian_mean_cov(d)?;
                pilot_mean(&target, &pilot_spec, cfg.pilot, SamplerKind::Rqmc, pilot_seed)?.mean
            };
            let theta = spec.param(start)?;
            (spec, theta, HStatistic::Identity)
        }
        family => {
            let spec = match family {
                Family::StudentT => FamilySpec::student_t(d, cfg.nu)?,
                _ => FamilySpec::gaussian_mean_cov(d)?,
            };
            let pilot = pilot_mean(&target, &spec, cfg.pilot, SamplerKind::Rqmc, pilot_seed)?;
            let cov = if cfg.experiment == ExperimentKind::Logistic {
                pilot.cov
            } else {
                DMatrix::identity(d, d)
            };
            let theta = spec.param_from(&pilot.mean, &cov)?;
            (spec, theta, HStatistic::Centered(pilot.mean))
        }
    };

    let (truth, provenance) = if cfg.experiment == ExperimentKind::Logistic {
        let schedule = vec![cfg.truth_budget; cfg.truth_stages];
        let trace = run_self_normalized_mamis(
            &target,
            &spec,
            &theta_1,
            &schedule,
            SamplerKind::Rqmc,
            &h,
            derive_seed(cfg.seed, &[TRUTH_TAG]),
        )?;
        (mamis_estimate(&trace, &psi)?.value, Provenance::SelfOracle)
    } else {
        let gt = target
            .ground_truth(psi.name())
            .ok_or_else(|| Error::invalid(format!("no ground truth for {}", psi.name())))?;
        (gt.value.clone(), gt.provenance)
    };

    let mode_start = if cfg.experiment == ExperimentKind::Banana {
        grid_scan(&|x: &[f64]| target.log_density(x), d, -2.0, 2.0, 40)
    } else {
        default_start(&target, &psi)
    };
    Ok(Setup {
        target,
        psi,
        truth,
        provenance,
        spec,
        theta_1,
        h,
        odis_cov,
        mode_start,
    })
}

/// Truth and provenance for `cfg`'s experiment.
pub fn experiment_truth(cfg: &ExperimentConfig) -> Result<(Vec<f64>, Provenance)> {
    if cfg.experiment == ExperimentKind::LqRates {
        return Ok((vec![1.0], Provenance::Analytic));
    }
    let s = build_setup(cfg)?;
    Ok((s.truth, s.provenance))
}

fn finish(
    cfg: &ExperimentConfig,
    stages: usize,
    truth: Vec<f64>,
    provenance: Provenance,
    series: Vec<SeriesResult>,
) -> ExperimentResult {
    let mut fits = Vec::new();
    let mut keys: Vec<(String, SamplerKind)> = Vec::new();
    for s in &series {
        if !keys.iter().any(|(m, k)| *m == s.method && *k == s.sampler) {
            keys.push((s.method.clone(), s.sampler));
        }
    }
    for (method, sampler) in keys {
        let (b, r): (Vec<f64>, Vec<f64>) = series
            .iter()
            .filter(|s| s.method == method && s.sampler == sampler)
            .filter_map(|s| s.rmse.map(|r| (s.budget as f64, r)))
            .unzip();
        if let Ok((slope, intercept)) = fit_loglog_slope(&b, &r) {
            fits.push(SlopeFit {
                method,
                sampler,
                slope,
                intercept,
            });
        }
    }
    ExperimentResult {
        experiment: cfg.experiment.as_str().to_string(),
        stages,
        truth,
        provenance,
        series,
        fits,
    }
}

fn collect_series(
    method: &str,
    sampler: SamplerKind,
    budget: usize,
    runs: Vec<Result<Vec<f64>>>,
    aggregate: impl Fn(&[Vec<f64>]) -> Result<f64>,
) -> SeriesResult {
    let mut estimates = Vec::with_capacity(runs.len());
    let mut failure = None;
    for r in runs {
        match r {
            Ok(v) => estimates.push(v),
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        }
    }
    let rmse = match &failure {
        None => match aggregate(&estimates) {
            Ok(v) => Some(v),
            Err(e) => {
                failure = Some(e.to_string());
                None
            }
        },
        Some(_) => None,
    };
    if failure.is_some() {
        estimates.clear();
    }
    SeriesResult {
        method: method.to_string(),
        sampler,
        budget,
        estimates,
        rmse,
        failure,
    }
}

fn run_lq_lab(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let f = |x: &[f64]| x[0] * x[0];
    let truth = vec![1.0];
    let mut series = Vec::new();
    for &sampler in &cfg.samplers {
        for &n in &cfg.budgets {
            let runs = match plain_estimates(&f, cfg.dim, sampler, n, cfg.reps, cfg.seed) {
                Ok(v) => v.into_iter().map(|e| Ok(vec![e])).collect(),
                Err(e) => vec![Err(e)],
            };
            series.push(collect_series("plain", sampler, n, runs, |est| {
                let flat: Vec<f64> = est.iter().map(|e| e[0]).collect();
                Ok(lq_deviation(&flat, 1.0, cfg.q))
            }));
        }
    }
    Ok(finish(cfg, 1, truth, Provenance::Analytic, series))
}

/// Runs every configured `(method, sampler, budget)` series for `reps`
/// repetitions with seed `hash(seed, budget, rep)`. A failing series is
/// recorded and the others continue.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    if cfg.experiment == ExperimentKind::LqRates {
        return run_lq_lab(cfg);
    }
    let setup = build_setup(cfg)?;
    let baseline = |m: Method| -> Option<Result<BaselineProposal>> {
        let variant = match m {
            Method::Odis => BaselineVariant::Odis(setup.odis_cov.clone()),
            Method::Lapis => BaselineVariant::Lapis,
            Method::LapisT => BaselineVariant::LapisT(cfg.nu),
            _ => return None,
        };
        Some(prepare_baseline(&setup.target, &setup.psi, variant, &setup.mode_start))
    };

    let mut series = Vec::new();
    for &method in &cfg.methods {
        let prepared = baseline(method);
        for &sampler in &cfg.samplers {
            for &budget in &cfg.budgets {
                let one_rep = |r: usize| -> Result<Vec<f64>> {
                    let seed = derive_seed(cfg.seed, &[budget as u64, r as u64]);
                    let schedule = vec![budget; cfg.stages];
                    match method {
                        Method::Mamis => {
                            let tr = run_mamis(&setup.target, &setup.spec, &setup.theta_1, &schedule, sampler, &setup.h, seed)?;
                            Ok(mamis_estimate(&tr, &setup.psi)?.value)
                        }
                        Method::SnMamis => {
                            let tr = run_self_normalized_mamis(
                                &setup.target,
                                &setup.spec,
                                &setup.theta_1,
                                &schedule,
                                sampler,
                                &setup.h,
                                seed,
                            )?;
                            Ok(mamis_estimate(&tr, &setup.psi)?.value)
                        }
                        _ => {
                            let proposal = match prepared.as_ref().expect("baseline prepared") {
                                Ok(p) => p,
                                Err(e) => return Err(Error::Run {
                                    stage: 0,
                                    reason: format!("baseline setup failed: {e}"),
                                }),
                            };
                            Ok(proposal
                                .estimate(&setup.target, &setup.psi, budget * cfg.stages, sampler, seed)?
                                .value)
                        }
                    }
                };
                let runs: Vec<Result<Vec<f64>>> = (0..cfg.reps).into_par_iter().map(one_rep).collect();
                series.push(collect_series(method.as_str(), sampler, budget, runs, |est| {
                    rmse(est, &setup.truth)
                }));
            }
        }
    }
    Ok(finish(cfg, cfg.stages, setup.truth.clone(), setup.provenance, series))
}

/// CSV text of `result`: one row per repetition and a summary row per series.
pub fn csv_string(result: &ExperimentResult) -> String {
    let k = result.truth.len();
    let mut out = String::from("experiment,method,sampler,T,budget,rep");
    for j in 1..=k {
        let _ = write!(out, ",estimate_{j}");
    }
    for j in 1..=k {
        let _ = write!(out, ",truth_{j}");
    }
    out.push_str(",rmse,slope\n");
    let truth: String = result.truth.iter().map(|t| format!(",{}", format_sig17(*t))).collect();
    let blank_est = ",".repeat(k);
    for s in &result.series {
        let prefix = format!(
            "{},{},{},{},{}",
            result.experiment,
            s.method,
            s.sampler.as_str(),
            result.stages,
            s.budget
        );
        if s.failure.is_some() {
            let _ = writeln!(out, "{prefix},failed{blank_est}{truth},,");
            continue;
        }
        for (r, e) in s.estimates.iter().enumerate() {
            let est: String = e.iter().map(|v| format!(",{}", format_sig17(*v))).collect();
            let _ = writeln!(out, "{prefix},{r}{est}{truth},,");
        }
        let j = s.estimates.len() as f64;
        let mean: String = (0..k)
            .map(|c| format!(",{}", format_sig17(s.estimates.iter().map(|e| e[c]).sum::<f64>() / j)))
            .collect();
        let slope = result
            .fits
            .iter()
            .find(|f| f.method == s.method && f.sampler == s.sampler)
            .map_or(String::new(), |f| format_sig17(f.slope));
        let rmse = s.rmse.map_or(String::new(), format_sig17);
        let _ = writeln!(out, "{prefix},summary{mean}{truth},{rmse},{slope}");
    }
    out
}

pub fn write_csv(result: &ExperimentResult, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, csv_string(result)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_examples() {
        let t = vec![2.0];
        assert_eq!(rmse(&[vec![2.0], vec![2.0]], &t).unwrap(), 0.0);
        assert_eq!(rmse(&[vec![3.0], vec![1.0]], &t).unwrap(), 1.0);
        assert_eq!(rmse(&[vec![4.0, 6.0]], &[1.0, 2.0]).unwrap(), 5.0);
        assert!(rmse(&[vec![1.0]], &[1.0, 2.0]).is_err());
        assert!(rmse(&[], &t).is_err());
    }

    #[test]
    fn slope_examples() {
        let b: Vec<f64> = (8..14).map(|k| (1u64 << k) as f64).collect();
        let inv: Vec<f64> = b.iter().map(|n| 3.0 / n).collect();
        assert!((fit_loglog_slope(&b, &inv).unwrap().0 + 1.0).abs() < 1e-12);
        let sq: Vec<f64> = b.iter().map(|n| 3.0 / n.sqrt()).collect();
        assert!((fit_loglog_slope(&b, &sq).unwrap().0 + 0.5).abs() < 1e-12);
        let flat = vec![0.7; b.len()];
        assert!(fit_loglog_slope(&b, &flat).unwrap().0.abs() < 1e-12);
        assert!(fit_loglog_slope(&b, &[1.0, 0.0, 1.0, 1.0, 1.0, 1.0]).is_err());
        assert!(fit_loglog_slope(&b[..2], &inv[..2]).is_err());
    }

    #[test]
    fn slope_is_unchanged_by_budget_rescaling() {
        let b = [256.0, 512.0, 1024.0, 2048.0];
        let r = [0.3, 0.21, 0.12, 0.09];
        let scaled: Vec<f64> = b.iter().map(|x| x * 16.0).collect();
        let (s1, i1) = fit_loglog_slope(&b, &r).unwrap();
        let (s2, i2) = fit_loglog_slope(&scaled, &r).unwrap();
        assert!((s1 - s2).abs() < 1e-12);
        assert!((i2 - (i1 - s1 * 16f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn config_parsing() {
        let cfg = ExperimentConfig::parse(
            "# toy run\nexperiment = toy_gmm\nsamplers = rqmc\nmethods = mamis, odis\nT = 8\nbudgets = 2^6, 2^7, 256\nreps = 3\nseed = 42\n",
        )
        .unwrap();
        assert_eq!(cfg.experiment, ExperimentKind::ToyGmm);
        assert_eq!(cfg.samplers, vec![SamplerKind::Rqmc]);
        assert_eq!(cfg.methods, vec![Method::Mamis, Method::Odis]);
        assert_eq!(cfg.budgets, vec![64, 128, 256]);
        assert_eq!((cfg.stages, cfg.reps, cfg.seed), (8, 3, 42));

        let err = ExperimentConfig::parse("experiment = banana\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }));
        assert!(ExperimentConfig::parse("samplers = mc\n").is_err());
        assert!(ExperimentConfig::parse("experiment = toy_gmm\nbudgets = 64, 32, 128\n").is_err());
        assert!(ExperimentConfig::parse("experiment = toy_gmm\nbudgets = 60, 70, 80\n").is_err());
        assert!(ExperimentConfig::parse("experiment = toy_gmm\nreps = 1\n").is_err());
        assert!(ExperimentConfig::parse("experiment = banana\nmethods = mamis\n").is_err());
        assert!(ExperimentConfig::parse("experiment = lq_rates\nq = 9\n").is_err());
        assert!(ExperimentConfig::parse("experiment = nope\n").is_err());
    }

    fn empty_result() -> ExperimentResult {
        ExperimentResult {
            experiment: "toy_gmm".into(),
            stages: 4,
            truth: vec![1.0],
            provenance: Provenance::Analytic,
            series: vec![],
            fits: vec![],
        }
    }

    #[test]
    fn empty_result_is_header_only() {
        assert_eq!(
            csv_string(&empty_result()),
            "experiment,method,sampler,T,budget,rep,estimate_1,truth_1,rmse,slope\n"
        );
    }

    #[test]
    fn csv_rows_and_failures() {
        let mut r = empty_result();
        for (b, rm) in [(64, 0.4), (128, 0.2), (256, 0.1)] {
            r.series.push(SeriesResult {
                method: "mamis".into(),
                sampler: SamplerKind::Mc,
                budget: b,
                estimates: vec![vec![1.0 + rm], vec![1.0 - rm]],
                rmse: Some(rm),
                failure: None,
            });
        }
        r.series.push(SeriesResult {
            method: "odis".into(),
            sampler: SamplerKind::Mc,
            budget: 64,
            estimates: vec![],
            rmse: None,
            failure: Some("mode search failed".into()),
        });
        r = finish(&ExperimentConfig::new(ExperimentKind::ToyGmm), 4, r.truth, r.provenance, r.series);
        let text = csv_string(&r);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 3 * 3 + 1);
        assert!(lines[3].starts_with("toy_gmm,mamis,mc,4,64,summary,"));
        let slope: f64 = lines[3].rsplit(',').next().unwrap().parse().unwrap();
        assert!((slope + 1.0).abs() < 1e-12);
        assert_eq!(lines[10], format!("toy_gmm,odis,mc,4,64,failed,,{},,", format_sig17(1.0)));
    }

    #[test]
    fn lq_lab_runs() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::LqRates);
        cfg.budgets = vec![16, 32, 64];
        cfg.reps = 4;
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.series.len(), 6);
        assert!(r.slope("plain", SamplerKind::Rqmc).is_some());
    }
}
