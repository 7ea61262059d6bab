//! Modified adaptive multiple importance sampling.
//!
//! Each stage draws from the current proposal, the parameter is re-estimated
//! by moment matching, and once all stages are done every sample is
//! reweighted against the deterministic mixture `Omega^{-1} sum_l N_l q(., theta_l)`.
//! Weights are kept in log space throughout.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{CholeskyFactor, RowMatrix};
use crate::numeric::{derive_seed, format_sig17, logsumexp};
use crate::pointgen::{generate, SamplerKind};
use crate::proposals::{Family, FamilySpec, HStatistic, ProposalParam};
use crate::targets::{Integrand, Target};

/// How weights enter parameter updates and the final estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    /// Raw `pi / q` weights; needs a normalized target.
    Unnormalized,
    /// Weights divided by their per-stage sum.
    SelfNormalized,
}

/// One adaptation stage: its proposal, draws and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    /// Zero-based stage index.
    pub t: usize,
    pub theta: ProposalParam,
    pub samples: RowMatrix,
    /// `ln pi~(X_i)`.
    pub log_target: Vec<f64>,
    /// `ln pi~(X_i) - ln q(X_i, theta)`.
    pub stage_log_weights: Vec<f64>,
    pub point_seed: u64,
    /// The update after this stage failed and the parameter was carried over.
    pub update_failed: bool,
}

impl StageRecord {
    pub fn n(&self) -> usize {
        self.samples.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    stages: Vec<StageRecord>,
    sampler: SamplerKind,
    mode: WeightMode,
    final_theta: Option<ProposalParam>,
    recycled: Option<Vec<Vec<f64>>>,
}

impl Trace {
    /// Trace over already-run stages, without recycled weights.
    pub fn from_stages(stages: Vec<StageRecord>, sampler: SamplerKind, mode: WeightMode) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::invalid("trace needs at least one stage"));
        }
        let dim = stages[0].theta.dim();
        if stages.iter().any(|s| s.theta.dim() != dim || s.samples.cols() != dim) {
            return Err(Error::invalid("stages disagree on dimension"));
        }
        Ok(Self {
            stages,
            sampler,
            mode,
            final_theta: None,
            recycled: None,
        })
    }

    pub fn stages(&self) -> &[StageRecord] {
        &self.stages
    }

    pub fn schedule(&self) -> Vec<usize> {
        self.stages.iter().map(StageRecord::n).collect()
    }

    pub fn sampler(&self) -> SamplerKind {
        self.sampler
    }

    pub fn mode(&self) -> WeightMode {
        self.mode
    }

    /// `Omega_T = sum_t N_t`.
    pub fn omega(&self) -> usize {
        self.stages.iter().map(StageRecord::n).sum()
    }

    /// Parameter produced after the last stage.
    pub fn final_theta(&self) -> Option<&ProposalParam> {
        self.final_theta.as_ref()
    }

    pub fn recycled_log_weights(&self) -> Option<&[Vec<f64>]> {
        self.recycled.as_deref()
    }

    /// Recycled weights of stage `t` divided by their sum.
    pub fn normalized_stage_weights(&self, t: usize) -> Result<Vec<f64>> {
        let rec = self.require_recycled()?;
        let lw = rec
            .get(t)
            .ok_or_else(|| Error::invalid(format!("no stage {t}")))?;
        let lse = logsumexp(lw);
        Ok(lw.iter().map(|v| (v - lse).exp()).collect())
    }

    fn require_recycled(&self) -> Result<&[Vec<f64>]> {
        self.recycled
            .as_deref()
            .ok_or_else(|| Error::invalid("recycled weights missing; run recycle_weights first"))
    }

    /// One row per sample: `stage,sample_index,x_1..x_d,stage_log_weight,recycled_log_weight`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.stages[0].theta.dim();
        write!(w, "stage,sample_index")?;
        for j in 1..=d {
            write!(w, ",x_{j}")?;
        }
        writeln!(w, ",stage_log_weight,recycled_log_weight")?;
        for (s, rec) in self.stages.iter().enumerate() {
            for i in 0..rec.n() {
                write!(w, "{},{i}", rec.t)?;
                for v in rec.samples.row(i) {
                    write!(w, ",{}", format_sig17(*v))?;
                }
                let recycled = self
                    .recycled
                    .as_ref()
                    .map_or(String::new(), |r| format_sig17(r[s][i]));
                writeln!(w, ",{},{recycled}", format_sig17(rec.stage_log_weights[i]))?;
            }
        }
        Ok(())
    }
}

/// Estimator output plus the budget it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub value: Vec<f64>,
    pub method: String,
    pub schedule: Vec<usize>,
}

impl Estimate {
    pub fn stages(&self) -> usize {
        self.schedule.len()
    }

    /// Average per-stage sample count `Omega_T / T`.
    pub fn n_bar(&self) -> f64 {
        self.schedule.iter().sum::<usize>() as f64 / self.schedule.len().max(1) as f64
    }
}

/// Evaluates `ln w_l + ln q(x, theta_l)` for a list of proposals. Proposals
/// of the fixed-covariance family share one Cholesky factor, so `x` is
/// whitened once and compared against pre-whitened locations.
struct ProposalBank<'a> {
    params: Vec<&'a ProposalParam>,
    log_mix: Vec<f64>,
    shared: Option<SharedWhitening<'a>>,
}

struct SharedWhitening<'a> {
    chol: &'a CholeskyFactor,
    locations: Vec<Vec<f64>>,
    log_norm: f64,
}

impl<'a> ProposalBank<'a> {
    fn new(params: Vec<&'a ProposalParam>, log_mix: Vec<f64>) -> Self {
        let shared = (params[0].family() == Family::GaussianFixedCov).then(|| {
            let chol = params[0].chol();
            let d = chol.dim();
            let locations = params
                .iter()
                .map(|p| {
                    let mut out = vec![0.0; d];
                    chol.solve_lower(p.location(), &mut out);
                    out
                })
                .collect();
            SharedWhitening {
                chol,
                locations,
                log_norm: -0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * chol.log_det(),
            }
        });
        Self { params, log_mix, shared }
    }

    fn single(param: &'a ProposalParam) -> Self {
        Self::new(vec![param], vec![0.0])
    }

    fn len(&self) -> usize {
        self.params.len()
    }

    /// Fills `out[l]` with `ln w_l + ln q_l(x)`.
    fn log_terms(&self, x: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        match &self.shared {
            Some(sh) => {
                sh.chol.solve_lower(x, scratch);
                for ((o, loc), lm) in out.iter_mut().zip(&sh.locations).zip(&self.log_mix) {
                    let m: f64 = scratch.iter().zip(loc).map(|(a, b)| (a - b) * (a - b)).sum();
                    *o = lm + (sh.log_norm - 0.5 * m);
                }
            }
            None => {
                for ((o, p), lm) in out.iter_mut().zip(&self.params).zip(&self.log_mix) {
                    *o = lm + p.log_density_with(x, scratch);
                }
            }
        }
    }

    fn log_mixture(&self, x: &[f64], scratch: &mut [f64], terms: &mut [f64]) -> f64 {
        self.log_terms(x, scratch, terms);
        logsumexp(terms)
    }
}

fn check_param(spec: &FamilySpec, theta: &ProposalParam) -> Result<()> {
    if theta.family() != spec.family() || theta.dim() != spec.dim() {
        return Err(Error::invalid("parameter does not belong to the family"));
    }
    Ok(())
}

/// Draws `n` points with a fresh point set, pushes them through `Q(theta)` and
/// records `ln pi~ - ln q`.
pub fn run_stage(
    target: &Target,
    spec: &FamilySpec,
    theta: &ProposalParam,
    n: usize,
    sampler: SamplerKind,
    seed: u64,
) -> Result<StageRecord> {
    run_stage_indexed(target, spec, theta, n, sampler, seed, 0)
}

fn run_stage_indexed(
    target: &Target,
    spec: &FamilySpec,
    theta: &ProposalParam,
    n: usize,
    sampler: SamplerKind,
    seed: u64,
    t: usize,
) -> Result<StageRecord> {
    check_param(spec, theta)?;
    if target.dim() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            actual: target.dim(),
        });
    }
    if n == 0 {
        return Err(Error::invalid("stage size must be at least 1"));
    }
    let ps = generate(sampler, n, spec.input_dim(), seed)?;
    let d = spec.dim();
    let bank = ProposalBank::single(theta);
    let mut samples = RowMatrix::zeros(n, d);
    let mut log_target = Vec::with_capacity(n);
    let mut stage_log_weights = Vec::with_capacity(n);
    let mut z = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    let mut term = [0.0];
    for i in 0..n {
        let x = samples.row_mut(i);
        theta.transport_into(ps.row(i), &mut z, x);
        let lp = target.log_density(x);
        let lq = bank.log_mixture(x, &mut scratch, &mut term);
        let lw = lp - lq;
        if !lw.is_finite() {
            return Err(Error::Run {
                stage: t,
                reason: format!("non-finite log weight at sample {i} (log target {lp}, log proposal {lq})"),
            });
        }
        log_target.push(lp);
        stage_log_weights.push(lw);
    }
    Ok(StageRecord {
        t,
        theta: theta.clone(),
        samples,
        log_target,
        stage_log_weights,
        point_seed: seed,
        update_failed: false,
    })
}

/// Result of a parameter update.
#[derive(Debug, Clone, PartialEq)]
pub struct Update {
    pub theta: ProposalParam,
    /// The update diverged and `theta` is the stage's own parameter.
    pub kept_previous: bool,
}

/// Moment-matching update from one stage. Unnormalized:
/// `N^{-1} sum_i w_i h(X_i)`; normalized: `sum_i (w_i / sum w) h(X_i)`.
pub fn parameter_update(record: &StageRecord, spec: &FamilySpec, h: &HStatistic, normalized: bool) -> Result<Update> {
    check_param(spec, &record.theta)?;
    let d = spec.dim();
    if h.output_len(d) != spec.param_len() {
        return Err(Error::invalid(format!(
            "statistic has length {} but the family has {} parameters",
            h.output_len(d),
            spec.param_len()
        )));
    }
    let lw = &record.stage_log_weights;
    let mut acc = vec![0.0; spec.param_len()];
    if normalized {
        let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY || max.is_nan() {
            return Err(Error::DegenerateWeights { stage: record.t });
        }
        let mut total = 0.0;
        for (i, &l) in lw.iter().enumerate() {
            let w = (l - max).exp();
            total += w;
            h.accumulate(record.samples.row(i), w, &mut acc);
        }
        if !(total > 0.0) {
            return Err(Error::DegenerateWeights { stage: record.t });
        }
        acc.iter_mut().for_each(|a| *a /= total);
    } else {
        for (i, &l) in lw.iter().enumerate() {
            h.accumulate(record.samples.row(i), l.exp(), &mut acc);
        }
        let n = record.n() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
    }
    Ok(match spec.param(acc) {
        Ok(theta) => Update {
            theta,
            kept_previous: false,
        },
        Err(_) => Update {
            theta: record.theta.clone(),
            kept_previous: true,
        },
    })
}

#[allow(clippy::too_many_arguments)]
fn run_adaptive(
    target: &Target,
    spec: &FamilySpec,
    theta_1: &ProposalParam,
    schedule: &[usize],
    sampler: SamplerKind,
    h: &HStatistic,
    master_seed: u64,
    mode: WeightMode,
) -> Result<Trace> {
    if schedule.is_empty() {
        return Err(Error::invalid("schedule must contain at least one stage"));
    }
    check_param(spec, theta_1)?;
    let normalized = mode == WeightMode::SelfNormalized;
    let mut theta = theta_1.clone();
    let mut stages = Vec::with_capacity(schedule.len());
    for (t, &n) in schedule.iter().enumerate() {
        let seed = derive_seed(master_seed, &[t as u64]);
        let mut rec = run_stage_indexed(target, spec, &theta, n, sampler, seed, t)?;
        let upd = parameter_update(&rec, spec, h, normalized)?;
        rec.update_failed = upd.kept_previous;
        theta = upd.theta;
        stages.push(rec);
    }
    let mut trace = Trace::from_stages(stages, sampler, mode)?;
    trace.final_theta = Some(theta);
    recycle_weights(&mut trace);
    Ok(trace)
}

/// Modified AMIS with unnormalized weights. Refuses unnormalized targets.
pub fn run_mamis(
    target: &Target,
    spec: &FamilySpec,
    theta_1: &ProposalParam,
    schedule: &[usize],
    sampler: SamplerKind,
    h: &HStatistic,
    master_seed: u64,
) -> Result<Trace> {
    if !target.normalized() {
        return Err(Error::UnnormalizedTarget(format!(
            "target `{}` is known only up to a constant; use the self-normalized variant",
            target.name()
        )));
    }
    run_adaptive(target, spec, theta_1, schedule, sampler, h, master_seed, WeightMode::Unnormalized)
}

/// Modified AMIS with weights self-normalized within each stage, both in the
/// parameter updates and in the final estimator.
pub fn run_self_normalized_mamis(
    target: &Target,
    spec: &FamilySpec,
    theta_1: &ProposalParam,
    schedule: &[usize],
    sampler: SamplerKind,
    h: &HStatistic,
    master_seed: u64,
) -> Result<Trace> {
    run_adaptive(
        target,
        spec,
        theta_1,
        schedule,
        sampler,
        h,
        master_seed,
        WeightMode::SelfNormalized,
    )
}

/// Recomputes every sample's log weight against the deterministic mixture
/// of all stage proposals. Mixture terms are summed in a canonical order,
/// so the result does not depend on how the stages are listed.
pub fn recycle_weights(trace: &mut Trace) {
    let omega = trace.omega() as f64;
    let mut order: Vec<usize> = (0..trace.stages.len()).collect();
    order.sort_by(|&a, &b| {
        let (sa, sb) = (&trace.stages[a], &trace.stages[b]);
        sa.n().cmp(&sb.n()).then_with(|| {
            let ka = sa.theta.theta().iter().map(|v| v.to_bits());
            let kb = sb.theta.theta().iter().map(|v| v.to_bits());
            ka.cmp(kb)
        })
    });
    let bank = ProposalBank::new(
        order.iter().map(|&l| &trace.stages[l].theta).collect(),
        order
            .iter()
            .map(|&l| (trace.stages[l].n() as f64 / omega).ln())
            .collect(),
    );
    let d = trace.stages[0].theta.dim();
    let recycled = trace
        .stages
        .par_iter()
        .map(|rec| {
            let mut scratch = vec![0.0; d];
            let mut terms = vec![0.0; bank.len()];
            (0..rec.n())
                .map(|i| rec.log_target[i] - bank.log_mixture(rec.samples.row(i), &mut scratch, &mut terms))
                .collect()
        })
        .collect();
    trace.recycled = Some(recycled);
}

fn check_psi(psi: &Integrand, out: &[f64], stage: usize, sample: usize) -> Result<()> {
    if out.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteIntegrand {
            integrand: psi.name().to_string(),
            stage,
            sample,
        })
    }
}

/// Final estimator over the recycled weights.
///
/// The self-normalized path accumulates `psi` relative to its value at the
/// first sample, so a constant integrand is reproduced exactly.
pub fn mamis_estimate(trace: &Trace, psi: &Integrand) -> Result<Estimate> {
    let rec = trace.require_recycled()?;
    let d = trace.stages[0].theta.dim();
    let k = psi.output_len(d);
    let omega = trace.omega() as f64;
    let mut buf = vec![0.0; k];
    let value = match trace.mode {
        WeightMode::Unnormalized => {
            let mut acc = vec![0.0; k];
            for (s, stage) in trace.stages.iter().enumerate() {
                for i in 0..stage.n() {
                    psi.eval_into(stage.samples.row(i), &mut buf);
                    check_psi(psi, &buf, stage.t, i)?;
                    let w = rec[s][i].exp();
                    for (a, b) in acc.iter_mut().zip(&buf) {
                        *a += w * b;
                    }
                }
            }
            acc.iter().map(|a| a / omega).collect::<Vec<_>>()
        }
        WeightMode::SelfNormalized => {
            let mut reference = vec![0.0; k];
            psi.eval_into(trace.stages[0].samples.row(0), &mut reference);
            check_psi(psi, &reference, trace.stages[0].t, 0)?;
            let mut total = vec![0.0; k];
            for (s, stage) in trace.stages.iter().enumerate() {
                let lw = &rec[s];
                let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY || max.is_nan() {
                    return Err(Error::DegenerateWeights { stage: stage.t });
                }
                let mut acc = vec![0.0; k];
                let mut sum = 0.0;
                for (i, &l) in lw.iter().enumerate() {
                    psi.eval_into(stage.samples.row(i), &mut buf);
                    check_psi(psi, &buf, stage.t, i)?;
                    let w = (l - max).exp();
                    sum += w;
                    for ((a, b), r) in acc.iter_mut().zip(&buf).zip(&reference) {
                        *a += w * (b - r);
                    }
                }
                let share = stage.n() as f64 / omega;
                for (tot, a) in total.iter_mut().zip(&acc) {
                    *tot += share * (a / sum);
                }
            }
            reference.iter().zip(&total).map(|(r, t)| r + t).collect()
        }
    };
    if value.iter().any(|v: &f64| !v.is_finite()) {
        return Err(Error::Run {
            stage: trace.stages.len(),
            reason: "estimate is not finite".into(),
        });
    }
    Ok(Estimate {
        value,
        method: match trace.mode {
            WeightMode::Unnormalized => "mamis".into(),
            WeightMode::SelfNormalized => "sn_mamis".into(),
        },
        schedule: trace.schedule(),
    })
}

/// Ratio of sums over all recycled weights, `sum W psi / sum W` pooled
/// across stages. Unlike the per-stage form of [`mamis_estimate`] it stays
/// consistent while early proposals differ from the mixture; kept as a
/// diagnostic.
pub fn pooled_self_normalized_estimate(trace: &Trace, psi: &Integrand) -> Result<Estimate> {
    let rec = trace.require_recycled()?;
    let k = psi.output_len(trace.stages[0].theta.dim());
    let max = rec.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(Error::DegenerateWeights { stage: 0 });
    }
    let mut reference = vec![0.0; k];
    psi.eval_into(trace.stages[0].samples.row(0), &mut reference);
    check_psi(psi, &reference, trace.stages[0].t, 0)?;
    let mut buf = vec![0.0; k];
    let mut acc = vec![0.0; k];
    let mut sum = 0.0;
    for (stage, lw) in trace.stages.iter().zip(rec) {
        for (i, &l) in lw.iter().enumerate() {
            psi.eval_into(stage.samples.row(i), &mut buf);
            check_psi(psi, &buf, stage.t, i)?;
            let w = (l - max).exp();
            sum += w;
            for ((a, b), r) in acc.iter_mut().zip(&buf).zip(&reference) {
                *a += w * (b - r);
            }
        }
    }
    Ok(Estimate {
        value: reference.iter().zip(&acc).map(|(r, a)| r + a / sum).collect(),
        method: "pooled_sn_mamis".into(),
        schedule: trace.schedule(),
    })
}

/// Diagnostic estimator that weights every sample against one fixed
/// proposal `q(., theta*)` instead of the mixture.
pub fn auxiliary_estimate(trace: &Trace, theta_star: &ProposalParam, psi: &Integrand) -> Result<Estimate> {
    let d = trace.stages[0].theta.dim();
    if theta_star.dim() != d || theta_star.family() != trace.stages[0].theta.family() {
        return Err(Error::invalid("theta* does not belong to the trace's family"));
    }
    let bank = ProposalBank::single(theta_star);
    let k = psi.output_len(d);
    let mut acc = vec![0.0; k];
    let mut buf = vec![0.0; k];
    let mut scratch = vec![0.0; d];
    let mut term = [0.0];
    for stage in &trace.stages {
        for i in 0..stage.n() {
            let x = stage.samples.row(i);
            psi.eval_into(x, &mut buf);
            check_psi(psi, &buf, stage.t, i)?;
            let w = (stage.log_target[i] - bank.log_mixture(x, &mut scratch, &mut term)).exp();
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += w * b;
            }
        }
    }
    let omega = trace.omega() as f64;
    Ok(Estimate {
        value: acc.iter().map(|a| a / omega).collect(),
        method: "auxiliary".into(),
        schedule: trace.schedule(),
    })
}

/// Budget of the pilot runs that locate the target mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PilotConfig {
    pub stages: usize,
    pub points: usize,
    pub reps: usize,
}

impl Default for PilotConfig {
    fn default() -> Self {
        Self {
            stages: 32,
            points: 16,
            reps: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotResult {
    pub mean: Vec<f64>,
    /// Average of the final covariance blocks.
    pub cov: DMatrix<f64>,
}

/// Runs `reps` small self-normalized runs from `(0, vec I)` with the raw
/// second-moment statistic and averages their mean estimates and final
/// covariance blocks.
pub fn pilot_mean(
    target: &Target,
    spec: &FamilySpec,
    pilot: PilotConfig,
    sampler: SamplerKind,
    seed: u64,
) -> Result<PilotResult> {
    if spec.family() == Family::GaussianFixedCov {
        return Err(Error::invalid("pilot runs need a family with an adapted covariance"));
    }
    if pilot.reps == 0 || pilot.stages == 0 || pilot.points == 0 {
        return Err(Error::invalid("pilot budget must be positive"));
    }
    let d = spec.dim();
    let theta_1 = spec.param_from(&vec![0.0; d], &DMatrix::identity(d, d))?;
    let schedule = vec![pilot.points; pilot.stages];
    let mut mean = vec![0.0; d];
    let mut cov = DMatrix::zeros(d, d);
    for r in 0..pilot.reps {
        let trace = run_self_normalized_mamis(
            target,
            spec,
            &theta_1,
            &schedule,
            sampler,
            &HStatistic::Raw,
            derive_seed(seed, &[r as u64]),
        )?;
        let est = mamis_estimate(&trace, &Integrand::Identity)?;
        for (m, e) in mean.iter_mut().zip(&est.value) {
            *m += e / pilot.reps as f64;
        }
        let last = trace.final_theta().expect("run sets the final parameter");
        cov += last.scale_matrix() / pilot.reps as f64;
    }
    Ok(PilotResult { mean, cov })
}
