//! Empirical checks of well-posedness and long-time behavior.
//!
//! Every probe is deterministic given its inputs and seed: random draws come
//! from per-task ChaCha streams and parallel results are reduced in index
//! order.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::delay::{DelayError, IgnoranceReport, SegmentReport};
use crate::history::{HistoryError, HistorySegment, HistoryView, Space, Trajectory};
use crate::solver::{solve, solve_with, PicardStart, ProblemSpec, SolveOptions, SolverConfig, SolverError};

/// Slack on the continuous-dependence inequality for discretization error.
pub const BOUND_SLACK: f64 = 0.05;
/// State norm beyond which a long run counts as not dissipative.
pub const BLOWUP_NORM: f64 = 1e6;
/// Fuzz trials used to gate uniqueness certification.
pub const GATE_TRIALS: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("horizon below resolution; decrease dt or q (t1 = {t1:.3e}, dt = {dt:.3e})")]
    BelowResolution { t1: f64, dt: f64 },
    #[error("delay vanishes at the initial segment (η(φ) = {0}); the dependence bound needs η(φ) > 0")]
    VanishingDelay(f64),
    #[error("initial segment is not in the Lipschitz class: quotient {quotient} exceeds L = {bound}")]
    OutsideLipschitzClass { quotient: f64, bound: f64 },
    #[error("delay functional is not locally Lipschitz near the initial segment")]
    DelayNotLipschitz,
    #[error("nonlinearity is not of bounded type")]
    Unbounded,
    #[error("only {found} valid time pairs in the tail; need at least 10")]
    TooFewPairs { found: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Delay(#[from] DelayError),
    #[error(transparent)]
    History(#[from] HistoryError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    PreconditionUnverified,
}

#[derive(Clone, Debug, Serialize)]
pub struct UniquenessReport {
    pub status: Status,
    pub max_divergence: f64,
    pub threshold: f64,
    pub n_variants: usize,
    /// Steps that needed fixed-point resolution in the reference solve.
    pub picard_steps: usize,
    pub gate: Option<IgnoranceSummary>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct IgnoranceSummary {
    pub passes: bool,
    pub trials: usize,
    pub max_deviation: f64,
    pub segment: Option<SegmentReport>,
}

impl From<&IgnoranceReport> for IgnoranceSummary {
    fn from(r: &IgnoranceReport) -> Self {
        Self {
            passes: r.passes,
            trials: r.trials,
            max_deviation: r.max_deviation,
            segment: Some(r.segment.clone()),
        }
    }
}

/// Re-solve with randomized fixed-point starts and compare.
///
/// Certification is refused unless the ignorance fuzz passes at `φ` first.
pub fn uniqueness_probe(
    problem: Arc<ProblemSpec>,
    initial: &HistorySegment,
    cfg: &SolverConfig,
    n_variants: usize,
    seed: u64,
) -> Result<UniquenessReport, VerifyError> {
    let threshold = 10.0 * cfg.picard_tol;
    let gate = match problem.delay().verify_ignorance(initial, GATE_TRIALS, seed) {
        Ok(rep) => IgnoranceSummary::from(&rep),
        Err(DelayError::SegmentUnknown) => IgnoranceSummary {
            passes: false,
            trials: 0,
            max_deviation: f64::NAN,
            segment: None,
        },
        Err(e) => return Err(e.into()),
    };
    if !gate.passes {
        return Ok(UniquenessReport {
            status: Status::PreconditionUnverified,
            max_divergence: f64::NAN,
            threshold,
            n_variants,
            picard_steps: 0,
            gate: Some(gate),
            note: Some("precondition unverified: ignorance fuzz failed".into()),
        });
    }
    let scale = 1e-3 * initial.sup_norm().max(1.0);
    let runs: Vec<Trajectory> = (0..n_variants.max(1))
        .into_par_iter()
        .map(|i| {
            let opts = SolveOptions {
                picard_start: PicardStart::Randomized {
                    seed: seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i as u64 + 1)),
                    scale,
                },
            };
            solve_with(problem.clone(), initial, cfg, opts)
        })
        .collect::<Result<_, _>>()?;
    let mut max_divergence: f64 = 0.0;
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            max_divergence = max_divergence.max(path_gap(&runs[i], &runs[j], f64::INFINITY));
        }
    }
    let picard_steps = runs[0].log().picard_steps;
    Ok(UniquenessReport {
        status: if max_divergence <= threshold {
            Status::Pass
        } else {
            Status::Fail
        },
        max_divergence,
        threshold,
        n_variants,
        picard_steps,
        gate: Some(gate),
        note: (picard_steps == 0).then(|| "no step needed fixed-point resolution; variants coincide".to_string()),
    })
}

/// Largest state-norm gap between two runs over stored times `≤ until`.
fn path_gap(a: &Trajectory, b: &Trajectory, until: f64) -> f64 {
    let space = a.space();
    a.times()
        .iter()
        .enumerate()
        .take_while(|(_, &t)| t <= until)
        .map(|(i, _)| space.distance(a.value(i), b.value(i)))
        .fold(0.0, f64::max)
}

/// Inputs of the continuous-dependence probe.
#[derive(Clone, Debug, Serialize)]
pub struct DependenceSettings {
    /// Radius ω of the neighborhood on which `L_η` is estimated.
    pub omega: f64,
    pub q: f64,
    /// Lipschitz bound `L` of the initial-data class; measured when absent.
    pub lipschitz_class: Option<f64>,
    /// `L_η`; estimated when absent.
    pub lipschitz_delay: Option<f64>,
    pub lipschitz_trials: usize,
}

impl DependenceSettings {
    pub fn new(omega: f64, q: f64) -> Self {
        Self {
            omega,
            q,
            lipschitz_class: None,
            lipschitz_delay: None,
            lipschitz_trials: 400,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct WellPosednessConstants {
    pub l_b: f64,
    pub l: f64,
    pub l_eta: f64,
    pub omega: f64,
    pub q: f64,
    pub alpha: f64,
    pub eta_phi: f64,
    pub t_exit: f64,
    pub t1: f64,
    /// `(1 - L_B t₁ [1 + L L_η])⁻¹`.
    pub bound_factor: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DependenceReport {
    pub status: Status,
    pub constants: WellPosednessConstants,
    pub epsilon: f64,
    pub worst_ratio: f64,
    pub allowed_ratio: f64,
    pub within_bound: usize,
    pub ratios: Vec<f64>,
}

/// Check `max_{[-r, t₁]} ‖u^k - u‖ ≤ (1 - L_B t₁[1 + L L_η])⁻¹ ‖φ^k - φ‖_C`
/// on random perturbations of size at most `ε`.
///
/// `t₁ = min{¾η(φ), q/(L_B[1 + L L_η]), t_exit}` where `t_exit` is the first
/// time any run leaves the `α`-ball around `φ`, `α = min(ω, ¼η(φ)/L_η, 1)`.
/// `L_B` is taken over the value range the runs actually visit, `L` over
/// `φ` and all perturbations.
pub fn continuous_dependence_probe(
    problem: Arc<ProblemSpec>,
    initial: &HistorySegment,
    cfg: &SolverConfig,
    settings: &DependenceSettings,
    n_perturbations: usize,
    epsilon: f64,
    seed: u64,
) -> Result<DependenceReport, VerifyError> {
    if !(settings.q > 0.0 && settings.q < 1.0) {
        return Err(VerifyError::Invalid(format!(
            "q must lie in (0, 1), got {}",
            settings.q
        )));
    }
    if !(settings.omega > 0.0) {
        return Err(VerifyError::Invalid("omega must be positive".into()));
    }
    if !(epsilon >= 0.0) {
        return Err(VerifyError::Invalid("epsilon must be nonnegative".into()));
    }
    let eta_phi = problem.delay().evaluate(initial)?;
    if eta_phi <= 0.0 {
        return Err(VerifyError::VanishingDelay(eta_phi));
    }
    let l_eta = match settings.lipschitz_delay {
        Some(l) => l,
        None => {
            let est =
                problem
                    .delay()
                    .estimate_local_lipschitz(initial, settings.omega, settings.lipschitz_trials, seed)?;
            if !est.locally_lipschitz {
                return Err(VerifyError::DelayNotLipschitz);
            }
            est.estimate
        }
    };
    let alpha = if l_eta > 0.0 {
        settings.omega.min(0.25 * eta_phi / l_eta).min(1.0)
    } else {
        settings.omega.min(1.0)
    };

    let perturbed: Vec<HistorySegment> = (0..n_perturbations)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64 + 1);
            perturb(initial, epsilon, &mut rng)
        })
        .collect::<Result<_, _>>()?;
    let measured_l = perturbed
        .iter()
        .map(HistorySegment::lipschitz_quotient)
        .fold(initial.lipschitz_quotient(), f64::max);
    let l = match settings.lipschitz_class {
        Some(bound) => {
            if measured_l > bound * (1.0 + 1e-12) {
                return Err(VerifyError::OutsideLipschitzClass {
                    quotient: measured_l,
                    bound,
                });
            }
            bound
        }
        None => measured_l,
    };

    let horizon = 0.75 * eta_phi;
    let run_cfg = cfg.with_t_end(horizon);
    let base = solve(problem.clone(), initial, &run_cfg)?;
    let runs: Vec<Trajectory> = perturbed
        .par_iter()
        .map(|phi_k| solve(problem.clone(), phi_k, &run_cfg))
        .collect::<Result<_, _>>()?;

    let (mut lo, mut hi) = value_range(&base);
    for tr in &runs {
        let (a, b) = value_range(tr);
        lo = lo.min(a);
        hi = hi.max(b);
    }
    let l_b = problem.nonlinearity().lipschitz_bound_on(lo, hi);

    let mut t_exit = horizon;
    for tr in std::iter::once(&base).chain(&runs) {
        t_exit = t_exit.min(exit_time(tr, initial, alpha)?);
    }
    let growth = l_b * (1.0 + l * l_eta);
    let t_q = if growth > 0.0 {
        settings.q / growth
    } else {
        f64::INFINITY
    };
    let t1 = horizon.min(t_q).min(t_exit);
    if t1 <= cfg.dt {
        return Err(VerifyError::BelowResolution { t1, dt: cfg.dt });
    }
    let bound_factor = 1.0 / (1.0 - growth * t1);

    let mut ratios = Vec::with_capacity(runs.len());
    let mut within_bound = 0;
    let allowed_ratio = bound_factor * (1.0 + BOUND_SLACK);
    for (phi_k, tr) in perturbed.iter().zip(&runs) {
        let delta = phi_k.distance(initial)?;
        let mut gap = delta.max(path_gap(tr, &base, t1));
        let mut a = vec![0.0; base.space().dim()];
        let mut b = vec![0.0; base.space().dim()];
        tr.path().eval_into(t1, &mut a)?;
        base.path().eval_into(t1, &mut b)?;
        gap = gap.max(base.space().distance(&a, &b));
        let ratio = if delta > 0.0 { gap / delta } else { 0.0 };
        if gap <= allowed_ratio * delta {
            within_bound += 1;
        }
        ratios.push(ratio);
    }
    let worst_ratio = ratios.iter().copied().fold(0.0, f64::max);
    Ok(DependenceReport {
        status: if within_bound == ratios.len() {
            Status::Pass
        } else {
            Status::Fail
        },
        constants: WellPosednessConstants {
            l_b,
            l,
            l_eta,
            omega: settings.omega,
            q: settings.q,
            alpha,
            eta_phi,
            t_exit,
            t1,
            bound_factor,
        },
        epsilon,
        worst_ratio,
        allowed_ratio,
        within_bound,
        ratios,
    })
}

/// `φ + ε ρ` with `ρ` piecewise linear, knot values of norm at most one.
fn perturb(phi: &HistorySegment, epsilon: f64, rng: &mut ChaCha8Rng) -> Result<HistorySegment, VerifyError> {
    let r = phi.horizon();
    let space = phi.space();
    let dim = space.dim();
    let mut times: Vec<f64> = phi.times().to_vec();
    for _ in 0..8 {
        times.push(rng.random_range(-r..0.0));
    }
    times.sort_by(f64::total_cmp);
    times.dedup_by(|x, y| (*x - *y).abs() < 1e-3 * r);
    if *times.last().unwrap() != 0.0 {
        times.push(0.0);
    }
    times[0] = -r;
    let mut data = Vec::with_capacity(times.len() * dim);
    let mut buf = vec![0.0; dim];
    for &t in &times {
        phi.eval_into(t, &mut buf)?;
        let mut dir: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let n = space.norm(&dir);
        let size = epsilon * rng.random_range(0.5..=1.0);
        if n > 0.0 {
            dir.iter_mut().for_each(|x| *x *= size / n);
        }
        data.extend(buf.iter().zip(&dir).map(|(a, d)| a + d));
    }
    Ok(HistorySegment::from_parts(r, space, times, data)?)
}

fn value_range(tr: &Trajectory) -> (f64, f64) {
    let init = tr.initial().knots().flat_map(|(_, v)| v.iter().copied());
    let solved = (0..tr.times().len()).flat_map(|i| tr.value(i).iter().copied());
    init.chain(solved)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
}

/// First stored time at which `u_t` is farther than `alpha` from `φ`.
fn exit_time(tr: &Trajectory, phi: &HistorySegment, alpha: f64) -> Result<f64, VerifyError> {
    for &t in tr.times() {
        if tr.window(t)?.distance(phi)? > alpha {
            return Ok(t);
        }
    }
    Ok(f64::INFINITY)
}

/// Long-run samples of one ensemble member.
#[derive(Clone, Debug, Serialize)]
pub struct TailSample {
    pub member: usize,
    pub times: Vec<f64>,
    #[serde(skip)]
    pub values: Vec<f64>,
    pub space: Space,
}

impl TailSample {
    fn value(&self, i: usize) -> &[f64] {
        let d = self.space.dim();
        &self.values[i * d..(i + 1) * d]
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AttractorDiagnostics {
    pub status: Status,
    pub note: Option<String>,
    pub t_long: f64,
    pub horizon: f64,
    pub members: usize,
    /// Eventual sup of `‖u_t‖_C` over the last fifth of every run.
    pub dissipation_radius: f64,
    /// `sup‖B‖ / λ_min`, when `B` is bounded.
    pub a_priori_ceiling: Option<f64>,
    #[serde(skip)]
    pub tails: Vec<TailSample>,
    #[serde(skip)]
    pub windows: Vec<HistorySegment>,
}

/// Run every member of `ensemble` to `t_long` and measure the tail.
pub fn dissipation_probe(
    problem: Arc<ProblemSpec>,
    cfg: &SolverConfig,
    ensemble: &[HistorySegment],
    t_long: f64,
) -> Result<AttractorDiagnostics, VerifyError> {
    if !problem.nonlinearity().is_bounded() {
        return Err(VerifyError::Unbounded);
    }
    if ensemble.is_empty() {
        return Err(VerifyError::Invalid("empty ensemble".into()));
    }
    let r = problem.horizon();
    if !(t_long > r) {
        return Err(VerifyError::Invalid(format!(
            "t_long = {t_long} must exceed the horizon {r}"
        )));
    }
    let run_cfg = cfg.with_t_end(t_long);
    let tail_start = 0.8 * t_long;
    let outcomes: Vec<Result<Trajectory, SolverError>> = ensemble
        .par_iter()
        .map(|phi| solve(problem.clone(), phi, &run_cfg))
        .collect();
    let ceiling = problem
        .nonlinearity()
        .sup_norm_bound()
        .map(|s| s / problem.operator().min_rate());

    let mut tails = Vec::with_capacity(ensemble.len());
    let mut windows = Vec::new();
    let mut radius: f64 = 0.0;
    for (member, out) in outcomes.into_iter().enumerate() {
        let tr = match out {
            Ok(tr) => tr,
            Err(SolverError::NonFinite { time }) => {
                return Ok(not_observed(
                    format!("member {member} became non-finite at t = {time}"),
                    t_long,
                    r,
                    ensemble.len(),
                    ceiling,
                ));
            }
            Err(e) => return Err(e.into()),
        };
        let space = tr.space();
        let peak = (0..tr.times().len())
            .map(|i| space.norm(tr.value(i)))
            .fold(0.0, f64::max);
        if peak > BLOWUP_NORM {
            return Ok(not_observed(
                format!("member {member} reached norm {peak:.3e}"),
                t_long,
                r,
                ensemble.len(),
                ceiling,
            ));
        }
        let first = tr.times().partition_point(|&t| t < tail_start - r);
        let mut sample = TailSample {
            member,
            times: Vec::new(),
            values: Vec::new(),
            space,
        };
        for i in first..tr.times().len() {
            radius = radius.max(space.norm(tr.value(i)));
            if tr.times()[i] >= tail_start {
                sample.times.push(tr.times()[i]);
                sample.values.extend_from_slice(tr.value(i));
            }
        }
        let n_windows = 8;
        for k in 0..n_windows {
            let t = tail_start + (t_long - tail_start) * (k as f64 + 0.5) / n_windows as f64;
            windows.push(tr.window(t)?);
        }
        tails.push(sample);
    }
    Ok(AttractorDiagnostics {
        status: Status::Pass,
        note: None,
        t_long,
        horizon: r,
        members: ensemble.len(),
        dissipation_radius: radius,
        a_priori_ceiling: ceiling,
        tails,
        windows,
    })
}

fn not_observed(
    reason: String,
    t_long: f64,
    horizon: f64,
    members: usize,
    ceiling: Option<f64>,
) -> AttractorDiagnostics {
    AttractorDiagnostics {
        status: Status::Fail,
        note: Some(format!("dissipation not observed: {reason}")),
        t_long,
        horizon,
        members,
        dissipation_radius: f64::INFINITY,
        a_priori_ceiling: ceiling,
        tails: Vec::new(),
        windows: Vec::new(),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct HolderReport {
    /// Largest `‖u(t₁) - u(t₂)‖ / |t₁ - t₂|^{1/2}` over the sampled pairs.
    pub l0_estimate: f64,
    /// Largest Lipschitz quotient over the recorded tail windows.
    pub l_tilde_estimate: f64,
    /// Least-squares slope of `log‖Δu‖` against `log|Δt|`.
    pub exponent_fit: Option<f64>,
    pub valid_pairs: usize,
}

/// Sample time pairs on the tails, with `|Δt|` log-uniform between one step
/// and the smaller of a quarter horizon and a tenth of the tail length.
pub fn holder_regularity_probe(
    diag: &AttractorDiagnostics,
    pairs: usize,
    seed: u64,
) -> Result<HolderReport, VerifyError> {
    let usable: Vec<&TailSample> = diag.tails.iter().filter(|s| s.times.len() >= 3).collect();
    if usable.is_empty() {
        return Err(VerifyError::TooFewPairs { found: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut l0: f64 = 0.0;
    let mut valid = 0;
    let mut logs = Vec::with_capacity(pairs);
    for _ in 0..pairs {
        let s = usable[rng.random_range(0..usable.len())];
        let n = s.times.len();
        let step = (s.times[n - 1] - s.times[0]) / (n - 1) as f64;
        let max_lag = ((n - 1) / 10).min((0.25 * diag.horizon / step).round() as usize).max(1);
        let lag = (max_lag as f64).powf(rng.random_range(0.0..=1.0)).round().max(1.0) as usize;
        let lag = lag.min(n - 1);
        let i = rng.random_range(0..n - lag);
        let j = i + lag;
        let dt = s.times[j] - s.times[i];
        if !(dt > 0.0) {
            continue;
        }
        valid += 1;
        let du = s.space.distance(s.value(i), s.value(j));
        l0 = l0.max(du / dt.sqrt());
        if du > 0.0 {
            logs.push((dt.ln(), du.ln()));
        }
    }
    if valid < 10 {
        return Err(VerifyError::TooFewPairs { found: valid });
    }
    let l_tilde = diag
        .windows
        .iter()
        .map(HistorySegment::lipschitz_quotient)
        .fold(0.0, f64::max);
    Ok(HolderReport {
        l0_estimate: l0,
        l_tilde_estimate: l_tilde,
        exponent_fit: slope(&logs),
        valid_pairs: valid,
    })
}

fn slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 3 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// One section of a [`HadamardReport`]: either a measurement or the error
/// that prevented it.
#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Section<T> {
    Measured(T),
    Error(String),
}

impl<T> Section<T> {
    fn from_result<E: std::fmt::Display>(r: Result<T, E>) -> Self {
        match r {
            Ok(v) => Section::Measured(v),
            Err(e) => Section::Error(e.to_string()),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveSummary {
    pub end_time: f64,
    pub steps: usize,
    pub picard_steps: usize,
    pub clamp_events: usize,
    pub min_delay: f64,
    pub max_delay: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct HadamardSettings {
    pub dependence: DependenceSettings,
    pub n_variants: usize,
    pub n_perturbations: usize,
    pub epsilon: f64,
    pub ignorance_trials: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct HadamardReport {
    pub well_posed: bool,
    pub verdict: String,
    pub regime_note: Option<String>,
    pub ignorance: Section<IgnoranceSummary>,
    pub uniqueness: Section<UniquenessReport>,
    pub dependence: Section<DependenceReport>,
    pub solve: Section<SolveSummary>,
}

/// Run every well-posedness check and aggregate; failures are recorded per
/// section rather than aborting.
pub fn hadamard_report(
    problem: Arc<ProblemSpec>,
    initial: &HistorySegment,
    cfg: &SolverConfig,
    settings: &HadamardSettings,
) -> HadamardReport {
    let ignorance = Section::from_result(
        problem
            .delay()
            .verify_ignorance(initial, settings.ignorance_trials, settings.seed)
            .map(|r| IgnoranceSummary::from(&r)),
    );
    let uniqueness = Section::from_result(uniqueness_probe(
        problem.clone(),
        initial,
        cfg,
        settings.n_variants,
        settings.seed,
    ));
    let dependence = Section::from_result(continuous_dependence_probe(
        problem.clone(),
        initial,
        cfg,
        &settings.dependence,
        settings.n_perturbations,
        settings.epsilon,
        settings.seed,
    ));
    let solve_section = Section::from_result(solve(problem.clone(), initial, cfg).map(|tr| SolveSummary {
        end_time: tr.end_time(),
        steps: tr.times().len() - 1,
        picard_steps: tr.log().picard_steps,
        clamp_events: tr.log().clamp_events,
        min_delay: tr.log().min_delay,
        max_delay: tr.log().max_delay,
    }));

    let regime_note = match &ignorance {
        Section::Measured(IgnoranceSummary { segment: Some(seg), .. }) if seg.theta_lower > 0.0 => Some(format!(
            "state-independent (H) holds locally, η_ign = ½Θˡ(φ) = {}",
            0.5 * seg.theta_lower
        )),
        _ => None,
    };
    let ignorance_ok = matches!(&ignorance, Section::Measured(s) if s.passes);
    let uniqueness_ok = matches!(&uniqueness, Section::Measured(u) if u.status == Status::Pass);
    let dependence_ok = matches!(&dependence, Section::Measured(d) if d.status == Status::Pass);
    let solve_ok = matches!(&solve_section, Section::Measured(_));
    let well_posed = ignorance_ok && uniqueness_ok && dependence_ok && solve_ok;
    let verdict = if well_posed {
        "certified".to_string()
    } else if !ignorance_ok {
        "not certified: ignorance condition unverified".to_string()
    } else {
        let failed: Vec<&str> = [
            (uniqueness_ok, "uniqueness"),
            (dependence_ok, "dependence"),
            (solve_ok, "solve"),
        ]
        .iter()
        .filter(|(ok, _)| !ok)
        .map(|(_, n)| *n)
        .collect();
        format!("not certified: {} failed", failed.join(", "))
    };
    HadamardReport {
        well_posed,
        verdict,
        regime_note,
        ignorance,
        uniqueness,
        dependence,
        solve: solve_section,
    }
}
