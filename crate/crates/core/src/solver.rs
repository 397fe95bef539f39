//! Exponential-Euler method of steps for `u̇ + Ãu = B(u(t - η(u_t)))`.
//!
//! Each step applies the semigroup exactly (mode by mode) and freezes the
//! delayed term at the step start. When the delay at the step end is shorter
//! than the step, the delayed argument falls inside the step being computed
//! and the step is resolved by fixed-point iteration instead.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::delay::{DelayError, DelayFunctional, EvalTrace};
use crate::history::{HistoryError, HistorySegment, SolutionPath, StepLog, Trajectory};
use crate::operators::{EvolutionOperator, Nonlinearity, OperatorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid solver config: {0}")]
    InvalidConfig(String),
    #[error("dt exceeds delay horizon (dt = {dt}, r = {horizon})")]
    DtExceedsHorizon { dt: f64, horizon: f64 },
    #[error("problem mismatch: {0}")]
    Mismatch(String),
    #[error(
        "Picard iteration did not converge at t = {time} after {iterations} iterations \
         (contraction estimate {contraction:.3e}); decrease dt"
    )]
    PicardDiverged {
        time: f64,
        iterations: u32,
        contraction: f64,
    },
    #[error("non-finite state at t = {time}")]
    NonFinite { time: f64 },
    #[error("sample time {time} outside [0, {end}]")]
    SampleOutOfRange { time: f64, end: f64 },
    #[error(transparent)]
    Delay(#[from] DelayError),
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// The full right-hand side: `Ã`, `B` and `η`, with horizon `r`.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    operator: EvolutionOperator,
    nonlinearity: Nonlinearity,
    delay: DelayFunctional,
    horizon: f64,
}

impl ProblemSpec {
    pub fn new(
        operator: EvolutionOperator,
        nonlinearity: Nonlinearity,
        delay: DelayFunctional,
    ) -> Result<Self, SolverError> {
        if operator.space() != nonlinearity.space() {
            return Err(SolverError::Mismatch(format!(
                "operator space {:?} differs from nonlinearity space {:?}",
                operator.space(),
                nonlinearity.space()
            )));
        }
        let horizon = delay.max_delay();
        Ok(Self {
            operator,
            nonlinearity,
            delay,
            horizon,
        })
    }

    pub fn operator(&self) -> &EvolutionOperator {
        &self.operator
    }

    pub fn nonlinearity(&self) -> &Nonlinearity {
        &self.nonlinearity
    }

    pub fn delay(&self) -> &DelayFunctional {
        &self.delay
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Same operator and nonlinearity, different delay.
    pub fn with_delay(&self, delay: DelayFunctional) -> Result<Self, SolverError> {
        Self::new(self.operator.clone(), self.nonlinearity.clone(), delay)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "default_picard_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_picard_max_iters")]
    pub picard_max_iters: u32,
    /// Output thinning for CSV export; the solver always keeps every step.
    #[serde(default = "default_record_stride")]
    pub record_stride: usize,
}

fn default_picard_tol() -> f64 {
    1e-10
}

fn default_picard_max_iters() -> u32 {
    50
}

fn default_record_stride() -> usize {
    1
}

impl SolverConfig {
    pub fn new(dt: f64, t_end: f64) -> Self {
        Self {
            dt,
            t_end,
            picard_tol: default_picard_tol(),
            picard_max_iters: default_picard_max_iters(),
            record_stride: default_record_stride(),
        }
    }

    pub fn with_t_end(&self, t_end: f64) -> Self {
        Self { t_end, ..self.clone() }
    }

    pub fn with_picard_tol(&self, picard_tol: f64) -> Self {
        Self {
            picard_tol,
            ..self.clone()
        }
    }

    pub fn validate(&self, horizon: f64) -> Result<(), SolverError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SolverError::InvalidConfig(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(SolverError::InvalidConfig(format!(
                "t_end must be nonnegative, got {}",
                self.t_end
            )));
        }
        if !(self.picard_tol > 0.0) {
            return Err(SolverError::InvalidConfig("picard_tol must be positive".into()));
        }
        if self.picard_max_iters == 0 {
            return Err(SolverError::InvalidConfig("picard_max_iters must be positive".into()));
        }
        if self.dt > horizon {
            return Err(SolverError::DtExceedsHorizon { dt: self.dt, horizon });
        }
        Ok(())
    }

    /// Step times `0 = s_0 < … < s_K = t_end` on the uniform `dt` grid, with a
    /// shorter final step when `t_end` is off-grid.
    pub fn grid(&self) -> Vec<f64> {
        let k = (self.t_end / self.dt - 1e-9).ceil().max(0.0) as usize;
        let mut times: Vec<f64> = (0..k).map(|m| m as f64 * self.dt).collect();
        if self.t_end > 0.0 || times.is_empty() {
            times.push(self.t_end);
        }
        times
    }
}

/// Initial iterate for implicitly resolved steps.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum PicardStart {
    /// The explicit step with the delayed term frozen at the step start.
    #[default]
    Predictor,
    /// The predictor plus a random offset of the given state norm.
    Randomized { seed: u64, scale: f64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolveOptions {
    pub picard_start: PicardStart,
}

pub fn solve(
    problem: Arc<ProblemSpec>,
    initial: &HistorySegment,
    cfg: &SolverConfig,
) -> Result<Trajectory, SolverError> {
    solve_with(problem, initial, cfg, SolveOptions::default())
}

pub fn solve_with(
    problem: Arc<ProblemSpec>,
    initial: &HistorySegment,
    cfg: &SolverConfig,
    opts: SolveOptions,
) -> Result<Trajectory, SolverError> {
    let r = problem.horizon();
    cfg.validate(r)?;
    if (initial.horizon() - r).abs() > 1e-12 * r.max(1.0) {
        return Err(SolverError::Mismatch(format!(
            "initial segment horizon {} differs from delay horizon {r}",
            initial.horizon()
        )));
    }
    let space = problem.operator().space();
    if initial.space() != space {
        return Err(SolverError::Mismatch(format!(
            "initial segment space {:?} differs from problem space {space:?}",
            initial.space()
        )));
    }
    let dim = space.dim();
    let grid = cfg.grid();
    let mut path = SolutionPath::new(initial.clone());
    let mut log = StepLog {
        picard_iterations: Vec::with_capacity(grid.len()),
        min_delay: f64::INFINITY,
        max_delay: f64::NEG_INFINITY,
        ..StepLog::default()
    };
    let mut rng = match opts.picard_start {
        PicardStart::Randomized { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        PicardStart::Predictor => None,
    };

    let op = problem.operator();
    let nl = problem.nonlinearity();
    let eta = problem.delay();
    let full = op.step_factors(cfg.dt);
    let mut short = None;

    let mut u_m = vec![0.0; dim];
    let mut delayed = vec![0.0; dim];
    let mut forcing = vec![0.0; dim];
    let mut next = vec![0.0; dim];
    let mut iterate = vec![0.0; dim];
    let mut trace = EvalTrace::default();

    for w in grid.windows(2) {
        let (s0, s1) = (w[0], w[1]);
        let h = s1 - s0;
        let factors = if (h - cfg.dt).abs() <= 1e-12 * cfg.dt {
            &full
        } else {
            short.get_or_insert_with(|| op.step_factors(h))
        };
        u_m.copy_from_slice(path.last_value());

        trace.clamp_events = 0;
        let d0 = eta.evaluate_traced(&path.window_view(s0), &mut trace)?;
        log.clamp_events += trace.clamp_events;
        log.min_delay = log.min_delay.min(d0);
        log.max_delay = log.max_delay.max(d0);
        path.eval_into(s0 - d0, &mut delayed)?;
        nl.apply_into(&delayed, &mut forcing);
        op.exp_euler_step(factors, &u_m, &forcing, &mut next);
        check_finite(&next, s1)?;
        path.push(s1, &next);

        let d1 = eta.evaluate(&path.window_view(s1))?;
        if d1 >= h {
            log.picard_iterations.push(1);
            continue;
        }

        log.picard_steps += 1;
        iterate.copy_from_slice(&next);
        if let (Some(rng), PicardStart::Randomized { scale, .. }) = (rng.as_mut(), opts.picard_start) {
            let mut dir: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let n = space.norm(&dir);
            if n > 0.0 {
                dir.iter_mut().for_each(|x| *x *= scale / n);
            }
            for (v, d) in iterate.iter_mut().zip(&dir) {
                *v += d;
            }
        }
        let mut prev_diff = f64::NAN;
        let mut contraction = f64::NAN;
        let mut converged = false;
        let mut iterations = 0;
        while iterations < cfg.picard_max_iters {
            iterations += 1;
            path.last_value_mut().copy_from_slice(&iterate);
            let d = eta.evaluate(&path.window_view(s1))?;
            path.eval_into(s1 - d, &mut delayed)?;
            nl.apply_into(&delayed, &mut forcing);
            op.exp_euler_step(factors, &u_m, &forcing, &mut next);
            check_finite(&next, s1)?;
            let diff = space.distance(&next, &iterate);
            if prev_diff > 0.0 {
                contraction = diff / prev_diff;
            }
            prev_diff = diff;
            iterate.copy_from_slice(&next);
            if diff < cfg.picard_tol {
                converged = true;
                break;
            }
        }
        path.last_value_mut().copy_from_slice(&iterate);
        if !converged {
            return Err(SolverError::PicardDiverged {
                time: s1,
                iterations,
                contraction,
            });
        }
        log.picard_iterations.push(iterations);
    }
    if log.picard_iterations.is_empty() {
        log.min_delay = eta.evaluate(initial)?;
        log.max_delay = log.min_delay;
    }
    Ok(Trajectory::new(problem, cfg.clone(), path, log))
}

fn check_finite(v: &[f64], time: f64) -> Result<(), SolverError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(SolverError::NonFinite { time })
    }
}

/// `S_t φ`: the window `u_t` of the solution started from `φ`.
pub fn evolution_map(
    problem: Arc<ProblemSpec>,
    cfg: &SolverConfig,
    initial: &HistorySegment,
    t: f64,
) -> Result<HistorySegment, SolverError> {
    if !(t >= 0.0) {
        return Err(SolverError::InvalidConfig(format!(
            "evolution time must be nonnegative, got {t}"
        )));
    }
    if t == 0.0 {
        return Ok(initial.clone());
    }
    let tr = solve(problem, initial, &cfg.with_t_end(t))?;
    Ok(tr.window(t)?)
}

/// Largest state-norm gap between the stored solution and the mild
/// (variation-of-constants) formula evaluated on it,
/// `e^{-Ãt}φ(0) + ∫₀ᵗ e^{-Ã(t-s)} B(u(s - η(u_s))) ds`.
///
/// Sample times snap to the nearest stored step. The convolution integral
/// is product-integrated per mode: the forcing is interpolated quadratically
/// on pairs of equal steps (linearly on a leftover step) and the exponential
/// weight is integrated exactly, so stiff modes cost nothing extra.
pub fn mild_residual(tr: &Trajectory, sample_times: &[f64]) -> Result<f64, SolverError> {
    let times = tr.times();
    let end = tr.end_time();
    let tol = 1e-9 * end.max(1.0);
    let mut indices = Vec::with_capacity(sample_times.len());
    for &t in sample_times {
        if !(t >= -tol && t <= end + tol) {
            return Err(SolverError::SampleOutOfRange { time: t, end });
        }
        let k = times.partition_point(|&s| s < t);
        let k = match k {
            0 => 0,
            k if k == times.len() => k - 1,
            k if (times[k] - t) > (t - times[k - 1]) => k - 1,
            k => k,
        };
        indices.push(k);
    }
    let Some(&k_max) = indices.iter().max() else {
        return Ok(0.0);
    };
    if k_max == 0 {
        return Ok(0.0);
    }

    let p = tr.problem();
    let op = p.operator();
    let nl = p.nonlinearity();
    let space = tr.space();
    let dim = space.dim();
    let path = tr.path();

    let mut g_modes = vec![0.0; (k_max + 1) * dim];
    let mut delayed = vec![0.0; dim];
    let mut forcing = vec![0.0; dim];
    for j in 0..=k_max {
        let d = p.delay().evaluate(&path.window_view(times[j]))?;
        path.eval_into(times[j] - d, &mut delayed)?;
        nl.apply_into(&delayed, &mut forcing);
        op.to_modes(&forcing, &mut g_modes[j * dim..(j + 1) * dim]);
    }
    let mut c0 = vec![0.0; dim];
    op.to_modes(tr.value(0), &mut c0);
    let rates = op.spectrum();

    let mut worst: f64 = 0.0;
    let mut modes = vec![0.0; dim];
    let mut mild = vec![0.0; dim];
    for &k in &indices {
        if k == 0 {
            continue;
        }
        for (i, &lambda) in rates.iter().enumerate() {
            let g = |j: usize| g_modes[j * dim + i];
            let mut acc = 0.0;
            let mut j = 0;
            while j < k {
                let h0 = times[j + 1] - times[j];
                let pair = j + 2 <= k && {
                    let h1 = times[j + 2] - times[j + 1];
                    (h1 - h0).abs() <= 1e-12 * h0
                };
                if pair {
                    let [wl, wm, wr] = simpson_weights(lambda, h0);
                    acc = (-2.0 * lambda * h0).exp() * acc + wl * g(j) + wm * g(j + 1) + wr * g(j + 2);
                    j += 2;
                } else {
                    let [wl, wr] = trapezoid_weights(lambda, h0);
                    acc = (-lambda * h0).exp() * acc + wl * g(j) + wr * g(j + 1);
                    j += 1;
                }
            }
            modes[i] = (-lambda * times[k]).exp() * c0[i] + acc;
        }
        op.from_modes(&modes, &mut mild);
        worst = worst.max(space.distance(&mild, tr.value(k)));
    }
    Ok(worst)
}

/// `∫₀² τᵏ e^{-xτ} dτ` for `k = 0, 1, 2`.
fn moments2(x: f64) -> [f64; 3] {
    if x.abs() < 1.0 {
        let mut m = [0.0; 3];
        let mut coef = 1.0;
        for n in 0..60 {
            for (k, mk) in m.iter_mut().enumerate() {
                let e = (n + k + 1) as i32;
                *mk += coef * 2f64.powi(e) / e as f64;
            }
            coef *= -x / (n + 1) as f64;
        }
        m
    } else {
        let e = (-2.0 * x).exp();
        [
            (1.0 - e) / x,
            (1.0 - e * (1.0 + 2.0 * x)) / (x * x),
            (2.0 - e * (2.0 + 4.0 * x + 4.0 * x * x)) / (x * x * x),
        ]
    }
}

/// `∫₀¹ τᵏ e^{-xτ} dτ` for `k = 0, 1`.
fn moments1(x: f64) -> [f64; 2] {
    if x.abs() < 1.0 {
        let mut m = [0.0; 2];
        let mut coef = 1.0;
        for n in 0..40 {
            for (k, mk) in m.iter_mut().enumerate() {
                *mk += coef / (n + k + 1) as f64;
            }
            coef *= -x / (n + 1) as f64;
        }
        m
    } else {
        let e = (-x).exp();
        [(1.0 - e) / x, (1.0 - e * (1.0 + x)) / (x * x)]
    }
}

/// Weights of `g(0), g(h), g(2h)` in `∫₀^{2h} e^{-λ(2h-s)} g(s) ds` for
/// quadratic `g`.
fn simpson_weights(lambda: f64, h: f64) -> [f64; 3] {
    let [m0, m1, m2] = moments2(lambda * h);
    [
        h * (m2 - m1) / 2.0,
        h * (2.0 * m1 - m2),
        h * (2.0 * m0 - 3.0 * m1 + m2) / 2.0,
    ]
}

/// Weights of `g(0), g(h)` in `∫₀^h e^{-λ(h-s)} g(s) ds` for linear `g`.
fn trapezoid_weights(lambda: f64, h: f64) -> [f64; 2] {
    let [n0, n1] = moments1(lambda * h);
    [h * n1, h * (n0 - n1)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::{NestedPoint, ScalarMap};
    use crate::history::{Space, StateVector};
    use crate::operators::{Kernel, ScalarFunction};

    fn scalar_problem(rate: f64, b: ScalarFunction, eta: DelayFunctional) -> Arc<ProblemSpec> {
        let op = EvolutionOperator::ode_diag(vec![rate], 0.0).unwrap();
        let nl = Nonlinearity::local(b, Space::Ode { dim: 1 });
        Arc::new(ProblemSpec::new(op, nl, eta).unwrap())
    }

    fn oracle_problem() -> Arc<ProblemSpec> {
        scalar_problem(
            0.0,
            ScalarFunction::Affine {
                slope: -1.0,
                intercept: 0.0,
            },
            DelayFunctional::constant(1.0, 1.0).unwrap(),
        )
    }

    fn ones(r: f64) -> HistorySegment {
        HistorySegment::constant(StateVector::scalar(1.0), r).unwrap()
    }

    /// Method of steps for `u' = -u(t - 1)`, `φ ≡ 1`:
    /// `u(t) = Σ_{k=0}^{n} (-1)^k (t - k + 1)^k / k!` on `[n-1, n]`.
    fn oracle_exact(t: f64) -> f64 {
        let n = t.ceil().max(1.0) as i32;
        let mut sum = 0.0;
        let mut fact = 1.0;
        for k in 0..=n {
            if k > 0 {
                fact *= k as f64;
            }
            sum += (-1f64).powi(k) * (t - k as f64 + 1.0).powi(k) / fact;
        }
        sum
    }

    #[test]
    fn oracle_closed_form_sanity() {
        assert!((oracle_exact(1.0) - 0.0).abs() < 1e-15);
        assert!((oracle_exact(2.0) + 0.5).abs() < 1e-15);
        assert!((oracle_exact(0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pure_decay() {
        let p = scalar_problem(
            1.0,
            ScalarFunction::Affine {
                slope: 0.0,
                intercept: 0.0,
            },
            DelayFunctional::constant(0.5, 1.0).unwrap(),
        );
        let tr = solve(p, &ones(1.0), &SolverConfig::new(1e-3, 1.0)).unwrap();
        assert!((tr.eval(1.0).unwrap().values()[0] - (-1f64).exp()).abs() < 1e-6);
        let res = mild_residual(&tr, &[0.0, 0.25, 0.5, 1.0]).unwrap();
        assert!(res <= 1e-8, "{res}");
    }

    #[test]
    fn residual_at_zero_is_exactly_zero() {
        let tr = solve(oracle_problem(), &ones(1.0), &SolverConfig::new(1e-2, 2.0)).unwrap();
        assert_eq!(mild_residual(&tr, &[0.0]).unwrap(), 0.0);
        assert!(mild_residual(&tr, &[2.5]).is_err());
    }

    #[test]
    fn frozen_start_scheme_on_oracle() {
        // forward Euler on [1, 2] sums the left Riemann sum of ∫(2 - s) ds
        for dt in [1e-2, 5e-3, 1e-3] {
            let tr = solve(oracle_problem(), &ones(1.0), &SolverConfig::new(dt, 2.0)).unwrap();
            let u2 = tr.eval(2.0).unwrap().values()[0];
            assert!((u2 - (-0.5 - dt / 2.0)).abs() < 1e-10, "dt={dt}: {u2}");
        }
    }

    #[test]
    fn matches_method_of_steps_within_ten_dt() {
        let dt = 1e-2;
        let tr = solve(oracle_problem(), &ones(1.0), &SolverConfig::new(dt, 3.0)).unwrap();
        for (i, &t) in tr.times().iter().enumerate() {
            assert!((tr.value(i)[0] - oracle_exact(t)).abs() <= 10.0 * dt, "t={t}");
        }
    }

    #[test]
    fn oracle_residual_halves() {
        let defect = |dt: f64| {
            let tr = solve(oracle_problem(), &ones(1.0), &SolverConfig::new(dt, 3.0)).unwrap();
            let samples: Vec<f64> = (1..=10).map(|i| 0.3 * i as f64).collect();
            mild_residual(&tr, &samples).unwrap()
        };
        let (a, b) = (defect(1e-2), defect(5e-3));
        assert!(a <= 10.0 * 1e-2);
        let ratio = a / b;
        assert!((1.7..=2.3).contains(&ratio), "{ratio}");
    }

    #[test]
    fn nicholson_equilibrium() {
        let op = EvolutionOperator::ode_diag(vec![0.5], 0.5).unwrap();
        let nl = Nonlinearity::local(
            ScalarFunction::Nicholson { p: std::f64::consts::E },
            Space::Ode { dim: 1 },
        );
        let p = Arc::new(ProblemSpec::new(op, nl, DelayFunctional::constant(1.0, 1.0).unwrap()).unwrap());
        let tr = solve(p, &ones(1.0), &SolverConfig::new(1e-2, 10.0)).unwrap();
        for i in 0..tr.times().len() {
            assert!((tr.value(i)[0] - 1.0).abs() < 1e-8);
        }
        assert_eq!(tr.log().clamp_events, 0);
    }

    #[test]
    fn dt_larger_than_horizon_is_rejected() {
        let err = solve(oracle_problem(), &ones(1.0), &SolverConfig::new(2.0, 4.0)).unwrap_err();
        assert!(err.to_string().contains("dt exceeds delay horizon"));
    }

    #[test]
    fn off_grid_end_time() {
        let cfg = SolverConfig::new(0.3, 1.0);
        assert_eq!(cfg.grid().len(), 5);
        assert_eq!(*cfg.grid().last().unwrap(), 1.0);
        assert_eq!(SolverConfig::new(0.25, 1.0).grid().len(), 5);
    }

    fn vanishing_delay_problem() -> Arc<ProblemSpec> {
        // η ≡ 0: the delayed argument is the step end itself
        let eta = DelayFunctional::nested_point(
            NestedPoint {
                p: ScalarMap::constant(0.0).unwrap(),
                chi: ScalarMap::constant(0.5).unwrap(),
                anchor: 1.0,
            },
            1.0,
        )
        .unwrap();
        scalar_problem(
            1.0,
            ScalarFunction::Affine {
                slope: -0.5,
                intercept: 0.2,
            },
            eta,
        )
    }

    #[test]
    fn vanishing_delay_uses_picard() {
        let tr = solve(vanishing_delay_problem(), &ones(1.0), &SolverConfig::new(1e-3, 2.0)).unwrap();
        assert_eq!(tr.log().picard_steps, tr.times().len() - 1);
        // dt·L_B = 5e-4
        assert!(
            tr.log().picard_iterations.iter().all(|&n| n <= 3),
            "{:?}",
            &tr.log().picard_iterations[..5]
        );
        // u' = -u - 0.5u + 0.2 ⇒ u → 2/15 and the implicit step is exact per mode
        let target = 0.2 / 1.5;
        let t_end: f64 = 2.0;
        let exact = target + (1.0 - target) * (-1.5 * t_end).exp();
        assert!((tr.eval(2.0).unwrap().values()[0] - exact).abs() < 1e-2);
    }

    #[test]
    fn randomized_picard_start_converges_to_same_path() {
        let cfg = SolverConfig::new(1e-2, 2.0);
        let base = solve(vanishing_delay_problem(), &ones(1.0), &cfg).unwrap();
        let other = solve_with(
            vanishing_delay_problem(),
            &ones(1.0),
            &cfg,
            SolveOptions {
                picard_start: PicardStart::Randomized { seed: 3, scale: 1e-3 },
            },
        )
        .unwrap();
        let gap = (0..base.times().len())
            .map(|i| (base.value(i)[0] - other.value(i)[0]).abs())
            .fold(0.0, f64::max);
        assert!(gap <= 10.0 * cfg.picard_tol, "{gap}");
    }

    #[test]
    fn picard_failure_reports_contraction() {
        let cfg = SolverConfig {
            picard_max_iters: 1,
            ..SolverConfig::new(1e-2, 1.0)
        };
        let err = solve(vanishing_delay_problem(), &ones(1.0), &cfg).unwrap_err();
        assert!(matches!(err, SolverError::PicardDiverged { iterations: 1, .. }));
    }

    #[test]
    fn evolution_map_identity_and_semigroup() {
        let cfg = SolverConfig::new(1e-2, 1.0);
        let phi = ones(1.0);
        let s0 = evolution_map(oracle_problem(), &cfg, &phi, 0.0).unwrap();
        assert_eq!(s0.times(), phi.times());
        assert_eq!(s0.distance(&phi).unwrap(), 0.0);

        let direct = evolution_map(oracle_problem(), &cfg, &phi, 2.5).unwrap();
        let mid = evolution_map(oracle_problem(), &cfg, &phi, 1.2).unwrap();
        let composed = evolution_map(oracle_problem(), &cfg, &mid, 1.3).unwrap();
        assert!(direct.distance(&composed).unwrap() <= 5.0 * cfg.dt);
    }

    #[test]
    fn evolution_map_is_continuous_in_time() {
        let cfg = SolverConfig::new(1e-3, 2.0);
        let tr = solve(oracle_problem(), &ones(1.0), &cfg).unwrap();
        let base = tr.window(1.5).unwrap();
        let gaps: Vec<f64> = [1e-1, 1e-2, 1e-3]
            .iter()
            .map(|d| tr.window(1.5 + d).unwrap().distance(&base).unwrap())
            .collect();
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    }

    #[test]
    fn pde_nicholson_stays_finite() {
        let space = Space::PdeGrid {
            n_grid: 31,
            length: std::f64::consts::PI,
        };
        let op = EvolutionOperator::build_dirichlet_laplacian(31, std::f64::consts::PI, 1.0, 0.0).unwrap();
        let nl = Nonlinearity::nicholson(std::f64::consts::E, Kernel::Gaussian { alpha: 0.1 }, space).unwrap();
        let p = Arc::new(ProblemSpec::new(op, nl, DelayFunctional::constant(1.0, 1.0).unwrap()).unwrap());
        let xs = space.grid_points();
        let phi = HistorySegment::from_fn(space, 1.0, 11, |_| xs.iter().map(|x| x.sin()).collect()).unwrap();
        let tr = solve(p, &phi, &SolverConfig::new(1e-2, 5.0)).unwrap();
        let last = tr.value(tr.times().len() - 1);
        assert!(last.iter().all(|v| v.is_finite()));
        let samples: Vec<f64> = (1..=10).map(|i| 0.5 * i as f64).collect();
        assert!(mild_residual(&tr, &samples).unwrap() <= 10.0 * 1e-2);
    }

    #[test]
    fn product_weights_reduce_to_newton_cotes() {
        let [a, b, c] = simpson_weights(0.0, 1.0);
        assert!((a - 1.0 / 3.0).abs() < 1e-15 && (b - 4.0 / 3.0).abs() < 1e-15 && (c - 1.0 / 3.0).abs() < 1e-15);
        let [l, r] = trapezoid_weights(0.0, 1.0);
        assert!((l - 0.5).abs() < 1e-15 && (r - 0.5).abs() < 1e-15);
        // series and closed form agree across the switch
        let below = moments2(1.0 - 1e-12);
        let above = moments2(1.0 + 1e-12);
        for k in 0..3 {
            assert!((below[k] - above[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn product_weights_integrate_quadratics_exactly() {
        // ∫₀^{2h} e^{-λ(2h-s)} s² ds against a fine midpoint sum
        let (lambda, h) = (3.7, 0.4);
        let [a, b, c] = simpson_weights(lambda, h);
        let approx = a * 0.0 + b * h * h + c * 4.0 * h * h;
        let n = 200_000;
        let dx = 2.0 * h / n as f64;
        let oracle: f64 = (0..n)
            .map(|i| {
                let s = (i as f64 + 0.5) * dx;
                (-lambda * (2.0 * h - s)).exp() * s * s * dx
            })
            .sum();
        assert!((approx - oracle).abs() < 1e-9, "{approx} vs {oracle}");
    }
}
