//! State vectors, history segments on `[-r, 0]` and solved trajectories.
//!
//! A history segment is stored as a piecewise-linear function in time: a
//! strictly increasing list of knot times starting at `-r` and ending at `0`,
//! each carrying a state vector. All norms computed here are norms of that
//! piecewise-linear representative, which is exactly what the solver
//! propagates.

use std::io::{self, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::solver::{ProblemSpec, SolverConfig};

/// Relative tolerance used to snap times onto interval endpoints.
const SNAP_REL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HistoryError {
    #[error("history needs at least one knot")]
    Empty,
    #[error("horizon must be positive and finite, got {0}")]
    BadHorizon(f64),
    #[error("unsorted times at knot {index}")]
    UnsortedTimes { index: usize },
    #[error("knot {index}: time {time} outside [-{horizon}, 0]")]
    TimeOutOfRange { index: usize, time: f64, horizon: f64 },
    #[error("first knot must sit at -{horizon} and last at 0 (got {first} and {last})")]
    BadEndpoints { first: f64, last: f64, horizon: f64 },
    #[error("knot {index}: state space mismatch")]
    SpaceMismatch { index: usize },
    #[error("knot {index}: non-finite value")]
    NonFinite { index: usize },
    #[error("state vector has {got} entries, space expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("time {time} outside [{lo}, {hi}]")]
    Domain { time: f64, lo: f64, hi: f64 },
}

/// The finite-dimensional space a state lives in.
///
/// `PdeGrid` holds field samples at the interior points
/// `x_j = j * length / (n_grid + 1)`, `j = 1..=n_grid`, with homogeneous
/// Dirichlet values implied at both ends.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Space {
    Ode { dim: usize },
    PdeGrid { n_grid: usize, length: f64 },
}

impl Space {
    pub fn dim(&self) -> usize {
        match *self {
            Space::Ode { dim } => dim,
            Space::PdeGrid { n_grid, .. } => n_grid,
        }
    }

    /// Quadrature weight of a single entry in the L² norm (1 for ODE states).
    pub fn cell_weight(&self) -> f64 {
        match *self {
            Space::Ode { .. } => 1.0,
            Space::PdeGrid { n_grid, length } => length / (n_grid as f64 + 1.0),
        }
    }

    /// Euclidean norm for ODE states, rectangle-rule L²(0, ℓ) norm for grids.
    pub fn norm(&self, v: &[f64]) -> f64 {
        (self.cell_weight() * v.iter().map(|x| x * x).sum::<f64>()).sqrt()
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        (self.cell_weight() * s).sqrt()
    }

    /// Quadrature mean: arithmetic mean for ODE states, `(1/ℓ)∫ w dx` for grids.
    pub fn mean(&self, v: &[f64]) -> f64 {
        let s: f64 = v.iter().sum();
        match *self {
            Space::Ode { dim } => s / dim as f64,
            Space::PdeGrid { n_grid, .. } => s / (n_grid as f64 + 1.0),
        }
    }

    /// Interior grid coordinates (empty for ODE spaces).
    pub fn grid_points(&self) -> Vec<f64> {
        match *self {
            Space::Ode { .. } => Vec::new(),
            Space::PdeGrid { n_grid, length } => {
                let h = length / (n_grid as f64 + 1.0);
                (1..=n_grid).map(|j| j as f64 * h).collect()
            }
        }
    }

    /// Measure of the spatial domain, `|Ω| = ℓ` for grids.
    pub fn measure(&self) -> Option<f64> {
        match *self {
            Space::Ode { .. } => None,
            Space::PdeGrid { length, .. } => Some(length),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    values: Vec<f64>,
    space: Space,
}

impl StateVector {
    pub fn new(values: Vec<f64>, space: Space) -> Result<Self, HistoryError> {
        if values.len() != space.dim() {
            return Err(HistoryError::DimensionMismatch {
                expected: space.dim(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(HistoryError::NonFinite { index: 0 });
        }
        Ok(Self { values, space })
    }

    pub fn zeros(space: Space) -> Self {
        Self {
            values: vec![0.0; space.dim()],
            space,
        }
    }

    pub fn filled(space: Space, value: f64) -> Self {
        Self {
            values: vec![value; space.dim()],
            space,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            values: vec![value],
            space: Space::Ode { dim: 1 },
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn norm(&self) -> f64 {
        self.space.norm(&self.values)
    }

    pub fn distance(&self, other: &StateVector) -> Result<f64, HistoryError> {
        self.check_same_space(other)?;
        Ok(self.space.distance(&self.values, &other.values))
    }

    pub fn add(&self, other: &StateVector) -> Result<StateVector, HistoryError> {
        self.check_same_space(other)?;
        Ok(Self {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
            space: self.space,
        })
    }

    pub fn scaled(&self, alpha: f64) -> StateVector {
        Self {
            values: self.values.iter().map(|v| alpha * v).collect(),
            space: self.space,
        }
    }

    fn check_same_space(&self, other: &StateVector) -> Result<(), HistoryError> {
        if self.space != other.space {
            return Err(HistoryError::SpaceMismatch { index: 0 });
        }
        Ok(())
    }
}

/// Read access to a function `θ ↦ φ(θ)` on `[-r, 0]`.
///
/// Delay functionals are written against this trait so the solver can hand
/// them a window of its running solution without copying it into a
/// [`HistorySegment`].
pub trait HistoryView {
    fn horizon(&self) -> f64;
    fn space(&self) -> Space;
    fn eval_into(&self, theta: f64, out: &mut [f64]) -> Result<(), HistoryError>;
}

/// A continuous, piecewise-linear function on `[-r, 0]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistorySegment {
    horizon: f64,
    space: Space,
    times: Vec<f64>,
    data: Vec<f64>,
}

impl HistorySegment {
    /// Build a segment from `(time, value)` knots.
    ///
    /// The first knot must sit at `-r` and the last at `0`; times within a
    /// relative `1e-12` of either endpoint are snapped onto it.
    pub fn new(knots: Vec<(f64, StateVector)>, horizon: f64) -> Result<Self, HistoryError> {
        let space = knots.first().ok_or(HistoryError::Empty)?.1.space();
        let mut times = Vec::with_capacity(knots.len());
        let mut data = Vec::with_capacity(knots.len() * space.dim());
        for (index, (t, v)) in knots.into_iter().enumerate() {
            if v.space() != space {
                return Err(HistoryError::SpaceMismatch { index });
            }
            if v.values().iter().any(|x| !x.is_finite()) {
                return Err(HistoryError::NonFinite { index });
            }
            times.push(t);
            data.extend_from_slice(v.values());
        }
        Self::from_parts(horizon, space, times, data)
    }

    /// Build from flat storage: `data[i * dim..(i + 1) * dim]` is the value at `times[i]`.
    pub fn from_parts(horizon: f64, space: Space, mut times: Vec<f64>, data: Vec<f64>) -> Result<Self, HistoryError> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(HistoryError::BadHorizon(horizon));
        }
        if times.is_empty() {
            return Err(HistoryError::Empty);
        }
        let dim = space.dim();
        if data.len() != times.len() * dim {
            return Err(HistoryError::DimensionMismatch {
                expected: times.len() * dim,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(HistoryError::NonFinite {
                index: pos / dim.max(1),
            });
        }
        let tol = SNAP_REL * horizon.max(1.0);
        for (index, &t) in times.iter().enumerate() {
            if !t.is_finite() || t < -horizon - tol || t > tol {
                return Err(HistoryError::TimeOutOfRange {
                    index,
                    time: t,
                    horizon,
                });
            }
            if index > 0 && t <= times[index - 1] {
                return Err(HistoryError::UnsortedTimes { index });
            }
        }
        let first = times[0];
        let last = *times.last().unwrap();
        if (first + horizon).abs() > tol || last.abs() > tol || times.len() < 2 {
            return Err(HistoryError::BadEndpoints { first, last, horizon });
        }
        times[0] = -horizon;
        *times.last_mut().unwrap() = 0.0;
        Ok(Self {
            horizon,
            space,
            times,
            data,
        })
    }

    /// Constant segment `φ(θ) ≡ value`.
    pub fn constant(value: StateVector, horizon: f64) -> Result<Self, HistoryError> {
        Self::new(vec![(-horizon, value.clone()), (0.0, value)], horizon)
    }

    /// Sample `f` at `n_knots` equally spaced times on `[-r, 0]`.
    pub fn from_fn<F>(space: Space, horizon: f64, n_knots: usize, f: F) -> Result<Self, HistoryError>
    where
        F: Fn(f64) -> Vec<f64>,
    {
        let n = n_knots.max(2);
        let mut times = Vec::with_capacity(n);
        let mut data = Vec::with_capacity(n * space.dim());
        for i in 0..n {
            let t = if i + 1 == n {
                0.0
            } else {
                -horizon + horizon * i as f64 / (n - 1) as f64
            };
            let v = f(t);
            if v.len() != space.dim() {
                return Err(HistoryError::DimensionMismatch {
                    expected: space.dim(),
                    got: v.len(),
                });
            }
            times.push(t);
            data.extend(v);
        }
        Self::from_parts(horizon, space, times, data)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn knot_value(&self, i: usize) -> &[f64] {
        let d = self.space.dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn knots(&self) -> impl Iterator<Item = (f64, &[f64])> + '_ {
        let d = self.space.dim();
        self.times.iter().copied().zip(self.data.chunks_exact(d))
    }

    /// Value at `θ ∈ [-r, 0]`, interpolating linearly between knots.
    pub fn eval(&self, theta: f64) -> Result<StateVector, HistoryError> {
        let mut out = vec![0.0; self.space.dim()];
        self.eval_into(theta, &mut out)?;
        Ok(StateVector {
            values: out,
            space: self.space,
        })
    }

    /// Maximum state norm over the knots.
    ///
    /// Both the Euclidean and the grid L² norm are convex, so on each linear
    /// slice the maximum sits at a knot: this is the exact sup norm of the
    /// piecewise-linear representative.
    pub fn sup_norm(&self) -> f64 {
        self.knots().map(|(_, v)| self.space.norm(v)).fold(0.0, f64::max)
    }

    /// Exact Lipschitz constant of the piecewise-linear representative.
    pub fn lipschitz_quotient(&self) -> f64 {
        let d = self.space.dim();
        self.times
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let a = &self.data[i * d..(i + 1) * d];
                let b = &self.data[(i + 1) * d..(i + 2) * d];
                self.space.distance(a, b) / (w[1] - w[0])
            })
            .fold(0.0, f64::max)
    }

    /// `max_θ ‖self(θ) - other(θ)‖`, exact for piecewise-linear segments
    /// (evaluated on the union of both knot sets).
    pub fn distance(&self, other: &HistorySegment) -> Result<f64, HistoryError> {
        if self.space != other.space {
            return Err(HistoryError::SpaceMismatch { index: 0 });
        }
        if (self.horizon - other.horizon).abs() > SNAP_REL * self.horizon.max(1.0) {
            return Err(HistoryError::BadHorizon(other.horizon));
        }
        let d = self.space.dim();
        let mut a = vec![0.0; d];
        let mut b = vec![0.0; d];
        let mut best: f64 = 0.0;
        for &t in self.times.iter().chain(other.times.iter()) {
            self.eval_into(t, &mut a)?;
            other.eval_into(t, &mut b)?;
            best = best.max(self.space.distance(&a, &b));
        }
        Ok(best)
    }

    /// Knotwise map `φ ↦ α φ`.
    pub fn scaled(&self, alpha: f64) -> HistorySegment {
        HistorySegment {
            data: self.data.iter().map(|v| alpha * v).collect(),
            ..self.clone()
        }
    }
}

impl HistoryView for HistorySegment {
    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn space(&self) -> Space {
        self.space
    }

    fn eval_into(&self, theta: f64, out: &mut [f64]) -> Result<(), HistoryError> {
        let tol = SNAP_REL * self.horizon.max(1.0);
        if !(theta >= -self.horizon - tol && theta <= tol) {
            return Err(HistoryError::Domain {
                time: theta,
                lo: -self.horizon,
                hi: 0.0,
            });
        }
        interpolate(&self.times, &self.data, self.space.dim(), theta, out);
        Ok(())
    }
}

/// Piecewise-linear lookup on sorted `times`; exact at knots, clamped outside.
fn interpolate(times: &[f64], data: &[f64], dim: usize, t: f64, out: &mut [f64]) {
    let idx = times.partition_point(|&s| s <= t);
    if idx == 0 {
        out.copy_from_slice(&data[..dim]);
        return;
    }
    let left = idx - 1;
    if times[left] == t || idx == times.len() {
        out.copy_from_slice(&data[left * dim..(left + 1) * dim]);
        return;
    }
    let (t0, t1) = (times[left], times[idx]);
    let w = (t - t0) / (t1 - t0);
    let a = &data[left * dim..(left + 1) * dim];
    let b = &data[idx * dim..(idx + 1) * dim];
    for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
        *o = x + w * (y - x);
    }
}

/// A solution `u` on `[-r, T]`: the initial segment followed by solved values.
///
/// This is the growing storage the solver writes into; [`Trajectory`] wraps a
/// finished one.
#[derive(Clone, Debug)]
pub struct SolutionPath {
    initial: HistorySegment,
    times: Vec<f64>,
    data: Vec<f64>,
}

impl SolutionPath {
    pub fn new(initial: HistorySegment) -> Self {
        let dim = initial.space().dim();
        let u0 = initial.knot_value(initial.len() - 1).to_vec();
        let mut data = Vec::with_capacity(dim * 1024);
        data.extend(u0);
        Self {
            initial,
            times: vec![0.0],
            data,
        }
    }

    pub fn initial(&self) -> &HistorySegment {
        &self.initial
    }

    pub fn horizon(&self) -> f64 {
        self.initial.horizon()
    }

    pub fn space(&self) -> Space {
        self.initial.space()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn value(&self, i: usize) -> &[f64] {
        let d = self.space().dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn last_value(&self) -> &[f64] {
        self.value(self.times.len() - 1)
    }

    pub fn last_value_mut(&mut self) -> &mut [f64] {
        let d = self.space().dim();
        let n = self.data.len();
        &mut self.data[n - d..]
    }

    pub fn push(&mut self, t: f64, value: &[f64]) {
        debug_assert!(t > self.end_time());
        self.times.push(t);
        self.data.extend_from_slice(value);
    }

    /// `u(s)` for `s ∈ [-r, T]`.
    pub fn eval_into(&self, s: f64, out: &mut [f64]) -> Result<(), HistoryError> {
        let r = self.horizon();
        let end = self.end_time();
        let tol = SNAP_REL * r.max(end).max(1.0);
        if !(s >= -r - tol && s <= end + tol) {
            return Err(HistoryError::Domain {
                time: s,
                lo: -r,
                hi: end,
            });
        }
        if s <= 0.0 {
            return self.initial.eval_into(s.max(-r), out);
        }
        interpolate(&self.times, &self.data, self.space().dim(), s, out);
        Ok(())
    }

    /// The segment `u_t` as a borrowed view.
    pub fn window_view(&self, t: f64) -> PathWindow<'_> {
        PathWindow { path: self, at: t }
    }

    /// Materialize `u_t` as a [`HistorySegment`], splicing initial and solved knots.
    pub fn window(&self, t: f64) -> Result<HistorySegment, HistoryError> {
        let r = self.horizon();
        let end = self.end_time();
        let tol = SNAP_REL * r.max(end).max(1.0);
        if !(t >= -tol && t <= end + tol) {
            return Err(HistoryError::Domain {
                time: t,
                lo: 0.0,
                hi: end,
            });
        }
        let t = t.clamp(0.0, end);
        let dim = self.space().dim();
        let start = t - r;
        let mut times = vec![-r];
        let mut data = vec![0.0; dim];
        self.eval_into(start, &mut data)?;
        let push = |s: f64, v: &[f64], times: &mut Vec<f64>, data: &mut Vec<f64>| {
            if s - start > tol && t - s > tol {
                times.push(s - t);
                data.extend_from_slice(v);
            }
        };
        for (s, v) in self.initial.knots() {
            if s < 0.0 {
                push(s, v, &mut times, &mut data);
            }
        }
        for (i, &s) in self.times.iter().enumerate() {
            if s > t {
                break;
            }
            push(s, self.value(i), &mut times, &mut data);
        }
        let mut last = vec![0.0; dim];
        self.eval_into(t, &mut last)?;
        times.push(0.0);
        data.extend(last);
        HistorySegment::from_parts(r, self.space(), times, data)
    }
}

/// `θ ↦ u(at + θ)` on `[-r, 0]`, borrowed from a [`SolutionPath`].
#[derive(Clone, Copy, Debug)]
pub struct PathWindow<'a> {
    path: &'a SolutionPath,
    at: f64,
}

impl HistoryView for PathWindow<'_> {
    fn horizon(&self) -> f64 {
        self.path.horizon()
    }

    fn space(&self) -> Space {
        self.path.space()
    }

    fn eval_into(&self, theta: f64, out: &mut [f64]) -> Result<(), HistoryError> {
        let r = self.path.horizon();
        let tol = SNAP_REL * r.max(1.0);
        if !(theta >= -r - tol && theta <= tol) {
            return Err(HistoryError::Domain {
                time: theta,
                lo: -r,
                hi: 0.0,
            });
        }
        self.path.eval_into(self.at + theta.clamp(-r, 0.0), out)
    }
}

/// Per-step bookkeeping recorded by the solver.
#[derive(Clone, Debug, Default, Serialize)]
pub struct StepLog {
    /// Fixed-point iterations per step (1 for explicit steps).
    pub picard_iterations: Vec<u32>,
    /// Number of steps resolved implicitly.
    pub picard_steps: usize,
    /// Delay or map outputs that had to be clamped into their declared range.
    pub clamp_events: usize,
    /// Smallest delay value seen at a step start.
    pub min_delay: f64,
    /// Largest delay value seen at a step start.
    pub max_delay: f64,
}

/// A solved path `u` on `[-r, T]` together with the problem that produced it.
#[derive(Clone, Debug)]
pub struct Trajectory {
    problem: Arc<ProblemSpec>,
    config: SolverConfig,
    path: SolutionPath,
    log: StepLog,
}

impl Trajectory {
    pub(crate) fn new(problem: Arc<ProblemSpec>, config: SolverConfig, path: SolutionPath, log: StepLog) -> Self {
        Self {
            problem,
            config,
            path,
            log,
        }
    }

    pub fn problem(&self) -> &Arc<ProblemSpec> {
        &self.problem
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn path(&self) -> &SolutionPath {
        &self.path
    }

    pub fn initial(&self) -> &HistorySegment {
        self.path.initial()
    }

    pub fn log(&self) -> &StepLog {
        &self.log
    }

    pub fn times(&self) -> &[f64] {
        self.path.times()
    }

    pub fn end_time(&self) -> f64 {
        self.path.end_time()
    }

    pub fn space(&self) -> Space {
        self.path.space()
    }

    /// Solved value at the i-th stored time.
    pub fn value(&self, i: usize) -> &[f64] {
        self.path.value(i)
    }

    /// `u(s)` for `s ∈ [-r, T]`.
    pub fn eval(&self, s: f64) -> Result<StateVector, HistoryError> {
        let mut out = vec![0.0; self.space().dim()];
        self.path.eval_into(s, &mut out)?;
        Ok(StateVector {
            values: out,
            space: self.space(),
        })
    }

    /// `u_t` for `t ∈ [0, T]`.
    pub fn window(&self, t: f64) -> Result<HistorySegment, HistoryError> {
        self.path.window(t)
    }

    /// Write `t,v_0,...,v_{n-1}` rows. With `include_history` the initial
    /// segment's knots at negative times come first. `stride` thins the
    /// solved rows; the final time is always written.
    pub fn write_csv<W: Write>(&self, mut w: W, include_history: bool, stride: usize) -> io::Result<()> {
        let dim = self.space().dim();
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((0..dim).map(|i| format!("v_{i}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        let row = |w: &mut W, t: f64, v: &[f64]| -> io::Result<()> {
            write!(w, "{t}")?;
            for x in v {
                write!(w, ",{x}")?;
            }
            writeln!(w)
        };
        if include_history {
            for (t, v) in self.initial().knots() {
                if t < 0.0 {
                    row(&mut w, t, v)?;
                }
            }
        }
        let stride = stride.max(1);
        let n = self.times().len();
        for i in 0..n {
            if i % stride == 0 || i + 1 == n {
                row(&mut w, self.times()[i], self.value(i))?;
            }
        }
        Ok(())
    }
}
