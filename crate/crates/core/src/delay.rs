//! State-dependent delay functionals `η : C → [0, r]`.
//!
//! Every structured variant knows which part of its argument it reads: the
//! delayed segment `[-Θᵘ(φ), -Θˡ(φ)]`. [`DelayFunctional::dependency_segment`]
//! reports it, and [`DelayFunctional::verify_ignorance`] checks by random
//! perturbation that values outside the segment never change the delay.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::history::{HistoryError, HistorySegment, HistoryView, Space};

/// Deviation tolerated for opaque functionals in [`DelayFunctional::verify_ignorance`].
pub const OPAQUE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DelayError {
    #[error("invalid delay functional: {0}")]
    Invalid(String),
    #[error("history horizon {got} does not match delay horizon {expected}")]
    HorizonMismatch { expected: f64, got: f64 },
    #[error("non-finite intermediate value while evaluating the delay")]
    NonFinite,
    #[error("delayed segment unknown for this opaque functional; use verify_ignorance with a declared segment")]
    SegmentUnknown,
    #[error(transparent)]
    History(#[from] HistoryError),
}

pub type UserScalarFn = Arc<dyn Fn(&[f64], Space) -> f64 + Send + Sync>;
pub type OpaqueFn = Arc<dyn Fn(&dyn HistoryView) -> Result<f64, DelayError> + Send + Sync>;
/// Returns `(Θᵘ(φ), Θˡ(φ))`.
pub type SegmentFn = Arc<dyn Fn(&dyn HistoryView) -> Result<(f64, f64), DelayError> + Send + Sync>;

#[derive(Clone)]
pub enum MapKind {
    /// `w ↦ a·⟨w⟩ + b` on the quadrature mean.
    Affine {
        slope: f64,
        intercept: f64,
    },
    /// Piecewise-linear lookup on `⟨w⟩` through `(x, y)` points sorted by
    /// `x`; a repeated `x` encodes a jump (right-continuous).
    Table {
        points: Vec<(f64, f64)>,
    },
    User(UserScalarFn),
}

impl fmt::Debug for MapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MapKind::Affine { slope, intercept } => f
                .debug_struct("Affine")
                .field("slope", slope)
                .field("intercept", intercept)
                .finish(),
            MapKind::Table { points } => f.debug_struct("Table").field("points", points).finish(),
            MapKind::User(_) => f.write_str("User(..)"),
        }
    }
}

/// A map from states to reals, clamped into a declared range.
#[derive(Clone, Debug)]
pub struct ScalarMap {
    kind: MapKind,
    lo: f64,
    hi: f64,
    lipschitz: Option<f64>,
}

/// Output of [`ScalarMap::apply`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mapped {
    pub value: f64,
    pub raw: f64,
    pub clamped: bool,
}

impl ScalarMap {
    pub fn affine(slope: f64, intercept: f64, lo: f64, hi: f64) -> Result<Self, DelayError> {
        Self::new(MapKind::Affine { slope, intercept }, lo, hi, Some(slope.abs()))
    }

    /// The constant map `w ↦ c`.
    pub fn constant(c: f64) -> Result<Self, DelayError> {
        Self::affine(0.0, c, c, c)
    }

    pub fn table(points: Vec<(f64, f64)>, lo: f64, hi: f64) -> Result<Self, DelayError> {
        if points.is_empty() {
            return Err(DelayError::Invalid("empty lookup table".into()));
        }
        if points.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(DelayError::Invalid("lookup table must be sorted by x".into()));
        }
        let mut lip: Option<f64> = Some(0.0);
        for w in points.windows(2) {
            let dx = w[1].0 - w[0].0;
            lip = if dx == 0.0 {
                if w[1].1 != w[0].1 {
                    None
                } else {
                    lip
                }
            } else {
                lip.map(|l| l.max(((w[1].1 - w[0].1) / dx).abs()))
            };
        }
        Self::new(MapKind::Table { points }, lo, hi, lip)
    }

    pub fn user(f: UserScalarFn, lo: f64, hi: f64, lipschitz: Option<f64>) -> Result<Self, DelayError> {
        Self::new(MapKind::User(f), lo, hi, lipschitz)
    }

    fn new(kind: MapKind, lo: f64, hi: f64, lipschitz: Option<f64>) -> Result<Self, DelayError> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(DelayError::Invalid(format!("bad map range [{lo}, {hi}]")));
        }
        Ok(Self {
            kind,
            lo,
            hi,
            lipschitz,
        })
    }

    /// Override the declared Lipschitz bound.
    pub fn with_lipschitz(mut self, bound: Option<f64>) -> Self {
        self.lipschitz = bound;
        self
    }

    pub fn kind(&self) -> &MapKind {
        &self.kind
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn declared_lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }

    pub fn apply(&self, w: &[f64], space: Space) -> Result<Mapped, DelayError> {
        let raw = match &self.kind {
            MapKind::Affine { slope, intercept } => slope * space.mean(w) + intercept,
            MapKind::Table { points } => table_lookup(points, space.mean(w)),
            MapKind::User(f) => f(w, space),
        };
        if raw.is_nan() {
            return Err(DelayError::NonFinite);
        }
        let value = raw.clamp(self.lo, self.hi);
        Ok(Mapped {
            value,
            raw,
            clamped: value != raw,
        })
    }
}

fn table_lookup(points: &[(f64, f64)], x: f64) -> f64 {
    let idx = points.partition_point(|p| p.0 <= x);
    if idx == 0 {
        return points[0].1;
    }
    if idx == points.len() {
        return points[idx - 1].1;
    }
    let (x0, y0) = points[idx - 1];
    let (x1, y1) = points[idx];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Weight `g(θ)` inside integral delay functionals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Weight {
    Constant {
        value: f64,
    },
    /// `g(θ) = scale · e^{rate·θ}`.
    Exponential {
        scale: f64,
        rate: f64,
    },
}

impl Weight {
    pub fn value(&self, theta: f64) -> f64 {
        match *self {
            Weight::Constant { value } => value,
            Weight::Exponential { scale, rate } => scale * (rate * theta).exp(),
        }
    }
}

/// `φ ↦ p(φ(-χ(φ(-anchor))))`.
#[derive(Clone, Debug)]
pub struct NestedPoint {
    pub p: ScalarMap,
    pub chi: ScalarMap,
    pub anchor: f64,
}

/// State-dependent integration limits `[-χ²(φ(-r²)), -χ¹(φ(-r¹))]`.
#[derive(Clone, Debug)]
pub struct IntegralLimits {
    pub chi_upper: ScalarMap,
    pub anchor_upper: f64,
    pub chi_lower: ScalarMap,
    pub anchor_lower: f64,
}

#[derive(Clone)]
pub enum DelayKind {
    Constant(f64),
    NestedPoint(NestedPoint),
    SumOfNested(Vec<NestedPoint>),
    /// `clamp(∫ p(φ(θ)) g(θ) dθ)` over the state-dependent limits.
    IntegralOuter {
        p: ScalarMap,
        weight: Weight,
        limits: IntegralLimits,
    },
    /// `p(∫ φ(θ) g(θ) dθ)` over the state-dependent limits.
    IntegralInner {
        p: ScalarMap,
        weight: Weight,
        limits: IntegralLimits,
    },
    UserOpaque {
        f: OpaqueFn,
        segment: Option<SegmentFn>,
    },
}

impl fmt::Debug for DelayKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DelayKind::Constant(c) => f.debug_tuple("Constant").field(c).finish(),
            DelayKind::NestedPoint(n) => f.debug_tuple("NestedPoint").field(n).finish(),
            DelayKind::SumOfNested(t) => f.debug_tuple("SumOfNested").field(t).finish(),
            DelayKind::IntegralOuter { p, weight, limits } => f
                .debug_struct("IntegralOuter")
                .field("p", p)
                .field("weight", weight)
                .field("limits", limits)
                .finish(),
            DelayKind::IntegralInner { p, weight, limits } => f
                .debug_struct("IntegralInner")
                .field("p", p)
                .field("weight", weight)
                .field("limits", limits)
                .finish(),
            DelayKind::UserOpaque { segment, .. } => f
                .debug_struct("UserOpaque")
                .field("segment_declared", &segment.is_some())
                .finish(),
        }
    }
}

/// Record of what one evaluation touched.
#[derive(Clone, Debug, Default)]
pub struct EvalTrace {
    /// θ points at which the argument was read, in read order.
    pub reads: Vec<f64>,
    /// Map outputs (or the final delay) that had to be clamped.
    pub clamp_events: usize,
}

/// The delayed segment `[-theta_upper, -theta_lower]` of one argument.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SegmentReport {
    pub theta_upper: f64,
    pub theta_lower: f64,
    pub anchors_used: Vec<f64>,
}

/// A first counterexample to the ignorance condition.
#[derive(Clone, Debug, Serialize)]
pub struct Counterexample {
    pub trial: usize,
    pub eta_reference: f64,
    pub eta_perturbed: f64,
    pub psi: HistorySegment,
}

#[derive(Clone, Debug, Serialize)]
pub struct IgnoranceReport {
    pub passes: bool,
    pub trials: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub segment: SegmentReport,
    pub counterexample: Option<Counterexample>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LipschitzEstimate {
    pub estimate: f64,
    pub samples: usize,
    pub locally_lipschitz: bool,
}

/// A delay functional with maximal delay `r`.
#[derive(Clone, Debug)]
pub struct DelayFunctional {
    kind: DelayKind,
    max_delay: f64,
    integral_dx: f64,
}

impl DelayFunctional {
    pub fn constant(c: f64, max_delay: f64) -> Result<Self, DelayError> {
        check_horizon(max_delay)?;
        if !(0.0..=max_delay).contains(&c) {
            return Err(DelayError::Invalid(format!(
                "constant delay {c} outside [0, {max_delay}]"
            )));
        }
        Ok(Self::raw(DelayKind::Constant(c), max_delay))
    }

    pub fn nested_point(term: NestedPoint, max_delay: f64) -> Result<Self, DelayError> {
        check_horizon(max_delay)?;
        check_nested(&term, max_delay)?;
        Ok(Self::raw(DelayKind::NestedPoint(term), max_delay))
    }

    pub fn sum_of_nested(terms: Vec<NestedPoint>, max_delay: f64) -> Result<Self, DelayError> {
        check_horizon(max_delay)?;
        if terms.is_empty() {
            return Err(DelayError::Invalid(
                "sum of nested terms needs at least one term".into(),
            ));
        }
        for t in &terms {
            check_nested(t, max_delay)?;
        }
        Ok(Self::raw(DelayKind::SumOfNested(terms), max_delay))
    }

    pub fn integral_outer(
        p: ScalarMap,
        weight: Weight,
        limits: IntegralLimits,
        max_delay: f64,
    ) -> Result<Self, DelayError> {
        check_horizon(max_delay)?;
        check_limits(&limits, max_delay)?;
        Ok(Self::raw(DelayKind::IntegralOuter { p, weight, limits }, max_delay))
    }

    pub fn integral_inner(
        p: ScalarMap,
        weight: Weight,
        limits: IntegralLimits,
        max_delay: f64,
    ) -> Result<Self, DelayError> {
        check_horizon(max_delay)?;
        check_limits(&limits, max_delay)?;
        check_range("p", &p, max_delay)?;
        Ok(Self::raw(DelayKind::IntegralInner { p, weight, limits }, max_delay))
    }

    pub fn user_opaque(f: OpaqueFn, segment: Option<SegmentFn>, max_delay: f64) -> Result<Self, DelayError> {
        check_horizon(max_delay)?;
        Ok(Self::raw(DelayKind::UserOpaque { f, segment }, max_delay))
    }

    fn raw(kind: DelayKind, max_delay: f64) -> Self {
        Self {
            kind,
            max_delay,
            integral_dx: 1e-3,
        }
    }

    /// Node spacing bound for the trapezoid rule in integral variants.
    pub fn with_integral_dx(mut self, dx: f64) -> Result<Self, DelayError> {
        if !(dx > 0.0 && dx.is_finite()) {
            return Err(DelayError::Invalid("integral_dx must be positive".into()));
        }
        self.integral_dx = dx;
        Ok(self)
    }

    pub fn kind(&self) -> &DelayKind {
        &self.kind
    }

    pub fn max_delay(&self) -> f64 {
        self.max_delay
    }

    pub fn integral_dx(&self) -> f64 {
        self.integral_dx
    }

    /// Everything except [`DelayKind::UserOpaque`].
    pub fn is_structured(&self) -> bool {
        !matches!(self.kind, DelayKind::UserOpaque { .. })
    }

    pub fn evaluate(&self, h: &dyn HistoryView) -> Result<f64, DelayError> {
        self.eval_inner(h, None)
    }

    pub fn evaluate_traced(&self, h: &dyn HistoryView, trace: &mut EvalTrace) -> Result<f64, DelayError> {
        self.eval_inner(h, Some(trace))
    }

    fn eval_inner(&self, h: &dyn HistoryView, trace: Option<&mut EvalTrace>) -> Result<f64, DelayError> {
        let r = self.max_delay;
        if (h.horizon() - r).abs() > 1e-12 * r.max(1.0) {
            return Err(DelayError::HorizonMismatch {
                expected: r,
                got: h.horizon(),
            });
        }
        let space = h.space();
        let mut reader = Reader {
            h,
            buf: vec![0.0; space.dim()],
            trace,
        };
        let raw = match &self.kind {
            DelayKind::Constant(c) => *c,
            DelayKind::NestedPoint(term) => nested_value(term, &mut reader)?,
            DelayKind::SumOfNested(terms) => {
                let mut s = 0.0;
                for t in terms {
                    s += nested_value(t, &mut reader)?;
                }
                s
            }
            DelayKind::IntegralOuter { p, weight, limits } => {
                let (a, b) = limits_value(limits, &mut reader)?;
                let nodes = quadrature_nodes(a, b, self.integral_dx);
                let mut acc = 0.0;
                let last = nodes.len().saturating_sub(1);
                for (i, &theta) in nodes.iter().enumerate() {
                    let w = reader.read(theta)?;
                    let m = p.apply(w, space)?;
                    let m_clamped = m.clamped;
                    let pv = m.value;
                    reader.note_clamp(m_clamped);
                    let c = if i == 0 || i == last { 0.5 } else { 1.0 };
                    acc += c * pv * weight.value(theta);
                }
                acc * step_of(&nodes)
            }
            DelayKind::IntegralInner { p, weight, limits } => {
                let (a, b) = limits_value(limits, &mut reader)?;
                let nodes = quadrature_nodes(a, b, self.integral_dx);
                let mut acc = vec![0.0; space.dim()];
                let last = nodes.len().saturating_sub(1);
                for (i, &theta) in nodes.iter().enumerate() {
                    let g = weight.value(theta) * if i == 0 || i == last { 0.5 } else { 1.0 };
                    let w = reader.read(theta)?;
                    for (a, x) in acc.iter_mut().zip(w) {
                        *a += g * x;
                    }
                }
                let dx = step_of(&nodes);
                for a in acc.iter_mut() {
                    *a *= dx;
                }
                let m = p.apply(&acc, space)?;
                reader.note_clamp(m.clamped);
                m.value
            }
            DelayKind::UserOpaque { f, .. } => f(h)?,
        };
        if !raw.is_finite() {
            return Err(DelayError::NonFinite);
        }
        let value = raw.clamp(0.0, r);
        if value != raw {
            reader.note_clamp(true);
        }
        Ok(value)
    }

    /// `[-Θᵘ(φ), -Θˡ(φ)]` together with every θ the evaluation reads.
    pub fn dependency_segment(&self, h: &dyn HistoryView) -> Result<SegmentReport, DelayError> {
        let mut trace = EvalTrace::default();
        let _ = self.evaluate_traced(h, &mut trace)?;
        let r = self.max_delay;
        let space = h.space();
        let mut buf = vec![0.0; space.dim()];
        let mut anchored = |pairs: &mut Vec<f64>, anchor: f64, chi: &ScalarMap| -> Result<(), DelayError> {
            h.eval_into(-anchor, &mut buf)?;
            pairs.push(anchor);
            pairs.push(chi.apply(&buf, space)?.value);
            Ok(())
        };
        let mut set = Vec::new();
        match &self.kind {
            DelayKind::Constant(_) => {
                return Ok(SegmentReport {
                    theta_upper: 0.0,
                    theta_lower: 0.0,
                    anchors_used: Vec::new(),
                })
            }
            DelayKind::NestedPoint(t) => anchored(&mut set, t.anchor, &t.chi)?,
            DelayKind::SumOfNested(terms) => {
                for t in terms {
                    anchored(&mut set, t.anchor, &t.chi)?;
                }
            }
            DelayKind::IntegralOuter { limits, .. } | DelayKind::IntegralInner { limits, .. } => {
                anchored(&mut set, limits.anchor_upper, &limits.chi_upper)?;
                anchored(&mut set, limits.anchor_lower, &limits.chi_lower)?;
            }
            DelayKind::UserOpaque { segment, .. } => {
                let seg = segment.as_ref().ok_or(DelayError::SegmentUnknown)?;
                let (upper, lower) = seg(h)?;
                if !(0.0 <= lower && lower <= upper && upper <= r) {
                    return Err(DelayError::Invalid(format!(
                        "declared segment Θᵘ={upper}, Θˡ={lower} violates 0 ≤ Θˡ ≤ Θᵘ ≤ {r}"
                    )));
                }
                return Ok(SegmentReport {
                    theta_upper: upper,
                    theta_lower: lower,
                    anchors_used: Vec::new(),
                });
            }
        }
        let upper = set.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lower = set.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(SegmentReport {
            theta_upper: upper,
            theta_lower: lower,
            anchors_used: trace.reads,
        })
    }

    /// Fuzz the ignorance condition: perturb `h` outside its delayed segment
    /// and check that the delay value does not move.
    ///
    /// Each perturbation ψ keeps every knot of `h` inside the segment, adds
    /// knots at the segment ends and at every point the evaluation reads
    /// (with `h`'s values), and replaces everything outside by random
    /// piecewise-linear bumps of norm at most one. Structured functionals
    /// must reproduce `η(h)` bit for bit; opaque ones within
    /// [`OPAQUE_TOLERANCE`].
    pub fn verify_ignorance(
        &self,
        h: &HistorySegment,
        trials: usize,
        seed: u64,
    ) -> Result<IgnoranceReport, DelayError> {
        let segment = self.dependency_segment(h)?;
        let reference = self.evaluate(h)?;
        let tolerance = if self.is_structured() { 0.0 } else { OPAQUE_TOLERANCE };
        let outcomes: Vec<(f64, f64, Option<HistorySegment>)> = (0..trials)
            .into_par_iter()
            .map(|trial| -> Result<_, DelayError> {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(trial as u64);
                let psi = perturb_outside(h, &segment, &mut rng)?;
                let eta = self.evaluate(&psi)?;
                let dev = (eta - reference).abs();
                let keep = (dev > tolerance || dev.is_nan()).then_some(psi);
                Ok((dev, eta, keep))
            })
            .collect::<Result<_, _>>()?;
        let mut max_deviation: f64 = 0.0;
        let mut counterexample = None;
        for (trial, (dev, eta, psi)) in outcomes.into_iter().enumerate() {
            max_deviation = max_deviation.max(dev);
            if counterexample.is_none() {
                if let Some(psi) = psi {
                    counterexample = Some(Counterexample {
                        trial,
                        eta_reference: reference,
                        eta_perturbed: eta,
                        psi,
                    });
                }
            }
        }
        Ok(IgnoranceReport {
            passes: counterexample.is_none(),
            trials,
            max_deviation,
            tolerance,
            segment,
            counterexample,
        })
    }

    /// Statistical lower estimate of the local Lipschitz constant of `η` on
    /// the `ω`-ball around `center`.
    ///
    /// Pairs are sampled at distances spread over six decades below `ω`.
    /// The pair with the largest quotient and the pair with the largest jump
    /// are then bisected along their connecting segment; a jump that
    /// survives 50 halvings marks the functional as not locally Lipschitz.
    pub fn estimate_local_lipschitz(
        &self,
        center: &HistorySegment,
        radius: f64,
        trials: usize,
        seed: u64,
    ) -> Result<LipschitzEstimate, DelayError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(DelayError::Invalid("radius must be positive".into()));
        }
        type Pair = (f64, f64, f64, HistorySegment, HistorySegment);
        let pairs: Vec<Option<Pair>> = (0..trials)
            .into_par_iter()
            .map(|trial| -> Result<Option<Pair>, DelayError> {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(trial as u64);
                let (a, b) = ball_pair(center, radius, trial % 4 == 0, &mut rng)?;
                let dist = a.distance(&b)?;
                if dist == 0.0 {
                    return Ok(None);
                }
                let jump = (self.evaluate(&a)? - self.evaluate(&b)?).abs();
                Ok(Some((jump / dist, jump, dist, a, b)))
            })
            .collect::<Result<_, _>>()?;
        let valid: Vec<Pair> = pairs.into_iter().flatten().collect();
        let samples = valid.len();
        let mut estimate = valid.iter().map(|p| p.0).fold(0.0, f64::max);
        let mut locally_lipschitz = true;
        let by_quotient = valid.iter().max_by(|x, y| x.0.total_cmp(&y.0));
        let by_jump = valid.iter().max_by(|x, y| x.1.total_cmp(&y.1));
        for pair in [by_quotient, by_jump].into_iter().flatten() {
            let (q, jumps) = self.bisect_jump(&pair.3, &pair.4, pair.2)?;
            estimate = estimate.max(q);
            if jumps {
                locally_lipschitz = false;
            }
        }
        Ok(LipschitzEstimate {
            estimate,
            samples,
            locally_lipschitz,
        })
    }

    fn bisect_jump(&self, a: &HistorySegment, b: &HistorySegment, dist: f64) -> Result<(f64, bool), DelayError> {
        const LEVELS: i32 = 50;
        let along = |s: f64| -> Result<f64, DelayError> { self.evaluate(&lerp_segments(a, b, s)?) };
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let (mut f_lo, mut f_hi) = (along(lo)?, along(hi)?);
        let initial = (f_hi - f_lo).abs();
        if initial == 0.0 {
            return Ok((0.0, false));
        }
        let mut best: f64 = initial / dist;
        for _ in 0..LEVELS {
            let mid = 0.5 * (lo + hi);
            let f_mid = along(mid)?;
            if (f_mid - f_lo).abs() >= (f_hi - f_mid).abs() {
                hi = mid;
                f_hi = f_mid;
            } else {
                lo = mid;
                f_lo = f_mid;
            }
            let gap = (f_hi - f_lo).abs();
            if gap <= 1e-8 * f_hi.abs().max(f_lo.abs()).max(1.0) {
                break;
            }
            best = best.max(gap / ((hi - lo) * dist));
        }
        Ok((best, (f_hi - f_lo).abs() >= 0.25 * initial))
    }
}

fn check_horizon(r: f64) -> Result<(), DelayError> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(DelayError::Invalid(format!("max delay must be positive, got {r}")));
    }
    Ok(())
}

fn check_range(name: &str, m: &ScalarMap, r: f64) -> Result<(), DelayError> {
    let (lo, hi) = m.range();
    if lo < 0.0 || hi > r {
        return Err(DelayError::Invalid(format!(
            "{name} range [{lo}, {hi}] not inside [0, {r}]"
        )));
    }
    Ok(())
}

fn check_anchor(anchor: f64, r: f64) -> Result<(), DelayError> {
    if !(anchor > 0.0 && anchor <= r) {
        return Err(DelayError::Invalid(format!("anchor {anchor} outside (0, {r}]")));
    }
    Ok(())
}

fn check_nested(t: &NestedPoint, r: f64) -> Result<(), DelayError> {
    check_anchor(t.anchor, r)?;
    check_range("chi", &t.chi, r)?;
    check_range("p", &t.p, r)
}

fn check_limits(l: &IntegralLimits, r: f64) -> Result<(), DelayError> {
    check_anchor(l.anchor_upper, r)?;
    check_anchor(l.anchor_lower, r)?;
    check_range("chi_upper", &l.chi_upper, r)?;
    check_range("chi_lower", &l.chi_lower, r)
}

struct Reader<'a, 't> {
    h: &'a dyn HistoryView,
    buf: Vec<f64>,
    trace: Option<&'t mut EvalTrace>,
}

impl Reader<'_, '_> {
    fn read(&mut self, theta: f64) -> Result<&[f64], DelayError> {
        self.h.eval_into(theta, &mut self.buf)?;
        if let Some(t) = self.trace.as_deref_mut() {
            t.reads.push(theta);
        }
        if self.buf.iter().any(|x| !x.is_finite()) {
            return Err(DelayError::NonFinite);
        }
        Ok(&self.buf)
    }

    fn note_clamp(&mut self, clamped: bool) {
        if clamped {
            if let Some(t) = self.trace.as_deref_mut() {
                t.clamp_events += 1;
            }
        }
    }
}

fn nested_value(term: &NestedPoint, reader: &mut Reader<'_, '_>) -> Result<f64, DelayError> {
    let space = reader.h.space();
    let chi = term.chi.apply(reader.read(-term.anchor)?, space)?;
    reader.note_clamp(chi.clamped);
    let p = term.p.apply(reader.read(-chi.value)?, space)?;
    reader.note_clamp(p.clamped);
    Ok(p.value)
}

/// Integration limits `(a, b) = (-χ²(φ(-r²)), -χ¹(φ(-r¹)))`.
fn limits_value(l: &IntegralLimits, reader: &mut Reader<'_, '_>) -> Result<(f64, f64), DelayError> {
    let space = reader.h.space();
    let up = l.chi_upper.apply(reader.read(-l.anchor_upper)?, space)?;
    reader.note_clamp(up.clamped);
    let lo = l.chi_lower.apply(reader.read(-l.anchor_lower)?, space)?;
    reader.note_clamp(lo.clamped);
    Ok((-lo.value, -up.value))
}

/// Uniform nodes from `a` to `b` (either orientation) with spacing at most `dx`.
/// They depend only on the limits, never on the argument's knot layout.
fn quadrature_nodes(a: f64, b: f64, dx: f64) -> Vec<f64> {
    if a == b {
        return Vec::new();
    }
    let n = ((b - a).abs() / dx).ceil().max(1.0) as usize;
    (0..=n)
        .map(|i| if i == n { b } else { a + (b - a) * i as f64 / n as f64 })
        .collect()
}

fn step_of(nodes: &[f64]) -> f64 {
    if nodes.len() < 2 {
        0.0
    } else {
        (nodes[nodes.len() - 1] - nodes[0]) / (nodes.len() - 1) as f64
    }
}

fn random_direction(space: Space, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..space.dim()).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let n = space.norm(&v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

fn perturb_outside(
    h: &HistorySegment,
    seg: &SegmentReport,
    rng: &mut ChaCha8Rng,
) -> Result<HistorySegment, DelayError> {
    let r = h.horizon();
    let space = h.space();
    let dim = space.dim();
    let (a, b) = (-seg.theta_upper, -seg.theta_lower);
    let gap = 1e-9 * r.max(1.0);
    let mut inside: Vec<f64> = h.times().iter().copied().filter(|t| *t >= a && *t <= b).collect();
    inside.push(a);
    inside.push(b);
    inside.extend(seg.anchors_used.iter().copied().filter(|t| *t >= a && *t <= b));
    let mut outside: Vec<f64> = h.times().iter().copied().filter(|t| *t < a || *t > b).collect();
    let extra = rng.random_range(1..=8);
    for _ in 0..extra {
        outside.push(rng.random_range(-r..=0.0));
    }
    outside.push(-r);
    outside.push(0.0);
    outside.retain(|t| *t < a - gap || *t > b + gap);

    let mut knots: Vec<(f64, bool)> = inside.into_iter().map(|t| (t, true)).collect();
    knots.extend(outside.into_iter().map(|t| (t, false)));
    knots.sort_by(|x, y| x.0.total_cmp(&y.0));
    knots.dedup_by(|x, y| x.0 == y.0);
    // drop outside knots crowding each other
    let mut filtered: Vec<(f64, bool)> = Vec::with_capacity(knots.len());
    for k in knots {
        if let Some(prev) = filtered.last() {
            if !k.1 && k.0 - prev.0 < gap {
                continue;
            }
            if k.1 && !prev.1 && k.0 - prev.0 < gap {
                filtered.pop();
            }
        }
        filtered.push(k);
    }

    let amplitude = rng.random_range(0.05..=1.0);
    let mut times = Vec::with_capacity(filtered.len());
    let mut data = Vec::with_capacity(filtered.len() * dim);
    let mut buf = vec![0.0; dim];
    for (t, keep) in filtered {
        h.eval_into(t, &mut buf)?;
        if !keep {
            let dir = random_direction(space, rng);
            let s = amplitude * rng.random_range(0.1..=1.0);
            for (x, d) in buf.iter_mut().zip(dir) {
                *x += s * d;
            }
        }
        times.push(t);
        data.extend_from_slice(&buf);
    }
    Ok(HistorySegment::from_parts(r, space, times, data)?)
}

/// Two segments in the `ω`-ball around `center`, at a random distance
/// spread over six decades.
fn ball_pair(
    center: &HistorySegment,
    radius: f64,
    uniform_direction: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(HistorySegment, HistorySegment), DelayError> {
    let r = center.horizon();
    let space = center.space();
    let dim = space.dim();
    let mut times: Vec<f64> = center.times().to_vec();
    for _ in 0..rng.random_range(2..=10) {
        times.push(rng.random_range(-r..=0.0));
    }
    times.sort_by(f64::total_cmp);
    times.dedup_by(|x, y| (*x - *y).abs() < 1e-12 * r.max(1.0));
    let scale = 0.5 * radius * 10f64.powf(-rng.random_range(0.0..6.0));
    let base_dir = random_direction(space, rng);
    let diff_dir = random_direction(space, rng);
    let mut a = Vec::with_capacity(times.len() * dim);
    let mut b = Vec::with_capacity(times.len() * dim);
    let mut buf = vec![0.0; dim];
    for &t in &times {
        center.eval_into(t, &mut buf)?;
        let (s1, s2) = if uniform_direction {
            (0.5 * radius * rng.random_range(-1.0..=1.0), scale)
        } else {
            (
                0.5 * radius * rng.random_range(-1.0..=1.0),
                scale * rng.random_range(-1.0..=1.0),
            )
        };
        let dir1 = if uniform_direction {
            base_dir.clone()
        } else {
            random_direction(space, rng)
        };
        let dir2 = if uniform_direction {
            diff_dir.clone()
        } else {
            random_direction(space, rng)
        };
        for i in 0..dim {
            let x = buf[i] + s1 * dir1[i];
            a.push(x);
            b.push(x + s2 * dir2[i]);
        }
    }
    Ok((
        HistorySegment::from_parts(r, space, times.clone(), a)?,
        HistorySegment::from_parts(r, space, times, b)?,
    ))
}

/// `(1 - s) a + s b` on the (shared) knot set of `a`.
fn lerp_segments(a: &HistorySegment, b: &HistorySegment, s: f64) -> Result<HistorySegment, DelayError> {
    let data: Vec<f64> = a
        .knots()
        .zip(b.knots())
        .flat_map(|((_, x), (_, y))| x.iter().zip(y).map(move |(p, q)| p + s * (q - p)))
        .collect();
    Ok(HistorySegment::from_parts(
        a.horizon(),
        a.space(),
        a.times().to_vec(),
        data,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::StateVector;

    fn ramp(r: f64) -> HistorySegment {
        // φ(θ) = θ + 1 on [-1, 0]
        HistorySegment::new(
            vec![(-r, StateVector::scalar(1.0 - r)), (0.0, StateVector::scalar(1.0))],
            r,
        )
        .unwrap()
    }

    fn example_nested() -> DelayFunctional {
        DelayFunctional::nested_point(
            NestedPoint {
                p: ScalarMap::affine(1.0, 0.0, 0.0, 1.0).unwrap(),
                chi: ScalarMap::constant(0.5).unwrap(),
                anchor: 1.0,
            },
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn constant_functional() {
        let eta = DelayFunctional::constant(0.3, 1.0).unwrap();
        assert_eq!(eta.evaluate(&ramp(1.0)).unwrap(), 0.3);
        let seg = eta.dependency_segment(&ramp(1.0)).unwrap();
        assert_eq!((seg.theta_upper, seg.theta_lower), (0.0, 0.0));
        assert!(seg.anchors_used.is_empty());
        let rep = eta.verify_ignorance(&ramp(1.0), 200, 1).unwrap();
        assert!(rep.passes);
        assert_eq!(rep.max_deviation, 0.0);
        assert_eq!(
            eta.estimate_local_lipschitz(&ramp(1.0), 0.5, 200, 2).unwrap().estimate,
            0.0
        );
    }

    #[test]
    fn nested_point_hand_evaluation() {
        let eta = example_nested();
        // φ(-χ(φ(-1))) = φ(-0.5) = 0.5
        assert_eq!(eta.evaluate(&ramp(1.0)).unwrap(), 0.5);
        let seg = eta.dependency_segment(&ramp(1.0)).unwrap();
        assert_eq!((seg.theta_upper, seg.theta_lower), (1.0, 0.5));
        assert_eq!(seg.anchors_used, vec![-1.0, -0.5]);
        let rep = eta.verify_ignorance(&ramp(1.0), 500, 7).unwrap();
        assert!(rep.passes);
        assert_eq!(rep.max_deviation, 0.0);
    }

    #[test]
    fn pinned_p_gives_constant_delay() {
        let eta = DelayFunctional::nested_point(
            NestedPoint {
                p: ScalarMap::affine(3.0, 0.1, 0.4, 0.4).unwrap(),
                chi: ScalarMap::affine(1.0, 0.0, 0.0, 1.0).unwrap(),
                anchor: 1.0,
            },
            1.0,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let a: f64 = rng.random_range(-5.0..5.0);
            let b: f64 = rng.random_range(-5.0..5.0);
            let phi =
                HistorySegment::new(vec![(-1.0, StateVector::scalar(a)), (0.0, StateVector::scalar(b))], 1.0).unwrap();
            assert_eq!(eta.evaluate(&phi).unwrap(), 0.4);
        }
    }

    #[test]
    fn integral_outer_segment() {
        let eta = DelayFunctional::integral_outer(
            ScalarMap::affine(1.0, 0.0, 0.0, 1.0).unwrap(),
            Weight::Constant { value: 1.0 },
            IntegralLimits {
                chi_upper: ScalarMap::constant(0.2).unwrap(),
                anchor_upper: 1.0,
                chi_lower: ScalarMap::constant(0.9).unwrap(),
                anchor_lower: 1.0,
            },
            1.0,
        )
        .unwrap();
        let seg = eta.dependency_segment(&ramp(1.0)).unwrap();
        assert_eq!((seg.theta_upper, seg.theta_lower), (1.0, 0.2));
        // ∫_{-0.9}^{-0.2} (θ + 1) dθ = 0.7 - (0.81 - 0.04)/2 = 0.315; trapezoid is exact on a line
        assert!((eta.evaluate(&ramp(1.0)).unwrap() - 0.315).abs() < 1e-12);
    }

    #[test]
    fn opaque_without_segment_is_unknown() {
        let eta = DelayFunctional::user_opaque(Arc::new(|_h: &dyn HistoryView| Ok(0.1)), None, 1.0).unwrap();
        assert_eq!(
            eta.dependency_segment(&ramp(1.0)).unwrap_err(),
            DelayError::SegmentUnknown
        );
    }

    #[test]
    fn planted_violation_is_caught() {
        let f: OpaqueFn = Arc::new(|h: &dyn HistoryView| {
            let mut v = [0.0];
            h.eval_into(0.0, &mut v)?;
            Ok(0.5 + 0.1 * v[0])
        });
        let seg: SegmentFn = Arc::new(|_h: &dyn HistoryView| Ok((1.0, 0.5)));
        let eta = DelayFunctional::user_opaque(f, Some(seg), 1.0).unwrap();
        let rep = eta.verify_ignorance(&ramp(1.0), 100, 3).unwrap();
        assert!(!rep.passes);
        let cx = rep.counterexample.unwrap();
        assert_eq!(cx.trial, 0);
        assert_ne!(cx.eta_perturbed, cx.eta_reference);
    }

    #[test]
    fn affine_lipschitz_estimate_approaches_slope() {
        let a = 0.7;
        let eta = DelayFunctional::nested_point(
            NestedPoint {
                p: ScalarMap::affine(a, 0.5, 0.0, 1.0).unwrap(),
                chi: ScalarMap::constant(0.25).unwrap(),
                anchor: 1.0,
            },
            1.0,
        )
        .unwrap();
        let center = HistorySegment::constant(StateVector::scalar(0.0), 1.0).unwrap();
        let est = eta.estimate_local_lipschitz(&center, 0.2, 400, 5).unwrap();
        assert!(est.locally_lipschitz);
        assert!(est.estimate <= a * (1.0 + 1e-6), "{}", est.estimate);
        assert!(est.estimate >= 0.99 * a);
    }

    #[test]
    fn jump_is_flagged_not_lipschitz() {
        let eta = DelayFunctional::nested_point(
            NestedPoint {
                p: ScalarMap::table(vec![(-1.0, 0.2), (0.0, 0.2), (0.0, 0.8), (1.0, 0.8)], 0.0, 1.0).unwrap(),
                chi: ScalarMap::constant(0.5).unwrap(),
                anchor: 1.0,
            },
            1.0,
        )
        .unwrap();
        let center = HistorySegment::constant(StateVector::scalar(0.0), 1.0).unwrap();
        let few = eta.estimate_local_lipschitz(&center, 0.5, 20, 9).unwrap();
        let many = eta.estimate_local_lipschitz(&center, 0.5, 400, 9).unwrap();
        assert!(!many.locally_lipschitz);
        assert!(many.estimate >= few.estimate);
        assert!(many.estimate > 1e10);
    }

    #[test]
    fn table_lookup_is_right_continuous() {
        let pts = vec![(0.0, 0.1), (0.5, 0.1), (0.5, 0.9), (1.0, 0.9)];
        assert_eq!(table_lookup(&pts, 0.25), 0.1);
        assert_eq!(table_lookup(&pts, 0.5), 0.9);
        assert_eq!(table_lookup(&pts, -3.0), 0.1);
        assert_eq!(table_lookup(&pts, 3.0), 0.9);
        assert!(ScalarMap::table(pts, 0.0, 1.0).unwrap().declared_lipschitz().is_none());
    }

    #[test]
    fn clamping_is_traced() {
        let eta = DelayFunctional::nested_point(
            NestedPoint {
                p: ScalarMap::affine(10.0, 0.0, 0.0, 1.0).unwrap(),
                chi: ScalarMap::constant(0.5).unwrap(),
                anchor: 1.0,
            },
            1.0,
        )
        .unwrap();
        let mut trace = EvalTrace::default();
        assert_eq!(eta.evaluate_traced(&ramp(1.0), &mut trace).unwrap(), 1.0);
        assert_eq!(trace.clamp_events, 1);
    }

    #[test]
    fn constructor_validation() {
        assert!(DelayFunctional::constant(1.5, 1.0).is_err());
        assert!(DelayFunctional::nested_point(
            NestedPoint {
                p: ScalarMap::affine(1.0, 0.0, 0.0, 2.0).unwrap(),
                chi: ScalarMap::constant(0.5).unwrap(),
                anchor: 1.0,
            },
            1.0
        )
        .is_err());
        assert!(DelayFunctional::nested_point(
            NestedPoint {
                p: ScalarMap::affine(1.0, 0.0, 0.0, 1.0).unwrap(),
                chi: ScalarMap::constant(0.5).unwrap(),
                anchor: 0.0,
            },
            1.0
        )
        .is_err());
        let wrong_horizon = HistorySegment::constant(StateVector::scalar(0.0), 2.0).unwrap();
        assert!(matches!(
            example_nested().evaluate(&wrong_horizon),
            Err(DelayError::HorizonMismatch { .. })
        ));
    }
}
