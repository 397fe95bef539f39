//! The linear part `Ã = A + d·I` with its exact spectral semigroup, and the
//! delayed nonlinearity `B` (local, nonlocal convolution, Nicholson).

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::history::{Space, StateVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("invalid operator parameter: {0}")]
    InvalidParameter(String),
    #[error("semigroup time must be nonnegative, got {0}")]
    NegativeTime(f64),
    #[error("state space {got:?} does not match operator space {expected:?}")]
    SpaceMismatch { expected: Space, got: Space },
    #[error("non-finite input to nonlinearity")]
    NonFinite,
}

/// Unnormalized DST-I on `n` interior points, computed through a complex
/// FFT of length `2(n + 1)`.
///
/// `forward`: `V_k = Σ_j v_j sin(π j k / (n+1))`;
/// `inverse`: `v_j = 2/(n+1) Σ_k V_k sin(π j k / (n+1))`.
#[derive(Clone)]
pub struct SineTransform {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for SineTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SineTransform").field("n", &self.n).finish()
    }
}

impl SineTransform {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(2 * (n + 1));
        Self { n, fft }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn forward(&self, input: &[f64], out: &mut [f64]) {
        let n = self.n;
        let m = 2 * (n + 1);
        let mut buf = vec![Complex::new(0.0, 0.0); m];
        for (j, &v) in input.iter().enumerate() {
            buf[j + 1].re = v;
            buf[m - j - 1].re = -v;
        }
        self.fft.process(&mut buf);
        for (k, o) in out.iter_mut().enumerate() {
            *o = -0.5 * buf[k + 1].im;
        }
    }

    pub fn inverse(&self, input: &[f64], out: &mut [f64]) {
        self.forward(input, out);
        let s = 2.0 / (self.n as f64 + 1.0);
        for o in out.iter_mut() {
            *o *= s;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OperatorKind {
    /// Diagonal matrix `A = diag(a_i)` acting on `R^n`.
    OdeDiag { eigenvalues: Vec<f64> },
    /// `-ν ∂²/∂x²` on `(0, ℓ)` with homogeneous Dirichlet conditions.
    PdeDirichlet {
        n_modes: usize,
        length: f64,
        diffusion: f64,
    },
}

/// Spectral data of `Ã = A + d·I`.
#[derive(Clone, Debug)]
pub struct EvolutionOperator {
    kind: OperatorKind,
    shift: f64,
    rates: Vec<f64>,
    space: Space,
    dst: Option<SineTransform>,
}

/// Per-mode factors of one exponential-Euler step of length `dt`:
/// `e^{-λ dt}` and `∫₀^dt e^{-λ s} ds`.
#[derive(Clone, Debug)]
pub struct StepFactors {
    dt: f64,
    decay: Vec<f64>,
    integral: Vec<f64>,
}

impl StepFactors {
    pub fn dt(&self) -> f64 {
        self.dt
    }
}

/// `∫₀^dt e^{-λ s} ds = (1 - e^{-λ dt}) / λ`, switching to its Taylor series
/// when `|λ dt| < 1e-8`.
pub fn phi1_integral(rate: f64, dt: f64) -> f64 {
    let x = rate * dt;
    if x.abs() < 1e-8 {
        dt * (1.0 - x / 2.0 + x * x / 6.0)
    } else {
        -(-x).exp_m1() / rate
    }
}

impl EvolutionOperator {
    pub fn ode_diag(eigenvalues: Vec<f64>, shift: f64) -> Result<Self, OperatorError> {
        if eigenvalues.is_empty() {
            return Err(OperatorError::InvalidParameter("empty eigenvalue list".into()));
        }
        if eigenvalues.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(OperatorError::InvalidParameter(
                "eigenvalues must be finite and nonnegative".into(),
            ));
        }
        check_shift(shift)?;
        let rates = eigenvalues.iter().map(|a| a + shift).collect();
        let space = Space::Ode { dim: eigenvalues.len() };
        Ok(Self {
            kind: OperatorKind::OdeDiag { eigenvalues },
            shift,
            rates,
            space,
            dst: None,
        })
    }

    /// Dirichlet Laplacian with eigenpairs `(ν(kπ/ℓ)² + d, sin(kπx/ℓ))`,
    /// `k = 1..=n_modes`, on a grid of `n_modes` interior points.
    pub fn build_dirichlet_laplacian(
        n_modes: usize,
        length: f64,
        diffusion: f64,
        shift: f64,
    ) -> Result<Self, OperatorError> {
        if n_modes == 0 {
            return Err(OperatorError::InvalidParameter("n_modes must be positive".into()));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(OperatorError::InvalidParameter("length must be positive".into()));
        }
        if !(diffusion > 0.0 && diffusion.is_finite()) {
            return Err(OperatorError::InvalidParameter("diffusion must be positive".into()));
        }
        check_shift(shift)?;
        let rates = (1..=n_modes)
            .map(|k| diffusion * (k as f64 * PI / length).powi(2) + shift)
            .collect();
        Ok(Self {
            kind: OperatorKind::PdeDirichlet {
                n_modes,
                length,
                diffusion,
            },
            shift,
            rates,
            space: Space::PdeGrid {
                n_grid: n_modes,
                length,
            },
            dst: Some(SineTransform::new(n_modes)),
        })
    }

    pub fn kind(&self) -> &OperatorKind {
        &self.kind
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn space(&self) -> Space {
        self.space
    }

    /// Eigenvalues of `Ã` (already shifted by `d`), one per mode.
    pub fn spectrum(&self) -> &[f64] {
        &self.rates
    }

    /// Smallest eigenvalue of `Ã`.
    pub fn min_rate(&self) -> f64 {
        self.rates.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Physical values to modal coefficients (identity for ODE operators).
    pub fn to_modes(&self, v: &[f64], out: &mut [f64]) {
        match &self.dst {
            Some(dst) => dst.forward(v, out),
            None => out.copy_from_slice(v),
        }
    }

    pub fn from_modes(&self, c: &[f64], out: &mut [f64]) {
        match &self.dst {
            Some(dst) => dst.inverse(c, out),
            None => out.copy_from_slice(c),
        }
    }

    /// `e^{-Ãt} v`.
    pub fn semigroup_apply(&self, t: f64, v: &StateVector) -> Result<StateVector, OperatorError> {
        if !(t >= 0.0) {
            return Err(OperatorError::NegativeTime(t));
        }
        self.check_space(v.space())?;
        let mut modes = vec![0.0; self.rates.len()];
        self.to_modes(v.values(), &mut modes);
        for (c, &l) in modes.iter_mut().zip(&self.rates) {
            *c *= (-l * t).exp();
        }
        let mut out = vec![0.0; modes.len()];
        self.from_modes(&modes, &mut out);
        Ok(StateVector::new(out, self.space).expect("semigroup output matches operator space"))
    }

    pub fn step_factors(&self, dt: f64) -> StepFactors {
        StepFactors {
            dt,
            decay: self.rates.iter().map(|&l| (-l * dt).exp()).collect(),
            integral: self.rates.iter().map(|&l| phi1_integral(l, dt)).collect(),
        }
    }

    /// One exponential-Euler step:
    /// `out = e^{-Ã dt} u + Ã⁻¹(1 - e^{-Ã dt}) forcing`, mode by mode.
    pub fn exp_euler_step(&self, f: &StepFactors, u: &[f64], forcing: &[f64], out: &mut [f64]) {
        match &self.dst {
            None => {
                for i in 0..out.len() {
                    out[i] = f.decay[i] * u[i] + f.integral[i] * forcing[i];
                }
            }
            Some(dst) => {
                let n = out.len();
                let mut um = vec![0.0; n];
                let mut fm = vec![0.0; n];
                dst.forward(u, &mut um);
                dst.forward(forcing, &mut fm);
                for k in 0..n {
                    um[k] = f.decay[k] * um[k] + f.integral[k] * fm[k];
                }
                dst.inverse(&um, out);
            }
        }
    }

    pub(crate) fn check_space(&self, space: Space) -> Result<(), OperatorError> {
        if space != self.space {
            return Err(OperatorError::SpaceMismatch {
                expected: self.space,
                got: space,
            });
        }
        Ok(())
    }
}

fn check_shift(shift: f64) -> Result<(), OperatorError> {
    if !(shift >= 0.0 && shift.is_finite()) {
        return Err(OperatorError::InvalidParameter("shift d must be nonnegative".into()));
    }
    Ok(())
}

/// The scalar birth function `b : R → R`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarFunction {
    Affine {
        slope: f64,
        intercept: f64,
    },
    /// `b(w) = p·w·e^{-w}`.
    Nicholson {
        p: f64,
    },
}

/// Past this argument `e^{-w}` would overflow; Nicholson evaluation saturates.
const EXP_SATURATION: f64 = 700.0;

impl ScalarFunction {
    pub fn value(&self, w: f64) -> f64 {
        match *self {
            ScalarFunction::Affine { slope, intercept } => slope * w + intercept,
            ScalarFunction::Nicholson { p } => {
                if -w > EXP_SATURATION {
                    log::warn!("nicholson argument {w} saturated at -{EXP_SATURATION}");
                    p * w * EXP_SATURATION.exp()
                } else {
                    p * w * (-w).exp()
                }
            }
        }
    }

    /// Lipschitz constant on `[lo, hi]` (`hi` may be `+∞`).
    pub fn lipschitz_on(&self, lo: f64, hi: f64) -> f64 {
        match *self {
            ScalarFunction::Affine { slope, .. } => slope.abs(),
            ScalarFunction::Nicholson { p } => {
                // b'(w) = p(1-w)e^{-w}; its only interior extremum is at w = 2.
                let d = |w: f64| {
                    if w.is_infinite() {
                        0.0
                    } else {
                        ((1.0 - w) * (-w.clamp(-EXP_SATURATION, EXP_SATURATION)).exp()).abs()
                    }
                };
                let mut m = d(lo).max(d(hi));
                if lo < 2.0 && hi > 2.0 {
                    m = m.max(d(2.0));
                }
                p.abs() * m
            }
        }
    }

    /// `sup_w |b(w)|` over `w ≥ 0`, when finite.
    pub fn sup_nonnegative(&self) -> Option<f64> {
        match *self {
            ScalarFunction::Affine { slope: 0.0, intercept } => Some(intercept.abs()),
            ScalarFunction::Affine { .. } => None,
            ScalarFunction::Nicholson { p } => Some(p.abs() / std::f64::consts::E),
        }
    }
}

/// Convolution kernel `f` for the nonlocal term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    /// Point evaluation: the nonlinearity becomes local.
    Dirac,
    /// `f(s) = (4πα)^{-1/2} e^{-s²/4α}`.
    Gaussian { alpha: f64 },
    /// `f ≡ value`.
    Uniform { value: f64 },
}

impl Kernel {
    pub fn value(&self, s: f64) -> f64 {
        match *self {
            Kernel::Dirac => 0.0,
            Kernel::Gaussian { alpha } => (-s * s / (4.0 * alpha)).exp() / (4.0 * PI * alpha).sqrt(),
            Kernel::Uniform { value } => value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NonlinearityKind {
    Local { b: ScalarFunction },
    Nonlocal { b: ScalarFunction, kernel: Kernel },
    Nicholson { p: f64, kernel: Kernel },
}

/// Sampled kernel matrix `K_ij = h·f(x_i - x_j)` over the grid.
#[derive(Clone, Debug)]
struct Convolution {
    n: usize,
    weights: Vec<f64>,
    m_f: f64,
    measure: f64,
}

/// The delayed nonlinearity `B`.
#[derive(Clone, Debug)]
pub struct Nonlinearity {
    kind: NonlinearityKind,
    b: ScalarFunction,
    space: Space,
    conv: Option<Convolution>,
}

impl Nonlinearity {
    /// `B(v)(x) = b(v(x))`, componentwise for ODE states.
    pub fn local(b: ScalarFunction, space: Space) -> Self {
        Self {
            kind: NonlinearityKind::Local { b: b.clone() },
            b,
            space,
            conv: None,
        }
    }

    /// `B(v)(x) = ∫_Ω b(v(y)) f(x - y) dy` on a grid.
    pub fn nonlocal(b: ScalarFunction, kernel: Kernel, space: Space) -> Result<Self, OperatorError> {
        let conv = Self::build_convolution(&kernel, space)?;
        Ok(Self {
            kind: NonlinearityKind::Nonlocal { b: b.clone(), kernel },
            b,
            space,
            conv,
        })
    }

    /// `b(w) = p·w·e^{-w}` with either a Dirac (local) or a convolution kernel.
    pub fn nicholson(p: f64, kernel: Kernel, space: Space) -> Result<Self, OperatorError> {
        if !(p > 0.0 && p.is_finite()) {
            return Err(OperatorError::InvalidParameter("nicholson p must be positive".into()));
        }
        let conv = Self::build_convolution(&kernel, space)?;
        Ok(Self {
            kind: NonlinearityKind::Nicholson { p, kernel },
            b: ScalarFunction::Nicholson { p },
            space,
            conv,
        })
    }

    fn build_convolution(kernel: &Kernel, space: Space) -> Result<Option<Convolution>, OperatorError> {
        match kernel {
            Kernel::Dirac => Ok(None),
            Kernel::Gaussian { alpha } if !(*alpha > 0.0 && alpha.is_finite()) => Err(OperatorError::InvalidParameter(
                "gaussian alpha must be positive".into(),
            )),
            _ => {
                let Space::PdeGrid { n_grid, length } = space else {
                    return Err(OperatorError::InvalidParameter(
                        "nonlocal kernels need a PDE grid".into(),
                    ));
                };
                let h = space.cell_weight();
                let x = space.grid_points();
                let mut weights = Vec::with_capacity(n_grid * n_grid);
                let mut m_f: f64 = 0.0;
                for xi in &x {
                    for xj in &x {
                        let f = kernel.value(xi - xj);
                        m_f = m_f.max(f.abs());
                        weights.push(h * f);
                    }
                }
                Ok(Some(Convolution {
                    n: n_grid,
                    weights,
                    m_f,
                    measure: length,
                }))
            }
        }
    }

    pub fn kind(&self) -> &NonlinearityKind {
        &self.kind
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn scalar_function(&self) -> &ScalarFunction {
        &self.b
    }

    /// Max of the sampled `|f|` over `Ω - Ω` (`None` for local terms).
    pub fn kernel_bound(&self) -> Option<f64> {
        self.conv.as_ref().map(|c| c.m_f)
    }

    /// Whether `B` maps the whole state space into a bounded set.
    pub fn is_bounded(&self) -> bool {
        match &self.kind {
            NonlinearityKind::Nicholson { .. } => true,
            NonlinearityKind::Local { b } | NonlinearityKind::Nonlocal { b, .. } => b.sup_nonnegative().is_some(),
        }
    }

    /// Evaluate `B` into `out`. Allocation-free apart from the convolution scratch.
    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        match &self.conv {
            None => {
                for (o, &w) in out.iter_mut().zip(v) {
                    *o = self.b.value(w);
                }
            }
            Some(c) => {
                let bv: Vec<f64> = v.iter().map(|&w| self.b.value(w)).collect();
                for (i, o) in out.iter_mut().enumerate() {
                    let row = &c.weights[i * c.n..(i + 1) * c.n];
                    *o = row.iter().zip(&bv).map(|(k, b)| k * b).sum();
                }
            }
        }
    }

    pub fn apply_nonlinearity(&self, v: &StateVector) -> Result<StateVector, OperatorError> {
        if v.space() != self.space {
            return Err(OperatorError::SpaceMismatch {
                expected: self.space,
                got: v.space(),
            });
        }
        if v.values().iter().any(|x| !x.is_finite()) {
            return Err(OperatorError::NonFinite);
        }
        let mut out = vec![0.0; v.values().len()];
        self.apply_into(v.values(), &mut out);
        StateVector::new(out, self.space).map_err(|_| OperatorError::NonFinite)
    }

    /// `L_B` for states with entries in `[-R, R]`.
    pub fn lipschitz_bound(&self, range_bound: f64) -> f64 {
        self.lipschitz_bound_on(-range_bound, range_bound)
    }

    /// `L_B = L_b` (local) or `L_b · M_f · |Ω|` (nonlocal), with `L_b`
    /// taken over entries in `[lo, hi]`.
    pub fn lipschitz_bound_on(&self, lo: f64, hi: f64) -> f64 {
        let lb = self.b.lipschitz_on(lo, hi);
        match &self.conv {
            None => lb,
            Some(c) => lb * c.m_f * c.measure,
        }
    }

    /// `sup_v ‖B(v)‖` in the state norm over nonnegative states, if `B` is bounded.
    pub fn sup_norm_bound(&self) -> Option<f64> {
        let sup_b = self.b.sup_nonnegative()?;
        let pointwise = match &self.conv {
            None => sup_b,
            Some(c) => sup_b * c.m_f * c.measure,
        };
        let n = self.space.dim() as f64;
        Some(pointwise * (self.space.cell_weight() * n).sqrt())
    }
}
