//! Run configuration: parsing, cross-section validation and construction of
//! core objects.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use sdd_core::delay::{OpaqueFn, SegmentFn};
use sdd_core::{
    DelayError, DelayFunctional, EvolutionOperator, HistorySegment, HistoryView, IntegralLimits, Kernel, NestedPoint,
    Nonlinearity, ProblemSpec, ScalarFunction, ScalarMap, SolverConfig, Space, StateVector, Weight,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    Schema(u32),
    #[error("[{section}] {message}")]
    Invalid { section: &'static str, message: String },
}

fn invalid(section: &'static str, message: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid {
        section,
        message: message.to_string(),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub operator: OperatorSection,
    pub nonlinearity: NonlinearitySection,
    pub delay: DelaySection,
    pub initial: InitialSection,
    pub solver: SolverConfig,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub attractor: AttractorSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSection {
    OdeDiag {
        eigenvalues: Vec<f64>,
        #[serde(default)]
        shift: f64,
    },
    DirichletLaplacian {
        n_modes: usize,
        #[serde(default = "default_length")]
        length: f64,
        #[serde(default = "one")]
        diffusion: f64,
        #[serde(default)]
        shift: f64,
    },
}

fn default_length() -> f64 {
    PI
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NonlinearitySection {
    Affine {
        slope: f64,
        #[serde(default)]
        intercept: f64,
        #[serde(default)]
        kernel: Option<Kernel>,
    },
    Nicholson {
        p: f64,
        #[serde(default)]
        kernel: Option<Kernel>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DelaySection {
    pub max_delay: f64,
    #[serde(default)]
    pub integral_dx: Option<f64>,
    #[serde(flatten)]
    pub functional: FunctionalSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum FunctionalSpec {
    Constant {
        value: f64,
    },
    NestedPoint(NestedSpec),
    SumOfNested {
        terms: Vec<NestedSpec>,
    },
    IntegralOuter {
        p: MapSpec,
        weight: Weight,
        limits: LimitsSpec,
    },
    IntegralInner {
        p: MapSpec,
        weight: Weight,
        limits: LimitsSpec,
    },
    /// `η(φ) = clamp(base + coefficient · Σᵢ ⟨φ(θᵢ)⟩)` with a declared
    /// (possibly wrong) delayed segment, checked only by fuzzing.
    OpaquePoints {
        read_points: Vec<f64>,
        base: f64,
        coefficient: f64,
        /// `[Θᵘ, Θˡ]`.
        declared_segment: [f64; 2],
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NestedSpec {
    pub p: MapSpec,
    pub chi: MapSpec,
    pub anchor: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsSpec {
    pub chi_upper: MapSpec,
    pub anchor_upper: f64,
    pub chi_lower: MapSpec,
    pub anchor_lower: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MapSpec {
    Constant {
        value: f64,
    },
    Affine {
        slope: f64,
        intercept: f64,
        lo: f64,
        hi: f64,
    },
    Table {
        points: Vec<[f64; 2]>,
        lo: f64,
        hi: f64,
    },
}

impl MapSpec {
    fn build(&self) -> Result<ScalarMap, DelayError> {
        match self {
            MapSpec::Constant { value } => ScalarMap::constant(*value),
            MapSpec::Affine {
                slope,
                intercept,
                lo,
                hi,
            } => ScalarMap::affine(*slope, *intercept, *lo, *hi),
            MapSpec::Table { points, lo, hi } => {
                ScalarMap::table(points.iter().map(|p| (p[0], p[1])).collect(), *lo, *hi)
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSection {
    Constant {
        value: f64,
    },
    /// Linear in time from `from` at `-r` to `to` at `0`, uniform in space.
    Ramp {
        from: f64,
        to: f64,
    },
    /// `amplitude·(1 + θ/(2r))·sin(πx/ℓ)`; the spatial factor is 1 for ODEs.
    SineBump {
        amplitude: f64,
        #[serde(default = "default_bump_knots")]
        n_knots: usize,
    },
    Knots {
        times: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
}

fn default_bump_knots() -> usize {
    11
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    pub seed: Option<u64>,
    #[serde(default = "default_omega")]
    pub omega: f64,
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_perturbations")]
    pub n_perturbations: usize,
    #[serde(default = "default_variants")]
    pub n_variants: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub lipschitz_class: Option<f64>,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            seed: None,
            omega: default_omega(),
            q: default_q(),
            epsilon: default_epsilon(),
            n_perturbations: default_perturbations(),
            n_variants: default_variants(),
            trials: default_trials(),
            lipschitz_class: None,
        }
    }
}

fn default_omega() -> f64 {
    0.5
}

fn default_q() -> f64 {
    0.5
}

fn default_epsilon() -> f64 {
    1e-3
}

fn default_perturbations() -> usize {
    20
}

fn default_variants() -> usize {
    5
}

fn default_trials() -> usize {
    1000
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttractorSection {
    pub seed: Option<u64>,
    pub t_long: Option<f64>,
    pub ensemble_size: Option<usize>,
    #[serde(default = "default_max_norm")]
    pub max_norm: f64,
    #[serde(default = "default_pairs")]
    pub pairs: usize,
}

impl Default for AttractorSection {
    fn default() -> Self {
        Self {
            seed: None,
            t_long: None,
            ensemble_size: None,
            max_norm: default_max_norm(),
            pairs: default_pairs(),
        }
    }
}

fn default_max_norm() -> f64 {
    10.0
}

fn default_pairs() -> usize {
    2000
}

/// Everything a command needs, built and cross-checked from a [`RunConfig`].
pub struct Prepared {
    pub config: RunConfig,
    /// Raw bytes of the config file, hashed into reports.
    pub source: Vec<u8>,
    pub problem: Arc<ProblemSpec>,
    pub initial: HistorySegment,
    pub solver: SolverConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Schema(cfg.schema_version));
        }
        Ok(cfg)
    }

    pub fn space(&self) -> Space {
        match &self.operator {
            OperatorSection::OdeDiag { eigenvalues, .. } => Space::Ode { dim: eigenvalues.len() },
            OperatorSection::DirichletLaplacian { n_modes, length, .. } => Space::PdeGrid {
                n_grid: *n_modes,
                length: *length,
            },
        }
    }

    fn build_operator(&self) -> Result<EvolutionOperator, ConfigError> {
        match &self.operator {
            OperatorSection::OdeDiag { eigenvalues, shift } => {
                if eigenvalues.is_empty() {
                    return Err(invalid("operator", "eigenvalues must not be empty"));
                }
                EvolutionOperator::ode_diag(eigenvalues.clone(), *shift)
            }
            OperatorSection::DirichletLaplacian {
                n_modes,
                length,
                diffusion,
                shift,
            } => EvolutionOperator::build_dirichlet_laplacian(*n_modes, *length, *diffusion, *shift),
        }
        .map_err(|e| invalid("operator", e))
    }

    fn build_nonlinearity(&self) -> Result<Nonlinearity, ConfigError> {
        let space = self.space();
        let out = match &self.nonlinearity {
            NonlinearitySection::Affine {
                slope,
                intercept,
                kernel,
            } => {
                let b = ScalarFunction::Affine {
                    slope: *slope,
                    intercept: *intercept,
                };
                match kernel {
                    None | Some(Kernel::Dirac) => Ok(Nonlinearity::local(b, space)),
                    Some(k) => Nonlinearity::nonlocal(b, k.clone(), space),
                }
            }
            NonlinearitySection::Nicholson { p, kernel } => {
                Nonlinearity::nicholson(*p, kernel.clone().unwrap_or(Kernel::Dirac), space)
            }
        };
        out.map_err(|e| invalid("nonlinearity", e))
    }

    fn build_delay(&self) -> Result<DelayFunctional, ConfigError> {
        let d = &self.delay;
        let r = d.max_delay;
        let nested = |s: &NestedSpec| -> Result<NestedPoint, DelayError> {
            Ok(NestedPoint {
                p: s.p.build()?,
                chi: s.chi.build()?,
                anchor: s.anchor,
            })
        };
        let limits = |l: &LimitsSpec| -> Result<IntegralLimits, DelayError> {
            Ok(IntegralLimits {
                chi_upper: l.chi_upper.build()?,
                anchor_upper: l.anchor_upper,
                chi_lower: l.chi_lower.build()?,
                anchor_lower: l.anchor_lower,
            })
        };
        let built = match &d.functional {
            FunctionalSpec::Constant { value } => DelayFunctional::constant(*value, r),
            FunctionalSpec::NestedPoint(s) => nested(s).and_then(|t| DelayFunctional::nested_point(t, r)),
            FunctionalSpec::SumOfNested { terms } => terms
                .iter()
                .map(nested)
                .collect::<Result<Vec<_>, _>>()
                .and_then(|t| DelayFunctional::sum_of_nested(t, r)),
            FunctionalSpec::IntegralOuter { p, weight, limits: l } => p
                .build()
                .and_then(|p| Ok((p, limits(l)?)))
                .and_then(|(p, l)| DelayFunctional::integral_outer(p, weight.clone(), l, r)),
            FunctionalSpec::IntegralInner { p, weight, limits: l } => p
                .build()
                .and_then(|p| Ok((p, limits(l)?)))
                .and_then(|(p, l)| DelayFunctional::integral_inner(p, weight.clone(), l, r)),
            FunctionalSpec::OpaquePoints {
                read_points,
                base,
                coefficient,
                declared_segment,
            } => opaque_points(read_points.clone(), *base, *coefficient, *declared_segment, r),
        };
        let mut eta = built.map_err(|e| invalid("delay", e))?;
        if let Some(dx) = d.integral_dx {
            eta = eta.with_integral_dx(dx).map_err(|e| invalid("delay", e))?;
        }
        Ok(eta)
    }

    fn build_initial(&self) -> Result<HistorySegment, ConfigError> {
        let space = self.space();
        let r = self.delay.max_delay;
        let dim = space.dim();
        let uniform = |v: f64| vec![v; dim];
        let built = match &self.initial {
            InitialSection::Constant { value } => {
                StateVector::new(uniform(*value), space).and_then(|v| HistorySegment::constant(v, r))
            }
            InitialSection::Ramp { from, to } => {
                let a = StateVector::new(uniform(*from), space);
                let b = StateVector::new(uniform(*to), space);
                a.and_then(|a| Ok((a, b?)))
                    .and_then(|(a, b)| HistorySegment::new(vec![(-r, a), (0.0, b)], r))
            }
            InitialSection::SineBump { amplitude, n_knots } => {
                let profile: Vec<f64> = match space {
                    Space::PdeGrid { length, .. } => {
                        space.grid_points().iter().map(|x| (PI * x / length).sin()).collect()
                    }
                    Space::Ode { .. } => uniform(1.0),
                };
                HistorySegment::from_fn(space, r, *n_knots, |t| {
                    let s = amplitude * (1.0 + t / (2.0 * r));
                    profile.iter().map(|p| s * p).collect()
                })
            }
            InitialSection::Knots { times, values } => {
                if times.len() != values.len() {
                    return Err(invalid(
                        "initial",
                        format!("{} times but {} value rows", times.len(), values.len()),
                    ));
                }
                if let Some((i, row)) = values.iter().enumerate().find(|(_, row)| row.len() != dim) {
                    return Err(invalid(
                        "initial",
                        format!("knot {i} has {} components, the state space has {dim}", row.len()),
                    ));
                }
                let mut knots = Vec::with_capacity(times.len());
                for (t, row) in times.iter().zip(values) {
                    let v = StateVector::new(row.clone(), space).map_err(|e| invalid("initial", e))?;
                    knots.push((*t, v));
                }
                HistorySegment::new(knots, r)
            }
        };
        built.map_err(|e| invalid("initial", e))
    }

    /// Build and cross-check every section. Nothing is computed beyond
    /// construction.
    pub fn prepare(self, source: Vec<u8>) -> Result<Prepared, ConfigError> {
        let operator = self.build_operator()?;
        let nonlinearity = self.build_nonlinearity()?;
        let delay = self.build_delay()?;
        let initial = self.build_initial()?;
        let problem = ProblemSpec::new(operator, nonlinearity, delay).map_err(|e| invalid("nonlinearity", e))?;
        self.solver
            .validate(problem.horizon())
            .map_err(|e| invalid("solver", e))?;
        if !(self.solver.t_end > 0.0) {
            return Err(invalid("solver", "t_end must be positive"));
        }
        let v = &self.verify;
        if !(v.q > 0.0 && v.q < 1.0) {
            return Err(invalid("verify", format!("q must lie in (0, 1), got {}", v.q)));
        }
        if !(v.omega > 0.0) {
            return Err(invalid("verify", "omega must be positive"));
        }
        if !(v.epsilon >= 0.0) {
            return Err(invalid("verify", "epsilon must be nonnegative"));
        }
        if let Some(t) = self.attractor.t_long {
            if !(t > problem.horizon()) {
                return Err(invalid("attractor", "t_long must exceed the delay horizon"));
            }
        }
        let solver = self.solver.clone();
        Ok(Prepared {
            config: self,
            source,
            problem: Arc::new(problem),
            initial,
            solver,
        })
    }
}

fn opaque_points(
    read_points: Vec<f64>,
    base: f64,
    coefficient: f64,
    declared: [f64; 2],
    r: f64,
) -> Result<DelayFunctional, DelayError> {
    if let Some(t) = read_points.iter().find(|t| !(-r..=0.0).contains(*t)) {
        return Err(DelayError::Invalid(format!("read point {t} outside [-{r}, 0]")));
    }
    let f: OpaqueFn = Arc::new(move |h: &dyn HistoryView| {
        let mut buf = vec![0.0; h.space().dim()];
        let mut acc = base;
        for &t in &read_points {
            h.eval_into(t, &mut buf)?;
            acc += coefficient * h.space().mean(&buf);
        }
        Ok(acc.clamp(0.0, h.horizon()))
    });
    let seg: SegmentFn = Arc::new(move |_h: &dyn HistoryView| Ok((declared[0], declared[1])));
    DelayFunctional::user_opaque(f, Some(seg), r)
}

pub fn load(path: &Path) -> Result<Prepared, ConfigError> {
    let bytes = std::fs::read(path).map_err(|source| ConfigError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let text = String::from_utf8_lossy(&bytes);
    RunConfig::from_toml(&text)?.prepare(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    const NESTED: &str = r#"
schema_version = 1

[operator]
kind = "ode_diag"
eigenvalues = [1.0]

[nonlinearity]
kind = "affine"
slope = -1.0

[delay]
variant = "nested_point"
max_delay = 1.0
anchor = 1.0
p = { kind = "affine", slope = 1.0, intercept = 0.0, lo = 0.0, hi = 1.0 }
chi = { kind = "constant", value = 0.5 }

[initial]
kind = "ramp"
from = 0.0
to = 1.0

[solver]
dt = 0.01
t_end = 1.0
"#;

    #[test]
    fn parses_nested_point() {
        let p = RunConfig::from_toml(NESTED).unwrap().prepare(Vec::new()).unwrap();
        assert_eq!(p.problem.delay().evaluate(&p.initial).unwrap(), 0.5);
        assert_eq!(p.solver.picard_tol, 1e-10);
    }

    #[test]
    fn rejects_wrong_schema() {
        let text = NESTED.replace("schema_version = 1", "schema_version = 7");
        assert!(matches!(RunConfig::from_toml(&text), Err(ConfigError::Schema(7))));
    }

    #[test]
    fn rejects_dt_above_horizon() {
        let text = NESTED.replace("dt = 0.01", "dt = 2.0");
        let err = RunConfig::from_toml(&text).unwrap().prepare(Vec::new()).err().unwrap();
        assert!(err.to_string().contains("dt exceeds delay horizon"), "{err}");
    }

    #[test]
    fn rejects_space_mismatch_in_knots() {
        let text = NESTED.replace(
            "kind = \"ramp\"\nfrom = 0.0\nto = 1.0",
            "kind = \"knots\"\ntimes = [-1.0, 0.0]\nvalues = [[1.0, 2.0], [1.0, 2.0]]",
        );
        let err = RunConfig::from_toml(&text).unwrap().prepare(Vec::new()).err().unwrap();
        assert!(err.to_string().contains("components"), "{err}");
    }

    #[test]
    fn rejects_unknown_fields() {
        let text = NESTED.replace("t_end = 1.0", "t_end = 1.0\ntypo = 3");
        assert!(RunConfig::from_toml(&text).is_err());
    }
}
