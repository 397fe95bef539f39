//! Reference problems shared by tests, benchmarks and examples.

use std::f64::consts::{E, PI};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::delay::{DelayError, DelayFunctional, IntegralLimits, NestedPoint, ScalarMap, Weight};
use crate::history::{HistoryError, HistorySegment, Space, StateVector};
use crate::operators::{EvolutionOperator, Kernel, Nonlinearity, ScalarFunction};
use crate::solver::{ProblemSpec, SolverError};

/// `u̇ = -u(t - 1)`.
pub fn constant_delay_oracle() -> Arc<ProblemSpec> {
    scalar_ode(
        0.0,
        ScalarFunction::Affine {
            slope: -1.0,
            intercept: 0.0,
        },
        DelayFunctional::constant(1.0, 1.0).expect("valid constant delay"),
    )
}

/// `u̇ = -rate·u`, with a constant delay of `0.5` on horizon `1` that never
/// matters.
pub fn pure_decay(rate: f64) -> Arc<ProblemSpec> {
    scalar_ode(
        rate,
        ScalarFunction::Affine {
            slope: 0.0,
            intercept: 0.0,
        },
        DelayFunctional::constant(0.5, 1.0).expect("valid constant delay"),
    )
}

/// `u̇ + (a + d)u = p·u(t - η)·e^{-u(t - η)}` in one dimension.
pub fn nicholson_ode(a: f64, d: f64, p: f64, delay: DelayFunctional) -> Arc<ProblemSpec> {
    let op = EvolutionOperator::ode_diag(vec![a], d).expect("finite rate");
    let nl = Nonlinearity::local(ScalarFunction::Nicholson { p }, Space::Ode { dim: 1 });
    Arc::new(ProblemSpec::new(op, nl, delay).expect("matching spaces"))
}

fn scalar_ode(rate: f64, b: ScalarFunction, delay: DelayFunctional) -> Arc<ProblemSpec> {
    let op = EvolutionOperator::ode_diag(vec![rate], 0.0).expect("finite rate");
    let nl = Nonlinearity::local(b, Space::Ode { dim: 1 });
    Arc::new(ProblemSpec::new(op, nl, delay).expect("matching spaces"))
}

/// Diffusive Nicholson blowflies on `(0, length)` with Dirichlet conditions:
/// `u_t - ν u_xx + d u = p ∫ f(x - y) u(t - η, y) e^{-u(t - η, y)} dy`.
pub struct NicholsonPde {
    pub n_modes: usize,
    pub length: f64,
    pub diffusion: f64,
    pub d: f64,
    pub p: f64,
    pub kernel: Kernel,
}

impl Default for NicholsonPde {
    fn default() -> Self {
        Self {
            n_modes: 64,
            length: PI,
            diffusion: 1.0,
            d: 0.0,
            p: E,
            kernel: Kernel::Gaussian { alpha: 0.1 },
        }
    }
}

impl NicholsonPde {
    /// `p = e³`. With delays around 2.5 the positive steady state is
    /// unstable and long runs settle on an oscillation.
    pub fn oscillatory() -> Self {
        Self {
            p: E.powi(3),
            ..Self::default()
        }
    }

    pub fn space(&self) -> Space {
        Space::PdeGrid {
            n_grid: self.n_modes,
            length: self.length,
        }
    }

    pub fn build(&self, delay: DelayFunctional) -> Result<Arc<ProblemSpec>, SolverError> {
        let op = EvolutionOperator::build_dirichlet_laplacian(self.n_modes, self.length, self.diffusion, self.d)?;
        let nl = Nonlinearity::nicholson(self.p, self.kernel.clone(), self.space())?;
        Ok(Arc::new(ProblemSpec::new(op, nl, delay)?))
    }

    /// `θ ↦ amplitude·(1 + θ/(2r))·sin(πx/ℓ)` sampled at `n_knots` times.
    pub fn sine_bump(&self, horizon: f64, amplitude: f64, n_knots: usize) -> Result<HistorySegment, HistoryError> {
        let profile: Vec<f64> = self
            .space()
            .grid_points()
            .iter()
            .map(|x| (PI * x / self.length).sin())
            .collect();
        HistorySegment::from_fn(self.space(), horizon, n_knots, |t| {
            let s = amplitude * (1.0 + t / (2.0 * horizon));
            profile.iter().map(|v| s * v).collect()
        })
    }
}

/// `η(φ) = p(φ(-χ(φ(-r))))` with both maps affine in the spatial mean:
/// `χ(w) = clamp(0.5 + 0.1⟨w⟩, [r/4, r])`, `p(w) = clamp(0.6r + 0.1⟨w⟩, [0.3r, r])`.
pub fn demo_nested_point(r: f64) -> Result<DelayFunctional, DelayError> {
    DelayFunctional::nested_point(nested_term(r, 0.5, 0.1, 1.0)?, r)
}

fn nested_term(r: f64, chi0: f64, slope: f64, anchor: f64) -> Result<NestedPoint, DelayError> {
    Ok(NestedPoint {
        p: ScalarMap::affine(slope, 0.6 * r, 0.3 * r, r)?,
        chi: ScalarMap::affine(slope, chi0 * r, 0.25 * r, r)?,
        anchor: anchor * r,
    })
}

/// Three nested terms with weights chosen so the sum stays in `[0, r]`.
pub fn demo_sum_of_nested(r: f64) -> Result<DelayFunctional, DelayError> {
    let term = |chi0: f64, anchor: f64, scale: f64| -> Result<NestedPoint, DelayError> {
        Ok(NestedPoint {
            p: ScalarMap::affine(0.05, 0.2 * r * scale, 0.1 * r * scale, 0.3 * r * scale)?,
            chi: ScalarMap::affine(0.1, chi0 * r, 0.25 * r, r)?,
            anchor: anchor * r,
        })
    };
    DelayFunctional::sum_of_nested(
        vec![term(0.5, 1.0, 1.0)?, term(0.7, 0.8, 1.0)?, term(0.4, 0.6, 1.0)?],
        r,
    )
}

fn demo_limits(r: f64) -> Result<IntegralLimits, DelayError> {
    Ok(IntegralLimits {
        chi_upper: ScalarMap::affine(0.05, 0.3 * r, 0.2 * r, 0.4 * r)?,
        anchor_upper: r,
        chi_lower: ScalarMap::affine(0.05, 0.8 * r, 0.6 * r, r)?,
        anchor_lower: 0.5 * r,
    })
}

/// `η(φ) = ∫ p(φ(θ)) e^{θ} dθ` over state-dependent limits.
pub fn demo_integral_outer(r: f64) -> Result<DelayFunctional, DelayError> {
    DelayFunctional::integral_outer(
        ScalarMap::affine(0.1, 0.8 * r, 0.5 * r, r)?,
        Weight::Exponential { scale: 1.0, rate: 1.0 },
        demo_limits(r)?,
        r,
    )
}

/// `η(φ) = p(∫ φ(θ) dθ)` over state-dependent limits.
pub fn demo_integral_inner(r: f64) -> Result<DelayFunctional, DelayError> {
    DelayFunctional::integral_inner(
        ScalarMap::affine(0.2, 0.5 * r, 0.25 * r, r)?,
        Weight::Constant { value: 1.0 },
        demo_limits(r)?,
        r,
    )
}

/// `n` random nonnegative segments with sup-norm at most `max_norm`:
/// random knot values in a random smooth spatial profile.
pub fn random_ensemble(
    space: Space,
    horizon: f64,
    n: usize,
    max_norm: f64,
    seed: u64,
) -> Result<Vec<HistorySegment>, HistoryError> {
    let points = match space {
        Space::PdeGrid { length, .. } => space.grid_points().iter().map(|x| x / length).collect(),
        Space::Ode { dim } => vec![0.5; dim],
    };
    (0..n)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let n_knots = rng.random_range(3..=9);
            let freq = rng.random_range(1..=3) as f64;
            let profile: Vec<f64> = points.iter().map(|x: &f64| (PI * freq * x).sin().abs()).collect();
            let unit = space.norm(&profile).max(f64::MIN_POSITIVE);
            let knots = (0..n_knots)
                .map(|i| {
                    let t = if i + 1 == n_knots {
                        0.0
                    } else {
                        -horizon + horizon * i as f64 / (n_knots - 1) as f64
                    };
                    let a = rng.random_range(0.0..=max_norm) / unit;
                    let v = profile.iter().map(|p| a * p).collect();
                    StateVector::new(v, space).map(|s| (t, s))
                })
                .collect::<Result<Vec<_>, _>>()?;
            HistorySegment::new(knots, horizon)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_delays_stay_in_range() {
        let phi = HistorySegment::constant(StateVector::scalar(2.0), 1.0).unwrap();
        for eta in [
            demo_nested_point(1.0).unwrap(),
            demo_sum_of_nested(1.0).unwrap(),
            demo_integral_outer(1.0).unwrap(),
            demo_integral_inner(1.0).unwrap(),
        ] {
            let v = eta.evaluate(&phi).unwrap();
            assert!(v > 0.0 && v <= 1.0, "{eta:?}: {v}");
        }
    }

    #[test]
    fn ensemble_respects_norm_bound() {
        let pde = NicholsonPde::default();
        let ens = random_ensemble(pde.space(), 1.0, 8, 10.0, 1).unwrap();
        assert_eq!(ens.len(), 8);
        for phi in &ens {
            assert!(phi.sup_norm() <= 10.0 + 1e-12);
            assert!(phi.knots().all(|(_, v)| v.iter().all(|x| *x >= 0.0)));
        }
    }
}
