//! Shared fixtures for the benchmarks.

use std::f64::consts::PI;

use sdd_core::scenarios::NicholsonPde;
use sdd_core::{HistorySegment, Space, StateVector};

/// A smooth nonnegative profile on the `n`-point Dirichlet grid of `(0, π)`.
pub fn pde_profile(n: usize) -> StateVector {
    let space = Space::PdeGrid { n_grid: n, length: PI };
    let v = space
        .grid_points()
        .iter()
        .map(|x| x.sin() + 0.3 * (3.0 * x).sin().abs())
        .collect();
    StateVector::new(v, space).expect("grid-sized vector")
}

/// Diffusive Nicholson with `n` modes and its sine-bump initial segment on
/// horizon `r`.
pub fn nicholson(n: usize, r: f64) -> (NicholsonPde, HistorySegment) {
    let pde = NicholsonPde {
        n_modes: n,
        ..NicholsonPde::default()
    };
    let phi = pde.sine_bump(r, 1.0, 11).expect("valid bump");
    (pde, phi)
}
