//! Ready-made bases and integrator settings for the built-in benchmark
//! systems.

use crate::basis::{gaussian_grid, monomials, BasisMode, ProductBasis};
use crate::error::Result;
use crate::sde::EulerMaruyama;

/// Seven Gaussians on `[-1.2, 1.2]` with `s = 0.4` for the metastable
/// coordinates, five on `[-1, 1]` with `s = 0.5` for the fast ones.
pub fn lemon_slice_basis() -> Result<ProductBasis> {
    ProductBasis::new(vec![
        BasisMode::new(0, gaussian_grid(7, -1.2, 1.2, 0.4)),
        BasisMode::new(1, gaussian_grid(7, -1.2, 1.2, 0.4)),
        BasisMode::new(2, gaussian_grid(5, -1.0, 1.0, 0.5)),
        BasisMode::new(3, gaussian_grid(5, -1.0, 1.0, 0.5)),
    ])
}

/// `dt = 1e-3`, `3e5` steps kept every 100th for 3000 samples, after a
/// burn-in of 1000 steps.
pub fn lemon_slice_integrator() -> EulerMaruyama {
    EulerMaruyama {
        dt: 1e-3,
        n_steps: 300_000,
        save_every: 100,
        burn_in: 1_000,
    }
}

pub const LEMON_SLICE_START: [f64; 4] = [1.0, 0.0, 0.0, 0.0];

/// Monomials `1, x, ..., x^degree` in every coordinate.
pub fn monomial_basis(dim: usize, degree: u32) -> Result<ProductBasis> {
    ProductBasis::new((0..dim).map(|k| BasisMode::new(k, monomials(degree))).collect())
}
