//! Independent reference values shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::FRAC_PI_2;

use crib_core::model::{gaussian_pdf, PhysicalParams};
use crib_core::quadrature::{integrate_fn, tanh_sinh_grid};
use crib_core::Complex64 as C;

/// `J0(x)` by its power series.
pub fn bessel_j0(x: f64) -> f64 {
    let q = -0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for m in 1..120 {
        term *= q / (m as f64 * m as f64);
        sum += term;
    }
    sum
}

/// `J1(x)` by its power series.
pub fn bessel_j1(x: f64) -> f64 {
    let q = -0.25 * x * x;
    let mut term = 0.5 * x;
    let mut sum = term;
    for m in 1..120 {
        term *= q / (m as f64 * (m + 1) as f64);
        sum += term;
    }
    sum
}

/// `∫ G0(Δ) / (Δ - ω - iε) dΔ` with `Δ - ω = ε tan φ`.
pub fn susceptibility(omega: f64, g0: f64) -> C {
    let eps = 1e-7 * g0;
    let grid = tanh_sinh_grid(-FRAC_PI_2, FRAC_PI_2, 9).unwrap();
    let g = |phi: f64| gaussian_pdf(omega + eps * phi.tan(), g0).unwrap();
    C::new(integrate_fn(&grid, |p| g(p) * p.tan()), integrate_fn(&grid, g))
}

/// Steady-state propagation `dE/dz = iχE` over the unit length by RK4;
/// returns `|E(1)|²` for `E(0) = 1`.
pub fn transmission_oracle(omega: f64, params: &PhysicalParams) -> f64 {
    let chi = susceptibility(omega, params.gamma0_rel());
    let f = |e: C| C::new(0.0, 1.0) * chi * e;
    let steps = 2000;
    let h = 1.0 / steps as f64;
    let mut e = C::new(1.0, 0.0);
    for _ in 0..steps {
        let k1 = f(e);
        let k2 = f(e + k1 * (0.5 * h));
        let k3 = f(e + k2 * (0.5 * h));
        let k4 = f(e + k3 * h);
        e += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
    }
    e.norm_sqr()
}
