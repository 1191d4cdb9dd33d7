//! Closed-form results and the numerical efficiency of the two broadening
//! stages alone.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{argument, domain, Result};
use crate::laplace::{invert_real, LaplaceContour};
use crate::model::{build_detuning_grid, gaussian_pdf, DetuningGrid, PhysicalParams};
use crate::propagators::{RankOneGenerator, Stage};
use crate::quadrature::{integrate_fn, tanh_sinh_grid};

type C = Complex64;

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// A polarisation profile sampled on a uniform grid over `z ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    values: Vec<C>,
}

impl Profile {
    /// Samples at `z_i = i/(n-1)`, rescaled so that `∫|P|² dz = 1` by the
    /// trapezoid rule.
    pub fn from_samples(values: Vec<C>) -> Result<Self> {
        if values.len() < 2 {
            return argument("a profile needs at least two samples");
        }
        let mut p = Self { values };
        let e = p.energy();
        if !(e > 0.0 && e.is_finite()) {
            return domain("profile has zero energy");
        }
        let s = 1.0 / e.sqrt();
        for v in &mut p.values {
            *v *= s;
        }
        Ok(p)
    }

    /// `P(z) = 1`.
    pub fn flat(n: usize) -> Result<Self> {
        Self::from_samples(vec![C::new(1.0, 0.0); n])
    }

    pub fn from_fn(n: usize, f: impl Fn(f64) -> C) -> Result<Self> {
        if n < 2 {
            return argument("a profile needs at least two samples");
        }
        Self::from_samples((0..n).map(|i| f(i as f64 / (n - 1) as f64)).collect())
    }

    pub fn values(&self) -> &[C] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn step(&self) -> f64 {
        1.0 / (self.values.len() - 1) as f64
    }

    pub fn z(&self, i: usize) -> f64 {
        i as f64 * self.step()
    }

    fn energy(&self) -> f64 {
        trapezoid(self.step(), self.values.iter().map(|v| v.norm_sqr()))
    }
}

fn trapezoid(h: f64, f: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = f.collect();
    let n = v.len();
    h * (v.iter().sum::<f64>() - 0.5 * (v[0] + v[n - 1]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbativeResult {
    pub eta: f64,
    pub gamma_rel: f64,
    pub tau_d: f64,
    pub p1_profile: Profile,
}

/// `exp(-w² t² / 2)`.
pub fn dephasing_envelope(t: f64, width_rel: f64) -> f64 {
    (-0.5 * width_rel * width_rel * t * t).exp()
}

/// `Σ_k w_k exp(-iΔ_k t)` over the controlled classes of `grid`.
pub fn grid_envelope(grid: &DetuningGrid, t: f64) -> C {
    grid.controlled_nodes()
        .iter()
        .zip(grid.controlled_weights())
        .map(|(d, w)| C::new(0.0, -d * t).exp() * *w)
        .sum()
}

/// `∫₀¹ conj P(z) ∫₀^z P(z') dz' dz` by the trapezoid rule.
fn nested_integral(p: &Profile) -> C {
    let h = p.step();
    let v = p.values();
    let mut inner = C::new(0.0, 0.0);
    let mut prev = C::new(0.0, 0.0);
    let mut total = C::new(0.0, 0.0);
    for i in 1..v.len() {
        inner += (v[i - 1] + v[i]) * (0.5 * h);
        let cur = v[i].conj() * inner;
        total += (prev + cur) * (0.5 * h);
        prev = cur;
    }
    total
}

/// First-order efficiency of the dephasing and rephasing stages,
/// `1 - (2√π/γ) erf(γ τd) Re ∬ conj P(z) ∫₀^z P`. `tau_d` may be infinite.
pub fn perturbative_efficiency(p1: &Profile, gamma_rel: f64, tau_d: f64) -> Result<PerturbativeResult> {
    if !(gamma_rel > 0.0 && gamma_rel.is_finite()) {
        return domain(format!("controlled width must be positive, got {gamma_rel}"));
    }
    if !(tau_d >= 0.0) {
        return domain(format!("broadening time must be non-negative, got {tau_d}"));
    }
    let erf = if tau_d.is_infinite() { 1.0 } else { libm::erf(gamma_rel * tau_d) };
    let eta = 1.0 - 2.0 * PI.sqrt() / gamma_rel * erf * nested_integral(p1).re;
    Ok(PerturbativeResult { eta, gamma_rel, tau_d, p1_profile: p1.clone() })
}

/// Single-intrinsic-class grid for [`broadening_stage_efficiency_numeric`]
/// with enough controlled classes that the discrete rephasing echo
/// `2π/Δδ` lies beyond `4 τd`.
pub fn broadening_grid(gamma_rel: f64, tau_d: f64, extent_sigmas: f64) -> Result<DetuningGrid> {
    let need = 4.0 * extent_sigmas * gamma_rel * tau_d / PI + 1.0;
    let mut n = need.ceil().max(65.0) as usize;
    if n % 2 == 0 {
        n += 1;
    }
    build_detuning_grid(1.0, gamma_rel, 1, n, extent_sigmas)
}

/// `∫₀¹ |P⁽⁴⁾(z)|² dz` after evolving `σ(z, 0) = P⁽¹⁾(z)` through the
/// dephasing and rephasing stages with no input field.
///
/// The transfer function `κ(u) = wᵀ exp(M4 τd) exp(M2 τd) h` tends to the
/// controlled mass `c_w` as `u → ∞`; its regular part is inverted at every
/// lag of the (uniform) profile grid and convolved with the profile.
pub fn broadening_stage_efficiency_numeric(
    p1: &Profile,
    gamma_rel: f64,
    tau_d: f64,
    grid: &DetuningGrid,
    contour: &LaplaceContour,
) -> Result<f64> {
    if !(gamma_rel > 0.0 && gamma_rel.is_finite()) {
        return domain(format!("controlled width must be positive, got {gamma_rel}"));
    }
    if !(tau_d > 0.0 && tau_d.is_finite()) {
        return domain(format!("broadening time must be positive and finite, got {tau_d}"));
    }
    if grid.k() != 1 || grid.intrinsic_nodes()[0] != 0.0 {
        return argument("the broadening-stage numeric needs a single resonant intrinsic class");
    }
    if grid.controlled_revival_time() < 4.0 * tau_d {
        return argument(format!(
            "controlled grid rephases at {:.3} < 4 τd; use more classes",
            grid.controlled_revival_time()
        ));
    }
    let c_w = grid.controlled_mass();
    let n = p1.len();
    let h = p1.step();
    let kappa = |u: C| -> Result<C> {
        let m2 = RankOneGenerator::stage(Stage::S2, u, grid)?;
        let m4 = RankOneGenerator::stage(Stage::S4, u, grid)?;
        let mut v = vec![C::new(1.0, 0.0); grid.len()];
        m2.exp_action(tau_d, &mut v)?;
        m4.exp_action(tau_d, &mut v)?;
        Ok(grid.joint_weights().iter().zip(&v).map(|(w, x)| x * *w).sum::<C>() - c_w)
    };
    // κ_reg(0) is minus the 1/u coefficient: -2∫₀^τd |Σ w e^{-iΔs}|² ds.
    let tg = tanh_sinh_grid(0.0, tau_d, 5)?;
    let k0 = -2.0 * integrate_fn(&tg, |s| grid_envelope(grid, s).norm_sqr());
    let mut kreg = vec![k0; n];
    let upper = contour.upper_half();
    for (m, slot) in kreg.iter_mut().enumerate().skip(1) {
        let c = contour.rescaled(m as f64 * h)?;
        let samples = upper.iter().map(|&k| kappa(c.nodes()[k])).collect::<Result<Vec<_>>>()?;
        *slot = invert_real(&c, &samples)?;
    }
    let v = p1.values();
    let p4: Vec<C> = (0..n)
        .map(|i| {
            let mut conv = C::new(0.0, 0.0);
            for j in 0..=i {
                let wt = if j == 0 || j == i { 0.5 * h } else { h };
                conv += v[j] * (kreg[i - j] * wt);
            }
            if i == 0 {
                conv = C::new(0.0, 0.0);
            }
            v[i] * c_w + conv
        })
        .collect();
    Ok(trapezoid(h, p4.iter().map(|x| x.norm_sqr())))
}

/// `(d0, d)`: optical depths before and after the controlled broadening.
pub fn optical_depths(params: &PhysicalParams) -> (f64, f64) {
    let g0 = params.gamma0_rel();
    let g = params.gamma_rel();
    (SQRT_2PI / g0, SQRT_2PI / (g0 * g0 + g * g).sqrt())
}

/// Intensity transmission `exp(-2π G0(ω))` of the unbroadened ensemble.
pub fn transmission_spectrum(omega_rel: f64, params: &PhysicalParams) -> f64 {
    let g = gaussian_pdf(omega_rel, params.gamma0_rel()).unwrap_or(0.0);
    (-2.0 * PI * g).exp()
}

/// `exp(-t²/T2²)`.
pub fn polarization_decay(t: f64, params: &PhysicalParams) -> f64 {
    let r = t / params.t2_rel();
    (-r * r).exp()
}
