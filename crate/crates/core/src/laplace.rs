//! Inverse Laplace transform along a fixed-parameter Talbot contour.
//!
//! With `θ_k = -π + (k + 1/2)·2π/M` the nodes are
//! `u_k = (M/t)·(0.5017·θ cot(0.6407·θ) - 0.6122 + 0.2645·iθ)` and the
//! inversion is the trapezoid sum of `e^{u t} F(u) u'(θ) / (iM)`.

use num_complex::Complex64;

use crate::error::{argument, Result};

const A: f64 = 0.5017;
const B: f64 = 0.6407;
const C: f64 = 0.6122;
const D: f64 = 0.2645;

pub const DEFAULT_CONTOUR_NODES: usize = 32;

/// Contour nodes with their pre-multiplied quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceContour {
    nodes: Vec<Complex64>,
    derivative_weights: Vec<Complex64>,
    t_scale: f64,
}

impl LaplaceContour {
    pub fn nodes(&self) -> &[Complex64] {
        &self.nodes
    }

    pub fn derivative_weights(&self) -> &[Complex64] {
        &self.derivative_weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn t_scale(&self) -> f64 {
        self.t_scale
    }

    /// Indices of the nodes in the closed upper half plane. The remaining
    /// nodes are their complex conjugates.
    pub fn upper_half(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&k| self.nodes[k].im >= 0.0).collect()
    }

    /// Multiplicity with which an upper-half node enters the real-part sum:
    /// 2 for a conjugate pair, 1 for a node on the real axis.
    pub fn pair_factor(&self, k: usize) -> f64 {
        if self.nodes[k].im > 0.0 {
            2.0
        } else {
            1.0
        }
    }

    /// Same contour rescaled for inversion at `t_scale`.
    pub fn rescaled(&self, t_scale: f64) -> Result<Self> {
        talbot_contour(self.nodes.len(), t_scale)
    }
}

/// Builds the `M`-node contour for inversion at `t_scale`.
pub fn talbot_contour(m: usize, t_scale: f64) -> Result<LaplaceContour> {
    if m < 8 {
        return argument(format!("Talbot contour needs at least 8 nodes, got {m}"));
    }
    if !(t_scale > 0.0 && t_scale.is_finite()) {
        return argument(format!("inversion point must be positive, got {t_scale}"));
    }
    let mf = m as f64;
    let scale = mf / t_scale;
    let mut nodes = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    for k in 0..m {
        let theta = -std::f64::consts::PI + (k as f64 + 0.5) * 2.0 * std::f64::consts::PI / mf;
        let (re, dre) = if theta.abs() < 1e-8 {
            // θ cot(bθ) → 1/b, derivative → 0
            (A / B, 0.0)
        } else {
            let bt = B * theta;
            let s = bt.sin();
            (A * theta / bt.tan(), A / bt.tan() - A * bt / (s * s))
        };
        let z = Complex64::new(re - C, D * theta) * scale;
        let dz = Complex64::new(dre, D) * scale;
        let w = (z * t_scale).exp() * dz / Complex64::new(0.0, mf);
        nodes.push(z);
        weights.push(w);
    }
    Ok(LaplaceContour { nodes, derivative_weights: weights, t_scale })
}

/// `Σ w_k F(u_k)`, the inverse transform at the contour's `t_scale`.
pub fn invert_at_unit(contour: &LaplaceContour, samples: &[Complex64]) -> Result<Complex64> {
    if samples.len() != contour.len() {
        return argument(format!(
            "{} samples for a {}-node contour",
            samples.len(),
            contour.len()
        ));
    }
    Ok(contour.derivative_weights.iter().zip(samples).map(|(w, f)| w * f).sum())
}

/// Inverts a transform known to satisfy `F(conj u) = conj F(u)` from its
/// values on [`LaplaceContour::upper_half`] only.
pub fn invert_real(contour: &LaplaceContour, upper_samples: &[Complex64]) -> Result<f64> {
    let idx = contour.upper_half();
    if upper_samples.len() != idx.len() {
        return argument(format!(
            "{} samples for {} upper-half nodes",
            upper_samples.len(),
            idx.len()
        ));
    }
    Ok(idx
        .iter()
        .zip(upper_samples)
        .map(|(&k, f)| contour.pair_factor(k) * (contour.derivative_weights[k] * f).re)
        .sum())
}

/// Convenience wrapper evaluating `f` at every node.
pub fn invert_fn(contour: &LaplaceContour, f: impl Fn(Complex64) -> Complex64) -> Complex64 {
    contour.nodes.iter().zip(&contour.derivative_weights).map(|(u, w)| w * f(*u)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn elementary_pairs() {
        let k = talbot_contour(32, 1.0).unwrap();
        assert!((invert_fn(&k, |u| 1.0 / u) - c(1.0)).norm() < 1e-10);
        assert!((invert_fn(&k, |u| 1.0 / (u * u)) - c(1.0)).norm() < 1e-10);
        assert!((invert_fn(&k, |u| 1.0 / (u + 3.0)) - c((-3f64).exp())).norm() < 1e-8);
        assert_eq!(invert_fn(&k, |_| c(0.0)), c(0.0));
    }

    #[test]
    fn bessel_pairs() {
        let k = talbot_contour(32, 1.0).unwrap();
        // J0(2), J1(2)
        let j0 = invert_fn(&k, |u| (-1.0 / u).exp() / u);
        let j1 = invert_fn(&k, |u| (-1.0 / u).exp() / (u * u));
        assert!((j0.re - 0.223_890_779_141_235_7).abs() < 1e-8, "{j0}");
        assert!((j1.re - 0.576_724_807_756_873_4).abs() < 1e-8, "{j1}");
    }

    #[test]
    fn rejects_small_contour() {
        assert!(talbot_contour(7, 1.0).is_err());
        assert!(talbot_contour(8, 0.0).is_err());
    }

    #[test]
    fn nodes_come_in_conjugate_pairs() {
        let k = talbot_contour(32, 1.0).unwrap();
        let n = k.len();
        for i in 0..n {
            assert!((k.nodes()[i] - k.nodes()[n - 1 - i].conj()).norm() < 1e-12);
            assert!(k.nodes()[i].im != 0.0);
        }
        assert_eq!(k.upper_half().len(), 16);
        let upper: Vec<_> = k.upper_half().iter().map(|&i| (-2.0 / k.nodes()[i]).exp() / k.nodes()[i]).collect();
        let full = invert_fn(&k, |u| (-2.0 / u).exp() / u);
        assert!((invert_real(&k, &upper).unwrap() - full.re).abs() < 1e-13);
    }

    #[test]
    fn odd_contour_has_real_vertex() {
        let k = talbot_contour(33, 1.0).unwrap();
        assert_eq!(k.nodes().iter().filter(|u| u.im == 0.0).count(), 1);
        assert!((invert_fn(&k, |u| 1.0 / u) - c(1.0)).norm() < 1e-10);
        let upper: Vec<_> = k.upper_half().iter().map(|&i| 1.0 / k.nodes()[i]).collect();
        assert!((invert_real(&k, &upper).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn rescaled_inversion() {
        let k = talbot_contour(32, 2.5).unwrap();
        assert!((invert_fn(&k, |u| 1.0 / (u * u)) - c(2.5)).norm() < 1e-10);
    }
}
