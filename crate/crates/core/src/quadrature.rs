//! Tanh-sinh (double-exponential) quadrature on finite intervals.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;

use crate::error::{argument, Result};

/// Half-width of the truncated tanh-sinh abscissa range.
const T_MAX: f64 = 4.0;

/// Quadrature nodes and weights on `[a, b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    a: f64,
    b: f64,
}

impl TimeGrid {
    /// Grid from explicit nodes and weights; nodes must increase strictly
    /// and lie inside `[a, b]`.
    pub fn from_parts(nodes: Vec<f64>, weights: Vec<f64>, a: f64, b: f64) -> Result<Self> {
        if !(b > a) {
            return argument(format!("interval [{a}, {b}] is empty"));
        }
        if nodes.is_empty() || nodes.len() != weights.len() {
            return argument("nodes and weights must be non-empty and of equal length");
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return argument("nodes must increase strictly");
        }
        if nodes[0] < a || *nodes.last().unwrap() > b {
            return argument("nodes must lie inside the interval");
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return argument("weights must be positive and finite");
        }
        Ok(Self { nodes, weights, a, b })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Joins two grids on adjacent intervals `[a, m]` and `[m, b]`.
    pub fn concat(&self, other: &TimeGrid) -> Result<TimeGrid> {
        if (self.b - other.a).abs() > 1e-12 * (1.0 + self.b.abs()) {
            return argument("grids are not adjacent");
        }
        let mut nodes = self.nodes.clone();
        let mut weights = self.weights.clone();
        nodes.extend_from_slice(&other.nodes);
        weights.extend_from_slice(&other.weights);
        TimeGrid::from_parts(nodes, weights, self.a, other.b)
    }

    /// The grid mirrored about the interval midpoint, `t -> a + b - t`.
    pub fn mirrored(&self) -> TimeGrid {
        let s = self.a + self.b;
        TimeGrid {
            nodes: self.nodes.iter().rev().map(|t| s - t).collect(),
            weights: self.weights.iter().rev().copied().collect(),
            a: self.a,
            b: self.b,
        }
    }

    /// Index of the node closest to `t`.
    pub fn nearest(&self, t: f64) -> usize {
        let mut best = 0;
        for (i, x) in self.nodes.iter().enumerate() {
            if (x - t).abs() < (self.nodes[best] - t).abs() {
                best = i;
            }
        }
        best
    }
}

/// Tanh-sinh rule on `[a, b]` with step `2^-(level+1)` in the transformed
/// variable (about `16·2^level + 1` nodes).
///
/// Nodes that round onto an endpoint are dropped; their weights lie below
/// double precision.
pub fn tanh_sinh_grid(a: f64, b: f64, level: u32) -> Result<TimeGrid> {
    if !(b > a) || !a.is_finite() || !b.is_finite() {
        return argument(format!("tanh-sinh interval [{a}, {b}] is empty"));
    }
    if level == 0 || level > 16 {
        return argument(format!("tanh-sinh level must be in 1..=16, got {level}"));
    }
    let h = 0.5f64.powi(level as i32 + 1);
    let n = (T_MAX / h).ceil() as i64;
    let half = 0.5 * (b - a);
    let mut nodes = Vec::with_capacity((2 * n + 1) as usize);
    let mut weights = Vec::with_capacity((2 * n + 1) as usize);
    for k in -n..=n {
        let t = k as f64 * h;
        let u = FRAC_PI_2 * t.sinh();
        // 1 - |x| without cancellation: 2 e^{-2|u|} / (1 + e^{-2|u|}).
        let e = (-2.0 * u.abs()).exp();
        let one_minus = 2.0 * e / (1.0 + e);
        let node = if u < 0.0 { a + half * one_minus } else { b - half * one_minus };
        let cu = u.cosh();
        let w = h * half * FRAC_PI_2 * t.cosh() / (cu * cu);
        if node <= a || node >= b || !(w > 0.0) {
            continue;
        }
        if let Some(&last) = nodes.last() {
            if node <= last {
                continue;
            }
        }
        nodes.push(node);
        weights.push(w);
    }
    TimeGrid::from_parts(nodes, weights, a, b)
}

/// Composite tanh-sinh grid on `[a, b]` split at the interior point `m`.
pub fn composite_grid(a: f64, m: f64, b: f64, level: u32) -> Result<TimeGrid> {
    if !(m > a && b > m) {
        return argument(format!("split point {m} is not inside [{a}, {b}]"));
    }
    tanh_sinh_grid(a, m, level)?.concat(&tanh_sinh_grid(m, b, level)?)
}

/// `Σ w_i f_i`.
pub fn integrate(grid: &TimeGrid, samples: &[Complex64]) -> Result<Complex64> {
    if samples.len() != grid.len() {
        return argument(format!(
            "sample count {} does not match node count {}",
            samples.len(),
            grid.len()
        ));
    }
    Ok(grid.weights.iter().zip(samples).map(|(w, f)| f * *w).sum())
}

/// Real-valued variant of [`integrate`] taking the integrand as a closure.
pub fn integrate_fn(grid: &TimeGrid, f: impl Fn(f64) -> f64) -> f64 {
    grid.nodes.iter().zip(&grid.weights).map(|(x, w)| w * f(*x)).sum()
}
