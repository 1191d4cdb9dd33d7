//! Dimensionless physical parameters, the five-stage protocol schedule and
//! the discretised detuning classes.
//!
//! All times are measured in units of `1/μ` and all detunings in units of
//! `μ`, where `μ` is the memory bandwidth.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{argument, domain, Result};

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;
const INVARIANT_RTOL: f64 = 1e-12;

/// Widths below this fraction of the intrinsic width are clamped so the
/// controlled grid keeps a representable, non-zero step.
const MIN_CONTROLLED_WIDTH_FRACTION: f64 = 1e-12;

/// Physical constants of the ensemble in memory-bandwidth units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    gamma0_rel: f64,
    gamma_rel: f64,
    d0: f64,
    t2_rel: f64,
}

impl PhysicalParams {
    /// Assembles parameters from all four fields, checking that the
    /// redundant ones agree.
    pub fn from_parts(gamma0_rel: f64, gamma_rel: f64, d0: f64, t2_rel: f64) -> Result<Self> {
        if !(gamma0_rel > 0.0 && gamma0_rel.is_finite()) {
            return domain(format!("intrinsic width must be positive, got {gamma0_rel}"));
        }
        if !(gamma_rel >= 0.0 && gamma_rel.is_finite()) {
            return domain(format!("controlled width must be non-negative, got {gamma_rel}"));
        }
        if !(d0 > 0.0 && d0.is_finite()) || !(t2_rel > 0.0 && t2_rel.is_finite()) {
            return domain("optical depth and coherence time must be positive");
        }
        let d0_expected = SQRT_2PI / gamma0_rel;
        let t2_expected = 2f64.sqrt() / gamma0_rel;
        if ((d0 - d0_expected) / d0_expected).abs() > INVARIANT_RTOL {
            return argument(format!("d0 = {d0} disagrees with sqrt(2 pi)/gamma0 = {d0_expected}"));
        }
        if ((t2_rel - t2_expected) / t2_expected).abs() > INVARIANT_RTOL {
            return argument(format!("T2 = {t2_rel} disagrees with sqrt(2)/gamma0 = {t2_expected}"));
        }
        Ok(Self { gamma0_rel, gamma_rel, d0, t2_rel })
    }

    pub fn gamma0_rel(&self) -> f64 {
        self.gamma0_rel
    }

    pub fn gamma_rel(&self) -> f64 {
        self.gamma_rel
    }

    pub fn d0(&self) -> f64 {
        self.d0
    }

    pub fn t2_rel(&self) -> f64 {
        self.t2_rel
    }

    /// Same ensemble, different controlled broadening.
    pub fn with_gamma(&self, gamma_rel: f64) -> Result<Self> {
        derive_params(self.d0, gamma_rel)
    }
}

/// Builds the parameter set for an ensemble of unbroadened optical depth `d0`.
pub fn derive_params(d0: f64, gamma_rel: f64) -> Result<PhysicalParams> {
    if !(d0 > 0.0 && d0.is_finite()) {
        return domain(format!("optical depth must be positive, got {d0}"));
    }
    if !(gamma_rel >= 0.0 && gamma_rel.is_finite()) {
        return domain(format!("controlled width must be non-negative, got {gamma_rel}"));
    }
    Ok(PhysicalParams {
        gamma0_rel: SQRT_2PI / d0,
        gamma_rel,
        d0,
        t2_rel: d0 / PI.sqrt(),
    })
}

/// Durations of the read-in, dephasing, storage and rephasing stages.
///
/// Stage 1 lasts `tau_p`, stages 2 and 4 last `tau_d`, stage 3 lasts `tau_s`
/// and the read-out (stages 4 and 5) mirrors the read-in window `tau_r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSchedule {
    tau_p: f64,
    tau_d: f64,
    tau_s: f64,
    tau_r: f64,
}

impl ProtocolSchedule {
    pub fn new(tau_p: f64, tau_d: f64, tau_s: f64) -> Result<Self> {
        if !(tau_p > 0.0 && tau_p.is_finite()) {
            return domain(format!("read-in duration must be positive, got {tau_p}"));
        }
        if !(tau_d > 0.0 && tau_d.is_finite()) {
            return domain(format!("broadening duration must be positive, got {tau_d}"));
        }
        if !(tau_s >= 0.0 && tau_s.is_finite()) {
            return domain(format!("storage duration must be non-negative, got {tau_s}"));
        }
        Ok(Self { tau_p, tau_d, tau_s, tau_r: tau_p + tau_d })
    }

    pub fn tau_p(&self) -> f64 {
        self.tau_p
    }

    pub fn tau_d(&self) -> f64 {
        self.tau_d
    }

    pub fn tau_s(&self) -> f64 {
        self.tau_s
    }

    pub fn tau_r(&self) -> f64 {
        self.tau_r
    }

    pub fn with_storage(&self, tau_s: f64) -> Result<Self> {
        Self::new(self.tau_p, self.tau_d, tau_s)
    }

    /// End of the whole protocol, `2 tau_r + tau_s`.
    pub fn total_duration(&self) -> f64 {
        2.0 * self.tau_r + self.tau_s
    }
}

/// Storage time `T2/sqrt(8)`, pulse window a quarter of that, unit dephasing time.
pub fn default_schedule(params: &PhysicalParams) -> ProtocolSchedule {
    let tau_s = 0.5 / params.gamma0_rel;
    ProtocolSchedule {
        tau_p: tau_s / 4.0,
        tau_d: 1.0,
        tau_s,
        tau_r: tau_s / 4.0 + 1.0,
    }
}

/// Normalised Gaussian density of standard deviation `width`.
pub fn gaussian_pdf(x: f64, width: f64) -> Result<f64> {
    if !(width > 0.0) {
        return domain(format!("Gaussian width must be positive, got {width}"));
    }
    let r = x / width;
    Ok((-0.5 * r * r).exp() / (SQRT_2PI * width))
}

/// Intrinsic (`K`) and controlled (`N`) detuning classes with their
/// Riemann-sum weights.
///
/// The joint vector uses the flattened index `j*N + k` (0-based) for
/// intrinsic class `j` and controlled class `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetuningGrid {
    intrinsic_nodes: Vec<f64>,
    intrinsic_weights: Vec<f64>,
    controlled_nodes: Vec<f64>,
    controlled_weights: Vec<f64>,
    joint_weights: Vec<f64>,
    extent_sigmas: f64,
}

impl DetuningGrid {
    /// Grid from explicit node and weight lists. Nodes must be symmetric
    /// about zero and uniformly spaced.
    pub fn from_parts(
        intrinsic_nodes: Vec<f64>,
        intrinsic_weights: Vec<f64>,
        controlled_nodes: Vec<f64>,
        controlled_weights: Vec<f64>,
    ) -> Result<Self> {
        check_family("intrinsic", &intrinsic_nodes, &intrinsic_weights)?;
        check_family("controlled", &controlled_nodes, &controlled_weights)?;
        let joint_weights = intrinsic_weights
            .iter()
            .flat_map(|a| controlled_weights.iter().map(move |b| a * b))
            .collect();
        Ok(Self {
            intrinsic_nodes,
            intrinsic_weights,
            controlled_nodes,
            controlled_weights,
            joint_weights,
            extent_sigmas: f64::NAN,
        })
    }

    pub fn k(&self) -> usize {
        self.intrinsic_nodes.len()
    }

    pub fn n(&self) -> usize {
        self.controlled_nodes.len()
    }

    pub fn len(&self) -> usize {
        self.joint_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joint_weights.is_empty()
    }

    pub fn intrinsic_nodes(&self) -> &[f64] {
        &self.intrinsic_nodes
    }

    pub fn intrinsic_weights(&self) -> &[f64] {
        &self.intrinsic_weights
    }

    pub fn controlled_nodes(&self) -> &[f64] {
        &self.controlled_nodes
    }

    pub fn controlled_weights(&self) -> &[f64] {
        &self.controlled_weights
    }

    pub fn joint_weights(&self) -> &[f64] {
        &self.joint_weights
    }

    pub fn extent_sigmas(&self) -> f64 {
        self.extent_sigmas
    }

    /// Flattened index of intrinsic class `j` and controlled class `k`.
    #[inline]
    pub fn joint_index(&self, j: usize, k: usize) -> usize {
        j * self.n() + k
    }

    /// `1 - sum(weights)` for the intrinsic family.
    pub fn intrinsic_truncation(&self) -> f64 {
        1.0 - self.intrinsic_weights.iter().sum::<f64>()
    }

    /// `1 - sum(weights)` for the controlled family.
    pub fn controlled_truncation(&self) -> f64 {
        1.0 - self.controlled_weights.iter().sum::<f64>()
    }

    /// Sum of the controlled weights (slightly below one for truncated grids).
    pub fn controlled_mass(&self) -> f64 {
        self.controlled_weights.iter().sum()
    }

    /// Largest `|Δ0 + Δ|` over all classes.
    pub fn max_detuning(&self) -> f64 {
        let a = self.intrinsic_nodes.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let b = self.controlled_nodes.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        a + b
    }

    /// The same grid with every controlled detuning negated.
    pub fn with_reversed_controlled(&self) -> Self {
        let mut out = self.clone();
        for x in &mut out.controlled_nodes {
            *x = -*x;
        }
        out
    }

    /// Rephasing time `2π/step` of the controlled family, after which the
    /// discrete classes spuriously realign. Infinite for a single class.
    pub fn controlled_revival_time(&self) -> f64 {
        revival(&self.controlled_nodes)
    }

    /// Rephasing time of the intrinsic family.
    pub fn intrinsic_revival_time(&self) -> f64 {
        revival(&self.intrinsic_nodes)
    }
}

fn revival(nodes: &[f64]) -> f64 {
    if nodes.len() < 2 {
        return f64::INFINITY;
    }
    2.0 * std::f64::consts::PI / (nodes[1] - nodes[0])
}

fn check_family(name: &str, nodes: &[f64], weights: &[f64]) -> Result<()> {
    if nodes.is_empty() || nodes.len() != weights.len() {
        return argument(format!("{name} nodes and weights must be non-empty and equal length"));
    }
    if nodes.iter().chain(weights).any(|x| !x.is_finite()) {
        return argument(format!("{name} grid contains non-finite values"));
    }
    let n = nodes.len();
    for i in 0..n {
        if (nodes[i] + nodes[n - 1 - i]).abs() > 1e-12 * (1.0 + nodes[i].abs()) {
            return argument(format!("{name} nodes are not symmetric about zero"));
        }
    }
    if n > 2 {
        let step = nodes[1] - nodes[0];
        if !(step > 0.0) {
            return argument(format!("{name} nodes must increase"));
        }
        for w in nodes.windows(2) {
            if ((w[1] - w[0]) - step).abs() > 1e-9 * step {
                return argument(format!("{name} nodes are not uniformly spaced"));
            }
        }
    }
    Ok(())
}

fn family(width: f64, count: usize, extent_sigmas: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if count == 1 {
        return Ok((vec![0.0], vec![1.0]));
    }
    let half = (count - 1) / 2;
    let step = 2.0 * extent_sigmas * width / (count - 1) as f64;
    let mut nodes = Vec::with_capacity(count);
    let mut weights = Vec::with_capacity(count);
    for i in 0..count {
        // (i - half) is an exact integer, so node(-x) == -node(x) bit for bit.
        let x = (i as f64 - half as f64) * step;
        nodes.push(x);
        weights.push(step * gaussian_pdf(x, width)?);
    }
    Ok((nodes, weights))
}

/// Uniform detuning grids spanning `±extent_sigmas` standard deviations.
///
/// `k` and `n` must be odd so that the resonant class exists. A single
/// class gets node `0` and weight `1`.
pub fn build_detuning_grid(
    gamma0_rel: f64,
    gamma_rel: f64,
    k: usize,
    n: usize,
    extent_sigmas: f64,
) -> Result<DetuningGrid> {
    if k == 0 || n == 0 || k % 2 == 0 || n % 2 == 0 {
        return argument(format!("class counts must be odd and positive, got K = {k}, N = {n}"));
    }
    if !(extent_sigmas > 0.0 && extent_sigmas.is_finite()) {
        return argument(format!("grid extent must be positive, got {extent_sigmas}"));
    }
    if !(gamma0_rel > 0.0 && gamma0_rel.is_finite()) {
        return domain(format!("intrinsic width must be positive, got {gamma0_rel}"));
    }
    if !(gamma_rel >= 0.0 && gamma_rel.is_finite()) {
        return domain(format!("controlled width must be non-negative, got {gamma_rel}"));
    }
    let controlled_width = gamma_rel.max(MIN_CONTROLLED_WIDTH_FRACTION * gamma0_rel);
    let (intrinsic_nodes, intrinsic_weights) = family(gamma0_rel, k, extent_sigmas)?;
    let (controlled_nodes, controlled_weights) = family(controlled_width, n, extent_sigmas)?;
    let mut grid = DetuningGrid::from_parts(
        intrinsic_nodes,
        intrinsic_weights,
        controlled_nodes,
        controlled_weights,
    )?;
    grid.extent_sigmas = extent_sigmas;
    Ok(grid)
}

/// Detuning grid for `params` using its own intrinsic and controlled widths.
pub fn grid_for(params: &PhysicalParams, k: usize, n: usize, extent_sigmas: f64) -> Result<DetuningGrid> {
    build_detuning_grid(params.gamma0_rel(), params.gamma_rel(), k, n, extent_sigmas)
}
