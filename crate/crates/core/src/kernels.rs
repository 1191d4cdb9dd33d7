//! Response kernels `k1..k4`, the transfer kernel `K_E` and the Hermitian
//! efficiency kernel.
//!
//! The retrieved field is
//! `E_out(t) = ∫ K_E(t, t') E_in(τR - t') dt'` for `t, t' ∈ [0, τR]`.
//! Output times `t ≤ τd` fall in the rephasing stage, later ones in the
//! final re-emission stage; kernel arguments `t' ≤ τd` correspond to input
//! absorbed during the dephasing stage and later ones to the read-in stage.
//!
//! [`TransferKernel`] stores its input axis in real time `s = τR - t'`,
//! so `values[(i, j)] = K_E(t_i, τR - s_j)`.

use std::io::{Read, Write};

use faer::Mat;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{argument, CribError, Result};
use crate::laplace::LaplaceContour;
use crate::model::{DetuningGrid, PhysicalParams, ProtocolSchedule};
use crate::propagators::{
    block_reduce, from_block, BlockMode, EigenCache, RankOneGenerator, Stage, StageData,
    StorageMap,
};
use crate::quadrature::{composite_grid, TimeGrid};

type C = Complex64;

const ZERO: C = C::new(0.0, 0.0);
const ONE: C = C::new(1.0, 0.0);

/// Default tanh-sinh level of the time grids.
pub const DEFAULT_QUAD_LEVEL: u32 = 2;

/// Largest accepted `max|Im K_E| / max|K_E|` when all contour nodes are
/// evaluated.
pub const IMAGINARY_RESIDUE_LIMIT: f64 = 1e-7;

/// Magic bytes of the binary matrix dump.
pub const DUMP_MAGIC: &[u8; 8] = b"CRIBKRN1";

/// The four response kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// rephasing output, input absorbed while dephasing
    K1,
    /// rephasing output, input absorbed during read-in
    K2,
    /// final-stage output, input absorbed while dephasing
    K3,
    /// final-stage output, input absorbed during read-in
    K4,
}

/// How each contour node is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Strategy {
    /// Exponential actions on vectors using the diagonal-plus-rank-one form.
    Structured,
    /// Dense exponentials from cached eigendecompositions.
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelOptions {
    pub strategy: Strategy,
    /// Evaluate only the upper-half contour nodes and take twice the real
    /// part. The kernel is real for symmetric detuning grids.
    pub conjugate_symmetry: bool,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self { strategy: Strategy::Structured, conjugate_symmetry: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelDiagnostics {
    pub strategy: Strategy,
    pub contour_nodes_evaluated: usize,
    /// `max|Im K_E| / max|K_E|`; only known when every node was evaluated.
    pub imaginary_residue: Option<f64>,
    /// Cached decompositions that failed the conditioning checks.
    pub eigen_fallbacks: usize,
    /// `2π/Δδ` of the controlled grid; echoes of the discrete grid appear
    /// after this time.
    pub revival_time: f64,
}

/// Sampled `K_E` with its time grids.
#[derive(Debug, Clone)]
pub struct TransferKernel {
    out_grid: TimeGrid,
    in_grid: TimeGrid,
    values: Mat<C>,
    schedule: ProtocolSchedule,
    diagnostics: KernelDiagnostics,
}

impl TransferKernel {
    pub fn out_grid(&self) -> &TimeGrid {
        &self.out_grid
    }

    /// Input grid in real time `s = τR - t'`.
    pub fn in_grid(&self) -> &TimeGrid {
        &self.in_grid
    }

    pub fn values(&self) -> &Mat<C> {
        &self.values
    }

    pub fn schedule(&self) -> &ProtocolSchedule {
        &self.schedule
    }

    pub fn diagnostics(&self) -> &KernelDiagnostics {
        &self.diagnostics
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for j in 0..self.values.ncols() {
            for i in 0..self.values.nrows() {
                m = m.max(self.values[(i, j)].norm());
            }
        }
        m
    }
}

/// Output grid split at `τd` and the matching real-time input grid split
/// at `τp` (its mirror image).
pub fn default_time_grids(schedule: &ProtocolSchedule, level: u32) -> Result<(TimeGrid, TimeGrid)> {
    let out = composite_grid(0.0, schedule.tau_d(), schedule.tau_r(), level)?;
    let inp = out.mirrored();
    Ok((out, inp))
}

/// Per-node ingredients shared by both kernel formulas.
struct NodeParts {
    c: C,
    /// rows `gᵀ exp(M4 t)` at the rephasing-stage output times
    a4: Mat<C>,
    /// rows `g0ᵀ exp(M1 t)` at the final-stage output times
    c1: Mat<C>,
    /// columns `exp(M1 t') h_K` at the read-in arguments
    b1: Mat<C>,
    k1: Mat<C>,
    /// `J` (structured: `X exp(M2 τd) R`)
    j: Mat<C>,
    /// `L·b2` columns
    lb2: Mat<C>,
    /// `B`
    b: Mat<C>,
}

/// Sorted times with their original positions.
struct Schedule1D {
    times: Vec<f64>,
    pos: Vec<usize>,
}

fn sorted(items: Vec<(usize, f64)>) -> Schedule1D {
    let mut items = items;
    items.sort_by(|a, b| a.1.total_cmp(&b.1));
    Schedule1D { pos: items.iter().map(|x| x.0).collect(), times: items.iter().map(|x| x.1).collect() }
}

struct Layout {
    /// rephasing-stage output rows (kernel time t)
    out4: Schedule1D,
    /// final-stage output rows (t - τd)
    out5: Schedule1D,
    /// dephasing-stage input columns (t')
    in2: Schedule1D,
    /// read-in input columns (t' - τd)
    in1: Schedule1D,
}

fn layout(schedule: &ProtocolSchedule, out_grid: &TimeGrid, in_grid: &TimeGrid) -> Result<Layout> {
    let (td, tr) = (schedule.tau_d(), schedule.tau_r());
    let tol = 1e-12 * (1.0 + tr);
    for g in [out_grid, in_grid] {
        if g.a().abs() > tol || (g.b() - tr).abs() > tol {
            return argument(format!("time grids must span [0, τR] = [0, {tr}]"));
        }
    }
    let mut out4 = Vec::new();
    let mut out5 = Vec::new();
    for (i, &t) in out_grid.nodes().iter().enumerate() {
        if t <= td {
            out4.push((i, t.max(0.0)));
        } else {
            out5.push((i, (t - td).min(schedule.tau_p())));
        }
    }
    let mut in2 = Vec::new();
    let mut in1 = Vec::new();
    for (j, &s) in in_grid.nodes().iter().enumerate() {
        let tp = (tr - s).max(0.0);
        if tp <= td {
            in2.push((j, tp));
        } else {
            in1.push((j, (tp - td).min(schedule.tau_p())));
        }
    }
    Ok(Layout { out4: sorted(out4), out5: sorted(out5), in2: sorted(in2), in1: sorted(in1) })
}

fn structured_parts(u: C, grid: &DetuningGrid, schedule: &ProtocolSchedule, lay: &Layout) -> Result<NodeParts> {
    let (k, nc) = (grid.k(), grid.n());
    let n = k * nc;
    let c = 1.0 / u;
    let td = schedule.tau_d();
    let m1 = RankOneGenerator::stage(Stage::S1, u, grid)?;
    let m2 = RankOneGenerator::stage(Stage::S2, u, grid)?;
    let m4t = RankOneGenerator::stage(Stage::S4, u, grid)?.transpose();
    let storage = StorageMap::new(u, grid, schedule.tau_s())?;
    let g0 = grid.intrinsic_weights();
    let w = grid.controlled_weights();

    // b2 columns exp(M2 t') h, then exp(M2 τd) R for the block reductions.
    let m2n = lay.in2.times.len();
    let snaps = m2.exp_action_snapshots(&lay.in2.times, &vec![ONE; n])?;
    let mut y = vec![ZERO; n * (m2n + k)];
    for (col, snap) in snaps.iter().enumerate() {
        y[col * n..(col + 1) * n].copy_from_slice(snap);
    }
    {
        let r = &mut y[m2n * n..];
        for j in 0..k {
            for l in 0..nc {
                r[j * n + j * nc + l] = ONE;
            }
        }
        m2.exp_action(td, r)?;
    }
    // Y = X·[b2 | exp(M2 τd) R]
    storage.apply(&mut y)?;
    let y = from_block(n, m2n + k, &y);
    let yb2 = y.subcols(0, m2n).to_owned();
    let j = y.subcols(m2n, k).to_owned();

    // Rows gᵀ exp(M4 t) and Rw exp(M4 τd), propagated as columns under M4ᵀ.
    let gc: Vec<C> = grid.joint_weights().iter().map(|x| C::new(*x, 0.0)).collect();
    let snaps = m4t.exp_action_snapshots(&lay.out4.times, &gc)?;
    let a4 = Mat::from_fn(snaps.len(), n, |row, i| snaps[row][i]);
    let mut rw = vec![ZERO; n * k];
    for j in 0..k {
        for l in 0..nc {
            rw[j * n + j * nc + l] = C::new(w[l], 0.0);
        }
    }
    m4t.exp_action(td, &mut rw)?;
    let e4rw = Mat::from_fn(k, n, |j, i| rw[j * n + i]);

    let b1s = m1.exp_action_snapshots(&lay.in1.times, &vec![ONE; k])?;
    let b1 = Mat::from_fn(k, b1s.len(), |i, col| b1s[col][i]);
    let g0c: Vec<C> = g0.iter().map(|x| C::new(*x, 0.0)).collect();
    let c1s = m1.transpose().exp_action_snapshots(&lay.out5.times, &g0c)?;
    let c1 = Mat::from_fn(c1s.len(), k, |row, i| c1s[row][i]);

    let k1 = &a4 * &yb2;
    let lb2 = &e4rw * &yb2;
    let b = &e4rw * &j;
    Ok(NodeParts { c, a4, c1, b1, k1, j, lb2, b })
}

fn dense_row(data: &StageData, row: &[C], t: f64) -> Result<Vec<C>> {
    let n = row.len();
    if data.eigen.usable {
        let e = &data.eigen;
        let mut tmp: Vec<C> = (0..n).map(|j| (0..n).map(|i| row[i] * e.vectors[(i, j)]).sum::<C>()).collect();
        for (x, l) in tmp.iter_mut().zip(&e.values) {
            *x *= (l * t).exp();
        }
        Ok((0..n).map(|j| (0..n).map(|i| tmp[i] * e.inverse[(i, j)]).sum()).collect())
    } else {
        let m = data.exp(t)?;
        Ok((0..n).map(|j| (0..n).map(|i| row[i] * m[(i, j)]).sum()).collect())
    }
}

fn dense_col(data: &StageData, col: &[C], t: f64) -> Result<Vec<C>> {
    let n = col.len();
    if data.eigen.usable {
        let e = &data.eigen;
        let mut tmp: Vec<C> = (0..n).map(|i| (0..n).map(|j| e.inverse[(i, j)] * col[j]).sum::<C>()).collect();
        for (x, l) in tmp.iter_mut().zip(&e.values) {
            *x *= (l * t).exp();
        }
        Ok((0..n).map(|i| (0..n).map(|j| e.vectors[(i, j)] * tmp[j]).sum()).collect())
    } else {
        let m = data.exp(t)?;
        Ok((0..n).map(|i| (0..n).map(|j| m[(i, j)] * col[j]).sum()).collect())
    }
}

fn rows_to_mat(rows: Vec<Vec<C>>, ncols: usize) -> Mat<C> {
    Mat::from_fn(rows.len(), ncols, |i, j| rows[i][j])
}

fn cols_to_mat(cols: Vec<Vec<C>>, nrows: usize) -> Mat<C> {
    Mat::from_fn(nrows, cols.len(), |i, j| cols[j][i])
}

fn dense_parts(
    cache: &EigenCache,
    node: usize,
    grid: &DetuningGrid,
    schedule: &ProtocolSchedule,
    lay: &Layout,
) -> Result<NodeParts> {
    let (k, n) = (grid.k(), grid.k() * grid.n());
    let c = 1.0 / cache.nodes()[node];
    let td = schedule.tau_d();
    let s1 = cache.entry(node, Stage::S1);
    let s2 = cache.entry(node, Stage::S2);
    let s3 = cache.entry(node, Stage::S3);
    let s4 = cache.entry(node, Stage::S4);
    let x = s3.exp(schedule.tau_s())?;
    let e2 = s2.exp(td)?;
    let e4 = s4.exp(td)?;
    let x_e2 = &x * &e2;
    let e4_x = &e4 * &x;
    let j = block_reduce(&x_e2, BlockMode::JToKColumns, grid)?;
    let l = block_reduce(&e4_x, BlockMode::LToKRows, grid)?;
    let b = block_reduce(&(&e4_x * &e2), BlockMode::BToKByK, grid)?;

    let g: Vec<C> = grid.joint_weights().iter().map(|v| C::new(*v, 0.0)).collect();
    let g0: Vec<C> = grid.intrinsic_weights().iter().map(|v| C::new(*v, 0.0)).collect();
    let h = vec![ONE; n];
    let hk = vec![ONE; k];
    let a4 = rows_to_mat(lay.out4.times.iter().map(|&t| dense_row(s4, &g, t)).collect::<Result<_>>()?, n);
    let c1 = rows_to_mat(lay.out5.times.iter().map(|&t| dense_row(s1, &g0, t)).collect::<Result<_>>()?, k);
    let b2 = cols_to_mat(lay.in2.times.iter().map(|&t| dense_col(s2, &h, t)).collect::<Result<_>>()?, n);
    let b1 = cols_to_mat(lay.in1.times.iter().map(|&t| dense_col(s1, &hk, t)).collect::<Result<_>>()?, k);
    let k1 = &a4 * &(&x * &b2);
    let lb2 = &l * &b2;
    Ok(NodeParts { c, a4, c1, b1, k1, j, lb2, b })
}

/// Scatters the four blocks of one node, scaled by `-c²·weight`, into an
/// out × in matrix.
fn assemble(parts: &NodeParts, lay: &Layout, weight: C, rows: usize, cols: usize) -> Mat<C> {
    let f = -parts.c * parts.c * weight;
    let k2 = &(&parts.a4 * &parts.j) * &parts.b1;
    let k3 = &parts.c1 * &parts.lb2;
    let k4 = &(&parts.c1 * &parts.b) * &parts.b1;
    let mut m = Mat::<C>::zeros(rows, cols);
    let blocks: [(&Schedule1D, &Schedule1D, &Mat<C>); 4] = [
        (&lay.out4, &lay.in2, &parts.k1),
        (&lay.out4, &lay.in1, &k2),
        (&lay.out5, &lay.in2, &k3),
        (&lay.out5, &lay.in1, &k4),
    ];
    for (r, c, blk) in blocks {
        for (bi, &i) in r.pos.iter().enumerate() {
            for (bj, &j) in c.pos.iter().enumerate() {
                m[(i, j)] = blk[(bi, bj)] * f;
            }
        }
    }
    m
}

/// Samples `K_E` on `out_grid × in_grid` with the default options.
pub fn build_transfer_kernel(
    params: &PhysicalParams,
    schedule: &ProtocolSchedule,
    grid: &DetuningGrid,
    contour: &LaplaceContour,
    out_grid: &TimeGrid,
    in_grid: &TimeGrid,
) -> Result<TransferKernel> {
    build_transfer_kernel_with(params, schedule, grid, contour, out_grid, in_grid, &KernelOptions::default())
}

/// Samples `K_E`; contour nodes are evaluated in parallel and summed in
/// node order.
pub fn build_transfer_kernel_with(
    _params: &PhysicalParams,
    schedule: &ProtocolSchedule,
    grid: &DetuningGrid,
    contour: &LaplaceContour,
    out_grid: &TimeGrid,
    in_grid: &TimeGrid,
    opts: &KernelOptions,
) -> Result<TransferKernel> {
    if (contour.t_scale() - 1.0).abs() > 1e-14 {
        return argument("the transfer kernel is inverted at z = 1; use a contour with t_scale = 1");
    }
    let lay = layout(schedule, out_grid, in_grid)?;
    let nodes: Vec<usize> = if opts.conjugate_symmetry { contour.upper_half() } else { (0..contour.len()).collect() };
    let (rows, cols) = (out_grid.len(), in_grid.len());
    let weight = |k: usize| {
        let w = contour.derivative_weights()[k];
        if opts.conjugate_symmetry { w * contour.pair_factor(k) } else { w }
    };
    let mut fallbacks = 0;
    let contributions: Vec<Mat<C>> = match opts.strategy {
        Strategy::Structured => nodes
            .par_iter()
            .map(|&k| {
                let p = structured_parts(contour.nodes()[k], grid, schedule, &lay)?;
                Ok(assemble(&p, &lay, weight(k), rows, cols))
            })
            .collect::<Result<_>>()?,
        Strategy::Dense => {
            let cache = EigenCache::build(grid, contour, Some(&nodes))?;
            fallbacks = cache.fallback_count();
            (0..nodes.len())
                .into_par_iter()
                .map(|i| {
                    let p = dense_parts(&cache, i, grid, schedule, &lay)?;
                    Ok(assemble(&p, &lay, weight(nodes[i]), rows, cols))
                })
                .collect::<Result<_>>()?
        }
    };
    let mut values = Mat::<C>::zeros(rows, cols);
    for m in &contributions {
        values += m;
    }
    let mut residue = None;
    let mut max_abs = 0.0f64;
    let mut max_im = 0.0f64;
    for j in 0..cols {
        for i in 0..rows {
            let v = values[(i, j)];
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(CribError::Numerical(format!("non-finite kernel value at ({i}, {j})")));
            }
            max_abs = max_abs.max(v.norm());
            max_im = max_im.max(v.im.abs());
        }
    }
    if opts.conjugate_symmetry {
        for j in 0..cols {
            for i in 0..rows {
                values[(i, j)].im = 0.0;
            }
        }
    } else {
        let r = if max_abs > 0.0 { max_im / max_abs } else { 0.0 };
        if r > IMAGINARY_RESIDUE_LIMIT {
            return Err(CribError::Numerical(format!(
                "kernel imaginary residue {r:.3e} exceeds {IMAGINARY_RESIDUE_LIMIT:e}"
            )));
        }
        residue = Some(r);
    }
    Ok(TransferKernel {
        out_grid: out_grid.clone(),
        in_grid: in_grid.clone(),
        values,
        schedule: *schedule,
        diagnostics: KernelDiagnostics {
            strategy: opts.strategy,
            contour_nodes_evaluated: nodes.len(),
            imaginary_residue: residue,
            eigen_fallbacks: fallbacks,
            revival_time: grid.controlled_revival_time(),
        },
    })
}

/// Laplace-domain value of one response kernel at contour node `node` of
/// `cache`, computed directly from the dense matrix chain.
pub fn kernel_samples(
    which: KernelKind,
    cache: &EigenCache,
    node: usize,
    t: f64,
    t_prime: f64,
    grid: &DetuningGrid,
    schedule: &ProtocolSchedule,
) -> Result<C> {
    let (tp, td) = (schedule.tau_p(), schedule.tau_d());
    let (lim_t, lim_tp) = match which {
        KernelKind::K1 => (td, td),
        KernelKind::K2 => (td, tp),
        KernelKind::K3 => (tp, td),
        KernelKind::K4 => (tp, tp),
    };
    let slack = 1e-12 * (1.0 + lim_t.max(lim_tp));
    if !(t >= 0.0 && t <= lim_t + slack && t_prime >= 0.0 && t_prime <= lim_tp + slack) {
        return argument(format!("({t}, {t_prime}) lies outside the window of {which:?}"));
    }
    if node >= cache.len() {
        return argument("contour node index out of range");
    }
    let c = 1.0 / cache.nodes()[node];
    let (k, n) = (grid.k(), grid.k() * grid.n());
    let e = |s: Stage, t: f64| cache.entry(node, s).exp(t);
    let x = e(Stage::S3, schedule.tau_s())?;
    let g = Mat::from_fn(1, n, |_, i| C::new(grid.joint_weights()[i], 0.0));
    let g0 = Mat::from_fn(1, k, |_, i| C::new(grid.intrinsic_weights()[i], 0.0));
    let h = Mat::from_fn(n, 1, |_, _| ONE);
    let hk = Mat::from_fn(k, 1, |_, _| ONE);
    let chain = match which {
        KernelKind::K1 => &(&(&g * &e(Stage::S4, t)?) * &x) * &(&e(Stage::S2, t_prime)? * &h),
        KernelKind::K2 => {
            let j = block_reduce(&(&x * &e(Stage::S2, td)?), BlockMode::JToKColumns, grid)?;
            &(&(&g * &e(Stage::S4, t)?) * &j) * &(&e(Stage::S1, t_prime)? * &hk)
        }
        KernelKind::K3 => {
            let l = block_reduce(&(&e(Stage::S4, td)? * &x), BlockMode::LToKRows, grid)?;
            &(&(&g0 * &e(Stage::S1, t)?) * &l) * &(&e(Stage::S2, t_prime)? * &h)
        }
        KernelKind::K4 => {
            let full = &(&e(Stage::S4, td)? * &x) * &e(Stage::S2, td)?;
            let b = block_reduce(&full, BlockMode::BToKByK, grid)?;
            &(&(&g0 * &e(Stage::S1, t)?) * &b) * &(&e(Stage::S1, t_prime)? * &hk)
        }
    };
    Ok(-c * c * chain[(0, 0)])
}

/// `E_out(t_i) = Σ_j w_j K_E(t_i, τR - s_j) E_in(s_j)` with `e_in[j] = E_in(s_j)`.
pub fn apply_output(kernel: &TransferKernel, e_in: &[C]) -> Result<Vec<C>> {
    let w = kernel.in_grid.weights();
    if e_in.len() != w.len() {
        return argument(format!("input has {} samples, kernel grid has {}", e_in.len(), w.len()));
    }
    let v = &kernel.values;
    Ok((0..v.nrows()).map(|i| (0..v.ncols()).map(|j| v[(i, j)] * (e_in[j] * w[j])).sum()).collect())
}

/// `Σ w_i |f_i|²`.
pub fn energy(grid: &TimeGrid, f: &[C]) -> f64 {
    grid.weights().iter().zip(f).map(|(w, x)| w * x.norm_sqr()).sum()
}

/// Hermitian efficiency kernel `K̃ = √W·K_eff·√W` on the real-time input grid.
#[derive(Debug, Clone)]
pub struct EfficiencyKernel {
    grid: TimeGrid,
    matrix: Mat<C>,
    keff: Mat<C>,
}

impl EfficiencyKernel {
    /// Wraps an already weight-folded Hermitian matrix.
    pub fn from_matrix(grid: TimeGrid, matrix: Mat<C>) -> Result<Self> {
        let n = grid.len();
        if matrix.nrows() != n || matrix.ncols() != n {
            return argument("efficiency matrix does not match the grid");
        }
        let sw: Vec<f64> = grid.weights().iter().map(|w| w.sqrt()).collect();
        let keff = Mat::from_fn(n, n, |i, j| matrix[(i, j)] / (sw[i] * sw[j]));
        Ok(Self { grid, matrix: hermitian_part(&matrix), keff })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn matrix(&self) -> &Mat<C> {
        &self.matrix
    }

    /// Unweighted `K_eff(s_i, s_j)`.
    pub fn keff(&self) -> &Mat<C> {
        &self.keff
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Eigenvalues in non-decreasing order.
    pub fn spectrum(&self) -> Result<Vec<f64>> {
        self.matrix
            .self_adjoint_eigenvalues(faer::Side::Lower)
            .map_err(|e| CribError::Numerical(format!("Hermitian eigensolve failed: {e:?}")))
    }
}

fn hermitian_part(m: &Mat<C>) -> Mat<C> {
    let n = m.nrows();
    Mat::from_fn(n, n, |i, j| {
        if i == j {
            C::new(m[(i, i)].re, 0.0)
        } else {
            (m[(i, j)] + m[(j, i)].conj()) * 0.5
        }
    })
}

/// `K_eff(s_i, s_j) = Σ_m w_m conj K_E(t_m, s_i) K_E(t_m, s_j)`, weight
/// folded and symmetrised.
pub fn build_efficiency_kernel(kernel: &TransferKernel) -> Result<EfficiencyKernel> {
    let wo = kernel.out_grid.weights();
    let wi = kernel.in_grid.weights();
    let v = &kernel.values;
    let a = Mat::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * wo[i].sqrt());
    let keff = a.adjoint() * &a;
    let n = wi.len();
    let matrix = Mat::from_fn(n, n, |i, j| keff[(i, j)] * (wi[i] * wi[j]).sqrt());
    Ok(EfficiencyKernel { grid: kernel.in_grid.clone(), matrix: hermitian_part(&matrix), keff })
}

/// Writes `matrix` in the little-endian `CRIBKRN1` format.
pub fn write_dump(mut w: impl Write, matrix: &Mat<C>, tau_r: f64) -> Result<()> {
    let rows = u32::try_from(matrix.nrows()).map_err(|_| CribError::Argument("too many rows".into()))?;
    let cols = u32::try_from(matrix.ncols()).map_err(|_| CribError::Argument("too many columns".into()))?;
    let mut buf = Vec::with_capacity(32 + 16 * matrix.nrows() * matrix.ncols());
    buf.extend_from_slice(DUMP_MAGIC);
    buf.extend_from_slice(&rows.to_le_bytes());
    buf.extend_from_slice(&cols.to_le_bytes());
    buf.extend_from_slice(&tau_r.to_le_bytes());
    buf.extend_from_slice(&[0u8; 8]);
    for i in 0..matrix.nrows() {
        for j in 0..matrix.ncols() {
            buf.extend_from_slice(&matrix[(i, j)].re.to_le_bytes());
            buf.extend_from_slice(&matrix[(i, j)].im.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads a matrix written by [`write_dump`], returning it with `τR`.
pub fn read_dump(mut r: impl Read) -> Result<(Mat<C>, f64)> {
    let mut head = [0u8; 32];
    r.read_exact(&mut head)?;
    if &head[..8] != DUMP_MAGIC {
        return Err(CribError::Io("not a CRIBKRN1 dump".into()));
    }
    let rows = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(head[12..16].try_into().unwrap()) as usize;
    let tau_r = f64::from_le_bytes(head[16..24].try_into().unwrap());
    let mut body = vec![0u8; 16 * rows * cols];
    r.read_exact(&mut body)?;
    let f = |k: usize| f64::from_le_bytes(body[8 * k..8 * k + 8].try_into().unwrap());
    let m = Mat::from_fn(rows, cols, |i, j| {
        let k = 2 * (i * cols + j);
        C::new(f(k), f(k + 1))
    });
    Ok((m, tau_r))
}

/// Rebuilds a transfer kernel from parts, e.g. after reading a dump.
pub fn transfer_kernel_from_parts(
    schedule: ProtocolSchedule,
    out_grid: TimeGrid,
    in_grid: TimeGrid,
    values: Mat<C>,
) -> Result<TransferKernel> {
    if values.nrows() != out_grid.len() || values.ncols() != in_grid.len() {
        return argument("kernel values do not match the time grids");
    }
    Ok(TransferKernel {
        out_grid,
        in_grid,
        values,
        schedule,
        diagnostics: KernelDiagnostics {
            strategy: Strategy::Structured,
            contour_nodes_evaluated: 0,
            imaginary_residue: None,
            eigen_fallbacks: 0,
            revival_time: f64::INFINITY,
        },
    })
}
