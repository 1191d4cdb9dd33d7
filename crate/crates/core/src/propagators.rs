//! Laplace-domain stage generators `M1..M4`, their exponentials and the
//! block reductions onto the intrinsic classes.
//!
//! Every generator has the form `-i·diag(δ) - (1/u)·h·gᵀ`. Two evaluation
//! routes are provided: a dense one through cached eigendecompositions (with
//! a Padé scaling-and-squaring fallback) and a structured one that applies
//! `exp(M t)` to vectors using only the diagonal-plus-rank-one form.

use faer::linalg::solvers::Solve;
use faer::Mat;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{argument, domain, CribError, Result};
use crate::laplace::LaplaceContour;
use crate::model::DetuningGrid;

type C = Complex64;

const ZERO: C = C::new(0.0, 0.0);
const ONE: C = C::new(1.0, 0.0);

/// Eigenvector matrices worse conditioned than this use the fallback.
pub const CONDITION_LIMIT: f64 = 1e8;
/// Relative reconstruction error accepted for a cached decomposition.
pub const RECONSTRUCTION_LIMIT: f64 = 1e-9;

/// The four distinct generators of the protocol (stage 5 reuses `S1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum Stage {
    S1,
    S2,
    S3,
    S4,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::S1, Stage::S2, Stage::S3, Stage::S4];

    fn index(self) -> usize {
        match self {
            Stage::S1 => 0,
            Stage::S2 => 1,
            Stage::S3 => 2,
            Stage::S4 => 3,
        }
    }
}

/// Diagonal of `i·M` without the coupling term: the class detunings seen in
/// each stage.
pub fn stage_detunings(stage: Stage, grid: &DetuningGrid) -> Vec<f64> {
    let d0 = grid.intrinsic_nodes();
    let d = grid.controlled_nodes();
    match stage {
        Stage::S1 => d0.to_vec(),
        Stage::S2 => d0.iter().flat_map(|a| d.iter().map(move |b| a + b)).collect(),
        Stage::S3 => d0.iter().flat_map(|a| d.iter().map(move |_| *a)).collect(),
        Stage::S4 => d0.iter().flat_map(|a| d.iter().map(move |b| a - b)).collect(),
    }
}

fn stage_weights(stage: Stage, grid: &DetuningGrid) -> &[f64] {
    match stage {
        Stage::S1 => grid.intrinsic_weights(),
        _ => grid.joint_weights(),
    }
}

fn check_u(u: C) -> Result<C> {
    if !(u.re.is_finite() && u.im.is_finite()) || u.norm() == 0.0 {
        return domain(format!("Laplace variable must be finite and non-zero, got {u}"));
    }
    Ok(1.0 / u)
}

/// Dense generator of one stage at one Laplace node.
#[derive(Debug, Clone)]
pub struct StageGenerator {
    pub stage: Stage,
    pub u: C,
    pub matrix: Mat<C>,
}

/// Assembles `M_stage(u)` densely.
pub fn stage_matrix(stage: Stage, u: C, grid: &DetuningGrid) -> Result<StageGenerator> {
    let c = check_u(u)?;
    let det = stage_detunings(stage, grid);
    let g = stage_weights(stage, grid);
    let n = det.len();
    let matrix = Mat::from_fn(n, n, |i, j| {
        let diag = if i == j { C::new(0.0, -det[i]) } else { ZERO };
        diag - c * g[j]
    });
    Ok(StageGenerator { stage, u, matrix })
}

impl StageGenerator {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Cached eigendecomposition `M = V·diag(λ)·V⁻¹` of one generator.
#[derive(Debug, Clone)]
pub struct EigenEntry {
    pub values: Vec<C>,
    pub vectors: Mat<C>,
    pub inverse: Mat<C>,
    /// `‖V‖_F·‖V⁻¹‖_F`.
    pub condition: f64,
    /// Relative Frobenius error of the reconstruction.
    pub reconstruction_error: f64,
    /// False when the decomposition failed the conditioning checks; the
    /// exponential then falls back to scaling and squaring.
    pub usable: bool,
}

impl EigenEntry {
    pub fn decompose(gen: &StageGenerator) -> Result<Self> {
        let n = gen.dim();
        let evd = gen
            .matrix
            .eigen()
            .map_err(|e| CribError::Numerical(format!("eigendecomposition failed: {e:?}")))?;
        let vectors = evd.U().to_owned();
        let values: Vec<C> = (0..n).map(|i| evd.S()[i]).collect();
        let inverse = vectors.partial_piv_lu().solve(Mat::<C>::identity(n, n));
        let condition = frobenius(&vectors) * frobenius(&inverse);
        let recon = mat_mul(&scale_cols(&vectors, &values), &inverse);
        let norm = frobenius(&gen.matrix).max(f64::MIN_POSITIVE);
        let reconstruction_error = frobenius(&sub(&recon, &gen.matrix)) / norm;
        let usable = condition.is_finite()
            && condition <= CONDITION_LIMIT
            && reconstruction_error <= RECONSTRUCTION_LIMIT;
        Ok(Self { values, vectors, inverse, condition, reconstruction_error, usable })
    }

    /// `V·diag(exp(λ t))·V⁻¹`.
    pub fn exp(&self, t: f64) -> Mat<C> {
        let e: Vec<C> = self.values.iter().map(|l| (l * t).exp()).collect();
        mat_mul(&scale_cols(&self.vectors, &e), &self.inverse)
    }
}

/// Eigendecompositions of all four generators at every node of a contour.
#[derive(Debug, Clone)]
pub struct EigenCache {
    nodes: Vec<C>,
    entries: Vec<[StageData; 4]>,
}

#[derive(Debug, Clone)]
pub struct StageData {
    pub generator: StageGenerator,
    pub eigen: EigenEntry,
}

impl StageData {
    pub fn exp(&self, t: f64) -> Result<Mat<C>> {
        propagator_exp(&self.generator, t, Some(&self.eigen))
    }
}

impl EigenCache {
    /// Decomposes the generators at the contour nodes listed in `indices`
    /// (all nodes when `None`). Nodes are processed in parallel.
    pub fn build(grid: &DetuningGrid, contour: &LaplaceContour, indices: Option<&[usize]>) -> Result<Self> {
        let all: Vec<usize> = (0..contour.len()).collect();
        let idx = indices.unwrap_or(&all);
        let nodes: Vec<C> = idx.iter().map(|&k| contour.nodes()[k]).collect();
        let entries = nodes
            .par_iter()
            .map(|&u| Self::node_entry(grid, u))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { nodes, entries })
    }

    /// Decomposition of all four generators at a single node.
    pub fn node_entry(grid: &DetuningGrid, u: C) -> Result<[StageData; 4]> {
        let mk = |s| -> Result<StageData> {
            let generator = stage_matrix(s, u, grid)?;
            let eigen = EigenEntry::decompose(&generator)?;
            Ok(StageData { generator, eigen })
        };
        Ok([mk(Stage::S1)?, mk(Stage::S2)?, mk(Stage::S3)?, mk(Stage::S4)?])
    }

    pub fn nodes(&self) -> &[C] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn entry(&self, node: usize, stage: Stage) -> &StageData {
        &self.entries[node][stage.index()]
    }

    /// Number of cached decompositions that failed the checks.
    pub fn fallback_count(&self) -> usize {
        self.entries.iter().flatten().filter(|e| !e.eigen.usable).count()
    }
}

/// `exp(M·duration)`, through the eigendecomposition when it is usable and
/// through Padé scaling and squaring otherwise.
pub fn propagator_exp(gen: &StageGenerator, duration: f64, cache: Option<&EigenEntry>) -> Result<Mat<C>> {
    if !(duration >= 0.0 && duration.is_finite()) {
        return domain(format!("propagation time must be non-negative, got {duration}"));
    }
    let n = gen.dim();
    if duration == 0.0 {
        return Ok(Mat::identity(n, n));
    }
    match cache {
        Some(e) if e.usable && e.values.len() == n => Ok(e.exp(duration)),
        _ => expm(&scale(&gen.matrix, C::new(duration, 0.0))),
    }
}

/// Matrix exponential by Padé-13 scaling and squaring.
pub fn expm(a: &Mat<C>) -> Result<Mat<C>> {
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    const THETA13: f64 = 5.371920351148152;
    let n = a.nrows();
    if a.ncols() != n {
        return argument("matrix exponential needs a square matrix");
    }
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    let norm = one_norm(a);
    if !norm.is_finite() {
        return Err(CribError::Numerical("matrix exponential of a non-finite matrix".into()));
    }
    let s = if norm > THETA13 { (norm / THETA13).log2().ceil() as i32 } else { 0 };
    let a = scale(a, C::new(0.5f64.powi(s), 0.0));
    let id = Mat::<C>::identity(n, n);
    let a2 = mat_mul(&a, &a);
    let a4 = mat_mul(&a2, &a2);
    let a6 = mat_mul(&a4, &a2);
    let lin = |c: [f64; 4], m: [&Mat<C>; 4]| {
        Mat::from_fn(n, n, |i, j| {
            (0..4).map(|k| m[k][(i, j)] * c[k]).sum::<C>()
        })
    };
    let inner_u = lin([B[13], B[11], B[9], 0.0], [&a6, &a4, &a2, &id]);
    let u_poly = add(&mat_mul(&a6, &inner_u), &lin([B[7], B[5], B[3], B[1]], [&a6, &a4, &a2, &id]));
    let u = mat_mul(&a, &u_poly);
    let inner_v = lin([B[12], B[10], B[8], 0.0], [&a6, &a4, &a2, &id]);
    let v = add(&mat_mul(&a6, &inner_v), &lin([B[6], B[4], B[2], B[0]], [&a6, &a4, &a2, &id]));
    let p = add(&v, &u);
    let q = sub(&v, &u);
    let mut r = q.partial_piv_lu().solve(&p);
    for _ in 0..s {
        r = mat_mul(&r, &r);
    }
    if !frobenius(&r).is_finite() {
        return Err(CribError::Numerical("matrix exponential overflowed".into()));
    }
    Ok(r)
}

/// The three reductions of a `KN×KN` matrix onto the intrinsic classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockMode {
    /// `KN×K`: columns of each controlled block summed without weights.
    JToKColumns,
    /// `K×KN`: rows of each controlled block summed with the controlled weights.
    LToKRows,
    /// `K×K`: both of the above.
    BToKByK,
}

/// Applies one of the [`BlockMode`] reductions.
pub fn block_reduce(matrix: &Mat<C>, mode: BlockMode, grid: &DetuningGrid) -> Result<Mat<C>> {
    let (k, n) = (grid.k(), grid.n());
    if matrix.nrows() != k * n || matrix.ncols() != k * n {
        return argument(format!(
            "block reduction expects a {0}x{0} matrix, got {1}x{2}",
            k * n,
            matrix.nrows(),
            matrix.ncols()
        ));
    }
    let w = grid.controlled_weights();
    let cols = |m: &Mat<C>| {
        Mat::from_fn(m.nrows(), k, |r, j| (0..n).map(|l| m[(r, j * n + l)]).sum::<C>())
    };
    let rows = |m: &Mat<C>| {
        Mat::from_fn(k, m.ncols(), |j, c| (0..n).map(|l| m[(j * n + l, c)] * w[l]).sum::<C>())
    };
    Ok(match mode {
        BlockMode::JToKColumns => cols(matrix),
        BlockMode::LToKRows => rows(matrix),
        BlockMode::BToKByK => rows(&cols(matrix)),
    })
}

fn mat_mul(a: &Mat<C>, b: &Mat<C>) -> Mat<C> {
    a * b
}

fn add(a: &Mat<C>, b: &Mat<C>) -> Mat<C> {
    a + b
}

fn sub(a: &Mat<C>, b: &Mat<C>) -> Mat<C> {
    a - b
}

fn scale(a: &Mat<C>, s: C) -> Mat<C> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * s)
}

fn scale_cols(a: &Mat<C>, s: &[C]) -> Mat<C> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * s[j])
}

pub(crate) fn frobenius(a: &Mat<C>) -> f64 {
    let mut s = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            s += a[(i, j)].norm_sqr();
        }
    }
    s.sqrt()
}

fn one_norm(a: &Mat<C>) -> f64 {
    (0..a.ncols())
        .map(|j| (0..a.nrows()).map(|i| a[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Generator `diag(d) + l·rᵀ` acting on vectors without ever forming the
/// dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOneGenerator {
    diag: Vec<C>,
    left: Vec<C>,
    right: Vec<C>,
}

impl RankOneGenerator {
    pub fn new(diag: Vec<C>, left: Vec<C>, right: Vec<C>) -> Result<Self> {
        if diag.len() != left.len() || diag.len() != right.len() || diag.is_empty() {
            return argument("diagonal and rank-one factors must have equal, non-zero length");
        }
        Ok(Self { diag, left, right })
    }

    /// The structured form of [`stage_matrix`].
    pub fn stage(stage: Stage, u: C, grid: &DetuningGrid) -> Result<Self> {
        let c = check_u(u)?;
        let det = stage_detunings(stage, grid);
        let g = stage_weights(stage, grid);
        Ok(Self {
            diag: det.iter().map(|d| C::new(0.0, -d)).collect(),
            left: vec![-c; det.len()],
            right: g.iter().map(|w| C::new(*w, 0.0)).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// The generator of the transposed matrix `diag(d) + r·lᵀ`.
    pub fn transpose(&self) -> Self {
        Self { diag: self.diag.clone(), left: self.right.clone(), right: self.left.clone() }
    }

    pub fn to_dense(&self) -> Mat<C> {
        let n = self.dim();
        Mat::from_fn(n, n, |i, j| {
            let d = if i == j { self.diag[i] } else { ZERO };
            d + self.left[i] * self.right[j]
        })
    }

    /// Upper bound on the induced infinity norm.
    pub fn norm_bound(&self) -> f64 {
        let d = self.diag.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        let l = self.left.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        let r: f64 = self.right.iter().map(|z| z.norm()).sum();
        d + l * r
    }

    /// `out = M·v` for every length-`dim` column of `v`.
    fn apply_block(&self, v: &[C], out: &mut [C]) {
        let n = self.dim();
        for (vc, oc) in v.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
            let s: C = self.right.iter().zip(vc).map(|(r, x)| r * x).sum();
            for i in 0..n {
                oc[i] = self.diag[i] * vc[i] + self.left[i] * s;
            }
        }
    }

    /// Replaces each column of `block` by `exp(M t)·column`.
    pub fn exp_action(&self, t: f64, block: &mut [C]) -> Result<()> {
        if !(t >= 0.0 && t.is_finite()) {
            return domain(format!("propagation time must be non-negative, got {t}"));
        }
        let n = self.dim();
        if block.len() % n != 0 {
            return argument("block length is not a multiple of the generator dimension");
        }
        if t == 0.0 || block.is_empty() {
            return Ok(());
        }
        let rho = self.norm_bound();
        let steps = ((t * rho) / TAYLOR_STEP_NORM).ceil().max(1.0) as usize;
        let h = t / steps as f64;
        let mut term = vec![ZERO; block.len()];
        let mut next = vec![ZERO; block.len()];
        for _ in 0..steps {
            self.taylor_step(h, block, &mut term, &mut next)?;
        }
        Ok(())
    }

    fn taylor_step(&self, h: f64, block: &mut [C], term: &mut Vec<C>, next: &mut Vec<C>) -> Result<()> {
        let n = self.dim();
        term.copy_from_slice(block);
        let mut prev_small = false;
        for k in 1..=MAX_TAYLOR_TERMS {
            self.apply_block(term, next);
            let f = h / k as f64;
            for x in next.iter_mut() {
                *x *= f;
            }
            std::mem::swap(term, next);
            let mut done = true;
            for (acc, tc) in block.chunks_exact_mut(n).zip(term.chunks_exact(n)) {
                let mut tn = 0.0f64;
                let mut an = 0.0f64;
                for (a, t) in acc.iter_mut().zip(tc) {
                    *a += t;
                    tn = tn.max(t.l1_norm());
                    an = an.max(a.l1_norm());
                }
                if tn > TAYLOR_TOL * an {
                    done = false;
                }
            }
            if done && prev_small {
                return Ok(());
            }
            prev_small = done;
        }
        Err(CribError::Numerical("Taylor series for the exponential action did not converge".into()))
    }

    /// `exp(M t_i)·v` at increasing times `t_i ≥ 0`, one block per time.
    pub fn exp_action_snapshots(&self, times: &[f64], v: &[C]) -> Result<Vec<Vec<C>>> {
        let mut cur = v.to_vec();
        let mut last = 0.0;
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            if !(t >= last) {
                return argument("snapshot times must be non-negative and non-decreasing");
            }
            self.exp_action(t - last, &mut cur)?;
            out.push(cur.clone());
            last = t;
        }
        Ok(out)
    }
}

/// `h·‖M‖` limit for one Taylor sub-step.
const TAYLOR_STEP_NORM: f64 = 3.5;
const TAYLOR_TOL: f64 = 1e-17;
const MAX_TAYLOR_TERMS: usize = 80;

/// Exact action of the storage propagator `exp(M3·τs)`.
///
/// Within each intrinsic block the component along `h_N` couples to the
/// field through a `K×K` generator, while the weight-orthogonal part only
/// picks up the phase `exp(-iΔ0_j τs)`.
#[derive(Debug, Clone)]
pub struct StorageMap {
    k: usize,
    n: usize,
    w: Vec<f64>,
    w_sum: f64,
    phases: Vec<C>,
    coupled: Mat<C>,
}

impl StorageMap {
    pub fn new(u: C, grid: &DetuningGrid, tau_s: f64) -> Result<Self> {
        let c = check_u(u)?;
        if !(tau_s >= 0.0 && tau_s.is_finite()) {
            return domain(format!("storage time must be non-negative, got {tau_s}"));
        }
        let (k, n) = (grid.k(), grid.n());
        let w = grid.controlled_weights().to_vec();
        let w_sum: f64 = w.iter().sum();
        let d0 = grid.intrinsic_nodes();
        let g0 = grid.intrinsic_weights();
        let gen = Mat::from_fn(k, k, |i, j| {
            let d = if i == j { C::new(0.0, -d0[i]) } else { ZERO };
            (d - c * w_sum * g0[j]) * tau_s
        });
        let coupled = expm(&gen)?;
        let phases = d0.iter().map(|d| C::new(0.0, -d * tau_s).exp()).collect();
        Ok(Self { k, n, w, w_sum, phases, coupled })
    }

    pub fn dim(&self) -> usize {
        self.k * self.n
    }

    /// Applies the propagator to every length-`KN` column of `block`.
    pub fn apply(&self, block: &mut [C]) -> Result<()> {
        let (k, n) = (self.k, self.n);
        if block.len() % (k * n) != 0 {
            return argument("block length is not a multiple of KN");
        }
        let mut alpha = vec![ZERO; k];
        for col in block.chunks_exact_mut(k * n) {
            for j in 0..k {
                let x = &mut col[j * n..(j + 1) * n];
                let a = x.iter().zip(&self.w).map(|(v, w)| v * *w).sum::<C>() / self.w_sum;
                alpha[j] = a;
                for v in x.iter_mut() {
                    *v = (*v - a) * self.phases[j];
                }
            }
            for j in 0..k {
                let a: C = (0..k).map(|l| self.coupled[(j, l)] * alpha[l]).sum();
                for v in &mut col[j * n..(j + 1) * n] {
                    *v += a;
                }
            }
        }
        Ok(())
    }
}

/// Column-major flattening of a dense matrix.
pub fn to_block(m: &Mat<C>) -> Vec<C> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Inverse of [`to_block`].
pub fn from_block(rows: usize, cols: usize, v: &[C]) -> Mat<C> {
    Mat::from_fn(rows, cols, |i, j| v[j * rows + i])
}

/// All-ones vector as a single-column block.
pub fn ones(n: usize) -> Vec<C> {
    vec![ONE; n]
}
