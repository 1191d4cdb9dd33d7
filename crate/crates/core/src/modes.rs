//! Optimal and Gaussian input modes of an efficiency kernel.

use faer::Side;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{argument, domain, CribError, Result};
use crate::kernels::EfficiencyKernel;
use crate::model::ProtocolSchedule;
use crate::quadrature::TimeGrid;

type C = Complex64;

const MIN_WIDTH: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModeLabel {
    Optimal,
    Gaussian,
}

/// An input mode sampled on the kernel grid together with its efficiency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeResult {
    pub efficiency: f64,
    /// Normalised so that `Σ w_i |mode_i|² = 1`.
    pub mode: Vec<C>,
    /// Real-time grid nodes the mode is sampled on.
    pub times: Vec<f64>,
    pub label: ModeLabel,
    /// `(t_c, t_w)` for Gaussian modes.
    pub gaussian_params: Option<(f64, f64)>,
    /// Set when the optimizer never improved on a starting simplex.
    pub warning: Option<String>,
}

/// Top eigenpair of `K̃`. The mode is recovered as `K_eff (√w∘v) / η`,
/// which avoids dividing by the tiny endpoint weights.
pub fn optimal_mode(kernel: &EfficiencyKernel) -> Result<ModeResult> {
    let evd = kernel
        .matrix()
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| CribError::Numerical(format!("Hermitian eigensolve failed: {e:?}")))?;
    let n = kernel.len();
    let eta = evd.S()[n - 1].re;
    if !eta.is_finite() {
        return Err(CribError::Numerical("non-finite top eigenvalue".into()));
    }
    let v: Vec<C> = (0..n).map(|i| evd.U()[(i, n - 1)]).collect();
    let w = kernel.grid().weights();
    let mut mode: Vec<C> = if eta > 1e-12 {
        let keff = kernel.keff();
        (0..n)
            .map(|i| (0..n).map(|j| keff[(i, j)] * v[j] * w[j].sqrt()).sum::<C>() / eta)
            .collect()
    } else {
        v.iter().zip(w).map(|(x, w)| x / w.sqrt()).collect()
    };
    normalize(kernel.grid(), &mut mode)?;
    fix_phase(&mut mode);
    Ok(ModeResult {
        efficiency: eta,
        mode,
        times: kernel.grid().nodes().to_vec(),
        label: ModeLabel::Optimal,
        gaussian_params: None,
        warning: None,
    })
}

fn normalize(grid: &TimeGrid, f: &mut [C]) -> Result<()> {
    let e: f64 = grid.weights().iter().zip(f.iter()).map(|(w, x)| w * x.norm_sqr()).sum();
    if !(e > 0.0 && e.is_finite()) {
        return domain("mode has zero energy on the grid");
    }
    let s = 1.0 / e.sqrt();
    for x in f.iter_mut() {
        *x *= s;
    }
    Ok(())
}

/// Rotates `f` so that its largest-magnitude sample is real and positive.
pub fn fix_phase(f: &mut [C]) {
    let mut best = 0;
    for (i, x) in f.iter().enumerate() {
        if x.norm() > f[best].norm() {
            best = i;
        }
    }
    let p = f[best];
    if p.norm() > 0.0 {
        let r = p.conj() / p.norm();
        for x in f.iter_mut() {
            *x *= r;
        }
    }
}

/// `(2π t_w²)^(-1/4) exp(-(t - t_c)²/(4 t_w²))` on the grid, renormalised
/// to unit energy on the window.
pub fn gaussian_mode(grid: &TimeGrid, t_c: f64, t_w: f64) -> Result<Vec<C>> {
    let (f, _) = gaussian_mode_with_factor(grid, t_c, t_w)?;
    Ok(f)
}

/// [`gaussian_mode`] together with the windowed renormalisation factor.
pub fn gaussian_mode_with_factor(grid: &TimeGrid, t_c: f64, t_w: f64) -> Result<(Vec<C>, f64)> {
    if !(t_w > 0.0 && t_w.is_finite()) || !t_c.is_finite() {
        return domain(format!("Gaussian width must be positive, got {t_w}"));
    }
    let amp = (2.0 * std::f64::consts::PI * t_w * t_w).powf(-0.25);
    let mut f: Vec<C> = grid
        .nodes()
        .iter()
        .map(|t| {
            let r = (t - t_c) / t_w;
            C::new(amp * (-0.25 * r * r).exp(), 0.0)
        })
        .collect();
    let e: f64 = grid.weights().iter().zip(&f).map(|(w, x)| w * x.norm_sqr()).sum();
    if !(e > 0.0) {
        return domain(format!("Gaussian at t_c = {t_c}, t_w = {t_w} vanishes on the grid"));
    }
    let s = 1.0 / e.sqrt();
    for x in f.iter_mut() {
        *x *= s;
    }
    Ok((f, s))
}

/// Rayleigh quotient `(√w∘e)† K̃ (√w∘e) / Σ w|e|²`.
pub fn mode_efficiency(kernel: &EfficiencyKernel, e_in: &[C]) -> Result<f64> {
    let n = kernel.len();
    if e_in.len() != n {
        return argument(format!("input has {} samples, kernel grid has {n}", e_in.len()));
    }
    let w = kernel.grid().weights();
    let x: Vec<C> = e_in.iter().zip(w).map(|(e, w)| e * w.sqrt()).collect();
    let norm: f64 = x.iter().map(|v| v.norm_sqr()).sum();
    if !(norm > 0.0) {
        return domain("input mode is zero");
    }
    let m = kernel.matrix();
    let mut q = C::new(0.0, 0.0);
    for j in 0..n {
        let col: C = (0..n).map(|i| x[i].conj() * m[(i, j)]).sum();
        q += col * x[j];
    }
    Ok(q.re / norm)
}

/// Efficiency of the Gaussian mode centred at `t_c` with width `t_w`.
pub fn gaussian_efficiency(kernel: &EfficiencyKernel, t_c: f64, t_w: f64) -> Result<f64> {
    mode_efficiency(kernel, &gaussian_mode(kernel.grid(), t_c, t_w)?)
}

/// Multi-start settings for [`optimize_gaussian_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSearch {
    /// Random starts drawn uniformly from the search box in addition to the
    /// five fixed ones.
    pub extra_starts: usize,
    pub seed: u64,
    /// Simplex spread in `η` at which a start is considered converged.
    pub tolerance: f64,
    pub max_evals: usize,
}

impl Default for GaussianSearch {
    fn default() -> Self {
        Self { extra_starts: 0, seed: 0, tolerance: 1e-8, max_evals: 2000 }
    }
}

/// Box-constrained minimiser result.
#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
    /// The best vertex improved on the starting point.
    pub improved: bool,
}

/// Nelder–Mead minimisation of `f` inside the box `lo ≤ x ≤ hi`; trial
/// points are projected onto the box.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    step: &[f64],
    lo: &[f64],
    hi: &[f64],
    tolerance: f64,
    max_evals: usize,
) -> NelderMeadResult {
    let d = x0.len();
    let clamp = |x: &mut Vec<f64>| {
        for i in 0..d {
            x[i] = x[i].clamp(lo[i], hi[i]);
        }
    };
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut start = x0.to_vec();
    clamp(&mut start);
    let mut simplex = vec![start.clone()];
    for i in 0..d {
        let mut x = start.clone();
        x[i] += step[i];
        if x[i] > hi[i] {
            x[i] = start[i] - step[i];
        }
        clamp(&mut x);
        simplex.push(x);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| eval(x, &mut evals)).collect();
    let f_start = values[0];
    let mut converged = false;
    while evals < max_evals {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        let spread = values[d] - values[0];
        let size = (1..=d)
            .map(|i| (0..d).map(|k| (simplex[i][k] - simplex[0][k]).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        let scale = 1.0 + simplex[0].iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if spread <= tolerance && size <= 1e-5 * scale {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..d).map(|k| simplex[..d].iter().map(|x| x[k]).sum::<f64>() / d as f64).collect();
        let along = |t: f64| {
            let mut x: Vec<f64> = (0..d).map(|k| centroid[k] + t * (simplex[d][k] - centroid[k])).collect();
            clamp(&mut x);
            x
        };
        let xr = along(-1.0);
        let fr = eval(&xr, &mut evals);
        if fr < values[0] {
            let xe = along(-2.0);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                simplex[d] = xe;
                values[d] = fe;
            } else {
                simplex[d] = xr;
                values[d] = fr;
            }
        } else if fr < values[d - 1] {
            simplex[d] = xr;
            values[d] = fr;
        } else {
            let (xc, fc) = if fr < values[d] {
                let x = along(-0.5);
                let v = eval(&x, &mut evals);
                (x, v)
            } else {
                let x = along(0.5);
                let v = eval(&x, &mut evals);
                (x, v)
            };
            if fc < values[d].min(fr) {
                simplex[d] = xc;
                values[d] = fc;
            } else {
                for i in 1..=d {
                    let mut x: Vec<f64> = (0..d).map(|k| simplex[0][k] + 0.5 * (simplex[i][k] - simplex[0][k])).collect();
                    clamp(&mut x);
                    values[i] = eval(&x, &mut evals);
                    simplex[i] = x;
                }
            }
        }
    }
    let best = (0..=d).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    NelderMeadResult {
        x: simplex[best].clone(),
        value: values[best],
        evaluations: evals,
        converged,
        improved: values[best] < f_start,
    }
}

/// The five fixed `(t_c, t_w)` starting points.
pub fn default_starts(schedule: &ProtocolSchedule) -> Vec<(f64, f64)> {
    let (tp, tr) = (schedule.tau_p(), schedule.tau_r());
    vec![(tp, 0.5), (tp, 2.0), (tp - 3.0, 1.0), (tr / 2.0, tp / 4.0), (tp - 1.0, 1.0)]
}

/// Best Gaussian mode from the default multi-start search.
pub fn optimize_gaussian(kernel: &EfficiencyKernel, schedule: &ProtocolSchedule) -> Result<ModeResult> {
    optimize_gaussian_with(kernel, schedule, &GaussianSearch::default())
}

/// Best Gaussian mode over `t_c ∈ [0, τR]`, `t_w ∈ [0.05, τR]`.
pub fn optimize_gaussian_with(
    kernel: &EfficiencyKernel,
    schedule: &ProtocolSchedule,
    search: &GaussianSearch,
) -> Result<ModeResult> {
    let tr = schedule.tau_r();
    let lo = [0.0, MIN_WIDTH];
    let hi = [tr, tr.max(MIN_WIDTH)];
    let mut starts = default_starts(schedule);
    let mut rng = ChaCha8Rng::seed_from_u64(search.seed);
    for _ in 0..search.extra_starts {
        starts.push((rng.random_range(0.0..=tr), rng.random_range(MIN_WIDTH..=hi[1])));
    }
    let objective = |x: &[f64]| match gaussian_efficiency(kernel, x[0], x[1]) {
        Ok(v) => -v,
        Err(_) => f64::INFINITY,
    };
    let mut best: Option<NelderMeadResult> = None;
    let mut any_improved = false;
    for (tc, tw) in starts {
        let tc = tc.clamp(lo[0], hi[0]);
        let tw = tw.clamp(lo[1], hi[1]);
        let step = [(0.05 * tr).max(0.5).min(tr), (0.3 * tw).max(MIN_WIDTH)];
        let r = nelder_mead(objective, &[tc, tw], &step, &lo, &hi, search.tolerance, search.max_evals);
        any_improved |= r.improved;
        if best.as_ref().is_none_or(|b| r.value < b.value) {
            best = Some(r);
        }
    }
    let best = best.ok_or_else(|| CribError::Numerical("no optimizer start".into()))?;
    if !best.value.is_finite() {
        return Err(CribError::Numerical("Gaussian search found no valid mode".into()));
    }
    let (tc, tw) = (best.x[0], best.x[1]);
    let mode = gaussian_mode(kernel.grid(), tc, tw)?;
    Ok(ModeResult {
        efficiency: mode_efficiency(kernel, &mode)?,
        mode,
        times: kernel.grid().nodes().to_vec(),
        label: ModeLabel::Gaussian,
        gaussian_params: Some((tc, tw)),
        warning: (!any_improved).then(|| "no start improved on its initial simplex".to_string()),
    })
}
