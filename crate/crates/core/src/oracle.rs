//! Time-domain finite-difference solver for the dimensionless equations of
//! motion, used to cross-check the kernel pipeline on small instances.
//!
//! In the co-moving frame the field obeys `∂E/∂z = i Σ_c g_c σ_c`, so at each
//! time it is a cumulative trapezoid sum over the polarisation source. The
//! atoms obey `∂σ_c/∂t = -iδ_c σ_c + iE` and are stepped with classical RK4.
//!
//! Class bookkeeping follows the kernel model: stages 1 and 5 carry the `K`
//! intrinsic classes with weights `g0`; stages 2 to 4 carry the `K·N` joint
//! classes. Entering stage 2 copies `σ_j` into every `σ_jk`; leaving stage 4
//! contracts `σ_j = Σ_k w_k σ_jk`.

use num_complex::Complex64;

use crate::error::{argument, CribError, Result};
use crate::model::{DetuningGrid, ProtocolSchedule};
use crate::quadrature::TimeGrid;

type C = Complex64;

pub const MIN_CELLS: usize = 32;
pub const MAX_CELLS: usize = 256;
pub const MAX_CLASSES: usize = 49;
/// Field growth, relative to the largest input amplitude, treated as blow-up.
pub const INSTABILITY_FACTOR: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct FdConfig {
    pub nz: usize,
    pub dt: f64,
    pub grid: DetuningGrid,
    pub schedule: ProtocolSchedule,
}

impl FdConfig {
    /// Largest admissible step, `0.5 / max|Δ0 + Δ|`.
    pub fn max_step(grid: &DetuningGrid) -> f64 {
        let m = grid.max_detuning();
        if m > 0.0 {
            0.5 / m
        } else {
            f64::INFINITY
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nz < MIN_CELLS || self.nz > MAX_CELLS {
            return argument(format!("nz must be in {MIN_CELLS}..={MAX_CELLS}, got {}", self.nz));
        }
        if self.grid.len() > MAX_CLASSES {
            return argument(format!(
                "oracle is limited to {MAX_CLASSES} joint classes, grid has {}",
                self.grid.len()
            ));
        }
        if !(self.dt > 0.0) || self.dt > Self::max_step(&self.grid) {
            return argument(format!(
                "dt = {} must be positive and at most {:.4e}",
                self.dt,
                Self::max_step(&self.grid)
            ));
        }
        Ok(())
    }
}

/// One protocol stage as seen by the solver; `index` runs 1..=5.
#[derive(Debug, Clone)]
struct Phase {
    index: u8,
    start: f64,
    duration: f64,
    detunings: Vec<f64>,
    weights: Vec<f64>,
    driven: bool,
}

fn phases(grid: &DetuningGrid, s: &ProtocolSchedule) -> Vec<Phase> {
    let (k, n) = (grid.k(), grid.n());
    let d0 = grid.intrinsic_nodes();
    let dc = grid.controlled_nodes();
    let joint = |sign: f64| -> Vec<f64> {
        (0..k).flat_map(|j| (0..n).map(move |m| d0[j] + sign * dc[m])).collect()
    };
    let spec = [
        (1, s.tau_p(), d0.to_vec(), grid.intrinsic_weights().to_vec(), true),
        (2, s.tau_d(), joint(1.0), grid.joint_weights().to_vec(), true),
        (3, s.tau_s(), joint(0.0), grid.joint_weights().to_vec(), false),
        (4, s.tau_d(), joint(-1.0), grid.joint_weights().to_vec(), false),
        (5, s.tau_p(), d0.to_vec(), grid.intrinsic_weights().to_vec(), false),
    ];
    let mut start = 0.0;
    spec.into_iter()
        .map(|(index, duration, detunings, weights, driven)| {
            let p = Phase { index, start, duration, detunings, weights, driven };
            start += duration;
            p
        })
        .collect()
}

/// Solver output. Traces are recorded at every step; stage boundaries appear
/// once at the end of the old stage and once at the start of the new one.
#[derive(Debug, Clone)]
pub struct FdSolution {
    times: Vec<f64>,
    stages: Vec<u8>,
    field_end: Vec<C>,
    polarization_end: Vec<C>,
    z: Vec<f64>,
    p_final: Vec<C>,
    residual_excitation: f64,
    retrieval_start: f64,
}

impl FdSolution {
    /// Absolute times of the traces.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn stages(&self) -> &[u8] {
        &self.stages
    }

    /// `E(1, t)`.
    pub fn field_end(&self) -> &[C] {
        &self.field_end
    }

    /// `Σ_c g_c σ_c(1, t)`.
    pub fn polarization_end(&self) -> &[C] {
        &self.polarization_end
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    /// `Σ_c g_c σ_c(z, T)` at the end of stage 5.
    pub fn p_final(&self) -> &[C] {
        &self.p_final
    }

    /// `∫₀¹ Σ_c g_c |σ_c|² dz` at the end of stage 5.
    pub fn residual_excitation(&self) -> f64 {
        self.residual_excitation
    }

    /// Start of stage 4 on the absolute time axis.
    pub fn retrieval_start(&self) -> f64 {
        self.retrieval_start
    }

    /// Retrieved field `E(1, τstart4 + t)` on `grid` (stage 4 and 5 only).
    pub fn e_out_on(&self, grid: &TimeGrid) -> Result<Vec<C>> {
        let s4 = self.segment(4);
        let s5 = self.segment(5);
        let split = self.times[s4.end - 1] - self.retrieval_start;
        grid.nodes()
            .iter()
            .map(|&t| {
                let seg = if t <= split { s4.clone() } else { s5.clone() };
                self.interpolate(seg, self.retrieval_start + t, &self.field_end)
            })
            .collect()
    }

    /// `Σ g σ(1, t)` at absolute time `t`.
    pub fn polarization_end_at(&self, t: f64) -> Result<C> {
        let stage = (1..=5u8)
            .find(|&s| {
                let r = self.segment(s);
                t <= self.times[r.end - 1]
            })
            .unwrap_or(5);
        self.interpolate(self.segment(stage), t, &self.polarization_end)
    }

    fn segment(&self, stage: u8) -> std::ops::Range<usize> {
        let a = self.stages.iter().position(|&s| s == stage).unwrap_or(0);
        let b = self.stages.iter().rposition(|&s| s == stage).map_or(0, |b| b + 1);
        a..b
    }

    /// Four-point Lagrange interpolation inside one stage segment.
    fn interpolate(&self, seg: std::ops::Range<usize>, t: f64, values: &[C]) -> Result<C> {
        let ts = &self.times[seg.clone()];
        let vs = &values[seg];
        let tol = 1e-9 * (1.0 + t.abs());
        if ts.is_empty() || t < ts[0] - tol || t > ts[ts.len() - 1] + tol {
            return argument(format!("time {t} lies outside the recorded stage"));
        }
        if ts.len() < 4 {
            let i = ts.partition_point(|&x| x < t).clamp(1, ts.len().max(2) - 1);
            if ts.len() == 1 {
                return Ok(vs[0]);
            }
            let f = (t - ts[i - 1]) / (ts[i] - ts[i - 1]);
            return Ok(vs[i - 1] * (1.0 - f) + vs[i] * f);
        }
        let i = ts.partition_point(|&x| x < t);
        let lo = i.saturating_sub(2).min(ts.len() - 4);
        let mut acc = C::new(0.0, 0.0);
        for a in lo..lo + 4 {
            let mut l = 1.0;
            for b in lo..lo + 4 {
                if a != b {
                    l *= (t - ts[b]) / (ts[a] - ts[b]);
                }
            }
            acc += vs[a] * l;
        }
        Ok(acc)
    }
}

struct Solver<'a, F: Fn(f64) -> C> {
    nz: usize,
    e_in: &'a F,
    tau_r: f64,
}

impl<F: Fn(f64) -> C> Solver<'_, F> {
    fn input(&self, phase: &Phase, t: f64) -> C {
        if phase.driven && t <= self.tau_r {
            (self.e_in)(t)
        } else {
            C::new(0.0, 0.0)
        }
    }

    /// Field on the z nodes from the polarisation source.
    fn field(&self, phase: &Phase, sigma: &[C], e0: C, out: &mut [C]) {
        let nc = phase.weights.len();
        let h = 1.0 / self.nz as f64;
        let src = |i: usize| -> C {
            sigma[i * nc..(i + 1) * nc].iter().zip(&phase.weights).map(|(s, w)| s * *w).sum()
        };
        let mut prev = src(0);
        let mut acc = C::new(0.0, 0.0);
        out[0] = e0;
        for (i, slot) in out.iter_mut().enumerate().skip(1) {
            let cur = src(i);
            acc += (prev + cur) * (0.5 * h);
            *slot = e0 + C::new(0.0, 1.0) * acc;
            prev = cur;
        }
    }

    fn rhs(&self, phase: &Phase, t: f64, sigma: &[C], field: &mut [C], out: &mut [C]) {
        self.field(phase, sigma, self.input(phase, t), field);
        let nc = phase.weights.len();
        let i = C::new(0.0, 1.0);
        for (zi, e) in field.iter().enumerate() {
            for c in 0..nc {
                let idx = zi * nc + c;
                out[idx] = C::new(0.0, -phase.detunings[c]) * sigma[idx] + i * *e;
            }
        }
    }
}

/// Runs all five stages for the input `e_in(t)`, `t ∈ [0, τR]`.
pub fn fd_solve(config: &FdConfig, e_in: impl Fn(f64) -> C) -> Result<FdSolution> {
    config.validate()?;
    let grid = &config.grid;
    let nz = config.nz;
    let nodes = nz + 1;
    let solver = Solver { nz, e_in: &e_in, tau_r: config.schedule.tau_r() };
    let ph = phases(grid, &config.schedule);

    let probe = 4096;
    let max_in = (0..=probe)
        .map(|i| e_in(config.schedule.tau_r() * i as f64 / probe as f64).norm())
        .fold(0.0, f64::max);
    let limit = INSTABILITY_FACTOR * max_in.max(f64::MIN_POSITIVE);

    let mut times = Vec::new();
    let mut stages = Vec::new();
    let mut field_end = Vec::new();
    let mut polarization_end = Vec::new();

    let (k, n) = (grid.k(), grid.n());
    let mut sigma = vec![C::new(0.0, 0.0); nodes * k];
    let mut field = vec![C::new(0.0, 0.0); nodes];

    for phase in &ph {
        let nc = phase.weights.len();
        // Class changes at the stage 1->2 and 4->5 boundaries.
        if phase.index == 2 {
            sigma = sigma
                .chunks(k)
                .flat_map(|row| row.iter().flat_map(|s| std::iter::repeat_n(*s, n)))
                .collect();
        } else if phase.index == 5 {
            let w = grid.controlled_weights();
            sigma = sigma
                .chunks(k * n)
                .flat_map(|row| {
                    (0..k).map(move |j| (0..n).map(|m| row[j * n + m] * w[m]).sum::<C>())
                })
                .collect();
        }
        debug_assert_eq!(sigma.len(), nodes * nc);
        if phase.duration <= 0.0 {
            continue;
        }
        let steps = (phase.duration / config.dt).ceil().max(1.0) as usize;
        let h = phase.duration / steps as f64;
        let len = sigma.len();
        let (mut k1, mut k2, mut k3, mut k4) =
            (vec![C::new(0.0, 0.0); len], vec![C::new(0.0, 0.0); len], vec![C::new(0.0, 0.0); len], vec![C::new(0.0, 0.0); len]);
        let mut tmp = vec![C::new(0.0, 0.0); len];

        let mut record = |t: f64, sigma: &[C], field: &mut [C]| -> Result<()> {
            solver.field(phase, sigma, solver.input(phase, t), field);
            let e = field[nz];
            if !e.is_finite() || e.norm() > limit {
                return Err(CribError::Numerical(format!(
                    "finite-difference field blew up in stage {} at t = {t:.6} (|E| = {:.3e})",
                    phase.index,
                    e.norm()
                )));
            }
            let p: C = sigma[nz * nc..].iter().zip(&phase.weights).map(|(s, w)| s * *w).sum();
            times.push(t);
            stages.push(phase.index);
            field_end.push(e);
            polarization_end.push(p);
            Ok(())
        };

        record(phase.start, &sigma, &mut field)?;
        for step in 0..steps {
            let t = phase.start + step as f64 * h;
            solver.rhs(phase, t, &sigma, &mut field, &mut k1);
            for i in 0..len {
                tmp[i] = sigma[i] + k1[i] * (0.5 * h);
            }
            solver.rhs(phase, t + 0.5 * h, &tmp, &mut field, &mut k2);
            for i in 0..len {
                tmp[i] = sigma[i] + k2[i] * (0.5 * h);
            }
            solver.rhs(phase, t + 0.5 * h, &tmp, &mut field, &mut k3);
            for i in 0..len {
                tmp[i] = sigma[i] + k3[i] * h;
            }
            solver.rhs(phase, t + h, &tmp, &mut field, &mut k4);
            for i in 0..len {
                sigma[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (h / 6.0);
            }
            let t_next = if step + 1 == steps { phase.start + phase.duration } else { t + h };
            record(t_next, &sigma, &mut field)?;
        }
    }

    let last = &ph[4];
    let hz = 1.0 / nz as f64;
    let z: Vec<f64> = (0..nodes).map(|i| i as f64 * hz).collect();
    let p_final: Vec<C> = sigma
        .chunks(k)
        .map(|row| row.iter().zip(&last.weights).map(|(s, w)| s * *w).sum())
        .collect();
    let dens: Vec<f64> = sigma
        .chunks(k)
        .map(|row| row.iter().zip(&last.weights).map(|(s, w)| w * s.norm_sqr()).sum())
        .collect();
    let residual_excitation = hz * (dens.iter().sum::<f64>() - 0.5 * (dens[0] + dens[nz]));

    Ok(FdSolution {
        times,
        stages,
        field_end,
        polarization_end,
        z,
        p_final,
        residual_excitation,
        retrieval_start: ph[3].start,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_detuning_grid;

    fn config(nz: usize, dt: f64) -> FdConfig {
        let grid = build_detuning_grid(0.5, 1.0, 3, 3, 3.0).unwrap();
        FdConfig { nz, dt, grid, schedule: ProtocolSchedule::new(0.5, 0.5, 0.5).unwrap() }
    }

    #[test]
    fn zero_input_gives_zero() {
        let s = fd_solve(&config(32, 0.05), |_| C::new(0.0, 0.0)).unwrap();
        assert!(s.field_end().iter().all(|e| e.norm() == 0.0));
        assert!(s.p_final().iter().all(|p| p.norm() == 0.0));
        assert_eq!(s.residual_excitation(), 0.0);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(fd_solve(&config(16, 0.05), |_| C::new(1.0, 0.0)).is_err());
        assert!(fd_solve(&config(300, 0.05), |_| C::new(1.0, 0.0)).is_err());
        assert!(fd_solve(&config(32, 10.0), |_| C::new(1.0, 0.0)).is_err());
        let mut c = config(32, 0.01);
        c.grid = build_detuning_grid(0.5, 1.0, 9, 9, 3.0).unwrap();
        assert!(fd_solve(&c, |_| C::new(1.0, 0.0)).is_err());
    }

    #[test]
    fn stage_boundaries_are_recorded() {
        let c = config(32, 0.05);
        let s = fd_solve(&c, |t| C::new((-(t - 0.5) * (t - 0.5) * 20.0).exp(), 0.0)).unwrap();
        for stage in 1..=5u8 {
            assert!(s.stages().contains(&stage));
        }
        assert!((s.retrieval_start() - 1.5).abs() < 1e-12);
        assert!((s.times().last().unwrap() - c.schedule.total_duration()).abs() < 1e-12);
    }
}
