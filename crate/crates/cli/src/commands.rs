//! One function per command, each producing a fixed-schema table.

use rayon::prelude::*;

use crib_core::analytic::{
    broadening_grid, broadening_stage_efficiency_numeric, perturbative_efficiency, transmission_spectrum, Profile,
};
use crib_core::kernels::{build_efficiency_kernel, build_transfer_kernel, default_time_grids, EfficiencyKernel};
use crib_core::laplace::{talbot_contour, LaplaceContour};
use crib_core::model::{default_schedule, derive_params, grid_for, ProtocolSchedule};
use crib_core::modes::{gaussian_efficiency, optimal_mode, optimize_gaussian_with, GaussianSearch};

use crate::config::{CliError, Command, Settings};

/// Random optimizer starts added to the fixed ones.
const EXTRA_STARTS: usize = 4;
/// Samples of the flat profile in the broadening-stage numeric.
const PROFILE_POINTS: usize = 129;
/// Narrowest Gaussian width on the `gaussian-map` lattice.
const MIN_MAP_WIDTH: f64 = 0.05;

pub struct Table {
    pub columns: &'static [&'static str],
    pub rows: Vec<Vec<f64>>,
}

pub fn run(s: &Settings) -> Result<Table, CliError> {
    if s.d0.iter().any(|&d| d > 200.0) {
        eprintln!("warning: d0 above 200 needs finer grids and can run for a long time");
    }
    match s.command {
        Command::SweepOptimal => sweep_optimal(s),
        Command::SweepGaussian => sweep_gaussian(s),
        Command::GaussianMap => gaussian_map(s),
        Command::Modes => modes(s),
        Command::Perturbative => perturbative(s),
        Command::Transmission => transmission(s),
    }
}

fn contour(s: &Settings) -> Result<LaplaceContour, CliError> {
    Ok(talbot_contour(s.contour_nodes, 1.0)?)
}

fn pairs(s: &Settings) -> Vec<(f64, f64)> {
    s.d0.iter().flat_map(|&d| s.gamma.iter().map(move |&g| (d, g))).collect()
}

fn desk_kernel(s: &Settings, c: &LaplaceContour, d0: f64, gamma: f64) -> Result<(ProtocolSchedule, EfficiencyKernel), CliError> {
    let params = derive_params(d0, gamma)?;
    let schedule = default_schedule(&params);
    let grid = grid_for(&params, s.grid_k, s.grid_n, s.extent)?;
    let (o, i) = default_time_grids(&schedule, s.quad_level)?;
    let k = build_transfer_kernel(&params, &schedule, &grid, c, &o, &i)?;
    Ok((schedule, build_efficiency_kernel(&k)?))
}

/// Runs `f` on every (d0, γ) pair in the worker pool and concatenates the
/// rows in input order.
fn over_pairs<F>(s: &Settings, f: F) -> Result<Vec<Vec<f64>>, CliError>
where
    F: Fn(f64, f64, &ProtocolSchedule, &EfficiencyKernel) -> Result<Vec<Vec<f64>>, CliError> + Sync,
{
    let c = contour(s)?;
    let todo = pairs(s);
    let n = todo.len();
    let chunks = todo
        .par_iter()
        .enumerate()
        .map(|(idx, &(d0, g))| {
            let (schedule, kernel) = desk_kernel(s, &c, d0, g)?;
            let rows = f(d0, g, &schedule, &kernel)?;
            eprintln!("[{}/{n}] d0 = {d0}, gamma = {g}", idx + 1);
            Ok(rows)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

fn sweep_optimal(s: &Settings) -> Result<Table, CliError> {
    let rows = over_pairs(s, |d0, g, _, k| Ok(vec![vec![d0, g, optimal_mode(k)?.efficiency]]))?;
    Ok(Table { columns: &["d0", "gamma_rel", "eta_max"], rows })
}

fn sweep_gaussian(s: &Settings) -> Result<Table, CliError> {
    let search = GaussianSearch { extra_starts: EXTRA_STARTS, seed: s.seed, ..GaussianSearch::default() };
    let rows = over_pairs(s, |d0, g, schedule, k| {
        let m = optimize_gaussian_with(k, schedule, &search)?;
        if let Some(w) = &m.warning {
            eprintln!("warning: d0 = {d0}, gamma = {g}: {w}");
        }
        let (tc, tw) = m.gaussian_params.unwrap_or((f64::NAN, f64::NAN));
        Ok(vec![vec![d0, g, tc, tw, m.efficiency]])
    })?;
    Ok(Table { columns: &["d0", "gamma_rel", "t_c", "t_w", "eta"], rows })
}

fn lattice(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
}

fn gaussian_map(s: &Settings) -> Result<Table, CliError> {
    let rows = over_pairs(s, |d0, g, schedule, k| {
        let tr = schedule.tau_r();
        let mut rows = Vec::with_capacity(s.map_points * s.map_points);
        for tc in lattice(0.0, tr, s.map_points) {
            for tw in lattice(MIN_MAP_WIDTH, tr, s.map_points) {
                rows.push(vec![d0, g, tc, tw, gaussian_efficiency(k, tc, tw)?]);
            }
        }
        Ok(rows)
    })?;
    Ok(Table { columns: &["d0", "gamma_rel", "t_c", "t_w", "eta"], rows })
}

fn modes(s: &Settings) -> Result<Table, CliError> {
    let rows = over_pairs(s, |d0, g, _, k| {
        let m = optimal_mode(k)?;
        Ok(m.times
            .iter()
            .zip(&m.mode)
            .map(|(&t, v)| vec![d0, g, m.efficiency, t, v.re, v.im, v.norm()])
            .collect())
    })?;
    Ok(Table { columns: &["d0", "gamma_rel", "eta", "t", "mode_re", "mode_im", "mode_abs"], rows })
}

fn perturbative(s: &Settings) -> Result<Table, CliError> {
    let c = contour(s)?;
    let flat = Profile::flat(PROFILE_POINTS)?;
    let rows = s
        .gamma
        .par_iter()
        .map(|&g| {
            let first = perturbative_efficiency(&flat, g, s.tau_d)?.eta;
            let grid = broadening_grid(g, s.tau_d, s.extent)?;
            let num = broadening_stage_efficiency_numeric(&flat, g, s.tau_d, &grid, &c)?;
            eprintln!("gamma = {g}: first order {first:.4}, numeric {num:.4}");
            Ok(vec![g, first, num])
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(Table { columns: &["gamma_rel", "eta_first_order", "eta_numeric"], rows })
}

fn transmission(s: &Settings) -> Result<Table, CliError> {
    let mut rows = Vec::new();
    for &d0 in &s.d0 {
        let params = derive_params(d0, 0.0)?;
        let span = 5.0 * params.gamma0_rel();
        let omegas: Vec<f64> = match &s.omega {
            Some(w) => w.clone(),
            None => lattice(-span, span, 201).collect(),
        };
        rows.extend(omegas.into_iter().map(|w| vec![d0, w, transmission_spectrum(w, &params)]));
    }
    Ok(Table { columns: &["d0", "omega", "transmission"], rows })
}
