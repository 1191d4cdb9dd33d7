mod common;

use crib_core::kernels::*;
use crib_core::laplace::{invert_at_unit, talbot_contour, LaplaceContour};
use crib_core::model::*;
use crib_core::propagators::EigenCache;
use crib_core::quadrature::{composite_grid, TimeGrid};
use crib_core::Complex64 as C;
use common::bessel_j1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn contour() -> LaplaceContour {
    talbot_contour(32, 1.0).unwrap()
}

struct Setup {
    params: PhysicalParams,
    schedule: ProtocolSchedule,
    grid: DetuningGrid,
    out: TimeGrid,
    inp: TimeGrid,
}

fn setup(d0: f64, gamma: f64, k: usize, n: usize) -> Setup {
    let params = derive_params(d0, gamma).unwrap();
    let schedule = default_schedule(&params);
    let grid = grid_for(&params, k, n, 5.0).unwrap();
    let (out, inp) = default_time_grids(&schedule, 2).unwrap();
    Setup { params, schedule, grid, out, inp }
}

impl Setup {
    fn kernel(&self, opts: &KernelOptions) -> TransferKernel {
        build_transfer_kernel_with(&self.params, &self.schedule, &self.grid, &contour(), &self.out, &self.inp, opts)
            .unwrap()
    }
}

fn max_diff(a: &TransferKernel, b: &TransferKernel) -> f64 {
    let mut m = 0.0f64;
    for i in 0..a.values().nrows() {
        for j in 0..a.values().ncols() {
            m = m.max((a.values()[(i, j)] - b.values()[(i, j)]).norm());
        }
    }
    m
}

fn gaussian(grid: &TimeGrid, tc: f64, tw: f64) -> Vec<C> {
    grid.nodes().iter().map(|t| C::new((-(t - tc).powi(2) / (4.0 * tw * tw)).exp(), 0.0)).collect()
}

fn normalized(grid: &TimeGrid, f: Vec<C>) -> Vec<C> {
    let e = energy(grid, &f).sqrt();
    f.into_iter().map(|x| x / e).collect()
}

#[test]
fn structured_and_dense_routes_agree() {
    let s = setup(10.0, 3.0, 3, 5);
    let a = s.kernel(&KernelOptions::default());
    let b = s.kernel(&KernelOptions { strategy: Strategy::Dense, conjugate_symmetry: false });
    assert!(max_diff(&a, &b) < 1e-10 * a.max_abs(), "{}", max_diff(&a, &b));
    let res = b.diagnostics().imaginary_residue.unwrap();
    assert!(res < IMAGINARY_RESIDUE_LIMIT, "{res}");
    assert_eq!(b.diagnostics().contour_nodes_evaluated, 32);
    assert_eq!(a.diagnostics().contour_nodes_evaluated, 16);
}

#[test]
fn single_resonant_class_is_a_bessel_kernel() {
    for tau_s in [0.0, 0.8, 2.5] {
        let params = derive_params(10.0, 1.0).unwrap();
        let schedule = ProtocolSchedule::new(0.6, 0.9, tau_s).unwrap();
        let grid = build_detuning_grid(params.gamma0_rel(), 1.0, 1, 1, 5.0).unwrap();
        let (out, inp) = default_time_grids(&schedule, 2).unwrap();
        let k = build_transfer_kernel(&params, &schedule, &grid, &contour(), &out, &inp).unwrap();
        for (i, t) in out.nodes().iter().enumerate() {
            for (j, s) in inp.nodes().iter().enumerate() {
                let a = t + tau_s + (schedule.tau_r() - s);
                let want = -bessel_j1(2.0 * a.sqrt()) / a.sqrt();
                assert!((k.values()[(i, j)].re - want).abs() < 1e-8, "τs {tau_s}, a {a}");
            }
        }
    }
}

#[test]
fn k4_pair_from_the_matrix_chain() {
    let grid = build_detuning_grid(1.0, 1.0, 1, 1, 5.0).unwrap();
    let schedule = ProtocolSchedule::new(1.0, 0.4, 0.3).unwrap();
    let c = contour();
    let cache = EigenCache::build(&grid, &c, None).unwrap();
    for (t, tp) in [(0.0, 0.0), (0.3, 0.7), (1.0, 1.0)] {
        let samples: Vec<C> = (0..c.len())
            .map(|n| kernel_samples(KernelKind::K4, &cache, n, t, tp, &grid, &schedule).unwrap())
            .collect();
        let a: f64 = t + tp + 2.0 * 0.4 + 0.3;
        let want = -bessel_j1(2.0 * a.sqrt()) / a.sqrt();
        assert!((invert_at_unit(&c, &samples).unwrap().re - want).abs() < 1e-8);
    }
    assert!(kernel_samples(KernelKind::K1, &cache, 0, 0.5, 0.1, &grid, &schedule).is_err());
    assert!(kernel_samples(KernelKind::K4, &cache, 99, 0.5, 0.1, &grid, &schedule).is_err());
}

#[test]
fn degenerate_controlled_grid_links_the_quadrants() {
    let grid = DetuningGrid::from_parts(vec![-0.5, 0.0, 0.5], vec![0.25, 0.5, 0.25], vec![0.0], vec![1.0]).unwrap();
    let schedule = ProtocolSchedule::new(0.7, 0.5, 0.0).unwrap();
    let c = contour();
    let cache = EigenCache::build(&grid, &c, None).unwrap();
    let f = |kind, t, tp| {
        let s: Vec<C> =
            (0..c.len()).map(|n| kernel_samples(kind, &cache, n, t, tp, &grid, &schedule).unwrap()).collect();
        invert_at_unit(&c, &s).unwrap()
    };
    for tp in [0.0, 0.2, 0.5] {
        assert!((f(KernelKind::K3, 0.0, tp) - f(KernelKind::K1, 0.5, tp)).norm() < 1e-12);
        assert!((f(KernelKind::K2, tp, 0.0) - f(KernelKind::K1, tp, 0.5)).norm() < 1e-12);
    }
    assert!((f(KernelKind::K4, 0.0, 0.0) - f(KernelKind::K1, 0.5, 0.5)).norm() < 1e-12);
}

#[test]
fn quadrants_match_pointwise_recomputation() {
    let s = setup(10.0, 2.0, 3, 3);
    let k = s.kernel(&KernelOptions::default());
    let c = contour();
    let cache = EigenCache::build(&s.grid, &c, None).unwrap();
    let (td, tr) = (s.schedule.tau_d(), s.schedule.tau_r());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rows: Vec<usize> = (0..s.out.len()).collect();
    let cols: Vec<usize> = (0..s.inp.len()).collect();
    for (late_out, old_in) in [(false, false), (false, true), (true, false), (true, true)] {
        let rs: Vec<usize> = rows.iter().copied().filter(|&i| (s.out.nodes()[i] > td) == late_out).collect();
        let cs: Vec<usize> = cols.iter().copied().filter(|&j| (tr - s.inp.nodes()[j] > td) == old_in).collect();
        for _ in 0..5 {
            let i = rs[rng.random_range(0..rs.len())];
            let j = cs[rng.random_range(0..cs.len())];
            let t = s.out.nodes()[i];
            let tp = tr - s.inp.nodes()[j];
            let (kind, a, b) = match (late_out, old_in) {
                (false, false) => (KernelKind::K1, t, tp),
                (false, true) => (KernelKind::K2, t, tp - td),
                (true, false) => (KernelKind::K3, t - td, tp),
                (true, true) => (KernelKind::K4, t - td, tp - td),
            };
            let samples: Vec<C> = (0..c.len())
                .map(|n| kernel_samples(kind, &cache, n, a, b, &s.grid, &s.schedule).unwrap())
                .collect();
            let want = invert_at_unit(&c, &samples).unwrap().re;
            assert!((k.values()[(i, j)].re - want).abs() < 1e-10, "{kind:?}");
        }
    }
}

#[test]
fn output_map_is_linear_and_passive() {
    let s = setup(25.0, 3.0, 11, 11);
    let k = s.kernel(&KernelOptions::default());
    let n = s.inp.len();
    assert!(apply_output(&k, &vec![C::new(0.0, 0.0); n]).unwrap().iter().all(|x| x.norm() == 0.0));
    assert!(apply_output(&k, &vec![C::new(1.0, 0.0); n - 1]).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut draw = || -> Vec<C> { (0..n).map(|_| C::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect() };
    let (a, b) = (draw(), draw());
    let (al, be) = (C::new(0.3, -1.2), C::new(2.0, 0.5));
    let mix: Vec<C> = a.iter().zip(&b).map(|(x, y)| x * al + y * be).collect();
    let lhs = apply_output(&k, &mix).unwrap();
    let ra = apply_output(&k, &a).unwrap();
    let rb = apply_output(&k, &b).unwrap();
    for i in 0..lhs.len() {
        assert!((lhs[i] - (ra[i] * al + rb[i] * be)).norm() < 1e-12 * (1.0 + lhs[i].norm()));
    }
    for _ in 0..50 {
        let e = normalized(&s.inp, draw());
        let out = energy(&s.out, &apply_output(&k, &e).unwrap());
        assert!(out <= 1.0 + 1e-6, "{out}");
    }
}

#[test]
fn gaussian_input_at_desk_scale_is_passive() {
    let s = setup(100.0, 10.0, 17, 17);
    let k = s.kernel(&KernelOptions::default());
    let e = normalized(&s.inp, gaussian(&s.inp, s.schedule.tau_p(), 1.0));
    let out = energy(&s.out, &apply_output(&k, &e).unwrap());
    assert!(out > 0.0 && out < 1.0, "{out}");
}

#[test]
fn efficiency_kernel_is_hermitian_psd_and_contractive() {
    let s = setup(25.0, 3.0, 11, 11);
    let k = s.kernel(&KernelOptions::default());
    let e = build_efficiency_kernel(&k).unwrap();
    let m = e.matrix();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            assert_eq!(m[(i, j)], m[(j, i)].conj());
        }
    }
    let sp = e.spectrum().unwrap();
    assert!(sp[0] >= -1e-9 && sp[sp.len() - 1] <= 1.0 + 1e-9, "{} {}", sp[0], sp[sp.len() - 1]);
}

#[test]
fn vanishing_read_in_leaves_no_late_output() {
    let params = derive_params(10.0, 3.0).unwrap();
    let schedule = ProtocolSchedule::new(1e-6, 1.0, 0.5).unwrap();
    let grid = grid_for(&params, 3, 5, 5.0).unwrap();
    let (out, inp) = default_time_grids(&schedule, 2).unwrap();
    let k = build_transfer_kernel(&params, &schedule, &grid, &contour(), &out, &inp).unwrap();
    let e = normalized(&inp, vec![C::new(1.0, 0.0); inp.len()]);
    let y = apply_output(&k, &e).unwrap();
    let late: f64 = out
        .nodes()
        .iter()
        .zip(out.weights())
        .zip(&y)
        .filter(|((t, _), _)| **t > schedule.tau_d())
        .map(|((_, w), v)| w * v.norm_sqr())
        .sum();
    assert!(late < 1e-6, "{late}");
}

#[test]
fn storage_decay_follows_intrinsic_dephasing() {
    // A short read-in keeps the absorption-to-emission delay well below T2.
    let params = derive_params(800.0, 10.0).unwrap();
    let grid = grid_for(&params, 21, 33, 5.0).unwrap();
    let t2 = params.t2_rel();
    let mut reference = None;
    for frac in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let schedule = ProtocolSchedule::new(1.0, 0.5, frac * t2).unwrap();
        let (out, inp) = default_time_grids(&schedule, 2).unwrap();
        let k = build_transfer_kernel(&params, &schedule, &grid, &contour(), &out, &inp).unwrap();
        let e = normalized(&inp, gaussian(&inp, 0.7, 0.2));
        let eta = energy(&out, &apply_output(&k, &e).unwrap());
        let r = *reference.get_or_insert(eta);
        let law = (-2.0 * frac * frac).exp();
        assert!(((eta / r) / law - 1.0).abs() < 0.03, "τs = {frac} T2: {} vs {law}", eta / r);
    }
}

#[test]
fn dump_round_trip() {
    let s = setup(10.0, 3.0, 3, 3);
    let k = s.kernel(&KernelOptions::default());
    let mut buf = Vec::new();
    write_dump(&mut buf, k.values(), s.schedule.tau_r()).unwrap();
    assert_eq!(&buf[..8], DUMP_MAGIC);
    assert_eq!(buf.len(), 32 + 16 * s.out.len() * s.inp.len());
    let (m, tr) = read_dump(buf.as_slice()).unwrap();
    assert_eq!(&m, k.values());
    assert_eq!(tr, s.schedule.tau_r());
    let back = transfer_kernel_from_parts(s.schedule, s.out.clone(), s.inp.clone(), m).unwrap();
    assert_eq!(back.values(), k.values());
    buf[0] = b'X';
    assert!(read_dump(buf.as_slice()).is_err());
    assert!(transfer_kernel_from_parts(s.schedule, s.out.clone(), s.inp.clone(), faer::Mat::zeros(2, 2)).is_err());
}

#[test]
fn rejects_rescaled_contour() {
    let s = setup(10.0, 3.0, 3, 3);
    let c = talbot_contour(32, 0.5).unwrap();
    assert!(build_transfer_kernel(&s.params, &s.schedule, &s.grid, &c, &s.out, &s.inp).is_err());
    let bad = composite_grid(0.0, 0.5, 7.0, 2).unwrap();
    assert!(build_transfer_kernel(&s.params, &s.schedule, &s.grid, &contour(), &bad, &s.inp).is_err());
}
