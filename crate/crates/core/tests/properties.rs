use crossprop::crossing::{coupling, transfer_polygaussian, TransferParams};
use crossprop::dynamics::TrajectoryBundle;
use crossprop::gaussian::{
    fourier, metaplectic_apply, translate, weyl_apply, PolyGaussian, SiegelMatrix, SymplecticBlocks, WeylPolyOp,
};
use crossprop::grid::GridSpec;
use crossprop::hk::{hk_det, hk_propagate, HKOptions, HKSample};
use crossprop::linalg::{c64, j_matrix, symplectic_residual, CMat, RMat};
use crossprop::models::{make_bloch, make_scalar, make_schrodinger, make_two_level, ModelSpec, ScalarField};
use crossprop::poly::Poly;
use crossprop::propagator::{adiabatic_propagate, propagate, PropagateOptions, WavePacketBranch};
use crossprop::reference::{GridState, Oracle};
use crossprop::study::{profile_grid, transfer_oracle_error};
use num_complex::Complex64;
use proptest::prelude::*;

fn e(s: &str) -> ScalarField {
    ScalarField::parse(s).unwrap()
}

fn width_1d() -> impl Strategy<Value = Complex64> {
    (-1.5..1.5f64, 0.3..3.0f64).prop_map(|(re, im)| c64(re, im))
}

/// Flow of the quadratic Hamiltonian `z.S z / 2` for time `t`.
fn quadratic_flow(d: usize, s: &[f64], t: f64) -> RMat {
    let n = 2 * d;
    let m = RMat::from_row_slice(n, n, s);
    let sym = (&m + m.transpose()) * 0.5;
    (j_matrix(d) * sym * t).exp()
}

fn poly_1d(coeffs: &[(f64, f64)]) -> Poly {
    let mut p = Poly::zero(1);
    for (k, &(re, im)) in coeffs.iter().enumerate() {
        p.add_term(vec![k as u32], c64(re, im));
    }
    p
}

fn max_abs(v: &[Complex64]) -> f64 {
    v.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

fn crossing_model() -> ModelSpec {
    make_schrodinger(1, e("0.5*p^2"), e("0"), e("q"), [e("cos(0.5*atan(q))"), e("sin(0.5*atan(q))"), e("0")]).unwrap()
}

fn gapped_model() -> ModelSpec {
    make_two_level(1, e("0.5*p^2"), e("1 + 0.1*q^2"), [e("cos(0.3*q)"), e("sin(0.3*q)"), e("0")]).unwrap()
}

fn builtin_models() -> Vec<ModelSpec> {
    vec![
        make_schrodinger(1, e("0.5*p^2"), e("0.1*q^2"), e("0.5*sqrt(1 + q^2)"), [e("cos(0.5*atan(q))"), e("sin(0.5*atan(q))"), e("0")])
            .unwrap(),
        make_bloch(1, e("0.5*p^2"), e("0.5*sqrt(1 + p^2)"), [e("cos(0.5*atan(p))"), e("0"), e("sin(0.5*atan(p))")], e("0.5*q^2")).unwrap(),
        make_two_level(
            1,
            e("0.5*p^2 + 0.2*q^2"),
            e("1 + 0.2*q^2 + 0.1*sin(t)"),
            [e("cos(q + 0.4*p)*cos(0.3*q)"), e("sin(q + 0.4*p)*cos(0.3*q)"), e("sin(0.3*q)")],
        )
        .unwrap(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn quadratic_flows_keep_widths_in_the_siegel_cone(
        d in 1usize..=2,
        s in prop::collection::vec(-1.0..1.0f64, 16),
        t in 0.0..2.0f64,
        seed in prop::collection::vec(-1.0..1.0f64, 8),
    ) {
        let f = quadratic_flow(d, &s[..4 * d * d], t);
        prop_assert!(symplectic_residual(&f) < 1e-8);
        let re = RMat::from_fn(d, d, |i, j| seed[i + j]);
        let gamma = CMat::from_fn(d, d, |i, j| c64(re[(i, j)], if i == j { 0.5 + seed[4 + i].abs() } else { 0.1 * seed[6] }));
        let g = SiegelMatrix::new(gamma).unwrap();
        let out = SymplecticBlocks::from_matrix(&f).act_on_width(g.matrix()).unwrap();
        let out = SiegelMatrix::from_computed(out).unwrap();
        prop_assert!(out.min_imag_eig() > 0.0);
    }

    #[test]
    fn transfer_keeps_widths_in_the_siegel_cone(
        sign in prop::bool::ANY,
        log_mu in (0.01f64).ln()..(5.0f64).ln(),
        alpha in -1.5..1.5f64,
        beta in -1.5..1.5f64,
        gamma in width_1d(),
    ) {
        let mu = if sign { log_mu.exp() } else { -log_mu.exp() };
        let p = TransferParams::new(mu, vec![alpha], vec![beta]).unwrap();
        let out = p.image_width(&SiegelMatrix::scalar(gamma).unwrap()).unwrap();
        prop_assert!(out.min_imag_eig() > 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn spectral_decomposition_reconstructs_the_hamiltonian(
        which in 0usize..3,
        t in -2.0..2.0f64,
        q in -3.0..3.0f64,
        p in -3.0..3.0f64,
    ) {
        let m = &builtin_models()[which];
        let z = [q, p];
        let h = m.hamiltonian(t, &z).unwrap();
        let rec = m.projector(1, t, &z).unwrap() * c64(m.h(1, t, &z).unwrap(), 0.0)
            + m.projector(2, t, &z).unwrap() * c64(m.h(2, t, &z).unwrap(), 0.0);
        prop_assert!((h - rec).iter().map(|x| x.norm()).fold(0.0, f64::max) < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metaplectic_translate_fourier_preserve_norm(
        s in prop::collection::vec(-1.0..1.0f64, 4),
        t in 0.0..1.5f64,
        gamma in width_1d(),
        coeffs in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 1..4),
        shift in prop::collection::vec(-1.0..1.0f64, 2),
    ) {
        let w = SiegelMatrix::scalar(gamma).unwrap();
        let g = PolyGaussian::new(w.clone(), c64(w.normalization(), 0.0), poly_1d(&coeffs)).unwrap();
        let g = g.scaled(c64(1.0 / g.norm(), 0.0));
        let blocks = SymplecticBlocks::from_matrix(&quadratic_flow(1, &s, t));
        for out in [metaplectic_apply(&blocks, &g).unwrap(), translate(&g, &shift), fourier(&g).unwrap()] {
            let grid = profile_grid(&out).unwrap();
            let vals: Vec<Complex64> = grid.points().map(|y| out.value(&y)).collect();
            prop_assert!((grid.norm(&vals) - 1.0).abs() < 1e-9, "norm {}", grid.norm(&vals));
        }
    }

    #[test]
    fn egorov_is_exact_for_quadratic_flows(
        s in prop::collection::vec(-1.0..1.0f64, 4),
        t in 0.0..1.5f64,
        gamma in width_1d(),
        coeffs in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 1..3),
        sym in prop::collection::vec(-1.0..1.0f64, 6),
    ) {
        let w = SiegelMatrix::scalar(gamma).unwrap();
        let g = PolyGaussian::new(w.clone(), c64(w.normalization(), 0.0), poly_1d(&coeffs)).unwrap();
        let f = quadratic_flow(1, &s, t);
        let blocks = SymplecticBlocks::from_matrix(&f);
        // A(y, eta) = c0 + c1 y + c2 eta + c3 y^2 + c4 y eta + c5 eta^2
        let mut a = Poly::zero(2);
        for (k, e) in [[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]].iter().enumerate() {
            a.add_term(e.to_vec(), c64(sym[k], 0.0));
        }
        let op = WeylPolyOp::new(1, a).unwrap();
        let lhs = weyl_apply(&op, &metaplectic_apply(&blocks, &g).unwrap()).unwrap();
        let rhs = metaplectic_apply(&blocks, &weyl_apply(&op.compose_linear(&f), &g).unwrap()).unwrap();
        prop_assert_eq!(lhs.poly.degree(), rhs.poly.degree());
        let grid = GridSpec::uniform_1d(-4.0, 4.0, 257);
        let l: Vec<Complex64> = grid.points().map(|y| lhs.value(&y)).collect();
        let r: Vec<Complex64> = grid.points().map(|y| rhs.value(&y)).collect();
        let diff: Vec<Complex64> = l.iter().zip(&r).map(|(a, b)| a - b).collect();
        prop_assert!(max_abs(&diff) < 1e-8 * max_abs(&l).max(1.0), "{}", max_abs(&diff));
    }

    #[test]
    fn fourier_twice_is_parity(gamma in width_1d(), coeffs in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 1..4)) {
        let w = SiegelMatrix::scalar(gamma).unwrap();
        let g = PolyGaussian::new(w.clone(), c64(w.normalization(), 0.0), poly_1d(&coeffs)).unwrap();
        let ff = fourier(&fourier(&g).unwrap()).unwrap();
        let grid = GridSpec::uniform_1d(-5.0, 5.0, 201);
        for y in grid.points() {
            prop_assert!((ff.value(&y) - g.value(&[-y[0]])).norm() < 1e-10);
        }
    }

    #[test]
    fn coupling_is_the_same_from_either_projector(q in -2.0..2.0f64, p in -2.0..2.0f64, t in 0.0..1.0f64) {
        let m = crossing_model();
        let v1 = m.eigvec(1, t, &[q, p], None).unwrap();
        let (g1, _) = coupling(&m, 1, t, &[q, p], &v1).unwrap();
        let (g2, _) = coupling(&m, 2, t, &[q, p], &v1).unwrap();
        prop_assert!((g1 - g2).abs() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn transfer_closed_form_matches_quadrature_with_polynomials(
        sign in prop::bool::ANY,
        log_mu in (0.05f64).ln()..(5.0f64).ln(),
        alpha in -1.5..1.5f64,
        beta in -1.5..1.5f64,
        gamma in width_1d(),
        coeffs in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 1..4),
    ) {
        let mu = if sign { log_mu.exp() } else { -log_mu.exp() };
        let p = TransferParams::new(mu, vec![alpha], vec![beta]).unwrap();
        let w = SiegelMatrix::scalar(gamma).unwrap();
        let g = PolyGaussian::new(w.clone(), c64(w.normalization(), 0.0), poly_1d(&coeffs)).unwrap();
        prop_assert!(transfer_polygaussian(&p, &g).unwrap().1.poly.degree() == g.poly.degree());
        let err = transfer_oracle_error(&p, &g).unwrap();
        prop_assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn oracle_steps_are_unitary(q0 in -1.0..1.0f64, p0 in -1.0..1.0f64, gamma in width_1d(), dt in 1e-3..2e-2f64) {
        let eps = 0.02;
        let m = crossing_model();
        let grid = GridSpec::uniform_1d(-6.0, 6.0, 512);
        let w = SiegelMatrix::scalar(gamma).unwrap();
        let g = PolyGaussian::unit(w);
        let psi = crossprop::gaussian::evaluate_on_grid(&g, &[q0, p0], eps, &grid).unwrap().values;
        let mut st = GridState::new(eps, grid.clone(), vec![psi.clone(), psi], 0.0).unwrap();
        let n0 = st.norm();
        let mut oracle = Oracle::new(&m, &grid, eps).unwrap();
        for _ in 0..200 {
            oracle.step(&mut st, dt).unwrap();
        }
        prop_assert!((st.norm() - n0).abs() < 1e-10 * (200.0 * dt).max(1.0));
    }

    #[test]
    fn hk_prefactor_starts_at_one_and_matches_the_block_determinant(q in -1.0..1.0f64, p in -1.0..1.0f64, t in 0.1..1.5f64) {
        let m = make_scalar(1, e("0.5*p^2 - cos(q)")).unwrap();
        let seed = HKSample {
            z0: vec![q, p],
            weight: 1.0,
            coeff: c64(1.0, 0.0),
            prefactor: c64(1.0, 0.0),
            eigvec: vec![c64(1.0, 0.0)],
            bundle: TrajectoryBundle::new(0.0, vec![q, p], vec![c64(1.0, 0.0)]),
        };
        let start = hk_propagate(&m, 1, std::slice::from_ref(&seed), 0.01, 0.0, &HKOptions::default()).unwrap();
        prop_assert!((start.samples[0].prefactor - c64(1.0, 0.0)).norm() < 1e-14);
        let out = hk_propagate(&m, 1, &[seed], 0.01, t, &HKOptions::default()).unwrap();
        let s = &out.samples[0];
        prop_assert!((s.prefactor.norm_sqr() - 0.5 * hk_det(&s.bundle).norm()).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn adiabatic_propagate_is_propagate_with_b1_on_gapped_models(q0 in -1.0..1.0f64, p0 in 0.2..1.5f64) {
        let m = gapped_model();
        let g = PolyGaussian::unit(SiegelMatrix::identity(1));
        let init = WavePacketBranch::initial(&m, 0.0, &[q0, p0], g).unwrap();
        let opts = PropagateOptions { with_b1: true, ..Default::default() };
        let a = adiabatic_propagate(&m, 0.01, &init, 1.0, &opts).unwrap();
        let b = propagate(&m, 0.01, &init, 1.0, &opts).unwrap();
        prop_assert!(b.crossing.is_none());
        prop_assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }
}

#[test]
fn branch_order_does_not_change_reconstruction() {
    let m = crossing_model();
    let g = PolyGaussian::unit(SiegelMatrix::identity(1));
    let init = WavePacketBranch::initial(&m, 0.0, &[-1.0, 2.0], g).unwrap();
    let sol = propagate(&m, 0.01, &init, 1.5, &PropagateOptions::default()).unwrap();
    assert_eq!(sol.final_branches().len(), 2);
    let grid = GridSpec::uniform_1d(-2.0, 3.0, 256);
    let base = crossprop::propagator::reconstruct(&sol, 1.5, &grid).unwrap();
    let mut swapped = sol.clone();
    swapped.snapshots.last_mut().unwrap().branches.reverse();
    let other = crossprop::propagator::reconstruct(&swapped, 1.5, &grid).unwrap();
    assert_eq!(base.psi, other.psi);
    assert_eq!(base.branch_norms, other.branch_norms);
}

#[test]
fn spawned_weight_scales_like_sqrt_eps() {
    let m = crossing_model();
    let g = PolyGaussian::unit(SiegelMatrix::identity(1));
    let init = WavePacketBranch::initial(&m, 0.0, &[-1.0, 2.0], g).unwrap();
    let ratios: Vec<f64> = [0.02, 0.01, 0.005]
        .iter()
        .map(|&eps| {
            let sol = propagate(&m, eps, &init, 1.5, &PropagateOptions::default()).unwrap();
            let spawned = sol.final_branches().iter().find(|b| b.band == 2).cloned().unwrap();
            spawned.norm(eps).unwrap() / eps.sqrt()
        })
        .collect();
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().cloned().fold(0.0, f64::max);
    assert!((hi - lo) / hi < 0.01, "{ratios:?}");
}

#[test]
fn diagonal_models_spawn_nothing() {
    let m = make_two_level(1, e("0.5*p^2"), e("q"), [e("1"), e("0"), e("0")]).unwrap();
    let g = PolyGaussian::unit(SiegelMatrix::identity(1));
    let init = WavePacketBranch::initial(&m, 0.0, &[-1.0, 2.0], g).unwrap();
    let sol = propagate(&m, 0.01, &init, 1.5, &PropagateOptions::default()).unwrap();
    assert_eq!(sol.final_branches().len(), 1);
    assert!(sol.crossing.as_ref().is_none_or(|c| c.gamma_flat < 1e-12));
}
