use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::{build_grid, mass, DivisorConfig, SymmetryMode};

fn z2(ns: usize) -> Arc<SphereGrid<f64>> {
    Arc::new(build_grid::<f64>(12.0, ns, 1, SymmetryMode::S1Z2Invariant).unwrap())
}

fn log_cosh(x: f64) -> f64 {
    x.abs() + (-2.0 * x.abs()).exp().ln_1p() - std::f64::consts::LN_2
}

/// Closed-form football potential at angle beta.
fn football(g: &Arc<SphereGrid<f64>>, beta: f64) -> ScalarField<f64> {
    ScalarField::from_fn(g.clone(), |s, _| 2.0 / beta * log_cosh(beta * s) - 2.0 * log_cosh(s))
}

/// t = beta, G = -(1 - beta) log(|S|^2 + eps) + log(beta 4^{beta - 1}): solved by the football potential as eps -> 0.
fn football_problem(bg: &Background<f64>, beta: f64, eps: f64) -> MAProblem<f64> {
    let l = bg.log_norm_eps(0, eps).unwrap();
    let c = (beta * 4f64.powf(beta - 1.0)).ln();
    let g = ScalarField::new(bg.grid().clone(), l.iter().map(|v| -(1.0 - beta) * v + c).collect()).unwrap();
    MAProblem::new(beta, g, Gauge::None).unwrap()
}

fn two_pole_bg(ns: usize, beta: f64) -> Background<f64> {
    Background::new(z2(ns), DivisorConfig::two_pole(beta).unwrap()).unwrap()
}

#[test]
fn residual_vanishes_for_trivial_problems() {
    let g = z2(257);
    let zero = ScalarField::zeros(g.clone());
    let p1 = MAProblem::new(1.0, zero.clone(), Gauge::None).unwrap();
    assert_eq!(ma_residual(&p1, &zero).sup_norm(), 0.0);
    let p0 = MAProblem::new(0.0, zero.clone(), Gauge::FreeConstant).unwrap();
    assert_eq!(ma_residual(&p0, &zero).sup_norm(), 0.0);
    assert!(MAProblem::new(0.0, zero.clone(), Gauge::None).is_err());
    assert!(MAProblem::new(-0.1, zero, Gauge::None).is_err());
}

#[test]
fn football_residual_decays_at_second_order() {
    // the truncation rows see the closed form's O(exp(-2 beta L)) slope and are left out
    let beta = 0.7;
    let mut errs = vec![];
    for ns in [512usize, 1024, 2048] {
        let bg = two_pole_bg(ns, beta);
        let g = bg.grid().clone();
        let r = ma_residual(&football_problem(&bg, beta, 1e-14), &football(&g, beta));
        let e = (0..g.len()).filter(|&i| g.s_at(i).abs() <= 11.0).map(|i| r.values()[i].abs()).fold(0.0, f64::max);
        errs.push(e);
    }
    assert!(errs[2] < 2e-5, "{errs:?}");
    assert!(errs[0] / errs[1] > 3.7 && errs[1] / errs[2] > 3.7, "{errs:?}");
}

#[test]
fn exact_initial_guess_converges_immediately() {
    let g = z2(257);
    let zero = ScalarField::zeros(g.clone());
    let p = MAProblem::new(1.0, zero.clone(), Gauge::None).unwrap();
    let sol = newton_solve(&p, &zero, &NewtonOptions::default()).unwrap();
    assert!(sol.iterations <= 1);
    assert_eq!(sol.potential.field().sup_norm(), 0.0);
}

#[test]
fn jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (ns, nphi, mode) in [(257usize, 1usize, SymmetryMode::S1Invariant), (48, 16, SymmetryMode::Full2d)] {
        let g = Arc::new(build_grid::<f64>(12.0, ns, nphi, mode).unwrap());
        let phi = ScalarField::from_fn(g.clone(), |s, p| 0.2 * (1.0 + 0.3 * p.cos()) / s.cosh().powi(4));
        let gf = ScalarField::from_fn(g.clone(), |s, p| 0.1 * s.tanh() + 0.05 * p.sin() / s.cosh());
        let prob = MAProblem::new(0.8, gf, Gauge::None).unwrap();
        for _ in 0..5 {
            let v: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let jv = apply_linearization(&prob, &phi, &v);
            let h = 1e-6;
            let plus = ScalarField::new(g.clone(), (0..g.len()).map(|i| phi.values()[i] + h * v[i]).collect()).unwrap();
            let minus = ScalarField::new(g.clone(), (0..g.len()).map(|i| phi.values()[i] - h * v[i]).collect()).unwrap();
            let (rp, rm) = (ma_residual(&prob, &plus), ma_residual(&prob, &minus));
            let fd: Vec<f64> = (0..g.len()).map(|i| (rp.values()[i] - rm.values()[i]) / (2.0 * h)).collect();
            let num = jv.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den = jv.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(num / den < 1e-6, "relative error {}", num / den);
        }
    }
}

#[test]
fn football_newton_from_a_coarser_eps() {
    let beta = 0.7;
    let bg = two_pole_bg(2048, beta);
    let g = bg.grid().clone();
    let opts = NewtonOptions::default();
    let start = newton_solve(&football_problem(&bg, beta, 1e-3), &ScalarField::zeros(g.clone()), &opts).unwrap();
    let sol = newton_solve(&football_problem(&bg, beta, 1e-4), start.potential.field(), &opts).unwrap();
    assert!(sol.iterations <= 8, "{} iterations", sol.iterations);
    assert!(sol.residual <= 1e-10);
    // dominated by the eps regularization, not the solver
    let d = sol.potential.field().distance_mod_constant(&football(&g, beta));
    assert!(d < 2e-2, "distance {d}");
}

#[test]
fn football_grid_convergence_is_second_order() {
    let beta = 0.7;
    let mut errs = vec![];
    for ns in [257usize, 513, 1025] {
        let bg = two_pole_bg(ns, beta);
        let g = bg.grid().clone();
        let sol = newton_solve(&football_problem(&bg, beta, 1e-14), &ScalarField::zeros(g.clone()), &NewtonOptions::default())
            .unwrap();
        errs.push(sol.potential.field().distance_mod_constant(&football(&g, beta)));
    }
    let o1 = (errs[0] / errs[1]).log2();
    let o2 = (errs[1] / errs[2]).log2();
    assert!(o1 >= 1.9 && o2 >= 1.9, "orders {o1} {o2}, errors {errs:?}");
}

#[test]
fn solver_output_conserves_mass() {
    let bg = two_pole_bg(1024, 0.7);
    let sol = newton_solve(&football_problem(&bg, 0.7, 1e-2), &ScalarField::zeros(bg.grid().clone()), &NewtonOptions::default())
        .unwrap();
    assert!((mass(&sol.potential.density()) - 4.0 * PI).abs() <= 1e-8 * 4.0 * PI);
}

/// At t = 1 the right-hand side exp(G) with G = a tanh s has no solution for a != 0:
/// tanh s spans the kernel of Delta + 1 and the equation forces its weighted mean to vanish.
#[test]
fn no_solution_for_tilted_kahler_einstein_problem() {
    let g = Arc::new(build_grid::<f64>(12.0, 513, 1, SymmetryMode::S1Invariant).unwrap());
    let opts = NewtonOptions { max_iter: 40, ..NewtonOptions::default() };
    for a in [0.0, 0.1, 0.3, 1.0] {
        let gf = ScalarField::from_fn(g.clone(), |s, _| a * s.tanh());
        let prob = MAProblem::new(1.0, gf, Gauge::None).unwrap();
        let out = newton_solve(&prob, &ScalarField::zeros(g.clone()), &opts);
        if a == 0.0 {
            assert!(out.is_ok());
        } else {
            assert!(
                matches!(
                    out,
                    Err(MaError::MaxIterExceeded { .. } | MaError::KahlerConeViolation { .. } | MaError::SingularLinearization(_))
                ),
                "a = {a}: {out:?}"
            );
        }
    }
}

#[test]
fn distinct_initial_guesses_reach_the_same_solution() {
    let bg = two_pole_bg(1024, 0.7);
    let g = bg.grid().clone();
    let prob = football_problem(&bg, 0.7, 1e-2);
    let opts = NewtonOptions::default();
    let a = newton_solve(&prob, &ScalarField::zeros(g.clone()), &opts).unwrap();
    let init = ScalarField::from_fn(g.clone(), |s, _| 0.3 / s.cosh().powi(4) + 1.0);
    let b = newton_solve(&prob, &init, &opts).unwrap();
    assert!(a.potential.field().distance(b.potential.field()) <= 10.0 * opts.tol_residual * 1e3);
}

#[test]
fn smooth_volume_family_degenerates_at_beta_one() {
    let bg = two_pole_bg(513, 1.0);
    let fam = smooth_volume_family(&bg, &VolumeProfile::Model, 0.1, &NewtonOptions::default()).unwrap();
    for i in 0..bg.grid().len() {
        assert!((fam.eta.values()[i] - bg.grid().rho0_at(i)).abs() < 1e-15);
    }
    assert_eq!(fam.phi_eps.field().sup_norm(), 0.0);
    let r = solve_reference(&bg, 0.1, &fam.phi_eps, &NewtonOptions::default()).unwrap();
    assert_eq!(r.psi.field().sup_norm(), 0.0);
    assert_eq!(r.c_norm, 0.0);
}

#[test]
fn smooth_volume_family_is_cauchy_along_the_ladder() {
    let beta = 0.7;
    let bg = two_pole_bg(1024, beta);
    let seed = VolumeProfile::Seeded(football(bg.grid(), beta));
    let opts = NewtonOptions::default();
    let mut prev: Option<Potential<f64>> = None;
    let mut gaps = vec![];
    for eps in [1e-1, 1e-2, 1e-3] {
        let fam = smooth_volume_family(&bg, &seed, eps, &opts).unwrap();
        assert!((mass(&fam.eta) - 4.0 * PI).abs() < 1e-8);
        assert_eq!(fam.phi_eps.field().max(), 0.0);
        if let Some(p) = prev {
            gaps.push(p.field().distance(fam.phi_eps.field()));
        }
        prev = Some(fam.phi_eps);
    }
    assert!(gaps[1] < gaps[0], "{gaps:?}");
}

#[test]
fn reference_potentials_are_uniformly_bounded() {
    let beta = 0.7;
    let bg = two_pole_bg(1024, beta);
    let seed = VolumeProfile::Seeded(football(bg.grid(), beta));
    let opts = NewtonOptions::default();
    let mut norms = vec![];
    for eps in [1e-1, 1e-2, 1e-3] {
        let fam = smooth_volume_family(&bg, &seed, eps, &opts).unwrap();
        let r = solve_reference(&bg, eps, &fam.phi_eps, &opts).unwrap();
        assert_eq!(r.psi.field().max(), 0.0);
        let angles = [beta];
        let div = bg.divisor_term(eps, &angles).unwrap();
        let gv: Vec<f64> = (0..bg.grid().len())
            .map(|i| -beta * fam.phi_eps.values()[i] + bg.h().values()[i] - div[i] + r.c_norm)
            .collect();
        let prob = MAProblem::new(0.0, ScalarField::new(bg.grid().clone(), gv).unwrap(), Gauge::FreeConstant).unwrap();
        assert!(ma_residual(&prob, r.psi.field()).sup_norm() <= 1e-10);
        norms.push(r.psi.field().sup_norm());
    }
    // sup |psi| increases to osc of the football potential, 2 ln 2 (1/beta - 1)
    let limit = 2.0 * std::f64::consts::LN_2 * (1.0 / beta - 1.0);
    assert!(norms.windows(2).all(|w| w[0] < w[1] && w[1] < limit), "{norms:?}");
    assert!(limit - norms[2] < 0.5 * (limit - norms[1]), "{norms:?}");
}

#[test]
fn potentials_outside_the_cone_are_rejected() {
    let g = z2(257);
    let bad = ScalarField::from_fn(g.clone(), |s, _| -3.0 / s.cosh().powi(2));
    assert!(matches!(Potential::new(bad.clone(), Normalization::Raw), Err(MaError::NotKahler { .. })));
    let p = MAProblem::new(1.0, ScalarField::zeros(g), Gauge::None).unwrap();
    assert!(matches!(newton_solve(&p, &bad, &NewtonOptions::default()), Err(MaError::NotKahler { .. })));
}

#[test]
fn two_dimensional_solve_with_three_points() {
    let g = Arc::new(build_grid::<f64>(8.0, 96, 48, SymmetryMode::Full2d).unwrap());
    let cfg = DivisorConfig::equatorial(vec![0.8, 0.8, 0.8]).unwrap();
    let bg = Background::new(g.clone(), cfg).unwrap();
    let div = bg.divisor_term(0.05, &[0.8, 0.8, 0.8]).unwrap();
    let gv = ScalarField::new(g.clone(), div.iter().map(|v| -v).collect()).unwrap();
    let prob = MAProblem::new(0.7, gv, Gauge::None).unwrap();
    let sol = newton_solve(&prob, &ScalarField::zeros(g.clone()), &NewtonOptions::default()).unwrap();
    assert!(sol.residual <= 1e-10);
    assert!(sol.linear_iterations > sol.iterations);
}
