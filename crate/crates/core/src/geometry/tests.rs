use std::f64::consts::PI;
use std::sync::Arc;

use super::*;

fn z2(ns: usize) -> Arc<SphereGrid<f64>> {
    Arc::new(build_grid::<f64>(12.0, ns, 1, SymmetryMode::S1Z2Invariant).unwrap())
}

#[test]
fn grid_constructor_contract() {
    let g = build_grid::<f64>(12.0, 257, 1, SymmetryMode::S1Z2Invariant).unwrap();
    assert_eq!(g.len(), 257);
    let g2 = build_grid::<f64>(12.0, 256, 512, SymmetryMode::Full2d).unwrap();
    assert_eq!(g2.len(), 256 * 512);
    assert!(build_grid::<f64>(-1.0, 257, 1, SymmetryMode::S1Invariant).is_err());
    assert!(build_grid::<f64>(12.0, 8, 1, SymmetryMode::S1Invariant).is_err());
    assert!(build_grid::<f64>(12.0, 64, 16, SymmetryMode::S1Invariant).is_err());
    assert!(build_grid::<f64>(12.0, 64, 4, SymmetryMode::Full2d).is_err());
}

#[test]
fn weights_are_positive_and_cover_the_chart() {
    for (ns, nphi, mode) in [(257, 1, SymmetryMode::S1Z2Invariant), (64, 24, SymmetryMode::Full2d)] {
        let g = build_grid::<f64>(12.0, ns, nphi, mode).unwrap();
        let total: f64 = (0..g.len()).map(|i| g.weight(i)).sum();
        assert!((0..g.len()).all(|i| g.weight(i) > 0.0));
        assert!((total - 2.0 * 12.0 * 2.0 * PI).abs() < 1e-10);
        let s = g.s_nodes();
        for j in 0..ns {
            assert_eq!(s[j], -s[ns - 1 - j]);
        }
    }
}

#[test]
fn reference_mass_and_value_at_equator() {
    let g = z2(1025);
    let rho0 = fubini_study(&g);
    assert!((mass(&rho0) - 4.0 * PI).abs() < 1e-10);
    let one = ScalarField::constant(g.clone(), 1.0);
    assert!((integrate(&one, &rho0) - 4.0 * PI).abs() < 1e-10);
    assert_eq!(rho0.values()[512], 1.0);
}

#[test]
fn reference_is_einstein() {
    let g = z2(1024);
    let rho0 = fubini_study(&g);
    let ric = ricci_density(&rho0).unwrap();
    for (i, (&a, &b)) in ric.values().iter().zip(rho0.values()).enumerate() {
        let exact = 1.0 / g.s_at(i).cosh().powi(2);
        assert!((a - b).abs() <= 1e-8 && (a - exact).abs() <= 1e-8);
    }
}

#[test]
fn differentiated_curvature_is_one_to_second_order() {
    let mut errs = vec![];
    for ns in [257usize, 513, 1025] {
        let g = build_grid::<f64>(12.0, ns, 1, SymmetryMode::S1Invariant).unwrap();
        let k = reference_curvature(&g);
        errs.push(k.iter().fold(0.0f64, |m, v| m.max((v - 1.0).abs())));
    }
    assert!(errs[2] < 5e-4, "{errs:?}");
    let order = (errs[1] / errs[2]).log2();
    assert!(order > 1.9, "order {order}, errors {errs:?}");
}

#[test]
fn ricci_of_a_football_density() {
    // rho = beta sech^2(beta s) has Gauss curvature beta
    let beta = 0.7;
    let mut errs = vec![];
    for ns in [513usize, 1025] {
        let g = build_grid::<f64>(12.0, ns, 1, SymmetryMode::S1Z2Invariant).unwrap();
        let g = Arc::new(g);
        let rho: Vec<f64> = g.s_nodes().iter().map(|s| beta / (beta * s).cosh().powi(2)).collect();
        let m = MetricDensity::new(g.clone(), rho.clone(), 1.0).unwrap();
        let ric = ricci_density(&m).unwrap();
        let mut e = 0.0f64;
        for i in 0..g.len() {
            if g.s_at(i).abs() < 8.0 {
                e = e.max((ric.values()[i] - beta * rho[i]).abs());
            }
        }
        errs.push(e);
    }
    assert!(errs[1] < 1e-4);
    assert!((errs[0] / errs[1]).log2() > 1.9);
}

#[test]
fn two_pole_section_norm() {
    let g = z2(257);
    let cfg = DivisorConfig::<f64>::two_pole(0.7).unwrap();
    let n = divisor_norm_squared(&g, &cfg, 0).unwrap();
    for i in 0..g.len() {
        let s = g.s_at(i);
        let z2 = (2.0 * s).exp();
        let direct = z2 / (1.0 + z2).powi(2);
        assert!((n.values()[i] - 0.25 / s.cosh().powi(2)).abs() < 1e-15);
        assert!((n.values()[i] - direct).abs() < 1e-15);
    }
    let g_odd = z2(257);
    let n = divisor_norm_squared(&g_odd, &cfg, 0).unwrap();
    assert!((n.max() - 0.25).abs() < 1e-15);
    assert!((n.values()[128] - 0.25).abs() < 1e-15);
}

#[test]
fn single_point_section_norm_and_curvature() {
    let g = Arc::new(build_grid::<f64>(12.0, 256, 64, SymmetryMode::Full2d).unwrap());
    let cfg = DivisorConfig::<f64>::equatorial(vec![0.8, 0.8, 0.8]).unwrap();
    let n = divisor_norm_squared(&g, &cfg, 0).unwrap();
    for i in 0..g.len() {
        let (s, phi) = (g.s_at(i), g.phi_at(i));
        let (x, y) = (s.exp() * phi.cos(), s.exp() * phi.sin());
        let direct = ((x - 1.0).powi(2) + y * y) / (2.0 * (1.0 + x * x + y * y));
        assert!((n.values()[i] - direct).abs() < 1e-12 * (1.0 + direct));
    }
    // away from the point, 1/2 Delta log|S|^2 = -lambda rho0 up to O(h^2)
    let (logs, mask) = log_divisor_norm(&g, &cfg, 0).unwrap();
    let lap = g.laplacian(&logs);
    for i in 0..g.len() {
        let r = g.rho0_at(i);
        let far = g.s_at(i).abs() < 6.0 && g.s_at(i).abs() > 1.5 && !mask[i];
        if far {
            let e = (0.5 * lap[i] + 0.5 * r).abs();
            assert!(e < 2e-2 * r + 1e-4, "node {i}: {e}");
        }
    }
}

#[test]
fn chi_epsilon_mass_is_independent_of_eps() {
    let g = z2(1024);
    let cfg = DivisorConfig::<f64>::two_pole(0.7).unwrap();
    for eps in [1.0, 0.1, 0.01, 1e-3, 1e-4] {
        let chi = chi_epsilon(&g, &cfg, 0, eps).unwrap();
        assert!((mass(&chi) - 4.0 * PI).abs() < 1e-8, "eps {eps}");
    }
    assert!(chi_epsilon(&g, &cfg, 0, 1.0).unwrap().is_positive());
    assert!(chi_epsilon(&g, &cfg, 0, 0.0).is_err());
    assert!(chi_epsilon(&g, &cfg, 0, -1.0).is_err());
}

#[test]
fn chi_epsilon_snc_mass_per_component() {
    let g = Arc::new(build_grid::<f64>(12.0, 128, 96, SymmetryMode::Full2d).unwrap());
    let cfg = DivisorConfig::<f64>::equatorial(vec![0.8, 0.8, 0.8]).unwrap();
    for i in 0..3 {
        for eps in [0.1, 0.01] {
            let chi = chi_epsilon(&g, &cfg, i, eps).unwrap();
            assert!((mass(&chi) - 2.0 * PI).abs() < 1e-8);
        }
    }
}

#[test]
fn chi_epsilon_converges_away_from_divisor() {
    let g = z2(1024);
    let cfg = DivisorConfig::<f64>::two_pole(0.7).unwrap();
    let tiny = chi_epsilon(&g, &cfg, 0, 1e-8).unwrap();
    let small = chi_epsilon(&g, &cfg, 0, 1e-6).unwrap();
    let i = 600; // s ~ 2.1, far from both poles
    let (logs, _) = log_divisor_norm(&g, &cfg, 0).unwrap();
    let limit = g.rho0_at(i) + 0.5 * g.laplacian(&logs)[i];
    assert!(limit.abs() < 1e-3);
    // the gap closes linearly in eps
    let (d_tiny, d_small) = (tiny.values()[i] - limit, small.values()[i] - limit);
    assert!(d_tiny.abs() < 1e-5);
    assert!((d_small / d_tiny - 100.0).abs() < 1.0, "{d_small} {d_tiny}");
}

#[test]
fn ricci_potential_of_reference_vanishes() {
    let g = z2(512);
    let h = ricci_potential(&fubini_study(&g)).unwrap();
    assert!(h.sup_norm() == 0.0);
}

#[test]
fn ricci_potential_of_perturbed_reference() {
    let g = Arc::new(build_grid::<f64>(12.0, 1024, 1, SymmetryMode::S1Invariant).unwrap());
    // density of omega0 + i ddbar(0.1 tanh s), evaluated in closed form
    let rho: Vec<f64> = g.s_nodes().iter().map(|s| (1.0 - 0.1 * s.tanh()) / s.cosh().powi(2)).collect();
    let omega = MetricDensity::new(g.clone(), rho, 1.0).unwrap();
    let h = ricci_potential(&omega).unwrap();
    assert!(h.sup_norm() > 1e-3);
    assert_eq!(h.max(), 0.0);
    let ric = ricci_density(&omega).unwrap();
    let lap = h.laplacian();
    let res = (0..g.len())
        .map(|i| (ric.values()[i] - omega.values()[i] - 0.5 * lap[i]).abs())
        .fold(0.0, f64::max);
    assert!(res < 1e-8, "residual {res}");
}

#[test]
fn ricci_potential_rejects_wrong_class() {
    let g = z2(256);
    let rho: Vec<f64> = (0..g.len()).map(|i| 2.0 * g.rho0_at(i)).collect();
    let m = MetricDensity::new(g.clone(), rho, 2.0).unwrap();
    assert!(matches!(ricci_potential(&m), Err(GeometryError::SolvabilityDefect { .. })));
}

#[test]
fn laplace_beltrami_and_oscillation_basics() {
    let g = z2(513);
    let rho0 = fubini_study(&g);
    let c = ScalarField::constant(g.clone(), 3.5);
    assert!(laplace_beltrami(&rho0, &c).sup_norm() == 0.0);
    let t = ScalarField::<f64>::from_fn(Arc::new(build_grid::<f64>(12.0, 513, 1, SymmetryMode::S1Invariant).unwrap()), |s, _| s.tanh());
    assert!((oscillation(&t) - 2.0 * 12f64.tanh()).abs() < 1e-15);
}

#[test]
fn laplace_beltrami_is_second_order() {
    // tanh s is a first eigenfunction: Delta tanh = -tanh
    let mut errs = vec![];
    for ns in [257usize, 513, 1025] {
        let g = Arc::new(build_grid::<f64>(12.0, ns, 1, SymmetryMode::S1Invariant).unwrap());
        let rho0 = fubini_study(&g);
        let f = ScalarField::<f64>::from_fn(g.clone(), |s, _| s.tanh());
        let lb = laplace_beltrami(&rho0, &f);
        let e = (0..g.len())
            .filter(|&i| g.s_at(i).abs() < 6.0)
            .map(|i| (lb.values()[i] + f.values()[i]).abs())
            .fold(0.0, f64::max);
        errs.push(e);
    }
    let o1 = (errs[0] / errs[1]).log2();
    let o2 = (errs[1] / errs[2]).log2();
    assert!(o1 > 1.9 && o2 > 1.9, "orders {o1} {o2}, errors {errs:?}");
}

#[test]
fn laplace_beltrami_2d_second_order() {
    // x1 = sech s cos phi is a first eigenfunction
    let mut errs = vec![];
    for (ns, nphi) in [(129usize, 32usize), (257, 64), (513, 128)] {
        let g = Arc::new(build_grid::<f64>(8.0, ns, nphi, SymmetryMode::Full2d).unwrap());
        let rho0 = fubini_study(&g);
        let f = ScalarField::<f64>::from_fn(g.clone(), |s, p| p.cos() / s.cosh());
        let lb = laplace_beltrami(&rho0, &f);
        let mut e = 0.0f64;
        for i in 0..g.len() {
            if g.s_at(i).abs() < 3.0 {
                e = e.max((lb.values()[i] + f.values()[i]).abs());
            }
        }
        errs.push(e);
    }
    assert!((errs[0] / errs[1]).log2() > 1.85 && (errs[1] / errs[2]).log2() > 1.9, "{errs:?}");
}

#[test]
fn divisor_validation() {
    assert!(DivisorConfig::<f64>::two_pole(1.2).is_err());
    assert!(DivisorConfig::<f64>::two_pole(0.0).is_err());
    assert!(DivisorConfig::new(
        vec![DivisorPoint::Pole0, DivisorPoint::PoleInf],
        vec![0.5, 0.5],
        vec![0.7, 0.8],
        DivisorMode::AnticanonicalSmooth
    )
    .is_err());
    assert!(DivisorConfig::new(
        vec![DivisorPoint::Pole0, DivisorPoint::Pole0],
        vec![0.5, 0.5],
        vec![0.7, 0.7],
        DivisorMode::Snc
    )
    .is_err());
    // mu = 1 - 3/2 (1 - 0.2) < 0
    assert!(DivisorConfig::<f64>::equatorial(vec![0.2, 0.2, 0.2]).is_err());
    let cfg = DivisorConfig::<f64>::equatorial(vec![0.8, 0.8, 0.8]).unwrap();
    assert!((cfg.mu() - 0.7).abs() < 1e-15);
    assert!(cfg.with_angles(&[0.1, 0.1, 0.1]).is_err());
    let g1 = build_grid::<f64>(12.0, 64, 1, SymmetryMode::S1Invariant).unwrap();
    assert!(cfg.check_grid(&g1).is_err());
    let two = DivisorConfig::<f64>::two_pole(0.7).unwrap();
    assert!(two.check_grid(&g1).is_err());
    assert!(two.check_grid(&build_grid::<f64>(12.0, 64, 1, SymmetryMode::S1Z2Invariant).unwrap()).is_ok());
}

#[test]
fn mass_is_conserved_for_potentials() {
    let g = z2(1024);
    // flat at the poles to O(rho0^2), as the Neumann closure expects
    let phi = ScalarField::<f64>::from_fn(g.clone(), |s, _| (0.3 * s.tanh() - 0.2) / s.cosh().powi(4));
    let m = potential_density(&phi);
    assert!(m.is_positive());
    assert!((mass(&m) - mass(&fubini_study(&g))).abs() < 1e-8 * 4.0 * PI);
}

#[test]
fn holder_quotient_of_constant_is_zero() {
    let g = z2(128);
    assert_eq!(holder_quotient(&ScalarField::constant(g.clone(), 2.0), 0.5), 0.0);
    let f = ScalarField::<f64>::from_fn(g, |s, _| s.tanh().powi(2));
    let q = holder_quotient(&f, 0.5);
    assert!(q.is_finite() && q > 0.0);
}

#[test]
fn single_precision_grid_works() {
    let g = Arc::new(build_grid::<f32>(12.0f32, 512, 1, SymmetryMode::S1Z2Invariant).unwrap());
    let rho0 = fubini_study(&g);
    assert!((mass(&rho0) - 4.0 * std::f32::consts::PI).abs() < 1e-4);
}
