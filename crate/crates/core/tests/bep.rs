use std::f64::consts::PI;

use proptest::prelude::*;
use sphardy::bep::{estimate_mode, solve_bep1, solve_bep2, solve_bep3_adjoint, ModePriors};
use sphardy::cli::noise_direction;
use sphardy::continuation::generate_pair;
use sphardy::grid::Cap;
use sphardy::harmonics::ScalarCoeffs;
use sphardy::locality::{build_context, LocalityContext};
use std::sync::OnceLock;

const N: usize = 12;

fn ctx() -> &'static LocalityContext {
    static CTX: OnceLock<LocalityContext> = OnceLock::new();
    CTX.get_or_init(|| build_context(Cap::new(PI / 3.0).unwrap(), N, 8, 1e-6).unwrap())
}

#[test]
fn bep1_beats_feasible_probes() {
    let c = ctx();
    let p = generate_pair(c, 1, 0.5).unwrap();
    let f = &p.phi + &(&noise_direction(N, 1) * 1e-2);
    let bound = 0.5 * p.psi.norm();
    let s = solve_bep1(c, &f, bound).unwrap();
    assert!(s.constraint_active);
    for seed in 0..20 {
        let q = generate_pair(c, 100 + seed, 0.4).unwrap();
        let scale = bound / q.psi.norm();
        for t in [0.25, 0.5, 1.0] {
            let probe = &q.phi * (scale * t);
            assert!((&probe - &f).norm() >= s.objective - 1e-12);
        }
        // blend of the optimum with a feasible probe stays feasible and is no better
        let mix = &(&s.phi_c * 0.5) + &(&q.phi * (0.5 * scale));
        assert!((&mix - &f).norm() >= s.objective - 1e-12);
    }
}

#[test]
fn bep1_on_zero_data() {
    let c = ctx();
    let s = solve_bep1(c, &ScalarCoeffs::zeros(N), 1.0).unwrap();
    assert_eq!(s.phi_c.norm(), 0.0);
    assert!(!s.constraint_active);
    assert!(solve_bep1(c, &ScalarCoeffs::zeros(N), -1.0).is_err());
    assert!(solve_bep1(c, &ScalarCoeffs::zeros(N), f64::NAN).is_err());
}

#[test]
fn bep2_zero_mode_and_range() {
    let c = ctx();
    let s = solve_bep2(c, &ScalarCoeffs::zeros(N), 1.0).unwrap();
    assert_eq!(s.h_norm, 0.0);
    assert_eq!(s.residual, 0.0);
    let e = ScalarCoeffs::unit(N, 2, 0);
    let mut last = f64::INFINITY;
    for cc in [0.1, 1.0, 10.0, 100.0] {
        let s = solve_bep2(c, &e, cc).unwrap();
        assert!(s.h_norm <= cc * (1.0 + 1e-10));
        assert!(s.residual <= last * (1.0 + 1e-12));
        last = s.residual;
    }
}

#[test]
fn noiseless_estimate_within_bound_and_bound_grows_with_priors() {
    let c = ctx();
    let p = generate_pair(c, 3, 0.5).unwrap();
    let priors = ModePriors {
        eps_noise: 0.0,
        norm_phi: p.phi.norm(),
        norm_tphi: p.psi.norm(),
    };
    for (n, m) in [(1, 0), (2, -1), (3, 3)] {
        let e = ScalarCoeffs::unit(N, n, m);
        let est = estimate_mode(c, &p.phi, &e, 100.0, priors).unwrap();
        assert!((est.estimate - p.psi.get(n, m)).abs() <= est.bound);
        let wider = ModePriors {
            norm_phi: 2.0 * priors.norm_phi,
            norm_tphi: 2.0 * priors.norm_tphi,
            eps_noise: 1e-3,
        };
        let est2 = estimate_mode(c, &p.phi, &e, 100.0, wider).unwrap();
        assert!(est2.bound >= est.bound);
    }
}

#[test]
fn bep3_zero_target_and_loose_bound() {
    let c = ctx();
    let s = solve_bep3_adjoint(c, &ScalarCoeffs::zeros(N), 1.0).unwrap();
    assert_eq!(s.psi_c.norm(), 0.0);
    let e = ScalarCoeffs::unit(N, 1, 0);
    let s = solve_bep3_adjoint(c, &e, 1e6).unwrap();
    assert!(s.objective <= 1e-6, "objective {}", s.objective);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn bep1_is_feasible_and_monotone(seed in 0u64..1000, noise in 1e-5f64..1e-1, k in 0.05f64..3.0) {
        let c = ctx();
        let p = generate_pair(c, seed, 0.5).unwrap();
        let f = &p.phi + &(&noise_direction(N, seed) * noise);
        let b = k * p.psi.norm();
        let s1 = solve_bep1(c, &f, b).unwrap();
        let s2 = solve_bep1(c, &f, 2.0 * b).unwrap();
        prop_assert!(s1.psi_c.norm() <= b * (1.0 + 1e-10));
        prop_assert!(s2.objective <= s1.objective * (1.0 + 1e-10));
        if s1.constraint_active {
            prop_assert!((s1.psi_c.norm() / b - 1.0).abs() <= 1e-8);
        }
    }
}
