use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nfisac_core::geometry::{build_sensing_channel, build_user_channel, project_to_region, SquareRegion};
use nfisac_core::harness::{build_scenario, initial_placement, trial_rng};
use nfisac_core::linalg::project_capped_spectraplex;
use nfisac_core::lp::{initial_lp_state, optimal_combiner_lp};
use nfisac_core::metrics::{kappa_l, kappa_z, rate_zf, rates_lp, rates_zf, sinr_lp, sinr_zf, wsr};
use nfisac_core::{ExperimentConfig, LpState, Preset, Scenario, System, Vec3, ZfState};

type CMat = DMatrix<Complex64>;
type CVec = DVector<Complex64>;

fn scenario() -> Scenario {
    build_scenario(&ExperimentConfig { preset: Preset::Power, ..Default::default() }, None).unwrap()
}

fn system(seed: u64) -> System {
    let sc = scenario();
    let p = initial_placement(&sc, &mut trial_rng(seed, 0)).unwrap();
    System::new(sc, p).unwrap()
}

fn cnum(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
}

fn unit(rng: &mut ChaCha8Rng, n: usize) -> CVec {
    let v = CVec::from_fn(n, |_, _| cnum(rng));
    let s = v.norm();
    v.map(|x| x / s)
}

fn lp_state(rng: &mut ChaCha8Rng, sc: &Scenario) -> LpState {
    let scale = rng.random::<f64>() * 2.0;
    let w = (0..sc.n_users).map(|_| CMat::from_fn(sc.n_t, sc.n_u, |_, _| cnum(rng) * scale)).collect();
    LpState { w, v: unit(rng, sc.n_t).map(|x| x * rng.random::<f64>()), u: unit(rng, sc.n_r) }
}

fn point_in(rng: &mut ChaCha8Rng, region: &SquareRegion) -> Vec3 {
    let (x0, x1) = region.x_bounds();
    let (y0, y1) = region.y_bounds();
    Vec3::new(x0 + (x1 - x0) * rng.random::<f64>(), y0 + (y1 - y0) * rng.random::<f64>(), region.center.z)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn channel_entries_have_unit_modulus(seed in any::<u64>()) {
        let sys = system(seed);
        let ch = &sys.channels;
        for (h, rho) in ch.h.iter().zip(&ch.rho) {
            for x in h.iter() {
                prop_assert!((x.norm() / rho - 1.0).abs() <= 1e-12);
            }
        }
        for x in ch.f_t.iter().chain(ch.f_r.iter()) {
            prop_assert!((x.norm() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn sensing_channel_is_rank_one(seed in any::<u64>()) {
        let sys = system(seed);
        let ch = &sys.channels;
        let mut s = ch.g.clone().singular_values().as_slice().to_vec();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let bound = 1e-10 * ch.rho_s * ((ch.n_t() * ch.n_r()) as f64).sqrt();
        prop_assert!(s[1] <= bound, "second singular value {} > {}", s[1], bound);
    }

    #[test]
    fn channels_invariant_under_common_translation(
        seed in any::<u64>(),
        dx in -50.0f64..50.0, dy in -50.0f64..50.0, dz in -50.0f64..50.0,
    ) {
        let sys = system(seed);
        let sc = &sys.scenario;
        let by = Vec3::new(dx, dy, dz);
        let shift = |pts: &[Vec3]| pts.iter().map(|p| p.translate(&by)).collect::<Vec<_>>();
        let t = shift(&sys.placement.t);
        for (k, q) in sys.placement.q.iter().enumerate() {
            let h = build_user_channel(&t, &shift(q), sys.channels.rho[k], sc.wavelength).unwrap();
            prop_assert!((&h - &sys.channels.h[k]).norm() <= 1e-9 * h.norm());
        }
        let (_, _, g) = build_sensing_channel(
            &t, &shift(&sys.channels.rx), &sc.target.translate(&by), sys.channels.rho_s, sc.wavelength,
        ).unwrap();
        prop_assert!((&g - &sys.channels.g).norm() <= 1e-9 * g.norm());
    }

    #[test]
    fn region_projection_is_idempotent(x in -40.0f64..40.0, y in -40.0f64..40.0, z in -5.0f64..5.0) {
        let sc = scenario();
        for region in std::iter::once(&sc.tx_region).chain(&sc.user_regions) {
            let once = project_to_region(&Vec3::new(x, y, z), region);
            prop_assert!(region.contains(&once, 0.0));
            prop_assert_eq!(project_to_region(&once, region), once);
        }
    }

    #[test]
    fn rates_are_non_negative(seed in any::<u64>()) {
        let sys = system(seed);
        let sc = &sys.scenario;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a);
        let st = lp_state(&mut rng, sc);
        prop_assert!(rates_lp(&sys.channels, &st, sc.noise_user).unwrap().iter().all(|r| *r >= 0.0));
        let zf = ZfState::new(&sys.channels, sc.p_max, st.v.clone(), st.u.clone()).unwrap();
        prop_assert!(rates_zf(&sys.channels, &zf, sc.noise_user).unwrap().iter().all(|r| *r >= 0.0));
    }

    #[test]
    fn zf_rate_ignores_other_users(seed in any::<u64>()) {
        // Moving user 1 changes the stacked channel; evaluating user 0 with a
        // fixed beta must not see it.
        let mut sys = system(seed);
        let sc = sys.scenario.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = unit(&mut rng, sc.n_t);
        let zf = ZfState::new(&sys.channels, sc.p_max, v.clone(), unit(&mut rng, sc.n_r)).unwrap();
        let before = rate_zf(&sys.channels.h[0], zf.beta, &v, sc.noise_user).unwrap();
        let q1 = (0..sc.n_u).map(|_| point_in(&mut rng, &sc.user_regions[1])).collect();
        sys.set_user_positions(1, q1).unwrap();
        prop_assert!(!zf.is_fresh(&sys.channels));
        let after = rate_zf(&sys.channels.h[0], zf.beta, &v, sc.noise_user).unwrap();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn combiner_update_leaves_wsr_unchanged(seed in any::<u64>()) {
        let sys = system(seed);
        let sc = &sys.scenario;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut st = lp_state(&mut rng, sc);
        let before = wsr(&sc.weights, &rates_lp(&sys.channels, &st, sc.noise_user).unwrap()).unwrap();
        st.u = optimal_combiner_lp(&sys.channels, &st.w, sc.noise_radar).unwrap();
        let after = wsr(&sc.weights, &rates_lp(&sys.channels, &st, sc.noise_user).unwrap()).unwrap();
        prop_assert!((before - after).abs() <= 1e-12);
        prop_assert!((st.u.norm() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn spectraplex_projection_is_feasible_and_idempotent(seed in any::<u64>(), cap in 0.1f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = CMat::from_fn(4, 4, |_, _| cnum(&mut rng) * 3.0);
        let h = (&a + a.adjoint()) * Complex64::new(0.5, 0.0);
        let p = project_capped_spectraplex(&h, cap);
        let eig = p.clone().symmetric_eigenvalues();
        prop_assert!(eig.iter().all(|x| *x >= -1e-12));
        prop_assert!(p.trace().re <= cap * (1.0 + 1e-12));
        prop_assert!((project_capped_spectraplex(&p, cap) - &p).norm() <= 1e-10);
    }

    #[test]
    fn placement_is_seed_deterministic(seed in any::<u64>(), trial in 0u64..1000) {
        let sc = scenario();
        let a = initial_placement(&sc, &mut trial_rng(seed, trial)).unwrap();
        let b = initial_placement(&sc, &mut trial_rng(seed, trial)).unwrap();
        prop_assert!(a.is_feasible(&sc, 0.0));
        prop_assert_eq!(a, b);
    }
}

#[test]
fn moving_antennas_bumps_channel_version() {
    let mut sys = system(4);
    let v0 = sys.channels.version;
    let q = sys.placement.q[0].clone();
    sys.set_user_positions(0, q).unwrap();
    assert!(sys.channels.version > v0);
    let v1 = sys.channels.version;
    let t = sys.placement.t.clone();
    sys.set_bs_positions(t).unwrap();
    assert!(sys.channels.version > v1);
}

#[test]
fn initial_lp_state_meets_sensing_threshold() {
    for seed in 0..10 {
        let sys = system(seed);
        let sc = &sys.scenario;
        let st = initial_lp_state(&sys).unwrap();
        assert!(st.power() <= sc.p_max * (1.0 + 1e-9));
        assert!(sinr_lp(&sys.channels, &st, sc.noise_radar).unwrap() >= sc.gamma0 * (1.0 - 1e-6));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn kappa_sign_matches_sinr_threshold(seed in any::<u64>()) {
        let sys = system(seed);
        let sc = &sys.scenario;
        let ch = &sys.channels;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let st = lp_state(&mut rng, sc);
        let gamma0 = sinr_lp(ch, &st, sc.noise_radar).unwrap() * (0.5 + rng.random::<f64>());
        let kl = kappa_l(ch, &st.w, &st.v, &st.u, gamma0, sc.noise_radar);
        prop_assert_eq!(kl <= 0.0, sinr_lp(ch, &st, sc.noise_radar).unwrap() >= gamma0);

        let zf = ZfState::new(ch, sc.p_max, st.v.clone(), st.u.clone()).unwrap();
        let gamma0 = sinr_zf(ch, &zf, sc.noise_radar).unwrap() * (0.5 + rng.random::<f64>());
        let kz = kappa_z(ch, &zf, gamma0, sc.noise_radar).unwrap();
        prop_assert_eq!(kz <= 0.0, sinr_zf(ch, &zf, sc.noise_radar).unwrap() >= gamma0);
    }
}
