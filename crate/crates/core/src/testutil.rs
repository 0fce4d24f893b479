//! Fixtures shared by the unit tests.

use rand::Rng;

use crate::geometry::System;
use crate::harness::{build_scenario, initial_placement, trial_rng, ExperimentConfig, Scheme};
use crate::linalg::{c, to_dvec, CMat, CVec, C64};
use crate::metrics::LpState;

/// Desk-scale system with a random feasible placement.
pub fn desk_system(seed: u64) -> System {
    sized_system(seed, 8, 4, 2)
}

pub fn sized_system(seed: u64, n_t: usize, n_r: usize, n_u: usize) -> System {
    let cfg = ExperimentConfig {
        n_t: Some(n_t),
        n_r: Some(n_r),
        n_u: Some(n_u),
        schemes: vec![Scheme::LpMa],
        ..Default::default()
    };
    let sc = build_scenario(&cfg, None).unwrap();
    let p = initial_placement(&sc, &mut trial_rng(seed, 0)).unwrap();
    System::new(sc, p).unwrap()
}

pub fn random_unit<R: Rng>(rng: &mut R, n: usize) -> CVec {
    let v = to_dvec((0..n).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect());
    let norm = v.norm();
    v / c(norm)
}

/// Random precoders at total power `power`, with unit `v` and `u`.
pub fn random_lp_state<R: Rng>(system: &System, power: f64, rng: &mut R) -> LpState {
    let sc = &system.scenario;
    let mut w: Vec<CMat> = (0..sc.n_users)
        .map(|_| CMat::from_fn(sc.n_t, sc.n_u, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)))
        .collect();
    let total: f64 = w.iter().map(|m| m.norm_squared()).sum();
    for m in &mut w {
        *m *= c((power / total).sqrt());
    }
    LpState { w, v: random_unit(rng, sc.n_t), u: random_unit(rng, sc.n_r) }
}
