//! Zero-forcing stack: combiner, sensing-beam SCA, augmented-Lagrangian
//! moves of each user's antennas and of the base-station antennas, and the
//! alternating loop.
//!
//! Every antenna move changes `H_e`, hence `P_e` and `β_e`; the state carries
//! the channel version it was computed for and is rebuilt on every sample.

use crate::error::{Error, Result};
use crate::geometry::{Placement, Scenario, SquareRegion, System, Vec3};
use crate::linalg::{c, identity, inv_hpd, regularization_count, trace_re, CMat, CVec};
use crate::lp::{
    admissible, budget, grad_bs_kappa_fixed, optimal_combiner, record, sense_beam_sca, AlgoParams, BeamUpdate, Evaluation,
    PositionMode, RunOutcome,
};
use crate::metrics::{kappa_z, rates_zf, sensing_power, sinr_zf, wsr, Block, TraceRecord, ZfState};
use crate::positions::{accumulate_bs_gradient, alm, user_gradient, LoopStats, PositionBlock, Sample};
use crate::subsolver::CovarianceSubproblem;

pub fn evaluate_zf(system: &System, state: &ZfState) -> Result<Evaluation> {
    let sc = &system.scenario;
    let ch = &system.channels;
    let rates = rates_zf(ch, state, sc.noise_user)?;
    Ok(Evaluation {
        wsr: wsr(&sc.weights, &rates)?,
        gamma_s: sinr_zf(ch, state, sc.noise_radar)?,
        kappa: kappa_z(ch, state, sc.gamma0, sc.noise_radar)? / sc.noise_radar,
        power: crate::linalg::frob2(&state.p_e),
        sensing_power: sensing_power(ch, &state.v, &state.u),
        rates,
    })
}

pub fn optimal_combiner_zf(system: &System, state: &ZfState) -> Result<CVec> {
    if !state.is_fresh(&system.channels) {
        return Err(Error::Contract("combiner requested with a stale zero-forcing precoder".into()));
    }
    optimal_combiner(&system.channels, std::slice::from_ref(&state.p_e), system.scenario.noise_radar)
}

/// Beam on the target at full power and the optimal combiner; fails if the
/// fixed zero-forcing leakage already violates the sensing constraint.
pub fn initial_zf_state(system: &System) -> Result<ZfState> {
    let ch = &system.channels;
    let sc = &system.scenario;
    let v = &ch.f_t / c((ch.n_t() as f64).sqrt());
    let u = &ch.f_r / c((ch.n_r() as f64).sqrt());
    let mut st = ZfState::new(ch, sc.p_max, v, u)?;
    st.u = optimal_combiner_zf(system, &st)?;
    if kappa_z(ch, &st, sc.gamma0, sc.noise_radar)? > 0.0 {
        return Err(Error::InfeasibleSubproblem("zero-forcing leakage violates the sensing constraint at the start".into()));
    }
    Ok(st)
}

pub fn optimize_sense_beam_zf(system: &System, state: &ZfState, params: &AlgoParams) -> Result<BeamUpdate> {
    let sc = &system.scenario;
    let b = budget(sc);
    if !state.is_fresh(&system.channels) {
        return Err(Error::Contract("beam update requested with a stale zero-forcing precoder".into()));
    }
    sense_beam_sca(&state.v, &sc.weights, params, |v_n| {
        CovarianceSubproblem::zf(&system.channels, &state.p_e, state.beta, &state.u, v_n, &sc.weights, params.zeta, &b)
    })
}

/// Sensitivities `M_k` (one `N_t × N_u` matrix per user) of a scalar `f`
/// with `df = 2 Re Σ_k Tr(M_k dH_k)`.
struct Sensitivity {
    per_user: Vec<CMat>,
}

/// Quantities shared by the rate and constraint sensitivities.
struct ZfWork {
    he: CMat,
    s_inv: CMat,
    /// `T = Tr(S^{-1})`.
    t: f64,
    /// `B_e = H_eᴴ S^{-2}`.
    b_e: CMat,
    n_u: usize,
}

impl ZfWork {
    fn new(system: &System, state: &ZfState) -> Result<Self> {
        if !state.is_fresh(&system.channels) {
            return Err(Error::Contract("gradient requested with a stale zero-forcing precoder".into()));
        }
        let he = system.channels.stacked();
        let s_inv = inv_hpd(&(&he * he.adjoint()))?;
        let t = trace_re(&s_inv);
        let b_e = he.adjoint() * &s_inv * &s_inv;
        Ok(Self { he, s_inv, t, b_e, n_u: system.scenario.n_u })
    }

    fn split(&self, m_e: &CMat) -> Vec<CMat> {
        let k = self.he.nrows() / self.n_u;
        (0..k).map(|i| m_e.columns(i * self.n_u, self.n_u).into_owned()).collect()
    }

    /// `dβ² = 2 Re Tr(P T^{-2} B_e dH_e)`; returns `P T^{-2} B_e`.
    fn dbeta2(&self, p_max: f64) -> CMat {
        &self.b_e * c(p_max / (self.t * self.t))
    }
}

/// Sensitivity of `Σ_u w_u R_{Z,u}`.
fn wsr_sensitivity(system: &System, state: &ZfState, weights: &[f64], work: &ZfWork) -> Result<Sensitivity> {
    let sc = &system.scenario;
    let beta2 = state.beta * state.beta;
    let mut coef = 0.0;
    let mut direct = Vec::with_capacity(weights.len());
    for (k, h) in system.channels.h.iter().enumerate() {
        let hv = h * &state.v;
        let n = h.nrows();
        let e = identity(n) * c(sc.noise_user) + &hv * hv.adjoint();
        let f = &e + identity(n) * c(beta2);
        let f_inv = inv_hpd(&f)?;
        coef += weights[k] * trace_re(&f_inv);
        let diff = f_inv - inv_hpd(&e)?;
        direct.push(&state.v * hv.adjoint() * diff * c(weights[k]));
    }
    let shared = work.split(&(work.dbeta2(sc.p_max) * c(coef)));
    let per_user = shared.into_iter().zip(direct).map(|(a, b)| a + b).collect();
    Ok(Sensitivity { per_user })
}

/// Sensitivity of `κ_z` through `H_e` (the echo path `G` is separate).
///
/// With `g = Gᴴu`, `y = H_e g`, `a = S^{-1}y`, `b = S^{-2}y` and
/// `q = ‖a‖²`, `κ_z = γ₀β²q − |vᴴg|² + γ₀σ_z²‖u‖²`, and
/// `dq = 2 Re Tr((g bᴴ − H_eᴴ(b aᴴ + a bᴴ)) dH_e)`.
fn kappa_sensitivity(system: &System, state: &ZfState, work: &ZfWork) -> Sensitivity {
    let sc = &system.scenario;
    let g = system.channels.g.adjoint() * &state.u;
    let y = &work.he * &g;
    let a = &work.s_inv * &y;
    let b = &work.s_inv * &a;
    let q = a.norm_squared();
    let m_q = &g * b.adjoint() - work.he.adjoint() * (&b * a.adjoint() + &a * b.adjoint());
    let m_e = (work.dbeta2(sc.p_max) * c(q) + m_q * c(state.beta * state.beta)) * c(sc.gamma0);
    Sensitivity { per_user: work.split(&m_e) }
}

fn weighted_user_grad(system: &System, s: &Sensitivity, k: usize) -> Vec<f64> {
    let p = &system.placement;
    user_gradient(&system.channels.h[k], &s.per_user[k], &p.t, &p.q[k], system.scenario.wavelength)
}

fn weighted_bs_grad(system: &System, s: &Sensitivity) -> Vec<f64> {
    let p = &system.placement;
    let mut out = vec![0.0; 2 * p.t.len()];
    for (k, m) in s.per_user.iter().enumerate() {
        accumulate_bs_gradient(&mut out, &system.channels.h[k], m, &p.t, &p.q[k], system.scenario.wavelength);
    }
    out
}

/// Gradient of `Σ_u weights[u]·R_{Z,u}` over user `k`'s antennas, with `P_e`
/// and `β_e` re-derived from the moved channels.
pub fn grad_user_rates_zf(system: &System, state: &ZfState, weights: &[f64], k: usize) -> Result<Vec<f64>> {
    let work = ZfWork::new(system, state)?;
    let s = wsr_sensitivity(system, state, weights, &work)?;
    Ok(weighted_user_grad(system, &s, k))
}

/// Gradient of `κ_z` over user `k`'s antennas.
pub fn grad_user_kappa_z(system: &System, state: &ZfState, k: usize) -> Result<Vec<f64>> {
    let work = ZfWork::new(system, state)?;
    Ok(weighted_user_grad(system, &kappa_sensitivity(system, state, &work), k))
}

/// Gradient of `Σ_u weights[u]·R_{Z,u}` over the transmit antennas.
pub fn grad_bs_rates_zf(system: &System, state: &ZfState, weights: &[f64]) -> Result<Vec<f64>> {
    let work = ZfWork::new(system, state)?;
    let s = wsr_sensitivity(system, state, weights, &work)?;
    Ok(weighted_bs_grad(system, &s))
}

/// Gradient of `κ_z` over the transmit antennas: through `H_e` (hence `P_e`)
/// and through the target response `f_t`.
pub fn grad_bs_kappa_z(system: &System, state: &ZfState) -> Result<Vec<f64>> {
    let work = ZfWork::new(system, state)?;
    let mut g = weighted_bs_grad(system, &kappa_sensitivity(system, state, &work));
    let cov = &state.p_e * state.p_e.adjoint();
    let echo = grad_bs_kappa_fixed(system, &cov, &state.v, &state.u, system.scenario.gamma0);
    for (a, b) in g.iter_mut().zip(echo) {
        *a += b;
    }
    Ok(g)
}

fn lagrangian_grad(gw: Vec<f64>, gk: Vec<f64>, eta: f64, p: f64, kappa: f64) -> Vec<f64> {
    gw.iter().zip(&gk).map(|(a, b)| -a + (eta + p * kappa) * b).collect()
}

/// Gradient of `L(q_k) = −WSR + ηκ + ½pκ²` with `κ` normalized by `σ_z²`.
pub fn grad_user_zf(system: &System, state: &ZfState, k: usize, eta: f64, p: f64) -> Result<Vec<f64>> {
    let sc = &system.scenario;
    let gw = grad_user_rates_zf(system, state, &sc.weights, k)?;
    let gk: Vec<f64> = grad_user_kappa_z(system, state, k)?.into_iter().map(|x| x / sc.noise_radar).collect();
    let kappa = kappa_z(&system.channels, state, sc.gamma0, sc.noise_radar)? / sc.noise_radar;
    Ok(lagrangian_grad(gw, gk, eta, p, kappa))
}

/// Gradient of `L(t)`, as [`grad_user_zf`] for the transmit antennas.
pub fn grad_bs_zf(system: &System, state: &ZfState, eta: f64, p: f64) -> Result<Vec<f64>> {
    let sc = &system.scenario;
    let gw = grad_bs_rates_zf(system, state, &sc.weights)?;
    let gk: Vec<f64> = grad_bs_kappa_z(system, state)?.into_iter().map(|x| x / sc.noise_radar).collect();
    let kappa = kappa_z(&system.channels, state, sc.gamma0, sc.noise_radar)? / sc.noise_radar;
    Ok(lagrangian_grad(gw, gk, eta, p, kappa))
}

/// Which array a zero-forcing position block moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Target {
    User(usize),
    Bs,
}

struct ZfBlock {
    system: System,
    state: ZfState,
    target: Target,
}

impl PositionBlock for ZfBlock {
    fn points(&self) -> Vec<Vec3> {
        match self.target {
            Target::User(k) => self.system.placement.q[k].clone(),
            Target::Bs => self.system.placement.t.clone(),
        }
    }
    fn region(&self) -> SquareRegion {
        match self.target {
            Target::User(k) => self.system.scenario.user_regions[k],
            Target::Bs => self.system.scenario.tx_region,
        }
    }
    fn d_min(&self) -> f64 {
        self.system.scenario.d_min
    }
    fn sample(&mut self, points: &[Vec3]) -> Result<Sample> {
        match self.target {
            Target::User(k) => self.system.set_user_positions(k, points.to_vec())?,
            Target::Bs => self.system.set_bs_positions(points.to_vec())?,
        }
        self.state.refresh(&self.system.channels, self.system.scenario.p_max)?;
        let e = evaluate_zf(&self.system, &self.state)?;
        Ok(Sample { value: e.wsr, kappa: e.kappa })
    }
    fn gradients(&mut self) -> Result<(Vec<f64>, Vec<f64>)> {
        let sc = &self.system.scenario;
        let (gw, gk) = match self.target {
            Target::User(k) => (
                grad_user_rates_zf(&self.system, &self.state, &sc.weights, k)?,
                grad_user_kappa_z(&self.system, &self.state, k)?,
            ),
            Target::Bs => (grad_bs_rates_zf(&self.system, &self.state, &sc.weights)?, grad_bs_kappa_z(&self.system, &self.state)?),
        };
        Ok((gw, gk.into_iter().map(|x| x / sc.noise_radar).collect()))
    }
}

/// Augmented-Lagrangian move of user `k`'s antennas against the full
/// weighted sum rate. `eta` persists across calls within a run.
pub fn optimize_user_positions_alm_zf(
    system: &System,
    state: &ZfState,
    k: usize,
    params: &AlgoParams,
    eta: &mut f64,
) -> Result<(Vec<Vec3>, LoopStats)> {
    let mut block = ZfBlock { system: system.clone(), state: state.clone(), target: Target::User(k) };
    let mut stats = LoopStats::default();
    alm(&mut block, eta, params.alpha0, params, &mut stats)?;
    Ok((block.points(), stats))
}

pub fn optimize_bs_positions_alm_zf(
    system: &System,
    state: &ZfState,
    params: &AlgoParams,
    eta: &mut f64,
) -> Result<(Vec<Vec3>, LoopStats)> {
    let mut block = ZfBlock { system: system.clone(), state: state.clone(), target: Target::Bs };
    let mut stats = LoopStats::default();
    alm(&mut block, eta, params.nu0, params, &mut stats)?;
    Ok((block.points(), stats))
}

struct ZfRun {
    system: System,
    state: ZfState,
    eval: Evaluation,
    trace: Vec<TraceRecord>,
    rejected: usize,
    failures: Vec<String>,
    params: AlgoParams,
    errors: usize,
    blocks: usize,
}

impl ZfRun {
    fn attempt(&mut self, iteration: usize, block: Block, candidate: Result<(System, ZfState)>) {
        self.blocks += 1;
        let outcome = candidate.and_then(|(sys, st)| {
            let e = evaluate_zf(&sys, &st)?;
            Ok((sys, st, e))
        });
        match outcome {
            Ok((sys, st, e)) if admissible(&sys, &self.eval, &e, &self.params) => {
                self.trace.push(record(iteration, block, &e, true));
                self.system = sys;
                self.state = st;
                self.eval = e;
            }
            Ok(_) => {
                self.rejected += 1;
                self.trace.push(record(iteration, block, &self.eval, false));
            }
            Err(err) => {
                self.errors += 1;
                self.failures.push(format!("iteration {iteration}, {block:?}: {err}"));
                self.trace.push(record(iteration, block, &self.eval, false));
            }
        }
    }

    fn moved(&self, positions: Result<(Vec<Vec3>, LoopStats)>, target: Target) -> Result<(System, ZfState)> {
        let (pts, _) = positions?;
        let mut sys = self.system.clone();
        match target {
            Target::User(k) => sys.set_user_positions(k, pts)?,
            Target::Bs => sys.set_bs_positions(pts)?,
        }
        let mut st = self.state.clone();
        st.refresh(&sys.channels, sys.scenario.p_max)?;
        Ok((sys, st))
    }
}

/// Alternating optimization for zero forcing. Block order per outer
/// iteration: combiner, sensing beam, each user's antennas, base-station
/// antennas (positions only in [`PositionMode::Movable`]).
pub fn run_zf(scenario: &Scenario, placement: &Placement, params: &AlgoParams, mode: PositionMode) -> Result<RunOutcome<ZfState>> {
    params.validate()?;
    let reg0 = regularization_count();
    if !placement.is_feasible(scenario, 1e-12) {
        return Err(Error::Placement("initial placement violates regions or spacing".into()));
    }
    let system = System::new(scenario.clone(), placement.clone())?;
    let state = initial_zf_state(&system)?;
    let eval = evaluate_zf(&system, &state)?;
    let mut run = ZfRun {
        trace: vec![record(0, Block::Init, &eval, true)],
        system,
        state,
        eval,
        rejected: 0,
        failures: Vec::new(),
        params: *params,
        errors: 0,
        blocks: 0,
    };
    let mut rank_ratios = Vec::new();
    let mut rank_flags = 0;
    let mut etas = vec![0.0; scenario.n_users + 1];
    let mut converged = false;
    let mut iterations = 0;
    let mut failed_loops = 0;
    for it in 1..=params.max_outer {
        iterations = it;
        run.errors = 0;
        run.blocks = 0;
        let start = run.eval.wsr;

        let cand = optimal_combiner_zf(&run.system, &run.state)
            .map(|u| (run.system.clone(), ZfState { u, ..run.state.clone() }));
        run.attempt(it, Block::Combiner, cand);

        let beam = optimize_sense_beam_zf(&run.system, &run.state, params);
        if let Ok(b) = &beam {
            rank_ratios.push(b.rank_ratio);
            rank_flags += usize::from(b.flagged);
        }
        let cand = beam.map(|b| (run.system.clone(), ZfState { v: b.v, ..run.state.clone() }));
        run.attempt(it, Block::Beam, cand);

        if mode == PositionMode::Movable {
            for k in 0..scenario.n_users {
                let pos = optimize_user_positions_alm_zf(&run.system, &run.state, k, params, &mut etas[k]);
                let cand = run.moved(pos, Target::User(k));
                run.attempt(it, Block::User(k), cand);
            }
            let pos = optimize_bs_positions_alm_zf(&run.system, &run.state, params, &mut etas[scenario.n_users]);
            let cand = run.moved(pos, Target::Bs);
            run.attempt(it, Block::Bs, cand);
        }

        if run.errors == run.blocks {
            failed_loops += 1;
            if failed_loops >= 2 {
                return Err(Error::numerical(format!(
                    "every block failed in two consecutive iterations; last: {}",
                    run.failures.last().cloned().unwrap_or_default()
                )));
            }
        } else {
            failed_loops = 0;
        }
        if (run.eval.wsr - start).abs() < params.eps_f {
            converged = true;
            break;
        }
    }
    Ok(RunOutcome {
        state: run.state,
        system: run.system,
        trace: run.trace,
        iterations,
        converged,
        rank_ratios,
        rank_flags,
        rejected: run.rejected,
        failures: run.failures,
        regularizations: regularization_count() - reg0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::trial_rng;
    use crate::linalg::C64;
    use crate::metrics::{zf_precoder, ZF_CONDITION_LIMIT};
    use crate::testutil::{desk_system, random_unit, sized_system};

    fn random_state(system: &System, seed: u64) -> ZfState {
        let mut rng = trial_rng(seed, 5);
        let sc = &system.scenario;
        ZfState::new(&system.channels, sc.p_max, random_unit(&mut rng, sc.n_t), random_unit(&mut rng, sc.n_r)).unwrap()
    }

    #[test]
    fn combiner_beats_random_search() {
        for seed in 0..3 {
            let sys = desk_system(seed);
            let st = random_state(&sys, seed);
            let u = optimal_combiner_zf(&sys, &st).unwrap();
            let noise = sys.scenario.noise_radar;
            let best = crate::metrics::sinr_zf(&sys.channels, &ZfState { u, ..st.clone() }, noise).unwrap();
            let mut rng = trial_rng(seed, 77);
            for _ in 0..2000 {
                let r = random_unit(&mut rng, sys.scenario.n_r);
                let s = crate::metrics::sinr_zf(&sys.channels, &ZfState { u: r, ..st.clone() }, noise).unwrap();
                assert!(best >= s * (1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn combiner_without_precoder_matches_target_response() {
        let sys = desk_system(1);
        let u = optimal_combiner(&sys.channels, &[CMat::zeros(8, 4)], 1e-10).unwrap();
        assert!((&u - &sys.channels.f_r / c(2.0)).norm() < 1e-12);
    }

    #[test]
    fn combiner_follows_target_phase() {
        let sys = desk_system(2);
        let st = random_state(&sys, 2);
        let u = optimal_combiner_zf(&sys, &st).unwrap();
        let phase = C64::from_polar(1.0, 0.7);
        let mut rotated = sys.clone();
        rotated.channels.f_r *= phase;
        rotated.channels.g *= phase;
        let st2 = ZfState { version: rotated.channels.version, ..st };
        let u2 = optimal_combiner_zf(&rotated, &st2).unwrap();
        assert!((u2 - u * phase).norm() < 1e-12);
    }

    #[test]
    fn stale_state_is_rejected() {
        let mut sys = desk_system(3);
        let st = random_state(&sys, 3);
        let q = sys.placement.q[0].clone();
        sys.set_user_positions(0, q).unwrap();
        assert!(matches!(grad_user_rates_zf(&sys, &st, &[0.5, 0.5], 0), Err(Error::Contract(_))));
        assert!(matches!(optimal_combiner_zf(&sys, &st), Err(Error::Contract(_))));
        assert!(matches!(grad_bs_kappa_z(&sys, &st), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_weights_and_multipliers_give_zero_gradient() {
        let mut sys = desk_system(4);
        sys.scenario.weights = vec![0.0, 0.0];
        let st = random_state(&sys, 4);
        assert!(grad_user_zf(&sys, &st, 1, 0.0, 0.0).unwrap().iter().all(|g| *g == 0.0));
        assert!(grad_bs_zf(&sys, &st, 0.0, 0.0).unwrap().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn kappa_gradient_zero_without_beam_or_threshold() {
        let mut sys = desk_system(5);
        sys.scenario.gamma0 = 0.0;
        let mut st = random_state(&sys, 5);
        st.v = CVec::zeros(8);
        assert!(grad_bs_kappa_z(&sys, &st).unwrap().iter().all(|g| *g == 0.0));
        assert!(grad_user_kappa_z(&sys, &st, 0).unwrap().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn user_gradient_vanishes_for_aligned_x() {
        let mut cfg_sys = sized_system(0, 1, 4, 1);
        cfg_sys.scenario.n_users = 1;
        cfg_sys.scenario.user_regions.truncate(1);
        cfg_sys.scenario.weights = vec![1.0];
        cfg_sys.placement.q.truncate(1);
        let q = cfg_sys.placement.q[0][0];
        cfg_sys.placement.t = vec![Vec3::new(q.x, -2.0, 0.0)];
        let sys = System::new(cfg_sys.scenario.clone(), cfg_sys.placement.clone()).unwrap();
        let st = random_state(&sys, 0);
        assert_eq!(grad_user_rates_zf(&sys, &st, &[1.0], 0).unwrap()[0], 0.0);
        assert_eq!(grad_user_kappa_z(&sys, &st, 0).unwrap()[0], 0.0);
    }

    #[test]
    fn sensing_term_x_vanishes_under_target() {
        let mut sys = desk_system(6);
        let mut t = sys.placement.t.clone();
        t[2].x = sys.scenario.target.x;
        sys.set_bs_positions(t).unwrap();
        let st = random_state(&sys, 6);
        let cov = &st.p_e * st.p_e.adjoint();
        let g = grad_bs_kappa_fixed(&sys, &cov, &st.v, &st.u, sys.scenario.gamma0);
        assert_eq!(g[4], 0.0);
    }

    #[test]
    fn rate_gradients_are_translation_invariant() {
        for seed in 0..5 {
            let sys = desk_system(seed);
            let st = random_state(&sys, seed);
            let w = [0.3, 0.7];
            let gt = grad_bs_rates_zf(&sys, &st, &w).unwrap();
            for axis in 0..2 {
                let mut total: f64 = gt.iter().skip(axis).step_by(2).sum();
                let mut scale = total.abs();
                for k in 0..2 {
                    let gu = grad_user_rates_zf(&sys, &st, &w, k).unwrap();
                    let s: f64 = gu.iter().skip(axis).step_by(2).sum();
                    total += s;
                    scale += s.abs();
                }
                assert!(total.abs() <= 1e-8 * (scale + 1.0), "{total} {scale}");
            }
        }
    }

    #[test]
    fn beam_update_is_feasible_ascent() {
        for seed in 0..3 {
            let sys = desk_system(seed);
            let st = initial_zf_state(&sys).unwrap();
            let b = optimize_sense_beam_zf(&sys, &st, &AlgoParams::default()).unwrap();
            assert!(b.trace.windows(2).all(|p| p[1] >= p[0] - 1e-9), "{:?}", b.trace);
            let next = ZfState { v: b.v, ..st.clone() };
            let e = evaluate_zf(&sys, &next).unwrap();
            assert!(e.kappa <= 1e-8);
            assert!(e.wsr >= evaluate_zf(&sys, &st).unwrap().wsr - 1e-9);
        }
    }

    #[test]
    fn beam_with_huge_precoder_gain_follows_the_target() {
        // With β_e large the rates barely react to v, so the update is
        // driven by feasibility and the rank penalty.
        let mut sys = desk_system(7);
        sys.scenario.noise_user = 1e-30;
        sys.scenario.gamma0 = 0.1;
        let st = initial_zf_state(&sys).unwrap();
        let b = optimize_sense_beam_zf(&sys, &st, &AlgoParams::default()).unwrap();
        assert!(b.rank_ratio >= 0.99);
        assert!(b.trace.windows(2).all(|p| p[1] >= p[0] - 1e-9));
    }

    #[test]
    fn user_move_refreshes_precoder_and_keeps_spacing() {
        let sys = desk_system(8);
        let st = initial_zf_state(&sys).unwrap();
        let mut eta = 0.0;
        let (q, _) = optimize_user_positions_alm_zf(&sys, &st, 0, &AlgoParams::default(), &mut eta).unwrap();
        let mut moved = sys.clone();
        moved.set_user_positions(0, q).unwrap();
        assert!(moved.placement.is_feasible(&sys.scenario, 1e-12));
        assert!(!st.is_fresh(&moved.channels));
        let mut st2 = st.clone();
        st2.refresh(&moved.channels, 1.0).unwrap();
        let (p_e, beta) = zf_precoder(&moved.channels, 1.0).unwrap();
        assert!((&st2.p_e - p_e).norm() <= 1e-12 * st2.p_e.norm());
        assert_eq!(st2.beta, beta);
    }

    #[test]
    fn run_is_monotone_and_keeps_identity() {
        let sys = desk_system(11);
        let out = run_zf(&sys.scenario, &sys.placement, &AlgoParams::default(), PositionMode::Movable).unwrap();
        assert!(out.trace.windows(2).all(|p| p[1].wsr >= p[0].wsr - 1e-6));
        assert!(out.converged && out.iterations <= 30);
        let st = &out.state;
        assert!(st.is_fresh(&out.system.channels));
        let id = out.system.channels.stacked() * &st.p_e;
        for i in 0..id.nrows() {
            for j in 0..id.ncols() {
                let expect = if i == j { st.beta } else { 0.0 };
                assert!((id[(i, j)] - c(expect)).norm() <= 1e-8 * st.beta);
            }
        }
        assert!((st.p_e.norm_squared() - 1.0).abs() < 1e-6);
        assert!(out.final_record().kappa <= 1e-8);
    }

    #[test]
    fn fixed_mode_keeps_positions() {
        let sys = desk_system(12);
        let out = run_zf(&sys.scenario, &sys.placement, &AlgoParams::default(), PositionMode::Fixed).unwrap();
        assert_eq!(out.system.placement, sys.placement);
    }

    #[test]
    fn colliding_users_are_rank_deficient() {
        let mut sys = desk_system(13);
        let q = sys.placement.q[0].clone();
        sys.scenario.user_regions[1] = sys.scenario.user_regions[0];
        sys.set_user_positions(1, q).unwrap();
        match zf_precoder(&sys.channels, 1.0) {
            Err(Error::RankDeficient { limit, .. }) => assert_eq!(limit, ZF_CONDITION_LIMIT),
            other => panic!("{other:?}"),
        }
    }
}
