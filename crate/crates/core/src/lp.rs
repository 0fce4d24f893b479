//! Linear-precoding stack: closed-form combiner, SCA updates of the
//! precoders and the sensing beam, projected-gradient user-antenna moves, the
//! augmented-Lagrangian base-station move and the alternating loop tying them
//! together.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ChannelSet, Placement, Scenario, SquareRegion, System, Vec3};
use crate::linalg::{c, frob2, hermitian_eigen, inv_hpd, leading_eigpair, regularization_count, solve_hpd, identity, CMat, CVec};
use crate::metrics::{kappa_l, rates_lp, sensing_power, sinr_lp, wsr, Block, LpState, TraceRecord};
use crate::positions::{accumulate_bs_gradient, accumulate_sensing_gradient, alm, pgm, user_gradient, LoopStats, PositionBlock, Sample};
use crate::subsolver::{Budget, CovarianceSubproblem, PrecoderSubproblem, SubsolverParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlgoParams {
    /// SCA stop: surrogate improvement below this (nats).
    pub eps_s: f64,
    /// Inner position-loop stop: relative change of the objective.
    pub eps_l: f64,
    /// Outer stop for the ALM loops and the alternating loop (nats).
    pub eps_f: f64,
    /// Sufficient-decrease constant of the position line search.
    pub delta: f64,
    /// Backtracking factor.
    pub tau: f64,
    /// Initial step for user-antenna moves.
    pub mu0: f64,
    /// Initial step for base-station moves.
    pub nu0: f64,
    /// Initial step for user-antenna moves under zero forcing.
    pub alpha0: f64,
    pub p0: f64,
    pub theta: f64,
    pub penalty_cap: f64,
    /// Rank-one penalty weight of the beam update.
    pub zeta: f64,
    pub max_outer: usize,
    pub max_line_search: usize,
    pub max_sca: usize,
    pub max_pgm: usize,
    pub max_alm: usize,
    /// Rescale the extracted beam to unit norm when that keeps it feasible.
    pub renormalize_beam: bool,
    /// Rank-one acceptance threshold `β_max/Tr`.
    pub rank_ratio: f64,
    pub subsolver: SubsolverParams,
}

impl Default for AlgoParams {
    fn default() -> Self {
        Self {
            eps_s: 1e-2,
            eps_l: 1e-3,
            eps_f: 1e-2,
            delta: 1e-2,
            tau: 0.5,
            mu0: 1.0,
            nu0: 1.0,
            alpha0: 1.0,
            p0: 1.0,
            theta: 10.0,
            penalty_cap: 1e6,
            zeta: 1.0,
            max_outer: 50,
            max_line_search: 60,
            max_sca: 30,
            max_pgm: 50,
            max_alm: 10,
            renormalize_beam: false,
            rank_ratio: 0.99,
            subsolver: SubsolverParams::default(),
        }
    }
}

impl AlgoParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.eps_s, self.eps_l, self.eps_f, self.delta, self.mu0, self.nu0, self.alpha0, self.p0, self.penalty_cap,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) || !(self.zeta >= 0.0) {
            return Err(Error::Config("algorithm constants must be positive".into()));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) || !(self.theta > 1.0) {
            return Err(Error::Config("need 0 < τ < 1 and θ > 1".into()));
        }
        if self.max_outer == 0 || self.max_line_search == 0 || self.max_sca == 0 {
            return Err(Error::Config("iteration caps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Whether the antenna-position blocks run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PositionMode {
    Movable,
    Fixed,
}

pub fn budget(scenario: &Scenario) -> Budget {
    Budget {
        noise_user: scenario.noise_user,
        noise_radar: scenario.noise_radar,
        p_max: scenario.p_max,
        gamma0: scenario.gamma0,
    }
}

/// Performance snapshot of a state.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub wsr: f64,
    pub rates: Vec<f64>,
    pub gamma_s: f64,
    /// `κ/σ_z²`.
    pub kappa: f64,
    pub power: f64,
    pub sensing_power: f64,
}

pub fn evaluate_lp(system: &System, state: &LpState) -> Result<Evaluation> {
    let sc = &system.scenario;
    let ch = &system.channels;
    let rates = rates_lp(ch, state, sc.noise_user)?;
    Ok(Evaluation {
        wsr: wsr(&sc.weights, &rates)?,
        gamma_s: sinr_lp(ch, state, sc.noise_radar)?,
        kappa: kappa_l(ch, &state.w, &state.v, &state.u, sc.gamma0, sc.noise_radar) / sc.noise_radar,
        power: state.power(),
        sensing_power: sensing_power(ch, &state.v, &state.u),
        rates,
    })
}

/// `u = D^{-1} f_r / ‖D^{-1} f_r‖` with `D = σ_z²I + Σ_k (G W_k)(G W_k)ᴴ`; the
/// SINR-maximizing receive combiner for a rank-one target echo.
pub fn optimal_combiner(channels: &ChannelSet, precoders: &[CMat], noise_radar: f64) -> Result<CVec> {
    let n_r = channels.n_r();
    let mut d = identity(n_r);
    for w in precoders {
        let gw = &channels.g * w;
        d += &gw * gw.adjoint() * c(1.0 / noise_radar);
    }
    let x = solve_hpd(&d, &channels.f_r)?;
    let norm = x.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::numerical("receive combiner has zero norm"));
    }
    Ok(x / c(norm))
}

pub fn optimal_combiner_lp(channels: &ChannelSet, w: &[CMat], noise_radar: f64) -> Result<CVec> {
    optimal_combiner(channels, w, noise_radar)
}

/// Warm start: beam on the target at full power, matched-filter precoders at
/// 90% of the budget (shrunk if the sensing constraint requires), and the
/// optimal combiner for them.
pub fn initial_lp_state(system: &System) -> Result<LpState> {
    let sc = &system.scenario;
    let ch = &system.channels;
    let v = &ch.f_t / c((ch.n_t() as f64).sqrt());
    let u0 = &ch.f_r / c((ch.n_r() as f64).sqrt());
    if sensing_power(ch, &v, &u0) <= sc.gamma0 * sc.noise_radar {
        return Err(Error::InfeasibleSubproblem("sensing threshold unreachable even without communication".into()));
    }
    let w: Vec<CMat> = ch.h.iter().map(|h| h.adjoint()).collect();
    let p: f64 = w.iter().map(frob2).sum();
    let mut w: Vec<CMat> = w.into_iter().map(|x| x * c((0.9 * sc.p_max / p).sqrt())).collect();
    let mut u = optimal_combiner(ch, &w, sc.noise_radar)?;
    let k = kappa_l(ch, &w, &v, &u, sc.gamma0, sc.noise_radar);
    if k > 0.0 {
        let g = ch.g.adjoint() * &u;
        let leak: f64 = w.iter().map(|x| (x.adjoint() * &g).norm_squared()).sum();
        let room = sensing_power(ch, &v, &u) - sc.gamma0 * sc.noise_radar;
        let s = (0.5 * room / (sc.gamma0 * leak)).clamp(0.0, 1.0).sqrt();
        for x in w.iter_mut() {
            *x *= c(s);
        }
        u = optimal_combiner(ch, &w, sc.noise_radar)?;
    }
    Ok(LpState { w, v, u })
}

/// SCA over the precoders. Returns the new precoders and the true weighted
/// sum rate after every SCA step (non-decreasing by tightness of the bound).
pub fn optimize_precoders(system: &System, state: &LpState, params: &AlgoParams) -> Result<(Vec<CMat>, Vec<f64>)> {
    let sc = &system.scenario;
    let ch = &system.channels;
    let b = budget(sc);
    let mut cur = state.clone();
    let mut value = wsr(&sc.weights, &rates_lp(ch, &cur, sc.noise_user)?)?;
    let mut trace = vec![value];
    for _ in 0..params.max_sca {
        let sub = PrecoderSubproblem::new(ch, &cur, &sc.weights, &b)?;
        let w = sub.solve(&params.subsolver)?;
        let next = LpState { w, ..cur.clone() };
        let next_value = wsr(&sc.weights, &rates_lp(ch, &next, sc.noise_user)?)?;
        if next_value < value {
            break;
        }
        let gain = next_value - value;
        cur = next;
        value = next_value;
        trace.push(value);
        if gain < params.eps_s {
            break;
        }
    }
    Ok((cur.w, trace))
}

/// Result of a sensing-beam update.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamUpdate {
    pub v: CVec,
    /// `β_max(V)/Tr(V)` of the final covariance.
    pub rank_ratio: f64,
    /// Set when the ratio is below the acceptance threshold.
    pub flagged: bool,
    /// Penalized exact objective after every SCA step.
    pub trace: Vec<f64>,
}

/// SCA over the sensing covariance followed by rank-one extraction
/// `v = √β_max χ`. `build` creates the surrogate at a given expansion point.
pub fn sense_beam_sca<F>(v0: &CVec, weights: &[f64], params: &AlgoParams, build: F) -> Result<BeamUpdate>
where
    F: Fn(&CMat) -> Result<CovarianceSubproblem>,
{
    let exact = |sub: &CovarianceSubproblem, v: &CMat| -> Result<f64> {
        let r = sub.rates(v)?;
        let (vals, _) = hermitian_eigen(v);
        let tr: f64 = vals.iter().sum();
        Ok(weights.iter().zip(r).map(|(w, x)| w * x).sum::<f64>() - sub.zeta * (tr - vals[0]))
    };
    let mut v = v0 * v0.adjoint();
    let mut sub = build(&v)?;
    let mut trace = vec![exact(&sub, &v)?];
    let mut lambda = 0.0;
    for it in 0..params.max_sca {
        if it > 0 {
            sub = build(&v)?;
        }
        let before = sub.objective(&v)?;
        let (next, lam) = sub.solve_warm(&params.subsolver, lambda)?;
        lambda = lam;
        let after = sub.objective(&next)?;
        v = next;
        trace.push(exact(&sub, &v)?);
        if after - before < params.eps_s {
            break;
        }
    }
    let (beta, chi) = leading_eigpair(&v)?;
    let tr = crate::linalg::trace_re(&v);
    let rank_ratio = if tr > 0.0 { beta / tr } else { 1.0 };
    let mut beam = &chi * c(beta.max(0.0).sqrt());
    let kappa_of = |x: &CVec| sub.kappa(&(x * x.adjoint()));
    let tol = params.subsolver.tol_feas;
    if kappa_of(&beam) > tol {
        // Truncating to rank one lost echo power; grow the beam along χ
        // within the unit-norm budget if that suffices.
        let echo = kappa_of(&CVec::zeros(beam.len())) - kappa_of(&chi);
        let need = kappa_of(&CVec::zeros(beam.len()));
        let s2 = if echo > 0.0 { need / echo } else { f64::INFINITY };
        if s2 <= 1.0 {
            beam = &chi * c((s2 * (1.0 + 1e-9)).min(1.0).sqrt());
        }
        if kappa_of(&beam) > tol {
            beam = v0.clone();
        }
    }
    if params.renormalize_beam {
        let n = beam.norm();
        if n > 0.0 {
            let unit = &beam / c(n);
            if kappa_of(&unit) <= tol {
                beam = unit;
            }
        }
    }
    Ok(BeamUpdate { v: beam, rank_ratio, flagged: rank_ratio < params.rank_ratio, trace })
}

pub fn optimize_sense_beam_lp(system: &System, state: &LpState, params: &AlgoParams) -> Result<BeamUpdate> {
    let sc = &system.scenario;
    let b = budget(sc);
    sense_beam_sca(&state.v, &sc.weights, params, |v_n| {
        CovarianceSubproblem::lp(&system.channels, state, v_n, &sc.weights, params.zeta, &b)
    })
}

/// `M = C_1 − C_{2,k}` with `C_1 = T_1H_kᴴA_1^{-1}`, `C_{2,k} = T_{2,k}H_kᴴA_{2,k}^{-1}`,
/// so that `dR_{L,k} = 2 Re Tr(M dH_k)`.
fn rate_sensitivity_lp(channels: &ChannelSet, state: &LpState, k: usize, noise: f64) -> Result<CMat> {
    let h = &channels.h[k];
    let t1 = state.covariance() + &state.v * state.v.adjoint();
    let t2 = &t1 - &state.w[k] * state.w[k].adjoint();
    let n = h.nrows();
    let a1 = identity(n) * c(noise) + h * &t1 * h.adjoint();
    let a2 = identity(n) * c(noise) + h * &t2 * h.adjoint();
    Ok(t1 * h.adjoint() * inv_hpd(&a1)? - t2 * h.adjoint() * inv_hpd(&a2)?)
}

/// Gradient of `R_{L,k}` over user `k`'s antenna coordinates.
pub fn grad_user_rate_lp(system: &System, state: &LpState, k: usize) -> Result<Vec<f64>> {
    let m = rate_sensitivity_lp(&system.channels, state, k, system.scenario.noise_user)?;
    let p = &system.placement;
    Ok(user_gradient(&system.channels.h[k], &m, &p.t, &p.q[k], system.scenario.wavelength))
}

/// Gradient of `R_{L,k}` over the base-station transmit coordinates.
pub fn grad_bs_rate_lp(system: &System, state: &LpState, k: usize) -> Result<Vec<f64>> {
    let m = rate_sensitivity_lp(&system.channels, state, k, system.scenario.noise_user)?;
    let p = &system.placement;
    let mut out = vec![0.0; 2 * p.t.len()];
    accumulate_bs_gradient(&mut out, &system.channels.h[k], &m, &p.t, &p.q[k], system.scenario.wavelength);
    Ok(out)
}

/// Gradient of `κ` over the transmit coordinates for a communication
/// covariance `cov` (`ΣW_kW_kᴴ` or `P_eP_eᴴ`) held fixed.
pub(crate) fn grad_bs_kappa_fixed(system: &System, cov: &CMat, v: &CVec, u: &CVec, gamma0: f64) -> Vec<f64> {
    let ch = &system.channels;
    let m = cov * c(gamma0) - v * v.adjoint();
    let n = m * ch.g.adjoint() * u * u.adjoint();
    let p = &system.placement;
    let mut out = vec![0.0; 2 * p.t.len()];
    accumulate_sensing_gradient(&mut out, &ch.g, &n, &p.t, &system.scenario.target, system.scenario.wavelength);
    out
}

/// Gradient of `κ_l` over the transmit coordinates.
pub fn grad_bs_kappa_l(system: &System, state: &LpState) -> Vec<f64> {
    grad_bs_kappa_fixed(system, &state.covariance(), &state.v, &state.u, system.scenario.gamma0)
}

struct LpUserBlock<'a> {
    system: System,
    state: &'a LpState,
    k: usize,
}

impl PositionBlock for LpUserBlock<'_> {
    fn points(&self) -> Vec<Vec3> {
        self.system.placement.q[self.k].clone()
    }
    fn region(&self) -> SquareRegion {
        self.system.scenario.user_regions[self.k]
    }
    fn d_min(&self) -> f64 {
        self.system.scenario.d_min
    }
    fn sample(&mut self, points: &[Vec3]) -> Result<Sample> {
        self.system.set_user_positions(self.k, points.to_vec())?;
        let value = crate::metrics::rate_lp(&self.system.channels, self.state, self.k, self.system.scenario.noise_user)?;
        // The user's antennas do not enter the sensing constraint.
        Ok(Sample { value, kappa: -1.0 })
    }
    fn gradients(&mut self) -> Result<(Vec<f64>, Vec<f64>)> {
        let g = grad_user_rate_lp(&self.system, self.state, self.k)?;
        let zeros = vec![0.0; g.len()];
        Ok((g, zeros))
    }
}

/// Projected gradient ascent on `R_{L,k}` over user `k`'s antennas.
pub fn optimize_user_positions_pgm(
    system: &System,
    state: &LpState,
    k: usize,
    params: &AlgoParams,
) -> Result<(Vec<Vec3>, LoopStats)> {
    let mut block = LpUserBlock { system: system.clone(), state, k };
    let start = block.sample(&block.points())?;
    let mut mu = params.mu0;
    let mut stats = LoopStats::default();
    pgm(&mut block, start, 0.0, 0.0, &mut mu, params, &mut stats)?;
    Ok((block.points(), stats))
}

struct LpBsBlock<'a> {
    system: System,
    state: &'a LpState,
    cov: CMat,
}

impl PositionBlock for LpBsBlock<'_> {
    fn points(&self) -> Vec<Vec3> {
        self.system.placement.t.clone()
    }
    fn region(&self) -> SquareRegion {
        self.system.scenario.tx_region
    }
    fn d_min(&self) -> f64 {
        self.system.scenario.d_min
    }
    fn sample(&mut self, points: &[Vec3]) -> Result<Sample> {
        self.system.set_bs_positions(points.to_vec())?;
        let e = evaluate_lp(&self.system, self.state)?;
        Ok(Sample { value: e.wsr, kappa: e.kappa })
    }
    fn gradients(&mut self) -> Result<(Vec<f64>, Vec<f64>)> {
        let sc = &self.system.scenario;
        let mut gw = vec![0.0; 2 * sc.n_t];
        for k in 0..sc.n_users {
            let g = grad_bs_rate_lp(&self.system, self.state, k)?;
            for (a, b) in gw.iter_mut().zip(g) {
                *a += sc.weights[k] * b;
            }
        }
        let gk = grad_bs_kappa_fixed(&self.system, &self.cov, &self.state.v, &self.state.u, sc.gamma0)
            .into_iter()
            .map(|x| x / sc.noise_radar)
            .collect();
        Ok((gw, gk))
    }
}

/// Augmented-Lagrangian move of the base-station transmit antennas on
/// `L(t) = −WSR + ηκ + ½pκ²`. `eta` persists across calls within a run.
pub fn optimize_bs_positions_alm(
    system: &System,
    state: &LpState,
    params: &AlgoParams,
    eta: &mut f64,
) -> Result<(Vec<Vec3>, LoopStats)> {
    let mut block = LpBsBlock { system: system.clone(), state, cov: state.covariance() };
    let mut stats = LoopStats::default();
    alm(&mut block, eta, params.nu0, params, &mut stats)?;
    Ok((block.points(), stats))
}

/// Output of a full alternating-optimization run.
#[derive(Debug, Clone)]
pub struct RunOutcome<S> {
    pub state: S,
    pub system: System,
    pub trace: Vec<TraceRecord>,
    /// Outer iterations executed.
    pub iterations: usize,
    pub converged: bool,
    pub rank_ratios: Vec<f64>,
    /// Beam updates whose rank ratio fell below the threshold.
    pub rank_flags: usize,
    /// Blocks whose output was rejected by the monotonicity/feasibility guard.
    pub rejected: usize,
    /// Blocks that returned an error (previous state kept).
    pub failures: Vec<String>,
    /// Log-determinants that needed diagonal loading during the run.
    pub regularizations: u64,
}

impl<S> RunOutcome<S> {
    pub fn final_record(&self) -> &TraceRecord {
        self.trace.last().expect("trace always holds the initial record")
    }
}

/// Monotonicity and feasibility guard shared by both stacks.
pub(crate) fn admissible(system: &System, before: &Evaluation, after: &Evaluation, params: &AlgoParams) -> bool {
    let sc = &system.scenario;
    after.wsr >= before.wsr
        && after.kappa <= params.subsolver.tol_feas
        && after.power <= sc.p_max * (1.0 + 1e-9)
        && system.placement.is_feasible(sc, 1e-12)
}

pub(crate) fn record(iteration: usize, block: Block, e: &Evaluation, accepted: bool) -> TraceRecord {
    TraceRecord {
        iteration,
        block,
        wsr: e.wsr,
        gamma_s: e.gamma_s,
        kappa: e.kappa,
        power: e.power,
        rates: e.rates.clone(),
        accepted,
    }
}

struct LpRun {
    system: System,
    state: LpState,
    eval: Evaluation,
    trace: Vec<TraceRecord>,
    rejected: usize,
    failures: Vec<String>,
    params: AlgoParams,
    errors_this_iter: usize,
    blocks_this_iter: usize,
}

impl LpRun {
    fn attempt(&mut self, iteration: usize, block: Block, candidate: Result<(System, LpState)>) {
        self.blocks_this_iter += 1;
        let outcome = candidate.and_then(|(sys, st)| {
            let e = evaluate_lp(&sys, &st)?;
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
                self.errors_this_iter += 1;
                self.failures.push(format!("iteration {iteration}, {block:?}: {err}"));
                self.trace.push(record(iteration, block, &self.eval, false));
            }
        }
    }
}

/// Alternating optimization for linear precoding. Block order per outer
/// iteration: combiner, precoders, sensing beam, each user's antennas, base
/// station antennas (the last two only in [`PositionMode::Movable`]).
pub fn run_lp(scenario: &Scenario, placement: &Placement, params: &AlgoParams, mode: PositionMode) -> Result<RunOutcome<LpState>> {
    params.validate()?;
    let reg0 = regularization_count();
    let system = System::new(scenario.clone(), placement.clone())?;
    if !placement.is_feasible(scenario, 1e-12) {
        return Err(Error::Placement("initial placement violates regions or spacing".into()));
    }
    let state = initial_lp_state(&system)?;
    let eval = evaluate_lp(&system, &state)?;
    let mut run = LpRun {
        trace: vec![record(0, Block::Init, &eval, true)],
        system,
        state,
        eval,
        rejected: 0,
        failures: Vec::new(),
        params: *params,
        errors_this_iter: 0,
        blocks_this_iter: 0,
    };
    let mut rank_ratios = Vec::new();
    let mut rank_flags = 0;
    let mut eta = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    let mut failed_loops = 0;
    for it in 1..=params.max_outer {
        iterations = it;
        run.errors_this_iter = 0;
        run.blocks_this_iter = 0;
        let start = run.eval.wsr;

        let cand = optimal_combiner_lp(&run.system.channels, &run.state.w, scenario.noise_radar)
            .map(|u| (run.system.clone(), LpState { u, ..run.state.clone() }));
        run.attempt(it, Block::Combiner, cand);

        let cand = optimize_precoders(&run.system, &run.state, params)
            .map(|(w, _)| (run.system.clone(), LpState { w, ..run.state.clone() }));
        run.attempt(it, Block::Precoder, cand);

        let beam = optimize_sense_beam_lp(&run.system, &run.state, params);
        if let Ok(b) = &beam {
            rank_ratios.push(b.rank_ratio);
            rank_flags += usize::from(b.flagged);
        }
        let cand = beam.map(|b| (run.system.clone(), LpState { v: b.v, ..run.state.clone() }));
        run.attempt(it, Block::Beam, cand);

        if mode == PositionMode::Movable {
            for k in 0..scenario.n_users {
                let cand = optimize_user_positions_pgm(&run.system, &run.state, k, params).and_then(|(q, _)| {
                    let mut sys = run.system.clone();
                    sys.set_user_positions(k, q)?;
                    Ok((sys, run.state.clone()))
                });
                run.attempt(it, Block::User(k), cand);
            }
            let cand = optimize_bs_positions_alm(&run.system, &run.state, params, &mut eta).and_then(|(t, _)| {
                let mut sys = run.system.clone();
                sys.set_bs_positions(t)?;
                Ok((sys, run.state.clone()))
            });
            run.attempt(it, Block::Bs, cand);
        }

        if run.errors_this_iter == run.blocks_this_iter {
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
