//! Shared machinery for the antenna-position blocks: chain rules from channel
//! sensitivities to coordinate gradients, and the projected-gradient /
//! augmented-Lagrangian loops both precoding stacks run on top of them.
//!
//! Coordinates are flattened as `[x_0, y_0, x_1, y_1, …]`.

use std::f64::consts::PI;

use crate::error::Result;
use crate::geometry::{min_spacing_ok, project_to_region, SquareRegion, Vec3};
use crate::linalg::CMat;
use crate::lp::AlgoParams;

/// Gradient over user antennas `q` of a real `f` with `df = 2 Re Tr(M dH)`,
/// where `H` is `N_u × N_t` and `M` is `N_t × N_u`.
pub fn user_gradient(h: &CMat, m: &CMat, t: &[Vec3], q: &[Vec3], lambda: f64) -> Vec<f64> {
    let k = 4.0 * PI / lambda;
    let mut out = vec![0.0; 2 * q.len()];
    for (b, qb) in q.iter().enumerate() {
        for (mi, tm) in t.iter().enumerate() {
            let d = qb.dist(tm);
            let s = (m[(mi, b)] * h[(b, mi)]).im * k / d;
            out[2 * b] -= s * (qb.x - tm.x);
            out[2 * b + 1] -= s * (qb.y - tm.y);
        }
    }
    out
}

/// Adds to `out` the gradient over transmit antennas `t` of the same `f`.
pub fn accumulate_bs_gradient(out: &mut [f64], h: &CMat, m: &CMat, t: &[Vec3], q: &[Vec3], lambda: f64) {
    let k = 4.0 * PI / lambda;
    for (b, qb) in q.iter().enumerate() {
        for (mi, tm) in t.iter().enumerate() {
            let d = qb.dist(tm);
            let s = (m[(mi, b)] * h[(b, mi)]).im * k / d;
            out[2 * mi] -= s * (tm.x - qb.x);
            out[2 * mi + 1] -= s * (tm.y - qb.y);
        }
    }
}

/// Adds the gradient over `t` of `f` with `df = 2 Re Tr(N dG)` for the
/// sensing channel `G = ρ_s f_r f_tᴴ` (`N` is `N_t × N_r`). Only `f_t`
/// depends on `t`, through the conjugate phase `e^{-j2π‖t_m − s‖/λ}`.
pub fn accumulate_sensing_gradient(out: &mut [f64], g: &CMat, n: &CMat, t: &[Vec3], s: &Vec3, lambda: f64) {
    let k = 4.0 * PI / lambda;
    for (mi, tm) in t.iter().enumerate() {
        let d = tm.dist(s);
        let mut acc = 0.0;
        for r in 0..g.nrows() {
            acc += (n[(mi, r)] * g[(r, mi)]).im;
        }
        out[2 * mi] += acc * k * (tm.x - s.x) / d;
        out[2 * mi + 1] += acc * k * (tm.y - s.y) / d;
    }
}

/// Objective value at a trial placement of one antenna array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    /// Quantity being maximized (a weighted sum rate or a single rate).
    pub value: f64,
    /// Sensing constraint normalized by the radar noise power.
    pub kappa: f64,
}

/// One movable array plus everything needed to score it.
pub trait PositionBlock {
    fn points(&self) -> Vec<Vec3>;
    fn region(&self) -> SquareRegion;
    fn d_min(&self) -> f64;
    /// Moves the array and scores it. Errors reject the trial point.
    fn sample(&mut self, points: &[Vec3]) -> Result<Sample>;
    /// Gradients of `value` and `kappa` at the last sampled placement.
    fn gradients(&mut self) -> Result<(Vec<f64>, Vec<f64>)>;
}

/// Counters reported by the position loops.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoopStats {
    pub steps: usize,
    pub line_search_failures: usize,
}

fn lagrangian(s: &Sample, eta: f64, p: f64) -> f64 {
    -s.value + eta * s.kappa + 0.5 * p * s.kappa * s.kappa
}

fn flat_step(points: &[Vec3], grad: &[f64], mu: f64, region: &SquareRegion) -> Vec<Vec3> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let moved = Vec3::new(p.x - mu * grad[2 * i], p.y - mu * grad[2 * i + 1], p.z);
            project_to_region(&moved, region)
        })
        .collect()
}

fn dist2(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sum()
}

/// Projected gradient descent on `L = −value + ηκ + ½pκ²` with fixed `(η, p)`.
///
/// A trial is accepted when the sufficient-decrease test
/// `L(old) − L(new) ≥ δ‖Δ‖²` and the spacing constraint both hold; when the
/// loop starts sensing-feasible, trials leaving the feasible set are also
/// rejected. The step `mu` is carried across iterations.
pub fn pgm<B: PositionBlock + ?Sized>(
    block: &mut B,
    start: Sample,
    eta: f64,
    p: f64,
    mu: &mut f64,
    params: &AlgoParams,
    stats: &mut LoopStats,
) -> Result<Sample> {
    let region = block.region();
    let d_min = block.d_min();
    let keep_feasible = start.kappa <= params.subsolver.tol_feas;
    let mut x = block.points();
    let mut cur = start;
    let mut at_x = true;
    for _ in 0..params.max_pgm {
        if !at_x {
            cur = block.sample(&x)?;
        }
        let (gv, gk) = block.gradients()?;
        let mult = eta + p * cur.kappa;
        let grad: Vec<f64> = gv.iter().zip(&gk).map(|(a, b)| -a + mult * b).collect();
        if grad.iter().all(|g| *g == 0.0) {
            break;
        }
        let l_old = lagrangian(&cur, eta, p);
        let mut accepted = None;
        for _ in 0..params.max_line_search {
            let cand = flat_step(&x, &grad, *mu, &region);
            let moved = dist2(&cand, &x);
            if moved == 0.0 {
                break;
            }
            at_x = false;
            if min_spacing_ok(&cand, d_min) {
                if let Ok(s) = block.sample(&cand) {
                    let ok_sense = !keep_feasible || s.kappa <= params.subsolver.tol_feas;
                    if ok_sense && l_old - lagrangian(&s, eta, p) >= params.delta * moved {
                        accepted = Some((cand, s));
                        break;
                    }
                }
            }
            *mu *= params.tau;
        }
        let Some((cand, s)) = accepted else {
            stats.line_search_failures += 1;
            break;
        };
        at_x = true;
        x = cand;
        let l_new = lagrangian(&s, eta, p);
        cur = s;
        stats.steps += 1;
        if (l_old - l_new).abs() <= params.eps_l * l_old.abs().max(1e-12) {
            break;
        }
    }
    if !at_x {
        cur = block.sample(&x)?;
    }
    Ok(cur)
}

/// Augmented-Lagrangian loop around [`pgm`]. `eta` is the multiplier carried
/// between calls; the penalty starts at `p_0` on every call and grows by `θ`
/// per outer round up to the cap. Stops once the objective changes by less
/// than `ε_f` over an outer round.
pub fn alm<B: PositionBlock + ?Sized>(
    block: &mut B,
    eta: &mut f64,
    mu0: f64,
    params: &AlgoParams,
    stats: &mut LoopStats,
) -> Result<Sample> {
    let x0 = block.points();
    let mut cur = block.sample(&x0)?;
    let mut p0 = params.p0;
    let mut mu = mu0;
    for _ in 0..params.max_alm {
        let before = cur.value;
        let p = if cur.kappa <= 0.0 && *eta == 0.0 { 0.0 } else { p0 };
        cur = pgm(block, cur, *eta, p, &mut mu, params, stats)?;
        *eta = (*eta + p0 * cur.kappa).max(0.0);
        p0 = (p0 * params.theta).min(params.penalty_cap);
        if (cur.value - before).abs() < params.eps_f {
            break;
        }
    }
    Ok(cur)
}
