//! Central finite differences as an independent oracle for the analytic
//! position gradients.
//!
//! Nothing here calls analytic gradient code on the probe side: every scalar
//! function rebuilds the channels (and, for zero forcing, `P_e` and `β_e`)
//! from the perturbed coordinates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{flatten_xy, unflatten_xy, Placement, Scenario, System};
use crate::linalg::{c, to_dvec, CMat, CVec, C64};
use crate::lp::{grad_bs_kappa_l, grad_bs_rate_lp, grad_user_rate_lp};
use crate::metrics::{kappa_l, kappa_z, rate_lp, rates_zf, wsr, LpState, ZfState};
use crate::zf::{grad_bs_kappa_z, grad_bs_rates_zf, grad_user_kappa_z, grad_user_rates_zf};

pub const DEFAULT_STEP: f64 = 1e-7;

/// Pass/fail thresholds for one coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
    /// Below this analytic magnitude the absolute test also counts.
    pub floor: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { rel: 1e-4, abs: 1e-8, floor: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdReport {
    pub coord: usize,
    pub analytic: f64,
    pub fd: f64,
    pub abs_err: f64,
    pub rel_err: f64,
    pub pass: bool,
    pub h: f64,
}

/// Central differences `(f(x + h e_i) − f(x − h e_i)) / 2h`.
pub fn fd_gradient<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Probe { coordinate: i });
        }
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

pub fn compare(analytic: &[f64], fd: &[f64], h: f64, tol: Tolerance) -> Result<Vec<FdReport>> {
    if analytic.len() != fd.len() {
        return Err(Error::Contract(format!("gradient has {} entries, probe has {}", analytic.len(), fd.len())));
    }
    Ok(analytic
        .iter()
        .zip(fd)
        .enumerate()
        .map(|(coord, (&a, &f))| {
            let abs_err = (a - f).abs();
            let scale = a.abs().max(f.abs());
            let rel_err = if scale > 0.0 { abs_err / scale } else { 0.0 };
            let pass = rel_err <= tol.rel || (a.abs() < tol.floor && abs_err <= tol.abs);
            FdReport { coord, analytic: a, fd: f, abs_err, rel_err, pass, h }
        })
        .collect())
}

/// Compares `analytic(x)` with central differences of `scalar` at each point.
pub fn check<A, F>(mut analytic: A, mut scalar: F, points: &[Vec<f64>], h: f64, tol: Tolerance) -> Result<Vec<Vec<FdReport>>>
where
    A: FnMut(&[f64]) -> Result<Vec<f64>>,
    F: FnMut(&[f64]) -> Result<f64>,
{
    points
        .iter()
        .map(|x| {
            let a = analytic(x)?;
            let fd = fd_gradient(&mut scalar, x, h)?;
            compare(&a, &fd, h, tol)
        })
        .collect()
}

/// The seven position gradients of the two stacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gradient {
    /// `R_{L,k}` over user `k`'s antennas.
    UserRateLp,
    /// `R_{L,k}` over the transmit antennas.
    BsRateLp,
    /// `κ_l` over the transmit antennas.
    BsKappaLp,
    /// Weighted zero-forcing rates over user `k`'s antennas.
    UserRateZf,
    /// `κ_z` over user `k`'s antennas.
    UserKappaZf,
    /// Weighted zero-forcing rates over the transmit antennas.
    BsRateZf,
    /// `κ_z` over the transmit antennas.
    BsKappaZf,
}

impl Gradient {
    pub const ALL: [Gradient; 7] = [
        Gradient::UserRateLp,
        Gradient::BsRateLp,
        Gradient::BsKappaLp,
        Gradient::UserRateZf,
        Gradient::UserKappaZf,
        Gradient::BsRateZf,
        Gradient::BsKappaZf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Gradient::UserRateLp => "user_rate_lp",
            Gradient::BsRateLp => "bs_rate_lp",
            Gradient::BsKappaLp => "bs_kappa_lp",
            Gradient::UserRateZf => "user_rate_zf",
            Gradient::UserKappaZf => "user_kappa_zf",
            Gradient::BsRateZf => "bs_rate_zf",
            Gradient::BsKappaZf => "bs_kappa_zf",
        }
    }

    fn moves_bs(self) -> bool {
        matches!(self, Gradient::BsRateLp | Gradient::BsKappaLp | Gradient::BsRateZf | Gradient::BsKappaZf)
    }
}

/// Random transmit and receive vectors at which the gradients are probed.
#[derive(Debug, Clone)]
pub struct ProbeState {
    pub w: Vec<CMat>,
    pub v: CVec,
    pub u: CVec,
    /// Weights for the zero-forcing rate sums.
    pub weights: Vec<f64>,
}

fn random_unit<R: Rng>(rng: &mut R, n: usize) -> CVec {
    let v = to_dvec((0..n).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect());
    let norm = v.norm();
    v / c(norm)
}

impl ProbeState {
    /// Precoders scaled to use a random share of `P_max`, unit `v` and `u`.
    pub fn random<R: Rng>(scenario: &Scenario, rng: &mut R) -> Self {
        let mut w: Vec<CMat> = (0..scenario.n_users)
            .map(|_| {
                CMat::from_fn(scenario.n_t, scenario.n_u, |_, _| {
                    C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
                })
            })
            .collect();
        let total: f64 = w.iter().map(|m| m.norm_squared()).sum();
        let scale = (scenario.p_max * rng.random_range(0.2..1.0) / total).sqrt();
        for m in &mut w {
            *m *= c(scale);
        }
        let weights: Vec<f64> = (0..scenario.n_users).map(|_| rng.random_range(0.1..1.0)).collect();
        Self { v: random_unit(rng, scenario.n_t), u: random_unit(rng, scenario.n_r), w, weights }
    }
}

/// One row of the gradient-suite table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradRow {
    pub gradient: Gradient,
    pub point: usize,
    pub user: usize,
    pub report: FdReport,
}

fn moved(base: &System, g: Gradient, k: usize, x: &[f64]) -> Result<System> {
    let mut sys = base.clone();
    if g.moves_bs() {
        let t = unflatten_xy(x, &base.placement.t);
        sys.set_bs_positions(t)?;
    } else {
        let q = unflatten_xy(x, &base.placement.q[k]);
        sys.set_user_positions(k, q)?;
    }
    Ok(sys)
}

/// The scalar whose gradient `g` is, evaluated on a freshly built system.
/// Constraint values are normalized by `σ_z²`.
fn scalar(sys: &System, g: Gradient, k: usize, probe: &ProbeState) -> Result<f64> {
    let sc = &sys.scenario;
    let ch = &sys.channels;
    let lp = || LpState { w: probe.w.clone(), v: probe.v.clone(), u: probe.u.clone() };
    let zf = || ZfState::new(ch, sc.p_max, probe.v.clone(), probe.u.clone());
    match g {
        Gradient::UserRateLp | Gradient::BsRateLp => rate_lp(ch, &lp(), k, sc.noise_user),
        Gradient::BsKappaLp => Ok(kappa_l(ch, &probe.w, &probe.v, &probe.u, sc.gamma0, sc.noise_radar) / sc.noise_radar),
        Gradient::UserRateZf | Gradient::BsRateZf => wsr(&probe.weights, &rates_zf(ch, &zf()?, sc.noise_user)?),
        Gradient::UserKappaZf | Gradient::BsKappaZf => Ok(kappa_z(ch, &zf()?, sc.gamma0, sc.noise_radar)? / sc.noise_radar),
    }
}

fn analytic(sys: &System, g: Gradient, k: usize, probe: &ProbeState) -> Result<Vec<f64>> {
    let sc = &sys.scenario;
    let lp = LpState { w: probe.w.clone(), v: probe.v.clone(), u: probe.u.clone() };
    let norm = |v: Vec<f64>| v.into_iter().map(|x| x / sc.noise_radar).collect::<Vec<_>>();
    match g {
        Gradient::UserRateLp => grad_user_rate_lp(sys, &lp, k),
        Gradient::BsRateLp => grad_bs_rate_lp(sys, &lp, k),
        Gradient::BsKappaLp => Ok(norm(grad_bs_kappa_l(sys, &lp))),
        _ => {
            let st = ZfState::new(&sys.channels, sc.p_max, probe.v.clone(), probe.u.clone())?;
            match g {
                Gradient::UserRateZf => grad_user_rates_zf(sys, &st, &probe.weights, k),
                Gradient::UserKappaZf => grad_user_kappa_z(sys, &st, k).map(norm),
                Gradient::BsRateZf => grad_bs_rates_zf(sys, &st, &probe.weights),
                _ => grad_bs_kappa_z(sys, &st).map(norm),
            }
        }
    }
}

/// Checks gradient `g` (for user `k` where it matters) at one system state.
pub fn check_gradient(system: &System, g: Gradient, k: usize, probe: &ProbeState, h: f64, tol: Tolerance) -> Result<Vec<FdReport>> {
    let x0 = if g.moves_bs() { flatten_xy(&system.placement.t) } else { flatten_xy(&system.placement.q[k]) };
    let a = analytic(system, g, k, probe)?;
    let fd = fd_gradient(|x| scalar(&moved(system, g, k, x)?, g, k, probe), &x0, h)?;
    compare(&a, &fd, h, tol)
}

/// Every gradient, for every user, at each placement (one random probe
/// state per placement).
pub fn gradient_suite<R: Rng>(
    scenario: &Scenario,
    placements: &[Placement],
    rng: &mut R,
    h: f64,
    tol: Tolerance,
) -> Result<Vec<GradRow>> {
    let mut rows = Vec::new();
    for (point, placement) in placements.iter().enumerate() {
        let system = System::new(scenario.clone(), placement.clone())?;
        let probe = ProbeState::random(scenario, rng);
        for g in Gradient::ALL {
            let users = if matches!(g, Gradient::BsKappaLp | Gradient::BsRateZf | Gradient::BsKappaZf) {
                1
            } else {
                scenario.n_users
            };
            for k in 0..users {
                for report in check_gradient(&system, g, k, &probe, h, tol)? {
                    rows.push(GradRow { gradient: g, point, user: k, report });
                }
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let g = fd_gradient(|x| Ok(x[0] * x[0]), &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn constant_gives_zero() {
        let g = fd_gradient(|_| Ok(2.5), &[1.0, -4.0, 0.3], 1e-7).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn non_finite_probe_names_coordinate() {
        let err = fd_gradient(|x| Ok(if x[1] > 0.0 { f64::NAN } else { 1.0 }), &[0.0, 0.0], 1e-3).unwrap_err();
        assert!(matches!(err, Error::Probe { coordinate: 1 }));
    }

    #[test]
    fn dimension_mismatch_is_contract_error() {
        assert!(matches!(compare(&[1.0], &[1.0, 2.0], 1e-7, Tolerance::default()), Err(Error::Contract(_))));
    }

    #[test]
    fn pass_rule() {
        let tol = Tolerance::default();
        let r = compare(&[1.0, 1e-6, 1e-6, 1.0], &[1.0 + 5e-5, 1e-6 + 5e-9, 1e-6 + 5e-8, 1.1], 1e-7, tol).unwrap();
        assert_eq!(r.iter().map(|x| x.pass).collect::<Vec<_>>(), vec![true, true, false, false]);
    }

    #[test]
    fn check_runs_per_point() {
        let pts = vec![vec![1.0, 2.0], vec![-0.5, 0.25]];
        let r = check(
            |x| Ok(vec![2.0 * x[0] * x[1], x[0] * x[0]]),
            |x| Ok(x[0] * x[0] * x[1]),
            &pts,
            1e-5,
            Tolerance::default(),
        )
        .unwrap();
        assert_eq!(r.len(), 2);
        assert!(r.iter().flatten().all(|x| x.pass));
    }

    #[test]
    fn sign_flip_is_detected() {
        let pts = vec![vec![0.7, -1.3]];
        let r = check(|x| Ok(vec![-x[1], -x[0]]), |x| Ok(x[0] * x[1]), &pts, 1e-6, Tolerance::default()).unwrap();
        assert!(r[0].iter().all(|x| !x.pass));
    }

    fn gradcheck_scenario() -> Scenario {
        let cfg = crate::harness::ExperimentConfig {
            preset: crate::harness::Preset::Gradcheck,
            n_t: Some(4),
            n_r: Some(4),
            ..Default::default()
        };
        crate::harness::build_scenario(&cfg, None).unwrap()
    }

    #[test]
    fn suite_passes_on_random_placements() {
        let sc = gradcheck_scenario();
        for seed in 0..3 {
            let mut rng = crate::harness::trial_rng(seed, 0);
            let p = crate::harness::initial_placement(&sc, &mut rng).unwrap();
            let rows = gradient_suite(&sc, &[p], &mut rng, DEFAULT_STEP, Tolerance::default()).unwrap();
            // LP: 2 users × 4 coords + 2 × 8 + 8; ZF: 2 × 4 + 2 × 4 + 8 + 8.
            assert_eq!(rows.len(), 64);
            for r in rows {
                assert!(r.report.pass, "{:?}", r);
            }
        }
    }

    // Truncation error falls as h², roundoff grows as 1/h: the worst error
    // over the coordinates dips in the middle of the sweep.
    #[test]
    fn step_sweep_shows_truncation_and_roundoff() {
        let sc = gradcheck_scenario();
        let mut rng = crate::harness::trial_rng(3, 0);
        let p = crate::harness::initial_placement(&sc, &mut rng).unwrap();
        let sys = System::new(sc.clone(), p).unwrap();
        let probe = ProbeState::random(&sc, &mut rng);
        let errs: Vec<f64> = [1e-5, 1e-6, 1e-7, 1e-8, 1e-9]
            .iter()
            .map(|&h| {
                let r = check_gradient(&sys, Gradient::BsRateLp, 0, &probe, h, Tolerance::default()).unwrap();
                r.iter().map(|x| x.rel_err).fold(0.0, f64::max)
            })
            .collect();
        let (imin, min) = errs.iter().enumerate().fold((0, f64::MAX), |a, (i, &e)| if e < a.1 { (i, e) } else { a });
        assert!(imin > 0 && imin < errs.len() - 1, "{errs:?}");
        assert!(min <= 1e-4);
        assert!(errs[0] > 10.0 * min && errs[4] > 10.0 * min, "{errs:?}");
    }
}
