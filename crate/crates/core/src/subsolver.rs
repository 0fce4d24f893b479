//! First-order solvers for the two concave surrogate problems of the SCA
//! loops: the precoder update and the sensing-covariance update.
//!
//! All quantities are normalized by the noise powers (channels by `σ_k`,
//! `κ` by `σ_z²`) so objective, gradients and tolerances are `O(1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ChannelSet;
use crate::linalg::{
    c, frob2, hermitian_part, identity, inner_re, inv_hpd, leading_eigpair, logdet_hpd, project_capped_spectraplex,
    quad_form, trace_re, CMat, CVec,
};
use crate::metrics::{rate_lp, sensing_power, LpState};

pub use crate::linalg::leading_eigpair as leading_eigenpair;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsolverParams {
    /// Feasibility tolerance on `κ/σ_z²`.
    pub tol_feas: f64,
    pub max_inner: usize,
    pub max_alm: usize,
    pub penalty_growth: f64,
    pub penalty_cap: f64,
    /// Relative step-size stop for the inner projected-gradient loops.
    pub tol_step: f64,
}

impl Default for SubsolverParams {
    fn default() -> Self {
        Self { tol_feas: 1e-8, max_inner: 2000, max_alm: 30, penalty_growth: 10.0, penalty_cap: 1e6, tol_step: 1e-10 }
    }
}

/// Concave lower bound of the weighted sum rate in the precoders, tight at
/// the expansion point `W^{(n)}`.
///
/// For user `k` with `X = H_k W_k` and interference-plus-noise `F_k`,
/// `R̂_k(W) = c_k + 2 Re Tr(Φ_kᴴ W_k) − Σ_u Tr(W_uᴴ H_kᴴ A_k H_k W_u)` where
/// `A_k = F̄_k^{-1} − (F̄_k + X̄X̄ᴴ)^{-1}` and `Φ_k = H_kᴴ F̄_k^{-1} X̄`.
#[derive(Debug, Clone)]
pub struct PrecoderSubproblem {
    hn: Vec<CMat>,
    w_n: Vec<CMat>,
    phi: Vec<CMat>,
    /// `H_kᴴ A_k H_k`, one per user.
    hah: Vec<CMat>,
    constant: Vec<f64>,
    /// `Σ_k w_k H_kᴴ A_k H_k`.
    q: CMat,
    weights: Vec<f64>,
    p_max: f64,
    /// Unit direction of `Gᴴu` and the largest admissible `Σ_u ‖ĝᴴW_u‖²`.
    g_hat: CVec,
    alpha_max: f64,
    version: u64,
}

/// Scenario constants the subproblems need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    pub noise_user: f64,
    pub noise_radar: f64,
    pub p_max: f64,
    pub gamma0: f64,
}

impl PrecoderSubproblem {
    pub fn new(channels: &ChannelSet, state: &LpState, weights: &[f64], budget: &Budget) -> Result<Self> {
        let scale = 1.0 / budget.noise_user.sqrt();
        let n_t = channels.n_t();
        let hn: Vec<CMat> = channels.h.iter().map(|h| h * c(scale)).collect();
        let total = state.covariance() + &state.v * state.v.adjoint();
        let mut phi = Vec::with_capacity(hn.len());
        let mut hah = Vec::with_capacity(hn.len());
        let mut constant = Vec::with_capacity(hn.len());
        let mut q = CMat::zeros(n_t, n_t);
        for (k, h) in hn.iter().enumerate() {
            let x = h * &state.w[k];
            let xx = &x * x.adjoint();
            let f = identity(h.nrows()) + h * &total * h.adjoint() - &xx;
            let f_inv = inv_hpd(&f)?;
            let a = hermitian_part(&(&f_inv - inv_hpd(&(&f + &xx))?));
            let rate = rate_lp(channels, state, k, budget.noise_user)?;
            let hv = h * &state.v;
            let fixed = identity(h.nrows()) + &hv * hv.adjoint();
            constant.push(rate - trace_re(&(&f_inv * &xx)) - trace_re(&(&a * fixed)));
            phi.push(h.adjoint() * &f_inv * x);
            let m = hermitian_part(&(h.adjoint() * a * h));
            q += &m * c(weights[k]);
            hah.push(m);
        }
        let g = channels.g.adjoint() * &state.u;
        let g_norm2 = g.norm_squared();
        let p_s = sensing_power(channels, &state.v, &state.u);
        let cap = (p_s - budget.gamma0 * budget.noise_radar * state.u.norm_squared()) / budget.gamma0;
        if !(cap >= 0.0) || !(g_norm2 > 0.0) {
            return Err(Error::InfeasibleSubproblem("the sensing constraint fails even without communication power".into()));
        }
        Ok(Self {
            hn,
            w_n: state.w.clone(),
            phi,
            hah,
            constant,
            q: hermitian_part(&q),
            weights: weights.to_vec(),
            p_max: budget.p_max,
            g_hat: &g / c(g_norm2.sqrt()),
            alpha_max: (cap / g_norm2).sqrt(),
            version: channels.version,
        })
    }

    /// Per-user bounds `R̂_{L,k}` at `w`; `channels` must be the set the
    /// subproblem was built from.
    pub fn rhat(&self, channels: &ChannelSet, w: &[CMat]) -> Result<Vec<f64>> {
        if channels.version != self.version {
            return Err(Error::Contract("precoder bound evaluated against stale channels".into()));
        }
        Ok(self.rhat_unchecked(w))
    }

    fn rhat_unchecked(&self, w: &[CMat]) -> Vec<f64> {
        (0..self.hn.len())
            .map(|k| {
                let quad: f64 = w.iter().map(|wu| trace_re(&(wu.adjoint() * &self.hah[k] * wu))).sum();
                self.constant[k] + 2.0 * inner_re(&self.phi[k], &w[k]) - quad
            })
            .collect()
    }

    /// `Σ_k w_k R̂_{L,k}`.
    pub fn objective(&self, w: &[CMat]) -> f64 {
        self.weights.iter().zip(self.rhat_unchecked(w)).map(|(a, b)| a * b).sum()
    }

    pub fn expansion_point(&self) -> &[CMat] {
        &self.w_n
    }

    /// Conjugate gradient `∂f/∂W_u* = w_u Φ_u − Q W_u`.
    fn gradient(&self, w: &[CMat]) -> Vec<CMat> {
        w.iter().enumerate().map(|(u, wu)| &self.phi[u] * c(self.weights[u]) - &self.q * wu).collect()
    }

    /// Euclidean projection onto the power ball intersected with the
    /// sensing-leakage cylinder.
    pub fn project(&self, w: &[CMat]) -> Vec<CMat> {
        project_precoders(w, &self.g_hat, self.p_max, self.alpha_max)
    }

    /// Maximizes the bound over the feasible set by monotone accelerated
    /// projected gradient ascent with step `1/λ_max(Q)`.
    pub fn solve(&self, params: &SubsolverParams) -> Result<Vec<CMat>> {
        let start = self.project(&self.w_n);
        let lipschitz = crate::linalg::hermitian_eigen(&self.q).0[0];
        if !(lipschitz > 0.0) {
            return Ok(self.w_n.clone());
        }
        let step = 1.0 / lipschitz;
        let mut x = start.clone();
        let mut fx = self.objective(&x);
        let mut y = x.clone();
        let mut t = 1.0f64;
        for _ in 0..params.max_inner {
            let grad = self.gradient(&y);
            let trial: Vec<CMat> = y.iter().zip(&grad).map(|(yi, gi)| yi + gi * c(step)).collect();
            let z = self.project(&trial);
            let fz = self.objective(&z);
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let prev = x.clone();
            if fz >= fx {
                x = z.clone();
                fx = fz;
            }
            // Length of the projected-gradient step; zero exactly at a stationary point.
            let moved: f64 = z.iter().zip(&y).map(|(a, b)| frob2(&(a - b))).sum::<f64>().sqrt();
            let size: f64 = x.iter().map(frob2).sum::<f64>().sqrt();
            // Monotone FISTA extrapolation uses both z and the kept iterate.
            y = (0..x.len())
                .map(|i| &x[i] + (&z[i] - &x[i]) * c(t / t_next) + (&x[i] - &prev[i]) * c((t - 1.0) / t_next))
                .collect();
            t = t_next;
            if moved <= params.tol_step * size.max(1e-12) {
                break;
            }
        }
        if !x.iter().all(|m| m.iter().all(|z| z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::numerical("precoder subproblem diverged"));
        }
        if fx < self.objective(&self.w_n) {
            return Ok(self.w_n.clone());
        }
        Ok(x)
    }
}

/// Projection onto `{Σ‖W_u‖² ≤ P} ∩ {Σ‖ĝᴴW_u‖² ≤ α_max²}`.
///
/// Splitting every `W_u` into its component along `ĝ` and the orthogonal rest,
/// both sets only constrain the two aggregate norms `(α, β)`, so the problem
/// reduces to projecting a point of the quarter plane onto a disk cut by the
/// line `α = α_max`.
pub fn project_precoders(w: &[CMat], g_hat: &CVec, p_max: f64, alpha_max: f64) -> Vec<CMat> {
    let parallel: Vec<CMat> = w.iter().map(|wu| g_hat * (g_hat.adjoint() * wu)).collect();
    let alpha0: f64 = parallel.iter().map(frob2).sum::<f64>().sqrt();
    let beta0: f64 = w.iter().zip(&parallel).map(|(wu, pu)| frob2(&(wu - pu))).sum::<f64>().sqrt();
    let (alpha, beta) = project_disk_slab(alpha0, beta0, p_max, alpha_max);
    let sa = if alpha0 > 0.0 { alpha / alpha0 } else { 0.0 };
    let sb = if beta0 > 0.0 { beta / beta0 } else { 0.0 };
    w.iter().zip(&parallel).map(|(wu, pu)| pu * c(sa) + (wu - pu) * c(sb)).collect()
}

fn project_disk_slab(a0: f64, b0: f64, p: f64, am: f64) -> (f64, f64) {
    let r2 = a0 * a0 + b0 * b0;
    let am = am.min(p.sqrt());
    if r2 <= p && a0 <= am {
        return (a0, b0);
    }
    let clamp = (am, b0.min((p - am * am).max(0.0).sqrt()));
    let mut best = clamp;
    if r2 > p {
        let s = (p / r2).sqrt();
        let radial = (a0 * s, b0 * s);
        let d = |q: (f64, f64)| (q.0 - a0).powi(2) + (q.1 - b0).powi(2);
        if radial.0 <= am && d(radial) < d(best) {
            best = radial;
        }
    }
    best
}

/// Which rate expression the covariance bound linearizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceMode {
    Lp,
    Zf,
}

/// Concave surrogate in the sensing covariance `V = vvᴴ` with the rank-one
/// penalty `ζ(Tr V − β_max(V^{(n)}) − Tr(χχᴴ(V − V^{(n)})))`.
///
/// Each rate is `ln|C_k + H_kVH_kᴴ| − ln|D_k + H_kVH_kᴴ|`; the second log-det
/// is linearized at `V^{(n)}`. Linear precoding has
/// `C_k = σ²I + H_kΣW_uW_uᴴH_kᴴ`, `D_k = C_k − H_kW_kW_kᴴH_kᴴ`; zero forcing
/// has `C_k = (β_e² + σ²)I`, `D_k = σ²I`.
#[derive(Debug, Clone)]
pub struct CovarianceSubproblem {
    pub mode: CovarianceMode,
    hn: Vec<CMat>,
    c_k: Vec<CMat>,
    d_k: Vec<CMat>,
    b_inv: Vec<CMat>,
    b_logdet: Vec<f64>,
    v_n: CMat,
    pub beta_max: f64,
    pub chi: CVec,
    pub zeta: f64,
    weights: Vec<f64>,
    /// `κ/σ_z² = (c0 − gᴴVg)/σ_z²`.
    g: CVec,
    c0: f64,
    noise_radar: f64,
    version: u64,
}

impl CovarianceSubproblem {
    pub fn lp(channels: &ChannelSet, state: &LpState, v_n: &CMat, weights: &[f64], zeta: f64, budget: &Budget) -> Result<Self> {
        let scale = 1.0 / budget.noise_user.sqrt();
        let hn: Vec<CMat> = channels.h.iter().map(|h| h * c(scale)).collect();
        let cov = state.covariance();
        let mut c_k = Vec::new();
        let mut d_k = Vec::new();
        for (k, h) in hn.iter().enumerate() {
            let full = identity(h.nrows()) + h * &cov * h.adjoint();
            let x = h * &state.w[k];
            d_k.push(hermitian_part(&(&full - &x * x.adjoint())));
            c_k.push(hermitian_part(&full));
        }
        let g = channels.g.adjoint() * &state.u;
        let leak: f64 = state.w.iter().map(|w| (w.adjoint() * &g).norm_squared()).sum();
        let c0 = budget.gamma0 * (leak + budget.noise_radar * state.u.norm_squared());
        Self::assemble(CovarianceMode::Lp, channels.version, hn, c_k, d_k, v_n, weights, zeta, g, c0, budget.noise_radar)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn zf(
        channels: &ChannelSet,
        p_e: &CMat,
        beta: f64,
        u: &CVec,
        v_n: &CMat,
        weights: &[f64],
        zeta: f64,
        budget: &Budget,
    ) -> Result<Self> {
        let scale = 1.0 / budget.noise_user.sqrt();
        let hn: Vec<CMat> = channels.h.iter().map(|h| h * c(scale)).collect();
        let snr = beta * beta / budget.noise_user;
        let c_k = hn.iter().map(|h| identity(h.nrows()) * c(1.0 + snr)).collect();
        let d_k = hn.iter().map(|h| identity(h.nrows())).collect();
        let g = channels.g.adjoint() * u;
        let leak = (p_e.adjoint() * &g).norm_squared();
        let c0 = budget.gamma0 * (leak + budget.noise_radar * u.norm_squared());
        Self::assemble(CovarianceMode::Zf, channels.version, hn, c_k, d_k, v_n, weights, zeta, g, c0, budget.noise_radar)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        mode: CovarianceMode,
        version: u64,
        hn: Vec<CMat>,
        c_k: Vec<CMat>,
        d_k: Vec<CMat>,
        v_n: &CMat,
        weights: &[f64],
        zeta: f64,
        g: CVec,
        c0: f64,
        noise_radar: f64,
    ) -> Result<Self> {
        let (values, _) = crate::linalg::hermitian_eigen(v_n);
        if values.iter().any(|&l| l < -1e-10) {
            return Err(Error::Contract("covariance expansion point is not positive semidefinite".into()));
        }
        let mut b_inv = Vec::new();
        let mut b_logdet = Vec::new();
        for (h, d) in hn.iter().zip(&d_k) {
            let b = d + h * v_n * h.adjoint();
            b_logdet.push(logdet_hpd(&b)?);
            b_inv.push(inv_hpd(&b)?);
        }
        let (beta_max, chi) = leading_eigpair(&hermitian_part(v_n))?;
        Ok(Self {
            mode,
            hn,
            c_k,
            d_k,
            b_inv,
            b_logdet,
            v_n: v_n.clone(),
            beta_max,
            chi,
            zeta,
            weights: weights.to_vec(),
            g,
            c0,
            noise_radar,
            version,
        })
    }

    fn check(&self, channels: &ChannelSet) -> Result<()> {
        if channels.version == self.version {
            Ok(())
        } else {
            Err(Error::Contract("covariance bound evaluated against stale channels".into()))
        }
    }

    /// Per-user linearized rates (`R̄` for linear precoding).
    pub fn rbar(&self, channels: &ChannelSet, v: &CMat) -> Result<Vec<f64>> {
        self.check(channels)?;
        self.bounds(v)
    }

    /// Per-user linearized rates (`R̃` for zero forcing).
    pub fn rtilde(&self, channels: &ChannelSet, v: &CMat) -> Result<Vec<f64>> {
        self.rbar(channels, v)
    }

    /// Exact rates as functions of a general covariance `V`.
    pub fn rates(&self, v: &CMat) -> Result<Vec<f64>> {
        self.hn
            .iter()
            .zip(self.c_k.iter().zip(&self.d_k))
            .map(|(h, (ck, dk))| {
                let hvh = h * v * h.adjoint();
                Ok(logdet_hpd(&(ck + &hvh))? - logdet_hpd(&(dk + &hvh))?)
            })
            .collect()
    }

    fn bounds(&self, v: &CMat) -> Result<Vec<f64>> {
        let dv = v - &self.v_n;
        self.hn
            .iter()
            .enumerate()
            .map(|(k, h)| {
                let a = logdet_hpd(&(&self.c_k[k] + h * v * h.adjoint()))?;
                let lin = trace_re(&(&self.b_inv[k] * h * &dv * h.adjoint()));
                Ok(a - self.b_logdet[k] - lin)
            })
            .collect()
    }

    /// `ζ(Tr V − χᴴVχ)`, equal to the linearized rank penalty because
    /// `β_max(V^{(n)}) = χᴴV^{(n)}χ`.
    pub fn penalty(&self, v: &CMat) -> f64 {
        self.zeta * (trace_re(v) - quad_form(v, &self.chi))
    }

    /// Penalized surrogate `Σ w_k R̄_k(V) − penalty(V)`.
    pub fn objective(&self, v: &CMat) -> Result<f64> {
        let b = self.bounds(v)?;
        Ok(self.weights.iter().zip(b).map(|(w, r)| w * r).sum::<f64>() - self.penalty(v))
    }

    /// Sensing constraint normalized by the radar noise power.
    pub fn kappa(&self, v: &CMat) -> f64 {
        (self.c0 - quad_form(v, &self.g)) / self.noise_radar
    }

    fn gradient(&self, v: &CMat) -> Result<CMat> {
        let n = v.nrows();
        let mut grad = (identity(n) - &self.chi * self.chi.adjoint()) * c(-self.zeta);
        for (k, h) in self.hn.iter().enumerate() {
            let a_inv = inv_hpd(&(&self.c_k[k] + h * v * h.adjoint()))?;
            grad += h.adjoint() * (a_inv - &self.b_inv[k]) * h * c(self.weights[k]);
        }
        Ok(hermitian_part(&grad))
    }

    pub fn expansion_point(&self) -> &CMat {
        &self.v_n
    }

    /// Maximizes the penalized surrogate over `{V ⪰ 0, Tr V ≤ 1, κ(V) ≤ 0}`.
    ///
    /// The linear sensing constraint is handled by an augmented Lagrangian;
    /// each inner problem is solved by projected gradient ascent with
    /// backtracking on the capped spectraplex. The returned point is made
    /// exactly feasible by moving back toward the (feasible) expansion point,
    /// and the expansion point itself is returned if that loses objective.
    pub fn solve(&self, params: &SubsolverParams) -> Result<CMat> {
        let (v, _) = self.solve_warm(params, 0.0)?;
        Ok(v)
    }

    /// As [`solve`](Self::solve), starting the multiplier at `lambda0` and
    /// returning the final multiplier for warm starts.
    pub fn solve_warm(&self, params: &SubsolverParams, lambda0: f64) -> Result<(CMat, f64)> {
        let kappa_n = self.kappa(&self.v_n);
        if kappa_n > params.tol_feas {
            return Err(Error::InfeasibleSubproblem("covariance expansion point violates the sensing constraint".into()));
        }
        let ggh = &self.g * self.g.adjoint() * c(1.0 / self.noise_radar);
        let mut lambda = lambda0.max(0.0);
        let mut rho = 1.0f64;
        let mut v = project_capped_spectraplex(&self.v_n, 1.0);
        let mut step = 1.0;
        let mut last_kappa = self.kappa(&v);
        for _ in 0..params.max_alm {
            let aug = |x: &CMat| -> Result<f64> {
                let k = self.kappa(x);
                let m = (lambda + rho * k).max(0.0);
                Ok(self.objective(x)? - (m * m - lambda * lambda) / (2.0 * rho))
            };
            let mut fv = aug(&v)?;
            for _ in 0..params.max_inner {
                let m = (lambda + rho * self.kappa(&v)).max(0.0);
                let grad = self.gradient(&v)? + &ggh * c(m);
                let mut accepted = None;
                for _ in 0..60 {
                    let cand = project_capped_spectraplex(&(&v + &grad * c(step)), 1.0);
                    let diff = &cand - &v;
                    let fc = aug(&cand)?;
                    if fc >= fv + inner_re(&grad, &diff) - frob2(&diff) / (2.0 * step) - 1e-15 * fv.abs() {
                        accepted = Some((cand, fc, frob2(&diff).sqrt()));
                        break;
                    }
                    step *= 0.5;
                }
                let Some((cand, fc, moved)) = accepted else { break };
                v = cand;
                let gain = fc - fv;
                fv = fc;
                step *= 1.5;
                if moved <= params.tol_step * frob2(&v).sqrt().max(1e-12) || gain.abs() <= 1e-13 * fv.abs().max(1.0) {
                    break;
                }
            }
            let k = self.kappa(&v);
            lambda = (lambda + rho * k).max(0.0);
            if k <= params.tol_feas && (k - last_kappa).abs() <= params.tol_feas.max(1e-6 * k.abs()) {
                break;
            }
            if k > 0.25 * last_kappa.max(params.tol_feas) {
                rho = (rho * params.penalty_growth).min(params.penalty_cap);
            }
            last_kappa = k;
        }
        let mut out = v;
        let k = self.kappa(&out);
        if k > 0.0 {
            // κ is linear in V: pull back along the segment to the expansion point.
            let t = if k > kappa_n { (-kappa_n / (k - kappa_n)).clamp(0.0, 1.0) } else { 0.0 };
            out = &self.v_n + (&out - &self.v_n) * c(t);
            if self.kappa(&out) > params.tol_feas {
                out = self.v_n.clone();
            }
        }
        if self.objective(&out)? < self.objective(&self.v_n)? {
            return Ok((self.v_n.clone(), lambda));
        }
        Ok((hermitian_part(&out), lambda))
    }
}
