//! Closed-form performance quantities: achievable rates, sensing SINR, the
//! zero-forcing precoder and the scalar sensing constraints `κ_l`, `κ_z`.
//!
//! Rates are in nats. Every log-determinant is evaluated on the noise-normalized
//! matrix (`A/σ²`) so the arguments stay well scaled at `-100 dB` noise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ChannelSet;
use crate::linalg::{c, condition_number_hpd, frob2, identity, inv_hpd, logdet_hpd, trace_re, CMat, CVec};

/// Condition-number ceiling for `H_e H_eᴴ` beyond which zero forcing is refused.
pub const ZF_CONDITION_LIMIT: f64 = 1e12;

/// Optimization variables of the linear-precoding design.
#[derive(Debug, Clone, PartialEq)]
pub struct LpState {
    /// `w[k]` is user `k`'s `N_t × N_u` precoder.
    pub w: Vec<CMat>,
    pub v: CVec,
    pub u: CVec,
}

impl LpState {
    /// `Tr(Σ_k W_k W_kᴴ)`.
    pub fn power(&self) -> f64 {
        self.w.iter().map(frob2).sum()
    }

    /// `Σ_k W_k W_kᴴ`.
    pub fn covariance(&self) -> CMat {
        let n = self.v.len();
        self.w.iter().fold(CMat::zeros(n, n), |acc, wk| acc + wk * wk.adjoint())
    }
}

/// Optimization variables of the zero-forcing design plus the derived
/// precoder, tagged with the channel version it was computed for.
#[derive(Debug, Clone)]
pub struct ZfState {
    pub v: CVec,
    pub u: CVec,
    pub p_e: CMat,
    pub beta: f64,
    pub version: u64,
}

impl ZfState {
    pub fn new(channels: &ChannelSet, p_max: f64, v: CVec, u: CVec) -> Result<Self> {
        let (p_e, beta) = zf_precoder(channels, p_max)?;
        Ok(Self { v, u, p_e, beta, version: channels.version })
    }

    pub fn is_fresh(&self, channels: &ChannelSet) -> bool {
        self.version == channels.version
    }

    pub fn refresh(&mut self, channels: &ChannelSet, p_max: f64) -> Result<()> {
        let (p_e, beta) = zf_precoder(channels, p_max)?;
        self.p_e = p_e;
        self.beta = beta;
        self.version = channels.version;
        Ok(())
    }

    fn ensure_fresh(&self, channels: &ChannelSet) -> Result<()> {
        if self.is_fresh(channels) {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "zero-forcing precoder computed for channel version {} but channels are at {}",
                self.version, channels.version
            )))
        }
    }
}

/// Which optimization block produced a trace record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Init,
    Combiner,
    Precoder,
    Beam,
    User(usize),
    Bs,
}

/// Snapshot taken after every optimization block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub block: Block,
    /// Weighted sum rate in nats/s/Hz.
    pub wsr: f64,
    pub gamma_s: f64,
    /// Sensing constraint value normalized by the radar noise power.
    pub kappa: f64,
    pub power: f64,
    pub rates: Vec<f64>,
    /// False when the block's output was rejected and the previous state kept.
    pub accepted: bool,
}

fn finite(x: f64, what: &str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::numerical(format!("{what} is not finite")))
    }
}

fn scaled_gram(h: &CMat, t: &CMat, noise: f64) -> CMat {
    let n = h.nrows();
    identity(n) + h * t * h.adjoint() * c(1.0 / noise)
}

/// `R_{L,k}` for user `k`.
pub fn rate_lp(channels: &ChannelSet, state: &LpState, k: usize, noise: f64) -> Result<f64> {
    let total = state.covariance() + &state.v * state.v.adjoint();
    rate_lp_with(channels, state, k, noise, &total)
}

fn rate_lp_with(channels: &ChannelSet, state: &LpState, k: usize, noise: f64, total: &CMat) -> Result<f64> {
    let h = &channels.h[k];
    let wk = &state.w[k];
    let t2 = total - wk * wk.adjoint();
    let a1 = scaled_gram(h, total, noise);
    let a2 = scaled_gram(h, &t2, noise);
    let r = logdet_hpd(&a1)? - logdet_hpd(&a2)?;
    finite(r.max(0.0), "linear-precoding rate")
}

/// Rates of every user under linear precoding.
pub fn rates_lp(channels: &ChannelSet, state: &LpState, noise: f64) -> Result<Vec<f64>> {
    let total = state.covariance() + &state.v * state.v.adjoint();
    (0..channels.n_users()).map(|k| rate_lp_with(channels, state, k, noise, &total)).collect()
}

/// `P_s = |uᴴ G v|²`.
pub fn sensing_power(channels: &ChannelSet, v: &CVec, u: &CVec) -> f64 {
    (u.adjoint() * &channels.g * v)[(0, 0)].norm_sqr()
}

/// `Σ_k ‖W_kᴴ Gᴴ u‖²`, the communication power leaking into the radar output.
fn leakage(channels: &ChannelSet, w: &[CMat], u: &CVec) -> f64 {
    let g = channels.g.adjoint() * u;
    w.iter().map(|wk| (wk.adjoint() * &g).norm_squared()).sum()
}

fn sinr(signal: f64, leak: f64, u: &CVec, noise_radar: f64, what: &str) -> Result<f64> {
    finite(signal / (leak + noise_radar * u.norm_squared()), what)
}

pub fn sinr_lp(channels: &ChannelSet, state: &LpState, noise_radar: f64) -> Result<f64> {
    let signal = sensing_power(channels, &state.v, &state.u);
    sinr(signal, leakage(channels, &state.w, &state.u), &state.u, noise_radar, "sensing SINR")
}

/// `κ_l = uᴴG(γ₀ΣW_uW_uᴴ − vvᴴ)Gᴴu + γ₀σ_z²uᴴu`; non-positive exactly when the
/// sensing SINR meets `γ₀` (for unit `u`).
pub fn kappa_l(channels: &ChannelSet, w: &[CMat], v: &CVec, u: &CVec, gamma0: f64, noise_radar: f64) -> f64 {
    gamma0 * leakage(channels, w, u) - sensing_power(channels, v, u) + gamma0 * noise_radar * u.norm_squared()
}

/// Zero-forcing precoder `P_e = β_e H_eᴴ(H_eH_eᴴ)^{-1}` with `β_e` set so that
/// `Tr(P_e P_eᴴ) = P_max`.
pub fn zf_precoder(channels: &ChannelSet, p_max: f64) -> Result<(CMat, f64)> {
    let he = channels.stacked();
    if he.nrows() > he.ncols() {
        return Err(Error::InvalidScenario(format!(
            "zero forcing needs K·N_u = {} ≤ N_t = {}",
            he.nrows(),
            he.ncols()
        )));
    }
    let s = &he * he.adjoint();
    // Scale out the path loss before judging conditioning.
    let scale = trace_re(&s) / s.nrows() as f64;
    if !(scale > 0.0) {
        return Err(Error::RankDeficient { condition: f64::INFINITY, limit: ZF_CONDITION_LIMIT });
    }
    let condition = condition_number_hpd(&(&s * c(1.0 / scale)));
    if !(condition < ZF_CONDITION_LIMIT) {
        return Err(Error::RankDeficient { condition, limit: ZF_CONDITION_LIMIT });
    }
    let s_inv = inv_hpd(&s)?;
    let t = trace_re(&s_inv);
    let beta = (p_max / t).sqrt();
    let p_e = he.adjoint() * s_inv * c(beta);
    let beta = finite(beta, "zero-forcing gain")?;
    audit_identity(&he, &p_e, beta, p_max);
    Ok((p_e, beta))
}

/// Worst deviations from `H_e P_e = β_e I` and `Tr(P_e P_eᴴ) = P_max` seen
/// by [`zf_precoder`] on this thread.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ZfAudit {
    pub evaluations: u64,
    /// Largest off-diagonal magnitude of `H_e P_e`, relative to `β_e`.
    pub off_diagonal: f64,
    /// Largest `|diag − β_e|/β_e`.
    pub diagonal: f64,
    /// Largest `|Tr(P_e P_eᴴ) − P_max|/P_max`.
    pub power: f64,
}

thread_local! {
    static AUDIT: std::cell::Cell<ZfAudit> = const {
        std::cell::Cell::new(ZfAudit { evaluations: 0, off_diagonal: 0.0, diagonal: 0.0, power: 0.0 })
    };
}

fn audit_identity(he: &CMat, p_e: &CMat, beta: f64, p_max: f64) {
    let id = he * p_e;
    let mut off: f64 = 0.0;
    let mut diag: f64 = 0.0;
    for i in 0..id.nrows() {
        for j in 0..id.ncols() {
            if i == j {
                diag = diag.max((id[(i, j)] - c(beta)).norm() / beta);
            } else {
                off = off.max(id[(i, j)].norm() / beta);
            }
        }
    }
    let power = (frob2(p_e) - p_max).abs() / p_max;
    AUDIT.with(|a| {
        let mut x = a.get();
        x.evaluations += 1;
        x.off_diagonal = x.off_diagonal.max(off);
        x.diagonal = x.diagonal.max(diag);
        x.power = x.power.max(power);
        a.set(x);
    });
}

/// Reads and resets this thread's zero-forcing audit.
pub fn take_zf_audit() -> ZfAudit {
    AUDIT.with(|a| a.replace(ZfAudit::default()))
}

/// `R_{Z,k} = ln|β²I + E_k| − ln|E_k|` with `E_k = H_k v vᴴ H_kᴴ + σ²I`.
pub fn rate_zf(h_k: &CMat, beta: f64, v: &CVec, noise: f64) -> Result<f64> {
    let hv = h_k * v;
    let e = identity(h_k.nrows()) + &hv * hv.adjoint() * c(1.0 / noise);
    let f = &e + identity(h_k.nrows()) * c(beta * beta / noise);
    let r = logdet_hpd(&f)? - logdet_hpd(&e)?;
    finite(r.max(0.0), "zero-forcing rate")
}

pub fn rates_zf(channels: &ChannelSet, state: &ZfState, noise: f64) -> Result<Vec<f64>> {
    state.ensure_fresh(channels)?;
    channels.h.iter().map(|h| rate_zf(h, state.beta, &state.v, noise)).collect()
}

pub fn sinr_zf(channels: &ChannelSet, state: &ZfState, noise_radar: f64) -> Result<f64> {
    state.ensure_fresh(channels)?;
    let signal = sensing_power(channels, &state.v, &state.u);
    let leak = leakage(channels, std::slice::from_ref(&state.p_e), &state.u);
    sinr(signal, leak, &state.u, noise_radar, "sensing SINR")
}

/// `κ_z`, the zero-forcing counterpart of [`kappa_l`] with `P_e` as the only
/// communication precoder.
pub fn kappa_z(channels: &ChannelSet, state: &ZfState, gamma0: f64, noise_radar: f64) -> Result<f64> {
    state.ensure_fresh(channels)?;
    Ok(kappa_l(channels, std::slice::from_ref(&state.p_e), &state.v, &state.u, gamma0, noise_radar))
}

pub fn wsr(weights: &[f64], rates: &[f64]) -> Result<f64> {
    if weights.len() != rates.len() {
        return Err(Error::Contract(format!("{} weights for {} rates", weights.len(), rates.len())));
    }
    Ok(weights.iter().zip(rates).map(|(w, r)| w * r).sum())
}

pub fn nats_to_bits(nats: f64) -> f64 {
    nats / std::f64::consts::LN_2
}
