//! Geometry of the deployment and the near-field channels built from it.
//!
//! Coordinates follow a right-handed frame where the `xz`-plane is the ground.
//! The base-station transmit region and receive array lie in the `xy`-plane
//! (`z = 0`); each user region is a square parallel to the `xy`-plane at its
//! own fixed height. Movable antennas only move in `x` and `y`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, CMat, CVec, C64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dist(&self, other: &Vec3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn translate(&self, by: &Vec3) -> Vec3 {
        Vec3::new(self.x + by.x, self.y + by.y, self.z + by.z)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Square region parallel to the `xy`-plane, at height `center.z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SquareRegion {
    pub center: Vec3,
    pub side: f64,
}

impl SquareRegion {
    pub fn new(center: Vec3, side: f64) -> Self {
        Self { center, side }
    }

    pub fn x_bounds(&self) -> (f64, f64) {
        (self.center.x - self.side / 2.0, self.center.x + self.side / 2.0)
    }

    pub fn y_bounds(&self) -> (f64, f64) {
        (self.center.y - self.side / 2.0, self.center.y + self.side / 2.0)
    }

    pub fn contains(&self, p: &Vec3, tol: f64) -> bool {
        let (x0, x1) = self.x_bounds();
        let (y0, y1) = self.y_bounds();
        p.x >= x0 - tol && p.x <= x1 + tol && p.y >= y0 - tol && p.y <= y1 + tol
    }
}

/// Uniform linear array parallel to the `x`-axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReceiveUla {
    pub midpoint: Vec3,
    pub length: f64,
}

/// How the free-space path-loss factors enter the channel entries.
///
/// `Amplitude` scales channel entries by the square root of the power path
/// loss `λ²/(4πd)²`; `Literal` multiplies them by the power path loss itself.
/// Only `Amplitude` yields link budgets in which a sensing threshold of
/// `γ₀ = 0.01` is attainable at `-100 dB` noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GainConvention {
    #[default]
    Amplitude,
    Literal,
}

impl GainConvention {
    pub fn amplitude(self, power_loss: f64) -> f64 {
        match self {
            GainConvention::Amplitude => power_loss.sqrt(),
            GainConvention::Literal => power_loss,
        }
    }
}

/// Immutable physical description of one deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Carrier wavelength in meters.
    pub wavelength: f64,
    pub n_t: usize,
    pub n_r: usize,
    /// Number of users `K`.
    pub n_users: usize,
    /// Antennas per user (every user has the same count).
    pub n_u: usize,
    pub tx_region: SquareRegion,
    pub rx_ula: ReceiveUla,
    pub user_regions: Vec<SquareRegion>,
    pub target: Vec3,
    /// Noise power at every user, in watts.
    pub noise_user: f64,
    /// Noise power at the sensing receiver, in watts.
    pub noise_radar: f64,
    pub p_max: f64,
    pub gamma0: f64,
    pub d_min: f64,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub gain: GainConvention,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidScenario(msg.to_string()));
        if !(self.wavelength > 0.0) {
            return bad("wavelength must be positive");
        }
        if self.n_t < 1 {
            return bad("N_t must be at least 1");
        }
        if self.n_r < 2 {
            return bad("N_r must be at least 2");
        }
        if self.n_users < 1 || self.n_u < 1 {
            return bad("need at least one user with at least one antenna");
        }
        if self.user_regions.len() != self.n_users {
            return bad("one region per user is required");
        }
        if self.weights.len() != self.n_users {
            return bad("one weight per user is required");
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return bad("weights must be non-negative");
        }
        if !(self.gamma0 > 0.0) {
            return bad("gamma0 must be positive");
        }
        if !(self.d_min > 0.0) {
            return bad("d_min must be positive");
        }
        if !(self.noise_user > 0.0) || !(self.noise_radar > 0.0) {
            return bad("noise powers must be positive");
        }
        if !(self.p_max > 0.0) {
            return bad("P_max must be positive");
        }
        if !(self.rx_ula.length > 0.0) {
            return bad("receive array length must be positive");
        }
        let regions = std::iter::once(&self.tx_region).chain(self.user_regions.iter());
        for r in regions {
            if !(r.side > 0.0) || !r.center.is_finite() {
                return bad("regions need a finite center and positive side");
            }
        }
        if !self.target.is_finite() {
            return bad("target position must be finite");
        }
        Ok(())
    }
}

/// Current movable-antenna coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    /// Base-station transmit antennas.
    pub t: Vec<Vec3>,
    /// `q[k][b]` is antenna `b` of user `k`.
    pub q: Vec<Vec<Vec3>>,
}

impl Placement {
    /// Checks region membership and minimum spacing for every array.
    pub fn is_feasible(&self, scenario: &Scenario, tol: f64) -> bool {
        if self.t.len() != scenario.n_t || self.q.len() != scenario.n_users {
            return false;
        }
        let tx_ok = self.t.iter().all(|p| scenario.tx_region.contains(p, tol))
            && min_spacing_ok(&self.t, scenario.d_min - tol);
        tx_ok
            && self.q.iter().zip(&scenario.user_regions).all(|(qk, region)| {
                qk.len() == scenario.n_u
                    && qk.iter().all(|p| region.contains(p, tol))
                    && min_spacing_ok(qk, scenario.d_min - tol)
            })
    }
}

/// Channel matrices derived from a [`Placement`].
#[derive(Debug, Clone)]
pub struct ChannelSet {
    /// `h[k]` is the `N_u × N_t` channel of user `k`.
    pub h: Vec<CMat>,
    /// `N_r × N_t` round-trip sensing channel.
    pub g: CMat,
    pub f_t: CVec,
    pub f_r: CVec,
    /// Amplitude coefficient of each user channel (`|H_k(b, m)| = rho[k]`).
    pub rho: Vec<f64>,
    /// Amplitude coefficient of the sensing channel.
    pub rho_s: f64,
    pub rx: Vec<Vec3>,
    /// Bumped every time any matrix is rebuilt.
    pub version: u64,
}

impl ChannelSet {
    pub fn build(scenario: &Scenario, placement: &Placement) -> Result<Self> {
        scenario.validate()?;
        let rx = receive_ula_positions(scenario)?;
        let lambda = scenario.wavelength;
        let rho = scenario
            .user_regions
            .iter()
            .map(|r| {
                path_loss_comm(&scenario.tx_region.center, &r.center, lambda)
                    .map(|p| scenario.gain.amplitude(p))
            })
            .collect::<Result<Vec<_>>>()?;
        let rho_s = scenario.gain.amplitude(path_loss_sense(
            &scenario.tx_region.center,
            &scenario.rx_ula.midpoint,
            &scenario.target,
            lambda,
        )?);
        let h = placement
            .q
            .iter()
            .zip(&rho)
            .map(|(qk, &r)| build_user_channel(&placement.t, qk, r, lambda))
            .collect::<Result<Vec<_>>>()?;
        let (f_t, f_r, g) = build_sensing_channel(&placement.t, &rx, &scenario.target, rho_s, lambda)?;
        Ok(Self { h, g, f_t, f_r, rho, rho_s, rx, version: 0 })
    }

    pub fn n_t(&self) -> usize {
        self.g.ncols()
    }

    pub fn n_r(&self) -> usize {
        self.g.nrows()
    }

    pub fn n_users(&self) -> usize {
        self.h.len()
    }

    /// Stacked channel `H_e = [H_1; …; H_K]`.
    pub fn stacked(&self) -> CMat {
        let rows: usize = self.h.iter().map(|h| h.nrows()).sum();
        let mut he = CMat::zeros(rows, self.n_t());
        let mut r0 = 0;
        for hk in &self.h {
            he.view_mut((r0, 0), (hk.nrows(), hk.ncols())).copy_from(hk);
            r0 += hk.nrows();
        }
        he
    }
}

/// Scenario, placement and the channels for that placement, kept in sync.
#[derive(Debug, Clone)]
pub struct System {
    pub scenario: Scenario,
    pub placement: Placement,
    pub channels: ChannelSet,
}

impl System {
    pub fn new(scenario: Scenario, placement: Placement) -> Result<Self> {
        let channels = ChannelSet::build(&scenario, &placement)?;
        Ok(Self { scenario, placement, channels })
    }

    /// Moves user `k`'s antennas and rebuilds `H_k`.
    pub fn set_user_positions(&mut self, k: usize, q: Vec<Vec3>) -> Result<()> {
        let h = build_user_channel(&self.placement.t, &q, self.channels.rho[k], self.scenario.wavelength)?;
        self.placement.q[k] = q;
        self.channels.h[k] = h;
        self.channels.version += 1;
        Ok(())
    }

    /// Moves the base-station transmit antennas and rebuilds every channel.
    pub fn set_bs_positions(&mut self, t: Vec<Vec3>) -> Result<()> {
        let lambda = self.scenario.wavelength;
        let h = self
            .placement
            .q
            .iter()
            .zip(&self.channels.rho)
            .map(|(qk, &r)| build_user_channel(&t, qk, r, lambda))
            .collect::<Result<Vec<_>>>()?;
        let (f_t, f_r, g) =
            build_sensing_channel(&t, &self.channels.rx, &self.scenario.target, self.channels.rho_s, lambda)?;
        self.placement.t = t;
        self.channels.h = h;
        self.channels.f_t = f_t;
        self.channels.f_r = f_r;
        self.channels.g = g;
        self.channels.version += 1;
        Ok(())
    }
}

/// `e^{j 2π d / λ}`, with the phase reduced modulo one wavelength first so
/// long links (thousands of wavelengths) keep full phase accuracy.
pub fn phase_factor(d: f64, lambda: f64) -> C64 {
    let cycles = (d / lambda).fract();
    C64::from_polar(1.0, 2.0 * PI * cycles)
}

pub fn receive_ula_positions(scenario: &Scenario) -> Result<Vec<Vec3>> {
    let n = scenario.n_r;
    if n < 2 {
        return Err(Error::InvalidScenario("receive array needs N_r >= 2".into()));
    }
    let o = scenario.rx_ula.midpoint;
    let len = scenario.rx_ula.length;
    Ok((0..n)
        .map(|i| Vec3::new(o.x - len / 2.0 + i as f64 * len / (n - 1) as f64, o.y, o.z))
        .collect())
}

/// Free-space power path loss `λ²/(4π d)²` between two region centers.
pub fn path_loss_comm(o_t: &Vec3, o_k: &Vec3, lambda: f64) -> Result<f64> {
    let d = o_t.dist(o_k);
    if !(d > 0.0) {
        return Err(Error::DegenerateGeometry("transmitter and user coincide".into()));
    }
    Ok((lambda / (4.0 * PI * d)).powi(2))
}

/// Round-trip power coefficient `λ²/((4π)³ R_t² R_r²)`.
pub fn path_loss_sense(o_t: &Vec3, o_r: &Vec3, s: &Vec3, lambda: f64) -> Result<f64> {
    let rt = o_t.dist(s);
    let rr = o_r.dist(s);
    if !(rt > 0.0 && rr > 0.0) {
        return Err(Error::DegenerateGeometry("target coincides with an array".into()));
    }
    Ok(lambda * lambda / ((4.0 * PI).powi(3) * rt * rt * rr * rr))
}

/// Grid the link phase is referenced to, in meters (a power of two so
/// anchors and offsets are exact).
const ANCHOR_GRID: f64 = 1.0 / 16.0;

/// `e^{j2π‖a − b‖/λ}`, or `None` when the points coincide.
///
/// Both points are split into a coarse anchor on a dyadic grid plus an
/// exact offset. The anchor-to-anchor distance `d_0` absorbs the large
/// part of the path, and `d − d_0` is formed from the offsets directly, so
/// moving an antenna by a nanometer changes the phase by the right amount
/// instead of by the roundoff of a tens-of-meters distance.
fn link_phase(a: &Vec3, b: &Vec3, lambda: f64) -> Option<C64> {
    let anchor = |x: f64| (x / ANCHOR_GRID).round() * ANCHOR_GRID;
    let c = [anchor(b.x) - anchor(a.x), anchor(b.y) - anchor(a.y), anchor(b.z) - anchor(a.z)];
    let e = [
        (b.x - anchor(b.x)) - (a.x - anchor(a.x)),
        (b.y - anchor(b.y)) - (a.y - anchor(a.y)),
        (b.z - anchor(b.z)) - (a.z - anchor(a.z)),
    ];
    let d0 = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
    let excess = (0..3).map(|i| e[i] * (2.0 * c[i] + e[i])).sum::<f64>();
    let d = (d0 * d0 + excess).max(0.0).sqrt();
    if !(d > 0.0) {
        return None;
    }
    let delta = excess / (d + d0);
    let cycles = (d0 / lambda).fract() + delta / lambda;
    Some(C64::from_polar(1.0, 2.0 * PI * cycles.fract()))
}

/// `H_k(b, m) = rho · e^{j2π‖t_m − q_b‖/λ}`, shape `N_u × N_t`.
pub fn build_user_channel(t: &[Vec3], q_k: &[Vec3], rho: f64, lambda: f64) -> Result<CMat> {
    let mut h = CMat::zeros(q_k.len(), t.len());
    for (b, q) in q_k.iter().enumerate() {
        for (m, tm) in t.iter().enumerate() {
            let ph = link_phase(tm, q, lambda)
                .ok_or_else(|| Error::DegenerateGeometry(format!("transmit antenna {m} coincides with user antenna {b}")))?;
            h[(b, m)] = ph * rho;
        }
    }
    Ok(h)
}

fn response(points: &[Vec3], s: &Vec3, lambda: f64) -> Result<CVec> {
    let mut out = CVec::zeros(points.len());
    for (i, p) in points.iter().enumerate() {
        out[i] = link_phase(p, s, lambda)
            .ok_or_else(|| Error::DegenerateGeometry(format!("antenna {i} coincides with the target")))?;
    }
    Ok(out)
}

/// Returns `(f_t, f_r, G)` with `G = rho_s · f_r f_t^H`.
pub fn build_sensing_channel(
    t: &[Vec3],
    rx: &[Vec3],
    s: &Vec3,
    rho_s: f64,
    lambda: f64,
) -> Result<(CVec, CVec, CMat)> {
    let f_t = response(t, s, lambda)?;
    let f_r = response(rx, s, lambda)?;
    let g = &f_r * f_t.adjoint() * c(rho_s);
    Ok((f_t, f_r, g))
}

/// Clamps `x` and `y` independently into the region; `z` is untouched.
pub fn project_to_region(p: &Vec3, region: &SquareRegion) -> Vec3 {
    let (x0, x1) = region.x_bounds();
    let (y0, y1) = region.y_bounds();
    Vec3::new(p.x.clamp(x0, x1), p.y.clamp(y0, y1), p.z)
}

pub fn min_spacing_ok(positions: &[Vec3], d_min: f64) -> bool {
    for (i, a) in positions.iter().enumerate() {
        for b in &positions[i + 1..] {
            if a.dist(b) < d_min {
                return false;
            }
        }
    }
    true
}

/// Flattens planar coordinates as `[x_0, y_0, x_1, y_1, …]`.
pub fn flatten_xy(points: &[Vec3]) -> Vec<f64> {
    points.iter().flat_map(|p| [p.x, p.y]).collect()
}

/// Inverse of [`flatten_xy`]; `z` values are taken from `template`.
pub fn unflatten_xy(coords: &[f64], template: &[Vec3]) -> Vec<Vec3> {
    template
        .iter()
        .enumerate()
        .map(|(i, p)| Vec3::new(coords[2 * i], coords[2 * i + 1], p.z))
        .collect()
}
