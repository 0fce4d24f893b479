use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GainConvention;
use crate::lp::AlgoParams;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Convergence,
    #[default]
    Weights,
    Power,
    Nk,
    Gamma0,
    Gradcheck,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Convergence => "convergence",
            Preset::Weights => "weights",
            Preset::Power => "power",
            Preset::Nk => "nk",
            Preset::Gamma0 => "gamma0",
            Preset::Gradcheck => "gradcheck",
        }
    }
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [Preset::Convergence, Preset::Weights, Preset::Power, Preset::Nk, Preset::Gamma0, Preset::Gradcheck]
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "LP-MA")]
    LpMa,
    #[serde(rename = "ZF-MA")]
    ZfMa,
    #[serde(rename = "LP-FIX")]
    LpFix,
    #[serde(rename = "ZF-FIX")]
    ZfFix,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::LpMa, Scheme::ZfMa, Scheme::LpFix, Scheme::ZfFix];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::LpMa => "LP-MA",
            Scheme::ZfMa => "ZF-MA",
            Scheme::LpFix => "LP-FIX",
            Scheme::ZfFix => "ZF-FIX",
        }
    }

    pub fn is_zf(self) -> bool {
        matches!(self, Scheme::ZfMa | Scheme::ZfFix)
    }

    pub fn is_movable(self) -> bool {
        matches!(self, Scheme::LpMa | Scheme::ZfMa)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let up = s.to_ascii_uppercase();
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == up)
            .ok_or_else(|| Error::Config(format!("unknown scheme {s:?} (expected LP-MA, ZF-MA, LP-FIX or ZF-FIX)")))
    }
}

/// Array sizes and trial count defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// `N_t=8, N_r=4, K=2, N_u=2`, 20 trials.
    #[default]
    Desk,
    /// `N_t=16, N_r=8, K=2, N_u=4`, 50 trials.
    Paper,
}

impl FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(Error::Config(format!("unknown profile {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(Error::Config(format!("unknown format {s:?}"))),
        }
    }
}

/// Flat experiment description. Unset scenario fields take the profile or
/// default geometry values; unknown keys are rejected when parsing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub preset: Preset,
    /// Empty means the preset's default scheme set.
    pub schemes: Vec<Scheme>,
    pub trials: Option<usize>,
    pub seed: u64,
    /// Empty means the preset's default grid.
    pub sweep: Vec<f64>,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub threads: Option<usize>,

    pub n_t: Option<usize>,
    pub n_r: Option<usize>,
    pub n_users: Option<usize>,
    pub n_u: Option<usize>,
    pub wavelength: Option<f64>,
    /// Distance from the transmit region center to each user region center.
    pub d_tk: Option<f64>,
    pub p_max: Option<f64>,
    pub gamma0: Option<f64>,
    pub noise_user: Option<f64>,
    pub noise_radar: Option<f64>,
    pub d_min: Option<f64>,
    pub tx_side: Option<f64>,
    pub rx_length: Option<f64>,
    pub user_side: Option<f64>,
    pub weights: Option<Vec<f64>>,
    pub gain: Option<GainConvention>,

    pub max_outer: Option<usize>,
    pub eps_f: Option<f64>,
    pub zeta: Option<f64>,
}

/// Scenario inputs with every default filled in.
#[derive(Debug, Clone)]
pub(crate) struct Resolved {
    pub n_t: usize,
    pub n_r: usize,
    pub n_users: usize,
    pub n_u: usize,
    pub wavelength: f64,
    pub d_tk: f64,
    pub p_max: f64,
    pub gamma0: f64,
    pub noise_user: f64,
    pub noise_radar: f64,
    pub d_min: Option<f64>,
    pub tx_side: f64,
    pub rx_length: f64,
    pub user_side: f64,
    pub weights: Vec<f64>,
    pub gain: GainConvention,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn trials(&self) -> usize {
        self.trials.unwrap_or(match self.profile {
            Profile::Desk => 20,
            Profile::Paper => 50,
        })
    }

    pub fn schemes(&self) -> Vec<Scheme> {
        if !self.schemes.is_empty() {
            return self.schemes.clone();
        }
        match self.preset {
            Preset::Convergence => vec![Scheme::LpMa, Scheme::ZfMa],
            Preset::Gradcheck => vec![],
            _ => Scheme::ALL.to_vec(),
        }
    }

    pub fn sweep_grid(&self) -> Vec<f64> {
        if !self.sweep.is_empty() {
            return self.sweep.clone();
        }
        match self.preset {
            Preset::Convergence => vec![10.0, 20.0, 30.0],
            Preset::Weights => (1..=9).map(|i| i as f64 / 10.0).collect(),
            Preset::Power => vec![0.1, 0.2, 0.5, 1.0, 2.0],
            Preset::Nk => match self.profile {
                Profile::Desk => (1..=4).map(f64::from).collect(),
                Profile::Paper => (1..=6).map(f64::from).collect(),
            },
            Preset::Gamma0 => vec![0.001, 0.003, 0.01, 0.03, 0.1],
            Preset::Gradcheck => vec![0.0],
        }
    }

    pub fn algo_params(&self) -> AlgoParams {
        let mut p = AlgoParams::default();
        if let Some(x) = self.max_outer {
            p.max_outer = x;
        }
        if let Some(x) = self.eps_f {
            p.eps_f = x;
        }
        if let Some(x) = self.zeta {
            p.zeta = x;
        }
        p
    }

    pub(crate) fn resolved(&self) -> Resolved {
        let (n_t, n_r, n_users, n_u) = match self.profile {
            Profile::Desk => (8, 4, 2, 2),
            Profile::Paper => (16, 8, 2, 4),
        };
        let n_users = self.n_users.unwrap_or(n_users);
        Resolved {
            n_t: self.n_t.unwrap_or(n_t),
            n_r: self.n_r.unwrap_or(n_r),
            n_users,
            n_u: self.n_u.unwrap_or(n_u),
            wavelength: self.wavelength.unwrap_or(0.01),
            d_tk: self.d_tk.unwrap_or(30.0),
            p_max: self.p_max.unwrap_or(1.0),
            gamma0: self.gamma0.unwrap_or(0.01),
            noise_user: self.noise_user.unwrap_or(1e-10),
            noise_radar: self.noise_radar.unwrap_or(1e-10),
            d_min: self.d_min,
            tx_side: self.tx_side.unwrap_or(1.0),
            rx_length: self.rx_length.unwrap_or(1.0),
            user_side: self.user_side.unwrap_or(0.15),
            weights: self.weights.clone().unwrap_or_else(|| vec![1.0 / n_users as f64; n_users]),
            gain: self.gain.unwrap_or_default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials() == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        let grid = self.sweep_grid();
        if grid.is_empty() || grid.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("sweep grid must be non-empty and finite".into()));
        }
        if self.preset != Preset::Gradcheck && self.schemes().is_empty() {
            return Err(Error::Config("no scheme selected".into()));
        }
        if self.preset == Preset::Weights {
            if self.resolved().n_users != 2 {
                return Err(Error::Config("the weights preset needs exactly two users".into()));
            }
            if grid.iter().any(|w| !(0.0..=1.0).contains(w)) {
                return Err(Error::Config("weight w1 must lie in [0, 1] so that w1 + w2 = 1".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_toml_parses() {
        let cfg = ExperimentConfig::from_toml_str(
            "preset = \"power\"\nschemes = [\"LP-MA\", \"ZF-FIX\"]\ntrials = 3\nseed = 9\nsweep = [0.1, 1.0]\np_max = 2.0\n",
        )
        .unwrap();
        assert_eq!(cfg.preset, Preset::Power);
        assert_eq!(cfg.schemes, vec![Scheme::LpMa, Scheme::ZfFix]);
        assert_eq!(cfg.trials(), 3);
        assert_eq!(cfg.sweep_grid(), vec![0.1, 1.0]);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(matches!(ExperimentConfig::from_toml_str("bogus = 1\n"), Err(Error::Config(_))));
    }

    #[test]
    fn profile_defaults() {
        let d = ExperimentConfig::default();
        assert_eq!(d.trials(), 20);
        let r = d.resolved();
        assert_eq!((r.n_t, r.n_r, r.n_users, r.n_u), (8, 4, 2, 2));
        let p = ExperimentConfig { profile: Profile::Paper, ..d };
        assert_eq!(p.trials(), 50);
        let r = p.resolved();
        assert_eq!((r.n_t, r.n_r, r.n_users, r.n_u), (16, 8, 2, 4));
    }

    #[test]
    fn weights_grid_is_paired() {
        let cfg = ExperimentConfig::default();
        let grid = cfg.sweep_grid();
        assert_eq!(grid.len(), 9);
        assert!((grid[0] - 0.1).abs() < 1e-15 && (grid[8] - 0.9).abs() < 1e-15);
        let bad = ExperimentConfig { sweep: vec![1.5], ..cfg };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_trials_rejected() {
        assert!(ExperimentConfig { trials: Some(0), ..Default::default() }.validate().is_err());
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert_eq!("lp-ma".parse::<Scheme>().unwrap(), Scheme::LpMa);
        assert!("LP".parse::<Scheme>().is_err());
    }
}
