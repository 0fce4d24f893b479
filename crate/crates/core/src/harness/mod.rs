//! Experiment presets: scenario construction, seeded placements, Monte-Carlo
//! trials for the four schemes and CSV/JSON output.

mod config;
mod emit;

use std::f64::consts::FRAC_PI_4;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{ExperimentConfig, Format, Preset, Profile, Scheme};
pub use emit::{emit, emit_gradcheck, read_csv, write_gradcheck, write_rows, CSV_HEADER, GRADCHECK_HEADER};

use crate::error::{Error, Result};
use crate::geometry::{min_spacing_ok, Placement, ReceiveUla, Scenario, SquareRegion, System, Vec3};
use crate::gradcheck::{gradient_suite, GradRow, Tolerance, DEFAULT_STEP};
use crate::linalg::CVec;
use crate::lp::{run_lp, AlgoParams, PositionMode, RunOutcome};
use crate::metrics::{nats_to_bits, sensing_power, TraceRecord};
use crate::zf::run_zf;

/// Placement draws per array before giving up.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 100;

/// Share of failed trials above which a preset run counts as failed.
pub const MAX_FAILURE_SHARE: f64 = 0.2;

/// Generator for trial `trial` of master seed `seed`: ChaCha8 keyed by the
/// seed, with the trial index selecting the stream. Streams never overlap,
/// so results do not depend on scheduling.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Builds the scenario for one sweep value (`None` leaves the base values).
pub fn build_scenario(config: &ExperimentConfig, sweep: Option<f64>) -> Result<Scenario> {
    config.validate()?;
    let mut p = config.resolved();
    if let Some(x) = sweep {
        match config.preset {
            Preset::Convergence => p.d_tk = x,
            Preset::Weights => p.weights = vec![x, 1.0 - x],
            Preset::Power => p.p_max = x,
            Preset::Nk => p.n_u = sweep_count(x)?,
            Preset::Gamma0 => p.gamma0 = x,
            Preset::Gradcheck => {}
        }
    }
    if !(p.d_tk > 0.0) {
        return Err(Error::Config("user distance d_tk must be positive".into()));
    }
    if p.weights.len() != p.n_users {
        return Err(Error::Config(format!("{} weights given for {} users", p.weights.len(), p.n_users)));
    }
    let tx_center = Vec3::new(-3.0, 10.0, 0.0);
    let user_regions = (0..p.n_users)
        .map(|k| {
            let angle = if p.n_users == 1 {
                -FRAC_PI_4
            } else {
                -FRAC_PI_4 + 2.0 * FRAC_PI_4 * k as f64 / (p.n_users - 1) as f64
            };
            let center = Vec3::new(tx_center.x + p.d_tk * angle.sin(), 1.5, p.d_tk * angle.cos());
            SquareRegion::new(center, p.user_side)
        })
        .collect();
    let scenario = Scenario {
        wavelength: p.wavelength,
        n_t: p.n_t,
        n_r: p.n_r,
        n_users: p.n_users,
        n_u: p.n_u,
        tx_region: SquareRegion::new(tx_center, p.tx_side),
        rx_ula: ReceiveUla { midpoint: Vec3::new(3.0, 10.0, 0.0), length: p.rx_length },
        user_regions,
        target: Vec3::new(10.0, 1.5, 10.0),
        noise_user: p.noise_user,
        noise_radar: p.noise_radar,
        p_max: p.p_max,
        gamma0: p.gamma0,
        d_min: p.d_min.unwrap_or(p.wavelength / 2.0),
        weights: p.weights,
        gain: p.gain,
    };
    scenario.validate().map_err(|e| Error::Config(e.to_string()))?;
    let zf = config.schemes().iter().any(|s| s.is_zf());
    if zf && scenario.n_users * scenario.n_u > scenario.n_t {
        return Err(Error::Config(format!(
            "zero forcing needs K·N_u ≤ N_t, got {}·{} > {}",
            scenario.n_users, scenario.n_u, scenario.n_t
        )));
    }
    Ok(scenario)
}

fn sweep_count(x: f64) -> Result<usize> {
    if x >= 1.0 && x.fract() == 0.0 {
        Ok(x as usize)
    } else {
        Err(Error::Config(format!("antenna count {x} is not a positive integer")))
    }
}

fn draw_array<R: Rng>(region: &SquareRegion, n: usize, d_min: f64, rng: &mut R) -> Result<Vec<Vec3>> {
    if n as f64 * d_min * d_min > region.side * region.side {
        return Err(Error::Placement(format!("{n} antennas at spacing {d_min} m do not fit a {} m region", region.side)));
    }
    let (x0, x1) = region.x_bounds();
    let (y0, y1) = region.y_bounds();
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let pts: Vec<Vec3> = (0..n)
            .map(|_| Vec3::new(x0 + (x1 - x0) * rng.random::<f64>(), y0 + (y1 - y0) * rng.random::<f64>(), region.center.z))
            .collect();
        if min_spacing_ok(&pts, d_min) {
            return Ok(pts);
        }
    }
    Err(Error::Placement(format!("no spaced draw of {n} antennas within {MAX_PLACEMENT_ATTEMPTS} attempts")))
}

/// Uniform draws in every region, each array resampled until its spacing
/// holds.
pub fn initial_placement<R: Rng>(scenario: &Scenario, rng: &mut R) -> Result<Placement> {
    let t = draw_array(&scenario.tx_region, scenario.n_t, scenario.d_min, rng)?;
    let q = scenario
        .user_regions
        .iter()
        .map(|r| draw_array(r, scenario.n_u, scenario.d_min, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(Placement { t, q })
}

/// One output row. Empty numeric fields mark a failed trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub preset: String,
    pub scheme: String,
    pub sweep: f64,
    pub trial: usize,
    pub seed: u64,
    pub wsr_bits: Option<f64>,
    pub gamma_s: Option<f64>,
    pub ps_db: Option<f64>,
    pub iters: Option<usize>,
    pub wall_ms: Option<f64>,
}

/// Final metrics of one successful trial.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub wsr_bits: f64,
    pub gamma_s: f64,
    pub ps_db: f64,
    pub iterations: usize,
    pub converged: bool,
    pub rank_flags: usize,
    pub rank_ratios: Vec<f64>,
    pub trace: Vec<TraceRecord>,
    pub system: System,
    /// Receive combiner at the end of the run.
    pub u_norm: f64,
}

/// Runs one scheme from a given placement.
pub fn run_trial(scenario: &Scenario, placement: &Placement, scheme: Scheme, params: &AlgoParams) -> Result<TrialResult> {
    let mode = if scheme.is_movable() { PositionMode::Movable } else { PositionMode::Fixed };
    if scheme.is_zf() {
        let out = run_zf(scenario, placement, params, mode)?;
        let (v, u) = (out.state.v.clone(), out.state.u.clone());
        Ok(finish(out, &v, &u))
    } else {
        let out = run_lp(scenario, placement, params, mode)?;
        let (v, u) = (out.state.v.clone(), out.state.u.clone());
        Ok(finish(out, &v, &u))
    }
}

fn finish<S>(out: RunOutcome<S>, v: &CVec, u: &CVec) -> TrialResult {
    let rec = out.final_record().clone();
    let ps = sensing_power(&out.system.channels, v, u);
    TrialResult {
        wsr_bits: nats_to_bits(rec.wsr),
        gamma_s: rec.gamma_s,
        ps_db: 10.0 * ps.log10(),
        iterations: out.iterations,
        converged: out.converged,
        rank_flags: out.rank_flags,
        rank_ratios: out.rank_ratios,
        u_norm: u.norm(),
        trace: out.trace,
        system: out.system,
    }
}

/// What a preset produced.
#[derive(Debug, Clone)]
pub enum PresetOutput {
    Results { rows: Vec<ResultRow>, failed: usize, total: usize },
    Gradcheck(Vec<GradRow>),
}

impl PresetOutput {
    /// Whether the share of failed trials (or failed gradient entries)
    /// stays within [`MAX_FAILURE_SHARE`].
    pub fn acceptable(&self) -> bool {
        match self {
            PresetOutput::Results { failed, total, .. } => (*failed as f64) <= MAX_FAILURE_SHARE * (*total as f64),
            PresetOutput::Gradcheck(rows) => rows.iter().all(|r| r.report.pass),
        }
    }
}

struct Job {
    sweep: f64,
    scheme: Scheme,
    trial: usize,
}

/// Runs every (sweep value, scheme, trial) combination. Schemes of the same
/// trial and sweep value start from the same placement.
pub fn run_preset(config: &ExperimentConfig) -> Result<PresetOutput> {
    config.validate()?;
    let trials = config.trials();
    if config.preset == Preset::Gradcheck {
        let scenario = build_scenario(config, None)?;
        let mut rows = Vec::new();
        for trial in 0..trials {
            let mut rng = trial_rng(config.seed, trial as u64);
            let placement = initial_placement(&scenario, &mut rng)?;
            let mut part = gradient_suite(&scenario, &[placement], &mut rng, DEFAULT_STEP, Tolerance::default())?;
            for r in &mut part {
                r.point = trial;
            }
            rows.extend(part);
        }
        return Ok(PresetOutput::Gradcheck(rows));
    }
    let grid = config.sweep_grid();
    let scenarios = grid.iter().map(|&x| build_scenario(config, Some(x))).collect::<Result<Vec<_>>>()?;
    let params = config.algo_params();
    params.validate()?;
    let jobs: Vec<Job> = grid
        .iter()
        .flat_map(|&sweep| {
            config.schemes().into_iter().flat_map(move |scheme| (0..trials).map(move |trial| Job { sweep, scheme, trial }))
        })
        .collect();
    let work = |job: &Job| -> Vec<ResultRow> {
        let idx = grid.iter().position(|&x| x == job.sweep).unwrap_or(0);
        let scenario = &scenarios[idx];
        let start = Instant::now();
        let mut rng = trial_rng(config.seed, job.trial as u64);
        let result = initial_placement(scenario, &mut rng).and_then(|p| run_trial(scenario, &p, job.scheme, &params));
        let wall = start.elapsed().as_secs_f64() * 1e3;
        let base = ResultRow {
            preset: config.preset.name().to_string(),
            scheme: job.scheme.name().to_string(),
            sweep: job.sweep,
            trial: job.trial,
            seed: config.seed,
            wsr_bits: None,
            gamma_s: None,
            ps_db: None,
            iters: None,
            wall_ms: Some(wall),
        };
        match result {
            Ok(r) => {
                let mut rows = vec![ResultRow {
                    wsr_bits: Some(r.wsr_bits),
                    gamma_s: Some(r.gamma_s),
                    ps_db: Some(r.ps_db),
                    iters: Some(r.iterations),
                    ..base.clone()
                }];
                if config.preset == Preset::Convergence {
                    rows.extend(trace_rows(&base, &r.trace));
                }
                rows
            }
            Err(_) => vec![base],
        }
    };
    let chunks: Vec<Vec<ResultRow>> = match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| jobs.par_iter().map(work).collect()),
        None => jobs.par_iter().map(work).collect(),
    };
    let total = jobs.len();
    let failed = chunks.iter().filter(|c| c[0].wsr_bits.is_none()).count();
    Ok(PresetOutput::Results { rows: chunks.into_iter().flatten().collect(), failed, total })
}

/// WSR at the end of every outer iteration, as long-format rows under the
/// preset name `convergence-trace`; `iters` holds the iteration index.
fn trace_rows(base: &ResultRow, trace: &[TraceRecord]) -> Vec<ResultRow> {
    let mut rows: Vec<ResultRow> = Vec::new();
    for rec in trace {
        let row = ResultRow {
            preset: "convergence-trace".into(),
            wsr_bits: Some(nats_to_bits(rec.wsr)),
            gamma_s: Some(rec.gamma_s),
            ps_db: None,
            iters: Some(rec.iteration),
            wall_ms: None,
            ..base.clone()
        };
        match rows.last_mut() {
            Some(last) if last.iters == row.iters => *last = row,
            _ => rows.push(row),
        }
    }
    rows
}
