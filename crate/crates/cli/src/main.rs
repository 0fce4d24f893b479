use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use nfisac_core::harness::{emit, emit_gradcheck, write_gradcheck, write_rows};
use nfisac_core::{run_preset, Error, ExperimentConfig, Format, Preset, PresetOutput, Profile, Scheme};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_TRIALS: u8 = 3;

/// Monte-Carlo simulator for weighted-sum-rate optimization of a near-field
/// ISAC system with movable antennas.
#[derive(Debug, Parser)]
#[command(name = "nfisac", version, allow_negative_numbers = true)]
struct Args {
    /// Flat TOML file with experiment settings; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,

    /// convergence, weights, power, nk, gamma0 or gradcheck.
    #[arg(long)]
    preset: Option<Preset>,

    /// LP-MA, ZF-MA, LP-FIX or ZF-FIX; repeat for several (default: all).
    #[arg(long = "scheme")]
    schemes: Vec<Scheme>,

    /// desk (small arrays, 20 trials) or paper (full-size arrays, 50 trials).
    #[arg(long)]
    profile: Option<Profile>,

    #[arg(long)]
    trials: Option<usize>,

    #[arg(long)]
    seed: Option<u64>,

    /// Output file; rows go to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,

    /// csv or json.
    #[arg(long)]
    format: Option<Format>,

    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,

    /// BS-to-user distance in metres.
    #[arg(long)]
    dtk: Option<f64>,

    /// Transmit power budget in watts.
    #[arg(long)]
    pmax: Option<f64>,

    /// Sensing SINR threshold (linear).
    #[arg(long)]
    gamma0: Option<f64>,

    /// Antennas per user.
    #[arg(long)]
    nu: Option<usize>,

    /// Weight of user 1 in a two-user run; user 2 gets 1 - w1.
    #[arg(long = "weights", value_name = "W1")]
    w1: Option<f64>,
}

impl Args {
    fn into_config(self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(p) = self.preset {
            cfg.preset = p;
        }
        if !self.schemes.is_empty() {
            cfg.schemes = self.schemes;
        }
        if let Some(p) = self.profile {
            cfg.profile = p;
        }
        if self.trials.is_some() {
            cfg.trials = self.trials;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.out.is_some() {
            cfg.out = self.out;
        }
        if let Some(f) = self.format {
            cfg.format = f;
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        if self.dtk.is_some() {
            cfg.d_tk = self.dtk;
        }
        if self.pmax.is_some() {
            cfg.p_max = self.pmax;
        }
        if self.gamma0.is_some() {
            cfg.gamma0 = self.gamma0;
        }
        if self.nu.is_some() {
            cfg.n_u = self.nu;
        }
        if let Some(w1) = self.w1 {
            if !(0.0..=1.0).contains(&w1) {
                return Err(Error::Config(format!("weight w1 = {w1} is outside [0, 1]")));
            }
            cfg.weights = Some(vec![w1, 1.0 - w1]);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write(cfg: &ExperimentConfig, output: &PresetOutput) -> Result<(), Error> {
    let stdout_err = |source| Error::Io { path: PathBuf::from("<stdout>"), source };
    match (output, &cfg.out) {
        (PresetOutput::Results { rows, .. }, Some(path)) => emit(rows, path, cfg.format),
        (PresetOutput::Results { rows, .. }, None) => {
            write_rows(rows, BufWriter::new(io::stdout().lock()), cfg.format).map_err(stdout_err)
        }
        (PresetOutput::Gradcheck(rows), Some(path)) => emit_gradcheck(rows, path),
        (PresetOutput::Gradcheck(rows), None) => {
            write_gradcheck(rows, BufWriter::new(io::stdout().lock())).map_err(stdout_err)
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidScenario(_) => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let cfg = match args.into_config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("nfisac: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    let output = match run_preset(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("nfisac: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    if let Err(e) = write(&cfg, &output) {
        eprintln!("nfisac: {e}");
        return ExitCode::from(EXIT_FAILURE);
    }
    match &output {
        PresetOutput::Results { failed, total, .. } => {
            if *failed > 0 {
                eprintln!("nfisac: {failed} of {total} trials failed");
            }
        }
        PresetOutput::Gradcheck(rows) => {
            let bad = rows.iter().filter(|r| !r.report.pass).count();
            eprintln!("nfisac: {bad} of {} gradient entries outside tolerance", rows.len());
        }
    }
    if output.acceptable() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_TRIALS)
    }
}
