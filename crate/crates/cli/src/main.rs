use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pac_core::experiment::{frequency_sweep, noise_sweep, policy_model, world_for_seed, FREQUENCY_SWEEP_HZ, NOISE_SWEEP_SIGMA};
use pac_core::env::EnvError;
use pac_core::model::write_model_file;
use pac_core::{
    run_experiment, verify_suite, ConfigError, ExperimentConfig, ExperimentError, ExperimentResult, ModelError,
    PolicyKind, VerifyOptions,
};

#[derive(Parser)]
#[command(name = "pac-swarm", version, about = "Run swarm coverage experiments and self-checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config.
    Run(Overrides),
    /// Run the config at each perception rate of the frequency sweep.
    SweepFrequency(Overrides),
    /// Run the config at each position-noise level of the noise sweep.
    SweepNoise(Overrides),
    /// Run the built-in verification suite.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corrupt the oracle weights; the suite must then fail.
        #[arg(long)]
        perturb: bool,
    },
    /// Write a model file with seeded random weights.
    GenWeights {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Weight seed; defaults to the config's weights_seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the density grid of one seed as an IDF file.
    ExportIdf {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replaces the config's seeds; may be repeated.
    #[arg(long)]
    seed: Vec<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replaces the config's policies; may be repeated.
    #[arg(long)]
    policy: Vec<PolicyKind>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_name = "HZ")]
    freq_perception: Option<f64>,
    #[arg(long, value_name = "HZ")]
    freq_gnn: Option<f64>,
    #[arg(long, value_name = "M")]
    noise_sigma: Option<f64>,
}

enum Failure {
    Config(String),
    Verification,
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Verification => 2,
            Failure::Io(_) => 3,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Read { .. } => Failure::Io(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(c) => c.into(),
            ExperimentError::Io { .. }
            | ExperimentError::Env(EnvError::Io(_))
            | ExperimentError::Model(ModelError::Io(_)) => Failure::Io(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, Failure> {
    Ok(match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    })
}

impl Overrides {
    fn apply(&self) -> Result<ExperimentConfig, Failure> {
        let mut cfg = load_config(self.config.as_deref())?;
        if !self.seed.is_empty() {
            cfg.seeds = self.seed.clone();
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if !self.policy.is_empty() {
            cfg.policies = self.policy.clone();
        }
        if let Some(m) = &self.model {
            cfg.model = Some(m.clone());
        }
        if let Some(f) = self.freq_perception {
            cfg.frequencies.perception = f;
        }
        if let Some(f) = self.freq_gnn {
            cfg.frequencies.gnn = f;
        }
        if let Some(s) = self.noise_sigma {
            cfg.noise_sigma = s;
        }
        for w in cfg.validate()? {
            log::warn!("{w}");
        }
        Ok(cfg)
    }
}

fn summarize(label: &str, cfg: &ExperimentConfig, res: &ExperimentResult) {
    for &p in &cfg.policies {
        let finals: Vec<f64> = res
            .cells
            .iter()
            .filter(|c| c.policy == p)
            .filter_map(|c| c.rows.last().map(|r| r.normalized_cost))
            .collect();
        let mean = finals.iter().sum::<f64>() / finals.len() as f64;
        println!("{label}{p}: mean final normalized cost {mean:.4} over {} seeds", finals.len());
    }
}

fn run_and_write(label: &str, cfg: &ExperimentConfig) -> Result<(), Failure> {
    let res = run_experiment(cfg)?;
    let written = res.write(&cfg.output_dir)?;
    summarize(label, cfg, &res);
    for p in written {
        log::info!("wrote {}", p.display());
    }
    println!("{label}results in {}", cfg.output_dir.display());
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run(o) => run_and_write("", &o.apply()?),
        Command::SweepFrequency(o) => {
            for point in frequency_sweep(&o.apply()?, &FREQUENCY_SWEEP_HZ) {
                run_and_write(&format!("[{}] ", point.label), &point.config)?;
            }
            Ok(())
        }
        Command::SweepNoise(o) => {
            for point in noise_sweep(&o.apply()?, &NOISE_SWEEP_SIGMA) {
                run_and_write(&format!("[{}] ", point.label), &point.config)?;
            }
            Ok(())
        }
        Command::Verify { seed, perturb } => {
            let report = verify_suite(&VerifyOptions {
                seed,
                perturb,
                ..VerifyOptions::default()
            });
            for c in &report.checks {
                println!("{c}");
            }
            if report.passed() {
                Ok(())
            } else {
                Err(Failure::Verification)
            }
        }
        Command::GenWeights { config, seed, out } => {
            let mut cfg = load_config(config.as_deref())?;
            cfg.model = None;
            if let Some(s) = seed {
                cfg.weights_seed = s;
            }
            let model = policy_model(&cfg)?;
            write_model_file(&out, &model.to_tensors()).map_err(|e| Failure::Io(format!("{}: {e}", out.display())))?;
            println!("wrote {} (weights seed {})", out.display(), cfg.weights_seed);
            Ok(())
        }
        Command::ExportIdf { config, seed, out } => {
            let cfg = load_config(config.as_deref())?;
            let world = world_for_seed(&cfg, seed)?;
            let mut w = create(&out)?;
            world
                .write_idf(&mut w)
                .and_then(|()| w.flush().map_err(EnvError::Io))
                .map_err(|e| Failure::Io(format!("{}: {e}", out.display())))?;
            let n = world.cells();
            println!("wrote {} ({n}x{n} cells, seed {seed})", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // Usage errors count as configuration errors so that 2 stays reserved
    // for verification failures.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(m) => eprintln!("error: {m}"),
                Failure::Verification => eprintln!("verification failed"),
                Failure::Io(m) => eprintln!("I/O error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
