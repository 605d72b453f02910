use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;

use mdp_lab::bench::{self, ExperimentConfig};
use mdp_lab::garnet::GarnetSpec;
use mdp_lab::solvers::{self, AdvantageSource, SolverConfig, SolverKind};
use mdp_lab::verify::{self, VerificationReport};
use mdp_lab::{lqr, FiniteMdp, KernelMetric, SimRng};

#[derive(Parser)]
#[command(name = "mdp-lab", version, about = "Policy optimization on finite MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a GARNET instance and write it as `<out>/mdp.json`.
    Gen {
        #[arg(long)]
        seed: Option<u64>,
        /// GARNET spec or experiment file (TOML); the desk instance when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run one solver and write `<out>/policy.json` and `<out>/history.csv`.
    Solve {
        /// MDP file written by `gen`. Without it the instance is generated
        /// from the experiment config.
        #[arg(long)]
        mdp: Option<PathBuf>,
        /// Solver config or experiment file (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        solver: SolverKind,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        sample_based: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run an experiment and write its CSV files into `<out>`.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the output directory of the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the master GARNET seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        sample_based: bool,
        /// Record measured update times instead of zeros.
        #[arg(long)]
        timing: bool,
    },
    /// Run the numerical checks; exits non-zero when any check fails.
    Verify {
        #[arg(value_enum, default_value_t = Suite::All)]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        #[arg(long, default_value_t = 20)]
        systems: usize,
        /// Also write the per-instance identity results as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    All,
    Identities,
    Lqr,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Gen { seed, config, out } => gen(seed, config.as_deref(), &out),
        Command::Solve { mdp, config, solver, out, sample_based, seed } => {
            solve(mdp.as_deref(), config.as_deref(), solver, &out, sample_based, seed)
        }
        Command::Bench { config, out, seed, sample_based, timing } => {
            run_bench(&config, out, seed, sample_based, timing)
        }
        Command::Verify { suite, seed, instances, systems, out } => {
            run_verify(suite, seed, instances, systems, out.as_deref())
        }
    }
}

/// Config files come in two shapes: a full experiment or a single section.
enum ConfigFile {
    Experiment(ExperimentConfig),
    Text(String),
}

fn read_config(path: &Path) -> Result<ConfigFile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(match ExperimentConfig::from_toml_str(&text) {
        Ok(cfg) => ConfigFile::Experiment(cfg),
        Err(_) => ConfigFile::Text(text),
    })
}

fn garnet_spec(config: Option<&Path>) -> Result<GarnetSpec> {
    let Some(path) = config else { return Ok(GarnetSpec::desk(0)) };
    Ok(match read_config(path)? {
        ConfigFile::Experiment(cfg) => cfg.garnet,
        ConfigFile::Text(text) => GarnetSpec::from_toml_str(&text)
            .with_context(|| format!("{} is neither an experiment nor a GARNET spec", path.display()))?,
    })
}

fn gen(seed: Option<u64>, config: Option<&Path>, out: &Path) -> Result<bool> {
    let mut spec = garnet_spec(config)?;
    if let Some(seed) = seed {
        spec = spec.with_seed(seed);
    }
    let mdp = spec.generate()?;
    fs::create_dir_all(out)?;
    let path = out.join("mdp.json");
    mdp.save(&path)?;
    println!(
        "wrote {} ({} states, {} actions, gamma {})",
        path.display(),
        mdp.n_states(),
        mdp.n_actions(),
        mdp.gamma()
    );
    Ok(true)
}

fn solve(
    mdp_path: Option<&Path>,
    config: Option<&Path>,
    kind: SolverKind,
    out: &Path,
    sample_based: bool,
    seed: Option<u64>,
) -> Result<bool> {
    let experiment = match config.map(read_config).transpose()? {
        Some(ConfigFile::Experiment(cfg)) => Some(cfg),
        Some(ConfigFile::Text(text)) => {
            let solver_cfg = SolverConfig::from_toml_str(&text).context("parsing solver config")?;
            return solve_with(mdp_path, None, solver_cfg, kind, out, sample_based, seed);
        }
        None => None,
    };
    let solver_cfg = experiment
        .as_ref()
        .and_then(|e| e.solvers.iter().find(|s| s.name == kind))
        .map(|s| s.config.clone())
        .unwrap_or_default();
    solve_with(mdp_path, experiment.as_ref(), solver_cfg, kind, out, sample_based, seed)
}

fn solve_with(
    mdp_path: Option<&Path>,
    experiment: Option<&ExperimentConfig>,
    mut solver_cfg: SolverConfig,
    kind: SolverKind,
    out: &Path,
    sample_based: bool,
    seed: Option<u64>,
) -> Result<bool> {
    if let Some(seed) = seed {
        solver_cfg.seed = seed;
    }
    let mdp = match (mdp_path, experiment) {
        (Some(path), _) => FiniteMdp::load(path).with_context(|| format!("loading {}", path.display()))?,
        (None, Some(e)) => e.garnet.generate()?,
        (None, None) => bail!("solve needs --mdp or an experiment --config"),
    };
    let metric = match experiment {
        Some(e) if e.garnet.n_states == mdp.n_states() && e.garnet.n_actions == mdp.n_actions() => e.metric()?,
        _ => KernelMetric::identity(mdp.n_states(), mdp.n_actions()),
    };
    let source = if sample_based || experiment.is_some_and(|e| e.sample_based) {
        let (episodes, steps_per_episode) = experiment.map_or((5, 50_000), |e| (e.episodes, e.steps_per_episode));
        AdvantageSource::MonteCarlo { episodes, steps_per_episode }
    } else {
        AdvantageSource::Exact
    };
    let mut rng = SimRng::seed_from_u64(solver_cfg.seed);
    let result = solvers::solve(kind, &mdp, &metric, &solver_cfg, source, &mut rng)?;

    fs::create_dir_all(out)?;
    bench::save_json(&result.policy, out.join("policy.json"))?;
    let history = fs::File::create(out.join("history.csv"))?;
    solvers::write_history_csv(&result.history, BufWriter::new(history))?;
    println!(
        "{kind}: objective {:.10} -> {:.10} in {} iterations (converged: {})",
        result.initial_objective,
        result.final_objective(),
        result.history.len(),
        result.converged
    );
    Ok(true)
}

fn run_bench(
    config: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    sample_based: bool,
    timing: bool,
) -> Result<bool> {
    let mut cfg = ExperimentConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    if let Some(seed) = seed {
        cfg.garnet.seed = seed;
    }
    cfg.sample_based |= sample_based;
    cfg.record_wall_time |= timing;
    let result = bench::run_experiment(&cfg)?;
    for path in bench::write_outputs(&result, &cfg.output_dir)? {
        println!("wrote {}", path.display());
    }
    Ok(true)
}

fn run_verify(suite: Suite, seed: u64, instances: usize, systems: usize, out: Option<&Path>) -> Result<bool> {
    let mut reports: Vec<VerificationReport> = Vec::new();
    if suite != Suite::Lqr {
        let result = verify::run_identity_suite(seed, instances)?;
        if let Some(dir) = out {
            fs::create_dir_all(dir)?;
            result.write_csv(BufWriter::new(fs::File::create(dir.join("identities.csv"))?))?;
        }
        reports.extend(result.summaries);
    }
    if suite != Suite::Identities {
        reports.extend(lqr::run_lqr_suite(seed, systems)?);
    }
    for r in &reports {
        println!("{r}");
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    println!("{} checks, {failed} failed", reports.len());
    Ok(failed == 0)
}
