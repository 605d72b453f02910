//! Benchmark harness: run a set of solvers on seeded GARNET instances and
//! record the exact objective of every iterate.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::garnet::GarnetSpec;
use crate::metrics::KernelMetric;
use crate::solvers::{self, AdvantageSource, SolverConfig, SolverKind};
use crate::SimRng;

pub const CSV_HEADER: &str = "solver,seed,iteration,objective,log_objective,wall_ms,samples_consumed";
pub const PLOT_HEADER: &str =
    "solver,iteration,n_seeds,mean_objective,min_objective,max_objective,mean_log_objective";

/// One solver of an experiment with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverEntry {
    pub name: SolverKind,
    #[serde(flatten)]
    pub config: SolverConfig,
}

fn default_n_seeds() -> usize {
    1
}
fn default_episodes() -> usize {
    5
}
fn default_steps() -> usize {
    50_000
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("bench-out")
}

/// Experiment description, read from TOML.
///
/// Instance `i` uses the GARNET seed `garnet.seed + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub garnet: GarnetSpec,
    pub solvers: Vec<SolverEntry>,
    #[serde(default = "default_n_seeds")]
    pub n_seeds: usize,
    #[serde(default)]
    pub sample_based: bool,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default = "default_steps")]
    pub steps_per_episode: usize,
    /// Action kernel `R`; identity when absent.
    #[serde(default)]
    pub r_matrix: Option<Vec<Vec<f64>>>,
    /// Store measured update times; off by default so output files are
    /// reproducible byte for byte.
    #[serde(default)]
    pub record_wall_time: bool,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.garnet.validate()?;
        if self.n_seeds == 0 {
            return Err(Error::Contract("n_seeds must be at least 1".into()));
        }
        if self.solvers.is_empty() {
            return Err(Error::Contract("no solvers configured".into()));
        }
        for entry in &self.solvers {
            entry.config.validate()?;
        }
        if self.sample_based && (self.episodes == 0 || self.steps_per_episode == 0) {
            return Err(Error::Contract("sampling needs episodes and steps".into()));
        }
        self.metric()?;
        Ok(())
    }

    pub fn metric(&self) -> Result<KernelMetric> {
        let (n, m) = (self.garnet.n_states, self.garnet.n_actions);
        match &self.r_matrix {
            None => Ok(KernelMetric::identity(n, m)),
            Some(rows) => {
                if rows.len() != m || rows.iter().any(|r| r.len() != m) {
                    return Err(Error::Dimension(format!("r_matrix must be {m} x {m}")));
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                KernelMetric::new(DMatrix::from_row_slice(m, m, &flat), vec![1.0; n])
            }
        }
    }

    pub fn advantage_source(&self) -> AdvantageSource {
        if self.sample_based {
            AdvantageSource::MonteCarlo {
                episodes: self.episodes,
                steps_per_episode: self.steps_per_episode,
            }
        } else {
            AdvantageSource::Exact
        }
    }
}

/// One `(solver, seed, iteration)` measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub solver: SolverKind,
    pub seed: u64,
    pub iteration: usize,
    pub objective: f64,
    pub log_objective: f64,
    pub wall_ms: f64,
    pub samples_consumed: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchResult {
    pub rows: Vec<BenchRow>,
}

impl BenchResult {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn for_solver(&self, solver: SolverKind) -> BenchResult {
        BenchResult { rows: self.rows.iter().filter(|r| r.solver == solver).cloned().collect() }
    }

    pub fn solvers(&self) -> Vec<SolverKind> {
        let mut out: Vec<SolverKind> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.solver) {
                out.push(r.solver);
            }
        }
        out
    }
}

/// Independent RNG per (instance, solver): a ChaCha stream per solver slot.
fn solver_rng(instance_seed: u64, slot: usize, config: &SolverConfig) -> SimRng {
    let mut rng = SimRng::seed_from_u64(instance_seed ^ config.seed.rotate_left(32));
    rng.set_stream(slot as u64 + 1);
    rng
}

/// Runs every configured solver on one instance.
pub fn run_instance(config: &ExperimentConfig, seed: u64) -> Result<Vec<BenchRow>> {
    let mdp = config.garnet.with_seed(seed).generate()?;
    let metric = config.metric()?;
    let source = config.advantage_source();
    let mut rows = Vec::new();
    for (slot, entry) in config.solvers.iter().enumerate() {
        let mut rng = solver_rng(seed, slot, &entry.config);
        let out = solvers::solve(entry.name, &mdp, &metric, &entry.config, source, &mut rng)?;
        for rec in &out.history {
            let samples = rec.get("samples").unwrap_or(0.0) as u64;
            rows.push(BenchRow {
                solver: entry.name,
                seed,
                iteration: rec.iteration,
                objective: rec.objective,
                log_objective: rec.objective.ln(),
                wall_ms: if config.record_wall_time { rec.wall_ms } else { 0.0 },
                samples_consumed: samples,
            });
        }
    }
    Ok(rows)
}

fn instance_seeds(config: &ExperimentConfig) -> Vec<u64> {
    (0..config.n_seeds as u64).map(|i| config.garnet.seed.wrapping_add(i)).collect()
}

/// Runs the experiment in memory, instances in parallel.
pub fn collect_experiment(config: &ExperimentConfig) -> Result<BenchResult> {
    config.validate()?;
    let per_seed: Vec<Vec<BenchRow>> = instance_seeds(config)
        .into_par_iter()
        .map(|seed| run_instance(config, seed))
        .collect::<Result<_>>()?;
    Ok(BenchResult { rows: per_seed.into_iter().flatten().collect() })
}

/// Runs the experiment and writes `output_dir/partial/seed_<seed>.csv` as
/// soon as each instance finishes, so an interrupted run keeps its
/// completed instances. Returns the assembled result in seed order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<BenchResult> {
    config.validate()?;
    let partial = config.output_dir.join("partial");
    fs::create_dir_all(&partial)?;
    let per_seed: Vec<Vec<BenchRow>> = instance_seeds(config)
        .into_par_iter()
        .map(|seed| {
            let rows = run_instance(config, seed)?;
            let part = BenchResult { rows: rows.clone() };
            emit_csv(&part, partial.join(format!("seed_{seed}.csv")))?;
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(BenchResult { rows: per_seed.into_iter().flatten().collect() })
}

/// Writes `bench.csv`, one `<solver>.csv` per solver and `plotdata.csv`
/// into `dir`.
pub fn write_outputs(result: &BenchResult, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut written = vec![dir.join("bench.csv")];
    emit_csv(result, &written[0])?;
    for solver in result.solvers() {
        let path = dir.join(format!("{solver}.csv"));
        emit_csv(&result.for_solver(solver), &path)?;
        written.push(path);
    }
    let plot = dir.join("plotdata.csv");
    emit_plotdata(result, &plot)?;
    written.push(plot);
    Ok(written)
}

fn require_rows(result: &BenchResult) -> Result<()> {
    if result.is_empty() {
        return Err(Error::Contract("nothing to write: empty result".into()));
    }
    Ok(())
}

pub fn write_csv<W: Write>(result: &BenchResult, mut out: W) -> Result<()> {
    require_rows(result)?;
    writeln!(out, "{CSV_HEADER}")?;
    for r in &result.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.solver, r.seed, r.iteration, r.objective, r.log_objective, r.wall_ms, r.samples_consumed
        )?;
    }
    Ok(())
}

pub fn emit_csv(result: &BenchResult, path: impl AsRef<Path>) -> Result<()> {
    require_rows(result)?;
    let mut out = BufWriter::new(fs::File::create(path)?);
    write_csv(result, &mut out)?;
    out.flush()?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(field: &str, what: &str, line: usize) -> Result<T> {
    field.parse().map_err(|_| Error::Parse(format!("line {line}: bad {what} '{field}'")))
}

/// Inverse of [`write_csv`].
pub fn parse_csv(text: &str) -> Result<BenchResult> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => return Err(Error::Parse(format!("unexpected header {other:?}"))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(Error::Parse(format!("line {n}: expected 7 fields, got {}", f.len())));
        }
        rows.push(BenchRow {
            solver: f[0].parse()?,
            seed: parse_field(f[1], "seed", n)?,
            iteration: parse_field(f[2], "iteration", n)?,
            objective: parse_field(f[3], "objective", n)?,
            log_objective: parse_field(f[4], "log_objective", n)?,
            wall_ms: parse_field(f[5], "wall_ms", n)?,
            samples_consumed: parse_field(f[6], "samples_consumed", n)?,
        });
    }
    Ok(BenchResult { rows })
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<BenchResult> {
    parse_csv(&fs::read_to_string(path)?)
}

/// Per solver and iteration: the objective averaged over seeds with its
/// min/max band, and the mean log objective.
pub fn write_plotdata<W: Write>(result: &BenchResult, mut out: W) -> Result<()> {
    require_rows(result)?;
    writeln!(out, "{PLOT_HEADER}")?;
    for solver in result.solvers() {
        let mut by_iter: BTreeMap<usize, Vec<&BenchRow>> = BTreeMap::new();
        for r in result.rows.iter().filter(|r| r.solver == solver) {
            by_iter.entry(r.iteration).or_default().push(r);
        }
        for (iteration, rows) in by_iter {
            let k = rows.len() as f64;
            let mean = rows.iter().map(|r| r.objective).sum::<f64>() / k;
            let lo = rows.iter().map(|r| r.objective).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|r| r.objective).fold(f64::NEG_INFINITY, f64::max);
            let mean_log = rows.iter().map(|r| r.log_objective).sum::<f64>() / k;
            writeln!(out, "{solver},{iteration},{},{mean},{lo},{hi},{mean_log}", rows.len())?;
        }
    }
    Ok(())
}

pub fn emit_plotdata(result: &BenchResult, path: impl AsRef<Path>) -> Result<()> {
    require_rows(result)?;
    let mut out = BufWriter::new(fs::File::create(path)?);
    write_plotdata(result, &mut out)?;
    out.flush()?;
    Ok(())
}

/// Pretty-printed JSON of any serializable value.
pub fn save_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::Parse(e.to_string()))?;
    out.flush()?;
    Ok(())
}
