//! Configuration resolution, run execution and CSV figure emission for the
//! co-utile MPC simulator.
//!
//! Configuration precedence is: built-in defaults, overridden by a flat
//! `key=value` config file, overridden by command-line flags. `dump-config`
//! emits the same `key=value` text, so a dumped config parses back to an
//! identical configuration.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::PathBuf;

use clap::Args;
use rayon::prelude::*;

use coutile_core::config::{ConfigError, Mode, SimConfig};
use coutile_core::metrics::{RunMetrics, Window};
use coutile_core::reputation;
use coutile_core::simnet::{build_world, run_iteration};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("config file {path}: {problem}")]
    ConfigFile { path: PathBuf, problem: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Simulation flags shared by every subcommand. Flags override config-file
/// values, which override the built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct SimArgs {
    /// Flat key=value config file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Number of peers in the network (n).
    #[arg(long)]
    pub peers: Option<usize>,
    /// Clients per joint computation (m), at least 4.
    #[arg(long)]
    pub clients: Option<usize>,
    /// Redundant workers per client (r).
    #[arg(long)]
    pub redundancy: Option<usize>,
    /// Joint computations to run (T).
    #[arg(long)]
    pub iterations: Option<u32>,
    /// Reputation flexibility for accepting senders.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Probability that a forwardee hops instead of submitting.
    #[arg(long)]
    pub p_forward: Option<f64>,
    /// Accountability managers per peer (M).
    #[arg(long)]
    pub managers: Option<usize>,
    /// Upper bound on the secret worker candidate pool size.
    #[arg(long)]
    pub kappa_max: Option<usize>,
    /// Convergence threshold of the global reputation iteration.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Step budget of the global reputation iteration.
    #[arg(long)]
    pub max_iter: Option<u32>,
    /// Joint computations between global reputation updates.
    #[arg(long)]
    pub reputation_interval: Option<u32>,
    /// Fraction of peers built malicious.
    #[arg(long)]
    pub malicious_frac: Option<f64>,
    /// Protocol suite: hbc, rational, or baseline.
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Workers publish outputs instead of returning them privately.
    #[arg(long)]
    pub publish_output: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Hop-count safeguard before forced direct submission.
    #[arg(long)]
    pub max_hops: Option<u32>,
    /// Output directory for CSV files.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// Resolves the effective configuration: defaults, then config file, then
/// flags; validates the result.
pub fn parse_config(args: &SimArgs) -> Result<SimConfig, CliError> {
    let mut config = SimConfig::default();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| CliError::ConfigFile {
            path: path.clone(),
            problem: e.to_string(),
        })?;
        apply_config_text(&mut config, &text).map_err(|problem| CliError::ConfigFile {
            path: path.clone(),
            problem,
        })?;
    }
    apply_flags(&mut config, args);
    config.validate()?;
    Ok(config)
}

fn apply_flags(config: &mut SimConfig, args: &SimArgs) {
    macro_rules! set {
        ($($field:ident),*) => {
            $(if let Some(v) = args.$field.clone() { config.$field = v; })*
        };
    }
    set!(
        peers, clients, redundancy, iterations, delta, p_forward, managers, kappa_max, epsilon,
        max_iter, reputation_interval, malicious_frac, mode, seed, max_hops
    );
    if args.publish_output {
        config.publish_output = true;
    }
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
}

/// Applies `key=value` lines to a config. Blank lines and `#` comments are
/// ignored; unknown keys and malformed values are errors.
pub fn apply_config_text(config: &mut SimConfig, text: &str) -> Result<(), String> {
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key=value, got `{line}`", lineno + 1))?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |k: &str| format!("line {}: invalid value for `{k}`", lineno + 1);
        match key {
            "peers" => config.peers = value.parse().map_err(|_| bad(key))?,
            "clients" => config.clients = value.parse().map_err(|_| bad(key))?,
            "redundancy" => config.redundancy = value.parse().map_err(|_| bad(key))?,
            "iterations" => config.iterations = value.parse().map_err(|_| bad(key))?,
            "delta" => config.delta = value.parse().map_err(|_| bad(key))?,
            "p_forward" => config.p_forward = value.parse().map_err(|_| bad(key))?,
            "managers" => config.managers = value.parse().map_err(|_| bad(key))?,
            "kappa_max" => config.kappa_max = value.parse().map_err(|_| bad(key))?,
            "epsilon" => config.epsilon = value.parse().map_err(|_| bad(key))?,
            "max_iter" => config.max_iter = value.parse().map_err(|_| bad(key))?,
            "reputation_interval" => {
                config.reputation_interval = value.parse().map_err(|_| bad(key))?
            }
            "malicious_frac" => config.malicious_frac = value.parse().map_err(|_| bad(key))?,
            "mode" => config.mode = value.parse().map_err(|e: ConfigError| e.to_string())?,
            "publish_output" => config.publish_output = value.parse().map_err(|_| bad(key))?,
            "seed" => config.seed = value.parse().map_err(|_| bad(key))?,
            "max_hops" => config.max_hops = value.parse().map_err(|_| bad(key))?,
            "out" => config.output_dir = PathBuf::from(value),
            other => return Err(format!("line {}: unknown key `{other}`", lineno + 1)),
        }
    }
    Ok(())
}

/// Emits the config as `key=value` text; `apply_config_text` of the output
/// reproduces the config exactly.
pub fn dump_config(config: &SimConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "peers={}", config.peers);
    let _ = writeln!(out, "clients={}", config.clients);
    let _ = writeln!(out, "redundancy={}", config.redundancy);
    let _ = writeln!(out, "iterations={}", config.iterations);
    let _ = writeln!(out, "delta={}", config.delta);
    let _ = writeln!(out, "p_forward={}", config.p_forward);
    let _ = writeln!(out, "managers={}", config.managers);
    let _ = writeln!(out, "kappa_max={}", config.kappa_max);
    let _ = writeln!(out, "epsilon={}", config.epsilon);
    let _ = writeln!(out, "max_iter={}", config.max_iter);
    let _ = writeln!(out, "reputation_interval={}", config.reputation_interval);
    let _ = writeln!(out, "malicious_frac={}", config.malicious_frac);
    let _ = writeln!(out, "mode={}", config.mode);
    let _ = writeln!(out, "publish_output={}", config.publish_output);
    let _ = writeln!(out, "seed={}", config.seed);
    let _ = writeln!(out, "max_hops={}", config.max_hops);
    let _ = writeln!(out, "out={}", config.output_dir.display());
    out
}

// ---------------------------------------------------------------------------
// Figure emission
// ---------------------------------------------------------------------------

/// `fig1.csv`: final reputation against goodness, one row per peer.
pub fn emit_goodness_vs_reputation(metrics: &RunMetrics) -> String {
    let mut out = String::from("peer_index,goodness,final_reputation\n");
    for (i, (g, rep)) in metrics.goodness.iter().zip(metrics.final_reputation.iter()).enumerate() {
        let _ = writeln!(out, "{i},{g},{rep}");
    }
    out
}

/// `fig2.csv` / `fig3.csv`: correct-output rate against final reputation
/// over a window; peers with no requests in the window are omitted.
pub fn emit_rate_vs_reputation(metrics: &RunMetrics, window: Window) -> String {
    let mut out = String::from("peer_index,final_reputation,requests,correct,rate\n");
    for rate in metrics.peer_rates(window) {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            rate.peer,
            metrics.final_reputation[rate.peer],
            rate.requests,
            rate.correct,
            rate.rate()
        );
    }
    out
}

/// One figure-4 measurement: pooled full-run rate of a client class.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub malicious_frac: f64,
    pub mode: Mode,
    pub client_class: &'static str,
    pub rate: f64,
}

/// Runs the baseline-comparison grid: for every malicious fraction, one
/// rational and one baseline run, reporting good/bad/all client classes.
/// Grid points execute in parallel; each is an isolated deterministic run.
pub fn run_sweep(base: &SimConfig, fracs: &[f64]) -> Result<Vec<SweepRow>, ConfigError> {
    let mut grid = Vec::new();
    for &frac in fracs {
        for mode in [Mode::Rational, Mode::Baseline] {
            grid.push(SimConfig { malicious_frac: frac, mode, ..base.clone() });
        }
    }
    let runs: Vec<(SimConfig, RunMetrics)> = grid
        .into_par_iter()
        .map(|config| coutile_core::run_simulation(&config).map(|m| (config, m)))
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for (config, metrics) in runs {
        let n = metrics.goodness.len();
        for (class, peers) in [
            ("good", (0..n).filter(|&i| metrics.goodness[i] == 1.0).collect::<Vec<_>>()),
            ("bad", (0..n).filter(|&i| metrics.goodness[i] == 0.0).collect()),
            ("all", (0..n).collect()),
        ] {
            if let Some(rate) = metrics.pooled_rate(&peers, Window::All) {
                rows.push(SweepRow {
                    malicious_frac: config.malicious_frac,
                    mode: config.mode,
                    client_class: class,
                    rate,
                });
            }
        }
    }
    Ok(rows)
}

/// `fig4.csv` from sweep rows.
pub fn emit_sweep(rows: &[SweepRow]) -> String {
    let mut out = String::from("malicious_frac,mode,client_class,rate\n");
    for row in rows {
        let _ = writeln!(out, "{},{},{},{}", row.malicious_frac, row.mode, row.client_class, row.rate);
    }
    out
}

// ---------------------------------------------------------------------------
// Run execution
// ---------------------------------------------------------------------------

/// Files a `run` (or `trace`) invocation writes.
pub const RUN_FILES: [&str; 4] = ["fig1.csv", "fig2.csv", "fig3.csv", "reputation.csv"];

/// Executes one simulation run and writes the figure CSVs (and, with
/// `trace` set, a channel trace) into the config's output directory.
pub fn execute_run(config: &SimConfig, trace: bool) -> Result<RunMetrics, CliError> {
    fs::create_dir_all(&config.output_dir)?;
    let mut world = build_world(config)?;
    let mut trace_file = if trace {
        world.enable_capture();
        let file = fs::File::create(config.output_dir.join("trace.csv"))?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "iter,event,carrier,dest,hop_index")?;
        Some(w)
    } else {
        None
    };
    for _ in 0..config.iterations {
        run_iteration(&mut world);
        if let (Some(w), Some(records)) = (&mut trace_file, &mut world.log.records) {
            for record in records.drain(..) {
                writeln!(w, "{}", record.csv_line())?;
            }
        }
    }
    let metrics = world.metrics.clone();
    write_run_files(config, &metrics)?;
    Ok(metrics)
}

/// Writes the standard per-run CSVs for already-collected metrics.
pub fn write_run_files(config: &SimConfig, metrics: &RunMetrics) -> Result<(), CliError> {
    let dir = &config.output_dir;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("fig1.csv"), emit_goodness_vs_reputation(metrics))?;
    fs::write(dir.join("fig2.csv"), emit_rate_vs_reputation(metrics, Window::All))?;
    fs::write(dir.join("fig3.csv"), emit_rate_vs_reputation(metrics, Window::LastK(100)))?;
    fs::write(
        dir.join("reputation.csv"),
        reputation::dump_csv(&metrics.final_reputation, &metrics.goodness),
    )?;
    Ok(())
}

/// Executes the sweep and writes `fig4.csv`.
pub fn execute_sweep(base: &SimConfig, fracs: &[f64]) -> Result<Vec<SweepRow>, CliError> {
    let rows = run_sweep(base, fracs)?;
    fs::create_dir_all(&base.output_dir)?;
    fs::write(base.output_dir.join("fig4.csv"), emit_sweep(&rows))?;
    Ok(rows)
}

/// Summary line printed after a run.
pub fn summarize(metrics: &RunMetrics) -> String {
    let n = metrics.goodness.len();
    let all: Vec<usize> = (0..n).collect();
    let rate = metrics
        .pooled_rate(&all, Window::All)
        .map(|r| format!("{r:.4}"))
        .unwrap_or_else(|| "n/a".to_string());
    format!(
        "{} iterations, {} peers, correct-output rate {} (discards {}, refusals {}, timeouts {})",
        metrics.iterations_run,
        n,
        rate,
        metrics.discarded_messages,
        metrics.worker_refusals,
        metrics.worker_timeouts
    )
}

/// Parses the sweep fraction list (comma separated).
pub fn parse_fracs(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|part| part.trim().parse::<f64>().map_err(|e| format!("`{part}`: {e}")))
        .collect()
}
