//! Experiment runner behind the `mmint` binary.
//!
//! An experiment is one TOML file naming a topology, the strategies to run,
//! the probing schedule and optional background traffic. Command-line flags
//! only pick the config, the output directory, the seed and verbosity.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Deserialize;
use thiserror::Error;

use crate::gf2poly::gcd;
use crate::mpolka::{assign_node_ids, encode_tree, forward_states, RoutingError};
use crate::netmodel::{load_topology_file, to_tree, Issue, TopologyError, TopologySpec, Tree};
use crate::simcore::{Flow, SimConfig};
use crate::strategies::{run_strategy, MetricsReport, Schedule, Strategy, StrategyError, StrategyRun};
use crate::telemetry::{write_series_csv, PROBE_TOS};

pub const OUTPUT_DIR_ENV: &str = "MMINT_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "mmint-out";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "mmint", version, about = "Multi-queue in-band telemetry simulator")]
pub struct Cli {
    /// Print progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an experiment and write its artifacts.
    Run {
        config: PathBuf,
        /// Output directory. Overrides the config file and MMINT_OUTPUT_DIR.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check an experiment config and its topology without running anything.
    Validate { config: PathBuf },
    /// Print switches, nodeIDs, leaves and the forward routeID of a topology.
    Describe {
        topology: PathBuf,
        /// Root of the probing tree. Defaults to the topology's root.
        #[arg(long)]
        root: Option<String>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: io::Error },
    #[error("malformed config {path}: {message}")]
    Syntax { path: String, message: String },
    #[error("invalid config {path}:\n{}", .issues.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Invalid { path: String, issues: Vec<Issue> },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error("simulation failed: {0}")]
    Strategy(#[from] StrategyError),
    #[error("cannot write {path}: {source}")]
    Write { path: String, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Strategy(_) | CliError::Write { .. } => EXIT_INTERNAL,
            _ => EXIT_INPUT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficSpec {
    pub source: String,
    pub sink: String,
    pub rate_pps: f64,
    pub packet_size: usize,
    #[serde(default)]
    pub tos: u8,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Relative paths are resolved against the config file's directory.
    pub topology: PathBuf,
    #[serde(default)]
    pub root: Option<String>,
    pub strategies: Vec<String>,
    #[serde(default)]
    pub probe_start_us: u64,
    /// Without a period a single probe generation fires.
    #[serde(default)]
    pub probe_period_us: Option<u64>,
    pub duration_us: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub traffic: Vec<TrafficSpec>,
}

/// A parsed and checked experiment with its topology loaded.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub path: PathBuf,
    pub config: ExperimentConfig,
    pub spec: TopologySpec,
    pub tree: Tree,
    pub strategies: Vec<Strategy>,
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let config: ExperimentConfig = toml::from_str(&text).map_err(|e| CliError::Syntax {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_config(path, config)
    }

    pub fn from_config(path: &Path, config: ExperimentConfig) -> Result<Self, CliError> {
        let invalid = |issues| CliError::Invalid {
            path: path.display().to_string(),
            issues,
        };
        let mut issues = Vec::new();
        let mut issue = |at: &str, message: String| {
            issues.push(Issue {
                path: at.to_string(),
                message,
            })
        };
        let mut strategies = Vec::new();
        for (i, s) in config.strategies.iter().enumerate() {
            match s.parse::<Strategy>() {
                Ok(s) if strategies.contains(&s) => {
                    issue(&format!("strategies[{i}]"), format!("{s} listed twice"))
                }
                Ok(s) => strategies.push(s),
                Err(e) => issue(&format!("strategies[{i}]"), e),
            }
        }
        if config.strategies.is_empty() {
            issue("strategies", "at least one strategy is required".into());
        }
        if config.duration_us == 0 {
            issue("duration_us", "must be positive".into());
        }
        if config.probe_start_us >= config.duration_us {
            issue("probe_start_us", "must be earlier than duration_us".into());
        }
        if config.probe_period_us == Some(0) {
            issue("probe_period_us", "must be positive".into());
        }
        if !issues.is_empty() {
            return Err(invalid(issues));
        }

        let topo_path = path
            .parent()
            .unwrap_or(Path::new("."))
            .join(&config.topology);
        let spec = load_topology_file(&topo_path)?;
        let root = config.root.clone().unwrap_or_else(|| spec.root.clone());
        let tree = to_tree(&spec, &root)?;

        let mut issues = Vec::new();
        for (i, t) in config.traffic.iter().enumerate() {
            let at = |f: &str| format!("traffic[{i}].{f}");
            for (field, host) in [("source", &t.source), ("sink", &t.sink)] {
                if spec.host(host).is_none() {
                    issues.push(Issue {
                        path: at(field),
                        message: format!("unknown host {host:?}"),
                    });
                }
            }
            if t.tos == PROBE_TOS {
                issues.push(Issue {
                    path: at("tos"),
                    message: format!("{PROBE_TOS} is reserved for probes"),
                });
            }
            if !(t.rate_pps > 0.0 && t.rate_pps.is_finite()) {
                issues.push(Issue {
                    path: at("rate_pps"),
                    message: "must be a positive number".into(),
                });
            }
            if !(64..=9000).contains(&t.packet_size) {
                issues.push(Issue {
                    path: at("packet_size"),
                    message: "must be between 64 and 9000 bytes".into(),
                });
            }
        }
        if !issues.is_empty() {
            return Err(invalid(issues));
        }
        Ok(Experiment {
            path: path.to_path_buf(),
            config,
            spec,
            tree,
            strategies,
        })
    }

    pub fn flows(&self) -> Vec<Flow> {
        self.config
            .traffic
            .iter()
            .map(|t| Flow {
                source: t.source.clone(),
                sink: t.sink.clone(),
                rate_pps: t.rate_pps,
                packet_size: t.packet_size,
                tos: t.tos,
                start_ns: 0,
                stop_ns: Some(self.config.duration_us * 1000),
                max_packets: None,
            })
            .collect()
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            start_ns: self.config.probe_start_us * 1000,
            period_ns: self.config.probe_period_us.map(|p| p * 1000),
            until_ns: self.config.duration_us * 1000,
        }
    }

    /// Output directory: flag, then config, then environment, then default.
    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.config.output_dir.clone())
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }
}

#[derive(Debug)]
pub struct Outcome {
    pub runs: Vec<StrategyRun>,
    pub report: MetricsReport,
}

/// Runs every configured strategy as an independent simulation.
pub fn run_experiment(exp: &Experiment, seed: u64, verbose: u8) -> Result<Outcome, CliError> {
    let node_ids = assign_node_ids(&exp.spec)?;
    let flows = exp.flows();
    let schedule = exp.schedule();
    let config = SimConfig {
        seed,
        until_ns: exp.config.duration_us * 1000,
        ..Default::default()
    };
    let results: Vec<Result<StrategyRun, StrategyError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = exp
            .strategies
            .iter()
            .map(|&s| {
                let (node_ids, flows, config) = (&node_ids, &flows, &config);
                scope.spawn(move || {
                    if verbose > 0 {
                        eprintln!("running {s}");
                    }
                    run_strategy(&exp.spec, &exp.tree, s, node_ids, &schedule, flows, config)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("strategy thread panicked"))
            .collect()
    });
    let runs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    for r in &runs {
        if !r.trace.violations.is_empty() {
            eprintln!(
                "{}: {} invariant violations, first: {}",
                r.strategy,
                r.trace.violations.len(),
                r.trace.violations[0]
            );
        }
    }
    let report = MetricsReport {
        rows: runs.iter().map(|r| r.metrics.clone()).collect(),
    };
    Ok(Outcome { runs, report })
}

fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> Result<(), CliError> {
    let mut buf = Vec::new();
    let err = |source| CliError::Write {
        path: path.display().to_string(),
        source,
    };
    f(&mut buf).map_err(err)?;
    fs::write(path, buf).map_err(err)
}

fn csv_io(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

/// Writes metrics.csv, summary.txt and, per strategy, trace.jsonl and one
/// series CSV per switch.
pub fn write_artifacts(outcome: &Outcome, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mkdir = |d: &Path| {
        fs::create_dir_all(d).map_err(|source| CliError::Write {
            path: d.display().to_string(),
            source,
        })
    };
    mkdir(dir)?;
    let mut written = Vec::new();
    let metrics = dir.join("metrics.csv");
    write_file(&metrics, |b| outcome.report.write_csv(b).map_err(csv_io))?;
    written.push(metrics);
    let summary = dir.join("summary.txt");
    write_file(&summary, |b| {
        b.extend_from_slice(outcome.report.summary().as_bytes());
        Ok(())
    })?;
    written.push(summary);
    for run in &outcome.runs {
        let sub = dir.join(run.strategy.to_string());
        mkdir(&sub)?;
        let trace = sub.join("trace.jsonl");
        write_file(&trace, |b| run.trace.write_jsonl(b))?;
        written.push(trace);
        for (id, name) in run.trace.switch_names.iter().enumerate() {
            let path = sub.join(format!("series-{name}.csv"));
            write_file(&path, |b| {
                write_series_csv(&run.series, &run.trace.switch_names, Some(id as u16), b)
                    .map_err(csv_io)
            })?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Switch table, leaves and forward routeID of a topology.
pub fn describe_topology(spec: &TopologySpec, root: &str) -> Result<String, CliError> {
    let tree = to_tree(spec, root)?;
    let ids = assign_node_ids(spec)?;
    let mut s = String::new();
    let _ = writeln!(s, "topology {} (root {root})", spec.name);
    let _ = writeln!(
        s,
        "{:<8} {:>5} {:>3} {:>8} {:<10} {:>12} {:>7}",
        "switch", "ports", "nq", "capacity", "weights", "nodeID", "mem(B)"
    );
    for sw in &spec.switches {
        let weights = sw
            .queue_weights
            .iter()
            .map(u32::to_string)
            .collect::<Vec<_>>()
            .join(",");
        let _ = writeln!(
            s,
            "{:<8} {:>5} {:>3} {:>8} {:<10} {:>12} {:>7}",
            sw.name,
            sw.ports,
            sw.nq,
            sw.queue_capacity,
            weights,
            ids[&sw.name].poly.to_string(),
            sw.register_memory_bytes()
        );
    }
    let polys: Vec<_> = ids.values().map(|n| &n.poly).collect();
    let coprime = polys
        .iter()
        .enumerate()
        .all(|(i, a)| polys[i + 1..].iter().all(|b| gcd(a, b).is_ok_and(|g| g.is_one())));
    let _ = writeln!(s, "nodeIDs pairwise coprime: {}", if coprime { "yes" } else { "no" });
    let _ = writeln!(s, "leaves: {}", tree.leaves.join(", "));
    let edges: Vec<String> = tree.edges().iter().map(|(a, b)| format!("{a}->{b}")).collect();
    let _ = writeln!(s, "tree: {}", edges.join(" "));
    let route = encode_tree(&tree, &ids, &forward_states(&tree, &ids)?)?;
    let _ = writeln!(
        s,
        "forward routeID ({} bits): {}",
        route.as_poly().bit_len(),
        route
    );
    let hosts: BTreeSet<String> = spec
        .hosts
        .iter()
        .map(|h| format!("{}@{}({})", h.name, h.switch, format!("{:?}", h.role).to_lowercase()))
        .collect();
    if !hosts.is_empty() {
        let _ = writeln!(s, "hosts: {}", hosts.into_iter().collect::<Vec<_>>().join(" "));
    }
    for w in &spec.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    Ok(s)
}

fn execute(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Run { config, out, seed } => {
            let exp = Experiment::load(&config)?;
            let seed = seed.unwrap_or(exp.config.seed);
            let dir = exp.output_dir(out.as_deref());
            let outcome = run_experiment(&exp, seed, cli.verbose)?;
            let written = write_artifacts(&outcome, &dir)?;
            if cli.verbose > 0 {
                for w in &written {
                    eprintln!("wrote {}", w.display());
                }
            }
            Ok(format!(
                "{}wrote {} files to {}\n",
                outcome.report.summary(),
                written.len(),
                dir.display()
            ))
        }
        Command::Validate { config } => {
            let exp = Experiment::load(&config)?;
            assign_node_ids(&exp.spec)?;
            let mut s = format!(
                "{}: ok ({} switches, {} leaves, strategies {})\n",
                config.display(),
                exp.spec.switches.len(),
                exp.tree.leaves.len(),
                exp.strategies
                    .iter()
                    .map(Strategy::to_string)
                    .collect::<Vec<_>>()
                    .join(",")
            );
            for w in &exp.spec.warnings {
                let _ = writeln!(s, "warning: {w}");
            }
            Ok(s)
        }
        Command::Describe { topology, root } => {
            let spec = load_topology_file(&topology)?;
            let root = root.unwrap_or_else(|| spec.root.clone());
            describe_topology(&spec, &root)
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(text) => {
            print!("{text}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
