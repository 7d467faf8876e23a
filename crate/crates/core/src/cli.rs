//! `hopbound` command line.
//!
//! Exit status: 0 on success, 1 for usage or scenario errors, 2 for
//! runtime failures such as unwritable output.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::json;

use crate::envelope::{effective_envelope, sum_envelopes, FlowSpec, PeakRate};
use crate::metrics::{render_csv, MetricsSummary};
use crate::node::{busy_period, AdmissionMode};
use crate::oracle::{grid_delay_bound, lindley_queue, mc_envelope_check, GridSpec};
use crate::scenario::{load_scenario, Scenario, ScenarioError, SweepParam};
use crate::sim::{run, write_traces, RunOptions, RunResult};

/// Default output directory when `--out` is not given.
pub const OUT_DIR_ENV: &str = "HOPBOUND_OUT_DIR";
const FALLBACK_OUT_DIR: &str = "hopbound-out";

#[derive(Debug, Parser)]
#[command(name = "hopbound", version, about = "Delay-bound admission and reservation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Overrides {
    /// Override the scenario's admission mode (deterministic | effective).
    #[arg(long)]
    mode: Option<AdmissionMode>,
    /// Override the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: $HOPBOUND_OUT_DIR or ./hopbound-out].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate signaling and data traffic; write metrics, trace and message log.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Admission decisions only, no packets.
    Admit {
        scenario: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// One metrics row per value of a single parameter.
    Sweep {
        scenario: PathBuf,
        /// capacity, loss_rate, node_epsilon, app_delay_bound, burst,
        /// sustained_rate, flow_count, packet_size, horizon or seed.
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Skip the data plane.
        #[arg(long)]
        admit: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Load and check a scenario.
    Validate { scenario: PathBuf },
    /// Brute-force reference computations.
    Oracle {
        #[command(subcommand)]
        which: OracleCommand,
    },
}

#[derive(Debug, Subcommand)]
enum OracleCommand {
    /// Grid maximum of (G(t) − C·t)/C.
    GridDelayBound { input: PathBuf },
    /// Monte-Carlo exceedance frequency of the effective envelope.
    McEnvelope { input: PathBuf },
    /// Waiting times from the Lindley recursion.
    Lindley { input: PathBuf },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Scenario(ScenarioError),
    Runtime(String),
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Scenario(e)
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Runs the CLI on `args` (including the program name) and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Scenario(e)) => {
            eprintln!("error: {e}");
            1
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { scenario, overrides } => {
            let s = prepare(&scenario, &overrides)?;
            let result = run(&s, &RunOptions::full()).map_err(runtime)?;
            let dir = out_dir(&overrides)?;
            write_outputs(&s, &result, &dir, true)?;
            print_summary(&result.summary, &dir);
            Ok(())
        }
        Command::Admit { scenario, overrides } => {
            let s = prepare(&scenario, &overrides)?;
            let result = run(&s, &RunOptions::admit_only()).map_err(runtime)?;
            let dir = out_dir(&overrides)?;
            write_outputs(&s, &result, &dir, false)?;
            for d in &result.decisions {
                let mut line = json!({
                    "time": d.time,
                    "flow_id": d.decision.flow_id,
                    "nonce": d.decision.nonce,
                    "kind": d.kind,
                    "cumulative_bound": d.decision.cumulative_bound,
                    "app_delay_bound": d.app_delay_bound,
                });
                // The verdict carries its own `verdict` tag and optional `reason`.
                if let (Some(obj), serde_json::Value::Object(v)) =
                    (line.as_object_mut(), serde_json::to_value(&d.decision.verdict).map_err(runtime)?)
                {
                    obj.extend(v);
                }
                println!("{line}");
            }
            print_summary(&result.summary, &dir);
            Ok(())
        }
        Command::Sweep {
            scenario,
            param,
            values,
            admit,
            overrides,
        } => {
            let base = prepare(&scenario, &overrides)?;
            let variants = values
                .iter()
                .map(|&v| base.with_param(param, v))
                .collect::<Result<Vec<_>, _>>()?;
            let options = if admit {
                RunOptions {
                    data_plane: false,
                    record_traces: false,
                    record_messages: false,
                }
            } else {
                RunOptions::summary_only()
            };
            let summaries = variants
                .par_iter()
                .map(|s| run(s, &options).map(|r| r.summary))
                .collect::<Result<Vec<_>, _>>()
                .map_err(runtime)?;
            let csv = render_csv(
                values
                    .iter()
                    .zip(&summaries)
                    .map(|(&v, s)| (Some((param.as_str(), v)), s)),
            );
            let dir = out_dir(&overrides)?;
            let path = dir.join(format!("sweep-{}-{}.csv", base.name, param));
            fs::write(&path, &csv).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
            print!("{csv}");
            Ok(())
        }
        Command::Validate { scenario } => {
            let s = load_scenario(&scenario)?;
            let flows = s.flow_instances()?.len();
            println!(
                "ok: {} ({} nodes, {} links, {} flows, {} handovers)",
                s.name,
                s.nodes.len(),
                s.links.len(),
                flows,
                s.handovers.len()
            );
            Ok(())
        }
        Command::Oracle { which } => oracle(which),
    }
}

fn prepare(path: &Path, o: &Overrides) -> Result<Scenario, CliError> {
    let mut s = load_scenario(path)?;
    if let Some(mode) = o.mode {
        s.admission_mode = mode;
    }
    if let Some(seed) = o.seed {
        s.seed = seed;
    }
    Ok(s)
}

fn out_dir(o: &Overrides) -> Result<PathBuf, CliError> {
    let dir = o
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(FALLBACK_OUT_DIR));
    fs::create_dir_all(&dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_outputs(s: &Scenario, r: &RunResult, dir: &Path, with_trace: bool) -> Result<(), CliError> {
    let write = |name: &str, body: &[u8]| -> Result<(), CliError> {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| runtime(format!("{}: {e}", path.display())))
    };
    write(&s.output.metrics, render_csv([(None, &r.summary)]).as_bytes())?;
    write(&s.output.summary, r.summary.to_json().as_bytes())?;
    let mut messages = r.messages.join("\n");
    if !messages.is_empty() {
        messages.push('\n');
    }
    write(&s.output.messages, messages.as_bytes())?;
    if with_trace {
        let path = dir.join(&s.output.trace);
        let file = File::create(&path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        write_traces(BufWriter::new(file), &r.traces).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn print_summary(m: &MetricsSummary, dir: &Path) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(
        out,
        "{} [{}] admitted={} rejected={} utilization={} max_cum_bound={} samples={} violations={} -> {}",
        m.scenario,
        m.mode.as_str(),
        m.admitted,
        m.rejected,
        crate::metrics::format_number(m.utilization),
        crate::metrics::format_number(m.max_cum_bound),
        m.samples,
        m.violations,
        dir.display()
    );
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OracleFlow {
    /// Omitted or `inf` for unbounded.
    peak_rate: Option<f64>,
    sustained_rate: f64,
    burst: f64,
    #[serde(default = "one")]
    count: u32,
}

fn one() -> u32 {
    1
}

fn default_deterministic() -> AdmissionMode {
    AdmissionMode::Deterministic
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridInput {
    capacity: f64,
    /// Defaults to the aggregate's busy period.
    t_max: Option<f64>,
    steps: u64,
    #[serde(default = "default_deterministic")]
    mode: AdmissionMode,
    epsilon: Option<f64>,
    flows: Vec<OracleFlow>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct McInput {
    epsilon: f64,
    t_samples: Vec<f64>,
    trials: u64,
    #[serde(default = "default_mc_seed")]
    seed: u64,
    flows: Vec<OracleFlow>,
}

fn default_mc_seed() -> u64 {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LindleyInput {
    capacity: f64,
    packet_size: f64,
    arrivals: Vec<f64>,
}

fn read_input<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn expand(flows: &[OracleFlow]) -> Result<Vec<FlowSpec>, CliError> {
    let mut out = Vec::new();
    for (i, f) in flows.iter().enumerate() {
        let peak = f.peak_rate.map_or(PeakRate::Unbounded, PeakRate::from_f64);
        for j in 0..f.count {
            let spec = FlowSpec::new(format!("f{i}-{j}"), peak, f.sustained_rate, f.burst, 0.5, 1.0)
                .map_err(|e| CliError::Usage(format!("flow {i}: {e}")))?;
            out.push(spec);
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage("no flows".into()));
    }
    Ok(out)
}

fn oracle(which: OracleCommand) -> Result<(), CliError> {
    let usage = |e: &dyn std::fmt::Display| CliError::Usage(e.to_string());
    let value = match which {
        OracleCommand::GridDelayBound { input } => {
            let inp: GridInput = read_input(&input)?;
            let specs = expand(&inp.flows)?;
            let det = sum_envelopes(&specs.iter().map(FlowSpec::envelope).collect::<Vec<_>>()).map_err(|e| usage(&e))?;
            let eval: Box<dyn Fn(f64) -> f64 + Sync> = match inp.mode {
                AdmissionMode::Deterministic => Box::new(move |t| det.eval(t).expect("t ≥ 0")),
                AdmissionMode::Effective => {
                    let eps = inp.epsilon.ok_or_else(|| CliError::Usage("effective mode needs epsilon".into()))?;
                    let g = effective_envelope(&specs, eps).map_err(|e| usage(&e))?;
                    Box::new(move |t| g.eval(t).expect("t ≥ 0"))
                }
            };
            let t_max = match inp.t_max {
                Some(t) => t,
                None => {
                    let env = sum_envelopes(&specs.iter().map(FlowSpec::envelope).collect::<Vec<_>>()).map_err(|e| usage(&e))?;
                    busy_period(inp.capacity, &env).map_err(|e| usage(&e))?
                }
            };
            let grid = GridSpec::new(t_max, inp.steps).map_err(|e| usage(&e))?;
            let bound = grid_delay_bound(eval, inp.capacity, grid);
            json!({ "delay_bound": bound, "t_max": t_max, "steps": inp.steps, "step": grid.step() })
        }
        OracleCommand::McEnvelope { input } => {
            let inp: McInput = read_input(&input)?;
            let specs = expand(&inp.flows)?;
            let report = mc_envelope_check(&specs, inp.epsilon, &inp.t_samples, inp.trials, inp.seed).map_err(|e| usage(&e))?;
            serde_json::to_value(report).map_err(runtime)?
        }
        OracleCommand::Lindley { input } => {
            let inp: LindleyInput = read_input(&input)?;
            let schedule: Vec<(f64, f64)> = inp.arrivals.iter().map(|&a| (a, inp.packet_size)).collect();
            let waits = lindley_queue(&schedule, inp.capacity).map_err(|e| usage(&e))?;
            json!({ "waits": waits })
        }
    };
    println!("{value}");
    Ok(())
}
