//! Command-line front end: plan, simulate, compare, sweep-k and validate.
//!
//! Latencies print in milliseconds with three decimals and memory in MiB
//! with one, so outputs diff cleanly.

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::baselines::{gpu_caps, mem_sched, perf_sched};
use crate::error::{ConfigError, PlanError};
use crate::halda::{self, valid_factors};
use crate::latency_model::{
    check_plan, classify_devices, estimate_memory_usage, evaluate_tpot, layer_counts, PartitionPlan,
};
use crate::profiles::{load_cluster_spec, ClusterSpec};
use crate::sim::{export_trace, simulate_with, Parallelism, SimConfig, SimMode, SimResult, TraceFormat};

const MIB: f64 = (1u64 << 20) as f64;
const DEFAULT_PROMPT: u32 = 16;

#[derive(Parser)]
#[command(name = "ringplan", version, about = "Plan and simulate LLM inference on a ring of heterogeneous devices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a layer assignment and print it.
    Plan(PlanArgs),
    /// Replay a plan in the discrete-event simulator.
    Simulate(SimulateArgs),
    /// Plan with every scheduler and simulate each result.
    Compare(CompareArgs),
    /// Simulate even-window plans for every valid round count.
    SweepK(CompareArgs),
    /// Check a cluster config and report every problem found.
    Validate(ConfigArg),
}

#[derive(Args)]
struct ConfigArg {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Scheduler {
    Halda,
    Mem,
    Perf,
}

impl fmt::Display for Scheduler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheduler::Halda => "halda",
            Scheduler::Mem => "mem",
            Scheduler::Perf => "perf",
        })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Pp,
    Prp,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    TraceEvent,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value_t = Scheduler::Halda)]
    scheduler: Scheduler,
    /// Keep devices that end up with a single layer.
    #[arg(long)]
    no_select: bool,
    /// Also write the plan to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Plan file written by `plan --out`.
    #[arg(long, conflicts_with = "scheduler")]
    plan: Option<PathBuf>,
    /// Plan on the fly with this scheduler (default: halda).
    #[arg(long, value_enum)]
    scheduler: Option<Scheduler>,
    /// Decode tokens to generate.
    #[arg(long)]
    tokens: u32,
    /// Prompt length for the prefill pass, which also warms the caches;
    /// 0 skips prefill.
    #[arg(long, default_value_t = DEFAULT_PROMPT)]
    prompt: u32,
    #[arg(long, value_enum, default_value_t = ModeArg::Prp)]
    mode: ModeArg,
    #[arg(long)]
    no_prefetch: bool,
    /// Grow the KV cache by one token per decode step.
    #[arg(long)]
    kv_growth: bool,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv, requires = "trace")]
    trace_format: FormatArg,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    tokens: u32,
    #[arg(long, default_value_t = DEFAULT_PROMPT)]
    prompt: u32,
}

/// A failure tagged with the pipeline stage that produced it.
#[derive(Debug)]
struct StageError {
    stage: &'static str,
    message: String,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failed: {}", self.stage, self.message)
    }
}

fn stage<E: fmt::Display>(stage: &'static str) -> impl Fn(E) -> StageError {
    move |e| StageError {
        stage,
        message: e.to_string(),
    }
}

type CliResult = Result<(), StageError>;

/// Parse `argv` (program name first), run the command and return the
/// process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_cli_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// Like [`run_cli`] with explicit output streams.
pub fn run_cli_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if code == 0 {
                write!(out, "{}", e.render())
            } else {
                write!(err, "{}", e.render())
            };
            return code;
        }
    };
    let res = match cli.command {
        Command::Plan(a) => cmd_plan(&a, out, err),
        Command::Simulate(a) => cmd_simulate(&a, out, err),
        Command::Compare(a) => cmd_compare(&a, out, err),
        Command::SweepK(a) => cmd_sweep_k(&a, out),
        Command::Validate(a) => cmd_validate(&a.config, out),
    };
    match res {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn io_err(e: std::io::Error) -> StageError {
    stage("output")(e)
}

fn load(path: &Path) -> Result<ClusterSpec, StageError> {
    load_cluster_spec(path).map_err(stage("config"))
}

fn ms(seconds: f64) -> String {
    format!("{:.3}", seconds * 1e3)
}

fn mib(bytes: f64) -> String {
    format!("{:.1}", bytes / MIB)
}

/// Plan with `scheduler`. Halda may shrink the cluster when pruning, so
/// the cluster the plan refers to comes back too.
fn make_plan(
    spec: &ClusterSpec,
    scheduler: Scheduler,
    select: bool,
    err: &mut dyn Write,
) -> Result<(ClusterSpec, PartitionPlan), StageError> {
    match scheduler {
        Scheduler::Halda => {
            let plan = match halda::run(spec) {
                Ok(p) => p,
                Err(PlanError::NonConvergence {
                    iterations,
                    best: Some(best),
                }) => {
                    let _ = writeln!(err, "warning: no convergence after {iterations} iterations; using best plan");
                    *best
                }
                Err(e) => return Err(stage("plan")(e)),
            };
            if select {
                halda::select_devices(spec, &plan).map_err(stage("device selection"))
            } else {
                Ok((spec.clone(), plan))
            }
        }
        Scheduler::Mem => Ok((spec.clone(), mem_sched(spec).map_err(stage("plan"))?)),
        Scheduler::Perf => Ok((spec.clone(), perf_sched(spec).map_err(stage("plan"))?)),
    }
}

fn print_plan(out: &mut dyn Write, spec: &ClusterSpec, plan: &PartitionPlan) -> Result<(), StageError> {
    let tpot = evaluate_tpot(spec, plan).map_err(stage("evaluate"))?;
    let usage = estimate_memory_usage(spec, plan).map_err(stage("evaluate"))?;
    let counts = layer_counts(&plan.w, &plan.n, spec.layers()).map_err(stage("evaluate"))?;
    writeln!(out, "k: {}", plan.k).map_err(io_err)?;
    writeln!(out, "analytical TPOT: {} ms", ms(tpot)).map_err(io_err)?;
    writeln!(
        out,
        "{:<12} {:<7} {:>4} {:>4} {:>8} {:>8} {:>5} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "device", "backend", "w", "n", "cpu_lyr", "gpu_lyr", "class", "ram_MiB", "ram_cap", "vram_MiB", "vram_cap", "overloaded"
    )
    .map_err(io_err)?;
    for (m, d) in spec.devices.iter().enumerate() {
        let u = &usage[m];
        let class = if plan.sets.relay[m] {
            "relay".to_string()
        } else if plan.sets.forced[m] {
            format!("{}f", plan.sets.class[m])
        } else {
            plan.sets.class[m].to_string()
        };
        writeln!(
            out,
            "{:<12} {:<7} {:>4} {:>4} {:>8} {:>8} {:>5} {:>10} {:>10} {:>10} {:>10} {:>10}",
            d.id,
            d.backend.to_string(),
            plan.w[m],
            plan.n[m],
            counts.l[m] - counts.l_gpu[m],
            counts.l_gpu[m],
            class,
            mib(u.ram_demand),
            mib(u.ram_budget as f64),
            mib(u.gpu_demand),
            mib(u.gpu_budget as f64),
            if u.overloaded { "yes" } else { "no" }
        )
        .map_err(io_err)?;
    }
    let problems = check_plan(spec, plan);
    if !problems.is_empty() {
        writeln!(out, "constraint violations:").map_err(io_err)?;
        for p in problems {
            writeln!(out, "  - {p}").map_err(io_err)?;
        }
    }
    Ok(())
}

fn removed_devices(before: &ClusterSpec, after: &ClusterSpec) -> Vec<String> {
    before
        .devices
        .iter()
        .filter(|d| after.device_index(&d.id).is_none())
        .map(|d| d.id.clone())
        .collect()
}

fn cmd_plan(a: &PlanArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let spec = load(&a.config)?;
    let (used, plan) = make_plan(&spec, a.scheduler, !a.no_select, err)?;
    writeln!(out, "scheduler: {}", a.scheduler).map_err(io_err)?;
    let removed = removed_devices(&spec, &used);
    if !removed.is_empty() {
        writeln!(out, "removed devices: {}", removed.join(", ")).map_err(io_err)?;
    }
    print_plan(out, &used, &plan)?;
    if let Some(path) = &a.out {
        std::fs::write(path, plan.to_toml_string()).map_err(stage("write plan"))?;
    }
    Ok(())
}

/// The cluster restricted to the devices a plan names, in ring order.
fn restrict(spec: &ClusterSpec, plan: &PartitionPlan) -> Result<ClusterSpec, StageError> {
    let mut idx = Vec::with_capacity(plan.device_ids.len());
    for id in &plan.device_ids {
        let m = spec.device_index(id).ok_or_else(|| StageError {
            stage: "plan",
            message: format!("plan names unknown device `{id}`"),
        })?;
        idx.push(m);
    }
    if idx.first() != Some(&0) || idx.windows(2).any(|p| p[0] >= p[1]) {
        return Err(StageError {
            stage: "plan",
            message: "plan devices must keep the cluster's ring order and head".into(),
        });
    }
    let mut s = spec.clone();
    s.devices = idx.iter().map(|&m| spec.devices[m].clone()).collect();
    Ok(s)
}

fn sim_mode(mode: ModeArg, no_prefetch: bool) -> SimMode {
    SimMode {
        parallelism: match mode {
            ModeArg::Pp => Parallelism::Pp,
            ModeArg::Prp => Parallelism::Prp,
        },
        prefetch: !no_prefetch,
    }
}

fn run_sim(spec: &ClusterSpec, plan: &PartitionPlan, cfg: &SimConfig) -> Result<SimResult, StageError> {
    simulate_with(spec, plan, cfg).map_err(stage("simulate"))
}

fn cmd_simulate(a: &SimulateArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let spec = load(&a.config)?;
    let (spec, plan) = match &a.plan {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(stage("plan"))?;
            let plan = PartitionPlan::from_toml_str(&text).map_err(stage("plan"))?;
            (restrict(&spec, &plan)?, plan)
        }
        None => make_plan(&spec, a.scheduler.unwrap_or(Scheduler::Halda), true, err)?,
    };
    let cfg = SimConfig {
        mode: sim_mode(a.mode, a.no_prefetch),
        prompt_tokens: a.prompt,
        decode_tokens: a.tokens,
        kv_growth: a.kv_growth,
    };
    let r = run_sim(&spec, &plan, &cfg)?;
    writeln!(
        out,
        "mode: {} prefetch: {} rounds: {}",
        cfg.mode.parallelism,
        if cfg.mode.prefetch { "on" } else { "off" },
        r.rounds
    )
    .map_err(io_err)?;
    writeln!(out, "TTFT: {} ms", ms(r.ttft)).map_err(io_err)?;
    writeln!(out, "mean TPOT: {} ms", ms(r.mean_tpot)).map_err(io_err)?;
    writeln!(out, "{:<12} {:>12}", "device", "disk_MiB").map_err(io_err)?;
    for (id, bytes) in r.device_ids.iter().zip(&r.disk_bytes_read) {
        writeln!(out, "{:<12} {:>12}", id, mib(*bytes as f64)).map_err(io_err)?;
    }
    if let Some(path) = &a.trace {
        let format = match a.trace_format {
            FormatArg::Csv => TraceFormat::Csv,
            FormatArg::TraceEvent => TraceFormat::TraceEvent,
        };
        std::fs::write(path, export_trace(&r, format)).map_err(stage("write trace"))?;
    }
    Ok(())
}

fn cmd_compare(a: &CompareArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let spec = load(&a.config)?;
    writeln!(
        out,
        "{:<10} {:>4} {:>8} {:>14} {:>14} {:>12}",
        "scheduler", "k", "feasible", "analytical_ms", "sim_tpot_ms", "sim_ttft_ms"
    )
    .map_err(io_err)?;
    for scheduler in [Scheduler::Halda, Scheduler::Mem, Scheduler::Perf] {
        let (used, plan) = match make_plan(&spec, scheduler, true, err) {
            Ok(x) => x,
            // An unusable baseline is a row, not a failure.
            Err(e) if scheduler != Scheduler::Halda => {
                writeln!(out, "{:<10} {e}", scheduler.to_string()).map_err(io_err)?;
                continue;
            }
            Err(e) => return Err(e),
        };
        let tpot = evaluate_tpot(&used, &plan).map_err(stage("evaluate"))?;
        let feasible = check_plan(&used, &plan).is_empty();
        let cfg = SimConfig {
            mode: SimMode::PRP,
            prompt_tokens: a.prompt,
            decode_tokens: a.tokens,
            kv_growth: false,
        };
        let r = run_sim(&used, &plan, &cfg)?;
        writeln!(
            out,
            "{:<10} {:>4} {:>8} {:>14} {:>14} {:>12}",
            scheduler.to_string(),
            plan.k,
            if feasible { "yes" } else { "no" },
            ms(tpot),
            ms(r.mean_tpot),
            ms(r.ttft)
        )
        .map_err(io_err)?;
    }
    Ok(())
}

/// Even windows over every device for each `k` where `L / k` splits evenly;
/// each device runs as many GPU layers as its VRAM allows.
pub fn even_window_plans(spec: &ClusterSpec) -> Result<Vec<PartitionPlan>, crate::error::ModelError> {
    let devices = spec.devices.len() as u32;
    let caps = gpu_caps(spec);
    let mut plans = Vec::new();
    for k in valid_factors(spec.layers()) {
        let window = spec.layers() / k;
        if !window.is_multiple_of(devices) {
            continue;
        }
        let w = vec![window / devices; devices as usize];
        let n: Vec<u32> = w.iter().zip(&caps).map(|(&w, &c)| w.min(c / k)).collect();
        let none = vec![false; w.len()];
        let sets = classify_devices(spec, &w, &n, &none, &none)?;
        let mut plan = PartitionPlan {
            device_ids: spec.devices.iter().map(|d| d.id.clone()).collect(),
            w,
            n,
            k,
            objective: 0.0,
            sets,
        };
        plan.objective = evaluate_tpot(spec, &plan)?;
        plans.push(plan);
    }
    Ok(plans)
}

fn cmd_sweep_k(a: &CompareArgs, out: &mut dyn Write) -> CliResult {
    let spec = load(&a.config)?;
    let plans = even_window_plans(&spec).map_err(stage("sweep-k"))?;
    if plans.is_empty() {
        return Err(StageError {
            stage: "sweep-k",
            message: format!(
                "no k gives windows divisible by {} devices for {} layers",
                spec.devices.len(),
                spec.layers()
            ),
        });
    }
    writeln!(out, "{:>4} {:>6} {:>14} {:>14}", "k", "window", "analytical_ms", "sim_tpot_ms").map_err(io_err)?;
    for plan in plans {
        let cfg = SimConfig {
            mode: SimMode::PRP,
            prompt_tokens: a.prompt,
            decode_tokens: a.tokens,
            kv_growth: false,
        };
        let r = run_sim(&spec, &plan, &cfg)?;
        writeln!(
            out,
            "{:>4} {:>6} {:>14} {:>14}",
            plan.k,
            plan.w[0],
            ms(plan.objective),
            ms(r.mean_tpot)
        )
        .map_err(io_err)?;
    }
    Ok(())
}

fn cmd_validate(path: &Path, out: &mut dyn Write) -> CliResult {
    match load_cluster_spec(path) {
        Ok(spec) => {
            writeln!(
                out,
                "ok: {} devices, model `{}` with {} layers",
                spec.devices.len(),
                spec.model.name,
                spec.layers()
            )
            .map_err(io_err)?;
            Ok(())
        }
        Err(ConfigError::Invalid(v)) => Err(StageError {
            stage: "validate",
            message: format!(
                "{} problem(s)\n{}",
                v.len(),
                v.iter().map(|x| format!("  - {x}")).collect::<Vec<_>>().join("\n")
            ),
        }),
        Err(e) => Err(stage("config")(e)),
    }
}
