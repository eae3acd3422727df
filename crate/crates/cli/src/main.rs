use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use lazymtl::encoding::EncodedScenario;
use lazymtl::milp::Budget;
use lazymtl::mtl::NnfFormula;
use lazymtl::predicate::Predicate;
use lazymtl::robustness::{evaluate, Trajectory};
use lazymtl::scenario::{EventFile, PredicateSpec, Scenario};
use lazymtl::synthesis::{
    solve_direct, synthesize_open_loop, Clock, RhcConfig, RhcRunner, StepStatus, SynthesisOptions,
    SynthesisResult, SynthesisStatus, DEFAULT_SECONDS_PER_PIVOT,
};
use lazymtl_server::ServerOptions;

mod artifacts;
mod plot;

use artifacts::*;

/// Minimum-effort trajectory synthesis under Metric Temporal Logic
/// specifications.
#[derive(Parser)]
#[command(name = "lazymtl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Open-loop synthesis of one plan.
    Plan(PlanArgs),
    /// Receding-horizon execution with optional scripted predicate changes.
    Rhc(RhcArgs),
    /// Robustness of a recorded trajectory.
    Monitor(MonitorArgs),
    /// SVG figures from a `plan` or `rhc` output directory.
    Plot(PlotArgs),
    /// Interactive replanning service (websocket at /ws).
    Serve(ServeArgs),
}

#[derive(Args)]
struct PlanArgs {
    scenario: PathBuf,
    /// Output directory [default: out/<scenario name>].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Activate every constraint group up front instead of lazily.
    #[arg(long)]
    full_encoding: bool,
    /// Cap on MILP solves [default: N times the number of occurrences].
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Cap on simplex pivots over the whole run.
    #[arg(long)]
    max_pivots: Option<u64>,
    /// Wall-clock limit in seconds.
    #[arg(long)]
    time_limit: Option<f64>,
}

#[derive(Args, Clone)]
struct ClockArgs {
    /// Per-step planning allowance in seconds [default: from the scenario].
    #[arg(long)]
    deadline: Option<f64>,
    /// Measure the allowance in real time instead of simplex pivots.
    #[arg(long)]
    wall_clock: bool,
    /// Simulated cost of one simplex pivot in seconds.
    #[arg(long, default_value_t = DEFAULT_SECONDS_PER_PIVOT)]
    seconds_per_pivot: f64,
}

impl ClockArgs {
    fn clock(&self) -> Clock {
        if self.wall_clock {
            Clock::WallClock
        } else {
            Clock::Simulated {
                seconds_per_pivot: self.seconds_per_pivot,
            }
        }
    }
}

#[derive(Args)]
struct RhcArgs {
    scenario: PathBuf,
    /// JSON file of timed predicate updates.
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    clock: ClockArgs,
    /// Hand the run to the interactive server on this address.
    #[arg(long, value_name = "ADDR")]
    serve: Option<SocketAddr>,
    #[command(flatten)]
    live: LiveArgs,
}

#[derive(Args, Clone)]
struct LiveArgs {
    /// Playback speed relative to real time.
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    /// Wait for a resume command before the first step.
    #[arg(long)]
    start_paused: bool,
    /// Write the session's predicate changes here when the run ends.
    #[arg(long)]
    record: Option<PathBuf>,
}

#[derive(Args)]
struct MonitorArgs {
    /// CSV with a `t` column followed by position columns.
    trajectory: PathBuf,
    #[arg(long)]
    formula: String,
    /// TOML file with `[[predicates]]` entries (a scenario file works).
    #[arg(long)]
    predicates: PathBuf,
    /// Sample time [default: from the `t` column].
    #[arg(long)]
    dt: Option<f64>,
    /// Shrink positive and bloat negated predicates by this margin first.
    #[arg(long, default_value_t = 0.0)]
    resize: f64,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct PlotArgs {
    dir: PathBuf,
    /// Output file [default: <dir>/plot.svg].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    scenario: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    #[arg(long)]
    events: Option<PathBuf>,
    #[command(flatten)]
    clock: ClockArgs,
    #[command(flatten)]
    live: LiveArgs,
}

/// Exit codes: 0 success, 1 I/O or validation error, 2 proven infeasible,
/// 3 budget exhausted or search stalled.
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_STOPPED: u8 = 3;

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Plan(a) => plan(a),
        Command::Rhc(a) => rhc(a),
        Command::Monitor(a) => monitor(a).map(|()| 0),
        Command::Plot(a) => plot::run(&a.dir, a.out.as_deref()).map(|()| 0),
        Command::Serve(a) => serve(a).map(|()| 0),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn status_code(s: SynthesisStatus) -> u8 {
    match s {
        SynthesisStatus::Feasible => 0,
        SynthesisStatus::InfeasibleProven => EXIT_INFEASIBLE,
        SynthesisStatus::NoTrajectoryFound
        | SynthesisStatus::BudgetExhausted
        | SynthesisStatus::IterationCapped
        | SynthesisStatus::Stalled => EXIT_STOPPED,
    }
}

fn out_dir(out: Option<PathBuf>, s: &Scenario, suffix: &str) -> Result<PathBuf> {
    let dir = out.unwrap_or_else(|| PathBuf::from("out").join(format!("{}{suffix}", s.name)));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

#[derive(Serialize)]
struct PlanSummary {
    scenario: String,
    encoding: &'static str,
    status: SynthesisStatus,
    objective: Option<f64>,
    iterations: usize,
    activations: usize,
    full_group_count: usize,
    horizon: usize,
    robustness_resized: Option<WitnessView>,
    robustness_original: Option<WitnessView>,
    pivots: u64,
    nodes: u64,
}

fn plan(a: PlanArgs) -> Result<u8> {
    let s = Scenario::load(&a.scenario)?;
    let problem = s.problem::<f64>()?;
    let started = Instant::now();
    let budget = Budget {
        deadline: a.time_limit.map(|t| started + Duration::from_secs_f64(t)),
        max_pivots: a.max_pivots,
    };
    let (enc, res) = if a.full_encoding {
        let mut enc = EncodedScenario::encode_full(problem)?;
        let res = solve_direct(&mut enc, &budget)?;
        (enc, res)
    } else {
        let mut enc = EncodedScenario::encode(problem)?;
        let opts = SynthesisOptions {
            max_iterations: a.max_iterations,
            budget,
        };
        let res = synthesize_open_loop(&mut enc, &opts)?;
        (enc, res)
    };
    let elapsed = started.elapsed();
    let dir = out_dir(a.out, &s, "")?;
    let f = &enc.problem.formula;
    let dt = s.dt();
    fs::write(dir.join(SCENARIO), s.to_toml())?;
    let summary = PlanSummary {
        scenario: s.name.clone(),
        encoding: if a.full_encoding { "full" } else { "lazy" },
        status: res.status,
        objective: res.objective,
        iterations: res.iterations,
        activations: res.activations.len(),
        full_group_count: enc.full_group_count(),
        horizon: enc.horizon(),
        robustness_resized: res.robustness_resized.map(|w| WitnessView::new(&w, f, dt)),
        robustness_original: res.robustness_original.map(|w| WitnessView::new(&w, f, dt)),
        pivots: res.usage.pivots,
        nodes: res.usage.nodes,
    };
    write_json(&dir.join(SUMMARY), &summary)?;
    write_activations(&dir.join(ACTIVATIONS), f, dt, &res.activations)?;
    write_plan_files(&dir, &s, &res)?;
    write_json(
        &dir.join(WITNESS),
        &serde_json::json!({
            "resized": summary.robustness_resized,
            "original": summary.robustness_original,
        }),
    )?;

    println!("status: {}", status_name(res.status));
    match res.objective {
        Some(j) if res.status == SynthesisStatus::Feasible => println!("objective J: {j:.6}"),
        Some(j) => println!("objective J of the last relaxation: {j:.6}"),
        None => {}
    }
    println!(
        "iterations: {} (activations {} of {} groups)",
        res.iterations,
        res.activations.len(),
        enc.full_group_count()
    );
    for (label, w) in [
        ("resized", &summary.robustness_resized),
        ("original", &summary.robustness_original),
    ] {
        if let Some(w) = w {
            println!(
                "robustness ({label}): {:.6} at t = {:.2} s (k = {}) on {}",
                w.value, w.t, w.index, w.predicate
            );
        }
    }
    println!("solve time: {:.3} s", elapsed.as_secs_f64());
    println!("artifacts: {}", dir.display());
    Ok(status_code(res.status))
}

fn status_name(s: SynthesisStatus) -> String {
    serde_json::to_value(s)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn write_plan_files(dir: &Path, s: &Scenario, res: &SynthesisResult<f64>) -> Result<()> {
    if let (Some(traj), Some(inputs)) = (&res.trajectory, &res.inputs) {
        write_trajectory(&dir.join(TRAJECTORY), s, &traj.states, inputs)?;
        write_inputs(&dir.join(INPUTS), s, inputs)?;
        if let Some(note) = write_unicycle(&dir.join(UNICYCLE), s, &traj.states, inputs)? {
            tracing::warn!("{note}");
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct RhcSummary {
    scenario: String,
    status: SynthesisStatus,
    objective: Option<f64>,
    steps: usize,
    infeasible_steps: usize,
    held_steps: usize,
    unrepairable_steps: usize,
    robustness_resized: Option<WitnessView>,
    robustness_original: Option<WitnessView>,
    pivots: u64,
    solves: u64,
}

fn load_events(path: Option<&Path>) -> Result<EventFile> {
    Ok(match path {
        Some(p) => EventFile::load(p)?,
        None => EventFile::default(),
    })
}

fn live_options(clock: &ClockArgs, live: &LiveArgs, events: EventFile) -> Result<ServerOptions> {
    ensure!(live.speed > 0.0, "--speed must be positive");
    Ok(ServerOptions {
        deadline: clock.deadline,
        clock: clock.clock(),
        speed: live.speed,
        start_paused: live.start_paused,
        events,
        record: live.record.clone(),
        ..ServerOptions::default()
    })
}

fn rhc(a: RhcArgs) -> Result<u8> {
    let s = Scenario::load(&a.scenario)?;
    let events = load_events(a.events.as_deref())?;
    let updates = s.updates::<f64>(&events)?;
    if let Some(addr) = a.serve {
        let opts = live_options(&a.clock, &a.live, events)?;
        tokio_main(lazymtl_server::serve(s, opts, addr))?;
        return Ok(0);
    }
    let config = RhcConfig {
        step_deadline: a.clock.deadline.unwrap_or(s.deadline),
        clock: a.clock.clock(),
        max_iterations: None,
    };
    ensure!(
        config.step_deadline >= 0.0,
        "--deadline must be non-negative"
    );
    let enc = EncodedScenario::encode(s.problem::<f64>()?)?;
    let mut runner = RhcRunner::new(enc, config);
    for u in updates {
        runner.queue_update(u);
    }
    let dir = out_dir(a.out, &s, "-rhc")?;
    fs::write(dir.join(SCENARIO), s.to_toml())?;
    write_json(&dir.join(EVENTS), &events)?;
    let mut lines = String::new();
    let started = Instant::now();
    while !runner.is_done() {
        let ev = runner.step()?;
        if let Some(w) = &ev.warning {
            tracing::warn!("step {}: {w}", ev.step);
        }
        lines.push_str(&serde_json::to_string(&ev)?);
        lines.push('\n');
    }
    let elapsed = started.elapsed();
    fs::write(dir.join(STEPS), lines)?;
    let res = runner.result()?;
    let f = &runner.encoding().problem.formula;
    let dt = s.dt();
    let count = |st: StepStatus| runner.events().iter().filter(|e| e.status == st).count();
    let summary = RhcSummary {
        scenario: s.name.clone(),
        status: res.status,
        objective: res.objective,
        steps: runner.events().len(),
        infeasible_steps: count(StepStatus::Infeasible),
        held_steps: count(StepStatus::Held),
        unrepairable_steps: count(StepStatus::Unrepairable),
        robustness_resized: res.robustness_resized.map(|w| WitnessView::new(&w, f, dt)),
        robustness_original: res.robustness_original.map(|w| WitnessView::new(&w, f, dt)),
        pivots: res.usage.pivots,
        solves: res.usage.solves,
    };
    write_json(&dir.join(SUMMARY), &summary)?;
    write_plan_files(&dir, &s, &res)?;

    println!("status: {}", status_name(res.status));
    println!(
        "steps: {} (infeasible {}, held {}, unrepairable {})",
        summary.steps, summary.infeasible_steps, summary.held_steps, summary.unrepairable_steps
    );
    if let Some(j) = res.objective {
        println!("objective J: {j:.6}");
    }
    if let Some(w) = &summary.robustness_resized {
        println!(
            "robustness (resized): {:.6} at t = {:.2} s on {}",
            w.value, w.t, w.predicate
        );
    }
    if let Some(w) = &summary.robustness_original {
        println!(
            "robustness (original): {:.6} at t = {:.2} s on {}",
            w.value, w.t, w.predicate
        );
    }
    println!("run time: {:.3} s", elapsed.as_secs_f64());
    println!("artifacts: {}", dir.display());
    Ok(status_code(res.status))
}

fn serve(a: ServeArgs) -> Result<()> {
    let s = Scenario::load(&a.scenario)?;
    let events = load_events(a.events.as_deref())?;
    s.updates::<f64>(&events)?;
    let opts = live_options(&a.clock, &a.live, events)?;
    tokio_main(lazymtl_server::serve(s, opts, a.bind))
}

fn tokio_main<F, E>(fut: F) -> Result<()>
where
    F: std::future::Future<Output = Result<(), E>>,
    E: std::error::Error + Send + Sync + 'static,
{
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    rt.block_on(fut)?;
    Ok(())
}

#[derive(Deserialize)]
struct PredicateFile {
    predicates: Vec<PredicateSpec>,
}

#[derive(Serialize)]
struct MonitorReport {
    value: f64,
    index: usize,
    t: f64,
    predicate: String,
    occurrence: usize,
    horizon: usize,
    samples: usize,
}

fn monitor(a: MonitorArgs) -> Result<()> {
    let formula = NnfFormula::parse(&a.formula)?;
    let text = fs::read_to_string(&a.predicates)
        .with_context(|| format!("reading {}", a.predicates.display()))?;
    let file: PredicateFile =
        toml::from_str(&text).with_context(|| format!("parsing {}", a.predicates.display()))?;
    let preds = file
        .predicates
        .iter()
        .enumerate()
        .map(|(i, p)| p.build::<f64>(&format!("predicates[{i}]")))
        .collect::<Result<Vec<Predicate<f64>>, _>>()?;
    let dim = preds.first().map_or(2, Predicate::dim);

    let (header, rows) = read_table(&a.trajectory)?;
    ensure!(
        !rows.is_empty(),
        "{} has no samples",
        a.trajectory.display()
    );
    let t_col = header.iter().position(|h| h == "t");
    let pos: Vec<usize> = (0..header.len())
        .filter(|&j| header[j] != "t" && header[j] != "k")
        .take(dim)
        .collect();
    ensure!(
        pos.len() == dim,
        "{} has {} position columns, predicates need {dim}",
        a.trajectory.display(),
        pos.len()
    );
    let dt = match (a.dt, t_col) {
        (Some(dt), _) => dt,
        (None, Some(c)) if rows.len() > 1 => rows[1][c] - rows[0][c],
        (None, _) => bail!("cannot infer the sample time; pass --dt"),
    };
    ensure!(dt > 0.0, "sample time must be positive, got {dt}");
    let n = formula.horizon(dt)?;
    ensure!(
        n < rows.len(),
        "formula horizon needs {} samples but the trajectory has {}",
        n + 1,
        rows.len()
    );
    let states: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| pos.iter().map(|&j| r[j]).collect())
        .collect();
    let by_name: std::collections::HashMap<String, Predicate<f64>> =
        preds.into_iter().map(|p| (p.name.clone(), p)).collect();
    let per_occ = lazymtl::robustness::resolve(&formula, &by_name)?;
    let per_occ = lazymtl::robustness::resize(&formula, &per_occ, a.resize);
    let w = evaluate(&formula, &per_occ, &Trajectory::new(states, dt), 0)?;
    let report = MonitorReport {
        value: w.value,
        index: w.index,
        t: w.index as f64 * dt,
        predicate: formula.occurrences[w.occurrence].name.clone(),
        occurrence: w.occurrence,
        horizon: n,
        samples: rows.len(),
    };
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("robustness: {:.6}", report.value);
        println!("critical time: {:.3} s (index {})", report.t, report.index);
        println!(
            "critical predicate: {} (occurrence {})",
            report.predicate, report.occurrence
        );
    }
    Ok(())
}
