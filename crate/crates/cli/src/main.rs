use clap::{Parser, Subcommand, ValueEnum};
use ristl_core::determinize::{synthesize, DeterminizationResult};
use ristl_core::monitor::{Mode, Monitor, Trajectory};
use ristl_core::scenario::Scenario;
use ristl_core::sim::{replay_scenario, run_scenario, RunOptions, ScenarioRun};
use ristl_core::stochastics::Method;
use serde_json::{json, Value};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_OK: u8 = 0;
const EXIT_VIOLATION: u8 = 1;
const EXIT_ASSUMPTION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "ristl", version, about = "Risk-aware STL monitoring, determinization and barrier control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MonitorMode {
    /// Deterministic formula with synthesized thresholds.
    Det,
    /// Chance and risk predicates.
    Stoch,
}

#[derive(clap::Args)]
struct Common {
    /// Scenario TOML file.
    #[arg(long)]
    spec: PathBuf,
    /// Monte Carlo sample count for predicates without an exact evaluation.
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize deterministic thresholds and check the standing assumptions.
    Determinize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the closed loop and write the trace.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write barrier and region CSVs for plotting.
        #[arg(long)]
        emit_plot_data: bool,
    },
    /// Robustness of a recorded trace.
    Monitor {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_enum, default_value = "stoch")]
        mode: MonitorMode,
        /// Evaluation time.
        #[arg(long, default_value_t = 0.0)]
        t: f64,
        /// Comma-separated state columns; defaults to x1..xn.
        #[arg(long)]
        columns: Option<String>,
    },
    /// Replay a simulated trace and re-check every guarantee.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trace: PathBuf,
    },
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, e: impl std::fmt::Display) -> Failure {
    Failure { code, message: e.to_string() }
}

fn load(common: &Common) -> Result<Scenario, Failure> {
    Scenario::load(&common.spec).map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", common.spec.display())))
}

fn run_options(common: &Common) -> RunOptions {
    RunOptions { mc_samples: common.mc_samples, seed: common.seed, ..RunOptions::default() }
}

fn print(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| fail(EXIT_RUNTIME, format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| fail(EXIT_RUNTIME, format!("{}: {e}", path.display())))
}

fn threshold_report(s: &Scenario, det: &DeterminizationResult) -> Value {
    let rows: Vec<Value> = det
        .thresholds
        .iter()
        .map(|t| {
            let reference = s.predicate.iter().find(|p| p.id == t.id).and_then(|p| p.reference_c);
            json!({
                "id": t.id,
                "family": t.family,
                "spec": t.spec,
                "c": t.c,
                "chi": t.chi,
                "minimal_c": t.minimal_c,
                "slack": t.slack,
                "reference_c": reference,
                "difference_from_reference": reference.map(|r| t.c - r),
                "inclusion": t.inclusion,
            })
        })
        .collect();
    json!({
        "assumption1_ok": det.assumption1_ok,
        "assumption2_ok": det.assumption2_ok,
        "thresholds": rows,
        "witnesses": det.witnesses,
        "phi": det.phi_text,
        "phi_bar": det.phi_bar_text,
    })
}

fn determinize_cmd(common: &Common, out: Option<&Path>) -> Result<u8, Failure> {
    let s = load(common)?;
    let runtime = |e: &dyn std::fmt::Display| fail(EXIT_RUNTIME, e);
    let env = s.environment().map_err(|e| runtime(&e))?;
    let preds = s.predicates().map_err(|e| runtime(&e))?;
    let formula = s.formula().map_err(|e| runtime(&e))?;
    let domain = s.domain().map_err(|e| runtime(&e))?;
    let opts = s.determinize_options(common.mc_samples, common.seed);
    let det = synthesize(&formula, &preds, &env, &domain, &opts, &[]).map_err(|e| runtime(&e))?;
    let report = threshold_report(&s, &det);
    print(&report);
    if let Some(dir) = out {
        write_file(dir, "summary.json", &serde_json::to_string_pretty(&report).expect("serializable"))?;
    }
    Ok(if det.ok() { EXIT_OK } else { EXIT_ASSUMPTION })
}

fn trace_csv(run: &ScenarioRun) -> String {
    let mut s = String::from("t,x1,x2,theta,p1,p2,u1,u2,b,eps\n");
    for r in &run.outcome.samples {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.t, r.x[0], r.x[1], r.theta, r.p[0], r.p[1], r.u[0], r.u[1], r.b, r.eps
        );
    }
    s
}

fn run_summary(s: &Scenario, run: &ScenarioRun) -> Value {
    let o = &run.outcome;
    json!({
        "success": run.success(),
        "invariant_ok": o.invariant_ok,
        "eps_r": o.eps_r,
        "alpha_max": o.alpha_max,
        "tol_num": o.tol_num,
        "level": run.level,
        "r_bound": run.r_bound,
        "rho_phi_bar_p": run.rho_bar_p,
        "rho_phi_x": run.rho_phi_x,
        "rho_risk_x": run.rho_risk_x,
        "subtasks": o.subtasks,
        "determinization": threshold_report(s, &run.determinization),
    })
}

fn plot_data(s: &Scenario, run: &ScenarioRun, dir: &Path) -> Result<(), Failure> {
    let domain = s.domain().map_err(|e| fail(EXIT_RUNTIME, e))?;
    let mut grid = String::from("subtask,t,p1,p2,b\n");
    let (nx, ny) = (61, 61);
    for (i, b) in run.outcome.barriers.iter().enumerate() {
        let deadline = s.subtask[i].deadline;
        for t in [b.start, deadline] {
            for a in 0..nx {
                for c in 0..ny {
                    let p = [
                        domain.lower[0] + (domain.upper[0] - domain.lower[0]) * a as f64 / (nx - 1) as f64,
                        domain.lower[1] + (domain.upper[1] - domain.lower[1]) * c as f64 / (ny - 1) as f64,
                    ];
                    let v = b.eval(p, t).map_err(|e| fail(EXIT_RUNTIME, e))?;
                    let _ = writeln!(grid, "{},{},{},{},{}", i + 1, t, p[0], p[1], v);
                }
            }
        }
    }
    write_file(dir, "barrier_grid.csv", &grid)?;
    let mut regions = String::from("id,family,c,chi\n");
    for t in &run.determinization.thresholds {
        let _ = writeln!(regions, "{},{},{},{}", t.id, t.family, t.c, t.chi);
    }
    write_file(dir, "regions.csv", &regions)
}

fn outcome_code(run: &ScenarioRun) -> u8 {
    if run.success() {
        EXIT_OK
    } else {
        EXIT_VIOLATION
    }
}

fn sim_failure(e: ristl_core::sim::SimError) -> Failure {
    if e.is_assumption() {
        fail(EXIT_ASSUMPTION, e)
    } else {
        fail(EXIT_RUNTIME, e)
    }
}

fn simulate_cmd(common: &Common, out: Option<&Path>, emit_plot_data: bool) -> Result<u8, Failure> {
    let s = load(common)?;
    let run = match run_scenario(&s, &run_options(common)).map_err(sim_failure)? {
        Ok(run) => run,
        Err(det) => {
            print(&json!({ "success": false, "determinization": threshold_report(&s, &det) }));
            return Ok(EXIT_ASSUMPTION);
        }
    };
    let summary = run_summary(&s, &run);
    print(&summary);
    if let Some(dir) = out {
        write_file(dir, "trace.csv", &trace_csv(&run))?;
        write_file(dir, "summary.json", &serde_json::to_string_pretty(&summary).expect("serializable"))?;
        if emit_plot_data {
            plot_data(&s, &run, dir)?;
        }
    }
    Ok(outcome_code(&run))
}

fn monitor_cmd(
    common: &Common,
    trace: &Path,
    mode: MonitorMode,
    t: f64,
    columns: Option<&str>,
) -> Result<u8, Failure> {
    let s = load(common)?;
    let runtime = |e: &dyn std::fmt::Display| fail(EXIT_RUNTIME, e);
    let n = s.state_dim().map_err(|e| runtime(&e))?;
    let cols: Vec<String> = match columns {
        Some(c) => c.split(',').map(|x| x.trim().to_string()).collect(),
        None => (1..=n).map(|i| format!("x{i}")).collect(),
    };
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let traj = Trajectory::from_csv_path(trace, &col_refs).map_err(|e| fail(EXIT_USAGE, e))?;
    let env = s.environment().map_err(|e| runtime(&e))?;
    let preds = s.predicates().map_err(|e| runtime(&e))?;
    let formula = s.formula().map_err(|e| runtime(&e))?;
    let (result, evaluated) = match mode {
        MonitorMode::Stoch => {
            let method = match common.mc_samples {
                Some(n) => Method::MonteCarlo { n, seed: common.seed.unwrap_or(s.seed) },
                None => Method::ClosedForm,
            };
            let m = Monitor::new(&preds, Mode::Stochastic { env: &env, method });
            (m.rho(&formula, &traj, t).map_err(|e| runtime(&e))?, formula.to_string())
        }
        MonitorMode::Det => {
            let domain = s.domain().map_err(|e| runtime(&e))?;
            let opts = s.determinize_options(common.mc_samples, common.seed);
            let det = synthesize(&formula, &preds, &env, &domain, &opts, &[]).map_err(|e| runtime(&e))?;
            let phi = det.phi.clone().expect("synthesized formula");
            let m = Monitor::new(&preds, Mode::Deterministic { mean: env.mean() });
            (m.rho(&phi, &traj, t).map_err(|e| runtime(&e))?, phi.to_string())
        }
    };
    let breakdown: Vec<Value> = result
        .breakdown
        .iter()
        .map(|n| json!({ "path": n.path, "node": n.label, "value": n.value }))
        .collect();
    print(&json!({
        "formula": evaluated,
        "t": t,
        "rho": result.value,
        "strict": result.strict,
        "weak": result.weak,
        "breakdown": breakdown,
    }));
    Ok(if result.weak { EXIT_OK } else { EXIT_VIOLATION })
}

fn verify_cmd(common: &Common, trace: &Path) -> Result<u8, Failure> {
    let s = load(common)?;
    let traj = Trajectory::from_csv_path(trace, &["x1", "x2", "theta", "b", "u1", "u2", "eps"])
        .map_err(|e| fail(EXIT_USAGE, e))?;
    let states: Vec<[f64; 3]> = traj.states.iter().map(|r| [r[0], r[1], r[2]]).collect();
    let run = match replay_scenario(&s, &run_options(common), &states).map_err(sim_failure)? {
        Ok(run) => run,
        Err(det) => {
            print(&json!({ "consistent": false, "determinization": threshold_report(&s, &det) }));
            return Ok(EXIT_ASSUMPTION);
        }
    };
    let mut worst = [0.0f64; 5];
    for (rec, smp) in traj.states.iter().zip(&run.outcome.samples) {
        let pairs = [(rec[3], smp.b), (rec[4], smp.u[0]), (rec[5], smp.u[1]), (rec[6], smp.eps)];
        for (i, (a, b)) in pairs.iter().enumerate() {
            worst[i] = worst[i].max((a - b).abs() / (1.0 + b.abs()));
        }
    }
    let time_err = traj
        .times
        .iter()
        .zip(&run.outcome.samples)
        .map(|(a, b)| (a - b.t).abs())
        .fold(0.0, f64::max);
    worst[4] = time_err;
    let consistent = worst.iter().all(|w| *w <= 1e-9);
    let mut summary = run_summary(&s, &run);
    summary["consistent"] = json!(consistent);
    summary["max_relative_deviation"] =
        json!({ "b": worst[0], "u1": worst[1], "u2": worst[2], "eps": worst[3], "t": worst[4] });
    print(&summary);
    Ok(if consistent && run.success() { EXIT_OK } else { EXIT_VIOLATION })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Determinize { common, out } => determinize_cmd(common, out.as_deref()),
        Command::Simulate { common, out, emit_plot_data } => simulate_cmd(common, out.as_deref(), *emit_plot_data),
        Command::Monitor { common, trace, mode, t, columns } => {
            monitor_cmd(common, trace, *mode, *t, columns.as_deref())
        }
        Command::Verify { common, trace } => verify_cmd(common, trace),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
