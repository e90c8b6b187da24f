//! Command-line front end for flowshare.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use flowshare::fluid::{self, FluidOptions};
use flowshare::harness::{self, emit_plots, ExperimentReport, Verdict, SEED_ENV};
use flowshare::invariant::{self, InvariantTolerances};
use flowshare::simulator::{fluid_scale, write_trace_csv};
use flowshare::{AtomicMeasure, Scenario, SimState};

#[derive(Parser)]
#[command(name = "flowshare", version, about = "Alpha-fair bandwidth sharing: allocation, simulation, fluid model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the alpha-fair allocation for the given flow counts.
    Allocate {
        #[arg(long)]
        scenario: PathBuf,
        /// Comma-separated flow counts, one per route.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        z: Vec<f64>,
    },
    /// Simulate the r-th stochastic system and write its event trace.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        r: u64,
        #[arg(long)]
        seed: u64,
        /// Horizon in fluid time; the r-th system runs for r times this.
        #[arg(long)]
        horizon: f64,
        #[arg(long)]
        out: PathBuf,
        /// Write the fluid-scaled trace instead of raw counts and times.
        #[arg(long)]
        scaled: bool,
    },
    /// Solve the fluid model from the scenario's initial state.
    Fluid {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        horizon: f64,
        #[arg(long)]
        dt: f64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the measures at the scenario's sample times.
        #[arg(long)]
        dump_measures: Option<PathBuf>,
    },
    /// Critical resources, workload lifting and invariant-state checks.
    Invariant {
        #[arg(long)]
        scenario: PathBuf,
        /// Lift these critical-resource workloads.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with_all = ["z", "check"])]
        w: Option<Vec<f64>>,
        /// Build the invariant state with these masses.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "check")]
        z: Option<Vec<f64>>,
        /// Check a JSON array of measures for invariance.
        #[arg(long)]
        check: Option<PathBuf>,
    },
    /// Fluid-limit convergence experiment.
    Converge(ExperimentArgs),
    /// Law-of-large-numbers experiment for the load processes.
    Lln(ExperimentArgs),
    /// Stationarity of an invariant state under the fluid dynamics.
    Stationary(ExperimentArgs),
}

#[derive(clap::Args)]
struct ExperimentArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Overrides the scenario's seed.
    #[arg(long, env = SEED_ENV)]
    seed: Option<u64>,
}

fn load(path: &Path) -> Result<Scenario> {
    Scenario::load(path).with_context(|| format!("loading scenario {}", path.display()))
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn allocate(scenario: &Path, z: &[f64]) -> Result<ExitCode> {
    let s = load(scenario)?;
    let result = s.policy.allocate_from(&s.topology, z, None)?;
    print_json(&json!({
        "lambda": result.lambda,
        "prices": result.prices,
        "kkt_residual": result.kkt_residual,
        "iterations": result.iterations,
    }))?;
    Ok(ExitCode::SUCCESS)
}

fn simulate(scenario: &Path, r: u64, seed: u64, horizon: f64, out: &Path, scaled: bool) -> Result<ExitCode> {
    let s = load(scenario)?;
    let model = s.sim_model()?;
    let r = r as f64;
    let mut state = SimState::new(&model, r, seed, 0)?;
    let mut trace = state.run_until(horizon * r, &[])?;
    if scaled {
        trace = fluid_scale(&trace, r);
    }
    let mut w = create(out)?;
    write_trace_csv(&trace, &mut w)?;
    w.flush()?;
    log::info!("{} events written to {}", trace.events.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn solve_fluid(scenario: &Path, horizon: f64, dt: f64, out: &Path, dump: Option<&Path>) -> Result<ExitCode> {
    let s = load(scenario)?;
    let data = s.fluid_data()?;
    let mut opts = FluidOptions::new(horizon, dt);
    opts.inflow_atoms = s.experiment().discretization_atoms;
    if dump.is_some() {
        opts.snapshot_times = s.sample_times.iter().copied().filter(|&t| t <= horizon).collect();
    }
    let sol = fluid::solve(&data, &s.initial_measures()?, &opts)?;
    let (n, m) = (s.num_routes(), s.topology.num_resources());
    let mut w = create(out)?;
    let mut header = vec!["time".to_string()];
    for prefix in ["z", "w", "tau"] {
        header.extend((0..n).map(|i| format!("{prefix}_{i}")));
    }
    header.extend((0..m).map(|j| format!("u_{j}")));
    writeln!(w, "{}", header.join(","))?;
    for k in 0..sol.times.len() {
        let mut row = vec![fmt(sol.times[k])];
        for v in sol.z[k].iter().chain(&sol.w[k]).chain(&sol.tau[k]).chain(&sol.u[k]) {
            row.push(fmt(*v));
        }
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    if let Some(dir) = dump {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (k, snap) in sol.snapshots.iter().enumerate() {
            let mut f = create(&dir.join(format!("measures_{k:04}.json")))?;
            serde_json::to_writer(&mut f, &json!({ "time": snap.time, "measures": snap.measures }))?;
            f.flush()?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn invariant_cmd(scenario: &Path, w: Option<Vec<f64>>, z: Option<Vec<f64>>, check: Option<PathBuf>) -> Result<ExitCode> {
    let s = load(scenario)?;
    let data = s.fluid_data()?;
    let atoms = s.experiment().discretization_atoms;
    let criticality = invariant::critical_resources(&data);
    if let Some(w) = w {
        let lift = invariant::lift_workload(&data, &w)?;
        let membership = invariant::is_in_p(&data, &lift.z, invariant::MEMBERSHIP_TOL)?;
        print_json(&json!({ "criticality": criticality, "lift": lift, "membership": membership }))?;
        return Ok(ExitCode::SUCCESS);
    }
    if let Some(path) = check {
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let xi: Vec<AtomicMeasure> = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let result = invariant::is_invariant_state(&data, &xi, &InvariantTolerances::for_atoms(atoms))?;
        let accepted = result.accepted;
        print_json(&json!({ "criticality": criticality, "check": result }))?;
        return Ok(if accepted { ExitCode::SUCCESS } else { ExitCode::from(2) });
    }
    let z = z.unwrap_or_else(|| s.z0.clone());
    let membership = invariant::is_in_p(&data, &z, invariant::MEMBERSHIP_TOL)?;
    let state = if membership.member { Some(invariant::make_invariant_state(&data, &z, atoms)?) } else { None };
    print_json(&json!({
        "criticality": criticality,
        "z": z,
        "membership": membership,
        "q": state.as_ref().and_then(|st| st.q.clone()),
    }))?;
    Ok(ExitCode::SUCCESS)
}

fn experiment(args: &ExperimentArgs, kind: &str) -> Result<ExitCode> {
    let mut s = load(&args.scenario)?;
    if let Some(seed) = args.seed {
        s = s.with_seed(seed);
    }
    let (report, verdict) = match kind {
        "converge" => {
            let r = harness::run_convergence(&s)?;
            let v = r.verdict;
            (ExperimentReport::Convergence(r), v)
        }
        "lln" => {
            let r = harness::run_lln(&s)?;
            let v = r.verdict;
            (ExperimentReport::Lln(r), v)
        }
        _ => {
            let r = harness::run_stationarity(&s)?;
            let v = r.verdict;
            (ExperimentReport::Stationarity(r), v)
        }
    };
    emit_plots(&report, &args.out_dir)?;
    let mut f = create(&args.out_dir.join("report.json"))?;
    serde_json::to_writer_pretty(&mut f, &report)?;
    writeln!(f)?;
    f.flush()?;
    println!("{kind}: {}", if verdict.passed() { "PASS" } else { "FAIL" });
    Ok(if verdict == Verdict::Pass { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Allocate { scenario, z } => allocate(&scenario, &z),
        Command::Simulate { scenario, r, seed, horizon, out, scaled } => {
            if r == 0 || !(horizon >= 0.0) {
                bail!("--r must be positive and --horizon nonnegative");
            }
            simulate(&scenario, r, seed, horizon, &out, scaled)
        }
        Command::Fluid { scenario, horizon, dt, out, dump_measures } => {
            solve_fluid(&scenario, horizon, dt, &out, dump_measures.as_deref())
        }
        Command::Invariant { scenario, w, z, check } => invariant_cmd(&scenario, w, z, check),
        Command::Converge(args) => experiment(&args, "converge"),
        Command::Lln(args) => experiment(&args, "lln"),
        Command::Stationary(args) => experiment(&args, "stationary"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap reports usage errors with status 2, which is reserved for FAIL.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
