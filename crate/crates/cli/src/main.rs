//! `persched`: schedule catalog or custom scenarios, sweep the period, and
//! simulate the resulting patterns.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use persched_core::report::{self, fmt_sig9, RunReport};
use persched_core::sim::{self, fair_share_baseline, unroll};
use persched_core::{catalog, persched, sweep_report, upper_bound_syseff, EngineConfig, Error, Objective, Scenario, TieBreak};

#[derive(Parser)]
#[command(name = "persched", version, about = "Periodic I/O scheduling for applications sharing an I/O system")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Find a periodic pattern and write the report and per-application schedule files.
    Schedule {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        engine: EngineArgs,
        /// Output directory (default: `schedule-<scenario>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Efficiency and dilation for every period tried by the search, as CSV.
    Sweep {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        engine: EngineArgs,
        /// Output CSV (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Results for several K' values, normalized by the largest one, as CSV.
    KprimeSweep {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        engine: EngineArgs,
        /// Comma-separated K' values.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,5,10,20,50,100")]
        kprimes: Vec<f64>,
        /// Output CSV (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Unroll a written schedule, or run the unscheduled fair-share baseline.
    Simulate {
        /// Directory written by `schedule`.
        #[arg(long, required_unless_present = "baseline", conflicts_with = "baseline")]
        schedule_dir: Option<PathBuf>,
        /// Simulate the fair-share baseline of a scenario instead.
        #[arg(long)]
        baseline: bool,
        #[command(flatten)]
        input: OptionalInput,
        /// Number of periods to unroll.
        #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
        periods: u64,
        /// Simulated time for the baseline (default: 200 minimal periods).
        #[arg(long)]
        horizon: Option<f64>,
        /// Trace CSV (one row per instance).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in scenarios.
    Scenarios,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Input {
    /// Built-in scenario (`set1`..`set10`, or `raw:T1`, `raw:T2`, `raw:AP`, `raw:PP`).
    #[arg(long)]
    set: Option<String>,
    /// Scenario JSON file.
    #[arg(long)]
    scenario_file: Option<PathBuf>,
}

#[derive(Args)]
#[group(multiple = false)]
struct OptionalInput {
    #[arg(long)]
    set: Option<String>,
    #[arg(long)]
    scenario_file: Option<PathBuf>,
}

#[derive(Args)]
struct EngineArgs {
    /// Largest period tried, as a multiple of the smallest.
    #[arg(long, default_value_t = 10.0)]
    kprime: f64,
    /// Growth factor between two tried periods.
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Syseff)]
    objective: ObjectiveArg,
    /// Order on w/tio among applications of equal dilation.
    #[arg(long, value_enum, default_value_t = TieBreakArg::Desc)]
    tiebreak: TieBreakArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Syseff,
    Dilation,
}

#[derive(Clone, Copy, ValueEnum)]
enum TieBreakArg {
    Asc,
    Desc,
}

impl EngineArgs {
    fn config(&self) -> Result<EngineConfig, Failure> {
        let cfg = EngineConfig {
            kprime: self.kprime,
            epsilon: self.epsilon,
            objective: match self.objective {
                ObjectiveArg::Syseff => Objective::MaxSysEff,
                ObjectiveArg::Dilation => Objective::MinDilation,
            },
            tiebreak: match self.tiebreak {
                TieBreakArg::Asc => TieBreak::Asc,
                TieBreakArg::Desc => TieBreak::Desc,
            },
            threads: threads(),
        };
        cfg.validate().map_err(Failure::from)?;
        Ok(cfg)
    }
}

/// Sweep parallelism: all cores, capped by `PERSCHED_THREADS`.
fn threads() -> usize {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var("PERSCHED_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(cap) if cap > 0 => cap.min(cores),
        _ => cores,
    }
}

/// Error with its exit status: 2 for bad input, 1 for everything else.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NotFound(_) | Error::Parse { .. } | Error::Invalid { .. } => 2,
            _ => 1,
        };
        Failure { code, error: e.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 1, error }
    }
}

fn load(set: Option<&str>, file: Option<&Path>) -> Result<Scenario, Failure> {
    match (set, file) {
        (Some(name), _) => Ok(catalog::load_scenario(name)?),
        (None, Some(path)) => Ok(catalog::load_scenario_file(path)?),
        (None, None) => Err(Failure {
            code: 2,
            error: anyhow::anyhow!("a scenario is required: pass --set or --scenario-file"),
        }),
    }
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn schedule(input: &Input, engine: &EngineArgs, out: Option<&Path>) -> Result<(), Failure> {
    let scenario = load(input.set.as_deref(), input.scenario_file.as_deref())?;
    let cfg = engine.config()?;
    let t0 = Instant::now();
    let s = persched(&scenario, &cfg)?;
    let report = RunReport::new(&scenario, &cfg, &s, t0.elapsed().as_secs_f64());
    let dir = out.map_or_else(|| PathBuf::from(format!("schedule-{}", scenario.name().replace(':', "-"))), Path::to_path_buf);
    report::write_run(&dir, &scenario, &report, &s.pattern)?;

    println!("scenario     {}", report.scenario);
    println!("period       {}", fmt_sig9(report.period));
    println!("syseff       {}", fmt_sig9(report.syseff));
    println!("dilation     {}", fmt_sig9(report.dilation));
    println!("upper bound  {}", fmt_sig9(report.upper_bound));
    println!("instances    {}", s.pattern.total_instances());
    for a in &report.apps {
        println!("  {:<8} l={:<6} rho~={}", a.id, a.instances, fmt_sig9(a.periodic_efficiency));
    }
    println!("written to   {}", dir.display());
    Ok(())
}

fn sweep(input: &Input, engine: &EngineArgs, out: Option<&Path>) -> Result<(), Failure> {
    let scenario = load(input.set.as_deref(), input.scenario_file.as_deref())?;
    let rows = sweep_report(&scenario, &engine.config()?)?;
    report::write_rows(
        output(out)?,
        &["T", "syseff", "dilation"],
        rows.iter()
            .map(|r| vec![fmt_sig9(r.period), fmt_sig9(r.syseff), fmt_sig9(r.dilation)]),
    )?;
    Ok(())
}

fn kprime_sweep(input: &Input, engine: &EngineArgs, kprimes: &[f64], out: Option<&Path>) -> Result<(), Failure> {
    let scenario = load(input.set.as_deref(), input.scenario_file.as_deref())?;
    let base = engine.config()?;
    if kprimes.is_empty() {
        return Err(Error::Invalid {
            what: "config",
            message: "--kprimes needs at least one value".into(),
        }
        .into());
    }
    let mut results = Vec::with_capacity(kprimes.len());
    for &kprime in kprimes {
        let cfg = EngineConfig { kprime, ..base };
        cfg.validate()?;
        results.push((kprime, persched(&scenario, &cfg)?.metrics));
    }
    let reference = &results
        .iter()
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .expect("non-empty")
        .1;
    let (se_ref, dil_ref) = (reference.syseff, reference.dilation);
    report::write_rows(
        output(out)?,
        &["kprime", "syseff", "dilation", "syseff_norm", "dilation_norm"],
        results.iter().map(|(kprime, m)| {
            vec![
                fmt_sig9(*kprime),
                fmt_sig9(m.syseff),
                fmt_sig9(m.dilation),
                fmt_sig9(m.syseff / se_ref),
                fmt_sig9(m.dilation / dil_ref),
            ]
        }),
    )?;
    Ok(())
}

fn simulate(
    schedule_dir: Option<&Path>,
    input: &OptionalInput,
    periods: u64,
    horizon: Option<f64>,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let trace = if let Some(dir) = schedule_dir {
        let (_, report, pattern) = report::read_run(dir)?;
        let trace = unroll(&pattern, periods as usize)?;
        trace.check()?;
        let actual = trace.final_efficiencies();
        println!("{:<8} {:>12} {:>12} {:>10}", "app", "rho~", "rho(d)", "rel.err");
        for (k, app) in report.apps.iter().enumerate() {
            let periodic = pattern.periodic_efficiency(k);
            let err = if periodic > 0.0 { (actual[k] - periodic).abs() / periodic } else { 0.0 };
            println!(
                "{:<8} {:>12} {:>12} {:>10}",
                app.id,
                fmt_sig9(periodic),
                fmt_sig9(actual[k]),
                format!("{:.3e}", err)
            );
        }
        println!("syseff periodic {} unrolled {}", fmt_sig9(pattern.syseff()), fmt_sig9(trace.syseff()));
        trace
    } else {
        let scenario = load(input.set.as_deref(), input.scenario_file.as_deref())?;
        let horizon = horizon.unwrap_or_else(|| sim::default_horizon(&scenario));
        let run = fair_share_baseline(&scenario, horizon)?;
        println!("{:<8} {:>10} {:>12} {:>10}", "app", "completed", "efficiency", "slowdown");
        for a in &run.apps {
            println!(
                "{:<8} {:>10} {:>12} {:>10}",
                a.id,
                a.completed,
                fmt_sig9(a.efficiency),
                format!("{:.2}%", 100.0 * a.slowdown)
            );
        }
        println!("baseline syseff {}", fmt_sig9(run.syseff));
        println!("upper bound     {}", fmt_sig9(upper_bound_syseff(&scenario)));
        run.trace
    };
    if let Some(path) = out {
        let file = File::create(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        trace.write_csv(io::BufWriter::new(file))?;
    }
    Ok(())
}

fn scenarios() {
    for sc in catalog::all_sets() {
        let apps: Vec<&str> = sc.apps().iter().map(|a| a.id()).collect();
        println!(
            "{:<6} ub={}  T_min={}  {}",
            sc.name(),
            fmt_sig9(upper_bound_syseff(&sc)),
            fmt_sig9(sc.min_period()),
            apps.join(" ")
        );
    }
    println!("raw:T1 raw:T2 raw:AP raw:PP  single unscaled profiles");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Schedule { input, engine, out } => schedule(input, engine, out.as_deref()),
        Command::Sweep { input, engine, out } => sweep(input, engine, out.as_deref()),
        Command::KprimeSweep {
            input,
            engine,
            kprimes,
            out,
        } => kprime_sweep(input, engine, kprimes, out.as_deref()),
        Command::Simulate {
            schedule_dir,
            input,
            periods,
            horizon,
            out,
            ..
        } => simulate(schedule_dir.as_deref(), input, *periods, *horizon, out.as_deref()),
        Command::Scenarios => {
            scenarios();
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("persched: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
