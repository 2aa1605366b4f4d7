use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use super::gradcheck::{run_all, scenario_suite};
use super::{audit, compute_metrics, simulate_closed_loop, sweep, write_sweep_csv, MetricsRow, Scenario, SimOptions};
use crate::error::{Error, Result};
use crate::planner::{plan, PlanResult};
use crate::trajmodel::{read_trajectories, write_trajectories};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_PLAN: i32 = 3;
pub const EXIT_GRAD: i32 = 4;

/// Scenario copy written next to the plan so `track` can reload it.
pub const SCENARIO_FILE: &str = "scenario.json";
pub const TRAJECTORIES_FILE: &str = "trajectories.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const ITERLOG_FILE: &str = "iterlog.csv";
pub const SIM_FILE: &str = "sim.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Debug, Parser)]
#[command(name = "fleetplan", version, about = "Plan and track trajectories for teams of car-like robots")]
struct Cli {
    /// Seed for randomized checks; also stamped into planned scenarios.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    /// Report computation time as 0 so outputs are reproducible byte for byte.
    #[arg(long, global = true)]
    no_timing: bool,
    /// Time weight `w` of the FOTP comparison cost.
    #[arg(long, global = true, default_value_t = super::DEFAULT_FOTP_WEIGHT)]
    fotp_weight: f64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Plan a scenario; writes trajectories.json, metrics.csv, iterlog.csv
    /// and a copy of the scenario.
    Plan {
        scenario: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Track a planned directory in closed loop; writes sim.csv.
    Track { dir: PathBuf },
    /// Re-plan every scenario of a directory under several time weights;
    /// writes sweep.csv.
    Bench {
        dir: PathBuf,
        #[arg(long = "sweep-wt", value_delimiter = ',', required = true)]
        weights: Vec<f64>,
        #[arg(short, long, default_value = ".")]
        out: PathBuf,
    },
    /// Finite-difference checks of every analytic gradient.
    CheckGrad {
        scenario: PathBuf,
        /// Random instances per suite.
        #[arg(long, default_value_t = 50)]
        instances: usize,
    },
}

struct Failure {
    code: i32,
    error: Error,
}

fn input(error: Error) -> Failure {
    Failure { code: EXIT_INPUT, error }
}

fn failure(code: i32) -> impl FnOnce(Error) -> Failure {
    move |error| Failure { code, error }
}

fn load_scenario(path: &Path) -> std::result::Result<Scenario, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| input(Error::Input(format!("cannot read {}: {e}", path.display()))))?;
    Scenario::from_json(&text).map_err(|e| input(Error::Input(format!("{}: {e}", path.display()))))
}

fn write_iterlog(path: &Path, result: &PlanResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["round", "iter", "objective", "grad_norm", "step"])?;
    for r in &result.history {
        w.write_record([
            r.round.to_string(),
            r.record.iter.to_string(),
            r.record.objective.to_string(),
            r.record.grad_norm.to_string(),
            r.record.step.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_plan(cli: &Cli, path: &Path, out: &Path) -> std::result::Result<(), Failure> {
    let mut scenario = load_scenario(path)?;
    if let Some(seed) = cli.seed {
        scenario.seed = seed;
    }
    let result = plan(&scenario).map_err(failure(EXIT_PLAN))?;
    let report = audit(&scenario, &result.trajectories).map_err(failure(EXIT_PLAN))?;
    let metrics = compute_metrics(&scenario, &result, &report, cli.fotp_weight, !cli.no_timing)
        .map_err(failure(EXIT_PLAN))?;

    let write = || -> Result<()> {
        fs::create_dir_all(out)?;
        fs::write(out.join(SCENARIO_FILE), scenario.to_json()?)?;
        write_trajectories(&out.join(TRAJECTORIES_FILE), &result.trajectories)?;
        MetricsRow::write_csv(&[metrics], BufWriter::new(File::create(out.join(METRICS_FILE))?))?;
        write_iterlog(&out.join(ITERLOG_FILE), &result)
    };
    write().map_err(input)?;

    if !cli.quiet {
        println!(
            "converged {} after {} rounds ({:?}), audit {}, success {}, {:.3} s",
            result.converged,
            result.rounds,
            result.status,
            if report.passed { "passed" } else { "failed" },
            metrics.success,
            result.wall_time_s
        );
    }
    if !metrics.success {
        let why = match &report.first_violation {
            Some((t, what)) => format!("audit failed at t = {t:.3} s: {what}"),
            None => format!("not converged; violations {:?}", result.violations),
        };
        return Err(Failure {
            code: EXIT_PLAN,
            error: Error::Planning(why),
        });
    }
    Ok(())
}

fn cmd_track(cli: &Cli, dir: &Path) -> std::result::Result<(), Failure> {
    let scenario = load_scenario(&dir.join(SCENARIO_FILE))?;
    let trajs = read_trajectories(&dir.join(TRAJECTORIES_FILE)).map_err(input)?;
    let sim = simulate_closed_loop(&scenario, &trajs, &SimOptions::default()).map_err(input)?;
    sim.write_csv(BufWriter::new(File::create(dir.join(SIM_FILE)).map_err(|e| input(e.into()))?))
        .map_err(input)?;
    if !cli.quiet {
        println!("rms error {:.4} m, max error {:.4} m", sim.rms_error(), sim.max_error());
    }
    if let Some(why) = sim.agents.iter().find_map(|a| a.aborted.clone()) {
        return Err(Failure {
            code: EXIT_PLAN,
            error: Error::Controller(why),
        });
    }
    Ok(())
}

fn cmd_bench(cli: &Cli, dir: &Path, weights: &[f64], out: &Path) -> std::result::Result<(), Failure> {
    if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(input(Error::Input(format!("time weights must be positive, got {weights:?}"))));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| input(Error::Input(format!("cannot read {}: {e}", dir.display()))))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(input(Error::Input(format!("no scenario files in {}", dir.display()))));
    }
    let mut scenarios = Vec::with_capacity(paths.len());
    for p in &paths {
        let mut s = load_scenario(p)?;
        if let Some(seed) = cli.seed {
            s.seed = seed;
        }
        let name = p.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        scenarios.push((name, s));
    }
    let rows = sweep(&scenarios, weights, cli.fotp_weight, !cli.no_timing);
    let write = || -> Result<()> {
        fs::create_dir_all(out)?;
        write_sweep_csv(&rows, BufWriter::new(File::create(out.join(SWEEP_FILE))?))
    };
    write().map_err(input)?;
    if !cli.quiet {
        let ok = rows.iter().filter(|r| r.metrics.success).count();
        println!("{ok}/{} runs successful", rows.len());
    }
    Ok(())
}

fn cmd_check_grad(cli: &Cli, path: &Path, instances: usize) -> std::result::Result<(), Failure> {
    let scenario = load_scenario(path)?;
    let seed = cli.seed.unwrap_or(scenario.seed);
    let mut reports = run_all(instances, seed).map_err(failure(EXIT_GRAD))?;
    let local = instances.div_ceil(10).max(1);
    reports.push(scenario_suite(&scenario, local, 0.05, seed.wrapping_add(3)).map_err(failure(EXIT_GRAD))?);
    for r in &reports {
        if !cli.quiet {
            println!(
                "{:<20} {:>4} instances  max rel error {:.3e}  {}",
                r.name,
                r.instances,
                r.max_rel_error,
                if r.passed { "ok" } else { "FAILED" }
            );
        }
    }
    if let Some(bad) = reports.iter().find(|r| !r.passed) {
        return Err(Failure {
            code: EXIT_GRAD,
            error: Error::Numerical(format!(
                "{} gradient off by {:.3e} (instance {})",
                bad.name, bad.max_rel_error, bad.worst_instance
            )),
        });
    }
    Ok(())
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 2 for unreadable or malformed input, 3
/// when planning or tracking fails, 4 when a gradient check fails.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let level = if cli.quiet { log::LevelFilter::Error } else { log::LevelFilter::Warn };
    let _ = env_logger::Builder::from_env(env_logger::Env::default())
        .filter_level(level)
        .try_init();

    let outcome = match &cli.command {
        Command::Plan { scenario, out } => cmd_plan(&cli, scenario, out),
        Command::Track { dir } => cmd_track(&cli, dir),
        Command::Bench { dir, weights, out } => cmd_bench(&cli, dir, weights, out),
        Command::CheckGrad { scenario, instances } => cmd_check_grad(&cli, scenario, *instances),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.error);
            f.code
        }
    }
}
