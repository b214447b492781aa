use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use fdsim::compare::{EPS_R_GRID, GRID_SERVICE_RATE, GRID_T};
use fdsim::experiment::{self, analytic_report, sweep, write_analytic, write_sweep};
use fdsim::metrics::{write_summary, write_trace};
use fdsim::{load_scenario, Scenario};

/// Flow counts swept when `--flows` is not given.
const DEFAULT_FLOWS: [usize; 6] = [40, 100, 200, 500, 1000, 2000];

#[derive(Parser)]
#[command(name = "fdsim", version, about = "Flow Director receive steering and packet reordering simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario with one seed.
    Run {
        #[command(flatten)]
        input: ScenarioArgs,
        /// Seed; defaults to the first seed listed in the scenario.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the per-delivery log.
        #[arg(long)]
        trace: bool,
    },
    /// Run a grid of flow counts and seeds and summarize per flow count.
    Sweep {
        #[command(flatten)]
        input: ScenarioArgs,
        /// Comma-separated seeds; defaults to the scenario's seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Comma-separated flow counts.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_FLOWS)]
        flows: Vec<usize>,
    },
    /// Evaluate the reordering predicate over the backlog grid.
    Analytic(AnalyticArgs),
    /// Replay every grid point in the simulator and check it against the predicate.
    Compare(AnalyticArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory; defaults to the paths in the scenario's [outputs].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyticArgs {
    #[arg(long, default_value_t = 512)]
    ring_size: usize,
    #[arg(long, default_value_t = GRID_SERVICE_RATE)]
    service_rate: f64,
    /// Time of the steering change, seconds.
    #[arg(long, default_value_t = GRID_T)]
    t: f64,
    /// Comma-separated eps * R values.
    #[arg(long, value_delimiter = ',', default_values_t = EPS_R_GRID)]
    eps_r: Vec<f64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

enum Failure {
    /// Bad command line or scenario. Exit 1.
    Input(anyhow::Error),
    /// Simulation or I/O error. Exit 2.
    Runtime(anyhow::Error),
    /// Simulator and predicate disagree. Exit 3.
    Disagreement(String),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

fn input(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Input(e.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Disagreement(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run { input: a, seed, trace } => run(&a, seed, trace),
        Command::Sweep { input: a, seeds, flows } => run_sweep(&a, seeds, &flows),
        Command::Analytic(a) => run_analytic(&a, false),
        Command::Compare(a) => run_analytic(&a, true),
    }
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    load_scenario(path).map_err(input)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn run(a: &ScenarioArgs, seed: Option<u64>, trace: bool) -> Result<(), Failure> {
    let scenario = load(&a.scenario)?;
    let seed = seed.unwrap_or(scenario.seeds[0]);
    let res = experiment::run(&scenario, seed, trace)?;
    let (summary_path, trace_path) = match &a.out {
        Some(dir) => (dir.join("summary.csv"), dir.join("trace.csv")),
        None => (
            scenario.outputs.summary_path.clone(),
            scenario.outputs.trace_path.clone().unwrap_or_else(|| PathBuf::from("trace.csv")),
        ),
    };
    write_summary(create(&summary_path)?, std::slice::from_ref(&res.summary))?;
    if trace {
        write_trace(create(&trace_path)?, &res.output.log)?;
    }
    let s = &res.summary;
    println!(
        "seed {} delivered {} reordered {} ratio {:.6} drops {} migrations {}",
        s.seed, s.total_delivered, s.total_reordered, s.reorder_ratio, s.total_drops, s.migrations
    );
    Ok(())
}

fn run_sweep(a: &ScenarioArgs, seeds: Vec<u64>, flows: &[usize]) -> Result<(), Failure> {
    let scenario = load(&a.scenario)?;
    let seeds = if seeds.is_empty() { scenario.seeds.clone() } else { seeds };
    if flows.is_empty() {
        return Err(input(anyhow::anyhow!("--flows must list at least one flow count")));
    }
    // Flow counts are checked up front so a bad one is an input error.
    for &n in flows {
        scenario.with_flows(n).map_err(input)?;
    }
    let res = sweep(&scenario, flows, &seeds)?;
    let dir = a.out.clone().unwrap_or_else(|| {
        scenario
            .outputs
            .summary_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default()
    });
    write_sweep(create(&dir.join("sweep.csv"))?, &res.rows)?;
    write_summary(create(&dir.join("runs.csv"))?, &res.runs)?;
    for r in &res.rows {
        println!(
            "n_flows {:>5} mean_ratio {:.6} ci95 {}",
            r.n_flows, r.mean_reorder_ratio, r.ci95_half_width
        );
    }
    Ok(())
}

fn run_analytic(a: &AnalyticArgs, compare: bool) -> Result<(), Failure> {
    let report = analytic_report(a.ring_size, a.service_rate, a.t, &a.eps_r, compare).map_err(input)?;
    let name = if compare { "compare.csv" } else { "analytic.csv" };
    write_analytic(create(&a.out.join(name))?, &report.rows)?;
    let predicted = report.rows.iter().filter(|r| r.predicted_reorder).count();
    println!("{} grid points, {} predicted reordered", report.rows.len(), predicted);
    if let Some(agree) = report.agreements {
        println!("agreement {}/{}", agree, report.rows.len());
        if !report.all_agree() {
            return Err(Failure::Disagreement(format!(
                "simulator disagrees with the predicate on {} of {} points",
                report.rows.len() - agree,
                report.rows.len()
            )));
        }
    }
    Ok(())
}
