use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pacealloc_core::allocation::{brute_force_oracle, solve, AllocationError, AllocationResult};
use pacealloc_core::scenario::{
    emit_report, load_scenario, run_experiment, simulate_allocation, solve_experiment, PointReport, PointStatus,
    Report, ReportFormat, RunKind, Scenario, ScenarioError, SolverMode,
};

#[derive(Parser)]
#[command(
    name = "pacealloc",
    version,
    about = "Utility-fair pacing allocation and bottleneck simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Replaces the seed written in the scenario.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for output files.
    #[arg(long, global = true, env = "PACEALLOC_OUT_DIR", default_value = "pacealloc-out")]
    out_dir: PathBuf,
    /// Report files to write.
    #[arg(long, global = true, value_enum, default_value_t = Format::Both)]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file and list its points.
    Validate { scenario: PathBuf },
    /// Solve the allocation of every point without simulating.
    Solve {
        scenario: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Simulate one point from an allocation file written by `solve`.
    Simulate {
        scenario: PathBuf,
        allocation: PathBuf,
        /// Point index within the sweep.
        #[arg(long, default_value_t = 0)]
        point: usize,
        /// Run the unmanaged baseline instead of the paced sources.
        #[arg(long)]
        best_effort: bool,
        /// Write the bottleneck queue events as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Solve, simulate and report the mix as written, ignoring any sweep.
    Run {
        scenario: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Run every point of the scenario's sweep.
    Sweep {
        scenario: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Write one scenario file per point instead of running them.
        #[arg(long)]
        expand_only: bool,
    },
    /// Check the exact solver against exhaustive search on every point.
    Oracle { scenario: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    Both,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Csv => ReportFormat::Csv,
            Format::Both => ReportFormat::Both,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Exact,
    Heuristic,
    Oracle,
}

impl From<Mode> for SolverMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Exact => SolverMode::Exact,
            Mode::Heuristic => SolverMode::Heuristic,
            Mode::Oracle => SolverMode::Oracle,
        }
    }
}

/// Failure with its process exit code.
enum Failure {
    Validation(String),
    Infeasible(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Infeasible(_) => 2,
            Failure::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Infeasible(m) | Failure::Io(m) => m,
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Io { .. } => Failure::Io(e.to_string()),
            e => Failure::Validation(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Validate { scenario } => validate(cli, scenario),
        Command::Solve { scenario, mode } => {
            let s = load(cli, scenario, *mode)?;
            let report = solve_experiment(&s);
            write_allocations(cli, &report)?;
            finish(cli, &report, s.sweep.is_some())
        }
        Command::Simulate {
            scenario,
            allocation,
            point,
            best_effort,
            trace,
        } => simulate(cli, scenario, allocation, *point, *best_effort, trace.as_deref()),
        Command::Run { scenario, mode } => {
            let mut s = load(cli, scenario, *mode)?;
            if s.sweep.take().is_some() {
                eprintln!("note: run ignores the sweep; use `sweep` to run its points");
            }
            finish(cli, &run_experiment(&s), false)
        }
        Command::Sweep {
            scenario,
            mode,
            expand_only,
        } => {
            let s = load(cli, scenario, *mode)?;
            if s.sweep.is_none() {
                return Err(Failure::Validation(format!("{}: no sweep section", scenario.display())));
            }
            if *expand_only {
                expand(cli, scenario, &s)
            } else {
                finish(cli, &run_experiment(&s), true)
            }
        }
        Command::Oracle { scenario } => oracle(cli, scenario),
    }
}

fn load(cli: &Cli, path: &Path, mode: Option<Mode>) -> Result<Scenario, Failure> {
    let mut s = load_scenario(path)?;
    if let Some(seed) = cli.seed {
        s.seed = seed;
    }
    if let Some(m) = mode {
        s.solver.mode = m.into();
    }
    Ok(s)
}

fn validate(cli: &Cli, path: &Path) -> Result<(), Failure> {
    let s = load(cli, path, None)?;
    println!(
        "ok: {} ({} nodes, {} links, {} mix entries)",
        if s.name.is_empty() { "unnamed" } else { &s.name },
        s.topology.nodes.len(),
        s.topology.links.len(),
        s.applications.len()
    );
    for p in s.points() {
        let counts: Vec<String> = s
            .applications
            .iter()
            .zip(&p.counts)
            .map(|(a, c)| format!("{}={c}", a.app_type))
            .collect();
        println!("{} {}", p.id(), counts.join(" "));
    }
    Ok(())
}

fn opt(x: Option<f64>) -> String {
    x.map_or("-".into(), |v| format!("{v:.4}"))
}

fn point_line(p: &PointReport) -> String {
    let mut line = format!("{} {}", p.id, p.total_apps);
    match (&p.status, &p.allocation) {
        (PointStatus::Failed, _) => {
            line += &format!(" failed: {}", p.reason.as_deref().unwrap_or("unknown"));
            return line;
        }
        (PointStatus::Ok, Some(a)) => {
            line += &format!(
                " uv_min1={:.4} uv_min2={:.4} sum={:.4}",
                a.uv_min1, a.uv_min2, a.utility_sum
            );
        }
        (PointStatus::Ok, None) => {}
    }
    if let Some(m) = &p.managed {
        line += &format!(" managed_loss={:.4}", m.metrics.loss);
    }
    if let Some(b) = &p.best_effort {
        line += &format!(" best_effort_loss={:.4}", b.metrics.loss);
    }
    let dev = p.per_type.iter().filter_map(|t| t.deviation).max_by(f64::total_cmp);
    if p.managed.is_some() {
        line += &format!(" max_deviation={}", opt(dev));
    }
    line + &format!(" ({:.2}s)", p.wall_time.as_secs_f64())
}

/// Prints the point lines, writes the report and picks the exit status. A
/// single point that failed to solve is an infeasibility.
fn finish(cli: &Cli, report: &Report, sweep: bool) -> Result<(), Failure> {
    for p in &report.points {
        println!("{}", point_line(p));
    }
    let files = emit_report(report, cli.format.into(), &cli.out_dir).map_err(|e| io_failure(&cli.out_dir, e))?;
    for f in files {
        println!("wrote {}", f.display());
    }
    if sweep {
        return Ok(());
    }
    match report.points.iter().find(|p| p.status == PointStatus::Failed) {
        Some(p) => {
            let reason = p.reason.clone().unwrap_or_default();
            if reason.starts_with("allocation: infeasible") {
                Err(Failure::Infeasible(reason))
            } else {
                Err(Failure::Validation(reason))
            }
        }
        None => Ok(()),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_failure(path, e))
}

/// One allocation file per solved point, the input of `simulate`.
fn write_allocations(cli: &Cli, report: &Report) -> Result<(), Failure> {
    std::fs::create_dir_all(&cli.out_dir).map_err(|e| io_failure(&cli.out_dir, e))?;
    for p in &report.points {
        if let Some(a) = &p.allocation {
            let path = cli.out_dir.join(format!("{}.allocation.json", p.id));
            write_json(&path, a)?;
        }
    }
    Ok(())
}

fn simulate(
    cli: &Cli,
    scenario: &Path,
    allocation: &Path,
    point: usize,
    best_effort: bool,
    trace: Option<&Path>,
) -> Result<(), Failure> {
    let s = load(cli, scenario, None)?;
    let points = s.points();
    let p = points.get(point).ok_or_else(|| {
        Failure::Validation(format!(
            "point {point} does not exist; the scenario has {}",
            points.len()
        ))
    })?;
    let text = std::fs::read_to_string(allocation).map_err(|e| io_failure(allocation, e))?;
    let result: AllocationResult =
        serde_json::from_str(&text).map_err(|e| Failure::Validation(format!("{}: {e}", allocation.display())))?;
    let kind = if best_effort {
        RunKind::BestEffort
    } else {
        RunKind::Managed
    };
    let run = match trace {
        Some(t) => {
            let file = File::create(t).map_err(|e| io_failure(t, e))?;
            let mut w = BufWriter::new(file);
            let run = simulate_allocation(&s, p, &result, kind, Some(&mut w));
            w.flush().map_err(|e| io_failure(t, e))?;
            run
        }
        None => simulate_allocation(&s, p, &result, kind, None),
    }
    .map_err(Failure::Validation)?;
    std::fs::create_dir_all(&cli.out_dir).map_err(|e| io_failure(&cli.out_dir, e))?;
    let path = cli.out_dir.join(format!("{}.{}.json", p.id(), kind.as_str()));
    write_json(&path, &run)?;
    let m = &run.metrics;
    println!(
        "{} {} sent={} dropped={} loss={:.4} utilization={:.4} queue_p95_ms={:.3}",
        p.id(),
        kind.as_str(),
        m.sent,
        m.dropped,
        m.loss,
        m.link.utilization,
        m.link.queue_delay_p95_ms
    );
    println!("wrote {}", path.display());
    Ok(())
}

/// Writes each point as a stand-alone scenario with grid paths made
/// absolute.
fn expand(cli: &Cli, path: &Path, s: &Scenario) -> Result<(), Failure> {
    std::fs::create_dir_all(&cli.out_dir).map_err(|e| io_failure(&cli.out_dir, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    for (p, mut point) in s.expanded() {
        for a in &mut point.applications {
            if let Some(g) = &mut a.grid {
                let full = base.join(&*g);
                let full = full.canonicalize().map_err(|e| io_failure(&full, e))?;
                *g = full.to_string_lossy().into_owned();
            }
        }
        let out = cli.out_dir.join(format!("{}.scenario.json", p.id()));
        write_json(&out, &point)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn same(a: &AllocationResult, b: &AllocationResult) -> bool {
    let key = |r: &AllocationResult| {
        let mut v: Vec<_> = r
            .apps
            .iter()
            .map(|x| (x.id.clone(), x.tp_index, x.d_index, x.path_index))
            .collect();
        v.sort();
        v
    };
    a.uv_min1 == b.uv_min1 && a.uv_min2 == b.uv_min2 && a.utility_sum == b.utility_sum && key(a) == key(b)
}

fn oracle(cli: &Cli, path: &Path) -> Result<(), Failure> {
    let s = load(cli, path, None)?;
    let mut mismatches = 0;
    for p in s.points() {
        let (problem, _) = s.problem(&p);
        let verdict = match (solve(&problem), brute_force_oracle(&problem)) {
            (_, Err(e @ AllocationError::TooLarge { .. })) => format!("skipped: {e}"),
            (Ok(a), Ok(b)) if same(&a, &b) => format!("match uv_min1={:.4} sum={:.4}", a.uv_min1, a.utility_sum),
            (Err(AllocationError::Infeasible { .. }), Err(AllocationError::Infeasible { .. })) => {
                "match: both infeasible".into()
            }
            (a, b) => {
                mismatches += 1;
                let show = |r: &Result<AllocationResult, AllocationError>| match r {
                    Ok(r) => format!("uv_min1={} uv_min2={} sum={}", r.uv_min1, r.uv_min2, r.utility_sum),
                    Err(e) => e.to_string(),
                };
                format!("MISMATCH solver: {} oracle: {}", show(&a), show(&b))
            }
        };
        println!("{} {verdict}", p.id());
    }
    if mismatches > 0 {
        return Err(Failure::Validation(format!(
            "{mismatches} point(s) disagree with the oracle"
        )));
    }
    Ok(())
}
