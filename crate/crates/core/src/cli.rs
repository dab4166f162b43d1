//! Command-line entry points.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 solver failure
//! (including a solve that did not converge; its files are still written),
//! 4 I/O error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::baselines::compare;
use crate::error::Error;
use crate::io::config::{load_scenario, ScenarioConfig};
use crate::io::export::{
    export_solution, import_solution, read_json, write_json, write_solution_csv, write_tracking_csv,
    DroneTrackingMetrics, MetricsReport,
};
use crate::io::plot::{emit_plot_data, PlotKind, PlotSource};
use crate::solver::{plan, IterationLog, SolveStatus};
use crate::tracking::{simulate_tracking, tracking_metrics};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "swarmrace", version, about = "Time-optimal multi-drone trajectories through ordered waypoints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides `solver.seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// error, warn, info, debug or trace.
    #[arg(long, default_value = "warn")]
    log_level: log::LevelFilter,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Joint solve; writes the solution CSV, its sidecar and the iteration log.
    Solve(Common),
    /// Joint solve against independent solves and the time-lag baseline.
    Compare(Common),
    /// Tracks a solution with the cascaded controller.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Solution CSV; defaults to the solution file in the output directory.
        #[arg(long)]
        solution: Option<PathBuf>,
    },
    /// Writes a plot table.
    ExportPlot {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        kind: String,
        /// Solution CSV, or a comparison JSON for `--kind comparison`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

/// Error → exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_) | Error::InvalidInput(_) | Error::Parse { .. } => EXIT_CONFIG,
        Error::Io { .. } => EXIT_IO,
        Error::InvalidState(_) | Error::Evaluation(_) | Error::Solver(_) | Error::Extraction(_) => EXIT_SOLVER,
    }
}

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn init_logging(level: log::LevelFilter) {
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
}

fn setup(common: &Common) -> crate::Result<ScenarioConfig> {
    init_logging(common.log_level);
    let mut cfg = load_scenario(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.solver.seed = seed;
    }
    if cfg.long_running {
        log::warn!("{} is marked long-running", common.config.display());
    }
    std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
    Ok(cfg)
}

struct LogFile {
    path: PathBuf,
    w: BufWriter<File>,
    err: Option<std::io::Error>,
}

impl LogFile {
    fn create(path: PathBuf) -> crate::Result<Self> {
        let mut w = File::create(&path).map(BufWriter::new).map_err(|e| Error::io(&path, e))?;
        writeln!(w, "{}", IterationLog::HEADER).map_err(|e| Error::io(&path, e))?;
        Ok(Self { path, w, err: None })
    }

    fn line(&mut self, prefix: &str, l: &IterationLog) {
        log::debug!("{prefix}{l}");
        if self.err.is_none() {
            self.err = writeln!(self.w, "{prefix}{l}").err();
        }
    }

    fn finish(mut self) -> crate::Result<()> {
        if let Some(e) = self.err.take() {
            return Err(Error::io(&self.path, e));
        }
        self.w.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn dispatch(cmd: Command) -> crate::Result<i32> {
    match cmd {
        Command::Solve(c) => solve(&c),
        Command::Compare(c) => run_compare(&c),
        Command::Simulate { common, solution } => simulate(&common, solution),
        Command::ExportPlot { common, kind, input } => export_plot(&common, &kind, input),
    }
}

fn solve(c: &Common) -> crate::Result<i32> {
    let cfg = setup(c)?;
    let mut log = LogFile::create(c.out.join(&cfg.output.iteration_log))?;
    let spec = cfg.collision_spec();
    let result = plan(&cfg.track(), &cfg.grid, &cfg.models(), spec.as_ref(), &cfg.solver, &mut |l| {
        log.line("", l)
    });
    log.finish()?;
    let result = result?;
    let path = c.out.join(&cfg.output.solution);
    export_solution(&result, &spec.unwrap_or(cfg.collision.spec()), &path)?;
    log::info!(
        "{}: J = {:.6}, arrival total {:.3} s, {:.1} s wall",
        result.status,
        result.objective,
        result.arrival_total(),
        result.wall_time
    );
    if result.status != SolveStatus::Converged {
        eprintln!("solver finished with status {}", result.status);
        for d in &result.diagnostics {
            eprintln!("  {d}");
        }
        return Ok(EXIT_SOLVER);
    }
    Ok(EXIT_OK)
}

fn run_compare(c: &Common) -> crate::Result<i32> {
    let cfg = setup(c)?;
    let mut log = LogFile::create(c.out.join(&cfg.output.iteration_log))?;
    let spec = cfg.collision.spec();
    let cmp = compare(&cfg.track(), &cfg.grid, &cfg.models(), &spec, &cfg.solver, &mut |m, l| {
        log.line(&format!("{m} "), l)
    });
    log.finish()?;
    let cmp = cmp?;
    write_json(&cmp.report, &c.out.join(&cfg.output.comparison))?;
    if cmp.joint.status == SolveStatus::Converged {
        export_solution(&cmp.joint, &spec, &c.out.join("joint.csv"))?;
    }
    if cmp.independent.iter().all(|r| r.status == SolveStatus::Converged) {
        let sols: Vec<_> = cmp.independent.iter().flat_map(|r| r.solutions.clone()).collect();
        write_solution_csv(&sols, &c.out.join("independent.csv"))?;
    }
    if let Some(lag) = &cmp.lag {
        write_solution_csv(&lag.solutions, &c.out.join("lag.csv"))?;
    }
    if cmp.joint.status != SolveStatus::Converged {
        eprintln!("joint solve finished with status {}", cmp.joint.status);
        return Ok(EXIT_SOLVER);
    }
    Ok(EXIT_OK)
}

fn simulate(c: &Common, solution: Option<PathBuf>) -> crate::Result<i32> {
    let cfg = setup(c)?;
    let path = solution.unwrap_or_else(|| c.out.join(&cfg.output.solution));
    let (sols, _) = import_solution(&path)?;
    if sols.len() != cfg.vehicles.len() {
        return Err(Error::InvalidInput(format!(
            "{} has {} drones, the config {}",
            path.display(),
            sols.len(),
            cfg.vehicles.len()
        )));
    }
    let mut logs = Vec::with_capacity(sols.len());
    let mut metrics = Vec::with_capacity(sols.len());
    for (i, s) in sols.iter().enumerate() {
        let params = cfg
            .quadrotor(i)
            .ok_or_else(|| Error::InvalidInput(format!("vehicles[{i}]: tracking needs a quadrotor")))?;
        let log = simulate_tracking(s, &cfg.controller, &params, &cfg.simulation)?;
        metrics.push(DroneTrackingMetrics {
            drone_id: i,
            metrics: tracking_metrics(&log, &s.waypoints, cfg.track.tol)?,
            saturation_count: log.saturation_count(),
        });
        logs.push(log);
    }
    write_tracking_csv(&logs, &c.out.join(&cfg.output.tracking))?;
    let report = MetricsReport {
        schema_version: crate::SCHEMA_VERSION.into(),
        sim_dt: logs[0].dt,
        drones: metrics,
    };
    write_json(&report, &c.out.join("metrics.json"))?;
    Ok(EXIT_OK)
}

fn export_plot(c: &Common, kind: &str, input: Option<PathBuf>) -> crate::Result<i32> {
    let cfg = setup(c)?;
    let kind: PlotKind = kind.parse()?;
    let out = c.out.join(format!("{kind}.csv"));
    if kind == PlotKind::Comparison {
        let path = input.unwrap_or_else(|| c.out.join(&cfg.output.comparison));
        let report = read_json(&path)?;
        emit_plot_data(PlotSource::Report(&report), kind, &out)?;
    } else {
        let path = input.unwrap_or_else(|| c.out.join(&cfg.output.solution));
        let (sols, _) = import_solution(Path::new(&path))?;
        emit_plot_data(PlotSource::Solutions(&sols), kind, &out)?;
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["swarmrace", "solve"]), EXIT_CONFIG);
        assert_eq!(run(["swarmrace", "fly", "--config", "x.json"]), EXIT_CONFIG);
        assert_eq!(run(["swarmrace", "--help"]), EXIT_OK);
    }

    #[test]
    fn error_mapping() {
        assert_eq!(exit_code(&Error::InvalidConfig("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::io("a", std::io::ErrorKind::NotFound.into())), EXIT_IO);
        assert_eq!(exit_code(&Error::Solver("x".into())), EXIT_SOLVER);
    }

    #[test]
    fn missing_config_file_is_io() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let code = run([
            "swarmrace",
            "solve",
            "--config",
            dir.path().join("nope.json").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_IO);
    }
}
