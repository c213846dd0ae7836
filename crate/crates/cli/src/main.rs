use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use expansive::hj::hj_sweep;
use expansive::io::{
    path_from_trajectory, read_configurations, read_trajectory, write_solution, write_trace, write_value_samples, HjEntry, Problem,
    ProblemSpec, Report, SolveSummary,
};
use expansive::minimizer::evaluate_path;
use expansive::verify::{verify_all, CheckOutcome};
use expansive::{solve, Error, SolveReport, TimeGrid};

const EXIT_ERROR: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_VERIFY_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "expansive", version, about = "Expansive N-body motions by renormalized action minimization")]
struct Cli {
    /// Overrides every RNG seed in the problem file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// No progress messages on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Minimal central configuration of the whole system (JSON on stdout).
    CentralConfig { spec: PathBuf },
    /// Minimize and write trajectory.csv, report.json and trace.csv.
    Solve {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve (or load a trajectory) and run every enabled check.
    Verify {
        spec: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Check this trajectory table instead of solving.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Value function and HJ residual at each x0 row of a table.
    Hj {
        spec: PathBuf,
        #[arg(long = "x0-grid")]
        x0_grid: PathBuf,
        /// Output table (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve once per value of a dotted problem key, e.g. grid.T_max.
    Sweep {
        spec: PathBuf,
        #[arg(long)]
        param: String,
        /// Comma-separated TOML literals.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

struct Ctx {
    seed: Option<u64>,
    quiet: bool,
}

impl Ctx {
    fn log(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn load(&self, path: &Path) -> Result<ProblemSpec> {
        let mut spec = ProblemSpec::load(path)?;
        if let Some(s) = self.seed {
            spec.solver.rng_seed = s;
            spec.cc.rng_seed = s;
            spec.verify.rng_seed = s;
        }
        Ok(spec)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn solve_problem(ctx: &Ctx, spec: &ProblemSpec, p: &Problem) -> Result<SolveReport> {
    ctx.log(format!(
        "solving {} regime, N = {}, T_max = {:e}, n = {}",
        p.reference.regime,
        p.system.n_bodies(),
        p.grid.t_max(),
        p.grid.n()
    ));
    let report = solve(&p.reference, &p.grid, &spec.solver, None)?;
    ctx.log(format!(
        "action {:.12e}, {} iterations, gradient {:.3e}, converged: {}",
        report.action.total, report.iterations, report.final_grad_norm, report.converged
    ));
    Ok(report)
}

fn write_outputs(dir: &Path, p: &Problem, report: &SolveReport, doc: &Report) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_solution(create(&dir.join("trajectory.csv"))?, &p.reference, &report.path)?;
    write_trace(create(&dir.join("trace.csv"))?, &report.trace)?;
    doc.write(&dir.join("report.json"))?;
    Ok(())
}

fn cmd_central_config(ctx: &Ctx, spec: &Path) -> Result<u8> {
    let cc = ctx.load(spec)?.central_config()?;
    println!("{}", serde_json::to_string_pretty(&cc)?);
    Ok(0)
}

fn cmd_solve(ctx: &Ctx, spec: &Path, out: &Path) -> Result<u8> {
    let spec = ctx.load(spec)?;
    let p = spec.build()?;
    let report = solve_problem(ctx, &spec, &p)?;
    let mut doc = Report::new(&spec, &p.reference);
    doc.solve = Some(SolveSummary::from(&report));
    write_outputs(out, &p, &report, &doc)?;
    Ok(if report.converged { 0 } else { EXIT_NOT_CONVERGED })
}

fn cmd_verify(ctx: &Ctx, spec: &Path, report_path: &Path, trajectory: Option<&Path>) -> Result<u8> {
    let spec = ctx.load(spec)?;
    let p = spec.build()?;
    let report = match trajectory {
        Some(t) => {
            let (times, xs) = read_trajectory(open(t)?, p.system.n_bodies(), p.system.dim())?;
            let path = path_from_trajectory(&p.reference, &times, &xs)?;
            evaluate_path(&p.reference, &path, &spec.solver)?
        }
        None => solve_problem(ctx, &spec, &p)?,
    };
    if trajectory.is_none() && !report.converged {
        let mut doc = Report::new(&spec, &p.reference);
        doc.solve = Some(SolveSummary::from(&report));
        doc.write(report_path)?;
        return Ok(EXIT_NOT_CONVERGED);
    }
    let mut doc = Report::new(&spec, &p.reference);
    doc.solve = Some(SolveSummary::from(&report));
    let verification = verify_all(&p.reference, &report, &spec.verify);
    let passed = match verification {
        Ok(mut v) => {
            // a loaded trajectory must also be a critical point
            v.checks.push(CheckOutcome {
                name: "stationarity".into(),
                passed: report.converged,
                value: report.final_grad_norm,
                threshold: spec.solver.grad_tol,
            });
            v.passed &= report.converged;
            for c in &v.checks {
                ctx.log(format!("{:<24} {} {:.6e} (threshold {:.3e})", c.name, if c.passed { "PASS" } else { "FAIL" }, c.value, c.threshold));
            }
            let ok = v.passed;
            doc.verification = Some(v);
            ok
        }
        Err(e) => {
            ctx.log(format!("verification aborted: {e}"));
            false
        }
    };
    doc.write(report_path)?;
    Ok(if passed { 0 } else { EXIT_VERIFY_FAILED })
}

fn cmd_hj(ctx: &Ctx, spec: &Path, x0_grid: &Path, out: Option<&Path>) -> Result<u8> {
    let spec = ctx.load(spec)?;
    let p = spec.build()?;
    let points = read_configurations(open(x0_grid)?, p.system.n_bodies(), p.system.dim())?;
    let grid = TimeGrid::power_law(spec.hj.t, spec.hj.n)?;
    ctx.log(format!("{} sample points, T = {:e}, n = {}", points.len(), spec.hj.t, spec.hj.n));
    let results = hj_sweep(&p.reference, &points, &grid, &spec.solver, &spec.hj);
    let not_converged = results.iter().any(|r| matches!(r, Err(Error::NotConverged(_))));
    let entries: Vec<HjEntry> = points.iter().zip(results).map(|(x, r)| HjEntry::new(x, r)).collect();
    for (k, e) in entries.iter().enumerate() {
        match (&e.sample, &e.error) {
            (Some(s), _) => ctx.log(format!("point {k}: v = {:.10e}, residual {:.3e}", s.v_value, s.hj_residual)),
            (None, Some(msg)) => ctx.log(format!("point {k}: {msg}")),
            _ => {}
        }
    }
    match out {
        Some(path) => write_value_samples(create(path)?, &entries)?,
        None => {
            let mut buf = Vec::new();
            write_value_samples(&mut buf, &entries)?;
            std::io::stdout().write_all(&buf)?;
        }
    }
    Ok(if not_converged { EXIT_NOT_CONVERGED } else { 0 })
}

fn cmd_sweep(ctx: &Ctx, spec: &Path, param: &str, values: &[String], out: &Path) -> Result<u8> {
    if values.is_empty() {
        anyhow::bail!("--values is empty");
    }
    let base = ctx.load(spec)?;
    let specs = values.iter().map(|v| base.with_param(param, v)).collect::<Result<Vec<_>, _>>()?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut summary = csv::Writer::from_writer(create(&out.join("summary.csv"))?);
    summary.write_record([param, "converged", "iterations", "action", "final_grad_norm", "el_residual", "energy_residual", "min_separation"])?;
    let mut code = 0;
    for (k, (value, spec)) in values.iter().zip(&specs).enumerate() {
        ctx.log(format!("{param} = {value}"));
        let p = spec.build()?;
        let report = solve_problem(ctx, spec, &p)?;
        let mut doc = Report::new(spec, &p.reference);
        doc.solve = Some(SolveSummary::from(&report));
        doc.write(&out.join(format!("report_{k}.json")))?;
        if !report.converged {
            code = EXIT_NOT_CONVERGED;
        }
        let f = |v: f64| format!("{v:.16e}");
        summary.write_record([
            value.clone(),
            report.converged.to_string(),
            report.iterations.to_string(),
            f(report.action.total),
            f(report.final_grad_norm),
            f(report.el_residual),
            f(report.energy_residual),
            f(report.min_separation.0),
        ])?;
    }
    summary.flush()?;
    Ok(code)
}

fn run(cli: Cli) -> Result<u8> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    let ctx = Ctx { seed: cli.seed, quiet: cli.quiet };
    match &cli.command {
        Command::CentralConfig { spec } => cmd_central_config(&ctx, spec),
        Command::Solve { spec, out } => cmd_solve(&ctx, spec, out),
        Command::Verify { spec, report, trajectory } => cmd_verify(&ctx, spec, report, trajectory.as_deref()),
        Command::Hj { spec, x0_grid, out } => cmd_hj(&ctx, spec, x0_grid, out.as_deref()),
        Command::Sweep { spec, param, values, out } => cmd_sweep(&ctx, spec, param, values, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = match e.downcast_ref::<Error>() {
                Some(Error::NotConverged(_)) => EXIT_NOT_CONVERGED,
                _ => EXIT_ERROR,
            };
            ExitCode::from(code)
        }
    }
}
