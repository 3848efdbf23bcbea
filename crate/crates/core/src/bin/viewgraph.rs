//! Command-line front end: generate synthetic graphs, solve, evaluate.
//!
//! Exit codes: 0 success, 1 input error, 2 solver did not converge (the
//! report is still written).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use viewgraph::datagen::{generate, Layout, SynthSpec};
use viewgraph::io::{parse_config, GraphFile, ReportFile};
use viewgraph::pipeline::{run, Method};
use viewgraph::Error;

#[derive(Parser)]
#[command(name = "viewgraph", version, about = "Camera rotations and positions from relative motions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    UniformCube,
    TwoCluster,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a graph file and write a JSON report.
    Solve {
        #[arg(long)]
        graph: PathBuf,
        /// cls, alg1c, alg1o, alg2c, alg2o or orthocd.
        #[arg(long)]
        method: Method,
        /// TOML pipeline configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic graph with ground truth.
    Generate {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.2)]
        density: f64,
        /// Rotation noise scale, degrees.
        #[arg(long, default_value_t = 0.0)]
        rot_noise: f64,
        /// Direction noise scale, degrees.
        #[arg(long, default_value_t = 0.0)]
        dir_noise: f64,
        /// Fraction of edges replaced by random observations.
        #[arg(long, default_value_t = 0.0)]
        outliers: f64,
        #[arg(long, value_enum, default_value_t = LayoutArg::UniformCube)]
        layout: LayoutArg,
        /// Long-to-short distance ratio of the two-cluster layout.
        #[arg(long, default_value_t = 10.0)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score reports against the ground truth in a graph file. Each report is
    /// rewritten with its evaluation and one table row is printed per report.
    Eval {
        #[arg(long, required = true)]
        report: Vec<PathBuf>,
        #[arg(long)]
        graph: PathBuf,
    },
}

fn located(path: &Path, e: Error) -> String {
    format!("{}: {e}", path.display())
}

fn solve(graph: &Path, method: Method, config: Option<&Path>, out: &Path) -> Result<ExitCode, String> {
    let file = GraphFile::load(graph).map_err(|e| located(graph, e))?;
    let text = match config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| located(p, e.into()))?),
        None => None,
    };
    let cfg = parse_config(text.as_deref()).map_err(|e| match config {
        Some(p) => located(p, e),
        None => e.to_string(),
    })?;
    let start = Instant::now();
    let output = run(method, &file.graph, &cfg).map_err(|e| format!("{method}: {e}"))?;
    let seconds = start.elapsed().as_secs_f64();
    let mut report = ReportFile::new(method, &cfg, output, seconds);
    if let Some(truth) = &file.truth {
        if let Err(e) = report.evaluate_against(truth) {
            eprintln!("warning: report written without evaluation: {e}");
        }
    }
    report.save(out).map_err(|e| located(out, e))?;
    let (rises, other): (Vec<_>, Vec<_>) = report.trace.warnings.iter().partition(|w| w.contains("raised the cost"));
    for w in other {
        eprintln!("warning: {w}");
    }
    if !rises.is_empty() {
        eprintln!("note: {} outer iterations raised the tracked cost (listed in the report)", rises.len());
    }
    if report.trace.converged {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("{method} did not converge after {} iterations; report written", report.iterations);
        Ok(ExitCode::from(2))
    }
}

fn eval(reports: &[PathBuf], graph: &Path) -> Result<ExitCode, String> {
    let file = GraphFile::load(graph).map_err(|e| located(graph, e))?;
    let truth = file.truth.ok_or_else(|| format!("{}: no ground-truth `v` lines", graph.display()))?;
    println!(
        "{:<8} {:>12} {:>12} {:>12} {:>8} {:>6} {:>9}",
        "method", "rmse", "mean", "median", "at_bound", "iters", "seconds"
    );
    for path in reports {
        let mut report = ReportFile::load(path).map_err(|e| located(path, e))?;
        report.evaluate_against(&truth).map_err(|e| located(path, e))?;
        let ev = &report.evaluation.as_ref().expect("just evaluated").positions;
        let frac = ev.frac_at_bound.map_or("-".to_string(), |f| format!("{f:.4}"));
        println!(
            "{:<8} {:>12.5e} {:>12.5e} {:>12.5e} {:>8} {:>6} {:>9.3}",
            report.method.name(),
            ev.e_rmse,
            ev.e_mean,
            ev.e_median,
            frac,
            report.iterations,
            report.seconds
        );
        report.save(path).map_err(|e| located(path, e))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    // Usage errors exit 1; clap's own code 2 is reserved for non-convergence.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::FAILURE } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Solve { graph, method, config, out } => solve(&graph, method, config.as_deref(), &out),
        Command::Generate { n, density, rot_noise, dir_noise, outliers, layout, ratio, seed, out } => {
            let layout = match layout {
                LayoutArg::UniformCube => Layout::UniformCube,
                LayoutArg::TwoCluster => Layout::TwoCluster { ratio },
            };
            let spec = SynthSpec {
                n,
                density,
                rot_noise_deg: rot_noise,
                dir_noise_deg: dir_noise,
                outlier_frac: outliers,
                layout,
                seed,
            };
            generate(&spec)
                .map(|(graph, gt)| GraphFile { graph, truth: Some(gt.poses) })
                .and_then(|file| file.save(&out))
                .map(|_| ExitCode::SUCCESS)
                .map_err(|e| e.to_string())
        }
        Command::Eval { report, graph } => eval(&report, &graph),
    };
    result.unwrap_or_else(|msg| {
        eprintln!("error: {msg}");
        ExitCode::FAILURE
    })
}
