use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use ludyn_cli::plot::{palette, read_trajectory_csv, render, time_span, Series};
use ludyn_cli::{run, CliError, CliResult, Command, Problem, OUT_ENV};

#[derive(Parser)]
#[command(name = "ludyn", version, about = "Periodic solutions, barriers and asymptotic runs of -u'' = f(t, u, u')")]
struct Cli {
    #[command(subcommand)]
    action: Action,
    /// Worker threads for the inner sweeps.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output root; defaults to $LUDYN_OUT, then `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Action {
    /// Run one command on a problem file.
    Run {
        #[arg(value_enum)]
        command: Command,
        problem: PathBuf,
        /// Override a problem key, e.g. `--set solver.horizon=4`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Render the band of a problem with `t,u,v` trajectories as SVG.
    Plot {
        problem: PathBuf,
        trajectories: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
}

fn plot(problem: &PathBuf, trajectories: &[PathBuf], output: &PathBuf) -> CliResult<()> {
    let problem = Problem::load(problem, &[])?;
    let mut runs = Vec::new();
    for path in trajectories {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        runs.push(read_trajectory_csv(&path.display().to_string(), &text)?);
    }
    let (t0, t1) = time_span(&runs, problem.period());
    let mut series = vec![
        Series::from_curve("alpha", "#000000", problem.band.lower(), t0, t1),
        Series::from_curve("beta", "#000000", problem.band.upper(), t0, t1),
    ];
    for (k, points) in runs.into_iter().enumerate() {
        series.push(Series {
            label: trajectories[k].display().to_string(),
            color: palette(k),
            points,
        });
    }
    std::fs::write(output, render(problem.name(), &series)).map_err(|source| CliError::Io {
        path: output.clone(),
        source,
    })
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let root = cli
        .out
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let start = Instant::now();
    let outcome = match &cli.action {
        Action::Run { command, problem, sets } => {
            Problem::load(problem, sets).and_then(|p| run(*command, &p, &root)).map(|s| {
                println!("{}: {}", s.dir.display(), if s.pass { "pass" } else { "fail" });
                s.pass
            })
        }
        Action::Plot {
            problem,
            trajectories,
            output,
        } => plot(problem, trajectories, output).map(|()| true),
    };
    eprintln!("wall time {:.3}s", start.elapsed().as_secs_f64());
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
