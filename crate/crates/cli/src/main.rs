use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use heavytail_core::config::{ExperimentKind, RunConfig};
use heavytail_core::experiment::{execute, plot_summary};
use heavytail_core::harness::with_threads;
use heavytail_core::Error;

#[derive(Parser)]
#[command(name = "heavytail-opt", version, about = "Clipped stochastic optimizers under heavy-tailed noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single trajectory: trajectory.csv and summary.json
    Run(ExpArgs),
    /// Multi-seed horizon sweep with rate fit: summary.json, loglog.svg, trajectories/
    Sweep(ExpArgs),
    /// Clipping-bound and concentration checks: conclab.json
    Conclab(ExpArgs),
    /// Population error against training-set size: gengap.json
    Gengap(ExpArgs),
    /// Clipped against unclipped SGD on identical seeds: contrast.json
    Contrast(ExpArgs),
    /// Re-render loglog.svg from a sweep summary.json
    Plot(PlotArgs),
}

#[derive(Args)]
struct ExpArgs {
    /// Config file, or `-` for stdin
    #[arg(long, short)]
    config: String,
    /// Output directory; overrides `output_dir` in the config
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Base seed; overrides `seed` in the config
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long, env = "HEAVYTAIL_THREADS")]
    threads: Option<usize>,
}

#[derive(Args)]
struct PlotArgs {
    /// A summary.json written by `sweep`
    #[arg(long, short, alias = "summary")]
    config: PathBuf,
    /// Directory for loglog.svg (default: next to the summary)
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Constraint { .. } => 2,
        Error::AllDiverged { .. } => 3,
        _ => 1,
    }
}

fn name(kind: ExperimentKind) -> String {
    format!("{kind:?}").to_lowercase()
}

fn load(path: &str) -> heavytail_core::Result<RunConfig> {
    if path == "-" {
        RunConfig::from_reader(std::io::stdin().lock())
    } else {
        RunConfig::from_path(Path::new(path))
    }
}

fn experiment(kind: ExperimentKind, args: ExpArgs) -> heavytail_core::Result<()> {
    let mut cfg = load(&args.config)?;
    if cfg.kind != kind {
        return Err(Error::Config {
            pointer: "/kind".into(),
            message: format!("config is for `{}` but the `{}` subcommand was used", name(cfg.kind), name(kind)),
        });
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    // the output location is not echoed so a summary reruns byte-identically elsewhere
    let out = args.out.unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    std::fs::create_dir_all(&out).map_err(|e| Error::Io {
        path: out.display().to_string(),
        source: e,
    })?;
    let outcome = with_threads(args.threads, || execute(&cfg, &out))??;
    println!("{}", outcome.headline);
    for f in &outcome.files {
        if !f.starts_with(out.join("trajectories")) {
            println!("wrote {}", f.display());
        }
    }
    Ok(())
}

fn plot(args: PlotArgs) -> heavytail_core::Result<()> {
    let dir = match args.out {
        Some(d) => d,
        None => args.config.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let svg = dir.join("loglog.svg");
    plot_summary(&args.config, &svg)?;
    println!("wrote {}", svg.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors share code 1 with config errors; 2 is reserved for schedule constraints
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(a) => experiment(ExperimentKind::Run, a),
        Command::Sweep(a) => experiment(ExperimentKind::Sweep, a),
        Command::Conclab(a) => experiment(ExperimentKind::Conclab, a),
        Command::Gengap(a) => experiment(ExperimentKind::Gengap, a),
        Command::Contrast(a) => experiment(ExperimentKind::Contrast, a),
        Command::Plot(a) => plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
