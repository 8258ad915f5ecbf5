use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use crowddet::commands::{self, Format, Report};
use crowddet::eval::Subset;
use crowddet::io::RunConfig;

#[derive(Parser)]
#[command(
    name = "crowddet",
    version,
    about = "Crowd-aware pedestrian detection: losses, PORoI, NMS and MR-2 evaluation"
)]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = OutFormat::Table)]
    format: OutFormat,
    /// Report file (output directory for `synth`); stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Table,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Log-average miss rate of detections on one subset.
    Eval {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long, default_value = "reasonable")]
        subset: Subset,
    },
    /// Miss rate at a fixed FPPI across NMS thresholds.
    NmsSweep {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long, default_value = "reasonable")]
        subset: Subset,
        /// Comma-separated; the configured list when omitted.
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
    },
    /// Finite-difference check of every loss gradient.
    Gradcheck {
        #[arg(long)]
        batches: Option<usize>,
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
    /// Seeded crowded scenes as annotation (and optionally detection) files.
    Synth {
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long)]
        with_detections: bool,
    },
    /// Baseline vs AggLoss NMS sensitivity on synthetic crowds.
    Fig2b {
        /// Comma-separated seeds; the configured list when omitted.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Part occlusion-aware pooling of one proposal from a feature file.
    PoroiDemo {
        #[arg(long)]
        features: PathBuf,
        /// x,y,w,h in image pixels.
        #[arg(long, value_delimiter = ',', num_args = 4, required = true)]
        proposal: Vec<f64>,
        #[arg(long)]
        fix_scores_one: bool,
    },
}

fn emit(report: &impl Report, format: Format, out: Option<&Path>) -> crowddet::Result<bool> {
    let text = report.render(format);
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| crowddet::Error::Io {
            path: p.to_path_buf(),
            source: e,
        })?,
        None => print!("{text}"),
    }
    Ok(report.passed())
}

fn run(cli: Cli) -> crowddet::Result<bool> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let format = match cli.format {
        OutFormat::Table => Format::Table,
        OutFormat::Json => Format::Json,
    };
    let out = cli.out.as_deref();
    match cli.command {
        Command::Eval {
            annotations,
            detections,
            subset,
        } => emit(
            &commands::cmd_eval(&cfg, &annotations, &detections, subset)?,
            format,
            out,
        ),
        Command::NmsSweep {
            annotations,
            detections,
            subset,
            thresholds,
        } => emit(
            &commands::cmd_nms_sweep(
                &cfg,
                &annotations,
                &detections,
                subset,
                thresholds.as_deref(),
            )?,
            format,
            out,
        ),
        Command::Gradcheck {
            batches,
            corrupt_gradient,
        } => emit(
            &commands::cmd_gradcheck(&cfg, cli.seed, batches, corrupt_gradient)?,
            format,
            out,
        ),
        Command::Synth {
            count,
            with_detections,
        } => {
            let dir = out.unwrap_or(Path::new("."));
            emit(
                &commands::cmd_synth(&cfg, cli.seed, count, dir, with_detections)?,
                format,
                None,
            )
        }
        Command::Fig2b { seeds } => {
            emit(&commands::cmd_fig2b(&cfg, seeds.as_deref())?, format, out)
        }
        Command::PoroiDemo {
            features,
            proposal,
            fix_scores_one,
        } => {
            let p = [proposal[0], proposal[1], proposal[2], proposal[3]];
            emit(
                &commands::cmd_poroi_demo(&cfg, &features, p, cli.seed, fix_scores_one)?,
                format,
                out,
            )
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
