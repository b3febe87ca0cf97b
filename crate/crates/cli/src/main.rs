//! `oce`: synthetic data, training, inference, segmentation, evaluation and
//! the expected-offset Monte-Carlo from one binary.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use oce::metrics::{format_report, Aggregation};
use oce::pipeline::{self, RunConfig};
use oce::theory::{Boundary, TheoryConfig};
use oce::Error;

#[derive(Parser)]
#[command(name = "oce", version, about = "Unsupervised cell instance segmentation with object-centric embeddings")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        images: usize,
    },
    /// Train a model on the images of a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Write dense embedding fields.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write instance masks.
    Segment {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        bandwidth: Option<f64>,
        #[arg(long)]
        shrink: Option<f64>,
        /// Also write a PGM visualization per mask.
        #[arg(long)]
        pgm: bool,
    },
    /// Score predicted masks against ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        /// Average per-image scores instead of pooling counts.
        #[arg(long)]
        per_image: bool,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search bandwidth and shrinkage on a labeled dataset.
    Sweep {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',')]
        bandwidths: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo decomposition of expected patch offsets.
    Theory {
        #[arg(long, default_value_t = 500)]
        scenes: usize,
        #[arg(long, default_value_t = 30)]
        objects: usize,
        #[arg(long, default_value_t = 511)]
        canvas: usize,
        /// Bounded canvas instead of a torus.
        #[arg(long)]
        bounded: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// synth, train, sweep, segment and eval in one output directory.
    Chain {
        #[arg(long)]
        out: PathBuf,
    },
}

fn emit(text: &str, out: Option<&Path>) -> oce::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|source| Error::File { path: p.to_path_buf(), source }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> oce::Result<()> {
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.global.seed {
        cfg.seed = s;
    }
    match cli.command {
        Command::Synth { out, images } => {
            pipeline::synth_command(&cfg, images, &out)?;
        }
        Command::Train { data, out, resume, epochs } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            for e in pipeline::train_command(&cfg, &data, &out, resume.as_deref())? {
                eprintln!("epoch {}\tlr {:e}\tloss {:.6}", e.epoch, e.lr, e.mean_loss);
            }
        }
        Command::Predict { model, data, out } => pipeline::predict_command(&cfg, &model, &data, &out)?,
        Command::Segment { model, data, out, bandwidth, shrink, pgm } => {
            cfg.segment.bandwidth = bandwidth.unwrap_or(cfg.segment.bandwidth);
            cfg.segment.shrink = shrink.unwrap_or(cfg.segment.shrink);
            pipeline::segment_command(&cfg, &model, &data, &out, pgm)?;
        }
        Command::Eval { gt, pred, thresholds, per_image, out } => {
            let thresholds = thresholds.unwrap_or(cfg.data.thresholds.clone());
            let mode = if per_image { Aggregation::PerImage } else { cfg.data.aggregation };
            let (rows, seg) = pipeline::eval_command(&gt, &pred, &thresholds, mode)?;
            emit(&format_report(&rows, Some(seg)), out.as_deref())?;
        }
        Command::Sweep { model, data, bandwidths, out } => {
            if let Some(b) = bandwidths {
                cfg.data.bandwidths = b;
            }
            let result = pipeline::sweep_command(&cfg, &model, &data)?;
            emit(&pipeline::format_search(&result), out.as_deref())?;
        }
        Command::Theory { scenes, objects, canvas, bounded, out } => {
            let t = TheoryConfig {
                scenes,
                objects,
                canvas,
                boundary: if bounded { Boundary::Bounded } else { Boundary::Periodic },
                ..Default::default()
            };
            emit(&pipeline::theory_command(&t, cfg.seed)?, out.as_deref())?;
        }
        Command::Chain { out } => {
            let r = pipeline::chain(&cfg, &out)?;
            eprintln!(
                "foreground IoU {:.4}\tF1@0.5 {:.4}\tSEG {:.4}\tbandwidth {}\tshrink {}\t{:.0}s",
                r.foreground_iou, r.f1, r.seg, r.bandwidth, r.shrink, r.seconds
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
