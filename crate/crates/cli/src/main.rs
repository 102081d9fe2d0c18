//! `cpwt` command-line driver.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data error,
//! 4 numeric failure. `CPWT_THREADS` caps the worker pool.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cpwt_core::frameio::{load_frame, save_pgm};
use cpwt_core::metrics::MetricsReport;
use cpwt_core::pipeline::{self, PipelineConfig};
use cpwt_core::preprocess::{ca_filter_with, LaplacianMask};
use cpwt_core::synth::{write_dataset, SynthSpec};
use cpwt_core::{Error, ErrorKind, Execution};

#[derive(Parser)]
#[command(name = "cpwt", version, about = "Texture-pattern frame classification pipeline")]
struct Cli {
    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML pipeline configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Dataset root (overrides the config file).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory (overrides the config file).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// CA-filter every frame of the dataset, or one frame with --input/--output.
    Preprocess {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Single frame to filter (PGM or PNG).
        #[arg(long, requires = "output", conflicts_with_all = ["config", "data", "out"])]
        input: Option<PathBuf>,
        /// Where to write the filtered PGM.
        #[arg(long, requires = "input")]
        output: Option<PathBuf>,
        /// Nine comma-separated Laplacian mask entries, row-major, summing to 0.
        #[arg(long, allow_hyphen_values = true)]
        laplacian_mask: Option<String>,
    },
    /// Compute pattern images and histogram features from filtered frames.
    Extract {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Select histogram bins with the grey wolf optimizer.
    Select {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Pack size.
        #[arg(long)]
        wolves: Option<usize>,
        /// Optimizer iterations.
        #[arg(long)]
        iters: Option<usize>,
        /// GWO seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the CNN on masked training patterns.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// SGD learning rate.
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Mini-batch size.
        #[arg(long)]
        batch: Option<usize>,
        /// Initialization and shuffling seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Classify the test videos and write the metric reports.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Print the evaluation report.
    Report {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Run every stage in order.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Write the synthetic texture dataset.
    Generate {
        /// Dataset root to create.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        videos: usize,
        #[arg(long, default_value_t = 10)]
        frames: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
    /// Print a configuration file with every default filled in.
    Config {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

fn resolve(args: &ConfigArgs, sequential: bool) -> Result<PipelineConfig, Error> {
    let mut cfg = match (&args.config, &args.data, &args.out) {
        (Some(path), _, _) => PipelineConfig::load(path)?,
        (None, Some(data), Some(out)) => PipelineConfig::new(data, out),
        _ => return Err(Error::Config("pass --config, or both --data and --out".into())),
    };
    if let Some(data) = &args.data {
        cfg.dataset.root = data.clone();
    }
    if let Some(out) = &args.out {
        cfg.output.dir = out.clone();
    }
    if sequential {
        cfg.execution = Execution::Sequential;
    }
    Ok(cfg)
}

fn validated(cfg: PipelineConfig) -> Result<PipelineConfig, Error> {
    cfg.validate()?;
    Ok(cfg)
}

fn configure_threads() -> Result<(), Error> {
    let Ok(value) = std::env::var("CPWT_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("CPWT_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn execute(cli: Cli) -> Result<(), Error> {
    configure_threads()?;
    let seq = cli.sequential;
    match cli.command {
        Command::Preprocess {
            cfg,
            input,
            output,
            laplacian_mask,
        } => {
            let mask = laplacian_mask.as_deref().map(LaplacianMask::parse).transpose()?;
            if let (Some(input), Some(output)) = (input, output) {
                let frame = load_frame(&input)?;
                let filtered = ca_filter_with(&frame, &mask.unwrap_or_default())?;
                return save_pgm(&filtered, output);
            }
            let mut cfg = resolve(&cfg, seq)?;
            if let Some(mask) = mask {
                cfg.preprocess.laplacian_mask = mask;
            }
            let manifest = pipeline::preprocess_stage(&validated(cfg)?)?;
            println!("filtered {} videos", manifest.videos.len());
        }
        Command::Extract { cfg } => {
            let rows = pipeline::extract_stage(&validated(resolve(&cfg, seq)?)?)?;
            println!("extracted {} frames", rows.len());
        }
        Command::Select { cfg, wolves, iters, seed } => {
            let mut cfg = resolve(&cfg, seq)?;
            if let Some(w) = wolves {
                cfg.gwo.wolves = w;
            }
            if let Some(t) = iters {
                cfg.gwo.iterations = t;
            }
            if let Some(s) = seed {
                cfg.seeds.gwo = s;
            }
            let mask = pipeline::select_stage(&validated(cfg)?)?;
            println!("selected {} of {} bins", mask.count(), mask.dim);
        }
        Command::Train {
            cfg,
            lr,
            epochs,
            batch,
            seed,
        } => {
            let mut cfg = resolve(&cfg, seq)?;
            if let Some(v) = lr {
                cfg.cnn.learning_rate = v;
            }
            if let Some(v) = epochs {
                cfg.cnn.epochs = v;
            }
            if let Some(v) = batch {
                cfg.cnn.batch_size = v;
            }
            if let Some(v) = seed {
                cfg.seeds.cnn = v;
            }
            pipeline::train_stage(&validated(cfg)?)?;
            println!("model trained");
        }
        Command::Eval { cfg } => {
            let report = pipeline::eval_stage(&validated(resolve(&cfg, seq)?)?)?;
            println!("per-video accuracy {:.4} on {} videos", report.overall_accuracy, report.total);
        }
        Command::Report { cfg, format } => {
            let cfg = resolve(&cfg, seq)?;
            let path = cfg.artifacts().report_json();
            if !path.exists() {
                return Err(Error::MissingArtifact { path, stage: "eval" });
            }
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let report = MetricsReport::from_json(&text)?;
            match format {
                Format::Json => println!("{}", report.to_json()),
                Format::Csv => print!("{}", report.to_csv()),
            }
        }
        Command::Run { cfg } => {
            let cfg = resolve(&cfg, seq)?;
            let (record, report) = pipeline::run_pipeline(&cfg)?;
            println!(
                "per-video accuracy {:.4} on {} videos; train {:.1}s, test {:.1}s; artifacts in {}",
                report.overall_accuracy,
                report.total,
                record.train_seconds,
                record.test_seconds,
                cfg.output.dir.display()
            );
        }
        Command::Generate {
            out,
            videos,
            frames,
            size,
            seed,
        } => {
            if videos == 0 || frames == 0 || size < 9 {
                return Err(Error::Config("need videos >= 1, frames >= 1 and size >= 9".into()));
            }
            let spec = SynthSpec {
                videos_per_class: videos,
                frames_per_video: frames,
                size,
                seed,
                ..SynthSpec::default()
            };
            write_dataset(&out, &spec)?;
            println!("wrote {} videos to {}", 5 * videos, out.display());
        }
        Command::Config { cfg } => {
            let cfg = match (&cfg.config, &cfg.data, &cfg.out) {
                (None, None, None) => PipelineConfig::new("data", "out"),
                _ => resolve(&cfg, seq)?,
            };
            print!("{}", cfg.to_toml());
        }
    }
    Ok(())
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
