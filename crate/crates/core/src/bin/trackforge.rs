use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use trackforge::io::report::RunReport;
use trackforge::io::sequence::{write_scene, SequenceDir};
use trackforge::io::{read_file, read_text, write_atomic};
use trackforge::pipeline::{self, OracleNoise, Predictor, TrackOptions};
use trackforge::propagation::TrackerConfig;
use trackforge::refiner::{RefinerKind, SelectionMode};
use trackforge::synth::{preset, SceneSpec};
use trackforge::{Error, Result};

#[derive(Parser)]
#[command(name = "trackforge", version, about = "Mask propagation tracker, refinement gate and metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene spec (file or bundled preset name) into a sequence directory.
    Synth { spec: String, out_dir: PathBuf },
    /// Track a sequence and write masks/ plus report.json.
    Track {
        seq: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        refiner: Option<RefinerKind>,
        /// Selector threshold; defaults to the config value.
        #[arg(long)]
        tau: Option<f64>,
        /// Take every refined mask, bypassing the gate.
        #[arg(long)]
        refine_all: bool,
        /// Output directory, default `<seq>/pred`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score predicted masks against ground truth and print metrics JSON.
    Eval {
        pred: PathBuf,
        gt: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep the long-term memory gap.
    AblateGap {
        seq: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        gaps: Vec<usize>,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep the selector threshold.
    AblateTau {
        seq: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        taus: Vec<f64>,
        #[arg(long)]
        refiner: RefinerKind,
        /// Append a row where every refined mask is taken.
        #[arg(long)]
        refine_all: bool,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export per-frame scores and mask sources of a report as CSV.
    PlotData { report: PathBuf, out_csv: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum PredictorArg {
    Vmos,
    Oracle,
}

#[derive(Args)]
struct RunArgs {
    /// Tracker config JSON; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// TFW1 weights; seeded parameters when absent.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "vmos")]
    predictor: PredictorArg,
    /// Allow ground truth past frame 0 to feed predictions.
    #[arg(long)]
    oracle: bool,
    #[arg(long, default_value_t = 0)]
    erosion: usize,
    #[arg(long, default_value_t = 0.0)]
    miss_prob: f64,
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
}

impl RunArgs {
    fn options(&self) -> Result<TrackOptions> {
        let mut config = match &self.config {
            Some(p) => TrackerConfig::from_json(&read_text(p)?)?,
            None => TrackerConfig::default(),
        };
        if let Some(s) = self.seed {
            config.seed = s;
        }
        config.validate()?;
        let predictor = match self.predictor {
            PredictorArg::Vmos => {
                let params = match &self.weights {
                    Some(p) => Some(Arc::new(trackforge::io::weights::decode_params(&config, &read_file(p)?)?)),
                    None => None,
                };
                Predictor::Vmos { params }
            }
            PredictorArg::Oracle => Predictor::Oracle(OracleNoise {
                erosion: self.erosion,
                miss_prob: self.miss_prob,
                seed: self.noise_seed,
            }),
        };
        Ok(TrackOptions {
            config,
            predictor,
            refinement: None,
        })
    }
}

fn check_oracle(opts: &TrackOptions, allowed: bool) -> Result<()> {
    if opts.uses_oracle() && !allowed {
        return Err(Error::parse(
            "arguments",
            "oracle predictor or oracle refiner reads ground truth; pass --oracle to allow it",
        ));
    }
    Ok(())
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { spec, out_dir } => {
            let path = Path::new(&spec);
            let scene = if path.is_file() {
                SceneSpec::from_json(&read_text(path)?)?
            } else {
                preset(&spec)?
            };
            let seq = write_scene(&scene, &out_dir)?;
            info!("wrote {} frames to {}", seq.len(), out_dir.display());
        }
        Command::Track {
            seq,
            run,
            refiner,
            tau,
            refine_all,
            out,
        } => {
            let sequence = SequenceDir::open(&seq)?;
            let mut opts = run.options()?;
            if let Some(kind) = refiner {
                let mode = if refine_all {
                    SelectionMode::RefineAll
                } else {
                    SelectionMode::Gated {
                        tau: tau.unwrap_or(opts.config.tau),
                    }
                };
                opts = opts.with_refinement(kind, mode);
            } else if refine_all || tau.is_some() {
                return Err(Error::parse("arguments", "--tau and --refine-all need --refiner"));
            }
            check_oracle(&opts, run.oracle)?;
            let out = out.unwrap_or_else(|| seq.join("pred"));
            let report = pipeline::track_to_dir(&sequence, &opts, &out)?;
            info!(
                "tracked {} frames in {:.2}s, {} long-term stores",
                sequence.len(),
                report.wall_time_s,
                report.memory.stores
            );
        }
        Command::Eval { pred, gt, out } => {
            let metrics = pipeline::eval_dirs(&pred, &gt)?;
            emit(&(metrics.to_json()? + "\n"), out.as_deref())?;
        }
        Command::AblateGap { seq, gaps, run, out } => {
            let sequence = SequenceDir::open(&seq)?;
            let opts = run.options()?;
            check_oracle(&opts, run.oracle)?;
            let rows = pipeline::ablate_gap(&sequence, &opts, &gaps)?;
            for r in &rows {
                info!("gap {}: {} stored entries", r.label, r.stores);
            }
            emit(&pipeline::gap_csv(&rows), out.as_deref())?;
        }
        Command::AblateTau {
            seq,
            taus,
            refiner,
            refine_all,
            run,
            out,
        } => {
            let sequence = SequenceDir::open(&seq)?;
            let opts = run.options()?;
            check_oracle(&opts.clone().with_refinement(refiner, SelectionMode::RefineAll), run.oracle)?;
            let rows = pipeline::ablate_tau(&sequence, &opts, refiner, &taus, refine_all)?;
            emit(&pipeline::tau_csv(&rows), out.as_deref())?;
        }
        Command::PlotData { report, out_csv } => {
            let report = RunReport::from_json(&read_text(&report)?)?;
            write_atomic(&out_csv, report.plot_csv()?.as_bytes())?;
        }
    }
    Ok(())
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("TRACKFORGE_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::parse("TRACKFORGE_THREADS", format!("{v:?} is not a positive integer")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match configure_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_invariant_violation() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
