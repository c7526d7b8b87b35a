use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use biobridge::bridge::SolverKind;
use biobridge::diffusion::{EdmConfig, TrainConfig};
use biobridge::pipeline::{self, BridgeSection, PipelineConfig, Split, Stage};
use biobridge::preprocess::PreprocessConfig;
use biobridge::{Error, Modality, Result};

#[derive(Parser)]
#[command(name = "biobridge", version, about = "Unpaired EEG/fMEG translation with dual diffusion bridges")]
struct Cli {
    /// Log level filter (error, warn, info, debug).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic recordings with ground-truth burst annotations.
    Synth {
        /// Pipeline config; its `synth` section is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Only generate this modality.
        #[arg(long)]
        modality: Option<Modality>,
        /// Override a config key, e.g. `synth.eeg.n_recordings=4`.
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Filter, clean, detect bursts, segment and normalize recordings.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        modality: Modality,
        #[arg(long, default_value_t = 3.0)]
        nleo_multiplier: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one modality's denoiser.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        modality: Modality,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Base training preset: desk or paper.
        #[arg(long, default_value = "desk")]
        preset: String,
        #[arg(long)]
        lr: Option<f64>,
        /// Use the training-set standard deviation as sigma_data.
        #[arg(long)]
        estimate_sigma_data: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Translate segments between modalities through the shared latent.
    Translate {
        #[arg(long)]
        src_ckpt: PathBuf,
        #[arg(long)]
        tgt_ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Named solver preset (paper-heun, paper-ddib); overrides --solver/--steps.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, default_value = "heun")]
        solver: SolverKind,
        #[arg(long, default_value_t = 30)]
        steps: usize,
        /// Also translate back and record the reconstruction.
        #[arg(long)]
        cycle: bool,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 0)]
        max_segments: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute metric tables, spectra and summaries from traces.
    Evaluate {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the training-free solver and oracle property battery.
    VerifyOracles,
    /// Run the whole pipeline in a workspace, resuming finished stages.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Workspace directory; overrides the config.
        #[arg(long)]
        workspace: Option<PathBuf>,
        /// Comma-separated subset of stages.
        #[arg(long, value_delimiter = ',')]
        stages: Vec<Stage>,
        #[arg(long = "set")]
        set: Vec<String>,
        /// Print the resolved config and exit.
        #[arg(long)]
        print_config: bool,
    },
}

fn load_config(path: Option<&PathBuf>, set: &[String]) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p, set),
        None => PipelineConfig::from_toml_with("", set),
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            config,
            out,
            modality,
            set,
        } => {
            let cfg = load_config(config.as_ref(), &set)?.resolved();
            for m in Modality::ALL.into_iter().filter(|m| modality.is_none_or(|x| x == *m)) {
                let truths = pipeline::synth_to(cfg.synth.get(m), &out.join(m.as_str()))?;
                println!("{m}: {} recordings written to {}", truths.len(), out.join(m.as_str()).display());
            }
        }
        Command::Preprocess {
            input,
            out,
            modality,
            nleo_multiplier,
            seed,
        } => {
            let cfg = PreprocessConfig {
                nleo_multiplier,
                seed,
                ..PreprocessConfig::default()
            };
            let (prepared, report) = pipeline::preprocess_dir(&input, &out, modality, &cfg)?;
            println!(
                "{modality}: {} train / {} test segments, range [{}, {}]",
                prepared.train.len(),
                prepared.test.len(),
                prepared.stats.min,
                prepared.stats.max
            );
            if let Some(r) = report {
                println!(
                    "burst detection: precision {:.3} recall {:.3} F1 {:.3}",
                    r.precision, r.recall, r.f1
                );
            }
        }
        Command::Train {
            data,
            modality,
            iters,
            batch,
            seed,
            preset,
            lr,
            estimate_sigma_data,
            out,
        } => {
            let mut cfg = match preset.as_str() {
                "desk" => TrainConfig::desk(),
                "paper" => TrainConfig::paper(),
                other => return Err(Error::Config(format!("unknown training preset '{other}'"))),
            };
            cfg.iterations = iters.unwrap_or(cfg.iterations);
            cfg.batch_size = batch.unwrap_or(cfg.batch_size);
            cfg.optimizer.lr = lr.unwrap_or(cfg.optimizer.lr);
            cfg.seed = seed;
            cfg.estimate_sigma_data = estimate_sigma_data;
            let set = pipeline::load_segments(&data, Split::Train)?;
            if set.modality != modality {
                return Err(Error::ModalityMismatch {
                    expected: modality.to_string(),
                    got: set.modality.to_string(),
                });
            }
            let outcome = pipeline::train_model(&data, &EdmConfig::default(), &cfg, &out)?;
            println!(
                "{modality}: {} iterations, final loss {:.4}, checkpoint {}",
                outcome.trace.len(),
                outcome.checkpoint.training.final_loss,
                out.display()
            );
        }
        Command::Translate {
            src_ckpt,
            tgt_ckpt,
            data,
            preset,
            solver,
            steps,
            cycle,
            split,
            max_segments,
            out,
        } => {
            let split = match split.as_str() {
                "train" => Split::Train,
                "test" => Split::Test,
                other => return Err(Error::Config(format!("unknown split '{other}'"))),
            };
            let bridge = BridgeSection {
                preset: preset.unwrap_or_else(|| "custom".into()),
                solver,
                steps,
                cycle,
                split,
                max_segments,
                ..BridgeSection::default()
            };
            let traces = pipeline::translate_dir(&src_ckpt, &tgt_ckpt, &data, &bridge, &out)?;
            let t = &traces[0];
            println!(
                "{} segments {} -> {}; NFE forward {} reverse {} total {}",
                traces.len(),
                t.source_modality,
                t.target_modality,
                t.nfe_forward,
                t.nfe_reverse,
                t.nfe_total
            );
        }
        Command::Evaluate { traces, out } => {
            let eval = pipeline::evaluate_traces(&traces, &out, true)?;
            print!("{}", eval.table());
            print!("{}", eval.summary());
        }
        Command::VerifyOracles => {
            let report = pipeline::verify_oracles()?;
            print!("{report}");
            if !report.all_passed() {
                let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
                return Err(Error::Config(format!("oracle checks failed: {}", failed.join(", "))));
            }
        }
        Command::Run {
            config,
            workspace,
            stages,
            set,
            print_config,
        } => {
            let mut cfg = load_config(config.as_ref(), &set)?;
            if let Some(ws) = workspace {
                cfg.workspace = ws;
            }
            if !stages.is_empty() {
                cfg.stages = stages;
            }
            if print_config {
                print!("{}", cfg.to_toml()?);
                return Ok(());
            }
            let manifest = pipeline::run(&cfg)?;
            for r in &manifest.stages {
                println!("{:<11} {:?} {:>8.1} s  {}", r.stage, r.status, r.seconds, &r.output[..12.min(r.output.len())]);
            }
            let table = cfg.workspace.join(pipeline::REPORTS).join("table.tsv");
            if table.is_file() {
                print!("{}", biobridge::io::read_text(&table)?);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp_secs().init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
