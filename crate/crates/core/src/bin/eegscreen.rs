//! Command-line surface for the screening pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use eegscreen::config::{resolve_dir, ConfigError, RunConfig};
use eegscreen::eval::cv::ModelId;
use eegscreen::eval::report::read_reports_json;
use eegscreen::pipeline::{
    self, corpus_spec, evaluate_stage, featurize_stage, fit_scaling_stage, fold_assignment,
    preprocess_stage, report_stage, stats_report, synth_stage, PipelineError,
};

#[derive(Parser)]
#[command(
    name = "eegscreen",
    version,
    about = "EEG pathology screening pipeline: synthesis, preprocessing, features, models, evaluation"
)]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic EDF corpus.
    Synth {
        /// Named preset (reference | smoke | null) or a CorpusSpec TOML path.
        #[arg(long, default_value = "reference")]
        spec: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filter, resample, re-reference, frame and reject a corpus.
    Preprocess {
        /// Corpus directory holding EDF files and labels.jsonl.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        work: Option<PathBuf>,
    },
    /// Extract the handcrafted features from preprocessed frames.
    Featurize {
        #[arg(long)]
        work: Option<PathBuf>,
    },
    /// Train one model on one cross-validation step and save it.
    Train {
        #[arg(long)]
        work: Option<PathBuf>,
        #[arg(long)]
        model: String,
        /// Cross-validation step supplying the fold split.
        #[arg(long, default_value_t = 0)]
        step: usize,
        #[arg(long, default_value_t = 6)]
        folds: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validated evaluation; writes one CvReport JSON per model.
    Evaluate {
        #[arg(long)]
        work: Option<PathBuf>,
        /// Model name (repeatable) or "all".
        #[arg(long = "model", required = true)]
        models: Vec<String>,
        #[arg(long, default_value_t = 6)]
        folds: usize,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank statistics across models from saved reports.
    Stats {
        #[arg(long)]
        reports: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the saturation power law to a scaling CSV (n,metric[,se]).
    FitScaling {
        #[arg(long)]
        input: PathBuf,
        /// Weight points by the provided standard errors.
        #[arg(long, default_value_t = false)]
        weighted: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit the AUC table and scaling plot data from saved reports.
    Report {
        #[arg(long)]
        reports: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig, ConfigError> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn parse_models(names: &[String]) -> Result<Vec<ModelId>, PipelineError> {
    let mut out = Vec::new();
    for name in names {
        if name.eq_ignore_ascii_case("all") {
            out.extend([
                ModelId::Rf,
                ModelId::Gbe,
                ModelId::SiNet,
                ModelId::MiNetN,
                ModelId::MiNetP,
                ModelId::MiNetAttnN,
                ModelId::MiNetAttnP,
                ModelId::TransNetN,
                ModelId::TransNetP,
                ModelId::Meta,
            ]);
            continue;
        }
        out.push(
            ModelId::parse(name)
                .ok_or_else(|| PipelineError::Invalid(format!("unknown model {name:?}")))?,
        );
    }
    out.dedup();
    Ok(out)
}

fn run(cli: Cli) -> Result<(), AppError> {
    let cfg = load_config(&cli.config).map_err(AppError::Config)?;
    if cfg.parallelism > 0 {
        // Ignore failure: the global pool can only be set once per process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.parallelism)
            .build_global();
    }

    match cli.command {
        Command::Synth { spec, out } => {
            let spec = corpus_spec(&spec)?;
            let n = synth_stage(&spec, &out)?;
            println!("wrote {n} recordings to {}", out.display());
        }
        Command::Preprocess { corpus, work } => {
            let corpus = resolve_dir(corpus, "EEGSCREEN_INPUT_DIR", "corpus");
            let work = resolve_dir(work, "EEGSCREEN_WORK_DIR", "work");
            let (kept, excluded) = preprocess_stage(&corpus, &work, &cfg)?;
            println!("kept {kept} recordings, excluded {excluded}");
        }
        Command::Featurize { work } => {
            let work = resolve_dir(work, "EEGSCREEN_WORK_DIR", "work");
            let n = featurize_stage(&work, &cfg)?;
            println!("featurized {n} recordings");
        }
        Command::Train {
            work,
            model,
            step,
            folds,
            out,
        } => {
            let work = resolve_dir(work, "EEGSCREEN_WORK_DIR", "work");
            let model = ModelId::parse(&model)
                .ok_or_else(|| PipelineError::Invalid(format!("unknown model {model:?}")))?;
            let summary = pipeline::train_stage(&work, model, step, folds, &cfg, &out)?;
            println!("{summary}");
        }
        Command::Evaluate {
            work,
            models,
            folds,
            seed,
            out,
        } => {
            let work = resolve_dir(work, "EEGSCREEN_WORK_DIR", "work");
            let out = resolve_dir(out, "EEGSCREEN_OUT_DIR", "reports");
            let models = parse_models(&models)?;
            let mut cfg = cfg.clone();
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let reports = evaluate_stage(&work, &models, folds, &cfg, &out)?;
            for r in &reports {
                println!(
                    "{:<10} {}: AUC {:.4} +- {:.4} (SE {:.4}), ACC {:.4}",
                    r.model_id, r.dataset_id, r.mean_auc, r.sd_auc, r.se_auc, r.mean_acc
                );
            }
        }
        Command::Stats { reports, out } => {
            let loaded = read_reports_json(&reports).map_err(PipelineError::Io)?;
            let text = stats_report(&loaded)?;
            match out {
                Some(path) => std::fs::write(path, &text).map_err(PipelineError::Io)?,
                None => print!("{text}"),
            }
        }
        Command::FitScaling {
            input,
            weighted,
            out,
        } => {
            let fit = fit_scaling_stage(&input, weighted, out.as_deref())?;
            println!(
                "asymptote = {:.4} +- {:.4}, alpha = {:.4}, beta = {:.4}, R2 = {:.4}, converged = {}",
                fit.asymptote,
                fit.asymptote_se(),
                fit.alpha,
                fit.beta,
                fit.r_squared,
                fit.converged
            );
            if let Some(ndb) = fit.n_db {
                println!("n_db = {ndb:.0}");
            }
        }
        Command::Report { reports, out } => {
            let loaded = read_reports_json(&reports).map_err(PipelineError::Io)?;
            let table = report_stage(&loaded, &out)?;
            print!("{table}");
        }
    }
    let _ = fold_assignment; // referenced by tests through the library
    Ok(())
}

enum AppError {
    Config(ConfigError),
    Pipeline(PipelineError),
}

impl From<PipelineError> for AppError {
    fn from(e: PipelineError) -> AppError {
        match e {
            PipelineError::Config(c) => AppError::Config(c),
            other => AppError::Pipeline(other),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Config(e)) => {
            eprintln!("{}", serde_json::json!({"error": "config", "message": e.to_string()}));
            ExitCode::from(3)
        }
        Err(AppError::Pipeline(e)) => {
            eprintln!("{}", serde_json::json!({"error": "runtime", "message": e.to_string()}));
            ExitCode::FAILURE
        }
    }
}
