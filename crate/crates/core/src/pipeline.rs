//! Batch pipeline stages behind the command-line interface: corpus synthesis,
//! preprocessing, feature extraction, training, evaluation, statistics and
//! report emission. Stage outputs are stamped with the configuration hash so
//! re-runs reuse or reproduce identical artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig, StageStamp};
use crate::edf::parse_edf;
use crate::eval::cv::{run_cv_suite, AccessLog, CvDataset, CvReport, ModelId, SuiteConfig};
use crate::eval::folds::{stratified_folds, FoldAssignment, FoldInput};
use crate::eval::powerlaw::{fit_power_law, PowerLawFit};
use crate::eval::report::{render_auc_table, write_reports_json, write_scaling_plot_data};
use crate::eval::stats::{conover_iman, fdr_adjust, kruskal_wallis};
use crate::features::bands::BandTable;
use crate::features::{
    aggregate_recording, features_from_aggregate, read_covariance_means, read_feature_table,
    write_covariance_means, write_feature_table, FeatureRow, RecordingAggregate,
};
use crate::features::riemann::riemannian_mean;
use crate::preprocess::archive::{
    read_frameset_file, read_manifest, write_frameset_file, write_manifest, ManifestEntry,
};
use crate::preprocess::{preprocess_recording, RecordingMeta, SliceOutcome};
use crate::synth::{generate_corpus, read_corpus_manifest, CorpusSpec};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Riemann(#[from] crate::features::riemann::RiemannError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Edf(#[from] crate::edf::EdfError),
    #[error(transparent)]
    Synth(#[from] crate::synth::SynthError),
    #[error(transparent)]
    Preprocess(#[from] crate::preprocess::PreprocessError),
    #[error(transparent)]
    Archive(#[from] crate::preprocess::archive::ArchiveError),
    #[error(transparent)]
    Feature(#[from] crate::features::FeatureError),
    #[error(transparent)]
    Cv(#[from] crate::eval::cv::CvError),
    #[error(transparent)]
    Stats(#[from] crate::eval::stats::StatsError),
    #[error(transparent)]
    PowerLaw(#[from] crate::eval::powerlaw::PowerLawError),
    #[error(transparent)]
    Train(#[from] crate::neural::train::TrainError),
    #[error(transparent)]
    Gbt(#[from] crate::classical::gbt::GbtError),
    #[error(transparent)]
    Forest(#[from] crate::classical::forest::ForestError),
    #[error("{0}")]
    Invalid(String),
}

/// Resolves a named corpus spec or a TOML file path.
pub fn corpus_spec(name: &str) -> Result<CorpusSpec, PipelineError> {
    match name {
        "default" | "reference" => Ok(CorpusSpec::reference()),
        "smoke" => Ok(CorpusSpec::smoke()),
        "null" => Ok(CorpusSpec::null_effect(600, 20_240_002)),
        path => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                PipelineError::Invalid(format!("corpus spec {path:?} unreadable: {e}"))
            })?;
            toml::from_str(&text)
                .map_err(|e| PipelineError::Invalid(format!("corpus spec {path}: {e}")))
        }
    }
}

pub fn synth_stage(spec: &CorpusSpec, out_dir: &Path) -> Result<usize, PipelineError> {
    let entries = generate_corpus(spec, out_dir)?;
    Ok(entries.len())
}

fn frames_dir(work: &Path) -> PathBuf {
    work.join("frames")
}

/// EDF corpus -> frame archives + manifest. Returns (kept, excluded) counts.
/// Re-runs with an unchanged configuration and corpus reuse the outputs.
pub fn preprocess_stage(
    corpus_dir: &Path,
    work_dir: &Path,
    cfg: &RunConfig,
) -> Result<(usize, usize), PipelineError> {
    std::fs::create_dir_all(work_dir)?;
    let entries = read_corpus_manifest(&corpus_dir.join("labels.jsonl"))?;
    let stamp = StageStamp {
        stage: "preprocess".into(),
        config_hash: cfg.hash(),
        input_hash: format!("{}:{}", corpus_dir.display(), entries.len()),
    };
    let manifest_path = work_dir.join("manifest.jsonl");
    if stamp.matches(work_dir) && manifest_path.exists() {
        let manifest = read_manifest(&manifest_path)?;
        return Ok((manifest.len(), entries.len() - manifest.len()));
    }

    std::fs::create_dir_all(frames_dir(work_dir))?;
    let pcfg = cfg.preprocess();
    let results: Result<Vec<Option<ManifestEntry>>, PipelineError> = entries
        .par_iter()
        .map(|entry| {
            let path = corpus_dir.join(format!("{}.edf", entry.recording_id));
            let bytes = std::fs::read(&path)?;
            let (_, raw) = parse_edf(&bytes)?;
            let label = entry
                .label_enum()
                .ok_or_else(|| PipelineError::Invalid(format!("bad label for {}", entry.recording_id)))?;
            let meta = RecordingMeta {
                recording_id: entry.recording_id.clone(),
                sex: entry
                    .sex_enum()
                    .ok_or_else(|| PipelineError::Invalid(format!("bad sex for {}", entry.recording_id)))?,
                hospital_id: entry.hospital_id.clone(),
            };
            match preprocess_recording(&raw, label, meta, &pcfg)? {
                SliceOutcome::Kept(fs) => {
                    let out = frames_dir(work_dir).join(format!("{}.frames", entry.recording_id));
                    write_frameset_file(&fs, &out)?;
                    Ok(Some(ManifestEntry::from_frameset(&fs)))
                }
                SliceOutcome::Excluded { .. } => Ok(None),
            }
        })
        .collect();
    let manifest: Vec<ManifestEntry> = results?.into_iter().flatten().collect();
    write_manifest(&manifest, &manifest_path)?;
    stamp.write(work_dir)?;
    Ok((manifest.len(), entries.len() - manifest.len()))
}

/// Frame archives -> feature table (global tangent reference) plus the
/// per-recording covariance-mean sidecar used for fold-safe re-projection.
pub fn featurize_stage(work_dir: &Path, cfg: &RunConfig) -> Result<usize, PipelineError> {
    let manifest = read_manifest(&work_dir.join("manifest.jsonl"))?;
    let stamp = StageStamp {
        stage: "featurize".into(),
        config_hash: cfg.hash(),
        input_hash: format!("{}", manifest.len()),
    };
    let features_path = work_dir.join("features.tsv");
    let means_path = work_dir.join("cov_means.bin");
    if stamp.matches(work_dir) && features_path.exists() && means_path.exists() {
        return Ok(manifest.len());
    }

    let bands = BandTable::standard();
    let aggregates: Result<Vec<(ManifestEntry, RecordingAggregate)>, PipelineError> = manifest
        .par_iter()
        .map(|entry| {
            let fs = read_frameset_file(
                &frames_dir(work_dir).join(format!("{}.frames", entry.recording_id)),
            )?;
            let agg = aggregate_recording(&fs, &bands)?;
            Ok((entry.clone(), agg))
        })
        .collect();
    let aggregates = aggregates?;

    // Global reference over the whole table; evaluation re-projects per fold.
    let means: Vec<_> = aggregates
        .iter()
        .map(|(_, a)| a.covariance_mean.clone())
        .collect();
    let reference = riemannian_mean(&means)?.mean;
    let rows: Result<Vec<FeatureRow>, PipelineError> = aggregates
        .iter()
        .map(|(entry, agg)| {
            let fv = features_from_aggregate(agg, Some(&reference))?;
            Ok(FeatureRow {
                recording_id: entry.recording_id.clone(),
                label: entry.label,
                values: fv.concat(),
            })
        })
        .collect();
    write_feature_table(&rows?, &features_path)?;
    let sidecar: Vec<(String, _)> = aggregates
        .iter()
        .map(|(e, a)| (e.recording_id.clone(), a.covariance_mean.clone()))
        .collect();
    write_covariance_means(&sidecar, &means_path)?;
    stamp.write(work_dir)?;
    Ok(aggregates.len())
}

/// Loads the work directory into an in-memory evaluation dataset.
pub fn load_dataset(work_dir: &Path, dataset_id: &str) -> Result<CvDataset, PipelineError> {
    let manifest = read_manifest(&work_dir.join("manifest.jsonl"))?;
    let feature_rows = read_feature_table(&work_dir.join("features.tsv"))?;
    let means = read_covariance_means(&work_dir.join("cov_means.bin"))?;
    let mean_by_id: BTreeMap<&str, usize> = means
        .iter()
        .enumerate()
        .map(|(i, (id, _))| (id.as_str(), i))
        .collect();
    let row_by_id: BTreeMap<&str, usize> = feature_rows
        .iter()
        .enumerate()
        .map(|(i, r)| (r.recording_id.as_str(), i))
        .collect();

    let mut recordings = Vec::with_capacity(manifest.len());
    let mut aggregates = Vec::with_capacity(manifest.len());
    for entry in &manifest {
        let fs = read_frameset_file(
            &frames_dir(work_dir).join(format!("{}.frames", entry.recording_id)),
        )?;
        let row_idx = *row_by_id.get(entry.recording_id.as_str()).ok_or_else(|| {
            PipelineError::Invalid(format!("{} missing from features.tsv", entry.recording_id))
        })?;
        let mean_idx = *mean_by_id.get(entry.recording_id.as_str()).ok_or_else(|| {
            PipelineError::Invalid(format!("{} missing from cov_means.bin", entry.recording_id))
        })?;
        let values = &feature_rows[row_idx].values;
        let band_power = values[crate::features::N_RIEMANN
            ..crate::features::N_RIEMANN + crate::features::N_POWER]
            .to_vec();
        let coherence = values[crate::features::N_RIEMANN + crate::features::N_POWER..].to_vec();
        aggregates.push(RecordingAggregate {
            band_power,
            coherence,
            covariance_mean: means[mean_idx].1.clone(),
            karcher_converged: true,
        });
        recordings.push(fs);
    }
    Ok(CvDataset {
        recordings,
        aggregates,
        dataset_id: format!("{dataset_id}-n{}", manifest.len()),
    })
}

pub fn fold_inputs_from_dataset(dataset: &CvDataset) -> Vec<FoldInput> {
    dataset
        .recordings
        .iter()
        .map(|fs| FoldInput {
            recording_id: fs.meta.recording_id.clone(),
            label: fs.label,
            sex: fs.meta.sex,
            hospital_id: fs.meta.hospital_id.clone(),
        })
        .collect()
}

/// Cross-validated evaluation of the requested models; reports land in
/// `out_dir` as JSON files.
pub fn evaluate_stage(
    work_dir: &Path,
    models: &[ModelId],
    k: usize,
    cfg: &RunConfig,
    out_dir: &Path,
) -> Result<Vec<CvReport>, PipelineError> {
    let dataset = load_dataset(work_dir, "corpus")?;
    let inputs = fold_inputs_from_dataset(&dataset);
    let folds = stratified_folds(&inputs, k, cfg.seed);
    let suite = SuiteConfig {
        models: models.to_vec(),
        train: cfg.train.clone(),
        gbt: cfg.gbt.clone(),
        gbe_members: cfg.gbe_members,
        rf: cfg.rf.clone(),
        meta: cfg.meta.clone(),
        seed: cfg.seed,
    };
    let log = AccessLog::default();
    let reports = run_cv_suite(&dataset, &folds, &suite, &log)?;
    write_reports_json(&reports, out_dir)?;
    Ok(reports)
}

/// Builds the stratified fold assignment for a work directory.
pub fn fold_assignment(work_dir: &Path, k: usize, seed: u64) -> Result<FoldAssignment, PipelineError> {
    let dataset = load_dataset(work_dir, "corpus")?;
    Ok(stratified_folds(&fold_inputs_from_dataset(&dataset), k, seed))
}

/// Trains a single model on one cross-validation step's fold split and
/// saves it: neural models as a binary checkpoint, classical models as JSON,
/// both with a manifest naming the kind, seed and source folds.
pub fn train_stage(
    work_dir: &Path,
    model: ModelId,
    step: usize,
    k: usize,
    cfg: &RunConfig,
    out: &Path,
) -> Result<String, PipelineError> {
    use crate::neural::train::{train_mil, train_single_frame};
    use crate::neural::MilKind;

    if step >= k {
        return Err(PipelineError::Invalid(format!(
            "step {step} out of range for {k} folds"
        )));
    }
    let dataset = load_dataset(work_dir, "corpus")?;
    let folds = stratified_folds(&fold_inputs_from_dataset(&dataset), k, cfg.seed);
    let test_fold = step;
    let val_fold = (step + 1) % k;
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    for (i, fs) in dataset.recordings.iter().enumerate() {
        match folds.fold_of(&fs.meta.recording_id) {
            Some(f) if f == test_fold => {}
            Some(f) if f == val_fold => val_idx.push(i),
            Some(_) => train_idx.push(i),
            None => return Err(PipelineError::Invalid("missing fold".into())),
        }
    }
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }

    let manifest = serde_json::json!({
        "kind": model.name(),
        "seed": cfg.seed,
        "config_hash": cfg.hash(),
        "source_folds": {"test": test_fold, "validation": val_fold, "k": k},
    });
    let manifest_path = out.with_extension("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).unwrap())?;

    let train_sets: Vec<&crate::preprocess::FrameSet> =
        train_idx.iter().map(|&i| &dataset.recordings[i]).collect();
    let val_sets: Vec<&crate::preprocess::FrameSet> =
        val_idx.iter().map(|&i| &dataset.recordings[i]).collect();
    let labels = |idx: &[usize]| -> Vec<u8> {
        idx.iter()
            .map(|&i| dataset.recordings[i].label.as_u8())
            .collect()
    };

    match model {
        ModelId::Rf => {
            let x: Vec<Vec<f64>> = train_idx
                .iter()
                .map(|&i| {
                    let a = &dataset.aggregates[i];
                    let mut row = a.band_power.clone();
                    row.extend_from_slice(&a.coherence);
                    row
                })
                .collect();
            let rf = crate::classical::forest::train_rf(
                &x,
                &labels(&train_idx),
                &crate::classical::forest::RfConfig {
                    seed: cfg.seed,
                    ..cfg.rf.clone()
                },
            )?;
            std::fs::write(out, serde_json::to_string(&rf).unwrap())?;
            Ok(format!("RF with {} trees saved to {}", rf.trees.len(), out.display()))
        }
        ModelId::Gbe | ModelId::Meta => {
            // META's persistent artifact is its component blend on this
            // split; the full stacking protocol lives in `evaluate`.
            let means: Vec<_> = train_idx
                .iter()
                .map(|&i| dataset.aggregates[i].covariance_mean.clone())
                .collect();
            let reference = riemannian_mean(&means)?.mean;
            let rows = |idx: &[usize]| -> Result<Vec<Vec<f64>>, PipelineError> {
                idx.iter()
                    .map(|&i| {
                        let a = &dataset.aggregates[i];
                        let mut row =
                            crate::features::riemann::tangent_project(&reference, &a.covariance_mean)?;
                        row.extend_from_slice(&a.band_power);
                        row.extend_from_slice(&a.coherence);
                        Ok(row)
                    })
                    .collect()
            };
            if model == ModelId::Meta {
                return Err(PipelineError::Invalid(
                    "META is trained inside `evaluate` via out-of-fold stacking".into(),
                ));
            }
            let x = rows(&train_idx)?;
            let xv = rows(&val_idx)?;
            let gbe = crate::classical::gbt::train_gbe(
                &x,
                &labels(&train_idx),
                &crate::classical::gbt::GbtConfig {
                    seed: cfg.seed,
                    ..cfg.gbt.clone()
                },
                (&xv, &labels(&val_idx)),
                cfg.gbe_members,
            )?;
            std::fs::write(out, serde_json::to_string(&gbe).unwrap())?;
            Ok(format!(
                "GBE with {} members saved to {}",
                gbe.members.len(),
                out.display()
            ))
        }
        ModelId::SiNet => {
            let (mut net, log) = train_single_frame(
                &train_sets,
                &val_sets,
                &crate::neural::train::TrainConfig {
                    seed: cfg.seed,
                    ..cfg.train.clone()
                },
            )?;
            save_neural_checkpoint(&mut net, "siNet", out)?;
            Ok(format!(
                "siNet best epoch {} (val AUC {:.4}) saved to {}",
                log.best_epoch,
                log.best_val_auc,
                out.display()
            ))
        }
        other => {
            let (kind, pretrain) = match other {
                ModelId::MiNetN => (MilKind::MiNet, false),
                ModelId::MiNetP => (MilKind::MiNet, true),
                ModelId::MiNetAttnN => (MilKind::MiNetAttention, false),
                ModelId::MiNetAttnP => (MilKind::MiNetAttention, true),
                ModelId::TransNetN => (MilKind::TransNet, false),
                ModelId::TransNetP => (MilKind::TransNet, true),
                _ => unreachable!("classical kinds handled above"),
            };
            let tcfg = crate::neural::train::TrainConfig {
                seed: cfg.seed,
                ..cfg.train.clone()
            };
            let mut donor = if pretrain {
                Some(train_single_frame(&train_sets, &val_sets, &tcfg)?.0)
            } else {
                None
            };
            let (mut net, log) = train_mil(kind, donor.as_mut(), &train_sets, &val_sets, &tcfg)?;
            let mut params = Vec::new();
            for (i, p) in net.as_recording_model().parameters_mut().iter().enumerate() {
                params.push((format!("p{i:03}.{}", p.name), p.value.clone()));
            }
            let refs: Vec<(String, &crate::autodiff::Tensor)> =
                params.iter().map(|(n, t)| (n.clone(), t)).collect();
            crate::autodiff::checkpoint::save(
                &serde_json::json!({"kind": other.name(), "dim": crate::neural::ENCODING_DIM}),
                &refs,
                out,
            )
            .map_err(|e| PipelineError::Invalid(e.to_string()))?;
            Ok(format!(
                "{} best epoch {} (val AUC {:.4}) saved to {}",
                other.name(),
                log.best_epoch,
                log.best_val_auc,
                out.display()
            ))
        }
    }
}

fn save_neural_checkpoint(
    net: &mut crate::neural::GeomMeanNet,
    kind: &str,
    out: &Path,
) -> Result<(), PipelineError> {
    use crate::neural::RecordingModel;
    let mut params = Vec::new();
    for (i, p) in net.parameters_mut().iter().enumerate() {
        params.push((format!("p{i:03}.{}", p.name), p.value.clone()));
    }
    let refs: Vec<(String, &crate::autodiff::Tensor)> =
        params.iter().map(|(n, t)| (n.clone(), t)).collect();
    crate::autodiff::checkpoint::save(
        &serde_json::json!({"kind": kind, "dim": crate::neural::ENCODING_DIM}),
        &refs,
        out,
    )
    .map_err(|e| PipelineError::Invalid(e.to_string()))
}

/// Kruskal-Wallis across models within each dataset plus FDR-adjusted
/// Conover-Iman pairwise p-values, rendered as text.
pub fn stats_report(reports: &[CvReport]) -> Result<String, PipelineError> {
    use std::fmt::Write as _;
    let mut datasets: Vec<String> = reports.iter().map(|r| r.dataset_id.clone()).collect();
    datasets.sort();
    datasets.dedup();
    let mut out = String::new();
    for dataset in &datasets {
        let group: Vec<&CvReport> = reports.iter().filter(|r| r.dataset_id == *dataset).collect();
        if group.len() < 2 {
            let _ = writeln!(out, "dataset {dataset}: fewer than two models, skipping");
            continue;
        }
        let samples: Vec<Vec<f64>> = group
            .iter()
            .map(|r| r.steps.iter().map(|s| s.test_auc).collect())
            .collect();
        let kw = kruskal_wallis(&samples)?;
        let _ = writeln!(
            out,
            "dataset {dataset}: Kruskal-Wallis H = {:.4}, p = {:.6}{}",
            kw.h,
            kw.p,
            if kw.all_equal { " (all values equal)" } else { "" }
        );
        let ci = conover_iman(&samples)?;
        // FDR over the upper triangle.
        let mut flat = Vec::new();
        for i in 0..group.len() {
            for j in i + 1..group.len() {
                flat.push(ci[i][j]);
            }
        }
        let adjusted = fdr_adjust(&flat)?;
        let mut adj = vec![vec![1.0; group.len()]; group.len()];
        let mut it = adjusted.iter();
        for i in 0..group.len() {
            for j in i + 1..group.len() {
                let v = *it.next().unwrap();
                adj[i][j] = v;
                adj[j][i] = v;
            }
        }
        let _ = writeln!(out, "  pairwise Conover-Iman p (FDR-adjusted):");
        let _ = write!(out, "  {:<12}", "");
        for g in &group {
            let _ = write!(out, "{:>12}", g.model_id);
        }
        out.push('\n');
        for (i, g) in group.iter().enumerate() {
            let _ = write!(out, "  {:<12}", g.model_id);
            for j in 0..group.len() {
                let _ = write!(out, "{:>12.6}", adj[i][j]);
            }
            out.push('\n');
        }
    }
    Ok(out)
}

/// Parses a scaling CSV: optional header, rows of `n,metric[,se]`.
pub fn read_scaling_csv(path: &Path) -> Result<(Vec<(f64, f64)>, Option<Vec<f64>>), PipelineError> {
    let text = std::fs::read_to_string(path)?;
    let mut points = Vec::new();
    let mut sigmas = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(|f| f.trim()).collect();
        if fields.len() < 2 {
            return Err(PipelineError::Invalid(format!("bad scaling row: {line}")));
        }
        let n: f64 = match fields[0].parse() {
            Ok(v) => v,
            // Header line.
            Err(_) if points.is_empty() => continue,
            Err(e) => return Err(PipelineError::Invalid(format!("bad size {line}: {e}"))),
        };
        let metric: f64 = fields[1]
            .parse()
            .map_err(|e| PipelineError::Invalid(format!("bad metric {line}: {e}")))?;
        points.push((n, metric));
        if fields.len() >= 3 {
            sigmas.push(fields[2].parse().map_err(|e| {
                PipelineError::Invalid(format!("bad stderr {line}: {e}"))
            })?);
        }
    }
    let sigma = if sigmas.len() == points.len() && !sigmas.is_empty() {
        Some(sigmas)
    } else {
        None
    };
    Ok((points, sigma))
}

pub fn fit_scaling_stage(
    input: &Path,
    weighted: bool,
    out: Option<&Path>,
) -> Result<PowerLawFit, PipelineError> {
    let (points, sigma) = read_scaling_csv(input)?;
    let fit = fit_power_law(&points, if weighted { sigma.as_deref() } else { None })?;
    if let Some(out) = out {
        std::fs::create_dir_all(out)?;
        std::fs::write(
            out.join("powerlaw_fit.json"),
            serde_json::to_string_pretty(&fit).expect("fit serializes"),
        )?;
        let triples: Vec<(f64, f64, f64)> = points
            .iter()
            .enumerate()
            .map(|(i, &(n, y))| (n, y, sigma.as_ref().map(|s| s[i]).unwrap_or(0.0)))
            .collect();
        write_scaling_plot_data(&triples, Some(&fit), &out.join("scaling_curve.tsv"))?;
    }
    Ok(fit)
}

/// The models-by-datasets table plus per-model scaling plot data when the
/// dataset ids carry sizes (the evaluate stage writes `<name>-n<count>`).
pub fn report_stage(reports: &[CvReport], out_dir: &Path) -> Result<String, PipelineError> {
    std::fs::create_dir_all(out_dir)?;
    let table = render_auc_table(reports);
    std::fs::write(out_dir.join("auc_table.txt"), &table)?;

    let mut models: Vec<String> = reports.iter().map(|r| r.model_id.clone()).collect();
    models.sort();
    models.dedup();
    for model in &models {
        let mut pts: Vec<(f64, f64, f64)> = reports
            .iter()
            .filter(|r| r.model_id == *model)
            .filter_map(|r| {
                let n = r
                    .dataset_id
                    .rsplit_once("-n")
                    .and_then(|(_, n)| n.parse::<f64>().ok())?;
                Some((n, 100.0 * r.mean_auc, 100.0 * r.se_auc))
            })
            .collect();
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        if pts.is_empty() {
            continue;
        }
        let fit = if pts.len() >= 4 {
            let xy: Vec<(f64, f64)> = pts.iter().map(|&(n, y, _)| (n, y)).collect();
            fit_power_law(&xy, None).ok()
        } else {
            None
        };
        write_scaling_plot_data(
            &pts,
            fit.as_ref(),
            &out_dir.join(format!("scaling_{model}.tsv")),
        )?;
    }
    Ok(table)
}
