use std::path::{Path, PathBuf};

use density_core::baseline::{self, TrainOptions};
use density_core::cnn::{CnnSidecar, MultiColumnConfig, TrainedCnn};
use density_core::corpus::{
    apply_exclusion, save_view, temporal_split, Manifest, Partition, SplitFractions, ViewPaths,
};
use density_core::evalkit::{
    self, read_rankings_csv, write_rankings_csv, write_roc_csv, EvalReport,
};
use density_core::experiment::{
    self, labels_of, run_cnn, sample_reader_exams, select_baseline,
    simulate_readers as simulate_readers_for, subsample, transfer_initial, CnnRun, ScaleStudy,
    TransferStudy,
};
use density_core::synthgen::generate_corpus_exams;
use density_core::types::ViewKind;
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::store::{self, LoadedModel, ModelSidecar};

fn split_path(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join(store::SPLIT)
}

fn load(cfg: &RunConfig) -> Result<experiment::PreparedCorpus, CliError> {
    store::load_corpus(&cfg.corpus_dir, &split_path(cfg))
}

fn print_summary<T: Serialize>(value: &T) {
    print!("{}", store::to_report_json(value));
}

#[derive(Serialize)]
struct TruthRow<'a> {
    exam_id: &'a str,
    patient_id: &'a str,
    density: u8,
    birads: u8,
    missing_density: bool,
}

pub fn generate(cfg: &RunConfig) -> Result<(), CliError> {
    let g = &cfg.generation;
    let mut phantom = g.phantom.clone();
    phantom.seed = cfg.seed;
    let exams = generate_corpus_exams(
        g.exams,
        g.min_exams_per_patient..=g.max_exams_per_patient,
        &phantom,
    )?;
    let dir = &cfg.corpus_dir;
    store::ensure_dir(&dir.join("images"))?;
    for e in &exams {
        let paths = ViewPaths::conventional(&e.exam_id);
        for v in ViewKind::ALL {
            save_view(e.view(v), &dir.join(paths.get(v)))?;
        }
    }
    let manifest = Manifest::from_exams(&exams)?;
    manifest.write_jsonl(&dir.join(store::MANIFEST))?;
    let mut truth = String::new();
    for e in &exams {
        let row = TruthRow {
            exam_id: &e.exam_id,
            patient_id: &e.patient_id,
            density: e.density.index() as u8,
            birads: e.birads.index() as u8,
            missing_density: e.missing_density,
        };
        truth.push_str(&serde_json::to_string(&row).expect("row serializes"));
        truth.push('\n');
    }
    store::write_text(&dir.join(store::TRUTH), &truth)?;
    store::write_report(
        &dir.join("generation.json"),
        &json!({ "seed": cfg.seed, "generation": g }),
    )?;
    let patients = exams
        .iter()
        .map(|e| e.patient_id.as_str())
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    print_summary(&json!({ "exams": exams.len(), "patients": patients, "corpus_dir": dir }));
    Ok(())
}

pub fn split(cfg: &RunConfig) -> Result<(), CliError> {
    let manifest_path = cfg.corpus_dir.join(store::MANIFEST);
    store::require(&manifest_path)?;
    let manifest = Manifest::read_jsonl(&manifest_path)?;
    let (kept, excluded) = apply_exclusion(&manifest)?;
    let split = temporal_split(&kept, SplitFractions(cfg.split_fractions))?;
    store::write_text(&split_path(cfg), &split.to_json())?;
    let sizes: Vec<usize> = [Partition::Train, Partition::Validation, Partition::Test]
        .iter()
        .map(|&p| split.exam_ids(&kept, p).len())
        .collect();
    print_summary(&json!({
        "excluded": excluded,
        "exams": { "train": sizes[0], "validation": sizes[1], "test": sizes[2] },
        "patients": { "train": split.train.len(), "validation": split.validation.len(), "test": split.test.len() },
    }));
    Ok(())
}

pub fn train_baseline(cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = load(cfg)?;
    let b = &cfg.baseline;
    let train_ids = subsample(
        &corpus.exam_ids(Partition::Train),
        b.training_fraction,
        cfg.seed,
    )?;
    let train = corpus.density_samples(&train_ids);
    let validation = corpus.density_set(Partition::Validation);
    let options = TrainOptions {
        learning_rate: b.learning_rate,
        epochs: b.epochs,
        batch_size: b.batch_size,
        seed: cfg.seed,
    };
    let (model, scores, validation_accuracy) = match b.variant.variants() {
        None => {
            let s = select_baseline(&train, &validation, &b.bin_candidates, &options)?;
            let scores: Vec<_> = s
                .scores
                .iter()
                .map(|(v, bins, acc)| json!({ "variant": v, "bins": bins, "validation_accuracy": acc }))
                .collect();
            (s.model, scores, s.validation_accuracy)
        }
        Some(variant) => {
            let s = baseline::tune_bins(variant, &b.bin_candidates, &train, &validation, &options)?;
            let best = s
                .scores
                .iter()
                .find(|(bins, _)| *bins == s.best_bins)
                .map_or(0.0, |x| x.1);
            let scores: Vec<_> = s
                .scores
                .iter()
                .map(|(bins, acc)| json!({ "variant": variant, "bins": bins, "validation_accuracy": acc }))
                .collect();
            (s.best.model, scores, best)
        }
    };
    let weights = cfg.out_dir.join("baseline.ntw");
    store::save_model(
        &weights,
        &model.params,
        &ModelSidecar::Baseline(model.sidecar()),
    )?;
    let summary = json!({
        "variant": model.variant,
        "bins": model.bins,
        "train_size": train.len(),
        "validation_accuracy": validation_accuracy,
        "candidates": scores,
        "weights": weights,
    });
    store::write_report(&cfg.out_dir.join("baseline_training.json"), &summary)?;
    print_summary(&summary);
    Ok(())
}

fn cnn_sidecar(
    config: &MultiColumnConfig,
    trained: &TrainedCnn,
    extra: serde_json::Value,
) -> ModelSidecar {
    ModelSidecar::Cnn(CnnSidecar {
        config: config.clone(),
        classes: config.classes,
        share_columns: config.share_columns,
        training: json!({
            "best_epoch": trained.best_epoch,
            "history": trained.history,
            "details": extra,
        }),
    })
}

pub fn train_cnn(cfg: &RunConfig, init: Option<&Path>) -> Result<(), CliError> {
    let corpus = load(cfg)?;
    let config = cfg.architecture();
    let (initial, audit) = match init {
        Some(path) => {
            let (p, a) = transfer_initial(&pretrained_params(path)?, &config, cfg.seed)?;
            (Some(p), Some(a))
        }
        None => (None, None),
    };
    let options = cfg.cnn_options(cfg.seed, cfg.cnn.epochs);
    let run = run_cnn(
        &corpus,
        &config,
        cfg.cnn.training_fraction,
        initial,
        &cfg.augmentation,
        &options,
    )?;
    let details = json!({
        "seed": cfg.seed,
        "fraction": cfg.cnn.training_fraction,
        "train_size": run.train_size,
        "learning_rate": options.learning_rate,
        "batch_size": options.batch_size,
        "epochs": options.epochs,
        "augmentation": cfg.augmentation,
        "transfer_from": init,
        "transfer_audit": audit,
    });
    let weights = cfg.out_dir.join("cnn.ntw");
    store::save_model(
        &weights,
        &run.trained.params,
        &cnn_sidecar(&config, &run.trained, details),
    )?;
    print_summary(&json!({
        "best_epoch": run.trained.best_epoch,
        "validation_history": run.trained.validation_history(),
        "weights": weights,
    }));
    Ok(())
}

pub fn pretrain_birads(cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = load(cfg)?;
    let config = cfg.architecture();
    let options = cfg.cnn_options(cfg.seed, cfg.study.pretrain_epochs);
    let trained = experiment::pretrain_birads(&corpus, &config, &cfg.augmentation, &options)?;
    let weights = cfg.out_dir.join("birads.ntw");
    let details = json!({ "seed": cfg.seed, "epochs": options.epochs, "labels": "birads" });
    store::save_model(
        &weights,
        &trained.params,
        &cnn_sidecar(&config.with_classes(3), &trained, details),
    )?;
    print_summary(&json!({
        "best_epoch": trained.best_epoch,
        "validation_history": trained.validation_history(),
        "weights": weights,
    }));
    Ok(())
}

pub fn transfer_study(cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = load(cfg)?;
    let config = cfg.architecture();
    let policy = &cfg.augmentation;
    let pre = experiment::pretrain_birads(
        &corpus,
        &config,
        policy,
        &cfg.cnn_options(cfg.seed, cfg.study.pretrain_epochs),
    )?;
    let mut scratch = Vec::new();
    let mut transfer = Vec::new();
    let mut audits = Vec::new();
    for &seed in &cfg.study.seeds {
        scratch.push(run_cnn(
            &corpus,
            &config,
            1.0,
            None,
            policy,
            &cfg.cnn_options(seed, cfg.study.scratch_epochs),
        )?);
        let (init, audit) = transfer_initial(&pre.params, &config, seed)?;
        audits.push(audit);
        transfer.push(run_cnn(
            &corpus,
            &config,
            1.0,
            Some(init),
            policy,
            &cfg.cnn_options(seed, cfg.study.transfer_epochs),
        )?);
    }
    let study = TransferStudy::from_runs(&pre, &scratch, &transfer, audits)?;
    store::write_report(&cfg.out_dir.join("transfer_study.json"), &study)?;
    print_summary(&json!({
        "threshold": study.threshold,
        "scratch_median_epochs": study.scratch_median_epochs,
        "transfer_median_epochs": study.transfer_median_epochs,
        "all_copies_bit_identical": study.audits.iter().all(|a| a.all_copies_bit_identical),
    }));
    Ok(())
}

fn model_path(cfg: &RunConfig, model: Option<&Path>) -> PathBuf {
    model.map_or_else(|| cfg.out_dir.join("cnn.ntw"), Path::to_path_buf)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned())
}

fn partition_name(p: Partition) -> &'static str {
    match p {
        Partition::Train => "train",
        Partition::Validation => "validation",
        Partition::Test => "test",
    }
}

fn evaluate(
    cfg: &RunConfig,
    model: Option<&Path>,
    partition: Partition,
) -> Result<(PathBuf, Vec<Vec<f64>>, Vec<usize>), CliError> {
    let path = model_path(cfg, model);
    let loaded = store::load_model(&path)?;
    if loaded.classes() != 4 {
        return Err(CliError::Config(format!(
            "{} predicts {} classes; density evaluation needs 4",
            path.display(),
            loaded.classes()
        )));
    }
    let corpus = load(cfg)?;
    let data = corpus.density_set(partition);
    let probs = loaded.probabilities(&data)?;
    Ok((path, probs, labels_of(&data)))
}

pub fn eval(cfg: &RunConfig, model: Option<&Path>, partition: Partition) -> Result<(), CliError> {
    let (path, probs, truths) = evaluate(cfg, model, partition)?;
    let report = EvalReport::compute(&probs, &truths)?;
    let out = cfg.out_dir.join(format!(
        "eval_{}_{}.json",
        stem(&path),
        partition_name(partition)
    ));
    let mut text = report.to_json();
    text.push('\n');
    store::write_text(&out, &text)?;
    print!("{text}");
    Ok(())
}

pub fn roc(cfg: &RunConfig, model: Option<&Path>, partition: Partition) -> Result<(), CliError> {
    let (path, probs, truths) = evaluate(cfg, model, partition)?;
    let curves = evalkit::one_vs_rest_curves(&probs, &truths)?;
    let mut files = Vec::new();
    for (c, curve) in curves.iter().enumerate() {
        let out = cfg.out_dir.join(format!(
            "roc_{}_{}_class{c}.csv",
            stem(&path),
            partition_name(partition)
        ));
        let mut buf = Vec::new();
        write_roc_csv(&mut buf, curve)?;
        store::write_text(&out, &String::from_utf8(buf).expect("ascii csv"))?;
        files.push(json!({ "class": c, "auc": curve.auc, "path": out }));
    }
    print_summary(&json!({ "curves": files }));
    Ok(())
}

fn pretrained_params(path: &Path) -> Result<density_core::numerics::ParamSet, CliError> {
    match store::load_model(path)? {
        LoadedModel::Cnn(_, params) => Ok(params),
        LoadedModel::Baseline(_) => {
            Err(CliError::Config(format!("{} is not a CNN", path.display())))
        }
    }
}

fn scale_arm(
    cfg: &RunConfig,
    corpus: &experiment::PreparedCorpus,
    config: &MultiColumnConfig,
    pretrained: Option<&density_core::numerics::ParamSet>,
) -> Result<ScaleStudy, CliError> {
    let mut runs: Vec<CnnRun> = Vec::new();
    for &fraction in &cfg.study.fractions {
        for &seed in &cfg.study.seeds {
            let (initial, epochs) = match pretrained {
                Some(p) => (
                    Some(transfer_initial(p, config, seed)?.0),
                    cfg.study.transfer_epochs,
                ),
                None => (None, cfg.study.scratch_epochs),
            };
            runs.push(run_cnn(
                corpus,
                config,
                fraction,
                initial,
                &cfg.augmentation,
                &cfg.cnn_options(seed, epochs),
            )?);
        }
    }
    Ok(ScaleStudy::from_runs(&cfg.study.fractions, &runs)?)
}

pub fn scale_study(cfg: &RunConfig, init: Option<&Path>) -> Result<(), CliError> {
    let pretrained = init.map(pretrained_params).transpose()?;
    let corpus = load(cfg)?;
    let config = cfg.architecture();
    let scratch = scale_arm(cfg, &corpus, &config, None)?;
    let transfer = pretrained
        .as_ref()
        .map(|p| scale_arm(cfg, &corpus, &config, Some(p)))
        .transpose()?;
    let report = json!({ "scratch": scratch, "transfer": transfer, "transfer_from": init });
    store::write_report(&cfg.out_dir.join("scale_study.json"), &report)?;
    print_summary(&json!({
        "scratch": { "median_mac_auc": scratch.median_mac_auc, "non_decreasing": scratch.is_non_decreasing() },
        "transfer": transfer.as_ref().map(|t| json!({
            "median_mac_auc": t.median_mac_auc,
            "non_decreasing": t.is_non_decreasing(),
        })),
    }));
    Ok(())
}

fn reader_sample(cfg: &RunConfig, corpus: &experiment::PreparedCorpus) -> Vec<String> {
    sample_reader_exams(
        &corpus.exam_ids(Partition::Test),
        cfg.reader_study.sample_size,
        cfg.seed,
    )
}

pub fn reader_study(
    cfg: &RunConfig,
    rankings: &Path,
    cnn: Option<&Path>,
    baseline: Option<&Path>,
) -> Result<(), CliError> {
    store::require(rankings)?;
    let file = std::fs::File::open(rankings).map_err(|e| CliError::io(rankings, e))?;
    let rankings = read_rankings_csv(file)?;
    let corpus = load(cfg)?;
    let ids = reader_sample(cfg, &corpus);
    let data = corpus.density_samples(&ids);
    let cnn_model = store::load_model(&model_path(cfg, cnn))?;
    let baseline_path =
        baseline.map_or_else(|| cfg.out_dir.join("baseline.ntw"), Path::to_path_buf);
    let baseline_model = store::load_model(&baseline_path)?;
    let study = experiment::reader_study(
        &ids,
        &labels_of(&data),
        &cnn_model.probabilities(&data)?,
        &baseline_model.probabilities(&data)?,
        &rankings,
    )?;
    store::write_report(&cfg.out_dir.join("reader_study.json"), &study)?;
    print_summary(&json!({
        "exams": study.exam_ids.len(),
        "raters": study.four_class.raters,
        "human_mac_auc": study.human_mac_auc,
        "cnn_mac_auc": study.cnn_mac_auc,
        "baseline_mac_auc": study.baseline_mac_auc,
    }));
    Ok(())
}

pub fn simulate_readers(cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = load(cfg)?;
    let ids = reader_sample(cfg, &corpus);
    let exams: Vec<(String, usize)> = ids
        .iter()
        .map(|id| (id.clone(), corpus.density_label(id).expect("labelled exam")))
        .collect();
    let all = simulate_readers_for(&exams, &cfg.reader_study.readers, cfg.seed)?;
    let out = cfg.out_dir.join("rankings.csv");
    let mut buf = Vec::new();
    write_rankings_csv(&mut buf, &all)?;
    store::write_text(&out, &String::from_utf8(buf).expect("utf-8 csv"))?;
    print_summary(&json!({ "rankings": all.len(), "path": out }));
    Ok(())
}
