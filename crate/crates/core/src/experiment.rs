//! End-to-end experiment plumbing shared by the command line and the
//! acceptance suite: corpus preparation, baseline selection, CNN runs, the
//! training-fraction and transfer studies, and the reader study.

use std::collections::{BTreeMap, HashMap};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::{self, BaselineError, BaselineModel, FeatureSet, TrainOptions, Variant};
use crate::cnn::{
    self, AugmentationPolicy, CnnError, CnnTrainOptions, MultiColumnConfig, MultiColumnNet,
    TrainedCnn, OUTPUT_LAYER,
};
use crate::corpus::{
    apply_exclusion, temporal_split, CorpusError, Manifest, Partition, SplitAssignment,
    SplitFractions,
};
use crate::dataset::LabeledViews;
use crate::evalkit::{self, EvalError, EvalReport, KappaMatrix, ReaderRanking};
use crate::numerics::ParamSet;
use crate::seeding::{self, stream};
use crate::synthgen::{SynthError, SyntheticExam};
use crate::types::ViewImage;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Cnn(#[from] CnnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("exam {0} has no image data")]
    MissingImages(String),
    #[error("exam {0} has no extracted BI-RADS category")]
    MissingBirads(String),
    #[error("training fraction {0} outside (0, 1]")]
    Fraction(f64),
    #[error("rankings missing for exams: {}", .0.join(", "))]
    MissingRankings(Vec<String>),
    #[error("{0}")]
    Study(String),
}

/// Exams with labels extracted from their reports, exclusions applied and a
/// temporal split computed.
#[derive(Debug, Clone)]
pub struct PreparedCorpus {
    views: HashMap<String, [ViewImage; 4]>,
    manifest: Manifest,
    excluded: usize,
    split: SplitAssignment,
}

impl PreparedCorpus {
    pub fn from_exams(
        exams: Vec<SyntheticExam>,
        fractions: SplitFractions,
    ) -> Result<Self, ExperimentError> {
        let manifest = Manifest::from_exams(&exams)?;
        let views = exams.into_iter().map(|e| (e.exam_id, e.views)).collect();
        Self::from_parts(manifest, views, fractions)
    }

    pub fn from_parts(
        manifest: Manifest,
        views: HashMap<String, [ViewImage; 4]>,
        fractions: SplitFractions,
    ) -> Result<Self, ExperimentError> {
        let (manifest, excluded) = apply_exclusion(&manifest)?;
        let split = temporal_split(&manifest, fractions)?;
        Self::with_split(manifest, views, excluded, split)
    }

    /// Uses an existing split; `manifest` must already have exclusions applied.
    pub fn with_split(
        mut manifest: Manifest,
        views: HashMap<String, [ViewImage; 4]>,
        excluded: usize,
        split: SplitAssignment,
    ) -> Result<Self, ExperimentError> {
        manifest.extract_labels()?;
        for r in manifest.records() {
            if !views.contains_key(&r.exam_id) {
                return Err(ExperimentError::MissingImages(r.exam_id.clone()));
            }
        }
        Ok(Self {
            views,
            manifest,
            excluded,
            split,
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn excluded(&self) -> usize {
        self.excluded
    }

    pub fn split(&self) -> &SplitAssignment {
        &self.split
    }

    pub fn exam_ids(&self, partition: Partition) -> Vec<String> {
        self.split.exam_ids(&self.manifest, partition)
    }

    pub fn views(&self, exam_id: &str) -> Option<&[ViewImage; 4]> {
        self.views.get(exam_id)
    }

    pub fn density_label(&self, exam_id: &str) -> Option<usize> {
        self.manifest.density(exam_id).map(|d| d.index())
    }

    /// Density-labelled samples for the given exams, in order.
    pub fn density_samples(&self, ids: &[String]) -> Vec<LabeledViews<'_>> {
        ids.iter()
            .map(|id| {
                let label = self
                    .density_label(id)
                    .expect("exclusion keeps labelled exams");
                LabeledViews::new(&self.views[id], label)
            })
            .collect()
    }

    pub fn density_set(&self, partition: Partition) -> Vec<LabeledViews<'_>> {
        self.density_samples(&self.exam_ids(partition))
    }

    pub fn birads_set(
        &self,
        partition: Partition,
    ) -> Result<Vec<LabeledViews<'_>>, ExperimentError> {
        self.exam_ids(partition)
            .into_iter()
            .map(|id| {
                let b = self
                    .manifest
                    .labels(&id)
                    .and_then(|l| l.birads)
                    .ok_or_else(|| ExperimentError::MissingBirads(id.clone()))?;
                Ok(LabeledViews::new(&self.views[&id], b.index()))
            })
            .collect()
    }
}

/// A seeded subset of `fraction` of the items (at least one), in the
/// original order.
pub fn subsample<T: Clone>(
    items: &[T],
    fraction: f64,
    seed: u64,
) -> Result<Vec<T>, ExperimentError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(ExperimentError::Fraction(fraction));
    }
    if fraction == 1.0 {
        return Ok(items.to_vec());
    }
    let k = ((items.len() as f64 * fraction + 1e-9).floor() as usize).clamp(1, items.len().max(1));
    let mut rng = stream(seed, &[seeding::SUBSAMPLE, 0]);
    let mut idx = sample(&mut rng, items.len(), k.min(items.len())).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| items[i].clone()).collect())
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    })
}

/// The best histogram baseline over both variants and all bin candidates,
/// chosen by validation accuracy (the linear variant wins ties).
#[derive(Debug, Clone)]
pub struct BaselineSelection {
    pub variant: Variant,
    pub bins: usize,
    pub validation_accuracy: f64,
    pub model: BaselineModel,
    /// `(variant, bins, validation accuracy)` for every candidate.
    pub scores: Vec<(Variant, usize, f64)>,
}

pub fn select_baseline(
    train: &[LabeledViews<'_>],
    validation: &[LabeledViews<'_>],
    candidates: &[usize],
    options: &TrainOptions,
) -> Result<BaselineSelection, ExperimentError> {
    let mut best: Option<BaselineSelection> = None;
    let mut scores = Vec::new();
    for variant in [Variant::Linear, Variant::Hidden100] {
        let search = baseline::tune_bins(variant, candidates, train, validation, options)?;
        scores.extend(search.scores.iter().map(|&(b, a)| (variant, b, a)));
        let acc = search
            .scores
            .iter()
            .find(|(b, _)| *b == search.best_bins)
            .map(|s| s.1)
            .unwrap_or(0.0);
        if best.as_ref().is_none_or(|b| acc > b.validation_accuracy) {
            best = Some(BaselineSelection {
                variant,
                bins: search.best_bins,
                validation_accuracy: acc,
                model: search.best.model,
                scores: Vec::new(),
            });
        }
    }
    let mut best = best.expect("two variants tried");
    best.scores = scores;
    Ok(best)
}

pub fn baseline_probabilities(
    model: &BaselineModel,
    data: &[LabeledViews<'_>],
) -> Result<Vec<Vec<f64>>, ExperimentError> {
    let features = FeatureSet::extract(data, model.bins)?;
    features
        .features
        .iter()
        .map(|f| Ok(model.predict_features(f)?.to_vec()))
        .collect()
}

pub fn cnn_probabilities(
    net: &MultiColumnNet,
    params: &ParamSet,
    data: &[LabeledViews<'_>],
) -> Result<Vec<Vec<f64>>, ExperimentError> {
    data.iter()
        .map(|s| Ok(net.forward(params, s.views)?))
        .collect()
}

pub fn labels_of(data: &[LabeledViews<'_>]) -> Vec<usize> {
    data.iter().map(|s| s.label).collect()
}

/// Top-1 accuracy of precomputed probabilities.
pub fn top1(probs: &[Vec<f64>], truths: &[usize]) -> Result<f64, ExperimentError> {
    Ok(evalkit::top_k_accuracy(probs, truths, 1)?)
}

/// One CNN trained on (a fraction of) the density training split and
/// evaluated on the test split.
#[derive(Debug, Clone)]
pub struct CnnRun {
    pub seed: u64,
    pub fraction: f64,
    pub train_size: usize,
    pub trained: TrainedCnn,
    pub test_probabilities: Vec<Vec<f64>>,
    pub test_labels: Vec<usize>,
}

impl CnnRun {
    pub fn report(&self) -> Result<EvalReport, ExperimentError> {
        Ok(EvalReport::compute(
            &self.test_probabilities,
            &self.test_labels,
        )?)
    }

    pub fn top1(&self) -> Result<f64, ExperimentError> {
        top1(&self.test_probabilities, &self.test_labels)
    }
}

/// Trains a density CNN from `initial` (a fresh Glorot draw when `None`).
pub fn run_cnn(
    corpus: &PreparedCorpus,
    config: &MultiColumnConfig,
    fraction: f64,
    initial: Option<ParamSet>,
    policy: &AugmentationPolicy,
    options: &CnnTrainOptions,
) -> Result<CnnRun, ExperimentError> {
    let train_ids = subsample(&corpus.exam_ids(Partition::Train), fraction, options.seed)?;
    let train = corpus.density_samples(&train_ids);
    let validation = corpus.density_set(Partition::Validation);
    let test = corpus.density_set(Partition::Test);
    let net = MultiColumnNet::new(config.clone())?;
    let trained = match initial {
        Some(p) => cnn::train_cnn_from(&net, p, &train, &validation, policy, options)?,
        None => cnn::train_cnn(config, &train, &validation, policy, options)?,
    };
    let test_probabilities = cnn_probabilities(&net, &trained.params, &test)?;
    Ok(CnnRun {
        seed: options.seed,
        fraction,
        train_size: train.len(),
        trained,
        test_probabilities,
        test_labels: labels_of(&test),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaleRow {
    pub fraction: f64,
    pub seed: u64,
    pub train_size: usize,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaleStudy {
    pub rows: Vec<ScaleRow>,
    /// `(fraction, median macAUC)` in the order the fractions were given.
    pub median_mac_auc: Vec<(f64, f64)>,
}

impl ScaleStudy {
    pub fn from_runs(fractions: &[f64], runs: &[CnnRun]) -> Result<Self, ExperimentError> {
        let mut rows = Vec::with_capacity(runs.len());
        for r in runs {
            rows.push(ScaleRow {
                fraction: r.fraction,
                seed: r.seed,
                train_size: r.train_size,
                report: r.report()?,
            });
        }
        let median_mac_auc = fractions
            .iter()
            .map(|&f| {
                let macs: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.fraction == f)
                    .map(|r| r.report.mac_auc)
                    .collect();
                (f, median(&macs).unwrap_or(f64::NAN))
            })
            .collect();
        Ok(Self {
            rows,
            median_mac_auc,
        })
    }

    pub fn is_non_decreasing(&self) -> bool {
        self.median_mac_auc.windows(2).all(|w| w[0].1 <= w[1].1)
    }
}

/// Which parameters a transfer initialisation copied and whether every
/// copied tensor is bit-identical to its source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitAudit {
    pub copied: Vec<String>,
    pub reinitialized: Vec<String>,
    pub all_copies_bit_identical: bool,
}

pub fn audit_transfer(pretrained: &ParamSet, initial: &ParamSet) -> InitAudit {
    let mut copied = Vec::new();
    let mut reinitialized = Vec::new();
    let mut identical = true;
    for (name, t) in initial.iter() {
        if name.starts_with(OUTPUT_LAYER) {
            reinitialized.push(name.to_string());
            continue;
        }
        copied.push(name.to_string());
        let same = pretrained.get(name).is_some_and(|s| {
            s.shape() == t.shape()
                && s.data()
                    .iter()
                    .zip(t.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits())
        });
        identical &= same;
    }
    InitAudit {
        copied,
        reinitialized,
        all_copies_bit_identical: identical,
    }
}

/// Pretrains the 3-way BI-RADS model on the training split.
pub fn pretrain_birads(
    corpus: &PreparedCorpus,
    config: &MultiColumnConfig,
    policy: &AugmentationPolicy,
    options: &CnnTrainOptions,
) -> Result<TrainedCnn, ExperimentError> {
    let train = corpus.birads_set(Partition::Train)?;
    let validation = corpus.birads_set(Partition::Validation)?;
    Ok(cnn::train_cnn(
        &config.with_classes(3),
        &train,
        &validation,
        policy,
        options,
    )?)
}

/// Transfer-initialised parameters for `seed`; the output layer draws from
/// the same stream a scratch run with that seed initialises from.
pub fn transfer_initial(
    pretrained: &ParamSet,
    config: &MultiColumnConfig,
    seed: u64,
) -> Result<(ParamSet, InitAudit), ExperimentError> {
    let mut rng = stream(seed, &[seeding::INIT]);
    let init = cnn::transfer_init(pretrained, &config.with_classes(3), config, &mut rng)?;
    let audit = audit_transfer(pretrained, &init);
    Ok((init, audit))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferArm {
    pub seed: u64,
    pub validation_history: Vec<f64>,
    pub train_loss: Vec<f64>,
    pub epochs_to_threshold: Option<usize>,
    pub test_report: EvalReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferStudy {
    pub pretrain_validation_history: Vec<f64>,
    /// Highest validation accuracy reached by every run of both arms.
    pub threshold: f64,
    pub scratch: Vec<TransferArm>,
    pub transfer: Vec<TransferArm>,
    pub audits: Vec<InitAudit>,
    pub scratch_median_epochs: f64,
    pub transfer_median_epochs: f64,
}

impl TransferStudy {
    pub fn from_runs(
        pretrain: &TrainedCnn,
        scratch: &[CnnRun],
        transfer: &[CnnRun],
        audits: Vec<InitAudit>,
    ) -> Result<Self, ExperimentError> {
        if scratch.is_empty() || transfer.is_empty() {
            return Err(ExperimentError::Study(
                "both arms need at least one run".into(),
            ));
        }
        let threshold = scratch
            .iter()
            .chain(transfer)
            .map(|r| {
                r.trained
                    .validation_history()
                    .into_iter()
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .fold(f64::INFINITY, f64::min);
        let arm = |runs: &[CnnRun]| -> Result<Vec<TransferArm>, ExperimentError> {
            runs.iter()
                .map(|r| {
                    let history = r.trained.validation_history();
                    Ok(TransferArm {
                        seed: r.seed,
                        epochs_to_threshold: cnn::epochs_to_threshold(&history, threshold),
                        validation_history: history,
                        train_loss: r.trained.history.iter().map(|e| e.train_loss).collect(),
                        test_report: r.report()?,
                    })
                })
                .collect()
        };
        let scratch = arm(scratch)?;
        let transfer = arm(transfer)?;
        let med = |a: &[TransferArm]| {
            let v: Vec<f64> = a
                .iter()
                .map(|r| r.epochs_to_threshold.map_or(f64::INFINITY, |e| e as f64))
                .collect();
            median(&v).expect("non-empty arm")
        };
        Ok(Self {
            pretrain_validation_history: pretrain.validation_history(),
            threshold,
            scratch_median_epochs: med(&scratch),
            transfer_median_epochs: med(&transfer),
            scratch,
            transfer,
            audits,
        })
    }
}

/// How a simulated reader departs from the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReaderNoise {
    /// Always ranks the true class first.
    Exact,
    /// With probability `rate`, swaps to the other class of the same
    /// superclass.
    WithinSuperclass { rate: f64 },
    /// With probability `rate`, picks a uniformly random other class.
    Uniform { rate: f64 },
}

/// Rankings by one simulated reader. The top choice follows `noise`; the
/// other classes follow by distance from the top choice, lower index first.
pub fn simulate_reader<R: Rng + ?Sized>(
    reader_id: &str,
    exams: &[(String, usize)],
    noise: ReaderNoise,
    rng: &mut R,
) -> Result<Vec<ReaderRanking>, ExperimentError> {
    exams
        .iter()
        .map(|(exam_id, truth)| {
            let top = match noise {
                ReaderNoise::Exact => *truth,
                ReaderNoise::WithinSuperclass { rate } => {
                    if rng.random_bool(rate) {
                        *truth ^ 1
                    } else {
                        *truth
                    }
                }
                ReaderNoise::Uniform { rate } => {
                    if rng.random_bool(rate) {
                        (*truth + rng.random_range(1..4)) % 4
                    } else {
                        *truth
                    }
                }
            };
            let mut rest: Vec<usize> = (0..4).filter(|&c| c != top).collect();
            rest.sort_by_key(|&c| (c.abs_diff(top), c));
            let ranking = [top, rest[0], rest[1], rest[2]];
            Ok(ReaderRanking::new(reader_id, exam_id.clone(), ranking)?)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedReader {
    pub id: String,
    pub noise: ReaderNoise,
}

/// Three simulated readers, S, R and A.
pub fn default_readers() -> Vec<SimulatedReader> {
    vec![
        SimulatedReader {
            id: "S".into(),
            noise: ReaderNoise::WithinSuperclass { rate: 0.25 },
        },
        SimulatedReader {
            id: "R".into(),
            noise: ReaderNoise::WithinSuperclass { rate: 0.35 },
        },
        SimulatedReader {
            id: "A".into(),
            noise: ReaderNoise::Uniform { rate: 0.2 },
        },
    ]
}

/// Rankings of every reader over `exams`, each reader on its own stream.
pub fn simulate_readers(
    exams: &[(String, usize)],
    readers: &[SimulatedReader],
    seed: u64,
) -> Result<Vec<ReaderRanking>, ExperimentError> {
    let mut all = Vec::new();
    for (i, reader) in readers.iter().enumerate() {
        let mut rng = stream(seed, &[seeding::SUBSAMPLE, 2, i as u64]);
        all.extend(simulate_reader(&reader.id, exams, reader.noise, &mut rng)?);
    }
    Ok(all)
}

/// Exams sampled for a reader study, in exam-id order.
pub fn sample_reader_exams(test_ids: &[String], n: usize, seed: u64) -> Vec<String> {
    let mut rng = stream(seed, &[seeding::SUBSAMPLE, 1]);
    let mut idx = sample(&mut rng, test_ids.len(), n.min(test_ids.len())).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| test_ids[i].clone()).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReaderStudy {
    pub exam_ids: Vec<String>,
    pub four_class: KappaMatrix,
    pub two_class: KappaMatrix,
    pub human_mac_auc: f64,
    pub cnn_mac_auc: f64,
    pub baseline_mac_auc: f64,
}

/// Agreement tables over labels (L), the CNN (N), the baseline (H) and each
/// reader, plus macAUC of averaged reader one-hot votes against the models.
pub fn reader_study(
    exam_ids: &[String],
    labels: &[usize],
    cnn_probs: &[Vec<f64>],
    baseline_probs: &[Vec<f64>],
    rankings: &[ReaderRanking],
) -> Result<ReaderStudy, ExperimentError> {
    let mut by_reader: BTreeMap<&str, HashMap<&str, &ReaderRanking>> = BTreeMap::new();
    for r in rankings {
        by_reader
            .entry(r.reader_id.as_str())
            .or_default()
            .insert(r.exam_id.as_str(), r);
    }
    if by_reader.is_empty() {
        return Err(ExperimentError::Study("no reader rankings".into()));
    }
    let mut missing: Vec<String> = Vec::new();
    for per_exam in by_reader.values() {
        for id in exam_ids {
            if !per_exam.contains_key(id.as_str()) && !missing.contains(id) {
                missing.push(id.clone());
            }
        }
    }
    if !missing.is_empty() {
        missing.sort();
        return Err(ExperimentError::MissingRankings(missing));
    }
    let argmax = |p: &Vec<f64>| evalkit::ranked_classes(p)[0];
    let mut raters: Vec<(String, Vec<usize>)> = vec![
        ("L".into(), labels.to_vec()),
        ("N".into(), cnn_probs.iter().map(argmax).collect()),
        ("H".into(), baseline_probs.iter().map(argmax).collect()),
    ];
    for (reader, per_exam) in &by_reader {
        raters.push((
            reader.to_string(),
            exam_ids
                .iter()
                .map(|id| per_exam[id.as_str()].top())
                .collect(),
        ));
    }
    let four_class = evalkit::kappa_matrix(&raters, 4)?;
    let collapsed: Vec<(String, Vec<usize>)> = raters
        .iter()
        .map(|(n, v)| Ok((n.clone(), evalkit::collapse_superclass(v)?)))
        .collect::<Result<_, EvalError>>()?;
    let two_class = evalkit::kappa_matrix(&collapsed, 2)?;
    let human: Vec<Vec<f64>> = exam_ids
        .iter()
        .map(|id| {
            let votes: Vec<[usize; 4]> =
                by_reader.values().map(|m| m[id.as_str()].ranking).collect();
            Ok(evalkit::average_one_hot(&votes)?.to_vec())
        })
        .collect::<Result<_, EvalError>>()?;
    Ok(ReaderStudy {
        exam_ids: exam_ids.to_vec(),
        four_class,
        two_class,
        human_mac_auc: evalkit::mac_auc(&human, labels)?.1,
        cnn_mac_auc: evalkit::mac_auc(cnn_probs, labels)?.1,
        baseline_mac_auc: evalkit::mac_auc(baseline_probs, labels)?.1,
    })
}
