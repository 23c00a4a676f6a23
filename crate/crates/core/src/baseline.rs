//! Histogram-of-intensity baselines: per-view normalised histograms,
//! concatenated over the four views, fed to softmax regression with an
//! optional 100-unit rectifier hidden layer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{batches, LabeledViews};
use crate::numerics::{
    adam_step, cross_entropy, cross_entropy_gradient, Gradients, LayerSpec, NumericsError,
    ParamSet, Stack, Tensor,
};
use crate::seeding::{self, stream};
use crate::types::{ViewImage, ViewKind};

pub const HIDDEN_UNITS: usize = 100;
pub const CLASSES: usize = 4;
pub const BIN_CANDIDATES: [usize; 4] = [10, 20, 50, 100];

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("view {0} is missing")]
    MissingView(ViewKind),
    #[error("bin count must be at least 2, got {0}")]
    TooFewBins(usize),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("no bin candidates given")]
    NoCandidates,
    #[error("feature length {got} does not match model input {expected}")]
    FeatureLength { expected: usize, got: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramFeatures {
    pub bins: usize,
    /// `4 * bins` frequencies, one normalised segment per view.
    pub values: Vec<f64>,
}

/// Bin index of a 16-bit intensity among `bins` equal-width intervals of
/// `[0, 65536)`.
#[inline]
pub fn bin_of(pixel: u16, bins: usize) -> usize {
    pixel as usize * bins / 65536
}

pub fn view_histogram(image: &ViewImage, bins: usize) -> Vec<f64> {
    let mut counts = vec![0usize; bins];
    for &p in &image.pixels {
        counts[bin_of(p, bins)] += 1;
    }
    let n = image.pixels.len() as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

/// Histogram features in fixed L-CC, R-CC, L-MLO, R-MLO order.
pub fn extract_features(
    views: &[ViewImage],
    bins: usize,
) -> Result<HistogramFeatures, BaselineError> {
    if bins < 2 {
        return Err(BaselineError::TooFewBins(bins));
    }
    let mut values = Vec::with_capacity(4 * bins);
    for kind in ViewKind::ALL {
        let view = views
            .iter()
            .find(|v| v.view == kind)
            .ok_or(BaselineError::MissingView(kind))?;
        values.extend(view_histogram(view, bins));
    }
    Ok(HistogramFeatures { bins, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Linear,
    Hidden100,
}

impl Variant {
    pub fn stack(self, bins: usize) -> Stack {
        let inputs = 4 * bins;
        match self {
            Variant::Linear => Stack::new()
                .with(LayerSpec::fully_connected(inputs, CLASSES), Some("linear"))
                .with(LayerSpec::Softmax, None),
            Variant::Hidden100 => Stack::new()
                .with(
                    LayerSpec::fully_connected(inputs, HIDDEN_UNITS),
                    Some("hidden"),
                )
                .with(LayerSpec::Relu, None)
                .with(
                    LayerSpec::fully_connected(HIDDEN_UNITS, CLASSES),
                    Some("output"),
                )
                .with(LayerSpec::Softmax, None),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineModel {
    pub variant: Variant,
    pub bins: usize,
    pub params: ParamSet,
}

/// Sidecar stored next to the weight container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSidecar {
    pub variant: Variant,
    pub bins: usize,
}

impl BaselineModel {
    /// Glorot-initialised weights, zero biases.
    pub fn init(variant: Variant, bins: usize, seed: u64) -> Result<Self, BaselineError> {
        if bins < 2 {
            return Err(BaselineError::TooFewBins(bins));
        }
        let mut params = ParamSet::new();
        variant
            .stack(bins)
            .init_params(&mut params, &mut stream(seed, &[seeding::INIT]))?;
        Ok(Self {
            variant,
            bins,
            params,
        })
    }

    pub fn from_parts(sidecar: &BaselineSidecar, params: ParamSet) -> Result<Self, BaselineError> {
        let model = Self {
            variant: sidecar.variant,
            bins: sidecar.bins,
            params,
        };
        for (name, shape) in model.stack().param_shapes() {
            let t = model.params.require(&name)?;
            if t.shape() != shape.as_slice() {
                return Err(NumericsError::GradientShape {
                    name,
                    expected: shape,
                    got: t.shape().to_vec(),
                }
                .into());
            }
        }
        Ok(model)
    }

    pub fn sidecar(&self) -> BaselineSidecar {
        BaselineSidecar {
            variant: self.variant,
            bins: self.bins,
        }
    }

    pub fn stack(&self) -> Stack {
        self.variant.stack(self.bins)
    }

    pub fn predict_features(
        &self,
        features: &HistogramFeatures,
    ) -> Result<[f64; CLASSES], BaselineError> {
        if features.values.len() != 4 * self.bins {
            return Err(BaselineError::FeatureLength {
                expected: 4 * self.bins,
                got: features.values.len(),
            });
        }
        let out = self
            .stack()
            .forward(&self.params, Tensor::vector(features.values.clone()))?;
        Ok(out.data().try_into().expect("four outputs"))
    }

    /// Class probabilities for one exam.
    pub fn predict(&self, views: &[ViewImage]) -> Result<[f64; CLASSES], BaselineError> {
        self.predict_features(&extract_features(views, self.bins)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub train_loss: f64,
    pub validation_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedBaseline {
    pub model: BaselineModel,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch of the returned snapshot; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
}

impl TrainedBaseline {
    pub fn best_validation_accuracy(&self) -> Option<f64> {
        self.best_epoch
            .map(|e| self.history[e - 1].validation_accuracy)
    }
}

/// Precomputed features and labels.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub features: Vec<HistogramFeatures>,
    pub labels: Vec<usize>,
}

impl FeatureSet {
    pub fn extract(samples: &[LabeledViews<'_>], bins: usize) -> Result<Self, BaselineError> {
        let features = samples
            .iter()
            .map(|s| extract_features(s.views, bins))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            features,
            labels: samples.iter().map(|s| s.label).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn accuracy(model: &BaselineModel, data: &FeatureSet) -> Result<f64, BaselineError> {
    let mut correct = 0usize;
    for (f, &y) in data.features.iter().zip(&data.labels) {
        let p = Tensor::vector(model.predict_features(f)?.to_vec());
        correct += usize::from(p.argmax() == y);
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Adam on mean cross-entropy; returns the snapshot with the best
/// validation accuracy (earliest on ties).
pub fn train_baseline_features(
    variant: Variant,
    bins: usize,
    train: &FeatureSet,
    validation: &FeatureSet,
    options: &TrainOptions,
) -> Result<TrainedBaseline, BaselineError> {
    if train.is_empty() {
        return Err(BaselineError::EmptySplit("training"));
    }
    if validation.is_empty() {
        return Err(BaselineError::EmptySplit("validation"));
    }
    let mut model = BaselineModel::init(variant, bins, options.seed)?;
    let stack = model.stack();
    let mut best = model.clone();
    let mut best_epoch = None;
    let mut best_acc = f64::NEG_INFINITY;
    let mut history = Vec::with_capacity(options.epochs);
    let mut shuffle_rng = stream(options.seed, &[seeding::SHUFFLE]);
    for epoch in 1..=options.epochs {
        let mut loss_sum = 0.0;
        for batch in batches(train.len(), options.batch_size, &mut shuffle_rng) {
            let mut grads = Gradients::new();
            for &i in &batch {
                let acts = stack.forward_cached(
                    &model.params,
                    Tensor::vector(train.features[i].values.clone()),
                )?;
                let probs = acts.last().unwrap();
                loss_sum += cross_entropy(probs, train.labels[i])?;
                let g = cross_entropy_gradient(probs, train.labels[i])?;
                stack.backward(&model.params, &acts, g, &mut grads, false)?;
            }
            let scale = 1.0 / batch.len() as f64;
            grads.values_mut().for_each(|g| g.scale(scale));
            adam_step(&mut model.params, &grads, options.learning_rate)?;
        }
        let acc = accuracy(&model, validation)?;
        history.push(EpochRecord {
            train_loss: loss_sum / train.len() as f64,
            validation_accuracy: acc,
        });
        if acc > best_acc {
            best_acc = acc;
            best = model.clone();
            best_epoch = Some(epoch);
        }
    }
    best.params = best.params.without_optimizer_state();
    Ok(TrainedBaseline {
        model: best,
        history,
        best_epoch,
    })
}

pub fn train_baseline(
    variant: Variant,
    train: &[LabeledViews<'_>],
    validation: &[LabeledViews<'_>],
    bins: usize,
    options: &TrainOptions,
) -> Result<TrainedBaseline, BaselineError> {
    if train.is_empty() {
        return Err(BaselineError::EmptySplit("training"));
    }
    if validation.is_empty() {
        return Err(BaselineError::EmptySplit("validation"));
    }
    let tr = FeatureSet::extract(train, bins)?;
    let va = FeatureSet::extract(validation, bins)?;
    train_baseline_features(variant, bins, &tr, &va, options)
}

#[derive(Debug, Clone)]
pub struct BinSearch {
    pub best_bins: usize,
    /// `(bins, best validation accuracy)` per candidate, in input order.
    pub scores: Vec<(usize, f64)>,
    pub best: TrainedBaseline,
}

/// Trains one model per bin count with a shared seed and keeps the one with
/// the highest validation accuracy (smallest bin count on ties).
pub fn tune_bins(
    variant: Variant,
    candidates: &[usize],
    train: &[LabeledViews<'_>],
    validation: &[LabeledViews<'_>],
    options: &TrainOptions,
) -> Result<BinSearch, BaselineError> {
    if candidates.is_empty() {
        return Err(BaselineError::NoCandidates);
    }
    let mut scores = Vec::with_capacity(candidates.len());
    let mut best: Option<(usize, f64, TrainedBaseline)> = None;
    for &bins in candidates {
        let trained = train_baseline(variant, train, validation, bins, options)?;
        let acc = match trained.best_validation_accuracy() {
            Some(a) => a,
            None => {
                let va = FeatureSet::extract(validation, bins)?;
                accuracy(&trained.model, &va)?
            }
        };
        scores.push((bins, acc));
        let better = match &best {
            None => true,
            Some((b, a, _)) => acc > *a || (acc == *a && bins < *b),
        };
        if better {
            best = Some((bins, acc, trained));
        }
    }
    let (best_bins, _, best) = best.expect("at least one candidate");
    Ok(BinSearch {
        best_bins,
        scores,
        best,
    })
}
