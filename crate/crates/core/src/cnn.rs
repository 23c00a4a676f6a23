//! Multi-column convolutional classifier: one column per view producing a
//! fixed-width embedding, the four embeddings concatenated in view order,
//! a rectified fully connected layer and a softmax output.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{batches, LabeledViews};
use crate::numerics::{
    adam_step, cross_entropy, cross_entropy_gradient, glorot_init, Differentiable, Gradients,
    LayerSpec, NumericsError, ParamSet, Stack, Tensor,
};
use crate::seeding::{self, stream};
use crate::types::{ViewImage, ViewKind};

/// Parameter name prefix of the output layer; the only layer re-initialised
/// by [`transfer_init`].
pub const OUTPUT_LAYER: &str = "head.output";

#[derive(Debug, Error)]
pub enum CnnError {
    #[error("column stack flattens to {actual} values, expected embedding width {expected}")]
    EmbeddingWidth { expected: usize, actual: usize },
    #[error("view {view}: expected {expected_h}x{expected_w} image, got {got_h}x{got_w}")]
    ViewShape {
        view: ViewKind,
        expected_h: usize,
        expected_w: usize,
        got_h: usize,
        got_w: usize,
    },
    #[error("view slot {slot} holds {found}, expected {expected}")]
    ViewOrder {
        slot: usize,
        expected: ViewKind,
        found: ViewKind,
    },
    #[error("configurations differ beyond the output class count")]
    IncompatibleConfigs,
    #[error("transfer shape mismatch for parameters: {}", .0.join(", "))]
    TransferMismatch(Vec<String>),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiColumnConfig {
    pub input_height: usize,
    pub input_width: usize,
    /// Per-view column, ending in the embedding layer.
    pub column: Vec<LayerSpec>,
    pub embedding_width: usize,
    pub head_hidden: usize,
    pub classes: usize,
    pub share_columns: bool,
}

impl Default for MultiColumnConfig {
    fn default() -> Self {
        Self::desk(128, 96, 4)
    }
}

impl MultiColumnConfig {
    /// conv3x3x8 → relu → pool → conv3x3x16 → relu → pool → conv3x3x32 →
    /// relu → pool → global average → fc 256, then a 1024-unit head.
    pub fn desk(input_height: usize, input_width: usize, classes: usize) -> Self {
        Self::with_widths(input_height, input_width, classes, [8, 16, 32], 256, 1024)
    }

    pub fn with_widths(
        input_height: usize,
        input_width: usize,
        classes: usize,
        channels: [usize; 3],
        embedding_width: usize,
        head_hidden: usize,
    ) -> Self {
        let mut column = Vec::new();
        let mut in_ch = 1;
        for ch in channels {
            column.push(LayerSpec::conv(in_ch, ch, 3));
            column.push(LayerSpec::Relu);
            column.push(LayerSpec::max_pool(2));
            in_ch = ch;
        }
        column.push(LayerSpec::GlobalAvgPool);
        column.push(LayerSpec::fully_connected(in_ch, embedding_width));
        Self {
            input_height,
            input_width,
            column,
            embedding_width,
            head_hidden,
            classes,
            share_columns: true,
        }
    }

    pub fn with_classes(&self, classes: usize) -> Self {
        Self {
            classes,
            ..self.clone()
        }
    }

    pub fn concatenated_width(&self) -> usize {
        4 * self.embedding_width
    }
}

/// Column and head stacks derived from a configuration.
#[derive(Debug, Clone)]
pub struct MultiColumnNet {
    config: MultiColumnConfig,
    columns: [Stack; 4],
    head: Stack,
}

impl MultiColumnNet {
    pub fn new(config: MultiColumnConfig) -> Result<Self, CnnError> {
        if config.classes < 2 || config.head_hidden == 0 || config.embedding_width == 0 {
            return Err(CnnError::InvalidConfig(
                "classes ≥ 2 and positive widths are required".into(),
            ));
        }
        let columns = std::array::from_fn(|v| {
            let mut s = Stack::new();
            for (i, layer) in config.column.iter().enumerate() {
                let prefix = (!layer.param_shapes().is_empty()).then(|| {
                    if config.share_columns {
                        format!("column.{i}")
                    } else {
                        format!("column{v}.{i}")
                    }
                });
                s.push(*layer, prefix);
            }
            s
        });
        let out = columns[0].output_shape(&[1, config.input_height, config.input_width])?;
        let flat: usize = out.iter().product();
        if flat != config.embedding_width {
            return Err(CnnError::EmbeddingWidth {
                expected: config.embedding_width,
                actual: flat,
            });
        }
        let head = Stack::new()
            .with(
                LayerSpec::fully_connected(config.concatenated_width(), config.head_hidden),
                Some("head.hidden"),
            )
            .with(LayerSpec::Relu, None)
            .with(
                LayerSpec::fully_connected(config.head_hidden, config.classes),
                Some(OUTPUT_LAYER),
            )
            .with(LayerSpec::Softmax, None);
        Ok(Self {
            config,
            columns,
            head,
        })
    }

    pub fn config(&self) -> &MultiColumnConfig {
        &self.config
    }

    /// Names and shapes of every parameter, shared ones listed once.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out: Vec<(String, Vec<usize>)> = Vec::new();
        for stack in self.columns.iter().chain(std::iter::once(&self.head)) {
            for (n, s) in stack.param_shapes() {
                if !out.iter().any(|(m, _)| *m == n) {
                    out.push((n, s));
                }
            }
        }
        out
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamSet, CnnError> {
        let mut params = ParamSet::new();
        for c in &self.columns {
            c.init_params(&mut params, rng)?;
        }
        self.head.init_params(&mut params, rng)?;
        Ok(params)
    }

    fn view_tensor(&self, slot: usize, image: &ViewImage) -> Result<Tensor, CnnError> {
        let expected = ViewKind::ALL[slot];
        if image.view != expected {
            return Err(CnnError::ViewOrder {
                slot,
                expected,
                found: image.view,
            });
        }
        let (h, w) = (self.config.input_height, self.config.input_width);
        if image.height != h || image.width != w {
            return Err(CnnError::ViewShape {
                view: image.view,
                expected_h: h,
                expected_w: w,
                got_h: image.height,
                got_w: image.width,
            });
        }
        let data = image.pixels.iter().map(|&p| p as f64 / 65535.0).collect();
        Ok(Tensor::new(vec![1, h, w], data)?)
    }

    /// Class probabilities for one exam.
    pub fn forward(&self, params: &ParamSet, views: &[ViewImage; 4]) -> Result<Vec<f64>, CnnError> {
        let inputs = self.inputs(views)?;
        self.forward_tensors(params, inputs)
    }

    pub fn inputs(&self, views: &[ViewImage; 4]) -> Result<[Tensor; 4], CnnError> {
        let v: Vec<Tensor> = views
            .iter()
            .enumerate()
            .map(|(i, img)| self.view_tensor(i, img))
            .collect::<Result<_, _>>()?;
        Ok(v.try_into().expect("four views"))
    }

    pub fn forward_tensors(
        &self,
        params: &ParamSet,
        inputs: [Tensor; 4],
    ) -> Result<Vec<f64>, CnnError> {
        let mut embeddings = Vec::with_capacity(4);
        for (col, x) in self.columns.iter().zip(inputs) {
            embeddings.push(col.forward(params, x)?);
        }
        let out = self.head.forward(params, Tensor::concat(&embeddings))?;
        Ok(out.into_data())
    }

    /// Loss and gradients for one example, gradients added into `grads`.
    pub fn loss_and_gradients(
        &self,
        params: &ParamSet,
        inputs: [Tensor; 4],
        label: usize,
        grads: &mut Gradients,
    ) -> Result<f64, CnnError> {
        let (loss, _) = self.backprop(params, inputs, label, grads)?;
        Ok(loss)
    }

    fn backprop(
        &self,
        params: &ParamSet,
        inputs: [Tensor; 4],
        label: usize,
        grads: &mut Gradients,
    ) -> Result<(f64, u64), CnnError> {
        if label >= self.config.classes {
            return Err(CnnError::LabelRange {
                label,
                classes: self.config.classes,
            });
        }
        let mut column_acts = Vec::with_capacity(4);
        for (col, x) in self.columns.iter().zip(inputs) {
            column_acts.push(col.forward_cached(params, x)?);
        }
        let concat = Tensor::concat(
            &column_acts
                .iter()
                .map(|a| a.last().unwrap().clone())
                .collect::<Vec<_>>(),
        );
        let head_acts = self.head.forward_cached(params, concat)?;
        let probs = head_acts.last().unwrap();
        let loss = cross_entropy(probs, label)?;
        let g = cross_entropy_gradient(probs, label)?;
        let g_concat = self
            .head
            .backward(params, &head_acts, g, grads, true)?
            .expect("input gradient requested");
        let e = self.config.embedding_width;
        for (v, (col, acts)) in self.columns.iter().zip(&column_acts).enumerate() {
            let g_v = Tensor::vector(g_concat.data()[v * e..(v + 1) * e].to_vec());
            col.backward(params, acts, g_v, grads, false)?;
        }
        let mut sig = self.head.branch_signature(&head_acts);
        for (col, acts) in self.columns.iter().zip(&column_acts) {
            sig = sig.rotate_left(17) ^ col.branch_signature(acts);
        }
        Ok((loss, sig))
    }

    /// Signature of active rectifier and pooling branches for one example.
    pub fn branch_signature(
        &self,
        params: &ParamSet,
        inputs: [Tensor; 4],
    ) -> Result<u64, CnnError> {
        let mut sig = 0u64;
        let mut embeddings = Vec::with_capacity(4);
        let mut col_sigs = Vec::with_capacity(4);
        for (col, x) in self.columns.iter().zip(inputs) {
            let acts = col.forward_cached(params, x)?;
            col_sigs.push(col.branch_signature(&acts));
            embeddings.push(acts.last().unwrap().clone());
        }
        let head_acts = self
            .head
            .forward_cached(params, Tensor::concat(&embeddings))?;
        sig ^= self.head.branch_signature(&head_acts);
        for s in col_sigs {
            sig = sig.rotate_left(17) ^ s;
        }
        Ok(sig)
    }
}

/// Builds the network for `config` and initialises its parameters: Glorot
/// weights, zero biases, one set of column weights when sharing.
pub fn build_model<R: Rng + ?Sized>(
    config: &MultiColumnConfig,
    rng: &mut R,
) -> Result<ParamSet, CnnError> {
    MultiColumnNet::new(config.clone())?.init_params(rng)
}

pub fn forward_exam(
    params: &ParamSet,
    config: &MultiColumnConfig,
    views: &[ViewImage; 4],
) -> Result<Vec<f64>, CnnError> {
    MultiColumnNet::new(config.clone())?.forward(params, views)
}

/// Stand-in augmentation: shifts and brightness jitter only. The original
/// protocol's augmentation set is unknown.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationPolicy {
    pub max_translation: usize,
    pub intensity_jitter: f64,
    pub enabled: bool,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            max_translation: 8,
            intensity_jitter: 0.05,
            enabled: true,
        }
    }
}

impl AugmentationPolicy {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }
}

/// Random integer translation (zero fill) and multiplicative intensity
/// jitter. A disabled policy returns the image unchanged.
pub fn augment<R: Rng + ?Sized>(
    image: &ViewImage,
    policy: &AugmentationPolicy,
    rng: &mut R,
) -> ViewImage {
    if !policy.enabled {
        return image.clone();
    }
    let m = policy.max_translation as i64;
    let dy = rng.random_range(-m..=m) as isize;
    let dx = rng.random_range(-m..=m) as isize;
    let j = policy.intensity_jitter;
    let factor = if j > 0.0 {
        rng.random_range(1.0 - j..=1.0 + j)
    } else {
        1.0
    };
    let (h, w) = (image.height as isize, image.width as isize);
    let mut pixels = vec![0u16; image.pixels.len()];
    for y in 0..h {
        let sy = y - dy;
        if !(0..h).contains(&sy) {
            continue;
        }
        for x in 0..w {
            let sx = x - dx;
            if !(0..w).contains(&sx) {
                continue;
            }
            let v = image.pixels[(sy * w + sx) as usize] as f64 * factor;
            pixels[(y * w + x) as usize] = v.round().clamp(0.0, 65535.0) as u16;
        }
    }
    ViewImage::new(image.view, image.height, image.width, pixels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnTrainOptions {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for CnnTrainOptions {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CnnEpoch {
    pub train_loss: f64,
    pub validation_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedCnn {
    pub params: ParamSet,
    pub history: Vec<CnnEpoch>,
    /// 1-based epoch of the returned snapshot.
    pub best_epoch: Option<usize>,
}

impl TrainedCnn {
    pub fn validation_history(&self) -> Vec<f64> {
        self.history.iter().map(|e| e.validation_accuracy).collect()
    }
}

/// Top-1 accuracy of `params` on a labelled set; never augments.
pub fn evaluate_accuracy(
    net: &MultiColumnNet,
    params: &ParamSet,
    data: &[LabeledViews<'_>],
) -> Result<f64, CnnError> {
    let mut correct = 0usize;
    for s in data {
        let p = Tensor::vector(net.forward(params, s.views)?);
        correct += usize::from(p.argmax() == s.label);
    }
    Ok(correct as f64 / data.len().max(1) as f64)
}

/// Probabilities for every sample, in order.
pub fn predict_all(
    net: &MultiColumnNet,
    params: &ParamSet,
    data: &[&[ViewImage; 4]],
) -> Result<Vec<Vec<f64>>, CnnError> {
    data.iter().map(|v| net.forward(params, v)).collect()
}

/// Trains from a fresh Glorot initialisation.
pub fn train_cnn(
    config: &MultiColumnConfig,
    train: &[LabeledViews<'_>],
    validation: &[LabeledViews<'_>],
    policy: &AugmentationPolicy,
    options: &CnnTrainOptions,
) -> Result<TrainedCnn, CnnError> {
    let net = MultiColumnNet::new(config.clone())?;
    let init = net.init_params(&mut stream(options.seed, &[seeding::INIT]))?;
    train_cnn_from(&net, init, train, validation, policy, options)
}

/// Adam on mean cross-entropy from the given parameters. Training samples
/// are augmented under `policy`; validation never is. Returns the snapshot
/// with the best validation accuracy (earliest on ties).
pub fn train_cnn_from(
    net: &MultiColumnNet,
    initial: ParamSet,
    train: &[LabeledViews<'_>],
    validation: &[LabeledViews<'_>],
    policy: &AugmentationPolicy,
    options: &CnnTrainOptions,
) -> Result<TrainedCnn, CnnError> {
    if train.is_empty() {
        return Err(CnnError::EmptySplit("training"));
    }
    if validation.is_empty() {
        return Err(CnnError::EmptySplit("validation"));
    }
    let mut params = initial;
    let mut best = params.clone();
    let mut best_epoch = None;
    let mut best_acc = f64::NEG_INFINITY;
    let mut history = Vec::with_capacity(options.epochs);
    let mut shuffle_rng = stream(options.seed, &[seeding::SHUFFLE]);
    let mut augment_rng: ChaCha8Rng = stream(options.seed, &[seeding::AUGMENT]);
    for epoch in 1..=options.epochs {
        let mut loss_sum = 0.0;
        for batch in batches(train.len(), options.batch_size, &mut shuffle_rng) {
            let mut grads = Gradients::new();
            for &i in &batch {
                let sample = &train[i];
                let views: [ViewImage; 4] =
                    std::array::from_fn(|v| augment(&sample.views[v], policy, &mut augment_rng));
                let inputs = net.inputs(&views)?;
                loss_sum += net.loss_and_gradients(&params, inputs, sample.label, &mut grads)?;
            }
            let scale = 1.0 / batch.len() as f64;
            grads.values_mut().for_each(|g| g.scale(scale));
            adam_step(&mut params, &grads, options.learning_rate)?;
        }
        let acc = evaluate_accuracy(net, &params, validation)?;
        history.push(CnnEpoch {
            train_loss: loss_sum / train.len() as f64,
            validation_accuracy: acc,
        });
        if acc > best_acc {
            best_acc = acc;
            best = params.clone();
            best_epoch = Some(epoch);
        }
    }
    Ok(TrainedCnn {
        params: best.without_optimizer_state(),
        history,
        best_epoch,
    })
}

/// Copies every parameter of a network trained for another label set except
/// the output layer, which gets a fresh Glorot draw (zero bias).
pub fn transfer_init<R: Rng + ?Sized>(
    pretrained: &ParamSet,
    source: &MultiColumnConfig,
    target: &MultiColumnConfig,
    rng: &mut R,
) -> Result<ParamSet, CnnError> {
    if source.with_classes(target.classes) != *target {
        return Err(CnnError::IncompatibleConfigs);
    }
    let net = MultiColumnNet::new(target.clone())?;
    let mut out = ParamSet::new();
    let mut mismatched = Vec::new();
    for (name, shape) in net.param_shapes() {
        if name.starts_with(OUTPUT_LAYER) {
            let value = if name.ends_with(".bias") {
                Tensor::zeros(&shape)
            } else {
                glorot_init(&shape, rng)?
            };
            out.insert(name, value)?;
            continue;
        }
        match pretrained.get(&name) {
            Some(t) if t.shape() == shape.as_slice() => out.insert(name, t.clone())?,
            _ => mismatched.push(name),
        }
    }
    if mismatched.is_empty() {
        Ok(out)
    } else {
        Err(CnnError::TransferMismatch(mismatched))
    }
}

/// First 1-based epoch whose validation accuracy reaches `threshold`.
pub fn epochs_to_threshold(history: &[f64], threshold: f64) -> Option<usize> {
    history.iter().position(|&a| a >= threshold).map(|i| i + 1)
}

/// Mean cross-entropy of a fixed set of exams, as a function of the
/// parameters.
pub struct ExamObjective<'a> {
    pub net: &'a MultiColumnNet,
    pub examples: Vec<([Tensor; 4], usize)>,
}

impl Differentiable for ExamObjective<'_> {
    fn loss(&self, params: &ParamSet) -> f64 {
        let mut total = 0.0;
        for (x, label) in &self.examples {
            let p = self
                .net
                .forward_tensors(params, x.clone())
                .expect("forward");
            total += cross_entropy(&Tensor::vector(p), *label).expect("label");
        }
        total / self.examples.len() as f64
    }

    fn gradients(&self, params: &ParamSet) -> Gradients {
        let mut grads = Gradients::new();
        for (x, label) in &self.examples {
            self.net
                .loss_and_gradients(params, x.clone(), *label, &mut grads)
                .expect("backward");
        }
        let scale = 1.0 / self.examples.len() as f64;
        grads.values_mut().for_each(|g| g.scale(scale));
        grads
    }

    fn branch_signature(&self, params: &ParamSet) -> u64 {
        self.examples.iter().fold(0u64, |acc, (x, _)| {
            acc.rotate_left(5)
                ^ self
                    .net
                    .branch_signature(params, x.clone())
                    .expect("forward")
        })
    }
}

/// Sidecar stored next to a CNN weight container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnSidecar {
    pub config: MultiColumnConfig,
    pub classes: usize,
    pub share_columns: bool,
    pub training: serde_json::Value,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn small() -> MultiColumnConfig {
        MultiColumnConfig::with_widths(24, 24, 4, [2, 3, 4], 5, 6)
    }

    fn views(h: usize, w: usize, seed: u64) -> [ViewImage; 4] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ViewKind::ALL.map(|v| {
            ViewImage::new(
                v,
                h,
                w,
                (0..h * w).map(|_| rng.random_range(0..65535)).collect(),
            )
        })
    }

    #[test]
    fn default_parameter_count() {
        let net = MultiColumnNet::new(MultiColumnConfig::default()).unwrap();
        let p = net.init_params(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let column = (8 * 9 + 8) + (16 * 8 * 9 + 16) + (32 * 16 * 9 + 32) + (256 * 32 + 256);
        let head = (1024 * 1024 + 1024) + (4 * 1024 + 4);
        assert_eq!(p.scalar_count(), column + head);
        assert_eq!(p.scalar_count(), 1_068_036);
    }

    #[test]
    fn unshared_columns_quadruple_column_params() {
        let mut cfg = small();
        let shared = build_model(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        cfg.share_columns = false;
        let separate = build_model(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let head = (20 * 6 + 6) + (6 * 4 + 4);
        assert_eq!(
            separate.scalar_count() - head,
            4 * (shared.scalar_count() - head)
        );
    }

    #[test]
    fn wrong_embedding_width_is_reported() {
        let mut cfg = small();
        cfg.embedding_width = 7;
        match MultiColumnNet::new(cfg) {
            Err(CnnError::EmbeddingWidth {
                expected: 7,
                actual: 5,
            }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn class_count_only_changes_output_layer() {
        let a = build_model(&small(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = build_model(&small().with_classes(3), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for (name, t) in a.iter() {
            if name.starts_with(OUTPUT_LAYER) {
                assert_ne!(t.shape(), b.get(name).unwrap().shape());
            } else {
                assert_eq!(t, b.get(name).unwrap(), "{name}");
            }
        }
    }

    #[test]
    fn zero_output_weights_give_uniform() {
        let cfg = small();
        let mut p = build_model(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        p.set("head.output.weight", Tensor::zeros(&[4, 6])).unwrap();
        let probs = forward_exam(&p, &cfg, &views(24, 24, 0)).unwrap();
        assert_eq!(probs, vec![0.25; 4]);
    }

    #[test]
    fn wrong_image_size_names_view() {
        let cfg = small();
        let p = build_model(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut v = views(24, 24, 0);
        v[2] = ViewImage::new(ViewKind::LeftMlo, 20, 24, vec![0; 480]);
        let err = forward_exam(&p, &cfg, &v).unwrap_err();
        assert!(err.to_string().contains("L-MLO"), "{err}");
    }

    #[test]
    fn augmentation_identity_cases() {
        let img = &views(24, 24, 5)[0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            &augment(img, &AugmentationPolicy::disabled(), &mut rng),
            img
        );
        let still = AugmentationPolicy {
            max_translation: 0,
            intensity_jitter: 0.0,
            enabled: true,
        };
        assert_eq!(&augment(img, &still, &mut rng), img);
    }

    #[test]
    fn translation_shifts_content() {
        let mut px = vec![0u16; 9];
        px[4] = 100;
        let img = ViewImage::new(ViewKind::LeftCc, 3, 3, px);
        let policy = AugmentationPolicy {
            max_translation: 1,
            intensity_jitter: 0.0,
            enabled: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let out = augment(&img, &policy, &mut rng);
            assert_eq!(out.pixels.iter().filter(|&&p| p == 100).count(), 1);
        }
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        for share in [true, false] {
            let mut cfg = MultiColumnConfig::with_widths(32, 24, 4, [2, 3, 4], 5, 6);
            cfg.share_columns = share;
            let net = MultiColumnNet::new(cfg).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut params = net.init_params(&mut rng).unwrap();
            for (name, shape) in net.param_shapes() {
                if name.ends_with(".bias") {
                    let n = shape.iter().product();
                    let b = (0..n).map(|_| rng.random_range(-0.1..0.1)).collect();
                    params.set(&name, Tensor::new(shape, b).unwrap()).unwrap();
                }
            }
            let examples = (0..2)
                .map(|i| (net.inputs(&views(32, 24, 20 + i)).unwrap(), i as usize + 1))
                .collect();
            let objective = ExamObjective {
                net: &net,
                examples,
            };
            let report = crate::numerics::gradient_check(
                &objective,
                &params,
                &crate::numerics::GradientCheckConfig {
                    max_entries_per_param: Some(12),
                    ..Default::default()
                },
            );
            assert!(report.passed(), "{report:?}");
            assert!(report.max_relative_error() < 1e-4);
        }
    }

    #[test]
    fn threshold_epochs() {
        assert_eq!(epochs_to_threshold(&[0.5, 0.7, 0.9], 0.85), Some(3));
        assert_eq!(epochs_to_threshold(&[0.5, 0.7, 0.9], 0.99), None);
        assert_eq!(epochs_to_threshold(&[0.9], 0.9), Some(1));
    }

    #[test]
    fn transfer_copies_all_but_output() {
        let src_cfg = small().with_classes(3);
        let src = build_model(&src_cfg, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let tgt =
            transfer_init(&src, &src_cfg, &small(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        for (name, t) in tgt.iter() {
            if name.starts_with(OUTPUT_LAYER) {
                assert_eq!(t.shape()[0], 4);
            } else {
                assert_eq!(t, src.get(name).unwrap());
            }
        }
    }

    #[test]
    fn transfer_rejects_mismatched_channels() {
        let src_cfg = MultiColumnConfig::with_widths(24, 24, 3, [2, 3, 4], 5, 6);
        let src = build_model(&src_cfg, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let mut pretrained = src.clone();
        let mut renamed = ParamSet::new();
        for (n, t) in pretrained.iter() {
            let t = if n == "column.3.weight" {
                Tensor::zeros(&[3, 3, 3, 3])
            } else {
                t.clone()
            };
            renamed.insert(n, t).unwrap();
        }
        pretrained = renamed;
        let err = transfer_init(
            &pretrained,
            &src_cfg,
            &small(),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap_err();
        match err {
            CnnError::TransferMismatch(names) => assert_eq!(names, vec!["column.3.weight"]),
            other => panic!("{other}"),
        }
        let other_cfg = MultiColumnConfig::with_widths(24, 24, 4, [2, 5, 4], 5, 6);
        assert!(matches!(
            transfer_init(
                &src,
                &src_cfg,
                &other_cfg,
                &mut ChaCha8Rng::seed_from_u64(1)
            ),
            Err(CnnError::IncompatibleConfigs)
        ));
    }
}
