use rand::Rng;

use super::layers::{backward_accumulate, forward};
use super::{
    cross_entropy, cross_entropy_gradient, glorot_init, Differentiable, Gradients, LayerSpec,
    NumericsError, ParamSet, Tensor,
};

/// A feed-forward sequence of layers whose parameters live in a shared
/// [`ParamSet`] under `"{prefix}.weight"` / `"{prefix}.bias"`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stack {
    layers: Vec<(LayerSpec, Option<String>)>,
}

impl Stack {
    pub fn new() -> Self {
        Self { layers: Vec::new() }
    }

    /// Appends a layer. Parameterised layers need a name prefix.
    pub fn push(&mut self, layer: LayerSpec, prefix: Option<String>) {
        assert_eq!(
            layer.param_shapes().is_empty(),
            prefix.is_none(),
            "{layer:?}: a name prefix is required exactly when the layer has parameters"
        );
        self.layers.push((layer, prefix));
    }

    pub fn with(mut self, layer: LayerSpec, prefix: Option<&str>) -> Self {
        self.push(layer, prefix.map(str::to_string));
        self
    }

    pub fn layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().map(|(l, _)| l)
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NumericsError> {
        self.layers
            .iter()
            .try_fold(input.to_vec(), |shape, (layer, _)| {
                layer.output_shape(&shape)
            })
    }

    /// Names and shapes of every parameter the stack reads.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.layers
            .iter()
            .filter_map(|(layer, prefix)| prefix.as_ref().map(|p| (layer, p)))
            .flat_map(|(layer, prefix)| {
                layer
                    .param_shapes()
                    .into_iter()
                    .map(move |(n, s)| (format!("{prefix}.{n}"), s))
            })
            .collect()
    }

    /// Glorot-initialise weights and zero biases for every parameter not yet
    /// present in `params`. Existing entries (shared prefixes) are reused.
    pub fn init_params<R: Rng + ?Sized>(
        &self,
        params: &mut ParamSet,
        rng: &mut R,
    ) -> Result<(), NumericsError> {
        for (name, shape) in self.param_shapes() {
            if let Some(existing) = params.get(&name) {
                if existing.shape() != shape.as_slice() {
                    return Err(NumericsError::GradientShape {
                        name,
                        expected: shape,
                        got: existing.shape().to_vec(),
                    });
                }
                continue;
            }
            let value = if name.ends_with(".bias") {
                Tensor::zeros(&shape)
            } else {
                glorot_init(&shape, rng)?
            };
            params.insert(name, value)?;
        }
        Ok(())
    }

    fn layer_params<'a>(
        &self,
        idx: usize,
        params: &'a ParamSet,
    ) -> Result<Vec<&'a Tensor>, NumericsError> {
        let (layer, prefix) = &self.layers[idx];
        let Some(prefix) = prefix else {
            return Ok(Vec::new());
        };
        layer
            .param_shapes()
            .iter()
            .map(|(n, _)| params.require(&format!("{prefix}.{n}")))
            .collect()
    }

    pub fn forward(&self, params: &ParamSet, input: Tensor) -> Result<Tensor, NumericsError> {
        let mut x = input;
        for (i, (layer, _)) in self.layers.iter().enumerate() {
            x = forward(layer, &self.layer_params(i, params)?, &x)?;
        }
        Ok(x)
    }

    /// Forward pass keeping every activation; element 0 is the input and
    /// the last element is the output.
    pub fn forward_cached(
        &self,
        params: &ParamSet,
        input: Tensor,
    ) -> Result<Vec<Tensor>, NumericsError> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input);
        for (i, (layer, _)) in self.layers.iter().enumerate() {
            let next = forward(layer, &self.layer_params(i, params)?, acts.last().unwrap())?;
            acts.push(next);
        }
        Ok(acts)
    }

    /// Back-propagates `output_gradient` through the cached activations,
    /// adding parameter gradients into `grads`. Returns the input gradient
    /// when `want_input` is set.
    pub fn backward(
        &self,
        params: &ParamSet,
        activations: &[Tensor],
        output_gradient: Tensor,
        grads: &mut Gradients,
        want_input: bool,
    ) -> Result<Option<Tensor>, NumericsError> {
        assert_eq!(
            activations.len(),
            self.layers.len() + 1,
            "activation cache length"
        );
        let mut upstream = output_gradient;
        for i in (0..self.layers.len()).rev() {
            let (layer, prefix) = &self.layers[i];
            let lp = self.layer_params(i, params)?;
            let need_input = want_input || i > 0;
            let names: Vec<String> = match prefix {
                Some(p) => layer
                    .param_shapes()
                    .iter()
                    .map(|(n, _)| format!("{p}.{n}"))
                    .collect(),
                None => Vec::new(),
            };
            let mut owned: Vec<Tensor> = names
                .iter()
                .zip(&lp)
                .map(|(n, p)| grads.remove(n).unwrap_or_else(|| Tensor::zeros(p.shape())))
                .collect();
            let mut refs: Vec<&mut Tensor> = owned.iter_mut().collect();
            let result = backward_accumulate(
                layer,
                &lp,
                &activations[i],
                &upstream,
                &mut refs,
                need_input,
            );
            for (n, g) in names.into_iter().zip(owned) {
                grads.insert(n, g);
            }
            match result? {
                Some(g) => upstream = g,
                None => return Ok(None),
            }
        }
        Ok(Some(upstream))
    }

    /// Hash of the active piece of every piecewise-linear unit (rectifier
    /// sign pattern, pooling argmax) for a cached forward pass.
    pub fn branch_signature(&self, activations: &[Tensor]) -> u64 {
        let mut h = Fnv::default();
        for (i, (layer, _)) in self.layers.iter().enumerate() {
            let x = &activations[i];
            match *layer {
                LayerSpec::Relu => {
                    for &v in x.data() {
                        h.write(u64::from(v > 0.0));
                    }
                }
                LayerSpec::MaxPool { size, stride } => {
                    let s = x.shape();
                    let (c, hh, w) = (s[0], s[1], s[2]);
                    let (oh, ow) = ((hh - size) / stride + 1, (w - size) / stride + 1);
                    let d = x.data();
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut best = (ch * hh + oy * stride) * w + ox * stride;
                                for dy in 0..size {
                                    let row = (ch * hh + oy * stride + dy) * w + ox * stride;
                                    for idx in row..row + size {
                                        if d[idx] > d[best] {
                                            best = idx;
                                        }
                                    }
                                }
                                h.write(best as u64);
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        h.0
    }
}

impl Default for Stack {
    fn default() -> Self {
        Self::new()
    }
}

struct Fnv(u64);

impl Default for Fnv {
    fn default() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv {
    fn write(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }
}

/// Cross-entropy of one labelled input through a stack whose last layer
/// produces probabilities.
#[derive(Debug, Clone)]
pub struct StackObjective {
    pub stack: Stack,
    pub input: Tensor,
    pub class: usize,
}

impl Differentiable for StackObjective {
    fn loss(&self, params: &ParamSet) -> f64 {
        let p = self
            .stack
            .forward(params, self.input.clone())
            .expect("forward");
        cross_entropy(&p, self.class).expect("class in range")
    }

    fn gradients(&self, params: &ParamSet) -> Gradients {
        let acts = self
            .stack
            .forward_cached(params, self.input.clone())
            .expect("forward");
        let upstream =
            cross_entropy_gradient(acts.last().unwrap(), self.class).expect("class in range");
        let mut grads = Gradients::new();
        self.stack
            .backward(params, &acts, upstream, &mut grads, false)
            .expect("backward");
        grads
    }

    fn branch_signature(&self, params: &ParamSet) -> u64 {
        let acts = self
            .stack
            .forward_cached(params, self.input.clone())
            .expect("forward");
        self.stack.branch_signature(&acts)
    }
}
