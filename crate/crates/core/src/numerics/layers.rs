use serde::{Deserialize, Serialize};

use super::{NumericsError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    #[default]
    Valid,
    Same,
}

/// One layer of a feed-forward stack. Activations are single samples:
/// convolution and pooling expect `[channels, height, width]`, fully
/// connected layers flatten whatever they receive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        #[serde(default)]
        padding: Padding,
    },
    MaxPool {
        size: usize,
        stride: usize,
    },
    Relu,
    GlobalAvgPool,
    FullyConnected {
        inputs: usize,
        outputs: usize,
    },
    Softmax,
}

/// Gradients produced by [`backward`].
#[derive(Debug, Clone)]
pub struct LayerGradients {
    pub input: Tensor,
    pub params: Vec<Tensor>,
}

#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    pad_top: usize,
    pad_left: usize,
    padded_h: usize,
    padded_w: usize,
    out_h: usize,
    out_w: usize,
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        LayerSpec::Conv {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: Padding::Valid,
        }
    }

    pub fn max_pool(size: usize) -> Self {
        LayerSpec::MaxPool { size, stride: size }
    }

    pub fn fully_connected(inputs: usize, outputs: usize) -> Self {
        LayerSpec::FullyConnected { inputs, outputs }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::Relu => "relu",
            LayerSpec::GlobalAvgPool => "global_avg_pool",
            LayerSpec::FullyConnected { .. } => "fully_connected",
            LayerSpec::Softmax => "softmax",
        }
    }

    /// Named parameter shapes, in the order `forward` expects them.
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                ("weight", vec![out_channels, in_channels, kernel, kernel]),
                ("bias", vec![out_channels]),
            ],
            LayerSpec::FullyConnected { inputs, outputs } => {
                vec![("weight", vec![outputs, inputs]), ("bias", vec![outputs])]
            }
            _ => Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), NumericsError> {
        let ok = match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => in_channels > 0 && out_channels > 0 && kernel > 0 && stride > 0,
            LayerSpec::MaxPool { size, stride } => size > 0 && stride > 0,
            LayerSpec::FullyConnected { inputs, outputs } => inputs > 0 && outputs > 0,
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(self.shape_error(format!("non-positive extent in {self:?}")))
        }
    }

    /// Output shape for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NumericsError> {
        self.validate()?;
        match *self {
            LayerSpec::Conv { out_channels, .. } => {
                let g = self.conv_geometry(input)?;
                Ok(vec![out_channels, g.out_h, g.out_w])
            }
            LayerSpec::MaxPool { size, stride } => {
                let [c, h, w] = self.expect_chw(input)?;
                if h < size || w < size {
                    return Err(
                        self.shape_error(format!("pool window {size} does not fit {h}x{w} input"))
                    );
                }
                Ok(vec![c, (h - size) / stride + 1, (w - size) / stride + 1])
            }
            LayerSpec::GlobalAvgPool => {
                let [c, _, _] = self.expect_chw(input)?;
                Ok(vec![c])
            }
            LayerSpec::FullyConnected { inputs, outputs } => {
                let n: usize = input.iter().product();
                if n != inputs {
                    return Err(self.shape_error(format!(
                        "expected {inputs} inputs, got shape {input:?} ({n} values)"
                    )));
                }
                Ok(vec![outputs])
            }
            LayerSpec::Relu | LayerSpec::Softmax => Ok(input.to_vec()),
        }
    }

    fn shape_error(&self, detail: String) -> NumericsError {
        NumericsError::Shape {
            layer: self.name().to_string(),
            detail,
        }
    }

    fn expect_chw(&self, input: &[usize]) -> Result<[usize; 3], NumericsError> {
        match *input {
            [c, h, w] => Ok([c, h, w]),
            _ => {
                Err(self.shape_error(format!("expected [channels, height, width], got {input:?}")))
            }
        }
    }

    fn conv_geometry(&self, input: &[usize]) -> Result<ConvGeometry, NumericsError> {
        let LayerSpec::Conv {
            in_channels,
            kernel,
            stride,
            padding,
            ..
        } = *self
        else {
            unreachable!("conv_geometry on {self:?}");
        };
        let [c, h, w] = self.expect_chw(input)?;
        if c != in_channels {
            return Err(self.shape_error(format!("expected {in_channels} input channels, got {c}")));
        }
        let (pad_h, pad_w) = match padding {
            Padding::Valid => (0, 0),
            Padding::Same => {
                let total = |n: usize| {
                    let out = n.div_ceil(stride);
                    ((out - 1) * stride + kernel).saturating_sub(n)
                };
                (total(h), total(w))
            }
        };
        let (padded_h, padded_w) = (h + pad_h, w + pad_w);
        if padded_h < kernel || padded_w < kernel {
            return Err(self.shape_error(format!(
                "{kernel}x{kernel} kernel does not fit {h}x{w} input"
            )));
        }
        Ok(ConvGeometry {
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
            padded_h,
            padded_w,
            out_h: (padded_h - kernel) / stride + 1,
            out_w: (padded_w - kernel) / stride + 1,
        })
    }
}

fn check_params(layer: &LayerSpec, params: &[&Tensor]) -> Result<(), NumericsError> {
    let expected = layer.param_shapes();
    if expected.len() != params.len() {
        return Err(layer.shape_error(format!(
            "expected {} parameter tensors, got {}",
            expected.len(),
            params.len()
        )));
    }
    for ((name, shape), p) in expected.iter().zip(params) {
        if p.shape() != shape.as_slice() {
            return Err(layer.shape_error(format!(
                "parameter {name} should be {shape:?}, got {:?}",
                p.shape()
            )));
        }
    }
    Ok(())
}

/// Forward pass of a single layer.
pub fn forward(
    layer: &LayerSpec,
    params: &[&Tensor],
    input: &Tensor,
) -> Result<Tensor, NumericsError> {
    check_params(layer, params)?;
    let out_shape = layer.output_shape(input.shape())?;
    let x = input.data();
    let out = match *layer {
        LayerSpec::Conv {
            in_channels,
            out_channels,
            kernel,
            stride,
            ..
        } => {
            let g = layer.conv_geometry(input.shape())?;
            let padded = pad_input(x, in_channels, input.shape()[1], input.shape()[2], &g);
            conv_forward(
                &padded,
                params[0].data(),
                params[1].data(),
                in_channels,
                out_channels,
                kernel,
                stride,
                &g,
            )
        }
        LayerSpec::MaxPool { size, stride } => {
            let [c, h, w] = layer.expect_chw(input.shape())?;
            let (oh, ow) = (out_shape[1], out_shape[2]);
            let mut out = Vec::with_capacity(c * oh * ow);
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let idx = pool_argmax(x, ch, h, w, oy, ox, size, stride);
                        out.push(x[idx]);
                    }
                }
            }
            out
        }
        LayerSpec::GlobalAvgPool => {
            let [c, h, w] = layer.expect_chw(input.shape())?;
            let area = (h * w) as f64;
            x.chunks_exact(h * w)
                .take(c)
                .map(|plane| plane.iter().sum::<f64>() / area)
                .collect()
        }
        LayerSpec::FullyConnected { inputs, outputs } => {
            let (w, b) = (params[0].data(), params[1].data());
            (0..outputs)
                .map(|o| b[o] + dot(&w[o * inputs..(o + 1) * inputs], x))
                .collect()
        }
        LayerSpec::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
        LayerSpec::Softmax => softmax(x),
    };
    Tensor::new(out_shape, out)
}

/// Backward pass: gradients of a scalar with respect to the layer input and
/// parameters, given the gradient with respect to the layer output.
pub fn backward(
    layer: &LayerSpec,
    params: &[&Tensor],
    input: &Tensor,
    output_gradient: &Tensor,
) -> Result<LayerGradients, NumericsError> {
    let mut grads: Vec<Tensor> = layer
        .param_shapes()
        .iter()
        .map(|(_, s)| Tensor::zeros(s))
        .collect();
    let mut refs: Vec<&mut Tensor> = grads.iter_mut().collect();
    let input_grad = backward_accumulate(layer, params, input, output_gradient, &mut refs, true)?
        .expect("input gradient requested");
    Ok(LayerGradients {
        input: input_grad,
        params: grads,
    })
}

/// Like [`backward`], but adds parameter gradients into caller-owned buffers
/// and only computes the input gradient when `want_input` is set.
pub fn backward_accumulate(
    layer: &LayerSpec,
    params: &[&Tensor],
    input: &Tensor,
    output_gradient: &Tensor,
    param_grads: &mut [&mut Tensor],
    want_input: bool,
) -> Result<Option<Tensor>, NumericsError> {
    check_params(layer, params)?;
    let out_shape = layer.output_shape(input.shape())?;
    if output_gradient.shape() != out_shape.as_slice() {
        return Err(layer.shape_error(format!(
            "output gradient shape {:?} does not match output shape {out_shape:?}",
            output_gradient.shape()
        )));
    }
    if param_grads.len() != params.len()
        || param_grads
            .iter()
            .zip(params)
            .any(|(g, p)| g.shape() != p.shape())
    {
        return Err(layer.shape_error("gradient buffers do not match parameters".into()));
    }
    let x = input.data();
    let gy = output_gradient.data();
    let gx: Option<Vec<f64>> = match *layer {
        LayerSpec::Conv {
            in_channels,
            out_channels,
            kernel,
            stride,
            ..
        } => {
            let [_, h, w] = layer.expect_chw(input.shape())?;
            let g = layer.conv_geometry(input.shape())?;
            let padded = pad_input(x, in_channels, h, w, &g);
            let (gw, gb) = param_grads.split_at_mut(1);
            let padded_grad = conv_backward(
                &padded,
                params[0].data(),
                gy,
                gw[0].data_mut(),
                gb[0].data_mut(),
                in_channels,
                out_channels,
                kernel,
                stride,
                &g,
                want_input,
            );
            padded_grad.map(|pg| crop_padding(&pg, in_channels, h, w, &g))
        }
        LayerSpec::MaxPool { size, stride } => want_input.then(|| {
            let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
            let (oh, ow) = (out_shape[1], out_shape[2]);
            let mut gx = vec![0.0; x.len()];
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let idx = pool_argmax(x, ch, h, w, oy, ox, size, stride);
                        gx[idx] += gy[(ch * oh + oy) * ow + ox];
                    }
                }
            }
            gx
        }),
        LayerSpec::GlobalAvgPool => want_input.then(|| {
            let (h, w) = (input.shape()[1], input.shape()[2]);
            let area = (h * w) as f64;
            gy.iter()
                .flat_map(|&g| std::iter::repeat_n(g / area, h * w))
                .collect()
        }),
        LayerSpec::FullyConnected { inputs, outputs } => {
            let w = params[0].data();
            {
                let (gw, gb) = param_grads.split_at_mut(1);
                let gw = gw[0].data_mut();
                for o in 0..outputs {
                    let g = gy[o];
                    if g != 0.0 {
                        axpy(g, x, &mut gw[o * inputs..(o + 1) * inputs]);
                    }
                }
                for (b, g) in gb[0].data_mut().iter_mut().zip(gy) {
                    *b += g;
                }
            }
            want_input.then(|| {
                let mut gx = vec![0.0; inputs];
                for o in 0..outputs {
                    if gy[o] != 0.0 {
                        axpy(gy[o], &w[o * inputs..(o + 1) * inputs], &mut gx);
                    }
                }
                gx
            })
        }
        LayerSpec::Relu => want_input.then(|| {
            x.iter()
                .zip(gy)
                .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                .collect()
        }),
        LayerSpec::Softmax => want_input.then(|| {
            let y = softmax(x);
            let inner = dot(&y, gy);
            y.iter().zip(gy).map(|(&p, &g)| p * (g - inner)).collect()
        }),
    };
    gx.map(|data| Tensor::new(input.shape().to_vec(), data))
        .transpose()
}

/// Numerically stable softmax over a flat slice.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn pool_argmax(
    x: &[f64],
    ch: usize,
    h: usize,
    w: usize,
    oy: usize,
    ox: usize,
    size: usize,
    stride: usize,
) -> usize {
    let base = ch * h * w;
    let mut best = base + oy * stride * w + ox * stride;
    let mut best_value = x[best];
    for dy in 0..size {
        let row = base + (oy * stride + dy) * w + ox * stride;
        for (idx, &v) in (row..).zip(&x[row..row + size]) {
            let better = v > best_value;
            best = if better { idx } else { best };
            best_value = if better { v } else { best_value };
        }
    }
    best
}

fn pad_input<'a>(
    x: &'a [f64],
    channels: usize,
    h: usize,
    w: usize,
    g: &ConvGeometry,
) -> std::borrow::Cow<'a, [f64]> {
    if g.padded_h == h && g.padded_w == w {
        return std::borrow::Cow::Borrowed(x);
    }
    let mut out = vec![0.0; channels * g.padded_h * g.padded_w];
    for c in 0..channels {
        for y in 0..h {
            let src = &x[(c * h + y) * w..(c * h + y + 1) * w];
            let start = (c * g.padded_h + y + g.pad_top) * g.padded_w + g.pad_left;
            out[start..start + w].copy_from_slice(src);
        }
    }
    std::borrow::Cow::Owned(out)
}

fn crop_padding(padded: &[f64], channels: usize, h: usize, w: usize, g: &ConvGeometry) -> Vec<f64> {
    if g.padded_h == h && g.padded_w == w {
        return padded.to_vec();
    }
    let mut out = Vec::with_capacity(channels * h * w);
    for c in 0..channels {
        for y in 0..h {
            let start = (c * g.padded_h + y + g.pad_top) * g.padded_w + g.pad_left;
            out.extend_from_slice(&padded[start..start + w]);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    x: &[f64],
    weight: &[f64],
    bias: &[f64],
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    g: &ConvGeometry,
) -> Vec<f64> {
    let p = g.out_h * g.out_w;
    let rows = in_channels * kernel * kernel;
    let col = im2col(x, in_channels, kernel, stride, g);
    let mut out = vec![0.0; out_channels * p];
    for (plane, &b) in out.chunks_exact_mut(p).zip(bias) {
        plane.fill(b);
    }
    // out[O×P] += W[O×R] · col[R×P]
    unsafe {
        matrixmultiply::dgemm(
            out_channels,
            rows,
            p,
            1.0,
            weight.as_ptr(),
            rows as isize,
            1,
            col.as_ptr(),
            p as isize,
            1,
            1.0,
            out.as_mut_ptr(),
            p as isize,
            1,
        );
    }
    out
}

/// Unfolds receptive fields into a `[C·K·K, out_h·out_w]` matrix.
fn im2col(
    x: &[f64],
    in_channels: usize,
    kernel: usize,
    stride: usize,
    g: &ConvGeometry,
) -> Vec<f64> {
    let (ph, pw, oh, ow) = (g.padded_h, g.padded_w, g.out_h, g.out_w);
    let p = oh * ow;
    let mut col = vec![0.0; in_channels * kernel * kernel * p];
    let mut rows = col.chunks_exact_mut(p);
    for c in 0..in_channels {
        let plane = &x[c * ph * pw..(c + 1) * ph * pw];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let dst = rows.next().expect("row count");
                for oy in 0..oh {
                    let src = &plane[(oy * stride + ky) * pw + kx..];
                    let d = &mut dst[oy * ow..(oy + 1) * ow];
                    if stride == 1 {
                        d.copy_from_slice(&src[..ow]);
                    } else {
                        for (ox, v) in d.iter_mut().enumerate() {
                            *v = src[ox * stride];
                        }
                    }
                }
            }
        }
    }
    col
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    weight: &[f64],
    gy: &[f64],
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    g: &ConvGeometry,
    want_input: bool,
) -> Option<Vec<f64>> {
    let (ph, pw, oh, ow) = (g.padded_h, g.padded_w, g.out_h, g.out_w);
    let p = oh * ow;
    let rows = in_channels * kernel * kernel;
    for (gb, plane) in grad_bias.iter_mut().zip(gy.chunks_exact(p)) {
        *gb += plane.iter().sum::<f64>();
    }
    let col = im2col(x, in_channels, kernel, stride, g);
    // gW[O×R] += gy[O×P] · colᵀ[P×R]
    unsafe {
        matrixmultiply::dgemm(
            out_channels,
            p,
            rows,
            1.0,
            gy.as_ptr(),
            p as isize,
            1,
            col.as_ptr(),
            1,
            p as isize,
            1.0,
            grad_weight.as_mut_ptr(),
            rows as isize,
            1,
        );
    }
    if !want_input {
        return None;
    }
    // gcol[R×P] = Wᵀ[R×O] · gy[O×P], then fold back onto the input.
    let mut gcol = vec![0.0; rows * p];
    unsafe {
        matrixmultiply::dgemm(
            rows,
            out_channels,
            p,
            1.0,
            weight.as_ptr(),
            1,
            rows as isize,
            gy.as_ptr(),
            p as isize,
            1,
            0.0,
            gcol.as_mut_ptr(),
            p as isize,
            1,
        );
    }
    let mut gx = vec![0.0; in_channels * ph * pw];
    let mut grows = gcol.chunks_exact(p);
    for c in 0..in_channels {
        let plane = &mut gx[c * ph * pw..(c + 1) * ph * pw];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let src = grows.next().expect("row count");
                for oy in 0..oh {
                    let start = (oy * stride + ky) * pw + kx;
                    let s_row = &src[oy * ow..(oy + 1) * ow];
                    if stride == 1 {
                        axpy(1.0, s_row, &mut plane[start..start + ow]);
                    } else {
                        for (ox, v) in s_row.iter().enumerate() {
                            plane[start + ox * stride] += v;
                        }
                    }
                }
            }
        }
    }
    Some(gx)
}
