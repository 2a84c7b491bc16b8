//! A small feed-forward network: convolution and fully-connected layers with
//! optional ReLU, a softmax head, full activation capture and hand-written
//! backpropagation.
//!
//! Activations are stored channel-major (`[channel][row][col]`), which is also
//! the flattening order a fully-connected layer sees after a convolution.

mod format;
mod train;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{argmax, Tensor};

pub use format::{load_model, read_model, save_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use train::{accuracy, train, TrainConfig, TrainReport};

/// Standard deviation of the truncated-normal initializer.
pub const INIT_STDDEV: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding chosen so that the output spatial size is `ceil(input / stride)`.
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv {
        filters: usize,
        size: usize,
        stride: usize,
        padding: Padding,
    },
    FullyConnected {
        in_dim: usize,
        out_dim: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn conv(filters: usize, size: usize, stride: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Conv {
                filters,
                size,
                stride,
                padding: Padding::Same,
            },
            activation,
        }
    }

    pub fn fully_connected(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::FullyConnected { in_dim, out_dim },
            activation,
        }
    }
}

/// Activation volume `(channels, height, width)`; fully-connected outputs are `(n, 1, 1)`.
pub type Volume = (usize, usize, usize);

fn volume_len(v: Volume) -> usize {
    v.0 * v.1 * v.2
}

/// Placement of a convolution on its input volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub input: Volume,
    pub output: Volume,
    pub size: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeometry {
    pub fn same(input: Volume, filters: usize, size: usize, stride: usize) -> Self {
        let out_h = input.1.div_ceil(stride);
        let out_w = input.2.div_ceil(stride);
        let pad_h = ((out_h - 1) * stride + size).saturating_sub(input.1);
        let pad_w = ((out_w - 1) * stride + size).saturating_sub(input.2);
        Self {
            input,
            output: (filters, out_h, out_w),
            size,
            stride,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
        }
    }

    /// Visits every (output index, input index, weight index) triple with the
    /// input position inside the image. Padding positions are skipped.
    #[inline]
    pub fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (in_c, in_h, in_w) = self.input;
        let (out_c, out_h, out_w) = self.output;
        let k = self.size;
        for oc in 0..out_c {
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let out_idx = (oc * out_h + oy) * out_w + ox;
                    for ic in 0..in_c {
                        for ky in 0..k {
                            let iy = (oy * self.stride + ky) as isize - self.pad_top as isize;
                            if iy < 0 || iy >= in_h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * self.stride + kx) as isize - self.pad_left as isize;
                                if ix < 0 || ix >= in_w as isize {
                                    continue;
                                }
                                let in_idx = (ic * in_h + iy as usize) * in_w + ix as usize;
                                let w_idx = ((oc * in_c + ic) * k + ky) * k + kx;
                                f(out_idx, in_idx, w_idx);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Visits the same taps as [`Self::for_each_tap`], grouped into runs
    /// along output rows: for `j < len`, output `out + j` reads input
    /// `inp + j * stride` through weight `w`.
    #[inline]
    pub fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let (in_c, in_h, in_w) = self.input;
        let (out_c, out_h, out_w) = self.output;
        let (k, s) = (self.size, self.stride);
        for oc in 0..out_c {
            for ic in 0..in_c {
                for ky in 0..k {
                    for kx in 0..k {
                        let w_idx = ((oc * in_c + ic) * k + ky) * k + kx;
                        let ox_lo = self.pad_left.saturating_sub(kx).div_ceil(s);
                        if in_w + self.pad_left <= kx {
                            continue;
                        }
                        let ox_hi = ((in_w - 1 + self.pad_left - kx) / s + 1).min(out_w);
                        if ox_hi <= ox_lo {
                            continue;
                        }
                        for oy in 0..out_h {
                            let iy = (oy * s + ky) as isize - self.pad_top as isize;
                            if iy < 0 || iy >= in_h as isize {
                                continue;
                            }
                            let out_idx = (oc * out_h + oy) * out_w + ox_lo;
                            let in_idx =
                                (ic * in_h + iy as usize) * in_w + ox_lo * s + kx - self.pad_left;
                            f(out_idx, in_idx, w_idx, ox_hi - ox_lo);
                        }
                    }
                }
            }
        }
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// One layer with its parameters. Conv weights are laid out
/// `[filter][in_channel][row][col]`; fully-connected weights `[in][out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub input: Volume,
    pub output: Volume,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn conv_geometry(&self) -> Option<ConvGeometry> {
        match self.spec.kind {
            LayerKind::Conv {
                filters,
                size,
                stride,
                ..
            } => Some(ConvGeometry::same(self.input, filters, size, stride)),
            LayerKind::FullyConnected { .. } => None,
        }
    }

    pub fn input_len(&self) -> usize {
        volume_len(self.input)
    }

    pub fn output_len(&self) -> usize {
        volume_len(self.output)
    }

    fn weight_len(spec: &LayerSpec, input: Volume) -> usize {
        match spec.kind {
            LayerKind::Conv { filters, size, .. } => filters * input.0 * size * size,
            LayerKind::FullyConnected { in_dim, out_dim } => in_dim * out_dim,
        }
    }

    /// Pre-activation output `W·x + b`.
    pub fn linear(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_len()];
        match self.conv_geometry() {
            Some(geom) => {
                let s = geom.stride;
                geom.for_each_run(|o, i, w, len| {
                    let wv = self.weights[w];
                    let dst = &mut out[o..o + len];
                    if s == 1 {
                        for (v, xi) in dst.iter_mut().zip(&x[i..i + len]) {
                            *v += wv * xi;
                        }
                    } else {
                        for (v, xi) in dst.iter_mut().zip(x[i..].iter().step_by(s)) {
                            *v += wv * xi;
                        }
                    }
                });
                let plane = geom.output.1 * geom.output.2;
                for (c, chunk) in out.chunks_mut(plane).enumerate() {
                    chunk.iter_mut().for_each(|v| *v += self.bias[c]);
                }
            }
            None => {
                let n_out = out.len();
                out.copy_from_slice(&self.bias);
                for (i, &a) in x.iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    let row = &self.weights[i * n_out..(i + 1) * n_out];
                    for (o, w) in out.iter_mut().zip(row) {
                        *o += a * w;
                    }
                }
            }
        }
        out
    }

    /// Propagates `grad_out` (gradient w.r.t. pre-activation) back to the
    /// layer input; accumulates parameter gradients when `params` is given.
    /// Input entries whose `live` value is not positive are left at zero.
    fn backward(
        &self,
        x: &[f64],
        grad_out: &[f64],
        params: Option<&mut LayerGradient>,
        live: Option<&[f64]>,
    ) -> Vec<f64> {
        let mut grad_in = vec![0.0; self.input_len()];
        match self.conv_geometry() {
            Some(geom) => {
                let s = geom.stride;
                geom.for_each_run(|o, i, w, len| {
                    let wv = self.weights[w];
                    let src = &grad_out[o..o + len];
                    if s == 1 {
                        for (gi, go) in grad_in[i..i + len].iter_mut().zip(src) {
                            *gi += wv * go;
                        }
                    } else {
                        for (gi, go) in grad_in[i..].iter_mut().step_by(s).zip(src) {
                            *gi += wv * go;
                        }
                    }
                });
                if let Some(p) = params {
                    geom.for_each_run(|o, i, w, len| {
                        let g = &grad_out[o..o + len];
                        p.weights[w] += if s == 1 {
                            dot(g, &x[i..i + len])
                        } else {
                            g.iter()
                                .zip(x[i..].iter().step_by(s))
                                .map(|(g, xi)| g * xi)
                                .sum::<f64>()
                        };
                    });
                    let plane = geom.output.1 * geom.output.2;
                    for (c, chunk) in grad_out.chunks(plane).enumerate() {
                        p.bias[c] += chunk.iter().sum::<f64>();
                    }
                }
            }
            None => {
                let n_out = grad_out.len();
                for (i, g) in grad_in.iter_mut().enumerate() {
                    if live.is_some_and(|l| l[i] <= 0.0) {
                        continue;
                    }
                    let row = &self.weights[i * n_out..(i + 1) * n_out];
                    *g = dot(row, grad_out);
                }
                if let Some(p) = params {
                    for (i, &a) in x.iter().enumerate() {
                        if a == 0.0 {
                            continue;
                        }
                        let row = &mut p.weights[i * n_out..(i + 1) * n_out];
                        for (w, d) in row.iter_mut().zip(grad_out) {
                            *w += a * d;
                        }
                    }
                    for (b, d) in p.bias.iter_mut().zip(grad_out) {
                        *b += d;
                    }
                }
            }
        }
        grad_in
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// The trained classifier: an ordered layer stack over a single-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    input_shape: (usize, usize),
    layers: Vec<Layer>,
}

impl NetworkModel {
    /// Builds a model with zeroed parameters, checking that layer shapes compose.
    pub fn zeroed(input_shape: (usize, usize), specs: &[LayerSpec]) -> Result<Self> {
        if input_shape.0 == 0 || input_shape.1 == 0 {
            return Err(Error::InvalidModel("empty input shape".into()));
        }
        if specs.is_empty() {
            return Err(Error::InvalidModel("no layers".into()));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut current: Volume = (1, input_shape.0, input_shape.1);
        for (idx, spec) in specs.iter().enumerate() {
            let output = match spec.kind {
                LayerKind::Conv {
                    filters,
                    size,
                    stride,
                    ..
                } => {
                    if filters == 0 || size == 0 || stride == 0 {
                        return Err(Error::InvalidModel(format!(
                            "layer {idx}: conv parameters must be positive"
                        )));
                    }
                    if current.1 == 1 && current.2 == 1 && idx > 0 {
                        return Err(Error::InvalidModel(format!(
                            "layer {idx}: convolution after a fully-connected layer"
                        )));
                    }
                    ConvGeometry::same(current, filters, size, stride).output
                }
                LayerKind::FullyConnected { in_dim, out_dim } => {
                    if in_dim == 0 || out_dim == 0 {
                        return Err(Error::InvalidModel(format!(
                            "layer {idx}: dimensions must be positive"
                        )));
                    }
                    if in_dim != volume_len(current) {
                        return Err(Error::InvalidModel(format!(
                            "layer {idx}: expects {in_dim} inputs but previous layer yields {}",
                            volume_len(current)
                        )));
                    }
                    (out_dim, 1, 1)
                }
            };
            let bias_len = output.0;
            layers.push(Layer {
                spec: *spec,
                input: current,
                output,
                weights: vec![0.0; Layer::weight_len(spec, current)],
                bias: vec![0.0; bias_len],
            });
            current = output;
        }
        let model = Self {
            input_shape,
            layers,
        };
        if !matches!(
            model.layers.last().map(|l| l.spec.kind),
            Some(LayerKind::FullyConnected { .. })
        ) {
            return Err(Error::InvalidModel(
                "final layer must be fully connected".into(),
            ));
        }
        Ok(model)
    }

    /// Builds a model with every weight and bias drawn from a normal
    /// distribution with standard deviation [`INIT_STDDEV`], truncated at two
    /// standard deviations.
    pub fn initialized(
        input_shape: (usize, usize),
        specs: &[LayerSpec],
        seed: u64,
    ) -> Result<Self> {
        let mut model = Self::zeroed(input_shape, specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STDDEV).expect("valid stddev");
        let draw = |rng: &mut ChaCha8Rng| loop {
            let v: f64 = normal.sample(rng);
            if v.abs() <= 2.0 * INIT_STDDEV {
                return v;
            }
        };
        for layer in &mut model.layers {
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = draw(&mut rng);
            }
        }
        Ok(model)
    }

    /// conv(32 × 5×5, same) → ReLU → FC(25088 → 1024) → ReLU → FC(1024 → 10).
    pub fn reference_specs() -> Vec<LayerSpec> {
        Self::conv_mlp_specs((28, 28), 32, 1024, 10)
    }

    /// Desk-scale variant of the reference network: 8 filters, 128 hidden units.
    pub fn scaled_specs() -> Vec<LayerSpec> {
        Self::conv_mlp_specs((28, 28), 8, 128, 10)
    }

    pub fn conv_mlp_specs(
        input_shape: (usize, usize),
        filters: usize,
        hidden: usize,
        classes: usize,
    ) -> Vec<LayerSpec> {
        vec![
            LayerSpec::conv(filters, 5, 1, Activation::Relu),
            LayerSpec::fully_connected(
                filters * input_shape.0 * input_shape.1,
                hidden,
                Activation::Relu,
            ),
            LayerSpec::fully_connected(hidden, classes, Activation::None),
        ]
    }

    pub fn input_shape(&self) -> (usize, usize) {
        self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.0 * self.input_shape.1
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn class_count(&self) -> usize {
        self.layers.last().map(|l| l.output_len()).unwrap_or(0)
    }

    /// Number of vertices across all layer interfaces (input pixels included).
    pub fn neuron_count(&self) -> usize {
        self.input_len() + self.layers.iter().map(Layer::output_len).sum::<usize>()
    }

    /// Global id of the first neuron of each interface: entry 0 is the input
    /// image, entry `l + 1` is the output of layer `l`.
    pub fn vertex_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.layers.len() + 1);
        let mut next = 0;
        offsets.push(next);
        next += self.input_len();
        for layer in &self.layers {
            offsets.push(next);
            next += layer.output_len();
        }
        offsets
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let (h, w) = self.input_shape;
        let ok_shape = match input.shape() {
            [n] => *n == h * w,
            [a, b] => *a == h && *b == w,
            [1, a, b] => *a == h && *b == w,
            _ => false,
        };
        if !ok_shape {
            return Err(Error::ShapeMismatch {
                expected: vec![h, w],
                found: input.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Runs the network on `input`, keeping every intermediate activation.
    pub fn forward(&self, input: &Tensor) -> Result<ForwardTrace> {
        self.check_input(input)?;
        if let Some(v) = input.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        Ok(self.forward_unchecked(input.data()))
    }

    pub(crate) fn forward_unchecked(&self, input: &[f64]) -> ForwardTrace {
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut x: Vec<f64> = input.to_vec();
        for layer in &self.layers {
            let pre = layer.linear(&x);
            let post = match layer.spec.activation {
                Activation::Relu => pre.iter().map(|&v| v.max(0.0)).collect(),
                Activation::None => pre.clone(),
            };
            x = post.clone();
            layers.push(LayerTrace { pre, post });
        }
        let logits = x;
        let probabilities = softmax(&logits);
        let predicted = argmax(&probabilities);
        ForwardTrace {
            input: input.to_vec(),
            layers,
            logits,
            probabilities,
            predicted,
        }
    }

    pub fn predict(&self, input: &Tensor) -> Result<usize> {
        Ok(self.forward(input)?.predicted)
    }

    /// Backpropagates `grad_logits` through a recorded trace. Returns the
    /// gradient with respect to the input, plus per-layer parameter gradients
    /// when `with_params` is set.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        grad_logits: &[f64],
        with_params: bool,
    ) -> (Vec<f64>, Option<Vec<LayerGradient>>) {
        let mut params: Option<Vec<LayerGradient>> = with_params.then(|| {
            self.layers
                .iter()
                .map(|l| LayerGradient {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect()
        });
        let mut grad = grad_logits.to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let lt = &trace.layers[idx];
            if layer.spec.activation == Activation::Relu {
                for (g, &p) in grad.iter_mut().zip(&lt.pre) {
                    if p <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            let x = trace.layer_input(idx);
            let p = params.as_mut().map(|v| &mut v[idx]);
            let live = (idx > 0 && self.layers[idx - 1].spec.activation == Activation::Relu)
                .then(|| trace.layers[idx - 1].pre.as_slice());
            grad = layer.backward(x, &grad, p, live);
        }
        (grad, params)
    }

    /// Gradient of `loss` with respect to the input image.
    pub fn input_gradient(&self, input: &Tensor, loss: Loss) -> Result<Tensor> {
        self.check_input(input)?;
        let trace = self.forward_unchecked(input.data());
        let (_, grad_logits) = loss.evaluate(&trace.logits, &trace.probabilities)?;
        let (grad, _) = self.backward(&trace, &grad_logits, false);
        Ok(Tensor::from_parts_unchecked(input.shape().to_vec(), grad))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
}

/// Every activation produced by one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    pub layers: Vec<LayerTrace>,
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub predicted: usize,
}

impl ForwardTrace {
    /// Activations feeding layer `idx` (post-activation of the layer before).
    pub fn layer_input(&self, idx: usize) -> &[f64] {
        if idx == 0 {
            &self.input
        } else {
            &self.layers[idx - 1].post
        }
    }
}

/// Scalar objectives that can be differentiated back to the input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Loss {
    /// `-log softmax(z)[label]`
    CrossEntropy { label: usize },
    /// `max(max_{i != target} z_i - z_target, -kappa)`
    AttackMargin { target: usize, kappa: f64 },
}

impl Loss {
    /// Returns the loss value and its gradient with respect to the logits.
    pub fn evaluate(&self, logits: &[f64], probabilities: &[f64]) -> Result<(f64, Vec<f64>)> {
        let classes = logits.len();
        match *self {
            Loss::CrossEntropy { label } => {
                if label >= classes {
                    return Err(Error::LabelOutOfRange {
                        label,
                        class_count: classes,
                    });
                }
                let value = -log_softmax(logits)[label];
                let mut grad = probabilities.to_vec();
                grad[label] -= 1.0;
                Ok((value, grad))
            }
            Loss::AttackMargin { target, kappa } => {
                if target >= classes {
                    return Err(Error::LabelOutOfRange {
                        label: target,
                        class_count: classes,
                    });
                }
                let mut grad = vec![0.0; classes];
                let (value, other) = margin(logits, target, kappa);
                if value > -kappa {
                    grad[other] = 1.0;
                    grad[target] = -1.0;
                }
                Ok((value, grad))
            }
        }
    }
}

/// Hinge value `max(max_{i != t} z_i - z_t, -kappa)` and the index of the
/// strongest competing class.
pub(crate) fn margin(logits: &[f64], target: usize, kappa: f64) -> (f64, usize) {
    let mut other = usize::MAX;
    for (i, &z) in logits.iter().enumerate() {
        if i != target && (other == usize::MAX || z > logits[other]) {
            other = i;
        }
    }
    if other == usize::MAX {
        return (-kappa, target);
    }
    ((logits[other] - logits[target]).max(-kappa), other)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Uniform random input in `[0, 1]`, for tests and benches.
pub fn random_input(shape: (usize, usize), seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..shape.0 * shape.1)
        .map(|_| rng.random::<f64>())
        .collect();
    Tensor::from_parts_unchecked(vec![shape.0, shape.1], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_mlp(seed: u64) -> NetworkModel {
        NetworkModel::initialized(
            (3, 4),
            &[
                LayerSpec::fully_connected(12, 5, Activation::Relu),
                LayerSpec::fully_connected(5, 3, Activation::None),
            ],
            seed,
        )
        .unwrap()
    }

    #[test]
    fn softmax_of_constant_is_uniform() {
        let p = softmax(&[0.0; 10]);
        for v in p {
            assert!((v - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let model = NetworkModel::initialized((28, 28), &NetworkModel::scaled_specs(), 3).unwrap();
        for seed in 0..4 {
            let trace = model.forward(&random_input((28, 28), seed)).unwrap();
            let sum: f64 = trace.probabilities.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(trace.probabilities.iter().all(|p| (0.0..=1.0).contains(p)));
            assert_eq!(trace.predicted, argmax(&trace.probabilities));
        }
    }

    #[test]
    fn forward_matches_dense_matmul() {
        let model = tiny_mlp(11);
        let x = random_input((3, 4), 5);
        let trace = model.forward(&x).unwrap();

        // independent dense evaluation: h = relu(x W1 + b1), z = h W2 + b2
        let dense = |input: &[f64], layer: &Layer, relu: bool| -> Vec<f64> {
            let (n_in, n_out) = (layer.input_len(), layer.output_len());
            (0..n_out)
                .map(|j| {
                    let mut acc = layer.bias[j];
                    for i in 0..n_in {
                        acc += input[i] * layer.weights[i * n_out + j];
                    }
                    if relu {
                        acc.max(0.0)
                    } else {
                        acc
                    }
                })
                .collect()
        };
        let h = dense(x.data(), &model.layers()[0], true);
        let z = dense(&h, &model.layers()[1], false);
        for (a, b) in z.iter().zip(&trace.logits) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn same_padding_keeps_spatial_size() {
        let g = ConvGeometry::same((1, 28, 28), 8, 5, 1);
        assert_eq!(g.output, (8, 28, 28));
        assert_eq!((g.pad_top, g.pad_left), (2, 2));
        let g = ConvGeometry::same((1, 7, 7), 2, 3, 2);
        assert_eq!(g.output, (2, 4, 4));
    }

    #[test]
    fn runs_cover_exactly_the_taps() {
        for (input, filters, size, stride) in [
            ((1, 28, 28), 2, 5, 1),
            ((2, 7, 7), 2, 3, 2),
            ((1, 6, 9), 1, 4, 3),
            ((3, 5, 4), 2, 5, 1),
            ((1, 3, 3), 1, 7, 2),
        ] {
            let g = ConvGeometry::same(input, filters, size, stride);
            let mut taps = Vec::new();
            g.for_each_tap(|o, i, w| taps.push((o, i, w)));
            let mut from_runs = Vec::new();
            g.for_each_run(|o, i, w, len| {
                for j in 0..len {
                    from_runs.push((o + j, i + j * stride, w));
                }
            });
            taps.sort_unstable();
            from_runs.sort_unstable();
            assert_eq!(taps, from_runs, "{input:?} k={size} s={stride}");
        }
    }

    #[test]
    fn rejects_bad_input() {
        let model = tiny_mlp(1);
        let wrong = Tensor::new(vec![4, 3], vec![0.1; 12]).unwrap();
        assert!(matches!(
            model.forward(&wrong),
            Err(Error::ShapeMismatch { .. })
        ));
        let out_of_range = Tensor::new(vec![3, 4], vec![1.5; 12]).unwrap();
        assert!(matches!(
            model.forward(&out_of_range),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn rejects_non_composing_layers() {
        let err = NetworkModel::zeroed(
            (4, 4),
            &[
                LayerSpec::fully_connected(15, 3, Activation::Relu),
                LayerSpec::fully_connected(3, 2, Activation::None),
            ],
        );
        assert!(matches!(err, Err(Error::InvalidModel(_))));
    }

    #[test]
    fn vertex_numbering_is_contiguous() {
        let model = NetworkModel::zeroed((28, 28), &NetworkModel::scaled_specs()).unwrap();
        assert_eq!(
            model.vertex_offsets(),
            vec![0, 784, 784 + 6272, 784 + 6272 + 128]
        );
        assert_eq!(model.neuron_count(), 784 + 6272 + 128 + 10);
        assert_eq!(model.class_count(), 10);
    }

    #[test]
    fn cross_entropy_gradient_is_p_minus_onehot() {
        let logits = [0.5, -1.0, 2.0];
        let p = softmax(&logits);
        let (_, g) = Loss::CrossEntropy { label: 1 }
            .evaluate(&logits, &p)
            .unwrap();
        assert!((g[0] - p[0]).abs() < 1e-15);
        assert!((g[1] - (p[1] - 1.0)).abs() < 1e-15);
        assert!((g[2] - p[2]).abs() < 1e-15);
    }

    #[test]
    fn saturated_margin_has_zero_gradient() {
        // a model whose logits never depend on the input: zero weights
        let mut model = tiny_mlp(2);
        for layer in model.layers_mut() {
            layer.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        model.layers_mut()[1].bias = vec![0.0, 0.0, 50.0];
        let g = model
            .input_gradient(
                &random_input((3, 4), 9),
                Loss::AttackMargin {
                    target: 2,
                    kappa: 10.0,
                },
            )
            .unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
        let g = model
            .input_gradient(&random_input((3, 4), 9), Loss::CrossEntropy { label: 0 })
            .unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_pure() {
        let model = NetworkModel::initialized((28, 28), &NetworkModel::scaled_specs(), 8).unwrap();
        let x = random_input((28, 28), 1);
        assert_eq!(model.forward(&x).unwrap(), model.forward(&x).unwrap());
    }
}
