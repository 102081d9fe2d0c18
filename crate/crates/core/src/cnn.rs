//! Small convolutional classifier trained from scratch.
//!
//! Layers are valid-mode 3×3 convolutions with ReLU, 2×2/2 max pooling and a
//! final dense layer with softmax and cross-entropy loss. The standard model
//! is Conv(8) → Pool → Conv(16) → Pool → Dense(classes) on a 1×64×64 input;
//! other stacks can be built for experiments and gradient checks.
//!
//! Per-sample gradients may be computed in parallel; they are always summed
//! in sample-index order, so training is bit-reproducible for a fixed seed
//! regardless of thread count.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cpwt::{haar_approximation, PatternImage};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::frame::Frame;
use crate::gwo::FeatureMask;

pub const MODEL_VERSION: u32 = 1;
pub const KERNEL: usize = 3;
pub const STANDARD_LAYERS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Geometry {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Geometry { channels, height, width }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Channel-major 3-D tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub shape: Geometry,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(shape: Geometry) -> Self {
        Tensor3 { shape, data: vec![0.0; shape.len()] }
    }

    pub fn new(shape: Geometry, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::Shape(format!("tensor {shape:?} with {} values", data.len())));
        }
        Ok(Tensor3 { shape, data })
    }

    pub fn from_frame(frame: &Frame) -> Self {
        Tensor3 {
            shape: Geometry::new(1, frame.height(), frame.width()),
            data: frame.pixels().to_vec(),
        }
    }

    #[inline]
    fn idx(&self, c: usize, r: usize, col: usize) -> usize {
        (c * self.shape.height + r) * self.shape.width + col
    }

    pub fn at(&self, c: usize, r: usize, col: usize) -> f64 {
        self.data[self.idx(c, r, col)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[out][in][3][3]`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    /// `[outputs][inputs]`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(ConvLayer),
    /// 2×2 window, stride 2.
    Pool,
    Dense(DenseLayer),
}

fn he_uniform<R: Rng>(n: usize, fan_in: usize, rng: &mut R) -> Vec<f64> {
    let limit = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
}

impl ConvLayer {
    pub fn new<R: Rng>(in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        let fan_in = in_channels * KERNEL * KERNEL;
        ConvLayer {
            in_channels,
            out_channels,
            weights: he_uniform(out_channels * fan_in, fan_in, rng),
            biases: vec![0.0; out_channels],
        }
    }

    fn output_shape(&self, input: Geometry) -> Result<Geometry> {
        if input.channels != self.in_channels || input.height < KERNEL || input.width < KERNEL {
            return Err(Error::Shape(format!(
                "conv layer expects {} channels of at least 3x3, got {input:?}",
                self.in_channels
            )));
        }
        Ok(Geometry::new(self.out_channels, input.height - 2, input.width - 2))
    }
}

impl DenseLayer {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        DenseLayer {
            inputs,
            outputs,
            weights: he_uniform(inputs * outputs, inputs, rng),
            biases: vec![0.0; outputs],
        }
    }
}

fn pool_shape(input: Geometry) -> Result<Geometry> {
    if input.height < 2 || input.width < 2 {
        return Err(Error::Shape(format!("pool layer needs at least 2x2, got {input:?}")));
    }
    Ok(Geometry::new(input.channels, input.height / 2, input.width / 2))
}

/// Valid cross-correlation plus bias, before the non-linearity.
pub fn conv_pre_activation(input: &Tensor3, layer: &ConvLayer) -> Result<Tensor3> {
    let out_shape = layer.output_shape(input.shape)?;
    let (oh, ow) = (out_shape.height, out_shape.width);
    let mut out = Tensor3::zeros(out_shape);
    for o in 0..layer.out_channels {
        let plane = &mut out.data[o * oh * ow..(o + 1) * oh * ow];
        plane.iter_mut().for_each(|v| *v = layer.biases[o]);
        for i in 0..layer.in_channels {
            for a in 0..KERNEL {
                for b in 0..KERNEL {
                    let w = layer.weights[((o * layer.in_channels + i) * KERNEL + a) * KERNEL + b];
                    for y in 0..oh {
                        let src = input.idx(i, y + a, b);
                        let row = &input.data[src..src + ow];
                        for (dst, &s) in plane[y * ow..(y + 1) * ow].iter_mut().zip(row) {
                            *dst += w * s;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Convolution followed by ReLU.
pub fn conv_forward(input: &Tensor3, layer: &ConvLayer) -> Result<Tensor3> {
    let mut out = conv_pre_activation(input, layer)?;
    out.data.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(out)
}

/// Max pooling; `routing[k]` is the input index that won output `k`
/// (first in row-major order on ties).
pub fn pool_forward(input: &Tensor3) -> Result<(Tensor3, Vec<usize>)> {
    let shape = pool_shape(input.shape)?;
    let mut out = Tensor3::zeros(shape);
    let mut routing = Vec::with_capacity(shape.len());
    for c in 0..shape.channels {
        for y in 0..shape.height {
            for x in 0..shape.width {
                let mut best = input.idx(c, 2 * y, 2 * x);
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let k = input.idx(c, 2 * y + dy, 2 * x + dx);
                    if input.data[k] > input.data[best] {
                        best = k;
                    }
                }
                let o = out.idx(c, y, x);
                out.data[o] = input.data[best];
                routing.push(best);
            }
        }
    }
    Ok((out, routing))
}

pub fn dense_logits(input: &[f64], layer: &DenseLayer) -> Result<Vec<f64>> {
    if input.len() != layer.inputs {
        return Err(Error::Shape(format!("dense layer expects {} inputs, got {}", layer.inputs, input.len())));
    }
    Ok((0..layer.outputs)
        .map(|o| {
            let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
            layer.biases[o] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
        })
        .collect())
}

/// Max-shifted exponential normalization.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn dense_softmax_forward(input: &[f64], layer: &DenseLayer) -> Result<Vec<f64>> {
    Ok(softmax(&dense_logits(input, layer)?))
}

/// Index of the largest probability, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Side length of the square network input.
    pub input_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 15,
            batch_size: 16,
            seed: 11,
            input_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub geometry: Geometry,
    pub layers: Vec<Layer>,
    pub classes: Vec<String>,
    pub training: TrainConfig,
}

/// Gradient of one layer's parameters; empty for pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
    /// Mean cross-entropy over the batch.
    pub loss: f64,
}

impl Gradients {
    fn zeros_like(model: &CnnModel) -> Self {
        let layers = model
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => LayerGradient { weights: vec![0.0; c.weights.len()], biases: vec![0.0; c.biases.len()] },
                Layer::Dense(d) => LayerGradient { weights: vec![0.0; d.weights.len()], biases: vec![0.0; d.biases.len()] },
                Layer::Pool => LayerGradient { weights: Vec::new(), biases: Vec::new() },
            })
            .collect();
        Gradients { layers, loss: 0.0 }
    }

    fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
            a.biases.iter_mut().zip(&b.biases).for_each(|(x, y)| *x += y);
        }
        self.loss += other.loss;
    }

    fn scale(&mut self, k: f64) {
        for g in &mut self.layers {
            g.weights.iter_mut().for_each(|x| *x *= k);
            g.biases.iter_mut().for_each(|x| *x *= k);
        }
        self.loss *= k;
    }
}

enum Cache {
    Conv { input: Tensor3, pre: Tensor3 },
    Pool { input_shape: Geometry, routing: Vec<usize> },
    Dense { input: Vec<f64> },
}

impl CnnModel {
    /// Builds a model from an explicit layer stack, checking that shapes
    /// chain and that the stack ends in a dense layer sized to the classes.
    pub fn from_layers(geometry: Geometry, layers: Vec<Layer>, classes: Vec<String>, training: TrainConfig) -> Result<Self> {
        let model = CnnModel { geometry, layers, classes, training };
        model.check_shapes()?;
        Ok(model)
    }

    /// The five-layer Conv(8) → Pool → Conv(16) → Pool → Dense network.
    pub fn standard(geometry: Geometry, classes: Vec<String>, training: TrainConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(training.seed);
        let conv1 = ConvLayer::new(geometry.channels, 8, &mut rng);
        let s = pool_shape(conv1.output_shape(geometry)?)?;
        let conv2 = ConvLayer::new(8, 16, &mut rng);
        let s = pool_shape(conv2.output_shape(s)?)?;
        if s.is_empty() {
            return Err(Error::Shape(format!("input {geometry:?} too small for the standard network")));
        }
        let dense = DenseLayer::new(s.len(), classes.len(), &mut rng);
        Self::from_layers(
            geometry,
            vec![Layer::Conv(conv1), Layer::Pool, Layer::Conv(conv2), Layer::Pool, Layer::Dense(dense)],
            classes,
            training,
        )
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn is_standard(&self) -> bool {
        self.layers.len() == STANDARD_LAYERS
            && matches!(
                self.layers.as_slice(),
                [Layer::Conv(_), Layer::Pool, Layer::Conv(_), Layer::Pool, Layer::Dense(_)]
            )
    }

    fn check_shapes(&self) -> Result<()> {
        let mut shape = self.geometry;
        let last = self.layers.len().checked_sub(1).ok_or_else(|| Error::Shape("empty layer stack".into()))?;
        for (k, layer) in self.layers.iter().enumerate() {
            shape = match layer {
                Layer::Conv(c) => {
                    if c.weights.len() != c.out_channels * c.in_channels * KERNEL * KERNEL || c.biases.len() != c.out_channels {
                        return Err(Error::Shape(format!("layer {k}: conv parameter count")));
                    }
                    c.output_shape(shape)?
                }
                Layer::Pool => pool_shape(shape)?,
                Layer::Dense(d) => {
                    if k != last {
                        return Err(Error::Shape("dense layer must be last".into()));
                    }
                    if d.inputs != shape.len() || d.weights.len() != d.inputs * d.outputs || d.biases.len() != d.outputs {
                        return Err(Error::Shape(format!("layer {k}: dense expects {} inputs, stack gives {}", d.inputs, shape.len())));
                    }
                    if d.outputs != self.classes.len() {
                        return Err(Error::Shape(format!("dense outputs {} vs {} classes", d.outputs, self.classes.len())));
                    }
                    Geometry::new(d.outputs, 1, 1)
                }
            };
        }
        if !matches!(self.layers[last], Layer::Dense(_)) {
            return Err(Error::Shape("layer stack must end in a dense layer".into()));
        }
        Ok(())
    }

    fn forward_cached(&self, input: &Tensor3) -> Result<(Vec<f64>, Vec<Cache>)> {
        if input.shape != self.geometry {
            return Err(Error::Shape(format!("input {:?} vs model geometry {:?}", input.shape, self.geometry)));
        }
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => {
                    let pre = conv_pre_activation(&x, c)?;
                    let mut out = pre.clone();
                    out.data.iter_mut().for_each(|v| *v = v.max(0.0));
                    caches.push(Cache::Conv { input: x, pre });
                    x = out;
                }
                Layer::Pool => {
                    let (out, routing) = pool_forward(&x)?;
                    caches.push(Cache::Pool { input_shape: x.shape, routing });
                    x = out;
                }
                Layer::Dense(d) => {
                    let logits = dense_logits(&x.data, d)?;
                    caches.push(Cache::Dense { input: x.data });
                    return Ok((softmax(&logits), caches));
                }
            }
        }
        unreachable!("layer stack ends in a dense layer")
    }

    /// Class probabilities for one input.
    pub fn forward(&self, input: &Tensor3) -> Result<Vec<f64>> {
        Ok(self.forward_cached(input)?.0)
    }

    pub fn predict(&self, input: &Tensor3) -> Result<(usize, Vec<f64>)> {
        let probs = self.forward(input)?;
        Ok((argmax(&probs), probs))
    }

    /// Cross-entropy loss and parameter gradients for one sample.
    pub fn sample_gradients(&self, input: &Tensor3, target: usize) -> Result<Gradients> {
        if target >= self.n_classes() {
            return Err(Error::InvalidInput(format!("target {target} out of {} classes", self.n_classes())));
        }
        let (probs, caches) = self.forward_cached(input)?;
        let loss = -probs[target].max(f64::MIN_POSITIVE).ln();
        let mut grads = Gradients::zeros_like(self);
        grads.loss = loss;
        let mut upstream: Vec<f64> = probs;
        upstream[target] -= 1.0;
        for (k, (layer, cache)) in self.layers.iter().zip(&caches).enumerate().rev() {
            upstream = match (layer, cache) {
                (Layer::Dense(d), Cache::Dense { input }) => {
                    let g = &mut grads.layers[k];
                    let mut dx = vec![0.0; d.inputs];
                    for (o, &delta) in upstream.iter().enumerate() {
                        g.biases[o] = delta;
                        let row = &d.weights[o * d.inputs..(o + 1) * d.inputs];
                        let grow = &mut g.weights[o * d.inputs..(o + 1) * d.inputs];
                        for j in 0..d.inputs {
                            grow[j] = delta * input[j];
                            dx[j] += row[j] * delta;
                        }
                    }
                    dx
                }
                (Layer::Pool, Cache::Pool { input_shape, routing }) => {
                    let mut dx = vec![0.0; input_shape.len()];
                    for (&src, &g) in routing.iter().zip(&upstream) {
                        dx[src] += g;
                    }
                    dx
                }
                (Layer::Conv(c), Cache::Conv { input, pre }) => conv_backward(c, input, pre, &upstream, &mut grads.layers[k]),
                _ => unreachable!("cache matches its layer"),
            };
        }
        Ok(grads)
    }

    /// Mean loss and gradients over a batch, summed in sample order.
    pub fn batch_gradients(&self, inputs: &[&Tensor3], targets: &[usize], exec: Execution) -> Result<Gradients> {
        if inputs.len() != targets.len() || inputs.is_empty() {
            return Err(Error::Shape(format!("{} inputs vs {} targets", inputs.len(), targets.len())));
        }
        let per_sample = exec.map_range(inputs.len(), |i| self.sample_gradients(inputs[i], targets[i]));
        let mut total = Gradients::zeros_like(self);
        for g in per_sample {
            total.add_assign(&g?);
        }
        total.scale(1.0 / inputs.len() as f64);
        Ok(total)
    }

    fn apply(&mut self, grads: &Gradients, lr: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            let (w, b) = match layer {
                Layer::Conv(c) => (&mut c.weights, &mut c.biases),
                Layer::Dense(d) => (&mut d.weights, &mut d.biases),
                Layer::Pool => continue,
            };
            w.iter_mut().zip(&g.weights).for_each(|(p, d)| *p -= lr * d);
            b.iter_mut().zip(&g.biases).for_each(|(p, d)| *p -= lr * d);
        }
    }

    /// Flat view of every trainable parameter, layer by layer, weights first.
    pub fn parameters_mut(&mut self) -> Vec<&mut f64> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => out.extend(c.weights.iter_mut().chain(c.biases.iter_mut())),
                Layer::Dense(d) => out.extend(d.weights.iter_mut().chain(d.biases.iter_mut())),
                Layer::Pool => {}
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(&ModelFile::from(self)).expect("model serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::artifact(path, e))?;
        file.into_model().map_err(|e| Error::artifact(path, e))
    }
}

fn conv_backward(layer: &ConvLayer, input: &Tensor3, pre: &Tensor3, upstream: &[f64], grad: &mut LayerGradient) -> Vec<f64> {
    let (oh, ow) = (pre.shape.height, pre.shape.width);
    // ReLU gate
    let delta: Vec<f64> = upstream.iter().zip(&pre.data).map(|(&g, &x)| if x > 0.0 { g } else { 0.0 }).collect();
    let mut dx = vec![0.0; input.shape.len()];
    for o in 0..layer.out_channels {
        let plane = &delta[o * oh * ow..(o + 1) * oh * ow];
        grad.biases[o] = plane.iter().sum();
        for i in 0..layer.in_channels {
            for a in 0..KERNEL {
                for b in 0..KERNEL {
                    let wi = ((o * layer.in_channels + i) * KERNEL + a) * KERNEL + b;
                    let w = layer.weights[wi];
                    let mut acc = 0.0;
                    for y in 0..oh {
                        let src = input.idx(i, y + a, b);
                        let drow = &plane[y * ow..(y + 1) * ow];
                        let xrow = &input.data[src..src + ow];
                        acc += drow.iter().zip(xrow).map(|(d, x)| d * x).sum::<f64>();
                        for (dst, &d) in dx[src..src + ow].iter_mut().zip(drow) {
                            *dst += w * d;
                        }
                    }
                    grad.weights[wi] = acc;
                }
            }
        }
    }
    dx
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: CnnModel,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch SGD from a freshly initialized model.
pub fn train(model: CnnModel, inputs: &[Tensor3], labels: &[usize], exec: Execution) -> Result<TrainedModel> {
    if inputs.len() != labels.len() {
        return Err(Error::Shape(format!("{} inputs vs {} labels", inputs.len(), labels.len())));
    }
    for class in 0..model.n_classes() {
        if !labels.contains(&class) {
            return Err(Error::InvalidInput(format!("class {} has no training samples", model.classes[class])));
        }
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= model.n_classes()) {
        return Err(Error::InvalidInput(format!("label {bad} out of range")));
    }
    let cfg = model.training.clone();
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut model = model;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005E_ED0F_5A3D);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let xs: Vec<&Tensor3> = batch.iter().map(|&i| &inputs[i]).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let grads = model.batch_gradients(&xs, &ys, exec)?;
            if !grads.loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
            loss_sum += grads.loss * batch.len() as f64;
            model.apply(&grads, cfg.learning_rate);
        }
        let mean = loss_sum / inputs.len() as f64;
        log::info!("epoch {epoch}: loss {mean:.6}");
        epoch_losses.push(mean);
    }
    Ok(TrainedModel { model, epoch_losses })
}

/// Gates pattern pixels by the feature mask, reduces once with the averaging
/// Haar step, center-crops or zero-pads to `size`×`size` and scales to `[0, 1]`.
pub fn prepare_input(pattern: &PatternImage, mask: &FeatureMask, size: usize) -> Result<Tensor3> {
    let flags = mask.flags();
    let gated: Vec<f64> = pattern
        .codes()
        .iter()
        .map(|&c| if flags.get(c as usize).copied().unwrap_or(false) { c as f64 } else { 0.0 })
        .collect();
    let reduced = haar_approximation(&Frame::new(pattern.width(), pattern.height(), gated)?)?;
    let mut out = Tensor3::zeros(Geometry::new(1, size, size));
    let (rh, rw) = (reduced.height(), reduced.width());
    // source/destination offsets for a centered placement
    let place = |src: usize| -> (usize, usize) {
        if src >= size {
            ((src - size) / 2, 0)
        } else {
            (0, (size - src) / 2)
        }
    };
    let (src_r, dst_r) = place(rh);
    let (src_c, dst_c) = place(rw);
    for r in 0..rh.min(size) {
        for c in 0..rw.min(size) {
            out.data[(dst_r + r) * size + dst_c + c] = reduced.at(src_r + r, src_c + c) / 255.0;
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    kind: String,
    shape: Vec<usize>,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    geometry: Geometry,
    layers: Vec<LayerRecord>,
    classes: Vec<String>,
    training: TrainConfig,
}

impl From<&CnnModel> for ModelFile {
    fn from(m: &CnnModel) -> Self {
        let layers = m
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => LayerRecord {
                    kind: "conv".into(),
                    shape: vec![c.out_channels, c.in_channels, KERNEL, KERNEL],
                    weights: c.weights.clone(),
                    biases: c.biases.clone(),
                },
                Layer::Pool => LayerRecord { kind: "maxpool".into(), shape: vec![2, 2], weights: vec![], biases: vec![] },
                Layer::Dense(d) => LayerRecord {
                    kind: "dense".into(),
                    shape: vec![d.outputs, d.inputs],
                    weights: d.weights.clone(),
                    biases: d.biases.clone(),
                },
            })
            .collect();
        ModelFile {
            version: MODEL_VERSION,
            geometry: m.geometry,
            layers,
            classes: m.classes.clone(),
            training: m.training.clone(),
        }
    }
}

impl ModelFile {
    fn into_model(self) -> Result<CnnModel> {
        if self.version != MODEL_VERSION {
            return Err(Error::InvalidInput(format!("unsupported model version {}", self.version)));
        }
        let layers = self
            .layers
            .into_iter()
            .map(|r| match (r.kind.as_str(), r.shape.as_slice()) {
                ("conv", &[out_channels, in_channels, KERNEL, KERNEL]) => Ok(Layer::Conv(ConvLayer {
                    in_channels,
                    out_channels,
                    weights: r.weights,
                    biases: r.biases,
                })),
                ("maxpool", &[2, 2]) => Ok(Layer::Pool),
                ("dense", &[outputs, inputs]) => Ok(Layer::Dense(DenseLayer { inputs, outputs, weights: r.weights, biases: r.biases })),
                (kind, shape) => Err(Error::InvalidInput(format!("unknown layer {kind} with shape {shape:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        if layers.iter().any(|l| match l {
            Layer::Conv(c) => c.weights.iter().chain(&c.biases).any(|v| !v.is_finite()),
            Layer::Dense(d) => d.weights.iter().chain(&d.biases).any(|v| !v.is_finite()),
            Layer::Pool => false,
        }) {
            return Err(Error::NonFinite("model weights".into()));
        }
        CnnModel::from_layers(self.geometry, layers, self.classes, self.training)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(c: usize, h: usize, w: usize, data: Vec<f64>) -> Tensor3 {
        Tensor3::new(Geometry::new(c, h, w), data).unwrap()
    }

    fn single_conv(kernel: [f64; 9], bias: f64) -> ConvLayer {
        ConvLayer { in_channels: 1, out_channels: 1, weights: kernel.to_vec(), biases: vec![bias] }
    }

    #[test]
    fn identity_kernel_crops_input() {
        let input = t(1, 4, 4, (0..16).map(|v| v as f64).collect());
        let mut k = [0.0; 9];
        k[4] = 1.0;
        let out = conv_forward(&input, &single_conv(k, 0.0)).unwrap();
        assert_eq!(out.shape, Geometry::new(1, 2, 2));
        assert_eq!(out.data, vec![5.0, 6.0, 9.0, 10.0]);
    }

    #[test]
    fn all_ones_sum_and_relu() {
        let input = t(1, 3, 3, vec![1.0; 9]);
        assert_eq!(conv_forward(&input, &single_conv([1.0; 9], 0.0)).unwrap().data, vec![9.0]);
        assert_eq!(conv_forward(&input, &single_conv([0.0; 9], -2.0)).unwrap().data, vec![0.0]);
        assert_eq!(conv_pre_activation(&input, &single_conv([0.0; 9], -2.0)).unwrap().data, vec![-2.0]);
        assert!(conv_forward(&t(1, 2, 5, vec![0.0; 10]), &single_conv([1.0; 9], 0.0)).is_err());
    }

    #[test]
    fn pool_examples() {
        let (out, routing) = pool_forward(&t(1, 2, 2, vec![1.0, 3.0, 2.0, 0.0])).unwrap();
        assert_eq!(out.data, vec![3.0]);
        assert_eq!(routing, vec![1]);
        let (out, routing) = pool_forward(&t(1, 2, 2, vec![4.0; 4])).unwrap();
        assert_eq!((out.data[0], routing[0]), (4.0, 0));
        let (out, _) = pool_forward(&t(2, 4, 5, vec![0.0; 40])).unwrap();
        assert_eq!(out.shape, Geometry::new(2, 2, 2));
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0, 0.0, 0.0]);
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let z = [0.3, -1.2, 2.5];
        let shifted: Vec<f64> = z.iter().map(|v| v + 10.0).collect();
        for (a, b) in softmax(&z).iter().zip(softmax(&shifted)) {
            assert!((a - b).abs() < 1e-15);
        }
        let p = softmax(&[1f64.ln(), 2f64.ln(), 3f64.ln()]);
        for (v, e) in p.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((v - e).abs() < 1e-15);
        }
        assert!((softmax(&[700.0, -700.0, 3.0]).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        assert_eq!(argmax(&[0.1, 0.7, 0.2]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    fn toy_model(seed: u64) -> CnnModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = vec![
            Layer::Conv(ConvLayer::new(1, 2, &mut rng)),
            Layer::Pool,
            Layer::Conv(ConvLayer::new(2, 3, &mut rng)),
            Layer::Dense(DenseLayer::new(3, 2, &mut rng)),
        ];
        CnnModel::from_layers(Geometry::new(1, 8, 8), layers, vec!["a".into(), "b".into()], TrainConfig::default()).unwrap()
    }

    #[test]
    fn zero_input_gives_zero_conv_weight_gradients() {
        let model = toy_model(1);
        let g = model.sample_gradients(&Tensor3::zeros(model.geometry), 1).unwrap();
        assert!(g.layers[0].weights.iter().all(|&w| w == 0.0));
        assert!(g.layers[3].biases.iter().any(|&b| b != 0.0));
    }

    #[test]
    fn perfect_prediction_has_zero_loss_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut dense = DenseLayer::new(4, 2, &mut rng);
        dense.weights.iter_mut().for_each(|w| *w = 0.0);
        dense.biases = vec![1000.0, -1000.0];
        let model = CnnModel::from_layers(Geometry::new(1, 2, 2), vec![Layer::Dense(dense)], vec!["a".into(), "b".into()], TrainConfig::default()).unwrap();
        let g = model.sample_gradients(&t(1, 2, 2, vec![0.5; 4]), 0).unwrap();
        assert_eq!(g.loss, 0.0);
        assert!(g.layers[0].biases.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn pool_backward_conserves_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = CnnModel::from_layers(
            Geometry::new(1, 4, 4),
            vec![Layer::Pool, Layer::Dense(DenseLayer::new(4, 3, &mut rng))],
            vec!["a".into(), "b".into(), "c".into()],
            TrainConfig::default(),
        )
        .unwrap();
        let input = t(1, 4, 4, (0..16).map(|_| rng.gen::<f64>()).collect());
        let (probs, caches) = model.forward_cached(&input).unwrap();
        let Layer::Dense(d) = &model.layers[1] else { unreachable!() };
        let mut up = probs;
        up[2] -= 1.0;
        let dpool: Vec<f64> = (0..4).map(|j| (0..3).map(|o| d.weights[o * 4 + j] * up[o]).sum()).collect();
        let Cache::Pool { input_shape, routing } = &caches[0] else { unreachable!() };
        let mut dx = vec![0.0; input_shape.len()];
        for (&s, &g) in routing.iter().zip(&dpool) {
            dx[s] += g;
        }
        let routed: f64 = dx.iter().sum();
        let incoming: f64 = dpool.iter().sum();
        assert!((routed - incoming).abs() < 1e-15);
        assert_eq!(dx.iter().filter(|&&v| v != 0.0).count(), 4);
    }

    #[test]
    fn standard_model_has_five_layers_and_round_trips() {
        let m = CnnModel::standard(Geometry::new(1, 64, 64), vec!["x".into(), "y".into(), "z".into()], TrainConfig::default()).unwrap();
        assert!(m.is_standard());
        let Layer::Dense(d) = &m.layers[4] else { panic!() };
        assert_eq!(d.inputs, 16 * 14 * 14);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.json");
        m.save(&p).unwrap();
        assert_eq!(CnnModel::load(&p).unwrap(), m);
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"kind\":\"conv\"") && text.contains("\"version\":1"));
    }

    #[test]
    fn predict_rejects_wrong_geometry() {
        let m = toy_model(2);
        assert!(m.predict(&Tensor3::zeros(Geometry::new(1, 9, 8))).is_err());
    }

    #[test]
    fn zero_learning_rate_leaves_weights() {
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let mut m = toy_model(3);
        m.training = cfg;
        let xs: Vec<Tensor3> = (0..4).map(|k| Tensor3::new(m.geometry, vec![k as f64 / 4.0; 64]).unwrap()).collect();
        let trained = train(m.clone(), &xs, &[0, 1, 0, 1], Execution::Sequential).unwrap();
        assert_eq!(trained.model.layers, m.layers);
        assert_eq!(trained.epoch_losses.len(), 3);
    }

    #[test]
    fn training_rejects_missing_class() {
        let m = toy_model(3);
        let xs = vec![Tensor3::zeros(m.geometry); 2];
        assert!(train(m, &xs, &[0, 0], Execution::Sequential).is_err());
    }

    fn pattern_const(w: usize, h: usize, code: u8) -> PatternImage {
        PatternImage::new(w, h, vec![code; w * h]).unwrap()
    }

    #[test]
    fn prepare_input_examples() {
        let all = FeatureMask::all(256);
        let p = pattern_const(128, 128, 40);
        let x = prepare_input(&p, &all, 64).unwrap();
        assert!(x.data.iter().all(|&v| v == 40.0 / 255.0));

        let only_zero = FeatureMask { dim: 256, selected: vec![0], position: vec![0.0; 256] };
        let x = prepare_input(&p, &only_zero, 64).unwrap();
        assert!(x.data.iter().all(|&v| v == 0.0));

        let with_40 = FeatureMask { dim: 256, selected: vec![3, 40], position: vec![0.0; 256] };
        assert!(prepare_input(&p, &with_40, 64).unwrap().data.iter().all(|&v| v == 40.0 / 255.0));

        // 64×64 pattern reduces to 32×32 and lands centered
        let small = prepare_input(&pattern_const(64, 64, 255), &all, 64).unwrap();
        assert_eq!(small.at(0, 15, 15), 0.0);
        assert_eq!(small.at(0, 16, 16), 1.0);
        assert_eq!(small.at(0, 47, 47), 1.0);
        assert_eq!(small.at(0, 48, 48), 0.0);
    }
}
