//! Network assembly: configuration, initialization, forward pass with
//! feature-map capture, loss, and backpropagation.
//!
//! The architecture is a stack of convolutional blocks followed by dense
//! layers and a single-logit head. Each block holds `convs_per_block`
//! 3x3 same-padded convolutions (each followed by ReLU) and ends with a
//! 2x2 stride-2 max pool. After the last block the activations are
//! flattened channel-major and fed through the dense layers (ReLU after
//! every hidden layer, none after the head).

use std::collections::{BTreeMap, BTreeSet};

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ops::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, maxpool2_backward,
    maxpool2_forward, relu_backward, relu_forward, ConvParams, DenseParams, PoolIndices, ReluMask,
    KERNEL_SIZE,
};
use crate::rng::init_rng;
use crate::tensor::{Scalar, Tensor};

/// Architecture description. The default matches the lesion classifier used
/// throughout: four blocks of two convolutions with [8, 16, 32, 64] filters,
/// dense layers [2056, 1024, 64], one output logit, 3x224x224 input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    /// Filter count per block; every convolution in a block has the same
    /// number of output channels. May be empty (no convolutional stage).
    pub conv_block_filters: Vec<usize>,
    /// Convolutions per block.
    pub convs_per_block: usize,
    /// Kernel size; only 3 is supported.
    pub kernel_size: usize,
    /// Hidden dense layer widths. May be empty (head reads the flatten).
    pub dense_units: Vec<usize>,
    /// Output units; only 1 (single sigmoid logit) is supported.
    pub output_units: usize,
    /// Input shape [channels, height, width].
    pub input_shape: [usize; 3],
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            conv_block_filters: vec![8, 16, 32, 64],
            convs_per_block: 2,
            kernel_size: 3,
            dense_units: vec![2056, 1024, 64],
            output_units: 1,
            input_shape: [3, 224, 224],
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size != KERNEL_SIZE {
            return Err(Error::invalid(format!(
                "kernel_size must be {}, got {}",
                KERNEL_SIZE, self.kernel_size
            )));
        }
        if self.output_units != 1 {
            return Err(Error::invalid(format!(
                "output_units must be 1, got {}",
                self.output_units
            )));
        }
        if !self.conv_block_filters.is_empty() && self.convs_per_block == 0 {
            return Err(Error::invalid("convs_per_block must be at least 1"));
        }
        if self.conv_block_filters.iter().any(|&f| f == 0) {
            return Err(Error::invalid("conv block filter counts must be nonzero"));
        }
        let [c, h, w] = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::invalid(format!(
                "input shape must be nonzero, got [{c}, {h}, {w}]"
            )));
        }
        // Each block halves the spatial dims, so they must divide cleanly
        // and stay nonzero through every pool.
        let blocks = self.conv_block_filters.len();
        let div = 1usize << blocks;
        if h % div != 0 || w % div != 0 {
            return Err(Error::invalid(format!(
                "input {h}x{w} is not divisible by 2^{blocks} (one halving per block)"
            )));
        }
        Ok(())
    }

    /// Total number of convolution layers.
    pub fn conv_layers(&self) -> usize {
        self.conv_block_filters.len() * self.convs_per_block
    }

    /// (in_channels, out_channels) of convolution layer `layer` (0-based,
    /// counted across blocks).
    pub fn conv_channels(&self, layer: usize) -> (usize, usize) {
        let block = layer / self.convs_per_block;
        let pos = layer % self.convs_per_block;
        let out = self.conv_block_filters[block];
        let inp = if pos > 0 {
            out
        } else if block == 0 {
            self.input_shape[0]
        } else {
            self.conv_block_filters[block - 1]
        };
        (inp, out)
    }

    /// Spatial size (h, w) seen by convolution layer `layer`.
    pub fn conv_spatial(&self, layer: usize) -> (usize, usize) {
        let block = layer / self.convs_per_block;
        (
            self.input_shape[1] >> block,
            self.input_shape[2] >> block,
        )
    }

    /// Flattened length after the last block (or of the raw input if there
    /// are no blocks).
    pub fn flatten_len(&self) -> usize {
        let blocks = self.conv_block_filters.len();
        if blocks == 0 {
            return self.input_shape.iter().product();
        }
        let c = *self.conv_block_filters.last().unwrap();
        c * (self.input_shape[1] >> blocks) * (self.input_shape[2] >> blocks)
    }

    /// Widths of the dense stack including the head, paired with input size.
    fn dense_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.dense_units.len() + 1);
        let mut prev = self.flatten_len();
        for &u in &self.dense_units {
            dims.push((u, prev));
            prev = u;
        }
        dims.push((self.output_units, prev));
        dims
    }

    /// Parse the exact format produced by [`NetworkConfig::canonical_text`].
    pub fn from_canonical_text(text: &str) -> Result<NetworkConfig> {
        let mut fields = std::collections::HashMap::new();
        for part in text.split(';') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("malformed config field '{part}'")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::invalid(format!("config text missing field '{k}'")))
        };
        let parse_usize = |k: &str, v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::invalid(format!("config field '{k}' has bad value '{v}'")))
        };
        let parse_list = |k: &str| -> Result<Vec<usize>> {
            let v = get(k)?;
            let inner = v
                .strip_prefix('[')
                .and_then(|s| s.strip_suffix(']'))
                .ok_or_else(|| Error::invalid(format!("config field '{k}' has bad value '{v}'")))?;
            if inner.is_empty() {
                return Ok(Vec::new());
            }
            inner.split(',').map(|s| parse_usize(k, s)).collect()
        };
        let shape = parse_list("input_shape")?;
        if shape.len() != 3 {
            return Err(Error::invalid(format!(
                "input_shape must have 3 entries, got {}",
                shape.len()
            )));
        }
        let cfg = NetworkConfig {
            conv_block_filters: parse_list("conv_block_filters")?,
            convs_per_block: parse_usize("convs_per_block", get("convs_per_block")?)?,
            kernel_size: parse_usize("kernel_size", get("kernel_size")?)?,
            dense_units: parse_list("dense_units")?,
            output_units: parse_usize("output_units", get("output_units")?)?,
            input_shape: [shape[0], shape[1], shape[2]],
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical one-line rendering used for checkpoint compatibility
    /// digests. Field order and formatting are fixed forever.
    pub fn canonical_text(&self) -> String {
        let join = |v: &[usize]| {
            v.iter()
                .map(|u| u.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        format!(
            "conv_block_filters=[{}];convs_per_block={};kernel_size={};dense_units=[{}];output_units={};input_shape=[{},{},{}]",
            join(&self.conv_block_filters),
            self.convs_per_block,
            self.kernel_size,
            join(&self.dense_units),
            self.output_units,
            self.input_shape[0],
            self.input_shape[1],
            self.input_shape[2],
        )
    }
}

/// Weights and biases for every layer, in declaration order.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar = f32> {
    pub config: NetworkConfig,
    /// One entry per convolution layer, block by block.
    pub conv: Vec<ConvParams<T>>,
    /// Hidden dense layers followed by the head.
    pub dense: Vec<DenseParams<T>>,
}

impl<T: Scalar> Model<T> {
    /// Parameter tensors in declaration order: conv weights/bias pairs, then
    /// dense weights/bias pairs. Checkpoints and the optimizer both rely on
    /// this order.
    pub fn param_tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::with_capacity(2 * (self.conv.len() + self.dense.len()));
        for p in &self.conv {
            out.push(&p.weights);
            out.push(&p.bias);
        }
        for p in &self.dense {
            out.push(&p.weights);
            out.push(&p.bias);
        }
        out
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::with_capacity(2 * (self.conv.len() + self.dense.len()));
        for p in &mut self.conv {
            out.push(&mut p.weights);
            out.push(&mut p.bias);
        }
        for p in &mut self.dense {
            out.push(&mut p.weights);
            out.push(&mut p.bias);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_tensors().iter().map(|t| t.len()).sum()
    }
}

/// Gradient of the loss with respect to every parameter, mirroring the
/// model's layout.
#[derive(Debug, Clone)]
pub struct Gradients<T: Scalar = f32> {
    pub conv: Vec<ConvParams<T>>,
    pub dense: Vec<DenseParams<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(model: &Model<T>) -> Self {
        Gradients {
            conv: model
                .conv
                .iter()
                .map(|p| ConvParams::zeros(p.out_channels(), p.in_channels()))
                .collect(),
            dense: model
                .dense
                .iter()
                .map(|p| DenseParams::zeros(p.out_units(), p.in_units()))
                .collect(),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::with_capacity(2 * (self.conv.len() + self.dense.len()));
        for p in &self.conv {
            out.push(&p.weights);
            out.push(&p.bias);
        }
        for p in &self.dense {
            out.push(&p.weights);
            out.push(&p.bias);
        }
        out
    }

    /// Elementwise accumulate. Layouts must match.
    pub fn add_assign(&mut self, other: &Gradients<T>) -> Result<()> {
        if self.conv.len() != other.conv.len() || self.dense.len() != other.dense.len() {
            return Err(Error::invalid("gradient layouts differ"));
        }
        for (a, b) in self.conv.iter_mut().zip(&other.conv) {
            a.weights.add_assign(&b.weights)?;
            a.bias.add_assign(&b.bias)?;
        }
        for (a, b) in self.dense.iter_mut().zip(&other.dense) {
            a.weights.add_assign(&b.weights)?;
            a.bias.add_assign(&b.bias)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for p in &mut self.conv {
            p.weights.scale(factor);
            p.bias.scale(factor);
        }
        for p in &mut self.dense {
            p.weights.scale(factor);
            p.bias.scale(factor);
        }
    }
}

/// Build a model from `config` with He (fan-in) Gaussian weights and zero
/// biases. All draws happen in f64 on a stream derived from `seed`, then
/// cast, so f32 and f64 models share the same underlying values.
pub fn build_model<T: Scalar>(config: &NetworkConfig, seed: u64) -> Result<Model<T>> {
    config.validate()?;
    let mut rng = init_rng(seed);
    let mut draw = |fan_in: usize, tensor: &mut Tensor<T>| {
        let std = (2.0 / fan_in as f64).sqrt();
        // std is finite and positive for any nonzero fan-in.
        let normal = Normal::new(0.0, std).expect("valid normal");
        for v in tensor.data_mut() {
            *v = T::from_f64(normal.sample(&mut rng));
        }
    };

    let mut conv = Vec::with_capacity(config.conv_layers());
    for layer in 0..config.conv_layers() {
        let (ic, oc) = config.conv_channels(layer);
        let mut params = ConvParams::zeros(oc, ic);
        draw(ic * KERNEL_SIZE * KERNEL_SIZE, &mut params.weights);
        conv.push(params);
    }
    let mut dense = Vec::with_capacity(config.dense_units.len() + 1);
    for (out_units, in_units) in config.dense_dims() {
        let mut params = DenseParams::zeros(out_units, in_units);
        draw(in_units, &mut params.weights);
        dense.push(params);
    }
    Ok(Model {
        config: config.clone(),
        conv,
        dense,
    })
}

/// Result of a forward pass: the raw logit plus any captured post-ReLU
/// feature maps, keyed by global convolution layer id.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T: Scalar = f32> {
    pub logit: T,
    /// Captured activations, each shaped [filters, h, w] for its layer.
    pub captured: BTreeMap<usize, Tensor<T>>,
}

/// Everything the backward pass needs from a forward pass.
struct Tape<T: Scalar> {
    /// Input tensor seen by each convolution layer.
    conv_inputs: Vec<Tensor<T>>,
    /// ReLU mask recorded after each convolution layer.
    conv_masks: Vec<ReluMask>,
    /// Pool argmax record per block.
    pools: Vec<PoolIndices>,
    /// Input vector seen by each dense layer (hidden layers then head).
    dense_inputs: Vec<Tensor<T>>,
    /// ReLU mask after each hidden dense layer.
    dense_masks: Vec<ReluMask>,
    logit: T,
}

fn run_forward<T: Scalar>(
    model: &Model<T>,
    input: &Tensor<T>,
    capture: &BTreeSet<usize>,
) -> Result<(Tape<T>, BTreeMap<usize, Tensor<T>>)> {
    let cfg = &model.config;
    if input.shape() != cfg.input_shape {
        return Err(Error::invalid(format!(
            "input shape {:?} does not match configured {:?}",
            input.shape(),
            cfg.input_shape
        )));
    }
    if let Some(&bad) = capture.iter().find(|&&l| l >= cfg.conv_layers()) {
        return Err(Error::invalid(format!(
            "capture layer {bad} out of range (network has convolution layers 0..{})",
            cfg.conv_layers().saturating_sub(1)
        )));
    }

    let mut captured = BTreeMap::new();
    let mut conv_inputs = Vec::with_capacity(cfg.conv_layers());
    let mut conv_masks = Vec::with_capacity(cfg.conv_layers());
    let mut pools = Vec::with_capacity(cfg.conv_block_filters.len());

    let mut cur = input.clone();
    let mut layer = 0;
    for _block in 0..cfg.conv_block_filters.len() {
        for _ in 0..cfg.convs_per_block {
            let out = conv2d_forward(&cur, &model.conv[layer])?;
            let (act, mask) = relu_forward(&out);
            if capture.contains(&layer) {
                captured.insert(layer, act.clone());
            }
            conv_inputs.push(cur);
            conv_masks.push(mask);
            cur = act;
            layer += 1;
        }
        let (pooled, idx) = maxpool2_forward(&cur)?;
        pools.push(idx);
        cur = pooled;
    }

    let flat_len = cur.len();
    let mut flat = cur.reshaped(&[flat_len])?;
    let mut dense_inputs = Vec::with_capacity(model.dense.len());
    let mut dense_masks = Vec::with_capacity(model.dense.len().saturating_sub(1));
    for (i, params) in model.dense.iter().enumerate() {
        let out = dense_forward(&flat, params)?;
        dense_inputs.push(flat);
        if i + 1 < model.dense.len() {
            let (act, mask) = relu_forward(&out);
            dense_masks.push(mask);
            flat = act;
        } else {
            flat = out;
        }
    }
    let logit = flat.data()[0];
    Ok((
        Tape {
            conv_inputs,
            conv_masks,
            pools,
            dense_inputs,
            dense_masks,
            logit,
        },
        captured,
    ))
}

/// Forward pass. `capture` lists global convolution layer ids whose
/// post-ReLU activations should be returned alongside the logit; capturing
/// never changes the computed logit.
pub fn forward<T: Scalar>(
    model: &Model<T>,
    input: &Tensor<T>,
    capture: &[usize],
) -> Result<ForwardTrace<T>> {
    let set: BTreeSet<usize> = capture.iter().copied().collect();
    let (tape, captured) = run_forward(model, input, &set)?;
    Ok(ForwardTrace {
        logit: tape.logit,
        captured,
    })
}

/// Numerically stable binary cross-entropy on a raw logit.
///
/// Returns `(loss, d loss / d logit)`. Uses
/// `max(z, 0) - z*y + ln(1 + exp(-|z|))`, which never exponentiates a
/// positive argument; the gradient is `sigmoid(z) - y`.
pub fn bce_loss<T: Scalar>(logit: T, label: u8) -> Result<(T, T)> {
    bce_loss_weighted(logit, label, 1.0)
}

/// [`bce_loss`] with the positive-class term scaled by `pos_weight`
/// (loss and gradient both); `pos_weight = 1` is the unweighted loss.
pub fn bce_loss_weighted<T: Scalar>(logit: T, label: u8, pos_weight: f64) -> Result<(T, T)> {
    if label > 1 {
        return Err(Error::invalid(format!(
            "label must be 0 or 1, got {label}"
        )));
    }
    if !pos_weight.is_finite() || pos_weight <= 0.0 {
        return Err(Error::invalid(format!(
            "pos_weight must be positive and finite, got {pos_weight}"
        )));
    }
    let z = logit.to_f64();
    let y = label as f64;
    let loss = z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
    let sigma = sigmoid(z);
    let weight = if label == 1 { pos_weight } else { 1.0 };
    Ok((
        T::from_f64(weight * loss),
        T::from_f64(weight * (sigma - y)),
    ))
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    // Evaluate through exp(-|z|) only, for stability at large |z|.
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn backprop<T: Scalar>(model: &Model<T>, tape: &Tape<T>, d_logit: T) -> Result<(Tensor<T>, Gradients<T>)> {
    let cfg = &model.config;
    let mut grads = Gradients::zeros_like(model);

    let mut up = Tensor::filled(&[1], d_logit);
    for i in (0..model.dense.len()).rev() {
        if i + 1 < model.dense.len() {
            up = relu_backward(&tape.dense_masks[i], &up)?;
        }
        let (d_in, d_params) = dense_backward(&tape.dense_inputs[i], &model.dense[i], &up)?;
        grads.dense[i] = d_params;
        up = d_in;
    }

    let blocks = cfg.conv_block_filters.len();
    if blocks == 0 {
        let d_input = up.reshaped(&cfg.input_shape)?;
        return Ok((d_input, grads));
    }
    let last_c = *cfg.conv_block_filters.last().unwrap();
    let (h, w) = (cfg.input_shape[1] >> blocks, cfg.input_shape[2] >> blocks);
    let mut grad = up.reshaped(&[last_c, h, w])?;
    let mut layer = cfg.conv_layers();
    for block in (0..blocks).rev() {
        grad = maxpool2_backward(&tape.pools[block], &grad)?;
        for _ in 0..cfg.convs_per_block {
            layer -= 1;
            grad = relu_backward(&tape.conv_masks[layer], &grad)?;
            let (d_in, d_params) =
                conv2d_backward(&tape.conv_inputs[layer], &model.conv[layer], &grad)?;
            grads.conv[layer] = d_params;
            grad = d_in;
        }
    }
    Ok((grad, grads))
}

/// Forward + backward for one labelled sample. Returns the (optionally
/// pos-weighted) loss and the gradient of that loss with respect to every
/// parameter.
pub fn backward<T: Scalar>(
    model: &Model<T>,
    input: &Tensor<T>,
    label: u8,
    pos_weight: f64,
) -> Result<(T, Gradients<T>)> {
    let (tape, _) = run_forward(model, input, &BTreeSet::new())?;
    let (loss, d_logit) = bce_loss_weighted(tape.logit, label, pos_weight)?;
    let (_, grads) = backprop(model, &tape, d_logit)?;
    Ok((loss, grads))
}

/// Gradient of the raw logit with respect to every input element, for
/// saliency rendering. Shaped like the input.
pub fn input_gradient<T: Scalar>(model: &Model<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    let (tape, _) = run_forward(model, input, &BTreeSet::new())?;
    let (d_input, _) = backprop(model, &tape, T::one())?;
    Ok(d_input)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> NetworkConfig {
        NetworkConfig {
            conv_block_filters: vec![2],
            convs_per_block: 2,
            kernel_size: 3,
            dense_units: vec![4],
            output_units: 1,
            input_shape: [1, 8, 8],
        }
    }

    fn fill_random<T: Scalar>(t: &mut Tensor<T>, seed: u64) {
        use rand::Rng;
        let mut rng = crate::rng::derived_rng(seed, 99, 0);
        for v in t.data_mut() {
            *v = T::from_f64(rng.gen_range(-1.0..1.0));
        }
    }

    #[test]
    fn default_config_layer_shapes() {
        let cfg = NetworkConfig::default();
        assert_eq!(cfg.conv_layers(), 8);
        let out_channels: Vec<usize> = (0..8).map(|l| cfg.conv_channels(l).1).collect();
        assert_eq!(out_channels, [8, 8, 16, 16, 32, 32, 64, 64]);
        let in_channels: Vec<usize> = (0..8).map(|l| cfg.conv_channels(l).0).collect();
        assert_eq!(in_channels, [3, 8, 8, 16, 16, 32, 32, 64]);
        assert_eq!(cfg.conv_spatial(0), (224, 224));
        assert_eq!(cfg.conv_spatial(2), (112, 112));
        assert_eq!(cfg.conv_spatial(7), (28, 28));
        assert_eq!(cfg.flatten_len(), 64 * 14 * 14);
        assert_eq!(cfg.flatten_len(), 12544);
    }

    #[test]
    fn default_model_parameter_count() {
        let model: Model<f32> = build_model(&NetworkConfig::default(), 0).unwrap();
        // Independent tally: 3x3 kernels with bias, then dense with bias.
        let conv_io = [
            (3, 8),
            (8, 8),
            (8, 16),
            (16, 16),
            (16, 32),
            (32, 32),
            (32, 64),
            (64, 64),
        ];
        let mut expect = 0usize;
        for (i, o) in conv_io {
            expect += o * i * 9 + o;
        }
        for (i, o) in [(12544, 2056), (2056, 1024), (1024, 64), (64, 1)] {
            expect += o * i + o;
        }
        assert_eq!(model.param_count(), expect);
        assert_eq!(model.param_count(), 28_038_161);
    }

    #[test]
    fn first_dense_shape_follows_flatten() {
        let model: Model<f32> = build_model(&NetworkConfig::default(), 0).unwrap();
        assert_eq!(model.dense[0].weights.shape(), [2056, 12544]);
        assert_eq!(model.dense.last().unwrap().weights.shape(), [1, 64]);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = tiny_config();
        let a: Model<f32> = build_model(&cfg, 7).unwrap();
        let b: Model<f32> = build_model(&cfg, 7).unwrap();
        let c: Model<f32> = build_model(&cfg, 8).unwrap();
        for (ta, tb) in a.param_tensors().iter().zip(b.param_tensors()) {
            assert_eq!(ta.data(), tb.data());
        }
        let differs = a
            .param_tensors()
            .iter()
            .zip(c.param_tensors())
            .any(|(ta, tc)| ta.data() != tc.data());
        assert!(differs, "different seeds should give different weights");
    }

    #[test]
    fn init_biases_are_zero() {
        let model: Model<f32> = build_model(&tiny_config(), 3).unwrap();
        for p in &model.conv {
            assert!(p.bias.data().iter().all(|&v| v == 0.0));
        }
        for p in &model.dense {
            assert!(p.bias.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn init_matches_across_precisions() {
        let cfg = tiny_config();
        let a: Model<f32> = build_model(&cfg, 11).unwrap();
        let b: Model<f64> = build_model(&cfg, 11).unwrap();
        for (ta, tb) in a.param_tensors().iter().zip(b.param_tensors()) {
            for (&x, &y) in ta.data().iter().zip(tb.data()) {
                assert_eq!(x, y as f32, "f32 weights should be casts of f64 draws");
            }
        }
    }

    #[test]
    fn capture_shapes_and_logit_invariance() {
        let cfg = tiny_config();
        let model: Model<f32> = build_model(&cfg, 5).unwrap();
        let mut input = Tensor::zeros(&[1, 8, 8]);
        fill_random(&mut input, 1);
        let plain = forward(&model, &input, &[]).unwrap();
        assert!(plain.captured.is_empty());
        let traced = forward(&model, &input, &[0, 1]).unwrap();
        assert_eq!(traced.logit, plain.logit, "capture must not disturb the logit");
        assert_eq!(traced.captured[&0].shape(), [2, 8, 8]);
        assert_eq!(traced.captured[&1].shape(), [2, 8, 8]);
        // Post-ReLU maps are nonnegative by construction.
        for t in traced.captured.values() {
            assert!(t.data().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn capture_out_of_range_names_layer() {
        let model: Model<f32> = build_model(&tiny_config(), 5).unwrap();
        let input = Tensor::zeros(&[1, 8, 8]);
        let err = forward(&model, &input, &[9]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('9'), "message should name the bad layer: {msg}");
    }

    #[test]
    fn forward_rejects_wrong_input_shape() {
        let model: Model<f32> = build_model(&tiny_config(), 5).unwrap();
        let input = Tensor::zeros(&[1, 8, 6]);
        assert!(forward(&model, &input, &[]).is_err());
    }

    #[test]
    fn config_without_conv_blocks_is_linear_in_input() {
        let cfg = NetworkConfig {
            conv_block_filters: vec![],
            convs_per_block: 2,
            kernel_size: 3,
            dense_units: vec![],
            output_units: 1,
            input_shape: [1, 2, 2],
        };
        let mut model: Model<f64> = build_model(&cfg, 0).unwrap();
        assert_eq!(model.dense.len(), 1);
        assert_eq!(model.dense[0].weights.shape(), [1, 4]);
        let w = [0.5, -1.0, 2.0, 0.25];
        model.dense[0].weights.data_mut().copy_from_slice(&w);
        model.dense[0].bias.data_mut()[0] = 0.125;
        let input = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let trace = forward(&model, &input, &[]).unwrap();
        let expect = 0.5 * 1.0 - 1.0 * 2.0 + 2.0 * 3.0 + 0.25 * 4.0 + 0.125;
        assert!((trace.logit - expect).abs() < 1e-12);
    }

    #[test]
    fn bce_known_values() {
        let (loss, d) = bce_loss(0.0f64, 1).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((d + 0.5).abs() < 1e-15);
        let (loss, d) = bce_loss(0.0f64, 0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bce_is_stable_at_extreme_logits() {
        for &z in &[-500.0f64, -50.0, 50.0, 500.0] {
            for label in [0u8, 1] {
                let (loss, d) = bce_loss(z, label).unwrap();
                assert!(loss.is_finite(), "loss blew up at z={z} y={label}");
                assert!(d.is_finite());
                assert!(loss >= 0.0);
            }
        }
        // A hugely wrong logit costs about |z| nats.
        let (loss, _) = bce_loss(-500.0f64, 1).unwrap();
        assert!((loss - 500.0).abs() < 1e-9);
    }

    #[test]
    fn bce_rejects_bad_label_and_weight() {
        assert!(bce_loss(0.0f64, 2).is_err());
        assert!(bce_loss_weighted(0.0f64, 1, 0.0).is_err());
        assert!(bce_loss_weighted(0.0f64, 1, -1.0).is_err());
        assert!(bce_loss_weighted(0.0f64, 1, f64::NAN).is_err());
    }

    #[test]
    fn bce_pos_weight_scales_positive_class_only() {
        let (l1, d1) = bce_loss(0.3f64, 1).unwrap();
        let (l3, d3) = bce_loss_weighted(0.3f64, 1, 3.0).unwrap();
        assert!((l3 - 3.0 * l1).abs() < 1e-15);
        assert!((d3 - 3.0 * d1).abs() < 1e-15);
        let (l0, d0) = bce_loss(0.3f64, 0).unwrap();
        let (l0w, d0w) = bce_loss_weighted(0.3f64, 0, 3.0).unwrap();
        assert_eq!(l0, l0w);
        assert_eq!(d0, d0w);
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let h = 1e-6;
        for &z in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            for label in [0u8, 1] {
                let (_, d) = bce_loss(z, label).unwrap();
                let (lp, _) = bce_loss(z + h, label).unwrap();
                let (lm, _) = bce_loss(z - h, label).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                assert!((d - fd).abs() < 1e-8, "z={z} y={label}: {d} vs {fd}");
            }
        }
    }

    /// Full-network gradient check on a tiny configuration: every parameter
    /// and every input element against central finite differences in f64.
    #[test]
    fn backward_matches_finite_differences() {
        let cfg = tiny_config();
        let mut model: Model<f64> = build_model(&cfg, 21).unwrap();
        // Nonzero biases so those paths are exercised too.
        for (i, t) in model.param_tensors_mut().into_iter().enumerate() {
            if t.shape().len() == 1 {
                fill_random(t, 300 + i as u64);
                t.scale(0.1);
            }
        }
        let mut input = Tensor::zeros(&[1, 8, 8]);
        fill_random(&mut input, 77);
        let label = 1u8;

        let (_, grads) = backward(&model, &input, label, 1.0).unwrap();
        let d_input = {
            let (tape, _) = run_forward(&model, &input, &BTreeSet::new()).unwrap();
            let (_, d_logit) = bce_loss_weighted(tape.logit, label, 1.0).unwrap();
            backprop(&model, &tape, d_logit).unwrap().0
        };

        // Small step: large probes can cross a ReLU kink or flip a pool
        // argmax, which breaks the smoothness central differences assume.
        let h = 1e-5;
        let tol = |a: f64, n: f64| (a - n).abs() <= 1e-4 * a.abs().max(n.abs()) + 1e-8;
        let loss_at = |m: &Model<f64>, x: &Tensor<f64>| {
            let (tape, _) = run_forward(m, x, &BTreeSet::new()).unwrap();
            bce_loss_weighted(tape.logit, label, 1.0).unwrap().0
        };

        // Parameters.
        let n_tensors = grads.tensors().len();
        for ti in 0..n_tensors {
            let len = grads.tensors()[ti].len();
            for ei in 0..len {
                let mut probe = model.clone();
                let orig = probe.param_tensors()[ti].data()[ei];
                probe.param_tensors_mut()[ti].data_mut()[ei] = orig + h;
                let lp = loss_at(&probe, &input);
                probe.param_tensors_mut()[ti].data_mut()[ei] = orig - h;
                let lm = loss_at(&probe, &input);
                let fd = (lp - lm) / (2.0 * h);
                let a = grads.tensors()[ti].data()[ei];
                assert!(tol(a, fd), "tensor {ti} elem {ei}: analytic {a} vs fd {fd}");
            }
        }
        // Input.
        for ei in 0..input.len() {
            let mut probe = input.clone();
            let orig = probe.data()[ei];
            probe.data_mut()[ei] = orig + h;
            let lp = loss_at(&model, &probe);
            probe.data_mut()[ei] = orig - h;
            let lm = loss_at(&model, &probe);
            let fd = (lp - lm) / (2.0 * h);
            let a = d_input.data()[ei];
            assert!(tol(a, fd), "input elem {ei}: analytic {a} vs fd {fd}");
        }
    }

    /// A filter with all-zero weights still receives a bias gradient: the
    /// bias lifts its whole (constant) plane, the pool passes one value per
    /// window through, and the dense stack sees it.
    #[test]
    fn zero_weight_filter_bias_gradient_flows() {
        let cfg = NetworkConfig {
            conv_block_filters: vec![2],
            convs_per_block: 1,
            kernel_size: 3,
            dense_units: vec![],
            output_units: 1,
            input_shape: [1, 4, 4],
        };
        let mut model: Model<f64> = build_model(&cfg, 9).unwrap();
        // Silence filter 1's weights; give its bias a positive value so the
        // plane sits above the ReLU kink.
        {
            let w = model.conv[0].weights.data_mut();
            for k in 9..18 {
                w[k] = 0.0;
            }
        }
        let b = 0.1;
        model.conv[0].bias.data_mut()[1] = b;
        fill_random(&mut model.dense[0].weights, 4);
        let mut input = Tensor::zeros(&[1, 4, 4]);
        fill_random(&mut input, 5);

        let (_, grads) = backward(&model, &input, 0, 1.0).unwrap();
        let d_bias = grads.conv[0].bias.data()[1];
        assert!(d_bias != 0.0, "zero-weight filter should still get a bias gradient");

        // Finite differences on that bias agree.
        let h = 1e-3;
        let loss_at = |m: &Model<f64>| backward(m, &input, 0, 1.0).unwrap().0;
        let mut probe = model.clone();
        probe.conv[0].bias.data_mut()[1] = b + h;
        let lp = loss_at(&probe);
        probe.conv[0].bias.data_mut()[1] = b - h;
        let lm = loss_at(&probe);
        let fd = (lp - lm) / (2.0 * h);
        assert!(
            (d_bias - fd).abs() <= 1e-4 * d_bias.abs().max(fd.abs()) + 1e-8,
            "analytic {d_bias} vs fd {fd}"
        );
    }

    #[test]
    fn input_gradient_matches_logit_finite_differences() {
        let cfg = tiny_config();
        let model: Model<f64> = build_model(&cfg, 31).unwrap();
        let mut input = Tensor::zeros(&[1, 8, 8]);
        fill_random(&mut input, 8);
        let g = input_gradient(&model, &input).unwrap();
        assert_eq!(g.shape(), input.shape());
        let h = 1e-3;
        for ei in (0..input.len()).step_by(7) {
            let mut probe = input.clone();
            let orig = probe.data()[ei];
            probe.data_mut()[ei] = orig + h;
            let zp = forward(&model, &probe, &[]).unwrap().logit;
            probe.data_mut()[ei] = orig - h;
            let zm = forward(&model, &probe, &[]).unwrap().logit;
            let fd = (zp - zm) / (2.0 * h);
            let a = g.data()[ei];
            assert!(
                (a - fd).abs() <= 1e-4 * a.abs().max(fd.abs()) + 1e-8,
                "elem {ei}: {a} vs {fd}"
            );
        }
    }

    #[test]
    fn gradients_accumulate_and_scale() {
        let cfg = tiny_config();
        let model: Model<f64> = build_model(&cfg, 2).unwrap();
        let mut input = Tensor::zeros(&[1, 8, 8]);
        fill_random(&mut input, 3);
        let (_, g1) = backward(&model, &input, 1, 1.0).unwrap();
        let mut acc = Gradients::zeros_like(&model);
        acc.add_assign(&g1).unwrap();
        acc.add_assign(&g1).unwrap();
        acc.scale(0.5);
        for (a, b) in acc.tensors().iter().zip(g1.tensors()) {
            for (&x, &y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn backward_is_deterministic() {
        let cfg = tiny_config();
        let model: Model<f32> = build_model(&cfg, 13).unwrap();
        let mut input = Tensor::zeros(&[1, 8, 8]);
        fill_random(&mut input, 6);
        let (l1, g1) = backward(&model, &input, 1, 1.0).unwrap();
        let (l2, g2) = backward(&model, &input, 1, 1.0).unwrap();
        assert_eq!(l1, l2);
        for (a, b) in g1.tensors().iter().zip(g2.tensors()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn canonical_text_is_stable() {
        let cfg = NetworkConfig::default();
        assert_eq!(
            cfg.canonical_text(),
            "conv_block_filters=[8,16,32,64];convs_per_block=2;kernel_size=3;dense_units=[2056,1024,64];output_units=1;input_shape=[3,224,224]"
        );
    }

    #[test]
    fn canonical_text_round_trips() {
        let configs = [
            NetworkConfig::default(),
            tiny_config(),
            NetworkConfig {
                conv_block_filters: vec![],
                convs_per_block: 1,
                kernel_size: 3,
                dense_units: vec![],
                output_units: 1,
                input_shape: [1, 2, 2],
            },
        ];
        for cfg in configs {
            let parsed = NetworkConfig::from_canonical_text(&cfg.canonical_text()).unwrap();
            assert_eq!(parsed, cfg);
        }
        assert!(NetworkConfig::from_canonical_text("junk").is_err());
        assert!(NetworkConfig::from_canonical_text("conv_block_filters=[8]").is_err());
    }

    #[test]
    fn validate_rejects_bad_configs() {
        let mut cfg = NetworkConfig::default();
        cfg.kernel_size = 5;
        assert!(cfg.validate().is_err());
        let mut cfg = NetworkConfig::default();
        cfg.output_units = 2;
        assert!(cfg.validate().is_err());
        let mut cfg = NetworkConfig::default();
        cfg.input_shape = [3, 224, 100];
        assert!(cfg.validate().is_err(), "224x100 does not survive 4 halvings");
        let mut cfg = NetworkConfig::default();
        cfg.convs_per_block = 0;
        assert!(cfg.validate().is_err());
    }
}
