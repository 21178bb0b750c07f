//! Minimal self-contained convolutional network: two valid (unpadded)
//! convolution layers with ReLU and max pooling, then two fully connected
//! layers. Trains with plain SGD on softmax cross-entropy and doubles as a
//! frozen feature extractor: the flattened absolute activations of the last
//! convolutional stage feed the health indicator.
//!
//! Everything runs in 64-bit floats with deterministic initialization,
//! shuffling, and batch reduction, so a seed fully reproduces a training run.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let count = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            values: vec![0.0; count],
        }
    }

    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Tensor> {
        let count: usize = shape.iter().product();
        if count != values.len() || shape.is_empty() {
            return Err(Error::Shape(format!(
                "shape {shape:?} expects {count} values, got {}",
                values.len()
            )));
        }
        Ok(Tensor { shape, values })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One convolution stage: square kernel, output channels, stride, pool side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: usize,
    pub channels: usize,
    pub stride: usize,
    pub pool: usize,
}

/// Architecture of the network; all activation sizes derive from this.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_side: usize,
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
    pub fc1_width: usize,
    pub class_count: usize,
}

impl Default for NetworkSpec {
    /// Defaults sized for 600x600 inputs: 32x32 and 16x16 kernels, modest
    /// channel counts, and strides that keep the flattened activation
    /// dimension tractable for covariance modelling.
    fn default() -> Self {
        NetworkSpec {
            input_side: 600,
            conv1: ConvSpec {
                kernel: 32,
                channels: 8,
                stride: 3,
                pool: 2,
            },
            conv2: ConvSpec {
                kernel: 16,
                channels: 16,
                stride: 3,
                pool: 2,
            },
            fc1_width: 64,
            class_count: 2,
        }
    }
}

/// Spatial sizes derived from a [`NetworkSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerDims {
    pub conv1_side: usize,
    pub pool1_side: usize,
    pub conv2_side: usize,
    pub pool2_side: usize,
    /// Flattened activation length: pool2_side^2 * conv2.channels.
    pub flat: usize,
}

fn conv_out_side(input: usize, kernel: usize, stride: usize, name: &'static str) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(Error::Config {
            field: name,
            reason: "kernel and stride must be >= 1".into(),
        });
    }
    if kernel > input {
        return Err(Error::Config {
            field: name,
            reason: format!("kernel {kernel} exceeds incoming side {input}"),
        });
    }
    Ok((input - kernel) / stride + 1)
}

impl NetworkSpec {
    /// Reduced spec for oracle tests: 8x8 input, 3x3 kernels, 2 channels per
    /// conv stage, fc1 width 4, 2 classes. Pooling is arranged so the last
    /// conv stage keeps a 2x2 spatial map (flat activation dim 8).
    pub fn tiny() -> NetworkSpec {
        NetworkSpec {
            input_side: 8,
            conv1: ConvSpec {
                kernel: 3,
                channels: 2,
                stride: 1,
                pool: 1,
            },
            conv2: ConvSpec {
                kernel: 3,
                channels: 2,
                stride: 1,
                pool: 2,
            },
            fc1_width: 4,
            class_count: 2,
        }
    }

    /// Check every derived dimension and return them.
    pub fn dims(&self) -> Result<LayerDims> {
        if self.conv1.channels == 0 || self.conv2.channels == 0 {
            return Err(Error::Config {
                field: "channels",
                reason: "channel counts must be >= 1".into(),
            });
        }
        if self.fc1_width == 0 {
            return Err(Error::Config {
                field: "fc1_width",
                reason: "must be >= 1".into(),
            });
        }
        if self.class_count < 2 {
            return Err(Error::Config {
                field: "class_count",
                reason: "need at least 2 classes".into(),
            });
        }
        let conv1_side = conv_out_side(
            self.input_side,
            self.conv1.kernel,
            self.conv1.stride,
            "conv1_output_side",
        )?;
        if self.conv1.pool == 0 || conv1_side / self.conv1.pool == 0 {
            return Err(Error::Config {
                field: "pool1_output_side",
                reason: format!(
                    "pooling {} collapses conv1 side {conv1_side} below 1",
                    self.conv1.pool
                ),
            });
        }
        let pool1_side = conv1_side / self.conv1.pool;
        let conv2_side = conv_out_side(
            pool1_side,
            self.conv2.kernel,
            self.conv2.stride,
            "conv2_output_side",
        )?;
        if self.conv2.pool == 0 || conv2_side / self.conv2.pool == 0 {
            return Err(Error::Config {
                field: "pool2_output_side",
                reason: format!(
                    "pooling {} collapses conv2 side {conv2_side} below 1",
                    self.conv2.pool
                ),
            });
        }
        let pool2_side = conv2_side / self.conv2.pool;
        Ok(LayerDims {
            conv1_side,
            pool1_side,
            conv2_side,
            pool2_side,
            flat: pool2_side * pool2_side * self.conv2.channels,
        })
    }

    /// Dimension of the extracted activation vector.
    pub fn activation_dim(&self) -> Result<usize> {
        Ok(self.dims()?.flat)
    }
}

/// Network parameters plus the spec they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    dims: LayerDims,
    conv1_w: Tensor,
    conv1_b: Tensor,
    conv2_w: Tensor,
    conv2_b: Tensor,
    fc1_w: Tensor,
    fc1_b: Tensor,
    fc2_w: Tensor,
    fc2_b: Tensor,
    init_seed: u64,
}

pub const PARAM_NAMES: [&str; 8] = [
    "conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc1_w", "fc1_b", "fc2_w", "fc2_b",
];

impl Network {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn dims(&self) -> &LayerDims {
        &self.dims
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn parameters(&self) -> [&Tensor; 8] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.fc1_w,
            &self.fc1_b,
            &self.fc2_w,
            &self.fc2_b,
        ]
    }

    pub fn parameters_mut(&mut self) -> [&mut Tensor; 8] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.fc1_w,
            &mut self.fc1_b,
            &mut self.fc2_w,
            &mut self.fc2_b,
        ]
    }

    /// Rebuild a network from persisted parts, revalidating every shape.
    pub fn from_parts(spec: NetworkSpec, tensors: Vec<Tensor>, init_seed: u64) -> Result<Network> {
        let dims = spec.dims()?;
        let expected = expected_shapes(&spec, &dims);
        if tensors.len() != expected.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((t, exp), name) in tensors.iter().zip(&expected).zip(PARAM_NAMES) {
            if t.shape() != exp.as_slice() {
                return Err(Error::Shape(format!(
                    "parameter {name} has shape {:?}, expected {exp:?}",
                    t.shape()
                )));
            }
            if t.values().iter().any(|v| !v.is_finite()) {
                return Err(Error::Input(format!("parameter {name} has non-finite values")));
            }
        }
        let mut it = tensors.into_iter();
        Ok(Network {
            spec,
            dims,
            conv1_w: it.next().unwrap(),
            conv1_b: it.next().unwrap(),
            conv2_w: it.next().unwrap(),
            conv2_b: it.next().unwrap(),
            fc1_w: it.next().unwrap(),
            fc1_b: it.next().unwrap(),
            fc2_w: it.next().unwrap(),
            fc2_b: it.next().unwrap(),
            init_seed,
        })
    }
}

fn expected_shapes(spec: &NetworkSpec, dims: &LayerDims) -> Vec<Vec<usize>> {
    vec![
        vec![spec.conv1.channels, 1, spec.conv1.kernel, spec.conv1.kernel],
        vec![spec.conv1.channels],
        vec![
            spec.conv2.channels,
            spec.conv1.channels,
            spec.conv2.kernel,
            spec.conv2.kernel,
        ],
        vec![spec.conv2.channels],
        vec![spec.fc1_width, dims.flat],
        vec![spec.fc1_width],
        vec![spec.class_count, spec.fc1_width],
        vec![spec.class_count],
    ]
}

/// Initialize with uniform Xavier weights `U(-a, a)`, `a = sqrt(6/(fan_in +
/// fan_out))`, and zero biases. Deterministic given the seed; draw order is
/// conv1_w, conv2_w, fc1_w, fc2_w.
pub fn init_network(spec: &NetworkSpec, seed: u64) -> Result<Network> {
    let dims = spec.dims()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |shape: Vec<usize>, fan_in: usize, fan_out: usize| -> Tensor {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let count: usize = shape.iter().product();
        let values = (0..count).map(|_| rng.random_range(-bound..bound)).collect();
        Tensor { shape, values }
    };

    let k1 = spec.conv1.kernel;
    let k2 = spec.conv2.kernel;
    let conv1_w = draw(
        vec![spec.conv1.channels, 1, k1, k1],
        k1 * k1,
        spec.conv1.channels * k1 * k1,
    );
    let conv2_w = draw(
        vec![spec.conv2.channels, spec.conv1.channels, k2, k2],
        spec.conv1.channels * k2 * k2,
        spec.conv2.channels * k2 * k2,
    );
    let fc1_w = draw(vec![spec.fc1_width, dims.flat], dims.flat, spec.fc1_width);
    let fc2_w = draw(
        vec![spec.class_count, spec.fc1_width],
        spec.fc1_width,
        spec.class_count,
    );

    Ok(Network {
        conv1_b: Tensor::zeros(&[spec.conv1.channels]),
        conv2_b: Tensor::zeros(&[spec.conv2.channels]),
        fc1_b: Tensor::zeros(&[spec.fc1_width]),
        fc2_b: Tensor::zeros(&[spec.class_count]),
        conv1_w,
        conv2_w,
        fc1_w,
        fc2_w,
        dims,
        spec: spec.clone(),
        init_seed: seed,
    })
}

/// Valid convolution: `out[oc][oy][ox] = b[oc] + sum_ic,ky,kx w*in`.
fn conv_forward(
    input: &[f64],
    in_ch: usize,
    in_side: usize,
    w: &[f64],
    b: &[f64],
    out_ch: usize,
    kernel: usize,
    stride: usize,
    out_side: usize,
    out: &mut [f64],
) {
    for oc in 0..out_ch {
        let w_oc = &w[oc * in_ch * kernel * kernel..(oc + 1) * in_ch * kernel * kernel];
        for oy in 0..out_side {
            for ox in 0..out_side {
                let mut acc = b[oc];
                for ic in 0..in_ch {
                    let w_ic = &w_oc[ic * kernel * kernel..(ic + 1) * kernel * kernel];
                    let base = ic * in_side * in_side + (oy * stride) * in_side + ox * stride;
                    for ky in 0..kernel {
                        let row = &input[base + ky * in_side..base + ky * in_side + kernel];
                        let wrow = &w_ic[ky * kernel..(ky + 1) * kernel];
                        acc += row.iter().zip(wrow).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
                out[oc * out_side * out_side + oy * out_side + ox] = acc;
            }
        }
    }
}

/// Max pooling over the ReLU of `pre`; records the flat argmax (per channel
/// plane) for the backward pass. Ties resolve to the first index.
fn relu_maxpool(
    pre: &[f64],
    channels: usize,
    side: usize,
    pool: usize,
    out_side: usize,
    out: &mut [f64],
    argmax: &mut [usize],
) {
    for c in 0..channels {
        let plane = &pre[c * side * side..(c + 1) * side * side];
        for py in 0..out_side {
            for px in 0..out_side {
                let mut best = f64::NEG_INFINITY;
                let mut best_at = 0usize;
                for dy in 0..pool {
                    for dx in 0..pool {
                        let at = (py * pool + dy) * side + (px * pool + dx);
                        let v = plane[at].max(0.0);
                        if v > best {
                            best = v;
                            best_at = at;
                        }
                    }
                }
                let o = c * out_side * out_side + py * out_side + px;
                out[o] = best;
                argmax[o] = best_at;
            }
        }
    }
}

struct ForwardCache {
    conv1_pre: Vec<f64>,
    pool1_out: Vec<f64>,
    pool1_argmax: Vec<usize>,
    conv2_pre: Vec<f64>,
    pool2_out: Vec<f64>,
    pool2_argmax: Vec<usize>,
    fc1_pre: Vec<f64>,
    fc1_out: Vec<f64>,
    logits: Vec<f64>,
}

fn forward_cached(net: &Network, image: &[f64]) -> Result<ForwardCache> {
    let spec = &net.spec;
    let d = &net.dims;
    if image.len() != spec.input_side * spec.input_side {
        return Err(Error::Shape(format!(
            "image has {} values, expected {} for side {}",
            image.len(),
            spec.input_side * spec.input_side,
            spec.input_side
        )));
    }

    let c1 = spec.conv1.channels;
    let mut conv1_pre = vec![0.0; c1 * d.conv1_side * d.conv1_side];
    conv_forward(
        image,
        1,
        spec.input_side,
        net.conv1_w.values(),
        net.conv1_b.values(),
        c1,
        spec.conv1.kernel,
        spec.conv1.stride,
        d.conv1_side,
        &mut conv1_pre,
    );
    let mut pool1_out = vec![0.0; c1 * d.pool1_side * d.pool1_side];
    let mut pool1_argmax = vec![0usize; pool1_out.len()];
    relu_maxpool(
        &conv1_pre,
        c1,
        d.conv1_side,
        spec.conv1.pool,
        d.pool1_side,
        &mut pool1_out,
        &mut pool1_argmax,
    );

    let c2 = spec.conv2.channels;
    let mut conv2_pre = vec![0.0; c2 * d.conv2_side * d.conv2_side];
    conv_forward(
        &pool1_out,
        c1,
        d.pool1_side,
        net.conv2_w.values(),
        net.conv2_b.values(),
        c2,
        spec.conv2.kernel,
        spec.conv2.stride,
        d.conv2_side,
        &mut conv2_pre,
    );
    let mut pool2_out = vec![0.0; c2 * d.pool2_side * d.pool2_side];
    let mut pool2_argmax = vec![0usize; pool2_out.len()];
    relu_maxpool(
        &conv2_pre,
        c2,
        d.conv2_side,
        spec.conv2.pool,
        d.pool2_side,
        &mut pool2_out,
        &mut pool2_argmax,
    );

    // FC1 with ReLU.
    let mut fc1_pre = vec![0.0; spec.fc1_width];
    for (h, pre) in fc1_pre.iter_mut().enumerate() {
        let row = &net.fc1_w.values()[h * d.flat..(h + 1) * d.flat];
        *pre = net.fc1_b.values()[h]
            + row.iter().zip(&pool2_out).map(|(w, x)| w * x).sum::<f64>();
    }
    let fc1_out: Vec<f64> = fc1_pre.iter().map(|v| v.max(0.0)).collect();

    // FC2 to logits; softmax lives in the loss.
    let mut logits = vec![0.0; spec.class_count];
    for (c, logit) in logits.iter_mut().enumerate() {
        let row = &net.fc2_w.values()[c * spec.fc1_width..(c + 1) * spec.fc1_width];
        *logit = net.fc2_b.values()[c]
            + row.iter().zip(&fc1_out).map(|(w, x)| w * x).sum::<f64>();
    }

    Ok(ForwardCache {
        conv1_pre,
        pool1_out,
        pool1_argmax,
        conv2_pre,
        pool2_out,
        pool2_argmax,
        fc1_pre,
        fc1_out,
        logits,
    })
}

/// Logits plus the flattened absolute last-conv activations.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    pub activations: Vec<f64>,
}

/// Run the network on one unit-range image (flat, row-major,
/// `input_side^2` values).
pub fn forward(net: &Network, image: &[f64]) -> Result<ForwardOutput> {
    let cache = forward_cached(net, image)?;
    Ok(ForwardOutput {
        logits: cache.logits,
        activations: cache.pool2_out.iter().map(|v| v.abs()).collect(),
    })
}

/// Flattened absolute activations of the last convolutional stage.
pub fn extract_activation(net: &Network, image: &[f64]) -> Result<Vec<f64>> {
    Ok(forward(net, image)?.activations)
}

/// Stable softmax cross-entropy; returns the loss and d(loss)/d(logits).
fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (logits[label] - m);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

fn backward(net: &Network, image: &[f64], cache: &ForwardCache, dlogits: &[f64], grads: &mut [Tensor; 8]) {
    let spec = &net.spec;
    let d = &net.dims;

    // FC2.
    let mut dfc1_out = vec![0.0; spec.fc1_width];
    for c in 0..spec.class_count {
        let g = dlogits[c];
        grads[7].values_mut()[c] += g;
        let row = &net.fc2_w.values()[c * spec.fc1_width..(c + 1) * spec.fc1_width];
        let wrow = &mut grads[6].values_mut()[c * spec.fc1_width..(c + 1) * spec.fc1_width];
        for h in 0..spec.fc1_width {
            wrow[h] += g * cache.fc1_out[h];
            dfc1_out[h] += g * row[h];
        }
    }

    // FC1 (through its ReLU).
    let mut dflat = vec![0.0; d.flat];
    for h in 0..spec.fc1_width {
        let g = if cache.fc1_pre[h] > 0.0 { dfc1_out[h] } else { 0.0 };
        if g == 0.0 {
            continue;
        }
        grads[5].values_mut()[h] += g;
        let row = &net.fc1_w.values()[h * d.flat..(h + 1) * d.flat];
        let wrow = &mut grads[4].values_mut()[h * d.flat..(h + 1) * d.flat];
        for f in 0..d.flat {
            wrow[f] += g * cache.pool2_out[f];
            dflat[f] += g * row[f];
        }
    }

    // Pool2 + ReLU back into conv2 pre-activations.
    let c2 = spec.conv2.channels;
    let mut dconv2_pre = vec![0.0; c2 * d.conv2_side * d.conv2_side];
    for (o, &g) in dflat.iter().enumerate() {
        if g != 0.0 {
            let c = o / (d.pool2_side * d.pool2_side);
            let at = c * d.conv2_side * d.conv2_side + cache.pool2_argmax[o];
            if cache.conv2_pre[at] > 0.0 {
                dconv2_pre[at] += g;
            }
        }
    }

    // Conv2: weight/bias grads and gradient into pool1 output.
    let c1 = spec.conv1.channels;
    let k2 = spec.conv2.kernel;
    let s2 = spec.conv2.stride;
    let mut dpool1 = vec![0.0; c1 * d.pool1_side * d.pool1_side];
    for oc in 0..c2 {
        for oy in 0..d.conv2_side {
            for ox in 0..d.conv2_side {
                let g = dconv2_pre[oc * d.conv2_side * d.conv2_side + oy * d.conv2_side + ox];
                if g == 0.0 {
                    continue;
                }
                grads[3].values_mut()[oc] += g;
                for ic in 0..c1 {
                    let in_base = ic * d.pool1_side * d.pool1_side + (oy * s2) * d.pool1_side + ox * s2;
                    let w_base = (oc * c1 + ic) * k2 * k2;
                    for ky in 0..k2 {
                        let in_row = in_base + ky * d.pool1_side;
                        let w_row = w_base + ky * k2;
                        for kx in 0..k2 {
                            grads[2].values_mut()[w_row + kx] += g * cache.pool1_out[in_row + kx];
                            dpool1[in_row + kx] += g * net.conv2_w.values()[w_row + kx];
                        }
                    }
                }
            }
        }
    }

    // Pool1 + ReLU back into conv1 pre-activations.
    let mut dconv1_pre = vec![0.0; c1 * d.conv1_side * d.conv1_side];
    for (o, &g) in dpool1.iter().enumerate() {
        if g != 0.0 {
            let c = o / (d.pool1_side * d.pool1_side);
            let at = c * d.conv1_side * d.conv1_side + cache.pool1_argmax[o];
            if cache.conv1_pre[at] > 0.0 {
                dconv1_pre[at] += g;
            }
        }
    }

    // Conv1 weight/bias grads (input gradient not needed).
    let k1 = spec.conv1.kernel;
    let s1 = spec.conv1.stride;
    for oc in 0..c1 {
        for oy in 0..d.conv1_side {
            for ox in 0..d.conv1_side {
                let g = dconv1_pre[oc * d.conv1_side * d.conv1_side + oy * d.conv1_side + ox];
                if g == 0.0 {
                    continue;
                }
                grads[1].values_mut()[oc] += g;
                let in_base = (oy * s1) * spec.input_side + ox * s1;
                let w_base = oc * k1 * k1;
                for ky in 0..k1 {
                    let in_row = in_base + ky * spec.input_side;
                    let w_row = w_base + ky * k1;
                    for kx in 0..k1 {
                        grads[0].values_mut()[w_row + kx] += g * image[in_row + kx];
                    }
                }
            }
        }
    }
}

fn zero_gradients(net: &Network) -> [Tensor; 8] {
    let p = net.parameters();
    [
        Tensor::zeros(p[0].shape()),
        Tensor::zeros(p[1].shape()),
        Tensor::zeros(p[2].shape()),
        Tensor::zeros(p[3].shape()),
        Tensor::zeros(p[4].shape()),
        Tensor::zeros(p[5].shape()),
        Tensor::zeros(p[6].shape()),
        Tensor::zeros(p[7].shape()),
    ]
}

/// Mean cross-entropy over the batch, matching gradient tensors in
/// [`PARAM_NAMES`] order, and the argmax prediction per sample. Per-sample
/// work fans out in parallel and is reduced in index order, so the result is
/// independent of thread count.
fn batch_step(
    net: &Network,
    images: &[Vec<f64>],
    labels: &[usize],
) -> Result<(f64, [Tensor; 8], Vec<usize>)> {
    if images.is_empty() {
        return Err(Error::Input("batch is empty".into()));
    }
    if images.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} images vs {} labels",
            images.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= net.spec.class_count) {
        return Err(Error::Input(format!(
            "label {bad} outside [0, {})",
            net.spec.class_count
        )));
    }

    let inv_n = 1.0 / images.len() as f64;
    let per_sample: Vec<Result<(f64, [Tensor; 8], usize)>> = images
        .par_iter()
        .zip(labels.par_iter())
        .map(|(image, &label)| {
            let cache = forward_cached(net, image)?;
            let (loss, mut dlogits) = cross_entropy(&cache.logits, label);
            let pred = cache
                .logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap();
            for g in dlogits.iter_mut() {
                *g *= inv_n;
            }
            let mut grads = zero_gradients(net);
            backward(net, image, &cache, &dlogits, &mut grads);
            Ok((loss * inv_n, grads, pred))
        })
        .collect();

    let mut total_loss = 0.0;
    let mut grads = zero_gradients(net);
    let mut preds = Vec::with_capacity(images.len());
    for r in per_sample {
        let (loss, g, pred) = r?;
        total_loss += loss;
        preds.push(pred);
        for (acc, part) in grads.iter_mut().zip(g.iter()) {
            for (a, b) in acc.values_mut().iter_mut().zip(part.values()) {
                *a += b;
            }
        }
    }
    Ok((total_loss, grads, preds))
}

/// Mean cross-entropy over the batch and matching gradient tensors, in
/// [`PARAM_NAMES`] order.
pub fn loss_and_gradients(
    net: &Network,
    images: &[Vec<f64>],
    labels: &[usize],
) -> Result<(f64, [Tensor; 8])> {
    let (loss, grads, _) = batch_step(net, images, labels)?;
    Ok((loss, grads))
}

/// SGD hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOptions {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

/// Loss/accuracy measured over one epoch's (pre-update) forward passes.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub accuracy: f64,
}

/// Train by plain SGD with a seeded shuffle per epoch. Deterministic given
/// the seed; `epochs = 0` returns the network unchanged.
pub fn train(
    net: Network,
    images: &[Vec<f64>],
    labels: &[usize],
    opts: &TrainOptions,
) -> Result<(Network, Vec<EpochStats>)> {
    if images.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    if images.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} images vs {} labels",
            images.len(),
            labels.len()
        )));
    }
    if !(opts.learning_rate.is_finite() && opts.learning_rate >= 0.0) {
        return Err(Error::Parameter {
            name: "learning_rate",
            reason: format!("must be finite and >= 0, got {}", opts.learning_rate),
        });
    }
    if opts.batch_size == 0 {
        return Err(Error::Parameter {
            name: "batch_size",
            reason: "must be >= 1".into(),
        });
    }

    let mut net = net;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut trace = Vec::with_capacity(opts.epochs);

    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut correct = 0usize;
        let mut seen = 0usize;
        for batch in order.chunks(opts.batch_size) {
            let batch_images: Vec<Vec<f64>> = batch.iter().map(|&i| images[i].clone()).collect();
            let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (loss, grads, preds) = batch_step(&net, &batch_images, &batch_labels)?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    reason: format!("non-finite loss {loss}"),
                });
            }
            // Pre-update predictions feed the training-accuracy trace.
            correct += preds
                .iter()
                .zip(&batch_labels)
                .filter(|(p, l)| p == l)
                .count();
            epoch_loss += loss * batch.len() as f64;
            seen += batch.len();
            for (param, grad) in net.parameters_mut().iter_mut().zip(grads.iter()) {
                for (p, g) in param.values_mut().iter_mut().zip(grad.values()) {
                    *p -= opts.learning_rate * g;
                }
            }
        }
        trace.push(EpochStats {
            epoch,
            mean_loss: epoch_loss / seen as f64,
            accuracy: correct as f64 / seen as f64,
        });
    }
    Ok((net, trace))
}
