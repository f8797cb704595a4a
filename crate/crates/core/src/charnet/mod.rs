//! Convolutional character classifier.
//!
//! The network is described by an ordered list of [`LayerSpec`]s and maps
//! each window patch to a distribution over alphabet-plus-blank. Convolution
//! and fully-connected layers are followed by a ReLU; when a batch-norm layer
//! directly follows, the ReLU (and the layer's dropout) moves after the
//! normalization. The final [`LayerSpec::Softmax`] is a linear projection
//! followed by softmax.
//!
//! Training consumes gradients with respect to the pre-softmax logits, so the
//! CTC loss and softmax are fused outside this module.

mod checkpoint;
mod kernels;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, MAGIC};
pub use train::{Gradients, Sgd, TrainPass, TrainSchedule};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ctc::EmissionMatrix;
use crate::error::{Error, Result};
use crate::logspace::{log_softmax, softmax};
use crate::textline::WindowSequence;
use kernels::{col2im, gemm, im2col, ConvGeom};

pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the current batch in the running batch-norm statistics.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        maps: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        dropout: f64,
    },
    BatchNorm,
    MaxPool {
        window: usize,
        stride: usize,
    },
    Dense {
        units: usize,
        dropout: f64,
    },
    Softmax {
        classes: usize,
    },
}

impl LayerSpec {
    fn conv(maps: usize, dropout: f64) -> Self {
        LayerSpec::Conv {
            maps,
            kernel: 3,
            stride: 1,
            pad: 1,
            dropout,
        }
    }

    fn pool() -> Self {
        LayerSpec::MaxPool {
            window: 2,
            stride: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub layers: Vec<LayerSpec>,
    pub input_channels: usize,
    /// Edge of the square input patch.
    pub input_size: usize,
    pub seed: u64,
}

impl NetworkConfig {
    /// The full 12-convolution topology: four blocks of three 3x3
    /// convolutions (50 to 400 maps) with batch norm and 2x2 pooling,
    /// then fully-connected layers of 900 and 200 units.
    pub fn full(classes: usize, input_channels: usize, seed: u64) -> Self {
        use LayerSpec::BatchNorm;
        let layers = vec![
            LayerSpec::conv(50, 0.0),
            BatchNorm,
            LayerSpec::conv(100, 0.1),
            LayerSpec::conv(100, 0.1),
            BatchNorm,
            LayerSpec::pool(),
            LayerSpec::conv(150, 0.2),
            BatchNorm,
            LayerSpec::conv(200, 0.2),
            LayerSpec::conv(200, 0.2),
            BatchNorm,
            LayerSpec::pool(),
            LayerSpec::conv(250, 0.3),
            BatchNorm,
            LayerSpec::conv(300, 0.3),
            LayerSpec::conv(300, 0.3),
            BatchNorm,
            LayerSpec::pool(),
            LayerSpec::conv(350, 0.4),
            BatchNorm,
            LayerSpec::conv(400, 0.4),
            LayerSpec::conv(400, 0.4),
            BatchNorm,
            LayerSpec::pool(),
            LayerSpec::Dense {
                units: 900,
                dropout: 0.5,
            },
            LayerSpec::Dense {
                units: 200,
                dropout: 0.0,
            },
            LayerSpec::Softmax { classes },
        ];
        NetworkConfig {
            layers,
            input_channels,
            input_size: 32,
            seed,
        }
    }

    /// Reduced profile for CPU training:
    /// conv16-BN-conv16-pool-conv32-BN-conv32-pool-FC64-softmax.
    pub fn desk(classes: usize, input_channels: usize, seed: u64) -> Self {
        use LayerSpec::BatchNorm;
        let layers = vec![
            LayerSpec::conv(16, 0.0),
            BatchNorm,
            LayerSpec::conv(16, 0.0),
            LayerSpec::pool(),
            LayerSpec::conv(32, 0.0),
            BatchNorm,
            LayerSpec::conv(32, 0.0),
            LayerSpec::pool(),
            LayerSpec::Dense {
                units: 64,
                dropout: 0.0,
            },
            LayerSpec::Softmax { classes },
        ];
        NetworkConfig {
            layers,
            input_channels,
            input_size: 32,
            seed,
        }
    }

    pub fn classes(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::Softmax { classes }) => *classes,
            _ => 0,
        }
    }

    /// First 8 bytes of the SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> u64 {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }

    fn plan(&self) -> Result<Vec<StagePlan>> {
        let bad = |msg: String| Error::InvalidConfig(msg);
        if self.input_channels == 0 || self.input_size == 0 {
            return Err(bad("input must have at least one channel and pixel".into()));
        }
        match self.layers.last() {
            Some(LayerSpec::Softmax { classes }) if *classes >= 2 => {}
            Some(LayerSpec::Softmax { .. }) => return Err(bad("softmax needs at least 2 classes".into())),
            _ => return Err(bad("last layer must be softmax".into())),
        }
        let mut shape = [self.input_channels, self.input_size, self.input_size];
        let mut flat = false;
        let mut plans: Vec<StagePlan> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let next_is_bn = matches!(self.layers.get(i + 1), Some(LayerSpec::BatchNorm));
            let check_dropout = |d: f64| {
                if (0.0..1.0).contains(&d) {
                    Ok(())
                } else {
                    Err(bad(format!("layer {i}: dropout {d} outside [0, 1)")))
                }
            };
            let [c, h, w] = shape;
            let plan = match layer {
                LayerSpec::Conv {
                    maps,
                    kernel,
                    stride,
                    pad,
                    dropout,
                } => {
                    check_dropout(*dropout)?;
                    if flat {
                        return Err(bad(format!("layer {i}: convolution after a dense layer")));
                    }
                    if *maps == 0 || *kernel == 0 || *stride == 0 {
                        return Err(bad(format!("layer {i}: zero-sized convolution")));
                    }
                    if h + 2 * pad < *kernel || w + 2 * pad < *kernel {
                        return Err(bad(format!("layer {i}: kernel larger than padded input")));
                    }
                    let out_h = (h + 2 * pad - kernel) / stride + 1;
                    let out_w = (w + 2 * pad - kernel) / stride + 1;
                    StagePlan::new(layer, shape, [*maps, out_h, out_w], !next_is_bn, *dropout, next_is_bn)
                }
                LayerSpec::BatchNorm => {
                    let (relu, dropout) = match plans.last() {
                        Some(prev) if prev.deferred => (true, prev.deferred_dropout),
                        _ => (false, 0.0),
                    };
                    StagePlan::new(layer, shape, shape, relu, dropout, false)
                }
                LayerSpec::MaxPool { window, stride } => {
                    if flat {
                        return Err(bad(format!("layer {i}: pooling after a dense layer")));
                    }
                    if *window == 0 || *stride == 0 {
                        return Err(bad(format!("layer {i}: zero-sized pooling")));
                    }
                    if h < *window || w < *window {
                        return Err(bad(format!(
                            "layer {i}: pooling {window}x{window} reduces {h}x{w} below 1x1"
                        )));
                    }
                    let out = [c, (h - window) / stride + 1, (w - window) / stride + 1];
                    StagePlan::new(layer, shape, out, false, 0.0, false)
                }
                LayerSpec::Dense { units, dropout } => {
                    check_dropout(*dropout)?;
                    if *units == 0 {
                        return Err(bad(format!("layer {i}: dense layer without units")));
                    }
                    flat = true;
                    StagePlan::new(layer, shape, [*units, 1, 1], !next_is_bn, *dropout, next_is_bn)
                }
                LayerSpec::Softmax { classes } => {
                    if i + 1 != self.layers.len() {
                        return Err(bad(format!("layer {i}: softmax must be last")));
                    }
                    StagePlan::new(layer, shape, [*classes, 1, 1], false, 0.0, false)
                }
            };
            shape = plan.out_shape;
            plans.push(plan);
        }
        Ok(plans)
    }
}

struct StagePlan {
    spec: LayerSpec,
    in_shape: [usize; 3],
    out_shape: [usize; 3],
    relu: bool,
    dropout: f64,
    /// Activation postponed to a following batch norm.
    deferred: bool,
    deferred_dropout: f64,
}

impl StagePlan {
    fn new(
        spec: &LayerSpec,
        in_shape: [usize; 3],
        out_shape: [usize; 3],
        relu: bool,
        dropout: f64,
        deferred: bool,
    ) -> Self {
        StagePlan {
            spec: spec.clone(),
            in_shape,
            out_shape,
            relu,
            dropout: if deferred { 0.0 } else { dropout },
            deferred,
            deferred_dropout: if deferred { dropout } else { 0.0 },
        }
    }
}

/// A named parameter or statistics buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    /// False for running statistics, which SGD does not touch.
    pub trainable: bool,
}

#[derive(Clone, Debug)]
enum Op {
    Conv {
        geom: ConvGeom,
        maps: usize,
        weight: usize,
        bias: usize,
    },
    BatchNorm {
        gamma: usize,
        beta: usize,
        mean: usize,
        var: usize,
    },
    MaxPool {
        window: usize,
        stride: usize,
    },
    /// Fully-connected; also the softmax projection.
    Dense {
        units: usize,
        weight: usize,
        bias: usize,
    },
}

#[derive(Clone, Debug)]
struct Stage {
    op: Op,
    relu: bool,
    dropout: f64,
    in_shape: [usize; 3],
    out_shape: [usize; 3],
}

impl Stage {
    fn in_len(&self) -> usize {
        self.in_shape.iter().product()
    }

    fn out_len(&self) -> usize {
        self.out_shape.iter().product()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics and dropout.
    Train,
    /// Running statistics, no dropout.
    Infer,
}

#[derive(Clone, Debug)]
pub struct NetworkParams {
    config: NetworkConfig,
    stages: Vec<Stage>,
    tensors: Vec<Tensor>,
    step_counter: u64,
    flatten_dim: usize,
}

impl PartialEq for NetworkParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.step_counter == other.step_counter
            && self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| {
                a.name == b.name
                    && a.shape == b.shape
                    && a.data.len() == b.data.len()
                    && a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Allocates and initializes a network. Weights are drawn from a normal
/// with standard deviation `sqrt(2 / fan_in)`; the softmax projection uses
/// `0.1 * sqrt(1 / fan_in)` so that fresh networks emit near-uniform rows.
/// Biases start at zero,
/// batch-norm scales at one.
pub fn build_network(cfg: &NetworkConfig) -> Result<NetworkParams> {
    let plans = cfg.plan()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tensors = Vec::new();
    let mut stages = Vec::with_capacity(plans.len());
    let mut flatten_dim = 0;
    let push = |tensors: &mut Vec<Tensor>, name: String, shape: Vec<usize>, data: Vec<f64>, trainable| {
        tensors.push(Tensor {
            name,
            shape,
            data,
            trainable,
        });
        tensors.len() - 1
    };
    for (i, plan) in plans.into_iter().enumerate() {
        let [c, h, w] = plan.in_shape;
        let in_len = c * h * w;
        let op = match plan.spec {
            LayerSpec::Conv {
                maps,
                kernel,
                stride,
                pad,
                ..
            } => {
                let fan_in = c * kernel * kernel;
                let geom = ConvGeom {
                    channels: c,
                    height: h,
                    width: w,
                    kernel,
                    stride,
                    pad,
                    out_h: plan.out_shape[1],
                    out_w: plan.out_shape[2],
                };
                let data = normal_vec(&mut rng, maps * fan_in, (2.0 / fan_in as f64).sqrt());
                let weight = push(&mut tensors, format!("{i}.conv.weight"), vec![maps, c, kernel, kernel], data, true);
                let bias = push(&mut tensors, format!("{i}.conv.bias"), vec![maps], vec![0.0; maps], true);
                Op::Conv {
                    geom,
                    maps,
                    weight,
                    bias,
                }
            }
            LayerSpec::BatchNorm => Op::BatchNorm {
                gamma: push(&mut tensors, format!("{i}.bn.gamma"), vec![c], vec![1.0; c], true),
                beta: push(&mut tensors, format!("{i}.bn.beta"), vec![c], vec![0.0; c], true),
                mean: push(&mut tensors, format!("{i}.bn.running_mean"), vec![c], vec![0.0; c], false),
                var: push(&mut tensors, format!("{i}.bn.running_var"), vec![c], vec![1.0; c], false),
            },
            LayerSpec::MaxPool { window, stride } => Op::MaxPool { window, stride },
            LayerSpec::Dense { units, .. } | LayerSpec::Softmax { classes: units } => {
                let is_softmax = matches!(plan.spec, LayerSpec::Softmax { .. });
                if flatten_dim == 0 {
                    flatten_dim = in_len;
                }
                let std = if is_softmax {
                    0.1 * (1.0 / in_len as f64).sqrt()
                } else {
                    (2.0 / in_len as f64).sqrt()
                };
                let data = normal_vec(&mut rng, units * in_len, std);
                let kind = if is_softmax { "softmax" } else { "fc" };
                let weight = push(&mut tensors, format!("{i}.{kind}.weight"), vec![units, in_len], data, true);
                let bias = push(&mut tensors, format!("{i}.{kind}.bias"), vec![units], vec![0.0; units], true);
                Op::Dense {
                    units,
                    weight,
                    bias,
                }
            }
        };
        stages.push(Stage {
            op,
            relu: plan.relu,
            dropout: plan.dropout,
            in_shape: plan.in_shape,
            out_shape: plan.out_shape,
        });
    }
    Ok(NetworkParams {
        config: cfg.clone(),
        stages,
        tensors,
        step_counter: 0,
        flatten_dim,
    })
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    let dist = Normal::new(0.0, std).expect("finite standard deviation");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Per-stage values kept for the backward pass.
#[derive(Clone, Debug, Default)]
struct StageTrace {
    /// Stage input; kept only for convolution and dense stages.
    input: Vec<f64>,
    /// Normalized activations and per-channel `1/sqrt(var + eps)`.
    bn_xhat: Vec<f64>,
    bn_inv_std: Vec<f64>,
    bn_mean: Vec<f64>,
    bn_var: Vec<f64>,
    /// Flat input index of each pooled maximum.
    pool_argmax: Vec<u32>,
    /// Post-ReLU values (before dropout).
    activated: Vec<f64>,
    /// Inverted-dropout multipliers (0 or 1/(1-p)).
    drop_mask: Vec<f64>,
}

impl NetworkParams {
    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn classes(&self) -> usize {
        self.config.classes()
    }

    pub fn input_len(&self) -> usize {
        self.config.input_channels * self.config.input_size * self.config.input_size
    }

    /// Width of the flattened feature vector entering the first dense layer.
    pub fn flatten_dim(&self) -> usize {
        self.flatten_dim
    }

    pub fn step_counter(&self) -> u64 {
        self.step_counter
    }

    pub fn config_hash(&self) -> u64 {
        self.config.hash()
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    /// Mutable tensor access for checkpoint loading and gradient probes;
    /// shapes must not change.
    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors
            .iter()
            .filter(|t| t.trainable)
            .map(|t| t.data.len())
            .sum()
    }

    fn check_batch(&self, patches: &[f64], batch: usize) -> Result<()> {
        if batch == 0 || patches.len() != batch * self.input_len() {
            return Err(Error::invalid(format!(
                "patch buffer holds {} values, expected {batch} x {}",
                patches.len(),
                self.input_len()
            )));
        }
        Ok(())
    }

    /// Pre-softmax scores, `[batch, classes]`.
    pub fn logits(&self, patches: &[f64], batch: usize, mode: Mode) -> Result<Vec<f64>> {
        self.check_batch(patches, batch)?;
        let mut rng = self.dropout_rng();
        Ok(self.run(patches, batch, mode, &mut rng, None))
    }

    /// Class probabilities, `[batch, classes]`.
    pub fn forward_batch(&self, patches: &[f64], batch: usize, mode: Mode) -> Result<Vec<f64>> {
        let logits = self.logits(patches, batch, mode)?;
        Ok(logits
            .chunks_exact(self.classes())
            .flat_map(softmax)
            .collect())
    }

    /// Emission matrix of one line: each window is classified on its own in
    /// inference mode. Windows are spread over the current rayon pool; the
    /// result does not depend on the pool size.
    pub fn emissions_for_line(&self, windows: &WindowSequence) -> Result<EmissionMatrix> {
        let [_, c, p, _] = windows.shape();
        if c != self.config.input_channels || p != self.config.input_size {
            return Err(Error::invalid(format!(
                "windows are {c}x{p}x{p}, network expects {}x{1}x{1}",
                self.config.input_channels, self.config.input_size
            )));
        }
        let classes = self.classes();
        let rows: Vec<Vec<f64>> = (0..windows.positions())
            .into_par_iter()
            .map(|t| {
                let mut rng = self.dropout_rng();
                let logits = self.run(windows.patch(t), 1, Mode::Infer, &mut rng, None);
                log_softmax(&logits)
            })
            .collect();
        EmissionMatrix::from_log_probs(windows.positions(), classes, rows.concat())
    }

    fn dropout_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x9e37_79b9_7f4a_7c15);
        rng.set_stream(self.step_counter);
        rng
    }

    fn run(
        &self,
        input: &[f64],
        batch: usize,
        mode: Mode,
        rng: &mut ChaCha8Rng,
        mut trace: Option<&mut Vec<StageTrace>>,
    ) -> Vec<f64> {
        let mut x = input.to_vec();
        for stage in &self.stages {
            let mut tr = StageTrace::default();
            let mut y = match &stage.op {
                Op::Conv {
                    geom,
                    maps,
                    weight,
                    bias,
                } => conv_forward(
                    &x,
                    batch,
                    geom,
                    *maps,
                    &self.tensors[*weight].data,
                    &self.tensors[*bias].data,
                ),
                Op::Dense {
                    units,
                    weight,
                    bias,
                } => dense_forward(
                    &x,
                    batch,
                    stage.in_len(),
                    *units,
                    &self.tensors[*weight].data,
                    &self.tensors[*bias].data,
                ),
                Op::BatchNorm {
                    gamma,
                    beta,
                    mean,
                    var,
                } => {
                    let channels = stage.in_shape[0];
                    let spatial = stage.in_shape[1] * stage.in_shape[2];
                    let (gamma, beta) = (&self.tensors[*gamma].data, &self.tensors[*beta].data);
                    match mode {
                        Mode::Infer => bn_infer(
                            &x,
                            batch,
                            channels,
                            spatial,
                            gamma,
                            beta,
                            &self.tensors[*mean].data,
                            &self.tensors[*var].data,
                        ),
                        Mode::Train => {
                            let out = bn_train(&x, batch, channels, spatial, gamma, beta);
                            tr.bn_xhat = out.xhat;
                            tr.bn_inv_std = out.inv_std;
                            tr.bn_mean = out.mean;
                            tr.bn_var = out.var;
                            out.y
                        }
                    }
                }
                Op::MaxPool { window, stride } => {
                    let (y, argmax) = pool_forward(&x, batch, stage.in_shape, stage.out_shape, *window, *stride);
                    tr.pool_argmax = argmax;
                    y
                }
            };
            if stage.relu {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            if mode == Mode::Train && stage.dropout > 0.0 {
                let keep = 1.0 - stage.dropout;
                let mask: Vec<f64> = (0..y.len())
                    .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                if trace.is_some() && stage.relu {
                    tr.activated = y.clone();
                }
                y.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                tr.drop_mask = mask;
            } else if trace.is_some() && stage.relu {
                tr.activated = y.clone();
            }
            if let Some(t) = trace.as_deref_mut() {
                if matches!(stage.op, Op::Conv { .. } | Op::Dense { .. }) {
                    tr.input = std::mem::take(&mut x);
                }
                t.push(tr);
            }
            x = y;
        }
        x
    }

    /// Backpropagates `dlogits` through a recorded training pass.
    fn backward_trace(&self, trace: &[StageTrace], batch: usize, dlogits: &[f64]) -> Vec<Vec<f64>> {
        let mut grads: Vec<Vec<f64>> = self
            .tensors
            .iter()
            .map(|t| if t.trainable { vec![0.0; t.data.len()] } else { Vec::new() })
            .collect();
        let mut dy = dlogits.to_vec();
        for (i, (stage, tr)) in self.stages.iter().zip(trace).enumerate().rev() {
            if !tr.drop_mask.is_empty() {
                dy.iter_mut().zip(&tr.drop_mask).for_each(|(d, m)| *d *= m);
            }
            if stage.relu {
                dy.iter_mut()
                    .zip(&tr.activated)
                    .for_each(|(d, a)| if *a <= 0.0 { *d = 0.0 });
            }
            let need_dx = i > 0;
            dy = match &stage.op {
                Op::Conv {
                    geom,
                    maps,
                    weight,
                    bias,
                } => {
                    let (dw, db, dx) = conv_backward(
                        &tr.input,
                        &dy,
                        batch,
                        geom,
                        *maps,
                        &self.tensors[*weight].data,
                        need_dx,
                    );
                    grads[*weight] = dw;
                    grads[*bias] = db;
                    dx
                }
                Op::Dense {
                    units,
                    weight,
                    bias,
                } => {
                    let (dw, db, dx) = dense_backward(
                        &tr.input,
                        &dy,
                        batch,
                        stage.in_len(),
                        *units,
                        &self.tensors[*weight].data,
                        need_dx,
                    );
                    grads[*weight] = dw;
                    grads[*bias] = db;
                    dx
                }
                Op::BatchNorm { gamma, beta, .. } => {
                    let channels = stage.in_shape[0];
                    let spatial = stage.in_shape[1] * stage.in_shape[2];
                    let (dgamma, dbeta, dx) = bn_backward(
                        &dy,
                        &tr.bn_xhat,
                        &tr.bn_inv_std,
                        &self.tensors[*gamma].data,
                        batch,
                        channels,
                        spatial,
                    );
                    grads[*gamma] = dgamma;
                    grads[*beta] = dbeta;
                    dx
                }
                Op::MaxPool { .. } => {
                    let in_len = stage.in_len();
                    let out_len = stage.out_len();
                    let mut dx = vec![0.0; batch * in_len];
                    for b in 0..batch {
                        for j in 0..out_len {
                            let src = tr.pool_argmax[b * out_len + j] as usize;
                            dx[b * in_len + src] += dy[b * out_len + j];
                        }
                    }
                    dx
                }
            };
        }
        grads
    }

    /// Folds the batch statistics of a training pass into the running
    /// batch-norm estimates.
    fn update_running_stats(&mut self, trace: &[StageTrace], batch: usize) {
        for (stage, tr) in self.stages.iter().zip(trace) {
            if let Op::BatchNorm { mean, var, .. } = stage.op {
                let n = batch * stage.in_shape[1] * stage.in_shape[2];
                let unbias = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
                for (r, m) in self.tensors[mean].data.iter_mut().zip(&tr.bn_mean) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
                }
                for (r, v) in self.tensors[var].data.iter_mut().zip(&tr.bn_var) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * unbias;
                }
            }
        }
    }
}

fn conv_forward(
    x: &[f64],
    batch: usize,
    g: &ConvGeom,
    maps: usize,
    weight: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let in_len = g.channels * g.height * g.width;
    let (rows, n) = (g.col_rows(), g.col_cols());
    let mut cols = vec![0.0; rows * n];
    let mut y = vec![0.0; batch * maps * n];
    for b in 0..batch {
        im2col(&x[b * in_len..(b + 1) * in_len], g, &mut cols);
        let out = &mut y[b * maps * n..(b + 1) * maps * n];
        for (m, row) in out.chunks_exact_mut(n).enumerate() {
            row.fill(bias[m]);
        }
        gemm(maps, rows, n, weight, (rows, 1), &cols, (n, 1), 1.0, out, n);
    }
    y
}

fn conv_backward(
    x: &[f64],
    dy: &[f64],
    batch: usize,
    g: &ConvGeom,
    maps: usize,
    weight: &[f64],
    need_dx: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let in_len = g.channels * g.height * g.width;
    let (rows, n) = (g.col_rows(), g.col_cols());
    let mut cols = vec![0.0; rows * n];
    let mut dcols = vec![0.0; rows * n];
    let mut dw = vec![0.0; maps * rows];
    let mut db = vec![0.0; maps];
    let mut dx = if need_dx { vec![0.0; batch * in_len] } else { Vec::new() };
    for b in 0..batch {
        let dout = &dy[b * maps * n..(b + 1) * maps * n];
        for (m, row) in dout.chunks_exact(n).enumerate() {
            db[m] += row.iter().sum::<f64>();
        }
        im2col(&x[b * in_len..(b + 1) * in_len], g, &mut cols);
        // dW += dOut · colsᵀ
        gemm(maps, n, rows, dout, (n, 1), &cols, (1, n), 1.0, &mut dw, rows);
        if need_dx {
            // dcols = Wᵀ · dOut
            gemm(rows, maps, n, weight, (1, rows), dout, (n, 1), 0.0, &mut dcols, n);
            col2im(&dcols, g, &mut dx[b * in_len..(b + 1) * in_len]);
        }
    }
    (dw, db, dx)
}

fn dense_forward(x: &[f64], batch: usize, dim: usize, units: usize, weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let mut y = Vec::with_capacity(batch * units);
    for _ in 0..batch {
        y.extend_from_slice(bias);
    }
    // y = x · Wᵀ
    gemm(batch, dim, units, x, (dim, 1), weight, (1, dim), 1.0, &mut y, units);
    y
}

fn dense_backward(
    x: &[f64],
    dy: &[f64],
    batch: usize,
    dim: usize,
    units: usize,
    weight: &[f64],
    need_dx: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dw = vec![0.0; units * dim];
    // dW = dYᵀ · X
    gemm(units, batch, dim, dy, (1, units), x, (dim, 1), 0.0, &mut dw, dim);
    let mut db = vec![0.0; units];
    for row in dy.chunks_exact(units) {
        db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    let dx = if need_dx {
        let mut dx = vec![0.0; batch * dim];
        gemm(batch, units, dim, dy, (units, 1), weight, (dim, 1), 0.0, &mut dx, dim);
        dx
    } else {
        Vec::new()
    };
    (dw, db, dx)
}

struct BnOut {
    y: Vec<f64>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
}

/// Batch statistics per channel over batch and spatial positions; layout
/// `[batch, channels, spatial]`.
fn bn_train(x: &[f64], batch: usize, channels: usize, spatial: usize, gamma: &[f64], beta: &[f64]) -> BnOut {
    let n = (batch * spatial) as f64;
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    for b in 0..batch {
        for c in 0..channels {
            let base = (b * channels + c) * spatial;
            mean[c] += x[base..base + spatial].iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    for b in 0..batch {
        for c in 0..channels {
            let base = (b * channels + c) * spatial;
            var[c] += x[base..base + spatial]
                .iter()
                .map(|v| (v - mean[c]).powi(2))
                .sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let base = (b * channels + c) * spatial;
            for i in base..base + spatial {
                xhat[i] = (x[i] - mean[c]) * inv_std[c];
                y[i] = gamma[c] * xhat[i] + beta[c];
            }
        }
    }
    BnOut {
        y,
        xhat,
        inv_std,
        mean,
        var,
    }
}

#[allow(clippy::too_many_arguments)]
fn bn_infer(
    x: &[f64],
    batch: usize,
    channels: usize,
    spatial: usize,
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let scale = gamma[c] / (var[c] + BN_EPSILON).sqrt();
            let shift = beta[c] - mean[c] * scale;
            let base = (b * channels + c) * spatial;
            for i in base..base + spatial {
                y[i] = x[i] * scale + shift;
            }
        }
    }
    y
}

fn bn_backward(
    dy: &[f64],
    xhat: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    batch: usize,
    channels: usize,
    spatial: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = (batch * spatial) as f64;
    let mut dgamma = vec![0.0; channels];
    let mut dbeta = vec![0.0; channels];
    for b in 0..batch {
        for c in 0..channels {
            let base = (b * channels + c) * spatial;
            for i in base..base + spatial {
                dgamma[c] += dy[i] * xhat[i];
                dbeta[c] += dy[i];
            }
        }
    }
    let mut dx = vec![0.0; dy.len()];
    for b in 0..batch {
        for c in 0..channels {
            let k = gamma[c] * inv_std[c] / n;
            let base = (b * channels + c) * spatial;
            for i in base..base + spatial {
                dx[i] = k * (n * dy[i] - dbeta[c] - xhat[i] * dgamma[c]);
            }
        }
    }
    (dgamma, dbeta, dx)
}

fn pool_forward(
    x: &[f64],
    batch: usize,
    [c, h, w]: [usize; 3],
    [_, oh, ow]: [usize; 3],
    window: usize,
    stride: usize,
) -> (Vec<f64>, Vec<u32>) {
    let in_len = c * h * w;
    let mut y = Vec::with_capacity(batch * c * oh * ow);
    let mut argmax = Vec::with_capacity(batch * c * oh * ow);
    for b in 0..batch {
        for ch in 0..c {
            let plane = b * in_len + ch * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_at = 0;
                    for ky in 0..window {
                        for kx in 0..window {
                            let local = (oy * stride + ky) * w + ox * stride + kx;
                            let v = x[plane + local];
                            if v > best {
                                best = v;
                                best_at = ch * h * w + local;
                            }
                        }
                    }
                    y.push(best);
                    argmax.push(best_at as u32);
                }
            }
        }
    }
    (y, argmax)
}
