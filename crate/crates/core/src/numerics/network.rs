use std::sync::atomic::{AtomicU64, Ordering};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::kernels::{self, BnStats, ConvGeom, Dims};
use super::rng;
use super::spec::{LayerKind, NetworkSpec};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

static NEXT_NETWORK_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_NETWORK_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Batch norm uses batch statistics (for trainable units).
    Train,
    /// Batch norm uses running statistics; fully deterministic.
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Conv,
    BatchNorm,
    FullyConnected,
}

/// A parameterized layer: conv, batch norm, or fully connected. Residual
/// blocks contribute several units. Units are listed in forward order, with
/// a block's projection branch ahead of its main path so that the block's
/// final batch norm is the unit nearest the output.
#[derive(Clone, Debug)]
pub struct ParamUnit {
    pub name: String,
    pub kind: UnitKind,
    /// Index of the top-level layer holding this unit.
    pub layer: usize,
    pub params: Vec<usize>,
    pub buffers: Vec<usize>,
}

/// Per-unit trainable flags, aligned with [`Network::units`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainableMask {
    pub units: Vec<bool>,
}

impl TrainableMask {
    pub fn trainable_count(&self) -> usize {
        self.units.iter().filter(|&&t| t).count()
    }
}

#[derive(Clone, Debug)]
struct ConvOp {
    geom: ConvGeom,
    weight: usize,
    bias: Option<usize>,
    unit: usize,
}

#[derive(Clone, Debug)]
struct BnOp {
    channels: usize,
    momentum: f64,
    eps: f64,
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
    unit: usize,
}

#[derive(Clone, Debug)]
struct LinearOp {
    inf: usize,
    outf: usize,
    weight: usize,
    bias: usize,
    unit: usize,
}

#[derive(Clone, Debug)]
struct ResidualOp {
    proj: Option<(ConvOp, BnOp)>,
    conv1: ConvOp,
    bn1: BnOp,
    conv2: ConvOp,
    bn2: BnOp,
}

#[derive(Clone, Debug)]
enum Op {
    Conv(ConvOp),
    Bn(BnOp),
    Relu,
    MaxPool { kernel: [usize; 2], stride: [usize; 2] },
    Gap,
    Linear(LinearOp),
    Residual(Box<ResidualOp>),
}

#[derive(Debug)]
enum Cache<T> {
    None,
    Bn(BnStats),
    MaxPool(Vec<usize>),
    Residual(Box<ResidualCache<T>>),
}

#[derive(Debug)]
struct ResidualCache<T> {
    proj: Option<(Tensor<T>, BnStats)>,
    c1: Tensor<T>,
    s1: BnStats,
    r1: Tensor<T>,
    c2: Tensor<T>,
    s2: BnStats,
}

#[derive(Debug)]
struct BnUpdate {
    mean_buf: usize,
    var_buf: usize,
    momentum: f64,
    mean: Vec<f64>,
    var_unbiased: Vec<f64>,
}

/// Activation record of one forward pass.
#[derive(Debug)]
pub struct Tape<T = f32> {
    network_id: u64,
    version: u64,
    mode: Mode,
    acts: Vec<Tensor<T>>,
    caches: Vec<Cache<T>>,
    bn_updates: Vec<BnUpdate>,
}

impl<T> Tape<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }
}

/// One gradient tensor per parameter tensor, in manifest order. Entries for
/// frozen units stay zero.
#[derive(Clone, Debug)]
pub struct Gradients<T = f32> {
    pub tensors: Vec<Tensor<T>>,
}

/// A [`NetworkSpec`] together with its parameters and batch-norm buffers.
#[derive(Debug)]
pub struct Network<T: Real = f32> {
    spec: NetworkSpec,
    shapes: Vec<Vec<usize>>,
    ops: Vec<Op>,
    params: Vec<Tensor<T>>,
    param_names: Vec<String>,
    param_units: Vec<usize>,
    buffers: Vec<Tensor<T>>,
    buffer_names: Vec<String>,
    units: Vec<ParamUnit>,
    trainable: Vec<bool>,
    id: u64,
    version: u64,
}

impl<T: Real> Clone for Network<T> {
    fn clone(&self) -> Self {
        Network {
            spec: self.spec.clone(),
            shapes: self.shapes.clone(),
            ops: self.ops.clone(),
            params: self.params.clone(),
            param_names: self.param_names.clone(),
            param_units: self.param_units.clone(),
            buffers: self.buffers.clone(),
            buffer_names: self.buffer_names.clone(),
            units: self.units.clone(),
            trainable: self.trainable.clone(),
            id: next_id(),
            version: 0,
        }
    }
}

struct Builder<T> {
    params: Vec<Tensor<T>>,
    param_names: Vec<String>,
    param_units: Vec<usize>,
    buffers: Vec<Tensor<T>>,
    buffer_names: Vec<String>,
    units: Vec<ParamUnit>,
    trainable: Vec<bool>,
}

impl<T: Real> Builder<T> {
    fn unit(&mut self, name: String, kind: UnitKind, layer: usize, trainable: bool) -> usize {
        self.units.push(ParamUnit {
            name,
            kind,
            layer,
            params: Vec::new(),
            buffers: Vec::new(),
        });
        self.trainable.push(trainable);
        self.units.len() - 1
    }

    fn param(&mut self, unit: usize, suffix: &str, shape: &[usize], fill: T) -> usize {
        let idx = self.params.len();
        self.params.push(Tensor::full(shape, fill));
        self.param_names.push(format!("{}.{suffix}", self.units[unit].name));
        self.param_units.push(unit);
        self.units[unit].params.push(idx);
        idx
    }

    fn buffer(&mut self, unit: usize, suffix: &str, shape: &[usize], fill: T) -> usize {
        let idx = self.buffers.len();
        self.buffers.push(Tensor::full(shape, fill));
        self.buffer_names.push(format!("{}.{suffix}", self.units[unit].name));
        self.units[unit].buffers.push(idx);
        idx
    }

    fn conv(&mut self, name: String, layer: usize, trainable: bool, geom: ConvGeom, bias: bool, planar: bool) -> ConvOp {
        let unit = self.unit(name, UnitKind::Conv, layer, trainable);
        // 2D kernels are stored as [out, in, kh, kw], 3D as [out, in, kd, kh, kw].
        let mut wshape = vec![geom.cout, geom.cin];
        if geom.kernel[0] == 1 && planar {
            wshape.extend_from_slice(&geom.kernel[1..]);
        } else {
            wshape.extend_from_slice(&geom.kernel);
        }
        let weight = self.param(unit, "weight", &wshape, T::zero());
        let bias = bias.then(|| self.param(unit, "bias", &[geom.cout], T::zero()));
        ConvOp { geom, weight, bias, unit }
    }

    fn bn(&mut self, name: String, layer: usize, trainable: bool, channels: usize, momentum: f32, eps: f32) -> BnOp {
        let unit = self.unit(name, UnitKind::BatchNorm, layer, trainable);
        let gamma = self.param(unit, "gamma", &[channels], T::one());
        let beta = self.param(unit, "beta", &[channels], T::zero());
        let mean = self.buffer(unit, "running_mean", &[channels], T::zero());
        let var = self.buffer(unit, "running_var", &[channels], T::one());
        BnOp {
            channels,
            momentum: momentum as f64,
            eps: eps as f64,
            gamma,
            beta,
            mean,
            var,
            unit,
        }
    }
}

fn geom_2d(cin: usize, cout: usize, k: [usize; 2], s: [usize; 2], p: [usize; 2]) -> ConvGeom {
    ConvGeom {
        cin,
        cout,
        kernel: [1, k[0], k[1]],
        stride: [1, s[0], s[1]],
        pad: [0, p[0], p[1]],
    }
}

impl Network<f32> {
    /// Builds the network and draws He-normal weights from `seed`.
    /// Batch-norm scales start at 1 and shifts at 0; biases at 0.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let mut net = Self::structure(spec)?;
        for (i, tensor) in net.params.iter_mut().enumerate() {
            let fan_in = net_fan_in(&net.units, &net.param_names, i, tensor);
            if let Some(fan_in) = fan_in {
                let std = (2.0 / fan_in as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("finite std");
                let mut r = rng::stream(seed, i as u64);
                for v in tensor.data_mut() {
                    *v = normal.sample(&mut r) as f32;
                }
            }
        }
        Ok(net)
    }
}

fn net_fan_in<T: Real>(units: &[ParamUnit], names: &[String], i: usize, t: &Tensor<T>) -> Option<usize> {
    let unit = units.iter().find(|u| u.params.contains(&i))?;
    if unit.kind == UnitKind::BatchNorm || !names[i].ends_with(".weight") {
        return None;
    }
    Some(t.len() / t.shape()[0])
}

impl<T: Real> Network<T> {
    fn structure(spec: NetworkSpec) -> Result<Self> {
        let shapes = spec.infer_shapes()?;
        let mut b = Builder::<T> {
            params: Vec::new(),
            param_names: Vec::new(),
            param_units: Vec::new(),
            buffers: Vec::new(),
            buffer_names: Vec::new(),
            units: Vec::new(),
            trainable: Vec::new(),
        };
        let mut ops = Vec::with_capacity(spec.layers.len());
        for (i, layer) in spec.layers.iter().enumerate() {
            let name = format!("layers.{i}");
            let tr = layer.trainable;
            let op = match &layer.kind {
                LayerKind::Conv2D {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    bias,
                } => Op::Conv(b.conv(
                    name,
                    i,
                    tr,
                    geom_2d(*in_channels, *out_channels, *kernel, *stride, *padding),
                    *bias,
                    true,
                )),
                LayerKind::Conv3D {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    bias,
                } => Op::Conv(b.conv(
                    name,
                    i,
                    tr,
                    ConvGeom {
                        cin: *in_channels,
                        cout: *out_channels,
                        kernel: *kernel,
                        stride: *stride,
                        pad: *padding,
                    },
                    *bias,
                    false,
                )),
                LayerKind::BatchNorm {
                    channels,
                    momentum,
                    eps,
                } => Op::Bn(b.bn(name, i, tr, *channels, *momentum, *eps)),
                LayerKind::ReLU => Op::Relu,
                LayerKind::MaxPool { kernel, stride } => Op::MaxPool {
                    kernel: *kernel,
                    stride: *stride,
                },
                LayerKind::GlobalAvgPool => Op::Gap,
                LayerKind::FullyConnected {
                    in_features,
                    out_features,
                } => {
                    let unit = b.unit(name, UnitKind::FullyConnected, i, tr);
                    let weight = b.param(unit, "weight", &[*out_features, *in_features], T::zero());
                    let bias = b.param(unit, "bias", &[*out_features], T::zero());
                    Op::Linear(LinearOp {
                        inf: *in_features,
                        outf: *out_features,
                        weight,
                        bias,
                        unit,
                    })
                }
                LayerKind::ResidualBlock2D {
                    in_channels,
                    out_channels,
                    stride,
                } => {
                    let (cin, cout, s) = (*in_channels, *out_channels, *stride);
                    let proj = (cin != cout || s != 1).then(|| {
                        let c = b.conv(format!("{name}.proj_conv"), i, tr, geom_2d(cin, cout, [1, 1], [s, s], [0, 0]), false, true);
                        let n = b.bn(format!("{name}.proj_bn"), i, tr, cout, super::spec::DEFAULT_BN_MOMENTUM, super::spec::DEFAULT_BN_EPS);
                        (c, n)
                    });
                    residual_main(&mut b, name, i, tr, proj, true,
                        geom_2d(cin, cout, [3, 3], [s, s], [1, 1]),
                        geom_2d(cout, cout, [3, 3], [1, 1], [1, 1]))
                }
                LayerKind::ResidualBlock3D {
                    in_channels,
                    out_channels,
                    stride,
                } => {
                    let (cin, cout) = (*in_channels, *out_channels);
                    let [st, ss] = *stride;
                    let proj = (cin != cout || st != 1 || ss != 1).then(|| {
                        let g = ConvGeom { cin, cout, kernel: [1, 1, 1], stride: [st, ss, ss], pad: [0, 0, 0] };
                        let c = b.conv(format!("{name}.proj_conv"), i, tr, g, false, false);
                        let n = b.bn(format!("{name}.proj_bn"), i, tr, cout, super::spec::DEFAULT_BN_MOMENTUM, super::spec::DEFAULT_BN_EPS);
                        (c, n)
                    });
                    residual_main(&mut b, name, i, tr, proj, false,
                        ConvGeom { cin, cout, kernel: [3, 3, 3], stride: [st, ss, ss], pad: [1, 1, 1] },
                        ConvGeom { cin: cout, cout, kernel: [3, 3, 3], stride: [1, 1, 1], pad: [1, 1, 1] })
                }
            };
            ops.push(op);
        }
        Ok(Network {
            spec,
            shapes,
            ops,
            params: b.params,
            param_names: b.param_names,
            param_units: b.param_units,
            buffers: b.buffers,
            buffer_names: b.buffer_names,
            units: b.units,
            trainable: b.trainable,
            id: next_id(),
            version: 0,
        })
    }

    /// Rebuilds a network from a manifest and stored tensors.
    pub fn from_parts(spec: NetworkSpec, params: Vec<Tensor<T>>, buffers: Vec<Tensor<T>>) -> Result<Self> {
        let mut net = Self::structure(spec)?;
        if params.len() != net.params.len() || buffers.len() != net.buffers.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter and {} buffer tensors, got {} and {}",
                net.params.len(),
                net.buffers.len(),
                params.len(),
                buffers.len()
            )));
        }
        for (i, (have, want)) in params.iter().zip(&net.params).enumerate() {
            if have.shape() != want.shape() {
                return Err(Error::Shape(format!(
                    "{}: expected {:?}, got {:?}",
                    net.param_names[i],
                    want.shape(),
                    have.shape()
                )));
            }
        }
        for (i, (have, want)) in buffers.iter().zip(&net.buffers).enumerate() {
            if have.shape() != want.shape() {
                return Err(Error::Shape(format!(
                    "{}: expected {:?}, got {:?}",
                    net.buffer_names[i],
                    want.shape(),
                    have.shape()
                )));
            }
        }
        net.params = params;
        net.buffers = buffers;
        Ok(net)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.spec.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    /// Mutable parameter access. Invalidates every outstanding tape.
    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        self.version += 1;
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn buffers(&self) -> &[Tensor<T>] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [Tensor<T>] {
        self.version += 1;
        &mut self.buffers
    }

    pub fn buffer_names(&self) -> &[String] {
        &self.buffer_names
    }

    pub fn units(&self) -> &[ParamUnit] {
        &self.units
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub fn trainable_mask(&self) -> TrainableMask {
        TrainableMask {
            units: self.trainable.clone(),
        }
    }

    pub fn set_trainable_mask(&mut self, mask: &TrainableMask) -> Result<()> {
        if mask.units.len() != self.units.len() {
            return Err(Error::Shape(format!(
                "mask covers {} units, network has {}",
                mask.units.len(),
                self.units.len()
            )));
        }
        self.trainable = mask.units.clone();
        Ok(())
    }

    pub fn is_param_trainable(&self, param: usize) -> bool {
        self.trainable[self.param_units[param]]
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            shapes: self.shapes.clone(),
            ops: self.ops.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            param_names: self.param_names.clone(),
            param_units: self.param_units.clone(),
            buffers: self.buffers.iter().map(Tensor::cast).collect(),
            buffer_names: self.buffer_names.clone(),
            units: self.units.clone(),
            trainable: self.trainable.clone(),
            id: next_id(),
            version: 0,
        }
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<usize> {
        let shape = batch.shape();
        if shape.len() != self.spec.input_shape.len() + 1 || shape[1..] != self.spec.input_shape[..] {
            return Err(Error::Composition {
                layer: 0,
                kind: self.spec.layers.first().map(|l| l.kind.name()).unwrap_or("input").to_string(),
                message: format!(
                    "batch shape {shape:?} does not match input shape [N, {}]",
                    self.spec
                        .input_shape
                        .iter()
                        .map(|v| v.to_string())
                        .collect::<Vec<_>>()
                        .join(", ")
                ),
            });
        }
        Ok(shape[0])
    }

    /// Eval-mode forward without recording a tape.
    pub fn infer(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.check_batch(batch)?;
        let mut x = batch.clone();
        let mut updates = Vec::new();
        for (i, op) in self.ops.iter().enumerate() {
            let (y, _) = self.op_forward(op, i, &x, n, Mode::Eval, &mut updates);
            x = y;
        }
        Ok(x)
    }

    /// Forward pass returning `(batch, num_classes)` logits and the tape
    /// needed by [`Network::backward`].
    pub fn forward(&self, batch: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Tape<T>)> {
        let n = self.check_batch(batch)?;
        let mut acts = Vec::with_capacity(self.ops.len() + 1);
        let mut caches = Vec::with_capacity(self.ops.len());
        let mut bn_updates = Vec::new();
        acts.push(batch.clone());
        for (i, op) in self.ops.iter().enumerate() {
            let (y, cache) = self.op_forward(op, i, acts.last().expect("input"), n, mode, &mut bn_updates);
            acts.push(y);
            caches.push(cache);
        }
        let logits = acts.last().expect("output").clone();
        Ok((
            logits,
            Tape {
                network_id: self.id,
                version: self.version,
                mode,
                acts,
                caches,
                bn_updates,
            },
        ))
    }

    /// Folds the batch statistics recorded in a train-mode tape into the
    /// running statistics: `r = (1 - momentum) r + momentum * batch`, with the
    /// unbiased batch variance.
    pub fn commit_batch_statistics(&mut self, tape: &Tape<T>) -> Result<()> {
        if tape.network_id != self.id {
            return Err(Error::StaleTape("tape was recorded by a different network".into()));
        }
        for u in &tape.bn_updates {
            let m = u.momentum;
            let mean = self.buffers[u.mean_buf].data_mut();
            for (r, b) in mean.iter_mut().zip(&u.mean) {
                *r = T::of_f64((1.0 - m) * r.as_f64() + m * b);
            }
            let var = self.buffers[u.var_buf].data_mut();
            for (r, b) in var.iter_mut().zip(&u.var_unbiased) {
                *r = T::of_f64((1.0 - m) * r.as_f64() + m * b);
            }
        }
        Ok(())
    }

    fn sample_dims(&self, layer: usize) -> Dims {
        Dims::from_sample_shape(&self.shapes[layer])
    }

    fn bn_stats(&self, op: &BnOp, x: &Tensor<T>, n: usize, dims: Dims, mode: Mode, updates: &mut Vec<BnUpdate>) -> BnStats {
        if mode == Mode::Train && self.trainable[op.unit] {
            let stats = kernels::bn_batch_stats(x.data(), n, op.channels, dims.spatial(), op.eps);
            let m = (n * dims.spatial()) as f64;
            let correction = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            updates.push(BnUpdate {
                mean_buf: op.mean,
                var_buf: op.var,
                momentum: op.momentum,
                mean: stats.mean.clone(),
                var_unbiased: stats.var.iter().map(|v| v * correction).collect(),
            });
            stats
        } else {
            kernels::bn_running_stats(self.buffers[op.mean].data(), self.buffers[op.var].data(), op.eps)
        }
    }

    fn bn_forward(&self, op: &BnOp, x: &Tensor<T>, n: usize, dims: Dims, mode: Mode, updates: &mut Vec<BnUpdate>) -> (Tensor<T>, BnStats) {
        let stats = self.bn_stats(op, x, n, dims, mode, updates);
        let y = kernels::bn_apply(
            x.data(),
            n,
            op.channels,
            dims.spatial(),
            &stats,
            self.params[op.gamma].data(),
            self.params[op.beta].data(),
        );
        (Tensor::from_parts_unchecked(x.shape().to_vec(), y), stats)
    }

    fn conv_forward(&self, op: &ConvOp, x: &Tensor<T>, n: usize, dims: Dims) -> Tensor<T> {
        let y = kernels::conv_forward(
            &op.geom,
            dims,
            n,
            x.data(),
            self.params[op.weight].data(),
            op.bias.map(|b| self.params[b].data()),
        );
        let out = op.geom.out_dims(dims);
        Tensor::from_parts_unchecked(batched_shape(n, out, dims_rank(x)), y)
    }

    fn op_forward(&self, op: &Op, layer: usize, x: &Tensor<T>, n: usize, mode: Mode, updates: &mut Vec<BnUpdate>) -> (Tensor<T>, Cache<T>) {
        let dims = self.sample_dims(layer);
        match op {
            Op::Conv(c) => (self.conv_forward(c, x, n, dims), Cache::None),
            Op::Bn(b) => {
                let (y, s) = self.bn_forward(b, x, n, dims, mode, updates);
                (y, Cache::Bn(s))
            }
            Op::Relu => (relu(x), Cache::None),
            Op::MaxPool { kernel, stride } => {
                let (y, idx, out) = kernels::maxpool_forward(x.data(), n, dims, *kernel, *stride);
                (Tensor::from_parts_unchecked(batched_shape(n, out, dims_rank(x)), y), Cache::MaxPool(idx))
            }
            Op::Gap => {
                let s = dims.spatial();
                let y: Vec<T> = x
                    .data()
                    .chunks_exact(s)
                    .map(|plane| T::of_f64(plane.iter().map(|v| v.as_f64()).sum::<f64>() / s as f64))
                    .collect();
                (Tensor::from_parts_unchecked(vec![n, dims.c], y), Cache::None)
            }
            Op::Linear(l) => {
                let y = kernels::linear_forward(
                    x.data(),
                    n,
                    l.inf,
                    l.outf,
                    self.params[l.weight].data(),
                    self.params[l.bias].data(),
                );
                (Tensor::from_parts_unchecked(vec![n, l.outf], y), Cache::None)
            }
            Op::Residual(r) => {
                let c1 = self.conv_forward(&r.conv1, x, n, dims);
                let d1 = r.conv1.geom.out_dims(dims);
                let (b1, s1) = self.bn_forward(&r.bn1, &c1, n, d1, mode, updates);
                let r1 = relu(&b1);
                drop(b1);
                let c2 = self.conv_forward(&r.conv2, &r1, n, d1);
                let (mut sum, s2) = self.bn_forward(&r.bn2, &c2, n, d1, mode, updates);
                let proj = match &r.proj {
                    Some((pc, pb)) => {
                        let p = self.conv_forward(pc, x, n, dims);
                        let (pbn, ps) = self.bn_forward(pb, &p, n, d1, mode, updates);
                        add_into(&mut sum, &pbn);
                        Some((p, ps))
                    }
                    None => {
                        add_into(&mut sum, x);
                        None
                    }
                };
                let y = relu(&sum);
                (
                    y,
                    Cache::Residual(Box::new(ResidualCache {
                        proj,
                        c1,
                        s1,
                        r1,
                        c2,
                        s2,
                    })),
                )
            }
        }
    }

    /// Exact gradients of the loss whose logit gradient is `grad_logits`,
    /// for every trainable parameter.
    pub fn backward(&self, tape: &Tape<T>, grad_logits: &Tensor<T>) -> Result<Gradients<T>> {
        if tape.network_id != self.id {
            return Err(Error::StaleTape("tape was recorded by a different network".into()));
        }
        if tape.version != self.version {
            return Err(Error::StaleTape(format!(
                "parameters changed since the forward pass (version {} vs {})",
                tape.version, self.version
            )));
        }
        let logits = tape.acts.last().expect("output");
        if grad_logits.shape() != logits.shape() {
            return Err(Error::Shape(format!(
                "grad_logits {:?} does not match logits {:?}",
                grad_logits.shape(),
                logits.shape()
            )));
        }
        let mut grads = Gradients {
            tensors: self.params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        };
        // Layers below the first trainable unit need no gradient at all.
        let first_trainable_layer = match self
            .units
            .iter()
            .zip(&self.trainable)
            .filter(|(_, &t)| t)
            .map(|(u, _)| u.layer)
            .min()
        {
            Some(l) => l,
            None => return Ok(grads),
        };
        let n = logits.batch();
        let mut dy = grad_logits.clone();
        for layer in (first_trainable_layer..self.ops.len()).rev() {
            let want_dx = layer > first_trainable_layer;
            let dx = self.op_backward(layer, tape, &dy, n, &mut grads, want_dx);
            match dx {
                Some(d) => dy = d,
                None => break,
            }
        }
        Ok(grads)
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_backward(&self, op: &ConvOp, x: &Tensor<T>, dy: &Tensor<T>, n: usize, dims: Dims, grads: &mut Gradients<T>, want_dx: bool) -> Option<Tensor<T>> {
        let train = self.trainable[op.unit];
        let (dw, db) = if train {
            let (w, rest) = split_two(&mut grads.tensors, op.weight, op.bias);
            (Some(w), rest)
        } else {
            (None, None)
        };
        let dx = kernels::conv_backward(
            &op.geom,
            dims,
            n,
            x.data(),
            self.params[op.weight].data(),
            dy.data(),
            dw.map(|t| t.data_mut()),
            db.map(|t| t.data_mut()),
            want_dx,
        )?;
        Some(Tensor::from_parts_unchecked(x.shape().to_vec(), dx))
    }

    #[allow(clippy::too_many_arguments)]
    fn bn_backward(&self, op: &BnOp, x: &Tensor<T>, dy: &Tensor<T>, stats: &BnStats, n: usize, dims: Dims, grads: &mut Gradients<T>, want_dx: bool) -> Option<Tensor<T>> {
        let train = self.trainable[op.unit];
        let (dg, db) = if train {
            let (g, b) = split_two(&mut grads.tensors, op.gamma, Some(op.beta));
            (Some(g), b)
        } else {
            (None, None)
        };
        let dx = kernels::bn_backward(
            x.data(),
            dy.data(),
            n,
            op.channels,
            dims.spatial(),
            stats,
            self.params[op.gamma].data(),
            dg.map(|t| t.data_mut()),
            db.map(|t| t.data_mut()),
            want_dx,
        )?;
        Some(Tensor::from_parts_unchecked(x.shape().to_vec(), dx))
    }

    fn op_backward(&self, layer: usize, tape: &Tape<T>, dy: &Tensor<T>, n: usize, grads: &mut Gradients<T>, want_dx: bool) -> Option<Tensor<T>> {
        let x = &tape.acts[layer];
        let y = &tape.acts[layer + 1];
        let dims = self.sample_dims(layer);
        match (&self.ops[layer], &tape.caches[layer]) {
            (Op::Conv(c), _) => self.conv_backward(c, x, dy, n, dims, grads, want_dx),
            (Op::Bn(b), Cache::Bn(stats)) => self.bn_backward(b, x, dy, stats, n, dims, grads, want_dx),
            (Op::Relu, _) => want_dx.then(|| relu_backward(y, dy)),
            (Op::MaxPool { .. }, Cache::MaxPool(idx)) => want_dx.then(|| {
                let mut dx = Tensor::zeros(x.shape());
                let d = dx.data_mut();
                for (&i, &g) in idx.iter().zip(dy.data()) {
                    d[i] += g;
                }
                dx
            }),
            (Op::Gap, _) => want_dx.then(|| {
                let s = dims.spatial();
                let scale = T::of_f64(1.0 / s as f64);
                let mut dx = Tensor::zeros(x.shape());
                for (plane, &g) in dx.data_mut().chunks_exact_mut(s).zip(dy.data()) {
                    plane.fill(g * scale);
                }
                dx
            }),
            (Op::Linear(l), _) => {
                if self.trainable[l.unit] {
                    let (dw, db) = split_two(&mut grads.tensors, l.weight, Some(l.bias));
                    super::tensor::gemm(
                        super::tensor::Mat::new(dy.data(), n, l.outf).t(),
                        super::tensor::Mat::new(x.data(), n, l.inf),
                        T::one(),
                        dw.data_mut(),
                    );
                    let db = db.expect("bias").data_mut();
                    for row in dy.data().chunks_exact(l.outf) {
                        for (b, &g) in db.iter_mut().zip(row) {
                            *b += g;
                        }
                    }
                }
                want_dx.then(|| {
                    let mut dx = vec![T::zero(); n * l.inf];
                    super::tensor::gemm(
                        super::tensor::Mat::new(dy.data(), n, l.outf),
                        super::tensor::Mat::new(self.params[l.weight].data(), l.outf, l.inf),
                        T::zero(),
                        &mut dx,
                    );
                    Tensor::from_parts_unchecked(x.shape().to_vec(), dx)
                })
            }
            (Op::Residual(r), Cache::Residual(c)) => {
                let d1 = r.conv1.geom.out_dims(dims);
                let tr = |u: usize| self.trainable[u];
                let dsum = relu_backward(y, dy);
                let lower_main = want_dx || tr(r.conv1.unit) || tr(r.bn1.unit);
                let need_dc2 = lower_main || tr(r.conv2.unit);
                let mut dx_total: Option<Tensor<T>> = None;
                if let Some(dc2) = self.bn_backward(&r.bn2, &c.c2, &dsum, &c.s2, n, d1, grads, need_dc2) {
                    if let Some(dr1) = self.conv_backward(&r.conv2, &c.r1, &dc2, n, d1, grads, lower_main) {
                        let db1 = relu_backward(&c.r1, &dr1);
                        let need_dc1 = want_dx || tr(r.conv1.unit);
                        if let Some(dc1) = self.bn_backward(&r.bn1, &c.c1, &db1, &c.s1, n, d1, grads, need_dc1) {
                            dx_total = self.conv_backward(&r.conv1, x, &dc1, n, dims, grads, want_dx);
                        }
                    }
                }
                match (&r.proj, &c.proj) {
                    (Some((pc, pb)), Some((p, ps))) => {
                        let need_dp = want_dx || tr(pc.unit);
                        if let Some(dp) = self.bn_backward(pb, p, &dsum, ps, n, d1, grads, need_dp) {
                            if let Some(dxs) = self.conv_backward(pc, x, &dp, n, dims, grads, want_dx) {
                                if let Some(total) = dx_total.as_mut() {
                                    add_into(total, &dxs);
                                }
                            }
                        }
                    }
                    _ => {
                        if let Some(total) = dx_total.as_mut() {
                            add_into(total, &dsum);
                        }
                    }
                }
                if want_dx {
                    dx_total
                } else {
                    None
                }
            }
            _ => unreachable!("cache kind always matches its op"),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn residual_main<T: Real>(
    b: &mut Builder<T>,
    name: String,
    layer: usize,
    tr: bool,
    proj: Option<(ConvOp, BnOp)>,
    planar: bool,
    g1: ConvGeom,
    g2: ConvGeom,
) -> Op {
    let cout = g1.cout;
    let conv1 = b.conv(format!("{name}.conv1"), layer, tr, g1, false, planar);
    let bn1 = b.bn(format!("{name}.bn1"), layer, tr, cout, super::spec::DEFAULT_BN_MOMENTUM, super::spec::DEFAULT_BN_EPS);
    let conv2 = b.conv(format!("{name}.conv2"), layer, tr, g2, false, planar);
    let bn2 = b.bn(format!("{name}.bn2"), layer, tr, cout, super::spec::DEFAULT_BN_MOMENTUM, super::spec::DEFAULT_BN_EPS);
    Op::Residual(Box::new(ResidualOp {
        proj,
        conv1,
        bn1,
        conv2,
        bn2,
    }))
}

/// Mutable references to two distinct gradient tensors.
fn split_two<T>(ts: &mut [Tensor<T>], a: usize, b: Option<usize>) -> (&mut Tensor<T>, Option<&mut Tensor<T>>) {
    match b {
        None => (&mut ts[a], None),
        Some(b) => {
            assert_ne!(a, b);
            if a < b {
                let (lo, hi) = ts.split_at_mut(b);
                (&mut lo[a], Some(&mut hi[0]))
            } else {
                let (lo, hi) = ts.split_at_mut(a);
                (&mut hi[0], Some(&mut lo[b]))
            }
        }
    }
}

fn dims_rank<T: Real>(x: &Tensor<T>) -> usize {
    x.shape().len() - 1
}

fn batched_shape(n: usize, d: Dims, rank: usize) -> Vec<usize> {
    match rank {
        3 => vec![n, d.c, d.h, d.w],
        4 => vec![n, d.c, d.d, d.h, d.w],
        _ => unreachable!("convolution and pooling need spatial input"),
    }
}

fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
    Tensor::from_parts_unchecked(x.shape().to_vec(), data)
}

/// Gradient through a ReLU given its output.
fn relu_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&o, &g)| if o > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_parts_unchecked(y.shape().to_vec(), data)
}

fn add_into<T: Real>(acc: &mut Tensor<T>, x: &Tensor<T>) {
    for (a, &b) in acc.data_mut().iter_mut().zip(x.data()) {
        *a += b;
    }
}
