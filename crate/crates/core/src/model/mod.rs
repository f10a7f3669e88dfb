//! Float CNN representation: sequential layers plus identity-shortcut residual
//! blocks, with reverse-mode gradients and minibatch SGD.
//!
//! Activations are stored channel-major `(c, h, w)`. Every layer, including
//! the layers nested inside residual blocks, gets a *node id* in pre-order;
//! parameterized layers (conv2d, dense) additionally get a *param id* in the
//! same order. Both numberings are stable for a given architecture and are
//! what the quantized executor, the attribution code and the cost model key
//! their per-layer data on.

mod grad;
mod manifest;
mod train;

pub use grad::{backward, backward_with, forward, forward_hooked, Activations, GradientTape, OutputMode};
pub use manifest::{load_model, save_model, LayerDescriptor, ModelManifest, MANIFEST_VERSION};
pub use train::{accuracy, predict, train_sgd, TrainLog, TrainOptions};

use crate::error::{Error, Result};

/// `(channels, height, width)`.
pub type Shape = [usize; 3];

pub fn numel(shape: Shape) -> usize {
    shape[0] * shape[1] * shape[2]
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `[out][in][ky][kx]`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let hp = h + 2 * self.padding;
        let wp = w + 2 * self.padding;
        if hp < self.kernel || wp < self.kernel || self.stride == 0 {
            return None;
        }
        Some(((hp - self.kernel) / self.stride + 1, (wp - self.kernel) / self.stride + 1))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `[out][in]`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock {
    pub body: Vec<Layer>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    Dense(Dense),
    Relu,
    /// 2x2 window, stride 2.
    MaxPool2d,
    Flatten,
    Residual(ResidualBlock),
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::Dense(_) => "dense",
            Layer::Relu => "relu",
            Layer::MaxPool2d => "maxpool2d",
            Layer::Flatten => "flatten",
            Layer::Residual(_) => "residual_block",
        }
    }

    pub fn is_parameterized(&self) -> bool {
        matches!(self, Layer::Conv2d(_) | Layer::Dense(_))
    }

    /// Number of pre-order nodes this layer occupies (itself plus nested layers).
    pub fn node_count(&self) -> usize {
        match self {
            Layer::Residual(b) => 1 + b.body.iter().map(Layer::node_count).sum::<usize>(),
            _ => 1,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv2d(_) | Layer::Dense(_) => 1,
            Layer::Residual(b) => b.body.iter().map(Layer::param_count).sum(),
            _ => 0,
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let [c, h, w] = input;
        match self {
            Layer::Conv2d(conv) => {
                if c != conv.in_channels {
                    return Err(Error::shape(
                        "conv2d",
                        format!("expects {} input channels, got {c}", conv.in_channels),
                    ));
                }
                let (oh, ow) = conv.output_hw(h, w).ok_or_else(|| {
                    Error::shape("conv2d", format!("kernel {} does not fit {h}x{w}", conv.kernel))
                })?;
                Ok([conv.out_channels, oh, ow])
            }
            Layer::Dense(d) => {
                if input != [d.inputs, 1, 1] {
                    return Err(Error::shape(
                        "dense",
                        format!("expects ({}, 1, 1), got {input:?}", d.inputs),
                    ));
                }
                Ok([d.outputs, 1, 1])
            }
            Layer::Relu => Ok(input),
            Layer::MaxPool2d => {
                if h < 2 || w < 2 {
                    return Err(Error::shape("maxpool2d", format!("input {h}x{w} smaller than window")));
                }
                Ok([c, h / 2, w / 2])
            }
            Layer::Flatten => Ok([c * h * w, 1, 1]),
            Layer::Residual(block) => {
                let out = sequence_output_shape(&block.body, input)?;
                if out != input {
                    return Err(Error::shape(
                        "residual_block",
                        format!("body maps {input:?} to {out:?}; shortcut needs equal shapes"),
                    ));
                }
                Ok(out)
            }
        }
    }
}

pub(crate) fn sequence_output_shape(layers: &[Layer], input: Shape) -> Result<Shape> {
    let mut shape = input;
    for (i, layer) in layers.iter().enumerate() {
        shape = layer.output_shape(shape).map_err(|e| match e {
            Error::ShapeMismatch { layer: kind, detail } => Error::ShapeMismatch {
                layer: format!("{kind} (position {i})"),
                detail,
            },
            other => other,
        })?;
    }
    Ok(shape)
}

/// Read-only view of a parameterized layer together with its placement.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamInfo {
    pub param_id: usize,
    pub node_id: usize,
    /// Index of the top-level layer (or residual block) containing it.
    pub top_level: usize,
    pub name: String,
    pub input_shape: Shape,
    pub output_shape: Shape,
    pub kind: ParamKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Conv { in_channels: usize, out_channels: usize, kernel: usize },
    Dense { inputs: usize, outputs: usize },
}

impl ParamInfo {
    /// Output neurons in the skipping sense: conv channels or dense units.
    pub fn neurons(&self) -> usize {
        self.output_shape[0]
    }
}

/// A unit of attribution and approximation: a top-level parameterized layer
/// or a whole residual block.
#[derive(Clone, Debug)]
pub struct Unit {
    pub name: String,
    pub top_level: usize,
    pub params: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub name: String,
    pub input_shape: Shape,
    pub layers: Vec<Layer>,
}

impl Network {
    /// Validates shapes and the presence of at least one parameterized layer.
    pub fn new(name: impl Into<String>, input_shape: Shape, layers: Vec<Layer>) -> Result<Self> {
        let net = Network {
            name: name.into(),
            input_shape,
            layers,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::EmptyNetwork);
        }
        if self.param_count() == 0 {
            return Err(Error::NoParameterizedLayer);
        }
        sequence_output_shape(&self.layers, self.input_shape)?;
        for info in self.params() {
            let (w, b) = self.param_tensors(info.param_id);
            let expected = match info.kind {
                ParamKind::Conv { in_channels, out_channels, kernel } => {
                    (in_channels * out_channels * kernel * kernel, out_channels)
                }
                ParamKind::Dense { inputs, outputs } => (inputs * outputs, outputs),
            };
            if (w.len(), b.len()) != expected {
                return Err(Error::shape(
                    info.name.clone(),
                    format!("parameter sizes ({}, {}) != expected {expected:?}", w.len(), b.len()),
                ));
            }
        }
        Ok(())
    }

    pub fn output_shape(&self) -> Shape {
        sequence_output_shape(&self.layers, self.input_shape).expect("validated network")
    }

    pub fn num_classes(&self) -> usize {
        numel(self.output_shape())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn node_count(&self) -> usize {
        self.layers.iter().map(Layer::node_count).sum()
    }

    /// Parameterized layers in pre-order.
    pub fn params(&self) -> Vec<ParamInfo> {
        let mut out = Vec::new();
        let mut node = 0;
        let mut shape = self.input_shape;
        for (top, layer) in self.layers.iter().enumerate() {
            collect_params(layer, top, &mut node, &mut shape, &mut out);
        }
        let mut conv = 0;
        let mut dense = 0;
        for info in &mut out {
            info.name = match info.kind {
                ParamKind::Conv { .. } => {
                    conv += 1;
                    format!("conv{conv}")
                }
                ParamKind::Dense { .. } => {
                    dense += 1;
                    format!("fc{dense}")
                }
            };
        }
        out
    }

    /// Attribution units: one per top-level parameterized layer, one per residual block.
    pub fn units(&self) -> Vec<Unit> {
        let params = self.params();
        let mut units: Vec<Unit> = Vec::new();
        let mut blocks = 0;
        for (top, layer) in self.layers.iter().enumerate() {
            let members: Vec<usize> = params.iter().filter(|p| p.top_level == top).map(|p| p.param_id).collect();
            if members.is_empty() {
                continue;
            }
            let name = match layer {
                Layer::Residual(_) => {
                    blocks += 1;
                    format!("B{blocks}")
                }
                _ => params[members[0]].name.clone(),
            };
            units.push(Unit {
                name,
                top_level: top,
                params: members,
            });
        }
        units
    }

    pub fn param_tensors(&self, param_id: usize) -> (&[f64], &[f64]) {
        let mut found = None;
        let mut next = 0;
        for layer in &self.layers {
            visit_params(layer, &mut next, &mut |id, l| {
                if id == param_id {
                    found = Some(match l {
                        Layer::Conv2d(c) => (c.weights.as_slice(), c.bias.as_slice()),
                        Layer::Dense(d) => (d.weights.as_slice(), d.bias.as_slice()),
                        _ => unreachable!(),
                    });
                }
            });
        }
        found.expect("param id in range")
    }

    /// Mutable `(weights, bias)` for every parameterized layer, in param-id order.
    pub fn param_tensors_mut(&mut self) -> Vec<(&mut Vec<f64>, &mut Vec<f64>)> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            collect_params_mut(layer, &mut out);
        }
        out
    }

    /// Zeroes weights and bias of the listed output neurons of each parameterized
    /// layer so their float outputs are exactly zero.
    pub fn with_output_masks(&self, masks: &[Vec<usize>]) -> Network {
        let mut net = self.clone();
        let infos = self.params();
        for ((w, b), (info, masked)) in net.param_tensors_mut().into_iter().zip(infos.iter().zip(masks)) {
            let per_out = w.len() / info.neurons();
            for &n in masked {
                w[n * per_out..(n + 1) * per_out].iter_mut().for_each(|v| *v = 0.0);
                b[n] = 0.0;
            }
        }
        net
    }
}

fn visit_params<'a>(layer: &'a Layer, next: &mut usize, f: &mut dyn FnMut(usize, &'a Layer)) {
    match layer {
        Layer::Conv2d(_) | Layer::Dense(_) => {
            f(*next, layer);
            *next += 1;
        }
        Layer::Residual(b) => b.body.iter().for_each(|l| visit_params(l, next, f)),
        _ => {}
    }
}

fn collect_params_mut<'a>(layer: &'a mut Layer, out: &mut Vec<(&'a mut Vec<f64>, &'a mut Vec<f64>)>) {
    match layer {
        Layer::Conv2d(c) => out.push((&mut c.weights, &mut c.bias)),
        Layer::Dense(d) => out.push((&mut d.weights, &mut d.bias)),
        Layer::Residual(b) => b.body.iter_mut().for_each(|l| collect_params_mut(l, out)),
        _ => {}
    }
}

fn collect_params(layer: &Layer, top: usize, node: &mut usize, shape: &mut Shape, out: &mut Vec<ParamInfo>) {
    let input = *shape;
    let output = layer.output_shape(input).expect("validated network");
    let this_node = *node;
    *node += 1;
    match layer {
        Layer::Conv2d(c) => out.push(ParamInfo {
            param_id: out.len(),
            node_id: this_node,
            top_level: top,
            name: String::new(),
            input_shape: input,
            output_shape: output,
            kind: ParamKind::Conv {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                kernel: c.kernel,
            },
        }),
        Layer::Dense(d) => out.push(ParamInfo {
            param_id: out.len(),
            node_id: this_node,
            top_level: top,
            name: String::new(),
            input_shape: input,
            output_shape: output,
            kind: ParamKind::Dense {
                inputs: d.inputs,
                outputs: d.outputs,
            },
        }),
        Layer::Residual(b) => {
            let mut inner = input;
            for l in &b.body {
                collect_params(l, top, node, &mut inner, out);
            }
        }
        _ => {}
    }
    *shape = output;
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
