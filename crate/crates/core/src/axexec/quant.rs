use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{forward_hooked, Layer, Network, ParamInfo, Shape};

/// Per-tensor symmetric 8-bit scales. Codes live in `[-127, 127]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub input_scale: f64,
    /// One per parameterized layer: `max|W| / 127`.
    pub weight_scales: Vec<f64>,
    /// One per parameterized layer output (before any ReLU): `max|y| / 127`.
    pub act_scales: Vec<f64>,
    /// One per residual block output (after the shortcut add).
    pub join_scales: Vec<f64>,
}

pub const QMAX: i32 = 127;

/// Round half away from zero, then clamp to `[-127, 127]`.
#[inline]
pub fn quantize_value(v: f64, scale: f64) -> i32 {
    ((v / scale).round() as i64).clamp(-(QMAX as i64), QMAX as i64) as i32
}

#[inline]
pub(crate) fn requantize(acc: i64, factor: f64) -> i32 {
    ((acc as f64 * factor).round() as i64).clamp(-(QMAX as i64), QMAX as i64) as i32
}

fn max_abs(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[derive(Clone, Debug, Default)]
struct Ranges {
    input: f64,
    acts: Vec<f64>,
    joins: Vec<f64>,
}

impl Ranges {
    fn merge(mut self, other: Ranges) -> Ranges {
        self.input = self.input.max(other.input);
        for (a, b) in self.acts.iter_mut().zip(other.acts) {
            *a = a.max(b);
        }
        for (a, b) in self.joins.iter_mut().zip(other.joins) {
            *a = a.max(b);
        }
        self
    }
}

fn residual_nodes(layers: &[Layer], node: &mut usize, out: &mut Vec<usize>) {
    for layer in layers {
        let here = *node;
        *node += 1;
        if let Layer::Residual(b) = layer {
            out.push(here);
            residual_nodes(&b.body, node, out);
        }
    }
}

/// Max-abs calibration over `calib`, one scale per tensor.
pub fn calibrate_quant(net: &Network, calib: &Dataset) -> Result<QuantParams> {
    if calib.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let infos = net.params();
    let mut join_nodes = Vec::new();
    residual_nodes(&net.layers, &mut 0, &mut join_nodes);
    let empty = Ranges {
        input: 0.0,
        acts: vec![0.0; infos.len()],
        joins: vec![0.0; join_nodes.len()],
    };
    let ranges = (0..calib.len())
        .into_par_iter()
        .map(|i| {
            let x = calib.image(i);
            let mut r = empty.clone();
            r.input = max_abs(x.iter().copied());
            let acts = forward_hooked(net, &x, &mut |pid, y| {
                r.acts[pid] = r.acts[pid].max(max_abs(y.iter().copied()));
            })?;
            for (j, &n) in join_nodes.iter().enumerate() {
                r.joins[j] = max_abs(acts.nodes[n].iter().copied());
            }
            Ok::<_, Error>(r)
        })
        .try_reduce(|| empty.clone(), |a, b| Ok(a.merge(b)))?;

    let scale = |m: f64, layer: &str| {
        if m > 0.0 && m.is_finite() {
            Ok(m / QMAX as f64)
        } else {
            Err(Error::ZeroScale { layer: layer.to_string() })
        }
    };
    let last = infos.len() - 1;
    let logits_direct = final_param_is_output(net);
    let mut weight_scales = Vec::with_capacity(infos.len());
    let mut act_scales = Vec::with_capacity(infos.len());
    for info in &infos {
        let (w, _) = net.param_tensors(info.param_id);
        weight_scales.push(scale(max_abs(w.iter().copied()), &info.name)?);
        let a = ranges.acts[info.param_id];
        // the logits layer is dequantized straight from its accumulator
        if info.param_id == last && logits_direct && a == 0.0 {
            act_scales.push(1.0);
        } else {
            act_scales.push(scale(a, &format!("{} output", info.name))?);
        }
    }
    let join_scales = ranges
        .joins
        .iter()
        .enumerate()
        .map(|(j, &m)| scale(m, &format!("residual block {} output", j + 1)))
        .collect::<Result<_>>()?;
    Ok(QuantParams {
        input_scale: scale(ranges.input, "input")?,
        weight_scales,
        act_scales,
        join_scales,
    })
}

fn final_param_is_output(net: &Network) -> bool {
    matches!(net.layers.last(), Some(Layer::Conv2d(_) | Layer::Dense(_)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct QConv {
    pub param_id: usize,
    pub in_shape: Shape,
    pub out_shape: Shape,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `[out][in][ky][kx]`.
    pub codes: Vec<i8>,
    pub bias: Vec<i32>,
    pub in_scale: f64,
    pub w_scale: f64,
    /// `None` for the logits layer, which is dequantized directly.
    pub out_scale: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QDense {
    pub param_id: usize,
    pub inputs: usize,
    pub outputs: usize,
    /// `[out][in]`.
    pub codes: Vec<i8>,
    pub bias: Vec<i32>,
    pub in_scale: f64,
    pub w_scale: f64,
    pub out_scale: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QResidual {
    pub body: Vec<QLayer>,
    pub in_scale: f64,
    pub body_scale: f64,
    pub out_scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum QLayer {
    Conv(QConv),
    Dense(QDense),
    Relu,
    MaxPool2d,
    Flatten,
    Residual(QResidual),
}

/// Integer model: int8 weights, int32 biases, and per-layer output masks.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedNetwork {
    pub name: String,
    pub input_shape: Shape,
    pub input_scale: f64,
    pub layers: Vec<QLayer>,
    pub params: Vec<ParamInfo>,
    /// `masks[param_id][neuron]`: the neuron is skipped and outputs exactly 0.
    pub masks: Vec<Vec<bool>>,
    /// Scale of the final tensor when the network does not end in a parameterized layer.
    pub output_scale: f64,
}

impl QuantizedNetwork {
    pub fn num_classes(&self) -> usize {
        self.params.last().map(|p| p.output_shape[0]).unwrap_or(0).max(1)
    }

    pub fn skip_indices(&self) -> Vec<Vec<usize>> {
        self.masks
            .iter()
            .map(|m| m.iter().enumerate().filter(|(_, &s)| s).map(|(i, _)| i).collect())
            .collect()
    }

    /// Weight codes of one parameterized layer.
    pub fn codes(&self, param_id: usize) -> &[i8] {
        fn find(layers: &[QLayer], id: usize) -> Option<&[i8]> {
            layers.iter().find_map(|l| match l {
                QLayer::Conv(c) if c.param_id == id => Some(c.codes.as_slice()),
                QLayer::Dense(d) if d.param_id == id => Some(d.codes.as_slice()),
                QLayer::Residual(r) => find(&r.body, id),
                _ => None,
            })
        }
        find(&self.layers, param_id).expect("param id in range")
    }
}

fn quantize_tensor(w: &[f64], scale: f64) -> Vec<i8> {
    w.iter().map(|&v| quantize_value(v, scale) as i8).collect()
}

fn quantize_bias(b: &[f64], scale: f64) -> Vec<i32> {
    b.iter()
        .map(|&v| (v / scale).round().clamp(i32::MIN as f64, i32::MAX as f64) as i32)
        .collect()
}

fn check_scale(v: f64, what: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::ZeroScale { layer: what.to_string() })
    }
}

struct Builder<'a> {
    qp: &'a QuantParams,
    infos: &'a [ParamInfo],
    param: usize,
    join: usize,
    last_param: usize,
    logits_direct: bool,
}

impl Builder<'_> {
    fn build(&mut self, layers: &[Layer], mut scale: f64, mut shape: Shape) -> Result<(Vec<QLayer>, f64)> {
        let mut out = Vec::with_capacity(layers.len());
        for layer in layers {
            let next_shape = layer.output_shape(shape)?;
            let q = match layer {
                Layer::Conv2d(c) => {
                    let pid = self.param;
                    self.param += 1;
                    let w_scale = self.qp.weight_scales[pid];
                    let out_scale = self.out_scale(pid);
                    let q = QConv {
                        param_id: pid,
                        in_shape: shape,
                        out_shape: next_shape,
                        kernel: c.kernel,
                        stride: c.stride,
                        padding: c.padding,
                        codes: quantize_tensor(&c.weights, w_scale),
                        bias: quantize_bias(&c.bias, w_scale * scale),
                        in_scale: scale,
                        w_scale,
                        out_scale,
                    };
                    scale = out_scale.unwrap_or(scale);
                    QLayer::Conv(q)
                }
                Layer::Dense(d) => {
                    let pid = self.param;
                    self.param += 1;
                    let w_scale = self.qp.weight_scales[pid];
                    let out_scale = self.out_scale(pid);
                    let q = QDense {
                        param_id: pid,
                        inputs: d.inputs,
                        outputs: d.outputs,
                        codes: quantize_tensor(&d.weights, w_scale),
                        bias: quantize_bias(&d.bias, w_scale * scale),
                        in_scale: scale,
                        w_scale,
                        out_scale,
                    };
                    scale = out_scale.unwrap_or(scale);
                    QLayer::Dense(q)
                }
                Layer::Relu => QLayer::Relu,
                Layer::MaxPool2d => QLayer::MaxPool2d,
                Layer::Flatten => QLayer::Flatten,
                Layer::Residual(b) => {
                    let j = self.join;
                    self.join += 1;
                    let (body, body_scale) = self.build(&b.body, scale, shape)?;
                    let out_scale = self.qp.join_scales[j];
                    check_scale(out_scale, &format!("residual block {}", j + 1))?;
                    let q = QResidual {
                        body,
                        in_scale: scale,
                        body_scale,
                        out_scale,
                    };
                    scale = out_scale;
                    QLayer::Residual(q)
                }
            };
            out.push(q);
            shape = next_shape;
        }
        Ok((out, scale))
    }

    fn out_scale(&self, pid: usize) -> Option<f64> {
        (!(self.logits_direct && pid == self.last_param)).then(|| self.qp.act_scales[pid])
    }
}

/// Weight codes by round-half-away-from-zero; biases at scale `s_w·s_in`.
pub fn quantize_network(net: &Network, qp: &QuantParams) -> Result<QuantizedNetwork> {
    let infos = net.params();
    if qp.weight_scales.len() != infos.len() || qp.act_scales.len() != infos.len() {
        return Err(Error::config(
            "quant_params",
            format!("expected {} per-layer scales, got {} / {}", infos.len(), qp.weight_scales.len(), qp.act_scales.len()),
        ));
    }
    check_scale(qp.input_scale, "input")?;
    for info in &infos {
        check_scale(qp.weight_scales[info.param_id], &info.name)?;
        check_scale(qp.act_scales[info.param_id], &format!("{} output", info.name))?;
    }
    let mut b = Builder {
        qp,
        infos: &infos,
        param: 0,
        join: 0,
        last_param: infos.len() - 1,
        logits_direct: final_param_is_output(net),
    };
    let (layers, output_scale) = b.build(&net.layers, qp.input_scale, net.input_shape)?;
    if b.join != qp.join_scales.len() {
        return Err(Error::config("quant_params", format!("expected {} join scales, got {}", b.join, qp.join_scales.len())));
    }
    let masks = b.infos.iter().map(|p| vec![false; p.neurons()]).collect();
    Ok(QuantizedNetwork {
        name: net.name.clone(),
        input_shape: net.input_shape,
        input_scale: qp.input_scale,
        layers,
        params: infos,
        masks,
        output_scale,
    })
}
