use rayon::prelude::*;

use super::quant::{quantize_value, requantize, QConv, QDense, QLayer, QuantizedNetwork};
use super::AxDNNConfig;
use crate::axmul::MultiplierLibrary;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::argmax;

/// Multiply-accumulate backend for the integer walker. Returns one
/// accumulator per output element with the bias already added; masked
/// outputs are left at zero.
trait Kernel {
    fn conv(&self, c: &QConv, mask: &[bool], x: &[i32]) -> Vec<i64>;
    fn dense(&self, d: &QDense, mask: &[bool], x: &[i32]) -> Vec<i64>;
}

/// Output range `lo..hi` of positions whose tap `k` lands inside `0..len`.
#[inline]
fn valid(out_len: usize, len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    // need o*stride + k >= pad and o*stride + k - pad < len
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if len + pad > k { ((len + pad - k - 1) / stride + 1).min(out_len) } else { 0 };
    (lo.min(hi), hi)
}

/// Generic convolution over a `weight -> (activation -> product)` lookup.
#[inline]
fn conv_with(c: &QConv, mask: &[bool], x: &[i32], mut row: impl FnMut(usize) -> usize, table: &[i32]) -> Vec<i64> {
    let [ic, h, w] = c.in_shape;
    let [oc, oh, ow] = c.out_shape;
    let (k, s, p) = (c.kernel, c.stride, c.padding);
    let mut out = vec![0i64; oc * oh * ow];
    for o in 0..oc {
        if mask[o] {
            continue;
        }
        let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
        plane.fill(i64::from(c.bias[o]));
        for i in 0..ic {
            let src = &x[i * h * w..(i + 1) * h * w];
            for ky in 0..k {
                let (y0, y1) = valid(oh, h, ky, s, p);
                for kx in 0..k {
                    let (x0, x1) = valid(ow, w, kx, s, p);
                    let base = row(((o * ic + i) * k + ky) * k + kx);
                    let t = &table[base..base + 256];
                    for oy in y0..y1 {
                        let iy = oy * s + ky - p;
                        let src_row = &src[iy * w..(iy + 1) * w];
                        let dst = &mut plane[oy * ow..(oy + 1) * ow];
                        for ox in x0..x1 {
                            let ix = ox * s + kx - p;
                            dst[ox] += i64::from(t[(src_row[ix] + 128) as usize]);
                        }
                    }
                }
            }
        }
    }
    out
}

fn dense_with(d: &QDense, mask: &[bool], x: &[i32], mut row: impl FnMut(usize) -> usize, table: &[i32]) -> Vec<i64> {
    let mut out = vec![0i64; d.outputs];
    for (o, acc) in out.iter_mut().enumerate() {
        if mask[o] {
            continue;
        }
        let mut sum = i64::from(d.bias[o]);
        for (i, &a) in x.iter().enumerate() {
            let base = row(o * d.inputs + i);
            sum += i64::from(table[base + (a + 128) as usize]);
        }
        *acc = sum;
    }
    out
}

/// Plain `i8 × i8` products: the int8 reference path.
struct NativeKernel {
    /// `table[(w + 128) * 256 + a + 128] = w·a`.
    table: Vec<i32>,
}

impl NativeKernel {
    fn new() -> Self {
        let mut table = vec![0i32; 256 * 256];
        for w in -127i32..=127 {
            for a in -127i32..=127 {
                table[((w + 128) * 256 + a + 128) as usize] = w * a;
            }
        }
        NativeKernel { table }
    }
}

impl Kernel for NativeKernel {
    fn conv(&self, c: &QConv, mask: &[bool], x: &[i32]) -> Vec<i64> {
        conv_with(c, mask, x, |i| (i32::from(c.codes[i]) + 128) as usize * 256, &self.table)
    }

    fn dense(&self, d: &QDense, mask: &[bool], x: &[i32]) -> Vec<i64> {
        dense_with(d, mask, x, |i| (i32::from(d.codes[i]) + 128) as usize * 256, &self.table)
    }
}

struct LayerPlan<'a> {
    table: &'a [i32],
    /// Offset of each weight's signed product row in `table`.
    rows: Vec<u32>,
}

struct LutKernel<'a> {
    plans: Vec<LayerPlan<'a>>,
}

impl Kernel for LutKernel<'_> {
    fn conv(&self, c: &QConv, mask: &[bool], x: &[i32]) -> Vec<i64> {
        let plan = &self.plans[c.param_id];
        conv_with(c, mask, x, |i| plan.rows[i] as usize, plan.table)
    }

    fn dense(&self, d: &QDense, mask: &[bool], x: &[i32]) -> Vec<i64> {
        let plan = &self.plans[d.param_id];
        dense_with(d, mask, x, |i| plan.rows[i] as usize, plan.table)
    }
}

enum Value {
    Codes(Vec<i32>, f64),
    Real(Vec<f64>),
}

struct Walker<'a, K> {
    qnet: &'a QuantizedNetwork,
    masks: &'a [Vec<bool>],
    kernel: &'a K,
}

impl<K: Kernel> Walker<'_, K> {
    fn run(&self, x: &[f64]) -> Result<Vec<f64>> {
        let expected = crate::model::numel(self.qnet.input_shape);
        if x.len() != expected {
            return Err(Error::shape("input", format!("expected {expected} values, got {}", x.len())));
        }
        let s = self.qnet.input_scale;
        let codes = x.iter().map(|&v| quantize_value(v, s)).collect();
        let shape = self.qnet.input_shape;
        Ok(match self.layers(&self.qnet.layers, Value::Codes(codes, s), shape)? {
            Value::Real(v) => v,
            Value::Codes(c, s) => c.into_iter().map(|v| f64::from(v) * s).collect(),
        })
    }

    fn finish(&self, pid: usize, acc: Vec<i64>, in_scale: f64, w_scale: f64, out: Option<f64>) -> Result<Value> {
        if acc.iter().any(|&a| a > i64::from(i32::MAX) || a < i64::from(i32::MIN)) {
            return Err(Error::AccumulatorOverflow {
                layer: self.qnet.params[pid].name.clone(),
            });
        }
        let acc_scale = in_scale * w_scale;
        Ok(match out {
            Some(s_out) => {
                let f = acc_scale / s_out;
                Value::Codes(acc.into_iter().map(|a| requantize(a, f)).collect(), s_out)
            }
            None => Value::Real(acc.into_iter().map(|a| a as f64 * acc_scale).collect()),
        })
    }

    fn layers(&self, layers: &[QLayer], mut v: Value, mut shape: [usize; 3]) -> Result<Value> {
        for layer in layers {
            let Value::Codes(codes, scale) = v else {
                return Err(Error::shape("logits", "layer after the dequantized output layer"));
            };
            v = match layer {
                QLayer::Conv(c) => {
                    let acc = self.kernel.conv(c, &self.masks[c.param_id], &codes);
                    shape = c.out_shape;
                    self.finish(c.param_id, acc, c.in_scale, c.w_scale, c.out_scale)?
                }
                QLayer::Dense(d) => {
                    let acc = self.kernel.dense(d, &self.masks[d.param_id], &codes);
                    shape = [d.outputs, 1, 1];
                    self.finish(d.param_id, acc, d.in_scale, d.w_scale, d.out_scale)?
                }
                QLayer::Relu => Value::Codes(codes.into_iter().map(|c| c.max(0)).collect(), scale),
                QLayer::MaxPool2d => {
                    let [c, h, w] = shape;
                    let (oh, ow) = (h / 2, w / 2);
                    let mut out = Vec::with_capacity(c * oh * ow);
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let at = |dy: usize, dx: usize| codes[(ch * h + 2 * oy + dy) * w + 2 * ox + dx];
                                out.push(at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1)));
                            }
                        }
                    }
                    shape = [c, oh, ow];
                    Value::Codes(out, scale)
                }
                QLayer::Flatten => {
                    shape = [shape.iter().product(), 1, 1];
                    Value::Codes(codes, scale)
                }
                QLayer::Residual(r) => {
                    let body = self.layers(&r.body, Value::Codes(codes.clone(), scale), shape)?;
                    let Value::Codes(b, body_scale) = body else {
                        return Err(Error::shape("residual block", "body ends in the output layer"));
                    };
                    let (fb, fs) = (body_scale / r.out_scale, r.in_scale / r.out_scale);
                    let joined = b
                        .iter()
                        .zip(&codes)
                        .map(|(&b, &s)| {
                            let v = (f64::from(b) * fb + f64::from(s) * fs).round() as i64;
                            v.clamp(-127, 127) as i32
                        })
                        .collect();
                    Value::Codes(joined, r.out_scale)
                }
            };
        }
        Ok(v)
    }
}

fn combined_masks(qnet: &QuantizedNetwork, config: Option<&AxDNNConfig>) -> Result<Vec<Vec<bool>>> {
    let mut masks = qnet.masks.clone();
    if let Some(cfg) = config {
        for (pid, layer) in cfg.layers.iter().enumerate() {
            for &n in &layer.skip_indices {
                let m = masks[pid].get_mut(n).ok_or_else(|| {
                    Error::config("skip_indices", format!("{}: neuron {n} out of range", qnet.params[pid].name))
                })?;
                *m = true;
            }
        }
    }
    for (pid, m) in masks.iter().enumerate() {
        if m.iter().all(|&s| s) {
            return Err(Error::MaskWholeLayer {
                layer: qnet.params[pid].name.clone(),
            });
        }
    }
    Ok(masks)
}

/// Plain int8 forward pass with exact products and the quantized model's masks.
pub fn forward_int8(qnet: &QuantizedNetwork, x: &[f64]) -> Result<Vec<f64>> {
    let kernel = NativeKernel::new();
    let masks = combined_masks(qnet, None)?;
    Walker {
        qnet,
        masks: &masks,
        kernel: &kernel,
    }
    .run(x)
}

/// A quantized network bound to a per-layer multiplier assignment, ready to run.
pub struct ApproxModel<'a> {
    qnet: &'a QuantizedNetwork,
    masks: Vec<Vec<bool>>,
    kernel: LutKernel<'a>,
}

impl<'a> ApproxModel<'a> {
    pub fn new(qnet: &'a QuantizedNetwork, config: &AxDNNConfig, library: &'a MultiplierLibrary) -> Result<Self> {
        config.validate(qnet.params.len())?;
        let masks = combined_masks(qnet, Some(config))?;
        let mut plans = Vec::with_capacity(qnet.params.len());
        for (pid, layer) in config.layers.iter().enumerate() {
            let mul = library.get(&layer.multiplier)?;
            let rows = qnet
                .codes(pid)
                .iter()
                .map(|&c| {
                    let mag = c.unsigned_abs();
                    let mag = if config.use_weight_map { mul.weight_map.apply(mag) } else { mag };
                    ((u32::from(c < 0) * 256 + u32::from(mag)) * 256) as u32
                })
                .collect();
            plans.push(LayerPlan {
                table: &mul.signed,
                rows,
            });
        }
        Ok(ApproxModel {
            qnet,
            masks,
            kernel: LutKernel { plans },
        })
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Walker {
            qnet: self.qnet,
            masks: &self.masks,
            kernel: &self.kernel,
        }
        .run(x)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }

    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let hits = (0..data.len())
            .into_par_iter()
            .map(|i| self.predict(&data.image(i)).map(|p| usize::from(p == data.label(i))))
            .collect::<Result<Vec<_>>>()?;
        Ok(hits.iter().sum::<usize>() as f64 / data.len() as f64)
    }
}

/// One-shot approximate forward pass.
pub fn forward_approx(qnet: &QuantizedNetwork, config: &AxDNNConfig, library: &MultiplierLibrary, x: &[f64]) -> Result<Vec<f64>> {
    ApproxModel::new(qnet, config, library)?.logits(x)
}

/// Accuracy of the quantized network under `config`.
pub fn approx_accuracy(qnet: &QuantizedNetwork, config: &AxDNNConfig, library: &MultiplierLibrary, data: &Dataset) -> Result<f64> {
    ApproxModel::new(qnet, config, library)?.accuracy(data)
}

/// Accuracy of the plain int8 forward pass.
pub fn int8_accuracy(qnet: &QuantizedNetwork, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let kernel = NativeKernel::new();
    let masks = combined_masks(qnet, None)?;
    let walker = Walker {
        qnet,
        masks: &masks,
        kernel: &kernel,
    };
    let hits = (0..data.len())
        .into_par_iter()
        .map(|i| walker.run(&data.image(i)).map(|l| usize::from(argmax(&l) == data.label(i))))
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::valid;

    #[test]
    fn valid_range_matches_brute_force() {
        for len in 1..9usize {
            for k in 0..4 {
                for stride in 1..4 {
                    for pad in 0..3 {
                        let out_len = (len + 2 * pad).saturating_sub(3) / stride + 1;
                        let expect: Vec<usize> = (0..out_len)
                            .filter(|&o| {
                                let i = (o * stride + k) as isize - pad as isize;
                                i >= 0 && (i as usize) < len
                            })
                            .collect();
                        let (lo, hi) = valid(out_len, len, k, stride, pad);
                        assert_eq!((lo..hi).collect::<Vec<_>>(), expect, "len {len} k {k} s {stride} p {pad}");
                    }
                }
            }
        }
    }
}
