//! Forward evaluation with retained activations, and reverse-mode gradients.

use super::{Conv2d, Dense, Layer, Network, Shape};
use crate::error::{Error, Result};

/// Every node's output in pre-order, plus the network input.
#[derive(Clone, Debug)]
pub struct Activations {
    pub input: Vec<f64>,
    pub nodes: Vec<Vec<f64>>,
    pub shapes: Vec<Shape>,
    /// Output of the last top-level layer (pre-softmax logits).
    pub logits: Vec<f64>,
}

/// Which scalar output gradients are taken of.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// The target-class pre-softmax logit.
    #[default]
    Logit,
    /// The target-class softmax probability.
    Probability,
}

impl OutputMode {
    pub fn value(self, logits: &[f64], target: usize) -> f64 {
        match self {
            OutputMode::Logit => logits[target],
            OutputMode::Probability => softmax(logits)[target],
        }
    }

    fn seed_gradient(self, logits: &[f64], target: usize) -> Vec<f64> {
        match self {
            OutputMode::Logit => {
                let mut g = vec![0.0; logits.len()];
                g[target] = 1.0;
                g
            }
            OutputMode::Probability => {
                let p = softmax(logits);
                (0..p.len())
                    .map(|j| p[target] * (f64::from(u8::from(j == target)) - p[j]))
                    .collect()
            }
        }
    }
}

/// Gradients of a scalar output `F` with respect to every activation.
#[derive(Clone, Debug)]
pub struct GradientTape {
    pub target: usize,
    pub mode: OutputMode,
    /// `F(x)`.
    pub output: f64,
    /// `dF/da` per node, mirroring [`Activations::nodes`].
    pub node_grads: Vec<Vec<f64>>,
    /// `dF/dx`.
    pub input_grad: Vec<f64>,
}

pub(crate) struct ParamGrad {
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

pub fn forward(net: &Network, x: &[f64]) -> Result<Activations> {
    forward_hooked(net, x, &mut |_, _| {})
}

/// Forward pass that lets `hook` rewrite each parameterized layer's output
/// (called with the param id) before it propagates.
pub fn forward_hooked(net: &Network, x: &[f64], hook: &mut dyn FnMut(usize, &mut [f64])) -> Result<Activations> {
    let expected = super::numel(net.input_shape);
    if x.len() != expected {
        return Err(Error::shape("input", format!("expected {expected} values, got {}", x.len())));
    }
    let mut fwd = Forward {
        nodes: Vec::with_capacity(net.node_count()),
        shapes: Vec::with_capacity(net.node_count()),
        hook,
        param: 0,
    };
    let (logits, _) = fwd.run(&net.layers, x.to_vec(), net.input_shape);
    Ok(Activations {
        input: x.to_vec(),
        nodes: fwd.nodes,
        shapes: fwd.shapes,
        logits,
    })
}

struct Forward<'h> {
    nodes: Vec<Vec<f64>>,
    shapes: Vec<Shape>,
    hook: &'h mut dyn FnMut(usize, &mut [f64]),
    param: usize,
}

impl Forward<'_> {
    fn run(&mut self, layers: &[Layer], mut x: Vec<f64>, mut shape: Shape) -> (Vec<f64>, Shape) {
        for layer in layers {
            let out_shape = layer.output_shape(shape).expect("validated network");
            let y = match layer {
                Layer::Residual(block) => {
                    let slot = self.nodes.len();
                    self.nodes.push(Vec::new());
                    self.shapes.push(out_shape);
                    let (mut body, _) = self.run(&block.body, x.clone(), shape);
                    body.iter_mut().zip(&x).for_each(|(b, s)| *b += s);
                    self.nodes[slot] = body.clone();
                    x = body;
                    shape = out_shape;
                    continue;
                }
                Layer::Conv2d(c) => {
                    let mut y = conv_forward(c, shape, &x);
                    (self.hook)(self.param, &mut y);
                    self.param += 1;
                    y
                }
                Layer::Dense(d) => {
                    let mut y = dense_forward(d, &x);
                    (self.hook)(self.param, &mut y);
                    self.param += 1;
                    y
                }
                Layer::Relu => x.iter().map(|v| v.max(0.0)).collect(),
                Layer::MaxPool2d => maxpool_forward(shape, &x),
                Layer::Flatten => x,
            };
            self.nodes.push(y.clone());
            self.shapes.push(out_shape);
            x = y;
            shape = out_shape;
        }
        (x, shape)
    }
}

/// Gradient tape for `F = mode(logits)[target]` at `x`.
pub fn backward(net: &Network, x: &[f64], target: usize, mode: OutputMode) -> Result<GradientTape> {
    let acts = forward(net, x)?;
    backward_with(net, &acts, target, mode)
}

/// Gradient tape from an already-evaluated forward pass.
pub fn backward_with(net: &Network, acts: &Activations, target: usize, mode: OutputMode) -> Result<GradientTape> {
    let classes = acts.logits.len();
    if target >= classes {
        return Err(Error::InvalidClass { index: target, classes });
    }
    let seed = mode.seed_gradient(&acts.logits, target);
    let mut node_grads = vec![Vec::new(); acts.nodes.len()];
    let input_grad = backprop(net, acts, seed, Some(&mut node_grads), None);
    Ok(GradientTape {
        target,
        mode,
        output: mode.value(&acts.logits, target),
        node_grads,
        input_grad,
    })
}

/// Propagates `grad_logits` back to the input. Optionally records per-node
/// gradients and accumulates parameter gradients.
pub(crate) fn backprop(
    net: &Network,
    acts: &Activations,
    grad_logits: Vec<f64>,
    mut tape: Option<&mut Vec<Vec<f64>>>,
    mut params: Option<&mut [ParamGrad]>,
) -> Vec<f64> {
    backprop_seq(
        &net.layers,
        &acts.input,
        net.input_shape,
        acts,
        0,
        0,
        grad_logits,
        &mut tape,
        &mut params,
    )
}

#[allow(clippy::too_many_arguments)]
fn backprop_seq(
    layers: &[Layer],
    input: &[f64],
    in_shape: Shape,
    acts: &Activations,
    node_start: usize,
    param_start: usize,
    mut grad: Vec<f64>,
    tape: &mut Option<&mut Vec<Vec<f64>>>,
    params: &mut Option<&mut [ParamGrad]>,
) -> Vec<f64> {
    let mut node_ids = Vec::with_capacity(layers.len());
    let mut param_ids = Vec::with_capacity(layers.len());
    let (mut node, mut param) = (node_start, param_start);
    for layer in layers {
        node_ids.push(node);
        param_ids.push(param);
        node += layer.node_count();
        param += layer.param_count();
    }
    for idx in (0..layers.len()).rev() {
        let (x, shape) = if idx == 0 {
            (input, in_shape)
        } else {
            (acts.nodes[node_ids[idx - 1]].as_slice(), acts.shapes[node_ids[idx - 1]])
        };
        if let Some(t) = tape.as_deref_mut() {
            t[node_ids[idx]] = grad.clone();
        }
        grad = match &layers[idx] {
            Layer::Conv2d(c) => {
                let pg = params.as_deref_mut().map(|p| &mut p[param_ids[idx]]);
                conv_backward(c, shape, x, &grad, pg)
            }
            Layer::Dense(d) => {
                let pg = params.as_deref_mut().map(|p| &mut p[param_ids[idx]]);
                dense_backward(d, x, &grad, pg)
            }
            Layer::Relu => x.iter().zip(&grad).map(|(v, g)| if *v > 0.0 { *g } else { 0.0 }).collect(),
            Layer::MaxPool2d => maxpool_backward(shape, x, &grad),
            Layer::Flatten => grad,
            Layer::Residual(block) => {
                let mut through_body = backprop_seq(
                    &block.body,
                    x,
                    shape,
                    acts,
                    node_ids[idx] + 1,
                    param_ids[idx],
                    grad.clone(),
                    tape,
                    params,
                );
                through_body.iter_mut().zip(&grad).for_each(|(b, g)| *b += g);
                through_body
            }
        };
    }
    grad
}

/// Output index range `[lo, hi)` whose input tap `o * stride + k - pad` lies in `[0, len)`.
fn valid_range(k: usize, pad: usize, stride: usize, len: usize, out_len: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    // largest o with o*stride + k - pad <= len - 1
    let hi = if len + pad > k { ((len + pad - k - 1) / stride + 1).min(out_len) } else { 0 };
    (lo.min(hi), hi)
}

pub(crate) fn conv_forward(c: &Conv2d, [ci, h, w]: Shape, x: &[f64]) -> Vec<f64> {
    let (oh, ow) = c.output_hw(h, w).expect("validated geometry");
    let k = c.kernel;
    let mut out = vec![0.0; c.out_channels * oh * ow];
    for oc in 0..c.out_channels {
        let plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
        plane.iter_mut().for_each(|v| *v = c.bias[oc]);
        for ic in 0..ci {
            let src = &x[ic * h * w..(ic + 1) * h * w];
            for ky in 0..k {
                let (y0, y1) = valid_range(ky, c.padding, c.stride, h, oh);
                for kx in 0..k {
                    let wv = c.weights[((oc * ci + ic) * k + ky) * k + kx];
                    let (x0, x1) = valid_range(kx, c.padding, c.stride, w, ow);
                    for oy in y0..y1 {
                        let iy = oy * c.stride + ky - c.padding;
                        let row = &src[iy * w..(iy + 1) * w];
                        let dst = &mut plane[oy * ow..(oy + 1) * ow];
                        for ox in x0..x1 {
                            dst[ox] += wv * row[ox * c.stride + kx - c.padding];
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_backward(c: &Conv2d, [ci, h, w]: Shape, x: &[f64], g: &[f64], mut pg: Option<&mut ParamGrad>) -> Vec<f64> {
    let (oh, ow) = c.output_hw(h, w).expect("validated geometry");
    let k = c.kernel;
    let mut gin = vec![0.0; ci * h * w];
    for oc in 0..c.out_channels {
        let gplane = &g[oc * oh * ow..(oc + 1) * oh * ow];
        if let Some(p) = pg.as_deref_mut() {
            p.db[oc] += gplane.iter().sum::<f64>();
        }
        for ic in 0..ci {
            let src = &x[ic * h * w..(ic + 1) * h * w];
            let dst = &mut gin[ic * h * w..(ic + 1) * h * w];
            for ky in 0..k {
                let (y0, y1) = valid_range(ky, c.padding, c.stride, h, oh);
                for kx in 0..k {
                    let widx = ((oc * ci + ic) * k + ky) * k + kx;
                    let wv = c.weights[widx];
                    let (x0, x1) = valid_range(kx, c.padding, c.stride, w, ow);
                    let mut dw = 0.0;
                    for oy in y0..y1 {
                        let iy = oy * c.stride + ky - c.padding;
                        let grow = &gplane[oy * ow..(oy + 1) * ow];
                        for ox in x0..x1 {
                            let ix = ox * c.stride + kx - c.padding;
                            dst[iy * w + ix] += wv * grow[ox];
                            dw += src[iy * w + ix] * grow[ox];
                        }
                    }
                    if let Some(p) = pg.as_deref_mut() {
                        p.dw[widx] += dw;
                    }
                }
            }
        }
    }
    gin
}

pub(crate) fn dense_forward(d: &Dense, x: &[f64]) -> Vec<f64> {
    (0..d.outputs)
        .map(|o| {
            let row = &d.weights[o * d.inputs..(o + 1) * d.inputs];
            d.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        })
        .collect()
}

fn dense_backward(d: &Dense, x: &[f64], g: &[f64], mut pg: Option<&mut ParamGrad>) -> Vec<f64> {
    let mut gin = vec![0.0; d.inputs];
    for o in 0..d.outputs {
        let row = &d.weights[o * d.inputs..(o + 1) * d.inputs];
        for (gi, w) in gin.iter_mut().zip(row) {
            *gi += w * g[o];
        }
        if let Some(p) = pg.as_deref_mut() {
            p.db[o] += g[o];
            for (dw, v) in p.dw[o * d.inputs..(o + 1) * d.inputs].iter_mut().zip(x) {
                *dw += g[o] * v;
            }
        }
    }
    gin
}

pub(crate) fn maxpool_forward([c, h, w]: Shape, x: &[f64]) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let p = &x[ch * h * w..];
        for oy in 0..oh {
            for ox in 0..ow {
                let i = 2 * oy * w + 2 * ox;
                out.push(p[i].max(p[i + 1]).max(p[i + w]).max(p[i + w + 1]));
            }
        }
    }
    out
}

fn maxpool_backward([c, h, w]: Shape, x: &[f64], g: &[f64]) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut gin = vec![0.0; c * h * w];
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let i = base + 2 * oy * w + 2 * ox;
                let mut best = i;
                for j in [i + 1, i + w, i + w + 1] {
                    if x[j] > x[best] {
                        best = j;
                    }
                }
                gin[best] += g[(ch * oh + oy) * ow + ox];
            }
        }
    }
    gin
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelManifest, ResidualBlock};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense(inputs: usize, outputs: usize, weights: Vec<f64>) -> Layer {
        Layer::Dense(Dense {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
        })
    }

    #[test]
    fn single_dense_layer_is_matrix_vector_product() {
        let w = vec![1.0, 2.0, 3.0, -1.0, 0.5, 4.0];
        let net = Network::new("lin", [3, 1, 1], vec![dense(3, 2, w)]).unwrap();
        let acts = forward(&net, &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(acts.logits, vec![1.0 - 4.0 + 1.5, -1.0 - 1.0 + 2.0]);
    }

    #[test]
    fn relu_on_negative_input_is_zero() {
        let net = Network::new("r", [4, 1, 1], vec![Layer::Relu, dense(4, 1, vec![1.0; 4])]).unwrap();
        let acts = forward(&net, &[-1.0, -0.5, -3.0, -1e-9]).unwrap();
        assert!(acts.nodes[0].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_gradient_equals_weights() {
        let w = vec![0.3, -1.2, 2.5, 0.0];
        let net = Network::new("lin", [4, 1, 1], vec![dense(4, 1, w.clone())]).unwrap();
        let tape = backward(&net, &[1.0, 2.0, 3.0, 4.0], 0, OutputMode::Logit).unwrap();
        assert_eq!(tape.input_grad, w);
    }

    #[test]
    fn relu_gradient_is_zero_at_negative_preactivation() {
        let net = Network::new(
            "r",
            [2, 1, 1],
            vec![dense(2, 2, vec![1.0, 0.0, 0.0, 1.0]), Layer::Relu, dense(2, 1, vec![1.0, 1.0])],
        )
        .unwrap();
        let tape = backward(&net, &[-0.5, 2.0], 0, OutputMode::Logit).unwrap();
        assert_eq!(tape.input_grad, vec![0.0, 1.0]);
        // exactly zero pre-activation also passes no gradient
        let tape = backward(&net, &[0.0, 2.0], 0, OutputMode::Logit).unwrap();
        assert_eq!(tape.input_grad[0], 0.0);
    }

    #[test]
    fn invalid_class_rejected() {
        let net = ModelManifest::lenet5(0).build(None).unwrap();
        let x = vec![0.1; 784];
        assert!(matches!(
            backward(&net, &x, 10, OutputMode::Logit),
            Err(Error::InvalidClass { index: 10, classes: 10 })
        ));
    }

    /// Scalar-loop re-computation of a conv -> relu -> pool -> flatten -> dense net.
    fn oracle_logits(net: &Network, x: &[f64]) -> Vec<f64> {
        let (Layer::Conv2d(c), Layer::Dense(d)) = (&net.layers[0], &net.layers[4]) else {
            panic!()
        };
        let (h, w) = (6usize, 6usize);
        let (oh, ow) = (h + 2 * c.padding - c.kernel + 1, w + 2 * c.padding - c.kernel + 1);
        let mut conv = vec![vec![vec![0.0; ow]; oh]; c.out_channels];
        for oc in 0..c.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = c.bias[oc];
                    for ic in 0..c.in_channels {
                        for ky in 0..c.kernel {
                            for kx in 0..c.kernel {
                                let iy = oy as isize + ky as isize - c.padding as isize;
                                let ix = ox as isize + kx as isize - c.padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let wi = ((oc * c.in_channels + ic) * c.kernel + ky) * c.kernel + kx;
                                s += c.weights[wi] * x[ic * h * w + iy as usize * w + ix as usize];
                            }
                        }
                    }
                    conv[oc][oy][ox] = if s > 0.0 { s } else { 0.0 };
                }
            }
        }
        let mut flat = Vec::new();
        for plane in &conv {
            for py in 0..oh / 2 {
                for px in 0..ow / 2 {
                    let mut m = f64::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            m = m.max(plane[2 * py + dy][2 * px + dx]);
                        }
                    }
                    flat.push(m);
                }
            }
        }
        (0..d.outputs)
            .map(|o| {
                let mut s = d.bias[o];
                for i in 0..d.inputs {
                    s += d.weights[o * d.inputs + i] * flat[i];
                }
                s
            })
            .collect()
    }

    fn small_net(rng: &mut ChaCha8Rng, padding: usize) -> Network {
        let oh = 6 + 2 * padding - 3 + 1;
        let flat = 3 * (oh / 2) * (oh / 2);
        let conv = Conv2d {
            in_channels: 2,
            out_channels: 3,
            kernel: 3,
            stride: 1,
            padding,
            weights: (0..54).map(|_| rng.random_range(-1.0..1.0)).collect(),
            bias: (0..3).map(|_| rng.random_range(-0.5..0.5)).collect(),
        };
        let d = Dense {
            inputs: flat,
            outputs: 4,
            weights: (0..flat * 4).map(|_| rng.random_range(-1.0..1.0)).collect(),
            bias: (0..4).map(|_| rng.random_range(-0.5..0.5)).collect(),
        };
        Network::new(
            "small",
            [2, 6, 6],
            vec![Layer::Conv2d(conv), Layer::Relu, Layer::MaxPool2d, Layer::Flatten, Layer::Dense(d)],
        )
        .unwrap()
    }

    #[test]
    fn forward_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for padding in [0, 1] {
            let net = small_net(&mut rng, padding);
            for _ in 0..10 {
                let x: Vec<f64> = (0..72).map(|_| rng.random_range(-1.0..1.0)).collect();
                let got = forward(&net, &x).unwrap().logits;
                let want = oracle_logits(&net, &x);
                for (g, w) in got.iter().zip(&want) {
                    assert!((g - w).abs() < 1e-12, "{g} vs {w}");
                }
            }
        }
    }

    #[test]
    fn strided_padded_conv_shape() {
        let c = Conv2d {
            in_channels: 1,
            out_channels: 1,
            kernel: 3,
            stride: 2,
            padding: 1,
            weights: vec![1.0; 9],
            bias: vec![0.0],
        };
        let x: Vec<f64> = (0..25).map(f64::from).collect();
        let y = conv_forward(&c, [1, 5, 5], &x);
        assert_eq!(y.len(), 9);
        // top-left output sums the 2x2 in-bounds corner
        assert_eq!(y[0], 0.0 + 1.0 + 5.0 + 6.0);
    }

    #[test]
    fn residual_forward_adds_shortcut() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let body = vec![
            Layer::Conv2d(Conv2d {
                in_channels: 2,
                out_channels: 2,
                kernel: 3,
                stride: 1,
                padding: 1,
                weights: (0..36).map(|_| rng.random_range(-1.0..1.0)).collect(),
                bias: vec![0.1, -0.2],
            }),
            Layer::Relu,
        ];
        let net = Network::new(
            "res",
            [2, 4, 4],
            vec![
                Layer::Residual(ResidualBlock { body }),
                Layer::Flatten,
                dense(32, 2, (0..64).map(|_| rng.random_range(-1.0..1.0)).collect()),
            ],
        )
        .unwrap();
        let x: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let acts = forward(&net, &x).unwrap();
        // node 0 = block, node 1 = conv, node 2 = relu
        for i in 0..32 {
            assert_eq!(acts.nodes[0][i], acts.nodes[2][i] + x[i]);
        }
    }

    #[test]
    fn parameter_gradients_match_central_differences() {
        let mut base = crate::model::ModelManifest::resnet_mini([1, 6, 6], 3, 2, 9).build(None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        // zero biases put pre-activations fed only by zero inputs exactly on the ReLU kink
        for (_, b) in base.param_tensors_mut() {
            b.iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
        }
        let x: Vec<f64> = (0..36).map(|_| rng.random_range(0.0..1.0)).collect();
        let loss = |net: &Network| OutputMode::Probability.value(&forward(net, &x).unwrap().logits, 1);

        let acts = forward(&base, &x).unwrap();
        let seed = OutputMode::Probability.seed_gradient(&acts.logits, 1);
        let mut grads: Vec<ParamGrad> = base
            .params()
            .iter()
            .map(|p| {
                let (w, b) = base.param_tensors(p.param_id);
                ParamGrad {
                    dw: vec![0.0; w.len()],
                    db: vec![0.0; b.len()],
                }
            })
            .collect();
        backprop(&base, &acts, seed, None, Some(&mut grads));

        let h = 1e-6;
        for (pid, g) in grads.iter().enumerate() {
            for (j, &analytic) in g.dw.iter().enumerate().step_by(3) {
                let mut plus = base.clone();
                plus.param_tensors_mut()[pid].0[j] += h;
                let mut minus = base.clone();
                minus.param_tensors_mut()[pid].0[j] -= h;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
                assert!((numeric - analytic).abs() <= 1e-6 + 1e-4 * analytic.abs(), "param {pid} w[{j}]: {numeric} vs {analytic}");
            }
            for (j, &analytic) in g.db.iter().enumerate() {
                let mut plus = base.clone();
                plus.param_tensors_mut()[pid].1[j] += h;
                let mut minus = base.clone();
                minus.param_tensors_mut()[pid].1[j] -= h;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
                assert!((numeric - analytic).abs() <= 1e-6 + 1e-4 * analytic.abs(), "param {pid} b[{j}]: {numeric} vs {analytic}");
            }
        }
    }
}
