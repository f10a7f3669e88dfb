//! 8-bit symmetric quantization and integer inference with a per-layer
//! multiplier assignment, per-layer neuron-skip masks and optional weight
//! remapping.
//!
//! Every multiply in a parameterized layer goes through that layer's product
//! table; accumulation, bias add and requantization are exact integer/real
//! arithmetic with round-half-away-from-zero. The last layer's accumulator is
//! dequantized directly into logits.

mod exec;
mod quant;

pub use exec::{approx_accuracy, forward_approx, forward_int8, int8_accuracy, ApproxModel};
pub use quant::{calibrate_quant, quantize_network, quantize_value, QConv, QDense, QLayer, QResidual, QuantParams, QuantizedNetwork, QMAX};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multiplier and skipping for one parameterized layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerApprox {
    pub multiplier: String,
    #[serde(default)]
    pub skip_fraction: f64,
    /// Realized skipped neurons; filled in by [`apply_skip_mask`].
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skip_indices: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxDNNConfig {
    pub layers: Vec<LayerApprox>,
    #[serde(default)]
    pub use_weight_map: bool,
}

impl AxDNNConfig {
    /// Every layer on `multiplier`, nothing skipped.
    pub fn uniform(layers: usize, multiplier: &str) -> Self {
        AxDNNConfig {
            layers: (0..layers)
                .map(|_| LayerApprox {
                    multiplier: multiplier.to_string(),
                    skip_fraction: 0.0,
                    skip_indices: Vec::new(),
                })
                .collect(),
            use_weight_map: false,
        }
    }

    pub fn validate(&self, param_layers: usize) -> Result<()> {
        if self.layers.len() != param_layers {
            return Err(Error::config(
                "layers",
                format!("{} entries for {param_layers} parameterized layers", self.layers.len()),
            ));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if !(0.0..1.0).contains(&l.skip_fraction) {
                return Err(Error::config("skip_fraction", format!("layer {i}: {} outside [0, 1)", l.skip_fraction)));
            }
        }
        Ok(())
    }

    pub fn multipliers(&self) -> Vec<String> {
        self.layers.iter().map(|l| l.multiplier.clone()).collect()
    }

    pub fn skip_fractions(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.skip_fraction).collect()
    }

    pub fn skip_indices(&self) -> Vec<Vec<usize>> {
        self.layers.iter().map(|l| l.skip_indices.clone()).collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Indices of the `floor(fraction·Y)` neurons with the smallest `|C|`, ties to
/// the lower index, returned in ascending index order. At least one neuron
/// always survives.
pub fn least_important(conductance: &[f64], fraction: f64) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::config("skip_fraction", format!("{fraction} outside [0, 1)")));
    }
    let y = conductance.len();
    let count = ((fraction * y as f64).floor() as usize).min(y.saturating_sub(1));
    let mut order: Vec<usize> = (0..y).collect();
    order.sort_by(|&a, &b| conductance[a].abs().total_cmp(&conductance[b].abs()).then(a.cmp(&b)));
    let mut picked = order[..count].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Masks the least important neurons of every layer. `conductances[l]` holds
/// one value per output neuron (conv channel or dense unit) of parameterized
/// layer `l`.
pub fn apply_skip_mask(
    qnet: &QuantizedNetwork,
    conductances: &[Vec<f64>],
    fractions: &[f64],
) -> Result<(QuantizedNetwork, Vec<Vec<usize>>)> {
    let n = qnet.params.len();
    if conductances.len() != n || fractions.len() != n {
        return Err(Error::config(
            "skip_fraction",
            format!("{n} layers but {} conductance vectors and {} fractions", conductances.len(), fractions.len()),
        ));
    }
    let mut out = qnet.clone();
    let mut all = Vec::with_capacity(n);
    for (pid, (c, &f)) in conductances.iter().zip(fractions).enumerate() {
        let info = &qnet.params[pid];
        if c.len() != info.neurons() {
            return Err(Error::shape(&info.name, format!("{} conductances for {} neurons", c.len(), info.neurons())));
        }
        let idx = least_important(c, f)?;
        for &i in &idx {
            out.masks[pid][i] = true;
        }
        if out.masks[pid].iter().all(|&m| m) {
            return Err(Error::MaskWholeLayer { layer: info.name.clone() });
        }
        all.push(idx);
    }
    Ok((out, all))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::axmul::{make_exact, synth_truncated, MultiplierLibrary};
    use crate::data::{synth_dataset, Dataset, Split};
    use crate::model::{Conv2d, Dense, Layer, ModelManifest, Network, ResidualBlock};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn library() -> MultiplierLibrary {
        MultiplierLibrary::new(vec![make_exact(), synth_truncated(4).unwrap().with_name("T4")]).unwrap()
    }

    fn calib_for(net: &Network, n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = crate::model::numel(net.input_shape);
        let images = (0..n * len).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        Dataset::new(net.input_shape, net.num_classes(), images, vec![0; n], Split::Calibration).unwrap()
    }

    fn random_dense_net(seed: u64) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dense = |i: usize, o: usize| {
            Layer::Dense(Dense {
                inputs: i,
                outputs: o,
                weights: (0..i * o).map(|_| rng.random_range(-0.5..0.5)).collect(),
                bias: (0..o).map(|_| rng.random_range(-0.2..0.2)).collect(),
            })
        };
        let layers = vec![dense(6, 8), Layer::Relu, dense(8, 7), Layer::Relu, dense(7, 4)];
        Network::new("mlp", [6, 1, 1], layers).unwrap()
    }

    #[test]
    fn weight_scale_is_max_abs_over_127() {
        let delta = 0.01;
        let net = Network::new(
            "d",
            [2, 1, 1],
            vec![Layer::Dense(Dense {
                inputs: 2,
                outputs: 2,
                weights: vec![127.0 * delta, -50.0 * delta, 3.0 * delta, -127.0 * delta],
                bias: vec![0.0; 2],
            })],
        )
        .unwrap();
        let qp = calibrate_quant(&net, &calib_for(&net, 4, 0)).unwrap();
        assert!((qp.weight_scales[0] - delta).abs() < 1e-15);
        let q = quantize_network(&net, &qp).unwrap();
        assert_eq!(q.codes(0), &[127, -50, 3, -127]);
    }

    #[test]
    fn doubling_weights_keeps_codes() {
        let net = random_dense_net(1);
        let mut twice = net.clone();
        for (w, _) in twice.param_tensors_mut() {
            w.iter_mut().for_each(|v| *v *= 2.0);
        }
        let calib = calib_for(&net, 8, 1);
        let (qa, qb) = (calibrate_quant(&net, &calib).unwrap(), calibrate_quant(&twice, &calib).unwrap());
        for l in 0..3 {
            assert!((qb.weight_scales[l] - 2.0 * qa.weight_scales[l]).abs() < 1e-12);
        }
        let (a, b) = (quantize_network(&net, &qa).unwrap(), quantize_network(&twice, &qb).unwrap());
        for l in 0..3 {
            assert_eq!(a.codes(l), b.codes(l));
        }
    }

    #[test]
    fn all_zero_weights_name_the_layer() {
        let mut net = random_dense_net(2);
        let (w, _) = net.param_tensors_mut().remove(1);
        w.iter_mut().for_each(|v| *v = 0.0);
        let err = calibrate_quant(&net, &calib_for(&net, 2, 0)).unwrap_err();
        assert!(matches!(err, Error::ZeroScale { ref layer } if layer == "fc2"), "{err}");
    }

    #[test]
    fn quantize_boundaries_and_rounding() {
        assert_eq!(quantize_value(0.0, 0.1), 0);
        assert_eq!(quantize_value(12.7, 0.1), 127);
        assert_eq!(quantize_value(100.0, 0.1), 127);
        assert_eq!(quantize_value(-100.0, 0.1), -127);
        assert_eq!(quantize_value(0.25, 0.1), 3);
        assert_eq!(quantize_value(-0.25, 0.1), -3);
    }

    #[test]
    fn identity_dense_passes_codes_through() {
        // W = I·s with s chosen so the output scale equals the input scale
        let n = 4;
        let mut weights = vec![0.0; n * n];
        for i in 0..n {
            weights[i * n + i] = 1.0;
        }
        let net = Network::new(
            "id",
            [n, 1, 1],
            vec![
                Layer::Dense(Dense {
                    inputs: n,
                    outputs: n,
                    weights,
                    bias: vec![0.0; n],
                }),
                Layer::Relu,
            ],
        )
        .unwrap();
        let qp = QuantParams {
            input_scale: 0.01,
            weight_scales: vec![1.0 / 127.0],
            act_scales: vec![0.01],
            join_scales: vec![],
        };
        let q = quantize_network(&net, &qp).unwrap();
        let lib = library();
        let x = [0.5, 0.27, 1.0, 0.03];
        let out = forward_approx(&q, &AxDNNConfig::uniform(1, "M1"), &lib, &x).unwrap();
        // codes (50, 27, 100, 3) * 127 weight code * s_in s_w / s_out = codes
        let codes: Vec<i64> = out.iter().map(|v| (v / 0.01).round() as i64).collect();
        assert_eq!(codes, vec![50, 27, 100, 3]);
    }

    #[test]
    fn skip_rule_examples() {
        assert_eq!(least_important(&[0.9, 0.1, 0.5, 0.05], 0.5).unwrap(), vec![1, 3]);
        assert!(least_important(&[1.0, 2.0, 3.0], 0.0).unwrap().is_empty());
        assert_eq!(least_important(&[1.0, 2.0, 3.0], 0.99).unwrap(), vec![0, 1]);
        // ties go to the lower index
        assert_eq!(least_important(&[1.0, -1.0, 1.0, 2.0], 0.5).unwrap(), vec![0, 1]);
        assert!(least_important(&[1.0], 1.0).is_err());
    }

    #[test]
    fn lenet_default_fractions_floor() {
        let net = ModelManifest::lenet5(0).build(None).unwrap();
        let calib = synth_dataset(10, 2, [1, 28, 28], 0).unwrap();
        let q = quantize_network(&net, &calibrate_quant(&net, &calib).unwrap()).unwrap();
        let cond: Vec<Vec<f64>> = q.params.iter().map(|p| (0..p.neurons()).map(|i| i as f64).collect()).collect();
        // last entry is 0.70 of the logits layer here only to exercise flooring
        let (masked, idx) = apply_skip_mask(&q, &cond, &[0.05, 0.0, 0.10, 0.15, 0.70]).unwrap();
        let counts: Vec<usize> = idx.iter().map(Vec::len).collect();
        assert_eq!(counts, vec![0, 0, 12, 12, 7]);
        assert_eq!(masked.skip_indices(), idx);
    }

    #[test]
    fn zero_fraction_is_bit_identical() {
        let net = random_dense_net(3);
        let q = quantize_network(&net, &calibrate_quant(&net, &calib_for(&net, 8, 3)).unwrap()).unwrap();
        let cond: Vec<Vec<f64>> = q.params.iter().map(|p| vec![1.0; p.neurons()]).collect();
        let (masked, _) = apply_skip_mask(&q, &cond, &[0.0; 3]).unwrap();
        assert_eq!(masked, q);
    }

    #[test]
    fn masked_neurons_are_exactly_zero() {
        let net = random_dense_net(4);
        let calib = calib_for(&net, 16, 4);
        let q = quantize_network(&net, &calibrate_quant(&net, &calib).unwrap()).unwrap();
        let mut cfg = AxDNNConfig::uniform(3, "T4");
        cfg.layers[2].skip_indices = vec![1, 3];
        let lib = library();
        for i in 0..calib.len() {
            let out = forward_approx(&q, &cfg, &lib, &calib.image(i)).unwrap();
            assert_eq!(out[1], 0.0);
            assert_eq!(out[3], 0.0);
        }
        cfg.layers[0].skip_indices = (0..8).collect();
        assert!(matches!(
            forward_approx(&q, &cfg, &lib, &calib.image(0)),
            Err(Error::MaskWholeLayer { .. })
        ));
    }

    fn small_cnn(seed: u64, residual: bool) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut conv = |i: usize, o: usize, k: usize, stride: usize, padding: usize| Conv2d {
            in_channels: i,
            out_channels: o,
            kernel: k,
            stride,
            padding,
            weights: (0..o * i * k * k).map(|_| rng.random_range(-0.4..0.4)).collect(),
            bias: (0..o).map(|_| rng.random_range(-0.1..0.1)).collect(),
        };
        let mut layers = vec![Layer::Conv2d(conv(2, 3, 3, 1, 1)), Layer::Relu];
        if residual {
            layers.push(Layer::Residual(ResidualBlock {
                body: vec![Layer::Conv2d(conv(3, 3, 3, 1, 1)), Layer::Relu, Layer::Conv2d(conv(3, 3, 3, 1, 1))],
            }));
            layers.push(Layer::Relu);
        }
        layers.push(Layer::Conv2d(conv(3, 4, 3, 2, 1)));
        layers.push(Layer::Relu);
        layers.push(Layer::MaxPool2d);
        layers.push(Layer::Flatten);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        layers.push(Layer::Dense(Dense {
            inputs: 16,
            outputs: 3,
            weights: (0..48).map(|_| rng.random_range(-0.4..0.4)).collect(),
            bias: vec![0.05, -0.05, 0.0],
        }));
        Network::new("cnn", [2, 8, 8], layers).unwrap()
    }

    #[test]
    fn exact_assignment_equals_int8_reference() {
        let lib = library();
        for (seed, residual) in [(5, false), (6, true), (7, true)] {
            let net = small_cnn(seed, residual);
            let calib = calib_for(&net, 12, seed);
            let q = quantize_network(&net, &calibrate_quant(&net, &calib).unwrap()).unwrap();
            let cfg = AxDNNConfig::uniform(q.params.len(), "M1");
            for i in 0..calib.len() {
                let x = calib.image(i);
                assert_eq!(forward_approx(&q, &cfg, &lib, &x).unwrap(), forward_int8(&q, &x).unwrap());
            }
        }
    }

    #[test]
    fn quantized_output_tracks_float() {
        let net = small_cnn(8, true);
        let calib = calib_for(&net, 20, 8);
        let q = quantize_network(&net, &calibrate_quant(&net, &calib).unwrap()).unwrap();
        for i in 0..calib.len() {
            let x = calib.image(i);
            let f = crate::model::forward(&net, &x).unwrap().logits;
            let z = forward_int8(&q, &x).unwrap();
            let scale = f.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-3);
            for (a, b) in f.iter().zip(&z) {
                assert!((a - b).abs() <= 0.1 * scale, "{f:?} vs {z:?}");
            }
        }
    }

    /// Independent scalar interpreter for a dense-relu chain.
    fn oracle_mlp(q: &QuantizedNetwork, lut: &crate::axmul::MultiplierLUT, x: &[f64]) -> Vec<f64> {
        let round_clamp = |v: f64| -> i64 {
            let r = if v >= 0.0 { (v + 0.5).floor() } else { -((-v + 0.5).floor()) };
            (r as i64).clamp(-127, 127)
        };
        let mut a: Vec<i64> = x.iter().map(|&v| round_clamp(v / q.input_scale)).collect();
        let mut out = Vec::new();
        for layer in &q.layers {
            match layer {
                QLayer::Dense(d) => {
                    let mut next = Vec::new();
                    for o in 0..d.outputs {
                        let mut acc: i64 = i64::from(d.bias[o]);
                        for i in 0..d.inputs {
                            let w = i64::from(d.codes[o * d.inputs + i]);
                            let p = i64::from(lut.product(a[i].unsigned_abs() as u8, w.unsigned_abs() as u8));
                            acc += if (a[i] < 0) ^ (w < 0) { -p } else { p };
                        }
                        match d.out_scale {
                            Some(s) => next.push(round_clamp(acc as f64 * (d.in_scale * d.w_scale / s))),
                            None => out.push(acc as f64 * (d.in_scale * d.w_scale)),
                        }
                    }
                    a = next;
                }
                QLayer::Relu => a.iter_mut().for_each(|v| *v = (*v).max(0)),
                _ => unreachable!(),
            }
        }
        out
    }

    #[test]
    fn truncated_lut_matches_scalar_oracle() {
        let lib = library();
        let lut = synth_truncated(4).unwrap();
        for seed in 0..3 {
            let net = random_dense_net(10 + seed);
            let calib = calib_for(&net, 25, seed);
            let q = quantize_network(&net, &calibrate_quant(&net, &calib).unwrap()).unwrap();
            let cfg = AxDNNConfig::uniform(3, "T4");
            let model = ApproxModel::new(&q, &cfg, &lib).unwrap();
            for i in 0..calib.len() {
                let x = calib.image(i);
                assert_eq!(model.logits(&x).unwrap(), oracle_mlp(&q, &lut, &x));
            }
        }
    }

    #[test]
    fn weight_map_changes_only_what_the_map_changes() {
        let lib = library();
        let net = random_dense_net(20);
        let calib = calib_for(&net, 10, 20);
        let q = quantize_network(&net, &calibrate_quant(&net, &calib).unwrap()).unwrap();
        let mut cfg = AxDNNConfig::uniform(3, "M1");
        cfg.use_weight_map = true;
        let plain = AxDNNConfig::uniform(3, "M1");
        // exact multiplier: the map is the identity
        for i in 0..calib.len() {
            let x = calib.image(i);
            assert_eq!(forward_approx(&q, &cfg, &lib, &x).unwrap(), forward_approx(&q, &plain, &lib, &x).unwrap());
        }
    }

    #[test]
    fn config_json_round_trip_and_validation() {
        let text = r#"{"layers":[{"multiplier":"M2","skip_fraction":0.05},{"multiplier":"M1","skip_fraction":0.0}],"use_weight_map":true}"#;
        let cfg = AxDNNConfig::from_json(text).unwrap();
        assert_eq!(cfg.multipliers(), vec!["M2", "M1"]);
        assert!(cfg.validate(2).is_ok());
        assert!(cfg.validate(3).is_err());
        let back: AxDNNConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        let mut bad = cfg;
        bad.layers[0].skip_fraction = 1.0;
        assert!(bad.validate(2).is_err());
    }

    #[test]
    fn unknown_multiplier_is_an_error() {
        let net = random_dense_net(0);
        let q = quantize_network(&net, &calibrate_quant(&net, &calib_for(&net, 2, 0)).unwrap()).unwrap();
        let cfg = AxDNNConfig::uniform(3, "nope");
        assert!(matches!(ApproxModel::new(&q, &cfg, &library()), Err(Error::UnknownMultiplier(_))));
    }
}
