//! Neuron conductance along the straight path from a baseline, layer and
//! unit importance, rankings, and the Gaussian-noise resilience probe.
//!
//! For a hidden activation `y` and scalar output `F`, conductance is
//! `∫ ∂F/∂y · dy` along `x(α) = x′ + α(x − x′)`, approximated with `N`
//! trapezoidal steps:
//! `C_y ≈ Σ_k ½(∂F/∂y(x^{k−1}) + ∂F/∂y(x^k)) · (y(x^k) − y(x^{k−1}))`.
//! Against a right-endpoint sum this removes the one-sided bias each ReLU
//! or pooling switch inside a step adds, which is what keeps layer sums
//! within 1% of `F(x) − F(x′)` at `N = 512`.
//! Conductance is measured at every parameterized layer's output (before any
//! ReLU). A conv neuron is an output channel: its conductance is the sum over
//! spatial positions.

mod noise;

pub use noise::{noise_resilience, noise_sweep, write_noise_csv, NoiseLevel, NoiseRow};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{backward_with, forward, Network, OutputMode};

pub const DEFAULT_SEARCH_STEPS: usize = 64;
pub const DEFAULT_VALIDATION_STEPS: usize = 512;

/// Conductance of every neuron for one `(x, target)` pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronConductance {
    pub target: usize,
    pub steps: usize,
    pub mode: OutputMode,
    /// Per parameterized layer, one value per output element `(c, h, w)`.
    pub per_element: Vec<Vec<f64>>,
    /// Per parameterized layer, one value per neuron (channel or unit).
    pub per_neuron: Vec<Vec<f64>>,
    /// Attribution of each input element (integrated gradients).
    pub input: Vec<f64>,
    /// `F(x)` and `F(x′)`.
    pub output: f64,
    pub baseline_output: f64,
}

/// Trapezoidal approximation of neuron conductance for every parameterized layer.
pub fn neuron_conductance(
    net: &Network,
    x: &[f64],
    baseline: &[f64],
    target: usize,
    steps: usize,
    mode: OutputMode,
) -> Result<NeuronConductance> {
    if steps == 0 {
        return Err(Error::config("steps", "must be at least 1"));
    }
    if x.len() != baseline.len() {
        return Err(Error::shape("baseline", format!("{} values for an input of {}", baseline.len(), x.len())));
    }
    if target >= net.num_classes() {
        return Err(Error::InvalidClass {
            index: target,
            classes: net.num_classes(),
        });
    }
    let infos = net.params();
    let node_ids: Vec<usize> = infos.iter().map(|p| p.node_id).collect();
    let point = |k: usize| -> Vec<f64> {
        let a = k as f64 / steps as f64;
        baseline.iter().zip(x).map(|(b, v)| b + a * (v - b)).collect()
    };

    // y(x^k), ∂F/∂y and ∂F/∂x at x^k for k = 0..=N
    type Sample = (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>, f64);
    let samples = (0..=steps)
        .into_par_iter()
        .map(|k| -> Result<Sample> {
            let acts = forward(net, &point(k))?;
            let ys = node_ids.iter().map(|&n| acts.nodes[n].clone()).collect();
            let f = mode.value(&acts.logits, target);
            let tape = backward_with(net, &acts, target, mode)?;
            let gs = node_ids.iter().map(|&n| tape.node_grads[n].clone()).collect();
            Ok((ys, gs, tape.input_grad, f))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut per_element: Vec<Vec<f64>> = samples[0].0.iter().map(|y| vec![0.0; y.len()]).collect();
    let mut input = vec![0.0; x.len()];
    for k in 1..=steps {
        let (prev, g0, gx0, _) = &samples[k - 1];
        let (cur, g1, gx1, _) = &samples[k];
        for (l, acc) in per_element.iter_mut().enumerate() {
            for (e, c) in acc.iter_mut().enumerate() {
                *c += 0.5 * (g0[l][e] + g1[l][e]) * (cur[l][e] - prev[l][e]);
            }
        }
        for (i, c) in input.iter_mut().enumerate() {
            *c += 0.5 * (gx0[i] + gx1[i]) * (x[i] - baseline[i]) / steps as f64;
        }
    }
    let per_neuron = per_element
        .iter()
        .zip(&infos)
        .map(|(c, info)| {
            let per = c.len() / info.neurons();
            c.chunks(per).map(|ch| ch.iter().sum()).collect()
        })
        .collect();
    Ok(NeuronConductance {
        target,
        steps,
        mode,
        per_element,
        per_neuron,
        input,
        output: samples[steps].3,
        baseline_output: samples[0].3,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// `z_l = Σ_y |C_y|`.
    #[default]
    AbsSum,
    /// `z_l = Σ_y C_y`.
    SignedSum,
}

/// Per-layer aggregate of per-neuron conductances.
pub fn layer_importance(per_neuron: &[Vec<f64>], agg: Aggregation) -> Vec<f64> {
    per_neuron
        .iter()
        .map(|c| match agg {
            Aggregation::AbsSum => c.iter().map(|v| v.abs()).sum(),
            Aggregation::SignedSum => c.iter().sum(),
        })
        .collect()
}

/// Sums layer importances over the members of each attribution unit.
pub fn unit_importance(net: &Network, layer_z: &[f64]) -> Vec<f64> {
    net.units().iter().map(|u| u.params.iter().map(|&p| layer_z[p]).sum()).collect()
}

/// `z / max(z)` when `max(z) > 0`, otherwise all zero.
pub fn normalize(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max > 0.0 {
        z.iter().map(|v| v / max).collect()
    } else {
        vec![0.0; z.len()]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRanking {
    /// Most important first.
    pub descending: Vec<usize>,
    /// Least important first: the reverse of `descending`.
    pub ascending: Vec<usize>,
}

/// Stable ranking; on equal `z` the earlier index counts as more important.
pub fn rank_layers(z: &[f64]) -> LayerRanking {
    let mut descending: Vec<usize> = (0..z.len()).collect();
    descending.sort_by(|&a, &b| z[b].total_cmp(&z[a]).then(a.cmp(&b)));
    let ascending = descending.iter().rev().copied().collect();
    LayerRanking { descending, ascending }
}

/// Least important neurons per layer under the executor's skip rule.
pub fn skip_indices(per_neuron: &[Vec<f64>], fractions: &[f64]) -> Result<Vec<Vec<usize>>> {
    if per_neuron.len() != fractions.len() {
        return Err(Error::config(
            "skip_fraction",
            format!("{} fractions for {} layers", fractions.len(), per_neuron.len()),
        ));
    }
    per_neuron
        .iter()
        .zip(fractions)
        .map(|(c, &f)| crate::axexec::least_important(c, f))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConductanceOptions {
    pub steps: usize,
    pub mode: OutputMode,
    pub aggregation: Aggregation,
    /// Number of distinct target classes averaged over.
    pub experiments: usize,
    pub samples_per_class: usize,
    pub seed: u64,
}

impl Default for ConductanceOptions {
    fn default() -> Self {
        ConductanceOptions {
            steps: DEFAULT_SEARCH_STEPS,
            mode: OutputMode::Logit,
            aggregation: Aggregation::AbsSum,
            experiments: 5,
            samples_per_class: 8,
            seed: 0,
        }
    }
}

/// Averaged conductances of a network over several target-class experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConductanceReport {
    pub model: String,
    pub layer_names: Vec<String>,
    pub unit_names: Vec<String>,
    /// Members of each unit, as parameterized-layer indices.
    pub unit_layers: Vec<Vec<usize>>,
    pub target_classes: Vec<usize>,
    pub samples_per_class: usize,
    pub steps: usize,
    pub mode: OutputMode,
    pub aggregation: Aggregation,
    /// The baseline input; always all zeros.
    pub baseline: String,
    /// Mean signed conductance per layer and neuron.
    pub neuron_signed: Vec<Vec<f64>>,
    /// Mean absolute conductance per layer and neuron; the skip ranking key.
    pub neuron_abs: Vec<Vec<f64>>,
    /// `z_l` of each target-class experiment.
    pub experiment_z: Vec<Vec<f64>>,
    pub layer_z: Vec<f64>,
    pub layer_z_normalized: Vec<f64>,
    pub layer_ranking: LayerRanking,
    pub unit_z: Vec<f64>,
    pub unit_z_normalized: Vec<f64>,
    pub unit_ranking: LayerRanking,
}

impl ConductanceReport {
    pub fn skip_indices(&self, fractions: &[f64]) -> Result<Vec<Vec<usize>>> {
        skip_indices(&self.neuron_abs, fractions)
    }

    /// Re-aggregates with another mode.
    pub fn reaggregate(&self, aggregation: Aggregation) -> (Vec<f64>, LayerRanking) {
        let z = match aggregation {
            Aggregation::AbsSum => layer_importance(&self.neuron_abs, Aggregation::SignedSum),
            Aggregation::SignedSum => layer_importance(&self.neuron_signed, Aggregation::SignedSum),
        };
        let r = rank_layers(&z);
        (z, r)
    }
}

/// Picks up to `count` distinct classes present in `data`, seeded.
pub fn pick_classes(data: &Dataset, count: usize, seed: u64) -> Vec<usize> {
    let mut present: Vec<usize> = (0..data.classes).filter(|&c| data.labels.iter().any(|&l| l as usize == c)).collect();
    present.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    present.truncate(count);
    present
}

/// Runs the target-class experiments: for each class, the conductance of
/// `samples_per_class` images of that class toward their own label, averaged.
pub fn conductance_report(net: &Network, data: &Dataset, opts: &ConductanceOptions) -> Result<ConductanceReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if opts.experiments == 0 || opts.samples_per_class == 0 {
        return Err(Error::config("experiments", "need at least one class and one sample"));
    }
    let infos = net.params();
    let units = net.units();
    let classes = pick_classes(data, opts.experiments, opts.seed);
    let baseline = vec![0.0; crate::model::numel(net.input_shape)];
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1));
    let zeros: Vec<Vec<f64>> = infos.iter().map(|p| vec![0.0; p.neurons()]).collect();
    let (mut signed, mut abs) = (zeros.clone(), zeros.clone());
    let mut experiment_z = Vec::with_capacity(classes.len());
    let mut total = 0usize;
    for &class in &classes {
        let mut idx = data.indices_of_class(class);
        idx.shuffle(&mut rng);
        idx.truncate(opts.samples_per_class);
        let (mut es, mut ea) = (zeros.clone(), zeros.clone());
        for &i in &idx {
            let nc = neuron_conductance(net, &data.image(i), &baseline, class, opts.steps, opts.mode)?;
            for (l, c) in nc.per_neuron.iter().enumerate() {
                for (n, v) in c.iter().enumerate() {
                    es[l][n] += v;
                    ea[l][n] += v.abs();
                }
            }
        }
        let inv = 1.0 / idx.len() as f64;
        for l in 0..es.len() {
            for n in 0..es[l].len() {
                es[l][n] *= inv;
                ea[l][n] *= inv;
                signed[l][n] += es[l][n];
                abs[l][n] += ea[l][n];
            }
        }
        experiment_z.push(match opts.aggregation {
            Aggregation::AbsSum => layer_importance(&ea, Aggregation::SignedSum),
            Aggregation::SignedSum => layer_importance(&es, Aggregation::SignedSum),
        });
        total += 1;
    }
    let inv = 1.0 / total as f64;
    for l in 0..signed.len() {
        for n in 0..signed[l].len() {
            signed[l][n] *= inv;
            abs[l][n] *= inv;
        }
    }
    let layer_z = match opts.aggregation {
        Aggregation::AbsSum => layer_importance(&abs, Aggregation::SignedSum),
        Aggregation::SignedSum => layer_importance(&signed, Aggregation::SignedSum),
    };
    let unit_z = unit_importance(net, &layer_z);
    Ok(ConductanceReport {
        model: net.name.clone(),
        layer_names: infos.iter().map(|p| p.name.clone()).collect(),
        unit_names: units.iter().map(|u| u.name.clone()).collect(),
        unit_layers: units.iter().map(|u| u.params.clone()).collect(),
        target_classes: classes,
        samples_per_class: opts.samples_per_class,
        steps: opts.steps,
        mode: opts.mode,
        aggregation: opts.aggregation,
        baseline: "zeros".to_string(),
        neuron_signed: signed,
        neuron_abs: abs,
        experiment_z,
        layer_z_normalized: normalize(&layer_z),
        layer_ranking: rank_layers(&layer_z),
        unit_z_normalized: normalize(&unit_z),
        unit_ranking: rank_layers(&unit_z),
        layer_z,
        unit_z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dense, Layer};
    use rand::{Rng, SeedableRng};

    fn linear(w: &[f64]) -> Network {
        Network::new(
            "lin",
            [w.len(), 1, 1],
            vec![Layer::Dense(Dense {
                inputs: w.len(),
                outputs: 1,
                weights: w.to_vec(),
                bias: vec![0.3],
            })],
        )
        .unwrap()
    }

    fn two_layer(seed: u64) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dense = |i: usize, o: usize| {
            Layer::Dense(Dense {
                inputs: i,
                outputs: o,
                weights: (0..i * o).map(|_| rng.random_range(-1.0..1.0)).collect(),
                bias: (0..o).map(|_| rng.random_range(-0.5..0.5)).collect(),
            })
        };
        Network::new("mlp", [5, 1, 1], vec![dense(5, 12), Layer::Relu, dense(12, 3)]).unwrap()
    }

    #[test]
    fn linear_network_is_exact_for_any_step_count() {
        let w = [0.5, -2.0, 1.25];
        let x = [1.0, 0.75, -0.4];
        for steps in [1, 2, 7] {
            let nc = neuron_conductance(&linear(&w), &x, &[0.0; 3], 0, steps, OutputMode::Logit).unwrap();
            for i in 0..3 {
                assert!((nc.input[i] - w[i] * x[i]).abs() < 1e-12);
            }
            // the output neuron carries F(x) − F(0)
            let delta: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
            assert!((nc.per_neuron[0][0] - delta).abs() < 1e-12);
        }
    }

    #[test]
    fn baseline_input_gives_zero_conductance() {
        let net = two_layer(1);
        let x = [0.3, -0.2, 0.9, 0.1, 0.0];
        let nc = neuron_conductance(&net, &x, &x, 1, 16, OutputMode::Logit).unwrap();
        assert!(nc.per_element.iter().flatten().all(|&v| v == 0.0));
        assert!(layer_importance(&nc.per_neuron, Aggregation::AbsSum).iter().all(|&z| z == 0.0));
    }

    #[test]
    fn rejects_zero_steps_and_shape_mismatch() {
        let net = two_layer(0);
        assert!(neuron_conductance(&net, &[0.0; 5], &[0.0; 5], 0, 0, OutputMode::Logit).is_err());
        assert!(neuron_conductance(&net, &[0.0; 5], &[0.0; 4], 0, 4, OutputMode::Logit).is_err());
        assert!(neuron_conductance(&net, &[0.0; 5], &[0.0; 5], 3, 4, OutputMode::Logit).is_err());
    }

    #[test]
    fn aggregation_examples() {
        let c = vec![vec![1.0, -1.0]];
        assert_eq!(layer_importance(&c, Aggregation::AbsSum), vec![2.0]);
        assert_eq!(layer_importance(&c, Aggregation::SignedSum), vec![0.0]);
    }

    #[test]
    fn ranking_examples() {
        let r = rank_layers(&[3.0, 1.0, 2.0]);
        assert_eq!(r.descending, vec![0, 2, 1]);
        assert_eq!(r.ascending, vec![1, 2, 0]);
        assert_eq!(rank_layers(&[1.0; 4]).descending, vec![0, 1, 2, 3]);
        assert_eq!(normalize(&[2.0, 4.0]), vec![0.5, 1.0]);
        assert_eq!(normalize(&[0.0, 0.0]), vec![0.0, 0.0]);
    }

    /// For `F = w2·relu(y) + b2` with `y = W1·x + b1`, `∂F/∂y_j = w2_j·1[y_j > 0]`,
    /// so the path integral is `w2_j·(relu(y_j(x)) − relu(y_j(x′)))`.
    fn hidden_closed_form(net: &Network, x: &[f64], baseline: &[f64], target: usize) -> Vec<f64> {
        let Layer::Dense(d1) = &net.layers[0] else { unreachable!() };
        let Layer::Dense(d2) = &net.layers[2] else { unreachable!() };
        let pre = |v: &[f64], j: usize| d1.bias[j] + (0..d1.inputs).map(|i| d1.weights[j * d1.inputs + i] * v[i]).sum::<f64>();
        (0..d1.outputs)
            .map(|j| d2.weights[target * d2.inputs + j] * (pre(x, j).max(0.0) - pre(baseline, j).max(0.0)))
            .collect()
    }

    /// Right-endpoint Riemann sum with closed-form gradients.
    fn hidden_dense_riemann(net: &Network, x: &[f64], target: usize, steps: usize) -> Vec<f64> {
        let Layer::Dense(d1) = &net.layers[0] else { unreachable!() };
        let Layer::Dense(d2) = &net.layers[2] else { unreachable!() };
        let pre = |a: f64, j: usize| d1.bias[j] + (0..d1.inputs).map(|i| d1.weights[j * d1.inputs + i] * a * x[i]).sum::<f64>();
        (0..d1.outputs)
            .map(|j| {
                let w = d2.weights[target * d2.inputs + j];
                (1..=steps)
                    .map(|k| {
                        let (a0, a1) = ((k - 1) as f64 / steps as f64, k as f64 / steps as f64);
                        let g = if pre(a1, j) > 0.0 { w } else { 0.0 };
                        g * (pre(a1, j) - pre(a0, j))
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn two_layer_relu_matches_dense_oracle() {
        for seed in 0..4 {
            let net = two_layer(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 50);
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let target = (seed % 3) as usize;
            let nc = neuron_conductance(&net, &x, &[0.0; 5], target, 64, OutputMode::Logit).unwrap();
            let oracle = hidden_dense_riemann(&net, &x, target, 10_000);
            let exact = hidden_closed_form(&net, &x, &[0.0; 5], target);
            let total: f64 = oracle.iter().map(|v| v.abs()).sum::<f64>().max(1e-9);
            for j in 0..12 {
                assert!((nc.per_neuron[0][j] - oracle[j]).abs() <= 0.01 * total, "seed {seed} neuron {j}");
                assert!((oracle[j] - exact[j]).abs() <= 1e-3 * total);
            }
        }
    }

    #[test]
    fn completeness_on_full_cut_layers() {
        let net = two_layer(7);
        let x = [0.9, -0.4, 0.2, 0.7, -0.8];
        let nc = neuron_conductance(&net, &x, &[0.0; 5], 2, 512, OutputMode::Logit).unwrap();
        let delta = nc.output - nc.baseline_output;
        for z in layer_importance(&nc.per_neuron, Aggregation::SignedSum) {
            assert!((z - delta).abs() <= 0.01 * delta.abs().max(1e-6), "{z} vs {delta}");
        }
        let ig: f64 = nc.input.iter().sum();
        assert!((ig - delta).abs() <= 0.01 * delta.abs().max(1e-6));
    }

    #[test]
    fn scaling_final_weights_scales_conductance() {
        let net = two_layer(3);
        let mut scaled = net.clone();
        let alpha = 2.0;
        if let Layer::Dense(d) = &mut scaled.layers[2] {
            d.weights.iter_mut().for_each(|w| *w *= alpha);
            d.bias.iter_mut().for_each(|b| *b *= alpha);
        }
        let x = [0.1, 0.5, -0.3, 0.8, 0.2];
        let a = neuron_conductance(&net, &x, &[0.0; 5], 0, 32, OutputMode::Logit).unwrap();
        let b = neuron_conductance(&scaled, &x, &[0.0; 5], 0, 32, OutputMode::Logit).unwrap();
        for (ca, cb) in a.per_neuron.iter().flatten().zip(b.per_neuron.iter().flatten()) {
            assert_eq!(cb, &(alpha * ca));
        }
        let za = layer_importance(&a.per_neuron, Aggregation::AbsSum);
        let zb = layer_importance(&b.per_neuron, Aggregation::AbsSum);
        assert_eq!(rank_layers(&za), rank_layers(&zb));
    }

    #[test]
    fn skip_indices_examples() {
        let c = vec![vec![0.9, 0.1, 0.5, 0.05], vec![1.0, 2.0, 3.0]];
        assert_eq!(skip_indices(&c, &[0.5, 0.99]).unwrap(), vec![vec![1, 3], vec![0, 1]]);
        assert_eq!(skip_indices(&c, &[0.0, 0.0]).unwrap(), vec![Vec::<usize>::new(), vec![]]);
        assert!(skip_indices(&c, &[0.0]).is_err());
    }

    #[test]
    fn report_is_deterministic_and_consistent() {
        let data = crate::data::synth_dataset(3, 4, [5, 1, 1], 0).unwrap();
        let net = two_layer(9);
        let opts = ConductanceOptions {
            steps: 8,
            experiments: 3,
            samples_per_class: 2,
            ..Default::default()
        };
        let a = conductance_report(&net, &data, &opts).unwrap();
        assert_eq!(a, conductance_report(&net, &data, &opts).unwrap());
        assert_eq!(a.target_classes.len(), 3);
        let mut sorted = a.layer_ranking.descending.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1]);
        for (z, n) in a.layer_z.iter().zip(&a.neuron_abs) {
            assert!((z - n.iter().sum::<f64>()).abs() < 1e-12);
        }
        let text = serde_json::to_string(&a).unwrap();
        assert_eq!(serde_json::from_str::<ConductanceReport>(&text).unwrap().layer_names, a.layer_names);
    }
}
