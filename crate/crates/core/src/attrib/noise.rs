use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{accuracy, argmax, forward, forward_hooked, Network};

/// Noise strength for one resilience measurement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLevel {
    /// No noise: reproduces the clean accuracy.
    None,
    SnrDb(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub layer: usize,
    pub layer_name: String,
    /// Empty for the no-noise row.
    pub snr_db: Option<f64>,
    pub accuracy: f64,
}

/// Mean square of a parameterized layer's output over `data`.
fn signal_power(net: &Network, layer: usize, data: &Dataset) -> Result<f64> {
    let node = net.params()[layer].node_id;
    let sums = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let acts = forward(net, &data.image(i))?;
            let y = &acts.nodes[node];
            Ok((y.iter().map(|v| v * v).sum::<f64>(), y.len()))
        })
        .collect::<Result<Vec<(f64, usize)>>>()?;
    let (s, n) = sums.iter().fold((0.0, 0usize), |(s, n), (a, b)| (s + a, n + b));
    Ok(s / n.max(1) as f64)
}

/// Accuracy with zero-mean white Gaussian noise added to the output of
/// parameterized layer `layer`, averaged over `trials`. The noise variance is
/// the layer's signal power divided by `10^(snr/10)`.
pub fn noise_resilience(net: &Network, layer: usize, level: NoiseLevel, trials: usize, seed: u64, data: &Dataset) -> Result<f64> {
    let layers = net.param_count();
    if layer >= layers {
        return Err(Error::InvalidArgument(format!("layer {layer} out of range ({layers} parameterized layers)")));
    }
    if trials == 0 {
        return Err(Error::config("trials", "must be at least 1"));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let snr = match level {
        NoiseLevel::None => return accuracy(net, data),
        NoiseLevel::SnrDb(db) if db.is_finite() => db,
        NoiseLevel::SnrDb(db) => return Err(Error::config("snr_db", format!("{db} is not finite"))),
    };
    let sigma = (signal_power(net, layer, data)? / 10f64.powf(snr / 10.0)).sqrt();
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::config("snr_db", e.to_string()))?;
    let mut total = 0.0;
    for trial in 0..trials {
        let hits = (0..data.len())
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(((trial as u64) << 32) | i as u64);
                let acts = forward_hooked(net, &data.image(i), &mut |pid, y| {
                    if pid == layer {
                        y.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
                    }
                })?;
                Ok(usize::from(argmax(&acts.logits) == data.label(i)))
            })
            .collect::<Result<Vec<_>>>()?;
        total += hits.iter().sum::<usize>() as f64 / data.len() as f64;
    }
    Ok(total / trials as f64)
}

/// One no-noise row per layer followed by one row per `(layer, snr)`.
pub fn noise_sweep(net: &Network, layers: &[usize], snrs_db: &[f64], trials: usize, seed: u64, data: &Dataset) -> Result<Vec<NoiseRow>> {
    let infos = net.params();
    let clean = accuracy(net, data)?;
    let mut rows = Vec::new();
    for &l in layers {
        let name = infos
            .get(l)
            .ok_or_else(|| Error::InvalidArgument(format!("layer {l} out of range")))?
            .name
            .clone();
        rows.push(NoiseRow {
            layer: l,
            layer_name: name.clone(),
            snr_db: None,
            accuracy: clean,
        });
        for &snr in snrs_db {
            rows.push(NoiseRow {
                layer: l,
                layer_name: name.clone(),
                snr_db: Some(snr),
                accuracy: noise_resilience(net, l, NoiseLevel::SnrDb(snr), trials, seed, data)?,
            });
        }
    }
    Ok(rows)
}

pub fn write_noise_csv(rows: &[NoiseRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["layer", "layer_name", "snr_db", "accuracy"])?;
    for r in rows {
        w.write_record([
            r.layer.to_string(),
            r.layer_name.clone(),
            r.snr_db.map(|s| s.to_string()).unwrap_or_default(),
            r.accuracy.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    crate::report::write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset;
    use crate::model::{train_sgd, Dense, Layer, TrainOptions};

    fn trained() -> (Network, Dataset) {
        let data = synth_dataset(4, 40, [1, 6, 6], 3).unwrap();
        let net = Network::new(
            "probe",
            [1, 6, 6],
            vec![
                Layer::Flatten,
                Layer::Dense(Dense {
                    inputs: 36,
                    outputs: 16,
                    weights: (0..576).map(|i| ((i * 37 % 101) as f64 / 101.0 - 0.5) * 0.3).collect(),
                    bias: vec![0.0; 16],
                }),
                Layer::Relu,
                Layer::Dense(Dense {
                    inputs: 16,
                    outputs: 4,
                    weights: (0..64).map(|i| ((i * 53 % 97) as f64 / 97.0 - 0.5) * 0.3).collect(),
                    bias: vec![0.0; 4],
                }),
            ],
        )
        .unwrap();
        let (net, _) = train_sgd(&net, &data, &TrainOptions { epochs: 20, lr: 0.05, ..Default::default() }).unwrap();
        (net, data)
    }

    #[test]
    fn sentinel_reproduces_clean_accuracy() {
        let (net, data) = trained();
        assert_eq!(noise_resilience(&net, 0, NoiseLevel::None, 3, 0, &data).unwrap(), accuracy(&net, &data).unwrap());
    }

    #[test]
    fn overwhelming_noise_on_logits_is_chance() {
        let (net, data) = trained();
        assert!(accuracy(&net, &data).unwrap() > 0.9);
        let acc = noise_resilience(&net, 1, NoiseLevel::SnrDb(-60.0), 5, 1, &data).unwrap();
        assert!((acc - 0.25).abs() <= 0.05, "{acc}");
    }

    #[test]
    fn deterministic_and_validated() {
        let (net, data) = trained();
        let a = noise_resilience(&net, 0, NoiseLevel::SnrDb(5.0), 2, 9, &data).unwrap();
        assert_eq!(a, noise_resilience(&net, 0, NoiseLevel::SnrDb(5.0), 2, 9, &data).unwrap());
        assert!(noise_resilience(&net, 2, NoiseLevel::None, 1, 0, &data).is_err());
        assert!(noise_resilience(&net, 0, NoiseLevel::SnrDb(f64::NAN), 1, 0, &data).is_err());
        assert!(noise_resilience(&net, 0, NoiseLevel::SnrDb(5.0), 0, 0, &data).is_err());
    }

    #[test]
    fn sweep_csv_has_one_row_per_point() {
        let (net, data) = trained();
        let rows = noise_sweep(&net, &[0, 1], &[10.0, 20.0], 1, 0, &data).unwrap();
        assert_eq!(rows.len(), 6);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("noise.csv");
        write_noise_csv(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.starts_with("layer,layer_name,snr_db,accuracy"));
    }
}
