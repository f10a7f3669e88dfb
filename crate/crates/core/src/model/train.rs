use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grad::{backprop, forward, softmax, ParamGrad};
use super::{argmax, Network};
use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
    /// Multiplies the learning rate after every epoch.
    pub lr_decay: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 5,
            lr: 0.01,
            batch_size: 32,
            momentum: 0.9,
            lr_decay: 1.0,
            seed: 0,
        }
    }
}

impl TrainOptions {
    /// Schedule that takes LeNet-5 past 97% on the bundled MNIST subset.
    pub fn lenet_mnist(seed: u64) -> Self {
        TrainOptions {
            epochs: 8,
            lr_decay: 0.85,
            seed,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean softmax cross-entropy per epoch.
    pub epoch_loss: Vec<f64>,
    pub epoch_train_accuracy: Vec<f64>,
}

/// Minibatch SGD with momentum on softmax cross-entropy. Returns a trained copy.
pub fn train_sgd(net: &Network, data: &Dataset, opts: &TrainOptions) -> Result<(Network, TrainLog)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = net.num_classes();
    if let Some(&bad) = data.labels.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::InvalidClass {
            index: bad as usize,
            classes,
        });
    }
    if opts.batch_size == 0 {
        return Err(Error::config("batch_size", "must be positive"));
    }
    let mut net = net.clone();
    let infos = net.params();
    let mut velocity: Vec<ParamGrad> = infos
        .iter()
        .map(|p| {
            let (w, b) = net.param_tensors(p.param_id);
            ParamGrad {
                dw: vec![0.0; w.len()],
                db: vec![0.0; b.len()],
            }
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = TrainLog::default();
    let mut lr = opts.lr;

    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (batch_idx, batch) in order.chunks(opts.batch_size).enumerate() {
            let mut grads: Vec<ParamGrad> = velocity
                .iter()
                .map(|v| ParamGrad {
                    dw: vec![0.0; v.dw.len()],
                    db: vec![0.0; v.db.len()],
                })
                .collect();
            let mut batch_loss = 0.0;
            for &i in batch {
                let x = data.image(i);
                let label = data.labels[i] as usize;
                let acts = forward(&net, &x)?;
                let mut p = softmax(&acts.logits);
                batch_loss -= p[label].max(1e-300).ln();
                if argmax(&acts.logits) == label {
                    correct += 1;
                }
                p[label] -= 1.0;
                backprop(&net, &acts, p, None, Some(&mut grads));
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    loss: batch_loss,
                });
            }
            loss_sum += batch_loss;
            let scale = 1.0 / batch.len() as f64;
            for ((w, b), (v, g)) in net.param_tensors_mut().into_iter().zip(velocity.iter_mut().zip(&grads)) {
                for ((wi, vi), gi) in w.iter_mut().zip(v.dw.iter_mut()).zip(&g.dw) {
                    *vi = opts.momentum * *vi + gi * scale;
                    *wi -= lr * *vi;
                }
                for ((bi, vi), gi) in b.iter_mut().zip(v.db.iter_mut()).zip(&g.db) {
                    *vi = opts.momentum * *vi + gi * scale;
                    *bi -= lr * *vi;
                }
            }
        }
        let mean_loss = loss_sum / data.len() as f64;
        let train_acc = correct as f64 / data.len() as f64;
        info!("epoch {epoch}: loss {mean_loss:.5} train accuracy {train_acc:.4} lr {lr:.5}");
        log.epoch_loss.push(mean_loss);
        log.epoch_train_accuracy.push(train_acc);
        lr *= opts.lr_decay;
    }
    Ok((net, log))
}

pub fn predict(net: &Network, x: &[f64]) -> Result<usize> {
    Ok(argmax(&forward(net, x)?.logits))
}

/// Fraction of argmax-correct predictions.
pub fn accuracy(net: &Network, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let hits = (0..data.len())
        .into_par_iter()
        .map(|i| predict(net, &data.image(i)).map(|p| usize::from(p == data.labels[i] as usize)))
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, Split};
    use crate::model::{Dense, Layer};

    fn linear(inputs: usize, classes: usize) -> Network {
        Network::new(
            "probe",
            [inputs, 1, 1],
            vec![Layer::Dense(Dense {
                inputs,
                outputs: classes,
                weights: vec![0.0; inputs * classes],
                bias: vec![0.0; classes],
            })],
        )
        .unwrap()
    }

    fn separable() -> Dataset {
        // two classes split by the sign of the first feature, with margin
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let side = if i % 2 == 0 { 1.0 } else { -1.0 };
            let jitter = (i as f32 * 0.37).sin() * 0.3;
            images.extend_from_slice(&[side * (0.5 + jitter.abs()), jitter, 0.5 - jitter]);
            labels.push(u8::from(side > 0.0));
        }
        Dataset::new([3, 1, 1], 2, images, labels, Split::Train).unwrap()
    }

    #[test]
    fn zero_learning_rate_leaves_weights_unchanged() {
        let net = crate::model::ModelManifest::lenet5(4).build(None).unwrap();
        let data = synth_dataset(10, 2, [1, 28, 28], 1).unwrap();
        let opts = TrainOptions {
            epochs: 1,
            lr: 0.0,
            ..Default::default()
        };
        let (trained, _) = train_sgd(&net, &data, &opts).unwrap();
        assert_eq!(trained, net);
    }

    #[test]
    fn separable_toy_set_reaches_full_train_accuracy() {
        let data = separable();
        let opts = TrainOptions {
            epochs: 50,
            lr: 0.1,
            batch_size: 4,
            ..Default::default()
        };
        let (trained, log) = train_sgd(&linear(3, 2), &data, &opts).unwrap();
        assert_eq!(accuracy(&trained, &data).unwrap(), 1.0);
        assert!(log.epoch_loss.last().unwrap() < &log.epoch_loss[0]);
    }

    #[test]
    fn training_is_deterministic() {
        let data = synth_dataset(3, 10, [1, 8, 8], 2).unwrap();
        let net = Network::new(
            "tiny",
            [1, 8, 8],
            vec![
                Layer::Flatten,
                Layer::Dense(Dense {
                    inputs: 64,
                    outputs: 3,
                    weights: vec![0.01; 192],
                    bias: vec![0.0; 3],
                }),
            ],
        )
        .unwrap();
        let opts = TrainOptions {
            epochs: 3,
            seed: 8,
            ..Default::default()
        };
        let (a, _) = train_sgd(&net, &data, &opts).unwrap();
        let (b, _) = train_sgd(&net, &data, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_predictor_accuracy() {
        // bias-only model always predicts class 1
        let mut net = linear(3, 2);
        if let Layer::Dense(d) = &mut net.layers[0] {
            d.bias = vec![0.0, 1.0];
        }
        let ones = Dataset::new([3, 1, 1], 2, vec![0.2; 15], vec![1; 5], Split::Test).unwrap();
        let zeros = Dataset::new([3, 1, 1], 2, vec![0.2; 15], vec![0; 5], Split::Test).unwrap();
        assert_eq!(accuracy(&net, &ones).unwrap(), 1.0);
        assert_eq!(accuracy(&net, &zeros).unwrap(), 0.0);
    }

    #[test]
    fn labels_outside_class_range_rejected() {
        let data = Dataset::new([3, 1, 1], 5, vec![0.0; 6], vec![0, 4], Split::Train).unwrap();
        assert!(matches!(
            train_sgd(&linear(3, 2), &data, &TrainOptions::default()),
            Err(Error::InvalidClass { index: 4, .. })
        ));
    }
}
