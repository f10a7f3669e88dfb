//! Trains LeNet-5 on the bundled MNIST subset (80/20 split) and reports float
//! and 8-bit quantized test accuracy.
//!
//! ```text
//! cargo run --release --example train_lenet -- [out.json] [seed] [epochs]
//! ```

use std::time::Instant;

use axforge::axexec::{calibrate_quant, int8_accuracy, quantize_network};
use axforge::data::Splits;
use axforge::model::{accuracy, save_model, train_sgd, ModelManifest, TrainOptions};

fn main() -> axforge::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "target/lenet5.json".into());
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let mut opts = TrainOptions::lenet_mnist(seed);
    if let Some(e) = args.next() {
        opts.epochs = e.parse().expect("epochs");
    }

    let data = Splits::bundled_mnist()?;
    println!("train {} / test {}", data.train.len(), data.test.len());

    let start = Instant::now();
    let net = ModelManifest::lenet5(seed).build(None)?;
    let (net, _) = train_sgd(&net, &data.train, &opts)?;
    println!("trained in {:.1}s", start.elapsed().as_secs_f64());

    let float = accuracy(&net, &data.test)?;
    let q = quantize_network(&net, &calibrate_quant(&net, &data.calibration)?)?;
    let int8 = int8_accuracy(&q, &data.test)?;
    println!("float accuracy {float:.4}, int8 accuracy {int8:.4}");
    save_model(&net, out.as_ref())?;
    println!("saved {out}");
    Ok(())
}
