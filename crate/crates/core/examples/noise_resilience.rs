//! White-Gaussian-noise resilience of each LeNet-5 layer: accuracy with noise
//! injected at one layer's output for a few SNR levels.
//!
//! ```text
//! cargo run --release --example noise_resilience -- model.json [trials] [noise.csv]
//! ```

use axforge::attrib::{noise_sweep, write_noise_csv};
use axforge::data::Splits;
use axforge::model::load_model;

fn main() -> axforge::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let model = args.first().map_or("target/lenet5.json", String::as_str);
    let trials: usize = args.get(1).map_or(20, |s| s.parse().expect("trials"));

    let net = load_model(model.as_ref())?;
    let data = Splits::bundled_mnist()?;
    let layers: Vec<usize> = (0..net.param_count()).collect();
    let snrs = [5.0, 10.0, 15.0, 20.0];
    let rows = noise_sweep(&net, &layers, &snrs, trials, 0, &data.test)?;

    print!("{:<8} {:>8}", "layer", "clean");
    snrs.iter().for_each(|s| print!(" {:>7}", format!("{s} dB")));
    println!();
    for chunk in rows.chunks(snrs.len() + 1) {
        print!("{:<8}", chunk[0].layer_name);
        chunk.iter().for_each(|r| print!(" {:>7.4}", r.accuracy));
        println!();
    }
    if let Some(path) = args.get(2) {
        write_noise_csv(&rows, path.as_ref())?;
        println!("wrote {path}");
    }
    Ok(())
}
