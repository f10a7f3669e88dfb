//! Conductance-guided generation of an approximate LeNet-5: ranks layers,
//! walks them with the seven-step multiplier ladder and a per-layer skip
//! schedule, and prints the trace and the accuracy/energy tradeoff.
//!
//! ```text
//! cargo run --release --example xaigen_lenet -- model.json [search.json]
//! ```
//!
//! Train a model first with the `train_lenet` example.

use axforge::axmul::MultiplierLibrary;
use axforge::data::Splits;
use axforge::model::load_model;
use axforge::podmodel::AcceleratorParams;
use axforge::xaigen::{run_xaigen, SearchConfig, XaiGenData};

fn main() -> axforge::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let model = args.first().map_or("target/lenet5.json", String::as_str);
    let cfg: SearchConfig = match args.get(1) {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => SearchConfig {
            skip_fractions: vec![0.05, 0.0, 0.10, 0.15, 0.70],
            ..Default::default()
        },
    };

    let net = load_model(model.as_ref())?;
    let data = Splits::bundled_mnist()?;
    let params = AcceleratorParams::default();
    let library = MultiplierLibrary::fixtures(params.p_mac_watts)?;
    let xdata = XaiGenData {
        attribution: &data.train,
        calibration: &data.calibration,
        evaluation: &data.test,
    };
    let (result, report) = run_xaigen(&net, &cfg, &library, &params, &xdata)?;

    println!("layer importance (abs-sum, normalized):");
    for (name, z) in report.layer_names.iter().zip(&report.layer_z_normalized) {
        println!("  {name:<8} {z:.3}");
    }
    println!("traversal: {:?}", result.order_descending.iter().map(|&u| &report.unit_names[u]).collect::<Vec<_>>());
    println!("\nstep unit     z     t_c   mult  skip   quality energy(nJ) committed");
    for r in &result.trace {
        println!(
            "{:>4} {:<8} {:.3} {:.3} {:<5} {:>5.2} {:>8.4} {:>9.2} {}",
            r.step,
            r.unit_name,
            r.z_normalized,
            r.t_c,
            r.multiplier,
            r.skip_fractions.iter().cloned().fold(0.0, f64::max),
            r.quality,
            r.energy_j * 1e9,
            r.committed
        );
    }
    println!("\ntradeoff:");
    for p in &result.tradeoff {
        println!("  {:<4} {:<5} {:.4} {:.2} nJ", p.architecture, p.variant, p.accuracy, p.energy_j * 1e9);
    }
    println!(
        "\nbaseline {:.4} @ {:.2} nJ -> final {:.4} @ {:.2} nJ ({:.2}x lower energy)",
        result.baseline_quality,
        result.exact_energy_j * 1e9,
        result.quality,
        result.energy_j * 1e9,
        result.exact_energy_j / result.energy_j
    );
    println!("multipliers {:?}", result.config.multipliers());
    Ok(())
}
