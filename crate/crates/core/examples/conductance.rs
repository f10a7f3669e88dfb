//! Layer importance of a trained network from neuron conductance, averaged over
//! five target classes, and the channels each layer would skip first.
//!
//! ```text
//! cargo run --release --example conductance -- model.json [samples_per_class]
//! ```

use axforge::attrib::{conductance_report, Aggregation, ConductanceOptions};
use axforge::data::Splits;
use axforge::model::load_model;

fn main() -> axforge::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let model = args.first().map_or("target/lenet5.json", String::as_str);
    let samples: usize = args.get(1).map_or(8, |s| s.parse().expect("samples_per_class"));

    let net = load_model(model.as_ref())?;
    let data = Splits::bundled_mnist()?;
    let opts = ConductanceOptions {
        samples_per_class: samples,
        ..Default::default()
    };
    let report = conductance_report(&net, &data.train, &opts)?;
    let (signed, signed_rank) = report.reaggregate(Aggregation::SignedSum);

    println!("target classes {:?}, {} samples each, {} steps", report.target_classes, report.samples_per_class, report.steps);
    println!("layer    z (abs)    z/max   z (signed)");
    for (l, name) in report.layer_names.iter().enumerate() {
        println!("{name:<8} {:<10.4} {:<7.3} {:.4}", report.layer_z[l], report.layer_z_normalized[l], signed[l]);
    }
    let names = |order: &[usize]| order.iter().map(|&l| report.layer_names[l].clone()).collect::<Vec<_>>();
    println!("most important first (abs):    {:?}", names(&report.layer_ranking.descending));
    println!("most important first (signed): {:?}", names(&signed_rank.descending));

    println!("\nfirst neurons to skip at 25%:");
    let picked = report.skip_indices(&vec![0.25; report.layer_names.len()])?;
    for (name, idx) in report.layer_names.iter().zip(picked) {
        println!("  {name:<8} {idx:?}");
    }
    Ok(())
}
