//! Per-layer cost of LeNet-5 on eight 256x256 pods, all exact and with a mixed
//! multiplier assignment plus neuron skipping.
//!
//! ```text
//! cargo run --release --example energy_model
//! ```

use axforge::axexec::AxDNNConfig;
use axforge::axmul::MultiplierLibrary;
use axforge::model::ModelManifest;
use axforge::podmodel::{energy_total, AcceleratorParams, EnergyReport};

fn print(title: &str, r: &EnergyReport) {
    println!("{title}");
    println!("  layer  mult  alive  rows   cols  f_l  w_p  N_m     E (nJ)");
    for l in &r.layers {
        println!(
            "  {:<6} {:<5} {:<6} {:<6} {:<5} {:<4} {:<4} {:<7} {:.3}",
            l.name,
            l.multiplier,
            l.alive_outputs,
            l.rows,
            l.cols,
            l.f_l,
            l.w_p,
            l.n_m,
            l.e_layer_j * 1e9
        );
    }
    println!(
        "  memory {:.2} nJ ({} bank accesses) + compute {:.2} nJ = {:.2} nJ\n",
        r.e_memory_j * 1e9,
        r.bank_accesses,
        r.e_compute_j * 1e9,
        r.e_total_j * 1e9
    );
}

fn main() -> axforge::Result<()> {
    let net = ModelManifest::lenet5(0).build(None)?;
    let params = AcceleratorParams::default();
    let library = MultiplierLibrary::fixtures(params.p_mac_watts)?;

    let exact = energy_total(&net, &AxDNNConfig::uniform(5, "M1"), &library, &params)?;
    print("all exact", &exact);

    let mut mixed = AxDNNConfig::uniform(5, "M1");
    for (layer, (mult, skip)) in mixed.layers.iter_mut().zip([("M3", 0.0), ("M2", 0.25), ("M5", 0.5), ("M4", 0.3), ("M1", 0.0)]) {
        layer.multiplier = mult.into();
        layer.skip_fraction = skip;
    }
    let approx = energy_total(&net, &mixed, &library, &params)?;
    print("mixed multipliers, conv2 25% / conv3 50% / fc1 30% skipped", &approx);
    println!("ratio {:.3}", approx.e_total_j / exact.e_total_j);

    let per_pod = AcceleratorParams {
        compute_scales_with_pods: true,
        ..params
    };
    let scaled = energy_total(&net, &AxDNNConfig::uniform(5, "M1"), &library, &per_pod)?;
    println!("all exact with compute charged on every pod: {:.2} nJ", scaled.e_total_j * 1e9);
    Ok(())
}
