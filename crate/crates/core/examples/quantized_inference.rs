//! Float, int8 and LUT-based accuracy of a trained network, with every layer
//! on one ladder multiplier at a time, with and without weight mapping.
//!
//! ```text
//! cargo run --release --example quantized_inference -- model.json [test_images]
//! ```

use axforge::axexec::{approx_accuracy, calibrate_quant, int8_accuracy, quantize_network, AxDNNConfig};
use axforge::axmul::MultiplierLibrary;
use axforge::data::{Split, Splits};
use axforge::model::{accuracy, load_model};
use axforge::podmodel::AcceleratorParams;

fn main() -> axforge::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let model = args.first().map_or("target/lenet5.json", String::as_str);
    let limit: usize = args.get(1).map_or(2000, |s| s.parse().expect("test_images"));

    let net = load_model(model.as_ref())?;
    let data = Splits::bundled_mnist()?;
    let test = data.test.take(limit, Split::Test);
    let qp = calibrate_quant(&net, &data.calibration)?;
    let qnet = quantize_network(&net, &qp)?;
    println!("input scale {:.5}, weight scales {:?}", qp.input_scale, qp.weight_scales);
    println!("float {:.4}  int8 {:.4}  ({} test images)", accuracy(&net, &test)?, int8_accuracy(&qnet, &test)?, test.len());

    let library = MultiplierLibrary::fixtures(AcceleratorParams::default().p_mac_watts)?;
    println!("\nmult  MAE (%)   plain    weight-mapped");
    for lut in library.luts() {
        let mut cfg = AxDNNConfig::uniform(net.param_count(), lut.name());
        let plain = approx_accuracy(&qnet, &cfg, &library, &test)?;
        cfg.use_weight_map = true;
        let mapped = approx_accuracy(&qnet, &cfg, &library, &test)?;
        println!("{:<5} {:<9.4} {:<8.4} {:.4}", lut.name(), lut.mae_pct(), plain, mapped);
    }
    Ok(())
}
