//! Multi-objective search over per-layer multipliers and skip levels, seeded
//! with the conductance-guided configuration, compared against random search
//! with the same number of evaluations.
//!
//! ```text
//! cargo run --release --example nas_lenet -- model.json [generations] [subset]
//! ```

use std::time::Instant;

use axforge::axexec::{calibrate_quant, quantize_network};
use axforge::axmul::MultiplierLibrary;
use axforge::data::{Split, Splits};
use axforge::model::load_model;
use axforge::nas::{dominates, genome_from_config, random_search, run_nas, GenomeDomain, GenomeEvaluator, NasConfig};
use axforge::podmodel::AcceleratorParams;
use axforge::xaigen::{run_xaigen, SearchConfig, XaiGenData};

fn main() -> axforge::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let model = args.first().map_or("target/lenet5.json", String::as_str);
    let generations: usize = args.get(1).map_or(10, |s| s.parse().expect("generations"));
    let subset: usize = args.get(2).map_or(500, |s| s.parse().expect("subset"));

    let net = load_model(model.as_ref())?;
    let data = Splits::bundled_mnist()?;
    let params = AcceleratorParams::default();
    let library = MultiplierLibrary::fixtures(params.p_mac_watts)?;

    let search = SearchConfig {
        skip_fractions: vec![0.05, 0.0, 0.10, 0.15, 0.70],
        use_weight_map: true,
        ..Default::default()
    };
    let xdata = XaiGenData {
        attribution: &data.train,
        calibration: &data.calibration,
        evaluation: &data.test,
    };
    let (generated, report) = run_xaigen(&net, &search, &library, &params, &xdata)?;
    let seed = genome_from_config(&generated.config, &library)?;
    println!("seed genome {seed}: {:.4} @ {:.2} nJ", generated.quality, generated.energy_j * 1e9);

    let cfg = NasConfig {
        generations,
        eval_subset: Some(subset),
        ..Default::default()
    };
    let qnet = quantize_network(&net, &calibrate_quant(&net, &data.calibration)?)?;
    let eval_set = data.test.take(subset, Split::Test);
    let domain = GenomeDomain::new(net.param_count(), library.len(), cfg.protect_output_layer);

    let start = Instant::now();
    let nas_eval = GenomeEvaluator::new(&net, &qnet, &report.neuron_abs, &library, &params, &eval_set, cfg.use_weight_map);
    let nas = run_nas(&nas_eval, &seed, &cfg, &domain, None)?;
    println!("search: {} evaluations in {:.1}s", nas.evaluations, start.elapsed().as_secs_f64());
    for g in &nas.generations {
        println!("  g{:<2} hypervolume {:.4e}  evaluations {}", g.g, g.hypervolume, g.evaluations);
    }

    let rnd_eval = GenomeEvaluator::new(&net, &qnet, &report.neuron_abs, &library, &params, &eval_set, cfg.use_weight_map);
    let rnd = random_search(&rnd_eval, &domain, nas.evaluations, cfg.seed, generated.q_c)?;
    let best = rnd.candidates[rnd.best].1;
    println!("random best: {:.4} @ {:.2} nJ", best.quality, best.energy_j * 1e9);

    println!("final front:");
    let mut front = nas.final_front.clone();
    front.sort_by(|a, b| a.objectives.energy_j.total_cmp(&b.objectives.energy_j));
    for p in &front {
        let beaten = rnd.candidates.iter().any(|(_, o)| dominates(o, &p.objectives));
        println!(
            "  {:<28} {:.4} @ {:>7.2} nJ{}{}",
            p.genome.to_string(),
            p.objectives.quality,
            p.objectives.energy_j * 1e9,
            if dominates(&p.objectives, &best) { "  dominates random best" } else { "" },
            if beaten { "  (dominated by a random candidate)" } else { "" },
        );
    }
    Ok(())
}
