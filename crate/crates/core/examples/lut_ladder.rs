//! Synthesizes the seven-step multiplier ladder, prints its error and power
//! figures, and shows how many weight codes each design's weight map moves.
//!
//! ```text
//! cargo run --release --example lut_ladder -- [out_dir]
//! ```

use std::path::PathBuf;

use axforge::axmul::{fixture_ladder, weight_map, MultiplierLUT, DEFAULT_P_MAC_WATTS, LADDER_REFERENCE};

fn main() -> axforge::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from);
    let ladder = fixture_ladder(DEFAULT_P_MAC_WATTS)?;

    println!("name  stands for  MAE (%)    power (uW)  remapped weights  |P(100,100) - 10000|");
    for (rank, lut) in ladder.iter().enumerate() {
        let map = weight_map(lut);
        let moved = (0..=255u8).filter(|&w| map.apply(w) != w).count();
        let reference = if rank == 0 { "exact" } else { LADDER_REFERENCE[rank - 1] };
        println!(
            "{:<5} {:<11} {:<10.4} {:<11.1} {:<17} {}",
            lut.name(),
            reference,
            lut.mae_pct(),
            lut.power_xmac() * 1e6,
            moved,
            (i32::from(lut.product(100, 100)) - 10_000).abs()
        );
    }

    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        for lut in &ladder {
            let path = dir.join(format!("{}.lut", lut.name()));
            lut.save(&path)?;
            let (back, drift) = MultiplierLUT::load(&path)?;
            assert_eq!(back.products(), lut.products());
            if let Some(d) = drift {
                println!("warning: {} declared MAE drifted: {d:?}", lut.name());
            }
        }
        println!("saved {} LUTs with sidecars under {}", ladder.len(), dir.display());
    }
    Ok(())
}
