//! Naive re-implementations used as oracles by several test targets.

#![allow(dead_code)]

use axforge::nas::{dominates, Objectives};
use axforge::podmodel::{AcceleratorParams, LayerGeometry};
use rand::Rng;

/// Memory accesses written directly from the three-case rule, in f64.
pub fn naive_memory_accesses(rows: usize, cols: usize, f_l: usize, m: usize) -> f64 {
    let rc = (rows * cols) as f64;
    let m = m as f64;
    let f = f_l as f64;
    if rc < m / 2.0 {
        rc
    } else if rc < m {
        (m / 2.0) * (f - (rc / 2.0 - 1.0)).max(1.0)
    } else {
        m * (f - (rc - 1.0)).max(1.0)
    }
}

/// Total energy written directly from the memory-plus-compute sum.
pub fn naive_energy(layers: &[(LayerGeometry, f64)], p: &AcceleratorParams) -> f64 {
    let m = p.pod_rows * p.pod_cols;
    let mut n_m = 0.0;
    let mut compute = 0.0;
    for (g, p_xmac) in layers {
        n_m += naive_memory_accesses(g.rows, g.cols, g.f_l, m);
        let w_p = ((2.0 * g.n_w as f64) / (m as f64 * p.pods as f64)).ceil().max(1.0);
        let p_pod = (m as f64 / 2.0) * p.p_mac_watts + (m as f64 / 2.0) * p_xmac;
        compute += w_p * p.clock_period_s * p_pod;
    }
    let banks = (n_m / p.rows_per_bank as f64).ceil();
    banks * (p.bytes_per_access as f64 * p.energy_per_byte_j) + compute
}

/// Pod shapes whose MAC count is a multiple of 4.
pub const POD_SHAPES: [(usize, usize); 6] = [(2, 2), (4, 8), (16, 16), (16, 32), (64, 64), (256, 256)];

pub fn random_params(rng: &mut impl Rng) -> AcceleratorParams {
    let (pod_rows, pod_cols) = POD_SHAPES[rng.random_range(0..POD_SHAPES.len())];
    AcceleratorParams {
        pods: rng.random_range(1..=16),
        pod_rows,
        pod_cols,
        clock_period_s: rng.random_range(0.2e-9..5e-9),
        p_mac_watts: rng.random_range(1e-6..1e-3),
        bytes_per_access: rng.random_range(1..=512),
        energy_per_byte_j: rng.random_range(0.5e-12..10e-12),
        rows_per_bank: rng.random_range(1..=512),
        compute_scales_with_pods: false,
    }
}

/// Geometry with `r·c` spread across all three cases for MAC count `m`.
pub fn random_geometry(rng: &mut impl Rng, m: usize) -> LayerGeometry {
    let target = rng.random_range(1..=2 * m + 2);
    let cols = rng.random_range(1..=target.min(512));
    let rows = target.div_ceil(cols);
    LayerGeometry {
        n_w: rows * cols,
        f_l: rng.random_range(1..=4 * m),
        rows,
        cols,
    }
}

/// All-pairs non-dominated filter.
pub fn brute_force_front(points: &[Objectives]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| !points.iter().any(|q| dominates(q, &points[i])))
        .collect()
}
