//! Analytical latency and energy model of a multi-pod systolic array in which
//! half of every pod's MACs are approximate.
//!
//! Per parameterized layer: weight groups `w_p = max(⌈2·n_w/(m·p)⌉, 1)`,
//! cycles `c_l = w_p`, memory accesses `N_m` by a three-case rule on the
//! weight-matrix size `r·c`, and pod power `(m/2)·P_mac + (m/2)·P_xmac`.
//! Total energy is `⌈Σ N_m / R⌉·E_M + Σ c_l·T·P_pod`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::axexec::AxDNNConfig;
use crate::axmul::{MultiplierLibrary, DEFAULT_P_MAC_WATTS};
use crate::error::{Error, Result};
use crate::model::{Layer, Network, ParamInfo, ParamKind, Shape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcceleratorParams {
    pub pods: usize,
    pub pod_rows: usize,
    pub pod_cols: usize,
    /// Clock period `T` in seconds.
    pub clock_period_s: f64,
    /// Power of one accurate MAC unit in watts.
    pub p_mac_watts: f64,
    pub bytes_per_access: usize,
    /// Joules per byte moved.
    pub energy_per_byte_j: f64,
    /// Rows per memory bank, `R`.
    pub rows_per_bank: usize,
    /// Multiply the compute term by the pod count.
    pub compute_scales_with_pods: bool,
}

impl Default for AcceleratorParams {
    fn default() -> Self {
        AcceleratorParams {
            pods: 8,
            pod_rows: 256,
            pod_cols: 256,
            clock_period_s: 1e-9,
            p_mac_watts: DEFAULT_P_MAC_WATTS,
            bytes_per_access: 256,
            energy_per_byte_j: 2.7e-12,
            rows_per_bank: 128,
            compute_scales_with_pods: false,
        }
    }
}

impl AcceleratorParams {
    /// MACs per pod.
    pub fn m(&self) -> usize {
        self.pod_rows * self.pod_cols
    }

    /// `E_M` per memory access event, in joules.
    pub fn e_m_access(&self) -> f64 {
        self.bytes_per_access as f64 * self.energy_per_byte_j
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.m();
        if self.pods == 0 {
            return Err(Error::config("pods", "must be at least 1"));
        }
        if m < 2 || m % 2 != 0 {
            return Err(Error::config("pod_rows", format!("MACs per pod must be even and >= 2, got {m}")));
        }
        for (field, v) in [
            ("clock_period_s", self.clock_period_s),
            ("p_mac_watts", self.p_mac_watts),
            ("energy_per_byte_j", self.energy_per_byte_j),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be finite and > 0, got {v}")));
            }
        }
        if self.rows_per_bank == 0 {
            return Err(Error::config("rows_per_bank", "must be at least 1"));
        }
        if self.bytes_per_access == 0 {
            return Err(Error::config("bytes_per_access", "must be at least 1"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: AcceleratorParams = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }
}

/// Weight-matrix geometry of one parameterized layer as mapped onto the array.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerGeometry {
    pub n_w: usize,
    /// Output positions that reuse each weight.
    pub f_l: usize,
    pub rows: usize,
    pub cols: usize,
}

/// Unmasked geometry: dense `(in, out)`, conv `(k·k·C_in, C_out)` with `f_l = H_out·W_out`.
pub fn layer_geometry(info: &ParamInfo) -> LayerGeometry {
    geometry(info, info.input_shape[0], info.neurons(), dense_inputs(info))
}

fn dense_inputs(info: &ParamInfo) -> usize {
    match info.kind {
        ParamKind::Dense { inputs, .. } => inputs,
        ParamKind::Conv { .. } => 0,
    }
}

fn geometry(info: &ParamInfo, alive_in: usize, alive_out: usize, alive_dense_in: usize) -> LayerGeometry {
    let (rows, f_l) = match info.kind {
        ParamKind::Conv { kernel, .. } => (kernel * kernel * alive_in, info.output_shape[1] * info.output_shape[2]),
        ParamKind::Dense { .. } => (alive_dense_in, 1),
    };
    LayerGeometry {
        n_w: rows * alive_out,
        f_l,
        rows,
        cols: alive_out,
    }
}

pub fn weight_groups(n_w: usize, params: &AcceleratorParams) -> usize {
    (2 * n_w).div_ceil(params.m() * params.pods).max(1)
}

/// Three-case memory-access count. Equality at `m/2` or `m` falls to the next case.
/// A half-integer reuse factor in the middle case is kept exact (floored only when `m` is not a multiple of 4).
pub fn memory_accesses(geom: &LayerGeometry, params: &AcceleratorParams) -> u64 {
    let m = params.m() as u64;
    let rc = (geom.rows * geom.cols) as u64;
    let f = geom.f_l as i128;
    if 2 * rc < m {
        rc
    } else if rc < m {
        // r·c/2 can be fractional: (m/2)·(f − (r·c/2 − 1)) = m·(2f − r·c + 2)/4
        let twice = 2 * f - rc as i128 + 2;
        if twice >= 2 {
            m * twice as u64 / 4
        } else {
            m / 2
        }
    } else {
        (m) * (f - rc as i128 + 1).max(1) as u64
    }
}

pub fn pod_power(params: &AcceleratorParams, p_xmac: f64) -> Result<f64> {
    if !(p_xmac >= 0.0 && p_xmac.is_finite()) {
        return Err(Error::MissingPower(format!("{p_xmac} W")));
    }
    let half = (params.m() / 2) as f64;
    Ok(half * params.p_mac_watts + half * p_xmac)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEnergy {
    pub name: String,
    pub multiplier: String,
    pub alive_outputs: usize,
    pub n_w: usize,
    pub f_l: usize,
    pub rows: usize,
    pub cols: usize,
    pub w_p: usize,
    pub cycles: usize,
    pub n_m: u64,
    pub p_pod_watts: f64,
    pub e_compute_j: f64,
    /// Share of the memory term, by `N_m`.
    pub e_memory_j: f64,
    pub e_layer_j: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub layers: Vec<LayerEnergy>,
    pub total_n_m: u64,
    /// `⌈Σ N_m / R⌉`.
    pub bank_accesses: u64,
    pub e_memory_j: f64,
    pub e_compute_j: f64,
    /// `E_a`.
    pub e_total_j: f64,
    pub total_cycles: usize,
}

/// Alive output neurons per parameterized layer: realized indices when given,
/// otherwise the floor of the skip fraction.
fn alive_counts(infos: &[ParamInfo], config: &AxDNNConfig) -> Vec<usize> {
    infos
        .iter()
        .zip(&config.layers)
        .map(|(info, l)| {
            let y = info.neurons();
            let skipped = if l.skip_indices.is_empty() {
                (l.skip_fraction * y as f64).floor() as usize
            } else {
                l.skip_indices.len()
            };
            y - skipped.min(y - 1)
        })
        .collect()
}

/// Walks the graph, turning alive output counts into per-layer geometry. A
/// residual join keeps a channel alive if either branch does.
fn masked_geometries(net: &Network, infos: &[ParamInfo], alive: &[usize]) -> Vec<LayerGeometry> {
    fn walk(layers: &[Layer], shape: Shape, mut ch: usize, infos: &[ParamInfo], alive: &[usize], pid: &mut usize, out: &mut Vec<LayerGeometry>) -> usize {
        let mut shape = shape;
        for layer in layers {
            let next = layer.output_shape(shape).expect("validated network");
            match layer {
                Layer::Conv2d(_) | Layer::Dense(_) => {
                    let info = &infos[*pid];
                    // dense inputs: alive channels times spatial size
                    let dense_in = ch * shape[1] * shape[2];
                    out.push(geometry(info, ch, alive[*pid], dense_in));
                    ch = alive[*pid];
                    *pid += 1;
                }
                Layer::Residual(b) => {
                    let body = walk(&b.body, shape, ch, infos, alive, pid, out);
                    ch = ch.max(body);
                }
                Layer::Flatten => {
                    ch *= shape[1] * shape[2];
                }
                Layer::Relu | Layer::MaxPool2d => {}
            }
            shape = next;
        }
        ch
    }
    let mut out = Vec::with_capacity(infos.len());
    walk(&net.layers, net.input_shape, net.input_shape[0], infos, alive, &mut 0, &mut out);
    out
}

/// Energy of `net` under a multiplier assignment and skip configuration.
pub fn energy_total(net: &Network, config: &AxDNNConfig, library: &MultiplierLibrary, params: &AcceleratorParams) -> Result<EnergyReport> {
    params.validate()?;
    let infos = net.params();
    config.validate(infos.len())?;
    let alive = alive_counts(&infos, config);
    let geoms = masked_geometries(net, &infos, &alive);
    let mut layers = Vec::with_capacity(infos.len());
    for ((info, geom), (l, &a)) in infos.iter().zip(&geoms).zip(config.layers.iter().zip(&alive)) {
        let mul = library.get(&l.multiplier)?;
        let p_xmac = if mul.lut.is_exact() { params.p_mac_watts } else { mul.lut.power_xmac() };
        let p_pod = pod_power(params, p_xmac)?;
        let w_p = weight_groups(geom.n_w, params);
        let pods = if params.compute_scales_with_pods { params.pods as f64 } else { 1.0 };
        let e_compute = w_p as f64 * params.clock_period_s * p_pod * pods;
        layers.push(LayerEnergy {
            name: info.name.clone(),
            multiplier: l.multiplier.clone(),
            alive_outputs: a,
            n_w: geom.n_w,
            f_l: geom.f_l,
            rows: geom.rows,
            cols: geom.cols,
            w_p,
            cycles: w_p,
            n_m: memory_accesses(geom, params),
            p_pod_watts: p_pod,
            e_compute_j: e_compute,
            e_memory_j: 0.0,
            e_layer_j: 0.0,
        });
    }
    Ok(finish(layers, params))
}

fn finish(mut layers: Vec<LayerEnergy>, params: &AcceleratorParams) -> EnergyReport {
    let total_n_m: u64 = layers.iter().map(|l| l.n_m).sum();
    let bank_accesses = total_n_m.div_ceil(params.rows_per_bank as u64);
    let e_memory = bank_accesses as f64 * params.e_m_access();
    let e_compute: f64 = layers.iter().map(|l| l.e_compute_j).sum();
    for l in &mut layers {
        l.e_memory_j = if total_n_m > 0 { e_memory * l.n_m as f64 / total_n_m as f64 } else { 0.0 };
        l.e_layer_j = l.e_compute_j + l.e_memory_j;
    }
    EnergyReport {
        total_cycles: layers.iter().map(|l| l.cycles).sum(),
        layers,
        total_n_m,
        bank_accesses,
        e_memory_j: e_memory,
        e_compute_j: e_compute,
        e_total_j: e_memory + e_compute,
    }
}

/// Energy from explicit per-layer `(geometry, P_xmac)` pairs, bypassing the network walk.
pub fn energy_from_geometry(layers: &[(LayerGeometry, f64)], params: &AcceleratorParams) -> Result<EnergyReport> {
    params.validate()?;
    let rows = layers
        .iter()
        .enumerate()
        .map(|(i, (g, p_xmac))| {
            let p_pod = pod_power(params, *p_xmac)?;
            let w_p = weight_groups(g.n_w, params);
            let pods = if params.compute_scales_with_pods { params.pods as f64 } else { 1.0 };
            Ok(LayerEnergy {
                name: format!("layer{}", i + 1),
                multiplier: String::new(),
                alive_outputs: g.cols,
                n_w: g.n_w,
                f_l: g.f_l,
                rows: g.rows,
                cols: g.cols,
                w_p,
                cycles: w_p,
                n_m: memory_accesses(g, params),
                p_pod_watts: p_pod,
                e_compute_j: w_p as f64 * params.clock_period_s * p_pod * pods,
                e_memory_j: 0.0,
                e_layer_j: 0.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(finish(rows, params))
}

pub fn write_energy_csv(report: &EnergyReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for l in &report.layers {
        w.serialize(l)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    crate::report::write_atomic(path, &bytes)
}
