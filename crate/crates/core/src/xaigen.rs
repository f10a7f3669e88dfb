//! Conductance-guided generation of an approximate network: units are
//! visited from most to least important, each gets a multiplier chosen by a
//! shrinking importance threshold plus its share of skipped neurons, and the
//! walk stops at the first candidate that violates the constraints.

use serde::{Deserialize, Serialize};

use crate::attrib::{conductance_report, ConductanceOptions, ConductanceReport};
use crate::axexec::{apply_skip_mask, calibrate_quant, quantize_network, ApproxModel, AxDNNConfig, LayerApprox, QuantizedNetwork};
use crate::axmul::MultiplierLibrary;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Network;
use crate::podmodel::{energy_total, AcceleratorParams};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMode {
    /// Stop when either constraint is violated.
    #[default]
    StrictOr,
    /// Stop only when both are violated.
    StrictAnd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Initial importance threshold, in `(0, 1]`.
    pub t_c: f64,
    pub delta: f64,
    /// Lower bound for the threshold; defaults to `delta`.
    pub t_c_floor: Option<f64>,
    /// Skip fraction per parameterized layer. Empty means `default_skip` everywhere.
    pub skip_fractions: Vec<f64>,
    pub default_skip: f64,
    /// Never skip logits: masking them would remove classes.
    pub protect_output_layer: bool,
    /// Minimum accuracy; defaults to the quantized baseline minus `quality_margin`.
    pub q_c: Option<f64>,
    pub quality_margin: f64,
    /// Maximum energy in joules; defaults to the all-exact energy.
    pub e_c: Option<f64>,
    pub stop_mode: StopMode,
    /// Recalibrate and requantize the masked float model at every step.
    pub requantize_each_step: bool,
    pub use_weight_map: bool,
    /// Also evaluate skipping alone (exact multipliers) at every step.
    pub record_variants: bool,
    pub conductance: ConductanceOptions,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            t_c: 0.9,
            delta: 0.15,
            t_c_floor: None,
            skip_fractions: Vec::new(),
            default_skip: 0.0,
            protect_output_layer: true,
            q_c: None,
            quality_margin: 0.02,
            e_c: None,
            stop_mode: StopMode::StrictOr,
            requantize_each_step: false,
            use_weight_map: false,
            record_variants: true,
            conductance: ConductanceOptions::default(),
        }
    }
}

impl SearchConfig {
    pub fn floor(&self) -> f64 {
        self.t_c_floor.unwrap_or(self.delta)
    }

    pub fn validate(&self, param_layers: usize) -> Result<()> {
        if !(self.t_c > 0.0 && self.t_c <= 1.0) {
            return Err(Error::config("t_c", format!("{} outside (0, 1]", self.t_c)));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::config("delta", "must be finite and > 0"));
        }
        if !(self.floor() > 0.0) {
            return Err(Error::config("t_c_floor", "must be > 0"));
        }
        if !self.skip_fractions.is_empty() && self.skip_fractions.len() != param_layers {
            return Err(Error::config(
                "skip_fractions",
                format!("{} entries for {param_layers} parameterized layers", self.skip_fractions.len()),
            ));
        }
        for &f in self.skip_fractions.iter().chain([&self.default_skip]) {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::config("skip_fractions", format!("{f} outside [0, 1)")));
            }
        }
        if let Some(q) = self.q_c {
            if !(q > 0.0 && q.is_finite()) {
                return Err(Error::config("q_c", format!("{q} must be finite and > 0")));
            }
        }
        if let Some(e) = self.e_c {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::config("e_c", format!("{e} must be finite and > 0")));
            }
        }
        Ok(())
    }

    /// Skip fraction applied to each parameterized layer when its unit is visited.
    pub fn layer_skips(&self, param_layers: usize) -> Vec<f64> {
        let mut s = if self.skip_fractions.is_empty() {
            vec![self.default_skip; param_layers]
        } else {
            self.skip_fractions.clone()
        };
        if self.protect_output_layer {
            if let Some(last) = s.last_mut() {
                *last = 0.0;
            }
        }
        s
    }
}

/// Ladder index for a unit with normalized importance `z` under threshold `t_c`.
pub fn select_multiplier(z: f64, t_c: f64, ladder_len: usize) -> Result<usize> {
    if ladder_len == 0 {
        return Err(Error::config("multipliers", "ladder is empty"));
    }
    if z >= t_c {
        return Ok(0);
    }
    let k = (ladder_len - 1) as f64;
    // guard against 2.0000000001-style ceilings
    let idx = ((t_c - z) / t_c * k - 1e-9).ceil().max(0.0) as usize;
    Ok(idx.min(ladder_len - 1))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub quality: f64,
    pub energy_j: f64,
    pub config: AxDNNConfig,
}

/// Accuracy on `eval` and modeled energy of one candidate.
pub fn evaluate_candidate(
    net: &Network,
    qnet: &QuantizedNetwork,
    config: &AxDNNConfig,
    library: &MultiplierLibrary,
    params: &AcceleratorParams,
    eval: &Dataset,
) -> Result<EvalResult> {
    let quality = ApproxModel::new(qnet, config, library)?.accuracy(eval)?;
    let energy_j = energy_total(net, config, library, params)?.e_total_j;
    Ok(EvalResult {
        quality,
        energy_j,
        config: config.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub unit: usize,
    pub unit_name: String,
    pub z_normalized: f64,
    pub t_c: f64,
    pub multiplier: String,
    pub multiplier_index: usize,
    /// Skip fractions applied to the unit's layers.
    pub skip_fractions: Vec<f64>,
    pub quality: f64,
    pub energy_j: f64,
    pub committed: bool,
}

/// One point of the accuracy/energy tradeoff: `A` (all exact, nothing
/// skipped), `A+p` (skipping only) or `A+pa` (skipping and approximation).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub architecture: String,
    pub variant: String,
    pub accuracy: f64,
    pub energy_j: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XaiGenResult {
    pub config: AxDNNConfig,
    pub quality: f64,
    pub energy_j: f64,
    pub float_accuracy: f64,
    pub baseline_quality: f64,
    pub exact_energy_j: f64,
    pub q_c: f64,
    pub e_c: f64,
    /// Units, most important first (traversal order).
    pub order_descending: Vec<usize>,
    /// Units, least important first.
    pub order_ascending: Vec<usize>,
    pub t_c_history: Vec<f64>,
    pub trace: Vec<TraceRow>,
    pub tradeoff: Vec<TradeoffPoint>,
}

pub struct XaiGenData<'a> {
    /// Images for conductance.
    pub attribution: &'a Dataset,
    pub calibration: &'a Dataset,
    pub evaluation: &'a Dataset,
}

pub fn run_xaigen(net: &Network, cfg: &SearchConfig, library: &MultiplierLibrary, params: &AcceleratorParams, data: &XaiGenData) -> Result<(XaiGenResult, ConductanceReport)> {
    let report = conductance_report(net, data.attribution, &cfg.conductance)?;
    let result = run_xaigen_with_report(net, &report, cfg, library, params, data)?;
    Ok((result, report))
}

fn quantized_for(net: &Network, calib: &Dataset, skips: &[Vec<usize>]) -> Result<QuantizedNetwork> {
    let masked = net.with_output_masks(skips);
    let mut q = quantize_network(&masked, &calibrate_quant(&masked, calib)?)?;
    for (m, s) in q.masks.iter_mut().zip(skips) {
        s.iter().for_each(|&i| m[i] = true);
    }
    Ok(q)
}

/// The search loop given a precomputed conductance report.
pub fn run_xaigen_with_report(
    net: &Network,
    report: &ConductanceReport,
    cfg: &SearchConfig,
    library: &MultiplierLibrary,
    params: &AcceleratorParams,
    data: &XaiGenData,
) -> Result<XaiGenResult> {
    let infos = net.params();
    let n = infos.len();
    cfg.validate(n)?;
    if report.neuron_abs.len() != n {
        return Err(Error::config("report", format!("conductance report covers {} layers, model has {n}", report.neuron_abs.len())));
    }
    let exact_name = library.exact().lut.name().to_string();
    let skips_plan = cfg.layer_skips(n);

    let qbase = quantize_network(net, &calibrate_quant(net, data.calibration)?)?;
    let mut committed = AxDNNConfig::uniform(n, &exact_name);
    committed.use_weight_map = cfg.use_weight_map;
    let baseline = evaluate_candidate(net, &qbase, &committed, library, params, data.evaluation)?;
    let float_accuracy = crate::model::accuracy(net, data.evaluation)?;
    let q_c = cfg.q_c.unwrap_or(baseline.quality - cfg.quality_margin);
    let e_c = cfg.e_c.unwrap_or(baseline.energy_j);

    let mut tradeoff = vec![TradeoffPoint {
        architecture: "A0".into(),
        variant: "A".into(),
        accuracy: baseline.quality,
        energy_j: baseline.energy_j,
    }];
    let mut trace = Vec::new();
    let mut t_c = cfg.t_c;
    let mut t_c_history = vec![t_c];
    let floor = cfg.floor();

    for (step, &unit) in report.unit_ranking.descending.iter().enumerate() {
        let members = &report.unit_layers[unit];
        let z = report.unit_z_normalized[unit];
        let idx = select_multiplier(z, t_c, library.len())?;
        let name = library.at(idx).lut.name().to_string();

        let mut candidate = committed.clone();
        let mut fractions = committed.skip_fractions();
        for &l in members {
            fractions[l] = skips_plan[l];
            candidate.layers[l] = LayerApprox {
                multiplier: name.clone(),
                skip_fraction: skips_plan[l],
                skip_indices: Vec::new(),
            };
        }
        let (qnet, indices) = if cfg.requantize_each_step {
            let indices = report.skip_indices(&fractions)?;
            (quantized_for(net, data.calibration, &indices)?, indices)
        } else {
            apply_skip_mask(&qbase, &report.neuron_abs, &fractions)?
        };
        for (layer, idx) in candidate.layers.iter_mut().zip(&indices) {
            layer.skip_indices = idx.clone();
        }
        let result = evaluate_candidate(net, &qnet, &candidate, library, params, data.evaluation)?;

        let arch = format!("A{}", step + 1);
        if cfg.record_variants {
            let mut skip_only = candidate.clone();
            for l in &mut skip_only.layers {
                l.multiplier = exact_name.clone();
            }
            let p = evaluate_candidate(net, &qnet, &skip_only, library, params, data.evaluation)?;
            tradeoff.push(TradeoffPoint {
                architecture: arch.clone(),
                variant: "A+p".into(),
                accuracy: p.quality,
                energy_j: p.energy_j,
            });
        }
        tradeoff.push(TradeoffPoint {
            architecture: arch,
            variant: "A+pa".into(),
            accuracy: result.quality,
            energy_j: result.energy_j,
        });

        let (q_bad, e_bad) = (result.quality < q_c, result.energy_j > e_c);
        let stop = match cfg.stop_mode {
            StopMode::StrictOr => q_bad || e_bad,
            StopMode::StrictAnd => q_bad && e_bad,
        };
        trace.push(TraceRow {
            step,
            unit,
            unit_name: report.unit_names[unit].clone(),
            z_normalized: z,
            t_c,
            multiplier: name,
            multiplier_index: idx,
            skip_fractions: members.iter().map(|&l| skips_plan[l]).collect(),
            quality: result.quality,
            energy_j: result.energy_j,
            committed: !stop,
        });
        if stop {
            break;
        }
        committed = candidate;
        t_c = (t_c - cfg.delta).max(floor);
        t_c_history.push(t_c);
    }

    let final_q = if cfg.requantize_each_step {
        quantized_for(net, data.calibration, &committed.skip_indices())?
    } else {
        qbase.clone()
    };
    let last = evaluate_candidate(net, &final_q, &committed, library, params, data.evaluation)?;
    Ok(XaiGenResult {
        config: committed,
        quality: last.quality,
        energy_j: last.energy_j,
        float_accuracy,
        baseline_quality: baseline.quality,
        exact_energy_j: baseline.energy_j,
        q_c,
        e_c,
        order_descending: report.unit_ranking.descending.clone(),
        order_ascending: report.unit_ranking.ascending.clone(),
        t_c_history,
        trace,
        tradeoff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_examples() {
        assert_eq!(select_multiplier(1.0, 0.3, 7).unwrap(), 0);
        assert_eq!(select_multiplier(0.0, 0.5, 7).unwrap(), 6);
        assert_eq!(select_multiplier(0.3, 0.5, 7).unwrap(), 3);
        assert_eq!(select_multiplier(0.5, 0.5, 7).unwrap(), 0);
        assert_eq!(select_multiplier(0.2, 0.5, 1).unwrap(), 0);
        assert!(select_multiplier(0.2, 0.5, 0).is_err());
    }

    #[test]
    fn selection_is_monotone_in_importance() {
        for t in [0.1, 0.45, 0.9, 1.0] {
            let mut prev = usize::MAX;
            for i in 0..=100 {
                let idx = select_multiplier(i as f64 / 100.0, t, 7).unwrap();
                assert!(idx <= prev);
                prev = idx;
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(SearchConfig::default().validate(5).is_ok());
        let bad = |f: fn(&mut SearchConfig)| {
            let mut c = SearchConfig::default();
            f(&mut c);
            c.validate(5).is_err()
        };
        assert!(bad(|c| c.t_c = 0.0));
        assert!(bad(|c| c.t_c = 1.5));
        assert!(bad(|c| c.delta = 0.0));
        assert!(bad(|c| c.skip_fractions = vec![0.1; 3]));
        assert!(bad(|c| c.skip_fractions = vec![0.0, 0.0, 0.0, 0.0, 1.0]));
        assert!(bad(|c| c.q_c = Some(f64::NAN)));
    }

    #[test]
    fn output_layer_is_protected() {
        let cfg = SearchConfig {
            skip_fractions: vec![0.05, 0.0, 0.10, 0.15, 0.70],
            ..Default::default()
        };
        assert_eq!(cfg.layer_skips(5), vec![0.05, 0.0, 0.10, 0.15, 0.0]);
        let open = SearchConfig {
            protect_output_layer: false,
            ..cfg
        };
        assert_eq!(open.layer_skips(5)[4], 0.70);
    }
}
