//! Artifact persistence: atomic writes, versioned run reports, CSV tables.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attrib::{ConductanceReport, NoiseRow};
use crate::axexec::AxDNNConfig;
use crate::error::{Error, Result};
use crate::model::TrainLog;
use crate::nas::{NasResult, Objectives, RandomSearchResult};
use crate::podmodel::EnergyReport;
use crate::xaigen::XaiGenResult;

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub model_path: String,
    pub train_size: usize,
    pub test_size: usize,
    pub test_accuracy: f64,
    pub log: TrainLog,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub samples: usize,
    pub float_accuracy: f64,
    pub int8_accuracy: f64,
    pub approx_accuracy: Option<f64>,
    pub approx_config: Option<AxDNNConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LutSummary {
    pub name: String,
    pub path: Option<String>,
    pub declared_mae_pct: f64,
    pub computed_mae_pct: f64,
    pub power_xmac_watts: f64,
    pub exact: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NasSummary {
    pub nas: NasResult,
    pub random: RandomSearchResult,
    /// The random-search candidate compared against.
    pub random_best: Objectives,
}

/// Typed result of one command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
pub enum Payload {
    Train(TrainSummary),
    Eval(EvalSummary),
    Conductance(ConductanceReport),
    Noise(Vec<NoiseRow>),
    Xaigen(XaiGenResult),
    Nas(Box<NasSummary>),
    Energy(EnergyReport),
    Lut(Vec<LutSummary>),
    Files(Vec<String>),
}

/// A self-describing record of one command run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: String,
    /// Full effective configuration, enough to replay the run.
    pub config: serde_json::Value,
    pub seed: u64,
    pub duration_s: f64,
    pub artifact_version: String,
    pub payload: Payload,
}

impl RunReport {
    pub fn new(command: &str, config: serde_json::Value, seed: u64, duration_s: f64, payload: Payload) -> Self {
        RunReport {
            schema_version: REPORT_VERSION,
            command: command.to_string(),
            config,
            seed,
            duration_s,
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            payload,
        }
    }

    /// Canonical payload bytes, the part that must be reproducible.
    pub fn payload_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec_pretty(&self.payload)?)
    }
}

pub fn save_report(report: &RunReport, path: &Path) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(report)?.as_bytes())
}

pub fn load_report(path: &Path) -> Result<RunReport> {
    report_from_str(&fs::read_to_string(path)?)
}

pub fn report_from_str(text: &str) -> Result<RunReport> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let found = value.get("schema_version").and_then(|v| v.as_u64());
    match found {
        Some(v) if v == u64::from(REPORT_VERSION) => Ok(serde_json::from_value(value)?),
        Some(v) => Err(Error::Version {
            found: u32::try_from(v).unwrap_or(u32::MAX),
            expected: REPORT_VERSION,
        }),
        None => Err(Error::config("schema_version", "missing")),
    }
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Plot-ready CSV tables for a report, as `(file name, contents)`.
pub fn render_csv(report: &RunReport) -> Result<Vec<(String, Vec<u8>)>> {
    let mut out = Vec::new();
    match &report.payload {
        Payload::Xaigen(x) => {
            out.push((
                "tradeoff.csv".to_string(),
                csv_bytes(
                    &["architecture", "variant", "accuracy", "energy_joules"],
                    x.tradeoff
                        .iter()
                        .map(|p| vec![p.architecture.clone(), p.variant.clone(), p.accuracy.to_string(), p.energy_j.to_string()]),
                )?,
            ));
            out.push((
                "trace.csv".to_string(),
                csv_bytes(
                    &["step", "unit", "z_normalized", "t_c", "multiplier", "accuracy", "energy_joules", "committed"],
                    x.trace.iter().map(|t| {
                        vec![
                            t.step.to_string(),
                            t.unit_name.clone(),
                            t.z_normalized.to_string(),
                            t.t_c.to_string(),
                            t.multiplier.clone(),
                            t.quality.to_string(),
                            t.energy_j.to_string(),
                            t.committed.to_string(),
                        ]
                    }),
                )?,
            ));
        }
        Payload::Conductance(c) => {
            out.push((
                "layer_importance.csv".to_string(),
                csv_bytes(
                    &["layer", "name", "z", "z_normalized"],
                    c.layer_z
                        .iter()
                        .zip(&c.layer_z_normalized)
                        .enumerate()
                        .map(|(i, (z, n))| vec![i.to_string(), c.layer_names[i].clone(), z.to_string(), n.to_string()]),
                )?,
            ));
            let mut header = vec!["layer".to_string()];
            header.extend(c.target_classes.iter().map(|t| format!("class_{t}")));
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            out.push((
                "experiment_importance.csv".to_string(),
                csv_bytes(
                    &header,
                    (0..c.layer_names.len()).map(|l| {
                        let mut row = vec![c.layer_names[l].clone()];
                        row.extend(c.experiment_z.iter().map(|z| z[l].to_string()));
                        row
                    }),
                )?,
            ));
        }
        Payload::Noise(rows) => {
            out.push((
                "noise_resilience.csv".to_string(),
                csv_bytes(
                    &["layer", "layer_name", "snr_db", "accuracy"],
                    rows.iter().map(|r| {
                        vec![
                            r.layer.to_string(),
                            r.layer_name.clone(),
                            r.snr_db.map(|s| s.to_string()).unwrap_or_default(),
                            r.accuracy.to_string(),
                        ]
                    }),
                )?,
            ));
        }
        Payload::Nas(n) => {
            out.push((
                "generations.csv".to_string(),
                csv_bytes(
                    &["g", "rank", "crowding", "accuracy", "energy_joules", "genome"],
                    n.nas.generations.iter().flat_map(|g| {
                        g.members.iter().map(move |m| {
                            vec![
                                g.g.to_string(),
                                m.rank.to_string(),
                                m.crowding.to_string(),
                                m.objectives.quality.to_string(),
                                m.objectives.energy_j.to_string(),
                                m.genome.to_string(),
                            ]
                        })
                    }),
                )?,
            ));
            out.push((
                "front.csv".to_string(),
                csv_bytes(
                    &["accuracy", "energy_joules", "genome"],
                    n.nas
                        .final_front
                        .iter()
                        .map(|p| vec![p.objectives.quality.to_string(), p.objectives.energy_j.to_string(), p.genome.to_string()]),
                )?,
            ));
            out.push((
                "random_search.csv".to_string(),
                csv_bytes(
                    &["accuracy", "energy_joules", "genome"],
                    n.random
                        .candidates
                        .iter()
                        .map(|(g, o)| vec![o.quality.to_string(), o.energy_j.to_string(), g.to_string()]),
                )?,
            ));
        }
        Payload::Energy(e) => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for l in &e.layers {
                w.serialize(l)?;
            }
            out.push(("energy.csv".to_string(), w.into_inner().map_err(|e| Error::Io(e.into_error()))?));
        }
        Payload::Lut(luts) => {
            out.push((
                "luts.csv".to_string(),
                csv_bytes(
                    &["name", "declared_mae_pct", "computed_mae_pct", "power_xmac_watts"],
                    luts.iter().map(|l| {
                        vec![
                            l.name.clone(),
                            l.declared_mae_pct.to_string(),
                            l.computed_mae_pct.to_string(),
                            l.power_xmac_watts.to_string(),
                        ]
                    }),
                )?,
            ));
        }
        Payload::Train(_) | Payload::Eval(_) | Payload::Files(_) => {}
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::xaigen::TradeoffPoint;

    fn sample(payload: Payload) -> RunReport {
        RunReport::new("energy", serde_json::json!({"pods": 8}), 7, 0.25, payload)
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        let r = sample(Payload::Noise(vec![NoiseRow {
            layer: 1,
            layer_name: "conv2".into(),
            snr_db: Some(12.5),
            accuracy: 0.1 + 0.2,
        }]));
        save_report(&r, &path).unwrap();
        assert_eq!(load_report(&path).unwrap(), r);
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut v = serde_json::to_value(sample(Payload::Files(vec![]))).unwrap();
        v["schema_version"] = serde_json::json!(99);
        let err = report_from_str(&v.to_string()).unwrap_err();
        assert!(matches!(err, Error::Version { found: 99, expected: 1 }));
        assert!(report_from_str("{not json").is_err());
    }

    #[test]
    fn large_trace_payload_round_trips() {
        let tradeoff: Vec<TradeoffPoint> = (0..1000)
            .map(|i| TradeoffPoint {
                architecture: format!("A{i}"),
                variant: "A+pa".into(),
                accuracy: 1.0 / (i as f64 + 3.0),
                energy_j: 1e-9 * (i as f64).sqrt(),
            })
            .collect();
        let x = XaiGenResult {
            config: AxDNNConfig::uniform(2, "M1"),
            quality: 0.9,
            energy_j: 1e-7,
            float_accuracy: 0.95,
            baseline_quality: 0.94,
            exact_energy_j: 2e-7,
            q_c: 0.92,
            e_c: 2e-7,
            order_descending: vec![1, 0],
            order_ascending: vec![0, 1],
            t_c_history: vec![0.9, 0.75],
            trace: vec![],
            tradeoff,
        };
        let r = sample(Payload::Xaigen(x));
        let back = report_from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        let files = render_csv(&r).unwrap();
        assert_eq!(files[0].0, "tradeoff.csv");
        assert_eq!(String::from_utf8(files[0].1.clone()).unwrap().lines().count(), 1001);
    }

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested").join("x.bin");
        write_atomic(&path, b"abc").unwrap();
        write_atomic(&path, b"defg").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"defg");
        assert_eq!(fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }
}
