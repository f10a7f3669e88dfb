//! Command layer behind the `axforge` binary. Every command takes a JSON
//! configuration (all fields optional), produces a [`RunReport`] plus its
//! artifacts in an output directory, and records the effective configuration
//! so the run can be replayed with [`replay`].

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::attrib::{conductance_report, noise_sweep, ConductanceOptions};
use crate::axexec::{approx_accuracy, calibrate_quant, int8_accuracy, quantize_network, AxDNNConfig};
use crate::axmul::{
    calibrate_to_mae, fixture_ladder, synth_column_truncated, synth_truncated, MultiplierLUT, MultiplierLibrary,
};
use crate::data::{bundled_mnist_dir, load_mnist_dir, Split, Splits};
use crate::error::{Error, Result};
use crate::model::{accuracy, load_model, save_model, train_sgd, ModelManifest, Network, TrainOptions};
use crate::nas::{genome_from_config, random_search, run_nas, GenomeDomain, GenomeEvaluator, NasConfig};
use crate::podmodel::{energy_total, AcceleratorParams};
use crate::report::{
    render_csv, save_report, write_atomic, EvalSummary, LutSummary, NasSummary, Payload, RunReport, TrainSummary,
};
use crate::xaigen::{run_xaigen, SearchConfig, XaiGenData};

/// File name of the report inside an output directory.
pub const REPORT_FILE: &str = "report.json";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LutAction {
    Synth,
    Inspect,
    Dump,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Command {
    Train,
    Eval,
    Conductance,
    Noise,
    Xaigen,
    Nas,
    Energy,
    Lut(LutAction),
    Report,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Conductance => "conductance",
            Command::Noise => "noise",
            Command::Xaigen => "xaigen",
            Command::Nas => "nas",
            Command::Energy => "energy",
            Command::Lut(LutAction::Synth) => "lut synth",
            Command::Lut(LutAction::Inspect) => "lut inspect",
            Command::Lut(LutAction::Dump) => "lut dump",
            Command::Report => "report",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "train" => Command::Train,
            "eval" => Command::Eval,
            "conductance" => Command::Conductance,
            "noise" => Command::Noise,
            "xaigen" => Command::Xaigen,
            "nas" => Command::Nas,
            "energy" => Command::Energy,
            "lut synth" => Command::Lut(LutAction::Synth),
            "lut inspect" => Command::Lut(LutAction::Inspect),
            "lut dump" => Command::Lut(LutAction::Dump),
            "report" => Command::Report,
            other => return Err(Error::InvalidArgument(format!("unknown command `{other}`"))),
        })
    }
}

/// One command run as requested on the command line.
#[derive(Clone, Debug)]
pub struct Invocation {
    pub command: Command,
    /// Parsed `--config`; `None` means all defaults.
    pub config: Option<Value>,
    /// Overrides every seed in the configuration.
    pub seed: Option<u64>,
    /// Overrides the configuration's model path.
    pub model: Option<PathBuf>,
    /// Extra positional inputs (LUT files, a report to render).
    pub inputs: Vec<PathBuf>,
    pub out: PathBuf,
}

impl Invocation {
    pub fn new(command: Command, out: impl Into<PathBuf>) -> Self {
        Invocation {
            command,
            config: None,
            seed: None,
            model: None,
            inputs: Vec::new(),
            out: out.into(),
        }
    }
}

/// Where images come from and how they are split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// MNIST directory; the bundled subset when absent.
    pub mnist_dir: Option<String>,
    pub train_fraction: f64,
    pub calibration: usize,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            mnist_dir: None,
            train_fraction: 0.8,
            calibration: 500,
            train_limit: None,
            test_limit: None,
        }
    }
}

impl DataConfig {
    pub fn load(&self) -> Result<Splits> {
        let dir = self.mnist_dir.as_ref().map_or_else(bundled_mnist_dir, PathBuf::from);
        let mut s = Splits::holdout(&load_mnist_dir(&dir)?, self.train_fraction, self.calibration)?;
        if let Some(n) = self.train_limit {
            s.train = s.train.take(n, Split::Train);
        }
        if let Some(n) = self.test_limit {
            s.test = s.test.take(n, Split::Test);
        }
        Ok(s)
    }
}

/// Multiplier ladder: LUT files in ladder order, or the built-in fixtures.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LibraryConfig {
    pub luts: Vec<String>,
}

impl LibraryConfig {
    pub fn build(&self, p_mac_watts: f64) -> Result<MultiplierLibrary> {
        if self.luts.is_empty() {
            return MultiplierLibrary::fixtures(p_mac_watts);
        }
        let luts = self.luts.iter().map(|p| MultiplierLUT::load(p.as_ref()).map(|(l, _)| l)).collect::<Result<_>>()?;
        MultiplierLibrary::new(luts)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Architecture {
    #[default]
    Lenet5,
    ResnetMini {
        width: usize,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCommand {
    /// Output manifest path; `<out>/model.json` when absent.
    pub model: Option<String>,
    pub data: DataConfig,
    pub arch: Architecture,
    pub train: TrainOptions,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalCommand {
    pub model: Option<String>,
    pub data: DataConfig,
    pub approx: Option<AxDNNConfig>,
    pub library: LibraryConfig,
    pub accelerator: AcceleratorParams,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConductanceCommand {
    pub model: Option<String>,
    pub data: DataConfig,
    pub conductance: ConductanceOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseCommand {
    pub model: Option<String>,
    pub data: DataConfig,
    /// Parameterized layers to perturb; all when empty.
    pub layers: Vec<usize>,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
}

impl Default for NoiseCommand {
    fn default() -> Self {
        NoiseCommand {
            model: None,
            data: DataConfig::default(),
            layers: Vec::new(),
            snr_db: vec![5.0, 10.0, 15.0, 20.0],
            trials: 20,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct XaigenCommand {
    pub model: Option<String>,
    pub data: DataConfig,
    pub search: SearchConfig,
    pub accelerator: AcceleratorParams,
    pub library: LibraryConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NasCommand {
    pub model: Option<String>,
    pub data: DataConfig,
    /// Generates the seed genome.
    pub search: SearchConfig,
    pub nas: NasConfig,
    pub accelerator: AcceleratorParams,
    pub library: LibraryConfig,
    /// Also run random search with the same evaluation budget.
    pub random_baseline: bool,
}

impl Default for NasCommand {
    fn default() -> Self {
        NasCommand {
            model: None,
            data: DataConfig::default(),
            search: SearchConfig {
                use_weight_map: true,
                ..Default::default()
            },
            nas: NasConfig::default(),
            accelerator: AcceleratorParams::default(),
            library: LibraryConfig::default(),
            random_baseline: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyCommand {
    pub model: Option<String>,
    pub accelerator: AcceleratorParams,
    pub library: LibraryConfig,
    /// All-exact when absent.
    pub approx: Option<AxDNNConfig>,
}

/// One multiplier design to synthesize.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum LutDesign {
    /// The seven-step fixture ladder.
    Ladder { p_mac_watts: f64 },
    Truncated { drop_bits: u32 },
    ColumnTruncated { columns: u32, extra: u32 },
    Mae { target_pct: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LutSynthCommand {
    pub designs: Vec<LutDesign>,
}

impl Default for LutSynthCommand {
    fn default() -> Self {
        LutSynthCommand {
            designs: vec![LutDesign::Ladder {
                p_mac_watts: AcceleratorParams::default().p_mac_watts,
            }],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputsCommand {
    pub inputs: Vec<String>,
}

fn parse<C: DeserializeOwned + Default>(v: &Option<Value>) -> Result<C> {
    match v {
        None => Ok(C::default()),
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::config("config", e.to_string())),
    }
}

fn model_path(field: &mut Option<String>, cli: &Option<PathBuf>) -> Result<String> {
    if let Some(p) = cli {
        *field = Some(p.to_string_lossy().into_owned());
    }
    field.clone().ok_or_else(|| Error::config("model", "no model given (use --model or the `model` field)"))
}

fn load_net(field: &mut Option<String>, cli: &Option<PathBuf>) -> Result<Network> {
    let path = model_path(field, cli)?;
    load_model(path.as_ref())
}

fn quantized(net: &Network, data: &Splits) -> Result<crate::axexec::QuantizedNetwork> {
    quantize_network(net, &calibrate_quant(net, &data.calibration)?)
}

fn lut_summary(lut: &MultiplierLUT, path: Option<String>) -> LutSummary {
    LutSummary {
        name: lut.name().to_string(),
        path,
        declared_mae_pct: lut.declared_mae_pct(),
        computed_mae_pct: lut.mae_pct(),
        power_xmac_watts: lut.power_xmac(),
        exact: lut.is_exact(),
    }
}

fn synth(design: &LutDesign) -> Result<Vec<MultiplierLUT>> {
    Ok(match design {
        LutDesign::Ladder { p_mac_watts } => fixture_ladder(*p_mac_watts)?,
        LutDesign::Truncated { drop_bits } => vec![synth_truncated(*drop_bits)?],
        LutDesign::ColumnTruncated { columns, extra } => vec![synth_column_truncated(*columns, *extra)?],
        LutDesign::Mae { target_pct } => vec![calibrate_to_mae(*target_pct)?],
    })
}

/// Runs a command, writes its artifacts and `report.json` under `inv.out`,
/// and returns the report.
pub fn execute(inv: &Invocation) -> Result<RunReport> {
    let start = Instant::now();
    fs::create_dir_all(&inv.out)?;
    let out = inv.out.as_path();
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();

    let (config, seed, payload): (Value, u64, Payload) = match &inv.command {
        Command::Train => {
            let mut c: TrainCommand = parse(&inv.config)?;
            if let Some(s) = inv.seed {
                c.train.seed = s;
            }
            if inv.model.is_some() || c.model.is_none() {
                let p = inv.model.clone().unwrap_or_else(|| out.join("model.json"));
                c.model = Some(p.to_string_lossy().into_owned());
            }
            let path = c.model.clone().expect("set above");
            let data = c.data.load()?;
            let manifest = match c.arch {
                Architecture::Lenet5 => ModelManifest::lenet5(c.train.seed),
                Architecture::ResnetMini { width } => {
                    ModelManifest::resnet_mini(data.train.shape, data.train.classes, width, c.train.seed)
                }
            };
            let (net, log) = train_sgd(&manifest.build(None)?, &data.train, &c.train)?;
            save_model(&net, path.as_ref())?;
            let summary = TrainSummary {
                model_path: path,
                train_size: data.train.len(),
                test_size: data.test.len(),
                test_accuracy: accuracy(&net, &data.test)?,
                log,
            };
            info!("test accuracy {:.4}", summary.test_accuracy);
            (serde_json::to_value(&c)?, c.train.seed, Payload::Train(summary))
        }
        Command::Eval => {
            let mut c: EvalCommand = parse(&inv.config)?;
            let net = load_net(&mut c.model, &inv.model)?;
            let data = c.data.load()?;
            let q = quantized(&net, &data)?;
            let approx_accuracy = match &c.approx {
                Some(cfg) => {
                    let lib = c.library.build(c.accelerator.p_mac_watts)?;
                    Some(approx_accuracy(&q, cfg, &lib, &data.test)?)
                }
                None => None,
            };
            let summary = EvalSummary {
                samples: data.test.len(),
                float_accuracy: accuracy(&net, &data.test)?,
                int8_accuracy: int8_accuracy(&q, &data.test)?,
                approx_accuracy,
                approx_config: c.approx.clone(),
            };
            (serde_json::to_value(&c)?, 0, Payload::Eval(summary))
        }
        Command::Conductance => {
            let mut c: ConductanceCommand = parse(&inv.config)?;
            if let Some(s) = inv.seed {
                c.conductance.seed = s;
            }
            let net = load_net(&mut c.model, &inv.model)?;
            let data = c.data.load()?;
            let report = conductance_report(&net, &data.train, &c.conductance)?;
            files.push(("conductance.json".into(), serde_json::to_vec_pretty(&report)?));
            (serde_json::to_value(&c)?, c.conductance.seed, Payload::Conductance(report))
        }
        Command::Noise => {
            let mut c: NoiseCommand = parse(&inv.config)?;
            if let Some(s) = inv.seed {
                c.seed = s;
            }
            let net = load_net(&mut c.model, &inv.model)?;
            let data = c.data.load()?;
            let layers: Vec<usize> = if c.layers.is_empty() { (0..net.param_count()).collect() } else { c.layers.clone() };
            let rows = noise_sweep(&net, &layers, &c.snr_db, c.trials, c.seed, &data.test)?;
            (serde_json::to_value(&c)?, c.seed, Payload::Noise(rows))
        }
        Command::Xaigen => {
            let mut c: XaigenCommand = parse(&inv.config)?;
            if let Some(s) = inv.seed {
                c.search.conductance.seed = s;
            }
            c.accelerator.validate()?;
            let net = load_net(&mut c.model, &inv.model)?;
            let data = c.data.load()?;
            let lib = c.library.build(c.accelerator.p_mac_watts)?;
            let xdata = XaiGenData {
                attribution: &data.train,
                calibration: &data.calibration,
                evaluation: &data.test,
            };
            let (result, report) = run_xaigen(&net, &c.search, &lib, &c.accelerator, &xdata)?;
            files.push(("conductance.json".into(), serde_json::to_vec_pretty(&report)?));
            files.push(("config.json".into(), serde_json::to_vec_pretty(&result.config)?));
            (serde_json::to_value(&c)?, c.search.conductance.seed, Payload::Xaigen(result))
        }
        Command::Nas => {
            let mut c: NasCommand = parse(&inv.config)?;
            if let Some(s) = inv.seed {
                c.nas.seed = s;
                c.search.conductance.seed = s;
            }
            c.accelerator.validate()?;
            c.nas.validate()?;
            let net = load_net(&mut c.model, &inv.model)?;
            let data = c.data.load()?;
            let lib = c.library.build(c.accelerator.p_mac_watts)?;
            let xdata = XaiGenData {
                attribution: &data.train,
                calibration: &data.calibration,
                evaluation: &data.test,
            };
            let (generated, report) = run_xaigen(&net, &c.search, &lib, &c.accelerator, &xdata)?;
            let seed_genome = genome_from_config(&generated.config, &lib)?;
            let q = quantized(&net, &data)?;
            let subset = match c.nas.eval_subset {
                Some(n) => data.test.take(n, Split::Test),
                None => data.test.clone(),
            };
            let domain = GenomeDomain::new(net.param_count(), lib.len(), c.nas.protect_output_layer);
            let evaluator = GenomeEvaluator::new(&net, &q, &report.neuron_abs, &lib, &c.accelerator, &subset, c.nas.use_weight_map);
            let nas = run_nas(&evaluator, &seed_genome, &c.nas, &domain, Some(&data.test))?;
            let random = if c.random_baseline {
                let rnd_eval = GenomeEvaluator::new(&net, &q, &report.neuron_abs, &lib, &c.accelerator, &subset, c.nas.use_weight_map);
                random_search(&rnd_eval, &domain, nas.evaluations, c.nas.seed, generated.q_c)?
            } else {
                crate::nas::RandomSearchResult {
                    candidates: Vec::new(),
                    best: 0,
                }
            };
            let random_best = random.candidates.get(random.best).map(|c| c.1).unwrap_or(crate::nas::Objectives {
                quality: 0.0,
                energy_j: f64::MAX,
            });
            let summary = NasSummary { nas, random, random_best };
            (serde_json::to_value(&c)?, c.nas.seed, Payload::Nas(Box::new(summary)))
        }
        Command::Energy => {
            let mut c: EnergyCommand = parse(&inv.config)?;
            c.accelerator.validate()?;
            let net = load_net(&mut c.model, &inv.model)?;
            let lib = c.library.build(c.accelerator.p_mac_watts)?;
            let cfg = c.approx.clone().unwrap_or_else(|| AxDNNConfig::uniform(net.param_count(), lib.exact().lut.name()));
            let report = energy_total(&net, &cfg, &lib, &c.accelerator)?;
            (serde_json::to_value(&c)?, 0, Payload::Energy(report))
        }
        Command::Lut(LutAction::Synth) => {
            let c: LutSynthCommand = parse(&inv.config)?;
            let mut summaries = Vec::new();
            for d in &c.designs {
                for lut in synth(d)? {
                    let name = format!("{}.lut", lut.name());
                    lut.save(&out.join(&name))?;
                    summaries.push(lut_summary(&lut, Some(name)));
                }
            }
            (serde_json::to_value(&c)?, 0, Payload::Lut(summaries))
        }
        Command::Lut(LutAction::Inspect) => {
            let c = inputs_config(inv)?;
            let summaries = c
                .inputs
                .iter()
                .map(|p| MultiplierLUT::load(p.as_ref()).map(|(l, _)| lut_summary(&l, Some(p.clone()))))
                .collect::<Result<_>>()?;
            (serde_json::to_value(&c)?, 0, Payload::Lut(summaries))
        }
        Command::Lut(LutAction::Dump) => {
            let c = inputs_config(inv)?;
            let mut names = Vec::new();
            for p in &c.inputs {
                let (lut, _) = MultiplierLUT::load(p.as_ref())?;
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(["a", "b", "product", "exact"])?;
                for a in 0..=255u8 {
                    for b in 0..=255u8 {
                        let (pa, pb) = (u32::from(a), u32::from(b));
                        w.write_record([a.to_string(), b.to_string(), lut.product(a, b).to_string(), (pa * pb).to_string()])?;
                    }
                }
                let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
                let name = format!("{}_products.csv", lut.name());
                files.push((name.clone(), bytes));
                names.push(name);
            }
            (serde_json::to_value(&c)?, 0, Payload::Files(names))
        }
        Command::Report => {
            let c = inputs_config(inv)?;
            let mut names = Vec::new();
            for p in &c.inputs {
                let report = crate::report::load_report(p.as_ref())?;
                for (name, bytes) in render_csv(&report)? {
                    names.push(name.clone());
                    files.push((name, bytes));
                }
            }
            (serde_json::to_value(&c)?, 0, Payload::Files(names))
        }
    };

    let report = RunReport::new(inv.command.name(), config, seed, start.elapsed().as_secs_f64(), payload);
    if !matches!(inv.command, Command::Report) {
        files.extend(render_csv(&report)?);
    }
    for (name, bytes) in &files {
        write_atomic(&out.join(name), bytes)?;
    }
    save_report(&report, &out.join(REPORT_FILE))?;
    Ok(report)
}

fn inputs_config(inv: &Invocation) -> Result<InputsCommand> {
    let mut c: InputsCommand = parse(&inv.config)?;
    c.inputs.extend(inv.inputs.iter().map(|p| p.to_string_lossy().into_owned()));
    if c.inputs.is_empty() {
        return Err(Error::config("inputs", format!("`{}` needs at least one input file", inv.command.name())));
    }
    Ok(c)
}

/// Re-runs the command recorded in `report` with its embedded configuration
/// and seed, writing into `out`.
pub fn replay(report: &RunReport, out: &Path) -> Result<RunReport> {
    let inv = Invocation {
        command: Command::from_name(&report.command)?,
        config: Some(report.config.clone()),
        seed: None,
        model: None,
        inputs: Vec::new(),
        out: out.to_path_buf(),
    };
    execute(&inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::axmul::LADDER_MAE_PCT;

    #[test]
    fn command_names_round_trip() {
        for c in [
            Command::Train,
            Command::Eval,
            Command::Conductance,
            Command::Noise,
            Command::Xaigen,
            Command::Nas,
            Command::Energy,
            Command::Lut(LutAction::Synth),
            Command::Lut(LutAction::Inspect),
            Command::Lut(LutAction::Dump),
            Command::Report,
        ] {
            assert_eq!(Command::from_name(c.name()).unwrap(), c);
        }
        assert!(Command::from_name("plot").is_err());
    }

    #[test]
    fn unknown_config_field_is_named() {
        let v = serde_json::json!({ "acclerator": {} });
        let err = parse::<EnergyCommand>(&Some(v)).unwrap_err().to_string();
        assert!(err.contains("acclerator"), "{err}");
    }

    #[test]
    fn missing_model_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let err = execute(&Invocation::new(Command::Energy, dir.path())).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "model"));
    }

    #[test]
    fn lut_synth_inspect_dump() {
        let dir = tempfile::tempdir().unwrap();
        let mut synth = Invocation::new(Command::Lut(LutAction::Synth), dir.path());
        synth.config = Some(serde_json::json!({ "designs": [{ "kind": "truncated", "drop_bits": 4 }] }));
        let r = execute(&synth).unwrap();
        let Payload::Lut(s) = &r.payload else { panic!("lut payload") };
        assert_eq!(s.len(), 1);
        let lut_path = dir.path().join(s[0].path.as_ref().unwrap());

        let mut inspect = Invocation::new(Command::Lut(LutAction::Inspect), dir.path().join("inspect"));
        inspect.inputs = vec![lut_path.clone()];
        let Payload::Lut(i) = execute(&inspect).unwrap().payload else { panic!("lut payload") };
        assert_eq!(i[0].computed_mae_pct, s[0].computed_mae_pct);

        let mut dump = Invocation::new(Command::Lut(LutAction::Dump), dir.path().join("dump"));
        dump.inputs = vec![lut_path];
        let Payload::Files(f) = execute(&dump).unwrap().payload else { panic!("files payload") };
        let text = fs::read_to_string(dir.path().join("dump").join(&f[0])).unwrap();
        assert_eq!(text.lines().count(), 1 + 256 * 256);
    }

    #[test]
    fn mae_ladder_matches_fixture_count() {
        let luts = synth(&LutDesign::Ladder { p_mac_watts: 1e-3 }).unwrap();
        assert_eq!(luts.len(), LADDER_MAE_PCT.len() + 1);
    }
}
