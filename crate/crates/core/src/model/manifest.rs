//! JSON model manifest plus optional little-endian f32 weight blob.
//!
//! The blob stores, for every parameterized layer in pre-order, its weights
//! (row-major, `[out][in][ky][kx]` or `[out][in]`) followed by its bias.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Conv2d, Dense, Layer, Network, ResidualBlock, Shape};
use crate::error::{Error, Result};
use crate::report::write_atomic;

pub const MANIFEST_VERSION: u32 = 1;

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerDescriptor {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    Maxpool2d,
    Flatten,
    ResidualBlock {
        body: Vec<LayerDescriptor>,
    },
}

const KNOWN_KINDS: [&str; 6] = ["conv2d", "dense", "relu", "maxpool2d", "flatten", "residual_block"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub schema_version: u32,
    pub name: String,
    pub input_shape: Shape,
    /// Seed for uniform `±sqrt(6 / fan_in)` initialization of absent weights.
    #[serde(default)]
    pub seed: u64,
    pub layers: Vec<LayerDescriptor>,
    /// Weight blob path, relative to the manifest file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<String>,
}

impl ModelManifest {
    /// LeNet-5 on 28x28 inputs: three convolutions and two dense layers.
    pub fn lenet5(seed: u64) -> Self {
        use LayerDescriptor::*;
        ModelManifest {
            schema_version: MANIFEST_VERSION,
            name: "lenet5".into(),
            input_shape: [1, 28, 28],
            seed,
            layers: vec![
                Conv2d { in_channels: 1, out_channels: 6, kernel: 5, stride: 1, padding: 0 },
                Relu,
                Maxpool2d,
                Conv2d { in_channels: 6, out_channels: 16, kernel: 5, stride: 1, padding: 0 },
                Relu,
                Maxpool2d,
                Conv2d { in_channels: 16, out_channels: 120, kernel: 4, stride: 1, padding: 0 },
                Relu,
                Flatten,
                Dense { inputs: 120, outputs: 84 },
                Relu,
                Dense { inputs: 84, outputs: 10 },
            ],
            weights: None,
        }
    }

    /// A reduced-depth residual network: stem conv, two residual blocks, one classifier.
    pub fn resnet_mini(input_shape: Shape, classes: usize, width: usize, seed: u64) -> Self {
        use LayerDescriptor::*;
        let block = || ResidualBlock {
            body: vec![
                Conv2d { in_channels: width, out_channels: width, kernel: 3, stride: 1, padding: 1 },
                Relu,
                Conv2d { in_channels: width, out_channels: width, kernel: 3, stride: 1, padding: 1 },
            ],
        };
        let [c, h, w] = input_shape;
        ModelManifest {
            schema_version: MANIFEST_VERSION,
            name: "resnet_mini".into(),
            input_shape,
            seed,
            layers: vec![
                Conv2d { in_channels: c, out_channels: width, kernel: 3, stride: 1, padding: 1 },
                Relu,
                block(),
                Relu,
                Maxpool2d,
                block(),
                Relu,
                Maxpool2d,
                Flatten,
                Dense { inputs: width * (h / 4) * (w / 4), outputs: classes },
            ],
            weights: None,
        }
    }

    /// Parses a manifest, reporting unknown layer kinds by name.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        if let Some(layers) = value.get("layers") {
            check_kinds(layers)?;
        }
        let manifest: ModelManifest = serde_json::from_value(value)?;
        if manifest.schema_version != MANIFEST_VERSION {
            return Err(Error::Version {
                found: manifest.schema_version,
                expected: MANIFEST_VERSION,
            });
        }
        Ok(manifest)
    }

    /// Builds and validates the network. `blob` supplies all parameters in
    /// manifest order; without it parameters are initialized from `seed`.
    pub fn build(&self, blob: Option<&[f32]>) -> Result<Network> {
        if self.layers.is_empty() {
            return Err(Error::EmptyNetwork);
        }
        let mut layers: Vec<Layer> = self.layers.iter().map(to_layer).collect();
        // validate geometry before touching parameters so errors name the layer
        super::sequence_output_shape(&layers, self.input_shape)?;
        let mut net = Network {
            name: self.name.clone(),
            input_shape: self.input_shape,
            layers: std::mem::take(&mut layers),
        };
        let infos = net.params();
        match blob {
            Some(blob) => {
                let mut cursor = 0usize;
                for ((w, b), info) in net.param_tensors_mut().into_iter().zip(&infos) {
                    let need = w.len() + b.len();
                    if cursor + need > blob.len() {
                        return Err(Error::shape(
                            info.name.clone(),
                            format!("weight blob exhausted: need {need} values at offset {cursor}, blob has {}", blob.len()),
                        ));
                    }
                    for (dst, src) in w.iter_mut().chain(b.iter_mut()).zip(&blob[cursor..cursor + need]) {
                        *dst = f64::from(*src);
                    }
                    cursor += need;
                }
                if cursor != blob.len() {
                    return Err(Error::shape(
                        "weight blob",
                        format!("{} trailing values after the last layer", blob.len() - cursor),
                    ));
                }
            }
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                for ((w, _b), info) in net.param_tensors_mut().into_iter().zip(&infos) {
                    let fan_in = w.len() / info.neurons();
                    let limit = (6.0 / fan_in as f64).sqrt();
                    for v in w.iter_mut() {
                        *v = rng.random_range(-limit..limit);
                    }
                }
            }
        }
        net.validate()?;
        Ok(net)
    }

    /// Manifest describing an existing network's architecture.
    pub fn describe(net: &Network) -> Self {
        ModelManifest {
            schema_version: MANIFEST_VERSION,
            name: net.name.clone(),
            input_shape: net.input_shape,
            seed: 0,
            layers: net.layers.iter().map(to_descriptor).collect(),
            weights: None,
        }
    }
}

fn check_kinds(layers: &serde_json::Value) -> Result<()> {
    let Some(items) = layers.as_array() else {
        return Ok(());
    };
    for item in items {
        if let Some(kind) = item.get("kind").and_then(|k| k.as_str()) {
            if !KNOWN_KINDS.contains(&kind) {
                return Err(Error::UnknownKind(kind.to_string()));
            }
        }
        if let Some(body) = item.get("body") {
            check_kinds(body)?;
        }
    }
    Ok(())
}

fn to_layer(d: &LayerDescriptor) -> Layer {
    match *d {
        LayerDescriptor::Conv2d { in_channels, out_channels, kernel, stride, padding } => Layer::Conv2d(Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weights: vec![0.0; in_channels * out_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }),
        LayerDescriptor::Dense { inputs, outputs } => Layer::Dense(Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }),
        LayerDescriptor::Relu => Layer::Relu,
        LayerDescriptor::Maxpool2d => Layer::MaxPool2d,
        LayerDescriptor::Flatten => Layer::Flatten,
        LayerDescriptor::ResidualBlock { ref body } => Layer::Residual(ResidualBlock {
            body: body.iter().map(to_layer).collect(),
        }),
    }
}

fn to_descriptor(l: &Layer) -> LayerDescriptor {
    match l {
        Layer::Conv2d(c) => LayerDescriptor::Conv2d {
            in_channels: c.in_channels,
            out_channels: c.out_channels,
            kernel: c.kernel,
            stride: c.stride,
            padding: c.padding,
        },
        Layer::Dense(d) => LayerDescriptor::Dense {
            inputs: d.inputs,
            outputs: d.outputs,
        },
        Layer::Relu => LayerDescriptor::Relu,
        Layer::MaxPool2d => LayerDescriptor::Maxpool2d,
        Layer::Flatten => LayerDescriptor::Flatten,
        Layer::Residual(b) => LayerDescriptor::ResidualBlock {
            body: b.body.iter().map(to_descriptor).collect(),
        },
    }
}

fn blob_path(manifest_path: &Path, rel: &str) -> PathBuf {
    manifest_path.parent().unwrap_or(Path::new(".")).join(rel)
}

/// Loads a manifest and, if it names one, its weight blob.
pub fn load_model(manifest_path: &Path) -> Result<Network> {
    let manifest = ModelManifest::from_json(&fs::read_to_string(manifest_path)?)?;
    let blob = match &manifest.weights {
        Some(rel) => {
            let bytes = fs::read(blob_path(manifest_path, rel))?;
            if bytes.len() % 4 != 0 {
                return Err(Error::shape("weight blob", format!("{} bytes is not a multiple of 4", bytes.len())));
            }
            Some(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect::<Vec<f32>>(),
            )
        }
        None => None,
    };
    manifest.build(blob.as_deref())
}

/// Writes `<stem>.json` and `<stem>.bin` next to each other.
pub fn save_model(net: &Network, manifest_path: &Path) -> Result<()> {
    let mut manifest = ModelManifest::describe(net);
    let blob_name = manifest_path
        .with_extension("bin")
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| Error::InvalidArgument(format!("bad manifest path {}", manifest_path.display())))?;
    manifest.weights = Some(blob_name.clone());
    let mut bytes = Vec::new();
    for p in net.params() {
        let (w, b) = net.param_tensors(p.param_id);
        for v in w.iter().chain(b) {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    write_atomic(&blob_path(manifest_path, &blob_name), &bytes)?;
    write_atomic(manifest_path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_kind_is_named() {
        let text = r#"{"schema_version":1,"name":"x","input_shape":[1,4,4],
            "layers":[{"kind":"conv2d","in_channels":1,"out_channels":1,"kernel":3},{"kind":"softplus"}]}"#;
        match ModelManifest::from_json(text) {
            Err(Error::UnknownKind(k)) => assert_eq!(k, "softplus"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn init_respects_fan_in_bound_and_seed() {
        let a = ModelManifest::lenet5(3).build(None).unwrap();
        let b = ModelManifest::lenet5(3).build(None).unwrap();
        assert_eq!(a, b);
        for info in a.params() {
            let (w, bias) = a.param_tensors(info.param_id);
            let limit = (6.0 / (w.len() / info.neurons()) as f64).sqrt();
            assert!(w.iter().all(|v| v.abs() <= limit));
            assert!(bias.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn blob_with_wrong_count_rejected() {
        let m = ModelManifest::lenet5(0);
        let err = m.build(Some(&[0.0; 10])).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn save_load_round_trip_through_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lenet.json");
        let net = ModelManifest::lenet5(9).build(None).unwrap();
        save_model(&net, &path).unwrap();
        let back = load_model(&path).unwrap();
        for p in net.params() {
            let (w0, _) = net.param_tensors(p.param_id);
            let (w1, _) = back.param_tensors(p.param_id);
            for (a, b) in w0.iter().zip(w1) {
                assert_eq!(*a as f32, *b as f32);
            }
        }
        // second save of the reloaded model is byte-identical
        let path2 = dir.path().join("again.json");
        save_model(&back, &path2).unwrap();
        assert_eq!(fs::read(path.with_extension("bin")).unwrap(), fs::read(path2.with_extension("bin")).unwrap());
    }
}
