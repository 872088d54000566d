use serde::{Deserialize, Serialize};

use crate::codec::{sha256_hex, ByteReader, ByteWriter, Decode, Encode};
use crate::error::{Error, Result};
use crate::numeric::{dot, Matrix, RealVector, SeededRng};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FMCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Relu => 1,
            Activation::Identity => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Identity),
            other => Err(Error::Decode(format!("unknown activation tag {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

/// Ordered dense layers; every layer but the last is a hidden layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    layers: Vec<LayerSpec>,
}

impl Architecture {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("architecture"));
        }
        if layers.iter().any(|l| l.inputs == 0 || l.outputs == 0) {
            return Err(Error::InvalidArgument("zero-width layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::DimensionMismatch(format!(
                    "layer output {} feeds layer input {}",
                    pair[0].outputs, pair[1].inputs
                )));
            }
        }
        Ok(Self { layers })
    }

    /// ReLU hidden layers followed by a linear logit layer.
    pub fn mlp(input_dim: usize, hidden: &[usize], classes: usize) -> Result<Self> {
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(classes);
        let last = widths.len() - 2;
        Self::new(
            widths
                .windows(2)
                .enumerate()
                .map(|(i, w)| LayerSpec {
                    inputs: w[0],
                    outputs: w[1],
                    activation: if i == last {
                        Activation::Identity
                    } else {
                        Activation::Relu
                    },
                })
                .collect(),
        )
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn classes(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn check_hidden(&self, layer: usize) -> Result<()> {
        if layer < self.hidden_layers() {
            Ok(())
        } else {
            Err(Error::InvalidLayer {
                layer,
                hidden: self.hidden_layers(),
            })
        }
    }

    pub fn width(&self, layer: usize) -> Result<usize> {
        self.check_hidden(layer)?;
        Ok(self.layers[layer].outputs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `outputs x inputs`
    pub weights: Matrix,
    pub bias: RealVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch: usize,
    pub dataset_id: String,
}

/// A feedforward network's full parameter state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    arch: Architecture,
    layers: Vec<Dense>,
    pub meta: TrainingMeta,
}

impl ModelCheckpoint {
    pub fn new(arch: Architecture, layers: Vec<Dense>, meta: TrainingMeta) -> Result<Self> {
        if layers.len() != arch.layers.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameter blocks for {} layers",
                layers.len(),
                arch.layers.len()
            )));
        }
        for (spec, dense) in arch.layers.iter().zip(&layers) {
            if dense.weights.rows() != spec.outputs
                || dense.weights.cols() != spec.inputs
                || dense.bias.len() != spec.outputs
            {
                return Err(Error::DimensionMismatch(format!(
                    "parameters {}x{} (+{}) for a {}->{} layer",
                    dense.weights.rows(),
                    dense.weights.cols(),
                    dense.bias.len(),
                    spec.inputs,
                    spec.outputs
                )));
            }
        }
        Ok(Self { arch, layers, meta })
    }

    /// He-normal weights, zero biases.
    pub fn initialize(arch: Architecture, rng: &mut SeededRng, meta: TrainingMeta) -> Self {
        let layers = arch
            .layers
            .iter()
            .map(|spec| Dense {
                weights: Matrix::gaussian(
                    spec.outputs,
                    spec.inputs,
                    (2.0 / spec.inputs as f64).sqrt(),
                    rng,
                ),
                bias: RealVector::zeros(spec.outputs),
            })
            .collect();
        Self { arch, layers, meta }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    /// Post-activation outputs of every layer, last entry being the logits.
    pub fn forward_all(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut outs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (spec, dense) in self.arch.layers.iter().zip(&self.layers) {
            let x = outs.last().map_or(input, Vec::as_slice);
            let y = dense
                .weights
                .iter_rows()
                .zip(dense.bias.as_slice())
                .map(|(row, b)| spec.activation.apply(dot(row, x) + b))
                .collect();
            outs.push(y);
        }
        outs
    }

    pub fn logits(&self, input: &[f64]) -> Vec<f64> {
        self.forward_all(input).pop().unwrap_or_default()
    }

    pub fn predict(&self, input: &[f64]) -> usize {
        let logits = self.logits(input);
        logits
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                if v > bv {
                    (i, v)
                } else {
                    (bi, bv)
                }
            })
            .0
    }

    /// Output of hidden layer `layer` for one input.
    pub fn hidden_activation(&self, input: &[f64], layer: usize) -> Result<Vec<f64>> {
        self.arch.check_hidden(layer)?;
        Ok(self.forward_all(input).swap_remove(layer))
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.as_slice().len()).sum()
    }

    /// SHA-256 of the canonical encoding, lowercase hex.
    pub fn fingerprint(&self) -> String {
        sha256_hex(&self.to_bytes())
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn encode_header(arch: &Architecture, meta: &TrainingMeta) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.put_u64(arch.layers.len() as u64);
    for spec in &arch.layers {
        w.put_u64(spec.inputs as u64);
        w.put_u64(spec.outputs as u64);
        w.put_u8(spec.activation.tag());
    }
    w.put_u64(meta.seed);
    w.put_u64(meta.epochs as u64);
    w.put_f64(meta.learning_rate);
    w.put_u64(meta.batch as u64);
    w.put_str(&meta.dataset_id);
    w.into_bytes()
}

fn decode_header(bytes: &[u8]) -> Result<(Architecture, TrainingMeta)> {
    let mut r = ByteReader::new(bytes);
    let n = r.usize()?;
    let layers = (0..n)
        .map(|_| {
            Ok(LayerSpec {
                inputs: r.usize()?,
                outputs: r.usize()?,
                activation: Activation::from_tag(r.u8()?)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let meta = TrainingMeta {
        seed: r.u64()?,
        epochs: r.usize()?,
        learning_rate: r.f64()?,
        batch: r.usize()?,
        dataset_id: r.string()?,
    };
    r.finish()?;
    Ok((Architecture::new(layers)?, meta))
}

impl Encode for ModelCheckpoint {
    fn encode_into(&self, w: &mut ByteWriter) {
        w.put_bytes(CHECKPOINT_MAGIC);
        w.put_u16(CHECKPOINT_VERSION);
        w.put_section(&encode_header(&self.arch, &self.meta));
        for dense in &self.layers {
            dense.weights.encode_into(w);
            dense.bias.encode_into(w);
        }
    }
}

impl Decode for ModelCheckpoint {
    fn decode_from(r: &mut ByteReader<'_>) -> Result<Self> {
        r.expect_magic(CHECKPOINT_MAGIC)?;
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Decode(format!("unsupported checkpoint version {version}")));
        }
        let (arch, meta) = decode_header(r.section()?)?;
        let layers = (0..arch.layers.len())
            .map(|_| {
                Ok(Dense {
                    weights: Matrix::decode_from(r)?,
                    bias: RealVector::decode_from(r)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ModelCheckpoint::new(arch, layers, meta)
    }
}
