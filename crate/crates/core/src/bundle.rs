//! Weight bundle: slot attention, classifier and decoder in one binary file.
//!
//! Layout (little-endian):
//!
//! ```text
//! "OCOW"  u32 version
//! repeated until EOF:
//!     u32 name_len, name bytes (UTF-8), u32 rank, rank × u32 dims, Π dims × f64
//! ```
//!
//! Scalars (iteration count, slot count, flags, activation codes) are rank-0
//! tensors holding one value.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{OcoError, Result};
use crate::numerics::{Activation, DenseLayer, GruWeights, Matrix};
use crate::slot::{
    init_slots, slot_attention_forward, slot_logits, AttentionNorm, ClassifierWeights, FeatureMap,
    SlotAttentionWeights,
};

pub const BUNDLE_MAGIC: &[u8; 4] = b"OCOW";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn scalar(v: f64) -> Self {
        Tensor {
            dims: Vec::new(),
            values: vec![v],
        }
    }

    pub fn vector(v: &[f64]) -> Self {
        Tensor {
            dims: vec![v.len()],
            values: v.to_vec(),
        }
    }

    pub fn matrix(m: &Matrix) -> Self {
        Tensor {
            dims: vec![m.rows(), m.cols()],
            values: m.data().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightBundle {
    pub slot: SlotAttentionWeights,
    pub classifier: ClassifierWeights,
    pub decoder: Vec<DenseLayer>,
}

/// Shapes for [`WeightBundle::random`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BundleShape {
    pub input_channels: usize,
    pub slot_dim: usize,
    pub num_slots: usize,
    pub iterations: usize,
    pub num_classes: usize,
    /// Output width of the decoder, normally `H·W·C`. Zero means no decoder.
    pub decoder_output: usize,
}

impl WeightBundle {
    pub fn validate(&self) -> Result<()> {
        self.slot.validate()?;
        self.classifier.validate()?;
        if self.classifier.weight.rows() != self.slot.slot_dim() {
            return Err(OcoError::invalid(format!(
                "classifier expects {}-dim slots, slot attention produces {}",
                self.classifier.weight.rows(),
                self.slot.slot_dim()
            )));
        }
        let mut width = self.slot.slot_dim();
        for (i, layer) in self.decoder.iter().enumerate() {
            if layer.input_dim() != width {
                return Err(OcoError::invalid(format!(
                    "decoder layer {i} takes {} inputs, previous layer emits {width}",
                    layer.input_dim()
                )));
            }
            if layer.bias.len() != layer.output_dim() {
                return Err(OcoError::invalid(format!(
                    "decoder layer {i}: bias length mismatch"
                )));
            }
            width = layer.output_dim();
        }
        Ok(())
    }

    /// Randomly initialized bundle, scaled by `1/√fan_in`. Used for smoke runs and tests.
    pub fn random(shape: BundleShape, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mat = |rows: usize, cols: usize| {
            let s = 1.0 / (rows.max(1) as f64).sqrt();
            Matrix::new(
                rows,
                cols,
                (0..rows * cols).map(|_| rng.random_range(-s..s)).collect(),
            )
        };
        let d = shape.slot_dim;
        let gru = GruWeights {
            input_reset: mat(d, d)?,
            input_update: mat(d, d)?,
            input_candidate: mat(d, d)?,
            state_reset: mat(d, d)?,
            state_update: mat(d, d)?,
            state_candidate: mat(d, d)?,
            bias_reset: vec![0.0; d],
            bias_update: vec![0.0; d],
            bias_candidate: vec![0.0; d],
        };
        let slot = SlotAttentionWeights {
            w_q: mat(d, d)?,
            w_k: mat(shape.input_channels, d)?,
            w_v: mat(shape.input_channels, d)?,
            gru,
            init_mean: mat(1, d)?.into_data(),
            init_log_scale: vec![0.0; d],
            iterations: shape.iterations,
            num_slots: shape.num_slots,
            norm: AttentionNorm::SlotCompetition,
            layer_norm: false,
        };
        let classifier =
            ClassifierWeights::new(mat(d, shape.num_classes)?, vec![0.0; shape.num_classes])?;
        let decoder = if shape.decoder_output == 0 {
            Vec::new()
        } else {
            vec![
                DenseLayer::new(mat(d, d)?, vec![0.0; d], Activation::Relu)?,
                DenseLayer::new(
                    mat(d, shape.decoder_output)?,
                    vec![0.0; shape.decoder_output],
                    Activation::Linear,
                )?,
            ]
        };
        let bundle = WeightBundle {
            slot,
            classifier,
            decoder,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let s = &self.slot;
        let mut out = vec![
            ("slot.w_q".to_string(), Tensor::matrix(&s.w_q)),
            ("slot.w_k".to_string(), Tensor::matrix(&s.w_k)),
            ("slot.w_v".to_string(), Tensor::matrix(&s.w_v)),
            ("slot.init_mean".to_string(), Tensor::vector(&s.init_mean)),
            (
                "slot.init_log_scale".to_string(),
                Tensor::vector(&s.init_log_scale),
            ),
            (
                "slot.iterations".to_string(),
                Tensor::scalar(s.iterations as f64),
            ),
            (
                "slot.num_slots".to_string(),
                Tensor::scalar(s.num_slots as f64),
            ),
            (
                "slot.attention_norm".to_string(),
                Tensor::scalar(match s.norm {
                    AttentionNorm::SlotCompetition => 0.0,
                    AttentionNorm::KeyAxis => 1.0,
                }),
            ),
            (
                "slot.layer_norm".to_string(),
                Tensor::scalar(if s.layer_norm { 1.0 } else { 0.0 }),
            ),
        ];
        let g = &s.gru;
        for (name, m) in [
            ("input_reset", &g.input_reset),
            ("input_update", &g.input_update),
            ("input_candidate", &g.input_candidate),
            ("state_reset", &g.state_reset),
            ("state_update", &g.state_update),
            ("state_candidate", &g.state_candidate),
        ] {
            out.push((format!("gru.{name}"), Tensor::matrix(m)));
        }
        for (name, b) in [
            ("bias_reset", &g.bias_reset),
            ("bias_update", &g.bias_update),
            ("bias_candidate", &g.bias_candidate),
        ] {
            out.push((format!("gru.{name}"), Tensor::vector(b)));
        }
        out.push((
            "classifier.weight".to_string(),
            Tensor::matrix(&self.classifier.weight),
        ));
        out.push((
            "classifier.bias".to_string(),
            Tensor::vector(&self.classifier.bias),
        ));
        for (i, layer) in self.decoder.iter().enumerate() {
            out.push((format!("decoder.{i}.weight"), Tensor::matrix(&layer.weight)));
            out.push((format!("decoder.{i}.bias"), Tensor::vector(&layer.bias)));
            out.push((
                format!("decoder.{i}.activation"),
                Tensor::scalar(f64::from(layer.activation.code())),
            ));
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(BUNDLE_MAGIC);
        buf.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
        for (name, t) in self.named_tensors() {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let tensors = read_tensors(bytes)?;
        let mut store = TensorStore { tensors };
        let bundle = store.assemble()?;
        if let Some(name) = store.tensors.keys().next() {
            return Err(OcoError::invalid(format!(
                "unexpected tensor {name:?} in weight bundle"
            )));
        }
        bundle.validate()?;
        Ok(bundle)
    }

    /// Slot logits (`K × M`) for one feature map, with slots initialized from `seed`.
    pub fn infer(&self, x: &FeatureMap, seed: u64) -> Result<Matrix> {
        if x.channels() != self.slot.input_channels() {
            return Err(OcoError::invalid(format!(
                "feature map has {} channels, weights expect {}",
                x.channels(),
                self.slot.input_channels()
            )));
        }
        let init = init_slots(&self.slot, seed);
        let slots = slot_attention_forward(x, &self.slot, &init)?;
        slot_logits(&slots, &self.classifier)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(OcoError::parse(
                format!("byte {}", self.pos),
                format!("unexpected end of data while reading {what}"),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn read_tensors(bytes: &[u8]) -> Result<BTreeMap<String, Tensor>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != BUNDLE_MAGIC {
        return Err(OcoError::parse("byte 0", "not a weight bundle (bad magic)"));
    }
    let version = cur.u32("version")?;
    if version != BUNDLE_VERSION {
        return Err(OcoError::parse(
            "byte 4",
            format!("unsupported bundle version {version}, expected {BUNDLE_VERSION}"),
        ));
    }
    let mut tensors = BTreeMap::new();
    while !cur.done() {
        let start = cur.pos;
        let name_len = cur.u32("tensor name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "tensor name")?)
            .map_err(|_| OcoError::parse(format!("byte {start}"), "tensor name is not UTF-8"))?
            .to_string();
        let rank = cur.u32("tensor rank")? as usize;
        if rank > 2 {
            return Err(OcoError::parse(
                format!("byte {start}"),
                format!("tensor {name} has rank {rank}"),
            ));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u32("tensor dimension")? as usize);
        }
        let count: usize = dims.iter().product();
        let raw = cur.take(count.saturating_mul(8), &format!("values of {name}"))?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if tensors
            .insert(name.clone(), Tensor { dims, values })
            .is_some()
        {
            return Err(OcoError::parse(
                format!("byte {start}"),
                format!("duplicate tensor {name}"),
            ));
        }
    }
    Ok(tensors)
}

struct TensorStore {
    tensors: BTreeMap<String, Tensor>,
}

impl TensorStore {
    fn take(&mut self, name: &str) -> Result<Tensor> {
        self.tensors
            .remove(name)
            .ok_or_else(|| OcoError::invalid(format!("weight bundle is missing tensor {name}")))
    }

    fn matrix(&mut self, name: &str) -> Result<Matrix> {
        let t = self.take(name)?;
        match t.dims[..] {
            [r, c] => {
                Matrix::new(r, c, t.values).map_err(|e| OcoError::invalid(format!("{name}: {e}")))
            }
            _ => Err(OcoError::invalid(format!(
                "{name} must be a matrix, has rank {}",
                t.dims.len()
            ))),
        }
    }

    fn vector(&mut self, name: &str) -> Result<Vec<f64>> {
        let t = self.take(name)?;
        if t.dims.len() != 1 {
            return Err(OcoError::invalid(format!(
                "{name} must be a vector, has rank {}",
                t.dims.len()
            )));
        }
        Ok(t.values)
    }

    fn scalar(&mut self, name: &str) -> Result<f64> {
        let t = self.take(name)?;
        if !t.dims.is_empty() {
            return Err(OcoError::invalid(format!("{name} must be a scalar")));
        }
        Ok(t.values[0])
    }

    fn count(&mut self, name: &str) -> Result<usize> {
        let v = self.scalar(name)?;
        if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
            return Err(OcoError::invalid(format!(
                "{name} must be a non-negative integer, got {v}"
            )));
        }
        Ok(v as usize)
    }

    fn assemble(&mut self) -> Result<WeightBundle> {
        let gru = GruWeights {
            input_reset: self.matrix("gru.input_reset")?,
            input_update: self.matrix("gru.input_update")?,
            input_candidate: self.matrix("gru.input_candidate")?,
            state_reset: self.matrix("gru.state_reset")?,
            state_update: self.matrix("gru.state_update")?,
            state_candidate: self.matrix("gru.state_candidate")?,
            bias_reset: self.vector("gru.bias_reset")?,
            bias_update: self.vector("gru.bias_update")?,
            bias_candidate: self.vector("gru.bias_candidate")?,
        };
        let norm = match self.count("slot.attention_norm")? {
            0 => AttentionNorm::SlotCompetition,
            1 => AttentionNorm::KeyAxis,
            other => {
                return Err(OcoError::invalid(format!(
                    "unknown attention normalization code {other}"
                )))
            }
        };
        let slot = SlotAttentionWeights {
            w_q: self.matrix("slot.w_q")?,
            w_k: self.matrix("slot.w_k")?,
            w_v: self.matrix("slot.w_v")?,
            gru,
            init_mean: self.vector("slot.init_mean")?,
            init_log_scale: self.vector("slot.init_log_scale")?,
            iterations: self.count("slot.iterations")?,
            num_slots: self.count("slot.num_slots")?,
            norm,
            layer_norm: self.count("slot.layer_norm")? != 0,
        };
        let classifier = ClassifierWeights::new(
            self.matrix("classifier.weight")?,
            self.vector("classifier.bias")?,
        )?;
        let mut decoder = Vec::new();
        for i in 0.. {
            if !self.tensors.contains_key(&format!("decoder.{i}.weight")) {
                break;
            }
            let weight = self.matrix(&format!("decoder.{i}.weight"))?;
            let bias = self.vector(&format!("decoder.{i}.bias"))?;
            let code = self.count(&format!("decoder.{i}.activation"))?;
            let activation = Activation::from_code(code as u32).ok_or_else(|| {
                OcoError::invalid(format!("decoder.{i}: unknown activation code {code}"))
            })?;
            decoder.push(DenseLayer::new(weight, bias, activation)?);
        }
        Ok(WeightBundle {
            slot,
            classifier,
            decoder,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> BundleShape {
        BundleShape {
            input_channels: 3,
            slot_dim: 4,
            num_slots: 2,
            iterations: 3,
            num_classes: 5,
            decoder_output: 12,
        }
    }

    #[test]
    fn round_trip() {
        let mut b = WeightBundle::random(shape(), 1).unwrap();
        b.slot.init_log_scale[1] = f64::NEG_INFINITY;
        b.slot.norm = AttentionNorm::KeyAxis;
        let bytes = b.to_bytes();
        assert_eq!(&bytes[..4], b"OCOW");
        assert_eq!(WeightBundle::from_bytes(&bytes).unwrap(), b);
    }

    #[test]
    fn rejects_bad_header_and_truncation() {
        let bytes = WeightBundle::random(shape(), 1).unwrap().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            WeightBundle::from_bytes(&bad),
            Err(OcoError::Parse { .. })
        ));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(WeightBundle::from_bytes(&v2)
            .unwrap_err()
            .to_string()
            .contains("version"));
        assert!(matches!(
            WeightBundle::from_bytes(&bytes[..bytes.len() - 3]),
            Err(OcoError::Parse { .. })
        ));
    }

    #[test]
    fn rejects_inconsistent_dimensions() {
        let mut b = WeightBundle::random(shape(), 1).unwrap();
        b.classifier.weight = Matrix::zeros(3, 5);
        assert!(WeightBundle::from_bytes(&b.to_bytes()).is_err());

        let mut b = WeightBundle::random(shape(), 1).unwrap();
        b.slot.w_k = Matrix::zeros(3, 2);
        assert!(WeightBundle::from_bytes(&b.to_bytes()).is_err());
    }

    #[test]
    fn rejects_missing_tensor() {
        let b = WeightBundle::random(shape(), 1).unwrap();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(BUNDLE_MAGIC);
        bytes.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
        for (name, t) in b
            .named_tensors()
            .into_iter()
            .filter(|(n, _)| n != "slot.w_q")
        {
            bytes.extend_from_slice(&(name.len() as u32).to_le_bytes());
            bytes.extend_from_slice(name.as_bytes());
            bytes.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                bytes.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.values {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let err = WeightBundle::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("slot.w_q"), "{err}");
    }
}
