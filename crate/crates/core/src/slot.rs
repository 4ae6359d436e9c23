//! Forward-only slot attention, slot-wise classification and the two loss terms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{OcoError, Result};
use crate::numerics::{
    gru_step, matmul, mlp_forward, softmax_rows, DenseLayer, GruWeights, Matrix,
};

/// Added to each slot's attention mass before the weighted mean, as in the
/// reference slot-attention formulation.
pub const ATTENTION_EPSILON: f64 = 1e-8;

const LAYER_NORM_EPSILON: f64 = 1e-5;

/// Dense `H × W × C` grid of backbone features, stored `(h, w, c)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(OcoError::invalid(format!(
                "feature map dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if values.len() != height * width * channels {
            return Err(OcoError::invalid(format!(
                "feature map has {} values, expected {}",
                values.len(),
                height * width * channels
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(OcoError::invalid("feature map contains a non-finite value"));
        }
        Ok(FeatureMap {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn num_tokens(&self) -> usize {
        self.height * self.width
    }

    /// The map flattened to `N × C` with `N = H·W`.
    pub fn tokens(&self) -> Matrix {
        Matrix::from_raw(self.num_tokens(), self.channels, self.values.clone())
    }
}

/// How the attention logits `Q·Kᵀ/√d` are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttentionNorm {
    /// Softmax across slots for every input token, then a per-slot weighted
    /// mean over tokens. Slots compete for tokens.
    #[default]
    SlotCompetition,
    /// Softmax across tokens for every slot (plain cross-attention).
    KeyAxis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotAttentionWeights {
    /// `d × d`
    pub w_q: Matrix,
    /// `C × d`
    pub w_k: Matrix,
    /// `C × d`
    pub w_v: Matrix,
    pub gru: GruWeights,
    pub init_mean: Vec<f64>,
    /// Log standard deviation of the slot initializer; `-inf` means zero spread.
    pub init_log_scale: Vec<f64>,
    pub iterations: usize,
    pub num_slots: usize,
    pub norm: AttentionNorm,
    /// Parameter-free layer normalization of inputs and slots before projection.
    pub layer_norm: bool,
}

impl SlotAttentionWeights {
    pub fn slot_dim(&self) -> usize {
        self.w_q.rows()
    }

    pub fn input_channels(&self) -> usize {
        self.w_k.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.slot_dim();
        if d == 0 {
            return Err(OcoError::invalid("slot dimension must be positive"));
        }
        if self.w_q.shape() != (d, d) {
            return Err(OcoError::invalid(format!(
                "W_Q is {}x{}, expected {d}x{d}",
                self.w_q.rows(),
                self.w_q.cols()
            )));
        }
        let c = self.input_channels();
        for (name, m) in [("W_K", &self.w_k), ("W_V", &self.w_v)] {
            if m.shape() != (c, d) {
                return Err(OcoError::invalid(format!(
                    "{name} is {}x{}, expected {c}x{d}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        self.gru.validate()?;
        if self.gru.dim() != d {
            return Err(OcoError::invalid(format!(
                "GRU dimension {} does not match slot dimension {d}",
                self.gru.dim()
            )));
        }
        if self.init_mean.len() != d || self.init_log_scale.len() != d {
            return Err(OcoError::invalid(format!(
                "slot initializer vectors must have length {d}"
            )));
        }
        if self.init_mean.iter().any(|v| !v.is_finite()) {
            return Err(OcoError::invalid("slot initializer mean is not finite"));
        }
        if self
            .init_log_scale
            .iter()
            .any(|v| v.is_nan() || *v == f64::INFINITY)
        {
            return Err(OcoError::invalid(
                "slot initializer log-scale must be < +inf",
            ));
        }
        if self.iterations == 0 {
            return Err(OcoError::invalid("iteration count must be at least 1"));
        }
        if self.num_slots == 0 {
            return Err(OcoError::invalid("slot count must be at least 1"));
        }
        Ok(())
    }
}

/// Final slots (`K × d`) and the final attention matrix (`K × N`), after the
/// softmax: columns sum to 1 under slot competition, rows under key-axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotSet {
    pub slots: Matrix,
    pub attention: Matrix,
}

impl SlotSet {
    pub fn num_slots(&self) -> usize {
        self.slots.rows()
    }
}

/// Linear head shared by every slot: `l = s·weight + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierWeights {
    /// `d × M`
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl ClassifierWeights {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        let c = ClassifierWeights { weight, bias };
        c.validate()?;
        Ok(c)
    }

    pub fn num_classes(&self) -> usize {
        self.weight.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes() < 2 {
            return Err(OcoError::invalid("classifier needs at least 2 classes"));
        }
        if self.bias.len() != self.num_classes() {
            return Err(OcoError::invalid(format!(
                "classifier bias has length {}, expected {}",
                self.bias.len(),
                self.num_classes()
            )));
        }
        if self.bias.iter().any(|v| !v.is_finite()) {
            return Err(OcoError::invalid("classifier bias is not finite"));
        }
        Ok(())
    }
}

/// Draws `K` initial slots `μ + exp(log_scale) ∘ ε` from a seeded stream.
pub fn init_slots(w: &SlotAttentionWeights, seed: u64) -> Matrix {
    let d = w.init_mean.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale: Vec<f64> = w.init_log_scale.iter().map(|v| v.exp()).collect();
    let mut data = Vec::with_capacity(w.num_slots * d);
    for _ in 0..w.num_slots {
        for (mean, s) in w.init_mean.iter().zip(&scale) {
            let eps: f64 = StandardNormal.sample(&mut rng);
            data.push(mean + s * eps);
        }
    }
    Matrix::from_raw(w.num_slots, d, data)
}

fn layer_norm_rows(m: &Matrix) -> Matrix {
    let mut data = Vec::with_capacity(m.data().len());
    for row in m.row_iter() {
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let denom = (var + LAYER_NORM_EPSILON).sqrt();
        data.extend(row.iter().map(|v| (v - mean) / denom));
    }
    Matrix::from_raw(m.rows(), m.cols(), data)
}

fn check_finite(m: &Matrix, iteration: usize, what: &str) -> Result<()> {
    if m.data().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(OcoError::Numeric {
            iteration,
            detail: format!("non-finite value in {what}"),
        })
    }
}

/// Runs `T` rounds of attention and GRU refinement starting from `init`.
pub fn slot_attention_forward(
    x: &FeatureMap,
    w: &SlotAttentionWeights,
    init: &Matrix,
) -> Result<SlotSet> {
    w.validate()?;
    let d = w.slot_dim();
    if x.channels() != w.input_channels() {
        return Err(OcoError::invalid(format!(
            "feature map has {} channels, weights expect {}",
            x.channels(),
            w.input_channels()
        )));
    }
    if init.shape() != (w.num_slots, d) {
        return Err(OcoError::invalid(format!(
            "initial slots are {}x{}, expected {}x{d}",
            init.rows(),
            init.cols(),
            w.num_slots
        )));
    }

    let mut inputs = x.tokens();
    if w.layer_norm {
        inputs = layer_norm_rows(&inputs);
    }
    let keys = matmul(&inputs, &w.w_k)?;
    let values = matmul(&inputs, &w.w_v)?;
    let keys_t = keys.transpose();
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();

    let mut slots = init.clone();
    let mut attention = Matrix::zeros(w.num_slots, x.num_tokens());
    for iteration in 1..=w.iterations {
        let slot_in = if w.layer_norm {
            layer_norm_rows(&slots)
        } else {
            slots.clone()
        };
        let queries = matmul(&slot_in, &w.w_q)?;
        let logits = matmul(&queries, &keys_t)?.map(|v| v * inv_sqrt_d);
        check_finite(&logits, iteration, "attention logits")?;

        let weights = match w.norm {
            AttentionNorm::SlotCompetition => {
                attention = softmax_rows(&logits.transpose(), 1.0)?.transpose();
                let mut data = Vec::with_capacity(attention.data().len());
                for row in attention.row_iter() {
                    let mass = row.iter().sum::<f64>() + ATTENTION_EPSILON;
                    data.extend(row.iter().map(|a| a / mass));
                }
                Matrix::from_raw(attention.rows(), attention.cols(), data)
            }
            AttentionNorm::KeyAxis => {
                attention = softmax_rows(&logits, 1.0)?;
                attention.clone()
            }
        };

        let updates = matmul(&weights, &values)?;
        let mut next = Vec::with_capacity(w.num_slots * d);
        for k in 0..w.num_slots {
            next.extend(gru_step(slots.row(k), updates.row(k), &w.gru)?);
        }
        slots = Matrix::from_raw(w.num_slots, d, next);
        check_finite(&slots, iteration, "slot update")?;
    }

    Ok(SlotSet { slots, attention })
}

/// Per-slot class logits, `K × M`.
pub fn slot_logits(slots: &SlotSet, c: &ClassifierWeights) -> Result<Matrix> {
    c.validate()?;
    if slots.slots.cols() != c.weight.rows() {
        return Err(OcoError::invalid(format!(
            "slot dimension {} does not match classifier input {}",
            slots.slots.cols(),
            c.weight.rows()
        )));
    }
    let mut logits = matmul(&slots.slots, &c.weight)?.into_data();
    let m = c.num_classes();
    for (i, v) in logits.iter_mut().enumerate() {
        *v += c.bias[i % m];
    }
    Ok(Matrix::from_raw(slots.num_slots(), m, logits))
}

/// Scene-level logits: the sum of the slot rows.
pub fn aggregate_logits(slot_logits: &Matrix) -> Vec<f64> {
    slot_logits.column_sums()
}

/// `−log softmax(logits)[label]`.
pub fn cross_entropy(agg_logits: &[f64], label: usize) -> Result<f64> {
    if label >= agg_logits.len() {
        return Err(OcoError::invalid(format!(
            "label {label} out of range for {} classes",
            agg_logits.len()
        )));
    }
    if agg_logits.iter().any(|v| !v.is_finite()) {
        return Err(OcoError::invalid("logits contain a non-finite value"));
    }
    let max = agg_logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + agg_logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok((lse - agg_logits[label]).max(0.0))
}

/// Euclidean distance between `x` and the sum of per-slot decoded grids.
pub fn reconstruction_loss(x: &FeatureMap, slots: &SlotSet, decoder: &[DenseLayer]) -> Result<f64> {
    let decoded = mlp_forward(&slots.slots, decoder)?;
    let grid = x.values().len();
    if decoded.cols() != grid {
        return Err(OcoError::invalid(format!(
            "decoder emits {} values per slot, feature map needs {grid}",
            decoded.cols()
        )));
    }
    let reconstruction = decoded.column_sums();
    Ok(x.values()
        .iter()
        .zip(&reconstruction)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt())
}

pub fn total_loss(ce: f64, aux: f64) -> f64 {
    ce + aux
}
