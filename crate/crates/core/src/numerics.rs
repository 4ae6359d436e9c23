//! Dense row-major linear algebra for forward-only inference.
//!
//! Everything here is a pure function over immutable values. Sizes are
//! desk-scale (a few thousand rows, a few hundred columns), so the naive
//! `i-k-j` product is fast enough and keeps the arithmetic order fixed.

use serde::{Deserialize, Serialize};

use crate::error::{OcoError, Result};

/// Row-major dense matrix of finite `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(OcoError::invalid(format!(
                "matrix data has {} values, expected {rows}x{cols} = {}",
                data.len(),
                rows * cols
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(OcoError::invalid(format!(
                "matrix entry ({}, {}) is not finite",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != cols) {
            return Err(OcoError::invalid(format!(
                "row {i} has {} columns, expected {cols}",
                rows[i].len()
            )));
        }
        Matrix::new(rows.len(), cols, rows.concat())
    }

    /// Single-row matrix.
    pub fn row_vector(values: &[f64]) -> Result<Self> {
        Matrix::new(1, values.len(), values.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, and a zero-column matrix has no data anyway
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.row_iter().map(<[f64]>::to_vec).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Sum of each column.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for row in self.row_iter() {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        sums
    }

    /// Rows gathered in the given order.
    pub fn select_rows(&self, order: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(order.len() * self.cols);
        for &i in order {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: order.len(),
            cols: self.cols,
            data,
        }
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    pub(crate) fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Standard matrix product `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(OcoError::invalid(format!(
            "matmul dimension mismatch: {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = vec![0.0; a.rows * b.cols];
    for i in 0..a.rows {
        let out_row = &mut out[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
    Ok(Matrix::from_raw(a.rows, b.cols, out))
}

/// Softmax of a single slice with max subtraction.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `log Σ exp(values)` computed around the maximum.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Row-wise softmax of `m / temperature`.
pub fn softmax_rows(m: &Matrix, temperature: f64) -> Result<Matrix> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(OcoError::invalid(format!(
            "softmax temperature must be positive and finite, got {temperature}"
        )));
    }
    if m.data.iter().any(|v| !v.is_finite()) {
        return Err(OcoError::invalid(
            "softmax input contains a non-finite value",
        ));
    }
    let mut data = Vec::with_capacity(m.data.len());
    for row in m.row_iter() {
        let scaled: Vec<f64> = row.iter().map(|v| v / temperature).collect();
        data.extend(softmax(&scaled));
    }
    Ok(Matrix::from_raw(m.rows, m.cols, data))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gated recurrent unit parameters for a `d`-dimensional state.
///
/// Vectors are treated as rows, so a gate pre-activation is
/// `input · W_i* + state · W_h* + b_*`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruWeights {
    pub input_reset: Matrix,
    pub input_update: Matrix,
    pub input_candidate: Matrix,
    pub state_reset: Matrix,
    pub state_update: Matrix,
    pub state_candidate: Matrix,
    pub bias_reset: Vec<f64>,
    pub bias_update: Vec<f64>,
    pub bias_candidate: Vec<f64>,
}

impl GruWeights {
    pub fn zeros(d: usize) -> Self {
        GruWeights {
            input_reset: Matrix::zeros(d, d),
            input_update: Matrix::zeros(d, d),
            input_candidate: Matrix::zeros(d, d),
            state_reset: Matrix::zeros(d, d),
            state_update: Matrix::zeros(d, d),
            state_candidate: Matrix::zeros(d, d),
            bias_reset: vec![0.0; d],
            bias_update: vec![0.0; d],
            bias_candidate: vec![0.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.input_reset.rows()
    }

    pub fn matrices(&self) -> [&Matrix; 6] {
        [
            &self.input_reset,
            &self.input_update,
            &self.input_candidate,
            &self.state_reset,
            &self.state_update,
            &self.state_candidate,
        ]
    }

    pub fn biases(&self) -> [&Vec<f64>; 3] {
        [&self.bias_reset, &self.bias_update, &self.bias_candidate]
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        for (i, m) in self.matrices().into_iter().enumerate() {
            if m.shape() != (d, d) {
                return Err(OcoError::invalid(format!(
                    "GRU matrix {i} is {}x{}, expected {d}x{d}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        for (i, b) in self.biases().into_iter().enumerate() {
            if b.len() != d {
                return Err(OcoError::invalid(format!(
                    "GRU bias {i} has length {}, expected {d}",
                    b.len()
                )));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(OcoError::invalid(format!("GRU bias {i} is not finite")));
            }
        }
        Ok(())
    }
}

fn vec_mat(v: &[f64], m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols];
    for (k, vk) in v.iter().enumerate() {
        for (o, mkj) in out.iter_mut().zip(m.row(k)) {
            *o += vk * mkj;
        }
    }
    out
}

/// One GRU update: `h' = (1 − z)∘h + z∘ĥ` with
/// `z = σ(x·W_iz + h·W_hz + b_z)`, `r = σ(x·W_ir + h·W_hr + b_r)` and
/// `ĥ = tanh(x·W_in + (r∘h)·W_hn + b_n)`.
pub fn gru_step(state: &[f64], input: &[f64], w: &GruWeights) -> Result<Vec<f64>> {
    w.validate()?;
    let d = w.dim();
    if state.len() != d || input.len() != d {
        return Err(OcoError::invalid(format!(
            "GRU expects state and input of length {d}, got {} and {}",
            state.len(),
            input.len()
        )));
    }

    let xr = vec_mat(input, &w.input_reset);
    let hr = vec_mat(state, &w.state_reset);
    let reset: Vec<f64> = (0..d)
        .map(|j| sigmoid(xr[j] + hr[j] + w.bias_reset[j]))
        .collect();

    let xz = vec_mat(input, &w.input_update);
    let hz = vec_mat(state, &w.state_update);
    let update: Vec<f64> = (0..d)
        .map(|j| sigmoid(xz[j] + hz[j] + w.bias_update[j]))
        .collect();

    let gated: Vec<f64> = state.iter().zip(&reset).map(|(h, r)| h * r).collect();
    let xn = vec_mat(input, &w.input_candidate);
    let hn = vec_mat(&gated, &w.state_candidate);
    let candidate: Vec<f64> = (0..d)
        .map(|j| (xn[j] + hn[j] + w.bias_candidate[j]).tanh())
        .collect();

    Ok((0..d)
        .map(|j| (1.0 - update[j]) * state[j] + update[j] * candidate[j])
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Activation::Linear => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
            Activation::Sigmoid => 3,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Linear),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Tanh),
            3 => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

/// Affine layer `y = act(x·W + b)` with `W` of shape `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.cols() {
            return Err(OcoError::invalid(format!(
                "layer bias has length {}, weight has {} outputs",
                bias.len(),
                weight.cols()
            )));
        }
        Ok(DenseLayer {
            weight,
            bias,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Applies the layers in sequence to every row of `input`.
pub fn mlp_forward(input: &Matrix, layers: &[DenseLayer]) -> Result<Matrix> {
    let mut current = input.clone();
    for (i, layer) in layers.iter().enumerate() {
        if layer.bias.len() != layer.output_dim() {
            return Err(OcoError::invalid(format!(
                "layer {i}: bias length mismatch"
            )));
        }
        let mut out = matmul(&current, &layer.weight)
            .map_err(|e| OcoError::invalid(format!("layer {i}: {e}")))?;
        let cols = out.cols;
        for (idx, v) in out.data.iter_mut().enumerate() {
            *v = layer.activation.apply(*v + layer.bias[idx % cols]);
        }
        current = out;
    }
    Ok(current)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    fn naive_product(a: &Matrix, b: &Matrix) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; b.cols()]; a.rows()];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                for k in 0..a.cols() {
                    *cell += a.get(i, k) * b.get(k, j);
                }
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_projector() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&Matrix::identity(2), &m).unwrap(), m);

        let p = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        assert_eq!(
            matmul(&p, &b).unwrap().to_rows(),
            vec![vec![5.0, 6.0], vec![0.0, 0.0]]
        );
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 3, 4);
        let b = random_matrix(&mut rng, 4, 2);
        let got = matmul(&a, &b).unwrap();
        let want = naive_product(&a, &b);
        for i in 0..3 {
            for j in 0..2 {
                assert!((got.get(i, j) - want[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = Matrix::zeros(2, 3);
        assert!(matches!(matmul(&a, &a), Err(OcoError::InvalidInput(_))));
    }

    #[test]
    fn matrix_rejects_bad_data() {
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn softmax_examples() {
        let m = Matrix::from_rows(&[vec![0.0, 0.0, 0.0], vec![0.0, 3f64.ln(), 0.0]]).unwrap();
        let s = softmax_rows(&m, 1.0).unwrap();
        for v in s.row(0) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let analytic = softmax(&[0.0, 3f64.ln()]);
        assert!((analytic[0] - 0.25).abs() < 1e-15);
        assert!((analytic[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_large_values_stay_finite() {
        let m = Matrix::row_vector(&[1000.0, 1001.0]).unwrap();
        let s = softmax_rows(&m, 1.0).unwrap();
        // shift-invariance oracle: same as softmax of [-1, 0]
        let e = (-1f64).exp();
        let oracle = [e / (1.0 + e), 1.0 / (1.0 + e)];
        assert!((s.get(0, 0) - oracle[0]).abs() < 1e-12);
        assert!((s.get(0, 1) - oracle[1]).abs() < 1e-12);
        assert!((s.get(0, 0) - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn softmax_rejects_bad_temperature() {
        let m = Matrix::row_vector(&[1.0]).unwrap();
        assert!(softmax_rows(&m, 0.0).is_err());
        assert!(softmax_rows(&m, -1.0).is_err());
    }

    #[test]
    fn gru_zero_weights() {
        let w = GruWeights::zeros(3);
        let h = [0.4, -1.0, 2.0];
        let out = gru_step(&h, &[0.0; 3], &w).unwrap();
        for (o, hv) in out.iter().zip(h) {
            assert!((o - 0.5 * hv).abs() < 1e-15);
        }
        assert_eq!(gru_step(&[0.0; 3], &[0.0; 3], &w).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn gru_matches_scalar_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = 3;
        let mut w = GruWeights::zeros(d);
        w.input_reset = random_matrix(&mut rng, d, d);
        w.input_update = random_matrix(&mut rng, d, d);
        w.input_candidate = random_matrix(&mut rng, d, d);
        w.state_reset = random_matrix(&mut rng, d, d);
        w.state_update = random_matrix(&mut rng, d, d);
        w.state_candidate = random_matrix(&mut rng, d, d);
        w.bias_reset = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        w.bias_update = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        w.bias_candidate = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();

        let got = gru_step(&h, &x, &w).unwrap();
        for j in 0..d {
            let mut z = w.bias_update[j];
            for k in 0..d {
                z += x[k] * w.input_update.get(k, j) + h[k] * w.state_update.get(k, j);
            }
            let r_all: Vec<f64> = (0..d)
                .map(|m| {
                    let mut acc = w.bias_reset[m];
                    for k in 0..d {
                        acc += x[k] * w.input_reset.get(k, m) + h[k] * w.state_reset.get(k, m);
                    }
                    1.0 / (1.0 + (-acc).exp())
                })
                .collect();
            let z = 1.0 / (1.0 + (-z).exp());
            let mut n = w.bias_candidate[j];
            for k in 0..d {
                n += x[k] * w.input_candidate.get(k, j)
                    + r_all[k] * h[k] * w.state_candidate.get(k, j);
            }
            let want = (1.0 - z) * h[j] + z * n.tanh();
            assert!(
                (got[j] - want).abs() < 1e-12,
                "unit {j}: {} vs {want}",
                got[j]
            );
        }
    }

    #[test]
    fn gru_closed_update_gate_keeps_state() {
        let mut w = GruWeights::zeros(2);
        w.bias_update = vec![-50.0, -50.0];
        w.input_candidate = Matrix::identity(2);
        let h = [0.3, -0.7];
        let out = gru_step(&h, &[5.0, 5.0], &w).unwrap();
        for (o, hv) in out.iter().zip(h) {
            assert!((o - hv).abs() < 1e-6);
        }
    }

    #[test]
    fn gru_rejects_dimension_mismatch() {
        let w = GruWeights::zeros(2);
        assert!(gru_step(&[0.0; 3], &[0.0; 2], &w).is_err());
    }

    #[test]
    fn mlp_trivial_layers() {
        let x = Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap();
        let id = DenseLayer::new(Matrix::identity(2), vec![0.0, 0.0], Activation::Linear).unwrap();
        assert_eq!(mlp_forward(&x, &[id]).unwrap(), x);

        let zero =
            DenseLayer::new(Matrix::zeros(2, 3), vec![1.0, 2.0, 3.0], Activation::Linear).unwrap();
        let out = mlp_forward(&x, &[zero]).unwrap();
        for row in out.row_iter() {
            assert_eq!(row, &[1.0, 2.0, 3.0]);
        }
    }

    #[test]
    fn mlp_matches_composed_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_matrix(&mut rng, 4, 3);
        let w1 = random_matrix(&mut rng, 3, 5);
        let b1: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w2 = random_matrix(&mut rng, 5, 2);
        let b2: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let layers = [
            DenseLayer::new(w1.clone(), b1.clone(), Activation::Tanh).unwrap(),
            DenseLayer::new(w2.clone(), b2.clone(), Activation::Linear).unwrap(),
        ];
        let got = mlp_forward(&x, &layers).unwrap();

        let hidden = naive_product(&x, &w1);
        let hidden: Vec<Vec<f64>> = hidden
            .into_iter()
            .map(|r| r.iter().zip(&b1).map(|(v, b)| (v + b).tanh()).collect())
            .collect();
        let hidden = Matrix::from_rows(&hidden).unwrap();
        let out = naive_product(&hidden, &w2);
        for i in 0..4 {
            for j in 0..2 {
                assert!((got.get(i, j) - (out[i][j] + b2[j])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mlp_rejects_chain_mismatch() {
        let x = Matrix::zeros(1, 2);
        let layer = DenseLayer::new(Matrix::zeros(3, 1), vec![0.0], Activation::Relu).unwrap();
        assert!(mlp_forward(&x, &[layer]).is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn row_strategy() -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(-800.0f64..800.0, 1..8)
        }

        proptest! {
            #[test]
            fn softmax_rows_normalized(row in row_strategy()) {
                let m = Matrix::row_vector(&row).unwrap();
                let s = softmax_rows(&m, 1.0).unwrap();
                let total: f64 = s.row(0).iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
                prop_assert!(s.row(0).iter().all(|&v| v >= 0.0));
            }

            #[test]
            fn softmax_shift_invariant(row in row_strategy(), c in -100.0f64..100.0) {
                let a = softmax_rows(&Matrix::row_vector(&row).unwrap(), 1.0).unwrap();
                let shifted: Vec<f64> = row.iter().map(|v| v + c).collect();
                let b = softmax_rows(&Matrix::row_vector(&shifted).unwrap(), 1.0).unwrap();
                for (x, y) in a.data().iter().zip(b.data()) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }

            #[test]
            fn matmul_associative(seed in any::<u64>()) {
                use rand::{Rng, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let (p, q, r, s) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5));
                let mut mk = |rows: usize, cols: usize| {
                    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
                };
                let a = mk(p, q);
                let b = mk(q, r);
                let c = mk(r, s);
                let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
                let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
                for (x, y) in left.data().iter().zip(right.data()) {
                    prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0));
                }
            }
        }
    }
}
