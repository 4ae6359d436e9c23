//! Independent reference implementations used as test oracles. They follow the
//! textbook definitions with plain loops and share no code with the library.

#![allow(dead_code)]

use std::collections::HashMap;

use oco::bundle::{BundleShape, WeightBundle};
use oco::dst::{Frame, MassFunction, Subset};
use oco::numerics::Matrix;
use oco::patterns::FrequencySet;
use oco::record::{DatasetTag, SlotLogitsRecord};
use oco::slot::{AttentionNorm, SlotAttentionWeights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::new(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-scale..scale))
            .collect(),
    )
    .unwrap()
}

/// Slot attention weights with random GRU biases and initializer.
pub fn random_slot_weights(
    seed: u64,
    channels: usize,
    d: usize,
    k: usize,
    iterations: usize,
) -> SlotAttentionWeights {
    let shape = BundleShape {
        input_channels: channels,
        slot_dim: d,
        num_slots: k,
        iterations,
        num_classes: 2,
        decoder_output: 0,
    };
    let mut w = WeightBundle::random(shape, seed).unwrap().slot;
    let mut r = rng(seed ^ 0xb1a5);
    for b in [
        &mut w.gru.bias_reset,
        &mut w.gru.bias_update,
        &mut w.gru.bias_candidate,
    ] {
        for v in b.iter_mut() {
            *v = r.random_range(-0.5..0.5);
        }
    }
    w.init_mean = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
    w.init_log_scale = (0..d).map(|_| r.random_range(-1.0..0.0)).collect();
    w.norm = AttentionNorm::SlotCompetition;
    w.layer_norm = false;
    w
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot_col(v: &[f64], m: &Matrix, col: usize) -> f64 {
    (0..v.len()).map(|i| v[i] * m.get(i, col)).sum()
}

/// Slot attention written out term by term: returns (slots, slot-axis attention).
pub fn scripted_forward(
    tokens: &[Vec<f64>],
    w: &SlotAttentionWeights,
    init: &[Vec<f64>],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = tokens.len();
    let k = init.len();
    let d = w.w_q.rows();
    let key: Vec<Vec<f64>> = tokens
        .iter()
        .map(|x| (0..d).map(|e| dot_col(x, &w.w_k, e)).collect())
        .collect();
    let val: Vec<Vec<f64>> = tokens
        .iter()
        .map(|x| (0..d).map(|e| dot_col(x, &w.w_v, e)).collect())
        .collect();
    let mut slots = init.to_vec();
    let mut attn = vec![vec![0.0; n]; k];
    for _ in 0..w.iterations {
        let q: Vec<Vec<f64>> = slots
            .iter()
            .map(|s| (0..d).map(|e| dot_col(s, &w.w_q, e)).collect())
            .collect();
        for j in 0..n {
            let logit: Vec<f64> = (0..k)
                .map(|i| (0..d).map(|e| q[i][e] * key[j][e]).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let top = logit.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logit.iter().map(|l| (l - top).exp()).sum();
            for i in 0..k {
                attn[i][j] = (logit[i] - top).exp() / z;
            }
        }
        let mut next = Vec::with_capacity(k);
        for i in 0..k {
            let total: f64 = attn[i].iter().sum::<f64>() + 1e-8;
            let u: Vec<f64> = (0..d)
                .map(|e| (0..n).map(|j| attn[i][j] / total * val[j][e]).sum())
                .collect();
            let h = &slots[i];
            let g = &w.gru;
            let mut out = vec![0.0; d];
            let r: Vec<f64> = (0..d)
                .map(|e| {
                    sig(dot_col(&u, &g.input_reset, e)
                        + dot_col(h, &g.state_reset, e)
                        + g.bias_reset[e])
                })
                .collect();
            let rh: Vec<f64> = (0..d).map(|e| r[e] * h[e]).collect();
            for e in 0..d {
                let z = sig(dot_col(&u, &g.input_update, e)
                    + dot_col(h, &g.state_update, e)
                    + g.bias_update[e]);
                let cand = (dot_col(&u, &g.input_candidate, e)
                    + dot_col(&rh, &g.state_candidate, e)
                    + g.bias_candidate[e])
                    .tanh();
                out[e] = (1.0 - z) * h[e] + z * cand;
            }
            next.push(out);
        }
        slots = next;
    }
    (slots, attn)
}

/// Random mass function on a frame of `n` elements with a few focal sets.
pub fn random_mass(rng: &mut ChaCha8Rng, n: usize) -> MassFunction {
    let frame = Frame::new(n).unwrap();
    let full = frame.full();
    let focal = rng.random_range(1..=4usize);
    let mut masses: HashMap<Subset, f64> = HashMap::new();
    for _ in 0..focal {
        let a: Subset = rng.random_range(1..=full);
        *masses.entry(a).or_insert(0.0) += rng.random_range(0.05..1.0);
    }
    let total: f64 = masses.values().sum();
    MassFunction::from_masses(frame, masses.into_iter().map(|(a, v)| (a, v / total)))
}

/// Dempster's rule by enumerating every pair of subsets.
pub fn brute_dempster(m1: &MassFunction, m2: &MassFunction, n: usize) -> Option<Vec<f64>> {
    let size = 1usize << n;
    let mut joint = vec![0.0; size];
    for b in 0..size {
        for c in 0..size {
            joint[b & c] += m1.mass(b as Subset) * m2.mass(c as Subset);
        }
    }
    let k = joint[0];
    if 1.0 - k <= 1e-12 {
        return None;
    }
    joint[0] = 0.0;
    Some(joint.iter().map(|v| v / (1.0 - k)).collect())
}

pub fn pairwise_auroc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut s = 0.0;
    for &p in pos {
        for &q in neg {
            s += if p > q {
                1.0
            } else if p == q {
                0.5
            } else {
                0.0
            };
        }
    }
    s / (pos.len() * neg.len()) as f64
}

/// Random record whose slot classes come from `classes`, noise on top.
pub fn record_from_classes(
    id: &str,
    classes: &[usize],
    m: usize,
    rng: &mut ChaCha8Rng,
) -> SlotLogitsRecord {
    let rows: Vec<Vec<f64>> = classes
        .iter()
        .map(|&c| {
            (0..m)
                .map(|j| if j == c { 3.0 } else { 0.0 } + rng.random_range(-0.5..0.5))
                .collect()
        })
        .collect();
    SlotLogitsRecord::with_aggregate(id, Matrix::from_rows(&rows).unwrap(), None, DatasetTag::Id)
        .unwrap()
}

/// Pattern dictionary built with plain loops: `"c:n,c:n"` keys of multi-class records.
pub fn brute_table(records: &[SlotLogitsRecord]) -> HashMap<String, u64> {
    let mut out = HashMap::new();
    for r in records {
        let mut counts: std::collections::BTreeMap<usize, usize> = Default::default();
        for row in r.slot_logits().row_iter() {
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            *counts.entry(best).or_insert(0) += 1;
        }
        if counts.len() >= 2 {
            let key = counts
                .iter()
                .map(|(c, n)| format!("{c}:{n}"))
                .collect::<Vec<_>>()
                .join(",");
            *out.entry(key).or_insert(0) += 1;
        }
    }
    out
}

/// Random composition of `k` slots over at most `max_classes` of `m` classes.
pub fn random_frequency_set(
    rng: &mut ChaCha8Rng,
    k: usize,
    m: usize,
    max_classes: usize,
) -> FrequencySet {
    let mut counts: HashMap<usize, usize> = HashMap::new();
    let pool: Vec<usize> = (0..max_classes.min(m))
        .map(|_| rng.random_range(0..m))
        .collect();
    for _ in 0..k {
        *counts
            .entry(pool[rng.random_range(0..pool.len())])
            .or_insert(0) += 1;
    }
    FrequencySet::from_counts(counts)
}
