//! Threshold calibration and detection metrics.
//!
//! Convention: a higher score means "more in-distribution" and a sample is
//! accepted as an inlier when `score >= τ`.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{OcoError, Result};
use crate::record::DatasetTag;
use crate::scoring::{Method, Scenario, ScoredSample};

pub const DEFAULT_TARGET_TPR: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Id,
    Csid,
    Ood,
}

impl TryFrom<DatasetTag> for Role {
    type Error = OcoError;

    fn try_from(tag: DatasetTag) -> Result<Self> {
        match tag {
            DatasetTag::Id => Ok(Role::Id),
            DatasetTag::Csid => Ok(Role::Csid),
            DatasetTag::Ood => Ok(Role::Ood),
            DatasetTag::Unlabeled => {
                Err(OcoError::invalid("unlabeled samples cannot be evaluated"))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledScore {
    pub score: f64,
    pub role: Role,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Positives are ID; covariate-shifted ID is left out.
    #[default]
    Standard,
    /// Positives are ID plus covariate-shifted ID.
    FsOod,
}

impl EvalMode {
    pub fn is_positive(self, role: Role) -> Option<bool> {
        match (self, role) {
            (_, Role::Id) => Some(true),
            (_, Role::Ood) => Some(false),
            (EvalMode::Standard, Role::Csid) => None,
            (EvalMode::FsOod, Role::Csid) => Some(true),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::Standard => "standard",
            EvalMode::FsOod => "fs_ood",
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalMode {
    type Err = OcoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(EvalMode::Standard),
            "fs_ood" | "fs-ood" => Ok(EvalMode::FsOod),
            other => Err(OcoError::invalid(format!(
                "unknown evaluation mode {other:?}"
            ))),
        }
    }
}

fn check_target(target_tpr: f64) -> Result<()> {
    if target_tpr > 0.0 && target_tpr <= 1.0 {
        Ok(())
    } else {
        Err(OcoError::invalid(format!(
            "target TPR must lie in (0, 1], got {target_tpr}"
        )))
    }
}

fn check_scores(name: &str, scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(OcoError::invalid(format!("{name} scores are empty")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(OcoError::invalid(format!(
            "{name} scores contain a non-finite value"
        )));
    }
    Ok(())
}

fn descending(a: &f64, b: &f64) -> Ordering {
    b.total_cmp(a)
}

/// Largest `τ` such that at least `target_tpr` of the positives score `≥ τ`:
/// the positive at descending rank `⌈target_tpr·n⌉`.
pub fn calibrate_threshold(positive_scores: &[f64], target_tpr: f64) -> Result<f64> {
    check_scores("positive", positive_scores)?;
    check_target(target_tpr)?;
    let mut sorted = positive_scores.to_vec();
    sorted.sort_by(descending);
    let n = sorted.len();
    let reaches = |k: usize| k as f64 / n as f64 >= target_tpr;
    // ⌈target·n⌉, nudged so that k/n agrees with the floating-point comparison
    let mut k = ((target_tpr * n as f64).ceil() as usize).clamp(1, n);
    while k > 1 && reaches(k - 1) {
        k -= 1;
    }
    while k < n && !reaches(k) {
        k += 1;
    }
    Ok(sorted[k - 1])
}

/// Fraction of `scores` that are `≥ threshold`.
pub fn acceptance_rate(scores: &[f64], threshold: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().filter(|&&s| s >= threshold).count() as f64 / scores.len() as f64
}

/// False positive rate on negatives at the threshold calibrated on positives.
pub fn fpr_at_tpr(positives: &[f64], negatives: &[f64], target_tpr: f64) -> Result<f64> {
    check_scores("negative", negatives)?;
    let tau = calibrate_threshold(positives, target_tpr)?;
    Ok(acceptance_rate(negatives, tau))
}

/// Probability that a positive outscores a negative, ties counted half.
/// Computed from mid-ranks in `O(n log n)`.
pub fn auroc(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    check_scores("positive", positives)?;
    check_scores("negative", negatives)?;
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|&s| (s, true))
        .chain(negatives.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // sum of 1-based mid-ranks of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let mid_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = all[i..j].iter().filter(|(_, p)| *p).count();
        rank_sum += mid_rank * pos_in_group as f64;
        i = j;
    }
    let n_pos = positives.len() as f64;
    let n_neg = negatives.len() as f64;
    let wins = rank_sum - n_pos * (n_pos + 1.0) / 2.0;
    Ok(wins / (n_pos * n_neg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RoleCounts {
    pub id: usize,
    pub csid: usize,
    pub ood: usize,
}

impl RoleCounts {
    pub fn total(&self) -> usize {
        self.id + self.csid + self.ood
    }

    fn add(&mut self, role: Role) {
        match role {
            Role::Id => self.id += 1,
            Role::Csid => self.csid += 1,
            Role::Ood => self.ood += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub count: usize,
    /// `None` when the scenario holds no negatives, or no positives under recalibration.
    pub fpr95: Option<f64>,
    /// `None` unless the scenario holds both positives and negatives.
    pub auroc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: EvalMode,
    pub method: String,
    pub target_tpr: f64,
    pub threshold: f64,
    pub tpr_achieved: f64,
    pub fpr95: f64,
    pub auroc: f64,
    pub roles: RoleCounts,
    pub scenarios: BTreeMap<Scenario, ScenarioReport>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub mode: EvalMode,
    pub method: Method,
    pub target_tpr: f64,
    /// Calibrate a separate threshold inside each scenario instead of reusing the global one.
    pub per_scenario_threshold: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            mode: EvalMode::Standard,
            method: Method::Oco,
            target_tpr: DEFAULT_TARGET_TPR,
            per_scenario_threshold: false,
        }
    }
}

impl EvalOptions {
    pub fn new(mode: EvalMode, method: Method) -> Self {
        EvalOptions {
            mode,
            method,
            ..EvalOptions::default()
        }
    }
}

fn split_scores<'a>(
    samples: impl Iterator<Item = (&'a ScoredSample, Role, f64)>,
    mode: EvalMode,
) -> (Vec<f64>, Vec<f64>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (_, role, score) in samples {
        match mode.is_positive(role) {
            Some(true) => pos.push(score),
            Some(false) => neg.push(score),
            None => {}
        }
    }
    (pos, neg)
}

/// Global and per-scenario metrics for one scoring method.
pub fn evaluate(samples: &[ScoredSample], options: EvalOptions) -> Result<MetricsReport> {
    check_target(options.target_tpr)?;
    let mut rows = Vec::with_capacity(samples.len());
    let mut roles = RoleCounts::default();
    for s in samples {
        let role = Role::try_from(s.tag)
            .map_err(|_| OcoError::invalid(format!("sample {} is unlabeled", s.id)))?;
        let score = s.score(options.method).ok_or_else(|| {
            OcoError::invalid(format!("sample {} has no {} score", s.id, options.method))
        })?;
        if !score.is_finite() {
            return Err(OcoError::invalid(format!(
                "sample {} has a non-finite score",
                s.id
            )));
        }
        roles.add(role);
        rows.push((s, role, score));
    }

    let (pos, neg) = split_scores(rows.iter().copied(), options.mode);
    if pos.is_empty() {
        return Err(OcoError::invalid(format!(
            "no positive samples (role id{}) under mode {}",
            if options.mode == EvalMode::FsOod {
                " or csid"
            } else {
                ""
            },
            options.mode
        )));
    }
    if neg.is_empty() {
        return Err(OcoError::invalid(format!(
            "no negative samples (role ood) under mode {}",
            options.mode
        )));
    }
    let threshold = calibrate_threshold(&pos, options.target_tpr)?;
    let tpr_achieved = acceptance_rate(&pos, threshold);
    let fpr95 = acceptance_rate(&neg, threshold);
    let auroc_all = auroc(&pos, &neg)?;

    let mut scenarios = BTreeMap::new();
    for scenario in Scenario::ALL {
        let in_scenario: Vec<_> = rows
            .iter()
            .copied()
            .filter(|(s, _, _)| s.scenario == scenario)
            .collect();
        let (sp, sn) = split_scores(in_scenario.iter().copied(), options.mode);
        let fpr = if sn.is_empty() {
            None
        } else if options.per_scenario_threshold {
            if sp.is_empty() {
                None
            } else {
                Some(fpr_at_tpr(&sp, &sn, options.target_tpr)?)
            }
        } else {
            Some(acceptance_rate(&sn, threshold))
        };
        let auc = if sp.is_empty() || sn.is_empty() {
            None
        } else {
            Some(auroc(&sp, &sn)?)
        };
        scenarios.insert(
            scenario,
            ScenarioReport {
                count: in_scenario.len(),
                fpr95: fpr,
                auroc: auc,
            },
        );
    }

    Ok(MetricsReport {
        mode: options.mode,
        method: options.method.name().to_string(),
        target_tpr: options.target_tpr,
        threshold,
        tpr_achieved,
        fpr95,
        auroc: auroc_all,
        roles,
        scenarios,
    })
}
