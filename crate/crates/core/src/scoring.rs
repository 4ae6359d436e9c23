//! Scenario division and the per-scenario detection scores.
//!
//! A test sample's frequency set decides which score it receives:
//!
//! * `S1` (one predicted category): `P_t · p_max`
//! * `S2` (multi-category, seen in training): mean belief combination between
//!   the dominant category and every other category
//! * `S3` (multi-category, unseen): `p_max`
//!
//! All three land in `[0, 1]` and share one threshold. Higher means more
//! in-distribution.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OcoError, Result};
use crate::numerics::{log_sum_exp, softmax};
use crate::patterns::{
    frequency_set, slot_predictions, CoOccurrenceTable, FrequencySet, MatchMode,
};
use crate::record::{DatasetTag, SlotLogitsRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    /// All slots agree on one category.
    #[serde(rename = "S1")]
    Single,
    /// Multi-category pattern present in the training table.
    #[serde(rename = "S2")]
    Typical,
    /// Multi-category pattern absent from the training table.
    #[serde(rename = "S3")]
    Atypical,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Single, Scenario::Typical, Scenario::Atypical];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Single => "S1",
            Scenario::Typical => "S2",
            Scenario::Atypical => "S3",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = OcoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "S1" => Ok(Scenario::Single),
            "S2" => Ok(Scenario::Typical),
            "S3" => Ok(Scenario::Atypical),
            other => Err(OcoError::invalid(format!("unknown scenario {other:?}"))),
        }
    }
}

/// Scene-level and slot-level confidences of one record.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceSummary {
    /// Max softmax of the aggregated logits.
    pub scene_conf: f64,
    /// Max over slots of the slot's max softmax.
    pub slot_conf: f64,
    /// For every predicted class, the highest softmax probability among the
    /// slots whose argmax is that class.
    pub per_category: BTreeMap<usize, f64>,
}

pub fn confidence_summary(record: &SlotLogitsRecord) -> Result<ConfidenceSummary> {
    let logits = record.slot_logits();
    let predictions = slot_predictions(logits)?;
    let aggregate = record.aggregate();
    let scene_conf = softmax(&aggregate).into_iter().fold(0.0, f64::max);

    let mut slot_conf: f64 = 0.0;
    let mut per_category: BTreeMap<usize, f64> = BTreeMap::new();
    for (row, &class) in logits.row_iter().zip(predictions.classes()) {
        let p = softmax(row)[class];
        slot_conf = slot_conf.max(p);
        let entry = per_category.entry(class).or_insert(0.0);
        *entry = entry.max(p);
    }
    Ok(ConfidenceSummary {
        scene_conf,
        slot_conf,
        per_category,
    })
}

pub fn divide_scenario(f: &FrequencySet, table: &CoOccurrenceTable) -> Scenario {
    divide_scenario_with(f, table, MatchMode::Exact)
}

pub fn divide_scenario_with(
    f: &FrequencySet,
    table: &CoOccurrenceTable,
    mode: MatchMode,
) -> Scenario {
    if f.len() <= 1 {
        Scenario::Single
    } else if table.contains_with(f, mode) {
        Scenario::Typical
    } else {
        Scenario::Atypical
    }
}

/// `P_t · p_max`.
pub fn score_single(cs: &ConfidenceSummary) -> f64 {
    cs.scene_conf * cs.slot_conf
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(OcoError::invalid(format!(
            "{name} must lie in [0, 1], got {p}"
        )))
    }
}

/// Pattern likelihood plus ambiguous evidence:
/// `p·q + p·(1 − q) + (1 − p)·q`.
pub fn belief_combination(p_dom: f64, p_other: f64) -> Result<f64> {
    check_probability("dominant confidence", p_dom)?;
    check_probability("category confidence", p_other)?;
    let likelihood = p_dom * p_other;
    let ambiguous = p_dom * (1.0 - p_other) + (1.0 - p_dom) * p_other;
    Ok(likelihood + ambiguous)
}

/// Category with the largest per-category confidence; ties go to the lowest class.
pub fn dominant_category(cs: &ConfidenceSummary, f: &FrequencySet) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for c in f.classes() {
        let p = *cs
            .per_category
            .get(&c)
            .ok_or_else(|| OcoError::invalid(format!("no confidence recorded for category {c}")))?;
        if best.is_none_or(|(_, bp)| p > bp) {
            best = Some((c, p));
        }
    }
    best.map(|(c, _)| c)
        .ok_or_else(|| OcoError::invalid("frequency set is empty"))
}

/// Mean belief combination between the dominant category and each other category.
pub fn score_ambiguous(cs: &ConfidenceSummary, f: &FrequencySet) -> Result<f64> {
    if f.len() < 2 {
        return Err(OcoError::invalid(format!(
            "ambiguous score needs at least two categories, got {f}"
        )));
    }
    let dominant = dominant_category(cs, f)?;
    let p_dom = cs.per_category[&dominant];
    let mut total = 0.0;
    for c in f.classes().filter(|&c| c != dominant) {
        total += belief_combination(p_dom, cs.per_category[&c])?;
    }
    Ok(total / (f.len() - 1) as f64)
}

/// `p_max`.
pub fn score_unreliable(cs: &ConfidenceSummary) -> f64 {
    cs.slot_conf
}

/// Scenario and score of one record against a training table.
pub fn oco_score(record: &SlotLogitsRecord, table: &CoOccurrenceTable) -> Result<(Scenario, f64)> {
    oco_score_with(record, table, MatchMode::Exact)
}

pub fn oco_score_with(
    record: &SlotLogitsRecord,
    table: &CoOccurrenceTable,
    mode: MatchMode,
) -> Result<(Scenario, f64)> {
    if record.num_slots() != table.num_slots() || record.num_classes() != table.num_classes() {
        return Err(OcoError::invalid(format!(
            "record {} is {}x{}, table expects {}x{}",
            record.id(),
            record.num_slots(),
            record.num_classes(),
            table.num_slots(),
            table.num_classes()
        )));
    }
    let f = frequency_set(&slot_predictions(record.slot_logits())?);
    let cs = confidence_summary(record)?;
    let scenario = divide_scenario_with(&f, table, mode);
    let score = match scenario {
        Scenario::Single => score_single(&cs),
        Scenario::Typical => score_ambiguous(&cs, &f)?,
        Scenario::Atypical => score_unreliable(&cs),
    };
    Ok((scenario, score))
}

/// Post-hoc baselines computed on the aggregated logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    /// Max softmax probability.
    Msp,
    /// Max logit.
    MaxLogit,
    /// `log Σ exp(logits)`, the negated free energy.
    Energy,
}

impl Baseline {
    pub const ALL: [Baseline; 3] = [Baseline::Msp, Baseline::MaxLogit, Baseline::Energy];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Msp => "msp",
            Baseline::MaxLogit => "maxlogit",
            Baseline::Energy => "energy",
        }
    }

    pub fn score(self, aggregate: &[f64]) -> f64 {
        match self {
            Baseline::Msp => softmax(aggregate).into_iter().fold(0.0, f64::max),
            Baseline::MaxLogit => aggregate.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Baseline::Energy => log_sum_exp(aggregate),
        }
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Baseline {
    type Err = OcoError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "msp" => Ok(Baseline::Msp),
            "maxlogit" => Ok(Baseline::MaxLogit),
            "energy" => Ok(Baseline::Energy),
            other => Err(OcoError::invalid(format!("unknown baseline {other:?}"))),
        }
    }
}

pub fn baseline_scores(record: &SlotLogitsRecord) -> BTreeMap<Baseline, f64> {
    let aggregate = record.aggregate();
    Baseline::ALL
        .iter()
        .map(|&b| (b, b.score(&aggregate)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub id: String,
    pub scenario: Scenario,
    pub oco_score: f64,
    pub baselines: BTreeMap<Baseline, f64>,
    pub tag: DatasetTag,
}

impl ScoredSample {
    /// OCO score, or the named baseline.
    pub fn score(&self, method: Method) -> Option<f64> {
        match method {
            Method::Oco => Some(self.oco_score),
            Method::Baseline(b) => self.baselines.get(&b).copied(),
        }
    }
}

/// A detection score: OCO or one of the baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Oco,
    Baseline(Baseline),
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Oco,
        Method::Baseline(Baseline::Msp),
        Method::Baseline(Baseline::MaxLogit),
        Method::Baseline(Baseline::Energy),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Oco => "oco",
            Method::Baseline(b) => b.name(),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = OcoError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "oco" | "oco_score" => Ok(Method::Oco),
            other => other.parse().map(Method::Baseline),
        }
    }
}

/// Scores records against a fixed table.
#[derive(Debug, Clone)]
pub struct Scorer<'a> {
    table: &'a CoOccurrenceTable,
    match_mode: MatchMode,
}

impl<'a> Scorer<'a> {
    pub fn new(table: &'a CoOccurrenceTable) -> Self {
        Scorer {
            table,
            match_mode: MatchMode::Exact,
        }
    }

    pub fn match_mode(mut self, mode: MatchMode) -> Self {
        self.match_mode = mode;
        self
    }

    pub fn score(&self, record: &SlotLogitsRecord) -> Result<ScoredSample> {
        let (scenario, oco) = oco_score_with(record, self.table, self.match_mode)?;
        Ok(ScoredSample {
            id: record.id().to_string(),
            scenario,
            oco_score: oco,
            baselines: baseline_scores(record),
            tag: record.tag(),
        })
    }

    /// Scores every record in parallel; output order follows input order.
    pub fn score_all(&self, records: &[SlotLogitsRecord]) -> Result<Vec<ScoredSample>> {
        records.par_iter().map(|r| self.score(r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;
    use crate::patterns::FrequencySet;

    fn record(rows: &[Vec<f64>]) -> SlotLogitsRecord {
        SlotLogitsRecord::with_aggregate(
            "r",
            Matrix::from_rows(rows).unwrap(),
            None,
            DatasetTag::Id,
        )
        .unwrap()
    }

    fn summary(per: &[(usize, f64)]) -> ConfidenceSummary {
        let per_category: BTreeMap<usize, f64> = per.iter().copied().collect();
        ConfidenceSummary {
            scene_conf: 0.5,
            slot_conf: per_category.values().copied().fold(0.0, f64::max),
            per_category,
        }
    }

    #[test]
    fn confidence_single_slot() {
        let cs = confidence_summary(&record(&[vec![3f64.ln(), 0.0]])).unwrap();
        assert!((cs.scene_conf - 0.75).abs() < 1e-15);
        assert!((cs.slot_conf - 0.75).abs() < 1e-15);
        assert_eq!(cs.per_category.len(), 1);
    }

    #[test]
    fn confidence_identical_slots() {
        let row = vec![0.2, 1.7, -0.3];
        let cs = confidence_summary(&record(&[row.clone(), row.clone(), row.clone()])).unwrap();
        let single = softmax(&row)[1];
        assert!((cs.slot_conf - single).abs() < 1e-15);
    }

    #[test]
    fn confidence_matches_scripted_definitions() {
        let rows = vec![
            vec![2.0, 0.5, -1.0, 0.1],
            vec![0.3, 2.2, 0.0, 1.9],
            vec![1.5, -0.5, 0.2, 0.0],
        ];
        let cs = confidence_summary(&record(&rows)).unwrap();

        let probs = |r: &[f64]| {
            let z: f64 = r.iter().map(|v| v.exp()).sum();
            r.iter().map(|v| v.exp() / z).collect::<Vec<_>>()
        };
        let agg: Vec<f64> = (0..4).map(|c| rows.iter().map(|r| r[c]).sum()).collect();
        let p_t = probs(&agg).into_iter().fold(0.0, f64::max);
        let slot_max: Vec<f64> = rows
            .iter()
            .map(|r| probs(r).into_iter().fold(0.0, f64::max))
            .collect();
        assert!((cs.scene_conf - p_t).abs() < 1e-9);
        assert!((cs.slot_conf - slot_max.iter().copied().fold(0.0, f64::max)).abs() < 1e-9);
        // slots 0 and 2 vote class 0, slot 1 votes class 1
        assert!((cs.per_category[&0] - slot_max[0].max(slot_max[2])).abs() < 1e-9);
        assert!((cs.per_category[&1] - slot_max[1]).abs() < 1e-9);
    }

    #[test]
    fn scenario_examples() {
        let (cat, dog, camel, penguin) = (0, 1, 2, 3);
        let mut table = CoOccurrenceTable::new(3, 4);
        table
            .insert(FrequencySet::from_counts([(dog, 2), (cat, 1)]), 1)
            .unwrap();
        assert_eq!(
            divide_scenario(&FrequencySet::from_counts([(cat, 3)]), &table),
            Scenario::Single
        );
        assert_eq!(
            divide_scenario(&FrequencySet::from_counts([(dog, 2), (cat, 1)]), &table),
            Scenario::Typical
        );
        assert_eq!(
            divide_scenario(
                &FrequencySet::from_counts([(penguin, 2), (camel, 1)]),
                &table
            ),
            Scenario::Atypical
        );
        let empty = CoOccurrenceTable::new(3, 4);
        assert_eq!(
            divide_scenario(&FrequencySet::from_counts([(dog, 2), (cat, 1)]), &empty),
            Scenario::Atypical
        );
    }

    #[test]
    fn single_score_examples() {
        let mut cs = summary(&[(0, 1.0)]);
        cs.scene_conf = 1.0;
        assert_eq!(score_single(&cs), 1.0);
        let cs = ConfidenceSummary {
            scene_conf: 0.8,
            slot_conf: 0.9,
            per_category: BTreeMap::new(),
        };
        assert!((score_single(&cs) - 0.72).abs() < 1e-15);
    }

    #[test]
    fn belief_examples() {
        assert_eq!(belief_combination(1.0, 0.3).unwrap(), 1.0);
        assert_eq!(belief_combination(0.0, 1.0).unwrap(), 1.0);
        assert!((belief_combination(0.6, 0.5).unwrap() - 0.8).abs() < 1e-15);
        assert!(belief_combination(1.1, 0.5).is_err());
        assert!(belief_combination(0.5, -0.1).is_err());
        assert!(belief_combination(f64::NAN, 0.5).is_err());
    }

    #[test]
    fn ambiguous_examples() {
        let two = FrequencySet::from_counts([(0, 1), (1, 2)]);
        assert_eq!(
            score_ambiguous(&summary(&[(0, 1.0), (1, 1.0)]), &two).unwrap(),
            1.0
        );

        let three = FrequencySet::from_counts([(0, 1), (1, 1), (2, 1)]);
        let cs = summary(&[(0, 0.5), (1, 0.9), (2, 0.7)]);
        assert_eq!(dominant_category(&cs, &three).unwrap(), 1);
        assert!((score_ambiguous(&cs, &three).unwrap() - 0.96).abs() < 1e-12);

        let missing = summary(&[(0, 0.5)]);
        assert!(score_ambiguous(&missing, &two).is_err());
        assert!(score_ambiguous(&cs, &FrequencySet::from_counts([(1, 3)])).is_err());
    }

    #[test]
    fn ambiguous_matches_term_by_term_sum() {
        let four = FrequencySet::from_counts([(2, 1), (5, 2), (7, 2), (9, 1)]);
        let conf = [(2, 0.41), (5, 0.83), (7, 0.29), (9, 0.66)];
        let cs = summary(&conf);
        let p_dom = 0.83;
        let mut sum = 0.0;
        for &(_, p) in conf.iter().filter(|(c, _)| *c != 5) {
            sum += p_dom * p + p_dom * (1.0 - p) + (1.0 - p_dom) * p;
        }
        assert!((score_ambiguous(&cs, &four).unwrap() - sum / 3.0).abs() < 1e-12);
    }

    #[test]
    fn dominant_ties_go_to_lowest_class() {
        let f = FrequencySet::from_counts([(3, 1), (4, 1)]);
        assert_eq!(
            dominant_category(&summary(&[(3, 0.7), (4, 0.7)]), &f).unwrap(),
            3
        );
    }

    #[test]
    fn unreliable_examples() {
        let diffuse = ConfidenceSummary {
            scene_conf: 0.3,
            slot_conf: 0.2,
            per_category: BTreeMap::new(),
        };
        assert_eq!(score_unreliable(&diffuse), 0.2);
        let rows = vec![
            vec![0.0, 0.1, 0.0],
            vec![(0.99f64 / 0.005).ln(), 0.0, 0.0],
            vec![0.1, 0.0, 0.0],
        ];
        let cs = confidence_summary(&record(&rows)).unwrap();
        assert!((score_unreliable(&cs) - 0.99).abs() < 1e-12);
    }

    #[test]
    fn uniform_record_is_single_scenario() {
        let m = 5;
        let rows = vec![vec![0.0; m]; 4];
        let table = CoOccurrenceTable::new(4, m);
        let (scenario, score) = oco_score(&record(&rows), &table).unwrap();
        assert_eq!(scenario, Scenario::Single);
        assert!((score - 1.0 / 25.0).abs() < 1e-15);
    }

    #[test]
    fn typical_record_uses_ambiguous_branch() {
        // {(dog, 2), (cat, 1)} with dog = 1, cat = 0
        let rows = vec![
            vec![0.0, 2.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 3.0, 0.0],
        ];
        let rec = record(&rows);
        let mut table = CoOccurrenceTable::new(3, 3);
        table
            .insert(FrequencySet::from_counts([(1, 2), (0, 1)]), 1)
            .unwrap();
        let (scenario, score) = oco_score(&rec, &table).unwrap();
        assert_eq!(scenario, Scenario::Typical);

        let p_dog = softmax(&rows[2])[1];
        let p_cat = softmax(&rows[1])[0];
        let want = 1.0 - (1.0 - p_dog) * (1.0 - p_cat);
        assert!((score - want).abs() < 1e-12);

        table.remove(&FrequencySet::from_counts([(1, 2), (0, 1)]));
        let (scenario, score) = oco_score(&rec, &table).unwrap();
        assert_eq!(scenario, Scenario::Atypical);
        assert!((score - p_dog).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let rec = record(&[vec![0.0, 1.0]]);
        assert!(oco_score(&rec, &CoOccurrenceTable::new(2, 2)).is_err());
    }

    #[test]
    fn baseline_examples() {
        let rec = record(&[vec![0.0; 10]]);
        let b = baseline_scores(&rec);
        assert!((b[&Baseline::Msp] - 0.1).abs() < 1e-15);
        assert!((b[&Baseline::Energy] - 10f64.ln()).abs() < 1e-12);
        assert_eq!(b[&Baseline::MaxLogit], 0.0);

        let logits = vec![0.3, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = logits.iter().map(|v| v + 4.0).collect();
        let b0 = baseline_scores(&record(std::slice::from_ref(&logits)));
        let b1 = baseline_scores(&record(&[shifted]));
        assert!((b0[&Baseline::Msp] - b1[&Baseline::Msp]).abs() < 1e-12);
        assert!((b1[&Baseline::MaxLogit] - b0[&Baseline::MaxLogit] - 4.0).abs() < 1e-12);
        assert!((b1[&Baseline::Energy] - b0[&Baseline::Energy] - 4.0).abs() < 1e-12);

        let z: f64 = logits.iter().map(|v| v.exp()).sum();
        assert!((b0[&Baseline::Msp] - 2.5f64.exp() / z).abs() < 1e-9);
        assert!((b0[&Baseline::Energy] - z.ln()).abs() < 1e-9);
    }

    #[test]
    fn method_names_parse() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("she".parse::<Method>().is_err());
    }

    #[test]
    fn scorer_preserves_order() {
        let table = CoOccurrenceTable::new(1, 3);
        let recs: Vec<_> = (0..50)
            .map(|i| {
                SlotLogitsRecord::with_aggregate(
                    format!("r{i}"),
                    Matrix::row_vector(&[i as f64 * 0.1, 0.0, 1.0]).unwrap(),
                    None,
                    DatasetTag::Ood,
                )
                .unwrap()
            })
            .collect();
        let scored = Scorer::new(&table).score_all(&recs).unwrap();
        for (i, s) in scored.iter().enumerate() {
            assert_eq!(s.id, format!("r{i}"));
        }
    }
}
