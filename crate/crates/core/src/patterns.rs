//! Slot predictions, frequency sets and the training co-occurrence table.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{OcoError, Result};
use crate::numerics::Matrix;
use crate::record::SlotLogitsRecord;

pub const TABLE_FORMAT_VERSION: u32 = 1;

/// Per-slot argmax classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotPredictions {
    classes: Vec<usize>,
}

impl SlotPredictions {
    pub fn new(classes: Vec<usize>) -> Self {
        SlotPredictions { classes }
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn slot_predictions(slot_logits: &Matrix) -> Result<SlotPredictions> {
    if slot_logits.rows() == 0 || slot_logits.cols() == 0 {
        return Err(OcoError::invalid(
            "slot logits must have at least one slot and one class",
        ));
    }
    if slot_logits.data().iter().any(|v| !v.is_finite()) {
        return Err(OcoError::invalid("slot logits contain a non-finite value"));
    }
    Ok(SlotPredictions::new(
        slot_logits.row_iter().map(argmax).collect(),
    ))
}

/// Canonical multiset of `(class, count)` pairs, ascending by class.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<(usize, usize)>", into = "Vec<(usize, usize)>")]
pub struct FrequencySet {
    entries: Vec<(usize, usize)>,
}

impl FrequencySet {
    /// Validates canonical form: strictly increasing classes, positive counts.
    pub fn new(entries: Vec<(usize, usize)>) -> Result<Self> {
        if let Some(w) = entries.windows(2).find(|w| w[0].0 >= w[1].0) {
            return Err(OcoError::invalid(format!(
                "frequency set classes must be strictly increasing, found {} then {}",
                w[0].0, w[1].0
            )));
        }
        if let Some(&(c, _)) = entries.iter().find(|(_, n)| *n == 0) {
            return Err(OcoError::invalid(format!("class {c} has a zero count")));
        }
        Ok(FrequencySet { entries })
    }

    /// Builds the canonical set from unordered `(class, count)` pairs,
    /// merging repeated classes.
    pub fn from_counts(pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut counts = BTreeMap::new();
        for (c, n) in pairs {
            if n > 0 {
                *counts.entry(c).or_insert(0) += n;
            }
        }
        FrequencySet {
            entries: counts.into_iter().collect(),
        }
    }

    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    /// The unique-category set.
    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|&(c, _)| c)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sum of counts, i.e. the number of slots.
    pub fn total(&self) -> usize {
        self.entries.iter().map(|&(_, n)| n).sum()
    }

    pub fn count_of(&self, class: usize) -> usize {
        self.entries
            .binary_search_by_key(&class, |&(c, _)| c)
            .map_or(0, |i| self.entries[i].1)
    }

    /// Stable textual key, e.g. `"3:2,7:1"`.
    pub fn canonical_key(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for FrequencySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (c, n)) in self.entries.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{c}:{n}")?;
        }
        Ok(())
    }
}

impl TryFrom<Vec<(usize, usize)>> for FrequencySet {
    type Error = OcoError;

    fn try_from(entries: Vec<(usize, usize)>) -> Result<Self> {
        FrequencySet::new(entries)
    }
}

impl From<FrequencySet> for Vec<(usize, usize)> {
    fn from(f: FrequencySet) -> Self {
        f.entries
    }
}

pub fn frequency_set(c: &SlotPredictions) -> FrequencySet {
    FrequencySet::from_counts(c.classes().iter().map(|&class| (class, 1)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConfigurationKind {
    SingleCategory,
    MultiCategory,
}

pub fn classify_configuration(f: &FrequencySet) -> Result<ConfigurationKind> {
    match f.len() {
        0 => Err(OcoError::invalid(
            "empty frequency set has no configuration",
        )),
        1 => Ok(ConfigurationKind::SingleCategory),
        _ => Ok(ConfigurationKind::MultiCategory),
    }
}

/// How a test frequency set is matched against the table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatchMode {
    /// Same classes with the same counts.
    #[default]
    Exact,
    /// Same class set, counts ignored.
    CategorySet,
}

/// Multi-category frequency sets observed on training data, with supports.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoOccurrenceTable {
    num_slots: usize,
    num_classes: usize,
    patterns: BTreeMap<FrequencySet, u64>,
}

impl CoOccurrenceTable {
    pub fn new(num_slots: usize, num_classes: usize) -> Self {
        CoOccurrenceTable {
            num_slots,
            num_classes,
            patterns: BTreeMap::new(),
        }
    }

    pub fn num_slots(&self) -> usize {
        self.num_slots
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn patterns(&self) -> impl Iterator<Item = (&FrequencySet, u64)> {
        self.patterns.iter().map(|(f, &n)| (f, n))
    }

    pub fn support(&self, f: &FrequencySet) -> u64 {
        self.patterns.get(f).copied().unwrap_or(0)
    }

    pub fn total_support(&self) -> u64 {
        self.patterns.values().sum()
    }

    fn check_pattern(&self, f: &FrequencySet) -> Result<()> {
        if f.len() < 2 {
            return Err(OcoError::invalid(format!(
                "pattern {f} is not multi-category and cannot be stored"
            )));
        }
        if f.total() != self.num_slots {
            return Err(OcoError::invalid(format!(
                "pattern {f} has {} slots, table has {}",
                f.total(),
                self.num_slots
            )));
        }
        if let Some(c) = f.classes().find(|&c| c >= self.num_classes) {
            return Err(OcoError::invalid(format!(
                "pattern {f} uses class {c}, table has {} classes",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// Adds `support` observations of a multi-category pattern.
    pub fn insert(&mut self, f: FrequencySet, support: u64) -> Result<()> {
        self.check_pattern(&f)?;
        if support == 0 {
            return Err(OcoError::invalid(format!("pattern {f} has zero support")));
        }
        *self.patterns.entry(f).or_insert(0) += support;
        Ok(())
    }

    pub fn remove(&mut self, f: &FrequencySet) -> Option<u64> {
        self.patterns.remove(f)
    }

    /// Support-additive merge of a partial table over the same shape.
    pub fn merge(&mut self, other: CoOccurrenceTable) -> Result<()> {
        if (other.num_slots, other.num_classes) != (self.num_slots, self.num_classes) {
            return Err(OcoError::invalid(
                "cannot merge tables with different K or M",
            ));
        }
        for (f, n) in other.patterns {
            *self.patterns.entry(f).or_insert(0) += n;
        }
        Ok(())
    }

    /// Copy of the table keeping only patterns with support ≥ `min_support`.
    pub fn with_min_support(&self, min_support: u64) -> CoOccurrenceTable {
        CoOccurrenceTable {
            num_slots: self.num_slots,
            num_classes: self.num_classes,
            patterns: self
                .patterns
                .iter()
                .filter(|(_, &n)| n >= min_support)
                .map(|(f, &n)| (f.clone(), n))
                .collect(),
        }
    }

    pub fn contains(&self, f: &FrequencySet) -> bool {
        self.patterns.contains_key(f)
    }

    pub fn contains_with(&self, f: &FrequencySet, mode: MatchMode) -> bool {
        match mode {
            MatchMode::Exact => self.contains(f),
            MatchMode::CategorySet => self.patterns.keys().any(|p| p.classes().eq(f.classes())),
        }
    }

    /// Serializes to the versioned JSON table format.
    pub fn to_json(&self) -> String {
        let file = TableFile {
            version: TABLE_FORMAT_VERSION,
            num_slots: self.num_slots,
            num_classes: self.num_classes,
            patterns: self
                .patterns
                .iter()
                .map(|(f, &support)| PatternEntry {
                    entries: f.entries.clone(),
                    support,
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("table serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TableFile = serde_json::from_str(text).map_err(|e| {
            OcoError::parse(
                format!("line {}, column {}", e.line(), e.column()),
                e.to_string(),
            )
        })?;
        if file.version != TABLE_FORMAT_VERSION {
            return Err(OcoError::parse(
                "field version",
                format!(
                    "unsupported table version {}, expected {TABLE_FORMAT_VERSION}",
                    file.version
                ),
            ));
        }
        let mut table = CoOccurrenceTable::new(file.num_slots, file.num_classes);
        let mut previous: Option<FrequencySet> = None;
        for (i, p) in file.patterns.into_iter().enumerate() {
            let position = format!("patterns[{i}]");
            let f = FrequencySet::new(p.entries)
                .map_err(|e| OcoError::parse(&position, e.to_string()))?;
            if previous.as_ref().is_some_and(|prev| prev >= &f) {
                return Err(OcoError::parse(
                    &position,
                    "patterns must be unique and in canonical order",
                ));
            }
            table
                .insert(f.clone(), p.support)
                .map_err(|e| OcoError::parse(&position, e.to_string()))?;
            previous = Some(f);
        }
        Ok(table)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatternEntry {
    entries: Vec<(usize, usize)>,
    support: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableFile {
    version: u32,
    num_slots: usize,
    num_classes: usize,
    patterns: Vec<PatternEntry>,
}

pub fn save_table(table: &CoOccurrenceTable) -> Vec<u8> {
    table.to_json().into_bytes()
}

pub fn load_table(bytes: &[u8]) -> Result<CoOccurrenceTable> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        OcoError::parse(
            format!("byte {}", e.valid_up_to()),
            "table is not valid UTF-8",
        )
    })?;
    CoOccurrenceTable::from_json(text)
}

/// Folds training records into a table. Every record must carry `k` slots
/// over `m` classes; only multi-category patterns are counted.
pub fn build_table<'a, I>(training_records: I, k: usize, m: usize) -> Result<CoOccurrenceTable>
where
    I: IntoIterator<Item = &'a SlotLogitsRecord>,
{
    let mut table = CoOccurrenceTable::new(k, m);
    for record in training_records {
        if record.num_slots() != k {
            return Err(OcoError::invalid(format!(
                "record {} has {} slots, expected {k}",
                record.id(),
                record.num_slots()
            )));
        }
        if record.num_classes() != m {
            return Err(OcoError::invalid(format!(
                "record {} has {} classes, expected {m}",
                record.id(),
                record.num_classes()
            )));
        }
        let f = frequency_set(&slot_predictions(record.slot_logits())?);
        if classify_configuration(&f)? == ConfigurationKind::MultiCategory {
            table.insert(f, 1)?;
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::DatasetTag;
    use std::collections::HashMap;

    const CAT: usize = 0;
    const DOG: usize = 1;
    const CAMEL: usize = 2;
    const PENGUIN: usize = 3;

    fn fs(pairs: &[(usize, usize)]) -> FrequencySet {
        FrequencySet::from_counts(pairs.iter().copied())
    }

    fn record_from_classes(id: &str, classes: &[usize], m: usize) -> SlotLogitsRecord {
        let rows: Vec<Vec<f64>> = classes
            .iter()
            .map(|&c| (0..m).map(|j| if j == c { 2.0 } else { 0.0 }).collect())
            .collect();
        SlotLogitsRecord::with_aggregate(
            id,
            Matrix::from_rows(&rows).unwrap(),
            None,
            DatasetTag::Id,
        )
        .unwrap()
    }

    #[test]
    fn predictions_and_tie_break() {
        let m = Matrix::from_rows(&[vec![0.0, 0.1, 5.0], vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(slot_predictions(&m).unwrap().classes(), &[2, 2]);
        let tie = Matrix::row_vector(&[0.7, 0.7, 0.7]).unwrap();
        assert_eq!(slot_predictions(&tie).unwrap().classes(), &[0]);
        assert!(slot_predictions(&Matrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn predictions_match_linear_scan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let rows: Vec<Vec<f64>> = (0..6)
                .map(|_| (0..5).map(|_| rng.random_range(-3.0..3.0)).collect())
                .collect();
            let preds = slot_predictions(&Matrix::from_rows(&rows).unwrap()).unwrap();
            for (row, &c) in rows.iter().zip(preds.classes()) {
                let mut best = (f64::NEG_INFINITY, 0);
                for (j, &v) in row.iter().enumerate() {
                    if v > best.0 {
                        best = (v, j);
                    }
                }
                assert_eq!(c, best.1);
            }
        }
    }

    #[test]
    fn frequency_set_examples() {
        let single = frequency_set(&SlotPredictions::new(vec![CAT, CAT, CAT]));
        assert_eq!(single.entries(), &[(CAT, 3)]);
        let mixed = frequency_set(&SlotPredictions::new(vec![DOG, CAT, DOG]));
        assert_eq!(mixed.entries(), &[(CAT, 1), (DOG, 2)]);
        assert_eq!(mixed.total(), 3);
        assert_eq!(mixed.classes().collect::<Vec<_>>(), vec![CAT, DOG]);
    }

    #[test]
    fn frequency_set_matches_hash_count() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let preds: Vec<usize> = (0..6).map(|_| rng.random_range(0..5)).collect();
            let mut oracle: HashMap<usize, usize> = HashMap::new();
            for &c in &preds {
                *oracle.entry(c).or_default() += 1;
            }
            let f = frequency_set(&SlotPredictions::new(preds));
            assert_eq!(f.len(), oracle.len());
            for &(c, n) in f.entries() {
                assert_eq!(oracle[&c], n);
            }
        }
    }

    #[test]
    fn configuration_kinds() {
        assert_eq!(
            classify_configuration(&fs(&[(CAT, 3)])).unwrap(),
            ConfigurationKind::SingleCategory
        );
        assert_eq!(
            classify_configuration(&fs(&[(DOG, 2), (CAT, 1)])).unwrap(),
            ConfigurationKind::MultiCategory
        );
        assert!(classify_configuration(&fs(&[])).is_err());
        for a in 1..6 {
            let f = fs(&[(0, a), (1, 6 - a)]);
            assert_eq!(
                classify_configuration(&f).unwrap(),
                ConfigurationKind::MultiCategory
            );
        }
    }

    #[test]
    fn frequency_set_rejects_non_canonical() {
        assert!(FrequencySet::new(vec![(2, 1), (1, 1)]).is_err());
        assert!(FrequencySet::new(vec![(1, 1), (1, 1)]).is_err());
        assert!(FrequencySet::new(vec![(1, 0)]).is_err());
    }

    #[test]
    fn build_table_examples() {
        let singles: Vec<_> = (0..4)
            .map(|i| record_from_classes(&format!("s{i}"), &[DOG, DOG, DOG], 4))
            .collect();
        assert!(build_table(&singles, 3, 4).unwrap().is_empty());

        let twins = [
            record_from_classes("a", &[DOG, CAT, DOG], 4),
            record_from_classes("b", &[CAT, DOG, DOG], 4),
        ];
        let table = build_table(&twins, 3, 4).unwrap();
        assert_eq!(table.len(), 1);
        assert_eq!(table.support(&fs(&[(DOG, 2), (CAT, 1)])), 2);
    }

    #[test]
    fn build_table_names_offending_record() {
        let recs = [
            record_from_classes("ok", &[DOG, CAT, DOG], 4),
            record_from_classes("short", &[DOG, CAT], 4),
        ];
        let err = build_table(&recs, 3, 4).unwrap_err().to_string();
        assert!(err.contains("short"), "{err}");
    }

    #[test]
    fn contains_examples() {
        let mut table = CoOccurrenceTable::new(3, 4);
        table.insert(fs(&[(DOG, 2), (CAT, 1)]), 1).unwrap();
        assert!(table.contains(&fs(&[(DOG, 2), (CAT, 1)])));
        assert!(!table.contains(&fs(&[(PENGUIN, 2), (CAMEL, 1)])));
        assert!(!table.contains(&fs(&[(DOG, 1), (CAT, 2)])));
        assert!(table.contains_with(&fs(&[(DOG, 1), (CAT, 2)]), MatchMode::CategorySet));
        assert!(!table.contains_with(&fs(&[(DOG, 1), (CAMEL, 2)]), MatchMode::CategorySet));
    }

    #[test]
    fn insert_rejects_bad_patterns() {
        let mut table = CoOccurrenceTable::new(3, 4);
        assert!(table.insert(fs(&[(CAT, 3)]), 1).is_err());
        assert!(table.insert(fs(&[(CAT, 1), (DOG, 1)]), 1).is_err());
        assert!(table.insert(fs(&[(CAT, 1), (9, 2)]), 1).is_err());
        assert!(table.insert(fs(&[(CAT, 1), (DOG, 2)]), 0).is_err());
    }

    #[test]
    fn min_support_and_merge() {
        let mut a = CoOccurrenceTable::new(3, 4);
        a.insert(fs(&[(DOG, 2), (CAT, 1)]), 2).unwrap();
        a.insert(fs(&[(DOG, 1), (CAT, 2)]), 1).unwrap();
        assert_eq!(a.with_min_support(2).len(), 1);
        let mut b = CoOccurrenceTable::new(3, 4);
        b.insert(fs(&[(DOG, 1), (CAT, 2)]), 4).unwrap();
        a.merge(b).unwrap();
        assert_eq!(a.support(&fs(&[(DOG, 1), (CAT, 2)])), 5);
        assert!(a.merge(CoOccurrenceTable::new(2, 4)).is_err());
    }

    #[test]
    fn table_json_format() {
        let mut t = CoOccurrenceTable::new(3, 4);
        t.insert(fs(&[(DOG, 2), (CAT, 1)]), 2).unwrap();
        assert_eq!(
            t.to_json(),
            r#"{"version":1,"num_slots":3,"num_classes":4,"patterns":[{"entries":[[0,1],[1,2]],"support":2}]}"#
        );
        let empty = CoOccurrenceTable::new(6, 20);
        assert_eq!(load_table(&save_table(&empty)).unwrap(), empty);
        assert_eq!(load_table(&save_table(&t)).unwrap(), t);
    }

    #[test]
    fn load_rejects_malformed() {
        assert!(matches!(
            load_table(b"{\"version\":1"),
            Err(OcoError::Parse { .. })
        ));
        let wrong_version = r#"{"version":2,"num_slots":3,"num_classes":4,"patterns":[]}"#;
        let err = load_table(wrong_version.as_bytes())
            .unwrap_err()
            .to_string();
        assert!(err.contains("version"), "{err}");
        let unsorted = r#"{"version":1,"num_slots":3,"num_classes":4,"patterns":[{"entries":[[1,2],[0,1]],"support":1}]}"#;
        assert!(load_table(unsorted.as_bytes()).is_err());
        let single = r#"{"version":1,"num_slots":3,"num_classes":4,"patterns":[{"entries":[[1,3]],"support":1}]}"#;
        assert!(load_table(single.as_bytes()).is_err());
        let dup = r#"{"version":1,"num_slots":3,"num_classes":4,"patterns":[{"entries":[[0,1],[1,2]],"support":1},{"entries":[[0,1],[1,2]],"support":1}]}"#;
        assert!(load_table(dup.as_bytes()).is_err());
    }
}
