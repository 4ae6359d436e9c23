//! Slot logit records and the JSON-lines record file.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{OcoError, Result};
use crate::numerics::Matrix;
use crate::slot::aggregate_logits;

/// Tolerance for a stored aggregate against the column sum of slot logits.
pub const AGGREGATE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetTag {
    Id,
    Csid,
    Ood,
    Unlabeled,
}

impl DatasetTag {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetTag::Id => "id",
            DatasetTag::Csid => "csid",
            DatasetTag::Ood => "ood",
            DatasetTag::Unlabeled => "unlabeled",
        }
    }
}

impl fmt::Display for DatasetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DatasetTag {
    type Err = OcoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "id" => Ok(DatasetTag::Id),
            "csid" => Ok(DatasetTag::Csid),
            "ood" => Ok(DatasetTag::Ood),
            "unlabeled" => Ok(DatasetTag::Unlabeled),
            other => Err(OcoError::invalid(format!("unknown dataset tag {other:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    slot_logits: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    agg_logits: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
    tag: DatasetTag,
}

/// Per-sample `K × M` slot logits plus optional aggregate and label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRecord", into = "RawRecord")]
pub struct SlotLogitsRecord {
    id: String,
    slot_logits: Matrix,
    agg_logits: Option<Vec<f64>>,
    label: Option<usize>,
    tag: DatasetTag,
}

impl SlotLogitsRecord {
    pub fn new(
        id: impl Into<String>,
        slot_logits: Matrix,
        agg_logits: Option<Vec<f64>>,
        label: Option<usize>,
        tag: DatasetTag,
    ) -> Result<Self> {
        let id = id.into();
        let (k, m) = slot_logits.shape();
        if k == 0 || m == 0 {
            return Err(OcoError::invalid(format!(
                "record {id}: slot logits must be non-empty"
            )));
        }
        if let Some(agg) = &agg_logits {
            if agg.len() != m {
                return Err(OcoError::invalid(format!(
                    "record {id}: agg_logits has {} entries, expected {m}",
                    agg.len()
                )));
            }
            let sums = aggregate_logits(&slot_logits);
            if let Some(c) = (0..m).find(|&c| (sums[c] - agg[c]).abs() > AGGREGATE_TOLERANCE) {
                return Err(OcoError::invalid(format!(
                    "record {id}: agg_logits[{c}] = {} but slot logits sum to {}",
                    agg[c], sums[c]
                )));
            }
        }
        if let Some(y) = label {
            if y >= m {
                return Err(OcoError::invalid(format!(
                    "record {id}: label {y} out of range for {m} classes"
                )));
            }
        }
        Ok(SlotLogitsRecord {
            id,
            slot_logits,
            agg_logits,
            label,
            tag,
        })
    }

    /// Record whose aggregate is filled from the slot logits.
    pub fn with_aggregate(
        id: impl Into<String>,
        slot_logits: Matrix,
        label: Option<usize>,
        tag: DatasetTag,
    ) -> Result<Self> {
        let agg = aggregate_logits(&slot_logits);
        Self::new(id, slot_logits, Some(agg), label, tag)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn slot_logits(&self) -> &Matrix {
        &self.slot_logits
    }

    pub fn num_slots(&self) -> usize {
        self.slot_logits.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.slot_logits.cols()
    }

    pub fn stored_aggregate(&self) -> Option<&[f64]> {
        self.agg_logits.as_deref()
    }

    /// Stored aggregate if present, otherwise the column sum.
    pub fn aggregate(&self) -> Vec<f64> {
        self.agg_logits
            .clone()
            .unwrap_or_else(|| aggregate_logits(&self.slot_logits))
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn tag(&self) -> DatasetTag {
        self.tag
    }

    pub fn set_tag(&mut self, tag: DatasetTag) {
        self.tag = tag;
    }
}

impl TryFrom<RawRecord> for SlotLogitsRecord {
    type Error = OcoError;

    fn try_from(raw: RawRecord) -> Result<Self> {
        let logits = Matrix::from_rows(&raw.slot_logits)
            .map_err(|e| OcoError::invalid(format!("record {}: {e}", raw.id)))?;
        SlotLogitsRecord::new(raw.id, logits, raw.agg_logits, raw.label, raw.tag)
    }
}

impl From<SlotLogitsRecord> for RawRecord {
    fn from(r: SlotLogitsRecord) -> Self {
        RawRecord {
            slot_logits: r.slot_logits.to_rows(),
            id: r.id,
            agg_logits: r.agg_logits,
            label: r.label,
            tag: r.tag,
        }
    }
}

/// Reads a JSON-lines record stream. Blank lines are skipped; `K` and `M`
/// must be constant across the file.
pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<SlotLogitsRecord>> {
    let mut records: Vec<SlotLogitsRecord> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SlotLogitsRecord = serde_json::from_str(&line)
            .map_err(|e| OcoError::parse(format!("line {line_no}"), e.to_string()))?;
        if let Some(first) = records.first() {
            if record.slot_logits.shape() != first.slot_logits.shape() {
                return Err(OcoError::parse(
                    format!("line {line_no}"),
                    format!(
                        "record {} has shape {}x{}, file started with {}x{}",
                        record.id,
                        record.num_slots(),
                        record.num_classes(),
                        first.num_slots(),
                        first.num_classes()
                    ),
                ));
            }
        }
        records.push(record);
    }
    Ok(records)
}

pub fn write_records<W: Write>(mut writer: W, records: &[SlotLogitsRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r).map_err(|e| OcoError::invalid(e.to_string()))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}
