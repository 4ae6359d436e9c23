//! Seeded synthetic multi-object benchmark.
//!
//! Records are produced by an oracle slot classifier instead of a network:
//! each slot carries one object class, the logit row puts
//! `ln(p·(M−1)/(1−p))` on that class and zero elsewhere (so the slot's max
//! softmax is exactly `p`), and Gaussian noise is added to every logit.
//!
//! * ID: a pattern from the allowed ID pattern graph, confident slots.
//! * CSID: ID patterns with degraded confidence (covariate shift).
//! * near-OOD: an ID pattern with one object swapped for an unseen class,
//!   which the oracle confuses with its nearest ID class at moderate confidence.
//! * far-OOD: class combinations absent from the graph with low confidence.
//!
//! Every record draws from its own ChaCha stream keyed by `(seed, split, index)`,
//! so generation is order-independent.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{OcoError, Result};
use crate::evaluation::{evaluate, EvalMode, EvalOptions, MetricsReport};
use crate::numerics::Matrix;
use crate::patterns::{
    build_table, frequency_set, slot_predictions, CoOccurrenceTable, FrequencySet,
};
use crate::record::{DatasetTag, SlotLogitsRecord};
use crate::scoring::{Method, Scenario, ScoredSample, Scorer};

/// Upper clamp on slot confidences so logits stay finite.
pub const MAX_CONFIDENCE: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    IdTrain,
    IdTest,
    Csid,
    NearOod,
    FarOod,
}

impl Split {
    pub const TEST_SPLITS: [Split; 4] = [Split::IdTest, Split::Csid, Split::NearOod, Split::FarOod];

    pub fn name(self) -> &'static str {
        match self {
            Split::IdTrain => "id_train",
            Split::IdTest => "id_test",
            Split::Csid => "csid",
            Split::NearOod => "near_ood",
            Split::FarOod => "far_ood",
        }
    }

    pub fn tag(self) -> DatasetTag {
        match self {
            Split::IdTrain | Split::IdTest => DatasetTag::Id,
            Split::Csid => DatasetTag::Csid,
            Split::NearOod | Split::FarOod => DatasetTag::Ood,
        }
    }

    fn salt(self) -> u64 {
        match self {
            Split::IdTrain => 0x001d_7a11,
            Split::IdTest => 0x001d_7e57,
            Split::Csid => 0xc51d,
            Split::NearOod => 0x4ea2,
            Split::FarOod => 0xfa2,
        }
    }
}

/// An unseen class and the ID class the oracle mistakes it for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NearConfusion {
    /// Unseen class index, in `M..M + num_unseen`.
    pub unseen: usize,
    /// ID class reported for it.
    pub nearest: usize,
    /// Mean slot confidence on the reported class.
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    /// Number of ID classes `M`; unseen classes follow at `M..`.
    pub num_classes: usize,
    pub num_unseen: usize,
    pub num_slots: usize,
    /// Frequency sets an ID scene can produce; counts sum to `num_slots`.
    pub id_pattern_graph: Vec<FrequencySet>,
    pub near_confusion: Vec<NearConfusion>,
    /// Explicit near-OOD compositions, which may contain unseen classes.
    /// Empty means: take an ID pattern and swap one of its objects.
    pub near_pattern_graph: Vec<FrequencySet>,
    pub id_confidence: f64,
    pub csid_confidence: f64,
    pub far_confidence: f64,
    /// Standard deviation of per-slot confidence draws around each mean.
    pub confidence_spread: f64,
    /// Standard deviation of the Gaussian noise added to every logit.
    pub noise_sigma: f64,
    pub train_samples: usize,
    pub test_samples: usize,
    pub seed: u64,
    /// Draw the near- and far-OOD splits from the ID generator (tagged OOD).
    pub degenerate: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        SceneModel::default().config(SceneModel::REFERENCE_SLOTS)
    }
}

fn field_error(path: impl AsRef<str>, msg: impl AsRef<str>) -> OcoError {
    OcoError::invalid(format!("{}: {}", path.as_ref(), msg.as_ref()))
}

impl GeneratorConfig {
    /// Checks every field; errors name the offending field path.
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(field_error("num_classes", "must be at least 2"));
        }
        if self.num_slots == 0 {
            return Err(field_error("num_slots", "must be at least 1"));
        }
        if self.id_pattern_graph.is_empty() {
            return Err(field_error("id_pattern_graph", "must not be empty"));
        }
        for (i, f) in self.id_pattern_graph.iter().enumerate() {
            if f.total() != self.num_slots {
                return Err(field_error(
                    format!("id_pattern_graph[{i}]"),
                    format!(
                        "counts sum to {}, expected num_slots = {}",
                        f.total(),
                        self.num_slots
                    ),
                ));
            }
            if let Some(c) = f.classes().find(|&c| c >= self.num_classes) {
                return Err(field_error(
                    format!("id_pattern_graph[{i}]"),
                    format!("class {c} is not an ID class"),
                ));
            }
        }
        for (i, f) in self.near_pattern_graph.iter().enumerate() {
            if f.total() != self.num_slots {
                return Err(field_error(
                    format!("near_pattern_graph[{i}]"),
                    format!(
                        "counts sum to {}, expected num_slots = {}",
                        f.total(),
                        self.num_slots
                    ),
                ));
            }
            if let Some(c) = f
                .classes()
                .find(|&c| c >= self.num_classes && self.confusion_for(c).is_none())
            {
                return Err(field_error(
                    format!("near_pattern_graph[{i}]"),
                    format!("class {c} has no near_confusion entry"),
                ));
            }
        }
        for (i, nc) in self.near_confusion.iter().enumerate() {
            let path = format!("near_confusion[{i}]");
            if nc.unseen < self.num_classes || nc.unseen >= self.num_classes + self.num_unseen {
                return Err(field_error(
                    format!("{path}.unseen"),
                    "must be an unseen class index",
                ));
            }
            if nc.nearest >= self.num_classes {
                return Err(field_error(
                    format!("{path}.nearest"),
                    "must be an ID class index",
                ));
            }
            if !(nc.confidence > 0.0 && nc.confidence <= 1.0) {
                return Err(field_error(
                    format!("{path}.confidence"),
                    "must lie in (0, 1]",
                ));
            }
        }
        for (name, v) in [
            ("id_confidence", self.id_confidence),
            ("csid_confidence", self.csid_confidence),
            ("far_confidence", self.far_confidence),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(field_error(name, format!("must lie in (0, 1], got {v}")));
            }
        }
        for (name, v) in [
            ("confidence_spread", self.confidence_spread),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(field_error(
                    name,
                    format!("must be a non-negative number, got {v}"),
                ));
            }
        }
        Ok(())
    }

    fn rng(&self, split: Split, index: usize) -> ChaCha8Rng {
        let key = splitmix64(splitmix64(self.seed ^ split.salt().rotate_left(32)) ^ index as u64);
        ChaCha8Rng::seed_from_u64(key)
    }

    fn draw_confidence(&self, rng: &mut ChaCha8Rng, mean: f64) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        (mean + self.confidence_spread * z).clamp(1.0 / self.num_classes as f64, MAX_CONFIDENCE)
    }

    /// Logit row for a slot of `class` at confidence `p`, plus noise.
    fn slot_row(&self, rng: &mut ChaCha8Rng, class: usize, p: f64) -> Vec<f64> {
        let m = self.num_classes;
        let mut row = vec![0.0; m];
        row[class] = (p * (m - 1) as f64 / (1.0 - p)).ln();
        if self.noise_sigma > 0.0 {
            for v in &mut row {
                let z: f64 = StandardNormal.sample(rng);
                *v += self.noise_sigma * z;
            }
        }
        row
    }

    fn make_record(
        &self,
        split: Split,
        index: usize,
        slots: &[(usize, f64)],
        rng: &mut ChaCha8Rng,
        label: Option<usize>,
    ) -> Result<SlotLogitsRecord> {
        let rows: Vec<Vec<f64>> = slots
            .iter()
            .map(|&(c, p)| self.slot_row(rng, c, p))
            .collect();
        SlotLogitsRecord::with_aggregate(
            format!("{}-{index:05}", split.name()),
            Matrix::from_rows(&rows)?,
            label,
            split.tag(),
        )
    }

    fn confusion_for(&self, unseen: usize) -> Option<&NearConfusion> {
        self.near_confusion.iter().find(|nc| nc.unseen == unseen)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn dominant_class(f: &FrequencySet) -> usize {
    let mut best = f.entries()[0];
    for &e in &f.entries()[1..] {
        if e.1 > best.1 {
            best = e;
        }
    }
    best.0
}

/// A generated split plus the composition that produced each record.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSplit {
    pub split: Split,
    pub records: Vec<SlotLogitsRecord>,
    /// True object classes per record (unseen classes keep their own index).
    pub compositions: Vec<FrequencySet>,
}

fn generate(
    config: &GeneratorConfig,
    split: Split,
    n: usize,
    f: impl Fn(&mut ChaCha8Rng) -> Result<(FrequencySet, Vec<(usize, f64)>, Option<usize>)>,
) -> Result<SyntheticSplit> {
    config.validate()?;
    let mut records = Vec::with_capacity(n);
    let mut compositions = Vec::with_capacity(n);
    for index in 0..n {
        let mut rng = config.rng(split, index);
        let (composition, slots, label) = f(&mut rng)?;
        records.push(config.make_record(split, index, &slots, &mut rng, label)?);
        compositions.push(composition);
    }
    Ok(SyntheticSplit {
        split,
        records,
        compositions,
    })
}

fn id_like(
    config: &GeneratorConfig,
    rng: &mut ChaCha8Rng,
    mean: f64,
) -> (FrequencySet, Vec<(usize, f64)>, Option<usize>) {
    let pattern = config
        .id_pattern_graph
        .choose(rng)
        .expect("validated non-empty")
        .clone();
    let mut slots = Vec::with_capacity(config.num_slots);
    for &(c, n) in pattern.entries() {
        for _ in 0..n {
            slots.push((c, config.draw_confidence(rng, mean)));
        }
    }
    let label = Some(dominant_class(&pattern));
    (pattern, slots, label)
}

fn generate_id_split(config: &GeneratorConfig, split: Split, n: usize) -> Result<SyntheticSplit> {
    generate(config, split, n, |rng| {
        Ok(id_like(config, rng, config.id_confidence))
    })
}

/// ID records for the training split.
pub fn generate_id(config: &GeneratorConfig, n: usize) -> Result<SyntheticSplit> {
    generate_id_split(config, Split::IdTrain, n)
}

/// Held-out ID records (independent stream from the training split).
pub fn generate_id_test(config: &GeneratorConfig, n: usize) -> Result<SyntheticSplit> {
    generate_id_split(config, Split::IdTest, n)
}

/// ID patterns observed under covariate shift: same scenes, lower confidence.
pub fn generate_csid(config: &GeneratorConfig, n: usize) -> Result<SyntheticSplit> {
    let mean = if config.degenerate {
        config.id_confidence
    } else {
        config.csid_confidence
    };
    generate(config, Split::Csid, n, |rng| Ok(id_like(config, rng, mean)))
}

pub fn generate_near_ood(config: &GeneratorConfig, n: usize) -> Result<SyntheticSplit> {
    if config.degenerate {
        return generate(config, Split::NearOod, n, |rng| {
            let (p, s, _) = id_like(config, rng, config.id_confidence);
            Ok((p, s, None))
        });
    }
    if config.near_confusion.is_empty() {
        return Err(field_error(
            "near_confusion",
            "must not be empty for near-OOD generation",
        ));
    }
    generate(config, Split::NearOod, n, |rng| {
        if !config.near_pattern_graph.is_empty() {
            let truth = config
                .near_pattern_graph
                .choose(rng)
                .expect("checked non-empty")
                .clone();
            let mut slots = Vec::with_capacity(config.num_slots);
            for &(c, n) in truth.entries() {
                for _ in 0..n {
                    slots.push(match config.confusion_for(c) {
                        Some(nc) => (nc.nearest, config.draw_confidence(rng, nc.confidence)),
                        None => (c, config.draw_confidence(rng, config.id_confidence)),
                    });
                }
            }
            return Ok((truth, slots, None));
        }
        let pattern = config
            .id_pattern_graph
            .choose(rng)
            .expect("validated non-empty")
            .clone();
        let replaced = rng.random_range(0..pattern.len());
        let confusion = config
            .near_confusion
            .choose(rng)
            .expect("checked non-empty");
        let mut slots = Vec::with_capacity(config.num_slots);
        let mut truth = Vec::with_capacity(pattern.len());
        for (i, &(c, n)) in pattern.entries().iter().enumerate() {
            if i == replaced {
                truth.push((confusion.unseen, n));
                for _ in 0..n {
                    slots.push((
                        confusion.nearest,
                        config.draw_confidence(rng, confusion.confidence),
                    ));
                }
            } else {
                truth.push((c, n));
                for _ in 0..n {
                    slots.push((c, config.draw_confidence(rng, config.id_confidence)));
                }
            }
        }
        Ok((FrequencySet::from_counts(truth), slots, None))
    })
}

/// Random multi-category composition whose class set never occurs in the ID graph.
fn absent_pattern(
    config: &GeneratorConfig,
    rng: &mut ChaCha8Rng,
    seen: &BTreeSet<Vec<usize>>,
) -> Result<FrequencySet> {
    let k = config.num_slots;
    if k < 2 {
        return Err(field_error(
            "num_slots",
            "far-OOD generation needs at least 2 slots",
        ));
    }
    for _ in 0..1000 {
        let distinct = rng.random_range(2..=k.min(3).min(config.num_classes));
        let mut classes: Vec<usize> = (0..config.num_classes).collect();
        let (chosen, _) = classes.partial_shuffle(rng, distinct);
        let mut chosen = chosen.to_vec();
        chosen.sort_unstable();
        if seen.contains(&chosen) {
            continue;
        }
        // composition of k into `distinct` positive parts
        let mut cuts: Vec<usize> = (1..k).collect::<Vec<_>>();
        let (picked, _) = cuts.partial_shuffle(rng, distinct - 1);
        let mut picked = picked.to_vec();
        picked.sort_unstable();
        let mut bounds = vec![0];
        bounds.extend(picked);
        bounds.push(k);
        let counts = bounds.windows(2).map(|w| w[1] - w[0]);
        return Ok(FrequencySet::from_counts(chosen.into_iter().zip(counts)));
    }
    Err(OcoError::invalid(
        "could not find a class combination absent from id_pattern_graph",
    ))
}

pub fn generate_far_ood(config: &GeneratorConfig, n: usize) -> Result<SyntheticSplit> {
    if config.degenerate {
        return generate(config, Split::FarOod, n, |rng| {
            let (p, s, _) = id_like(config, rng, config.id_confidence);
            Ok((p, s, None))
        });
    }
    let seen: BTreeSet<Vec<usize>> = config
        .id_pattern_graph
        .iter()
        .map(|f| f.classes().collect())
        .collect();
    generate(config, Split::FarOod, n, |rng| {
        let pattern = absent_pattern(config, rng, &seen)?;
        let mut slots = Vec::with_capacity(config.num_slots);
        for &(c, n) in pattern.entries() {
            for _ in 0..n {
                slots.push((c, config.draw_confidence(rng, config.far_confidence)));
            }
        }
        Ok((pattern, slots, None))
    })
}

/// Scenario counts of one split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ScenarioPopulation {
    #[serde(rename = "S1")]
    pub single: usize,
    #[serde(rename = "S2")]
    pub typical: usize,
    #[serde(rename = "S3")]
    pub atypical: usize,
}

impl ScenarioPopulation {
    pub fn from_samples(samples: &[ScoredSample]) -> Self {
        let mut p = ScenarioPopulation::default();
        for s in samples {
            match s.scenario {
                Scenario::Single => p.single += 1,
                Scenario::Typical => p.typical += 1,
                Scenario::Atypical => p.atypical += 1,
            }
        }
        p
    }

    pub fn total(&self) -> usize {
        self.single + self.typical + self.atypical
    }

    pub fn fraction(&self, scenario: Scenario) -> f64 {
        let n = match scenario {
            Scenario::Single => self.single,
            Scenario::Typical => self.typical,
            Scenario::Atypical => self.atypical,
        };
        if self.total() == 0 {
            0.0
        } else {
            n as f64 / self.total() as f64
        }
    }
}

/// Reports of every method under one evaluation mode, keyed by method name.
pub type MethodReports = BTreeMap<String, MetricsReport>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodSetReports {
    pub standard: MethodReports,
    pub fs_ood: MethodReports,
}

impl OodSetReports {
    pub fn get(&self, mode: EvalMode, method: Method) -> &MetricsReport {
        let reports = match mode {
            EvalMode::Standard => &self.standard,
            EvalMode::FsOod => &self.fs_ood,
        };
        &reports[method.name()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub num_slots: usize,
    pub table_patterns: usize,
    pub populations: BTreeMap<Split, ScenarioPopulation>,
    /// ID test + CSID against near-OOD.
    pub near: OodSetReports,
    /// ID test + CSID against far-OOD.
    pub far: OodSetReports,
}

/// Everything a benchmark run produced.
#[derive(Debug, Clone)]
pub struct BenchmarkRun {
    pub config: GeneratorConfig,
    pub train: SyntheticSplit,
    pub table: CoOccurrenceTable,
    pub tests: Vec<SyntheticSplit>,
    pub scored: BTreeMap<Split, Vec<ScoredSample>>,
    pub report: BenchmarkReport,
}

impl BenchmarkRun {
    /// Scored samples of the ID test, CSID and the given OOD split, in that order.
    pub fn evaluation_set(&self, ood: Split) -> Vec<ScoredSample> {
        [Split::IdTest, Split::Csid, ood]
            .iter()
            .flat_map(|s| self.scored[s].iter().cloned())
            .collect()
    }
}

fn method_reports(samples: &[ScoredSample], mode: EvalMode) -> Result<MethodReports> {
    Method::ALL
        .iter()
        .map(|&m| {
            Ok((
                m.name().to_string(),
                evaluate(samples, EvalOptions::new(mode, m))?,
            ))
        })
        .collect()
}

/// Generates all splits, builds the table from the ID training split, scores
/// the test splits and evaluates every method in both modes.
pub fn simulate(config: &GeneratorConfig) -> Result<BenchmarkRun> {
    config.validate()?;
    let train = generate_id(config, config.train_samples)?;
    let table = build_table(&train.records, config.num_slots, config.num_classes)?;
    let tests = vec![
        generate_id_test(config, config.test_samples)?,
        generate_csid(config, config.test_samples)?,
        generate_near_ood(config, config.test_samples)?,
        generate_far_ood(config, config.test_samples)?,
    ];
    let scorer = Scorer::new(&table);
    let mut scored = BTreeMap::new();
    for split in &tests {
        scored.insert(split.split, scorer.score_all(&split.records)?);
    }
    let mut populations: BTreeMap<Split, ScenarioPopulation> = scored
        .iter()
        .map(|(&s, samples)| (s, ScenarioPopulation::from_samples(samples)))
        .collect();
    populations.insert(
        Split::IdTrain,
        ScenarioPopulation::from_samples(&scorer.score_all(&train.records)?),
    );

    let mut run = BenchmarkRun {
        config: config.clone(),
        train,
        table,
        tests,
        scored,
        report: BenchmarkReport {
            num_slots: config.num_slots,
            table_patterns: 0,
            populations,
            near: OodSetReports {
                standard: MethodReports::new(),
                fs_ood: MethodReports::new(),
            },
            far: OodSetReports {
                standard: MethodReports::new(),
                fs_ood: MethodReports::new(),
            },
        },
    };
    run.report.table_patterns = run.table.len();
    for (ood, slot) in [(Split::NearOod, 0), (Split::FarOod, 1)] {
        let set = run.evaluation_set(ood);
        let reports = OodSetReports {
            standard: method_reports(&set, EvalMode::Standard)?,
            fs_ood: method_reports(&set, EvalMode::FsOod)?,
        };
        if slot == 0 {
            run.report.near = reports;
        } else {
            run.report.far = reports;
        }
    }
    Ok(run)
}

pub fn run_benchmark(config: &GeneratorConfig) -> Result<BenchmarkReport> {
    Ok(simulate(config)?.report)
}

/// One object of a scene: class and fraction of the image it covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub class: usize,
    pub area: f64,
}

/// Scene prior from which fixed-`K` generator configs are derived.
///
/// A scene's objects receive slots in proportion to their area (largest
/// remainder), so few slots drop small objects, including an unseen one in a
/// near-OOD scene. Many slots cut objects into fragments that carry less
/// evidence each, modelled as logit noise growing with `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneModel {
    pub num_classes: usize,
    pub num_unseen: usize,
    pub scenes: Vec<Vec<SceneObject>>,
    pub near_confusion: Vec<NearConfusion>,
    /// Logit noise at [`SceneModel::REFERENCE_SLOTS`].
    pub reference_noise: f64,
    /// Noise scales as `(K / REFERENCE_SLOTS) ^ noise_exponent`.
    pub noise_exponent: f64,
    pub id_confidence: f64,
    pub csid_confidence: f64,
    pub far_confidence: f64,
    pub confidence_spread: f64,
    pub train_samples: usize,
    pub test_samples: usize,
    pub seed: u64,
}

/// Classes are grouped into contexts; scenes only mix classes of one context.
const CONTEXT_SIZE: usize = 4;

impl SceneModel {
    pub const REFERENCE_SLOTS: usize = 6;

    /// Deterministic scene prior over `num_classes` ID classes.
    pub fn generate(num_classes: usize, num_unseen: usize, num_scenes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x5ce1e));
        let contexts = num_classes.div_ceil(CONTEXT_SIZE);
        let mut scenes = Vec::with_capacity(num_scenes);
        let mut seen = BTreeSet::new();
        while scenes.len() < num_scenes {
            let ctx = rng.random_range(0..contexts);
            let members: Vec<usize> =
                (ctx * CONTEXT_SIZE..((ctx + 1) * CONTEXT_SIZE).min(num_classes)).collect();
            let objects = rng.random_range(1..=3usize.min(members.len()));
            let mut pool = members.clone();
            let (chosen, _) = pool.partial_shuffle(&mut rng, objects);
            let chosen = chosen.to_vec();
            let mut areas: Vec<f64> = (0..objects).map(|_| rng.random_range(0.15..1.0)).collect();
            let total: f64 = areas.iter().sum();
            for a in &mut areas {
                *a /= total;
            }
            let scene: Vec<SceneObject> = chosen
                .into_iter()
                .zip(areas)
                .map(|(class, area)| SceneObject { class, area })
                .collect();
            let key: Vec<(usize, u64)> = scene
                .iter()
                .map(|o| (o.class, (o.area * 1e6) as u64))
                .collect();
            if seen.insert(key) {
                scenes.push(scene);
            }
        }
        let near_confusion = (0..num_unseen)
            .map(|u| NearConfusion {
                unseen: num_classes + u,
                nearest: ((u % contexts) * CONTEXT_SIZE + (u / contexts) % CONTEXT_SIZE)
                    .min(num_classes - 1),
                confidence: 0.55,
            })
            .collect();
        SceneModel {
            num_classes,
            num_unseen,
            scenes,
            near_confusion,
            reference_noise: 1.0,
            noise_exponent: 1.0,
            id_confidence: 0.9,
            csid_confidence: 0.6,
            far_confidence: 0.3,
            confidence_spread: 0.05,
            train_samples: 2000,
            test_samples: 500,
            seed,
        }
    }

    /// Slot counts per object by largest remainder; the largest object always
    /// gets at least one slot. Objects with zero slots are omitted.
    pub fn allocate(scene: &[SceneObject], k: usize) -> FrequencySet {
        let quotas: Vec<f64> = scene.iter().map(|o| o.area * k as f64).collect();
        let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let mut order: Vec<usize> = (0..scene.len()).collect();
        order.sort_by(|&a, &b| {
            let ra = quotas[a] - quotas[a].floor();
            let rb = quotas[b] - quotas[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let mut remaining = k - counts.iter().sum::<usize>();
        for &i in order.iter().cycle() {
            if remaining == 0 {
                break;
            }
            counts[i] += 1;
            remaining -= 1;
        }
        FrequencySet::from_counts(scene.iter().map(|o| o.class).zip(counts))
    }

    /// Generator config for `k` slots. Pattern lists keep one entry per scene,
    /// so frequent compositions are sampled more often.
    pub fn config(&self, k: usize) -> GeneratorConfig {
        let id_pattern_graph = self.scenes.iter().map(|s| Self::allocate(s, k)).collect();
        let mut near_pattern_graph = Vec::new();
        for scene in &self.scenes {
            for (j, object) in scene.iter().enumerate() {
                let Some(unseen) = self.unseen_for(object.class) else {
                    continue;
                };
                let mut swapped = scene.clone();
                swapped[j].class = unseen;
                near_pattern_graph.push(Self::allocate(&swapped, k));
            }
        }
        GeneratorConfig {
            num_classes: self.num_classes,
            num_unseen: self.num_unseen,
            num_slots: k,
            id_pattern_graph,
            near_confusion: self.near_confusion.clone(),
            near_pattern_graph,
            id_confidence: self.id_confidence,
            csid_confidence: self.csid_confidence,
            far_confidence: self.far_confidence,
            confidence_spread: self.confidence_spread,
            noise_sigma: self.reference_noise
                * (k as f64 / Self::REFERENCE_SLOTS as f64).powf(self.noise_exponent),
            train_samples: self.train_samples,
            test_samples: self.test_samples,
            seed: self.seed,
            degenerate: false,
        }
    }

    /// Unseen class that stands in for `class` in near-OOD scenes: the first
    /// unseen class confused with an ID class of the same context.
    fn unseen_for(&self, class: usize) -> Option<usize> {
        let ctx = class / CONTEXT_SIZE;
        self.near_confusion
            .iter()
            .filter(|nc| nc.nearest / CONTEXT_SIZE == ctx)
            .map(|nc| nc.unseen)
            .nth(class % 2)
            .or_else(|| {
                self.near_confusion
                    .iter()
                    .find(|nc| nc.nearest / CONTEXT_SIZE == ctx)
                    .map(|nc| nc.unseen)
            })
    }
}

impl Default for SceneModel {
    fn default() -> Self {
        SceneModel::generate(20, 10, 40, 2024)
    }
}

/// OCO AUROC against the union of near- and far-OOD, standard mode.
pub fn sweep_metric(run: &BenchmarkRun) -> Result<f64> {
    let mut samples = run.scored[&Split::IdTest].clone();
    samples.extend(run.scored[&Split::NearOod].iter().cloned());
    samples.extend(run.scored[&Split::FarOod].iter().cloned());
    Ok(evaluate(&samples, EvalOptions::new(EvalMode::Standard, Method::Oco))?.auroc)
}

/// `(K, AUROC)` for every slot count, each on the config the scene model derives for it.
pub fn slot_count_sweep(
    model: &SceneModel,
    slot_counts: impl IntoIterator<Item = usize>,
) -> Result<Vec<(usize, f64)>> {
    slot_counts
        .into_iter()
        .map(|k| Ok((k, sweep_metric(&simulate(&model.config(k))?)?)))
        .collect()
}

/// Frequency set predicted for a record, for ground-truth checks.
pub fn predicted_pattern(record: &SlotLogitsRecord) -> Result<FrequencySet> {
    Ok(frequency_set(&slot_predictions(record.slot_logits())?))
}

impl GeneratorConfig {
    /// The config's unseen-class map for an unseen index, if any.
    pub fn nearest_for(&self, unseen: usize) -> Option<usize> {
        self.confusion_for(unseen).map(|c| c.nearest)
    }
}
