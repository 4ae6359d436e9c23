//! Command-line front end: `infer`, `build-stats`, `score`, `eval`, `simulate`.
//!
//! Every output file is written to a temporary sibling and renamed into place,
//! so a failing command leaves its targets untouched.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bundle::WeightBundle;
use crate::error::{OcoError, Result};
use crate::evaluation::{evaluate, EvalMode, EvalOptions, MetricsReport, DEFAULT_TARGET_TPR};
use crate::features::read_features;
use crate::patterns::{
    build_table, classify_configuration, frequency_set, slot_predictions, ConfigurationKind,
    MatchMode,
};
use crate::patterns::{load_table, save_table};
use crate::record::{read_records, write_records, DatasetTag, SlotLogitsRecord};
use crate::scoring::{Baseline, Method, Scenario, ScoredSample, Scorer};
use crate::synthbench::{simulate, BenchmarkReport, GeneratorConfig, Split};

/// Version stamped into report JSON and the scored CSV preamble.
pub const FORMAT_VERSION: u32 = 1;
const SCORED_PREAMBLE: &str = "# oco scored v1";

pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "oco", version, about = "Object co-occurrence OOD detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run slot attention and the slot classifier over a feature file.
    Infer {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seed for slot initialization; map `i` uses `seed + i`.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override the iteration count stored in the weights.
        #[arg(long)]
        iters: Option<usize>,
        /// Dataset tag written on every record.
        #[arg(long, default_value = "unlabeled", value_parser = parse_tag)]
        tag: DatasetTag,
    },
    /// Mine the multi-category pattern table from training records.
    BuildStats {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        min_support: u64,
    },
    /// Score records against a pattern table.
    Score {
        #[arg(long)]
        table: PathBuf,
        /// Record files, scored in the order given.
        #[arg(long = "in", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated baselines to add as columns (empty for none).
        #[arg(long, default_value = "msp,maxlogit,energy", value_parser = parse_baselines)]
        baselines: BaselineList,
        /// Match patterns by category set only, ignoring counts.
        #[arg(long)]
        category_set: bool,
    },
    /// Compute FPR at the target TPR and AUROC from a scored CSV.
    Eval {
        #[arg(long)]
        scored: PathBuf,
        #[arg(long, default_value = "standard", value_parser = parse_mode)]
        mode: EvalMode,
        #[arg(long, default_value_t = DEFAULT_TARGET_TPR)]
        tpr: f64,
        #[arg(long)]
        out: PathBuf,
        /// Score column to evaluate.
        #[arg(long, default_value = "oco", value_parser = parse_method)]
        method: Method,
        /// Recalibrate the threshold inside each scenario.
        #[arg(long)]
        per_scenario_threshold: bool,
    },
    /// Run the synthetic benchmark and write every artifact to a directory.
    Simulate {
        /// Generator config JSON; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaselineList(pub Vec<Baseline>);

fn parse_tag(s: &str) -> std::result::Result<DatasetTag, String> {
    s.parse().map_err(|e: OcoError| e.to_string())
}

fn parse_mode(s: &str) -> std::result::Result<EvalMode, String> {
    s.parse().map_err(|e: OcoError| e.to_string())
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: OcoError| e.to_string())
}

fn parse_baselines(s: &str) -> std::result::Result<BaselineList, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let b: Baseline = part.parse().map_err(|e: OcoError| e.to_string())?;
        if !out.contains(&b) {
            out.push(b);
        }
    }
    Ok(BaselineList(out))
}

/// Exit code for a failed command.
pub fn exit_code(err: &OcoError) -> i32 {
    match err {
        OcoError::Numeric { .. } => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

/// Runs a parsed command; messages for the user go to `stdout`.
pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Infer {
            weights,
            features,
            out,
            seed,
            iters,
            tag,
        } => cmd_infer(&weights, &features, &out, seed, iters, tag),
        Command::BuildStats {
            train,
            out,
            min_support,
        } => {
            let summary = cmd_build_stats(&train, &out, min_support)?;
            writeln!(stdout, "patterns: {}", summary.patterns)?;
            writeln!(
                stdout,
                "multi-category records: {}",
                summary.multi_category_records
            )?;
            Ok(())
        }
        Command::Score {
            table,
            inputs,
            out,
            baselines,
            category_set,
        } => {
            let mode = if category_set {
                MatchMode::CategorySet
            } else {
                MatchMode::Exact
            };
            let n = cmd_score(&table, &inputs, &out, &baselines.0, mode)?;
            writeln!(stdout, "scored: {n}")?;
            Ok(())
        }
        Command::Eval {
            scored,
            mode,
            tpr,
            out,
            method,
            per_scenario_threshold,
        } => {
            let options = EvalOptions {
                mode,
                method,
                target_tpr: tpr,
                per_scenario_threshold,
            };
            let report = cmd_eval(&scored, options, &out)?;
            writeln!(stdout, "fpr95: {}", report.fpr95)?;
            writeln!(stdout, "auroc: {}", report.auroc)?;
            Ok(())
        }
        Command::Simulate { config, out_dir } => {
            let config = match config {
                Some(path) => load_config(&path)?,
                None => GeneratorConfig::default(),
            };
            let report = cmd_simulate(&config, &out_dir)?;
            for (name, set) in [("near", &report.near), ("far", &report.far)] {
                for method in Method::ALL {
                    let r = set.get(EvalMode::Standard, method);
                    writeln!(
                        stdout,
                        "{name} {method}: auroc {:.4} fpr95 {:.4}",
                        r.auroc, r.fpr95
                    )?;
                }
            }
            Ok(())
        }
    }
}

/// Writes `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file()
            .set_permissions(fs::Permissions::from_mode(0o644))?;
    }
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        write(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| OcoError::Io(e.error))?;
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| OcoError::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn with_file<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        OcoError::Parse { position, message } => OcoError::Parse {
            position: format!("{} {position}", path.display()),
            message,
        },
        other => other,
    })
}

pub fn load_records(path: &Path) -> Result<Vec<SlotLogitsRecord>> {
    with_file(path, read_records(open(path)?))
}

/// Parses a generator config; errors carry the JSON path of the bad field.
pub fn parse_config(text: &str) -> Result<GeneratorConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: GeneratorConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        OcoError::parse(path, e.into_inner().to_string())
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<GeneratorConfig> {
    let mut text = String::new();
    open(path)?.read_to_string(&mut text)?;
    with_file(path, parse_config(&text))
}

pub fn cmd_infer(
    weights: &Path,
    features: &Path,
    out: &Path,
    seed: u64,
    iters: Option<usize>,
    tag: DatasetTag,
) -> Result<()> {
    let mut bytes = Vec::new();
    open(weights)?.read_to_end(&mut bytes)?;
    let mut bundle = WeightBundle::from_bytes(&bytes)?;
    if let Some(t) = iters {
        bundle.slot.iterations = t;
    }
    let (_, maps) = with_file(features, read_features(open(features)?))?;
    let records = maps
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let logits = bundle.infer(x, seed.wrapping_add(i as u64))?;
            SlotLogitsRecord::with_aggregate(format!("feature-{i:06}"), logits, None, tag)
        })
        .collect::<Result<Vec<_>>>()?;
    write_atomic(out, |w| write_records(w, &records))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StatsSummary {
    pub patterns: usize,
    pub multi_category_records: usize,
}

pub fn cmd_build_stats(train: &Path, out: &Path, min_support: u64) -> Result<StatsSummary> {
    let records = load_records(train)?;
    let first = records.first().ok_or_else(|| {
        OcoError::invalid(format!(
            "{}: training file holds no records",
            train.display()
        ))
    })?;
    let table = build_table(&records, first.num_slots(), first.num_classes())?
        .with_min_support(min_support);
    let mut multi = 0;
    for r in &records {
        let f = frequency_set(&slot_predictions(r.slot_logits())?);
        if classify_configuration(&f)? == ConfigurationKind::MultiCategory {
            multi += 1;
        }
    }
    let bytes = save_table(&table);
    write_atomic(out, |w| Ok(w.write_all(&bytes)?))?;
    Ok(StatsSummary {
        patterns: table.len(),
        multi_category_records: multi,
    })
}

/// Scores every record of every input file; returns the row count.
pub fn cmd_score(
    table: &Path,
    inputs: &[PathBuf],
    out: &Path,
    baselines: &[Baseline],
    mode: MatchMode,
) -> Result<usize> {
    let mut bytes = Vec::new();
    open(table)?.read_to_end(&mut bytes)?;
    let table = with_file(table, load_table(&bytes))?;
    let mut records = Vec::new();
    for path in inputs {
        let batch = load_records(path)?;
        if let Some(r) = batch
            .iter()
            .find(|r| r.num_slots() != table.num_slots() || r.num_classes() != table.num_classes())
        {
            return Err(OcoError::invalid(format!(
                "{}: record {} is {}x{}, table expects {}x{}",
                path.display(),
                r.id(),
                r.num_slots(),
                r.num_classes(),
                table.num_slots(),
                table.num_classes()
            )));
        }
        records.extend(batch);
    }
    let samples = Scorer::new(&table).match_mode(mode).score_all(&records)?;
    write_atomic(out, |w| write_scored(w, &samples, baselines))?;
    Ok(samples.len())
}

pub fn cmd_eval(scored: &Path, options: EvalOptions, out: &Path) -> Result<MetricsReport> {
    let samples = with_file(scored, read_scored(open(scored)?))?;
    let report = evaluate(&samples, options)?;
    write_atomic(out, |w| write_json(w, &Versioned::new(&report)))?;
    Ok(report)
}

/// File names written by `simulate`, in write order.
pub fn simulate_manifest() -> Vec<String> {
    let mut names = vec!["config.json".to_string(), "table.json".to_string()];
    names.push(format!("{}.jsonl", Split::IdTrain.name()));
    for s in Split::TEST_SPLITS {
        names.push(format!("{}.jsonl", s.name()));
        names.push(format!("{}.csv", s.name()));
    }
    names.push("report.json".to_string());
    names
}

pub fn cmd_simulate(config: &GeneratorConfig, out_dir: &Path) -> Result<BenchmarkReport> {
    let run = simulate(config)?;
    fs::create_dir_all(out_dir)?;
    write_atomic(&out_dir.join("config.json"), |w| write_json(w, config))?;
    let table = save_table(&run.table);
    write_atomic(&out_dir.join("table.json"), |w| Ok(w.write_all(&table)?))?;
    for split in std::iter::once(&run.train).chain(&run.tests) {
        let name = split.split.name();
        write_atomic(&out_dir.join(format!("{name}.jsonl")), |w| {
            write_records(w, &split.records)
        })?;
        if let Some(samples) = run.scored.get(&split.split) {
            write_atomic(&out_dir.join(format!("{name}.csv")), |w| {
                write_scored(w, samples, &Baseline::ALL)
            })?;
        }
    }
    write_atomic(&out_dir.join("report.json"), |w| {
        write_json(w, &Versioned::new(&run.report))
    })?;
    Ok(run.report)
}

/// A JSON document with a leading `version` field.
#[derive(Debug, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub version: u32,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Versioned<T> {
    pub fn new(body: T) -> Self {
        Versioned {
            version: FORMAT_VERSION,
            body,
        }
    }
}

fn write_json<T: Serialize + ?Sized>(w: &mut dyn Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *w, value).map_err(|e| OcoError::invalid(e.to_string()))?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Formats a score with 17 significant digits, enough to round-trip any `f64`.
pub fn format_score(v: f64) -> String {
    format!("{v:.16e}")
}

/// Scored CSV: a version comment, then `id,tag,scenario,oco_score,<baselines>`.
pub fn write_scored(
    w: &mut dyn Write,
    samples: &[ScoredSample],
    baselines: &[Baseline],
) -> Result<()> {
    writeln!(w, "{SCORED_PREAMBLE}")?;
    let mut csv = csv::Writer::from_writer(w);
    let mut header = vec!["id", "tag", "scenario", "oco_score"];
    header.extend(baselines.iter().map(|b| b.name()));
    csv.write_record(&header).map_err(csv_error)?;
    for s in samples {
        let mut row = vec![
            s.id.clone(),
            s.tag.to_string(),
            s.scenario.to_string(),
            format_score(s.oco_score),
        ];
        for b in baselines {
            let v = s.baselines.get(b).ok_or_else(|| {
                OcoError::invalid(format!("sample {} has no {} score", s.id, b.name()))
            })?;
            row.push(format_score(*v));
        }
        csv.write_record(&row).map_err(csv_error)?;
    }
    csv.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> OcoError {
    let position = e
        .position()
        .map(|p| format!("line {}", p.line()))
        .unwrap_or_else(|| "scored file".to_string());
    OcoError::parse(position, e.to_string())
}

pub fn read_scored<R: Read>(r: R) -> Result<Vec<ScoredSample>> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let header = reader.headers().map_err(csv_error)?.clone();
    let fixed = ["id", "tag", "scenario", "oco_score"];
    if header.len() < fixed.len() || header.iter().zip(fixed).any(|(a, b)| a != b) {
        return Err(OcoError::parse(
            "header",
            format!("expected columns to start with {}", fixed.join(",")),
        ));
    }
    let baselines = header
        .iter()
        .skip(fixed.len())
        .map(|name| name.parse::<Baseline>())
        .collect::<Result<Vec<_>>>()?;
    let mut samples = Vec::new();
    for row in reader.records() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let at = |e: OcoError| OcoError::parse(format!("line {line}"), e.to_string());
        let number = |i: usize| -> Result<f64> {
            row[i].parse::<f64>().map_err(|e| {
                OcoError::parse(
                    format!("line {line}"),
                    format!("column {}: {e}", &header[i]),
                )
            })
        };
        let mut sample = ScoredSample {
            id: row[0].to_string(),
            tag: row[1].parse().map_err(at)?,
            scenario: row[2].parse::<Scenario>().map_err(at)?,
            oco_score: number(3)?,
            baselines: Default::default(),
        };
        for (j, &b) in baselines.iter().enumerate() {
            sample.baselines.insert(b, number(fixed.len() + j)?);
        }
        samples.push(sample);
    }
    Ok(samples)
}
