//! Declarative experiment runner: augmentation configurations, phase
//! ablations and one-step vs two-step comparisons, with per-seed and
//! seed-aggregated reports.

mod config;
mod run;
pub mod traditional;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::files::{read_json, rows_to_csv, to_json_pretty, MetricRow};
use crate::model::Phase;

pub use config::{load_config, AugConfig, DataConfig, DetectionConfig, ExperimentConfig, Task};
pub use run::{
    aggregate_csv, aggregate_seeds, build_composites, load_dataset, manifest_composites, predict_records,
    roc_csv, run_experiment, seed_dir_name, split_for_seed, train_model, AggregateRow, ArtifactEntry,
    ArtifactManifest, Dataset, ExperimentOutcome, RocPoint, SeedResult, AGGREGATE_FILE, ARTIFACTS_FILE,
    SEED_METRICS_FILE,
};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "PKCP_THREADS";

/// Worker cap from `PKCP_THREADS`; unset or empty means no cap.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) if v.trim().is_empty() => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
    }
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} has no file name", path.display())))?
        .to_string_lossy();
    let tmp = dir.join(format!(
        ".{name}.{}.{}.tmp",
        std::process::id(),
        TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationAxis {
    Aug,
    Phases,
    Steps,
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aug" => Ok(AblationAxis::Aug),
            "phases" => Ok(AblationAxis::Phases),
            "steps" => Ok(AblationAxis::Steps),
            other => Err(Error::Config(format!(
                "unknown ablation axis `{other}` (expected aug, phases or steps)"
            ))),
        }
    }
}

/// Phase letters in canonical order, e.g. `PAVD` or `AVD`.
pub fn phase_code(phases: &[Phase]) -> String {
    crate::model::canonical_phases(phases).iter().map(|p| p.letter()).collect()
}

/// Variant configs along one axis; each writes under `<output_dir>/<variant>`.
pub fn ablation_variants(base: &ExperimentConfig, axis: AblationAxis) -> Result<Vec<(String, ExperimentConfig)>> {
    base.validate()?;
    if base.task == Task::DetectionEval {
        return Err(Error::Config("ablations need a classification task".into()));
    }
    let variant = |label: String, f: &dyn Fn(&mut ExperimentConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c.name = format!("{}.{label}", base.name);
        c.output_dir = base.output_dir.join(&label);
        (label, c)
    };
    let out: Vec<(String, ExperimentConfig)> = match axis {
        AblationAxis::Aug => AugConfig::ALL
            .iter()
            .map(|&a| variant(a.name().into(), &|c| c.aug = a))
            .collect(),
        AblationAxis::Steps => [Task::OneStep, Task::TwoStep]
            .iter()
            .map(|&t| variant(t.name().into(), &|c| c.task = t))
            .collect(),
        AblationAxis::Phases => {
            if matches!(base.aug, AugConfig::SinglePhaseSingleSlice | AugConfig::ThreePhasePkcp) {
                return Err(Error::Config(format!(
                    "phase ablation is undefined for aug `{}`, which fixes its own phases",
                    base.aug.name()
                )));
            }
            let full = crate::model::canonical_phases(&base.phases);
            if full.len() < 2 {
                return Err(Error::Config("phase ablation needs at least two phases".into()));
            }
            let mut subsets = vec![full.clone()];
            for drop in &full {
                subsets.push(full.iter().copied().filter(|p| p != drop).collect());
            }
            subsets
                .into_iter()
                .map(|s| variant(phase_code(&s), &|c| c.phases = s.clone()))
                .collect()
        }
    };
    for (_, c) in &out {
        c.validate()?;
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub output_dir: PathBuf,
    pub variants: Vec<(String, ExperimentOutcome)>,
}

impl AblationOutcome {
    /// Seed-averaged value of `metric` for each variant, in variant order.
    pub fn metric(&self, metric: &str) -> Vec<(String, Option<f64>)> {
        self.variants
            .iter()
            .map(|(v, o)| (v.clone(), o.aggregate_value(metric)))
            .collect()
    }
}

/// Runs every variant along `axis` and writes `comparison.csv`,
/// `comparison.json`, `roc_points.csv` and `auc_bars.csv`.
pub fn run_ablation_suite(base: &ExperimentConfig, axis: AblationAxis) -> Result<AblationOutcome> {
    let variants = ablation_variants(base, axis).map_err(|e| e.in_experiment(&base.name))?;
    let mut done = Vec::with_capacity(variants.len());
    for (label, cfg) in variants {
        done.push((label, run_experiment(&cfg)?));
    }
    let root = base.output_path();
    let mut table: Vec<(String, MetricRow)> = Vec::new();
    let mut roc = String::from("variant,seed,split,curve,fpr,tpr\n");
    for (label, o) in &done {
        for r in &o.aggregate {
            table.push((label.clone(), r.as_metric_row()));
        }
        for s in &o.seeds {
            for p in &s.roc {
                let _ = writeln!(roc, "{label},{},{},{},{},{}", s.seed, p.split, p.curve, p.fpr, p.tpr);
            }
        }
    }
    let rows: Vec<(Option<&str>, &MetricRow)> = table.iter().map(|(v, r)| (Some(v.as_str()), r)).collect();
    let bars: Vec<(Option<&str>, &MetricRow)> = rows.iter().filter(|(_, r)| r.metric.ends_with("auc")).copied().collect();
    write_atomic(&root.join("comparison.csv"), rows_to_csv(&rows).as_bytes())?;
    write_atomic(&root.join("auc_bars.csv"), rows_to_csv(&bars).as_bytes())?;
    write_atomic(&root.join("roc_points.csv"), roc.as_bytes())?;
    let json: Vec<ComparisonRow> = table
        .iter()
        .map(|(v, r)| ComparisonRow {
            variant: v.clone(),
            row: r.clone(),
        })
        .collect();
    write_atomic(&root.join("comparison.json"), to_json_pretty(&json)?.as_bytes())?;
    Ok(AblationOutcome {
        output_dir: root,
        variants: done,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub variant: String,
    #[serde(flatten)]
    pub row: MetricRow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::invalid(format!("unknown format `{other}` (expected csv or json)"))),
        }
    }
}

fn find_aggregates(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_aggregates(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == AGGREGATE_FILE) {
            out.push(p);
        }
    }
    Ok(())
}

/// Every `aggregate.json` under `dir`, keyed by its directory relative to `dir`.
pub fn collect_reports(dir: &Path) -> Result<Vec<(String, Vec<AggregateRow>)>> {
    let mut files = Vec::new();
    find_aggregates(dir, &mut files)?;
    if files.is_empty() {
        return Err(Error::invalid(format!("no {AGGREGATE_FILE} found under {}", dir.display())));
    }
    files
        .iter()
        .map(|f| {
            let parent = f.parent().unwrap_or(dir);
            let rel = parent.strip_prefix(dir).unwrap_or(parent);
            let label = if rel.as_os_str().is_empty() {
                ".".to_string()
            } else {
                rel.to_string_lossy().replace('\\', "/")
            };
            Ok((label, read_json(f)?))
        })
        .collect()
}

/// Combined table of every experiment report under `dir`.
pub fn report(dir: &Path, format: ReportFormat) -> Result<String> {
    let reports = collect_reports(dir)?;
    let table: Vec<(String, MetricRow)> = reports
        .iter()
        .flat_map(|(v, rows)| rows.iter().map(move |r| (v.clone(), r.as_metric_row())))
        .collect();
    match format {
        ReportFormat::Csv => {
            let rows: Vec<(Option<&str>, &MetricRow)> = table.iter().map(|(v, r)| (Some(v.as_str()), r)).collect();
            Ok(rows_to_csv(&rows))
        }
        ReportFormat::Json => {
            let rows: Vec<ComparisonRow> = table
                .into_iter()
                .map(|(variant, row)| ComparisonRow { variant, row })
                .collect();
            to_json_pretty(&rows)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::PhantomSpec;

    fn base() -> ExperimentConfig {
        ExperimentConfig {
            data: DataConfig {
                phantom: Some(PhantomSpec::default()),
                ..DataConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn ablation_grids() {
        let v = ablation_variants(&base(), AblationAxis::Phases).unwrap();
        let names: Vec<&str> = v.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["PAVD", "AVD", "PVD", "PAD", "PAV"]);
        for (n, c) in &v {
            assert_eq!(c.effective_phases().len(), n.len());
            assert!(c.output_dir.ends_with(n));
        }
        assert_eq!(ablation_variants(&base(), AblationAxis::Aug).unwrap().len(), 6);
        let steps = ablation_variants(&base(), AblationAxis::Steps).unwrap();
        let names: Vec<&str> = steps.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["one_step", "two_step"]);
    }

    #[test]
    fn phase_ablation_rejects_fixed_phase_configs() {
        let c = ExperimentConfig {
            aug: AugConfig::SinglePhaseSingleSlice,
            ..base()
        };
        assert!(ablation_variants(&c, AblationAxis::Phases).is_err());
    }

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b/out.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        let names: Vec<_> = fs::read_dir(p.parent().unwrap()).unwrap().collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn axis_and_format_parse() {
        assert_eq!("phases".parse::<AblationAxis>().unwrap(), AblationAxis::Phases);
        assert!("phase".parse::<AblationAxis>().is_err());
        assert_eq!("json".parse::<ReportFormat>().unwrap(), ReportFormat::Json);
    }
}
