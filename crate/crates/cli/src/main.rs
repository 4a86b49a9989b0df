use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use pkcp_core::cohort::{load_manifest, save_manifest, split_by_patient, write_phantom_cohort, PhantomProfile, PhantomSpec, Split};
use pkcp_core::diagnosis::checkpoint::{self, SavedModel};
use pkcp_core::exec::with_thread_cap;
use pkcp_core::harness::{
    self, load_config, manifest_composites, predict_records, run_ablation_suite, run_experiment, threads_from_env,
    train_model, write_atomic, AblationAxis, ReportFormat,
};
use pkcp_core::metrics::detection::average_precision;
use pkcp_core::metrics::files::{evaluate_classification, read_detection_instances, read_json, rows_to_csv, to_json_pretty, ClassificationRecord};
use pkcp_core::model::{LeafClass, Phase};
use pkcp_core::pkcp::{enumerate_cohort, write_composites, ExpansionPolicy};
use pkcp_core::Execution;

#[derive(Parser)]
#[command(name = "pkcp", version, about = "Multi-phase lesion augmentation, two-stage diagnosis and evaluation")]
struct Cli {
    /// Run every stage on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-phase cohort (PNG slices + manifest.json).
    Phantom {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Patients per class, e.g. HH=10,OBHT=10,HB=10,OMHT=10.
        #[arg(long, default_value = "HH=10,OBHT=10,HB=10,OMHT=10")]
        counts: String,
        /// Image size as HxW.
        #[arg(long, default_value = "32x32")]
        size: String,
        #[arg(long, default_value_t = 4.0)]
        noise: f64,
        /// Lesion radius range in pixels, as MIN-MAX.
        #[arg(long, default_value = "5-9")]
        radius: String,
        /// Slices per phase (K).
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long, default_value = "clinical", value_parser = ["clinical", "ap-only"])]
        profile: String,
        /// Prefix for patient and report ids.
        #[arg(long, default_value = "")]
        id_prefix: String,
        /// Mark every generated report as held-out test data.
        #[arg(long)]
        held_out: bool,
    },
    /// Assign train/val patients in a manifest.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0.7)]
        train_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output manifest; defaults to rewriting the input.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Enumerate PKCP composites of a manifest.
    Enumerate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "default")]
        policy: String,
        /// Phase subset, e.g. PC,AP,PVP,DP.
        #[arg(long)]
        phases: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a one-step or two-step model and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Study-level predictions of a checkpoint over every report of a manifest.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one experiment config over all its seeds.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run an ablation grid derived from a base config.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = ["phases", "aug", "steps"])]
        axis: String,
    },
    /// Tabulate every aggregate.json under a directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "csv", value_parser = ["csv", "json"])]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a predictions file (classification or detection).
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, default_value = "classification", value_parser = ["classification", "detection"])]
        kind: String,
        /// IoU threshold for detection files.
        #[arg(long)]
        iou: Option<f64>,
        #[arg(long, default_value = "csv", value_parser = ["csv", "json"])]
        format: String,
    },
}

fn parse_counts(s: &str) -> Result<BTreeMap<LeafClass, usize>> {
    let mut counts: BTreeMap<LeafClass, usize> = LeafClass::ALL.iter().map(|&c| (c, 0)).collect();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let (k, v) = part
            .split_once('=')
            .with_context(|| format!("count `{part}` is not CLASS=N"))?;
        let class: LeafClass = k.parse()?;
        counts.insert(class, v.trim().parse().with_context(|| format!("bad count in `{part}`"))?);
    }
    Ok(counts)
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let (h, w) = s
        .to_ascii_lowercase()
        .split_once('x')
        .map(|(h, w)| (h.to_string(), w.to_string()))
        .with_context(|| format!("size `{s}` is not HxW"))?;
    Ok((h.trim().parse()?, w.trim().parse()?))
}

fn parse_radius(s: &str) -> Result<(f64, f64)> {
    let (lo, hi) = s.split_once('-').with_context(|| format!("radius `{s}` is not MIN-MAX"))?;
    Ok((lo.trim().parse()?, hi.trim().parse()?))
}

fn parse_phases(s: &str) -> Result<Vec<Phase>> {
    Ok(s.split(',').map(str::parse).collect::<pkcp_core::Result<Vec<Phase>>>()?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    match cli.command {
        Command::Phantom {
            out,
            seed,
            counts,
            size,
            noise,
            radius,
            depth,
            profile,
            id_prefix,
            held_out,
        } => {
            let (height, width) = parse_size(&size)?;
            let (radius_min, radius_max) = parse_radius(&radius)?;
            let spec = PhantomSpec {
                counts: parse_counts(&counts)?,
                height,
                width,
                noise_sigma: noise,
                radius_min,
                radius_max,
                depth_count: depth,
                seed,
                profile: if profile == "ap-only" { PhantomProfile::ApOnly } else { PhantomProfile::Clinical },
                id_prefix,
            };
            let mut cohort = write_phantom_cohort(&spec, &out, exec)?;
            if held_out {
                cohort.manifest.assign_all(Split::Test);
                save_manifest(&cohort.manifest, out.join(pkcp_core::cohort::MANIFEST_FILE))?;
            }
            println!(
                "wrote {} patients, {} slices to {}",
                cohort.manifest.patients.len(),
                cohort.manifest.slice_count(),
                out.display()
            );
        }
        Command::Split {
            manifest,
            train_fraction,
            seed,
            out,
        } => {
            let m = load_manifest(&manifest)?;
            let split = split_by_patient(&m, train_fraction, seed)?;
            let target = out.unwrap_or(manifest);
            save_manifest(&split, &target)?;
            for s in [Split::Train, Split::Val, Split::Test] {
                let c = split.counts(s);
                println!("{}: {} patients, {} slices", s.name(), c.patients, c.slices);
            }
        }
        Command::Enumerate {
            manifest,
            policy,
            phases,
            out,
        } => {
            let policy: ExpansionPolicy = policy.parse()?;
            let m = load_manifest(&manifest)?;
            let mut grids = m.load_grids(exec)?;
            if let Some(p) = phases {
                let subset = parse_phases(&p)?;
                grids = grids.iter().map(|g| g.restrict(&subset)).collect::<pkcp_core::Result<_>>()?;
            }
            let comps = enumerate_cohort(&grids, &policy, exec)?;
            let index = write_composites(&comps, &out)?;
            println!("wrote {} composites to {}", index.len(), out.display());
        }
        Command::Train { config, out } => {
            let mut c = load_config(&config)?;
            c.execution = exec;
            let model = train_model(&c)?;
            let bytes = match &model {
                SavedModel::TwoStage(m) => checkpoint::encode_two_stage(m)?,
                SavedModel::OneStep(m) => checkpoint::encode_one_step(m)?,
            };
            checkpoint::save(&out, &bytes)?;
            println!("wrote {} ({} bytes)", out.display(), bytes.len());
        }
        Command::Predict { model, manifest, out } => {
            let model = checkpoint::load(&model)?;
            let m = load_manifest(&manifest)?;
            let comps = manifest_composites(&m, model.phases(), exec)?;
            let records = predict_records(&model, &comps, exec)?;
            write_text(&out, &to_json_pretty(&records)?)?;
            println!("wrote {} predictions to {}", records.len(), out.display());
        }
        Command::Run { config } => {
            let mut c = load_config(&config)?;
            c.execution = exec;
            let outcome = run_experiment(&c)?;
            println!("{}", harness::aggregate_csv(&outcome.aggregate).trim_end());
            println!("outputs in {}", outcome.output_dir.display());
        }
        Command::Ablate { config, axis } => {
            let mut c = load_config(&config)?;
            c.execution = exec;
            let axis: AblationAxis = axis.parse()?;
            let outcome = run_ablation_suite(&c, axis)?;
            println!("{} variants, outputs in {}", outcome.variants.len(), outcome.output_dir.display());
        }
        Command::Report { input, format, out } => {
            let format: ReportFormat = format.parse()?;
            let text = harness::report(&input, format)?;
            match out {
                Some(p) => write_text(&p, &text)?,
                None => print!("{text}"),
            }
        }
        Command::Evaluate {
            predictions,
            kind,
            iou,
            format,
        } => {
            let rows = if kind == "detection" {
                let instances = read_detection_instances(&predictions, iou)?;
                let rep = average_precision(&instances)?;
                if format == "json" {
                    println!("{}", to_json_pretty(&rep)?);
                } else {
                    println!("metric,value");
                    println!("ap,{}", rep.ap);
                    for (name, v) in [("precision", rep.precision), ("recall", rep.recall), ("f1", rep.f1)] {
                        println!("{name},{}", v.map(|v| v.to_string()).unwrap_or_default());
                    }
                }
                return Ok(());
            } else {
                let records: Vec<ClassificationRecord> = read_json(&predictions)?;
                if records.is_empty() {
                    bail!("{} holds no predictions", predictions.display());
                }
                evaluate_classification(&records)?
            };
            if format == "json" {
                println!("{}", to_json_pretty(&rows)?);
            } else {
                let table: Vec<_> = rows.iter().map(|r| (None, r)).collect();
                print!("{}", rows_to_csv(&table));
            }
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let threads = threads_from_env()?;
    with_thread_cap(threads, || run(cli))
}
