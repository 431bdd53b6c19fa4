use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Args;
use railinspect::inspect::{self, format_text_report, render_overlay, Frame, InspectionReport, Verdict};
use railinspect::labels::{build_run_manifest, inventory, parse_number_list, ComponentKind, PairingPolicy, RunManifest, CASES, TRIALS};
use railinspect::metrics::{
    self, case_stats, confusion_from_sets, likert_score, overall_acceptance, read_likert_csv, roc_sweep,
    ConfusionMatrix, EvalRun, LikertScore, RubricFlags, Summary,
};
use railinspect::scene::{build_cnn_dataset, generate_experiment, read_ground_truth, standard_geometry, SplitCounts};
use railinspect::DefectSet;
use serde::{Deserialize, Serialize};

use crate::config::usage;
use crate::{Ctx, PipelineFlags, EXIT_NOT_SAFE, EXIT_OK, EXIT_RUNTIME};

fn number_list(text: &str, what: &str, max: u8) -> Result<Vec<u8>> {
    let list = parse_number_list(text).map_err(|e| usage(format!("--{what}: {e}")))?;
    if list.is_empty() {
        return Err(usage(format!("--{what} selects nothing")));
    }
    if let Some(bad) = list.iter().find(|v| !(1..=max).contains(*v)) {
        return Err(usage(format!("--{what}: {bad} outside 1-{max}")));
    }
    Ok(list)
}

fn load_gray(path: &Path) -> Result<image::GrayImage> {
    Ok(image::open(path).with_context(|| format!("reading {}", path.display()))?.to_luma8())
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Render the 15-case x 5-trial experiment frames
    #[arg(long)]
    pub experiment: bool,
    /// Build a safe/defective CNN dataset
    #[arg(long)]
    pub dataset: bool,
    #[arg(long, default_value = "1-15")]
    pub cases: String,
    #[arg(long, default_value = "1-5")]
    pub trials: String,
    /// Defect kinds for the dataset, e.g. `block` or `screw,washer`
    #[arg(long)]
    pub kinds: Option<String>,
    /// Dataset image side in pixels
    #[arg(long)]
    pub size: Option<u32>,
    /// Train, validation and test image counts, e.g. `400,200,200`
    #[arg(long)]
    pub counts: Option<String>,
    /// Fraction of safe images per split
    #[arg(long)]
    pub balance: Option<f64>,
}

pub fn generate(ctx: &mut Ctx, args: GenerateArgs) -> Result<i32> {
    if !args.experiment && !args.dataset {
        return Err(usage("generate needs --experiment and/or --dataset"));
    }
    let cases = number_list(&args.cases, "cases", CASES)?;
    let trials = number_list(&args.trials, "trials", TRIALS)?;
    let spec = &mut ctx.cfg.dataset;
    if let Some(kinds) = &args.kinds {
        spec.defect_kinds = kinds
            .split(',')
            .map(|k| k.trim().parse::<ComponentKind>())
            .collect::<Result<_, _>>()
            .map_err(|e| usage(format!("--kinds: {e}")))?;
    }
    if let Some(size) = args.size {
        spec.image_size = size;
    }
    if let Some(counts) = &args.counts {
        let n: Vec<usize> = counts
            .split(',')
            .map(|c| c.trim().parse())
            .collect::<Result<_, _>>()
            .map_err(|_| usage(format!("--counts: {counts:?} is not a list of numbers")))?;
        let [train, valid, test] = n[..] else {
            return Err(usage("--counts needs three values: train,valid,test"));
        };
        spec.counts = SplitCounts { train, valid, test };
    }
    if let Some(b) = args.balance {
        spec.class_balance = b;
    }
    spec.validate().map_err(|e| usage(e.to_string()))?;
    ctx.cfg.scene.validate().map_err(|e| usage(e.to_string()))?;

    let out = ctx.cfg.out.clone();
    let both = args.experiment && args.dataset;
    if args.experiment {
        let dir = if both { out.join("experiment") } else { out.clone() };
        let frames = generate_experiment(&dir, &cases, &trials, &ctx.cfg.scene)?;
        ctx.say(format!("wrote {} frames to {}", frames.len(), dir.display()));
    }
    if args.dataset {
        let dir = if both { out.join("dataset") } else { out.clone() };
        let manifest = build_cnn_dataset(&dir, &ctx.cfg.dataset, &ctx.cfg.scene)?;
        ctx.say(format!("wrote {} dataset images to {}", manifest.len(), dir.display()));
    }
    ctx.cfg.echo(&out)?;
    Ok(EXIT_OK)
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Control (reference) frame of the intact track
    #[arg(long)]
    pub control: PathBuf,
    /// Frame under inspection
    #[arg(long)]
    pub test: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
}

fn write_report(dir: &Path, stem: &str, report: &InspectionReport, variable: &image::GrayImage) -> Result<Vec<String>> {
    let lines = format_text_report(report);
    let txt = dir.join(format!("{stem}.txt"));
    fs::write(&txt, lines.join("\n") + "\n").with_context(|| format!("writing {}", txt.display()))?;
    write_json(&dir.join(format!("{stem}.json")), report)?;
    if report.verdict.is_some() {
        let png = dir.join(format!("{stem}_overlay.png"));
        render_overlay(variable, report)
            .save(&png)
            .with_context(|| format!("writing {}", png.display()))?;
    }
    Ok(lines)
}

pub fn inspect(ctx: &mut Ctx, args: InspectArgs) -> Result<i32> {
    args.pipeline.apply(&mut ctx.cfg);
    ctx.cfg.pipeline.validate().map_err(|e| usage(e.to_string()))?;
    let control = Frame::new(file_stem(&args.control), load_gray(&args.control)?);
    let variable = Frame::new(file_stem(&args.test), load_gray(&args.test)?);
    let geometry = standard_geometry(&ctx.cfg.scene)?;
    let report = inspect::inspect(&control, &variable, &geometry, &ctx.cfg.pipeline);

    let out = ctx.cfg.out.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    ctx.cfg.echo(&out)?;
    let lines = write_report(&out, "report", &report, &variable.image)?;
    for line in &lines {
        ctx.say(line);
    }
    match report.verdict {
        Some(Verdict::Safe) => Ok(EXIT_OK),
        Some(Verdict::NotSafe) => Ok(EXIT_NOT_SAFE),
        None => {
            let failed = report.step_log.iter().find(|s| !s.ok).map(|s| s.detail.clone()).unwrap_or_default();
            eprintln!("error: inspection failed: {failed}");
            Ok(EXIT_RUNTIME)
        }
    }
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    /// Directory written by `generate --experiment`
    #[arg(long)]
    pub experiment: PathBuf,
    /// Control pairing: `same` (trial t vs control t) or `shifted`
    #[arg(long, default_value = "same")]
    pub pairing: PairingPolicy,
    #[arg(long, default_value = "1-15")]
    pub cases: String,
    #[arg(long, default_value = "1-5")]
    pub trials: String,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
}

/// Aggregate results of a batch run, written as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub runs: usize,
    pub verdict_correct: usize,
    pub exact_label_matches: usize,
    pub confusion: ConfusionMatrix,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub acceptance_percent: Option<f64>,
    pub score_summary: Option<Summary>,
    pub missing: Vec<String>,
}

pub const BATCH_SUMMARY: &str = "summary.json";

fn manifest_for(experiment: &Path, cases: &str, trials: &str, pairing: PairingPolicy) -> Result<(RunManifest, BTreeMap<String, DefectSet>)> {
    let cases = number_list(cases, "cases", CASES)?;
    let trials = number_list(trials, "trials", TRIALS)?;
    let manifest = build_run_manifest(&cases, &trials, pairing)?;
    let truth = read_ground_truth(experiment)
        .with_context(|| format!("reading ground truth in {}", experiment.display()))?;
    Ok((manifest, truth))
}

pub fn inspect_batch(ctx: &mut Ctx, args: BatchArgs) -> Result<i32> {
    args.pipeline.apply(&mut ctx.cfg);
    ctx.cfg.pipeline.validate().map_err(|e| usage(e.to_string()))?;
    let (manifest, truth) = manifest_for(&args.experiment, &args.cases, &args.trials, args.pairing)?;
    let geometry = standard_geometry(&ctx.cfg.scene)?;
    let out = ctx.cfg.out.clone();
    let reports_dir = out.join("reports");
    fs::create_dir_all(&reports_dir).with_context(|| format!("creating {}", reports_dir.display()))?;
    ctx.cfg.echo(&out)?;
    write_json(&out.join("manifest.json"), &manifest)?;

    let started = Instant::now();
    let universe = inventory();
    let mut missing = Vec::new();
    let mut confusion_rows = Vec::new();
    let mut scores: Vec<LikertScore> = Vec::new();
    let (mut verdict_correct, mut exact) = (0, 0);
    let mut cache: BTreeMap<PathBuf, image::GrayImage> = BTreeMap::new();
    for pair in &manifest.pairs {
        let mut load = |name: String| -> Option<image::GrayImage> {
            let path = args.experiment.join(format!("{name}.png"));
            if let Some(img) = cache.get(&path) {
                return Some(img.clone());
            }
            match load_gray(&path) {
                Ok(img) => {
                    cache.insert(path, img.clone());
                    Some(img)
                }
                Err(e) => {
                    eprintln!("missing: {e:#}");
                    missing.push(path.display().to_string());
                    None
                }
            }
        };
        let control = load(pair.control.to_string());
        let variable = load(pair.variable.to_string());
        let (Some(control), Some(variable)) = (control, variable) else { continue };
        let variable_name = pair.variable.to_string();
        let Some(expected) = truth.get(&variable_name).cloned() else {
            eprintln!("missing: no ground truth for {variable_name}");
            missing.push(format!("ground truth for {variable_name}"));
            continue;
        };

        let report = inspect::inspect(
            &Frame::new(pair.control.to_string(), control),
            &Frame::new(variable_name.clone(), variable.clone()),
            &geometry,
            &ctx.cfg.pipeline,
        );
        write_report(&reports_dir, &variable_name, &report, &variable)?;
        let want = if expected.is_empty() { Verdict::Safe } else { Verdict::NotSafe };
        verdict_correct += usize::from(report.verdict == Some(want));
        exact += usize::from(report.defect_labels == expected);
        confusion_rows.push((variable_name.clone(), confusion_from_sets(&expected, &report.defect_labels, &universe)?));
        let flags = RubricFlags::from_report(&report, &expected);
        scores.push(likert_score(
            pair.variable.case_number(),
            pair.variable.trial(),
            &expected,
            &report.defect_labels,
            flags,
        ));
        ctx.say(format!(
            "{} vs {}: {} [{}]",
            variable_name,
            pair.control,
            report.verdict.map_or("UNDETERMINED", |v| v.text()),
            report.defect_labels
        ));
    }

    let total: ConfusionMatrix = confusion_rows.iter().map(|(_, cm)| *cm).sum();
    metrics::write_confusion_csv(&out.join("confusion.csv"), &confusion_rows)?;
    metrics::write_likert_csv(&out.join("likert.csv"), &scores)?;
    let acceptance = overall_acceptance(&scores).ok();
    let stats = case_stats(&scores).ok();
    if let Some(stats) = &stats {
        metrics::write_stats_csv(&out.join("stats.csv"), stats, acceptance)?;
        metrics::write_histogram_csv(&out.join("histogram.csv"), &stats.histogram)?;
    }
    let summary = BatchSummary {
        runs: confusion_rows.len(),
        verdict_correct,
        exact_label_matches: exact,
        confusion: total,
        tpr: total.tpr().ok(),
        fpr: total.fpr().ok(),
        acceptance_percent: acceptance,
        score_summary: stats.map(|s| s.overall),
        missing: missing.clone(),
    };
    write_json(&out.join(BATCH_SUMMARY), &summary)?;

    let rate = |r: Option<f64>| r.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    ctx.say(format!(
        "{} runs in {:.1}s: verdict correct {}, exact labels {}, TPR {}, FPR {}, acceptance {}",
        summary.runs,
        started.elapsed().as_secs_f64(),
        verdict_correct,
        exact,
        rate(summary.tpr),
        rate(summary.fpr),
        acceptance.map_or("n/a".to_string(), |a| format!("{a:.3}%"))
    ));
    if missing.is_empty() {
        Ok(EXIT_OK)
    } else {
        eprintln!("error: {} input(s) missing; partial results written", missing.len());
        Ok(EXIT_RUNTIME)
    }
}

#[derive(Debug, Args)]
pub struct RocArgs {
    #[arg(long)]
    pub experiment: PathBuf,
    /// Range `lo:hi` or list `5,10,20`
    #[arg(long, default_value = "1:60")]
    pub thresholds: String,
    #[arg(long, default_value = "same")]
    pub pairing: PairingPolicy,
    #[arg(long, default_value = "1-15")]
    pub cases: String,
    #[arg(long, default_value = "1-5")]
    pub trials: String,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
}

pub fn parse_thresholds(text: &str) -> Result<Vec<u8>> {
    let bad = || usage(format!("--thresholds: {text:?} is not lo:hi or a list"));
    let list: Vec<u8> = match text.split_once(':') {
        Some((lo, hi)) => {
            let (lo, hi): (u8, u8) = (lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?);
            (lo..=hi).collect()
        }
        None => text
            .split(',')
            .map(|t| t.trim().parse())
            .collect::<Result<_, _>>()
            .map_err(|_| bad())?,
    };
    if list.is_empty() {
        return Err(bad());
    }
    Ok(list)
}

pub fn roc(ctx: &mut Ctx, args: RocArgs) -> Result<i32> {
    args.pipeline.apply(&mut ctx.cfg);
    let thresholds = parse_thresholds(&args.thresholds)?;
    let (manifest, truth) = manifest_for(&args.experiment, &args.cases, &args.trials, args.pairing)?;
    let mut runs = Vec::with_capacity(manifest.pairs.len());
    for pair in &manifest.pairs {
        let name = pair.variable.to_string();
        let expected = truth
            .get(&name)
            .cloned()
            .with_context(|| format!("no ground truth for {name}"))?;
        runs.push(EvalRun {
            control: load_gray(&args.experiment.join(pair.control.file_name("png")))?,
            variable: load_gray(&args.experiment.join(pair.variable.file_name("png")))?,
            expected,
        });
    }
    let geometry = standard_geometry(&ctx.cfg.scene)?;
    let curve = roc_sweep(&runs, &geometry, &ctx.cfg.pipeline, &thresholds).map_err(|e| match e {
        metrics::MetricsError::InvalidThresholds(m) => usage(m),
        other => other.into(),
    })?;
    let out = ctx.cfg.out.clone();
    ctx.cfg.echo(&out)?;
    metrics::write_roc_csv(&out.join("roc.csv"), &curve)?;
    ctx.say(format!("{} thresholds over {} runs, monotone: {}", curve.points.len(), runs.len(), curve.is_monotone()));
    for p in &curve.points {
        ctx.say(format!("T={:3} TPR={:.4} FPR={:.4}", p.threshold, p.tpr, p.fpr));
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Output directory of an `inspect-batch` run
    #[arg(long)]
    pub run: PathBuf,
}

pub fn report(ctx: &mut Ctx, args: ReportArgs, out_given: bool) -> Result<i32> {
    let scores = read_likert_csv(&args.run.join("likert.csv"))
        .with_context(|| format!("reading scores in {}", args.run.display()))?;
    let stats = case_stats(&scores)?;
    let acceptance = overall_acceptance(&scores).ok();
    let out = if out_given { ctx.cfg.out.clone() } else { args.run.clone() };
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    metrics::write_stats_csv(&out.join("stats.csv"), &stats, acceptance)?;
    metrics::write_histogram_csv(&out.join("histogram.csv"), &stats.histogram)?;
    if out_given {
        ctx.cfg.echo(&out)?;
    }
    if let Some(a) = acceptance {
        ctx.say(format!("overall acceptance: {a:.3}%"));
    }
    ctx.say(format!(
        "scores: n={} mean={:.4} stddev={:.4} variance={:.4}",
        stats.overall.count, stats.overall.mean, stats.overall.stddev, stats.overall.variance
    ));
    for (rating, label) in metrics::HISTOGRAM_BINS.iter().enumerate() {
        ctx.say(format!("  {label:>3}: {}", stats.histogram.counts[rating]));
    }
    Ok(EXIT_OK)
}
