//! Evaluation layer: component-level confusion matrices, TPR/FPR, threshold
//! sweeps, Likert rubric scoring, descriptive statistics and CSV output.

use std::collections::BTreeMap;
use std::ops::{Add, AddAssign};
use std::path::Path;

use image::GrayImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inspect::{self, InspectError, InspectionReport, PipelineConfig, Stage, Verdict};
use crate::labels::{inventory, ComponentId, DefectSet, CASES, TRIALS};
use crate::scene::TrackGeometry;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{0} is undefined: zero denominator")]
    UndefinedRate(&'static str),
    #[error("label {0} is outside the component universe")]
    OutsideUniverse(ComponentId),
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
    #[error("incomplete score grid: {0}")]
    IncompleteGrid(String),
    #[error("no values to summarize")]
    Empty,
    #[error(transparent)]
    Pipeline(#[from] InspectError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }

    pub fn tpr(&self) -> Result<f64, MetricsError> {
        tpr(self)
    }

    pub fn fpr(&self) -> Result<f64, MetricsError> {
        fpr(self)
    }

    pub fn accuracy(&self) -> Result<f64, MetricsError> {
        match self.total() {
            0 => Err(MetricsError::UndefinedRate("accuracy")),
            n => Ok((self.tp + self.tn) as f64 / n as f64),
        }
    }

    /// Records one binary decision with "defective" as the positive class.
    pub fn record(&mut self, actual_positive: bool, predicted_positive: bool) {
        match (actual_positive, predicted_positive) {
            (true, true) => self.tp += 1,
            (true, false) => self.fn_ += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
        }
    }
}

impl Add for ConfusionMatrix {
    type Output = ConfusionMatrix;

    fn add(self, o: ConfusionMatrix) -> ConfusionMatrix {
        ConfusionMatrix { tp: self.tp + o.tp, fn_: self.fn_ + o.fn_, fp: self.fp + o.fp, tn: self.tn + o.tn }
    }
}

impl AddAssign for ConfusionMatrix {
    fn add_assign(&mut self, o: ConfusionMatrix) {
        *self = *self + o;
    }
}

impl std::iter::Sum for ConfusionMatrix {
    fn sum<I: Iterator<Item = ConfusionMatrix>>(iter: I) -> Self {
        iter.fold(ConfusionMatrix::default(), Add::add)
    }
}

/// TP / (TP + FN)
pub fn tpr(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    match cm.tp + cm.fn_ {
        0 => Err(MetricsError::UndefinedRate("TPR")),
        d => Ok(cm.tp as f64 / d as f64),
    }
}

/// FP / (FP + TN)
pub fn fpr(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    match cm.fp + cm.tn {
        0 => Err(MetricsError::UndefinedRate("FPR")),
        d => Ok(cm.fp as f64 / d as f64),
    }
}

/// Component-level matrix for one run over `universe`.
pub fn confusion_from_sets(
    expected: &DefectSet,
    reported: &DefectSet,
    universe: &[ComponentId],
) -> Result<ConfusionMatrix, MetricsError> {
    for id in expected.iter().chain(reported.iter()) {
        if !universe.contains(id) {
            return Err(MetricsError::OutsideUniverse(*id));
        }
    }
    let tp = expected.intersection_count(reported) as u64;
    let fn_ = expected.difference_count(reported) as u64;
    let fp = reported.difference_count(expected) as u64;
    Ok(ConfusionMatrix { tp, fn_, fp, tn: universe.len() as u64 - tp - fn_ - fp })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: u8,
    pub tpr: f64,
    pub fpr: f64,
    pub confusion: ConfusionMatrix,
    /// Counts from the labels reported at this threshold alone.
    pub raw_confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    pub fn at(&self, threshold: u8) -> Option<&RocPoint> {
        self.points.iter().find(|p| p.threshold == threshold)
    }

    /// Thresholds strictly increasing, TPR and FPR non-increasing.
    pub fn is_monotone(&self) -> bool {
        self.points.windows(2).all(|w| {
            w[0].threshold < w[1].threshold && w[1].tpr <= w[0].tpr && w[1].fpr <= w[0].fpr
        })
    }
}

/// One control/variable pair with its ground truth.
#[derive(Debug, Clone)]
pub struct EvalRun {
    pub control: GrayImage,
    pub variable: GrayImage,
    pub expected: DefectSet,
}

/// Sweeps the difference threshold over `runs`.
///
/// A component reported at threshold `T` counts as reported at every lower
/// threshold too (its detection score is the highest threshold at which it
/// survives), which makes both rates non-increasing in `T`.
pub fn roc_sweep(
    runs: &[EvalRun],
    geometry: &TrackGeometry,
    config: &PipelineConfig,
    thresholds: &[u8],
) -> Result<RocCurve, MetricsError> {
    if thresholds.is_empty() {
        return Err(MetricsError::InvalidThresholds("empty threshold list".into()));
    }
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MetricsError::InvalidThresholds("thresholds must be strictly increasing".into()));
    }
    if let Some(t) = thresholds.iter().find(|t| !(1..=254).contains(*t)) {
        return Err(MetricsError::InvalidThresholds(format!("threshold {t} outside [1, 254]")));
    }
    config.validate()?;
    let universe = inventory();
    let prepared = runs
        .iter()
        .map(|r| inspect::prepare(&r.control, &r.variable, config))
        .collect::<Result<Vec<_>, _>>()?;

    let mut envelope = vec![DefectSet::new(); runs.len()];
    let mut points = Vec::with_capacity(thresholds.len());
    for &threshold in thresholds.iter().rev() {
        let cfg = PipelineConfig { diff_threshold: threshold, ..config.clone() };
        let mut confusion = ConfusionMatrix::default();
        let mut raw_confusion = ConfusionMatrix::default();
        for ((run, pair), env) in runs.iter().zip(&prepared).zip(envelope.iter_mut()) {
            let labels = inspect::detect(pair, geometry, &cfg).labels;
            raw_confusion += confusion_from_sets(&run.expected, &labels, &universe)?;
            for id in labels.iter() {
                env.insert(*id);
            }
            confusion += confusion_from_sets(&run.expected, env, &universe)?;
        }
        points.push(RocPoint {
            threshold,
            tpr: tpr(&confusion)?,
            fpr: fpr(&confusion)?,
            confusion,
            raw_confusion,
        });
    }
    points.reverse();
    Ok(RocCurve { points })
}

/// Observations feeding rubric items (i), (ii), (iv) and (v).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricFlags {
    pub textual_ok: bool,
    pub steps_ok: bool,
    pub graphical_steps_ok: bool,
    pub concur: bool,
}

impl RubricFlags {
    pub fn from_report(report: &InspectionReport, expected: &DefectSet) -> Self {
        let want = if expected.is_empty() { Verdict::Safe } else { Verdict::NotSafe };
        let visual_ok = report.step_log.iter().any(|r| r.stage == Stage::PresentVisual && r.ok);
        let concur = match report.verdict {
            Some(v) => (v == Verdict::NotSafe) == !report.overlay_boxes().is_empty(),
            None => false,
        };
        RubricFlags {
            textual_ok: report.verdict == Some(want),
            steps_ok: report.steps_complete(),
            graphical_steps_ok: report.steps_complete() && visual_ok,
            concur,
        }
    }

    pub fn all() -> Self {
        RubricFlags { textual_ok: true, steps_ok: true, graphical_steps_ok: true, concur: true }
    }

    pub fn none() -> Self {
        RubricFlags { textual_ok: false, steps_ok: false, graphical_steps_ok: false, concur: false }
    }
}

/// Rubric items; detection credit and false-positive penalty in thirds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LikertComponents {
    pub textual: u8,
    pub steps: u8,
    pub detection_thirds: u8,
    pub graphical_steps: u8,
    pub concur: u8,
    pub false_positive_thirds: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LikertScore {
    pub case: u8,
    pub trial: u8,
    pub components: LikertComponents,
}

impl LikertScore {
    /// Score in thirds, exact.
    pub fn thirds(&self) -> i32 {
        let c = &self.components;
        3 * (c.textual + c.steps + c.graphical_steps + c.concur) as i32 + c.detection_thirds as i32
            - c.false_positive_thirds as i32
    }

    pub fn score(&self) -> f64 {
        self.thirds() as f64 / 3.0
    }
}

/// Scores one run on the six-item rubric, range [-1, 5].
pub fn likert_score(
    case: u8,
    trial: u8,
    expected: &DefectSet,
    reported: &DefectSet,
    flags: RubricFlags,
) -> LikertScore {
    let detection_thirds = if expected.is_empty() {
        3
    } else {
        let hit = expected.intersection_count(reported);
        let recall = hit as f64 / expected.len() as f64;
        match recall {
            r if r >= 1.0 => 3,
            r if r >= 0.5 => 2,
            r if r > 0.0 => 1,
            _ => 0,
        }
    };
    let spurious = reported.difference_count(expected);
    let false_positive_thirds = spurious.min(3) as u8;
    LikertScore {
        case,
        trial,
        components: LikertComponents {
            textual: flags.textual_ok as u8,
            steps: flags.steps_ok as u8,
            detection_thirds,
            graphical_steps: flags.graphical_steps_ok as u8,
            concur: flags.concur as u8,
            false_positive_thirds,
        },
    }
}

fn per_case_means(scores: &[LikertScore]) -> BTreeMap<u8, Vec<f64>> {
    let mut by_case: BTreeMap<u8, Vec<f64>> = BTreeMap::new();
    for s in scores {
        by_case.entry(s.case).or_default().push(s.score());
    }
    by_case
}

/// Mean of per-case trial means as a percentage of the 5-point maximum.
/// Requires exactly one score per (case, trial) of the 15 x 5 grid.
pub fn overall_acceptance(scores: &[LikertScore]) -> Result<f64, MetricsError> {
    let mut seen = BTreeMap::new();
    for s in scores {
        if seen.insert((s.case, s.trial), ()).is_some() {
            return Err(MetricsError::IncompleteGrid(format!("duplicate case {} trial {}", s.case, s.trial)));
        }
    }
    for case in 1..=CASES {
        for trial in 1..=TRIALS {
            if !seen.contains_key(&(case, trial)) {
                return Err(MetricsError::IncompleteGrid(format!("missing case {case} trial {trial}")));
            }
        }
    }
    if seen.len() != (CASES * TRIALS) as usize {
        return Err(MetricsError::IncompleteGrid("scores outside the 15 x 5 grid".into()));
    }
    let case_means: Vec<f64> =
        per_case_means(scores).values().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
    Ok(acceptance_from_case_means(&case_means))
}

pub fn acceptance_from_case_means(case_means: &[f64]) -> f64 {
    let mean = case_means.iter().sum::<f64>() / case_means.len() as f64;
    mean / 5.0 * 100.0
}

/// Population statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub stddev: f64,
    pub variance: f64,
}

pub fn summary(values: &[f64]) -> Result<Summary, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let stddev = variance.sqrt();
    // keep variance == stddev^2 bit-for-bit consistent
    Ok(Summary { count: values.len(), mean, stddev, variance: stddev * stddev })
}

pub const HISTOGRAM_BINS: [&str; 5] = ["<=1", "2", "3", "4", "5"];

/// Frequencies at ratings {<=1, 2, 3, 4, 5}; rating `b` owns `[b - 0.5, b + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Histogram {
    pub counts: [usize; 5],
}

impl Histogram {
    pub fn count(&self, rating: u8) -> usize {
        match rating {
            0 | 1 => self.counts[0],
            2..=5 => self.counts[rating as usize - 1],
            _ => 0,
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

pub fn histogram(values: &[f64]) -> Result<Histogram, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut h = Histogram::default();
    for &v in values {
        let bin = if v < 1.5 { 0 } else { ((v + 0.5).floor() as usize).clamp(2, 5) - 1 };
        h.counts[bin] += 1;
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseStats {
    pub per_case: BTreeMap<u8, Summary>,
    pub overall: Summary,
    pub histogram: Histogram,
}

pub fn case_stats(scores: &[LikertScore]) -> Result<CaseStats, MetricsError> {
    let values: Vec<f64> = scores.iter().map(LikertScore::score).collect();
    let per_case = per_case_means(scores)
        .into_iter()
        .map(|(case, v)| summary(&v).map(|s| (case, s)))
        .collect::<Result<_, _>>()?;
    Ok(CaseStats { per_case, overall: summary(&values)?, histogram: histogram(&values)? })
}

pub fn write_confusion_csv(path: &Path, rows: &[(String, ConfusionMatrix)]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["run", "tp", "fn", "fp", "tn"])?;
    for (run, cm) in rows {
        w.write_record([run.clone(), cm.tp.to_string(), cm.fn_.to_string(), cm.fp.to_string(), cm.tn.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_roc_csv(path: &Path, curve: &RocCurve) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["threshold", "tpr", "fpr"])?;
    for p in &curve.points {
        w.write_record([p.threshold.to_string(), p.tpr.to_string(), p.fpr.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

const LIKERT_HEADER: [&str; 9] = [
    "case",
    "trial",
    "score",
    "textual",
    "steps",
    "detection_thirds",
    "graphical_steps",
    "concur",
    "false_positive_thirds",
];

pub fn write_likert_csv(path: &Path, scores: &[LikertScore]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(LIKERT_HEADER)?;
    for s in scores {
        let c = &s.components;
        w.write_record([
            s.case.to_string(),
            s.trial.to_string(),
            format!("{:.6}", s.score()),
            c.textual.to_string(),
            c.steps.to_string(),
            c.detection_thirds.to_string(),
            c.graphical_steps.to_string(),
            c.concur.to_string(),
            c.false_positive_thirds.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_likert_csv(path: &Path) -> Result<Vec<LikertScore>, MetricsError> {
    #[derive(Deserialize)]
    struct Row {
        case: u8,
        trial: u8,
        #[allow(dead_code)]
        score: f64,
        textual: u8,
        steps: u8,
        detection_thirds: u8,
        graphical_steps: u8,
        concur: u8,
        false_positive_thirds: u8,
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<Row>()
        .map(|row| {
            let row = row?;
            Ok(LikertScore {
                case: row.case,
                trial: row.trial,
                components: LikertComponents {
                    textual: row.textual,
                    steps: row.steps,
                    detection_thirds: row.detection_thirds,
                    graphical_steps: row.graphical_steps,
                    concur: row.concur,
                    false_positive_thirds: row.false_positive_thirds,
                },
            })
        })
        .collect()
}

pub fn write_stats_csv(path: &Path, stats: &CaseStats, acceptance: Option<f64>) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["scope", "count", "mean", "stddev", "variance"])?;
    let mut row = |scope: String, s: &Summary| {
        w.write_record([
            scope,
            s.count.to_string(),
            format!("{:.6}", s.mean),
            format!("{:.6}", s.stddev),
            format!("{:.6}", s.variance),
        ])
    };
    for (case, s) in &stats.per_case {
        row(format!("case{case:02}"), s)?;
    }
    row("overall".into(), &stats.overall)?;
    if let Some(a) = acceptance {
        w.write_record(["acceptance_percent".to_string(), String::new(), format!("{a:.6}"), String::new(), String::new()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_histogram_csv(path: &Path, h: &Histogram) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["rating", "frequency"])?;
    for (label, count) in HISTOGRAM_BINS.iter().zip(h.counts) {
        w.write_record([label.to_string(), count.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
