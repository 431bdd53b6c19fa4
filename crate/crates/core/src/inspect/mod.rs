//! Reference-comparison inspection: a control frame of the intact track is
//! compared with the frame under inspection.
//!
//! Stages: acquire both frames, preprocess (median + contrast stretch),
//! extract features (translation registration + signed thresholded
//! difference), detect and segment points of interest (opening +
//! connected components), localize them to track components, present the
//! overlay and decide.

mod localize;
mod mask;
mod preprocess;
mod register;
mod segment;

use std::fmt;

use image::{GrayImage, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::DefectSet;
use crate::scene::TrackGeometry;

pub use localize::localize;
pub use mask::{difference_map, ChangeMasks, Mask};
pub use preprocess::{contrast_stretch, median_filter, preprocess, to_gray};
pub use register::{register, Offset};
pub use segment::{open, segment, DefectBlob, Direction, PixelBox};

pub const SAFE_VERDICT: &str = "TRACK IS SAFE";
pub const NOT_SAFE_VERDICT: &str = "DANGER: ***TRACK IS NOT SAFE!***";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InspectError {
    #[error("image is empty")]
    EmptyImage,
    #[error("dimension mismatch: reference {reference:?}, test {test:?}")]
    DimensionMismatch { reference: (u32, u32), test: (u32, u32) },
    #[error("registration window {window} leaves no overlap in a {width}x{height} image")]
    WindowTooLarge { window: u32, width: u32, height: u32 },
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Gray-level difference that must be exceeded to flag a pixel.
    pub diff_threshold: u8,
    pub min_blob_area: usize,
    pub registration_window: u32,
    pub median_radius: u32,
    pub morph_open_radius: u32,
    pub max_mapping_distance: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            diff_threshold: 10,
            min_blob_area: 12,
            registration_window: 8,
            median_radius: 1,
            morph_open_radius: 1,
            max_mapping_distance: 15.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), InspectError> {
        if !(1..=254).contains(&self.diff_threshold) {
            return Err(InspectError::InvalidConfig(format!(
                "threshold {} outside [1, 254]",
                self.diff_threshold
            )));
        }
        if !(self.max_mapping_distance.is_finite() && self.max_mapping_distance >= 0.0) {
            return Err(InspectError::InvalidConfig("mapping distance must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// A named grayscale frame.
#[derive(Debug, Clone)]
pub struct Frame {
    pub name: String,
    pub image: GrayImage,
}

impl Frame {
    pub fn new(name: impl Into<String>, image: GrayImage) -> Self {
        Self { name: name.into(), image }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Safe,
    NotSafe,
}

impl Verdict {
    pub fn text(self) -> &'static str {
        match self {
            Verdict::Safe => SAFE_VERDICT,
            Verdict::NotSafe => NOT_SAFE_VERDICT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Acquire,
    Preprocess,
    ExtractFeatures,
    DetectSegment,
    PresentVisual,
    Decide,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Acquire,
        Stage::Preprocess,
        Stage::ExtractFeatures,
        Stage::DetectSegment,
        Stage::PresentVisual,
        Stage::Decide,
    ];
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Acquire => "acquire",
            Stage::Preprocess => "preprocess",
            Stage::ExtractFeatures => "extract-features",
            Stage::DetectSegment => "detect-segment",
            Stage::PresentVisual => "present-visual",
            Stage::Decide => "decide",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub stage: Stage,
    pub ok: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectionReport {
    pub control_name: String,
    pub variable_name: String,
    /// Absent when a stage failed.
    pub verdict: Option<Verdict>,
    pub blobs: Vec<DefectBlob>,
    /// Surviving blobs too far from every component to be attributed.
    pub unmapped_blobs: Vec<DefectBlob>,
    pub defect_labels: DefectSet,
    pub offset: Offset,
    pub config: PipelineConfig,
    pub step_log: Vec<StepRecord>,
}

impl InspectionReport {
    /// All six stages ran and succeeded, in order.
    pub fn steps_complete(&self) -> bool {
        self.step_log.len() == Stage::ALL.len()
            && self.step_log.iter().zip(Stage::ALL).all(|(r, s)| r.stage == s && r.ok)
    }

    /// Overlay boxes in variable-frame coordinates.
    pub fn overlay_boxes(&self) -> Vec<PixelBox> {
        self.blobs
            .iter()
            .map(|b| {
                let bb = b.bounding_box;
                PixelBox {
                    x: (bb.x as i64 + self.offset.dx as i64).max(0) as u32,
                    y: (bb.y as i64 + self.offset.dy as i64).max(0) as u32,
                    ..bb
                }
            })
            .collect()
    }
}

/// Preprocessed, registered pair; threshold-independent work is done once.
#[derive(Debug, Clone)]
pub struct PreparedPair {
    pub reference: GrayImage,
    pub test: GrayImage,
    pub offset: Offset,
}

pub fn prepare(control: &GrayImage, variable: &GrayImage, config: &PipelineConfig) -> Result<PreparedPair, InspectError> {
    check_dimensions(control, variable)?;
    let reference = preprocess(control, config.median_radius)?;
    let test = preprocess(variable, config.median_radius)?;
    let offset = register(&reference, &test, config.registration_window)?;
    Ok(PreparedPair { reference, test, offset })
}

fn check_dimensions(control: &GrayImage, variable: &GrayImage) -> Result<(), InspectError> {
    if control.dimensions() != variable.dimensions() {
        return Err(InspectError::DimensionMismatch {
            reference: control.dimensions(),
            test: variable.dimensions(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub mapped: Vec<DefectBlob>,
    pub unmapped: Vec<DefectBlob>,
    pub labels: DefectSet,
}

/// Difference, segment both masks and localize at the configured threshold.
pub fn detect(pair: &PreparedPair, geometry: &TrackGeometry, config: &PipelineConfig) -> Detection {
    let masks = difference_map(&pair.reference, &pair.test, pair.offset, config.diff_threshold);
    let mut blobs = segment(&masks.missing, config.min_blob_area, config.morph_open_radius, Direction::MissingInTest);
    blobs.extend(segment(&masks.extra, config.min_blob_area, config.morph_open_radius, Direction::ExtraInTest));
    let (mapped, unmapped): (Vec<_>, Vec<_>) =
        localize(blobs, geometry, (0.0, 0.0), config.max_mapping_distance)
            .into_iter()
            .partition(|b| b.mapped.is_some());
    let labels = mapped.iter().filter_map(|b| b.mapped).collect();
    Detection { mapped, unmapped, labels }
}

/// Runs the full pipeline. `geometry` must describe the control frame.
///
/// A failing stage is recorded in the step log and leaves the verdict
/// absent; later stages are not run.
pub fn inspect(control: &Frame, variable: &Frame, geometry: &TrackGeometry, config: &PipelineConfig) -> InspectionReport {
    let mut report = InspectionReport {
        control_name: control.name.clone(),
        variable_name: variable.name.clone(),
        verdict: None,
        blobs: Vec::new(),
        unmapped_blobs: Vec::new(),
        defect_labels: DefectSet::new(),
        offset: Offset::default(),
        config: config.clone(),
        step_log: Vec::new(),
    };
    let mut log = |stage, result: Result<String, InspectError>| -> bool {
        let ok = result.is_ok();
        let detail = result.unwrap_or_else(|e| e.to_string());
        report.step_log.push(StepRecord { stage, ok, detail });
        ok
    };

    let acquired = config.validate().and_then(|_| check_dimensions(&control.image, &variable.image)).and_then(|_| {
        if control.image.width() == 0 || control.image.height() == 0 {
            Err(InspectError::EmptyImage)
        } else {
            Ok(format!("{}x{}", control.image.width(), control.image.height()))
        }
    });
    if !log(Stage::Acquire, acquired) {
        return report;
    }

    let pre = preprocess(&control.image, config.median_radius)
        .and_then(|r| preprocess(&variable.image, config.median_radius).map(|t| (r, t)));
    let (reference, test) = match pre {
        Ok(pair) => {
            log(Stage::Preprocess, Ok(format!("median radius {}, contrast stretched", config.median_radius)));
            pair
        }
        Err(e) => {
            log(Stage::Preprocess, Err(e));
            return report;
        }
    };

    let offset = match register(&reference, &test, config.registration_window) {
        Ok(o) => o,
        Err(e) => {
            log(Stage::ExtractFeatures, Err(e));
            return report;
        }
    };
    log(
        Stage::ExtractFeatures,
        Ok(format!("offset ({}, {}), threshold {}", offset.dx, offset.dy, config.diff_threshold)),
    );
    let detection = detect(&PreparedPair { reference, test, offset }, geometry, config);
    log(
        Stage::DetectSegment,
        Ok(format!("{} mapped, {} unmapped blobs", detection.mapped.len(), detection.unmapped.len())),
    );
    log(Stage::PresentVisual, Ok(format!("{} regions marked", detection.mapped.len())));
    let verdict = if detection.mapped.is_empty() { Verdict::Safe } else { Verdict::NotSafe };
    log(Stage::Decide, Ok(verdict.text().to_string()));

    report.offset = offset;
    report.verdict = Some(verdict);
    report.defect_labels = detection.labels;
    report.blobs = detection.mapped;
    report.unmapped_blobs = detection.unmapped;
    report
}

/// The operator-facing text log, one line per stage.
pub fn format_text_report(report: &InspectionReport) -> Vec<String> {
    let (c, v) = (&report.control_name, &report.variable_name);
    let mut lines = Vec::new();
    for record in report.step_log.iter().filter(|r| r.ok) {
        match record.stage {
            Stage::Acquire => {
                lines.push(format!("Acquiring Image 1 (Control): {c}"));
                lines.push(format!("Acquiring Image 2 (Variable): {v}"));
            }
            Stage::Preprocess => {
                lines.push(format!("Pre-processing Image 1 (Control): {c}"));
                lines.push(format!("Pre-processing Image 2 (Variable): {v}"));
            }
            Stage::ExtractFeatures => {
                lines.push(format!("Extract Image Features (Control vs. Variable): {c} vs. {v}"))
            }
            Stage::DetectSegment => {
                lines.push(format!("Detection/segmentation of POI (Control vs. Variable): {c} vs. {v}"))
            }
            Stage::PresentVisual => {
                lines.push(format!("Presenting Visual Track Problems (Control vs. Variable): {c} vs. {v}"))
            }
            Stage::Decide => {}
        }
    }
    let decision = match (report.verdict, report.step_log.iter().find(|r| !r.ok)) {
        (Some(verdict), _) => verdict.text().to_string(),
        (None, Some(failed)) => format!("UNDETERMINED ({} failed: {})", failed.stage, failed.detail),
        (None, None) => "UNDETERMINED".to_string(),
    };
    lines.push(format!(">> Prediction of Final Decision: {decision}"));
    lines
}

pub const RED: Rgb<u8> = Rgb([255, 0, 0]);

/// The variable frame in RGB with each defect's bounding box outlined in red.
pub fn render_overlay(variable: &GrayImage, report: &InspectionReport) -> RgbImage {
    let (w, h) = variable.dimensions();
    let mut out = RgbImage::from_fn(w, h, |x, y| {
        let v = variable.get_pixel(x, y)[0];
        Rgb([v, v, v])
    });
    for b in report.overlay_boxes() {
        if b.x >= w || b.y >= h {
            continue;
        }
        let x1 = (b.x + b.width - 1).min(w - 1);
        let y1 = (b.y + b.height - 1).min(h - 1);
        for x in b.x..=x1 {
            out.put_pixel(x, b.y, RED);
            out.put_pixel(x, y1, RED);
        }
        for y in b.y..=y1 {
            out.put_pixel(b.x, y, RED);
            out.put_pixel(x1, y, RED);
        }
    }
    out
}
