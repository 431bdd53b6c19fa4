//! Procedural renderer for the miniature test track and the dataset builders
//! that feed both the inspection experiment and the classifier.
//!
//! The track is viewed from above: two horizontal rails, nine vertical ties
//! (blocks) between them, a screw and a washer beside each rail at each tie,
//! and a connector beyond each rail end. Everything is rendered directly in
//! 8-bit gray over a noisy gravel background.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{GrayImage, Luma};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::{
    inventory, inventory_of, ComponentId, ComponentKind, DefectSet, FootageId, LabelError, TIES,
};

pub const BACKGROUND_LEVEL: u8 = 60;
pub const RAIL_LEVEL: u8 = 200;
pub const BLOCK_LEVEL: u8 = 140;
pub const SCREW_LEVEL: u8 = 230;
pub const WASHER_LEVEL: u8 = 180;
pub const CONNECTOR_LEVEL: u8 = 210;

/// File holding `footage name -> missing labels` for a generated experiment.
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
/// File holding `relative path -> class + labels` for a generated dataset.
pub const DATASET_MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error("track geometry does not fit: {0}")]
    GeometryDoesNotFit(String),
    #[error("invalid dataset spec: {0}")]
    InvalidDataset(String),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("image error on {path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SceneError + '_ {
    move |source| SceneError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub width: u32,
    pub height: u32,
    pub rail_thickness: u32,
    pub tie_width: u32,
    pub screw_radius: u32,
    pub washer_outer_radius: u32,
    pub connector_size: u32,
    pub background_noise_sigma: f64,
    pub jitter_translation_max: u32,
    pub jitter_brightness_max: u32,
    pub master_seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 320,
            height: 240,
            rail_thickness: 8,
            tie_width: 14,
            screw_radius: 3,
            washer_outer_radius: 4,
            connector_size: 12,
            background_noise_sigma: 4.0,
            jitter_translation_max: 3,
            jitter_brightness_max: 10,
            master_seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::InvalidConfig(m.to_string()));
        if self.width == 0 || self.height == 0 {
            return bad("image dimensions must be positive");
        }
        if self.rail_thickness == 0 || self.tie_width == 0 || self.connector_size == 0 {
            return bad("rail thickness, tie width and connector size must be positive");
        }
        if self.screw_radius == 0 || self.washer_outer_radius == 0 {
            return bad("fastener radii must be positive");
        }
        if !(self.background_noise_sigma.is_finite() && self.background_noise_sigma >= 0.0) {
            return bad("noise sigma must be finite and non-negative");
        }
        if self.jitter_brightness_max > 255 {
            return bad("brightness jitter exceeds the gray range");
        }
        Ok(())
    }
}

/// Half-open pixel rectangle `[x, x + width) x [y, y + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: i32,
    pub y: i32,
    pub width: u32,
    pub height: u32,
}

impl Rect {
    pub fn new(x: i32, y: i32, width: u32, height: u32) -> Self {
        Self { x, y, width, height }
    }

    pub fn right(&self) -> i32 {
        self.x + self.width as i32
    }

    pub fn bottom(&self) -> i32 {
        self.y + self.height as i32
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    /// Center in pixel-index coordinates.
    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + (self.width as f64 - 1.0) / 2.0,
            self.y as f64 + (self.height as f64 - 1.0) / 2.0,
        )
    }

    pub fn contains(&self, x: i32, y: i32) -> bool {
        x >= self.x && x < self.right() && y >= self.y && y < self.bottom()
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.x < other.right()
            && other.x < self.right()
            && self.y < other.bottom()
            && other.y < self.bottom()
    }

    pub fn translated(&self, dx: i32, dy: i32) -> Rect {
        Rect { x: self.x + dx, y: self.y + dy, ..*self }
    }

    pub fn inside(&self, width: u32, height: u32) -> bool {
        self.x >= 0 && self.y >= 0 && self.right() <= width as i32 && self.bottom() <= height as i32
    }

    fn disc_bounds(cx: i32, cy: i32, r: u32) -> Rect {
        let r = r as i32;
        Rect::new(cx - r, cy - r, (2 * r + 1) as u32, (2 * r + 1) as u32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    Rect(Rect),
    Disc { cx: i32, cy: i32, radius: u32 },
}

impl Shape {
    fn bounds(&self) -> Rect {
        match *self {
            Shape::Rect(r) => r,
            Shape::Disc { cx, cy, radius } => Rect::disc_bounds(cx, cy, radius),
        }
    }

    fn translated(&self, dx: i32, dy: i32) -> Shape {
        match *self {
            Shape::Rect(r) => Shape::Rect(r.translated(dx, dy)),
            Shape::Disc { cx, cy, radius } => Shape::Disc { cx: cx + dx, cy: cy + dy, radius },
        }
    }

    fn fill(&self, canvas: &mut GrayImage, level: u8) {
        let b = self.bounds();
        let (w, h) = canvas.dimensions();
        let x0 = b.x.max(0);
        let y0 = b.y.max(0);
        let x1 = b.right().min(w as i32);
        let y1 = b.bottom().min(h as i32);
        for y in y0..y1 {
            for x in x0..x1 {
                let inside = match *self {
                    Shape::Rect(_) => true,
                    Shape::Disc { cx, cy, radius } => {
                        let (ex, ey) = ((x - cx) as i64, (y - cy) as i64);
                        ex * ex + ey * ey <= (radius as i64) * (radius as i64)
                    }
                };
                if inside {
                    canvas.put_pixel(x as u32, y as u32, Luma([level]));
                }
            }
        }
    }
}

/// A component's drawn shape and the region it is accountable for.
///
/// For blocks the drawn tie runs underneath both rails while the footprint
/// covers only the visible segment between them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Part {
    pub shape: Shape,
    pub footprint: Rect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackGeometry {
    pub width: u32,
    pub height: u32,
    pub rails: [Rect; 2],
    parts: BTreeMap<ComponentId, Part>,
}

impl TrackGeometry {
    pub fn footprint(&self, id: &ComponentId) -> Rect {
        self.parts[id].footprint
    }

    pub fn part(&self, id: &ComponentId) -> &Part {
        &self.parts[id]
    }

    pub fn footprints(&self) -> impl Iterator<Item = (ComponentId, Rect)> + '_ {
        self.parts.iter().map(|(id, p)| (*id, p.footprint))
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    /// Copy with every shape shifted, e.g. to match a jittered frame.
    pub fn translated(&self, dx: i32, dy: i32) -> TrackGeometry {
        TrackGeometry {
            width: self.width,
            height: self.height,
            rails: self.rails.map(|r| r.translated(dx, dy)),
            parts: self
                .parts
                .iter()
                .map(|(id, p)| {
                    let part = Part {
                        shape: p.shape.translated(dx, dy),
                        footprint: p.footprint.translated(dx, dy),
                    };
                    (*id, part)
                })
                .collect(),
        }
    }
}

/// Lays out the 49-component track for the configured image size.
pub fn standard_geometry(config: &SceneConfig) -> Result<TrackGeometry, SceneError> {
    config.validate()?;
    let w = config.width as i32;
    let h = config.height as i32;
    let pitch = w / (TIES as i32 + 1);
    let half_rail = config.rail_thickness as i32 / 2;
    let rail_y = [h / 3, 2 * h / 3];
    let rail_top = |r: usize| rail_y[r] - half_rail;
    let rail_bottom = |r: usize| rail_top(r) + config.rail_thickness as i32;
    let tie_cx = |tie: u8| w / 2 + pitch * (tie as i32 - 5);
    let half_tie = config.tie_width as i32 / 2;

    // Rails overhang the outer ties so that the tie ends are hidden.
    let overhang = half_tie + 3;
    let rail_x0 = tie_cx(1) - overhang;
    let rail_x1 = w - rail_x0;
    let rails = [0, 1].map(|r| {
        Rect::new(rail_x0, rail_top(r), (rail_x1 - rail_x0).max(0) as u32, config.rail_thickness)
    });

    let r_washer = config.washer_outer_radius as i32;
    let r_screw = config.screw_radius as i32;
    let fastener_gap = 3;
    let fastener_offset = r_washer.max(r_screw) + 2;
    // Fasteners sit on the outer side of each rail.
    let fastener_y = [
        rail_top(0) - fastener_gap - r_washer,
        rail_bottom(1) + fastener_gap + r_washer - 1,
    ];

    let cs = config.connector_size as i32;
    let connector_gap = 4;
    let connector_cx_left = rail_x0 - connector_gap - cs / 2;

    let mut parts = BTreeMap::new();
    for id in inventory() {
        let tie = id.tie();
        let cx = tie_cx(tie);
        let part = match id.kind() {
            ComponentKind::Block => {
                let shape = Rect::new(
                    cx - half_tie,
                    rail_top(0),
                    config.tie_width,
                    (rail_bottom(1) - rail_top(0)).max(0) as u32,
                );
                let footprint = Rect::new(
                    cx - half_tie,
                    rail_bottom(0),
                    config.tie_width,
                    (rail_top(1) - rail_bottom(0)).max(0) as u32,
                );
                Part { shape: Shape::Rect(shape), footprint }
            }
            ComponentKind::Screw | ComponentKind::Washer => {
                let rail = id.rail().expect("fasteners sit on a rail") as usize - 1;
                let (dx, radius) = if id.kind() == ComponentKind::Screw {
                    (-fastener_offset, config.screw_radius)
                } else {
                    (fastener_offset, config.washer_outer_radius)
                };
                let (x, y) = (cx + dx, fastener_y[rail]);
                Part {
                    shape: Shape::Disc { cx: x, cy: y, radius },
                    footprint: Rect::disc_bounds(x, y, radius),
                }
            }
            ComponentKind::Connector => {
                let rail = id.rail().expect("connectors sit on a rail") as usize - 1;
                let left = connector_cx_left - cs / 2;
                let x = if tie == 1 { left } else { w - left - cs };
                let rect = Rect::new(x, rail_y[rail] - cs / 2, cs as u32, cs as u32);
                Part { shape: Shape::Rect(rect), footprint: rect }
            }
        };
        parts.insert(id, part);
    }

    let geometry = TrackGeometry { width: config.width, height: config.height, rails, parts };
    check_fit(&geometry)?;
    Ok(geometry)
}

fn check_fit(g: &TrackGeometry) -> Result<(), SceneError> {
    for rail in &g.rails {
        if rail.is_empty() || !rail.inside(g.width, g.height) {
            return Err(SceneError::GeometryDoesNotFit(format!("rail {rail:?} outside image")));
        }
    }
    let parts: Vec<_> = g.parts.iter().collect();
    for (i, (id, part)) in parts.iter().enumerate() {
        let fp = part.footprint;
        if fp.is_empty() || !part.shape.bounds().inside(g.width, g.height) {
            return Err(SceneError::GeometryDoesNotFit(format!("{id} outside image")));
        }
        for (other, other_part) in &parts[i + 1..] {
            if fp.intersects(&other_part.footprint) {
                return Err(SceneError::GeometryDoesNotFit(format!("{id} overlaps {other}")));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Jitter {
    pub dx: i32,
    pub dy: i32,
    pub brightness: i32,
}

#[derive(Debug, Clone)]
pub struct RenderedScene {
    pub image: GrayImage,
    pub geometry: TrackGeometry,
    pub ground_truth: DefectSet,
    pub trial_seed: u64,
    pub applied_jitter: Jitter,
}

/// SplitMix64 finalizer chained over `parts`; used to derive per-item seeds.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut state: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        state = state.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        state = z ^ (z >> 31);
    }
    state
}

/// Renders the track with `defects` left out. Jitter, brightness and noise
/// are drawn from `trial_seed`; the result is a pure function of the inputs.
pub fn render_track(
    geometry: &TrackGeometry,
    defects: &DefectSet,
    trial_seed: u64,
    config: &SceneConfig,
) -> RenderedScene {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    let t = config.jitter_translation_max as i32;
    let b = config.jitter_brightness_max as i32;
    let jitter = Jitter {
        dx: rng.random_range(-t..=t),
        dy: rng.random_range(-t..=t),
        brightness: rng.random_range(-b..=b),
    };

    let mut canvas = GrayImage::from_pixel(geometry.width, geometry.height, Luma([BACKGROUND_LEVEL]));
    let present = |id: &ComponentId| !defects.contains(id);
    let draw_kind = |canvas: &mut GrayImage, kind: ComponentKind, level: u8| {
        for (id, part) in geometry.parts.iter().filter(|(id, _)| id.kind() == kind) {
            if present(id) {
                part.shape.translated(jitter.dx, jitter.dy).fill(canvas, level);
            }
        }
    };
    draw_kind(&mut canvas, ComponentKind::Block, BLOCK_LEVEL);
    for rail in &geometry.rails {
        Shape::Rect(rail.translated(jitter.dx, jitter.dy)).fill(&mut canvas, RAIL_LEVEL);
    }
    draw_kind(&mut canvas, ComponentKind::Washer, WASHER_LEVEL);
    draw_kind(&mut canvas, ComponentKind::Screw, SCREW_LEVEL);
    draw_kind(&mut canvas, ComponentKind::Connector, CONNECTOR_LEVEL);

    let sigma = config.background_noise_sigma;
    let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("validated sigma");
    for p in canvas.pixels_mut() {
        let n = if sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        let v = p[0] as f64 + jitter.brightness as f64 + n;
        p[0] = v.round().clamp(0.0, 255.0) as u8;
    }

    RenderedScene {
        image: canvas,
        geometry: geometry.clone(),
        ground_truth: defects.clone(),
        trial_seed,
        applied_jitter: jitter,
    }
}

/// Seed for frame `(case, trial)` of an experiment.
pub fn trial_seed(master_seed: u64, case: u8, trial: u8) -> u64 {
    mix_seed(&[master_seed, case as u64, trial as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentFrame {
    pub footage: FootageId,
    pub path: PathBuf,
    pub ground_truth: DefectSet,
    pub jitter: Jitter,
}

/// Renders one frame per (case, trial) into `out_dir` as `NN_F_Tt.png`
/// and writes the ground-truth manifest alongside.
pub fn generate_experiment(
    out_dir: &Path,
    cases: &[u8],
    trials: &[u8],
    config: &SceneConfig,
) -> Result<Vec<ExperimentFrame>, SceneError> {
    let geometry = standard_geometry(config)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut frames = Vec::with_capacity(cases.len() * trials.len());
    let mut truth = BTreeMap::new();
    for &case in cases {
        let defects = crate::labels::test_case(case)?.defects;
        for &trial in trials {
            let footage = FootageId::frame(case, trial)?;
            let scene =
                render_track(&geometry, &defects, trial_seed(config.master_seed, case, trial), config);
            let path = out_dir.join(footage.file_name("png"));
            scene
                .image
                .save(&path)
                .map_err(|source| SceneError::Image { path: path.clone(), source })?;
            truth.insert(footage.to_string(), defects.labels());
            frames.push(ExperimentFrame {
                footage,
                path,
                ground_truth: defects.clone(),
                jitter: scene.applied_jitter,
            });
        }
    }
    write_json(&out_dir.join(GROUND_TRUTH_FILE), &truth)?;
    Ok(frames)
}

pub fn read_ground_truth(experiment_dir: &Path) -> Result<BTreeMap<String, DefectSet>, SceneError> {
    let path = experiment_dir.join(GROUND_TRUTH_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let raw: BTreeMap<String, Vec<String>> = serde_json::from_str(&text)?;
    raw.into_iter()
        .map(|(name, labels)| {
            let set = labels.iter().map(|l| l.parse()).collect::<Result<DefectSet, _>>()?;
            Ok((name, set))
        })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), SceneError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackClass {
    Safe,
    Defective,
}

impl TrackClass {
    pub fn dir_name(self) -> &'static str {
        match self {
            TrackClass::Safe => "safe",
            TrackClass::Defective => "defective",
        }
    }

    /// Position in the two-way classifier output.
    pub fn index(self) -> usize {
        match self {
            TrackClass::Safe => 0,
            TrackClass::Defective => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Valid => self.valid,
            Split::Test => self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub defect_kinds: Vec<ComponentKind>,
    pub counts: SplitCounts,
    /// Fraction of safe images per split.
    pub class_balance: f64,
    pub image_size: u32,
    pub seed: u64,
    /// Applied to training images only.
    pub augment: Option<AugmentConfig>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            defect_kinds: ComponentKind::ALL.to_vec(),
            counts: SplitCounts { train: 400, valid: 200, test: 200 },
            class_balance: 0.5,
            image_size: 64,
            seed: 0,
            augment: None,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::InvalidDataset(m.to_string()));
        if self.defect_kinds.is_empty() {
            return bad("no defect kinds selected");
        }
        if Split::ALL.iter().any(|s| self.counts.get(*s) == 0) {
            return bad("split counts must be positive");
        }
        if !(0.0..=1.0).contains(&self.class_balance) {
            return bad("class balance must lie in [0, 1]");
        }
        if self.image_size < 8 {
            return bad("image size must be at least 8");
        }
        if let Some(aug) = &self.augment {
            aug.validate()?;
        }
        Ok(())
    }

    pub fn safe_count(&self, split: Split) -> usize {
        (self.counts.get(split) as f64 * self.class_balance).round() as usize
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSample {
    pub index: usize,
    pub class: TrackClass,
    pub defects: DefectSet,
    pub image: GrayImage,
}

impl DatasetSample {
    pub fn relative_path(&self, split: Split) -> String {
        format!("{}/{}/{:04}.png", split.dir_name(), self.class.dir_name(), self.index)
    }
}

/// Renders one split in memory: safe images first, then defective ones
/// with one or two missing components of the allowed kinds.
pub fn render_split(
    spec: &DatasetSpec,
    scene: &SceneConfig,
    split: Split,
) -> Result<Vec<DatasetSample>, SceneError> {
    spec.validate()?;
    let geometry = standard_geometry(scene)?;
    let mut pool: Vec<ComponentId> =
        spec.defect_kinds.iter().flat_map(|k| inventory_of(*k)).collect();
    pool.sort();
    pool.dedup();
    let n = spec.counts.get(split);
    let n_safe = spec.safe_count(split);
    let split_code = split as u64;

    let mut out = Vec::with_capacity(n);
    for index in 0..n {
        let seed = mix_seed(&[spec.seed, split_code, index as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (class, defects) = if index < n_safe {
            (TrackClass::Safe, DefectSet::new())
        } else {
            let k = rng.random_range(1..=2usize).min(pool.len());
            let picked: DefectSet = pool.choose_multiple(&mut rng, k).copied().collect();
            (TrackClass::Defective, picked)
        };
        let rendered = render_track(&geometry, &defects, mix_seed(&[seed, 1]), scene);
        let mut image =
            imageops::resize(&rendered.image, spec.image_size, spec.image_size, FilterType::Triangle);
        if let (Split::Train, Some(aug)) = (split, &spec.augment) {
            image = augment(&image, aug, mix_seed(&[seed, 2]));
        }
        out.push(DatasetSample { index, class, defects, image });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub class: TrackClass,
    pub labels: Vec<String>,
}

/// Writes `{train,valid,test}/{safe,defective}/NNNN.png` plus the manifest.
pub fn build_cnn_dataset(
    out_dir: &Path,
    spec: &DatasetSpec,
    scene: &SceneConfig,
) -> Result<BTreeMap<String, DatasetEntry>, SceneError> {
    spec.validate()?;
    let mut manifest = BTreeMap::new();
    for split in Split::ALL {
        for class in [TrackClass::Safe, TrackClass::Defective] {
            let dir = out_dir.join(split.dir_name()).join(class.dir_name());
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        for sample in render_split(spec, scene, split)? {
            let rel = sample.relative_path(split);
            let path = out_dir.join(&rel);
            sample
                .image
                .save(&path)
                .map_err(|source| SceneError::Image { path: path.clone(), source })?;
            manifest.insert(rel, DatasetEntry { class: sample.class, labels: sample.defects.labels() });
        }
    }
    write_json(&out_dir.join(DATASET_MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub flip_probability: f64,
    /// Maximum shift as a fraction of width/height, at most 0.1.
    pub max_shift_fraction: f64,
    /// Maximum brightness change as a fraction of 255, at most 0.1.
    pub max_brightness_fraction: f64,
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        let ok = (0.0..=1.0).contains(&self.flip_probability)
            && (0.0..=0.1).contains(&self.max_shift_fraction)
            && (0.0..=0.1).contains(&self.max_brightness_fraction);
        if ok {
            Ok(())
        } else {
            Err(SceneError::InvalidDataset(format!("augmentation bounds out of range: {self:?}")))
        }
    }
}

/// Random horizontal flip, integer shift and brightness change.
pub fn augment(image: &GrayImage, config: &AugmentConfig, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = image.dimensions();
    let max_dx = (config.max_shift_fraction * w as f64).floor() as i32;
    let max_dy = (config.max_shift_fraction * h as f64).floor() as i32;
    let max_b = (config.max_brightness_fraction * 255.0).floor() as i32;

    let flip = config.flip_probability > 0.0 && rng.random_bool(config.flip_probability);
    let dx = rng.random_range(-max_dx..=max_dx);
    let dy = rng.random_range(-max_dy..=max_dy);
    let db = rng.random_range(-max_b..=max_b);

    let mut out = if flip { imageops::flip_horizontal(image) } else { image.clone() };
    if dx != 0 || dy != 0 {
        out = translate(&out, dx, dy);
    }
    if db != 0 {
        for p in out.pixels_mut() {
            p[0] = (p[0] as i32 + db).clamp(0, 255) as u8;
        }
    }
    out
}

/// Shifts content by `(dx, dy)`; uncovered pixels replicate the nearest edge.
pub fn translate(image: &GrayImage, dx: i32, dy: i32) -> GrayImage {
    let (w, h) = image.dimensions();
    GrayImage::from_fn(w, h, |x, y| {
        let sx = (x as i32 - dx).clamp(0, w as i32 - 1) as u32;
        let sy = (y as i32 - dy).clamp(0, h as i32 - 1) as u32;
        *image.get_pixel(sx, sy)
    })
}

/// Mean gray level inside `rect`, clipped to the image.
pub fn region_mean(image: &GrayImage, rect: &Rect) -> Option<f64> {
    let (w, h) = image.dimensions();
    let (mut sum, mut n) = (0u64, 0u64);
    for y in rect.y.max(0)..rect.bottom().min(h as i32) {
        for x in rect.x.max(0)..rect.right().min(w as i32) {
            sum += image.get_pixel(x as u32, y as u32)[0] as u64;
            n += 1;
        }
    }
    (n > 0).then(|| sum as f64 / n as f64)
}
