//! Shared inputs for the benchmarks.

use railinspect::inspect::Frame;
use railinspect::labels::test_case;
use railinspect::scene::{render_track, standard_geometry, trial_seed, SceneConfig};
use railinspect::TrackGeometry;

pub fn geometry() -> TrackGeometry {
    standard_geometry(&SceneConfig::default()).expect("default geometry fits")
}

/// Rendered experiment frame for `case`, `trial`.
pub fn frame(case: u8, trial: u8) -> Frame {
    let cfg = SceneConfig::default();
    let defects = test_case(case).expect("valid case").defects;
    let scene = render_track(&geometry(), &defects, trial_seed(cfg.master_seed, case, trial), &cfg);
    Frame::new(format!("{case:02}_F_T{trial}"), scene.image)
}
