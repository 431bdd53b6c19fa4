use super::segment::DefectBlob;
use crate::scene::TrackGeometry;

/// Maps each blob to the component whose footprint center is nearest its
/// centroid, if within `max_distance` pixels. Blob coordinates are in the
/// frame the geometry describes; `offset` is added to footprint centers
/// first. Equidistant candidates resolve to the canonically smaller label.
pub fn localize(
    mut blobs: Vec<DefectBlob>,
    geometry: &TrackGeometry,
    offset: (f64, f64),
    max_distance: f64,
) -> Vec<DefectBlob> {
    for blob in &mut blobs {
        let (bx, by) = blob.centroid;
        blob.mapped = geometry
            .footprints()
            .map(|(id, fp)| {
                let (cx, cy) = fp.center();
                let d = ((cx + offset.0 - bx).powi(2) + (cy + offset.1 - by).powi(2)).sqrt();
                (d, id)
            })
            .filter(|(d, _)| *d <= max_distance)
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, id)| id);
    }
    blobs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inspect::segment::{Direction, PixelBox};
    use crate::scene::{standard_geometry, SceneConfig};

    fn blob_at(x: f64, y: f64) -> DefectBlob {
        DefectBlob {
            bounding_box: PixelBox { x: x as u32, y: y as u32, width: 1, height: 1 },
            area: 20,
            centroid: (x, y),
            direction: Direction::MissingInTest,
            mapped: None,
        }
    }

    #[test]
    fn maps_to_nearest_footprint() {
        let g = standard_geometry(&SceneConfig::default()).unwrap();
        let screw = "1-7S".parse().unwrap();
        let (cx, cy) = g.footprint(&screw).center();
        let out = localize(vec![blob_at(cx + 1.0, cy - 1.0)], &g, (0.0, 0.0), 15.0);
        assert_eq!(out[0].mapped, Some(screw));
    }

    #[test]
    fn distant_blob_is_unmapped() {
        let g = standard_geometry(&SceneConfig::default()).unwrap();
        // top-left corner region is > 40 px from every footprint center
        let out = localize(vec![blob_at(5.0, 5.0)], &g, (0.0, 0.0), 15.0);
        assert_eq!(out[0].mapped, None);
    }

    #[test]
    fn offset_shifts_footprints() {
        let g = standard_geometry(&SceneConfig::default()).unwrap();
        let block = "8B".parse().unwrap();
        let (cx, cy) = g.footprint(&block).center();
        let out = localize(vec![blob_at(cx + 12.0, cy)], &g, (12.0, 0.0), 2.0);
        assert_eq!(out[0].mapped, Some(block));
    }
}
