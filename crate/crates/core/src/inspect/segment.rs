use serde::{Deserialize, Serialize};

use super::mask::Mask;
use crate::labels::ComponentId;

/// Axis-aligned pixel box, inclusive of `x..x + width` columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelBox {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl PixelBox {
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x as f64
            && y >= self.y as f64
            && x <= (self.x + self.width - 1) as f64
            && y <= (self.y + self.height - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// Present in the reference, gone from the test frame.
    MissingInTest,
    /// Present in the test frame only.
    ExtraInTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectBlob {
    pub bounding_box: PixelBox,
    pub area: usize,
    pub centroid: (f64, f64),
    pub direction: Direction,
    /// `None` when no component lies within the mapping distance.
    pub mapped: Option<ComponentId>,
}

/// Opening with a `(2r+1)` square, then 8-connected labeling. Components
/// smaller than `min_area` are dropped; the rest are sorted by area
/// descending, then by the top-left corner of the bounding box.
pub fn segment(mask: &Mask, min_area: usize, open_radius: u32, direction: Direction) -> Vec<DefectBlob> {
    let opened = open(mask, open_radius);
    let mut blobs: Vec<DefectBlob> = label_components(&opened)
        .into_iter()
        .filter(|c| c.area >= min_area.max(1))
        .map(|c| DefectBlob {
            bounding_box: PixelBox {
                x: c.min_x,
                y: c.min_y,
                width: c.max_x - c.min_x + 1,
                height: c.max_y - c.min_y + 1,
            },
            area: c.area,
            centroid: (c.sum_x as f64 / c.area as f64, c.sum_y as f64 / c.area as f64),
            direction,
            mapped: None,
        })
        .collect();
    blobs.sort_by(|a, b| {
        b.area
            .cmp(&a.area)
            .then(a.bounding_box.y.cmp(&b.bounding_box.y))
            .then(a.bounding_box.x.cmp(&b.bounding_box.x))
    });
    blobs
}

/// Morphological opening; windows are clipped at the image border.
pub fn open(mask: &Mask, radius: u32) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let eroded = separable(mask, radius, true);
    separable(&eroded, radius, false)
}

/// Erosion (`all`) or dilation (`any`) with a square window, as a row pass
/// followed by a column pass.
fn separable(mask: &Mask, radius: u32, erode: bool) -> Mask {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let r = radius as usize;
    let src = mask.bits();
    // erosion keeps a pixel only if its whole window is set; dilation if any is
    let reduce = |window: &mut dyn Iterator<Item = bool>| -> bool {
        let mut acc = erode;
        for v in window {
            if v != erode {
                acc = v;
                break;
            }
        }
        acc
    };
    let mut rows = vec![false; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            rows[y * w + x] = reduce(&mut row[lo..=hi].iter().copied());
        }
    }
    Mask::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        reduce(&mut (lo..=hi).map(|yy| rows[yy * w + x]))
    })
}

struct Component {
    area: usize,
    min_x: u32,
    min_y: u32,
    max_x: u32,
    max_y: u32,
    sum_x: u64,
    sum_y: u64,
}

fn find(parent: &mut [u32], mut i: u32) -> u32 {
    while parent[i as usize] != i {
        parent[i as usize] = parent[parent[i as usize] as usize];
        i = parent[i as usize];
    }
    i
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

/// Two-pass union-find labeling with 8-connectivity. Components are
/// returned in raster order of their first pixel.
fn label_components(mask: &Mask) -> Vec<Component> {
    let (w, h) = (mask.width(), mask.height());
    const NONE: u32 = u32::MAX;
    let mut labels = vec![NONE; (w * h) as usize];
    let mut parent: Vec<u32> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let mut neighbours = [NONE; 4];
            if x > 0 {
                neighbours[0] = labels[(y * w + x - 1) as usize];
            }
            if y > 0 {
                let up = ((y - 1) * w) as usize;
                if x > 0 {
                    neighbours[1] = labels[up + x as usize - 1];
                }
                neighbours[2] = labels[up + x as usize];
                if x + 1 < w {
                    neighbours[3] = labels[up + x as usize + 1];
                }
            }
            let label = match neighbours.iter().copied().filter(|l| *l != NONE).min() {
                Some(min) => {
                    for n in neighbours.iter().copied().filter(|l| *l != NONE) {
                        union(&mut parent, min, n);
                    }
                    min
                }
                None => {
                    parent.push(parent.len() as u32);
                    parent.len() as u32 - 1
                }
            };
            labels[(y * w + x) as usize] = label;
        }
    }

    let mut slot = vec![NONE; parent.len()];
    let mut comps: Vec<Component> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let l = labels[(y * w + x) as usize];
            if l == NONE {
                continue;
            }
            let root = find(&mut parent, l) as usize;
            if slot[root] == NONE {
                slot[root] = comps.len() as u32;
                comps.push(Component {
                    area: 0,
                    min_x: x,
                    min_y: y,
                    max_x: x,
                    max_y: y,
                    sum_x: 0,
                    sum_y: 0,
                });
            }
            let c = &mut comps[slot[root] as usize];
            c.area += 1;
            c.min_x = c.min_x.min(x);
            c.min_y = c.min_y.min(y);
            c.max_x = c.max_x.max(x);
            c.max_y = c.max_y.max(y);
            c.sum_x += x as u64;
            c.sum_y += y as u64;
        }
    }
    comps
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from(rows: &[&str]) -> Mask {
        Mask::from_fn(rows[0].len() as u32, rows.len() as u32, |x, y| {
            rows[y as usize].as_bytes()[x as usize] == b'#'
        })
    }

    #[test]
    fn empty_mask_has_no_blobs() {
        assert!(segment(&Mask::new(10, 10), 1, 1, Direction::MissingInTest).is_empty());
    }

    #[test]
    fn two_squares() {
        let mask = Mask::from_fn(16, 9, |x, y| (1..6).contains(&y) && ((1..6).contains(&x) || (8..13).contains(&x)));
        let blobs = segment(&mask, 12, 1, Direction::MissingInTest);
        assert_eq!(blobs.len(), 2);
        assert!(blobs.iter().all(|b| b.area == 25));
        assert_eq!(blobs[0].bounding_box.x, 1);
        assert_eq!(blobs[1].bounding_box.x, 8);
        assert_eq!(blobs[0].centroid, (3.0, 3.0));
    }

    #[test]
    fn diagonal_pixels_are_connected() {
        let mask = mask_from(&["#...", ".#..", "...."]);
        let blobs = segment(&mask, 1, 0, Direction::ExtraInTest);
        assert_eq!(blobs.len(), 1);
        assert_eq!(blobs[0].area, 2);
        assert_eq!(blobs[0].direction, Direction::ExtraInTest);
    }

    #[test]
    fn u_shape_merges_into_one_component() {
        let mask = mask_from(&["#...#", "#...#", "#.#.#", "#####"]);
        let blobs = segment(&mask, 1, 0, Direction::MissingInTest);
        assert_eq!(blobs.len(), 1);
        assert_eq!(blobs[0].area, 12);
    }

    #[test]
    fn opening_removes_thin_lines() {
        let mask = mask_from(&["......", "######", "......", "......"]);
        assert!(open(&mask, 1).is_empty());
        assert_eq!(open(&mask, 0), mask);
    }

    #[test]
    fn min_area_filters() {
        let mask = mask_from(&["##..#", "##...", "....."]);
        let blobs = segment(&mask, 2, 0, Direction::MissingInTest);
        assert_eq!(blobs.len(), 1);
        assert_eq!(blobs[0].area, 4);
    }
}
