use image::GrayImage;
use serde::{Deserialize, Serialize};

use super::InspectError;

/// Integer translation of the test frame's content relative to the reference:
/// reference pixel `(x, y)` corresponds to test pixel `(x + dx, y + dy)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Offset {
    pub dx: i32,
    pub dy: i32,
}

/// Exhaustive search over `[-window, window]^2` minimizing the sum of
/// absolute differences per overlapping pixel.
///
/// Ties go to the smallest `|dx| + |dy|`, then the lexicographically smallest
/// `(dx, dy)`. Costs are compared as exact fractions.
pub fn register(reference: &GrayImage, test: &GrayImage, window: u32) -> Result<Offset, InspectError> {
    if reference.dimensions() != test.dimensions() {
        return Err(InspectError::DimensionMismatch {
            reference: reference.dimensions(),
            test: test.dimensions(),
        });
    }
    let (w, h) = reference.dimensions();
    if w == 0 || h == 0 {
        return Err(InspectError::EmptyImage);
    }
    if window >= w || window >= h {
        return Err(InspectError::WindowTooLarge { window, width: w, height: h });
    }
    let win = window as i32;
    let mut best: Option<(u64, u64, Offset)> = None;
    for dy in -win..=win {
        for dx in -win..=win {
            let (sad, area) = sad_at(reference, test, dx, dy);
            let candidate = Offset { dx, dy };
            let better = match best {
                None => true,
                Some((bsad, barea, boff)) => {
                    let lhs = sad as u128 * barea as u128;
                    let rhs = bsad as u128 * area as u128;
                    lhs < rhs || (lhs == rhs && tie_key(candidate) < tie_key(boff))
                }
            };
            if better {
                best = Some((sad, area, candidate));
            }
        }
    }
    Ok(best.expect("window yields at least one offset").2)
}

fn tie_key(o: Offset) -> (i32, i32, i32) {
    (o.dx.abs() + o.dy.abs(), o.dx, o.dy)
}

/// Sum of absolute differences and overlap area for one offset.
pub(crate) fn sad_at(reference: &GrayImage, test: &GrayImage, dx: i32, dy: i32) -> (u64, u64) {
    let (w, h) = reference.dimensions();
    let (w, h) = (w as i32, h as i32);
    let x0 = 0.max(-dx);
    let x1 = w.min(w - dx);
    let y0 = 0.max(-dy);
    let y1 = h.min(h - dy);
    if x0 >= x1 || y0 >= y1 {
        return (0, 0);
    }
    let r = reference.as_raw();
    let t = test.as_raw();
    let len = (x1 - x0) as usize;
    let mut sad = 0u64;
    for y in y0..y1 {
        let ro = (y * w + x0) as usize;
        let to = ((y + dy) * w + x0 + dx) as usize;
        let row: u32 = r[ro..ro + len]
            .iter()
            .zip(&t[to..to + len])
            .map(|(&a, &b)| a.abs_diff(b) as u32)
            .sum();
        sad += row as u64;
    }
    (sad, len as u64 * (y1 - y0) as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::translate;
    use image::Luma;

    fn textured(w: u32, h: u32) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            let v = x.wrapping_mul(2654435761).wrapping_add(y.wrapping_mul(40503)).rotate_left(7) % 200;
            Luma([v as u8 + 20])
        })
    }

    #[test]
    fn identical_images_register_at_zero() {
        let img = textured(40, 30);
        assert_eq!(register(&img, &img, 8).unwrap(), Offset::default());
    }

    #[test]
    fn recovers_known_translation() {
        let img = textured(48, 40);
        let shifted = translate(&img, 3, -2);
        // independent oracle: plain nested-loop mean absolute difference
        let mut best = (f64::INFINITY, 0, 0);
        for dy in -8..=8i32 {
            for dx in -8..=8i32 {
                let (mut sum, mut n) = (0.0, 0.0);
                for y in 0..40i32 {
                    for x in 0..48i32 {
                        let (tx, ty) = (x + dx, y + dy);
                        if (0..48).contains(&tx) && (0..40).contains(&ty) {
                            let a = img.get_pixel(x as u32, y as u32)[0] as f64;
                            let b = shifted.get_pixel(tx as u32, ty as u32)[0] as f64;
                            sum += (a - b).abs();
                            n += 1.0;
                        }
                    }
                }
                if sum / n < best.0 {
                    best = (sum / n, dx, dy);
                }
            }
        }
        assert_eq!((best.1, best.2), (3, -2));
        assert_eq!(register(&img, &shifted, 8).unwrap(), Offset { dx: 3, dy: -2 });
    }

    #[test]
    fn constant_images_tie_break_to_zero() {
        let a = GrayImage::from_pixel(20, 20, Luma([90]));
        let b = GrayImage::from_pixel(20, 20, Luma([30]));
        assert_eq!(register(&a, &b, 5).unwrap(), Offset::default());
    }

    #[test]
    fn oversized_window_is_rejected() {
        let img = textured(10, 10);
        assert!(matches!(register(&img, &img, 10), Err(InspectError::WindowTooLarge { .. })));
    }
}
