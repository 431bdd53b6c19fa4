use image::{DynamicImage, GrayImage};

use super::InspectError;

/// Luminance conversion for color inputs.
pub fn to_gray(image: &DynamicImage) -> GrayImage {
    image.to_luma8()
}

/// Median filter followed by a linear stretch of the observed range onto
/// `[0, 255]`. A constant image passes the stretch unchanged.
pub fn preprocess(image: &GrayImage, median_radius: u32) -> Result<GrayImage, InspectError> {
    if image.width() == 0 || image.height() == 0 {
        return Err(InspectError::EmptyImage);
    }
    let mut out = median_filter(image, median_radius);
    contrast_stretch(&mut out);
    Ok(out)
}

/// Square-window median; the window is clamped to the image at the borders.
pub fn median_filter(image: &GrayImage, radius: u32) -> GrayImage {
    if radius == 0 {
        return image.clone();
    }
    let (w, h) = image.dimensions();
    let r = radius as i64;
    let src = image.as_raw();
    let mut window = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
    let mut out = GrayImage::new(w, h);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            window.clear();
            for yy in (y - r).max(0)..=(y + r).min(h as i64 - 1) {
                let row = (yy * w as i64) as usize;
                let lo = (x - r).max(0) as usize;
                let hi = (x + r).min(w as i64 - 1) as usize;
                window.extend_from_slice(&src[row + lo..=row + hi]);
            }
            let mid = window.len() / 2;
            let (_, m, _) = window.select_nth_unstable(mid);
            out.put_pixel(x as u32, y as u32, image::Luma([*m]));
        }
    }
    out
}

pub fn contrast_stretch(image: &mut GrayImage) {
    let (lo, hi) = image
        .as_raw()
        .iter()
        .fold((u8::MAX, u8::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if lo >= hi {
        return;
    }
    let span = (hi - lo) as u32;
    for p in image.pixels_mut() {
        let v = (p[0] - lo) as u32;
        p[0] = ((v * 255 + span / 2) / span) as u8;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Luma;

    #[test]
    fn constant_image_is_unchanged() {
        let img = GrayImage::from_pixel(7, 5, Luma([77]));
        assert_eq!(preprocess(&img, 1).unwrap(), img);
    }

    #[test]
    fn stretch_maps_range_to_full_scale() {
        let mut img = GrayImage::from_fn(10, 1, |x, _| Luma([50 + (x as u8) * 11]));
        img.put_pixel(9, 0, Luma([150]));
        contrast_stretch(&mut img);
        let raw = img.as_raw();
        assert_eq!(*raw.iter().min().unwrap(), 0);
        assert_eq!(*raw.iter().max().unwrap(), 255);
    }

    #[test]
    fn median_removes_impulse() {
        let mut img = GrayImage::from_pixel(5, 5, Luma([40]));
        img.put_pixel(2, 2, Luma([250]));
        // every 3x3 (or clamped) window holds at most one 250 among >= 4 values
        let filtered = median_filter(&img, 1);
        assert!(filtered.pixels().all(|p| p[0] == 40));
    }

    #[test]
    fn median_matches_sorted_window_oracle() {
        let img = GrayImage::from_fn(6, 5, |x, y| Luma([((x * 37 + y * 91) % 256) as u8]));
        let filtered = median_filter(&img, 1);
        for y in 0..5i32 {
            for x in 0..6i32 {
                let mut vals = Vec::new();
                for yy in y - 1..=y + 1 {
                    for xx in x - 1..=x + 1 {
                        if (0..6).contains(&xx) && (0..5).contains(&yy) {
                            vals.push(img.get_pixel(xx as u32, yy as u32)[0]);
                        }
                    }
                }
                vals.sort();
                assert_eq!(filtered.get_pixel(x as u32, y as u32)[0], vals[vals.len() / 2]);
            }
        }
    }

    #[test]
    fn empty_image_is_an_error() {
        assert!(matches!(preprocess(&GrayImage::new(0, 0), 1), Err(InspectError::EmptyImage)));
    }
}
