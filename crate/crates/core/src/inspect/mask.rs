use image::GrayImage;
use serde::{Deserialize, Serialize};

use super::register::Offset;

/// Row-major binary image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, bits: vec![false; width as usize * height as usize] }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let mut m = Mask::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.set(x, y, f(x, y));
            }
        }
        m
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[(y * self.width + x) as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// True if every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }
}

/// Signed change masks over the registered overlap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChangeMasks {
    /// Reference brighter than test by more than the threshold.
    pub missing: Mask,
    /// Test brighter than reference by more than the threshold.
    pub extra: Mask,
}

/// Thresholded signed difference, indexed in reference coordinates. Pixels
/// with no registered counterpart in the test frame are left unset.
pub fn difference_map(reference: &GrayImage, test: &GrayImage, offset: Offset, threshold: u8) -> ChangeMasks {
    let (w, h) = reference.dimensions();
    let mut missing = Mask::new(w, h);
    let mut extra = Mask::new(w, h);
    let t = threshold as i16;
    for y in 0..h as i32 {
        let ty = y + offset.dy;
        if ty < 0 || ty >= test.height() as i32 {
            continue;
        }
        for x in 0..w as i32 {
            let tx = x + offset.dx;
            if tx < 0 || tx >= test.width() as i32 {
                continue;
            }
            let r = reference.get_pixel(x as u32, y as u32)[0] as i16;
            let v = test.get_pixel(tx as u32, ty as u32)[0] as i16;
            if r - v > t {
                missing.set(x as u32, y as u32, true);
            } else if v - r > t {
                extra.set(x as u32, y as u32, true);
            }
        }
    }
    ChangeMasks { missing, extra }
}
