//! Per-slice debug images: grayscale CT with ground-truth and predicted
//! contours and detected windows, written as binary PPM.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pipeline::Bbox3;
use crate::detector::DetectionMask;
use crate::volume::{Mask, Volume};

pub type Rgb = [u8; 3];

pub const GT_LIVER: Rgb = [40, 80, 255];
pub const GT_LESION: Rgb = [255, 40, 40];
pub const PRED_LIVER: Rgb = [255, 230, 0];
pub const PRED_LESION: Rgb = [0, 220, 60];
pub const DETECTION: Rgb = [120, 220, 255];

/// Row-major RGB image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub h: usize,
    pub w: usize,
    pub pixels: Vec<Rgb>,
}

impl Image {
    /// Grayscale rendering of a plane, scaled from `lo..hi` to `0..255`.
    pub fn gray(plane: &[f32], h: usize, w: usize, lo: f32, hi: f32) -> Self {
        let span = (hi - lo).max(f32::EPSILON);
        let pixels = plane
            .iter()
            .map(|&v| {
                let g = (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8;
                [g, g, g]
            })
            .collect();
        Self { h, w, pixels }
    }

    /// Paints mask pixels that have a 4-neighbour outside the mask.
    pub fn contour(&mut self, mask: &[u8], color: Rgb) {
        let (h, w) = (self.h, self.w);
        for y in 0..h {
            for x in 0..w {
                if mask[y * w + x] == 0 {
                    continue;
                }
                let edge = y == 0
                    || x == 0
                    || y + 1 == h
                    || x + 1 == w
                    || mask[(y - 1) * w + x] == 0
                    || mask[(y + 1) * w + x] == 0
                    || mask[y * w + x - 1] == 0
                    || mask[y * w + x + 1] == 0;
                if edge {
                    self.pixels[y * w + x] = color;
                }
            }
        }
    }

    /// Rectangle outline, clipped to the image.
    pub fn rect(&mut self, y0: i64, x0: i64, h: usize, w: usize, color: Rgb) {
        let (y1, x1) = (y0 + h as i64 - 1, x0 + w as i64 - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let border = y == y0 || y == y1 || x == x0 || x == x1;
                if border && y >= 0 && x >= 0 && (y as usize) < self.h && (x as usize) < self.w {
                    self.pixels[y as usize * self.w + x as usize] = color;
                }
            }
        }
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.w, self.h).into_bytes();
        for p in &self.pixels {
            out.extend_from_slice(p);
        }
        out
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_ppm()).map_err(|e| Error::io(path, e))
    }
}

/// What to draw on one case.
pub struct OverlayInputs<'a> {
    pub image: &'a Volume,
    pub gt_liver: &'a Mask,
    pub gt_lesion: &'a Mask,
    pub pred_liver: Option<&'a Mask>,
    pub pred_lesion: Option<&'a Mask>,
    /// Detections in crop coordinates, with the crop's box.
    pub detections: Option<(&'a DetectionMask, Bbox3)>,
}

pub fn render_slice(inp: &OverlayInputs, z: usize) -> Image {
    let (h, w) = (inp.image.ny(), inp.image.nx());
    let (lo, hi) = inp.image.min_max();
    let mut img = Image::gray(inp.image.slice(z), h, w, lo, hi);
    if let Some((det, b)) = &inp.detections {
        if (b.z0..b.z1).contains(&z) {
            for r in &det.positives[z - b.z0] {
                img.rect(r.y0 + b.y0 as i64, r.x0 + b.x0 as i64, r.h, r.w, DETECTION);
            }
        }
    }
    img.contour(inp.gt_liver.slice(z), GT_LIVER);
    img.contour(inp.gt_lesion.slice(z), GT_LESION);
    if let Some(m) = inp.pred_liver {
        img.contour(m.slice(z), PRED_LIVER);
    }
    if let Some(m) = inp.pred_lesion {
        img.contour(m.slice(z), PRED_LESION);
    }
    img
}

/// Writes `<prefix>_zNNN.ppm` for every slice; returns the paths.
pub fn write_overlays(inp: &OverlayInputs, dir: &Path, prefix: &str) -> Result<Vec<std::path::PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    (0..inp.image.nz())
        .map(|z| {
            let path = dir.join(format!("{prefix}_z{z:03}.ppm"));
            render_slice(inp, z).write_ppm(&path)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contour_of_square() {
        let mut img = Image::gray(&[0.0; 25], 5, 5, 0.0, 1.0);
        let mut m = vec![0u8; 25];
        for y in 1..4 {
            for x in 1..4 {
                m[y * 5 + x] = 1;
            }
        }
        img.contour(&m, GT_LESION);
        let painted: Vec<usize> = (0..25).filter(|&i| img.pixels[i] == GT_LESION).collect();
        assert_eq!(painted.len(), 8);
        assert_ne!(img.pixels[12], GT_LESION);
    }

    #[test]
    fn ppm_header() {
        let img = Image::gray(&[0.0, 1.0], 1, 2, 0.0, 1.0);
        let bytes = img.to_ppm();
        assert!(bytes.starts_with(b"P6\n2 1\n255\n"));
        assert_eq!(&bytes[bytes.len() - 6..], &[0, 0, 0, 255, 255, 255]);
    }

    #[test]
    fn clipped_rect() {
        let mut img = Image::gray(&[0.0; 16], 4, 4, 0.0, 1.0);
        img.rect(-1, -1, 3, 3, DETECTION);
        assert_eq!(img.pixels[5], DETECTION);
        assert_ne!(img.pixels[0], DETECTION);
    }
}
