//! Irreversible anonymization of detection regions in RGB frames.
//!
//! Each detection box is inflated by `margin_ratio`, rasterized to the pixel
//! grid (a pixel belongs to a box when its unit square overlaps it) and
//! clamped to the image. Pixels outside every region are left untouched.
//!
//! Pixelation works on the union of all regions at once: every masked pixel
//! gets a block size (the largest among the regions covering it) and is
//! replaced by the mean of its block cell on an image-anchored grid. Every
//! cell is constant afterwards, so a second pass is a no-op.

use image::{imageops, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::detection::Detection;
use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnonymizeMethod {
    GaussianBlur,
    Pixelate,
}

impl std::str::FromStr for AnonymizeMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "blur" | "gaussian-blur" | "gaussian_blur" => Ok(AnonymizeMethod::GaussianBlur),
            "pixelate" | "pixelation" => Ok(AnonymizeMethod::Pixelate),
            other => Err(Error::param(
                "method",
                format!("unknown anonymization method `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnonymizeConfig {
    pub method: AnonymizeMethod,
    /// Gaussian sigma as a fraction of the region's larger side.
    pub blur_sigma_ratio: f64,
    /// Blocks along the region's larger side when pixelating.
    pub pixel_blocks: u32,
    /// Fraction of width/height added on each side before anonymizing.
    pub margin_ratio: f64,
}

impl Default for AnonymizeConfig {
    fn default() -> Self {
        AnonymizeConfig {
            method: AnonymizeMethod::GaussianBlur,
            blur_sigma_ratio: 0.15,
            pixel_blocks: 8,
            margin_ratio: 0.1,
        }
    }
}

impl AnonymizeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.blur_sigma_ratio.is_finite() && self.blur_sigma_ratio > 0.0) {
            return Err(Error::param("blur_sigma_ratio", "must be > 0"));
        }
        if !(self.margin_ratio.is_finite() && self.margin_ratio > 0.0) {
            return Err(Error::param("margin_ratio", "must be > 0"));
        }
        if self.pixel_blocks < 2 {
            return Err(Error::param("pixel_blocks", "must be >= 2"));
        }
        Ok(())
    }
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRegion {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRegion {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// Pixel region anonymized for `bbox`, or `None` when it misses the image.
pub fn region_for(bbox: &BBox, margin_ratio: f64, width: u32, height: u32) -> Option<PixelRegion> {
    let b = bbox.inflate(margin_ratio);
    let clamp = |v: f64, hi: u32| v.clamp(0.0, hi as f64) as u32;
    let x0 = clamp(b.x_min.floor(), width);
    let y0 = clamp(b.y_min.floor(), height);
    let x1 = clamp(b.x_max.ceil(), width);
    let y1 = clamp(b.y_max.ceil(), height);
    (x1 > x0 && y1 > y0).then_some(PixelRegion { x0, y0, x1, y1 })
}

/// Output of [`anonymize_frame`].
#[derive(Debug, Clone)]
pub struct Anonymized {
    pub image: RgbImage,
    /// Indices of detections lying entirely outside the image.
    pub skipped: Vec<usize>,
}

/// Anonymizes every detection region of one frame.
pub fn anonymize_frame(image: &RgbImage, dets: &[Detection], cfg: &AnonymizeConfig) -> Result<Anonymized> {
    cfg.validate()?;
    let (w, h) = image.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::param("image", "empty image"));
    }
    let mut regions = Vec::with_capacity(dets.len());
    let mut skipped = Vec::new();
    for (i, d) in dets.iter().enumerate() {
        match region_for(&d.bbox, cfg.margin_ratio, w, h) {
            Some(r) => regions.push(r),
            None => {
                log::warn!(
                    "frame {}: detection {i} lies outside the {w}x{h} image, skipped",
                    d.frame
                );
                skipped.push(i);
            }
        }
    }
    let image = match cfg.method {
        AnonymizeMethod::Pixelate => pixelate(image, &regions, cfg.pixel_blocks),
        AnonymizeMethod::GaussianBlur => blur(image, &regions, cfg.blur_sigma_ratio),
    };
    Ok(Anonymized { image, skipped })
}

fn block_size(r: &PixelRegion, blocks: u32) -> u32 {
    r.width().max(r.height()).div_ceil(blocks).max(1)
}

fn pixelate(src: &RgbImage, regions: &[PixelRegion], blocks: u32) -> RgbImage {
    let mut out = src.clone();
    if regions.is_empty() {
        return out;
    }
    let (w, h) = src.dimensions();
    // Block size per pixel; 0 = untouched.
    let mut size = vec![0u32; (w * h) as usize];
    for r in regions {
        let s = block_size(r, blocks);
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                let cell = &mut size[(y * w + x) as usize];
                *cell = (*cell).max(s);
            }
        }
    }
    // Accumulate per (size, cell) sums, then write back means.
    let mut sums: std::collections::HashMap<(u32, u32, u32), [u64; 4]> = std::collections::HashMap::new();
    for y in 0..h {
        for x in 0..w {
            let s = size[(y * w + x) as usize];
            if s == 0 {
                continue;
            }
            let p = src.get_pixel(x, y).0;
            let acc = sums.entry((s, x / s, y / s)).or_default();
            for c in 0..3 {
                acc[c] += u64::from(p[c]);
            }
            acc[3] += 1;
        }
    }
    for y in 0..h {
        for x in 0..w {
            let s = size[(y * w + x) as usize];
            if s == 0 {
                continue;
            }
            let acc = sums[&(s, x / s, y / s)];
            let n = acc[3];
            let mean = |c: usize| ((acc[c] + n / 2) / n) as u8;
            out.put_pixel(x, y, Rgb([mean(0), mean(1), mean(2)]));
        }
    }
    out
}

fn blur(src: &RgbImage, regions: &[PixelRegion], sigma_ratio: f64) -> RgbImage {
    let mut out = src.clone();
    let (w, h) = src.dimensions();
    for r in regions {
        let sigma = (sigma_ratio * f64::from(r.width().max(r.height()))).max(0.5) as f32;
        // Read context around the region so edges blur against real neighbors.
        let pad = (3.0 * sigma).ceil() as u32;
        let cx0 = r.x0.saturating_sub(pad);
        let cy0 = r.y0.saturating_sub(pad);
        let cx1 = (r.x1 + pad).min(w);
        let cy1 = (r.y1 + pad).min(h);
        let context = imageops::crop_imm(&out, cx0, cy0, cx1 - cx0, cy1 - cy0).to_image();
        let blurred = imageops::blur(&context, sigma);
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                out.put_pixel(x, y, *blurred.get_pixel(x - cx0, y - cy0));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(w: u32, h: u32, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(w, h, |_, _| Rgb([rng.random(), rng.random(), rng.random()]))
    }

    fn det(x0: f64, y0: f64, x1: f64, y1: f64) -> Detection {
        Detection::face(BBox::new(x0, y0, x1, y1), 0.9, 0)
    }

    fn pixelate_cfg() -> AnonymizeConfig {
        AnonymizeConfig {
            method: AnonymizeMethod::Pixelate,
            ..Default::default()
        }
    }

    #[test]
    fn no_detections_is_identity() {
        let img = noise(32, 24, 1);
        for cfg in [AnonymizeConfig::default(), pixelate_cfg()] {
            assert_eq!(anonymize_frame(&img, &[], &cfg).unwrap().image, img);
        }
    }

    #[test]
    fn whole_image_pixelation_has_at_most_64_blocks() {
        let img = noise(64, 48, 2);
        let cfg = AnonymizeConfig {
            margin_ratio: 0.01,
            ..pixelate_cfg()
        };
        let out = anonymize_frame(&img, &[det(0., 0., 64., 48.)], &cfg).unwrap().image;
        let colors: std::collections::HashSet<[u8; 3]> = out.pixels().map(|p| p.0).collect();
        assert!(colors.len() <= 64, "{} colors", colors.len());
        assert!(colors.len() > 1);
    }

    #[test]
    fn outside_pixels_untouched() {
        let img = noise(40, 40, 3);
        let d = det(10., 10., 20., 20.);
        let region = region_for(&d.bbox, 0.1, 40, 40).unwrap();
        assert_eq!(
            region,
            PixelRegion {
                x0: 9,
                y0: 9,
                x1: 21,
                y1: 21
            }
        );
        for cfg in [AnonymizeConfig::default(), pixelate_cfg()] {
            let out = anonymize_frame(&img, &[d], &cfg).unwrap().image;
            let mut changed = 0;
            for (x, y, p) in out.enumerate_pixels() {
                if region.contains(x, y) {
                    changed += usize::from(p != img.get_pixel(x, y));
                } else {
                    assert_eq!(p, img.get_pixel(x, y), "({x}, {y}) changed");
                }
            }
            assert!(changed > 0);
        }
    }

    #[test]
    fn off_image_boxes_are_skipped() {
        let img = noise(16, 16, 4);
        let out = anonymize_frame(&img, &[det(100., 100., 120., 120.)], &pixelate_cfg()).unwrap();
        assert_eq!(out.skipped, vec![0]);
        assert_eq!(out.image, img);
    }

    #[test]
    fn boxes_are_clamped() {
        assert_eq!(
            region_for(&BBox::new(-5., -5., 5., 5.), 0.0001, 8, 8),
            Some(PixelRegion {
                x0: 0,
                y0: 0,
                x1: 6,
                y1: 6
            })
        );
    }

    #[test]
    fn pixelation_is_idempotent_with_overlaps() {
        let img = noise(50, 50, 5);
        let dets = [det(3., 4., 30., 22.), det(20., 15., 45., 49.), det(0., 40., 9., 50.)];
        let once = anonymize_frame(&img, &dets, &pixelate_cfg()).unwrap().image;
        let twice = anonymize_frame(&once, &dets, &pixelate_cfg()).unwrap().image;
        assert_eq!(once, twice);
    }

    #[test]
    fn blur_changes_nonconstant_regions() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for seed in 0..10 {
            let img = noise(30, 30, seed);
            let x: f64 = rng.random_range(0.0..15.0);
            let y: f64 = rng.random_range(0.0..15.0);
            let d = det(x, y, x + 10., y + 10.);
            let r = region_for(&d.bbox, 0.1, 30, 30).unwrap();
            let out = anonymize_frame(&img, &[d], &AnonymizeConfig::default()).unwrap().image;
            let mut diff = 0u64;
            for y in r.y0..r.y1 {
                for x in r.x0..r.x1 {
                    let (a, b) = (img.get_pixel(x, y).0, out.get_pixel(x, y).0);
                    diff += (0..3).map(|c| u64::from(a[c].abs_diff(b[c]))).sum::<u64>();
                }
            }
            assert!(diff > 0);
        }
    }

    #[test]
    fn config_validation_and_parsing() {
        assert!(AnonymizeConfig {
            pixel_blocks: 1,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(AnonymizeConfig {
            blur_sigma_ratio: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert_eq!(
            "pixelate".parse::<AnonymizeMethod>().unwrap(),
            AnonymizeMethod::Pixelate
        );
        assert_eq!(
            "blur".parse::<AnonymizeMethod>().unwrap(),
            AnonymizeMethod::GaussianBlur
        );
    }
}
