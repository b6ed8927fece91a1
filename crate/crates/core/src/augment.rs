//! Stochastic image distortions producing the two views fed to the
//! redundancy-reduction objective.
//!
//! Pipeline per view: random crop + bilinear resize (always), then horizontal
//! flip, color jitter, grayscale, Gaussian blur and solarization, each with
//! its own probability. Every transform keeps the input shape and clamps
//! values into `[0, 1]`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{Error, Result};
use crate::rng::Rng;

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JitterStrengths {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl JitterStrengths {
    pub const ZERO: JitterStrengths = JitterStrengths {
        brightness: 0.0,
        contrast: 0.0,
        saturation: 0.0,
        hue: 0.0,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub crop_scale_range: (f64, f64),
    pub flip_prob: f64,
    pub jitter_strengths: JitterStrengths,
    pub jitter_prob: f64,
    pub grayscale_prob: f64,
    pub blur_prob: f64,
    pub blur_sigma_range: (f64, f64),
    pub solarize_prob_view1: f64,
    pub solarize_prob_view2: f64,
    pub solarize_threshold: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            crop_scale_range: (0.6, 1.0),
            flip_prob: 0.5,
            jitter_strengths: JitterStrengths {
                brightness: 0.4,
                contrast: 0.4,
                saturation: 0.2,
                hue: 0.1,
            },
            jitter_prob: 0.8,
            grayscale_prob: 0.2,
            blur_prob: 0.5,
            blur_sigma_range: (0.1, 2.0),
            solarize_prob_view1: 0.0,
            solarize_prob_view2: 0.2,
            solarize_threshold: 0.5,
        }
    }
}

impl AugmentationConfig {
    /// A pipeline that returns the input unchanged in both views.
    pub fn identity() -> Self {
        AugmentationConfig {
            crop_scale_range: (1.0, 1.0),
            flip_prob: 0.0,
            jitter_strengths: JitterStrengths::ZERO,
            jitter_prob: 0.0,
            grayscale_prob: 0.0,
            blur_prob: 0.0,
            blur_sigma_range: (1.0, 1.0),
            solarize_prob_view1: 0.0,
            solarize_prob_view2: 0.0,
            solarize_threshold: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_scale_range;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(Error::config("augment.crop_scale_range", "need 0 < lo <= hi <= 1"));
        }
        let probs = [
            ("flip_prob", self.flip_prob),
            ("jitter_prob", self.jitter_prob),
            ("grayscale_prob", self.grayscale_prob),
            ("blur_prob", self.blur_prob),
            ("solarize_prob_view1", self.solarize_prob_view1),
            ("solarize_prob_view2", self.solarize_prob_view2),
            ("solarize_threshold", self.solarize_threshold),
        ];
        for (key, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("augment.{key}"), "must lie in [0, 1]"));
            }
        }
        let j = &self.jitter_strengths;
        if [j.brightness, j.contrast, j.saturation, j.hue].iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::config("augment.jitter_strengths", "strengths must be nonnegative"));
        }
        if j.hue > 0.5 {
            return Err(Error::config("augment.jitter_strengths.hue", "must be at most 0.5"));
        }
        let (slo, shi) = self.blur_sigma_range;
        if !(0.0 < slo && slo <= shi) {
            return Err(Error::config("augment.blur_sigma_range", "need 0 < lo <= hi"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub view1: Image,
    pub view2: Image,
}

/// Integer crop window in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropWindow {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Crops `window` and resizes it back to the input size with bilinear
/// interpolation on half-pixel centers, clamping samples inside the window.
pub fn crop_resize(img: &Image, window: CropWindow) -> Result<Image> {
    let (h, w, c) = img.shape();
    if h < 2 || w < 2 {
        return Err(Error::Degenerate(format!("cannot crop a {h}x{w} image")));
    }
    let CropWindow { top, left, height: ch, width: cw } = window;
    if ch == 0 || cw == 0 || top + ch > h || left + cw > w {
        return Err(Error::Degenerate(format!("crop window {window:?} outside {h}x{w}")));
    }
    let axis = |out: usize, n_out: usize, start: usize, len: usize| {
        let src = start as f64 - 0.5 + (out as f64 + 0.5) * len as f64 / n_out as f64;
        let src = src.clamp(start as f64, (start + len - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(start + len - 1);
        (i0, i1, src - i0 as f64)
    };
    let xs: Vec<_> = (0..w).map(|x| axis(x, w, left, cw)).collect();
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        let (y0, y1, fy) = axis(y, h, top, ch);
        for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
            for k in 0..c {
                let top_row = img.get(y0, x0, k) * (1.0 - fx) + img.get(y0, x1, k) * fx;
                let bottom_row = img.get(y1, x0, k) * (1.0 - fx) + img.get(y1, x1, k) * fx;
                out[(y * w + x) * c + k] = top_row * (1.0 - fy) + bottom_row * fy;
            }
        }
    }
    Ok(Image::from_clamped(h, w, c, out))
}

/// Crops a window whose area fraction is drawn uniformly from `scale_range`
/// (same aspect as the image) at a uniform position, then resizes back.
pub fn random_crop_resize(img: &Image, scale_range: (f64, f64), rng: &mut Rng) -> Result<Image> {
    let (h, w, _) = img.shape();
    if h < 2 || w < 2 {
        return Err(Error::Degenerate(format!("cannot crop a {h}x{w} image")));
    }
    let scale = rng.random_range(scale_range.0..=scale_range.1);
    let side = scale.sqrt();
    let ch = ((h as f64 * side).round() as usize).clamp(1, h);
    let cw = ((w as f64 * side).round() as usize).clamp(1, w);
    let top = rng.random_range(0..=h - ch);
    let left = rng.random_range(0..=w - cw);
    crop_resize(img, CropWindow { top, left, height: ch, width: cw })
}

pub fn horizontal_flip(img: &Image) -> Image {
    let (h, w, c) = img.shape();
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            for k in 0..c {
                out.set(y, x, k, img.get(y, w - 1 - x, k));
            }
        }
    }
    out
}

/// Inverts every pixel at or above `threshold`.
pub fn solarize(img: &Image, threshold: f64) -> Image {
    let mut out = img.clone();
    for p in out.pixels_mut() {
        if *p >= threshold {
            *p = 1.0 - *p;
        }
    }
    out
}

/// Luma-weighted gray replicated across the three channels. Images that are
/// not RGB are returned unchanged.
pub fn to_grayscale(img: &Image) -> Image {
    let mut out = img.clone();
    if img.channels() != 3 {
        return out;
    }
    for px in out.pixels_mut().chunks_exact_mut(3) {
        let g = (LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2]).clamp(0.0, 1.0);
        px.fill(g);
    }
    out
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as u32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

fn jitter_factor(strength: f64, rng: &mut Rng) -> Option<f64> {
    (strength > 0.0).then(|| rng.random_range((1.0 - strength).max(0.0)..=1.0 + strength))
}

/// Brightness, contrast, saturation and hue jitter, applied in that order.
/// Saturation and hue only touch RGB images.
pub fn color_jitter(img: &Image, strengths: &JitterStrengths, rng: &mut Rng) -> Image {
    let mut out = img.clone();
    let rgb = img.channels() == 3;
    if let Some(f) = jitter_factor(strengths.brightness, rng) {
        for p in out.pixels_mut() {
            *p = (*p * f).clamp(0.0, 1.0);
        }
    }
    if let Some(f) = jitter_factor(strengths.contrast, rng) {
        let mean = if rgb {
            let n = (out.len() / 3) as f64;
            out.pixels()
                .chunks_exact(3)
                .map(|px| LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2])
                .sum::<f64>()
                / n
        } else {
            out.pixels().iter().sum::<f64>() / out.len() as f64
        };
        for p in out.pixels_mut() {
            *p = ((*p - mean) * f + mean).clamp(0.0, 1.0);
        }
    }
    if !rgb {
        return out;
    }
    if let Some(f) = jitter_factor(strengths.saturation, rng) {
        for px in out.pixels_mut().chunks_exact_mut(3) {
            let g = LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2];
            for v in px.iter_mut() {
                *v = ((*v - g) * f + g).clamp(0.0, 1.0);
            }
        }
    }
    if strengths.hue > 0.0 {
        let shift = rng.random_range(-strengths.hue..=strengths.hue);
        for px in out.pixels_mut().chunks_exact_mut(3) {
            let (h, s, v) = rgb_to_hsv(px[0], px[1], px[2]);
            let (r, g, b) = hsv_to_rgb(h + shift, s, v);
            px[0] = r.clamp(0.0, 1.0);
            px[1] = g.clamp(0.0, 1.0);
            px[2] = b.clamp(0.0, 1.0);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlurPadding {
    /// Out-of-range taps read the nearest edge pixel.
    Clamp,
    /// Out-of-range taps wrap around (periodic image).
    Wrap,
}

pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    for v in &mut k {
        *v /= total;
    }
    k
}

/// Separable Gaussian blur with a normalized kernel of radius `ceil(3σ)`.
pub fn gaussian_blur(img: &Image, sigma: f64, padding: BlurPadding) -> Image {
    let (h, w, c) = img.shape();
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let index = |i: i64, n: usize| -> usize {
        match padding {
            BlurPadding::Clamp => i.clamp(0, n as i64 - 1) as usize,
            BlurPadding::Wrap => i.rem_euclid(n as i64) as usize,
        }
    };
    let mut horizontal = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for k in 0..c {
                horizontal[(y * w + x) * c + k] = kernel
                    .iter()
                    .enumerate()
                    .map(|(t, kv)| kv * img.get(y, index(x as i64 + t as i64 - radius, w), k))
                    .sum();
            }
        }
    }
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for k in 0..c {
                out[(y * w + x) * c + k] = kernel
                    .iter()
                    .enumerate()
                    .map(|(t, kv)| kv * horizontal[(index(y as i64 + t as i64 - radius, h) * w + x) * c + k])
                    .sum();
            }
        }
    }
    Image::from_clamped(h, w, c, out)
}

fn make_view(img: &Image, cfg: &AugmentationConfig, solarize_prob: f64, rng: &mut Rng) -> Result<Image> {
    // 1-pixel "images" (feature vectors) have no spatial extent to crop.
    let mut v = if img.height() >= 2 && img.width() >= 2 {
        random_crop_resize(img, cfg.crop_scale_range, rng)?
    } else {
        img.clone()
    };
    if rng.random_bool(cfg.flip_prob) {
        v = horizontal_flip(&v);
    }
    if rng.random_bool(cfg.jitter_prob) {
        v = color_jitter(&v, &cfg.jitter_strengths, rng);
    }
    if rng.random_bool(cfg.grayscale_prob) {
        v = to_grayscale(&v);
    }
    if rng.random_bool(cfg.blur_prob) {
        let sigma = rng.random_range(cfg.blur_sigma_range.0..=cfg.blur_sigma_range.1);
        v = gaussian_blur(&v, sigma, BlurPadding::Clamp);
    }
    if rng.random_bool(solarize_prob) {
        v = solarize(&v, cfg.solarize_threshold);
    }
    Ok(v)
}

/// Two independently distorted views of `img`.
pub fn make_views(img: &Image, cfg: &AugmentationConfig, rng: &mut Rng) -> Result<ViewPair> {
    let view1 = make_view(img, cfg, cfg.solarize_prob_view1, rng)?;
    let view2 = make_view(img, cfg, cfg.solarize_prob_view2, rng)?;
    Ok(ViewPair { view1, view2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    fn random_image(h: usize, w: usize, c: usize, seed: u64) -> Image {
        let mut r = stream(seed, "img", &[]);
        Image::from_clamped(h, w, c, (0..h * w * c).map(|_| r.random::<f64>()).collect())
    }

    #[test]
    fn full_crop_is_identity() {
        let img = random_image(6, 5, 3, 1);
        let out = random_crop_resize(&img, (1.0, 1.0), &mut stream(0, "c", &[])).unwrap();
        for (a, b) in out.pixels().iter().zip(img.pixels()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_image_survives_crop() {
        let img = Image::filled(8, 8, 1, 0.37);
        let out = random_crop_resize(&img, (0.3, 0.6), &mut stream(4, "c", &[])).unwrap();
        assert!(out.pixels().iter().all(|p| (p - 0.37).abs() < 1e-15));
    }

    #[test]
    fn bilinear_upscale_of_ramp() {
        // 4x4 ramp v(y, x) = (4y + x) / 15; crop the 2x2 window at (1, 1) and
        // upscale 2x. Half-pixel centers sample source rows/cols at
        // 0.75, 1.25, 1.75, 2.25, clamped into [1, 2] -> 1, 1.25, 1.75, 2.
        let data: Vec<f64> = (0..16).map(|i| i as f64 / 15.0).collect();
        let img = Image::new(4, 4, 1, data).unwrap();
        let out = crop_resize(&img, CropWindow { top: 1, left: 1, height: 2, width: 2 }).unwrap();
        let expected = [
            [5.0, 5.25, 5.75, 6.0],
            [6.0, 6.25, 6.75, 7.0],
            [8.0, 8.25, 8.75, 9.0],
            [9.0, 9.25, 9.75, 10.0],
        ];
        for y in 0..4 {
            for x in 0..4 {
                assert!((out.get(y, x, 0) - expected[y][x] / 15.0).abs() < 1e-12, "({y},{x})");
            }
        }
    }

    #[test]
    fn crop_rejects_tiny_images() {
        let img = Image::filled(1, 5, 1, 0.5);
        assert!(matches!(
            random_crop_resize(&img, (0.5, 1.0), &mut stream(0, "c", &[])),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn flip_cases() {
        let row = Image::new(1, 3, 1, vec![0.1, 0.2, 0.3]).unwrap();
        assert_eq!(horizontal_flip(&row).pixels(), &[0.3, 0.2, 0.1]);
        let sym = Image::new(1, 3, 1, vec![0.4, 0.9, 0.4]).unwrap();
        assert_eq!(horizontal_flip(&sym), sym);
        let img = random_image(5, 7, 3, 2);
        assert_eq!(horizontal_flip(&horizontal_flip(&img)), img);
    }

    #[test]
    fn solarize_cases() {
        let img = Image::new(1, 3, 1, vec![0.8, 0.3, 1.0]).unwrap();
        let half = solarize(&img, 0.5);
        assert!((half.pixels()[0] - 0.2).abs() < 1e-15);
        assert_eq!(half.pixels()[1], 0.3);
        assert_eq!(solarize(&img, 1.0).pixels(), &[0.8, 0.3, 0.0]);
        let full = solarize(&img, 0.0);
        for (a, b) in full.pixels().iter().zip(img.pixels()) {
            assert_eq!(*a, 1.0 - b);
        }
    }

    #[test]
    fn zero_jitter_is_identity() {
        let img = random_image(4, 4, 3, 3);
        assert_eq!(color_jitter(&img, &JitterStrengths::ZERO, &mut stream(0, "j", &[])), img);
    }

    #[test]
    fn grayscale_fixed_point() {
        let mut img = random_image(3, 3, 3, 4);
        for px in img.pixels_mut().chunks_exact_mut(3) {
            let g = px[0];
            px.fill(g);
        }
        let out = to_grayscale(&img);
        for (a, b) in out.pixels().iter().zip(img.pixels()) {
            assert!((a - b).abs() < 1e-15);
        }
        let gray1 = random_image(3, 3, 1, 5);
        assert_eq!(to_grayscale(&gray1), gray1);
    }

    #[test]
    fn hsv_round_trip() {
        let mut r = stream(9, "hsv", &[]);
        for _ in 0..1000 {
            let (a, b, c) = (r.random::<f64>(), r.random::<f64>(), r.random::<f64>());
            let (h, s, v) = rgb_to_hsv(a, b, c);
            let (x, y, z) = hsv_to_rgb(h, s, v);
            assert!((a - x).abs() < 1e-12 && (b - y).abs() < 1e-12 && (c - z).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_of_constant_and_mean_preservation() {
        let img = Image::filled(9, 9, 2, 0.6);
        let out = gaussian_blur(&img, 1.3, BlurPadding::Clamp);
        assert!(out.pixels().iter().all(|p| (p - 0.6).abs() < 1e-12));

        let periodic = random_image(12, 10, 1, 6);
        let mean = |i: &Image| i.pixels().iter().sum::<f64>() / i.len() as f64;
        let blurred = gaussian_blur(&periodic, 1.1, BlurPadding::Wrap);
        assert!((mean(&blurred) - mean(&periodic)).abs() < 1e-6);
    }

    #[test]
    fn kernel_shape() {
        let k = gaussian_kernel(0.5);
        assert_eq!(k.len(), 2 * 2 + 1);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(gaussian_kernel(2.0).len(), 13);
    }

    #[test]
    fn identity_config_views() {
        let img = random_image(6, 6, 3, 7);
        let pair = make_views(&img, &AugmentationConfig::identity(), &mut stream(1, "v", &[])).unwrap();
        assert_eq!(pair.view1, img);
        assert_eq!(pair.view2, img);
    }

    #[test]
    fn flip_only_config() {
        let img = random_image(6, 6, 1, 8);
        let cfg = AugmentationConfig { flip_prob: 1.0, ..AugmentationConfig::identity() };
        let pair = make_views(&img, &cfg, &mut stream(1, "v", &[])).unwrap();
        let flipped = horizontal_flip(&img);
        assert_eq!(pair.view1, flipped);
        assert_eq!(pair.view2, flipped);
    }

    #[test]
    fn views_are_deterministic() {
        let img = random_image(10, 10, 3, 9);
        let cfg = AugmentationConfig::default();
        let a = make_views(&img, &cfg, &mut stream(5, "v", &[3])).unwrap();
        let b = make_views(&img, &cfg, &mut stream(5, "v", &[3])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn feature_vector_images_skip_crop() {
        let img = random_image(1, 1, 16, 10);
        let pair = make_views(&img, &AugmentationConfig::default(), &mut stream(0, "v", &[])).unwrap();
        assert_eq!(pair.view1.shape(), (1, 1, 16));
    }

    #[test]
    fn config_validation() {
        assert!(AugmentationConfig::default().validate().is_ok());
        let bad = AugmentationConfig { crop_scale_range: (0.0, 1.0), ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = AugmentationConfig { blur_prob: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn transforms_preserve_shape_and_range(h in 2usize..9, w in 2usize..9, rgb in any::<bool>(), seed in any::<u64>()) {
            let c = if rgb { 3 } else { 1 };
            let img = random_image(h, w, c, seed);
            let mut r = stream(seed, "p", &[]);
            let cfg = AugmentationConfig {
                flip_prob: 0.5, jitter_prob: 1.0, grayscale_prob: 0.5, blur_prob: 1.0,
                solarize_prob_view1: 0.5, solarize_prob_view2: 0.5,
                ..AugmentationConfig::default()
            };
            let pair = make_views(&img, &cfg, &mut r).unwrap();
            for v in [&pair.view1, &pair.view2] {
                prop_assert_eq!(v.shape(), img.shape());
                prop_assert!(v.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
            }
            let twice = solarize(&solarize(&img, 0.0), 0.0);
            for (a, b) in twice.pixels().iter().zip(img.pixels()) {
                prop_assert!((a - b).abs() < 1e-15);
            }
        }
    }
}
