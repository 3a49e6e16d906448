//! Photometric augmentations applied to a finished composite.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::imagebuf::RgbImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    pub blur_prob: f64,
    pub blur_sigma: [f64; 2],
    pub color_prob: f64,
    pub brightness: [f64; 2],
    pub contrast: [f64; 2],
    pub saturation: [f64; 2],
    pub noise_prob: f64,
    /// Noise standard deviation range in 8-bit levels.
    pub noise_sigma: [f64; 2],
    pub tone_prob: f64,
    pub tone_jitter: f64,
    /// Evaluate SH colour along a random direction instead of the view ray.
    pub sh_random: bool,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            blur_prob: 0.5,
            blur_sigma: [0.5, 1.5],
            color_prob: 0.5,
            brightness: [0.8, 1.2],
            contrast: [0.8, 1.2],
            saturation: [0.8, 1.2],
            noise_prob: 0.5,
            noise_sigma: [0.0, 8.0],
            tone_prob: 0.5,
            tone_jitter: 0.15,
            sh_random: true,
        }
    }
}

impl AugmentationConfig {
    /// Every augmentation off and view-ray SH.
    pub fn disabled() -> Self {
        Self {
            blur_prob: 0.0,
            color_prob: 0.0,
            noise_prob: 0.0,
            tone_prob: 0.0,
            sh_random: false,
            ..Self::default()
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..=range[1])
    } else {
        range[0]
    }
}

fn luma(p: &[f32]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

/// Separable Gaussian blur with edge clamping.
pub fn gaussian_blur(img: &RgbImage, sigma: f64) -> RgbImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp() as f32)
        .collect();
    let sum: f32 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= sum);

    let (w, h) = (img.width as isize, img.height as isize);
    let pass = |src: &RgbImage, horizontal: bool| {
        let mut out = RgbImage::new(src.width, src.height);
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0f32; 3];
                for (k, &kv) in kernel.iter().enumerate() {
                    let o = k as isize - radius;
                    let (sx, sy) = if horizontal {
                        ((x + o).clamp(0, w - 1), y)
                    } else {
                        (x, (y + o).clamp(0, h - 1))
                    };
                    let p = src.get(sx as usize, sy as usize);
                    for c in 0..3 {
                        acc[c] += kv * p[c];
                    }
                }
                out.set(x as usize, y as usize, acc);
            }
        }
        out
    };
    pass(&pass(img, true), false)
}

/// Brightness and contrast scale about zero and the mean luma; saturation
/// scales each pixel's distance from its own luma.
pub fn adjust_color(img: &mut RgbImage, brightness: f32, contrast: f32, saturation: f32) {
    let n = (img.width * img.height).max(1) as f32;
    for p in img.data.chunks_exact_mut(3) {
        p.iter_mut().for_each(|v| *v *= brightness);
    }
    let mean = img.data.chunks_exact(3).map(luma).sum::<f32>() / n;
    for p in img.data.chunks_exact_mut(3) {
        let g = luma(p);
        for v in p.iter_mut() {
            let s = g + (*v - g) * saturation;
            *v = ((s - mean) * contrast + mean).clamp(0.0, 1.0);
        }
    }
}

/// Adds zero-mean Gaussian noise with `sigma` in [0, 1] units and clamps.
pub fn add_noise<R: Rng + ?Sized>(img: &mut RgbImage, sigma: f64, rng: &mut R) {
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    for v in &mut img.data {
        *v = (f64::from(*v) + normal.sample(rng)).clamp(0.0, 1.0) as f32;
    }
}

/// Monotone piecewise-cubic curve through `(0,0)`, the knots, and `(1,1)`,
/// with Fritsch–Carlson limited tangents.
#[derive(Debug, Clone, PartialEq)]
pub struct ToneCurve {
    xs: Vec<f64>,
    ys: Vec<f64>,
    tangents: Vec<f64>,
}

impl ToneCurve {
    /// `knots` must have increasing x inside (0, 1) and non-decreasing y.
    pub fn new(knots: &[(f64, f64)]) -> Self {
        let mut xs = vec![0.0];
        let mut ys = vec![0.0];
        for &(x, y) in knots {
            xs.push(x);
            ys.push(y);
        }
        xs.push(1.0);
        ys.push(1.0);
        let n = xs.len();
        let secant: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])).collect();
        let mut m = vec![0.0; n];
        m[0] = secant[0];
        m[n - 1] = secant[n - 2];
        for i in 1..n - 1 {
            m[i] = if secant[i - 1] * secant[i] <= 0.0 {
                0.0
            } else {
                (secant[i - 1] + secant[i]) / 2.0
            };
        }
        for i in 0..n - 1 {
            if secant[i] == 0.0 {
                m[i] = 0.0;
                m[i + 1] = 0.0;
                continue;
            }
            let a = m[i] / secant[i];
            let b = m[i + 1] / secant[i];
            let s = a * a + b * b;
            if s > 9.0 {
                let t = 3.0 / s.sqrt();
                m[i] = t * a * secant[i];
                m[i + 1] = t * b * secant[i];
            }
        }
        Self { xs, ys, tangents: m }
    }

    /// Three interior knots at 0.25, 0.5, 0.75 with y jittered by ±`jitter`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, jitter: f64) -> Self {
        let mut ys: Vec<f64> = [0.25, 0.5, 0.75]
            .iter()
            .map(|&x| (x + rng.random_range(-jitter..=jitter)).clamp(0.0, 1.0))
            .collect();
        ys.sort_by(f64::total_cmp);
        let knots: Vec<(f64, f64)> = [0.25, 0.5, 0.75].into_iter().zip(ys).collect();
        Self::new(&knots)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        let i = self.xs.windows(2).position(|w| x <= w[1]).unwrap_or(self.xs.len() - 2);
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        (h00 * self.ys[i] + h10 * h * self.tangents[i] + h01 * self.ys[i + 1] + h11 * h * self.tangents[i + 1])
            .clamp(0.0, 1.0)
    }

    pub fn apply(&self, img: &mut RgbImage) {
        for v in &mut img.data {
            *v = self.eval(f64::from(*v)) as f32;
        }
    }
}

/// Applies each augmentation with its configured probability, in the order
/// blur, colour, tone curve, noise.
pub fn augment_pixels<R: Rng + ?Sized>(img: &RgbImage, rng: &mut R, aug: &AugmentationConfig) -> RgbImage {
    let mut out = img.clone();
    if rng.random_bool(aug.blur_prob.clamp(0.0, 1.0)) {
        out = gaussian_blur(&out, uniform(rng, aug.blur_sigma));
    }
    if rng.random_bool(aug.color_prob.clamp(0.0, 1.0)) {
        let b = uniform(rng, aug.brightness) as f32;
        let c = uniform(rng, aug.contrast) as f32;
        let s = uniform(rng, aug.saturation) as f32;
        adjust_color(&mut out, b, c, s);
    }
    if rng.random_bool(aug.tone_prob.clamp(0.0, 1.0)) {
        ToneCurve::random(rng, aug.tone_jitter).apply(&mut out);
    }
    if rng.random_bool(aug.noise_prob.clamp(0.0, 1.0)) {
        let sigma = uniform(rng, aug.noise_sigma) / 255.0;
        add_noise(&mut out, sigma, rng);
    }
    out
}
