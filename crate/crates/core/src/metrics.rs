//! Image-quality metrics (PSNR, SSIM, mean CIEDE2000) and the evaluation
//! report built from them.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cfa::RgbImage;
use crate::color::delta_e2000_rgb;
use crate::error::{Error, Result};

/// Value reported for a zero-error PSNR.
pub const PSNR_CAP: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_pair(op: &'static str, a: &RgbImage, b: &RgbImage) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::shape(
            op,
            format!(
                "{}x{} vs {}x{}",
                a.height(),
                a.width(),
                b.height(),
                b.width()
            ),
        ));
    }
    Ok(())
}

/// Peak signal-to-noise ratio over all channels in dB.
pub fn psnr(a: &RgbImage, b: &RgbImage, peak: f64) -> Result<f64> {
    check_pair("psnr", a, b)?;
    let n = a.data().len() as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

/// Rec. 601 luma, row-major.
pub fn luma(img: &RgbImage) -> Vec<f64> {
    img.data()
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect()
}

/// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filter of a `h x w` plane.
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            rows[y * wo + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * src[y * w + x + i])
                .sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * rows[(y + i) * wo + x])
                .sum();
        }
    }
    out
}

/// Mean SSIM of the luma planes over every full 11x11 Gaussian window.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_pair("ssim", a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape(
            "ssim",
            format!("image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let (x, y) = (luma(a), luma(b));
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mx = filter_valid(&x, h, w, &taps);
    let my = filter_valid(&y, h, w, &taps);
    let mxx = filter_valid(&prod(&x, &x), h, w, &taps);
    let myy = filter_valid(&prod(&y, &y), h, w, &taps);
    let mxy = filter_valid(&prod(&x, &y), h, w, &taps);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = mxx[i] - ux * ux;
        let vy = myy[i] - uy * uy;
        let cxy = mxy[i] - ux * uy;
        total +=
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / mx.len() as f64)
}

/// Mean per-pixel CIEDE2000.
pub fn delta_e_image(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_pair("delta_e_image", a, b)?;
    let n = a.width() * a.height();
    let mut total = 0.0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            total += delta_e2000_rgb(a.pixel(y, x), b.pixel(y, x));
        }
    }
    Ok(total / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub psnr: f64,
    pub ssim: f64,
    pub delta_e: f64,
}

impl Scores {
    pub fn compute(reconstructed: &RgbImage, target: &RgbImage) -> Result<Self> {
        Ok(Self {
            psnr: psnr(reconstructed, target, 1.0)?,
            ssim: ssim(reconstructed, target)?,
            delta_e: delta_e_image(reconstructed, target)?,
        })
    }

    pub fn mean(items: &[Scores]) -> Self {
        let n = items.len().max(1) as f64;
        Self {
            psnr: items.iter().map(|s| s.psnr).sum::<f64>() / n,
            ssim: items.iter().map(|s| s.ssim).sum::<f64>() / n,
            delta_e: items.iter().map(|s| s.delta_e).sum::<f64>() / n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScores {
    pub image: String,
    #[serde(flatten)]
    pub scores: Scores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaGroup {
    pub sigma: f64,
    pub mean: Scores,
    pub images: Vec<ImageScores>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub pattern: String,
    pub seed: u64,
    pub groups: Vec<SigmaGroup>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Aligned text table: one block per noise level with per-image rows
    /// followed by the mean row.
    pub fn to_table(&self) -> String {
        let name_w = self
            .groups
            .iter()
            .flat_map(|g| g.images.iter().map(|i| i.image.len()))
            .chain([5])
            .max()
            .unwrap_or(5);
        let mut out = String::new();
        let _ = writeln!(out, "pattern {}  seed {}", self.pattern, self.seed);
        let header = format!(
            "{:>6}  {:<name_w$}  {:>9}  {:>7}  {:>7}",
            "sigma", "image", "PSNR", "SSIM", "DeltaE"
        );
        let rule = "-".repeat(header.len());
        let _ = writeln!(out, "{header}");
        let _ = writeln!(out, "{rule}");
        let row = |out: &mut String, sigma: f64, name: &str, s: &Scores| {
            let _ = writeln!(
                out,
                "{:>6}  {:<name_w$}  {:>9.4}  {:>7.4}  {:>7.4}",
                format_sigma(sigma),
                name,
                s.psnr,
                s.ssim,
                s.delta_e
            );
        };
        for g in &self.groups {
            for i in &g.images {
                row(&mut out, g.sigma, &i.image, &i.scores);
            }
            row(&mut out, g.sigma, "mean", &g.mean);
            let _ = writeln!(out, "{rule}");
        }
        out
    }
}

fn format_sigma(s: f64) -> String {
    if s.fract() == 0.0 {
        format!("{}", s as i64)
    } else {
        format!("{s}")
    }
}
