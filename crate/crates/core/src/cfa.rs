//! Colour-filter-array capture simulation: Bayer / Quad-Bayer / Nona-Bayer
//! patterns, mosaicing, Gaussian read noise, Nona-to-Bayer pixel binning and
//! training-patch extraction.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{ImageBuffer, Luma};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CfaKind {
    Bayer,
    Quad,
    Nona,
}

impl CfaKind {
    /// Side length of each homogeneous block.
    pub fn block(self) -> usize {
        match self {
            CfaKind::Bayer => 1,
            CfaKind::Quad => 2,
            CfaKind::Nona => 3,
        }
    }

    pub fn period(self) -> usize {
        2 * self.block()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CfaKind::Bayer => "bayer",
            CfaKind::Quad => "quad",
            CfaKind::Nona => "nona",
        }
    }
}

impl fmt::Display for CfaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CfaKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bayer" => Ok(CfaKind::Bayer),
            "quad" | "quad-bayer" | "quadbayer" => Ok(CfaKind::Quad),
            "nona" | "nona-bayer" | "nonabayer" => Ok(CfaKind::Nona),
            other => Err(Error::InvalidArgument(format!(
                "unknown CFA kind `{other}`"
            ))),
        }
    }
}

pub const RED: u8 = 0;
pub const GREEN: u8 = 1;
pub const BLUE: u8 = 2;

/// Arrangement of the 2x2 Bayer cell the larger patterns are built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BayerBase {
    #[default]
    Rggb,
    Bggr,
    Grbg,
    Gbrg,
}

impl BayerBase {
    pub fn cell(self) -> [[u8; 2]; 2] {
        match self {
            BayerBase::Rggb => [[RED, GREEN], [GREEN, BLUE]],
            BayerBase::Bggr => [[BLUE, GREEN], [GREEN, RED]],
            BayerBase::Grbg => [[GREEN, RED], [BLUE, GREEN]],
            BayerBase::Gbrg => [[GREEN, BLUE], [RED, GREEN]],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BayerBase::Rggb => "RGGB",
            BayerBase::Bggr => "BGGR",
            BayerBase::Grbg => "GRBG",
            BayerBase::Gbrg => "GBRG",
        }
    }
}

impl From<BayerBase> for String {
    fn from(b: BayerBase) -> Self {
        b.as_str().to_string()
    }
}

impl TryFrom<String> for BayerBase {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for BayerBase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RGGB" => Ok(BayerBase::Rggb),
            "BGGR" => Ok(BayerBase::Bggr),
            "GRBG" => Ok(BayerBase::Grbg),
            "GBRG" => Ok(BayerBase::Gbrg),
            other => Err(Error::InvalidArgument(format!(
                "unknown Bayer base `{other}`"
            ))),
        }
    }
}

/// Periodic channel assignment. `map[r * period + c]` is the channel index
/// (0 = R, 1 = G, 2 = B) sampled at `(r mod period, c mod period)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CfaPattern {
    kind: CfaKind,
    base: BayerBase,
    map: Vec<u8>,
}

impl CfaPattern {
    pub fn new(kind: CfaKind, base: BayerBase) -> Self {
        let p = kind.period();
        let b = kind.block();
        let cell = base.cell();
        let map = (0..p * p).map(|i| cell[(i / p) / b][(i % p) / b]).collect();
        Self { kind, base, map }
    }

    pub fn kind(&self) -> CfaKind {
        self.kind
    }

    pub fn base(&self) -> BayerBase {
        self.base
    }

    pub fn period(&self) -> usize {
        self.kind.period()
    }

    pub fn map(&self) -> &[u8] {
        &self.map
    }

    /// Channel sampled at image position `(y, x)`.
    pub fn channel_at(&self, y: usize, x: usize) -> u8 {
        let p = self.period();
        self.map[(y % p) * p + x % p]
    }
}

/// Build a pattern from a kind name and a base name, e.g. `("nona", "RGGB")`.
pub fn make_pattern(kind: &str, base: &str) -> Result<CfaPattern> {
    Ok(CfaPattern::new(kind.parse()?, base.parse()?))
}

/// Gamma-encoded RGB image with values in `[0, 1]`, stored `H x W x 3`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(Error::shape(
                "rgb_image",
                format!(
                    "{width}x{height}x3 needs {} values, got {}",
                    width * height * 3,
                    data.len()
                ),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn constant(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        Self::from_fn(width, height, |_, _, c| rgb[c])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Result<Self> {
        if y0 + height > self.height || x0 + width > self.width || height == 0 || width == 0 {
            return Err(Error::shape(
                "crop",
                format!(
                    "{height}x{width} at ({y0},{x0}) outside {}x{}",
                    self.height, self.width
                ),
            ));
        }
        Ok(Self::from_fn(width, height, |y, x, c| {
            self.get(y0 + y, x0 + x, c)
        }))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let data = img
            .into_raw()
            .into_iter()
            .map(|v| f64::from(v) / 255.0)
            .collect();
        Self::new(w as usize, h as usize, data)
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        ImageBuffer::from_raw(self.width as u32, self.height as u32, raw).expect("buffer size")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// As a `1 x 3 x H x W` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let (h, w) = (self.height, self.width);
        Tensor::from_fn(vec![1, 3, h, w], |i| {
            let (c, p) = (i / (h * w), i % (h * w));
            T::lit(self.data[p * 3 + c])
        })
    }

    /// Image `index` of an `N x 3 x H x W` tensor.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, index: usize) -> Result<Self> {
        let (n, c, h, w) = t.dims4()?;
        if c != 3 || index >= n {
            return Err(Error::shape(
                "rgb_image",
                format!("cannot take image {index} of {:?}", t.shape()),
            ));
        }
        let d = &t.data()[index * 3 * h * w..(index + 1) * 3 * h * w];
        Ok(Self::from_fn(w, h, |y, x, ch| {
            d[(ch * h + y) * w + x].as_f64()
        }))
    }
}

/// Single-plane CFA capture with its pattern and noise metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct MosaicImage {
    width: usize,
    height: usize,
    plane: Vec<f64>,
    pattern: CfaPattern,
    /// Noise standard deviation in 8-bit units (0 for a clean capture).
    pub sigma: f64,
    pub seed: u64,
}

impl MosaicImage {
    pub fn new(width: usize, height: usize, plane: Vec<f64>, pattern: CfaPattern) -> Result<Self> {
        check_dims("mosaic", width, height, pattern.period())?;
        if plane.len() != width * height {
            return Err(Error::shape(
                "mosaic",
                format!("plane has {} values for {width}x{height}", plane.len()),
            ));
        }
        let plane = plane.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Self {
            width,
            height,
            plane,
            pattern,
            sigma: 0.0,
            seed: 0,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn plane(&self) -> &[f64] {
        &self.plane
    }

    pub fn pattern(&self) -> &CfaPattern {
        &self.pattern
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.plane[y * self.width + x]
    }

    /// As a `1 x 1 x H x W` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_fn(vec![1, 1, self.height, self.width], |i| {
            T::lit(self.plane[i])
        })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.plane
            .iter_mut()
            .for_each(|v| *v = (*v * factor).clamp(0.0, 1.0));
        out
    }
}

fn check_dims(op: &'static str, width: usize, height: usize, period: usize) -> Result<()> {
    if width == 0 || height == 0 || width % period != 0 || height % period != 0 {
        return Err(Error::shape(
            op,
            format!("{width}x{height} is not a positive multiple of the CFA period {period}"),
        ));
    }
    Ok(())
}

/// Sample an RGB image through the pattern.
pub fn mosaic(rgb: &RgbImage, pattern: &CfaPattern) -> Result<MosaicImage> {
    check_dims("mosaic", rgb.width, rgb.height, pattern.period())?;
    MosaicImage::new(
        rgb.width,
        rgb.height,
        sample_plane(rgb, pattern),
        pattern.clone(),
    )
}

/// Raw CFA sampling without the period-multiple requirement of
/// [`MosaicImage`]; the pattern is anchored at the top-left pixel.
pub fn sample_plane(rgb: &RgbImage, pattern: &CfaPattern) -> Vec<f64> {
    let mut plane = Vec::with_capacity(rgb.width * rgb.height);
    for y in 0..rgb.height {
        for x in 0..rgb.width {
            plane.push(rgb.get(y, x, pattern.channel_at(y, x) as usize));
        }
    }
    plane
}

/// Add `N(0, sigma/255)` read noise and clip to `[0, 1]`.
pub fn add_noise(m: &MosaicImage, sigma: f64, seed: u64) -> Result<MosaicImage> {
    add_noise_keyed(m, sigma, seed, 0)
}

/// [`add_noise`] with the generator keyed by `(seed, stream)`, so the draw
/// for item `stream` does not depend on how many items came before it.
/// `sigma = 0` returns the input unchanged, metadata included.
pub fn add_noise_keyed(m: &MosaicImage, sigma: f64, seed: u64, stream: u64) -> Result<MosaicImage> {
    let mut out = m.clone();
    noise_plane(&mut out.plane, sigma, seed, stream)?;
    if sigma == 0.0 {
        return Ok(out);
    }
    out.sigma = sigma;
    out.seed = seed;
    Ok(out)
}

/// In-place form of [`add_noise_keyed`] on a bare plane.
pub fn noise_plane(plane: &mut [f64], sigma: f64, seed: u64, stream: u64) -> Result<()> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise sigma must be >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(());
    }
    let mut rng = noise_rng(seed, stream);
    let normal = Normal::new(0.0, sigma / 255.0).expect("finite positive std");
    for v in plane.iter_mut() {
        *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
    }
    Ok(())
}

pub(crate) fn noise_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Average every 3x3 homogeneous block of a Nona-Bayer capture, giving a
/// Bayer capture at a third of the resolution with the same base.
pub fn bin_nona_to_bayer(m: &MosaicImage) -> Result<MosaicImage> {
    if m.pattern.kind != CfaKind::Nona {
        return Err(Error::InvalidArgument(format!(
            "pixel binning needs a nona mosaic, got {}",
            m.pattern.kind
        )));
    }
    let (w, h) = (m.width / 3, m.height / 3);
    let mut plane = Vec::with_capacity(w * h);
    for by in 0..h {
        for bx in 0..w {
            // Offsets from the first sample keep constant blocks exact.
            let first = m.get(by * 3, bx * 3);
            let mut s = 0.0;
            for dy in 0..3 {
                for dx in 0..3 {
                    s += m.get(by * 3 + dy, bx * 3 + dx) - first;
                }
            }
            plane.push(first + s / 9.0);
        }
    }
    let mut out = MosaicImage::new(w, h, plane, CfaPattern::new(CfaKind::Bayer, m.pattern.base))?;
    out.sigma = m.sigma;
    out.seed = m.seed;
    Ok(out)
}

/// Deterministic stand-in for a natural photograph: a smooth, mildly
/// tinted luminance ramp with a soft texture, overlaid by discs and bars
/// whose colours mostly differ in brightness. Edges are anti-aliased by 4x4
/// supersampling.
pub fn synthetic_scene(width: usize, height: usize, seed: u64) -> RgbImage {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.8..1.2));
    let (l0, gx, gy) = (
        rng.random_range(0.3..0.6),
        rng.random_range(-0.3..0.3),
        rng.random_range(-0.3..0.3),
    );
    let (fx, fy, phase) = (
        rng.random_range(1.0..4.0),
        rng.random_range(1.0..4.0),
        rng.random_range(0.0..6.3),
    );
    struct Shape {
        disc: bool,
        cx: f64,
        cy: f64,
        r: f64,
        colour: [f64; 3],
    }
    let shapes: Vec<Shape> = (0..5)
        .map(|_| {
            let level = rng.random_range(0.1..0.9);
            Shape {
                disc: rng.random_bool(0.5),
                cx: rng.random_range(0.0..1.0),
                cy: rng.random_range(0.0..1.0),
                r: rng.random_range(0.15..0.35),
                colour: std::array::from_fn(|_| level * rng.random_range(0.75..1.25)),
            }
        })
        .collect();
    let sample = |u: f64, v: f64, c: usize| {
        let lum =
            l0 + gx * u + gy * v + 0.05 * (std::f64::consts::TAU * (fx * u + fy * v) + phase).sin();
        let mut val = lum * tint[c];
        for s in &shapes {
            let inside = if s.disc {
                (u - s.cx).powi(2) + (v - s.cy).powi(2) < s.r * s.r
            } else {
                (u - s.cx).abs() < s.r && (v - s.cy).abs() < s.r * 0.5
            };
            if inside {
                val = s.colour[c];
            }
        }
        val
    };
    const SS: usize = 4;
    RgbImage::from_fn(width, height, |y, x, c| {
        let mut acc = 0.0;
        for sy in 0..SS {
            for sx in 0..SS {
                let u = (x as f64 + (sx as f64 + 0.5) / SS as f64) / width as f64;
                let v = (y as f64 + (sy as f64 + 0.5) / SS as f64) / height as f64;
                acc += sample(u, v, c);
            }
        }
        (acc / (SS * SS) as f64).clamp(0.0, 1.0)
    })
}

#[derive(Clone, Debug)]
pub struct Patch {
    pub image: RgbImage,
    pub source: PathBuf,
    /// `(y, x)` of the top-left corner in the source image.
    pub offset: (usize, usize),
}

/// Ground-truth training patches, ordered by source path then raster offset.
#[derive(Clone, Debug)]
pub struct PatchSet {
    pub patches: Vec<Patch>,
    pub size: usize,
    pub stride: usize,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn from_images(images: Vec<RgbImage>) -> Result<Self> {
        let Some(first) = images.first() else {
            return Err(Error::Data("patch set is empty".into()));
        };
        let size = first.width;
        if images.iter().any(|i| i.width != size || i.height != size) {
            return Err(Error::Data(
                "patches must all be square and equally sized".into(),
            ));
        }
        Ok(Self {
            patches: images
                .into_iter()
                .enumerate()
                .map(|(i, image)| Patch {
                    image,
                    source: PathBuf::from(format!("memory:{i}")),
                    offset: (0, 0),
                })
                .collect(),
            size,
            stride: size,
        })
    }
}

/// Every full `size x size` window at multiples of `stride`, raster order.
pub fn patches_of(image: &RgbImage, size: usize, stride: usize) -> Vec<(usize, usize)> {
    if size == 0 || stride == 0 || image.height < size || image.width < size {
        return Vec::new();
    }
    let mut out = Vec::new();
    for y in (0..=image.height - size).step_by(stride) {
        for x in (0..=image.width - size).step_by(stride) {
            out.push((y, x));
        }
    }
    out
}

/// Image files (png/jpg/...) directly inside `dir`, sorted by path.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension().and_then(|e| e.to_str()).is_some_and(|e| {
                    matches!(
                        e.to_ascii_lowercase().as_str(),
                        "png" | "jpg" | "jpeg" | "bmp" | "tif" | "tiff"
                    )
                })
        })
        .collect();
    paths.sort();
    Ok(paths)
}

/// Cut every image in `image_dir` into patches. Undecodable files are
/// skipped with a warning; an empty result is an error.
pub fn extract_patches(image_dir: &Path, size: usize, stride: usize) -> Result<PatchSet> {
    if size == 0 || stride == 0 {
        return Err(Error::InvalidArgument(
            "patch size and stride must be positive".into(),
        ));
    }
    let mut patches = Vec::new();
    for path in list_images(image_dir)? {
        let image = match RgbImage::load(&path) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        for (y, x) in patches_of(&image, size, stride) {
            patches.push(Patch {
                image: image.crop(y, x, size, size)?,
                source: path.clone(),
                offset: (y, x),
            });
        }
    }
    if patches.is_empty() {
        return Err(Error::Data(format!(
            "no {size}x{size} patches found in {}",
            image_dir.display()
        )));
    }
    Ok(PatchSet {
        patches,
        size,
        stride,
    })
}

fn serialize_sigma<S: Serializer>(sigma: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if sigma.fract() == 0.0 && sigma.abs() < 1e15 {
        s.serialize_i64(*sigma as i64)
    } else {
        s.serialize_f64(*sigma)
    }
}

/// JSON metadata written next to a mosaic PNG.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MosaicSidecar {
    pub pattern: CfaKind,
    pub base: String,
    #[serde(serialize_with = "serialize_sigma")]
    pub sigma: f64,
    pub seed: u64,
}

pub fn sidecar_path(png: &Path) -> PathBuf {
    png.with_extension("json")
}

/// Write a mosaic as a 16-bit grey PNG (`round(v * 65535)`) plus sidecar.
pub fn write_mosaic(path: &Path, m: &MosaicImage) -> Result<()> {
    let raw: Vec<u16> = m
        .plane
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(m.width as u32, m.height as u32, raw).expect("buffer size");
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let sidecar = MosaicSidecar {
        pattern: m.pattern.kind,
        base: m.pattern.base.as_str().to_string(),
        sigma: m.sigma,
        seed: m.seed,
    };
    let side = sidecar_path(path);
    std::fs::write(&side, serde_json::to_string(&sidecar)?).map_err(|e| Error::io(&side, e))
}

pub fn read_mosaic(path: &Path) -> Result<MosaicImage> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let sidecar: MosaicSidecar = serde_json::from_str(&text)?;
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma16();
    let (w, h) = img.dimensions();
    let plane = img
        .into_raw()
        .into_iter()
        .map(|v| f64::from(v) / 65535.0)
        .collect();
    let pattern = CfaPattern::new(sidecar.pattern, sidecar.base.parse()?);
    let mut m = MosaicImage::new(w as usize, h as usize, plane, pattern)?;
    m.sigma = sidecar.sigma;
    m.seed = sidecar.seed;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bayer_rggb_map() {
        let p = make_pattern("bayer", "RGGB").unwrap();
        assert_eq!(p.map(), &[RED, GREEN, GREEN, BLUE]);
        assert_eq!(p.period(), 2);
    }

    #[test]
    fn nona_blocks() {
        let p = make_pattern("nona", "RGGB").unwrap();
        assert_eq!(p.period(), 6);
        assert_eq!(p.channel_at(0, 0), p.channel_at(2, 2));
        assert_eq!(p.channel_at(3, 0), GREEN);
        assert_eq!(p.channel_at(3, 3), BLUE);
        let q = make_pattern("quad", "RGGB").unwrap();
        assert_eq!(q.period(), 4);
        assert_eq!(q.channel_at(1, 1), RED);
        assert_eq!(q.channel_at(1, 2), GREEN);
    }

    #[test]
    fn unknown_kind_is_error() {
        assert!(make_pattern("hexa", "RGGB").is_err());
        assert!(make_pattern("nona", "RGBW").is_err());
    }

    #[test]
    fn mosaic_rejects_bad_dims() {
        let img = RgbImage::constant(8, 8, [0.5; 3]);
        let nona = CfaPattern::new(CfaKind::Nona, BayerBase::Rggb);
        assert!(mosaic(&img, &nona).is_err());
        let img = RgbImage::constant(12, 6, [0.5; 3]);
        assert!(mosaic(&img, &nona).is_ok());
    }

    #[test]
    fn pure_red_on_nona() {
        let img = RgbImage::constant(12, 12, [1.0, 0.0, 0.0]);
        let p = CfaPattern::new(CfaKind::Nona, BayerBase::Rggb);
        let m = mosaic(&img, &p).unwrap();
        for y in 0..12 {
            for x in 0..12 {
                let expect = if p.channel_at(y, x) == RED { 1.0 } else { 0.0 };
                assert_eq!(m.get(y, x), expect);
            }
        }
    }

    #[test]
    fn negative_sigma_is_error() {
        let m = mosaic(
            &RgbImage::constant(6, 6, [0.5; 3]),
            &CfaPattern::new(CfaKind::Nona, BayerBase::Rggb),
        )
        .unwrap();
        assert!(add_noise(&m, -1.0, 0).is_err());
        assert!(add_noise(&m, f64::NAN, 0).is_err());
    }

    #[test]
    fn binning_hand_example() {
        let p = CfaPattern::new(CfaKind::Nona, BayerBase::Rggb);
        let mut plane = vec![0.5; 36];
        let block = [0.0, 0.3, 0.6, 0.9, 0.0, 0.3, 0.6, 0.9, 0.0];
        for (i, &v) in block.iter().enumerate() {
            plane[(i / 3) * 6 + i % 3] = v;
        }
        let m = MosaicImage::new(6, 6, plane, p).unwrap();
        let b = bin_nona_to_bayer(&m).unwrap();
        assert_eq!((b.width(), b.height()), (2, 2));
        assert!((b.get(0, 0) - 0.4).abs() < 1e-12);
        assert!((b.get(1, 1) - 0.5).abs() < 1e-12);
        assert_eq!(b.pattern().kind(), CfaKind::Bayer);
        assert_eq!(b.pattern().base(), BayerBase::Rggb);
    }

    #[test]
    fn binning_requires_nona() {
        let m = mosaic(
            &RgbImage::constant(6, 6, [0.5; 3]),
            &CfaPattern::new(CfaKind::Bayer, BayerBase::Rggb),
        )
        .unwrap();
        assert!(bin_nona_to_bayer(&m).is_err());
    }

    #[test]
    fn patch_counts() {
        let img = RgbImage::constant(256, 256, [0.1; 3]);
        assert_eq!(patches_of(&img, 128, 128).len(), 4);
        let img = RgbImage::constant(300, 300, [0.1; 3]);
        assert_eq!(patches_of(&img, 128, 128).len(), 4);
        assert_eq!(patches_of(&img, 128, 128)[1], (0, 128));
    }

    #[test]
    fn sidecar_writes_integral_sigma() {
        let s = MosaicSidecar {
            pattern: CfaKind::Nona,
            base: "RGGB".into(),
            sigma: 30.0,
            seed: 7,
        };
        assert_eq!(
            serde_json::to_string(&s).unwrap(),
            r#"{"pattern":"nona","base":"RGGB","sigma":30,"seed":7}"#
        );
        let back: MosaicSidecar =
            serde_json::from_str(r#"{"pattern":"nona","base":"RGGB","sigma":30,"seed":7}"#)
                .unwrap();
        assert_eq!(back, s);
    }
}
