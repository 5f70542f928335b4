use std::path::Path;

use crate::cfa::{
    add_noise_keyed, list_images, mosaic, noise_plane, sample_plane, CfaPattern, MosaicImage,
    PatchSet, RgbImage,
};
use crate::error::{Error, Result};
use crate::metrics::{psnr, ImageScores, MetricsReport, Scores, SigmaGroup};
use crate::model::{Ctx, Generator, Mode, ParamStore};
use crate::tensor::{Graph, Tensor};

/// Noise seed used for level `sigma`, so each level gets its own draws.
pub fn sigma_seed(seed: u64, sigma: f64) -> u64 {
    seed.wrapping_add(((sigma * 1000.0).round() as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Pad a plane to `h2 x w2` by repeating the last full CFA period, so the
/// padded region keeps the pattern phase.
fn pad_periodic(m: &MosaicImage, h2: usize, w2: usize) -> Vec<f32> {
    let (h, w, p) = (m.height(), m.width(), m.pattern().period());
    let src = |i: usize, n: usize| if i < n { i } else { n - p + (i - n) % p };
    let mut out = Vec::with_capacity(h2 * w2);
    for y in 0..h2 {
        for x in 0..w2 {
            out.push(m.get(src(y, h), src(x, w)) as f32);
        }
    }
    out
}

/// Run the generator (inference mode) on a mosaic of any period-aligned size.
pub fn reconstruct(
    generator: &Generator,
    params: &ParamStore<f32>,
    m: &MosaicImage,
) -> Result<RgbImage> {
    let k = generator.config.spatial_multiple();
    let (h, w) = (m.height(), m.width());
    let (h2, w2) = (h.div_ceil(k) * k, w.div_ceil(k) * k);
    let plane = if (h2, w2) == (h, w) {
        m.plane().iter().map(|&v| v as f32).collect()
    } else {
        pad_periodic(m, h2, w2)
    };
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![1, 1, h2, w2], plane)?);
    let mut ctx = Ctx::new(&mut g, params, Mode::Eval, false);
    let y = generator.forward(&mut ctx, x)?;
    drop(ctx);
    let full = RgbImage::from_tensor(g.value(y), 0)?;
    if (h2, w2) == (h, w) {
        Ok(full)
    } else {
        full.crop(0, 0, h, w)
    }
}

/// Mean PSNR of inference-mode reconstructions of the training patches
/// themselves, each freshly mosaicked and noised with `(seed, index)`.
pub fn patch_psnr(
    generator: &Generator,
    params: &ParamStore<f32>,
    patches: &PatchSet,
    pattern: &CfaPattern,
    sigma: f64,
    seed: u64,
) -> Result<f64> {
    if patches.is_empty() {
        return Err(Error::Data("patch set is empty".into()));
    }
    let k = generator.config.spatial_multiple();
    if patches.size % k != 0 {
        return Err(Error::InvalidArgument(format!(
            "patch size {} is not a multiple of {k}",
            patches.size
        )));
    }
    let mut total = 0.0;
    for (i, p) in patches.patches.iter().enumerate() {
        let mut plane = sample_plane(&p.image, pattern);
        noise_plane(&mut plane, sigma, seed, i as u64)?;
        let n = patches.size;
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(
            vec![1, 1, n, n],
            plane.iter().map(|&v| v as f32).collect(),
        )?);
        let mut ctx = Ctx::new(&mut g, params, Mode::Eval, false);
        let y = generator.forward(&mut ctx, x)?;
        drop(ctx);
        total += psnr(&RgbImage::from_tensor(g.value(y), 0)?, &p.image, 1.0)?;
    }
    Ok(total / patches.len() as f64)
}

/// Evaluate an arbitrary reconstruction function. Each image is cropped to
/// a multiple of the CFA period, mosaicked, noised with the level-specific
/// seed keyed by image index, reconstructed and scored.
pub fn evaluate_with(
    images: &[(String, RgbImage)],
    pattern: &CfaPattern,
    sigmas: &[f64],
    seed: u64,
    mut reconstruct: impl FnMut(&MosaicImage, &RgbImage) -> Result<RgbImage>,
) -> Result<MetricsReport> {
    if images.is_empty() {
        return Err(Error::Data("evaluation dataset is empty".into()));
    }
    if sigmas.is_empty() {
        return Err(Error::InvalidArgument("no noise levels to evaluate".into()));
    }
    let p = pattern.period();
    let mut groups = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let s_seed = sigma_seed(seed, sigma);
        let mut rows = Vec::with_capacity(images.len());
        for (idx, (name, img)) in images.iter().enumerate() {
            let (h, w) = (img.height() / p * p, img.width() / p * p);
            if h == 0 || w == 0 {
                return Err(Error::Data(format!("{name}: smaller than one CFA period")));
            }
            let gt = img.crop(0, 0, h, w)?;
            let clean = mosaic(&gt, pattern)?;
            let noisy = add_noise_keyed(&clean, sigma, s_seed, idx as u64)?;
            let out = reconstruct(&noisy, &gt)?;
            rows.push(ImageScores {
                image: name.clone(),
                scores: Scores::compute(&out, &gt)?,
            });
        }
        let all: Vec<Scores> = rows.iter().map(|r| r.scores).collect();
        groups.push(SigmaGroup {
            sigma,
            mean: Scores::mean(&all),
            images: rows,
        });
    }
    Ok(MetricsReport {
        pattern: format!("{}-{}", pattern.kind(), pattern.base().as_str()),
        seed,
        groups,
    })
}

/// Load every image in `dir` (sorted by path) under its file name.
pub fn load_dataset(dir: &Path) -> Result<Vec<(String, RgbImage)>> {
    let mut out = Vec::new();
    for path in list_images(dir)? {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        out.push((name, RgbImage::load(&path)?));
    }
    if out.is_empty() {
        return Err(Error::Data(format!("no images in {}", dir.display())));
    }
    Ok(out)
}

pub fn evaluate(
    generator: &Generator,
    params: &ParamStore<f32>,
    dataset_dir: &Path,
    pattern: &CfaPattern,
    sigmas: &[f64],
    seed: u64,
) -> Result<MetricsReport> {
    let images = load_dataset(dataset_dir)?;
    evaluate_with(&images, pattern, sigmas, seed, |m, _| {
        reconstruct(generator, params, m)
    })
}
