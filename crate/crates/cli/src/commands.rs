use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use sagan_core::cfa::{
    add_noise, bin_nona_to_bayer, extract_patches, make_pattern, mosaic as sample_mosaic,
    read_mosaic, sample_plane, synthetic_scene, write_mosaic, CfaPattern, PatchSet, RgbImage,
};
use sagan_core::gradcheck;
use sagan_core::model::{
    init_params, Ctx, Discriminator, Generator, Mode, ModelConfig, ParamStore,
    PUBLISHED_GENERATOR_PARAMS,
};
use sagan_core::tensor::{Graph, Tensor};
use sagan_core::train::{
    self, load_checkpoint, train_to_dir, AdamConfig, TrainConfig, Trainer, Variant,
};

use crate::config::{required, RunConfig};
use crate::fail::{usage, Fail};
use crate::{
    BenchArgs, BinArgs, EvaluateArgs, GradcheckArgs, ModelArgs, MosaicArgs, NoiseArgs, PatchesArgs,
    PatternArgs, ReconstructArgs, TrainArgs,
};

/// First scene seed of the synthetic training gallery.
const SYNTHETIC_SCENE_SEED: u64 = 100;
const DEFAULT_PATCH: usize = 128;
const DEFAULT_EVAL_SIGMAS: [f64; 3] = [10.0, 20.0, 30.0];

fn existing_dir(p: &Path, what: &str) -> Result<(), Fail> {
    if !p.is_dir() {
        return Err(Fail::data(format!(
            "{what} directory {} does not exist",
            p.display()
        )));
    }
    Ok(())
}

fn existing_file(p: &Path, what: &str) -> Result<(), Fail> {
    if !p.is_file() {
        return Err(Fail::data(format!("{what} {} does not exist", p.display())));
    }
    Ok(())
}

/// The output's parent directory must exist; nothing is created implicitly.
fn writable_parent(p: &Path) -> Result<(), Fail> {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() && !d.is_dir() => Err(Fail::data(format!(
            "output directory {} does not exist",
            d.display()
        ))),
        _ => Ok(()),
    }
}

fn create_dir(p: &Path) -> Result<(), Fail> {
    std::fs::create_dir_all(p)
        .map_err(|e| Fail::data(format!("cannot create {}: {e}", p.display())))
}

fn write_text(p: &Path, text: &str) -> Result<(), Fail> {
    std::fs::write(p, text).map_err(|e| Fail::data(format!("cannot write {}: {e}", p.display())))
}

/// `--pattern`/`--base` flags over the config's `pattern`; defaults to
/// nona-rggb. The config form may carry the base as `kind-base`.
fn resolve_pattern(cfg: &RunConfig, args: &PatternArgs) -> Result<CfaPattern, Fail> {
    let split = |s: &str| -> (String, Option<String>) {
        match s.rsplit_once('-') {
            Some((k, b)) if b.len() == 4 && b.chars().all(|c| "rgbRGB".contains(c)) => {
                (k.to_string(), Some(b.to_string()))
            }
            _ => (s.to_string(), None),
        }
    };
    let (kind, embedded) = split(
        args.pattern
            .as_deref()
            .or(cfg.pattern.as_deref())
            .unwrap_or("nona"),
    );
    let base = args
        .base
        .clone()
        .or(embedded)
        .unwrap_or_else(|| "rggb".into());
    make_pattern(&kind, &base).map_err(|e| usage(e.to_string()))
}

fn resolve_model(cfg: &RunConfig, args: &ModelArgs) -> Result<ModelConfig, Fail> {
    let m = &cfg.model;
    let mut model = if args.toy || m.toy.unwrap_or(false) {
        ModelConfig::toy()
    } else {
        ModelConfig::full()
    };
    if let Some(w) = args.widths.clone().or(m.widths.clone()) {
        model.widths = w;
    }
    if let Some(w) = m.disc_widths.clone() {
        model.disc_widths = w;
    }
    if let Some(k) = args.k.or(m.k) {
        model.kernel = k;
    }
    if let Some(r) = args.r.or(m.r) {
        model.reduction = r;
    }
    model.validate().map_err(|e| usage(e.to_string()))?;
    Ok(model)
}

/// Model description for a checkpoint: explicit file, then `model.json`
/// next to the checkpoint, then flags and config.
fn model_for_checkpoint(
    cfg: &RunConfig,
    explicit: Option<&Path>,
    ckpt: &Path,
    args: &ModelArgs,
) -> Result<ModelConfig, Fail> {
    let sibling = ckpt.with_file_name("model.json");
    let path = match explicit {
        Some(p) => {
            existing_file(p, "model description")?;
            Some(p.to_path_buf())
        }
        None if sibling.is_file() => Some(sibling),
        None => None,
    };
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(&p)
                .map_err(|e| Fail::data(format!("cannot read {}: {e}", p.display())))?;
            let model: ModelConfig = serde_json::from_str(&text)
                .map_err(|e| Fail::data(format!("model description {}: {e}", p.display())))?;
            model.validate()?;
            Ok(model)
        }
        None => resolve_model(cfg, args),
    }
}

fn load_generator(model: ModelConfig, ckpt: &Path) -> Result<(Generator, ParamStore<f32>), Fail> {
    let generator = Generator::new(model)?;
    let params = load_checkpoint(ckpt)?.params;
    params.check_against(&generator.specs()).map_err(|e| {
        Fail::data(format!(
            "checkpoint {} does not fit the model: {e}",
            ckpt.display()
        ))
    })?;
    Ok((generator, params))
}

#[derive(Serialize, Deserialize)]
struct PatchManifest {
    size: usize,
    stride: usize,
    patches: Vec<PatchEntry>,
}

#[derive(Serialize, Deserialize)]
struct PatchEntry {
    file: String,
    source: String,
    y: usize,
    x: usize,
}

pub fn patches(cfg: &RunConfig, a: PatchesArgs) -> Result<(), Fail> {
    let input = required(a.input, cfg.paths.data.clone(), "input")?;
    let output = required(a.output, cfg.paths.out.clone(), "output")?;
    existing_dir(&input, "input")?;
    let size = a.size.or(cfg.train.patch_size).unwrap_or(DEFAULT_PATCH);
    let stride = a.stride.or(cfg.train.stride).unwrap_or(size);
    let set = extract_patches(&input, size, stride)?;
    create_dir(&output)?;
    let mut entries = Vec::with_capacity(set.len());
    for p in &set.patches {
        let stem = p
            .source
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let file = format!("{stem}_y{:05}_x{:05}.png", p.offset.0, p.offset.1);
        p.image.save(&output.join(&file))?;
        entries.push(PatchEntry {
            file,
            source: p
                .source
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            y: p.offset.0,
            x: p.offset.1,
        });
    }
    let manifest = PatchManifest {
        size,
        stride,
        patches: entries,
    };
    write_text(
        &output.join("patches.json"),
        &serde_json::to_string_pretty(&manifest)?,
    )?;
    println!(
        "wrote {} patches of {size}x{size} to {}",
        set.len(),
        output.display()
    );
    Ok(())
}

pub fn mosaic(cfg: &RunConfig, a: MosaicArgs) -> Result<(), Fail> {
    existing_file(&a.input, "input image")?;
    writable_parent(&a.output)?;
    let pattern = resolve_pattern(cfg, &a.pattern)?;
    let img = RgbImage::load(&a.input)?;
    let p = pattern.period();
    let (h, w) = (img.height() / p * p, img.width() / p * p);
    if h == 0 || w == 0 {
        return Err(Fail::data(format!(
            "{} is smaller than one {p}x{p} CFA period",
            a.input.display()
        )));
    }
    let img = if (h, w) != (img.height(), img.width()) {
        warn!(
            "cropping {}x{} to {h}x{w} to fit the CFA period",
            img.height(),
            img.width()
        );
        img.crop(0, 0, h, w)?
    } else {
        img
    };
    let m = sample_mosaic(&img, &pattern)?;
    write_mosaic(&a.output, &m)?;
    println!(
        "wrote {h}x{w} {}-{} mosaic to {}",
        pattern.kind(),
        pattern.base().as_str(),
        a.output.display()
    );
    Ok(())
}

pub fn noise(cfg: &RunConfig, a: NoiseArgs) -> Result<(), Fail> {
    let sigma = required(
        a.sigma,
        cfg.sigma.as_ref().and_then(|s| s.to_vec().first().copied()),
        "sigma",
    )?;
    // Zero noise draws nothing, so no seed is needed.
    let seed = if sigma == 0.0 {
        a.seed.or(cfg.seed).unwrap_or(0)
    } else {
        required(a.seed, cfg.seed, "seed")?
    };
    existing_file(&a.input, "input mosaic")?;
    writable_parent(&a.output)?;
    let m = read_mosaic(&a.input)?;
    let noisy = add_noise(&m, sigma, seed)?;
    write_mosaic(&a.output, &noisy)?;
    println!("wrote sigma={sigma} mosaic to {}", a.output.display());
    Ok(())
}

pub fn bin(a: BinArgs) -> Result<(), Fail> {
    existing_file(&a.input, "input mosaic")?;
    writable_parent(&a.output)?;
    let binned = bin_nona_to_bayer(&read_mosaic(&a.input)?)?;
    write_mosaic(&a.output, &binned)?;
    println!(
        "wrote {}x{} bayer mosaic to {}",
        binned.height(),
        binned.width(),
        a.output.display()
    );
    Ok(())
}

pub fn train(cfg: &RunConfig, a: TrainArgs) -> Result<(), Fail> {
    let seed = required(a.seed, cfg.seed, "seed")?;
    let out = required(a.out, cfg.paths.out.clone(), "out")?;
    let t = &cfg.train;
    let patch = a.patch_size.or(t.patch_size).unwrap_or(DEFAULT_PATCH);
    let stride = a.stride.or(t.stride).unwrap_or(patch);
    let data = match a.synthetic {
        Some(0) => return Err(usage("--synthetic needs at least one scene")),
        Some(_) => None,
        None => {
            let d = required(a.data, cfg.paths.data.clone(), "data")?;
            existing_dir(&d, "data")?;
            Some(d)
        }
    };

    let mut model = resolve_model(cfg, &a.model)?;
    let pattern = resolve_pattern(cfg, &a.pattern)?;
    let variant: Variant = a
        .variant
        .as_deref()
        .or(t.variant.as_deref())
        .unwrap_or("sagan")
        .parse()?;
    let defaults = TrainConfig::default();
    let [beta1, beta2] = t
        .betas
        .unwrap_or([defaults.adam.beta1, defaults.adam.beta2]);
    let mut config = TrainConfig {
        steps: a.steps.or(t.steps).unwrap_or(defaults.steps),
        batch_size: a.batch.or(t.batch).unwrap_or(defaults.batch_size),
        sigmas: a
            .sigma
            .or(cfg.sigma.as_ref().map(|s| s.to_vec()))
            .unwrap_or(defaults.sigmas),
        pattern: pattern.kind(),
        base: pattern.base(),
        seed,
        checkpoint_interval: a
            .checkpoint_interval
            .or(t.checkpoint_interval)
            .unwrap_or(defaults.checkpoint_interval),
        lambda_g: a.lambda_g.or(t.lambda_g).unwrap_or(defaults.lambda_g),
        adam: AdamConfig {
            lr: a.lr.or(t.lr).unwrap_or(defaults.adam.lr),
            beta1,
            beta2,
            ..defaults.adam
        },
        ..defaults
    };
    variant.apply(&mut model, &mut config);
    config.validate()?;

    let patches = match data {
        Some(d) => extract_patches(&d, patch, stride)?,
        None => {
            let n = a.synthetic.unwrap_or(0) as u64;
            PatchSet::from_images(
                (0..n)
                    .map(|i| synthetic_scene(patch, patch, SYNTHETIC_SCENE_SEED + i))
                    .collect(),
            )?
        }
    };
    info!("{} training patches of {patch}x{patch}", patches.len());
    create_dir(&out)?;
    write_text(
        &out.join("train.json"),
        &serde_json::to_string_pretty(&config)?,
    )?;
    let mut trainer = Trainer::new(model, config, patches)?;
    let t0 = Instant::now();
    let log = train_to_dir(&mut trainer, &out)?;
    let last = log.last().map(|r| r.losses.l_total).unwrap_or(f64::NAN);
    println!(
        "trained {} steps in {:.1}s, final l_total {last:.6}, outputs in {}",
        log.len(),
        t0.elapsed().as_secs_f64(),
        out.display()
    );
    if a.report_psnr {
        let sigma = trainer.config.sigmas[0];
        let p = train::patch_psnr(
            &trainer.generator,
            &trainer.g_params,
            trainer.patches(),
            trainer.pattern(),
            sigma,
            seed,
        )?;
        println!("training PSNR at sigma {sigma}: {p:.4} dB");
    }
    Ok(())
}

pub fn reconstruct(cfg: &RunConfig, a: ReconstructArgs) -> Result<(), Fail> {
    let ckpt = required(a.checkpoint, cfg.paths.checkpoint.clone(), "checkpoint")?;
    existing_file(&a.input, "input mosaic")?;
    existing_file(&ckpt, "checkpoint")?;
    writable_parent(&a.output)?;
    let model = model_for_checkpoint(cfg, a.model_json.as_deref(), &ckpt, &a.model)?;
    let (generator, params) = load_generator(model, &ckpt)?;
    let m = read_mosaic(&a.input)?;
    let rgb = train::reconstruct(&generator, &params, &m)?;
    if rgb.data().iter().any(|v| !v.is_finite()) {
        return Err(Fail::numerical("reconstruction contains non-finite values"));
    }
    rgb.save(&a.output)?;
    println!(
        "wrote {}x{} RGB image to {}",
        rgb.height(),
        rgb.width(),
        a.output.display()
    );
    Ok(())
}

pub fn evaluate(cfg: &RunConfig, a: EvaluateArgs) -> Result<(), Fail> {
    let seed = required(a.seed, cfg.seed, "seed")?;
    let data = required(a.data, cfg.paths.data.clone(), "data")?;
    let ckpt = required(a.checkpoint, cfg.paths.checkpoint.clone(), "checkpoint")?;
    let out = required(a.out, cfg.paths.out.clone(), "out")?;
    existing_dir(&data, "data")?;
    existing_file(&ckpt, "checkpoint")?;
    let sigmas = a
        .sigma
        .or(cfg.sigma.as_ref().map(|s| s.to_vec()))
        .unwrap_or_else(|| DEFAULT_EVAL_SIGMAS.to_vec());
    let pattern = resolve_pattern(cfg, &a.pattern)?;
    let model = model_for_checkpoint(cfg, a.model_json.as_deref(), &ckpt, &a.model)?;
    let (generator, params) = load_generator(model, &ckpt)?;
    let report = train::evaluate(&generator, &params, &data, &pattern, &sigmas, seed)?;
    if report.groups.iter().any(|g| {
        !(g.mean.psnr.is_finite() && g.mean.ssim.is_finite() && g.mean.delta_e.is_finite())
    }) {
        return Err(Fail::numerical("evaluation produced non-finite scores"));
    }
    create_dir(&out)?;
    let table = report.to_table();
    write_text(&out.join("report.json"), &report.to_json()?)?;
    write_text(&out.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

pub fn gradcheck(cfg: &RunConfig, a: GradcheckArgs) -> Result<(), Fail> {
    if !a.toy {
        info!("gradient checks always run at desk scale");
    }
    // The seed only picks test inputs; results must pass for any seed.
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let t0 = Instant::now();
    let outcomes = gradcheck::run_all(seed)?;
    let mut failed = 0;
    for o in &outcomes {
        let verdict = if o.passed() { "PASS" } else { "FAIL" };
        failed += usize::from(!o.passed());
        println!(
            "{verdict} {:<28} max_rel_err {:.3e}  tol {:.0e}  checked {}  skipped {}",
            o.name, o.max_rel_error, o.tolerance, o.checked, o.skipped_kinks
        );
    }
    println!(
        "{} layer classes, {failed} failed, {:.1}s",
        outcomes.len(),
        t0.elapsed().as_secs_f64()
    );
    if failed > 0 {
        return Err(Fail::numerical(format!(
            "{failed} gradient checks exceeded tolerance"
        )));
    }
    Ok(())
}

pub fn bench(cfg: &RunConfig, a: BenchArgs) -> Result<(), Fail> {
    let model = resolve_model(cfg, &a.model)?;
    let size = a.size.unwrap_or(128);
    let k = model.spatial_multiple();
    if size == 0 || size % k != 0 {
        return Err(usage(format!("--size must be a positive multiple of {k}")));
    }
    if a.runs == 0 {
        return Err(usage("--runs must be positive"));
    }
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let generator = Generator::new(model.clone())?;
    let discriminator = Discriminator::new(model)?;
    let g_count = generator.param_count();
    let d_count = sagan_core::model::trainable_count(&discriminator.specs());
    let delta = g_count as f64 - PUBLISHED_GENERATOR_PARAMS as f64;
    println!(
        "generator parameters: {g_count} (published {PUBLISHED_GENERATOR_PARAMS}, {delta:+.0}, {:+.2}%)",
        100.0 * delta / PUBLISHED_GENERATOR_PARAMS as f64
    );
    println!("discriminator parameters: {d_count}");

    let params: ParamStore<f32> = init_params(&generator.specs(), seed);
    let pattern = CfaPattern::new(
        sagan_core::cfa::CfaKind::Nona,
        sagan_core::cfa::BayerBase::Rggb,
    );
    let plane: Vec<f32> = sample_plane(&synthetic_scene(size, size, seed), &pattern)
        .iter()
        .map(|&v| v as f32)
        .collect();
    let input = Tensor::new(vec![1, 1, size, size], plane)?;
    let mut times = Vec::with_capacity(a.runs);
    for _ in 0..a.runs {
        let t0 = Instant::now();
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let mut ctx = Ctx::new(&mut g, &params, Mode::Eval, false);
        let y = generator.forward(&mut ctx, x)?;
        drop(ctx);
        if g.value(y).data().iter().any(|v| !v.is_finite()) {
            return Err(Fail::numerical("forward pass produced non-finite values"));
        }
        times.push(t0.elapsed().as_secs_f64() * 1000.0);
    }
    times.sort_by(f64::total_cmp);
    let median = times[times.len() / 2];
    let mp = (size * size) as f64 / 1e6;
    println!(
        "forward {size}x{size}: median {median:.1} ms over {} runs, {:.1} ms/megapixel",
        a.runs,
        median / mp
    );
    Ok(())
}
