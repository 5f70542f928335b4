use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::checkpoint::save_checkpoint;
use crate::cfa::{noise_plane, sample_plane, BayerBase, CfaKind, CfaPattern, PatchSet};
use crate::error::{Error, Result};
use crate::losses::{self, LossBreakdown, LAMBDA_G};
use crate::model::{
    apply_bn_updates, init_params, Ctx, Discriminator, Generator, Mode, ModelConfig, ParamStore,
    DISC_MULTIPLE,
};
use crate::tensor::{Gradients, Graph, Tensor, Var};

/// Ablation variants: which of attention, perceptual colour loss and the
/// adversarial term are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    BaseNet,
    BaseGan,
    SanWp,
    San,
    Sagan,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::BaseNet,
        Variant::BaseGan,
        Variant::SanWp,
        Variant::San,
        Variant::Sagan,
    ];

    pub fn attention(self) -> bool {
        !matches!(self, Variant::BaseNet | Variant::BaseGan)
    }

    pub fn pcl(self) -> bool {
        matches!(self, Variant::San | Variant::Sagan)
    }

    pub fn gan(self) -> bool {
        matches!(self, Variant::BaseGan | Variant::Sagan)
    }

    pub fn apply(self, model: &mut ModelConfig, train: &mut TrainConfig) {
        model.attention = self.attention();
        train.use_pcl = self.pcl();
        train.use_gan = self.gan();
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "basenet" => Ok(Variant::BaseNet),
            "basegan" => Ok(Variant::BaseGan),
            "sanwp" => Ok(Variant::SanWp),
            "san" => Ok(Variant::San),
            "sagan" => Ok(Variant::Sagan),
            other => Err(Error::InvalidArgument(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    /// Noise levels (8-bit units) sampled uniformly, one per batch.
    pub sigmas: Vec<f64>,
    pub pattern: CfaKind,
    pub base: BayerBase,
    pub seed: u64,
    /// Save a checkpoint every this many steps; 0 disables intermediate saves.
    pub checkpoint_interval: u64,
    pub lambda_g: f64,
    pub use_pcl: bool,
    pub use_gan: bool,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 4,
            sigmas: vec![10.0, 20.0, 30.0],
            pattern: CfaKind::Nona,
            base: BayerBase::Rggb,
            seed: 0,
            checkpoint_interval: 500,
            lambda_g: LAMBDA_G,
            use_pcl: true,
            use_gan: true,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.steps == 0 || self.batch_size == 0 {
            return bad("steps and batch size must be positive".into());
        }
        if self.sigmas.is_empty() || self.sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return bad(format!(
                "sigmas must be a non-empty list of values >= 0, got {:?}",
                self.sigmas
            ));
        }
        if !(self.lambda_g >= 0.0) || !self.lambda_g.is_finite() {
            return bad(format!("lambda_g must be >= 0, got {}", self.lambda_g));
        }
        let a = self.adam;
        if !(a.lr > 0.0)
            || !(0.0..1.0).contains(&a.beta1)
            || !(0.0..1.0).contains(&a.beta2)
            || !(a.eps > 0.0)
        {
            return bad(format!("invalid Adam settings {a:?}"));
        }
        Ok(())
    }

    pub fn pattern(&self) -> CfaPattern {
        CfaPattern::new(self.pattern, self.base)
    }
}

/// One logged training step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub sigma: f64,
    pub losses: LossBreakdown,
    /// Discriminator objective of the same step, when the adversarial term is on.
    pub d_loss: Option<f64>,
}

pub const CSV_HEADER: &str = "step,l_r,l_c,l_g,l_total";

impl LossRecord {
    /// CSV row; floats use the shortest representation that parses back to
    /// the same value.
    pub fn csv_row(&self) -> String {
        let l = &self.losses;
        format!("{},{},{},{},{}", self.step, l.l_r, l.l_c, l.l_g, l.l_total)
    }
}

/// Parse a loss log written by [`train_to_dir`] into
/// `(step, l_r, l_c, l_g, l_total)` rows.
pub fn read_loss_log(path: &Path) -> Result<Vec<(u64, [f64; 4])>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Data(format!(
            "{}: missing header `{CSV_HEADER}`",
            path.display()
        )));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::Data(format!("{}: malformed row {}", path.display(), i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad());
            }
            let step = f[0].parse().map_err(|_| bad())?;
            let mut v = [0.0; 4];
            for (slot, s) in v.iter_mut().zip(&f[1..]) {
                *slot = s.parse().map_err(|_| bad())?;
            }
            Ok((step, v))
        })
        .collect()
}

const PERM_SALT: u64 = 0x5045_524d_5554_4531;
const SIGMA_SALT: u64 = 0x5349_474d_4153_414d;
/// Offset between generator and discriminator initialisation seeds.
pub const DISC_SEED_OFFSET: u64 = 0xD15C;

/// Alternating discriminator/generator optimisation over a patch set.
pub struct Trainer {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub g_params: ParamStore<f32>,
    pub d_params: ParamStore<f32>,
    pub g_adam: AdamState<f32>,
    pub d_adam: AdamState<f32>,
    pub config: TrainConfig,
    patches: PatchSet,
    pattern: CfaPattern,
    step: u64,
    perm: Option<(u64, Vec<usize>)>,
}

fn collect(
    grads: &mut Gradients<f32>,
    bound: &HashMap<String, Var>,
) -> BTreeMap<String, Tensor<f32>> {
    bound
        .iter()
        .filter_map(|(name, &v)| grads.take(v).map(|g| (name.clone(), g)))
        .collect()
}

impl Trainer {
    pub fn new(model: ModelConfig, config: TrainConfig, patches: PatchSet) -> Result<Self> {
        config.validate()?;
        if patches.is_empty() {
            return Err(Error::Data("training needs at least one patch".into()));
        }
        let generator = Generator::new(model.clone())?;
        let discriminator = Discriminator::new(model.clone())?;
        let m = model.spatial_multiple();
        let mut need = m;
        if config.use_gan {
            need = need.max(DISC_MULTIPLE);
        }
        if patches.size % need != 0 {
            return Err(Error::InvalidArgument(format!(
                "patch size {} must be a multiple of {need} for this model",
                patches.size
            )));
        }
        let g_params = init_params(&generator.specs(), config.seed);
        let d_params = init_params(
            &discriminator.specs(),
            config.seed.wrapping_add(DISC_SEED_OFFSET),
        );
        Ok(Self {
            generator,
            discriminator,
            g_params,
            d_params,
            g_adam: AdamState::new(config.adam),
            d_adam: AdamState::new(config.adam),
            pattern: config.pattern(),
            config,
            patches,
            step: 0,
            perm: None,
        })
    }

    /// Steps completed so far.
    pub fn patches(&self) -> &PatchSet {
        &self.patches
    }

    pub fn pattern(&self) -> &CfaPattern {
        &self.pattern
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    fn patch_index(&mut self, q: u64) -> usize {
        let n = self.patches.len() as u64;
        let epoch = q / n;
        if self.perm.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ PERM_SALT);
            rng.set_stream(epoch);
            let mut p: Vec<usize> = (0..self.patches.len()).collect();
            p.shuffle(&mut rng);
            self.perm = Some((epoch, p));
        }
        self.perm.as_ref().expect("set above").1[(q % n) as usize]
    }

    /// Noise level, noisy mosaics (`B x 1 x S x S`) and clean targets
    /// (`B x 3 x S x S`) of batch `step`.
    pub fn batch(&mut self, step: u64) -> Result<(f64, Tensor<f32>, Tensor<f32>)> {
        let b = self.config.batch_size;
        let s = self.patches.size;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ SIGMA_SALT);
        rng.set_stream(step);
        let sigma = self.config.sigmas[rng.random_range(0..self.config.sigmas.len())];
        let mut mosaics = Vec::with_capacity(b * s * s);
        let mut targets = Vec::with_capacity(b * 3 * s * s);
        for i in 0..b {
            let q = step * b as u64 + i as u64;
            let idx = self.patch_index(q);
            let img = &self.patches.patches[idx].image;
            let mut plane = sample_plane(img, &self.pattern);
            noise_plane(&mut plane, sigma, self.config.seed, q)?;
            mosaics.extend(plane.iter().map(|&v| v as f32));
            targets.extend(img.to_tensor::<f32>().into_data());
        }
        Ok((
            sigma,
            Tensor::new(vec![b, 1, s, s], mosaics)?,
            Tensor::new(vec![b, 3, s, s], targets)?,
        ))
    }

    fn discriminator_step(&mut self, fake: &Tensor<f32>, target: &Tensor<f32>) -> Result<f64> {
        let mut g = Graph::new();
        let fake = g.constant(fake.clone());
        let real = g.constant(target.clone());
        let mut ctx = Ctx::new(&mut g, &self.d_params, Mode::Train, true);
        let d_real = self.discriminator.forward(&mut ctx, real, real)?;
        let d_fake = self.discriminator.forward(&mut ctx, fake, real)?;
        let (bound, bn) = ctx.finish();
        let loss = losses::discriminator_loss(&mut g, d_real, d_fake)?;
        let value = f64::from(g.scalar(loss));
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                term: "l_d",
                step: self.step + 1,
            });
        }
        let mut grads = g.backward(loss)?;
        let grads = collect(&mut grads, &bound);
        self.d_adam.step(&mut self.d_params, &grads)?;
        apply_bn_updates(&mut self.d_params, &bn)?;
        Ok(value)
    }

    /// One discriminator update (when the adversarial term is on) followed by
    /// one generator update.
    pub fn step(&mut self) -> Result<LossRecord> {
        let step = self.step;
        let tag = |e: Error| match e {
            Error::NonFiniteLoss { term, .. } => Error::NonFiniteLoss {
                term,
                step: step + 1,
            },
            other => other,
        };
        let (sigma, mosaic, target) = self.batch(step)?;

        let mut g = Graph::new();
        let x = g.constant(mosaic);
        let mut ctx = Ctx::new(&mut g, &self.g_params, Mode::Train, true);
        let ir = self.generator.forward(&mut ctx, x)?;
        let (g_bound, _) = ctx.finish();

        let d_loss = if self.config.use_gan {
            let fake = g.value(ir).clone();
            Some(self.discriminator_step(&fake, &target).map_err(tag)?)
        } else {
            None
        };

        let ig = g.constant(target);
        let l_r = losses::loss_reconstruction(&mut g, ir, ig)?;
        let l_c = if self.config.use_pcl {
            Some(losses::loss_pcl(&mut g, ir, ig)?)
        } else {
            None
        };
        let l_g = if self.config.use_gan {
            let mut dctx = Ctx::new(&mut g, &self.d_params, Mode::Train, false);
            let d_fake = self.discriminator.forward(&mut dctx, ir, ig)?;
            drop(dctx);
            Some(losses::loss_adversarial(&mut g, d_fake)?)
        } else {
            None
        };
        let value = |v: Option<Var>| v.map_or(0.0, |v| f64::from(g.scalar(v)));
        let breakdown = losses::loss_total(
            value(Some(l_r)),
            value(l_c),
            value(l_g),
            self.config.lambda_g,
        )
        .map_err(tag)?;
        let total = losses::combine(&mut g, l_r, l_c, l_g, self.config.lambda_g)?;
        let mut grads = g.backward(total)?;
        let grads = collect(&mut grads, &g_bound);
        self.g_adam.step(&mut self.g_params, &grads)?;

        self.step += 1;
        Ok(LossRecord {
            step: self.step,
            sigma,
            losses: breakdown,
            d_loss,
        })
    }

    /// Run the remaining configured steps, handing each record to `sink`.
    pub fn run(
        &mut self,
        mut sink: impl FnMut(&Trainer, &LossRecord) -> Result<()>,
    ) -> Result<Vec<LossRecord>> {
        let mut log = Vec::new();
        while self.step < self.config.steps {
            let rec = self.step()?;
            sink(self, &rec)?;
            log.push(rec);
        }
        Ok(log)
    }

    pub fn save(&self, dir: &Path, label: &str) -> Result<(PathBuf, PathBuf)> {
        let g = dir.join(format!("gen_{label}.ckpt"));
        let d = dir.join(format!("disc_{label}.ckpt"));
        save_checkpoint(&g, &self.g_params, Some(&self.g_adam))?;
        save_checkpoint(&d, &self.d_params, Some(&self.d_adam))?;
        Ok((g, d))
    }
}

/// Train to completion, writing `loss.csv`, `model.json`, periodic
/// `gen_/disc_stepNNNNNN.ckpt` pairs and a final `gen_/disc_final.ckpt`.
/// On a failed step the state from before that step is saved as
/// `gen_/disc_last_good.ckpt` and the error is returned.
pub fn train_to_dir(trainer: &mut Trainer, dir: &Path) -> Result<Vec<LossRecord>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let model_json = serde_json::to_string_pretty(&trainer.generator.config)?;
    let model_path = dir.join("model.json");
    std::fs::write(&model_path, model_json).map_err(|e| Error::io(&model_path, e))?;
    let csv_path = dir.join("loss.csv");
    let file = File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut csv = BufWriter::new(file);
    writeln!(csv, "{CSV_HEADER}").map_err(|e| Error::io(&csv_path, e))?;

    let interval = trainer.config.checkpoint_interval;
    let mut log = Vec::new();
    while trainer.steps_done() < trainer.config.steps {
        let g_before = trainer.g_params.clone();
        let d_before = trainer.d_params.clone();
        let (ga, da) = (trainer.g_adam.clone(), trainer.d_adam.clone());
        match trainer.step() {
            Ok(rec) => {
                writeln!(csv, "{}", rec.csv_row()).map_err(|e| Error::io(&csv_path, e))?;
                if interval > 0 && rec.step % interval == 0 {
                    csv.flush().map_err(|e| Error::io(&csv_path, e))?;
                    trainer.save(dir, &format!("step{:06}", rec.step))?;
                }
                log.push(rec);
            }
            Err(e) => {
                csv.flush().map_err(|e| Error::io(&csv_path, e))?;
                save_checkpoint(&dir.join("gen_last_good.ckpt"), &g_before, Some(&ga))?;
                save_checkpoint(&dir.join("disc_last_good.ckpt"), &d_before, Some(&da))?;
                return Err(e);
            }
        }
    }
    csv.flush().map_err(|e| Error::io(&csv_path, e))?;
    trainer.save(dir, "final")?;
    Ok(log)
}
