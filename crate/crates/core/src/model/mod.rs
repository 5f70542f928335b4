//! Spatial-asymmetric attention GAN: parameter stores, the attention
//! module, the U-Net generator and the stacked-CNN discriminator.

mod attention;
mod discriminator;
mod generator;

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{BatchStats, Graph, Padding, Real, Tensor, Var};

pub use attention::{AttentionParts, SaAttention};
pub use discriminator::{Discriminator, DISC_MULTIPLE};
pub use generator::{Generator, ResBlock};

/// Negative slope of every leaky ReLU in the networks.
pub const LEAKY_SLOPE: f64 = 0.2;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Trainable parameter count of the published full-size generator.
pub const PUBLISHED_GENERATOR_PARAMS: u64 = 29_448_766;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Generator feature widths per U-Net level.
    pub widths: Vec<usize>,
    /// Discriminator widths for its seven 3x3 layers.
    pub disc_widths: Vec<usize>,
    /// Extent `k` of the asymmetric (`k x 1`, `1 x k`) and large square
    /// (`k x k`) kernels inside the attention module.
    pub kernel: usize,
    /// Squeeze-and-excitation reduction ratio.
    pub reduction: usize,
    /// Include attention blocks (off for the "BaseNet" ablation).
    #[serde(default = "default_true")]
    pub attention: bool,
    /// Gate skip connections with a 1x1 conv + sigmoid.
    #[serde(default = "default_true")]
    pub gated_skips: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl ModelConfig {
    pub fn full() -> Self {
        Self {
            widths: vec![64, 128, 192, 256],
            disc_widths: vec![64, 64, 128, 128, 256, 256, 512],
            kernel: 9,
            reduction: 16,
            attention: true,
            gated_skips: true,
        }
    }

    /// Desk-scale model: widths divided by 8, `k = 5`, reduction 4.
    pub fn toy() -> Self {
        Self {
            widths: vec![8, 16, 24, 32],
            disc_widths: vec![8, 8, 16, 16, 32, 32, 64],
            kernel: 5,
            reduction: 4,
            attention: true,
            gated_skips: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(format!("model config: {msg}")));
        if self.widths.is_empty() || self.widths.contains(&0) {
            return bad(format!(
                "widths must be non-empty and positive, got {:?}",
                self.widths
            ));
        }
        if self.widths.windows(2).any(|w| w[1] < w[0]) {
            return bad(format!(
                "widths must be non-decreasing, got {:?}",
                self.widths
            ));
        }
        if self.disc_widths.len() != 7 || self.disc_widths.contains(&0) {
            return bad(format!(
                "discriminator needs seven positive widths, got {:?}",
                self.disc_widths
            ));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return bad(format!("attention kernel must be odd, got {}", self.kernel));
        }
        if self.reduction == 0 {
            return bad("reduction must be positive".into());
        }
        if let Some(w) = self
            .widths
            .iter()
            .chain(&self.disc_widths)
            .find(|&&w| w % self.reduction != 0)
        {
            return bad(format!(
                "width {w} not divisible by reduction {}",
                self.reduction
            ));
        }
        Ok(())
    }

    /// Side length the generator input must be a multiple of.
    pub fn spatial_multiple(&self) -> usize {
        1 << (self.widths.len() - 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `U(-b, b)` with `b = sqrt(6 / fan_in)`.
    HeUniform {
        fan_in: usize,
    },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Non-trainable tensors (batch-norm running statistics) are recognised by
/// name.
pub fn is_buffer(name: &str) -> bool {
    name.ends_with(".running_mean") || name.ends_with(".running_var")
}

pub fn trainable_count(specs: &[ParamSpec]) -> u64 {
    specs
        .iter()
        .filter(|s| !is_buffer(&s.name))
        .map(|s| s.numel() as u64)
        .sum()
}

pub(crate) fn conv_specs(
    out: &mut Vec<ParamSpec>,
    name: &str,
    cin: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    bias: bool,
) {
    out.push(ParamSpec {
        name: format!("{name}.weight"),
        shape: vec![cout, cin, kh, kw],
        init: Init::HeUniform {
            fan_in: cin * kh * kw,
        },
    });
    if bias {
        out.push(ParamSpec {
            name: format!("{name}.bias"),
            shape: vec![cout],
            init: Init::Zeros,
        });
    }
}

pub(crate) fn linear_specs(out: &mut Vec<ParamSpec>, name: &str, fin: usize, fout: usize) {
    out.push(ParamSpec {
        name: format!("{name}.weight"),
        shape: vec![fout, fin],
        init: Init::HeUniform { fan_in: fin },
    });
    out.push(ParamSpec {
        name: format!("{name}.bias"),
        shape: vec![fout],
        init: Init::Zeros,
    });
}

pub(crate) fn bn_specs(out: &mut Vec<ParamSpec>, name: &str, c: usize) {
    for (suffix, init) in [
        ("gamma", Init::Ones),
        ("beta", Init::Zeros),
        ("running_mean", Init::Zeros),
        ("running_var", Init::Ones),
    ] {
        out.push(ParamSpec {
            name: format!("{name}.{suffix}"),
            shape: vec![c],
            init,
        });
    }
}

/// Named tensors of one model, ordered by name.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<T>> {
        self.tensors.remove(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn trainable(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter().filter(|(n, _)| !is_buffer(n))
    }

    pub fn trainable_count(&self) -> u64 {
        self.trainable().map(|(_, t)| t.numel() as u64).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Check names and shapes against a model's declared parameters.
    pub fn check_against(&self, specs: &[ParamSpec]) -> Result<()> {
        if specs.len() != self.tensors.len() {
            return Err(Error::InvalidArgument(format!(
                "parameter store has {} tensors, model declares {}",
                self.tensors.len(),
                specs.len()
            )));
        }
        for s in specs {
            let t = self.get(&s.name)?;
            if t.shape() != s.shape.as_slice() {
                return Err(Error::shape(
                    "params",
                    format!(
                        "`{}` has shape {:?}, model expects {:?}",
                        s.name,
                        t.shape(),
                        s.shape
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Initialise every declared parameter from one seeded stream, in
/// declaration order.
pub fn init_params<T: Real>(specs: &[ParamSpec], seed: u64) -> ParamStore<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for s in specs {
        let t = match s.init {
            Init::Zeros => Tensor::zeros(s.shape.clone()),
            Init::Ones => Tensor::full(s.shape.clone(), T::one()),
            Init::HeUniform { fan_in } => {
                let bound = (6.0 / fan_in as f64).sqrt();
                Tensor::from_fn(s.shape.clone(), |_| T::lit(rng.random_range(-bound..bound)))
            }
        };
        store.insert(s.name.clone(), t);
    }
    store
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Forward-pass context: the graph being recorded, parameter handles and
/// batch-norm statistics collected along the way.
pub struct Ctx<'a, T: Real> {
    pub graph: &'a mut Graph<T>,
    store: &'a ParamStore<T>,
    vars: HashMap<String, Var>,
    trainable: bool,
    pub mode: Mode,
    pub bn_updates: Vec<(String, BatchStats<T>)>,
}

impl<'a, T: Real> Ctx<'a, T> {
    /// Parameters enter the graph lazily on first use; `trainable` decides
    /// whether they receive gradients.
    pub fn new(
        graph: &'a mut Graph<T>,
        store: &'a ParamStore<T>,
        mode: Mode,
        trainable: bool,
    ) -> Self {
        Self {
            graph,
            store,
            vars: HashMap::new(),
            trainable,
            mode,
            bn_updates: Vec::new(),
        }
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let t = self.store.get(name)?.clone();
        let v = self.graph.leaf(t, self.trainable);
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    /// Graph handles of every parameter used so far.
    pub fn bound(&self) -> &HashMap<String, Var> {
        &self.vars
    }

    /// Parameter handles and collected batch statistics, releasing the graph.
    pub fn finish(self) -> (HashMap<String, Var>, Vec<(String, BatchStats<T>)>) {
        (self.vars, self.bn_updates)
    }

    pub fn conv(&mut self, x: Var, name: &str, stride: usize, bias: bool) -> Result<Var> {
        let w = self.param(&format!("{name}.weight"))?;
        let b = if bias {
            Some(self.param(&format!("{name}.bias"))?)
        } else {
            None
        };
        self.graph.conv2d(x, w, b, stride, Padding::Same)
    }

    pub fn linear(&mut self, x: Var, name: &str) -> Result<Var> {
        let w = self.param(&format!("{name}.weight"))?;
        let b = self.param(&format!("{name}.bias"))?;
        self.graph.linear(x, w, b)
    }

    pub fn leaky(&mut self, x: Var) -> Result<Var> {
        self.graph.leaky_relu(x, T::lit(LEAKY_SLOPE))
    }

    pub fn batch_norm(&mut self, x: Var, name: &str) -> Result<Var> {
        let gamma = self.param(&format!("{name}.gamma"))?;
        let beta = self.param(&format!("{name}.beta"))?;
        let eps = T::lit(BN_EPS);
        match self.mode {
            Mode::Train => {
                let (y, stats) = self.graph.batch_norm_train(x, gamma, beta, eps)?;
                self.bn_updates.push((name.to_string(), stats));
                Ok(y)
            }
            Mode::Eval => {
                let rm = self.store.get(&format!("{name}.running_mean"))?;
                let rv = self.store.get(&format!("{name}.running_var"))?;
                self.graph
                    .batch_norm_eval(x, gamma, beta, rm.data(), rv.data(), eps)
            }
        }
    }
}

/// Fold collected batch statistics into the running averages:
/// `running = (1 - momentum) * running + momentum * batch`.
pub fn apply_bn_updates<T: Real>(
    store: &mut ParamStore<T>,
    updates: &[(String, BatchStats<T>)],
) -> Result<()> {
    let mom = T::lit(BN_MOMENTUM);
    for (name, stats) in updates {
        for (suffix, batch) in [("running_mean", &stats.mean), ("running_var", &stats.var)] {
            let key = format!("{name}.{suffix}");
            let t = store
                .get_mut(&key)
                .ok_or_else(|| Error::InvalidArgument(format!("missing buffer `{key}`")))?;
            t.data_mut()
                .iter_mut()
                .zip(batch)
                .for_each(|(r, &b)| *r = (T::one() - mom) * *r + mom * b);
        }
    }
    Ok(())
}
