//! Finite-difference verification of the reverse-mode gradients, one check
//! per layer class, in double precision.
//!
//! Each check projects the layer output onto fixed random weights to get a
//! scalar, then compares the analytic gradient of every input tensor with
//! central differences on a sample of its elements.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::color;
use crate::error::{Error, Result};
use crate::losses;
use crate::model::{
    init_params, Ctx, Discriminator, Generator, Mode, ModelConfig, ParamStore, ResBlock,
    SaAttention,
};
use crate::tensor::{Graph, Padding, Tensor, Var};

/// Central-difference step.
pub const STEP: f64 = 1e-4;
/// Pass threshold on the maximum relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Threshold for the perceptual colour loss.
pub const PCL_TOLERANCE: f64 = 1e-3;
/// Denominator floor of the relative error, so entries whose true gradient
/// is (near) zero are judged on absolute error instead.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    /// Number of elements compared.
    pub checked: usize,
    /// Sampled elements left out because a `±STEP` perturbation moved some
    /// piecewise op onto another branch, where central differences do not
    /// estimate the derivative.
    pub skipped_kinks: usize,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

type Build<'a> = dyn Fn(&mut Graph<f64>, &[Tensor<f64>]) -> Result<(Var, Vec<Var>)> + 'a;

/// Compare analytic and numeric gradients of `sum(w * build(inputs))`.
///
/// `build` records the function on a fresh graph and returns its output and
/// one handle per input tensor, in order. At most `sample` elements of each
/// input are perturbed (all of them when the input is smaller).
pub fn check(
    name: &str,
    tolerance: f64,
    inputs: &[Tensor<f64>],
    sample: usize,
    seed: u64,
    build: &Build<'_>,
) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new();
    let (out, vars) = build(&mut g, inputs)?;
    if vars.len() != inputs.len() {
        return Err(Error::InvalidArgument(format!(
            "{name}: build returned {} handles",
            vars.len()
        )));
    }
    let w = Tensor::from_fn(g.shape(out).to_vec(), |_| StandardNormal.sample(&mut rng));
    let project = |g: &mut Graph<f64>, out: Var| -> Result<Var> {
        let wv = g.constant(w.clone());
        let p = g.mul(out, wv)?;
        g.sum(p)
    };
    let loss = project(&mut g, out)?;
    let grads = g.backward(loss)?;
    let pattern = g.branch_pattern();

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut skipped = 0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[k])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.shape().to_vec()));
        let n = input.numel();
        let picks: Vec<usize> = if n <= sample {
            (0..n).collect()
        } else {
            (0..sample).map(|_| rng.random_range(0..n)).collect()
        };
        for i in picks {
            let eval = |delta: f64| -> Result<(f64, bool)> {
                let mut moved = inputs.to_vec();
                moved[k].data_mut()[i] += delta;
                let mut g = Graph::new();
                let (out, _) = build(&mut g, &moved)?;
                let same_piece = g.branch_pattern() == pattern;
                let l = project(&mut g, out)?;
                Ok((g.scalar(l), same_piece))
            };
            let (plus, p_ok) = eval(STEP)?;
            let (minus, m_ok) = eval(-STEP)?;
            if !(p_ok && m_ok) {
                skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
            checked += 1;
        }
    }
    Ok(CheckOutcome {
        name: name.to_string(),
        max_rel_error: worst,
        tolerance,
        checked,
        skipped_kinks: skipped,
    })
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let e: f64 = StandardNormal.sample(rng);
        scale * e
    })
}

/// Normal samples pushed at least `margin` away from zero, for inputs to
/// piecewise-linear functions.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], margin: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let v: f64 = StandardNormal.sample(rng);
        v.signum() * (v.abs() + margin)
    })
}

fn leaves(g: &mut Graph<f64>, t: &[Tensor<f64>]) -> Vec<Var> {
    t.iter().map(|x| g.param(x.clone())).collect()
}

/// Parameters for a model with every entry (biases and batch-norm affine
/// terms included) perturbed off its initial constant.
fn perturbed_params(specs: &[crate::model::ParamSpec], seed: u64) -> ParamStore<f64> {
    let mut store: ParamStore<f64> = init_params(specs, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    for (name, t) in store.iter_mut() {
        if crate::model::is_buffer(name) {
            continue;
        }
        for v in t.data_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v += 0.1 * e;
        }
    }
    store
}

/// Split a store into ordered names and tensors (trainable entries only),
/// and a closure-friendly rebuild.
fn flatten(store: &ParamStore<f64>) -> (Vec<String>, Vec<Tensor<f64>>) {
    store
        .trainable()
        .map(|(n, t)| (n.clone(), t.clone()))
        .unzip()
}

fn rebuild(base: &ParamStore<f64>, names: &[String], values: &[Tensor<f64>]) -> ParamStore<f64> {
    let mut s = base.clone();
    for (n, v) in names.iter().zip(values) {
        s.insert(n.clone(), v.clone());
    }
    s
}

/// Run a model-level check: parameters (all trainable entries) plus one
/// data input, with `forward` recording the model on a [`Ctx`].
fn model_check(
    name: &str,
    store: &ParamStore<f64>,
    data: Vec<Tensor<f64>>,
    sample: usize,
    seed: u64,
    mode: Mode,
    forward: &dyn Fn(&mut Ctx<'_, f64>, &[Var]) -> Result<Var>,
) -> Result<CheckOutcome> {
    let (names, values) = flatten(store);
    let nd = data.len();
    let mut inputs = data;
    inputs.extend(values);
    let build = |g: &mut Graph<f64>, t: &[Tensor<f64>]| -> Result<(Var, Vec<Var>)> {
        let params = rebuild(store, &names, &t[nd..]);
        let xs: Vec<Var> = t[..nd].iter().map(|x| g.param(x.clone())).collect();
        let mut ctx = Ctx::new(g, &params, mode, true);
        let out = forward(&mut ctx, &xs)?;
        let (bound, _) = ctx.finish();
        let mut vars = xs;
        for n in &names {
            vars.push(*bound.get(n).ok_or_else(|| {
                Error::InvalidArgument(format!("{name}: parameter `{n}` unused"))
            })?);
        }
        Ok((out, vars))
    };
    check(name, TOLERANCE, &inputs, sample, seed, &build)
}

/// Every layer-class check on the toy configuration.
pub fn run_all(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let toy = ModelConfig::toy();

    let conv_case = |name: &str,
                     kh: usize,
                     kw: usize,
                     stride: usize,
                     rng: &mut ChaCha8Rng|
     -> Result<CheckOutcome> {
        let inputs = vec![
            normal(rng, &[2, 3, 7, 6], 1.0),
            normal(rng, &[4, 3, kh, kw], 0.5),
            normal(rng, &[4], 0.5),
        ];
        check(name, TOLERANCE, &inputs, usize::MAX, seed, &|g, t| {
            let v = leaves(g, t);
            Ok((g.conv2d(v[0], v[1], Some(v[2]), stride, Padding::Same)?, v))
        })
    };
    out.push(conv_case("conv_square", 3, 3, 1, &mut rng)?);
    out.push(conv_case("conv_asymmetric_vertical", 5, 1, 1, &mut rng)?);
    out.push(conv_case("conv_asymmetric_horizontal", 1, 5, 1, &mut rng)?);
    out.push(conv_case("conv_strided", 3, 3, 2, &mut rng)?);
    out.push(conv_case("conv_pointwise", 1, 1, 1, &mut rng)?);

    let x = normal(&mut rng, &[2, 8, 3, 2], 1.0);
    out.push(check(
        "pixel_shuffle",
        TOLERANCE,
        &[x],
        usize::MAX,
        seed,
        &|g, t| {
            let v = leaves(g, t);
            Ok((g.pixel_shuffle(v[0], 2)?, v))
        },
    )?);

    let bn = vec![
        normal(&mut rng, &[3, 4, 3, 3], 1.0),
        normal(&mut rng, &[4], 1.0),
        normal(&mut rng, &[4], 1.0),
    ];
    out.push(check(
        "batch_norm",
        TOLERANCE,
        &bn,
        usize::MAX,
        seed,
        &|g, t| {
            let v = leaves(g, t);
            Ok((g.batch_norm_train(v[0], v[1], v[2], 1e-5)?.0, v))
        },
    )?);

    let lin = vec![
        normal(&mut rng, &[3, 5], 1.0),
        normal(&mut rng, &[4, 5], 1.0),
        normal(&mut rng, &[4], 1.0),
    ];
    out.push(check(
        "linear",
        TOLERANCE,
        &lin,
        usize::MAX,
        seed,
        &|g, t| {
            let v = leaves(g, t);
            Ok((g.linear(v[0], v[1], v[2])?, v))
        },
    )?);

    let act = away_from_zero(&mut rng, &[1, 2, 4, 4], 0.05);
    out.push(check(
        "activations",
        TOLERANCE,
        &[act],
        usize::MAX,
        seed,
        &|g, t| {
            let v = leaves(g, t);
            let a = g.sigmoid(v[0])?;
            let b = g.leaky_relu(v[0], 0.2)?;
            let c = g.swish(v[0])?;
            let d = g.abs(v[0])?;
            let s = g.add(a, b)?;
            let s = g.add(s, c)?;
            Ok((g.add(s, d)?, v))
        },
    )?);

    // distinct channel values keep the max away from ties
    let mut pool = normal(&mut rng, &[2, 4, 3, 3], 1.0);
    for (i, v) in pool.data_mut().iter_mut().enumerate() {
        *v += 0.5 * ((i / 9) % 4) as f64;
    }
    out.push(check(
        "pooling",
        TOLERANCE,
        &[pool],
        usize::MAX,
        seed,
        &|g, t| {
            let v = leaves(g, t);
            let a = g.channel_avg(v[0])?;
            let m = g.channel_max(v[0])?;
            let cat = g.concat(&[a, m])?;
            let ga = g.global_avg(v[0])?;
            let ga = g.reshape(ga, &[2, 4])?;
            let s = g.sum(cat)?;
            let s = g.reshape(s, &[1, 1])?;
            let both = g.mul(ga, s)?;
            Ok((both, v))
        },
    )?);

    let att = SaAttention::new("att", 8, toy.kernel, toy.reduction);
    let mut specs = Vec::new();
    att.specs(&mut specs);
    let store = perturbed_params(&specs, seed);
    let x = normal(&mut rng, &[1, 8, 6, 6], 1.0);
    out.push(model_check(
        "attention",
        &store,
        vec![x],
        6,
        seed,
        Mode::Train,
        &|ctx, xs| att.forward(ctx, xs[0]),
    )?);

    let rb = ResBlock::new("res", 4);
    let mut specs = Vec::new();
    rb.specs(&mut specs);
    let store = perturbed_params(&specs, seed);
    let x = normal(&mut rng, &[1, 4, 5, 5], 1.0);
    out.push(model_check(
        "residual_block",
        &store,
        vec![x],
        8,
        seed,
        Mode::Train,
        &|ctx, xs| rb.forward(ctx, xs[0]),
    )?);

    let gen = Generator::new(toy.clone())?;
    let store = perturbed_params(&gen.specs(), seed);
    let x = Tensor::from_fn(vec![1, 1, 8, 8], |_| rng.random_range(0.1..0.9));
    out.push(model_check(
        "generator",
        &store,
        vec![x],
        2,
        seed,
        Mode::Train,
        &|ctx, xs| gen.forward(ctx, xs[0]),
    )?);

    let disc = Discriminator::new(toy)?;
    let store = perturbed_params(&disc.specs(), seed);
    let cand = Tensor::from_fn(vec![2, 3, 32, 32], |_| rng.random_range(0.1..0.9));
    let refr = Tensor::from_fn(vec![2, 3, 32, 32], |_| rng.random_range(0.1..0.9));
    out.push(model_check(
        "discriminator",
        &store,
        vec![cand, refr],
        2,
        seed,
        Mode::Train,
        &|ctx, xs| disc.forward(ctx, xs[0], xs[1]),
    )?);

    let a = Tensor::from_fn(vec![1, 3, 4, 4], |_| rng.random_range(0.1..0.9));
    let offsets = away_from_zero(&mut rng, &[1, 3, 4, 4], 0.02);
    let b = Tensor::from_fn(vec![1, 3, 4, 4], |i| a.data()[i] + 0.05 * offsets.data()[i]);
    out.push(check(
        "loss_l1",
        TOLERANCE,
        &[a, b],
        usize::MAX,
        seed,
        &|g, t| {
            let v = leaves(g, t);
            Ok((losses::loss_reconstruction(g, v[0], v[1])?, v))
        },
    )?);

    let (a, b) = pcl_pair(&mut rng, 4, 4);
    let mut pcl = check(
        "loss_pcl",
        PCL_TOLERANCE,
        &[a, b],
        usize::MAX,
        seed,
        &|g, t| {
            let v = leaves(g, t);
            Ok((losses::loss_pcl(g, v[0], v[1])?, v))
        },
    )?;
    pcl.tolerance = PCL_TOLERANCE;
    out.push(pcl);

    let d = vec![
        Tensor::from_fn(vec![1, 1, 3, 3], |_| rng.random_range(0.05..0.95)),
        Tensor::from_fn(vec![1, 1, 3, 3], |_| rng.random_range(0.05..0.95)),
    ];
    out.push(check(
        "loss_adversarial",
        TOLERANCE,
        &d,
        usize::MAX,
        seed,
        &|g, t| {
            let v = leaves(g, t);
            let dl = losses::discriminator_loss(g, v[0], v[1])?;
            let gl = losses::loss_adversarial(g, v[1])?;
            Ok((g.add(dl, gl)?, v))
        },
    )?);
    Ok(out)
}

/// Minimum hue-angle margin (degrees) kept from the branch points of the
/// CIEDE2000 hue terms when sampling colour-loss inputs.
pub const HUE_MARGIN: f64 = 2.0;

/// Two images whose per-pixel colour pairs stay clear of the hue branches
/// and of the clamp at the ends of `[0, 1]`.
fn pcl_pair(rng: &mut ChaCha8Rng, h: usize, w: usize) -> (Tensor<f64>, Tensor<f64>) {
    let n = h * w;
    let mut a = vec![0.0; 3 * n];
    let mut b = vec![0.0; 3 * n];
    for p in 0..n {
        loop {
            let ca: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.05..0.95));
            let cb: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.05..0.95));
            if color::hue_branch_margin(ca, cb) > HUE_MARGIN {
                for c in 0..3 {
                    a[c * n + p] = ca[c];
                    b[c * n + p] = cb[c];
                }
                break;
            }
        }
    }
    (
        Tensor::new(vec![1, 3, h, w], a).expect("shape"),
        Tensor::new(vec![1, 3, h, w], b).expect("shape"),
    )
}
