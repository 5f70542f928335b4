//! Training objectives: L1 reconstruction, perceptual colour loss
//! (mean per-pixel CIEDE2000), adversarial terms and their weighted sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Var};

/// Adversarial weight used unless configured otherwise.
pub const LAMBDA_G: f64 = 1e-4;

/// Lower clamp applied before every logarithm in the adversarial losses.
pub const LOG_EPS: f64 = 1e-7;

fn same_shape<T: Real>(g: &Graph<T>, op: &'static str, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", g.shape(a), g.shape(b)),
        ));
    }
    Ok(())
}

/// Mean absolute difference over all elements.
pub fn loss_reconstruction<T: Real>(
    g: &mut Graph<T>,
    reconstructed: Var,
    target: Var,
) -> Result<Var> {
    same_shape(g, "loss_reconstruction", reconstructed, target)?;
    let d = g.sub(reconstructed, target)?;
    let a = g.abs(d)?;
    g.mean(a)
}

/// Mean per-pixel CIEDE2000 between two `N x 3 x H x W` sRGB batches.
pub fn loss_pcl<T: Real>(g: &mut Graph<T>, reconstructed: Var, target: Var) -> Result<Var> {
    same_shape(g, "loss_pcl", reconstructed, target)?;
    let de = g.delta_e2000(reconstructed, target)?;
    g.mean(de)
}

/// Generator term `-mean(ln D(fake pair))`.
pub fn loss_adversarial<T: Real>(g: &mut Graph<T>, d_fake: Var) -> Result<Var> {
    let l = g.ln_clamped(d_fake, T::lit(LOG_EPS))?;
    let m = g.mean(l)?;
    g.scale(m, -T::one())
}

/// Discriminator term `-[mean(ln D(real)) + mean(ln(1 - D(fake)))]`.
pub fn discriminator_loss<T: Real>(g: &mut Graph<T>, d_real: Var, d_fake: Var) -> Result<Var> {
    let eps = T::lit(LOG_EPS);
    let lr = g.ln_clamped(d_real, eps)?;
    let real = g.mean(lr)?;
    let one_minus = g.affine(d_fake, -T::one(), T::one())?;
    let lf = g.ln_clamped(one_minus, eps)?;
    let fake = g.mean(lf)?;
    let s = g.add(real, fake)?;
    g.scale(s, -T::one())
}

/// `l_r + l_c + lambda_g * l_g` as a graph node.
pub fn combine<T: Real>(
    g: &mut Graph<T>,
    l_r: Var,
    l_c: Option<Var>,
    l_g: Option<Var>,
    lambda_g: f64,
) -> Result<Var> {
    let mut total = l_r;
    if let Some(c) = l_c {
        total = g.add(total, c)?;
    }
    if let Some(adv) = l_g {
        let w = g.scale(adv, T::lit(lambda_g))?;
        total = g.add(total, w)?;
    }
    Ok(total)
}

/// Scalar loss values of one training step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_r: f64,
    pub l_c: f64,
    pub l_g: f64,
    pub l_total: f64,
    pub lambda_g: f64,
}

impl LossBreakdown {
    /// The total exactly as [`loss_total`] computes it.
    pub fn weighted_sum(l_r: f64, l_c: f64, l_g: f64, lambda_g: f64) -> f64 {
        l_r + l_c + lambda_g * l_g
    }
}

/// Combine component losses; a non-finite component is reported by name.
pub fn loss_total(l_r: f64, l_c: f64, l_g: f64, lambda_g: f64) -> Result<LossBreakdown> {
    for (term, v) in [
        ("l_r", l_r),
        ("l_c", l_c),
        ("l_g", l_g),
        ("lambda_g", lambda_g),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { term, step: 0 });
        }
    }
    let l_total = LossBreakdown::weighted_sum(l_r, l_c, l_g, lambda_g);
    if !l_total.is_finite() {
        return Err(Error::NonFiniteLoss {
            term: "l_total",
            step: 0,
        });
    }
    Ok(LossBreakdown {
        l_r,
        l_c,
        l_g,
        l_total,
        lambda_g,
    })
}
