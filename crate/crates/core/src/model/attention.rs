use super::{conv_specs, linear_specs, Ctx, ParamSpec};
use crate::error::{Error, Result};
use crate::tensor::{Real, Var};

/// Spatial-asymmetric attention block.
///
/// Two directional branches (`k x 1` and `1 x k` convolutions) are each
/// squeezed by channel-wise average and max pooling and turned into a
/// spatial map by a `k x k` conv + sigmoid; the maps are summed. A global
/// branch (`k x k` conv, global average pool, two linear layers, sigmoid)
/// gives a per-channel weight. Their product, through a leaky ReLU, gates
/// the input feature map.
#[derive(Clone, Debug)]
pub struct SaAttention {
    pub name: String,
    pub channels: usize,
    pub kernel: usize,
    pub reduction: usize,
}

/// Intermediate maps of one attention pass.
#[derive(Clone, Copy, Debug)]
pub struct AttentionParts {
    /// Vertical-branch spatial map, `N x 1 x H x W`.
    pub vertical: Var,
    /// Horizontal-branch spatial map, `N x 1 x H x W`.
    pub horizontal: Var,
    /// `vertical + horizontal`.
    pub combined: Var,
    /// Channel weights, `N x C x 1 x 1`.
    pub global: Var,
    /// Pre-gating attention tensor, `N x C x H x W`.
    pub attention: Var,
    /// `input * attention`.
    pub output: Var,
}

impl SaAttention {
    pub fn new(name: impl Into<String>, channels: usize, kernel: usize, reduction: usize) -> Self {
        Self {
            name: name.into(),
            channels,
            kernel,
            reduction,
        }
    }

    fn p(&self, part: &str) -> String {
        format!("{}.{part}", self.name)
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        let (c, k) = (self.channels, self.kernel);
        conv_specs(out, &self.p("asym_v"), c, c, k, 1, true);
        conv_specs(out, &self.p("asym_h"), c, c, 1, k, true);
        conv_specs(out, &self.p("spatial_v"), 2, 1, k, k, true);
        conv_specs(out, &self.p("spatial_h"), 2, 1, k, k, true);
        conv_specs(out, &self.p("global"), c, c, k, k, true);
        let hidden = (c / self.reduction).max(1);
        linear_specs(out, &self.p("fc1"), c, hidden);
        linear_specs(out, &self.p("fc2"), hidden, c);
    }

    fn branch<T: Real>(
        &self,
        ctx: &mut Ctx<'_, T>,
        x: Var,
        asym: &str,
        spatial: &str,
    ) -> Result<Var> {
        let a = ctx.conv(x, &self.p(asym), 1, true)?;
        let avg = ctx.graph.channel_avg(a)?;
        let max = ctx.graph.channel_max(a)?;
        let z = ctx.graph.concat(&[avg, max])?;
        let s = ctx.conv(z, &self.p(spatial), 1, true)?;
        ctx.graph.sigmoid(s)
    }

    pub fn forward_parts<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<AttentionParts> {
        let shape = ctx.graph.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.channels {
            return Err(Error::shape(
                "attention",
                format!(
                    "{} expects {} channels, got input {shape:?}",
                    self.name, self.channels
                ),
            ));
        }
        let vertical = self.branch(ctx, x, "asym_v", "spatial_v")?;
        let horizontal = self.branch(ctx, x, "asym_h", "spatial_h")?;
        let combined = ctx.graph.add(vertical, horizontal)?;

        let g = ctx.conv(x, &self.p("global"), 1, true)?;
        let pooled = ctx.graph.global_avg(g)?;
        let flat = ctx.graph.reshape(pooled, &[shape[0], self.channels])?;
        let h = ctx.linear(flat, &self.p("fc1"))?;
        let h = ctx.leaky(h)?;
        let h = ctx.linear(h, &self.p("fc2"))?;
        let h = ctx.graph.sigmoid(h)?;
        let global = ctx.graph.reshape(h, &[shape[0], self.channels, 1, 1])?;

        let prod = ctx.graph.mul(combined, global)?;
        let attention = ctx.leaky(prod)?;
        let output = ctx.graph.mul(x, attention)?;
        Ok(AttentionParts {
            vertical,
            horizontal,
            combined,
            global,
            attention,
            output,
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        Ok(self.forward_parts(ctx, x)?.output)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, Mode, ParamStore};
    use crate::tensor::{Graph, Tensor};

    #[test]
    fn shape_preserved_and_spatial_map_bounded() {
        let att = SaAttention::new("a", 8, 5, 4);
        let mut specs = Vec::new();
        att.specs(&mut specs);
        let store: ParamStore<f64> = init_params(&specs, 2);
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(vec![2, 8, 7, 9], |i| {
            (i as f64 * 0.11).cos()
        }));
        let mut ctx = Ctx::new(&mut g, &store, Mode::Eval, false);
        let p = att.forward_parts(&mut ctx, x).unwrap();
        drop(ctx);
        assert_eq!(g.shape(p.output), &[2, 8, 7, 9]);
        assert_eq!(g.shape(p.combined), &[2, 1, 7, 9]);
        assert_eq!(g.shape(p.global), &[2, 8, 1, 1]);
        assert!(g
            .value(p.combined)
            .data()
            .iter()
            .all(|&v| v > 0.0 && v < 2.0));
    }

    #[test]
    fn wrong_channel_count_is_error() {
        let att = SaAttention::new("a", 8, 5, 4);
        let mut specs = Vec::new();
        att.specs(&mut specs);
        let store: ParamStore<f64> = init_params(&specs, 2);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![1, 4, 6, 6]));
        let mut ctx = Ctx::new(&mut g, &store, Mode::Eval, false);
        assert!(att.forward(&mut ctx, x).is_err());
    }
}
