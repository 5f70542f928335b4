use super::{bn_specs, conv_specs, Ctx, ModelConfig, ParamSpec, SaAttention};
use crate::error::{Error, Result};
use crate::tensor::{Real, Var};

/// Conditional discriminator: the candidate and reference images are
/// concatenated to six channels and pass seven 3x3 conv + batch norm +
/// swish layers (stride 2 on layers 1, 3, 5, 7), one attention block and a
/// 1x1 conv + sigmoid head, giving a probability map at 1/16 resolution.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub config: ModelConfig,
}

/// Side length inputs must be a multiple of (four stride-2 layers).
pub const DISC_MULTIPLE: usize = 16;

impl Discriminator {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    fn attention(&self) -> SaAttention {
        let c = *self.config.disc_widths.last().expect("validated");
        SaAttention::new("att", c, self.config.kernel, self.config.reduction)
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut s = Vec::new();
        let mut cin = 6;
        for (i, &c) in self.config.disc_widths.iter().enumerate() {
            conv_specs(&mut s, &format!("conv{}", i + 1), cin, c, 3, 3, false);
            bn_specs(&mut s, &format!("bn{}", i + 1), c);
            cin = c;
        }
        self.attention().specs(&mut s);
        conv_specs(&mut s, "out", cin, 1, 1, 1, true);
        s
    }

    pub fn forward<T: Real>(
        &self,
        ctx: &mut Ctx<'_, T>,
        candidate: Var,
        reference: Var,
    ) -> Result<Var> {
        let (a, b) = (
            ctx.graph.shape(candidate).to_vec(),
            ctx.graph.shape(reference).to_vec(),
        );
        if a != b {
            return Err(Error::shape(
                "discriminator",
                format!("pair shapes differ: {a:?} vs {b:?}"),
            ));
        }
        if a.len() != 4 || a[1] != 3 || a[2] % DISC_MULTIPLE != 0 || a[3] % DISC_MULTIPLE != 0 {
            return Err(Error::shape(
                "discriminator",
                format!("expected N x 3 x H x W with H, W multiples of {DISC_MULTIPLE}, got {a:?}"),
            ));
        }
        let mut x = ctx.graph.concat(&[candidate, reference])?;
        for i in 1..=self.config.disc_widths.len() {
            let stride = if i % 2 == 1 { 2 } else { 1 };
            x = ctx.conv(x, &format!("conv{i}"), stride, false)?;
            x = ctx.batch_norm(x, &format!("bn{i}"))?;
            x = ctx.graph.swish(x)?;
        }
        x = self.attention().forward(ctx, x)?;
        let out = ctx.conv(x, "out", 1, true)?;
        ctx.graph.sigmoid(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, Mode, ParamStore};
    use crate::tensor::{Graph, Tensor};

    #[test]
    fn sixty_four_gives_four_by_four() {
        let d = Discriminator::new(ModelConfig::toy()).unwrap();
        let store: ParamStore<f64> = init_params(&d.specs(), 9);
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_fn(vec![2, 3, 64, 64], |i| {
            (i % 13) as f64 / 13.0
        }));
        let b = g.constant(Tensor::from_fn(vec![2, 3, 64, 64], |i| {
            (i % 5) as f64 / 5.0
        }));
        let mut ctx = Ctx::new(&mut g, &store, Mode::Train, false);
        let out = d.forward(&mut ctx, a, b).unwrap();
        drop(ctx);
        assert_eq!(g.shape(out), &[2, 1, 4, 4]);
        assert!(g.value(out).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn rejects_mismatched_or_unaligned_pairs() {
        let d = Discriminator::new(ModelConfig::toy()).unwrap();
        let store: ParamStore<f64> = init_params(&d.specs(), 9);
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![1, 3, 32, 32]));
        let b = g.constant(Tensor::zeros(vec![1, 3, 32, 16]));
        let c = g.constant(Tensor::zeros(vec![1, 3, 24, 24]));
        let mut ctx = Ctx::new(&mut g, &store, Mode::Eval, false);
        assert!(d.forward(&mut ctx, a, b).is_err());
        assert!(d.forward(&mut ctx, c, c).is_err());
    }
}
