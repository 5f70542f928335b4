use super::{conv_specs, trainable_count, Ctx, ModelConfig, ParamSpec, SaAttention};
use crate::error::{Error, Result};
use crate::tensor::{Real, Var};

/// `x + conv3(leaky(conv3(x)))`.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub name: String,
    pub channels: usize,
}

impl ResBlock {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self {
            name: name.into(),
            channels,
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        conv_specs(
            out,
            &format!("{}.conv1", self.name),
            self.channels,
            self.channels,
            3,
            3,
            true,
        );
        conv_specs(
            out,
            &format!("{}.conv2", self.name),
            self.channels,
            self.channels,
            3,
            3,
            true,
        );
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let c = ctx.graph.shape(x).get(1).copied();
        if c != Some(self.channels) {
            return Err(Error::shape(
                "residual_block",
                format!(
                    "{} expects {} channels, got {:?}",
                    self.name,
                    self.channels,
                    ctx.graph.shape(x)
                ),
            ));
        }
        let h = ctx.conv(x, &format!("{}.conv1", self.name), 1, true)?;
        let h = ctx.leaky(h)?;
        let h = ctx.conv(h, &format!("{}.conv2", self.name), 1, true)?;
        ctx.graph.add(x, h)
    }
}

/// U-Net generator mapping a `N x 1 x H x W` mosaic to `N x 3 x H x W` RGB.
///
/// Each level runs a residual block and an attention block; levels are
/// linked by stride-2 convs on the way down and conv + pixel shuffle on the
/// way up. Two residual middle blocks at the bottleneck share one outer skip.
/// Encoder features reach the decoder through 1x1 conv + sigmoid gates and
/// are concatenated with the upsampled features.
#[derive(Clone, Debug)]
pub struct Generator {
    pub config: ModelConfig,
}

impl Generator {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    fn attention(&self, name: String, c: usize) -> SaAttention {
        SaAttention::new(name, c, self.config.kernel, self.config.reduction)
    }

    fn levels(&self) -> usize {
        self.config.widths.len()
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let w = &self.config.widths;
        let last = self.levels() - 1;
        let mut s = Vec::new();
        conv_specs(
            &mut s,
            "head",
            1,
            w[0],
            self.config.kernel,
            self.config.kernel,
            true,
        );
        for (i, &c) in w.iter().enumerate() {
            ResBlock::new(format!("enc{i}.res"), c).specs(&mut s);
            if self.config.attention {
                self.attention(format!("enc{i}.att"), c).specs(&mut s);
            }
            if i < last {
                conv_specs(&mut s, &format!("down{i}"), c, w[i + 1], 3, 3, true);
            }
        }
        ResBlock::new("mid0", w[last]).specs(&mut s);
        ResBlock::new("mid1", w[last]).specs(&mut s);
        for i in (0..last).rev() {
            let c = w[i];
            conv_specs(&mut s, &format!("up{i}"), w[i + 1], 4 * c, 3, 3, true);
            if self.config.gated_skips {
                conv_specs(&mut s, &format!("gate{i}"), c, c, 1, 1, true);
            }
            conv_specs(&mut s, &format!("fuse{i}"), 2 * c, c, 3, 3, true);
            ResBlock::new(format!("dec{i}.res"), c).specs(&mut s);
            if self.config.attention {
                self.attention(format!("dec{i}.att"), c).specs(&mut s);
            }
        }
        conv_specs(&mut s, "tail", w[0], 3, 1, 1, true);
        s
    }

    pub fn param_count(&self) -> u64 {
        trainable_count(&self.specs())
    }

    fn level_block<T: Real>(
        &self,
        ctx: &mut Ctx<'_, T>,
        x: Var,
        prefix: &str,
        c: usize,
    ) -> Result<Var> {
        let x = ResBlock::new(format!("{prefix}.res"), c).forward(ctx, x)?;
        if self.config.attention {
            self.attention(format!("{prefix}.att"), c).forward(ctx, x)
        } else {
            Ok(x)
        }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, mosaic: Var) -> Result<Var> {
        let shape = ctx.graph.shape(mosaic).to_vec();
        let m = self.config.spatial_multiple();
        if shape.len() != 4 || shape[1] != 1 || shape[2] % m != 0 || shape[3] % m != 0 {
            return Err(Error::shape(
                "generator",
                format!("expected N x 1 x H x W with H, W multiples of {m}, got {shape:?}"),
            ));
        }
        let w = self.config.widths.clone();
        let last = self.levels() - 1;

        let x = ctx.conv(mosaic, "head", 1, true)?;
        let mut x = ctx.leaky(x)?;
        let mut skips = Vec::with_capacity(last);
        for i in 0..=last {
            x = self.level_block(ctx, x, &format!("enc{i}"), w[i])?;
            if i < last {
                skips.push(x);
                let d = ctx.conv(x, &format!("down{i}"), 2, true)?;
                x = ctx.leaky(d)?;
            }
        }

        let inner = ResBlock::new("mid0", w[last]).forward(ctx, x)?;
        let inner = ResBlock::new("mid1", w[last]).forward(ctx, inner)?;
        x = ctx.graph.add(x, inner)?;

        for i in (0..last).rev() {
            let u = ctx.conv(x, &format!("up{i}"), 1, true)?;
            let u = ctx.graph.pixel_shuffle(u, 2)?;
            let u = ctx.leaky(u)?;
            let skip = if self.config.gated_skips {
                let g = ctx.conv(skips[i], &format!("gate{i}"), 1, true)?;
                let g = ctx.graph.sigmoid(g)?;
                ctx.graph.mul(skips[i], g)?
            } else {
                skips[i]
            };
            let cat = ctx.graph.concat(&[u, skip])?;
            let f = ctx.conv(cat, &format!("fuse{i}"), 1, true)?;
            let f = ctx.leaky(f)?;
            x = self.level_block(ctx, f, &format!("dec{i}"), w[i])?;
        }

        let out = ctx.conv(x, "tail", 1, true)?;
        ctx.graph.sigmoid(out)
    }

    /// Upper bound on how far (in input pixels) zero-padding effects reach
    /// into the output: the summed kernel radii of the longest path, each
    /// scaled by its level's stride.
    pub fn boundary_rim(&self) -> usize {
        let k = self.config.kernel / 2;
        // residual block: two 3x3 convs; attention: k-radius asym conv then k x k conv
        let level = 2 + if self.config.attention { 2 * k } else { 0 };
        let last = self.levels() - 1;
        let mut rim = 1;
        for i in 0..=last {
            let s = 1 << i;
            rim += level * s;
            if i < last {
                rim += 2 * s; // stride-2 3x3 conv, including its asymmetric pad
            }
        }
        rim += 4 << last; // middle blocks
        for i in (0..last).rev() {
            rim += 2 << i; // up conv at the coarser level
            rim += (1 + level) << i; // fuse conv + level block
        }
        rim + 1 // tail and rounding
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, Mode, ParamStore};
    use crate::tensor::{Graph, Tensor};

    fn run(gen: &Generator, store: &ParamStore<f64>, input: &Tensor<f64>) -> Tensor<f64> {
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let mut ctx = Ctx::new(&mut g, store, Mode::Eval, false);
        let y = gen.forward(&mut ctx, x).unwrap();
        drop(ctx);
        g.value(y).clone()
    }

    #[test]
    fn output_shape_and_range() {
        let gen = Generator::new(ModelConfig::toy()).unwrap();
        let store = init_params(&gen.specs(), 3);
        let input = Tensor::from_fn(vec![2, 1, 16, 24], |i| (i % 7) as f64 / 7.0);
        let out = run(&gen, &store, &input);
        assert_eq!(out.shape(), &[2, 3, 16, 24]);
        assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(out, run(&gen, &store, &input));
    }

    #[test]
    fn rejects_unaligned_input() {
        let gen = Generator::new(ModelConfig::toy()).unwrap();
        let store = init_params::<f64>(&gen.specs(), 3);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![1, 1, 12, 16]));
        let mut ctx = Ctx::new(&mut g, &store, Mode::Eval, false);
        assert!(gen.forward(&mut ctx, x).is_err());
    }

    #[test]
    fn residual_block_with_zero_second_conv_is_identity() {
        let block = ResBlock::new("rb", 4);
        let mut specs = Vec::new();
        block.specs(&mut specs);
        let mut store: ParamStore<f64> = init_params(&specs, 5);
        store.insert("rb.conv2.weight", Tensor::zeros(vec![4, 4, 3, 3]));
        store.insert("rb.conv2.bias", Tensor::zeros(vec![4]));
        let input = Tensor::from_fn(vec![1, 4, 5, 5], |i| (i as f64 * 0.37).sin());
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let mut ctx = Ctx::new(&mut g, &store, Mode::Eval, false);
        let y = block.forward(&mut ctx, x).unwrap();
        drop(ctx);
        assert_eq!(g.value(y), &input);
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(
            Generator::new(ModelConfig::full()).unwrap().param_count(),
            28_261_805
        );
        assert_eq!(
            Generator::new(ModelConfig::toy()).unwrap().param_count(),
            264_381
        );
        let mut plain = ModelConfig::toy();
        plain.attention = false;
        assert!(Generator::new(plain).unwrap().param_count() < 264_381);
    }

    #[test]
    fn boundary_rim_grows_with_kernel() {
        let small = Generator::new(ModelConfig::toy()).unwrap().boundary_rim();
        let mut c = ModelConfig::toy();
        c.kernel = 9;
        assert!(Generator::new(c).unwrap().boundary_rim() > small);
    }
}
