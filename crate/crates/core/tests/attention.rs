//! Attention maps against a loop-level recomputation, plus generator-level
//! properties that depend on the attention and gating layout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sagan_core::model::{init_params, Ctx, Generator, Mode, ModelConfig, ParamStore, SaAttention};
use sagan_core::tensor::{Graph, Tensor};

#[allow(dead_code)]
mod support;

use support::attention::{close, jittered, oracle, Arr};

#[test]
fn maps_match_straight_line_oracle() {
    for (seed, (n, c, h, w, k, r)) in [
        (1u64, (2, 8, 6, 7, 5, 4)),
        (2, (1, 4, 5, 5, 3, 2)),
        (3, (2, 16, 4, 9, 9, 16)),
    ] {
        let att = SaAttention::new("att", c, k, r);
        let mut specs = Vec::new();
        att.specs(&mut specs);
        let store = jittered(&specs, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = Tensor::from_fn(vec![n, c, h, w], |_| rng.random_range(-1.0..1.0));
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let mut ctx = Ctx::new(&mut g, &store, Mode::Eval, false);
        let parts = att.forward_parts(&mut ctx, x).unwrap();
        drop(ctx);
        let o = oracle(&Arr::from(&input), &store, "att");
        close(g.value(parts.vertical).data(), &o.f_v.d, 1e-6, "F_V");
        close(g.value(parts.horizontal).data(), &o.f_h.d, 1e-6, "F_H");
        close(g.value(parts.combined).data(), &o.f_c.d, 1e-6, "F_C");
        close(g.value(parts.global).data(), &o.f_g.concat(), 1e-6, "F_G");
        close(g.value(parts.attention).data(), &o.s_a.d, 1e-6, "S_A");
        close(g.value(parts.output).data(), &o.out.d, 1e-6, "output");
        assert_eq!(g.shape(parts.output), input.shape());
    }
}

#[test]
fn pre_gating_map_is_within_zero_and_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for sample in 0..1000u64 {
        let c = [4, 8][sample as usize % 2];
        let att = SaAttention::new("att", c, [3, 5][(sample / 2) as usize % 2], 4);
        let mut specs = Vec::new();
        att.specs(&mut specs);
        // Init-distribution weights with random biases. Far larger weights
        // drive the sigmoids past ~37, where f64 rounds them to exactly 1.
        let mut store: ParamStore<f64> = init_params(&specs, sample);
        for (name, t) in store.iter_mut() {
            if name.ends_with(".bias") {
                t.data_mut()
                    .iter_mut()
                    .for_each(|v| *v = rng.random_range(-2.0..2.0));
            }
        }
        let (h, w) = (rng.random_range(2..7), rng.random_range(2..7));
        let input = Tensor::from_fn(vec![1, c, h, w], |_| rng.random_range(-3.0..3.0));
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let mut ctx = Ctx::new(&mut g, &store, Mode::Eval, false);
        let parts = att.forward_parts(&mut ctx, x).unwrap();
        drop(ctx);
        let s = g.value(parts.attention).data();
        assert!(
            s.iter().all(|&v| v > 0.0 && v < 2.0),
            "sample {sample}: {:?}",
            s.iter()
                .cloned()
                .fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(v), b.max(v)))
        );
        assert_eq!(g.shape(parts.output), input.shape());
    }
}

fn generate(gen: &Generator, store: &ParamStore<f64>, input: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let mut ctx = Ctx::new(&mut g, store, Mode::Eval, false);
    let y = gen.forward(&mut ctx, x).unwrap();
    drop(ctx);
    g.value(y).clone()
}

#[test]
fn saturated_skip_gates_reduce_to_plain_skips() {
    let gated = Generator::new(ModelConfig::toy()).unwrap();
    let mut plain_cfg = ModelConfig::toy();
    plain_cfg.gated_skips = false;
    let plain = Generator::new(plain_cfg).unwrap();
    let mut store: ParamStore<f64> = init_params(&gated.specs(), 4);
    for (name, t) in store.iter_mut() {
        if name.starts_with("gate") && name.ends_with(".bias") {
            t.data_mut().iter_mut().for_each(|v| *v = 60.0);
        }
    }
    let input = Tensor::from_fn(vec![1, 1, 16, 16], |i| ((i * 37) % 101) as f64 / 100.0);
    let a = generate(&gated, &store, &input);
    let b = generate(&plain, &store, &input);
    close(a.data(), b.data(), 1e-5, "gated vs plain");
}

#[test]
fn constant_input_gives_period_eight_output_away_from_the_rim() {
    let gen = Generator::new(ModelConfig::toy()).unwrap();
    let rim = gen.boundary_rim();
    let size = (2 * rim + 24).div_ceil(8) * 8;
    let store: ParamStore<f64> = init_params(&gen.specs(), 6);
    let out = generate(&gen, &store, &Tensor::full(vec![1, 1, size, size], 0.4));
    let at = |c: usize, y: usize, x: usize| out.data()[(c * size + y) * size + x];
    let mut compared = 0;
    for c in 0..3 {
        for y in rim..size - rim - 8 {
            for x in rim..size - rim - 8 {
                let v = at(c, y, x);
                assert!(
                    (v - at(c, y + 8, x)).abs() < 1e-6,
                    "row period at ({c},{y},{x})"
                );
                assert!(
                    (v - at(c, y, x + 8)).abs() < 1e-6,
                    "column period at ({c},{y},{x})"
                );
                compared += 1;
            }
        }
    }
    assert!(compared >= 3 * 64);
}
