//! Forward values of the tensor ops against direct loop implementations.

use proptest::prelude::*;
use sagan_core::tensor::{Graph, Padding, Tensor};

fn seq(shape: &[usize], salt: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |i| ((i as f64 + salt) * 0.618_034).sin())
}

/// Direct convolution; "same" padding splits an odd total with the extra
/// zero after the data.
fn conv_oracle(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &[f64],
    stride: usize,
    same: bool,
) -> (Vec<usize>, Vec<f64>) {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let (oh, ow, pt, pl) = if same {
        let oh = h.div_ceil(stride);
        let ow = wd.div_ceil(stride);
        let th = ((oh - 1) * stride + kh).saturating_sub(h);
        let tw = ((ow - 1) * stride + kw).saturating_sub(wd);
        (oh, ow, th / 2, tw / 2)
    } else {
        ((h - kh) / stride + 1, (wd - kw) / stride + 1, 0, 0)
    };
    let mut out = vec![0.0; n * o * oh * ow];
    for ni in 0..n {
        for oi in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut s = b[oi];
                    for ci in 0..c {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = (y * stride + dy) as isize - pt as isize;
                                let ix = (xx * stride + dx) as isize - pl as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv =
                                    x.data()[((ni * c + ci) * h + iy as usize) * wd + ix as usize];
                                let wv = w.data()[((oi * c + ci) * kh + dy) * kw + dx];
                                s += xv * wv;
                            }
                        }
                    }
                    out[((ni * o + oi) * oh + y) * ow + xx] = s;
                }
            }
        }
    }
    (vec![n, o, oh, ow], out)
}

fn assert_close(got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len());
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!(
            (g - w).abs() <= tol * (1.0 + w.abs()),
            "element {i}: {g} vs {w}"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_matches_direct_loops(
        n in 1usize..3, c in 1usize..4, o in 1usize..4,
        h in 1usize..9, w in 1usize..9,
        kh in 1usize..6, kw in 1usize..6,
        stride in 1usize..3, same in any::<bool>(),
    ) {
        prop_assume!(same || (kh <= h && kw <= w));
        let x = seq(&[n, c, h, w], 0.0);
        let k = seq(&[o, c, kh, kw], 3.0);
        let b: Vec<f64> = (0..o).map(|i| i as f64 * 0.1 - 0.05).collect();
        let mut g = Graph::new();
        let (xv, kv) = (g.constant(x.clone()), g.constant(k.clone()));
        let bv = g.constant(Tensor::new(vec![o], b.clone()).unwrap());
        let pad = if same { Padding::Same } else { Padding::Valid };
        let y = g.conv2d(xv, kv, Some(bv), stride, pad).unwrap();
        let (shape, want) = conv_oracle(&x, &k, &b, stride, same);
        prop_assert_eq!(g.shape(y), &shape[..]);
        assert_close(g.value(y).data(), &want, 1e-12);
    }

    #[test]
    fn pixel_shuffle_places_subpixels(n in 1usize..3, c in 1usize..3, h in 1usize..5, w in 1usize..5, r in 1usize..4) {
        let x = seq(&[n, c * r * r, h, w], 1.0);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = g.pixel_shuffle(xv, r).unwrap();
        prop_assert_eq!(g.shape(y), &[n, c, h * r, w * r][..]);
        let out = g.value(y).data();
        for ni in 0..n {
            for ci in 0..c {
                for oy in 0..h * r {
                    for ox in 0..w * r {
                        let src_c = ci * r * r + (oy % r) * r + ox % r;
                        let want = x.data()[((ni * c * r * r + src_c) * h + oy / r) * w + ox / r];
                        let got = out[((ni * c + ci) * h * r + oy) * w * r + ox];
                        prop_assert_eq!(got, want);
                    }
                }
            }
        }
    }

    #[test]
    fn channel_pooling(n in 1usize..3, c in 1usize..6, h in 1usize..5, w in 1usize..5) {
        let x = seq(&[n, c, h, w], 2.0);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let avg = g.channel_avg(xv).unwrap();
        let max = g.channel_max(xv).unwrap();
        let gap = g.global_avg(xv).unwrap();
        prop_assert_eq!(g.shape(avg), &[n, 1, h, w][..]);
        prop_assert_eq!(g.shape(gap), &[n, c, 1, 1][..]);
        let at = |ni: usize, ci: usize, p: usize| x.data()[(ni * c + ci) * h * w + p];
        for ni in 0..n {
            for p in 0..h * w {
                let vals: Vec<f64> = (0..c).map(|ci| at(ni, ci, p)).collect();
                let mean = vals.iter().sum::<f64>() / c as f64;
                let mx = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!((g.value(avg).data()[ni * h * w + p] - mean).abs() < 1e-12);
                prop_assert_eq!(g.value(max).data()[ni * h * w + p], mx);
            }
            for ci in 0..c {
                let mean = (0..h * w).map(|p| at(ni, ci, p)).sum::<f64>() / (h * w) as f64;
                prop_assert!((g.value(gap).data()[ni * c + ci] - mean).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn batch_norm_train_normalises_with_biased_variance() {
    let (n, c, h, w) = (3, 2, 2, 3);
    let x = seq(&[n, c, h, w], 4.0);
    let gamma = vec![1.5, -0.5];
    let beta = vec![0.25, 2.0];
    let eps = 1e-5;
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let gv = g.constant(Tensor::new(vec![c], gamma.clone()).unwrap());
    let bv = g.constant(Tensor::new(vec![c], beta.clone()).unwrap());
    let (y, stats) = g.batch_norm_train(xv, gv, bv, eps).unwrap();
    for ci in 0..c {
        let vals: Vec<f64> = (0..n)
            .flat_map(|ni| (0..h * w).map(move |p| (ni, p)))
            .map(|(ni, p)| x.data()[(ni * c + ci) * h * w + p])
            .collect();
        let m = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / m;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
        assert!((stats.mean[ci] - mean).abs() < 1e-12);
        assert!((stats.var[ci] - var * m / (m - 1.0)).abs() < 1e-12);
        for ni in 0..n {
            for p in 0..h * w {
                let i = (ni * c + ci) * h * w + p;
                let want = gamma[ci] * (x.data()[i] - mean) / (var + eps).sqrt() + beta[ci];
                assert!((g.value(y).data()[i] - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn batch_norm_eval_uses_running_statistics() {
    let x = seq(&[2, 2, 2, 2], 5.0);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let gv = g.constant(Tensor::new(vec![2], vec![2.0, 1.0]).unwrap());
    let bv = g.constant(Tensor::new(vec![2], vec![0.0, -1.0]).unwrap());
    let (rm, rv) = ([0.1, -0.2], [4.0, 0.25]);
    let y = g.batch_norm_eval(xv, gv, bv, &rm, &rv, 1e-5).unwrap();
    for i in 0..16 {
        let ci = (i / 4) % 2;
        let (ga, be) = ([2.0, 1.0][ci], [0.0, -1.0][ci]);
        let want = ga * (x.data()[i] - rm[ci]) / (rv[ci] + 1e-5f64).sqrt() + be;
        assert!((g.value(y).data()[i] - want).abs() < 1e-12);
    }
}

#[test]
fn linear_is_x_times_w_transposed_plus_b() {
    let x = seq(&[3, 4], 6.0);
    let w = seq(&[2, 4], 7.0);
    let b = [0.5, -0.5];
    let mut g = Graph::new();
    let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
    let bv = g.constant(Tensor::new(vec![2], b.to_vec()).unwrap());
    let y = g.linear(xv, wv, bv).unwrap();
    for r in 0..3 {
        for o in 0..2 {
            let want = b[o]
                + (0..4)
                    .map(|i| x.data()[r * 4 + i] * w.data()[o * 4 + i])
                    .sum::<f64>();
            assert!((g.value(y).data()[r * 2 + o] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn activations() {
    let vals: Vec<f64> = vec![-3.0, -0.5, 0.0, 0.5, 3.0];
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![5], vals.clone()).unwrap());
    let s = g.sigmoid(x).unwrap();
    let l = g.leaky_relu(x, 0.2).unwrap();
    let sw = g.swish(x).unwrap();
    for (i, &v) in vals.iter().enumerate() {
        let sig = 1.0 / (1.0 + (-v).exp());
        assert!((g.value(s).data()[i] - sig).abs() < 1e-15);
        assert_eq!(g.value(l).data()[i], if v >= 0.0 { v } else { 0.2 * v });
        assert!((g.value(sw).data()[i] - v * sig).abs() < 1e-15);
    }
}

#[test]
fn backward_of_mean_of_conv_matches_closed_form() {
    // d/dk mean(conv_valid(x, k)) = mean over windows of the input patch.
    let x = seq(&[1, 1, 5, 5], 8.0);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let kv = g.param(Tensor::full(vec![1, 1, 3, 3], 0.1));
    let y = g.conv2d(xv, kv, None, 1, Padding::Valid).unwrap();
    let m = g.mean(y).unwrap();
    let grads = g.backward(m).unwrap();
    let gk = grads.get(kv).unwrap();
    for dy in 0..3 {
        for dx in 0..3 {
            let mut s = 0.0;
            for y in 0..3 {
                for xx in 0..3 {
                    s += x.data()[(y + dy) * 5 + xx + dx];
                }
            }
            assert!((gk.data()[dy * 3 + dx] - s / 9.0).abs() < 1e-12);
        }
    }
}
