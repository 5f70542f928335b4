use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sagan_core::model::{init_params, ParamSpec, ParamStore};
use sagan_core::tensor::Tensor;

/// `N x C x H x W` array with plain indexing.
#[derive(Clone)]
pub struct Arr {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub d: Vec<f64>,
}

impl Arr {
    pub fn from(t: &Tensor<f64>) -> Self {
        let s = t.shape();
        Self {
            n: s[0],
            c: s[1],
            h: s[2],
            w: s[3],
            d: t.data().to_vec(),
        }
    }
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            d: vec![0.0; n * c * h * w],
        }
    }
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.d[((n * self.c + c) * self.h + y) * self.w + x]
    }
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = ((n * self.c + c) * self.h + y) * self.w + x;
        self.d[i] = v;
    }
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn leaky(v: f64) -> f64 {
    if v >= 0.0 {
        v
    } else {
        0.2 * v
    }
}

/// Stride-1 convolution with centred zero padding (odd kernels).
pub fn conv(x: &Arr, w: &Tensor<f64>, b: &Tensor<f64>) -> Arr {
    let (o, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let (ph, pw) = (kh / 2, kw / 2);
    let mut out = Arr::zeros(x.n, o, x.h, x.w);
    for n in 0..x.n {
        for oc in 0..o {
            for y in 0..x.h {
                for xx in 0..x.w {
                    let mut s = b.data()[oc];
                    for ic in 0..x.c {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let (iy, ix) = (y + dy, xx + dx);
                                if iy < ph || ix < pw || iy - ph >= x.h || ix - pw >= x.w {
                                    continue;
                                }
                                s += x.at(n, ic, iy - ph, ix - pw)
                                    * w.data()[((oc * x.c + ic) * kh + dy) * kw + dx];
                            }
                        }
                    }
                    out.set(n, oc, y, xx, s);
                }
            }
        }
    }
    out
}

pub struct OracleMaps {
    pub f_v: Arr,
    pub f_h: Arr,
    pub f_c: Arr,
    pub f_g: Vec<Vec<f64>>,
    pub s_a: Arr,
    pub out: Arr,
}

pub fn oracle(x: &Arr, p: &ParamStore<f64>, name: &str) -> OracleMaps {
    let w = |s: &str| p.get(&format!("{name}.{s}.weight")).unwrap();
    let b = |s: &str| p.get(&format!("{name}.{s}.bias")).unwrap();
    let directional = |asym: &str, spatial: &str| {
        let a = conv(x, w(asym), b(asym));
        let mut z = Arr::zeros(x.n, 2, x.h, x.w);
        for n in 0..x.n {
            for y in 0..x.h {
                for xx in 0..x.w {
                    let vals: Vec<f64> = (0..a.c).map(|c| a.at(n, c, y, xx)).collect();
                    z.set(n, 0, y, xx, vals.iter().sum::<f64>() / a.c as f64);
                    z.set(
                        n,
                        1,
                        y,
                        xx,
                        vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    );
                }
            }
        }
        let mut s = conv(&z, w(spatial), b(spatial));
        s.d.iter_mut().for_each(|v| *v = sigmoid(*v));
        s
    };
    let f_v = directional("asym_v", "spatial_v");
    let f_h = directional("asym_h", "spatial_h");
    let mut f_c = f_v.clone();
    f_c.d.iter_mut().zip(&f_h.d).for_each(|(a, b)| *a += b);

    let g = conv(x, w("global"), b("global"));
    let (w1, b1, w2, b2) = (w("fc1"), b("fc1"), w("fc2"), b("fc2"));
    let hidden = w1.shape()[0];
    let mut f_g: Vec<Vec<f64>> = Vec::new();
    for n in 0..x.n {
        let pooled: Vec<f64> = (0..x.c)
            .map(|c| {
                (0..x.h)
                    .flat_map(|y| (0..x.w).map(move |xx| (y, xx)))
                    .map(|(y, xx)| g.at(n, c, y, xx))
                    .sum::<f64>()
                    / (x.h * x.w) as f64
            })
            .collect();
        let h1: Vec<f64> = (0..hidden)
            .map(|j| {
                leaky(
                    b1.data()[j]
                        + (0..x.c)
                            .map(|i| w1.data()[j * x.c + i] * pooled[i])
                            .sum::<f64>(),
                )
            })
            .collect();
        f_g.push(
            (0..x.c)
                .map(|c| {
                    sigmoid(
                        b2.data()[c]
                            + (0..hidden)
                                .map(|j| w2.data()[c * hidden + j] * h1[j])
                                .sum::<f64>(),
                    )
                })
                .collect(),
        );
    }

    let mut s_a = Arr::zeros(x.n, x.c, x.h, x.w);
    let mut out = Arr::zeros(x.n, x.c, x.h, x.w);
    for n in 0..x.n {
        for c in 0..x.c {
            for y in 0..x.h {
                for xx in 0..x.w {
                    let s = leaky(f_c.at(n, 0, y, xx) * f_g[n][c]);
                    s_a.set(n, c, y, xx, s);
                    out.set(n, c, y, xx, x.at(n, c, y, xx) * s);
                }
            }
        }
    }
    OracleMaps {
        f_v,
        f_h,
        f_c,
        f_g,
        s_a,
        out,
    }
}

/// Initial parameters with every entry (biases included) jittered so no
/// term of the oracle is trivially zero.
pub fn jittered(specs: &[ParamSpec], seed: u64) -> ParamStore<f64> {
    let mut store: ParamStore<f64> = init_params(specs, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA77);
    for (_, t) in store.iter_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    store
}

pub fn close(a: &[f64], b: &[f64], tol: f64, what: &str) {
    assert_eq!(a.len(), b.len(), "{what}");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() < tol, "{what}[{i}]: {x} vs {y}");
    }
}
