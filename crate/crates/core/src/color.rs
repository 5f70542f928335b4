//! sRGB to CIELAB conversion and the CIEDE2000 colour difference.
//!
//! The pixel pipeline is written once over [`Scalar`] so the same code
//! yields plain values (`f64`) and exact first derivatives ([`Dual`]).

use std::ops::{Add, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// D65 reference white for the sRGB primaries below.
const WHITE: [f64; 3] = [0.950_47, 1.0, 1.088_83];

const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

const POW25_7: f64 = 6_103_515_625.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabColor {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

impl LabColor {
    pub const fn new(l: f64, a: f64, b: f64) -> Self {
        Self { l, a, b }
    }
}

/// Arithmetic needed by the colour pipeline.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    fn val(self) -> f64;
    fn sqrt(self) -> Self;
    fn powf(self, e: f64) -> Self;
    fn exp(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn atan2(self, x: Self) -> Self;
    fn cbrt(self) -> Self;
}

impl Scalar for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn val(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn powf(self, e: f64) -> Self {
        f64::powf(self, e)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
    fn cbrt(self) -> Self {
        f64::cbrt(self)
    }
}

/// Forward-mode dual number carrying `N` partial derivatives.
///
/// Derivatives of `sqrt` at 0 and of `atan2` at the origin are defined as 0
/// (subgradient), which keeps grey and identical pixels finite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<const N: usize> {
    pub v: f64,
    pub d: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub fn var(v: f64, i: usize) -> Self {
        let mut d = [0.0; N];
        d[i] = 1.0;
        Self { v, d }
    }

    fn chain(self, v: f64, dv: f64) -> Self {
        let mut d = self.d;
        d.iter_mut().for_each(|x| *x *= dv);
        Self { v, d }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut d = self.d;
        d.iter_mut().zip(o.d).for_each(|(a, b)| *a += b);
        Self { v: self.v + o.v, d }
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        let mut d = self.d;
        d.iter_mut().zip(o.d).for_each(|(a, b)| *a -= b);
        Self { v: self.v - o.v, d }
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = self.d[i] * o.v + self.v * o.d[i];
        }
        Self { v: self.v * o.v, d }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.v;
        let v = self.v * inv;
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = (self.d[i] - v * o.d[i]) * inv;
        }
        Self { v, d }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    fn neg(self) -> Self {
        self.chain(-self.v, -1.0)
    }
}

impl<const N: usize> Scalar for Dual<N> {
    fn cst(v: f64) -> Self {
        Self { v, d: [0.0; N] }
    }
    fn val(self) -> f64 {
        self.v
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, if s > 0.0 { 0.5 / s } else { 0.0 })
    }
    fn powf(self, e: f64) -> Self {
        let p = self.v.powf(e);
        let dp = if self.v == 0.0 {
            0.0
        } else {
            e * self.v.powf(e - 1.0)
        };
        self.chain(p, dp)
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    fn sin(self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }
    fn atan2(self, x: Self) -> Self {
        let r2 = self.v * self.v + x.v * x.v;
        let v = self.v.atan2(x.v);
        if r2 == 0.0 {
            return Self::cst(v);
        }
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = (x.v * self.d[i] - self.v * x.d[i]) / r2;
        }
        Self { v, d }
    }
    fn cbrt(self) -> Self {
        let c = self.v.cbrt();
        self.chain(c, if c != 0.0 { 1.0 / (3.0 * c * c) } else { 0.0 })
    }
}

fn srgb_to_linear<S: Scalar>(c: S) -> S {
    if c.val() <= 0.040_45 {
        c / S::cst(12.92)
    } else {
        ((c + S::cst(0.055)) / S::cst(1.055)).powf(2.4)
    }
}

fn lab_f<S: Scalar>(t: S) -> S {
    const DELTA: f64 = 6.0 / 29.0;
    if t.val() > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / S::cst(3.0 * DELTA * DELTA) + S::cst(4.0 / 29.0)
    }
}

/// sRGB (gamma-encoded, `[0, 1]`) to CIELAB under D65.
pub fn srgb_to_lab_generic<S: Scalar>(rgb: [S; 3]) -> [S; 3] {
    let lin = rgb.map(srgb_to_linear);
    let xyz: [S; 3] = std::array::from_fn(|r| {
        lin[0] * S::cst(SRGB_TO_XYZ[r][0])
            + lin[1] * S::cst(SRGB_TO_XYZ[r][1])
            + lin[2] * S::cst(SRGB_TO_XYZ[r][2])
    });
    let f: [S; 3] = std::array::from_fn(|i| lab_f(xyz[i] / S::cst(WHITE[i])));
    [
        S::cst(116.0) * f[1] - S::cst(16.0),
        S::cst(500.0) * (f[0] - f[1]),
        S::cst(200.0) * (f[1] - f[2]),
    ]
}

/// Convert an sRGB triple in `[0, 1]` to Lab. Out-of-range components are
/// clamped with a warning.
pub fn srgb_to_lab(rgb: [f64; 3]) -> LabColor {
    let clamped = clamp_rgb(rgb);
    if clamped != rgb {
        log::warn!("srgb_to_lab: clamping out-of-range input {rgb:?}");
    }
    let [l, a, b] = srgb_to_lab_generic(clamped);
    LabColor { l, a, b }
}

fn clamp_rgb(rgb: [f64; 3]) -> [f64; 3] {
    rgb.map(|c| c.clamp(0.0, 1.0))
}

fn hue_degrees<S: Scalar>(b: S, a: S) -> S {
    if a.val() == 0.0 && b.val() == 0.0 {
        return S::cst(0.0);
    }
    let h = b.atan2(a) * S::cst(180.0 / std::f64::consts::PI);
    if h.val() < 0.0 {
        h + S::cst(360.0)
    } else {
        h
    }
}

fn rad<S: Scalar>(deg: S) -> S {
    deg * S::cst(std::f64::consts::PI / 180.0)
}

/// CIEDE2000 colour difference with `k_L = k_C = k_H = 1`.
pub fn ciede2000_generic<S: Scalar>(x: [S; 3], y: [S; 3]) -> S {
    let [l1, a1, b1] = x;
    let [l2, a2, b2] = y;

    let c1 = (a1 * a1 + b1 * b1).sqrt();
    let c2 = (a2 * a2 + b2 * b2).sqrt();
    let c_bar = (c1 + c2) / S::cst(2.0);
    let c_bar7 = c_bar.powf(7.0);
    let g = S::cst(0.5) * (S::cst(1.0) - (c_bar7 / (c_bar7 + S::cst(POW25_7))).sqrt());

    let a1p = (S::cst(1.0) + g) * a1;
    let a2p = (S::cst(1.0) + g) * a2;
    let c1p = (a1p * a1p + b1 * b1).sqrt();
    let c2p = (a2p * a2p + b2 * b2).sqrt();
    let h1p = hue_degrees(b1, a1p);
    let h2p = hue_degrees(b2, a2p);

    let dl = l2 - l1;
    let dc = c2p - c1p;
    let chroma_product = c1p * c2p;
    let zero_chroma = chroma_product.val() == 0.0;

    let dh = if zero_chroma {
        S::cst(0.0)
    } else {
        let d = h2p - h1p;
        if d.val() > 180.0 {
            d - S::cst(360.0)
        } else if d.val() < -180.0 {
            d + S::cst(360.0)
        } else {
            d
        }
    };
    let dh_big = S::cst(2.0) * chroma_product.sqrt() * rad(dh / S::cst(2.0)).sin();

    let l_bar = (l1 + l2) / S::cst(2.0);
    let c_bar_p = (c1p + c2p) / S::cst(2.0);
    let h_sum = h1p + h2p;
    let h_bar = if zero_chroma {
        h_sum
    } else if (h1p - h2p).val().abs() <= 180.0 {
        h_sum / S::cst(2.0)
    } else if h_sum.val() < 360.0 {
        (h_sum + S::cst(360.0)) / S::cst(2.0)
    } else {
        (h_sum - S::cst(360.0)) / S::cst(2.0)
    };

    let t = S::cst(1.0) - S::cst(0.17) * rad(h_bar - S::cst(30.0)).cos()
        + S::cst(0.24) * rad(S::cst(2.0) * h_bar).cos()
        + S::cst(0.32) * rad(S::cst(3.0) * h_bar + S::cst(6.0)).cos()
        - S::cst(0.20) * rad(S::cst(4.0) * h_bar - S::cst(63.0)).cos();
    let hz = (h_bar - S::cst(275.0)) / S::cst(25.0);
    let d_theta = S::cst(30.0) * (-(hz * hz)).exp();
    let c_bar_p7 = c_bar_p.powf(7.0);
    let r_c = S::cst(2.0) * (c_bar_p7 / (c_bar_p7 + S::cst(POW25_7))).sqrt();
    let l50 = (l_bar - S::cst(50.0)) * (l_bar - S::cst(50.0));
    let s_l = S::cst(1.0) + S::cst(0.015) * l50 / (S::cst(20.0) + l50).sqrt();
    let s_c = S::cst(1.0) + S::cst(0.045) * c_bar_p;
    let s_h = S::cst(1.0) + S::cst(0.015) * c_bar_p * t;
    let r_t = -(rad(S::cst(2.0) * d_theta).sin()) * r_c;

    let tl = dl / s_l;
    let tc = dc / s_c;
    let th = dh_big / s_h;
    let sq = tl * tl + tc * tc + th * th + r_t * tc * th;
    if sq.val() <= 0.0 {
        // identical colours (or rounding below zero)
        S::cst(0.0) * sq
    } else {
        sq.sqrt()
    }
}

pub fn ciede2000(x: LabColor, y: LabColor) -> f64 {
    ciede2000_generic([x.l, x.a, x.b], [y.l, y.a, y.b])
}

/// CIEDE2000 between two sRGB pixels (clamped to `[0, 1]`).
pub fn delta_e2000_rgb(a: [f64; 3], b: [f64; 3]) -> f64 {
    ciede2000_generic(
        srgb_to_lab_generic(clamp_rgb(a)),
        srgb_to_lab_generic(clamp_rgb(b)),
    )
}

/// CIEDE2000 between two sRGB pixels together with its partial derivatives
/// with respect to `(a_r, a_g, a_b, b_r, b_g, b_b)`.
pub fn delta_e2000_rgb_with_grad(a: [f64; 3], b: [f64; 3]) -> (f64, [f64; 6]) {
    let lift = |rgb: [f64; 3], off: usize| -> [Dual<6>; 3] {
        std::array::from_fn(|i| {
            let v = rgb[i];
            if (0.0..=1.0).contains(&v) {
                Dual::var(v, off + i)
            } else {
                Dual::cst(v.clamp(0.0, 1.0))
            }
        })
    };
    let de = ciede2000_generic(
        srgb_to_lab_generic(lift(a, 0)),
        srgb_to_lab_generic(lift(b, 3)),
    );
    (de.v, de.d)
}

/// Distance in degrees from the nearest point where the CIEDE2000 hue terms
/// switch branch for this sRGB pair: `|h1' - h2'| = 180`, `h1' + h2' = 360`
/// on the wrapped branch, and either hue crossing 0/360. Infinite when a
/// chroma is zero (the hue terms then vanish).
pub fn hue_branch_margin(a: [f64; 3], b: [f64; 3]) -> f64 {
    let [l1, a1, b1] = srgb_to_lab_generic(clamp_rgb(a));
    let [l2, a2, b2] = srgb_to_lab_generic(clamp_rgb(b));
    let _ = (l1, l2);
    let c_bar = ((a1 * a1 + b1 * b1).sqrt() + (a2 * a2 + b2 * b2).sqrt()) / 2.0;
    let c7 = c_bar.powi(7);
    let g = 0.5 * (1.0 - (c7 / (c7 + POW25_7)).sqrt());
    let (a1p, a2p) = ((1.0 + g) * a1, (1.0 + g) * a2);
    if (a1p == 0.0 && b1 == 0.0) || (a2p == 0.0 && b2 == 0.0) {
        return f64::INFINITY;
    }
    let h1: f64 = hue_degrees(b1, a1p);
    let h2: f64 = hue_degrees(b2, a2p);
    let wrap = |h: f64| h.min(360.0 - h);
    let mut m = wrap(h1).min(wrap(h2)).min(((h1 - h2).abs() - 180.0).abs());
    if (h1 - h2).abs() > 180.0 {
        m = m.min((h1 + h2 - 360.0).abs());
    }
    m
}
