use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sagan_core::color::{ciede2000, delta_e2000_rgb, srgb_to_lab, LabColor};

#[allow(dead_code)]
mod support;

use support::ciede2000::{oracle, SHARMA};

fn lab(v: [f64; 3]) -> LabColor {
    LabColor::new(v[0], v[1], v[2])
}

#[test]
fn sharma_pairs() {
    for (i, (x, y, expected)) in SHARMA.iter().enumerate() {
        let got = ciede2000(lab(*x), lab(*y));
        assert!(
            (got - expected).abs() < 1e-4,
            "pair {}: {got} vs {expected}",
            i + 1
        );
        let o = oracle(x[0], x[1], x[2], y[0], y[1], y[2]);
        assert!(
            (got - o).abs() < 1e-4,
            "pair {}: {got} vs oracle {o}",
            i + 1
        );
    }
}

#[test]
fn random_pairs_match_oracle_and_are_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(2000);
    for _ in 0..10_000 {
        let x = [
            rng.random_range(0.0..100.0),
            rng.random_range(-128.0..128.0),
            rng.random_range(-128.0..128.0),
        ];
        let y = [
            rng.random_range(0.0..100.0),
            rng.random_range(-128.0..128.0),
            rng.random_range(-128.0..128.0),
        ];
        let d = ciede2000(lab(x), lab(y));
        let o = oracle(x[0], x[1], x[2], y[0], y[1], y[2]);
        assert!((d - o).abs() < 1e-4, "{x:?} {y:?}: {d} vs {o}");
        assert!((d - ciede2000(lab(y), lab(x))).abs() < 1e-12);
        assert_eq!(ciede2000(lab(x), lab(x)), 0.0);
    }
}

/// sRGB -> XYZ (D65) -> Lab written out directly.
fn srgb_lab_oracle(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(|c| {
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    });
    let x = 0.4124564 * lin[0] + 0.3575761 * lin[1] + 0.1804375 * lin[2];
    let y = 0.2126729 * lin[0] + 0.7151522 * lin[1] + 0.0721750 * lin[2];
    let z = 0.0193339 * lin[0] + 0.1191920 * lin[1] + 0.9503041 * lin[2];
    let f = |t: f64| {
        let d: f64 = 6.0 / 29.0;
        if t > d.powi(3) {
            t.cbrt()
        } else {
            t / (3.0 * d * d) + 4.0 / 29.0
        }
    };
    let (fx, fy, fz) = (f(x / 0.95047), f(y / 1.0), f(z / 1.08883));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

#[test]
fn srgb_conversion_anchors() {
    let w = srgb_to_lab([1.0, 1.0, 1.0]);
    assert!((w.l - 100.0).abs() < 1e-3 && w.a.abs() < 1e-2 && w.b.abs() < 1e-2);
    let k = srgb_to_lab([0.0, 0.0, 0.0]);
    assert!(k.l.abs() < 1e-9 && k.a.abs() < 1e-9 && k.b.abs() < 1e-9);
}

proptest! {
    #[test]
    fn srgb_conversion_matches_oracle(r in 0.0..=1.0f64, g in 0.0..=1.0f64, b in 0.0..=1.0f64) {
        let got = srgb_to_lab([r, g, b]);
        let want = srgb_lab_oracle([r, g, b]);
        prop_assert!((got.l - want[0]).abs() < 1e-9);
        prop_assert!((got.a - want[1]).abs() < 1e-9);
        prop_assert!((got.b - want[2]).abs() < 1e-9);
    }

    #[test]
    fn rgb_difference_is_a_symmetric_nonnegative_premetric(
        a in prop::array::uniform3(0.0..=1.0f64),
        b in prop::array::uniform3(0.0..=1.0f64),
    ) {
        let d = delta_e2000_rgb(a, b);
        prop_assert!(d >= 0.0 && d.is_finite());
        prop_assert!((d - delta_e2000_rgb(b, a)).abs() < 1e-10);
        prop_assert_eq!(delta_e2000_rgb(a, a), 0.0);
    }
}
