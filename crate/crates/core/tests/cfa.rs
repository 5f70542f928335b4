use proptest::prelude::*;
use sagan_core::cfa::{
    add_noise, add_noise_keyed, bin_nona_to_bayer, make_pattern, mosaic, patches_of, read_mosaic,
    write_mosaic, MosaicImage, RgbImage,
};

const KINDS: [(&str, usize); 3] = [("bayer", 1), ("quad", 2), ("nona", 3)];
const BASES: [&str; 4] = ["rggb", "grbg", "gbrg", "bggr"];

/// Channel index (0 R, 1 G, 2 B) of the 2x2 base cell, spelled out.
fn base_cell(base: &str, cy: usize, cx: usize) -> usize {
    let letter = base.as_bytes()[cy * 2 + cx];
    match letter {
        b'r' => 0,
        b'g' => 1,
        _ => 2,
    }
}

fn expected_channel(base: &str, block: usize, y: usize, x: usize) -> usize {
    base_cell(base, (y / block) % 2, (x / block) % 2)
}

fn image(w: usize, h: usize, salt: f64) -> RgbImage {
    RgbImage::from_fn(w, h, |y, x, c| {
        (((y * 31 + x * 17 + c * 7) as f64 + salt) * 0.37).sin() * 0.5 + 0.5
    })
}

proptest! {
    #[test]
    fn pattern_map_matches_lookup(kind in 0usize..3, base in 0usize..4) {
        let (name, block) = KINDS[kind];
        let p = make_pattern(name, BASES[base]).unwrap();
        prop_assert_eq!(p.period(), 2 * block);
        for y in 0..4 * block {
            for x in 0..4 * block {
                prop_assert_eq!(p.channel_at(y, x) as usize, expected_channel(BASES[base], block, y, x));
                prop_assert_eq!(p.channel_at(y, x), p.channel_at(y + p.period(), x + p.period()));
            }
        }
    }

    #[test]
    fn nona_blocks_are_homogeneous(base in 0usize..4, by in 0usize..6, bx in 0usize..6) {
        let p = make_pattern("nona", BASES[base]).unwrap();
        let c = p.channel_at(3 * by, 3 * bx);
        for dy in 0..3 {
            for dx in 0..3 {
                prop_assert_eq!(p.channel_at(3 * by + dy, 3 * bx + dx), c);
            }
        }
        // Neighbouring blocks alternate within each 6x6 period.
        prop_assert_ne!(p.channel_at(3 * by, 3 * bx), p.channel_at(3 * by, 3 * bx + 3));
    }

    #[test]
    fn mosaic_equals_lookup(kind in 0usize..3, base in 0usize..4, ph in 1usize..4, pw in 1usize..4, salt in 0.0..10.0f64) {
        let (name, block) = KINDS[kind];
        let p = make_pattern(name, BASES[base]).unwrap();
        let (h, w) = (ph * p.period(), pw * p.period());
        let img = image(w, h, salt);
        let m = mosaic(&img, &p).unwrap();
        for y in 0..h {
            for x in 0..w {
                prop_assert_eq!(m.get(y, x), img.get(y, x, expected_channel(BASES[base], block, y, x)));
            }
        }
    }

    #[test]
    fn binning_matches_block_means(base in 0usize..4, ph in 1usize..4, pw in 1usize..4, salt in 0.0..10.0f64) {
        let p = make_pattern("nona", BASES[base]).unwrap();
        let (h, w) = (6 * ph, 6 * pw);
        let m = mosaic(&image(w, h, salt), &p).unwrap();
        let b = bin_nona_to_bayer(&m).unwrap();
        prop_assert_eq!((b.height(), b.width()), (h / 3, w / 3));
        prop_assert_eq!(b.pattern(), &make_pattern("bayer", BASES[base]).unwrap());
        for by in 0..h / 3 {
            for bx in 0..w / 3 {
                let mut s = 0.0;
                for dy in 0..3 {
                    for dx in 0..3 {
                        s += m.get(3 * by + dy, 3 * bx + dx);
                    }
                }
                prop_assert!((b.get(by, bx) - s / 9.0).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn binning_is_exact_on_constants(v in 0.0..=1.0f64, base in 0usize..4) {
        let p = make_pattern("nona", BASES[base]).unwrap();
        let m = mosaic(&RgbImage::constant(12, 18, [v, v, v]), &p).unwrap();
        let b = bin_nona_to_bayer(&m).unwrap();
        prop_assert!(b.plane().iter().all(|&x| x == v));
    }

    #[test]
    fn zero_sigma_is_identity(seed in any::<u64>(), salt in 0.0..10.0f64) {
        let p = make_pattern("nona", "rggb").unwrap();
        let m = mosaic(&image(12, 12, salt), &p).unwrap();
        prop_assert_eq!(&add_noise(&m, 0.0, seed).unwrap(), &m);
    }

    #[test]
    fn noisy_values_stay_in_unit_range(sigma in 0.0..80.0f64, seed in any::<u64>()) {
        let p = make_pattern("quad", "bggr").unwrap();
        let m = mosaic(&image(16, 8, 0.0), &p).unwrap();
        let n = add_noise(&m, sigma, seed).unwrap();
        prop_assert!(n.plane().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn noise_std_matches_sigma() {
    // 512 is not a multiple of the Nona period; noise ignores the pattern.
    let p = make_pattern("bayer", "rggb").unwrap();
    let grey = MosaicImage::new(512, 512, vec![0.5; 512 * 512], p).unwrap();
    for (sigma, seed) in [(5.0, 1u64), (10.0, 2), (20.0, 3), (30.0, 4)] {
        let n = add_noise(&grey, sigma, seed).unwrap();
        let d: Vec<f64> = n.plane().iter().map(|v| v - 0.5).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64).sqrt();
        let target = sigma / 255.0;
        assert!(
            (std - target).abs() / target < 0.02,
            "sigma {sigma}: std {std} vs {target}"
        );
        assert!(mean.abs() < 6.0 * target / (d.len() as f64).sqrt());
        assert_eq!(n.sigma, sigma);
        assert_eq!(n.seed, seed);
    }
}

#[test]
fn noise_is_keyed_by_seed_and_stream() {
    let p = make_pattern("nona", "rggb").unwrap();
    let grey = MosaicImage::new(12, 12, vec![0.5; 144], p).unwrap();
    let a = add_noise_keyed(&grey, 10.0, 7, 0).unwrap();
    assert_eq!(a, add_noise_keyed(&grey, 10.0, 7, 0).unwrap());
    assert_eq!(a, add_noise(&grey, 10.0, 7).unwrap());
    assert_ne!(
        a.plane(),
        add_noise_keyed(&grey, 10.0, 8, 0).unwrap().plane()
    );
    assert_ne!(
        a.plane(),
        add_noise_keyed(&grey, 10.0, 7, 1).unwrap().plane()
    );
}

#[test]
fn png_roundtrip_keeps_sixteen_bit_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.png");
    let p = make_pattern("nona", "gbrg").unwrap();
    let plane: Vec<f64> = (0..36 * 24)
        .map(|i| ((i * 977) % 65536) as f64 / 65535.0)
        .collect();
    let mut m = MosaicImage::new(36, 24, plane, p).unwrap();
    m.sigma = 12.5;
    m.seed = 99;
    write_mosaic(&path, &m).unwrap();
    let back = read_mosaic(&path).unwrap();
    assert_eq!(back, m);
}

#[test]
fn patch_grid_counts() {
    let img = |s: usize| RgbImage::constant(s, s, [0.5; 3]);
    assert_eq!(patches_of(&img(256), 128, 128).len(), 4);
    assert_eq!(patches_of(&img(300), 128, 128).len(), 4);
    assert_eq!(patches_of(&img(127), 128, 128).len(), 0);
    assert_eq!(patches_of(&img(256), 128, 64).len(), 9);
}
