/// Straight transcription of the CIEDE2000 formula (kL = kC = kH = 1).
pub fn oracle(l1: f64, a1: f64, b1: f64, l2: f64, a2: f64, b2: f64) -> f64 {
    let deg = |r: f64| r.to_degrees();
    let rad = |d: f64| d.to_radians();
    let c1 = (a1 * a1 + b1 * b1).sqrt();
    let c2 = (a2 * a2 + b2 * b2).sqrt();
    let cbar = (c1 + c2) / 2.0;
    let g = 0.5 * (1.0 - (cbar.powi(7) / (cbar.powi(7) + 25f64.powi(7))).sqrt());
    let a1p = (1.0 + g) * a1;
    let a2p = (1.0 + g) * a2;
    let c1p = (a1p * a1p + b1 * b1).sqrt();
    let c2p = (a2p * a2p + b2 * b2).sqrt();
    let hue = |b: f64, a: f64| {
        if a == 0.0 && b == 0.0 {
            0.0
        } else {
            let h = deg(b.atan2(a));
            if h < 0.0 {
                h + 360.0
            } else {
                h
            }
        }
    };
    let h1p = hue(b1, a1p);
    let h2p = hue(b2, a2p);

    let dlp = l2 - l1;
    let dcp = c2p - c1p;
    let dhp = if c1p * c2p == 0.0 {
        0.0
    } else if (h2p - h1p).abs() <= 180.0 {
        h2p - h1p
    } else if h2p - h1p > 180.0 {
        h2p - h1p - 360.0
    } else {
        h2p - h1p + 360.0
    };
    let dhp_big = 2.0 * (c1p * c2p).sqrt() * rad(dhp / 2.0).sin();

    let lbar = (l1 + l2) / 2.0;
    let cbarp = (c1p + c2p) / 2.0;
    let hbarp = if c1p * c2p == 0.0 {
        h1p + h2p
    } else if (h1p - h2p).abs() <= 180.0 {
        (h1p + h2p) / 2.0
    } else if h1p + h2p < 360.0 {
        (h1p + h2p + 360.0) / 2.0
    } else {
        (h1p + h2p - 360.0) / 2.0
    };
    let t = 1.0 - 0.17 * rad(hbarp - 30.0).cos()
        + 0.24 * rad(2.0 * hbarp).cos()
        + 0.32 * rad(3.0 * hbarp + 6.0).cos()
        - 0.20 * rad(4.0 * hbarp - 63.0).cos();
    let dtheta = 30.0 * (-((hbarp - 275.0) / 25.0).powi(2)).exp();
    let rc = 2.0 * (cbarp.powi(7) / (cbarp.powi(7) + 25f64.powi(7))).sqrt();
    let sl = 1.0 + 0.015 * (lbar - 50.0).powi(2) / (20.0 + (lbar - 50.0).powi(2)).sqrt();
    let sc = 1.0 + 0.045 * cbarp;
    let sh = 1.0 + 0.015 * cbarp * t;
    let rt = -rad(2.0 * dtheta).sin() * rc;
    let (x, y, z) = (dlp / sl, dcp / sc, dhp_big / sh);
    (x * x + y * y + z * z + rt * y * z).sqrt()
}

/// Published CIEDE2000 test pairs: (L1, a1, b1), (L2, a2, b2), expected.
pub const SHARMA: [([f64; 3], [f64; 3], f64); 34] = [
    (
        [50.0000, 2.6772, -79.7751],
        [50.0000, 0.0000, -82.7485],
        2.0425,
    ),
    (
        [50.0000, 3.1571, -77.2803],
        [50.0000, 0.0000, -82.7485],
        2.8615,
    ),
    (
        [50.0000, 2.8361, -74.0200],
        [50.0000, 0.0000, -82.7485],
        3.4412,
    ),
    (
        [50.0000, -1.3802, -84.2814],
        [50.0000, 0.0000, -82.7485],
        1.0000,
    ),
    (
        [50.0000, -1.1848, -84.8006],
        [50.0000, 0.0000, -82.7485],
        1.0000,
    ),
    (
        [50.0000, -0.9009, -85.5211],
        [50.0000, 0.0000, -82.7485],
        1.0000,
    ),
    (
        [50.0000, 0.0000, 0.0000],
        [50.0000, -1.0000, 2.0000],
        2.3669,
    ),
    (
        [50.0000, -1.0000, 2.0000],
        [50.0000, 0.0000, 0.0000],
        2.3669,
    ),
    (
        [50.0000, 2.4900, -0.0010],
        [50.0000, -2.4900, 0.0009],
        7.1792,
    ),
    (
        [50.0000, 2.4900, -0.0010],
        [50.0000, -2.4900, 0.0010],
        7.1792,
    ),
    (
        [50.0000, 2.4900, -0.0010],
        [50.0000, -2.4900, 0.0011],
        7.2195,
    ),
    (
        [50.0000, 2.4900, -0.0010],
        [50.0000, -2.4900, 0.0012],
        7.2195,
    ),
    (
        [50.0000, -0.0010, 2.4900],
        [50.0000, 0.0009, -2.4900],
        4.8045,
    ),
    (
        [50.0000, -0.0010, 2.4900],
        [50.0000, 0.0010, -2.4900],
        4.8045,
    ),
    (
        [50.0000, -0.0010, 2.4900],
        [50.0000, 0.0011, -2.4900],
        4.7461,
    ),
    (
        [50.0000, 2.5000, 0.0000],
        [50.0000, 0.0000, -2.5000],
        4.3065,
    ),
    (
        [50.0000, 2.5000, 0.0000],
        [73.0000, 25.0000, -18.0000],
        27.1492,
    ),
    (
        [50.0000, 2.5000, 0.0000],
        [61.0000, -5.0000, 29.0000],
        22.8977,
    ),
    (
        [50.0000, 2.5000, 0.0000],
        [56.0000, -27.0000, -3.0000],
        31.9030,
    ),
    (
        [50.0000, 2.5000, 0.0000],
        [58.0000, 24.0000, 15.0000],
        19.4535,
    ),
    ([50.0000, 2.5000, 0.0000], [50.0000, 3.1736, 0.5854], 1.0000),
    ([50.0000, 2.5000, 0.0000], [50.0000, 3.2972, 0.0000], 1.0000),
    ([50.0000, 2.5000, 0.0000], [50.0000, 1.8634, 0.5757], 1.0000),
    ([50.0000, 2.5000, 0.0000], [50.0000, 3.2592, 0.3350], 1.0000),
    (
        [60.2574, -34.0099, 36.2677],
        [60.4626, -34.1751, 39.4387],
        1.2644,
    ),
    (
        [63.0109, -31.0961, -5.8663],
        [62.8187, -29.7946, -4.0864],
        1.2630,
    ),
    (
        [61.2901, 3.7196, -5.3901],
        [61.4292, 2.2480, -4.9620],
        1.8731,
    ),
    (
        [35.0831, -44.1164, 3.7933],
        [35.0232, -40.0716, 1.5901],
        1.8645,
    ),
    (
        [22.7233, 20.0904, -46.6940],
        [23.0331, 14.9730, -42.5619],
        2.0373,
    ),
    (
        [36.4612, 47.8580, 18.3852],
        [36.2715, 50.5065, 21.2231],
        1.4146,
    ),
    (
        [90.8027, -2.0831, 1.4410],
        [91.1528, -1.6435, 0.0447],
        1.4441,
    ),
    (
        [90.9257, -0.5406, -0.9208],
        [88.6381, -0.8985, -0.7239],
        1.5381,
    ),
    (
        [6.7747, -0.2908, -2.4247],
        [5.8714, -0.0985, -2.2286],
        0.6377,
    ),
    (
        [2.0776, 0.0795, -1.1350],
        [0.9033, -0.0636, -0.5514],
        0.9082,
    ),
];
