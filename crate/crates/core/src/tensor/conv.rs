//! 2-D convolution kernels (im2col + GEMM), processed in bands of output
//! rows so the column buffer stays bounded for large kernels.

use super::Real;
use crate::error::{Error, Result};

/// Column-buffer budget in elements per band.
const COL_BUDGET: usize = 1 << 21;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding so that stride 1 preserves `H x W`; stride `s` gives
    /// `ceil(H/s) x ceil(W/s)`. Odd totals put the extra zero at the end.
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub ho: usize,
    pub wo: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, padding: Padding) -> Result<Self> {
        let [n, c, h, w] = *input else {
            return Err(Error::shape(
                "conv2d",
                format!("input must be N x C x H x W, got {input:?}"),
            ));
        };
        let [o, kc, kh, kw] = *kernel else {
            return Err(Error::shape(
                "conv2d",
                format!("kernel must be C_out x C_in x kh x kw, got {kernel:?}"),
            ));
        };
        if kc != c {
            return Err(Error::shape(
                "conv2d",
                format!("input has {c} channels but kernel expects {kc}"),
            ));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        let (ho, wo, pad_top, pad_left) = match padding {
            Padding::Same => {
                let ho = h.div_ceil(stride);
                let wo = w.div_ceil(stride);
                let ph = ((ho - 1) * stride + kh).saturating_sub(h);
                let pw = ((wo - 1) * stride + kw).saturating_sub(w);
                (ho, wo, ph / 2, pw / 2)
            }
            Padding::Valid => {
                if kh > h || kw > w {
                    return Err(Error::shape(
                        "conv2d",
                        format!("valid conv with {kh}x{kw} kernel on {h}x{w} input"),
                    ));
                }
                ((h - kh) / stride + 1, (w - kw) / stride + 1, 0, 0)
            }
        };
        Ok(Self {
            n,
            c,
            h,
            w,
            o,
            kh,
            kw,
            stride,
            ho,
            wo,
            pad_top,
            pad_left,
        })
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.n, self.o, self.ho, self.wo]
    }

    fn ckk(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad_top == 0 && self.pad_left == 0
    }

    fn band_rows(&self) -> usize {
        (COL_BUDGET / (self.ckk() * self.wo).max(1)).clamp(1, self.ho)
    }

    /// Fill `col` (`ckk x rows*wo`) with the receptive fields of output rows
    /// `row0 .. row0 + rows`.
    fn im2col<T: Real>(&self, x: &[T], row0: usize, rows: usize, col: &mut [T]) {
        let band = rows * self.wo;
        let (h, w) = (self.h as isize, self.w as isize);
        let s = self.stride as isize;
        for ci in 0..self.c {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let r = (ci * self.kh + i) * self.kw + j;
                    let dst_row = &mut col[r * band..(r + 1) * band];
                    let dx = j as isize - self.pad_left as isize;
                    for oy in 0..rows {
                        let iy = ((row0 + oy) * self.stride) as isize + i as isize
                            - self.pad_top as isize;
                        let dst = &mut dst_row[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= h {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = ox as isize * s + dx;
                            *d = if ix < 0 || ix >= w {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add a column buffer back onto the input gradient.
    fn col2im<T: Real>(&self, col: &[T], row0: usize, rows: usize, dx: &mut [T]) {
        let band = rows * self.wo;
        let (h, w) = (self.h as isize, self.w as isize);
        let s = self.stride as isize;
        for ci in 0..self.c {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let r = (ci * self.kh + i) * self.kw + j;
                    let src_row = &col[r * band..(r + 1) * band];
                    let dxo = j as isize - self.pad_left as isize;
                    for oy in 0..rows {
                        let iy = ((row0 + oy) * self.stride) as isize + i as isize
                            - self.pad_top as isize;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let src = &src_row[oy * self.wo..(oy + 1) * self.wo];
                        for (ox, &v) in src.iter().enumerate() {
                            let ix = ox as isize * s + dxo;
                            if ix >= 0 && ix < w {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward<T: Real>(g: &ConvGeom, x: &[T], k: &[T], bias: Option<&[T]>) -> Vec<T> {
    let plane_in = g.c * g.h * g.w;
    let hw_out = g.ho * g.wo;
    let ckk = g.ckk();
    let mut out = vec![T::zero(); g.n * g.o * hw_out];
    let rows_per_band = g.band_rows();
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); ckk * rows_per_band * g.wo]
    };
    for ni in 0..g.n {
        let xs = &x[ni * plane_in..(ni + 1) * plane_in];
        let ys = &mut out[ni * g.o * hw_out..(ni + 1) * g.o * hw_out];
        if g.is_pointwise() {
            T::gemm(
                g.o,
                g.c,
                hw_out,
                T::one(),
                k,
                g.c as isize,
                1,
                xs,
                hw_out as isize,
                1,
                T::zero(),
                ys,
                hw_out as isize,
                1,
            );
        } else {
            let mut row0 = 0;
            while row0 < g.ho {
                let rows = rows_per_band.min(g.ho - row0);
                let band = rows * g.wo;
                g.im2col(xs, row0, rows, &mut col[..ckk * band]);
                T::gemm(
                    g.o,
                    ckk,
                    band,
                    T::one(),
                    k,
                    ckk as isize,
                    1,
                    &col,
                    band as isize,
                    1,
                    T::zero(),
                    &mut ys[row0 * g.wo..],
                    hw_out as isize,
                    1,
                );
                row0 += rows;
            }
        }
        if let Some(b) = bias {
            for (oc, &bv) in b.iter().enumerate() {
                ys[oc * hw_out..(oc + 1) * hw_out]
                    .iter_mut()
                    .for_each(|v| *v += bv);
            }
        }
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub kernel: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn conv_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    k: &[T],
    dy: &[T],
    want_input: bool,
    want_kernel: bool,
    want_bias: bool,
) -> ConvGrads<T> {
    let plane_in = g.c * g.h * g.w;
    let hw_out = g.ho * g.wo;
    let ckk = g.ckk();
    let mut dx = want_input.then(|| vec![T::zero(); x.len()]);
    let mut dk = want_kernel.then(|| vec![T::zero(); k.len()]);
    let db = want_bias.then(|| {
        let mut db = vec![T::zero(); g.o];
        for ni in 0..g.n {
            for (oc, acc) in db.iter_mut().enumerate() {
                let off = (ni * g.o + oc) * hw_out;
                for &v in &dy[off..off + hw_out] {
                    *acc += v;
                }
            }
        }
        db
    });
    if !want_input && !want_kernel {
        return ConvGrads {
            input: None,
            kernel: None,
            bias: db,
        };
    }

    let rows_per_band = g.band_rows();
    let pointwise = g.is_pointwise();
    let mut col = if pointwise {
        Vec::new()
    } else {
        vec![T::zero(); ckk * rows_per_band * g.wo]
    };
    let mut dcol = if pointwise || !want_input {
        Vec::new()
    } else {
        vec![T::zero(); ckk * rows_per_band * g.wo]
    };

    for ni in 0..g.n {
        let xs = &x[ni * plane_in..(ni + 1) * plane_in];
        let dys = &dy[ni * g.o * hw_out..(ni + 1) * g.o * hw_out];
        if pointwise {
            if let Some(dk) = dk.as_mut() {
                // dK (O x C) += dY (O x HW) . X^T (HW x C)
                T::gemm(
                    g.o,
                    hw_out,
                    g.c,
                    T::one(),
                    dys,
                    hw_out as isize,
                    1,
                    xs,
                    1,
                    hw_out as isize,
                    T::one(),
                    dk,
                    g.c as isize,
                    1,
                );
            }
            if let Some(dx) = dx.as_mut() {
                let dxs = &mut dx[ni * plane_in..(ni + 1) * plane_in];
                // dX (C x HW) = K^T (C x O) . dY (O x HW)
                T::gemm(
                    g.c,
                    g.o,
                    hw_out,
                    T::one(),
                    k,
                    1,
                    g.c as isize,
                    dys,
                    hw_out as isize,
                    1,
                    T::zero(),
                    dxs,
                    hw_out as isize,
                    1,
                );
            }
            continue;
        }
        let mut row0 = 0;
        while row0 < g.ho {
            let rows = rows_per_band.min(g.ho - row0);
            let band = rows * g.wo;
            let dy_band = &dys[row0 * g.wo..];
            if let Some(dk) = dk.as_mut() {
                g.im2col(xs, row0, rows, &mut col[..ckk * band]);
                T::gemm(
                    g.o,
                    band,
                    ckk,
                    T::one(),
                    dy_band,
                    hw_out as isize,
                    1,
                    &col,
                    1,
                    band as isize,
                    T::one(),
                    dk,
                    ckk as isize,
                    1,
                );
            }
            if let Some(dx) = dx.as_mut() {
                T::gemm(
                    ckk,
                    g.o,
                    band,
                    T::one(),
                    k,
                    1,
                    ckk as isize,
                    dy_band,
                    hw_out as isize,
                    1,
                    T::zero(),
                    &mut dcol[..ckk * band],
                    band as isize,
                    1,
                );
                g.col2im(
                    &dcol[..ckk * band],
                    row0,
                    rows,
                    &mut dx[ni * plane_in..(ni + 1) * plane_in],
                );
            }
            row0 += rows;
        }
    }
    ConvGrads {
        input: dx,
        kernel: dk,
        bias: db,
    }
}
