//! Slice-level kernels behind the tape operations.

use crate::error::{Error, Result};

/// `C = A·B + beta·C` for strided row-major views.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let span = |rows: usize, cols: usize, rs: usize, cs: usize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs + (cols - 1) * cs + 1
        }
    };
    assert!(a.len() >= span(m, k, rsa, csa), "gemm: A too small");
    assert!(b.len() >= span(k, n, rsb, csb), "gemm: B too small");
    assert!(c.len() >= span(m, n, rsc, csc), "gemm: C too small");
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

pub fn conv2d_output_dims(
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize)> {
    if stride == 0 {
        return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
    }
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(Error::shape(
            "conv2d",
            format!("kernel {kh}x{kw} does not fit {h}x{w} with pad {pad}"),
        ));
    }
    Ok(((h + 2 * pad - kh) / stride + 1, (w + 2 * pad - kw) / stride + 1))
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn k_rows(&self) -> usize {
        self.kh * self.kw * self.c_in
    }

    fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output positions `o` in `0..o_len` whose source `o·stride + k − pad`
    /// lands inside `0..n`, as a half-open range.
    fn valid(&self, o_len: usize, k: usize, n: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if self.pad > k { (self.pad - k).div_ceil(s) } else { 0 };
        let hi = if n + self.pad > k { (n + self.pad - k).div_ceil(s) } else { 0 };
        (lo.min(o_len), hi.min(o_len).max(lo.min(o_len)))
    }
}

/// Rows of the column matrix are ordered `(ky, kx, ci)` to match the
/// `[kh, kw, c_in, c_out]` kernel layout.
fn im2col(x: &[f64], g: &ConvGeom, col: &mut [f64]) {
    let p = g.out_pixels();
    let s = g.stride;
    for ky in 0..g.kh {
        let (y0, y1) = g.valid(g.oh, ky, g.h);
        for kx in 0..g.kw {
            let (x0, x1) = g.valid(g.ow, kx, g.w);
            for ci in 0..g.c_in {
                let row = &mut col[((ky * g.kw + kx) * g.c_in + ci) * p..][..p];
                let plane = &x[ci * g.h * g.w..][..g.h * g.w];
                row[..y0 * g.ow].fill(0.0);
                row[y1 * g.ow..].fill(0.0);
                for oy in y0..y1 {
                    let dst = &mut row[oy * g.ow..][..g.ow];
                    dst[..x0].fill(0.0);
                    dst[x1..].fill(0.0);
                    if x0 == x1 {
                        continue;
                    }
                    let iy = oy * s + ky - g.pad;
                    let start = iy * g.w + x0 * s + kx - g.pad;
                    let dst = &mut dst[x0..x1];
                    if s == 1 {
                        dst.copy_from_slice(&plane[start..][..x1 - x0]);
                    } else {
                        for (d, v) in dst.iter_mut().zip(plane[start..].iter().step_by(s)) {
                            *d = *v;
                        }
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let p = g.out_pixels();
    let s = g.stride;
    for ky in 0..g.kh {
        let (y0, y1) = g.valid(g.oh, ky, g.h);
        for kx in 0..g.kw {
            let (x0, x1) = g.valid(g.ow, kx, g.w);
            if x0 == x1 {
                continue;
            }
            for ci in 0..g.c_in {
                let row = &col[((ky * g.kw + kx) * g.c_in + ci) * p..][..p];
                let plane = &mut dx[ci * g.h * g.w..][..g.h * g.w];
                for oy in y0..y1 {
                    let src = &row[oy * g.ow + x0..][..x1 - x0];
                    let iy = oy * s + ky - g.pad;
                    let start = iy * g.w + x0 * s + kx - g.pad;
                    if s == 1 {
                        for (d, v) in plane[start..][..x1 - x0].iter_mut().zip(src) {
                            *d += v;
                        }
                    } else {
                        for (d, v) in plane[start..].iter_mut().step_by(s).zip(src) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(
    x: &[f64],
    weight: &[f64],
    bias: &[f64],
    g: &ConvGeom,
    batch: usize,
) -> Vec<f64> {
    let (kr, p) = (g.k_rows(), g.out_pixels());
    let in_len = g.c_in * g.h * g.w;
    let out_len = g.c_out * p;
    let mut out = vec![0.0; batch * out_len];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![0.0; kr * p] };
    for s in 0..batch {
        let xs = &x[s * in_len..][..in_len];
        let cols: &[f64] = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, g, &mut col);
            &col
        };
        let os = &mut out[s * out_len..][..out_len];
        for (co, row) in os.chunks_mut(p).enumerate() {
            row.fill(bias[co]);
        }
        // out (c_out × p) += Wᵀ (c_out × kr) · col (kr × p)
        gemm(g.c_out, kr, p, weight, (1, g.c_out), cols, (p, 1), 1.0, os, (p, 1));
    }
    out
}

pub(crate) struct ConvGrads {
    pub dx: Option<Vec<f64>>,
    pub dw: Option<Vec<f64>>,
    pub db: Option<Vec<f64>>,
}

pub(crate) fn conv2d_backward(
    x: &[f64],
    weight: &[f64],
    dout: &[f64],
    g: &ConvGeom,
    batch: usize,
    (want_dx, want_dw, want_db): (bool, bool, bool),
) -> ConvGrads {
    let (kr, p) = (g.k_rows(), g.out_pixels());
    let in_len = g.c_in * g.h * g.w;
    let out_len = g.c_out * p;
    let mut dx = want_dx.then(|| vec![0.0; batch * in_len]);
    let mut dw = want_dw.then(|| vec![0.0; weight.len()]);
    let mut db = want_db.then(|| vec![0.0; g.c_out]);
    let mut col = vec![0.0; if g.is_pointwise() { 0 } else { kr * p }];
    let mut dcol = vec![0.0; if want_dx && !g.is_pointwise() { kr * p } else { 0 }];
    for s in 0..batch {
        let ds = &dout[s * out_len..][..out_len];
        if let Some(db) = &mut db {
            for (co, row) in ds.chunks(p).enumerate() {
                db[co] += row.iter().sum::<f64>();
            }
        }
        let xs = &x[s * in_len..][..in_len];
        if let Some(dw) = &mut dw {
            let cols: &[f64] = if g.is_pointwise() {
                xs
            } else {
                im2col(xs, g, &mut col);
                &col
            };
            // dW (kr × c_out) += col (kr × p) · doutᵀ (p × c_out)
            gemm(kr, p, g.c_out, cols, (p, 1), ds, (1, p), 1.0, dw, (g.c_out, 1));
        }
        if let Some(dx) = &mut dx {
            let dxs = &mut dx[s * in_len..][..in_len];
            if g.is_pointwise() {
                gemm(kr, g.c_out, p, weight, (g.c_out, 1), ds, (p, 1), 1.0, dxs, (p, 1));
            } else {
                // dcol (kr × p) = W (kr × c_out) · dout (c_out × p)
                gemm(kr, g.c_out, p, weight, (g.c_out, 1), ds, (p, 1), 0.0, &mut dcol, (p, 1));
                col2im(&dcol, g, dxs);
            }
        }
    }
    ConvGrads { dx, dw, db }
}

/// Channel covariance `(1/M)·F̄·F̄ᵀ` of one `C×M` feature map, where `F̄` is
/// the map with each channel's spatial mean removed.
pub fn channel_covariance(features: &[f64], channels: usize, pixels: usize) -> Vec<f64> {
    let centered = center_rows(features, channels, pixels);
    let mut cov = vec![0.0; channels * channels];
    gemm(
        channels,
        pixels,
        channels,
        &centered,
        (pixels, 1),
        &centered,
        (1, pixels),
        0.0,
        &mut cov,
        (channels, 1),
    );
    let inv = 1.0 / pixels as f64;
    cov.iter_mut().for_each(|v| *v *= inv);
    cov
}

pub(crate) fn center_rows(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = x[..rows * cols].to_vec();
    for row in out.chunks_mut(cols) {
        let mean = row.iter().sum::<f64>() / cols as f64;
        row.iter_mut().for_each(|v| *v -= mean);
    }
    out
}
