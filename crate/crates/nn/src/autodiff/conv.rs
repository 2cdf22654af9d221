//! Strided, padded, dilated 2-d convolution via im2col and GEMM.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tape::Function;
use super::tensor::Tensor;
use crate::error::{shape_err, Result};

/// Row-major matrix view: (data, rows, cols, transposed).
struct Mat<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    transposed: bool,
}

impl<'a> Mat<'a> {
    fn n(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Mat { data, rows, cols, transposed: false }
    }
    /// Transpose of a stored `cols × rows` row-major matrix.
    fn t(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Mat { data, rows, cols, transposed: true }
    }
    fn strides(&self) -> (isize, isize) {
        if self.transposed { (1, self.rows as isize) } else { (self.cols as isize, 1) }
    }
}

/// c ← a·b + beta·c, with c row-major `a.rows × b.cols`.
fn gemm(a: Mat<'_>, b: Mat<'_>, c: &mut [f64], beta: f64) {
    debug_assert_eq!(a.cols, b.rows);
    debug_assert_eq!(c.len(), a.rows * b.cols);
    debug_assert!(a.data.len() >= a.rows * a.cols && b.data.len() >= b.rows * b.cols);
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the debug assertions above document the extents; every caller
    // passes buffers sized exactly for the stated dimensions.
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.cols,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            b.cols as isize,
            1,
        );
    }
}

pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    gemm(Mat::n(a, m, k), Mat::n(b, k, n), out, 0.0);
}

pub(crate) fn matmul_at_b(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    gemm(Mat::t(a, m, k), Mat::n(b, k, n), out, 0.0);
}

pub(crate) fn matmul_a_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    gemm(Mat::n(a, m, k), Mat::t(b, k, n), out, 0.0);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dParams {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Conv2dParams {
    /// Stride 1 with padding that keeps the spatial size of a k×k kernel.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Conv2dParams { stride: 1, padding: dilation * (kernel - 1) / 2, dilation }
    }

    pub fn output_size(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        (padded >= span && self.stride > 0).then(|| (padded - span) / self.stride + 1)
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    p: Conv2dParams,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }
    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Input coordinate for output position `o` and kernel tap `k`.
    #[inline]
    fn src(&self, o: usize, k: usize, size: usize) -> Option<usize> {
        let pos = (o * self.p.stride + k * self.p.dilation) as isize - self.p.padding as isize;
        (pos >= 0 && (pos as usize) < size).then_some(pos as usize)
    }

    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let mut col = vec![0.0; self.rows() * self.cols()];
        for ci in 0..self.c {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    let dst = &mut col[row * self.cols()..(row + 1) * self.cols()];
                    for oy in 0..self.oh {
                        let Some(iy) = self.src(oy, ky, self.h) else { continue };
                        for ox in 0..self.ow {
                            if let Some(ix) = self.src(ox, kx, self.w) {
                                dst[oy * self.ow + ox] = plane[iy * self.w + ix];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, col: &[f64], dx: &mut [f64]) {
        for ci in 0..self.c {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    let src = &col[row * self.cols()..(row + 1) * self.cols()];
                    for oy in 0..self.oh {
                        let Some(iy) = self.src(oy, ky, self.h) else { continue };
                        for ox in 0..self.ow {
                            if let Some(ix) = self.src(ox, kx, self.w) {
                                plane[iy * self.w + ix] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Inputs: x [B, C, H, W], weight [O, C, kh, kw], bias [O].
pub struct Conv2d {
    pub params: Conv2dParams,
    geometry: Option<Geometry>,
}

impl Conv2d {
    pub fn new(params: Conv2dParams) -> Self {
        Conv2d { params, geometry: None }
    }
}

impl Function for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let [x, w, b] = inputs else { return shape_err("conv2d", "expects (input, weight, bias)") };
        let (batch, c, h, wd) = x.dims4("conv2d")?;
        let (o, wc, kh, kw) = w.dims4("conv2d")?;
        if wc != c {
            return shape_err("conv2d", format!("input has {c} channels, weight expects {wc}"));
        }
        if b.shape() != [o] {
            return shape_err("conv2d", format!("bias shape {:?}, expected [{o}]", b.shape()));
        }
        let (Some(oh), Some(ow)) = (self.params.output_size(h, kh), self.params.output_size(wd, kw)) else {
            return shape_err("conv2d", format!("{h}x{wd} input too small for {kh}x{kw} kernel with {:?}", self.params));
        };
        let g = Geometry { c, h, w: wd, kh, kw, oh, ow, p: self.params };
        self.geometry = Some(g);
        let in_size = c * h * wd;
        let out_size = o * oh * ow;
        let mut out = vec![0.0; batch * out_size];
        out.par_chunks_mut(out_size).enumerate().for_each(|(bi, y)| {
            let col = g.im2col(&x.data()[bi * in_size..(bi + 1) * in_size]);
            for (oc, chunk) in y.chunks_mut(g.cols()).enumerate() {
                chunk.fill(b.data()[oc]);
            }
            gemm(Mat::n(w.data(), o, g.rows()), Mat::n(&col, g.rows(), g.cols()), y, 1.0);
        });
        Tensor::new(vec![batch, o, oh, ow], out)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor, needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let g = self.geometry.expect("forward runs before backward");
        let (x, w) = (inputs[0], inputs[1]);
        let batch = x.shape()[0];
        let o = w.shape()[0];
        let in_size = g.c * g.h * g.w;
        let out_size = o * g.cols();
        let need_x = needs[0];
        let per_sample: Vec<(Vec<f64>, Vec<f64>, Option<Vec<f64>>)> = (0..batch)
            .into_par_iter()
            .map(|bi| {
                let gy = &grad.data()[bi * out_size..(bi + 1) * out_size];
                let col = g.im2col(&x.data()[bi * in_size..(bi + 1) * in_size]);
                let mut dw = vec![0.0; o * g.rows()];
                matmul_a_bt(gy, &col, o, g.cols(), g.rows(), &mut dw);
                let db: Vec<f64> = gy.chunks(g.cols()).map(|c| c.iter().sum()).collect();
                let dx = need_x.then(|| {
                    let mut dcol = vec![0.0; g.rows() * g.cols()];
                    matmul_at_b(w.data(), gy, g.rows(), o, g.cols(), &mut dcol);
                    let mut dx = vec![0.0; in_size];
                    g.col2im(&dcol, &mut dx);
                    dx
                });
                (dw, db, dx)
            })
            .collect();
        let mut dw = vec![0.0; o * g.rows()];
        let mut db = vec![0.0; o];
        let mut dx = need_x.then(|| Vec::with_capacity(batch * in_size));
        for (sw, sb, sx) in per_sample {
            dw.iter_mut().zip(&sw).for_each(|(a, b)| *a += b);
            db.iter_mut().zip(&sb).for_each(|(a, b)| *a += b);
            if let (Some(dx), Some(sx)) = (dx.as_mut(), sx) {
                dx.extend_from_slice(&sx);
            }
        }
        Ok(vec![
            dx.map(|d| Tensor::new(x.shape().to_vec(), d)).transpose()?,
            Some(Tensor::new(w.shape().to_vec(), dw)?),
            Some(Tensor::new(vec![o], db)?),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_sizes() {
        assert_eq!(Conv2dParams::same(3, 1).output_size(48, 3), Some(48));
        assert_eq!(Conv2dParams::same(3, 8).output_size(17, 3), Some(17));
        let down = Conv2dParams { stride: 2, padding: 1, dilation: 1 };
        assert_eq!(down.output_size(48, 4), Some(24));
        let last = Conv2dParams { stride: 1, padding: 1, dilation: 1 };
        assert_eq!(last.output_size(6, 4), Some(5));
        assert_eq!(Conv2dParams { stride: 1, padding: 0, dilation: 1 }.output_size(2, 3), None);
    }

    #[test]
    fn gemm_variants_agree_with_naive_products() {
        let a: Vec<f64> = (0..6).map(|v| v as f64).collect(); // 2×3
        let b: Vec<f64> = (0..12).map(|v| v as f64 * 0.5).collect(); // 3×4
        let mut c = vec![0.0; 8];
        matmul(&a, &b, 2, 3, 4, &mut c);
        for i in 0..2 {
            for j in 0..4 {
                let expect: f64 = (0..3).map(|k| a[i * 3 + k] * b[k * 4 + j]).sum();
                assert_eq!(c[i * 4 + j], expect);
            }
        }
        // aᵀ with a stored 3×2.
        let at: Vec<f64> = (0..6).map(|v| v as f64 + 1.0).collect();
        let mut d = vec![0.0; 8];
        matmul_at_b(&at, &b, 2, 3, 4, &mut d);
        for i in 0..2 {
            for j in 0..4 {
                let expect: f64 = (0..3).map(|k| at[k * 2 + i] * b[k * 4 + j]).sum();
                assert_eq!(d[i * 4 + j], expect);
            }
        }
    }
}
