//! im2col / col2im convolution kernels.
//!
//! A batch is lowered into one column matrix of shape
//! `(C*k*k) x (N*Ho*Wo)` so that every layer costs a single gemm per pass.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::array::{Shape, Tensor};

/// Square kernel geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub const fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        ConvGeometry {
            kernel,
            stride,
            padding,
        }
    }

    /// Output extent of a convolution over `len` input pixels.
    pub fn conv_out(&self, len: usize) -> Result<usize> {
        let padded = len + 2 * self.padding;
        if self.stride == 0 || self.kernel == 0 || padded < self.kernel {
            return Err(Error::Shape(format!(
                "kernel {} does not fit padded extent {padded}",
                self.kernel
            )));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    /// Output extent of a transposed convolution over `len` input pixels.
    pub fn conv_transpose_out(&self, len: usize) -> Result<usize> {
        let full = (len.max(1) - 1) * self.stride + self.kernel;
        if len == 0 || self.stride == 0 || full < 2 * self.padding + 1 {
            return Err(Error::Shape(format!(
                "transposed kernel {} with padding {} on extent {len}",
                self.kernel, self.padding
            )));
        }
        Ok(full - 2 * self.padding)
    }
}

/// Image extent of one lowering: `channels x h x w` in, `oh x ow` out.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Lowering {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub oh: usize,
    pub ow: usize,
    pub geo: ConvGeometry,
}

impl Lowering {
    fn rows(&self) -> usize {
        self.channels * self.geo.kernel * self.geo.kernel
    }

    fn out_len(&self) -> usize {
        self.oh * self.ow
    }

    /// Offsets `(first, last_exclusive)` of output positions whose tap `kk`
    /// lands inside `0..len`.
    #[inline]
    fn valid_range(&self, kk: usize, len: usize, out_len: usize) -> (usize, usize) {
        let s = self.geo.stride as isize;
        let off = kk as isize - self.geo.padding as isize;
        // o*s + off in [0, len)
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi = ((len as isize - off) + s - 1) / s;
        let lo = lo.clamp(0, out_len as isize) as usize;
        let hi = hi.clamp(0, out_len as isize) as usize;
        (lo, hi.max(lo))
    }
}

/// Writes the columns for one image into `cols` starting at column `col0`
/// of a matrix with `ncols` columns.
pub(crate) fn im2col<T: Scalar>(
    img: &[T],
    lw: &Lowering,
    cols: &mut [T],
    ncols: usize,
    col0: usize,
) {
    let k = lw.geo.kernel;
    let s = lw.geo.stride;
    let p = lw.geo.padding;
    let (h, w, oh, ow) = (lw.h, lw.w, lw.oh, lw.ow);
    for c in 0..lw.channels {
        let plane = &img[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            let (ylo, yhi) = lw.valid_range(ki, h, oh);
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * ncols + col0..row * ncols + col0 + oh * ow];
                let (xlo, xhi) = lw.valid_range(kj, w, ow);
                for y in 0..oh {
                    let line = &mut dst[y * ow..(y + 1) * ow];
                    if y < ylo || y >= yhi {
                        line.fill(T::zero());
                        continue;
                    }
                    let iy = y * s + ki - p;
                    let src = &plane[iy * w..(iy + 1) * w];
                    line[..xlo].fill(T::zero());
                    line[xhi..].fill(T::zero());
                    if s == 1 {
                        let ix0 = xlo + kj - p;
                        line[xlo..xhi].copy_from_slice(&src[ix0..ix0 + (xhi - xlo)]);
                    } else {
                        for (x, v) in line.iter_mut().enumerate().take(xhi).skip(xlo) {
                            *v = src[x * s + kj - p];
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates columns back into one image (adjoint of [`im2col`]).
pub(crate) fn col2im<T: Scalar>(
    cols: &[T],
    lw: &Lowering,
    ncols: usize,
    col0: usize,
    img: &mut [T],
) {
    let k = lw.geo.kernel;
    let s = lw.geo.stride;
    let p = lw.geo.padding;
    let (h, w, oh, ow) = (lw.h, lw.w, lw.oh, lw.ow);
    for c in 0..lw.channels {
        let plane = &mut img[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            let (ylo, yhi) = lw.valid_range(ki, h, oh);
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * ncols + col0..row * ncols + col0 + oh * ow];
                let (xlo, xhi) = lw.valid_range(kj, w, ow);
                for y in ylo..yhi {
                    let iy = y * s + ki - p;
                    let dst = &mut plane[iy * w..(iy + 1) * w];
                    let line = &src[y * ow..(y + 1) * ow];
                    for x in xlo..xhi {
                        dst[x * s + kj - p] = dst[x * s + kj - p] + line[x];
                    }
                }
            }
        }
    }
}

/// `[N, C, L] -> [C, N*L]`
pub(crate) fn to_channel_major<T: Scalar>(data: &[T], n: usize, c: usize, l: usize) -> Vec<T> {
    let mut out = vec![T::zero(); data.len()];
    for b in 0..n {
        for ch in 0..c {
            let src = &data[(b * c + ch) * l..(b * c + ch + 1) * l];
            out[ch * n * l + b * l..ch * n * l + (b + 1) * l].copy_from_slice(src);
        }
    }
    out
}

/// `[C, N*L] -> [N, C, L]`
pub(crate) fn from_channel_major<T: Scalar>(data: &[T], n: usize, c: usize, l: usize) -> Vec<T> {
    let mut out = vec![T::zero(); data.len()];
    for b in 0..n {
        for ch in 0..c {
            let src = &data[ch * n * l + b * l..ch * n * l + (b + 1) * l];
            out[(b * c + ch) * l..(b * c + ch + 1) * l].copy_from_slice(src);
        }
    }
    out
}

fn lower_batch<T: Scalar>(x: &[T], n: usize, lw: &Lowering) -> Vec<T> {
    let l = lw.out_len();
    let ncols = n * l;
    let mut cols = vec![T::zero(); lw.rows() * ncols];
    let img = lw.channels * lw.h * lw.w;
    for b in 0..n {
        im2col(&x[b * img..(b + 1) * img], lw, &mut cols, ncols, b * l);
    }
    cols
}

fn raise_batch<T: Scalar>(cols: &[T], n: usize, lw: &Lowering) -> Vec<T> {
    let l = lw.out_len();
    let ncols = n * l;
    let img = lw.channels * lw.h * lw.w;
    let mut out = vec![T::zero(); n * img];
    for b in 0..n {
        col2im(cols, lw, ncols, b * l, &mut out[b * img..(b + 1) * img]);
    }
    out
}

fn row_major(cols: usize) -> (isize, isize) {
    (cols as isize, 1)
}

fn transposed(cols: usize) -> (isize, isize) {
    (1, cols as isize)
}

pub(crate) struct ConvShapes {
    pub lowering: Lowering,
    pub out: Shape,
}

/// Validates conv2d operands; weight is `[Co, Ci, k, k]`.
pub(crate) fn conv2d_shapes(
    x: Shape,
    w: Shape,
    bias: Option<Shape>,
    stride: usize,
    padding: usize,
) -> Result<ConvShapes> {
    if w.h != w.w {
        return Err(Error::Shape(format!("non-square kernel {w}")));
    }
    if x.c != w.c {
        return Err(Error::Shape(format!(
            "conv2d input {x} has {} channels, weight {w} expects {}",
            x.c, w.c
        )));
    }
    if let Some(b) = bias {
        if b.numel() != w.n {
            return Err(Error::Shape(format!(
                "bias {b} for {} output channels",
                w.n
            )));
        }
    }
    let geo = ConvGeometry::new(w.h, stride, padding);
    let oh = geo.conv_out(x.h)?;
    let ow = geo.conv_out(x.w)?;
    Ok(ConvShapes {
        lowering: Lowering {
            channels: x.c,
            h: x.h,
            w: x.w,
            oh,
            ow,
            geo,
        },
        out: Shape::new(x.n, w.n, oh, ow),
    })
}

/// Validates conv_transpose2d operands; weight is `[Ci, Co, k, k]`.
/// The returned lowering describes the *output* image seen as a conv input.
pub(crate) fn conv_transpose2d_shapes(
    x: Shape,
    w: Shape,
    bias: Option<Shape>,
    stride: usize,
    padding: usize,
) -> Result<ConvShapes> {
    if w.h != w.w {
        return Err(Error::Shape(format!("non-square kernel {w}")));
    }
    if x.c != w.n {
        return Err(Error::Shape(format!(
            "conv_transpose2d input {x} has {} channels, weight {w} expects {}",
            x.c, w.n
        )));
    }
    if let Some(b) = bias {
        if b.numel() != w.c {
            return Err(Error::Shape(format!(
                "bias {b} for {} output channels",
                w.c
            )));
        }
    }
    let geo = ConvGeometry::new(w.h, stride, padding);
    let oh = geo.conv_transpose_out(x.h)?;
    let ow = geo.conv_transpose_out(x.w)?;
    if geo.conv_out(oh)? != x.h || geo.conv_out(ow)? != x.w {
        return Err(Error::Shape(format!(
            "transposed geometry {geo:?} is not invertible for {x}"
        )));
    }
    Ok(ConvShapes {
        lowering: Lowering {
            channels: w.c,
            h: oh,
            w: ow,
            oh: x.h,
            ow: x.w,
            geo,
        },
        out: Shape::new(x.n, w.c, oh, ow),
    })
}

pub(crate) fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    cs: &ConvShapes,
) -> Tensor<T> {
    let n = x.shape().n;
    let co = w.shape().n;
    let lw = &cs.lowering;
    let l = lw.out_len();
    let cols = lower_batch(x.data(), n, lw);
    let ncols = n * l;
    let mut tmp = vec![T::zero(); co * ncols];
    T::gemm(
        co,
        lw.rows(),
        ncols,
        T::one(),
        w.data(),
        row_major(lw.rows()),
        &cols,
        row_major(ncols),
        T::zero(),
        &mut tmp,
        row_major(ncols),
    );
    let mut out = from_channel_major(&tmp, n, co, l);
    if let Some(b) = bias {
        add_channel_bias(&mut out, b.data(), n, co, l);
    }
    Tensor::from_vec(cs.out, out).expect("conv2d output shape")
}

/// Returns `(dx, dw, db)`; each only when requested.
#[allow(clippy::type_complexity)]
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &[T],
    cs: &ConvShapes,
    want: (bool, bool, bool),
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let n = x.shape().n;
    let co = w.shape().n;
    let lw = &cs.lowering;
    let l = lw.out_len();
    let ncols = n * l;
    let rows = lw.rows();
    let dyp = to_channel_major(dy, n, co, l);
    let dw = want.1.then(|| {
        let cols = lower_batch(x.data(), n, lw);
        let mut dw = vec![T::zero(); co * rows];
        T::gemm(
            co,
            ncols,
            rows,
            T::one(),
            &dyp,
            row_major(ncols),
            &cols,
            transposed(ncols),
            T::zero(),
            &mut dw,
            row_major(rows),
        );
        dw
    });
    let dx = want.0.then(|| {
        let mut dcols = vec![T::zero(); rows * ncols];
        T::gemm(
            rows,
            co,
            ncols,
            T::one(),
            w.data(),
            transposed(rows),
            &dyp,
            row_major(ncols),
            T::zero(),
            &mut dcols,
            row_major(ncols),
        );
        raise_batch(&dcols, n, lw)
    });
    let db = want.2.then(|| channel_sums(&dyp, co, ncols));
    (dx, dw, db)
}

pub(crate) fn conv_transpose2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    cs: &ConvShapes,
) -> Tensor<T> {
    let xs = x.shape();
    let n = xs.n;
    let ci = xs.c;
    let lw = &cs.lowering;
    let l = lw.out_len();
    let ncols = n * l;
    let rows = lw.rows();
    let xp = to_channel_major(x.data(), n, ci, l);
    let mut cols = vec![T::zero(); rows * ncols];
    T::gemm(
        rows,
        ci,
        ncols,
        T::one(),
        w.data(),
        transposed(rows),
        &xp,
        row_major(ncols),
        T::zero(),
        &mut cols,
        row_major(ncols),
    );
    let mut out = raise_batch(&cols, n, lw);
    if let Some(b) = bias {
        add_channel_bias(&mut out, b.data(), n, lw.channels, lw.h * lw.w);
    }
    Tensor::from_vec(cs.out, out).expect("conv_transpose2d output shape")
}

#[allow(clippy::type_complexity)]
pub(crate) fn conv_transpose2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &[T],
    cs: &ConvShapes,
    want: (bool, bool, bool),
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let xs = x.shape();
    let n = xs.n;
    let ci = xs.c;
    let lw = &cs.lowering;
    let l = lw.out_len();
    let ncols = n * l;
    let rows = lw.rows();
    let dcols = (want.0 || want.1).then(|| lower_batch(dy, n, lw));
    let dx = want.0.then(|| {
        let dcols = dcols.as_ref().expect("lowered gradient");
        let mut dxp = vec![T::zero(); ci * ncols];
        T::gemm(
            ci,
            rows,
            ncols,
            T::one(),
            w.data(),
            row_major(rows),
            dcols,
            row_major(ncols),
            T::zero(),
            &mut dxp,
            row_major(ncols),
        );
        from_channel_major(&dxp, n, ci, l)
    });
    let dw = want.1.then(|| {
        let dcols = dcols.as_ref().expect("lowered gradient");
        let xp = to_channel_major(x.data(), n, ci, l);
        let mut dw = vec![T::zero(); ci * rows];
        T::gemm(
            ci,
            ncols,
            rows,
            T::one(),
            &xp,
            row_major(ncols),
            dcols,
            transposed(ncols),
            T::zero(),
            &mut dw,
            row_major(rows),
        );
        dw
    });
    let db = want.2.then(|| {
        let co = lw.channels;
        let plane = lw.h * lw.w;
        let mut db = vec![T::zero(); co];
        for b in 0..n {
            for (c, acc) in db.iter_mut().enumerate() {
                let s: T = dy[(b * co + c) * plane..(b * co + c + 1) * plane]
                    .iter()
                    .copied()
                    .sum();
                *acc = *acc + s;
            }
        }
        db
    });
    (dx, dw, db)
}

fn add_channel_bias<T: Scalar>(out: &mut [T], bias: &[T], n: usize, c: usize, l: usize) {
    for b in 0..n {
        for (ch, &bv) in bias.iter().enumerate().take(c) {
            for v in &mut out[(b * c + ch) * l..(b * c + ch + 1) * l] {
                *v = *v + bv;
            }
        }
    }
}

fn channel_sums<T: Scalar>(channel_major: &[T], c: usize, len: usize) -> Vec<T> {
    (0..c)
        .map(|ch| {
            channel_major[ch * len..(ch + 1) * len]
                .iter()
                .copied()
                .sum()
        })
        .collect()
}
