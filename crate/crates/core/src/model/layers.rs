//! Dense and convolutional primitives, batched over blocks.
//!
//! Convolutions are 3x3, stride 1, zero-padded so feature maps keep the
//! block's spatial size. There is no pooling or striding anywhere. Forward
//! and backward both reduce to GEMMs via im2col.

use crate::scalar::Real;
use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};

pub(crate) const KERNEL: usize = 3;
const KK: usize = KERNEL * KERNEL;

/// `y = x . w^T + b` for row-major batches: x `(B, in)`, w `(out, in)`.
pub(crate) fn fc_forward<F: Real>(
    w: ArrayView2<F>,
    b: ArrayView1<F>,
    x: ArrayView2<F>,
) -> Array2<F> {
    let mut y = x.dot(&w.t());
    y += &b;
    y
}

/// Returns `(dx, dw, db)` for the dense layer.
pub(crate) fn fc_backward<F: Real>(
    w: ArrayView2<F>,
    x: ArrayView2<F>,
    d_out: ArrayView2<F>,
) -> (Array2<F>, Array2<F>, Array1<F>) {
    let dx = d_out.dot(&w);
    let dw = d_out.t().dot(&x);
    let db = d_out.sum_axis(Axis(0));
    (dx, dw, db)
}

pub(crate) fn relu_inplace<F: Real>(x: &mut Array2<F>) {
    x.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
}

pub(crate) fn relu_inplace3<F: Real>(x: &mut Array3<F>) {
    x.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
}

/// Masks `grad` by the ReLU derivative taken from the stored
/// post-activation values (post > 0 iff pre > 0).
pub(crate) fn relu_backward_inplace<F: Real>(grad: &mut Array2<F>, post: ArrayView2<F>) {
    grad.zip_mut_with(&post, |g, &a| {
        if a <= F::zero() {
            *g = F::zero();
        }
    });
}

pub(crate) fn relu_backward_inplace3<F: Real>(grad: &mut Array3<F>, post: ArrayView3<F>) {
    grad.zip_mut_with(&post, |g, &a| {
        if a <= F::zero() {
            *g = F::zero();
        }
    });
}

/// Expands one sample `(c_in, bs*bs)` into the column matrix
/// `(c_in*9, bs*bs)` for a zero-padded 3x3 convolution. Row order is
/// `(channel, ky, kx)`, matching the `(c_out, c_in*9)` weight layout.
fn im2col<F: Real>(x: ArrayView2<F>, bs: usize, col: &mut Array2<F>) {
    let c_in = x.nrows();
    debug_assert_eq!(x.ncols(), bs * bs);
    debug_assert_eq!(col.dim(), (c_in * KK, bs * bs));
    let xs = x.as_slice().expect("activation maps are contiguous");
    let cols = col.as_slice_mut().expect("col buffer is contiguous");
    let npix = bs * bs;

    for c in 0..c_in {
        let plane = &xs[c * npix..(c + 1) * npix];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut cols[(c * KK + ky * KERNEL + kx) * npix..][..npix];
                for y in 0..bs {
                    let dst = &mut row[y * bs..y * bs + bs];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= bs as isize {
                        dst.fill(F::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * bs..sy as usize * bs + bs];
                    match kx {
                        0 => {
                            dst[0] = F::zero();
                            dst[1..].copy_from_slice(&src[..bs - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        2 => {
                            dst[..bs - 1].copy_from_slice(&src[1..]);
                            dst[bs - 1] = F::zero();
                        }
                        _ => unreachable!(),
                    }
                }
            }
        }
    }
}

/// Scatter-add inverse of [`im2col`]: accumulates column-space gradients
/// back onto the input layout.
fn col2im_add<F: Real>(col: ArrayView2<F>, bs: usize, dx: &mut [F]) {
    let npix = bs * bs;
    let c_in = col.nrows() / KK;
    let cols = col.as_slice().expect("col buffer is contiguous");

    for c in 0..c_in {
        let plane = &mut dx[c * npix..(c + 1) * npix];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &cols[(c * KK + ky * KERNEL + kx) * npix..][..npix];
                for y in 0..bs {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= bs as isize {
                        continue;
                    }
                    let src = &row[y * bs..y * bs + bs];
                    let dst = &mut plane[sy as usize * bs..sy as usize * bs + bs];
                    match kx {
                        0 => {
                            for i in 1..bs {
                                dst[i - 1] = dst[i - 1] + src[i];
                            }
                        }
                        1 => {
                            for i in 0..bs {
                                dst[i] = dst[i] + src[i];
                            }
                        }
                        2 => {
                            for i in 0..bs - 1 {
                                dst[i + 1] = dst[i + 1] + src[i];
                            }
                        }
                        _ => unreachable!(),
                    }
                }
            }
        }
    }
}

/// Batched size-preserving 3x3 convolution.
/// `x` is `(B, c_in, bs*bs)`, `w` is `(c_out, c_in*9)`, output
/// `(B, c_out, bs*bs)`.
pub(crate) fn conv3x3_forward<F: Real>(
    w: ArrayView2<F>,
    b: ArrayView1<F>,
    x: ArrayView3<F>,
    bs: usize,
) -> Array3<F> {
    let (batch, c_in, npix) = x.dim();
    let c_out = w.nrows();
    debug_assert_eq!(w.ncols(), c_in * KK);
    let mut out = Array3::<F>::zeros((batch, c_out, npix));
    let mut col = Array2::<F>::zeros((c_in * KK, npix));
    for s in 0..batch {
        im2col(x.index_axis(Axis(0), s), bs, &mut col);
        let mut y = w.dot(&col);
        for (mut row, &bias) in y.axis_iter_mut(Axis(0)).zip(b.iter()) {
            row += bias;
        }
        out.index_axis_mut(Axis(0), s).assign(&y);
    }
    out
}

/// Returns `(dx, dw, db)`. Weight gradients accumulate over the batch in
/// sample order, keeping results independent of scheduling.
pub(crate) fn conv3x3_backward<F: Real>(
    w: ArrayView2<F>,
    x: ArrayView3<F>,
    d_out: ArrayView3<F>,
    bs: usize,
) -> (Array3<F>, Array2<F>, Array1<F>) {
    let (batch, c_in, npix) = x.dim();
    let c_out = w.nrows();
    let mut dx = Array3::<F>::zeros((batch, c_in, npix));
    let mut dw = Array2::<F>::zeros((c_out, c_in * KK));
    let mut db = Array1::<F>::zeros(c_out);
    let mut col = Array2::<F>::zeros((c_in * KK, npix));
    let wt = w.t();

    for s in 0..batch {
        let dy = d_out.index_axis(Axis(0), s);
        im2col(x.index_axis(Axis(0), s), bs, &mut col);
        dw += &dy.dot(&col.t());
        db += &dy.sum_axis(Axis(1));
        let dcol = wt.dot(&dy);
        let mut dxs = dx.index_axis_mut(Axis(0), s);
        col2im_add(
            dcol.view(),
            bs,
            dxs.as_slice_mut().expect("dx is contiguous"),
        );
    }
    (dx, dw, db)
}
