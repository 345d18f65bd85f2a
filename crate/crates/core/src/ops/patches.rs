//! Patch extraction (`unfold`) and its overlap-resolving inverse (`fold`).
//!
//! Column layout follows the usual im2col convention: row index
//! `(c * k + ky) * k + kx`, column index `oy * out_w + ox`.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape4, Tensor4};

/// Square patch geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGeom {
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl PatchGeom {
    pub const fn new(k: usize, stride: usize, pad: usize) -> Self {
        PatchGeom { k, stride, pad }
    }

    /// Number of patch positions along one axis of length `len`.
    pub fn positions(&self, len: usize) -> Result<usize> {
        if self.k == 0 || self.stride == 0 {
            return Err(Error::config("patch size and stride must be positive"));
        }
        if len + 2 * self.pad < self.k {
            return Err(Error::shape(
                "unfold",
                format!("extent {len} with padding {} smaller than patch {}", self.pad, self.k),
            ));
        }
        Ok((len + 2 * self.pad - self.k) / self.stride + 1)
    }

    pub fn grid(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((self.positions(h)?, self.positions(w)?))
    }
}

/// im2col of one `(c, h, w)` item into `cols` (`c*k*k` rows by `oh*ow` columns).
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col_item<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    g: PatchGeom,
    oh: usize,
    ow: usize,
    cols: &mut [T],
) {
    let k = g.k;
    let l = oh * ow;
    debug_assert_eq!(cols.len(), c * k * k * l);
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * l..][..l];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= w as isize {
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

/// Adjoint of [`im2col_item`]: scatter-adds columns back into `x` (which is
/// overwritten).
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im_item<T: Scalar>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    g: PatchGeom,
    oh: usize,
    ow: usize,
    x: &mut [T],
) {
    let k = g.k;
    let l = oh * ow;
    x.fill(T::zero());
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * l..][..l];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Extracts all patches: `(n, c, h, w) -> (n, c*k*k, 1, L)`.
pub fn unfold<T: Scalar>(x: &Tensor4<T>, g: PatchGeom) -> Result<Tensor4<T>> {
    let s = x.shape();
    let (oh, ow) = g.grid(s.h, s.w)?;
    let rows = s.c * g.k * g.k;
    let l = oh * ow;
    let mut out = vec![T::zero(); s.n * rows * l];
    for n in 0..s.n {
        im2col_item(x.item_slice(n), s.c, s.h, s.w, g, oh, ow, &mut out[n * rows * l..(n + 1) * rows * l]);
    }
    Tensor4::from_vec(Shape4::new(s.n, rows, 1, l), out)
}

fn check_cols<T: Scalar>(cols: &Tensor4<T>, out: Shape4, g: PatchGeom) -> Result<(usize, usize)> {
    let (oh, ow) = g.grid(out.h, out.w)?;
    let want = Shape4::new(out.n, out.c * g.k * g.k, 1, oh * ow);
    cols.expect_shape("fold", want)?;
    Ok((oh, ow))
}

/// Scatter-add of patch columns into an image of shape `out` (the adjoint of [`unfold`]).
pub fn fold_sum<T: Scalar>(cols: &Tensor4<T>, out: Shape4, g: PatchGeom) -> Result<Tensor4<T>> {
    let (oh, ow) = check_cols(cols, out, g)?;
    let mut img = Tensor4::zeros(out);
    let item = out.item();
    let csz = cols.shape().item();
    for n in 0..out.n {
        col2im_item(
            cols.item_slice(n),
            out.c,
            out.h,
            out.w,
            g,
            oh,
            ow,
            &mut img.data_mut()[n * item..(n + 1) * item],
        );
        debug_assert_eq!(csz, out.c * g.k * g.k * oh * ow);
    }
    Ok(img)
}

/// Number of patch positions covering each pixel of an `h x w` plane.
pub fn coverage(h: usize, w: usize, g: PatchGeom) -> Result<Vec<u32>> {
    let (oh, ow) = g.grid(h, w)?;
    let mut count = vec![0u32; h * w];
    for oy in 0..oh {
        for ox in 0..ow {
            for ky in 0..g.k {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..g.k {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix >= 0 && ix < w as isize {
                        count[iy as usize * w + ix as usize] += 1;
                    }
                }
            }
        }
    }
    Ok(count)
}

/// Fold with overlaps resolved by averaging: each pixel is divided by its
/// coverage count. Uncovered pixels are zero.
pub fn fold_avg<T: Scalar>(cols: &Tensor4<T>, out: Shape4, g: PatchGeom) -> Result<Tensor4<T>> {
    let mut img = fold_sum(cols, out, g)?;
    let count = coverage(out.h, out.w, g)?;
    for plane in img.data_mut().chunks_exact_mut(out.plane()) {
        for (v, &c) in plane.iter_mut().zip(&count) {
            if c > 0 {
                *v = *v / T::of(c as f64);
            }
        }
    }
    Ok(img)
}
