use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape4, Tensor4};

/// Depth-to-space: `(n, c*r*r, h, w) -> (n, c, h*r, w*r)`, with
/// `out[n, c, y*r + i, x*r + j] = in[n, c*r*r + i*r + j, y, x]`.
pub fn pixel_shuffle<T: Scalar>(x: &Tensor4<T>, r: usize) -> Result<Tensor4<T>> {
    let s = x.shape();
    if r == 0 || !s.c.is_multiple_of(r * r) {
        return Err(Error::config(format!(
            "pixel_shuffle: {} channels not divisible by r^2 = {}",
            s.c,
            r * r
        )));
    }
    let out_shape = Shape4::new(s.n, s.c / (r * r), s.h * r, s.w * r);
    let mut out = Tensor4::zeros(out_shape);
    for n in 0..s.n {
        for ci in 0..s.c {
            let (co, sub) = (ci / (r * r), ci % (r * r));
            let (i, j) = (sub / r, sub % r);
            for y in 0..s.h {
                for xx in 0..s.w {
                    out.set(n, co, y * r + i, xx * r + j, x.at(n, ci, y, xx));
                }
            }
        }
    }
    Ok(out)
}

/// Space-to-depth, the exact inverse (and adjoint) of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Scalar>(x: &Tensor4<T>, r: usize) -> Result<Tensor4<T>> {
    let s = x.shape();
    if r == 0 || !s.h.is_multiple_of(r) || !s.w.is_multiple_of(r) {
        return Err(Error::shape(
            "pixel_unshuffle",
            format!("spatial {}x{} not divisible by {r}", s.h, s.w),
        ));
    }
    let out_shape = Shape4::new(s.n, s.c * r * r, s.h / r, s.w / r);
    let mut out = Tensor4::zeros(out_shape);
    for n in 0..out_shape.n {
        for ci in 0..out_shape.c {
            let (co, sub) = (ci / (r * r), ci % (r * r));
            let (i, j) = (sub / r, sub % r);
            for y in 0..out_shape.h {
                for xx in 0..out_shape.w {
                    out.set(n, ci, y, xx, x.at(n, co, y * r + i, xx * r + j));
                }
            }
        }
    }
    Ok(out)
}
