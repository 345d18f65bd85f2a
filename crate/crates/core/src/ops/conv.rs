//! 2D convolution (cross-correlation) via im2col and GEMM.
//!
//! Batch items are processed in parallel; per-item weight gradients are
//! reduced in batch order, so results do not depend on the thread count.

use rayon::prelude::*;

use super::patches::{col2im_item, im2col_item, PatchGeom};
use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Scalar, Shape4, Tensor4};

/// Output extent along one axis.
pub fn conv_out_dim(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || len + 2 * pad < k {
        return None;
    }
    Some((len + 2 * pad - k) / stride + 1)
}

fn geometry<T: Scalar>(
    x: &Tensor4<T>,
    weight: &Tensor4<T>,
    stride: usize,
    pad: usize,
) -> Result<(PatchGeom, usize, usize)> {
    let (xs, ws) = (x.shape(), weight.shape());
    if ws.h != ws.w {
        return Err(Error::shape("conv2d", format!("non-square kernel {ws}")));
    }
    if ws.c != xs.c {
        return Err(Error::mismatch("conv2d", xs, ws));
    }
    let k = ws.h;
    let oh = conv_out_dim(xs.h, k, stride, pad);
    let ow = conv_out_dim(xs.w, k, stride, pad);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Ok((PatchGeom::new(k, stride, pad), oh, ow)),
        _ => Err(Error::mismatch("conv2d", xs, ws)),
    }
}

/// `y = conv(x, weight) + bias` with weight `(c_out, c_in, k, k)` and zero padding.
pub fn conv2d<T: Scalar>(
    x: &Tensor4<T>,
    weight: &Tensor4<T>,
    bias: Option<&[T]>,
    stride: usize,
    pad: usize,
) -> Result<Tensor4<T>> {
    let (g, oh, ow) = geometry(x, weight, stride, pad)?;
    let (xs, ws) = (x.shape(), weight.shape());
    let cout = ws.n;
    if let Some(b) = bias {
        if b.len() != cout {
            return Err(Error::shape(
                "conv2d",
                format!("bias length {} for {cout} output channels", b.len()),
            ));
        }
    }
    let kk = xs.c * g.k * g.k;
    let l = oh * ow;
    let out_shape = Shape4::new(xs.n, cout, oh, ow);
    let mut out = vec![T::zero(); out_shape.numel()];
    let direct = g.k == 1 && stride == 1 && pad == 0;
    out.par_chunks_mut(cout * l)
        .enumerate()
        .for_each(|(n, y)| {
            let item = x.item_slice(n);
            let owned;
            let cols: &[T] = if direct {
                item
            } else {
                let mut c = vec![T::zero(); kk * l];
                im2col_item(item, xs.c, xs.h, xs.w, g, oh, ow, &mut c);
                owned = c;
                &owned
            };
            gemm(
                MatRef::new(weight.data(), cout, kk),
                MatRef::new(cols, kk, l),
                T::zero(),
                y,
            );
            if let Some(b) = bias {
                for (row, &bv) in y.chunks_exact_mut(l).zip(b) {
                    row.iter_mut().for_each(|v| *v += bv);
                }
            }
        });
    Tensor4::from_vec(out_shape, out)
}

pub struct ConvGrads<T: Scalar> {
    pub dx: Option<Tensor4<T>>,
    pub dweight: Tensor4<T>,
    pub dbias: Vec<T>,
}

/// Gradients of [`conv2d`] given upstream `dy`. `dx` is skipped when `need_dx` is false.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor4<T>,
    weight: &Tensor4<T>,
    stride: usize,
    pad: usize,
    dy: &Tensor4<T>,
    need_dx: bool,
) -> Result<ConvGrads<T>> {
    let (g, oh, ow) = geometry(x, weight, stride, pad)?;
    let (xs, ws) = (x.shape(), weight.shape());
    let cout = ws.n;
    dy.expect_shape("conv2d_backward", Shape4::new(xs.n, cout, oh, ow))?;
    let kk = xs.c * g.k * g.k;
    let l = oh * ow;
    let direct = g.k == 1 && stride == 1 && pad == 0;

    // (dx, dw, db) per batch item.
    type ItemGrads<T> = (Vec<T>, Vec<T>, Option<Vec<T>>);
    let per_item: Vec<ItemGrads<T>> = (0..xs.n)
        .into_par_iter()
        .map(|n| {
            let item = x.item_slice(n);
            let dyn_ = dy.item_slice(n);
            let owned;
            let cols: &[T] = if direct {
                item
            } else {
                let mut c = vec![T::zero(); kk * l];
                im2col_item(item, xs.c, xs.h, xs.w, g, oh, ow, &mut c);
                owned = c;
                &owned
            };
            let mut dw = vec![T::zero(); cout * kk];
            gemm(
                MatRef::new(dyn_, cout, l),
                MatRef::new(cols, kk, l).t(),
                T::zero(),
                &mut dw,
            );
            let db: Vec<T> = dyn_.chunks_exact(l).map(|r| r.iter().copied().sum()).collect();
            let dx = need_dx.then(|| {
                let mut dcols = vec![T::zero(); kk * l];
                gemm(
                    MatRef::new(weight.data(), cout, kk).t(),
                    MatRef::new(dyn_, cout, l),
                    T::zero(),
                    &mut dcols,
                );
                if direct {
                    dcols
                } else {
                    let mut dxi = vec![T::zero(); xs.item()];
                    col2im_item(&dcols, xs.c, xs.h, xs.w, g, oh, ow, &mut dxi);
                    dxi
                }
            });
            (dw, db, dx)
        })
        .collect();

    let mut dweight = vec![T::zero(); ws.numel()];
    let mut dbias = vec![T::zero(); cout];
    let mut dx_data = need_dx.then(|| Vec::with_capacity(xs.numel()));
    for (dw, db, dx) in per_item {
        dweight.iter_mut().zip(&dw).for_each(|(a, &b)| *a += b);
        dbias.iter_mut().zip(&db).for_each(|(a, &b)| *a += b);
        if let (Some(acc), Some(d)) = (dx_data.as_mut(), dx) {
            acc.extend_from_slice(&d);
        }
    }
    Ok(ConvGrads {
        dx: dx_data.map(|d| Tensor4::from_vec(xs, d)).transpose()?,
        dweight: Tensor4::from_vec(ws, dweight)?,
        dbias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use crate::tensor::Tensor;

    fn random<T: Scalar>(shape: Shape4, seed: u64) -> Tensor4<T> {
        let mut rng = SeededRng::new(seed);
        Tensor4::from_fn(shape, |_, _, _, _| T::of(rng.normal()))
    }

    /// Direct nested-loop convolution used as the oracle.
    fn naive(x: &Tensor4<f64>, w: &Tensor4<f64>, b: &[f64], stride: usize, pad: usize) -> Tensor4<f64> {
        let (xs, ws) = (x.shape(), w.shape());
        let k = ws.h;
        let oh = conv_out_dim(xs.h, k, stride, pad).unwrap();
        let ow = conv_out_dim(xs.w, k, stride, pad).unwrap();
        Tensor4::from_fn(Shape4::new(xs.n, ws.n, oh, ow), |n, co, oy, ox| {
            let mut acc = b[co];
            for ci in 0..xs.c {
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < xs.h && (ix as usize) < xs.w {
                            acc += w.at(co, ci, ky, kx) * x.at(n, ci, iy as usize, ix as usize);
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn matches_naive_loop() {
        for &(stride, pad, k) in &[(1, 1, 3), (2, 0, 2), (2, 1, 3), (1, 0, 1)] {
            let x = random::<f64>(Shape4::new(2, 3, 7, 6), 1);
            let w = random::<f64>(Shape4::new(4, 3, k, k), 2);
            let b = vec![0.1, -0.2, 0.3, 0.0];
            let got = conv2d(&x, &w, Some(&b), stride, pad).unwrap();
            let want = naive(&x, &w, &b, stride, pad);
            assert_eq!(got.shape(), want.shape());
            for (a, e) in got.data().iter().zip(want.data()) {
                assert!((a - e).abs() < 1e-10, "stride {stride} pad {pad}");
            }
        }
    }

    #[test]
    fn haar_stencil_cases() {
        let w = Tensor::from_vec(Shape4::new(1, 1, 2, 2), vec![0.5, -0.5, -0.5, 0.5]).unwrap();
        let ones = Tensor::ones(Shape4::new(1, 1, 2, 2));
        assert_eq!(conv2d(&ones, &w, None, 2, 0).unwrap().data(), &[0.0]);
        let a = Tensor::from_vec(Shape4::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(conv2d(&a, &w, None, 2, 0).unwrap().data(), &[0.0]);
        let b = Tensor::from_vec(Shape4::new(1, 1, 2, 2), vec![1.0, 5.0, 2.0, 4.0]).unwrap();
        assert_eq!(conv2d(&b, &w, None, 2, 0).unwrap().data(), &[-1.0]);
    }

    #[test]
    fn identity_kernel() {
        let x = random::<f32>(Shape4::new(1, 1, 5, 5), 9);
        let w = Tensor::ones(Shape4::new(1, 1, 1, 1));
        assert_eq!(conv2d(&x, &w, None, 1, 0).unwrap(), x);
    }

    #[test]
    fn reports_both_shapes_on_mismatch() {
        let x = Tensor::zeros(Shape4::new(1, 2, 4, 4));
        let w = Tensor::zeros(Shape4::new(3, 5, 3, 3));
        let msg = conv2d(&x, &w, None, 1, 1).unwrap_err().to_string();
        assert!(msg.contains("1x2x4x4") && msg.contains("3x5x3x3"), "{msg}");
    }

    #[test]
    fn backward_is_adjoint() {
        // <conv(x), g> differentiated by the backward rule equals brute-force
        // perturbation of the f64 oracle.
        let x = random::<f64>(Shape4::new(2, 2, 5, 5), 3);
        let w = random::<f64>(Shape4::new(3, 2, 3, 3), 4);
        let b = vec![0.0; 3];
        let dy = random::<f64>(Shape4::new(2, 3, 3, 3), 5);
        let grads = conv2d_backward(&x, &w, 2, 1, &dy, true).unwrap();
        let f = |x: &Tensor4<f64>, w: &Tensor4<f64>| -> f64 {
            naive(x, w, &b, 2, 1).data().iter().zip(dy.data()).map(|(a, g)| a * g).sum()
        };
        let h = 1e-5;
        for i in [0, 7, 31, 49, 99] {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (f(&xp, &w) - f(&xm, &w)) / (2.0 * h);
            assert!((fd - grads.dx.as_ref().unwrap().data()[i]).abs() < 1e-7);
        }
        for i in [0, 5, 17, 53] {
            let mut wp = w.clone();
            wp.data_mut()[i] += h;
            let mut wm = w.clone();
            wm.data_mut()[i] -= h;
            let fd = (f(&x, &wp) - f(&x, &wm)) / (2.0 * h);
            assert!((fd - grads.dweight.data()[i]).abs() < 1e-7);
        }
        let sums: Vec<f64> = (0..3)
            .map(|co| (0..2).map(|n| dy.item_slice(n)[co * 9..(co + 1) * 9].iter().sum::<f64>()).sum())
            .collect();
        for (a, e) in grads.dbias.iter().zip(&sums) {
            assert!((a - e).abs() < 1e-12);
        }
    }
}
