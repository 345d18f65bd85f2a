//! Separable bicubic resampling with the Catmull-Rom kernel (`a = -0.5`).
//!
//! Output pixel centers map to input coordinates with half-pixel alignment,
//! `src = (dst + 0.5) / scale - 0.5`. When shrinking, the kernel is stretched
//! by `1 / scale` (area-aware antialiasing). Taps outside the image clamp to the
//! border and the weights of every output sample are normalized to sum to one.
//! The map is linear, so the gradient rule is its transpose.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape4, Tensor4};

const A: f64 = -0.5;

/// Cubic convolution kernel.
pub fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Sparse interpolation weights for one axis.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisWeights {
    pub in_len: usize,
    /// `taps[o]` lists `(input index, weight)` contributions to output `o`.
    pub taps: Vec<Vec<(usize, f64)>>,
}

impl AxisWeights {
    pub fn new(in_len: usize, out_len: usize) -> Self {
        let scale = out_len as f64 / in_len as f64;
        let stretch = if scale < 1.0 { 1.0 / scale } else { 1.0 };
        let support = 2.0 * stretch;
        let taps = (0..out_len)
            .map(|o| {
                let center = (o as f64 + 0.5) / scale - 0.5;
                let lo = (center - support).floor() as isize;
                let hi = (center + support).ceil() as isize;
                let mut row: Vec<(usize, f64)> = Vec::new();
                let mut total = 0.0;
                for j in lo..=hi {
                    let wgt = cubic((j as f64 - center) / stretch);
                    if wgt == 0.0 {
                        continue;
                    }
                    let idx = j.clamp(0, in_len as isize - 1) as usize;
                    total += wgt;
                    match row.iter_mut().find(|(i, _)| *i == idx) {
                        Some(entry) => entry.1 += wgt,
                        None => row.push((idx, wgt)),
                    }
                }
                row.iter_mut().for_each(|(_, w)| *w /= total);
                row
            })
            .collect();
        AxisWeights { in_len, taps }
    }

    pub fn out_len(&self) -> usize {
        self.taps.len()
    }
}

/// Precomputed row and column weights for resizing `in_h x in_w` planes.
#[derive(Clone, Debug, PartialEq)]
pub struct ResizePlan {
    pub rows: AxisWeights,
    pub cols: AxisWeights,
}

impl ResizePlan {
    /// Plan for a uniform scale factor; output extents are `round(len * scale)`.
    pub fn for_scale(in_h: usize, in_w: usize, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::config(format!("resize scale must be positive, got {scale}")));
        }
        let out_h = (in_h as f64 * scale).round() as usize;
        let out_w = (in_w as f64 * scale).round() as usize;
        Self::for_size(in_h, in_w, out_h, out_w)
    }

    pub fn for_size(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Result<Self> {
        if in_h == 0 || in_w == 0 || out_h == 0 || out_w == 0 {
            return Err(Error::config(format!(
                "resize {in_h}x{in_w} -> {out_h}x{out_w} has an empty extent"
            )));
        }
        Ok(ResizePlan {
            rows: AxisWeights::new(in_h, out_h),
            cols: AxisWeights::new(in_w, out_w),
        })
    }

    pub fn out_shape(&self, input: Shape4) -> Shape4 {
        input.with_hw(self.rows.out_len(), self.cols.out_len())
    }

    fn check(&self, s: Shape4) -> Result<()> {
        if s.h != self.rows.in_len || s.w != self.cols.in_len {
            return Err(Error::shape(
                "resize",
                format!("plan for {}x{} applied to {s}", self.rows.in_len, self.cols.in_len),
            ));
        }
        Ok(())
    }

    pub fn apply<T: Scalar>(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let s = x.shape();
        self.check(s)?;
        let (oh, ow) = (self.rows.out_len(), self.cols.out_len());
        let out_shape = self.out_shape(s);
        let mut out = Vec::with_capacity(out_shape.numel());
        let mut tmp = vec![T::zero(); s.h * ow];
        for plane in x.data().chunks_exact(s.plane()) {
            for y in 0..s.h {
                let src = &plane[y * s.w..(y + 1) * s.w];
                for (ox, taps) in self.cols.taps.iter().enumerate() {
                    tmp[y * ow + ox] = taps.iter().map(|&(i, w)| src[i] * T::of(w)).sum();
                }
            }
            for taps in &self.rows.taps {
                for ox in 0..ow {
                    out.push(taps.iter().map(|&(i, w)| tmp[i * ow + ox] * T::of(w)).sum());
                }
            }
        }
        debug_assert_eq!(out.len(), s.n * s.c * oh * ow);
        Tensor4::from_vec(out_shape, out)
    }

    /// Transpose of [`ResizePlan::apply`]: maps output-space gradients back to input space.
    pub fn apply_transpose<T: Scalar>(&self, dy: &Tensor4<T>, input: Shape4) -> Result<Tensor4<T>> {
        self.check(input)?;
        dy.expect_shape("resize_backward", self.out_shape(input))?;
        let (oh, ow) = (self.rows.out_len(), self.cols.out_len());
        let mut out = vec![T::zero(); input.numel()];
        let mut tmp = vec![T::zero(); input.h * ow];
        for (g, dst) in dy.data().chunks_exact(oh * ow).zip(out.chunks_exact_mut(input.plane())) {
            tmp.fill(T::zero());
            for (oy, taps) in self.rows.taps.iter().enumerate() {
                for &(i, w) in taps {
                    let w = T::of(w);
                    for ox in 0..ow {
                        tmp[i * ow + ox] += g[oy * ow + ox] * w;
                    }
                }
            }
            for y in 0..input.h {
                let row = &mut dst[y * input.w..(y + 1) * input.w];
                for (ox, taps) in self.cols.taps.iter().enumerate() {
                    let gv = tmp[y * ow + ox];
                    for &(i, w) in taps {
                        row[i] += gv * T::of(w);
                    }
                }
            }
        }
        Tensor4::from_vec(input, out)
    }
}

/// Resizes every plane of `x` by `scale`.
pub fn resize_bicubic<T: Scalar>(x: &Tensor4<T>, scale: f64) -> Result<Tensor4<T>> {
    let s = x.shape();
    ResizePlan::for_scale(s.h, s.w, scale)?.apply(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use crate::tensor::Tensor;

    #[test]
    fn kernel_values() {
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
        assert!((cubic(0.5) - 0.5625).abs() < 1e-12);
        assert!((cubic(1.5) + 0.0625).abs() < 1e-12);
    }

    #[test]
    fn unit_scale_is_identity() {
        let mut rng = SeededRng::new(2);
        let x = Tensor::from_fn(Shape4::new(1, 3, 7, 5), |_, _, _, _| rng.uniform() as f32);
        assert_eq!(resize_bicubic(&x, 1.0).unwrap(), x);
    }

    #[test]
    fn constants_survive_every_scale() {
        let x = Tensor::full(Shape4::new(1, 2, 16, 16), 0.37);
        for s in [0.125, 0.25, 0.5, 2.0, 4.0, 8.0, 0.75] {
            let y = resize_bicubic(&x, s).unwrap();
            assert!(y.data().iter().all(|&v| (v - 0.37).abs() < 1e-6), "scale {s}");
        }
    }

    #[test]
    fn round_trip_loses_energy_of_a_cosine() {
        let w = 32;
        let x = Tensor4::<f64>::from_fn(Shape4::new(1, 1, 8, w), |_, _, _, xx| {
            (2.0 * std::f64::consts::PI * xx as f64 / 2.0).cos() * 0.25
        });
        let back = resize_bicubic(&resize_bicubic(&x, 0.5).unwrap(), 2.0).unwrap();
        assert!(back.sq_norm() / x.sq_norm() < 1.0);
    }

    #[test]
    fn rejects_non_positive_scale() {
        let x = Tensor::zeros(Shape4::new(1, 1, 4, 4));
        assert!(matches!(resize_bicubic(&x, 0.0), Err(Error::Config(_))));
        assert!(matches!(resize_bicubic(&x, -2.0), Err(Error::Config(_))));
    }

    #[test]
    fn transpose_is_adjoint() {
        let mut rng = SeededRng::new(8);
        for scale in [0.5, 2.0, 0.25] {
            let x = Tensor4::<f64>::from_fn(Shape4::new(1, 2, 8, 8), |_, _, _, _| rng.normal());
            let plan = ResizePlan::for_scale(8, 8, scale).unwrap();
            let y = plan.apply(&x).unwrap();
            let g = Tensor4::<f64>::from_fn(y.shape(), |_, _, _, _| rng.normal());
            let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
            let gt = plan.apply_transpose(&g, x.shape()).unwrap();
            let rhs: f64 = x.data().iter().zip(gt.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10, "scale {scale}");
        }
    }
}
