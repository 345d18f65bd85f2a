//! Single-level 2D Haar wavelet transform.
//!
//! Only the diagonal (HH) subband feeds the network; the full four-band
//! analysis/synthesis pair exists so the transform can be verified.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape4, Tensor4};

/// The diagonal detail stencil, row-major over a 2x2 block.
pub const HH_STENCIL: [f64; 4] = [0.5, -0.5, -0.5, 0.5];

/// The four orthonormal Haar stencils `(LL, LH, HL, HH)` over
/// `[x(2i,2j), x(2i,2j+1), x(2i+1,2j), x(2i+1,2j+1)]`.
///
/// LH responds to horizontal variation (differences along a row), HL to
/// vertical variation.
pub const STENCILS: [[f64; 4]; 4] = [
    [0.5, 0.5, 0.5, 0.5],
    [0.5, -0.5, 0.5, -0.5],
    [0.5, 0.5, -0.5, -0.5],
    HH_STENCIL,
];

#[derive(Clone, Debug, PartialEq)]
pub struct Subbands<T: Scalar = f32> {
    pub ll: Tensor4<T>,
    pub lh: Tensor4<T>,
    pub hl: Tensor4<T>,
    pub hh: Tensor4<T>,
}

fn half_shape(op: &'static str, s: Shape4) -> Result<Shape4> {
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::shape(
            op,
            format!("spatial size {}x{} must be even; crop the input by one row/column first", s.h, s.w),
        ));
    }
    Ok(s.with_hw(s.h / 2, s.w / 2))
}

/// Applies a 2x2 stride-2 stencil to every channel.
pub fn apply_stencil<T: Scalar>(x: &Tensor4<T>, stencil: [T; 4]) -> Result<Tensor4<T>> {
    let s = x.shape();
    let out = half_shape("dwt_hh", s)?;
    let mut data = Vec::with_capacity(out.numel());
    for plane in x.data().chunks_exact(s.plane()) {
        for i in 0..out.h {
            let r0 = &plane[2 * i * s.w..];
            let r1 = &plane[(2 * i + 1) * s.w..];
            for j in 0..out.w {
                data.push(
                    stencil[0] * r0[2 * j]
                        + stencil[1] * r0[2 * j + 1]
                        + stencil[2] * r1[2 * j]
                        + stencil[3] * r1[2 * j + 1],
                );
            }
        }
    }
    Tensor4::from_vec(out, data)
}

/// Transpose of [`apply_stencil`]: spreads each coefficient back over its 2x2 block.
pub fn apply_stencil_transpose<T: Scalar>(
    dy: &Tensor4<T>,
    input: Shape4,
    stencil: [T; 4],
) -> Result<Tensor4<T>> {
    let half = half_shape("dwt_hh_backward", input)?;
    dy.expect_shape("dwt_hh_backward", half)?;
    let mut out = Tensor4::zeros(input);
    let (w, plane) = (input.w, input.plane());
    for (g, dst) in dy.data().chunks_exact(half.plane()).zip(out.data_mut().chunks_exact_mut(plane)) {
        for i in 0..half.h {
            for j in 0..half.w {
                let v = g[i * half.w + j];
                dst[2 * i * w + 2 * j] = stencil[0] * v;
                dst[2 * i * w + 2 * j + 1] = stencil[1] * v;
                dst[(2 * i + 1) * w + 2 * j] = stencil[2] * v;
                dst[(2 * i + 1) * w + 2 * j + 1] = stencil[3] * v;
            }
        }
    }
    Ok(out)
}

pub fn hh_stencil<T: Scalar>() -> [T; 4] {
    HH_STENCIL.map(T::of)
}

/// Diagonal high-frequency subband, `(n, c, h, w) -> (n, c, h/2, w/2)`.
pub fn dwt_hh<T: Scalar>(x: &Tensor4<T>) -> Result<Tensor4<T>> {
    apply_stencil(x, hh_stencil())
}

/// Full single-level analysis.
pub fn dwt_full<T: Scalar>(x: &Tensor4<T>) -> Result<Subbands<T>> {
    let [ll, lh, hl, hh] = STENCILS.map(|s| apply_stencil(x, s.map(T::of)));
    Ok(Subbands {
        ll: ll?,
        lh: lh?,
        hl: hl?,
        hh: hh?,
    })
}

/// Synthesis; the stencils are orthonormal so the inverse is the transpose.
pub fn idwt_full<T: Scalar>(s: &Subbands<T>) -> Result<Tensor4<T>> {
    let half = s.ll.shape();
    for band in [&s.lh, &s.hl, &s.hh] {
        band.expect_shape("idwt_full", half)?;
    }
    let full = half.with_hw(half.h * 2, half.w * 2);
    let mut out = Tensor4::zeros(full);
    for (band, stencil) in [&s.ll, &s.lh, &s.hl, &s.hh].into_iter().zip(STENCILS) {
        out.add_assign(&apply_stencil_transpose(band, full, stencil.map(T::of))?)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use crate::tensor::Tensor;

    fn tiled(block: [f32; 4], h: usize, w: usize) -> Tensor {
        Tensor::from_fn(Shape4::new(1, 2, h, w), |_, _, y, x| block[(y % 2) * 2 + x % 2])
    }

    #[test]
    fn hand_evaluated_blocks() {
        assert!(dwt_hh(&tiled([1.0, 2.0, 3.0, 4.0], 4, 6)).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(dwt_hh(&tiled([4.0, 1.0, 1.0, 4.0], 4, 6)).unwrap().data().iter().all(|&v| v == 3.0));
        let checker = Tensor::from_fn(Shape4::new(1, 1, 6, 6), |_, _, y, x| if (y + x) % 2 == 0 { 1.0 } else { -1.0 });
        assert!(dwt_hh(&checker).unwrap().data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn constant_and_row_or_column_constant_images_vanish() {
        assert!(dwt_hh(&Tensor::full(Shape4::new(1, 3, 8, 8), 0.3)).unwrap().data().iter().all(|&v| v == 0.0));
        let rows = Tensor::from_fn(Shape4::new(1, 1, 4, 4), |_, _, y, _| y as f32 * 0.7);
        let cols = Tensor::from_fn(Shape4::new(1, 1, 4, 4), |_, _, _, x| x as f32 * 1.3);
        assert!(dwt_hh(&rows).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(dwt_hh(&cols).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn odd_sizes_are_rejected() {
        let err = dwt_hh(&Tensor::zeros(Shape4::new(1, 1, 5, 4))).unwrap_err();
        assert!(err.to_string().contains("crop"));
    }

    #[test]
    fn delta_has_one_half_magnitude_coefficient_per_band() {
        let mut x = Tensor::zeros(Shape4::new(1, 1, 4, 4));
        x.set(0, 0, 1, 2, 1.0);
        let s = dwt_full(&x).unwrap();
        for band in [&s.ll, &s.lh, &s.hl, &s.hh] {
            let nz: Vec<f32> = band.data().iter().copied().filter(|v| *v != 0.0).collect();
            assert_eq!(nz.len(), 1);
            assert_eq!(nz[0].abs(), 0.5);
        }
    }

    #[test]
    fn perfect_reconstruction_and_hh_agreement() {
        let mut rng = SeededRng::new(11);
        let x = Tensor::from_fn(Shape4::new(1, 3, 16, 16), |_, _, _, _| rng.uniform() as f32);
        let s = dwt_full(&x).unwrap();
        assert_eq!(s.hh, dwt_hh(&x).unwrap());
        let back = idwt_full(&s).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        let bands: f32 = [&s.ll, &s.lh, &s.hl, &s.hh].iter().map(|b| b.sq_norm()).sum();
        assert!((bands - x.sq_norm()).abs() / x.sq_norm() < 1e-4);
    }
}
