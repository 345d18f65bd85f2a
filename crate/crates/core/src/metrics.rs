//! Image-quality metrics and the elementwise losses built on them.
//!
//! SSIM uses the common reference setup: an 11x11 Gaussian window with
//! sigma 1.5, `C1 = (0.01 L)^2`, `C2 = (0.03 L)^2` for dynamic range `L = 1`,
//! evaluated over "valid" window positions only and averaged over positions,
//! channels and batch items.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape4, Tensor4};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Normalized 1D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable valid-mode filtering of one `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = taps.iter().zip(&row[x..x + k]).map(|(&t, &v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, &t)| t * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Transpose of [`filter_valid`].
fn filter_valid_transpose(g: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..oh {
        for (i, &t) in taps.iter().enumerate() {
            for x in 0..ow {
                tmp[(y + i) * ow + x] += t * g[y * ow + x];
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..ow {
            let v = tmp[y * ow + x];
            for (i, &t) in taps.iter().enumerate() {
                out[y * w + x + i] += t * v;
            }
        }
    }
    out
}

fn check_pair<T: Scalar>(op: &'static str, a: &Tensor4<T>, b: &Tensor4<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::mismatch(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn check_window(s: Shape4) -> Result<()> {
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(Error::config(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            s.h, s.w
        )));
    }
    Ok(())
}

/// SSIM value and, optionally, its gradients with respect to both inputs.
pub struct SsimOutput<T: Scalar> {
    pub value: T,
    pub grad_a: Option<Tensor4<T>>,
    pub grad_b: Option<Tensor4<T>>,
}

pub fn ssim_with_grad<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>, need_grad: bool) -> Result<SsimOutput<T>> {
    check_pair("ssim", a, b)?;
    let s = a.shape();
    check_window(s)?;
    // statistics are accumulated in f64; E[x^2] - mu^2 cancels badly in f32
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let (c1, c2) = (SSIM_C1, SSIM_C2);
    let two = 2.0f64;
    let (oh, ow) = (s.h - SSIM_WINDOW + 1, s.w - SSIM_WINDOW + 1);
    let count = (s.n * s.c * oh * ow) as f64;

    let mut total = 0.0f64;
    let mut grad_a = need_grad.then(|| Vec::with_capacity(s.numel()));
    let mut grad_b = need_grad.then(|| Vec::with_capacity(s.numel()));
    for (pa, pb) in a.data().chunks_exact(s.plane()).zip(b.data().chunks_exact(s.plane())) {
        let pa: Vec<f64> = pa.iter().map(|v| v.as_f64()).collect();
        let pb: Vec<f64> = pb.iter().map(|v| v.as_f64()).collect();
        let sq_a: Vec<f64> = pa.iter().map(|&v| v * v).collect();
        let sq_b: Vec<f64> = pb.iter().map(|&v| v * v).collect();
        let prod: Vec<f64> = pa.iter().zip(&pb).map(|(&x, &y)| x * y).collect();
        let mu_a = filter_valid(&pa, s.h, s.w, &taps);
        let mu_b = filter_valid(&pb, s.h, s.w, &taps);
        let e_aa = filter_valid(&sq_a, s.h, s.w, &taps);
        let e_bb = filter_valid(&sq_b, s.h, s.w, &taps);
        let e_ab = filter_valid(&prod, s.h, s.w, &taps);

        let m = oh * ow;
        let (mut g_mu_a, mut g_mu_b, mut g_aa, mut g_bb, mut g_ab) = if need_grad {
            (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m])
        } else {
            Default::default()
        };
        for i in 0..m {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = e_aa[i] - ma * ma;
            let var_b = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            let n1 = two * ma * mb + c1;
            let n2 = two * cov + c2;
            let d1 = ma * ma + mb * mb + c1;
            let d2 = var_a + var_b + c2;
            let sv = n1 * n2 / (d1 * d2);
            total += sv;
            if need_grad {
                let inv = 1.0 / count;
                // Partials w.r.t. the filtered moments; the second moments enter
                // through var = E[x^2] - mu^2 and cov = E[xy] - mu_a mu_b.
                let d_var = -sv / d2;
                let d_cov = two * n1 / (d1 * d2);
                let d_mu_a = two * mb * n2 / (d1 * d2) - sv * two * ma / d1;
                let d_mu_b = two * ma * n2 / (d1 * d2) - sv * two * mb / d1;
                g_aa[i] = d_var * inv;
                g_bb[i] = d_var * inv;
                g_ab[i] = d_cov * inv;
                g_mu_a[i] = (d_mu_a - two * ma * d_var - mb * d_cov) * inv;
                g_mu_b[i] = (d_mu_b - two * mb * d_var - ma * d_cov) * inv;
            }
        }
        if let (Some(ga), Some(gb)) = (grad_a.as_mut(), grad_b.as_mut()) {
            let t_mu_a = filter_valid_transpose(&g_mu_a, s.h, s.w, &taps);
            let t_mu_b = filter_valid_transpose(&g_mu_b, s.h, s.w, &taps);
            let t_aa = filter_valid_transpose(&g_aa, s.h, s.w, &taps);
            let t_bb = filter_valid_transpose(&g_bb, s.h, s.w, &taps);
            let t_ab = filter_valid_transpose(&g_ab, s.h, s.w, &taps);
            for p in 0..s.plane() {
                ga.push(T::of(t_mu_a[p] + two * pa[p] * t_aa[p] + pb[p] * t_ab[p]));
                gb.push(T::of(t_mu_b[p] + two * pb[p] * t_bb[p] + pa[p] * t_ab[p]));
            }
        }
    }
    Ok(SsimOutput {
        value: T::of(total / count),
        grad_a: grad_a.map(|g| Tensor4::from_vec(s, g)).transpose()?,
        grad_b: grad_b.map(|g| Tensor4::from_vec(s, g)).transpose()?,
    })
}

/// Mean SSIM over positions, channels and batch items.
pub fn ssim<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<T> {
    Ok(ssim_with_grad(a, b, false)?.value)
}

pub fn mse<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<f64> {
    check_pair("mse", a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum();
    Ok(sum / a.numel() as f64)
}

pub fn mae<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<f64> {
    check_pair("l1", a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x.as_f64() - y.as_f64()).abs())
        .sum();
    Ok(sum / a.numel() as f64)
}

/// PSNR in dB for unit dynamic range; identical inputs give `f64::INFINITY`.
pub fn psnr<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Formats a PSNR value, writing the identical-input sentinel as `inf`.
pub fn format_psnr(db: f64) -> String {
    if db.is_infinite() {
        "inf".to_string()
    } else {
        format!("{db:.4}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use crate::tensor::Tensor;

    fn random(shape: Shape4, seed: u64) -> Tensor4<f64> {
        let mut rng = SeededRng::new(seed);
        Tensor4::from_fn(shape, |_, _, _, _| rng.uniform())
    }

    #[test]
    fn window_taps_are_normalized_and_symmetric() {
        let t = gaussian_taps(11, 1.5);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..5 {
            assert_eq!(t[i], t[10 - i]);
        }
    }

    #[test]
    fn constant_patch_closed_form() {
        let a = Tensor::full(Shape4::new(1, 1, 13, 13), 0.5);
        let b = Tensor::full(Shape4::new(1, 1, 13, 13), 0.6);
        let want = (2.0 * 0.5 * 0.6 + 1e-4) / (0.25 + 0.36 + 1e-4);
        let got = ssim(&a, &b).unwrap() as f64;
        assert!((got - want).abs() < 1e-5, "{got} vs {want}");
        assert!((want - 0.9836).abs() < 1e-3);
    }

    #[test]
    fn self_similarity_and_symmetry() {
        let a = random(Shape4::new(2, 3, 16, 14), 1);
        let b = random(Shape4::new(2, 3, 16, 14), 2);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
    }

    #[test]
    fn anti_correlated_checkerboard_goes_negative() {
        let a = Tensor::from_fn(Shape4::new(1, 1, 16, 16), |_, _, y, x| ((y + x) % 2) as f32);
        let b = a.map(|v| 1.0 - v);
        let s = ssim(&a, &b).unwrap();
        assert!((-1.0..0.0).contains(&s));
        assert!((1.0 - s) <= 2.0);
    }

    #[test]
    fn small_images_are_rejected() {
        let a = Tensor::zeros(Shape4::new(1, 1, 10, 20));
        assert!(matches!(ssim(&a, &a), Err(Error::Config(_))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let a = random(Shape4::new(1, 2, 13, 12), 3);
        let b = random(Shape4::new(1, 2, 13, 12), 4);
        let out = ssim_with_grad(&a, &b, true).unwrap();
        let (ga, gb) = (out.grad_a.unwrap(), out.grad_b.unwrap());
        let h = 1e-6;
        for i in [0, 17, 100, 155, 311] {
            let mut p = a.clone();
            p.data_mut()[i] += h;
            let mut m = a.clone();
            m.data_mut()[i] -= h;
            let fd = (ssim(&p, &b).unwrap() - ssim(&m, &b).unwrap()) / (2.0 * h);
            assert!((fd - ga.data()[i]).abs() < 1e-7, "a[{i}] {fd} vs {}", ga.data()[i]);
            let mut p = b.clone();
            p.data_mut()[i] += h;
            let mut m = b.clone();
            m.data_mut()[i] -= h;
            let fd = (ssim(&a, &p).unwrap() - ssim(&a, &m).unwrap()) / (2.0 * h);
            assert!((fd - gb.data()[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn psnr_cases() {
        let a = Tensor::full(Shape4::new(1, 3, 4, 4), 0.5);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-4);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!(psnr(&a, &a).unwrap().is_infinite());
        assert_eq!(format_psnr(f64::INFINITY), "inf");
        assert!(psnr_from_mse(0.01) > psnr_from_mse(0.02));
    }
}
