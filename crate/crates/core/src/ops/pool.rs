use crate::tensor::{Scalar, Shape4, Tensor4};

/// Global average pooling to `(n, c, 1, 1)`.
pub fn avg_pool_global<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let s = x.shape();
    let plane = s.plane();
    let inv = T::one() / T::of(plane as f64);
    let data = x
        .data()
        .chunks_exact(plane)
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor4::from_vec(Shape4::new(s.n, s.c, 1, 1), data).expect("pool shape")
}

pub fn avg_pool_global_backward<T: Scalar>(input: Shape4, dy: &Tensor4<T>) -> Tensor4<T> {
    let plane = input.plane();
    let inv = T::one() / T::of(plane as f64);
    let mut data = Vec::with_capacity(input.numel());
    for &g in dy.data() {
        data.extend(std::iter::repeat_n(g * inv, plane));
    }
    Tensor4::from_vec(input, data).expect("pool gradient shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn mean_of_block() {
        let x = Tensor::from_vec(Shape4::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(avg_pool_global(&x).data(), &[2.5]);
    }

    #[test]
    fn constant_and_linearity() {
        let c = Tensor::full(Shape4::new(2, 3, 5, 4), 0.75);
        assert!(avg_pool_global(&c).data().iter().all(|&v| (v - 0.75).abs() < 1e-7));
        let x = Tensor::from_fn(Shape4::new(1, 2, 3, 3), |_, c, y, x| (c + y * x) as f32 * 0.3);
        let a = avg_pool_global(&x.scale(-1.5));
        let b = avg_pool_global(&x).scale(-1.5);
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-6);
        }
    }
}
