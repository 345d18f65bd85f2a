use crate::tensor::{Scalar, Tensor4};

pub fn relu<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of relu; the kink at zero takes the zero branch.
pub fn relu_backward<T: Scalar>(x: &Tensor4<T>, dy: &Tensor4<T>) -> Tensor4<T> {
    x.zip_map(dy, "relu_backward", |v, g| if v > T::zero() { g } else { T::zero() })
        .expect("relu gradient shape")
}

pub fn sigmoid<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| T::one() / (T::one() + (-v).exp()))
}

/// Gradient of sigmoid expressed through its output `y`.
pub fn sigmoid_backward<T: Scalar>(y: &Tensor4<T>, dy: &Tensor4<T>) -> Tensor4<T> {
    y.zip_map(dy, "sigmoid_backward", |s, g| g * s * (T::one() - s))
        .expect("sigmoid gradient shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape4, Tensor};

    #[test]
    fn scalar_cases() {
        let x = Tensor::from_vec(Shape4::new(1, 1, 1, 3), vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(sigmoid(&x).data()[1], 0.5);
        let g = relu_backward(&x, &Tensor::ones(x.shape()));
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn sigmoid_stays_open_interval_for_moderate_inputs() {
        let x = Tensor::from_fn(Shape4::new(1, 1, 1, 31), |_, _, _, i| i as f32 - 15.0);
        assert!(sigmoid(&x).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
