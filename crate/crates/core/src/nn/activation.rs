use super::Scalar;

pub fn relu_inplace<T: Scalar>(v: &mut [T]) {
    for x in v {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

/// Masks `grad` by `output > 0`, where `output` is the post-ReLU activation.
pub fn relu_backward_inplace<T: Scalar>(output: &[T], grad: &mut [T]) {
    for (g, &y) in grad.iter_mut().zip(output) {
        if y <= T::zero() {
            *g = T::zero();
        }
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    // split on sign so exp never overflows
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Derivative expressed through the forward value: σ'(x) = σ(x)(1 − σ(x)).
pub fn sigmoid_grad<T: Scalar>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() - s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_grad_at_zero_is_quarter() {
        assert_eq!(sigmoid_grad(0.0f64), 0.25);
        assert_eq!(sigmoid_grad(0.0f32), 0.25);
    }

    #[test]
    fn sigmoid_is_finite_at_extremes() {
        for x in [-1e30f32, -100.0, 0.0, 100.0, 1e30] {
            let s = sigmoid(x);
            assert!(s.is_finite() && (0.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn relu_masks_negative() {
        let mut v = [-1.0f32, 0.0, 2.0];
        relu_inplace(&mut v);
        assert_eq!(v, [0.0, 0.0, 2.0]);
        let mut g = [5.0f32, 5.0, 5.0];
        relu_backward_inplace(&v, &mut g);
        assert_eq!(g, [0.0, 0.0, 5.0]);
    }
}
