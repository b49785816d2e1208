//! Layer primitives with hand-derived gradients.
//!
//! Every primitive exposes a pure forward function and a backward function
//! that accumulates parameter gradients into a [`Layer`] of the same shape.

mod activation;
mod conv;
mod dropout;
mod linear;
mod scalar;
mod tensor;

pub use activation::{relu_backward_inplace, relu_inplace, sigmoid, sigmoid_grad};
pub use conv::{
    conv2d, conv2d_backward, conv3d, conv3d_backward, conv_extent, deconv3d, deconv3d_backward,
    deconv_extent,
};
pub use dropout::{dropout, dropout_backward, Mode};
pub use linear::{fully_connected, fully_connected_backward};
pub use scalar::{gemm, Scalar};
pub use tensor::Tensor;

use rand::Rng;

/// Weight and bias of one layer. Geometry (stride) lives with the caller.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn zeros(weight_shape: &[usize], bias_len: usize) -> Self {
        Layer {
            weight: Tensor::zeros(weight_shape),
            bias: Tensor::zeros(&[bias_len]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Layer {
            weight: self.weight.zeros_like(),
            bias: self.bias.zeros_like(),
        }
    }

    /// Uniform in ±sqrt(1/fan_in), zero bias. `fan_in` is the product of
    /// all weight dimensions after the first.
    pub fn init_uniform<R: Rng + ?Sized>(weight_shape: &[usize], bias_len: usize, rng: &mut R) -> Self {
        let fan_in: usize = weight_shape[1..].iter().product();
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = weight_shape.iter().product();
        let data = (0..n).map(|_| T::lit(rng.gen_range(-bound..bound))).collect();
        Layer {
            weight: Tensor::from_vec(weight_shape, data).expect("length matches shape"),
            bias: Tensor::zeros(&[bias_len]),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        Layer {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }

    pub fn add_assign(&mut self, other: &Layer<T>) {
        self.weight.add_assign(&other.weight);
        self.bias.add_assign(&other.bias);
    }
}

#[cfg(test)]
mod gradient_tests {
    //! Central finite differences in f64 against the analytic backward passes.
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const H: f64 = 1e-4;
    const TOL: f64 = 1e-4;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_layer(w: &[usize], b: usize, rng: &mut ChaCha8Rng) -> Layer<f64> {
        Layer {
            weight: random_tensor(w, rng),
            bias: random_tensor(&[b], rng),
        }
    }

    /// Scalarizes a forward output with fixed random weights: L = Σ r ⊙ y.
    fn project(y: &[f64], r: &[f64]) -> f64 {
        y.iter().zip(r).map(|(a, b)| a * b).sum()
    }

    fn check_layer<F, B>(input: &Tensor<f64>, layer: &Layer<f64>, forward: F, backward: B)
    where
        F: Fn(&Tensor<f64>, &Layer<f64>) -> Vec<f64>,
        B: Fn(&Tensor<f64>, &Layer<f64>, &[f64], &mut Layer<f64>) -> Vec<f64>,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let y = forward(input, layer);
        let r: Vec<f64> = (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut grad = layer.zeros_like();
        let d_in = backward(input, layer, &r, &mut grad);

        for i in 0..layer.weight.len() {
            let mut lp = layer.clone();
            lp.weight.data_mut()[i] += H;
            let mut lm = layer.clone();
            lm.weight.data_mut()[i] -= H;
            let fd = (project(&forward(input, &lp), &r) - project(&forward(input, &lm), &r)) / (2.0 * H);
            let an = grad.weight.data()[i];
            assert!(rel_err(an, fd) < TOL, "weight[{i}]: analytic {an} vs fd {fd}");
        }
        for i in 0..layer.bias.len() {
            let mut lp = layer.clone();
            lp.bias.data_mut()[i] += H;
            let mut lm = layer.clone();
            lm.bias.data_mut()[i] -= H;
            let fd = (project(&forward(input, &lp), &r) - project(&forward(input, &lm), &r)) / (2.0 * H);
            assert!(rel_err(grad.bias.data()[i], fd) < TOL, "bias[{i}]");
        }
        for i in 0..input.len() {
            let mut xp = input.clone();
            xp.data_mut()[i] += H;
            let mut xm = input.clone();
            xm.data_mut()[i] -= H;
            let fd = (project(&forward(&xp, layer), &r) - project(&forward(&xm, layer), &r)) / (2.0 * H);
            assert!(rel_err(d_in[i], fd) < TOL, "input[{i}]: {} vs {fd}", d_in[i]);
        }
    }

    #[test]
    fn fully_connected_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&[3], &mut rng);
        let l = random_layer(&[2, 3], 2, &mut rng);
        check_layer(
            &x,
            &l,
            |x, l| fully_connected(x.data(), l).unwrap(),
            |x, l, d, g| fully_connected_backward(x.data(), l, d, g).unwrap(),
        );
    }

    #[test]
    fn conv3d_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(&[1, 6, 6, 6], &mut rng);
        let l = random_layer(&[2, 1, 3, 3, 3], 2, &mut rng);
        check_layer(
            &x,
            &l,
            |x, l| conv3d(x, l, 1).unwrap().into_data(),
            |x, l, d, g| {
                let d = Tensor::from_vec(&[2, 4, 4, 4], d.to_vec()).unwrap();
                conv3d_backward(x, l, 1, &d, g, true).unwrap().unwrap().into_data()
            },
        );
    }

    #[test]
    fn conv3d_strided_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor(&[2, 7, 7, 7], &mut rng);
        let l = random_layer(&[3, 2, 3, 3, 3], 3, &mut rng);
        check_layer(
            &x,
            &l,
            |x, l| conv3d(x, l, 2).unwrap().into_data(),
            |x, l, d, g| {
                let d = Tensor::from_vec(&[3, 3, 3, 3], d.to_vec()).unwrap();
                conv3d_backward(x, l, 2, &d, g, true).unwrap().unwrap().into_data()
            },
        );
    }

    #[test]
    fn deconv3d_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_tensor(&[2, 2, 2, 2], &mut rng);
        let l = random_layer(&[2, 3, 3, 3, 3], 3, &mut rng);
        check_layer(
            &x,
            &l,
            |x, l| deconv3d(x, l, 2).unwrap().into_data(),
            |x, l, d, g| {
                let d = Tensor::from_vec(&[3, 5, 5, 5], d.to_vec()).unwrap();
                deconv3d_backward(x, l, 2, &d, g, true).unwrap().unwrap().into_data()
            },
        );
    }

    #[test]
    fn conv2d_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor(&[2, 9, 9], &mut rng);
        let l = random_layer(&[3, 2, 3, 3], 3, &mut rng);
        check_layer(
            &x,
            &l,
            |x, l| conv2d(x, l, 2).unwrap().into_data(),
            |x, l, d, g| {
                let d = Tensor::from_vec(&[3, 4, 4], d.to_vec()).unwrap();
                conv2d_backward(x, l, 2, &d, g, true).unwrap().unwrap().into_data()
            },
        );
    }

    #[test]
    fn relu_and_sigmoid_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let x: f64 = rng.gen_range(-4.0..4.0);
            let fd = (sigmoid(x + H) - sigmoid(x - H)) / (2.0 * H);
            assert!(rel_err(sigmoid_grad(x), fd) < TOL);
            if x.abs() > 2.0 * H {
                let relu = |v: f64| v.max(0.0);
                let fd = (relu(x + H) - relu(x - H)) / (2.0 * H);
                let mut g = [1.0];
                relu_backward_inplace(&[relu(x)], &mut g);
                assert!((g[0] - fd).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dropout_gradient_uses_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, mask) = dropout(&x, 0.25, Mode::Train, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let mask = mask.unwrap();
        let mut g = vec![1.0; 64];
        dropout_backward(Some(&mask), &mut g);
        // with the mask held fixed the layer is linear, so dy/dx is the mask
        for i in 0..64 {
            let f = |v: f64| {
                let mut xx = x.clone();
                xx[i] = v;
                let (y, _) = dropout(&xx, 0.25, Mode::Train, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
                y[i]
            };
            let fd = (f(x[i] + H) - f(x[i] - H)) / (2.0 * H);
            assert!((g[i] - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn extreme_finite_inputs_stay_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = Tensor::from_vec(
            &[1, 4, 4, 4],
            (0..64).map(|_| rng.gen_range(-1e3f32..1e3)).collect(),
        )
        .unwrap();
        let l = Layer::<f32>::init_uniform(&[2, 1, 2, 2, 2], 2, &mut rng);
        let y = conv3d(&x, &l, 2).unwrap();
        assert!(y.is_finite());
        let l2 = Layer::<f32>::init_uniform(&[2, 1, 2, 2, 2], 1, &mut rng);
        assert!(deconv3d(&y, &l2, 2).unwrap().is_finite());
    }
}
