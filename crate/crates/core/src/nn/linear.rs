use super::{Layer, Scalar};
use crate::error::{Error, Result};

/// Affine map `W·x + b` with `W` stored as `[fan_out, fan_in]`.
pub fn fully_connected<T: Scalar>(input: &[T], layer: &Layer<T>) -> Result<Vec<T>> {
    let (fan_out, fan_in) = dims(layer)?;
    if input.len() != fan_in {
        return Err(Error::shape(format!(
            "fully_connected expects {fan_in} inputs, got {}",
            input.len()
        )));
    }
    let w = layer.weight.data();
    debug_assert_eq!(layer.bias.len(), fan_out);
    Ok(layer
        .bias
        .data()
        .iter()
        .enumerate()
        .map(|(o, &b)| {
            let row = &w[o * fan_in..(o + 1) * fan_in];
            row.iter().zip(input).fold(b, |acc, (&wi, &xi)| acc + wi * xi)
        })
        .collect())
}

/// Accumulates `dW += dy·xᵀ`, `db += dy`, and returns `Wᵀ·dy`.
pub fn fully_connected_backward<T: Scalar>(
    input: &[T],
    layer: &Layer<T>,
    d_out: &[T],
    grad: &mut Layer<T>,
) -> Result<Vec<T>> {
    let (fan_out, fan_in) = dims(layer)?;
    if input.len() != fan_in || d_out.len() != fan_out {
        return Err(Error::shape("fully_connected_backward dimension mismatch"));
    }
    let w = layer.weight.data();
    let gw = grad.weight.data_mut();
    let mut d_in = vec![T::zero(); fan_in];
    for (o, &dy) in d_out.iter().enumerate() {
        if dy == T::zero() {
            continue;
        }
        let row = &w[o * fan_in..(o + 1) * fan_in];
        let grow = &mut gw[o * fan_in..(o + 1) * fan_in];
        for i in 0..fan_in {
            grow[i] += dy * input[i];
            d_in[i] += dy * row[i];
        }
    }
    for (gb, &dy) in grad.bias.data_mut().iter_mut().zip(d_out) {
        *gb += dy;
    }
    Ok(d_in)
}

fn dims<T: Scalar>(layer: &Layer<T>) -> Result<(usize, usize)> {
    match *layer.weight.shape() {
        [o, i] if layer.bias.len() == o => Ok((o, i)),
        _ => Err(Error::shape(format!(
            "fully_connected weight {:?} / bias {:?} inconsistent",
            layer.weight.shape(),
            layer.bias.shape()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn zero_layer_annihilates() {
        let l = Layer::<f64>::zeros(&[4, 3], 4);
        assert_eq!(fully_connected(&[1.0, -2.0, 3.0], &l).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn identity_layer_is_identity() {
        let mut l = Layer::<f64>::zeros(&[3, 3], 3);
        for i in 0..3 {
            l.weight.data_mut()[i * 3 + i] = 1.0;
        }
        let x = [0.25, -7.0, 3.5];
        assert_eq!(fully_connected(&x, &l).unwrap(), x.to_vec());
    }

    #[test]
    fn local_hidden_geometry() {
        let l = Layer::<f32>::zeros(&[100, 1024], 100);
        let y = fully_connected(&vec![1.0; 1024], &l).unwrap();
        assert_eq!(y.len(), 100);
    }

    #[test]
    fn mismatched_input_is_rejected() {
        let l = Layer::<f32>::zeros(&[2, 3], 2);
        assert!(fully_connected(&[1.0, 2.0], &l).is_err());
        let bad = Layer {
            weight: Tensor::<f32>::zeros(&[2, 3]),
            bias: Tensor::zeros(&[3]),
        };
        assert!(fully_connected(&[1.0, 2.0, 3.0], &bad).is_err());
    }
}
