//! Valid-padding 3D/2D convolution and 3D transposed convolution, lowered
//! onto GEMM through im2col/col2im.

use super::{gemm, Layer, Scalar, Tensor};
use crate::error::{Error, Result};

/// Spatial mapping shared by a convolution and its transpose. `big` is the
/// convolution input (transposed-convolution output), `small` the other side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Window {
    big: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    small: [usize; 3],
}

impl Window {
    fn from_big(big: [usize; 3], kernel: [usize; 3], stride: [usize; 3]) -> Result<Self> {
        let mut small = [0; 3];
        for a in 0..3 {
            if stride[a] == 0 || kernel[a] == 0 {
                return Err(Error::shape("kernel and stride must be positive"));
            }
            if kernel[a] > big[a] {
                return Err(Error::shape(format!(
                    "kernel {:?} larger than input {:?}",
                    kernel, big
                )));
            }
            small[a] = (big[a] - kernel[a]) / stride[a] + 1;
        }
        Ok(Window {
            big,
            kernel,
            stride,
            small,
        })
    }

    fn from_small(small: [usize; 3], kernel: [usize; 3], stride: [usize; 3]) -> Result<Self> {
        let mut big = [0; 3];
        for a in 0..3 {
            if stride[a] == 0 || kernel[a] == 0 || small[a] == 0 {
                return Err(Error::shape("kernel, stride and input extent must be positive"));
            }
            big[a] = (small[a] - 1) * stride[a] + kernel[a];
        }
        Ok(Window {
            big,
            kernel,
            stride,
            small,
        })
    }

    fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    fn big_len(&self) -> usize {
        self.big.iter().product()
    }

    fn small_len(&self) -> usize {
        self.small.iter().product()
    }
}

/// Output extent of a valid convolution along one axis.
pub fn conv_extent(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    (kernel <= input && stride > 0).then(|| (input - kernel) / stride + 1)
}

/// Output extent of a transposed convolution along one axis.
pub fn deconv_extent(input: usize, kernel: usize, stride: usize) -> usize {
    (input - 1) * stride + kernel
}

/// `x[c, big]` → `cols[c·taps, small]`.
fn im2col<T: Scalar>(x: &[T], channels: usize, w: &Window) -> Vec<T> {
    let taps = w.taps();
    let p = w.small_len();
    let [bd, bh, bw] = w.big;
    let [kd, kh, kw] = w.kernel;
    let [sd, sh, sw] = w.stride;
    let [od, oh, ow] = w.small;
    let mut cols = vec![T::zero(); channels * taps * p];
    for c in 0..channels {
        let xc = &x[c * bd * bh * bw..(c + 1) * bd * bh * bw];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let row = ((c * kd + a) * kh + b) * kw + e;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    let mut q = 0;
                    for i in 0..od {
                        let zi = i * sd + a;
                        for j in 0..oh {
                            let base = (zi * bh + j * sh + b) * bw + e;
                            for k in 0..ow {
                                dst[q] = xc[base + k * sw];
                                q += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: accumulates `cols[c·taps, small]` into `x[c, big]`.
fn col2im<T: Scalar>(cols: &[T], channels: usize, w: &Window, x: &mut [T]) {
    let p = w.small_len();
    let [bd, bh, bw] = w.big;
    let [kd, kh, kw] = w.kernel;
    let [sd, sh, sw] = w.stride;
    let [od, oh, ow] = w.small;
    for c in 0..channels {
        let xc = &mut x[c * bd * bh * bw..(c + 1) * bd * bh * bw];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let row = ((c * kd + a) * kh + b) * kw + e;
                    let src = &cols[row * p..(row + 1) * p];
                    let mut q = 0;
                    for i in 0..od {
                        let zi = i * sd + a;
                        for j in 0..oh {
                            let base = (zi * bh + j * sh + b) * bw + e;
                            for k in 0..ow {
                                xc[base + k * sw] += src[q];
                                q += 1;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn spatial3(shape: &[usize], what: &str) -> Result<(usize, [usize; 3])> {
    match *shape {
        [c, d, h, w] => Ok((c, [d, h, w])),
        _ => Err(Error::shape(format!("{what} expects [c, d, h, w], got {shape:?}"))),
    }
}

fn kernel5(shape: &[usize], what: &str) -> Result<(usize, usize, [usize; 3])> {
    match *shape {
        [a, b, kd, kh, kw] => Ok((a, b, [kd, kh, kw])),
        _ => Err(Error::shape(format!(
            "{what} weight must be 5-dimensional, got {shape:?}"
        ))),
    }
}

fn check_bias<T: Scalar>(layer: &Layer<T>, channels: usize) -> Result<()> {
    if layer.bias.len() != channels {
        return Err(Error::shape(format!(
            "bias has {} entries, expected {channels}",
            layer.bias.len()
        )));
    }
    Ok(())
}

fn add_channel_bias<T: Scalar>(out: &mut [T], bias: &[T]) {
    let per = out.len() / bias.len();
    for (chunk, &b) in out.chunks_mut(per).zip(bias) {
        for v in chunk {
            *v += b;
        }
    }
}

fn accumulate_channel_sums<T: Scalar>(d_out: &[T], d_bias: &mut [T]) {
    let per = d_out.len() / d_bias.len();
    for (chunk, db) in d_out.chunks(per).zip(d_bias.iter_mut()) {
        *db += chunk.iter().copied().sum::<T>();
    }
}

/// Valid 3D convolution. `input` is `[c_in, d, h, w]`, the weight
/// `[c_out, c_in, kd, kh, kw]`.
pub fn conv3d<T: Scalar>(input: &Tensor<T>, layer: &Layer<T>, stride: usize) -> Result<Tensor<T>> {
    conv3d_strided(input, layer, [stride; 3])
}

fn conv3d_strided<T: Scalar>(
    input: &Tensor<T>,
    layer: &Layer<T>,
    stride: [usize; 3],
) -> Result<Tensor<T>> {
    let (c_in, big) = spatial3(input.shape(), "conv3d")?;
    let (c_out, wc_in, kernel) = kernel5(layer.weight.shape(), "conv3d")?;
    if wc_in != c_in {
        return Err(Error::shape(format!(
            "conv3d input has {c_in} channels, weight expects {wc_in}"
        )));
    }
    check_bias(layer, c_out)?;
    let w = Window::from_big(big, kernel, stride)?;
    let cols = im2col(input.data(), c_in, &w);
    let p = w.small_len();
    let mut out = vec![T::zero(); c_out * p];
    gemm(
        false,
        false,
        c_out,
        p,
        c_in * w.taps(),
        layer.weight.data(),
        &cols,
        T::zero(),
        &mut out,
    );
    add_channel_bias(&mut out, layer.bias.data());
    let [d, h, ww] = w.small;
    Tensor::from_vec(&[c_out, d, h, ww], out)
}

/// Gradients of [`conv3d`]. Parameter gradients are accumulated into
/// `grad`; the input gradient is returned when `need_input` is set.
pub fn conv3d_backward<T: Scalar>(
    input: &Tensor<T>,
    layer: &Layer<T>,
    stride: usize,
    d_out: &Tensor<T>,
    grad: &mut Layer<T>,
    need_input: bool,
) -> Result<Option<Tensor<T>>> {
    conv3d_backward_strided(input, layer, [stride; 3], d_out, grad, need_input)
}

fn conv3d_backward_strided<T: Scalar>(
    input: &Tensor<T>,
    layer: &Layer<T>,
    stride: [usize; 3],
    d_out: &Tensor<T>,
    grad: &mut Layer<T>,
    need_input: bool,
) -> Result<Option<Tensor<T>>> {
    let (c_in, big) = spatial3(input.shape(), "conv3d")?;
    let (c_out, _, kernel) = kernel5(layer.weight.shape(), "conv3d")?;
    let w = Window::from_big(big, kernel, stride)?;
    let p = w.small_len();
    if d_out.len() != c_out * p {
        return Err(Error::shape("conv3d upstream gradient has wrong size"));
    }
    let k = c_in * w.taps();
    let cols = im2col(input.data(), c_in, &w);
    // dW[c_out, k] += dOut[c_out, p] · colsᵀ
    gemm(
        false,
        true,
        c_out,
        k,
        p,
        d_out.data(),
        &cols,
        T::one(),
        grad.weight.data_mut(),
    );
    accumulate_channel_sums(d_out.data(), grad.bias.data_mut());
    if !need_input {
        return Ok(None);
    }
    let mut d_cols = cols;
    gemm(
        true,
        false,
        k,
        p,
        c_out,
        layer.weight.data(),
        d_out.data(),
        T::zero(),
        &mut d_cols,
    );
    let mut d_in = vec![T::zero(); input.len()];
    col2im(&d_cols, c_in, &w, &mut d_in);
    Ok(Some(Tensor::from_vec(input.shape(), d_in)?))
}

/// Transposed 3D convolution. `input` is `[c_in, d, h, w]`, the weight
/// `[c_in, c_out, kd, kh, kw]`; output extent is `(in − 1)·stride + k`.
pub fn deconv3d<T: Scalar>(
    input: &Tensor<T>,
    layer: &Layer<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    let (c_in, small) = spatial3(input.shape(), "deconv3d")?;
    let (wc_in, c_out, kernel) = kernel5(layer.weight.shape(), "deconv3d")?;
    if wc_in != c_in {
        return Err(Error::shape(format!(
            "deconv3d input has {c_in} channels, weight expects {wc_in}"
        )));
    }
    check_bias(layer, c_out)?;
    let w = Window::from_small(small, kernel, [stride; 3])?;
    let p = w.small_len();
    let k = c_out * w.taps();
    // cols[c_out·taps, p] = Wᵀ · X
    let mut cols = vec![T::zero(); k * p];
    gemm(
        true,
        false,
        k,
        p,
        c_in,
        layer.weight.data(),
        input.data(),
        T::zero(),
        &mut cols,
    );
    let mut out = vec![T::zero(); c_out * w.big_len()];
    col2im(&cols, c_out, &w, &mut out);
    add_channel_bias(&mut out, layer.bias.data());
    let [d, h, ww] = w.big;
    Tensor::from_vec(&[c_out, d, h, ww], out)
}

pub fn deconv3d_backward<T: Scalar>(
    input: &Tensor<T>,
    layer: &Layer<T>,
    stride: usize,
    d_out: &Tensor<T>,
    grad: &mut Layer<T>,
    need_input: bool,
) -> Result<Option<Tensor<T>>> {
    let (c_in, small) = spatial3(input.shape(), "deconv3d")?;
    let (_, c_out, kernel) = kernel5(layer.weight.shape(), "deconv3d")?;
    let w = Window::from_small(small, kernel, [stride; 3])?;
    if d_out.len() != c_out * w.big_len() {
        return Err(Error::shape("deconv3d upstream gradient has wrong size"));
    }
    let p = w.small_len();
    let k = c_out * w.taps();
    let d_cols = im2col(d_out.data(), c_out, &w);
    // dW[c_in, k] += X[c_in, p] · d_colsᵀ
    gemm(
        false,
        true,
        c_in,
        k,
        p,
        input.data(),
        &d_cols,
        T::one(),
        grad.weight.data_mut(),
    );
    accumulate_channel_sums(d_out.data(), grad.bias.data_mut());
    if !need_input {
        return Ok(None);
    }
    let mut d_in = vec![T::zero(); c_in * p];
    gemm(
        false,
        false,
        c_in,
        p,
        k,
        layer.weight.data(),
        &d_cols,
        T::zero(),
        &mut d_in,
    );
    Ok(Some(Tensor::from_vec(input.shape(), d_in)?))
}

fn lift2d<T: Scalar>(input: &Tensor<T>, layer: &Layer<T>) -> Result<(Tensor<T>, Layer<T>)> {
    let [c, h, w] = *input.shape() else {
        return Err(Error::shape(format!(
            "conv2d expects [c, h, w], got {:?}",
            input.shape()
        )));
    };
    let [co, ci, kh, kw] = *layer.weight.shape() else {
        return Err(Error::shape(format!(
            "conv2d weight must be 4-dimensional, got {:?}",
            layer.weight.shape()
        )));
    };
    Ok((
        input.clone().reshape(&[c, 1, h, w])?,
        Layer {
            weight: layer.weight.clone().reshape(&[co, ci, 1, kh, kw])?,
            bias: layer.bias.clone(),
        },
    ))
}

/// Valid 2D convolution. `input` is `[c_in, h, w]`, the weight `[c_out, c_in, kh, kw]`.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, layer: &Layer<T>, stride: usize) -> Result<Tensor<T>> {
    let (x, l) = lift2d(input, layer)?;
    let out = conv3d_strided(&x, &l, [1, stride, stride])?;
    let [c, _, h, w] = *out.shape() else {
        unreachable!()
    };
    out.reshape(&[c, h, w])
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    layer: &Layer<T>,
    stride: usize,
    d_out: &Tensor<T>,
    grad: &mut Layer<T>,
    need_input: bool,
) -> Result<Option<Tensor<T>>> {
    let (x, l) = lift2d(input, layer)?;
    let wshape = grad.weight.shape().to_vec();
    let mut g = Layer {
        weight: std::mem::replace(&mut grad.weight, Tensor::zeros(&[0]))
            .reshape(l.weight.shape())?,
        bias: std::mem::replace(&mut grad.bias, Tensor::zeros(&[0])),
    };
    let res = conv3d_backward_strided(&x, &l, [1, stride, stride], d_out, &mut g, need_input);
    grad.weight = g.weight.reshape(&wshape)?;
    grad.bias = g.bias;
    Ok(match res? {
        Some(d) => Some(d.reshape(input.shape())?),
        None => None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(shape: &[usize], bias: usize) -> Layer<f32> {
        Layer {
            weight: Tensor::zeros(shape),
            bias: Tensor::zeros(&[bias]),
        }
    }

    #[test]
    fn encoder_shapes() {
        let x = Tensor::<f32>::zeros(&[1, 30, 30, 30]);
        let y = conv3d(&x, &layer(&[32, 1, 6, 6, 6], 32), 2).unwrap();
        assert_eq!(y.shape(), &[32, 13, 13, 13]);
        let y = conv3d(&y, &layer(&[64, 32, 5, 5, 5], 64), 2).unwrap();
        assert_eq!(y.shape(), &[64, 5, 5, 5]);
        let y = conv3d(&y, &layer(&[128, 64, 4, 4, 4], 128), 1).unwrap();
        assert_eq!(y.shape(), &[128, 2, 2, 2]);
    }

    #[test]
    fn decoder_shapes() {
        let x = Tensor::<f32>::zeros(&[128, 2, 2, 2]);
        let y = deconv3d(&x, &layer(&[128, 64, 4, 4, 4], 64), 1).unwrap();
        assert_eq!(y.shape(), &[64, 5, 5, 5]);
        let y = deconv3d(&y, &layer(&[64, 32, 5, 5, 5], 32), 2).unwrap();
        assert_eq!(y.shape(), &[32, 13, 13, 13]);
        let y = deconv3d(&y, &layer(&[32, 1, 6, 6, 6], 1), 2).unwrap();
        assert_eq!(y.shape(), &[1, 30, 30, 30]);
    }

    #[test]
    fn conv2d_shapes() {
        let x = Tensor::<f32>::zeros(&[3, 100, 100]);
        let y = conv2d(&x, &layer(&[16, 3, 32, 32], 16), 2).unwrap();
        assert_eq!(y.shape(), &[16, 35, 35]);
        let y = conv2d(&y, &layer(&[32, 16, 15, 15], 32), 2).unwrap();
        assert_eq!(y.shape(), &[32, 11, 11]);
        let y = conv2d(&y, &layer(&[64, 32, 5, 5], 64), 2).unwrap();
        assert_eq!(y.shape(), &[64, 4, 4]);
        let y = conv2d(&y, &layer(&[128, 64, 3, 3], 128), 1).unwrap();
        assert_eq!(y.shape(), &[128, 2, 2]);
    }

    #[test]
    fn kernel_larger_than_input_is_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 3, 3, 3]);
        let err = conv3d(&x, &layer(&[2, 1, 4, 4, 4], 2), 1).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let x = Tensor::<f32>::zeros(&[3, 2, 2, 2]);
        assert!(deconv3d(&x, &layer(&[4, 1, 2, 2, 2], 1), 1).is_err());
        assert!(conv3d(&x, &layer(&[4, 2, 2, 2, 2], 4), 1).is_err());
    }

    #[test]
    fn conv_matches_direct_sum() {
        // single channel, 4³ input, k=2, s=2: each output is a 2³ block sum with weight 1
        let data: Vec<f64> = (0..64).map(|i| i as f64).collect();
        let x = Tensor::from_vec(&[1, 4, 4, 4], data.clone()).unwrap();
        let l = Layer {
            weight: Tensor::from_vec(&[1, 1, 2, 2, 2], vec![1.0; 8]).unwrap(),
            bias: Tensor::from_vec(&[1], vec![0.5]).unwrap(),
        };
        let y = conv3d(&x, &l, 2).unwrap();
        for (oz, oy, ox) in [(0, 0, 0), (1, 0, 1), (1, 1, 1)] {
            let mut s = 0.5;
            for dz in 0..2 {
                for dy in 0..2 {
                    for dx in 0..2 {
                        s += data[((oz * 2 + dz) * 4 + oy * 2 + dy) * 4 + ox * 2 + dx];
                    }
                }
            }
            assert_eq!(y.data()[(oz * 2 + oy) * 2 + ox], s);
        }
    }

    #[test]
    fn extents() {
        assert_eq!(conv_extent(30, 6, 2), Some(13));
        assert_eq!(conv_extent(3, 4, 1), None);
        assert_eq!(deconv_extent(13, 6, 2), 30);
    }
}
