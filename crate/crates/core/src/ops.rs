//! Layer kernels: forward passes and their exact adjoints. All of them are
//! plain loops over `Tensor` data; at desk scale this is fast enough and
//! keeps every arithmetic step auditable against finite differences.

use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};
use crate::tensor::{Shape, Tensor};

/// How ReLU layers treat gradients on the way back. The two rules differ
/// only at ReLU sites: `Vanilla` gates on the forward pre-activation alone,
/// `Guided` additionally zeroes entries whose incoming gradient is not
/// strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackwardRule {
    Vanilla,
    Guided,
}

/// Floor of the log argument in cross-entropy.
pub const LOG_CLAMP: f64 = 1e-12;

fn conv_output_shape(input: Shape, kernel: Shape, stride: usize, padding: usize) -> Result<Shape> {
    if stride == 0 {
        return Err(Error::InvalidArg("conv2d stride must be positive".into()));
    }
    if kernel.c != input.c {
        return Err(Error::shape(
            "conv2d kernel channels",
            format!("{} input channels", input.c),
            format!("kernel expecting {}", kernel.c),
        ));
    }
    let h_in = input.h + 2 * padding;
    let w_in = input.w + 2 * padding;
    if h_in < kernel.h || w_in < kernel.w {
        return Err(Error::shape(
            "conv2d spatial extents",
            format!("padded input at least {}x{}", kernel.h, kernel.w),
            format!("{h_in}x{w_in}"),
        ));
    }
    let h_out = (h_in - kernel.h) / stride + 1;
    let w_out = (w_in - kernel.w) / stride + 1;
    if h_out == 0 || w_out == 0 {
        return Err(Error::shape(
            "conv2d output extents",
            "positive output extents".to_string(),
            format!("{h_out}x{w_out}"),
        ));
    }
    Ok(Shape::new(input.n, kernel.n, h_out, w_out))
}

/// Cross-correlation with the given stride and zero padding. Kernel layout
/// is `(C_out, C_in, kH, kW)`; `bias` has one entry per output channel.
pub fn conv2d_forward<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    bias: &[S],
    stride: usize,
    padding: usize,
) -> Result<Tensor<S>> {
    let ishape = input.shape();
    let kshape = kernel.shape();
    let oshape = conv_output_shape(ishape, kshape, stride, padding)?;
    if bias.len() != kshape.n {
        return Err(Error::shape(
            "conv2d bias",
            format!("{} entries", kshape.n),
            format!("{} entries", bias.len()),
        ));
    }

    let mut out = Tensor::zeros(oshape);
    for n in 0..oshape.n {
        for o in 0..oshape.c {
            for i in 0..oshape.h {
                for j in 0..oshape.w {
                    let mut acc = bias[o];
                    for c in 0..ishape.c {
                        for u in 0..kshape.h {
                            let row = (i * stride + u) as isize - padding as isize;
                            if row < 0 || row as usize >= ishape.h {
                                continue;
                            }
                            for v in 0..kshape.w {
                                let col = (j * stride + v) as isize - padding as isize;
                                if col < 0 || col as usize >= ishape.w {
                                    continue;
                                }
                                acc = acc
                                    + input.at(n, c, row as usize, col as usize)
                                        * kernel.at(o, c, u, v);
                            }
                        }
                    }
                    *out.at_mut(n, o, i, j) = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of `conv2d_forward` with respect to input, kernel and bias.
#[derive(Debug, Clone)]
pub struct ConvGrads<S: Scalar> {
    pub input: Tensor<S>,
    pub kernel: Tensor<S>,
    pub bias: Vec<S>,
}

pub fn conv2d_backward<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    stride: usize,
    padding: usize,
    upstream: &Tensor<S>,
) -> Result<ConvGrads<S>> {
    let ishape = input.shape();
    let kshape = kernel.shape();
    let oshape = conv_output_shape(ishape, kshape, stride, padding)?;
    if upstream.shape() != oshape {
        return Err(Error::shape(
            "conv2d upstream gradient",
            oshape.to_string(),
            upstream.shape().to_string(),
        ));
    }

    let mut grad_input = Tensor::zeros(ishape);
    let mut grad_kernel = Tensor::zeros(kshape);
    let mut grad_bias = vec![S::zero(); kshape.n];

    for n in 0..oshape.n {
        for o in 0..oshape.c {
            for i in 0..oshape.h {
                for j in 0..oshape.w {
                    let g = upstream.at(n, o, i, j);
                    grad_bias[o] += g;
                    for c in 0..ishape.c {
                        for u in 0..kshape.h {
                            let row = (i * stride + u) as isize - padding as isize;
                            if row < 0 || row as usize >= ishape.h {
                                continue;
                            }
                            for v in 0..kshape.w {
                                let col = (j * stride + v) as isize - padding as isize;
                                if col < 0 || col as usize >= ishape.w {
                                    continue;
                                }
                                let x = input.at(n, c, row as usize, col as usize);
                                *grad_kernel.at_mut(o, c, u, v) += g * x;
                                *grad_input.at_mut(n, c, row as usize, col as usize) +=
                                    g * kernel.at(o, c, u, v);
                            }
                        }
                    }
                }
            }
        }
    }

    Ok(ConvGrads {
        input: grad_input,
        kernel: grad_kernel,
        bias: grad_bias,
    })
}

/// Elementwise `max(0, x)`.
pub fn relu_forward<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    input.map(|v| if v > S::zero() { v } else { S::zero() })
}

/// ReLU adjoint under the selected rule. Indicators are strict: a zero
/// pre-activation blocks the gradient under both rules, and under `Guided`
/// a zero or negative incoming gradient is dropped as well.
pub fn relu_backward<S: Scalar>(
    upstream: &Tensor<S>,
    preactivation: &Tensor<S>,
    rule: BackwardRule,
) -> Result<Tensor<S>> {
    upstream.zip_map(preactivation, |g, x| match rule {
        BackwardRule::Vanilla => {
            if x > S::zero() {
                g
            } else {
                S::zero()
            }
        }
        BackwardRule::Guided => {
            if g > S::zero() && x > S::zero() {
                g
            } else {
                S::zero()
            }
        }
    })
}

fn pool_output_shape(input: Shape, size: usize, stride: usize) -> Result<Shape> {
    if size == 0 || stride == 0 {
        return Err(Error::InvalidArg(
            "maxpool size and stride must be positive".into(),
        ));
    }
    if input.h < size || input.w < size {
        return Err(Error::shape(
            "maxpool window",
            format!("input at least {size}x{size}"),
            format!("{}x{}", input.h, input.w),
        ));
    }
    Ok(Shape::new(
        input.n,
        input.c,
        (input.h - size) / stride + 1,
        (input.w - size) / stride + 1,
    ))
}

fn pool_argmax<S: Scalar>(
    input: &Tensor<S>,
    n: usize,
    c: usize,
    i: usize,
    j: usize,
    size: usize,
    stride: usize,
) -> (usize, usize) {
    // first (lowest linear index) maximum wins ties
    let mut best = (i * stride, j * stride);
    let mut best_v = input.at(n, c, best.0, best.1);
    for u in 0..size {
        for v in 0..size {
            let (r, s) = (i * stride + u, j * stride + v);
            let val = input.at(n, c, r, s);
            if val > best_v {
                best_v = val;
                best = (r, s);
            }
        }
    }
    best
}

pub fn maxpool_forward<S: Scalar>(input: &Tensor<S>, size: usize, stride: usize) -> Result<Tensor<S>> {
    let oshape = pool_output_shape(input.shape(), size, stride)?;
    let mut out = Tensor::zeros(oshape);
    for n in 0..oshape.n {
        for c in 0..oshape.c {
            for i in 0..oshape.h {
                for j in 0..oshape.w {
                    let (r, s) = pool_argmax(input, n, c, i, j, size, stride);
                    *out.at_mut(n, c, i, j) = input.at(n, c, r, s);
                }
            }
        }
    }
    Ok(out)
}

/// Routes each upstream entry to the argmax position of its window.
pub fn maxpool_backward<S: Scalar>(
    upstream: &Tensor<S>,
    input: &Tensor<S>,
    size: usize,
    stride: usize,
) -> Result<Tensor<S>> {
    let oshape = pool_output_shape(input.shape(), size, stride)?;
    if upstream.shape() != oshape {
        return Err(Error::shape(
            "maxpool upstream gradient",
            oshape.to_string(),
            upstream.shape().to_string(),
        ));
    }
    let mut grad = Tensor::zeros(input.shape());
    for n in 0..oshape.n {
        for c in 0..oshape.c {
            for i in 0..oshape.h {
                for j in 0..oshape.w {
                    let (r, s) = pool_argmax(input, n, c, i, j, size, stride);
                    *grad.at_mut(n, c, r, s) += upstream.at(n, c, i, j);
                }
            }
        }
    }
    Ok(grad)
}

/// Collapse `(N, C, H, W)` to `(N, C*H*W, 1, 1)`.
pub fn flatten_forward<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    let s = input.shape();
    input
        .reshaped(Shape::new(s.n, s.sample_count(), 1, 1))
        .expect("flatten preserves element count")
}

/// Fully connected layer: `y = W x + b`. Input is `(N, F, 1, 1)`, weight
/// `(units, F, 1, 1)`, bias one entry per unit.
pub fn dense_forward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &[S],
) -> Result<Tensor<S>> {
    let ishape = input.shape();
    let wshape = weight.shape();
    if ishape.h != 1 || ishape.w != 1 {
        return Err(Error::shape(
            "dense input",
            "Nx F x1x1 (flatten first)".to_string(),
            ishape.to_string(),
        ));
    }
    if wshape.c != ishape.c {
        return Err(Error::shape(
            "dense weight",
            format!("{} input features", ishape.c),
            format!("weight expecting {}", wshape.c),
        ));
    }
    if bias.len() != wshape.n {
        return Err(Error::shape(
            "dense bias",
            format!("{} entries", wshape.n),
            format!("{} entries", bias.len()),
        ));
    }
    let mut out = Tensor::zeros(Shape::new(ishape.n, wshape.n, 1, 1));
    for n in 0..ishape.n {
        for u in 0..wshape.n {
            let mut acc = bias[u];
            for f in 0..ishape.c {
                acc = acc + weight.at(u, f, 0, 0) * input.at(n, f, 0, 0);
            }
            *out.at_mut(n, u, 0, 0) = acc;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct DenseGrads<S: Scalar> {
    pub input: Tensor<S>,
    pub weight: Tensor<S>,
    pub bias: Vec<S>,
}

pub fn dense_backward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    upstream: &Tensor<S>,
) -> Result<DenseGrads<S>> {
    let ishape = input.shape();
    let wshape = weight.shape();
    let expected = Shape::new(ishape.n, wshape.n, 1, 1);
    if upstream.shape() != expected {
        return Err(Error::shape(
            "dense upstream gradient",
            expected.to_string(),
            upstream.shape().to_string(),
        ));
    }
    let mut grad_input = Tensor::zeros(ishape);
    let mut grad_weight = Tensor::zeros(wshape);
    let mut grad_bias = vec![S::zero(); wshape.n];
    for n in 0..ishape.n {
        for u in 0..wshape.n {
            let g = upstream.at(n, u, 0, 0);
            grad_bias[u] += g;
            for f in 0..ishape.c {
                *grad_weight.at_mut(u, f, 0, 0) += g * input.at(n, f, 0, 0);
                *grad_input.at_mut(n, f, 0, 0) += g * weight.at(u, f, 0, 0);
            }
        }
    }
    Ok(DenseGrads {
        input: grad_input,
        weight: grad_weight,
        bias: grad_bias,
    })
}

/// Per-sample softmax over the class dimension, computed with
/// max-subtraction. Logits must be `(N, K, 1, 1)`.
pub fn softmax<S: Scalar>(logits: &Tensor<S>) -> Result<Tensor<S>> {
    let shape = logits.shape();
    if shape.h != 1 || shape.w != 1 {
        return Err(Error::shape(
            "softmax",
            "NxKx1x1 logits".to_string(),
            shape.to_string(),
        ));
    }
    if shape.c == 0 {
        return Err(Error::Empty("softmax class dimension".into()));
    }
    let mut out = Tensor::zeros(shape);
    for n in 0..shape.n {
        let mut max = logits.at(n, 0, 0, 0);
        for k in 1..shape.c {
            let v = logits.at(n, k, 0, 0);
            if v > max {
                max = v;
            }
        }
        let mut sum = S::zero();
        for k in 0..shape.c {
            let e = (logits.at(n, k, 0, 0) - max).exp();
            *out.at_mut(n, k, 0, 0) = e;
            sum += e;
        }
        for k in 0..shape.c {
            *out.at_mut(n, k, 0, 0) = out.at(n, k, 0, 0) / sum;
        }
    }
    Ok(out)
}

/// Per-sample cross-entropy on softmax outputs, with the log argument
/// clamped at `LOG_CLAMP`.
pub fn cross_entropy_loss<S: Scalar>(probs: &Tensor<S>, labels: &[usize]) -> Result<Vec<S>> {
    let shape = probs.shape();
    if shape.c == 0 {
        return Err(Error::Empty("cross-entropy class dimension".into()));
    }
    if labels.len() != shape.n {
        return Err(Error::shape(
            "cross-entropy labels",
            format!("{} labels", shape.n),
            format!("{} labels", labels.len()),
        ));
    }
    let clamp = cast::<S>(LOG_CLAMP);
    let mut losses = Vec::with_capacity(shape.n);
    for (n, &label) in labels.iter().enumerate() {
        if label >= shape.c {
            return Err(Error::ClassOutOfRange {
                index: label,
                count: shape.c,
            });
        }
        let p = probs.at(n, label, 0, 0);
        let p = if p > clamp { p } else { clamp };
        losses.push(-p.ln());
    }
    Ok(losses)
}

/// Gradient of the summed cross-entropy with respect to the logits:
/// `softmax(logits) - onehot(label)` per sample.
pub fn softmax_cross_entropy_backward<S: Scalar>(
    logits: &Tensor<S>,
    labels: &[usize],
) -> Result<Tensor<S>> {
    let shape = logits.shape();
    let mut grad = softmax(logits)?;
    if labels.len() != shape.n {
        return Err(Error::shape(
            "cross-entropy labels",
            format!("{} labels", shape.n),
            format!("{} labels", labels.len()),
        ));
    }
    for (n, &label) in labels.iter().enumerate() {
        if label >= shape.c {
            return Err(Error::ClassOutOfRange {
                index: label,
                count: shape.c,
            });
        }
        *grad.at_mut(n, label, 0, 0) = grad.at(n, label, 0, 0) - S::one();
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape, data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn conv_all_ones_sums_window() {
        let input = Tensor::filled(Shape::new(1, 1, 3, 3), 1.0);
        let kernel = Tensor::filled(Shape::new(1, 1, 2, 2), 1.0);
        let out = conv2d_forward(&input, &kernel, &[0.0], 1, 0).unwrap();
        assert_eq!(out.shape(), Shape::new(1, 1, 2, 2));
        assert!(out.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn conv_identity_kernel() {
        let input = t(
            Shape::new(1, 1, 2, 3),
            vec![0.5, -1.0, 2.0, 3.0, 0.0, -0.25],
        );
        let kernel = Tensor::filled(Shape::new(1, 1, 1, 1), 1.0);
        let out = conv2d_forward(&input, &kernel, &[0.0], 1, 0).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let input = Tensor::<f64>::zeros(Shape::new(1, 3, 4, 4));
        let kernel = Tensor::<f64>::zeros(Shape::new(2, 2, 3, 3));
        let err = conv2d_forward(&input, &kernel, &[0.0, 0.0], 1, 0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("3"), "shape report should name extents: {msg}");
    }

    #[test]
    fn conv_backward_zero_upstream_gives_zero_grads() {
        let input = Tensor::filled(Shape::new(1, 2, 4, 4), 0.7);
        let kernel = Tensor::filled(Shape::new(3, 2, 3, 3), -0.2);
        let upstream = Tensor::zeros(Shape::new(1, 3, 2, 2));
        let g = conv2d_backward(&input, &kernel, 1, 0, &upstream).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.kernel.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_backward_scalar_kernel_chain_rule() {
        let input = t(Shape::new(1, 1, 1, 2), vec![0.3, -0.8]);
        let kernel = Tensor::filled(Shape::new(1, 1, 1, 1), 2.5);
        let upstream = t(Shape::new(1, 1, 1, 2), vec![1.0, -2.0]);
        let g = conv2d_backward(&input, &kernel, 1, 0, &upstream).unwrap();
        assert_eq!(g.input.data(), &[2.5, -5.0]);
    }

    #[test]
    fn relu_forward_examples() {
        let input = t(Shape::new(1, 1, 1, 3), vec![-1.0, 0.0, 2.0]);
        assert_eq!(relu_forward(&input).data(), &[0.0, 0.0, 2.0]);
        let neg = Tensor::filled(Shape::new(1, 1, 2, 2), -3.0);
        assert!(relu_forward(&neg).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_backward_guided_and_vanilla() {
        let preact = t(Shape::new(1, 1, 1, 4), vec![1.0, -1.0, 2.0, 3.0]);
        let upstream = t(Shape::new(1, 1, 1, 4), vec![2.0, 2.0, -1.0, 4.0]);
        let guided = relu_backward(&upstream, &preact, BackwardRule::Guided).unwrap();
        assert_eq!(guided.data(), &[2.0, 0.0, 0.0, 4.0]);
        let vanilla = relu_backward(&upstream, &preact, BackwardRule::Vanilla).unwrap();
        assert_eq!(vanilla.data(), &[2.0, 0.0, -1.0, 4.0]);
    }

    #[test]
    fn relu_backward_rules_coincide_when_all_positive() {
        let preact = Tensor::filled(Shape::new(1, 1, 2, 2), 0.5);
        let upstream = Tensor::filled(Shape::new(1, 1, 2, 2), 1.5);
        let guided = relu_backward(&upstream, &preact, BackwardRule::Guided).unwrap();
        let vanilla = relu_backward(&upstream, &preact, BackwardRule::Vanilla).unwrap();
        assert_eq!(guided, vanilla);
        assert_eq!(guided.data(), upstream.data());
    }

    #[test]
    fn maxpool_routes_to_first_max_on_ties() {
        let input = t(Shape::new(1, 1, 2, 2), vec![1.0, 1.0, 1.0, 1.0]);
        let out = maxpool_forward(&input, 2, 2).unwrap();
        assert_eq!(out.data(), &[1.0]);
        let upstream = t(Shape::new(1, 1, 1, 1), vec![5.0]);
        let grad = maxpool_backward(&upstream, &input, 2, 2).unwrap();
        assert_eq!(grad.data(), &[5.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_symmetry() {
        let logits = t(Shape::new(1, 2, 1, 1), vec![0.0, 0.0]);
        let p = softmax(&logits).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rejects_empty_class_dim() {
        let logits = Tensor::<f64>::zeros(Shape::new(1, 0, 1, 1));
        assert!(matches!(softmax(&logits).unwrap_err(), Error::Empty(_)));
    }

    #[test]
    fn cross_entropy_of_certain_correct_prediction_is_zero() {
        let probs = t(Shape::new(1, 3, 1, 1), vec![0.0, 1.0, 0.0]);
        let losses = cross_entropy_loss(&probs, &[1]).unwrap();
        assert_eq!(losses, vec![0.0]);
    }

    #[test]
    fn cross_entropy_rejects_label_out_of_range() {
        let probs = t(Shape::new(1, 2, 1, 1), vec![0.5, 0.5]);
        assert!(matches!(
            cross_entropy_loss(&probs, &[2]).unwrap_err(),
            Error::ClassOutOfRange { .. }
        ));
    }
}
