//! Central finite differences for validating analytic gradients. The
//! checker only ever calls forward functions, so it stays independent of
//! the backward kernels it is used to verify.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Default probe step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Numerically differentiate `f` with respect to every element of `x`
/// using central differences with step `h`.
pub fn central_difference<S, F>(x: &Tensor<S>, h: S, mut f: F) -> Tensor<S>
where
    S: Scalar,
    F: FnMut(&Tensor<S>) -> S,
{
    let two = S::one() + S::one();
    let mut grad = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.data().len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (two * h);
    }
    grad
}

/// Same, for a flat parameter slice (biases).
pub fn central_difference_slice<S, F>(x: &[S], h: S, mut f: F) -> Vec<S>
where
    S: Scalar,
    F: FnMut(&[S]) -> S,
{
    let two = S::one() + S::one();
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        grad.push((plus - minus) / (two * h));
    }
    grad
}

/// Worst mismatch between an analytic and a numeric gradient under
/// `|a - b| <= rtol * max(|a|, |b|) + atol`. Returns `None` when every
/// entry passes, otherwise the offending index and its error.
pub fn worst_mismatch<S: Scalar>(
    analytic: &[S],
    numeric: &[S],
    rtol: S,
    atol: S,
) -> Option<(usize, S)> {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst: Option<(usize, S)> = None;
    for (i, (&a, &b)) in analytic.iter().zip(numeric.iter()).enumerate() {
        let diff = (a - b).abs();
        let bound = rtol * a.abs().max(b.abs()) + atol;
        if diff > bound {
            let excess = diff - bound;
            if worst.map_or(true, |(_, w)| excess > w) {
                worst = Some((i, excess));
            }
        }
    }
    worst
}

/// Panics with a readable report when gradients disagree.
pub fn assert_close<S: Scalar>(context: &str, analytic: &[S], numeric: &[S], rtol: S, atol: S) {
    if let Some((i, excess)) = worst_mismatch(analytic, numeric, rtol, atol) {
        panic!(
            "{context}: gradient mismatch at element {i}: analytic={} numeric={} (excess {excess})",
            analytic[i], numeric[i]
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn quadratic_gradient() {
        // f(x) = sum(x^2), df/dx = 2x
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![0.5, -1.5, 2.0]).unwrap();
        let numeric = central_difference(&x, 1e-5, |t| t.data().iter().map(|v| v * v).sum());
        let analytic: Vec<f64> = x.data().iter().map(|v| 2.0 * v).collect();
        assert_close("quadratic", &analytic, numeric.data(), 1e-6, 1e-9);
    }

    #[test]
    fn mismatch_is_detected() {
        let analytic = [1.0f64, 2.0];
        let numeric = [1.0f64, 2.5];
        assert!(worst_mismatch(&analytic, &numeric, 1e-6, 1e-9).is_some());
    }
}
