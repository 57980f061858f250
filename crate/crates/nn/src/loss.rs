use crate::{Float, NnError, Tensor};

/// Probability clamp applied before taking logarithms.
pub const BCE_EPS: f64 = 1e-7;

fn check<T: Float>(pred: &Tensor<T>, target: &Tensor<T>, op: &'static str) -> Result<(), NnError> {
    if pred.shape() != target.shape() {
        return Err(NnError::Dimension { op, left: pred.shape().to_vec(), right: target.shape().to_vec() });
    }
    Ok(())
}

/// Mean binary cross-entropy and its gradient with respect to `pred`.
///
/// Predictions are clamped to `[BCE_EPS, 1 - BCE_EPS]`; the gradient is
/// evaluated at the clamped value. Reductions run in `f64`.
pub fn bce_loss<T: Float>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>), NnError> {
    check(pred, target, "bce")?;
    let n = pred.len() as f64;
    let mut grad = Tensor::zeros(pred.shape());
    let mut total = 0.0;
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let p = p.f64().clamp(BCE_EPS, 1.0 - BCE_EPS);
        let t = t.f64();
        total -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        *g = T::of((p - t) / (p * (1.0 - p)) / n);
    }
    Ok((total / n, grad))
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss<T: Float>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>), NnError> {
    check(pred, target, "mse")?;
    let n = pred.len() as f64;
    let mut grad = Tensor::zeros(pred.shape());
    let mut total = 0.0;
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p.f64() - t.f64();
        total += d * d;
        *g = T::of(2.0 * d / n);
    }
    Ok((total / n, grad))
}
