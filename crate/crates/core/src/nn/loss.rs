use crate::error::Result;

use super::{Scalar, Tensor};

/// Mean squared error over all elements and its gradient `2 (pred - target) / n`.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    pred.check_same_shape(target)?;
    let n = pred.len().max(1) as f64;
    let mut sum = 0.0;
    let scale = T::from_f64(2.0 / n);
    let grad: Vec<T> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            sum += d.as_f64() * d.as_f64();
            d * scale
        })
        .collect();
    Ok((sum / n, Tensor::new(pred.shape().to_vec(), grad)?))
}
