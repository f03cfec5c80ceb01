//! The training objective: density loss, segmentation loss, and their
//! weighted combination.

use crate::error::Result;
use crate::tensor::{bce_loss, el, l2_loss, Element, Tensor};

/// Batch-averaged per-sample Euclidean distance between predicted and
/// ground-truth density; `squared` switches to squared L2 for stability
/// experiments. Gradient at pred == gt is 0.
pub fn density_loss<T: Element>(
    pred: &Tensor<T>,
    gt: &Tensor<T>,
    squared: bool,
) -> Result<Tensor<T>> {
    l2_loss(pred, gt, squared)
}

/// Pixel-wise binary cross-entropy of the predicted background map against
/// the inverted ground-truth mask.
pub fn seg_loss<T: Element>(a_inv_pred: &Tensor<T>, inverse_target: &Tensor<T>) -> Result<Tensor<T>> {
    bce_loss(a_inv_pred, inverse_target)
}

/// L = L_d + lambda_s * L_s; plain L_d when there is no segmentation term.
pub fn total_loss<T: Element>(
    l_d: &Tensor<T>,
    l_s: Option<&Tensor<T>>,
    lambda_s: f64,
) -> Result<Tensor<T>> {
    match l_s {
        None => Ok(l_d.clone()),
        Some(ls) => l_d.add(&ls.mul(&Tensor::scalar(el(lambda_s)))?),
    }
}
