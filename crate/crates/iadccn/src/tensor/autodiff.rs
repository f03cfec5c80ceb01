//! Recorded-operation graph and the reverse pass over it.

use std::collections::HashSet;

use crate::error::{Error, Result};

use super::ops::{self, ElemKind};
use super::{el, to_f64, Element, Inner, Tensor};

/// Provenance of a tensor: the operation that produced it, holding handles
/// to the inputs so the backward pass can reach them.
pub(crate) enum Op<T: Element> {
    Leaf,
    Conv2d {
        input: Tensor<T>,
        weight: Tensor<T>,
        bias: Tensor<T>,
        stride: usize,
        pad: usize,
    },
    Relu {
        input: Tensor<T>,
    },
    Sigmoid {
        input: Tensor<T>,
    },
    MaxPool2d {
        input: Tensor<T>,
        // flat input index of the window maximum, one per output cell
        argmax: Vec<usize>,
    },
    UpsampleBilinear {
        input: Tensor<T>,
        factor: usize,
    },
    Elementwise {
        a: Tensor<T>,
        b: Tensor<T>,
        kind: ElemKind,
    },
    ReduceSum {
        input: Tensor<T>,
    },
    ReduceMean {
        input: Tensor<T>,
    },
    L2Loss {
        pred: Tensor<T>,
        gt: Tensor<T>,
        squared: bool,
    },
    BceLoss {
        pred: Tensor<T>,
        target: Tensor<T>,
    },
}

impl<T: Element> Op<T> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Relu { .. } => "relu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::MaxPool2d { .. } => "maxpool2d",
            Op::UpsampleBilinear { .. } => "upsample_bilinear",
            Op::Elementwise { .. } => "elementwise",
            Op::ReduceSum { .. } => "reduce_sum",
            Op::ReduceMean { .. } => "reduce_mean",
            Op::L2Loss { .. } => "l2_loss",
            Op::BceLoss { .. } => "bce_loss",
        }
    }

    fn inputs(&self) -> Vec<&Tensor<T>> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Conv2d {
                input,
                weight,
                bias,
                ..
            } => vec![input, weight, bias],
            Op::Relu { input }
            | Op::Sigmoid { input }
            | Op::MaxPool2d { input, .. }
            | Op::UpsampleBilinear { input, .. }
            | Op::ReduceSum { input }
            | Op::ReduceMean { input } => vec![input],
            Op::Elementwise { a, b, .. } => vec![a, b],
            Op::L2Loss { pred, gt, .. } => vec![pred, gt],
            Op::BceLoss { pred, target } => vec![pred, target],
        }
    }

    pub(crate) fn any_input_requires_grad(&self) -> bool {
        self.inputs().iter().any(|t| t.requires_grad())
    }
}

/// Topologically ordered record of the operations reachable from a root;
/// traversal visits each node exactly once, pruned to gradient-carrying
/// branches.
struct OpGraph<T: Element> {
    // postorder: every node appears after all of its inputs
    order: Vec<Tensor<T>>,
}

impl<T: Element> OpGraph<T> {
    fn trace(root: &Tensor<T>) -> OpGraph<T> {
        let mut order = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        // iterative postorder DFS; the bool marks "children already expanded"
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(root.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.id()) {
                continue;
            }
            stack.push((node.clone(), true));
            for input in node.inner.op.inputs() {
                if input.requires_grad() && !visited.contains(&input.id()) {
                    stack.push((input.clone(), false));
                }
            }
        }
        OpGraph { order }
    }
}

/// Populates `grad` for every tensor with `requires_grad` on the path to
/// `loss`. Gradients accumulate additively where a tensor fans out. Calling
/// this twice on the same tensor without [`Tensor::clear_grad`] is an error.
pub fn backward<T: Element>(loss: &Tensor<T>) -> Result<()> {
    if loss.numel() != 1 {
        return Err(Error::Contract(format!(
            "backward requires a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }
    if !loss.requires_grad() || matches!(loss.inner.op, Op::Leaf) {
        return Err(Error::Contract(
            "backward on a detached tensor: no recorded operations lead to a trainable input"
                .to_string(),
        ));
    }
    if loss
        .inner
        .backward_done
        .swap(true, std::sync::atomic::Ordering::Relaxed)
    {
        return Err(Error::Contract(
            "backward already called on this tensor; clear_grad() first".to_string(),
        ));
    }

    let graph = OpGraph::trace(loss);
    // Intermediate gradients are scratch for this pass; only leaves keep
    // accumulating across passes.
    for node in &graph.order {
        if !matches!(node.inner.op, Op::Leaf) {
            *node.inner.grad.lock().unwrap() = None;
        }
    }
    loss.accum_grad(&[T::one()]);
    for node in graph.order.iter().rev() {
        let grad = node.inner.grad.lock().unwrap().clone();
        let Some(grad) = grad else { continue };
        backprop_node(&node.inner, &grad);
    }
    Ok(())
}

fn backprop_node<T: Element>(node: &Inner<T>, gout: &[T]) {
    match &node.op {
        Op::Leaf => {}
        Op::Conv2d {
            input,
            weight,
            bias,
            stride,
            pad,
        } => {
            if input.requires_grad() {
                let gi = ops::conv2d_bwd_input(
                    gout,
                    &node.shape,
                    weight.data(),
                    weight.shape(),
                    input.shape(),
                    *stride,
                    *pad,
                );
                input.accum_grad(&gi);
            }
            if weight.requires_grad() {
                let gw = ops::conv2d_bwd_weight(
                    gout,
                    &node.shape,
                    input.data(),
                    input.shape(),
                    weight.shape(),
                    *stride,
                    *pad,
                );
                weight.accum_grad(&gw);
            }
            if bias.requires_grad() {
                let gb = ops::conv2d_bwd_bias(gout, &node.shape);
                bias.accum_grad(&gb);
            }
        }
        Op::Relu { input } => {
            if input.requires_grad() {
                let gi: Vec<T> = input
                    .data()
                    .iter()
                    .zip(gout)
                    .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
                    .collect();
                input.accum_grad(&gi);
            }
        }
        Op::Sigmoid { input } => {
            if input.requires_grad() {
                // node.data holds s = sigmoid(x)
                let gi: Vec<T> = node
                    .data
                    .iter()
                    .zip(gout)
                    .map(|(&s, &g)| g * s * (T::one() - s))
                    .collect();
                input.accum_grad(&gi);
            }
        }
        Op::MaxPool2d { input, argmax } => {
            if input.requires_grad() {
                let mut gi = vec![T::zero(); input.numel()];
                for (out_idx, &in_idx) in argmax.iter().enumerate() {
                    gi[in_idx] += gout[out_idx];
                }
                input.accum_grad(&gi);
            }
        }
        Op::UpsampleBilinear { input, factor } => {
            if input.requires_grad() {
                let gi = ops::upsample_bilinear_bwd(gout, &node.shape, input.shape(), *factor);
                input.accum_grad(&gi);
            }
        }
        Op::Elementwise { a, b, kind } => {
            backprop_elementwise(a, b, *kind, gout);
        }
        Op::ReduceSum { input } => {
            if input.requires_grad() {
                let g0 = gout[0];
                input.accum_grad(&vec![g0; input.numel()]);
            }
        }
        Op::ReduceMean { input } => {
            if input.requires_grad() {
                let g0 = gout[0] / el(input.numel() as f64);
                input.accum_grad(&vec![g0; input.numel()]);
            }
        }
        Op::L2Loss { pred, gt, squared } => {
            backprop_l2_loss(pred, gt, *squared, gout[0]);
        }
        Op::BceLoss { pred, target } => {
            backprop_bce_loss(pred, target, gout[0]);
        }
    }
}

fn backprop_elementwise<T: Element>(a: &Tensor<T>, b: &Tensor<T>, kind: ElemKind, gout: &[T]) {
    let broadcast = a.shape() != b.shape();
    if a.requires_grad() {
        let ga: Vec<T> = match kind {
            ElemKind::Add | ElemKind::Sub => gout.to_vec(),
            ElemKind::Mul => {
                if broadcast {
                    let mut ga = vec![T::zero(); a.numel()];
                    ops::for_each_broadcast(a.shape(), |a_idx, b_idx| {
                        ga[a_idx] = gout[a_idx] * b.data()[b_idx];
                    });
                    ga
                } else {
                    gout.iter().zip(b.data()).map(|(&g, &bv)| g * bv).collect()
                }
            }
        };
        a.accum_grad(&ga);
    }
    if b.requires_grad() {
        let sign = if matches!(kind, ElemKind::Sub) {
            -T::one()
        } else {
            T::one()
        };
        if broadcast {
            // gradients for the broadcast operand sum over the channel axis
            let mut gb = vec![T::zero(); b.numel()];
            ops::for_each_broadcast(a.shape(), |a_idx, b_idx| match kind {
                ElemKind::Mul => gb[b_idx] += gout[a_idx] * a.data()[a_idx],
                _ => gb[b_idx] += sign * gout[a_idx],
            });
            b.accum_grad(&gb);
        } else {
            let gb: Vec<T> = match kind {
                ElemKind::Mul => gout.iter().zip(a.data()).map(|(&g, &av)| g * av).collect(),
                _ => gout.iter().map(|&g| sign * g).collect(),
            };
            b.accum_grad(&gb);
        }
    }
}

fn backprop_l2_loss<T: Element>(pred: &Tensor<T>, gt: &Tensor<T>, squared: bool, g0: T) {
    let batch = pred.shape()[0];
    let per_sample = pred.numel() / batch;
    let inv_n = el::<T>(1.0 / batch as f64);
    let mut gp = vec![T::zero(); pred.numel()];
    for i in 0..batch {
        let lo = i * per_sample;
        let hi = lo + per_sample;
        if squared {
            for j in lo..hi {
                let d = pred.data()[j] - gt.data()[j];
                gp[j] = g0 * inv_n * el::<T>(2.0) * d;
            }
        } else {
            let mut sq = 0.0f64;
            for j in lo..hi {
                let d = to_f64(pred.data()[j] - gt.data()[j]);
                sq += d * d;
            }
            let norm = sq.sqrt();
            // the norm is not differentiable at 0; its gradient is defined as 0
            if norm > 0.0 {
                let scale = g0 * inv_n / el::<T>(norm);
                for j in lo..hi {
                    gp[j] = scale * (pred.data()[j] - gt.data()[j]);
                }
            }
        }
    }
    if pred.requires_grad() {
        pred.accum_grad(&gp);
    }
    if gt.requires_grad() {
        let gg: Vec<T> = gp.iter().map(|&v| -v).collect();
        gt.accum_grad(&gg);
    }
}

fn backprop_bce_loss<T: Element>(pred: &Tensor<T>, target: &Tensor<T>, g0: T) {
    let n = pred.numel();
    let inv_n = 1.0 / n as f64;
    let clamp = ops::BCE_CLAMP;
    if pred.requires_grad() {
        let gp: Vec<T> = pred
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| {
                let p = to_f64(p);
                let t = to_f64(t);
                // terms where the log argument is clamped are locally constant
                let d1 = if p > clamp { -t / p } else { 0.0 };
                let d2 = if 1.0 - p > clamp {
                    (1.0 - t) / (1.0 - p)
                } else {
                    0.0
                };
                g0 * el::<T>((d1 + d2) * inv_n)
            })
            .collect();
        pred.accum_grad(&gp);
    }
    if target.requires_grad() {
        let gt: Vec<T> = pred
            .data()
            .iter()
            .map(|&p| {
                let p = to_f64(p);
                let lp = p.max(clamp).ln();
                let lq = (1.0 - p).max(clamp).ln();
                g0 * el::<T>(-(lp - lq) * inv_n)
            })
            .collect();
        target.accum_grad(&gt);
    }
}
