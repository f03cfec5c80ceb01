//! Central finite-difference verification of recorded gradients.

use crate::error::{Error, Result};
use crate::rng;

use super::{ops, ElemKind, Tensor};

/// Compares the backward-pass gradient of `f` against central finite
/// differences at every coordinate of every grad-tracking input, and returns
/// the maximum relative error with denominator max(|analytic|, |numeric|,
/// 1e-8).
///
/// `f` must produce a scalar and must not capture the perturbed inputs by
/// any path other than the slice it is given. Meant for 64-bit mode.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    if inputs.iter().all(|t| !t.requires_grad()) {
        return Err(Error::Contract(
            "grad_check needs at least one input with requires_grad".to_string(),
        ));
    }
    for t in inputs {
        t.clear_grad();
    }
    let out = f(inputs)?;
    if out.numel() != 1 {
        return Err(Error::Contract(format!(
            "grad_check function must return a scalar, got shape {:?}",
            out.shape()
        )));
    }
    out.backward()?;

    let mut max_rel = 0.0f64;
    for (i, inp) in inputs.iter().enumerate() {
        if !inp.requires_grad() {
            continue;
        }
        let analytic = inp.grad().ok_or_else(|| {
            Error::Contract(format!("no gradient reached grad_check input {i}"))
        })?;
        for j in 0..inp.numel() {
            let probe = |delta: f64| -> Result<f64> {
                let mut data = inp.data().to_vec();
                data[j] += delta;
                let mut probe_inputs: Vec<Tensor<f64>> = inputs.to_vec();
                probe_inputs[i] = Tensor::leaf(inp.shape(), data)?;
                f(&probe_inputs)?.item()
            };
            let numeric = (probe(eps)? - probe(-eps)?) / (2.0 * eps);
            let a = analytic[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

/// Outcome of one named finite-difference check.
pub struct GradCheckCase {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckCase {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

const OP_TOL: f64 = 1e-4;
const OP_EPS: f64 = 1e-5;

fn rand_tensor(rng: &mut rand_chacha::ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng::uniform_in(rng, lo, hi)).collect();
    Tensor::param(shape, data).expect("shape/data consistent")
}

// magnitudes bounded away from zero so finite differences never straddle
// the relu kink
fn rand_tensor_off_kink(rng: &mut rand_chacha::ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel)
        .map(|_| {
            let mag = rng::uniform_in(rng, 0.2, 1.5);
            if rng::uniform(rng) < 0.5 {
                -mag
            } else {
                mag
            }
        })
        .collect();
    Tensor::param(shape, data).expect("shape/data consistent")
}

/// Seeded finite-difference checks covering every differentiable op, at the
/// standard per-op tolerance of 1e-4. Used by the op-level gradient check
/// command and the test suite.
pub fn op_gradient_checks() -> Result<Vec<GradCheckCase>> {
    let mut rng = rng::rng_from_seed(0x6f70636865636b);
    let mut cases = Vec::new();
    let mut push = |name: &str, err: f64| {
        cases.push(GradCheckCase {
            name: name.to_string(),
            max_rel_err: err,
            tolerance: OP_TOL,
        });
    };

    {
        let x = rand_tensor(&mut rng, &[1, 2, 5, 5], -1.0, 1.0);
        let w = rand_tensor(&mut rng, &[3, 2, 3, 3], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[3], -0.5, 0.5);
        let s = rand_tensor(&mut rng, &[1, 3, 5, 5], 0.5, 1.5);
        let err = grad_check(
            |t| Ok(ops::conv2d(&t[0], &t[1], &t[2], 1, 1)?.mul(&t[3])?.sum()),
            &[x, w, b, s],
            OP_EPS,
        )?;
        push("conv2d stride=1 pad=1", err);
    }
    {
        let x = rand_tensor(&mut rng, &[2, 3, 7, 7], -1.0, 1.0);
        let w = rand_tensor(&mut rng, &[2, 3, 3, 3], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[2], -0.5, 0.5);
        let err = grad_check(
            |t| Ok(ops::reduce_sum(&ops::conv2d(&t[0], &t[1], &t[2], 2, 1)?)),
            &[x, w, b],
            OP_EPS,
        )?;
        push("conv2d stride=2 pad=1", err);
    }
    {
        let x = rand_tensor_off_kink(&mut rng, &[1, 2, 4, 4]);
        let s = rand_tensor(&mut rng, &[1, 2, 4, 4], 0.5, 1.5);
        let err = grad_check(
            |t| ops::relu(&t[0]).mul(&t[1])?.sum().mul(&Tensor::scalar(0.5)),
            &[x, s],
            OP_EPS,
        )?;
        push("relu", err);
    }
    {
        let x = rand_tensor(&mut rng, &[1, 1, 4, 4], -3.0, 3.0);
        let s = rand_tensor(&mut rng, &[1, 1, 4, 4], 0.5, 1.5);
        let err = grad_check(
            |t| Ok(ops::sigmoid(&t[0]).mul(&t[1])?.sum()),
            &[x, s],
            OP_EPS,
        )?;
        push("sigmoid", err);
    }
    {
        let x = rand_tensor(&mut rng, &[1, 2, 6, 6], -1.0, 1.0);
        let s = rand_tensor(&mut rng, &[1, 2, 3, 3], 0.5, 1.5);
        let err = grad_check(
            |t| Ok(ops::maxpool2d(&t[0])?.mul(&t[1])?.sum()),
            &[x, s],
            OP_EPS,
        )?;
        push("maxpool2d", err);
    }
    {
        let x = rand_tensor(&mut rng, &[1, 2, 3, 3], -1.0, 1.0);
        let s = rand_tensor(&mut rng, &[1, 2, 12, 12], 0.5, 1.5);
        let err = grad_check(
            |t| Ok(ops::upsample_bilinear(&t[0], 4)?.mul(&t[1])?.sum()),
            &[x, s],
            OP_EPS,
        )?;
        push("upsample_bilinear x4", err);
    }
    for kind in [ElemKind::Add, ElemKind::Sub, ElemKind::Mul] {
        let a = rand_tensor(&mut rng, &[2, 3, 4, 4], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[2, 3, 4, 4], -1.0, 1.0);
        let s = rand_tensor(&mut rng, &[2, 3, 4, 4], 0.5, 1.5);
        let err = grad_check(
            |t| Ok(ops::elementwise(&t[0], &t[1], kind)?.mul(&t[2])?.sum()),
            &[a, b, s],
            OP_EPS,
        )?;
        push(&format!("elementwise {kind:?}"), err);
    }
    {
        let a = rand_tensor(&mut rng, &[2, 3, 4, 4], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[2, 1, 4, 4], -1.0, 1.0);
        let s = rand_tensor(&mut rng, &[2, 3, 4, 4], 0.5, 1.5);
        let err = grad_check(
            |t| {
                Ok(ops::elementwise(&t[0], &t[1], ElemKind::Mul)?
                    .mul(&t[2])?
                    .sum())
            },
            &[a, b, s],
            OP_EPS,
        )?;
        push("elementwise Mul broadcast N x 1 x H x W", err);
    }
    {
        let x = rand_tensor(&mut rng, &[2, 2, 3, 3], -1.0, 1.0);
        let err = grad_check(|t| Ok(t[0].sum()), &[x], OP_EPS)?;
        push("reduce_sum", err);
        let x = rand_tensor(&mut rng, &[2, 2, 3, 3], -1.0, 1.0);
        let err = grad_check(|t| Ok(t[0].mean()), &[x], OP_EPS)?;
        push("reduce_mean", err);
    }
    {
        let p = rand_tensor(&mut rng, &[2, 1, 4, 4], -1.0, 1.0);
        let g = rand_tensor(&mut rng, &[2, 1, 4, 4], -1.0, 1.0);
        let err = grad_check(|t| ops::l2_loss(&t[0], &t[1], false), &[p, g], OP_EPS)?;
        push("l2_loss", err);
        let p = rand_tensor(&mut rng, &[2, 1, 4, 4], -1.0, 1.0);
        let g = rand_tensor(&mut rng, &[2, 1, 4, 4], -1.0, 1.0);
        let err = grad_check(|t| ops::l2_loss(&t[0], &t[1], true), &[p, g], OP_EPS)?;
        push("l2_loss squared", err);
    }
    {
        let p = rand_tensor(&mut rng, &[2, 1, 4, 4], 0.05, 0.95);
        let tgt_data: Vec<f64> = (0..32)
            .map(|_| if rng::uniform(&mut rng) < 0.5 { 0.0 } else { 1.0 })
            .collect();
        let tgt = Tensor::leaf(&[2, 1, 4, 4], tgt_data)?;
        let err = grad_check(|t| ops::bce_loss(&t[0], &tgt), &[p], OP_EPS)?;
        push("bce_loss", err);
    }
    {
        // inverse-attention subgraph: F' = F - F (.) sigmoid(M), broadcast
        let f = rand_tensor(&mut rng, &[1, 4, 3, 3], -1.0, 1.0);
        let m = rand_tensor(&mut rng, &[1, 1, 3, 3], -2.0, 2.0);
        let err = grad_check(
            |t| {
                let a_inv = ops::sigmoid(&t[1]);
                let suppressed = t[0].mul(&a_inv)?;
                let refined = t[0].sub(&suppressed)?;
                refined.mul(&refined)?.sum().mul(&Tensor::scalar(0.5))
            },
            &[f, m],
            OP_EPS,
        )?;
        push("inverse-attention subgraph", err);
    }

    Ok(cases)
}
