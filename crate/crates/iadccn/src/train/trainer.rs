//! The patch-based training loop with optional hard sample mining.

use crate::data::{
    augment, downsample_density, downsample_mask_any, generate_density_map, generate_seg_mask,
    sample_patches, AnnotatedImage, DensityConfig,
};
use crate::error::{Error, Result};
use crate::eval::count_from_values;
use crate::model::{forward, infer_density, IADCCNConfig, ModelParams};
use crate::rng;
use crate::tensor::{el, sigmoid, to_f64, Element, Tensor};

use super::{adam_step, collect_grads, density_loss, seg_loss, total_loss, TrainConfig, TrainState};

/// One training sample: an augmented patch with its ground truth at the
/// network-output grid.
pub struct TrainSample<T> {
    pub image_id: String,
    /// C×S×S input values.
    pub input: Vec<T>,
    /// Ground-truth density, sum-pooled to the output grid.
    pub gt_density: Vec<T>,
    /// Inverted (background) mask, max-pool-derived at the output grid.
    pub inv_target: Vec<T>,
    /// Number of annotated points inside the patch.
    pub count: f64,
}

pub struct PatchDataset<T> {
    pub samples: Vec<TrainSample<T>>,
    pub channels: usize,
    pub patch_size: usize,
    pub out_size: usize,
}

/// Builds the training set: `patches_per_image` augmented crops per image,
/// each with density and inverse-mask ground truth. Per-image RNG streams
/// derive from the seed and the image id, so the set is independent of
/// image order.
pub fn build_patch_dataset<T: Element>(
    images: &[AnnotatedImage],
    mcfg: &IADCCNConfig,
    tcfg: &TrainConfig,
    dcfg: &DensityConfig,
) -> Result<PatchDataset<T>> {
    let stride = mcfg.output_stride();
    let size = tcfg.patch_size;
    if size % stride != 0 {
        return Err(Error::Config(format!(
            "patch_size {size} is not divisible by the output stride {stride}"
        )));
    }
    let out_size = size / stride;
    let mut samples = Vec::with_capacity(images.len() * tcfg.patches_per_image);
    for img in images {
        if img.channels != mcfg.in_channels {
            return Err(Error::Dim(format!(
                "image {} has {} channels, model expects {}",
                img.id, img.channels, mcfg.in_channels
            )));
        }
        let mut prng = rng::rng_from_seed(rng::derive_seed(tcfg.seed, &img.id));
        for patch in sample_patches(img, tcfg.patches_per_image, size, &mut prng)? {
            let patch = augment(&patch, &mut prng, tcfg.noise_amp);
            let density = generate_density_map(&patch.points, size, size, dcfg)?;
            let gt4 = downsample_density(&density, stride)?;
            let mask = generate_seg_mask(&density, dcfg.mask_threshold);
            let inv4 = downsample_mask_any(&mask, stride)?.invert();

            let c = patch.channels;
            let mut input = vec![T::zero(); c * size * size];
            for y in 0..size {
                for x in 0..size {
                    for ch in 0..c {
                        input[(ch * size + y) * size + x] =
                            el(patch.pixels[(y * size + x) * c + ch]);
                    }
                }
            }
            samples.push(TrainSample {
                image_id: patch.id.clone(),
                input,
                gt_density: gt4.values.iter().map(|&v| el(v)).collect(),
                inv_target: inv4.values.iter().map(|&v| el(v as f64)).collect(),
                count: patch.points.len() as f64,
            });
        }
    }
    Ok(PatchDataset {
        samples,
        channels: mcfg.in_channels,
        patch_size: size,
        out_size,
    })
}

/// Per-epoch record emitted by [`train`].
#[derive(Clone, Debug)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean absolute count error over the training steps of this epoch.
    pub train_mae: f64,
    /// Whole-image MAE on the held-out validation images, when any.
    pub val_mae: Option<f64>,
    pub density_loss: f64,
    /// Mean segmentation loss, absent for the plain base network.
    pub seg_loss: Option<f64>,
    pub active_set_size: usize,
}

pub struct TrainOutcome<T: Element> {
    pub params: ModelParams<T>,
    pub state: TrainState<T>,
    pub history: Vec<EpochMetrics>,
}

fn stack<T: Element>(
    dataset: &PatchDataset<T>,
    indices: &[usize],
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let n = indices.len();
    let (c, s, o) = (dataset.channels, dataset.patch_size, dataset.out_size);
    let mut input = Vec::with_capacity(n * c * s * s);
    let mut gt = Vec::with_capacity(n * o * o);
    let mut inv = Vec::with_capacity(n * o * o);
    for &i in indices {
        let sample = &dataset.samples[i];
        input.extend_from_slice(&sample.input);
        gt.extend_from_slice(&sample.gt_density);
        inv.extend_from_slice(&sample.inv_target);
    }
    Ok((
        Tensor::leaf(&[n, c, s, s], input)?,
        Tensor::leaf(&[n, 1, o, o], gt)?,
        Tensor::leaf(&[n, 1, o, o], inv)?,
    ))
}

fn seg_term<T: Element>(
    out: &crate::model::ForwardOutput<T>,
    inv: &Tensor<T>,
) -> Result<Option<Tensor<T>>> {
    let mut term: Option<Tensor<T>> = None;
    if let Some(a_inv) = &out.a_inv {
        term = Some(seg_loss(a_inv, inv)?);
    }
    if let Some(logits) = &out.seg_logits {
        let head = seg_loss(&sigmoid(logits), inv)?;
        term = Some(match term {
            Some(t) => t.add(&head)?,
            None => head,
        });
    }
    Ok(term)
}

// per-sample predicted counts from a batched density output
fn batch_counts<T: Element>(density: &Tensor<T>, batch: usize) -> Vec<f64> {
    let per = density.numel() / batch;
    (0..batch)
        .map(|i| {
            let plane: Vec<f64> = density.data()[i * per..(i + 1) * per]
                .iter()
                .map(|&v| to_f64(v))
                .collect();
            count_from_values(&plane)
        })
        .collect()
}

fn shuffled(indices: &[usize], rng: &mut rand_chacha::ChaCha8Rng) -> Vec<usize> {
    let mut order = indices.to_vec();
    // Fisher-Yates on the explicit stream for reproducibility
    for i in (1..order.len()).rev() {
        let j = rand::Rng::random_range(rng, 0..=i);
        order.swap(i, j);
    }
    order
}

/// Trains from scratch on `images`: splits off the validation fraction by
/// image, builds the augmented patch set, and runs Adam over the combined
/// loss. Every `hsm_interval` epochs (when enabled) the per-sample count
/// errors over the full training set re-select the active samples. Returns
/// the trained parameters, final state, and per-epoch metrics.
pub fn train<T: Element>(
    images: &[AnnotatedImage],
    mcfg: &IADCCNConfig,
    tcfg: &TrainConfig,
    dcfg: &DensityConfig,
    on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome<T>> {
    mcfg.validate()?;
    let mut loop_rng = rng::rng_from_seed(tcfg.seed);
    let params: ModelParams<T> = ModelParams::init(mcfg, &mut loop_rng)?;
    train_inner(images, params, tcfg, dcfg, loop_rng, on_epoch)
}

/// [`train`] continuing from existing parameters (fresh optimizer state).
pub fn train_resumed<T: Element>(
    images: &[AnnotatedImage],
    params: ModelParams<T>,
    tcfg: &TrainConfig,
    dcfg: &DensityConfig,
    on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome<T>> {
    let loop_rng = rng::rng_from_seed(tcfg.seed);
    train_inner(images, params, tcfg, dcfg, loop_rng, on_epoch)
}

fn train_inner<T: Element>(
    images: &[AnnotatedImage],
    mut params: ModelParams<T>,
    tcfg: &TrainConfig,
    dcfg: &DensityConfig,
    mut loop_rng: rand_chacha::ChaCha8Rng,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome<T>> {
    let mcfg = params.config().clone();
    let mcfg = &mcfg;
    tcfg.validate()?;
    if images.is_empty() {
        return Err(Error::Data("training dataset is empty".to_string()));
    }

    // validation split is by image to avoid patch-level leakage
    let image_order = shuffled(&(0..images.len()).collect::<Vec<_>>(), &mut loop_rng);
    let val_count = if tcfg.val_fraction > 0.0 {
        ((images.len() as f64 * tcfg.val_fraction).floor() as usize).max(1)
    } else {
        0
    };
    let val_images: Vec<&AnnotatedImage> =
        image_order[..val_count].iter().map(|&i| &images[i]).collect();
    let train_images: Vec<AnnotatedImage> = image_order[val_count..]
        .iter()
        .map(|&i| images[i].clone())
        .collect();
    if train_images.len() < 2 {
        return Err(Error::Data(format!(
            "only {} training image(s) remain after the validation split; need at least 2",
            train_images.len()
        )));
    }

    let dataset = build_patch_dataset::<T>(&train_images, mcfg, tcfg, dcfg)?;
    let mut state = TrainState::new(loop_rng, dataset.samples.len());
    let mut history = Vec::with_capacity(tcfg.epochs);

    for epoch in 1..=tcfg.epochs {
        state.epoch = epoch;
        let order = shuffled(&state.active_indices, &mut state.rng);
        let mut sum_ld = 0.0;
        let mut sum_ls = 0.0;
        let mut batches = 0usize;
        let mut has_seg = false;
        let mut abs_err_sum = 0.0;

        for chunk in order.chunks(tcfg.batch_size) {
            let (x, gt, inv) = stack(&dataset, chunk)?;
            let out = forward(&params, &x)?;
            let l_d = density_loss(&out.density, &gt, tcfg.squared_l2)?;
            let l_s = seg_term(&out, &inv)?;
            let loss = total_loss(&l_d, l_s.as_ref(), tcfg.lambda_s)?;
            loss.backward()?;
            let grads = collect_grads(&params)?;
            adam_step(&mut params, &grads, &mut state, tcfg)?;

            sum_ld += to_f64(l_d.item()?);
            if let Some(ls) = &l_s {
                sum_ls += to_f64(ls.item()?);
                has_seg = true;
            }
            batches += 1;
            let counts = batch_counts(&out.density, chunk.len());
            for (pred, &i) in counts.iter().zip(chunk) {
                abs_err_sum += (pred - dataset.samples[i].count).abs();
            }
        }

        let val_mae = if val_images.is_empty() {
            None
        } else {
            let mut total = 0.0;
            for img in &val_images {
                let d = infer_density(&params, img)?;
                total += (count_from_values(&d.values) - img.points.len() as f64).abs();
            }
            Some(total / val_images.len() as f64)
        };

        if tcfg.hsm_enabled && epoch % tcfg.hsm_interval == 0 && epoch < tcfg.epochs {
            let mut errors = Vec::with_capacity(dataset.samples.len());
            for i in 0..dataset.samples.len() {
                let (x, _, _) = stack(&dataset, &[i])?;
                let out = forward(&params, &x)?;
                let pred = batch_counts(&out.density, 1)[0];
                errors.push((pred - dataset.samples[i].count).abs());
            }
            state.active_indices = super::hard_sample_mine(
                &errors,
                tcfg.hsm_bins,
                tcfg.hsm_min_fraction,
            )?;
        }

        let metrics = EpochMetrics {
            epoch,
            train_mae: abs_err_sum / order.len() as f64,
            val_mae,
            density_loss: sum_ld / batches as f64,
            seg_loss: has_seg.then(|| sum_ls / batches as f64),
            active_set_size: state.active_indices.len(),
        };
        on_epoch(&metrics);
        history.push(metrics);
    }

    Ok(TrainOutcome {
        params,
        state,
        history,
    })
}

/// Metrics history as CSV: epoch, train_mae, val_mae, L_d, L_s,
/// active_set_size. Absent values stay empty.
pub fn metrics_to_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,train_mae,val_mae,l_d,l_s,active_set_size\n");
    for m in history {
        let val = m.val_mae.map(|v| v.to_string()).unwrap_or_default();
        let ls = m.seg_loss.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.epoch, m.train_mae, val, m.density_loss, ls, m.active_set_size
        ));
    }
    out
}
