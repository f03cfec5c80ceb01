//! Counting metrics, dataset evaluation, and the four-row ablation harness.

#[cfg(test)]
mod tests;

use std::time::Instant;

use serde::Serialize;

use crate::data::{AnnotatedImage, DensityConfig, DensityMap};
use crate::error::{Error, Result};
use crate::model::{infer_density, IADCCNConfig, ModelParams};
use crate::rng;
use crate::tensor::Element;
use crate::train::{train, TrainConfig};

/// Count estimate from raw density values: negatives clamp to 0 (training
/// never clamps; counting always does), then everything sums.
pub fn count_from_values(values: &[f64]) -> f64 {
    values.iter().map(|&v| v.max(0.0)).sum()
}

pub fn count_from_density(d: &DensityMap) -> f64 {
    count_from_values(&d.values)
}

/// Mean absolute count error.
pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_lengths(y, y_hat)?;
    let n = y.len() as f64;
    Ok(y.iter()
        .zip(y_hat)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n)
}

/// Root of the mean squared count error.
pub fn mse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_lengths(y, y_hat)?;
    let n = y.len() as f64;
    Ok((y.iter()
        .zip(y_hat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
        .sqrt())
}

fn check_lengths(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::Data("metric over an empty sample list".to_string()));
    }
    if y.len() != y_hat.len() {
        return Err(Error::Dim(format!(
            "metric length mismatch: {} ground-truth vs {} estimates",
            y.len(),
            y_hat.len()
        )));
    }
    Ok(())
}

/// Per-sample evaluation record.
#[derive(Clone, Debug, Serialize)]
pub struct SampleResult {
    pub id: String,
    /// Ground-truth count.
    pub y: f64,
    /// Estimated count (clamped non-negative).
    pub y_hat: f64,
    pub abs_err: f64,
}

/// Evaluation outcome over a dataset.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub samples: Vec<SampleResult>,
    pub mae: f64,
    pub mse: f64,
    pub ms_per_image: f64,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,y,y_hat,abs_err\n");
        for s in &self.samples {
            out.push_str(&format!("{},{},{},{}\n", s.id, s.y, s.y_hat, s.abs_err));
        }
        out
    }

    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct Summary<'a> {
            mae: f64,
            mse: f64,
            n: usize,
            ms_per_image: f64,
            #[serde(skip_serializing_if = "Option::is_none")]
            note: Option<&'a str>,
        }
        serde_json::to_string_pretty(&Summary {
            mae: self.mae,
            mse: self.mse,
            n: self.samples.len(),
            ms_per_image: self.ms_per_image,
            note: None,
        })
        .expect("summary serializes")
    }
}

/// Whole-image inference over a dataset (padded per the model's policy),
/// ground truth taken from the annotation counts. Wall-clock is recorded
/// per image and reported as a mean. Read-only on the parameters.
pub fn evaluate<T: Element>(
    params: &ModelParams<T>,
    images: &[AnnotatedImage],
) -> Result<EvalReport> {
    evaluate_with(images, |img| infer_density(params, img))
}

/// [`evaluate`] over an arbitrary density estimator; lets tests run stub
/// models (e.g. one that echoes the ground truth).
pub fn evaluate_with(
    images: &[AnnotatedImage],
    mut infer: impl FnMut(&AnnotatedImage) -> Result<DensityMap>,
) -> Result<EvalReport> {
    if images.is_empty() {
        return Err(Error::Data("evaluation dataset is empty".to_string()));
    }
    let mut samples = Vec::with_capacity(images.len());
    let mut total_ms = 0.0;
    for img in images {
        let start = Instant::now();
        let density = infer(img)?;
        total_ms += start.elapsed().as_secs_f64() * 1e3;
        let y = img.points.len() as f64;
        let y_hat = count_from_density(&density);
        samples.push(SampleResult {
            id: img.id.clone(),
            y,
            y_hat,
            abs_err: (y - y_hat).abs(),
        });
    }
    let y: Vec<f64> = samples.iter().map(|s| s.y).collect();
    let y_hat: Vec<f64> = samples.iter().map(|s| s.y_hat).collect();
    let report = EvalReport {
        mae: mae(&y, &y_hat)?,
        mse: mse(&y, &y_hat)?,
        ms_per_image: total_ms / images.len() as f64,
        samples,
    };
    debug_assert!(report.mae <= report.mse + 1e-12);
    Ok(report)
}

/// One row of the ablation table.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub config: String,
    pub mae: f64,
    pub mse: f64,
    /// Percent improvement in MAE over the previous row; the first row has
    /// none.
    pub mae_improvement_pct: Option<f64>,
    pub mse_improvement_pct: Option<f64>,
}

pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("config,mae,mse,mae_improvement_pct,mse_improvement_pct\n");
        for r in &self.rows {
            let imp = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.config,
                r.mae,
                r.mse,
                imp(r.mae_improvement_pct),
                imp(r.mse_improvement_pct)
            ));
        }
        out
    }
}

/// The four studied configurations, in ablation order. Rows differ only in
/// the attention/segmentation/mining flags.
pub fn ablation_configs(base: &IADCCNConfig, tcfg: &TrainConfig) -> [(String, IADCCNConfig, TrainConfig); 4] {
    let mut plain_model = base.clone();
    plain_model.iab_enabled = false;
    plain_model.seg_head_enabled = false;
    let mut plain_train = tcfg.clone();
    plain_train.hsm_enabled = false;

    let mut with_seg = plain_model.clone();
    with_seg.seg_head_enabled = true;

    let mut with_iab = plain_model.clone();
    with_iab.iab_enabled = true;

    let hsm_train = {
        let mut t = plain_train.clone();
        t.hsm_enabled = true;
        t
    };

    [
        ("base".to_string(), plain_model.clone(), plain_train.clone()),
        ("base+s".to_string(), with_seg, plain_train.clone()),
        ("base+iab".to_string(), with_iab.clone(), plain_train),
        ("base+iab+hsm".to_string(), with_iab, hsm_train),
    ]
}

/// Trains the four ablation configurations from identical seeds on the same
/// train/test split and evaluates each on the identical held-out set.
/// `holdout_fraction` of the images (at least one) form that set.
pub fn run_ablation<T: Element>(
    images: &[AnnotatedImage],
    base_cfg: &IADCCNConfig,
    tcfg: &TrainConfig,
    dcfg: &DensityConfig,
    holdout_fraction: f64,
    mut on_epoch: impl FnMut(&str, &crate::train::EpochMetrics),
) -> Result<AblationTable> {
    if images.len() < 4 {
        return Err(Error::Data(format!(
            "ablation needs at least 4 images, got {}",
            images.len()
        )));
    }
    if !(0.0 < holdout_fraction && holdout_fraction < 1.0) {
        return Err(Error::Config(format!(
            "holdout_fraction must be in (0, 1), got {holdout_fraction}"
        )));
    }
    // the split is seeded and shared by all four rows
    let mut split_rng = rng::rng_from_seed(rng::derive_seed(tcfg.seed, "ablation-split"));
    let mut order: Vec<usize> = (0..images.len()).collect();
    for i in (1..order.len()).rev() {
        let j = rand::Rng::random_range(&mut split_rng, 0..=i);
        order.swap(i, j);
    }
    let holdout = ((images.len() as f64 * holdout_fraction).floor() as usize).max(1);
    let test_images: Vec<AnnotatedImage> =
        order[..holdout].iter().map(|&i| images[i].clone()).collect();
    let train_images: Vec<AnnotatedImage> =
        order[holdout..].iter().map(|&i| images[i].clone()).collect();

    let mut rows: Vec<AblationRow> = Vec::with_capacity(4);
    for (name, mcfg, t) in ablation_configs(base_cfg, tcfg) {
        let outcome = train::<T>(&train_images, &mcfg, &t, dcfg, |m| on_epoch(&name, m))?;
        let report = evaluate(&outcome.params, &test_images)?;
        let prev = rows.last();
        let imp = |prev_v: f64, cur: f64| (prev_v - cur) / prev_v * 100.0;
        rows.push(AblationRow {
            config: name,
            mae: report.mae,
            mse: report.mse,
            mae_improvement_pct: prev.map(|p| imp(p.mae, report.mae)),
            mse_improvement_pct: prev.map(|p| imp(p.mse, report.mse)),
        });
    }
    Ok(AblationTable { rows })
}
