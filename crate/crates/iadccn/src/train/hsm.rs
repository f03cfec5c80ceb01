//! Offline hard sample selection from the training-error distribution.

use crate::error::{Error, Result};

/// Histograms the non-negative per-sample errors into `bins` equal-width
/// bins over [0, max], takes the most populated bin (ties resolve to the
/// lower bin) and its upper edge as the mode threshold T, and returns the
/// indices with error > T — the hard samples. If the selection would be
/// smaller than `min_fraction` of the input (including the degenerate
/// all-equal distribution, which collapses to a single bin and selects
/// nothing), the full index set is returned instead.
pub fn hard_sample_mine(
    errors: &[f64],
    bins: usize,
    min_fraction: f64,
) -> Result<Vec<usize>> {
    if errors.is_empty() {
        return Err(Error::Contract(
            "hard_sample_mine needs a non-empty error list".to_string(),
        ));
    }
    if bins == 0 {
        return Err(Error::Config("hard_sample_mine needs bins >= 1".to_string()));
    }
    if errors.iter().any(|&e| !(e >= 0.0) || !e.is_finite()) {
        return Err(Error::Contract(
            "hard_sample_mine errors must be finite and non-negative".to_string(),
        ));
    }
    let n = errors.len();
    let all = || (0..n).collect::<Vec<usize>>();
    let max = errors.iter().cloned().fold(0.0f64, f64::max);
    let min = errors.iter().cloned().fold(f64::INFINITY, f64::min);
    if max == min {
        return Ok(all());
    }

    let width = max / bins as f64;
    let mut counts = vec![0usize; bins];
    for &e in errors {
        let b = ((e / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let mode = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap();
    let threshold = (mode + 1) as f64 * width;
    let selected: Vec<usize> = (0..n).filter(|&i| errors[i] > threshold).collect();
    if (selected.len() as f64) < min_fraction * n as f64 {
        return Ok(all());
    }
    Ok(selected)
}
