//! Density-map and mask ground truth from point annotations.

use crate::error::{Error, Result};

use super::{DensityConfig, DensityMap, Mask};

/// Builds the full-resolution ground-truth density by dropping one truncated
/// 2D Gaussian window per point. Each window is renormalized after clipping
/// at the image border, so the map total equals the point count.
pub fn generate_density_map(
    points: &[(f64, f64)],
    height: usize,
    width: usize,
    cfg: &DensityConfig,
) -> Result<DensityMap> {
    let mut map = DensityMap::zeros(height, width, 1);
    let r = cfg.truncation_radius as isize;
    let inv_two_sigma_sq = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
    for (i, &(x, y)) in points.iter().enumerate() {
        if !(x >= 0.0 && x < width as f64 && y >= 0.0 && y < height as f64) {
            return Err(Error::Data(format!(
                "point {i} at ({x}, {y}) is outside {width}x{height}"
            )));
        }
        let cx = x.round() as isize;
        let cy = y.round() as isize;
        let y_lo = (cy - r).max(0) as usize;
        let y_hi = ((cy + r) as usize).min(height - 1);
        let x_lo = (cx - r).max(0) as usize;
        let x_hi = ((cx + r) as usize).min(width - 1);

        let wh = y_hi - y_lo + 1;
        let ww = x_hi - x_lo + 1;
        let mut window = vec![0.0f64; wh * ww];
        let mut total = 0.0f64;
        for (wy, py) in (y_lo..=y_hi).enumerate() {
            let dy = py as f64 - y;
            for (wx, px) in (x_lo..=x_hi).enumerate() {
                let dx = px as f64 - x;
                let v = (-(dx * dx + dy * dy) * inv_two_sigma_sq).exp();
                window[wy * ww + wx] = v;
                total += v;
            }
        }
        for (wy, py) in (y_lo..=y_hi).enumerate() {
            for (wx, px) in (x_lo..=x_hi).enumerate() {
                map.values[py * width + px] += window[wy * ww + wx] / total;
            }
        }
    }
    Ok(map)
}

/// Sum-pools `factor`×`factor` blocks, preserving the map total; this is how
/// full-resolution ground truth moves to the network-output grid.
pub fn downsample_density(d: &DensityMap, factor: usize) -> Result<DensityMap> {
    if factor == 0 {
        return Err(Error::Config("downsample factor must be >= 1".to_string()));
    }
    if d.height % factor != 0 || d.width % factor != 0 {
        return Err(Error::Config(format!(
            "density extents {}x{} are not divisible by {factor}; pad first",
            d.height, d.width
        )));
    }
    let (oh, ow) = (d.height / factor, d.width / factor);
    let mut out = DensityMap::zeros(oh, ow, d.scale * factor as u32);
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = 0.0;
            for dy in 0..factor {
                let row = (oy * factor + dy) * d.width + ox * factor;
                for dx in 0..factor {
                    acc += d.values[row + dx];
                }
            }
            out.values[oy * ow + ox] = acc;
        }
    }
    Ok(out)
}

/// Thresholds a density map into a foreground mask: 1 where density > tau.
pub fn generate_seg_mask(d: &DensityMap, tau: f64) -> Mask {
    Mask {
        height: d.height,
        width: d.width,
        scale: d.scale,
        values: d.values.iter().map(|&v| u8::from(v > tau)).collect(),
    }
}

/// Max-pools a mask: a block is foreground if any of its pixels is.
pub fn downsample_mask_any(m: &Mask, factor: usize) -> Result<Mask> {
    if factor == 0 {
        return Err(Error::Config("downsample factor must be >= 1".to_string()));
    }
    if m.height % factor != 0 || m.width % factor != 0 {
        return Err(Error::Config(format!(
            "mask extents {}x{} are not divisible by {factor}; pad first",
            m.height, m.width
        )));
    }
    let (oh, ow) = (m.height / factor, m.width / factor);
    let mut values = vec![0u8; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            let mut any = 0u8;
            for dy in 0..factor {
                let row = (oy * factor + dy) * m.width + ox * factor;
                for dx in 0..factor {
                    any |= m.values[row + dx];
                }
            }
            values[oy * ow + ox] = any;
        }
    }
    Ok(Mask {
        height: oh,
        width: ow,
        scale: m.scale * factor as u32,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn cfg(sigma: f64) -> DensityConfig {
        DensityConfig::new(sigma, 1e-3).unwrap()
    }

    #[test]
    fn empty_points_give_zero_map() {
        let d = generate_density_map(&[], 16, 16, &cfg(2.0)).unwrap();
        assert!(d.values.iter().all(|&v| v == 0.0));
        assert_eq!(d.total(), 0.0);
    }

    #[test]
    fn single_centered_point_normalizes_and_peaks_at_center() {
        let d = generate_density_map(&[(16.0, 16.0)], 32, 32, &cfg(2.0)).unwrap();
        assert!((d.total() - 1.0).abs() <= 1e-9, "total {}", d.total());
        let argmax = d
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!((argmax % 32, argmax / 32), (16, 16));
    }

    #[test]
    fn clipped_corner_windows_still_sum_to_one_each() {
        let pts = [(0.0, 0.0), (10.0, 12.0), (31.0, 31.0)];
        let d = generate_density_map(&pts, 32, 32, &cfg(2.0)).unwrap();
        assert!((d.total() - 3.0).abs() <= 1e-9, "total {}", d.total());
        assert!(d.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn out_of_bounds_point_rejected_with_index() {
        let err = generate_density_map(&[(1.0, 1.0), (32.0, 5.0)], 32, 32, &cfg(2.0));
        match err {
            Err(crate::error::Error::Data(m)) => assert!(m.contains("point 1"), "{m}"),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn sum_pool_preserves_total_and_handles_deltas() {
        let mut rng = rng::rng_from_seed(91);
        for _ in 0..50 {
            let n = (rng::uniform(&mut rng) * 20.0) as usize;
            let pts: Vec<(f64, f64)> = (0..n)
                .map(|_| {
                    (
                        rng::uniform_in(&mut rng, 0.0, 24.0),
                        rng::uniform_in(&mut rng, 0.0, 24.0),
                    )
                })
                .collect();
            let d = generate_density_map(&pts, 24, 24, &cfg(1.5)).unwrap();
            let p = downsample_density(&d, 4).unwrap();
            assert!((p.total() - d.total()).abs() <= 1e-12 * (n.max(1) as f64));
            assert!((p.total() - n as f64).abs() <= 1e-9);
        }

        let mut d = DensityMap::zeros(4, 4, 1);
        d.values[2 * 4 + 1] = 1.0;
        let p = downsample_density(&d, 4).unwrap();
        assert_eq!(p.height, 1);
        assert_eq!(p.values, vec![1.0]);
        assert_eq!(p.scale, 4);

        let z = DensityMap::zeros(8, 8, 1);
        assert!(downsample_density(&z, 4)
            .unwrap()
            .values
            .iter()
            .all(|&v| v == 0.0));

        let odd = DensityMap::zeros(6, 8, 1);
        assert!(matches!(
            downsample_density(&odd, 4),
            Err(crate::error::Error::Config(_))
        ));
    }

    #[test]
    fn masks_are_complementary_and_match_threshold_count() {
        let zero = DensityMap::zeros(8, 8, 1);
        let m = generate_seg_mask(&zero, 1e-3);
        assert!(m.values.iter().all(|&v| v == 0));
        let inv = m.invert();
        assert!(inv.values.iter().all(|&v| v == 1));

        let d = generate_density_map(&[(16.0, 16.0)], 32, 32, &cfg(2.0)).unwrap();
        let tau = 1e-3;
        let m = generate_seg_mask(&d, tau);
        let inv = m.invert();
        for (a, b) in m.values.iter().zip(&inv.values) {
            assert_eq!(a + b, 1);
        }
        // brute-force threshold count over the generated Gaussian
        let expect = d.values.iter().filter(|&&v| v > tau).count();
        assert_eq!(m.foreground_count(), expect);
        assert!(expect > 0);
    }

    #[test]
    fn mask_max_pool_marks_block_with_any_foreground() {
        let mut d = DensityMap::zeros(8, 8, 1);
        d.values[5 * 8 + 2] = 1.0;
        let m = generate_seg_mask(&d, 0.5);
        let p = downsample_mask_any(&m, 4).unwrap();
        assert_eq!(p.values, vec![0, 0, 1, 0]);
        assert_eq!(p.scale, 4);
    }
}
