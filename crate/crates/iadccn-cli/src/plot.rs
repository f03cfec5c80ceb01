//! Batch plot rendering: metric curves as grayscale PGM images.

use std::io::Write;
use std::path::Path;

use iadccn::Result;

const MARGIN: usize = 12;

/// Draws one gray level per series onto a white canvas with a black frame.
/// Each series is a sequence of y-values at x = 0..len-1; axes scale to the
/// finite maxima across all series.
pub fn render_curves(series: &[(&str, &[f64])], width: usize, height: usize) -> Vec<u8> {
    let mut canvas = vec![255u8; width * height];
    let x0 = MARGIN;
    let x1 = width - MARGIN;
    let y0 = MARGIN;
    let y1 = height - MARGIN;
    for x in x0..=x1 {
        canvas[y0 * width + x] = 0;
        canvas[y1 * width + x] = 0;
    }
    for y in y0..=y1 {
        canvas[y * width + x0] = 0;
        canvas[y * width + x1] = 0;
    }

    let max_len = series.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    let max_val = series
        .iter()
        .flat_map(|(_, v)| v.iter())
        .cloned()
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    if max_len < 2 || max_val <= 0.0 {
        return canvas;
    }

    let shades = [0u8, 112, 176, 80];
    for (si, (_, values)) in series.iter().enumerate() {
        let shade = shades[si % shades.len()];
        let px = |i: usize| x0 + i * (x1 - x0) / (max_len - 1).max(1);
        let py = |v: f64| {
            let t = (v / max_val).clamp(0.0, 1.0);
            y1 - ((t * (y1 - y0) as f64).round() as usize).min(y1 - y0)
        };
        let mut prev: Option<(usize, usize)> = None;
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                prev = None;
                continue;
            }
            let (x, y) = (px(i), py(v));
            if let Some((lx, ly)) = prev {
                // connect with a straight segment, stepping along x
                let steps = (x - lx).max(ly.abs_diff(y)).max(1);
                for s in 0..=steps {
                    let ix = lx + (x - lx) * s / steps;
                    let iy = (ly as isize + (y as isize - ly as isize) * s as isize / steps as isize)
                        as usize;
                    canvas[iy * width + ix] = shade;
                }
            } else {
                canvas[y * width + x] = shade;
            }
            prev = Some((x, y));
        }
    }
    canvas
}

pub fn save_curves_pgm(
    path: &Path,
    series: &[(&str, &[f64])],
    width: usize,
    height: usize,
) -> Result<()> {
    let gray = render_curves(series, width, height);
    let mut out = Vec::with_capacity(gray.len() + 32);
    write!(&mut out, "P5\n{width} {height}\n255\n")?;
    out.extend_from_slice(&gray);
    std::fs::write(path, out)?;
    Ok(())
}
