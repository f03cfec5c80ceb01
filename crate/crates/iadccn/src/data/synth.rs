//! Synthetic crowd scenes for desk-scale experiments.
//!
//! A scene is a lit, textured background with dark filled discs as heads.
//! Clutter blobs (rings and bars) share the heads' intensity range but are
//! annotated as background, so they confuse a counting model that has no
//! notion of foreground — which is exactly the failure the segmentation
//! supervision is meant to fix.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::rng::{uniform, uniform_in};

use super::AnnotatedImage;

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    /// Inclusive range for the number of heads.
    pub count_range: (usize, usize),
    pub head_radius_range: (f64, f64),
    /// Distractor blobs per head, on average; 0 disables clutter.
    pub clutter_level: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            height: 64,
            width: 64,
            count_range: (3, 10),
            head_radius_range: (2.5, 4.5),
            clutter_level: 0.0,
        }
    }
}

struct Canvas {
    h: usize,
    w: usize,
    pixels: Vec<f64>,
}

impl Canvas {
    // soft-coverage compositing of a shape defined by a signed coverage fn
    fn stamp(&mut self, cx: f64, cy: f64, reach: f64, shade: f64, cov: impl Fn(f64, f64) -> f64) {
        let y_lo = ((cy - reach).floor().max(0.0)) as usize;
        let y_hi = ((cy + reach).ceil() as usize).min(self.h - 1);
        let x_lo = ((cx - reach).floor().max(0.0)) as usize;
        let x_hi = ((cx + reach).ceil() as usize).min(self.w - 1);
        for py in y_lo..=y_hi {
            for px in x_lo..=x_hi {
                let c = cov(px as f64 - cx, py as f64 - cy).clamp(0.0, 1.0);
                if c > 0.0 {
                    let v = &mut self.pixels[py * self.w + px];
                    *v = *v * (1.0 - c) + shade * c;
                }
            }
        }
    }
}

/// Draws one scene: textured background, `k ~ uniform(count_range)` dark
/// disc heads (returned as exact points), and clutter with head-like
/// intensity that carries no annotation. Same seed, same bytes.
pub fn synth_scene(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> AnnotatedImage {
    let (h, w) = (cfg.height, cfg.width);

    // background: slow two-axis sinusoid over a light base, plus grain
    let base = uniform_in(rng, 0.6, 0.8);
    let amp = uniform_in(rng, 0.04, 0.10);
    let fx = uniform_in(rng, 0.5, 2.5);
    let fy = uniform_in(rng, 0.5, 2.5);
    let phx = uniform(rng);
    let phy = uniform(rng);
    let mut canvas = Canvas {
        h,
        w,
        pixels: vec![0.0; h * w],
    };
    for y in 0..h {
        for x in 0..w {
            let sx = (std::f64::consts::TAU * (fx * x as f64 / w as f64 + phx)).sin();
            let sy = (std::f64::consts::TAU * (fy * y as f64 / h as f64 + phy)).sin();
            canvas.pixels[y * w + x] = base + amp * sx * sy;
        }
    }
    for v in &mut canvas.pixels {
        *v = (*v + uniform_in(rng, -0.03, 0.03)).clamp(0.05, 0.95);
    }

    let k = rng.random_range(cfg.count_range.0..=cfg.count_range.1);
    let (r_lo, r_hi) = cfg.head_radius_range;
    let mut points = Vec::with_capacity(k);
    for _ in 0..k {
        let r = uniform_in(rng, r_lo, r_hi);
        let margin = (r + 1.0).min(w as f64 / 2.0 - 0.5).max(0.0);
        let x = uniform_in(rng, margin, w as f64 - margin);
        let y = uniform_in(
            rng,
            (r + 1.0).min(h as f64 / 2.0 - 0.5).max(0.0),
            h as f64 - (r + 1.0).min(h as f64 / 2.0 - 0.5).max(0.0),
        );
        let shade = uniform_in(rng, 0.08, 0.25);
        canvas.stamp(x, y, r + 1.0, shade, |dx, dy| {
            r - (dx * dx + dy * dy).sqrt() + 0.5
        });
        points.push((x, y));
    }

    let clutter = (cfg.clutter_level * k as f64).round() as usize;
    for _ in 0..clutter {
        let r = uniform_in(rng, r_lo, r_hi);
        let margin = (2.0 * r + 2.0).min(w as f64 / 2.0 - 0.5).max(0.0);
        let x = uniform_in(rng, margin, w as f64 - margin);
        let y = uniform_in(rng, margin, h as f64 - margin);
        let shade = uniform_in(rng, 0.08, 0.25);
        if uniform(rng) < 0.5 {
            // ring: head-like intensity, hollow center
            let ring_r = r * uniform_in(rng, 1.1, 1.8);
            let half_th = uniform_in(rng, 0.5, 0.9);
            canvas.stamp(x, y, ring_r + half_th + 1.0, shade, move |dx, dy| {
                half_th - ((dx * dx + dy * dy).sqrt() - ring_r).abs() + 0.5
            });
        } else {
            // bar: elongated blob, axis chosen by coin flip
            let half_len = uniform_in(rng, 1.5 * r, 3.0 * r);
            let half_wd = uniform_in(rng, 0.6, 1.1);
            let vertical = uniform(rng) < 0.5;
            canvas.stamp(x, y, half_len + 1.0, shade, move |dx, dy| {
                let (da, db) = if vertical { (dy, dx) } else { (dx, dy) };
                (half_len - da.abs() + 0.5).min(half_wd - db.abs() + 0.5)
            });
        }
    }

    AnnotatedImage {
        id: "synth".to_string(),
        width: w,
        height: h,
        channels: 1,
        pixels: canvas.pixels,
        points,
    }
}
