//! Random patch cropping and augmentation for training.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::rng;

use super::AnnotatedImage;

fn zero_pad_to(img: &AnnotatedImage, min_h: usize, min_w: usize) -> AnnotatedImage {
    let h = img.height.max(min_h);
    let w = img.width.max(min_w);
    if h == img.height && w == img.width {
        return img.clone();
    }
    let c = img.channels;
    let mut pixels = vec![0.0; h * w * c];
    for y in 0..img.height {
        let src = y * img.width * c;
        let dst = y * w * c;
        pixels[dst..dst + img.width * c].copy_from_slice(&img.pixels[src..src + img.width * c]);
    }
    AnnotatedImage {
        id: img.id.clone(),
        width: w,
        height: h,
        channels: c,
        pixels,
        // padding is on the right/bottom, so the points are unaffected
        points: img.points.clone(),
    }
}

/// Crops `n` square patches of `size` pixels from uniformly random
/// positions. Images smaller than `size` are zero-padded first. A patch
/// keeps the points inside its half-open window [left, left+size) ×
/// [top, top+size), re-origined to patch coordinates.
pub fn sample_patches(
    img: &AnnotatedImage,
    n: usize,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<AnnotatedImage>> {
    let img = zero_pad_to(img, size, size);
    let c = img.channels;
    let mut patches = Vec::with_capacity(n);
    for pi in 0..n {
        let top = rng.random_range(0..=img.height - size);
        let left = rng.random_range(0..=img.width - size);
        let mut pixels = vec![0.0; size * size * c];
        for y in 0..size {
            let src = ((top + y) * img.width + left) * c;
            pixels[y * size * c..(y + 1) * size * c]
                .copy_from_slice(&img.pixels[src..src + size * c]);
        }
        let points: Vec<(f64, f64)> = img
            .points
            .iter()
            .filter(|&&(x, y)| {
                x >= left as f64
                    && x < (left + size) as f64
                    && y >= top as f64
                    && y < (top + size) as f64
            })
            .map(|&(x, y)| (x - left as f64, y - top as f64))
            .collect();
        patches.push(AnnotatedImage::new(
            format!("{}#p{}", img.id, pi),
            size,
            size,
            c,
            pixels,
            points,
        )?);
    }
    Ok(patches)
}

/// Mirrors pixels and point x-coordinates (x -> W-1-x).
pub fn flip_horizontal(img: &AnnotatedImage) -> AnnotatedImage {
    let (h, w, c) = (img.height, img.width, img.channels);
    let mut pixels = vec![0.0; img.pixels.len()];
    for y in 0..h {
        for x in 0..w {
            let src = (y * w + x) * c;
            let dst = (y * w + (w - 1 - x)) * c;
            pixels[dst..dst + c].copy_from_slice(&img.pixels[src..src + c]);
        }
    }
    AnnotatedImage {
        id: img.id.clone(),
        width: w,
        height: h,
        channels: c,
        pixels,
        points: img
            .points
            .iter()
            .map(|&(x, y)| ((w - 1) as f64 - x, y))
            .collect(),
    }
}

/// Augments a patch: horizontal flip with probability 0.5, then additive
/// per-pixel uniform noise in [-noise_amp, +noise_amp], clamped to [0,1].
pub fn augment(patch: &AnnotatedImage, rng: &mut ChaCha8Rng, noise_amp: f64) -> AnnotatedImage {
    let mut out = if rng::uniform(rng) < 0.5 {
        flip_horizontal(patch)
    } else {
        patch.clone()
    };
    // draw per-pixel noise regardless of amplitude to keep the stream stable
    for v in &mut out.pixels {
        let noise = rng::uniform_in(rng, -1.0, 1.0) * noise_amp;
        *v = (*v + noise).clamp(0.0, 1.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn gradient_image(id: &str, h: usize, w: usize, points: Vec<(f64, f64)>) -> AnnotatedImage {
        let pixels: Vec<f64> = (0..h * w).map(|i| (i % 97) as f64 / 96.0).collect();
        AnnotatedImage::new(id.to_string(), w, h, 1, pixels, points).unwrap()
    }

    #[test]
    fn exact_size_image_yields_identical_patches() {
        let img = gradient_image("a", 16, 16, vec![(3.0, 4.0), (15.5, 0.25)]);
        let mut rng = rng_from_seed(5);
        let patches = sample_patches(&img, 4, 16, &mut rng).unwrap();
        assert_eq!(patches.len(), 4);
        for p in &patches {
            assert_eq!(p.pixels, img.pixels);
            assert_eq!(p.points, img.points);
        }
    }

    #[test]
    fn crop_window_is_half_open_against_rect_oracle() {
        use rand::Rng;
        let pts: Vec<(f64, f64)> = (0..30)
            .map(|i| ((i * 5 % 17) as f64 * 0.9, (i * 3 % 13) as f64 * 1.1))
            .collect();
        let img = gradient_image("b", 16, 16, pts);
        // replay the documented draw order (top, then left, per patch) on a
        // twin stream to learn each crop origin
        let mut twin = rng_from_seed(6);
        let expected_rects: Vec<(usize, usize)> = (0..24)
            .map(|_| {
                let top = twin.random_range(0..=16 - 8);
                let left = twin.random_range(0..=16 - 8);
                (top, left)
            })
            .collect();
        let mut rng = rng_from_seed(6);
        let patches = sample_patches(&img, 24, 8, &mut rng).unwrap();
        for (p, &(top, left)) in patches.iter().zip(&expected_rects) {
            // brute-force half-open containment [left, left+8) x [top, top+8)
            let expect: Vec<(f64, f64)> = img
                .points
                .iter()
                .filter(|&&(x, y)| {
                    x >= left as f64
                        && x < (left + 8) as f64
                        && y >= top as f64
                        && y < (top + 8) as f64
                })
                .map(|&(x, y)| (x - left as f64, y - top as f64))
                .collect();
            assert_eq!(p.points, expect, "rect at ({top},{left})");
        }

        // a point exactly on left + size stays outside every 4-wide window
        // anchored at its coordinate
        let img = gradient_image("c", 8, 8, vec![(4.0, 2.0)]);
        let mut rng = rng_from_seed(0);
        for p in sample_patches(&img, 64, 4, &mut rng).unwrap() {
            for &(x, y) in &p.points {
                assert!((0.0..4.0).contains(&x) && (0.0..4.0).contains(&y));
            }
        }
    }

    #[test]
    fn point_in_rect_matches_bruteforce_count() {
        let img = gradient_image(
            "d",
            32,
            32,
            (0..40)
                .map(|i| ((i * 7 % 32) as f64 + 0.5, (i * 11 % 32) as f64 + 0.25))
                .collect(),
        );
        let mut rng = rng_from_seed(7);
        let patches = sample_patches(&img, 16, 12, &mut rng).unwrap();
        // reconstruct each patch origin from its first pixel value is fragile;
        // instead verify via total inclusion when the rect is known
        for p in &patches {
            for &(x, y) in &p.points {
                assert!((0.0..12.0).contains(&x) && (0.0..12.0).contains(&y));
            }
        }
        // whole-image crop retains every point exactly once
        let whole = &sample_patches(&img, 1, 32, &mut rng).unwrap()[0];
        assert_eq!(whole.points.len(), 40);
    }

    #[test]
    fn small_images_are_zero_padded() {
        let img = gradient_image("e", 5, 6, vec![(2.0, 2.0)]);
        let mut rng = rng_from_seed(8);
        let p = &sample_patches(&img, 1, 8, &mut rng).unwrap()[0];
        assert_eq!((p.height, p.width), (8, 8));
        assert_eq!(p.points, vec![(2.0, 2.0)]);
        // padded band is zero
        assert!(p.pixels[(7 * 8)..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flip_is_an_involution_and_maps_edges() {
        // coordinates on a 1/8 grid stay exact under W-1-x
        let pts: Vec<(f64, f64)> = (0..24)
            .map(|i| ((i * 7 % 128) as f64 / 8.0, (i * 5 % 128) as f64 / 8.0))
            .collect();
        let img = gradient_image("f", 16, 16, pts);
        let back = flip_horizontal(&flip_horizontal(&img));
        assert_eq!(back.pixels, img.pixels);
        assert_eq!(back.points, img.points);

        let edge = gradient_image("g", 4, 224, vec![(0.0, 1.0)]);
        assert_eq!(flip_horizontal(&edge).points[0].0, 223.0);
    }

    #[test]
    fn augment_with_zero_noise_changes_nothing_but_flip() {
        let img = gradient_image("h", 8, 8, vec![(1.0, 1.0)]);
        let mut rng = rng_from_seed(9);
        let out = augment(&img, &mut rng, 0.0);
        let flipped = flip_horizontal(&img);
        assert!(out.pixels == img.pixels || out.pixels == flipped.pixels);

        let mut r1 = rng_from_seed(10);
        let mut r2 = rng_from_seed(10);
        assert_eq!(augment(&img, &mut r1, 0.01), augment(&img, &mut r2, 0.01));
    }

    #[test]
    fn augment_noise_stays_in_unit_range() {
        let img = gradient_image("i", 8, 8, vec![]);
        let mut rng = rng_from_seed(11);
        let out = augment(&img, &mut rng, 0.5);
        assert!(out.pixels.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
