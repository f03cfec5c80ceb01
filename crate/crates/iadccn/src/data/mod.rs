//! Ground-truth construction and dataset handling: density maps from point
//! annotations, binary masks and their inversions, patch sampling with
//! augmentation, a synthetic scene generator, and file formats.

mod density;
mod io;
mod patch;
mod synth;

pub use density::{
    downsample_density, downsample_mask_any, generate_density_map, generate_seg_mask,
};
pub use io::{
    load_annotations, load_density, load_image, render_heatmap, save_dataset, save_density,
    save_density_csv, save_heatmap, save_pgm, save_ppm, DENSITY_FORMAT_VERSION,
};
pub use patch::{augment, flip_horizontal, sample_patches};
pub use synth::{synth_scene, SynthConfig};

use crate::error::{Error, Result};

/// Image pixels in [0,1] plus the head-point annotations, in pixel units.
///
/// Pixels are stored row-major, channel-interleaved: `(y*W + x)*C + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedImage {
    pub id: String,
    pub width: usize,
    pub height: usize,
    /// 1 (grayscale) or 3 (color).
    pub channels: usize,
    pub pixels: Vec<f64>,
    /// (x, y) positions of annotated heads; 0 <= x < W, 0 <= y < H.
    pub points: Vec<(f64, f64)>,
}

impl AnnotatedImage {
    pub fn new(
        id: String,
        width: usize,
        height: usize,
        channels: usize,
        pixels: Vec<f64>,
        points: Vec<(f64, f64)>,
    ) -> Result<AnnotatedImage> {
        if width == 0 || height == 0 {
            return Err(Error::Data(format!(
                "image {id}: extents must be >= 1, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Data(format!(
                "image {id}: channels must be 1 or 3, got {channels}"
            )));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::Data(format!(
                "image {id}: pixel buffer length {} does not match {width}x{height}x{channels}",
                pixels.len()
            )));
        }
        let img = AnnotatedImage {
            id,
            width,
            height,
            channels,
            pixels,
            points,
        };
        img.check_points()?;
        Ok(img)
    }

    pub fn check_points(&self) -> Result<()> {
        for (i, &(x, y)) in self.points.iter().enumerate() {
            if !(x >= 0.0 && x < self.width as f64 && y >= 0.0 && y < self.height as f64) {
                return Err(Error::Data(format!(
                    "image {}: point {i} at ({x}, {y}) is outside {}x{}",
                    self.id, self.width, self.height
                )));
            }
        }
        Ok(())
    }
}

/// Per-pixel people density. Summing all values estimates (for predictions)
/// or equals (for ground truth) the person count.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMap {
    pub height: usize,
    pub width: usize,
    /// 1 for full resolution, 4 for the network-output grid.
    pub scale: u32,
    pub values: Vec<f64>,
}

impl DensityMap {
    pub fn zeros(height: usize, width: usize, scale: u32) -> DensityMap {
        DensityMap {
            height,
            width,
            scale,
            values: vec![0.0; height * width],
        }
    }

    /// Row-major sum of all values.
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Binary per-pixel map; 1 marks the labeled class.
///
/// A foreground (head-region) mask and its inversion — the background
/// supervision target for the attention block — are both carried by this
/// type; [`Mask::invert`] maps between them.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub scale: u32,
    pub values: Vec<u8>,
}

/// Foreground mask: 1 = head region.
pub type SegMask = Mask;
/// Background target: elementwise 1 − SegMask.
pub type InverseAttentionTarget = Mask;

impl Mask {
    pub fn invert(&self) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            scale: self.scale,
            values: self.values.iter().map(|&v| 1 - v).collect(),
        }
    }

    pub fn foreground_count(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    /// Masks persist through the same binary container as density maps,
    /// as exact 0/1 values.
    pub fn to_density(&self) -> DensityMap {
        DensityMap {
            height: self.height,
            width: self.width,
            scale: self.scale,
            values: self.values.iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn from_density(d: &DensityMap) -> Mask {
        Mask {
            height: d.height,
            width: d.width,
            scale: d.scale,
            values: d.values.iter().map(|&v| u8::from(v >= 0.5)).collect(),
        }
    }
}

/// Parameters of ground-truth construction.
#[derive(Clone, Copy, Debug)]
pub struct DensityConfig {
    /// Gaussian scale in pixels.
    pub sigma: f64,
    /// Window half-extent; windows are clipped at image borders and
    /// renormalized so each point contributes exactly 1.
    pub truncation_radius: usize,
    /// Density threshold above which a pixel counts as foreground.
    pub mask_threshold: f64,
}

impl DensityConfig {
    pub fn new(sigma: f64, mask_threshold: f64) -> Result<DensityConfig> {
        if !(sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be > 0, got {sigma}")));
        }
        if !(mask_threshold >= 0.0) {
            return Err(Error::Config(format!(
                "mask threshold must be >= 0, got {mask_threshold}"
            )));
        }
        Ok(DensityConfig {
            sigma,
            truncation_radius: (3.0 * sigma).ceil() as usize,
            mask_threshold,
        })
    }
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig::new(4.0, 1e-3).expect("defaults are valid")
    }
}
