//! Text-line normalization and sliding-window extraction.
//!
//! A raw line raster is scaled to a fixed height, optionally padded (or
//! squeezed) to a fixed width, and then cut into overlapping windows at a
//! constant stride. Each window position yields one classifier input; with
//! several window widths the crops share a center and are stacked as
//! channels.

mod image;
mod manifest;
mod pgm;

pub use image::GrayImage;
pub use manifest::{format_manifest, load_manifest, parse_manifest, ManifestRecord};
pub use pgm::{decode_pgm, encode_pgm, read_pgm, write_pgm};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest accepted normalized line height.
pub const MIN_TARGET_HEIGHT: usize = 8;

/// A line scaled to its working height, plus the value used for padding.
#[derive(Clone, Debug, PartialEq)]
pub struct TextLineImage {
    image: GrayImage,
    background: f64,
}

impl TextLineImage {
    /// Wraps an image that is already at working height. Padding uses the
    /// median border intensity.
    pub fn from_image(image: GrayImage) -> Self {
        let background = image.median_border();
        TextLineImage { image, background }
    }

    pub fn image(&self) -> &GrayImage {
        &self.image
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn background(&self) -> f64 {
        self.background
    }
}

/// Scales `raw` to `target_height`, keeping the aspect ratio. With `pad`
/// set, the result is exactly `max_width` wide: narrower lines are padded on
/// the right with the border median and wider ones are squeezed.
pub fn normalize_line(
    raw: &GrayImage,
    target_height: usize,
    max_width: usize,
    pad: bool,
) -> Result<TextLineImage> {
    if target_height < MIN_TARGET_HEIGHT {
        return Err(Error::invalid(format!(
            "target height {target_height} below {MIN_TARGET_HEIGHT}"
        )));
    }
    if pad && max_width == 0 {
        return Err(Error::invalid("padding width must be positive"));
    }
    let background = raw.median_border();
    let proportional = ((raw.width() * target_height) as f64 / raw.height() as f64)
        .round()
        .max(1.0) as usize;
    let image = if !pad {
        raw.resize(proportional, target_height)
    } else if proportional > max_width {
        raw.resize(max_width, target_height)
    } else {
        raw.resize(proportional, target_height)
            .pad_right(max_width, background)
    };
    Ok(TextLineImage { image, background })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// One window width per scale, in channel order.
    pub window_widths: Vec<usize>,
    pub stride: usize,
    /// Edge of the square patch every window is resized to.
    pub patch_size: usize,
    /// Width lines are padded or squeezed to before windowing.
    pub pad_width: usize,
    /// Height lines are normalized to.
    pub line_height: usize,
}

impl WindowConfig {
    /// Single-scale 32x32 windows at stride 4 on lines padded to 256.
    pub fn single_scale() -> Self {
        WindowConfig {
            window_widths: vec![32],
            stride: 4,
            patch_size: 32,
            pad_width: 256,
            line_height: 32,
        }
    }

    /// Three scales (24, 32, 40 wide) stacked as channels.
    pub fn multi_scale() -> Self {
        WindowConfig {
            window_widths: vec![24, 32, 40],
            ..Self::single_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_widths.is_empty() {
            return Err(Error::invalid("no window widths"));
        }
        if self.stride == 0 {
            return Err(Error::invalid("stride must be at least 1"));
        }
        if let Some(w) = self.window_widths.iter().find(|&&w| w < self.stride) {
            return Err(Error::invalid(format!(
                "window width {w} smaller than stride {}",
                self.stride
            )));
        }
        if self.patch_size < 8 {
            return Err(Error::invalid("patch size must be at least 8"));
        }
        if self.line_height < MIN_TARGET_HEIGHT {
            return Err(Error::invalid("line height must be at least 8"));
        }
        Ok(())
    }

    pub fn max_window(&self) -> usize {
        self.window_widths.iter().copied().max().unwrap_or(0)
    }

    /// Width that sets the window count and spacing: the median scale
    /// (the lower middle one for an even count). Wider scales around a
    /// position read clamped edge pixels near the line ends.
    pub fn reference_window(&self) -> usize {
        let mut widths = self.window_widths.clone();
        widths.sort_unstable();
        widths.get(widths.len().saturating_sub(1) / 2).copied().unwrap_or(0)
    }

    pub fn channels(&self) -> usize {
        self.window_widths.len()
    }

    /// Normalizes a raw raster according to this configuration.
    pub fn normalize(&self, raw: &GrayImage) -> Result<TextLineImage> {
        normalize_line(raw, self.line_height, self.pad_width, true)
    }
}

/// Number of window positions: `floor((width - window) / stride) + 1`.
pub fn window_count(width: usize, window: usize, stride: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    if window > width {
        return Err(Error::invalid(format!(
            "window {window} wider than line {width}"
        )));
    }
    Ok((width - window) / stride + 1)
}

/// Window patches of one line, laid out `[T, channels, patch, patch]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSequence {
    patches: Vec<f64>,
    positions: usize,
    channels: usize,
    patch_size: usize,
    offsets: Vec<usize>,
}

impl WindowSequence {
    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    /// Left edge of the widest window at each position.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn patches(&self) -> &[f64] {
        &self.patches
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }

    pub fn patch(&self, t: usize) -> &[f64] {
        let n = self.patch_len();
        &self.patches[t * n..(t + 1) * n]
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.positions, self.channels, self.patch_size, self.patch_size]
    }
}

/// Cuts a normalized line into windows. Lines narrower than the widest
/// window are first padded to it; crops that overrun the raster replicate
/// its edge.
pub fn extract_windows(line: &TextLineImage, cfg: &WindowConfig) -> Result<WindowSequence> {
    cfg.validate()?;
    let ref_w = cfg.reference_window();
    let max_w = cfg.max_window();
    let padded;
    let img = if line.width() < max_w {
        padded = line.image().pad_right(max_w, line.background());
        &padded
    } else {
        line.image()
    };
    let positions = window_count(img.width(), ref_w, cfg.stride)?;
    let p = cfg.patch_size;
    let channels = cfg.channels();
    let mut patches = Vec::with_capacity(positions * channels * p * p);
    let mut offsets = Vec::with_capacity(positions);
    let sy = img.height() as f64 / p as f64;
    for t in 0..positions {
        let offset = t * cfg.stride;
        offsets.push(offset);
        let center = offset as f64 + ref_w as f64 / 2.0;
        for &w in &cfg.window_widths {
            let left = center - w as f64 / 2.0;
            let sx = w as f64 / p as f64;
            for y in 0..p {
                let src_y = (y as f64 + 0.5) * sy - 0.5;
                for x in 0..p {
                    patches.push(img.sample(left + (x as f64 + 0.5) * sx - 0.5, src_y));
                }
            }
        }
    }
    Ok(WindowSequence {
        patches,
        positions,
        channels,
        patch_size: p,
        offsets,
    })
}
