use crate::error::{Error, Result};

/// Row-major grayscale raster with values in `[0, 1]` (0 = black).
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("empty raster {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "raster has {} pixels, expected {width}x{height}",
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|p| !p.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite pixel at ({}, {})",
                i % width,
                i / width
            )));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("pixel value outside [0, 1]"));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "empty raster");
        GrayImage {
            width,
            height,
            pixels: vec![value.clamp(0.0, 1.0); width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.pixels[y * self.width + x] = v.clamp(0.0, 1.0);
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers at
    /// integer positions). Coordinates outside the raster are clamped, which
    /// replicates the edge pixels.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        (top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0)
    }

    /// Bilinear resize with half-pixel-center alignment; resizing to the same
    /// size is the identity.
    pub fn resize(&self, width: usize, height: usize) -> GrayImage {
        assert!(width > 0 && height > 0, "empty resize target");
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            let src_y = (y as f64 + 0.5) * sy - 0.5;
            for x in 0..width {
                pixels.push(self.sample((x as f64 + 0.5) * sx - 0.5, src_y));
            }
        }
        GrayImage {
            width,
            height,
            pixels,
        }
    }

    /// Copy padded on the right to `width` with `value`.
    pub fn pad_right(&self, width: usize, value: f64) -> GrayImage {
        if width <= self.width {
            return self.clone();
        }
        let mut out = GrayImage::filled(width, self.height, value);
        for y in 0..self.height {
            out.pixels[y * width..y * width + self.width]
                .copy_from_slice(&self.pixels[y * self.width..(y + 1) * self.width]);
        }
        out
    }

    /// Median of the outermost rows and columns.
    pub fn median_border(&self) -> f64 {
        let mut border = Vec::with_capacity(2 * (self.width + self.height));
        for x in 0..self.width {
            border.push(self.get(x, 0));
            border.push(self.get(x, self.height - 1));
        }
        for y in 0..self.height {
            border.push(self.get(0, y));
            border.push(self.get(self.width - 1, y));
        }
        border.sort_by(f64::total_cmp);
        let n = border.len();
        if n == 0 {
            return 1.0;
        }
        if n % 2 == 1 {
            border[n / 2]
        } else {
            0.5 * (border[n / 2 - 1] + border[n / 2])
        }
    }
}
