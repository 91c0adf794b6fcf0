//! Grayscale and RGB float images used by the operator kernels.

use std::io::Write;
use std::path::Path;

/// Row-major image with values clamped to [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelImage {
    pub width: usize,
    pub height: usize,
    /// 1 (grayscale) or 3 (RGB).
    pub channels: usize,
    pub data: Vec<f32>,
}

impl ChannelImage {
    pub fn constant(width: usize, height: usize, value: &[f32]) -> Self {
        let channels = value.len();
        assert!(channels == 1 || channels == 3, "images are grayscale or RGB");
        let mut data = Vec::with_capacity(width * height * channels);
        for _ in 0..width * height {
            data.extend(value.iter().map(|v| v.clamp(0.0, 1.0)));
        }
        Self { width, height, channels, data }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, &[0.0])
    }

    /// Builds a grayscale image from a function of normalized pixel-center coordinates.
    pub fn from_fn_gray(width: usize, height: usize, f: impl Fn(f32, f32) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            let v = (y as f32 + 0.5) / height as f32;
            for x in 0..width {
                let u = (x as f32 + 0.5) / width as f32;
                data.push(sanitize(f(u, v)));
            }
        }
        Self { width, height, channels: 1, data }
    }

    pub fn from_fn_rgb(width: usize, height: usize, f: impl Fn(f32, f32) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            let v = (y as f32 + 0.5) / height as f32;
            for x in 0..width {
                let u = (x as f32 + 0.5) / width as f32;
                data.extend(f(u, v).map(sanitize));
            }
        }
        Self { width, height, channels: 3, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Wrapping integer lookup; negative coordinates wrap around.
    #[inline]
    pub fn get_wrapped(&self, x: isize, y: isize, c: usize) -> f32 {
        let w = self.width as isize;
        let h = self.height as isize;
        self.get(x.rem_euclid(w) as usize, y.rem_euclid(h) as usize, c)
    }

    /// Bilinear lookup at normalized coordinates with tiling wrap.
    pub fn sample(&self, u: f32, v: f32, c: usize) -> f32 {
        let x = u * self.width as f32 - 0.5;
        let y = v * self.height as f32 - 0.5;
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (xi, yi) = (x0 as isize, y0 as isize);
        let a = self.get_wrapped(xi, yi, c);
        let b = self.get_wrapped(xi + 1, yi, c);
        let d = self.get_wrapped(xi, yi + 1, c);
        let e = self.get_wrapped(xi + 1, yi + 1, c);
        let top = a + (b - a) * fx;
        let bottom = d + (e - d) * fx;
        top + (bottom - top) * fy
    }

    /// Luminance at a pixel (identity for grayscale).
    #[inline]
    pub fn luma(&self, x: usize, y: usize) -> f32 {
        if self.channels == 1 {
            self.get(x, y, 0)
        } else {
            0.299 * self.get(x, y, 0) + 0.587 * self.get(x, y, 1) + 0.114 * self.get(x, y, 2)
        }
    }

    pub fn to_gray(&self) -> ChannelImage {
        if self.channels == 1 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                data.push(sanitize(self.luma(x, y)));
            }
        }
        ChannelImage { width: self.width, height: self.height, channels: 1, data }
    }

    pub fn to_rgb(&self) -> ChannelImage {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        ChannelImage { width: self.width, height: self.height, channels: 3, data }
    }

    /// Applies `f` to every sample and clamps the result.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> ChannelImage {
        ChannelImage {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| sanitize(f(v))).collect(),
        }
    }

    /// Nearest-neighbor resample, mostly for tests and thumbnails.
    pub fn resize_nearest(&self, width: usize, height: usize) -> ChannelImage {
        let mut data = Vec::with_capacity(width * height * self.channels);
        for y in 0..height {
            let sy = y * self.height / height;
            for x in 0..width {
                let sx = x * self.width / width;
                for c in 0..self.channels {
                    data.push(self.get(sx, sy, c));
                }
            }
        }
        ChannelImage { width, height, channels: self.channels, data }
    }

    pub fn mean(&self, c: usize) -> f64 {
        let n = (self.width * self.height) as f64;
        self.data.iter().skip(c).step_by(self.channels).map(|&v| v as f64).sum::<f64>() / n
    }

    pub fn is_valid(&self) -> bool {
        self.data.len() == self.width * self.height * self.channels
            && self.data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v * 255.0).round() as u8).collect()
    }

    /// Encodes as an 8-bit PNG in memory.
    pub fn to_png_bytes(&self) -> Vec<u8> {
        let color = if self.channels == 1 { image::ColorType::L8 } else { image::ColorType::Rgb8 };
        let mut out = Vec::new();
        image::write_buffer_with_format(
            &mut std::io::Cursor::new(&mut out),
            &self.to_bytes(),
            self.width as u32,
            self.height as u32,
            color,
            image::ImageFormat::Png,
        )
        .expect("in-memory PNG encoding");
        out
    }

    pub fn save_png(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_png_bytes())
    }

    /// Binary PGM (grayscale) or PPM (RGB).
    pub fn save_ppm(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        write!(f, "{magic}\n{} {}\n255\n", self.width, self.height)?;
        f.write_all(&self.to_bytes())?;
        f.flush()
    }
}

/// Clamps to [0, 1] and maps NaN to 0 at every kernel boundary.
#[inline]
pub fn sanitize(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}
