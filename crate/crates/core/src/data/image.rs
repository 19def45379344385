//! RGB frames: PNG I/O, resizing, cropping and colour jitter.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

/// 8-bit RGB image, interleaved row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 || width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "{} bytes for a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Bilinear resampling with half-pixel centres: output pixel `j` samples
    /// the source at `(j + 0.5)·(in/out) − 0.5`, clamped to the edge pixels.
    /// Results are rounded to the nearest integer.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Result<Image> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("resize target must be non-empty"));
        }
        if (width, height) == (self.width, self.height) {
            return Ok(self.clone());
        }
        let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
            let scale = inp as f64 / out as f64;
            (0..out)
                .map(|j| {
                    let src = ((j as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                    let i0 = src.floor() as usize;
                    let i1 = (i0 + 1).min(inp - 1);
                    (i0, i1, src - i0 as f64)
                })
                .collect()
        };
        let xs = taps(width, self.width);
        let ys = taps(height, self.height);
        let mut data = vec![0u8; width * height * 3];
        for (y, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
                for c in 0..3 {
                    let p = |xx: usize, yy: usize| self.data[(yy * self.width + xx) * 3 + c] as f64;
                    let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
                    let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
                    let v = top * (1.0 - fy) + bottom * fy;
                    data[(y * width + x) * 3 + c] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        Ok(Image { width, height, data })
    }

    /// The `height × width` window whose top-left corner is at `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Image> {
        if row + height > self.height || col + width > self.width || height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "crop {height}x{width} at ({row}, {col}) exceeds {}x{} image",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(width * height * 3);
        for y in row..row + height {
            let start = (y * self.width + col) * 3;
            data.extend_from_slice(&self.data[start..start + width * 3]);
        }
        Ok(Image { width, height, data })
    }

    /// Planar `3 × H × W` values `(p/255 − mean)/std`.
    pub fn to_planes(&self, mean: f64, std: f64) -> Vec<f64> {
        let plane = self.width * self.height;
        let mut out = vec![0.0; 3 * plane];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + i] = (px[c] as f64 / 255.0 - mean) / std;
            }
        }
        out
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Png(format!("{}: {e}", path.display())))?;
        writer
            .write_image_data(&self.data)
            .map_err(|e| Error::Png(format!("{}: {e}", path.display())))
    }

    /// Reads 8-bit grey, grey-alpha, RGB or RGBA PNGs (alpha dropped).
    pub fn read_png(path: &Path) -> Result<Image> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut decoder = png::Decoder::new(BufReader::new(file));
        decoder.set_transformations(png::Transformations::normalize_to_color8());
        let png_err = |e: png::DecodingError| Error::Png(format!("{}: {e}", path.display()));
        let mut reader = decoder.read_info().map_err(png_err)?;
        let mut buf = vec![0; reader.output_buffer_size()];
        let info = reader.next_frame(&mut buf).map_err(png_err)?;
        let (w, h) = (info.width as usize, info.height as usize);
        let channels = info.color_type.samples();
        let raw = &buf[..w * h * channels];
        let data = match info.color_type {
            png::ColorType::Rgb => raw.to_vec(),
            png::ColorType::Rgba => raw.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
            png::ColorType::Grayscale => raw.iter().flat_map(|&g| [g, g, g]).collect(),
            png::ColorType::GrayscaleAlpha => raw.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
            png::ColorType::Indexed => {
                return Err(Error::Png(format!("{}: palette was not expanded", path.display())))
            }
        };
        Image::new(w, h, data)
    }
}

/// Writes 8-bit greyscale pixels, row-major.
pub fn write_gray_png(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height || width == 0 || height == 0 {
        return Err(Error::invalid(format!("{} pixels for a {width}x{height} image", pixels.len())));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| Error::Png(format!("{}: {e}", path.display()));
    enc.write_header().map_err(png_err)?.write_image_data(pixels).map_err(png_err)
}

/// Colour jitter scales; 1.0 leaves the image unchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jitter {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

impl Jitter {
    pub const IDENTITY: Jitter = Jitter {
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
    };

    pub fn draw<R: Rng + ?Sized>(rng: &mut R, spread: f64) -> Self {
        let mut s = || rng.gen_range(1.0 - spread..=1.0 + spread);
        Jitter {
            brightness: s(),
            contrast: s(),
            saturation: s(),
        }
    }

    /// Brightness scales every value; contrast scales the distance from the
    /// image's mean intensity; saturation scales the distance of each pixel
    /// from its own luma. Results are rounded and clamped to `[0, 255]`.
    pub fn apply(&self, img: &Image) -> Image {
        if *self == Jitter::IDENTITY {
            return img.clone();
        }
        let vals: Vec<f64> = img.data.iter().map(|&v| v as f64 * self.brightness).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let mut data = Vec::with_capacity(vals.len());
        for px in vals.chunks_exact(3) {
            let c: Vec<f64> = px.iter().map(|v| (v - mean) * self.contrast + mean).collect();
            let luma = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
            for v in c {
                data.push(((v - luma) * self.saturation + luma).round().clamp(0.0, 255.0) as u8);
            }
        }
        Image {
            width: img.width,
            height: img.height,
            data,
        }
    }
}
