//! Multi-channel float images and their PNG encodings.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{GeometryError, Result};

/// Row-major `height x width x channels` image; row 0 is the top row.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn filled(width: usize, height: usize, value: &[f64]) -> Self {
        let mut img = Self::new(width, height, value.len());
        for px in img.data.chunks_exact_mut(value.len()) {
            px.copy_from_slice(value);
        }
        img
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(GeometryError::Image(format!(
                "{}x{}x{} image needs {} values, got {}",
                width,
                height,
                channels,
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Keep channels `[start, start + count)`.
    pub fn select_channels(&self, start: usize, count: usize) -> Image {
        let mut out = Image::new(self.width, self.height, count);
        for (dst, src) in out.data.chunks_exact_mut(count).zip(self.data.chunks_exact(self.channels)) {
            dst.copy_from_slice(&src[start..start + count]);
        }
        out
    }

    /// Channel-wise concatenation of same-size images.
    pub fn concat_channels(parts: &[&Image]) -> Result<Image> {
        let first = parts.first().ok_or_else(|| GeometryError::Image("concat of zero images".into()))?;
        if parts.iter().any(|p| p.width != first.width || p.height != first.height) {
            return Err(GeometryError::Image("concat_channels: size mismatch".into()));
        }
        let channels = parts.iter().map(|p| p.channels).sum();
        let mut out = Image::new(first.width, first.height, channels);
        for px in 0..first.width * first.height {
            let mut o = px * channels;
            for p in parts {
                out.data[o..o + p.channels].copy_from_slice(&p.data[px * p.channels..(px + 1) * p.channels]);
                o += p.channels;
            }
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Write as PNG. 1 channel → grayscale, 2 → gray+alpha, 3 → RGB,
    /// 4 → RGBA. Values are clamped to [0, 1] and quantized.
    pub fn save_png(&self, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
        let path = path.as_ref();
        let color = match self.channels {
            1 => png::ColorType::Grayscale,
            2 => png::ColorType::GrayscaleAlpha,
            3 => png::ColorType::Rgb,
            4 => png::ColorType::Rgba,
            c => return Err(GeometryError::Image(format!("cannot encode {c} channels as PNG"))),
        };
        let file = File::create(path).map_err(|e| GeometryError::io(path, e))?;
        let mut enc = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        enc.set_color(color);
        let bytes = match depth {
            BitDepth::Eight => {
                enc.set_depth(png::BitDepth::Eight);
                self.data.iter().map(|v| quantize(*v, 255.0) as u8).collect::<Vec<u8>>()
            }
            BitDepth::Sixteen => {
                enc.set_depth(png::BitDepth::Sixteen);
                self.data
                    .iter()
                    .flat_map(|v| (quantize(*v, 65535.0) as u16).to_be_bytes())
                    .collect()
            }
        };
        let mut w = enc.write_header()?;
        w.write_image_data(&bytes)?;
        Ok(())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| GeometryError::io(path, e))?;
        let dec = png::Decoder::new(BufReader::new(file));
        let mut reader = dec.read_info()?;
        let mut buf = vec![0; reader.output_buffer_size()];
        let info = reader.next_frame(&mut buf)?;
        let channels = info.color_type.samples();
        if info.color_type == png::ColorType::Indexed {
            return Err(GeometryError::Image("indexed PNGs are not supported".into()));
        }
        let (w, h) = (info.width as usize, info.height as usize);
        let data = match info.bit_depth {
            png::BitDepth::Eight => buf[..w * h * channels].iter().map(|&b| b as f64 / 255.0).collect(),
            png::BitDepth::Sixteen => buf[..w * h * channels * 2]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0)
                .collect(),
            d => return Err(GeometryError::Image(format!("unsupported bit depth {d:?}"))),
        };
        Image::from_data(w, h, channels, data)
    }
}

fn quantize(v: f64, max: f64) -> f64 {
    (v.clamp(0.0, 1.0) * max).round()
}
