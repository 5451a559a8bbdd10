use std::path::Path;

use crate::error::{Error, Result};

/// `H×W×C` float image, row-major with interleaved channels, values in [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image; values are clamped into [0,1].
    pub fn new(height: usize, width: usize, channels: usize, mut data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Param(format!("images have 1 or 3 channels, got {channels}")));
        }
        if height == 0 || width == 0 {
            return Err(Error::Param("image extents must be positive".into()));
        }
        if data.len() != height * width * channels {
            return Err(Error::dim(
                "image",
                &[height, width, channels],
                &[data.len()],
            ));
        }
        data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self::new(height, width, channels, vec![value; height * width * channels])
            .expect("valid image geometry")
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data).expect("valid image geometry")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Luma with weights 0.299/0.587/0.114; single-channel input is copied.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    /// Bilinear sample at continuous pixel coordinates, clamped to the border.
    pub fn sample(&self, x: f64, y: f64, c: usize) -> f64 {
        bilinear(&self.data, self.height, self.width, self.channels, x, y, c)
    }

    /// Bilinear resize with pixel-center alignment.
    pub fn resize(&self, height: usize, width: usize) -> Image {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        Image::from_fn(height, width, self.channels, |y, x, c| {
            let src_y = (y as f64 + 0.5) * sy - 0.5;
            let src_x = (x as f64 + 0.5) * sx - 0.5;
            self.sample(src_x, src_y, c)
        })
    }

    /// 8-bit interleaved bytes, rounding to nearest.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Image> {
        Image::new(
            height,
            width,
            3,
            bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
    }

    /// Decodes any PNG as 8-bit RGB.
    pub fn load_png(path: &Path) -> Result<Image> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let decoded = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
            .map_err(|e| Error::Decode {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?
            .to_rgb8();
        let (w, h) = decoded.dimensions();
        Image::from_rgb8(h as usize, w as usize, decoded.as_raw())
    }

    /// Writes an 8-bit PNG (grayscale images are expanded to RGB).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let rgb = if self.channels == 3 {
            self.to_u8()
        } else {
            self.to_u8().iter().flat_map(|&g| [g, g, g]).collect()
        };
        write_rgb8_png(path, self.height, self.width, &rgb)
    }
}

pub(crate) fn write_rgb8_png(path: &Path, height: usize, width: usize, rgb: &[u8]) -> Result<()> {
    image::save_buffer_with_format(
        path,
        rgb,
        width as u32,
        height as u32,
        image::ExtendedColorType::Rgb8,
        image::ImageFormat::Png,
    )
    .map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Decode {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}

pub(crate) fn bilinear(
    data: &[f64],
    height: usize,
    width: usize,
    channels: usize,
    x: f64,
    y: f64,
    c: usize,
) -> f64 {
    let x = x.clamp(0.0, (width - 1) as f64);
    let y = y.clamp(0.0, (height - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let at = |yy: usize, xx: usize| data[(yy * width + xx) * channels + c];
    let top = at(y0, x0) + fx * (at(y0, x1) - at(y0, x0));
    let bottom = at(y1, x0) + fx * (at(y1, x1) - at(y1, x0));
    top + fy * (bottom - top)
}

/// Per-pixel displacement `(f¹, f²)` in pixels; channel 0 is horizontal.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        FlowField {
            height,
            width,
            data: vec![0.0; height * width * 2],
        }
    }

    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 2 {
            return Err(Error::dim("flow", &[height, width, 2], &[data.len()]));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("flow field must be finite".into()));
        }
        Ok(FlowField {
            height,
            width,
            data,
        })
    }

    /// Flow with the same vector at every pixel.
    pub fn constant(height: usize, width: usize, u: f64, v: f64) -> Self {
        let data = (0..height * width).flat_map(|_| [u, v]).collect();
        FlowField {
            height,
            width,
            data,
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> (f64, f64)) -> Self {
        let mut data = Vec::with_capacity(height * width * 2);
        for y in 0..height {
            for x in 0..width {
                let (u, v) = f(y, x);
                data.push(u);
                data.push(v);
            }
        }
        FlowField {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize) -> (f64, f64) {
        let i = (y * self.width + x) * 2;
        (self.data[i], self.data[i + 1])
    }

    pub fn max_magnitude(&self) -> f64 {
        self.data
            .chunks(2)
            .map(|p| p[0].hypot(p[1]))
            .fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> FlowField {
        FlowField {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// Bilinear resize; vectors are multiplied by the per-axis scale factor.
    pub fn resize(&self, height: usize, width: usize) -> FlowField {
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let mut out = FlowField::zeros(height, width);
        for y in 0..height {
            for x in 0..width {
                let src_y = (y as f64 + 0.5) * sy - 0.5;
                let src_x = (x as f64 + 0.5) * sx - 0.5;
                let u = bilinear(&self.data, self.height, self.width, 2, src_x, src_y, 0);
                let v = bilinear(&self.data, self.height, self.width, 2, src_x, src_y, 1);
                let i = (y * width + x) * 2;
                out.data[i] = u / sx;
                out.data[i + 1] = v / sy;
            }
        }
        out
    }

    /// Mean endpoint error against `truth` over `[y0,y1)×[x0,x1)`.
    pub fn mean_endpoint_error(
        &self,
        truth: &FlowField,
        rows: std::ops::Range<usize>,
        cols: std::ops::Range<usize>,
    ) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for y in rows {
            for x in cols.clone() {
                let (u, v) = self.get(y, x);
                let (tu, tv) = truth.get(y, x);
                sum += (u - tu).hypot(v - tv);
                n += 1;
            }
        }
        sum / n.max(1) as f64
    }
}
