//! 8-bit raster images, PNG codec and bilinear resampling.

use std::io::Cursor;

use image::{DynamicImage, ImageFormat};

use crate::error::{Error, Result};

/// Number of interleaved 8-bit channels in a [`RasterImage`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channels {
    Gray = 1,
    Rgb = 3,
}

impl Channels {
    pub fn count(self) -> usize {
        self as usize
    }

    pub fn from_count(n: usize) -> Option<Self> {
        match n {
            1 => Some(Channels::Gray),
            3 => Some(Channels::Rgb),
            _ => None,
        }
    }
}

/// Row-major, interleaved, 8 bits per channel.
#[derive(Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    channels: Channels,
    data: Vec<u8>,
}

impl std::fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RasterImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl RasterImage {
    pub fn new(width: u32, height: u32, channels: Channels, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidRaster(format!("zero extent {width}x{height}")));
        }
        let expected = width as usize * height as usize * channels.count();
        if data.len() != expected {
            return Err(Error::InvalidRaster(format!(
                "{width}x{height}x{} needs {expected} bytes, got {}",
                channels.count(),
                data.len()
            )));
        }
        Ok(Self { width, height, channels, data })
    }

    /// An image with every channel of every pixel set to `value`.
    pub fn filled(width: u32, height: u32, channels: Channels, value: u8) -> Result<Self> {
        let len = width as usize * height as usize * channels.count();
        Self::new(width, height, channels, vec![value; len])
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        channels: Channels,
        mut f: impl FnMut(u32, u32, usize) -> u8,
    ) -> Result<Self> {
        let c = channels.count();
        let mut data = Vec::with_capacity(width as usize * height as usize * c);
        for y in 0..height {
            for x in 0..width {
                for ch in 0..c {
                    data.push(f(x, y, ch));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> Channels {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels.count()
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let o = self.offset(x, y);
        &self.data[o..o + self.channels.count()]
    }

    pub fn pixel_mut(&mut self, x: u32, y: u32) -> &mut [u8] {
        let o = self.offset(x, y);
        let c = self.channels.count();
        &mut self.data[o..o + c]
    }

    /// Copies the `w`x`h` block at (`x`, `y`) without resampling.
    pub fn sub_image(&self, x: u32, y: u32, w: u32, h: u32) -> Result<Self> {
        if x as u64 + w as u64 > self.width as u64 || y as u64 + h as u64 > self.height as u64 {
            return Err(Error::InvalidRaster(format!(
                "block {w}x{h}+{x}+{y} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let c = self.channels.count();
        let mut data = Vec::with_capacity(w as usize * h as usize * c);
        for row in y..y + h {
            let start = self.offset(x, row);
            data.extend_from_slice(&self.data[start..start + w as usize * c]);
        }
        Self::new(w, h, self.channels, data)
    }

    /// Grayscale is replicated into three channels; color passes through.
    pub fn to_rgb(&self) -> Self {
        match self.channels {
            Channels::Rgb => self.clone(),
            Channels::Gray => {
                let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
                Self { width: self.width, height: self.height, channels: Channels::Rgb, data }
            }
        }
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
            .map_err(|e| Error::UnreadableMedia(e.to_string()))?;
        let (width, height) = (img.width(), img.height());
        let (channels, data) = match img {
            DynamicImage::ImageLuma8(buf) => (Channels::Gray, buf.into_raw()),
            DynamicImage::ImageRgb8(buf) => (Channels::Rgb, buf.into_raw()),
            other if other.color().has_color() => (Channels::Rgb, other.to_rgb8().into_raw()),
            other => (Channels::Gray, other.to_luma8().into_raw()),
        };
        Self::new(width, height, channels, data).map_err(|e| Error::UnreadableMedia(e.to_string()))
    }

    /// Deterministic PNG encoding preserving the channel count.
    pub fn encode_png(&self) -> Vec<u8> {
        let color = match self.channels {
            Channels::Gray => image::ExtendedColorType::L8,
            Channels::Rgb => image::ExtendedColorType::Rgb8,
        };
        let mut out = Cursor::new(Vec::new());
        image::write_buffer_with_format(
            &mut out,
            &self.data,
            self.width,
            self.height,
            color,
            ImageFormat::Png,
        )
        .expect("encoding a validated raster into memory cannot fail");
        out.into_inner()
    }
}

/// Rounds half away from zero and saturates to the 8-bit range.
#[inline]
pub fn quantize(v: f64) -> u8 {
    // after clamping v is non-negative, so adding 0.5 and truncating is
    // round-half-up; this avoids a libm call in the resampling loops
    let v = v.clamp(0.0, 255.0);
    let r = (v + 0.5) as u8;
    // 0.49999999999999994 + 0.5 rounds up to 1.0 in binary64
    if r as f64 - 0.5 > v { r - 1 } else { r }
}

#[derive(Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

/// Pixel-center aligned sample positions for `dst_len` outputs spanning
/// `src_len` inputs starting at `src_start`.
fn taps(src_start: u32, src_len: u32, dst_len: u32, limit: u32) -> Vec<Tap> {
    let ratio = src_len as f64 / dst_len as f64;
    let last = (src_len - 1) as f64;
    (0..dst_len)
        .map(|d| {
            let s = ((d as f64 + 0.5) * ratio - 0.5).clamp(0.0, last);
            let lo = s.floor();
            let frac = s - lo;
            let lo = src_start + lo as u32;
            let hi = (lo + 1).min(src_start + src_len - 1).min(limit - 1);
            Tap { lo: lo as usize, hi: hi as usize, frac }
        })
        .collect()
}

/// Resamples the `w`x`h` region at (`x`, `y`) of `src` to `dst_w`x`dst_h`
/// with bilinear interpolation. Channel count is preserved. Equal source and
/// destination sizes take an exact copy path.
pub fn resize_region(
    src: &RasterImage,
    x: u32,
    y: u32,
    w: u32,
    h: u32,
    dst_w: u32,
    dst_h: u32,
) -> Result<RasterImage> {
    if w == 0 || h == 0 || dst_w == 0 || dst_h == 0 {
        return Err(Error::InvalidRaster("resize with zero extent".into()));
    }
    if w == dst_w && h == dst_h {
        return src.sub_image(x, y, w, h);
    }
    if x as u64 + w as u64 > src.width as u64 || y as u64 + h as u64 > src.height as u64 {
        return Err(Error::InvalidRaster(format!(
            "region {w}x{h}+{x}+{y} exceeds {}x{}",
            src.width, src.height
        )));
    }
    let xs = taps(x, w, dst_w, src.width);
    let ys = taps(y, h, dst_h, src.height);
    let c = src.channels.count();
    let stride = src.width as usize * c;
    let mut data = Vec::with_capacity(dst_w as usize * dst_h as usize * c);
    for ty in &ys {
        let row0 = &src.data[ty.lo * stride..(ty.lo + 1) * stride];
        let row1 = &src.data[ty.hi * stride..(ty.hi + 1) * stride];
        for tx in &xs {
            for ch in 0..c {
                let p00 = row0[tx.lo * c + ch] as f64;
                let p10 = row0[tx.hi * c + ch] as f64;
                let p01 = row1[tx.lo * c + ch] as f64;
                let p11 = row1[tx.hi * c + ch] as f64;
                let top = p00 + (p10 - p00) * tx.frac;
                let bottom = p01 + (p11 - p01) * tx.frac;
                data.push(quantize(top + (bottom - top) * ty.frac));
            }
        }
    }
    RasterImage::new(dst_w, dst_h, src.channels, data)
}

/// Whole-image bilinear resize.
pub fn resize(src: &RasterImage, dst_w: u32, dst_h: u32) -> Result<RasterImage> {
    resize_region(src, 0, 0, src.width, src.height, dst_w, dst_h)
}
