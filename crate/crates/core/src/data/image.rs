//! 8-bit PNG IO and resampling.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use super::{BinaryMask, LabelMap};
use crate::error::{Error, Result};

/// Interleaved 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width.checked_mul(height).and_then(|n| n.checked_mul(3)) != Some(data.len()) {
            return Err(Error::Argument(format!(
                "RGB data length {} does not match {width}x{height}x3",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
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

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<RgbImage> {
        if x + w > self.width || y + h > self.height {
            return Err(Error::Geometry(format!(
                "crop {w}x{h}+{x}+{y} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h * 3);
        for row in y..y + h {
            let start = (row * self.width + x) * 3;
            data.extend_from_slice(&self.data[start..start + w * 3]);
        }
        Ok(RgbImage {
            width: w,
            height: h,
            data,
        })
    }

    /// Copies `patch` into `self` with its top-left corner at `(x, y)`.
    pub fn paste(&mut self, patch: &RgbImage, x: usize, y: usize) -> Result<()> {
        if x + patch.width > self.width || y + patch.height > self.height {
            return Err(Error::Geometry(format!(
                "paste of {}x{} at ({x},{y}) exceeds {}x{}",
                patch.width, patch.height, self.width, self.height
            )));
        }
        for row in 0..patch.height {
            let dst = ((y + row) * self.width + x) * 3;
            let src = row * patch.width * 3;
            self.data[dst..dst + patch.width * 3].copy_from_slice(&patch.data[src..src + patch.width * 3]);
        }
        Ok(())
    }
}

/// Nearest-neighbour resampling for discrete maps.
pub trait NearestResample: Sized {
    fn dims(&self) -> (usize, usize);
    fn resample(&self, out_w: usize, out_h: usize, src_x: &[usize], src_y: &[usize]) -> Self;
}

impl NearestResample for LabelMap {
    fn dims(&self) -> (usize, usize) {
        (self.width(), self.height())
    }

    fn resample(&self, out_w: usize, out_h: usize, src_x: &[usize], src_y: &[usize]) -> Self {
        let mut data = Vec::with_capacity(out_w * out_h);
        for &sy in src_y {
            for &sx in src_x {
                data.push(self.get(sx, sy));
            }
        }
        LabelMap::new(out_w, out_h, data, self.ignore_id()).expect("resampled size matches")
    }
}

impl NearestResample for BinaryMask {
    fn dims(&self) -> (usize, usize) {
        (self.width(), self.height())
    }

    fn resample(&self, out_w: usize, out_h: usize, src_x: &[usize], src_y: &[usize]) -> Self {
        let mut data = Vec::with_capacity(out_w * out_h);
        for &sy in src_y {
            for &sx in src_x {
                data.push(self.get(sx, sy));
            }
        }
        BinaryMask::new(out_w, out_h, data).expect("resampled size matches")
    }
}

/// Source index of output pixel `dst` under half-pixel-center nearest sampling.
pub(crate) fn nearest_index(dst: usize, src_size: usize, dst_size: usize) -> usize {
    (((2 * dst + 1) * src_size) / (2 * dst_size)).min(src_size - 1)
}

pub fn resize_nearest<M: NearestResample>(map: &M, out_w: usize, out_h: usize) -> Result<M> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::Argument(format!("target size {out_w}x{out_h} has a zero dimension")));
    }
    let (w, h) = map.dims();
    if w == 0 || h == 0 {
        return Err(Error::Argument("cannot resize an empty map".into()));
    }
    let src_x: Vec<usize> = (0..out_w).map(|x| nearest_index(x, w, out_w)).collect();
    let src_y: Vec<usize> = (0..out_h).map(|y| nearest_index(y, h, out_h)).collect();
    Ok(map.resample(out_w, out_h, &src_x, &src_y))
}

/// Bilinear resampling of an interleaved float plane with half-pixel centers
/// and edge clamping.
pub(crate) fn resize_bilinear_plane(
    src: &[f32],
    w: usize,
    h: usize,
    channels: usize,
    out_w: usize,
    out_h: usize,
) -> Vec<f32> {
    let taps = |out: usize, size: usize, out_size: usize| -> Vec<(usize, usize, f32)> {
        let scale = size as f64 / out_size as f64;
        (0..out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (size - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(size - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let xs = taps(out_w, w, out_w);
    let ys = taps(out_h, h, out_h);
    let mut out = Vec::with_capacity(out_w * out_h * channels);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..channels {
                let p = |x: usize, y: usize| src[(y * w + x) * channels + c];
                let top = p(x0, y0) + (p(x1, y0) - p(x0, y0)) * fx;
                let bottom = p(x0, y1) + (p(x1, y1) - p(x0, y1)) * fx;
                out.push(top + (bottom - top) * fy);
            }
        }
    }
    out
}

pub fn resize_bilinear(image: &RgbImage, out_w: usize, out_h: usize) -> Result<RgbImage> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::Argument(format!("target size {out_w}x{out_h} has a zero dimension")));
    }
    if image.width == out_w && image.height == out_h {
        return Ok(image.clone());
    }
    let src: Vec<f32> = image.data.iter().map(|&v| f32::from(v)).collect();
    let out = resize_bilinear_plane(&src, image.width, image.height, 3, out_w, out_h);
    let data = out.into_iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    RgbImage::new(out_w, out_h, data)
}

fn decode_png(bytes: &[u8]) -> Result<(usize, usize, png::ColorType, png::BitDepth, Vec<u8>)> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Capacity("png output buffer overflows".into()))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    buf.truncate(info.buffer_size());
    Ok((
        info.width as usize,
        info.height as usize,
        info.color_type,
        info.bit_depth,
        buf,
    ))
}

fn encode_png(width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Format(format!("png: {e}")))?;
        writer
            .write_image_data(data)
            .map_err(|e| Error::Format(format!("png: {e}")))?;
    }
    Ok(out)
}

fn decode_gray8(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let (w, h, color, depth, buf) = decode_png(bytes)?;
    if color != png::ColorType::Grayscale {
        return Err(Error::Format(format!("expected single-channel PNG, got {color:?}")));
    }
    if depth != png::BitDepth::Eight {
        return Err(Error::Format(format!("expected 8-bit PNG, got {depth:?}")));
    }
    Ok((w, h, buf))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads an 8-bit grayscale PNG of raw class IDs.
pub fn read_label_png(path: impl AsRef<Path>, ignore_id: u8) -> Result<LabelMap> {
    decode_label_png(&read_file(path.as_ref())?, ignore_id)
}

pub fn write_label_png(map: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_label_png(map)?)
}

pub fn encode_label_png(map: &LabelMap) -> Result<Vec<u8>> {
    encode_png(map.width(), map.height(), png::ColorType::Grayscale, map.data())
}

pub fn decode_label_png(bytes: &[u8], ignore_id: u8) -> Result<LabelMap> {
    let (w, h, data) = decode_gray8(bytes)?;
    LabelMap::new(w, h, data, ignore_id)
}

/// Encodes a mask as an 8-bit grayscale PNG with values 0 and 255.
pub fn encode_mask_png(mask: &BinaryMask) -> Result<Vec<u8>> {
    let data: Vec<u8> = mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect();
    encode_png(mask.width(), mask.height(), png::ColorType::Grayscale, &data)
}

/// Any nonzero pixel is set.
pub fn decode_mask_png(bytes: &[u8]) -> Result<BinaryMask> {
    let (w, h, data) = decode_gray8(bytes)?;
    BinaryMask::new(w, h, data.into_iter().map(|v| v != 0).collect())
}

pub fn read_mask_png(path: impl AsRef<Path>) -> Result<BinaryMask> {
    decode_mask_png(&read_file(path.as_ref())?)
}

pub fn write_mask_png(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_mask_png(mask)?)
}

pub fn encode_rgb_png(image: &RgbImage) -> Result<Vec<u8>> {
    encode_png(image.width, image.height, png::ColorType::Rgb, &image.data)
}

/// Accepts 8-bit RGB, RGBA (alpha dropped) or grayscale (replicated).
pub fn decode_rgb_png(bytes: &[u8]) -> Result<RgbImage> {
    let (w, h, color, depth, buf) = decode_png(bytes)?;
    if depth != png::BitDepth::Eight {
        return Err(Error::Format(format!("expected 8-bit PNG, got {depth:?}")));
    }
    let data = match color {
        png::ColorType::Rgb => buf,
        png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&v| [v, v, v]).collect(),
        other => return Err(Error::Format(format!("unsupported PNG color type {other:?}"))),
    };
    RgbImage::new(w, h, data)
}

pub fn read_rgb_png(path: impl AsRef<Path>) -> Result<RgbImage> {
    decode_rgb_png(&read_file(path.as_ref())?)
}

pub fn write_rgb_png(image: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_rgb_png(image)?)
}

/// Width and height from a PNG header without decoding pixels.
pub fn png_dimensions(path: impl AsRef<Path>) -> Result<(usize, usize)> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let reader = png::Decoder::new(Cursor::new(&bytes[..]))
        .read_info()
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    let info = reader.info();
    Ok((info.width as usize, info.height as usize))
}
