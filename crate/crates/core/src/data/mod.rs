//! Domain types shared by every other module, plus their file formats.

pub(crate) mod image;
mod manifest;
mod tensor;

pub use image::{read_label_png, read_mask_png, read_rgb_png, resize_bilinear, resize_nearest,
    write_label_png, write_mask_png, write_rgb_png, decode_rgb_png, encode_rgb_png,
    decode_mask_png, encode_mask_png, decode_label_png, encode_label_png, png_dimensions, NearestResample, RgbImage};
pub use manifest::{CurationRecord, DatasetManifest, ManifestEntry, Verdict};
pub use tensor::{read_tensor, write_tensor, DType, Tensor, TensorData};

use crate::error::{Error, Result};

pub const DEFAULT_IGNORE_ID: u8 = 255;

/// Per-pixel class IDs, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    data: Vec<u8>,
    ignore_id: u8,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, data: Vec<u8>, ignore_id: u8) -> Result<Self> {
        check_len(width, height, 1, data.len())?;
        Ok(Self {
            width,
            height,
            data,
            ignore_id,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8, ignore_id: u8) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
            ignore_id,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn ignore_id(&self) -> u8 {
        self.ignore_id
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Checks that every value is below `num_classes` or equals the ignore ID.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self
            .data
            .iter()
            .position(|&v| v != self.ignore_id && usize::from(v) >= num_classes)
        {
            Some(i) => Err(Error::Data(format!(
                "label {} at pixel {} is outside [0, {})",
                self.data[i], i, num_classes
            ))),
            None => Ok(()),
        }
    }

    /// Rows `[y0, y1)` as a new map.
    pub fn rows(&self, y0: usize, y1: usize) -> LabelMap {
        let y1 = y1.min(self.height);
        LabelMap {
            width: self.width,
            height: y1 - y0,
            data: self.data[y0 * self.width..y1 * self.width].to_vec(),
            ignore_id: self.ignore_id,
        }
    }

    /// Crop of the rectangle `(x, y, w, h)`; the rectangle must lie inside the map.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<LabelMap> {
        if x + w > self.width || y + h > self.height {
            return Err(Error::Geometry(format!(
                "crop {w}x{h}+{x}+{y} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h);
        for row in y..y + h {
            data.extend_from_slice(&self.data[row * self.width + x..row * self.width + x + w]);
        }
        Ok(LabelMap {
            width: w,
            height: h,
            data,
            ignore_id: self.ignore_id,
        })
    }
}

/// Pre-softmax scores, pixel-major and class-minor.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitStack {
    width: usize,
    height: usize,
    num_classes: usize,
    data: Vec<f32>,
}

impl LogitStack {
    pub fn new(width: usize, height: usize, num_classes: usize, data: Vec<f32>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Argument("num_classes must be positive".into()));
        }
        check_len(width, height, num_classes, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite logit at element {i}")));
        }
        Ok(Self {
            width,
            height,
            num_classes,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, i: usize) -> &[f32] {
        &self.data[i * self.num_classes..(i + 1) * self.num_classes]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.num_classes)
    }

    /// Per-pixel argmax; ties go to the lowest class index.
    pub fn argmax(&self) -> LabelMap {
        let data = self.pixels().map(|p| argmax(p) as u8).collect();
        LabelMap {
            width: self.width,
            height: self.height,
            data,
            ignore_id: DEFAULT_IGNORE_ID,
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::f32(
            vec![self.height as u64, self.width as u64, self.num_classes as u64],
            self.data.clone(),
        )
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        let dims = t.dims().to_vec();
        if dims.len() != 3 {
            return Err(Error::Format(format!("logit tensor must be rank 3, got rank {}", dims.len())));
        }
        let data = t.into_f32()?;
        Self::new(dims[1] as usize, dims[0] as usize, dims[2] as usize, data)
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-pixel class probabilities, same layout as [`LogitStack`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbStack {
    width: usize,
    height: usize,
    num_classes: usize,
    data: Vec<f32>,
}

impl ProbStack {
    pub const SUM_TOLERANCE: f32 = 1e-5;

    pub fn new(width: usize, height: usize, num_classes: usize, data: Vec<f32>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Argument("num_classes must be positive".into()));
        }
        check_len(width, height, num_classes, data.len())?;
        for (i, p) in data.chunks_exact(num_classes).enumerate() {
            if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Data(format!("probability outside [0,1] at pixel {i}")));
            }
            let s: f32 = p.iter().sum();
            if (s - 1.0).abs() > Self::SUM_TOLERANCE {
                return Err(Error::Data(format!("probabilities at pixel {i} sum to {s}")));
            }
        }
        Ok(Self::new_unchecked(width, height, num_classes, data))
    }

    pub(crate) fn new_unchecked(width: usize, height: usize, num_classes: usize, data: Vec<f32>) -> Self {
        Self {
            width,
            height,
            num_classes,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, i: usize) -> &[f32] {
        &self.data[i * self.num_classes..(i + 1) * self.num_classes]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.num_classes)
    }

    pub fn argmax(&self) -> LabelMap {
        let data = self.pixels().map(|p| argmax(p) as u8).collect();
        LabelMap {
            width: self.width,
            height: self.height,
            data,
            ignore_id: DEFAULT_IGNORE_ID,
        }
    }
}

/// Whether larger scores mean "more anomalous".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    HigherIsAnomalous,
    LowerIsAnomalous,
}

/// Per-pixel scalar score (confidence or anomaly), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
    polarity: Polarity,
}

impl ScoreMap {
    pub fn new(width: usize, height: usize, data: Vec<f32>, polarity: Polarity) -> Result<Self> {
        check_len(width, height, 1, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite score at pixel {i}")));
        }
        Ok(Self {
            width,
            height,
            data,
            polarity,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }

    /// Scores oriented so that larger always means more anomalous.
    pub fn anomaly_scores(&self) -> impl Iterator<Item = f32> + '_ {
        let flip = self.polarity == Polarity::LowerIsAnomalous;
        self.data.iter().map(move |&v| if flip { -v } else { v })
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::f32(vec![self.height as u64, self.width as u64], self.data.clone())
    }

    /// Reads a rank-2 f32 tensor; polarity is not stored in the file.
    pub fn from_tensor(t: Tensor, polarity: Polarity) -> Result<Self> {
        let dims = t.dims().to_vec();
        if dims.len() != 2 {
            return Err(Error::Format(format!("score tensor must be rank 2, got rank {}", dims.len())));
        }
        let data = t.into_f32()?;
        Self::new(dims[1] as usize, dims[0] as usize, data, polarity)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        check_len(width, height, 1, data.len())?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
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

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_same(other)?;
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect(),
        })
    }

    pub fn not(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|b| !b).collect(),
        }
    }

    pub fn iou(&self, other: &BinaryMask) -> Result<f64> {
        self.check_same(other)?;
        let (mut inter, mut union) = (0usize, 0usize);
        for (a, b) in self.data.iter().zip(&other.data) {
            inter += usize::from(*a && *b);
            union += usize::from(*a || *b);
        }
        if union == 0 {
            return Err(Error::Undefined("IoU of two empty masks".into()));
        }
        Ok(inter as f64 / union as f64)
    }

    fn check_same(&self, other: &BinaryMask) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Argument(format!(
                "mask sizes differ: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

/// A set of `n` embedding vectors of dimension `d`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl EmbeddingSet {
    pub fn new(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::EmptyInput(format!("embedding set needs at least 2 rows, got {n}")));
        }
        if d == 0 {
            return Err(Error::Argument("embedding dimension must be positive".into()));
        }
        check_len(n, d, 1, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite embedding value".into()));
        }
        Ok(Self { n, d, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        let dims = t.dims().to_vec();
        if dims.len() != 2 {
            return Err(Error::Format(format!("embedding tensor must be rank 2, got rank {}", dims.len())));
        }
        let data = t.into_f64()?;
        Self::new(dims[0] as usize, dims[1] as usize, data)
    }
}

fn check_len(width: usize, height: usize, channels: usize, len: usize) -> Result<()> {
    let expected = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| Error::Capacity(format!("{width}x{height}x{channels} overflows")))?;
    if expected != len {
        return Err(Error::Argument(format!(
            "data length {len} does not match {width}x{height}x{channels}"
        )));
    }
    Ok(())
}
