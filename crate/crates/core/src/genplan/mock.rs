use crate::data::{decode_label_png, BinaryMask, RgbImage};
use crate::error::{Error, Result};
use crate::rng::fnv1a64;

use super::inpaint_prompt;
use super::service::{
    b64_decode, image_from_b64, image_to_b64, mask_from_b64, mask_to_b64, CaptionRequest, CaptionResponse,
    ExtractMaskRequest, GenerateRequest, GenerativeService, ImageResponse, InpaintRequest, MaskResponse,
    RefineRequest,
};

/// Fraction of the inner region's shorter side used as disc diameter.
pub const DISC_FRACTION: f64 = 0.6;

const CAPTIONS: [&str; 6] = [
    "a city street with cars",
    "a road lined with trees and buildings",
    "a busy intersection with pedestrians",
    "a street with parked cars and a sidewalk",
    "a highway under a bridge",
    "a residential street with houses",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockMode {
    /// `/inpaint` paints a solid disc in the inner region.
    Disc,
    /// `/inpaint` returns its input unchanged.
    Identity,
}

/// Hermetic stand-in for the generative service.
///
/// Disc colour is derived from the FNV-1a hash of the prompt and always has a
/// red channel of at least 128 and a green channel below 64, so it never
/// occurs on grayscale canvases. `/extract_mask` returns the exact pixels of
/// that colour, `/refine` is the identity and `/generate` paints a fixed
/// palette colour per class.
#[derive(Debug, Clone, Copy)]
pub struct MockService {
    pub mode: MockMode,
}

impl Default for MockService {
    fn default() -> Self {
        Self { mode: MockMode::Disc }
    }
}

impl MockService {
    pub fn identity() -> Self {
        Self { mode: MockMode::Identity }
    }

    pub fn prompt_color(prompt: &str) -> [u8; 3] {
        let h = fnv1a64(prompt.as_bytes()).to_le_bytes();
        [0x80 | h[0], h[1] & 0x3F, h[2]]
    }

    pub fn palette(class_id: u8) -> [u8; 3] {
        let h = fnv1a64(&[class_id]).to_le_bytes();
        [h[0], h[1], h[2]]
    }

    /// Centre and radius of the painted disc, in pixel units of `mask`.
    pub fn disc_geometry(mask: &BinaryMask) -> Option<(f64, f64, f64)> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if mask.get(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        if x0 == usize::MAX {
            return None;
        }
        let (bw, bh) = ((x1 - x0) as f64, (y1 - y0) as f64);
        let r = DISC_FRACTION * bw.min(bh) / 2.0;
        Some(((x0 + x1) as f64 / 2.0, (y0 + y1) as f64 / 2.0, r))
    }
}

/// Pixel centres within distance `r` of `(cx, cy)`.
pub(crate) fn in_disc(x: usize, y: usize, cx: f64, cy: f64, r: f64) -> bool {
    let dx = x as f64 + 0.5 - cx;
    let dy = y as f64 + 0.5 - cy;
    dx * dx + dy * dy <= r * r
}

impl GenerativeService for MockService {
    fn inpaint(&self, req: &InpaintRequest) -> Result<ImageResponse> {
        let mut image = image_from_b64(&req.image_b64)?;
        let inner = mask_from_b64(&req.inner_mask_b64)?;
        if (inner.width(), inner.height()) != (image.width(), image.height()) {
            return Err(Error::Argument("inner mask and image sizes differ".into()));
        }
        if self.mode == MockMode::Disc {
            if let Some((cx, cy, r)) = MockService::disc_geometry(&inner) {
                let color = MockService::prompt_color(&req.prompt);
                for y in 0..image.height() {
                    for x in 0..image.width() {
                        if inner.get(x, y) && in_disc(x, y, cx, cy, r) {
                            image.put(x, y, color);
                        }
                    }
                }
            }
        }
        Ok(ImageResponse { image_b64: image_to_b64(&image)? })
    }

    fn refine(&self, req: &RefineRequest) -> Result<ImageResponse> {
        // validate the payload even though the image passes through
        image_from_b64(&req.image_b64)?;
        Ok(ImageResponse { image_b64: req.image_b64.clone() })
    }

    fn extract_mask(&self, req: &ExtractMaskRequest) -> Result<MaskResponse> {
        let image = image_from_b64(&req.image_b64)?;
        let color = MockService::prompt_color(&inpaint_prompt(&req.object_name));
        let mask = BinaryMask::from_fn(image.width(), image.height(), |x, y| image.get(x, y) == color);
        Ok(MaskResponse { mask_b64: mask_to_b64(&mask)? })
    }

    fn generate(&self, req: &GenerateRequest) -> Result<ImageResponse> {
        let control = decode_label_png(&b64_decode(&req.control_mask_b64)?, 255)?;
        let tint = MockService::prompt_color(&req.prompt);
        let image = RgbImage::from_fn(control.width(), control.height(), |x, y| {
            let p = MockService::palette(control.get(x, y));
            [
                ((u16::from(p[0]) + u16::from(tint[0])) / 2) as u8,
                ((u16::from(p[1]) + u16::from(tint[1])) / 2) as u8,
                ((u16::from(p[2]) + u16::from(tint[2])) / 2) as u8,
            ]
        });
        Ok(ImageResponse { image_b64: image_to_b64(&image)? })
    }

    fn caption(&self, req: &CaptionRequest) -> Result<CaptionResponse> {
        let image = image_from_b64(&req.image_b64)?;
        let idx = (fnv1a64(image.data()) % CAPTIONS.len() as u64) as usize;
        Ok(CaptionResponse { caption: CAPTIONS[idx].to_string() })
    }
}
