use serde::{Deserialize, Serialize};

use crate::data::{resize_nearest, BinaryMask};
use crate::error::{Error, Result};

/// Square region that gets regenerated, in full-image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InpaintBox {
    pub x: usize,
    pub y: usize,
    pub size: usize,
    pub image_w: usize,
    pub image_h: usize,
}

impl InpaintBox {
    pub fn new(x: usize, y: usize, size: usize, image_w: usize, image_h: usize) -> Result<Self> {
        let b = Self { x, y, size, image_w, image_h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.image_w.min(self.image_h);
        if m < 8 {
            return Err(Error::Geometry(format!("image {}x{} is too small", self.image_w, self.image_h)));
        }
        if self.size < m / 4 || self.size > m / 2 {
            return Err(Error::Geometry(format!("box size {} outside [{}, {}]", self.size, m / 4, m / 2)));
        }
        if self.x + self.size > self.image_w || self.y + self.size > self.image_h {
            return Err(Error::Geometry("box extends past the image".into()));
        }
        if self.y < self.image_h / 4 {
            return Err(Error::Geometry(format!("box top {} above {}", self.y, self.image_h / 4)));
        }
        Ok(())
    }

    pub fn area(&self) -> usize {
        self.size * self.size
    }

    pub fn to_mask(&self) -> BinaryMask {
        let (x0, y0, s) = (self.x, self.y, self.size);
        BinaryMask::from_fn(self.image_w, self.image_h, |x, y| {
            x >= x0 && x < x0 + s && y >= y0 && y < y0 + s
        })
    }
}

/// Square context patch around an [`InpaintBox`]: side `size + 2 * (size / 4)`
/// centred on the box, then shifted to lie inside the image. The requested
/// (pre-shift) corner is kept so the placement can be audited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextBox {
    pub x: usize,
    pub y: usize,
    pub size: usize,
    pub requested_x: i64,
    pub requested_y: i64,
}

impl ContextBox {
    pub fn around(b: &InpaintBox) -> Result<Self> {
        let margin = b.size / 4;
        let size = b.size + 2 * margin;
        if size > b.image_w || size > b.image_h {
            return Err(Error::Geometry(format!(
                "context side {size} does not fit {}x{}",
                b.image_w, b.image_h
            )));
        }
        let requested_x = b.x as i64 - margin as i64;
        let requested_y = b.y as i64 - margin as i64;
        let place = |req: i64, extent: usize| req.clamp(0, (extent - size) as i64) as usize;
        Ok(Self {
            x: place(requested_x, b.image_w),
            y: place(requested_y, b.image_h),
            size,
            requested_x,
            requested_y,
        })
    }

    pub fn contains(&self, b: &InpaintBox) -> bool {
        b.x >= self.x && b.y >= self.y && b.x + b.size <= self.x + self.size && b.y + b.size <= self.y + self.size
    }

    /// The inpainting box in context-local coordinates.
    pub fn local_box_mask(&self, b: &InpaintBox) -> BinaryMask {
        let (x0, y0, s) = (b.x - self.x, b.y - self.y, b.size);
        BinaryMask::from_fn(self.size, self.size, |x, y| x >= x0 && x < x0 + s && y >= y0 && y < y0 + s)
    }
}

/// Context-local mask to working resolution.
pub fn project_mask(local: &BinaryMask, working_size: usize) -> Result<BinaryMask> {
    resize_nearest(local, working_size, working_size)
}

/// Inner-region mask handed to the inpainting call.
pub fn inner_region_mask(b: &InpaintBox, ctx: &ContextBox, working_size: usize) -> Result<BinaryMask> {
    project_mask(&ctx.local_box_mask(b), working_size)
}

/// Maps a working-resolution mask back onto the full image and keeps only the
/// part inside the inpainting box.
pub fn back_project_mask(patch_mask: &BinaryMask, b: &InpaintBox, ctx: &ContextBox) -> Result<BinaryMask> {
    if patch_mask.width() != patch_mask.height() {
        return Err(Error::Geometry("patch mask must be square".into()));
    }
    let local = resize_nearest(patch_mask, ctx.size, ctx.size)?;
    let mut full = BinaryMask::empty(b.image_w, b.image_h);
    for y in b.y..b.y + b.size {
        for x in b.x..b.x + b.size {
            if local.get(x - ctx.x, y - ctx.y) {
                full.set(x, y, true);
            }
        }
    }
    Ok(full)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn context_is_centered_away_from_borders() {
        let b = InpaintBox::new(800, 400, 400, 2048, 1024).unwrap();
        let c = ContextBox::around(&b).unwrap();
        assert_eq!((c.x, c.y, c.size), (700, 300, 600));
        assert_eq!((c.requested_x, c.requested_y), (700, 300));
    }

    #[test]
    fn context_shifts_at_borders_and_keeps_box_position() {
        let b = InpaintBox::new(0, 1024 - 400, 400, 2048, 1024).unwrap();
        let c = ContextBox::around(&b).unwrap();
        assert_eq!((c.x, c.y), (0, 1024 - 600));
        assert_eq!((c.requested_x, c.requested_y), (-100, 524));
        assert!(c.contains(&b));
        let local = c.local_box_mask(&b);
        assert!(local.get(0, 599) && !local.get(0, 199) && local.get(399, 200));
    }

    #[test]
    fn box_validation() {
        assert!(InpaintBox::new(0, 0, 300, 2048, 1024).is_err());
        assert!(InpaintBox::new(0, 300, 100, 2048, 1024).is_err());
        assert!(InpaintBox::new(1800, 300, 300, 2048, 1024).is_err());
        assert!(InpaintBox::new(1748, 724, 300, 2048, 1024).is_ok());
    }

    /// Exhaustive over every rectangle of small grids: nearest upsampling to
    /// the working size followed by the inverse resize is lossless.
    #[test]
    fn back_projection_inverts_projection() {
        for side in 1..=12 {
            for working in side..=20 {
                for x0 in 0..side {
                    for x1 in x0 + 1..=side {
                        for y0 in 0..side {
                            for y1 in y0 + 1..=side {
                                let m = BinaryMask::from_fn(side, side, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1);
                                let p = project_mask(&m, working).unwrap();
                                let back = resize_nearest(&p, side, side).unwrap();
                                assert_eq!(back, m, "side {side} working {working} rect {x0},{y0}..{x1},{y1}");
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn back_projection_clips_to_box() {
        let b = InpaintBox::new(8, 8, 8, 32, 32).unwrap();
        let c = ContextBox::around(&b).unwrap();
        let full = back_project_mask(&BinaryMask::full(64, 64), &b, &c).unwrap();
        assert_eq!(full, b.to_mask());
    }
}
