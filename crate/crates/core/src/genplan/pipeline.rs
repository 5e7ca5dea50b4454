use crate::data::{resize_bilinear, BinaryMask, RgbImage};
use crate::data::image::resize_bilinear_plane;
use crate::error::{Error, Result};

use super::geometry::{back_project_mask, inner_region_mask};
use super::service::{
    image_from_b64, image_to_b64, mask_from_b64, mask_to_b64, ExtractMaskRequest, GenerativeService,
    InpaintRequest, RefineRequest,
};
use super::{InpaintPlan, RefineParams};

/// Extracted masks covering less than this fraction of the box are rejected.
pub const MIN_MASK_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct InpaintOutcome {
    /// Final refined image at full resolution.
    pub image: RgbImage,
    /// Image after paste-back, before refinement.
    pub composite: RgbImage,
    /// Inpainted patch at working resolution.
    pub patch: RgbImage,
    /// Object pixels in full-image coordinates, inside the box.
    pub ood_mask: BinaryMask,
}

/// Crops the context, inpaints the inner region and pastes the result back.
/// Returns `(composite, inpainted patch)`; pixels outside the context box are
/// left untouched.
pub fn composite_patch(
    plan: &InpaintPlan,
    image: &RgbImage,
    service: &dyn GenerativeService,
) -> Result<(RgbImage, RgbImage)> {
    let (b, ctx) = (&plan.inpaint_box, &plan.context);
    let working = plan.inpaint_params.working_size;
    let crop = image.crop(ctx.x, ctx.y, ctx.size, ctx.size)?;
    let patch = resize_bilinear(&crop, working, working)?;
    let inner = inner_region_mask(b, ctx, working)?;
    let resp = service.inpaint(&InpaintRequest {
        image_b64: image_to_b64(&patch)?,
        inner_mask_b64: mask_to_b64(&inner)?,
        prompt: plan.prompt(),
        guidance_scale: plan.inpaint_params.guidance_scale,
        steps: plan.inpaint_params.steps,
        seed: plan.seed,
    })?;
    let inpainted = image_from_b64(&resp.image_b64)?;
    if (inpainted.width(), inpainted.height()) != (working, working) {
        return Err(Error::Data(format!(
            "service returned a {}x{} patch, expected {working}x{working}",
            inpainted.width(),
            inpainted.height()
        )));
    }
    let back = resize_bilinear(&inpainted, ctx.size, ctx.size)?;
    let mut composite = image.clone();
    composite.paste(&back, ctx.x, ctx.y)?;
    Ok((composite, inpainted))
}

/// Light whole-image refinement. The service sees a copy whose long side is at
/// most `max_long_side`; its change is upsampled and added to the full image.
pub fn refine_full_image(
    image: &RgbImage,
    params: &RefineParams,
    seed: u64,
    service: &dyn GenerativeService,
) -> Result<RgbImage> {
    let (w, h) = (image.width(), image.height());
    let long = w.max(h);
    let (ww, wh) = if long > params.max_long_side {
        let s = params.max_long_side as f64 / long as f64;
        (((w as f64 * s).round() as usize).max(1), ((h as f64 * s).round() as usize).max(1))
    } else {
        (w, h)
    };
    let work = resize_bilinear(image, ww, wh)?;
    let resp = service.refine(&RefineRequest {
        image_b64: image_to_b64(&work)?,
        strength: params.strength,
        guidance_scale: params.guidance_scale,
        seed,
    })?;
    let refined = image_from_b64(&resp.image_b64)?;
    if (refined.width(), refined.height()) != (ww, wh) {
        return Err(Error::Data("refined image size differs from the request".into()));
    }
    if (ww, wh) == (w, h) {
        return Ok(refined);
    }
    let residual: Vec<f32> = refined
        .data()
        .iter()
        .zip(work.data())
        .map(|(&r, &o)| f32::from(r) - f32::from(o))
        .collect();
    let up = resize_bilinear_plane(&residual, ww, wh, 3, w, h);
    let data = image
        .data()
        .iter()
        .zip(&up)
        .map(|(&v, &d)| (f32::from(v) + d).round().clamp(0.0, 255.0) as u8)
        .collect();
    RgbImage::new(w, h, data)
}

/// Runs one plan end to end: inpaint, paste back, refine, extract the object
/// mask and map it onto the full image.
pub fn run_inpaint(plan: &InpaintPlan, image: &RgbImage, service: &dyn GenerativeService) -> Result<InpaintOutcome> {
    plan.validate()?;
    let b = &plan.inpaint_box;
    if (image.width(), image.height()) != (b.image_w, b.image_h) {
        return Err(Error::Geometry(format!(
            "plan is for {}x{}, image is {}x{}",
            b.image_w,
            b.image_h,
            image.width(),
            image.height()
        )));
    }
    let (composite, patch) = composite_patch(plan, image, service)?;
    let refined = refine_full_image(&composite, &plan.refine_params, plan.seed, service)?;
    let resp = service.extract_mask(&ExtractMaskRequest {
        image_b64: image_to_b64(&patch)?,
        object_name: plan.object_name.clone(),
        seed: plan.seed,
    })?;
    let patch_mask = mask_from_b64(&resp.mask_b64)?;
    let ood_mask = back_project_mask(&patch_mask, b, &plan.context)?;
    let area = ood_mask.count();
    if (area as f64) < MIN_MASK_FRACTION * b.area() as f64 {
        return Err(Error::Rejected(format!(
            "{}: object mask covers {area} of {} box pixels",
            plan.sample_id,
            b.area()
        )));
    }
    Ok(InpaintOutcome {
        image: refined,
        composite,
        patch,
        ood_mask,
    })
}
