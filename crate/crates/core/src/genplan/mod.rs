//! Planning and orchestration of the two synthetic-data pipelines:
//! covariate-shift generation from semantic masks, and OOD-object inpainting
//! into existing scenes.
//!
//! Every geometric step (crops, boxes, resampling, paste-back, mask
//! back-projection) runs locally. Neural steps go through
//! [`GenerativeService`], implemented by an HTTP client and by the
//! deterministic [`MockService`].

#[cfg(feature = "http")]
mod client;
mod geometry;
mod mock;
mod pipeline;
mod service;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{resize_nearest, CurationRecord, DatasetManifest, LabelMap, ManifestEntry, Verdict};
use crate::error::{Error, Result};
use crate::rng::{self, Xoshiro256StarStar};

#[cfg(feature = "http")]
pub use client::HttpServiceClient;
pub use geometry::{back_project_mask, inner_region_mask, project_mask, ContextBox, InpaintBox};
pub use mock::{MockMode, MockService, DISC_FRACTION};
pub use pipeline::{composite_patch, refine_full_image, run_inpaint, InpaintOutcome, MIN_MASK_FRACTION};
pub use service::{
    b64_decode, b64_encode, image_from_b64, image_to_b64, mask_from_b64, mask_to_b64, AttemptError, CaptionRequest, CaptionResponse, ExtractMaskRequest, GenerateRequest, GenerativeService, ImageResponse,
    InpaintRequest, MaskResponse, RefineRequest, RetryPolicy,
};

/// Objects inpainted as anomalies; none of them is a Cityscapes class.
pub const OBJECT_VOCABULARY: [&str; 42] = [
    "arcade machine", "armchair", "baby", "bag", "bathtub", "bench", "billboard", "book", "bottle", "box",
    "chair", "cheetah", "chimpanzee", "clock", "computer", "desk", "dolphin", "elephant", "flamingo",
    "giraffe", "gorilla", "graffiti", "hippopotamus", "kangaroo", "koala", "lamp", "lion", "microwave",
    "mirror", "panda", "penguin", "pillow", "plate", "polar bear", "radiator", "refrigerator", "sofa",
    "table", "tiger", "toilet", "vase", "zebra",
];

/// The 19 Cityscapes evaluation classes, in trainId order.
pub const CITYSCAPES_CLASSES: [&str; 19] = [
    "road", "sidewalk", "building", "wall", "fence", "pole", "traffic light", "traffic sign", "vegetation",
    "terrain", "sky", "person", "rider", "car", "truck", "bus", "train", "motorcycle", "bicycle",
];

/// Domains used for the per-shift benchmark sets.
pub const SHIFT_DOMAINS: [&str; 5] = ["india", "fog", "rain", "snow", "night"];

/// The broad "all-domains" prompt set (cities, seasons and weather).
pub const ALL_DOMAINS: [&str; 28] = [
    "Beijing", "Cairo", "clouds", "Dubai", "fall", "fog", "hurricane", "India", "Istanbul", "Johannesburg",
    "lightning", "London", "Moscow", "Mumbai", "night", "Paris", "rain", "sandstorm", "snow", "spring",
    "summer", "sun", "Sydney", "Tokyo", "tornado", "Toronto", "wind", "winter",
];

pub const INPAINT_WORKING_SIZE: usize = 512;
pub const INPAINT_GUIDANCE: f64 = 15.0;
pub const INPAINT_STEPS: u32 = 25;
pub const REFINE_STRENGTH: f64 = 0.65;
pub const REFINE_GUIDANCE: f64 = 7.5;
pub const REFINE_MAX_LONG_SIDE: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Sd15,
    Sdxl,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sd15" => Ok(Preset::Sd15),
            "sdxl" => Ok(Preset::Sdxl),
            other => Err(Error::Argument(format!("unknown preset {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub steps: u32,
    pub guidance_scale: f64,
    pub control_strength: f64,
    pub preset: Preset,
    pub output_size: usize,
}

impl GenerationParams {
    /// 25 DDIM steps, guidance 8, full-strength control, 512 px.
    pub fn sd15() -> Self {
        Self {
            steps: 25,
            guidance_scale: 8.0,
            control_strength: 1.0,
            preset: Preset::Sd15,
            output_size: 512,
        }
    }

    /// 25 steps, guidance 10, control strength 0.65, 1024 px.
    pub fn sdxl() -> Self {
        Self {
            steps: 25,
            guidance_scale: 10.0,
            control_strength: 0.65,
            preset: Preset::Sdxl,
            output_size: 1024,
        }
    }

    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Sd15 => Self::sd15(),
            Preset::Sdxl => Self::sdxl(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Argument("steps must be >= 1".into()));
        }
        if self.guidance_scale.is_nan() || self.guidance_scale <= 0.0 {
            return Err(Error::Argument("guidance_scale must be positive".into()));
        }
        if !(self.control_strength > 0.0 && self.control_strength <= 1.0) {
            return Err(Error::Argument("control_strength must be in (0, 1]".into()));
        }
        if self.output_size != 512 && self.output_size != 1024 {
            return Err(Error::Argument(format!("output_size {} not in {{512, 1024}}", self.output_size)));
        }
        Ok(())
    }
}

/// `"<caption>, in <domain>"`.
pub fn shift_prompt(caption: &str, domain: &str) -> Result<String> {
    let (caption, domain) = (caption.trim(), domain.trim());
    if caption.is_empty() || domain.is_empty() {
        return Err(Error::Argument("caption and domain must be non-empty".into()));
    }
    Ok(format!("{caption}, in {domain}"))
}

/// `"A photo of an <object>"`, article fixed regardless of the noun.
pub fn inpaint_prompt(object_name: &str) -> String {
    format!("A photo of an {object_name}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftGenerationRequest {
    pub sample_id: String,
    pub crop: CropRect,
    /// Square control mask at `params.output_size`, nearest-resampled.
    pub control_mask: LabelMap,
    pub prompt: String,
    pub params: GenerationParams,
}

/// Seeded horizontal square crop of an image `width` x `height`.
pub fn square_crop(rng: &mut Xoshiro256StarStar, width: usize, height: usize) -> Result<CropRect> {
    if width < height || height == 0 {
        return Err(Error::Geometry(format!(
            "{width}x{height} has no horizontal square crop"
        )));
    }
    let x = rng.range_inclusive(0, (width - height) as u64) as usize;
    Ok(CropRect {
        x,
        y: 0,
        width: height,
        height,
    })
}

/// One generation request per sample: a seeded horizontal square crop of the
/// label map, nearest-resized to the output size, with a templated prompt.
///
/// `samples` are `(sample_id, label_map)`; `captions` maps sample IDs to
/// their image captions.
pub fn plan_shift_generation(
    samples: &[(String, LabelMap)],
    captions: &BTreeMap<String, String>,
    domain: &str,
    params: &GenerationParams,
    seed: u64,
) -> Result<Vec<ShiftGenerationRequest>> {
    params.validate()?;
    samples
        .iter()
        .map(|(id, labels)| {
            let caption = captions
                .get(id)
                .ok_or_else(|| Error::Consistency(format!("no caption for sample {id}")))?;
            let mut rng = rng::stream(seed, id, 0);
            let crop = square_crop(&mut rng, labels.width(), labels.height())?;
            let cropped = labels.crop(crop.x, crop.y, crop.width, crop.height)?;
            let control_mask = resize_nearest(&cropped, params.output_size, params.output_size)?;
            Ok(ShiftGenerationRequest {
                sample_id: id.clone(),
                crop,
                control_mask,
                prompt: shift_prompt(caption, domain)?,
                params: *params,
            })
        })
        .collect()
}

/// Box side uniform in `[m/4, m/2]` (m = min side), top-left uniform over
/// positions inside the image with `y >= h/4`.
pub fn sample_inpaint_box(rng: &mut Xoshiro256StarStar, image_w: usize, image_h: usize) -> Result<InpaintBox> {
    let m = image_w.min(image_h);
    if m < 8 {
        return Err(Error::Geometry(format!(
            "image {image_w}x{image_h} is too small for an inpainting box"
        )));
    }
    let size = rng.range_inclusive((m / 4) as u64, (m / 2) as u64) as usize;
    let x = rng.range_inclusive(0, (image_w - size) as u64) as usize;
    let y = rng.range_inclusive((image_h / 4) as u64, (image_h - size) as u64) as usize;
    InpaintBox::new(x, y, size, image_w, image_h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InpaintParams {
    pub guidance_scale: f64,
    pub steps: u32,
    pub working_size: usize,
}

impl Default for InpaintParams {
    fn default() -> Self {
        Self {
            guidance_scale: INPAINT_GUIDANCE,
            steps: INPAINT_STEPS,
            working_size: INPAINT_WORKING_SIZE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineParams {
    pub strength: f64,
    pub guidance_scale: f64,
    pub max_long_side: usize,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self {
            strength: REFINE_STRENGTH,
            guidance_scale: REFINE_GUIDANCE,
            max_long_side: REFINE_MAX_LONG_SIDE,
        }
    }
}

/// Everything needed to replay one inpainting run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintPlan {
    pub sample_id: String,
    pub source_sample_id: String,
    pub object_name: String,
    #[serde(rename = "box")]
    pub inpaint_box: InpaintBox,
    pub context: ContextBox,
    /// Seed forwarded to every service call of this plan.
    pub seed: u64,
    pub inpaint_params: InpaintParams,
    pub refine_params: RefineParams,
}

impl InpaintPlan {
    pub fn validate(&self) -> Result<()> {
        if !OBJECT_VOCABULARY.contains(&self.object_name.as_str()) {
            return Err(Error::Argument(format!("{:?} is not in the object vocabulary", self.object_name)));
        }
        self.inpaint_box.validate()?;
        let expected = ContextBox::around(&self.inpaint_box)?;
        if expected != self.context {
            return Err(Error::Geometry("context box does not match its inpainting box".into()));
        }
        Ok(())
    }

    pub fn prompt(&self) -> String {
        inpaint_prompt(&self.object_name)
    }
}

/// Plans one inpainting run for an image; deterministic in
/// `(seed, sample_id)`.
pub fn plan_inpaint(
    sample_id: &str,
    source_sample_id: &str,
    image_w: usize,
    image_h: usize,
    seed: u64,
) -> Result<InpaintPlan> {
    let mut rng = rng::stream(seed, sample_id, 0);
    let inpaint_box = sample_inpaint_box(&mut rng, image_w, image_h)?;
    let object_name = OBJECT_VOCABULARY[rng.below(OBJECT_VOCABULARY.len() as u64) as usize].to_string();
    let context = ContextBox::around(&inpaint_box)?;
    Ok(InpaintPlan {
        sample_id: sample_id.to_string(),
        source_sample_id: source_sample_id.to_string(),
        object_name,
        inpaint_box,
        context,
        seed: rng.next_u64(),
        inpaint_params: InpaintParams::default(),
        refine_params: RefineParams::default(),
    })
}

/// Latest record per sample (log order wins), sorted by sample ID.
pub fn compact_verdicts(log: &[CurationRecord]) -> Vec<CurationRecord> {
    let mut latest: BTreeMap<&str, &CurationRecord> = BTreeMap::new();
    for r in log {
        latest.insert(r.sample_id.as_str(), r);
    }
    latest.into_values().cloned().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Curated,
    All,
}

impl std::str::FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "curated" => Ok(SelectionMode::Curated),
            "all" => Ok(SelectionMode::All),
            other => Err(Error::Argument(format!("unknown selection mode {other:?}"))),
        }
    }
}

/// Training/evaluation manifest from generated samples that passed the
/// mask-area check. Curated mode keeps only samples whose latest verdict is
/// `accepted`.
pub fn build_training_manifest(
    generated: &DatasetManifest,
    curation: &[CurationRecord],
    mode: SelectionMode,
) -> Result<DatasetManifest> {
    let known: BTreeMap<&str, &ManifestEntry> =
        generated.entries.iter().map(|e| (e.sample_id.as_str(), e)).collect();
    if let Some(r) = curation.iter().find(|r| !known.contains_key(r.sample_id.as_str())) {
        return Err(Error::Consistency(format!("curation references unknown sample {:?}", r.sample_id)));
    }
    let entries = match mode {
        SelectionMode::All => generated.entries.clone(),
        SelectionMode::Curated => {
            let accepted: std::collections::BTreeSet<String> = compact_verdicts(curation)
                .into_iter()
                .filter(|r| r.verdict == Verdict::Accepted)
                .map(|r| r.sample_id)
                .collect();
            generated
                .entries
                .iter()
                .filter(|e| accepted.contains(&e.sample_id))
                .cloned()
                .collect()
        }
    };
    Ok(DatasetManifest {
        entries,
        num_classes: generated.num_classes,
        ignore_id: generated.ignore_id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn vocabulary_is_disjoint_from_cityscapes() {
        assert_eq!(OBJECT_VOCABULARY.len(), 42);
        let unique: std::collections::BTreeSet<_> = OBJECT_VOCABULARY.iter().collect();
        assert_eq!(unique.len(), 42);
        assert_eq!(OBJECT_VOCABULARY[0], "arcade machine");
        assert_eq!(OBJECT_VOCABULARY[41], "zebra");
        for c in CITYSCAPES_CLASSES {
            assert!(!OBJECT_VOCABULARY.contains(&c), "{c}");
        }
    }

    #[test]
    fn prompt_template() {
        assert_eq!(
            shift_prompt("a city street with cars", "night").unwrap(),
            "a city street with cars, in night"
        );
        assert_eq!(shift_prompt("x", "fog").unwrap(), "x, in fog");
        assert!(shift_prompt("", "fog").is_err());
        assert!(shift_prompt("x", " ").is_err());
        for d in ALL_DOMAINS {
            assert!(shift_prompt("a road", d).is_ok());
        }
        assert_eq!(inpaint_prompt("zebra"), "A photo of an zebra");
    }

    #[test]
    fn presets_validate() {
        GenerationParams::sd15().validate().unwrap();
        GenerationParams::sdxl().validate().unwrap();
        let mut p = GenerationParams::sd15();
        p.output_size = 768;
        assert!(p.validate().is_err());
        p = GenerationParams::sd15();
        p.control_strength = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn cityscapes_crop_geometry() {
        let labels = LabelMap::filled(2048, 1024, 7, 255);
        let caps: BTreeMap<String, String> = [("a".to_string(), "a street".to_string())].into();
        let reqs = plan_shift_generation(&[("a".into(), labels)], &caps, "night", &GenerationParams::sd15(), 7).unwrap();
        let r = &reqs[0];
        assert_eq!((r.crop.width, r.crop.height, r.crop.y), (1024, 1024, 0));
        assert!(r.crop.x <= 1024);
        assert_eq!((r.control_mask.width(), r.control_mask.height()), (512, 512));
        assert_eq!(r.prompt, "a street, in night");
        let again = plan_shift_generation(
            &[("a".into(), LabelMap::filled(2048, 1024, 7, 255))],
            &caps,
            "night",
            &GenerationParams::sd15(),
            7,
        )
        .unwrap();
        assert_eq!(again[0].crop, r.crop);
    }

    #[test]
    fn square_and_portrait_inputs() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(0);
        assert_eq!(
            square_crop(&mut rng, 300, 300).unwrap(),
            CropRect { x: 0, y: 0, width: 300, height: 300 }
        );
        assert!(matches!(square_crop(&mut rng, 200, 300), Err(Error::Geometry(_))));
    }

    #[test]
    fn cityscapes_box_bounds() {
        for seed in 0..500 {
            let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
            let b = sample_inpaint_box(&mut rng, 2048, 1024).unwrap();
            assert!((256..=512).contains(&b.size));
            assert!(b.y >= 256 && b.y <= 1024 - b.size);
            assert!(b.x + b.size <= 2048);
        }
    }

    #[test]
    fn tiny_image_is_geometry_error() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(0);
        assert!(matches!(sample_inpaint_box(&mut rng, 7, 100), Err(Error::Geometry(_))));
    }

    #[test]
    fn plans_are_deterministic_and_valid() {
        let a = plan_inpaint("s1", "src", 2048, 1024, 42).unwrap();
        let b = plan_inpaint("s1", "src", 2048, 1024, 42).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        let json = serde_json::to_string(&a).unwrap();
        let back: InpaintPlan = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
        assert!(json.contains("\"box\""));
    }

    fn generated(ids: &[&str]) -> DatasetManifest {
        DatasetManifest {
            entries: ids
                .iter()
                .map(|id| ManifestEntry {
                    sample_id: id.to_string(),
                    image_path: format!("{id}.png").into(),
                    label_path: format!("{id}_gt.png").into(),
                    logits_path: None,
                    ood_mask_path: None,
                    domain_tag: "inpaint".into(),
                    model_id: None,
                })
                .collect(),
            num_classes: 19,
            ignore_id: 255,
        }
    }

    fn record(id: &str, verdict: Verdict, ts: i64) -> CurationRecord {
        CurationRecord {
            sample_id: id.into(),
            verdict,
            reason_tag: String::new(),
            timestamp: ts,
        }
    }

    #[test]
    fn training_manifest_modes() {
        let g = generated(&["a", "b", "c"]);
        assert!(build_training_manifest(&g, &[], SelectionMode::Curated).unwrap().entries.is_empty());
        let cur = vec![
            record("a", Verdict::Accepted, 1),
            record("b", Verdict::Rejected, 2),
            record("c", Verdict::Accepted, 3),
        ];
        let m = build_training_manifest(&g, &cur, SelectionMode::Curated).unwrap();
        let ids: Vec<&str> = m.entries.iter().map(|e| e.sample_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "c"]);
        assert_eq!(build_training_manifest(&g, &cur, SelectionMode::All).unwrap().entries.len(), 3);
        let unknown = vec![record("zz", Verdict::Accepted, 1)];
        assert!(matches!(
            build_training_manifest(&g, &unknown, SelectionMode::All),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn latest_verdict_wins() {
        let log = vec![
            record("a", Verdict::Accepted, 1),
            record("b", Verdict::Accepted, 2),
            record("a", Verdict::Rejected, 3),
        ];
        let c = compact_verdicts(&log);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].verdict, Verdict::Rejected);
    }

    proptest! {
        #[test]
        fn boxes_always_feasible(w in 8usize..3000, h in 8usize..3000, seed in any::<u64>()) {
            let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
            let b = sample_inpaint_box(&mut rng, w, h).unwrap();
            prop_assert!(b.validate().is_ok());
            let ctx = ContextBox::around(&b).unwrap();
            prop_assert!(ctx.contains(&b));
            prop_assert!(ctx.x + ctx.size <= w && ctx.y + ctx.size <= h);
        }
    }
}
