use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use segrel_core::data::{
    encode_label_png, png_dimensions, read_label_png, read_rgb_png, write_label_png, write_mask_png, write_rgb_png,
    DatasetManifest, LabelMap, ManifestEntry,
};
use segrel_core::genplan::{
    b64_encode, image_from_b64, image_to_b64, plan_inpaint as make_plan, plan_shift_generation, run_inpaint as execute_plan,
    CaptionRequest, CropRect, GenerateRequest, GenerationParams, GenerativeService, InpaintPlan, Preset,
};

use crate::io;
use crate::{Outcome, ServiceArgs};

/// Sample IDs become file names, so path separators are refused.
fn file_stem_for(id: &str) -> Result<&str> {
    if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
        return Err(io::input_error(format!("sample_id {id:?} cannot be used as a file name")));
    }
    Ok(id)
}

#[derive(Debug, Serialize, Deserialize)]
struct Rejection {
    sample_id: String,
    kind: String,
    reason: String,
}

fn write_rejections(path: &Path, mut rejections: Vec<Rejection>) -> Result<()> {
    rejections.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    io::ensure_parent(path)?;
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    for r in &rejections {
        writeln!(f, "{}", serde_json::to_string(r)?)?;
    }
    Ok(())
}

fn classify(err: &anyhow::Error) -> &'static str {
    match err.chain().find_map(|e| e.downcast_ref::<segrel_core::Error>()) {
        Some(segrel_core::Error::Rejected(_)) => "mask_area",
        Some(segrel_core::Error::Transport(_)) => "transport",
        _ => "error",
    }
}

#[derive(Args, Debug)]
pub struct PlanShiftArgs {
    /// Source manifest; label maps are the control masks
    #[arg(long)]
    pub manifest: PathBuf,
    /// Domain appended to every caption, e.g. `night`
    #[arg(long)]
    pub domain: String,
    #[arg(long, default_value = "sd15")]
    pub preset: Preset,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON map sample_id -> caption; captions come from the service otherwise
    #[arg(long)]
    pub captions: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Also call the service to generate the images
    #[arg(long)]
    pub execute: bool,
    #[arg(long, default_value_t = 4)]
    pub concurrency: usize,
    #[command(flatten)]
    pub service: ServiceArgs,
}

#[derive(Debug, Serialize)]
struct ShiftPlanRecord {
    sample_id: String,
    crop: CropRect,
    prompt: String,
    params: GenerationParams,
    control_mask_path: String,
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build()?)
}

pub fn plan_shift(args: &PlanShiftArgs) -> Result<Outcome> {
    let manifest = io::load_manifest(&args.manifest)?;
    let entries = manifest.sorted_entries();
    for e in &entries {
        file_stem_for(&e.sample_id)?;
    }
    let samples = entries
        .par_iter()
        .map(|e| Ok((e.sample_id.clone(), read_label_png(&e.label_path, manifest.ignore_id)?)))
        .collect::<Result<Vec<(String, LabelMap)>>>()?;
    let service = args.service.connect();
    let workers = pool(args.concurrency)?;

    let captions: BTreeMap<String, String> = match &args.captions {
        Some(p) => io::read_json(p)?,
        None => workers.install(|| {
            entries
                .par_iter()
                .map(|e| {
                    let image = read_rgb_png(&e.image_path)?;
                    let c = service.caption(&CaptionRequest { image_b64: image_to_b64(&image)? })?;
                    Ok((e.sample_id.clone(), c.caption))
                })
                .collect::<Result<_>>()
        })?,
    };
    let params = GenerationParams::preset(args.preset);
    let requests = plan_shift_generation(&samples, &captions, &args.domain, &params, args.seed)?;

    let out = &args.out_dir;
    fs::create_dir_all(out.join("control")).with_context(|| format!("creating {}", out.display()))?;
    io::write_json(&out.join("captions.json"), &captions)?;
    let mut records = Vec::new();
    for r in &requests {
        let rel = format!("control/{}.png", r.sample_id);
        write_label_png(&r.control_mask, out.join(&rel))?;
        records.push(ShiftPlanRecord {
            sample_id: r.sample_id.clone(),
            crop: r.crop,
            prompt: r.prompt.clone(),
            params: r.params,
            control_mask_path: rel,
        });
    }
    io::write_json(&out.join("shift_plan.json"), &records)?;
    if !args.execute {
        return Ok(Outcome::Complete);
    }

    fs::create_dir_all(out.join("images"))?;
    let results: Vec<(String, Result<()>)> = workers.install(|| {
        requests
            .par_iter()
            .map(|r| {
                let res = (|| -> Result<()> {
                    let resp = service.generate(&GenerateRequest {
                        control_mask_b64: b64_encode(&encode_label_png(&r.control_mask)?),
                        prompt: r.prompt.clone(),
                        steps: r.params.steps,
                        guidance_scale: r.params.guidance_scale,
                        control_strength: r.params.control_strength,
                        seed: args.seed,
                    })?;
                    let image = image_from_b64(&resp.image_b64)?;
                    write_rgb_png(&image, out.join(format!("images/{}.png", r.sample_id)))?;
                    Ok(())
                })();
                (r.sample_id.clone(), res)
            })
            .collect()
    });
    let mut entries_out = Vec::new();
    let mut rejections = Vec::new();
    for (id, res) in results {
        match res {
            Ok(()) => entries_out.push(ManifestEntry {
                sample_id: id.clone(),
                image_path: format!("images/{id}.png").into(),
                label_path: format!("control/{id}.png").into(),
                logits_path: None,
                ood_mask_path: None,
                domain_tag: format!("syn:{}", args.domain),
                model_id: None,
            }),
            Err(e) => rejections.push(Rejection { sample_id: id, kind: classify(&e).into(), reason: format!("{e:#}") }),
        }
    }
    let partial = !rejections.is_empty();
    write_rejections(&out.join("rejections.jsonl"), rejections)?;
    DatasetManifest { entries: entries_out, num_classes: manifest.num_classes, ignore_id: manifest.ignore_id }
        .save(out.join("manifest.json"))?;
    Ok(if partial { Outcome::Partial } else { Outcome::Complete })
}

#[derive(Args, Debug)]
pub struct PlanInpaintArgs {
    /// Source manifest of real scenes
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Plans per source image
    #[arg(long, default_value_t = 1)]
    pub per_image: usize,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn plan_inpaint(args: &PlanInpaintArgs) -> Result<Outcome> {
    let manifest = io::load_manifest(&args.manifest)?;
    if args.per_image == 0 {
        return Err(io::input_error("--per-image must be at least 1"));
    }
    let mut plans = Vec::new();
    for e in manifest.sorted_entries() {
        let (w, h) = png_dimensions(&e.image_path)?;
        for k in 0..args.per_image {
            let id = if args.per_image == 1 {
                format!("{}_ood", e.sample_id)
            } else {
                format!("{}_ood{k}", e.sample_id)
            };
            file_stem_for(&id)?;
            plans.push(make_plan(&id, &e.sample_id, w, h, args.seed).with_context(|| format!("sample {}", e.sample_id))?);
        }
    }
    io::write_json(&args.out, &plans)?;
    Ok(Outcome::Complete)
}

#[derive(Args, Debug)]
pub struct RunInpaintArgs {
    /// Plans written by plan-inpaint
    #[arg(long)]
    pub plans: PathBuf,
    /// Manifest the plans were made from
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Plans executed concurrently
    #[arg(long, default_value_t = 4)]
    pub concurrency: usize,
    #[command(flatten)]
    pub service: ServiceArgs,
}

fn execute_one(
    plan: &InpaintPlan,
    source: &ManifestEntry,
    manifest: &DatasetManifest,
    out: &Path,
    service: &dyn GenerativeService,
) -> Result<ManifestEntry> {
    let image = read_rgb_png(&source.image_path)?;
    let labels = read_label_png(&source.label_path, manifest.ignore_id)?;
    let outcome = execute_plan(plan, &image, service)?;
    let id = &plan.sample_id;
    // object pixels carry no in-distribution class
    let relabeled = LabelMap::new(
        labels.width(),
        labels.height(),
        labels
            .data()
            .iter()
            .zip(outcome.ood_mask.data())
            .map(|(&l, &o)| if o { manifest.ignore_id } else { l })
            .collect(),
        manifest.ignore_id,
    )?;
    let ood = LabelMap::new(
        labels.width(),
        labels.height(),
        outcome.ood_mask.data().iter().map(|&o| u8::from(o)).collect(),
        255,
    )?;
    write_rgb_png(&outcome.image, out.join(format!("images/{id}.png")))?;
    write_mask_png(&outcome.ood_mask, out.join(format!("masks/{id}.png")))?;
    write_label_png(&ood, out.join(format!("ood/{id}.png")))?;
    write_label_png(&relabeled, out.join(format!("labels/{id}.png")))?;
    Ok(ManifestEntry {
        sample_id: id.clone(),
        image_path: format!("images/{id}.png").into(),
        label_path: format!("labels/{id}.png").into(),
        logits_path: None,
        ood_mask_path: Some(format!("ood/{id}.png").into()),
        domain_tag: "inpaint".into(),
        model_id: None,
    })
}

pub fn run_inpaint(args: &RunInpaintArgs) -> Result<Outcome> {
    let plans: Vec<InpaintPlan> = io::read_json(&args.plans)?;
    if plans.is_empty() {
        return Err(io::input_error(format!("{} contains no plans", args.plans.display())));
    }
    let manifest = io::load_manifest(&args.manifest)?;
    let sources: BTreeMap<&str, &ManifestEntry> =
        manifest.entries.iter().map(|e| (e.sample_id.as_str(), e)).collect();
    let mut seen = std::collections::BTreeSet::new();
    for p in &plans {
        file_stem_for(&p.sample_id)?;
        if !seen.insert(p.sample_id.as_str()) {
            return Err(io::input_error(format!("duplicate plan {:?}", p.sample_id)));
        }
        if !sources.contains_key(p.source_sample_id.as_str()) {
            return Err(io::input_error(format!(
                "plan {} refers to unknown source {:?}",
                p.sample_id, p.source_sample_id
            )));
        }
        p.validate().with_context(|| format!("plan {}", p.sample_id))?;
    }

    let out = &args.out_dir;
    for d in ["images", "masks", "ood", "labels"] {
        fs::create_dir_all(out.join(d)).with_context(|| format!("creating {}", out.join(d).display()))?;
    }
    let service = args.service.connect();
    let results: Vec<(String, Result<ManifestEntry>)> = pool(args.concurrency)?.install(|| {
        plans
            .par_iter()
            .map(|p| {
                let src = sources[p.source_sample_id.as_str()];
                let r = execute_one(p, src, &manifest, out, service.as_ref());
                (p.sample_id.clone(), r)
            })
            .collect()
    });

    let mut entries = Vec::new();
    let mut rejections = Vec::new();
    let mut degraded = false;
    for (id, r) in results {
        match r {
            Ok(e) => entries.push(e),
            Err(e) => {
                let kind = classify(&e);
                degraded |= kind != "mask_area";
                rejections.push(Rejection { sample_id: id, kind: kind.into(), reason: format!("{e:#}") });
            }
        }
    }
    entries.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let n_ok = entries.len();
    write_rejections(&out.join("rejections.jsonl"), rejections)?;
    io::write_json(&out.join("plans.json"), &plans)?;
    DatasetManifest { entries, num_classes: manifest.num_classes, ignore_id: manifest.ignore_id }
        .save(out.join("manifest.json"))?;
    eprintln!("{n_ok} of {} plans produced samples", plans.len());
    Ok(if degraded { Outcome::Partial } else { Outcome::Complete })
}
