use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use segrel_core::calibration::{apply_temperature, TemperatureParams};
use segrel_core::data::{read_label_png, BinaryMask, CurationRecord, ManifestEntry, ScoreMap, Verdict};
use segrel_core::genplan::compact_verdicts;
use segrel_core::ood_metrics::{
    entropy_score, evaluate_scores, extract_pixels, maxlogit_score, mean_of_results, region_mean_score,
    HistogramEvaluator, OodEvalResult, EXACT_PIXEL_LIMIT, HISTOGRAM_BUCKETS,
};

use crate::io;
use crate::Outcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreFn {
    Entropy,
    Maxlogit,
}

/// How pixels of several images become one metric set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// One curve over all pixels of all images
    Pooled,
    /// Metrics per image, then averaged over images holding both pixel kinds
    PerImage,
}

#[derive(Args, Debug)]
pub struct OodArgs {
    /// Manifest with logits_path and ood_mask_path per entry
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value = "entropy")]
    pub score: ScoreFn,
    #[arg(long, value_enum, default_value = "pooled")]
    pub aggregation: Aggregation,
    /// Keep only samples whose latest verdict is `accepted`
    #[arg(long, requires = "curation")]
    pub curated_only: bool,
    /// Curation manifest written by `curate export`
    #[arg(long)]
    pub curation: Option<PathBuf>,
    /// JSON array with one record per model
    #[arg(long)]
    pub out: PathBuf,
    /// Per-image mean scores inside and outside the OOD region (CSV)
    #[arg(long)]
    pub per_image: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct OodReport {
    model_id: String,
    score_fn: ScoreFn,
    aggregation: Aggregation,
    curated_only: bool,
    fpr95: f64,
    auroc: f64,
    aupr_in: f64,
    aupr_out: f64,
    n_samples: usize,
    n_in: u64,
    n_out: u64,
}

#[derive(Debug, Serialize)]
struct PerImageRow {
    model_id: String,
    sample_id: String,
    mean_score_ood: Option<f64>,
    mean_score_in: Option<f64>,
}

/// Reads an OOD mask PNG: 0 in-distribution, 1 OOD, 255 void.
/// Returns `(ood, evaluated)`.
pub fn read_ood_mask(path: &std::path::Path) -> Result<(BinaryMask, BinaryMask)> {
    let raw = read_label_png(path, 255)?;
    if let Some(v) = raw.data().iter().find(|&&v| v > 1 && v != 255) {
        return Err(io::input_error(format!("{}: unexpected OOD mask value {v}", path.display())));
    }
    let (w, h) = (raw.width(), raw.height());
    let ood = BinaryMask::new(w, h, raw.data().iter().map(|&v| v == 1).collect())?;
    let eval = BinaryMask::new(w, h, raw.data().iter().map(|&v| v != 255).collect())?;
    Ok((ood, eval))
}

fn score_map(entry: &ManifestEntry, score: ScoreFn) -> Result<ScoreMap> {
    let lp = entry
        .logits_path
        .as_ref()
        .ok_or_else(|| io::input_error(format!("sample {} has no logits_path", entry.sample_id)))?;
    let logits = io::load_logits(lp)?;
    Ok(match score {
        ScoreFn::Entropy => entropy_score(&apply_temperature(&logits, &TemperatureParams::identity())?),
        ScoreFn::Maxlogit => maxlogit_score(&logits),
    })
}

struct ImageScores {
    scores: Vec<f32>,
    labels: Vec<bool>,
    row: PerImageRow,
}

fn score_image(model_id: &str, entry: &ManifestEntry, score: ScoreFn) -> Result<ImageScores> {
    let mp = entry
        .ood_mask_path
        .as_ref()
        .ok_or_else(|| io::input_error(format!("sample {} has no ood_mask_path", entry.sample_id)))?;
    let (ood, eval) = read_ood_mask(mp)?;
    let map = score_map(entry, score)?;
    let (scores, labels) = extract_pixels(&map, &ood, &eval).with_context(|| format!("sample {}", entry.sample_id))?;
    let inside = ood.and(&eval)?;
    let outside = ood.not().and(&eval)?;
    let mean = |m: &BinaryMask| if m.count() > 0 { region_mean_score(&map, m).ok() } else { None };
    Ok(ImageScores {
        row: PerImageRow {
            model_id: model_id.to_string(),
            sample_id: entry.sample_id.clone(),
            mean_score_ood: mean(&inside),
            mean_score_in: mean(&outside),
        },
        scores,
        labels,
    })
}

fn accepted_ids(path: &std::path::Path) -> Result<BTreeSet<String>> {
    let log: Vec<CurationRecord> = io::read_json(path)?;
    Ok(compact_verdicts(&log)
        .into_iter()
        .filter(|r| r.verdict == Verdict::Accepted)
        .map(|r| r.sample_id)
        .collect())
}

/// Dataset-level metrics; above the exact-path limit scores are bucketed.
fn pooled(images: &[ImageScores]) -> Result<OodEvalResult> {
    let total: u64 = images.iter().map(|i| i.scores.len() as u64).sum();
    if total > EXACT_PIXEL_LIMIT {
        // quantile edges from a strided sample of all scores
        let stride = (total / (64 * HISTOGRAM_BUCKETS as u64)).max(1) as usize;
        let sample: Vec<f32> = images.iter().flat_map(|i| i.scores.iter().step_by(stride).copied()).collect();
        let mut hist = HistogramEvaluator::from_sample(&sample, HISTOGRAM_BUCKETS)?;
        for i in images {
            hist.add(&i.scores, &i.labels);
        }
        Ok(hist.finish()?)
    } else {
        let scores: Vec<f32> = images.iter().flat_map(|i| i.scores.iter().copied()).collect();
        let labels: Vec<bool> = images.iter().flat_map(|i| i.labels.iter().copied()).collect();
        Ok(evaluate_scores(&scores, &labels)?)
    }
}

pub fn run(args: &OodArgs) -> Result<Outcome> {
    let manifest = io::load_manifest(&args.manifest)?;
    let fallback = io::manifest_model_id(&manifest, &args.manifest).unwrap_or_else(|_| "model".into());
    let accepted = match (&args.curation, args.curated_only) {
        (Some(p), true) => Some(accepted_ids(p)?),
        _ => None,
    };

    let mut by_model: BTreeMap<String, Vec<&ManifestEntry>> = BTreeMap::new();
    for e in manifest.sorted_entries() {
        if accepted.as_ref().is_some_and(|a| !a.contains(&e.sample_id)) {
            continue;
        }
        let model = e.model_id.clone().unwrap_or_else(|| fallback.clone());
        by_model.entry(model).or_default().push(e);
    }
    if by_model.is_empty() {
        return Err(io::input_error("no samples left to evaluate"));
    }

    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for (model_id, entries) in &by_model {
        let images = entries
            .par_iter()
            .map(|e| score_image(model_id, e, args.score))
            .collect::<Result<Vec<_>>>()?;
        let result = match args.aggregation {
            Aggregation::Pooled => pooled(&images).with_context(|| format!("model {model_id}"))?,
            Aggregation::PerImage => {
                let per: Vec<OodEvalResult> = images
                    .iter()
                    .filter(|i| i.labels.iter().any(|&l| l) && i.labels.iter().any(|&l| !l))
                    .map(|i| evaluate_scores(&i.scores, &i.labels))
                    .collect::<std::result::Result<_, _>>()?;
                mean_of_results(&per).with_context(|| format!("model {model_id}"))?
            }
        };
        reports.push(OodReport {
            model_id: model_id.clone(),
            score_fn: args.score,
            aggregation: args.aggregation,
            curated_only: accepted.is_some(),
            fpr95: result.fpr95,
            auroc: result.auroc,
            aupr_in: result.aupr_in,
            aupr_out: result.aupr_out,
            n_samples: images.len(),
            n_in: result.n_in,
            n_out: result.n_out,
        });
        rows.extend(images.into_iter().map(|i| i.row));
    }
    io::write_json(&args.out, &reports)?;
    if let Some(path) = &args.per_image {
        let mut w = io::csv_writer(path)?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    Ok(Outcome::Complete)
}
