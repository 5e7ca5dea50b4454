use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use rayon::prelude::*;
use serde::Serialize;

use segrel_core::calibration::{apply_temperature, TemperatureParams};
use segrel_core::data::DatasetManifest;
use segrel_core::seg_metrics::ConfusionMatrix;

use crate::io::{self, BenchRow};
use crate::Outcome;

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Ground-truth manifest; `domain_tag` groups the report
    #[arg(long)]
    pub gt: PathBuf,
    /// Prediction manifest of one model (repeatable)
    #[arg(long = "pred", required = true)]
    pub preds: Vec<PathBuf>,
    /// Output CSV: model_id, domain_tag, metric, value
    #[arg(long)]
    pub out: PathBuf,
    /// Also dump the merged confusion matrices as JSON
    #[arg(long)]
    pub confusion_out: Option<PathBuf>,
    /// Temperatures (calibrate output) applied to logits before the argmax
    #[arg(long)]
    pub temperatures: Option<PathBuf>,
}

/// Per-image confusion matrices of one model, in sample_id order.
pub struct ModelImages {
    pub model_id: String,
    pub images: Vec<(String, String, ConfusionMatrix)>,
}

pub fn evaluate_model(
    gt: &DatasetManifest,
    pred_path: &Path,
    temperatures: Option<&TemperatureParams>,
) -> Result<ModelImages> {
    let pred = io::load_manifest(pred_path)?;
    let model_id = io::manifest_model_id(&pred, pred_path)?;
    if pred.num_classes != gt.num_classes {
        return Err(io::input_error(format!(
            "{}: {} classes, ground truth has {}",
            pred_path.display(),
            pred.num_classes,
            gt.num_classes
        )));
    }
    let by_id: BTreeMap<&str, _> = pred.entries.iter().map(|e| (e.sample_id.as_str(), e)).collect();
    let gt_entries = gt.sorted_entries();
    if let Some(extra) = pred.entries.iter().find(|e| !gt.entries.iter().any(|g| g.sample_id == e.sample_id)) {
        return Err(io::input_error(format!(
            "{}: sample {:?} has no ground truth",
            pred_path.display(),
            extra.sample_id
        )));
    }
    let images = gt_entries
        .par_iter()
        .map(|g| {
            let p = by_id.get(g.sample_id.as_str()).ok_or_else(|| {
                io::input_error(format!("{}: no prediction for sample {:?}", pred_path.display(), g.sample_id))
            })?;
            let cm = (|| -> Result<ConfusionMatrix> {
                let labels = io::load_labels(&g.label_path, gt.num_classes, gt.ignore_id)?;
                let prediction = match (temperatures, &p.logits_path) {
                    (Some(t), Some(lp)) => apply_temperature(&io::load_logits(lp)?, t)?.argmax(),
                    _ => io::load_prediction(p, &pred)?,
                };
                let mut cm = ConfusionMatrix::zeros(gt.num_classes);
                cm.add(&prediction, &labels, gt.ignore_id)?;
                Ok(cm)
            })()
            .with_context(|| format!("sample {} of model {model_id}", g.sample_id))?;
            Ok((g.sample_id.clone(), g.domain_tag.clone(), cm))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelImages { model_id, images })
}

#[derive(Serialize)]
struct ConfusionRecord<'a> {
    model_id: &'a str,
    domain_tag: &'a str,
    num_classes: usize,
    counts: &'a [u64],
}

pub fn run(args: &BenchArgs) -> Result<Outcome> {
    let gt = io::load_manifest(&args.gt)?;
    let temps: Option<TemperatureParams> = match &args.temperatures {
        Some(p) => {
            let report: crate::calibrate::CalibrationReport = io::read_json(p)?;
            Some(report.params()?)
        }
        None => None,
    };
    let mut models = args
        .preds
        .iter()
        .map(|p| evaluate_model(&gt, p, temps.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    models.sort_by(|a, b| a.model_id.cmp(&b.model_id));
    if models.windows(2).any(|w| w[0].model_id == w[1].model_id) {
        return Err(io::input_error("two prediction manifests share a model_id"));
    }

    let mut rows = Vec::new();
    let mut merged_all = Vec::new();
    for m in &models {
        let mut per_domain: BTreeMap<&str, ConfusionMatrix> = BTreeMap::new();
        for (_, domain, cm) in &m.images {
            per_domain
                .entry(domain.as_str())
                .or_insert_with(|| ConfusionMatrix::zeros(gt.num_classes))
                .merge_in(cm)?;
        }
        for (domain, cm) in per_domain {
            for (c, iou) in cm.iou_per_class().into_iter().enumerate() {
                if let Some(v) = iou {
                    rows.push(BenchRow {
                        model_id: m.model_id.clone(),
                        domain_tag: domain.to_string(),
                        metric: io::class_name(c, gt.num_classes),
                        value: v,
                    });
                }
            }
            let miou = cm
                .miou()
                .with_context(|| format!("model {} domain {domain}", m.model_id))?;
            rows.push(BenchRow {
                model_id: m.model_id.clone(),
                domain_tag: domain.to_string(),
                metric: io::MIOU.into(),
                value: miou,
            });
            merged_all.push((m.model_id.clone(), domain.to_string(), cm));
        }
    }

    let mut w = io::csv_writer(&args.out)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;

    if let Some(path) = &args.confusion_out {
        let recs: Vec<ConfusionRecord> = merged_all
            .iter()
            .map(|(m, d, cm)| ConfusionRecord {
                model_id: m,
                domain_tag: d,
                num_classes: cm.num_classes(),
                counts: cm.counts(),
            })
            .collect();
        io::write_json(path, &recs)?;
    }
    Ok(Outcome::Complete)
}
