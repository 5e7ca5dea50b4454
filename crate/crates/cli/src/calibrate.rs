use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use segrel_core::calibration::{
    apply_temperature, fit_temperature, relative_ece_improvement, EceAccumulator, TemperatureMode,
    TemperatureParams, DEFAULT_BINS,
};
use segrel_core::data::{DatasetManifest, LabelMap, LogitStack};

use crate::io;
use crate::Outcome;

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// Manifest whose logits and labels are used to fit temperatures
    #[arg(long)]
    pub fit: PathBuf,
    /// Manifest on which ECE is reported
    #[arg(long)]
    pub eval: PathBuf,
    /// scalar or per_class
    #[arg(long, default_value = "scalar")]
    pub mode: TemperatureMode,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    /// Overrides the model id taken from the manifests
    #[arg(long)]
    pub model_id: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub model_id: String,
    pub domain_tag: String,
    pub mode: TemperatureMode,
    pub temperatures: Vec<f64>,
    pub ece_before: f64,
    pub ece_after: f64,
    pub relative_improvement_pct: f64,
}

impl CalibrationReport {
    pub fn params(&self) -> segrel_core::Result<TemperatureParams> {
        match self.mode {
            TemperatureMode::Scalar => TemperatureParams::scalar(self.temperatures.first().copied().unwrap_or(f64::NAN)),
            TemperatureMode::PerClass => TemperatureParams::per_class(self.temperatures.clone()),
        }
    }
}

fn load_pairs(m: &DatasetManifest) -> Result<Vec<(LogitStack, LabelMap)>> {
    m.sorted_entries()
        .par_iter()
        .map(|e| {
            let lp = e
                .logits_path
                .as_ref()
                .ok_or_else(|| io::input_error(format!("sample {} has no logits_path", e.sample_id)))?;
            let logits = io::load_logits(lp)?;
            let labels = io::load_labels(&e.label_path, m.num_classes, m.ignore_id)?;
            Ok((logits, labels))
        })
        .collect()
}

fn ece_over(pairs: &[(LogitStack, LabelMap)], t: &TemperatureParams, bins: usize) -> Result<f64> {
    let parts = pairs
        .par_iter()
        .map(|(logits, gt)| {
            let mut acc = EceAccumulator::new(bins)?;
            acc.add(&apply_temperature(logits, t)?, gt)?;
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = EceAccumulator::new(bins)?;
    for p in &parts {
        total.merge_in(p)?;
    }
    Ok(total.finish()?.ece)
}

fn single_tag<'a>(tags: impl Iterator<Item = &'a str>) -> String {
    let set: std::collections::BTreeSet<&str> = tags.collect();
    if set.len() == 1 {
        set.into_iter().next().unwrap_or_default().to_string()
    } else {
        set.into_iter().collect::<Vec<_>>().join("+")
    }
}

pub fn run(args: &CalibrateArgs) -> Result<Outcome> {
    let fit_m = io::load_manifest(&args.fit)?;
    let eval_m = io::load_manifest(&args.eval)?;
    let model_id = match &args.model_id {
        Some(id) => id.clone(),
        None => io::manifest_model_id(&eval_m, &args.eval)?,
    };
    let fit_pairs = load_pairs(&fit_m).context("loading the fit set")?;
    let params = fit_temperature(&fit_pairs, args.mode)?;
    drop(fit_pairs);
    let eval_pairs = load_pairs(&eval_m).context("loading the eval set")?;
    let before = ece_over(&eval_pairs, &TemperatureParams::identity(), args.bins)?;
    let after = ece_over(&eval_pairs, &params, args.bins)?;
    let report = CalibrationReport {
        model_id,
        domain_tag: single_tag(eval_m.entries.iter().map(|e| e.domain_tag.as_str())),
        mode: params.mode,
        temperatures: params.values.clone(),
        ece_before: before,
        ece_after: after,
        relative_improvement_pct: relative_ece_improvement(before, after)?,
    };
    io::write_json(&args.out, &report)?;
    Ok(Outcome::Complete)
}
