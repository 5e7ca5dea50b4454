use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;

use segrel_core::analytics::{
    frechet_distance, ols_fit, pearson, relative_to_reference, subsample_study, BandPoint, ModelMetricVector,
    paired_conditions,
};
use segrel_core::data::{read_tensor, EmbeddingSet};

use crate::io;
use crate::Outcome;

#[derive(Args, Debug)]
pub struct CorrelateArgs {
    /// Bench CSV report (repeatable; rows are pooled)
    #[arg(long = "bench", required = true)]
    pub benches: Vec<PathBuf>,
    #[arg(long)]
    pub x_domain: String,
    #[arg(long)]
    pub y_domain: String,
    /// `mIoU` or a class name from the bench report
    #[arg(long, default_value = io::MIOU)]
    pub metric: String,
    #[arg(long, default_value_t = 0.95)]
    pub ci: f64,
    #[arg(long, default_value_t = 50)]
    pub band_points: usize,
    /// Scatter CSV: model_id, x, y
    #[arg(long)]
    pub scatter_out: PathBuf,
    /// Fit record JSON
    #[arg(long)]
    pub fit_out: PathBuf,
    /// Model whose scores anchor the relative-change table
    #[arg(long, requires = "relative_out")]
    pub reference: Option<String>,
    /// CSV of percent change vs the reference model: model_id, x_rel_pct, y_rel_pct
    #[arg(long)]
    pub relative_out: Option<PathBuf>,
}

#[derive(Serialize)]
struct ScatterRow<'a> {
    model_id: &'a str,
    x: f64,
    y: f64,
}

#[derive(Serialize)]
struct FitRecord {
    x_domain: String,
    y_domain: String,
    metric: String,
    n: usize,
    pcc: f64,
    slope: f64,
    intercept: f64,
    ci_level: f64,
    t_crit: f64,
    se_slope: f64,
    se_intercept: f64,
    residual_se: f64,
    band: Vec<BandPoint>,
}

#[derive(Serialize)]
struct RelativeRow<'a> {
    model_id: &'a str,
    x_rel_pct: f64,
    y_rel_pct: f64,
}

fn metric_vectors(paths: &[PathBuf], metric: &str) -> Result<Vec<ModelMetricVector>> {
    let mut vectors: BTreeMap<String, ModelMetricVector> = BTreeMap::new();
    for p in paths {
        for ((model, domain), v) in io::metric_table(&io::read_bench_rows(p)?, metric) {
            vectors
                .entry(model.clone())
                .or_insert_with(|| ModelMetricVector::new(model))
                .insert(domain, v)?;
        }
    }
    Ok(vectors.into_values().collect())
}

pub fn correlate(args: &CorrelateArgs) -> Result<Outcome> {
    let vectors = metric_vectors(&args.benches, &args.metric)?;
    let pairs = paired_conditions(&vectors, &args.x_domain, &args.y_domain);
    if pairs.len() < 3 {
        return Err(io::input_error(format!(
            "{} models have both {} and {}; need at least 3",
            pairs.len(),
            args.x_domain,
            args.y_domain
        )));
    }
    let x: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let y: Vec<f64> = pairs.iter().map(|p| p.2).collect();
    let pcc = pearson(&x, &y)?;
    let fit = ols_fit(&x, &y, args.ci)?;
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut w = io::csv_writer(&args.scatter_out)?;
    for (m, xv, yv) in &pairs {
        w.serialize(ScatterRow { model_id: m, x: *xv, y: *yv })?;
    }
    w.flush()?;

    io::write_json(
        &args.fit_out,
        &FitRecord {
            x_domain: args.x_domain.clone(),
            y_domain: args.y_domain.clone(),
            metric: args.metric.clone(),
            n: pairs.len(),
            pcc,
            slope: fit.slope,
            intercept: fit.intercept,
            ci_level: fit.ci_level,
            t_crit: fit.t_crit,
            se_slope: fit.se_slope,
            se_intercept: fit.se_intercept,
            residual_se: fit.residual_se,
            band: fit.band(lo, hi, args.band_points),
        },
    )?;

    if let (Some(reference), Some(path)) = (&args.reference, &args.relative_out) {
        let idx = pairs
            .iter()
            .position(|p| &p.0 == reference)
            .ok_or_else(|| io::input_error(format!("reference model {reference:?} is not in the scatter")))?;
        let xr = relative_to_reference(&x, idx)?;
        let yr = relative_to_reference(&y, idx)?;
        let mut w = io::csv_writer(path)?;
        for (i, (m, _, _)) in pairs.iter().enumerate() {
            w.serialize(RelativeRow { model_id: m, x_rel_pct: xr[i], y_rel_pct: yr[i] })?;
        }
        w.flush()?;
    }
    Ok(Outcome::Complete)
}

#[derive(Args, Debug)]
pub struct SubsampleArgs {
    /// Ground-truth manifest of the synthetic set
    #[arg(long)]
    pub gt: PathBuf,
    /// Restrict the ground truth to one domain_tag
    #[arg(long)]
    pub domain: Option<String>,
    /// Prediction manifest of one model (repeatable)
    #[arg(long = "pred", required = true)]
    pub preds: Vec<PathBuf>,
    /// Bench CSV holding each model's reference mIoU
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub reference_domain: String,
    /// Comma-separated subset sizes
    #[arg(long, default_value = "10,25,50,100,250,500")]
    pub n_grid: String,
    #[arg(long, default_value_t = 100)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV: n, pcc_mean, pcc_std
    #[arg(long)]
    pub out: PathBuf,
}

pub fn subsample(args: &SubsampleArgs) -> Result<Outcome> {
    let mut gt = io::load_manifest(&args.gt)?;
    if let Some(d) = &args.domain {
        gt.entries.retain(|e| &e.domain_tag == d);
        if gt.entries.is_empty() {
            return Err(io::input_error(format!("no ground-truth entries with domain {d:?}")));
        }
    }
    let reference: BTreeMap<String, f64> = io::metric_table(&io::read_bench_rows(&args.reference)?, io::MIOU)
        .into_iter()
        .filter(|((_, d), _)| d == &args.reference_domain)
        .map(|((m, _), v)| (m, v))
        .collect();
    let mut per_image = BTreeMap::new();
    for p in &args.preds {
        let m = crate::bench::evaluate_model(&gt, p, None)?;
        let cms = m.images.into_iter().map(|(_, _, cm)| cm).collect::<Vec<_>>();
        if per_image.insert(m.model_id.clone(), cms).is_some() {
            return Err(io::input_error(format!("model {} given twice", m.model_id)));
        }
    }
    let n_grid = io::parse_usize_list(&args.n_grid).map_err(|e| io::input_error(format!("--n-grid {e}")))?;
    let points = subsample_study(&per_image, &reference, &n_grid, args.repeats, args.seed)?;
    let mut w = io::csv_writer(&args.out)?;
    for p in &points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(Outcome::Complete)
}

#[derive(Args, Debug)]
pub struct FidArgs {
    /// SRT1 f64 tensor [n, d] of reference embeddings
    #[arg(long)]
    pub a: PathBuf,
    /// SRT1 f64 tensor [n, d] of generated embeddings
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct FidRecord {
    fid: f64,
    n_a: usize,
    n_b: usize,
    dim: usize,
}

pub fn fid(args: &FidArgs) -> Result<Outcome> {
    let load = |p: &PathBuf| -> Result<EmbeddingSet> {
        let t = read_tensor(p)?;
        EmbeddingSet::from_tensor(t).with_context(|| format!("embeddings {}", p.display()))
    };
    let (a, b) = (load(&args.a)?, load(&args.b)?);
    let fid = frechet_distance(&a, &b)?;
    io::write_json(&args.out, &FidRecord { fid, n_a: a.n(), n_b: b.n(), dim: a.d() })?;
    Ok(Outcome::Complete)
}
