//! Cross-model analytics: correlation, regression with confidence bands,
//! relative scores, subsample stability and Fréchet distance.

mod frechet;
pub mod special;
mod subsample;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use frechet::frechet_distance;
pub use subsample::{subsample_study, SubsampleAggregate, SubsamplePoint};

/// One model's scalar metric under several conditions (e.g. `cityscapes`,
/// `syn:night`, `acdc:night`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetricVector {
    pub model_id: String,
    pub entries: BTreeMap<String, f64>,
}

impl ModelMetricVector {
    pub fn new(model_id: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, condition: impl Into<String>, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Data(format!("non-finite metric for {}", self.model_id)));
        }
        self.entries.insert(condition.into(), value);
        Ok(())
    }
}

/// Pairs `(model_id, x, y)` for models that have both conditions, sorted by
/// model ID.
pub fn paired_conditions(vectors: &[ModelMetricVector], x_cond: &str, y_cond: &str) -> Vec<(String, f64, f64)> {
    let mut out: Vec<(String, f64, f64)> = vectors
        .iter()
        .filter_map(|v| Some((v.model_id.clone(), *v.entries.get(x_cond)?, *v.entries.get(y_cond)?)))
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

fn check_pair(x: &[f64], y: &[f64], min_len: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Argument(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < min_len {
        return Err(Error::Argument(format!("need at least {min_len} points, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value".into()));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance("correlation of a constant vector".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub ci_level: f64,
    pub se_slope: f64,
    pub se_intercept: f64,
    /// Residual standard error, `sqrt(SSR / (n - 2))`.
    pub residual_se: f64,
    /// Two-sided t critical value for `ci_level` with `n - 2` degrees of freedom.
    pub t_crit: f64,
    pub n: usize,
    pub x_mean: f64,
    pub sxx: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub x: f64,
    pub y: f64,
    pub lo: f64,
    pub hi: f64,
}

impl RegressionFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }

    /// Half-width of the confidence band for the mean response at `x`.
    pub fn band_half_width(&self, x: f64) -> f64 {
        let d = x - self.x_mean;
        self.t_crit * self.residual_se * (1.0 / self.n as f64 + d * d / self.sxx).sqrt()
    }

    /// Band evaluated at `points` evenly spaced x values over `[lo, hi]`.
    pub fn band(&self, lo: f64, hi: f64, points: usize) -> Vec<BandPoint> {
        let steps = points.max(2) - 1;
        (0..=steps)
            .map(|i| {
                let x = lo + (hi - lo) * i as f64 / steps as f64;
                let y = self.predict(x);
                let h = self.band_half_width(x);
                BandPoint { x, y, lo: y - h, hi: y + h }
            })
            .collect()
    }
}

/// Ordinary least squares `y = intercept + slope * x` with standard errors.
pub fn ols_fit(x: &[f64], y: &[f64], ci_level: f64) -> Result<RegressionFit> {
    check_pair(x, y, 3)?;
    if !(ci_level > 0.0 && ci_level < 1.0) {
        return Err(Error::Argument(format!("ci_level {ci_level} outside (0, 1)")));
    }
    let n = x.len();
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("x is constant".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - (intercept + slope * a);
            r * r
        })
        .sum();
    let df = (n - 2) as f64;
    let residual_se = (ssr / df).sqrt();
    let se_slope = residual_se / sxx.sqrt();
    let se_intercept = residual_se * (1.0 / n as f64 + mx * mx / sxx).sqrt();
    let t_crit = special::student_t_quantile(0.5 + ci_level / 2.0, df);
    Ok(RegressionFit {
        slope,
        intercept,
        ci_level,
        se_slope,
        se_intercept,
        residual_se,
        t_crit,
        n,
        x_mean: mx,
        sxx,
    })
}

/// Percent change of every value relative to `values[ref_index]`.
pub fn relative_to_reference(values: &[f64], ref_index: usize) -> Result<Vec<f64>> {
    let r = *values
        .get(ref_index)
        .ok_or_else(|| Error::Argument(format!("reference index {ref_index} out of range")))?;
    if r == 0.0 {
        return Err(Error::DivisionDomain("reference value is zero".into()));
    }
    Ok(values.iter().map(|v| 100.0 * (v - r) / r).collect())
}
