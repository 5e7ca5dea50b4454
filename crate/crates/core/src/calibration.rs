//! Temperature scaling (scalar and per-class) and expected calibration error.
//!
//! ECE uses equal-width confidence bins over [0, 1] and pools pixels across
//! images. Temperatures are fitted by golden-section search on `ln T` over
//! `[ln 0.05, ln 20]`, minimizing the mean negative log-likelihood of the
//! true class.

use serde::{Deserialize, Serialize};

use crate::data::{argmax, LabelMap, LogitStack, ProbStack};
use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 15;
pub const MAX_FIT_PIXELS: usize = 1 << 20;

const LN_T_MIN: f64 = -2.995_732_273_553_991; // ln 0.05
const LN_T_MAX: f64 = 2.995_732_273_553_991; // ln 20
const LN_T_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemperatureMode {
    Scalar,
    PerClass,
}

impl std::str::FromStr for TemperatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scalar" => Ok(Self::Scalar),
            "per_class" | "per-class" => Ok(Self::PerClass),
            other => Err(Error::Argument(format!("unknown temperature mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureParams {
    pub mode: TemperatureMode,
    pub values: Vec<f64>,
}

impl TemperatureParams {
    pub fn scalar(t: f64) -> Result<Self> {
        let p = Self {
            mode: TemperatureMode::Scalar,
            values: vec![t],
        };
        p.validate(None)?;
        Ok(p)
    }

    pub fn per_class(values: Vec<f64>) -> Result<Self> {
        let p = Self {
            mode: TemperatureMode::PerClass,
            values,
        };
        p.validate(None)?;
        Ok(p)
    }

    pub fn identity() -> Self {
        Self {
            mode: TemperatureMode::Scalar,
            values: vec![1.0],
        }
    }

    pub fn validate(&self, num_classes: Option<usize>) -> Result<()> {
        if let Some(v) = self.values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Argument(format!("temperature {v} is not positive and finite")));
        }
        match self.mode {
            TemperatureMode::Scalar if self.values.len() != 1 => Err(Error::Argument(format!(
                "scalar mode needs one temperature, got {}",
                self.values.len()
            ))),
            TemperatureMode::PerClass if self.values.is_empty() => {
                Err(Error::Argument("per-class mode needs temperatures".into()))
            }
            TemperatureMode::PerClass if num_classes.is_some_and(|c| c != self.values.len()) => {
                Err(Error::Argument(format!(
                    "{} per-class temperatures for {} classes",
                    self.values.len(),
                    num_classes.unwrap_or_default()
                )))
            }
            _ => Ok(()),
        }
    }

    /// Temperature used for a pixel whose raw-logit argmax is `class`.
    pub fn for_class(&self, class: usize) -> f64 {
        match self.mode {
            TemperatureMode::Scalar => self.values[0],
            TemperatureMode::PerClass => self.values[class],
        }
    }
}

/// Softmax of `logits / t` into `out`, in f64.
fn tempered_softmax(logits: &[f32], t: f64, out: &mut [f64]) {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = ((f64::from(l) - f64::from(max)) / t).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Calibrated probabilities. In per-class mode each pixel uses the
/// temperature of its raw-logit argmax class.
pub fn apply_temperature(logits: &LogitStack, t: &TemperatureParams) -> Result<ProbStack> {
    let c = logits.num_classes();
    t.validate(Some(c))?;
    let mut data = Vec::with_capacity(logits.data().len());
    let mut buf = vec![0.0f64; c];
    for pixel in logits.pixels() {
        let winner = argmax(pixel);
        tempered_softmax(pixel, t.for_class(winner), &mut buf);
        let start = data.len();
        data.extend(buf.iter().map(|&p| p as f32));
        // f32 rounding can merge near-equal probabilities; keep the logit
        // winner strictly ahead of any lower-index class it tied with.
        let probs = &mut data[start..];
        if probs[..winner].iter().any(|&p| p >= probs[winner]) {
            let top = probs[..winner].iter().copied().fold(probs[winner], f32::max);
            probs[winner] = f32::from_bits(top.to_bits() + 1);
        }
    }
    Ok(ProbStack::new_unchecked(logits.width(), logits.height(), c, data))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EceBin {
    pub confidence_mean: f64,
    pub accuracy: f64,
    pub weight: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EceReport {
    pub ece: f64,
    pub bin_count: usize,
    pub per_bin: Vec<EceBin>,
}

/// Mergeable per-bin sums. Merge in a fixed order for reproducible floats.
#[derive(Debug, Clone, PartialEq)]
pub struct EceAccumulator {
    count: Vec<u64>,
    conf_sum: Vec<f64>,
    correct: Vec<u64>,
}

impl EceAccumulator {
    pub fn new(bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Argument("ECE needs at least one bin".into()));
        }
        Ok(Self {
            count: vec![0; bins],
            conf_sum: vec![0.0; bins],
            correct: vec![0; bins],
        })
    }

    pub fn bins(&self) -> usize {
        self.count.len()
    }

    /// Records one pixel.
    pub fn push(&mut self, confidence: f64, correct: bool) {
        let bins = self.bins();
        let b = ((confidence * bins as f64) as usize).min(bins - 1);
        self.count[b] += 1;
        self.conf_sum[b] += confidence;
        self.correct[b] += u64::from(correct);
    }

    pub fn add(&mut self, probs: &ProbStack, gt: &LabelMap) -> Result<()> {
        if probs.width() != gt.width() || probs.height() != gt.height() {
            return Err(Error::Argument(format!(
                "probabilities are {}x{}, labels are {}x{}",
                probs.width(),
                probs.height(),
                gt.width(),
                gt.height()
            )));
        }
        let ignore = gt.ignore_id();
        for (i, (p, &g)) in probs.pixels().zip(gt.data()).enumerate() {
            if g == ignore {
                continue;
            }
            if usize::from(g) >= probs.num_classes() {
                return Err(Error::Data(format!("label {g} at pixel {i} out of range")));
            }
            let k = argmax(p);
            self.push(f64::from(p[k]), k == usize::from(g));
        }
        Ok(())
    }

    pub fn merge_in(&mut self, other: &EceAccumulator) -> Result<()> {
        if self.bins() != other.bins() {
            return Err(Error::Argument("cannot merge ECE accumulators with different bin counts".into()));
        }
        for b in 0..self.bins() {
            self.count[b] += other.count[b];
            self.conf_sum[b] += other.conf_sum[b];
            self.correct[b] += other.correct[b];
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<EceReport> {
        let n: u64 = self.count.iter().sum();
        if n == 0 {
            return Err(Error::EmptyInput("no non-ignored pixels for ECE".into()));
        }
        let mut ece = 0.0;
        let per_bin = (0..self.bins())
            .map(|b| {
                let count = self.count[b];
                if count == 0 {
                    return EceBin {
                        confidence_mean: 0.0,
                        accuracy: 0.0,
                        weight: 0.0,
                        count,
                    };
                }
                let conf = self.conf_sum[b] / count as f64;
                let acc = self.correct[b] as f64 / count as f64;
                let weight = count as f64 / n as f64;
                ece += weight * (acc - conf).abs();
                EceBin {
                    confidence_mean: conf,
                    accuracy: acc,
                    weight,
                    count,
                }
            })
            .collect();
        Ok(EceReport {
            ece: ece.clamp(0.0, 1.0),
            bin_count: self.bins(),
            per_bin,
        })
    }
}

pub fn ece(probs: &ProbStack, gt: &LabelMap, bins: usize) -> Result<EceReport> {
    let mut acc = EceAccumulator::new(bins)?;
    acc.add(probs, gt)?;
    acc.finish()
}

/// `100 * (before - after) / before`; negative when calibration hurt.
pub fn relative_ece_improvement(before: f64, after: f64) -> Result<f64> {
    if before == 0.0 {
        return Err(Error::DivisionDomain("ECE before calibration is zero".into()));
    }
    Ok(100.0 * (before - after) / before)
}

/// Pixels gathered for a temperature fit: logits, true class and raw argmax.
#[derive(Debug, Clone, Default)]
pub struct FitSample {
    num_classes: usize,
    logits: Vec<f32>,
    labels: Vec<u8>,
    winners: Vec<u8>,
}

impl FitSample {
    /// Collects non-ignored pixels from `set` (already in reduction order),
    /// keeping every `stride`-th one so that at most `max_pixels` remain.
    pub fn collect(set: &[(LogitStack, LabelMap)], max_pixels: usize) -> Result<Self> {
        let Some((first, _)) = set.first() else {
            return Err(Error::EmptyInput("calibration set is empty".into()));
        };
        let c = first.num_classes();
        let mut total = 0usize;
        for (logits, gt) in set {
            if logits.num_classes() != c {
                return Err(Error::Argument("calibration set mixes class counts".into()));
            }
            if logits.width() != gt.width() || logits.height() != gt.height() {
                return Err(Error::Argument("logit and label sizes differ".into()));
            }
            total += gt.data().iter().filter(|&&g| g != gt.ignore_id()).count();
        }
        if total == 0 {
            return Err(Error::EmptyInput("calibration set has no non-ignored pixels".into()));
        }
        let stride = total.div_ceil(max_pixels.max(1));
        let mut sample = FitSample {
            num_classes: c,
            ..Default::default()
        };
        let mut k = 0usize;
        for (logits, gt) in set {
            for (i, &g) in gt.data().iter().enumerate() {
                if g == gt.ignore_id() {
                    continue;
                }
                if usize::from(g) >= c {
                    return Err(Error::Data(format!("label {g} out of range for {c} classes")));
                }
                if k.is_multiple_of(stride) {
                    let px = logits.pixel(i);
                    sample.logits.extend_from_slice(px);
                    sample.labels.push(g);
                    sample.winners.push(argmax(px) as u8);
                }
                k += 1;
            }
        }
        Ok(sample)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Sum of `-ln softmax(l / t)[y]` over the pixels selected by `filter`,
    /// and their count.
    pub fn nll_sum(&self, t: f64, filter: impl Fn(usize) -> bool) -> (f64, usize) {
        let c = self.num_classes;
        let mut sum = 0.0;
        let mut n = 0;
        for (i, px) in self.logits.chunks_exact(c).enumerate() {
            if !filter(i) {
                continue;
            }
            let max = px.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let max = f64::from(max);
            let lse: f64 = px.iter().map(|&l| ((f64::from(l) - max) / t).exp()).sum::<f64>().ln();
            let y = f64::from(px[usize::from(self.labels[i])]);
            sum += lse - (y - max) / t;
            n += 1;
        }
        (sum, n)
    }

    /// Mean NLL over all pixels.
    pub fn nll(&self, t: f64) -> f64 {
        let (s, n) = self.nll_sum(t, |_| true);
        s / n as f64
    }

    fn nll_for_class(&self, t: f64, class: u8) -> f64 {
        let (s, n) = self.nll_sum(t, |i| self.winners[i] == class);
        s / n as f64
    }
}

/// Minimizes `f` over `[lo, hi]` by golden-section search.
pub fn golden_section(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

/// Best temperature for `nll`, never worse than T = 1.
pub fn fit_scalar_objective(nll: impl Fn(f64) -> f64) -> f64 {
    let ln_t = golden_section(|u| nll(u.exp()), LN_T_MIN, LN_T_MAX, LN_T_TOL);
    let t = ln_t.exp();
    if nll(t) <= nll(1.0) {
        t
    } else {
        1.0
    }
}

pub fn fit_temperature_sample(sample: &FitSample, mode: TemperatureMode) -> Result<TemperatureParams> {
    if sample.is_empty() {
        return Err(Error::EmptyInput("no pixels to fit".into()));
    }
    match mode {
        TemperatureMode::Scalar => TemperatureParams::scalar(fit_scalar_objective(|t| sample.nll(t))),
        TemperatureMode::PerClass => {
            let values = (0..sample.num_classes)
                .map(|c| {
                    if sample.winners.iter().any(|&w| usize::from(w) == c) {
                        fit_scalar_objective(|t| sample.nll_for_class(t, c as u8))
                    } else {
                        1.0
                    }
                })
                .collect();
            TemperatureParams::per_class(values)
        }
    }
}

/// Fits temperatures on `(logits, labels)` pairs given in reduction order.
pub fn fit_temperature(set: &[(LogitStack, LabelMap)], mode: TemperatureMode) -> Result<TemperatureParams> {
    fit_temperature_sample(&FitSample::collect(set, MAX_FIT_PIXELS)?, mode)
}
