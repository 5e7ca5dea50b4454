//! Pixel-level anomaly scoring and detection metrics.
//!
//! OOD pixels are the positive class for FPR95 and AUROC, with larger scores
//! meaning "more anomalous". The ROC curve is integrated trapezoidally, so a
//! group of tied scores earns half credit. Precision-recall areas use the
//! step-wise (average precision) rule over distinct thresholds.

use serde::{Deserialize, Serialize};

use crate::data::{BinaryMask, LogitStack, Polarity, ProbStack, ScoreMap};
use crate::error::{Error, Result};

/// Above this many pixels, evaluation switches to histogram counting.
pub const EXACT_PIXEL_LIMIT: u64 = 100_000_000;
pub const HISTOGRAM_BUCKETS: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodEvalResult {
    pub fpr95: f64,
    pub auroc: f64,
    pub aupr_in: f64,
    pub aupr_out: f64,
    pub n_in: u64,
    pub n_out: u64,
}

/// Per-pixel entropy `-sum p ln p`, with `0 ln 0 = 0`.
pub fn entropy_score(probs: &ProbStack) -> ScoreMap {
    let data = probs
        .pixels()
        .map(|p| {
            -p.iter()
                .filter(|&&v| v > 0.0)
                .map(|&v| {
                    let v = f64::from(v);
                    v * v.ln()
                })
                .sum::<f64>() as f32
        })
        .map(|h| h.max(0.0))
        .collect();
    ScoreMap::new(probs.width(), probs.height(), data, Polarity::HigherIsAnomalous)
        .expect("entropy of valid probabilities is finite")
}

/// Negated maximum logit per pixel.
pub fn maxlogit_score(logits: &LogitStack) -> ScoreMap {
    let data = logits
        .pixels()
        .map(|p| -p.iter().copied().fold(f32::NEG_INFINITY, f32::max))
        .collect();
    ScoreMap::new(logits.width(), logits.height(), data, Polarity::HigherIsAnomalous)
        .expect("logits are finite")
}

/// Mean score over the set pixels of `mask`.
pub fn region_mean_score(score: &ScoreMap, mask: &BinaryMask) -> Result<f64> {
    if score.width() != mask.width() || score.height() != mask.height() {
        return Err(Error::Argument("score map and mask sizes differ".into()));
    }
    let (sum, n) = score
        .data()
        .iter()
        .zip(mask.data())
        .filter(|(_, &m)| m)
        .fold((0.0f64, 0u64), |(s, n), (&v, _)| (s + f64::from(v), n + 1));
    if n == 0 {
        return Err(Error::EmptyInput("mask selects no pixels".into()));
    }
    Ok(sum / n as f64)
}

/// Cumulative counts at one distinct threshold, walking from high to low
/// scores: `tp` positives and `fp` negatives score at or above `threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    pub tp: u64,
    pub fp: u64,
}

/// Threshold sweep shared by ROC and PR computations.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSweep {
    points: Vec<CurvePoint>,
    n_pos: u64,
    n_neg: u64,
}

impl ThresholdSweep {
    /// Builds the sweep from groups of `(threshold, positives, negatives)`
    /// ordered by strictly decreasing threshold.
    fn from_groups(groups: impl Iterator<Item = (f64, u64, u64)>) -> Self {
        let (mut tp, mut fp) = (0u64, 0u64);
        let points: Vec<CurvePoint> = groups
            .filter(|(_, p, n)| p + n > 0)
            .map(|(threshold, p, n)| {
                tp += p;
                fp += n;
                CurvePoint { threshold, tp, fp }
            })
            .collect();
        Self {
            points,
            n_pos: tp,
            n_neg: fp,
        }
    }

    /// Exact sweep over `(score, is_positive)` pairs. Sorting is stable on
    /// `(score, index)`, so ties are grouped deterministically.
    pub fn exact(scores: &[f32], positive: &[bool]) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let mut groups: Vec<(f64, u64, u64)> = Vec::new();
        for i in order {
            let s = f64::from(scores[i]);
            match groups.last_mut() {
                Some(g) if g.0 == s => {
                    if positive[i] {
                        g.1 += 1
                    } else {
                        g.2 += 1
                    }
                }
                _ => groups.push((s, u64::from(positive[i]), u64::from(!positive[i]))),
            }
        }
        Self::from_groups(groups.into_iter())
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    pub fn n_pos(&self) -> u64 {
        self.n_pos
    }

    pub fn n_neg(&self) -> u64 {
        self.n_neg
    }

    /// `(fpr, tpr)` pairs starting at the origin.
    pub fn roc(&self) -> Vec<(f64, f64)> {
        let (np, nn) = (self.n_pos as f64, self.n_neg as f64);
        std::iter::once((0.0, 0.0))
            .chain(self.points.iter().map(|p| (p.fp as f64 / nn, p.tp as f64 / np)))
            .collect()
    }

    pub fn auroc(&self) -> f64 {
        let roc = self.roc();
        roc.windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }

    /// False-positive rate at the first threshold reaching TPR >= 0.95.
    pub fn fpr_at_95_tpr(&self) -> f64 {
        self.points
            .iter()
            .find(|p| p.tp * 100 >= 95 * self.n_pos)
            .map(|p| p.fp as f64 / self.n_neg as f64)
            .unwrap_or(1.0)
    }

    /// `(recall, precision)` at each distinct threshold.
    pub fn pr(&self) -> Vec<(f64, f64)> {
        self.points
            .iter()
            .map(|p| (p.tp as f64 / self.n_pos as f64, p.tp as f64 / (p.tp + p.fp) as f64))
            .collect()
    }

    /// Average precision: `sum (R_k - R_{k-1}) P_k`.
    pub fn average_precision(&self) -> f64 {
        let mut prev_recall = 0.0;
        let mut ap = 0.0;
        for (r, p) in self.pr() {
            ap += (r - prev_recall) * p;
            prev_recall = r;
        }
        ap.clamp(0.0, 1.0)
    }

    /// The same sweep with positives and negatives swapped and scores negated.
    pub fn flipped(&self) -> Self {
        let mut groups: Vec<(f64, u64, u64)> = Vec::with_capacity(self.points.len());
        let (mut prev_tp, mut prev_fp) = (0, 0);
        for p in &self.points {
            groups.push((-p.threshold, p.fp - prev_fp, p.tp - prev_tp));
            prev_tp = p.tp;
            prev_fp = p.fp;
        }
        groups.reverse();
        Self::from_groups(groups.into_iter())
    }
}

fn result_from_sweep(sweep: &ThresholdSweep) -> Result<OodEvalResult> {
    if sweep.n_pos == 0 || sweep.n_neg == 0 {
        return Err(Error::Degenerate(format!(
            "need both OOD and in-distribution pixels, got {} OOD and {} in-distribution",
            sweep.n_pos, sweep.n_neg
        )));
    }
    Ok(OodEvalResult {
        fpr95: sweep.fpr_at_95_tpr(),
        auroc: sweep.auroc(),
        aupr_out: sweep.average_precision(),
        aupr_in: sweep.flipped().average_precision(),
        n_in: sweep.n_neg,
        n_out: sweep.n_pos,
    })
}

/// Metrics over pooled `(score, is_ood)` pairs; scores oriented high = anomalous.
pub fn evaluate_scores(scores: &[f32], is_ood: &[bool]) -> Result<OodEvalResult> {
    if scores.len() != is_ood.len() {
        return Err(Error::Argument("score and label counts differ".into()));
    }
    result_from_sweep(&ThresholdSweep::exact(scores, is_ood))
}

/// Collects the evaluated `(score, is_ood)` pairs of one image.
pub fn extract_pixels(score: &ScoreMap, ood_mask: &BinaryMask, eval_mask: &BinaryMask) -> Result<(Vec<f32>, Vec<bool>)> {
    let (w, h) = (score.width(), score.height());
    for (name, m) in [("ood", ood_mask), ("eval", eval_mask)] {
        if m.width() != w || m.height() != h {
            return Err(Error::Argument(format!(
                "{name} mask is {}x{}, score map is {w}x{h}",
                m.width(),
                m.height()
            )));
        }
    }
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for ((s, &o), &e) in score.anomaly_scores().zip(ood_mask.data()).zip(eval_mask.data()) {
        if e {
            scores.push(s);
            labels.push(o);
        }
    }
    Ok((scores, labels))
}

pub fn evaluate_ood(score: &ScoreMap, ood_mask: &BinaryMask, eval_mask: &BinaryMask) -> Result<OodEvalResult> {
    let (scores, labels) = extract_pixels(score, ood_mask, eval_mask)?;
    evaluate_scores(&scores, &labels)
}

/// Streaming evaluation for pixel counts too large to sort in memory.
///
/// Bucket edges are quantiles of a stride sample of the scores; each bucket is
/// then treated as one tied group.
#[derive(Debug, Clone)]
pub struct HistogramEvaluator {
    edges: Vec<f32>,
    pos: Vec<u64>,
    neg: Vec<u64>,
}

impl HistogramEvaluator {
    /// `sample` should be a representative subset of all scores to be added.
    pub fn from_sample(sample: &[f32], buckets: usize) -> Result<Self> {
        if sample.is_empty() || buckets == 0 {
            return Err(Error::EmptyInput("histogram needs sample scores and buckets".into()));
        }
        let mut sorted = sample.to_vec();
        sorted.sort_by(f32::total_cmp);
        let mut edges: Vec<f32> = (1..buckets)
            .map(|k| sorted[(k * sorted.len() / buckets).min(sorted.len() - 1)])
            .collect();
        edges.dedup();
        let n = edges.len() + 1;
        Ok(Self {
            edges,
            pos: vec![0; n],
            neg: vec![0; n],
        })
    }

    fn bucket(&self, s: f32) -> usize {
        self.edges.partition_point(|&e| e <= s)
    }

    pub fn add(&mut self, scores: &[f32], is_ood: &[bool]) {
        for (&s, &o) in scores.iter().zip(is_ood) {
            let b = self.bucket(s);
            if o {
                self.pos[b] += 1;
            } else {
                self.neg[b] += 1;
            }
        }
    }

    pub fn merge_in(&mut self, other: &HistogramEvaluator) -> Result<()> {
        if self.edges != other.edges {
            return Err(Error::Argument("histograms have different bucket edges".into()));
        }
        self.pos.iter_mut().zip(&other.pos).for_each(|(a, b)| *a += b);
        self.neg.iter_mut().zip(&other.neg).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn sweep(&self) -> ThresholdSweep {
        let n = self.pos.len();
        ThresholdSweep::from_groups((0..n).rev().map(|b| {
            let lower = if b == 0 { f64::NEG_INFINITY } else { f64::from(self.edges[b - 1]) };
            (lower, self.pos[b], self.neg[b])
        }))
    }

    pub fn finish(&self) -> Result<OodEvalResult> {
        result_from_sweep(&self.sweep())
    }
}

/// Mean of per-image metrics over images that have both pixel kinds.
pub fn mean_of_results(results: &[OodEvalResult]) -> Result<OodEvalResult> {
    if results.is_empty() {
        return Err(Error::EmptyInput("no image had both OOD and in-distribution pixels".into()));
    }
    let n = results.len() as f64;
    let mean = |f: fn(&OodEvalResult) -> f64| results.iter().map(f).sum::<f64>() / n;
    Ok(OodEvalResult {
        fpr95: mean(|r| r.fpr95),
        auroc: mean(|r| r.auroc),
        aupr_in: mean(|r| r.aupr_in),
        aupr_out: mean(|r| r.aupr_out),
        n_in: results.iter().map(|r| r.n_in).sum(),
        n_out: results.iter().map(|r| r.n_out).sum(),
    })
}
