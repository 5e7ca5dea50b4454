//! Confusion-matrix accumulation and IoU / mIoU.

use serde::{Deserialize, Serialize};

use crate::data::LabelMap;
use crate::error::{Error, Result};

/// `counts[g * C + p]` = pixels with ground truth `g` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_counts(num_classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != num_classes * num_classes {
            return Err(Error::Argument(format!(
                "{} counts for {num_classes} classes",
                counts.len()
            )));
        }
        Ok(Self { num_classes, counts })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds the pixels of one `(pred, gt)` pair. Pixels whose ground truth is
    /// the ignore ID are skipped, whatever was predicted there.
    pub fn add(&mut self, pred: &LabelMap, gt: &LabelMap, ignore_id: u8) -> Result<()> {
        if pred.width() != gt.width() || pred.height() != gt.height() {
            return Err(Error::Argument(format!(
                "prediction is {}x{}, ground truth is {}x{}",
                pred.width(),
                pred.height(),
                gt.width(),
                gt.height()
            )));
        }
        let c = self.num_classes;
        for (i, (&p, &g)) in pred.data().iter().zip(gt.data()).enumerate() {
            if g == ignore_id {
                continue;
            }
            let (p, g) = (usize::from(p), usize::from(g));
            if p >= c {
                return Err(Error::Data(format!("predicted class {p} at pixel {i} is >= {c}")));
            }
            if g >= c {
                return Err(Error::Data(format!("ground-truth class {g} at pixel {i} is >= {c}")));
            }
            self.counts[g * c + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&self, other: &ConfusionMatrix) -> Result<ConfusionMatrix> {
        let mut out = self.clone();
        out.merge_in(other)?;
        Ok(out)
    }

    pub fn merge_in(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.num_classes != other.num_classes {
            return Err(Error::Argument(format!(
                "cannot merge {}-class and {}-class matrices",
                self.num_classes, other.num_classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Per-class IoU; `None` where the class has zero union.
    pub fn iou_per_class(&self) -> Vec<Option<f64>> {
        let c = self.num_classes;
        (0..c)
            .map(|k| {
                let tp = self.get(k, k);
                let row: u64 = (0..c).map(|p| self.get(k, p)).sum();
                let col: u64 = (0..c).map(|g| self.get(g, k)).sum();
                let union = row + col - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }

    /// Mean IoU over classes with nonzero union.
    pub fn miou(&self) -> Result<f64> {
        let defined: Vec<f64> = self.iou_per_class().into_iter().flatten().collect();
        if defined.is_empty() {
            return Err(Error::Undefined("no class has a nonzero union".into()));
        }
        Ok(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

pub fn accumulate(pred: &LabelMap, gt: &LabelMap, num_classes: usize, ignore_id: u8) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::zeros(num_classes);
    cm.add(pred, gt, ignore_id)?;
    Ok(cm)
}

/// Element-wise sum of two matrices of the same size.
pub fn merge(a: &ConfusionMatrix, b: &ConfusionMatrix) -> Result<ConfusionMatrix> {
    a.merge(b)
}
