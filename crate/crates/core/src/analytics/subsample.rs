use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::pearson;
use crate::error::{Error, Result};
use crate::rng;
use crate::seg_metrics::ConfusionMatrix;

/// Reduces a subset of per-image records to one model-level metric.
pub trait SubsampleAggregate {
    fn aggregate(items: &[&Self]) -> Result<f64>
    where
        Self: Sized;
}

/// Dataset-level mIoU of the merged confusion matrices.
impl SubsampleAggregate for ConfusionMatrix {
    fn aggregate(items: &[&Self]) -> Result<f64> {
        let first = items
            .first()
            .ok_or_else(|| Error::EmptyInput("no images in subsample".into()))?;
        let mut total = ConfusionMatrix::zeros(first.num_classes());
        for cm in items {
            total.merge_in(cm)?;
        }
        total.miou()
    }
}

/// Plain mean of per-image values.
impl SubsampleAggregate for f64 {
    fn aggregate(items: &[&Self]) -> Result<f64> {
        if items.is_empty() {
            return Err(Error::EmptyInput("no images in subsample".into()));
        }
        Ok(items.iter().copied().sum::<f64>() / items.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsamplePoint {
    pub n: usize,
    pub pcc_mean: f64,
    pub pcc_std: f64,
}

/// For each `n` in `n_grid`, draws `repeats` image subsets of size `n`
/// without replacement, re-aggregates every model on the subset and reports
/// the mean and (population) standard deviation of its PCC against
/// `reference`.
///
/// Models present in both maps take part, in model-ID order. The subset for
/// repeat `r` at size `n` comes from the stream `(seed, "n=<n>", r)` and is
/// shared by all models; indices are sorted before aggregation.
pub fn subsample_study<A: SubsampleAggregate>(
    per_image: &BTreeMap<String, Vec<A>>,
    reference: &BTreeMap<String, f64>,
    n_grid: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<Vec<SubsamplePoint>> {
    let models: Vec<(&String, &Vec<A>, f64)> = per_image
        .iter()
        .filter_map(|(m, v)| reference.get(m).map(|r| (m, v, *r)))
        .collect();
    if models.len() < 2 {
        return Err(Error::Argument(format!(
            "need at least 2 models with reference values, got {}",
            models.len()
        )));
    }
    if repeats == 0 {
        return Err(Error::Argument("repeats must be positive".into()));
    }
    let population = models[0].1.len();
    if let Some((m, v, _)) = models.iter().find(|(_, v, _)| v.len() != population) {
        return Err(Error::Consistency(format!(
            "model {m} has {} images, expected {population}",
            v.len()
        )));
    }
    let ref_values: Vec<f64> = models.iter().map(|(_, _, r)| *r).collect();

    n_grid
        .iter()
        .map(|&n| {
            if n == 0 || n > population {
                return Err(Error::Argument(format!(
                    "subsample size {n} outside 1..={population}"
                )));
            }
            let pccs = (0..repeats)
                .map(|r| {
                    let mut rng = rng::stream(seed, &format!("n={n}"), r as u64);
                    let mut idx = rng.sample_without_replacement(population, n);
                    idx.sort_unstable();
                    let values = models
                        .iter()
                        .map(|(_, items, _)| {
                            let subset: Vec<&A> = idx.iter().map(|&i| &items[i]).collect();
                            A::aggregate(&subset)
                        })
                        .collect::<Result<Vec<f64>>>()?;
                    pearson(&values, &ref_values)
                })
                .collect::<Result<Vec<f64>>>()?;
            let mean = pccs.iter().sum::<f64>() / repeats as f64;
            let var = pccs.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / repeats as f64;
            Ok(SubsamplePoint {
                n,
                pcc_mean: mean,
                pcc_std: var.sqrt(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Xoshiro256StarStar;

    /// Per-image values are i.i.d. noise around each model's mean; the
    /// reference is the model mean itself.
    fn noisy_cohort(seed: u64, images: usize, noise: f64) -> (BTreeMap<String, Vec<f64>>, BTreeMap<String, f64>) {
        let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
        let mut per_image = BTreeMap::new();
        let mut reference = BTreeMap::new();
        for m in 0..8 {
            let mu = 0.4 + 0.05 * m as f64;
            per_image.insert(format!("m{m}"), (0..images).map(|_| mu + noise * rng.normal()).collect());
            reference.insert(format!("m{m}"), mu);
        }
        (per_image, reference)
    }

    #[test]
    fn full_population_has_zero_spread() {
        let (pi, r) = noisy_cohort(1, 40, 0.1);
        let out = subsample_study(&pi, &r, &[40], 10, 3).unwrap();
        // every repeat sees the same subset, so only summation rounding remains
        assert!(out[0].pcc_std < 1e-12);
        let full: Vec<f64> = pi.values().map(|v| v.iter().sum::<f64>() / 40.0).collect();
        let refs: Vec<f64> = r.values().copied().collect();
        assert!((out[0].pcc_mean - pearson(&full, &refs).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_output() {
        let (pi, r) = noisy_cohort(2, 60, 0.2);
        let a = subsample_study(&pi, &r, &[5, 20], 7, 99).unwrap();
        let b = subsample_study(&pi, &r, &[5, 20], 7, 99).unwrap();
        assert_eq!(a, b);
        let c = subsample_study(&pi, &r, &[5, 20], 7, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn oversized_subsample_is_rejected() {
        let (pi, r) = noisy_cohort(3, 10, 0.1);
        assert!(matches!(subsample_study(&pi, &r, &[11], 2, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn spread_shrinks_with_sample_size() {
        let (pi, r) = noisy_cohort(4, 600, 0.5);
        let grid = [10, 40, 160, 400];
        let out = subsample_study(&pi, &r, &grid, 200, 5).unwrap();
        for w in out.windows(2) {
            // allow Monte-Carlo slack of 10%
            assert!(w[1].pcc_std <= w[0].pcc_std * 1.1, "{:?}", out);
        }
        assert!(out[3].pcc_mean > out[0].pcc_mean);
    }

    #[test]
    fn confusion_matrices_aggregate_to_dataset_miou() {
        let a = ConfusionMatrix::from_counts(2, vec![1, 1, 0, 2]).unwrap();
        let b = ConfusionMatrix::from_counts(2, vec![3, 0, 0, 0]).unwrap();
        let merged = a.merge(&b).unwrap();
        assert_eq!(ConfusionMatrix::aggregate(&[&a, &b]).unwrap(), merged.miou().unwrap());
    }
}
