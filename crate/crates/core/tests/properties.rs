use std::collections::BTreeMap;

use proptest::prelude::*;

use segrel_core::analytics::subsample_study;
use segrel_core::data::{LabelMap, RgbImage};
use segrel_core::genplan::{plan_inpaint, run_inpaint, InpaintPlan, MockService};
use segrel_core::rng::Xoshiro256StarStar;
use segrel_core::seg_metrics::{accumulate, ConfusionMatrix};

fn maps(seed: u64, w: usize, h: usize, c: usize) -> (LabelMap, LabelMap) {
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let gt = (0..w * h).map(|_| if rng.below(8) == 0 { 255 } else { rng.below(c as u64) as u8 }).collect();
    let pred = (0..w * h).map(|_| rng.below(c as u64) as u8).collect();
    (LabelMap::new(w, h, pred, 255).unwrap(), LabelMap::new(w, h, gt, 255).unwrap())
}

/// Mean IoU by counting pixel memberships directly.
fn counted_miou(pred: &LabelMap, gt: &LabelMap, c: usize) -> Option<f64> {
    let ious: Vec<f64> = (0..c as u8)
        .filter_map(|k| {
            let (mut inter, mut union) = (0usize, 0usize);
            for (&p, &g) in pred.data().iter().zip(gt.data()) {
                if g == 255 {
                    continue;
                }
                inter += usize::from(p == k && g == k);
                union += usize::from(p == k || g == k);
            }
            (union > 0).then(|| inter as f64 / union as f64)
        })
        .collect();
    (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64)
}

proptest! {
    #[test]
    fn miou_matches_counting_oracle(seed in any::<u64>(), w in 1usize..=16, h in 1usize..=16, c in 1usize..=5) {
        let (pred, gt) = maps(seed, w, h, c);
        let got = accumulate(&pred, &gt, c, 255).unwrap().miou().ok();
        match (got, counted_miou(&pred, &gt, c)) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12),
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn chunked_merge_is_order_free(seed in any::<u64>(), images in 1usize..12, cut in 0usize..12, rot in 0usize..12) {
        let cms: Vec<ConfusionMatrix> = (0..images)
            .map(|i| {
                let (p, g) = maps(seed.wrapping_add(i as u64), 9, 7, 4);
                accumulate(&p, &g, 4, 255).unwrap()
            })
            .collect();
        let mut whole = ConfusionMatrix::zeros(4);
        for cm in &cms {
            whole.merge_in(cm).unwrap();
        }
        // two chunks, each merged in rotated order, then combined
        let cut = cut % (images + 1);
        let chunk = |part: &[ConfusionMatrix]| {
            let mut acc = ConfusionMatrix::zeros(4);
            let n = part.len().max(1);
            for i in 0..part.len() {
                acc.merge_in(&part[(i + rot) % n]).unwrap();
            }
            acc
        };
        let (a, b) = cms.split_at(cut);
        prop_assert_eq!(chunk(b).merge(&chunk(a)).unwrap(), whole);
    }

    #[test]
    fn single_repeat_subsample_is_pure(seed in any::<u64>(), n in 1usize..20) {
        let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
        let mut per_image = BTreeMap::new();
        let mut reference = BTreeMap::new();
        for m in 0..4 {
            per_image.insert(format!("m{m}"), (0..20).map(|_| rng.normal()).collect::<Vec<f64>>());
            reference.insert(format!("m{m}"), rng.normal());
        }
        let a = subsample_study(&per_image, &reference, &[n], 1, seed);
        let b = subsample_study(&per_image, &reference, &[n], 1, seed);
        prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
        if let Ok(points) = a {
            prop_assert_eq!(points[0].pcc_std, 0.0);
        }
    }
}

#[test]
fn serialized_plan_replays_identically() {
    let image = RgbImage::from_fn(640, 320, |x, y| [(x % 251) as u8, (y % 241) as u8, ((x + y) % 239) as u8]);
    let plan = plan_inpaint("p_ood", "p", 640, 320, 77).unwrap();
    let text = serde_json::to_string(&plan).unwrap();
    let back: InpaintPlan = serde_json::from_str(&text).unwrap();
    assert_eq!(back, plan);
    let a = run_inpaint(&plan, &image, &MockService::default()).unwrap();
    let b = run_inpaint(&back, &image, &MockService::default()).unwrap();
    assert_eq!(a.image.data(), b.image.data());
    assert_eq!(a.ood_mask, b.ood_mask);
}
