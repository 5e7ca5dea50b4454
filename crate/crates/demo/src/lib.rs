//! Browser bindings. Each export returns a JSON string for the page to plot.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use segrel_core::calibration::{apply_temperature, ece, fit_temperature, TemperatureMode, TemperatureParams};
use segrel_core::data::{LabelMap, LogitStack};
use segrel_core::genplan::{plan_inpaint, ContextBox};
use segrel_core::ood_metrics::{evaluate_scores, ThresholdSweep};
use segrel_core::rng::Xoshiro256StarStar;

const CLASSES: usize = 5;
const SIDE: usize = 128;
const ROC_POINTS: usize = 200;

/// Overconfident model: labels follow softmax(z) but logits are `2.5 z`.
fn overconfident(seed: u64) -> (LogitStack, LabelMap) {
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let mut logits = Vec::with_capacity(SIDE * SIDE * CLASSES);
    let mut labels = Vec::with_capacity(SIDE * SIDE);
    for _ in 0..SIDE * SIDE {
        let z: Vec<f64> = (0..CLASSES).map(|_| 1.5 * rng.normal()).collect();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
        let mut u = rng.next_f64() * e.iter().sum::<f64>();
        let label = e.iter().position(|v| {
            u -= v;
            u < 0.0
        });
        labels.push(label.unwrap_or(CLASSES - 1) as u8);
        logits.extend(z.iter().map(|v| (2.5 * v) as f32));
    }
    (
        LogitStack::new(SIDE, SIDE, CLASSES, logits).expect("consistent shape"),
        LabelMap::new(SIDE, SIDE, labels, 255).expect("consistent shape"),
    )
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

pub fn reliability_json(temperature: f64, seed: u64) -> Result<String, String> {
    let (logits, labels) = overconfident(seed);
    let report = |t: f64| -> Result<Value, String> {
        let params = TemperatureParams::scalar(t).map_err(err)?;
        let probs = apply_temperature(&logits, &params).map_err(err)?;
        let r = ece(&probs, &labels, 15).map_err(err)?;
        serde_json::to_value(r).map_err(err)
    };
    let fitted = fit_temperature(&[(logits.clone(), labels.clone())], TemperatureMode::Scalar).map_err(err)?;
    Ok(json!({
        "raw": report(1.0)?,
        "scaled": report(temperature)?,
        "temperature": temperature,
        "fitted_temperature": fitted.for_class(0),
    })
    .to_string())
}

pub fn roc_json(separation: f64, n: usize, seed: u64) -> Result<String, String> {
    if n < 2 {
        return Err("need at least 2 pixels per population".into());
    }
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let mut scores = Vec::with_capacity(2 * n);
    let mut is_ood = Vec::with_capacity(2 * n);
    for i in 0..2 * n {
        let ood = i >= n;
        scores.push((rng.normal() + if ood { separation } else { 0.0 }) as f32);
        is_ood.push(ood);
    }
    let metrics = evaluate_scores(&scores, &is_ood).map_err(err)?;
    let roc = ThresholdSweep::exact(&scores, &is_ood).roc();
    let step = roc.len().div_ceil(ROC_POINTS).max(1);
    let mut curve: Vec<[f64; 2]> = roc.iter().step_by(step).map(|&(f, t)| [f, t]).collect();
    if let Some(&(f, t)) = roc.last() {
        if curve.last() != Some(&[f, t]) {
            curve.push([f, t]);
        }
    }
    Ok(json!({ "metrics": metrics, "roc": curve }).to_string())
}

pub fn inpaint_layout_json(width: usize, height: usize, seed: u64) -> Result<String, String> {
    let plan = plan_inpaint("demo_ood", "demo", width, height, seed).map_err(err)?;
    let context: ContextBox = plan.context;
    Ok(json!({
        "box": plan.inpaint_box,
        "context": context,
        "object": plan.object_name,
        "prompt": plan.prompt(),
    })
    .to_string())
}

#[wasm_bindgen]
pub fn reliability(temperature: f64, seed: u32) -> Result<String, JsError> {
    reliability_json(temperature, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn roc(separation: f64, n: u32, seed: u32) -> Result<String, JsError> {
    roc_json(separation, n as usize, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn inpaint_layout(width: u32, height: u32, seed: u32) -> Result<String, JsError> {
    inpaint_layout_json(width as usize, height as usize, seed.into()).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn fitted_temperature_reduces_ece() {
        let v = parse(&reliability_json(1.0, 3).unwrap());
        let t = v["fitted_temperature"].as_f64().unwrap();
        assert!((t - 2.5).abs() < 0.3, "{t}");
        let fitted = parse(&reliability_json(t, 3).unwrap());
        assert!(fitted["scaled"]["ece"].as_f64().unwrap() < fitted["raw"]["ece"].as_f64().unwrap());
    }

    #[test]
    fn roc_curve_spans_unit_square() {
        let v = parse(&roc_json(2.0, 500, 1).unwrap());
        let curve = v["roc"].as_array().unwrap();
        assert!(curve.len() <= ROC_POINTS + 1);
        assert_eq!(curve[0], json!([0.0, 0.0]));
        assert_eq!(curve.last().unwrap(), &json!([1.0, 1.0]));
        let auroc = v["metrics"]["auroc"].as_f64().unwrap();
        assert!(auroc > 0.85 && auroc < 0.99, "{auroc}");
        assert!(roc_json(1.0, 1, 0).is_err());
    }

    #[test]
    fn layout_keeps_context_inside_image() {
        let v = parse(&inpaint_layout_json(2048, 1024, 5).unwrap());
        let c = &v["context"];
        assert!(c["x"].as_u64().unwrap() + c["size"].as_u64().unwrap() <= 2048);
        assert!(v["prompt"].as_str().unwrap().starts_with("A photo of an "));
        assert!(inpaint_layout_json(4, 4, 0).is_err());
    }
}
