mod common;

use std::path::Path;

use common::*;
use segrel_core::data::{write_tensor, Tensor, TensorData};

fn write_bench(path: &Path, rows: &[(&str, &str, f64)]) {
    let mut w = csv::Writer::from_path(path).unwrap();
    w.write_record(["model_id", "domain_tag", "metric", "value"]).unwrap();
    for (m, d, v) in rows {
        w.write_record([*m, *d, "mIoU", &v.to_string()]).unwrap();
    }
    w.flush().unwrap();
}

#[test]
fn correlate_on_identity_line() {
    let dir = tempdir();
    let d = dir.path();
    let vals = [0.41, 0.52, 0.58, 0.66, 0.71];
    let mut rows = Vec::new();
    let names: Vec<String> = (0..vals.len()).map(|i| format!("m{i}")).collect();
    for (n, v) in names.iter().zip(vals) {
        rows.push((n.as_str(), "real", v));
        rows.push((n.as_str(), "syn", v));
    }
    // a model without the y domain is left out of the scatter
    rows.push(("lonely", "real", 0.3));
    write_bench(&d.join("b.csv"), &rows);
    let (scatter, fit, rel) = (d.join("s.csv"), d.join("fit.json"), d.join("rel.csv"));
    run_ok(&[
        "correlate", "--bench", p(&d.join("b.csv")), "--x-domain", "real", "--y-domain", "syn",
        "--scatter-out", p(&scatter), "--fit-out", p(&fit), "--reference", "m0", "--relative-out", p(&rel),
        "--band-points", "7",
    ]);
    let f = read_json(&fit);
    assert!((f["pcc"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((f["slope"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!(f["intercept"].as_f64().unwrap().abs() < 1e-12);
    assert_eq!(f["n"], 5);
    assert_eq!(f["band"].as_array().unwrap().len(), 7);
    assert_eq!(read_csv(&scatter).len(), 5);
    let rel_rows = read_csv(&rel);
    assert_eq!(rel_rows[0][1].parse::<f64>().unwrap(), 0.0);
    let expected = (0.71 - 0.41) / 0.41 * 100.0;
    assert!((rel_rows[4][2].parse::<f64>().unwrap() - expected).abs() < 1e-9);
}

#[test]
fn correlate_needs_three_models() {
    let dir = tempdir();
    let d = dir.path();
    write_bench(&d.join("b.csv"), &[("a", "x", 0.1), ("a", "y", 0.2), ("b", "x", 0.3), ("b", "y", 0.4)]);
    let out = run(&[
        "correlate", "--bench", p(&d.join("b.csv")), "--x-domain", "x", "--y-domain", "y",
        "--scatter-out", p(&d.join("s.csv")), "--fit-out", p(&d.join("f.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

/// Twelve 8x8 samples and four models whose error rate grows with their index.
fn subsample_fixture(d: &Path) -> Vec<String> {
    let gt_of = |s: usize| -> Vec<u8> { (0..64).map(|i| ((i / 16 + s) % 4) as u8).collect() };
    let mut gt = Vec::new();
    for s in 0..12 {
        save_labels(&d.join(format!("gt{s}.png")), 8, 8, gt_of(s));
        gt.push(entry(&format!("s{s:02}"), "img.png", &format!("gt{s}.png"), "syn"));
    }
    save_manifest(&d.join("gt.json"), gt, 4);
    let mut preds = Vec::new();
    for k in 0..4 {
        let mut entries = Vec::new();
        for s in 0..12 {
            let data: Vec<u8> =
                gt_of(s).iter().enumerate().map(|(i, &c)| if (i * 7 + s) % 10 < 2 * k { (c + 1) % 4 } else { c }).collect();
            let f = format!("m{k}_{s}.png");
            save_labels(&d.join(&f), 8, 8, data);
            entries.push(entry(&format!("s{s:02}"), "img.png", &f, "syn"));
        }
        let path = d.join(format!("model{k}.json"));
        save_manifest(&path, entries, 4);
        preds.push(path.to_str().unwrap().to_string());
    }
    preds
}

#[test]
fn subsample_full_population_has_no_spread() {
    let dir = tempdir();
    let d = dir.path();
    let preds = subsample_fixture(d);
    let bench = d.join("bench.csv");
    let gt = d.join("gt.json");
    let mut args = vec!["bench", "--gt", p(&gt), "--out", p(&bench)];
    for m in &preds {
        args.extend(["--pred", m.as_str()]);
    }
    run_ok(&args);

    let out = d.join("sub.csv");
    let mut args = vec![
        "subsample-study", "--gt", p(&gt), "--reference", p(&bench), "--reference-domain", "syn",
        "--n-grid", "4,12", "--repeats", "20", "--seed", "3", "--out", p(&out),
    ];
    for m in &preds {
        args.extend(["--pred", m.as_str()]);
    }
    run_ok(&args);
    let rows = read_csv(&out);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1][0], "12");
    assert!((rows[1][1].parse::<f64>().unwrap() - 1.0).abs() < 1e-12);
    assert!(rows[1][2].parse::<f64>().unwrap() < 1e-12);

    let again = d.join("sub2.csv");
    let pos = args.iter().position(|a| *a == p(&out)).unwrap();
    args[pos] = p(&again);
    run_ok(&args);
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&again).unwrap());
}

fn write_embeddings(path: &Path, n: usize, d: usize, f: impl Fn(usize, usize) -> f64) {
    let data = (0..n * d).map(|i| f(i / d, i % d)).collect();
    write_tensor(&Tensor::new(vec![n as u64, d as u64], TensorData::F64(data)).unwrap(), path).unwrap();
}

#[test]
fn fid_of_shifted_set_is_squared_shift() {
    let dir = tempdir();
    let d = dir.path();
    let base = |i: usize, j: usize| ((i * 31 + j * 17) % 13) as f64 / 3.0 + (i % 5) as f64 * j as f64 * 0.1;
    write_embeddings(&d.join("a.srt"), 40, 3, base);
    write_embeddings(&d.join("b.srt"), 40, 3, |i, j| base(i, j) + [1.0, -2.0, 0.5][j]);
    let out = d.join("fid.json");
    run_ok(&["fid", "--a", p(&d.join("a.srt")), "--b", p(&d.join("b.srt")), "--out", p(&out)]);
    let r = read_json(&out);
    assert!((r["fid"].as_f64().unwrap() - 5.25).abs() < 1e-6, "{r}");
    assert_eq!(r["dim"], 3);
    assert_eq!(r["n_a"], 40);

    run_ok(&["fid", "--a", p(&d.join("a.srt")), "--b", p(&d.join("a.srt")), "--out", p(&out)]);
    assert!(read_json(&out)["fid"].as_f64().unwrap().abs() < 1e-6);
}
