mod common;

use common::*;

fn fixture(dir: &std::path::Path) {
    // 2x2 maps: gt [0,0,1,1], pred [0,1,1,1]
    save_labels(&dir.join("gt.png"), 2, 2, vec![0, 0, 1, 1]);
    save_labels(&dir.join("pred.png"), 2, 2, vec![0, 1, 1, 1]);
    save_manifest(&dir.join("gt.json"), vec![entry("s0", "img.png", "gt.png", "cityscapes")], 2);
    save_manifest(&dir.join("model_a.json"), vec![entry("s0", "img.png", "pred.png", "cityscapes")], 2);
    save_manifest(&dir.join("oracle.json"), vec![entry("s0", "img.png", "gt.png", "cityscapes")], 2);
}

#[test]
fn hand_fixture_and_perfect_model() {
    let dir = tempdir();
    let d = dir.path();
    fixture(d);
    let out = d.join("bench.csv");
    run_ok(&[
        "bench",
        "--gt", p(&d.join("gt.json")),
        "--pred", p(&d.join("model_a.json")),
        "--pred", p(&d.join("oracle.json")),
        "--out", p(&out),
    ]);
    let rows = read_csv(&out);
    let get = |model: &str, metric: &str| -> f64 {
        rows.iter()
            .find(|r| r[0] == model && r[2] == metric)
            .unwrap_or_else(|| panic!("no row {model} {metric}"))[3]
            .parse()
            .unwrap()
    };
    assert!((get("model_a", "mIoU") - 7.0 / 12.0).abs() < 1e-12);
    assert!((get("model_a", "class_0") - 0.5).abs() < 1e-12);
    assert!((get("model_a", "class_1") - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(get("oracle", "mIoU"), 1.0);
    assert_eq!(rows[0][1], "cityscapes");
}

#[test]
fn output_is_byte_identical_across_runs() {
    let dir = tempdir();
    let d = dir.path();
    fixture(d);
    let (a, b) = (d.join("a.csv"), d.join("b.csv"));
    for out in [&a, &b] {
        run_ok(&["bench", "--gt", p(&d.join("gt.json")), "--pred", p(&d.join("model_a.json")), "--out", p(out)]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn empty_manifest_is_a_validation_error() {
    let dir = tempdir();
    let d = dir.path();
    save_manifest(&d.join("empty.json"), vec![], 19);
    let out = run(&["bench", "--gt", p(&d.join("empty.json")), "--pred", p(&d.join("empty.json")), "--out", p(&d.join("x.csv"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_file_reports_path() {
    let dir = tempdir();
    let d = dir.path();
    save_manifest(&d.join("gt.json"), vec![entry("s0", "img.png", "nope.png", "x")], 2);
    let out = run(&["bench", "--gt", p(&d.join("gt.json")), "--pred", p(&d.join("gt.json")), "--out", p(&d.join("x.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.png"));
}

#[test]
fn class_range_violation_names_sample() {
    let dir = tempdir();
    let d = dir.path();
    save_labels(&d.join("gt.png"), 2, 1, vec![0, 7]);
    save_manifest(&d.join("gt.json"), vec![entry("bad_sample", "img.png", "gt.png", "x")], 2);
    let out = run(&["bench", "--gt", p(&d.join("gt.json")), "--pred", p(&d.join("gt.json")), "--out", p(&d.join("x.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad_sample") && err.contains("gt.png"), "{err}");
}
