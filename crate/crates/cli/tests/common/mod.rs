#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use segrel_core::data::{
    write_label_png, write_rgb_png, write_tensor, DatasetManifest, LabelMap, LogitStack, ManifestEntry, RgbImage,
};

pub fn segrel() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_segrel"));
    c.env_remove("SEGREL_SERVICE_URL");
    c
}

pub fn run(args: &[&str]) -> Output {
    segrel().args(args).output().expect("spawn segrel")
}

pub fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "segrel {args:?} failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

pub fn entry(id: &str, image: &str, label: &str, domain: &str) -> ManifestEntry {
    ManifestEntry {
        sample_id: id.into(),
        image_path: image.into(),
        label_path: label.into(),
        logits_path: None,
        ood_mask_path: None,
        domain_tag: domain.into(),
        model_id: None,
    }
}

pub fn save_manifest(path: &Path, entries: Vec<ManifestEntry>, num_classes: usize) {
    DatasetManifest { entries, num_classes, ignore_id: 255 }.save(path).unwrap();
}

pub fn save_labels(path: &Path, w: usize, h: usize, data: Vec<u8>) {
    write_label_png(&LabelMap::new(w, h, data, 255).unwrap(), path).unwrap();
}

pub fn save_logits(path: &Path, logits: &LogitStack) {
    write_tensor(&logits.to_tensor(), path).unwrap();
}

pub fn save_gray_image(path: &Path, w: usize, h: usize) {
    let img = RgbImage::from_fn(w, h, |x, y| {
        let v = ((x * 5 + y * 3) % 180) as u8 + 40;
        [v, v, v]
    });
    write_rgb_png(&img, path).unwrap();
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Rows of a headered CSV as string vectors.
pub fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    rdr.records().map(|r| r.unwrap().iter().map(str::to_string).collect()).collect()
}

/// A `segrel` server child process, killed on drop.
pub struct Server {
    child: Child,
    pub url: String,
}

impl Server {
    pub fn spawn(args: &[&str]) -> Server {
        let mut child = segrel()
            .args(args)
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .expect("spawn server");
        let stdout = child.stdout.take().unwrap();
        let mut line = String::new();
        BufReader::new(stdout).read_line(&mut line).unwrap();
        let url = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected server banner {line:?}"))
            .to_string();
        Server { child, url }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub fn tempdir() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

pub fn join(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
