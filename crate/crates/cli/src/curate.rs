use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use anyhow::{Context, Result};
use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use clap::{Args, Subcommand};
use serde::{Deserialize, Serialize};

use segrel_core::data::{CurationRecord, DatasetManifest, Verdict};
use segrel_core::genplan::{build_training_manifest, compact_verdicts, SelectionMode};

use crate::io;
use crate::server::{bind, runtime};
use crate::Outcome;

pub const VERDICT_LOG: &str = "verdicts.jsonl";

#[derive(Args, Debug)]
pub struct CurateArgs {
    #[command(subcommand)]
    pub action: CurateAction,
}

#[derive(Subcommand, Debug)]
pub enum CurateAction {
    /// Serve the review API over a generated dataset directory
    Serve {
        /// Output directory of run-inpaint
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
    /// Compact the verdict log into a curation manifest
    Export {
        #[arg(long)]
        dir: PathBuf,
        /// Curation manifest: JSON array, one record per sample
        #[arg(long)]
        out: PathBuf,
        /// Also write a dataset manifest of the selected samples
        #[arg(long)]
        training_manifest: Option<PathBuf>,
        #[arg(long, default_value = "curated")]
        mode: SelectionMode,
    },
}

pub fn run(args: &CurateArgs) -> Result<Outcome> {
    match &args.action {
        CurateAction::Serve { dir, addr } => serve(dir, addr),
        CurateAction::Export { dir, out, training_manifest, mode } => {
            export(dir, out, training_manifest.as_deref(), *mode)
        }
    }
}

fn load_generated(dir: &Path) -> Result<DatasetManifest> {
    let dir = fs::canonicalize(dir).map_err(|e| io::input_error(format!("{}: {e}", dir.display())))?;
    let path = dir.join("manifest.json");
    DatasetManifest::load(&path).with_context(|| format!("loading {}", path.display()))
}

/// Parses the verdict log; a truncated final line (interrupted write) is
/// ignored, any other malformed line is an error.
pub fn read_log(path: &Path) -> Result<Vec<CurationRecord>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e).with_context(|| format!("reading {}", path.display())),
    };
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(_) if i + 1 == lines.len() && !text.ends_with('\n') => break,
            Err(e) => return Err(io::input_error(format!("{}:{}: {e}", path.display(), i + 1))),
        }
    }
    Ok(out)
}

fn export(dir: &Path, out: &Path, training: Option<&Path>, mode: SelectionMode) -> Result<Outcome> {
    let generated = load_generated(dir)?;
    let log = read_log(&dir.join(VERDICT_LOG))?;
    let compacted = compact_verdicts(&log);
    let manifest = build_training_manifest(&generated, &compacted, mode)?;
    io::write_json(out, &compacted)?;
    if let Some(p) = training {
        io::ensure_parent(p)?;
        manifest.save(p)?;
    }
    Ok(Outcome::Complete)
}

struct CurateState {
    manifest: DatasetManifest,
    index: BTreeMap<String, usize>,
    /// Serialized writer plus the latest verdict per sample.
    log: Mutex<(fs::File, BTreeMap<String, CurationRecord>)>,
}

#[derive(Deserialize)]
struct PageQuery {
    #[serde(default)]
    page: usize,
    #[serde(default = "default_per_page")]
    per_page: usize,
}

fn default_per_page() -> usize {
    50
}

#[derive(Serialize)]
struct SampleView {
    sample_id: String,
    image_url: String,
    mask_url: String,
    verdict: Option<Verdict>,
    reason_tag: Option<String>,
}

#[derive(Serialize)]
struct SamplePage {
    total: usize,
    page: usize,
    per_page: usize,
    samples: Vec<SampleView>,
}

#[derive(Deserialize)]
struct VerdictBody {
    sample_id: String,
    verdict: Verdict,
    #[serde(default)]
    reason_tag: String,
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": msg.into() }))).into_response()
}

async fn list_samples(State(st): State<Arc<CurateState>>, Query(q): Query<PageQuery>) -> Response {
    if q.per_page == 0 || q.per_page > 1000 {
        return error(StatusCode::BAD_REQUEST, "per_page must be in 1..=1000");
    }
    let latest = st.log.lock().map(|g| g.1.clone()).unwrap_or_default();
    let samples = st
        .manifest
        .entries
        .iter()
        .skip(q.page.saturating_mul(q.per_page))
        .take(q.per_page)
        .map(|e| {
            let v = latest.get(&e.sample_id);
            SampleView {
                sample_id: e.sample_id.clone(),
                image_url: format!("/api/image/{}", e.sample_id),
                mask_url: format!("/api/mask/{}", e.sample_id),
                verdict: v.map(|r| r.verdict),
                reason_tag: v.map(|r| r.reason_tag.clone()),
            }
        })
        .collect();
    Json(SamplePage { total: st.manifest.entries.len(), page: q.page, per_page: q.per_page, samples }).into_response()
}

async fn png_file(path: PathBuf) -> Response {
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "image/png")], bytes).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("{}: {e}", path.display())),
    }
}

async fn get_image(State(st): State<Arc<CurateState>>, UrlPath(id): UrlPath<String>) -> Response {
    match st.index.get(&id) {
        Some(&i) => png_file(st.manifest.entries[i].image_path.clone()).await,
        None => error(StatusCode::NOT_FOUND, format!("unknown sample {id:?}")),
    }
}

async fn get_mask(State(st): State<Arc<CurateState>>, UrlPath(id): UrlPath<String>) -> Response {
    let Some(&i) = st.index.get(&id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown sample {id:?}"));
    };
    // binary 0/255 overlay written next to the 0/1/255-coded mask
    let e = &st.manifest.entries[i];
    let overlay = e
        .image_path
        .parent()
        .and_then(Path::parent)
        .map(|root| root.join("masks").join(format!("{id}.png")));
    match overlay {
        Some(p) if p.exists() => png_file(p).await,
        _ => match &e.ood_mask_path {
            Some(p) => png_file(p.clone()).await,
            None => error(StatusCode::NOT_FOUND, format!("sample {id:?} has no mask")),
        },
    }
}

async fn post_verdict(State(st): State<Arc<CurateState>>, body: Bytes) -> Response {
    let v: VerdictBody = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed verdict: {e}")),
    };
    if !st.index.contains_key(&v.sample_id) {
        return error(StatusCode::NOT_FOUND, format!("unknown sample {:?}", v.sample_id));
    }
    let record = CurationRecord {
        sample_id: v.sample_id,
        verdict: v.verdict,
        reason_tag: v.reason_tag,
        timestamp: chrono::Utc::now().timestamp(),
    };
    let line = match serde_json::to_string(&record) {
        Ok(l) => l,
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    };
    let mut guard = match st.log.lock() {
        Ok(g) => g,
        Err(_) => return error(StatusCode::INTERNAL_SERVER_ERROR, "verdict log poisoned"),
    };
    let (file, latest) = &mut *guard;
    if let Err(e) = writeln!(file, "{line}").and_then(|_| file.sync_data()) {
        return error(StatusCode::INTERNAL_SERVER_ERROR, format!("writing verdict: {e}"));
    }
    latest.insert(record.sample_id.clone(), record.clone());
    Json(record).into_response()
}

pub fn curate_router(dir: &Path) -> Result<Router> {
    let manifest = load_generated(dir)?;
    let log_path = dir.join(VERDICT_LOG);
    let existing = read_log(&log_path)?;
    let latest: BTreeMap<String, CurationRecord> =
        compact_verdicts(&existing).into_iter().map(|r| (r.sample_id.clone(), r)).collect();
    let file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;
    let index = manifest.entries.iter().enumerate().map(|(i, e)| (e.sample_id.clone(), i)).collect();
    let state = Arc::new(CurateState { manifest, index, log: Mutex::new((file, latest)) });
    Ok(Router::new()
        .route("/api/samples", get(list_samples))
        .route("/api/image/{id}", get(get_image))
        .route("/api/mask/{id}", get(get_mask))
        .route("/api/verdict", post(post_verdict))
        .with_state(state))
}

fn serve(dir: &Path, addr: &str) -> Result<Outcome> {
    let router = curate_router(dir)?;
    runtime()?.block_on(async {
        let (listener, _) = bind(addr).await?;
        axum::serve(listener, router).await?;
        Ok(Outcome::Complete)
    })
}
