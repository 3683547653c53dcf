//! File formats the CLI understands, plus the run manifest written next to
//! every produced output.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use ddq_core::{BBox, BoxList, QueryRecord, QuerySet};

use crate::error::{CliError, Result};

pub const FILE_SCHEMA_VERSION: u32 = 1;

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
    }
    std::fs::write(path, content).map_err(|e| CliError::io(path, e))
}

pub fn sha256_hex(content: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(content.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// One scored box in the JSON boxes format:
/// `{"box": [x1, y1, x2, y2], "score": 0.9}` (score optional).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoredBoxRecord {
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

/// Accepts either `{"box": [...]}` records or bare `[x1, y1, x2, y2]` rows.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum BoxRecordOrArray {
    Record(ScoredBoxRecord),
    Array([f64; 4]),
}

/// Read a box list from JSON (`.json`) or CSV (any other extension; header
/// `x1,y1,x2,y2,score` with score optional). The caller supplies the file
/// content so it is read (and hashed for the manifest) exactly once.
pub fn parse_box_list(path: &Path, text: &str) -> Result<BoxList> {
    let is_json = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("json"))
        .unwrap_or(false);
    if is_json {
        parse_boxes_json(path, text)
    } else {
        parse_boxes_csv(path, text)
    }
}

fn parse_boxes_json(path: &Path, text: &str) -> Result<BoxList> {
    let records: Vec<BoxRecordOrArray> =
        serde_json::from_str(text).map_err(|e| CliError::parse(path, e))?;
    let mut boxes = Vec::with_capacity(records.len());
    let mut scores = Vec::new();
    let mut any_score = false;
    for (i, r) in records.iter().enumerate() {
        let (corners, score) = match r {
            BoxRecordOrArray::Record(rec) => (rec.bbox, rec.score),
            BoxRecordOrArray::Array(a) => (*a, None),
        };
        boxes.push(
            BBox::from_corners(corners)
                .map_err(|e| CliError::parse(path, format!("record {i}: {e}")))?,
        );
        if let Some(s) = score {
            any_score = true;
            scores.push(s);
        } else {
            scores.push(0.0);
        }
    }
    build_box_list(path, boxes, scores, any_score)
}

fn parse_boxes_csv(path: &Path, text: &str) -> Result<BoxList> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| CliError::parse(path, e))?
        .clone();
    let score_col = headers.iter().position(|h| h == "score");
    let coord_cols: Vec<usize> = ["x1", "y1", "x2", "y2"]
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| CliError::parse(path, format!("missing column '{name}'")))
        })
        .collect::<Result<_>>()?;

    let mut boxes = Vec::new();
    let mut scores = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2; // header is line 1
        let row = row.map_err(|e| CliError::parse(path, format!("line {line}: {e}")))?;
        let mut coords = [0.0_f64; 4];
        for (slot, &col) in coord_cols.iter().enumerate() {
            coords[slot] = row
                .get(col)
                .ok_or_else(|| CliError::parse(path, format!("line {line}: short row")))?
                .parse()
                .map_err(|e| CliError::parse(path, format!("line {line}: {e}")))?;
        }
        boxes.push(
            BBox::from_corners(coords)
                .map_err(|e| CliError::parse(path, format!("line {line}: {e}")))?,
        );
        if let Some(col) = score_col {
            let raw = row
                .get(col)
                .ok_or_else(|| CliError::parse(path, format!("line {line}: short row")))?;
            scores.push(
                raw.parse()
                    .map_err(|e| CliError::parse(path, format!("line {line}: {e}")))?,
            );
        }
    }
    let any_score = score_col.is_some();
    if !any_score {
        scores = vec![0.0; boxes.len()];
    }
    build_box_list(path, boxes, scores, any_score)
}

fn build_box_list(
    path: &Path,
    boxes: Vec<BBox>,
    scores: Vec<f64>,
    any_score: bool,
) -> Result<BoxList> {
    if any_score {
        BoxList::with_scores(boxes, scores).map_err(|e| CliError::parse(path, e))
    } else {
        Ok(BoxList::new(boxes))
    }
}

/// NMS output: survivors plus their indices into the input.
#[derive(Debug, Serialize, Deserialize)]
pub struct NmsOutput {
    pub schema_version: u32,
    pub iou_threshold: f64,
    pub kept_indices: Vec<usize>,
    pub boxes: Vec<ScoredBoxRecord>,
}

/// Query-set file: image geometry plus the per-query records.
#[derive(Debug, Serialize, Deserialize)]
pub struct QueryFile {
    pub schema_version: u32,
    pub image_w: u32,
    pub image_h: u32,
    pub queries: Vec<QueryRecord>,
}

pub fn parse_query_file(path: &Path, text: &str) -> Result<(QuerySet, u32, u32)> {
    let file: QueryFile = serde_json::from_str(text).map_err(|e| CliError::parse(path, e))?;
    if file.schema_version != FILE_SCHEMA_VERSION {
        return Err(CliError::parse(
            path,
            format!(
                "schema_version {} unsupported (expected {FILE_SCHEMA_VERSION})",
                file.schema_version
            ),
        ));
    }
    let queries = QuerySet::from_records(file.queries).map_err(|e| CliError::parse(path, e))?;
    Ok((queries, file.image_w, file.image_h))
}

/// Manifest written alongside every produced output file or directory.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub inputs: Vec<ManifestInput>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    pub artifact_version: String,
    pub outputs: Vec<String>,
    pub duration_ms: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestInput {
    pub path: String,
    pub sha256: String,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            schema_version: FILE_SCHEMA_VERSION,
            command: command.to_string(),
            inputs: Vec::new(),
            master_seed: None,
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: Vec::new(),
            duration_ms: 0,
        }
    }

    pub fn record_input(&mut self, path: &Path, content: &str) {
        self.inputs.push(ManifestInput {
            path: path.display().to_string(),
            sha256: sha256_hex(content),
        });
    }

    pub fn record_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn finish(mut self, started: std::time::Instant) -> Self {
        self.duration_ms = Duration::as_millis(&started.elapsed()) as u64;
        self
    }

    /// Write the manifest next to the given output path.
    pub fn write_beside(&self, output: &Path) -> Result<PathBuf> {
        let manifest_path = if output.is_dir() {
            output.join("manifest.json")
        } else {
            let mut name = output
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "output".to_string());
            name.push_str(".manifest.json");
            output.with_file_name(name)
        };
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_file(&manifest_path, &text)?;
        Ok(manifest_path)
    }
}
