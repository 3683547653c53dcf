//! `ddq` — dense-distinct-query tools: class-agnostic NMS over box files,
//! center-prior bipartite assignment, detection metrics, and seeded
//! synthetic experiments with CSV/JSON/SVG reports.

mod error;
mod io;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use ddq_core::sim::{self, ExperimentConfig};
use ddq_core::{
    average_precision, build_pyramid, center_prior_match, eval, nms_indices, CostWeights,
};

use crate::error::{CliError, Result};
use crate::io::{
    parse_box_list, parse_query_file, read_to_string, write_file, NmsOutput, RunManifest,
    ScoredBoxRecord, FILE_SCHEMA_VERSION,
};

#[derive(Parser)]
#[command(
    name = "ddq",
    version,
    about = "Dense distinct query selection, assignment and evaluation tools"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Class-agnostic NMS over a scored box file (JSON or CSV).
    Nms {
        /// Input boxes: .json (`{"box": [...], "score": s}` records) or CSV
        /// with header x1,y1,x2,y2,score.
        input: PathBuf,
        /// Suppression IoU threshold.
        #[arg(long = "iou-thresh", default_value_t = 0.7)]
        iou_thresh: f64,
        /// Keep at most this many survivors.
        #[arg(long = "max-keep")]
        max_keep: Option<usize>,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Center-prior bipartite assignment of queries to ground truths.
    Assign {
        /// Query-set file written by this tool or the simulator.
        #[arg(long)]
        queries: PathBuf,
        /// Ground-truth boxes (JSON records or bare `[x1,y1,x2,y2]` rows).
        #[arg(long)]
        gts: PathBuf,
        /// Candidates per pyramid level and ground truth.
        #[arg(short, long, default_value_t = 9)]
        k: usize,
        /// Matching cost weights as "w_cls,w_l1,w_giou".
        #[arg(long, value_parser = parse_weights, default_value = "2,5,2")]
        weights: CostWeights,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a configured experiment and write CSV + JSON (+ optional SVG).
    Experiment {
        /// TOML experiment configuration.
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's trial count.
        #[arg(long)]
        seeds: Option<usize>,
        /// Also write an SVG line plot of the summary.
        #[arg(long)]
        svg: bool,
    },
    /// Detection metrics (AP / AR) from COCO-style JSON files.
    Eval {
        /// Detections: `[{"image_id": n, "bbox": [x,y,w,h], "score": s}]`.
        #[arg(long)]
        detections: PathBuf,
        /// Ground truths: `[{"image_id": n, "bbox": [x,y,w,h]}]`.
        #[arg(long)]
        gts: PathBuf,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_weights(raw: &str) -> std::result::Result<CostWeights, String> {
    let parts: Vec<&str> = raw.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected 'w_cls,w_l1,w_giou', got '{raw}'"));
    }
    let mut values = [0.0f64; 3];
    for (slot, part) in values.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|e| format!("bad weight '{part}': {e}"))?;
    }
    Ok(CostWeights {
        w_cls: values[0],
        w_l1: values[1],
        w_giou: values[2],
    })
}

/// Worker cap for experiment trials: `DDQ_THREADS` when set, otherwise the
/// machine's available parallelism.
fn thread_cap() -> Result<usize> {
    match std::env::var("DDQ_THREADS") {
        Ok(raw) => {
            let n: usize = raw.parse().map_err(|_| {
                CliError::Domain(ddq_core::Error::Config(format!(
                    "DDQ_THREADS must be a positive integer, got '{raw}'"
                )))
            })?;
            if n == 0 {
                return Err(CliError::Domain(ddq_core::Error::Config(
                    "DDQ_THREADS must be at least 1".into(),
                )));
            }
            Ok(n)
        }
        Err(_) => Ok(std::thread::available_parallelism()
            .map(usize::from)
            .unwrap_or(1)),
    }
}

fn emit(out: Option<&Path>, content: &str, manifest: Option<RunManifest>) -> Result<()> {
    match out {
        Some(path) => {
            write_file(path, content)?;
            if let Some(mut manifest) = manifest {
                manifest.record_output(path);
                manifest.write_beside(path)?;
            }
        }
        None => print!("{content}"),
    }
    Ok(())
}

fn cmd_nms(
    input: &Path,
    iou_thresh: f64,
    max_keep: Option<usize>,
    out: Option<&Path>,
) -> Result<()> {
    let started = Instant::now();
    let text = read_to_string(input)?;
    let boxes = parse_box_list(input, &text)?;
    let kept = nms_indices(&boxes, iou_thresh, max_keep)?;

    let records: Vec<ScoredBoxRecord> = kept
        .iter()
        .map(|&i| ScoredBoxRecord {
            bbox: boxes.get(i).corners(),
            score: boxes.scores().map(|s| s[i]),
        })
        .collect();
    let output = NmsOutput {
        schema_version: FILE_SCHEMA_VERSION,
        iou_threshold: iou_thresh,
        kept_indices: kept,
        boxes: records,
    };
    let mut json = serde_json::to_string_pretty(&output).expect("output serializes");
    json.push('\n');

    let mut manifest = RunManifest::new("nms");
    manifest.record_input(input, &text);
    emit(out, &json, Some(manifest.finish(started)))
}

fn cmd_assign(
    queries_path: &Path,
    gts_path: &Path,
    k: usize,
    weights: CostWeights,
    out: Option<&Path>,
) -> Result<()> {
    let started = Instant::now();
    let queries_text = read_to_string(queries_path)?;
    let (queries, image_w, image_h) = parse_query_file(queries_path, &queries_text)?;
    let gts_text = read_to_string(gts_path)?;
    let gts = parse_box_list(gts_path, &gts_text)?;

    let pyramid = build_pyramid(image_w, image_h)?;
    let result = center_prior_match(&queries, &pyramid, &gts, k, weights)?;

    #[derive(serde::Serialize)]
    struct AssignOutput<'a> {
        schema_version: u32,
        k: usize,
        weights: CostWeights,
        image_w: u32,
        image_h: u32,
        result: &'a ddq_core::AssignmentResult,
    }
    let mut json = serde_json::to_string_pretty(&AssignOutput {
        schema_version: FILE_SCHEMA_VERSION,
        k,
        weights,
        image_w,
        image_h,
        result: &result,
    })
    .expect("output serializes");
    json.push('\n');

    let mut manifest = RunManifest::new("assign");
    manifest.record_input(queries_path, &queries_text);
    manifest.record_input(gts_path, &gts_text);
    emit(out, &json, Some(manifest.finish(started)))
}

fn cmd_experiment(
    config_path: &Path,
    out_dir: &Path,
    seed: Option<u64>,
    seeds: Option<usize>,
    svg: bool,
) -> Result<()> {
    let started = Instant::now();
    let config_text = read_to_string(config_path)?;
    let mut cfg = ExperimentConfig::from_toml_str(&config_text)
        .map_err(|e| CliError::parse(config_path, e))?;
    if let Some(seed) = seed {
        cfg.master_seed = seed;
    }
    if let Some(trials) = seeds {
        cfg.trials = trials;
    }
    cfg.validate()?;

    let threads = thread_cap()?;
    let report = sim::run_experiment(&cfg, threads)?;

    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let kind = cfg.experiment.to_string();
    let csv_path = out_dir.join(format!("{kind}.csv"));
    let json_path = out_dir.join(format!("{kind}_summary.json"));
    write_file(&csv_path, &sim::to_csv(&report))?;
    write_file(&json_path, &sim::to_json(&report))?;

    let mut manifest = RunManifest::new("experiment");
    manifest.record_input(config_path, &config_text);
    manifest.master_seed = Some(cfg.master_seed);
    manifest.record_output(&csv_path);
    manifest.record_output(&json_path);
    if svg {
        let svg_path = out_dir.join(format!("{kind}.svg"));
        write_file(&svg_path, &sim::to_svg(&report))?;
        manifest.record_output(&svg_path);
    }
    manifest.finish(started).write_beside(out_dir)?;
    Ok(())
}

fn cmd_eval(detections_path: &Path, gts_path: &Path, out: Option<&Path>) -> Result<()> {
    let started = Instant::now();
    let det_text = read_to_string(detections_path)?;
    let gts_text = read_to_string(gts_path)?;
    let dets =
        eval::parse_coco_detections(&det_text).map_err(|e| CliError::parse(detections_path, e))?;
    let gts = eval::parse_coco_gts(&gts_text).map_err(|e| CliError::parse(gts_path, e))?;

    let report = average_precision(
        &dets,
        &gts,
        &eval::coco_iou_thresholds(),
        &eval::DEFAULT_AR_KS,
    )?;

    #[derive(serde::Serialize)]
    struct EvalOutput<'a> {
        schema_version: u32,
        report: &'a ddq_core::MetricReport,
    }
    let mut json = serde_json::to_string_pretty(&EvalOutput {
        schema_version: FILE_SCHEMA_VERSION,
        report: &report,
    })
    .expect("report serializes");
    json.push('\n');

    let mut manifest = RunManifest::new("eval");
    manifest.record_input(detections_path, &det_text);
    manifest.record_input(gts_path, &gts_text);
    emit(out, &json, Some(manifest.finish(started)))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Nms {
            input,
            iou_thresh,
            max_keep,
            out,
        } => cmd_nms(&input, iou_thresh, max_keep, out.as_deref()),
        Command::Assign {
            queries,
            gts,
            k,
            weights,
            out,
        } => cmd_assign(&queries, &gts, k, weights, out.as_deref()),
        Command::Experiment {
            config,
            out,
            seed,
            seeds,
            svg,
        } => cmd_experiment(&config, &out, seed, seeds, svg),
        Command::Eval {
            detections,
            gts,
            out,
        } => cmd_eval(&detections, &gts, out.as_deref()),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_parser() {
        let w = parse_weights("2,5,2").unwrap();
        assert_eq!((w.w_cls, w.w_l1, w.w_giou), (2.0, 5.0, 2.0));
        let w = parse_weights("0, 1.5, 3").unwrap();
        assert_eq!((w.w_cls, w.w_l1, w.w_giou), (0.0, 1.5, 3.0));
        assert!(parse_weights("1,2").is_err());
        assert!(parse_weights("a,b,c").is_err());
    }
}
