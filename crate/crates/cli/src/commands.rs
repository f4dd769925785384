use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use vessel_track::association;
use vessel_track::ingest::{
    load_config, parse_ground_truth, parse_json_detections, parse_mot_detections_sized, write_ground_truth,
    write_mot_detections, FrameSize, RunConfig,
};
use vessel_track::metrics::{evaluate, EvalReport};
use vessel_track::pipeline::{
    parse_predictions, parse_report_rows, parse_tracks, predict_tracks, track_boxes, track_histories,
    write_predictions, write_report_rows, write_tracks, ReportRow,
};
use vessel_track::scenario::{synthesize, truth_to_ground_truth, Scenario};
use walkdir::WalkDir;

use crate::manifest::ManifestBuilder;

/// Marks an error as a usage or configuration problem (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(context: String, err: impl fmt::Display) -> anyhow::Error {
    UsageError(format!("{context}: {err}")).into()
}

/// Prints progress unless `VTRACK_LOG=quiet`.
pub fn info(msg: impl fmt::Display) {
    if std::env::var("VTRACK_LOG").map_or(true, |v| v != "quiet") {
        eprintln!("{msg}");
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn read_config(manifest: &mut ManifestBuilder, path: Option<&Path>) -> Result<RunConfig> {
    let cfg = match path {
        Some(p) => {
            let text = manifest.read_input(p)?;
            load_config(&text).map_err(|e| usage(format!("config {}", p.display()), e))?
        }
        None => RunConfig::default(),
    };
    manifest.config(&cfg);
    Ok(cfg)
}

pub fn synth(scenario_path: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut manifest = ManifestBuilder::start("synth");
    let text = manifest.read_input(scenario_path)?;
    let mut scenario: Scenario =
        serde_json::from_str(&text).map_err(|e| usage(format!("scenario {}", scenario_path.display()), e))?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    scenario
        .corruption
        .validate()
        .map_err(|e| usage(format!("scenario {}", scenario_path.display()), e))?;
    let (truth, stream) =
        synthesize(&scenario).map_err(|e| usage(format!("scenario {}", scenario_path.display()), e))?;

    create_dir(out)?;
    write_file(out, "gt.txt", &write_ground_truth(&truth_to_ground_truth(&truth)))?;
    write_file(out, "det.txt", &write_mot_detections(&stream))?;
    write_file(out, "scenario.json", &(serde_json::to_string_pretty(&scenario)? + "\n"))?;
    manifest.config(&scenario);
    manifest.seed(scenario.seed);
    manifest.write(out, &["gt.txt", "det.txt", "scenario.json"])?;
    info(format_args!(
        "synth: {} identities, {} detections over {} frames",
        truth.len(),
        stream.detection_count(),
        scenario.frames
    ));
    Ok(())
}

pub fn track(det: &Path, config: Option<&Path>, out: &Path, frame_size: FrameSize) -> Result<()> {
    let mut manifest = ManifestBuilder::start("track");
    let cfg = read_config(&mut manifest, config)?;
    let text = manifest.read_input(det)?;
    let stream = if det.extension().is_some_and(|e| e == "json") {
        parse_json_detections(&text)
    } else {
        parse_mot_detections_sized(&text, frame_size)
    }
    .with_context(|| format!("detections {}", det.display()))?;
    let tracks = association::run(&stream, &cfg)?;

    create_dir(out)?;
    write_file(out, "tracks.csv", &write_tracks(&tracks))?;
    manifest.write(out, &["tracks.csv"])?;
    info(format_args!("track: {} tracks over {} frames", tracks.len(), stream.len()));
    Ok(())
}

pub fn predict(tracks: &Path, config: Option<&Path>, horizon: Option<u32>, out: &Path) -> Result<()> {
    let mut manifest = ManifestBuilder::start("predict");
    let mut cfg = read_config(&mut manifest, config)?;
    if let Some(h) = horizon {
        cfg.horizon = h;
        cfg.validate().map_err(|e| usage("--horizon".to_string(), e))?;
        manifest.config(&cfg);
    }
    let text = manifest.read_input(tracks)?;
    let rows = parse_tracks(&text).with_context(|| format!("tracks {}", tracks.display()))?;
    let histories = track_histories(&rows).with_context(|| format!("tracks {}", tracks.display()))?;
    let run = predict_tracks(&histories, &cfg, cfg.horizon as usize)?;

    create_dir(out)?;
    write_file(out, "predictions.csv", &write_predictions(&run.records))?;
    manifest.write(out, &["predictions.csv"])?;
    if run.skipped_tracks > 0 {
        info(format_args!("predict: warning: skipped {} tracks with fewer than 2 points", run.skipped_tracks));
    }
    info(format_args!("predict: {} predicted points", run.records.len()));
    Ok(())
}

/// Labels attached to an evaluation's report row.
#[derive(Debug, Clone, Default)]
pub struct EvalLabels {
    pub video: Option<String>,
    pub tracker: Option<String>,
    pub config: Option<String>,
    pub category: Option<String>,
}

#[derive(Serialize)]
struct LabeledReport<'a> {
    video: &'a str,
    tracker: &'a str,
    config: &'a str,
    category: &'a str,
    #[serde(flatten)]
    report: &'a EvalReport,
}

fn parent_name(path: &Path) -> Option<String> {
    path.parent()?.file_name().map(|n| n.to_string_lossy().into_owned())
}

/// Category recorded in a `scenario.json` beside the ground truth, if any.
fn sibling_category(manifest: &mut ManifestBuilder, gt: &Path) -> Result<Option<String>> {
    let path = gt.with_file_name("scenario.json");
    if !path.is_file() {
        return Ok(None);
    }
    let text = manifest.read_input(&path)?;
    let scenario: Scenario = serde_json::from_str(&text).with_context(|| format!("scenario {}", path.display()))?;
    Ok(Some(scenario.category))
}

pub fn eval(pred: &Path, gt: &Path, tracks: Option<&Path>, out: &Path, labels: EvalLabels) -> Result<()> {
    let mut manifest = ManifestBuilder::start("eval");
    let preds = parse_predictions(&manifest.read_input(pred)?).with_context(|| format!("predictions {}", pred.display()))?;
    let truth = parse_ground_truth(&manifest.read_input(gt)?).with_context(|| format!("ground truth {}", gt.display()))?;
    let boxes = match tracks {
        Some(p) => {
            let rows = parse_tracks(&manifest.read_input(p)?).with_context(|| format!("tracks {}", p.display()))?;
            Some(track_boxes(&rows)?)
        }
        None => None,
    };
    let report = evaluate(&preds, &truth, boxes.as_ref());

    let category = match labels.category {
        Some(c) => c,
        None => sibling_category(&mut manifest, gt)?.unwrap_or_else(|| "uncategorized".to_string()),
    };
    let video = labels.video.or_else(|| parent_name(gt)).unwrap_or_else(|| "unknown".to_string());
    let tracker = labels.tracker.unwrap_or_else(|| "vtrack".to_string());
    let config = labels.config.unwrap_or_else(|| "default".to_string());
    let labeled = LabeledReport {
        video: &video,
        tracker: &tracker,
        config: &config,
        category: &category,
        report: &report,
    };
    let row = ReportRow::from_report(&report, &video, &tracker, &config, &category);

    create_dir(out)?;
    write_file(out, "report.json", &(serde_json::to_string_pretty(&labeled)? + "\n"))?;
    write_file(out, "report.csv", &write_report_rows(&[row]))?;
    manifest.write(out, &["report.json", "report.csv"])?;
    let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.3}"));
    info(format_args!(
        "eval: ade {} fde {} over {} matched pairs, {} unmatched",
        fmt(report.ade),
        fmt(report.fde),
        report.matched_pairs,
        report.unmatched_predictions
    ));
    Ok(())
}

/// Every `report.csv` under the given directories, in path order.
fn find_reports(runs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    for dir in runs {
        if !dir.is_dir() {
            anyhow::bail!("run directory {} does not exist", dir.display());
        }
        for entry in WalkDir::new(dir).sort_by_file_name() {
            let entry = entry.with_context(|| format!("walking {}", dir.display()))?;
            if entry.file_type().is_file() && entry.file_name() == "report.csv" {
                found.push(entry.into_path());
            }
        }
    }
    Ok(found)
}

pub fn report(runs: &[PathBuf], out: &Path) -> Result<()> {
    let mut manifest = ManifestBuilder::start("report");
    let mut rows = Vec::new();
    for path in find_reports(runs)? {
        let text = manifest.read_input(&path)?;
        rows.extend(parse_report_rows(&text).with_context(|| format!("report {}", path.display()))?);
    }
    rows.sort_by(|a, b| (&a.category, &a.config).cmp(&(&b.category, &b.config)));

    let dir = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    create_dir(&dir)?;
    fs::write(out, write_report_rows(&rows)).with_context(|| format!("writing {}", out.display()))?;
    let name = out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    manifest.write(&dir, &[&name])?;
    info(format_args!("report: {} rows", rows.len()));
    Ok(())
}
