//! One function per subcommand. Every output lands under the run directory
//! and is written atomically; nothing time-dependent is written.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bimanual_core::data::{build_suite_with, load_frames, Recording, Suite};
use bimanual_core::evaluation::{
    argmax, confusion_csv, confusion_svg, default_colors, metrics_csv, pool_segments, score, timeline_svg,
    AblationMode, ConfusionMatrix, Distribution, MetricsReport,
};
use bimanual_core::experiment::{model_for, run_loso, LosoResult};
use bimanual_core::fsutil::write_atomic;
use bimanual_core::gn::gradcheck::{run_gradcheck, GradCheckConfig, GradCheckReport};
use bimanual_core::gn::io::{load_weights, read_manifest, save_weights};
use bimanual_core::gn::{GraphNetWeights, ModelConfig, Real};
use bimanual_core::pipeline::{process_recording, GraphRecording};
use bimanual_core::scene_graph::{write_graphs, GraphFileHeader, GRAPH_FORMAT, GRAPH_FORMAT_VERSION};
use bimanual_core::seeds::derive_seed;
use bimanual_core::training::{log_csv, predict_keys, split_recordings, train, Dataset, Precision, SampleKey, SplitSpec};
use bimanual_core::vocab::ActionLabel;
use bimanual_core::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;

pub const FRAMES_EXT: &str = "frames";
pub const GRAPHS_EXT: &str = "graphs";
pub const WEIGHTS_FILE: &str = "weights.bgnw";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

fn io_err(path: &Path, e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::NotFound {
        Error::MissingFile(path.to_path_buf())
    } else {
        Error::Io { path: path.to_path_buf(), source: e }
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

/// Create the run directory and record the merged configuration in it.
pub fn prepare_run(cfg: &RunConfig, sub: &str) -> Result<PathBuf> {
    cfg.validate()?;
    let run = cfg.run_dir();
    let dir = run.join(sub);
    create_dir(&dir)?;
    write_atomic(&run.join("config.toml"), cfg.canonical_toml().as_bytes())?;
    Ok(dir)
}

/// Files with the given extension directly inside `dir`, sorted by name.
fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let p = entry.map_err(|e| io_err(dir, e))?.path();
        if p.is_file() && p.extension().is_some_and(|x| x == ext) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Recordings from a frame file (possibly holding several recordings) or a
/// directory of frame files.
pub fn load_recordings(path: &Path) -> Result<Vec<Recording>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let files = if path.is_dir() { list_files(path, FRAMES_EXT)? } else { vec![path.to_path_buf()] };
    if files.is_empty() {
        return Err(Error::Schema(format!("no .{FRAMES_EXT} files in {}", path.display())));
    }
    let mut out: Vec<Recording> = Vec::new();
    for f in files {
        let reader = load_frames(&f)?;
        let fps = reader.header().map_or(0.0, |h| h.fps);
        let mut by_id: BTreeMap<String, Vec<_>> = BTreeMap::new();
        for rec in reader {
            let rec = rec?;
            by_id.entry(rec.recording.clone()).or_default().push(rec);
        }
        out.extend(by_id.into_values().map(|frames| Recording { fps, frames }));
    }
    Ok(out)
}

pub fn graph_recordings(recs: &[Recording], cfg: &RunConfig) -> Result<Vec<GraphRecording>> {
    recs.par_iter().map(|r| process_recording(r, &cfg.relations, &cfg.smoothing)).collect()
}

/// Generate the synthetic suite: one frame file per recording.
pub fn cmd_gen(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = prepare_run(cfg, "dataset")?;
    let mut tasks = Vec::new();
    for name in &cfg.data.suites {
        tasks.extend(Suite::shipped(name)?.scenarios);
    }
    let recs = build_suite_with(cfg.data.subjects, &tasks, cfg.data.repetitions, cfg.seed, &cfg.data.variation)?;
    for r in &recs {
        r.save(&dir.join(format!("{}.{FRAMES_EXT}", r.id())))?;
    }
    Ok(dir)
}

/// Tracking, smoothing, relations and graph construction: one scene-graph
/// file per recording.
pub fn cmd_relations(cfg: &RunConfig, frames: &Path) -> Result<PathBuf> {
    let recs = load_recordings(frames)?;
    let dir = prepare_run(cfg, "graphs")?;
    let graphs = graph_recordings(&recs, cfg)?;
    for (rec, g) in recs.iter().zip(&graphs) {
        let header = GraphFileHeader {
            format: GRAPH_FORMAT.into(),
            version: GRAPH_FORMAT_VERSION,
            recording: g.id.clone(),
            fps: rec.fps,
        };
        let mut buf = Vec::new();
        write_graphs(&mut buf, &header, &g.graphs).map_err(|e| io_err(&dir, e))?;
        write_atomic(&dir.join(format!("{}.{GRAPHS_EXT}", g.id)), &buf)?;
    }
    Ok(dir)
}

fn mode_dir(prefix: &str, mode: AblationMode, test_subject: Option<u32>) -> String {
    match test_subject {
        Some(s) => format!("{prefix}-{mode}-s{s}"),
        None => format!("{prefix}-{mode}"),
    }
}

/// Train on a dataset directory. With a test subject its recordings are
/// excluded; otherwise every subject is used. Validation is repetition 0.
pub fn cmd_train(cfg: &RunConfig, dataset: &Path, test_subject: Option<u32>) -> Result<PathBuf> {
    let recs = graph_recordings(&load_recordings(dataset)?, cfg)?;
    let mode = cfg.experiment.ablation;
    let dir = prepare_run(cfg, &mode_dir("train", mode, test_subject))?;
    let data = Dataset::new(&recs, cfg.training.window, mode)?;
    let (train_idx, val_idx): (Vec<usize>, Vec<usize>) = match test_subject {
        Some(s) => {
            let split = split_recordings(&recs, SplitSpec::new(s))?;
            (split.train, split.validation)
        }
        None => (0..recs.len()).partition(|&i| recs[i].repetition != 0),
    };
    let train_keys = data.keys(&train_idx, cfg.training.stride);
    let val_keys = data.keys(&val_idx, cfg.training.stride);
    let model = model_for(mode, cfg.model.base());
    let seed = derive_seed(cfg.seed, &[test_subject.map_or(u64::MAX, u64::from)]);
    let log = match cfg.training.precision {
        Precision::F64 => fit::<f64>(&data, &train_keys, &val_keys, model, cfg, seed, &dir)?,
        Precision::F32 => fit::<f32>(&data, &train_keys, &val_keys, model, cfg, seed, &dir)?,
    };
    write_atomic(&dir.join("train_log.csv"), log.as_bytes())?;
    Ok(dir)
}

fn fit<T: Real>(
    data: &Dataset,
    train_keys: &[SampleKey],
    val_keys: &[SampleKey],
    model: ModelConfig,
    cfg: &RunConfig,
    seed: u64,
    dir: &Path,
) -> Result<String> {
    let out = train::<T>(data, train_keys, val_keys, model, &cfg.training, seed)?;
    save_weights(&out.weights, &dir.join(WEIGHTS_FILE))?;
    Ok(log_csv(&out.log))
}

/// Weights of either precision, as stored.
pub enum AnyWeights {
    F64(GraphNetWeights<f64>),
    F32(GraphNetWeights<f32>),
}

impl AnyWeights {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
        let (manifest, _) = read_manifest(&bytes)?;
        match manifest.dtype.as_str() {
            "f64" => Ok(AnyWeights::F64(load_weights(path, None)?)),
            "f32" => Ok(AnyWeights::F32(load_weights(path, None)?)),
            other => Err(Error::ManifestMismatch(format!("unsupported dtype {other:?}"))),
        }
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            AnyWeights::F64(w) => w.config,
            AnyWeights::F32(w) => w.config,
        }
    }

    pub fn predict(&self, data: &Dataset, keys: &[SampleKey]) -> Result<Vec<Distribution>> {
        if self.config().node_in != data.node_width() {
            return Err(Error::ManifestMismatch(format!(
                "weights expect node width {} but ablation {} produces {}",
                self.config().node_in,
                data.mode,
                data.node_width()
            )));
        }
        match self {
            AnyWeights::F64(w) => predict_keys(w, data, keys),
            AnyWeights::F32(w) => predict_keys(w, data, keys),
        }
    }
}

/// One row of a predictions file.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub recording: String,
    pub frame: usize,
    pub hand: String,
    pub distribution: Distribution,
}

pub fn predictions_csv(rows: &[PredictionRow]) -> String {
    let mut s = String::from("recording,frame,hand,predicted");
    for a in ActionLabel::ALL.iter() {
        let _ = write!(s, ",{a}");
    }
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{},{},{},{}", r.recording, r.frame, r.hand, argmax(&r.distribution));
        for p in r.distribution {
            let _ = write!(s, ",{p}");
        }
        s.push('\n');
    }
    s
}

pub fn parse_predictions(text: &str) -> Result<Vec<PredictionRow>> {
    let mut lines = text.lines().enumerate();
    let expected = predictions_csv(&[]);
    match lines.next() {
        Some((_, h)) if h == expected.trim_end() => {}
        _ => return Err(Error::Malformed { line: 1, message: "not a predictions file header".into() }),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| Error::Malformed { line: i + 1, message: m };
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 + ActionLabel::COUNT {
            return Err(bad(format!("{} columns", cols.len())));
        }
        let frame = cols[1].parse().map_err(|_| bad(format!("bad frame {:?}", cols[1])))?;
        if cols[2] != "right" && cols[2] != "left" {
            return Err(bad(format!("hand {:?} is not right or left", cols[2])));
        }
        let mut distribution = [0.0; ActionLabel::COUNT];
        for (d, c) in distribution.iter_mut().zip(&cols[4..]) {
            *d = c.parse().map_err(|_| bad(format!("bad probability {c:?}")))?;
        }
        out.push(PredictionRow { recording: cols[0].into(), frame, hand: cols[2].into(), distribution });
    }
    Ok(out)
}

fn keys_to_rows(data: &Dataset, keys: &[SampleKey], dists: Vec<Distribution>) -> Vec<PredictionRow> {
    keys.iter()
        .zip(dists)
        .map(|(k, d)| PredictionRow {
            recording: data.recordings[k.recording].id.clone(),
            frame: k.frame,
            hand: if k.mirrored { "left" } else { "right" }.into(),
            distribution: d,
        })
        .collect()
}

/// Per-frame distributions for both hands plus a segment timeline per recording.
pub fn cmd_predict(cfg: &RunConfig, weights: &Path, frames: &Path) -> Result<PathBuf> {
    let w = AnyWeights::load(weights)?;
    let recs = graph_recordings(&load_recordings(frames)?, cfg)?;
    let dir = prepare_run(cfg, "predict")?;
    let data = Dataset::new(&recs, cfg.training.window, cfg.experiment.ablation)?;
    let all: Vec<usize> = (0..recs.len()).collect();
    let keys = data.keys(&all, 1);
    let rows = keys_to_rows(&data, &keys, w.predict(&data, &keys)?);
    write_atomic(&dir.join(PREDICTIONS_FILE), predictions_csv(&rows).as_bytes())?;
    let colors = default_colors();
    for (i, rec) in recs.iter().enumerate() {
        let hand = |mirrored: bool| -> Vec<ActionLabel> {
            rows.iter()
                .zip(&keys)
                .filter(|(_, k)| k.recording == i && k.mirrored == mirrored)
                .map(|(r, _)| argmax(&r.distribution))
                .collect()
        };
        let lines = [
            ("right truth", pool_segments(&rec.right)),
            ("right predicted", pool_segments(&hand(false))),
            ("left truth", pool_segments(&rec.left)),
            ("left predicted", pool_segments(&hand(true))),
        ];
        let svg = timeline_svg(&lines, rec.graphs.len(), &colors);
        write_atomic(&dir.join(format!("timeline-{}.svg", rec.id)), svg.as_bytes())?;
    }
    Ok(dir)
}

/// What `cmd_eval` scores.
pub enum EvalSource<'a> {
    Weights(&'a Path),
    Predictions(&'a Path),
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub samples: u64,
    pub top_k: usize,
    pub top1_accuracy: f64,
    pub top1_macro_f1: f64,
    pub topk_accuracy: f64,
    pub topk_macro_f1: f64,
}

fn write_scores(dir: &Path, dists: &[Distribution], truth: &[ActionLabel], k: usize, title: &str) -> Result<EvalSummary> {
    let (top1, cm1) = score(dists, truth, 1)?;
    let (topk, cmk) = score(dists, truth, k)?;
    write_report(dir, &top1, &cm1, &topk, &cmk, title)?;
    let summary = EvalSummary {
        samples: top1.samples,
        top_k: k,
        top1_accuracy: top1.accuracy,
        top1_macro_f1: top1.macro_avg.f1,
        topk_accuracy: topk.accuracy,
        topk_macro_f1: topk.macro_avg.f1,
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_atomic(&dir.join("summary.json"), (json + "\n").as_bytes())?;
    Ok(summary)
}

fn write_report(
    dir: &Path,
    top1: &MetricsReport,
    cm1: &ConfusionMatrix,
    topk: &MetricsReport,
    cmk: &ConfusionMatrix,
    title: &str,
) -> Result<()> {
    let k = topk.k;
    write_atomic(&dir.join("metrics.csv"), metrics_csv(top1, topk).as_bytes())?;
    write_atomic(&dir.join("confusion_top1.csv"), confusion_csv(cm1).as_bytes())?;
    write_atomic(&dir.join(format!("confusion_top{k}.csv")), confusion_csv(cmk).as_bytes())?;
    write_atomic(&dir.join("confusion_top1.svg"), confusion_svg(cm1, &format!("{title} top-1")).as_bytes())?;
    write_atomic(&dir.join(format!("confusion_top{k}.svg")), confusion_svg(cmk, &format!("{title} top-{k}")).as_bytes())
}

/// Score weights (run on the dataset) or a predictions file against the
/// dataset labels. A test subject restricts scoring to its recordings.
pub fn cmd_eval(cfg: &RunConfig, source: EvalSource, dataset: &Path, test_subject: Option<u32>) -> Result<(PathBuf, EvalSummary)> {
    let recs = load_recordings(dataset)?;
    let recs: Vec<Recording> = recs.into_iter().filter(|r| test_subject.is_none_or(|s| r.subject() == s)).collect();
    if recs.is_empty() {
        return Err(Error::InvalidArgument(format!("no recordings of subject {test_subject:?}")));
    }
    let mode = cfg.experiment.ablation;
    let k = cfg.experiment.top_k;
    let (dists, truth, dir) = match source {
        EvalSource::Weights(path) => {
            let w = AnyWeights::load(path)?;
            let graphs = graph_recordings(&recs, cfg)?;
            let dir = prepare_run(cfg, &mode_dir("eval", mode, test_subject))?;
            let data = Dataset::new(&graphs, cfg.training.window, mode)?;
            let keys = data.keys(&(0..graphs.len()).collect::<Vec<_>>(), 1);
            let truth: Vec<ActionLabel> = keys.iter().map(|&k| data.target(k)).collect();
            (w.predict(&data, &keys)?, truth, dir)
        }
        EvalSource::Predictions(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            let rows = parse_predictions(&text)?;
            let mut labels: BTreeMap<(&str, usize, &str), ActionLabel> = BTreeMap::new();
            for r in &recs {
                for f in &r.frames {
                    labels.insert((r.id(), f.frame, "right"), f.right);
                    labels.insert((r.id(), f.frame, "left"), f.left);
                }
            }
            let mut dists = Vec::new();
            let mut truth = Vec::new();
            for row in &rows {
                if let Some(&t) = labels.get(&(row.recording.as_str(), row.frame, row.hand.as_str())) {
                    dists.push(row.distribution);
                    truth.push(t);
                } else if test_subject.is_none() {
                    return Err(Error::Schema(format!(
                        "prediction for {} frame {} has no labeled frame in the dataset",
                        row.recording, row.frame
                    )));
                }
            }
            let dir = prepare_run(cfg, &mode_dir("eval-predictions", mode, test_subject))?;
            (dists, truth, dir)
        }
    };
    let summary = write_scores(&dir, &dists, &truth, k, &format!("{mode}"))?;
    Ok((dir, summary))
}

#[derive(Debug, Clone, Serialize)]
struct LosoSummary {
    mode: AblationMode,
    samples: u64,
    top_k: usize,
    top1_macro_f1: f64,
    topk_macro_f1: f64,
    folds: Vec<FoldSummary>,
}

#[derive(Debug, Clone, Serialize)]
struct FoldSummary {
    test_subject: u32,
    best_epoch: usize,
    best_val_macro_f1: f64,
    top1_macro_f1: f64,
    topk_macro_f1: f64,
}

/// Leave-one-subject-out training and testing for each requested ablation
/// mode, with predictions pooled across folds.
pub fn cmd_loso(cfg: &RunConfig, dataset: &Path, modes: &[AblationMode]) -> Result<Vec<(PathBuf, LosoResult)>> {
    let recs = graph_recordings(&load_recordings(dataset)?, cfg)?;
    let k = cfg.experiment.top_k;
    let mut out = Vec::new();
    for &mode in modes {
        let dir = prepare_run(cfg, &format!("loso-{mode}"))?;
        let result = run_loso(&recs, mode, cfg.model.base(), &cfg.training, cfg.seed)?;
        let dists: Vec<Distribution> = result.samples.iter().map(|s| s.distribution).collect();
        let truth: Vec<ActionLabel> = result.samples.iter().map(|s| s.truth).collect();
        let (topk, cmk) = score(&dists, &truth, k)?;
        write_report(&dir, &result.top1, &result.confusion_top1, &topk, &cmk, &format!("{mode}"))?;
        let rows: Vec<PredictionRow> = result
            .samples
            .iter()
            .map(|s| PredictionRow {
                recording: s.recording.clone(),
                frame: s.frame,
                hand: s.hand.into(),
                distribution: s.distribution,
            })
            .collect();
        write_atomic(&dir.join(PREDICTIONS_FILE), predictions_csv(&rows).as_bytes())?;
        let mut folds = Vec::new();
        for f in &result.folds {
            write_atomic(&dir.join(format!("train_log-s{}.csv", f.test_subject)), log_csv(&f.log).as_bytes())?;
            let fd: Vec<usize> = (0..result.samples.len())
                .filter(|&i| result.samples[i].recording.starts_with(&format!("s{}-", f.test_subject)))
                .collect();
            let fold_k = if fd.is_empty() {
                0.0
            } else {
                let d: Vec<Distribution> = fd.iter().map(|&i| dists[i]).collect();
                let t: Vec<ActionLabel> = fd.iter().map(|&i| truth[i]).collect();
                score(&d, &t, k)?.0.macro_avg.f1
            };
            folds.push(FoldSummary {
                test_subject: f.test_subject,
                best_epoch: f.best_epoch,
                best_val_macro_f1: f.best_val_macro_f1,
                top1_macro_f1: f.top1.macro_avg.f1,
                topk_macro_f1: fold_k,
            });
        }
        let summary = LosoSummary {
            mode,
            samples: result.top1.samples,
            top_k: k,
            top1_macro_f1: result.top1.macro_avg.f1,
            topk_macro_f1: topk.macro_avg.f1,
            folds,
        };
        let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
        write_atomic(&dir.join("summary.json"), (json + "\n").as_bytes())?;
        out.push((dir, result));
    }
    Ok(out)
}

/// Finite-difference check of the analytic gradients on random graphs.
pub fn cmd_gradcheck(cfg: &RunConfig, graphs: usize) -> Result<(PathBuf, GradCheckReport)> {
    let dir = prepare_run(cfg, "gradcheck")?;
    let gc = GradCheckConfig { graphs, ..GradCheckConfig::default() };
    let report = run_gradcheck(&gc, cfg.seed)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_atomic(&dir.join("report.json"), (json + "\n").as_bytes())?;
    Ok((dir, report))
}
