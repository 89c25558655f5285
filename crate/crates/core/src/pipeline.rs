//! Frames to scene graphs: tracking, smoothing, relation evaluation, graph
//! construction and temporal windows.

use crate::data::{FrameRecord, Recording};
use crate::error::{Error, Result};
use crate::relations::{evaluate_relations, RelationConfig, RelationSet};
use crate::scene_graph::{build_frame_graph, temporal_concat, SceneGraph};
use crate::tracking::{SmoothingConfig, Tracker};
use crate::vocab::ActionLabel;

/// Per-frame scene graphs of one recording (unlabeled, zero global).
pub fn frame_graphs(
    frames: &[FrameRecord],
    fps: f64,
    relations: &RelationConfig,
    smoothing: &SmoothingConfig,
) -> Result<Vec<SceneGraph>> {
    relations.validate()?;
    smoothing.validate()?;
    if !(fps.is_finite() && fps > 0.0) {
        return Err(Error::Schema(format!("fps {fps} must be > 0")));
    }
    let dt = 1.0 / fps;
    let mut tracker = Tracker::new(smoothing.clone(), fps, relations.dyn_window);
    let mut out = Vec::with_capacity(frames.len());
    for rec in frames {
        let tracked = tracker.step(&rec.detections, rec.frame)?;
        let mut failure = None;
        let graph = build_frame_graph(&tracked, rec.frame, |a, b| {
            let (ha, hb) = tracker.common_history(a.instance_id, b.instance_id, rec.frame, relations.dyn_window);
            evaluate_relations(&ha, &hb, dt, relations).unwrap_or_else(|e| {
                failure.get_or_insert(e);
                RelationSet::EMPTY
            })
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
        out.push(graph);
    }
    Ok(out)
}

/// Temporal concatenation of the frame graphs ending at `t`, using however
/// many frames exist (at most `window`).
pub fn window_graph(graphs: &[SceneGraph], t: usize, window: usize) -> Result<SceneGraph> {
    if window == 0 {
        return Err(Error::InvalidArgument("window must be >= 1".into()));
    }
    if t >= graphs.len() {
        return Err(Error::InvalidArgument(format!("frame {t} beyond {} graphs", graphs.len())));
    }
    let start = (t + 1).saturating_sub(window);
    temporal_concat(&graphs[start..=t], window)
}

/// A recording reduced to frame graphs plus its per-hand labels.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphRecording {
    pub id: String,
    pub subject: u32,
    pub task: String,
    pub repetition: u32,
    pub graphs: Vec<SceneGraph>,
    pub right: Vec<ActionLabel>,
    pub left: Vec<ActionLabel>,
}

pub fn process_recording(
    rec: &Recording,
    relations: &RelationConfig,
    smoothing: &SmoothingConfig,
) -> Result<GraphRecording> {
    Ok(GraphRecording {
        id: rec.id().to_string(),
        subject: rec.subject(),
        task: rec.task().to_string(),
        repetition: rec.repetition(),
        graphs: frame_graphs(&rec.frames, rec.fps, relations, smoothing)?,
        right: rec.frames.iter().map(|f| f.right).collect(),
        left: rec.frames.iter().map(|f| f.left).collect(),
    })
}
