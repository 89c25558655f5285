//! Metrics, confusion matrices, ablation transforms and segment timelines.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene_graph::{mask_relations, single, SceneGraph};
use crate::vocab::{ActionLabel, RelationKind};

const N: usize = ActionLabel::COUNT;

/// Probability distribution over the actions.
pub type Distribution = [f64; N];

/// Indices of the `k` most probable classes: probability descending, then
/// index ascending.
pub fn top_k(p: &Distribution, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..N).collect();
    idx.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

pub fn argmax(p: &Distribution) -> ActionLabel {
    ActionLabel::from_index(top_k(p, 1)[0]).expect("index in range")
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N]; N],
}

impl ConfusionMatrix {
    pub fn add(&mut self, truth: ActionLabel, predicted: ActionLabel) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Rows divided by their sums; rows of absent classes stay zero.
    pub fn normalized(&self) -> [[f64; N]; N] {
        let mut out = [[0.0; N]; N];
        for (r, row) in self.counts.iter().enumerate() {
            let s = self.support(r);
            if s > 0 {
                for (c, &v) in row.iter().enumerate() {
                    out[r][c] = v as f64 / s as f64;
                }
            }
        }
        out
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().flatten().zip(other.counts.iter().flatten()) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl Prf {
    fn from_counts(tp: f64, fp: f64, fn_: f64) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Prf { precision, recall, f1: ratio(2.0 * precision * recall, precision + recall) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: ActionLabel,
    pub prf: Prf,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub k: usize,
    pub per_class: Vec<ClassMetrics>,
    pub micro: Prf,
    /// Unweighted mean over classes present in the truth.
    pub macro_avg: Prf,
    pub weighted: Prf,
    pub accuracy: f64,
    pub samples: u64,
}

impl MetricsReport {
    pub fn from_confusion(cm: &ConfusionMatrix, k: usize) -> Self {
        let mut per_class = Vec::with_capacity(N);
        let (mut tp_all, mut fp_all, mut fn_all) = (0.0, 0.0, 0.0);
        for c in 0..N {
            let tp = cm.counts[c][c] as f64;
            let fp = (0..N).filter(|&r| r != c).map(|r| cm.counts[r][c] as f64).sum::<f64>();
            let fn_ = (0..N).filter(|&p| p != c).map(|p| cm.counts[c][p] as f64).sum::<f64>();
            tp_all += tp;
            fp_all += fp;
            fn_all += fn_;
            per_class.push(ClassMetrics {
                class: ActionLabel::from_index(c).expect("index in range"),
                prf: Prf::from_counts(tp, fp, fn_),
                support: cm.support(c),
            });
        }
        let present: Vec<&ClassMetrics> = per_class.iter().filter(|m| m.support > 0).collect();
        let total: u64 = present.iter().map(|m| m.support).sum();
        let mean = |f: &dyn Fn(&Prf) -> f64| ratio(present.iter().map(|m| f(&m.prf)).sum(), present.len() as f64);
        let wmean = |f: &dyn Fn(&Prf) -> f64| {
            ratio(present.iter().map(|m| f(&m.prf) * m.support as f64).sum(), total as f64)
        };
        MetricsReport {
            k,
            micro: Prf::from_counts(tp_all, fp_all, fn_all),
            macro_avg: Prf { precision: mean(&|p| p.precision), recall: mean(&|p| p.recall), f1: mean(&|p| p.f1) },
            weighted: Prf {
                precision: wmean(&|p| p.precision),
                recall: wmean(&|p| p.recall),
                f1: wmean(&|p| p.f1),
            },
            accuracy: ratio(tp_all, total as f64),
            samples: total,
            per_class,
        }
    }
}

/// Score distributions against labels. For `k > 1` a sample is correct when
/// its truth is among the top `k`; correct samples are credited to the
/// diagonal and wrong ones to `(truth, argmax)`.
pub fn score(predictions: &[Distribution], truth: &[ActionLabel], k: usize) -> Result<(MetricsReport, ConfusionMatrix)> {
    if predictions.len() != truth.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", predictions.len(), truth.len())));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (p, &t) in predictions.iter().zip(truth) {
        let top = top_k(p, k);
        let predicted = if top.contains(&t.index()) { t } else { argmax(p) };
        cm.add(t, predicted);
    }
    Ok((MetricsReport::from_confusion(&cm, k), cm))
}

/// Score hard labels (top-1).
pub fn score_labels(predicted: &[ActionLabel], truth: &[ActionLabel]) -> Result<(MetricsReport, ConfusionMatrix)> {
    let dists: Vec<Distribution> = predicted
        .iter()
        .map(|p| {
            let mut d = [0.0; N];
            d[p.index()] = 1.0;
            d
        })
        .collect();
    score(&dists, truth, 1)
}

/// Feature ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    Full,
    ContactOnly,
    Centroids,
    NoTemporal,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] =
        [AblationMode::Full, AblationMode::NoTemporal, AblationMode::ContactOnly, AblationMode::Centroids];

    pub fn token(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::ContactOnly => "contact_only",
            AblationMode::Centroids => "centroids",
            AblationMode::NoTemporal => "no_temporal",
        }
    }

    /// Extra node features the mode appends.
    pub fn extra_node_features(self) -> usize {
        if self == AblationMode::Centroids {
            3
        } else {
            0
        }
    }
}

impl std::str::FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.token() == s)
            .ok_or_else(|| Error::UnknownToken { kind: "ablation mode", token: s.to_string(), line: None })
    }
}

impl std::fmt::Display for AblationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

/// Centroid coordinates are appended in meters.
pub const CENTROID_SCALE: f64 = 1e-3;

/// Apply an ablation to a frame graph. The window restriction of
/// `no_temporal` is applied where windows are built ([`AblationMode::window`]).
pub fn ablate_frame_graph(g: &SceneGraph, mode: AblationMode) -> SceneGraph {
    match mode {
        AblationMode::Full | AblationMode::NoTemporal => g.clone(),
        AblationMode::ContactOnly => mask_relations(g, single(RelationKind::Contact)),
        AblationMode::Centroids => {
            let mut out = g.clone();
            out.edges.retain(|e| e.attr.is_temporal());
            for n in &mut out.nodes {
                n.extra.extend(n.position.map(|c| c * CENTROID_SCALE));
            }
            out
        }
    }
}

impl AblationMode {
    /// Temporal window used under this mode.
    pub fn window(self, window: usize) -> usize {
        if self == AblationMode::NoTemporal {
            1
        } else {
            window
        }
    }
}

/// Apply an ablation to an already concatenated graph: `no_temporal` keeps
/// only the newest frame.
pub fn ablation_transform(g: &SceneGraph, mode: AblationMode) -> SceneGraph {
    let g = if mode == AblationMode::NoTemporal {
        newest_frame(g)
    } else {
        g.clone()
    };
    ablate_frame_graph(&g, mode)
}

fn newest_frame(g: &SceneGraph) -> SceneGraph {
    let Some(last) = g.nodes.iter().map(|n| n.frame).max() else {
        return g.clone();
    };
    let mut map = vec![usize::MAX; g.nodes.len()];
    let mut out = SceneGraph { u: g.u, ..Default::default() };
    for (i, n) in g.nodes.iter().enumerate() {
        if n.frame == last {
            map[i] = out.nodes.len();
            out.nodes.push(n.clone());
        }
    }
    out.edges = g
        .edges
        .iter()
        .filter(|e| map[e.sender] != usize::MAX && map[e.receiver] != usize::MAX)
        .map(|e| crate::scene_graph::Edge { attr: e.attr, sender: map[e.sender], receiver: map[e.receiver] })
        .collect();
    out
}

/// A maximal run of one label, inclusive frame bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub action: ActionLabel,
    pub start: usize,
    pub end: usize,
}

pub fn pool_segments(labels: &[ActionLabel]) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    for (i, &a) in labels.iter().enumerate() {
        match out.last_mut() {
            Some(s) if s.action == a => s.end = i,
            _ => out.push(Segment { action: a, start: i, end: i }),
        }
    }
    out
}

pub fn expand_segments(segments: &[Segment]) -> Vec<ActionLabel> {
    segments.iter().flat_map(|s| std::iter::repeat_n(s.action, s.end + 1 - s.start)).collect()
}

fn f(v: f64) -> String {
    format!("{v:.6}")
}

/// Per-class and averaged precision/recall/F1 for top-1 and top-k side by side.
pub fn metrics_csv(top1: &MetricsReport, topk: &MetricsReport) -> String {
    let mut s = format!(
        "class,top1_precision,top1_recall,top1_f1,top{k}_precision,top{k}_recall,top{k}_f1,support\n",
        k = topk.k
    );
    for (a, b) in top1.per_class.iter().zip(&topk.per_class) {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            a.class,
            f(a.prf.precision),
            f(a.prf.recall),
            f(a.prf.f1),
            f(b.prf.precision),
            f(b.prf.recall),
            f(b.prf.f1),
            a.support
        );
    }
    for (name, a, b) in [
        ("micro_avg", top1.micro, topk.micro),
        ("macro_avg", top1.macro_avg, topk.macro_avg),
        ("weighted_avg", top1.weighted, topk.weighted),
    ] {
        let _ = writeln!(
            s,
            "{name},{},{},{},{},{},{},{}",
            f(a.precision),
            f(a.recall),
            f(a.f1),
            f(b.precision),
            f(b.recall),
            f(b.f1),
            top1.samples
        );
    }
    s
}

pub fn confusion_csv(cm: &ConfusionMatrix) -> String {
    let mut s = String::from("truth\\predicted");
    for a in ActionLabel::ALL.iter() {
        let _ = write!(s, ",{a}");
    }
    s.push('\n');
    for (r, row) in cm.counts.iter().enumerate() {
        s += ActionLabel::ALL[r].token();
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

/// Normalized confusion matrix as a grayscale heatmap.
pub fn confusion_svg(cm: &ConfusionMatrix, title: &str) -> String {
    let cell = 28.0;
    let margin = 90.0;
    let size = margin + cell * N as f64 + 10.0;
    let norm = cm.normalized();
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" font-family=\"sans-serif\" font-size=\"10\">\n"
    );
    let _ = writeln!(s, "<text x=\"{margin}\" y=\"14\" font-size=\"12\">{}</text>", escape(title));
    for (i, a) in ActionLabel::ALL.iter().enumerate() {
        let y = margin + cell * i as f64 + cell / 2.0 + 3.0;
        let _ = writeln!(s, "<text x=\"{}\" y=\"{y}\" text-anchor=\"end\">{a}</text>", margin - 4.0);
        let x = margin + cell * i as f64 + cell / 2.0;
        let _ = writeln!(
            s,
            "<text x=\"{x}\" y=\"{}\" transform=\"rotate(-60 {x} {})\">{a}</text>",
            margin - 4.0,
            margin - 4.0
        );
    }
    for (r, row) in norm.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let shade = (255.0 * (1.0 - v)).round() as u8;
            let x = margin + cell * c as f64;
            let y = margin + cell * r as f64;
            let _ = writeln!(
                s,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({shade},{shade},{shade})\" stroke=\"#999\" stroke-width=\"0.5\"/>"
            );
            if v > 0.0 {
                let color = if v > 0.5 { "#fff" } else { "#000" };
                let _ = writeln!(
                    s,
                    "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"{color}\" font-size=\"8\">{:.2}</text>",
                    x + cell / 2.0,
                    y + cell / 2.0 + 3.0,
                    v
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Timeline colors per action (RGB).
pub fn default_colors() -> [[u8; 3]; N] {
    let mut c = [[128, 128, 128]; N];
    for (a, rgb) in [
        (ActionLabel::Idle, [204, 204, 204]),
        (ActionLabel::Approach, [255, 123, 116]),
        (ActionLabel::Retreat, [255, 12, 0]),
        (ActionLabel::Lift, [153, 255, 149]),
        (ActionLabel::Place, [0, 255, 9]),
        (ActionLabel::Hold, [246, 235, 135]),
        (ActionLabel::Stir, [0, 88, 255]),
        (ActionLabel::Pour, [151, 0, 255]),
        (ActionLabel::Drink, [255, 134, 0]),
        (ActionLabel::Cut, [0, 170, 170]),
        (ActionLabel::Wipe, [120, 200, 255]),
        (ActionLabel::Hammer, [140, 80, 40]),
        (ActionLabel::Saw, [200, 160, 100]),
        (ActionLabel::Screw, [90, 90, 90]),
    ] {
        c[a.index()] = rgb;
    }
    c
}

/// One row of segments per labeled track (e.g. truth and prediction per hand).
pub fn timeline_svg(rows: &[(&str, Vec<Segment>)], frames: usize, colors: &[[u8; 3]; N]) -> String {
    let label_w = 110.0;
    let width = 900.0;
    let row_h = 22.0;
    let legend_h = 20.0;
    let height = row_h * rows.len() as f64 + legend_h + 20.0;
    let scale = (width - label_w - 10.0) / frames.max(1) as f64;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"10\">\n"
    );
    for (i, (name, segs)) in rows.iter().enumerate() {
        let y = 5.0 + row_h * i as f64;
        let _ = writeln!(s, "<text x=\"4\" y=\"{}\">{}</text>", y + row_h / 2.0 + 3.0, escape(name));
        for seg in segs {
            let [r, g, b] = colors[seg.action.index()];
            let _ = writeln!(
                s,
                "<rect x=\"{:.2}\" y=\"{y}\" width=\"{:.2}\" height=\"{}\" fill=\"rgb({r},{g},{b})\"><title>{} {}-{}</title></rect>",
                label_w + seg.start as f64 * scale,
                (seg.end + 1 - seg.start) as f64 * scale,
                row_h - 4.0,
                seg.action,
                seg.start,
                seg.end
            );
        }
    }
    let mut used: Vec<ActionLabel> = rows.iter().flat_map(|(_, s)| s.iter().map(|x| x.action)).collect();
    used.sort();
    used.dedup();
    let y = 10.0 + row_h * rows.len() as f64;
    for (i, a) in used.iter().enumerate() {
        let x = label_w + 70.0 * i as f64;
        let [r, g, b] = colors[a.index()];
        let _ = writeln!(s, "<rect x=\"{x}\" y=\"{y}\" width=\"10\" height=\"10\" fill=\"rgb({r},{g},{b})\"/>");
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">{a}</text>", x + 13.0, y + 9.0);
    }
    s.push_str("</svg>\n");
    s
}
