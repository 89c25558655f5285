//! Sample construction, subject splits, rebalanced batching, Adam and the
//! early-stopped training loop.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{ablate_frame_graph, argmax, score_labels, AblationMode, Distribution};
use crate::gn::{accumulate_gradients, forward, softmax, GraphNetWeights, ModelConfig, Real};
use crate::pipeline::{window_graph, GraphRecording};
use crate::scene_graph::{mirror, SceneGraph};
use crate::seeds::derive_seed;
use crate::vocab::ActionLabel;

/// Longest supported temporal window.
pub const MAX_WINDOW: usize = 10;

/// One training example seen from one hand's perspective.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub graph: SceneGraph,
    pub target: ActionLabel,
    pub subject: u32,
    pub task: String,
    pub repetition: u32,
    pub frame: usize,
    /// Left-hand samples are mirrored graphs.
    pub mirrored: bool,
}

fn check_aligned(rec: &GraphRecording) -> Result<()> {
    if rec.right.len() != rec.graphs.len() || rec.left.len() != rec.graphs.len() {
        return Err(Error::Schema(format!(
            "recording {}: {} graphs but {} right and {} left labels",
            rec.id,
            rec.graphs.len(),
            rec.right.len(),
            rec.left.len()
        )));
    }
    Ok(())
}

fn check_window(window: usize) -> Result<()> {
    if !(1..=MAX_WINDOW).contains(&window) {
        return Err(Error::Config(format!("window {window} outside 1..={MAX_WINDOW}")));
    }
    Ok(())
}

/// Two samples per frame: the right hand on the graph as is, the left hand on
/// the mirrored graph.
pub fn make_samples(rec: &GraphRecording, window: usize) -> Result<Vec<Sample>> {
    check_window(window)?;
    check_aligned(rec)?;
    let mut out = Vec::with_capacity(2 * rec.graphs.len());
    for t in 0..rec.graphs.len() {
        let g = window_graph(&rec.graphs, t, window)?;
        for mirrored in [false, true] {
            out.push(Sample {
                graph: if mirrored { mirror(&g) } else { g.clone() },
                target: if mirrored { rec.left[t] } else { rec.right[t] },
                subject: rec.subject,
                task: rec.task.clone(),
                repetition: rec.repetition,
                frame: t,
                mirrored,
            });
        }
    }
    Ok(out)
}

/// Address of a sample inside a [`Dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SampleKey {
    pub recording: usize,
    pub frame: usize,
    pub mirrored: bool,
}

/// Ablated frame graphs of many recordings. Window graphs are materialized on
/// demand so the full sample set never sits in memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub recordings: Vec<GraphRecording>,
    pub window: usize,
    pub mode: AblationMode,
}

impl Dataset {
    pub fn new(recordings: &[GraphRecording], window: usize, mode: AblationMode) -> Result<Self> {
        check_window(window)?;
        let recordings = recordings
            .iter()
            .map(|r| {
                check_aligned(r)?;
                Ok(GraphRecording { graphs: r.graphs.iter().map(|g| ablate_frame_graph(g, mode)).collect(), ..r.clone() })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { recordings, window: mode.window(window), mode })
    }

    /// Node attribute width produced under the ablation mode.
    pub fn node_width(&self) -> usize {
        crate::vocab::ObjectClass::COUNT + self.mode.extra_node_features()
    }

    /// Keys of both hands for every `stride`-th frame of the selected recordings.
    pub fn keys(&self, recordings: &[usize], stride: usize) -> Vec<SampleKey> {
        let stride = stride.max(1);
        let mut out = Vec::new();
        for &r in recordings {
            for frame in (0..self.recordings[r].graphs.len()).step_by(stride) {
                for mirrored in [false, true] {
                    out.push(SampleKey { recording: r, frame, mirrored });
                }
            }
        }
        out
    }

    pub fn target(&self, key: SampleKey) -> ActionLabel {
        let r = &self.recordings[key.recording];
        if key.mirrored {
            r.left[key.frame]
        } else {
            r.right[key.frame]
        }
    }

    pub fn graph(&self, key: SampleKey) -> Result<SceneGraph> {
        let g = window_graph(&self.recordings[key.recording].graphs, key.frame, self.window)?;
        Ok(if key.mirrored { mirror(&g) } else { g })
    }

    pub fn sample(&self, key: SampleKey) -> Result<Sample> {
        let r = &self.recordings[key.recording];
        Ok(Sample {
            graph: self.graph(key)?,
            target: self.target(key),
            subject: r.subject,
            task: r.task.clone(),
            repetition: r.repetition,
            frame: key.frame,
            mirrored: key.mirrored,
        })
    }
}

/// Leave-one-subject-out split with one repetition per task held out for
/// validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_subject: u32,
    pub validation_repetition: u32,
}

impl SplitSpec {
    pub fn new(test_subject: u32) -> Self {
        SplitSpec { test_subject, validation_repetition: 0 }
    }
}

/// Recording indices per role.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_recordings(recordings: &[GraphRecording], spec: SplitSpec) -> Result<Split> {
    let mut split = Split::default();
    for (i, r) in recordings.iter().enumerate() {
        if r.subject == spec.test_subject {
            split.test.push(i);
        } else if r.repetition == spec.validation_repetition {
            split.validation.push(i);
        } else {
            split.train.push(i);
        }
    }
    if split.test.is_empty() {
        return Err(Error::InvalidArgument(format!("no recordings of test subject {}", spec.test_subject)));
    }
    audit_split(recordings, &split, spec)?;
    Ok(split)
}

/// Check that the roles are disjoint and the test subject appears only in the test role.
pub fn audit_split(recordings: &[GraphRecording], split: &Split, spec: SplitSpec) -> Result<()> {
    let mut seen = vec![false; recordings.len()];
    for &i in split.train.iter().chain(&split.validation).chain(&split.test) {
        if i >= recordings.len() || std::mem::replace(&mut seen[i], true) {
            return Err(Error::Schema(format!("recording index {i} out of range or assigned twice")));
        }
    }
    for &i in split.train.iter().chain(&split.validation) {
        if recordings[i].subject == spec.test_subject {
            return Err(Error::Schema(format!("test subject recording {} leaked into training", recordings[i].id)));
        }
    }
    if split.test.iter().any(|&i| recordings[i].subject != spec.test_subject) {
        return Err(Error::Schema("non-test subject in the test role".into()));
    }
    Ok(())
}

pub fn is_rebalanced(a: ActionLabel) -> bool {
    matches!(a, ActionLabel::Idle | ActionLabel::Hold)
}

/// Shuffle `items`, cut the draw into chunks of `batch_size`, and keep only
/// every third idle/hold draw (the 1st, 4th, ...) inside each chunk.
pub fn make_batches<K: Copy>(
    items: &[K],
    label: impl Fn(K) -> ActionLabel,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Vec<K>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut order: Vec<K> = items.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order
        .chunks(batch_size)
        .map(|chunk| {
            let mut drawn = 0usize;
            chunk
                .iter()
                .copied()
                .filter(|&k| {
                    if !is_rebalanced(label(k)) {
                        return true;
                    }
                    drawn += 1;
                    (drawn - 1) % 3 == 0
                })
                .collect::<Vec<K>>()
        })
        .filter(|b| !b.is_empty())
        .collect())
}

/// Adam moments and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub m: GraphNetWeights<T>,
    pub v: GraphNetWeights<T>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(config: ModelConfig, lr: f64) -> Self {
        OptimizerState {
            m: GraphNetWeights::zeros(config),
            v: GraphNetWeights::zeros(config),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. A non-finite gradient leaves everything untouched.
pub fn adam_step<T: Real>(
    weights: &mut GraphNetWeights<T>,
    grads: &GraphNetWeights<T>,
    state: &mut OptimizerState<T>,
) -> Result<()> {
    if weights.config != grads.config || weights.config != state.m.config {
        return Err(Error::Shape("weights, gradients and optimizer state differ in configuration".into()));
    }
    if !grads.all_finite() {
        return Err(Error::Diverged(format!("non-finite gradient at optimizer step {}", state.step + 1)));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(state.beta1), T::of(state.beta2));
    let c1 = T::of(1.0 - state.beta1.powi(t));
    let c2 = T::of(1.0 - state.beta2.powi(t));
    let (lr, eps) = (T::of(state.lr), T::of(state.eps));
    let one = T::one();
    for (((mut w, g), mut m), mut v) in weights
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut())
    {
        ndarray::Zip::from(&mut w).and(&g).and(&mut m).and(&mut v).for_each(|w, &g, m, v| {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        });
    }
    if !weights.all_finite() {
        return Err(Error::Diverged(format!("non-finite weights after optimizer step {}", state.step)));
    }
    Ok(())
}

/// Element type used for training and inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation macro F1 improvement before stopping.
    pub patience: usize,
    pub window: usize,
    /// Use every n-th frame for training and validation samples.
    pub stride: usize,
    pub precision: Precision,
    /// Multiplier on the core block's Glorot-initialized matrices.
    pub core_init_gain: f64,
    /// Rescale a batch gradient whose global L2 norm exceeds this; 0 disables.
    pub grad_clip: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lr: 0.001,
            batch_size: 512,
            max_epochs: 100,
            patience: 10,
            window: MAX_WINDOW,
            stride: 1,
            precision: Precision::F64,
            core_init_gain: 0.5,
            grad_clip: 1.0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        check_window(self.window)?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr {} must be > 0", self.lr)));
        }
        if !(self.core_init_gain.is_finite() && self.core_init_gain > 0.0) {
            return Err(Error::Config(format!("core_init_gain {} must be > 0", self.core_init_gain)));
        }
        if !(self.grad_clip.is_finite() && self.grad_clip >= 0.0) {
            return Err(Error::Config(format!("grad_clip {} must be >= 0", self.grad_clip)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.stride == 0 {
            return Err(Error::Config("batch_size, max_epochs and stride must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch's samples.
    pub loss: f64,
    pub val_macro_f1: f64,
    pub samples: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Weights of the best validation epoch.
    pub weights: GraphNetWeights<T>,
    pub best_epoch: usize,
    pub best_val_macro_f1: f64,
    pub log: Vec<EpochLog>,
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,loss,val_macro_f1,samples\n");
    for e in log {
        let _ = writeln!(s, "{},{:.9},{:.6},{}", e.epoch, e.loss, e.val_macro_f1, e.samples);
    }
    s
}

/// Samples per gradient work unit. Fixed so the summation order does not
/// depend on the number of threads.
const CHUNK: usize = 8;

/// Mean-loss gradient of a batch; chunks are reduced in index order.
pub fn batch_gradient<T: Real>(
    w: &GraphNetWeights<T>,
    data: &Dataset,
    batch: &[SampleKey],
) -> Result<(GraphNetWeights<T>, f64)> {
    let scale = T::of(1.0 / batch.len().max(1) as f64);
    let partials: Vec<Result<(GraphNetWeights<T>, f64)>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = GraphNetWeights::zeros(w.config);
            let mut loss = 0.0;
            for &k in chunk {
                let cache = forward(w, &data.graph(k)?)?;
                loss += accumulate_gradients(w, &cache, data.target(k), scale, &mut g).as_f64();
            }
            Ok((g, loss))
        })
        .collect();
    let mut total = GraphNetWeights::zeros(w.config);
    let mut loss = 0.0;
    for p in partials {
        let (g, l) = p?;
        total.add_assign(&g);
        loss += l;
    }
    Ok((total, loss))
}

/// Scale `g` down to global L2 norm `max_norm` if it is larger. Returns the
/// norm before clipping. `max_norm = 0` leaves `g` untouched.
pub fn clip_global_norm<T: Real>(g: &mut GraphNetWeights<T>, max_norm: f64) -> f64 {
    let norm = g.tensors().iter().flat_map(|t| t.iter().map(|v| v.as_f64() * v.as_f64())).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        g.scale(T::of(max_norm / norm));
    }
    norm
}

/// Probability distributions for the given samples, in order.
pub fn predict_keys<T: Real>(w: &GraphNetWeights<T>, data: &Dataset, keys: &[SampleKey]) -> Result<Vec<Distribution>> {
    keys.par_iter()
        .map(|&k| {
            let p = softmax(forward(w, &data.graph(k)?)?.logits());
            let mut d = [0.0; ActionLabel::COUNT];
            for (o, v) in d.iter_mut().zip(p.iter()) {
                *o = v.as_f64();
            }
            Ok(d)
        })
        .collect()
}

fn macro_f1<T: Real>(w: &GraphNetWeights<T>, data: &Dataset, keys: &[SampleKey]) -> Result<f64> {
    if keys.is_empty() {
        return Ok(0.0);
    }
    let preds: Vec<ActionLabel> = predict_keys(w, data, keys)?.iter().map(argmax).collect();
    let truth: Vec<ActionLabel> = keys.iter().map(|&k| data.target(k)).collect();
    Ok(score_labels(&preds, &truth)?.0.macro_avg.f1)
}

/// Train from a seeded initialization, keep the weights of the best
/// validation epoch and stop after `patience` epochs without improvement.
/// Without validation samples the last epoch is kept.
pub fn train<T: Real>(
    data: &Dataset,
    train_keys: &[SampleKey],
    val_keys: &[SampleKey],
    model: ModelConfig,
    cfg: &TrainingConfig,
    seed: u64,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    model.validate()?;
    if train_keys.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if model.node_in != data.node_width() {
        return Err(Error::Shape(format!(
            "model node width {} but the {} samples have {}",
            model.node_in,
            data.mode,
            data.node_width()
        )));
    }
    let mut w: GraphNetWeights<T> = GraphNetWeights::<f64>::init_with_core_gain(model, derive_seed(seed, &[0]), cfg.core_init_gain).cast();
    let mut opt = OptimizerState::new(model, cfg.lr);
    let mut best = (w.clone(), 0usize, f64::NEG_INFINITY);
    let mut log = Vec::new();
    let mut since_best = 0;
    for epoch in 1..=cfg.max_epochs {
        let batches = make_batches(train_keys, |k| data.target(k), cfg.batch_size, derive_seed(seed, &[1, epoch as u64]))?;
        let (mut loss_sum, mut n) = (0.0, 0usize);
        for batch in &batches {
            let (mut g, loss) = batch_gradient(&w, data, batch)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("non-finite loss in epoch {epoch}")));
            }
            clip_global_norm(&mut g, cfg.grad_clip);
            adam_step(&mut w, &g, &mut opt)?;
            loss_sum += loss;
            n += batch.len();
        }
        let f1 = if val_keys.is_empty() { f64::NAN } else { macro_f1(&w, data, val_keys)? };
        log.push(EpochLog { epoch, loss: loss_sum / n.max(1) as f64, val_macro_f1: f1, samples: n });
        if val_keys.is_empty() || f1 > best.2 {
            best = (w.clone(), epoch, if f1.is_nan() { best.2 } else { f1 });
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let (weights, best_epoch, best_val_macro_f1) = best;
    Ok(TrainOutcome { weights, best_epoch, best_val_macro_f1, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_graph::Node;
    use crate::vocab::ObjectClass;

    fn node(class: ObjectClass, id: u32, frame: usize) -> Node {
        Node { class, instance_id: id, frame, position: [0.0; 3], extra: vec![] }
    }

    fn recording(frames: usize) -> GraphRecording {
        let graphs = (0..frames)
            .map(|t| SceneGraph {
                u: None,
                nodes: vec![node(ObjectClass::RightHand, 0, t), node(ObjectClass::Cup, 1, t)],
                edges: vec![],
            })
            .collect();
        GraphRecording {
            id: "s0-x-r0".into(),
            subject: 0,
            task: "x".into(),
            repetition: 0,
            graphs,
            right: vec![ActionLabel::Pour; frames],
            left: vec![ActionLabel::Hold; frames],
        }
    }

    #[test]
    fn two_samples_per_frame() {
        let rec = recording(100);
        let s = make_samples(&rec, 10).unwrap();
        assert_eq!(s.len(), 200);
        assert_eq!(s[0].target, ActionLabel::Pour);
        assert_eq!(s[1].target, ActionLabel::Hold);
        assert!(s[1].mirrored);
        assert_eq!(s[0].graph.nodes.len(), 2);
        assert_eq!(s[199].graph.nodes.len(), 20);
        assert_eq!(mirror(&s[1].graph), s[0].graph);
    }

    #[test]
    fn misaligned_labels_are_rejected() {
        let mut rec = recording(5);
        rec.left.pop();
        assert!(make_samples(&rec, 10).is_err());
        assert!(make_samples(&recording(5), 0).is_err());
    }

    #[test]
    fn rebalancing_keeps_every_third_idle() {
        let items: Vec<usize> = (0..300).collect();
        let b = make_batches(&items, |_| ActionLabel::Idle, 300, 1).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].len(), 100);
        let plain = make_batches(&items, |_| ActionLabel::Pour, 64, 1).unwrap();
        assert_eq!(plain.iter().map(Vec::len).sum::<usize>(), 300);
        assert!(plain.iter().all(|b| b.len() <= 64));
        assert_eq!(plain, make_batches(&items, |_| ActionLabel::Pour, 64, 1).unwrap());
        assert_ne!(plain, make_batches(&items, |_| ActionLabel::Pour, 64, 2).unwrap());
        assert!(make_batches(&items, |_| ActionLabel::Pour, 0, 1).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let cfg = ModelConfig { latent: 2, steps: 1, ..Default::default() };
        let mut w = GraphNetWeights::<f64>::zeros(cfg);
        let mut g = GraphNetWeights::<f64>::zeros(cfg);
        let mut st = OptimizerState::new(cfg, 0.001);
        adam_step(&mut w, &g, &mut st).unwrap();
        assert!(w.to_flat().iter().all(|&v| v == 0.0));
        g.head.b[0] = 1.0;
        let mut st = OptimizerState::new(cfg, 0.001);
        adam_step(&mut w, &g, &mut st).unwrap();
        assert!((w.head.b[0] + 0.001).abs() < 1e-10);
        g.head.b[0] = f64::NAN;
        let before = w.clone();
        assert!(matches!(adam_step(&mut w, &g, &mut st), Err(Error::Diverged(_))));
        assert_eq!(w, before);
    }

    #[test]
    fn clipping_rescales_only_large_gradients() {
        let cfg = ModelConfig { latent: 2, steps: 1, ..Default::default() };
        let mut g = GraphNetWeights::<f64>::zeros(cfg);
        g.head.b[0] = 3.0;
        g.head.b[1] = 4.0;
        let small = g.clone();
        assert_eq!(clip_global_norm(&mut g, 10.0), 5.0);
        assert_eq!(g, small);
        assert_eq!(clip_global_norm(&mut g, 0.0), 5.0);
        assert_eq!(g, small);
        clip_global_norm(&mut g, 1.0);
        assert!((g.head.b[0] - 0.6).abs() < 1e-15 && (g.head.b[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn split_keeps_test_subject_out() {
        let mut recs = Vec::new();
        for s in 0..3 {
            for r in 0..3 {
                recs.push(GraphRecording { subject: s, repetition: r, id: format!("s{s}-x-r{r}"), ..recording(3) });
            }
        }
        let split = split_recordings(&recs, SplitSpec::new(1)).unwrap();
        assert_eq!(split.test.len(), 3);
        assert_eq!(split.validation.len(), 2);
        assert_eq!(split.train.len(), 4);
        let bad = Split { train: vec![3], ..split.clone() };
        assert!(audit_split(&recs, &bad, SplitSpec::new(1)).is_err());
        assert!(split_recordings(&recs, SplitSpec::new(7)).is_err());
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let data = Dataset::new(&[recording(3)], 2, AblationMode::Full).unwrap();
        let model = ModelConfig { latent: 4, steps: 1, ..Default::default() };
        let r = train::<f64>(&data, &[], &[], model, &TrainingConfig::default(), 0);
        assert!(r.is_err());
    }
}
