//! Leave-one-subject-out experiments: one model per held-out subject, test
//! predictions pooled across folds.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::evaluation::{argmax, score, AblationMode, ConfusionMatrix, Distribution, MetricsReport};
use crate::gn::{GraphNetWeights, ModelConfig, Real};
use crate::pipeline::GraphRecording;
use crate::seeds::derive_seed;
use crate::training::{predict_keys, split_recordings, train, Dataset, EpochLog, Precision, SampleKey, SplitSpec, TrainingConfig};
use crate::vocab::ActionLabel;

#[derive(Debug, Clone, Serialize)]
pub struct FoldResult {
    pub test_subject: u32,
    pub best_epoch: usize,
    pub best_val_macro_f1: f64,
    pub top1: MetricsReport,
    pub top3: MetricsReport,
    #[serde(skip)]
    pub log: Vec<EpochLog>,
}

/// One scored test sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredSample {
    pub recording: String,
    pub frame: usize,
    pub hand: &'static str,
    pub truth: ActionLabel,
    pub predicted: ActionLabel,
    #[serde(skip)]
    pub distribution: Distribution,
}

#[derive(Debug, Clone, Serialize)]
pub struct LosoResult {
    pub mode: AblationMode,
    pub folds: Vec<FoldResult>,
    /// Pooled over all folds.
    pub top1: MetricsReport,
    pub top3: MetricsReport,
    pub confusion_top1: ConfusionMatrix,
    pub confusion_top3: ConfusionMatrix,
    #[serde(skip)]
    pub samples: Vec<ScoredSample>,
}

/// Model configuration matching the node width of an ablation mode.
pub fn model_for(mode: AblationMode, base: ModelConfig) -> ModelConfig {
    ModelConfig { node_in: crate::vocab::ObjectClass::COUNT + mode.extra_node_features(), ..base }
}

fn run_fold<T: Real>(
    data: &Dataset,
    spec: SplitSpec,
    model: ModelConfig,
    training: &TrainingConfig,
    seed: u64,
) -> Result<(FoldResult, Vec<SampleKey>, Vec<Distribution>)> {
    let split = split_recordings(&data.recordings, spec)?;
    let train_keys = data.keys(&split.train, training.stride);
    let val_keys = data.keys(&split.validation, training.stride);
    let test_keys = data.keys(&split.test, 1);
    let outcome = train::<T>(data, &train_keys, &val_keys, model, training, seed)?;
    let preds = predict_keys(&outcome.weights, data, &test_keys)?;
    let truth: Vec<ActionLabel> = test_keys.iter().map(|&k| data.target(k)).collect();
    let (top1, _) = score(&preds, &truth, 1)?;
    let (top3, _) = score(&preds, &truth, 3)?;
    let fold = FoldResult {
        test_subject: spec.test_subject,
        best_epoch: outcome.best_epoch,
        best_val_macro_f1: outcome.best_val_macro_f1,
        top1,
        top3,
        log: outcome.log,
    };
    Ok((fold, test_keys, preds))
}

/// Train and test one model per subject and pool the test predictions.
pub fn run_loso(
    recordings: &[GraphRecording],
    mode: AblationMode,
    base: ModelConfig,
    training: &TrainingConfig,
    seed: u64,
) -> Result<LosoResult> {
    let mut subjects: Vec<u32> = recordings.iter().map(|r| r.subject).collect();
    subjects.sort_unstable();
    subjects.dedup();
    if subjects.len() < 2 {
        return Err(Error::InvalidArgument("leave-one-subject-out needs at least 2 subjects".into()));
    }
    let data = Dataset::new(recordings, training.window, mode)?;
    let model = model_for(mode, base);
    let mut folds = Vec::new();
    let mut samples = Vec::new();
    for &s in &subjects {
        let fold_seed = derive_seed(seed, &[s as u64]);
        let spec = SplitSpec::new(s);
        let (fold, keys, preds) = match training.precision {
            Precision::F64 => run_fold::<f64>(&data, spec, model, training, fold_seed)?,
            Precision::F32 => run_fold::<f32>(&data, spec, model, training, fold_seed)?,
        };
        for (k, p) in keys.into_iter().zip(preds) {
            samples.push(ScoredSample {
                recording: data.recordings[k.recording].id.clone(),
                frame: k.frame,
                hand: if k.mirrored { "left" } else { "right" },
                truth: data.target(k),
                predicted: argmax(&p),
                distribution: p,
            });
        }
        folds.push(fold);
    }
    let dists: Vec<Distribution> = samples.iter().map(|s| s.distribution).collect();
    let truth: Vec<ActionLabel> = samples.iter().map(|s| s.truth).collect();
    let (top1, confusion_top1) = score(&dists, &truth, 1)?;
    let (top3, confusion_top3) = score(&dists, &truth, 3)?;
    Ok(LosoResult { mode, folds, top1, top3, confusion_top1, confusion_top3, samples })
}

/// Train a single model on every recording except validation repetitions of
/// all subjects (no held-out test subject).
pub fn train_all<T: Real>(
    recordings: &[GraphRecording],
    mode: AblationMode,
    base: ModelConfig,
    training: &TrainingConfig,
    validation_repetition: u32,
    seed: u64,
) -> Result<(GraphNetWeights<T>, Vec<EpochLog>, usize)> {
    let data = Dataset::new(recordings, training.window, mode)?;
    let (mut tr, mut va) = (Vec::new(), Vec::new());
    for (i, r) in data.recordings.iter().enumerate() {
        if r.repetition == validation_repetition {
            va.push(i);
        } else {
            tr.push(i);
        }
    }
    let out = train::<T>(
        &data,
        &data.keys(&tr, training.stride),
        &data.keys(&va, training.stride),
        model_for(mode, base),
        training,
        seed,
    )?;
    Ok((out.weights, out.log, out.best_epoch))
}
