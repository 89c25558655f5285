//! Scenario suites and the synthetic dataset builder.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::frames::Recording;
use super::scenario::{generate_recording, RecordingMeta, ScenarioScript};
use crate::error::{Error, Result};
use crate::seeds::derive_seed;

pub const KITCHEN_MINI: &str = include_str!("suites/kitchen-mini.toml");
pub const WORKSHOP_MINI: &str = include_str!("suites/workshop-mini.toml");

/// A named collection of task scripts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Suite {
    pub name: String,
    pub scenarios: Vec<ScenarioScript>,
}

impl Suite {
    pub fn from_toml(text: &str) -> Result<Self> {
        let suite: Suite = toml::from_str(text).map_err(|e| Error::Config(format!("suite: {e}")))?;
        for s in &suite.scenarios {
            s.validate()?;
        }
        Ok(suite)
    }

    /// One of the shipped suites by name.
    pub fn shipped(name: &str) -> Result<Self> {
        match name {
            "kitchen-mini" => Suite::from_toml(KITCHEN_MINI),
            "workshop-mini" => Suite::from_toml(WORKSHOP_MINI),
            other => Err(Error::Config(format!("unknown suite {other:?} (kitchen-mini, workshop-mini)"))),
        }
    }

    /// All six shipped tasks: kitchen-mini followed by workshop-mini.
    pub fn standard_tasks() -> Vec<ScenarioScript> {
        let mut tasks = Suite::shipped("kitchen-mini").expect("shipped suite parses").scenarios;
        tasks.extend(Suite::shipped("workshop-mini").expect("shipped suite parses").scenarios);
        tasks
    }
}

/// Per-subject and per-repetition variation of the synthetic suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Variation {
    /// Subject speed multipliers are drawn from `1 ± speed`.
    pub speed: f64,
    /// Subject workspace offsets are drawn from `±offset` per axis (mm).
    pub offset: [f64; 3],
    /// Per-repetition pose jitter (mm, x and z).
    pub pose: f64,
    /// Per-repetition relative phase duration jitter.
    pub timing: f64,
}

impl Default for Variation {
    fn default() -> Self {
        Variation { speed: 0.15, offset: [150.0, 40.0, 120.0], pose: 20.0, timing: 0.1 }
    }
}

pub fn recording_id(subject: u32, task: &str, repetition: u32) -> String {
    format!("s{subject}-{task}-r{repetition}")
}

/// Every (subject, task, repetition) combination, generated in parallel
/// from seeds derived per recording. Output order is subject, task, repetition.
pub fn build_suite_with(
    n_subjects: u32,
    tasks: &[ScenarioScript],
    reps: u32,
    seed: u64,
    variation: &Variation,
) -> Result<Vec<Recording>> {
    if n_subjects < 2 {
        return Err(Error::InvalidArgument("leave-one-subject-out needs at least 2 subjects".into()));
    }
    let subjects: Vec<(f64, [f64; 3])> = (0..n_subjects)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0, s as u64]));
            let speed = 1.0 + rng.random_range(-variation.speed..=variation.speed);
            let offset = variation.offset.map(|o| rng.random_range(-o..=o));
            (speed, offset)
        })
        .collect();
    let jobs: Vec<(u32, usize, u32)> = (0..n_subjects)
        .flat_map(|s| (0..tasks.len()).flat_map(move |t| (0..reps).map(move |r| (s, t, r))))
        .collect();
    jobs.par_iter()
        .map(|&(s, t, r)| {
            let task = &tasks[t];
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1, s as u64, t as u64, r as u64]));
            let (speed, offset) = subjects[s as usize];
            let script = task.varied(&mut rng, variation.pose, variation.timing).transformed(offset, speed);
            let meta = RecordingMeta { recording: recording_id(s, &task.task, r), subject: s, repetition: r };
            let frames = generate_recording(&script, &meta, rng.random())?;
            Ok(Recording { fps: script.fps, frames })
        })
        .collect()
}

pub fn build_suite(n_subjects: u32, tasks: &[ScenarioScript], reps: u32, seed: u64) -> Result<Vec<Recording>> {
    build_suite_with(n_subjects, tasks, reps, seed, &Variation::default())
}
