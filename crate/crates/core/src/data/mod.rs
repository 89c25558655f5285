//! Frame-stream format, scripted scenarios, and the synthetic suite.

pub mod frames;
pub mod scenario;
pub mod suite;

pub use frames::{load_frames, save_frames, write_frames, FrameReader, FrameRecord, Recording};
pub use scenario::{generate, generate_recording, Motion, Phase, RecordingMeta, ScenarioScript};
pub use suite::{build_suite, build_suite_with, recording_id, Suite, Variation};
