pub mod data;
pub mod error;
pub mod experiment;
pub mod fsutil;
pub mod evaluation;
pub mod geometry;
pub mod gn;
pub mod pipeline;
pub mod relations;
pub mod scene_graph;
pub mod seeds;
pub mod tracking;
pub mod training;
pub mod vocab;

pub use error::{Error, Result};
