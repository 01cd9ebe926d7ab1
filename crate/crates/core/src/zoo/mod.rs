//! Synthetic flood/car scenes, toy models and a minimal trainer.

mod dataset;
mod models;
mod scene;
mod train;

pub use dataset::{
    gen_dataset, generate_scenes, read_mask_png, read_rgb_png, write_json, write_rgb_png, BoxRecord, Dataset,
    DatasetManifest,
};
pub use models::{build_toy_detector, build_toy_pid, explainable_heads, Architecture, ToyModelSpec, WeightMode};
pub use scene::{
    road_rgb, solid_image, terrain_rgb, water_rgb, CarBox, CarColor, Scene, SceneConfig, CLASS_BACKGROUND, CLASS_FLOOD,
    CLASS_ROAD, NUM_CLASSES,
};
pub use train::{
    detection_hit_rate, objectness_argmax, pixel_accuracy, train_sgd, TrainConfig, TrainReport, TrainTask,
};

use crate::graph::GraphError;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ZooError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {detail}")]
    Io { path: String, detail: String },
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("training diverged in epoch {epoch} (loss history {losses:?})")]
    Diverged { epoch: usize, losses: Vec<f64> },
}

impl ZooError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        ZooError::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        }
    }
}
