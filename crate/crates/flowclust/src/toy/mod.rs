//! Desk-scale end-to-end demonstration of the trainable detection pipeline:
//! synthetic scenes, a small per-node predictor, and the training loop that
//! learns clusters from box-level labels alone.

pub mod predictor;
pub mod scene;
pub mod train;

pub use predictor::{PredictorCache, PredictorGrads, ToyPredictor};
pub use scene::{sample_scene, synth_scene, NodeFeatures, SceneConfig, SceneSample, FEATURE_DIM};
pub use train::{
    evaluate_model, object_loss, scene_seed, train, train_step, EvalReport, LossRecord,
    TrainConfig, TrainState,
};
