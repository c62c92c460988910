//! Toy segmentation benchmark: disk scenes, segmenters, a geometric
//! test-time augmentation baseline and the evaluation metrics.

pub mod metrics;
pub mod prior;
pub mod scene;
pub mod segmenter;
pub mod tta;

pub use metrics::{dice, error_ground_truth, hd95, nsd, roc_auc, roc_auc_grid};
pub use scene::{make_dataset, Difficulty, SceneParams, ToyScene};
pub use segmenter::{train_segmenter, SegmenterModel, SegmenterTrainConfig};
pub use tta::tta_baseline;
