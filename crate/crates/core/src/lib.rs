//! Multi-category landmark detection heads: target encoding, decoding,
//! test-time fusion and COCO-style evaluation.

pub mod category;
pub mod decode;
pub mod encode;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod metrics;
pub mod postprocess;
pub mod scene;
pub mod tensor;

pub use category::{load_category_table, CategorySpec, CategoryTable, NUM_CATEGORIES, NUM_KEYPOINTS};
pub use decode::{decode_scene, DecodeConfig};
pub use encode::{encode_scene, gaussian_radius, EncodeParams};
pub use error::{Error, Result};
pub use geometry::{BoundingBox, KeypointPrediction, Landmark, Visibility};
pub use metrics::{evaluate, EvalConfig, MetricReport, VisibilityMode};
pub use postprocess::{flip_tensors, fuse_tensors, iou, nms, FusionConfig};
pub use scene::{Detection, GroundTruthItem, Scene};
pub use tensor::{validate_head_tensors, HeadTensorSet};
