//! Simplified two-stage detector over fixed handcrafted features.
//!
//! Stage one scores and regresses a fixed anchor grid (RPN heads) and keeps
//! the best non-overlapping boxes as proposals. Stage two classifies each
//! proposal, refines its box and predicts an `M×M` mask grid (RoI heads).

mod anchors;
mod features;
mod heads;
mod infer;
mod model;
mod proposals;
mod training;

pub use anchors::{build_anchors, Anchor, ANCHOR_SIZES, ANCHOR_STRIDE};
pub use features::{box_features, feature_dim, features_matrix, RING_WIDTH};
pub use heads::{DetectorConfig, Head, HeadParams};
pub use infer::{
    candidate_detections, filter_detections, infer, propose, Detection, DetectionSet, InferConfig,
    DEFAULT_MAX_DETECTIONS, DEFAULT_THRESHOLD,
};
pub use model::Model;
pub use proposals::{
    anchor_labels, assign_labels, mask_target, rpn_forward, select_proposals, Proposal, RpnOutput,
};
pub use training::{forward_train, sample_balanced, StageOutputs, Targeted};
