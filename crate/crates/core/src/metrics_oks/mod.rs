//! Object keypoint similarity and COCO-style AP/AR summaries.

mod eval;
mod oks;
mod report;

pub use eval::{
    ap_at, evaluate, summarize, Detection, EvalRecord, GroundTruth, SummaryKind, LARGE_AREA, MAX_DETECTIONS,
    MEDIUM_AREA, RECALL_POINTS,
};
pub use oks::{default_thresholds, oks, OksParams, COCO_KEYPOINT_K, UNIFORM_TOY_K};
pub use report::MetricsReport;
