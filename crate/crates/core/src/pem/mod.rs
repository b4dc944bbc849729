//! Perception error models: learned and analytic surrogates mapping salient
//! scene variables to the probability that a detector sees an obstacle.

mod matching;
mod metrics;
mod model;
mod salient;
mod synthetic;
mod train;

pub use matching::{hungarian, hungarian_match, iou, Assignment, BBox, BoxMatchProblem, CostRule};
pub use metrics::{bce, roc_auc};
pub use model::{pem_eval, MlpSpec, PemModel, PerceptionModel, PEM_FORMAT_VERSION};
pub use salient::{
    read_detection_log, write_detection_log, Category, DetectionRecord, Occlusion, SalientVector,
    SALIENT_DIM,
};
pub use synthetic::PlantedLogistic;
pub use train::{
    cross_validate, cross_validate_with, fold_assignment, make_baseline, train_pem,
    BaselineKind, CalibrationReport, FoldMetrics,
};
