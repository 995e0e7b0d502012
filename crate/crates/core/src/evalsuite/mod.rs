//! Structure-recovery and calibration experiments, plus the MB and Laplace baselines.

pub mod baselines;
pub mod calibration;
pub mod path;
pub mod recovery;
pub mod roc;

pub use baselines::{fit_laplace, fit_mb, fit_mb_path, LaplaceSampler, MbFit, MbSampler};
pub use calibration::{
    all_conditionals, cdf_calibration, compare_cdfs, conditional_cdfs, CalibrationOptions, CalibrationReport,
    ConditionalSampler, ObservedSampler, RingSampler,
};
pub use path::{fit_path, fit_path_at, log_path, method_roc, AucMode, Method, PathResult, PathSettings};
pub use recovery::{recovery_rate, RecoveryReport};
pub use roc::{roc_auc, roc_from_edge_sets, RocCurve, RocPoint};
