//! Dataset files (16-bit depth PNG, 8-bit mask PNG, 16-bit RGB NOCS PNG, JSON
//! annotations), manifests, prediction files and evaluation reports.

pub mod png;
pub mod records;
pub mod report;

pub use records::{
    load_sample, read_json, sample_paths, save_sample, write_json, AnnotationRecord,
    InstanceAnnotation, LoadedSample, Manifest, ManifestEntry, OccluderAnnotation, PredictionEntry,
    PredictionFile, MANIFEST_FILE, SCHEMA_VERSION,
};
pub use report::{
    curve_csv, evaluate, EvalReport, ReportCounts, SweepCurve, SweepKind, Threshold,
    DEFAULT_THRESHOLDS,
};
