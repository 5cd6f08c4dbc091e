//! Collection, aggregation and quality assessment of side-by-side preference
//! annotations expressed as intuitionistic fuzzy values.
//!
//! - [`ifs`]: the value type and its algebra (hesitation, distance, scoring)
//! - [`aggregation`]: criteria, IFWA and multi-annotator consensus, annotator weights
//! - [`quality`]: confidence, clarity, agreement and the dataset report
//! - [`store`]: records, JSONL journals, import/export and soft pairwise labels
//! - [`simulator`]: seeded synthetic annotators and corpora

pub mod aggregation;
pub mod canonical;
pub mod exec;
pub mod ifs;
pub mod quality;
pub mod simulator;
pub mod store;

pub use aggregation::{AggregatedPreference, AggregationMethod, DynamicWeightConfig, IfwaForm, WeightVector, Winner};
pub use exec::Execution;
pub use ifs::{IfsError, IfsValue, PreferencePair, Tolerance};
pub use quality::{AgreementMode, QualityReport, QualityScoreConfig, ReportOptions};
pub use store::{Annotation, ComparisonTask, Dataset, Snapshot, Store, StoreError};
