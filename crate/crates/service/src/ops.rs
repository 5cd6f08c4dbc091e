//! Pipeline operations shared by the HTTP service and the CLI, so both
//! interfaces produce identical results from the same store.

use ifspref_core::aggregation::{aggregate_dataset, AggregateOptions, AggregationError};
use ifspref_core::quality::{quality_report, QualityError, QualityReport, ReportOptions};
use ifspref_core::{AggregatedPreference, AggregationMethod, Execution, Snapshot, Store, StoreError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OpError {
    #[error("no annotations")]
    NoAnnotations,
    #[error("empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error(transparent)]
    Quality(#[from] QualityError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl OpError {
    pub fn code(&self) -> &'static str {
        match self {
            OpError::NoAnnotations => "no_annotations",
            OpError::EmptyDataset => "empty_dataset",
            OpError::Aggregation(AggregationError::Ifs(_)) => "constraint_violated",
            OpError::Aggregation(_) => "aggregation_error",
            OpError::Quality(_) => "quality_error",
            OpError::Store(e) => e.code(),
        }
    }

    pub fn reason(&self) -> String {
        match self {
            OpError::Store(e) => e.reason(),
            other => other.to_string(),
        }
    }
}

/// Aggregates the current snapshot and persists the results.
pub fn run_aggregation(
    store: &mut Store,
    method: AggregationMethod,
    options: &AggregateOptions,
) -> Result<Vec<AggregatedPreference>, OpError> {
    let snapshot = store.snapshot();
    let dataset = snapshot.dataset();
    if dataset.annotations.is_empty() {
        return Err(OpError::NoAnnotations);
    }
    let aggregates = aggregate_dataset(&dataset, method, options, Execution::default())?;
    store.put_aggregates(aggregates.clone())?;
    Ok(aggregates)
}

pub fn build_report(snapshot: &Snapshot, options: &ReportOptions) -> Result<QualityReport, OpError> {
    let dataset = snapshot.dataset();
    if dataset.annotations.is_empty() {
        return Err(OpError::EmptyDataset);
    }
    Ok(quality_report(&dataset, options, Execution::default())?)
}

/// Canonical JSON array of aggregate records.
pub fn aggregates_json(aggregates: &[AggregatedPreference]) -> String {
    let items: Vec<String> = aggregates
        .iter()
        .map(|a| {
            ifspref_core::canonical::to_canonical_string(a, ifspref_core::canonical::RealFormat::Shortest)
                .expect("aggregate serializes")
        })
        .collect();
    format!("[{}]", items.join(","))
}
