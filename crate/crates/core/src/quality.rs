//! Annotation quality metrics and the dataset quality report.

use std::borrow::Borrow;
use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{annotator_profiles, validate_unit_coefficients, AggregationError, DynamicWeightConfig};
use crate::canonical::{to_canonical_string, RealFormat};
use crate::exec::Execution;
use crate::ifs::IfsValue;
use crate::store::{Annotation, Dataset};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QualityError {
    #[error("empty dataset")]
    EmptyInput,
    #[error("agreement needs at least two annotators, got {0}")]
    NeedTwoAnnotators(usize),
    #[error("invalid coefficients: {0}")]
    InvalidConfig(String),
    #[error("{name}={value} is outside [0, 1]")]
    InvalidInput { name: &'static str, value: f64 },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
}

fn labels_of<A: Borrow<Annotation>>(annotations: &[A]) -> impl Iterator<Item = &IfsValue> {
    annotations.iter().flat_map(|a| a.borrow().labels.values())
}

fn mean_of(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Mean hesitation over a set of labels.
pub fn mean_hesitation<'a>(labels: impl IntoIterator<Item = &'a IfsValue>) -> Result<f64, QualityError> {
    mean_of(labels.into_iter().map(IfsValue::hesitation)).ok_or(QualityError::EmptyInput)
}

/// `1 - mean(pi)` over a set of labels.
pub fn confidence_of<'a>(labels: impl IntoIterator<Item = &'a IfsValue>) -> Result<f64, QualityError> {
    mean_hesitation(labels).map(|h| 1.0 - h)
}

/// `mean(|mu - nu|)` over a set of labels.
pub fn clarity_of<'a>(labels: impl IntoIterator<Item = &'a IfsValue>) -> Result<f64, QualityError> {
    mean_of(labels.into_iter().map(|v| (v.mu() - v.nu()).abs())).ok_or(QualityError::EmptyInput)
}

/// Confidence over every per-response label of the annotations.
pub fn confidence<A: Borrow<Annotation>>(annotations: &[A]) -> Result<f64, QualityError> {
    confidence_of(labels_of(annotations))
}

/// Clarity over every per-response label of the annotations.
pub fn clarity<A: Borrow<Annotation>>(annotations: &[A]) -> Result<f64, QualityError> {
    clarity_of(labels_of(annotations))
}

/// Normalization of the pairwise-distance sum in [`ifs_agreement`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AgreementMode {
    /// Divides the sum over unordered pairs by `k(k-1)`.
    #[serde(rename = "literal")]
    Literal,
    /// Divides by the number of unordered pairs, `k(k-1)/2`.
    #[default]
    #[serde(rename = "mean")]
    MeanPairwise,
}

impl AgreementMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AgreementMode::Literal => "literal",
            AgreementMode::MeanPairwise => "mean",
        }
    }
}

impl FromStr for AgreementMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "literal" => Ok(AgreementMode::Literal),
            "mean" => Ok(AgreementMode::MeanPairwise),
            other => Err(format!("unknown agreement mode {other:?}; expected literal or mean")),
        }
    }
}

/// Agreement among `k >= 2` annotators' labels for one item.
pub fn ifs_agreement(labels: &[IfsValue], mode: AgreementMode) -> Result<f64, QualityError> {
    let k = labels.len();
    if k < 2 {
        return Err(QualityError::NeedTwoAnnotators(k));
    }
    let mut sum = 0.0;
    for (i, a) in labels.iter().enumerate() {
        for b in &labels[i + 1..] {
            sum += a.distance(b);
        }
    }
    let pairs = (k * (k - 1)) as f64;
    let denom = match mode {
        AgreementMode::Literal => pairs,
        AgreementMode::MeanPairwise => pairs / 2.0,
    };
    Ok(1.0 - sum / denom)
}

/// Mean [`ifs_agreement`] over every (task, response) item that has at
/// least two annotators. `None` when no such item exists.
pub fn dataset_agreement(dataset: &Dataset<'_>, mode: AgreementMode) -> Option<f64> {
    let mut items: BTreeMap<(&str, &str), Vec<(&str, IfsValue)>> = BTreeMap::new();
    for a in &dataset.annotations {
        for (rid, v) in &a.labels {
            items.entry((a.task_id.as_str(), rid.as_str())).or_default().push((a.annotator_id.as_str(), *v));
        }
    }
    mean_of(items.into_values().filter(|xs| xs.len() >= 2).map(|mut xs| {
        // Fixed annotator order keeps the floating point sum reproducible.
        xs.sort_by(|a, b| a.0.cmp(b.0));
        let labels: Vec<IfsValue> = xs.into_iter().map(|(_, v)| v).collect();
        ifs_agreement(&labels, mode).expect("at least two labels")
    }))
}

/// Coefficients of the composite quality score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QualityScoreConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl QualityScoreConfig {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, QualityError> {
        validate_unit_coefficients(alpha, beta, gamma).map_err(QualityError::InvalidConfig)?;
        Ok(Self { alpha, beta, gamma })
    }
}

impl Default for QualityScoreConfig {
    fn default() -> Self {
        Self { alpha: 1.0 / 3.0, beta: 1.0 / 3.0, gamma: 1.0 / 3.0 }
    }
}

/// `alpha (1 - mean_hesitation) + beta clarity + gamma consistency`.
pub fn quality_score(
    mean_hesitation: f64,
    clarity: f64,
    consistency: f64,
    config: &QualityScoreConfig,
) -> Result<f64, QualityError> {
    QualityScoreConfig::new(config.alpha, config.beta, config.gamma)?;
    for (name, value) in [("mean_hesitation", mean_hesitation), ("clarity", clarity), ("consistency", consistency)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(QualityError::InvalidInput { name, value });
        }
    }
    let score = config.alpha * (1.0 - mean_hesitation) + config.beta * clarity + config.gamma * consistency;
    Ok(score.clamp(0.0, 1.0))
}

/// Pearson correlation between mean hesitation and a quality measure
/// across units (annotators, tasks, batches).
pub fn hesitation_quality_correlation(units: &[(f64, f64)]) -> Result<f64, QualityError> {
    if units.len() < 3 {
        return Err(QualityError::DegenerateInput(format!("need at least 3 units, got {}", units.len())));
    }
    let n = units.len() as f64;
    let mx = units.iter().map(|u| u.0).sum::<f64>() / n;
    let my = units.iter().map(|u| u.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in units {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(QualityError::DegenerateInput("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorStats {
    pub consistency: f64,
    pub expertise: f64,
    pub agreement: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReportOptions {
    pub agreement_mode: AgreementMode,
    pub score: QualityScoreConfig,
    pub weights: DynamicWeightConfig,
}

/// Dataset-level quality summary.
///
/// `consistency` is the mean of the per-annotator hesitation-variance
/// consistencies and is the term fed into `quality_score`. `agreement` is
/// `None` when no item was labelled by two or more annotators.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityReport {
    pub confidence: f64,
    pub clarity: f64,
    pub agreement: Option<f64>,
    pub agreement_mode: AgreementMode,
    pub mean_hesitation: f64,
    pub consistency: f64,
    pub consistency_basis: &'static str,
    pub per_annotator: BTreeMap<String, AnnotatorStats>,
    pub quality_score: f64,
    pub score_config: QualityScoreConfig,
    pub weight_config: DynamicWeightConfig,
    pub n_tasks: usize,
    pub n_annotations: usize,
}

impl QualityReport {
    /// Canonical JSON with sorted keys and 17 significant digits per real.
    pub fn to_canonical_json(&self) -> String {
        to_canonical_string(self, RealFormat::Significant17).expect("report serializes")
    }
}

pub fn quality_report(
    dataset: &Dataset<'_>,
    options: &ReportOptions,
    exec: Execution,
) -> Result<QualityReport, QualityError> {
    if dataset.annotations.is_empty() {
        return Err(QualityError::EmptyInput);
    }
    let labels: Vec<&IfsValue> = labels_of(&dataset.annotations).collect();
    let mean_h = mean_hesitation(labels.iter().copied())?;
    let clarity = clarity_of(labels.iter().copied())?;
    let profiles = annotator_profiles(dataset, &options.weights, exec)?;
    let consistency = mean_of(profiles.iter().map(|p| p.consistency)).ok_or(QualityError::EmptyInput)?;
    let score = quality_score(mean_h, clarity, consistency, &options.score)?;
    let per_annotator = profiles
        .into_iter()
        .map(|p| {
            (
                p.annotator_id,
                AnnotatorStats { consistency: p.consistency, expertise: p.expertise, agreement: p.agreement, weight: p.weight },
            )
        })
        .collect();
    Ok(QualityReport {
        confidence: 1.0 - mean_h,
        clarity,
        agreement: dataset_agreement(dataset, options.agreement_mode),
        agreement_mode: options.agreement_mode,
        mean_hesitation: mean_h,
        consistency,
        consistency_basis: "hesitation_variance",
        per_annotator,
        quality_score: score,
        score_config: options.score,
        weight_config: options.weights,
        n_tasks: dataset.tasks.len(),
        n_annotations: dataset.annotations.len(),
    })
}

/// Per-annotator `(mean hesitation, gold accuracy)` units for
/// [`hesitation_quality_correlation`].
pub fn annotator_hesitation_accuracy(dataset: &Dataset<'_>) -> Vec<(String, f64, f64)> {
    let gold: Vec<_> = dataset.tasks.iter().copied().filter(|t| t.is_gold()).collect();
    let mut by_annotator: BTreeMap<&str, Vec<&Annotation>> = BTreeMap::new();
    for a in &dataset.annotations {
        by_annotator.entry(a.annotator_id.as_str()).or_default().push(a);
    }
    by_annotator
        .into_iter()
        .map(|(id, own)| {
            let h = mean_hesitation(labels_of(&own)).unwrap_or(0.0);
            (id.to_string(), h, crate::aggregation::expertise_score(&own, &gold))
        })
        .collect()
}
