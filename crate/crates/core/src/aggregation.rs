//! Combining fuzzy judgments across criteria, across annotations, and across
//! annotators, plus the per-annotator reliability weighting.

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::exec::Execution;
use crate::ifs::{IfsError, IfsValue, Tolerance, DEFAULT_EPS};
use crate::store::{Annotation, AnnotatorProfile, ComparisonTask, Dataset, WEIGHT_SUM_EPS};

/// Defuzzified scores closer than this are reported as a tie.
pub const TIE_EPS: f64 = 1e-9;

/// Expertise and agreement reported when there is no evidence either way.
pub const NEUTRAL_SCORE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AggregationError {
    #[error("no input to aggregate")]
    EmptyInput,
    #[error("expected {expected} weights, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("invalid coefficients: {0}")]
    InvalidConfig(String),
    #[error("annotation for task {found} mixed into aggregation of {expected}")]
    TaskMismatch { expected: String, found: String },
    #[error("response sets differ: {0}")]
    ResponseMismatch(String),
    #[error("invalid annotator profile: {0}")]
    InvalidProfile(String),
    #[error(transparent)]
    Ifs(#[from] IfsError),
}

/// Non-negative weights, one per aggregated item.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self, AggregationError> {
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(AggregationError::InvalidWeights(format!("weight {w} is negative or not finite")));
        }
        Ok(Self(weights))
    }

    /// Like [`WeightVector::new`] but also requires the weights to sum to 1.
    pub fn normalized(weights: Vec<f64>) -> Result<Self, AggregationError> {
        let w = Self::new(weights)?;
        if !w.is_normalized() {
            return Err(AggregationError::InvalidWeights(format!("weights sum to {}, expected 1", w.sum())));
        }
        Ok(w)
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    /// Rescales to sum 1; an all-zero vector becomes uniform.
    pub fn normalize(&self) -> Self {
        let sum = self.sum();
        if sum > 0.0 {
            Self(self.0.iter().map(|w| w / sum).collect())
        } else {
            Self::uniform(self.0.len())
        }
    }

    pub fn is_normalized(&self) -> bool {
        (self.sum() - 1.0).abs() <= WEIGHT_SUM_EPS
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    fn require_normalized(&self) -> Result<(), AggregationError> {
        if self.is_normalized() {
            Ok(())
        } else {
            Err(AggregationError::InvalidWeights(format!("weights sum to {}, expected 1", self.sum())))
        }
    }

    fn require_len(&self, expected: usize) -> Result<(), AggregationError> {
        if self.len() == expected {
            Ok(())
        } else {
            Err(AggregationError::LengthMismatch { expected, got: self.len() })
        }
    }
}

fn check_coefficients(alpha: f64, beta: f64, gamma: f64) -> Result<(), String> {
    if [alpha, beta, gamma].iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
        return Err("coefficients must be finite and non-negative".into());
    }
    let sum = alpha + beta + gamma;
    if (sum - 1.0).abs() > WEIGHT_SUM_EPS {
        return Err(format!("alpha+beta+gamma = {sum}, expected 1"));
    }
    Ok(())
}

/// Coefficients for consistency, expertise and agreement in annotator weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DynamicWeightConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl DynamicWeightConfig {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, AggregationError> {
        check_coefficients(alpha, beta, gamma).map_err(AggregationError::InvalidConfig)?;
        Ok(Self { alpha, beta, gamma })
    }

    pub fn validate(&self) -> Result<(), AggregationError> {
        Self::new(self.alpha, self.beta, self.gamma).map(|_| ())
    }
}

impl Default for DynamicWeightConfig {
    fn default() -> Self {
        Self { alpha: 1.0 / 3.0, beta: 1.0 / 3.0, gamma: 1.0 / 3.0 }
    }
}

pub(crate) fn validate_unit_coefficients(alpha: f64, beta: f64, gamma: f64) -> Result<(), String> {
    check_coefficients(alpha, beta, gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AggregationMethod {
    #[serde(rename = "simple")]
    SimpleAverage,
    #[serde(rename = "weighted")]
    WeightedAverage,
    #[serde(rename = "ifwa")]
    Ifwa,
    #[serde(rename = "dynamic")]
    DynamicWeighting,
}

impl AggregationMethod {
    pub const ALL: [AggregationMethod; 4] = [
        AggregationMethod::SimpleAverage,
        AggregationMethod::WeightedAverage,
        AggregationMethod::Ifwa,
        AggregationMethod::DynamicWeighting,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AggregationMethod::SimpleAverage => "simple",
            AggregationMethod::WeightedAverage => "weighted",
            AggregationMethod::Ifwa => "ifwa",
            AggregationMethod::DynamicWeighting => "dynamic",
        }
    }
}

impl fmt::Display for AggregationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AggregationMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method {s:?}; expected simple, weighted, ifwa or dynamic"))
    }
}

/// Which algebraic form of the weighted averaging operator to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum IfwaForm {
    /// `(1 - prod (1 - mu_i)^w_i, prod nu_i^w_i)`.
    #[default]
    #[serde(rename = "standard")]
    Standard,
    /// `(prod (1 - mu_i)^w_i, 1 - prod (1 - nu_i)^w_i)`. Not idempotent, and
    /// may violate `mu + nu <= 1` on extreme inputs.
    #[serde(rename = "literal")]
    Literal,
}

impl FromStr for IfwaForm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard" => Ok(IfwaForm::Standard),
            "literal" => Ok(IfwaForm::Literal),
            other => Err(format!("unknown IFWA form {other:?}; expected standard or literal")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Winner {
    Response(String),
    Tie,
}

impl Winner {
    pub fn response(&self) -> Option<&str> {
        match self {
            Winner::Response(id) => Some(id),
            Winner::Tie => None,
        }
    }
}

// A tie is written as JSON null so that no response id is reserved.
impl Serialize for Winner {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.response().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Winner {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(match Option::<String>::deserialize(d)? {
            Some(id) => Winner::Response(id),
            None => Winner::Tie,
        })
    }
}

/// Consensus labels for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedPreference {
    pub task_id: String,
    pub labels: BTreeMap<String, IfsValue>,
    pub winner: Winner,
    pub margin: f64,
    pub method: AggregationMethod,
}

impl AggregatedPreference {
    /// Derives winner and margin from the defuzzified label scores.
    pub fn from_labels(task_id: impl Into<String>, method: AggregationMethod, labels: BTreeMap<String, IfsValue>) -> Self {
        let (winner, margin) = pick_winner(&labels);
        Self { task_id: task_id.into(), labels, winner, margin, method }
    }
}

fn pick_winner(labels: &BTreeMap<String, IfsValue>) -> (Winner, f64) {
    let mut scored: Vec<(&String, f64)> = labels.iter().map(|(id, v)| (id, v.defuzzify())).collect();
    // Stable sort keeps id order among equal scores.
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    match scored.as_slice() {
        [] => (Winner::Tie, 0.0),
        [(only, _)] => (Winner::Response((*only).clone()), 0.0),
        [(best, s1), (_, s2), ..] => {
            let margin = (s1 - s2).max(0.0);
            if margin < TIE_EPS {
                (Winner::Tie, margin)
            } else {
                (Winner::Response((*best).clone()), margin)
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelRecord {
    mu: f64,
    nu: f64,
    pi: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AggregateRecord {
    task_id: String,
    method: AggregationMethod,
    labels: BTreeMap<String, LabelRecord>,
    winner: Winner,
    margin: f64,
}

impl Serialize for AggregatedPreference {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        AggregateRecord {
            task_id: self.task_id.clone(),
            method: self.method,
            labels: self
                .labels
                .iter()
                .map(|(id, v)| (id.clone(), LabelRecord { mu: v.mu(), nu: v.nu(), pi: v.hesitation() }))
                .collect(),
            winner: self.winner.clone(),
            margin: self.margin,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for AggregatedPreference {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let rec = AggregateRecord::deserialize(d)?;
        let mut labels = BTreeMap::new();
        for (id, l) in rec.labels {
            let v = IfsValue::new(l.mu, l.nu).map_err(D::Error::custom)?;
            if (v.hesitation() - l.pi).abs() > DEFAULT_EPS {
                return Err(D::Error::custom(format!("pi for {id} disagrees with 1-mu-nu")));
            }
            labels.insert(id, v);
        }
        if !(rec.margin.is_finite() && rec.margin >= 0.0) {
            return Err(D::Error::custom("margin must be non-negative"));
        }
        Ok(Self { task_id: rec.task_id, labels, winner: rec.winner, margin: rec.margin, method: rec.method })
    }
}

fn same_keys<V, W>(a: &BTreeMap<String, V>, b: &BTreeMap<String, W>) -> bool {
    a.len() == b.len() && a.keys().zip(b.keys()).all(|(x, y)| x == y)
}

/// Weighted mean of per-criterion labels, response by response.
pub fn aggregate_criteria(
    per_criterion: &[BTreeMap<String, IfsValue>],
    weights: &WeightVector,
) -> Result<BTreeMap<String, IfsValue>, AggregationError> {
    let first = per_criterion.first().ok_or(AggregationError::EmptyInput)?;
    weights.require_len(per_criterion.len())?;
    weights.require_normalized()?;
    if let Some(bad) = per_criterion.iter().find(|c| !same_keys(c, first)) {
        return Err(AggregationError::ResponseMismatch(format!(
            "criterion covers {:?}, expected {:?}",
            bad.keys().collect::<Vec<_>>(),
            first.keys().collect::<Vec<_>>()
        )));
    }
    first
        .keys()
        .map(|id| {
            let (mu, nu) = per_criterion
                .iter()
                .zip(weights.as_slice())
                .fold((0.0, 0.0), |(mu, nu), (c, w)| (mu + w * c[id].mu(), nu + w * c[id].nu()));
            Ok((id.clone(), IfsValue::new(mu, nu)?))
        })
        .collect()
}

/// Intuitionistic fuzzy weighted average of `values`.
pub fn ifwa(values: &[IfsValue], weights: &WeightVector, form: IfwaForm) -> Result<IfsValue, AggregationError> {
    if values.is_empty() {
        return Err(AggregationError::EmptyInput);
    }
    weights.require_len(values.len())?;
    weights.require_normalized()?;
    let pairs = || values.iter().zip(weights.as_slice());
    let prod_one_minus_mu: f64 = pairs().map(|(v, w)| (1.0 - v.mu()).powf(*w)).product();
    let (mu, nu) = match form {
        IfwaForm::Standard => {
            let prod_nu: f64 = pairs().map(|(v, w)| v.nu().powf(*w)).product();
            // The exact result lies in the hull of the inputs; clamping there
            // removes rounding drift and makes equal inputs map to themselves.
            let hull = |f: fn(&IfsValue) -> f64| {
                values.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
            };
            let (lo_mu, hi_mu) = hull(IfsValue::mu);
            let (lo_nu, hi_nu) = hull(IfsValue::nu);
            ((1.0 - prod_one_minus_mu).clamp(lo_mu, hi_mu), prod_nu.clamp(lo_nu, hi_nu))
        }
        IfwaForm::Literal => {
            let prod_one_minus_nu: f64 = pairs().map(|(v, w)| (1.0 - v.nu()).powf(*w)).product();
            (prod_one_minus_mu, 1.0 - prod_one_minus_nu)
        }
    };
    Ok(IfsValue::new(mu.clamp(0.0, 1.0), nu.clamp(0.0, 1.0))?)
}

/// Which responses went through the `mu + nu > 1` rescaling step.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NormalizationTrace {
    pub rescaled: Vec<String>,
}

impl NormalizationTrace {
    pub fn fired(&self) -> bool {
        !self.rescaled.is_empty()
    }
}

/// Weighted consensus of several annotators' labels on one task.
pub fn aggregate_annotators<A: Borrow<Annotation>>(
    annotations: &[A],
    weights: &WeightVector,
    method: AggregationMethod,
) -> Result<AggregatedPreference, AggregationError> {
    aggregate_annotators_traced(annotations, weights, method).map(|(agg, _)| agg)
}

/// [`aggregate_annotators`] that also reports whether rescaling happened.
pub fn aggregate_annotators_traced<A: Borrow<Annotation>>(
    annotations: &[A],
    weights: &WeightVector,
    method: AggregationMethod,
) -> Result<(AggregatedPreference, NormalizationTrace), AggregationError> {
    let first = annotations.first().ok_or(AggregationError::EmptyInput)?.borrow();
    weights.require_len(annotations.len())?;
    for a in annotations.iter().map(Borrow::borrow) {
        if a.task_id != first.task_id {
            return Err(AggregationError::TaskMismatch { expected: first.task_id.clone(), found: a.task_id.clone() });
        }
        if !same_keys(&a.labels, &first.labels) {
            return Err(AggregationError::ResponseMismatch(format!(
                "annotation {} covers a different response set",
                a.annotation_id
            )));
        }
    }
    let eps = Tolerance::default().eps();
    let mut trace = NormalizationTrace::default();
    let mut labels = BTreeMap::new();
    for id in first.labels.keys() {
        let (mut mu, mut nu) = annotations
            .iter()
            .zip(weights.as_slice())
            .fold((0.0, 0.0), |(mu, nu), (a, w)| {
                let v = a.borrow().labels[id];
                (mu + w * v.mu(), nu + w * v.nu())
            });
        let total = mu + nu;
        if total > 1.0 + eps {
            // Both components share the pre-rescaling denominator.
            mu /= total;
            nu /= total;
            trace.rescaled.push(id.clone());
        }
        labels.insert(id.clone(), IfsValue::new(mu.min(1.0), nu.min(1.0))?);
    }
    Ok((AggregatedPreference::from_labels(first.task_id.clone(), method, labels), trace))
}

/// Annotator weights from reliability components, normalized to sum 1.
pub fn dynamic_weights(
    profiles: &[AnnotatorProfile],
    config: &DynamicWeightConfig,
) -> Result<WeightVector, AggregationError> {
    config.validate()?;
    let raw = profiles
        .iter()
        .map(|p| {
            for (name, x) in [("consistency", p.consistency), ("expertise", p.expertise), ("agreement", p.agreement)] {
                if !(0.0..=1.0).contains(&x) {
                    return Err(AggregationError::InvalidProfile(format!("{} has {name}={x}", p.annotator_id)));
                }
            }
            Ok(config.alpha * p.consistency + config.beta * p.expertise + config.gamma * p.agreement)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(WeightVector::new(raw)?.normalize())
}

/// `1 - 4 Var(pi)` over every hesitation degree in the annotations.
pub fn consistency_score<A: Borrow<Annotation>>(annotations: &[A]) -> Result<f64, AggregationError> {
    let hs: Vec<f64> = annotations.iter().flat_map(|a| a.borrow().hesitations().collect::<Vec<_>>()).collect();
    if hs.is_empty() {
        return Err(AggregationError::EmptyInput);
    }
    let n = hs.len() as f64;
    let mean = hs.iter().sum::<f64>() / n;
    let var = hs.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / n;
    Ok((1.0 - 4.0 * var).clamp(0.0, 1.0))
}

/// Fraction of annotated gold tasks on which the annotator's top-scored
/// response is the gold one. A tie counts as a miss.
pub fn expertise_score<A, T>(annotations: &[A], gold_tasks: &[T]) -> f64
where
    A: Borrow<Annotation>,
    T: Borrow<ComparisonTask>,
{
    let gold: HashMap<&str, &str> = gold_tasks
        .iter()
        .map(Borrow::borrow)
        .filter_map(|t| t.gold_preference.as_deref().map(|g| (t.task_id.as_str(), g)))
        .collect();
    // Later annotations of the same task replace earlier ones.
    let mut verdicts: HashMap<&str, bool> = HashMap::new();
    for a in annotations.iter().map(Borrow::borrow) {
        if let Some(g) = gold.get(a.task_id.as_str()) {
            let (winner, _) = pick_winner(&a.labels);
            verdicts.insert(a.task_id.as_str(), winner.response() == Some(*g));
        }
    }
    if verdicts.is_empty() {
        return NEUTRAL_SCORE;
    }
    verdicts.values().filter(|ok| **ok).count() as f64 / verdicts.len() as f64
}

// Ordered so that floating-point sums over groups are reproducible.
fn group_by_task<'a, A: Borrow<Annotation>>(all: &'a [A]) -> BTreeMap<&'a str, Vec<&'a Annotation>> {
    let mut groups: BTreeMap<&str, Vec<&Annotation>> = BTreeMap::new();
    for a in all.iter().map(Borrow::borrow) {
        groups.entry(a.task_id.as_str()).or_default().push(a);
    }
    groups
}

fn agreement_in_groups(annotator_id: &str, groups: &BTreeMap<&str, Vec<&Annotation>>) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for group in groups.values() {
        for mine in group.iter().filter(|a| a.annotator_id == annotator_id) {
            for other in group.iter().filter(|a| a.annotator_id != annotator_id) {
                for (rid, v) in &mine.labels {
                    if let Some(w) = other.labels.get(rid) {
                        total += v.distance(w);
                        count += 1;
                    }
                }
            }
        }
    }
    if count == 0 {
        NEUTRAL_SCORE
    } else {
        1.0 - total / count as f64
    }
}

/// One minus the mean distance to co-annotators' labels on shared items.
pub fn agreement_score<A: Borrow<Annotation>>(annotator_id: &str, all_annotations: &[A]) -> f64 {
    agreement_in_groups(annotator_id, &group_by_task(all_annotations))
}

/// Reliability profile of every annotator in the dataset, sorted by id,
/// with weights from [`dynamic_weights`].
pub fn annotator_profiles(
    dataset: &Dataset<'_>,
    config: &DynamicWeightConfig,
    exec: Execution,
) -> Result<Vec<AnnotatorProfile>, AggregationError> {
    config.validate()?;
    let annotators: Vec<&str> = dataset
        .annotations
        .iter()
        .map(|a| a.annotator_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let groups = group_by_task(&dataset.annotations);
    let gold: Vec<&ComparisonTask> = dataset.tasks.iter().copied().filter(|t| t.is_gold()).collect();
    let mut profiles = exec.try_map(&annotators, |id| {
        let own: Vec<&Annotation> = dataset.annotations.iter().copied().filter(|a| a.annotator_id == *id).collect();
        Ok::<_, AggregationError>(AnnotatorProfile::new(
            *id,
            consistency_score(&own)?,
            expertise_score(&own, &gold),
            agreement_in_groups(id, &groups),
        ))
    })?;
    let weights = dynamic_weights(&profiles, config)?;
    for (p, w) in profiles.iter_mut().zip(weights.as_slice()) {
        p.weight = *w;
    }
    Ok(profiles)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AggregateOptions {
    /// Coefficients for [`AggregationMethod::DynamicWeighting`].
    pub dynamic: DynamicWeightConfig,
    pub ifwa_form: IfwaForm,
}

/// Aggregates every task that has at least one live annotation, in task order.
///
/// Annotators within a task are ordered by id. `weighted` uses
/// expertise-proportional weights, `dynamic` the full reliability weights;
/// both are renormalized over the annotators present on each task.
pub fn aggregate_dataset(
    dataset: &Dataset<'_>,
    method: AggregationMethod,
    options: &AggregateOptions,
    exec: Execution,
) -> Result<Vec<AggregatedPreference>, AggregationError> {
    let mut groups = group_by_task(&dataset.annotations);
    for g in groups.values_mut() {
        g.sort_by(|a, b| a.annotator_id.cmp(&b.annotator_id));
    }
    let reliability: HashMap<String, f64> = match method {
        AggregationMethod::SimpleAverage | AggregationMethod::Ifwa => HashMap::new(),
        AggregationMethod::WeightedAverage => annotator_profiles(dataset, &options.dynamic, exec)?
            .into_iter()
            .map(|p| (p.annotator_id, p.expertise))
            .collect(),
        AggregationMethod::DynamicWeighting => annotator_profiles(dataset, &options.dynamic, exec)?
            .into_iter()
            .map(|p| (p.annotator_id, p.weight))
            .collect(),
    };
    let work: Vec<(&str, &[&Annotation])> = dataset
        .tasks
        .iter()
        .filter_map(|t| groups.get(t.task_id.as_str()).map(|g| (t.task_id.as_str(), g.as_slice())))
        .collect();
    exec.try_map(&work, |(_, group)| match method {
        AggregationMethod::SimpleAverage => aggregate_annotators(group, &WeightVector::uniform(group.len()), method),
        AggregationMethod::WeightedAverage | AggregationMethod::DynamicWeighting => {
            let raw = group.iter().map(|a| reliability[&a.annotator_id]).collect();
            aggregate_annotators(group, &WeightVector::new(raw)?.normalize(), method)
        }
        AggregationMethod::Ifwa => {
            let first = group[0];
            let weights = WeightVector::uniform(group.len());
            let mut labels = BTreeMap::new();
            for id in first.labels.keys() {
                let values = group
                    .iter()
                    .map(|a| {
                        a.labels.get(id).copied().ok_or_else(|| {
                            AggregationError::ResponseMismatch(format!("annotation {} lacks {id}", a.annotation_id))
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                labels.insert(id.clone(), ifwa(&values, &weights, options.ifwa_form)?);
            }
            Ok(AggregatedPreference::from_labels(first.task_id.clone(), method, labels))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::DateTime;
    use proptest::prelude::*;

    fn v(mu: f64, nu: f64) -> IfsValue {
        IfsValue::new(mu, nu).unwrap()
    }

    fn labels(pairs: &[(&str, IfsValue)]) -> BTreeMap<String, IfsValue> {
        pairs.iter().map(|(k, x)| (k.to_string(), *x)).collect()
    }

    fn ann(task: &str, who: &str, l: &[(&str, IfsValue)]) -> Annotation {
        Annotation {
            annotation_id: format!("{task}-{who}"),
            task_id: task.into(),
            annotator_id: who.into(),
            labels: labels(l),
            per_criterion: None,
            duration_ms: 0,
            timestamp: DateTime::UNIX_EPOCH,
        }
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn weight_vector_validation() {
        assert!(WeightVector::new(vec![0.5, -0.1]).is_err());
        assert!(WeightVector::new(vec![f64::NAN]).is_err());
        assert!(WeightVector::normalized(vec![0.5, 0.4]).is_err());
        assert!(WeightVector::normalized(vec![0.5, 0.5]).is_ok());
        assert_eq!(WeightVector::new(vec![0.0, 0.0]).unwrap().normalize().as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn criteria_examples() {
        let out = aggregate_criteria(
            &[labels(&[("r1", v(0.8, 0.1))]), labels(&[("r1", v(0.4, 0.5))])],
            &WeightVector::normalized(vec![0.7, 0.3]).unwrap(),
        )
        .unwrap();
        assert!(out["r1"].approx_eq(&v(0.68, 0.22), 1e-12));
        assert!(close(out["r1"].hesitation(), 0.10, 1e-12));

        let single = aggregate_criteria(&[labels(&[("r1", v(0.3, 0.2))])], &WeightVector::uniform(1)).unwrap();
        assert_eq!(single["r1"], v(0.3, 0.2));

        let w = WeightVector::normalized(vec![0.2, 0.5, 0.3]).unwrap();
        let same = vec![labels(&[("r1", v(0.5, 0.3))]); 3];
        assert!(aggregate_criteria(&same, &w).unwrap()["r1"].approx_eq(&v(0.5, 0.3), 1e-15));
    }

    #[test]
    fn criteria_errors() {
        let c = vec![labels(&[("r1", v(0.5, 0.3))]); 2];
        assert!(matches!(
            aggregate_criteria(&c, &WeightVector::uniform(3)),
            Err(AggregationError::LengthMismatch { .. })
        ));
        assert!(matches!(
            aggregate_criteria(&c, &WeightVector::new(vec![0.5, 0.6]).unwrap()),
            Err(AggregationError::InvalidWeights(_))
        ));
        let mixed = vec![labels(&[("r1", v(0.5, 0.3))]), labels(&[("r2", v(0.5, 0.3))])];
        assert!(matches!(
            aggregate_criteria(&mixed, &WeightVector::uniform(2)),
            Err(AggregationError::ResponseMismatch(_))
        ));
    }

    #[test]
    fn ifwa_examples() {
        let w = WeightVector::uniform(2);
        let xs = [v(0.8, 0.1), v(0.6, 0.3)];
        let std = ifwa(&xs, &w, IfwaForm::Standard).unwrap();
        assert!(close(std.mu(), 1.0 - 0.08f64.sqrt(), 1e-12));
        assert!(close(std.nu(), 0.03f64.sqrt(), 1e-12));
        assert!(close(std.mu(), 0.717_157_287_525_381, 1e-12));
        assert!(close(std.nu(), 0.173_205_080_756_888, 1e-12));

        let lit = ifwa(&xs, &w, IfwaForm::Literal).unwrap();
        assert!(close(lit.mu(), 0.08f64.sqrt(), 1e-12));
        assert!(close(lit.nu(), 1.0 - 0.63f64.sqrt(), 1e-12));

        let w3 = WeightVector::normalized(vec![0.1, 0.6, 0.3]).unwrap();
        let same = ifwa(&[v(0.5, 0.3); 3], &w3, IfwaForm::Standard).unwrap();
        assert!(same.approx_eq(&v(0.5, 0.3), 1e-15));
    }

    #[test]
    fn ifwa_errors() {
        assert!(matches!(ifwa(&[], &WeightVector::uniform(0), IfwaForm::Standard), Err(AggregationError::EmptyInput)));
        assert!(matches!(
            ifwa(&[v(0.1, 0.1)], &WeightVector::uniform(2), IfwaForm::Standard),
            Err(AggregationError::LengthMismatch { .. })
        ));
        // Literal form: low support and low opposition flip to a contradiction.
        let r = ifwa(&[v(0.0, 0.9), v(0.0, 0.9)], &WeightVector::uniform(2), IfwaForm::Literal);
        assert!(matches!(r, Err(AggregationError::Ifs(IfsError::ConstraintViolated { .. }))));
    }

    #[test]
    fn annotator_examples() {
        let a = ann("t", "a1", &[("r1", v(0.8, 0.1)), ("r2", v(0.2, 0.6))]);
        let b = ann("t", "a2", &[("r1", v(0.6, 0.3)), ("r2", v(0.3, 0.5))]);
        let (agg, trace) =
            aggregate_annotators_traced(&[&a, &b], &WeightVector::uniform(2), AggregationMethod::SimpleAverage).unwrap();
        assert!(!trace.fired());
        assert!(agg.labels["r1"].approx_eq(&v(0.7, 0.2), 1e-12));
        assert!(close(agg.labels["r1"].hesitation(), 0.1, 1e-12));
        assert_eq!(agg.winner, Winner::Response("r1".into()));

        let solo = aggregate_annotators(&[&a], &WeightVector::uniform(1), AggregationMethod::SimpleAverage).unwrap();
        assert_eq!(solo.labels, a.labels);

        let (agg, trace) = aggregate_annotators_traced(
            &[&a, &b],
            &WeightVector::new(vec![0.8, 0.8]).unwrap(),
            AggregationMethod::WeightedAverage,
        )
        .unwrap();
        assert!(trace.rescaled.contains(&"r1".to_string()));
        assert!(close(agg.labels["r1"].mu(), 1.12 / 1.44, 1e-12));
        assert!(close(agg.labels["r1"].nu(), 0.32 / 1.44, 1e-12));
        assert!(close(agg.labels["r1"].mu(), 0.77778, 1e-5));
        assert_eq!(agg.labels["r1"].hesitation(), 0.0);
    }

    #[test]
    fn annotator_errors() {
        let a = ann("t", "a1", &[("r1", v(0.8, 0.1))]);
        let other_task = ann("u", "a2", &[("r1", v(0.8, 0.1))]);
        let other_resp = ann("t", "a2", &[("r2", v(0.8, 0.1))]);
        let w = WeightVector::uniform(2);
        assert!(matches!(
            aggregate_annotators::<&Annotation>(&[], &w, AggregationMethod::SimpleAverage),
            Err(AggregationError::EmptyInput)
        ));
        assert!(matches!(
            aggregate_annotators(&[&a, &other_task], &w, AggregationMethod::SimpleAverage),
            Err(AggregationError::TaskMismatch { .. })
        ));
        assert!(matches!(
            aggregate_annotators(&[&a, &other_resp], &w, AggregationMethod::SimpleAverage),
            Err(AggregationError::ResponseMismatch(_))
        ));
        assert!(matches!(
            aggregate_annotators(&[&a], &w, AggregationMethod::SimpleAverage),
            Err(AggregationError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn winner_and_tie() {
        let tie = AggregatedPreference::from_labels(
            "t",
            AggregationMethod::SimpleAverage,
            labels(&[("a", v(0.4, 0.4)), ("b", v(0.0, 0.0))]),
        );
        assert_eq!(tie.winner, Winner::Tie);
        assert_eq!(tie.margin, 0.0);
        let clear = AggregatedPreference::from_labels(
            "t",
            AggregationMethod::SimpleAverage,
            labels(&[("a", v(0.2, 0.6)), ("b", v(0.8, 0.1)), ("c", v(0.5, 0.5))]),
        );
        assert_eq!(clear.winner, Winner::Response("b".into()));
        assert!(close(clear.margin, 0.85 - 0.5, 1e-12));
    }

    #[test]
    fn aggregate_json_shape() {
        let agg = AggregatedPreference::from_labels(
            "t1",
            AggregationMethod::DynamicWeighting,
            labels(&[("r1", v(0.7, 0.2)), ("r2", v(0.2, 0.6))]),
        );
        let json = serde_json::to_value(&agg).unwrap();
        assert_eq!(json["method"], "dynamic");
        assert_eq!(json["winner"], "r1");
        assert!(close(json["labels"]["r1"]["pi"].as_f64().unwrap(), 0.1, 1e-12));
        let back: AggregatedPreference = serde_json::from_value(json).unwrap();
        assert_eq!(back, agg);

        let tie = AggregatedPreference::from_labels("t", AggregationMethod::SimpleAverage, labels(&[("a", v(0.4, 0.4)), ("b", v(0.4, 0.4))]));
        assert!(serde_json::to_value(&tie).unwrap()["winner"].is_null());
        let bad_pi = r#"{"task_id":"t","method":"simple","labels":{"r1":{"mu":0.5,"nu":0.2,"pi":0.9}},"winner":"r1","margin":0.0}"#;
        assert!(serde_json::from_str::<AggregatedPreference>(bad_pi).is_err());
    }

    #[test]
    fn dynamic_weight_examples() {
        let cfg = DynamicWeightConfig::default();
        let one = dynamic_weights(&[AnnotatorProfile::new("a", 0.2, 0.9, 0.1)], &cfg).unwrap();
        assert_eq!(one.as_slice(), &[1.0]);

        let w = dynamic_weights(
            &[AnnotatorProfile::new("a", 0.9, 0.8, 0.7), AnnotatorProfile::new("b", 0.3, 0.4, 0.5)],
            &cfg,
        )
        .unwrap();
        assert!(close(w.as_slice()[0], 2.0 / 3.0, 1e-12));
        assert!(close(w.as_slice()[1], 1.0 / 3.0, 1e-12));

        let same = dynamic_weights(&vec![AnnotatorProfile::new("a", 0.4, 0.5, 0.6); 4], &cfg).unwrap();
        assert!(same.as_slice().iter().all(|w| close(*w, 0.25, 1e-15)));

        assert!(DynamicWeightConfig::new(0.5, 0.5, 0.5).is_err());
        assert!(DynamicWeightConfig::new(-0.1, 0.6, 0.5).is_err());
        assert!(dynamic_weights(&[AnnotatorProfile::new("a", 1.2, 0.5, 0.5)], &cfg).is_err());
    }

    fn with_hesitations(hs: &[f64]) -> Vec<Annotation> {
        hs.iter().map(|h| ann("t", "a", &[("r1", v(1.0 - h, 0.0))])).collect()
    }

    #[test]
    fn consistency_examples() {
        assert!(close(consistency_score(&with_hesitations(&[0.1, 0.1, 0.1])).unwrap(), 1.0, 1e-12));
        assert!(close(consistency_score(&with_hesitations(&[0.0, 1.0])).unwrap(), 0.0, 1e-12));
        assert!(close(consistency_score(&with_hesitations(&[0.2, 0.4])).unwrap(), 0.96, 1e-12));
        assert!(matches!(consistency_score::<Annotation>(&[]), Err(AggregationError::EmptyInput)));
    }

    fn gold_task(id: &str, gold: Option<&str>) -> ComparisonTask {
        ComparisonTask {
            task_id: id.into(),
            prompt: String::new(),
            responses: vec![],
            criteria: None,
            gold_preference: gold.map(str::to_string),
        }
    }

    #[test]
    fn expertise_examples() {
        let tasks: Vec<_> = (0..4).map(|i| gold_task(&format!("g{i}"), Some("r1"))).collect();
        let right = [("r1", v(0.8, 0.1)), ("r2", v(0.2, 0.6))];
        let wrong = [("r1", v(0.2, 0.6)), ("r2", v(0.8, 0.1))];
        let anns = vec![
            ann("g0", "a", &right),
            ann("g1", "a", &right),
            ann("g2", "a", &wrong),
            ann("g3", "a", &right),
            ann("x", "a", &wrong),
        ];
        assert!(close(expertise_score(&anns, &tasks), 0.75, 1e-15));
        assert_eq!(expertise_score(&anns[..2], &tasks), 1.0);
        assert_eq!(expertise_score(&anns[4..], &tasks), 0.5);
        let no_gold = [gold_task("g0", None)];
        assert_eq!(expertise_score(&anns, &no_gold), 0.5);
    }

    #[test]
    fn agreement_examples() {
        let a = ann("t", "a", &[("r1", v(0.8, 0.1))]);
        let b = ann("t", "b", &[("r1", v(0.3, 0.2))]);
        let b_same = ann("t", "b", &[("r1", v(0.8, 0.1))]);
        assert_eq!(agreement_score("a", &[&a, &b_same]), 1.0);
        assert!(close(agreement_score("a", &[&a, &b]), 1.0 - 0.21f64.sqrt(), 1e-12));
        assert!(close(agreement_score("a", &[&a, &b]), 0.54174, 1e-5));
        let elsewhere = ann("u", "b", &[("r1", v(0.3, 0.2))]);
        assert_eq!(agreement_score("a", &[&a, &elsewhere]), 0.5);
    }

    fn valid() -> impl Strategy<Value = IfsValue> {
        (0.0..=1.0f64, 0.0..=1.0f64).prop_map(|(a, b)| v(a, (1.0 - a) * b))
    }

    fn normalized_weights(k: usize) -> impl Strategy<Value = WeightVector> {
        proptest::collection::vec(0.01..1.0f64, k).prop_map(|w| WeightVector::new(w).unwrap().normalize())
    }

    proptest! {
        #[test]
        fn ifwa_standard_bounded_and_idempotent(
            (xs, w) in (1usize..6).prop_flat_map(|k| (proptest::collection::vec(valid(), k), normalized_weights(k)))
        ) {
            let out = ifwa(&xs, &w, IfwaForm::Standard).unwrap();
            let lo_mu = xs.iter().map(|x| x.mu()).fold(f64::INFINITY, f64::min);
            let hi_mu = xs.iter().map(|x| x.mu()).fold(f64::NEG_INFINITY, f64::max);
            let lo_nu = xs.iter().map(|x| x.nu()).fold(f64::INFINITY, f64::min);
            let hi_nu = xs.iter().map(|x| x.nu()).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(out.mu() >= lo_mu && out.mu() <= hi_mu);
            prop_assert!(out.nu() >= lo_nu && out.nu() <= hi_nu);
            let same = ifwa(&vec![xs[0]; xs.len()], &w, IfwaForm::Standard).unwrap();
            prop_assert_eq!(same, xs[0]);
        }

        #[test]
        fn dynamic_weights_permutation_equivariant(
            comps in proptest::collection::vec((0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64), 1..8),
            rot in 0usize..8,
        ) {
            let profiles: Vec<_> = comps.iter().enumerate()
                .map(|(i, (c, e, a))| AnnotatorProfile::new(format!("a{i}"), *c, *e, *a)).collect();
            let cfg = DynamicWeightConfig::default();
            let w = dynamic_weights(&profiles, &cfg).unwrap();
            prop_assert!((w.sum() - 1.0).abs() <= 1e-12);
            let mut rotated = profiles.clone();
            rotated.rotate_left(rot % profiles.len());
            let wr = dynamic_weights(&rotated, &cfg).unwrap();
            let mut expected = w.as_slice().to_vec();
            expected.rotate_left(rot % profiles.len());
            for (x, y) in wr.as_slice().iter().zip(&expected) {
                prop_assert!((x - y).abs() <= 1e-15);
            }
        }

        #[test]
        fn raising_a_component_never_lowers_weight(
            comps in proptest::collection::vec((0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64), 1..6),
            which in 0usize..3,
            bump in 0.0..1.0f64,
            (a, b) in (0.0..=1.0f64, 0.0..=1.0f64),
        ) {
            let cfg = DynamicWeightConfig::new(a / 2.0, (1.0 - a / 2.0) * b, 1.0 - a / 2.0 - (1.0 - a / 2.0) * b).unwrap();
            let profiles: Vec<_> = comps.iter().enumerate()
                .map(|(i, (c, e, g))| AnnotatorProfile::new(format!("a{i}"), *c, *e, *g)).collect();
            let before = dynamic_weights(&profiles, &cfg).unwrap().as_slice()[0];
            let mut raised = profiles.clone();
            let p = &mut raised[0];
            let field = match which { 0 => &mut p.consistency, 1 => &mut p.expertise, _ => &mut p.agreement };
            *field += (1.0 - *field) * bump;
            let after = dynamic_weights(&raised, &cfg).unwrap().as_slice()[0];
            prop_assert!(after >= before - 1e-15);
        }
    }
}
