use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::ifs::{IfsValue, RawIfs};
use crate::store::StoreError;

/// Weight sums must hit 1 within this slack.
pub const WEIGHT_SUM_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseOption {
    pub response_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Criterion {
    pub name: String,
    pub weight: f64,
}

/// A prompt with two or more candidate responses to compare.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonTask {
    pub task_id: String,
    pub prompt: String,
    pub responses: Vec<ResponseOption>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criteria: Option<Vec<Criterion>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_preference: Option<String>,
}

impl ComparisonTask {
    pub fn validate(&self) -> Result<(), StoreError> {
        let schema = |reason: String| Err(StoreError::Schema { reason });
        if self.task_id.is_empty() {
            return schema("task_id is empty".into());
        }
        if self.responses.len() < 2 {
            return schema("responses length < 2".into());
        }
        let mut seen = BTreeSet::new();
        for r in &self.responses {
            if r.response_id.is_empty() {
                return schema("response_id is empty".into());
            }
            if !seen.insert(r.response_id.as_str()) {
                return schema(format!("duplicate response_id {}", r.response_id));
            }
        }
        if let Some(criteria) = &self.criteria {
            if criteria.is_empty() {
                return schema("criteria list is empty".into());
            }
            let mut names = BTreeSet::new();
            for c in criteria {
                if !names.insert(c.name.as_str()) {
                    return schema(format!("duplicate criterion {}", c.name));
                }
                if !(c.weight.is_finite() && c.weight >= 0.0) {
                    return schema(format!("criterion {} has invalid weight", c.name));
                }
            }
            let sum: f64 = criteria.iter().map(|c| c.weight).sum();
            if (sum - 1.0).abs() > WEIGHT_SUM_EPS {
                return schema(format!("criteria weights sum to {sum}, expected 1"));
            }
        }
        if let Some(gold) = &self.gold_preference {
            if !seen.contains(gold.as_str()) {
                return schema(format!("gold_preference {gold} is not a response_id"));
            }
        }
        Ok(())
    }

    pub fn response_ids(&self) -> impl Iterator<Item = &str> {
        self.responses.iter().map(|r| r.response_id.as_str())
    }

    pub fn has_response(&self, id: &str) -> bool {
        self.response_ids().any(|r| r == id)
    }

    pub fn is_gold(&self) -> bool {
        self.gold_preference.is_some()
    }
}

/// Per-criterion labels: criterion name, then response id.
pub type CriterionLabels = BTreeMap<String, BTreeMap<String, IfsValue>>;

/// One annotator's judgment on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    pub annotation_id: String,
    pub task_id: String,
    pub annotator_id: String,
    pub labels: BTreeMap<String, IfsValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_criterion: Option<CriterionLabels>,
    pub duration_ms: u64,
    #[serde(with = "timestamp")]
    pub timestamp: DateTime<Utc>,
}

impl Annotation {
    pub fn hesitations(&self) -> impl Iterator<Item = f64> + '_ {
        self.labels.values().map(IfsValue::hesitation)
    }
}

/// Unvalidated annotation body as received from a client.
///
/// `annotation_id` and `timestamp` may be left out; the store fills them in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationSubmission {
    #[serde(default)]
    pub annotation_id: Option<String>,
    pub task_id: String,
    pub annotator_id: String,
    pub labels: BTreeMap<String, RawIfs>,
    #[serde(default)]
    pub per_criterion: Option<BTreeMap<String, BTreeMap<String, RawIfs>>>,
    #[serde(default)]
    pub duration_ms: i64,
    #[serde(default)]
    pub timestamp: Option<String>,
}

/// Reliability components of one annotator and the resulting weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorProfile {
    pub annotator_id: String,
    pub consistency: f64,
    pub expertise: f64,
    pub agreement: f64,
    pub weight: f64,
}

impl AnnotatorProfile {
    pub fn new(annotator_id: impl Into<String>, consistency: f64, expertise: f64, agreement: f64) -> Self {
        Self {
            annotator_id: annotator_id.into(),
            consistency,
            expertise,
            agreement,
            weight: 0.0,
        }
    }
}

/// Soft pairwise label for preference-model training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferencePairRecord {
    pub task_id: String,
    pub response_a: String,
    pub response_b: String,
    pub p_a: f64,
    pub ifs_a: IfsValue,
    pub ifs_b: IfsValue,
}

/// ISO-8601 UTC with millisecond precision, e.g. `2025-01-01T00:00:00.000Z`.
pub mod timestamp {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn format(ts: &DateTime<Utc>) -> String {
        ts.to_rfc3339_opts(SecondsFormat::Millis, true)
    }

    pub fn parse(s: &str) -> Result<DateTime<Utc>, chrono::ParseError> {
        let parsed = DateTime::parse_from_rfc3339(s)?.with_timezone(&Utc);
        Ok(truncate_millis(parsed))
    }

    pub fn truncate_millis(ts: DateTime<Utc>) -> DateTime<Utc> {
        DateTime::from_timestamp_millis(ts.timestamp_millis()).unwrap_or(ts)
    }

    pub fn serialize<S: Serializer>(ts: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format(ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        parse(&raw).map_err(serde::de::Error::custom)
    }
}
