//! Synthetic annotator populations and task corpora.
//!
//! Each simulated annotator perceives the latent quality of every response
//! with additive bias and Gaussian noise, then reserves a share of its
//! judgment as hesitation that grows when the perceived responses are close:
//!
//! ```text
//! q_hat_j  = clamp(q_j + bias + N(0, noise_sigma), 0, 1)
//! pi       = clamp(base_hesitancy + ambiguity_sensitivity * (1 - spread), 0, 0.95)
//! mu_j     = q_hat_j * (1 - pi)
//! nu_j     = (1 - q_hat_j) * (1 - pi)
//! ```
//!
//! where `spread = max q_hat - min q_hat`. Every draw comes from a ChaCha8
//! stream seeded by a SHA-256 hash of `(master_seed, task_id, annotator_id)`,
//! so corpora are identical however the generation is scheduled.

use std::collections::BTreeMap;

use chrono::{DateTime, TimeDelta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::exec::Execution;
use crate::ifs::IfsValue;
use crate::store::{timestamp, Annotation, ComparisonTask, ResponseOption};

/// Upper bound on simulated hesitation.
pub const MAX_HESITATION: f64 = 0.95;

/// Timestamp of the first simulated annotation.
pub const SIM_EPOCH: &str = "2025-01-01T00:00:00.000Z";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimAnnotatorParams {
    pub noise_sigma: f64,
    pub base_hesitancy: f64,
    pub ambiguity_sensitivity: f64,
    #[serde(default)]
    pub bias: f64,
}

impl Default for SimAnnotatorParams {
    fn default() -> Self {
        Self { noise_sigma: 0.1, base_hesitancy: 0.1, ambiguity_sensitivity: 0.3, bias: 0.0 }
    }
}

impl SimAnnotatorParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |what: &str| Err(SimError::InvalidParams(what.to_string()));
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.base_hesitancy) {
            return bad("base_hesitancy must lie in [0, 1]");
        }
        if !(self.ambiguity_sensitivity.is_finite() && self.ambiguity_sensitivity >= 0.0) {
            return bad("ambiguity_sensitivity must be >= 0");
        }
        if !self.bias.is_finite() {
            return bad("bias must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimAnnotator {
    pub annotator_id: String,
    #[serde(flatten)]
    pub params: SimAnnotatorParams,
}

/// Latent response qualities for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTask {
    pub task_id: String,
    /// In response order.
    pub latent_quality: Vec<(String, f64)>,
}

impl SimTask {
    pub fn new(task_id: impl Into<String>, latent_quality: Vec<(String, f64)>) -> Result<Self, SimError> {
        if latent_quality.len() < 2 {
            return Err(SimError::InvalidParams("a task needs at least two responses".into()));
        }
        if latent_quality.iter().any(|(_, q)| !(0.0..=1.0).contains(q)) {
            return Err(SimError::InvalidParams("latent qualities must lie in [0, 1]".into()));
        }
        Ok(Self { task_id: task_id.into(), latent_quality })
    }

    /// Response with the highest latent quality.
    pub fn gold_preference(&self) -> &str {
        let mut best = &self.latent_quality[0];
        for q in &self.latent_quality[1..] {
            if q.1 > best.1 {
                best = q;
            }
        }
        &best.0
    }
}

/// Seed for one (task, annotator) stream.
pub fn derive_seed(master_seed: u64, task_id: &str, annotator_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    for part in [task_id, annotator_id] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn sim_epoch() -> DateTime<chrono::Utc> {
    timestamp::parse(SIM_EPOCH).expect("valid epoch")
}

/// One annotation of `task` by a simulated annotator.
///
/// The timestamp is derived from `ordinal` so that output is reproducible.
pub fn simulate_annotation(
    annotator_id: &str,
    params: &SimAnnotatorParams,
    task: &SimTask,
    rng_seed: u64,
    ordinal: u64,
) -> Annotation {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let perceived: Vec<f64> = task
        .latent_quality
        .iter()
        .map(|(_, q)| {
            let z: f64 = rng.sample(StandardNormal);
            (q + params.bias + params.noise_sigma * z).clamp(0.0, 1.0)
        })
        .collect();
    let hi = perceived.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = perceived.iter().copied().fold(f64::INFINITY, f64::min);
    let pi = (params.base_hesitancy + params.ambiguity_sensitivity * (1.0 - (hi - lo))).clamp(0.0, MAX_HESITATION);
    let labels: BTreeMap<String, IfsValue> = task
        .latent_quality
        .iter()
        .zip(&perceived)
        .map(|((rid, _), q)| {
            let v = IfsValue::new(q * (1.0 - pi), (1.0 - q) * (1.0 - pi)).expect("construction satisfies constraint");
            (rid.clone(), v)
        })
        .collect();
    // Hesitant annotators take longer.
    let duration_ms = 20_000 + (pi * 40_000.0) as u64 + rng.random_range(0..10_000);
    Annotation {
        annotation_id: format!("{}-{}", task.task_id, annotator_id),
        task_id: task.task_id.clone(),
        annotator_id: annotator_id.to_string(),
        labels,
        per_criterion: None,
        duration_ms,
        timestamp: sim_epoch() + TimeDelta::seconds(ordinal as i64),
    }
}

/// Simulation settings accepted as a single JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub annotators: Vec<SimAnnotator>,
    #[serde(default = "default_gold_fraction")]
    pub gold_fraction: f64,
    #[serde(default = "default_responses")]
    pub responses_per_task: usize,
}

fn default_gold_fraction() -> f64 {
    0.2
}

fn default_responses() -> usize {
    2
}

impl SimConfig {
    /// `k` annotators `a1..ak` with default parameters.
    pub fn uniform(k: usize) -> Self {
        Self {
            annotators: (1..=k)
                .map(|i| SimAnnotator { annotator_id: format!("a{i}"), params: SimAnnotatorParams::default() })
                .collect(),
            gold_fraction: default_gold_fraction(),
            responses_per_task: default_responses(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub tasks: Vec<ComparisonTask>,
    pub sim_tasks: Vec<SimTask>,
    /// Task-major: all annotators of task 1, then task 2, ...
    pub annotations: Vec<Annotation>,
}

impl Corpus {
    pub fn tasks_jsonl(&self) -> String {
        self.tasks.iter().map(|t| crate::canonical::to_canonical_line(t).expect("task serializes")).collect()
    }

    pub fn annotations_jsonl(&self) -> String {
        self.annotations.iter().map(|a| crate::canonical::to_canonical_line(a).expect("annotation serializes")).collect()
    }
}

/// Whether task `i` of `n` carries a gold label; spreads gold tasks evenly.
fn is_gold_task(i: usize, gold_fraction: f64) -> bool {
    ((i + 1) as f64 * gold_fraction).floor() > (i as f64 * gold_fraction).floor()
}

pub fn generate_corpus(
    n_tasks: usize,
    config: &SimConfig,
    master_seed: u64,
    exec: Execution,
) -> Result<Corpus, SimError> {
    if n_tasks == 0 {
        return Err(SimError::InvalidParams("n_tasks must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&config.gold_fraction) {
        return Err(SimError::InvalidParams("gold_fraction must lie in [0, 1]".into()));
    }
    if config.responses_per_task < 2 {
        return Err(SimError::InvalidParams("responses_per_task must be >= 2".into()));
    }
    if config.annotators.is_empty() {
        return Err(SimError::InvalidParams("at least one annotator is required".into()));
    }
    let mut ids = std::collections::BTreeSet::new();
    for a in &config.annotators {
        a.params.validate()?;
        if a.annotator_id.is_empty() || !ids.insert(a.annotator_id.as_str()) {
            return Err(SimError::InvalidParams(format!("annotator id {:?} is empty or repeated", a.annotator_id)));
        }
    }

    let width = n_tasks.to_string().len().max(4);
    let indices: Vec<usize> = (0..n_tasks).collect();
    let sim_tasks: Vec<SimTask> = exec.map(&indices, |i| {
        let task_id = format!("t{:0width$}", i + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, &task_id, ""));
        loop {
            let qs: Vec<(String, f64)> = (1..=config.responses_per_task)
                .map(|j| (format!("r{j}"), rng.random::<f64>()))
                .collect();
            let best = qs.iter().map(|q| q.1).fold(f64::NEG_INFINITY, f64::max);
            // Redraw on a tie for the top quality so gold is well defined.
            if qs.iter().filter(|q| q.1 == best).count() == 1 {
                return SimTask { task_id, latent_quality: qs };
            }
        }
    });
    let tasks: Vec<ComparisonTask> = sim_tasks
        .iter()
        .enumerate()
        .map(|(i, st)| ComparisonTask {
            task_id: st.task_id.clone(),
            prompt: format!("Synthetic prompt {}", i + 1),
            responses: st
                .latent_quality
                .iter()
                .map(|(rid, _)| ResponseOption { response_id: rid.clone(), text: format!("Synthetic response {rid} to prompt {}", i + 1) })
                .collect(),
            criteria: None,
            gold_preference: is_gold_task(i, config.gold_fraction).then(|| st.gold_preference().to_string()),
        })
        .collect();

    let k = config.annotators.len();
    let jobs: Vec<(usize, usize)> = (0..n_tasks).flat_map(|t| (0..k).map(move |a| (t, a))).collect();
    let annotations = exec.map(&jobs, |&(t, a)| {
        let st = &sim_tasks[t];
        let who = &config.annotators[a];
        let seed = derive_seed(master_seed, &st.task_id, &who.annotator_id);
        simulate_annotation(&who.annotator_id, &who.params, st, seed, (t * k + a) as u64)
    });
    Ok(Corpus { tasks, sim_tasks, annotations })
}
