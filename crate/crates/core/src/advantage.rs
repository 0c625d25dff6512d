//! Group-relative advantages.
//!
//! Three strategies turn grouped rewards into advantages:
//!
//! | strategy     | centre          | scale                              |
//! |--------------|-----------------|------------------------------------|
//! | `GroupScale` | group mean      | group population std + epsilon     |
//! | `BatchScale` | batch mean      | batch population std + epsilon     |
//! | `NoScale`    | group mean      | none                               |
//!
//! Groups whose rewards are all equal get all-zero advantages.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "group")]
    GroupScale,
    #[serde(rename = "batch")]
    BatchScale,
    #[serde(rename = "none")]
    NoScale,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::GroupScale => "group",
            Strategy::BatchScale => "batch",
            Strategy::NoScale => "none",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = AdvantageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "group" => Ok(Strategy::GroupScale),
            "batch" => Ok(Strategy::BatchScale),
            "none" => Ok(Strategy::NoScale),
            other => Err(AdvantageError::UnknownStrategy(other.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdvantageError {
    #[error("batch has no groups")]
    EmptyBatch,
    #[error("group {0} has no rewards")]
    EmptyGroup(usize),
    #[error("group {group} has a non-finite reward at position {index}")]
    NonFinite { group: usize, index: usize },
    #[error("unknown strategy `{0}` (expected group, batch or none)")]
    UnknownStrategy(String),
}

/// Rewards of the G completions sampled for one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardGroup {
    pub prompt_id: String,
    pub rewards: Vec<f64>,
}

impl RewardGroup {
    pub fn new(prompt_id: impl Into<String>, rewards: Vec<f64>) -> Self {
        RewardGroup {
            prompt_id: prompt_id.into(),
            rewards,
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn population_std(xs: &[f64], mean: f64) -> f64 {
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn is_constant(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] == w[1])
}

fn normalize(xs: &[f64], centre: f64, scale: Option<f64>, epsilon: f64) -> Vec<f64> {
    match scale {
        Some(std) => xs.iter().map(|x| (x - centre) / (std + epsilon)).collect(),
        None => xs.iter().map(|x| x - centre).collect(),
    }
}

fn validate<G: AsRef<[f64]>>(groups: &[G]) -> Result<(), AdvantageError> {
    if groups.is_empty() {
        return Err(AdvantageError::EmptyBatch);
    }
    for (g, group) in groups.iter().enumerate() {
        let group = group.as_ref();
        if group.is_empty() {
            return Err(AdvantageError::EmptyGroup(g));
        }
        if let Some(index) = group.iter().position(|r| !r.is_finite()) {
            return Err(AdvantageError::NonFinite { group: g, index });
        }
    }
    Ok(())
}

fn per_group<G: AsRef<[f64]>>(groups: &[G], epsilon: f64, scaled: bool) -> Vec<Vec<f64>> {
    groups
        .iter()
        .map(|g| {
            let g = g.as_ref();
            if is_constant(g) {
                return vec![0.0; g.len()];
            }
            let m = mean(g);
            let scale = scaled.then(|| population_std(g, m));
            normalize(g, m, scale, epsilon)
        })
        .collect()
}

/// `(R_i - mean(group)) / (std(group) + epsilon)` per group.
pub fn advantages_group_scale<G: AsRef<[f64]>>(
    groups: &[G],
    epsilon: f64,
) -> Result<Vec<Vec<f64>>, AdvantageError> {
    validate(groups)?;
    Ok(per_group(groups, epsilon, true))
}

/// `(R_i - mean(batch)) / (std(batch) + epsilon)` with statistics pooled over
/// every reward in the batch.
pub fn advantages_batch_scale<G: AsRef<[f64]>>(
    groups: &[G],
    epsilon: f64,
) -> Result<Vec<Vec<f64>>, AdvantageError> {
    validate(groups)?;
    let pooled: Vec<f64> = groups.iter().flat_map(|g| g.as_ref().iter().copied()).collect();
    if is_constant(&pooled) {
        return Ok(groups.iter().map(|g| vec![0.0; g.as_ref().len()]).collect());
    }
    let m = mean(&pooled);
    let std = population_std(&pooled, m);
    Ok(groups
        .iter()
        .map(|g| normalize(g.as_ref(), m, Some(std), epsilon))
        .collect())
}

/// `R_i - mean(group)`, no variance normalization.
pub fn advantages_no_scale<G: AsRef<[f64]>>(groups: &[G]) -> Result<Vec<Vec<f64>>, AdvantageError> {
    validate(groups)?;
    Ok(per_group(groups, 0.0, false))
}

pub fn compute_advantages<G: AsRef<[f64]>>(
    groups: &[G],
    strategy: Strategy,
    epsilon: f64,
) -> Result<Vec<Vec<f64>>, AdvantageError> {
    match strategy {
        Strategy::GroupScale => advantages_group_scale(groups, epsilon),
        Strategy::BatchScale => advantages_batch_scale(groups, epsilon),
        Strategy::NoScale => advantages_no_scale(groups),
    }
}

/// A batch of reward groups with the advantages computed for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageBatch {
    pub groups: Vec<RewardGroup>,
    pub strategy: Strategy,
    pub epsilon: f64,
    pub advantages: Vec<Vec<f64>>,
}

impl AdvantageBatch {
    pub fn compute(groups: Vec<RewardGroup>, strategy: Strategy, epsilon: f64) -> Result<Self, AdvantageError> {
        let rewards: Vec<&[f64]> = groups.iter().map(|g| g.rewards.as_slice()).collect();
        let advantages = compute_advantages(&rewards, strategy, epsilon)?;
        Ok(AdvantageBatch {
            groups,
            strategy,
            epsilon,
            advantages,
        })
    }

    /// Advantages of the group with the given prompt id.
    pub fn for_prompt(&self, prompt_id: &str) -> Option<&[f64]> {
        self.groups
            .iter()
            .position(|g| g.prompt_id == prompt_id)
            .map(|i| self.advantages[i].as_slice())
    }
}
