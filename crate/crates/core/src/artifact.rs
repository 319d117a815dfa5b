//! Prompt artifacts and content hashing of serialized outputs.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::RetrievalPlan;
use crate::error::{Error, Result};
use crate::selection::IterationTrace;
use crate::task::{DemonstrationSet, TaskSpec};

/// SHA-256 hex digest of the JSON serialization of `value`.
pub fn content_hash<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(value)?)))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Values that carry a hash of their own content in one string field.
pub trait Sealed: Serialize + Clone {
    fn hash_slot(&mut self) -> &mut String;

    /// Recompute the stored hash over the value with an empty hash field.
    fn seal(&mut self) -> Result<()> {
        self.hash_slot().clear();
        let hash = content_hash(self)?;
        *self.hash_slot() = hash;
        Ok(())
    }

    fn verify(&self) -> Result<bool> {
        let mut copy = self.clone();
        let stored = std::mem::take(copy.hash_slot());
        Ok(content_hash(&copy)? == stored)
    }
}

/// A fixed prompt produced by a selection method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptArtifact {
    pub kind: String,
    pub task: String,
    pub label_set_hash: String,
    pub method: String,
    /// Resolved selection parameters.
    pub config: serde_json::Value,
    pub seed: u64,
    pub demonstrations: DemonstrationSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<IterationTrace>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial_scores: Option<Vec<f64>>,
    #[serde(default)]
    pub skipped_ids: Vec<usize>,
    #[serde(default)]
    pub content_hash: String,
}

impl PromptArtifact {
    pub fn new(task: &TaskSpec, method: &str, config: serde_json::Value, seed: u64, demonstrations: DemonstrationSet) -> Self {
        Self {
            kind: "prompt".into(),
            task: task.name.clone(),
            label_set_hash: task.label_set.content_hash(),
            method: method.into(),
            config,
            seed,
            demonstrations,
            trace: None,
            trial_scores: None,
            skipped_ids: Vec::new(),
            content_hash: String::new(),
        }
    }
}

impl Sealed for PromptArtifact {
    fn hash_slot(&mut self) -> &mut String {
        &mut self.content_hash
    }
}

/// Output of any selection method: a fixed prompt or a retrieval plan.
#[derive(Debug, Clone, PartialEq)]
pub enum SelectionArtifact {
    Prompt(PromptArtifact),
    Plan(RetrievalPlan),
}

impl SelectionArtifact {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("kind").and_then(|k| k.as_str()) {
            Some("prompt") => Ok(Self::Prompt(serde_json::from_value(value)?)),
            Some("retrieval-plan") => Ok(Self::Plan(serde_json::from_value(value)?)),
            other => Err(Error::Config(format!("unknown artifact kind {other:?}"))),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(match self {
            Self::Prompt(p) => serde_json::to_string_pretty(p)?,
            Self::Plan(p) => serde_json::to_string_pretty(p)?,
        })
    }

    pub fn task(&self) -> &str {
        match self {
            Self::Prompt(p) => &p.task,
            Self::Plan(p) => &p.task,
        }
    }

    pub fn label_set_hash(&self) -> &str {
        match self {
            Self::Prompt(p) => &p.label_set_hash,
            Self::Plan(p) => &p.label_set_hash,
        }
    }

    pub fn content_hash(&self) -> &str {
        match self {
            Self::Prompt(p) => &p.content_hash,
            Self::Plan(p) => &p.content_hash,
        }
    }

    pub fn seal(&mut self) -> Result<()> {
        match self {
            Self::Prompt(p) => p.seal(),
            Self::Plan(p) => p.seal(),
        }
    }

    pub fn verify(&self) -> Result<bool> {
        match self {
            Self::Prompt(p) => p.verify(),
            Self::Plan(p) => p.verify(),
        }
    }

    /// Refuse artifacts built for another task unless `force` is set.
    pub fn check_task(&self, task: &TaskSpec, force: bool) -> Result<()> {
        if force {
            return Ok(());
        }
        if self.task() != task.name {
            return Err(Error::Config(format!(
                "artifact was built for task '{}' but the task config is '{}' (use --force to override)",
                self.task(),
                task.name
            )));
        }
        if self.label_set_hash() != task.label_set.content_hash() {
            return Err(Error::Config(format!(
                "artifact label set differs from task '{}' (use --force to override)",
                task.name
            )));
        }
        Ok(())
    }
}
