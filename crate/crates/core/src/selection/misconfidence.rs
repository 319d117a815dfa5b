//! Misconfidence: how confidently the model prefers a wrong label.
//!
//! The score is the ratio of the best incorrect label's probability to the
//! gold label's probability. It is kept in log space, so a positive value
//! means a confident misjudgment and a negative value a correct call.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::backend::{label_distribution, LabelDistribution, LabelModel, ScoreRequest};
use crate::error::{Error, Result};
use crate::parallel::par_map;
use crate::task::{Example, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MisconfidenceScore {
    pub example_id: usize,
    /// `ln(max_{y != gold} p(y)) - ln(p(gold))`.
    pub log_value: f64,
}

impl MisconfidenceScore {
    /// The plain ratio; may overflow to infinity where the log value does not.
    pub fn ratio(&self) -> f64 {
        self.log_value.exp()
    }
}

/// Log misconfidence of `gold` under `dist`.
pub fn misconfidence(dist: &LabelDistribution, gold: &str) -> Result<f64> {
    let mut gold_p = None;
    let mut best_wrong = f64::NEG_INFINITY;
    for (label, p) in dist.iter() {
        if label == gold {
            gold_p = Some(p);
        } else if p > best_wrong {
            best_wrong = p;
        }
    }
    let gold_p = gold_p.ok_or_else(|| Error::Config(format!("gold label '{gold}' not in distribution")))?;
    if !best_wrong.is_finite() {
        return Err(Error::Config("misconfidence needs at least two labels".into()));
    }
    Ok(best_wrong.ln() - gold_p.ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub example: Example,
    pub score: MisconfidenceScore,
    /// 1-based position after sorting.
    pub rank: usize,
}

/// Sort by descending log misconfidence, ties by ascending example id.
pub fn rank_candidates(scored: Vec<(Example, f64)>) -> Vec<RankedCandidate> {
    let mut scored = scored;
    scored.sort_by(|(a, sa), (b, sb)| sb.total_cmp(sa).then(a.id.cmp(&b.id)));
    scored
        .into_iter()
        .enumerate()
        .map(|(i, (example, log_value))| RankedCandidate {
            score: MisconfidenceScore {
                example_id: example.id,
                log_value,
            },
            example,
            rank: i + 1,
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct ScoredPool {
    pub ranked: Vec<RankedCandidate>,
    /// Candidates dropped after backend failures (only with `skip_failures`).
    pub skipped: Vec<usize>,
}

/// Score every candidate under `context` and rank them.
///
/// One backend call per candidate, issued concurrently up to the backend's
/// parallelism; results are reduced in candidate order.
pub fn score_pool(
    model: &dyn LabelModel,
    task: &TaskSpec,
    pool: &[Example],
    context: &[Example],
    skip_failures: bool,
) -> Result<ScoredPool> {
    let context_ids: BTreeSet<usize> = context.iter().map(|e| e.id).collect();
    if let Some(c) = pool.iter().find(|c| context_ids.contains(&c.id)) {
        return Err(Error::Config(format!(
            "candidate {} is also a demonstration in the scoring context",
            c.id
        )));
    }
    let results = par_map(pool, model.parallelism(), |cand| -> Result<f64> {
        let request = ScoreRequest::build(task, context, &cand.fields)?;
        let dist = label_distribution(model, &request, &task.label_set)?;
        misconfidence(&dist, &cand.label)
    });
    let mut scored = Vec::with_capacity(pool.len());
    let mut skipped = Vec::new();
    for (cand, result) in pool.iter().zip(results) {
        match result {
            Ok(v) => scored.push((cand.clone(), v)),
            Err(e) if skip_failures && !e.is_config() => {
                log::warn!("skipping candidate {}: {e}", cand.id);
                skipped.push(cand.id);
            }
            Err(e) => {
                return Err(Error::Case {
                    id: cand.id,
                    source: Box::new(e),
                })
            }
        }
    }
    Ok(ScoredPool {
        ranked: rank_candidates(scored),
        skipped,
    })
}
