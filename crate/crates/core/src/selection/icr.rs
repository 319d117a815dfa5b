//! The reflection loop: start from a random prompt, score the remaining pool
//! under it, and swap the front `n` demonstrations for the `n` candidates the
//! model misjudges most confidently.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::misconfidence::{score_pool, RankedCandidate, ScoredPool};
use crate::backend::LabelModel;
use crate::error::{Error, Result};
use crate::sampling::{rng, stratified_draw, stratified_subsample, uniform_draw};
use crate::task::{Dataset, DemonstrationSet, Example, Provenance, TaskSpec};
use rand::seq::SliceRandom;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    #[default]
    Uniform,
    Stratified,
}

/// Which demonstrations condition the misconfidence scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringContext {
    /// The current prompt.
    #[default]
    Current,
    /// No demonstrations at all.
    ZeroShot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcrConfig {
    /// Demonstrations per prompt.
    pub m: usize,
    /// Demonstrations replaced per iteration.
    pub n: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Stratified cap on the candidate pool before selection.
    pub pool_cap: Option<usize>,
    #[serde(default)]
    pub init_mode: InitMode,
    #[serde(default)]
    pub scoring: ScoringContext,
    #[serde(default)]
    pub skip_failures: bool,
}

impl Default for IcrConfig {
    fn default() -> Self {
        Self {
            m: 16,
            n: 8,
            iterations: 1,
            seed: 0,
            pool_cap: Some(500),
            init_mode: InitMode::Uniform,
            scoring: ScoringContext::Current,
            skip_failures: false,
        }
    }
}

impl IcrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 || self.n > self.m {
            return Err(Error::Config(format!(
                "replacement count n={} must satisfy 1 <= n <= m={}",
                self.n, self.m
            )));
        }
        if self.iterations < 1 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if let Some(cap) = self.pool_cap {
            if cap < self.m + self.n {
                return Err(Error::Config(format!(
                    "pool cap {cap} is smaller than m + n = {}",
                    self.m + self.n
                )));
            }
        }
        Ok(())
    }
}

/// Apply the configured pool cap; pools at or under the cap pass through.
pub fn cap_pool(task: &TaskSpec, pool: &Dataset, config: &IcrConfig) -> Result<Dataset> {
    match config.pool_cap {
        Some(cap) if pool.len() > cap => stratified_subsample(pool, &task.label_set, cap, config.seed),
        _ => Ok(pool.clone()),
    }
}

/// Initial prompt: `m` distinct pool examples in seeded random order.
pub fn icr_init(task: &TaskSpec, pool: &Dataset, config: &IcrConfig) -> Result<DemonstrationSet> {
    if pool.len() < config.m {
        return Err(Error::Sampling(format!(
            "pool has {} examples, fewer than m = {}",
            pool.len(),
            config.m
        )));
    }
    let mut rng = rng(config.seed);
    let members = match config.init_mode {
        InitMode::Uniform => uniform_draw(pool.examples(), config.m, &mut rng)?,
        InitMode::Stratified => {
            let mut drawn = stratified_draw(pool.examples(), &task.label_set, config.m, &mut rng)?;
            drawn.shuffle(&mut rng);
            drawn
        }
    };
    DemonstrationSet::new(
        members,
        task.name.clone(),
        Provenance {
            method: "icr".into(),
            seed: config.seed,
            iterations: 0,
        },
    )
}

/// Replace the first `n` demonstrations with the top `n` ranked candidates.
///
/// Returns the new prompt and the displaced demonstrations.
pub fn icr_refine(
    demos: &DemonstrationSet,
    ranked: &[RankedCandidate],
    n: usize,
) -> Result<(DemonstrationSet, Vec<Example>)> {
    if ranked.len() < n {
        return Err(Error::Config(format!(
            "only {} ranked candidates for {n} replacements",
            ranked.len()
        )));
    }
    if n > demos.len() {
        return Err(Error::Config(format!(
            "cannot replace {n} of {} demonstrations",
            demos.len()
        )));
    }
    let current: BTreeSet<usize> = demos.ids().into_iter().collect();
    if let Some(r) = ranked.iter().find(|r| current.contains(&r.example.id)) {
        return Err(Error::Config(format!(
            "ranked candidate {} is already a demonstration",
            r.example.id
        )));
    }
    let mut members: Vec<Example> = ranked[..n].iter().map(|r| r.example.clone()).collect();
    members.extend(demos.members[n..].iter().cloned());
    let replaced = demos.members[..n].to_vec();
    let provenance = Provenance {
        iterations: demos.provenance.iterations + 1,
        ..demos.provenance.clone()
    };
    Ok((
        DemonstrationSet::new(members, demos.source_task.clone(), provenance)?,
        replaced,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Candidates with positive log misconfidence (misjudged).
    pub misjudged: usize,
}

impl ScoreSummary {
    fn of(ranked: &[RankedCandidate]) -> Option<Self> {
        if ranked.is_empty() {
            return None;
        }
        let values: Vec<f64> = ranked.iter().map(|r| r.score.log_value).collect();
        Some(Self {
            count: values.len(),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().cloned().fold(f64::INFINITY, f64::min),
            max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            misjudged: values.iter().filter(|v| **v > 0.0).count(),
        })
    }
}

/// State after one iteration; iteration 0 is the initial prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub member_ids: Vec<usize>,
    /// Candidate pool ids after this iteration, ascending.
    pub candidate_ids: Vec<usize>,
    pub scores: Option<ScoreSummary>,
    /// Newly selected ids with their log misconfidence, best first.
    pub selected: Vec<(usize, f64)>,
    pub replaced_ids: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct IcrOutcome {
    pub demos: DemonstrationSet,
    pub trace: Vec<IterationTrace>,
    pub skipped: Vec<usize>,
    /// Last ranking computed, for reporting.
    pub last_ranking: Vec<RankedCandidate>,
}

/// Run the full loop: cap, initialize, then `iterations` rounds of score,
/// rerank, and replace. The candidate pool never holds current demonstrations;
/// displaced demonstrations return to it.
pub fn icr_select(model: &dyn LabelModel, task: &TaskSpec, pool: &Dataset, config: &IcrConfig) -> Result<IcrOutcome> {
    config.validate()?;
    let pool = cap_pool(task, pool, config)?;
    if pool.len() < config.m + config.n {
        return Err(Error::Sampling(format!(
            "pool has {} examples, fewer than m + n = {}",
            pool.len(),
            config.m + config.n
        )));
    }
    let mut demos = icr_init(task, &pool, config)?;
    let init_ids: BTreeSet<usize> = demos.ids().into_iter().collect();
    let mut candidates: Vec<Example> = pool
        .examples()
        .iter()
        .filter(|e| !init_ids.contains(&e.id))
        .cloned()
        .collect();
    let mut trace = vec![IterationTrace {
        iteration: 0,
        member_ids: demos.ids(),
        candidate_ids: candidates.iter().map(|e| e.id).collect(),
        scores: None,
        selected: Vec::new(),
        replaced_ids: Vec::new(),
    }];
    let mut skipped = BTreeSet::new();
    let mut last_ranking = Vec::new();

    for iteration in 1..=config.iterations {
        let context: &[Example] = match config.scoring {
            ScoringContext::Current => &demos.members,
            ScoringContext::ZeroShot => &[],
        };
        let ScoredPool { ranked, skipped: dropped } =
            score_pool(model, task, &candidates, context, config.skip_failures)?;
        skipped.extend(dropped);
        let (next, replaced) = icr_refine(&demos, &ranked, config.n)?;
        let selected: BTreeSet<usize> = ranked[..config.n].iter().map(|r| r.example.id).collect();
        candidates.retain(|c| !selected.contains(&c.id));
        candidates.extend(replaced.iter().cloned());
        candidates.sort_by_key(|c| c.id);
        trace.push(IterationTrace {
            iteration,
            member_ids: next.ids(),
            candidate_ids: candidates.iter().map(|e| e.id).collect(),
            scores: ScoreSummary::of(&ranked),
            selected: ranked[..config.n]
                .iter()
                .map(|r| (r.example.id, r.score.log_value))
                .collect(),
            replaced_ids: replaced.iter().map(|e| e.id).collect(),
        });
        demos = next;
        last_ranking = ranked;
    }
    Ok(IcrOutcome {
        demos,
        trace,
        skipped: skipped.into_iter().collect(),
        last_ranking,
    })
}

/// Top `m` of the zero-context ranking over the (capped) pool, with no replacement step.
pub fn full_misconfidence_select(
    model: &dyn LabelModel,
    task: &TaskSpec,
    pool: &Dataset,
    config: &IcrConfig,
) -> Result<(DemonstrationSet, Vec<RankedCandidate>)> {
    config.validate()?;
    let pool = cap_pool(task, pool, config)?;
    if pool.len() < config.m {
        return Err(Error::Sampling(format!(
            "pool has {} examples, fewer than m = {}",
            pool.len(),
            config.m
        )));
    }
    let scored = score_pool(model, task, pool.examples(), &[], config.skip_failures)?;
    if scored.ranked.len() < config.m {
        return Err(Error::Sampling("too many skipped candidates to fill the prompt".into()));
    }
    let members = scored.ranked[..config.m].iter().map(|r| r.example.clone()).collect();
    let demos = DemonstrationSet::new(
        members,
        task.name.clone(),
        Provenance {
            method: "full-misconfidence".into(),
            seed: config.seed,
            iterations: 0,
        },
    )?;
    Ok((demos, scored.ranked))
}
