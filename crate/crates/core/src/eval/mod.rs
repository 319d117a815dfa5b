//! Prediction, metrics, cross-task transfer, and ablation experiments.

mod ablation;
mod metrics;
pub mod svg;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use ablation::{
    ablate_iterations, ablate_misconfidence_bins, ablate_variants, distance_analysis, psi_case_study, AblationReport,
    BinRecord, DistanceAnalysis, DistanceCase, IterationPoint, IterationSweep, LabelHistogram, MisconfidenceBins,
    PsiCaseStudy, SeedScore, VariantComparison, VariantRow,
};
pub use metrics::{ks_statistic, CasePrediction, EvalReport, LabelMetrics, Metric};

use crate::artifact::content_hash;
use crate::backend::{label_distribution, LabelDistribution, LabelModel, ScoreRequest};
use crate::baselines::{uniform_select, Retriever};
use crate::error::{Error, Result};
use crate::parallel::par_map;
use crate::task::{Dataset, DatasetRole, DemonstrationSet, Example, Provenance, TaskSpec};

/// Where the demonstrations for a query come from.
#[derive(Debug)]
pub enum PromptSource {
    Fixed(DemonstrationSet),
    Retrieval(Retriever),
}

impl PromptSource {
    /// An empty prompt.
    pub fn zero_shot(task: &TaskSpec) -> Self {
        PromptSource::Fixed(DemonstrationSet {
            members: Vec::new(),
            source_task: task.name.clone(),
            provenance: Provenance {
                method: "zero-shot".into(),
                seed: 0,
                iterations: 0,
            },
        })
    }

    pub fn hash(&self) -> Result<String> {
        match self {
            PromptSource::Fixed(d) => content_hash(d),
            PromptSource::Retrieval(r) => Ok(r.plan().content_hash.clone()),
        }
    }
}

/// Label distribution for one query under `source`.
pub fn predict_distribution(
    model: &dyn LabelModel,
    task: &TaskSpec,
    source: &PromptSource,
    query: &Example,
    role: DatasetRole,
) -> Result<LabelDistribution> {
    let request = match source {
        PromptSource::Fixed(demos) => ScoreRequest::build(task, &demos.members, &query.fields)?,
        PromptSource::Retrieval(r) => {
            let got = r.retrieve(model, task, query, role)?;
            ScoreRequest::build(task, &got.demos.members, &query.fields)?
        }
    };
    label_distribution(model, &request, &task.label_set)
}

/// Most probable label; exact ties go to the earliest label.
pub fn predict(
    model: &dyn LabelModel,
    task: &TaskSpec,
    source: &PromptSource,
    query: &Example,
    role: DatasetRole,
) -> Result<String> {
    Ok(predict_distribution(model, task, source, query, role)?.argmax().to_string())
}

/// Predict every test case and summarize.
pub fn evaluate(
    model: &dyn LabelModel,
    task: &TaskSpec,
    source: &PromptSource,
    test: &Dataset,
    skip_failures: bool,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Config("test set is empty".into()));
    }
    let outcomes = par_map(test.examples(), model.parallelism(), |case| {
        predict(model, task, source, case, test.role)
    });
    let mut pairs = Vec::with_capacity(test.len());
    let mut predictions = Vec::with_capacity(test.len());
    let mut skipped_ids = Vec::new();
    for (case, outcome) in test.examples().iter().zip(outcomes) {
        match outcome {
            Ok(label) => {
                let gold = task
                    .label_set
                    .index_of(&case.label)
                    .ok_or_else(|| Error::Config(format!("test case {} has unknown label '{}'", case.id, case.label)))?;
                let pred = task.label_set.index_of(&label).expect("prediction is a task label");
                pairs.push((gold, pred));
                predictions.push(CasePrediction {
                    id: case.id,
                    gold: case.label.clone(),
                    predicted: label,
                });
            }
            Err(e) if skip_failures && !e.is_config() => {
                log::warn!("skipping test case {}: {e}", case.id);
                skipped_ids.push(case.id);
            }
            Err(e) => {
                return Err(Error::Case {
                    id: case.id,
                    source: Box::new(e),
                })
            }
        }
    }
    let mut report = EvalReport::from_pairs(task.label_set.labels().to_vec(), &pairs)?;
    report.prompt_hash = source.hash()?;
    report.predictions = predictions;
    report.skipped_ids = skipped_ids;
    Ok(report)
}

/// Rewrite demonstration labels into `target`'s label set.
///
/// Without a map, every demonstration label must already be a target label.
pub fn relabel_demos(
    demos: &DemonstrationSet,
    target: &TaskSpec,
    label_map: Option<&BTreeMap<String, String>>,
) -> Result<DemonstrationSet> {
    let mut out = demos.clone();
    for ex in &mut out.members {
        let mapped = match label_map {
            Some(map) => map.get(&ex.label).cloned().ok_or_else(|| {
                Error::Config(format!("label map has no entry for source label '{}'", ex.label))
            })?,
            None => ex.label.clone(),
        };
        if !target.label_set.contains(&mapped) {
            return Err(Error::Config(format!(
                "label '{mapped}' is not in target task '{}'; supply a label map",
                target.name
            )));
        }
        ex.label = mapped;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub report: EvalReport,
    /// Same-task uniform prompt on the target, if a target pool was given.
    pub baseline: Option<EvalReport>,
    pub delta_accuracy: Option<f64>,
    pub delta_macro_f1: Option<f64>,
}

/// Evaluate a frozen prompt from another task under `target`'s template.
///
/// The baseline is a uniform prompt of the same size drawn from `target_pool`
/// with the source prompt's seed.
pub fn transfer_evaluate(
    model: &dyn LabelModel,
    demos: &DemonstrationSet,
    target: &TaskSpec,
    target_test: &Dataset,
    label_map: Option<&BTreeMap<String, String>>,
    target_pool: Option<&Dataset>,
    skip_failures: bool,
) -> Result<TransferReport> {
    let mapped = relabel_demos(demos, target, label_map)?;
    let report = evaluate(model, target, &PromptSource::Fixed(mapped), target_test, skip_failures)?;
    let baseline = match target_pool {
        Some(pool) => {
            let base = uniform_select(target, pool, demos.len(), demos.provenance.seed)?;
            Some(evaluate(model, target, &PromptSource::Fixed(base), target_test, skip_failures)?)
        }
        None => None,
    };
    Ok(TransferReport {
        delta_accuracy: baseline.as_ref().map(|b| report.accuracy - b.accuracy),
        delta_macro_f1: baseline.as_ref().map(|b| report.macro_f1 - b.macro_f1),
        report,
        baseline,
    })
}
