use serde::{Deserialize, Serialize};

use super::metrics::{csv_err, finish_csv, ks_statistic, EvalReport};
use super::svg::grouped_bar_chart;
use super::{evaluate, PromptSource};
use crate::backend::{cosine_distance, EmbedRequest, Embedder, LabelModel};
use crate::error::{Error, Result};
use crate::sampling::{rng, uniform_draw};
use crate::selection::{full_misconfidence_select, icr_select, score_pool, IcrConfig, ScoringContext};
use crate::task::{Dataset, DatasetRole, DemonstrationSet, Example, Provenance, TaskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", content = "payload", rename_all = "snake_case")]
pub enum AblationReport {
    IterationSweep(IterationSweep),
    MisconfidenceBins(MisconfidenceBins),
    ZeroShotInit(VariantComparison),
    FullMisconfidence(VariantComparison),
    DistanceAnalysis(DistanceAnalysis),
    PsiCaseStudy(PsiCaseStudy),
}

impl AblationReport {
    pub fn variant_name(&self) -> &'static str {
        match self {
            AblationReport::IterationSweep(_) => "iteration_sweep",
            AblationReport::MisconfidenceBins(_) => "misconfidence_bins",
            AblationReport::ZeroShotInit(_) => "zero_shot_init",
            AblationReport::FullMisconfidence(_) => "full_misconfidence",
            AblationReport::DistanceAnalysis(_) => "distance_analysis",
            AblationReport::PsiCaseStudy(_) => "psi_case_study",
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        match self {
            AblationReport::IterationSweep(p) => p.to_csv(),
            AblationReport::MisconfidenceBins(p) => p.to_csv(),
            AblationReport::ZeroShotInit(p) | AblationReport::FullMisconfidence(p) => p.to_csv(),
            AblationReport::DistanceAnalysis(p) => p.to_csv(),
            AblationReport::PsiCaseStudy(p) => p.to_csv(),
        }
    }

    pub fn to_svg(&self) -> Option<String> {
        match self {
            AblationReport::IterationSweep(p) => Some(p.to_svg()),
            AblationReport::MisconfidenceBins(p) => Some(p.to_svg()),
            AblationReport::DistanceAnalysis(p) => Some(p.to_svg()),
            AblationReport::PsiCaseStudy(p) => Some(p.to_svg()),
            AblationReport::ZeroShotInit(_) | AblationReport::FullMisconfidence(_) => None,
        }
    }
}

fn csv_table(header: &[&str], rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    finish_csv(w)
}

fn demos_from_ids(pool: &Dataset, ids: &[usize], task: &TaskSpec, provenance: Provenance) -> Result<DemonstrationSet> {
    let members = ids
        .iter()
        .map(|id| {
            pool.get(*id)
                .cloned()
                .ok_or_else(|| Error::Lookup(format!("example {id} is not in the pool")))
        })
        .collect::<Result<Vec<_>>>()?;
    DemonstrationSet::new(members, task.name.clone(), provenance)
}

fn label_histogram(task: &TaskSpec, examples: &[Example]) -> Vec<usize> {
    let mut counts = vec![0; task.label_set.len()];
    for ex in examples {
        if let Some(i) = task.label_set.index_of(&ex.label) {
            counts[i] += 1;
        }
    }
    counts
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

// ---- iteration sweep ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationPoint {
    pub iteration: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub member_ids: Vec<usize>,
    pub prompt_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSweep {
    pub seed: u64,
    pub m: usize,
    pub n: usize,
    pub max_iterations: usize,
    pub points: Vec<IterationPoint>,
}

impl IterationSweep {
    fn to_csv(&self) -> Result<String> {
        csv_table(
            &["iteration", "accuracy", "macro_f1", "prompt_hash"],
            self.points
                .iter()
                .map(|p| vec![p.iteration.to_string(), p.accuracy.to_string(), p.macro_f1.to_string(), p.prompt_hash.clone()])
                .collect(),
        )
    }

    fn to_svg(&self) -> String {
        let cats: Vec<String> = self.points.iter().map(|p| p.iteration.to_string()).collect();
        grouped_bar_chart(
            "metrics by iteration",
            &cats,
            &[
                ("accuracy".into(), self.points.iter().map(|p| p.accuracy).collect()),
                ("macro-F1".into(), self.points.iter().map(|p| p.macro_f1).collect()),
            ],
        )
    }
}

/// Evaluate the prompt after each of 0..=`max_iterations` rounds; point 0 is the initial prompt.
pub fn ablate_iterations(
    model: &dyn LabelModel,
    task: &TaskSpec,
    pool: &Dataset,
    test: &Dataset,
    config: &IcrConfig,
    max_iterations: usize,
) -> Result<AblationReport> {
    if max_iterations < 1 {
        return Err(Error::Config("the iteration sweep needs at least one iteration".into()));
    }
    let config = IcrConfig {
        iterations: max_iterations,
        ..config.clone()
    };
    let outcome = icr_select(model, task, pool, &config)?;
    let mut points = Vec::with_capacity(outcome.trace.len());
    for step in &outcome.trace {
        let demos = demos_from_ids(
            pool,
            &step.member_ids,
            task,
            Provenance {
                method: "icr".into(),
                seed: config.seed,
                iterations: step.iteration,
            },
        )?;
        let report = evaluate(model, task, &PromptSource::Fixed(demos), test, config.skip_failures)?;
        points.push(IterationPoint {
            iteration: step.iteration,
            accuracy: report.accuracy,
            macro_f1: report.macro_f1,
            member_ids: step.member_ids.clone(),
            prompt_hash: report.prompt_hash,
        });
    }
    Ok(AblationReport::IterationSweep(IterationSweep {
        seed: config.seed,
        m: config.m,
        n: config.n,
        max_iterations,
        points,
    }))
}

// ---- misconfidence bins ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedScore {
    pub seed: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub member_ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRecord {
    pub bin: usize,
    /// Smallest and largest log misconfidence in the bin.
    pub lower: f64,
    pub upper: f64,
    pub mean_psi: f64,
    /// Pool ids in the bin, ascending by score then id.
    pub ids: Vec<usize>,
    pub scores: Vec<SeedScore>,
    pub mean_accuracy: f64,
    pub mean_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisconfidenceBins {
    pub m: usize,
    pub seeds: Vec<u64>,
    pub bins: Vec<BinRecord>,
}

impl MisconfidenceBins {
    fn to_csv(&self) -> Result<String> {
        csv_table(
            &["bin", "lower", "upper", "size", "mean_psi", "accuracy", "macro_f1"],
            self.bins
                .iter()
                .map(|b| {
                    vec![
                        b.bin.to_string(),
                        b.lower.to_string(),
                        b.upper.to_string(),
                        b.ids.len().to_string(),
                        b.mean_psi.to_string(),
                        b.mean_accuracy.to_string(),
                        b.mean_macro_f1.to_string(),
                    ]
                })
                .collect(),
        )
    }

    fn to_svg(&self) -> String {
        let cats: Vec<String> = self.bins.iter().map(|b| format!("{:.2}", b.mean_psi)).collect();
        grouped_bar_chart(
            "metrics by mean log misconfidence of bin",
            &cats,
            &[
                ("accuracy".into(), self.bins.iter().map(|b| b.mean_accuracy).collect()),
                ("macro-F1".into(), self.bins.iter().map(|b| b.mean_macro_f1).collect()),
            ],
        )
    }
}

/// Split the zero-shot-scored pool into `bins` equal-count bins by ascending
/// misconfidence and evaluate one `m`-demonstration prompt per bin and seed.
pub fn ablate_misconfidence_bins(
    model: &dyn LabelModel,
    task: &TaskSpec,
    pool: &Dataset,
    test: &Dataset,
    bins: usize,
    m: usize,
    seeds: &[u64],
    skip_failures: bool,
) -> Result<AblationReport> {
    if bins == 0 || m == 0 {
        return Err(Error::Config("bins and m must be at least 1".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    if pool.len() < bins * m {
        return Err(Error::Sampling(format!(
            "pool has {} examples, fewer than bins * m = {}",
            pool.len(),
            bins * m
        )));
    }
    let scored = score_pool(model, task, pool.examples(), &[], skip_failures)?;
    let mut ascending = scored.ranked;
    ascending.sort_by(|a, b| {
        a.score
            .log_value
            .total_cmp(&b.score.log_value)
            .then(a.example.id.cmp(&b.example.id))
    });
    let n = ascending.len();
    if n < bins * m {
        return Err(Error::Sampling("too many skipped candidates to fill every bin".into()));
    }
    let mut records = Vec::with_capacity(bins);
    for b in 0..bins {
        let slice = &ascending[b * n / bins..(b + 1) * n / bins];
        let values: Vec<f64> = slice.iter().map(|r| r.score.log_value).collect();
        let members: Vec<Example> = slice.iter().map(|r| r.example.clone()).collect();
        let mut scores = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut r = rng(seed);
            let drawn = uniform_draw(&members, m, &mut r)?;
            let demos = DemonstrationSet::new(
                drawn,
                task.name.clone(),
                Provenance {
                    method: format!("psi-bin-{b}"),
                    seed,
                    iterations: 0,
                },
            )?;
            let member_ids = demos.ids();
            let report = evaluate(model, task, &PromptSource::Fixed(demos), test, skip_failures)?;
            scores.push(SeedScore {
                seed,
                accuracy: report.accuracy,
                macro_f1: report.macro_f1,
                member_ids,
            });
        }
        records.push(BinRecord {
            bin: b,
            lower: values[0],
            upper: values[values.len() - 1],
            mean_psi: mean(&values).unwrap_or(0.0),
            ids: slice.iter().map(|r| r.example.id).collect(),
            mean_accuracy: scores.iter().map(|s| s.accuracy).sum::<f64>() / scores.len() as f64,
            mean_macro_f1: scores.iter().map(|s| s.macro_f1).sum::<f64>() / scores.len() as f64,
            scores,
        });
    }
    Ok(AblationReport::MisconfidenceBins(MisconfidenceBins {
        m,
        seeds: seeds.to_vec(),
        bins: records,
    }))
}

// ---- selection variants ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub name: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub member_ids: Vec<usize>,
    /// Demonstration counts per label, in label-set order.
    pub label_histogram: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantComparison {
    pub seed: u64,
    pub standard: VariantRow,
    pub variant: VariantRow,
    pub delta_accuracy: f64,
    pub delta_macro_f1: f64,
}

impl VariantComparison {
    pub fn new(seed: u64, standard: VariantRow, variant: VariantRow) -> Self {
        Self {
            seed,
            delta_accuracy: variant.accuracy - standard.accuracy,
            delta_macro_f1: variant.macro_f1 - standard.macro_f1,
            standard,
            variant,
        }
    }

    fn to_csv(&self) -> Result<String> {
        let row = |r: &VariantRow, da: f64, df: f64| {
            vec![
                r.name.clone(),
                r.accuracy.to_string(),
                r.macro_f1.to_string(),
                da.to_string(),
                df.to_string(),
                r.label_histogram.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" "),
            ]
        };
        csv_table(
            &["name", "accuracy", "macro_f1", "delta_accuracy", "delta_macro_f1", "label_histogram"],
            vec![
                row(&self.standard, 0.0, 0.0),
                row(&self.variant, self.delta_accuracy, self.delta_macro_f1),
            ],
        )
    }
}

fn variant_row(name: &str, task: &TaskSpec, demos: &DemonstrationSet, report: &EvalReport) -> VariantRow {
    VariantRow {
        name: name.into(),
        accuracy: report.accuracy,
        macro_f1: report.macro_f1,
        member_ids: demos.ids(),
        label_histogram: label_histogram(task, &demos.members),
    }
}

/// Standard selection against zero-shot scoring and against taking the top
/// `m` of the zero-shot ranking outright. Returns one report per variant.
pub fn ablate_variants(
    model: &dyn LabelModel,
    task: &TaskSpec,
    pool: &Dataset,
    test: &Dataset,
    config: &IcrConfig,
) -> Result<Vec<AblationReport>> {
    let run = |name: &str, demos: DemonstrationSet| -> Result<VariantRow> {
        let report = evaluate(model, task, &PromptSource::Fixed(demos.clone()), test, config.skip_failures)?;
        Ok(variant_row(name, task, &demos, &report))
    };
    let standard_cfg = IcrConfig {
        scoring: ScoringContext::Current,
        ..config.clone()
    };
    let standard = run("icr", icr_select(model, task, pool, &standard_cfg)?.demos)?;
    let zero_cfg = IcrConfig {
        scoring: ScoringContext::ZeroShot,
        ..config.clone()
    };
    let zero = run("zero-shot-init", icr_select(model, task, pool, &zero_cfg)?.demos)?;
    let (full_demos, _) = full_misconfidence_select(model, task, pool, config)?;
    let full = run("full-misconfidence", full_demos)?;
    Ok(vec![
        AblationReport::ZeroShotInit(VariantComparison::new(config.seed, standard.clone(), zero)),
        AblationReport::FullMisconfidence(VariantComparison::new(config.seed, standard, full)),
    ])
}

// ---- distance analysis ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceCase {
    pub id: usize,
    /// Cosine distance to the closest demonstration.
    pub min_distance: f64,
    pub zero_shot: String,
    pub few_shot: String,
    pub changed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceAnalysis {
    pub provider_id: String,
    pub prompt_hash: String,
    pub cases: Vec<DistanceCase>,
    pub all: Vec<f64>,
    pub changed: Vec<f64>,
    /// Two-sample KS statistic between `all` and `changed`; null without changed cases.
    pub ks: Option<f64>,
}

impl DistanceAnalysis {
    fn to_csv(&self) -> Result<String> {
        csv_table(
            &["id", "min_distance", "zero_shot", "few_shot", "changed"],
            self.cases
                .iter()
                .map(|c| {
                    vec![
                        c.id.to_string(),
                        c.min_distance.to_string(),
                        c.zero_shot.clone(),
                        c.few_shot.clone(),
                        c.changed.to_string(),
                    ]
                })
                .collect(),
        )
    }

    fn to_svg(&self) -> String {
        const BINS: usize = 10;
        let hi = self.all.iter().copied().fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
        let density = |sample: &[f64]| -> Vec<f64> {
            let mut counts = [0.0; BINS];
            for v in sample {
                let i = ((v / hi) * BINS as f64).floor() as usize;
                counts[i.min(BINS - 1)] += 1.0;
            }
            let total = sample.len().max(1) as f64;
            counts.iter().map(|c| c / total).collect()
        };
        let cats: Vec<String> = (0..BINS).map(|i| format!("{:.2}", hi * (i as f64 + 0.5) / BINS as f64)).collect();
        grouped_bar_chart(
            "distance to nearest demonstration",
            &cats,
            &[("all".into(), density(&self.all)), ("changed".into(), density(&self.changed))],
        )
    }
}

/// Compare zero-shot and few-shot predictions per test case against the
/// case's distance to the closest demonstration.
pub fn distance_analysis(
    model: &dyn LabelModel,
    task: &TaskSpec,
    demos: &DemonstrationSet,
    test: &Dataset,
    embedder: &dyn Embedder,
    skip_failures: bool,
) -> Result<AblationReport> {
    if demos.is_empty() {
        return Err(Error::Config("distance analysis needs at least one demonstration".into()));
    }
    let zero = evaluate(model, task, &PromptSource::zero_shot(task), test, skip_failures)?;
    let few_source = PromptSource::Fixed(demos.clone());
    let few = evaluate(model, task, &few_source, test, skip_failures)?;
    let demo_vectors = demos
        .members
        .iter()
        .map(|ex| {
            embedder.embed(&EmbedRequest {
                role: DatasetRole::TrainPool,
                id: ex.id,
                text: &task.input_text(&ex.fields),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let zero_by_id: std::collections::BTreeMap<usize, &str> =
        zero.predictions.iter().map(|p| (p.id, p.predicted.as_str())).collect();
    let mut cases = Vec::new();
    for p in &few.predictions {
        let Some(z) = zero_by_id.get(&p.id) else { continue };
        let ex = test.get(p.id).expect("prediction ids come from the test set");
        let q = embedder.embed(&EmbedRequest {
            role: test.role,
            id: ex.id,
            text: &task.input_text(&ex.fields),
        })?;
        let min_distance = demo_vectors
            .iter()
            .map(|d| cosine_distance(&q, d))
            .fold(f64::INFINITY, f64::min);
        cases.push(DistanceCase {
            id: p.id,
            min_distance,
            zero_shot: z.to_string(),
            few_shot: p.predicted.clone(),
            changed: *z != p.predicted,
        });
    }
    let all: Vec<f64> = cases.iter().map(|c| c.min_distance).collect();
    let changed: Vec<f64> = cases.iter().filter(|c| c.changed).map(|c| c.min_distance).collect();
    Ok(AblationReport::DistanceAnalysis(DistanceAnalysis {
        provider_id: embedder.provider_id(),
        prompt_hash: few.prompt_hash,
        ks: ks_statistic(&all, &changed),
        cases,
        all,
        changed,
    }))
}

// ---- psi case study ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelHistogram {
    pub label: String,
    pub counts: Vec<usize>,
    pub total: usize,
    pub mean_psi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiCaseStudy {
    pub seed: u64,
    pub labels: Vec<String>,
    /// `counts.len() + 1` bin edges over the observed log misconfidence range.
    pub edges: Vec<f64>,
    pub histograms: Vec<LabelHistogram>,
    pub initial_member_ids: Vec<usize>,
    pub refined_member_ids: Vec<usize>,
    pub before: Vec<Vec<usize>>,
    pub after: Vec<Vec<usize>>,
    pub before_accuracy: f64,
    pub after_accuracy: f64,
}

impl PsiCaseStudy {
    fn to_csv(&self) -> Result<String> {
        let mut rows = Vec::new();
        for h in &self.histograms {
            for (i, c) in h.counts.iter().enumerate() {
                rows.push(vec![
                    h.label.clone(),
                    self.edges[i].to_string(),
                    self.edges[i + 1].to_string(),
                    c.to_string(),
                ]);
            }
        }
        csv_table(&["label", "bin_lower", "bin_upper", "count"], rows)
    }

    fn to_svg(&self) -> String {
        let cats: Vec<String> = self.edges.windows(2).map(|w| format!("{:.2}", (w[0] + w[1]) / 2.0)).collect();
        let series: Vec<(String, Vec<f64>)> = self
            .histograms
            .iter()
            .map(|h| (h.label.clone(), h.counts.iter().map(|c| *c as f64).collect()))
            .collect();
        grouped_bar_chart("log misconfidence by gold label", &cats, &series)
    }
}

/// Equal-width bin edges covering `values`; a degenerate range is widened to unit width.
pub(crate) fn histogram_edges(values: &[f64], bins: usize) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo <= 0.0 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    };
    (0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect()
}

pub(crate) fn bin_index(edges: &[f64], v: f64) -> usize {
    let bins = edges.len() - 1;
    let (lo, hi) = (edges[0], edges[bins]);
    let i = ((v - lo) / (hi - lo) * bins as f64).floor();
    (i.max(0.0) as usize).min(bins - 1)
}

/// Misconfidence histograms per gold label under the initial prompt, and
/// confusion matrices before and after one refinement.
pub fn psi_case_study(
    model: &dyn LabelModel,
    task: &TaskSpec,
    pool: &Dataset,
    test: &Dataset,
    config: &IcrConfig,
    hist_bins: usize,
) -> Result<AblationReport> {
    if hist_bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    let config = IcrConfig {
        iterations: 1,
        ..config.clone()
    };
    let outcome = icr_select(model, task, pool, &config)?;
    let ranking = &outcome.last_ranking;
    let values: Vec<f64> = ranking.iter().map(|r| r.score.log_value).collect();
    let edges = histogram_edges(&values, hist_bins);
    let histograms = task
        .label_set
        .labels()
        .iter()
        .map(|label| {
            let mine: Vec<f64> = ranking
                .iter()
                .filter(|r| &r.example.label == label)
                .map(|r| r.score.log_value)
                .collect();
            let mut counts = vec![0; hist_bins];
            for v in &mine {
                counts[bin_index(&edges, *v)] += 1;
            }
            LabelHistogram {
                label: label.clone(),
                counts,
                total: mine.len(),
                mean_psi: mean(&mine),
            }
        })
        .collect();
    let initial_ids = outcome.trace[0].member_ids.clone();
    let initial = demos_from_ids(
        pool,
        &initial_ids,
        task,
        Provenance {
            method: "icr".into(),
            seed: config.seed,
            iterations: 0,
        },
    )?;
    let before = evaluate(model, task, &PromptSource::Fixed(initial), test, config.skip_failures)?;
    let after = evaluate(model, task, &PromptSource::Fixed(outcome.demos.clone()), test, config.skip_failures)?;
    Ok(AblationReport::PsiCaseStudy(PsiCaseStudy {
        seed: config.seed,
        labels: task.label_set.labels().to_vec(),
        edges,
        histograms,
        initial_member_ids: initial_ids,
        refined_member_ids: outcome.demos.ids(),
        before: before.confusion,
        after: after.confusion,
        before_accuracy: before.accuracy,
        after_accuracy: after.accuracy,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edges_cover_range_and_bins_partition() {
        let values = [-2.0, -1.0, 0.0, 3.0];
        let edges = histogram_edges(&values, 5);
        assert_eq!(edges.len(), 6);
        assert_eq!((edges[0], edges[5]), (-2.0, 3.0));
        let idx: Vec<usize> = values.iter().map(|v| bin_index(&edges, *v)).collect();
        assert_eq!(idx, vec![0, 1, 2, 4]);
        let flat = histogram_edges(&[1.0, 1.0], 2);
        assert_eq!(bin_index(&flat, 1.0), 1);
    }
}
