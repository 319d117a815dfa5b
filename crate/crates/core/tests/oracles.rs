mod common;

use std::collections::BTreeSet;

use common::*;
use icr_core::backend::{HashingEmbedder, SyntheticModel, SyntheticParams};
use icr_core::baselines::{best_of_n_select, uniform_select, BestOfConfig, DemoOrder, RetrievalMethod, RetrievalPlan, Retriever};
use icr_core::eval::{ablate_misconfidence_bins, ablate_variants, psi_case_study, transfer_evaluate, AblationReport};
use icr_core::selection::{score_pool, IcrConfig};
use icr_core::task::{Dataset, DatasetRole, Example, TaskSpec};

fn dataset(role: DatasetRole, rows: &[(&str, &str)]) -> Dataset {
    Dataset::new(
        role,
        rows.iter()
            .enumerate()
            .map(|(id, (t, l))| Example {
                id,
                fields: [("text".to_string(), t.to_string())].into(),
                label: l.to_string(),
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn score_pool_matches_exhaustive_recomputation() {
    let (task, pool, _) = toy();
    let params = SyntheticParams {
        bias: [("neg".to_string(), 0.3)].into(),
        ..SyntheticParams::default()
    };
    let model = SyntheticModel::new(params.clone()).unwrap();
    let oracle = Oracle::new(&task.label_set, &params);
    let context = &pool.examples()[..3];
    let cands = &pool.examples()[3..7];
    let ranked = score_pool(&model, &task, cands, context, false).unwrap().ranked;

    let all = rows(&task, &pool);
    let ctx_rows = &all[..3];
    let mut want: Vec<(f64, usize)> = all[3..7].iter().map(|r| (oracle.psi_ratio(ctx_rows, r), r.id)).collect();
    want.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let got: Vec<usize> = ranked.iter().map(|r| r.example.id).collect();
    assert_eq!(got, want.iter().map(|w| w.1).collect::<Vec<_>>());
    for (r, (ratio, _)) in ranked.iter().zip(&want) {
        assert!((r.score.ratio() - ratio).abs() < 1e-12);
    }
}

#[test]
fn identical_candidates_tie_by_id() {
    let (task, _, _) = toy();
    let pool = dataset(DatasetRole::TrainPool, &[("same words", "pos"), ("other", "neg"), ("same words", "pos")]);
    let model = SyntheticModel::new(SyntheticParams::default()).unwrap();
    let ranked = score_pool(&model, &task, pool.examples(), &[], false).unwrap().ranked;
    let same: Vec<_> = ranked.iter().filter(|r| r.example.fields["text"] == "same words").collect();
    assert_eq!(same[0].score.log_value, same[1].score.log_value);
    assert!(same[0].example.id < same[1].example.id);
}

#[test]
fn best_of_n_picks_oracle_best_trial() {
    let (task, pool, test, params) = imbalanced();
    let model = SyntheticModel::new(params.clone()).unwrap();
    let oracle = Oracle::new(&task.label_set, &params);
    let pool_rows = rows(&task, &pool);
    let val_rows = rows(&task, &test);
    let config = BestOfConfig {
        trials: 10,
        validation_size: None,
        ..BestOfConfig::default()
    };
    let out = best_of_n_select(&model, &task, &pool, 16, &test, 3, &config).unwrap();
    let want: Vec<f64> = (0..10)
        .map(|t| oracle.accuracy(&uniform_baseline(&pool_rows, 2, 16, 3 + t), &val_rows))
        .collect();
    assert_eq!(out.trial_scores, want);
    let best = want.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(out.best_trial, want.iter().position(|v| *v == best).unwrap());
    assert!(out.trial_scores.iter().all(|s| *s <= out.trial_scores[out.best_trial]));
    let single = best_of_n_select(&model, &task, &pool, 16, &test, 3, &BestOfConfig { trials: 1, ..config }).unwrap();
    assert_eq!(single.demos.ids(), uniform_select(&task, &pool, 16, 3).unwrap().ids());
}

#[test]
fn kate_five_point_fixture() {
    let (task, _, _) = toy();
    let pool = dataset(
        DatasetRole::TrainPool,
        &[
            ("red apple pie", "pos"),
            ("green apple tart", "pos"),
            ("blue sky today", "neg"),
            ("red sky tonight", "neg"),
            ("apple pie recipe", "pos"),
        ],
    );
    let embedder = HashingEmbedder;
    let query = Example {
        id: 0,
        fields: [("text".to_string(), "red apple pie recipe".to_string())].into(),
        label: "pos".into(),
    };
    let qv = embedder.embed_text("red apple pie recipe").unwrap();
    let mut scan: Vec<(f64, usize)> = pool
        .examples()
        .iter()
        .map(|e| {
            let v = embedder.embed_text(&e.fields["text"]).unwrap();
            let cos: f64 = qv.values.iter().zip(&v.values).map(|(a, b)| a * b).sum();
            (1.0 - cos, e.id)
        })
        .collect();
    scan.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    for k in 1..=5 {
        let plan = RetrievalPlan::new(&task, RetrievalMethod::Kate, k, "hashing", DemoOrder::NearestLast, pool.clone()).unwrap();
        let r = Retriever::new(plan, Box::new(HashingEmbedder), &task).unwrap();
        let got = r.kate(&task, &query, DatasetRole::Test).unwrap().demos.ids();
        let mut want: Vec<usize> = scan[..k].iter().map(|s| s.1).collect();
        want.reverse();
        assert_eq!(got, want, "k = {k}");
    }
}

#[test]
fn ambig_restricts_to_zero_shot_top_two() {
    let task = TaskSpec::parse(
        r#"
name = "emotion"
labels = ["joy", "anger", "sadness", "fear"]
template = "{text} => {label}"
[verbalizers]
joy = "joy"
anger = "anger"
sadness = "sadness"
fear = "fear"
"#,
    )
    .unwrap();
    let params = SyntheticParams {
        bias: [("joy".to_string(), 1.2), ("anger".to_string(), 0.7), ("sadness".to_string(), 0.1)].into(),
        ..SyntheticParams::default()
    };
    let oracle = Oracle::new(&task.label_set, &params);
    let p = oracle.probs(&[], "storm at night");
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|a, b| p[*b].partial_cmp(&p[*a]).unwrap().then(a.cmp(b)));
    let top2: BTreeSet<&str> = order[..2].iter().map(|i| task.label_set.labels()[*i].as_str()).collect();
    assert_eq!(top2, ["anger", "joy"].into());

    let pool = dataset(
        DatasetRole::TrainPool,
        &[
            ("storm at night", "fear"),
            ("storm and rain", "sadness"),
            ("night storm fury", "anger"),
            ("bright night", "joy"),
            ("calm morning", "joy"),
            ("angry at night", "anger"),
        ],
    );
    let model = SyntheticModel::new(params).unwrap();
    let plan = RetrievalPlan::new(&task, RetrievalMethod::Ambig, 3, "hashing", DemoOrder::NearestLast, pool).unwrap();
    let r = Retriever::new(plan, Box::new(HashingEmbedder), &task).unwrap();
    let query = Example {
        id: 0,
        fields: [("text".to_string(), "storm at night".to_string())].into(),
        label: "fear".into(),
    };
    let got = r.ambig(&model, &task, &query, DatasetRole::Test).unwrap();
    assert_eq!(got.backfilled, 0);
    assert!(got.demos.members.iter().all(|e| top2.contains(e.label.as_str())));
    let plan = RetrievalPlan::new(&task, RetrievalMethod::Ambig, 5, "hashing", DemoOrder::NearestLast, r.plan().pool.clone()).unwrap();
    let r = Retriever::new(plan, Box::new(HashingEmbedder), &task).unwrap();
    let got = r.ambig(&model, &task, &query, DatasetRole::Test).unwrap();
    assert_eq!(got.backfilled, 1);
    assert_eq!(got.demos.len(), 5);
}

#[test]
fn transfer_gain_matches_oracle() {
    let source = TaskSpec::parse(
        r#"{"name":"src","labels":["yes","no"],"verbalizers":{"yes":"yes","no":"no"},"template":"Q: {text}\nA: {label}"}"#,
    )
    .unwrap();
    let target = TaskSpec::parse(
        r#"{"name":"dst","labels":["yes","no"],"verbalizers":{"yes":"Yes","no":"No"},"template":"Claim: {text} | Verdict: {label}"}"#,
    )
    .unwrap();
    let (_, src_pool, _, params) = imbalanced();
    let relabel = |d: &Dataset, role| {
        Dataset::new(
            role,
            d.examples()
                .iter()
                .map(|e| Example {
                    label: if e.label == "1" { "yes" } else { "no" }.into(),
                    ..e.clone()
                })
                .collect(),
        )
        .unwrap()
    };
    let (_, _, test, _) = imbalanced();
    let src_pool = relabel(&src_pool, DatasetRole::TrainPool);
    let tgt_test = relabel(&test, DatasetRole::Test);
    let tgt_pool = Dataset::new(DatasetRole::TrainPool, src_pool.examples()[..60].to_vec()).unwrap();
    let params = SyntheticParams {
        bias: [("no".to_string(), params.bias["0"])].into(),
        ..params
    };
    let model = SyntheticModel::new(params.clone()).unwrap();
    let demos = icr_core::selection::icr_select(&model, &source, &src_pool, &IcrConfig { seed: 4, ..IcrConfig::default() })
        .unwrap()
        .demos;
    let tr = transfer_evaluate(&model, &demos, &target, &tgt_test, None, Some(&tgt_pool), false).unwrap();

    let oracle = Oracle::new(&target.label_set, &params);
    let src_rows = rows(&source, &src_pool);
    let test_rows = rows(&target, &tgt_test);
    let frozen = rows_by_id(&src_rows, &demos.ids());
    let base = uniform_baseline(&rows(&target, &tgt_pool), 2, demos.len(), 4);
    let want = oracle.accuracy(&frozen, &test_rows) - oracle.accuracy(&base, &test_rows);
    assert!((tr.delta_accuracy.unwrap() - want).abs() < 1e-12);
}

#[test]
fn bins_match_sort_and_slice_oracle() {
    let (task, pool, test, params) = imbalanced();
    let model = SyntheticModel::new(params.clone()).unwrap();
    let AblationReport::MisconfidenceBins(report) =
        ablate_misconfidence_bins(&model, &task, &pool, &test, 5, 4, &[1, 2, 3], false).unwrap()
    else {
        panic!("wrong variant")
    };
    let oracle = Oracle::new(&task.label_set, &params);
    let mut scored: Vec<(f64, usize)> = rows(&task, &pool).iter().map(|r| (oracle.psi_ratio(&[], r).ln(), r.id)).collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let n = scored.len();
    for (b, rec) in report.bins.iter().enumerate() {
        let slice = &scored[b * n / 5..(b + 1) * n / 5];
        assert_eq!(rec.ids, slice.iter().map(|s| s.1).collect::<Vec<_>>());
        assert!((rec.lower - slice[0].0).abs() < 1e-12);
        assert!((rec.upper - slice[slice.len() - 1].0).abs() < 1e-12);
        assert_eq!(rec.scores.len(), 3);
    }
    let csv = AblationReport::MisconfidenceBins(report).to_csv().unwrap();
    assert_eq!(csv.lines().count(), 6);

    let AblationReport::MisconfidenceBins(one) =
        ablate_misconfidence_bins(&model, &task, &pool, &test, 1, 4, &[1], false).unwrap()
    else {
        panic!("wrong variant")
    };
    assert_eq!(one.bins[0].ids.len(), pool.len());
    assert!(ablate_misconfidence_bins(&model, &task, &pool, &test, 30, 4, &[1], false).is_err());
}

#[test]
fn full_misconfidence_is_more_skewed_than_icr() {
    let (task, pool, test, params) = imbalanced();
    let model = SyntheticModel::new(params.clone()).unwrap();
    let config = IcrConfig {
        seed: 2,
        ..IcrConfig::default()
    };
    let reports = ablate_variants(&model, &task, &pool, &test, &config).unwrap();
    let AblationReport::FullMisconfidence(full) = &reports[1] else {
        panic!("wrong variant")
    };
    let skew = |h: &[usize]| h.iter().max().unwrap() - h.iter().min().unwrap();
    // oracle: top 16 of the zero-context ranking
    let oracle = Oracle::new(&task.label_set, &params);
    let mut scored: Vec<(f64, usize, usize)> =
        rows(&task, &pool).iter().map(|r| (oracle.psi_ratio(&[], r), r.id, r.label)).collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut hist = vec![0; 2];
    for s in &scored[..16] {
        hist[s.2] += 1;
    }
    assert_eq!(full.variant.label_histogram, hist);
    assert_eq!(full.variant.member_ids, scored[..16].iter().map(|s| s.1).collect::<Vec<_>>());
    assert!(skew(&full.variant.label_histogram) > skew(&full.standard.label_histogram));
    let AblationReport::ZeroShotInit(zero) = &reports[0] else {
        panic!("wrong variant")
    };
    assert_eq!(zero.standard, full.standard);
}

#[test]
fn psi_case_study_reflects_label_one_misjudgment() {
    let (task, pool, test, params) = imbalanced();
    let model = SyntheticModel::new(params.clone()).unwrap();
    let config = IcrConfig {
        seed: 3,
        ..IcrConfig::default()
    };
    let AblationReport::PsiCaseStudy(study) = psi_case_study(&model, &task, &pool, &test, &config, 8).unwrap() else {
        panic!("wrong variant")
    };
    let oracle = Oracle::new(&task.label_set, &params);
    let pool_rows = rows(&task, &pool);
    let init = init_uniform(&pool_rows, 16, 3);
    let init_ids: BTreeSet<usize> = init.iter().map(|r| r.id).collect();
    assert_eq!(study.initial_member_ids, init.iter().map(|r| r.id).collect::<Vec<_>>());
    for (y, h) in study.histograms.iter().enumerate() {
        let vals: Vec<f64> = pool_rows
            .iter()
            .filter(|r| r.label == y && !init_ids.contains(&r.id))
            .map(|r| oracle.psi_ratio(&init, r).ln())
            .collect();
        assert_eq!(h.counts.iter().sum::<usize>(), vals.len());
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((h.mean_psi.unwrap() - mean).abs() < 1e-9);
    }
    assert!(study.histograms[1].mean_psi.unwrap() > study.histograms[0].mean_psi.unwrap());
    let total = |m: &Vec<Vec<usize>>| m.iter().flatten().sum::<usize>();
    assert_eq!(total(&study.before), test.len());
    assert_eq!(total(&study.after), test.len());
}
