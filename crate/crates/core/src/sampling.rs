//! Seeded sampling helpers shared by initialization, baselines, and subsampling.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::task::{Dataset, DatasetRole, Example, LabelSet};

pub type SeededRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Split `size` across strata proportionally to `counts` by largest remainder.
///
/// Remainder ties go to the earlier stratum. Integer arithmetic only.
pub fn proportional_counts(counts: &[usize], size: usize) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![0; counts.len()];
    }
    let mut alloc: Vec<usize> = counts.iter().map(|&c| size * c / total).collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    // larger remainder first, then label order
    order.sort_by(|&a, &b| {
        let ra = size * counts[a] % total;
        let rb = size * counts[b] % total;
        rb.cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(size.saturating_sub(assigned)) {
        alloc[i] += 1;
    }
    alloc
}

/// Draw `size` examples with per-label counts proportional to `examples`,
/// uniformly within each label. Returned in draw order (label by label).
pub fn stratified_draw(
    examples: &[Example],
    labels: &LabelSet,
    size: usize,
    rng: &mut SeededRng,
) -> Result<Vec<Example>> {
    if size > examples.len() {
        return Err(Error::Sampling(format!(
            "cannot draw {size} examples from {}",
            examples.len()
        )));
    }
    if size < labels.len() {
        return Err(Error::Sampling(format!(
            "sample size {size} is smaller than the {} labels",
            labels.len()
        )));
    }
    let mut by_label: Vec<Vec<&Example>> = vec![Vec::new(); labels.len()];
    for ex in examples {
        let i = labels
            .index_of(&ex.label)
            .ok_or_else(|| Error::Sampling(format!("example {} has unknown label '{}'", ex.id, ex.label)))?;
        by_label[i].push(ex);
    }
    let counts: Vec<usize> = by_label.iter().map(Vec::len).collect();
    let quota = proportional_counts(&counts, size);
    let mut out = Vec::with_capacity(size);
    for (group, &take) in by_label.iter().zip(&quota) {
        for i in index::sample(rng, group.len(), take).into_iter() {
            out.push(group[i].clone());
        }
    }
    Ok(out)
}

/// Draw `size` distinct examples uniformly, in random order.
pub fn uniform_draw(examples: &[Example], size: usize, rng: &mut SeededRng) -> Result<Vec<Example>> {
    if size > examples.len() {
        return Err(Error::Sampling(format!(
            "cannot draw {size} examples from {}",
            examples.len()
        )));
    }
    let mut out: Vec<Example> = index::sample(rng, examples.len(), size)
        .into_iter()
        .map(|i| examples[i].clone())
        .collect();
    out.shuffle(rng);
    Ok(out)
}

/// Label-proportional subsample that keeps original ids, sorted by id.
pub fn stratified_subsample(dataset: &Dataset, labels: &LabelSet, size: usize, seed: u64) -> Result<Dataset> {
    let mut rng = rng(seed);
    let drawn = stratified_draw(dataset.examples(), labels, size, &mut rng)?;
    Dataset::from_unordered(dataset.role, drawn)
}

/// Subset of `dataset` holding the given ids; keeps the dataset role.
pub fn subset(dataset: &Dataset, role: Option<DatasetRole>, keep: impl Fn(&Example) -> bool) -> Result<Dataset> {
    Dataset::new(
        role.unwrap_or(dataset.role),
        dataset.examples().iter().filter(|e| keep(e)).cloned().collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn binary() -> LabelSet {
        let v: BTreeMap<String, String> =
            [("yes".to_string(), "yes".to_string()), ("no".to_string(), "no".to_string())].into();
        LabelSet::new(vec!["yes".into(), "no".into()], &v).unwrap()
    }

    fn pool(yes: usize, no: usize) -> Dataset {
        let examples = (0..yes + no)
            .map(|id| Example {
                id,
                fields: [("text".to_string(), format!("t{id}"))].into(),
                label: if id < yes { "yes" } else { "no" }.into(),
            })
            .collect();
        Dataset::new(DatasetRole::TrainPool, examples).unwrap()
    }

    #[test]
    fn largest_remainder_rounding() {
        assert_eq!(proportional_counts(&[70, 30], 10), vec![7, 3]);
        assert_eq!(proportional_counts(&[70, 30], 16), vec![11, 5]);
        assert_eq!(proportional_counts(&[1, 1, 1], 2), vec![1, 1, 0]);
        assert_eq!(proportional_counts(&[5, 0, 5], 4), vec![2, 0, 2]);
    }

    #[test]
    fn subsample_counts_and_identity() {
        let ds = pool(70, 30);
        let labels = binary();
        let sub = stratified_subsample(&ds, &labels, 10, 3).unwrap();
        assert_eq!(sub.label_counts(&labels), vec![7, 3]);
        let all = stratified_subsample(&ds, &labels, 100, 3).unwrap();
        assert_eq!(all.ids(), ds.ids());
    }

    #[test]
    fn subsample_determinism() {
        let ds = pool(70, 30);
        let labels = binary();
        let a = stratified_subsample(&ds, &labels, 10, 42).unwrap();
        let b = stratified_subsample(&ds, &labels, 10, 42).unwrap();
        let c = stratified_subsample(&ds, &labels, 10, 43).unwrap();
        assert_eq!(a.ids(), b.ids());
        assert_eq!(a.label_counts(&labels), c.label_counts(&labels));
    }

    #[test]
    fn subsample_errors() {
        let ds = pool(3, 2);
        let labels = binary();
        assert!(stratified_subsample(&ds, &labels, 6, 0).is_err());
        assert!(stratified_subsample(&ds, &labels, 1, 0).is_err());
    }

    proptest! {
        #[test]
        fn proportional_within_one(counts in proptest::collection::vec(0usize..50, 2..6), frac in 0.0f64..1.0) {
            let total: usize = counts.iter().sum();
            prop_assume!(total > 0);
            let size = ((total as f64) * frac) as usize;
            let alloc = proportional_counts(&counts, size);
            prop_assert_eq!(alloc.iter().sum::<usize>(), size);
            for (c, a) in counts.iter().zip(&alloc) {
                let exact = size as f64 * *c as f64 / total as f64;
                prop_assert!((*a as f64 - exact).abs() < 1.0);
                prop_assert!(a <= c);
            }
        }

        #[test]
        fn uniform_draw_is_distinct(n in 1usize..60, seed in 0u64..1000) {
            let ds = pool(n, n);
            let m = n.min(7);
            let drawn = uniform_draw(ds.examples(), m, &mut rng(seed)).unwrap();
            let mut ids: Vec<usize> = drawn.iter().map(|e| e.id).collect();
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), m);
        }
    }
}
