//! Class-balanced, group-aware k-fold assignments.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::RiskLabel;

/// Sample partition within one fold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Train,
    Val,
    Test,
}

/// Group key → fold index. With group-aware splitting the key is the
/// source image id, so crops of one image never straddle partitions;
/// otherwise every sample is its own group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub folds: usize,
    pub group_of_sample: Vec<String>,
    pub fold_of_group: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of_sample(&self, sample: usize) -> usize {
        self.fold_of_group[&self.group_of_sample[sample]]
    }
}

fn group_key(source_id: &str, sample_idx: usize, group_aware: bool) -> String {
    if group_aware {
        source_id.to_string()
    } else {
        format!("{source_id}#{sample_idx}")
    }
}

/// Stratified shuffle of groups into `folds` test folds. Group labels are
/// the majority label of member samples (ties toward high risk); per fold
/// and class the group counts differ by at most one.
pub fn make_folds(
    samples: &[(String, RiskLabel)],
    folds: usize,
    seed: u64,
    group_aware: bool,
) -> Result<FoldAssignment> {
    if folds < 2 {
        return Err(Error::Config("need at least 2 folds".into()));
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput("fold samples"));
    }
    let group_of_sample: Vec<String> = samples
        .iter()
        .enumerate()
        .map(|(i, (sid, _))| group_key(sid, i, group_aware))
        .collect();

    let mut groups: BTreeMap<String, (usize, usize)> = BTreeMap::new(); // (n_low, n_high)
    for (key, (_, label)) in group_of_sample.iter().zip(samples) {
        let e = groups.entry(key.clone()).or_insert((0, 0));
        match label {
            RiskLabel::Low => e.0 += 1,
            RiskLabel::High => e.1 += 1,
        }
    }
    let mut by_class: [Vec<String>; 2] = [Vec::new(), Vec::new()];
    for (key, (lo, hi)) in &groups {
        // Majority label; ties toward high risk.
        let label = if hi >= lo { 1 } else { 0 };
        by_class[label].push(key.clone());
    }
    for (class, list) in by_class.iter().enumerate() {
        if list.len() < folds {
            return Err(Error::Config(format!(
                "class {class} has only {} groups for {folds} folds",
                list.len()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of_group = BTreeMap::new();
    for list in by_class.iter_mut() {
        list.shuffle(&mut rng);
        for (i, key) in list.iter().enumerate() {
            fold_of_group.insert(key.clone(), i % folds);
        }
    }
    Ok(FoldAssignment {
        folds,
        group_of_sample,
        fold_of_group,
    })
}

/// Partition for one fold: its groups are the test set, roughly
/// `val_fraction` of the remaining groups (stratified, at least one per
/// class) become validation, the rest train.
pub fn fold_partition(
    samples: &[(String, RiskLabel)],
    assignment: &FoldAssignment,
    fold: usize,
    val_fraction: f64,
    seed: u64,
) -> Result<Vec<Part>> {
    if fold >= assignment.folds {
        return Err(Error::IndexOutOfRange {
            op: "fold_partition",
            index: fold,
            limit: assignment.folds,
        });
    }
    // Remaining groups per class, deterministic order.
    let mut rest: [Vec<&String>; 2] = [Vec::new(), Vec::new()];
    let mut label_of_group: BTreeMap<&String, [usize; 2]> = BTreeMap::new();
    for (idx, (_, label)) in samples.iter().enumerate() {
        let key = &assignment.group_of_sample[idx];
        label_of_group.entry(key).or_insert([0, 0])[label.class_index()] += 1;
    }
    for (key, counts) in &label_of_group {
        if assignment.fold_of_group[*key] == fold {
            continue;
        }
        let class = usize::from(counts[1] >= counts[0]);
        rest[class].push(*key);
    }
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (fold as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut val_groups: Vec<&String> = Vec::new();
    for list in rest.iter_mut() {
        list.shuffle(&mut rng);
        let take = ((list.len() as f64 * val_fraction).round() as usize).clamp(1, list.len());
        val_groups.extend(list.drain(..take));
    }
    let val: std::collections::BTreeSet<&String> = val_groups.into_iter().collect();

    Ok((0..samples.len())
        .map(|idx| {
            let key = &assignment.group_of_sample[idx];
            if assignment.fold_of_group[key] == fold {
                Part::Test
            } else if val.contains(key) {
                Part::Val
            } else {
                Part::Train
            }
        })
        .collect())
}
