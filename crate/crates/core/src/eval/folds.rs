//! Stratified fold assignment: within each (label, sex, hospital) stratum the
//! recording ids are shuffled by the seed and dealt round-robin, with the
//! dealing cursor carried across strata so overall fold sizes stay balanced.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::preprocess::{Label, Sex};

/// One row of the fold input: identity plus the stratification keys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldInput {
    pub recording_id: String,
    pub label: Label,
    pub sex: Sex,
    pub hospital_id: String,
}

/// Recording-id to fold-index map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub folds: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, recording_id: &str) -> Option<usize> {
        self.folds.get(recording_id).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.folds.values() {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn ids_in_fold(&self, fold: usize) -> Vec<String> {
        self.folds
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.clone())
            .collect()
    }
}

/// Deterministic stratified assignment of recordings into `k` folds.
///
/// The assignment depends only on the set of inputs and the seed, never on
/// input order. Small strata still deal round-robin; they are not an error.
pub fn stratified_folds(inputs: &[FoldInput], k: usize, seed: u64) -> FoldAssignment {
    assert!(k >= 2, "need at least two folds");
    let mut strata: BTreeMap<(u8, u8, String), Vec<&FoldInput>> = BTreeMap::new();
    for input in inputs {
        strata
            .entry((input.label.as_u8(), input.sex.as_u8(), input.hospital_id.clone()))
            .or_default()
            .push(input);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = BTreeMap::new();
    let mut cursor = 0usize;
    for (_, mut members) in strata {
        members.sort_by(|a, b| a.recording_id.cmp(&b.recording_id));
        members.shuffle(&mut rng);
        for m in members {
            folds.insert(m.recording_id.clone(), cursor % k);
            cursor += 1;
        }
    }
    FoldAssignment { k, folds }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(n: usize, hospitals: usize) -> Vec<FoldInput> {
        (0..n)
            .map(|i| FoldInput {
                recording_id: format!("rec{i:04}"),
                label: if i % 2 == 0 { Label::Normal } else { Label::Pathological },
                sex: if i % 4 < 2 { Sex::Female } else { Sex::Male },
                hospital_id: format!("h{}", i % hospitals),
            })
            .collect()
    }

    #[test]
    fn balanced_strata_give_equal_folds() {
        // 600 recordings over 4 balanced strata (single hospital).
        let rows = inputs(600, 1);
        let fa = stratified_folds(&rows, 6, 42);
        assert_eq!(fa.fold_sizes(), vec![100; 6]);
    }

    #[test]
    fn seven_member_stratum_splits_two_one() {
        let rows: Vec<FoldInput> = (0..7)
            .map(|i| FoldInput {
                recording_id: format!("r{i}"),
                label: Label::Normal,
                sex: Sex::Female,
                hospital_id: "h".into(),
            })
            .collect();
        let fa = stratified_folds(&rows, 6, 1);
        let mut sizes = fa.fold_sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![1, 1, 1, 1, 1, 2]);
    }

    #[test]
    fn fold_sizes_stay_balanced_across_many_small_strata() {
        // 3 hospitals x 2 labels x 2 sexes = 12 strata of 7 each.
        let rows = inputs(84, 3);
        let fa = stratified_folds(&rows, 6, 5);
        let sizes = fa.fold_sizes();
        let max = *sizes.iter().max().unwrap();
        let min = *sizes.iter().min().unwrap();
        assert!(max - min <= 1, "unbalanced folds: {sizes:?}");
    }

    #[test]
    fn within_stratum_counts_differ_by_at_most_one() {
        let rows = inputs(100, 3);
        let fa = stratified_folds(&rows, 6, 9);
        let mut per_stratum: BTreeMap<(u8, u8, String), Vec<usize>> = BTreeMap::new();
        for r in &rows {
            let fold = fa.fold_of(&r.recording_id).unwrap();
            per_stratum
                .entry((r.label.as_u8(), r.sex.as_u8(), r.hospital_id.clone()))
                .or_insert_with(|| vec![0; 6])[fold] += 1;
        }
        for (stratum, counts) in per_stratum {
            let max = counts.iter().max().unwrap();
            let min = counts.iter().min().unwrap();
            assert!(max - min <= 1, "stratum {stratum:?}: {counts:?}");
        }
    }

    #[test]
    fn assignment_is_a_function_of_ids_and_seed() {
        let rows = inputs(60, 2);
        let mut reversed = rows.clone();
        reversed.reverse();
        let a = stratified_folds(&rows, 6, 7);
        let b = stratified_folds(&reversed, 6, 7);
        assert_eq!(a.folds, b.folds, "input order must not matter");
        let c = stratified_folds(&rows, 6, 8);
        assert_ne!(a.folds, c.folds, "different seed should reshuffle");
    }
}
