//! Random forest with entropy splits over the frequency-domain features:
//! unbagged trees (every tree sees all rows), sqrt feature sampling per
//! node, and probability averaging across trees.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::gbt::TreeNode;

#[derive(Debug, Error, PartialEq)]
pub enum ForestError {
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("empty feature matrix")]
    EmptyFeatures,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RfConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
    pub seed: u64,
}

impl Default for RfConfig {
    fn default() -> Self {
        RfConfig {
            n_trees: 1600,
            max_depth: 90,
            min_samples_leaf: 2,
            min_samples_split: 2,
            seed: 0,
        }
    }
}

/// One forest tree: split nodes share [`TreeNode`] with the boosted trees;
/// leaf values store the probability of class 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestTree {
    pub nodes: Vec<TreeNode>,
}

impl ForestTree {
    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match self.nodes[at] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestModel {
    pub config: RfConfig,
    pub trees: Vec<ForestTree>,
}

impl ForestModel {
    /// Mean of per-tree class-1 probabilities.
    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        let total: f64 = self.trees.iter().map(|t| t.predict_proba(row)).sum();
        total / self.trees.len() as f64
    }
}

fn entropy(n_pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = n_pos as f64 / n as f64;
    let mut h = 0.0;
    if p > 0.0 {
        h -= p * p.ln();
    }
    if p < 1.0 {
        h -= (1.0 - p) * (1.0 - p).ln();
    }
    h
}

struct TreeBuilder<'a> {
    features: &'a [Vec<f64>],
    labels: &'a [u8],
    cfg: &'a RfConfig,
    n_candidates: usize,
    nodes: Vec<TreeNode>,
}

impl<'a> TreeBuilder<'a> {
    fn leaf(&mut self, rows: &[usize]) -> usize {
        let n_pos = rows.iter().filter(|&&r| self.labels[r] == 1).count();
        self.nodes.push(TreeNode::Leaf {
            value: n_pos as f64 / rows.len() as f64,
        });
        self.nodes.len() - 1
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let n = rows.len();
        let n_pos = rows.iter().filter(|&&r| self.labels[r] == 1).count();
        if depth >= self.cfg.max_depth
            || n < self.cfg.min_samples_split
            || n_pos == 0
            || n_pos == n
        {
            return self.leaf(&rows);
        }

        let n_features = self.features[0].len();
        let mut candidates: Vec<usize> = (0..n_features).collect();
        candidates.shuffle(rng);
        candidates.truncate(self.n_candidates);

        let parent_entropy = entropy(n_pos, n);
        let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
        let mut order: Vec<usize> = Vec::with_capacity(n);
        for &f in &candidates {
            order.clear();
            order.extend_from_slice(&rows);
            order.sort_by(|&a, &b| {
                self.features[a][f]
                    .partial_cmp(&self.features[b][f])
                    .unwrap()
            });
            let mut left_pos = 0usize;
            for i in 0..n - 1 {
                if self.labels[order[i]] == 1 {
                    left_pos += 1;
                }
                let left_n = i + 1;
                let right_n = n - left_n;
                // Split only between distinct values; threshold is the left
                // value so monotone transforms keep decisions intact.
                if self.features[order[i]][f] == self.features[order[i + 1]][f] {
                    continue;
                }
                if left_n < self.cfg.min_samples_leaf || right_n < self.cfg.min_samples_leaf {
                    continue;
                }
                let right_pos = n_pos - left_pos;
                let gain = parent_entropy
                    - (left_n as f64 / n as f64) * entropy(left_pos, left_n)
                    - (right_n as f64 / n as f64) * entropy(right_pos, right_n);
                if gain > best.map_or(1e-12, |b| b.0) {
                    best = Some((gain, f, self.features[order[i]][f]));
                }
            }
        }

        match best {
            None => self.leaf(&rows),
            Some((_, feature, threshold)) => {
                let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
                    .into_iter()
                    .partition(|&r| self.features[r][feature] <= threshold);
                let at = self.nodes.len();
                self.nodes.push(TreeNode::Leaf { value: 0.0 });
                let left = self.grow(left_rows, depth + 1, rng);
                let right = self.grow(right_rows, depth + 1, rng);
                self.nodes[at] = TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
                at
            }
        }
    }
}

/// Trains the forest. No bootstrap: every tree sees all rows and trees
/// differ only through per-node feature sampling. No validation fold is
/// used.
pub fn train_rf(
    features: &[Vec<f64>],
    labels: &[u8],
    cfg: &RfConfig,
) -> Result<ForestModel, ForestError> {
    if features.is_empty() || features[0].is_empty() {
        return Err(ForestError::EmptyFeatures);
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(ForestError::SingleClass);
    }
    let n_features = features[0].len();
    let n_candidates = (n_features as f64).sqrt().floor().max(1.0) as usize;

    let trees: Vec<ForestTree> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x2545f4914f6cdd1d) ^ t as u64);
            let mut builder = TreeBuilder {
                features,
                labels,
                cfg,
                n_candidates,
                nodes: Vec::new(),
            };
            let rows: Vec<usize> = (0..features.len()).collect();
            builder.grow(rows, 0, &mut rng);
            ForestTree {
                nodes: builder.nodes,
            }
        })
        .collect();
    Ok(ForestModel {
        config: cfg.clone(),
        trees,
    })
}
