//! Gradient-boosted decision trees with logistic loss, histogram splits,
//! per-level column subsampling and Newton leaf values, plus the 30-member
//! ensemble wrapper that averages member probabilities.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::loss::sigmoid;
use crate::eval::metrics::auc;

#[derive(Debug, Error, PartialEq)]
pub enum GbtError {
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("empty feature matrix")]
    EmptyFeatures,
    #[error("ensemble has no members")]
    EmptyEnsemble,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbtConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub depth: usize,
    pub l2_leaf_reg: f64,
    pub colsample_bylevel: f64,
    pub max_bins: usize,
    /// Use every distinct value as a split candidate (oracle mode for small
    /// problems).
    pub exact_splits: bool,
    pub seed: u64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        GbtConfig {
            iterations: 700,
            learning_rate: 0.085195,
            depth: 6,
            l2_leaf_reg: 1.1030,
            colsample_bylevel: 0.019947,
            max_bins: 255,
            exact_splits: false,
            seed: 0,
        }
    }
}

/// Flat tree node: internal nodes carry (feature, threshold); leaves carry
/// the logit contribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TreeNode {
    Split {
        feature: usize,
        /// Decision: x[feature] <= threshold goes left. Thresholds are
        /// observed feature values, which keeps tree predictions invariant
        /// under strictly monotone per-feature transformations.
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

impl DecisionTree {
    pub fn predict(&self, row: &[f64]) -> f64 {
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

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], at: usize) -> usize {
            match nodes[at] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Quantile bin edges per feature; edges are observed values, bin b means
/// x <= edges[b] fails for all earlier edges.
struct Binning {
    edges: Vec<Vec<f64>>,
}

impl Binning {
    fn build(features: &[Vec<f64>], n_features: usize, cfg: &GbtConfig) -> Binning {
        let n = features.len();
        let mut edges = Vec::with_capacity(n_features);
        let mut column: Vec<f64> = Vec::with_capacity(n);
        for f in 0..n_features {
            column.clear();
            column.extend(features.iter().map(|row| row[f]));
            column.sort_by(|a, b| a.partial_cmp(b).unwrap());
            column.dedup();
            let distinct = column.len();
            let max_edges = if cfg.exact_splits {
                usize::MAX
            } else {
                cfg.max_bins
            };
            let mut fe: Vec<f64> = if distinct <= 1 {
                Vec::new()
            } else if distinct - 1 <= max_edges {
                // Every boundary between distinct values; the edge is the
                // left value of each boundary.
                column[..distinct - 1].to_vec()
            } else {
                (1..=max_edges)
                    .map(|j| column[j * (distinct - 1) / (max_edges + 1)])
                    .collect()
            };
            fe.dedup();
            edges.push(fe);
        }
        Binning { edges }
    }

    fn bin(&self, feature: usize, value: f64) -> usize {
        // Number of edges strictly below value: partition point of e < value
        // treating x <= edge as left.
        let e = &self.edges[feature];
        e.partition_point(|&edge| edge < value)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbtModel {
    pub config: GbtConfig,
    pub base_score: f64,
    pub trees: Vec<DecisionTree>,
    /// Validation-optimal tree count the model was truncated to.
    pub chosen_trees: usize,
}

impl GbtModel {
    pub fn predict_logit(&self, row: &[f64]) -> f64 {
        let mut z = self.base_score;
        for t in &self.trees {
            z += self.config.learning_rate * t.predict(row);
        }
        z
    }

    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        sigmoid(self.predict_logit(row))
    }
}

struct NodeWork {
    node: usize,
    rows: Vec<usize>,
    sum_g: f64,
    sum_h: f64,
}

fn leaf_value(sum_g: f64, sum_h: f64, lambda: f64) -> f64 {
    -sum_g / (sum_h + lambda)
}

/// Fits one depth-limited regression tree to the (gradient, hessian) targets
/// with per-level column subsampling.
fn grow_tree(
    features: &[Vec<f64>],
    binning: &Binning,
    binned: &[Vec<u16>],
    grad: &[f64],
    hess: &[f64],
    cfg: &GbtConfig,
    rng: &mut ChaCha8Rng,
) -> DecisionTree {
    let n_features = binning.edges.len();
    let lambda = cfg.l2_leaf_reg;
    let mut nodes: Vec<TreeNode> = vec![TreeNode::Leaf { value: 0.0 }];
    let all_rows: Vec<usize> = (0..grad.len()).collect();
    let (g0, h0) = (grad.iter().sum(), hess.iter().sum());
    let mut level = vec![NodeWork {
        node: 0,
        rows: all_rows,
        sum_g: g0,
        sum_h: h0,
    }];

    let n_sampled = ((cfg.colsample_bylevel * n_features as f64).ceil() as usize)
        .clamp(1, n_features);

    for _depth in 0..cfg.depth {
        if level.is_empty() {
            break;
        }
        // Per-level feature subset, shared by every node on the level.
        let mut candidates: Vec<usize> = (0..n_features).collect();
        candidates.shuffle(rng);
        candidates.truncate(n_sampled);
        candidates.sort_unstable();

        let mut next_level = Vec::new();
        for work in level {
            let parent_score = work.sum_g * work.sum_g / (work.sum_h + lambda);
            let mut best: Option<(f64, usize, usize)> = None; // (gain, feature, edge bin)
            for &f in &candidates {
                let n_bins = binning.edges[f].len() + 1;
                if n_bins <= 1 {
                    continue;
                }
                let mut hist_g = vec![0.0; n_bins];
                let mut hist_h = vec![0.0; n_bins];
                let mut hist_c = vec![0usize; n_bins];
                for &r in &work.rows {
                    let b = binned[r][f] as usize;
                    hist_g[b] += grad[r];
                    hist_h[b] += hess[r];
                    hist_c[b] += 1;
                }
                let total_c = work.rows.len();
                let mut left_g = 0.0;
                let mut left_h = 0.0;
                let mut left_c = 0usize;
                for b in 0..n_bins - 1 {
                    left_g += hist_g[b];
                    left_h += hist_h[b];
                    left_c += hist_c[b];
                    if left_c == 0 || left_c == total_c {
                        continue;
                    }
                    let right_g = work.sum_g - left_g;
                    let right_h = work.sum_h - left_h;
                    let gain = left_g * left_g / (left_h + lambda)
                        + right_g * right_g / (right_h + lambda)
                        - parent_score;
                    if gain > best.map_or(1e-12, |b| b.0) {
                        best = Some((gain, f, b));
                    }
                }
            }
            match best {
                None => {
                    nodes[work.node] = TreeNode::Leaf {
                        value: leaf_value(work.sum_g, work.sum_h, lambda),
                    };
                }
                Some((_, feature, edge_bin)) => {
                    let threshold = binning.edges[feature][edge_bin];
                    let mut left_rows = Vec::new();
                    let mut right_rows = Vec::new();
                    let (mut lg, mut lh) = (0.0, 0.0);
                    for &r in &work.rows {
                        if (binned[r][feature] as usize) <= edge_bin {
                            lg += grad[r];
                            lh += hess[r];
                            left_rows.push(r);
                        } else {
                            right_rows.push(r);
                        }
                    }
                    let left = nodes.len();
                    nodes.push(TreeNode::Leaf { value: 0.0 });
                    let right = nodes.len();
                    nodes.push(TreeNode::Leaf { value: 0.0 });
                    nodes[work.node] = TreeNode::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    };
                    next_level.push(NodeWork {
                        node: left,
                        rows: left_rows,
                        sum_g: lg,
                        sum_h: lh,
                    });
                    next_level.push(NodeWork {
                        node: right,
                        rows: right_rows,
                        sum_g: work.sum_g - lg,
                        sum_h: work.sum_h - lh,
                    });
                }
            }
        }
        level = next_level;
    }
    // Depth cap reached: finalize remaining work items as leaves.
    for work in level {
        nodes[work.node] = TreeNode::Leaf {
            value: leaf_value(work.sum_g, work.sum_h, lambda),
        };
    }
    let _ = features;
    DecisionTree { nodes }
}

/// Per-iteration training trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbtTrace {
    pub train_logloss: Vec<f64>,
    pub val_auc: Vec<f64>,
}

/// Stagewise boosting with logistic loss; the returned model is truncated
/// to the validation-AUC-optimal tree prefix.
pub fn train_gbt(
    features: &[Vec<f64>],
    labels: &[u8],
    cfg: &GbtConfig,
    validation: (&[Vec<f64>], &[u8]),
) -> Result<(GbtModel, GbtTrace), GbtError> {
    let n = features.len();
    if n == 0 || features[0].is_empty() {
        return Err(GbtError::EmptyFeatures);
    }
    let n_features = features[0].len();
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 || n_pos == n {
        return Err(GbtError::SingleClass);
    }

    let binning = Binning::build(features, n_features, cfg);
    let binned: Vec<Vec<u16>> = features
        .iter()
        .map(|row| {
            (0..n_features)
                .map(|f| binning.bin(f, row[f]) as u16)
                .collect()
        })
        .collect();

    let prior = n_pos as f64 / n as f64;
    let base_score = (prior / (1.0 - prior)).ln();
    let mut logits = vec![base_score; n];
    let (val_x, val_y) = validation;
    let mut val_logits = vec![base_score; val_x.len()];

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trees = Vec::with_capacity(cfg.iterations);
    let mut trace = GbtTrace {
        train_logloss: Vec::with_capacity(cfg.iterations),
        val_auc: Vec::with_capacity(cfg.iterations),
    };
    let mut best_auc = f64::NEG_INFINITY;
    let mut best_len = 0usize;

    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for _it in 0..cfg.iterations {
        let mut logloss = 0.0;
        for i in 0..n {
            let p = sigmoid(logits[i]);
            let y = labels[i] as f64;
            grad[i] = p - y;
            hess[i] = (p * (1.0 - p)).max(1e-12);
            logloss -= y * p.max(1e-300).ln() + (1.0 - y) * (1.0 - p).max(1e-300).ln();
        }
        trace.train_logloss.push(logloss / n as f64);

        let tree = grow_tree(features, &binning, &binned, &grad, &hess, cfg, &mut rng);
        for i in 0..n {
            logits[i] += cfg.learning_rate * tree.predict(&features[i]);
        }
        for (zi, row) in val_logits.iter_mut().zip(val_x) {
            *zi += cfg.learning_rate * tree.predict(row);
        }
        trees.push(tree);

        if !val_x.is_empty() {
            let scores: Vec<f64> = val_logits.iter().map(|&z| sigmoid(z)).collect();
            if let Ok(a) = auc(&scores, val_y) {
                trace.val_auc.push(a);
                if a > best_auc {
                    best_auc = a;
                    best_len = trees.len();
                }
            }
        }
    }
    let chosen = if val_x.is_empty() || best_len == 0 {
        trees.len()
    } else {
        best_len
    };
    trees.truncate(chosen);
    Ok((
        GbtModel {
            config: cfg.clone(),
            base_score,
            trees,
            chosen_trees: chosen,
        },
        trace,
    ))
}

/// The 30-member gradient-boosted ensemble; members differ only by seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbeModel {
    pub members: Vec<GbtModel>,
}

pub const GBE_MEMBERS: usize = 30;

pub fn train_gbe(
    features: &[Vec<f64>],
    labels: &[u8],
    cfg: &GbtConfig,
    validation: (&[Vec<f64>], &[u8]),
    n_members: usize,
) -> Result<GbeModel, GbtError> {
    let members: Result<Vec<GbtModel>, GbtError> = (0..n_members)
        .into_par_iter()
        .map(|m| {
            let mut member_cfg = cfg.clone();
            // Mix the member index into the seed.
            member_cfg.seed = cfg.seed.wrapping_mul(0x9e3779b97f4a7c15) ^ (m as u64 + 1);
            train_gbt(features, labels, &member_cfg, validation).map(|(model, _)| model)
        })
        .collect();
    Ok(GbeModel { members: members? })
}

impl GbeModel {
    /// Arithmetic mean of member probabilities.
    pub fn predict_proba(&self, row: &[f64]) -> Result<f64, GbtError> {
        if self.members.is_empty() {
            return Err(GbtError::EmptyEnsemble);
        }
        let total: f64 = self.members.iter().map(|m| m.predict_proba(row)).sum();
        Ok(total / self.members.len() as f64)
    }
}

/// Mean of already-computed member probabilities.
pub fn ensemble_mean(member_probs: &[f64]) -> Result<f64, GbtError> {
    if member_probs.is_empty() {
        return Err(GbtError::EmptyEnsemble);
    }
    Ok(member_probs.iter().sum::<f64>() / member_probs.len() as f64)
}
