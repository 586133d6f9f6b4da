//! CART decision trees with cost-complexity pruning, and bagged random forests.
//!
//! Split candidates are midpoints between consecutive distinct feature values
//! present at a node, scored by weighted Gini decrease. Routing is
//! `value < threshold` to the left child, `value >= threshold` to the right.
//! Equal-gain candidates resolve to the lowest feature index, then the lowest
//! threshold.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::rng::{derive, seeded};

/// Splits must improve weighted impurity by more than this.
const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("max_depth must be at least 1")]
    BadDepth,
    #[error("n_trees must be at least 1")]
    NoTrees,
    #[error("sample has {found} features, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("malformed tree: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
}

/// One tree node. `distribution` is the class distribution of the training
/// samples reaching the node; for leaves it is the prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub split: Option<Split>,
    pub distribution: Vec<f64>,
    /// Weighted training sample count.
    pub samples: f64,
    /// Gini impurity of the node's training samples.
    pub impurity: f64,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub n_features: usize,
    pub n_classes: usize,
    pub max_depth: usize,
    /// Node 0 is the root.
    pub nodes: Vec<Node>,
}

/// One root-to-leaf path: `(feature, goes_left, threshold)` per split, then the leaf node.
#[derive(Debug, Clone, PartialEq)]
pub struct TreePath {
    pub steps: Vec<(usize, bool, f64)>,
    pub leaf: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    All,
    Sqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub ccp_alpha: f64,
    pub max_features: MaxFeatures,
    pub seed: u64,
}

impl TreeConfig {
    pub fn new(max_depth: usize) -> Self {
        Self {
            max_depth,
            ccp_alpha: 0.0,
            max_features: MaxFeatures::All,
            seed: 0,
        }
    }

    pub fn ccp_alpha(mut self, alpha: f64) -> Self {
        self.ccp_alpha = alpha;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

impl DecisionTree {
    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    /// Feature tested at the root, if the tree has any split.
    pub fn root_feature(&self) -> Option<usize> {
        self.root().split.map(|s| s.feature)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    fn check_dim(&self, sample: &[f64]) -> Result<(), TreeError> {
        if sample.len() != self.n_features {
            return Err(TreeError::DimensionMismatch {
                expected: self.n_features,
                found: sample.len(),
            });
        }
        Ok(())
    }

    pub fn leaf_index(&self, sample: &[f64]) -> Result<usize, TreeError> {
        self.check_dim(sample)?;
        let mut at = 0;
        while let Some(s) = self.nodes[at].split {
            at = if sample[s.feature] < s.threshold {
                s.left
            } else {
                s.right
            };
        }
        Ok(at)
    }

    /// Class distribution of the single reached leaf.
    pub fn predict_dist(&self, sample: &[f64]) -> Result<&[f64], TreeError> {
        Ok(&self.nodes[self.leaf_index(sample)?].distribution)
    }

    pub fn predict(&self, sample: &[f64]) -> Result<usize, TreeError> {
        Ok(argmax(self.predict_dist(sample)?))
    }

    pub fn accuracy(&self, ds: &Dataset) -> Result<f64, TreeError> {
        let mut correct = 0usize;
        for (x, y) in ds.samples() {
            correct += usize::from(self.predict(x)? == y);
        }
        Ok(correct as f64 / ds.n_samples().max(1) as f64)
    }

    /// Longest root-to-leaf path length (number of splits).
    pub fn depth(&self) -> usize {
        fn go(t: &DecisionTree, at: usize) -> usize {
            match t.nodes[at].split {
                None => 0,
                Some(s) => 1 + go(t, s.left).max(go(t, s.right)),
            }
        }
        go(self, 0)
    }

    /// Root-to-leaf paths in left-first depth-first order.
    pub fn paths(&self) -> Vec<TreePath> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, Vec::new())];
        while let Some((at, steps)) = stack.pop() {
            match self.nodes[at].split {
                None => out.push(TreePath { steps, leaf: at }),
                Some(s) => {
                    let mut right = steps.clone();
                    right.push((s.feature, false, s.threshold));
                    let mut left = steps;
                    left.push((s.feature, true, s.threshold));
                    stack.push((s.right, right));
                    stack.push((s.left, left));
                }
            }
        }
        out
    }

    /// Normalized total Gini decrease per feature.
    pub fn feature_importances(&self) -> Vec<f64> {
        let mut imp = vec![0.0; self.n_features];
        for n in &self.nodes {
            if let Some(s) = n.split {
                let (l, r) = (&self.nodes[s.left], &self.nodes[s.right]);
                imp[s.feature] +=
                    n.samples * n.impurity - l.samples * l.impurity - r.samples * r.impurity;
            }
        }
        let total: f64 = imp.iter().sum();
        if total > 0.0 {
            imp.iter_mut().for_each(|v| *v /= total);
        }
        imp
    }

    /// Structural checks used after deserialization.
    pub fn validate(&self) -> Result<(), TreeError> {
        if self.nodes.is_empty() {
            return Err(TreeError::Malformed("no nodes".into()));
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        while let Some(at) = stack.pop() {
            if seen[at] {
                return Err(TreeError::Malformed(format!("node {at} reached twice")));
            }
            seen[at] = true;
            let node = &self.nodes[at];
            if node.distribution.len() != self.n_classes {
                return Err(TreeError::Malformed(format!("node {at} distribution length")));
            }
            if let Some(s) = node.split {
                if s.left >= self.nodes.len() || s.right >= self.nodes.len() {
                    return Err(TreeError::Malformed(format!("node {at} child out of range")));
                }
                if s.feature >= self.n_features {
                    return Err(TreeError::Malformed(format!("node {at} feature out of range")));
                }
                stack.push(s.left);
                stack.push(s.right);
            } else {
                let sum: f64 = node.distribution.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(TreeError::Malformed(format!("leaf {at} sums to {sum}")));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, TreeError> {
        let t: Self = serde_json::from_str(s).map_err(|e| TreeError::Malformed(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Per-feature rank encoding of a training set: `ranks[f][i]` is the position
/// of sample `i`'s value among the sorted distinct values `uniques[f]`.
pub struct Columns {
    ranks: Vec<Vec<u32>>,
    uniques: Vec<Vec<f64>>,
}

impl Columns {
    pub fn new(ds: &Dataset) -> Self {
        let n = ds.n_samples();
        let f = ds.n_features();
        let values = ds.values();
        let (ranks, uniques) = (0..f)
            .into_par_iter()
            .map(|j| {
                let mut u: Vec<f64> = (0..n).map(|i| values[i * f + j]).collect();
                u.sort_unstable_by(f64::total_cmp);
                u.dedup();
                let r: Vec<u32> = (0..n)
                    .map(|i| {
                        u.binary_search_by(|p| p.total_cmp(&values[i * f + j]))
                            .expect("value present") as u32
                    })
                    .collect();
                (r, u)
            })
            .unzip();
        Self { ranks, uniques }
    }
}

struct Candidate {
    gain: f64,
    feature: usize,
    /// Samples with rank <= boundary go left.
    boundary: u32,
    threshold: f64,
}

struct Builder<'a> {
    cols: &'a Columns,
    labels: &'a [usize],
    weights: &'a [f64],
    n_classes: usize,
    n_features: usize,
    cfg: TreeConfig,
    rng: crate::rng::Rng,
    nodes: Vec<Node>,
    // scratch
    hist: Vec<f64>,
    pairs: Vec<(u32, usize, f64)>,
}

impl Builder<'_> {
    fn node_stats(&self, idx: &[u32]) -> (Vec<f64>, f64) {
        let mut counts = vec![0.0; self.n_classes];
        for &i in idx {
            counts[self.labels[i as usize]] += self.weights[i as usize];
        }
        let total = counts.iter().sum();
        (counts, total)
    }

    fn candidate_features(&mut self) -> (Vec<usize>, Vec<usize>) {
        match self.cfg.max_features {
            MaxFeatures::All => ((0..self.n_features).collect(), Vec::new()),
            MaxFeatures::Sqrt => {
                let m = ((self.n_features as f64).sqrt().floor() as usize).max(1);
                let mut all: Vec<usize> = (0..self.n_features).collect();
                all.shuffle(&mut self.rng);
                let rest = all.split_off(m.min(all.len()));
                all.sort_unstable();
                (all, rest)
            }
        }
    }

    fn best_for_feature(
        &mut self,
        f: usize,
        idx: &[u32],
        totals: &[f64],
        total_w: f64,
        parent_imp: f64,
    ) -> Option<Candidate> {
        let ranks = &self.cols.ranks[f];
        let uniq = &self.cols.uniques[f];
        let c = self.n_classes;
        let mut left = vec![0.0; c];
        let mut wl = 0.0;
        let mut sq_l = 0.0;
        let mut sq_r: f64 = totals.iter().map(|t| t * t).sum();
        let mut best: Option<Candidate> = None;

        let consider = |wl: f64, sq_l: f64, sq_r: f64, prev: u32, next: u32, best: &mut Option<Candidate>| {
            let wr = total_w - wl;
            if wl <= 0.0 || wr <= 0.0 {
                return;
            }
            let gini_l = 1.0 - sq_l / (wl * wl);
            let gini_r = 1.0 - sq_r / (wr * wr);
            let gain = parent_imp - (wl * gini_l + wr * gini_r) / total_w;
            if gain > MIN_GAIN && best.as_ref().is_none_or(|b| gain > b.gain) {
                let (lo, hi) = (uniq[prev as usize], uniq[next as usize]);
                let mut threshold = 0.5 * (lo + hi);
                if threshold <= lo {
                    threshold = hi;
                }
                *best = Some(Candidate {
                    gain,
                    feature: f,
                    boundary: prev,
                    threshold,
                });
            }
        };

        let add = |left: &mut [f64], cls: usize, w: f64, wl: &mut f64, sq_l: &mut f64, sq_r: &mut f64| {
            let l = left[cls];
            let r = totals[cls] - l;
            *sq_l += 2.0 * l * w + w * w;
            *sq_r += -2.0 * r * w + w * w;
            left[cls] = l + w;
            *wl += w;
        };

        if idx.len() * 8 < uniq.len() {
            self.pairs.clear();
            self.pairs.extend(
                idx.iter()
                    .map(|&i| (ranks[i as usize], self.labels[i as usize], self.weights[i as usize])),
            );
            self.pairs.sort_unstable_by_key(|p| p.0);
            let pairs = std::mem::take(&mut self.pairs);
            for k in 0..pairs.len() {
                let (r, cls, w) = pairs[k];
                add(&mut left, cls, w, &mut wl, &mut sq_l, &mut sq_r);
                if let Some(&(next, _, _)) = pairs.get(k + 1) {
                    if next != r {
                        consider(wl, sq_l, sq_r, r, next, &mut best);
                    }
                }
            }
            self.pairs = pairs;
        } else {
            let u = uniq.len();
            if self.hist.len() < u * (c + 1) {
                self.hist.resize(u * (c + 1), 0.0);
            }
            // hist[r * (c + 1)] holds the rank total, then per-class weights.
            for &i in idx {
                let r = ranks[i as usize] as usize;
                let w = self.weights[i as usize];
                self.hist[r * (c + 1)] += w;
                self.hist[r * (c + 1) + 1 + self.labels[i as usize]] += w;
            }
            let mut prev: Option<u32> = None;
            for r in 0..u {
                let base = r * (c + 1);
                if self.hist[base] == 0.0 {
                    continue;
                }
                if let Some(p) = prev {
                    consider(wl, sq_l, sq_r, p, r as u32, &mut best);
                }
                for cls in 0..c {
                    let w = self.hist[base + 1 + cls];
                    if w != 0.0 {
                        add(&mut left, cls, w, &mut wl, &mut sq_l, &mut sq_r);
                    }
                }
                prev = Some(r as u32);
            }
            for &i in idx {
                let r = ranks[i as usize] as usize;
                self.hist[r * (c + 1)..(r + 1) * (c + 1)].fill(0.0);
            }
        }
        best
    }

    fn build(&mut self, idx: Vec<u32>, depth: usize) -> usize {
        let (counts, total) = self.node_stats(&idx);
        let sq: f64 = counts.iter().map(|c| c * c).sum();
        let impurity = 1.0 - sq / (total * total);
        let distribution: Vec<f64> = counts.iter().map(|c| c / total).collect();
        let at = self.nodes.len();
        self.nodes.push(Node {
            split: None,
            distribution,
            samples: total,
            impurity,
        });
        if depth >= self.cfg.max_depth || idx.len() < 2 || impurity <= 0.0 {
            return at;
        }

        let (primary, rest) = self.candidate_features();
        let mut best: Option<Candidate> = None;
        for &f in &primary {
            if let Some(c) = self.best_for_feature(f, &idx, &counts, total, impurity) {
                if best.as_ref().is_none_or(|b| c.gain > b.gain) {
                    best = Some(c);
                }
            }
        }
        // As with sklearn, keep drawing features past the subset until a valid
        // split turns up.
        for &f in &rest {
            if best.is_some() {
                break;
            }
            best = self.best_for_feature(f, &idx, &counts, total, impurity);
        }
        let Some(best) = best else {
            return at;
        };

        let ranks = &self.cols.ranks[best.feature];
        let (l, r): (Vec<u32>, Vec<u32>) = idx
            .iter()
            .partition(|&&i| ranks[i as usize] <= best.boundary);
        drop(idx);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[at].split = Some(Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        });
        at
    }
}

fn grow(
    ds: &Dataset,
    cols: &Columns,
    weights: &[f64],
    cfg: TreeConfig,
) -> Result<DecisionTree, TreeError> {
    if cfg.max_depth < 1 {
        return Err(TreeError::BadDepth);
    }
    let idx: Vec<u32> = (0..ds.n_samples() as u32)
        .filter(|&i| weights[i as usize] > 0.0)
        .collect();
    if idx.is_empty() {
        return Err(TreeError::EmptyTrainingSet);
    }
    let mut b = Builder {
        cols,
        labels: ds.labels(),
        weights,
        n_classes: ds.n_classes(),
        n_features: ds.n_features(),
        cfg,
        rng: seeded(cfg.seed),
        nodes: Vec::new(),
        hist: Vec::new(),
        pairs: Vec::new(),
    };
    b.build(idx, 0);
    let mut tree = DecisionTree {
        n_features: ds.n_features(),
        n_classes: ds.n_classes(),
        max_depth: cfg.max_depth,
        nodes: b.nodes,
    };
    if cfg.ccp_alpha > 0.0 {
        tree = prune(&tree, cfg.ccp_alpha);
    }
    Ok(tree)
}

/// Train a CART classifier on a (normalized) dataset.
pub fn train_dt(train: &Dataset, cfg: TreeConfig) -> Result<DecisionTree, TreeError> {
    if train.is_empty() {
        return Err(TreeError::EmptyTrainingSet);
    }
    let cols = Columns::new(train);
    let weights = vec![1.0; train.n_samples()];
    grow(train, &cols, &weights, cfg)
}

struct Subtree {
    risk: f64,
    leaves: usize,
}

/// Leaf risk totals and leaf counts of every subtree (weighted-Gini risk,
/// normalized by root weight).
fn subtree_stats(tree: &DecisionTree, pruned: &[bool]) -> Vec<Subtree> {
    let root_w = tree.nodes[0].samples;
    let mut out: Vec<Subtree> = tree
        .nodes
        .iter()
        .map(|_| Subtree { risk: 0.0, leaves: 0 })
        .collect();
    fn go(t: &DecisionTree, pruned: &[bool], root_w: f64, at: usize, out: &mut [Subtree]) {
        let node = &t.nodes[at];
        match node.split {
            Some(s) if !pruned[at] => {
                go(t, pruned, root_w, s.left, out);
                go(t, pruned, root_w, s.right, out);
                out[at] = Subtree {
                    risk: out[s.left].risk + out[s.right].risk,
                    leaves: out[s.left].leaves + out[s.right].leaves,
                };
            }
            _ => {
                out[at] = Subtree {
                    risk: node.samples / root_w * node.impurity,
                    leaves: 1,
                };
            }
        }
    }
    go(tree, pruned, root_w, 0, &mut out);
    out
}

fn reachable_internal(tree: &DecisionTree, pruned: &[bool]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut stack = vec![0usize];
    while let Some(at) = stack.pop() {
        if let Some(s) = tree.nodes[at].split {
            if !pruned[at] {
                out.push(at);
                stack.push(s.left);
                stack.push(s.right);
            }
        }
    }
    out
}

/// Weakest-link pruning sequence: the effective alphas at which successive
/// subtrees collapse, paired with the pruned-node mask after each step.
fn weakest_links(tree: &DecisionTree, stop_above: f64) -> (Vec<f64>, Vec<bool>) {
    let mut pruned = vec![false; tree.nodes.len()];
    let mut alphas = Vec::new();
    loop {
        let stats = subtree_stats(tree, &pruned);
        let root_w = tree.nodes[0].samples;
        let mut weakest: Option<(f64, usize)> = None;
        for at in reachable_internal(tree, &pruned) {
            let node = &tree.nodes[at];
            let own = node.samples / root_w * node.impurity;
            let g = (own - stats[at].risk) / (stats[at].leaves as f64 - 1.0);
            if weakest.is_none_or(|(wg, wi)| g < wg || (g == wg && at < wi)) {
                weakest = Some((g, at));
            }
        }
        match weakest {
            Some((g, at)) if g <= stop_above => {
                pruned[at] = true;
                alphas.push(g);
            }
            _ => break,
        }
    }
    (alphas, pruned)
}

fn compact(tree: &DecisionTree, pruned: &[bool]) -> DecisionTree {
    let mut nodes = Vec::new();
    fn go(t: &DecisionTree, pruned: &[bool], at: usize, nodes: &mut Vec<Node>) -> usize {
        let src = &t.nodes[at];
        let me = nodes.len();
        nodes.push(Node {
            split: None,
            distribution: src.distribution.clone(),
            samples: src.samples,
            impurity: src.impurity,
        });
        if let (Some(s), false) = (src.split, pruned[at]) {
            let left = go(t, pruned, s.left, nodes);
            let right = go(t, pruned, s.right, nodes);
            nodes[me].split = Some(Split { left, right, ..s });
        }
        me
    }
    go(tree, pruned, 0, &mut nodes);
    DecisionTree {
        nodes,
        ..tree.clone()
    }
}

/// Minimal cost-complexity pruning at `alpha`.
pub fn prune(tree: &DecisionTree, alpha: f64) -> DecisionTree {
    let (_, pruned) = weakest_links(tree, alpha);
    compact(tree, &pruned)
}

/// Effective alphas of the full weakest-link pruning sequence (ascending).
pub fn ccp_path(tree: &DecisionTree) -> Vec<f64> {
    let (mut alphas, _) = weakest_links(tree, f64::INFINITY);
    // A later link can be weaker than an earlier one; the sequence of
    // distinct subtrees follows the running maximum.
    let mut running = 0.0f64;
    for a in &mut alphas {
        running = running.max(*a);
        *a = running;
    }
    alphas.dedup();
    alphas
}

/// Pick `ccp_alpha` by `folds`-fold cross-validated accuracy over the pruning
/// path of a tree grown on all of `train`. Ties prefer the larger alpha.
pub fn tune_ccp_alpha(
    train: &Dataset,
    max_depth: usize,
    folds: usize,
    seed: u64,
) -> Result<f64, TreeError> {
    let full = train_dt(train, TreeConfig::new(max_depth).seed(seed))?;
    let path = ccp_path(&full);
    let mut candidates = vec![0.0];
    // Geometric midpoints between consecutive path alphas.
    for w in path.windows(2) {
        candidates.push((w[0] * w[1]).sqrt());
    }
    let folds = folds.max(2).min(train.n_samples());
    let mut order: Vec<usize> = (0..train.n_samples()).collect();
    order.shuffle(&mut seeded(seed));
    let mut scores = vec![0.0; candidates.len()];
    for k in 0..folds {
        let pick = |in_val: bool| -> Vec<usize> {
            order
                .iter()
                .enumerate()
                .filter(|(i, _)| (i % folds == k) == in_val)
                .map(|(_, &s)| s)
                .collect()
        };
        let (val, fit) = (pick(true), pick(false));
        let (fit_ds, val_ds) = (train.subset(&fit), train.subset(&val));
        let grown = train_dt(&fit_ds, TreeConfig::new(max_depth).seed(seed))?;
        for (c, &alpha) in candidates.iter().enumerate() {
            scores[c] += prune(&grown, alpha).accuracy(&val_ds)?;
        }
    }
    let mut best = 0;
    for c in 1..candidates.len() {
        if scores[c] >= scores[best] - 1e-12 {
            best = c;
        }
    }
    Ok(candidates[best])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub ccp_alpha: f64,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub seed: u64,
}

impl ForestConfig {
    pub fn new(n_trees: usize, max_depth: usize, seed: u64) -> Self {
        Self {
            n_trees,
            max_depth,
            ccp_alpha: 0.0,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
    pub n_features: usize,
    pub n_classes: usize,
    pub config: ForestConfig,
}

/// Bootstrap multiplicities for tree `t` of a forest over `n` samples.
pub fn bootstrap_weights(cfg: &ForestConfig, t: usize, n: usize) -> Vec<f64> {
    if !cfg.bootstrap {
        return vec![1.0; n];
    }
    let mut rng = seeded(derive(cfg.seed, 2 * t as u64 + 1));
    let mut w = vec![0.0; n];
    for _ in 0..n {
        w[rng.random_range(0..n)] += 1.0;
    }
    w
}

pub fn train_rf(train: &Dataset, cfg: ForestConfig) -> Result<RandomForest, TreeError> {
    if cfg.n_trees == 0 {
        return Err(TreeError::NoTrees);
    }
    if train.is_empty() {
        return Err(TreeError::EmptyTrainingSet);
    }
    let cols = Columns::new(train);
    let n = train.n_samples();
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let weights = bootstrap_weights(&cfg, t, n);
            let tc = TreeConfig {
                max_depth: cfg.max_depth,
                ccp_alpha: cfg.ccp_alpha,
                max_features: cfg.max_features,
                seed: derive(cfg.seed, 2 * t as u64),
            };
            grow(train, &cols, &weights, tc)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RandomForest {
        trees,
        n_features: train.n_features(),
        n_classes: train.n_classes(),
        config: cfg,
    })
}

impl RandomForest {
    pub fn votes(&self, sample: &[f64]) -> Result<Vec<usize>, TreeError> {
        let mut votes = vec![0; self.n_classes];
        for t in &self.trees {
            votes[t.predict(sample)?] += 1;
        }
        Ok(votes)
    }

    /// Majority vote; ties go to the lowest class index.
    pub fn predict(&self, sample: &[f64]) -> Result<usize, TreeError> {
        let votes = self.votes(sample)?;
        let mut best = 0;
        for (c, &v) in votes.iter().enumerate() {
            if v > votes[best] {
                best = c;
            }
        }
        Ok(best)
    }

    pub fn accuracy(&self, ds: &Dataset) -> Result<f64, TreeError> {
        let correct: usize = ds
            .samples()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|(x, y)| self.predict(x).map(|p| usize::from(p == *y)))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .sum();
        Ok(correct as f64 / ds.n_samples().max(1) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ds(values: Vec<f64>, labels: Vec<usize>, n_features: usize, n_classes: usize) -> Dataset {
        Dataset::new(
            "t",
            (0..n_features).map(|i| format!("f{i}")).collect(),
            (0..n_classes).map(|c| c.to_string()).collect(),
            values,
            labels,
        )
        .unwrap()
    }

    fn random_ds(seed: u64, n: usize, f: usize, classes: usize) -> Dataset {
        let mut rng = seeded(seed);
        let values: Vec<f64> = (0..n * f).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels: Vec<usize> = (0..n)
            .map(|i| {
                let x = &values[i * f..(i + 1) * f];
                let s: f64 = x.iter().enumerate().map(|(j, v)| v * (j as f64 + 1.0)).sum();
                ((s + 3.0).max(0.0) as usize + usize::from(rng.random_bool(0.1))) % classes
            })
            .collect();
        ds(values, labels, f, classes)
    }

    #[test]
    fn single_class_is_one_leaf() {
        let d = ds(vec![0.1, 0.5, -0.3], vec![1, 1, 1], 1, 2);
        let t = train_dt(&d, TreeConfig::new(3)).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.predict_dist(&[0.9]).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn identical_samples_give_single_leaf() {
        let d = ds(vec![0.2, 0.2, 0.2, 0.2], vec![0, 1, 0, 1], 1, 2);
        let t = train_dt(&d, TreeConfig::new(4)).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.predict_dist(&[0.2]).unwrap(), &[0.5, 0.5]);
    }

    #[test]
    fn two_sample_split_oracle() {
        // Exhaustive oracle: the only separating candidate is the midpoint.
        let d = ds(vec![-0.4, 0.6], vec![0, 1], 1, 2);
        let t = train_dt(&d, TreeConfig::new(1)).unwrap();
        let s = t.root().split.unwrap();
        assert_eq!(s.feature, 0);
        assert!(s.threshold > -0.4 && s.threshold < 0.6);
        assert!((s.threshold - 0.1).abs() < 1e-15);
        assert_eq!(t.predict(&[-0.4]).unwrap(), 0);
        assert_eq!(t.predict(&[0.6]).unwrap(), 1);
    }

    #[test]
    fn threshold_ties_route_right() {
        let d = ds(vec![-0.4, 0.6], vec![0, 1], 1, 2);
        let t = train_dt(&d, TreeConfig::new(1)).unwrap();
        let thr = t.root().split.unwrap().threshold;
        assert_eq!(t.predict(&[thr]).unwrap(), 1);
    }

    #[test]
    fn equal_gain_prefers_lowest_feature() {
        // Both features separate the classes perfectly.
        let d = ds(vec![0.0, 0.0, 1.0, 1.0], vec![0, 1], 2, 2);
        let t = train_dt(&d, TreeConfig::new(1)).unwrap();
        assert_eq!(t.root_feature(), Some(0));
    }

    #[test]
    fn dimension_mismatch() {
        let d = ds(vec![-0.4, 0.6], vec![0, 1], 1, 2);
        let t = train_dt(&d, TreeConfig::new(1)).unwrap();
        assert_eq!(
            t.predict(&[0.0, 1.0]),
            Err(TreeError::DimensionMismatch { expected: 1, found: 2 })
        );
    }

    #[test]
    fn empty_set_and_bad_depth() {
        let d = ds(vec![], vec![], 1, 2);
        assert_eq!(train_dt(&d, TreeConfig::new(2)), Err(TreeError::EmptyTrainingSet));
        let d = ds(vec![0.0, 1.0], vec![0, 1], 1, 2);
        assert_eq!(train_dt(&d, TreeConfig::new(0)), Err(TreeError::BadDepth));
    }

    #[test]
    fn json_round_trip_and_validation() {
        let d = random_ds(3, 80, 3, 3);
        let t = train_dt(&d, TreeConfig::new(4)).unwrap();
        let back = DecisionTree::from_json(&t.to_json()).unwrap();
        assert_eq!(t, back);
        let mut broken = t.clone();
        broken.nodes[0].split.as_mut().unwrap().left = 10_000;
        assert!(DecisionTree::from_json(&broken.to_json()).is_err());
    }

    /// Independent oracle: enumerate every root-to-leaf path as a box and find
    /// the unique box containing the sample.
    fn box_oracle(t: &DecisionTree, x: &[f64]) -> usize {
        let hits: Vec<usize> = t
            .paths()
            .into_iter()
            .filter(|p| {
                p.steps
                    .iter()
                    .all(|&(f, left, thr)| if left { x[f] < thr } else { x[f] >= thr })
            })
            .map(|p| p.leaf)
            .collect();
        assert_eq!(hits.len(), 1);
        hits[0]
    }

    #[test]
    fn small_tree_matches_path_enumeration() {
        let d = random_ds(11, 200, 3, 2);
        let t = train_dt(&d, TreeConfig::new(2)).unwrap();
        assert!(t.nodes.len() <= 7);
        let mut rng = seeded(5);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            assert_eq!(t.leaf_index(&x).unwrap(), box_oracle(&t, &x));
        }
    }

    #[test]
    fn forest_degenerate_matches_single_tree() {
        let d = random_ds(7, 150, 4, 3);
        let mut cfg = ForestConfig::new(1, 4, 9);
        cfg.bootstrap = false;
        cfg.max_features = MaxFeatures::All;
        let rf = train_rf(&d, cfg).unwrap();
        let dt = train_dt(&d, TreeConfig::new(4)).unwrap();
        for (x, _) in d.samples() {
            assert_eq!(rf.predict(x).unwrap(), dt.predict(x).unwrap());
        }
    }

    #[test]
    fn forest_vote_tie_goes_to_lowest_class() {
        let leaf = |c: usize| DecisionTree {
            n_features: 1,
            n_classes: 3,
            max_depth: 1,
            nodes: vec![Node {
                split: None,
                distribution: (0..3).map(|k| f64::from(u8::from(k == c))).collect(),
                samples: 1.0,
                impurity: 0.0,
            }],
        };
        let rf = RandomForest {
            trees: vec![leaf(2), leaf(1)],
            n_features: 1,
            n_classes: 3,
            config: ForestConfig::new(2, 1, 0),
        };
        assert_eq!(rf.predict(&[0.0]).unwrap(), 1);
    }

    #[test]
    fn pruning_collapses_to_root_at_large_alpha() {
        let d = random_ds(2, 120, 2, 2);
        let t = train_dt(&d, TreeConfig::new(5)).unwrap();
        let p = prune(&t, 10.0);
        assert_eq!(p.nodes.len(), 1);
        p.validate().unwrap();
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn structural_invariants(seed in 0u64..1000, depth in 1usize..6) {
            let d = random_ds(seed, 90, 3, 3);
            let t = train_dt(&d, TreeConfig::new(depth)).unwrap();
            t.validate().unwrap();
            prop_assert!(t.depth() <= depth);
            for p in t.paths() {
                prop_assert!(p.steps.len() <= depth);
            }
            for n in &t.nodes {
                if let Some(s) = n.split {
                    let (l, r) = (&t.nodes[s.left], &t.nodes[s.right]);
                    let gain = n.samples * n.impurity - l.samples * l.impurity - r.samples * r.impurity;
                    prop_assert!(gain > 0.0);
                }
            }
        }

        #[test]
        fn pruning_is_monotone(seed in 0u64..1000, a in 0.0f64..0.05, b in 0.0f64..0.05) {
            let d = random_ds(seed, 100, 3, 2);
            let t = train_dt(&d, TreeConfig::new(6)).unwrap();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(prune(&t, hi).nodes.len() <= prune(&t, lo).nodes.len());
        }
    }
}
