//! Soft decision trees: every root-to-leaf path becomes a row whose match
//! probability follows the analog CAM behavior model, and the path thresholds
//! are tuned individually by gradient descent.
//!
//! A node condition yields `σ(k(T − x))` for `x < T` and `σ(k(x − T))` for
//! `x > T`. A row combines its `n` node probabilities as
//! `clamp(a·∏p + b·Σp − b·(n−1)·v0, 0, 1)`; a row without conditions is 1.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::hardtree::{argmax, DecisionTree, RandomForest};
use crate::rng::seeded;

#[derive(Debug, Error, PartialEq)]
pub enum SoftError {
    #[error("sample has {found} features, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite gradient in epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error("invalid training setting: {0}")]
    BadConfig(String),
    #[error("malformed soft tree: {0}")]
    Malformed(String),
    #[error("forest has no trees")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Matches inputs below the threshold.
    Less,
    /// Matches inputs above the threshold.
    Greater,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub feature: usize,
    pub direction: Direction,
    pub threshold: f64,
    #[serde(default = "trainable_default")]
    pub trainable: bool,
}

fn trainable_default() -> bool {
    true
}

impl Condition {
    pub fn new(feature: usize, direction: Direction, threshold: f64) -> Self {
        Self {
            feature,
            direction,
            threshold,
            trainable: true,
        }
    }

    /// Signed input margin: positive when the condition is satisfied.
    #[inline]
    pub fn margin(&self, x: f64) -> f64 {
        match self.direction {
            Direction::Less => self.threshold - x,
            Direction::Greater => x - self.threshold,
        }
    }

    /// Hard decision, with the tree's tie rule (`x == T` fails `Less`).
    pub fn holds(&self, x: f64) -> bool {
        match self.direction {
            Direction::Less => x < self.threshold,
            Direction::Greater => x >= self.threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub conditions: Vec<Condition>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehaviorParams {
    pub a: f64,
    pub b: f64,
    /// Sigmoid gain in normalized input units.
    pub k: f64,
    /// Precharged match-line voltage, normalized.
    pub v_ml_t0: f64,
}

impl Default for BehaviorParams {
    fn default() -> Self {
        Self::product(20.0)
    }
}

impl BehaviorParams {
    /// Pure product rule (`a = 1, b = 0`) at gain `k`.
    pub fn product(k: f64) -> Self {
        Self {
            a: 1.0,
            b: 0.0,
            k,
            v_ml_t0: 1.0,
        }
    }

    pub fn with_k(self, k: f64) -> Self {
        Self { k, ..self }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Match probability of one condition at input `x`.
#[inline]
pub fn node_prob(cond: &Condition, x: f64, k: f64) -> f64 {
    sigmoid(k * cond.margin(x))
}

/// Combine node probabilities with the row behavior model.
pub fn combine(probs: &[f64], beh: &BehaviorParams) -> f64 {
    if probs.is_empty() {
        return 1.0;
    }
    combine_raw(probs.iter().product(), probs.iter().sum(), probs.len(), beh).clamp(0.0, 1.0)
}

#[inline]
fn combine_raw(prod: f64, sum: f64, n: usize, beh: &BehaviorParams) -> f64 {
    beh.a * prod + beh.b * sum - beh.b * (n as f64 - 1.0) * beh.v_ml_t0
}

/// Match probability of a row of conditions for `sample`.
pub fn row_prob(conds: &[Condition], sample: &[f64], beh: &BehaviorParams) -> f64 {
    if conds.is_empty() {
        return 1.0;
    }
    let mut prod = 1.0;
    let mut sum = 0.0;
    for c in conds {
        let p = node_prob(c, sample[c.feature], beh.k);
        prod *= p;
        sum += p;
        if prod == 0.0 && beh.b == 0.0 {
            return 0.0;
        }
    }
    combine_raw(prod, sum, conds.len(), beh).clamp(0.0, 1.0)
}

/// Keep one condition per (feature, direction): the tightest bound wins.
/// Order of first appearance is preserved.
pub fn canonicalize(conds: &[Condition]) -> Vec<Condition> {
    let mut out: Vec<Condition> = Vec::with_capacity(conds.len());
    for c in conds {
        match out
            .iter_mut()
            .find(|o| o.feature == c.feature && o.direction == c.direction)
        {
            Some(o) => {
                o.threshold = match c.direction {
                    Direction::Less => o.threshold.min(c.threshold),
                    Direction::Greater => o.threshold.max(c.threshold),
                };
                o.trainable &= c.trainable;
            }
            None => out.push(*c),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftTree {
    pub n_features: usize,
    pub n_classes: usize,
    pub behavior: BehaviorParams,
    /// Feature tested at the root of the initializing tree.
    pub root_feature: Option<usize>,
    pub paths: Vec<Path>,
}

/// Class decision plus the full path-probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftPrediction {
    pub class: usize,
    pub path: usize,
    pub probs: Vec<f64>,
}

/// Copy every path of `tree` into an independent row of conditions.
pub fn init_sdt(tree: &DecisionTree, behavior: BehaviorParams) -> SoftTree {
    let paths = tree
        .paths()
        .into_iter()
        .map(|p| {
            let raw: Vec<Condition> = p
                .steps
                .iter()
                .map(|&(f, left, t)| {
                    let dir = if left { Direction::Less } else { Direction::Greater };
                    Condition::new(f, dir, t)
                })
                .collect();
            Path {
                conditions: canonicalize(&raw),
                label: argmax(&tree.nodes[p.leaf].distribution),
            }
        })
        .collect();
    SoftTree {
        n_features: tree.n_features,
        n_classes: tree.n_classes,
        behavior,
        root_feature: tree.root_feature(),
        paths,
    }
}

impl SoftTree {
    fn check_dim(&self, sample: &[f64]) -> Result<(), SoftError> {
        if sample.len() != self.n_features {
            return Err(SoftError::DimensionMismatch {
                expected: self.n_features,
                found: sample.len(),
            });
        }
        Ok(())
    }

    pub fn path_probs(&self, sample: &[f64]) -> Result<Vec<f64>, SoftError> {
        self.check_dim(sample)?;
        Ok(self
            .paths
            .iter()
            .map(|p| row_prob(&p.conditions, sample, &self.behavior))
            .collect())
    }

    /// Highest-probability path; ties go to the lowest path index.
    pub fn predict(&self, sample: &[f64]) -> Result<SoftPrediction, SoftError> {
        let probs = self.path_probs(sample)?;
        let path = argmax(&probs);
        Ok(SoftPrediction {
            class: self.paths[path].label,
            path,
            probs,
        })
    }

    pub fn predict_class(&self, sample: &[f64]) -> Result<usize, SoftError> {
        Ok(self.predict(sample)?.class)
    }

    pub fn accuracy(&self, ds: &Dataset) -> Result<f64, SoftError> {
        let hits = (0..ds.n_samples())
            .into_par_iter()
            .map(|i| Ok(usize::from(self.predict_class(ds.sample(i))? == ds.label(i))))
            .collect::<Result<Vec<usize>, SoftError>>()?;
        Ok(hits.iter().sum::<usize>() as f64 / ds.n_samples().max(1) as f64)
    }

    /// Per-class score: the largest probability among paths with that label.
    pub fn class_scores(&self, sample: &[f64]) -> Result<Vec<f64>, SoftError> {
        let probs = self.path_probs(sample)?;
        let mut scores = vec![0.0f64; self.n_classes];
        for (p, path) in probs.iter().zip(&self.paths) {
            scores[path.label] = scores[path.label].max(*p);
        }
        Ok(scores)
    }

    pub fn n_conditions(&self) -> usize {
        self.paths.iter().map(|p| p.conditions.len()).sum()
    }

    /// Longest path length.
    pub fn depth(&self) -> usize {
        self.paths.iter().map(|p| p.conditions.len()).max().unwrap_or(0)
    }

    /// All thresholds, path by path.
    pub fn thresholds(&self) -> Vec<f64> {
        self.paths
            .iter()
            .flat_map(|p| p.conditions.iter().map(|c| c.threshold))
            .collect()
    }

    pub fn set_thresholds(&mut self, values: &[f64]) {
        let mut it = values.iter();
        for p in &mut self.paths {
            for c in &mut p.conditions {
                c.threshold = *it.next().expect("threshold count");
            }
        }
    }

    pub fn validate(&self) -> Result<(), SoftError> {
        if !(self.behavior.k > 0.0) {
            return Err(SoftError::Malformed("gain k must be positive".into()));
        }
        for (i, p) in self.paths.iter().enumerate() {
            if p.label >= self.n_classes {
                return Err(SoftError::Malformed(format!("path {i} label out of range")));
            }
            for c in &p.conditions {
                if c.feature >= self.n_features {
                    return Err(SoftError::Malformed(format!("path {i} feature out of range")));
                }
                if !c.threshold.is_finite() {
                    return Err(SoftError::Malformed(format!("path {i} threshold not finite")));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("soft tree serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, SoftError> {
        let t: Self = serde_json::from_str(s).map_err(|e| SoftError::Malformed(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Softmax temperature applied to path probabilities.
    pub beta: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Under the pure product rule, a path whose running product drops below
    /// this is treated as probability 0 for the rest of the sample's pass.
    /// Its true contribution to the loss and gradient is below the cutoff
    /// times `beta * k`.
    #[serde(default = "default_cutoff")]
    pub cutoff: f64,
}

fn default_cutoff() -> f64 {
    1e-12
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 0.05,
            beta: 10.0,
            batch_size: 32,
            seed: 0,
            cutoff: default_cutoff(),
        }
    }
}

/// Mean training loss per epoch.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch_loss: Vec<f64>,
}

/// Offsets of each path's conditions in the flat threshold vector.
fn offsets(tree: &SoftTree) -> Vec<usize> {
    let mut out = Vec::with_capacity(tree.paths.len() + 1);
    let mut at = 0;
    out.push(0);
    for p in &tree.paths {
        at += p.conditions.len();
        out.push(at);
    }
    out
}

/// Scratch buffers for one sample's forward/backward pass.
struct Work {
    node: Vec<f64>,
    rows: Vec<f64>,
    raw_inside: Vec<bool>,
    prefix: Vec<f64>,
}

impl Work {
    fn new(tree: &SoftTree, offs: &[usize]) -> Self {
        Self {
            node: vec![0.0; offs[offs.len() - 1]],
            rows: vec![0.0; tree.paths.len()],
            raw_inside: vec![false; tree.paths.len()],
            prefix: Vec::new(),
        }
    }
}

/// Cross-entropy of one sample; adds its threshold gradient into `grad`.
/// Returns `None` when no path carries the sample's label.
#[allow(clippy::too_many_arguments)]
fn sample_loss_grad(
    tree: &SoftTree,
    offs: &[usize],
    x: &[f64],
    y: usize,
    beta: f64,
    cutoff: f64,
    w: &mut Work,
    grad: &mut [f64],
) -> Option<f64> {
    let beh = &tree.behavior;
    if !tree.paths.iter().any(|p| p.label == y) {
        return None;
    }
    let cutoff = if beh.b == 0.0 && beh.a.abs() <= 1.0 { cutoff } else { 0.0 };
    for (j, path) in tree.paths.iter().enumerate() {
        let node = &mut w.node[offs[j]..offs[j + 1]];
        let mut prod = 1.0;
        let mut sum = 0.0;
        let mut dropped = false;
        for (c, slot) in path.conditions.iter().zip(node.iter_mut()) {
            let p = node_prob(c, x[c.feature], beh.k);
            *slot = p;
            prod *= p;
            sum += p;
            if prod < cutoff {
                dropped = true;
                break;
            }
        }
        let (value, inside) = if dropped {
            (0.0, false)
        } else if path.conditions.is_empty() {
            (1.0, false)
        } else {
            let raw = combine_raw(prod, sum, path.conditions.len(), beh);
            (raw.clamp(0.0, 1.0), raw > 0.0 && raw < 1.0)
        };
        w.rows[j] = value;
        w.raw_inside[j] = inside;
    }

    // softmax(beta * P), shifted by the max for stability
    let zmax = w.rows.iter().fold(f64::NEG_INFINITY, |m, &p| m.max(beta * p));
    let mut total = 0.0;
    let mut mass = 0.0;
    let q: Vec<f64> = tree
        .paths
        .iter()
        .zip(&w.rows)
        .map(|(path, &p)| {
            let e = (beta * p - zmax).exp();
            total += e;
            if path.label == y {
                mass += e;
            }
            e
        })
        .collect();
    let m = mass / total;
    let loss = -m.ln();

    for (j, path) in tree.paths.iter().enumerate() {
        if !w.raw_inside[j] {
            continue;
        }
        let qj = q[j] / total;
        let own = if path.label == y { qj / m } else { 0.0 };
        let d_row = beta * (qj - own);
        if d_row == 0.0 {
            continue;
        }
        let node = &w.node[offs[j]..offs[j + 1]];
        // products of all other node probabilities via prefix/suffix sweeps
        w.prefix.clear();
        let mut acc = 1.0;
        for &p in node {
            w.prefix.push(acc);
            acc *= p;
        }
        let mut suffix = 1.0;
        for i in (0..node.len()).rev() {
            let c = &path.conditions[i];
            let others = w.prefix[i] * suffix;
            suffix *= node[i];
            if !c.trainable {
                continue;
            }
            let p = node[i];
            let d_node = beh.a * others + beh.b;
            let slope = beh.k * p * (1.0 - p);
            let d_t = match c.direction {
                Direction::Less => slope,
                Direction::Greater => -slope,
            };
            grad[offs[j] + i] += d_row * d_node * d_t;
        }
    }
    Some(loss)
}

/// Exact mean loss and mean threshold gradient (flattened path by path) over
/// the given samples. Samples whose label no path carries are skipped.
pub fn loss_and_grad(
    tree: &SoftTree,
    samples: &[(&[f64], usize)],
    beta: f64,
) -> Result<(f64, Vec<f64>), SoftError> {
    let offs = offsets(tree);
    let mut grad = vec![0.0; offs[offs.len() - 1]];
    let mut work = Work::new(tree, &offs);
    let mut loss = 0.0;
    let mut used = 0usize;
    for &(x, y) in samples {
        tree.check_dim(x)?;
        if let Some(l) = sample_loss_grad(tree, &offs, x, y, beta, 0.0, &mut work, &mut grad) {
            loss += l;
            used += 1;
        }
    }
    if used > 0 {
        loss /= used as f64;
        grad.iter_mut().for_each(|g| *g /= used as f64);
    }
    Ok((loss, grad))
}

/// Samples per deterministic gradient chunk within a minibatch.
const CHUNK: usize = 8;

/// Tune the path thresholds by minibatch gradient descent. Structure, labels
/// and behavior parameters stay fixed; thresholds are clamped to [-1, 1].
pub fn train_sdt(
    tree: &SoftTree,
    train: &Dataset,
    cfg: &TrainConfig,
) -> Result<(SoftTree, TrainLog), SoftError> {
    if cfg.batch_size == 0 {
        return Err(SoftError::BadConfig("batch_size must be at least 1".into()));
    }
    if !(cfg.learning_rate.is_finite() && cfg.beta.is_finite()) {
        return Err(SoftError::BadConfig("learning rate and beta must be finite".into()));
    }
    if train.n_features() != tree.n_features {
        return Err(SoftError::DimensionMismatch {
            expected: tree.n_features,
            found: train.n_features(),
        });
    }
    let mut model = tree.clone();
    let mut log = TrainLog::default();
    let offs = offsets(&model);
    let n_params = offs[offs.len() - 1];
    let mut thresholds = model.thresholds();
    let mut order: Vec<usize> = (0..train.n_samples()).collect();
    let mut rng = seeded(cfg.seed);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_used = 0usize;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let parts: Vec<(f64, usize, Vec<f64>)> = idx
                .par_chunks(CHUNK)
                .map(|chunk| {
                    let mut grad = vec![0.0; n_params];
                    let mut work = Work::new(&model, &offs);
                    let mut loss = 0.0;
                    let mut used = 0;
                    for &i in chunk {
                        let x = train.sample(i);
                        if let Some(l) = sample_loss_grad(
                            &model,
                            &offs,
                            x,
                            train.label(i),
                            cfg.beta,
                            cfg.cutoff,
                            &mut work,
                            &mut grad,
                        ) {
                            loss += l;
                            used += 1;
                        }
                    }
                    (loss, used, grad)
                })
                .collect();
            let mut grad = vec![0.0; n_params];
            let mut used = 0;
            for (l, u, g) in parts {
                epoch_loss += l;
                used += u;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
            if used == 0 {
                continue;
            }
            epoch_used += used;
            let scale = cfg.learning_rate / used as f64;
            for (t, g) in thresholds.iter_mut().zip(&grad) {
                if !g.is_finite() {
                    return Err(SoftError::NonFinite { epoch, batch });
                }
                *t = (*t - scale * g).clamp(-1.0, 1.0);
            }
            model.set_thresholds(&thresholds);
        }
        log.epoch_loss
            .push(epoch_loss / epoch_used.max(1) as f64);
    }
    Ok((model, log))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Per class, sum over trees of the best path probability for that class.
    #[default]
    MaxPath,
    /// Per class, sum over trees of that class's share of the tree's total
    /// path probability.
    MeanPath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftForest {
    pub trees: Vec<SoftTree>,
    pub n_classes: usize,
    pub pooling: Pooling,
}

impl SoftForest {
    pub fn from_forest(rf: &RandomForest, behavior: BehaviorParams, pooling: Pooling) -> Self {
        Self {
            trees: rf.trees.iter().map(|t| init_sdt(t, behavior)).collect(),
            n_classes: rf.n_classes,
            pooling,
        }
    }

    /// Pool per-tree path probabilities into class scores.
    pub fn pool(&self, per_tree: &[Vec<f64>]) -> Vec<f64> {
        let mut scores = vec![0.0; self.n_classes];
        for (tree, probs) in self.trees.iter().zip(per_tree) {
            match self.pooling {
                Pooling::MaxPath => {
                    let mut best = vec![0.0f64; self.n_classes];
                    for (p, path) in probs.iter().zip(&tree.paths) {
                        best[path.label] = best[path.label].max(*p);
                    }
                    scores.iter_mut().zip(&best).for_each(|(s, b)| *s += b);
                }
                Pooling::MeanPath => {
                    let total: f64 = probs.iter().sum();
                    if total > 0.0 {
                        for (p, path) in probs.iter().zip(&tree.paths) {
                            scores[path.label] += p / total;
                        }
                    }
                }
            }
        }
        scores
    }

    pub fn class_scores(&self, sample: &[f64]) -> Result<Vec<f64>, SoftError> {
        let per_tree = self
            .trees
            .iter()
            .map(|t| t.path_probs(sample))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.pool(&per_tree))
    }

    /// Highest pooled score; ties go to the lowest class index.
    pub fn predict(&self, sample: &[f64]) -> Result<usize, SoftError> {
        if self.trees.is_empty() {
            return Err(SoftError::Empty);
        }
        Ok(argmax(&self.class_scores(sample)?))
    }

    pub fn accuracy(&self, ds: &Dataset) -> Result<f64, SoftError> {
        let hits = (0..ds.n_samples())
            .into_par_iter()
            .map(|i| Ok(usize::from(self.predict(ds.sample(i))? == ds.label(i))))
            .collect::<Result<Vec<usize>, SoftError>>()?;
        Ok(hits.iter().sum::<usize>() as f64 / ds.n_samples().max(1) as f64)
    }
}

/// Train each forest member as a soft tree. `datasets` supplies one training
/// set per tree (typically its bootstrap sample); tree `t` uses seed `seeds[t]`.
pub fn train_srf(
    forest: &SoftForest,
    datasets: &[Dataset],
    cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<SoftForest, SoftError> {
    if forest.trees.is_empty() {
        return Err(SoftError::Empty);
    }
    if datasets.len() != forest.trees.len() || seeds.len() != forest.trees.len() {
        return Err(SoftError::BadConfig("one dataset and seed per tree".into()));
    }
    let trees = forest
        .trees
        .iter()
        .zip(datasets)
        .zip(seeds)
        .map(|((t, ds), &seed)| train_sdt(t, ds, &TrainConfig { seed, ..*cfg }).map(|r| r.0))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SoftForest {
        trees,
        ..forest.clone()
    })
}
