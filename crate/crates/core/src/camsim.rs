//! Behavioral simulation of CAM inference: match-line values per row from the
//! row behavior model, winner-take-all readout, threshold variation and Monte
//! Carlo accuracy.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cammap::{map_sdt, CamArray, CamError, CamRow, Noise};
use crate::data::Dataset;
use crate::hardtree::{argmax, DecisionTree, RandomForest};
use crate::report::ExperimentReport;
use crate::rng::{derive, seeded};
use crate::softtree::{init_sdt, sigmoid, BehaviorParams, Pooling, SoftForest, SoftTree};

/// Gain used to emulate hard comparisons on the soft simulator.
pub const HARD_GAIN: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariationKind {
    Uniform,
    Gaussian,
}

/// Static device threshold variation, redrawn once per Monte Carlo trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariationModel {
    pub kind: VariationKind,
    /// Half-range for uniform, standard deviation for gaussian (volts).
    pub magnitude: f64,
    pub seed: u64,
}

impl VariationModel {
    pub fn uniform(magnitude: f64, seed: u64) -> Self {
        Self { kind: VariationKind::Uniform, magnitude, seed }
    }

    pub fn gaussian(magnitude: f64, seed: u64) -> Self {
        Self { kind: VariationKind::Gaussian, magnitude, seed }
    }

    pub fn noise(&self) -> Noise {
        if self.magnitude == 0.0 {
            return Noise::None;
        }
        match self.kind {
            VariationKind::Uniform => Noise::Uniform(self.magnitude),
            VariationKind::Gaussian => Noise::Gaussian(self.magnitude),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            VariationKind::Uniform => "uniform",
            VariationKind::Gaussian => "gaussian",
        }
    }

    /// Seed of trial `t`.
    pub fn trial_seed(&self, t: usize) -> u64 {
        derive(self.seed, t as u64)
    }
}

/// Perturbed copy of `arr`, one draw per programmed threshold.
pub fn inject_variation(arr: &CamArray, vm: &VariationModel) -> CamArray {
    arr.perturb_with(&mut seeded(vm.seed), vm.noise())
}

/// Match-line value of one row.
pub fn row_value(row: &CamRow, col_to_feature: &[usize], sample: &[f64], beh: &BehaviorParams) -> f64 {
    row_value_above(row, col_to_feature, sample, beh, f64::NEG_INFINITY).unwrap_or(0.0)
}

/// Like [`row_value`], but under the pure product rule gives up with `None`
/// as soon as the row can no longer exceed `floor`. Factors never exceed 1,
/// so the running product only falls.
fn row_value_above(row: &CamRow, col_to_feature: &[usize], sample: &[f64], beh: &BehaviorParams, floor: f64) -> Option<f64> {
    if row.cells.is_empty() {
        return Some(1.0);
    }
    let k = beh.k;
    let bounded = beh.b == 0.0 && beh.a > 0.0;
    let mut prod = 1.0;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (c, cell) in &row.cells {
        let x = sample[col_to_feature[*c]];
        if let Some(vl) = cell.left {
            let p = sigmoid(k * (vl - x));
            prod *= p;
            sum += p;
            n += 1;
        }
        if let Some(vr) = cell.right {
            // the inverter presents -x to the right device
            let p = sigmoid(k * (vr + x));
            prod *= p;
            sum += p;
            n += 1;
        }
        if bounded && (beh.a * prod).min(1.0) <= floor {
            return None;
        }
        if prod == 0.0 && beh.b == 0.0 {
            return Some(0.0);
        }
    }
    Some((beh.a * prod + beh.b * sum - beh.b * (n as f64 - 1.0) * beh.v_ml_t0).clamp(0.0, 1.0))
}

/// Index of the winning row (lowest index on ties). Rows that cannot beat
/// the best so far are abandoned early, which leaves the result unchanged.
pub fn wta_winner(arr: &CamArray, sample: &[f64], beh: &BehaviorParams) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, row) in arr.rows.iter().enumerate() {
        if let Some(v) = row_value_above(row, &arr.col_to_feature, sample, beh, best_v) {
            if v > best_v {
                best = i;
                best_v = v;
            }
        }
    }
    best
}

/// Best match-line value per class into `best`, with the same early exit.
fn class_best(arr: &CamArray, sample: &[f64], beh: &BehaviorParams, best: &mut [f64]) {
    best.fill(0.0);
    for row in &arr.rows {
        if let Some(v) = row_value_above(row, &arr.col_to_feature, sample, beh, best[row.label]) {
            best[row.label] = best[row.label].max(v);
        }
    }
}

/// Match-line values of every row into `out`.
pub fn row_values(arr: &CamArray, sample: &[f64], beh: &BehaviorParams, out: &mut Vec<f64>) {
    out.clear();
    out.extend(arr.rows.iter().map(|r| row_value(r, &arr.col_to_feature, sample, beh)));
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    pub ml_values: Vec<f64>,
    pub winner: usize,
    pub predicted_class: usize,
}

/// Evaluate all rows, then pick the winner (lowest index on ties).
pub fn infer(arr: &CamArray, sample: &[f64], beh: &BehaviorParams) -> Result<InferenceResult, CamError> {
    arr.check_dim(sample)?;
    if arr.rows.is_empty() {
        return Err(CamError::Malformed("array has no rows".into()));
    }
    let mut ml_values = Vec::with_capacity(arr.n_rows());
    row_values(arr, sample, beh, &mut ml_values);
    let winner = argmax(&ml_values);
    Ok(InferenceResult {
        predicted_class: arr.rows[winner].label,
        winner,
        ml_values,
    })
}

/// How a set of arrays turns match-line values into a class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Winner-take-all over the rows of a single array.
    Wta,
    /// Winner-take-all per array, then majority vote (ties to the lowest class).
    Vote,
    /// Soft pooling of per-array match-line values.
    Pool(Pooling),
}

/// A model compiled to one or more CAM arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CamModel {
    pub arrays: Vec<CamArray>,
    pub behavior: BehaviorParams,
    pub readout: Readout,
    pub n_classes: usize,
}

impl CamModel {
    /// Hard tree emulated with a very steep gain.
    pub fn from_dt(tree: &DecisionTree, hard_gain: f64) -> Result<Self, CamError> {
        Self::from_sdt(&init_sdt(tree, BehaviorParams::product(hard_gain)))
    }

    pub fn from_sdt(tree: &SoftTree) -> Result<Self, CamError> {
        Ok(Self {
            arrays: vec![map_sdt(tree)?],
            behavior: tree.behavior,
            readout: Readout::Wta,
            n_classes: tree.n_classes,
        })
    }

    pub fn from_rf(forest: &RandomForest, hard_gain: f64) -> Result<Self, CamError> {
        let beh = BehaviorParams::product(hard_gain);
        Ok(Self {
            arrays: forest
                .trees
                .iter()
                .map(|t| map_sdt(&init_sdt(t, beh)))
                .collect::<Result<_, _>>()?,
            behavior: beh,
            readout: Readout::Vote,
            n_classes: forest.n_classes,
        })
    }

    /// All trees must share one set of behavior parameters.
    pub fn from_srf(forest: &SoftForest) -> Result<Self, CamError> {
        let beh = forest
            .trees
            .first()
            .ok_or_else(|| CamError::Malformed("forest has no trees".into()))?
            .behavior;
        if forest.trees.iter().any(|t| t.behavior != beh) {
            return Err(CamError::Malformed("trees disagree on behavior parameters".into()));
        }
        Ok(Self {
            arrays: forest.trees.iter().map(map_sdt).collect::<Result<_, _>>()?,
            behavior: beh,
            readout: Readout::Pool(forest.pooling),
            n_classes: forest.n_classes,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.arrays.iter().map(|a| a.n_rows()).sum()
    }

    fn predict_with(&self, sample: &[f64], buf: &mut Vec<f64>) -> usize {
        self.predict_inputs(|_| sample, buf)
    }

    /// Prediction where array `i` searches `input(i)`.
    fn predict_inputs<'s>(&self, input: impl Fn(usize) -> &'s [f64], buf: &mut Vec<f64>) -> usize {
        match self.readout {
            Readout::Wta => {
                let arr = &self.arrays[0];
                arr.rows[wta_winner(arr, input(0), &self.behavior)].label
            }
            Readout::Vote => {
                let mut votes = vec![0usize; self.n_classes];
                for (i, arr) in self.arrays.iter().enumerate() {
                    votes[arr.rows[wta_winner(arr, input(i), &self.behavior)].label] += 1;
                }
                let mut best = 0;
                for (c, &v) in votes.iter().enumerate() {
                    if v > votes[best] {
                        best = c;
                    }
                }
                best
            }
            Readout::Pool(pooling) => {
                let mut scores = vec![0.0f64; self.n_classes];
                let mut best = vec![0.0f64; self.n_classes];
                for (i, arr) in self.arrays.iter().enumerate() {
                    match pooling {
                        Pooling::MaxPath => {
                            class_best(arr, input(i), &self.behavior, &mut best);
                            scores.iter_mut().zip(&best).for_each(|(s, b)| *s += b);
                        }
                        Pooling::MeanPath => {
                            row_values(arr, input(i), &self.behavior, buf);
                            let total: f64 = buf.iter().sum();
                            if total > 0.0 {
                                for (p, row) in buf.iter().zip(&arr.rows) {
                                    scores[row.label] += p / total;
                                }
                            }
                        }
                    }
                }
                argmax(&scores)
            }
        }
    }

    pub fn predict(&self, sample: &[f64]) -> Result<usize, CamError> {
        self.check(sample)?;
        Ok(self.predict_with(sample, &mut Vec::new()))
    }

    /// Prediction with a separate input vector per array.
    pub fn predict_per_array(&self, inputs: &[&[f64]]) -> Result<usize, CamError> {
        if inputs.len() != self.arrays.len() {
            return Err(CamError::DimensionMismatch { expected: self.arrays.len(), found: inputs.len() });
        }
        for x in inputs {
            self.check(x)?;
        }
        Ok(self.predict_inputs(|i| inputs[i], &mut Vec::new()))
    }

    fn check(&self, sample: &[f64]) -> Result<(), CamError> {
        if self.arrays.is_empty() || self.arrays.iter().any(|a| a.rows.is_empty()) {
            return Err(CamError::Malformed("model has an empty array".into()));
        }
        self.arrays.iter().try_for_each(|a| a.check_dim(sample))
    }

    pub fn accuracy(&self, ds: &Dataset) -> Result<f64, CamError> {
        if ds.is_empty() {
            return Ok(0.0);
        }
        self.check(ds.sample(0))?;
        let hits: usize = (0..ds.n_samples())
            .into_par_iter()
            .map_init(Vec::new, |buf, i| usize::from(self.predict_with(ds.sample(i), buf) == ds.label(i)))
            .sum();
        Ok(hits as f64 / ds.n_samples() as f64)
    }

    /// Copy with every array perturbed from one seeded stream.
    pub fn perturbed(&self, noise: Noise, seed: u64) -> CamModel {
        if noise == Noise::None {
            return self.clone();
        }
        let mut rng = seeded(seed);
        CamModel {
            arrays: self.arrays.iter().map(|a| a.perturb_with(&mut rng, noise)).collect(),
            ..self.clone()
        }
    }
}

/// Accuracy over `trials` independent variation draws.
pub fn monte_carlo(
    model: &CamModel,
    test: &Dataset,
    vm: &VariationModel,
    trials: usize,
    name: &str,
) -> Result<ExperimentReport, CamError> {
    let trials = trials.max(1);
    let accs = if vm.noise() == Noise::None {
        vec![model.accuracy(test)?; trials]
    } else {
        (0..trials)
            .into_par_iter()
            .map(|t| model.perturbed(vm.noise(), vm.trial_seed(t)).accuracy(test))
            .collect::<Result<Vec<_>, _>>()?
    };
    Ok(ExperimentReport::new(name, &test.name, vm.kind_name(), vm.magnitude, accs))
}
