//! Robustness experiments: variation sweeps, the single-feature root attack
//! and decision-surface export.
//!
//! The attack replaces the input value of the feature tested at a tree's root
//! with a uniform draw on `[0, 1]`. Soft trees keep the root feature of the
//! hard tree they were initialised from, so hard and soft models are attacked
//! on the same input coordinate. In a forest every member gets its own draw
//! on its own root feature.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camsim::{monte_carlo, CamModel, VariationKind, VariationModel};
use crate::data::Dataset;
use crate::hardtree::{argmax, DecisionTree, RandomForest};
use crate::report::ExperimentReport;
use crate::rng::{derive, seeded};
use crate::softtree::{SoftForest, SoftTree};

#[derive(Debug, Error)]
pub enum RobustError {
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("model has no root feature to attack")]
    NoRootFeature,
    #[error("surface needs two distinct features and a resolution of at least 2")]
    BadSurface,
    #[error(transparent)]
    Cam(#[from] crate::cammap::CamError),
    #[error(transparent)]
    Tree(#[from] crate::hardtree::TreeError),
    #[error(transparent)]
    Soft(#[from] crate::softtree::SoftError),
}

/// Default number of attack repetitions.
pub const ATTACK_TRIALS: usize = 10;
/// Default surface resolution per axis.
pub const SURFACE_RESOLUTION: usize = 200;

/// Monte Carlo accuracy for every model at every magnitude. All models see
/// the same seed at a given magnitude.
pub fn variation_sweep(
    models: &[(&str, &CamModel)],
    test: &Dataset,
    magnitudes: &[f64],
    kind: VariationKind,
    trials: usize,
    seed: u64,
) -> Result<Vec<ExperimentReport>, RobustError> {
    let mut out = Vec::with_capacity(models.len() * magnitudes.len());
    for (name, model) in models {
        for (i, &mag) in magnitudes.iter().enumerate() {
            let vm = VariationModel { kind, magnitude: mag, seed: derive(seed, i as u64) };
            out.push(monte_carlo(model, test, &vm, trials, name)?);
        }
    }
    Ok(out)
}

/// A model the root attack can be applied to.
#[derive(Debug, Clone, Copy)]
pub enum Attackable<'a> {
    Tree(&'a DecisionTree),
    Forest(&'a RandomForest),
    Soft(&'a SoftTree),
    SoftForest(&'a SoftForest),
    /// CAM-level evaluation; `roots[i]` is the attacked feature for array `i`.
    Cam(&'a CamModel, &'a [Option<usize>]),
}

impl Attackable<'_> {
    /// Attacked feature per member, `None` for members without a split.
    pub fn root_features(&self) -> Vec<Option<usize>> {
        match self {
            Attackable::Tree(t) => vec![t.root_feature()],
            Attackable::Forest(f) => f.trees.iter().map(|t| t.root_feature()).collect(),
            Attackable::Soft(t) => vec![t.root_feature],
            Attackable::SoftForest(f) => f.trees.iter().map(|t| t.root_feature).collect(),
            Attackable::Cam(_, roots) => roots.to_vec(),
        }
    }

    /// Prediction where member `i` sees `inputs[i]`.
    pub fn predict_members(&self, inputs: &[&[f64]]) -> Result<usize, RobustError> {
        Ok(match self {
            Attackable::Tree(t) => t.predict(inputs[0])?,
            Attackable::Soft(t) => t.predict_class(inputs[0])?,
            Attackable::Forest(f) => {
                let mut votes = vec![0usize; f.n_classes];
                for (t, x) in f.trees.iter().zip(inputs) {
                    votes[t.predict(x)?] += 1;
                }
                let mut best = 0;
                for (c, &v) in votes.iter().enumerate() {
                    if v > votes[best] {
                        best = c;
                    }
                }
                best
            }
            Attackable::SoftForest(f) => {
                let per_tree = f
                    .trees
                    .iter()
                    .zip(inputs)
                    .map(|(t, x)| t.path_probs(x))
                    .collect::<Result<Vec<_>, _>>()?;
                argmax(&f.pool(&per_tree))
            }
            Attackable::Cam(m, _) => m.predict_per_array(inputs)?,
        })
    }
}

/// Replace `x[feature]` with a uniform draw on `[0, 1]`.
pub fn attack_sample(x: &[f64], feature: Option<usize>, rng: &mut impl rand::Rng) -> Vec<f64> {
    let mut out = x.to_vec();
    if let Some(f) = feature {
        out[f] = rng.random::<f64>();
    }
    out
}

/// Accuracy under the root attack, one entry per repetition. Repetition `t`
/// draws from `derive(seed, t)`, walking samples in order and members in
/// order within a sample.
pub fn attack_root(
    model: Attackable<'_>,
    test: &Dataset,
    trials: usize,
    seed: u64,
    name: &str,
) -> Result<ExperimentReport, RobustError> {
    let roots = model.root_features();
    if roots.iter().all(Option::is_none) {
        return Err(RobustError::NoRootFeature);
    }
    let accs = (0..trials.max(1))
        .into_par_iter()
        .map(|t| {
            let mut rng = seeded(derive(seed, t as u64));
            let mut hits = 0usize;
            for (x, y) in test.samples() {
                let attacked: Vec<Vec<f64>> = roots.iter().map(|&f| attack_sample(x, f, &mut rng)).collect();
                let refs: Vec<&[f64]> = attacked.iter().map(Vec::as_slice).collect();
                hits += usize::from(model.predict_members(&refs)? == y);
            }
            Ok(hits as f64 / test.n_samples().max(1) as f64)
        })
        .collect::<Result<Vec<_>, RobustError>>()?;
    Ok(ExperimentReport::new(name, &test.name, "root_attack", 1.0, accs))
}

/// Expected accuracy of a hard tree under the root attack, integrating the
/// uniform draw exactly: the prediction is constant between consecutive
/// thresholds on the root feature.
pub fn expected_attack_accuracy(tree: &DecisionTree, test: &Dataset) -> Result<f64, RobustError> {
    let f = tree.root_feature().ok_or(RobustError::NoRootFeature)?;
    let mut cuts: Vec<f64> = tree
        .nodes
        .iter()
        .filter_map(|n| n.split.as_ref())
        .filter(|s| s.feature == f && s.threshold > 0.0 && s.threshold < 1.0)
        .map(|s| s.threshold)
        .collect();
    cuts.push(0.0);
    cuts.push(1.0);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut total = 0.0;
    for (x, y) in test.samples() {
        let mut probe = x.to_vec();
        for w in cuts.windows(2) {
            probe[f] = 0.5 * (w[0] + w[1]);
            if tree.predict(&probe)? == y {
                total += w[1] - w[0];
            }
        }
    }
    Ok(total / test.n_samples().max(1) as f64)
}

/// A model whose class scores can be drawn as a surface.
#[derive(Debug, Clone, Copy)]
pub enum SurfaceModel<'a> {
    /// Class distribution of the reached leaf.
    Tree(&'a DecisionTree),
    /// Best path probability per class.
    Soft(&'a SoftTree),
    /// Fraction of trees voting for each class.
    Forest(&'a RandomForest),
    /// Pooled scores divided by the number of trees.
    SoftForest(&'a SoftForest),
}

impl SurfaceModel<'_> {
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>, RobustError> {
        Ok(match self {
            SurfaceModel::Tree(t) => t.predict_dist(x)?.to_vec(),
            SurfaceModel::Soft(t) => t.class_scores(x)?,
            SurfaceModel::Forest(f) => {
                let n = f.trees.len().max(1) as f64;
                let mut s = vec![0.0; f.n_classes];
                for t in &f.trees {
                    s[t.predict(x)?] += 1.0 / n;
                }
                s
            }
            SurfaceModel::SoftForest(f) => {
                let n = f.trees.len().max(1) as f64;
                f.class_scores(x)?.into_iter().map(|v| v / n).collect()
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub feature_x: String,
    pub feature_y: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub n_classes: usize,
    /// Scores indexed `[(iy * xs.len() + ix) * n_classes + class]`.
    pub values: Vec<f64>,
}

impl Surface {
    pub fn at(&self, ix: usize, iy: usize) -> &[f64] {
        let i = (iy * self.xs.len() + ix) * self.n_classes;
        &self.values[i..i + self.n_classes]
    }

    /// Long format: one line per grid point with every class score and the
    /// argmax class.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{},{}", self.feature_x, self.feature_y);
        for c in 0..self.n_classes {
            s.push_str(&format!(",p{c}"));
        }
        s.push_str(",class\n");
        for (iy, y) in self.ys.iter().enumerate() {
            for (ix, x) in self.xs.iter().enumerate() {
                let v = self.at(ix, iy);
                s.push_str(&format!("{x},{y}"));
                for p in v {
                    s.push_str(&format!(",{p}"));
                }
                s.push_str(&format!(",{}\n", argmax(v)));
            }
        }
        s
    }
}

/// Class scores over a `resolution × resolution` grid spanning `range_x` ×
/// `range_y` on the two named features. Every other feature is held at
/// `fixed` (typically the training means).
#[allow(clippy::too_many_arguments)]
pub fn decision_surface(
    model: SurfaceModel<'_>,
    feature_names: &[String],
    (fx, fy): (&str, &str),
    fixed: &[f64],
    range_x: (f64, f64),
    range_y: (f64, f64),
    resolution: usize,
) -> Result<Surface, RobustError> {
    let find = |name: &str| {
        feature_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| RobustError::UnknownFeature(name.to_string()))
    };
    let (ix, iy) = (find(fx)?, find(fy)?);
    if ix == iy || resolution < 2 {
        return Err(RobustError::BadSurface);
    }
    let axis = |(lo, hi): (f64, f64)| -> Vec<f64> {
        (0..resolution)
            .map(|i| lo + (hi - lo) * i as f64 / (resolution - 1) as f64)
            .collect()
    };
    let (xs, ys) = (axis(range_x), axis(range_y));
    let rows = ys
        .par_iter()
        .map(|&y| {
            let mut probe = fixed.to_vec();
            probe[iy] = y;
            let mut line = Vec::new();
            for &x in &xs {
                probe[ix] = x;
                line.extend(model.scores(&probe)?);
            }
            Ok(line)
        })
        .collect::<Result<Vec<_>, RobustError>>()?;
    let n_classes = rows.first().map_or(0, |r| r.len() / resolution);
    Ok(Surface {
        feature_x: fx.to_string(),
        feature_y: fy.to_string(),
        xs,
        ys,
        n_classes,
        values: rows.concat(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hardtree::{train_dt, TreeConfig};
    use rand::Rng as _;
    use crate::softtree::{init_sdt, BehaviorParams};

    fn grid_data(seed: u64, n: usize) -> Dataset {
        let mut rng = seeded(seed);
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let x: [f64; 3] = [rng.random(), rng.random(), rng.random()];
            labels.push(usize::from(x[0] > 0.4) + usize::from(x[1] > 0.7 && x[0] > 0.4));
            values.extend(x);
        }
        Dataset::new(
            "grid",
            vec!["a".into(), "b".into(), "c".into()],
            vec!["0".into(), "1".into(), "2".into()],
            values,
            labels,
        )
        .unwrap()
    }

    #[test]
    fn attack_touches_one_coordinate() {
        let x = [0.3, 0.6, 0.9];
        let mut rng = seeded(1);
        let y = attack_sample(&x, Some(1), &mut rng);
        assert_eq!(y[0].to_bits(), x[0].to_bits());
        assert_eq!(y[2].to_bits(), x[2].to_bits());
        assert!((0.0..1.0).contains(&y[1]));
    }

    #[test]
    fn attack_converges_to_exact_mixture() {
        let train = grid_data(3, 400);
        let test = grid_data(4, 100);
        let tree = train_dt(&train, TreeConfig::new(2)).unwrap();
        assert_eq!(tree.depth(), 2);
        let exact = expected_attack_accuracy(&tree, &test).unwrap();
        let rep = attack_root(Attackable::Tree(&tree), &test, 2000, 9, "dt").unwrap();
        // Each repetition averages 100 Bernoulli draws.
        let se = (exact * (1.0 - exact) / (100.0 * 2000.0)).sqrt();
        assert!((rep.summary.mean - exact).abs() < 4.0 * se + 1e-9, "{} vs {exact}", rep.summary.mean);
    }

    #[test]
    fn constant_root_feature_still_attacked() {
        // Feature 0 is always zero in the test set yet the tree splits on it.
        let train = grid_data(3, 400);
        let tree = train_dt(&train, TreeConfig::new(2)).unwrap();
        assert_eq!(tree.root_feature(), Some(0));
        let mut vals = grid_data(5, 50).values().to_vec();
        for v in vals.iter_mut().step_by(3) {
            *v = 0.0;
        }
        let test = Dataset::new(
            "zeros",
            train.feature_names.clone(),
            train.class_names.clone(),
            vals,
            vec![0; 50],
        )
        .unwrap();
        assert_eq!(tree.accuracy(&test).unwrap(), 1.0);
        let rep = attack_root(Attackable::Tree(&tree), &test, 10, 2, "dt").unwrap();
        assert!(rep.summary.mean < 0.8);
        let exact = expected_attack_accuracy(&tree, &test).unwrap();
        assert!((exact - tree.nodes[0].split.as_ref().unwrap().threshold).abs() < 1e-12);
    }

    #[test]
    fn attack_is_reproducible() {
        let train = grid_data(3, 300);
        let test = grid_data(6, 60);
        let tree = train_dt(&train, TreeConfig::new(3)).unwrap();
        let sdt = init_sdt(&tree, BehaviorParams::default());
        let a = attack_root(Attackable::Soft(&sdt), &test, 5, 1, "sdt").unwrap();
        let b = attack_root(Attackable::Soft(&sdt), &test, 5, 1, "sdt").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cam_attack_matches_software_attack() {
        let train = grid_data(3, 300);
        let test = grid_data(6, 60);
        let tree = train_dt(&train, TreeConfig::new(3)).unwrap();
        let sdt = init_sdt(&tree, BehaviorParams::default());
        let cam = CamModel::from_sdt(&sdt).unwrap();
        let roots = [tree.root_feature()];
        let soft = attack_root(Attackable::Soft(&sdt), &test, 4, 8, "x").unwrap();
        let hw = attack_root(Attackable::Cam(&cam, &roots), &test, 4, 8, "x").unwrap();
        assert_eq!(soft.accuracies, hw.accuracies);
    }

    #[test]
    fn soft_surface_is_lipschitz() {
        let train = grid_data(3, 400);
        let tree = train_dt(&train, TreeConfig::new(3)).unwrap();
        let k = 20.0;
        let sdt = init_sdt(&tree, BehaviorParams::product(k));
        let names = train.feature_names.clone();
        let res = 60;
        let s = decision_surface(
            SurfaceModel::Soft(&sdt),
            &names,
            ("a", "b"),
            &train.feature_means(),
            (0.0, 1.0),
            (0.0, 1.0),
            res,
        )
        .unwrap();
        let step = 1.0 / (res - 1) as f64;
        let bound = k * step * 0.25 + 1e-12;
        for iy in 0..res {
            for ix in 0..res {
                for (jx, jy) in [(ix + 1, iy), (ix, iy + 1)] {
                    if jx < res && jy < res {
                        for (p, q) in s.at(ix, iy).iter().zip(s.at(jx, jy)) {
                            assert!((p - q).abs() <= bound);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn steep_surface_matches_hard_surface_off_thresholds() {
        let train = grid_data(3, 400);
        let tree = train_dt(&train, TreeConfig::new(3)).unwrap();
        let sdt = init_sdt(&tree, BehaviorParams::product(1e5));
        let names = train.feature_names.clone();
        let means = train.feature_means();
        let args = (("a", "b"), (0.013, 0.987), (0.011, 0.989), 37);
        let hard = decision_surface(SurfaceModel::Tree(&tree), &names, args.0, &means, args.1, args.2, args.3).unwrap();
        let soft = decision_surface(SurfaceModel::Soft(&sdt), &names, args.0, &means, args.1, args.2, args.3).unwrap();
        let thresholds: Vec<f64> = tree.nodes.iter().filter_map(|n| n.split.as_ref()).map(|s| s.threshold).collect();
        for (iy, y) in hard.ys.iter().enumerate() {
            for (ix, x) in hard.xs.iter().enumerate() {
                if thresholds.iter().any(|t| (t - x).abs() < 1e-3 || (t - y).abs() < 1e-3) {
                    continue;
                }
                assert_eq!(argmax(hard.at(ix, iy)), argmax(soft.at(ix, iy)));
            }
        }
        // Hard surface is piecewise constant: only a few distinct values.
        let mut distinct: Vec<u64> = hard.values.iter().map(|v| v.to_bits()).collect();
        distinct.sort_unstable();
        distinct.dedup();
        assert!(distinct.len() <= 2 * tree.n_leaves() * hard.n_classes);
    }

    #[test]
    fn surface_rejects_unknown_feature() {
        let train = grid_data(3, 50);
        let tree = train_dt(&train, TreeConfig::new(2)).unwrap();
        let r = decision_surface(
            SurfaceModel::Tree(&tree),
            &train.feature_names,
            ("a", "zz"),
            &train.feature_means(),
            (0.0, 1.0),
            (0.0, 1.0),
            10,
        );
        assert!(matches!(r, Err(RobustError::UnknownFeature(n)) if n == "zz"));
    }

    #[test]
    fn zero_magnitude_sweep_is_noiseless_accuracy() {
        let train = grid_data(3, 300);
        let test = grid_data(6, 60);
        let tree = train_dt(&train, TreeConfig::new(3)).unwrap();
        let sdt = init_sdt(&tree, BehaviorParams::default());
        let cam = CamModel::from_sdt(&sdt).unwrap();
        let reps = variation_sweep(&[("sdt", &cam)], &test, &[0.0, 0.1], VariationKind::Uniform, 3, 5).unwrap();
        assert_eq!(reps.len(), 2);
        assert_eq!(reps[0].summary.mean, sdt.accuracy(&test).unwrap());
    }
}
