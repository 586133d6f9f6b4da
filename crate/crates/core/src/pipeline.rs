//! Declarative end-to-end runs and the file formats shared by the CLI.
//!
//! A [`RunConfig`] names a dataset, a model and the experiments to run. Every
//! random stream is derived from the config's master seed and recorded in the
//! manifest in the order it is consumed, so a config plus the code version
//! reproduces a run exactly. Outputs are assembled in memory and written only
//! once the whole pipeline has succeeded.

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{plan_tiling, TiledPlan};
use crate::cammap::CamArray;
use crate::camsim::{CamModel, VariationKind, HARD_GAIN};
use crate::circuit::{characterize, CircuitParams, FitReport};
use crate::data::{fit_range, load_csv, load_idx, normalize, split, split_counts, DataError, Dataset, NormalizeMode};
use crate::hardtree::{
    bootstrap_weights, prune, train_dt, train_rf, tune_ccp_alpha, DecisionTree, ForestConfig, MaxFeatures, RandomForest,
    TreeConfig,
};
use crate::report::{self, ExperimentReport};
use crate::rng::{derive, seeded};
use crate::robust::{attack_root, decision_surface, variation_sweep, Attackable, SurfaceModel};
use crate::softtree::{init_sdt, train_sdt, train_srf, BehaviorParams, Pooling, SoftForest, SoftTree, TrainConfig};

pub const CONFIG_VERSION: u32 = 1;
/// Environment variable naming the dataset root.
pub const DATA_DIR_ENV: &str = "CAMFOREST_DATA_DIR";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("dataset not found: {0}")]
    MissingData(String),
    #[error(transparent)]
    Data(DataError),
    #[error(transparent)]
    Tree(#[from] crate::hardtree::TreeError),
    #[error(transparent)]
    Soft(#[from] crate::softtree::SoftError),
    #[error(transparent)]
    Cam(#[from] crate::cammap::CamError),
    #[error(transparent)]
    Circuit(#[from] crate::circuit::CircuitError),
    #[error(transparent)]
    Robust(#[from] crate::robust::RobustError),
    #[error(transparent)]
    Arch(#[from] crate::arch::ArchError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    /// Process exit code: 2 for bad configs and missing inputs, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::MissingData(_) => 2,
            _ => 1,
        }
    }
}

impl From<DataError> for RunError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { path, source } if source.kind() == ErrorKind::NotFound => RunError::MissingData(path),
            e => RunError::Data(e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    Wdbc,
    Iris,
    Mnist,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: DatasetName,
    /// CSV file, relative to the data directory unless absolute.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_column: Option<String>,
    /// Feature subset, in this order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_seed: Option<u64>,
    /// Stratified subsample sizes applied after splitting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_limit: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_limit: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
}

impl DatasetSpec {
    pub fn named(name: DatasetName) -> Self {
        Self {
            name,
            path: None,
            label_column: None,
            features: None,
            test_fraction: None,
            split_seed: None,
            train_limit: None,
            test_limit: None,
            data_dir: None,
        }
    }

    /// Explicit directory, then the environment, then `./data`.
    pub fn resolved_data_dir(&self) -> PathBuf {
        self.data_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data"))
    }
}

/// The three breast-cancer features used throughout.
pub const WDBC_FEATURES: [&str; 3] = ["mean_concave_points", "worst_area", "worst_texture"];
pub const WDBC_SPLIT_SEED: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Pixel,
    Tabular(Vec<(f64, f64)>),
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub normalization: Normalization,
    /// Seeds drawn while preparing, in order.
    pub seeds: Vec<SeedUse>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedUse {
    pub purpose: String,
    pub seed: u64,
}

fn seed_use(purpose: &str, seed: u64) -> SeedUse {
    SeedUse { purpose: purpose.to_string(), seed }
}

fn path_in(dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

/// Load, split and normalize a dataset. Tabular features are scaled with the
/// training split's range; MNIST pixels are divided by 255.
pub fn prepare(spec: &DatasetSpec, master_seed: u64) -> Result<Prepared, RunError> {
    let dir = spec.resolved_data_dir();
    let mut seeds = Vec::new();
    let tabular = |file: PathBuf, label: &str, default_features: Option<&[&str]>, default_frac: f64, default_seed: u64| {
        let mut ds = load_csv(&file, spec.label_column.as_deref().unwrap_or(label))?;
        let features: Option<Vec<&str>> = match (&spec.features, default_features) {
            (Some(f), _) => Some(f.iter().map(String::as_str).collect()),
            (None, Some(d)) => Some(d.to_vec()),
            (None, None) => None,
        };
        if let Some(f) = features {
            ds = ds.select_features(&f)?;
        }
        let seed = spec.split_seed.unwrap_or(default_seed);
        let (train, test) = split(&ds, spec.test_fraction.unwrap_or(default_frac), seed)?;
        Ok::<_, RunError>((train, test, seed))
    };
    let (train, test, normalization) = match spec.name {
        DatasetName::Mnist => {
            let m = dir.join("mnist");
            let train = load_idx(m.join("train-images-idx3-ubyte"), m.join("train-labels-idx1-ubyte"))?;
            let test = load_idx(m.join("t10k-images-idx3-ubyte"), m.join("t10k-labels-idx1-ubyte"))?;
            let train = normalize(&train, NormalizeMode::Pixel)?.dataset;
            let test = normalize(&test, NormalizeMode::Pixel)?.dataset;
            (train, test, Normalization::Pixel)
        }
        name => {
            let (train, test, seed) = match name {
                DatasetName::Wdbc => tabular(dir.join("wdbc.csv"), "diagnosis", Some(&WDBC_FEATURES), 0.25, WDBC_SPLIT_SEED)?,
                DatasetName::Iris => tabular(dir.join("iris.csv"), "species", None, 0.2, derive(master_seed, 0))?,
                _ => {
                    let p = spec
                        .path
                        .as_ref()
                        .ok_or_else(|| RunError::Config("csv dataset needs `path`".into()))?;
                    let label = spec
                        .label_column
                        .as_deref()
                        .ok_or_else(|| RunError::Config("csv dataset needs `label_column`".into()))?;
                    tabular(path_in(&dir, p), label, None, 0.25, derive(master_seed, 0))?
                }
            };
            seeds.push(seed_use("split", seed));
            let range = fit_range(&train);
            let train = normalize(&train, NormalizeMode::Tabular(&range))?.dataset;
            let test = normalize(&test, NormalizeMode::Tabular(&range))?.dataset;
            (train, test, Normalization::Tabular(range))
        }
    };
    let limit = |ds: Dataset, n: Option<usize>, purpose: &str, idx: u64, seeds: &mut Vec<SeedUse>| match n {
        Some(n) if n < ds.n_samples() => {
            let seed = derive(master_seed, idx);
            seeds.push(seed_use(purpose, seed));
            let name = ds.name.clone();
            let mut sub = split_counts(&ds, n, seed)?.1;
            sub.name = name;
            Ok::<_, RunError>(sub)
        }
        _ => Ok(ds),
    };
    let train = limit(train, spec.train_limit, "train_subsample", 10, &mut seeds)?;
    let test = limit(test, spec.test_limit, "test_subsample", 11, &mut seeds)?;
    Ok(Prepared { train, test, normalization, seeds })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Dt,
    Sdt,
    Rf,
    Srf,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Dt => "dt",
            ModelKind::Sdt => "sdt",
            ModelKind::Rf => "rf",
            ModelKind::Srf => "srf",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CcpSpec {
    Alpha(f64),
    Tune(TuneTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TuneTag {
    #[serde(rename = "tune")]
    Tune,
}

impl Default for CcpSpec {
    fn default() -> Self {
        CcpSpec::Alpha(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub depth: usize,
    #[serde(default = "default_trees")]
    pub n_trees: usize,
    #[serde(default)]
    pub ccp_alpha: CcpSpec,
    /// Defaults to all features for single trees and √d for forests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_features: Option<MaxFeatures>,
    #[serde(default)]
    pub pooling: Pooling,
    /// Soft forests refine each member on at most this many draws from its
    /// bootstrap sample.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub member_train_limit: Option<usize>,
}

fn default_trees() -> usize {
    50
}

impl ModelSpec {
    pub fn new(kind: ModelKind, depth: usize) -> Self {
        Self {
            kind,
            depth,
            n_trees: default_trees(),
            ccp_alpha: CcpSpec::default(),
            max_features: None,
            pooling: Pooling::default(),
            member_train_limit: None,
        }
    }
}

/// Behavior parameters given directly or fitted to the circuit simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BehaviorSpec {
    Params(BehaviorParams),
    Preset(BehaviorPreset),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BehaviorPreset {
    #[serde(rename = "fit-from-circuit")]
    FitFromCircuit,
}

impl Default for BehaviorSpec {
    fn default() -> Self {
        BehaviorSpec::Params(BehaviorParams::default())
    }
}

/// Grid resolution used when fitting behavior parameters to the circuit.
pub const FIT_RESOLUTION: usize = 41;

impl BehaviorSpec {
    pub fn resolve(&self) -> Result<(BehaviorParams, Option<FitReport>), RunError> {
        match self {
            BehaviorSpec::Params(p) => Ok((*p, None)),
            BehaviorSpec::Preset(BehaviorPreset::FitFromCircuit) => {
                let (_, _, beh, rep) = characterize(&CircuitParams::default(), FIT_RESOLUTION)?;
                Ok((beh, Some(rep)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: VariationKind,
    pub magnitudes: Vec<f64>,
    pub trials: usize,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { kind: VariationKind::Uniform, magnitudes: vec![0.0, 0.1], trials: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSpec {
    pub features: (String, String),
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

fn default_resolution() -> usize {
    crate::robust::SURFACE_RESOLUTION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "yes")]
    pub monte_carlo: bool,
    /// Repetitions of the root attack; absent means no attack.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack_trials: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surface: Option<SurfaceSpec>,
    /// Subarray width for a tiling plan.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_width: Option<usize>,
}

fn yes() -> bool {
    true
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self { monte_carlo: true, attack_trials: None, surface: None, plan_width: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    #[serde(default)]
    pub behavior: BehaviorSpec,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub experiments: ExperimentSpec,
    #[serde(default)]
    pub seed: u64,
    pub output: PathBuf,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, RunError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: &str| Err(RunError::Config(m.to_string()));
        if self.version != CONFIG_VERSION {
            return bad(&format!("unsupported version {} (expected {CONFIG_VERSION})", self.version));
        }
        if self.model.depth == 0 {
            return bad("model.depth must be at least 1");
        }
        if matches!(self.model.kind, ModelKind::Rf | ModelKind::Srf) && self.model.n_trees == 0 {
            return bad("model.n_trees must be at least 1");
        }
        if let Some(f) = self.dataset.test_fraction {
            if !(f > 0.0 && f < 1.0) {
                return bad("dataset.test_fraction must lie in (0, 1)");
            }
        }
        if self.noise.magnitudes.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return bad("noise magnitudes must be finite and non-negative");
        }
        if self.training.batch_size == 0 || !(self.training.learning_rate > 0.0) {
            return bad("training needs a positive batch size and learning rate");
        }
        if self.experiments.plan_width == Some(0) {
            return bad("experiments.plan_width must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Dt(DecisionTree),
    Sdt(SoftTree),
    Rf(RandomForest),
    Srf(SoftForest),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Dt(_) => ModelKind::Dt,
            Model::Sdt(_) => ModelKind::Sdt,
            Model::Rf(_) => ModelKind::Rf,
            Model::Srf(_) => ModelKind::Srf,
        }
    }

    /// Compile to CAM arrays; hard models use a very steep gain.
    pub fn cam(&self) -> Result<CamModel, RunError> {
        Ok(match self {
            Model::Dt(t) => CamModel::from_dt(t, HARD_GAIN)?,
            Model::Sdt(t) => CamModel::from_sdt(t)?,
            Model::Rf(f) => CamModel::from_rf(f, HARD_GAIN)?,
            Model::Srf(f) => CamModel::from_srf(f)?,
        })
    }

    /// One array per tree.
    pub fn arrays(&self) -> Result<Vec<CamArray>, RunError> {
        Ok(self.cam()?.arrays)
    }

    /// Software-level accuracy.
    pub fn accuracy(&self, ds: &Dataset) -> Result<f64, RunError> {
        Ok(match self {
            Model::Dt(t) => t.accuracy(ds)?,
            Model::Sdt(t) => t.accuracy(ds)?,
            Model::Rf(f) => f.accuracy(ds)?,
            Model::Srf(f) => f.accuracy(ds)?,
        })
    }

    pub fn attackable(&self) -> Attackable<'_> {
        match self {
            Model::Dt(t) => Attackable::Tree(t),
            Model::Sdt(t) => Attackable::Soft(t),
            Model::Rf(f) => Attackable::Forest(f),
            Model::Srf(f) => Attackable::SoftForest(f),
        }
    }

    pub fn surface_model(&self) -> SurfaceModel<'_> {
        match self {
            Model::Dt(t) => SurfaceModel::Tree(t),
            Model::Sdt(t) => SurfaceModel::Soft(t),
            Model::Rf(f) => SurfaceModel::Forest(f),
            Model::Srf(f) => SurfaceModel::SoftForest(f),
        }
    }

    /// Mean number of conditions per path over all trees.
    pub fn mean_path_len(&self) -> Result<f64, RunError> {
        let arrays = self.arrays()?;
        let rows: usize = arrays.iter().map(|a| a.n_rows()).sum();
        let conds: usize = arrays.iter().flat_map(|a| &a.rows).map(|r| r.n_conditions()).sum();
        Ok(conds as f64 / rows.max(1) as f64)
    }
}

/// What a model file records about the data it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub spec: DatasetSpec,
    /// Master seed the splits were drawn with.
    pub seed: u64,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    pub normalization: Normalization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub dataset: DatasetInfo,
    pub model: Model,
}

impl ModelFile {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, RunError> {
        serde_json::from_str(text).map_err(|e| RunError::Config(format!("model file: {e}")))
    }

    pub fn read(path: &Path) -> Result<Self, RunError> {
        Self::from_json(&read_text(path)?)
    }
}

pub fn read_text(path: &Path) -> Result<String, RunError> {
    fs::read_to_string(path).map_err(|source| {
        if source.kind() == ErrorKind::NotFound {
            RunError::MissingData(path.display().to_string())
        } else {
            RunError::Io { path: path.display().to_string(), source }
        }
    })
}

/// Facts about how a model was built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildInfo {
    pub behavior: BehaviorParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub circuit_fit: Option<FitReport>,
    pub ccp_alpha: f64,
    pub seeds: Vec<SeedUse>,
    pub final_loss: Option<f64>,
}

/// Hard tree, with cost-complexity pruning or a tuned alpha.
pub fn build_tree(train: &Dataset, spec: &ModelSpec, seeds: &mut Vec<SeedUse>, master: u64) -> Result<(DecisionTree, f64), RunError> {
    let tree_seed = derive(master, 1);
    seeds.push(seed_use("tree", tree_seed));
    let alpha = match spec.ccp_alpha {
        CcpSpec::Alpha(a) => a,
        CcpSpec::Tune(_) => {
            let s = derive(master, 2);
            seeds.push(seed_use("ccp_folds", s));
            tune_ccp_alpha(train, spec.depth, 5, s)?
        }
    };
    let cfg = TreeConfig {
        max_features: spec.max_features.unwrap_or(MaxFeatures::All),
        ..TreeConfig::new(spec.depth).ccp_alpha(alpha).seed(tree_seed)
    };
    let tree = train_dt(train, cfg)?;
    Ok((if alpha > 0.0 { prune(&tree, alpha) } else { tree }, alpha))
}

pub fn build_forest(train: &Dataset, spec: &ModelSpec, seeds: &mut Vec<SeedUse>, master: u64) -> Result<RandomForest, RunError> {
    let seed = derive(master, 3);
    seeds.push(seed_use("forest", seed));
    let alpha = match spec.ccp_alpha {
        CcpSpec::Alpha(a) => a,
        CcpSpec::Tune(_) => return Err(RunError::Config("ccp tuning is only supported for single trees".into())),
    };
    let cfg = ForestConfig {
        ccp_alpha: alpha,
        max_features: spec.max_features.unwrap_or(MaxFeatures::Sqrt),
        ..ForestConfig::new(spec.n_trees, spec.depth, seed)
    };
    Ok(train_rf(train, cfg)?)
}

/// Training sets for soft-forest members: each member's own bootstrap
/// multiset, optionally cut down to `limit` draws.
pub fn member_datasets(train: &Dataset, rf: &RandomForest, limit: Option<usize>, seed: u64) -> Vec<Dataset> {
    (0..rf.trees.len())
        .map(|t| {
            let w = bootstrap_weights(&rf.config, t, train.n_samples());
            let mut idx: Vec<usize> = w
                .iter()
                .enumerate()
                .flat_map(|(i, &m)| std::iter::repeat_n(i, m as usize))
                .collect();
            if let Some(n) = limit.filter(|&n| n < idx.len()) {
                idx.shuffle(&mut seeded(derive(seed, t as u64)));
                idx.truncate(n);
                idx.sort_unstable();
            }
            train.subset(&idx)
        })
        .collect()
}

/// Train the configured model.
pub fn build_model(
    prep: &Prepared,
    spec: &ModelSpec,
    behavior: &BehaviorSpec,
    training: &TrainConfig,
    master: u64,
) -> Result<(Model, BuildInfo), RunError> {
    let mut seeds = Vec::new();
    let (beh, circuit_fit) = behavior.resolve()?;
    let mut ccp_alpha = 0.0;
    let mut final_loss = None;
    let model = match spec.kind {
        ModelKind::Dt | ModelKind::Sdt => {
            let (tree, alpha) = build_tree(&prep.train, spec, &mut seeds, master)?;
            ccp_alpha = alpha;
            if spec.kind == ModelKind::Dt {
                Model::Dt(tree)
            } else {
                let seed = derive(master, 4);
                seeds.push(seed_use("sdt_training", seed));
                let (sdt, log) = train_sdt(&init_sdt(&tree, beh), &prep.train, &TrainConfig { seed, ..*training })?;
                final_loss = log.epoch_loss.last().copied();
                Model::Sdt(sdt)
            }
        }
        ModelKind::Rf | ModelKind::Srf => {
            let rf = build_forest(&prep.train, spec, &mut seeds, master)?;
            if spec.kind == ModelKind::Rf {
                Model::Rf(rf)
            } else {
                let seed = derive(master, 5);
                seeds.push(seed_use("srf_member_subsample", seed));
                let sets = member_datasets(&prep.train, &rf, spec.member_train_limit, seed);
                let member_seeds: Vec<u64> = (0..rf.trees.len()).map(|t| derive(derive(master, 6), t as u64)).collect();
                seeds.extend(member_seeds.iter().map(|&s| seed_use("srf_member_training", s)));
                let init = SoftForest::from_forest(&rf, beh, spec.pooling);
                Model::Srf(train_srf(&init, &sets, training, &member_seeds)?)
            }
        }
    };
    Ok((model, BuildInfo { behavior: beh, circuit_fit, ccp_alpha, seeds, final_loss }))
}

pub fn dataset_info(spec: &DatasetSpec, seed: u64, prep: &Prepared) -> DatasetInfo {
    DatasetInfo {
        spec: spec.clone(),
        seed,
        feature_names: prep.train.feature_names.clone(),
        class_names: prep.train.class_names.clone(),
        normalization: prep.normalization.clone(),
    }
}

/// Rebuild the splits a model was trained against.
pub fn prepared_for(info: &DatasetInfo) -> Result<Prepared, RunError> {
    prepare(&info.spec, info.seed)
}

/// Array CSV with its JSON sidecar text.
pub fn array_files(arr: &CamArray, feature_names: &[String], class_names: &[String]) -> Result<(String, String), RunError> {
    let csv = arr.to_csv(feature_names, None);
    let side = arr.sidecar(feature_names, class_names);
    Ok((csv, serde_json::to_string_pretty(&side).expect("sidecar serializes")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub crate_version: String,
    pub model: ModelKind,
    pub dataset: String,
    pub train_samples: usize,
    pub test_samples: usize,
    pub clean_accuracy: f64,
    /// Every seed consumed, in order.
    pub seeds: Vec<SeedUse>,
    pub behavior: BehaviorParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub circuit_fit: Option<FitReport>,
    pub ccp_alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<f64>,
    pub files: Vec<String>,
}

/// Run a config, writing every artifact under `cfg.output`.
pub fn run(cfg: &RunConfig) -> Result<Manifest, RunError> {
    cfg.validate()?;
    let files = execute(cfg)?;
    let (manifest, outputs) = files;
    write_outputs(&cfg.output, &outputs)?;
    Ok(manifest)
}

/// The pipeline without touching the file system: the manifest and the
/// `(file name, contents)` pairs it would write.
pub fn execute(cfg: &RunConfig) -> Result<(Manifest, Vec<(String, String)>), RunError> {
    let prep = prepare(&cfg.dataset, cfg.seed)?;
    let mut seeds = prep.seeds.clone();
    let (model, info) = build_model(&prep, &cfg.model, &cfg.behavior, &cfg.training, cfg.seed)?;
    seeds.extend(info.seeds.iter().cloned());
    let ds_info = dataset_info(&cfg.dataset, cfg.seed, &prep);
    let name = cfg.model.kind.name();
    let mut out: Vec<(String, String)> = Vec::new();
    out.push((
        "config.json".into(),
        serde_json::to_string_pretty(cfg).expect("config serializes"),
    ));
    out.push((
        "model.json".into(),
        ModelFile { dataset: ds_info.clone(), model: model.clone() }.to_json(),
    ));

    let cam = model.cam()?;
    if cam.arrays.len() == 1 {
        let (csv, side) = array_files(&cam.arrays[0], &ds_info.feature_names, &ds_info.class_names)?;
        out.push(("array.csv".into(), csv));
        out.push(("array.json".into(), side));
    } else {
        for (t, arr) in cam.arrays.iter().enumerate() {
            let (csv, side) = array_files(arr, &ds_info.feature_names, &ds_info.class_names)?;
            out.push((format!("array_{t:03}.csv"), csv));
            out.push((format!("array_{t:03}.json"), side));
        }
    }

    let mut reports: Vec<ExperimentReport> = Vec::new();
    if cfg.experiments.monte_carlo {
        let seed = derive(cfg.seed, 7);
        seeds.push(seed_use("variation", seed));
        reports.extend(variation_sweep(
            &[(name, &cam)],
            &prep.test,
            &cfg.noise.magnitudes,
            cfg.noise.kind,
            cfg.noise.trials,
            seed,
        )?);
    }
    if let Some(trials) = cfg.experiments.attack_trials {
        let seed = derive(cfg.seed, 8);
        seeds.push(seed_use("attack", seed));
        reports.push(attack_root(model.attackable(), &prep.test, trials.max(1), seed, name)?);
    }
    out.push(("report.csv".into(), report::to_csv(&reports)));

    if let Some(s) = &cfg.experiments.surface {
        let fx = prep.train.feature_index(&s.features.0).map_err(RunError::from)?;
        let fy = prep.train.feature_index(&s.features.1).map_err(RunError::from)?;
        let span = |f: usize| axis_span(&prep.train, f);
        let surf = decision_surface(
            model.surface_model(),
            &prep.train.feature_names,
            (&s.features.0, &s.features.1),
            &prep.train.feature_means(),
            span(fx),
            span(fy),
            s.resolution,
        )?;
        out.push(("surface.csv".into(), surf.to_csv()));
    }
    if let Some(width) = cfg.experiments.plan_width {
        let plans: Vec<TiledPlan> = cam.arrays.iter().map(|a| plan_tiling(a, width)).collect::<Result<_, _>>()?;
        out.push(("plan.json".into(), serde_json::to_string_pretty(&plans).expect("plan serializes")));
    }

    let mut names: Vec<String> = out.iter().map(|(n, _)| n.clone()).collect();
    names.push("manifest.json".into());
    let manifest = Manifest {
        version: CONFIG_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        model: cfg.model.kind,
        dataset: prep.test.name.clone(),
        train_samples: prep.train.n_samples(),
        test_samples: prep.test.n_samples(),
        clean_accuracy: model.accuracy(&prep.test)?,
        seeds,
        behavior: info.behavior,
        circuit_fit: info.circuit_fit,
        ccp_alpha: info.ccp_alpha,
        final_loss: info.final_loss,
        files: names,
    };
    out.push(("manifest.json".into(), serde_json::to_string_pretty(&manifest).expect("manifest serializes")));
    Ok((manifest, out))
}

/// Observed range of feature `f`, used as a surface axis.
pub fn axis_span(ds: &Dataset, f: usize) -> (f64, f64) {
    ds.samples().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (x, _)| (lo.min(x[f]), hi.max(x[f])))
}

pub fn write_outputs(dir: &Path, files: &[(String, String)]) -> Result<(), RunError> {
    let io = |path: &Path| {
        let shown = path.display().to_string();
        move |source| RunError::Io { path: shown, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    for (name, text) in files {
        let p = dir.join(name);
        fs::write(&p, text).map_err(io(&p))?;
    }
    Ok(())
}

/// Named dataset helper used by tests and the CLI.
pub fn load_named(name: DatasetName, data_dir: Option<PathBuf>, master: u64) -> Result<Prepared, RunError> {
    prepare(&DatasetSpec { data_dir, ..DatasetSpec::named(name) }, master)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(json: &str) -> Result<RunConfig, RunError> {
        RunConfig::from_json(json)
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = cfg(r#"{"version":1,"dataset":{"name":"wdbc"},"model":{"kind":"sdt","depth":3},"output":"out"}"#).unwrap();
        assert_eq!(c.model.n_trees, 50);
        assert_eq!(c.behavior, BehaviorSpec::Params(BehaviorParams::default()));
        assert_eq!(c.noise.trials, 50);
        assert!(c.experiments.monte_carlo);
    }

    #[test]
    fn schema_violations_are_config_errors() {
        for bad in [
            r#"{"version":2,"dataset":{"name":"wdbc"},"model":{"kind":"dt","depth":3},"output":"o"}"#,
            r#"{"version":1,"dataset":{"name":"wdbc"},"model":{"kind":"dt","depth":0},"output":"o"}"#,
            r#"{"version":1,"dataset":{"name":"nope"},"model":{"kind":"dt","depth":3},"output":"o"}"#,
            r#"{"version":1,"dataset":{"name":"wdbc"},"model":{"kind":"dt","depth":3},"output":"o","extra":1}"#,
            r#"{"version":1,"dataset":{"name":"wdbc","test_fraction":1.5},"model":{"kind":"dt","depth":3},"output":"o"}"#,
        ] {
            let e = cfg(bad).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{bad}: {e}");
        }
    }

    #[test]
    fn behavior_and_ccp_variants_parse() {
        let c = cfg(
            r#"{"version":1,"dataset":{"name":"iris"},"model":{"kind":"dt","depth":3,"ccp_alpha":"tune"},
                "behavior":"fit-from-circuit","output":"o"}"#,
        )
        .unwrap();
        assert_eq!(c.behavior, BehaviorSpec::Preset(BehaviorPreset::FitFromCircuit));
        assert_eq!(c.model.ccp_alpha, CcpSpec::Tune(TuneTag::Tune));
        let c = cfg(
            r#"{"version":1,"dataset":{"name":"iris"},"model":{"kind":"dt","depth":3,"ccp_alpha":0.01},
                "behavior":{"a":1.0,"b":0.0,"k":5.0,"v_ml_t0":1.0},"output":"o"}"#,
        )
        .unwrap();
        assert_eq!(c.model.ccp_alpha, CcpSpec::Alpha(0.01));
        assert_eq!(c.behavior, BehaviorSpec::Params(BehaviorParams::product(5.0)));
    }

    #[test]
    fn missing_dataset_exits_two() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec { data_dir: Some(dir.path().to_path_buf()), ..DatasetSpec::named(DatasetName::Wdbc) };
        assert_eq!(prepare(&spec, 0).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn model_file_round_trips() {
        let ds = Dataset::new(
            "t",
            vec!["x".into()],
            vec!["a".into(), "b".into()],
            vec![0.0, 0.1, 0.9, 1.0],
            vec![0, 0, 1, 1],
        )
        .unwrap();
        let tree = train_dt(&ds, TreeConfig::new(2)).unwrap();
        let mf = ModelFile {
            dataset: DatasetInfo {
                spec: DatasetSpec::named(DatasetName::Csv),
                seed: 0,
                feature_names: ds.feature_names.clone(),
                class_names: ds.class_names.clone(),
                normalization: Normalization::Tabular(vec![(0.0, 1.0)]),
            },
            model: Model::Sdt(init_sdt(&tree, BehaviorParams::default())),
        };
        assert_eq!(ModelFile::from_json(&mf.to_json()).unwrap(), mf);
    }
}
