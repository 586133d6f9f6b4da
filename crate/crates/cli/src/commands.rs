//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use camforest::arch::{
    cost_csv, estimate_cost, plan_tiling_with, Calibration, PlanSet, REFERENCE_ARRAY_ENERGY, REFERENCE_WTA_ENERGY,
};
use camforest::camsim::{monte_carlo, VariationKind, VariationModel};
use camforest::circuit::{
    characterize, column_scaling_study, condition_overdrive, discharge_row, scaling_csv, sensed_row, CircuitParams,
};
use camforest::data::Dataset;
use camforest::pipeline::{
    array_files, axis_span, build_model, dataset_info, member_datasets, prepare, prepared_for, read_text, run,
    write_outputs, BehaviorPreset, BehaviorSpec, CcpSpec, DatasetName, DatasetSpec, Model, ModelFile, ModelKind,
    ModelSpec, RunConfig, RunError, TuneTag, FIT_RESOLUTION,
};
use camforest::report::{to_csv, ExperimentReport};
use camforest::rng::derive;
use camforest::robust::{attack_root, decision_surface, variation_sweep, Attackable, RobustError};
use camforest::softtree::{init_sdt, train_sdt, train_srf, BehaviorParams, Condition, SoftForest, TrainConfig};
use serde::Deserialize;

use crate::{
    AttackCmd, CircuitCmd, Command, CostCmd, DataArgs, KindArg, Level, MapCmd, McCmd, PlanCmd, RunCmd, SoftenCmd,
    SurfaceCmd, SweepCmd, TrainArgs, TrainCmd,
};

pub fn dispatch(cmd: Command) -> Result<(), RunError> {
    match cmd {
        Command::Train(c) => train(c),
        Command::Soften(c) => soften(c),
        Command::Map(c) => map(c),
        Command::Mc(c) => mc(c),
        Command::Sweep(c) => sweep(c),
        Command::Attack(c) => attack(c),
        Command::Circuit(c) => circuit(c),
        Command::Plan(c) => plan(c),
        Command::Cost(c) => cost(c),
        Command::Surface(c) => surface(c),
        Command::Run(c) => run_config(c),
    }
}

fn config_err(msg: impl Into<String>) -> RunError {
    RunError::Config(msg.into())
}

fn write(path: &Path, text: &str) -> Result<(), RunError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| RunError::Io { path: dir.display().to_string(), source })?;
    }
    fs::write(path, text).map_err(|source| RunError::Io { path: path.display().to_string(), source })
}

/// Write to `out`, or stdout when absent.
fn emit(out: Option<&Path>, text: &str) -> Result<(), RunError> {
    match out {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("value serializes") + "\n"
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, RunError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn dataset_spec(d: &DataArgs) -> Result<DatasetSpec, RunError> {
    let name = match d.dataset.as_str() {
        "wdbc" => DatasetName::Wdbc,
        "iris" => DatasetName::Iris,
        "mnist" => DatasetName::Mnist,
        "csv" => DatasetName::Csv,
        other => return Err(config_err(format!("unknown dataset `{other}`"))),
    };
    if let Some(f) = d.test_fraction.filter(|f| !(*f > 0.0 && *f < 1.0)) {
        return Err(config_err(format!("test fraction {f} outside (0, 1)")));
    }
    Ok(DatasetSpec {
        path: d.csv.clone(),
        label_column: d.label_column.clone(),
        features: d.features.clone(),
        test_fraction: d.test_fraction,
        split_seed: d.split_seed,
        train_limit: d.train_limit,
        test_limit: d.test_limit,
        data_dir: d.data_dir.clone(),
        ..DatasetSpec::named(name)
    })
}

fn behavior_spec(t: &TrainArgs) -> Result<BehaviorSpec, RunError> {
    match t.behavior.as_deref() {
        Some("fit-from-circuit") => Ok(BehaviorSpec::Preset(BehaviorPreset::FitFromCircuit)),
        Some(ab) if parse_pair(ab).is_some() => {
            let (a, b) = parse_pair(ab).expect("checked");
            Ok(BehaviorSpec::Params(BehaviorParams { a, b, ..BehaviorParams::product(t.k) }))
        }
        Some(path) => Ok(BehaviorSpec::Params(read_json::<BehaviorParams>(Path::new(path))?)),
        None => Ok(BehaviorSpec::Params(BehaviorParams::product(t.k))),
    }
}

/// `a,b` as two numbers.
fn parse_pair(s: &str) -> Option<(f64, f64)> {
    let (a, b) = s.split_once(',')?;
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

fn train_config(t: &TrainArgs) -> Result<TrainConfig, RunError> {
    if t.batch_size == 0 || !(t.learning_rate > 0.0) {
        return Err(config_err("training needs a positive batch size and learning rate"));
    }
    Ok(TrainConfig {
        epochs: t.epochs,
        learning_rate: t.learning_rate,
        beta: t.beta,
        batch_size: t.batch_size,
        ..TrainConfig::default()
    })
}

fn kind(k: KindArg) -> ModelKind {
    match k {
        KindArg::Dt => ModelKind::Dt,
        KindArg::Sdt => ModelKind::Sdt,
        KindArg::Rf => ModelKind::Rf,
        KindArg::Srf => ModelKind::Srf,
    }
}

fn train(c: TrainCmd) -> Result<(), RunError> {
    if c.depth == 0 {
        return Err(config_err("depth must be at least 1"));
    }
    let ccp_alpha = match c.ccp_alpha.as_str() {
        "tune" => CcpSpec::Tune(TuneTag::Tune),
        s => CcpSpec::Alpha(s.parse().map_err(|_| config_err(format!("bad ccp alpha `{s}`")))?),
    };
    let spec = ModelSpec {
        n_trees: c.n_trees,
        ccp_alpha,
        member_train_limit: c.member_train_limit,
        ..ModelSpec::new(kind(c.model), c.depth)
    };
    let ds = dataset_spec(&c.data)?;
    let beh = behavior_spec(&c.train)?;
    let tc = train_config(&c.train)?;
    let prep = prepare(&ds, c.seed)?;
    let (model, _) = build_model(&prep, &spec, &beh, &tc, c.seed)?;
    let acc = model.accuracy(&prep.test)?;
    write(&c.out, &ModelFile { dataset: dataset_info(&ds, c.seed, &prep), model }.to_json())?;
    eprintln!("{}: test accuracy {acc:.4} on {} samples", spec.kind.name(), prep.test.n_samples());
    Ok(())
}

fn soften(c: SoftenCmd) -> Result<(), RunError> {
    let mf = ModelFile::read(&c.model)?;
    let prep = prepared_for(&mf.dataset)?;
    let (beh, _) = behavior_spec(&c.train)?.resolve()?;
    let tc = train_config(&c.train)?;
    let model = match &mf.model {
        Model::Dt(t) => {
            let seed = derive(c.seed, 4);
            Model::Sdt(train_sdt(&init_sdt(t, beh), &prep.train, &TrainConfig { seed, ..tc })?.0)
        }
        Model::Rf(f) => {
            let sets = member_datasets(&prep.train, f, c.member_train_limit, derive(c.seed, 5));
            let seeds: Vec<u64> = (0..f.trees.len()).map(|t| derive(derive(c.seed, 6), t as u64)).collect();
            let init = SoftForest::from_forest(f, beh, Default::default());
            Model::Srf(train_srf(&init, &sets, &tc, &seeds)?)
        }
        _ => return Err(config_err("soften needs a hard tree or forest")),
    };
    let acc = model.accuracy(&prep.test)?;
    write(&c.out, &ModelFile { dataset: mf.dataset, model }.to_json())?;
    eprintln!("soft model: test accuracy {acc:.4}");
    Ok(())
}

fn numbered(path: &Path, t: usize) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("array");
    path.with_file_name(format!("{stem}_{t:03}.csv"))
}

fn map(c: MapCmd) -> Result<(), RunError> {
    let mf = ModelFile::read(&c.model)?;
    let arrays = mf.model.arrays()?;
    let names = &mf.dataset.feature_names;
    let classes = &mf.dataset.class_names;
    for (t, arr) in arrays.iter().enumerate() {
        let out = if arrays.len() == 1 { c.out.clone() } else { numbered(&c.out, t) };
        let (csv, side) = array_files(arr, names, classes)?;
        let csv = match c.wildcard_voltage {
            Some(v) => arr.to_csv(names, Some(v)),
            None => csv,
        };
        write(&out, &csv)?;
        write(&out.with_extension("json"), &side)?;
    }
    eprintln!("{} array(s), {} rows", arrays.len(), arrays.iter().map(|a| a.n_rows()).sum::<usize>());
    Ok(())
}

fn parse_noise(s: &str) -> Result<(VariationKind, f64), RunError> {
    let (k, m) = s.split_once(':').ok_or_else(|| config_err(format!("noise `{s}` is not kind:magnitude")))?;
    let mag: f64 = m.parse().map_err(|_| config_err(format!("bad noise magnitude `{m}`")))?;
    if !(mag >= 0.0 && mag.is_finite()) {
        return Err(config_err("noise magnitude must be non-negative"));
    }
    Ok((parse_kind(k)?, mag))
}

fn parse_kind(k: &str) -> Result<VariationKind, RunError> {
    match k {
        "uniform" => Ok(VariationKind::Uniform),
        "gaussian" => Ok(VariationKind::Gaussian),
        other => Err(config_err(format!("unknown noise kind `{other}`"))),
    }
}

/// Model file plus the test split it was trained against.
fn load_with_test(path: &Path, test_limit: Option<usize>) -> Result<(ModelFile, Dataset), RunError> {
    let mut mf = ModelFile::read(path)?;
    if test_limit.is_some() {
        mf.dataset.spec.test_limit = test_limit;
    }
    let test = prepared_for(&mf.dataset)?.test;
    Ok((mf, test))
}

fn model_name(path: &Path, model: &Model) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .unwrap_or_else(|| model.kind().name().to_string())
}

fn mc(c: McCmd) -> Result<(), RunError> {
    let (kind, magnitude) = parse_noise(&c.noise)?;
    let (mf, test) = load_with_test(&c.model, c.test_limit)?;
    let cam = mf.model.cam()?;
    let vm = VariationModel { kind, magnitude, seed: c.seed };
    let rep = monte_carlo(&cam, &test, &vm, c.trials, &model_name(&c.model, &mf.model))?;
    eprintln!("mean {:.4} (95% CI {:.4}..{:.4})", rep.summary.mean, rep.summary.ci_lo, rep.summary.ci_hi);
    emit(c.out.as_deref(), &to_csv(&[rep]))
}

fn sweep(c: SweepCmd) -> Result<(), RunError> {
    let kind = parse_kind(&c.kind)?;
    if c.magnitudes.iter().any(|m| !(*m >= 0.0 && m.is_finite())) {
        return Err(config_err("magnitudes must be non-negative"));
    }
    let mut all = Vec::new();
    let mut files = Vec::new();
    for path in &c.model {
        let (mf, test) = load_with_test(path, c.test_limit)?;
        let name = model_name(path, &mf.model);
        let cam = mf.model.cam()?;
        let reps = variation_sweep(&[(&name, &cam)], &test, &c.magnitudes, kind, c.trials, c.seed)?;
        for r in &reps {
            files.push((format!("{}_{}_{}_{}.csv", r.model, r.dataset, r.kind, r.magnitude), to_csv(std::slice::from_ref(r))));
        }
        all.extend(reps);
    }
    files.push(("sweep.csv".into(), to_csv(&all)));
    write_outputs(&c.out_dir, &files)?;
    eprintln!("{} reports in {}", all.len(), c.out_dir.display());
    Ok(())
}

fn attack(c: AttackCmd) -> Result<(), RunError> {
    let (mf, test) = load_with_test(&c.model, c.test_limit)?;
    let name = model_name(&c.model, &mf.model);
    let clean = mf.model.accuracy(&test)?;
    let roots = mf.model.attackable().root_features();
    let cam;
    let target = match c.level {
        Level::Software => mf.model.attackable(),
        Level::Cam => {
            cam = mf.model.cam()?;
            Attackable::Cam(&cam, &roots)
        }
    };
    let rep = attack_root(target, &test, c.trials, c.seed, &name)?;
    eprintln!(
        "clean {clean:.4}, attacked {:.4}, drop {:.2} points",
        rep.summary.mean,
        100.0 * (clean - rep.summary.mean)
    );
    let base = ExperimentReport::new(&name, &test.name, "clean", 0.0, vec![clean]);
    emit(c.out.as_deref(), &to_csv(&[base, rep]))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RowSpec {
    conditions: Vec<Condition>,
    /// Input voltage at each condition's cell.
    inputs: Vec<f64>,
}

fn circuit(c: CircuitCmd) -> Result<(), RunError> {
    let p = match &c.params {
        Some(path) => read_json::<CircuitParams>(path)?,
        None => CircuitParams::default(),
    };
    if c.characterize {
        let (_, _, beh, fit) = characterize(&p, FIT_RESOLUTION)?;
        let out = serde_json::json!({ "params": p, "behavior": beh, "fit": fit });
        return emit(c.out.as_deref(), &json(&out));
    }
    if c.scaling {
        let (_, _, beh, _) = characterize(&p, FIT_RESOLUTION)?;
        let rows = column_scaling_study(&c.n_cols, &c.sigmas, c.trials, &beh, &p, c.seed)?;
        return emit(c.out.as_deref(), &scaling_csv(&rows));
    }
    let Some(row) = &c.row else {
        return Err(config_err("circuit needs --row, --characterize or --scaling"));
    };
    let spec: RowSpec = read_json(row)?;
    if spec.inputs.len() != spec.conditions.len() {
        return Err(config_err("row needs one input per condition"));
    }
    match c.sweep {
        Some(i) => {
            if i >= spec.conditions.len() || c.points < 2 {
                return Err(config_err("sweep index out of range or fewer than 2 points"));
            }
            let mut out = String::from("input,sensed\n");
            let mut inputs = spec.inputs.clone();
            for j in 0..c.points {
                let x = -1.0 + 2.0 * j as f64 / (c.points - 1) as f64;
                inputs[i] = x;
                out.push_str(&format!("{x},{}\n", sensed_row(&spec.conditions, &inputs, &p)?));
            }
            emit(c.out.as_deref(), &out)
        }
        None => {
            let ov: Vec<f64> = spec
                .conditions
                .iter()
                .zip(&spec.inputs)
                .map(|(cond, &x)| condition_overdrive(cond, x, &p))
                .collect();
            emit(c.out.as_deref(), &discharge_row(&ov, &p)?.to_csv())
        }
    }
}

fn plan(c: PlanCmd) -> Result<(), RunError> {
    let mf = ModelFile::read(&c.model)?;
    let plans = mf
        .model
        .arrays()?
        .iter()
        .map(|a| plan_tiling_with(a, c.width, c.band_height.unwrap_or(c.width)))
        .collect::<Result<Vec<_>, _>>()?;
    let set = PlanSet { mean_path_len: mf.model.mean_path_len()?, plans };
    let enabled: usize = set.plans.iter().map(|p| p.enabled_count()).sum();
    let total: usize = set.plans.iter().map(|p| p.enable.len()).sum();
    eprintln!("{enabled} of {total} subarrays enabled");
    write(&c.out, &json(&set))
}

fn cost(c: CostCmd) -> Result<(), RunError> {
    let set: PlanSet = read_json(&c.plan)?;
    let cal = match (&c.calibration, c.reference) {
        (Some(path), _) => read_json::<Calibration>(path)?,
        (None, true) => Calibration::from_reference(
            &set.plans,
            REFERENCE_ARRAY_ENERGY,
            REFERENCE_WTA_ENERGY,
            Calibration::timing_defaults(),
        )?,
        (None, false) => return Err(config_err("cost needs --calibration or --reference")),
    };
    cal.validate()?;
    let path_len = match (&c.model, c.path_len) {
        (_, Some(l)) => l,
        (Some(m), None) => ModelFile::read(m)?.model.mean_path_len()?,
        (None, None) => set.mean_path_len,
    };
    if let Some(p) = &c.save_calibration {
        write(p, &json(&cal))?;
    }
    let report = estimate_cost(&set.plans, path_len, &cal)?;
    let text = match &c.out {
        Some(p) if p.extension().is_some_and(|e| e == "csv") => cost_csv(&[("plan".to_string(), report)]),
        _ => json(&report),
    };
    emit(c.out.as_deref(), &text)
}

fn surface(c: SurfaceCmd) -> Result<(), RunError> {
    let [fx, fy] = c.features.as_slice() else {
        return Err(config_err("--features takes exactly two names"));
    };
    let mf = ModelFile::read(&c.model)?;
    let prep = prepared_for(&mf.dataset)?;
    let train = &prep.train;
    let find = |n: &str| {
        train
            .feature_names
            .iter()
            .position(|f| f == n)
            .ok_or_else(|| config_err(format!("unknown feature `{n}`")))
    };
    let (ix, iy) = (find(fx)?, find(fy)?);
    let s = decision_surface(
        mf.model.surface_model(),
        &train.feature_names,
        (fx, fy),
        &train.feature_means(),
        axis_span(train, ix),
        axis_span(train, iy),
        c.resolution,
    )
    .map_err(|e| match e {
        RobustError::BadSurface => config_err(e.to_string()),
        e => e.into(),
    })?;
    write(&c.out, &s.to_csv())
}

fn run_config(c: RunCmd) -> Result<(), RunError> {
    let mut cfg = RunConfig::from_json(&read_text(&c.config)?)?;
    if cfg.dataset.data_dir.is_none() {
        cfg.dataset.data_dir = c.data_dir;
    }
    let m = run(&cfg)?;
    eprintln!(
        "{} on {}: clean accuracy {:.4}; {} files in {}",
        m.model.name(),
        m.dataset,
        m.clean_accuracy,
        m.files.len(),
        cfg.output.display()
    );
    Ok(())
}
