//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Three operations, each returning a JSON string the page plots directly:
//! a cell's probability curve next to the simulated circuit, the match-line
//! discharge of the four-cell reference row, and breast-cancer decision
//! surfaces of a hard and a soft tree under device threshold variation.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use camforest::cammap::{map_sdt, unmap, Noise};
use camforest::camsim::HARD_GAIN;
use camforest::circuit::{self, CircuitParams};
use camforest::data::{fit_range, normalize, read_csv, split, Dataset, NormalizeMode};
use camforest::hardtree::{prune, train_dt, tune_ccp_alpha, TreeConfig};
use camforest::pipeline::{WDBC_FEATURES, WDBC_SPLIT_SEED};
use camforest::rng::seeded;
use camforest::robust::{decision_surface, SurfaceModel};
use camforest::softtree::{
    combine, init_sdt, node_prob, train_sdt, BehaviorParams, Condition, Direction, SoftTree, TrainConfig,
};

const WDBC_CSV: &str = include_str!("../../../data/wdbc.csv");

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn to_json(v: &impl Serialize) -> String {
    serde_json::to_string(v).expect("plain numeric data serializes")
}

#[derive(Serialize)]
struct CellCurve {
    x: Vec<f64>,
    model: Vec<f64>,
    circuit: Vec<f64>,
}

/// Probability of one cell storing `threshold` as inputs sweep [-1, 1]:
/// the sigmoid at gain `k` and the sensed output of the simulated circuit.
#[wasm_bindgen]
pub fn cell_curve(threshold: f64, greater: bool, k: f64, points: usize) -> Result<String, JsError> {
    let dir = if greater { Direction::Greater } else { Direction::Less };
    let cond = Condition::new(0, dir, threshold);
    let p = CircuitParams::default();
    let points = points.max(2);
    let x: Vec<f64> = (0..points)
        .map(|i| -1.0 + 2.0 * i as f64 / (points - 1) as f64)
        .collect();
    let model = x.iter().map(|&v| node_prob(&cond, v, k)).collect();
    let circuit = x
        .iter()
        .map(|&v| circuit::sensed_row(std::slice::from_ref(&cond), &[v], &p))
        .collect::<Result<_, _>>()
        .map_err(js_err)?;
    Ok(to_json(&CellCurve { x, model, circuit }))
}

#[derive(Serialize)]
struct Discharge {
    t: Vec<f64>,
    v: Vec<f64>,
    t_sense: f64,
    sensed: f64,
    model: f64,
}

/// Match-line trace of the reference row with inputs `u` and `v`, plus the
/// sensed value and the behavior-model prediction with parameters `a`, `b`
/// and `k`.
#[wasm_bindgen]
pub fn discharge(u: f64, v: f64, a: f64, b: f64, k: f64) -> Result<String, JsError> {
    let p = CircuitParams::default();
    let (conds, wiring) = circuit::reference_row();
    let inputs: Vec<f64> = wiring.iter().map(|&w| [u, v][w]).collect();
    let od: Vec<f64> = conds
        .iter()
        .zip(&inputs)
        .map(|(c, &x)| circuit::condition_overdrive(c, x, &p))
        .collect();
    let trace = circuit::discharge_row(&od, &p).map_err(js_err)?;
    let sensed = circuit::sense(&trace, p.t_sense).map_err(js_err)?;
    let beh = BehaviorParams { a, b, k, ..BehaviorParams::product(k) };
    let probs: Vec<f64> = conds.iter().zip(&inputs).map(|(c, &x)| node_prob(c, x, k)).collect();
    // Downsample long traces; the page only needs a few hundred points.
    let stride = (trace.times.len() / 400).max(1);
    let pick = |s: &[f64]| s.iter().step_by(stride).copied().collect::<Vec<_>>();
    Ok(to_json(&Discharge {
        t: pick(&trace.times),
        v: pick(&trace.v_ml),
        t_sense: p.t_sense,
        sensed,
        model: combine(&probs, &beh),
    }))
}

/// Behavior parameters fitted to the simulated reference row, as JSON.
#[wasm_bindgen]
pub fn fitted_behavior(resolution: usize) -> Result<String, JsError> {
    let (_, _, beh, rep) = circuit::characterize(&CircuitParams::default(), resolution.max(5)).map_err(js_err)?;
    Ok(to_json(&serde_json::json!({ "behavior": beh, "fit": rep })))
}

#[derive(Serialize)]
struct Surfaces {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Malignant score per grid point, row-major in y.
    dt: Vec<f64>,
    sdt: Vec<f64>,
    dt_accuracy: f64,
    sdt_accuracy: f64,
}

/// Hard and soft trees on the three breast-cancer features, ready to be
/// perturbed and drawn.
#[wasm_bindgen]
pub struct Wdbc {
    test: Dataset,
    means: Vec<f64>,
    hard: SoftTree,
    soft: SoftTree,
}

#[wasm_bindgen]
impl Wdbc {
    /// Train the depth-3 tree and its soft version. Takes a second or two.
    #[wasm_bindgen(constructor)]
    pub fn new(k: f64, epochs: usize) -> Result<Wdbc, JsError> {
        let ds = read_csv(WDBC_CSV.as_bytes(), "wdbc.csv", "wdbc", "diagnosis")
            .and_then(|d| d.select_features(&WDBC_FEATURES))
            .map_err(js_err)?;
        let (train, test) = split(&ds, 0.25, WDBC_SPLIT_SEED).map_err(js_err)?;
        let range = fit_range(&train);
        let train = normalize(&train, NormalizeMode::Tabular(&range)).map_err(js_err)?.dataset;
        let test = normalize(&test, NormalizeMode::Tabular(&range)).map_err(js_err)?.dataset;
        let alpha = tune_ccp_alpha(&train, 3, 5, 0).map_err(js_err)?;
        let dt = prune(&train_dt(&train, TreeConfig::new(3).seed(0)).map_err(js_err)?, alpha);
        let init = init_sdt(&dt, BehaviorParams::product(k));
        let cfg = TrainConfig { epochs, ..TrainConfig::default() };
        let (soft, _) = train_sdt(&init, &train, &cfg).map_err(js_err)?;
        Ok(Wdbc {
            means: train.feature_means(),
            test,
            hard: init_sdt(&dt, BehaviorParams::product(HARD_GAIN)),
            soft,
        })
    }

    /// Malignant-score surfaces over mean concave points × worst area, with
    /// worst texture at its training mean, after adding threshold variation
    /// of `sigma` volts (gaussian) to both arrays. Accuracies are on the test
    /// split under the same perturbation.
    pub fn surfaces(&self, sigma: f64, seed: u64, resolution: usize) -> Result<String, JsError> {
        let noise = if sigma > 0.0 { Noise::Gaussian(sigma) } else { Noise::None };
        let mut rng = seeded(seed);
        let mut perturb = |t: &SoftTree| -> Result<SoftTree, JsError> {
            let arr = map_sdt(t).map_err(js_err)?.perturb_with(&mut rng, noise);
            unmap(&arr, t.behavior).map_err(js_err)
        };
        let (hard, soft) = (perturb(&self.hard)?, perturb(&self.soft)?);
        let names = &self.test.feature_names;
        let draw = |t: &SoftTree| {
            decision_surface(
                SurfaceModel::Soft(t),
                names,
                (WDBC_FEATURES[0], WDBC_FEATURES[1]),
                &self.means,
                (0.0, 1.0),
                (0.0, 1.0),
                resolution.max(2),
            )
            .map_err(js_err)
        };
        let (sh, ss) = (draw(&hard)?, draw(&soft)?);
        let malignant = |s: &camforest::robust::Surface| s.values.iter().skip(1).step_by(s.n_classes).copied().collect();
        Ok(to_json(&Surfaces {
            dt: malignant(&sh),
            sdt: malignant(&ss),
            xs: sh.xs,
            ys: sh.ys,
            dt_accuracy: hard.accuracy(&self.test).map_err(js_err)?,
            sdt_accuracy: soft.accuracy(&self.test).map_err(js_err)?,
        }))
    }
}
