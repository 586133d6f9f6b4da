//! Transient match-line simulation of a CAM row and the behavior-model fit.
//!
//! Every programmed device pulls the precharged match line down with a
//! square-law current once its gate overdrive is positive:
//!
//! * saturation (`V_d >= V_ov`): `I = (KP/2)(W/L)·V_ov²·(1 + λV_d)`
//! * linear (`V_d < V_ov`): `I = KP(W/L)·(V_ov − V_d/2)·V_d·(1 + λV_d)`
//!
//! and `C_ML·dV/dt = −ΣI`. Subthreshold current is zero unless a leak
//! conductance is configured.
//!
//! A device starts conducting exactly at its threshold, so the sensed value of
//! a lone cell reaches one half only at a positive overdrive `v_mid`. Devices
//! are programmed `v_mid` below the stored threshold so that a stored `T`
//! puts the half-discharge point at input `T`.

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{DMatrix, DVector, Dyn, Owned};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cammap::{CamCell, WILDCARD_VOLTAGE};
use crate::rng::{derive, seeded};
use crate::softtree::{combine, node_prob, BehaviorParams, Condition, Direction};

#[derive(Debug, Error, PartialEq)]
pub enum CircuitError {
    #[error("invalid circuit parameters: {0}")]
    BadParams(String),
    #[error("integration step {dt} exceeds t_sense/100 = {limit}")]
    StepTooLarge { dt: f64, limit: f64 },
    #[error("sense time {t} lies beyond the simulated span {span}")]
    BeyondTrace { t: f64, span: f64 },
    #[error("fit needs at least {min} points, got {got}")]
    TooFewPoints { min: usize, got: usize },
    #[error("sensed value {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("singular fit: all sensed outputs are identical")]
    Singular,
    #[error("fit did not converge")]
    NoConvergence,
    #[error("input has {found} values, row expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircuitParams {
    /// Transconductance parameter, A/V².
    pub kp: f64,
    pub w_over_l: f64,
    /// Channel-length modulation, 1/V.
    pub lambda: f64,
    /// Match-line capacitance, F.
    pub c_ml: f64,
    /// Precharge voltage, V.
    pub v_precharge: f64,
    /// Sampling instant, s.
    pub t_sense: f64,
    /// Integration step, s.
    pub dt: f64,
    /// Off-state conductance per device, S.
    pub leak: f64,
    /// Offset subtracted from stored thresholds when programming devices, V.
    pub v_offset: f64,
}

/// Overdrive whose lone device sets the default sense time.
pub const REFERENCE_OVERDRIVE: f64 = 0.25;
/// Normalized match-line level the reference device reaches at `t_sense`.
pub const REFERENCE_LEVEL: f64 = 0.1;
/// Integration steps per sense window by default.
pub const STEPS_PER_SENSE: f64 = 400.0;

impl Default for CircuitParams {
    fn default() -> Self {
        Self::calibrated(1e-4, 1.0, 0.1, 1e-12, 1.0)
    }
}

impl CircuitParams {
    /// Device constants with the sense time set so that a lone device at
    /// [`REFERENCE_OVERDRIVE`] discharges the line to [`REFERENCE_LEVEL`] of
    /// the precharge, and the programming offset centred on that sense time.
    pub fn calibrated(kp: f64, w_over_l: f64, lambda: f64, c_ml: f64, v_precharge: f64) -> Self {
        let mut p = Self {
            kp,
            w_over_l,
            lambda,
            c_ml,
            v_precharge,
            t_sense: 1.0,
            dt: 1.0,
            leak: 0.0,
            v_offset: 0.0,
        };
        p.t_sense = p.time_to_level(REFERENCE_OVERDRIVE, REFERENCE_LEVEL);
        p.dt = p.t_sense / STEPS_PER_SENSE;
        p.v_offset = p.midpoint_overdrive();
        p
    }

    /// Same devices, sampled at a different instant (offset recentred).
    pub fn with_t_sense(self, t_sense: f64) -> Self {
        let mut p = Self {
            t_sense,
            dt: t_sense / STEPS_PER_SENSE,
            ..self
        };
        p.v_offset = p.midpoint_overdrive();
        p
    }

    pub fn validate(&self) -> Result<(), CircuitError> {
        let positive = [
            ("kp", self.kp),
            ("w_over_l", self.w_over_l),
            ("lambda", self.lambda),
            ("c_ml", self.c_ml),
            ("v_precharge", self.v_precharge),
            ("t_sense", self.t_sense),
            ("dt", self.dt),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CircuitError::BadParams(format!("{name} must be positive")));
            }
        }
        if !(self.leak >= 0.0) {
            return Err(CircuitError::BadParams("leak must be nonnegative".into()));
        }
        let limit = self.t_sense / 100.0;
        if self.dt > limit * (1.0 + 1e-12) {
            return Err(CircuitError::StepTooLarge { dt: self.dt, limit });
        }
        Ok(())
    }

    fn beta(&self) -> f64 {
        self.kp * self.w_over_l
    }

    /// Time for a lone device at overdrive `v_ov` to pull the line down to
    /// `level · v_precharge` (integrated with a fine step).
    fn time_to_level(&self, v_ov: f64, level: f64) -> f64 {
        let target = level * self.v_precharge;
        // saturation phase in closed form, then integrate the linear phase
        let inv = 1.0 / self.lambda;
        let rate = self.lambda * 0.5 * self.beta() * v_ov * v_ov / self.c_ml;
        let v_switch = v_ov.min(self.v_precharge);
        let t_sat = if v_switch >= target {
            ((self.v_precharge + inv) / (v_switch + inv)).ln() / rate
        } else {
            return ((self.v_precharge + inv) / (target + inv)).ln() / rate;
        };
        let mut v = v_switch;
        let mut t = t_sat;
        let h = t_sat.max(1e-15) / 20_000.0;
        while v > target {
            let f = |v: f64| -device_current(v_ov, v, self) / self.c_ml;
            let k1 = f(v);
            let k2 = f(v + 0.5 * h * k1);
            let k3 = f(v + 0.5 * h * k2);
            let k4 = f(v + h * k3);
            let next = v + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            if next <= target {
                t += h * (v - target) / (v - next);
                return t;
            }
            v = next;
            t += h;
        }
        t
    }

    /// Overdrive at which a lone device leaves half the precharge at
    /// `t_sense`.
    pub fn midpoint_overdrive(&self) -> f64 {
        let p = Self { v_offset: 0.0, ..*self };
        let sensed = |v_ov: f64| {
            let tr = discharge_unchecked(&[v_ov], &p);
            sense(&tr, p.t_sense).unwrap_or(0.0)
        };
        let (mut lo, mut hi) = (0.0, 2.0 * p.v_precharge);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if sensed(mid) > 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Drain current of one pull-down device.
pub fn device_current(v_ov: f64, v_d: f64, p: &CircuitParams) -> f64 {
    if v_d <= 0.0 {
        return 0.0;
    }
    if v_ov <= 0.0 {
        return p.leak * v_d;
    }
    let clm = 1.0 + p.lambda * v_d;
    if v_d >= v_ov {
        0.5 * p.beta() * v_ov * v_ov * clm
    } else {
        p.beta() * (v_ov - 0.5 * v_d) * v_d * clm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub times: Vec<f64>,
    pub v_ml: Vec<f64>,
}

impl Trace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,v_ml\n");
        for (t, v) in self.times.iter().zip(&self.v_ml) {
            out.push_str(&format!("{t},{v}\n"));
        }
        out
    }
}

fn discharge_unchecked(overdrives: &[f64], p: &CircuitParams) -> Trace {
    let active: Vec<f64> = overdrives
        .iter()
        .copied()
        .filter(|&v| v > 0.0 || p.leak > 0.0)
        .collect();
    let rhs = |v: f64| -> f64 {
        let v = v.max(0.0);
        -active.iter().map(|&ov| device_current(ov, v, p)).sum::<f64>() / p.c_ml
    };
    let steps = (p.t_sense / p.dt).ceil() as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut v_ml = Vec::with_capacity(steps + 1);
    let mut v = p.v_precharge;
    times.push(0.0);
    v_ml.push(v);
    if active.is_empty() {
        times.push(p.t_sense);
        v_ml.push(v);
        return Trace { times, v_ml };
    }
    for s in 1..=steps {
        let h = p.dt.min(p.t_sense - times[s - 1]);
        let k1 = rhs(v);
        let k2 = rhs(v + 0.5 * h * k1);
        let k3 = rhs(v + 0.5 * h * k2);
        let k4 = rhs(v + h * k3);
        v = (v + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)).max(0.0).min(v);
        times.push(times[s - 1] + h);
        v_ml.push(v);
        if v <= 0.0 {
            break;
        }
    }
    Trace { times, v_ml }
}

/// Integrate the match-line voltage of a row whose devices see the given gate
/// overdrives. Fixed-step RK4, with each device's operating region
/// re-evaluated at every stage.
pub fn discharge_row(overdrives: &[f64], p: &CircuitParams) -> Result<Trace, CircuitError> {
    p.validate()?;
    Ok(discharge_unchecked(overdrives, p))
}

/// Match-line voltage at `t`, normalized by the precharge. A trace that
/// ended early because the line fully discharged reads 0 afterwards.
pub fn sense(trace: &Trace, t: f64) -> Result<f64, CircuitError> {
    let span = *trace.times.last().expect("trace has points");
    let v0 = trace.v_ml[0];
    if t > span * (1.0 + 1e-12) {
        if *trace.v_ml.last().expect("trace has points") <= 0.0 {
            return Ok(0.0);
        }
        return Err(CircuitError::BeyondTrace { t, span });
    }
    let i = trace.times.partition_point(|&x| x < t);
    if i == 0 {
        return Ok(trace.v_ml[0] / v0);
    }
    if i >= trace.times.len() {
        return Ok(trace.v_ml[trace.v_ml.len() - 1] / v0);
    }
    let (t0, t1) = (trace.times[i - 1], trace.times[i]);
    let w = if t1 > t0 { (t - t0) / (t1 - t0) } else { 1.0 };
    Ok(((1.0 - w) * trace.v_ml[i - 1] + w * trace.v_ml[i]) / v0)
}

/// Gate overdrives of a cell's two devices for input `x`. The right device
/// is driven through the inverter, so it sees `-x`.
pub fn cell_overdrives(cell: &CamCell, x: f64, p: &CircuitParams) -> [f64; 2] {
    let (vl, vr) = cell.voltages();
    let program = |v: f64| if v >= WILDCARD_VOLTAGE { v } else { v - p.v_offset };
    [x - program(vl), -x - program(vr)]
}

/// Overdrive of the device implementing `cond` at input `x`.
pub fn condition_overdrive(cond: &Condition, x: f64, p: &CircuitParams) -> f64 {
    let cell = match cond.direction {
        Direction::Less => CamCell { left: Some(cond.threshold), right: None },
        Direction::Greater => CamCell { left: None, right: Some(-cond.threshold) },
    };
    let [l, r] = cell_overdrives(&cell, x, p);
    match cond.direction {
        Direction::Less => l,
        Direction::Greater => r,
    }
}

/// Sensed, normalized output of a row of conditions; `inputs[i]` drives
/// condition `i`.
pub fn sensed_row(conds: &[Condition], inputs: &[f64], p: &CircuitParams) -> Result<f64, CircuitError> {
    if conds.len() != inputs.len() {
        return Err(CircuitError::DimensionMismatch {
            expected: conds.len(),
            found: inputs.len(),
        });
    }
    let ov: Vec<f64> = conds
        .iter()
        .zip(inputs)
        .map(|(c, &x)| condition_overdrive(c, x, p))
        .collect();
    sense(&discharge_row(&ov, p)?, p.t_sense)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub r2: f64,
    pub rmse: f64,
    pub points: usize,
}

/// Minimum number of grid points accepted by [`fit_behavior`].
pub const MIN_FIT_POINTS: usize = 50;

struct FitProblem<'a> {
    /// Signed margins per point: `margins[i * n + j]` for condition `j`.
    margins: &'a [f64],
    n: usize,
    targets: &'a [f64],
    /// `[a, b, k]`, or `[a, k]` for a single condition.
    params: DVector<f64>,
}

impl FitProblem<'_> {
    fn behavior(&self) -> BehaviorParams {
        let p = &self.params;
        if self.n == 1 {
            BehaviorParams { a: p[0], b: 0.0, k: p[1], v_ml_t0: 1.0 }
        } else {
            BehaviorParams { a: p[0], b: p[1], k: p[2], v_ml_t0: 1.0 }
        }
    }

    fn predict(&self, i: usize, beh: &BehaviorParams, probs: &mut [f64]) -> f64 {
        for (j, m) in self.margins[i * self.n..(i + 1) * self.n].iter().enumerate() {
            probs[j] = crate::softtree::sigmoid(beh.k * m);
        }
        combine(probs, beh)
    }
}

impl LeastSquaresProblem<f64, Dyn, Dyn> for FitProblem<'_> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, Dyn>;
    type ParameterStorage = Owned<f64, Dyn>;

    fn set_params(&mut self, x: &DVector<f64>) {
        self.params.copy_from(x);
    }

    fn params(&self) -> DVector<f64> {
        self.params.clone()
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        let beh = self.behavior();
        let mut probs = vec![0.0; self.n];
        Some(DVector::from_iterator(
            self.targets.len(),
            (0..self.targets.len()).map(|i| self.predict(i, &beh, &mut probs) - self.targets[i]),
        ))
    }

    fn jacobian(&self) -> Option<DMatrix<f64>> {
        let beh = self.behavior();
        let n = self.n as f64;
        let cols = self.params.len();
        let mut jac = DMatrix::zeros(self.targets.len(), cols);
        let mut probs = vec![0.0; self.n];
        for i in 0..self.targets.len() {
            let margins = &self.margins[i * self.n..(i + 1) * self.n];
            for (j, m) in margins.iter().enumerate() {
                probs[j] = crate::softtree::sigmoid(beh.k * m);
            }
            let prod: f64 = probs.iter().product();
            let sum: f64 = probs.iter().sum();
            let raw = beh.a * prod + beh.b * sum - beh.b * (n - 1.0) * beh.v_ml_t0;
            if !(raw > 0.0 && raw < 1.0) {
                continue;
            }
            // d raw / d k through every sigmoid
            let mut d_k = 0.0;
            for (j, m) in margins.iter().enumerate() {
                let others: f64 = probs
                    .iter()
                    .enumerate()
                    .filter(|&(q, _)| q != j)
                    .map(|(_, p)| p)
                    .product();
                d_k += (beh.a * others + beh.b) * probs[j] * (1.0 - probs[j]) * m;
            }
            jac[(i, 0)] = prod;
            if self.n == 1 {
                jac[(i, 1)] = d_k;
            } else {
                jac[(i, 1)] = sum - (n - 1.0) * beh.v_ml_t0;
                jac[(i, 2)] = d_k;
            }
        }
        Some(jac)
    }
}

/// Least-squares fit of `(a, b, k)` to sensed row outputs. `inputs[i]` holds
/// one input per condition. With a single condition `a` and `b` cannot be
/// separated, so `b` is fixed at 0.
pub fn fit_behavior(
    conds: &[Condition],
    inputs: &[Vec<f64>],
    sensed: &[f64],
) -> Result<(BehaviorParams, FitReport), CircuitError> {
    if inputs.len() < MIN_FIT_POINTS {
        return Err(CircuitError::TooFewPoints { min: MIN_FIT_POINTS, got: inputs.len() });
    }
    if inputs.len() != sensed.len() {
        return Err(CircuitError::DimensionMismatch { expected: inputs.len(), found: sensed.len() });
    }
    if let Some(&bad) = sensed.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(CircuitError::OutOfRange(bad));
    }
    let mean = sensed.iter().sum::<f64>() / sensed.len() as f64;
    let ss_tot: f64 = sensed.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(CircuitError::Singular);
    }
    let n = conds.len();
    let mut margins = Vec::with_capacity(inputs.len() * n);
    for x in inputs {
        if x.len() != n {
            return Err(CircuitError::DimensionMismatch { expected: n, found: x.len() });
        }
        margins.extend(conds.iter().zip(x).map(|(c, &v)| c.margin(v)));
    }

    let mut best: Option<(f64, DVector<f64>)> = None;
    for k0 in [5.0, 10.0, 20.0, 40.0, 80.0] {
        let start = if n == 1 {
            DVector::from_vec(vec![1.0, k0])
        } else {
            DVector::from_vec(vec![1.0, 0.0, k0])
        };
        let problem = FitProblem { margins: &margins, n, targets: sensed, params: start };
        let (solved, report) = LevenbergMarquardt::new().minimize(problem);
        let k = solved.params[solved.params.len() - 1];
        if !report.objective_function.is_finite() || !(k > 0.0) {
            continue;
        }
        let sse = 2.0 * report.objective_function;
        if best.as_ref().is_none_or(|(b, _)| sse < *b) {
            best = Some((sse, solved.params.clone()));
        }
    }
    let (sse, params) = best.ok_or(CircuitError::NoConvergence)?;
    let fitted = FitProblem { margins: &margins, n, targets: sensed, params }.behavior();
    Ok((
        fitted,
        FitReport {
            r2: 1.0 - sse / ss_tot,
            rmse: (sse / sensed.len() as f64).sqrt(),
            points: sensed.len(),
        },
    ))
}

/// Row and grid used to characterize the behavior model: four upper-bound
/// cells, two per input, swept over a square input grid.
pub fn reference_row() -> (Vec<Condition>, [usize; 4]) {
    let conds = [-0.3, 0.27, -0.75, 0.77]
        .iter()
        .map(|&t| Condition::new(0, Direction::Less, t))
        .collect();
    (conds, [0, 1, 0, 1])
}

/// Sense the reference row over a `res`×`res` grid on [-1, 1]² and fit the
/// behavior model to it. Returns the inputs per cell, the sensed outputs and
/// the fit.
pub fn characterize(
    p: &CircuitParams,
    res: usize,
) -> Result<(Vec<Vec<f64>>, Vec<f64>, BehaviorParams, FitReport), CircuitError> {
    let (conds, wiring) = reference_row();
    let axis: Vec<f64> = (0..res)
        .map(|i| -1.0 + 2.0 * i as f64 / (res.max(2) - 1) as f64)
        .collect();
    let inputs: Vec<Vec<f64>> = axis
        .iter()
        .flat_map(|&u| axis.iter().map(move |&v| [u, v]))
        .map(|uv| wiring.iter().map(|&w| uv[w]).collect())
        .collect();
    let sensed = inputs
        .par_iter()
        .map(|x| sensed_row(&conds, x, p))
        .collect::<Result<Vec<_>, _>>()?;
    let (beh, rep) = fit_behavior(&conds, &inputs, &sensed)?;
    Ok((inputs, sensed, beh, rep))
}

/// Sensed output of a single upper-bound cell at threshold `t` over `inputs`.
pub fn cell_sweep(t: f64, inputs: &[f64], p: &CircuitParams) -> Result<Vec<f64>, CircuitError> {
    let c = [Condition::new(0, Direction::Less, t)];
    inputs.iter().map(|&x| sensed_row(&c, &[x], p)).collect()
}

/// Gain `k` of the best single-cell sigmoid fit at the configured sense time.
pub fn fitted_gain(p: &CircuitParams) -> Result<f64, CircuitError> {
    let xs: Vec<f64> = (0..201).map(|i| -1.0 + i as f64 / 100.0).collect();
    let ys = cell_sweep(0.0, &xs, p)?;
    let inputs: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
    let (beh, _) = fit_behavior(&[Condition::new(0, Direction::Less, 0.0)], &inputs, &ys)?;
    Ok(beh.k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n_cols: usize,
    pub sigma: f64,
    pub trials: usize,
    /// |mean(circuit − model)|
    pub abs_mean_error: f64,
    /// mean |circuit − model|
    pub mean_abs_error: f64,
}

/// Compare circuit-sensed and behavior-model outputs on random rows of
/// `n_cols` upper-bound cells under gaussian threshold variation `sigma`.
///
/// Each row has up to two deciding cells whose input sits within ±0.2 of the
/// stored threshold; the rest are matched by a margin of 0.4 to 1.4. The
/// circuit and the model see the same perturbed thresholds.
pub fn column_scaling_study(
    n_cols: &[usize],
    sigmas: &[f64],
    trials: usize,
    beh: &BehaviorParams,
    p: &CircuitParams,
    seed: u64,
) -> Result<Vec<ScalingRow>, CircuitError> {
    p.validate()?;
    let mut out = Vec::new();
    for (si, &sigma) in sigmas.iter().enumerate() {
        for (ni, &n) in n_cols.iter().enumerate() {
            let errors: Vec<f64> = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let mut rng = seeded(derive(seed, ((si * 10_000 + ni) * 100_000 + t) as u64));
                    let noise = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
                    let mut conds = Vec::with_capacity(n);
                    let mut inputs = Vec::with_capacity(n);
                    for j in 0..n {
                        let t_stored: f64 = rng.random_range(-0.5..1.0);
                        let margin: f64 = if j < 2 {
                            rng.random_range(-0.2..0.2)
                        } else {
                            rng.random_range(0.4..1.4)
                        };
                        inputs.push((t_stored - margin).max(-1.0));
                        let t_dev = t_stored + if sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                        conds.push(Condition::new(0, Direction::Less, t_dev));
                    }
                    let circuit = sensed_row(&conds, &inputs, p)?;
                    let probs: Vec<f64> = conds
                        .iter()
                        .zip(&inputs)
                        .map(|(c, &x)| node_prob(c, x, beh.k))
                        .collect();
                    Ok(circuit - combine(&probs, beh))
                })
                .collect::<Result<Vec<_>, CircuitError>>()?;
            let m = trials.max(1) as f64;
            out.push(ScalingRow {
                n_cols: n,
                sigma,
                trials,
                abs_mean_error: (errors.iter().sum::<f64>() / m).abs(),
                mean_abs_error: errors.iter().map(|e| e.abs()).sum::<f64>() / m,
            });
        }
    }
    Ok(out)
}

pub fn scaling_csv(rows: &[ScalingRow]) -> String {
    let mut s = String::from("n_cols,sigma,trials,abs_mean_error,mean_abs_error\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.n_cols, r.sigma, r.trials, r.abs_mean_error, r.mean_abs_error
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> CircuitParams {
        CircuitParams::default()
    }

    #[test]
    fn subthreshold_is_zero() {
        assert_eq!(device_current(-0.5, 1.0, &p()), 0.0);
    }

    #[test]
    fn saturation_substitution() {
        // (1e-4 / 2) * 0.2² * (1 + 0.1 * 1.0)
        let i = device_current(0.2, 1.0, &p());
        assert!((i - 2.2e-6).abs() < 1e-18);
    }

    #[test]
    fn region_boundary_is_continuous() {
        let p = p();
        for v in [0.05, 0.3, 0.77, 1.4] {
            let sat = 0.5 * p.kp * p.w_over_l * v * v * (1.0 + p.lambda * v);
            let lin = p.kp * p.w_over_l * (v - v / 2.0) * v * (1.0 + p.lambda * v);
            assert!((sat - lin).abs() <= 1e-15 * sat);
            assert_eq!(device_current(v, v, &p), sat);
        }
    }

    #[test]
    fn full_match_holds_precharge() {
        let tr = discharge_row(&[-0.3, -1.0, -0.01], &p()).unwrap();
        assert!(tr.v_ml.iter().all(|&v| v == 1.0));
        assert_eq!(sense(&tr, p().t_sense).unwrap(), 1.0);
    }

    #[test]
    fn saturation_matches_closed_form() {
        let p = p();
        let v_ov = 0.1;
        let tr = discharge_row(&[v_ov], &p).unwrap();
        let kprime = 0.5 * p.kp * p.w_over_l * v_ov * v_ov;
        for (t, v) in tr.times.iter().zip(&tr.v_ml) {
            if *v < v_ov {
                break;
            }
            let exact = (1.0 + 1.0 / p.lambda) * (-p.lambda * kprime * t / p.c_ml).exp() - 1.0 / p.lambda;
            assert!((v - exact).abs() <= 0.005 * exact);
        }
    }

    #[test]
    fn trace_is_nonincreasing_and_dt_checked() {
        let tr = discharge_row(&[0.4, 0.05, -0.2], &p()).unwrap();
        assert!(tr.v_ml.windows(2).all(|w| w[1] <= w[0]));
        let bad = CircuitParams { dt: p().t_sense / 50.0, ..p() };
        assert!(matches!(discharge_row(&[0.1], &bad), Err(CircuitError::StepTooLarge { .. })));
    }

    #[test]
    fn sense_monotone_in_time_and_bounded_span() {
        let p = p();
        let tr = discharge_row(&[0.15], &p).unwrap();
        let early = sense(&tr, 0.3 * p.t_sense).unwrap();
        let late = sense(&tr, 0.9 * p.t_sense).unwrap();
        assert!(early >= late);
        assert!(sense(&tr, 2.0 * p.t_sense).is_err());
    }

    #[test]
    fn reference_device_reaches_reference_level() {
        let p = CircuitParams { v_offset: 0.0, ..p() };
        let tr = discharge_row(&[REFERENCE_OVERDRIVE], &p).unwrap();
        let v = sense(&tr, p.t_sense).unwrap();
        assert!((v - REFERENCE_LEVEL).abs() < 1e-3, "{v}");
    }

    #[test]
    fn stored_threshold_is_half_point() {
        let v = cell_sweep(0.27, &[0.27], &p()).unwrap()[0];
        assert!((v - 0.5).abs() < 1e-6, "{v}");
    }

    #[test]
    fn dt_halving_converges() {
        let p = p();
        let half = CircuitParams { dt: p.dt / 2.0, ..p };
        for ov in [[0.05, 0.0], [0.2, 0.1], [0.6, 0.3]] {
            let a = sense(&discharge_row(&ov, &p).unwrap(), p.t_sense).unwrap();
            let b = sense(&discharge_row(&ov, &half).unwrap(), p.t_sense).unwrap();
            assert!((a - b).abs() <= 1e-3 * a.abs().max(1e-3), "{a} {b}");
        }
    }

    #[test]
    fn gain_grows_with_sense_time() {
        let base = p();
        let short = fitted_gain(&base.with_t_sense(base.t_sense / 4.0)).unwrap();
        let long = fitted_gain(&base).unwrap();
        assert!(long > short, "{short} {long}");
    }

    #[test]
    fn fit_recovers_synthetic_parameters() {
        let (conds, wiring) = reference_row();
        let truth = BehaviorParams { a: -0.6, b: 1.5, k: 30.0, v_ml_t0: 1.0 };
        let mut inputs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..31 {
            for j in 0..31 {
                let uv = [-1.0 + i as f64 / 15.0, -1.0 + j as f64 / 15.0];
                let x: Vec<f64> = wiring.iter().map(|&w| uv[w]).collect();
                let probs: Vec<f64> = conds.iter().zip(&x).map(|(c, &v)| node_prob(c, v, truth.k)).collect();
                ys.push(combine(&probs, &truth));
                inputs.push(x);
            }
        }
        let (fit, rep) = fit_behavior(&conds, &inputs, &ys).unwrap();
        assert!((fit.a - truth.a).abs() <= 0.01 * truth.a.abs());
        assert!((fit.b - truth.b).abs() <= 0.01 * truth.b.abs());
        assert!((fit.k - truth.k).abs() <= 0.01 * truth.k);
        assert!(rep.r2 > 0.9999);
    }

    #[test]
    fn single_cell_fit_fixes_b() {
        let xs: Vec<Vec<f64>> = (0..60).map(|i| vec![-1.0 + i as f64 / 30.0]).collect();
        let c = [Condition::new(0, Direction::Less, 0.1)];
        let ys: Vec<f64> = xs.iter().map(|x| 0.9 * node_prob(&c[0], x[0], 12.0)).collect();
        let (fit, rep) = fit_behavior(&c, &xs, &ys).unwrap();
        assert_eq!(fit.b, 0.0);
        assert!((fit.a - 0.9).abs() < 1e-6 && (fit.k - 12.0).abs() < 1e-4);
        assert!(rep.rmse < 1e-8);
    }

    #[test]
    fn fit_errors() {
        let c = [Condition::new(0, Direction::Less, 0.1)];
        let xs: Vec<Vec<f64>> = (0..60).map(|i| vec![i as f64 / 60.0]).collect();
        assert_eq!(fit_behavior(&c, &xs, &[0.5; 60]).unwrap_err(), CircuitError::Singular);
        assert!(matches!(
            fit_behavior(&c, &xs[..10], &[0.5; 10]),
            Err(CircuitError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn sum_form_in_saturation() {
        // Constant currents (no channel-length modulation, devices saturated
        // throughout): each cell removes its own charge, so the row output is
        // the sum of single-cell outputs minus (n - 1).
        let p = CircuitParams { lambda: 1e-9, ..p() };
        let ov = [0.12, 0.09];
        let single: Vec<f64> = ov
            .iter()
            .map(|&o| sense(&discharge_row(&[o], &p).unwrap(), p.t_sense).unwrap())
            .collect();
        let row = sense(&discharge_row(&ov, &p).unwrap(), p.t_sense).unwrap();
        assert!(row > 0.12);
        assert!((row - (single[0] + single[1] - 1.0)).abs() < 1e-6);
    }
}
