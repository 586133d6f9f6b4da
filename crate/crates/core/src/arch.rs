//! Tiled array planning and an analytic latency/energy model.
//!
//! Columns are reordered so the most used features come first and rows so
//! short paths come first. The reordered array is cut into bands of rows and
//! subarrays of `width` columns; a (band, subarray) block holding only
//! wildcards is disabled and costs no search energy. Enabled subarray match
//! lines join a master match line per row, so a row still sees every one of
//! its programmed cells.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cammap::CamArray;
use crate::camsim::{row_value, InferenceResult};
use crate::hardtree::argmax;
use crate::softtree::BehaviorParams;

#[derive(Debug, Error, PartialEq)]
pub enum ArchError {
    #[error("subarray width and band height must be at least 1")]
    BadWidth,
    #[error("plan is for a {plan_rows}x{plan_cols} array, got {rows}x{cols}")]
    ShapeMismatch { plan_rows: usize, plan_cols: usize, rows: usize, cols: usize },
    #[error("row {row}, column {col} is programmed but its subarray is disabled")]
    MaskViolation { row: usize, col: usize },
    #[error("calibration: {0}")]
    Calibration(String),
    #[error(transparent)]
    Cam(#[from] crate::cammap::CamError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiledPlan {
    pub rows: usize,
    pub cols: usize,
    /// `feature_order[i]` is the array column placed at position `i`.
    pub feature_order: Vec<usize>,
    /// `path_order[i]` is the array row placed at position `i`.
    pub path_order: Vec<usize>,
    /// Subarray width `n` in columns.
    pub width: usize,
    /// Rows per band.
    pub band_height: usize,
    pub subarrays: usize,
    pub bands: usize,
    /// Row-major `bands × subarrays` enable flags.
    pub enable: Vec<bool>,
}

impl TiledPlan {
    /// Fully dense plan (every block enabled) for a `rows × cols` array.
    pub fn dense(rows: usize, cols: usize, width: usize) -> Result<Self, ArchError> {
        if width == 0 {
            return Err(ArchError::BadWidth);
        }
        let subarrays = cols.div_ceil(width);
        let bands = rows.div_ceil(width);
        Ok(Self {
            rows,
            cols,
            feature_order: (0..cols).collect(),
            path_order: (0..rows).collect(),
            width,
            band_height: width,
            subarrays,
            bands,
            enable: vec![true; subarrays * bands],
        })
    }

    pub fn enabled(&self, band: usize, sub: usize) -> bool {
        self.enable[band * self.subarrays + sub]
    }

    pub fn enabled_count(&self) -> usize {
        self.enable.iter().filter(|&&e| e).count()
    }

    /// Cells covered by enabled blocks.
    pub fn enabled_area(&self) -> usize {
        let mut area = 0;
        for b in 0..self.bands {
            let h = self.band_height.min(self.rows - b * self.band_height);
            for s in 0..self.subarrays {
                if self.enabled(b, s) {
                    area += h * self.width.min(self.cols - s * self.width);
                }
            }
        }
        area
    }

    fn inverse(order: &[usize]) -> Vec<usize> {
        let mut inv = vec![0; order.len()];
        for (pos, &i) in order.iter().enumerate() {
            inv[i] = pos;
        }
        inv
    }

    /// `(band, subarray)` of every array cell position.
    fn locator(&self) -> (Vec<usize>, Vec<usize>) {
        let row_pos = Self::inverse(&self.path_order);
        let col_pos = Self::inverse(&self.feature_order);
        (
            row_pos.iter().map(|p| p / self.band_height).collect(),
            col_pos.iter().map(|p| p / self.width).collect(),
        )
    }

    fn check_shape(&self, arr: &CamArray) -> Result<(), ArchError> {
        if arr.n_rows() != self.rows || arr.n_cols() != self.cols {
            return Err(ArchError::ShapeMismatch {
                plan_rows: self.rows,
                plan_cols: self.cols,
                rows: arr.n_rows(),
                cols: arr.n_cols(),
            });
        }
        Ok(())
    }

    /// Every programmed cell must fall in an enabled block.
    pub fn check(&self, arr: &CamArray) -> Result<(), ArchError> {
        self.check_shape(arr)?;
        let (band_of, sub_of) = self.locator();
        for (r, row) in arr.rows.iter().enumerate() {
            for (c, _) in &row.cells {
                if !self.enabled(band_of[r], sub_of[*c]) {
                    return Err(ArchError::MaskViolation { row: r, col: *c });
                }
            }
        }
        Ok(())
    }
}

/// Reorder and tile `arr` into subarrays of `width` columns, with bands of the
/// same height.
pub fn plan_tiling(arr: &CamArray, width: usize) -> Result<TiledPlan, ArchError> {
    plan_tiling_with(arr, width, width)
}

pub fn plan_tiling_with(arr: &CamArray, width: usize, band_height: usize) -> Result<TiledPlan, ArchError> {
    if width == 0 || band_height == 0 {
        return Err(ArchError::BadWidth);
    }
    let mut usage = vec![0usize; arr.n_cols()];
    for row in &arr.rows {
        for (c, _) in &row.cells {
            usage[*c] += 1;
        }
    }
    // Columns are numbered by first use, so a stable sort breaks usage ties
    // by first appearance.
    let mut feature_order: Vec<usize> = (0..arr.n_cols()).collect();
    feature_order.sort_by_key(|&c| std::cmp::Reverse(usage[c]));
    let mut path_order: Vec<usize> = (0..arr.n_rows()).collect();
    path_order.sort_by_key(|&r| arr.rows[r].n_conditions());

    let subarrays = arr.n_cols().div_ceil(width);
    let bands = arr.n_rows().div_ceil(band_height);
    let mut plan = TiledPlan {
        rows: arr.n_rows(),
        cols: arr.n_cols(),
        feature_order,
        path_order,
        width,
        band_height,
        subarrays,
        bands,
        enable: vec![false; subarrays * bands],
    };
    let (band_of, sub_of) = plan.locator();
    for (r, row) in arr.rows.iter().enumerate() {
        for (c, _) in &row.cells {
            plan.enable[band_of[r] * subarrays + sub_of[*c]] = true;
        }
    }
    Ok(plan)
}

/// Inference through the tiled array. Rows keep their original indices, so
/// the result is directly comparable with untiled inference.
pub fn simulate_tiled(
    plan: &TiledPlan,
    arr: &CamArray,
    sample: &[f64],
    beh: &BehaviorParams,
) -> Result<InferenceResult, ArchError> {
    plan.check(arr)?;
    arr.check_dim(sample)?;
    if arr.rows.is_empty() {
        return Err(ArchError::Cam(crate::cammap::CamError::Malformed("array has no rows".into())));
    }
    // Disabled blocks hold only wildcards, which contribute nothing, so each
    // master match line sees exactly the row's programmed cells.
    let ml_values: Vec<f64> = arr
        .rows
        .iter()
        .map(|row| row_value(row, &arr.col_to_feature, sample, beh))
        .collect();
    let winner = argmax(&ml_values);
    Ok(InferenceResult {
        predicted_class: arr.rows[winner].label,
        winner,
        ml_values,
    })
}

/// Constants of the analytic cost model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Match-line precharge time, s.
    pub t_precharge: f64,
    /// Sense window, s.
    pub t_sense: f64,
    /// Delay of one winner-take-all stage, s.
    pub t_wta_stage: f64,
    /// Inputs per winner-take-all stage.
    pub wta_fanin: usize,
    /// Search energy of one enabled subarray, J.
    pub e_subarray: f64,
    /// Winner-take-all energy per sample, J.
    pub e_wta: f64,
    /// Digital reference: time per sigmoid-and-multiply operation, s.
    pub t_op: f64,
    /// Digital reference: energy per operation, J.
    pub e_op: f64,
}

/// Published per-sample energies of the reference depth-20 design.
pub const REFERENCE_ARRAY_ENERGY: f64 = 8.78e-9;
pub const REFERENCE_WTA_ENERGY: f64 = 0.07e-9;

impl Calibration {
    /// Timing and digital constants with energies left unset.
    pub fn timing_defaults() -> Self {
        Self {
            t_precharge: 0.5e-9,
            t_sense: 2e-9,
            t_wta_stage: 10e-12,
            wta_fanin: 1024,
            e_subarray: f64::NAN,
            e_wta: f64::NAN,
            t_op: 1e-9,
            e_op: 1e-9,
        }
    }

    /// Scale the per-subarray energy so that `plans` cost `array_energy` per
    /// sample, and fix the winner-take-all energy at `wta_energy`.
    pub fn from_reference(plans: &[TiledPlan], array_energy: f64, wta_energy: f64, base: Calibration) -> Result<Self, ArchError> {
        let enabled: usize = plans.iter().map(TiledPlan::enabled_count).sum();
        if enabled == 0 {
            return Err(ArchError::Calibration("reference plan has no enabled subarrays".into()));
        }
        Ok(Self {
            e_subarray: array_energy / enabled as f64,
            e_wta: wta_energy,
            ..base
        })
    }

    pub fn validate(&self) -> Result<(), ArchError> {
        let fields = [
            ("t_precharge", self.t_precharge),
            ("t_sense", self.t_sense),
            ("t_wta_stage", self.t_wta_stage),
            ("e_subarray", self.e_subarray),
            ("e_wta", self.e_wta),
            ("t_op", self.t_op),
            ("e_op", self.e_op),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ArchError::Calibration(format!("{name} missing or negative")));
            }
        }
        if self.wta_fanin < 2 {
            return Err(ArchError::Calibration("wta_fanin must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub latency: f64,
    pub energy_array: f64,
    pub energy_wta: f64,
    pub energy_total: f64,
    pub enabled_subarrays: usize,
    pub wta_stages: usize,
    /// Sigmoid-and-multiply operations of a sequential soft-tree evaluation.
    pub digital_ops: f64,
    pub digital_latency: f64,
    pub digital_energy: f64,
}

/// Winner-take-all stages needed to reduce `rows` candidates.
pub fn wta_stages(rows: usize, fanin: usize) -> usize {
    let mut stages = 1;
    let mut reach = fanin;
    while reach < rows {
        reach = reach.saturating_mul(fanin);
        stages += 1;
    }
    stages
}

/// Per-sample cost of one search through every plan (one per tree; the
/// arrays of a forest search in parallel). `avg_path_len` is the mean number
/// of conditions per path, the tree depth for a complete tree.
pub fn estimate_cost(plans: &[TiledPlan], avg_path_len: f64, cal: &Calibration) -> Result<CostReport, ArchError> {
    cal.validate()?;
    if plans.is_empty() {
        return Err(ArchError::Calibration("no plans to cost".into()));
    }
    let enabled: usize = plans.iter().map(TiledPlan::enabled_count).sum();
    let stages = plans.iter().map(|p| wta_stages(p.rows, cal.wta_fanin)).max().unwrap_or(1);
    let rows: usize = plans.iter().map(|p| p.rows).sum();
    let energy_array = enabled as f64 * cal.e_subarray;
    let energy_wta = cal.e_wta * plans.len() as f64;
    let ops = rows as f64 * avg_path_len;
    Ok(CostReport {
        latency: cal.t_precharge + cal.t_sense + stages as f64 * cal.t_wta_stage,
        energy_array,
        energy_wta,
        energy_total: energy_array + energy_wta,
        enabled_subarrays: enabled,
        wta_stages: stages,
        digital_ops: ops,
        digital_latency: ops * cal.t_op,
        digital_energy: ops * cal.e_op,
    })
}

/// Plans for every array of a model, as written by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSet {
    pub mean_path_len: f64,
    pub plans: Vec<TiledPlan>,
}

pub fn cost_csv(rows: &[(String, CostReport)]) -> String {
    let mut s = String::from(
        "label,latency_s,energy_array_j,energy_wta_j,energy_total_j,enabled_subarrays,wta_stages,digital_ops,digital_latency_s,digital_energy_j\n",
    );
    for (label, c) in rows {
        s.push_str(&format!(
            "{label},{},{},{},{},{},{},{},{},{}\n",
            c.latency,
            c.energy_array,
            c.energy_wta,
            c.energy_total,
            c.enabled_subarrays,
            c.wta_stages,
            c.digital_ops,
            c.digital_latency,
            c.digital_energy
        ));
    }
    s
}
