//! Compilation of soft trees into analog CAM threshold arrays.
//!
//! Each cell holds two threshold-tunable transistors. The left device bounds
//! the search range from above: an upper bound `x < T` programs the left
//! threshold to `T`. The right device sits behind an analog inverter on the
//! data line, so a lower bound `x > T` programs it to `-T`. An unprogrammed
//! side is a wildcard that always matches.
//!
//! Rows are stored sparsely (most cells of a deep tree's array are full
//! wildcards); [`CamArray::cell`] gives the dense view.

use rand::Rng as _;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{seeded, Rng};
use crate::softtree::{BehaviorParams, Condition, Direction, Path, SoftTree};

/// Programmable threshold window in volts.
pub const VTH_RANGE: (f64, f64) = (-1.0, 1.0);
/// Threshold written for a wildcard side on export; keeps the device off for
/// every input in range.
pub const WILDCARD_VOLTAGE: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum CamError {
    #[error("path {path}: threshold {threshold} outside the programmable range [-1, 1] V")]
    OutOfRange { path: usize, threshold: f64 },
    #[error("sample has {found} features, array expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("malformed array: {0}")]
    Malformed(String),
    #[error("csv: {0}")]
    Csv(String),
}

/// `None` on a side means wildcard.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CamCell {
    pub left: Option<f64>,
    pub right: Option<f64>,
}

impl CamCell {
    pub fn is_wildcard(&self) -> bool {
        self.left.is_none() && self.right.is_none()
    }

    /// Programming voltages with wildcards written as [`WILDCARD_VOLTAGE`].
    pub fn voltages(&self) -> (f64, f64) {
        (
            self.left.unwrap_or(WILDCARD_VOLTAGE),
            self.right.unwrap_or(WILDCARD_VOLTAGE),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CamRow {
    /// Non-wildcard cells as `(column, cell)`, ascending by column.
    pub cells: Vec<(usize, CamCell)>,
    /// Index of the source path.
    pub path: usize,
    /// Class reported when this row wins.
    pub label: usize,
}

impl CamRow {
    /// Number of programmed (non-wildcard) device sides.
    pub fn n_conditions(&self) -> usize {
        self.cells
            .iter()
            .map(|(_, c)| usize::from(c.left.is_some()) + usize::from(c.right.is_some()))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CamArray {
    pub rows: Vec<CamRow>,
    /// Input feature driving each column's data line.
    pub col_to_feature: Vec<usize>,
    /// Width of the input vector.
    pub n_features: usize,
    pub n_classes: usize,
}

impl CamArray {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.col_to_feature.len()
    }

    pub fn cell(&self, row: usize, col: usize) -> CamCell {
        let cells = &self.rows[row].cells;
        match cells.binary_search_by_key(&col, |(c, _)| *c) {
            Ok(i) => cells[i].1,
            Err(_) => CamCell::default(),
        }
    }

    pub fn check_dim(&self, sample: &[f64]) -> Result<(), CamError> {
        if sample.len() != self.n_features {
            return Err(CamError::DimensionMismatch {
                expected: self.n_features,
                found: sample.len(),
            });
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CamError> {
        let mut used = vec![false; self.n_cols()];
        for (r, row) in self.rows.iter().enumerate() {
            if row.label >= self.n_classes {
                return Err(CamError::Malformed(format!("row {r} label out of range")));
            }
            let mut last = None;
            for (c, cell) in &row.cells {
                if *c >= self.n_cols() || last.is_some_and(|l| l >= *c) {
                    return Err(CamError::Malformed(format!("row {r} column order")));
                }
                if cell.is_wildcard() {
                    return Err(CamError::Malformed(format!("row {r} stores a full wildcard")));
                }
                used[*c] = true;
                last = Some(*c);
            }
        }
        if let Some(c) = used.iter().position(|u| !u) {
            return Err(CamError::Malformed(format!("column {c} is never used")));
        }
        if self.col_to_feature.iter().any(|&f| f >= self.n_features) {
            return Err(CamError::Malformed("column feature out of range".into()));
        }
        Ok(())
    }

    /// Visit every programmed threshold, row-major, left side before right.
    pub fn thresholds_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.rows.iter_mut().flat_map(|r| {
            r.cells
                .iter_mut()
                .flat_map(|(_, c)| c.left.iter_mut().chain(c.right.iter_mut()))
        })
    }

    pub fn thresholds(&self) -> Vec<f64> {
        self.rows
            .iter()
            .flat_map(|r| {
                r.cells
                    .iter()
                    .flat_map(|(_, c)| c.left.into_iter().chain(c.right))
            })
            .collect()
    }

    /// Add iid uniform(-max_err, max_err) programming error to every
    /// programmed threshold.
    pub fn apply_programming_error(&self, max_err: f64, seed: u64) -> CamArray {
        let mut out = self.clone();
        if max_err > 0.0 {
            let dist = Uniform::new_inclusive(-max_err, max_err).expect("finite bound");
            let mut rng = seeded(seed);
            out.thresholds_mut().for_each(|t| *t += dist.sample(&mut rng));
        }
        out
    }

    /// Perturb every programmed threshold with `noise`, drawing from `rng`.
    pub fn perturb_with(&self, rng: &mut Rng, noise: Noise) -> CamArray {
        let mut out = self.clone();
        match noise {
            Noise::None => {}
            Noise::Uniform(d) => {
                out.thresholds_mut()
                    .for_each(|t| *t += rng.random_range(-d..=d));
            }
            Noise::Gaussian(s) => {
                let n = Normal::new(0.0, s).expect("finite sigma");
                out.thresholds_mut().for_each(|t| *t += n.sample(rng));
            }
        }
        out
    }

    /// Dense CSV grid: one line per row, two columns (left, right) per array
    /// column. `wildcard` of `None` leaves wildcard sides empty.
    pub fn to_csv(&self, feature_names: &[String], wildcard: Option<f64>) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["row".to_string(), "label".to_string()];
        for &f in &self.col_to_feature {
            let name = feature_names.get(f).cloned().unwrap_or_else(|| format!("f{f}"));
            header.push(format!("{name}:left"));
            header.push(format!("{name}:right"));
        }
        w.write_record(&header).expect("in-memory write");
        let fmt = |v: Option<f64>| match (v, wildcard) {
            (Some(v), _) => v.to_string(),
            (None, Some(x)) => x.to_string(),
            (None, None) => String::new(),
        };
        for (r, row) in self.rows.iter().enumerate() {
            let mut rec = vec![r.to_string(), row.label.to_string()];
            for c in 0..self.n_cols() {
                let cell = self.cell(r, c);
                rec.push(fmt(cell.left));
                rec.push(fmt(cell.right));
            }
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    /// Row and column legends that accompany the CSV grid.
    pub fn sidecar(&self, feature_names: &[String], class_names: &[String]) -> Sidecar {
        Sidecar {
            rows: self.n_rows(),
            cols: self.n_cols(),
            row_to_path: self.rows.iter().map(|r| r.path).collect(),
            row_labels: self.rows.iter().map(|r| r.label).collect(),
            col_to_feature: self.col_to_feature.clone(),
            n_features: self.n_features,
            feature_names: feature_names.to_vec(),
            class_names: class_names.to_vec(),
            wildcard_voltage: WILDCARD_VOLTAGE,
        }
    }

    /// Rebuild an array from its CSV grid and sidecar. Empty cells and values
    /// at or above the wildcard voltage read as wildcards.
    pub fn from_csv(text: &str, side: &Sidecar) -> Result<CamArray, CamError> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| CamError::Csv(e.to_string()))?;
            if rec.len() != 2 + 2 * side.cols {
                return Err(CamError::Csv(format!("row {r}: expected {} fields", 2 + 2 * side.cols)));
            }
            let parse = |s: &str| -> Result<Option<f64>, CamError> {
                if s.trim().is_empty() {
                    return Ok(None);
                }
                let v: f64 = s
                    .trim()
                    .parse()
                    .map_err(|_| CamError::Csv(format!("row {r}: bad value {s:?}")))?;
                Ok((v < side.wildcard_voltage).then_some(v))
            };
            let mut cells = Vec::new();
            for c in 0..side.cols {
                let cell = CamCell {
                    left: parse(&rec[2 + 2 * c])?,
                    right: parse(&rec[3 + 2 * c])?,
                };
                if !cell.is_wildcard() {
                    cells.push((c, cell));
                }
            }
            let label = rec[1]
                .parse()
                .map_err(|_| CamError::Csv(format!("row {r}: bad label")))?;
            let path = *side
                .row_to_path
                .get(r)
                .ok_or_else(|| CamError::Csv("more rows than the sidecar lists".into()))?;
            rows.push(CamRow { cells, path, label });
        }
        if rows.len() != side.rows {
            return Err(CamError::Csv(format!("expected {} rows, found {}", side.rows, rows.len())));
        }
        let arr = CamArray {
            rows,
            col_to_feature: side.col_to_feature.clone(),
            n_features: side.n_features,
            n_classes: side.class_names.len(),
        };
        arr.validate()?;
        Ok(arr)
    }
}

/// Threshold noise applied to a programmed array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "magnitude", rename_all = "snake_case")]
pub enum Noise {
    None,
    /// Half-range of a uniform distribution, volts.
    Uniform(f64),
    /// Standard deviation, volts.
    Gaussian(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub rows: usize,
    pub cols: usize,
    pub row_to_path: Vec<usize>,
    pub row_labels: Vec<usize>,
    pub col_to_feature: Vec<usize>,
    pub n_features: usize,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    pub wildcard_voltage: f64,
}

/// One row per path, one column per feature in order of first use.
pub fn map_sdt(tree: &SoftTree) -> Result<CamArray, CamError> {
    let mut col_of = vec![usize::MAX; tree.n_features];
    let mut col_to_feature = Vec::new();
    let mut rows = Vec::with_capacity(tree.paths.len());
    for (j, path) in tree.paths.iter().enumerate() {
        let mut cells: Vec<(usize, CamCell)> = Vec::new();
        for c in &path.conditions {
            if !(VTH_RANGE.0..=VTH_RANGE.1).contains(&c.threshold) {
                return Err(CamError::OutOfRange {
                    path: j,
                    threshold: c.threshold,
                });
            }
            if c.feature >= tree.n_features {
                return Err(CamError::Malformed(format!("path {j} feature out of range")));
            }
            if col_of[c.feature] == usize::MAX {
                col_of[c.feature] = col_to_feature.len();
                col_to_feature.push(c.feature);
            }
            let col = col_of[c.feature];
            let slot = match cells.iter_mut().find(|(cc, _)| *cc == col) {
                Some((_, cell)) => cell,
                None => {
                    cells.push((col, CamCell::default()));
                    &mut cells.last_mut().expect("just pushed").1
                }
            };
            let side = match c.direction {
                Direction::Less => &mut slot.left,
                Direction::Greater => &mut slot.right,
            };
            if side.is_some() {
                return Err(CamError::Malformed(format!(
                    "path {j} has two bounds of one direction on feature {}",
                    c.feature
                )));
            }
            *side = Some(match c.direction {
                Direction::Less => c.threshold,
                Direction::Greater => -c.threshold,
            });
        }
        cells.sort_by_key(|(c, _)| *c);
        rows.push(CamRow {
            cells,
            path: j,
            label: path.label,
        });
    }
    Ok(CamArray {
        rows,
        col_to_feature,
        n_features: tree.n_features,
        n_classes: tree.n_classes,
    })
}

/// Recover the soft tree stored in an array. Conditions come back in column
/// order, left side before right.
pub fn unmap(arr: &CamArray, behavior: BehaviorParams) -> Result<SoftTree, CamError> {
    arr.validate()?;
    let paths = arr
        .rows
        .iter()
        .map(|row| {
            let mut conditions = Vec::new();
            for (c, cell) in &row.cells {
                let f = arr.col_to_feature[*c];
                if let Some(t) = cell.left {
                    conditions.push(Condition::new(f, Direction::Less, t));
                }
                if let Some(t) = cell.right {
                    conditions.push(Condition::new(f, Direction::Greater, -t));
                }
            }
            Path {
                conditions,
                label: row.label,
            }
        })
        .collect();
    Ok(SoftTree {
        n_features: arr.n_features,
        n_classes: arr.n_classes,
        behavior,
        root_feature: None,
        paths,
    })
}
