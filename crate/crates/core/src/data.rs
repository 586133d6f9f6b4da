//! Dataset ingestion, normalization and stratified splitting.
//!
//! Samples are stored row-major in one flat buffer. Tabular features are
//! mapped onto `[-1, 1]` using the min/max recorded on the training split;
//! MNIST pixels are divided by 255.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::rng::seeded;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("unknown label column `{0}`")]
    UnknownLabelColumn(String),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("non-numeric value `{value}` in column `{column}` (row {row})")]
    NonNumeric {
        column: String,
        row: usize,
        value: String,
    },
    #[error("bad IDX magic number {found:#010x} (expected {expected:#010x})")]
    BadMagic { found: u32, expected: u32 },
    #[error("IDX length mismatch: {0}")]
    LengthMismatch(String),
    #[error("empty dataset")]
    Empty,
    #[error("class {class} has {count} sample(s); stratified split needs at least 2")]
    ClassTooSmall { class: usize, count: usize },
    #[error("test fraction must lie in (0, 1), got {0}")]
    BadFraction(f64),
    #[error("pixel value {0} outside [0, 255]")]
    PixelRange(f64),
    #[error("tabular normalization needs a recorded feature range of length {expected}, got {found}")]
    MissingRange { expected: usize, found: usize },
    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),
}

/// Labelled samples with named features.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    n_features: usize,
    values: Vec<f64>,
    labels: Vec<usize>,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    /// Per-feature `(min, max)` of the training split, set by tabular normalization.
    pub feature_range: Option<Vec<(f64, f64)>>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        feature_names: Vec<String>,
        class_names: Vec<String>,
        values: Vec<f64>,
        labels: Vec<usize>,
    ) -> Result<Self, DataError> {
        let n_features = feature_names.len();
        if n_features == 0 {
            return Err(DataError::Inconsistent("no features".into()));
        }
        if values.len() != n_features * labels.len() {
            return Err(DataError::Inconsistent(format!(
                "{} values for {} samples x {} features",
                values.len(),
                labels.len(),
                n_features
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(DataError::Inconsistent(format!(
                "label {bad} with only {} classes",
                class_names.len()
            )));
        }
        Ok(Self {
            name: name.into(),
            n_features,
            values,
            labels,
            feature_names,
            class_names,
            feature_range: None,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Row-major sample buffer.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn samples(&self) -> impl Iterator<Item = (&[f64], usize)> + '_ {
        self.values
            .chunks_exact(self.n_features)
            .zip(self.labels.iter().copied())
    }

    pub fn feature_index(&self, name: &str) -> Result<usize, DataError> {
        self.feature_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| DataError::UnknownFeature(name.to_string()))
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut values = Vec::with_capacity(indices.len() * self.n_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            values.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            name: self.name.clone(),
            n_features: self.n_features,
            values,
            labels,
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
            feature_range: self.feature_range.clone(),
        }
    }

    /// Keep only the named features, in the given order.
    pub fn select_features(&self, names: &[&str]) -> Result<Dataset, DataError> {
        let idx = names
            .iter()
            .map(|n| self.feature_index(n))
            .collect::<Result<Vec<_>, _>>()?;
        let mut values = Vec::with_capacity(self.n_samples() * idx.len());
        for s in 0..self.n_samples() {
            let row = self.sample(s);
            values.extend(idx.iter().map(|&f| row[f]));
        }
        Ok(Dataset {
            name: self.name.clone(),
            n_features: idx.len(),
            values,
            labels: self.labels.clone(),
            feature_names: idx.iter().map(|&f| self.feature_names[f].clone()).collect(),
            class_names: self.class_names.clone(),
            feature_range: self
                .feature_range
                .as_ref()
                .map(|r| idx.iter().map(|&f| r[f]).collect()),
        })
    }

    /// Per-feature mean, used to pin the off-axis features of a decision surface.
    pub fn feature_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n_features];
        for (row, _) in self.samples() {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        let n = self.n_samples().max(1) as f64;
        sums.iter().map(|s| s / n).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub(crate) fn with_values(&self, values: Vec<f64>, feature_range: Option<Vec<(f64, f64)>>) -> Dataset {
        debug_assert_eq!(values.len(), self.values.len());
        Dataset {
            name: self.name.clone(),
            n_features: self.n_features,
            values,
            labels: self.labels.clone(),
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
            feature_range,
        }
    }
}

/// Read a headered CSV. Every column except `label_column` must be numeric.
///
/// Labels that all parse as integers keep their numeric order; otherwise the
/// distinct strings are sorted. Either way they are renumbered `0..n_classes`.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let file = File::open(path).map_err(|source| DataError::Io {
        path: shown.clone(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_csv(BufReader::new(file), &shown, name, label_column)
}

/// [`load_csv`] over any reader. `source` only labels error messages.
pub fn read_csv(
    input: impl std::io::Read,
    source: &str,
    name: impl Into<String>,
    label_column: &str,
) -> Result<Dataset, DataError> {
    let shown = source.to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let csv_err = |source| DataError::Csv {
        path: shown.clone(),
        source,
    };
    let headers: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| DataError::UnknownLabelColumn(label_column.to_string()))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut values = Vec::new();
    let mut raw_labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        for (i, cell) in record.iter().enumerate() {
            if i == label_idx {
                raw_labels.push(cell.to_string());
            } else {
                let v: f64 = cell.parse().map_err(|_| DataError::NonNumeric {
                    column: headers[i].clone(),
                    row: row + 1,
                    value: cell.to_string(),
                })?;
                values.push(v);
            }
        }
    }
    if raw_labels.is_empty() {
        return Err(DataError::Empty);
    }

    let (class_names, labels) = encode_labels(&raw_labels);
    Dataset::new(name, feature_names, class_names, values, labels)
}

fn encode_labels(raw: &[String]) -> (Vec<String>, Vec<usize>) {
    let numeric: Option<Vec<i64>> = raw.iter().map(|s| s.parse::<i64>().ok()).collect();
    match numeric {
        Some(ints) => {
            let distinct: Vec<i64> = ints.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
            let labels = ints
                .iter()
                .map(|v| distinct.binary_search(v).expect("present"))
                .collect();
            (distinct.iter().map(i64::to_string).collect(), labels)
        }
        None => {
            let distinct: Vec<&String> = raw.iter().collect::<BTreeSet<_>>().into_iter().collect();
            let labels = raw
                .iter()
                .map(|v| distinct.binary_search(&v).expect("present"))
                .collect();
            (distinct.into_iter().cloned().collect(), labels)
        }
    }
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

fn read_all(path: &Path) -> Result<Vec<u8>, DataError> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
    Ok(buf)
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::LengthMismatch(format!("header truncated at byte {at}")))
}

/// Parse an IDX image file and its label file. Pixels stay in `0..=255`.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let img = read_all(images.as_ref())?;
    let lab = read_all(labels.as_ref())?;
    parse_idx(&img, &lab)
}

pub fn parse_idx(img: &[u8], lab: &[u8]) -> Result<Dataset, DataError> {
    let magic = be_u32(img, 0)?;
    if magic != IDX_IMAGES {
        return Err(DataError::BadMagic {
            found: magic,
            expected: IDX_IMAGES,
        });
    }
    let magic = be_u32(lab, 0)?;
    if magic != IDX_LABELS {
        return Err(DataError::BadMagic {
            found: magic,
            expected: IDX_LABELS,
        });
    }
    let n = be_u32(img, 4)? as usize;
    let rows = be_u32(img, 8)? as usize;
    let cols = be_u32(img, 12)? as usize;
    let n_labels = be_u32(lab, 4)? as usize;
    if n != n_labels {
        return Err(DataError::LengthMismatch(format!(
            "{n} images but {n_labels} labels"
        )));
    }
    let pixels = rows * cols;
    let body = &img[16..];
    if body.len() != n * pixels {
        return Err(DataError::LengthMismatch(format!(
            "image body has {} bytes, header promises {}",
            body.len(),
            n * pixels
        )));
    }
    let lab_body = &lab[8..];
    if lab_body.len() != n {
        return Err(DataError::LengthMismatch(format!(
            "label body has {} bytes, header promises {n}",
            lab_body.len()
        )));
    }
    let n_classes = lab_body.iter().copied().max().map_or(0, |m| m as usize + 1).max(10);
    Dataset::new(
        "mnist",
        (0..pixels).map(|p| format!("pixel{p}")).collect(),
        (0..n_classes).map(|c| c.to_string()).collect(),
        body.iter().map(|&b| f64::from(b)).collect(),
        lab_body.iter().map(|&b| b as usize).collect(),
    )
}

#[derive(Debug, Clone, Copy)]
pub enum NormalizeMode<'a> {
    /// Affine map of the recorded training `(min, max)` onto `[-1, 1]`, clamped.
    Tabular(&'a [(f64, f64)]),
    /// Divide by 255.
    Pixel,
}

#[derive(Debug, Clone)]
pub struct Normalized {
    pub dataset: Dataset,
    /// Features whose training range is degenerate (min == max); they map to 0.
    pub degenerate: Vec<usize>,
}

/// Per-feature `(min, max)` of a (training) dataset.
pub fn fit_range(train: &Dataset) -> Vec<(f64, f64)> {
    let mut range = vec![(f64::INFINITY, f64::NEG_INFINITY); train.n_features()];
    for (row, _) in train.samples() {
        for (r, &v) in range.iter_mut().zip(row) {
            r.0 = r.0.min(v);
            r.1 = r.1.max(v);
        }
    }
    range
}

pub fn normalize(ds: &Dataset, mode: NormalizeMode<'_>) -> Result<Normalized, DataError> {
    match mode {
        NormalizeMode::Pixel => {
            if let Some(&bad) = ds.values.iter().find(|v| !(0.0..=255.0).contains(*v)) {
                return Err(DataError::PixelRange(bad));
            }
            let values = ds.values.iter().map(|v| v / 255.0).collect();
            Ok(Normalized {
                dataset: ds.with_values(values, None),
                degenerate: Vec::new(),
            })
        }
        NormalizeMode::Tabular(range) => {
            if range.len() != ds.n_features() {
                return Err(DataError::MissingRange {
                    expected: ds.n_features(),
                    found: range.len(),
                });
            }
            let degenerate: Vec<usize> = range
                .iter()
                .enumerate()
                .filter(|(_, (lo, hi))| !(hi > lo))
                .map(|(i, _)| i)
                .collect();
            let values = ds
                .values
                .chunks_exact(ds.n_features())
                .flat_map(|row| {
                    row.iter().zip(range).map(|(&v, &(lo, hi))| {
                        if hi > lo {
                            (2.0 * (v - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
                        } else {
                            0.0
                        }
                    })
                })
                .collect();
            Ok(Normalized {
                dataset: ds.with_values(values, Some(range.to_vec())),
                degenerate,
            })
        }
    }
}

/// Undo tabular normalization using the recorded feature range.
pub fn denormalize(ds: &Dataset) -> Result<Dataset, DataError> {
    let range = ds.feature_range.as_ref().ok_or(DataError::MissingRange {
        expected: ds.n_features(),
        found: 0,
    })?;
    let values = ds
        .values
        .chunks_exact(ds.n_features())
        .flat_map(|row| {
            row.iter().zip(range).map(|(&v, &(lo, hi))| {
                if hi > lo {
                    lo + (v + 1.0) * 0.5 * (hi - lo)
                } else {
                    lo
                }
            })
        })
        .collect();
    Ok(ds.with_values(values, None))
}

/// Stratified, seeded train/test split.
///
/// The test set holds `ceil(test_fraction * n)` samples, apportioned across
/// classes by largest remainder so small classes keep their share.
pub fn split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::BadFraction(test_fraction));
    }
    if ds.is_empty() {
        return Err(DataError::Empty);
    }
    let n_test = (test_fraction * ds.n_samples() as f64).ceil() as usize;
    split_counts(ds, n_test, seed)
}

pub fn split_counts(ds: &Dataset, n_test: usize, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.n_classes()];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for (class, members) in by_class.iter().enumerate() {
        if !members.is_empty() && members.len() < 2 {
            return Err(DataError::ClassTooSmall {
                class,
                count: members.len(),
            });
        }
    }

    let n = ds.n_samples() as f64;
    let quotas: Vec<f64> = by_class
        .iter()
        .map(|m| m.len() as f64 * n_test as f64 / n)
        .collect();
    let mut take: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut remaining = n_test.saturating_sub(take.iter().sum());
    let mut order: Vec<usize> = (0..by_class.len()).collect();
    // Largest fractional part first; ties go to the lower class index.
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &c in order.iter().cycle().take(by_class.len() * 2) {
        if remaining == 0 {
            break;
        }
        if take[c] < by_class[c].len() {
            take[c] += 1;
            remaining -= 1;
        }
    }

    let mut rng = seeded(seed);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (members, &t) in by_class.iter_mut().zip(&take) {
        members.shuffle(&mut rng);
        test_idx.extend_from_slice(&members[..t]);
        train_idx.extend_from_slice(&members[t..]);
    }
    train_idx.shuffle(&mut rng);
    test_idx.shuffle(&mut rng);
    Ok((ds.subset(&train_idx), ds.subset(&test_idx)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn toy(values: Vec<f64>, labels: Vec<usize>, n_features: usize) -> Dataset {
        let n_classes = labels.iter().max().map_or(1, |m| m + 1);
        Dataset::new(
            "toy",
            (0..n_features).map(|i| format!("f{i}")).collect(),
            (0..n_classes).map(|c| c.to_string()).collect(),
            values,
            labels,
        )
        .unwrap()
    }

    #[test]
    fn csv_single_row() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "x,label\n3.5,a").unwrap();
        let ds = load_csv(f.path(), "label").unwrap();
        assert_eq!(ds.n_samples(), 1);
        assert_eq!(ds.n_features(), 1);
        assert_eq!(ds.sample(0), &[3.5]);
        assert_eq!(ds.class_names, vec!["a"]);
    }

    #[test]
    fn csv_errors() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "x,label\nfoo,a").unwrap();
        assert!(matches!(
            load_csv(f.path(), "label"),
            Err(DataError::NonNumeric { .. })
        ));
        assert!(matches!(
            load_csv(f.path(), "species"),
            Err(DataError::UnknownLabelColumn(_))
        ));
        assert!(matches!(
            load_csv("/definitely/not/here.csv", "label"),
            Err(DataError::Io { .. })
        ));
    }

    #[test]
    fn integer_labels_are_renumbered() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "x,y\n1,7\n2,3\n3,7").unwrap();
        let ds = load_csv(f.path(), "y").unwrap();
        assert_eq!(ds.labels(), &[1, 0, 1]);
        assert_eq!(ds.class_names, vec!["3", "7"]);
    }

    fn idx_bytes(n: u32, pixels: &[u8], labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
        let mut img = Vec::new();
        img.extend_from_slice(&IDX_IMAGES.to_be_bytes());
        img.extend_from_slice(&n.to_be_bytes());
        img.extend_from_slice(&28u32.to_be_bytes());
        img.extend_from_slice(&28u32.to_be_bytes());
        img.extend_from_slice(pixels);
        let mut lab = Vec::new();
        lab.extend_from_slice(&IDX_LABELS.to_be_bytes());
        lab.extend_from_slice(&n.to_be_bytes());
        lab.extend_from_slice(labels);
        (img, lab)
    }

    #[test]
    fn idx_single_image() {
        let mut pixels = vec![0u8; 784];
        pixels[3] = 255;
        let (img, lab) = idx_bytes(1, &pixels, &[7]);
        let ds = parse_idx(&img, &lab).unwrap();
        assert_eq!(ds.n_samples(), 1);
        assert_eq!(ds.n_features(), 784);
        assert_eq!(ds.label(0), 7);
        assert_eq!(ds.sample(0)[3], 255.0);
    }

    #[test]
    fn idx_truncated_and_bad_magic() {
        let (img, lab) = idx_bytes(2, &vec![0u8; 784 + 100], &[1, 2]);
        assert!(matches!(parse_idx(&img, &lab), Err(DataError::LengthMismatch(_))));
        let (img, lab) = idx_bytes(1, &vec![0u8; 784], &[1]);
        assert!(matches!(parse_idx(&lab, &img), Err(DataError::BadMagic { .. })));
        let (img, _) = idx_bytes(1, &vec![0u8; 784], &[1]);
        let (_, lab2) = idx_bytes(2, &[], &[1, 2]);
        assert!(matches!(parse_idx(&img, &lab2), Err(DataError::LengthMismatch(_))));
    }

    #[test]
    fn tabular_midpoint_and_clamp() {
        let train = toy(vec![2.0, 6.0], vec![0, 1], 1);
        let range = fit_range(&train);
        assert_eq!(range, vec![(2.0, 6.0)]);
        let test = toy(vec![4.0, 9.0, -5.0], vec![0, 1, 0], 1);
        let out = normalize(&test, NormalizeMode::Tabular(&range)).unwrap();
        assert_eq!(out.dataset.values(), &[0.0, 1.0, -1.0]);
        assert_eq!(out.dataset.feature_range, Some(vec![(2.0, 6.0)]));
    }

    #[test]
    fn pixel_scaling() {
        let ds = toy(vec![255.0, 0.0], vec![0, 1], 1);
        let out = normalize(&ds, NormalizeMode::Pixel).unwrap();
        assert_eq!(out.dataset.values(), &[1.0, 0.0]);
        let bad = toy(vec![256.0, 0.0], vec![0, 1], 1);
        assert!(matches!(normalize(&bad, NormalizeMode::Pixel), Err(DataError::PixelRange(_))));
    }

    #[test]
    fn degenerate_feature_maps_to_zero() {
        let ds = toy(vec![1.0, 5.0, 1.0, 7.0], vec![0, 1], 2);
        let range = fit_range(&ds);
        let out = normalize(&ds, NormalizeMode::Tabular(&range)).unwrap();
        assert_eq!(out.degenerate, vec![0]);
        assert_eq!(out.dataset.sample(0)[0], 0.0);
        assert_eq!(out.dataset.sample(1)[1], 1.0);
    }

    #[test]
    fn split_sizes_and_seed_dependence() {
        let labels: Vec<usize> = (0..150).map(|i| i / 50).collect();
        let ds = toy((0..150).map(f64::from).collect(), labels, 1);
        let (tr, te) = split(&ds, 0.2, 7).unwrap();
        assert_eq!((tr.n_samples(), te.n_samples()), (120, 30));
        assert_eq!(te.class_counts(), vec![10, 10, 10]);
        let (tr2, te2) = split(&ds, 0.2, 7).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(te, te2);
        let (_, te3) = split(&ds, 0.2, 8).unwrap();
        assert_eq!(te3.n_samples(), 30);
        assert_ne!(te.values(), te3.values());
    }

    #[test]
    fn split_wdbc_shape() {
        // 212 malignant / 357 benign, as in the diagnostic dataset.
        let labels: Vec<usize> = (0..569).map(|i| usize::from(i >= 212)).collect();
        let ds = toy((0..569).map(f64::from).collect(), labels, 1);
        let (tr, te) = split(&ds, 0.25, 1).unwrap();
        assert_eq!((tr.n_samples(), te.n_samples()), (426, 143));
    }

    #[test]
    fn split_rejects_singleton_class_and_bad_fraction() {
        let ds = toy(vec![0.0, 1.0, 2.0], vec![0, 0, 1], 1);
        assert!(matches!(split(&ds, 0.3, 0), Err(DataError::ClassTooSmall { class: 1, .. })));
        assert!(matches!(split(&ds, 1.0, 0), Err(DataError::BadFraction(_))));
    }
}
