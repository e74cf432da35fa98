//! Dataset container, CSV ingestion, and synthetic data generation.
//!
//! CSV layout: one sample per row as `label[,fine_label],f0,f1,...`. A header
//! line is optional; it is recognized by a non-numeric first cell and must
//! start with `label`. Fine labels (for the coarse-to-fine 1-NN protocol) are
//! present exactly when the header names a `fine_label` column; without a
//! header every column after the label is a feature.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::Prng;

/// Raw inputs with coarse labels, optional class names, and optional fine
/// labels riding in the same file.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    inputs: Matrix,
    labels: Vec<usize>,
    label_names: Option<Vec<String>>,
    fine_labels: Option<Vec<usize>>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(
        inputs: Matrix,
        labels: Vec<usize>,
        fine_labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} input rows vs {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if let Some(fine) = &fine_labels {
            if fine.len() != labels.len() {
                return Err(Error::Shape(format!(
                    "{} fine labels vs {} labels",
                    fine.len(),
                    labels.len()
                )));
            }
        }
        let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
        Ok(Self {
            inputs,
            labels,
            label_names: None,
            fine_labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_fine_classes(&self) -> Option<usize> {
        self.fine_labels
            .as_ref()
            .map(|f| f.iter().max().map_or(0, |&m| m + 1))
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn fine_labels(&self) -> Option<&[usize]> {
        self.fine_labels.as_deref()
    }

    pub fn label_names(&self) -> Option<&[String]> {
        self.label_names.as_deref()
    }

    /// Rows at the given indices, in order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Data(format!(
                "row {bad} out of range for dataset of {} rows",
                self.len()
            )));
        }
        // Keeps the original class count: a subset may miss classes.
        Ok(Self {
            inputs: self.inputs.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            label_names: self.label_names.clone(),
            fine_labels: self
                .fine_labels
                .as_ref()
                .map(|f| indices.iter().map(|&i| f[i]).collect()),
            num_classes: self.num_classes,
        })
    }

    /// Seeded shuffle followed by a (1-frac)/frac split into train and test.
    pub fn split(&self, test_frac: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&test_frac) {
            return Err(Error::Config(format!(
                "test fraction must be in [0,1), got {test_frac}"
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        Prng::seed_from_u64(seed).shuffle(&mut order);
        let test_len = (self.len() as f64 * test_frac).round() as usize;
        let (test_idx, train_idx) = order.split_at(test_len.min(self.len()));
        Ok((self.subset(train_idx)?, self.subset(test_idx)?))
    }
}

fn parse_cell<T: std::str::FromStr>(cell: &str, line: usize, what: &str) -> Result<T> {
    cell.trim()
        .parse::<T>()
        .map_err(|_| Error::Data(format!("line {line}: cannot parse {what} from '{cell}'")))
}

/// Load a dataset from the CSV layout described in the module docs.
pub fn load_csv(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_csv(&text)
}

pub fn parse_csv(text: &str) -> Result<LabeledDataset> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .peekable();

    let mut has_fine = false;
    if let Some(&(line_no, first)) = lines.peek() {
        let first_cell = first.split(',').next().unwrap_or("").trim();
        if first_cell.parse::<f64>().is_err() {
            // Header line.
            let cols: Vec<&str> = first.split(',').map(str::trim).collect();
            if cols.first() != Some(&"label") {
                return Err(Error::Data(format!(
                    "line {line_no}: header must start with 'label', got '{}'",
                    cols.first().unwrap_or(&"")
                )));
            }
            has_fine = cols.get(1) == Some(&"fine_label");
            lines.next();
        }
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut fine_labels = Vec::new();
    let mut width: Option<usize> = None;
    for (line_no, line) in lines {
        let cells: Vec<&str> = line.split(',').collect();
        let feature_start = if has_fine { 2 } else { 1 };
        if cells.len() <= feature_start {
            return Err(Error::Data(format!(
                "line {line_no}: expected at least {} columns, got {}",
                feature_start + 1,
                cells.len()
            )));
        }
        labels.push(parse_cell::<usize>(cells[0], line_no, "label")?);
        if has_fine {
            fine_labels.push(parse_cell::<usize>(cells[1], line_no, "fine label")?);
        }
        let features: Vec<f64> = cells[feature_start..]
            .iter()
            .map(|c| parse_cell::<f64>(c, line_no, "feature"))
            .collect::<Result<_>>()?;
        match width {
            None => width = Some(features.len()),
            Some(w) if w != features.len() => {
                return Err(Error::Data(format!(
                    "line {line_no}: ragged row with {} features, expected {w}",
                    features.len()
                )));
            }
            _ => {}
        }
        rows.push(features);
    }
    if rows.is_empty() {
        return Err(Error::Data("no data rows in file".into()));
    }
    let inputs = Matrix::from_rows(&rows)
        .map_err(|e| Error::Data(format!("invalid feature values: {e}")))?;
    LabeledDataset::new(inputs, labels, if has_fine { Some(fine_labels) } else { None })
}

/// Write the dataset in the same CSV layout `load_csv` reads.
pub fn save_csv(path: impl AsRef<Path>, dataset: &LabeledDataset) -> Result<()> {
    let mut out = String::new();
    let has_fine = dataset.fine_labels().is_some();
    out.push_str("label");
    if has_fine {
        out.push_str(",fine_label");
    }
    for j in 0..dataset.dim() {
        write!(out, ",f{j}").unwrap();
    }
    out.push('\n');
    for i in 0..dataset.len() {
        write!(out, "{}", dataset.labels()[i]).unwrap();
        if let Some(fine) = dataset.fine_labels() {
            write!(out, ",{}", fine[i]).unwrap();
        }
        for &v in dataset.inputs().row(i) {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    std::fs::write(path.as_ref(), out)?;
    Ok(())
}

/// Parameters for Gaussian-blob synthesis with multimodal, interleaved
/// classes.
///
/// The generator draws `subclusters` shared anchor directions; the center of
/// class c's subcluster g is the normalized sum of anchor g and a
/// class-specific offset scaled by `class_spread`. Every class therefore has
/// one tight mode near each anchor: class modes of different classes
/// interleave (class means nearly collide) while individual subclusters stay
/// separable, which is what makes the data multimodal rather than just
/// scattered. Points are center + sigma * per-coordinate Gaussian noise.
/// Fine label = class * subclusters + subcluster, so one file carries both
/// label granularities for the coarse-to-fine induction protocol.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub subclusters: usize,
    pub dim: usize,
    pub per_cluster: usize,
    pub sigma: f64,
    pub seed: u64,
    /// Scale of the class-specific offset against the shared anchor.
    pub class_spread: f64,
}

impl SyntheticSpec {
    pub const DEFAULT_CLASS_SPREAD: f64 = 0.4;
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    if spec.classes == 0 || spec.subclusters == 0 || spec.dim == 0 || spec.per_cluster == 0 {
        return Err(Error::Config(
            "classes, subclusters, dim, and per-cluster count must all be >= 1".into(),
        ));
    }
    if spec.sigma < 0.0 {
        return Err(Error::Config(format!("sigma must be >= 0, got {}", spec.sigma)));
    }
    if spec.class_spread <= 0.0 {
        return Err(Error::Config(format!(
            "class spread must be > 0, got {}",
            spec.class_spread
        )));
    }
    let mut rng = Prng::seed_from_u64(spec.seed);
    let anchors: Vec<Vec<f64>> = (0..spec.subclusters)
        .map(|_| rng.unit_vector(spec.dim))
        .collect();
    let mut centers = Vec::with_capacity(spec.classes * spec.subclusters);
    for _ in 0..spec.classes {
        for anchor in &anchors {
            let offset = rng.unit_vector(spec.dim);
            let mixed: Vec<f64> = anchor
                .iter()
                .zip(&offset)
                .map(|(&a, &o)| a + spec.class_spread * o)
                .collect();
            centers.push(crate::numerics::l2_normalize(&mixed).expect("mixed center is nonzero"));
        }
    }

    let mut rows = Vec::with_capacity(spec.classes * spec.subclusters * spec.per_cluster);
    let mut labels = Vec::with_capacity(rows.capacity());
    let mut fine = Vec::with_capacity(rows.capacity());
    for c in 0..spec.classes {
        for g in 0..spec.subclusters {
            let center = &centers[c * spec.subclusters + g];
            for _ in 0..spec.per_cluster {
                let point: Vec<f64> = center
                    .iter()
                    .map(|&x| x + spec.sigma * rng.gaussian())
                    .collect();
                rows.push(point);
                labels.push(c);
                fine.push(c * spec.subclusters + g);
            }
        }
    }
    LabeledDataset::new(Matrix::from_rows(&rows)?, labels, Some(fine))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_headerless_two_sample_file() {
        let ds = parse_csv("0,1.0,2.0\n1,3.0,4.0").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.num_classes(), 2);
        assert!(ds.fine_labels().is_none());
        assert_eq!(ds.inputs().row(1), &[3.0, 4.0]);
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(parse_csv(""), Err(Error::Data(_))));
        assert!(matches!(parse_csv("label,f0\n"), Err(Error::Data(_))));
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let err = parse_csv("0,1.0\n1,abc\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = parse_csv("0,1.0,2.0\n1,3.0\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn header_with_fine_labels_round_trips() {
        let dir = std::env::temp_dir().join("dnc_dataset_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("round_trip.csv");
        let ds = gen_synthetic(&SyntheticSpec {
            classes: 3,
            subclusters: 2,
            dim: 4,
            per_cluster: 5,
            sigma: 0.1,
            seed: 7,
            class_spread: SyntheticSpec::DEFAULT_CLASS_SPREAD,
        })
        .unwrap();
        save_csv(&path, &ds).unwrap();
        let loaded = load_csv(&path).unwrap();
        assert_eq!(ds, loaded);
    }

    #[test]
    fn synthetic_zero_sigma_repeats_centers() {
        let spec = SyntheticSpec {
            classes: 2,
            subclusters: 2,
            dim: 3,
            per_cluster: 4,
            sigma: 0.0,
            seed: 1,
            class_spread: SyntheticSpec::DEFAULT_CLASS_SPREAD,
        };
        let ds = gen_synthetic(&spec).unwrap();
        for g in 0..4usize {
            let base = ds.inputs().row(g * 4).to_vec();
            for i in 0..4 {
                assert_eq!(ds.inputs().row(g * 4 + i), base.as_slice());
            }
        }
    }

    #[test]
    fn synthetic_is_deterministic_and_fine_labels_flatten() {
        let spec = SyntheticSpec {
            classes: 2,
            subclusters: 3,
            dim: 4,
            per_cluster: 2,
            sigma: 0.2,
            seed: 5,
            class_spread: SyntheticSpec::DEFAULT_CLASS_SPREAD,
        };
        let a = gen_synthetic(&spec).unwrap();
        let b = gen_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_fine_classes(), Some(6));
        for i in 0..a.len() {
            assert_eq!(a.fine_labels().unwrap()[i] / 3, a.labels()[i]);
        }
    }

    #[test]
    fn single_subcluster_fine_equals_coarse() {
        let ds = gen_synthetic(&SyntheticSpec {
            classes: 3,
            subclusters: 1,
            dim: 2,
            per_cluster: 3,
            sigma: 0.1,
            seed: 2,
            class_spread: SyntheticSpec::DEFAULT_CLASS_SPREAD,
        })
        .unwrap();
        assert_eq!(ds.fine_labels().unwrap(), ds.labels());
    }

    #[test]
    fn split_partitions_and_respects_fraction() {
        let ds = gen_synthetic(&SyntheticSpec {
            classes: 2,
            subclusters: 2,
            dim: 3,
            per_cluster: 25,
            sigma: 0.1,
            seed: 3,
            class_spread: SyntheticSpec::DEFAULT_CLASS_SPREAD,
        })
        .unwrap();
        let (train, test) = ds.split(0.2, 11).unwrap();
        assert_eq!(train.len() + test.len(), ds.len());
        assert_eq!(test.len(), 20);
        // Deterministic for the same seed.
        let (train2, _) = ds.split(0.2, 11).unwrap();
        assert_eq!(train, train2);
    }
}
