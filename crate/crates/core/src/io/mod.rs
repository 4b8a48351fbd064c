//! Data ingestion, run configuration, and result serialization.

pub mod config;
pub mod idx;
pub mod report;
pub mod synthetic;

use std::path::PathBuf;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use config::{parse_run_config, RunConfig};
pub use idx::{parse_idx, IdxTensor};
pub use report::{dump_trajectory_csv, read_trajectory_csv, write_report, RunReport};
pub use synthetic::{far_field, two_moons};

/// Provenance of a data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub source: Option<PathBuf>,
    pub normalization: String,
    /// Rows kept after subsampling, if any was applied.
    pub subsampled_from: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, meta: DatasetMeta) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::data(format!(
                "{}: {} feature rows but {} labels",
                meta.name,
                features.nrows(),
                labels.len()
            )));
        }
        Ok(Self {
            features,
            labels,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// One more than the largest label.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn check_labels(&self, classes: usize) -> Result<()> {
        if let Some((i, y)) = self.labels.iter().enumerate().find(|(_, &y)| y >= classes) {
            return Err(Error::data(format!(
                "{}: label {y} at row {i} outside [0, {classes})",
                self.meta.name
            )));
        }
        Ok(())
    }

    /// Keeps a seeded random subset of `n` rows (in original order).
    pub fn subsample(self, n: usize, seed: u64) -> Self {
        let total = self.len();
        if n >= total {
            return self;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, total, n).into_vec();
        idx.sort_unstable();
        let features = self.features.select(Axis(0), &idx);
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        Self {
            features,
            labels,
            meta: DatasetMeta {
                subsampled_from: Some(total),
                ..self.meta
            },
        }
    }
}

/// Reads a CSV of numeric columns whose last column is an integer class label.
pub fn read_csv_dataset(path: &std::path::Path) -> Result<Dataset> {
    let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (features, labels) = parse_csv_table(&text, true).map_err(|err| Error::Format {
        source_name: path.display().to_string(),
        err,
    })?;
    Dataset::new(
        features,
        labels.expect("label column requested"),
        DatasetMeta {
            name: path
                .file_stem()
                .map_or_else(String::new, |s| s.to_string_lossy().into_owned()),
            source: Some(path.to_path_buf()),
            normalization: "none".into(),
            subsampled_from: None,
        },
    )
}

/// Reads a headerless numeric CSV with no label column (e.g. an OOD input set).
pub fn read_csv_features(path: &std::path::Path) -> Result<Array2<f64>> {
    let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_csv_table(&text, false)
        .map(|(f, _)| f)
        .map_err(|err| Error::Format {
            source_name: path.display().to_string(),
            err,
        })
}

type Table = (Array2<f64>, Option<Vec<usize>>);

fn parse_csv_table(
    bytes: &[u8],
    labelled: bool,
) -> std::result::Result<Table, crate::error::FormatError> {
    use crate::error::{FormatError, FormatErrorKind};
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(bytes);
    let mut rows: Vec<f64> = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let off = e.position().map_or(0, |p| p.byte() as usize);
            FormatError::new(off, FormatErrorKind::Malformed(e.to_string()))
        })?;
        let off = rec.position().map_or(0, |p| p.byte() as usize);
        let bad = |msg: String| FormatError::new(off, FormatErrorKind::Malformed(msg));
        let ncols = rec.len() - usize::from(labelled);
        if ncols == 0 {
            return Err(bad("record has no feature columns".into()));
        }
        if *width.get_or_insert(ncols) != ncols {
            return Err(bad(format!(
                "record has {ncols} feature columns, expected {}",
                width.unwrap_or(0)
            )));
        }
        for field in rec.iter().take(ncols) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| bad(format!("not a number: {field:?}")))?;
            rows.push(v);
        }
        if labelled {
            let field = rec.get(ncols).unwrap_or_default().trim();
            labels.push(
                field
                    .parse::<usize>()
                    .map_err(|_| bad(format!("not a class label: {field:?}")))?,
            );
        }
    }
    let width = width.unwrap_or(0);
    let n = rows.len().checked_div(width).unwrap_or(0);
    let features = Array2::from_shape_vec((n, width), rows).expect("rectangular table");
    Ok((features, labelled.then_some(labels)))
}
