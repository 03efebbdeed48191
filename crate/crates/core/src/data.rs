//! Numeric containers and dataset ingestion.
//!
//! Points are stored column-major: a [`Dataset`] with `D` features and `n`
//! samples is a `D x n` matrix whose columns are the samples, so each solver
//! touches one contiguous slice per point.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::warn;
use nalgebra::DMatrix;

use crate::error::{FscError, Result};
use crate::metrics::ClusteringResult;

/// Columns at or below this norm are treated as zero.
pub const EPS_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: DMatrix<f64>,
    labels: Option<Vec<usize>>,
    pub id: Option<String>,
}

impl Dataset {
    /// Builds a dataset from a `D x n` matrix and optional dense labels.
    pub fn new(points: DMatrix<f64>, labels: Option<Vec<usize>>) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(FscError::Empty);
        }
        if let Some((i, v)) = points.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(FscError::NonFinite {
                row: i % points.nrows(),
                column: i / points.nrows(),
                value: v.to_string(),
            });
        }
        if let Some(l) = &labels {
            if l.len() != points.ncols() {
                return Err(FscError::DimensionMismatch(format!(
                    "{} labels for {} points",
                    l.len(),
                    points.ncols()
                )));
            }
        }
        Ok(Dataset {
            points,
            labels,
            id: None,
        })
    }

    /// Builds a dataset from sample vectors (one per point).
    pub fn from_samples(samples: &[Vec<f64>], labels: Option<Vec<usize>>) -> Result<Self> {
        let n = samples.len();
        if n == 0 {
            return Err(FscError::Empty);
        }
        let d = samples[0].len();
        if let Some((row, s)) = samples.iter().enumerate().find(|(_, s)| s.len() != d) {
            return Err(FscError::Ragged {
                row,
                expected: d,
                found: s.len(),
            });
        }
        let flat: Vec<f64> = samples.iter().flatten().copied().collect();
        Dataset::new(DMatrix::from_vec(d, n, flat), labels)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    /// Ambient dimension `D`.
    pub fn dim(&self) -> usize {
        self.points.nrows()
    }

    /// Number of points `n`.
    pub fn len(&self) -> usize {
        self.points.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.points.ncols() == 0
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Number of distinct ground-truth clusters (`max label + 1`).
    pub fn num_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().copied().max().map_or(0, |m| m + 1))
    }

    /// Sample `j` as a contiguous slice of length `D`.
    pub fn column(&self, j: usize) -> &[f64] {
        let d = self.dim();
        &self.points.as_slice()[j * d..(j + 1) * d]
    }

    pub fn columns(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.points.as_slice().chunks_exact(self.dim())
    }
}

/// Which CSV column, if any, carries ground-truth labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
    Last,
}

impl std::str::FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "last" => LabelColumn::Last,
            _ => match s.parse::<usize>() {
                Ok(i) => LabelColumn::Index(i),
                Err(_) => LabelColumn::Name(s.to_string()),
            },
        })
    }
}

/// Reads a CSV with one sample per row.
///
/// Row and column numbers in errors are 1-based line numbers in the file and
/// 0-based field indices. Integer labels are remapped to `0..K` in ascending
/// order of their original values.
pub fn load_csv(
    path: impl AsRef<Path>,
    has_header: bool,
    label_column: Option<&LabelColumn>,
) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| FscError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let headers = if has_header {
        Some(reader.headers()?.clone())
    } else {
        None
    };

    let mut width = None;
    let mut label_idx = None;
    let mut flat = Vec::new();
    let mut raw_labels = Vec::new();
    let mut n = 0;

    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 1 + usize::from(has_header);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(FscError::Ragged {
                row: line,
                expected,
                found: record.len(),
            });
        }
        if label_idx.is_none() {
            label_idx = Some(match label_column {
                None => None,
                Some(LabelColumn::Last) => Some(expected - 1),
                Some(LabelColumn::Index(c)) if *c < expected => Some(*c),
                Some(LabelColumn::Index(c)) => {
                    return Err(FscError::MissingLabelColumn(c.to_string()))
                }
                Some(LabelColumn::Name(name)) => Some(
                    headers
                        .as_ref()
                        .and_then(|h| h.iter().position(|f| f == name))
                        .ok_or_else(|| FscError::MissingLabelColumn(name.clone()))?,
                ),
            });
        }
        let label_idx = label_idx.flatten();

        for (c, cell) in record.iter().enumerate() {
            if Some(c) == label_idx {
                let v = cell.parse::<i64>().map_err(|_| FscError::BadLabel {
                    row: line,
                    value: cell.to_string(),
                })?;
                raw_labels.push(v);
                continue;
            }
            let v = cell.parse::<f64>().map_err(|_| FscError::Parse {
                row: line,
                column: c,
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(FscError::NonFinite {
                    row: line,
                    column: c,
                    value: cell.to_string(),
                });
            }
            flat.push(v);
        }
        n += 1;
    }

    if n == 0 {
        return Err(FscError::Empty);
    }
    let d = flat.len() / n;
    let labels = label_idx.flatten().map(|_| densify_labels(&raw_labels));
    let data = Dataset::new(DMatrix::from_vec(d, n, flat), labels)?;
    Ok(data.with_id(path.display().to_string()))
}

fn densify_labels(raw: &[i64]) -> Vec<usize> {
    let distinct: Vec<i64> = raw.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    raw.iter()
        .map(|v| distinct.binary_search(v).expect("value is present"))
        .collect()
}

/// Writes the samples (one per row) with 17 significant digits, optionally
/// followed by a `label` column.
pub fn save_csv(data: &Dataset, path: impl AsRef<Path>, with_header: bool) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| FscError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let labels = data.labels();
    let io = |e| FscError::io(path, e);

    if with_header {
        let mut names: Vec<String> = (0..data.dim()).map(|i| format!("x{i}")).collect();
        if labels.is_some() {
            names.push("label".into());
        }
        writeln!(out, "{}", names.join(",")).map_err(io)?;
    }
    for (j, col) in data.columns().enumerate() {
        let mut line = col
            .iter()
            .map(|v| format!("{v:.16e}"))
            .collect::<Vec<_>>()
            .join(",");
        if let Some(l) = labels {
            line.push(',');
            line.push_str(&l[j].to_string());
        }
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Scales every column with norm above [`EPS_NORM`] to unit length.
///
/// Returns the normalized dataset and the number of columns left untouched
/// because they were numerically zero.
pub fn normalize_columns(data: &Dataset) -> (Dataset, usize) {
    let mut points = data.points.clone();
    let mut zero = 0;
    for mut col in points.column_iter_mut() {
        let norm = col.norm();
        if norm > EPS_NORM {
            col /= norm;
        } else {
            zero += 1;
        }
    }
    if zero > 0 {
        warn!("{zero} column(s) with norm <= {EPS_NORM:e} left unnormalized");
    }
    let out = Dataset {
        points,
        labels: data.labels.clone(),
        id: data.id.clone(),
    };
    (out, zero)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResultFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ResultFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ResultFormat::Csv),
            "json" => Ok(ResultFormat::Json),
            _ => Err(format!("unknown result format {s:?}")),
        }
    }
}

/// Writes a clustering result as `index,label` rows or as a JSON document.
pub fn save_result(result: &ClusteringResult, path: impl AsRef<Path>, format: ResultFormat) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| FscError::io(path, e))?;
    let mut out = BufWriter::new(file);
    match format {
        ResultFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(["index", "label"])?;
            for (i, l) in result.labels.iter().enumerate() {
                w.write_record([i.to_string(), l.to_string()])?;
            }
            w.flush().map_err(|e| FscError::io(path, e))?;
        }
        ResultFormat::Json => {
            serde_json::to_writer_pretty(&mut out, result)?;
            writeln!(out).map_err(|e| FscError::io(path, e))?;
            out.flush().map_err(|e| FscError::io(path, e))?;
        }
    }
    Ok(())
}

/// Reads back the labels written by [`save_result`].
pub fn load_result_labels(path: impl AsRef<Path>, format: ResultFormat) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| FscError::io(path, e))?;
    match format {
        ResultFormat::Csv => {
            let mut r = csv::Reader::from_reader(file);
            r.records()
                .enumerate()
                .map(|(i, rec)| {
                    let rec = rec?;
                    rec.get(1)
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| FscError::BadLabel {
                            row: i + 2,
                            value: rec.get(1).unwrap_or_default().to_string(),
                        })
                })
                .collect()
        }
        ResultFormat::Json => {
            let result: ClusteringResult = serde_json::from_reader(file)?;
            Ok(result.labels)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_shape() {
        let f = write_tmp("1,2,3\n4,5,6\n7,8,9\n10,11,12\n");
        let d = load_csv(f.path(), false, None).unwrap();
        assert_eq!((d.dim(), d.len()), (3, 4));
        assert_eq!(d.column(1), &[4.0, 5.0, 6.0]);
        assert!(d.labels().is_none());
    }

    #[test]
    fn csv_label_column_last() {
        let f = write_tmp("1,2,0\n4,5,1\n7,8,1\n10,11,0\n");
        let d = load_csv(f.path(), false, Some(&LabelColumn::Last)).unwrap();
        assert_eq!((d.dim(), d.len()), (2, 4));
        assert_eq!(d.labels().unwrap(), &[0, 1, 1, 0]);
    }

    #[test]
    fn csv_label_by_name_is_densified() {
        let f = write_tmp("digit,a,b\n7,1,2\n2,3,4\n9,5,6\n");
        let d = load_csv(f.path(), true, Some(&LabelColumn::Name("digit".into()))).unwrap();
        assert_eq!(d.dim(), 2);
        assert_eq!(d.labels().unwrap(), &[1, 0, 2]);
        assert_eq!(d.column(0), &[1.0, 2.0]);
    }

    #[test]
    fn csv_nan_is_rejected_with_location() {
        let f = write_tmp("1,2\n3,NaN\n");
        match load_csv(f.path(), false, None) {
            Err(FscError::NonFinite { row, column, .. }) => assert_eq!((row, column), (2, 1)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_errors() {
        let f = write_tmp("1,2\n3\n");
        assert!(matches!(load_csv(f.path(), false, None), Err(FscError::Ragged { row: 2, .. })));
        let f = write_tmp("1,2\n3,x\n");
        assert!(matches!(
            load_csv(f.path(), false, None),
            Err(FscError::Parse { row: 2, column: 1, .. })
        ));
        let f = write_tmp("1,2,0.5\n");
        assert!(matches!(
            load_csv(f.path(), false, Some(&LabelColumn::Last)),
            Err(FscError::BadLabel { row: 1, .. })
        ));
    }

    #[test]
    fn normalize_examples() {
        let d = Dataset::from_samples(&[vec![3.0, 4.0], vec![0.0, 0.0]], None).unwrap();
        let (n, zero) = normalize_columns(&d);
        assert_eq!(zero, 1);
        assert!((n.column(0)[0] - 0.6).abs() < 1e-15);
        assert!((n.column(0)[1] - 0.8).abs() < 1e-15);
        assert_eq!(n.column(1), &[0.0, 0.0]);
    }

    #[test]
    fn normalize_unit_columns_unchanged() {
        let d = Dataset::from_samples(&[vec![1.0, 0.0], vec![0.6, 0.8]], None).unwrap();
        let (n, _) = normalize_columns(&d);
        for (a, b) in n.points().iter().zip(d.points().iter()) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn feature_csv_round_trip_is_bit_exact() {
        let samples = vec![
            vec![0.1, -1.0 / 3.0, 1e-300],
            vec![std::f64::consts::PI, 123456789.123456789, -0.0],
        ];
        let d = Dataset::from_samples(&samples, Some(vec![1, 0])).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_csv(&d, f.path(), true).unwrap();
        let back = load_csv(f.path(), true, Some(&LabelColumn::Name("label".into()))).unwrap();
        for (a, b) in d.points().iter().zip(back.points().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.labels(), d.labels());
    }
}
