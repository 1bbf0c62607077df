//! CSV ingestion and export for datasets.
//!
//! Format: one header row; every column except the named label column is a
//! numeric feature (taken in header order). Label values may be arbitrary
//! strings; they are re-indexed densely to [0, C) by lexicographic order of
//! the distinct values, which keeps class ids deterministic across loads.
//! Context flags are not serialized — the probe re-derives markers from its
//! own seed.

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

use super::Dataset;

/// Load a dataset from CSV, treating `label_column` as the class column and
/// every other column as an fp64 feature.
pub fn load_csv(path: &Path, label_column: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let label_pos = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| {
            Error::Config(format!(
                "label column {label_column:?} not found in header {:?}",
                headers.iter().collect::<Vec<_>>()
            ))
        })?;
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&i| i != label_pos).collect();
    if feature_cols.is_empty() {
        return Err(Error::Config("CSV has no feature columns".into()));
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // 1-based, after the header row
        let record = record.map_err(|e| Error::Parse { line, detail: e.to_string() })?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                line,
                detail: format!("expected {} fields, got {}", headers.len(), record.len()),
            });
        }
        let mut row = Vec::with_capacity(feature_cols.len());
        for &col in &feature_cols {
            let field = &record[col];
            let value: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                detail: format!("non-numeric feature {field:?} in column {:?}", &headers[col]),
            })?;
            row.push(value);
        }
        rows.push(row);
        raw_labels.push(record[label_pos].to_string());
    }
    if rows.is_empty() {
        return Err(Error::Parse { line: 2, detail: "CSV contains no data rows".into() });
    }

    // Dense re-index: distinct label strings sorted lexicographically.
    let mut distinct: Vec<String> = raw_labels.clone();
    distinct.sort();
    distinct.dedup();
    let labels: Vec<usize> = raw_labels
        .iter()
        .map(|l| distinct.binary_search(l).expect("present by construction"))
        .collect();

    let dims = feature_cols.len();
    let mut inputs = Array2::zeros((rows.len(), dims));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            inputs[[i, j]] = v;
        }
    }
    Dataset::new(inputs, labels, distinct.len(), None)
}

/// Write a dataset as CSV with columns `f0..f{dims-1}` and `label`. Feature
/// values use Rust's shortest round-trip float formatting, so a
/// save-then-load cycle reproduces them exactly.
pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..dataset.dims()).map(|j| format!("f{j}")).collect();
    header.push("label".to_string());
    writer.write_record(&header)?;
    for i in 0..dataset.len() {
        let mut record: Vec<String> = dataset
            .inputs
            .row(i)
            .iter()
            .map(|v| format!("{v}"))
            .collect();
        record.push(dataset.labels[i].to_string());
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::gen_gaussian_mixture;
    use ndarray::array;
    use std::io::Write;

    fn write_file(dir: &tempfile::TempDir, name: &str, content: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    #[test]
    fn hand_written_rows_load_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            &dir,
            "tiny.csv",
            "x,y,label\n1.5,-2.0,cat\n0.25,3.75,dog\n-1.0,0.0,cat\n",
        );
        let ds = load_csv(&path, "label").unwrap();
        assert_eq!(ds.inputs, array![[1.5, -2.0], [0.25, 3.75], [-1.0, 0.0]]);
        // "cat" < "dog" lexicographically → cat = 0, dog = 1.
        assert_eq!(ds.labels, vec![0, 1, 0]);
        assert_eq!(ds.num_classes, 2);
    }

    #[test]
    fn label_column_position_does_not_matter() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "mid.csv", "a,label,b\n1.0,x,2.0\n3.0,y,4.0\n");
        let ds = load_csv(&path, "label").unwrap();
        assert_eq!(ds.inputs, array![[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(ds.labels, vec![0, 1]);
    }

    #[test]
    fn empty_file_and_header_only_are_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let empty = write_file(&dir, "empty.csv", "");
        assert!(load_csv(&empty, "label").is_err());
        let header_only = write_file(&dir, "header.csv", "x,label\n");
        let err = load_csv(&header_only, "label").unwrap_err();
        assert!(err.to_string().contains("no data rows"), "got: {err}");
    }

    #[test]
    fn non_numeric_feature_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "bad.csv", "x,label\n1.0,a\noops,b\n");
        let err = load_csv(&path, "label").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3") && msg.contains("oops"), "got: {msg}");
    }

    #[test]
    fn missing_label_column_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "nolabel.csv", "x,y\n1.0,2.0\n");
        let err = load_csv(&path, "label").unwrap_err();
        assert!(err.to_string().contains("label"));
    }

    #[test]
    fn ragged_row_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "ragged.csv", "x,y,label\n1.0,2.0,a\n1.0,b\n");
        let err = load_csv(&path, "label").unwrap_err();
        assert!(err.to_string().contains("line 3"), "got: {err}");
    }

    #[test]
    fn generated_mixture_round_trips_exactly() {
        let ds = gen_gaussian_mixture(3, 4, 20, 0.7, 33).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mix.csv");
        save_csv(&ds, &path).unwrap();
        let loaded = load_csv(&path, "label").unwrap();
        // Shortest round-trip formatting makes the reload bit-exact.
        assert_eq!(loaded.inputs, ds.inputs);
        assert_eq!(loaded.labels, ds.labels);
        assert_eq!(loaded.num_classes, ds.num_classes);
    }

    #[test]
    fn numeric_label_strings_reindex_densely() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "nums.csv", "x,label\n1.0,7\n2.0,3\n3.0,7\n");
        let ds = load_csv(&path, "label").unwrap();
        // "3" < "7" lexicographically → 3 ↦ 0, 7 ↦ 1.
        assert_eq!(ds.labels, vec![1, 0, 1]);
        assert_eq!(ds.num_classes, 2);
    }
}
