use std::path::{Path, PathBuf};

use super::{Dataset, DatasetMeta};
use crate::error::{Error, Result};

/// Read named response and feature columns from a headered CSV file.
pub fn load_table(
    path: impl AsRef<Path>,
    response_cols: &[String],
    feature_cols: &[String],
) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &String| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn {
                path: path.to_path_buf(),
                column: name.clone(),
            })
    };
    let y_idx = response_cols.iter().map(find).collect::<Result<Vec<_>>>()?;
    let x_idx = feature_cols.iter().map(find).collect::<Result<Vec<_>>>()?;
    let mut y = Vec::new();
    let mut x = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let parse = |idx: &[usize], names: &[String]| -> Result<Vec<f64>> {
            idx.iter()
                .zip(names)
                .map(|(&c, name)| {
                    let cell = record.get(c).unwrap_or("").trim();
                    cell.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::BadCell {
                            row: row + 1,
                            column: name.clone(),
                            value: cell.to_string(),
                        })
                })
                .collect()
        };
        y.push(parse(&y_idx, response_cols)?);
        x.push(parse(&x_idx, feature_cols)?);
    }
    let mut ds = Dataset::new(y, x)?;
    ds.meta.response_names = response_cols.to_vec();
    ds.meta.feature_names = feature_cols.to_vec();
    ds.meta.source = Some(path.display().to_string());
    Ok(ds)
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Write the rows as CSV and the metadata as a JSON sidecar next to it.
pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path)?;
    let header: Vec<&str> = ds
        .meta
        .response_names
        .iter()
        .chain(&ds.meta.feature_names)
        .map(String::as_str)
        .collect();
    writer.write_record(&header)?;
    for (y, x) in ds.y.iter().zip(&ds.x) {
        // `{:?}` prints the shortest representation that parses back exactly
        let cells: Vec<String> = y.iter().chain(x).map(|v| format!("{v:?}")).collect();
        writer.write_record(&cells)?;
    }
    writer.flush()?;
    std::fs::write(sidecar(path), serde_json::to_string_pretty(&ds.meta)?)?;
    Ok(())
}

/// Read a dataset written by [`write_dataset`].
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(sidecar(path))?)?;
    let mut ds = load_table(path, &meta.response_names, &meta.feature_names)?;
    ds.meta = meta;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_column_and_bad_cell() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        std::fs::write(&p, "a,b\n1,2\n3,oops\n").unwrap();
        let err = load_table(&p, &["a".into(), "c".into()], &[]).unwrap_err();
        assert!(matches!(err, Error::MissingColumn { ref column, .. } if column == "c"));
        let err = load_table(&p, &["b".into()], &[]).unwrap_err();
        assert!(
            matches!(err, Error::BadCell { row: 2, ref column, ref value } if column == "b" && value == "oops")
        );
    }
}
