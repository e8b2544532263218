use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stats::{mean, sample_std};
use crate::error::{Error, Result};

/// One trained model's test NLL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub model: String,
    pub dataset: String,
    pub conditional: bool,
    pub seed: u64,
    pub test_nll: f64,
}

/// Aggregate of one (model, dataset, conditional) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialCell {
    pub model: String,
    pub dataset: String,
    pub conditional: bool,
    pub trials: usize,
    pub mean: f64,
    /// Two sample standard deviations over seeds.
    pub spread: f64,
}

/// Raw per-seed results; every aggregate is recomputed from these rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialTable {
    pub rows: Vec<TrialRow>,
}

type CellKey = (String, String, bool);

impl TrialTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: TrialRow) {
        self.rows.push(row);
    }

    fn groups(&self) -> (Vec<CellKey>, BTreeMap<CellKey, Vec<f64>>) {
        let mut order = Vec::new();
        let mut map: BTreeMap<CellKey, Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            let key = (r.model.clone(), r.dataset.clone(), r.conditional);
            let entry = map.entry(key.clone()).or_default();
            if entry.is_empty() {
                order.push(key);
            }
            entry.push(r.test_nll);
        }
        (order, map)
    }

    /// Cells in order of first appearance.
    pub fn cells(&self) -> Vec<TrialCell> {
        let (order, map) = self.groups();
        order
            .into_iter()
            .map(|key| {
                let v = &map[&key];
                TrialCell {
                    model: key.0,
                    dataset: key.1,
                    conditional: key.2,
                    trials: v.len(),
                    mean: mean(v),
                    spread: 2.0 * sample_std(v),
                }
            })
            .collect()
    }

    pub fn cell(&self, model: &str, dataset: &str, conditional: bool) -> Option<TrialCell> {
        self.cells()
            .into_iter()
            .find(|c| c.model == model && c.dataset == dataset && c.conditional == conditional)
    }

    pub fn write_raw_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_raw_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<TrialRow>, _>>()?;
        Ok(TrialTable { rows })
    }

    /// Wide summary: one row per model, one `mean ± spread` column per
    /// dataset and conditioning mode.
    pub fn summary_csv(&self) -> Result<String> {
        let cells = self.cells();
        let mut models: Vec<&str> = Vec::new();
        let mut columns: Vec<(&str, bool)> = Vec::new();
        for c in &cells {
            if !models.contains(&c.model.as_str()) {
                models.push(&c.model);
            }
            if !columns.contains(&(c.dataset.as_str(), c.conditional)) {
                columns.push((&c.dataset, c.conditional));
            }
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["model".to_string()];
        header.extend(columns.iter().map(|(d, cond)| {
            format!(
                "{d} {}",
                if *cond {
                    "conditional"
                } else {
                    "unconditional"
                }
            )
        }));
        w.write_record(&header)?;
        for m in models {
            let mut rec = vec![m.to_string()];
            for (d, cond) in &columns {
                rec.push(
                    cells
                        .iter()
                        .find(|c| c.model == m && c.dataset == *d && c.conditional == *cond)
                        .map(|c| format!("{:.3} ± {:.3}", c.mean, c.spread))
                        .unwrap_or_default(),
                );
            }
            w.write_record(&rec)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Build a table from `(model, dataset, conditional, seed, nll)` results.
pub fn nll_table<I>(runs: I) -> TrialTable
where
    I: IntoIterator<Item = TrialRow>,
{
    TrialTable {
        rows: runs.into_iter().collect(),
    }
}
