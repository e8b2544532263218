//! Datasets: synthetic generators, CSV ingestion, preprocessing and splits.

mod preprocess;
mod synthetic;
mod table;

pub use preprocess::{geometric_sd, Preprocess, Standardization, MOONS_REFERENCE_SD};
pub use synthetic::{
    circles_point, gen_circles, gen_moons, moons_point, Generator, DEFAULT_INNER_FACTOR,
    DEFAULT_NOISE,
};
pub use table::{load_table, read_dataset, write_dataset};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seed offset of the independent test draw of a synthetic benchmark.
pub const TEST_SEED_OFFSET: u64 = 1_000_003;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub response_names: Vec<String>,
    pub feature_names: Vec<String>,
    pub generator: Option<Generator>,
    pub seed: Option<u64>,
    pub standardization: Option<Standardization>,
    pub source: Option<String>,
}

/// Rows of responses `y ∈ R^J` and features `x ∈ R^U` (`U` may be 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub y: Vec<Vec<f64>>,
    pub x: Vec<Vec<f64>>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(y: Vec<Vec<f64>>, x: Vec<Vec<f64>>) -> Result<Self> {
        if y.len() != x.len() {
            return Err(Error::DimensionMismatch {
                expected: y.len(),
                got: x.len(),
                context: "feature rows",
            });
        }
        let j = y.first().map_or(0, Vec::len);
        let u = x.first().map_or(0, Vec::len);
        for (row, (yr, xr)) in y.iter().zip(&x).enumerate() {
            if yr.len() != j || xr.len() != u {
                return Err(Error::InvalidParameter(format!(
                    "row {row} has a ragged shape"
                )));
            }
            if yr.iter().chain(xr).any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "row {row} has a non-finite value"
                )));
            }
        }
        let meta = DatasetMeta {
            response_names: (1..=j).map(|i| format!("y{i}")).collect(),
            feature_names: (1..=u).map(|i| format!("x{i}")).collect(),
            ..Default::default()
        };
        Ok(Dataset { y, x, meta })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.y
            .first()
            .map_or(self.meta.response_names.len(), Vec::len)
    }

    pub fn features(&self) -> usize {
        self.x
            .first()
            .map_or(self.meta.feature_names.len(), Vec::len)
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            y: idx.iter().map(|&i| self.y[i].clone()).collect(),
            x: idx.iter().map(|&i| self.x[i].clone()).collect(),
            meta: self.meta.clone(),
        }
    }

    /// Drop the features, keeping the responses.
    pub fn without_features(&self) -> Dataset {
        let mut meta = self.meta.clone();
        meta.feature_names.clear();
        Dataset {
            y: self.y.clone(),
            x: vec![Vec::new(); self.len()],
            meta,
        }
    }

    /// Seeded shuffle; the trailing `val_fraction` of rows is the validation set.
    pub fn split(&self, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(val_fraction > 0.0 && val_fraction < 1.0) {
            return Err(Error::config(
                "val_fraction",
                format!("must lie in (0, 1), got {val_fraction}"),
            ));
        }
        let n = self.len();
        let n_val = ((n as f64) * val_fraction).round() as usize;
        if n_val == 0 || n_val == n {
            return Err(Error::config(
                "val_fraction",
                format!("{n} rows cannot be split with fraction {val_fraction}"),
            ));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (train, val) = idx.split_at(n - n_val);
        Ok((self.subset(train), self.subset(val)))
    }

    /// Apply a fitted preprocessing transform to the responses.
    pub fn transformed(&self, s: &Standardization) -> Result<Dataset> {
        let mut out = self.clone();
        out.y = self.y.iter().map(|r| s.apply(r)).collect::<Result<_>>()?;
        out.meta.standardization = Some(s.clone());
        Ok(out)
    }

    /// Undo the recorded preprocessing.
    pub fn restored(&self) -> Result<Dataset> {
        let mut out = self.clone();
        if let Some(s) = &self.meta.standardization {
            out.y = self.y.iter().map(|r| s.invert(r)).collect::<Result<_>>()?;
            out.meta.standardization = None;
        }
        Ok(out)
    }
}

/// Fit `method` on the responses of `ds` and apply it.
pub fn standardize(ds: &Dataset, method: Preprocess) -> Result<Dataset> {
    let s = Standardization::fit(&ds.y, method)?;
    ds.transformed(&s)
}

/// A synthetic benchmark: a training draw (to be split into train and
/// validation) and an independent test draw, preprocessed with the transform
/// fitted on the training draw.
pub fn benchmark(gen: &Generator, seed: u64, method: Preprocess) -> Result<(Dataset, Dataset)> {
    let train = gen.generate(seed)?;
    let test = gen.generate(seed.wrapping_add(TEST_SEED_OFFSET))?;
    let s = Standardization::fit(&train.y, method)?;
    Ok((train.transformed(&s)?, test.transformed(&s)?))
}
