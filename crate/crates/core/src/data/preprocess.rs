use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometric standard deviation `det(Σ)^{1/(2J)}` of the moons benchmark after
/// isotropic rescaling. At this scale the fitted unconditional normal model
/// has test NLL ≈ -0.151.
pub const MOONS_REFERENCE_SD: f64 = 0.224_374_548_229_227_75;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Preprocess {
    #[default]
    None,
    /// Zero mean, unit variance per column.
    Standardize,
    /// Each column onto `[0, 1]`.
    MinMax,
    /// Centre, then one common scale factor so the geometric standard
    /// deviation equals `target`.
    Isotropic { target: f64 },
}

/// Fitted affine map `(y - shift) / scale`, recorded for inverse reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub method: Preprocess,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

fn mean_and_cov(ys: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let j = ys[0].len();
    let n = ys.len() as f64;
    let mut mean = vec![0.0; j];
    for r in ys {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = vec![vec![0.0; j]; j];
    for r in ys {
        for a in 0..j {
            for b in 0..j {
                cov[a][b] += (r[a] - mean[a]) * (r[b] - mean[b]);
            }
        }
    }
    cov.iter_mut().flatten().for_each(|c| *c /= n);
    (mean, cov)
}

/// Log-determinant of a symmetric positive definite matrix via Cholesky.
fn log_det_spd(a: &[Vec<f64>]) -> Option<f64> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    let mut log_det = 0.0;
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if !(d > 0.0) {
                    return None;
                }
                l[i][i] = d.sqrt();
                log_det += d.ln();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Some(log_det)
}

/// `det(Σ)^{1/(2J)}` of the sample covariance (maximum-likelihood normalisation).
pub fn geometric_sd(ys: &[Vec<f64>]) -> Result<f64> {
    if ys.len() < 2 {
        return Err(Error::InvalidParameter("need at least two rows".into()));
    }
    let (_, cov) = mean_and_cov(ys);
    let ld = log_det_spd(&cov)
        .ok_or_else(|| Error::InvalidParameter("sample covariance is singular".into()))?;
    Ok((ld / (2.0 * cov.len() as f64)).exp())
}

impl Standardization {
    pub fn identity(dim: usize) -> Self {
        Standardization {
            method: Preprocess::None,
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn fit(ys: &[Vec<f64>], method: Preprocess) -> Result<Self> {
        let Some(first) = ys.first() else {
            return Err(Error::InvalidParameter(
                "cannot fit on an empty dataset".into(),
            ));
        };
        let j = first.len();
        let n = ys.len() as f64;
        let (shift, scale) = match method {
            Preprocess::None => (vec![0.0; j], vec![1.0; j]),
            Preprocess::Standardize => {
                let mean: Vec<f64> = (0..j)
                    .map(|c| ys.iter().map(|r| r[c]).sum::<f64>() / n)
                    .collect();
                let sd = (0..j)
                    .map(|c| {
                        let v = ys.iter().map(|r| (r[c] - mean[c]).powi(2)).sum::<f64>() / n;
                        if v > 0.0 {
                            Ok(v.sqrt())
                        } else {
                            Err(Error::InvalidParameter(format!("column {c} is constant")))
                        }
                    })
                    .collect::<Result<_>>()?;
                (mean, sd)
            }
            Preprocess::MinMax => {
                let mut lo = vec![f64::INFINITY; j];
                let mut hi = vec![f64::NEG_INFINITY; j];
                for r in ys {
                    for c in 0..j {
                        lo[c] = lo[c].min(r[c]);
                        hi[c] = hi[c].max(r[c]);
                    }
                }
                let range = (0..j)
                    .map(|c| {
                        if hi[c] > lo[c] {
                            Ok(hi[c] - lo[c])
                        } else {
                            Err(Error::InvalidParameter(format!("column {c} is constant")))
                        }
                    })
                    .collect::<Result<_>>()?;
                (lo, range)
            }
            Preprocess::Isotropic { target } => {
                if !(target > 0.0) {
                    return Err(Error::config("target", "must be positive"));
                }
                let (mean, _) = mean_and_cov(ys);
                let g = geometric_sd(ys)?;
                (mean, vec![g / target; j])
            }
        };
        Ok(Standardization {
            method,
            shift,
            scale,
        })
    }

    fn check(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.shift.len() {
            return Err(Error::DimensionMismatch {
                expected: self.shift.len(),
                got: row.len(),
                context: "standardization",
            });
        }
        Ok(())
    }

    pub fn apply(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check(row)?;
        Ok(row
            .iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    pub fn invert(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check(row)?;
        Ok(row
            .iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (m, s))| v * s + m)
            .collect())
    }

    /// `log |det|` of the forward map; add to a log-density in transformed
    /// units to express it in original units.
    pub fn log_det(&self) -> f64 {
        -self.scale.iter().map(|s| s.ln()).sum::<f64>()
    }
}
