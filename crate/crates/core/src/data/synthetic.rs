use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetMeta};
use crate::error::{Error, Result};

pub const DEFAULT_NOISE: f64 = 0.05;
pub const DEFAULT_INNER_FACTOR: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum Generator {
    Moons { n: usize, noise: f64 },
    Circles { n: usize, noise: f64, factor: f64 },
}

impl Generator {
    pub fn moons(n: usize) -> Self {
        Generator::Moons {
            n,
            noise: DEFAULT_NOISE,
        }
    }

    pub fn circles(n: usize) -> Self {
        Generator::Circles {
            n,
            noise: DEFAULT_NOISE,
            factor: DEFAULT_INNER_FACTOR,
        }
    }

    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        match *self {
            Generator::Moons { n, noise } => gen_moons(n, noise, seed),
            Generator::Circles { n, noise, factor } => gen_circles(n, noise, factor, seed),
        }
    }
}

/// Noiseless moon point; the inner (lower-right) moon has feature 1.
pub fn moons_point(t: f64, inner: bool) -> [f64; 2] {
    if inner {
        [1.0 - t.cos(), 0.5 - t.sin()]
    } else {
        [t.cos(), t.sin()]
    }
}

/// Noiseless circle point; the inner circle has radius `factor` and feature 1.
pub fn circles_point(angle: f64, inner: bool, factor: f64) -> [f64; 2] {
    let r = if inner { factor } else { 1.0 };
    [r * angle.cos(), r * angle.sin()]
}

fn assemble(
    n: usize,
    noise: f64,
    seed: u64,
    generator: Generator,
    mut point: impl FnMut(&mut ChaCha8Rng, bool) -> [f64; 2],
) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 rows, got {n}"
        )));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise must be ≥ 0, got {noise}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_inner = n / 2;
    let mut rows: Vec<([f64; 2], f64)> = (0..n)
        .map(|i| {
            let inner = i >= n - n_inner;
            (point(&mut rng, inner), f64::from(u8::from(inner)))
        })
        .collect();
    if noise > 0.0 {
        let normal = Normal::new(0.0, noise).expect("valid noise");
        for (p, _) in rows.iter_mut() {
            p[0] += normal.sample(&mut rng);
            p[1] += normal.sample(&mut rng);
        }
    }
    rows.shuffle(&mut rng);
    let (y, x) = rows.into_iter().map(|(p, c)| (p.to_vec(), vec![c])).unzip();
    let mut ds = Dataset::new(y, x)?;
    ds.meta = DatasetMeta {
        response_names: vec!["y1".into(), "y2".into()],
        feature_names: vec!["x".into()],
        generator: Some(generator),
        seed: Some(seed),
        ..Default::default()
    };
    Ok(ds)
}

/// Two interleaved half circles with angles uniform on `[0, π]`.
pub fn gen_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    assemble(
        n,
        noise,
        seed,
        Generator::Moons { n, noise },
        |rng, inner| moons_point(rng.random_range(0.0..=PI), inner),
    )
}

/// Two concentric circles with angles uniform on `[0, 2π)`.
pub fn gen_circles(n: usize, noise: f64, factor: f64, seed: u64) -> Result<Dataset> {
    if !(factor > 0.0 && factor < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "inner circle factor must lie in (0, 1), got {factor}"
        )));
    }
    let gen = Generator::Circles { n, noise, factor };
    assemble(n, noise, seed, gen, |rng, inner| {
        circles_point(rng.random_range(0.0..2.0 * PI), inner, factor)
    })
}
