#![allow(dead_code)]

use hybridflow::bijectors::Family;
use hybridflow::data::{gen_moons, Dataset};
use hybridflow::flows::{ModelKind, ModelSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Relative error with an absolute floor for values near zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(a.abs()).max(1e-3)
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| rel_err(*x, *y))
        .fold(0.0, f64::max)
}

/// Small model for gradient and sampling checks.
pub fn small_spec(kind: ModelKind, family: Family, features: usize) -> ModelSpec {
    let mut spec = ModelSpec::new(kind, 2, features);
    spec.family = family;
    spec.marginal_order = 5;
    spec.flow_order = 5;
    spec.bins = 4;
    spec.hidden = vec![8];
    spec.context_hidden = vec![4];
    spec.mvn_hidden = vec![4];
    spec.layers = 2;
    spec
}

pub fn all_small_specs(features: usize) -> Vec<ModelSpec> {
    let mut specs = Vec::new();
    for kind in ModelKind::ALL {
        match kind {
            ModelKind::Mvn | ModelKind::Mctm => {
                specs.push(small_spec(kind, Family::Bernstein, features))
            }
            _ => {
                specs.push(small_spec(kind, Family::Bernstein, features));
                specs.push(small_spec(kind, Family::Rqs, features));
            }
        }
    }
    specs
}

/// Moons rows in standardized units, with the class label as the only feature.
pub fn small_moons(n: usize, seed: u64) -> Dataset {
    let ds = gen_moons(n, 0.1, seed).unwrap();
    hybridflow::data::standardize(&ds, hybridflow::data::Preprocess::Standardize).unwrap()
}

pub fn perturb(params: &mut [f64], scale: f64, seed: u64) {
    let mut r = rng(seed);
    for p in params.iter_mut() {
        *p += scale * (r.random::<f64>() * 2.0 - 1.0);
    }
}
