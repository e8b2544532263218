mod common;

use common::{all_small_specs, fd_gradient, max_rel_err, perturb, rng, small_spec};
use hybridflow::bijectors::Family;
use hybridflow::eval::{base_sample, ks_two_sample, simpson_2d};
use hybridflow::flows::{FlowModel, ModelKind, ModelSpec, MVN_DIAG_FLOOR};
use hybridflow::training::{log_probs, loss_and_grad};
use rand::Rng;

const LN_2PI_HALF: f64 = 0.918_938_533_204_672_8;

fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

fn perturbed(spec: ModelSpec, scale: f64, seed: u64) -> FlowModel {
    let mut model = FlowModel::build(spec).unwrap();
    perturb(model.params_mut().values_mut(), scale, seed);
    model
}

fn label(spec: &ModelSpec) -> String {
    format!("{}-{:?}-x{}", spec.kind, spec.family, spec.features)
}

#[test]
fn identity_coupling_flow_is_standard_normal() {
    let mut spec = ModelSpec::new(ModelKind::Cf, 2, 0);
    spec.family = Family::Rqs;
    let model = FlowModel::build(spec).unwrap();
    let lp = model.log_prob(&[0.0, 0.0], &[]).unwrap();
    assert!((lp + 1.837877).abs() < 1e-6, "{lp}");
    assert!((lp + 2.0 * LN_2PI_HALF).abs() < 1e-12);
}

#[test]
fn one_dimensional_doubling_map() {
    // h(y) = 2y: a normal model with standard deviation 1/2
    let mut model = FlowModel::build(ModelSpec::new(ModelKind::Mvn, 1, 0)).unwrap();
    let raw = inverse_softplus(0.5 - MVN_DIAG_FLOOR);
    model.params_mut().values_mut()[1] = raw;
    let lp = model.log_prob(&[0.0], &[]).unwrap();
    let expected = (2.0f64).ln() - LN_2PI_HALF;
    assert!((lp - expected).abs() < 1e-12, "{lp}");
    assert!((lp + 0.225791).abs() < 1e-6);
}

#[test]
fn mctm_parameter_count_and_stages() {
    let mut spec = ModelSpec::new(ModelKind::Mctm, 2, 0);
    spec.marginal_order = 300;
    let model = FlowModel::build(spec).unwrap();
    assert_eq!(model.params().len(), 2 * (300 + 2) + 1);
    assert_eq!(model.stage_names(), vec!["marginal_bernstein", "lambda"]);
}

#[test]
fn stage_lists() {
    let names = |kind| {
        FlowModel::build(ModelSpec::new(kind, 2, 0))
            .unwrap()
            .stage_names()
    };
    assert_eq!(
        names(ModelKind::Hcf),
        vec!["marginal_bernstein", "coupling"]
    );
    assert_eq!(
        names(ModelKind::Maf),
        vec!["autoregressive", "permutation", "autoregressive"]
    );
    assert_eq!(
        names(ModelKind::Cf),
        vec!["coupling", "permutation", "coupling"]
    );
    assert_eq!(names(ModelKind::Mvn), vec!["mvn"]);
}

#[test]
fn inconsistent_spec_names_fields() {
    let spec = ModelSpec::new(ModelKind::Hcf, 1, 0);
    let err = FlowModel::build(spec).unwrap_err().to_string();
    assert!(err.contains("dim"), "{err}");
}

#[test]
fn nll_gradients_match_finite_differences() {
    let data = common::small_moons(6, 40);
    for features in [0, 1] {
        let (ys, xs) = if features == 0 {
            (data.y.clone(), vec![Vec::new(); data.len()])
        } else {
            (data.y.clone(), data.x.clone())
        };
        let idx: Vec<usize> = (0..ys.len()).collect();
        for spec in all_small_specs(features) {
            let name = label(&spec);
            let mut model = FlowModel::build(spec).unwrap();
            for draw in 0..20 {
                let base = model.params().values().to_vec();
                let mut params = base.clone();
                perturb(&mut params, 0.3, 1000 + draw);
                let (_, grad) = loss_and_grad(&model, &params, &ys, &xs, &idx).unwrap();
                let fd = fd_gradient(
                    |p| {
                        model.params_mut().set_values(p);
                        let lp = log_probs(&model, &ys, &xs).unwrap();
                        -lp.iter().sum::<f64>() / lp.len() as f64
                    },
                    &params,
                    1e-5,
                );
                model.params_mut().set_values(&base);
                let err = max_rel_err(&grad, &fd);
                assert!(err < 1e-4, "{name} draw {draw}: rel err {err}");
            }
        }
    }
}

#[test]
fn sampling_is_deterministic_and_inverts() {
    for spec in all_small_specs(1) {
        let name = label(&spec);
        let model = perturbed(spec, 0.3, 5);
        let a = model.sample(&[1.0], 50, 9).unwrap();
        let b = model.sample(&[1.0], 50, 9).unwrap();
        assert_eq!(a, b, "{name}");
        let mut r = rng(6);
        for _ in 0..20 {
            let z = vec![r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)];
            let y = model.inverse(&z, &[0.5]).unwrap();
            let (back, _) = model.forward(&y, &[0.5]).unwrap();
            for k in 0..2 {
                assert!((back[k] - z[k]).abs() < 1e-6, "{name}: {z:?} -> {back:?}");
            }
        }
    }
}

#[test]
fn identity_model_samples_are_standard_normal() {
    let mut spec = ModelSpec::new(ModelKind::Cf, 2, 0);
    spec.family = Family::Rqs;
    let model = FlowModel::build(spec).unwrap();
    let n = 4000;
    let s = model.sample(&[], n, 3).unwrap();
    for k in 0..2 {
        let mean = s.iter().map(|r| r[k]).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "dim {k}: {mean}");
    }
}

#[test]
fn zeroed_feature_pathway_removes_the_features() {
    for spec in all_small_specs(1) {
        let name = label(&spec);
        let mut model = perturbed(spec, 0.5, 11);
        let y = [0.3, -0.8];
        let l0 = model.log_prob(&y, &[0.0]).unwrap();
        let l1 = model.log_prob(&y, &[1.0]).unwrap();
        assert_ne!(l0, l1, "{name} ignores x before zeroing");
        model.zero_feature_pathway();
        let l0 = model.log_prob(&y, &[0.0]).unwrap();
        let l1 = model.log_prob(&y, &[1.0]).unwrap();
        assert_eq!(l0.to_bits(), l1.to_bits(), "{name}");
    }
}

#[test]
fn fresh_conditional_model_matches_unconditional() {
    for kind in [
        ModelKind::Cf,
        ModelKind::Maf,
        ModelKind::Hcf,
        ModelKind::Hmaf,
    ] {
        let cond = FlowModel::build(small_spec(kind, Family::Rqs, 1)).unwrap();
        let uncond = FlowModel::build(small_spec(kind, Family::Rqs, 0)).unwrap();
        let y = [0.4, 1.1];
        let a = cond.log_prob(&y, &[1.0]).unwrap();
        let b = uncond.log_prob(&y, &[]).unwrap();
        assert!((a - b).abs() < 1e-12, "{kind}: {a} vs {b}");
    }
}

/// Dense `log N(y; μ, Σ)` by Gauss-Jordan elimination.
fn mvn_log_density(y: &[f64], mu: &[f64], sigma: &[Vec<f64>]) -> f64 {
    let d = y.len();
    let mut a: Vec<Vec<f64>> = sigma.to_vec();
    let mut inv: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| f64::from(i == j)).collect())
        .collect();
    let mut log_det = 0.0;
    for c in 0..d {
        let piv = a[c][c];
        log_det += piv.abs().ln();
        for j in 0..d {
            a[c][j] /= piv;
            inv[c][j] /= piv;
        }
        for r in 0..d {
            if r != c {
                let f = a[r][c];
                for j in 0..d {
                    a[r][j] -= f * a[c][j];
                    inv[r][j] -= f * inv[c][j];
                }
            }
        }
    }
    let diff: Vec<f64> = (0..d).map(|i| y[i] - mu[i]).collect();
    let quad: f64 = (0..d)
        .map(|i| (0..d).map(|j| diff[i] * inv[i][j] * diff[j]).sum::<f64>())
        .sum();
    -0.5 * quad - 0.5 * log_det - d as f64 * LN_2PI_HALF
}

#[test]
fn normal_model_matches_closed_form_density() {
    let d = 3;
    let mut model = FlowModel::build(ModelSpec::new(ModelKind::Mvn, d, 0)).unwrap();
    let mut r = rng(21);
    let theta: Vec<f64> = (0..model.params().len())
        .map(|_| r.random_range(-1.0..1.0))
        .collect();
    model.params_mut().set_values(&theta);
    let mu = &theta[..d];
    let diag: Vec<f64> = theta[d..2 * d]
        .iter()
        .map(|v| (1.0 + v.exp()).ln() + MVN_DIAG_FLOOR)
        .collect();
    let lower = &theta[2 * d..];
    // y = μ + A z with A unit-free lower triangular: diagonal `diag`, below it `lower`
    let mut a = vec![vec![0.0; d]; d];
    let mut k = 0;
    for (i, row) in a.iter_mut().enumerate() {
        row[..i].copy_from_slice(&lower[k..k + i]);
        k += i;
        row[i] = diag[i];
    }
    let sigma: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| (0..d).map(|m| a[i][m] * a[j][m]).sum())
                .collect()
        })
        .collect();
    for _ in 0..50 {
        let y: Vec<f64> = (0..d).map(|_| r.random_range(-3.0..3.0)).collect();
        let lp = model.log_prob(&y, &[]).unwrap();
        let expected = mvn_log_density(&y, mu, &sigma);
        assert!((lp - expected).abs() < 1e-10, "{lp} vs {expected}");
    }
}

#[test]
fn json_roundtrip_is_bit_exact() {
    for spec in all_small_specs(1) {
        let model = perturbed(spec, 0.4, 31);
        let text = model.to_json().unwrap();
        let back = FlowModel::from_json(&text).unwrap();
        assert_eq!(back.spec(), model.spec());
        let bits = |m: &FlowModel| {
            m.params()
                .values()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&back), bits(&model));
        let y = [0.2, -0.4];
        assert_eq!(
            back.log_prob(&y, &[0.3]).unwrap().to_bits(),
            model.log_prob(&y, &[0.3]).unwrap().to_bits()
        );
    }
}

#[test]
fn hybrid_models_preserve_the_first_marginal() {
    for kind in [ModelKind::Hcf, ModelKind::Hmaf] {
        let model = perturbed(small_spec(kind, Family::Rqs, 0), 0.5, 41);
        let n = 3000;
        let full: Vec<f64> = model
            .sample(&[], n, 1)
            .unwrap()
            .iter()
            .map(|r| r[0])
            .collect();
        let w0 = base_sample(model.spec().base, n, 2);
        let w1 = base_sample(model.spec().base, n, 3);
        let marginal: Vec<f64> = w0
            .iter()
            .zip(&w1)
            .map(|(&a, &b)| model.marginal_inverse(&[a, b], &[]).unwrap()[0])
            .collect();
        let ks = ks_two_sample(&full, &marginal).unwrap();
        assert!(ks.p_value > 0.01, "{kind}: KS p {}", ks.p_value);
    }
}

#[test]
fn densities_integrate_to_one() {
    for spec in all_small_specs(0) {
        let name = label(&spec);
        let model = perturbed(spec, 0.2, 51);
        let total = simpson_2d(
            |a, b| model.log_prob(&[a, b], &[]).unwrap().exp(),
            (-9.0, 9.0),
            (-9.0, 9.0),
            300,
        );
        assert!((total - 1.0).abs() < 1e-2, "{name}: {total}");
    }
}

#[test]
fn wrong_input_sizes_are_rejected() {
    let model = FlowModel::build(small_spec(ModelKind::Hcf, Family::Rqs, 1)).unwrap();
    assert!(model.log_prob(&[0.0], &[1.0]).is_err());
    assert!(model.log_prob(&[0.0, 0.0], &[]).is_err());
}
