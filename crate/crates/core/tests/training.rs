mod common;

use common::{all_small_specs, perturb, small_moons, small_spec};
use hybridflow::bijectors::Family;
use hybridflow::data::Dataset;
use hybridflow::flows::{FlowModel, ModelKind, ModelSpec};
use hybridflow::training::{
    adam_step, cosine_lr, fit, fit_split, loss_and_grad, mean_nll, objective_mean_nll, AdamState,
    Objective, TrainConfig,
};
use hybridflow::Error;

fn identity_model() -> FlowModel {
    let mut spec = ModelSpec::new(ModelKind::Cf, 2, 0);
    spec.family = Family::Rqs;
    FlowModel::build(spec).unwrap()
}

fn quick_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 128,
        lr: 1e-2,
        lr_min: 1e-4,
        patience: epochs,
        ..Default::default()
    }
}

fn for_model(spec: &ModelSpec, ds: &Dataset) -> Dataset {
    if spec.features == 0 {
        ds.without_features()
    } else {
        ds.clone()
    }
}

#[test]
fn identity_loss_at_origin() {
    let model = identity_model();
    let params = model.params().values().to_vec();
    let (loss, grad) = loss_and_grad(&model, &params, &[vec![0.0, 0.0]], &[vec![]], &[0]).unwrap();
    assert!((loss - 1.837877).abs() < 1e-6, "{loss}");
    assert_eq!(grad.len(), params.len());
}

#[test]
fn duplicated_rows_keep_the_mean() {
    let model = FlowModel::build(small_spec(ModelKind::Hcf, Family::Rqs, 0)).unwrap();
    let mut params = model.params().values().to_vec();
    perturb(&mut params, 0.3, 1);
    let ys = vec![vec![0.3, -0.2], vec![1.0, 0.5], vec![-0.7, 0.1]];
    let xs = vec![vec![]; 3];
    let (a, ga) = loss_and_grad(&model, &params, &ys, &xs, &[0, 1, 2]).unwrap();
    let (b, gb) = loss_and_grad(&model, &params, &ys, &xs, &[0, 1, 2, 0, 1, 2]).unwrap();
    assert!((a - b).abs() < 1e-12);
    for (x, y) in ga.iter().zip(&gb) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn cosine_schedule_examples() {
    assert_eq!(cosine_lr(0, 100, 1e-2, 1e-4), 1e-2);
    assert_eq!(cosine_lr(100, 100, 1e-2, 1e-4), 1e-4);
    assert_eq!(cosine_lr(250, 100, 1e-2, 1e-4), 1e-4);
    assert!((cosine_lr(50, 100, 1e-2, 1e-4) - (1e-2 + 1e-4) / 2.0).abs() < 1e-15);
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut p = vec![1.0, -2.0, 0.5];
    let mut state = AdamState::new(3);
    adam_step(&mut p, &[3.0, -0.5, 0.0], &mut state, 0.01);
    assert!((p[0] - 0.99).abs() < 1e-8);
    assert!((p[1] + 1.99).abs() < 1e-8);
    assert_eq!(p[2], 0.5);
}

#[test]
fn small_adam_step_does_not_increase_batch_loss() {
    let data = small_moons(32, 3);
    let idx: Vec<usize> = (0..data.len()).collect();
    let specs = all_small_specs(1);
    for draw in 0..100u64 {
        let spec = specs[draw as usize % specs.len()].clone();
        let kind = spec.kind;
        let model = FlowModel::build(spec).unwrap();
        let mut params = model.params().values().to_vec();
        perturb(&mut params, 0.3, 500 + draw);
        let (before, grad) = loss_and_grad(&model, &params, &data.y, &data.x, &idx).unwrap();
        let mut state = AdamState::new(params.len());
        adam_step(&mut params, &grad, &mut state, 1e-6);
        let (after, _) = loss_and_grad(&model, &params, &data.y, &data.x, &idx).unwrap();
        assert!(
            after <= before + 1e-12,
            "{kind} draw {draw}: {before} -> {after}"
        );
    }
}

#[test]
fn training_loss_decreases_for_every_family() {
    let data = small_moons(1024, 0);
    for spec in all_small_specs(1).into_iter().chain(all_small_specs(0)) {
        let ds = for_model(&spec, &data);
        let name = format!("{}-{:?}-x{}", spec.kind, spec.family, spec.features);
        let mut model = FlowModel::build(spec).unwrap();
        let report = fit(&mut model, &ds, &quick_config(10)).unwrap();
        assert_eq!(report.epochs.len(), 10, "{name}");
        let first = report.epochs[0].train_nll;
        let last = report.epochs[9].train_nll;
        assert!(last < first, "{name}: {first} -> {last}");
    }
}

#[test]
fn patience_one_stops_after_two_epochs() {
    let train = small_moons(512, 1).without_features();
    // validation far from the training data gets worse as the fit tightens
    let mut val = small_moons(128, 2).without_features();
    for row in &mut val.y {
        row[0] += 6.0;
    }
    let mut model = FlowModel::build(small_spec(ModelKind::Mvn, Family::Bernstein, 0)).unwrap();
    let cfg = TrainConfig {
        epochs: 20,
        batch_size: 64,
        lr: 1e-2,
        patience: 1,
        ..Default::default()
    };
    let report = fit_split(&mut model, &train, &val, &cfg).unwrap();
    assert_eq!(report.epochs.len(), 2);
    assert!(report.epochs[1].val_nll > report.epochs[0].val_nll);
    assert_eq!(report.best_epoch, 1);
    assert!(report.stopped_early);
}

#[test]
fn restored_parameters_reproduce_best_validation_nll() {
    let data = small_moons(1024, 4);
    let (train, val) = data.split(0.25, 0).unwrap();
    let mut model = FlowModel::build(small_spec(ModelKind::Hcf, Family::Rqs, 1)).unwrap();
    let report = fit_split(&mut model, &train, &val, &quick_config(8)).unwrap();
    let best = report
        .epochs
        .iter()
        .map(|e| e.val_nll)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(report.best_val_nll, best);
    assert_eq!(report.epochs[report.best_epoch - 1].val_nll, best);
    assert_eq!(model.params().values(), report.params.as_slice());
    assert_eq!(
        mean_nll(&model, &val.y, &val.x).unwrap().to_bits(),
        best.to_bits()
    );
}

#[test]
fn training_is_deterministic() {
    let data = small_moons(512, 5);
    let run = || {
        let mut model = FlowModel::build(small_spec(ModelKind::Maf, Family::Rqs, 1)).unwrap();
        fit(&mut model, &data, &quick_config(3)).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn sequential_and_parallel_runs_agree() {
    let data = small_moons(1000, 6);
    let run = || {
        let mut model = FlowModel::build(small_spec(ModelKind::Hcf, Family::Bernstein, 1)).unwrap();
        fit(&mut model, &data, &quick_config(2)).unwrap()
    };
    let parallel = run();
    hybridflow::parallel::set_sequential(true);
    let sequential = run();
    hybridflow::parallel::set_sequential(false);
    assert_eq!(parallel, sequential);
}

#[test]
fn invalid_config_lists_fields() {
    let cfg = TrainConfig {
        patience: 0,
        val_fraction: 1.5,
        ..Default::default()
    };
    match cfg.validate() {
        Err(Error::Config { fields, .. }) => {
            assert_eq!(
                fields,
                vec!["patience".to_string(), "val_fraction".to_string()]
            );
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn mismatched_data_is_rejected() {
    let data = small_moons(64, 7);
    let mut model = FlowModel::build(small_spec(ModelKind::Hcf, Family::Rqs, 0)).unwrap();
    assert!(fit(&mut model, &data, &quick_config(1)).is_err());
}

#[test]
fn hcf_reaches_good_validation_nll() {
    let (train, _) = hybridflow::data::benchmark(
        &hybridflow::data::Generator::moons(8192),
        0,
        hybridflow::data::Preprocess::Isotropic {
            target: hybridflow::data::MOONS_REFERENCE_SD,
        },
    )
    .unwrap();
    let train = train.without_features();
    let mut spec = ModelSpec::new(ModelKind::Hcf, 2, 0);
    spec.hidden = vec![16, 16];
    spec.marginal_order = 50;
    spec.fit_to_data(&train.y, &train.x);
    let mut model = FlowModel::build(spec).unwrap();
    let cfg = TrainConfig {
        epochs: 200,
        lr: 1e-2,
        lr_min: 1e-4,
        patience: 10,
        ..Default::default()
    };
    let report = fit(&mut model, &train, &cfg).unwrap();
    assert!(
        report.best_val_nll < -1.3,
        "best validation NLL {}",
        report.best_val_nll
    );
}

#[test]
fn stagewise_fit_keeps_the_fitted_marginal_stage() {
    let data = small_moons(1024, 21).without_features();
    let (train, val) = data.split(0.25, 2).unwrap();
    let mut model = FlowModel::build(small_spec(ModelKind::Hcf, Family::Rqs, 0)).unwrap();
    let marginal = model.marginal_params();
    assert!(!marginal.is_empty());
    let before = objective_mean_nll(&model, Objective::Marginal, &val.y, &val.x).unwrap();
    let cfg = TrainConfig {
        marginal_epochs: 4,
        ..quick_config(3)
    };
    let report = fit_split(&mut model, &train, &val, &cfg).unwrap();
    let stages: Vec<Objective> = report.epochs.iter().map(|e| e.objective).collect();
    assert_eq!(
        stages,
        [vec![Objective::Marginal; 4], vec![Objective::Joint; 3]].concat()
    );
    assert!(report.best_epoch > 4);

    // the marginal stage ends at its best epoch and the joint fit leaves it alone
    let best_marginal = report.epochs[..4]
        .iter()
        .map(|e| e.val_nll)
        .fold(f64::INFINITY, f64::min);
    let after = objective_mean_nll(&model, Objective::Marginal, &val.y, &val.x).unwrap();
    assert!(after < before);
    assert_eq!(after.to_bits(), best_marginal.to_bits());
    assert_eq!(
        mean_nll(&model, &val.y, &val.x).unwrap().to_bits(),
        report.best_val_nll.to_bits()
    );
}

#[test]
fn stagewise_fit_needs_a_marginal_stage() {
    let data = small_moons(256, 22).without_features();
    let mut model = FlowModel::build(small_spec(ModelKind::Cf, Family::Rqs, 0)).unwrap();
    assert!(model.marginal_params().is_empty());
    let cfg = TrainConfig {
        marginal_epochs: 2,
        ..quick_config(1)
    };
    let err = fit(&mut model, &data, &cfg).unwrap_err();
    assert!(err.to_string().contains("marginal"), "{err}");
}
