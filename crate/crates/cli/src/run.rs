use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use hybridflow::data::{self, Dataset, Standardization};
use hybridflow::eval::{self, TrialRow};
use hybridflow::flows::FlowModel;
use hybridflow::training::{self, TrainReport};
use serde::{Deserialize, Serialize};

use crate::config::{EvalConfig, RunPlan};

/// Output directory layout.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    fn dir(&self, kind: &str) -> Result<PathBuf> {
        let d = self.root.join(kind);
        std::fs::create_dir_all(&d).with_context(|| format!("cannot create {}", d.display()))?;
        Ok(d)
    }

    pub fn dataset_dir(&self, id: &str) -> Result<PathBuf> {
        let d = self.dir("dataset")?.join(id);
        std::fs::create_dir_all(&d)?;
        Ok(d)
    }

    pub fn model(&self, run: &str) -> Result<PathBuf> {
        Ok(self.dir("model")?.join(format!("{run}.json")))
    }

    pub fn report(&self, run: &str, suffix: &str) -> Result<PathBuf> {
        Ok(self.dir("report")?.join(format!("{run}{suffix}")))
    }

    pub fn metrics(&self, name: &str) -> Result<PathBuf> {
        Ok(self.dir("metrics")?.join(name))
    }

    pub fn samples(&self, name: &str) -> Result<PathBuf> {
        Ok(self.dir("samples")?.join(name))
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))
}

/// Preprocessed training and test draws with all configured columns.
fn load_full(plan: &RunPlan) -> Result<(Dataset, Dataset)> {
    let ds = &plan.dataset;
    Ok(if let Some(gen) = &ds.generator {
        data::benchmark(gen, plan.seed, ds.preprocess)?
    } else {
        let file = ds
            .file
            .as_ref()
            .ok_or_else(|| anyhow!("dataset has neither generator nor file"))?;
        let full = data::load_table(file, &ds.response, &ds.features)?;
        let (train, test) = match &ds.test_file {
            Some(t) => (full, data::load_table(t, &ds.response, &ds.features)?),
            None => full.split(ds.test_fraction, plan.seed)?,
        };
        let s = Standardization::fit(&train.y, ds.preprocess)?;
        (train.transformed(&s)?, test.transformed(&s)?)
    })
}

/// Training and test data of a run, with the feature columns dropped for
/// unconditional runs.
pub fn load_data(plan: &RunPlan) -> Result<(Dataset, Dataset)> {
    let (train, test) = load_full(plan)?;
    if plan.conditional {
        if train.features() == 0 {
            bail!(
                "dataset `{}` has no feature columns for a conditional run",
                plan.dataset.name
            );
        }
        Ok((train, test))
    } else {
        Ok((train.without_features(), test.without_features()))
    }
}

/// Write the run's data draw (idempotent).
pub fn write_data(plan: &RunPlan, layout: &Layout) -> Result<PathBuf> {
    let (train, test) = load_full(plan)?;
    let dir = layout.dataset_dir(&plan.dataset_id())?;
    data::write_dataset(&train, dir.join("train.csv"))?;
    data::write_dataset(&test, dir.join("test.csv"))?;
    Ok(dir)
}

/// Wall-clock and environment details kept out of the reproducible outputs.
#[derive(Serialize)]
struct RunMeta {
    run_id: String,
    wall_clock_secs: f64,
    finished_unix_secs: u64,
    workers: usize,
    parallel: bool,
}

fn write_report(layout: &Layout, run: &str, report: &TrainReport) -> Result<()> {
    let mut value = serde_json::to_value(report)?;
    if let Some(obj) = value.as_object_mut() {
        obj.remove("wall_clock_secs");
    }
    write_json(&layout.report(run, ".json")?, &value)?;
    write_csv(&layout.report(run, ".epochs.csv")?, &report.epochs)?;
    let meta = RunMeta {
        run_id: run.to_string(),
        wall_clock_secs: report.wall_clock_secs,
        finished_unix_secs: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        workers: hybridflow::parallel::workers(),
        parallel: hybridflow::parallel::is_parallel(),
    };
    write_json(&layout.report(run, ".meta.json")?, &meta)
}

pub struct Trained {
    pub run_id: String,
    pub model: FlowModel,
    pub report: TrainReport,
    pub test: Dataset,
}

/// Build, fit and persist one run. With `init_only` the initial model is
/// saved with an empty report.
pub fn train(plan: &RunPlan, layout: &Layout, init_only: bool) -> Result<Trained> {
    let run_id = plan.run_id();
    write_data(plan, layout)?;
    let (train, test) = load_data(plan)?;
    let mut spec = plan.model_spec(train.dim(), train.features())?;
    spec.fit_to_data(&train.y, &train.x);
    let mut model = FlowModel::build(spec)?;
    let report = if init_only {
        TrainReport {
            epochs: Vec::new(),
            best_epoch: 0,
            best_val_nll: f64::NAN,
            stopped_early: false,
            steps: 0,
            params: model.params().values().to_vec(),
            wall_clock_secs: 0.0,
        }
    } else {
        match training::fit(&mut model, &train, &plan.train) {
            Ok(r) => r,
            Err(hybridflow::Error::Training {
                epoch,
                report,
                source,
            }) => {
                write_report(layout, &run_id, &report)?;
                model.save(layout.model(&format!("{run_id}.partial"))?)?;
                bail!("run {run_id}: training failed in epoch {epoch}: {source} (partial report kept)");
            }
            Err(e) => return Err(e.into()),
        }
    };
    model.save(layout.model(&run_id)?)?;
    if let Some(s) = &train.meta.standardization {
        write_json(&layout.model(&format!("{run_id}.preprocess"))?, s)?;
    }
    write_report(layout, &run_id, &report)?;
    Ok(Trained {
        run_id,
        model,
        report,
        test,
    })
}

pub fn load_model(plan: &RunPlan, layout: &Layout) -> Result<FlowModel> {
    let path = layout.model(&plan.run_id())?;
    if !path.is_file() {
        bail!(
            "no trained model for run {} at {}; run `train` with the same configuration first",
            plan.run_id(),
            path.display()
        );
    }
    Ok(FlowModel::load(&path)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetrics {
    pub run_id: String,
    pub label: String,
    pub dataset: String,
    pub conditional: bool,
    pub seed: u64,
    pub test_nll: f64,
    pub test_rows: usize,
    pub best_val_nll: Option<f64>,
    pub best_epoch: Option<usize>,
}

impl RunMetrics {
    pub fn row(&self) -> TrialRow {
        TrialRow {
            model: self.label.clone(),
            dataset: self.dataset.clone(),
            conditional: self.conditional,
            seed: self.seed,
            test_nll: self.test_nll,
        }
    }
}

pub fn metrics(
    plan: &RunPlan,
    model: &FlowModel,
    test: &Dataset,
    report: Option<&TrainReport>,
) -> Result<RunMetrics> {
    let test_nll = training::mean_nll(model, &test.y, &test.x)?;
    Ok(RunMetrics {
        run_id: plan.run_id(),
        label: plan.label.clone(),
        dataset: plan.dataset.name.clone(),
        conditional: plan.conditional,
        seed: plan.seed,
        test_nll,
        test_rows: test.len(),
        best_val_nll: report.filter(|r| r.best_epoch > 0).map(|r| r.best_val_nll),
        best_epoch: report.filter(|r| r.best_epoch > 0).map(|r| r.best_epoch),
    })
}

fn read_report(layout: &Layout, run: &str) -> Option<TrainReport> {
    let text = std::fs::read_to_string(layout.report(run, ".json").ok()?).ok()?;
    serde_json::from_str(&text).ok()
}

/// Test NLL plus the configured diagnostics of a trained run.
pub fn evaluate(plan: &RunPlan, layout: &Layout, eval_cfg: &EvalConfig) -> Result<RunMetrics> {
    let model = load_model(plan, layout)?;
    let (_, test) = load_data(plan)?;
    let report = read_report(layout, &plan.run_id());
    let m = metrics(plan, &model, &test, report.as_ref())?;
    write_json(&layout.metrics(&format!("{}.json", m.run_id))?, &m)?;
    for d in &eval_cfg.diagnostics {
        let result = match d.as_str() {
            "qq" => qq(plan, layout, &model, &test, eval_cfg).map(|_| ()),
            "copula" => copula(plan, layout, &model, &test, eval_cfg).map(|_| ()),
            "rankcorr" => rankcorr(plan, layout, &model, &test, eval_cfg).map(|_| ()),
            other => Err(anyhow!("unknown diagnostic `{other}`")),
        };
        match result {
            Err(e) if matches!(e.downcast_ref(), Some(hybridflow::Error::Unsupported(_))) => {
                log::warn!("{}: skipping {d}: {e}", m.run_id)
            }
            other => other?,
        }
    }
    Ok(m)
}

/// Feature rows at which conditional diagnostics are reported.
pub fn diagnostic_x(
    model: &FlowModel,
    test: &Dataset,
    eval_cfg: &EvalConfig,
) -> Result<Vec<Vec<f64>>> {
    let u = model.features();
    if u == 0 {
        return Ok(vec![Vec::new()]);
    }
    if !eval_cfg.x.is_empty() {
        if let Some(bad) = eval_cfg.x.iter().find(|r| r.len() != u) {
            bail!(
                "eval.x row {bad:?} has {} values, the model expects {u}",
                bad.len()
            );
        }
        return Ok(eval_cfg.x.clone());
    }
    let mut rows: Vec<Vec<f64>> = test.x.clone();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    rows.dedup();
    if rows.len() <= 10 {
        Ok(rows)
    } else {
        let n = test.len() as f64;
        Ok(vec![(0..u)
            .map(|c| test.x.iter().map(|r| r[c]).sum::<f64>() / n)
            .collect()])
    }
}

#[derive(Serialize)]
struct QqRow {
    x_index: usize,
    dim: usize,
    prob: f64,
    ref_q: f64,
    emp_q: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct QqSummary {
    pub x_index: usize,
    pub x: Vec<f64>,
    pub dim: usize,
    pub max_deviation: f64,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
}

/// QQ data of the marginal stage's `W` samples against the base
/// distribution, plus a two-sample KS test against fresh base draws.
pub fn qq(
    plan: &RunPlan,
    layout: &Layout,
    model: &FlowModel,
    test: &Dataset,
    eval_cfg: &EvalConfig,
) -> Result<Vec<QqSummary>> {
    let base = model.spec().base;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (xi, x) in diagnostic_x(model, test, eval_cfg)?.into_iter().enumerate() {
        let cols = eval::marginal_samples(model, &x, eval_cfg.qq_samples, plan.seed)?;
        for (dim, w) in cols.iter().enumerate() {
            let pts = eval::qq_points(w, base, eval_cfg.qq_probs)?;
            let reference =
                eval::base_sample(base, w.len(), plan.seed.wrapping_add(1 + dim as u64));
            let ks = eval::ks_two_sample(w, &reference)?;
            summary.push(QqSummary {
                x_index: xi,
                x: x.clone(),
                dim,
                max_deviation: eval::max_qq_deviation(&pts),
                ks_statistic: ks.statistic,
                ks_p_value: ks.p_value,
            });
            rows.extend(pts.into_iter().map(|p| QqRow {
                x_index: xi,
                dim,
                prob: p.prob,
                ref_q: p.reference,
                emp_q: p.empirical,
            }));
        }
    }
    let run = plan.run_id();
    write_csv(&layout.metrics(&format!("{run}.qq.csv"))?, &rows)?;
    write_json(&layout.metrics(&format!("{run}.qq.json"))?, &summary)?;
    Ok(summary)
}

#[derive(Serialize)]
struct CopulaRow {
    x_index: usize,
    u1: f64,
    u2: f64,
    c: f64,
}

/// Implied copula density on a midpoint grid of `(0, 1)²`.
pub fn copula(
    plan: &RunPlan,
    layout: &Layout,
    model: &FlowModel,
    test: &Dataset,
    eval_cfg: &EvalConfig,
) -> Result<PathBuf> {
    if model.dim() != 2 {
        return Err(hybridflow::Error::Unsupported(format!(
            "copula grids are bivariate, the model has {} dimensions",
            model.dim()
        ))
        .into());
    }
    let g = eval_cfg.copula_grid;
    let grid: Vec<f64> = (1..=g).map(|i| (i as f64 - 0.5) / g as f64).collect();
    let mut rows = Vec::new();
    for (xi, x) in diagnostic_x(model, test, eval_cfg)?.into_iter().enumerate() {
        let points: Vec<(f64, f64)> = grid
            .iter()
            .flat_map(|&a| grid.iter().map(move |&b| (a, b)))
            .collect();
        let values = hybridflow::parallel::map_collect(&points, |&(a, b)| {
            eval::copula_density(model, &[a, b], &x)
        });
        for ((u1, u2), c) in points.into_iter().zip(values) {
            rows.push(CopulaRow {
                x_index: xi,
                u1,
                u2,
                c: c?,
            });
        }
    }
    let path = layout.metrics(&format!("{}.copula.csv", plan.run_id()))?;
    write_csv(&path, &rows)?;
    Ok(path)
}

#[derive(Serialize)]
struct RankRow {
    x_index: usize,
    i: usize,
    j: usize,
    spearman: f64,
}

/// Spearman correlations implied by `Λ(x)`.
pub fn rankcorr(
    plan: &RunPlan,
    layout: &Layout,
    model: &FlowModel,
    test: &Dataset,
    eval_cfg: &EvalConfig,
) -> Result<PathBuf> {
    let mut rows = Vec::new();
    for (xi, x) in diagnostic_x(model, test, eval_cfg)?.into_iter().enumerate() {
        let lambda = model.lambda(&x).ok_or_else(|| {
            hybridflow::Error::Unsupported(format!(
                "{} has no triangular Λ stage",
                model.spec().kind
            ))
        })?;
        let s = eval::spearman_from_lambda(&lambda);
        for (i, row) in s.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                rows.push(RankRow {
                    x_index: xi,
                    i,
                    j,
                    spearman: *v,
                });
            }
        }
    }
    let path = layout.metrics(&format!("{}.rankcorr.csv", plan.run_id()))?;
    write_csv(&path, &rows)?;
    Ok(path)
}

/// Draw `n` responses at `x`; written in the original data units when the
/// run recorded its preprocessing.
pub fn sample(
    plan: &RunPlan,
    layout: &Layout,
    n: usize,
    x: &[f64],
    draw_seed: u64,
) -> Result<PathBuf> {
    let model = load_model(plan, layout)?;
    if x.len() != model.features() {
        bail!(
            "the model expects {} feature value(s) (pass --x), got {}",
            model.features(),
            x.len()
        );
    }
    let run = plan.run_id();
    let pre = layout.model(&format!("{run}.preprocess"))?;
    let standardization: Option<Standardization> = if pre.is_file() {
        Some(serde_json::from_str(&std::fs::read_to_string(&pre)?)?)
    } else {
        None
    };
    let ys = model.sample(x, n, draw_seed)?;
    let path = layout.samples(&format!("{run}-n{n}-s{draw_seed}.csv"))?;
    let mut w = csv_writer(&path)?;
    w.write_record((1..=model.dim()).map(|j| format!("y{j}")))?;
    for y in ys {
        let y = match &standardization {
            Some(s) => s.invert(&y)?,
            None => y,
        };
        w.write_record(y.iter().map(|v| format!("{v:?}")))?;
    }
    w.flush()?;
    Ok(path)
}
