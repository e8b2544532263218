mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hybridflow::data::{Generator, DEFAULT_INNER_FACTOR, DEFAULT_NOISE};
use hybridflow::eval::{nll_table, TrialTable};

use config::{set_path, ConfigError, ExperimentConfig};
use run::Layout;

/// Environment variable holding the number of worker threads.
const WORKERS_ENV: &str = "HYBRIDFLOW_WORKERS";

#[derive(Parser)]
#[command(
    name = "hybridflow",
    version,
    about = "Hybrid normalizing flows for density regression"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Config file and overrides; flags win over the file, `--set` wins over flags.
#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set train.lr=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    #[arg(long, global = true)]
    outdir: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Synthetic dataset: moons or circles.
    #[arg(long, global = true)]
    dataset: Option<String>,
    /// Rows of the synthetic training draw.
    #[arg(long = "rows", global = true)]
    rows: Option<usize>,
    #[arg(long, global = true)]
    noise: Option<f64>,
    /// Model kind: mvn, mctm, cf, maf, hcf, hmaf.
    #[arg(long, global = true)]
    model: Option<String>,
    /// Transformation family of flow layers: bernstein or rqs.
    #[arg(long, global = true)]
    family: Option<String>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true, conflicts_with = "unconditional")]
    conditional: bool,
    #[arg(long, global = true)]
    unconditional: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write the training and test draws as CSV.
    Generate {
        /// Rows of the training draw (same as --rows).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Fit the configured model for every seed.
    Train {
        /// Save the initial model without fitting.
        #[arg(long)]
        init_only: bool,
    },
    /// Test NLL and configured diagnostics of trained runs.
    Eval,
    /// Draw samples from a trained run.
    Sample {
        #[arg(long)]
        n: usize,
        /// Feature values, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Vec<f64>,
        /// Sampling seed; defaults to the run seed.
        #[arg(long)]
        draw_seed: Option<u64>,
    },
    /// QQ data of the marginal stage against the base distribution.
    Qq,
    /// Implied copula density on a grid.
    Copula,
    /// Spearman correlations implied by Λ.
    Rankcorr,
    /// Train and evaluate every variant, conditioning mode and seed; write the NLL table.
    Sweep,
}

fn build_config(common: &Common, rows_override: Option<usize>) -> Result<ExperimentConfig> {
    let (mut doc, dir) = ExperimentConfig::document(common.config.as_deref())?;
    let str_value = |s: &str| toml::Value::String(s.to_string());
    if let Some(o) = &common.outdir {
        set_path(&mut doc, "outdir", str_value(&o.to_string_lossy()))?;
    }
    if let Some(s) = common.seed {
        let seed = i64::try_from(s).context("seed must fit in a signed 64-bit integer")?;
        set_path(
            &mut doc,
            "seeds",
            toml::Value::Array(vec![toml::Value::Integer(seed)]),
        )?;
    }
    if let Some(name) = &common.dataset {
        let gen = match name.as_str() {
            "moons" => Generator::moons(16384),
            "circles" => Generator::circles(16384),
            other => bail!("unknown dataset `{other}` (expected moons or circles; use a config file for CSV data)"),
        };
        set_path(&mut doc, "dataset.name", str_value(name))?;
        set_path(&mut doc, "dataset.generator", toml::Value::try_from(&gen)?)?;
    }
    if let Some(n) = rows_override.or(common.rows) {
        set_path(
            &mut doc,
            "dataset.generator.n",
            toml::Value::Integer(n as i64),
        )?;
    }
    if let Some(noise) = common.noise {
        set_path(
            &mut doc,
            "dataset.generator.noise",
            toml::Value::Float(noise),
        )?;
    }
    // a partial generator table from flags needs its remaining defaults
    if let Some(toml::Value::Table(gen)) =
        doc.get_mut("dataset").and_then(|d| d.get_mut("generator"))
    {
        let name = gen
            .get("name")
            .and_then(|v| v.as_str())
            .unwrap_or("moons")
            .to_string();
        gen.entry("name")
            .or_insert_with(|| toml::Value::String(name.clone()));
        gen.entry("n").or_insert(toml::Value::Integer(16384));
        gen.entry("noise")
            .or_insert(toml::Value::Float(DEFAULT_NOISE));
        if name == "circles" {
            gen.entry("factor")
                .or_insert(toml::Value::Float(DEFAULT_INNER_FACTOR));
        }
    }
    if let Some(m) = &common.model {
        set_path(&mut doc, "model.kind", str_value(m))?;
    }
    if let Some(f) = &common.family {
        set_path(&mut doc, "model.family", str_value(f))?;
    }
    if let Some(e) = common.epochs {
        set_path(&mut doc, "train.epochs", toml::Value::Integer(e as i64))?;
    }
    if common.conditional || common.unconditional {
        set_path(
            &mut doc,
            "dataset.conditional",
            toml::Value::Boolean(common.conditional),
        )?;
    }
    config::apply_sets(&mut doc, &common.sets)?;
    let cfg = ExperimentConfig::from_table(doc, &dir)?;
    cfg.validate()?;
    Ok(cfg)
}

fn configure_workers() -> Result<()> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .with_context(|| format!("{WORKERS_ENV} must be a positive integer, got `{raw}`"))?;
    if n == 1 {
        hybridflow::parallel::set_sequential(true);
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot size the worker pool")?;
    }
    Ok(())
}

fn write_tables(layout: &Layout, table: &TrialTable) -> Result<()> {
    table.write_raw_csv(layout.metrics("nll_raw.csv")?)?;
    let summary = table.summary_csv()?;
    std::fs::write(layout.metrics("nll_table.csv")?, &summary)?;
    print!("{summary}");
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    let rows = match &cli.command {
        Command::Generate { n } => *n,
        _ => None,
    };
    let cfg = build_config(&cli.common, rows)?;
    let layout = Layout::new(&cfg.outdir);
    match cli.command {
        Command::Generate { .. } => {
            for plan in cfg.plans()? {
                let dir = run::write_data(&plan, &layout)?;
                println!("{}", dir.display());
            }
        }
        Command::Train { init_only } => {
            for plan in cfg.plans()? {
                let t = run::train(&plan, &layout, init_only)?;
                if t.report.best_epoch > 0 {
                    println!(
                        "{}: best epoch {} of {}, validation NLL {:.4}",
                        t.run_id,
                        t.report.best_epoch,
                        t.report.epochs.len(),
                        t.report.best_val_nll
                    );
                } else {
                    println!("{}: initial model saved", t.run_id);
                }
            }
        }
        Command::Eval => {
            let mut rows = Vec::new();
            for plan in cfg.plans()? {
                let m = run::evaluate(&plan, &layout, &cfg.eval)?;
                println!("{}: test NLL {:.4}", m.run_id, m.test_nll);
                rows.push(m.row());
            }
            if rows.len() > 1 {
                write_tables(&layout, &nll_table(rows))?;
            }
        }
        Command::Sample { n, x, draw_seed } => {
            if n == 0 {
                bail!("--n must be positive");
            }
            for plan in cfg.plans()? {
                let path = run::sample(&plan, &layout, n, &x, draw_seed.unwrap_or(plan.seed))?;
                println!("{}", path.display());
            }
        }
        Command::Qq | Command::Copula | Command::Rankcorr => {
            for plan in cfg.plans()? {
                let model = run::load_model(&plan, &layout)?;
                let (_, test) = run::load_data(&plan)?;
                match cli.command {
                    Command::Qq => {
                        for s in run::qq(&plan, &layout, &model, &test, &cfg.eval)? {
                            println!(
                                "{}: x{:?} dim {}: max QQ deviation {:.4}, KS p {:.4}",
                                plan.run_id(),
                                s.x,
                                s.dim + 1,
                                s.max_deviation,
                                s.ks_p_value
                            );
                        }
                    }
                    Command::Copula => {
                        println!(
                            "{}",
                            run::copula(&plan, &layout, &model, &test, &cfg.eval)?.display()
                        )
                    }
                    _ => println!(
                        "{}",
                        run::rankcorr(&plan, &layout, &model, &test, &cfg.eval)?.display()
                    ),
                }
            }
        }
        Command::Sweep => sweep(&cfg, &layout)?,
    }
    Ok(())
}

fn sweep(cfg: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let plans = cfg.plans()?;
    eprintln!(
        "sweep: {} runs on {} worker(s)",
        plans.len(),
        hybridflow::parallel::workers()
    );
    let results = hybridflow::parallel::map_collect(&plans, |plan| {
        let t = run::train(plan, layout, false)?;
        let m = run::metrics(plan, &t.model, &t.test, Some(&t.report))?;
        run::write_json(&layout.metrics(&format!("{}.json", m.run_id))?, &m)?;
        eprintln!("{}: test NLL {:.4}", m.run_id, m.test_nll);
        Ok::<_, anyhow::Error>(m)
    });
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (plan, r) in plans.iter().zip(results) {
        match r {
            Ok(m) => rows.push(m.row()),
            Err(e) => failures.push(format!("{}: {e:#}", plan.run_id())),
        }
    }
    write_tables(layout, &nll_table(rows))?;
    if !failures.is_empty() {
        bail!(
            "{} run(s) failed:\n  {}",
            failures.len(),
            failures.join("\n  ")
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_workers() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(c) = e.downcast_ref::<ConfigError>() {
                eprint!("error: {c}");
                return ExitCode::from(2);
            }
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
