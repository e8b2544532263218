use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hybridflow::data::{Generator, Preprocess, MOONS_REFERENCE_SD};
use hybridflow::flows::{ModelKind, ModelSpec};
use hybridflow::training::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Field-path validation failure; reported one path per line.
#[derive(Debug)]
pub struct ConfigError {
    pub problems: Vec<(String, String)>,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "invalid configuration:")?;
        for (path, msg) in &self.problems {
            writeln!(f, "  {path}: {msg}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Label used in tables.
    pub name: String,
    pub generator: Option<Generator>,
    pub file: Option<PathBuf>,
    pub test_file: Option<PathBuf>,
    pub response: Vec<String>,
    pub features: Vec<String>,
    /// Held-out fraction when `file` is given without `test_file`.
    pub test_fraction: f64,
    pub preprocess: Preprocess,
    pub conditional: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            name: "moons".into(),
            generator: Some(Generator::moons(16384)),
            file: None,
            test_file: None,
            response: Vec::new(),
            features: Vec::new(),
            test_fraction: 0.2,
            preprocess: Preprocess::Isotropic {
                target: MOONS_REFERENCE_SD,
            },
            conditional: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Diagnostics run by `eval` besides the test NLL: qq, copula, rankcorr.
    pub diagnostics: Vec<String>,
    /// Feature rows at which conditional diagnostics are evaluated; empty
    /// means the distinct feature rows of the test set (up to ten) or their
    /// mean.
    pub x: Vec<Vec<f64>>,
    pub qq_samples: usize,
    pub qq_probs: usize,
    pub copula_grid: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            diagnostics: Vec::new(),
            x: Vec::new(),
            qq_samples: 10_000,
            qq_probs: hybridflow::eval::DEFAULT_QQ_PROBS,
            copula_grid: 25,
        }
    }
}

/// One model column of a sweep; `model` keys override the base model table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub label: String,
    #[serde(default)]
    pub model: toml::Table,
    /// Conditioning modes to run; defaults to the dataset setting.
    #[serde(default)]
    pub conditional: Option<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub outdir: PathBuf,
    pub seeds: Vec<u64>,
    pub dataset: DatasetConfig,
    /// Partial model specification; dimensions and normalisation are taken
    /// from the data.
    pub model: toml::Table,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub variants: Vec<Variant>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            outdir: PathBuf::from("runs"),
            seeds: vec![0],
            dataset: DatasetConfig::default(),
            model: toml::Table::new(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            variants: Vec::new(),
        }
    }
}

/// A concrete job: one model variant, one conditioning mode, one seed.
#[derive(Debug, Clone, Serialize)]
pub struct RunPlan {
    pub label: String,
    pub conditional: bool,
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub model: toml::Table,
    pub train: TrainConfig,
}

fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

/// Apply `a.b.c=value` overrides; values are parsed as TOML, falling back to
/// a plain string.
pub fn apply_sets(doc: &mut toml::Table, sets: &[String]) -> Result<()> {
    for set in sets {
        let (path, raw) = set
            .split_once('=')
            .with_context(|| format!("override `{set}` is not of the form key=value"))?;
        let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        set_path(doc, path.trim(), value)?;
    }
    Ok(())
}

/// Set the dotted `path` in `doc`, creating intermediate tables.
pub fn set_path(doc: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let keys: Vec<&str> = path.split('.').collect();
    let mut table = doc;
    for k in &keys[..keys.len() - 1] {
        let entry = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .with_context(|| format!("cannot set `{path}`: `{k}` is not a table"))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    pub fn from_table(doc: toml::Table, base_dir: &Path) -> Result<Self> {
        let given = |key: &str| {
            doc.get("dataset")
                .and_then(|d| d.as_table())
                .is_some_and(|d| d.contains_key(key))
        };
        // file data replaces the synthetic defaults unless they are set explicitly
        let from_file = given("file");
        let keep_generator = given("generator");
        let keep_preprocess = given("preprocess");
        let mut cfg: ExperimentConfig =
            toml::Value::Table(doc)
                .try_into()
                .map_err(|e: toml::de::Error| {
                    anyhow::anyhow!("invalid configuration: {}", e.message())
                })?;
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base_dir.join(&*path);
                }
            }
        };
        resolve(&mut cfg.dataset.file);
        resolve(&mut cfg.dataset.test_file);
        if from_file {
            if !keep_generator {
                cfg.dataset.generator = None;
            }
            if !keep_preprocess {
                cfg.dataset.preprocess = Preprocess::Standardize;
            }
        }
        Ok(cfg)
    }

    /// Raw document of a config file (empty without a file) and the
    /// directory relative paths are resolved against.
    pub fn document(path: Option<&Path>) -> Result<(toml::Table, PathBuf)> {
        let Some(path) = path else {
            return Ok((toml::Table::new(), PathBuf::from(".")));
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let doc: toml::Table = toml::from_str(&text)
            .with_context(|| format!("{} is not valid TOML", path.display()))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((doc, dir))
    }

    /// Check everything that can be checked before touching data.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut bad = |p: &str, m: String| problems.push((p.to_string(), m));
        if self.seeds.is_empty() {
            bad("seeds", "must list at least one seed".into());
        }
        let ds = &self.dataset;
        match (&ds.generator, &ds.file) {
            (Some(_), Some(_)) => bad(
                "dataset",
                "give either `generator` or `file`, not both".into(),
            ),
            (None, None) => bad("dataset", "one of `generator` or `file` is required".into()),
            (None, Some(f)) => {
                if !f.is_file() {
                    bad("dataset.file", format!("{} does not exist", f.display()));
                }
                if ds.response.is_empty() {
                    bad(
                        "dataset.response",
                        "name at least one response column".into(),
                    );
                }
                if ds.conditional && ds.features.is_empty() {
                    bad(
                        "dataset.features",
                        "conditional runs need feature columns".into(),
                    );
                }
            }
            (Some(_), None) => {}
        }
        if let Some(f) = &ds.test_file {
            if !f.is_file() {
                bad(
                    "dataset.test_file",
                    format!("{} does not exist", f.display()),
                );
            }
        }
        if ds.test_file.is_none()
            && ds.file.is_some()
            && !(ds.test_fraction > 0.0 && ds.test_fraction < 1.0)
        {
            bad("dataset.test_fraction", "must lie in (0, 1)".into());
        }
        for (f, m) in self.train.problems() {
            bad(&format!("train.{f}"), m.to_string());
        }
        for d in &self.eval.diagnostics {
            if !["qq", "copula", "rankcorr"].contains(&d.as_str()) {
                bad("eval.diagnostics", format!("unknown diagnostic `{d}`"));
            }
        }
        if self.eval.qq_samples < 2 {
            bad("eval.qq_samples", "need at least two samples".into());
        }
        if self.eval.copula_grid == 0 {
            bad("eval.copula_grid", "must be positive".into());
        }
        for (i, v) in self.variants.iter().enumerate() {
            if v.label.trim().is_empty() {
                bad(&format!("variants[{i}].label"), "must not be empty".into());
            }
        }
        let mut labels: Vec<&str> = self.variants.iter().map(|v| v.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            bad("variants", "labels must be unique".into());
        }
        if let Err(e) = self.model_kind(&self.model) {
            bad("model.kind", e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { problems }.into())
        }
    }

    fn model_kind(&self, table: &toml::Table) -> Result<ModelKind> {
        match table.get("kind") {
            None => Ok(ModelSpec::default().kind),
            Some(toml::Value::String(s)) => s.parse().map_err(|e: hybridflow::Error| match e {
                hybridflow::Error::Config { message, .. } => anyhow::anyhow!(message),
                e => anyhow::anyhow!(e),
            }),
            Some(other) => bail!("expected a model name, got {other}"),
        }
    }

    /// All jobs of a sweep: variants × conditioning modes × seeds. Without
    /// variants the base model is the single variant.
    pub fn plans(&self) -> Result<Vec<RunPlan>> {
        let variants = if self.variants.is_empty() {
            let kind = self.model_kind(&self.model)?;
            vec![Variant {
                label: kind.name().to_string(),
                model: toml::Table::new(),
                conditional: None,
            }]
        } else {
            self.variants.clone()
        };
        let mut out = Vec::new();
        for v in &variants {
            let mut model = self.model.clone();
            merge(&mut model, &v.model);
            self.model_kind(&model)
                .with_context(|| format!("variant `{}`", v.label))?;
            let modes = v
                .conditional
                .clone()
                .unwrap_or_else(|| vec![self.dataset.conditional]);
            for &conditional in &modes {
                for &seed in &self.seeds {
                    let mut dataset = self.dataset.clone();
                    dataset.conditional = conditional;
                    out.push(RunPlan {
                        label: v.label.clone(),
                        conditional,
                        seed,
                        dataset,
                        model: model.clone(),
                        train: TrainConfig {
                            seed,
                            ..self.train.clone()
                        },
                    });
                }
            }
        }
        Ok(out)
    }
}

fn short_hash(value: &impl Serialize) -> String {
    let json = serde_json::to_string(value).expect("config serialises");
    hex::encode(&Sha256::digest(json.as_bytes())[..6])
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '-'
            }
        })
        .collect::<String>()
        .split('-')
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join("-")
}

impl RunPlan {
    /// Stable identifier derived from the effective configuration and seed.
    pub fn run_id(&self) -> String {
        format!(
            "{}-{}-s{}-{}",
            slug(&self.label),
            if self.conditional { "cond" } else { "uncond" },
            self.seed,
            short_hash(self)
        )
    }

    /// Identifier of the data draw, shared by all models on the same data.
    pub fn dataset_id(&self) -> String {
        let mut d = self.dataset.clone();
        // the conditioning mode selects columns, not rows
        d.conditional = false;
        format!(
            "{}-s{}-{}",
            slug(&d.name),
            self.seed,
            short_hash(&(&d, self.seed))
        )
    }

    /// Model specification for data of the given shape, before normalisation.
    pub fn model_spec(&self, dim: usize, features: usize) -> Result<ModelSpec> {
        let kind: ModelKind = match self.model.get("kind") {
            Some(toml::Value::String(s)) => s.parse()?,
            _ => ModelSpec::default().kind,
        };
        let mut base = toml::Table::try_from(ModelSpec::new(kind, dim, features))
            .context("model spec serialises to TOML")?;
        let mut user = self.model.clone();
        for fixed in ["dim", "features", "loc", "scale", "seed"] {
            user.remove(fixed);
        }
        merge(&mut base, &user);
        let mut spec: ModelSpec = toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| anyhow::anyhow!("model: {}", e.message()))?;
        spec.seed = self.seed;
        if let Err(hybridflow::Error::Config { fields, message }) = spec.validate() {
            return Err(ConfigError {
                problems: fields
                    .into_iter()
                    .map(|f| (format!("model.{f}"), message.clone()))
                    .collect(),
            }
            .into());
        }
        Ok(spec)
    }
}
