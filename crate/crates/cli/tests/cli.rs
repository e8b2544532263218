use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn hybridflow(outdir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hybridflow"))
        .arg("--outdir")
        .arg(outdir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

fn find(root: &Path, suffix: &str) -> PathBuf {
    let hits: Vec<PathBuf> = files_under(root)
        .into_iter()
        .filter(|p| p.to_string_lossy().ends_with(suffix))
        .collect();
    assert_eq!(
        hits.len(),
        1,
        "expected one file ending in {suffix}: {hits:?}"
    );
    hits.into_iter().next().unwrap()
}

/// Contents of every reproducible output, keyed by path relative to `root`.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    files_under(root)
        .into_iter()
        .filter(|p| !p.to_string_lossy().ends_with(".meta.json"))
        .map(|p| {
            (
                p.strip_prefix(root).unwrap().to_path_buf(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn generate_writes_the_benchmark_draw() {
    let dir = tempfile::tempdir().unwrap();
    ok(hybridflow(
        dir.path(),
        &[
            "--dataset",
            "moons",
            "--seed",
            "0",
            "generate",
            "--n",
            "16384",
        ],
    ));
    let train = std::fs::read_to_string(find(dir.path(), "train.csv")).unwrap();
    let lines: Vec<&str> = train.lines().collect();
    assert_eq!(lines[0], "y1,y2,x");
    assert_eq!(lines.len() - 1, 16384);
    let inner = lines[1..].iter().filter(|l| l.ends_with(",1.0")).count();
    assert_eq!(inner, 8192);
}

#[test]
fn identity_model_nll_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let common = [
        "--rows", "2000", "--model", "cf", "--family", "rqs", "--seed", "3",
    ];
    ok(hybridflow(
        dir.path(),
        &[&common[..], &["train", "--init-only"]].concat(),
    ));
    ok(hybridflow(dir.path(), &[&common[..], &["eval"]].concat()));

    let metrics: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(find(&dir.path().join("metrics"), ".json")).unwrap(),
    )
    .unwrap();
    let nll = metrics["test_nll"].as_f64().unwrap();

    let model_path = files_under(&dir.path().join("model"))
        .into_iter()
        .find(|p| !p.to_string_lossy().contains("preprocess"))
        .unwrap();
    let model: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(model_path).unwrap()).unwrap();
    let loc: Vec<f64> = serde_json::from_value(model["spec"]["loc"].clone()).unwrap();
    let scale: Vec<f64> = serde_json::from_value(model["spec"]["scale"].clone()).unwrap();

    let test = std::fs::read_to_string(find(dir.path(), "test.csv")).unwrap();
    let rows: Vec<Vec<f64>> = test
        .lines()
        .skip(1)
        .map(|l| l.split(',').take(2).map(|c| c.parse().unwrap()).collect())
        .collect();
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let expected = rows
        .iter()
        .map(|r| {
            (0..2)
                .map(|j| {
                    let z = (r[j] - loc[j]) / scale[j];
                    0.5 * z * z + half_ln_2pi + scale[j].ln()
                })
                .sum::<f64>()
        })
        .sum::<f64>()
        / rows.len() as f64;
    assert!((nll - expected).abs() < 1e-9, "{nll} vs {expected}");
}

#[test]
fn sampling_twice_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let common = [
        "--rows", "1500", "--model", "hcf", "--epochs", "1", "--seed", "7",
    ];
    ok(hybridflow(dir.path(), &[&common[..], &["train"]].concat()));
    let first = ok(hybridflow(
        dir.path(),
        &[&common[..], &["sample", "--n", "1000"]].concat(),
    ));
    let path = PathBuf::from(first.trim());
    let a = std::fs::read(&path).unwrap();
    assert_eq!(String::from_utf8_lossy(&a).lines().count(), 1001);
    ok(hybridflow(
        dir.path(),
        &[&common[..], &["sample", "--n", "1000"]].concat(),
    ));
    assert_eq!(std::fs::read(&path).unwrap(), a);
}

#[test]
fn config_errors_name_their_fields() {
    let dir = tempfile::tempdir().unwrap();
    let out = hybridflow(
        dir.path(),
        &[
            "--set",
            "train.patience=0",
            "--set",
            "seeds=[]",
            "--set",
            "model.kind=nope",
            "train",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for field in ["train.patience", "seeds", "model.kind"] {
        assert!(err.contains(field), "missing {field} in:\n{err}");
    }
    assert!(!dir.path().join("model").exists());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nlearning_rate = 0.1\n").unwrap();
    let out = hybridflow(dir.path(), &["--config", cfg.to_str().unwrap(), "train"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn eval_without_training_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = hybridflow(dir.path(), &["--rows", "500", "eval"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train"));
}

fn write_file_config(dir: &Path, rows: impl Fn(usize) -> String, preprocess: &str) -> PathBuf {
    let mut csv = String::from("a,b\n");
    for i in 0..400 {
        csv.push_str(&rows(i));
        csv.push('\n');
    }
    std::fs::write(dir.join("data.csv"), csv).unwrap();
    let cfg = dir.join("c.toml");
    std::fs::write(
        &cfg,
        format!(
            "[dataset]\nname = \"table\"\nfile = \"data.csv\"\nresponse = [\"a\", \"b\"]\n{preprocess}\n\
             [model]\nkind = \"mvn\"\n[train]\nepochs = 3\n"
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn csv_dataset_trains_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_file_config(
        dir.path(),
        |i| format!("{},{}", (i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()),
        "",
    );
    let cfg = cfg.to_string_lossy().into_owned();
    ok(hybridflow(dir.path(), &["--config", &cfg, "train"]));
    let out = ok(hybridflow(dir.path(), &["--config", &cfg, "eval"]));
    assert!(out.contains("test NLL"), "{out}");
    find(&dir.path().join("model"), ".preprocess.json");
}

#[test]
fn diverging_training_keeps_a_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    // every fourth row overflows the squared norm of the base density
    let cfg = write_file_config(
        dir.path(),
        |i| {
            if i % 4 == 0 {
                "1e200,0".into()
            } else {
                format!("{},{}", i % 7, i % 5)
            }
        },
        "preprocess = { method = \"none\" }",
    );
    let out = hybridflow(dir.path(), &["--config", &cfg.to_string_lossy(), "train"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("partial report"));
    find(&dir.path().join("model"), ".partial.json");
    find(&dir.path().join("report"), ".epochs.csv");
}

const SWEEP: &str = r#"
seeds = [0, 1]

[dataset.generator]
name = "moons"
n = 1200
noise = 0.05

[model]
hidden = [8]
marginal_order = 20

[train]
epochs = 2
batch_size = 256
lr = 0.01

[eval]
diagnostics = ["qq", "rankcorr"]
qq_samples = 500

[[variants]]
label = "MVN"
model = { kind = "mvn" }
conditional = [false, true]

[[variants]]
label = "MCTM"
model = { kind = "mctm" }
conditional = [false, true]

[[variants]]
label = "HCF(S)"
model = { kind = "hcf", family = "rqs" }
conditional = [false, true]
"#;

#[test]
fn sweep_writes_table_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.toml");
    std::fs::write(&cfg, SWEEP).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let printed = ok(hybridflow(
        &a,
        &["--config", cfg.to_str().unwrap(), "sweep"],
    ));
    ok(hybridflow(
        &b,
        &["--config", cfg.to_str().unwrap(), "sweep"],
    ));

    let table = std::fs::read_to_string(a.join("metrics/nll_table.csv")).unwrap();
    assert_eq!(printed, table);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "model,moons unconditional,moons conditional");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("HCF(S),"));
    let raw = std::fs::read_to_string(a.join("metrics/nll_raw.csv")).unwrap();
    assert_eq!(raw.lines().count(), 1 + 3 * 2 * 2);

    assert_eq!(snapshot(&a), snapshot(&b));

    // eval over the swept runs reproduces the table and adds diagnostics
    ok(hybridflow(&a, &["--config", cfg.to_str().unwrap(), "eval"]));
    assert_eq!(
        std::fs::read_to_string(a.join("metrics/nll_table.csv")).unwrap(),
        table
    );
    let outputs = files_under(&a.join("metrics"));
    let count = |suffix: &str| {
        outputs
            .iter()
            .filter(|p| p.to_string_lossy().ends_with(suffix))
            .count()
    };
    assert_eq!(count(".rankcorr.csv"), 4);
    assert_eq!(count(".qq.csv"), 12);
}
