use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chda_core::io::load_field;
use chda_workbench::svg::title_values;

const SMALL: &str = r#"
seed = 11
[grid]
nx = 8
ny = 8
dx = 5.0
dy = 5.0
thickness = 10.0
[sim]
n_reports = 4
[esmda]
n_super = 40
[experiment]
ensemble_sizes = [12]
methods = ["none", "gc", "po", "ml-linear"]
data_match_ne = 12
[diffusion]
n_train = 40
bounds = [1.0, 4.0]
[diffusion.network]
channels = 4
blocks = 1
embed_dim = 4
[diffusion.train]
epochs = 3
batch_size = 8
optimizer = "adam"
lr_max = 0.003
lr_min = 0.0001
[diffusion.sampler]
kind = "pc"
steps = 40
snr = 0.16
[diffusion.posterior]
spacing = 0
steps = 40
snr = 0.16
"#;

fn chda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chda"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let o = chda(args);
    assert!(
        o.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn setup() -> (tempfile::TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let c = cfg.to_str().unwrap().to_string();
    (dir, c)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files_with_ext(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .collect();
    v.sort();
    v
}

fn same_tree(a: &Path, b: &Path, rel: &str) {
    let fa = files_with_ext(&a.join(rel), "chda");
    let fb = files_with_ext(&b.join(rel), "chda");
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(
            fs::read(x).unwrap(),
            fs::read(y).unwrap(),
            "{}",
            x.display()
        );
    }
}

#[test]
fn generate_prior_writes_members_deterministically() {
    let (dir, cfg) = setup();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&[
            "--config",
            &cfg,
            "--out",
            s(out),
            "generate-prior",
            "--n",
            "50",
        ]);
    }
    assert_eq!(files_with_ext(&a.join("ensembles/prior"), "chda").len(), 50);
    assert!(a.join("manifest").exists() && a.join("config.snapshot").exists());
    same_tree(&a, &b, "ensembles/prior");
    let c = dir.path().join("c");
    ok(&[
        "--config",
        &cfg,
        "--seed",
        "12",
        "--out",
        s(&c),
        "generate-prior",
        "--n",
        "3",
    ]);
    let first = |d: &Path| fs::read(d.join("ensembles/prior/member_0000.chda")).unwrap();
    assert_ne!(first(&a), first(&c));
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[experiment]\nensemble_size = [50]\n").unwrap();
    let o = chda(&[
        "--config",
        s(&bad),
        "--out",
        s(&dir.path().join("o")),
        "generate-prior",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown field"));
    let o = chda(&[
        "--config",
        s(&dir.path().join("nope.toml")),
        "generate-prior",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

fn losses(path: &Path) -> Vec<(f64, f64)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<f64> = l.split(',').map(|v| v.parse().unwrap()).collect();
            (f[1], f[2])
        })
        .collect()
}

#[test]
fn train_score_resumes_exactly_and_tracks_best() {
    let (dir, cfg) = setup();
    let full = dir.path().join("full");
    let part = dir.path().join("part");
    let rest = dir.path().join("rest");
    ok(&["--config", &cfg, "--out", s(&full), "train-score"]);
    ok(&[
        "--config",
        &cfg,
        "--out",
        s(&part),
        "train-score",
        "--stop-after",
        "1",
    ]);
    assert_eq!(losses(&part.join("loss.csv")).len(), 1);
    let ck = part.join("checkpoint.chck");
    ok(&[
        "--config",
        &cfg,
        "--out",
        s(&rest),
        "train-score",
        "--resume",
        s(&ck),
    ]);
    let a = losses(&full.join("loss.csv"));
    let b = losses(&rest.join("loss.csv"));
    assert_eq!(a.len(), 3);
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert!((x.0 - y.0).abs() <= 1e-10 * x.0.abs(), "{x:?} vs {y:?}");
    }
    let mut run_min = f64::INFINITY;
    for &(loss, best) in &a {
        run_min = run_min.min(loss);
        assert_eq!(best, run_min);
    }
    assert_eq!(
        fs::read(full.join("score.chsw")).unwrap(),
        fs::read(rest.join("score.chsw")).unwrap()
    );
}

#[test]
fn train_score_reports_missing_dataset() {
    let (dir, cfg) = setup();
    let o = chda(&[
        "--config",
        &cfg,
        "--out",
        s(&dir.path().join("t")),
        "train-score",
        "--dataset",
        "/no/such/set.chen",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not found"));
}

#[test]
fn trained_weights_drive_the_sampler() {
    let (dir, cfg) = setup();
    let prior = dir.path().join("prior");
    let t = dir.path().join("t");
    ok(&[
        "--config",
        &cfg,
        "--out",
        s(&prior),
        "generate-prior",
        "--n",
        "30",
    ]);
    ok(&[
        "--config",
        &cfg,
        "--out",
        s(&t),
        "train-score",
        "--dataset",
        s(&prior.join("ensembles/prior")),
    ]);
    let w = t.join("score.chsw");
    let out = dir.path().join("s");
    ok(&[
        "--config",
        &cfg,
        "--out",
        s(&out),
        "sample",
        "--n",
        "4",
        "--mode",
        "ode",
        "--weights",
        s(&w),
    ]);
    assert_eq!(
        files_with_ext(&out.join("ensembles/samples"), "chda").len(),
        4
    );
    assert!(out.join("diagnostics.csv").exists());
}

#[test]
fn sample_is_deterministic_and_clipped() {
    let (dir, cfg) = setup();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&[
            "--config",
            &cfg,
            "--out",
            s(out),
            "sample",
            "--n",
            "5000",
            "--mode",
            "ode",
            "--analytic",
            "gaussian:2.5:1.0",
        ]);
    }
    let files = files_with_ext(&a.join("ensembles/samples"), "chda");
    assert_eq!(files.len(), 5000);
    let (mut clipped_lo, mut clipped_hi) = (false, false);
    for f in &files {
        for &v in load_field(f).unwrap().values() {
            let k = 10f64.powf(v);
            assert!((10.0 - 1e-9..=1e4 + 1e-6).contains(&k), "{k}");
            clipped_lo |= v == 1.0;
            clipped_hi |= v == 4.0;
        }
    }
    assert!(clipped_lo && clipped_hi);
    same_tree(&a, &b, "ensembles/samples");
}

#[test]
fn posterior_without_data_reuses_pc_machinery() {
    let (dir, cfg) = setup();
    let pc = dir.path().join("pc");
    let post = dir.path().join("post");
    let spec = "gaussian:2.5:0.09";
    ok(&[
        "--config",
        &cfg,
        "--out",
        s(&pc),
        "sample",
        "--n",
        "6",
        "--mode",
        "pc",
        "--analytic",
        spec,
    ]);
    ok(&[
        "--config",
        &cfg,
        "--out",
        s(&post),
        "sample",
        "--n",
        "6",
        "--mode",
        "posterior",
        "--analytic",
        spec,
    ]);
    same_tree(&pc, &post, "ensembles/samples");
    assert_eq!(
        fs::read_to_string(post.join("hard_data.csv")).unwrap(),
        "cell,i,j,value\n"
    );
}

#[test]
fn posterior_honours_hard_data() {
    let (dir, cfg) = setup();
    let text = fs::read_to_string(&cfg).unwrap().replace(
        "spacing = 0\nsteps = 40",
        "spacing = 4\nsigma_obs = 0.1\ngamma = 1.0\nsteps = 400",
    );
    fs::write(&cfg, text).unwrap();
    let out = dir.path().join("post");
    ok(&[
        "--config",
        &cfg,
        "--out",
        s(&out),
        "sample",
        "--n",
        "4",
        "--mode",
        "posterior",
        "--analytic",
        "gaussian:2.5:0.25",
    ]);
    let hard = fs::read_to_string(out.join("hard_data.csv")).unwrap();
    assert_eq!(hard.lines().count(), 5);
    for line in fs::read_to_string(out.join("conditioning.csv"))
        .unwrap()
        .lines()
        .skip(1)
    {
        let rmse: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(rmse < 0.25, "{rmse}");
    }
}

fn numbers(csv: &str) -> HashSet<String> {
    csv.lines()
        .flat_map(|l| l.split(',').map(str::to_string))
        .collect()
}

#[test]
fn experiment_run_and_report_contract() {
    let (dir, cfg) = setup();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&["--config", &cfg, "--out", s(out), "run-experiment"]);
    }
    let records = fs::read(a.join("records.csv")).unwrap();
    assert_eq!(records, fs::read(b.join("records.csv")).unwrap());

    // Truth is held out of the prior.
    let truth = load_field(a.join("truth.chda")).unwrap();
    let members = files_with_ext(&a.join("ensembles/prior"), "chda");
    assert_eq!(members.len(), 12);
    assert!(members.iter().all(|m| load_field(m).unwrap() != truth));

    let table = fs::read_to_string(a.join("report/nv_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 5);
    assert!(table.starts_with("method,12\nnone,"));

    let report = a.join("report");
    let svgs = files_with_ext(&report, "svg");
    assert!(svgs.iter().any(|p| p
        .file_name()
        .unwrap()
        .to_str()
        .unwrap()
        .starts_with("localization_ne12")));
    assert!(svgs.iter().any(|p| p
        .file_name()
        .unwrap()
        .to_str()
        .unwrap()
        .starts_with("data_match_ne12")));
    for svg in &svgs {
        let csv = svg.with_extension("csv");
        let known = numbers(&fs::read_to_string(&csv).unwrap());
        for v in title_values(&fs::read_to_string(svg).unwrap()) {
            assert!(
                known.contains(&v),
                "{} has {v} absent from its CSV",
                svg.display()
            );
        }
    }

    let before: Vec<(PathBuf, Vec<u8>)> = fs::read_dir(&report)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.clone(), fs::read(&p).unwrap()))
        .collect();
    ok(&["report", s(&a)]);
    for (p, bytes) in &before {
        assert_eq!(&fs::read(p).unwrap(), bytes, "{}", p.display());
    }
    for (p, bytes) in &before {
        let twin = b.join("report").join(p.file_name().unwrap());
        assert_eq!(&fs::read(twin).unwrap(), bytes);
    }

    let manifest = fs::read_to_string(a.join("manifest")).unwrap();
    assert!(manifest.contains("records.csv") && manifest.contains("config_hash"));
}

#[test]
fn report_on_empty_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = chda(&["report", s(dir.path())]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no records"));
}
