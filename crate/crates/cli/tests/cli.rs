use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use wsadapt::student::Checkpoint;

const TINY: &str = r#"
preset = "desk"

[arch]
patch = 16
conv = [{ channels = 4, kernel = 4, stride = 2 }]
dense = [16]
recurrent = 0

[train]
workers = 2
chunk_len = 6
n_chunks = 2
curriculum = [2, 4]
max_iterations = 4
eval_every = 2
schedule = "round-robin"
"#;

fn wsadapt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wsadapt"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = wsadapt(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Fails, printing exactly one machine-readable line; returns its kind.
fn fails(dir: &Path, args: &[&str]) -> String {
    let out = wsadapt(dir, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8_lossy(&out.stderr);
    let line = err
        .lines()
        .find(|l| l.starts_with("error: "))
        .unwrap_or_else(|| panic!("no error line in {err:?}"));
    assert!(line.contains(" msg="), "{line}");
    line.trim_start_matches("error: kind=")
        .split(' ')
        .next()
        .unwrap()
        .to_string()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn count_dirs(p: &Path) -> usize {
    fs::read_dir(p)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().is_dir())
        .count()
}

/// `(video, ss, ps)` rows of a results CSV, including the `mean` row.
fn results(path: &Path) -> Vec<(String, f64, f64)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("video,"))
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (
                f[0].to_string(),
                f[1].parse().unwrap(),
                f[2].parse().unwrap(),
            )
        })
        .collect()
}

fn setup() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("tiny.toml"), TINY).unwrap();
    ok(
        d,
        &[
            "gen-data", "--domain", "source", "--out", "src", "--train", "3", "--val", "1",
            "--test", "0", "--len", "12", "--seed", "3",
        ],
    );
    ok(
        d,
        &[
            "gen-data",
            "--domain",
            "thermal-like",
            "--out",
            "th",
            "--train",
            "3",
            "--val",
            "1",
            "--test",
            "2",
            "--len",
            "12",
            "--seed",
            "4",
        ],
    );
    tmp
}

#[test]
fn gen_data_counts_force_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let args = [
        "gen-data",
        "--domain",
        "drone-like",
        "--train",
        "40",
        "--test",
        "10",
        "--seed",
        "7",
        "--len",
        "3",
        "--out",
        "nested/new/drone",
    ];
    ok(d, &args);
    let root = d.join("nested/new/drone");
    assert_eq!(
        count_dirs(&root.join("train")) + count_dirs(&root.join("test")),
        50
    );
    let manifest = fs::read_to_string(root.join("manifest.toml")).unwrap();
    assert!(manifest.starts_with("# config_hash=") && manifest.contains(" seed=7 "));
    assert_eq!(manifest.matches("[[videos]]").count(), 50);
    assert!(manifest.contains("[spec]"));

    let before = tree(&root);
    assert_eq!(fails(d, &args), "exists");
    assert_eq!(
        tree(&root),
        before,
        "refused run must not touch the dataset"
    );

    let mut forced = args.to_vec();
    forced.push("--force");
    ok(d, &forced);
    assert_eq!(tree(&root), before);
}

#[test]
fn eval_oracle_sparse_and_mean() {
    let tmp = setup();
    let d = tmp.path();
    ok(
        d,
        &[
            "eval",
            "--data",
            "th",
            "--domain",
            "thermal-like",
            "--tracker",
            "oracle",
            "--out",
            "oracle",
        ],
    );
    let rows = results(&d.join("oracle/results.csv"));
    assert!(rows.iter().all(|r| r.1 == 1.0 && r.2 == 1.0), "{rows:?}");
    assert!(
        d.join("oracle/success.svg").is_file() && d.join("oracle/precision_curve.csv").is_file()
    );

    ok(
        d,
        &[
            "eval",
            "--data",
            "th",
            "--domain",
            "thermal-like",
            "--tracker",
            "stay",
            "--out",
            "dense",
        ],
    );
    ok(
        d,
        &[
            "eval",
            "--data",
            "th",
            "--domain",
            "thermal-like",
            "--tracker",
            "stay",
            "--out",
            "k1",
            "--sparse-gt",
            "1",
        ],
    );
    let dense = results(&d.join("dense/results.csv"));
    assert_eq!(dense, results(&d.join("k1/results.csv")));

    // Aggregate row is the plain mean of the per-video rows.
    let (per, mean) = dense.split_at(dense.len() - 1);
    assert_eq!(per.len(), 2);
    let hand_ss = per.iter().map(|r| r.1).sum::<f64>() / per.len() as f64;
    let hand_ps = per.iter().map(|r| r.2).sum::<f64>() / per.len() as f64;
    assert_eq!(mean[0].0, "mean");
    assert!((mean[0].1 - hand_ss).abs() < 2e-6 && (mean[0].2 - hand_ps).abs() < 2e-6);

    let curve = fs::read_to_string(d.join("dense/success_curve.csv")).unwrap();
    assert!(curve.starts_with("# config_hash=") && curve.contains("threshold,fraction"));
}

#[test]
fn eval_errors() {
    let tmp = setup();
    let d = tmp.path();
    assert_eq!(
        fails(d, &["eval", "--data", "th", "--checkpoint", "none.ckpt"]),
        "missing"
    );
    assert_eq!(fails(d, &["eval", "--data", "th"]), "missing");
    assert_eq!(
        fails(d, &["eval", "--data", "th", "--tracker", "teacher:nobody"]),
        "usage"
    );
    assert_eq!(
        fails(d, &["eval", "--data", "nowhere", "--tracker", "oracle"]),
        "missing"
    );
    let ok_teacher = ok(
        d,
        &[
            "eval",
            "--data",
            "th",
            "--domain",
            "thermal-like",
            "--tracker",
            "teacher:atom-like",
            "--out",
            "t",
            "--no-svg",
        ],
    );
    assert!(ok_teacher.contains("tracker=teacher:atom-like"));
    assert!(!d.join("t/success.svg").exists());
}

#[test]
fn pretrain_adapt_eval_plot_pipeline() {
    let tmp = setup();
    let d = tmp.path();
    ok(
        d,
        &[
            "pretrain",
            "--config",
            "tiny.toml",
            "--data",
            "src",
            "--out",
            "pre",
            "--seed",
            "5",
        ],
    );
    let pre = Checkpoint::load(&d.join("pre/pretrained.ckpt")).unwrap();
    assert_eq!(pre.meta_value("seed"), Some("5"));
    assert_eq!(pre.meta_value("command"), Some("pretrain"));

    let adapt = [
        "adapt",
        "--config",
        "tiny.toml",
        "--data",
        "th",
        "--domain",
        "thermal-like",
        "--pretrained",
        "pre/pretrained.ckpt",
        "--out",
        "ad",
        "--seed",
        "6",
    ];
    ok(d, &adapt);
    for f in ["adapted.ckpt", "final.ckpt", "train_log.csv", "config.toml"] {
        assert!(d.join("ad").join(f).is_file(), "{f}");
    }
    let best = Checkpoint::load(&d.join("ad/adapted.ckpt")).unwrap();
    let hash = best.meta_value("config_hash").unwrap().to_string();
    assert_eq!(best.meta_value("seed"), Some("6"));
    let log = fs::read_to_string(d.join("ad/train_log.csv")).unwrap();
    assert!(log.starts_with(&format!("# config_hash={hash} seed=6 ")));
    let final_ck = Checkpoint::load(&d.join("ad/final.ckpt")).unwrap();
    assert_eq!(
        final_ck.adam.step,
        4 * 2,
        "one optimizer step per submission"
    );

    ok(
        d,
        &[
            "eval",
            "--config",
            "tiny.toml",
            "--data",
            "th",
            "--domain",
            "thermal-like",
            "--checkpoint",
            "ad/adapted.ckpt",
            "--out",
            "ev",
        ],
    );
    assert!(fs::read_to_string(d.join("ev/success.svg"))
        .unwrap()
        .contains("config_hash="));

    ok(d, &["plot", "ad/train_log.csv", "--out", "one.svg"]);
    let one = fs::read_to_string(d.join("one.svg")).unwrap();
    assert_eq!(one.matches("<polyline").count(), 1);
    assert!(one.contains(&format!("config_hash={hash}")));
    ok(d, &["plot", "ad/train_log.csv", "--out", "again.svg"]);
    assert_eq!(one, fs::read_to_string(d.join("again.svg")).unwrap());

    ok(
        d,
        &[
            "adapt",
            "--config",
            "tiny.toml",
            "--data",
            "th",
            "--domain",
            "thermal-like",
            "--from-scratch",
            "--rl-only",
            "--out",
            "rl",
        ],
    );
    let rl_log = fs::read_to_string(d.join("rl/train_log.csv")).unwrap();
    let kd_column: Vec<&str> = rl_log
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("iteration"))
        .map(|l| l.split(',').nth(2).unwrap())
        .collect();
    assert!(
        kd_column.iter().all(|c| c.is_empty()),
        "RL-only run logged a KD loss"
    );

    ok(
        d,
        &[
            "plot",
            "ad/train_log.csv",
            "rl/train_log.csv",
            "--labels",
            "combined,rl",
            "--out",
            "cmp.svg",
        ],
    );
    let cmp = fs::read_to_string(d.join("cmp.svg")).unwrap();
    assert_eq!(cmp.matches("<polyline").count(), 2);
    assert!(cmp.contains(">combined<") && cmp.contains(">rl<"));
}

#[test]
fn adapt_is_reproducible_and_runs_average() {
    let tmp = setup();
    let d = tmp.path();
    let base = [
        "adapt",
        "--config",
        "tiny.toml",
        "--data",
        "th",
        "--domain",
        "thermal-like",
        "--from-scratch",
    ];
    let run = |out: &str| {
        let mut a = base.to_vec();
        a.extend(["--out", out]);
        ok(d, &a);
        let mut files = tree(&d.join(out));
        // Records the output directory itself.
        files.remove(Path::new("config.toml"));
        files
    };
    assert_eq!(run("a"), run("b"));

    let mut a = base.to_vec();
    a.extend(["--out", "multi", "--runs", "2", "--seed", "10"]);
    ok(d, &a);
    let summary = fs::read_to_string(d.join("multi/runs.csv")).unwrap();
    let rows: Vec<Vec<&str>> = summary
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 3);
    assert_eq!((rows[0][1], rows[1][1]), ("10", "11"));
    let hand = (rows[0][3].parse::<f64>().unwrap() + rows[1][3].parse::<f64>().unwrap()) / 2.0;
    assert!((rows[2][3].parse::<f64>().unwrap() - hand).abs() < 2e-6);
    assert!(d.join("multi/run-2/adapted.ckpt").is_file());
}

#[test]
fn config_errors_stop_before_any_work() {
    let tmp = setup();
    let d = tmp.path();
    let args = [
        "adapt",
        "--config",
        "tiny.toml",
        "--data",
        "th",
        "--from-scratch",
        "--out",
        "never",
    ];
    let with = |extra: &[&'static str]| {
        let mut a = args.to_vec();
        a.extend_from_slice(extra);
        a
    };
    assert_eq!(fails(d, &with(&["--set", "train.workers=3"])), "config");
    assert_eq!(fails(d, &with(&["--set", "train.no_such_key=1"])), "config");
    assert_eq!(
        fails(d, &with(&["--domain", "moon-like"])),
        "invalid_argument"
    );
    assert_eq!(fails(d, &with(&["--pretrained", "x.ckpt"])), "usage");
    assert!(!d.join("never").exists());
    assert_eq!(
        fails(
            d,
            &["adapt", "--data", "th", "--pretrained", "missing.ckpt"]
        ),
        "missing"
    );
    assert_eq!(fails(d, &["frobnicate"]), "usage");
}

#[test]
fn flags_override_config_keys() {
    let tmp = setup();
    let d = tmp.path();
    fs::write(
        d.join("seeded.toml"),
        format!("seed = 3\nout = \"from-config\"\n{TINY}"),
    )
    .unwrap();
    ok(
        d,
        &[
            "eval",
            "--config",
            "seeded.toml",
            "--data",
            "th",
            "--tracker",
            "oracle",
            "--seed",
            "8",
        ],
    );
    let csv = fs::read_to_string(d.join("from-config/results.csv")).unwrap();
    assert!(csv.lines().next().unwrap().contains(" seed=8 "), "{csv}");
}

#[test]
fn plot_rejects_empty_and_malformed_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("empty.csv"), "").unwrap();
    assert_eq!(fails(d, &["plot", "empty.csv", "--out", "e.svg"]), "parse");
    assert!(!d.join("e.svg").exists());

    fs::write(
        d.join("header_only.csv"),
        "# config_hash=x seed=1\niteration,loss_rl,loss_kd,val_ss,val_ps,t_max,teacher_chosen\n",
    )
    .unwrap();
    assert_eq!(
        fails(d, &["plot", "header_only.csv", "--out", "e.svg"]),
        "parse"
    );
    assert!(!d.join("e.svg").exists());

    fs::write(d.join("bad.csv"), "threshold,fraction\n0,1\n0.5,oops\n").unwrap();
    let out = wsadapt(d, &["plot", "bad.csv", "--out", "e.svg"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.csv:3"));
    assert!(!d.join("e.svg").exists());

    fs::write(d.join("curve.csv"), "threshold,fraction\n0,1\n0.5,0.25\n").unwrap();
    ok(d, &["plot", "curve.csv", "--out", "sub/c.svg"]);
    assert!(d.join("sub/c.svg").is_file());
}
