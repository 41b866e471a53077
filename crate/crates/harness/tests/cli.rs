use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_debinn");

fn debinn(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(cwd).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL_GD: &str = r#"
name = "cli"
optimizer = "gd"
seeds = [0]

[dataset.two_moons]
train_counts = [25, 25]
test_counts = [10, 10]

[network]
hidden_widths = [4]

[gd]
epochs = 4
"#;

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&debinn(&[], dir.path())), 1);
    assert_eq!(code(&debinn(&["frobnicate"], dir.path())), 1);
    assert_eq!(code(&debinn(&["train", "--bogus"], dir.path())), 1);
    assert_eq!(code(&debinn(&["train", "--config", "missing.toml"], dir.path())), 1);
    assert_eq!(code(&debinn(&["train", "--optimizer", "sgd"], dir.path())), 1);

    let bad = write_config(dir.path(), "bad.toml", "optimizer = \"ga\"\n[gd]\nepochs = 3\n");
    assert_eq!(code(&debinn(&["train", "--config", &bad], dir.path())), 1);
    let unknown = write_config(dir.path(), "unknown.toml", "colour = \"blue\"\n");
    assert_eq!(code(&debinn(&["train", "--config", &unknown], dir.path())), 1);
    let singular = write_config(
        dir.path(),
        "singular.toml",
        "optimizer = \"gd\"\n[network]\ninit = \"singularity\"\n",
    );
    assert_eq!(code(&debinn(&["train", "--config", &singular], dir.path())), 1);
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let h = debinn(&["--help"], dir.path());
    assert_eq!(code(&h), 0);
    let text = String::from_utf8_lossy(&h.stdout);
    for sub in ["gen-data", "train", "sweep", "report", "grid", "gradcheck"] {
        assert!(text.contains(sub), "help lacks {sub}");
    }
    assert_eq!(code(&debinn(&["--version"], dir.path())), 0);
}

#[test]
fn gen_data_writes_splits() {
    let dir = tempfile::tempdir().unwrap();
    let o = debinn(&["gen-data", "--out-dir", "d"], dir.path());
    assert_eq!(code(&o), 0);
    let train = fs::read_to_string(dir.path().join("d/train.csv")).unwrap();
    let test = fs::read_to_string(dir.path().join("d/test.csv")).unwrap();
    assert_eq!(train.lines().count(), 801);
    assert_eq!(test.lines().count(), 201);
}

#[test]
fn train_grid_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "gd.toml", SMALL_GD);
    let o = debinn(&["train", "--config", &cfg, "--seed", "3"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["status"], "ok");
    assert_eq!(v["run_id"], "cli-g0000-s3");

    let g = debinn(&["grid", "--run", "cli-g0000-s3", "--resolution", "7"], dir.path());
    assert_eq!(code(&g), 0, "{}", String::from_utf8_lossy(&g.stderr));
    let grid = fs::read_to_string(dir.path().join("out/runs/cli-g0000-s3/grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 50);

    let r = debinn(&["report"], dir.path());
    assert_eq!(code(&r), 0);
    assert!(dir.path().join("out/report/best_runs.csv").is_file());
}

#[test]
fn train_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "gd.toml", SMALL_GD);
    let a = debinn(&["train", "--config", &cfg, "--out-dir", "a"], dir.path());
    let b = debinn(&["train", "--config", &cfg, "--out-dir", "b"], dir.path());
    let ja: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    let jb: serde_json::Value = serde_json::from_slice(&b.stdout).unwrap();
    assert_eq!(ja["train"], jb["train"]);
    assert_eq!(ja["test"], jb["test"]);
    let ga = fs::read(dir.path().join("a/runs/cli-g0000-s0/geometry.csv")).unwrap();
    let gb = fs::read(dir.path().join("b/runs/cli-g0000-s0/geometry.csv")).unwrap();
    assert_eq!(ga, gb);
}

#[test]
fn optimizer_flag_switches_trainer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "ga.toml",
        &format!("{SMALL_GD}\n[sweep]\n\"gd.learning_rate\" = [0.1, 0.2]\n"),
    );
    // [gd] options and gd.* sweep keys are dropped with the switch
    let o = debinn(&["sweep", "--config", &cfg, "--optimizer", "ga"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rec: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/runs/cli-g0000-s0/record.json")).unwrap())
            .unwrap();
    assert_eq!(rec["optimizer"], "ga");
    assert!(!dir.path().join("out/runs/cli-g0001-s0").exists());
}

#[test]
fn diverged_train_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "div.toml",
        &SMALL_GD.replace("epochs = 4", "epochs = 4\nlearning_rate = 1.7976931348623157e308"),
    );
    let o = debinn(&["train", "--config", &cfg], dir.path());
    assert_eq!(code(&o), 2);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["status"], "diverged");
}

#[test]
fn report_without_runs_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&debinn(&["report", "--out-dir", "nothing"], dir.path())), 2);
}

#[test]
fn grid_of_unknown_run_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&debinn(&["grid", "--run", "nope"], dir.path())), 1);
}

#[test]
fn gradcheck_passes_on_default_network() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "gd.toml", SMALL_GD);
    for mode in ["diagonal", "full"] {
        let o = debinn(
            &["gradcheck", "--config", &cfg, "--samples", "8", "--norm-backward", mode],
            dir.path(),
        );
        assert_eq!(code(&o), 0, "{mode}: {}", String::from_utf8_lossy(&o.stdout));
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert!(v["max_rel_error"].as_f64().unwrap() <= 1e-4);
        assert_eq!(v["parameters"].as_u64().unwrap(), 3 * (2 + 2 * 4 + 2) + 2 * (4 + 2));
    }
    // an impossible tolerance is reported as a failure
    let o = debinn(&["gradcheck", "--config", &cfg, "--tolerance=-1"], dir.path());
    assert_eq!(code(&o), 2);
}
