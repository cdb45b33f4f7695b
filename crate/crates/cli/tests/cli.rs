use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_gin"));
    c.env_remove("GIN_SEED");
    c
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn ok(cmd: &mut Command) -> String {
    let out = run(cmd);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Fresh scratch directory under the target dir.
fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn small_data(dir: &Path, seed: &str) {
    ok(gin().args(["gen-data", "--num-users", "120", "--num-items", "80", "--num-clusters", "8", "--seed", seed, "--output"]).arg(dir.join("d")));
    ok(gin().args(["build-graph", "--input"]).arg(dir.join("d/clicks.tsv")).arg("--output").arg(dir.join("g.txt")));
}

fn value(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}\t")))
        .unwrap_or_else(|| panic!("{key} missing from\n{text}"))
        .to_string()
}

#[test]
fn exit_codes() {
    assert_eq!(run(&mut gin()).status.code(), Some(1));
    assert_eq!(run(gin().args(["train", "--no-such-flag"])).status.code(), Some(1));
    assert_eq!(run(gin().args(["build-graph", "--input", "missing.tsv", "--output", "x"])).status.code(), Some(2));
    // Required path absent: usage error.
    assert_eq!(run(gin().args(["build-graph", "--output", "x"])).status.code(), Some(1));
    assert_eq!(run(gin().arg("--help")).status.code(), Some(0));
}

#[test]
fn gradcheck_passes() {
    let out = ok(gin().args(["gradcheck", "--seed", "7", "--dim", "8", "--depth", "2"]));
    assert!(out.contains("max relative error"));
    assert_eq!(out.lines().last(), Some("PASS"));
}

#[test]
fn eval_reproduces_training_log() {
    let dir = scratch("eval_reproduces");
    small_data(&dir, "3");
    let ckpt = dir.join("m.ckpt");
    ok(gin().args(["train", "--dim", "8", "--epochs", "2", "--seed", "3", "--input"]).arg(dir.join("d/train.tsv"))
        .arg("--graph").arg(dir.join("g.txt")).arg("--eval-input").arg(dir.join("d/test.tsv")).arg("--output").arg(&ckpt));
    let log = std::fs::read_to_string(dir.join("m.ckpt.log")).unwrap();
    let report = ok(gin().args(["eval", "--input"]).arg(dir.join("d/test.tsv")).arg("--graph").arg(dir.join("g.txt")).arg("--checkpoint").arg(&ckpt));
    for metric in ["samples", "auc", "logloss"] {
        assert_eq!(value(&log, &format!("final.{metric}")), value(&report, &format!("m.{metric}")));
    }
}

#[test]
fn config_file_and_seed_fallback() {
    let dir = scratch("config_file");
    small_data(&dir, "4");
    let cfg = dir.join("run.conf");
    std::fs::write(&cfg, "# shared settings\ndim = 4\nepochs = 1\nseed = 11\n").unwrap();
    let train = |extra: &[&str], env_seed: Option<&str>, out: &str| {
        let mut c = gin();
        c.args(["train", "--input"]).arg(dir.join("d/train.tsv")).arg("--graph").arg(dir.join("g.txt"))
            .arg("--output").arg(dir.join(out)).args(extra);
        if let Some(s) = env_seed {
            c.env("GIN_SEED", s);
        }
        ok(&mut c)
    };
    let from_file = train(&["--config", cfg.to_str().unwrap()], None, "a.ckpt");
    assert!(from_file.contains("dim=4") && from_file.contains("seed=11"));
    let flag_wins = train(&["--config", cfg.to_str().unwrap(), "--dim", "6"], None, "b.ckpt");
    assert!(flag_wins.contains("dim=6"));
    let env_seed = train(&["--dim", "4", "--epochs", "1"], Some("11"), "c.ckpt");
    assert!(env_seed.contains("seed=11"));
    assert_eq!(std::fs::read(dir.join("a.ckpt")).unwrap(), std::fs::read(dir.join("c.ckpt")).unwrap());

    std::fs::write(&cfg, "dimension = 4\n").unwrap();
    let out = run(gin().args(["gradcheck", "--config"]).arg(&cfg));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));
}

#[test]
fn max_age_drops_old_clicks() {
    let dir = scratch("max_age");
    let log = dir.join("clicks.tsv");
    let day = 86_400;
    std::fs::write(&log, format!("u1\t0\tred shoes\ta\nu1\t10\tred shoes\tb\nu1\t{}\tblue bag\tc\nu1\t{}\tblue bag\td\n", 40 * day, 40 * day + 5)).unwrap();
    let build = |extra: &[&str]| {
        let out = dir.join("g.txt");
        ok(gin().args(["build-graph", "--input"]).arg(&log).arg("--output").arg(&out).args(extra));
        std::fs::read_to_string(out).unwrap()
    };
    assert!(build(&[]).starts_with("GINGRAPH v1 4 2\n"));
    assert_eq!(build(&["--max-age-days", "30"]), "GINGRAPH v1 2 1\nc\td\t1\n");
}
