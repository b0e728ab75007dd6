//! End-to-end checks of the wmlm binary: exit codes, seed precedence, file
//! clobber rules, and the shape of what each subcommand leaves on disk.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_wmlm"));
    cmd.env_remove("WMLM_SEED");
    cmd
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("spawn wmlm")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "expected success, got {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr_line(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).trim().to_string()
}

/// Small config shared by the slow-path tests: tiny model, one traversal,
/// a 1-train/1-test custom split.
const SMALL_TOML: &str = r#"
seed = 7

[data]
traversals = 1

[encoders]
d_model = 16
hidden = 8

[backbone]
d_model = 16
n_layers = 1
n_heads = 2
ffn = 32

[align]
epochs = 2

[train]
epochs = 2
patience = 0

[eval]
split = "custom"
custom_train = [1]
custom_test = [2]
val_fraction = 0.0
"#;

fn setup(dir: &Path) {
    fs::write(dir.join("small.toml"), SMALL_TOML).unwrap();
    assert_ok(&run(&["gen", "--config", "small.toml", "--out-dir", "data"], dir));
}

#[test]
fn gen_writes_eight_scenarios_and_respects_force() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let out = run(&["gen", "--out-dir", "data"], dir);
    assert_ok(&out);
    for k in 1..=8 {
        assert!(dir.join(format!("data/S{k}.jsonl")).exists(), "missing S{k}.jsonl");
    }

    let again = run(&["gen", "--out-dir", "data"], dir);
    assert_exit(&again, 2);
    assert!(stderr_line(&again).contains("--force"), "{}", stderr_line(&again));
    assert!(stderr_line(&again).starts_with("error: config:"));

    let forced = run(&["gen", "--out-dir", "data", "--force"], dir);
    assert_ok(&forced);
}

#[test]
fn seed_precedence_flag_over_env_over_config() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    setup(dir);
    let align = |name: &str, seed_flag: Option<&str>, env: Option<&str>| {
        let mut cmd = bin();
        cmd.args(["align", "--config", "small.toml", "--data", "data", "--out", name, "--force"]);
        if let Some(s) = seed_flag {
            cmd.args(["--seed", s]);
        }
        if let Some(e) = env {
            cmd.env("WMLM_SEED", e);
        }
        let out = cmd.current_dir(dir).output().unwrap();
        assert_ok(&out);
        fs::read(dir.join(name)).unwrap()
    };

    let by_flag = align("a.ckpt", Some("5"), None);
    let flag_beats_env = align("b.ckpt", Some("5"), Some("9"));
    let by_env = align("c.ckpt", None, Some("5"));
    let by_config = align("d.ckpt", None, None);
    assert_eq!(by_flag, flag_beats_env);
    assert_eq!(by_flag, by_env);
    assert_ne!(by_flag, by_config, "config seed is 7, so seed 5 runs must differ");

    let mut bad = bin();
    bad.args(["align", "--config", "small.toml", "--data", "data", "--out", "e.ckpt"])
        .env("WMLM_SEED", "not-a-number");
    let out = bad.current_dir(dir).output().unwrap();
    assert_exit(&out, 2);
    assert!(stderr_line(&out).contains("WMLM_SEED"));
}

#[test]
fn full_pipeline_to_report_collation() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    setup(dir);

    assert_ok(&run(
        &["align", "--config", "small.toml", "--data", "data", "--out", "s1.ckpt"],
        dir,
    ));
    assert_ok(&run(
        &[
            "train",
            "--config",
            "small.toml",
            "--data",
            "data",
            "--init",
            "s1.ckpt",
            "--out",
            "s2.ckpt",
        ],
        dir,
    ));
    let eval = run(
        &["eval", "--ckpt", "s2.ckpt", "--data", "data", "--report", "report.json"],
        dir,
    );
    assert_ok(&eval);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["format"], "wmlm-report-1");
    assert_eq!(report["model"], "wmlm");

    // The rnn path produces a report tagged with its own model name.
    assert_ok(&run(
        &[
            "train",
            "--config",
            "small.toml",
            "--data",
            "data",
            "--model",
            "rnn",
            "--out",
            "rnn.ckpt",
        ],
        dir,
    ));
    assert_ok(&run(
        &["eval", "--ckpt", "rnn.ckpt", "--data", "data", "--report", "rnn_report.json"],
        dir,
    ));
    let rnn: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("rnn_report.json")).unwrap()).unwrap();
    assert_eq!(rnn["model"], "rnn");
    assert_eq!(rnn["nmse"], serde_json::Value::Null);

    // Collate everything written so far; csv goes to stdout when --out is
    // omitted.
    let rep = run(&["report", "--in", ".", "--format", "csv"], dir);
    assert_ok(&rep);
    let text = String::from_utf8_lossy(&rep.stdout);
    assert!(text.lines().any(|l| l.starts_with("report,wmlm,")), "{text}");
    assert!(text.lines().any(|l| l.starts_with("rnn_report,rnn,")), "{text}");

    let svg = run(&["report", "--in", ".", "--format", "svg", "--out", "plots.svg"], dir);
    assert_ok(&svg);
    assert!(fs::read_to_string(dir.join("plots.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn exit_codes_follow_error_taxonomy() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    setup(dir);
    assert_ok(&run(
        &["align", "--config", "small.toml", "--data", "data", "--out", "s1.ckpt"],
        dir,
    ));

    // 2: config schema violation.
    fs::write(dir.join("bad.toml"), "seed = 7\nnot_a_section = 1\n").unwrap();
    let bad_cfg = run(&["gen", "--config", "bad.toml", "--out-dir", "x"], dir);
    assert_exit(&bad_cfg, 2);
    assert!(stderr_line(&bad_cfg).starts_with("error: config:"));

    // 2: --init is a wmlm-only flag.
    let bad_init = run(
        &[
            "train",
            "--config",
            "small.toml",
            "--data",
            "data",
            "--model",
            "rnn",
            "--init",
            "s1.ckpt",
            "--out",
            "x.ckpt",
        ],
        dir,
    );
    assert_exit(&bad_init, 2);

    // 3: malformed dataset line.
    fs::create_dir(dir.join("broken")).unwrap();
    fs::copy(dir.join("data/S1.jsonl"), dir.join("broken/S1.jsonl")).unwrap();
    fs::write(dir.join("broken/S2.jsonl"), "{\"format\":\"wmlm-ds-1\"}\nnot json\n").unwrap();
    let bad_data = run(
        &["align", "--config", "small.toml", "--data", "broken", "--out", "y.ckpt"],
        dir,
    );
    assert_exit(&bad_data, 3);
    assert!(stderr_line(&bad_data).starts_with("error: data:"));

    // 3: collating a directory with nothing collatable in it.
    fs::create_dir(dir.join("empty")).unwrap();
    assert_exit(&run(&["report", "--in", "empty"], dir), 3);

    // 4: stage-1 checkpoints cannot be evaluated.
    let s1_eval = run(&["eval", "--ckpt", "s1.ckpt", "--data", "data", "--report", "r.json"], dir);
    assert_exit(&s1_eval, 4);
    assert!(stderr_line(&s1_eval).starts_with("error: checkpoint:"));

    // 2: the grid needs at least one seed per cell.
    let bad_grid = run(
        &[
            "compare-anchors",
            "--config",
            "small.toml",
            "--data",
            "data",
            "--seeds-per-cell",
            "0",
        ],
        dir,
    );
    assert_exit(&bad_grid, 2);
}

#[test]
fn train_refuses_to_clobber_without_force() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    setup(dir);
    let args = [
        "train", "--config", "small.toml", "--data", "data", "--out", "m.ckpt",
    ];
    assert_ok(&run(&args, dir));
    assert_exit(&run(&args, dir), 2);
    let mut forced: Vec<&str> = args.to_vec();
    forced.push("--force");
    assert_ok(&run(&forced, dir));
}

#[test]
fn help_and_version() {
    let tmp = TempDir::new().unwrap();
    let help = run(&["--help"], tmp.path());
    assert_ok(&help);
    let text = String::from_utf8_lossy(&help.stdout);
    for sub in ["gen", "align", "train", "eval", "compare-anchors", "report"] {
        assert!(text.contains(sub), "help must list {sub}");
    }
    assert_ok(&run(&["--version"], tmp.path()));
}
