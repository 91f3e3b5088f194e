//! End-to-end CLI contract: exit codes, file layout, and the documented
//! command behaviours, exercised through the real binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn styleseg(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_styleseg"));
    cmd.args(args);
    cmd.env_remove("STYLESEG_SEED");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn styleseg")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_generate_config(dir: &Path, out_dir: &Path, seed: u64) -> PathBuf {
    let path = dir.join("synth.toml");
    std::fs::write(
        &path,
        format!(
            r#"
[corpus]
n_images = 8
resolution = 32
master_seed = {seed}
out_dir = "{}"

[split]
train = 0.5
val = 0.25
test = 0.25

[[style]]
margin = 2
seed = 1

[[style]]
margin = -2
seed = 2
"#,
            out_dir.display()
        ),
    )
    .unwrap();
    path
}

fn write_train_config(
    dir: &Path,
    corpus: &Path,
    ckpt: &Path,
    mode: &str,
    m: usize,
    epochs: usize,
) -> PathBuf {
    let path = dir.join(format!("train_{mode}_{epochs}.toml"));
    std::fs::write(
        &path,
        format!(
            r#"
[run]
mode = "{mode}"
seed = 9
corpus_dir = "{}"
checkpoint_dir = "{}"

[model]
m = {m}
resolution = 32
base_width = 4
n_stages = 3
cls_base_width = 4
cls_n_stages = 2

[optim]
epochs = {epochs}
batch_size = 4
learning_rate = 1e-3
"#,
            corpus.display(),
            ckpt.display()
        ),
    )
    .unwrap();
    path
}

#[test]
fn generate_writes_corpus_and_respects_force() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let config = write_generate_config(dir.path(), &corpus, 5);

    let out = styleseg(&["generate", "--config", config.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(corpus.join("manifest.csv").exists());
    assert!(corpus.join("run_manifest.json").exists());
    assert!(corpus.join("images/img_00000.png").exists());

    // Refuses to clobber without --force.
    let out = styleseg(&["generate", "--config", config.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("--force"), "{}", stderr(&out));

    // Deterministic regeneration under --force.
    let before = std::fs::read(corpus.join("manifest.csv")).unwrap();
    let out = styleseg(
        &["generate", "--config", config.to_str().unwrap(), "--force"],
        &[],
    );
    assert_eq!(code(&out), 0);
    let after = std::fs::read(corpus.join("manifest.csv")).unwrap();
    assert_eq!(before, after, "manifest changed across identical runs");
}

#[test]
fn malformed_config_exits_2_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(
        &config,
        r#"
[corpus]
n_images = 4
resolution = 32
master_seed = 1
out_dir = "x"
bogus_knob = true

[[style]]
margin = 1
"#,
    )
    .unwrap();
    let out = styleseg(&["generate", "--config", config.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("bogus_knob"), "{}", stderr(&out));
}

#[test]
fn seed_env_var_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_a = dir.path().join("a");
    let corpus_b = dir.path().join("b");
    let config_a = write_generate_config(dir.path(), &corpus_a, 5);
    let config_b = write_generate_config(dir.path(), &corpus_b, 5);

    let out = styleseg(&["generate", "--config", config_a.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 0);
    let out = styleseg(
        &["generate", "--config", config_b.to_str().unwrap()],
        &[("STYLESEG_SEED", "99")],
    );
    assert_eq!(code(&out), 0);

    let a = std::fs::read(corpus_a.join("masks/img_00000__1.png")).unwrap();
    let b = std::fs::read(corpus_b.join("masks/img_00000__1.png")).unwrap();
    assert_ne!(a, b, "env seed had no effect");
    let manifest = std::fs::read_to_string(corpus_b.join("run_manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 99"), "{manifest}");
    assert!(manifest.contains("\"seed_source\": \"env\""), "{manifest}");
}

#[test]
fn train_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let config = write_generate_config(dir.path(), &corpus, 7);
    assert_eq!(code(&styleseg(&["generate", "--config", config.to_str().unwrap()], &[])), 0);

    // Mode/M mismatch is a config error (exit 2).
    let bad = write_train_config(dir.path(), &corpus, &dir.path().join("ck_bad"), "naive", 3, 1);
    let out = styleseg(&["train", "--config", bad.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("model.m"), "{}", stderr(&out));

    // Tiny 2-style run.
    let ckpt = dir.path().join("ck");
    let config = write_train_config(dir.path(), &corpus, &ckpt, "styleseg", 2, 2);
    let out = styleseg(&["train", "--config", config.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("best epoch"), "{}", stdout(&out));

    let runlog = std::fs::read_to_string(ckpt.join("runlog.csv")).unwrap();
    assert!(runlog.starts_with("epoch,l1,l2,l3,total,val_total\n"));
    assert_eq!(runlog.lines().count(), 3);
    assert!(ckpt.join("best.txt").exists());
    assert!(ckpt.join("epoch_2/model.bin").exists());
    assert!(ckpt.join("epoch_2/checkpoint.json").exists());

    // Full evaluation on the test split: 2 images x 2 masks = 4 records.
    let eval_dir = dir.path().join("eval");
    let out = styleseg(
        &[
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--corpus",
            corpus.to_str().unwrap(),
            "--out",
            eval_dir.to_str().unwrap(),
            "--group-key",
            "planted_style",
        ],
        &[],
    );
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let records = std::fs::read_to_string(eval_dir.join("records.csv")).unwrap();
    assert_eq!(records.lines().next().unwrap(), "image_id,k,preference_label,d_1,d_2,m_best");
    assert_eq!(records.lines().count(), 5);
    for file in ["preferences.csv", "assignment.csv", "shapes.csv", "run_manifest.json"] {
        assert!(eval_dir.join(file).exists(), "{file} missing");
    }

    // Threshold changes the records but not the schema.
    let eval_dir2 = dir.path().join("eval_t03");
    let out = styleseg(
        &[
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--corpus",
            corpus.to_str().unwrap(),
            "--out",
            eval_dir2.to_str().unwrap(),
            "--threshold",
            "0.3",
        ],
        &[],
    );
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let records2 = std::fs::read_to_string(eval_dir2.join("records.csv")).unwrap();
    assert_eq!(records2.lines().next().unwrap(), records.lines().next().unwrap());
    assert_ne!(records, records2, "threshold flag had no effect");
}

#[test]
fn train_resume_matches_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let config = write_generate_config(dir.path(), &corpus, 11);
    assert_eq!(code(&styleseg(&["generate", "--config", config.to_str().unwrap()], &[])), 0);

    // Straight 4-epoch run.
    let ck_straight = dir.path().join("ck_straight");
    let cfg4 = write_train_config(dir.path(), &corpus, &ck_straight, "styleseg", 2, 4);
    assert_eq!(code(&styleseg(&["train", "--config", cfg4.to_str().unwrap()], &[])), 0);

    // Interrupted run: 2 epochs, then resume to 4 in the same directory.
    let ck_resume = dir.path().join("ck_resume");
    let cfg2 = write_train_config(dir.path(), &corpus, &ck_resume, "styleseg", 2, 2);
    assert_eq!(code(&styleseg(&["train", "--config", cfg2.to_str().unwrap()], &[])), 0);
    let cfg4b = write_train_config(dir.path(), &corpus, &ck_resume, "styleseg", 2, 4);
    let out = styleseg(
        &["train", "--config", cfg4b.to_str().unwrap(), "--resume"],
        &[],
    );
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    let straight = std::fs::read_to_string(ck_straight.join("runlog.csv")).unwrap();
    let resumed = std::fs::read_to_string(ck_resume.join("runlog.csv")).unwrap();
    assert_eq!(resumed.lines().count(), 5);
    for (a, b) in straight.lines().skip(1).zip(resumed.lines().skip(1)) {
        let va: f64 = a.rsplit(',').next().unwrap().parse().unwrap();
        let vb: f64 = b.rsplit(',').next().unwrap().parse().unwrap();
        assert!(
            (va - vb).abs() < 1e-5,
            "val trajectory diverged: {va} vs {vb}"
        );
    }
}

#[test]
fn as2_command_contract() {
    let out = styleseg(&["as2", "0.7,0.15,0.15"], &[]);
    assert_eq!(code(&out), 0);
    let printed = stdout(&out);
    let value: f64 = printed.trim().parse().unwrap();
    assert!((value - 0.255).abs() <= 0.001, "{printed}");
    assert_eq!(printed.trim().len(), 8, "expected 6 decimals: {printed}");

    let out = styleseg(&["as2", "1,0,0"], &[]);
    assert_eq!(stdout(&out).trim(), "1.000000");

    let out = styleseg(&["as2", "0.9,0.1,0,0,0,0,0,0,0,0"], &[]);
    let value: f64 = stdout(&out).trim().parse().unwrap();
    assert!((value - 0.859).abs() <= 0.005, "{value}");

    // Usage errors: single value, negative value, bad sum.
    assert_eq!(code(&styleseg(&["as2", "1.0"], &[])), 2);
    assert_eq!(code(&styleseg(&["as2", "-0.2,1.2"], &[])), 2);
    assert_eq!(code(&styleseg(&["as2", "0.5,0.1"], &[])), 2);

    // Mild normalization within 1e-3 of 1 is accepted.
    let out = styleseg(&["as2", "0.7004,0.15,0.15"], &[]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
}

#[test]
fn eval_as2_only_recomputes_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    // Hand-written records: 100 rows for one preference, split 70/15/15.
    let mut csv = String::from("image_id,k,preference_label,d_1,d_2,d_3,m_best\n");
    for i in 0..100 {
        let m_best = if i < 70 {
            1
        } else if i < 85 {
            2
        } else {
            3
        };
        let mut dice = [0.2, 0.2, 0.2];
        dice[m_best - 1] = 0.9;
        csv.push_str(&format!(
            "img_{i:03},1,A00+T1+E,{},{},{},{m_best}\n",
            dice[0], dice[1], dice[2]
        ));
    }
    let records_path = dir.path().join("records.csv");
    std::fs::write(&records_path, csv).unwrap();

    let out_dir = dir.path().join("out");
    let out = styleseg(
        &[
            "eval",
            "--as2-only",
            records_path.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let assignment = std::fs::read_to_string(out_dir.join("assignment.csv")).unwrap();
    assert_eq!(
        assignment.lines().next().unwrap(),
        "group,q_1,q_2,q_3,as2,modal_style"
    );
    let row = assignment.lines().nth(1).unwrap();
    assert!(row.starts_with("A00+T1+E,0.700000,0.150000,0.150000,"), "{row}");
    let as2: f64 = row.split(',').nth(4).unwrap().parse().unwrap();
    assert!((as2 - 0.255).abs() <= 0.001, "{as2}");
}
