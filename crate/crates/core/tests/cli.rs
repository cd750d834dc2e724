use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn toy_conf() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy.conf")
}

fn coldstart(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coldstart"))
        .arg("--config")
        .arg(toy_conf())
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("spawn coldstart")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = coldstart(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn stderr_of(out: &Path, args: &[&str]) -> String {
    let o = coldstart(out, args);
    assert!(!o.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(o.stderr).unwrap()
}

fn data_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).map(str::to_string).collect()
}

#[test]
fn stages_refuse_to_run_out_of_order() {
    let dir = tempfile::tempdir().unwrap();
    let err = stderr_of(dir.path(), &["split"]);
    assert!(err.contains("ingest"), "{err}");
    ok(dir.path(), &["ingest"]);
    ok(dir.path(), &["split"]);
    ok(dir.path(), &["groundtruth"]);
    let err = stderr_of(dir.path(), &["eval"]);
    assert!(err.contains("pretrain"), "{err}");
}

#[test]
fn run_with_one_task_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["--tasks", "Rg", "run"]);
    assert!(stdout.contains("recall@20"), "{stdout}");
    for f in ["ingest.tsv", "users.map", "items.map", "split.tsv", "ground_truth.ckpt", "pretrain.ckpt", "finetune.ckpt", "eval.txt", "metrics.tsv", "report.txt"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let eval = std::fs::read_to_string(dir.path().join("eval.txt")).unwrap();
    assert!(eval.contains("tasks=Rg\n"), "{eval}");
    assert!(eval.contains("intrinsic_cosine_Rg="));
    assert!(!eval.contains("intrinsic_cosine_Cg"));

    // a header plus one row per epoch
    assert_eq!(data_lines(&dir.path().join("pretrain_loss.csv")).len(), 1 + 20);
    assert_eq!(data_lines(&dir.path().join("finetune_loss.csv")).len(), 1 + 5);

    // without the flag the default task set no longer matches the checkpoint
    let err = stderr_of(dir.path(), &["eval"]);
    assert!(err.contains("fingerprint mismatch"), "{err}");
}

#[test]
fn report_is_reproducible_and_overrides_invalidate_downstream() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["--tasks", "Rg,Cp", "run"]);
    let report = std::fs::read(dir.path().join("report.txt")).unwrap();
    ok(dir.path(), &["--tasks", "Rg,Cp", "report"]);
    assert_eq!(std::fs::read(dir.path().join("report.txt")).unwrap(), report);

    // a fine-tuning key leaves pre-training valid but not fine-tuning
    let err = stderr_of(dir.path(), &["--tasks", "Rg,Cp", "--finetune_lr", "0.01", "eval"]);
    assert!(err.contains("finetune"), "{err}");
    ok(dir.path(), &["--tasks", "Rg,Cp", "--finetune_lr", "0.01", "finetune"]);
    ok(dir.path(), &["--tasks", "Rg,Cp", "--finetune_lr", "0.01", "eval"]);
}

#[test]
fn make_toy_writes_a_loadable_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.tsv");
    let o = Command::new(env!("CARGO_BIN_EXE_coldstart")).arg("make-toy").arg(&path).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let bundled = std::fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy.tsv")).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bundled);
}

#[test]
fn bad_input_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let err = stderr_of(dir.path(), &["--d", "15", "ingest"]);
    assert!(err.starts_with("error:"), "{err}");
    let err = stderr_of(dir.path(), &["--tasks", "Xx", "run"]);
    assert!(err.starts_with("error:") || err.contains("Xx"), "{err}");
}
