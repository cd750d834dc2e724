use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use coldstart_ffi::*;

fn toy_config() -> CString {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/toy.conf");
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let mut len = 0usize;
    unsafe { cs_last_error(ptr::null_mut(), 0, &mut len) };
    let mut buf = vec![0 as libc::c_char; len + 1];
    assert_eq!(unsafe { cs_last_error(buf.as_mut_ptr(), buf.len(), &mut len) }, CsStatus::Ok);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_string()
}

fn open(dir: &Path, overrides: &str) -> *mut CsRun {
    let out = CString::new(dir.to_str().unwrap()).unwrap();
    let ov = CString::new(overrides).unwrap();
    let cfg = toy_config();
    let mut run = ptr::null_mut();
    let st = unsafe { cs_run_new(cfg.as_ptr(), out.as_ptr(), ov.as_ptr(), &mut run) };
    assert_eq!(st, CsStatus::Ok, "{}", last_error());
    run
}

#[test]
fn null_and_bad_arguments_report_codes() {
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { cs_run_new(ptr::null(), ptr::null(), ptr::null(), &mut run) }, CsStatus::NullPointer);
    assert!(last_error().contains("out_dir"));
    assert_eq!(unsafe { cs_run_stage(ptr::null(), CsStage::Ingest) }, CsStatus::NullPointer);

    let dir = tempfile::tempdir().unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let ov = CString::new("bogus_key=1").unwrap();
    let cfg = toy_config();
    assert_eq!(unsafe { cs_run_new(cfg.as_ptr(), out.as_ptr(), ov.as_ptr(), &mut run) }, CsStatus::Config);
    assert!(run.is_null());
    assert!(last_error().contains("bogus_key"));

    let mut tiny = [0 as libc::c_char; 2];
    assert_eq!(unsafe { cs_last_error(tiny.as_mut_ptr(), tiny.len(), ptr::null_mut()) }, CsStatus::BufferTooSmall);
    assert!(!unsafe { CStr::from_ptr(cs_version()) }.to_bytes().is_empty());
}

#[test]
fn stages_in_order_and_missing_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let run = open(dir.path(), "pretrain_epochs=2\nfinetune_epochs=1\nmeta_epochs=1");
    assert_eq!(unsafe { cs_run_stage(run, CsStage::Eval) }, CsStatus::MissingArtifact);
    for st in [CsStage::Ingest, CsStage::Split, CsStage::GroundTruth] {
        assert_eq!(unsafe { cs_run_stage(run, st) }, CsStatus::Ok, "{}", last_error());
    }
    assert_eq!(unsafe { cs_run_stage(run, CsStage::Finetune) }, CsStatus::MissingArtifact);
    assert!(last_error().contains("pretrain"));
    for st in [CsStage::Pretrain, CsStage::Finetune, CsStage::Eval, CsStage::Report] {
        assert_eq!(unsafe { cs_run_stage(run, st) }, CsStatus::Ok, "{}", last_error());
    }
    let (mut v, mut se) = (f64::NAN, f64::NAN);
    let name = CString::new("recall@20").unwrap();
    assert_eq!(unsafe { cs_run_metric(run, name.as_ptr(), &mut v, &mut se) }, CsStatus::Ok);
    assert!((0.0..=1.0).contains(&v) && se >= 0.0);
    let missing = CString::new("nope").unwrap();
    assert_eq!(unsafe { cs_run_metric(run, missing.as_ptr(), &mut v, ptr::null_mut()) }, CsStatus::NotFound);

    let mut model = ptr::null_mut();
    assert_eq!(unsafe { cs_model_load(run, &mut model) }, CsStatus::Ok, "{}", last_error());
    let (mut d, mut ni, mut nu) = (0, 0, 0);
    assert_eq!(unsafe { cs_model_shape(model, &mut d, &mut ni, &mut nu) }, CsStatus::Ok);
    assert_eq!((d, ni), (16, 100));
    assert!(nu > 0);

    // the first cold user in the split file
    let split = std::fs::read_to_string(dir.path().join("split.tsv")).unwrap();
    let user: u32 = split.lines().find(|l| l.starts_with("train\t")).unwrap().split('\t').nth(1).unwrap().parse().unwrap();
    let mut top = vec![0u32; 5];
    let mut n = 0;
    assert_eq!(unsafe { cs_model_top_k(model, user, 5, top.as_mut_ptr(), &mut n) }, CsStatus::Ok);
    assert_eq!(n, 5);
    let mut s0 = 0.0;
    let mut s4 = 0.0;
    unsafe {
        cs_model_score(model, user, top[0], &mut s0);
        cs_model_score(model, user, top[4], &mut s4);
    }
    assert!(s0 >= s4);
    assert_eq!(unsafe { cs_model_score(model, user, 10_000, &mut s0) }, CsStatus::NotFound);
    unsafe {
        cs_model_free(model);
        cs_run_free(run);
    }
}

#[test]
fn fingerprint_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let run = open(dir.path(), "");
    assert_eq!(unsafe { cs_run_stage(run, CsStage::Ingest) }, CsStatus::Ok);
    assert_eq!(unsafe { cs_run_stage(run, CsStage::Split) }, CsStatus::Ok);
    unsafe { cs_run_free(run) };
    let run = open(dir.path(), "n_u=12");
    assert_eq!(unsafe { cs_run_stage(run, CsStage::GroundTruth) }, CsStatus::FingerprintMismatch);
    assert!(last_error().contains("split"));
    unsafe { cs_run_free(run) };
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/coldstart.h")
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(header()).unwrap();
    for f in ["cs_run_new", "cs_run_free", "cs_run_stage", "cs_run_all", "cs_run_metric", "cs_model_load", "cs_model_top_k", "cs_last_error", "typedef struct CsRun CsRun"] {
        assert!(h.contains(f), "{f}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else { return };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include <stdio.h>\n#include \"coldstart.h\"\nint main(void) { CsRun *r = 0; CsStatus s = cs_run_new(0, \"o\", 0, &r); (void)s; return 0; }\n",
    )
    .unwrap();
    let st = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header().parent().unwrap())
        .arg(&src)
        .status()
        .unwrap();
    assert!(st.success());
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
        .ok_or(())
}
