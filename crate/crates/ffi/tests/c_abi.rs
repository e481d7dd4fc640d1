//! Compiles a C client against the generated header and the static library.

use std::path::{Path, PathBuf};
use std::process::Command;

use xnlu::cli::{train, RunConfig};
use xnlu::data::{generate_synthetic_corpus, Grammar};

fn target_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

fn compiler() -> Option<String> {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    Command::new(&cc).arg("--version").output().ok().filter(|o| o.status.success()).map(|_| cc)
}

#[test]
fn c_client_runs_against_the_static_library() {
    let Some(cc) = compiler() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let lib = target_dir().join("libxnlu_ffi.a");
    assert!(lib.exists(), "{} missing", lib.display());
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Wextra", "-Werror", "-I"])
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C build failed");

    let data = generate_synthetic_corpus(2, 30, &Grammar::default_grammar()).unwrap();
    let cfg = RunConfig {
        epochs: 1,
        batch_size: 4,
        d: 16,
        d_h: 8,
        layers: 1,
        heads: 2,
        ffn_dim: 32,
        ..RunConfig::default()
    };
    let ckpt = dir.path().join("m.ckpt");
    train(&cfg, &data, None).unwrap().checkpoint.save(&ckpt).unwrap();

    let out = Command::new(&exe).arg(&ckpt).arg("will it rain in paris on friday").output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout.lines().filter(|l| l.starts_with("tag ")).count(), 7);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("type ")).count(), 5);
    assert!(stdout.contains(&format!("version {}", env!("CARGO_PKG_VERSION"))));
}

#[test]
fn committed_header_is_current() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/xnlu.h")).unwrap();
    for symbol in [
        "xnlu_model_load",
        "xnlu_predict",
        "xnlu_prediction_attention",
        "xnlu_prediction_entropy",
        "xnlu_last_error",
        "XNLU_STATUS_BUFFER_TOO_SMALL",
        "typedef struct XnluModel XnluModel;",
    ] {
        assert!(header.contains(symbol), "{symbol}");
    }
}
