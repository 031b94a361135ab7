use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use flitext::data::{Vocab, CLS_ID};
use flitext::efficiency::{count_params, estimate_flops, ModelSpec};
use flitext::models::{predict_logits, save_checkpoint, CheckpointModel, TargetConfig, TargetModel};
use flitext::pipeline::RunConfig;
use flitext_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = flitext_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn saved_target(dir: &Path) -> (TargetModel, Vocab) {
    let vocab = Vocab::build(["good fine great bad awful poor"], 1, None);
    let cfg = TargetConfig {
        vocab_size: vocab.len(),
        classes: 3,
        ..TargetConfig::default()
    };
    let m = TargetModel::new(cfg, 4).unwrap();
    save_checkpoint(&dir.join("model.ckpt"), &CheckpointModel::from(m.clone())).unwrap();
    vocab.save(&dir.join("vocab.txt")).unwrap();
    (m, vocab)
}

#[test]
fn load_predict_free() {
    let dir = tempfile::tempdir().unwrap();
    let (m, vocab) = saved_target(dir.path());
    let path = c(dir.path().join("model.ckpt").to_str().unwrap());
    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { flitext_model_load(path.as_ptr(), ptr::null(), &mut h) },
        FlitextStatus::Ok
    );
    assert!(flitext_last_error_message().is_null());
    assert_eq!(unsafe { flitext_model_num_classes(h) }, 3);

    let (mut probs, mut n) = ([0.0f64; 3], 0usize);
    let text = c("good great awful");
    let s = unsafe { flitext_model_predict(h, text.as_ptr(), probs.as_mut_ptr(), 3, &mut n) };
    assert_eq!((s, n), (FlitextStatus::Ok, 3));
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let ids = vocab.encode("good great awful", usize::MAX);
    assert_eq!(ids[0], CLS_ID);
    let b = flitext::data::TokenBatch::from_sequences(&[ids], 5).unwrap();
    let z = &predict_logits(&m, &b).unwrap()[0];
    let argmax = |v: &[f64]| (0..v.len()).fold(0, |best, i| if v[i] > v[best] { i } else { best });
    assert_eq!(argmax(&probs), argmax(z));

    let mut small = [0.0f64; 2];
    let s = unsafe { flitext_model_predict(h, text.as_ptr(), small.as_mut_ptr(), 2, &mut n) };
    assert_eq!((s, n), (FlitextStatus::BufferTooSmall, 3));
    assert!(last_error().contains("3"));
    unsafe { flitext_model_free(h) };
    unsafe { flitext_model_free(ptr::null_mut()) };
}

#[test]
fn failures_report_codes_and_messages() {
    let mut h = ptr::null_mut();
    let missing = c("/nonexistent/model.ckpt");
    assert_eq!(
        unsafe { flitext_model_load(missing.as_ptr(), ptr::null(), &mut h) },
        FlitextStatus::Io
    );
    assert!(last_error().contains("/nonexistent"));
    assert!(h.is_null());
    assert_eq!(
        unsafe { flitext_model_load(ptr::null(), ptr::null(), &mut h) },
        FlitextStatus::NullArgument
    );

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("model.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    std::fs::write(dir.path().join("vocab.txt"), b"").unwrap();
    let junk = c(junk.to_str().unwrap());
    assert_eq!(
        unsafe { flitext_model_load(junk.as_ptr(), ptr::null(), &mut h) },
        FlitextStatus::Format
    );

    let bad_utf8 = [0xffu8, 0xfe, 0];
    let mut out = 0u64;
    let s = unsafe { flitext_count_params(bad_utf8.as_ptr().cast(), FlitextModelKind::Target, &mut out) };
    assert_eq!(s, FlitextStatus::InvalidUtf8);
    let bad_toml = c("seed = \"x\"");
    let s = unsafe { flitext_count_params(bad_toml.as_ptr(), FlitextModelKind::Target, &mut out) };
    assert_eq!(s, FlitextStatus::Config);
    assert_eq!(unsafe { flitext_model_num_classes(ptr::null()) }, 0);
}

#[test]
fn cost_queries_match_the_library() {
    let cfg = RunConfig::reference();
    let toml = c(&cfg.to_toml());
    for (kind, spec) in [
        (FlitextModelKind::Inspirer, ModelSpec::Inspirer(cfg.inspirer.clone())),
        (FlitextModelKind::Target, ModelSpec::Target(cfg.target.clone())),
    ] {
        let (mut p, mut f) = (0u64, 0u64);
        assert_eq!(
            unsafe { flitext_count_params(toml.as_ptr(), kind, &mut p) },
            FlitextStatus::Ok
        );
        assert_eq!(
            unsafe { flitext_estimate_flops(ptr::null(), kind, 32, &mut f) },
            FlitextStatus::Ok
        );
        assert_eq!(p, count_params(&spec) as u64);
        assert_eq!(f, estimate_flops(&spec, 32).unwrap().total);
    }
    let mut f = 0u64;
    let s = unsafe { flitext_estimate_flops(ptr::null(), FlitextModelKind::Target, 0, &mut f) };
    assert_eq!(s, FlitextStatus::Precondition);
}

#[test]
fn alignment_parse_fills_pairs() {
    let sizes = [2usize, 3, 5];
    let (mut pairs, mut n) = ([0usize; 6], 0usize);
    let text = c("{0,1}-{2,5}");
    let s = unsafe { flitext_alignment_parse(text.as_ptr(), 4, sizes.as_ptr(), 3, pairs.as_mut_ptr(), 3, &mut n) };
    assert_eq!((s, n), (FlitextStatus::Ok, 2));
    assert_eq!(&pairs[..4], &[0, 2, 1, 5]);
    let s = unsafe { flitext_alignment_parse(text.as_ptr(), 4, sizes.as_ptr(), 3, pairs.as_mut_ptr(), 1, &mut n) };
    assert_eq!((s, n), (FlitextStatus::BufferTooSmall, 2));
    let s = unsafe { flitext_alignment_parse(text.as_ptr(), 1, sizes.as_ptr(), 3, pairs.as_mut_ptr(), 3, &mut n) };
    assert_eq!(s, FlitextStatus::Config);
    let garbled = c("{0,1-2");
    let s = unsafe { flitext_alignment_parse(garbled.as_ptr(), 4, sizes.as_ptr(), 3, pairs.as_mut_ptr(), 3, &mut n) };
    assert_eq!(s, FlitextStatus::Config);
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = root.join("include").join("flitext.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in [
        "flitext_model_load",
        "flitext_model_predict",
        "flitext_model_free",
        "flitext_last_error_message",
    ] {
        assert!(text.contains(f), "{f} missing from the header");
    }
    let Ok(out) = Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler; header syntax not checked");
        return;
    };
    assert!(out.status.success());
    let consumer = root.join("tests").join("consumer.c");
    let include = format!("-I{}", root.join("include").display());
    for (lang, std) in [("c", "-std=c99"), ("c++", "-std=c++11")] {
        let out = Command::new("cc")
            .args([
                "-x",
                lang,
                std,
                "-Wall",
                "-Wextra",
                "-Werror",
                "-fsyntax-only",
                &include,
            ])
            .arg(&consumer)
            .output()
            .unwrap();
        assert!(out.status.success(), "{lang}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
