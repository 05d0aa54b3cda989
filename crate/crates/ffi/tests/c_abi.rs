use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use psadkit::featurize::N_FEATURES;
use psadkit::synth::{gen_corpus, write_corpus, EffectConfig, OutputMode};
use psadkit_ffi::*;

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = psadkit_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn synthetic_manifest(dir: &Path) -> std::path::PathBuf {
    let config = EffectConfig {
        n_participants: 12,
        dual_context_fraction: 1.0,
        seed: 4,
        ..EffectConfig::default()
    };
    let (corpus, truth) = gen_corpus(&config).unwrap();
    write_corpus(dir, &corpus, &truth, OutputMode::Features, config.seed).unwrap()
}

#[test]
fn train_save_load_predict() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = cstr(&synthetic_manifest(dir.path()));

    let mut corpus = ptr::null_mut();
    assert_eq!(unsafe { psadkit_corpus_load(manifest.as_ptr(), &mut corpus) }, PSADKIT_OK);
    assert_eq!(unsafe { psadkit_corpus_len(corpus) }, 24);

    let config = CString::new(r#"{"train": {"epochs": 20}}"#).unwrap();
    let mut model = ptr::null_mut();
    let code = unsafe { psadkit_model_train(corpus, config.as_ptr(), &mut model) };
    assert_eq!(code, PSADKIT_OK, "{}", last_error());

    let features = [
        180.0, 10.0, 0.05, 0.01, 0.1, 0.02, 1500.0, 100.0, 12.0, 0.2, 8.0, 2.0, 1.0, 3.0, 1.0, 1.0, 30.0,
    ];
    assert_eq!(features.len(), N_FEATURES);
    let scales = [20.0, 30.0, 35.0, 80.0];
    let (mut p1, mut y1) = (0.0, -1);
    let code = unsafe {
        psadkit_model_predict(model, features.as_ptr(), PSADKIT_CONTEXT_EVALUATIVE, scales.as_ptr(), &mut p1, &mut y1)
    };
    assert_eq!(code, PSADKIT_OK, "{}", last_error());
    assert!((0.0..=1.0).contains(&p1));
    assert_eq!(y1, i32::from(p1 >= 0.5));

    let bundle = cstr(&dir.path().join("bundle"));
    assert_eq!(unsafe { psadkit_model_save(model, bundle.as_ptr()) }, PSADKIT_OK);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { psadkit_model_load(bundle.as_ptr(), &mut loaded) }, PSADKIT_OK);
    let (mut p2, mut y2) = (0.0, -1);
    unsafe {
        psadkit_model_predict(loaded, features.as_ptr(), PSADKIT_CONTEXT_EVALUATIVE, scales.as_ptr(), &mut p2, &mut y2)
    };
    assert_eq!(p1.to_bits(), p2.to_bits());
    assert_eq!(y1, y2);

    let code = unsafe { psadkit_model_predict(loaded, features.as_ptr(), 7, scales.as_ptr(), &mut p2, &mut y2) };
    assert_eq!(code, PSADKIT_ERR_INVALID_ARGUMENT);

    unsafe {
        psadkit_model_free(model);
        psadkit_model_free(loaded);
        psadkit_corpus_free(corpus);
        psadkit_model_free(ptr::null_mut());
        psadkit_corpus_free(ptr::null_mut());
    }
}

#[test]
fn domain_errors_carry_library_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = cstr(&dir.path().join("nope.json"));
    let mut corpus = ptr::null_mut();
    let code = unsafe { psadkit_corpus_load(missing.as_ptr(), &mut corpus) };
    assert_eq!(code, PSADKIT_ERR_MISSING_FILE);
    assert!(corpus.is_null());
    assert!(last_error().contains("nope.json"));

    let mut model = ptr::null_mut();
    let code = unsafe { psadkit_model_load(missing.as_ptr(), &mut model) };
    assert!(code > 0);

    let manifest = cstr(&synthetic_manifest(dir.path()));
    assert_eq!(unsafe { psadkit_corpus_load(manifest.as_ptr(), &mut corpus) }, PSADKIT_OK);
    let bad = CString::new(r#"{"train": {"learning_rate": -1.0}}"#).unwrap();
    let code = unsafe { psadkit_model_train(corpus, bad.as_ptr(), &mut model) };
    assert_eq!(code, PSADKIT_ERR_CONFIG_INVALID);
    let typo = CString::new(r#"{"trian": {}}"#).unwrap();
    let code = unsafe { psadkit_model_train(corpus, typo.as_ptr(), &mut model) };
    assert_eq!(code, PSADKIT_ERR_CONFIG_INVALID);
    unsafe { psadkit_corpus_free(corpus) };
}

#[test]
fn wilcoxon_rejects_all_zero_differences() {
    let x = [1.0, 2.0, 3.0];
    let mut p = 0.0;
    let code = unsafe { psadkit_wilcoxon(x.as_ptr(), x.as_ptr(), 3, &mut p) };
    assert_eq!(code, PSADKIT_ERR_ALL_ZERO_DIFFERENCES);
}

#[test]
fn header_declares_api_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/psadkit.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "psadkit_corpus_load",
        "psadkit_model_train",
        "psadkit_model_predict",
        "psadkit_last_error",
        "typedef struct PsadkitModel PsadkitModel",
        "PSADKIT_ERR_MISSING_FILE 1",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(&src, "#include \"psadkit.h\"\nint main(void) { return psadkit_last_error() == 0 ? 0 : 1; }\n").unwrap();
    match Command::new("cc")
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(header.parent().unwrap())
        .arg(&src)
        .status()
    {
        Ok(status) => assert!(status.success(), "header does not compile as C"),
        Err(_) => eprintln!("no C compiler found; syntax check skipped"),
    }
}
