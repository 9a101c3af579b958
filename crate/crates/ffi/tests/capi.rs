use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use spectrum::checkpoint;
use spectrum::config::Config;
use spectrum::io::lexicon::{EmotionLexicon, FieldTaxonomy};
use spectrum::io::synth::{synth_corpus, SynthConfig};
use spectrum::io::text::Stopwords;
use spectrum::train::{prepare_corpus, run_training};
use spectrum_ffi::*;

fn last_error() -> String {
    let p = spectrum_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

#[test]
fn errors_are_reported_per_call() {
    let mut m = ptr::null_mut();
    let dir = cstr("/definitely/not/a/checkpoint");
    let s = unsafe { spectrum_model_load(dir.as_ptr(), &mut m) };
    assert_eq!(s, SpectrumStatus::Io);
    assert!(m.is_null());
    assert!(last_error().contains("header.json"));

    let s = unsafe { spectrum_model_load(ptr::null(), &mut m) };
    assert_eq!(s, SpectrumStatus::NullPointer);

    // a successful call clears the message
    let data = [1.0f32; 4];
    let mut f = ptr::null_mut();
    assert_eq!(unsafe { spectrum_feature_from_data(data.as_ptr(), 2, 2, &mut f) }, SpectrumStatus::Ok);
    assert!(spectrum_last_error().is_null());
    unsafe { spectrum_feature_free(f) };
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(spectrum_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn feature_handles_round_trip() {
    let data: Vec<f32> = (0..6).map(|i| i as f32 * 0.5).collect();
    let mut f = ptr::null_mut();
    assert_eq!(unsafe { spectrum_feature_from_data(data.as_ptr(), 2, 3, &mut f) }, SpectrumStatus::Ok);
    unsafe {
        assert_eq!(spectrum_feature_rows(f), 2);
        assert_eq!(spectrum_feature_cols(f), 3);
        assert_eq!(std::slice::from_raw_parts(spectrum_feature_data(f), 6), &data[..]);
        spectrum_feature_free(f);
        assert_eq!(spectrum_feature_rows(ptr::null()), 0);
        spectrum_feature_free(ptr::null_mut());
    }
    let mut f = ptr::null_mut();
    assert_eq!(
        unsafe { spectrum_feature_from_data(data.as_ptr(), 0, 3, &mut f) },
        SpectrumStatus::InvalidArgument
    );
    let nan = [f32::NAN];
    assert_eq!(
        unsafe { spectrum_feature_from_data(nan.as_ptr(), 1, 1, &mut f) },
        SpectrumStatus::InvalidArgument
    );
}

#[test]
fn evaluate_matches_identical_references() {
    let c = [cstr("a happy dog runs in the park"), cstr("the calm cat sleeps on a mat")];
    let r = [
        cstr("a happy dog runs in the park\na dog runs"),
        cstr("the calm cat sleeps on a mat"),
    ];
    let cp: Vec<_> = c.iter().map(|s| s.as_ptr()).collect();
    let rp: Vec<_> = r.iter().map(|s| s.as_ptr()).collect();
    let mut out = SpectrumReport::default();
    let s = unsafe { spectrum_evaluate(cp.as_ptr(), rp.as_ptr(), 2, 1.5, &mut out) };
    assert_eq!(s, SpectrumStatus::Ok, "{}", last_error());
    assert_eq!(out.items, 2);
    assert!((out.bleu4 - 1.0).abs() < 1e-12);
    assert!((out.rouge_l - 1.0).abs() < 1e-12);
    assert!((out.acc_c - 1.0).abs() < 1e-12);

    let s = unsafe { spectrum_evaluate(ptr::null(), rp.as_ptr(), 2, 1.5, &mut out) };
    assert_eq!(s, SpectrumStatus::NullPointer);
    let s = unsafe { spectrum_evaluate(cp.as_ptr(), rp.as_ptr(), 2, -1.0, &mut out) };
    assert_eq!(s, SpectrumStatus::InvalidArgument);
}

fn trained_checkpoint(dir: &Path) -> (spectrum::SpectrumModel<f32>, spectrum::io::manifest::Corpus) {
    let lex = EmotionLexicon::default();
    let tax = FieldTaxonomy::default();
    let sc = SynthConfig {
        videos: 12,
        d_b: 8,
        d_r: 8,
        ..SynthConfig::default()
    };
    let s = synth_corpus(&sc, 3, &lex, &tax, &dir.join("data")).unwrap();
    let mut c = Config::default();
    c.model.d_h = 16;
    c.model.d_b = 8;
    c.model.n_layers = 1;
    c.model.heads = 2;
    c.train.epochs = 2;
    let out = run_training(&c, &s.train, &lex, &tax, &Stopwords::default(), &mut std::io::sink()).unwrap();
    checkpoint::save(&dir.join("ck"), &out.model, out.pool.as_ref()).unwrap();
    (out.model, s.test)
}

#[test]
fn caption_through_the_c_abi_matches_the_library() {
    let tmp = tempfile::tempdir().unwrap();
    let (model, test) = trained_checkpoint(tmp.path());
    let item = &test.items[0];

    let ck = cstr(tmp.path().join("ck").to_str().unwrap());
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { spectrum_model_load(ck.as_ptr(), &mut m) }, SpectrumStatus::Ok);
    assert_eq!(unsafe { spectrum_model_feature_width(m) }, 8);

    let load = |p: &Path| {
        let c = cstr(p.to_str().unwrap());
        let mut f = ptr::null_mut();
        assert_eq!(unsafe { spectrum_feature_load(c.as_ptr(), &mut f) }, SpectrumStatus::Ok);
        f
    };
    let feats = [load(&item.appearance), load(&item.motion), load(&item.audio)];
    let emb = item.video_embedding.clone().unwrap();
    let mut out = ptr::null_mut();
    let s = unsafe { spectrum_model_caption(m, feats[0], feats[1], feats[2], emb.as_ptr(), emb.len(), &mut out) };
    assert_eq!(s, SpectrumStatus::Ok, "{}", last_error());
    let got = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_string();
    unsafe { spectrum_string_free(out) };

    let ck = checkpoint::load(&tmp.path().join("ck"), None, false).unwrap();
    let single = spectrum::io::manifest::Corpus {
        items: vec![item.clone()],
    };
    // test items are absent from the training pool, so self-exclusion is moot
    let data = prepare_corpus(&model, &single, ck.pool.as_ref()).unwrap();
    assert_eq!(got, model.caption(&data[0]).unwrap().join(" "));

    // wrong width is a shape error, not a crash
    let narrow = [0.5f32; 4];
    let mut bad = ptr::null_mut();
    unsafe { spectrum_feature_from_data(narrow.as_ptr(), 1, 4, &mut bad) };
    let s = unsafe { spectrum_model_caption(m, bad, feats[1], feats[2], ptr::null(), 0, &mut out) };
    assert_eq!(s, SpectrumStatus::Shape);
    assert!(last_error().contains("features"));

    unsafe {
        for f in feats {
            spectrum_feature_free(f);
        }
        spectrum_feature_free(bad);
        spectrum_model_free(m);
    }
}

#[test]
fn generated_header_compiles_as_c_and_cpp() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"spectrum.h\"\n\
         int main(void) {\n\
           SpectrumModel *m = 0;\n\
           SpectrumReport r;\n\
           SpectrumStatus s = spectrum_model_load(\"x\", &m);\n\
           (void)r; return s == SPECTRUM_STATUS_OK ? 0 : 1;\n\
         }\n",
    )
    .unwrap();
    for (compiler, extra) in [("cc", &["-std=c99"][..]), ("c++", &["-x", "c++"][..])] {
        let status = Command::new(compiler)
            .args(extra)
            .args(["-Wall", "-Werror", "-fsyntax-only", "-I"])
            .arg(&header)
            .arg(&src)
            .status();
        match status {
            Ok(s) => assert!(s.success(), "{compiler} rejected spectrum.h"),
            Err(_) => eprintln!("{compiler} not available; skipping"),
        }
    }
}
