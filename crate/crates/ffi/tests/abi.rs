use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use celp::mask::{BACKGROUND, FOREGROUND, IGNORE};
use celp::model::{Checkpoint, Decoder, DecoderShape, MID_CHANNELS};
use celp::rng::SplitMix64;
use celp_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(celp_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn cosine_and_errors() {
    let (u, v) = ([1.0, 0.0], [1.0, 1.0]);
    let mut out = 0.0;
    assert_eq!(unsafe { celp_cosine(u.as_ptr(), v.as_ptr(), 2, &mut out) }, CelpStatus::Ok);
    assert!((out - 0.5f64.sqrt()).abs() < 1e-15);
    assert_eq!(unsafe { celp_cosine(u.as_ptr(), v.as_ptr(), 0, &mut out) }, CelpStatus::Dimension);
    assert!(last_error().contains("empty"), "{}", last_error());
    assert_eq!(unsafe { celp_cosine(u.as_ptr(), ptr::null(), 2, &mut out) }, CelpStatus::NullPointer);
}

#[test]
fn mining_matches_core_and_reports_empty() {
    let (c, h, w) = (2, 2, 2);
    let fm: Vec<f64> = (0..c * h * w).map(|i| i as f64 + 1.0).collect();
    let fh = vec![1.0; 3 * h * w];
    let mask = [BACKGROUND; 4];
    let (mut out_mask, mut proto, mut centre) = ([0u8; 4], [0.0; 2], 0usize);
    let status = unsafe {
        celp_mine(fm.as_ptr(), c, fh.as_ptr(), 3, h, w, mask.as_ptr(), 0.65, 0, 5,
            out_mask.as_mut_ptr(), proto.as_mut_ptr(), &mut centre)
    };
    assert_eq!(status, CelpStatus::Ok);
    // identical high-level vectors: everything joins the mined region
    assert_eq!(out_mask, [FOREGROUND; 4]);
    assert_eq!(proto, [2.5, 6.5]);
    assert!(centre < 4);

    let all_fg = [FOREGROUND; 4];
    let status = unsafe {
        celp_mine(fm.as_ptr(), c, fh.as_ptr(), 3, h, w, all_fg.as_ptr(), 0.65, 0, 5,
            out_mask.as_mut_ptr(), proto.as_mut_ptr(), &mut centre)
    };
    assert_eq!(status, CelpStatus::NoLatentRegion);

    let bad = [BACKGROUND, 7, IGNORE, BACKGROUND];
    let status = unsafe {
        celp_mine(fm.as_ptr(), c, fh.as_ptr(), 3, h, w, bad.as_ptr(), 0.65, 0, 5,
            out_mask.as_mut_ptr(), proto.as_mut_ptr(), &mut centre)
    };
    assert_eq!(status, CelpStatus::InvalidMask);
}

fn scene() -> (Vec<f64>, Vec<u8>) {
    let mut rng = SplitMix64::new(3);
    let s = celp::episodes::generate_scene(&[0], &mut rng).unwrap();
    (s.image.data().to_vec(), s.masks[0].labels().to_vec())
}

#[test]
fn checkpoint_load_and_predict() {
    let dir = tempfile::tempdir().unwrap();
    let shape = DecoderShape { hidden: 6, ..DecoderShape::for_features(MID_CHANNELS) };
    let dec = Decoder::<f64>::init(shape, &mut SplitMix64::new(1));
    let path = dir.path().join("ck.bin");
    Checkpoint::from_decoder(&dec, 0).save(&path).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();

    let mut model = ptr::null_mut();
    assert_eq!(unsafe { celp_model_load(cpath.as_ptr(), 7, &mut model) }, CelpStatus::Dimension);
    assert!(last_error().contains("hidden=7"), "{}", last_error());
    assert_eq!(unsafe { celp_model_load(cpath.as_ptr(), 6, &mut model) }, CelpStatus::Ok);
    let mut count = 0;
    unsafe { celp_model_parameter_count(model, &mut count) };
    assert_eq!(count, shape.parameter_count());

    let (img, mask) = scene();
    let mut one = [9u8; 256];
    let mut dup = [9u8; 256];
    let imgs: Vec<f64> = img.iter().chain(&img).copied().collect();
    let masks: Vec<u8> = mask.iter().chain(&mask).copied().collect();
    unsafe {
        assert_eq!(celp_model_predict(model, img.as_ptr(), img.as_ptr(), mask.as_ptr(), 1, 64, 64, 0, one.as_mut_ptr()), CelpStatus::Ok);
        assert_eq!(celp_model_predict(model, img.as_ptr(), imgs.as_ptr(), masks.as_ptr(), 2, 64, 64, 0, dup.as_mut_ptr()), CelpStatus::Ok);
        assert_eq!(celp_model_predict(model, img.as_ptr(), imgs.as_ptr(), masks.as_ptr(), 2, 64, 64, 3, dup.as_mut_ptr()), CelpStatus::OutOfRange);
        celp_model_free(model);
        celp_model_free(ptr::null_mut());
    }
    assert_eq!(one, dup);
    assert!(one.iter().all(|&v| v <= 1));
}

#[test]
fn header_is_generated_and_compiles_from_c() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = root.join("include/celp.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["celp_cosine", "celp_mine", "celp_model_load", "celp_model_predict", "celp_model_free", "CELP_STATUS_NO_LATENT_REGION"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let target = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = target.join("libcelp_ffi.a");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if !lib.exists() || Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping C link check: no static library or C compiler");
        return;
    }
    let exe = tempfile::tempdir().unwrap();
    let bin = exe.path().join("smoke");
    let status = Command::new(&cc)
        .arg(root.join("tests/c/smoke.c"))
        .arg("-I").arg(root.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "C smoke exited with {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}
