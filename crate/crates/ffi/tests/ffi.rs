use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use mammocascade::evalstat::{auc, eer_metrics, hanley_mcneil_se, ScoreSet};
use mammocascade::netforge::{attach_patch_head, build_backbone, save_checkpoint, BackboneConfig, BlockSpec, ModelInput};
use mammocascade::pixelops::Plane;
use mammocascade::trainloop::{lr_at, LrSchedule};
use mammocascade_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(mvm_last_error_message()) }.to_string_lossy().into_owned()
}

#[test]
fn statistics_match_the_library() {
    let scores = [0.9, 0.6, 0.7, 0.2, 0.6, 0.1];
    let labels = [1u8, 1, 0, 0, 0, 1];
    let set = ScoreSet::new(scores.to_vec(), labels.to_vec()).unwrap();
    let mut a = 0.0;
    assert_eq!(unsafe { mvm_auc(scores.as_ptr(), labels.as_ptr(), 6, &mut a) }, MvmStatus::Ok);
    assert_eq!(a, auc(&set).unwrap());
    assert_eq!(last_error(), "");

    let mut se = 0.0;
    assert_eq!(unsafe { mvm_hanley_mcneil_se(0.8483, 111, 162, &mut se) }, MvmStatus::Ok);
    assert_eq!(se, hanley_mcneil_se(0.8483, 111, 162).unwrap());

    let mut e = MvmEer { threshold: 0.0, accuracy: 0.0, sensitivity: 0.0, specificity: 0.0 };
    assert_eq!(unsafe { mvm_eer(scores.as_ptr(), labels.as_ptr(), 6, &mut e) }, MvmStatus::Ok);
    let want = eer_metrics(&set).unwrap();
    assert_eq!((e.accuracy, e.sensitivity, e.threshold), (want.accuracy, want.sensitivity, want.threshold));

    let folds = [0.8891, 0.8880, 0.9486, 0.9882, 0.9350];
    let (mut m, mut s) = (0.0, 0.0);
    assert_eq!(unsafe { mvm_cv_aggregate(folds.as_ptr(), 5, &mut m, &mut s) }, MvmStatus::Ok);
    assert!((m - 0.9298).abs() < 1e-4 && (s - 0.0379).abs() < 1e-4);
}

#[test]
fn errors_set_status_and_message() {
    let scores = [0.3, 0.4];
    let labels = [1u8, 1];
    let mut a = 0.0;
    assert_eq!(unsafe { mvm_auc(scores.as_ptr(), labels.as_ptr(), 2, &mut a) }, MvmStatus::InvalidInput);
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { mvm_auc(ptr::null(), labels.as_ptr(), 2, &mut a) }, MvmStatus::NullPointer);
    assert!(last_error().contains("scores"));
    assert_eq!(unsafe { mvm_auc(scores.as_ptr(), labels.as_ptr(), 2, ptr::null_mut()) }, MvmStatus::InvalidInput);
    let bad = [0u8, 3];
    assert_eq!(unsafe { mvm_auc(scores.as_ptr(), bad.as_ptr(), 2, &mut a) }, MvmStatus::InvalidInput);
    let mut se = 0.0;
    assert_eq!(unsafe { mvm_hanley_mcneil_se(1.5, 3, 3, &mut se) }, MvmStatus::InvalidInput);
}

#[test]
fn schedule_values_match_the_library() {
    let s = LrSchedule::cyclic(1e-4, 4, 3, 2e-4, 30);
    for epoch in 0..30 {
        let mut lr = 0.0;
        assert_eq!(unsafe { mvm_lr_at(1e-4, 4, 3, 2e-4, 30, epoch, &mut lr) }, MvmStatus::Ok);
        assert_eq!(lr, lr_at(&s, epoch).unwrap());
    }
    let mut lr = 0.0;
    assert_eq!(unsafe { mvm_lr_at(1e-5, 0, 1, 0.0, 10, 9, &mut lr) }, MvmStatus::Ok);
    assert_eq!(lr, 1e-5);
    assert_eq!(unsafe { mvm_lr_at(1e-5, 0, 1, 0.0, 10, 10, &mut lr) }, MvmStatus::InvalidInput);
}

fn tiny() -> BackboneConfig {
    BackboneConfig {
        name: "tiny".into(),
        in_channels: 1,
        stem_kernel: 3,
        stem_stride: 2,
        stem_channels: 4,
        stages: vec![BlockSpec::new(2, 6, 3, 2, 1)],
        feature_channels: 8,
        declared_total_stride: 4,
    }
}

#[test]
fn loaded_model_forward_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("patch.ckpt");
    let model = attach_patch_head(&build_backbone::<f32>(&tiny(), (16, 12), 3).unwrap(), 3).unwrap();
    save_checkpoint(&model, &path).unwrap();

    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle: *mut MvmModel = ptr::null_mut();
    assert_eq!(unsafe { mvm_model_load(c_path.as_ptr(), &mut handle) }, MvmStatus::Ok);
    assert!(!handle.is_null());

    let (mut n, mut h, mut w) = (0usize, 0usize, 0usize);
    assert_eq!(unsafe { mvm_model_num_classes(handle, &mut n) }, MvmStatus::Ok);
    assert_eq!(unsafe { mvm_model_input_size(handle, &mut h, &mut w) }, MvmStatus::Ok);
    assert_eq!((n, h, w), (5, 16, 12));

    let pixels: Vec<f32> = (0..h * w).map(|i| ((i * 37) % 17) as f32 / 8.0 - 1.0).collect();
    let mut probs = vec![0f32; n];
    let st = unsafe { mvm_model_forward(handle, pixels.as_ptr(), ptr::null(), h, w, probs.as_mut_ptr(), n) };
    assert_eq!(st, MvmStatus::Ok);
    let want = model.predict(&ModelInput::Single(Plane::new(h, w, pixels.clone()).unwrap())).unwrap();
    assert_eq!(probs, want);

    let st = unsafe { mvm_model_forward(handle, pixels.as_ptr(), ptr::null(), h, w, probs.as_mut_ptr(), 3) };
    assert_eq!(st, MvmStatus::Shape);
    let st = unsafe { mvm_model_forward(handle, pixels.as_ptr(), ptr::null(), 8, 8, probs.as_mut_ptr(), n) };
    assert_eq!(st, MvmStatus::Shape);
    let st = unsafe { mvm_model_forward(handle, pixels.as_ptr(), pixels.as_ptr(), h, w, probs.as_mut_ptr(), n) };
    assert_ne!(st, MvmStatus::Ok);
    unsafe { mvm_model_free(handle) };
    unsafe { mvm_model_free(ptr::null_mut()) };
}

#[test]
fn damaged_checkpoint_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ckpt");
    std::fs::write(&path, b"not a checkpoint").unwrap();
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle: *mut MvmModel = ptr::null_mut();
    assert_eq!(unsafe { mvm_model_load(c_path.as_ptr(), &mut handle) }, MvmStatus::Checkpoint);
    assert!(handle.is_null());
    assert!(last_error().contains("byte offset"));

    let missing = CString::new(dir.path().join("absent.ckpt").to_str().unwrap()).unwrap();
    assert_ne!(unsafe { mvm_model_load(missing.as_ptr(), &mut handle) }, MvmStatus::Ok);
    assert_eq!(unsafe { mvm_model_load(ptr::null(), &mut handle) }, MvmStatus::NullPointer);
}

#[test]
fn header_is_valid_c() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let header = include.join("mammocascade.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in [
        "mvm_auc",
        "mvm_eer",
        "mvm_cv_aggregate",
        "mvm_lr_at",
        "mvm_model_load",
        "mvm_model_forward",
        "mvm_model_free",
        "mvm_last_error_message",
    ] {
        assert!(text.contains(&format!("{f}(")), "{f} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"mammocascade.h\"\nint main(void) { double a; uint8_t l[2] = {0, 1}; double s[2] = {0.1, 0.9};\n  return mvm_auc(s, l, 2, &a) == MVM_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let Ok(out) = std::process::Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-fsyntax-only")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .output()
    else {
        eprintln!("no C compiler found; skipped the compile check");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
