use std::collections::{BTreeMap, BTreeSet};

use mammocascade::dataio::{
    carve_validation, load_manifest, load_metadata, make_folds, synth_dataset, write_dataset, Exam, ExamLabel, FoldOptions, GrayImage,
    IngestOptions, Side, SplitOrigin, SynthParams, View,
};
use proptest::prelude::*;

fn small_params(n: usize, seed: u64) -> SynthParams {
    SynthParams {
        n_exams: n,
        image_height: 96,
        image_width: 64,
        mass_radius: (4.0, 6.0),
        calc_cluster_radius: 6.0,
        seed,
        ..Default::default()
    }
}

fn bare_exam(id: usize, patient: usize, side: Side, malignant: bool) -> Exam {
    let mut images = BTreeMap::new();
    images.insert(View::Cc, GrayImage::new(1, 1, vec![0]).unwrap());
    images.insert(View::Mlo, GrayImage::new(1, 1, vec![0]).unwrap());
    Exam {
        exam_id: format!("E{id:04}"),
        patient_id: format!("P{patient:03}"),
        side,
        images,
        rois: vec![],
        label: if malignant { ExamLabel::Malignant } else { ExamLabel::Benign },
        split_origin: SplitOrigin::Train,
    }
}

#[test]
fn synthesis_is_deterministic_and_thread_independent() {
    let p = small_params(12, 5);
    let a = synth_dataset(&p).unwrap();
    let one_thread = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = one_thread.install(|| synth_dataset(&p).unwrap());
    assert_eq!(a, b);
    let c = synth_dataset(&SynthParams { seed: 6, ..p }).unwrap();
    assert_ne!(a[0].exam.images, c[0].exam.images);
}

#[test]
fn zero_exams_is_an_empty_dataset() {
    assert!(synth_dataset(&small_params(0, 1)).unwrap().is_empty());
    let dir = tempfile::tempdir().unwrap();
    let files = write_dataset(dir.path(), &[]).unwrap();
    assert_eq!((files.n_exams, files.n_images, files.n_masks), (0, 0, 0));
    assert!(load_manifest(&files.manifest).unwrap().is_empty());
}

#[test]
fn synthetic_exams_are_well_formed() {
    let synth = synth_dataset(&small_params(40, 2)).unwrap();
    let mut ids = BTreeSet::new();
    for s in &synth {
        let e = &s.exam;
        assert!(ids.insert(e.exam_id.clone()));
        assert!(e.has_both_views());
        e.validate().unwrap();
        assert!(!e.rois.is_empty());
        // label agrees with the findings
        assert_eq!(e.label == ExamLabel::Malignant, e.any_malignant_finding());
        for v in View::BOTH {
            let img = e.image(v).unwrap();
            assert_eq!((img.h, img.w), (96, 64));
        }
    }
    let n_test = synth.iter().filter(|s| s.exam.split_origin == SplitOrigin::Test).count();
    assert!(n_test > 0 && n_test < synth.len());
}

#[test]
fn manifest_and_metadata_round_trip() {
    let synth = synth_dataset(&small_params(6, 3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = write_dataset(dir.path(), &synth).unwrap();
    assert_eq!(files.n_exams, 6);
    assert_eq!(files.n_images, 12);
    assert_eq!(files.n_masks, synth.iter().map(|s| s.exam.rois.len()).sum::<usize>());

    let from_manifest = load_manifest(&files.manifest).unwrap();
    let originals: Vec<&Exam> = synth.iter().map(|s| &s.exam).collect();
    assert_eq!(from_manifest.iter().collect::<Vec<_>>(), originals);

    let mut from_csv = load_metadata(&files.metadata_csv, dir.path(), IngestOptions::od()).unwrap();
    from_csv.sort_by(|a, b| a.exam_id.cmp(&b.exam_id));
    let mut sorted = originals.clone();
    sorted.sort_by(|a, b| a.exam_id.cmp(&b.exam_id));
    assert_eq!(from_csv.iter().collect::<Vec<_>>(), sorted);
}

#[test]
fn metadata_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("meta.csv");
    std::fs::write(
        &csv,
        "exam_id,patient_id,side,view,image_file,label,split\nA,P1,LEFT,CC,missing.png,MALIGNANT,train\nA,P1,LEFT,SIDEWAYS,missing.png,MALIGNANT,train\n",
    )
    .unwrap();
    let err = load_metadata(&csv, dir.path(), IngestOptions::cv()).unwrap_err();
    let text = err.to_string();
    assert!(text.contains("missing.png") || text.contains("SIDEWAYS"), "{text}");
    assert!(load_metadata(&dir.path().join("absent.csv"), dir.path(), IngestOptions::cv()).is_err());
}

#[test]
fn bwc_policy_drops_or_relabels() {
    let dir = tempfile::tempdir().unwrap();
    let synth = synth_dataset(&small_params(2, 4)).unwrap();
    let files = write_dataset(dir.path(), &synth).unwrap();
    let text = std::fs::read_to_string(&files.metadata_csv).unwrap();
    let first = &synth[0].exam.exam_id;
    // relabel the first exam as benign without callback, removing its ROIs
    let mut lines: Vec<String> = vec![text.lines().next().unwrap().to_string()];
    let mut seen = BTreeSet::new();
    for l in text.lines().skip(1) {
        let cols: Vec<&str> = l.split(',').collect();
        if cols[0] == first {
            if seen.insert(cols[3].to_string()) {
                lines.push(format!("{},{},{},{},{},BENIGN_WITHOUT_CALLBACK,{},,,", cols[0], cols[1], cols[2], cols[3], cols[4], cols[6]));
            }
        } else {
            lines.push(l.to_string());
        }
    }
    std::fs::write(&files.metadata_csv, lines.join("\n") + "\n").unwrap();
    let cv = load_metadata(&files.metadata_csv, dir.path(), IngestOptions::cv()).unwrap();
    assert!(cv.iter().all(|e| &e.exam_id != first));
    let od = load_metadata(&files.metadata_csv, dir.path(), IngestOptions::od()).unwrap();
    let e = od.iter().find(|e| &e.exam_id == first).unwrap();
    assert_eq!(e.label, ExamLabel::Benign);
    assert!(e.rois.is_empty());
}

#[test]
fn fold_counts_for_known_sizes() {
    let exams: Vec<Exam> = (0..50).map(|i| bare_exam(i, i, Side::Left, i % 5 == 0)).collect();
    let f = make_folds(&exams, 5, 0, FoldOptions::default()).unwrap();
    assert_eq!(f.sizes(), vec![10; 5]);
    for k in 0..5 {
        let m = f.members(k).iter().filter(|id| exams.iter().any(|e| &e.exam_id == *id && e.label == ExamLabel::Malignant)).count();
        assert_eq!(m, 2);
    }
    assert!(make_folds(&exams, 1, 0, FoldOptions::default()).is_err());
    assert!(make_folds(&exams[..3], 4, 0, FoldOptions::default()).is_err());
}

#[test]
fn validation_carve_sizes() {
    let items: Vec<usize> = (0..40).collect();
    let (train, val) = carve_validation(&items, 0.15, 9).unwrap();
    assert_eq!(val.len(), 6);
    assert_eq!(train.len(), 34);
    let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
    all.sort();
    assert_eq!(all, items);
    assert!(train.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(carve_validation(&items, 0.15, 9).unwrap(), (train, val));
    assert!(carve_validation(&items, 0.0, 9).is_err());
    assert!(carve_validation(&items[..2], 0.1, 9).is_err());
}

fn arb_exams() -> impl Strategy<Value = Vec<Exam>> {
    prop::collection::vec((0usize..25, any::<bool>(), any::<bool>()), 10..80).prop_map(|rows| {
        rows.into_iter().enumerate().map(|(i, (p, left, m))| bare_exam(i, p, if left { Side::Left } else { Side::Right }, m)).collect()
    })
}

proptest! {
    #[test]
    fn folds_partition_and_keep_breasts_together(exams in arb_exams(), k in 2usize..6, seed in any::<u64>(), by_patient in any::<bool>()) {
        let opts = FoldOptions { stratify: true, group_by_patient: by_patient };
        let groups: BTreeSet<String> = exams.iter().map(|e| if by_patient { e.patient_id.clone() } else { format!("{}{:?}", e.patient_id, e.side) }).collect();
        match make_folds(&exams, k, seed, opts) {
            Err(_) => prop_assert!(k > groups.len()),
            Ok(f) => {
                prop_assert_eq!(f.assignment.len(), exams.len());
                prop_assert!(f.assignment.values().all(|&v| v < k));
                let mut home: BTreeMap<String, usize> = BTreeMap::new();
                for e in &exams {
                    let key = if by_patient { e.patient_id.clone() } else { format!("{}{:?}", e.patient_id, e.side) };
                    let fold = f.fold_of(&e.exam_id).unwrap();
                    prop_assert_eq!(*home.entry(key).or_insert(fold), fold);
                }
                prop_assert_eq!(make_folds(&exams, k, seed, opts).unwrap(), f);
            }
        }
    }

    #[test]
    fn singleton_groups_give_balanced_stratified_folds(n in 10usize..90, k in 2usize..6, seed in any::<u64>(), mal in prop::collection::vec(any::<bool>(), 90)) {
        let exams: Vec<Exam> = (0..n).map(|i| bare_exam(i, i, Side::Right, mal[i])).collect();
        let f = make_folds(&exams, k, seed, FoldOptions::default()).unwrap();
        let sizes = f.sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut m = vec![0usize; k];
        for e in exams.iter().filter(|e| e.label == ExamLabel::Malignant) {
            m[f.fold_of(&e.exam_id).unwrap()] += 1;
        }
        prop_assert!(m.iter().max().unwrap() - m.iter().min().unwrap() <= 1);
    }

    #[test]
    fn carve_is_a_partition(n in 2usize..200, frac in 0.05f64..0.95, seed in any::<u64>()) {
        let items: Vec<usize> = (0..n).collect();
        let n_val = (frac * n as f64).round() as usize;
        match carve_validation(&items, frac, seed) {
            Err(_) => prop_assert!(n_val == 0 || n_val == n),
            Ok((train, val)) => {
                prop_assert_eq!(val.len(), n_val);
                let a: BTreeSet<usize> = train.iter().copied().collect();
                let b: BTreeSet<usize> = val.iter().copied().collect();
                prop_assert!(a.is_disjoint(&b));
                prop_assert_eq!(a.len() + b.len(), n);
            }
        }
    }
}
