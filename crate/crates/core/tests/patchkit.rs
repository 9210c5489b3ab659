use mammocascade::dataio::{synth_dataset, GrayImage, LesionKind, Malignancy, Mask, RoiFinding, SynthParams, View};
use mammocascade::patchkit::{
    class_distribution, label_patch, mask_centroid, sample_background_patches, sample_exam_patches, sample_lesion_patches, PatchLabel,
    SamplerConfig,
};
use mammocascade::pixelops::{augment, resize_bilinear, tta_views, AugmentParams, Plane};
use mammocascade::rng;
use mammocascade::Error;
use proptest::prelude::*;

fn gradient(h: usize, w: usize) -> GrayImage {
    GrayImage::new(h, w, (0..h * w).map(|i| (i % 65_000) as u16).collect()).unwrap()
}

fn disc(h: usize, w: usize, cr: usize, cc: usize, rad: usize) -> Mask {
    let mut m = Mask::empty(h, w);
    for r in 0..h {
        for c in 0..w {
            let (dr, dc) = (r as i64 - cr as i64, c as i64 - cc as i64);
            if dr * dr + dc * dc <= (rad * rad) as i64 {
                m.set(r, c);
            }
        }
    }
    m
}

fn finding(mask: Mask) -> RoiFinding {
    RoiFinding { view: View::Cc, mask, kind: LesionKind::Mass, malignancy: Malignancy::Malignant }
}

#[test]
fn labels_follow_kind_and_pathology() {
    let mut f = finding(Mask::empty(1, 1));
    assert_eq!(label_patch(&f), PatchLabel::MalignantMass);
    f.malignancy = Malignancy::Benign;
    assert_eq!(label_patch(&f), PatchLabel::BenignMass);
    f.kind = LesionKind::Calcification;
    assert_eq!(label_patch(&f), PatchLabel::BenignCalcification);
    f.malignancy = Malignancy::Malignant;
    assert_eq!(label_patch(&f), PatchLabel::MalignantCalcification);
    for (i, l) in PatchLabel::ALL.iter().enumerate() {
        assert_eq!(l.index(), i);
        assert_eq!(PatchLabel::from_index(i), Some(*l));
    }
    assert_eq!(PatchLabel::from_index(5), None);
}

#[test]
fn centroid_of_a_rectangle() {
    let mut m = Mask::empty(10, 10);
    for r in 2..5 {
        for c in 6..10 {
            m.set(r, c);
        }
    }
    assert_eq!(mask_centroid(&m).unwrap(), (3.0, 7.5));
    assert!(mask_centroid(&Mask::empty(3, 3)).is_err());
}

#[test]
fn zero_jitter_centres_the_window_on_the_lesion() {
    let img = gradient(100, 80);
    let f = finding(disc(100, 80, 50, 40, 5));
    let cfg = SamplerConfig { patch_size: 21, n_lesion: 3, jitter: 0.0, ..Default::default() };
    let p = sample_lesion_patches(&img, &f, &cfg, "x", &mut rng::stream(0, &[])).unwrap();
    assert_eq!(p.len(), 3);
    for s in &p {
        assert_eq!(s.window_origin, (40, 30));
        assert_eq!(s.pixels, img.crop(40, 30, 21));
        assert_eq!(s.label, PatchLabel::MalignantMass);
    }
}

#[test]
fn lesion_windows_at_the_border_are_clamped() {
    let img = gradient(60, 50);
    let f = finding(disc(60, 50, 1, 48, 1));
    let cfg = SamplerConfig { patch_size: 32, n_lesion: 20, ..Default::default() };
    let p = sample_lesion_patches(&img, &f, &cfg, "x", &mut rng::stream(1, &[])).unwrap();
    assert_eq!(p.len(), 20);
    assert!(p.iter().all(|s| s.window_origin == (0, 18)));
}

#[test]
fn image_smaller_than_patch_is_rejected() {
    let img = gradient(20, 20);
    let cfg = SamplerConfig { patch_size: 32, ..Default::default() };
    assert!(sample_lesion_patches(&img, &finding(disc(20, 20, 10, 10, 2)), &cfg, "x", &mut rng::stream(0, &[])).is_err());
}

#[test]
fn saturated_image_reports_the_exam() {
    let img = gradient(40, 40);
    let mut full = Mask::empty(40, 40);
    for r in 0..40 {
        for c in 0..40 {
            full.set(r, c);
        }
    }
    let cfg = SamplerConfig { patch_size: 16, max_rejection_attempts: 50, ..Default::default() };
    match sample_background_patches(&img, &[&full], &cfg, "E7", View::Mlo, &mut rng::stream(0, &[])) {
        Err(Error::Saturation { exam_id, attempts }) => assert_eq!((exam_id.as_str(), attempts), ("E7", 50)),
        other => panic!("expected saturation, got {other:?}"),
    }
}

#[test]
fn exam_sampling_is_order_and_thread_independent() {
    let synth = synth_dataset(&SynthParams {
        n_exams: 8,
        image_height: 96,
        image_width: 64,
        mass_radius: (4.0, 6.0),
        calc_cluster_radius: 6.0,
        seed: 3,
        ..Default::default()
    })
    .unwrap();
    let exams: Vec<_> = synth.iter().map(|s| &s.exam).collect();
    let cfg = SamplerConfig { patch_size: 24, n_lesion: 4, n_background: 4, ..Default::default() };
    let a = sample_exam_patches(&exams, &cfg, 11).unwrap();
    let n_rois: usize = exams.iter().map(|e| e.rois.len()).sum();
    assert_eq!(a.len(), n_rois * 8);

    let mut rev = exams.clone();
    rev.reverse();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = one.install(|| sample_exam_patches(&rev, &cfg, 11).unwrap());
    let key = |p: &mammocascade::patchkit::PatchSample| (p.source_exam_id.clone(), p.view, p.window_origin, p.label);
    let mut ka: Vec<_> = a.iter().map(key).collect();
    let mut kb: Vec<_> = b.iter().map(key).collect();
    ka.sort();
    kb.sort();
    assert_eq!(ka, kb);

    let d = class_distribution(&a).unwrap();
    assert!((d.values().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(d[&PatchLabel::Background], 0.5);
    assert!(class_distribution(&[]).is_err());
}

#[test]
fn flips_and_tta_views() {
    let p = Plane::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    assert_eq!(p.flip_horizontal().data, vec![3.0, 2.0, 1.0, 6.0, 5.0, 4.0]);
    assert_eq!(p.flip_vertical().data, vec![4.0, 5.0, 6.0, 1.0, 2.0, 3.0]);
    let v = tta_views(&p);
    assert_eq!(v.len(), 4);
    assert_eq!(v[0], p);
    assert_eq!(v[3].data, vec![6.0, 5.0, 4.0, 3.0, 2.0, 1.0]);
}

#[test]
fn resize_of_a_constant_is_constant() {
    let p = Plane::filled(7, 5, 3.25);
    let r = resize_bilinear(&p, 14, 3).unwrap();
    assert_eq!((r.h, r.w), (14, 3));
    assert!(r.data.iter().all(|&v| v == 3.25));
    assert!(resize_bilinear(&p, 0, 3).is_err());
}

#[test]
fn disabled_augmentation_is_the_identity() {
    let p = Plane::new(6, 4, (0..24).map(|i| i as f32).collect()).unwrap();
    for s in 0..5 {
        assert_eq!(augment(&p, &AugmentParams::none(), &mut rng::stream(s, &[])), p);
    }
}

proptest! {
    #[test]
    fn lesion_windows_respect_jitter_and_bounds(
        h in 40usize..120, w in 40usize..120, s in 8usize..40, fr in 0.0f64..1.0, fc in 0.0f64..1.0,
        jitter in 0.0f64..0.3, seed in any::<u64>(),
    ) {
        prop_assume!(s <= h && s <= w);
        let (cr, cc) = (((h - 1) as f64 * fr) as usize, ((w - 1) as f64 * fc) as usize);
        let f = finding(disc(h, w, cr, cc, 0));
        let cfg = SamplerConfig { patch_size: s, n_lesion: 10, jitter, ..Default::default() };
        let img = gradient(h, w);
        let patches = sample_lesion_patches(&img, &f, &cfg, "x", &mut rng::stream(seed, &[])).unwrap();
        prop_assert_eq!(patches.len(), 10);
        for p in &patches {
            prop_assert!((p.center.0 - cr as f64).abs() <= jitter * s as f64 + 1e-9);
            prop_assert!((p.center.1 - cc as f64).abs() <= jitter * s as f64 + 1e-9);
            prop_assert!(p.window_origin.0 + s <= h && p.window_origin.1 + s <= w);
            prop_assert_eq!((p.pixels.h, p.pixels.w), (s, s));
            prop_assert_eq!(&p.pixels, &img.crop(p.window_origin.0, p.window_origin.1, s));
        }
    }

    #[test]
    fn background_windows_never_touch_a_mask(
        h in 40usize..100, w in 40usize..100, s in 8usize..24, seed in any::<u64>(),
        lesions in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 1usize..6), 1..4),
    ) {
        let masks: Vec<Mask> = lesions.iter().map(|&(fr, fc, r)| disc(h, w, ((h - 1) as f64 * fr) as usize, ((w - 1) as f64 * fc) as usize, r)).collect();
        let refs: Vec<&Mask> = masks.iter().collect();
        let cfg = SamplerConfig { patch_size: s, n_background: 8, ..Default::default() };
        let patches = match sample_background_patches(&gradient(h, w), &refs, &cfg, "x", View::Cc, &mut rng::stream(seed, &[])) {
            Ok(p) => p,
            Err(Error::Saturation { .. }) => {
                // only acceptable when free windows are vanishingly rare
                let origins: Vec<(usize, usize)> = (0..=h - s).flat_map(|r| (0..=w - s).map(move |c| (r, c))).collect();
                let free = origins.iter().filter(|&&(r, c)| masks.iter().all(|m| m.window_sum(r, c, s) == 0)).count();
                prop_assert!((free as f64) < 1e-3 * origins.len() as f64, "{free} free windows of {}", origins.len());
                return Ok(());
            }
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        prop_assert_eq!(patches.len(), 8);
        for p in &patches {
            let (r, c) = p.window_origin;
            prop_assert!(r + s <= h && c + s <= w);
            for m in &masks {
                prop_assert_eq!(m.window_sum(r, c, s), 0);
            }
            prop_assert_eq!(p.label, PatchLabel::Background);
        }
    }

    #[test]
    fn flips_are_involutions(h in 1usize..9, w in 1usize..9, seed in any::<u32>()) {
        let p = Plane::new(h, w, (0..h * w).map(|i| ((i as u32).wrapping_mul(seed) % 101) as f32).collect()).unwrap();
        prop_assert_eq!(p.flip_horizontal().flip_horizontal(), p.clone());
        prop_assert_eq!(p.flip_vertical().flip_vertical(), p.clone());
        prop_assert_eq!(p.flip_horizontal().flip_vertical(), p.flip_vertical().flip_horizontal());
    }
}
