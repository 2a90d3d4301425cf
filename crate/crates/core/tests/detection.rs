use cabwatch::detect::{
    hog_descriptor, non_max_suppression, sliding_window_detect, FaceDetector, HogFaceDetector, HogParams,
    LinearDetectorModel, ScanConfig, DEFAULT_NMS_IOU,
};
use cabwatch::imaging::{iou, BoundingBox, GrayImage};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A 64×64 patch of per-cell gratings with random orientations, so every
/// block has a peaked histogram that shifted windows do not reproduce.
fn grating_patch(seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angles: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..std::f64::consts::PI)).collect();
    GrayImage::from_fn(64, 64, |x, y| {
        let theta = angles[(y / 8) * 8 + x / 8];
        let phase = (x as f64 * theta.cos() + y as f64 * theta.sin()) * std::f64::consts::TAU / 4.0;
        (128.0 + 100.0 * phase.sin()).round() as u8
    })
    .unwrap()
}

fn plant(background: u8, w: usize, h: usize, patch: &GrayImage, at: (usize, usize)) -> GrayImage {
    GrayImage::from_fn(w, h, |x, y| {
        let (px, py) = (x.wrapping_sub(at.0), y.wrapping_sub(at.1));
        if px < patch.width() && py < patch.height() {
            patch.get(px, py)
        } else {
            background
        }
    })
    .unwrap()
}

/// Weights equal to the patch descriptor, bias at 90% of its squared norm:
/// only windows closely resembling the patch score above zero.
fn template_model(patch: &GrayImage) -> LinearDetectorModel {
    let p = HogParams::default();
    let d = hog_descriptor(patch, &p).unwrap().values;
    let norm2: f64 = d.iter().map(|v| v * v).sum();
    LinearDetectorModel::new(64, 64, p, d, -0.9 * norm2).unwrap()
}

#[test]
fn planted_patch_is_found_once_after_suppression() {
    let patch = grating_patch(3);
    let img = plant(128, 200, 144, &patch, (72, 40));
    let detector = HogFaceDetector::new(template_model(&patch));
    let raw = detector.detect(&img, "frame").unwrap();
    assert!(!raw.is_empty());
    let kept = non_max_suppression(&raw, DEFAULT_NMS_IOU);
    assert_eq!(kept.len(), 1, "{kept:?}");
    let truth = BoundingBox::new(72.0, 40.0, 64.0, 64.0, 0.0).unwrap();
    assert!(iou(&kept[0], &truth) > 0.99, "{:?}", kept[0]);
}

#[test]
fn unaligned_stride_scans_individual_windows() {
    let patch = grating_patch(11);
    let img = plant(128, 136, 96, &patch, (36, 20));
    let scan = ScanConfig {
        pyramid_scale: 1.25,
        stride: 4,
    };
    let raw = sliding_window_detect(&img, &template_model(&patch), &scan).unwrap();
    let kept = non_max_suppression(&raw, DEFAULT_NMS_IOU);
    let truth = BoundingBox::new(36.0, 20.0, 64.0, 64.0, 0.0).unwrap();
    assert_eq!(kept.len(), 1);
    assert!(iou(&kept[0], &truth) > 0.99);
}

#[test]
fn scaled_patch_is_found_on_a_coarser_level() {
    let patch = grating_patch(5);
    let big = patch.resize(128, 128).unwrap();
    let img = plant(128, 192, 160, &big, (32, 16));
    let scan = ScanConfig {
        pyramid_scale: 2.0,
        stride: 8,
    };
    let raw = sliding_window_detect(&img, &template_model(&patch), &scan).unwrap();
    let kept = non_max_suppression(&raw, DEFAULT_NMS_IOU);
    let truth = BoundingBox::new(32.0, 16.0, 128.0, 128.0, 0.0).unwrap();
    assert!(kept.iter().any(|b| iou(b, &truth) > 0.8), "{kept:?}");
}

#[test]
fn invalid_scan_settings_are_rejected() {
    let patch = grating_patch(1);
    let img = plant(128, 80, 80, &patch, (8, 8));
    let model = template_model(&patch);
    for scan in [
        ScanConfig {
            pyramid_scale: 1.0,
            stride: 8,
        },
        ScanConfig {
            pyramid_scale: 1.2,
            stride: 0,
        },
    ] {
        assert!(sliding_window_detect(&img, &model, &scan).is_err());
    }
}

fn arb_box() -> impl Strategy<Value = BoundingBox> {
    (0.0..200.0f64, 0.0..200.0f64, 4.0..80.0f64, 4.0..80.0f64, -5.0..5.0f64)
        .prop_map(|(x, y, w, h, s)| BoundingBox::new(x, y, w, h, s).unwrap())
}

proptest! {
    #[test]
    fn suppression_leaves_no_heavy_overlap(boxes in prop::collection::vec(arb_box(), 0..40), thr in 0.05..0.9f64) {
        let kept = non_max_suppression(&boxes, thr);
        prop_assert!(kept.len() <= boxes.len());
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(iou(a, b) <= thr);
            }
        }
        for w in kept.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
        }
        // every dropped box overlaps some kept box with at least its score
        for b in &boxes {
            if !kept.contains(b) {
                prop_assert!(kept.iter().any(|k| k.score >= b.score && iou(k, b) > thr));
            }
        }
    }

    #[test]
    fn suppression_is_idempotent(boxes in prop::collection::vec(arb_box(), 0..30)) {
        let once = non_max_suppression(&boxes, DEFAULT_NMS_IOU);
        prop_assert_eq!(non_max_suppression(&once, DEFAULT_NMS_IOU), once);
    }
}
