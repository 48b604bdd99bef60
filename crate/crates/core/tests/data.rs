use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use frpose_core::data_pipeline::{
    annotations_to_json, generate_synthetic, load_annotations, make_crop_with, parse_annotations, sample_augmentation,
    write_annotations, AugmentDraw, AugmentPolicy, Dataset, PixelNorm, RenderStyle, SampleSettings, SyntheticSceneSpec,
};
use frpose_core::heatmap_codec::{Alignment, Frame, Joint, JointSet};
use frpose_core::{Shape, Tensor};

fn spec(seed: u64) -> SyntheticSceneSpec {
    SyntheticSceneSpec {
        num_images: 6,
        seed,
        ..SyntheticSceneSpec::default()
    }
}

fn settings(policy: AugmentPolicy) -> SampleSettings {
    SampleSettings {
        input_width: 48,
        input_height: 64,
        stride: 1,
        sigma: 2.0,
        alignment: Alignment::HalfPixel,
        policy,
        norm: PixelNorm::default(),
    }
}

#[test]
fn synthetic_generation_is_seeded() {
    let (a_images, a_ann) = generate_synthetic(&spec(4));
    let (b_images, b_ann) = generate_synthetic(&spec(4));
    assert_eq!(a_ann, b_ann);
    assert!(a_images.iter().zip(&b_images).all(|(a, b)| a.data() == b.data()));
    let (_, c_ann) = generate_synthetic(&spec(5));
    assert_ne!(a_ann, c_ann);
}

#[test]
fn joint_blobs_peak_at_the_annotation() {
    let spec = SyntheticSceneSpec {
        num_images: 12,
        style: RenderStyle {
            noise: 0.0,
            bone_intensity: 0.0,
            background: 0.0,
            ..RenderStyle::default()
        },
        ..SyntheticSceneSpec::default()
    };
    let (images, ann) = generate_synthetic(&spec);
    let mut checked = 0;
    for (img, record) in images.iter().zip(&ann.images) {
        let people: Vec<&JointSet> = ann
            .instances
            .iter()
            .filter(|i| i.image_id == record.id)
            .map(|i| &i.keypoints)
            .collect();
        let all: Vec<&Joint> = people.iter().flat_map(|p| p.joints.iter()).filter(|j| j.is_labeled()).collect();
        for j in &all {
            let crowded = all
                .iter()
                .any(|o| !std::ptr::eq(*o, *j) && (o.x - j.x).hypot(o.y - j.y) < 7.0);
            let (cx, cy) = (j.x.round() as i64, j.y.round() as i64);
            let near_edge = cx < 2 || cy < 2 || cx + 2 >= record.width as i64 || cy + 2 >= record.height as i64;
            if crowded || near_edge {
                continue;
            }
            let brightness = |x: i64, y: i64| (0..3).map(|c| img.at(0, c, y as usize, x as usize)).sum::<f32>();
            let mut best = (cx, cy);
            for y in cy - 2..=cy + 2 {
                for x in cx - 2..=cx + 2 {
                    if brightness(x, y) > brightness(best.0, best.1) {
                        best = (x, y);
                    }
                }
            }
            assert!(
                (best.0 as f64 - j.x).abs() <= 0.5 && (best.1 as f64 - j.y).abs() <= 0.5,
                "blob at {best:?}, joint at ({}, {})",
                j.x,
                j.y
            );
            checked += 1;
        }
    }
    assert!(checked > 40, "only {checked} joints checked");
}

#[test]
fn minimal_coco_document_uses_the_coco_skeleton() {
    let mut keypoints = vec![0.0; 51];
    keypoints[0..3].copy_from_slice(&[12.0, 20.0, 2.0]);
    keypoints[15..18].copy_from_slice(&[30.0, 40.0, 1.0]);
    let doc = serde_json::json!({
        "images": [{"id": 7, "width": 64, "height": 80, "file_name": "a.jpg"}],
        "annotations": [
            {"id": 1, "image_id": 7, "bbox": [5.0, 5.0, 40.0, 60.0], "area": 1800.0, "keypoints": keypoints},
            {"id": 2, "image_id": 7, "bbox": [1.0, 1.0, 10.0, 10.0], "area": 80.0, "keypoints": vec![0.0; 51]},
        ],
    });
    let set = parse_annotations(&doc.to_string()).unwrap();
    assert_eq!(set.skeleton.num_joints(), 17);
    assert_eq!(set.instances[0].keypoints.labeled_count(), 2);
    assert_eq!(set.instances[1].keypoints.labeled_count(), 0);

    let dataset = Dataset::new(vec![Tensor::zeros(Shape::new(1, 3, 80, 64))], set).unwrap();
    assert_eq!(dataset.trainable_instances(), vec![0]);
}

#[test]
fn bad_visibility_flags_are_rejected() {
    let doc = serde_json::json!({
        "images": [{"id": 1, "width": 8, "height": 8}],
        "annotations": [{"id": 3, "image_id": 1, "bbox": [0.0, 0.0, 4.0, 4.0], "area": 16.0, "keypoints": vec![3.0; 51]}],
    });
    let err = parse_annotations(&doc.to_string()).unwrap_err().to_string();
    assert!(err.contains('3'), "{err}");
}

#[test]
fn annotation_files_round_trip() {
    let (_, ann) = generate_synthetic(&spec(9));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("person_keypoints.json");
    write_annotations(&path, &ann).unwrap();
    assert_eq!(load_annotations(&path).unwrap(), ann);
    assert_eq!(parse_annotations(&annotations_to_json(&ann).unwrap()).unwrap(), ann);
}

fn crop_of(joints: &JointSet, draw: AugmentDraw) -> JointSet {
    let image = Tensor::zeros(Shape::new(1, 3, 100, 120));
    make_crop_with(&image, joints, [20.0, 30.0, 40.0, 60.0], 48, 64, draw, &[])
        .unwrap()
        .joints
}

#[test]
fn unaugmented_crop_centres_the_box() {
    let joints = JointSet::new(vec![Joint::visible(40.0, 60.0)], Frame::Original);
    let out = crop_of(&joints, AugmentDraw::NONE);
    assert!((out.joints[0].x - 23.5).abs() <= 0.5 && (out.joints[0].y - 31.5).abs() <= 0.5);
}

#[test]
fn scale_draw_scales_joint_distances() {
    let joints = JointSet::new(vec![Joint::visible(35.0, 55.0), Joint::visible(45.0, 68.0)], Frame::Original);
    let dist = |s: &JointSet| (s.joints[0].x - s.joints[1].x).hypot(s.joints[0].y - s.joints[1].y);
    let base = dist(&crop_of(&joints, AugmentDraw::NONE));
    let scaled = dist(&crop_of(&joints, AugmentDraw { scale: 1.3, ..AugmentDraw::NONE }));
    assert!((scaled / base - 1.3).abs() < 0.013, "{}", scaled / base);
}

#[test]
fn sampled_rotations_stay_in_range() {
    let policy = AugmentPolicy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let draws: Vec<AugmentDraw> = (0..10_000).map(|_| sample_augmentation(&policy, &mut rng)).collect();
    assert!(draws.iter().all(|d| (-40.0..=40.0).contains(&d.rotation_deg)));
    assert!(draws.iter().any(|d| d.rotation_deg > 20.0) && draws.iter().any(|d| d.rotation_deg < -20.0));
    assert!(draws.iter().all(|d| (0.7..=1.3).contains(&d.scale)));
    let flips = draws.iter().filter(|d| d.flip).count();
    assert!((4_500..5_500).contains(&flips), "{flips}");
    let off = sample_augmentation(&AugmentPolicy::disabled(), &mut rng);
    assert_eq!(off, AugmentDraw::NONE);
}

#[test]
fn samples_do_not_depend_on_batch_order() {
    let (images, ann) = generate_synthetic(&spec(2));
    let dataset = Dataset::new(images, ann).unwrap();
    let settings = settings(AugmentPolicy::default());
    let order = dataset.trainable_instances();
    let mut reversed = order.clone();
    reversed.reverse();
    let forward = dataset.samples(&order, 3, 17, &settings).unwrap();
    let backward = dataset.samples(&reversed, 3, 17, &settings).unwrap();
    for (a, b) in forward.iter().zip(backward.iter().rev()) {
        assert_eq!(a.instance, b.instance);
        assert_eq!(a.image.data(), b.image.data());
        assert_eq!(a.target.data(), b.target.data());
        assert_eq!(a.joints, b.joints);
    }
    let again = dataset.sample(order[0], 3, 17, &settings).unwrap();
    assert_eq!(again.image.data(), forward[0].image.data());
    let next_epoch = dataset.sample(order[0], 4, 17, &settings).unwrap();
    assert_ne!(next_epoch.transform, forward[0].transform);
}
