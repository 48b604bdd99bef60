use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use frpose_core::heatmap_codec::{
    analyze, decode_dump, decode_keypoints, encode_dump, encode_targets, flip_average, flip_displacement,
    heatmap_mse, mirror_horizontal, unflip_heatmaps, Alignment, CropParams, CropTransform, DecodeMode, Frame, Joint,
    JointSet, QuantizationConfig,
};
use frpose_core::tensor_core::{Reduction, Shape, Tensor};

fn alignment() -> impl Strategy<Value = Alignment> {
    prop_oneof![Just(Alignment::HalfPixel), Just(Alignment::Corner)]
}

fn single(x: f64, y: f64) -> JointSet {
    JointSet::new(vec![Joint::visible(x, y)], Frame::Crop)
}

proptest! {
    #[test]
    fn encoded_targets_are_bounded_and_peak_at_one(
        x in 0.0f64..63.0, y in 0.0f64..47.0, stride in prop::sample::select(vec![1usize, 2, 4]),
        sigma in 1.0f64..4.0, align in alignment(),
    ) {
        let (stack, weights) = encode_targets(&single(x, y), 48 / stride, 64 / stride, stride, sigma, align);
        let map = stack.map(0);
        prop_assert!(map.iter().all(|v| (0.0..=1.0).contains(v)));
        if weights[0] {
            let (cx, cy) = (align.px_to_cell(x, stride).round() as usize, align.px_to_cell(y, stride).round() as usize);
            prop_assert_eq!(map[cy * (64 / stride) + cx], map.iter().cloned().fold(0.0, f32::max));
        }
    }

    #[test]
    fn stride_one_round_trip_is_within_half_a_pixel(x in 0.0f64..63.0, y in 0.0f64..47.0, align in alignment()) {
        let (stack, weights) = encode_targets(&single(x, y), 48, 64, 1, 2.0, align);
        prop_assert!(weights[0]);
        let (decoded, _) = decode_keypoints(&stack, DecodeMode::Argmax);
        let j = decoded.joints[0];
        prop_assert!((j.x - x).abs() <= 0.5 + 1e-9 && (j.y - y).abs() <= 0.5 + 1e-9, "{:?} vs ({x}, {y})", j);
    }

    #[test]
    fn stride_four_argmax_errs_at_most_two_pixels(x in 2.0f64..61.0, y in 2.0f64..45.0) {
        let (stack, weights) = encode_targets(&single(x, y), 12, 16, 4, 2.0, Alignment::HalfPixel);
        prop_assert!(weights[0]);
        let (decoded, _) = decode_keypoints(&stack, DecodeMode::Argmax);
        let j = decoded.joints[0];
        prop_assert!((j.x - x).abs() <= 2.0 + 1e-9 && (j.y - y).abs() <= 2.0 + 1e-9);
    }

    #[test]
    fn crop_transform_inverts(
        cx in 10.0f64..200.0, cy in 10.0f64..200.0, box_width in 20.0f64..150.0,
        scale in 0.7f64..1.3, rotation_deg in -40.0f64..40.0, flip in any::<bool>(),
        px in 0.0f64..220.0, py in 0.0f64..220.0,
    ) {
        let t = CropTransform::from_params(&CropParams {
            center: (cx, cy), box_width, out_width: 48, out_height: 64, scale, rotation_deg, flip,
        }).unwrap();
        let (u, v) = t.apply_point(px, py);
        let (bx, by) = t.inverse(220, 220).unwrap().apply_point(u, v);
        prop_assert!((bx - px).abs() < 1e-4 && (by - py).abs() < 1e-4);
    }
}

#[test]
fn subpixel_beats_argmax_at_stride_four() {
    let cfg = QuantizationConfig {
        samples: 1000,
        seed: 8,
        ..QuantizationConfig::default()
    };
    let argmax = analyze(&cfg, 4, DecodeMode::Argmax, false, Alignment::HalfPixel).unwrap();
    let subpixel = analyze(&cfg, 4, DecodeMode::Subpixel, false, Alignment::HalfPixel).unwrap();
    assert!(subpixel.mean_error < argmax.mean_error, "{subpixel:?} vs {argmax:?}");
    assert!(argmax.mean_oks_drop > 0.0);
}

#[test]
fn mse_matches_its_definition() {
    let (target, weights) = encode_targets(&single(5.0, 4.0), 8, 10, 1, 1.5, Alignment::HalfPixel);
    let maps = target.maps;
    let zero = Tensor::zeros(maps.shape());
    let s: f64 = maps.data().iter().map(|v| (*v as f64).powi(2)).sum();
    let p = maps.shape().plane() as f64;
    let loss = heatmap_mse(&zero, &maps, &weights, Reduction::Mean).unwrap();
    assert!((loss - s / p).abs() < 1e-9, "{loss} vs {}", s / p);
    assert_eq!(heatmap_mse(&maps, &maps, &weights, Reduction::Mean).unwrap(), 0.0);
}

#[test]
fn identity_transform_leaves_joints_and_image() {
    let image = Tensor::uniform(Shape::new(1, 3, 6, 7), 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
    let t = CropTransform::identity(7, 6);
    assert_eq!(t.warp_image(&image).unwrap().data(), image.data());
    let joints = JointSet::new(vec![Joint::visible(1.5, 2.25), Joint::unlabeled()], Frame::Original);
    let mapped = t.apply(&joints, &[], Frame::Original).unwrap();
    assert_eq!(mapped, joints);
}

#[test]
fn flip_reflects_and_swaps_pairs() {
    let w = 48;
    let t = CropTransform::identity(w, 64).then_flip();
    let joints = JointSet::new(vec![Joint::visible(3.0, 9.0), Joint::visible(40.5, 2.0), Joint::visible(7.0, 7.0)], Frame::Crop);
    let out = t.apply(&joints, &[(0, 1)], Frame::Crop).unwrap();
    assert_eq!((out.joints[0].x, out.joints[0].y), ((w - 1) as f64 - 40.5, 2.0));
    assert_eq!((out.joints[1].x, out.joints[1].y), ((w - 1) as f64 - 3.0, 9.0));
    assert_eq!(out.joints[2].x, (w - 1) as f64 - 7.0);
}

#[test]
fn rotation_undone_by_the_opposite_rotation() {
    let params = |rotation_deg| CropParams {
        center: (60.0, 80.0),
        box_width: 90.0,
        out_width: 48,
        out_height: 64,
        scale: 1.0,
        rotation_deg,
        flip: false,
    };
    let plus = CropTransform::from_params(&params(40.0)).unwrap();
    let straight = CropTransform::from_params(&params(0.0)).unwrap();
    // rotating the crop about its own centre by −40°
    let minus = CropTransform::from_params(&CropParams {
        center: (23.5, 31.5),
        box_width: 48.0,
        ..params(-40.0)
    })
    .unwrap();
    for (x, y) in [(60.0, 80.0), (20.0, 50.0), (95.0, 130.0)] {
        let (u, v) = plus.apply_point(x, y);
        let back = minus.apply_point(u, v);
        let want = straight.apply_point(x, y);
        assert!((back.0 - want.0).abs() < 1e-3 && (back.1 - want.1).abs() < 1e-3);
    }
}

#[test]
fn flip_average_of_symmetric_input_through_identity_is_plain() {
    let half = Tensor::uniform(Shape::new(1, 3, 5, 4), 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(2));
    let sym = Tensor::from_fn(Shape::new(1, 3, 5, 8), |n, c, y, x| half.at(n, c, y, x.min(7 - x)));
    assert_eq!(mirror_horizontal(&sym).data(), sym.data());
    let averaged = flip_average(|x| Ok(x.clone()), &sym, &[], 0).unwrap();
    assert_eq!(averaged.data(), sym.data());
}

#[test]
fn flip_average_is_an_involution_under_mirroring() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::uniform(Shape::new(2, 3, 6, 9), -1.0, 1.0, &mut rng);
    let mix = Tensor::<f32>::uniform(Shape::new(1, 3, 1, 9), -1.0, 1.0, &mut rng);
    // a position-dependent, non-symmetric stand-in for a network
    let net = |t: &Tensor<f32>| -> frpose_core::Result<Tensor<f32>> {
        Ok(Tensor::from_fn(t.shape(), |n, c, y, xx| {
            t.at(n, c, y, xx) * mix.at(0, c, 0, xx) + t.at(n, (c + 1) % 3, y, xx).powi(2)
        }))
    };
    let pairs = [(1, 2)];
    let direct = flip_average(net, &x, &pairs, 0).unwrap();
    let via_mirror = flip_average(net, &mirror_horizontal(&x), &pairs, 0).unwrap();
    let back = unflip_heatmaps(&via_mirror, &pairs, 0).unwrap();
    assert!(direct.max_abs_diff(&back) < 1e-5);
}

#[test]
fn flip_displacement_reports_the_corner_offset() {
    let cfg = QuantizationConfig {
        samples: 500,
        ..QuantizationConfig::default()
    };
    let corner = flip_displacement(&cfg, 4, Alignment::Corner, 0).unwrap();
    assert!(corner.max_cells > 0.0 && corner.max_cells <= 1.0, "{corner:?}");
    let centred = flip_displacement(&cfg, 4, Alignment::HalfPixel, 0).unwrap();
    assert_eq!(centred.max_cells, 0.0);
}

#[test]
fn dump_round_trip_is_exact() {
    let (stack, _) = encode_targets(
        &JointSet::new(vec![Joint::visible(9.0, 3.0), Joint::unlabeled()], Frame::Crop),
        12,
        16,
        2,
        2.0,
        Alignment::Corner,
    );
    let back = decode_dump(&encode_dump(&stack)).unwrap();
    assert_eq!(back.maps.data(), stack.maps.data());
    assert_eq!((back.stride, back.sigma, back.alignment), (2, 2.0, Alignment::Corner));
    assert!(decode_dump(b"frpose-heatmaps 1\nK 1\nend_header\n").is_err());
}
