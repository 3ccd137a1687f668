use nalgebra::DMatrix;
use ndarray::{Array2, Array3};
use percept::backbone::{
    backbone_forward, fit_calibration, quantize_and_resize, quantize_value, resize_bilinear, temporal_mean_pool,
    BackboneConfig, BackboneModel, FeatureMaps,
};
use percept::descriptors::{
    cylindrical, person_descriptor, social_proxemics, DescriptorTensor, ProxemicsConfig, StreamTag, CYL_CHANNELS,
};
use percept::fusion::pca_fit;
use percept::pose_io::{window, Point, SkeletonLayout};
use percept::synth::{generate_scene, Profiles, SceneSpec};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    -1e3..1e3f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cylindrical_rho_nonnegative_theta_in_range(ax in finite(), ay in finite(), bx in finite(), by in finite()) {
        let c = cylindrical(Point::new(ax, ay), Point::new(bx, by));
        prop_assert!(c.rho >= 0.0);
        prop_assert!(c.theta > -std::f64::consts::PI && c.theta <= std::f64::consts::PI);
        prop_assert_eq!(c.z, by - ay);
    }

    #[test]
    fn quantization_is_monotone(a in finite(), b in finite(), lo in -500.0..0.0f64, span in 1e-3..900.0f64) {
        let (v1, v2) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(quantize_value(v1, (lo, lo + span)) <= quantize_value(v2, (lo, lo + span)));
    }

    #[test]
    fn resize_stays_within_input_range(
        h in 2usize..20, w in 2usize..20, seed in any::<u64>(), oh in 1usize..70, ow in 1usize..70,
    ) {
        let src = Array2::from_shape_fn((h, w), |(i, j)| (((i * 31 + j * 17) as u64 ^ seed) % 1000) as f64);
        let lo = src.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let out = resize_bilinear(&src, oh, ow);
        prop_assert_eq!(out.dim(), (oh, ow));
        prop_assert!(out.iter().all(|&v| v >= lo && v <= hi));
    }

    #[test]
    fn tmp_is_linear(a in -5.0..5.0f64, b in -5.0..5.0f64, seed in any::<u32>()) {
        let make = |s: u32| FeatureMaps {
            values: Array3::from_shape_fn((4, 4, 3), |(y, x, k)| ((y * 7 + x * 3 + k) as u32 ^ s) as f64 % 13.0),
            stream: StreamTag::Person,
        };
        let (m1, m2) = (make(seed), make(seed.rotate_left(7)));
        let mix = FeatureMaps { values: &m1.values * a + &m2.values * b, stream: StreamTag::Person };
        let lhs = temporal_mean_pool(&mix).unwrap();
        let (p1, p2) = (temporal_mean_pool(&m1).unwrap(), temporal_mean_pool(&m2).unwrap());
        for i in 0..lhs.len() {
            prop_assert!((lhs[i] - (a * p1[i] + b * p2[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn two_subject_proxemics_is_symmetric(seed in 0u64..500) {
        let spec = SceneSpec { n_subjects: 2, n_frames: 15, seed, ..Default::default() };
        let scene = generate_scene(&spec, &Profiles::default_v1()).unwrap();
        let clip = &window(&scene.frames, 15, 15).unwrap()[0];
        let layout = SkeletonLayout::coco18();
        let cfg = ProxemicsConfig::for_scene(2, 640.0, 480.0);
        let a = social_proxemics(clip, 0, &layout, cfg).unwrap();
        let b = social_proxemics(clip, 1, &layout, cfg).unwrap();
        for f in 0..15 {
            prop_assert_eq!(a.data[[f, 0, 0]], b.data[[f, 0, 0]]);
        }
    }

    #[test]
    fn every_stream_encodes_to_the_same_length(seed in 0u64..50) {
        let spec = SceneSpec { n_subjects: 3, n_frames: 15, seed, ..Default::default() };
        let scene = generate_scene(&spec, &Profiles::default_v1()).unwrap();
        let clip = &window(&scene.frames, 15, 15).unwrap()[0];
        let layout = SkeletonLayout::coco18();
        let model = BackboneModel::new(BackboneConfig::default()).unwrap();
        let tensors = [
            person_descriptor(clip, 0, &layout.reference_joints).unwrap(),
            social_proxemics(clip, 0, &layout, ProxemicsConfig::for_scene(10, 640.0, 480.0)).unwrap(),
        ];
        for t in &tensors {
            let calib = fit_calibration(std::slice::from_ref(t)).unwrap();
            let img = quantize_and_resize(t, &calib).unwrap();
            let v = temporal_mean_pool(&backbone_forward(&img, &model).unwrap()).unwrap();
            prop_assert_eq!(v.len(), 4 * 64);
        }
    }
}

#[test]
fn pca_variances_match_svd() {
    let mut state = 12345u64;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let rows: Vec<Vec<f64>> = (0..40)
        .map(|_| {
            let (a, b) = (next() * 10.0, next() * 3.0);
            vec![a, 2.0 * a + b, -a + 0.1 * next(), b, next()]
        })
        .collect();
    let t = pca_fit(&rows, 1.0).unwrap();

    let n = rows.len();
    let mean: Vec<f64> = (0..5).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let x = DMatrix::from_fn(n, 5, |i, j| rows[i][j] - mean[j]);
    let mut sv: Vec<f64> = x.svd(false, false).singular_values.iter().map(|s| s * s).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = sv.iter().sum();
    for (got, want) in t.explained.iter().zip(&sv) {
        assert!((got - want / total).abs() < 1e-9, "{got} vs {}", want / total);
    }
}

#[test]
fn degenerate_descriptor_channels_still_quantize() {
    let data = Array3::from_elem((15, 17, 3), 2.5);
    let t = DescriptorTensor::new(data, StreamTag::Person, &CYL_CHANNELS).unwrap();
    let calib = fit_calibration(std::slice::from_ref(&t)).unwrap();
    let img = quantize_and_resize(&t, &calib).unwrap();
    let first = img.pixels[[0, 0, 0]];
    assert!(img.pixels.iter().all(|&p| p == first));
}
