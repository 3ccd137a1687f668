//! Planted structure is measurable on the raw streams, before any learning.

use percept::descriptors::person_descriptor;
use percept::labels::{parse_trait_csv, TypeLabel};
use percept::pose_io::{parse_groups, parse_pose_stream, window, SkeletonLayout};
use percept::synth::{generate_scene, Profiles, SceneSpec};

/// Mean temporal standard deviation of the ρ channel, per reference block.
fn rho_energy(t: &percept::descriptors::DescriptorTensor, frames: usize) -> f64 {
    let (rows, cols, _) = t.shape();
    let blocks = rows / frames;
    let mut total = 0.0;
    for b in 0..blocks {
        for c in 0..cols {
            let v: Vec<f64> = (0..frames).map(|f| t.data[[b * frames + f, c, 0]]).collect();
            let m = v.iter().sum::<f64>() / frames as f64;
            total += (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / frames as f64).sqrt();
        }
    }
    total / (blocks * cols) as f64
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt())
}

#[test]
fn motion_energy_separates_by_three_sigma() {
    let profiles = Profiles::default_v1();
    let (hi, lo) = (profiles.get(TypeLabel::Resilient).energy, profiles.get(TypeLabel::Overcontrolled).energy);
    assert!(hi >= 3.0 * lo, "profiles must differ 3x in energy for this oracle");
    let layout = SkeletonLayout::coco18();
    let mut by_type: [Vec<f64>; 3] = Default::default();
    for seed in 0..4 {
        let spec = SceneSpec { n_subjects: 10, n_frames: 150, seed, ..Default::default() };
        let scene = generate_scene(&spec, &profiles).unwrap();
        for clip in window(&scene.frames, 15, 15).unwrap() {
            for &id in &clip.subject_ids {
                let d = person_descriptor(&clip, id, &layout.reference_joints).unwrap();
                by_type[scene.planted_type(id).unwrap().index()].push(rho_energy(&d, 15));
            }
        }
    }
    let (m_hi, s_hi) = mean_sd(&by_type[TypeLabel::Resilient.index()]);
    let (m_lo, s_lo) = mean_sd(&by_type[TypeLabel::Overcontrolled.index()]);
    assert!(m_hi - m_lo >= 3.0 * s_hi.max(s_lo), "resilient {m_hi}±{s_hi} vs overcontrolled {m_lo}±{s_lo}");
}

#[test]
fn trait_means_follow_profiles() {
    let profiles = Profiles::default_v1();
    let spec = SceneSpec { n_subjects: 300, n_frames: 1, seed: 42, ..Default::default() };
    let scene = generate_scene(&spec, &profiles).unwrap();
    for t in TypeLabel::ALL {
        let rows: Vec<_> = scene.traits.iter().filter(|r| scene.planted_type(r.subject_id) == Some(t)).collect();
        assert!(rows.len() >= 90);
        for (k, want) in profiles.get(t).trait_means.iter().enumerate() {
            let got = rows.iter().map(|r| r.values[k].unwrap()).sum::<f64>() / rows.len() as f64;
            assert!((got - want).abs() <= 0.05, "{} trait {k}: {got} vs {want}", t.name());
        }
    }
}

#[test]
fn emitted_files_are_mutually_consistent() {
    let spec = SceneSpec { n_subjects: 6, n_frames: 40, seed: 9, first_id: 100, ..Default::default() };
    let scene = generate_scene(&spec, &Profiles::default_v1()).unwrap();
    let frames = parse_pose_stream(scene.pose_text().as_bytes(), 18).unwrap();
    let groups = parse_groups(scene.groups_text().as_bytes()).unwrap();
    let traits = parse_trait_csv(&scene.traits_text()).unwrap();
    assert_eq!(frames.len(), 40);
    assert_eq!(groups.len(), 40);
    let ids: Vec<i64> = frames[0].subject_ids().collect();
    assert_eq!(ids, (100..106).collect::<Vec<_>>());
    assert_eq!(traits.iter().map(|r| r.subject_id).collect::<Vec<_>>(), ids);
    for g in &groups {
        for member in g.groups.iter().flatten() {
            assert!(ids.contains(member));
        }
    }
}
