//! Synthetic scenes with planted personality-type behaviour.
//!
//! Types differ in limb/walking energy, in how readily they join
//! conversation groups and how close to the group center they stand, and
//! (alone at home) in how often they go and handle things in the scene.
//! Trait scores are drawn around type-specific profile means, so the label
//! pipeline can recover the planted types from the trait file alone.

use std::collections::BTreeSet;
use std::f64::consts::{PI, TAU};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::labels::{RawScores, TypeLabel};
use crate::pose_io::{
    coco, write_groups, write_pose_stream, GroupAssignment, Point, PoseFrame, SceneKind, Skeleton, SubjectId,
};

/// Default profiles shipped with the crate.
pub const DEFAULT_PROFILES: &str = include_str!("../profiles/types_v1.cfg");

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TypeProfile {
    pub label: TypeLabel,
    /// Walking speed in units/frame; limb articulation scales with it.
    pub energy: f64,
    pub join_prob: f64,
    pub radius: f64,
    /// Gestures started per 100 frames.
    pub gesture_rate: f64,
    pub trait_means: [f64; 5],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Profiles {
    pub version: u32,
    pub trait_sigma: f64,
    /// Indexed by [`TypeLabel::index`].
    pub types: [TypeProfile; 3],
}

impl Profiles {
    pub fn parse(text: &str) -> Result<Self> {
        let kv = KvMap::parse(text)?;
        let read = |label: TypeLabel| -> Result<TypeProfile> {
            let key = |f: &str| format!("{}.{f}", label.name());
            let traits: Vec<f64> =
                kv.list(&key("traits"))?.ok_or_else(|| Error::Config(format!("missing {}", key("traits"))))?;
            let trait_means: [f64; 5] =
                traits.try_into().map_err(|_| Error::Config(format!("{} needs 5 values", key("traits"))))?;
            let p = TypeProfile {
                label,
                energy: kv.require(&key("energy"))?,
                join_prob: kv.require(&key("join_prob"))?,
                radius: kv.require(&key("radius"))?,
                gesture_rate: kv.require(&key("gesture_rate"))?,
                trait_means,
            };
            p.validate()?;
            Ok(p)
        };
        Ok(Self {
            version: kv.require("version")?,
            trait_sigma: kv.get("trait_sigma")?.unwrap_or(0.08),
            types: [read(TypeLabel::Resilient)?, read(TypeLabel::Undercontrolled)?, read(TypeLabel::Overcontrolled)?],
        })
    }

    pub fn default_v1() -> Self {
        Self::parse(DEFAULT_PROFILES).expect("bundled profiles parse")
    }

    pub fn get(&self, t: TypeLabel) -> &TypeProfile {
        &self.types[t.index()]
    }

    pub fn with_energy(mut self, energy: f64) -> Self {
        for t in &mut self.types {
            t.energy = energy;
        }
        self
    }
}

impl TypeProfile {
    pub fn validate(&self) -> Result<()> {
        let ok = self.energy >= 0.0
            && (0.0..=1.0).contains(&self.join_prob)
            && self.radius >= 0.0
            && self.gesture_rate >= 0.0
            && self.gesture_rate <= 100.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid profile for {}", self.label.name())))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub n_subjects: usize,
    /// Frames per scene (social) or per subject (nonsocial).
    pub n_frames: usize,
    pub kind: SceneKind,
    /// Proportions of resilient, undercontrolled, overcontrolled.
    pub mix: [f64; 3],
    pub seed: u64,
    pub first_id: SubjectId,
    pub width: f64,
    pub height: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            n_subjects: 10,
            n_frames: 150,
            kind: SceneKind::Social,
            mix: [1.0 / 3.0; 3],
            seed: 0,
            first_id: 0,
            width: 640.0,
            height: 480.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub kind: SceneKind,
    pub seed: u64,
    pub frames: Vec<PoseFrame>,
    /// Empty for nonsocial scenes.
    pub groups: Vec<GroupAssignment>,
    pub traits: Vec<RawScores>,
    pub planted: Vec<(SubjectId, TypeLabel)>,
    /// Attractor locations of nonsocial scenes.
    pub attractors: Vec<Point>,
}

impl SynthScene {
    pub fn pose_text(&self) -> String {
        write_pose_stream(&self.frames)
    }

    pub fn groups_text(&self) -> String {
        write_groups(&self.groups)
    }

    pub fn traits_text(&self) -> String {
        crate::labels::write_trait_csv(&self.traits)
    }

    pub fn planted_text(&self) -> String {
        let mut s = String::from("subject_id,type\n");
        for (id, t) in &self.planted {
            s.push_str(&format!("{id},{}\n", t.name()));
        }
        s
    }

    pub fn planted_type(&self, id: SubjectId) -> Option<TypeLabel> {
        self.planted.iter().find(|(s, _)| *s == id).map(|(_, t)| *t)
    }
}

/// Joint offsets of an upright 18-joint body relative to the hip midpoint.
const TEMPLATE: [(f64, f64); 18] = [
    (0.0, -55.0),   // nose
    (0.0, -45.0),   // neck
    (-10.0, -45.0), // r shoulder
    (-13.0, -30.0), // r elbow
    (-14.0, -16.0), // r wrist
    (10.0, -45.0),  // l shoulder
    (13.0, -30.0),  // l elbow
    (14.0, -16.0),  // l wrist
    (-6.0, 0.0),    // r hip
    (-6.0, 18.0),   // r knee
    (-6.0, 36.0),   // r ankle
    (6.0, 0.0),     // l hip
    (6.0, 18.0),    // l knee
    (6.0, 36.0),    // l ankle
    (-3.0, -58.0),  // r eye
    (3.0, -58.0),   // l eye
    (-6.0, -56.0),  // r ear
    (6.0, -56.0),   // l ear
];

const SWING_RATE: f64 = 0.5;
const SWING_PER_ENERGY: f64 = 0.15;
const SPREAD_PER_ENERGY: f64 = 0.12;
const JITTER_PER_ENERGY: f64 = 0.15;
const LEAVE_PROB: f64 = 0.01;
const GESTURE_REACH: f64 = 28.0;
const GESTURE_WOBBLE: f64 = 5.0;

/// Per-subject articulation phases.
#[derive(Debug, Clone, Copy)]
struct Body {
    phase: f64,
    lean_phase: f64,
}

fn rotate_about(p: Point, pivot: Point, angle: f64) -> Point {
    let (s, c) = angle.sin_cos();
    let (dx, dy) = (p.x - pivot.x, p.y - pivot.y);
    Point::new(pivot.x + c * dx - s * dy, pivot.y + s * dx + c * dy)
}

/// Pose one frame: template at `center`, arm swing / head bob / lean scaled
/// by `energy`, optional right-arm gesture towards `gesture` (angle, frame).
fn pose(
    center: Point,
    energy: f64,
    body: Body,
    frame: usize,
    gesture: Option<(f64, usize)>,
    jitter: &Normal<f64>,
    rng: &mut ChaCha8Rng,
) -> Vec<Point> {
    let f = frame as f64;
    let mut j: Vec<Point> = TEMPLATE.iter().map(|&(dx, dy)| Point::new(center.x + dx, center.y + dy)).collect();

    let swing = SWING_PER_ENERGY * energy * (SWING_RATE * f + body.phase).sin();
    let bend = 0.5 * SWING_PER_ENERGY * energy * (1.3 * SWING_RATE * f + body.phase).sin();
    for (sho, elb, wri, sign) in
        [(coco::R_SHOULDER, coco::R_ELBOW, coco::R_WRIST, 1.0), (coco::L_SHOULDER, coco::L_ELBOW, coco::L_WRIST, -1.0)]
    {
        let a = sign * (swing + SPREAD_PER_ENERGY * energy);
        j[elb] = rotate_about(j[elb], j[sho], a);
        j[wri] = rotate_about(j[wri], j[sho], a);
        j[wri] = rotate_about(j[wri], j[elb], sign * bend);
    }

    if let Some((angle, start)) = gesture {
        let t = (frame - start) as f64;
        let sho = j[coco::R_SHOULDER];
        let wobble = GESTURE_WOBBLE * (0.9 * t).sin();
        let dir = Point::new(angle.cos(), angle.sin());
        let perp = Point::new(-dir.y, dir.x);
        j[coco::R_WRIST] = Point::new(
            sho.x + GESTURE_REACH * dir.x + wobble * perp.x,
            sho.y + GESTURE_REACH * dir.y + wobble * perp.y,
        );
        j[coco::R_ELBOW] = sho.midpoint(j[coco::R_WRIST]);
    }

    let bob = 0.4 * energy * (SWING_RATE * f + body.phase).sin();
    let lean = 0.5 * energy * (0.15 * f + body.lean_phase).sin();
    for k in [coco::NOSE, coco::R_EYE, coco::L_EYE, coco::R_EAR, coco::L_EAR] {
        j[k].y += bob;
    }
    for k in
        [coco::NOSE, coco::NECK, coco::R_SHOULDER, coco::L_SHOULDER, coco::R_EYE, coco::L_EYE, coco::R_EAR, coco::L_EAR]
    {
        j[k].x += lean;
    }
    if energy > 0.0 {
        for p in &mut j {
            p.x += jitter.sample(rng);
            p.y += jitter.sample(rng);
        }
    }
    j
}

fn step_towards(from: Point, to: Point, speed: f64) -> Point {
    let d = from.distance(to);
    if d <= speed || d == 0.0 {
        to
    } else {
        Point::new(from.x + (to.x - from.x) * speed / d, from.y + (to.y - from.y) * speed / d)
    }
}

/// Type per subject: largest-remainder counts from `mix`, shuffled.
fn assign_types(n: usize, mix: [f64; 3], rng: &mut ChaCha8Rng) -> Result<Vec<TypeLabel>> {
    let sum: f64 = mix.iter().sum();
    if mix.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("type proportions {mix:?} must be >= 0 and sum to 1")));
    }
    let exact: Vec<f64> = mix.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let mut left = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if mix[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    let mut labels: Vec<TypeLabel> =
        TypeLabel::ALL.iter().zip(&counts).flat_map(|(&t, &c)| std::iter::repeat(t).take(c)).collect();
    labels.shuffle(rng);
    Ok(labels)
}

fn sample_traits(p: &TypeProfile, sigma: f64, rng: &mut ChaCha8Rng) -> [Option<f64>; 5] {
    let noise = Normal::new(0.0, sigma).expect("valid sigma");
    p.trait_means.map(|m| Some((m + noise.sample(rng)).clamp(0.0, 1.0)))
}

pub fn generate_scene(spec: &SceneSpec, profiles: &Profiles) -> Result<SynthScene> {
    if spec.n_subjects == 0 {
        return Err(Error::Config("scene needs at least one subject".into()));
    }
    if spec.n_frames == 0 {
        return Err(Error::Config("scene needs at least one frame".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let types = assign_types(spec.n_subjects, spec.mix, &mut rng)?;
    let ids: Vec<SubjectId> = (0..spec.n_subjects).map(|i| spec.first_id + i as SubjectId).collect();
    let traits = ids
        .iter()
        .zip(&types)
        .map(|(&id, &t)| RawScores {
            subject_id: id,
            values: sample_traits(profiles.get(t), profiles.trait_sigma, &mut rng),
        })
        .collect();
    let bodies: Vec<Body> = (0..spec.n_subjects)
        .map(|_| Body { phase: rng.gen::<f64>() * TAU, lean_phase: rng.gen::<f64>() * TAU })
        .collect();

    let mut scene = SynthScene {
        kind: spec.kind,
        seed: spec.seed,
        frames: Vec::new(),
        groups: Vec::new(),
        traits,
        planted: ids.iter().copied().zip(types.iter().copied()).collect(),
        attractors: Vec::new(),
    };
    match spec.kind {
        SceneKind::Social => social(spec, profiles, &ids, &types, &bodies, &mut rng, &mut scene),
        SceneKind::Nonsocial => nonsocial(spec, profiles, &ids, &types, &bodies, &mut rng, &mut scene),
    }
    Ok(scene)
}

#[derive(Debug, Clone, Copy)]
enum SocialState {
    Free { heading: f64 },
    Joined { spot: usize, target: Point },
}

const MARGIN: f64 = 60.0;

fn social(
    spec: &SceneSpec,
    profiles: &Profiles,
    ids: &[SubjectId],
    types: &[TypeLabel],
    bodies: &[Body],
    rng: &mut ChaCha8Rng,
    scene: &mut SynthScene,
) {
    let (w, h) = (spec.width, spec.height);
    let spots = [Point::new(0.25 * w, 0.33 * h), Point::new(0.75 * w, 0.33 * h), Point::new(0.5 * w, 0.75 * h)];
    // the scene starts in progress: each subject in its stationary state
    let mut pos = Vec::with_capacity(ids.len());
    let mut state = Vec::with_capacity(ids.len());
    for &t in types {
        let p = profiles.get(t);
        let joined = p.join_prob / (p.join_prob + LEAVE_PROB);
        if rng.gen::<f64>() < joined {
            let spot = rng.gen_range(0..spots.len());
            let phi = rng.gen::<f64>() * TAU;
            let target = Point::new(spots[spot].x + p.radius * phi.cos(), spots[spot].y + p.radius * phi.sin());
            pos.push(target);
            state.push(SocialState::Joined { spot, target });
        } else {
            pos.push(Point::new(rng.gen_range(MARGIN..w - MARGIN), rng.gen_range(MARGIN..h - MARGIN)));
            state.push(SocialState::Free { heading: rng.gen::<f64>() * TAU });
        }
    }
    let turn = Normal::new(0.0, 0.3).expect("valid normal");

    for f in 0..spec.n_frames {
        let mut skeletons = Vec::with_capacity(ids.len());
        let mut members: Vec<BTreeSet<SubjectId>> = vec![BTreeSet::new(); spots.len()];
        for i in 0..ids.len() {
            let p = profiles.get(types[i]);
            state[i] = match state[i] {
                SocialState::Free { .. } if rng.gen::<f64>() < p.join_prob => {
                    let spot = (0..spots.len())
                        .min_by(|&a, &b| pos[i].distance(spots[a]).total_cmp(&pos[i].distance(spots[b])))
                        .expect("spots");
                    let phi = rng.gen::<f64>() * TAU;
                    let target = Point::new(spots[spot].x + p.radius * phi.cos(), spots[spot].y + p.radius * phi.sin());
                    SocialState::Joined { spot, target }
                }
                SocialState::Joined { .. } if rng.gen::<f64>() < LEAVE_PROB => {
                    SocialState::Free { heading: rng.gen::<f64>() * TAU }
                }
                s => s,
            };
            match &mut state[i] {
                SocialState::Free { heading } => {
                    *heading += turn.sample(rng);
                    // free walkers keep their preferred distance from everyone
                    let nearest = (0..ids.len())
                        .filter(|&j| j != i)
                        .min_by(|&a, &b| pos[i].distance(pos[a]).total_cmp(&pos[i].distance(pos[b])));
                    if let Some(j) = nearest {
                        if pos[i].distance(pos[j]) < p.radius {
                            *heading = (pos[i].y - pos[j].y).atan2(pos[i].x - pos[j].x);
                        }
                    }
                    let mut next = Point::new(pos[i].x + p.energy * heading.cos(), pos[i].y + p.energy * heading.sin());
                    if !(MARGIN..=w - MARGIN).contains(&next.x) {
                        *heading = PI - *heading;
                        next.x = next.x.clamp(MARGIN, w - MARGIN);
                    }
                    if !(MARGIN..=h - MARGIN).contains(&next.y) {
                        *heading = -*heading;
                        next.y = next.y.clamp(MARGIN, h - MARGIN);
                    }
                    pos[i] = next;
                }
                SocialState::Joined { spot, target } => {
                    pos[i] = step_towards(pos[i], *target, p.energy);
                    if pos[i].distance(*target) < 10.0 {
                        members[*spot].insert(ids[i]);
                    }
                }
            }
            let jitter = Normal::new(0.0, (JITTER_PER_ENERGY * p.energy).max(1e-12)).expect("valid");
            skeletons.push(Skeleton::detected(ids[i], pose(pos[i], p.energy, bodies[i], f, None, &jitter, rng)));
        }
        scene.frames.push(PoseFrame { frame_index: f, scene_kind: SceneKind::Social, skeletons });
        scene
            .groups
            .push(GroupAssignment { frame_index: f, groups: members.into_iter().filter(|g| !g.is_empty()).collect() });
    }
}

#[derive(Debug, Clone, Copy)]
enum HomeState {
    Idle,
    Walk { region: usize },
    Gesture { region: usize, start: usize, until: usize },
}

/// Six fixed places where things get handled.
pub fn attractor_layout(w: f64, h: f64) -> Vec<Point> {
    vec![
        Point::new(0.2 * w, 0.22 * h),
        Point::new(0.5 * w, 0.18 * h),
        Point::new(0.8 * w, 0.22 * h),
        Point::new(0.2 * w, 0.78 * h),
        Point::new(0.5 * w, 0.82 * h),
        Point::new(0.8 * w, 0.78 * h),
    ]
}

fn nonsocial(
    spec: &SceneSpec,
    profiles: &Profiles,
    ids: &[SubjectId],
    types: &[TypeLabel],
    bodies: &[Body],
    rng: &mut ChaCha8Rng,
    scene: &mut SynthScene,
) {
    let (w, h) = (spec.width, spec.height);
    let attractors = attractor_layout(w, h);
    let home = Point::new(0.5 * w, 0.5 * h);
    let stand = |a: Point| {
        let d = a.distance(home);
        Point::new(a.x + (home.x - a.x) * 35.0 / d, a.y + (home.y - a.y) * 35.0 / d)
    };
    let drift = Normal::new(0.0, 1.0).expect("valid normal");

    for (i, &id) in ids.iter().enumerate() {
        let p = profiles.get(types[i]);
        let jitter = Normal::new(0.0, (JITTER_PER_ENERGY * p.energy).max(1e-12)).expect("valid");
        let mut pos = Point::new(home.x + rng.gen_range(-40.0..40.0), home.y + rng.gen_range(-40.0..40.0));
        let mut st = HomeState::Idle;
        for f in 0..spec.n_frames {
            st = match st {
                HomeState::Idle if rng.gen::<f64>() < p.gesture_rate / 100.0 => {
                    HomeState::Walk { region: rng.gen_range(0..attractors.len()) }
                }
                HomeState::Walk { region } if pos.distance(stand(attractors[region])) < 1e-9 => {
                    HomeState::Gesture { region, start: f, until: f + rng.gen_range(20..40) }
                }
                HomeState::Gesture { until, .. } if f >= until => {
                    if rng.gen::<f64>() < 0.5 {
                        HomeState::Walk { region: rng.gen_range(0..attractors.len()) }
                    } else {
                        HomeState::Idle
                    }
                }
                s => s,
            };
            let mut gesture = None;
            match st {
                HomeState::Idle => {
                    let target = Point::new(
                        pos.x + drift.sample(rng) * p.energy * 0.5 + (home.x - pos.x) * 0.02,
                        pos.y + drift.sample(rng) * p.energy * 0.5 + (home.y - pos.y) * 0.02,
                    );
                    pos = step_towards(pos, target, p.energy);
                }
                HomeState::Walk { region } => {
                    pos = step_towards(pos, stand(attractors[region]), p.energy);
                }
                HomeState::Gesture { region, start, .. } => {
                    let a = attractors[region];
                    gesture = Some(((a.y - pos.y + 45.0).atan2(a.x - pos.x), start));
                }
            }
            let joints = pose(pos, p.energy, bodies[i], f, gesture, &jitter, rng);
            scene.frames.push(PoseFrame {
                frame_index: i * spec.n_frames + f,
                scene_kind: SceneKind::Nonsocial,
                skeletons: vec![Skeleton::detected(id, joints)],
            });
        }
    }
    scene.attractors = attractors;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_profiles_parse() {
        let p = Profiles::default_v1();
        assert_eq!(p.version, 1);
        let r = p.get(TypeLabel::Resilient);
        assert!(r.trait_means[0] > 0.5 && r.trait_means[3] < 0.5);
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = SceneSpec { n_subjects: 4, n_frames: 20, seed: 11, ..Default::default() };
        let a = generate_scene(&spec, &Profiles::default_v1()).unwrap();
        let b = generate_scene(&spec, &Profiles::default_v1()).unwrap();
        assert_eq!(a.pose_text(), b.pose_text());
        assert_eq!(a.groups_text(), b.groups_text());
        assert_eq!(a.traits_text(), b.traits_text());
    }

    #[test]
    fn pure_mix_plants_one_type() {
        let spec = SceneSpec { n_subjects: 7, n_frames: 5, mix: [1.0, 0.0, 0.0], ..Default::default() };
        let s = generate_scene(&spec, &Profiles::default_v1()).unwrap();
        assert!(s.planted.iter().all(|(_, t)| *t == TypeLabel::Resilient));
    }

    #[test]
    fn bad_mix_rejected() {
        let spec = SceneSpec { mix: [0.5, 0.2, 0.2], ..Default::default() };
        assert!(generate_scene(&spec, &Profiles::default_v1()).is_err());
    }

    #[test]
    fn zero_energy_is_static() {
        let spec = SceneSpec { n_subjects: 3, n_frames: 15, ..Default::default() };
        let s = generate_scene(&spec, &Profiles::default_v1().with_energy(0.0)).unwrap();
        for f in &s.frames[1..] {
            assert_eq!(f.skeletons, s.frames[0].skeletons);
        }
    }

    #[test]
    fn nonsocial_subjects_are_alone() {
        let spec = SceneSpec { n_subjects: 3, n_frames: 10, kind: SceneKind::Nonsocial, ..Default::default() };
        let s = generate_scene(&spec, &Profiles::default_v1()).unwrap();
        assert_eq!(s.frames.len(), 30);
        assert!(s.frames.iter().all(|f| f.skeletons.len() == 1));
        assert!(s.groups.is_empty());
        assert_eq!(s.attractors.len(), 6);
    }
}
