//! Skeleton streams: parsing, joint repair, track association and windowing.
//!
//! A pose stream is line-delimited JSON, one frame per line:
//!
//! ```text
//! {"frame":0,"scene":"social","subjects":[{"id":3,"joints":[[x,y],...],"conf":[...]}]}
//! ```
//!
//! Group files use the same framing with `{"frame":0,"groups":[[1,2],[3]]}`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confidence written into joints filled in by [`impute_missing_joints`].
pub const IMPUTED_CONFIDENCE: f64 = 0.01;

pub type SubjectId = i64;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (other.x - self.x).hypot(other.y - self.y)
    }

    pub fn midpoint(self, other: Point) -> Point {
        Point::new((self.x + other.x) / 2.0, (self.y + other.y) / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    Social,
    Nonsocial,
}

impl std::fmt::Display for SceneKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SceneKind::Social => "social",
            SceneKind::Nonsocial => "nonsocial",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub subject_id: SubjectId,
    pub joints: Vec<Point>,
    pub confidence: Vec<f64>,
}

impl Skeleton {
    /// Fully detected skeleton (all confidences 1).
    pub fn detected(subject_id: SubjectId, joints: Vec<Point>) -> Self {
        let confidence = vec![1.0; joints.len()];
        Self { subject_id, joints, confidence }
    }

    pub fn is_detected(&self, joint: usize) -> bool {
        self.confidence[joint] > 0.0
    }

    /// Mean of the detected joints, `None` when nothing was detected.
    pub fn centroid(&self) -> Option<Point> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for (p, &c) in self.joints.iter().zip(&self.confidence) {
            if c > 0.0 {
                sx += p.x;
                sy += p.y;
                n += 1;
            }
        }
        (n > 0).then(|| Point::new(sx / n as f64, sy / n as f64))
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Skeleton {
        let mut out = self.clone();
        for p in &mut out.joints {
            p.x += dx;
            p.y += dy;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseFrame {
    pub frame_index: usize,
    pub scene_kind: SceneKind,
    pub skeletons: Vec<Skeleton>,
}

impl PoseFrame {
    pub fn skeleton(&self, id: SubjectId) -> Option<&Skeleton> {
        self.skeletons.iter().find(|s| s.subject_id == id)
    }

    pub fn subject_ids(&self) -> impl Iterator<Item = SubjectId> + '_ {
        self.skeletons.iter().map(|s| s.subject_id)
    }
}

/// Fixed-length window of frames together with the subjects present in all of them.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseClip {
    pub clip_id: usize,
    pub frames: Vec<PoseFrame>,
    pub subject_ids: Vec<SubjectId>,
}

impl PoseClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn scene_kind(&self) -> Option<SceneKind> {
        self.frames.first().map(|f| f.scene_kind)
    }

    /// Skeleton of `subject` in frame `f`, or a missing-subject error.
    pub fn skeleton(&self, f: usize, subject: SubjectId) -> Result<&Skeleton> {
        let frame = &self.frames[f];
        frame.skeleton(subject).ok_or(Error::MissingSubject { subject, frame: frame.frame_index })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroupAssignment {
    pub frame_index: usize,
    pub groups: Vec<BTreeSet<SubjectId>>,
}

impl GroupAssignment {
    pub fn group_of(&self, id: SubjectId) -> Option<&BTreeSet<SubjectId>> {
        self.groups.iter().find(|g| g.contains(&id))
    }
}

/// Joint adjacency used for imputation.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    neighbors: Vec<Vec<usize>>,
}

impl Topology {
    pub fn from_edges(joints: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut neighbors = vec![Vec::new(); joints];
        for &(a, b) in edges {
            if a >= joints || b >= joints {
                return Err(Error::Config(format!("edge ({a},{b}) outside {joints}-joint layout")));
            }
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for n in &mut neighbors {
            n.sort_unstable();
            n.dedup();
        }
        Ok(Self { neighbors })
    }

    pub fn joints(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, joint: usize) -> &[usize] {
        &self.neighbors[joint]
    }
}

/// Named joints of an 18-joint COCO-style layout (OpenPose ordering).
pub mod coco {
    pub const NOSE: usize = 0;
    pub const NECK: usize = 1;
    pub const R_SHOULDER: usize = 2;
    pub const R_ELBOW: usize = 3;
    pub const R_WRIST: usize = 4;
    pub const L_SHOULDER: usize = 5;
    pub const L_ELBOW: usize = 6;
    pub const L_WRIST: usize = 7;
    pub const R_HIP: usize = 8;
    pub const R_KNEE: usize = 9;
    pub const R_ANKLE: usize = 10;
    pub const L_HIP: usize = 11;
    pub const L_KNEE: usize = 12;
    pub const L_ANKLE: usize = 13;
    pub const R_EYE: usize = 14;
    pub const L_EYE: usize = 15;
    pub const R_EAR: usize = 16;
    pub const L_EAR: usize = 17;

    pub const EDGES: [(usize, usize); 17] = [
        (NOSE, NECK),
        (NECK, R_SHOULDER),
        (R_SHOULDER, R_ELBOW),
        (R_ELBOW, R_WRIST),
        (NECK, L_SHOULDER),
        (L_SHOULDER, L_ELBOW),
        (L_ELBOW, L_WRIST),
        (NECK, R_HIP),
        (R_HIP, R_KNEE),
        (R_KNEE, R_ANKLE),
        (NECK, L_HIP),
        (L_HIP, L_KNEE),
        (L_KNEE, L_ANKLE),
        (NOSE, R_EYE),
        (R_EYE, R_EAR),
        (NOSE, L_EYE),
        (L_EYE, L_EAR),
    ];
}

/// Which joints play which role in the descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonLayout {
    pub topology: Topology,
    /// Reference joints, in row-block order of the person descriptor.
    pub reference_joints: Vec<usize>,
    /// Joints averaged to get the body center.
    pub hip_joints: Vec<usize>,
    /// (elbow, wrist) pairs; both joints are tracked and the wrist picks the patch.
    pub arms: Vec<(usize, usize)>,
}

impl SkeletonLayout {
    pub fn coco18() -> Self {
        use coco::*;
        Self {
            topology: Topology::from_edges(18, &EDGES).expect("static layout"),
            reference_joints: vec![L_SHOULDER, R_SHOULDER, L_HIP, R_HIP],
            hip_joints: vec![L_HIP, R_HIP],
            arms: vec![(R_ELBOW, R_WRIST), (L_ELBOW, L_WRIST)],
        }
    }

    pub fn joints(&self) -> usize {
        self.topology.joints()
    }

    pub fn body_center(&self, s: &Skeleton) -> Point {
        let n = self.hip_joints.len() as f64;
        let (sx, sy) = self.hip_joints.iter().fold((0.0, 0.0), |(x, y), &j| (x + s.joints[j].x, y + s.joints[j].y));
        Point::new(sx / n, sy / n)
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.joints();
        let all =
            self.reference_joints.iter().chain(&self.hip_joints).chain(self.arms.iter().flat_map(|(a, b)| [a, b]));
        if let Some(bad) = all.into_iter().find(|&&k| k >= j) {
            return Err(Error::Config(format!("joint {bad} outside {j}-joint layout")));
        }
        if self.reference_joints.is_empty() || self.hip_joints.is_empty() {
            return Err(Error::Config("layout needs reference and hip joints".into()));
        }
        Ok(())
    }
}

impl Default for SkeletonLayout {
    fn default() -> Self {
        Self::coco18()
    }
}

#[derive(Serialize, Deserialize)]
struct SubjectRecord {
    id: SubjectId,
    joints: Vec<[f64; 2]>,
    conf: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    frame: usize,
    scene: SceneKind,
    subjects: Vec<SubjectRecord>,
}

#[derive(Serialize, Deserialize)]
struct GroupRecord {
    frame: usize,
    groups: Vec<Vec<SubjectId>>,
}

fn lines(bytes: &[u8]) -> Result<impl Iterator<Item = (usize, &str)>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse { line: 0, msg: format!("not UTF-8: {e}") })?;
    Ok(text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty()))
}

/// Parse a pose stream with `joints` joints per skeleton; frames come back sorted.
pub fn parse_pose_stream(bytes: &[u8], joints: usize) -> Result<Vec<PoseFrame>> {
    let mut frames = Vec::new();
    let mut seen = BTreeSet::new();
    for (line, text) in lines(bytes)? {
        let rec: FrameRecord = serde_json::from_str(text).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        if !seen.insert(rec.frame) {
            return Err(Error::Schema(format!("line {line}: duplicate frame {}", rec.frame)));
        }
        let mut ids = BTreeSet::new();
        let mut skeletons = Vec::with_capacity(rec.subjects.len());
        for s in rec.subjects {
            if s.joints.len() != joints || s.conf.len() != joints {
                return Err(Error::Schema(format!(
                    "line {line}: subject {} has {} joints / {} confidences, expected {joints}",
                    s.id,
                    s.joints.len(),
                    s.conf.len()
                )));
            }
            if !ids.insert(s.id) {
                return Err(Error::Schema(format!("line {line}: duplicate subject {}", s.id)));
            }
            if let Some(c) = s.conf.iter().find(|c| !(0.0..=1.0).contains(*c)) {
                return Err(Error::Schema(format!("line {line}: confidence {c} outside [0,1]")));
            }
            skeletons.push(Skeleton {
                subject_id: s.id,
                joints: s.joints.iter().map(|&[x, y]| Point::new(x, y)).collect(),
                confidence: s.conf,
            });
        }
        frames.push(PoseFrame { frame_index: rec.frame, scene_kind: rec.scene, skeletons });
    }
    frames.sort_by_key(|f| f.frame_index);
    Ok(frames)
}

pub fn write_pose_stream(frames: &[PoseFrame]) -> String {
    let mut out = String::new();
    for f in frames {
        let rec = FrameRecord {
            frame: f.frame_index,
            scene: f.scene_kind,
            subjects: f
                .skeletons
                .iter()
                .map(|s| SubjectRecord {
                    id: s.subject_id,
                    joints: s.joints.iter().map(|p| [p.x, p.y]).collect(),
                    conf: s.confidence.clone(),
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("serializable"));
        out.push('\n');
    }
    out
}

/// Parse a group file. Member sets must be disjoint within a frame.
pub fn parse_groups(bytes: &[u8]) -> Result<Vec<GroupAssignment>> {
    let mut out = Vec::new();
    for (line, text) in lines(bytes)? {
        let rec: GroupRecord = serde_json::from_str(text).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let mut seen = BTreeSet::new();
        let mut groups = Vec::with_capacity(rec.groups.len());
        for g in rec.groups {
            let set: BTreeSet<_> = g.into_iter().collect();
            for &id in &set {
                if !seen.insert(id) {
                    return Err(Error::Schema(format!("line {line}: subject {id} in more than one group")));
                }
            }
            groups.push(set);
        }
        out.push(GroupAssignment { frame_index: rec.frame, groups });
    }
    out.sort_by_key(|g| g.frame_index);
    Ok(out)
}

pub fn write_groups(groups: &[GroupAssignment]) -> String {
    let mut out = String::new();
    for g in groups {
        let rec = GroupRecord {
            frame: g.frame_index,
            groups: g.groups.iter().map(|s| s.iter().copied().collect()).collect(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("serializable"));
        out.push('\n');
    }
    out
}

/// Check that every group member exists in the matching pose frame.
pub fn validate_groups(groups: &[GroupAssignment], frames: &[PoseFrame]) -> Result<()> {
    let by_index: BTreeMap<usize, &PoseFrame> = frames.iter().map(|f| (f.frame_index, f)).collect();
    for g in groups {
        let frame = by_index
            .get(&g.frame_index)
            .ok_or_else(|| Error::Schema(format!("group record for unknown frame {}", g.frame_index)))?;
        for id in g.groups.iter().flatten() {
            if frame.skeleton(*id).is_none() {
                return Err(Error::Schema(format!("group member {id} not present in frame {}", g.frame_index)));
            }
        }
    }
    Ok(())
}

/// Fill undetected joints from their detected neighbours.
///
/// Only originally detected joints feed the estimate, so the result does not
/// depend on the order joints are visited in.
pub fn impute_missing_joints(s: &Skeleton, topology: &Topology) -> Result<Skeleton> {
    if topology.joints() != s.joints.len() {
        return Err(Error::Schema(format!(
            "topology covers {} joints, skeleton has {}",
            topology.joints(),
            s.joints.len()
        )));
    }
    let centroid = s.centroid().ok_or(Error::Unimputable(s.subject_id))?;
    let mut out = s.clone();
    for j in 0..s.joints.len() {
        if s.is_detected(j) {
            continue;
        }
        let detected: Vec<Point> =
            topology.neighbors(j).iter().filter(|&&n| s.is_detected(n)).map(|&n| s.joints[n]).collect();
        out.joints[j] = if detected.is_empty() {
            centroid
        } else {
            let n = detected.len() as f64;
            Point::new(detected.iter().map(|p| p.x).sum::<f64>() / n, detected.iter().map(|p| p.y).sum::<f64>() / n)
        };
        out.confidence[j] = IMPUTED_CONFIDENCE;
    }
    Ok(out)
}

/// Impute every skeleton of every frame, dropping the ones with no detected joint.
pub fn repair_frames(frames: &[PoseFrame], topology: &Topology) -> Result<Vec<PoseFrame>> {
    frames
        .iter()
        .map(|f| {
            let mut skeletons = Vec::with_capacity(f.skeletons.len());
            for s in &f.skeletons {
                match impute_missing_joints(s, topology) {
                    Ok(s) => skeletons.push(s),
                    Err(Error::Unimputable(_)) => {}
                    Err(e) => return Err(e),
                }
            }
            Ok(PoseFrame { skeletons, ..f.clone() })
        })
        .collect()
}

/// Relabel skeletons so ids follow greedy nearest-centroid matches between
/// consecutive frames.
///
/// Candidate pairs are taken in order of (distance, previous id, skeleton
/// position); pairs further apart than `max_jump` never match and the
/// skeleton starts a new track.
pub fn associate_tracks(frames: &[PoseFrame], max_jump: f64) -> Vec<PoseFrame> {
    let mut next_id: SubjectId = 0;
    let mut previous: Vec<(SubjectId, Point)> = Vec::new();
    let mut out = Vec::with_capacity(frames.len());

    for frame in frames {
        let centroids: Vec<Option<Point>> = frame.skeletons.iter().map(|s| s.centroid()).collect();
        let mut pairs = Vec::new();
        for (pi, &(pid, pc)) in previous.iter().enumerate() {
            for (si, c) in centroids.iter().enumerate() {
                if let Some(c) = c {
                    let d = pc.distance(*c);
                    if d <= max_jump {
                        pairs.push((d, pid, si, pi));
                    }
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut assigned: Vec<Option<SubjectId>> = vec![None; frame.skeletons.len()];
        let mut used = vec![false; previous.len()];
        for (_, pid, si, pi) in pairs {
            if assigned[si].is_none() && !used[pi] {
                assigned[si] = Some(pid);
                used[pi] = true;
            }
        }

        let mut skeletons = Vec::with_capacity(frame.skeletons.len());
        let mut current = Vec::with_capacity(frame.skeletons.len());
        for (si, s) in frame.skeletons.iter().enumerate() {
            let id = assigned[si].unwrap_or_else(|| {
                next_id += 1;
                next_id - 1
            });
            let mut s = s.clone();
            s.subject_id = id;
            if let Some(c) = centroids[si] {
                current.push((id, c));
            }
            skeletons.push(s);
        }
        previous = current;
        out.push(PoseFrame { skeletons, ..frame.clone() });
    }
    out
}

/// Cut frames into clips of `t` frames starting every `stride` frames.
///
/// A clip keeps only the subjects present in all of its frames; clips left
/// with nobody are dropped.
pub fn window(frames: &[PoseFrame], t: usize, stride: usize) -> Result<Vec<PoseClip>> {
    if t < 2 || stride == 0 {
        return Err(Error::Config(format!("window needs t >= 2 and stride >= 1, got t={t} stride={stride}")));
    }
    if frames.len() < t {
        return Ok(Vec::new());
    }
    let count = (frames.len() - t) / stride + 1;
    let mut clips = Vec::new();
    for c in 0..count {
        let span = &frames[c * stride..c * stride + t];
        let mut ids: BTreeSet<SubjectId> = span[0].subject_ids().collect();
        for f in &span[1..] {
            let here: BTreeSet<_> = f.subject_ids().collect();
            ids.retain(|id| here.contains(id));
        }
        if ids.is_empty() {
            continue;
        }
        clips.push(PoseClip { clip_id: c, frames: span.to_vec(), subject_ids: ids.into_iter().collect() });
    }
    Ok(clips)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(frame: usize, subjects: &[(i64, usize)]) -> String {
        let subs: Vec<String> = subjects
            .iter()
            .map(|&(id, j)| {
                let joints: Vec<String> = (0..j).map(|k| format!("[{k},{}]", k * 2)).collect();
                let conf = vec!["1.0"; j].join(",");
                format!(r#"{{"id":{id},"joints":[{}],"conf":[{conf}]}}"#, joints.join(","))
            })
            .collect();
        format!(r#"{{"frame":{frame},"scene":"social","subjects":[{}]}}"#, subs.join(","))
    }

    fn stationary(id: i64, x: f64, y: f64) -> Skeleton {
        Skeleton::detected(id, vec![Point::new(x, y); 18])
    }

    fn frames_of(skels: Vec<Vec<Skeleton>>) -> Vec<PoseFrame> {
        skels
            .into_iter()
            .enumerate()
            .map(|(i, skeletons)| PoseFrame { frame_index: i, scene_kind: SceneKind::Social, skeletons })
            .collect()
    }

    #[test]
    fn parses_one_frame_two_subjects() {
        let frames = parse_pose_stream(line(0, &[(1, 18), (2, 18)]).as_bytes(), 18).unwrap();
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].skeletons.len(), 2);
        assert_eq!(frames[0].skeletons[1].joints[3], Point::new(3.0, 6.0));
    }

    #[test]
    fn empty_input_is_empty() {
        assert!(parse_pose_stream(b"", 18).unwrap().is_empty());
    }

    #[test]
    fn joint_count_mismatch_is_schema_error() {
        let err = parse_pose_stream(line(0, &[(1, 17)]).as_bytes(), 18).unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
    }

    #[test]
    fn malformed_record_names_line() {
        let text = format!("{}\n{{not json\n", line(0, &[(1, 18)]));
        match parse_pose_stream(text.as_bytes(), 18).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn frames_sorted_and_round_trip() {
        let text = format!("{}\n{}\n", line(5, &[(1, 18)]), line(2, &[(1, 18)]));
        let frames = parse_pose_stream(text.as_bytes(), 18).unwrap();
        assert_eq!(frames[0].frame_index, 2);
        let again = parse_pose_stream(write_pose_stream(&frames).as_bytes(), 18).unwrap();
        assert_eq!(frames, again);
    }

    #[test]
    fn groups_must_be_disjoint() {
        let err = parse_groups(br#"{"frame":0,"groups":[[1,2],[2,3]]}"#).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
        let ok = parse_groups(br#"{"frame":0,"groups":[[1,2],[3]]}"#).unwrap();
        assert_eq!(ok[0].group_of(2).unwrap().len(), 2);
    }

    #[test]
    fn imputes_from_neighbours() {
        let topo = Topology::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let s = Skeleton {
            subject_id: 0,
            joints: vec![Point::new(0.0, 0.0), Point::new(9.0, 9.0), Point::new(2.0, 2.0)],
            confidence: vec![1.0, 0.0, 1.0],
        };
        let out = impute_missing_joints(&s, &topo).unwrap();
        assert_eq!(out.joints[1], Point::new(1.0, 1.0));
        assert_eq!(out.confidence[1], IMPUTED_CONFIDENCE);
    }

    #[test]
    fn imputation_identity_when_complete() {
        let s = stationary(4, 1.0, 2.0);
        let topo = SkeletonLayout::coco18().topology;
        assert_eq!(impute_missing_joints(&s, &topo).unwrap(), s);
    }

    #[test]
    fn imputation_centroid_fallback() {
        let topo = Topology::from_edges(3, &[(1, 2)]).unwrap();
        let s = Skeleton {
            subject_id: 0,
            joints: vec![Point::new(5.0, 5.0), Point::default(), Point::default()],
            confidence: vec![1.0, 0.0, 0.0],
        };
        let out = impute_missing_joints(&s, &topo).unwrap();
        // joint 1 and 2 neighbour only each other, both missing
        assert_eq!(out.joints[1], Point::new(5.0, 5.0));
        assert_eq!(out.joints[2], Point::new(5.0, 5.0));
    }

    #[test]
    fn all_missing_is_unimputable() {
        let mut s = stationary(7, 0.0, 0.0);
        s.confidence = vec![0.0; 18];
        let topo = SkeletonLayout::coco18().topology;
        assert!(matches!(impute_missing_joints(&s, &topo), Err(Error::Unimputable(7))));
        let frames = frames_of(vec![vec![s, stationary(8, 1.0, 1.0)]]);
        let repaired = repair_frames(&frames, &topo).unwrap();
        assert_eq!(repaired[0].skeletons.len(), 1);
    }

    #[test]
    fn drifting_subject_keeps_one_id() {
        let frames = frames_of((0..10).map(|i| vec![stationary(100 + i, i as f64, 0.0)]).collect());
        let out = associate_tracks(&frames, 5.0);
        assert!(out.iter().all(|f| f.skeletons[0].subject_id == 0));
    }

    #[test]
    fn two_stationary_subjects_stable() {
        let frames = frames_of(
            (0..5)
                .map(|i| {
                    let mut v = vec![stationary(1, 0.0, 0.0), stationary(2, 100.0, 0.0)];
                    if i % 2 == 1 {
                        v.reverse();
                    }
                    v
                })
                .collect(),
        );
        let out = associate_tracks(&frames, 5.0);
        for f in &out {
            assert_eq!(f.skeleton(0).unwrap().joints[0].x, 0.0);
            assert_eq!(f.skeleton(1).unwrap().joints[0].x, 100.0);
        }
    }

    #[test]
    fn teleport_starts_new_track() {
        let frames = frames_of(vec![vec![stationary(9, 0.0, 0.0)], vec![stationary(9, 50.0, 0.0)]]);
        let out = associate_tracks(&frames, 5.0);
        assert_eq!(out[0].skeletons[0].subject_id, 0);
        assert_eq!(out[1].skeletons[0].subject_id, 1);
    }

    #[test]
    fn window_counts() {
        let frames = frames_of((0..30).map(|_| vec![stationary(1, 0.0, 0.0)]).collect());
        assert_eq!(window(&frames, 15, 15).unwrap().len(), 2);
        assert_eq!(window(&frames, 30, 1).unwrap().len(), 1);
        assert!(window(&frames[..10], 15, 15).unwrap().is_empty());
    }

    #[test]
    fn window_requires_persistence() {
        let frames = frames_of(
            (0..15)
                .map(|i| {
                    let mut v = vec![stationary(1, 0.0, 0.0)];
                    if i < 10 {
                        v.push(stationary(2, 50.0, 0.0));
                    }
                    v
                })
                .collect(),
        );
        let clips = window(&frames, 15, 15).unwrap();
        assert_eq!(clips[0].subject_ids, vec![1]);
    }
}
