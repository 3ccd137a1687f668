//! Skeleton-clip descriptors in cylindrical coordinates.
//!
//! Every descriptor is an `H × W × C` tensor with time running down the rows:
//! the person descriptor stacks one `t × (J−1)` block per reference joint,
//! group descriptors pool member person descriptors, and proxemics
//! descriptors keep `(ρ, θ)` towards other people or scene regions.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use ndarray::{Array3, Zip};

use crate::error::{Error, Result};
use crate::pose_io::{Point, PoseClip, SceneKind, SkeletonLayout, SubjectId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CylTriple {
    pub rho: f64,
    pub theta: f64,
    pub z: f64,
}

/// Cylindrical encoding of the displacement from `a` to `b`.
///
/// `θ` is the quadrant-aware angle in `(−π, π]`, fixed to 0 for coincident points.
pub fn cylindrical(a: Point, b: Point) -> CylTriple {
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    let rho = (dx * dx + dy * dy).sqrt();
    let theta = if rho == 0.0 {
        0.0
    } else {
        let t = dy.atan2(dx);
        // atan2 gives −π for (−0.0 dy, negative dx)
        if t == -PI {
            PI
        } else {
            t
        }
    };
    CylTriple { rho, theta, z: dy }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StreamTag {
    Person,
    Group,
    ProxSocial,
    ProxNonsocial,
}

impl StreamTag {
    pub fn name(self) -> &'static str {
        match self {
            StreamTag::Person => "person",
            StreamTag::Group => "group",
            StreamTag::ProxSocial => "prox_social",
            StreamTag::ProxNonsocial => "prox_nonsocial",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "person" => StreamTag::Person,
            "group" => StreamTag::Group,
            "prox_social" => StreamTag::ProxSocial,
            "prox_nonsocial" => StreamTag::ProxNonsocial,
            _ => return None,
        })
    }
}

pub const CYL_CHANNELS: [&str; 3] = ["rho", "theta", "z"];
pub const PROX_CHANNELS: [&str; 2] = ["rho", "theta"];

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorTensor {
    /// `(rows, cols, channels)`, rows are time.
    pub data: Array3<f64>,
    pub stream: StreamTag,
    pub channel_names: Vec<String>,
}

impl DescriptorTensor {
    pub fn new(data: Array3<f64>, stream: StreamTag, channels: &[&str]) -> Result<Self> {
        let (h, w, c) = data.dim();
        if h == 0 || w == 0 || !(c == 2 || c == 3) || c != channels.len() {
            return Err(Error::Shape(format!("descriptor {h}x{w}x{c} with {} channel names", channels.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite descriptor entry".into()));
        }
        Ok(Self { data, stream, channel_names: channels.iter().map(|s| s.to_string()).collect() })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    /// One CSV table per channel, rows = descriptor rows.
    pub fn to_channel_csv(&self) -> Vec<(String, String)> {
        let (h, w, c) = self.data.dim();
        (0..c)
            .map(|ch| {
                let mut s = String::new();
                for r in 0..h {
                    for col in 0..w {
                        if col > 0 {
                            s.push(',');
                        }
                        let _ = write!(s, "{}", self.data[[r, col, ch]]);
                    }
                    s.push('\n');
                }
                (self.channel_names[ch].clone(), s)
            })
            .collect()
    }
}

/// Relative joint motion of one subject.
///
/// Row `r·t + f` holds frame `f` seen from reference joint `r`; the columns
/// are the remaining `J − 1` joints in index order.
pub fn person_descriptor(clip: &PoseClip, subject: SubjectId, reference_joints: &[usize]) -> Result<DescriptorTensor> {
    let t = clip.len();
    if t == 0 {
        return Err(Error::Empty("clip has no frames"));
    }
    if reference_joints.is_empty() {
        return Err(Error::Config("no reference joints".into()));
    }
    let skeletons = (0..t).map(|f| clip.skeleton(f, subject)).collect::<Result<Vec<_>>>()?;
    let joints = skeletons[0].joints.len();
    if let Some(&r) = reference_joints.iter().find(|&&r| r >= joints) {
        return Err(Error::Config(format!("reference joint {r} outside {joints}-joint skeleton")));
    }
    let mut data = Array3::zeros((reference_joints.len() * t, joints - 1, 3));
    for (ri, &r) in reference_joints.iter().enumerate() {
        for (f, s) in skeletons.iter().enumerate() {
            let origin = s.joints[r];
            let row = ri * t + f;
            for (col, j) in (0..joints).filter(|&j| j != r).enumerate() {
                let c = cylindrical(origin, s.joints[j]);
                data[[row, col, 0]] = c.rho;
                data[[row, col, 1]] = c.theta;
                data[[row, col, 2]] = c.z;
            }
        }
    }
    DescriptorTensor::new(data, StreamTag::Person, &CYL_CHANNELS)
}

fn check_members(members: &[DescriptorTensor]) -> Result<()> {
    let first = members.first().ok_or(Error::Empty("group has no members"))?;
    if let Some(m) = members.iter().find(|m| m.shape() != first.shape()) {
        return Err(Error::Shape(format!("group member {:?} vs {:?}", m.shape(), first.shape())));
    }
    Ok(())
}

/// Elementwise mean of member descriptors, per channel.
///
/// Each element is summed in sorted order and clamped to the members'
/// range, so the result is bitwise independent of member order.
pub fn group_average_pool(members: &[DescriptorTensor]) -> Result<DescriptorTensor> {
    check_members(members)?;
    let n = members.len() as f64;
    let mut buf = Vec::with_capacity(members.len());
    let acc = Array3::from_shape_fn(members[0].data.dim(), |idx| {
        buf.clear();
        buf.extend(members.iter().map(|m| m.data[idx]));
        buf.sort_by(f64::total_cmp);
        (buf.iter().sum::<f64>() / n).clamp(buf[0], buf[buf.len() - 1])
    });
    let names: Vec<&str> = members[0].channel_names.iter().map(String::as_str).collect();
    DescriptorTensor::new(acc, StreamTag::Group, &names)
}

/// Elementwise maximum of member descriptors, per channel.
pub fn group_max_pool(members: &[DescriptorTensor]) -> Result<DescriptorTensor> {
    check_members(members)?;
    let mut acc = members[0].data.clone();
    for m in &members[1..] {
        Zip::from(&mut acc).and(&m.data).for_each(|a, &b| *a = a.max(b));
    }
    let names: Vec<&str> = members[0].channel_names.iter().map(String::as_str).collect();
    DescriptorTensor::new(acc, StreamTag::Group, &names)
}

/// Parameters of the social proxemics descriptor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxemicsConfig {
    /// Columns = `n_max − 1`.
    pub n_max: usize,
    /// ρ written for absent subjects.
    pub r_far: f64,
}

impl ProxemicsConfig {
    /// `r_far` defaults to twice the scene diagonal.
    pub fn for_scene(n_max: usize, width: f64, height: f64) -> Self {
        Self { n_max, r_far: 2.0 * width.hypot(height) }
    }
}

/// `(ρ, θ)` from the subject's body center to every other subject's.
///
/// Columns are ordered by ascending first-frame ρ (later arrivals after, by
/// arrival frame then ρ), which makes the tensor independent of ids. Empty
/// slots hold `(r_far, 0)`.
pub fn social_proxemics(
    clip: &PoseClip,
    subject: SubjectId,
    layout: &SkeletonLayout,
    cfg: ProxemicsConfig,
) -> Result<DescriptorTensor> {
    if clip.scene_kind() != Some(SceneKind::Social) {
        return Err(Error::Invalid("social proxemics needs a social scene".into()));
    }
    if cfg.n_max < 2 {
        return Err(Error::Config("n_max must be at least 2".into()));
    }
    let t = clip.len();
    let centers =
        (0..t).map(|f| clip.skeleton(f, subject).map(|s| layout.body_center(s))).collect::<Result<Vec<_>>>()?;

    // other subject -> per-frame triple
    let mut tracks: BTreeMap<SubjectId, Vec<Option<CylTriple>>> = BTreeMap::new();
    for (f, frame) in clip.frames.iter().enumerate() {
        if frame.skeletons.len() > cfg.n_max {
            return Err(Error::Config(format!(
                "frame {} has {} subjects, n_max is {}",
                frame.frame_index,
                frame.skeletons.len(),
                cfg.n_max
            )));
        }
        for s in frame.skeletons.iter().filter(|s| s.subject_id != subject) {
            let c = cylindrical(centers[f], layout.body_center(s));
            tracks.entry(s.subject_id).or_insert_with(|| vec![None; t])[f] = Some(c);
        }
    }
    let slots = cfg.n_max - 1;
    if tracks.len() > slots {
        return Err(Error::Config(format!("{} other subjects in clip, only {slots} columns", tracks.len())));
    }

    let mut order: Vec<(usize, f64, f64, &Vec<Option<CylTriple>>)> = tracks
        .values()
        .map(|track| {
            let (first, c) =
                track.iter().enumerate().find_map(|(f, c)| c.map(|c| (f, c))).expect("track has at least one entry");
            (first, c.rho, c.theta, track)
        })
        .collect();
    order.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2)));

    let mut data = Array3::zeros((t, slots, 2));
    for f in 0..t {
        for col in 0..slots {
            let c = order.get(col).and_then(|o| o.3[f]);
            let (rho, theta) = c.map_or((cfg.r_far, 0.0), |c| (c.rho, c.theta));
            data[[f, col, 0]] = rho;
            data[[f, col, 1]] = theta;
        }
    }
    DescriptorTensor::new(data, StreamTag::ProxSocial, &PROX_CHANNELS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose_io::{PoseFrame, Skeleton};

    fn clip_of(frames: Vec<Vec<Skeleton>>, kind: SceneKind) -> PoseClip {
        let ids = frames[0].iter().map(|s| s.subject_id).collect();
        PoseClip {
            clip_id: 0,
            frames: frames
                .into_iter()
                .enumerate()
                .map(|(i, skeletons)| PoseFrame { frame_index: i, scene_kind: kind, skeletons })
                .collect(),
            subject_ids: ids,
        }
    }

    fn body(id: SubjectId, x: f64, y: f64) -> Skeleton {
        Skeleton::detected(id, (0..18).map(|j| Point::new(x + j as f64, y + (j * j) as f64 / 4.0)).collect())
    }

    #[test]
    fn cylindrical_examples() {
        let c = cylindrical(Point::new(0.0, 0.0), Point::new(3.0, 4.0));
        assert_eq!(c.rho, 5.0);
        assert!((c.theta - 0.927_295_218_001_612_2).abs() < 1e-12);
        assert_eq!(c.z, 4.0);
        let c = cylindrical(Point::new(7.0, -2.0), Point::new(7.0, -2.0));
        assert_eq!((c.rho, c.theta, c.z), (0.0, 0.0, 0.0));
        let c = cylindrical(Point::new(1.0, 1.0), Point::new(0.0, 1.0));
        assert_eq!((c.rho, c.theta, c.z), (1.0, PI, 0.0));
    }

    #[test]
    fn person_shape_is_ref_t_by_j_minus_one() {
        let clip = clip_of((0..15).map(|_| vec![body(1, 0.0, 0.0)]).collect(), SceneKind::Social);
        let d = person_descriptor(&clip, 1, &SkeletonLayout::coco18().reference_joints).unwrap();
        assert_eq!(d.shape(), (60, 17, 3));
    }

    #[test]
    fn static_clip_rows_repeat_per_block() {
        let clip = clip_of((0..15).map(|_| vec![body(1, 0.0, 0.0)]).collect(), SceneKind::Social);
        let d = person_descriptor(&clip, 1, &[5]).unwrap();
        for r in 1..15 {
            assert_eq!(d.data.slice(ndarray::s![r, .., ..]), d.data.slice(ndarray::s![0, .., ..]));
        }
    }

    #[test]
    fn missing_subject_rejected() {
        let clip = clip_of((0..3).map(|_| vec![body(1, 0.0, 0.0)]).collect(), SceneKind::Social);
        assert!(matches!(person_descriptor(&clip, 2, &[5]), Err(Error::MissingSubject { subject: 2, .. })));
    }

    fn constant(v: f64) -> DescriptorTensor {
        DescriptorTensor::new(Array3::from_elem((4, 3, 3), v), StreamTag::Person, &CYL_CHANNELS).unwrap()
    }

    #[test]
    fn pooling_examples() {
        let a = constant(2.0);
        let b = constant(4.0);
        assert_eq!(group_average_pool(&[a.clone()]).unwrap().data, a.data);
        assert_eq!(group_max_pool(&[a.clone()]).unwrap().data, a.data);
        assert!(group_average_pool(&[a.clone(), b.clone()]).unwrap().data.iter().all(|&v| v == 3.0));
        assert!(group_max_pool(&[a.clone(), b.clone()]).unwrap().data.iter().all(|&v| v == 4.0));
        assert!(matches!(group_average_pool(&[]), Err(Error::Empty(_))));
        let odd = DescriptorTensor::new(Array3::zeros((2, 3, 3)), StreamTag::Person, &CYL_CHANNELS).unwrap();
        assert!(matches!(group_max_pool(&[a, odd]), Err(Error::Shape(_))));
    }

    #[test]
    fn proxemics_shape_and_padding() {
        let layout = SkeletonLayout::coco18();
        let cfg = ProxemicsConfig { n_max: 6, r_far: 1000.0 };
        let clip = clip_of((0..15).map(|_| vec![body(1, 0.0, 0.0)]).collect(), SceneKind::Social);
        let d = social_proxemics(&clip, 1, &layout, cfg).unwrap();
        assert_eq!(d.shape(), (15, 5, 2));
        for f in 0..15 {
            for c in 0..5 {
                assert_eq!((d.data[[f, c, 0]], d.data[[f, c, 1]]), (1000.0, 0.0));
            }
        }
    }

    #[test]
    fn proxemics_ignores_ids() {
        let layout = SkeletonLayout::coco18();
        let cfg = ProxemicsConfig { n_max: 4, r_far: 1000.0 };
        let make = |ids: [i64; 3]| {
            clip_of(
                (0..5)
                    .map(|f| {
                        vec![
                            body(1, 0.0, 0.0),
                            body(ids[0], 30.0 + f as f64, 0.0),
                            body(ids[1], -10.0, 5.0),
                            body(ids[2], 0.0, 50.0),
                        ]
                    })
                    .collect(),
                SceneKind::Social,
            )
        };
        let a = social_proxemics(&make([2, 3, 4]), 1, &layout, cfg).unwrap();
        let b = social_proxemics(&make([9, 7, 8]), 1, &layout, cfg).unwrap();
        assert_eq!(a, b);
        // nearest first
        assert!(a.data[[0, 0, 0]] < a.data[[0, 1, 0]]);
    }

    #[test]
    fn proxemics_rejects_crowded_frames() {
        let layout = SkeletonLayout::coco18();
        let cfg = ProxemicsConfig { n_max: 2, r_far: 1.0 };
        let clip = clip_of(vec![vec![body(1, 0.0, 0.0), body(2, 1.0, 0.0), body(3, 2.0, 0.0)]; 2], SceneKind::Social);
        assert!(matches!(social_proxemics(&clip, 1, &layout, cfg), Err(Error::Config(_))));
    }
}
