//! End-to-end plumbing: descriptor extraction, descriptor archives,
//! fold-wise encoding and classification, trained model files.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, Array3};
use rayon::prelude::*;

use crate::backbone::{
    backbone_forward, encode, fit_calibration, quantize_and_resize, BackboneConfig, BackboneModel, CalibrationRange,
    FeatureMaps,
};
use crate::descriptors::{
    group_average_pool, group_max_pool, person_descriptor, social_proxemics, DescriptorTensor, ProxemicsConfig,
    StreamTag, CYL_CHANNELS, PROX_CHANNELS,
};
use crate::error::{Error, Result};
use crate::eval::{audit_fold, kfold_split, loso_split, mean, significance, Fold};
use crate::fusion::{
    decision_fuse_sum, fuse_concat, pca_fit, pca_transform, FeatureBundle, FusionMode, Standardizer, Stream,
};
use crate::head::{
    argmax, cam, global_average, head_train, linear_head_train, Head, HeadModel, HeadSpec, LinearCamHead,
};
use crate::kv::KvMap;
use crate::labels::{
    cluster_types, median_binarize, name_types, normalize_traits, Clustering, Level, RawScores, Trait, TypeLabel,
};
use crate::pct::PctTensor;
use crate::pose_io::{
    associate_tracks, repair_frames, window, GroupAssignment, PoseClip, PoseFrame, SceneKind, SkeletonLayout, SubjectId,
};
use crate::scene_regions::{nonsocial_proxemics, SceneRegions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pool {
    Avg,
    Max,
}

impl Pool {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "avg" | "mean" => Some(Pool::Avg),
            "max" => Some(Pool::Max),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Pool::Avg => "avg",
            Pool::Max => "max",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractConfig {
    pub layout: SkeletonLayout,
    pub t: usize,
    pub stride: usize,
    pub n_max: usize,
    pub width: f64,
    pub height: f64,
    pub pool: Pool,
    /// Re-associate ids across frames when set.
    pub track_max_jump: Option<f64>,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            layout: SkeletonLayout::coco18(),
            t: 15,
            stride: 15,
            n_max: 10,
            width: 640.0,
            height: 480.0,
            pool: Pool::Avg,
            track_max_jump: None,
        }
    }
}

/// Descriptors of one subject in one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub clip_id: usize,
    pub subject_id: SubjectId,
    /// Frame indices covered by the clip.
    pub frames: Vec<usize>,
    /// Indexed by [`Stream::index`].
    pub streams: [Option<DescriptorTensor>; 3],
}

impl Sample {
    pub fn get(&self, s: Stream) -> Option<&DescriptorTensor> {
        self.streams[s.index()].as_ref()
    }
}

/// Repair, optionally re-track, and window a pose stream.
pub fn prepare_clips(frames: &[PoseFrame], cfg: &ExtractConfig) -> Result<Vec<PoseClip>> {
    cfg.layout.validate()?;
    let mut frames = repair_frames(frames, &cfg.layout.topology)?;
    if let Some(jump) = cfg.track_max_jump {
        frames = associate_tracks(&frames, jump);
    }
    window(&frames, cfg.t, cfg.stride)
}

pub fn scene_kind_of(frames: &[PoseFrame]) -> Result<SceneKind> {
    let first = frames.first().ok_or(Error::Empty("pose stream has no frames"))?;
    if let Some(f) = frames.iter().find(|f| f.scene_kind != first.scene_kind) {
        return Err(Error::Schema(format!(
            "frame {} is {}, stream started as {}",
            f.frame_index, f.scene_kind, first.scene_kind
        )));
    }
    Ok(first.scene_kind)
}

/// Check that every input a stream needs is available.
pub fn check_stream_inputs(kind: SceneKind, streams: &[Stream], has_groups: bool, has_regions: bool) -> Result<()> {
    for s in streams {
        match (s, kind) {
            (Stream::Group, SceneKind::Nonsocial) => {
                return Err(Error::Invalid("group stream undefined for nonsocial scenes".into()))
            }
            (Stream::Group, SceneKind::Social) if !has_groups => {
                return Err(Error::Config("group stream needs a group file".into()))
            }
            (Stream::Prox, SceneKind::Nonsocial) if !has_regions => {
                return Err(Error::Config(
                    "prox stream of a nonsocial scene needs a region file (run `regions` first)".into(),
                ))
            }
            _ => {}
        }
    }
    Ok(())
}

/// Members of `subject`'s group at the clip's first frame, restricted to the
/// clip's subjects; a singleton when ungrouped.
pub fn clip_group(clip: &PoseClip, subject: SubjectId, groups: &[GroupAssignment]) -> Vec<SubjectId> {
    let first = clip.frames[0].frame_index;
    let members: Option<&BTreeSet<SubjectId>> =
        groups.iter().find(|g| g.frame_index == first).and_then(|g| g.group_of(subject));
    match members {
        Some(m) => m.iter().copied().filter(|id| clip.subject_ids.contains(id)).collect(),
        None => vec![subject],
    }
}

/// One [`Sample`] per (clip, subject) with the requested streams.
pub fn extract(
    frames: &[PoseFrame],
    groups: Option<&[GroupAssignment]>,
    regions: Option<&SceneRegions>,
    streams: &[Stream],
    cfg: &ExtractConfig,
) -> Result<Vec<Sample>> {
    let kind = scene_kind_of(frames)?;
    check_stream_inputs(kind, streams, groups.is_some(), regions.is_some())?;
    let clips = prepare_clips(frames, cfg)?;
    let prox_cfg = ProxemicsConfig::for_scene(cfg.n_max, cfg.width, cfg.height);
    let refs = &cfg.layout.reference_joints;

    let per_clip = clips.par_iter().map(|clip| -> Result<Vec<Sample>> {
        let mut out = Vec::new();
        let persons: BTreeMap<SubjectId, DescriptorTensor> = clip
            .subject_ids
            .iter()
            .map(|&id| person_descriptor(clip, id, refs).map(|d| (id, d)))
            .collect::<Result<_>>()?;
        for &id in &clip.subject_ids {
            let mut sample = Sample {
                clip_id: clip.clip_id,
                subject_id: id,
                frames: clip.frames.iter().map(|f| f.frame_index).collect(),
                streams: [None, None, None],
            };
            for &s in streams {
                let tensor = match s {
                    Stream::Pers => persons[&id].clone(),
                    Stream::Group => {
                        let members: Vec<DescriptorTensor> =
                            clip_group(clip, id, groups.unwrap_or(&[])).iter().map(|m| persons[m].clone()).collect();
                        match cfg.pool {
                            Pool::Avg => group_average_pool(&members)?,
                            Pool::Max => group_max_pool(&members)?,
                        }
                    }
                    Stream::Prox => match kind {
                        SceneKind::Social => social_proxemics(clip, id, &cfg.layout, prox_cfg)?,
                        SceneKind::Nonsocial => nonsocial_proxemics(
                            clip,
                            id,
                            &cfg.layout,
                            regions.ok_or_else(|| Error::Config("missing regions".into()))?,
                        )?,
                    },
                };
                sample.streams[s.index()] = Some(tensor);
            }
            out.push(sample);
        }
        Ok(out)
    });
    Ok(per_clip.collect::<Result<Vec<_>>>()?.concat())
}

pub const ARCHIVE_HEADER: &str = "index,clip_id,subject_id,stream,tag,frames";

/// PCT1 stream with one tensor per (sample, stream) plus its manifest CSV.
pub fn write_archive(samples: &[Sample]) -> Result<(Vec<u8>, String)> {
    let mut bytes = Vec::new();
    let mut manifest = String::from(ARCHIVE_HEADER);
    manifest.push('\n');
    let mut index = 0;
    for s in samples {
        for stream in Stream::ALL {
            let Some(t) = s.get(stream) else { continue };
            let (h, w, c) = t.shape();
            PctTensor::f32(&[h, w, c], t.data.iter().copied())?.write_to(&mut bytes)?;
            let frames: Vec<String> = s.frames.iter().map(usize::to_string).collect();
            manifest.push_str(&format!(
                "{index},{},{},{},{},{}\n",
                s.clip_id,
                s.subject_id,
                stream.name(),
                t.stream.name(),
                frames.join(";")
            ));
            index += 1;
        }
    }
    Ok((bytes, manifest))
}

pub fn read_archive(pct: &[u8], manifest: &str) -> Result<Vec<Sample>> {
    let tensors = PctTensor::read_all(pct)?;
    let mut samples: BTreeMap<(usize, SubjectId), Sample> = BTreeMap::new();
    let mut rows = 0;
    for (i, line) in manifest.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Parse { line: i + 1, msg: msg.to_string() };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad("expected 6 fields"));
        }
        let index: usize = f[0].parse().map_err(|_| bad("bad index"))?;
        let clip_id: usize = f[1].parse().map_err(|_| bad("bad clip_id"))?;
        let subject_id: SubjectId = f[2].parse().map_err(|_| bad("bad subject_id"))?;
        let stream = Stream::parse(f[3]).ok_or_else(|| bad("unknown stream"))?;
        let tag = StreamTag::parse(f[4]).ok_or_else(|| bad("unknown tag"))?;
        let frames = f[5]
            .split(';')
            .map(|v| v.parse::<usize>().map_err(|_| bad("bad frame list")))
            .collect::<Result<Vec<_>>>()?;
        let t = tensors.get(index).ok_or_else(|| Error::Schema(format!("manifest index {index} beyond archive")))?;
        let dims: Vec<usize> = t.dims.iter().map(|&d| d as usize).collect();
        let [h, w, c] = dims[..] else {
            return Err(Error::Schema(format!("tensor {index} has rank {}", dims.len())));
        };
        let channels: &[&str] = if c == 3 { &CYL_CHANNELS } else { &PROX_CHANNELS };
        let data =
            Array3::from_shape_vec((h, w, c), t.as_f64()).map_err(|e| Error::Schema(format!("tensor {index}: {e}")))?;
        let entry = samples.entry((clip_id, subject_id)).or_insert_with(|| Sample {
            clip_id,
            subject_id,
            frames: frames.clone(),
            streams: [None, None, None],
        });
        entry.streams[stream.index()] = Some(DescriptorTensor::new(data, tag, channels)?);
        rows += 1;
    }
    if rows != tensors.len() {
        return Err(Error::Schema(format!("manifest lists {rows} tensors, archive holds {}", tensors.len())));
    }
    Ok(samples.into_values().collect())
}

/// Per-frame mean absolute descriptor value of each stream.
pub fn trace(sample: &Sample) -> Vec<(usize, [Option<f64>; 3])> {
    let t = sample.frames.len();
    let mut out: Vec<(usize, [Option<f64>; 3])> = sample.frames.iter().map(|&f| (f, [None; 3])).collect();
    for s in Stream::ALL {
        let Some(tensor) = sample.get(s) else { continue };
        let (h, w, c) = tensor.shape();
        let blocks = h / t.max(1);
        for (f, row) in out.iter_mut().enumerate() {
            let mut sum = 0.0;
            for b in 0..blocks {
                for col in 0..w {
                    for ch in 0..c {
                        sum += tensor.data[[b * t + f, col, ch]].abs();
                    }
                }
            }
            row.1[s.index()] = Some(sum / (blocks * w * c) as f64);
        }
    }
    out
}

pub fn trace_csv(sample: &Sample) -> String {
    let mut s = String::from("frame,d_pers,d_group,d_prox\n");
    for (frame, v) in trace(sample) {
        let cells: Vec<String> = v.iter().map(|x| x.map(|x| format!("{x}")).unwrap_or_default()).collect();
        s.push_str(&format!("{frame},{}\n", cells.join(",")));
    }
    s
}

/// Class index per subject and the class names.
#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    pub by_subject: BTreeMap<SubjectId, usize>,
    pub class_names: Vec<String>,
}

impl Labels {
    pub fn classes(&self) -> usize {
        self.class_names.len()
    }
}

/// Personality types from raw trait scores: normalize, cluster into three,
/// name by the E/N rule.
pub fn type_labels(raw: &[RawScores]) -> Result<(Labels, Clustering)> {
    let scores = normalize_traits(raw)?;
    let clustering = cluster_types(&scores, 3)?;
    if let Some(note) = &clustering.note {
        return Err(Error::Invalid(format!("type clustering degenerate: {note}")));
    }
    let names = name_types(&clustering, &scores)?;
    let by_subject = clustering.assignments.iter().map(|&(id, c)| (id, names[c].index())).collect();
    let class_names = TypeLabel::ALL.iter().map(|t| t.name().to_string()).collect();
    Ok((Labels { by_subject, class_names }, clustering))
}

/// LOW/HIGH median split of one trait.
pub fn trait_labels(raw: &[RawScores], t: Trait) -> Result<Labels> {
    let scores = normalize_traits(raw)?;
    let levels = median_binarize(&scores, t)?;
    let by_subject = scores.iter().zip(levels).map(|(s, l)| (s.subject_id, usize::from(l == Level::High))).collect();
    Ok(Labels { by_subject, class_names: vec!["low".into(), "high".into()] })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    KFold(usize),
    Loso,
}

impl Protocol {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "loso" => Some(Protocol::Loso),
            "cv10" => Some(Protocol::KFold(10)),
            _ => s.strip_prefix("cv").and_then(|k| k.parse().ok()).map(Protocol::KFold),
        }
    }

    pub fn name(self) -> String {
        match self {
            Protocol::KFold(k) => format!("cv{k}"),
            Protocol::Loso => "loso".into(),
        }
    }

    pub fn folds(self, subjects: &[SubjectId], seed: u64) -> Result<Vec<Fold>> {
        match self {
            Protocol::KFold(k) => kfold_split(subjects, k, seed),
            Protocol::Loso => loso_split(subjects),
        }
    }
}

/// Descriptor combinations compared in the social ablation.
pub fn social_ablation() -> Vec<Vec<Stream>> {
    use Stream::*;
    vec![vec![Pers], vec![Group, Prox], vec![Pers, Prox], vec![Pers, Group], vec![Pers, Group, Prox]]
}

/// Descriptor combinations available without a group stream.
pub fn nonsocial_ablation() -> Vec<Vec<Stream>> {
    vec![vec![Stream::Pers], vec![Stream::Pers, Stream::Prox]]
}

pub fn combo_name(streams: &[Stream]) -> String {
    streams.iter().map(|s| s.name()).collect::<Vec<_>>().join("+")
}

pub fn parse_combo(s: &str) -> Result<Vec<Stream>> {
    let mut out: Vec<Stream> = s
        .split('+')
        .map(|p| Stream::parse(p).ok_or_else(|| Error::Config(format!("unknown stream {p:?}"))))
        .collect::<Result<_>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub backbone: BackboneConfig,
    pub head: HeadSpec,
    pub fusion: FusionMode,
    pub pca_target: f64,
    pub protocol: Protocol,
    /// Fold split and permutation test seed.
    pub seed: u64,
    pub combos: Vec<Vec<Stream>>,
    pub workers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            head: HeadSpec::default(),
            fusion: FusionMode::Concat,
            pca_target: 0.98,
            protocol: Protocol::KFold(10),
            seed: 0,
            combos: social_ablation(),
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub clip_id: usize,
    pub subject_id: SubjectId,
    pub truth: usize,
    pub pred: usize,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowResult {
    pub streams: Vec<Stream>,
    pub fold_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    /// Against the reference row; `None` on the reference row itself.
    pub p_value: Option<f64>,
    pub stars: &'static str,
    pub predictions: Vec<Prediction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub fusion: FusionMode,
    pub class_names: Vec<String>,
    pub rows: Vec<RowResult>,
    /// Row the others are tested against: the one with the most streams.
    pub reference: usize,
}

impl EvalReport {
    pub fn row(&self, streams: &[Stream]) -> Option<&RowResult> {
        self.rows.iter().find(|r| r.streams == streams)
    }

    pub fn to_csv(&self) -> String {
        let folds = self.rows.first().map_or(0, |r| r.fold_accuracy.len());
        let mut s = String::from("combination,protocol,fusion,mean_accuracy,p_value,stars");
        for f in 0..folds {
            s.push_str(&format!(",fold_{f}"));
        }
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{:.6},{},{}",
                combo_name(&r.streams),
                self.protocol.name(),
                self.fusion.name(),
                r.mean_accuracy,
                r.p_value.map(|p| format!("{p:.6}")).unwrap_or_default(),
                r.stars
            ));
            for a in &r.fold_accuracy {
                s.push_str(&format!(",{a:.6}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| combo_name(&r.streams).len()).max().unwrap_or(0).max(11);
        let mut s = format!("{:<width$}  {:>10}\n", "descriptors", self.protocol.name());
        for (i, r) in self.rows.iter().enumerate() {
            let mark = if i == self.reference { " (ref)" } else { r.stars };
            s.push_str(&format!("{:<width$}  {:>9.2}%{}\n", combo_name(&r.streams), 100.0 * r.mean_accuracy, mark));
        }
        s.push_str("* p<0.05  ** p<0.01  *** p<0.001, paired sign-flip test over folds against (ref)\n");
        s
    }

    pub fn predictions_csv(&self, row: &RowResult) -> String {
        let mut s = String::from("clip_id,subject_id,true_label,pred_label");
        for c in 0..self.class_names.len() {
            s.push_str(&format!(",p_{c}"));
        }
        s.push('\n');
        for p in &row.predictions {
            s.push_str(&format!(
                "{},{},{},{}",
                p.clip_id, p.subject_id, self.class_names[p.truth], self.class_names[p.pred]
            ));
            for v in &p.probs {
                s.push_str(&format!(",{v:.6}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Encoded vectors of every sample for one fold, per stream.
type Encoded = Vec<[Option<Vec<f64>>; 3]>;

fn encode_fold(samples: &[Sample], train: &[usize], streams: &[Stream], model: &BackboneModel) -> Result<Encoded> {
    let mut out: Encoded = vec![[None, None, None]; samples.len()];
    for &s in streams {
        let train_tensors: Vec<DescriptorTensor> = train.iter().filter_map(|&i| samples[i].get(s).cloned()).collect();
        let calib = fit_calibration(&train_tensors)?;
        for (i, sample) in samples.iter().enumerate() {
            if let Some(t) = sample.get(s) {
                out[i][s.index()] = Some(encode(t, &calib, model)?);
            }
        }
    }
    Ok(out)
}

fn standardized(train: &[Vec<f64>], test: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let st = Standardizer::fit(train)?;
    Ok((train.iter().map(|x| st.apply(x)).collect(), test.iter().map(|x| st.apply(x)).collect()))
}

fn pca_pair(train: &[Vec<f64>], test: &[Vec<f64>], target: f64) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let p = pca_fit(train, target)?;
    let tr = train.iter().map(|x| pca_transform(x, &p)).collect::<Result<Vec<_>>>()?;
    let te = test.iter().map(|x| pca_transform(x, &p)).collect::<Result<Vec<_>>>()?;
    Ok((tr, te))
}

fn classify(
    train: &[Vec<f64>],
    ys: &[usize],
    test: &[Vec<f64>],
    classes: usize,
    spec: &HeadSpec,
) -> Result<Vec<Vec<f64>>> {
    let (tr, te) = standardized(train, test)?;
    let head = head_train(&tr, ys, classes, spec)?;
    te.iter().map(|x| crate::head::head_predict(x, &head)).collect()
}

/// Test-set class probabilities for one stream combination.
fn run_combo(
    bundles: &[FeatureBundle],
    train: &[usize],
    test: &[usize],
    ys: &[usize],
    classes: usize,
    cfg: &EvalConfig,
) -> Result<Vec<Vec<f64>>> {
    let column = |idx: &[usize], f: &dyn Fn(&FeatureBundle) -> Result<Vec<f64>>| {
        idx.iter().map(|&i| f(&bundles[i])).collect::<Result<Vec<_>>>()
    };
    let streams = bundles[test[0]].present();
    let stream_of = |s: Stream| {
        move |b: &FeatureBundle| {
            b.get(s).map(<[f64]>::to_vec).ok_or_else(|| Error::Invalid(format!("sample lacks the {} stream", s.name())))
        }
    };
    match cfg.fusion {
        FusionMode::Concat => {
            let tr = column(train, &fuse_concat)?;
            let te = column(test, &fuse_concat)?;
            classify(&tr, ys, &te, classes, &cfg.head)
        }
        FusionMode::PcaConcat => {
            let (tr, te) = standardized(&column(train, &fuse_concat)?, &column(test, &fuse_concat)?)?;
            let (tr, te) = pca_pair(&tr, &te, cfg.pca_target)?;
            classify(&tr, ys, &te, classes, &cfg.head)
        }
        FusionMode::PcaPerStream => {
            let mut tr = vec![Vec::new(); train.len()];
            let mut te = vec![Vec::new(); test.len()];
            for &s in &streams {
                let (a, b) = standardized(&column(train, &stream_of(s))?, &column(test, &stream_of(s))?)?;
                let (a, b) = pca_pair(&a, &b, cfg.pca_target)?;
                tr.iter_mut().zip(a).for_each(|(acc, v)| acc.extend(v));
                te.iter_mut().zip(b).for_each(|(acc, v)| acc.extend(v));
            }
            classify(&tr, ys, &te, classes, &cfg.head)
        }
        FusionMode::DecisionSum => {
            let per_stream = streams
                .iter()
                .map(|&s| {
                    classify(&column(train, &stream_of(s))?, ys, &column(test, &stream_of(s))?, classes, &cfg.head)
                })
                .collect::<Result<Vec<_>>>()?;
            (0..test.len())
                .map(|i| decision_fuse_sum(&per_stream.iter().map(|p| p[i].clone()).collect::<Vec<_>>()))
                .collect()
        }
    }
}

/// Accuracy and predictions of every combination on one fold.
fn run_fold(
    samples: &[Sample],
    labels: &Labels,
    fold: &Fold,
    model: &BackboneModel,
    cfg: &EvalConfig,
) -> Result<Vec<(f64, Vec<Prediction>)>> {
    let train: Vec<usize> = (0..samples.len()).filter(|&i| !fold.is_test(samples[i].subject_id)).collect();
    let test: Vec<usize> = (0..samples.len()).filter(|&i| fold.is_test(samples[i].subject_id)).collect();
    audit_fold(fold, train.iter().map(|&i| samples[i].subject_id))?;
    if test.is_empty() {
        return Err(Error::Invalid(format!("fold with test subjects {:?} has no clips", fold.test)));
    }
    let needed: BTreeSet<Stream> = cfg.combos.iter().flatten().copied().collect();
    let encoded = encode_fold(samples, &train, &needed.into_iter().collect::<Vec<_>>(), model)?;
    let ys: Vec<usize> = train.iter().map(|&i| labels.by_subject[&samples[i].subject_id]).collect();

    cfg.combos
        .iter()
        .map(|combo| {
            let bundles: Vec<FeatureBundle> = samples
                .iter()
                .zip(&encoded)
                .map(|(s, e)| {
                    FeatureBundle { subject_id: s.subject_id, clip_id: s.clip_id, streams: e.clone() }.select(combo)
                })
                .collect();
            if let Some(b) = bundles.iter().find(|b| b.present() != *combo) {
                return Err(Error::Invalid(format!(
                    "clip {} subject {} lacks streams of {}",
                    b.clip_id,
                    b.subject_id,
                    combo_name(combo)
                )));
            }
            let probs = run_combo(&bundles, &train, &test, &ys, labels.classes(), cfg)?;
            let preds: Vec<Prediction> = test
                .iter()
                .zip(probs)
                .map(|(&i, p)| Prediction {
                    clip_id: samples[i].clip_id,
                    subject_id: samples[i].subject_id,
                    truth: labels.by_subject[&samples[i].subject_id],
                    pred: argmax(&p),
                    probs: p,
                })
                .collect();
            let acc = preds.iter().filter(|p| p.pred == p.truth).count() as f64 / preds.len() as f64;
            Ok((acc, preds))
        })
        .collect()
}

/// Every subject with clips must have a label.
pub fn audit_labels(samples: &[Sample], labels: &Labels) -> Result<Vec<SubjectId>> {
    let subjects: BTreeSet<SubjectId> = samples.iter().map(|s| s.subject_id).collect();
    if let Some(id) = subjects.iter().find(|id| !labels.by_subject.contains_key(id)) {
        return Err(Error::Audit(format!("subject {id} has clips but no label")));
    }
    Ok(subjects.into_iter().collect())
}

/// Run `f` on a rayon pool of `workers` threads (0 = one per core).
pub fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Cross-validated accuracy of every configured stream combination.
pub fn evaluate(samples: &[Sample], labels: &Labels, cfg: &EvalConfig) -> Result<EvalReport> {
    if cfg.combos.is_empty() {
        return Err(Error::Config("no descriptor combinations to evaluate".into()));
    }
    let subjects = audit_labels(samples, labels)?;
    let folds = cfg.protocol.folds(&subjects, cfg.seed)?;
    let model = BackboneModel::new(cfg.backbone)?;
    let per_fold: Vec<Vec<(f64, Vec<Prediction>)>> = with_pool(cfg.workers, || {
        folds.par_iter().map(|fold| run_fold(samples, labels, fold, &model, cfg)).collect::<Result<Vec<_>>>()
    })??;

    let reference =
        (0..cfg.combos.len()).max_by_key(|&i| (cfg.combos[i].len(), std::cmp::Reverse(i))).expect("non-empty combos");
    let mut rows: Vec<RowResult> = cfg
        .combos
        .iter()
        .enumerate()
        .map(|(c, combo)| {
            let fold_accuracy: Vec<f64> = per_fold.iter().map(|f| f[c].0).collect();
            let mut predictions: Vec<Prediction> = per_fold.iter().flat_map(|f| f[c].1.clone()).collect();
            predictions.sort_by_key(|p| (p.subject_id, p.clip_id));
            RowResult {
                streams: combo.clone(),
                mean_accuracy: mean(&fold_accuracy),
                fold_accuracy,
                p_value: None,
                stars: "",
                predictions,
            }
        })
        .collect();
    let ref_acc = rows[reference].fold_accuracy.clone();
    for (i, row) in rows.iter_mut().enumerate() {
        if i != reference {
            let sig = significance(&ref_acc, &row.fold_accuracy, cfg.seed)?;
            row.p_value = Some(sig.p_value);
            row.stars = sig.stars;
        }
    }
    Ok(EvalReport {
        protocol: cfg.protocol,
        fusion: cfg.fusion,
        class_names: labels.class_names.clone(),
        rows,
        reference,
    })
}

/// A head trained on every sample, with what it needs to run on new clips.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub head: Head,
    pub streams: Vec<Stream>,
    /// One per stream, in `streams` order.
    pub calibrations: Vec<CalibrationRange>,
    /// Present for the two-layer head.
    pub standardizer: Option<Standardizer>,
    pub backbone: BackboneConfig,
    pub class_names: Vec<String>,
}

fn stream_maps(
    sample: &Sample,
    streams: &[Stream],
    calibs: &[CalibrationRange],
    model: &BackboneModel,
) -> Result<Vec<FeatureMaps>> {
    streams
        .iter()
        .zip(calibs)
        .map(|(&s, c)| {
            let t = sample.get(s).ok_or_else(|| {
                Error::Invalid(format!(
                    "clip {} subject {} lacks the {} stream",
                    sample.clip_id,
                    sample.subject_id,
                    s.name()
                ))
            })?;
            backbone_forward(&quantize_and_resize(t, c)?, model)
        })
        .collect()
}

/// Train the two-layer head (`linear = false`) on concatenated pooled
/// features, or the linear CAM head on globally averaged maps.
pub fn train_model(
    samples: &[Sample],
    labels: &Labels,
    streams: &[Stream],
    linear: bool,
    backbone: BackboneConfig,
    spec: &HeadSpec,
) -> Result<TrainedModel> {
    if streams.is_empty() {
        return Err(Error::Config("no streams to train on".into()));
    }
    audit_labels(samples, labels)?;
    let model = BackboneModel::new(backbone)?;
    let calibrations = streams
        .iter()
        .map(|&s| {
            let ts: Vec<DescriptorTensor> = samples.iter().filter_map(|x| x.get(s).cloned()).collect();
            fit_calibration(&ts)
        })
        .collect::<Result<Vec<_>>>()?;
    let ys: Vec<usize> = samples.iter().map(|s| labels.by_subject[&s.subject_id]).collect();
    let maps = samples.iter().map(|s| stream_maps(s, streams, &calibrations, &model)).collect::<Result<Vec<_>>>()?;
    let (head, standardizer) = if linear {
        let xs: Vec<Vec<f64>> = maps.iter().map(|m| global_average(m)).collect();
        (Head::Linear(linear_head_train(&xs, &ys, labels.classes(), spec)?), None)
    } else {
        let xs = maps
            .iter()
            .map(|m| m.iter().map(crate::backbone::temporal_mean_pool).collect::<Result<Vec<_>>>().map(|v| v.concat()))
            .collect::<Result<Vec<_>>>()?;
        let st = Standardizer::fit(&xs)?;
        let xs: Vec<Vec<f64>> = xs.iter().map(|x| st.apply(x)).collect();
        (Head::Mlp(head_train(&xs, &ys, labels.classes(), spec)?), Some(st))
    };
    Ok(TrainedModel {
        head,
        streams: streams.to_vec(),
        calibrations,
        standardizer,
        backbone,
        class_names: labels.class_names.clone(),
    })
}

impl TrainedModel {
    pub fn predict(&self, sample: &Sample) -> Result<Vec<f64>> {
        let model = BackboneModel::new(self.backbone)?;
        let maps = stream_maps(sample, &self.streams, &self.calibrations, &model)?;
        let x = match (&self.head, &self.standardizer) {
            (Head::Linear(_), _) => global_average(&maps),
            (Head::Mlp(_), Some(st)) => {
                st.apply(&maps.iter().map(crate::backbone::temporal_mean_pool).collect::<Result<Vec<_>>>()?.concat())
            }
            (Head::Mlp(_), None) => return Err(Error::Model("two-layer head without standardizer".into())),
        };
        self.head.predict(&x)
    }

    /// Class activation map of one sample; needs the linear head on pers and/or group.
    pub fn cam(&self, sample: &Sample, class: usize) -> Result<Array2<f64>> {
        if !matches!(self.head, Head::Linear(_)) {
            return Err(Error::UnsupportedHead);
        }
        if self.streams.contains(&Stream::Prox) {
            return Err(Error::Model("activation maps cover the pers and group streams only".into()));
        }
        let model = BackboneModel::new(self.backbone)?;
        cam(&stream_maps(sample, &self.streams, &self.calibrations, &model)?, &self.head, class)
    }

    pub fn class_index(&self, name: &str) -> Result<usize> {
        self.class_names
            .iter()
            .position(|c| c == name)
            .or_else(|| name.parse().ok().filter(|&i: &usize| i < self.class_names.len()))
            .ok_or_else(|| Error::Config(format!("unknown class {name:?}; model has {:?}", self.class_names)))
    }

    /// `key = value` header, a `---` line, then PCT1 parameter blocks.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut kv = vec![
            ("variant".to_string(), self.head.variant().to_string()),
            ("streams".into(), combo_name(&self.streams)),
            ("classes".into(), self.class_names.join(",")),
            ("backbone_widths".into(), self.backbone.widths.map(|w| w.to_string()).join(",")),
            ("backbone_maps".into(), self.backbone.maps.to_string()),
            ("backbone_seed".into(), self.backbone.seed.to_string()),
        ];
        let mut blocks = Vec::new();
        match &self.head {
            Head::Mlp(m) => {
                kv.push(("seed".into(), m.seed.to_string()));
                kv.push(("input".into(), m.w1.ncols().to_string()));
                kv.push(("hidden".into(), m.hidden().to_string()));
                let st = self.standardizer.as_ref().ok_or_else(|| Error::Model("missing standardizer".into()))?;
                blocks.push(PctTensor::f32(&[st.mean.len()], st.mean.iter().copied())?);
                blocks.push(PctTensor::f32(&[st.scale.len()], st.scale.iter().copied())?);
                blocks.push(PctTensor::f32(&[m.w1.nrows(), m.w1.ncols()], m.w1.iter().copied())?);
                blocks.push(PctTensor::f32(&[m.b1.len()], m.b1.iter().copied())?);
                blocks.push(PctTensor::f32(&[m.w2.nrows(), m.w2.ncols()], m.w2.iter().copied())?);
                blocks.push(PctTensor::f32(&[m.b2.len()], m.b2.iter().copied())?);
            }
            Head::Linear(m) => {
                kv.push(("seed".into(), m.seed.to_string()));
                kv.push(("input".into(), m.weights.ncols().to_string()));
                blocks.push(PctTensor::f32(&[m.weights.nrows(), m.weights.ncols()], m.weights.iter().copied())?);
            }
        }
        for (s, c) in self.streams.iter().zip(&self.calibrations) {
            let ranges: Vec<String> = c.ranges.iter().map(|(lo, hi)| format!("{lo:?}:{hi:?}")).collect();
            kv.push((format!("calibration.{}", s.name()), ranges.join(",")));
        }
        let mut out = String::new();
        for (k, v) in kv {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out.push_str("---\n");
        let mut bytes = out.into_bytes();
        for b in blocks {
            b.write_to(&mut bytes)?;
        }
        Ok(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        const SEP: &[u8] = b"---\n";
        let split = bytes
            .windows(SEP.len())
            .position(|w| w == SEP)
            .ok_or_else(|| Error::Model("model file lacks the header separator".into()))?;
        let header =
            std::str::from_utf8(&bytes[..split]).map_err(|_| Error::Model("model header is not UTF-8".into()))?;
        let kv = KvMap::parse(header).map_err(|e| Error::Model(e.to_string()))?;
        let model_err = |e: Error| Error::Model(e.to_string());
        let blocks = PctTensor::read_all(&bytes[split + SEP.len()..]).map_err(model_err)?;
        let streams = parse_combo(kv.get_str("streams").unwrap_or("")).map_err(model_err)?;
        let class_names: Vec<String> = kv.list("classes").map_err(model_err)?.unwrap_or_default();
        let widths: Vec<usize> = kv.list("backbone_widths").map_err(model_err)?.unwrap_or_default();
        let backbone = BackboneConfig {
            widths: widths.try_into().map_err(|_| Error::Model("backbone_widths needs 4 values".into()))?,
            maps: kv.require("backbone_maps").map_err(model_err)?,
            seed: kv.require("backbone_seed").map_err(model_err)?,
        };
        let calibrations = streams
            .iter()
            .map(|s| {
                let raw: Vec<String> =
                    kv.list(&format!("calibration.{}", s.name())).map_err(model_err)?.unwrap_or_default();
                let ranges = raw
                    .iter()
                    .map(|r| {
                        let (lo, hi) = r.split_once(':').ok_or_else(|| Error::Model(format!("bad range {r:?}")))?;
                        Ok((
                            lo.parse().map_err(|_| Error::Model(format!("bad range {r:?}")))?,
                            hi.parse().map_err(|_| Error::Model(format!("bad range {r:?}")))?,
                        ))
                    })
                    .collect::<Result<Vec<(f64, f64)>>>()?;
                Ok(CalibrationRange { ranges })
            })
            .collect::<Result<Vec<_>>>()?;
        let seed: u64 = kv.require("seed").map_err(model_err)?;
        let matrix = |t: &PctTensor| -> Result<Array2<f64>> {
            match t.dims[..] {
                [r, c] => Array2::from_shape_vec((r as usize, c as usize), t.as_f64())
                    .map_err(|e| Error::Model(e.to_string())),
                _ => Err(Error::Model(format!("expected a matrix, got dims {:?}", t.dims))),
            }
        };
        let (head, standardizer) = match kv.get_str("variant") {
            Some("mlp") => {
                let [mean, scale, w1, b1, w2, b2] = &blocks[..] else {
                    return Err(Error::Model(format!("two-layer head needs 6 blocks, found {}", blocks.len())));
                };
                let st = Standardizer { mean: mean.as_f64(), scale: scale.as_f64() };
                let m = HeadModel {
                    w1: matrix(w1)?,
                    b1: b1.as_f64().into(),
                    w2: matrix(w2)?,
                    b2: b2.as_f64().into(),
                    seed,
                    loss_trace: Vec::new(),
                };
                if m.w1.nrows() != m.b1.len()
                    || m.w2.ncols() != m.b1.len()
                    || m.w2.nrows() != m.b2.len()
                    || st.mean.len() != m.w1.ncols()
                {
                    return Err(Error::Model("inconsistent head parameter shapes".into()));
                }
                (Head::Mlp(m), Some(st))
            }
            Some("linear") => {
                let [w] = &blocks[..] else {
                    return Err(Error::Model(format!("linear head needs 1 block, found {}", blocks.len())));
                };
                (Head::Linear(LinearCamHead { weights: matrix(w)?, seed, loss_trace: Vec::new() }), None)
            }
            other => return Err(Error::Model(format!("unknown head variant {other:?}"))),
        };
        Ok(Self { head, streams, calibrations, standardizer, backbone, class_names })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose_io::{Point, Skeleton};

    fn frames(kind: SceneKind, n: usize, ids: &[SubjectId]) -> Vec<PoseFrame> {
        (0..n)
            .map(|f| PoseFrame {
                frame_index: f,
                scene_kind: kind,
                skeletons: ids
                    .iter()
                    .map(|&id| {
                        Skeleton::detected(
                            id,
                            (0..18)
                                .map(|j| {
                                    Point::new(
                                        100.0 * id as f64 + j as f64 + f as f64,
                                        50.0 + (2.0 + id as f64) * j as f64,
                                    )
                                })
                                .collect(),
                        )
                    })
                    .collect(),
            })
            .collect()
    }

    fn cfg() -> ExtractConfig {
        ExtractConfig { t: 4, stride: 4, ..Default::default() }
    }

    #[test]
    fn one_person_tensor_per_clip_and_subject() {
        let s = extract(&frames(SceneKind::Social, 8, &[1, 2, 3]), None, None, &[Stream::Pers], &cfg()).unwrap();
        assert_eq!(s.len(), 6);
        assert!(s.iter().all(|x| x.get(Stream::Pers).is_some() && x.get(Stream::Group).is_none()));
    }

    #[test]
    fn ungrouped_subject_group_equals_person() {
        let groups = vec![GroupAssignment { frame_index: 0, groups: vec![[2, 3].into_iter().collect()] }];
        let s = extract(
            &frames(SceneKind::Social, 4, &[1, 2, 3]),
            Some(&groups),
            None,
            &[Stream::Pers, Stream::Group],
            &cfg(),
        )
        .unwrap();
        let one = s.iter().find(|x| x.subject_id == 1).unwrap();
        assert_eq!(one.get(Stream::Group).unwrap().data, one.get(Stream::Pers).unwrap().data);
        let two = s.iter().find(|x| x.subject_id == 2).unwrap();
        assert_ne!(two.get(Stream::Group).unwrap().data, two.get(Stream::Pers).unwrap().data);
    }

    #[test]
    fn nonsocial_group_rejected() {
        let err =
            extract(&frames(SceneKind::Nonsocial, 4, &[1]), Some(&[]), None, &[Stream::Group], &cfg()).unwrap_err();
        assert_eq!(err.to_string(), Error::Invalid("group stream undefined for nonsocial scenes".into()).to_string());
    }

    #[test]
    fn archive_round_trip() {
        let s =
            extract(&frames(SceneKind::Social, 8, &[1, 2]), None, None, &[Stream::Pers, Stream::Prox], &cfg()).unwrap();
        let (bytes, manifest) = write_archive(&s).unwrap();
        let back = read_archive(&bytes, &manifest).unwrap();
        assert_eq!(back.len(), s.len());
        for (a, b) in s.iter().zip(&back) {
            assert_eq!((a.clip_id, a.subject_id, &a.frames), (b.clip_id, b.subject_id, &b.frames));
            let (x, y) = (a.get(Stream::Prox).unwrap(), b.get(Stream::Prox).unwrap());
            assert_eq!(x.stream, y.stream);
            assert!(x.data.iter().zip(&y.data).all(|(u, v)| (u - v).abs() <= 1e-3 * u.abs().max(1.0)));
        }
    }

    #[test]
    fn static_trace_is_constant() {
        let mut f = frames(SceneKind::Social, 4, &[1, 2]);
        for fr in &mut f {
            *fr = PoseFrame { frame_index: fr.frame_index, ..frames(SceneKind::Social, 1, &[1, 2])[0].clone() };
        }
        let s = extract(&f, Some(&[]), None, &[Stream::Pers, Stream::Group, Stream::Prox], &cfg()).unwrap();
        let tr = trace(&s[0]);
        assert_eq!(tr.len(), 4);
        assert!(tr.iter().all(|(_, v)| *v == tr[0].1));
        assert!(trace_csv(&s[0]).starts_with("frame,d_pers,d_group,d_prox\n"));
    }

    #[test]
    fn protocol_names() {
        assert_eq!(Protocol::parse("cv10"), Some(Protocol::KFold(10)));
        assert_eq!(Protocol::parse("loso"), Some(Protocol::Loso));
        assert_eq!(Protocol::parse("cv5").unwrap().name(), "cv5");
        assert_eq!(parse_combo("prox+pers").unwrap(), vec![Stream::Pers, Stream::Prox]);
    }
}
