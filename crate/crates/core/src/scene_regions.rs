//! Nonsocial context: where in the scene do people use their arms?
//!
//! Arm tracklets (with whole-body motion removed) are histogrammed per grid
//! patch, patch centers weighted by motion energy are clustered with a
//! diagonal-covariance Gaussian mixture, and the resulting region centers
//! anchor the nonsocial proxemics descriptor.

use std::f64::consts::PI;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::descriptors::{cylindrical, DescriptorTensor, StreamTag, PROX_CHANNELS};
use crate::error::{Error, Result};
use crate::pose_io::{Point, PoseClip, SceneKind, SkeletonLayout, SubjectId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchGrid {
    pub width: f64,
    pub height: f64,
    pub rows: usize,
    pub cols: usize,
}

impl PatchGrid {
    pub fn new(width: f64, height: f64, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 || !(width > 0.0 && height > 0.0) {
            return Err(Error::Config(format!("bad grid {rows}x{cols} over {width}x{height}")));
        }
        Ok(Self { width, height, rows, cols })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Patch holding `p` and whether `p` had to be clamped into the grid.
    pub fn patch_of(&self, p: Point) -> (usize, bool) {
        let outside = !(0.0..=self.width).contains(&p.x) || !(0.0..=self.height).contains(&p.y);
        let cell = |v: f64, extent: f64, n: usize| {
            let i = (v / extent * n as f64).floor();
            if i.is_nan() || i < 0.0 {
                0
            } else {
                (i as usize).min(n - 1)
            }
        };
        let col = cell(p.x, self.width, self.cols);
        let row = cell(p.y, self.height, self.rows);
        (row * self.cols + col, outside)
    }

    pub fn center(&self, patch: usize) -> Point {
        let (row, col) = (patch / self.cols, patch % self.cols);
        Point::new(
            (col as f64 + 0.5) * self.width / self.cols as f64,
            (row as f64 + 0.5) * self.height / self.rows as f64,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackletConfig {
    pub orientation_bins: usize,
    pub magnitude_bins: usize,
    /// Residuals shorter than this are discarded.
    pub m_min: f64,
    /// Upper edge of the last magnitude bin (longer residuals land in it).
    pub m_max: f64,
}

impl Default for TrackletConfig {
    fn default() -> Self {
        Self { orientation_bins: 8, magnitude_bins: 3, m_min: 0.5, m_max: 50.0 }
    }
}

impl TrackletConfig {
    /// Orientation bins are centred on multiples of `2π / B`, bin 0 on 0 rad.
    pub fn orientation_bin(&self, theta: f64) -> usize {
        let b = self.orientation_bins as f64;
        let k = (theta / (2.0 * PI / b)).round().rem_euclid(b);
        (k as usize).min(self.orientation_bins - 1)
    }

    pub fn magnitude_bin(&self, m: f64) -> usize {
        let g = self.magnitude_bins;
        let frac = (m / self.m_min).ln() / (self.m_max / self.m_min).ln();
        ((frac * g as f64).floor().max(0.0) as usize).min(g - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackletHistogram {
    pub patch: usize,
    /// `orientation × magnitude`, row-major, magnitude-weighted counts.
    pub bins: Vec<f64>,
    pub support: usize,
}

impl TrackletHistogram {
    pub fn energy(&self) -> f64 {
        self.bins.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmMotionFeatures {
    pub histograms: Vec<TrackletHistogram>,
    /// Joint positions that fell outside the grid and were clamped.
    pub clamped: usize,
}

/// Histogram arm tracklets per patch after removing each subject's mean
/// body displacement.
pub fn arm_motion_features(
    clips: &[PoseClip],
    layout: &SkeletonLayout,
    grid: &PatchGrid,
    cfg: &TrackletConfig,
) -> Result<ArmMotionFeatures> {
    let nbins = cfg.orientation_bins * cfg.magnitude_bins;
    let mut histograms: Vec<TrackletHistogram> =
        (0..grid.len()).map(|patch| TrackletHistogram { patch, bins: vec![0.0; nbins], support: 0 }).collect();
    let mut clamped = 0;

    for clip in clips {
        if clip.scene_kind() != Some(SceneKind::Nonsocial) {
            return Err(Error::Invalid("arm motion features need nonsocial clips".into()));
        }
        for &id in &clip.subject_ids {
            for f in 0..clip.len().saturating_sub(1) {
                let a = clip.skeleton(f, id)?;
                let b = clip.skeleton(f + 1, id)?;
                let n = a.joints.len() as f64;
                let (mut bx, mut by) = (0.0, 0.0);
                for (p, q) in a.joints.iter().zip(&b.joints) {
                    bx += q.x - p.x;
                    by += q.y - p.y;
                }
                let (bx, by) = (bx / n, by / n);

                for &(elbow, wrist) in &layout.arms {
                    let (patch, out) = grid.patch_of(a.joints[wrist]);
                    if out {
                        clamped += 1;
                    }
                    for j in [elbow, wrist] {
                        let rx = (b.joints[j].x - a.joints[j].x) - bx;
                        let ry = (b.joints[j].y - a.joints[j].y) - by;
                        let c = cylindrical(Point::default(), Point::new(rx, ry));
                        if c.rho < cfg.m_min {
                            continue;
                        }
                        let bin = cfg.orientation_bin(c.theta) * cfg.magnitude_bins + cfg.magnitude_bin(c.rho);
                        let h = &mut histograms[patch];
                        h.bins[bin] += c.rho;
                        h.support += 1;
                    }
                }
            }
        }
    }
    Ok(ArmMotionFeatures { histograms, clamped })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmConfig {
    pub components: usize,
    pub seed: u64,
    pub var_floor: f64,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self { components: 6, seed: 0, var_floor: 1e-6, tolerance: 1e-6, max_iter: 200 }
    }
}

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    /// Weighted log-likelihood before each M-step.
    pub log_likelihood: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub model: GmmModel,
    /// `points × components`, from the final E-step.
    pub responsibilities: Vec<Vec<f64>>,
    /// Set when fewer points than requested components were supplied.
    pub reduced_from: Option<usize>,
}

impl GmmModel {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    fn log_joint(&self, x: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let mut lp = self.weights[k].ln();
            for ((&xi, &m), &v) in x.iter().zip(&self.means[k]).zip(&self.variances[k]) {
                let d = xi - m;
                lp -= 0.5 * ((2.0 * PI * v).ln() + d * d / v);
            }
            *o = lp;
        }
    }

    /// Posterior component probabilities for each point, and their
    /// weighted log-likelihood.
    pub fn e_step(&self, points: &[Vec<f64>], weights: &[f64]) -> (Vec<Vec<f64>>, f64) {
        let k = self.components();
        let mut ll = 0.0;
        let mut buf = vec![0.0; k];
        let resp = points
            .iter()
            .zip(weights)
            .map(|(x, &w)| {
                self.log_joint(x, &mut buf);
                let max = buf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = buf.iter().map(|&l| (l - max).exp()).sum();
                let lse = max + sum.ln();
                ll += w * lse;
                buf.iter().map(|&l| (l - lse).exp()).collect()
            })
            .collect();
        (resp, ll)
    }
}

fn weighted_pick(rng: &mut ChaCha8Rng, scores: &[f64]) -> Option<usize> {
    let total: f64 = scores.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let mut u = rng.gen::<f64>() * total;
    for (i, &s) in scores.iter().enumerate() {
        if s > 0.0 {
            if u < s {
                return Some(i);
            }
            u -= s;
        }
    }
    scores.iter().rposition(|&s| s > 0.0)
}

/// Fit a mixture by EM from a seeded k-means++ start.
pub fn fit_gmm(points: &[Vec<f64>], weights: &[f64], cfg: &GmmConfig) -> Result<GmmFit> {
    if points.len() != weights.len() {
        return Err(Error::Shape(format!("{} points, {} weights", points.len(), weights.len())));
    }
    if points.is_empty() {
        return Err(Error::Empty("no points to cluster"));
    }
    if cfg.components == 0 {
        return Err(Error::Config("GMM needs at least one component".into()));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::Invalid("GMM weights must be positive".into()));
    }
    let dim = points[0].len();
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape("GMM points of unequal dimension".into()));
    }
    let (k, reduced_from) =
        if points.len() < cfg.components { (points.len(), Some(cfg.components)) } else { (cfg.components, None) };

    let total_w: f64 = weights.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // k-means++ seeding, D² scores scaled by point weight
    let mut centers: Vec<usize> = vec![weighted_pick(&mut rng, weights).unwrap_or(0)];
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    while centers.len() < k {
        let scores: Vec<f64> = points
            .iter()
            .zip(weights)
            .map(|(p, &w)| {
                let d = centers.iter().map(|&c| sq(p, &points[c])).fold(f64::INFINITY, f64::min);
                w * d
            })
            .collect();
        let next = weighted_pick(&mut rng, &scores)
            .unwrap_or_else(|| (0..points.len()).find(|i| !centers.contains(i)).expect("k <= n"));
        centers.push(next);
    }

    let mut global_mean = vec![0.0; dim];
    for (p, &w) in points.iter().zip(weights) {
        for (m, &x) in global_mean.iter_mut().zip(p) {
            *m += w * x / total_w;
        }
    }
    let mut global_var = vec![0.0; dim];
    for (p, &w) in points.iter().zip(weights) {
        for ((v, &x), &m) in global_var.iter_mut().zip(p).zip(&global_mean) {
            *v += w * (x - m) * (x - m) / total_w;
        }
    }
    let init_var: Vec<f64> = global_var.iter().map(|&v| v.max(cfg.var_floor)).collect();

    let mut model = GmmModel {
        weights: vec![1.0 / k as f64; k],
        means: centers.iter().map(|&c| points[c].clone()).collect(),
        variances: vec![init_var; k],
        log_likelihood: Vec::new(),
    };

    let mut resp;
    loop {
        let (r, ll) = model.e_step(points, weights);
        resp = r;
        let gain = model.log_likelihood.last().map(|&prev| ll - prev);
        model.log_likelihood.push(ll);
        if gain.is_some_and(|g| g < cfg.tolerance) || model.log_likelihood.len() > cfg.max_iter {
            break;
        }

        for c in 0..k {
            let nk: f64 = resp.iter().zip(weights).map(|(r, &w)| w * r[c]).sum();
            if nk <= f64::MIN_POSITIVE {
                model.weights[c] = 0.0;
                continue;
            }
            model.weights[c] = nk / total_w;
            let mut mean = vec![0.0; dim];
            for ((p, r), &w) in points.iter().zip(&resp).zip(weights) {
                for (m, &x) in mean.iter_mut().zip(p) {
                    *m += w * r[c] * x;
                }
            }
            mean.iter_mut().for_each(|m| *m /= nk);
            let mut var = vec![0.0; dim];
            for ((p, r), &w) in points.iter().zip(&resp).zip(weights) {
                for ((v, &x), &m) in var.iter_mut().zip(p).zip(&mean) {
                    *v += w * r[c] * (x - m) * (x - m);
                }
            }
            var.iter_mut().for_each(|v| *v = (*v / nk).max(cfg.var_floor));
            model.means[c] = mean;
            model.variances[c] = var;
        }
        let wsum: f64 = model.weights.iter().sum();
        model.weights.iter_mut().for_each(|w| *w /= wsum);
    }

    Ok(GmmFit { model, responsibilities: resp, reduced_from })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub k: usize,
    pub weight: f64,
    pub cx: f64,
    pub cy: f64,
    pub var_x: f64,
    pub var_y: f64,
}

impl Region {
    pub fn center(&self) -> Point {
        Point::new(self.cx, self.cy)
    }
}

/// Region centers in canonical order (weight descending, then x ascending).
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRegions {
    pub regions: Vec<Region>,
}

impl SceneRegions {
    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn to_records(&self) -> String {
        self.regions.iter().map(|r| serde_json::to_string(r).expect("serializable") + "\n").collect()
    }

    pub fn from_records(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse { line: 0, msg: e.to_string() })?;
        let mut regions = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let r: Region = serde_json::from_str(line).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
            regions.push(r);
        }
        regions.sort_by_key(|r| r.k);
        Ok(Self { regions })
    }
}

/// Canonical region list from a 2-D mixture.
pub fn region_centers(model: &GmmModel) -> Result<SceneRegions> {
    if model.means.iter().any(|m| m.len() != 2) {
        return Err(Error::Shape("region centers need a 2-D mixture".into()));
    }
    let mut idx: Vec<usize> = (0..model.components()).collect();
    idx.sort_by(|&a, &b| {
        model.weights[b]
            .total_cmp(&model.weights[a])
            .then(model.means[a][0].total_cmp(&model.means[b][0]))
            .then(model.means[a][1].total_cmp(&model.means[b][1]))
    });
    Ok(SceneRegions {
        regions: idx
            .into_iter()
            .enumerate()
            .map(|(k, c)| Region {
                k,
                weight: model.weights[c],
                cx: model.means[c][0],
                cy: model.means[c][1],
                var_x: model.variances[c][0],
                var_y: model.variances[c][1],
            })
            .collect(),
    })
}

/// Run the whole region discovery: histograms, energy-weighted patch
/// centers, mixture fit, canonical ordering.
pub fn discover_regions(
    clips: &[PoseClip],
    layout: &SkeletonLayout,
    grid: &PatchGrid,
    tracklets: &TrackletConfig,
    gmm: &GmmConfig,
) -> Result<(SceneRegions, GmmFit)> {
    let feats = arm_motion_features(clips, layout, grid, tracklets)?;
    let (points, weights): (Vec<Vec<f64>>, Vec<f64>) = feats
        .histograms
        .iter()
        .filter(|h| h.support > 0)
        .map(|h| {
            let c = grid.center(h.patch);
            (vec![c.x, c.y], h.energy())
        })
        .unzip();
    if points.is_empty() {
        return Err(Error::Invalid("no arm motion found to discover regions".into()));
    }
    let fit = fit_gmm(&points, &weights, gmm)?;
    Ok((region_centers(&fit.model)?, fit))
}

/// `(ρ, θ)` from the subject's body center to each region center, per frame.
pub fn nonsocial_proxemics(
    clip: &PoseClip,
    subject: SubjectId,
    layout: &SkeletonLayout,
    regions: &SceneRegions,
) -> Result<DescriptorTensor> {
    if clip.scene_kind() != Some(SceneKind::Nonsocial) {
        return Err(Error::Invalid("nonsocial proxemics needs a nonsocial scene".into()));
    }
    if regions.is_empty() {
        return Err(Error::Empty("no scene regions"));
    }
    let t = clip.len();
    let mut data = Array3::zeros((t, regions.len(), 2));
    for f in 0..t {
        let c = layout.body_center(clip.skeleton(f, subject)?);
        for (k, r) in regions.regions.iter().enumerate() {
            let cyl = cylindrical(c, r.center());
            data[[f, k, 0]] = cyl.rho;
            data[[f, k, 1]] = cyl.theta;
        }
    }
    DescriptorTensor::new(data, StreamTag::ProxNonsocial, &PROX_CHANNELS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose_io::{PoseFrame, Skeleton};

    fn nonsocial_clip(frames: Vec<Skeleton>) -> PoseClip {
        PoseClip {
            clip_id: 0,
            subject_ids: vec![frames[0].subject_id],
            frames: frames
                .into_iter()
                .enumerate()
                .map(|(i, s)| PoseFrame { frame_index: i, scene_kind: SceneKind::Nonsocial, skeletons: vec![s] })
                .collect(),
        }
    }

    fn standing(x: f64, y: f64) -> Skeleton {
        Skeleton::detected(1, (0..18).map(|j| Point::new(x + j as f64 * 0.5, y + j as f64)).collect())
    }

    fn grid() -> PatchGrid {
        PatchGrid::new(640.0, 480.0, 12, 16).unwrap()
    }

    #[test]
    fn rigid_walk_leaves_histograms_empty() {
        let clip = nonsocial_clip((0..10).map(|f| standing(100.0 + 3.0 * f as f64, 200.0)).collect());
        let feats = arm_motion_features(&[clip], &SkeletonLayout::coco18(), &grid(), &Default::default()).unwrap();
        assert!(feats.histograms.iter().all(|h| h.support == 0 && h.energy() == 0.0));
    }

    #[test]
    fn wrist_moving_right_fills_zero_radian_bin() {
        let layout = SkeletonLayout::coco18();
        let clip = nonsocial_clip(
            (0..6)
                .map(|f| {
                    let mut s = standing(300.0, 200.0);
                    s.joints[crate::pose_io::coco::R_WRIST].x += 2.0 * f as f64;
                    s
                })
                .collect(),
        );
        let cfg = TrackletConfig::default();
        let feats = arm_motion_features(&[clip], &layout, &grid(), &cfg).unwrap();
        let active: Vec<_> = feats.histograms.iter().filter(|h| h.support > 0).collect();
        assert_eq!(active.len(), 1);
        for (bin, &v) in active[0].bins.iter().enumerate() {
            if v > 0.0 {
                assert_eq!(bin / cfg.magnitude_bins, 0, "mass outside 0-rad bin");
            }
        }
    }

    #[test]
    fn no_clips_no_mass() {
        let feats = arm_motion_features(&[], &SkeletonLayout::coco18(), &grid(), &Default::default()).unwrap();
        assert_eq!(feats.histograms.len(), 192);
        assert!(feats.histograms.iter().all(|h| h.support == 0));
    }

    #[test]
    fn orientation_bins_wrap() {
        let cfg = TrackletConfig::default();
        assert_eq!(cfg.orientation_bin(0.0), 0);
        assert_eq!(cfg.orientation_bin(PI), 4);
        assert_eq!(cfg.orientation_bin(-PI / 2.0), 6);
        assert_eq!(cfg.orientation_bin(-0.1), 0);
        assert_eq!(cfg.magnitude_bin(0.5), 0);
        assert_eq!(cfg.magnitude_bin(1e9), 2);
    }

    #[test]
    fn out_of_grid_points_clamp() {
        let g = grid();
        assert_eq!(g.patch_of(Point::new(-5.0, -5.0)), (0, true));
        assert_eq!(g.patch_of(Point::new(640.0, 480.0)), (191, false));
    }

    #[test]
    fn single_component_is_weighted_centroid() {
        let pts = vec![vec![0.0, 0.0], vec![4.0, 2.0], vec![1.0, 1.0]];
        let w = vec![1.0, 3.0, 2.0];
        let fit = fit_gmm(&pts, &w, &GmmConfig { components: 1, ..Default::default() }).unwrap();
        assert_eq!(fit.model.weights, vec![1.0]);
        assert!((fit.model.means[0][0] - 14.0 / 6.0).abs() < 1e-12);
        assert!((fit.model.means[0][1] - 8.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_points_reduces_components() {
        let pts = vec![vec![0.0, 0.0], vec![5.0, 5.0]];
        let fit = fit_gmm(&pts, &[1.0, 1.0], &GmmConfig::default()).unwrap();
        assert_eq!(fit.model.components(), 2);
        assert_eq!(fit.reduced_from, Some(6));
    }

    fn model(weights: Vec<f64>, xs: Vec<f64>) -> GmmModel {
        GmmModel {
            means: xs.iter().map(|&x| vec![x, 0.0]).collect(),
            variances: vec![vec![1.0, 1.0]; xs.len()],
            weights,
            log_likelihood: vec![],
        }
    }

    #[test]
    fn region_ordering() {
        let r = region_centers(&model(vec![0.3, 0.7], vec![0.0, 9.0])).unwrap();
        assert_eq!(r.regions[0].cx, 9.0);
        let r = region_centers(&model(vec![0.5, 0.5], vec![5.0, 1.0])).unwrap();
        assert_eq!(r.regions[0].cx, 1.0);
        let r = region_centers(&model(vec![1.0], vec![2.0])).unwrap();
        assert_eq!(r.len(), 1);
        let back = SceneRegions::from_records(r.to_records().as_bytes()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn nonsocial_shape_and_coincidence() {
        let layout = SkeletonLayout::coco18();
        let clip = nonsocial_clip((0..30).map(|_| standing(100.0, 100.0)).collect());
        let body = layout.body_center(&clip.frames[0].skeletons[0]);
        let regions = SceneRegions {
            regions: (0..6)
                .map(|k| Region {
                    k,
                    weight: 1.0 / 6.0,
                    cx: if k == 0 { body.x } else { 50.0 * k as f64 },
                    cy: if k == 0 { body.y } else { 10.0 },
                    var_x: 1.0,
                    var_y: 1.0,
                })
                .collect(),
        };
        let d = nonsocial_proxemics(&clip, 1, &layout, &regions).unwrap();
        assert_eq!(d.shape(), (30, 6, 2));
        for f in 0..30 {
            assert_eq!((d.data[[f, 0, 0]], d.data[[f, 0, 1]]), (0.0, 0.0));
        }
        let empty = SceneRegions { regions: vec![] };
        assert!(nonsocial_proxemics(&clip, 1, &layout, &empty).is_err());
    }
}
