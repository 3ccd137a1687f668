//! Descriptor images and the frozen convolutional feature extractor.
//!
//! Descriptors are scaled to `0..=255` with a calibration fitted on training
//! data, resized to `68 × 68 × 3`, and pushed through a fixed, seeded stack of
//! convolutions that ends in `4 × 4 × K` feature maps. Temporal mean pooling
//! then averages each map down its rows.

use std::fmt::Write as _;
use std::hash::{DefaultHasher, Hash, Hasher};

use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::descriptors::{DescriptorTensor, StreamTag};
use crate::error::{Error, Result};

pub const IMAGE_SIZE: usize = 68;
pub const MAP_SIZE: usize = 4;
/// Half-width given to channels whose training range collapses to a point.
pub const DEGENERATE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationRange {
    pub ranges: Vec<(f64, f64)>,
}

impl CalibrationRange {
    /// Stable identifier of the ranges, carried by quantized images.
    pub fn id(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (lo, hi) in &self.ranges {
            lo.to_bits().hash(&mut h);
            hi.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

/// Per-channel min/max over every training tensor.
pub fn fit_calibration(tensors: &[DescriptorTensor]) -> Result<CalibrationRange> {
    let first = tensors.first().ok_or(Error::Empty("no tensors to calibrate on"))?;
    let c = first.channels();
    let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); c];
    for t in tensors {
        if t.channels() != c {
            return Err(Error::Shape(format!("calibration set mixes {} and {c} channels", t.channels())));
        }
        for ((_, _, ch), &v) in t.data.indexed_iter() {
            let r = &mut ranges[ch];
            r.0 = r.0.min(v);
            r.1 = r.1.max(v);
        }
    }
    for r in &mut ranges {
        if r.1 <= r.0 {
            let mid = r.0;
            *r = (mid - DEGENERATE_EPS, mid + DEGENERATE_EPS);
        }
    }
    Ok(CalibrationRange { ranges })
}

/// `round-half-up(255 · (clip(v) − min) / (max − min))`.
pub fn quantize_value(v: f64, (lo, hi): (f64, f64)) -> u8 {
    let x = 255.0 * (v.clamp(lo, hi) - lo) / (hi - lo);
    (x + 0.5).floor().clamp(0.0, 255.0) as u8
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedClipImage {
    /// `68 × 68 × 3`, rows are time.
    pub pixels: Array3<u8>,
    pub stream: StreamTag,
    pub calibration_id: u64,
}

impl QuantizedClipImage {
    /// Plain-text PPM (P3) for eyeballing.
    pub fn to_ppm(&self) -> String {
        let (h, w, _) = self.pixels.dim();
        let mut out = format!("P3\n{w} {h}\n255\n");
        for row in self.pixels.outer_iter() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    /// Plain-text PGM (P2) of one channel.
    pub fn channel_pgm(&self, channel: usize) -> String {
        let (h, w, _) = self.pixels.dim();
        let mut out = format!("P2\n{w} {h}\n255\n");
        for r in 0..h {
            for c in 0..w {
                let _ = write!(out, "{}{}", if c > 0 { " " } else { "" }, self.pixels[[r, c, channel]]);
            }
            out.push('\n');
        }
        out
    }
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear(src: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (in_h, in_w) = src.dim();
    let taps = |n_out: usize, n_in: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|o| {
                let pos = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = pos.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, pos - i0 as f64)
            })
            .collect()
    };
    let rows = taps(out_h, in_h);
    let cols = taps(out_w, in_w);
    Array2::from_shape_fn((out_h, out_w), |(r, c)| {
        let (r0, r1, fr) = rows[r];
        let (c0, c1, fc) = cols[c];
        let top = src[[r0, c0]] * (1.0 - fc) + src[[r0, c1]] * fc;
        let bottom = src[[r1, c0]] * (1.0 - fc) + src[[r1, c1]] * fc;
        top * (1.0 - fr) + bottom * fr
    })
}

/// Quantize each channel to `0..=255`, pad 2-channel tensors with a zero
/// channel, and resize to `68 × 68`.
pub fn quantize_and_resize(tensor: &DescriptorTensor, calib: &CalibrationRange) -> Result<QuantizedClipImage> {
    let (h, w, c) = tensor.shape();
    if c != calib.ranges.len() {
        return Err(Error::Shape(format!("tensor has {c} channels, calibration {}", calib.ranges.len())));
    }
    let mut pixels = Array3::<u8>::zeros((IMAGE_SIZE, IMAGE_SIZE, 3));
    for ch in 0..c {
        let q = Array2::from_shape_fn((h, w), |(r, col)| {
            quantize_value(tensor.data[[r, col, ch]], calib.ranges[ch]) as f64
        });
        let resized = resize_bilinear(&q, IMAGE_SIZE, IMAGE_SIZE);
        pixels.slice_mut(s![.., .., ch]).zip_mut_with(&resized, |p, &v| *p = (v + 0.5).floor().clamp(0.0, 255.0) as u8);
    }
    Ok(QuantizedClipImage { pixels, stream: tensor.stream, calibration_id: calib.id() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_channels: usize,
    pub relu: bool,
}

#[derive(Debug, Clone, PartialEq)]
struct ConvLayer {
    spec: ConvSpec,
    in_channels: usize,
    /// `(kernel·kernel·in, out)`, rows ordered (ky, kx, c_in).
    weights: Array2<f64>,
    bias: Array1<f64>,
}

impl ConvLayer {
    fn out_size(&self, n: usize) -> usize {
        (n + 2 * self.spec.pad - self.spec.kernel) / self.spec.stride + 1
    }

    fn forward(&self, x: &Array3<f64>) -> Array3<f64> {
        let (h, w, cin) = x.dim();
        debug_assert_eq!(cin, self.in_channels);
        let (oh, ow) = (self.out_size(h), self.out_size(w));
        let k = self.spec.kernel;
        let mut cols = Array2::<f64>::zeros((oh * ow, k * k * cin));
        for oy in 0..oh {
            for ox in 0..ow {
                let mut row = cols.row_mut(oy * ow + ox);
                for ky in 0..k {
                    let iy = (oy * self.spec.stride + ky) as isize - self.spec.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * self.spec.stride + kx) as isize - self.spec.pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let base = (ky * k + kx) * cin;
                        for c in 0..cin {
                            row[base + c] = x[[iy as usize, ix as usize, c]];
                        }
                    }
                }
            }
        }
        let mut out = cols.dot(&self.weights);
        out += &self.bias;
        if self.spec.relu {
            out.mapv_inplace(|v| v.max(0.0));
        }
        out.into_shape_with_order((oh, ow, self.spec.out_channels)).expect("conv output shape")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackboneConfig {
    /// Widths of the four stride-2 blocks.
    pub widths: [usize; 4],
    /// Number of output maps `K`.
    pub maps: usize,
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self { widths: [8, 16, 32, 32], maps: 64, seed: 0 }
    }
}

/// Frozen, seeded convolutional stack: four 3×3 stride-2 blocks
/// (68 → 34 → 17 → 9 → 5) and a 2×2 valid convolution to 4×4×K.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneModel {
    config: BackboneConfig,
    layers: Vec<ConvLayer>,
}

impl BackboneModel {
    pub fn new(config: BackboneConfig) -> Result<Self> {
        if config.maps == 0 || config.widths.contains(&0) {
            return Err(Error::Config("backbone widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let bias_dist = Normal::new(0.0, 0.05).expect("valid normal");
        let mut specs: Vec<ConvSpec> = config
            .widths
            .iter()
            .map(|&out_channels| ConvSpec { kernel: 3, stride: 2, pad: 1, out_channels, relu: true })
            .collect();
        specs.push(ConvSpec { kernel: 2, stride: 1, pad: 0, out_channels: config.maps, relu: true });

        let mut in_channels = 3;
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let fan_in = spec.kernel * spec.kernel * in_channels;
            let he = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid normal");
            let weights = Array2::from_shape_simple_fn((fan_in, spec.out_channels), || he.sample(&mut rng));
            let bias = Array1::from_shape_simple_fn(spec.out_channels, || bias_dist.sample(&mut rng));
            layers.push(ConvLayer { spec, in_channels, weights, bias });
            in_channels = spec.out_channels;
        }
        let model = Self { config, layers };
        let side = model.layers.iter().fold(IMAGE_SIZE, |n, l| l.out_size(n));
        debug_assert_eq!(side, MAP_SIZE);
        Ok(model)
    }

    pub fn config(&self) -> BackboneConfig {
        self.config
    }

    pub fn maps(&self) -> usize {
        self.config.maps
    }

    /// Every parameter in layer order, for seeding checks.
    pub fn parameters(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    /// `(y, x, K)`, y follows the image rows (time).
    pub values: Array3<f64>,
    pub stream: StreamTag,
}

pub fn backbone_forward(image: &QuantizedClipImage, model: &BackboneModel) -> Result<FeatureMaps> {
    if image.pixels.dim() != (IMAGE_SIZE, IMAGE_SIZE, 3) {
        return Err(Error::Shape(format!("backbone input {:?}", image.pixels.dim())));
    }
    let mut x = image.pixels.mapv(|v| v as f64 / 255.0);
    for layer in &model.layers {
        x = layer.forward(&x);
    }
    Ok(FeatureMaps { values: x, stream: image.stream })
}

/// Mean of each map down its rows, concatenated map by map: entry
/// `k·4 + x` is the column-`x` mean of map `k`.
pub fn temporal_mean_pool(maps: &FeatureMaps) -> Result<Vec<f64>> {
    let (h, w, k) = maps.values.dim();
    if (h, w) != (MAP_SIZE, MAP_SIZE) {
        return Err(Error::Shape(format!("feature maps {h}x{w}")));
    }
    let mean = maps.values.mean_axis(Axis(0)).expect("non-empty rows");
    let mut out = Vec::with_capacity(w * k);
    for map in 0..k {
        for x in 0..w {
            out.push(mean[[x, map]]);
        }
    }
    Ok(out)
}

/// Calibrated descriptor to pooled feature vector of length `4K`.
pub fn encode(tensor: &DescriptorTensor, calib: &CalibrationRange, model: &BackboneModel) -> Result<Vec<f64>> {
    let image = quantize_and_resize(tensor, calib)?;
    temporal_mean_pool(&backbone_forward(&image, model)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::CYL_CHANNELS;

    fn tensor(data: Array3<f64>) -> DescriptorTensor {
        DescriptorTensor::new(data, StreamTag::Person, &CYL_CHANNELS).unwrap()
    }

    #[test]
    fn calibration_examples() {
        let mut a = Array3::zeros((2, 2, 3));
        a[[0, 0, 0]] = 10.0;
        a.slice_mut(s![.., .., 1]).fill(5.0);
        let c = fit_calibration(&[tensor(a.clone())]).unwrap();
        assert_eq!(c.ranges[0], (0.0, 10.0));
        assert_eq!(c.ranges[1], (5.0 - DEGENERATE_EPS, 5.0 + DEGENERATE_EPS));

        let lo = Array3::from_shape_fn((1, 2, 3), |(_, i, _)| i as f64);
        let hi = Array3::from_shape_fn((1, 2, 3), |(_, i, _)| 3.0 + 6.0 * i as f64);
        let c = fit_calibration(&[tensor(lo), tensor(hi)]).unwrap();
        assert_eq!(c.ranges[2], (0.0, 9.0));
        assert!(fit_calibration(&[]).is_err());
    }

    #[test]
    fn quantization_endpoints_and_half() {
        assert_eq!(quantize_value(0.0, (0.0, 10.0)), 0);
        assert_eq!(quantize_value(10.0, (0.0, 10.0)), 255);
        assert_eq!(quantize_value(5.0, (0.0, 10.0)), 128);
        assert_eq!(quantize_value(-3.0, (0.0, 10.0)), 0);
        assert_eq!(quantize_value(99.0, (0.0, 10.0)), 255);
    }

    #[test]
    fn constant_channel_resizes_to_constant() {
        let t = tensor(Array3::from_elem((60, 17, 3), 5.0));
        let calib = CalibrationRange { ranges: vec![(0.0, 10.0); 3] };
        let img = quantize_and_resize(&t, &calib).unwrap();
        assert_eq!(img.pixels.dim(), (68, 68, 3));
        assert!(img.pixels.iter().all(|&p| p == 128));
    }

    #[test]
    fn two_channel_gets_zero_third_channel() {
        let t = DescriptorTensor::new(
            Array3::from_elem((15, 5, 2), 1.0),
            StreamTag::ProxSocial,
            &crate::descriptors::PROX_CHANNELS,
        )
        .unwrap();
        let calib = CalibrationRange { ranges: vec![(0.0, 1.0); 2] };
        let img = quantize_and_resize(&t, &calib).unwrap();
        assert!(img.pixels.slice(s![.., .., 2]).iter().all(|&p| p == 0));
        assert!(img.pixels.slice(s![.., .., 0]).iter().all(|&p| p == 255));
        assert!(quantize_and_resize(&t, &CalibrationRange { ranges: vec![(0.0, 1.0); 3] }).is_err());
    }

    #[test]
    fn forward_shape_and_seeds() {
        let m = BackboneModel::new(BackboneConfig::default()).unwrap();
        let img = QuantizedClipImage {
            pixels: Array3::from_shape_fn((68, 68, 3), |(r, c, ch)| ((r * 7 + c * 3 + ch) % 256) as u8),
            stream: StreamTag::Person,
            calibration_id: 0,
        };
        let a = backbone_forward(&img, &m).unwrap();
        assert_eq!(a.values.dim(), (4, 4, 64));
        let b = backbone_forward(&img, &m).unwrap();
        assert!(a.values.iter().zip(b.values.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let other = BackboneModel::new(BackboneConfig { seed: 1, ..Default::default() }).unwrap();
        assert!(m.parameters().zip(other.parameters()).any(|(x, y)| x != y));
    }

    #[test]
    fn tmp_examples() {
        let mut v = Array3::zeros((4, 4, 2));
        for y in 0..4 {
            v.slice_mut(s![y, .., 0]).fill((2 * y + 1) as f64);
        }
        v.slice_mut(s![.., .., 1]).fill(2.5);
        let pooled = temporal_mean_pool(&FeatureMaps { values: v, stream: StreamTag::Person }).unwrap();
        assert_eq!(pooled, vec![4.0, 4.0, 4.0, 4.0, 2.5, 2.5, 2.5, 2.5]);
    }

    #[test]
    fn golden_zero_image() {
        let model = BackboneModel::new(BackboneConfig::default()).unwrap();
        let zero = QuantizedClipImage {
            pixels: Array3::zeros((IMAGE_SIZE, IMAGE_SIZE, 3)),
            stream: StreamTag::Person,
            calibration_id: 0,
        };
        let v = temporal_mean_pool(&backbone_forward(&zero, &model).unwrap()).unwrap();
        let golden = [0.06213955901356692, 0.06599364739784878, 0.06599364739784878, 0.10225745171242934];
        for (a, b) in v.iter().zip(golden) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!((v.iter().sum::<f64>() - 6.366065168336732).abs() < 1e-9);
        // map 1 is dead on the zero image
        assert_eq!(&v[4..7], &[0.0; 3]);
    }
}
