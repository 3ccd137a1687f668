//! Softmax classification heads, their SGD training, and class activation maps.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::backbone::FeatureMaps;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadSpec {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for HeadSpec {
    fn default() -> Self {
        Self { hidden: 128, epochs: 300, learning_rate: 0.01, batch_size: 32, seed: 0 }
    }
}

/// Row-wise softmax, in place.
fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut z = Array2::from_shape_vec((1, logits.len()), logits.to_vec()).expect("row");
    softmax_rows(&mut z);
    z.into_raw_vec_and_offset().0
}

fn stack(xs: &[Vec<f64>], idx: &[usize]) -> Array2<f64> {
    let d = xs[idx[0]].len();
    let mut m = Array2::zeros((idx.len(), d));
    for (r, &i) in idx.iter().enumerate() {
        m.row_mut(r).assign(&ndarray::ArrayView1::from(&xs[i]));
    }
    m
}

/// Mean cross-entropy of softmax probabilities `p` against labels; also
/// turns `p` into the logit gradient `(p − onehot) / n`.
fn cross_entropy_grad(p: &mut Array2<f64>, labels: &[usize]) -> f64 {
    let n = labels.len() as f64;
    let mut loss = 0.0;
    for (mut row, &y) in p.rows_mut().into_iter().zip(labels) {
        loss -= row[y].max(f64::MIN_POSITIVE).ln();
        row[y] -= 1.0;
        row /= n;
    }
    loss / n
}

/// Something trainable by mini-batch SGD on cross-entropy.
pub trait SoftmaxModel: Sized {
    type Grad;
    fn input_dim(&self) -> usize;
    fn classes(&self) -> usize;
    fn logits(&self, x: ArrayView2<f64>) -> Array2<f64>;
    /// Mean cross-entropy over the batch and its gradient.
    fn loss_grad(&self, x: ArrayView2<f64>, labels: &[usize]) -> (f64, Self::Grad);
    fn step(&mut self, grad: &Self::Grad, lr: f64);

    fn probabilities(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = self.logits(x);
        softmax_rows(&mut z);
        z
    }
}

/// Fully connected → ReLU → fully connected → softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadModel {
    /// `hidden × input`
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// `classes × hidden`
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub seed: u64,
    pub loss_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrad {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl HeadModel {
    /// Seeded initialization: He-normal first layer, scaled-normal second, zero biases.
    pub fn init(input: usize, classes: usize, spec: &HeadSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let n1 = Normal::new(0.0, (2.0 / input.max(1) as f64).sqrt()).expect("valid normal");
        let n2 = Normal::new(0.0, (1.0 / spec.hidden.max(1) as f64).sqrt()).expect("valid normal");
        Self {
            w1: Array2::from_shape_simple_fn((spec.hidden, input), || n1.sample(&mut rng)),
            b1: Array1::zeros(spec.hidden),
            w2: Array2::from_shape_simple_fn((classes, spec.hidden), || n2.sample(&mut rng)),
            b2: Array1::zeros(classes),
            seed: spec.seed,
            loss_trace: Vec::new(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    /// Every parameter, in the order w1, b1, w2, b2.
    pub fn flat_params(&self) -> Vec<f64> {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2).copied().collect()
    }

    pub fn set_flat_params(&mut self, p: &[f64]) {
        let mut it = p.iter().copied();
        for v in self.w1.iter_mut().chain(self.b1.iter_mut()).chain(self.w2.iter_mut()).chain(self.b2.iter_mut()) {
            *v = it.next().expect("parameter count");
        }
    }
}

impl HeadGrad {
    pub fn flat(&self) -> Vec<f64> {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2).copied().collect()
    }
}

impl SoftmaxModel for HeadModel {
    type Grad = HeadGrad;

    fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    fn classes(&self) -> usize {
        self.w2.nrows()
    }

    fn logits(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let a1 = (x.dot(&self.w1.t()) + &self.b1).mapv(|v| v.max(0.0));
        a1.dot(&self.w2.t()) + &self.b2
    }

    fn loss_grad(&self, x: ArrayView2<f64>, labels: &[usize]) -> (f64, HeadGrad) {
        let z1 = x.dot(&self.w1.t()) + &self.b1;
        let a1 = z1.mapv(|v| v.max(0.0));
        let mut p = a1.dot(&self.w2.t()) + &self.b2;
        softmax_rows(&mut p);
        let loss = cross_entropy_grad(&mut p, labels);
        let dz2 = p;
        let w2 = dz2.t().dot(&a1);
        let b2 = dz2.sum_axis(Axis(0));
        let mut dz1 = dz2.dot(&self.w2);
        dz1.zip_mut_with(&z1, |g, &z| {
            if z <= 0.0 {
                *g = 0.0;
            }
        });
        let w1 = dz1.t().dot(&x);
        let b1 = dz1.sum_axis(Axis(0));
        (loss, HeadGrad { w1, b1, w2, b2 })
    }

    fn step(&mut self, g: &HeadGrad, lr: f64) {
        self.w1.scaled_add(-lr, &g.w1);
        self.b1.scaled_add(-lr, &g.b1);
        self.w2.scaled_add(-lr, &g.w2);
        self.b2.scaled_add(-lr, &g.b2);
    }
}

/// Single linear softmax layer over globally average-pooled feature maps.
/// No bias, so a class activation map averages exactly to the class logit.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCamHead {
    /// `classes × units`
    pub weights: Array2<f64>,
    pub seed: u64,
    pub loss_trace: Vec<f64>,
}

impl LinearCamHead {
    pub fn init(units: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, (1.0 / units.max(1) as f64).sqrt()).expect("valid normal");
        Self {
            weights: Array2::from_shape_simple_fn((classes, units), || n.sample(&mut rng)),
            seed,
            loss_trace: Vec::new(),
        }
    }
}

impl SoftmaxModel for LinearCamHead {
    type Grad = Array2<f64>;

    fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    fn classes(&self) -> usize {
        self.weights.nrows()
    }

    fn logits(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weights.t())
    }

    fn loss_grad(&self, x: ArrayView2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
        let mut p = self.logits(x);
        softmax_rows(&mut p);
        let loss = cross_entropy_grad(&mut p, labels);
        (loss, p.t().dot(&x))
    }

    fn step(&mut self, g: &Array2<f64>, lr: f64) {
        self.weights.scaled_add(-lr, g);
    }
}

fn check_training_set(xs: &[Vec<f64>], ys: &[usize], classes: usize) -> Result<usize> {
    if xs.len() != ys.len() {
        return Err(Error::Shape(format!("{} samples, {} labels", xs.len(), ys.len())));
    }
    let d = xs.first().ok_or(Error::Empty("no training samples"))?.len();
    if xs.iter().any(|x| x.len() != d) {
        return Err(Error::Shape("training vectors of unequal length".into()));
    }
    if let Some(bad) = ys.iter().find(|&&y| y >= classes) {
        return Err(Error::Invalid(format!("label {bad} outside {classes} classes")));
    }
    for c in 0..classes {
        if !ys.contains(&c) {
            return Err(Error::Invalid(format!("class {c} missing from training set")));
        }
    }
    Ok(d)
}

/// Mini-batch SGD where `order(epoch)` yields the visiting order of samples.
pub fn sgd<M: SoftmaxModel>(
    model: &mut M,
    xs: &[Vec<f64>],
    ys: &[usize],
    epochs: usize,
    batch_size: usize,
    lr: f64,
    mut order: impl FnMut(usize) -> Vec<usize>,
) -> Vec<f64> {
    let batch_size = batch_size.max(1);
    let mut trace = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let idx = order(epoch);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in idx.chunks(batch_size) {
            let x = stack(xs, chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| ys[i]).collect();
            let (loss, grad) = model.loss_grad(x.view(), &labels);
            model.step(&grad, lr);
            sum += loss;
            batches += 1;
        }
        trace.push(sum / batches as f64);
    }
    trace
}

/// Seeded shuffling schedule shared by both head variants.
pub fn shuffled_order(n: usize, seed: u64) -> impl FnMut(usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5AFF_1E00_0001);
    move |_| {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        idx
    }
}

pub fn head_train(xs: &[Vec<f64>], ys: &[usize], classes: usize, spec: &HeadSpec) -> Result<HeadModel> {
    head_train_with_order(xs, ys, classes, spec, shuffled_order(xs.len(), spec.seed))
}

/// [`head_train`] with caller-controlled sample order per epoch.
pub fn head_train_with_order(
    xs: &[Vec<f64>],
    ys: &[usize],
    classes: usize,
    spec: &HeadSpec,
    order: impl FnMut(usize) -> Vec<usize>,
) -> Result<HeadModel> {
    let d = check_training_set(xs, ys, classes)?;
    let mut model = HeadModel::init(d, classes, spec);
    let trace = sgd(&mut model, xs, ys, spec.epochs, spec.batch_size, spec.learning_rate, order);
    model.loss_trace = trace;
    Ok(model)
}

pub fn linear_head_train(xs: &[Vec<f64>], ys: &[usize], classes: usize, spec: &HeadSpec) -> Result<LinearCamHead> {
    let d = check_training_set(xs, ys, classes)?;
    let mut model = LinearCamHead::init(d, classes, spec.seed);
    let order = shuffled_order(xs.len(), spec.seed);
    model.loss_trace = sgd(&mut model, xs, ys, spec.epochs, spec.batch_size, spec.learning_rate, order);
    Ok(model)
}

/// Class probabilities for one vector.
pub fn head_predict<M: SoftmaxModel>(x: &[f64], m: &M) -> Result<Vec<f64>> {
    if x.len() != m.input_dim() {
        return Err(Error::Shape(format!("input {} vs head {}", x.len(), m.input_dim())));
    }
    let view = ArrayView2::from_shape((1, x.len()), x).expect("row view");
    Ok(m.probabilities(view).into_raw_vec_and_offset().0)
}

pub fn argmax(p: &[f64]) -> usize {
    p.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best }).0
}

/// Either trained head variant.
#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Mlp(HeadModel),
    Linear(LinearCamHead),
}

impl Head {
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Head::Mlp(m) => head_predict(x, m),
            Head::Linear(m) => head_predict(x, m),
        }
    }

    pub fn variant(&self) -> &'static str {
        match self {
            Head::Mlp(_) => "mlp",
            Head::Linear(_) => "linear",
        }
    }
}

/// Global average of each map: the input of the linear CAM head.
pub fn global_average(maps: &[FeatureMaps]) -> Vec<f64> {
    maps.iter()
        .flat_map(|m| {
            let (h, w, _) = m.values.dim();
            m.values.sum_axis(Axis(0)).sum_axis(Axis(0)).mapv(|v| v / (h * w) as f64).to_vec()
        })
        .collect()
}

/// `Act(y, x) = Σ_k w[class, k] · f_k(y, x)` over the maps of all streams,
/// units numbered stream by stream.
pub fn cam(maps: &[FeatureMaps], head: &Head, class: usize) -> Result<Array2<f64>> {
    let Head::Linear(head) = head else {
        return Err(Error::UnsupportedHead);
    };
    let first = maps.first().ok_or(Error::Empty("no feature maps"))?;
    let (h, w, _) = first.values.dim();
    let units: usize = maps.iter().map(|m| m.values.dim().2).sum();
    if units != head.input_dim() {
        return Err(Error::Shape(format!("{units} map units, head expects {}", head.input_dim())));
    }
    if class >= head.classes() {
        return Err(Error::Invalid(format!("class {class} outside {}", head.classes())));
    }
    let mut act = Array2::zeros((h, w));
    let mut k0 = 0;
    for m in maps {
        if m.values.dim().0 != h || m.values.dim().1 != w {
            return Err(Error::Shape("feature maps of unequal spatial size".into()));
        }
        let k = m.values.dim().2;
        let wk = head.weights.slice(ndarray::s![class, k0..k0 + k]);
        for ((y, x, unit), &f) in m.values.indexed_iter() {
            act[[y, x]] += wk[unit] * f;
        }
        k0 += k;
    }
    Ok(act)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Low,
    Medium,
    High,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Low => "low",
            Activation::Medium => "medium",
            Activation::High => "high",
        }
    }
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// `≤ Q1` low, `(Q1, Q3]` medium, `> Q3` high; a constant map is all medium.
pub fn quartile_quantize(act: &Array2<f64>) -> Result<Array2<Activation>> {
    if act.is_empty() {
        return Err(Error::Empty("activation map"));
    }
    let mut sorted: Vec<f64> = act.iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[sorted.len() - 1] {
        return Ok(act.mapv(|_| Activation::Medium));
    }
    let q1 = percentile(&sorted, 0.25);
    let q3 = percentile(&sorted, 0.75);
    Ok(act.mapv(|v| {
        if v <= q1 {
            Activation::Low
        } else if v <= q3 {
            Activation::Medium
        } else {
            Activation::High
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::StreamTag;
    use ndarray::Array3;

    #[test]
    fn zero_head_is_uniform() {
        let spec = HeadSpec { hidden: 4, ..Default::default() };
        let mut m = HeadModel::init(3, 3, &spec);
        m.set_flat_params(&vec![0.0; m.flat_params().len()]);
        let p = head_predict(&[1.0, -2.0, 0.5], &m).unwrap();
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert!(head_predict(&[1.0], &m).is_err());
    }

    #[test]
    fn softmax_shift_invariant() {
        let a = softmax(&[1.0, 2.0, -0.5]);
        let b = softmax(&[101.0, 102.0, 99.5]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(argmax(&a), 1);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_epochs_is_initialization() {
        let xs = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let spec = HeadSpec { hidden: 5, epochs: 0, seed: 9, ..Default::default() };
        let m = head_train(&xs, &[0, 1], 2, &spec).unwrap();
        assert_eq!(m, HeadModel::init(2, 2, &spec));
    }

    #[test]
    fn missing_class_rejected() {
        let xs = vec![vec![0.0], vec![1.0]];
        assert!(head_train(&xs, &[0, 0], 2, &HeadSpec::default()).is_err());
    }

    fn maps(k: usize, f: impl Fn(usize, usize, usize) -> f64) -> FeatureMaps {
        FeatureMaps { values: Array3::from_shape_fn((4, 4, k), |(y, x, u)| f(y, x, u)), stream: StreamTag::Person }
    }

    #[test]
    fn cam_scalar_case() {
        let head = Head::Linear(LinearCamHead { weights: Array2::from_elem((1, 1), 2.0), seed: 0, loss_trace: vec![] });
        let act = cam(&[maps(1, |_, _, _| 3.0)], &head, 0).unwrap();
        assert!(act.iter().all(|&v| v == 6.0));
        let zero = Head::Linear(LinearCamHead { weights: Array2::zeros((2, 2)), seed: 0, loss_trace: vec![] });
        let act = cam(&[maps(1, |y, x, _| (y * x) as f64), maps(1, |y, _, _| y as f64)], &zero, 1).unwrap();
        assert!(act.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cam_needs_linear_head() {
        let mlp = Head::Mlp(HeadModel::init(4, 2, &HeadSpec { hidden: 2, ..Default::default() }));
        assert!(matches!(cam(&[maps(1, |_, _, _| 1.0)], &mlp, 0), Err(Error::UnsupportedHead)));
    }

    #[test]
    fn quartiles_of_sixteen() {
        let act = Array2::from_shape_fn((4, 4), |(y, x)| ((y * 4 + x) * 7 % 16) as f64);
        let q = quartile_quantize(&act).unwrap();
        let count = |a| q.iter().filter(|&&v| v == a).count();
        assert_eq!((count(Activation::Low), count(Activation::Medium), count(Activation::High)), (4, 8, 4));
        let flat = quartile_quantize(&Array2::from_elem((4, 4), 2.0)).unwrap();
        assert!(flat.iter().all(|&v| v == Activation::Medium));
    }
}
