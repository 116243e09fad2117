//! Frame-rate-aware association network.
//!
//! `N_aff` maps each affinity feature to 16·D_a channels; `N_att` maps the
//! frame-rate embedding σ to channel logits. The pair score is
//! `logistic(Σ_i f_aff_i · softmax(f_att)_i)`. Training minimizes masked
//! binary cross-entropy with hand-written backpropagation and plain SGD.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::assignment::{solve, CostMatrix};
use crate::association::{cosine, normalized_distance, AffinityFeature, D_A};
use crate::error::{invalid, Error, Result};
use crate::mot_io::BoundingBox;
use crate::seeding::rng;

/// Channels produced by both sub-networks.
pub const N_CHANNELS: usize = 16 * D_A;
/// Default σ length, `32·D_a`.
pub const D_SIGMA: usize = 32 * D_A;
pub const DEFAULT_S: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaSource {
    Known,
    Ibdv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRateEmbedding {
    pub values: Vec<f64>,
    pub source: SigmaSource,
}

/// `σ_i = cos(i·s·F/D_σ)` for `i = 0..D_σ`.
pub fn encode_known(fps: f64, s: f64, d_sigma: usize) -> Result<FrameRateEmbedding> {
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(invalid(format!("frame rate must be positive, got {fps}")));
    }
    let values = (0..d_sigma)
        .map(|i| (i as f64 * s * fps / d_sigma as f64).cos())
        .collect();
    Ok(FrameRateEmbedding { values, source: SigmaSource::Known })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IbdvCriterion {
    /// Minimum summed center distance.
    Dist,
    /// Maximum summed appearance similarity.
    Sim,
    /// Seeded random pairing.
    Random,
}

impl std::str::FromStr for IbdvCriterion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dist" => Ok(Self::Dist),
            "sim" => Ok(Self::Sim),
            "random" => Ok(Self::Random),
            _ => Err(invalid(format!("unknown IBDV criterion '{s}' (dist|sim|random)"))),
        }
    }
}

/// Boxes and embeddings of one frame.
#[derive(Debug, Clone, Copy)]
pub struct FrameView<'a> {
    pub boxes: &'a [BoundingBox],
    pub embeddings: &'a [Vec<f64>],
}

/// Sorted best-match distances between two frames, resampled to `length`.
pub fn encode_ibdv(
    prev: FrameView,
    cur: FrameView,
    criterion: IbdvCriterion,
    length: usize,
    dims: (f64, f64),
    seed: u64,
) -> Result<FrameRateEmbedding> {
    if length == 0 {
        return Err(invalid("IBDV length must be at least 1"));
    }
    let (n, m) = (prev.boxes.len(), cur.boxes.len());
    if criterion == IbdvCriterion::Sim && (prev.embeddings.len() != n || cur.embeddings.len() != m) {
        return Err(invalid("similarity criterion needs one embedding per box"));
    }
    let dist = |i: usize, j: usize| normalized_distance(&prev.boxes[i], &cur.boxes[j], dims.0, dims.1);
    let pairs: Vec<(usize, usize)> = match criterion {
        IbdvCriterion::Dist | IbdvCriterion::Sim if n > 0 && m > 0 => {
            let mut costs = Vec::with_capacity(n * m);
            for i in 0..n {
                for j in 0..m {
                    costs.push(match criterion {
                        IbdvCriterion::Dist => dist(i, j),
                        _ => -cosine(&prev.embeddings[i], &cur.embeddings[j]),
                    });
                }
            }
            solve(&CostMatrix::new(n, m, costs)?)
        }
        IbdvCriterion::Random if n > 0 && m > 0 => {
            let mut r = rng(seed);
            let k = n.min(m);
            let rows = rand::seq::index::sample(&mut r, n, k).into_vec();
            let cols = rand::seq::index::sample(&mut r, m, k).into_vec();
            rows.into_iter().zip(cols).collect()
        }
        _ => Vec::new(),
    };
    let mut d: Vec<f64> = pairs.iter().map(|&(i, j)| dist(i, j)).collect();
    d.sort_by(f64::total_cmp);
    Ok(FrameRateEmbedding { values: interpolate(&d, length), source: SigmaSource::Ibdv })
}

/// Linear resampling of a sorted list; one value extends as a constant and
/// an empty list becomes all ones.
fn interpolate(d: &[f64], length: usize) -> Vec<f64> {
    match d.len() {
        0 => vec![1.0; length],
        1 => vec![d[0]; length],
        n => (0..length)
            .map(|k| {
                if length == 1 {
                    return d[0];
                }
                let t = k as f64 * (n - 1) as f64 / (length - 1) as f64;
                let lo = (t.floor() as usize).min(n - 1);
                let hi = (lo + 1).min(n - 1);
                let frac = t - lo as f64;
                (d[lo] + frac * (d[hi] - d[lo])).clamp(d[lo], d[hi])
            })
            .collect(),
    }
}

/// Fixed association rule used before any network is trained.
pub fn trivial_score(z: &AffinityFeature) -> f64 {
    trivial_score_weighted(z, 0.5, 0.5)
}

pub fn trivial_score_weighted(z: &AffinityFeature, w_iou: f64, w_sim: f64) -> f64 {
    w_iou * z.iou + w_sim * (z.cos_sim + 1.0) / 2.0
}

/// Dense layer `y = x·W + b` acting on row vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `in × out`
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Dense {
    fn zeros(input: usize, output: usize) -> Self {
        Self { w: DMatrix::zeros(input, output), b: DVector::zeros(output) }
    }

    fn glorot<R: Rng>(input: usize, output: usize, r: &mut R) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        Self {
            w: DMatrix::from_fn(input, output, |_, _| r.random_range(-limit..=limit)),
            b: DVector::zeros(output),
        }
    }

    pub fn input(&self) -> usize {
        self.w.nrows()
    }

    pub fn output(&self) -> usize {
        self.w.ncols()
    }
}

/// Rectified-linear hidden layers, linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

struct MlpCache {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<DMatrix<f64>>,
}

impl Mlp {
    pub fn new<R: Rng>(sizes: &[usize], r: &mut R) -> Self {
        Self { layers: sizes.windows(2).map(|w| Dense::glorot(w[0], w[1], r)).collect() }
    }

    fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(|l| Dense::zeros(l.input(), l.output())).collect() }
    }

    pub fn input(&self) -> usize {
        self.layers[0].input()
    }

    pub fn output(&self) -> usize {
        self.layers[self.layers.len() - 1].output()
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.input(), l.output())).collect()
    }

    fn forward(&self, x: DMatrix<f64>) -> (DMatrix<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut y = &h * &l.w;
            for mut row in y.row_iter_mut() {
                row += l.b.transpose();
            }
            if i < last {
                y.apply(|v| *v = v.max(0.0));
            }
            inputs.push(h);
            h = y;
        }
        (h, MlpCache { inputs })
    }

    fn eval(&self, x: DMatrix<f64>) -> DMatrix<f64> {
        self.forward(x).0
    }

    /// Accumulates parameter gradients into `grads`.
    fn backward(&self, cache: &MlpCache, mut d: DMatrix<f64>, grads: &mut Mlp) {
        for i in (0..self.layers.len()).rev() {
            let x = &cache.inputs[i];
            let g = &mut grads.layers[i];
            g.w.gemm_tr(1.0, x, &d, 1.0);
            for row in d.row_iter() {
                g.b += row.transpose();
            }
            if i > 0 {
                let mut dx = &d * self.layers[i].w.transpose();
                // Input of layer i is relu(pre); zero where it was clipped.
                dx.zip_apply(x, |g, v| {
                    if v <= 0.0 {
                        *g = 0.0;
                    }
                });
                d = dx;
            }
        }
    }

    fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn for_each_mut(&mut self, f: &mut dyn FnMut(&mut f64)) {
        for l in &mut self.layers {
            l.w.iter_mut().for_each(&mut *f);
            l.b.iter_mut().for_each(&mut *f);
        }
    }

    fn for_each(&self, f: &mut dyn FnMut(f64)) {
        for l in &self.layers {
            l.w.iter().for_each(|v| f(*v));
            l.b.iter().for_each(|v| f(*v));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaamShape {
    pub aff_hidden: [usize; 3],
    pub att_hidden: [usize; 2],
    pub d_sigma: usize,
    /// Without attention every channel weighs `1/16·D_a`.
    pub attention: bool,
}

impl Default for FaamShape {
    fn default() -> Self {
        Self { aff_hidden: [64, 64, 64], att_hidden: [96, 80], d_sigma: D_SIGMA, attention: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaamParams {
    pub aff: Mlp,
    pub att: Option<Mlp>,
    pub d_sigma: usize,
}

impl FaamParams {
    pub fn init(shape: &FaamShape, seed: u64) -> Self {
        let mut r = rng(seed);
        let [h1, h2, h3] = shape.aff_hidden;
        let aff = Mlp::new(&[D_A, h1, h2, h3, N_CHANNELS], &mut r);
        let att = shape.attention.then(|| {
            let [a1, a2] = shape.att_hidden;
            Mlp::new(&[shape.d_sigma, a1, a2, N_CHANNELS], &mut r)
        });
        Self { aff, att, d_sigma: shape.d_sigma }
    }

    fn zeros_like(&self) -> Self {
        Self { aff: self.aff.zeros_like(), att: self.att.as_ref().map(Mlp::zeros_like), d_sigma: self.d_sigma }
    }

    pub fn param_count(&self) -> usize {
        self.aff.param_count() + self.att.as_ref().map_or(0, Mlp::param_count)
    }

    /// All parameters in storage order.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.aff.for_each(&mut |v| out.push(v));
        if let Some(att) = &self.att {
            att.for_each(&mut |v| out.push(v));
        }
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::Shape(format!("{} values for {} parameters", values.len(), self.param_count())));
        }
        let mut it = values.iter();
        let mut put = |v: &mut f64| *v = *it.next().unwrap();
        self.aff.for_each_mut(&mut put);
        if let Some(att) = &mut self.att {
            att.for_each_mut(&mut put);
        }
        Ok(())
    }

    /// Softmax channel weights for one σ.
    pub fn channel_weights(&self, sigma: &[f64]) -> Result<DVector<f64>> {
        match &self.att {
            None => Ok(DVector::from_element(N_CHANNELS, 1.0 / N_CHANNELS as f64)),
            Some(att) => {
                self.check_sigma(sigma)?;
                let logits = att.eval(DMatrix::from_row_slice(1, sigma.len(), sigma));
                Ok(softmax(&logits.row(0).transpose()))
            }
        }
    }

    fn check_sigma(&self, sigma: &[f64]) -> Result<()> {
        if sigma.len() != self.d_sigma {
            return Err(Error::Shape(format!("σ has length {}, network expects {}", sigma.len(), self.d_sigma)));
        }
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(invalid("σ must be finite"));
        }
        Ok(())
    }
}

fn softmax(x: &DVector<f64>) -> DVector<f64> {
    let m = x.max();
    let e = x.map(|v| (v - m).exp());
    let s = e.sum();
    e / s
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy with `0·ln 0 = 0`.
pub fn bce(score: f64, label: f64) -> f64 {
    let term = |p: f64, q: f64| if p == 0.0 { 0.0 } else { -p * q.ln() };
    term(label, score) + term(1.0 - label, 1.0 - score)
}

/// BCE of `logistic(raw)` without forming the probability.
fn bce_logit(raw: f64, label: f64) -> f64 {
    raw.max(0.0) - raw * label + (-raw.abs()).exp().ln_1p()
}

fn z_matrix(z: &[AffinityFeature]) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(z.len(), D_A);
    for (i, f) in z.iter().enumerate() {
        let a = f.to_array();
        if a.iter().any(|v| !v.is_finite()) {
            return Err(invalid("affinity feature must be finite"));
        }
        for (j, v) in a.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    Ok(m)
}

/// Scores plus the intermediate values backpropagation needs.
pub struct ForwardCache {
    aff: MlpCache,
    att: Option<MlpCache>,
    f_aff: DMatrix<f64>,
    weights: DVector<f64>,
    raw: DVector<f64>,
}

/// Pair scores for features sharing one σ.
pub fn forward(z: &[AffinityFeature], sigma: &[f64], params: &FaamParams) -> Result<(Vec<f64>, ForwardCache)> {
    let x = z_matrix(z)?;
    let (f_aff, aff) = params.aff.forward(x);
    let (weights, att) = match &params.att {
        None => (DVector::from_element(N_CHANNELS, 1.0 / N_CHANNELS as f64), None),
        Some(net) => {
            params.check_sigma(sigma)?;
            let (logits, cache) = net.forward(DMatrix::from_row_slice(1, sigma.len(), sigma));
            (softmax(&logits.row(0).transpose()), Some(cache))
        }
    };
    let raw = &f_aff * &weights;
    let scores = raw.iter().map(|r| logistic(*r)).collect();
    Ok((scores, ForwardCache { aff, att, f_aff, weights, raw }))
}

/// Scores only.
pub fn score(z: &[AffinityFeature], sigma: &[f64], params: &FaamParams) -> Result<Vec<f64>> {
    Ok(forward(z, sigma, params)?.0)
}

/// Pairs sharing one σ, with labels and a loss mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGroup {
    pub z: Vec<AffinityFeature>,
    pub labels: Vec<f64>,
    pub mask: Vec<bool>,
    pub sigma: Vec<f64>,
}

impl PairGroup {
    pub fn active(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Learning rate λ_A.
    pub lr: f64,
    /// Steps per period τ.
    pub steps: usize,
    /// Loss weight β.
    pub beta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 0.05, steps: 60, beta: 1.0, seed: 17 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid("learning rate must be positive"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(invalid("beta must be non-negative"));
        }
        Ok(())
    }
}

/// `β · mean BCE` over the unmasked pairs of all groups, and its gradient.
/// Groups are reduced in order. With every pair masked the loss is 0 and
/// the gradient is zero.
pub fn loss_and_grad(params: &FaamParams, groups: &[PairGroup], beta: f64) -> Result<(f64, FaamParams)> {
    let mut grads = params.zeros_like();
    let total: usize = groups.iter().map(PairGroup::active).sum();
    if total == 0 {
        return Ok((0.0, grads));
    }
    let scale = beta / total as f64;
    let mut loss = 0.0;
    for g in groups {
        if g.labels.len() != g.z.len() || g.mask.len() != g.z.len() {
            return Err(Error::Shape("labels and mask must match the pairs".into()));
        }
        if g.active() == 0 {
            continue;
        }
        let (scores, cache) = forward(&g.z, &g.sigma, params)?;
        let mut d_raw = DVector::zeros(g.z.len());
        for p in 0..g.z.len() {
            if g.mask[p] {
                loss += scale * bce_logit(cache.raw[p], g.labels[p]);
                d_raw[p] = scale * (scores[p] - g.labels[p]);
            }
        }
        // raw = f_aff · w
        let d_aff = &d_raw * cache.weights.transpose();
        params.aff.backward(&cache.aff, d_aff, &mut grads.aff);
        if let (Some(net), Some(att_cache), Some(gnet)) = (&params.att, &cache.att, &mut grads.att) {
            let d_w = cache.f_aff.tr_mul(&d_raw);
            let w = &cache.weights;
            let dot = w.dot(&d_w);
            let d_logits = w.component_mul(&d_w.add_scalar(-dot));
            net.backward(att_cache, DMatrix::from_row_slice(1, N_CHANNELS, d_logits.as_slice()), gnet);
        }
    }
    Ok((loss, grads))
}

/// One plain SGD step over a batch; returns the pre-step loss.
pub fn train_step(params: &mut FaamParams, groups: &[PairGroup], lr: f64, beta: f64) -> Result<f64> {
    Sgd::new(params, 0.0).step(params, groups, lr, beta)
}

/// SGD with heavy-ball momentum (`momentum = 0` is plain SGD).
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(params: &FaamParams, momentum: f64) -> Self {
        Self { momentum, velocity: vec![0.0; params.param_count()] }
    }

    /// Applies one update and returns the pre-step loss.
    pub fn step(&mut self, params: &mut FaamParams, groups: &[PairGroup], lr: f64, beta: f64) -> Result<f64> {
        let (loss, grads) = loss_and_grad(params, groups, beta)?;
        let g = grads.flat();
        if g.len() != self.velocity.len() {
            return Err(Error::Shape("optimizer state does not match the network".into()));
        }
        for (v, gi) in self.velocity.iter_mut().zip(&g) {
            *v = self.momentum * *v + gi;
        }
        let mut it = self.velocity.iter();
        let mut apply = |w: &mut f64| *w -= lr * it.next().unwrap();
        params.aff.for_each_mut(&mut apply);
        if let Some(att) = &mut params.att {
            att.for_each_mut(&mut apply);
        }
        Ok(loss)
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FAAM0001";

/// Binary checkpoint: magic, `u32` D_a, `u32` D_σ, `u32` attention flag,
/// then for each network a `u32` layer count and `(in, out)` pairs, then
/// every weight and bias as little-endian `f64` in storage order.
pub fn write_checkpoint(params: &FaamParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let put = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    put(&mut out, D_A);
    put(&mut out, params.d_sigma);
    put(&mut out, usize::from(params.att.is_some()));
    for net in std::iter::once(&params.aff).chain(params.att.as_ref()) {
        put(&mut out, net.layers.len());
        for (i, o) in net.shapes() {
            put(&mut out, i);
            put(&mut out, o);
        }
    }
    for v in params.flat() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<FaamParams> {
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Format("checkpoint lacks FAAM0001 header".into()));
    }
    let mut pos = 8;
    let mut next = || -> Result<usize> {
        let b = bytes
            .get(pos..pos + 4)
            .ok_or_else(|| Error::Format("truncated checkpoint header".into()))?;
        pos += 4;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    };
    let d_a = next()?;
    if d_a != D_A {
        return Err(Error::Format(format!("checkpoint has D_a = {d_a}, expected {D_A}")));
    }
    let d_sigma = next()?;
    let has_att = next()? != 0;
    let read_net = |next: &mut dyn FnMut() -> Result<usize>| -> Result<Mlp> {
        let n = next()?;
        if n == 0 || n > 64 {
            return Err(Error::Format(format!("implausible layer count {n}")));
        }
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let (i, o) = (next()?, next()?);
            layers.push(Dense::zeros(i, o));
        }
        if layers.windows(2).any(|w| w[0].output() != w[1].input()) {
            return Err(Error::Format("inconsistent layer shapes".into()));
        }
        Ok(Mlp { layers })
    };
    let aff = read_net(&mut next)?;
    let att = if has_att { Some(read_net(&mut next)?) } else { None };
    drop(next);
    if aff.input() != D_A || aff.output() != N_CHANNELS {
        return Err(Error::Format("affinity network has the wrong endpoints".into()));
    }
    if let Some(a) = &att {
        if a.input() != d_sigma || a.output() != N_CHANNELS {
            return Err(Error::Format("attention network has the wrong endpoints".into()));
        }
    }
    let mut params = FaamParams { aff, att, d_sigma };
    let header = 8 + 12 + 4 * (1 + 2 * params.aff.layers.len()) + params.att.as_ref().map_or(0, |a| 4 * (1 + 2 * a.layers.len()));
    let body = &bytes[header..];
    if body.len() != 8 * params.param_count() {
        return Err(Error::Format(format!(
            "checkpoint body holds {} bytes, expected {}",
            body.len(),
            8 * params.param_count()
        )));
    }
    let values: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    params.set_flat(&values)?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn feat(d: f64, i: f64, c: f64, l: f64) -> AffinityFeature {
        AffinityFeature { norm_dist: d, iou: i, cos_sim: c, level: l }
    }

    #[test]
    fn known_encoding() {
        let s = encode_known(2.0, 1.0, 4).unwrap();
        let expect = [1.0, 0.5f64.cos(), 1.0f64.cos(), 1.5f64.cos()];
        for (a, b) in s.values.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(encode_known(13.7, DEFAULT_S, D_SIGMA).unwrap().values[0], 1.0);
        assert!(encode_known(0.0, 1.0, 4).is_err());
        assert!(encode_known(-3.0, 1.0, 4).is_err());
    }

    #[test]
    fn known_encoding_separates_rates() {
        let a = encode_known(25.0, DEFAULT_S, D_SIGMA).unwrap().values;
        let b = encode_known(1.0, DEFAULT_S, D_SIGMA).unwrap().values;
        let d = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        // Recorded value for the defaults.
        assert!(d > 0.1);
        assert!((d - GOLDEN_RATE_DISTANCE).abs() < 1e-9, "{d}");
    }

    const GOLDEN_RATE_DISTANCE: f64 = 11.225955180959843;

    fn bxs(xs: &[(f64, f64)]) -> Vec<BoundingBox> {
        xs.iter().map(|&(x, y)| BoundingBox::new(x, y, 10.0, 20.0).unwrap()).collect()
    }

    #[test]
    fn ibdv_cases() {
        let dims = (100.0, 100.0);
        let a = bxs(&[(0.0, 0.0), (50.0, 50.0)]);
        let e = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let v = FrameView { boxes: &a, embeddings: &e };
        for c in [IbdvCriterion::Dist, IbdvCriterion::Sim] {
            let s = encode_ibdv(v, v, c, 8, dims, 0).unwrap();
            assert!(s.values.iter().all(|x| *x == 0.0));
        }
        let one_a = bxs(&[(0.0, 0.0)]);
        let one_b = bxs(&[(30.0, 0.0)]);
        let s = encode_ibdv(
            FrameView { boxes: &one_a, embeddings: &[] },
            FrameView { boxes: &one_b, embeddings: &[] },
            IbdvCriterion::Dist,
            4,
            dims,
            0,
        )
        .unwrap();
        assert_eq!(s.values.len(), 4);
        assert!(s.values.iter().all(|x| (x - 0.3).abs() < 1e-12));
        let empty = encode_ibdv(
            FrameView { boxes: &[], embeddings: &[] },
            FrameView { boxes: &one_b, embeddings: &[] },
            IbdvCriterion::Dist,
            5,
            dims,
            0,
        )
        .unwrap();
        assert_eq!(empty.values, vec![1.0; 5]);
    }

    #[test]
    fn ibdv_interpolation() {
        assert_eq!(interpolate(&[0.1, 0.4], 3), vec![0.1, 0.25, 0.4]);
        let v = interpolate(&[0.0, 1.0, 2.0, 3.0], 7);
        assert_eq!(v, vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0]);
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for n in 2..40 {
            let mut d: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
            d.sort_by(f64::total_cmp);
            assert!(interpolate(&d, 128).windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn trivial_score_cases() {
        assert_eq!(trivial_score(&feat(0.0, 1.0, 1.0, 0.0)), 1.0);
        assert_eq!(trivial_score(&feat(0.3, 0.0, -1.0, 1.0)), 0.0);
        assert!(trivial_score(&feat(0.0, 0.6, 0.2, 0.0)) >= trivial_score(&feat(0.0, 0.5, 0.2, 0.0)));
    }

    fn sample_z(n: usize, seed: u64) -> Vec<AffinityFeature> {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                feat(
                    r.random_range(0.0..0.5),
                    r.random_range(0.0..1.0),
                    r.random_range(-1.0..1.0),
                    f64::from(r.random_range(0..2u8)),
                )
            })
            .collect()
    }

    #[test]
    fn zero_affinity_network_gives_half() {
        let mut p = FaamParams::init(&FaamShape::default(), 3);
        p.aff.for_each_mut(&mut |v| *v = 0.0);
        let sigma = encode_known(25.0, DEFAULT_S, D_SIGMA).unwrap().values;
        let s = score(&sample_z(5, 1), &sigma, &p).unwrap();
        assert!(s.iter().all(|v| *v == 0.5));
    }

    #[test]
    fn constant_attention_is_a_mean() {
        let mut p = FaamParams::init(&FaamShape::default(), 3);
        // Zero the last attention layer so every logit equals its bias.
        let last = p.att.as_mut().unwrap().layers.last_mut().unwrap();
        last.w.fill(0.0);
        last.b.fill(0.7);
        let sigma = encode_known(5.0, DEFAULT_S, D_SIGMA).unwrap().values;
        let z = sample_z(4, 2);
        let (s, cache) = forward(&z, &sigma, &p).unwrap();
        for i in 0..z.len() {
            let mean = cache.f_aff.row(i).mean();
            assert!((cache.raw[i] - mean).abs() < 1e-12);
            assert!((s[i] - logistic(mean)).abs() < 1e-12);
        }
        assert!((cache.weights.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scores_are_open_unit_interval() {
        let p = FaamParams::init(&FaamShape::default(), 9);
        let sigma = encode_known(1.0, DEFAULT_S, D_SIGMA).unwrap().values;
        let s = score(&sample_z(50, 4), &sigma, &p).unwrap();
        assert!(s.iter().all(|v| *v > 0.0 && *v < 1.0));
        assert!(score(&sample_z(2, 4), &sigma[..10], &p).is_err());
    }

    #[test]
    fn bce_cases() {
        assert_eq!(bce(1.0, 1.0), 0.0);
        assert_eq!(bce(0.0, 0.0), 0.0);
        assert!((bce(0.5, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce_logit(0.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        for r in [-8.0, -2.0, 0.3, 5.0, 8.0] {
            for y in [0.0, 1.0] {
                let direct = bce(logistic(r), y);
                assert!((bce_logit(r, y) - direct).abs() < 1e-9 * direct.max(1.0));
            }
        }
    }

    #[test]
    fn single_pair_loss_is_beta_ln2() {
        let mut p = FaamParams::init(&FaamShape::default(), 3);
        p.aff.for_each_mut(&mut |v| *v = 0.0);
        let sigma = encode_known(25.0, DEFAULT_S, D_SIGMA).unwrap().values;
        let g = PairGroup { z: sample_z(1, 0), labels: vec![1.0], mask: vec![true], sigma };
        let (loss, _) = loss_and_grad(&p, &[g], 2.5).unwrap();
        assert!((loss - 2.5 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn fully_masked_step_is_noop() {
        let mut p = FaamParams::init(&FaamShape::default(), 3);
        let before = p.clone();
        let sigma = encode_known(25.0, DEFAULT_S, D_SIGMA).unwrap().values;
        let g = PairGroup { z: sample_z(3, 0), labels: vec![0.0; 3], mask: vec![false; 3], sigma };
        let loss = train_step(&mut p, &[g], 0.1, 1.0).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(p, before);
    }

    #[test]
    fn checkpoint_round_trip() {
        for attention in [true, false] {
            let p = FaamParams::init(&FaamShape { attention, ..FaamShape::default() }, 5);
            let bytes = write_checkpoint(&p);
            assert_eq!(&bytes[..8], b"FAAM0001");
            assert_eq!(read_checkpoint(&bytes).unwrap(), p);
            assert!(read_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        }
        assert!(read_checkpoint(b"FAAM0002").is_err());
    }

    #[test]
    fn training_reduces_loss() {
        let mut p = FaamParams::init(&FaamShape::default(), 11);
        let sigma = encode_known(12.5, DEFAULT_S, D_SIGMA).unwrap().values;
        let z = sample_z(64, 8);
        let labels = z.iter().map(|f| f64::from(u8::from(f.iou > 0.5))).collect();
        let g = PairGroup { mask: vec![true; z.len()], z, labels, sigma };
        let lr = 0.2;
        let mut opt = Sgd::new(&p, 0.9);
        let first = opt.step(&mut p, std::slice::from_ref(&g), lr, 1.0).unwrap();
        let mut last = first;
        for _ in 0..200 {
            last = opt.step(&mut p, std::slice::from_ref(&g), lr, 1.0).unwrap();
        }
        assert!(last < 0.2 * first, "{first} -> {last}");
    }
}
