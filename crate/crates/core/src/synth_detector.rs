//! Seeded stand-in for a learned detector with an appearance branch.
//!
//! Ground-truth boxes are dropped, jittered and scored; Poisson clutter is
//! added; every box gets a unit-norm embedding. True embeddings are noisy
//! copies of a per-identity prototype held in an [`IdentityBank`].

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::mot_io::{BoundingBox, Detection, Sequence};
use crate::seeding::{derive, rng};

/// Confidence draws are clamped into this range.
pub const CONF_MIN: f64 = 0.05;
pub const CONF_MAX: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Center shift std as a fraction of box width/height.
    pub center_jitter: f64,
    /// Std of the log-scale size perturbation.
    pub size_jitter: f64,
    pub miss_prob: f64,
    /// Expected false positives per frame.
    pub fp_rate: f64,
    /// `(mean, std)` of true-detection confidence.
    pub conf_true: (f64, f64),
    /// `(mean, std)` of false-detection confidence.
    pub conf_false: (f64, f64),
    /// Per-dimension std added to the identity prototype.
    pub embed_noise: f64,
}

impl NoiseModel {
    /// Perfect detector: boxes equal ground truth, embeddings equal the
    /// prototypes.
    pub fn zero() -> Self {
        Self {
            center_jitter: 0.0,
            size_jitter: 0.0,
            miss_prob: 0.0,
            fp_rate: 0.0,
            conf_true: (0.8, 0.0),
            conf_false: (0.3, 0.0),
            embed_noise: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let stds = [
            self.center_jitter,
            self.size_jitter,
            self.conf_true.1,
            self.conf_false.1,
            self.embed_noise,
        ];
        if stds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(invalid("noise standard deviations must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.miss_prob) && self.miss_prob != 1.0 {
            return Err(invalid("miss_prob must lie in [0, 1]"));
        }
        if !(self.fp_rate.is_finite() && self.fp_rate >= 0.0) {
            return Err(invalid("fp_rate must be non-negative"));
        }
        if !(self.conf_true.0 > 0.0 && self.conf_true.0 <= 1.0) {
            return Err(invalid("conf_true mean must lie in (0, 1]"));
        }
        Ok(())
    }
}

impl Default for NoiseModel {
    /// Moderate noise used by the synthetic benchmark.
    fn default() -> Self {
        Self {
            center_jitter: 0.04,
            size_jitter: 0.05,
            miss_prob: 0.05,
            fp_rate: 0.5,
            conf_true: (0.75, 0.15),
            conf_false: (0.3, 0.12),
            embed_noise: 0.2,
        }
    }
}

/// Unit-norm appearance prototype per identity.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityBank {
    dim: usize,
    vectors: BTreeMap<u32, Vec<f64>>,
}

impl IdentityBank {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, id: u32) -> Option<&[f64]> {
        self.vectors.get(&id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &[f64])> {
        self.vectors.iter().map(|(id, v)| (*id, v.as_slice()))
    }
}

pub fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn random_unit<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if v.iter().any(|x| *x != 0.0) {
            normalize(&mut v);
            return v;
        }
    }
}

/// One prototype per identity. Each vector depends only on `(seed, id)`.
pub fn make_identity_bank(
    identities: impl IntoIterator<Item = u32>,
    d_embed: usize,
    seed: u64,
) -> Result<IdentityBank> {
    if d_embed < 2 {
        return Err(invalid("embedding dimension must be at least 2"));
    }
    let vectors = identities
        .into_iter()
        .map(|id| {
            let mut r = rng(derive(seed, u64::from(id)));
            (id, random_unit(&mut r, d_embed))
        })
        .collect();
    Ok(IdentityBank { dim: d_embed, vectors })
}

/// Detector output for one frame. `oracle_ids[i]` is the ground-truth
/// identity behind detection `i`, or `None` for clutter; it is only used to
/// label training pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameDetections {
    pub detections: Vec<Detection>,
    pub embeddings: Vec<Vec<f64>>,
    pub oracle_ids: Vec<Option<u32>>,
}

impl FrameDetections {
    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    /// Keeps entries whose confidence is at least `min_conf`.
    pub fn filtered(&self, min_conf: f64) -> FrameDetections {
        let mut out = FrameDetections::default();
        for i in 0..self.len() {
            if self.detections[i].conf >= min_conf {
                out.detections.push(self.detections[i]);
                out.embeddings.push(self.embeddings[i].clone());
                out.oracle_ids.push(self.oracle_ids[i]);
            }
        }
        out
    }
}

fn draw_conf<R: Rng>(rng: &mut R, (mean, std): (f64, f64)) -> f64 {
    let v = if std > 0.0 {
        mean + std * rng.sample::<f64, _>(StandardNormal)
    } else {
        mean
    };
    v.clamp(CONF_MIN, CONF_MAX)
}

/// Simulates the detector on one frame.
pub fn detect_frame(
    gt_boxes: &[(u32, BoundingBox)],
    noise: &NoiseModel,
    bank: &IdentityBank,
    seed: u64,
    frame: u32,
    image: (f64, f64),
) -> Result<FrameDetections> {
    noise.validate()?;
    let mut r = rng(derive(seed, u64::from(frame)));
    let mut out = FrameDetections::default();
    for (id, gt) in gt_boxes {
        if noise.miss_prob > 0.0 && r.random::<f64>() < noise.miss_prob {
            continue;
        }
        let bbox = if noise.center_jitter > 0.0 || noise.size_jitter > 0.0 {
            let (cx, cy) = gt.center();
            let cx = cx + noise.center_jitter * gt.w * r.sample::<f64, _>(StandardNormal);
            let cy = cy + noise.center_jitter * gt.h * r.sample::<f64, _>(StandardNormal);
            let w = gt.w * (noise.size_jitter * r.sample::<f64, _>(StandardNormal)).exp();
            let h = gt.h * (noise.size_jitter * r.sample::<f64, _>(StandardNormal)).exp();
            BoundingBox { x: cx - 0.5 * w, y: cy - 0.5 * h, w, h }
        } else {
            *gt
        };
        let proto = bank
            .get(*id)
            .ok_or_else(|| Error::Validation(format!("identity {id} missing from bank")))?;
        let embedding = if noise.embed_noise > 0.0 {
            let mut e: Vec<f64> = proto
                .iter()
                .map(|x| x + noise.embed_noise * r.sample::<f64, _>(StandardNormal))
                .collect();
            normalize(&mut e);
            e
        } else {
            proto.to_vec()
        };
        out.detections.push(Detection { bbox, conf: draw_conf(&mut r, noise.conf_true) });
        out.embeddings.push(embedding);
        out.oracle_ids.push(Some(*id));
    }
    if noise.fp_rate > 0.0 {
        let count = Poisson::new(noise.fp_rate)
            .map_err(|e| invalid(e.to_string()))?
            .sample(&mut r) as usize;
        let (width, height) = image;
        for _ in 0..count {
            let h = r.random_range(0.07..=0.19) * height;
            let w = (0.41 * h).min(0.5 * width);
            let bbox = BoundingBox {
                x: r.random_range(0.0..=(width - w).max(0.0)),
                y: r.random_range(0.0..=(height - h).max(0.0)),
                w,
                h,
            };
            out.detections.push(Detection { bbox, conf: draw_conf(&mut r, noise.conf_false) });
            out.embeddings.push(random_unit(&mut r, bank.dim()));
            out.oracle_ids.push(None);
        }
    }
    Ok(out)
}

/// Runs [`detect_frame`] over every frame of a sequence (index 0 is frame 1).
pub fn detect_sequence(
    seq: &Sequence,
    noise: &NoiseModel,
    bank: &IdentityBank,
    seed: u64,
) -> Result<Vec<FrameDetections>> {
    let image = (seq.width, seq.height);
    seq.frame_boxes()
        .iter()
        .enumerate()
        .map(|(i, boxes)| detect_frame(boxes, noise, bank, seed, i as u32 + 1, image))
        .collect()
}

pub const EMBED_MAGIC: &[u8; 8] = b"FRAEMB01";

/// Sidecar layout: magic, `u32` count, `u32` dim, then `count * dim`
/// little-endian `f32` values, row-major in det.txt row order.
pub fn write_embeddings(rows: &[Vec<f64>]) -> Result<Vec<u8>> {
    let dim = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Shape("embeddings of different lengths".into()));
    }
    let mut out = Vec::with_capacity(16 + 4 * rows.len() * dim);
    out.extend_from_slice(EMBED_MAGIC);
    out.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for v in rows.iter().flatten() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Reads a sidecar; rows are renormalized after the `f32` round trip.
pub fn read_embeddings(bytes: &[u8]) -> Result<Vec<Vec<f64>>> {
    if bytes.len() < 16 || &bytes[..8] != EMBED_MAGIC {
        return Err(Error::Format("embedding sidecar lacks FRAEMB01 header".into()));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() != 4 * count * dim {
        return Err(Error::Format(format!(
            "sidecar holds {} bytes, header promises {count}x{dim} floats",
            body.len()
        )));
    }
    Ok(body
        .chunks_exact(4 * dim.max(1))
        .take(count)
        .map(|row| {
            let mut v: Vec<f64> = row
                .chunks_exact(4)
                .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
                .collect();
            normalize(&mut v);
            v
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_norm(v: &[f64]) -> bool {
        (v.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-9
    }

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn single_identity_bank() {
        let bank = make_identity_bank([4], 8, 1).unwrap();
        assert_eq!(bank.len(), 1);
        assert!(unit_norm(bank.get(4).unwrap()));
    }

    #[test]
    fn small_dimension_rejected() {
        assert!(make_identity_bank([1], 1, 1).is_err());
    }

    #[test]
    fn bank_of_hundred_is_spread() {
        let bank = make_identity_bank(1..=100, 32, 7).unwrap();
        let vs: Vec<_> = bank.iter().map(|(_, v)| v.to_vec()).collect();
        assert!(vs.iter().all(|v| unit_norm(v)));
        let mut max_cos = f64::MIN;
        let mut min_cos = f64::MAX;
        for i in 0..vs.len() {
            for j in i + 1..vs.len() {
                let c = cos(&vs[i], &vs[j]);
                max_cos = max_cos.max(c);
                min_cos = min_cos.min(c);
            }
        }
        assert!(min_cos < 0.9);
        // Golden values for seed 7, recorded from the first run.
        assert!(max_cos < 0.9, "max pairwise cosine {max_cos}");
        assert!((max_cos - GOLDEN_MAX_COS).abs() < 1e-12, "max pairwise cosine {max_cos}");
    }

    const GOLDEN_MAX_COS: f64 = 0.5621423995490544;

    #[test]
    fn bank_vector_independent_of_listing() {
        let a = make_identity_bank([1, 2, 3], 16, 5).unwrap();
        let b = make_identity_bank([3, 9], 16, 5).unwrap();
        assert_eq!(a.get(3), b.get(3));
    }

    fn boxes() -> Vec<(u32, BoundingBox)> {
        vec![
            (1, BoundingBox::new(10.0, 10.0, 20.0, 50.0).unwrap()),
            (2, BoundingBox::new(200.0, 100.0, 30.0, 70.0).unwrap()),
        ]
    }

    #[test]
    fn zero_noise_reproduces_ground_truth() {
        let bank = make_identity_bank([1, 2], 16, 3).unwrap();
        let nm = NoiseModel::zero();
        let fd = detect_frame(&boxes(), &nm, &bank, 11, 4, (640.0, 480.0)).unwrap();
        assert_eq!(fd.len(), 2);
        for (i, (id, b)) in boxes().iter().enumerate() {
            assert_eq!(fd.detections[i].bbox, *b);
            assert_eq!(fd.detections[i].conf, nm.conf_true.0);
            assert_eq!(fd.embeddings[i].as_slice(), bank.get(*id).unwrap());
            assert_eq!(fd.oracle_ids[i], Some(*id));
        }
    }

    #[test]
    fn certain_miss_leaves_only_clutter() {
        let bank = make_identity_bank([1, 2], 16, 3).unwrap();
        let nm = NoiseModel { miss_prob: 1.0, fp_rate: 3.0, ..NoiseModel::default() };
        for frame in 1..20 {
            let fd = detect_frame(&boxes(), &nm, &bank, 11, frame, (640.0, 480.0)).unwrap();
            assert!(fd.oracle_ids.iter().all(Option::is_none));
        }
    }

    #[test]
    fn empirical_miss_rate() {
        let bank = make_identity_bank([1, 2], 16, 3).unwrap();
        let nm = NoiseModel { miss_prob: 0.1, fp_rate: 0.0, ..NoiseModel::default() };
        let mut kept = 0usize;
        let frames = 5000u32;
        for frame in 1..=frames {
            kept += detect_frame(&boxes(), &nm, &bank, 99, frame, (640.0, 480.0)).unwrap().len();
        }
        let total = 2 * frames as usize;
        let dropped = 1.0 - kept as f64 / total as f64;
        assert!((dropped - 0.1).abs() < 0.01, "drop fraction {dropped}");
    }

    #[test]
    fn deterministic_and_unit_norm() {
        let bank = make_identity_bank([1, 2], 16, 3).unwrap();
        let nm = NoiseModel::default();
        let a = detect_frame(&boxes(), &nm, &bank, 5, 9, (640.0, 480.0)).unwrap();
        let b = detect_frame(&boxes(), &nm, &bank, 5, 9, (640.0, 480.0)).unwrap();
        assert_eq!(a, b);
        assert!(a.embeddings.iter().all(|e| unit_norm(e)));
        assert!(a.detections.iter().all(|d| (CONF_MIN..=CONF_MAX).contains(&d.conf)));
    }

    #[test]
    fn sidecar_round_trip() {
        let rows = vec![vec![0.6, 0.8], vec![1.0, 0.0]];
        let bytes = write_embeddings(&rows).unwrap();
        assert_eq!(&bytes[..8], b"FRAEMB01");
        assert_eq!(bytes.len(), 16 + 4 * 4);
        let back = read_embeddings(&bytes).unwrap();
        for (a, b) in back.iter().zip(&rows) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-6);
            }
        }
        assert!(read_embeddings(b"FRAEMB00\0\0\0\0\0\0\0\0").is_err());
        assert!(read_embeddings(&bytes[..20]).is_err());
    }
}
