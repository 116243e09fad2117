//! Pairwise affinity features `Z = (norm_dist, iou, cos_sim, level)`.
//!
//! At inference time rows come straight from tracking patterns. At training
//! time the frame-`T` detections are first matched to the patterns recorded
//! at `T` and fused with them, so the rows look like what the tracker would
//! hold.

use crate::error::{Error, Result};
use crate::mot_io::{BoundingBox, BoxOffset, Detection};

/// Length of an affinity feature.
pub const D_A: usize = 4;

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.right().min(b.right()) - a.x.max(b.x)).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Center distance with each axis divided by the image size.
pub fn normalized_distance(a: &BoundingBox, b: &BoundingBox, image_w: f64, image_h: f64) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    ((ax - bx) / image_w).hypot((ay - by) / image_h)
}

/// Dot product of unit vectors, clamped to `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0)
}

/// What the tracker held for one live trajectory at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingPattern {
    /// Last associated or propagated box.
    pub p_loc: BoundingBox,
    /// Kalman-predicted movement to the next frame.
    pub p_pred: BoxOffset,
    /// Cached appearance, unit norm.
    pub p_apr: Vec<f64>,
    /// Stage of the last match; 1 for new tracks.
    pub p_lvl: u8,
    pub frame: u32,
    pub sampling_k: u32,
    pub trajectory_id: u32,
    /// Ground-truth identity of the trajectory's last labelled observation.
    pub oracle_id: Option<u32>,
}

impl TrackingPattern {
    pub fn propagated(&self) -> BoundingBox {
        self.p_loc.shifted(&self.p_pred)
    }

    pub fn level_feature(&self) -> f64 {
        f64::from(self.p_lvl.saturating_sub(1).min(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AffinityFeature {
    pub norm_dist: f64,
    pub iou: f64,
    pub cos_sim: f64,
    pub level: f64,
}

impl AffinityFeature {
    pub fn to_array(self) -> [f64; D_A] {
        [self.norm_dist, self.iou, self.cos_sim, self.level]
    }

    pub fn between(a: &BoundingBox, fa: &[f64], b: &BoundingBox, fb: &[f64], level: f64, dims: (f64, f64)) -> Self {
        Self {
            norm_dist: normalized_distance(a, b, dims.0, dims.1),
            iou: iou(a, b),
            cos_sim: cosine(fa, fb),
            level,
        }
    }
}

/// Row-major `rows × cols` feature grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ZMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<AffinityFeature>,
}

impl ZMatrix {
    pub fn get(&self, r: usize, c: usize) -> &AffinityFeature {
        &self.data[r * self.cols + c]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Index into the frame-`T` detections.
    Detection(usize),
    /// Index into the pattern list.
    Pattern(usize),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FusedSet {
    pub boxes: Vec<BoundingBox>,
    pub provenance: Vec<Provenance>,
    pub embeddings: Vec<Vec<f64>>,
    /// Encoded level feature, `p_lvl - 1`.
    pub levels: Vec<f64>,
    pub oracle_ids: Vec<Option<u32>>,
}

impl FusedSet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    fn push(&mut self, b: BoundingBox, p: Provenance, e: &[f64], level: f64, id: Option<u32>) {
        self.boxes.push(b);
        self.provenance.push(p);
        self.embeddings.push(e.to_vec());
        self.levels.push(level);
        self.oracle_ids.push(id);
    }

    /// Raw detections as rows: no movement, level 0. Used when training
    /// without patterns.
    pub fn from_detections(dets: &[Detection], embeddings: &[Vec<f64>], oracle_ids: &[Option<u32>]) -> Result<Self> {
        check_lengths(dets.len(), embeddings.len(), Some(oracle_ids.len()))?;
        let mut out = FusedSet::default();
        for (i, d) in dets.iter().enumerate() {
            out.push(d.bbox, Provenance::Detection(i), &embeddings[i], 0.0, oracle_ids[i]);
        }
        Ok(out)
    }
}

fn check_lengths(boxes: usize, embeddings: usize, ids: Option<usize>) -> Result<()> {
    if boxes != embeddings || ids.is_some_and(|n| n != boxes) {
        return Err(Error::Validation(format!(
            "{boxes} boxes but {embeddings} embeddings{}",
            ids.map(|n| format!(" and {n} labels")).unwrap_or_default()
        )));
    }
    Ok(())
}

/// Matches frame-`T` detections to the patterns recorded at `T` and fuses
/// them. A detection claims its highest-IoU pattern when that IoU exceeds
/// `iou_threshold`; claims are granted in descending IoU order, one
/// detection per pattern. Rows follow pattern order.
pub fn match_and_fuse(
    dets: &[Detection],
    embeddings: &[Vec<f64>],
    oracle_ids: &[Option<u32>],
    patterns: &[TrackingPattern],
    iou_threshold: f64,
) -> Result<FusedSet> {
    check_lengths(dets.len(), embeddings.len(), Some(oracle_ids.len()))?;
    let mut claims: Vec<(f64, usize, usize)> = Vec::new();
    for (d, det) in dets.iter().enumerate() {
        let best = patterns
            .iter()
            .enumerate()
            .map(|(p, pat)| (iou(&det.bbox, &pat.p_loc), p))
            .fold(None, |acc: Option<(f64, usize)>, x| match acc {
                Some(a) if a.0 >= x.0 => Some(a),
                _ => Some(x),
            });
        if let Some((v, p)) = best {
            if v > iou_threshold {
                claims.push((v, d, p));
            }
        }
    }
    claims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut owner: Vec<Option<usize>> = vec![None; patterns.len()];
    for (_, d, p) in claims {
        if owner[p].is_none() {
            owner[p] = Some(d);
        }
    }
    let mut out = FusedSet::default();
    for (p, pat) in patterns.iter().enumerate() {
        let level = pat.level_feature();
        match owner[p] {
            Some(d) => out.push(
                dets[d].bbox.shifted(&pat.p_pred),
                Provenance::Detection(d),
                &embeddings[d],
                level,
                oracle_ids[d],
            ),
            None => out.push(pat.propagated(), Provenance::Pattern(p), &pat.p_apr, level, pat.oracle_id),
        }
    }
    Ok(out)
}

/// Training pairs: features, 0/1 labels and a mask that drops pairs where
/// both sides are false detections.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelledPairs {
    pub z: ZMatrix,
    pub labels: Vec<f64>,
    pub mask: Vec<bool>,
}

impl LabelledPairs {
    pub fn active(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

pub fn affinity_train(
    fused: &FusedSet,
    next: &[Detection],
    next_embeddings: &[Vec<f64>],
    next_oracle: &[Option<u32>],
    dims: (f64, f64),
) -> Result<LabelledPairs> {
    check_lengths(fused.boxes.len(), fused.embeddings.len(), Some(fused.oracle_ids.len()))?;
    check_lengths(next.len(), next_embeddings.len(), Some(next_oracle.len()))?;
    check_dims(fused.embeddings.iter().chain(next_embeddings))?;
    let (rows, cols) = (fused.len(), next.len());
    let mut out = LabelledPairs {
        z: ZMatrix { rows, cols, data: Vec::with_capacity(rows * cols) },
        labels: Vec::with_capacity(rows * cols),
        mask: Vec::with_capacity(rows * cols),
    };
    for i in 0..rows {
        for j in 0..cols {
            out.z.data.push(AffinityFeature::between(
                &fused.boxes[i],
                &fused.embeddings[i],
                &next[j].bbox,
                &next_embeddings[j],
                fused.levels[i],
                dims,
            ));
            let (label, keep) = match (fused.oracle_ids[i], next_oracle[j]) {
                (Some(a), Some(b)) => (f64::from(u8::from(a == b)), true),
                (None, None) => (0.0, false),
                _ => (0.0, true),
            };
            out.labels.push(label);
            out.mask.push(keep);
        }
    }
    Ok(out)
}

fn check_dims<'a>(mut vs: impl Iterator<Item = &'a Vec<f64>>) -> Result<()> {
    if let Some(first) = vs.next() {
        let d = first.len();
        if vs.any(|v| v.len() != d) {
            return Err(Error::Validation("embeddings of different dimensions".into()));
        }
    }
    Ok(())
}

pub fn affinity_infer(
    patterns: &[TrackingPattern],
    next: &[Detection],
    next_embeddings: &[Vec<f64>],
    dims: (f64, f64),
) -> Result<ZMatrix> {
    check_lengths(next.len(), next_embeddings.len(), None)?;
    check_dims(patterns.iter().map(|p| &p.p_apr).chain(next_embeddings))?;
    let (rows, cols) = (patterns.len(), next.len());
    let mut data = Vec::with_capacity(rows * cols);
    for p in patterns {
        let b = p.propagated();
        let level = p.level_feature();
        for j in 0..cols {
            data.push(AffinityFeature::between(&b, &p.p_apr, &next[j].bbox, &next_embeddings[j], level, dims));
        }
    }
    Ok(ZMatrix { rows, cols, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    fn det(b: BoundingBox) -> Detection {
        Detection { bbox: b, conf: 0.9 }
    }

    fn pattern(b: BoundingBox, e: Vec<f64>, lvl: u8, id: Option<u32>) -> TrackingPattern {
        TrackingPattern {
            p_loc: b,
            p_pred: BoxOffset::default(),
            p_apr: e,
            p_lvl: lvl,
            frame: 1,
            sampling_k: 1,
            trajectory_id: 1,
            oracle_id: id,
        }
    }

    #[test]
    fn iou_cases() {
        let a = bx(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(5.0, 5.0, 1.0, 1.0)), 0.0);
        assert!((iou(&a, &bx(1.0, 1.0, 2.0, 2.0)) - 1.0 / 7.0).abs() < 1e-15);
        assert_eq!(iou(&a, &bx(2.0, 0.0, 2.0, 2.0)), 0.0);
    }

    #[test]
    fn distance_cases() {
        let (w, h) = (100.0, 50.0);
        let a = bx(10.0, 10.0, 4.0, 4.0);
        assert_eq!(normalized_distance(&a, &a, w, h), 0.0);
        let tl = bx(-1.0, -1.0, 2.0, 2.0);
        let br = bx(w - 1.0, h - 1.0, 2.0, 2.0);
        assert!((normalized_distance(&tl, &br, w, h) - 2f64.sqrt()).abs() < 1e-12);
        let b = bx(10.0 + 0.3 * w, 10.0 + 0.4 * h, 4.0, 4.0);
        assert!((normalized_distance(&a, &b, w, h) - 0.5).abs() < 1e-12);
        assert_eq!(normalized_distance(&a, &b, w, h), normalized_distance(&b, &a, w, h));
    }

    #[test]
    fn matched_detection_is_moved_by_prediction() {
        let p_box = bx(0.0, 0.0, 10.0, 10.0);
        let mut p = pattern(p_box, vec![1.0, 0.0], 2, Some(4));
        p.p_pred = BoxOffset { dx: 3.0, dy: 1.0, dw: 0.0, dh: 0.0 };
        // IoU = 80/100 after shrinking width to 8.
        let d = bx(0.0, 0.0, 8.0, 10.0);
        assert!((iou(&d, &p_box) - 0.8).abs() < 1e-12);
        let f = match_and_fuse(&[det(d)], &[vec![0.0, 1.0]], &[Some(5)], &[p], 0.7).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f.provenance[0], Provenance::Detection(0));
        assert_eq!(f.boxes[0], bx(3.0, 1.0, 8.0, 10.0));
        assert_eq!(f.embeddings[0], vec![0.0, 1.0]);
        assert_eq!(f.levels[0], 1.0);
        assert_eq!(f.oracle_ids[0], Some(5));
    }

    #[test]
    fn weak_detection_is_discarded() {
        let p_box = bx(0.0, 0.0, 10.0, 10.0);
        let mut p = pattern(p_box, vec![1.0, 0.0], 1, Some(4));
        p.p_pred = BoxOffset { dx: 2.0, dy: 0.0, dw: 0.0, dh: 0.0 };
        let d = bx(0.0, 0.0, 5.0, 10.0);
        assert!((iou(&d, &p_box) - 0.5).abs() < 1e-12);
        let f = match_and_fuse(&[det(d)], &[vec![0.0, 1.0]], &[Some(5)], &[p], 0.7).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f.provenance[0], Provenance::Pattern(0));
        assert_eq!(f.boxes[0], bx(2.0, 0.0, 10.0, 10.0));
        assert_eq!(f.embeddings[0], vec![1.0, 0.0]);
        assert_eq!(f.oracle_ids[0], Some(4));
        assert_eq!(f.levels[0], 0.0);
    }

    #[test]
    fn one_detection_per_pattern() {
        let p_box = bx(0.0, 0.0, 10.0, 10.0);
        let p = pattern(p_box, vec![1.0, 0.0], 1, None);
        let dets = [det(bx(0.0, 0.0, 9.0, 10.0)), det(bx(0.0, 0.0, 10.0, 10.0))];
        let e = vec![vec![1.0, 0.0]; 2];
        let f = match_and_fuse(&dets, &e, &[Some(1), Some(2)], &[p], 0.7).unwrap();
        assert_eq!(f.provenance, vec![Provenance::Detection(1)]);
    }

    #[test]
    fn empty_patterns_give_empty_set() {
        let f = match_and_fuse(&[det(bx(0.0, 0.0, 1.0, 1.0))], &[vec![1.0, 0.0]], &[None], &[], 0.7).unwrap();
        assert!(f.is_empty());
    }

    #[test]
    fn fusion_conserves_patterns() {
        let pats: Vec<_> = (0..5)
            .map(|i| pattern(bx(20.0 * i as f64, 0.0, 10.0, 10.0), vec![1.0, 0.0], 1, None))
            .collect();
        let dets: Vec<_> = [0.0, 40.5, 80.0, 300.0].iter().map(|&x| det(bx(x, 0.0, 10.0, 10.0))).collect();
        let e = vec![vec![0.0, 1.0]; dets.len()];
        let f = match_and_fuse(&dets, &e, &[None; 4], &pats, 0.7).unwrap();
        let matched = f.provenance.iter().filter(|p| matches!(p, Provenance::Detection(_))).count();
        let unmatched = f.provenance.iter().filter(|p| matches!(p, Provenance::Pattern(_))).count();
        assert_eq!(matched, 3);
        assert_eq!(f.len(), matched + unmatched);
        assert_eq!(f.len(), pats.len());
    }

    #[test]
    fn train_labels_and_mask() {
        let b = bx(0.0, 0.0, 10.0, 10.0);
        let e = vec![0.6, 0.8];
        let fused = FusedSet::from_detections(&[det(b), det(b)], &[e.clone(), e.clone()], &[Some(5), None]).unwrap();
        let next = [det(b), det(b), det(b)];
        let ne = vec![e.clone(); 3];
        let lp = affinity_train(&fused, &next, &ne, &[Some(5), Some(6), None], (100.0, 100.0)).unwrap();
        assert_eq!(lp.z.get(0, 0).to_array(), [0.0, 1.0, 1.0, 0.0]);
        assert_eq!(lp.labels, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(lp.mask, vec![true, true, true, true, true, false]);
        assert_eq!(lp.active(), 5);
    }

    #[test]
    fn train_rejects_mismatched_lengths() {
        let b = bx(0.0, 0.0, 10.0, 10.0);
        let fused = FusedSet::from_detections(&[det(b)], &[vec![1.0, 0.0]], &[None]).unwrap();
        assert!(affinity_train(&fused, &[det(b)], &[], &[None], (1.0, 1.0)).is_err());
        assert!(affinity_train(&fused, &[det(b)], &[vec![1.0, 0.0, 0.0]], &[None], (1.0, 1.0)).is_err());
    }

    #[test]
    fn infer_identity_and_empty() {
        let b = bx(5.0, 5.0, 10.0, 20.0);
        let e = vec![0.0, 1.0];
        let p = pattern(b, e.clone(), 2, None);
        let z = affinity_infer(&[p], &[det(b)], &[e.clone()], (50.0, 50.0)).unwrap();
        assert_eq!(z.get(0, 0).to_array(), [0.0, 1.0, 1.0, 1.0]);
        let z = affinity_infer(&[], &[det(b)], &[e], (50.0, 50.0)).unwrap();
        assert_eq!((z.rows, z.cols), (0, 1));
    }

    #[test]
    fn train_and_infer_agree_on_matched_fixture() {
        let dims = (640.0, 480.0);
        let boxes = [bx(10.0, 10.0, 30.0, 60.0), bx(200.0, 50.0, 40.0, 80.0), bx(400.0, 300.0, 20.0, 50.0)];
        let embs = [vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.6, 0.8]];
        let pats: Vec<_> = (0..3).map(|i| pattern(boxes[i], embs[i].clone(), 1 + (i % 2) as u8, Some(i as u32 + 1))).collect();
        let dets: Vec<_> = boxes.iter().map(|b| det(*b)).collect();
        let ids: Vec<_> = (1..=3).map(Some).collect::<Vec<_>>();
        let fused = match_and_fuse(&dets, &embs, &ids, &pats, 0.7).unwrap();
        let next: Vec<_> = [bx(12.0, 11.0, 30.0, 60.0), bx(210.0, 40.0, 40.0, 80.0)].iter().map(|b| det(*b)).collect();
        let ne = vec![vec![0.0, 0.0, 1.0], vec![0.6, 0.8, 0.0]];
        let train = affinity_train(&fused, &next, &ne, &[Some(1), Some(2)], dims).unwrap();
        let infer = affinity_infer(&pats, &next, &ne, dims).unwrap();
        assert_eq!(train.z, infer);
    }
}
