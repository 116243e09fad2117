//! CLEAR-MOT, IDF1 and HOTA, plus the cross-frame-rate aggregates and the
//! candidate-number analysis.
//!
//! Inputs are per-frame `(id, box)` lists; index 0 is frame 1.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::assignment::{solve, CostMatrix};
use crate::association::{iou, normalized_distance};
use crate::error::{Error, Result};
use crate::framerate_sim::resample;
use crate::mot_io::{fmt_num, BoundingBox, Sequence};

pub type Frames = [Vec<(u32, BoundingBox)>];

fn check_frames(gt: &Frames, pred: &Frames) -> Result<()> {
    if gt.len() != pred.len() {
        return Err(Error::Validation(format!(
            "ground truth has {} frames, prediction {}",
            gt.len(),
            pred.len()
        )));
    }
    Ok(())
}

/// Maximum-cardinality assignment over pairs allowed by `ok`, then maximum
/// summed `weight`.
fn best_pairs(
    n: usize,
    m: usize,
    ok: impl Fn(usize, usize) -> bool,
    weight: impl Fn(usize, usize) -> f64,
) -> Vec<(usize, usize)> {
    let mut costs = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            costs.push(if ok(i, j) { -weight(i, j) } else { f64::INFINITY });
        }
    }
    solve(&CostMatrix::new(n, m, costs).expect("costs are finite or forbidden"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ClearCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub idsw: u64,
    pub gt: u64,
}

impl ClearCounts {
    pub fn add(&mut self, o: &ClearCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.idsw += o.idsw;
        self.gt += o.gt;
    }

    pub fn mota(&self) -> Result<f64> {
        if self.gt == 0 {
            return Err(Error::Undefined("MOTA needs at least one ground-truth box".into()));
        }
        Ok(1.0 - (self.fp + self.fn_ + self.idsw) as f64 / self.gt as f64)
    }
}

/// CLEAR-MOT counts. A ground-truth object keeps its last partner when
/// their IoU is still at least `threshold`; the rest is matched by maximum
/// IoU. A fresh match to a partner other than the previous one is an
/// identity switch.
pub fn clear_mot_counts(gt: &Frames, pred: &Frames, threshold: f64) -> Result<ClearCounts> {
    check_frames(gt, pred)?;
    let mut c = ClearCounts::default();
    let mut last: HashMap<u32, u32> = HashMap::new();
    for (g, p) in gt.iter().zip(pred) {
        let mut g_used = vec![false; g.len()];
        let mut p_used = vec![false; p.len()];
        let mut matches = Vec::new();
        for (i, (gid, gb)) in g.iter().enumerate() {
            let Some(prev) = last.get(gid) else { continue };
            if let Some(j) = p.iter().position(|(pid, _)| pid == prev) {
                if !p_used[j] && iou(gb, &p[j].1) >= threshold {
                    g_used[i] = true;
                    p_used[j] = true;
                    matches.push((i, j, false));
                }
            }
        }
        let gi: Vec<usize> = (0..g.len()).filter(|&i| !g_used[i]).collect();
        let pj: Vec<usize> = (0..p.len()).filter(|&j| !p_used[j]).collect();
        let sim = |a: usize, b: usize| iou(&g[gi[a]].1, &p[pj[b]].1);
        for (a, b) in best_pairs(gi.len(), pj.len(), |a, b| sim(a, b) >= threshold, sim) {
            matches.push((gi[a], pj[b], true));
        }
        for &(i, j, fresh) in &matches {
            let (gid, pid) = (g[i].0, p[j].0);
            if fresh && last.get(&gid).is_some_and(|&prev| prev != pid) {
                c.idsw += 1;
            }
            last.insert(gid, pid);
        }
        let tp = matches.len() as u64;
        c.tp += tp;
        c.gt += g.len() as u64;
        c.fn_ += g.len() as u64 - tp;
        c.fp += p.len() as u64 - tp;
    }
    Ok(c)
}

/// `(MOTA, FP, FN, IDSW)`.
pub fn clear_mot(gt: &Frames, pred: &Frames, threshold: f64) -> Result<(f64, u64, u64, u64)> {
    let c = clear_mot_counts(gt, pred, threshold)?;
    Ok((c.mota()?, c.fp, c.fn_, c.idsw))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct IdCounts {
    pub idtp: u64,
    pub idfp: u64,
    pub idfn: u64,
}

impl IdCounts {
    pub fn add(&mut self, o: &IdCounts) {
        self.idtp += o.idtp;
        self.idfp += o.idfp;
        self.idfn += o.idfn;
    }

    pub fn idf1(&self) -> f64 {
        let denom = 2 * self.idtp + self.idfp + self.idfn;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.idtp as f64 / denom as f64
        }
    }
}

/// Dense ids in first-seen order over a frame list.
fn id_index(frames: &Frames) -> BTreeMap<u32, usize> {
    let mut ids: Vec<u32> = frames.iter().flatten().map(|(id, _)| *id).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter().enumerate().map(|(i, id)| (id, i)).collect()
}

/// Identity counts from the trajectory-level matching that maximizes IDTP.
pub fn idf1_counts(gt: &Frames, pred: &Frames, threshold: f64) -> Result<IdCounts> {
    check_frames(gt, pred)?;
    let gidx = id_index(gt);
    let pidx = id_index(pred);
    let (n, m) = (gidx.len(), pidx.len());
    let mut overlap = vec![0u64; n * m];
    for (g, p) in gt.iter().zip(pred) {
        for (gid, gb) in g {
            for (pid, pb) in p {
                if iou(gb, pb) >= threshold {
                    overlap[gidx[gid] * m + pidx[pid]] += 1;
                }
            }
        }
    }
    let total_gt = gt.iter().map(Vec::len).sum::<usize>() as u64;
    let total_pred = pred.iter().map(Vec::len).sum::<usize>() as u64;
    let pairs = best_pairs(n, m, |i, j| overlap[i * m + j] > 0, |i, j| overlap[i * m + j] as f64);
    let idtp: u64 = pairs.iter().map(|&(i, j)| overlap[i * m + j]).sum();
    Ok(IdCounts { idtp, idfp: total_pred - idtp, idfn: total_gt - idtp })
}

pub fn idf1(gt: &Frames, pred: &Frames, threshold: f64) -> Result<f64> {
    Ok(idf1_counts(gt, pred, threshold)?.idf1())
}

/// The 19 localization thresholds 0.05, 0.10, …, 0.95.
pub fn alpha_grid() -> Vec<f64> {
    (1..=19).map(|i| f64::from(i) * 0.05).collect()
}

/// Sums behind HOTA at one threshold; they pool by addition.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct HotaAlpha {
    pub tp: f64,
    pub fn_: f64,
    pub fp: f64,
    /// Σ over true positives of their association accuracy.
    pub ass_sum: f64,
}

impl HotaAlpha {
    pub fn det_a(&self) -> f64 {
        let d = self.tp + self.fn_ + self.fp;
        if d == 0.0 {
            1.0
        } else {
            self.tp / d
        }
    }

    pub fn ass_a(&self) -> f64 {
        if self.tp == 0.0 {
            if self.fn_ + self.fp == 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            self.ass_sum / self.tp
        }
    }

    pub fn hota(&self) -> f64 {
        (self.det_a() * self.ass_a()).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct HotaCounts {
    pub per_alpha: Vec<HotaAlpha>,
}

impl HotaCounts {
    pub fn add(&mut self, o: &HotaCounts) {
        if self.per_alpha.is_empty() {
            self.per_alpha = vec![HotaAlpha::default(); o.per_alpha.len()];
        }
        for (a, b) in self.per_alpha.iter_mut().zip(&o.per_alpha) {
            a.tp += b.tp;
            a.fn_ += b.fn_;
            a.fp += b.fp;
            a.ass_sum += b.ass_sum;
        }
    }

    fn mean(&self, f: impl Fn(&HotaAlpha) -> f64) -> f64 {
        if self.per_alpha.is_empty() {
            return 1.0;
        }
        self.per_alpha.iter().map(f).sum::<f64>() / self.per_alpha.len() as f64
    }

    pub fn hota(&self) -> f64 {
        self.mean(HotaAlpha::hota)
    }

    pub fn det_a(&self) -> f64 {
        self.mean(HotaAlpha::det_a)
    }

    pub fn ass_a(&self) -> f64 {
        self.mean(HotaAlpha::ass_a)
    }
}

/// Global alignment between every ground-truth and predicted id: soft
/// co-occurrence normalized like an IoU over the two trajectories.
pub fn global_alignment(gt: &Frames, pred: &Frames) -> (BTreeMap<u32, usize>, BTreeMap<u32, usize>, Vec<f64>) {
    let gidx = id_index(gt);
    let pidx = id_index(pred);
    let (n, m) = (gidx.len(), pidx.len());
    let mut potential = vec![0.0; n * m];
    let mut gcount = vec![0.0; n];
    let mut pcount = vec![0.0; m];
    for (g, p) in gt.iter().zip(pred) {
        let sim: Vec<Vec<f64>> = g.iter().map(|(_, gb)| p.iter().map(|(_, pb)| iou(gb, pb)).collect()).collect();
        let row_sum: Vec<f64> = sim.iter().map(|r| r.iter().sum()).collect();
        let col_sum: Vec<f64> = (0..p.len()).map(|j| sim.iter().map(|r| r[j]).sum()).collect();
        for (i, (gid, _)) in g.iter().enumerate() {
            for (j, (pid, _)) in p.iter().enumerate() {
                let denom = row_sum[i] + col_sum[j] - sim[i][j];
                if denom > f64::EPSILON {
                    potential[gidx[gid] * m + pidx[pid]] += sim[i][j] / denom;
                }
            }
        }
        for (gid, _) in g {
            gcount[gidx[gid]] += 1.0;
        }
        for (pid, _) in p {
            pcount[pidx[pid]] += 1.0;
        }
    }
    let align = (0..n * m)
        .map(|k| {
            let (i, j) = (k / m, k % m);
            let d = gcount[i] + pcount[j] - potential[k];
            if d > 0.0 {
                potential[k] / d
            } else {
                0.0
            }
        })
        .collect();
    (gidx, pidx, align)
}

/// HOTA sums for one sequence. At each threshold α and frame, pairs need
/// IoU ≥ α; the matching maximizes the number of pairs and then the summed
/// alignment-weighted IoU.
pub fn hota_counts(gt: &Frames, pred: &Frames) -> Result<HotaCounts> {
    check_frames(gt, pred)?;
    let alphas = alpha_grid();
    let (gidx, pidx, align) = global_alignment(gt, pred);
    let (n, m) = (gidx.len(), pidx.len());
    let mut gcount = vec![0.0; n];
    let mut pcount = vec![0.0; m];
    for (gid, _) in gt.iter().flatten() {
        gcount[gidx[gid]] += 1.0;
    }
    for (pid, _) in pred.iter().flatten() {
        pcount[pidx[pid]] += 1.0;
    }
    let mut per_alpha = Vec::with_capacity(alphas.len());
    for &alpha in &alphas {
        let mut acc = HotaAlpha::default();
        let mut matches = vec![0.0; n * m];
        for (g, p) in gt.iter().zip(pred) {
            let sim: Vec<Vec<f64>> = g.iter().map(|(_, gb)| p.iter().map(|(_, pb)| iou(gb, pb)).collect()).collect();
            let pairs = best_pairs(
                g.len(),
                p.len(),
                |i, j| sim[i][j] >= alpha - 1e-12,
                |i, j| align[gidx[&g[i].0] * m + pidx[&p[j].0]] * sim[i][j],
            );
            for &(i, j) in &pairs {
                matches[gidx[&g[i].0] * m + pidx[&p[j].0]] += 1.0;
            }
            acc.tp += pairs.len() as f64;
            acc.fn_ += (g.len() - pairs.len()) as f64;
            acc.fp += (p.len() - pairs.len()) as f64;
        }
        for k in 0..n * m {
            if matches[k] > 0.0 {
                let (i, j) = (k / m, k % m);
                acc.ass_sum += matches[k] * matches[k] / (gcount[i] + pcount[j] - matches[k]);
            }
        }
        per_alpha.push(acc);
    }
    Ok(HotaCounts { per_alpha })
}

/// `(HOTA, DetA, AssA)`.
pub fn hota(gt: &Frames, pred: &Frames) -> Result<(f64, f64, f64)> {
    let c = hota_counts(gt, pred)?;
    Ok((c.hota(), c.det_a(), c.ass_a()))
}

/// All counts for one result; pooled by addition.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct EvalCounts {
    pub clear: ClearCounts,
    pub id: IdCounts,
    pub hota: HotaCounts,
}

impl EvalCounts {
    pub fn compute(gt: &Frames, pred: &Frames) -> Result<Self> {
        Ok(Self {
            clear: clear_mot_counts(gt, pred, 0.5)?,
            id: idf1_counts(gt, pred, 0.5)?,
            hota: hota_counts(gt, pred)?,
        })
    }

    pub fn add(&mut self, o: &EvalCounts) {
        self.clear.add(&o.clear);
        self.id.add(&o.id);
        self.hota.add(&o.hota);
    }

    pub fn result(&self) -> Result<EvalResult> {
        Ok(EvalResult {
            mota: self.clear.mota()?,
            idf1: self.id.idf1(),
            hota: self.hota.hota(),
            det_a: self.hota.det_a(),
            ass_a: self.hota.ass_a(),
            fp: self.clear.fp,
            fn_: self.clear.fn_,
            idsw: self.clear.idsw,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalResult {
    pub mota: f64,
    pub idf1: f64,
    pub hota: f64,
    pub det_a: f64,
    pub ass_a: f64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub idsw: u64,
}

impl EvalResult {
    /// `(name, value)` in report order.
    pub fn fields(&self) -> [(&'static str, f64); 8] {
        [
            ("HOTA", self.hota),
            ("DetA", self.det_a),
            ("AssA", self.ass_a),
            ("MOTA", self.mota),
            ("IDF1", self.idf1),
            ("FP", self.fp as f64),
            ("FN", self.fn_ as f64),
            ("IDSW", self.idsw as f64),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateResult {
    pub m_hota: f64,
    pub m_mota: f64,
    pub m_idf1: f64,
    /// `(HOTA_max − HOTA_min) / HOTA_max` over the sampling factors.
    pub vr: f64,
    /// `(k, pooled result)` in input order.
    pub per_k: Vec<(u32, EvalResult)>,
}

/// Unweighted means over sampling factors and the vulnerable ratio.
pub fn aggregate(per_k: &[(u32, EvalResult)]) -> Result<AggregateResult> {
    if per_k.is_empty() {
        return Err(Error::Validation("aggregate needs at least one sampling factor".into()));
    }
    let n = per_k.len() as f64;
    let mean = |f: fn(&EvalResult) -> f64| per_k.iter().map(|(_, r)| f(r)).sum::<f64>() / n;
    let hotas: Vec<f64> = per_k.iter().map(|(_, r)| r.hota).collect();
    Ok(AggregateResult {
        m_hota: mean(|r| r.hota),
        m_mota: mean(|r| r.mota),
        m_idf1: mean(|r| r.idf1),
        vr: vulnerable_ratio(&hotas)?,
        per_k: per_k.to_vec(),
    })
}

pub fn vulnerable_ratio(hotas: &[f64]) -> Result<f64> {
    let hi = hotas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = hotas.iter().copied().fold(f64::INFINITY, f64::min);
    if !(hi > 0.0) {
        return Err(Error::Undefined("vulnerable ratio needs a positive highest HOTA".into()));
    }
    Ok((hi - lo) / hi)
}

/// CSV with one row per `(sequence, k, metric)`.
pub fn eval_csv(rows: &[(String, u32, EvalResult)]) -> String {
    let mut out = String::from("sequence,k,metric,value\n");
    for (name, k, r) in rows {
        for (metric, v) in r.fields() {
            out.push_str(&format!("{name},{k},{metric},{}\n", fmt_num(v)));
        }
    }
    out
}

pub fn summary_json(agg: &AggregateResult) -> String {
    let per_k: Vec<serde_json::Value> = agg
        .per_k
        .iter()
        .map(|(k, r)| serde_json::json!({ "k": k, "result": r }))
        .collect();
    let v = serde_json::json!({
        "mHOTA": agg.m_hota,
        "mMOTA": agg.m_mota,
        "mIDF1": agg.m_idf1,
        "VR": agg.vr,
        "per_k": per_k,
    });
    serde_json::to_string_pretty(&v).expect("summary serializes") + "\n"
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CandidateRow {
    pub k: u32,
    pub r: f64,
    pub mean_candidates: f64,
}

/// Mean number of next-frame objects within `r` times the true
/// displacement, over every object visible in consecutive frames of every
/// resampled video. Zero displacements are skipped.
pub fn candidate_curve(gt: &[Sequence], k_set: &[u32], r_set: &[f64]) -> Result<Vec<CandidateRow>> {
    if r_set.iter().any(|r| !(*r >= 1.0)) {
        return Err(Error::Validation("thresholding factors must be at least 1".into()));
    }
    let mut out = Vec::new();
    for &k in k_set {
        let mut sums = vec![0.0; r_set.len()];
        let mut count = 0usize;
        for seq in gt {
            let dims = (seq.width, seq.height);
            for video in resample(seq, k)? {
                let frames = video.sequence.frame_boxes();
                for pair in frames.windows(2) {
                    for (id, b) in &pair[0] {
                        let Some((_, next)) = pair[1].iter().find(|(j, _)| j == id) else { continue };
                        let d_star = normalized_distance(b, next, dims.0, dims.1);
                        if d_star <= 0.0 {
                            continue;
                        }
                        count += 1;
                        for (s, r) in sums.iter_mut().zip(r_set) {
                            *s += pair[1]
                                .iter()
                                .filter(|(_, p)| normalized_distance(b, p, dims.0, dims.1) <= r * d_star)
                                .count() as f64;
                        }
                    }
                }
            }
        }
        for (s, &r) in sums.iter().zip(r_set) {
            out.push(CandidateRow { k, r, mean_candidates: if count == 0 { 0.0 } else { s / count as f64 } });
        }
    }
    Ok(out)
}

pub fn candidates_csv(rows: &[CandidateRow]) -> String {
    let mut out = String::from("k,r,mean_candidates\n");
    for row in rows {
        out.push_str(&format!("{},{},{}\n", row.k, fmt_num(row.r), fmt_num(row.mean_candidates)));
    }
    out
}
