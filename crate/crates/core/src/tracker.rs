//! Online target management with a two-stage association cascade.
//!
//! Each frame: confidence filter, split into high/low sets, score every
//! live trajectory against the high set and assign, then the leftovers
//! against the low set, update matched tracks, age and drop unmatched ones,
//! and start tracks from unmatched high detections. At the end of the frame
//! each live trajectory is recorded as a tracking pattern, including the
//! Kalman prediction for the next frame.

use serde::Serialize;

use crate::assignment::solve_max_score;
use crate::association::{affinity_infer, TrackingPattern};
use crate::error::{invalid, Result};
use crate::faam::{encode_ibdv, encode_known, score, trivial_score, FaamParams, FrameView, IbdvCriterion, DEFAULT_S, D_SIGMA};
use crate::motion_model::{kf_init, kf_predict, kf_update, KalmanState};
use crate::mot_io::{BoundingBox, TrackResult, TrackRow};
use crate::seeding::derive;
use crate::synth_detector::{normalize, FrameDetections};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FrameRateMode {
    /// σ from the effective frame rate.
    Known,
    /// σ from inter-frame best-matched distances.
    Unknown,
}

impl std::str::FromStr for FrameRateMode {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "known" => Ok(Self::Known),
            "unknown" => Ok(Self::Unknown),
            _ => Err(invalid(format!("unknown frame rate mode '{s}' (known|unknown)"))),
        }
    }
}

/// The association module the tracker scores pairs with.
#[derive(Debug, Clone, Copy)]
pub enum Model<'a> {
    Trivial,
    Faam(&'a FaamParams),
}

pub const IBDV_SCALE: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    pub lambda_low: f64,
    pub lambda_high: f64,
    /// Frames a trajectory may stay unmatched before removal.
    pub lambda_i: u32,
    /// Pairs need a score strictly above this.
    pub score_gate: f64,
    pub iou_pattern_threshold: f64,
    pub frame_rate_mode: FrameRateMode,
    pub ibdv_criterion: IbdvCriterion,
    /// Factor applied to the best-matched distances before they reach the
    /// attention network.
    pub ibdv_scale: f64,
    pub s: f64,
    pub d_sigma: usize,
    /// Weight of the old appearance in the cache update.
    pub ema: f64,
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            lambda_low: 0.1,
            lambda_high: 0.6,
            lambda_i: 30,
            score_gate: 0.1,
            iou_pattern_threshold: 0.7,
            frame_rate_mode: FrameRateMode::Known,
            ibdv_criterion: IbdvCriterion::Dist,
            ibdv_scale: IBDV_SCALE,
            s: DEFAULT_S,
            d_sigma: D_SIGMA,
            ema: 0.9,
            seed: 0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.lambda_low && self.lambda_low < self.lambda_high && self.lambda_high < 1.0) {
            return Err(invalid("thresholds must satisfy 0 < lambda_low < lambda_high < 1"));
        }
        if !(self.ibdv_scale > 0.0 && self.ibdv_scale.is_finite()) {
            return Err(invalid("ibdv_scale must be positive"));
        }
        if !(0.0..1.0).contains(&self.ema) {
            return Err(invalid("ema factor must lie in [0, 1)"));
        }
        if !(self.iou_pattern_threshold > 0.0 && self.iou_pattern_threshold < 1.0) {
            return Err(invalid("pattern IoU threshold must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: u32,
    /// State predicted for the current frame.
    pub kalman: KalmanState,
    /// Last associated or propagated box.
    pub last_box: BoundingBox,
    pub embedding_cache: Vec<f64>,
    pub level: u8,
    pub missing_count: u32,
    pub history: Vec<(u32, BoundingBox, f64)>,
    pub oracle_id: Option<u32>,
    /// Pattern recorded at the end of the previous frame.
    pattern: TrackingPattern,
}

impl Trajectory {
    fn new(id: u32, frame: u32, k: u32, bbox: BoundingBox, conf: f64, emb: &[f64], oracle: Option<u32>) -> Self {
        let kalman = kf_init(&bbox);
        let pattern = TrackingPattern {
            p_loc: bbox,
            p_pred: Default::default(),
            p_apr: emb.to_vec(),
            p_lvl: 1,
            frame,
            sampling_k: k,
            trajectory_id: id,
            oracle_id: oracle,
        };
        Self {
            id,
            kalman,
            last_box: bbox,
            embedding_cache: emb.to_vec(),
            level: 1,
            missing_count: 0,
            history: vec![(frame, bbox, conf)],
            oracle_id: oracle,
            pattern,
        }
    }

    /// Predicts the next frame and refreshes the pattern.
    fn record(&mut self, frame: u32, k: u32) {
        let (next, _, offset) = kf_predict(&self.kalman);
        self.pattern = TrackingPattern {
            p_loc: self.last_box,
            p_pred: offset,
            p_apr: self.embedding_cache.clone(),
            p_lvl: self.level,
            frame,
            sampling_k: k,
            trajectory_id: self.id,
            oracle_id: self.oracle_id,
        };
        self.kalman = next;
    }
}

/// Everything a tracking run produces.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackOutput {
    pub result: TrackResult,
    /// `patterns[t-1]` are the live trajectories at the end of frame `t`.
    pub patterns: Vec<Vec<TrackingPattern>>,
}

/// Scores between the given pattern rows and detection columns.
fn pair_scores(
    rows: &[TrackingPattern],
    dets: &FrameDetections,
    model: Model,
    sigma: &[f64],
    dims: (f64, f64),
) -> Result<Vec<f64>> {
    let z = affinity_infer(rows, &dets.detections, &dets.embeddings, dims)?;
    match model {
        Model::Trivial => Ok(z.data.iter().map(trivial_score).collect()),
        Model::Faam(p) => {
            if z.is_empty() {
                Ok(Vec::new())
            } else {
                score(&z.data, sigma, p)
            }
        }
    }
}

/// One cascade stage: returns `(trajectory index, detection index)` pairs.
pub fn stage_match(
    trajectories: &[&TrackingPattern],
    dets: &FrameDetections,
    model: Model,
    sigma: &[f64],
    gate: f64,
    dims: (f64, f64),
) -> Result<Vec<(usize, usize)>> {
    if trajectories.is_empty() || dets.is_empty() {
        return Ok(Vec::new());
    }
    let rows: Vec<TrackingPattern> = trajectories.iter().map(|p| (*p).clone()).collect();
    let scores = pair_scores(&rows, dets, model, sigma, dims)?;
    solve_max_score(rows.len(), dets.len(), &scores, gate)
}

fn frame_sigma(
    cfg: &TrackerConfig,
    model: Model,
    known: &Option<Vec<f64>>,
    prev: Option<&FrameDetections>,
    cur: &FrameDetections,
    dims: (f64, f64),
    frame: u32,
) -> Result<Vec<f64>> {
    if matches!(model, Model::Trivial) {
        return Ok(Vec::new());
    }
    match cfg.frame_rate_mode {
        FrameRateMode::Known => Ok(known.clone().unwrap_or_default()),
        FrameRateMode::Unknown => {
            let empty = FrameDetections::default();
            let p = prev.unwrap_or(&empty);
            let pb: Vec<BoundingBox> = p.detections.iter().map(|d| d.bbox).collect();
            let cb: Vec<BoundingBox> = cur.detections.iter().map(|d| d.bbox).collect();
            Ok(encode_ibdv(
                FrameView { boxes: &pb, embeddings: &p.embeddings },
                FrameView { boxes: &cb, embeddings: &cur.embeddings },
                cfg.ibdv_criterion,
                cfg.d_sigma,
                dims,
                derive(cfg.seed, u64::from(frame)),
            )?
            .values
            .into_iter()
            .map(|v| v * cfg.ibdv_scale)
            .collect())
        }
    }
}

/// Runs the tracker over one video. `frames[t-1]` holds frame `t`.
pub fn track_sequence(
    frames: &[FrameDetections],
    model: Model,
    cfg: &TrackerConfig,
    effective_fps: f64,
    dims: (f64, f64),
    sampling_k: u32,
) -> Result<TrackOutput> {
    cfg.validate()?;
    if let Model::Faam(p) = model {
        if p.d_sigma != cfg.d_sigma {
            return Err(invalid("network σ length differs from tracker configuration"));
        }
    }
    let known = match (model, cfg.frame_rate_mode) {
        (Model::Faam(_), FrameRateMode::Known) => Some(encode_known(effective_fps, cfg.s, cfg.d_sigma)?.values),
        _ => None,
    };
    let mut tracks: Vec<Trajectory> = Vec::new();
    let mut next_id = 1u32;
    let mut rows = Vec::new();
    let mut patterns = Vec::with_capacity(frames.len());
    let mut prev: Option<FrameDetections> = None;
    for (idx, raw) in frames.iter().enumerate() {
        let frame = idx as u32 + 1;
        let dets = raw.filtered(cfg.lambda_low);
        let sigma = frame_sigma(cfg, model, &known, prev.as_ref(), &dets, dims, frame)?;
        let (high_idx, low_idx): (Vec<usize>, Vec<usize>) =
            (0..dets.len()).partition(|&i| dets.detections[i].conf >= cfg.lambda_high);
        let high = subset(&dets, &high_idx);
        let low = subset(&dets, &low_idx);

        let mut matched: Vec<Option<(usize, u8)>> = vec![None; tracks.len()];
        let all: Vec<&TrackingPattern> = tracks.iter().map(|t| &t.pattern).collect();
        let stage1 = stage_match(&all, &high, model, &sigma, cfg.score_gate, dims)?;
        let mut high_used = vec![false; high.len()];
        for &(t, d) in &stage1 {
            matched[t] = Some((high_idx[d], 1));
            high_used[d] = true;
        }
        let rest: Vec<usize> = (0..tracks.len()).filter(|&t| matched[t].is_none()).collect();
        let rest_pats: Vec<&TrackingPattern> = rest.iter().map(|&t| &tracks[t].pattern).collect();
        for (r, d) in stage_match(&rest_pats, &low, model, &sigma, cfg.score_gate, dims)? {
            matched[rest[r]] = Some((low_idx[d], 2));
        }

        for (t, m) in matched.iter().enumerate() {
            let tr = &mut tracks[t];
            match *m {
                Some((d, stage)) => {
                    let det = dets.detections[d];
                    tr.kalman = kf_update(&tr.kalman, &det.bbox)?;
                    tr.last_box = det.bbox;
                    let mut e: Vec<f64> = tr
                        .embedding_cache
                        .iter()
                        .zip(&dets.embeddings[d])
                        .map(|(a, b)| cfg.ema * a + (1.0 - cfg.ema) * b)
                        .collect();
                    normalize(&mut e);
                    tr.embedding_cache = e;
                    tr.level = stage;
                    tr.missing_count = 0;
                    if dets.oracle_ids[d].is_some() {
                        tr.oracle_id = dets.oracle_ids[d];
                    }
                    tr.history.push((frame, det.bbox, det.conf));
                    rows.push(TrackRow { frame, id: tr.id, bbox: det.bbox, conf: det.conf });
                }
                None => {
                    tr.missing_count += 1;
                    tr.last_box = tr.kalman.last_box;
                }
            }
        }
        tracks.retain(|t| t.missing_count <= cfg.lambda_i);

        for (d, used) in high_used.iter().enumerate() {
            if *used {
                continue;
            }
            let i = high_idx[d];
            let det = dets.detections[i];
            tracks.push(Trajectory::new(
                next_id,
                frame,
                sampling_k,
                det.bbox,
                det.conf,
                &dets.embeddings[i],
                dets.oracle_ids[i],
            ));
            rows.push(TrackRow { frame, id: next_id, bbox: det.bbox, conf: det.conf });
            next_id += 1;
        }

        for tr in &mut tracks {
            tr.record(frame, sampling_k);
        }
        patterns.push(tracks.iter().map(|t| t.pattern.clone()).collect());
        prev = Some(dets);
    }
    Ok(TrackOutput { result: TrackResult::new(rows)?, patterns })
}

fn subset(d: &FrameDetections, idx: &[usize]) -> FrameDetections {
    FrameDetections {
        detections: idx.iter().map(|&i| d.detections[i]).collect(),
        embeddings: idx.iter().map(|&i| d.embeddings[i].clone()).collect(),
        oracle_ids: idx.iter().map(|&i| d.oracle_ids[i]).collect(),
    }
}

#[derive(Serialize)]
struct OverlayBox {
    id: u32,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

#[derive(Serialize)]
struct OverlayFrame {
    frame: u32,
    boxes: Vec<OverlayBox>,
}

/// Per-frame boxes and ids as a JSON array, for external viewers.
pub fn overlay_json(result: &TrackResult, length: u32) -> String {
    let frames: Vec<OverlayFrame> = result
        .frame_boxes(length)
        .into_iter()
        .enumerate()
        .map(|(i, b)| OverlayFrame {
            frame: i as u32 + 1,
            boxes: b.into_iter().map(|(id, b)| OverlayBox { id, x: b.x, y: b.y, w: b.w, h: b.h }).collect(),
        })
        .collect();
    serde_json::to_string(&frames).expect("overlay serializes")
}
