//! Periodic training: each period first runs the tracker with the previous
//! model to record tracking patterns, then trains the association network
//! on frame pairs whose rows are built from those patterns.
//!
//! The first period tracks with the fixed rule from
//! [`faam::trivial_score`](crate::faam::trivial_score).

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;

use crate::association::{affinity_train, match_and_fuse, FusedSet, LabelledPairs, TrackingPattern};
use crate::benchmark::VideoData;
use crate::error::{invalid, Error, Result};
use crate::faam::{encode_ibdv, encode_known, FaamParams, FrameView, PairGroup, Sgd, TrainConfig};
use crate::mot_io::{BoundingBox, BoxOffset};
use crate::seeding::{derive, rng};
use crate::synth_detector::FrameDetections;
use crate::tracker::{track_sequence, FrameRateMode, Model, TrackerConfig};

/// `(parent, k, offset)` of a resampled video.
pub type VideoKey = (String, u32, u32);

/// Patterns of every video; `frames[t-1]` holds frame `t`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PatternStore {
    pub videos: BTreeMap<VideoKey, Vec<Vec<TrackingPattern>>>,
}

impl PatternStore {
    pub fn get(&self, key: &VideoKey, frame: u32) -> Option<&[TrackingPattern]> {
        let frames = self.videos.get(key)?;
        frames.get(frame.checked_sub(1)? as usize).map(Vec::as_slice)
    }

    pub fn pattern_count(&self) -> usize {
        self.videos.values().flatten().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }
}

fn key_of(v: &VideoData) -> VideoKey {
    (v.video.parent.clone(), v.video.k, v.video.offset)
}

/// Runs the tracker over every video and keeps its per-frame patterns.
pub fn generate_patterns(model: Model, videos: &[VideoData], cfg: &TrackerConfig) -> Result<PatternStore> {
    let mut store = PatternStore::default();
    for v in videos {
        let out = track_sequence(&v.detections, model, cfg, v.video.effective_fps, v.dims(), v.k())?;
        store.videos.insert(key_of(v), out.patterns);
    }
    Ok(store)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PtsConfig {
    /// Number of periods N_p.
    pub periods: usize,
    /// Frame pairs drawn per period (per block for direct training).
    pub pairs_per_period: usize,
    /// Sampling factors training pairs are drawn from.
    pub k_set: Vec<u32>,
    pub momentum: f64,
    pub tracker: TrackerConfig,
}

impl Default for PtsConfig {
    fn default() -> Self {
        Self {
            periods: 3,
            pairs_per_period: 192,
            k_set: crate::framerate_sim::DEFAULT_K_SET.to_vec(),
            momentum: 0.9,
            tracker: TrackerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodLog {
    pub period: usize,
    pub steps: usize,
    pub patterns: usize,
    pub pairs: usize,
    pub skipped: usize,
    pub first_loss: f64,
    pub last_loss: f64,
    pub losses: Vec<f64>,
}

impl PeriodLog {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("log serializes")
    }
}

/// One sampled training pair: video index and frame `T` (pair `T, T+1`).
pub type PairRef = (usize, u32);

/// Draws `count` pairs: `k` uniform over the factors present, then a video
/// of that `k`, then `T`.
pub fn sample_pairs(videos: &[VideoData], k_set: &[u32], count: usize, seed: u64) -> Vec<PairRef> {
    let mut by_k: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, v) in videos.iter().enumerate() {
        if v.detections.len() >= 2 && k_set.contains(&v.k()) {
            by_k.entry(v.k()).or_default().push(i);
        }
    }
    let ks: Vec<&Vec<usize>> = by_k.values().collect();
    if ks.is_empty() {
        return Vec::new();
    }
    let mut r = rng(seed);
    (0..count)
        .map(|_| {
            let pool = ks[r.random_range(0..ks.len())];
            let v = pool[r.random_range(0..pool.len())];
            let t = r.random_range(1..videos[v].detections.len() as u32);
            (v, t)
        })
        .collect()
}

fn sigma_for(v: &VideoData, cur: &FrameDetections, next: &FrameDetections, cfg: &TrackerConfig, seed: u64) -> Result<Vec<f64>> {
    Ok(match cfg.frame_rate_mode {
        FrameRateMode::Known => encode_known(v.video.effective_fps, cfg.s, cfg.d_sigma)?.values,
        FrameRateMode::Unknown => {
            let a: Vec<BoundingBox> = cur.detections.iter().map(|d| d.bbox).collect();
            let b: Vec<BoundingBox> = next.detections.iter().map(|d| d.bbox).collect();
            encode_ibdv(
                FrameView { boxes: &a, embeddings: &cur.embeddings },
                FrameView { boxes: &b, embeddings: &next.embeddings },
                cfg.ibdv_criterion,
                cfg.d_sigma,
                v.dims(),
                seed,
            )?
            .values
            .into_iter()
            .map(|v| v * cfg.ibdv_scale)
            .collect()
        }
    })
}

/// Labelled rows for frames `(t, t+1)` of a video, on λ_low-filtered
/// detections. Rows come from the pattern store when given (`None` if it
/// lacks frame `t`), else from the raw detections at `t`.
pub fn pair_rows(v: &VideoData, t: u32, store: Option<&PatternStore>, cfg: &TrackerConfig) -> Result<Option<LabelledPairs>> {
    let cur = v.detections[(t - 1) as usize].filtered(cfg.lambda_low);
    let next = v.detections[t as usize].filtered(cfg.lambda_low);
    let fused = match store {
        Some(s) => match s.get(&key_of(v), t) {
            Some(p) => match_and_fuse(&cur.detections, &cur.embeddings, &cur.oracle_ids, p, cfg.iou_pattern_threshold)?,
            None => return Ok(None),
        },
        None => FusedSet::from_detections(&cur.detections, &cur.embeddings, &cur.oracle_ids)?,
    };
    affinity_train(&fused, &next.detections, &next.embeddings, &next.oracle_ids, v.dims()).map(Some)
}

fn build_group(v: &VideoData, t: u32, store: Option<&PatternStore>, cfg: &TrackerConfig, seed: u64) -> Result<Option<PairGroup>> {
    let Some(lp) = pair_rows(v, t, store, cfg)? else {
        return Ok(None);
    };
    let cur = v.detections[(t - 1) as usize].filtered(cfg.lambda_low);
    let next = v.detections[t as usize].filtered(cfg.lambda_low);
    Ok(Some(PairGroup {
        z: lp.z.data,
        labels: lp.labels,
        mask: lp.mask,
        sigma: sigma_for(v, &cur, &next, cfg, seed)?,
    }))
}

fn train_block(
    params: &mut FaamParams,
    opt: &mut Sgd,
    groups: &[PairGroup],
    train: &TrainConfig,
) -> Result<Vec<f64>> {
    (0..train.steps).map(|_| opt.step(params, groups, train.lr, train.beta)).collect()
}

fn block(
    period: usize,
    videos: &[VideoData],
    store: Option<&PatternStore>,
    cfg: &PtsConfig,
    train: &TrainConfig,
    params: &mut FaamParams,
    opt: &mut Sgd,
) -> Result<PeriodLog> {
    let seed = derive(train.seed, period as u64);
    let pairs = sample_pairs(videos, &cfg.k_set, cfg.pairs_per_period, seed);
    let mut groups = Vec::with_capacity(pairs.len());
    let mut skipped = 0;
    for (n, &(v, t)) in pairs.iter().enumerate() {
        match build_group(&videos[v], t, store, &cfg.tracker, derive(seed, n as u64))? {
            Some(g) if g.active() > 0 => groups.push(g),
            Some(_) => {}
            None => skipped += 1,
        }
    }
    let losses = train_block(params, opt, &groups, train)?;
    Ok(PeriodLog {
        period,
        steps: losses.len(),
        patterns: store.map_or(0, PatternStore::pattern_count),
        pairs: groups.len(),
        skipped,
        first_loss: losses.first().copied().unwrap_or(0.0),
        last_loss: losses.last().copied().unwrap_or(0.0),
        losses,
    })
}

fn check(cfg: &PtsConfig, train: &TrainConfig, params: &FaamParams) -> Result<()> {
    train.validate()?;
    cfg.tracker.validate()?;
    if params.d_sigma != cfg.tracker.d_sigma {
        return Err(invalid("network σ length differs from tracker configuration"));
    }
    if !(0.0..1.0).contains(&cfg.momentum) {
        return Err(invalid("momentum must lie in [0, 1)"));
    }
    Ok(())
}

/// Periodic training for `cfg.periods` periods of `train.steps` steps.
/// Period `t` tracks with the model from period `t-1` (the fixed rule for
/// `t = 1`). With zero periods `init` is returned unchanged.
pub fn run_pts(cfg: &PtsConfig, videos: &[VideoData], train: &TrainConfig, init: FaamParams) -> Result<(FaamParams, Vec<PeriodLog>)> {
    check(cfg, train, &init)?;
    let mut params = init;
    let mut opt = Sgd::new(&params, cfg.momentum);
    let mut logs = Vec::with_capacity(cfg.periods);
    for period in 1..=cfg.periods {
        let store = if period == 1 {
            generate_patterns(Model::Trivial, videos, &cfg.tracker)?
        } else {
            generate_patterns(Model::Faam(&params), videos, &cfg.tracker)?
        };
        logs.push(block(period, videos, Some(&store), cfg, train, &mut params, &mut opt)?);
    }
    Ok((params, logs))
}

/// Same step budget as [`run_pts`] with `blocks` periods, but rows are raw
/// detections at frame `T`: no patterns, no predicted movement, level 0.
pub fn run_direct(cfg: &PtsConfig, blocks: usize, videos: &[VideoData], train: &TrainConfig, init: FaamParams) -> Result<(FaamParams, Vec<PeriodLog>)> {
    check(cfg, train, &init)?;
    let mut params = init;
    let mut opt = Sgd::new(&params, cfg.momentum);
    let logs = (1..=blocks)
        .map(|b| block(b, videos, None, cfg, train, &mut params, &mut opt))
        .collect::<Result<Vec<_>>>()?;
    Ok((params, logs))
}

pub const PATTERN_MAGIC: &[u8; 8] = b"FRAPTS01";

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bbox(&mut self, b: &BoundingBox) {
        [b.x, b.y, b.w, b.h].iter().for_each(|v| self.f64(*v));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let out = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Format("truncated pattern cache".into()))?;
        self.pos += n;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn four(&mut self) -> Result<[f64; 4]> {
        Ok([self.f64()?, self.f64()?, self.f64()?, self.f64()?])
    }
}

/// Binary cache: magic, video count, then per video its key, frame count
/// and per-frame patterns. Integers are `u32`, reals `f64`, little-endian;
/// a missing oracle id is stored as 0.
pub fn write_pattern_cache(store: &PatternStore) -> Vec<u8> {
    let mut w = Writer(PATTERN_MAGIC.to_vec());
    w.u32(store.videos.len() as u32);
    for ((parent, k, offset), frames) in &store.videos {
        w.u32(parent.len() as u32);
        w.0.extend_from_slice(parent.as_bytes());
        w.u32(*k);
        w.u32(*offset);
        w.u32(frames.len() as u32);
        for pats in frames {
            w.u32(pats.len() as u32);
            for p in pats {
                w.bbox(&p.p_loc);
                [p.p_pred.dx, p.p_pred.dy, p.p_pred.dw, p.p_pred.dh].iter().for_each(|v| w.f64(*v));
                w.u32(u32::from(p.p_lvl));
                w.u32(p.frame);
                w.u32(p.sampling_k);
                w.u32(p.trajectory_id);
                w.u32(p.oracle_id.unwrap_or(0));
                w.u32(p.p_apr.len() as u32);
                p.p_apr.iter().for_each(|v| w.f64(*v));
            }
        }
    }
    w.0
}

pub fn read_pattern_cache(bytes: &[u8]) -> Result<PatternStore> {
    if bytes.len() < 8 || &bytes[..8] != PATTERN_MAGIC {
        return Err(Error::Format("pattern cache lacks FRAPTS01 header".into()));
    }
    let mut r = Reader { bytes, pos: 8 };
    let mut store = PatternStore::default();
    for _ in 0..r.u32()? {
        let n = r.u32()? as usize;
        let parent = String::from_utf8(r.take(n)?.to_vec()).map_err(|e| Error::Format(e.to_string()))?;
        let (k, offset) = (r.u32()?, r.u32()?);
        let frame_count = r.u32()?;
        let mut frames = Vec::new();
        for _ in 0..frame_count {
            let count = r.u32()?;
            let mut pats = Vec::new();
            for _ in 0..count {
                let [x, y, w, h] = r.four()?;
                let [dx, dy, dw, dh] = r.four()?;
                let p_lvl = u8::try_from(r.u32()?).map_err(|_| Error::Format("bad level".into()))?;
                let (frame, sampling_k, trajectory_id, oracle) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
                let dim = r.u32()? as usize;
                let p_apr = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                pats.push(TrackingPattern {
                    p_loc: BoundingBox { x, y, w, h },
                    p_pred: BoxOffset { dx, dy, dw, dh },
                    p_apr,
                    p_lvl,
                    frame,
                    sampling_k,
                    trajectory_id,
                    oracle_id: (oracle != 0).then_some(oracle),
                });
            }
            frames.push(pats);
        }
        store.videos.insert((parent, k, offset), frames);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes in pattern cache".into()));
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::build_videos;
    use crate::faam::FaamShape;
    use crate::scene::SceneConfig;
    use crate::synth_detector::NoiseModel;

    fn small(noise: NoiseModel, k_set: &[u32]) -> Vec<VideoData> {
        let parents = SceneConfig { sequences: 1, frames: 120, concurrent: 5, ..Default::default() }
            .generate()
            .unwrap();
        build_videos(&parents, k_set, &noise, 16, 5).unwrap()
    }

    #[test]
    fn zero_noise_patterns_follow_ground_truth() {
        let videos = small(NoiseModel::zero(), &[1]);
        let store = generate_patterns(Model::Trivial, &videos, &TrackerConfig::default()).unwrap();
        let v = &videos[0];
        let per_frame = v.video.sequence.frame_boxes();
        let frames = store.videos.values().next().unwrap();
        for (t, pats) in frames.iter().enumerate() {
            // Tracks whose object left linger until dropped; count only live ones.
            let live = pats.iter().filter(|p| p.p_lvl > 0 && per_frame[t].iter().any(|(id, _)| Some(*id) == p.oracle_id)).count();
            assert_eq!(live, per_frame[t].len(), "frame {}", t + 1);
        }
        assert!(store.videos.values().flatten().flatten().all(|p| {
            (p.p_apr.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-9
        }));
    }

    #[test]
    fn empty_benchmark_gives_empty_store() {
        let store = generate_patterns(Model::Trivial, &[], &TrackerConfig::default()).unwrap();
        assert!(store.is_empty());
    }

    #[test]
    fn zero_periods_return_init() {
        let videos = small(NoiseModel::default(), &[1, 2]);
        let init = FaamParams::init(&FaamShape::default(), 1);
        let (p, logs) = run_pts(&PtsConfig { periods: 0, ..Default::default() }, &videos, &TrainConfig::default(), init.clone()).unwrap();
        assert_eq!(p, init);
        assert!(logs.is_empty());
    }

    #[test]
    fn zero_steps_leave_params() {
        let videos = small(NoiseModel::default(), &[1, 2]);
        let init = FaamParams::init(&FaamShape::default(), 1);
        let train = TrainConfig { steps: 0, ..Default::default() };
        let cfg = PtsConfig { periods: 1, k_set: vec![1, 2], ..Default::default() };
        let (p, logs) = run_pts(&cfg, &videos, &train, init.clone()).unwrap();
        assert_eq!(p, init);
        assert_eq!(logs.len(), 1);
        assert!(logs[0].patterns > 0);
    }

    #[test]
    fn reproducible_and_cache_round_trip() {
        let videos = small(NoiseModel::default(), &[1, 4]);
        let cfg = PtsConfig { periods: 2, pairs_per_period: 8, k_set: vec![1, 4], ..Default::default() };
        let train = TrainConfig { steps: 3, ..Default::default() };
        let init = FaamParams::init(&FaamShape::default(), 2);
        let a = run_pts(&cfg, &videos, &train, init.clone()).unwrap();
        let b = run_pts(&cfg, &videos, &train, init).unwrap();
        assert_eq!(a, b);
        let store = generate_patterns(Model::Faam(&a.0), &videos, &cfg.tracker).unwrap();
        let bytes = write_pattern_cache(&store);
        assert_eq!(&bytes[..8], b"FRAPTS01");
        assert_eq!(read_pattern_cache(&bytes).unwrap(), store);
        assert!(read_pattern_cache(&bytes[..bytes.len() - 1]).is_err());
    }
}
