//! Multi-rate benchmark with detections attached, and batch tracking and
//! evaluation over it.
//!
//! Detections are drawn once per original frame and shared by every
//! resampled video that shows that frame.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::framerate_sim::{resample, ResampledSequence};
use crate::metrics::{aggregate, AggregateResult, EvalCounts, EvalResult};
use crate::mot_io::{Sequence, TrackResult};
use crate::seeding::{derive, hash_str};
use crate::synth_detector::{detect_sequence, make_identity_bank, FrameDetections, NoiseModel};
use crate::tracker::{track_sequence, Model, TrackOutput, TrackerConfig};

/// One resampled video and its detector output.
#[derive(Debug, Clone)]
pub struct VideoData {
    pub video: ResampledSequence,
    /// `detections[j-1]` belongs to video frame `j`.
    pub detections: Vec<FrameDetections>,
}

impl VideoData {
    pub fn name(&self) -> &str {
        &self.video.sequence.name
    }

    pub fn dims(&self) -> (f64, f64) {
        (self.video.sequence.width, self.video.sequence.height)
    }

    pub fn k(&self) -> u32 {
        self.video.k
    }
}

/// Detector output for every frame of an original sequence. The seed is
/// mixed with the sequence name, so each sequence has its own stream and
/// identity bank.
pub fn parent_detections(parent: &Sequence, noise: &NoiseModel, d_embed: usize, seed: u64) -> Result<Vec<FrameDetections>> {
    let s = derive(seed, hash_str(&parent.name));
    let bank = make_identity_bank(parent.identities(), d_embed, derive(s, 1))?;
    detect_sequence(parent, noise, &bank, derive(s, 2))
}

/// Every video of every parent at each `k`, parents outermost.
pub fn build_videos(parents: &[Sequence], k_set: &[u32], noise: &NoiseModel, d_embed: usize, seed: u64) -> Result<Vec<VideoData>> {
    let mut out = Vec::new();
    for parent in parents {
        let dets = parent_detections(parent, noise, d_embed, seed)?;
        for &k in k_set {
            for video in resample(parent, k)? {
                let detections = video.frame_map.iter().map(|&f| dets[(f - 1) as usize].clone()).collect();
                out.push(VideoData { video, detections });
            }
        }
    }
    Ok(out)
}

/// Keeps at most `per_k` evenly spaced videos of each `(parent, k)`.
pub fn thin_videos(videos: Vec<VideoData>, per_k: usize) -> Vec<VideoData> {
    videos
        .into_iter()
        .filter(|v| {
            let k = v.video.k as usize;
            if k <= per_k {
                return true;
            }
            let stride = k / per_k.max(1);
            let i = v.video.offset as usize - 1;
            i % stride == 0 && i / stride < per_k
        })
        .collect()
}

pub fn track_videos(videos: &[VideoData], model: Model, cfg: &TrackerConfig) -> Result<Vec<TrackOutput>> {
    videos
        .iter()
        .map(|v| track_sequence(&v.detections, model, cfg, v.video.effective_fps, v.dims(), v.k()))
        .collect()
}

/// Per-video scores and the per-k pooled aggregate, with `k` in ascending
/// order.
pub fn evaluate(videos: &[VideoData], results: &[TrackResult]) -> Result<(Vec<(String, u32, EvalResult)>, AggregateResult)> {
    let counts = videos
        .iter()
        .zip(results)
        .map(|(v, r)| {
            let seq = &v.video.sequence;
            Ok((seq.name.clone(), v.k(), EvalCounts::compute(&seq.frame_boxes(), &r.frame_boxes(seq.length))?))
        })
        .collect::<Result<Vec<_>>>()?;
    pool_counts(&counts)
}

/// Scores per `(video, k, counts)` entry and pooled per `k`.
pub fn pool_counts(entries: &[(String, u32, EvalCounts)]) -> Result<(Vec<(String, u32, EvalResult)>, AggregateResult)> {
    let mut rows = Vec::with_capacity(entries.len());
    let mut pooled: BTreeMap<u32, EvalCounts> = BTreeMap::new();
    for (name, k, counts) in entries {
        rows.push((name.clone(), *k, counts.result()?));
        pooled.entry(*k).or_default().add(counts);
    }
    let per_k = pooled
        .into_iter()
        .map(|(k, c)| Ok((k, c.result()?)))
        .collect::<Result<Vec<_>>>()?;
    Ok((rows, aggregate(&per_k)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::SceneConfig;

    #[test]
    fn videos_share_parent_detections() {
        let parents = SceneConfig { sequences: 1, frames: 40, ..Default::default() }.generate().unwrap();
        let v = build_videos(&parents, &[1, 4], &NoiseModel::default(), 16, 3).unwrap();
        assert_eq!(v.len(), 5);
        // Video k=4, offset 2 shows original frame 6 as its second frame.
        let full = &v[0];
        let sub = &v[2];
        assert_eq!(sub.video.frame_map[1], 6);
        assert_eq!(sub.detections[1], full.detections[5]);
    }

    #[test]
    fn thinning_keeps_spread_offsets() {
        let parents = SceneConfig { sequences: 1, frames: 60, ..Default::default() }.generate().unwrap();
        let v = build_videos(&parents, &[1, 8], &NoiseModel::zero(), 8, 3).unwrap();
        let t = thin_videos(v, 2);
        let offsets: Vec<(u32, u32)> = t.iter().map(|v| (v.k(), v.video.offset)).collect();
        assert_eq!(offsets, vec![(1, 1), (8, 1), (8, 5)]);
    }
}
