//! Multi-frame-rate benchmark generation.
//!
//! A sequence of `N` frames at `F` fps is split into `k` videos at `F/k` fps;
//! video `i` (1-based) takes original frames `(j-1)k + i` for `j = 1, 2, ...`.
//! The dynamic variant instead draws frames at random without replacement,
//! which produces irregular gaps.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::mot_io::{GtEntry, SeqInfo, Sequence};

/// Sampling factors used by the benchmark: 25 fps down to 0.5 fps.
pub const DEFAULT_K_SET: [u32; 8] = [1, 2, 4, 8, 16, 25, 36, 50];

/// One video cut out of a parent sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ResampledSequence {
    pub parent: String,
    pub k: u32,
    /// 1-based video index `i` within `1..=k`.
    pub offset: u32,
    pub effective_fps: f64,
    /// `frame_map[j-1]` is the original frame shown as new frame `j`.
    pub frame_map: Vec<u32>,
    /// The video with ground truth remapped to new frame indices.
    pub sequence: Sequence,
}

impl ResampledSequence {
    pub fn info(&self) -> SeqInfo {
        SeqInfo {
            parent: Some(self.parent.clone()),
            k: Some(self.k),
            offset: Some(self.offset),
            effective_fps: Some(self.effective_fps),
            ..SeqInfo::of(&self.sequence)
        }
    }

    pub fn len(&self) -> usize {
        self.frame_map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_map.is_empty()
    }
}

fn video_name(parent: &str, k: u32, offset: u32) -> String {
    format!("{parent}_k{k}_{offset}")
}

fn cut(seq: &Sequence, k: u32, offset: u32, name: String, frame_map: Vec<u32>) -> ResampledSequence {
    let new_index: HashMap<u32, u32> = frame_map
        .iter()
        .enumerate()
        .map(|(j, &orig)| (orig, j as u32 + 1))
        .collect();
    let gt = seq
        .gt
        .iter()
        .filter_map(|e| {
            new_index.get(&e.frame).map(|&frame| GtEntry { frame, ..*e })
        })
        .collect();
    let effective_fps = seq.fps / f64::from(k);
    ResampledSequence {
        parent: seq.name.clone(),
        k,
        offset,
        effective_fps,
        sequence: Sequence {
            name,
            fps: effective_fps,
            width: seq.width,
            height: seq.height,
            length: frame_map.len() as u32,
            gt,
        },
        frame_map,
    }
}

/// Stride resampling: returns the `k` videos `i = 1..=k`.
pub fn resample(seq: &Sequence, k: u32) -> Result<Vec<ResampledSequence>> {
    if k == 0 {
        return Err(invalid("sampling factor k must be at least 1"));
    }
    Ok((1..=k)
        .map(|i| {
            let frame_map: Vec<u32> = (i..=seq.length).step_by(k as usize).collect();
            cut(seq, k, i, video_name(&seq.name, k, i), frame_map)
        })
        .collect())
}

/// Inter-frame gap statistics of a dynamically resampled set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapStats {
    pub mean_frames: f64,
    pub median_frames: f64,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub gaps: usize,
}

impl GapStats {
    pub fn from_videos(videos: &[ResampledSequence], parent_fps: f64) -> Self {
        let mut gaps: Vec<u32> = videos
            .iter()
            .flat_map(|v| v.frame_map.windows(2).map(|w| w[1] - w[0]))
            .collect();
        gaps.sort_unstable();
        let n = gaps.len();
        let (mean, median) = if n == 0 {
            (0.0, 0.0)
        } else {
            let mean = gaps.iter().map(|&g| f64::from(g)).sum::<f64>() / n as f64;
            let median = if n % 2 == 1 {
                f64::from(gaps[n / 2])
            } else {
                0.5 * f64::from(gaps[n / 2 - 1] + gaps[n / 2])
            };
            (mean, median)
        };
        let ms = 1000.0 / parent_fps;
        Self {
            mean_frames: mean,
            median_frames: median,
            mean_ms: mean * ms,
            median_ms: median * ms,
            gaps: n,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("gap stats serialize")
    }
}

/// Dynamic resampling: at step `t` (0-based) draw `⌊pool/(k-t)⌋` frames
/// uniformly without replacement from the remaining pool.
pub fn dynamic_resample(seq: &Sequence, k: u32, seed: u64) -> Result<(Vec<ResampledSequence>, GapStats)> {
    if k == 0 {
        return Err(invalid("sampling factor k must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<u32> = (1..=seq.length).collect();
    let mut videos = Vec::with_capacity(k as usize);
    for t in 0..k {
        let take = pool.len() / (k - t) as usize;
        let mut picked = vec![false; pool.len()];
        for idx in sample(&mut rng, pool.len(), take) {
            picked[idx] = true;
        }
        let mut frame_map = Vec::with_capacity(take);
        let mut rest = Vec::with_capacity(pool.len() - take);
        for (f, hit) in pool.iter().zip(&picked) {
            if *hit {
                frame_map.push(*f);
            } else {
                rest.push(*f);
            }
        }
        pool = rest;
        let i = t + 1;
        videos.push(cut(seq, k, i, format!("{}_dyn{k}_{i}", seq.name), frame_map));
    }
    let stats = GapStats::from_videos(&videos, seq.fps);
    Ok((videos, stats))
}

/// All videos of a set of parent sequences at each sampling factor.
#[derive(Debug, Clone)]
pub struct BenchmarkSuite {
    pub k_set: Vec<u32>,
    /// `per_k[n]` holds every video for `k_set[n]`, parents in input order.
    pub per_k: Vec<Vec<ResampledSequence>>,
}

impl BenchmarkSuite {
    pub fn build(parents: &[Sequence], k_set: &[u32]) -> Result<Self> {
        let per_k = k_set
            .iter()
            .map(|&k| {
                parents
                    .iter()
                    .map(|p| resample(p, k))
                    .collect::<Result<Vec<_>>>()
                    .map(|v| v.into_iter().flatten().collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            k_set: k_set.to_vec(),
            per_k,
        })
    }

    pub fn videos(&self) -> impl Iterator<Item = &ResampledSequence> {
        self.per_k.iter().flatten()
    }
}

/// Mean video length rounded half-up: 759 frames at k=2 gives 380.
pub fn rounded_mean_length(videos: &[ResampledSequence]) -> u32 {
    if videos.is_empty() {
        return 0;
    }
    let total: usize = videos.iter().map(ResampledSequence::len).sum();
    (total as f64 / videos.len() as f64 + 0.5).floor() as u32
}
