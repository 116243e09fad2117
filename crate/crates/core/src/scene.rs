//! Seeded synthetic ground truth: pedestrian-sized boxes drifting through a
//! fixed camera view.
//!
//! Objects are born and retire only inside fixed windows of every 100 frames
//! (births in `[0, 10)`, retirements in `[50, 60)` of the frame index modulo
//! 100). A retired identity is therefore always gone for more than 40 frames
//! before a new one appears.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Result};
use crate::mot_io::{BoundingBox, GtEntry, Sequence};
use crate::seeding::{derive, rng};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub sequences: usize,
    pub frames: u32,
    /// Target number of simultaneously visible objects.
    pub concurrent: usize,
    pub width: f64,
    pub height: f64,
    pub fps: f64,
    /// Range of object heights in pixels.
    pub min_height: f64,
    pub max_height: f64,
    /// Range of initial speeds in pixels per original frame.
    pub min_speed: f64,
    pub max_speed: f64,
    /// Per-frame velocity perturbation (pixels/frame², std).
    pub accel_std: f64,
    /// Range of nominal lifetimes in frames.
    pub min_life: u32,
    pub max_life: u32,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            sequences: 10,
            frames: 600,
            concurrent: 10,
            width: 1920.0,
            height: 1080.0,
            fps: 25.0,
            min_height: 80.0,
            max_height: 200.0,
            min_speed: 1.0,
            max_speed: 5.0,
            accel_std: 0.08,
            min_life: 100,
            max_life: 400,
            seed: 7,
        }
    }
}

const ASPECT: f64 = 0.41;
const MAX_SPEED_CAP: f64 = 8.0;

struct Walker {
    id: u32,
    cx: f64,
    cy: f64,
    vx: f64,
    vy: f64,
    h: f64,
    retire_after: u32,
}

fn birth_window(frame: u32) -> bool {
    frame % 100 < 10
}

fn retire_window(frame: u32) -> bool {
    (50..60).contains(&(frame % 100))
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.concurrent == 0 {
            return Err(invalid("scene needs at least one frame and one object"));
        }
        if !(self.min_height > 0.0 && self.min_height <= self.max_height) {
            return Err(invalid("bad object height range"));
        }
        if self.max_height * ASPECT >= self.width || self.max_height >= self.height {
            return Err(invalid("objects larger than the image"));
        }
        if !(self.min_speed >= 0.0 && self.min_speed <= self.max_speed) || self.min_life > self.max_life {
            return Err(invalid("bad speed or lifetime range"));
        }
        Ok(())
    }

    /// Generates `self.sequences` sequences named `synth-01`, `synth-02`, ...
    pub fn generate(&self) -> Result<Vec<Sequence>> {
        self.validate()?;
        (0..self.sequences).map(|s| self.generate_one(s)).collect()
    }

    fn spawn<R: Rng>(&self, rng: &mut R, id: u32, frame: u32) -> Walker {
        let h = rng.random_range(self.min_height..=self.max_height);
        let w = h * ASPECT;
        let speed = rng.random_range(self.min_speed..=self.max_speed);
        let dir = rng.random_range(0.0..std::f64::consts::TAU);
        Walker {
            id,
            cx: rng.random_range(0.5 * w..=self.width - 0.5 * w),
            cy: rng.random_range(0.5 * h..=self.height - 0.5 * h),
            vx: speed * dir.cos(),
            vy: speed * dir.sin(),
            h,
            retire_after: frame + rng.random_range(self.min_life..=self.max_life),
        }
    }

    fn generate_one(&self, index: usize) -> Result<Sequence> {
        let mut rng = rng(derive(self.seed, index as u64 + 1));
        let accel = Normal::new(0.0, self.accel_std.max(0.0)).map_err(|e| invalid(e.to_string()))?;
        let mut next_id = 1u32;
        let mut alive: Vec<Walker> = Vec::new();
        for _ in 0..self.concurrent {
            alive.push(self.spawn(&mut rng, next_id, 1));
            next_id += 1;
        }
        let mut gt = Vec::new();
        for frame in 1..=self.frames {
            if frame > 1 {
                if retire_window(frame) {
                    alive.retain(|w| w.retire_after > frame);
                }
                if birth_window(frame) && alive.len() < self.concurrent {
                    alive.push(self.spawn(&mut rng, next_id, frame));
                    next_id += 1;
                }
                for w in &mut alive {
                    self.step(w, &accel, &mut rng);
                }
            }
            for w in &alive {
                let bw = w.h * ASPECT;
                gt.push(GtEntry {
                    frame,
                    id: w.id,
                    bbox: BoundingBox {
                        x: w.cx - 0.5 * bw,
                        y: w.cy - 0.5 * w.h,
                        w: bw,
                        h: w.h,
                    },
                    visibility_flag: true,
                });
            }
        }
        Sequence::new(
            format!("synth-{:02}", index + 1),
            self.fps,
            self.width,
            self.height,
            self.frames,
            gt,
        )
    }

    fn step<R: Rng>(&self, w: &mut Walker, accel: &Normal<f64>, rng: &mut R) {
        w.vx += accel.sample(rng);
        w.vy += accel.sample(rng);
        let speed = w.vx.hypot(w.vy);
        if speed > MAX_SPEED_CAP {
            w.vx *= MAX_SPEED_CAP / speed;
            w.vy *= MAX_SPEED_CAP / speed;
        }
        let half_w = 0.5 * w.h * ASPECT;
        let half_h = 0.5 * w.h;
        w.cx += w.vx;
        w.cy += w.vy;
        if w.cx < half_w {
            w.cx = 2.0 * half_w - w.cx;
            w.vx = w.vx.abs();
        } else if w.cx > self.width - half_w {
            w.cx = 2.0 * (self.width - half_w) - w.cx;
            w.vx = -w.vx.abs();
        }
        if w.cy < half_h {
            w.cy = 2.0 * half_h - w.cy;
            w.vy = w.vy.abs();
        } else if w.cy > self.height - half_h {
            w.cy = 2.0 * (self.height - half_h) - w.cy;
            w.vy = -w.vy.abs();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mot_io::sequence_stats;

    #[test]
    fn default_benchmark_shape() {
        let seqs = SceneConfig::default().generate().unwrap();
        assert_eq!(seqs.len(), 10);
        for s in &seqs {
            let (n, ids) = sequence_stats(s);
            assert_eq!(n, 600);
            assert!(ids >= 20, "{} has only {ids} identities", s.name);
            for e in &s.gt {
                assert!(e.bbox.x >= -1e-9 && e.bbox.right() <= s.width + 1e-9);
                assert!(e.bbox.y >= -1e-9 && e.bbox.bottom() <= s.height + 1e-9);
            }
        }
    }

    #[test]
    fn deterministic() {
        let cfg = SceneConfig { sequences: 2, frames: 120, ..Default::default() };
        assert_eq!(cfg.generate().unwrap(), cfg.generate().unwrap());
        let other = SceneConfig { seed: 8, ..cfg.clone() };
        assert_ne!(cfg.generate().unwrap(), other.generate().unwrap());
    }

    #[test]
    fn retirements_precede_births_by_more_than_forty_frames() {
        let seqs = SceneConfig { sequences: 3, ..Default::default() }.generate().unwrap();
        for s in &seqs {
            let mut first = std::collections::BTreeMap::new();
            let mut last = std::collections::BTreeMap::new();
            for e in &s.gt {
                first.entry(e.id).or_insert(e.frame);
                last.insert(e.id, e.frame);
            }
            let ends: Vec<u32> = last.values().copied().filter(|&f| f < s.length).collect();
            for &start in first.values().filter(|&&f| f > 1) {
                for &end in &ends {
                    assert!(start <= end || start - end > 40, "birth {start} after retirement {end}");
                }
            }
        }
    }
}
