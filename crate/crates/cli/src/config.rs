//! Plain-text `key=value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use framot_core::faam::{FaamShape, IbdvCriterion, TrainConfig};
use framot_core::pts::PtsConfig;
use framot_core::scene::SceneConfig;
use framot_core::seeding::{derive, hash_str};
use framot_core::synth_detector::NoiseModel;
use framot_core::tracker::{FrameRateMode, TrackerConfig};

/// A configuration problem: exit code 2.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("missing config key `{0}`")]
    Missing(String),
    #[error("unknown config key `{0}`")]
    Unknown(String),
    #[error("config key `{key}`: {msg}")]
    Invalid { key: String, msg: String },
    #[error("{0}")]
    Syntax(String),
}

pub struct Key {
    pub name: &'static str,
    /// `None` marks a required key.
    pub default: Option<&'static str>,
    pub symbol: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, default: Option<&'static str>, symbol: &'static str, help: &'static str) -> Key {
    Key { name, default, symbol, help }
}

pub const KEYS: &[Key] = &[
    key("data_dir", None, "", "benchmark root holding sequence dirs, or `synthetic`"),
    key("out_dir", Some("out"), "", "output root"),
    key("seed", Some("1"), "", "root seed for every random draw"),
    key("k_set", Some("1,2,4,8,16,25,36,50"), "k_set", "sampling factors"),
    key("scene_sequences", Some("10"), "", "synthetic evaluation sequences"),
    key("scene_frames", Some("600"), "", "frames per synthetic sequence"),
    key("scene_concurrent", Some("10"), "", "objects visible at once"),
    key("train_sequences", Some("4"), "", "synthetic training sequences (separate scenes)"),
    key("embed_dim", Some("32"), "", "appearance embedding length"),
    key("center_jitter", Some("0.04"), "", "box centre noise, fraction of box size"),
    key("size_jitter", Some("0.05"), "", "box size noise, relative"),
    key("miss_prob", Some("0.05"), "", "probability a visible object is missed"),
    key("fp_rate", Some("0.5"), "", "mean false detections per frame"),
    key("conf_true_mean", Some("0.75"), "", "true detection confidence mean"),
    key("conf_true_std", Some("0.15"), "", "true detection confidence std"),
    key("conf_false_mean", Some("0.3"), "", "false detection confidence mean"),
    key("conf_false_std", Some("0.12"), "", "false detection confidence std"),
    key("embed_noise", Some("0.2"), "", "per-dimension appearance noise std"),
    key("lambda_low", Some("0.1"), "λ_low", "detections below are discarded"),
    key("lambda_high", Some("0.6"), "λ_high", "first-stage and track-birth threshold"),
    key("lambda_i", Some("30"), "λ_i", "frames a lost trajectory is kept"),
    key("score_gate", Some("0.1"), "", "pairs need a score above this"),
    key("iou_pattern_threshold", Some("0.7"), "", "IoU for fusing detections with patterns"),
    key("frame_rate_mode", Some("known"), "", "known | unknown"),
    key("ibdv_criterion", Some("dist"), "", "dist | sim | random"),
    key("ibdv_scale", Some("50"), "", "factor on best-matched distances fed to attention"),
    key("s", Some("6"), "s", "frame rate embedding scale"),
    key("d_sigma", Some("128"), "D_σ", "frame rate embedding length"),
    key("ema", Some("0.9"), "", "appearance cache momentum"),
    key("aff_hidden", Some("64,64,64"), "", "affinity network hidden widths"),
    key("att_hidden", Some("96,80"), "", "attention network hidden widths"),
    key("attention", Some("true"), "", "false gives the unified baseline"),
    key("pts", Some("true"), "PTS", "false trains on raw detection pairs"),
    key("periods", Some("3"), "N_p", "training periods"),
    key("steps", Some("60"), "τ", "optimizer steps per period"),
    key("pairs_per_period", Some("192"), "", "frame pairs drawn per period"),
    key("lr", Some("0.05"), "λ_A", "learning rate"),
    key("beta", Some("1"), "β", "loss weight"),
    key("momentum", Some("0.9"), "", "SGD momentum"),
    key("train_k_set", Some(""), "", "sampling factors for training pairs (empty: k_set)"),
    key("train_videos_per_k", Some("2"), "", "videos kept per (sequence, k) for training"),
    key("lambda_e", Some("0"), "λ_E", "accepted and ignored: the extractor is synthetic"),
    key("r_set", Some("1,1.5,2,3"), "r", "candidate-count thresholding factors"),
    key("affinity_pairs", Some("20"), "", "frame pairs exported by export-affinity"),
    key("checkpoint", Some(""), "", "network file (empty: <out_dir>/faam.ckpt)"),
    key("results_dir", Some(""), "", "tracker output root (empty: <out_dir>/track)"),
];

/// Help text table of every key.
pub fn keys_help() -> String {
    let mut s = String::from("Config keys (key=value; `--set` overrides the file):\n");
    for k in KEYS {
        let default = k.default.map_or("(required)".to_string(), |d| if d.is_empty() { "\"\"".into() } else { d.into() });
        let sym = if k.symbol.is_empty() { String::new() } else { format!(" [{}]", k.symbol) };
        let _ = writeln!(s, "  {:<22} {:<20} {}{}", k.name, default, k.help, sym);
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn parse_pairs(text: &str, origin: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax(format!("{origin}:{}: expected key=value", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    /// Defaults, then the file, then overrides; unknown keys are rejected
    /// and required keys must be present.
    pub fn load(file: Option<&str>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut values: BTreeMap<String, String> = KEYS
            .iter()
            .filter_map(|k| k.default.map(|d| (k.name.to_string(), d.to_string())))
            .collect();
        let mut set = |pairs: Vec<(String, String)>| -> Result<(), ConfigError> {
            for (k, v) in pairs {
                if !KEYS.iter().any(|d| d.name == k) {
                    return Err(ConfigError::Unknown(k));
                }
                values.insert(k, v);
            }
            Ok(())
        };
        if let Some(text) = file {
            set(parse_pairs(text, "config")?)?;
        }
        for o in overrides {
            set(parse_pairs(o, "--set")?)?;
        }
        for k in KEYS {
            if k.default.is_none() && !values.contains_key(k.name) {
                return Err(ConfigError::Missing(k.name.into()));
            }
        }
        Ok(Self { values })
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("key table covers every lookup")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key).parse().map_err(|e: T::Err| ConfigError::Invalid { key: key.into(), msg: e.to_string() })
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key);
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|e: T::Err| ConfigError::Invalid { key: key.into(), msg: e.to_string() })
            })
            .collect()
    }

    fn invalid(key: &str, msg: &str) -> ConfigError {
        ConfigError::Invalid { key: key.into(), msg: msg.into() }
    }

    pub fn seed(&self) -> Result<u64, ConfigError> {
        self.get("seed")
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.raw("out_dir"))
    }

    pub fn checkpoint(&self) -> PathBuf {
        match self.raw("checkpoint") {
            "" => self.out_dir().join("faam.ckpt"),
            p => PathBuf::from(p),
        }
    }

    pub fn results_dir(&self) -> PathBuf {
        match self.raw("results_dir") {
            "" => self.out_dir().join("track"),
            p => PathBuf::from(p),
        }
    }

    /// `None` selects the synthetic scene generator.
    pub fn data_dir(&self) -> Option<&Path> {
        match self.raw("data_dir") {
            "synthetic" => None,
            p => Some(Path::new(p)),
        }
    }

    pub fn k_set(&self) -> Result<Vec<u32>, ConfigError> {
        let ks: Vec<u32> = self.list("k_set")?;
        if ks.is_empty() || ks.contains(&0) {
            return Err(Self::invalid("k_set", "needs positive sampling factors"));
        }
        Ok(ks)
    }

    pub fn train_k_set(&self) -> Result<Vec<u32>, ConfigError> {
        let ks: Vec<u32> = self.list("train_k_set")?;
        if ks.is_empty() {
            return self.k_set();
        }
        if ks.contains(&0) {
            return Err(Self::invalid("train_k_set", "needs positive sampling factors"));
        }
        Ok(ks)
    }

    /// Scene generator for the evaluation (`train = false`) or training
    /// split; the two splits use unrelated seeds.
    pub fn scene(&self, train: bool) -> Result<SceneConfig, ConfigError> {
        let tag = if train { "train-scene" } else { "eval-scene" };
        let cfg = SceneConfig {
            sequences: self.get(if train { "train_sequences" } else { "scene_sequences" })?,
            frames: self.get("scene_frames")?,
            concurrent: self.get("scene_concurrent")?,
            seed: derive(self.seed()?, hash_str(tag)),
            ..SceneConfig::default()
        };
        cfg.validate().map_err(|e| Self::invalid("scene_sequences", &e.to_string()))?;
        Ok(cfg)
    }

    pub fn noise(&self) -> Result<NoiseModel, ConfigError> {
        let n = NoiseModel {
            center_jitter: self.get("center_jitter")?,
            size_jitter: self.get("size_jitter")?,
            miss_prob: self.get("miss_prob")?,
            fp_rate: self.get("fp_rate")?,
            conf_true: (self.get("conf_true_mean")?, self.get("conf_true_std")?),
            conf_false: (self.get("conf_false_mean")?, self.get("conf_false_std")?),
            embed_noise: self.get("embed_noise")?,
        };
        n.validate().map_err(|e| Self::invalid("noise", &e.to_string()))?;
        Ok(n)
    }

    pub fn embed_dim(&self) -> Result<usize, ConfigError> {
        let d: usize = self.get("embed_dim")?;
        if d == 0 {
            return Err(Self::invalid("embed_dim", "must be positive"));
        }
        Ok(d)
    }

    pub fn tracker(&self) -> Result<TrackerConfig, ConfigError> {
        let t = TrackerConfig {
            lambda_low: self.get("lambda_low")?,
            lambda_high: self.get("lambda_high")?,
            lambda_i: self.get("lambda_i")?,
            score_gate: self.get("score_gate")?,
            iou_pattern_threshold: self.get("iou_pattern_threshold")?,
            frame_rate_mode: self.get::<FrameRateMode>("frame_rate_mode")?,
            ibdv_criterion: self.get::<IbdvCriterion>("ibdv_criterion")?,
            ibdv_scale: self.get("ibdv_scale")?,
            s: self.get("s")?,
            d_sigma: self.get("d_sigma")?,
            ema: self.get("ema")?,
            seed: derive(self.seed()?, hash_str("tracker")),
        };
        t.validate().map_err(|e| Self::invalid("tracker", &e.to_string()))?;
        if t.d_sigma == 0 {
            return Err(Self::invalid("d_sigma", "must be positive"));
        }
        Ok(t)
    }

    pub fn shape(&self) -> Result<FaamShape, ConfigError> {
        let aff: Vec<usize> = self.list("aff_hidden")?;
        let att: Vec<usize> = self.list("att_hidden")?;
        let aff_hidden: [usize; 3] = aff
            .try_into()
            .map_err(|_| Self::invalid("aff_hidden", "needs three widths"))?;
        let att_hidden: [usize; 2] = att
            .try_into()
            .map_err(|_| Self::invalid("att_hidden", "needs two widths"))?;
        if aff_hidden.contains(&0) || att_hidden.contains(&0) {
            return Err(Self::invalid("aff_hidden", "widths must be positive"));
        }
        Ok(FaamShape { aff_hidden, att_hidden, d_sigma: self.get("d_sigma")?, attention: self.get("attention")? })
    }

    pub fn train(&self) -> Result<TrainConfig, ConfigError> {
        let t = TrainConfig {
            lr: self.get("lr")?,
            steps: self.get("steps")?,
            beta: self.get("beta")?,
            seed: derive(self.seed()?, hash_str("train")),
        };
        t.validate().map_err(|e| Self::invalid("lr", &e.to_string()))?;
        Ok(t)
    }

    pub fn pts(&self) -> Result<PtsConfig, ConfigError> {
        Ok(PtsConfig {
            periods: self.get("periods")?,
            pairs_per_period: self.get("pairs_per_period")?,
            k_set: self.train_k_set()?,
            momentum: self.get("momentum")?,
            tracker: self.tracker()?,
        })
    }

    pub fn r_set(&self) -> Result<Vec<f64>, ConfigError> {
        let r: Vec<f64> = self.list("r_set")?;
        if r.is_empty() || r.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Self::invalid("r_set", "needs positive factors"));
        }
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = RunConfig::load(Some("data_dir=synthetic\nseed=4\n# note\n"), &["seed=9".into()]).unwrap();
        assert_eq!(c.seed().unwrap(), 9);
        assert_eq!(c.k_set().unwrap(), vec![1, 2, 4, 8, 16, 25, 36, 50]);
        assert!(c.data_dir().is_none());
        assert_eq!(c.tracker().unwrap().lambda_i, 30);
    }

    #[test]
    fn rejects_unknown_and_missing() {
        assert!(matches!(RunConfig::load(Some("data_dir=x\nbogus=1"), &[]), Err(ConfigError::Unknown(k)) if k == "bogus"));
        assert!(matches!(RunConfig::load(Some("seed=1"), &[]), Err(ConfigError::Missing(k)) if k == "data_dir"));
        let c = RunConfig::load(Some("data_dir=x\nlambda_low=0.9"), &[]).unwrap();
        assert!(c.tracker().is_err());
    }

    #[test]
    fn every_key_has_help() {
        let h = keys_help();
        for k in KEYS {
            assert!(h.contains(k.name));
        }
        for sym in ["λ_low", "λ_high", "λ_i", "N_p", "β", "D_σ", "k_set"] {
            assert!(h.contains(sym), "{sym}");
        }
    }
}
