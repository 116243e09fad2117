use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use framot_core::benchmark::{build_videos, parent_detections, pool_counts, thin_videos, VideoData};
use framot_core::faam::{read_checkpoint, write_checkpoint, FaamParams};
use framot_core::framerate_sim::{dynamic_resample, resample, ResampledSequence};
use framot_core::metrics::{candidate_curve, candidates_csv, eval_csv, summary_json, EvalCounts};
use framot_core::mot_io::{fmt_num, parse_results, read_benchmark_dir, write_detections, write_results, write_sequence_dir, SeqInfo, Sequence};
use framot_core::pts::{generate_patterns, pair_rows, run_direct, run_pts, sample_pairs};
use framot_core::seeding::{derive, hash_str};
use framot_core::synth_detector::write_embeddings;
use framot_core::tracker::{track_sequence, Model};

use crate::config::RunConfig;
use crate::par_map;

/// Sequences of the evaluation or training split.
fn parents(cfg: &RunConfig, train: bool) -> Result<Vec<Sequence>> {
    Ok(match cfg.data_dir() {
        None => cfg.scene(train)?.generate()?,
        Some(dir) => {
            if train {
                eprintln!("note: training on the same sequences as `data_dir`");
            }
            read_benchmark_dir(dir).with_context(|| format!("reading {}", dir.display()))?
        }
    })
}

fn detector_seed(cfg: &RunConfig, train: bool) -> Result<u64> {
    Ok(derive(cfg.seed()?, hash_str(if train { "detector-train" } else { "detector" })))
}

fn write_video(root: &Path, v: &ResampledSequence) -> Result<()> {
    let dir = root.join(format!("k{}", v.k)).join(&v.sequence.name);
    write_sequence_dir(&dir, &v.sequence, &v.info())?;
    let map: String = v.frame_map.iter().map(|f| format!("{f}\n")).collect();
    fs::write(dir.join("frame_map.txt"), map)?;
    Ok(())
}

pub fn simulate(cfg: &RunConfig) -> Result<()> {
    let root = cfg.out_dir().join("sim");
    let ks = cfg.k_set()?;
    for p in parents(cfg, false)? {
        write_sequence_dir(&root.join("source").join(&p.name), &p, &SeqInfo::of(&p))?;
        for &k in &ks {
            for v in resample(&p, k)? {
                write_video(&root, &v)?;
            }
        }
    }
    Ok(())
}

pub fn dynsim(cfg: &RunConfig) -> Result<()> {
    let root = cfg.out_dir().join("dynsim");
    let ks = cfg.k_set()?;
    let mut log = String::new();
    for p in parents(cfg, false)? {
        let s = derive(cfg.seed()?, hash_str(&p.name));
        for &k in &ks {
            let (videos, stats) = dynamic_resample(&p, k, derive(s, u64::from(k)))?;
            for v in &videos {
                write_video(&root, v)?;
            }
            let mut rec = serde_json::to_value(stats)?;
            rec["sequence"] = p.name.clone().into();
            rec["k"] = k.into();
            let _ = writeln!(log, "{rec}");
        }
    }
    fs::create_dir_all(&root)?;
    fs::write(root.join("gaps.jsonl"), log)?;
    Ok(())
}

pub fn gen_detections(cfg: &RunConfig, jobs: usize) -> Result<()> {
    let root = cfg.out_dir().join("det");
    let (noise, dim, seed) = (cfg.noise()?, cfg.embed_dim()?, detector_seed(cfg, false)?);
    let seqs = parents(cfg, false)?;
    let outputs = par_map(&seqs, jobs, |p| parent_detections(p, &noise, dim, seed));
    for (p, dets) in seqs.iter().zip(outputs) {
        let dets = dets?;
        let dir = root.join(&p.name);
        fs::create_dir_all(&dir)?;
        let boxes: Vec<_> = dets.iter().map(|f| f.detections.clone()).collect();
        fs::write(dir.join("det.txt"), write_detections(&boxes))?;
        let rows: Vec<Vec<f64>> = dets.iter().flat_map(|f| f.embeddings.iter().cloned()).collect();
        fs::write(dir.join("emb.bin"), write_embeddings(&rows)?)?;
    }
    Ok(())
}

fn training_videos(cfg: &RunConfig) -> Result<Vec<VideoData>> {
    let videos = build_videos(&parents(cfg, true)?, &cfg.train_k_set()?, &cfg.noise()?, cfg.embed_dim()?, detector_seed(cfg, true)?)?;
    Ok(thin_videos(videos, cfg.get("train_videos_per_k")?))
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let pts = cfg.pts()?;
    let train = cfg.train()?;
    let shape = cfg.shape()?;
    if cfg.get::<f64>("lambda_e")? != 0.0 {
        eprintln!("note: lambda_e is ignored; the synthetic extractor is not trained");
    }
    let videos = training_videos(cfg)?;
    let init = FaamParams::init(&shape, derive(cfg.seed()?, hash_str("init")));
    let (params, logs) = if cfg.get("pts")? {
        run_pts(&pts, &videos, &train, init)?
    } else {
        run_direct(&pts, pts.periods, &videos, &train, init)?
    };
    fs::create_dir_all(cfg.out_dir())?;
    let ckpt = cfg.checkpoint();
    if let Some(dir) = ckpt.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&ckpt, write_checkpoint(&params))?;
    let log: String = logs.iter().map(|l| l.to_json_line() + "\n").collect();
    fs::write(cfg.out_dir().join("train_log.jsonl"), log)?;
    Ok(())
}

fn load_model(cfg: &RunConfig, trivial: bool) -> Result<Option<FaamParams>> {
    if trivial {
        return Ok(None);
    }
    let path = cfg.checkpoint();
    let bytes = fs::read(&path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    let params = read_checkpoint(&bytes)?;
    if params.d_sigma != cfg.get::<usize>("d_sigma")? {
        bail!("checkpoint expects D_σ = {}, config has {}", params.d_sigma, cfg.raw("d_sigma"));
    }
    Ok(Some(params))
}

fn model(params: &Option<FaamParams>) -> Model<'_> {
    params.as_ref().map_or(Model::Trivial, Model::Faam)
}

pub fn track(cfg: &RunConfig, jobs: usize, trivial: bool) -> Result<()> {
    let params = load_model(cfg, trivial)?;
    let tracker = cfg.tracker()?;
    let (ks, noise, dim, seed) = (cfg.k_set()?, cfg.noise()?, cfg.embed_dim()?, detector_seed(cfg, false)?);
    let root = cfg.results_dir();
    for p in parents(cfg, false)? {
        let videos = build_videos(std::slice::from_ref(&p), &ks, &noise, dim, seed)?;
        let outs = par_map(&videos, jobs, |v| {
            track_sequence(&v.detections, model(&params), &tracker, v.video.effective_fps, v.dims(), v.k())
        });
        for (v, out) in videos.iter().zip(outs) {
            let dir = root.join(format!("k{}", v.k()));
            fs::create_dir_all(&dir)?;
            fs::write(dir.join(format!("{}.txt", v.name())), write_results(&out?.result))?;
        }
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig, jobs: usize) -> Result<()> {
    let root = cfg.results_dir();
    let ks = cfg.k_set()?;
    let mut entries = Vec::new();
    for p in parents(cfg, false)? {
        let videos: Vec<ResampledSequence> = ks
            .iter()
            .map(|&k| resample(&p, k))
            .collect::<framot_core::Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        let counts = par_map(&videos, jobs, |v| -> Result<EvalCounts> {
            let path = root.join(format!("k{}", v.k)).join(format!("{}.txt", v.sequence.name));
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let pred = parse_results(&text).with_context(|| format!("parsing {}", path.display()))?;
            Ok(EvalCounts::compute(&v.sequence.frame_boxes(), &pred.frame_boxes(v.sequence.length))?)
        });
        for (v, c) in videos.iter().zip(counts) {
            entries.push((v.sequence.name.clone(), v.k, c?));
        }
    }
    let (rows, agg) = pool_counts(&entries)?;
    fs::create_dir_all(cfg.out_dir())?;
    fs::write(cfg.out_dir().join("eval.csv"), eval_csv(&rows))?;
    fs::write(cfg.out_dir().join("summary.json"), summary_json(&agg))?;
    Ok(())
}

pub fn analyze_candidates(cfg: &RunConfig) -> Result<()> {
    let rows = candidate_curve(&parents(cfg, false)?, &cfg.k_set()?, &cfg.r_set()?)?;
    fs::create_dir_all(cfg.out_dir())?;
    fs::write(cfg.out_dir().join("candidates.csv"), candidates_csv(&rows))?;
    Ok(())
}

/// Labelled affinity features of sampled frame pairs, once with rows from
/// raw detections (`pts_flag` 0) and once with rows from tracking patterns
/// (`pts_flag` 1).
pub fn export_affinity(cfg: &RunConfig, trivial: bool) -> Result<()> {
    let params = load_model(cfg, trivial)?;
    let tracker = cfg.tracker()?;
    let videos = build_videos(&parents(cfg, false)?, &cfg.k_set()?, &cfg.noise()?, cfg.embed_dim()?, detector_seed(cfg, false)?)?;
    let pairs = sample_pairs(&videos, &cfg.k_set()?, cfg.get("affinity_pairs")?, derive(cfg.seed()?, hash_str("affinity")));
    let used: BTreeSet<usize> = pairs.iter().map(|p| p.0).collect();
    let subset: Vec<VideoData> = used.iter().map(|&i| videos[i].clone()).collect();
    let store = generate_patterns(model(&params), &subset, &tracker)?;
    let mut csv = String::from("norm_dist,iou,cos_sim,level,label,pts_flag\n");
    for &(vi, t) in &pairs {
        for (flag, store) in [(0, None), (1, Some(&store))] {
            let Some(lp) = pair_rows(&videos[vi], t, store, &tracker)? else {
                continue;
            };
            for ((z, label), keep) in lp.z.data.iter().zip(&lp.labels).zip(&lp.mask) {
                if *keep {
                    let _ = writeln!(
                        csv,
                        "{},{},{},{},{},{flag}",
                        fmt_num(z.norm_dist),
                        fmt_num(z.iou),
                        fmt_num(z.cos_sim),
                        fmt_num(z.level),
                        fmt_num(*label)
                    );
                }
            }
        }
    }
    fs::create_dir_all(cfg.out_dir())?;
    fs::write(cfg.out_dir().join("affinity.csv"), csv)?;
    Ok(())
}
