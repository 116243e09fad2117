use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use framot_core::framerate_sim::resample;
use framot_core::mot_io::{write_results, write_sequence_dir, BoundingBox, GtEntry, SeqInfo, Sequence, TrackResult, TrackRow};

fn framot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_framot")).args(args).output().unwrap()
}

/// One 10-frame sequence with two walkers.
fn tiny_benchmark(root: &Path) -> Sequence {
    let gt = (1..=10u32)
        .flat_map(|f| {
            [(1u32, 100.0), (2, 600.0)].map(|(id, x0)| GtEntry {
                frame: f,
                id,
                bbox: BoundingBox { x: x0 + 8.0 * f64::from(f), y: 300.0, w: 40.0, h: 100.0 },
                visibility_flag: true,
            })
        })
        .collect();
    let seq = Sequence::new("walk", 30.0, 1280.0, 720.0, 10, gt).unwrap();
    write_sequence_dir(&root.join("walk"), &seq, &SeqInfo::of(&seq)).unwrap();
    seq
}

fn set(kv: String) -> [String; 2] {
    ["--set".into(), kv]
}

fn run(cmd: &str, data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args: Vec<String> = vec![cmd.into()];
    args.extend(set(format!("data_dir={}", data.display())));
    args.extend(set(format!("out_dir={}", out.display())));
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    framot(&refs)
}

#[test]
fn simulate_writes_stride_frame_maps() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    tiny_benchmark(&data);
    let out = tmp.path().join("out");
    let o = run("simulate", &data, &out, &["--set", "k_set=2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let map = |i: u32| fs::read_to_string(out.join(format!("sim/k2/walk_k2_{i}/frame_map.txt"))).unwrap();
    assert_eq!(map(1), "1\n3\n5\n7\n9\n");
    assert_eq!(map(2), "2\n4\n6\n8\n10\n");
    assert!(out.join("sim/source/walk/gt.txt").is_file());
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let seq = tiny_benchmark(&data);
    let out = tmp.path().join("out");
    for k in [1, 2] {
        for v in resample(&seq, k).unwrap() {
            let rows = v.sequence.gt.iter().map(|e| TrackRow { frame: e.frame, id: e.id, bbox: e.bbox, conf: 1.0 }).collect();
            let dir = out.join(format!("track/k{k}"));
            fs::create_dir_all(&dir).unwrap();
            fs::write(dir.join(format!("{}.txt", v.sequence.name)), write_results(&TrackResult::new(rows).unwrap())).unwrap();
        }
    }
    let o = run("eval", &data, &out, &["--set", "k_set=1,2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    for key in ["mHOTA", "mMOTA", "mIDF1"] {
        assert!((s[key].as_f64().unwrap() - 1.0).abs() < 1e-12, "{key}");
    }
    assert_eq!(s["VR"].as_f64().unwrap(), 0.0);
    let csv = fs::read_to_string(out.join("eval.csv")).unwrap();
    assert!(csv.lines().count() > 1);
}

#[test]
fn track_and_export_run_on_small_input() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    tiny_benchmark(&data);
    let out = tmp.path().join("out");
    let ks = ["--set", "k_set=1,2", "--set", "affinity_pairs=4"];
    let mut args = ks.to_vec();
    args.push("--trivial");
    assert!(run("track", &data, &out, &args).status.success());
    assert!(out.join("track/k2/walk_k2_2.txt").is_file());
    assert!(run("export-affinity", &data, &out, &args).status.success());
    let csv = fs::read_to_string(out.join("affinity.csv")).unwrap();
    assert!(csv.starts_with("norm_dist,iou,cos_sim,level,label,pts_flag\n"));
    assert!(run("analyze-candidates", &data, &out, &ks).status.success());
    assert!(run("dynsim", &data, &out, &ks).status.success());
    assert_eq!(fs::read_to_string(out.join("dynsim/gaps.jsonl")).unwrap().lines().count(), 2);
    assert!(run("gen-detections", &data, &out, &ks).status.success());
    assert!(out.join("det/walk/emb.bin").is_file());
}

#[test]
fn exit_codes() {
    assert_eq!(framot(&["--help"]).status.code(), Some(0));
    assert_eq!(framot(&["bogus"]).status.code(), Some(2));
    // No data_dir.
    assert_eq!(framot(&["simulate"]).status.code(), Some(2));
    assert_eq!(framot(&["simulate", "--set", "data_dir=synthetic", "--set", "no_such_key=1"]).status.code(), Some(2));
    assert_eq!(framot(&["simulate", "--set", "data_dir=synthetic", "--set", "seed=abc"]).status.code(), Some(2));
    let tmp = tempfile::tempdir().unwrap();
    // Missing checkpoint is a runtime failure.
    let o = run("track", Path::new("synthetic"), tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("checkpoint"));
}
