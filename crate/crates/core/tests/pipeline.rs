use framot_core::benchmark::{build_videos, evaluate, thin_videos, track_videos};
use framot_core::faam::{read_checkpoint, write_checkpoint, FaamParams, FaamShape, TrainConfig};
use framot_core::pts::{run_pts, PtsConfig};
use framot_core::scene::SceneConfig;
use framot_core::synth_detector::NoiseModel;
use framot_core::tracker::{Model, TrackerConfig};

fn small_scene(seed: u64) -> SceneConfig {
    SceneConfig { sequences: 2, frames: 200, seed, ..SceneConfig::default() }
}

#[test]
fn train_track_evaluate() {
    let ks = [1, 4, 16];
    let train = thin_videos(build_videos(&small_scene(5).generate().unwrap(), &ks, &NoiseModel::default(), 32, 6).unwrap(), 1);
    let cfg = PtsConfig { periods: 2, pairs_per_period: 48, k_set: ks.to_vec(), ..PtsConfig::default() };
    let init = FaamParams::init(&FaamShape::default(), 8);
    let (params, logs) = run_pts(&cfg, &train, &TrainConfig { steps: 15, ..TrainConfig::default() }, init.clone()).unwrap();
    assert_eq!(logs.len(), 2);
    assert!(logs.iter().all(|l| l.losses.len() == 15 && l.losses.iter().all(|x| x.is_finite())));
    assert!(logs[1].last_loss < logs[0].first_loss);
    assert_ne!(params, init);

    // The checkpoint round trip keeps tracking output identical.
    let restored = read_checkpoint(&write_checkpoint(&params)).unwrap();
    let eval = build_videos(&small_scene(9).generate().unwrap(), &ks, &NoiseModel::default(), 32, 10).unwrap();
    let tracker = TrackerConfig::default();
    let a = track_videos(&eval, Model::Faam(&params), &tracker).unwrap();
    let b = track_videos(&eval, Model::Faam(&restored), &tracker).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.result == y.result));

    let results: Vec<_> = a.into_iter().map(|o| o.result).collect();
    let (rows, agg) = evaluate(&eval, &results).unwrap();
    assert_eq!(rows.len(), 2 * ks.iter().sum::<u32>() as usize);
    assert_eq!(agg.per_k.iter().map(|p| p.0).collect::<Vec<_>>(), ks);
    assert!(agg.m_hota > 0.3 && agg.m_hota <= 1.0, "{}", agg.m_hota);
    assert!((0.0..1.0).contains(&agg.vr));
}
