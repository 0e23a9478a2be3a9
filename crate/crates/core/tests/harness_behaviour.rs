mod common;

use freespace::config::{ModelConfig, TrainConfig};
use freespace::data::{FrameSequence, Split};
use freespace::fusion::Model;
use freespace::harness::{pick_frames, train, write_log, PickMode};
use freespace::synthgen::{generate_sequence, JitterSpec, SceneSpec, Shoreline};
use freespace::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config() -> ModelConfig {
    ModelConfig {
        input_size: (32, 32),
        feature_grid: (8, 8),
        feature_channels: 8,
        decoder_channels: 8,
        gate_embed_dim: 8,
        ..ModelConfig::tiny()
    }
}

fn data() -> Vec<FrameSequence> {
    (0..2)
        .map(|i| {
            let mut s = generate_sequence(&SceneSpec {
                shoreline: Shoreline {
                    control_rows: vec![26.0 + 4.0 * i as f64, 30.0, 34.0],
                    drift_px: 1.0,
                    drift_period_frames: 8.0,
                },
                reflection_strength: 0.5,
                texture_amplitude: 0.5,
                jitter: JitterSpec {
                    max_shift_px: 1.0,
                    max_rot_deg: 0.3,
                    temporal_correlation: 0.8,
                },
                ..SceneSpec::still(i, 8, (64, 64), 30.0)
            })
            .unwrap();
            s.id = format!("s{i}");
            s.split = Split::Train;
            s
        })
        .collect()
}

#[test]
fn random_pick_is_uniform_over_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut counts = std::collections::BTreeMap::new();
    let n = 100_000;
    for _ in 0..n {
        let mut p = pick_frames(10, 4, 2, PickMode::RandomKOfM, &mut rng).unwrap().indices;
        p.sort();
        *counts.entry(p).or_insert(0usize) += 1;
    }
    assert_eq!(counts.len(), 6);
    for (pair, c) in counts {
        let f = c as f64 / n as f64;
        assert!((f - 1.0 / 6.0).abs() < 0.01, "{pair:?} drawn with frequency {f}");
    }
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let mut model = Model::new(small_config(), 3).unwrap();
    let before = model.clone();
    let tc = TrainConfig {
        iterations: 3,
        learning_rate: 0.0,
        batch_size: 2,
        ..TrainConfig::default()
    };
    let log = train(&mut model, &data(), &tc, |_| Ok(())).unwrap();
    assert_eq!(log.len(), 3);
    assert_eq!(model, before);
}

#[test]
fn loss_decreases_over_training() {
    let mut model = Model::new(ModelConfig::tiny(), 1).unwrap();
    let tc = TrainConfig {
        iterations: 200,
        learning_rate: 0.01,
        batch_size: 2,
        ..TrainConfig::default()
    };
    let log = train(&mut model, &data(), &tc, |_| Ok(())).unwrap();
    let mean = |r: &[freespace::harness::IterationLog]| r.iter().map(|l| l.total).sum::<f64>() / r.len() as f64;
    let (first, last) = (mean(&log[..20]), mean(&log[180..]));
    assert!(last < 0.5 * first, "loss {first} -> {last}");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.jsonl");
    write_log(&path, &log).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 200);
    let row: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert!(row.get("total").is_some() && row.get("l_con").is_some());
}

#[test]
fn diverging_training_reports_non_finite() {
    let mut model = Model::new(small_config(), 1).unwrap();
    let tc = TrainConfig {
        iterations: 50,
        learning_rate: 1e12,
        batch_size: 1,
        ..TrainConfig::default()
    };
    let err = train(&mut model, &data(), &tc, |_| Ok(())).unwrap_err();
    assert!(matches!(err, Error::NonFinite { .. }), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn sequences_shorter_than_the_pool_are_rejected() {
    let mut short = data();
    for s in &mut short {
        s.frames.truncate(3);
    }
    let mut model = Model::new(small_config(), 1).unwrap();
    let tc = TrainConfig {
        iterations: 1,
        ..TrainConfig::default()
    };
    assert!(train(&mut model, &short, &tc, |_| Ok(())).is_err());
}
