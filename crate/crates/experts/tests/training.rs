use roadex_core::simgen::{generate_video, AnomalyKind, ScenarioSpec};
use roadex_core::VideoRecord;
use roadex_experts::{BehaviorConfig, BehaviorExpert, InteractionConfig, InteractionExpert};

fn videos(kind: AnomalyKind, n: u64, frames: usize, seed: u64) -> Vec<VideoRecord> {
    (0..n)
        .map(|i| {
            let spec = ScenarioSpec {
                num_frames: frames,
                num_objects: 3,
                anomaly_kind: kind,
                anomaly_start_frac: 0.4,
                anomaly_end_frac: 0.9,
                ..ScenarioSpec::normal(format!("v{i}"), seed + i)
            };
            generate_video(&spec).unwrap()
        })
        .collect()
}

fn behavior_config(seed: u64) -> BehaviorConfig {
    BehaviorConfig {
        hidden: 16,
        box_encoder_mlp: vec![24, 16],
        epochs: 3,
        seed,
        ..BehaviorConfig::default()
    }
}

#[test]
fn behavior_training_reduces_loss_and_predicts_next_box() {
    let train = videos(AnomalyKind::None, 12, 80, 0);
    let mut e = BehaviorExpert::new(behavior_config(0)).unwrap();
    let r = e.train(&train, &[]).unwrap();
    assert!(r.final_loss() < r.initial_loss, "{r:?}");
    let held_out = videos(AnomalyKind::None, 4, 80, 500);
    let err = e.one_step_center_error(&held_out);
    assert!(err < 0.01, "one-step center error {err}");
}

#[test]
fn behavior_training_is_deterministic() {
    let train = videos(AnomalyKind::None, 3, 40, 7);
    let cfg = BehaviorConfig {
        epochs: 1,
        ..behavior_config(3)
    };
    let a = BehaviorExpert::new(cfg.clone()).unwrap().train(&train, &[]).unwrap();
    let b = BehaviorExpert::new(cfg).unwrap().train(&train, &[]).unwrap();
    assert_eq!(a, b);
}

#[test]
fn behavior_scores_zigzag_above_its_surroundings() {
    let train = videos(AnomalyKind::None, 12, 80, 0);
    let mut e = BehaviorExpert::new(behavior_config(1)).unwrap();
    e.train(&train, &[]).unwrap();
    let mut wins = 0;
    let test = videos(AnomalyKind::Zigzag, 6, 120, 900);
    for v in &test {
        let raw = e.raw_scores(v).unwrap();
        let (a, b) = v.anomaly_interval().unwrap();
        let mean = |r: std::ops::Range<usize>| r.clone().map(|t| raw.scores[t]).sum::<f64>() / r.len() as f64;
        if mean(a..b) > mean(raw.valid_from + 5..a) {
            wins += 1;
        }
    }
    assert!(wins >= 5, "zigzag raised the score in {wins} of {} videos", test.len());
}

#[test]
fn interaction_training_reduces_loss_deterministically() {
    let train = videos(AnomalyKind::None, 6, 40, 20);
    let cfg = InteractionConfig {
        hidden: 16,
        encoder_mlp: vec![16],
        decoder_mlp: vec![16],
        decoder_out_mlp: vec![16],
        epochs: 3,
        max_samples_per_epoch: Some(400),
        seed: 4,
        ..InteractionConfig::default()
    };
    let mut e = InteractionExpert::new(cfg.clone()).unwrap();
    let r = e.train(&train, &[]).unwrap();
    assert!(r.final_loss() < r.initial_loss, "{r:?}");
    let again = InteractionExpert::new(cfg).unwrap().train(&train, &[]).unwrap();
    assert_eq!(r.checksum, again.checksum);
}
