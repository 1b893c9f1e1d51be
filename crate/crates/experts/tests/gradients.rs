use roadex_core::simgen::{generate_video, AnomalyKind, ScenarioSpec};
use roadex_experts::{select_pairs, BehaviorConfig, BehaviorExpert, InteractionConfig, InteractionExpert};
use roadex_nn::{adaptive_diff_check, Grads};

fn scene(seed: u64) -> roadex_core::VideoRecord {
    let spec = ScenarioSpec {
        num_frames: 12,
        num_objects: 3,
        anomaly_kind: AnomalyKind::None,
        ..ScenarioSpec::normal("g", seed)
    };
    generate_video(&spec).unwrap()
}

#[test]
fn interaction_loss_gradient_matches_finite_differences() {
    for seed in 0..3 {
        let cfg = InteractionConfig {
            hidden: 12,
            latent_dim: 3,
            encoder_mlp: vec![10, 8],
            decoder_mlp: vec![10, 8],
            decoder_out_mlp: vec![9],
            seed,
            ..InteractionConfig::default()
        };
        let mut e = InteractionExpert::new(cfg).unwrap();
        let video = scene(seed);
        let pairs = select_pairs(&video, 7, 3, 20);
        let refs: Vec<_> = pairs.iter().collect();
        assert!(!refs.is_empty());
        let tau = e.config.tau_std;
        let mut g = Grads::zeros_like(&e.store);
        e.net.batch_loss(&e.store, &refs, tau, Some(&mut g)).unwrap();
        let net = e.net.clone();
        let r = adaptive_diff_check(&mut e.store, &g, |s| net.batch_loss(s, &refs, tau, None).unwrap(), None).unwrap();
        assert!(r.max_rel_error < 1e-4, "seed {seed}: {r:?}");
    }
}

#[test]
fn behavior_loss_gradient_matches_finite_differences() {
    for seed in 0..3 {
        let cfg = BehaviorConfig {
            hidden: 12,
            box_encoder_mlp: vec![10, 8],
            decoder_out_mlp: vec![9],
            delta: 4,
            seed,
            ..BehaviorConfig::default()
        };
        let mut e = BehaviorExpert::new(cfg).unwrap();
        let video = scene(seed);
        let tracks: Vec<_> = video.tracks.iter().collect();
        let net = e.net.clone();
        net.fit_input_stats(&mut e.store, &tracks);
        let boxes = video.tracks[0].boxes.clone();
        let mut state = e.zero_state();
        for t in 0..3 {
            state = e.encode_step(&boxes[t], t.checked_sub(1).map(|p| &boxes[p]), &state);
        }
        let mut g = Grads::zeros_like(&e.store);
        e.net.chunk_loss(&e.store, &boxes, &state, 3, 6, 4, 1.0, Some(&mut g)).unwrap();
        let r = adaptive_diff_check(
            &mut e.store,
            &g,
            |s| net.chunk_loss(s, &boxes, &state, 3, 6, 4, 1.0, None).unwrap().0,
            None,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "seed {seed}: {r:?}");
    }
}
