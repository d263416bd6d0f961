use hswarm_core::nn::{log_softmax_rows, softmax_rows, MlpNet};
use hswarm_core::ppo::{normalize_advantages, PpoConfig, PpoLearner, RolloutBuffer};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WIDTH: usize = 6;

/// Rollout whose behavior log-probs come from `policy` itself.
fn on_policy_buffer(policy: &MlpNet, n: usize, rng: &mut ChaCha8Rng) -> RolloutBuffer {
    let mut buf = RolloutBuffer::new(1, WIDTH);
    for t in 0..n {
        let obs: Vec<f64> = (0..WIDTH).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let logits = policy.predict_one(&obs).unwrap();
        let lp = log_softmax_rows(&Array2::from_shape_vec((1, 5), logits).unwrap());
        let a = rng.gen_range(0..5);
        buf.push(
            &obs,
            a,
            lp[[0, a]],
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-0.5..0.5),
            t % 37 == 36,
        );
    }
    buf.finish(&[0.3], 0.99, 0.95).unwrap();
    buf
}

fn small_cfg() -> PpoConfig {
    PpoConfig {
        hidden: vec![16],
        epochs: 1,
        minibatch: 64,
        ..PpoConfig::default()
    }
}

#[test]
fn ratios_start_at_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = small_cfg();
    let mut learner = PpoLearner::new(&cfg, WIDTH, &mut rng).unwrap();
    let buf = on_policy_buffer(&learner.policy, 256, &mut rng);
    let stats = learner.update(&buf, &cfg, &mut rng).unwrap();
    assert!((stats.initial_mean_ratio - 1.0).abs() < 1e-6);
    assert!((0.0..=1.0).contains(&stats.clip_fraction));
    assert!(stats.approx_kl.is_finite());
    assert_eq!(stats.skipped, 0);
}

/// At ρ = 1 the clipped surrogate has the plain policy-gradient direction:
/// a full-batch step must move log π(a|s) in the sign of the advantage.
#[test]
fn first_step_follows_policy_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = PpoConfig {
        minibatch: 1024,
        ..small_cfg()
    };
    let mut learner = PpoLearner::new(&cfg, WIDTH, &mut rng).unwrap();
    let buf = on_policy_buffer(&learner.policy, 128, &mut rng);
    let mut adv = buf.advantages.clone();
    normalize_advantages(&mut adv);
    let x = Array2::from_shape_vec((buf.len(), WIDTH), buf.obs.clone()).unwrap();
    let before = log_softmax_rows(&learner.policy.predict(x.view()).unwrap());
    let surrogate = |lp: &Array2<f64>| -> f64 {
        (0..buf.len())
            .map(|i| (lp[[i, buf.actions[i]]] - buf.behavior_logp[i]).exp() * adv[i])
            .sum::<f64>()
    };
    learner.update(&buf, &cfg, &mut rng).unwrap();
    let after = log_softmax_rows(&learner.policy.predict(x.view()).unwrap());
    assert!(surrogate(&after) > surrogate(&before));
    let probs = softmax_rows(&learner.policy.predict(x.view()).unwrap());
    for row in probs.rows() {
        assert!((row.sum() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn non_finite_ratios_are_skipped() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = small_cfg();
    let mut learner = PpoLearner::new(&cfg, WIDTH, &mut rng).unwrap();
    let mut buf = on_policy_buffer(&learner.policy, 64, &mut rng);
    buf.behavior_logp[5] = f64::NEG_INFINITY;
    let stats = learner.update(&buf, &cfg, &mut rng).unwrap();
    assert_eq!(stats.skipped, 1);
}

proptest! {
    #[test]
    fn advantage_normalization(xs in prop::collection::vec(-1e3f64..1e3, 2..300)) {
        let mut a = xs.clone();
        normalize_advantages(&mut a);
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-9);
        let spread = xs.iter().cloned().fold(f64::MIN, f64::max) - xs.iter().cloned().fold(f64::MAX, f64::min);
        if spread > 1e-6 {
            let std = (a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!((std - 1.0).abs() < 1e-9);
        }
    }
}
