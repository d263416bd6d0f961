use hswarm_core::dqn::{select_action, DqnConfig, DqnLearner, DqnTrainer, ReplayBuffer};
use hswarm_core::grid_env::{EnvConfig, GridWorld};
use hswarm_core::metrics::evaluate;
use hswarm_core::shaping::ShapingConfig;
use hswarm_core::{Action, Cell};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn epsilon_schedule_endpoints() {
    let cfg = DqnConfig {
        total_steps: 1000,
        ..DqnConfig::default()
    };
    assert!((cfg.epsilon(0) - 0.3).abs() < 1e-12);
    assert!((cfg.epsilon(500) - 0.175).abs() < 1e-12);
    assert!((cfg.epsilon(1000) - 0.05).abs() < 1e-12);
    assert!((cfg.epsilon(5000) - 0.05).abs() < 1e-12);
}

#[test]
fn replay_sampling_is_uniform() {
    let mut buf = ReplayBuffer::new(1000, 2);
    for i in 0..1000 {
        buf.push(&[i as f64, 0.0], 0, 0.0, &[0.0, 0.0], false);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut counts = vec![0usize; 1000];
    for _ in 0..100_000 / 50 {
        for i in buf.sample_indices(50, &mut rng).unwrap() {
            counts[i] += 1;
        }
    }
    let (n, p): (f64, f64) = (100_000.0, 1.0 / 1000.0);
    let sigma = (n * p * (1.0 - p)).sqrt();
    let outside = counts
        .iter()
        .filter(|&&c| (c as f64 - n * p).abs() > 3.0 * sigma)
        .count();
    // About 0.27% of items fall outside 3σ by chance.
    assert!(outside <= 10, "{outside} items outside 3 sigma");
    assert_eq!(counts.iter().sum::<usize>(), 100_000);
}

#[test]
fn curve_action_frequency_matches_epsilon() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let q = [0.1, 0.9, 0.3, 0.2, 0.0];
    let draws = 10_000;
    let curve = (0..draws)
        .filter(|_| select_action(&q, 0.5, &mut rng, |_| Action::East) == Action::East)
        .count();
    let freq = curve as f64 / draws as f64;
    assert!((freq - 0.5).abs() <= 0.02, "{freq}");
    let always =
        (0..100).all(|_| select_action(&q, 1.0, &mut rng, |_| Action::West) == Action::West);
    assert!(always);
}

#[test]
fn single_step_reduces_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = DqnConfig {
        batch: 1,
        hidden: vec![4],
        ..DqnConfig::default()
    };
    let mut learner = DqnLearner::new(&cfg, 1, &mut rng).unwrap();
    learner.q = hswarm_core::nn::MlpNet::zeros(&[1, 4, 5], hswarm_core::nn::Head::Linear).unwrap();
    learner.sync_target().unwrap();
    learner.buffer.push(&[1.0], 2, 1.0, &[0.0], true);
    let before = learner.train_on(&[0]).unwrap();
    assert!((before - 1.0).abs() < 1e-12);
    let after = learner.train_on(&[0]).unwrap();
    assert!(after < before);
}

#[test]
fn target_sync_is_a_copy() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = DqnConfig {
        hidden: vec![16, 16],
        ..DqnConfig::default()
    };
    let mut learner = DqnLearner::new(&cfg, 6, &mut rng).unwrap();
    for _ in 0..70 {
        let o: Vec<f64> = (0..6).map(|_| rng.gen()).collect();
        learner
            .buffer
            .push(&o, rng.gen_range(0..5), rng.gen(), &o, false);
    }
    learner.train_step(&mut rng).unwrap().unwrap();
    learner.sync_target().unwrap();
    for _ in 0..20 {
        let probe: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let a = learner.q.predict_one(&probe).unwrap();
        let b = learner.target.predict_one(&probe).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

/// One agent, one fixed target on an open 8×8 map: the greedy policy must
/// collect the target within the horizon after at most 50k training steps.
#[test]
fn reaches_single_target() {
    let mut successes = 0;
    for seed in 0..5u64 {
        let mut env_cfg = EnvConfig::open(8, 8, 1);
        env_cfg.targets = [Cell::new(5, 6)].into_iter().collect();
        let env = GridWorld::new(env_cfg, ShapingConfig::default()).unwrap();
        let cfg = DqnConfig {
            total_steps: 50_000,
            ..DqnConfig::default()
        };
        let mut trainer = DqnTrainer::new(cfg, env, seed).unwrap();
        let mut reached = false;
        while trainer.env_steps() < 50_000 && !reached {
            trainer.advance(5_000).unwrap();
            let rec = evaluate(
                trainer.env(),
                &trainer.greedy(),
                1,
                seed,
                trainer.env_steps(),
            )
            .unwrap();
            reached = rec.reward >= 1.0;
        }
        successes += reached as usize;
    }
    assert!(successes >= 4, "{successes}/5 seeds reached the target");
}
