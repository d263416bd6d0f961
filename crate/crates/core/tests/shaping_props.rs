use hswarm_core::hilbert::HilbertMap;
use hswarm_core::shaping::{potential, shaped_reward, ShapingConfig, ShapingMode};
use hswarm_core::{Action, Cell};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn discounted_shaping_telescopes() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let cfg = ShapingConfig {
            mode: ShapingMode::Potential,
            alpha: rng.gen_range(0.001..1.0),
            gamma: rng.gen_range(0.5..1.0),
            ..ShapingConfig::default()
        };
        let len = rng.gen_range(1..200);
        let ranks: Vec<usize> = (0..=len).map(|_| rng.gen_range(0..1024)).collect();
        let mut sum = 0.0;
        for t in 0..len {
            sum += cfg.gamma.powi(t as i32) * shaped_reward(0.0, ranks[t], ranks[t + 1], &cfg);
        }
        let expected = cfg.gamma.powi(len as i32) * potential(ranks[len], cfg.alpha)
            - potential(ranks[0], cfg.alpha);
        let scale = expected.abs().max(1e-12);
        assert!((sum - expected).abs() / scale < 1e-9, "{sum} vs {expected}");
    }
}

/// Deterministic single-agent 4×4 grid: one absorbing goal worth +1.
struct Mdp {
    map: HilbertMap,
    goal: Cell,
}

impl Mdp {
    fn step(&self, c: Cell, a: Action) -> Cell {
        let n = c.step(a);
        if n.x < 0 || n.y < 0 || n.x >= 4 || n.y >= 4 {
            c
        } else {
            n
        }
    }

    /// Maximizing actions per non-goal state after value iteration, with
    /// ties resolved at 1e-9.
    fn greedy_policy(&self, shaping: &ShapingConfig) -> Vec<Vec<usize>> {
        let cells: Vec<Cell> = (0..16).map(|i| Cell::new(i % 4, i / 4)).collect();
        let idx = |c: Cell| (c.y * 4 + c.x) as usize;
        let q = |v: &[f64], c: Cell, a: Action| {
            let n = self.step(c, a);
            let r = if n == self.goal { 1.0 } else { 0.0 };
            let (h, h2) = (self.map.rank(c).unwrap(), self.map.rank(n).unwrap());
            let boot = if n == self.goal {
                0.0
            } else {
                shaping.gamma * v[idx(n)]
            };
            shaped_reward(r, h, h2, shaping) + boot
        };
        let mut v = vec![0.0; 16];
        for _ in 0..10_000 {
            let mut delta: f64 = 0.0;
            for &c in &cells {
                if c == self.goal {
                    continue;
                }
                let best = Action::ALL
                    .iter()
                    .map(|&a| q(&v, c, a))
                    .fold(f64::MIN, f64::max);
                delta = delta.max((best - v[idx(c)]).abs());
                v[idx(c)] = best;
            }
            if delta < 1e-14 {
                break;
            }
        }
        cells
            .iter()
            .filter(|&&c| c != self.goal)
            .map(|&c| {
                let qs: Vec<f64> = Action::ALL.iter().map(|&a| q(&v, c, a)).collect();
                let best = qs[hswarm_core::nn::argmax(&qs)];
                (0..qs.len()).filter(|&a| best - qs[a] < 1e-9).collect()
            })
            .collect()
    }
}

#[test]
fn potential_shaping_keeps_greedy_policy() {
    let map = HilbertMap::full(2).unwrap();
    for goal in [Cell::new(3, 3), Cell::new(0, 3), Cell::new(2, 1)] {
        let mdp = Mdp {
            map: map.clone(),
            goal,
        };
        let plain = mdp.greedy_policy(&ShapingConfig::none(0.9));
        for alpha in [0.01, 0.1, 0.5] {
            let shaped = mdp.greedy_policy(&ShapingConfig {
                mode: ShapingMode::Potential,
                alpha,
                gamma: 0.9,
                ..ShapingConfig::default()
            });
            assert_eq!(plain, shaped, "goal {goal}, alpha {alpha}");
        }
    }
}

proptest! {
    #[test]
    fn none_mode_is_identity(r in -10.0f64..10.0, h in 0usize..5000, h2 in 0usize..5000) {
        prop_assert_eq!(shaped_reward(r, h, h2, &ShapingConfig::none(0.99)), r);
    }

    #[test]
    fn heuristic_pays_only_for_successor(r in -1.0f64..1.0, h in 0usize..5000, h2 in 0usize..5000) {
        let cfg = ShapingConfig { mode: ShapingMode::Heuristic, ..ShapingConfig::default() };
        let expected = if h2 == h + 1 { r + cfg.r_h } else { r };
        prop_assert_eq!(shaped_reward(r, h, h2, &cfg), expected);
    }
}
