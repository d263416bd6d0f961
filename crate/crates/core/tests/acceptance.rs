//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run all criteria with `cargo test --test acceptance`, or a subset by
//! number, e.g. `cargo test --test acceptance -- 1 6 9`.

use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use hswarm_core::config::{Algo, RunConfig};
use hswarm_core::hilbert::{d_to_xy, xy_to_index, HilbertMap};
use hswarm_core::metrics::{detect_convergence, ConvergenceConfig};
use hswarm_core::nn::{log_softmax_rows, Head, MlpNet};
use hswarm_core::ppo::compute_gae;
use hswarm_core::runner::{cmd_train, train_seed};
use hswarm_core::shaping::{potential, shaped_reward, ShapingConfig, ShapingMode};
use hswarm_core::trajectory::{
    cells_to_waypoints, time_parameterize, to_primitives, validate_trajectory, Primitive,
    SpeedLimits, WaypointPath,
};
use hswarm_core::{Action, Cell};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within_budget(start: Instant, budget: Duration) -> std::result::Result<(), String> {
    let took = start.elapsed();
    ensure(took < budget, format!("took {took:.2?}, budget {budget:?}"))
}

fn hilbert_correctness() -> Outcome {
    let start = Instant::now();
    for order in 1..=5u32 {
        let side = 1u32 << order;
        let n = u64::from(side) * u64::from(side);
        let mut prev: Option<(u32, u32)> = None;
        for d in 0..n {
            let (x, y) = d_to_xy(d, order).map_err(|e| e.to_string())?;
            ensure(
                x < side && y < side,
                format!("order {order}: rank {d} off grid"),
            )?;
            let back = xy_to_index(x, y, order).map_err(|e| e.to_string())?;
            ensure(
                back == d,
                format!("order {order}: rank {d} -> ({x},{y}) -> {back}"),
            )?;
            if let Some((px, py)) = prev {
                let dist = px.abs_diff(x) + py.abs_diff(y);
                ensure(
                    dist == 1,
                    format!("order {order}: ranks {} and {d} at distance {dist}", d - 1),
                )?;
            }
            prev = Some((x, y));
        }
    }
    within_budget(start, Duration::from_secs(1))?;
    Ok(format!("orders 1-5 exhaustive in {:.2?}", start.elapsed()))
}

fn head_gradient_error(head: Head, outputs: usize, seed: u64) -> std::result::Result<f64, String> {
    const STEP: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net =
        MlpNet::new(&[76, 128, 128, outputs], head, &mut rng).map_err(|e| e.to_string())?;
    let rows = 8;
    let x = Array2::from_shape_fn((rows, 76), |_| rng.gen_range(-1.0..1.0));
    let actions: Vec<usize> = (0..rows).map(|_| rng.gen_range(0..outputs)).collect();
    let targets: Vec<f64> = (0..rows).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let weights: Vec<f64> = (0..rows).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let n = rows as f64;
    // Squared error on the chosen output for linear heads, weighted
    // log-likelihood for the softmax head.
    let loss = |out: &Array2<f64>| -> (f64, Array2<f64>) {
        let mut g = Array2::zeros(out.raw_dim());
        let mut l = 0.0;
        match head {
            Head::Softmax => {
                let lp = log_softmax_rows(out);
                for i in 0..rows {
                    l -= weights[i] * lp[[i, actions[i]]] / n;
                    for k in 0..outputs {
                        let onehot = if k == actions[i] { 1.0 } else { 0.0 };
                        g[[i, k]] = -weights[i] * (onehot - lp[[i, k]].exp()) / n;
                    }
                }
            }
            Head::Linear => {
                for i in 0..rows {
                    let a = if outputs == 1 { 0 } else { actions[i] };
                    let err = out[[i, a]] - targets[i];
                    l += err * err / n;
                    g[[i, a]] = 2.0 * err / n;
                }
            }
        }
        (l, g)
    };
    let (out, cache) = net.forward(x.view()).map_err(|e| e.to_string())?;
    let grads = net
        .backward(&cache, loss(&out).1.view())
        .map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < 100 {
        let i = rng.gen_range(0..net.num_params());
        let orig = net.param(i);
        net.set_param(i, orig + STEP);
        let up = loss(&net.predict(x.view()).unwrap()).0;
        net.set_param(i, orig - STEP);
        let down = loss(&net.predict(x.view()).unwrap()).0;
        net.set_param(i, orig);
        let numeric = (up - down) / (2.0 * STEP);
        let analytic = grads.get(i);
        if numeric.abs() < 1e-9 && analytic.abs() < 1e-9 {
            continue;
        }
        worst = worst.max((numeric - analytic).abs() / numeric.abs().max(analytic.abs()));
        checked += 1;
    }
    Ok(worst)
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    for (name, head, outputs, seed) in [
        ("q", Head::Linear, 5, 1),
        ("policy", Head::Softmax, 5, 2),
        ("value", Head::Linear, 1, 3),
    ] {
        let err = head_gradient_error(head, outputs, seed)?;
        ensure(err < 1e-4, format!("{name} head relative error {err:.2e}"))?;
        parts.push(format!("{name} {err:.1e}"));
    }
    within_budget(start, Duration::from_secs(10))?;
    Ok(format!("max relative error: {}", parts.join(", ")))
}

fn gae_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = 10;
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let done: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.15)).collect();
        let last = rng.gen_range(-2.0..2.0);
        let gamma = rng.gen_range(0.5..1.0);
        let lambda = rng.gen_range(0.0..=1.0);
        let (adv, _) =
            compute_gae(&r, &v, &done, last, gamma, lambda).map_err(|e| e.to_string())?;
        for t in 0..n {
            let mut sum = 0.0;
            let mut w = 1.0;
            for k in t..n {
                let next = if k + 1 < n { v[k + 1] } else { last };
                let boot = if done[k] { 0.0 } else { gamma * next };
                sum += w * (r[k] + boot - v[k]);
                if done[k] {
                    break;
                }
                w *= gamma * lambda;
            }
            worst = worst.max((adv[t] - sum).abs());
        }
    }
    ensure(worst < 1e-10, format!("max deviation {worst:.2e}"))?;
    within_budget(start, Duration::from_secs(5))?;
    Ok(format!("1000 sequences, max deviation {worst:.1e}"))
}

/// Greedy action sets after exact value iteration on a 4×4 grid with one
/// absorbing goal.
fn greedy_sets(map: &HilbertMap, goal: Cell, shaping: &ShapingConfig) -> Vec<Vec<usize>> {
    let idx = |c: Cell| (c.y * 4 + c.x) as usize;
    let step = |c: Cell, a: Action| {
        let n = c.step(a);
        if (0..4).contains(&n.x) && (0..4).contains(&n.y) {
            n
        } else {
            c
        }
    };
    let q = |v: &[f64], c: Cell, a: Action| {
        let n = step(c, a);
        let r = if n == goal { 1.0 } else { 0.0 };
        let boot = if n == goal {
            0.0
        } else {
            shaping.gamma * v[idx(n)]
        };
        shaped_reward(r, map.rank(c).unwrap(), map.rank(n).unwrap(), shaping) + boot
    };
    let cells: Vec<Cell> = (0..16)
        .map(|i| Cell::new(i % 4, i / 4))
        .filter(|&c| c != goal)
        .collect();
    let mut v = vec![0.0; 16];
    for _ in 0..10_000 {
        let mut delta: f64 = 0.0;
        for &c in &cells {
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
        .map(|&c| {
            let qs: Vec<f64> = Action::ALL.iter().map(|&a| q(&v, c, a)).collect();
            let best = qs.iter().cloned().fold(f64::MIN, f64::max);
            (0..qs.len()).filter(|&a| best - qs[a] < 1e-9).collect()
        })
        .collect()
}

fn shaping_invariance() -> Outcome {
    let start = Instant::now();
    let map = HilbertMap::full(2).map_err(|e| e.to_string())?;
    let mut cases = 0;
    for goal in [
        Cell::new(3, 3),
        Cell::new(0, 3),
        Cell::new(2, 1),
        Cell::new(0, 0),
    ] {
        let plain = greedy_sets(&map, goal, &ShapingConfig::none(0.9));
        for alpha in [0.01, 0.1, 0.5] {
            let shaping = ShapingConfig {
                mode: ShapingMode::Potential,
                alpha,
                gamma: 0.9,
                ..ShapingConfig::default()
            };
            ensure(
                greedy_sets(&map, goal, &shaping) == plain,
                format!("greedy policy changed for goal {goal}, alpha {alpha}"),
            )?;
            cases += 1;
        }
    }
    within_budget(start, Duration::from_secs(5))?;
    Ok(format!("{cases} goal/alpha cases identical"))
}

fn telescoping() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let cfg = ShapingConfig {
            mode: ShapingMode::Potential,
            alpha: rng.gen_range(0.001..1.0),
            gamma: rng.gen_range(0.5..1.0),
            ..ShapingConfig::default()
        };
        let len = rng.gen_range(1..200);
        let ranks: Vec<usize> = (0..=len).map(|_| rng.gen_range(0..4096)).collect();
        let sum: f64 = (0..len)
            .map(|t| cfg.gamma.powi(t as i32) * shaped_reward(0.0, ranks[t], ranks[t + 1], &cfg))
            .sum();
        let expected = cfg.gamma.powi(len as i32) * potential(ranks[len], cfg.alpha)
            - potential(ranks[0], cfg.alpha);
        worst = worst.max((sum - expected).abs() / expected.abs().max(1e-12));
    }
    ensure(worst < 1e-9, format!("max relative deviation {worst:.2e}"))?;
    Ok(format!(
        "100 trajectories, max relative deviation {worst:.1e}"
    ))
}

fn straight(length: f64) -> WaypointPath {
    WaypointPath {
        points: vec![(0.0, 0.0), (length, 0.0)],
    }
}

fn trajectory_timing() -> Outcome {
    let limits = SpeedLimits {
        v_max: 0.8,
        a_max: 0.4,
        ..SpeedLimits::default()
    };
    let long =
        time_parameterize(&straight(10.0), &limits, 0.0, "VISION").map_err(|e| e.to_string())?;
    let short =
        time_parameterize(&straight(0.5), &limits, 0.0, "VISION").map_err(|e| e.to_string())?;
    let mut generated = vec![(long.clone(), limits), (short.clone(), limits)];
    for side in [4, 7, 16] {
        let map = HilbertMap::for_workspace(side, side, |_| true).map_err(|e| e.to_string())?;
        let path = cells_to_waypoints(map.cells(), 2.0).map_err(|e| e.to_string())?;
        for lim in [limits, SpeedLimits::default()] {
            generated.push((
                time_parameterize(&path, &lim, 0.0, "VISION").map_err(|e| e.to_string())?,
                lim,
            ));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let cells: Vec<Cell> = (0..30)
            .map(|_| Cell::new(rng.gen_range(0..10), rng.gen_range(0..10)))
            .collect();
        let path =
            cells_to_waypoints(&cells, rng.gen_range(0.3..3.0)).map_err(|e| e.to_string())?;
        generated.push((
            time_parameterize(&path, &limits, 0.0, "VISION").map_err(|e| e.to_string())?,
            limits,
        ));
    }
    let invalid = generated
        .iter()
        .filter(|(t, lim)| !validate_trajectory(t, lim).passed)
        .count();
    let (t_long, t_short) = (long.duration(), short.duration());
    let detail = format!(
        "10 m: {t_long:.3} s (want 14.5), 0.5 m: {t_short:.3} s (want 1.581), {invalid}/{} invalid",
        generated.len()
    );
    ensure((t_long - 14.5).abs() <= 0.05, detail.clone())?;
    ensure((t_short - 1.581).abs() <= 0.02, detail.clone())?;
    ensure(invalid == 0, detail.clone())?;
    Ok(detail)
}

fn primitive_conversion() -> Outcome {
    let fwd = to_primitives(&straight(2.0), 0.0, 0.25, 30).map_err(|e| e.to_string())?;
    ensure(
        fwd.commands
            == vec![Primitive::Forward {
                step: 0.25,
                count: 8,
            }],
        format!("2.0 m gave {:?}", fwd.commands),
    )?;
    let up = WaypointPath {
        points: vec![(0.0, 0.0), (0.0, 2.0)],
    };
    let turn = to_primitives(&up, 0.0, 0.25, 30).map_err(|e| e.to_string())?;
    ensure(
        turn.commands.first()
            == Some(&Primitive::Turn {
                degrees: 30,
                count: 3,
            }),
        format!("90 degree error gave {:?}", turn.commands),
    )?;
    let map = HilbertMap::for_workspace(16, 16, |_| true).map_err(|e| e.to_string())?;
    let path = cells_to_waypoints(map.cells(), 2.0).map_err(|e| e.to_string())?;
    let program = to_primitives(&path, 0.0, 0.25, 30).map_err(|e| e.to_string())?;
    let poses = program.replay();
    let worst = path
        .points
        .iter()
        .map(|&(x, y)| {
            poses
                .iter()
                .map(|p| (p.x - x).hypot(p.y - y))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    ensure(worst <= 0.125, format!("waypoint missed by {worst:.3} m"))?;
    Ok(format!(
        "8 steps, 3 turns, sweep replay worst miss {worst:.3} m"
    ))
}

struct Means {
    coverage: f64,
    redundancy: f64,
}

fn desk_means(algo: Algo, root: &std::path::Path) -> std::result::Result<Means, String> {
    let cfg = RunConfig::desk(algo);
    let summary = cmd_train(&cfg, root).map_err(|e| e.to_string())?;
    let n = summary.seeds.len() as f64;
    Ok(Means {
        coverage: summary.seeds.iter().map(|s| s.final_coverage).sum::<f64>() / n,
        redundancy: summary
            .seeds
            .iter()
            .map(|s| s.final_redundancy)
            .sum::<f64>()
            / n,
    })
}

fn desk_replication(root: &std::path::Path) -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for (base, hilbert) in [(Algo::Dqn, Algo::Hdqn), (Algo::Ppo, Algo::Hppo)] {
        let b = desk_means(base, root)?;
        let h = desk_means(hilbert, root)?;
        lines.push(format!(
            "{hilbert} cov {:.3} vs {base} {:.3}, red {:.2} vs {:.2}",
            h.coverage, b.coverage, h.redundancy, b.redundancy
        ));
        if h.coverage <= b.coverage {
            failures.push(format!("{hilbert} coverage not above {base}"));
        }
        if h.redundancy >= b.redundancy {
            failures.push(format!("{hilbert} redundancy not below {base}"));
        }
    }
    let detail = format!("{} ({:.0?})", lines.join("; "), start.elapsed());
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{}: {detail}", failures.join(", ")))
    }
}

fn convergence_detector() -> Outcome {
    let cfg = ConvergenceConfig::default();
    let constant = vec![3.0; 400];
    let got = detect_convergence(&constant, &cfg);
    ensure(
        got == Some(108),
        format!("constant series gave {got:?}, want Some(108)"),
    )?;

    // Low start, plateau from episode 300 on.
    let mut plateau: Vec<f64> = (0..300).map(|k| (k % 7) as f64 / 10.0).collect();
    plateau.extend(vec![10.0; 400]);
    let got = detect_convergence(&plateau, &cfg);
    ensure(
        matches!(got, Some(t) if (300..700).contains(&t) && t == 398),
        format!("plateau series gave {got:?}"),
    )?;

    let single = ConvergenceConfig {
        window_episodes: 1,
        ..cfg
    };
    let alternating: Vec<f64> = (0..1000).map(|k| (k % 2) as f64).collect();
    let got = detect_convergence(&alternating, &single);
    ensure(got.is_none(), format!("alternating series gave {got:?}"))?;
    Ok(format!(
        "constant 108, plateau {}, alternating none",
        detect_convergence(&plateau, &cfg).unwrap()
    ))
}

fn determinism(root: &std::path::Path) -> Outcome {
    let mut checked = Vec::new();
    for algo in [Algo::Dqn, Algo::Hdqn, Algo::Ppo, Algo::Hppo] {
        let cfg = RunConfig::desk(algo);
        let first = root.join(&cfg.run_id).join("seed_0");
        if !first.join("eval.csv").exists() {
            train_seed(&cfg, 0, &first).map_err(|e| e.to_string())?;
        }
        let again = root.join("repeat").join(&cfg.run_id);
        train_seed(&cfg, 0, &again).map_err(|e| e.to_string())?;
        let a = fs::read(first.join("eval.csv")).map_err(|e| e.to_string())?;
        let b = fs::read(again.join("eval.csv")).map_err(|e| e.to_string())?;
        ensure(
            a == b,
            format!("{algo} seed 0 eval.csv differs between runs"),
        )?;
        checked.push(algo.to_string());
    }
    Ok(format!(
        "byte-identical eval.csv for {}",
        checked.join(", ")
    ))
}

fn main() -> ExitCode {
    let wanted: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let root = tempfile::tempdir().expect("temporary directory");
    let criteria: Vec<(usize, &str, Box<dyn Fn() -> Outcome>)> = vec![
        (1, "hilbert correctness", Box::new(hilbert_correctness)),
        (2, "gradient fidelity", Box::new(gradient_fidelity)),
        (3, "gae oracle equivalence", Box::new(gae_oracle)),
        (4, "shaping policy invariance", Box::new(shaping_invariance)),
        (5, "telescoping shaping sum", Box::new(telescoping)),
        (6, "trajectory timing", Box::new(trajectory_timing)),
        (7, "primitive conversion", Box::new(primitive_conversion)),
        (
            8,
            "desk-scale directional replication",
            Box::new(|| desk_replication(root.path())),
        ),
        (9, "convergence detector", Box::new(convergence_detector)),
        (
            10,
            "training determinism",
            Box::new(|| determinism(root.path())),
        ),
    ];
    let mut failed = 0;
    for (id, name, check) in &criteria {
        if !wanted.is_empty() && !wanted.contains(id) {
            continue;
        }
        match check() {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
