use hswarm_core::nn::{log_softmax_rows, Head, MlpNet};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

struct Case {
    head: Head,
    outputs: usize,
    /// Scalar loss and its gradient with respect to the network output.
    loss: fn(&Array2<f64>, &Batch) -> (f64, Array2<f64>),
}

struct Batch {
    x: Array2<f64>,
    actions: Vec<usize>,
    targets: Vec<f64>,
    weights: Vec<f64>,
}

fn q_loss(out: &Array2<f64>, b: &Batch) -> (f64, Array2<f64>) {
    let n = out.nrows() as f64;
    let mut g = Array2::zeros(out.raw_dim());
    let mut loss = 0.0;
    for (i, &a) in b.actions.iter().enumerate() {
        let err = out[[i, a]] - b.targets[i];
        loss += err * err / n;
        g[[i, a]] = 2.0 * err / n;
    }
    (loss, g)
}

fn policy_loss(out: &Array2<f64>, b: &Batch) -> (f64, Array2<f64>) {
    let n = out.nrows() as f64;
    let lp = log_softmax_rows(out);
    let mut g = Array2::zeros(out.raw_dim());
    let mut loss = 0.0;
    for (i, &a) in b.actions.iter().enumerate() {
        loss -= b.weights[i] * lp[[i, a]] / n;
        for k in 0..out.ncols() {
            let p = lp[[i, k]].exp();
            let onehot = if k == a { 1.0 } else { 0.0 };
            g[[i, k]] = -b.weights[i] * (onehot - p) / n;
        }
    }
    (loss, g)
}

fn value_loss(out: &Array2<f64>, b: &Batch) -> (f64, Array2<f64>) {
    let n = out.nrows() as f64;
    let mut g = Array2::zeros(out.raw_dim());
    let mut loss = 0.0;
    for i in 0..out.nrows() {
        let err = out[[i, 0]] - b.targets[i];
        loss += err * err / n;
        g[[i, 0]] = 2.0 * err / n;
    }
    (loss, g)
}

fn check(case: Case, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = MlpNet::new(&[76, 128, 128, case.outputs], case.head, &mut rng).unwrap();
    let rows = 8;
    let batch = Batch {
        x: Array2::from_shape_fn((rows, 76), |_| rng.gen_range(-1.0..1.0)),
        actions: (0..rows).map(|_| rng.gen_range(0..case.outputs)).collect(),
        targets: (0..rows).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        weights: (0..rows).map(|_| rng.gen_range(-1.5..1.5)).collect(),
    };
    let (out, cache) = net.forward(batch.x.view()).unwrap();
    let (_, g_out) = (case.loss)(&out, &batch);
    let grads = net.backward(&cache, g_out.view()).unwrap();
    let eval = |net: &MlpNet| (case.loss)(&net.predict(batch.x.view()).unwrap(), &batch).0;

    let mut checked = 0;
    while checked < 100 {
        let i = rng.gen_range(0..net.num_params());
        let orig = net.param(i);
        net.set_param(i, orig + STEP);
        let up = eval(&net);
        net.set_param(i, orig - STEP);
        let down = eval(&net);
        net.set_param(i, orig);
        let numeric = (up - down) / (2.0 * STEP);
        let analytic = grads.get(i);
        // Parameters behind inactive ReLUs carry no gradient either way.
        if numeric.abs() < 1e-9 && analytic.abs() < 1e-9 {
            continue;
        }
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs());
        assert!(
            rel < TOL,
            "param {i}: analytic {analytic} numeric {numeric} rel {rel}"
        );
        checked += 1;
    }
}

#[test]
fn q_head_matches_finite_differences() {
    check(
        Case {
            head: Head::Linear,
            outputs: 5,
            loss: q_loss,
        },
        11,
    );
}

#[test]
fn policy_head_matches_finite_differences() {
    check(
        Case {
            head: Head::Softmax,
            outputs: 5,
            loss: policy_loss,
        },
        12,
    );
}

#[test]
fn value_head_matches_finite_differences() {
    check(
        Case {
            head: Head::Linear,
            outputs: 1,
            loss: value_loss,
        },
        13,
    );
}
