//! Dense feed-forward network with exact backpropagation and Adam.
//!
//! Layers compute `z = x·W + b`; hidden layers apply ReLU, the output layer is
//! linear. Policy heads read the output as logits. Everything is `f64`.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_NET_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    /// Raw outputs (Q-values, state value).
    Linear,
    /// Outputs are logits of a categorical policy.
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `fan_in × fan_out`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug)]
pub struct MlpNet {
    layers: Vec<Dense>,
    head: Head,
    id: u64,
    version: u64,
}

impl Clone for MlpNet {
    fn clone(&self) -> Self {
        Self {
            layers: self.layers.clone(),
            head: self.head,
            id: fresh_id(),
            version: 0,
        }
    }
}

/// Activations kept from a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    net_id: u64,
    version: u64,
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Array2<f64>>,
}

/// Parameter gradients, laid out like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<Dense>,
}

impl Grads {
    pub fn zeros_like(net: &MlpNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Dense {
                    w: Array2::zeros(l.w.raw_dim()),
                    b: Array1::zeros(l.b.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w += &b.w;
            a.b += &b.b;
        }
    }

    /// Flat view in the same order as [`MlpNet::param`].
    pub fn get(&self, index: usize) -> f64 {
        let mut i = index;
        for l in &self.layers {
            if i < l.w.len() {
                let cols = l.w.ncols();
                return l.w[[i / cols, i % cols]];
            }
            i -= l.w.len();
            if i < l.b.len() {
                return l.b[i];
            }
            i -= l.b.len();
        }
        panic!("gradient index {index} out of range");
    }
}

impl MlpNet {
    /// Uniform fan-in initialization `U(-1/√fan_in, 1/√fan_in)` for weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], head: Head, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, head)?;
        for l in &mut net.layers {
            let bound = 1.0 / (l.w.nrows() as f64).sqrt();
            l.w.iter_mut()
                .for_each(|w| *w = rng.gen_range(-bound..bound));
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], head: Head) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Domain(format!("invalid layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|p| Dense {
                w: Array2::zeros((p[0], p[1])),
                b: Array1::zeros(p[1]),
            })
            .collect();
        Ok(Self {
            layers,
            head,
            id: fresh_id(),
            version: 0,
        })
    }

    pub fn from_layers(layers: Vec<Dense>, head: Head) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Domain("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.w.ncols() != l.b.len() {
                return Err(Error::Domain(format!("layer {i}: bias length mismatch")));
            }
            if i > 0 && layers[i - 1].w.ncols() != l.w.nrows() {
                return Err(Error::Domain(format!("layer {i}: input width mismatch")));
            }
        }
        let layers = layers
            .into_iter()
            .map(|l| Dense {
                w: l.w.as_standard_layout().into_owned(),
                b: l.b,
            })
            .collect();
        Ok(Self {
            layers,
            head,
            id: fresh_id(),
            version: 0,
        })
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].w.nrows()];
        s.extend(self.layers.iter().map(|l| l.w.ncols()));
        s
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().expect("non-empty").w.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn touch(&mut self) {
        self.version += 1;
    }

    /// Flat parameter access: layer by layer, weights (row-major) then biases.
    pub fn param(&self, index: usize) -> f64 {
        let mut i = index;
        for l in &self.layers {
            if i < l.w.len() {
                return l.w.as_slice().expect("standard layout")[i];
            }
            i -= l.w.len();
            if i < l.b.len() {
                return l.b[i];
            }
            i -= l.b.len();
        }
        panic!("parameter index {index} out of range");
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        let mut i = index;
        for l in &mut self.layers {
            if i < l.w.len() {
                l.w.as_slice_mut().expect("standard layout")[i] = value;
                self.version += 1;
                return;
            }
            i -= l.w.len();
            if i < l.b.len() {
                l.b[i] = value;
                self.version += 1;
                return;
            }
            i -= l.b.len();
        }
        panic!("parameter index {index} out of range");
    }

    /// Hard copy of another network's parameters.
    pub fn copy_from(&mut self, other: &MlpNet) -> Result<()> {
        if self.sizes() != other.sizes() {
            return Err(Error::Domain("cannot copy between different shapes".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w.assign(&b.w);
            a.b.assign(&b.b);
        }
        self.touch();
        Ok(())
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_len() {
            return Err(Error::Domain(format!(
                "input width {} does not match network input {}",
                x.ncols(),
                self.input_len()
            )));
        }
        Ok(())
    }

    /// Batched forward pass without keeping activations.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut a = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = a.dot(&l.w);
            z += &l.b;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = z;
        }
        Ok(a)
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view =
            ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Domain(e.to_string()))?;
        Ok(self.predict(view)?.into_raw_vec_and_offset().0)
    }

    /// Batched forward pass; the returned cache feeds [`MlpNet::backward`].
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Cache)> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = a.dot(&l.w);
            z += &l.b;
            let next = if i < last {
                z.mapv(|v| v.max(0.0))
            } else {
                z.clone()
            };
            inputs.push(a);
            pre.push(z);
            a = next;
        }
        let cache = Cache {
            net_id: self.id,
            version: self.version,
            inputs,
            pre,
        };
        Ok((a, cache))
    }

    /// Gradients of a scalar loss given `dL/d output` for each batch row.
    pub fn backward(&self, cache: &Cache, grad_out: ArrayView2<f64>) -> Result<Grads> {
        if cache.net_id != self.id || cache.version != self.version {
            return Err(Error::Contract(
                "forward cache does not belong to the current parameters".into(),
            ));
        }
        let batch = cache.inputs[0].nrows();
        if grad_out.dim() != (batch, self.output_len()) {
            return Err(Error::Domain(format!(
                "output gradient shape {:?} does not match ({batch}, {})",
                grad_out.dim(),
                self.output_len()
            )));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut dz = grad_out.to_owned();
        for i in (0..self.layers.len()).rev() {
            let dw = cache.inputs[i]
                .t()
                .dot(&dz)
                .as_standard_layout()
                .into_owned();
            let db = dz.sum_axis(Axis(0));
            layers.push(Dense { w: dw, b: db });
            if i > 0 {
                let mut da = dz.dot(&self.layers[i].w.t());
                Zip::from(&mut da).and(&cache.pre[i - 1]).for_each(|d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
                dz = da;
            }
        }
        layers.reverse();
        Ok(Grads { layers })
    }

    pub fn snapshot(&self) -> NetSnapshot {
        NetSnapshot {
            head: self.head,
            sizes: self.sizes(),
            weights: self
                .layers
                .iter()
                .map(|l| l.w.as_slice().expect("standard layout").to_vec())
                .collect(),
            biases: self.layers.iter().map(|l| l.b.to_vec()).collect(),
        }
    }

    pub fn from_snapshot(s: &NetSnapshot) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        let n = s.sizes.len();
        if n < 2 || s.weights.len() != n - 1 || s.biases.len() != n - 1 {
            return Err(bad("layer count mismatch".into()));
        }
        let mut layers = Vec::with_capacity(n - 1);
        for i in 0..n - 1 {
            let (fi, fo) = (s.sizes[i], s.sizes[i + 1]);
            let w = Array2::from_shape_vec((fi, fo), s.weights[i].clone())
                .map_err(|e| bad(format!("layer {i} weights: {e}")))?;
            if s.biases[i].len() != fo {
                return Err(bad(format!("layer {i} bias length mismatch")));
            }
            let b = Array1::from_vec(s.biases[i].clone());
            if !w.iter().chain(b.iter()).all(|v| v.is_finite()) {
                return Err(bad(format!("layer {i} contains non-finite values")));
            }
            layers.push(Dense { w, b });
        }
        Self::from_layers(layers, s.head)
    }
}

/// Serializable network parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSnapshot {
    pub head: Head,
    pub sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Grads,
    v: Grads,
}

impl AdamState {
    pub fn new(net: &MlpNet, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Grads::zeros_like(net),
            v: Grads::zeros_like(net),
        }
    }

    pub fn first_moment(&self) -> &Grads {
        &self.m
    }

    pub fn second_moment(&self) -> &Grads {
        &self.v
    }

    pub fn snapshot(&self) -> AdamSnapshot {
        let flat = |g: &Grads| -> Vec<Vec<f64>> {
            g.layers
                .iter()
                .flat_map(|l| [l.w.iter().copied().collect(), l.b.to_vec()])
                .collect()
        };
        AdamSnapshot {
            config: self.config.clone(),
            step: self.step,
            m: flat(&self.m),
            v: flat(&self.v),
        }
    }

    pub fn from_snapshot(s: &AdamSnapshot, net: &MlpNet) -> Result<Self> {
        let restore = |parts: &[Vec<f64>]| -> Result<Grads> {
            let mut g = Grads::zeros_like(net);
            if parts.len() != 2 * g.layers.len() {
                return Err(Error::Checkpoint("adam moment layer count mismatch".into()));
            }
            for (i, l) in g.layers.iter_mut().enumerate() {
                let (w, b) = (&parts[2 * i], &parts[2 * i + 1]);
                if w.len() != l.w.len() || b.len() != l.b.len() {
                    return Err(Error::Checkpoint(format!(
                        "adam moment shape mismatch in layer {i}"
                    )));
                }
                l.w.as_slice_mut()
                    .expect("standard layout")
                    .copy_from_slice(w);
                l.b.as_slice_mut()
                    .expect("standard layout")
                    .copy_from_slice(b);
            }
            Ok(g)
        };
        Ok(Self {
            config: s.config.clone(),
            step: s.step,
            m: restore(&s.m)?,
            v: restore(&s.v)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamSnapshot {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// One bias-corrected Adam update. Non-finite gradients abort without touching state.
pub fn adam_step(net: &mut MlpNet, grads: &Grads, state: &mut AdamState) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::Training("non-finite gradient".into()));
    }
    if grads.layers.len() != net.layers.len() {
        return Err(Error::Domain(
            "gradient layout does not match network".into(),
        ));
    }
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    };
    for (((layer, g), m), v) in net
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.m.layers)
        .zip(&mut state.v.layers)
    {
        Zip::from(&mut layer.w)
            .and(&g.w)
            .and(&mut m.w)
            .and(&mut v.w)
            .for_each(|p, &g, m, v| update(p, g, m, v));
        Zip::from(&mut layer.b)
            .and(&g.b)
            .and(&mut m.b)
            .and(&mut v.b)
            .for_each(|p, &g, m, v| update(p, g, m, v));
    }
    net.touch();
    Ok(())
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Row-wise log-softmax.
pub fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
