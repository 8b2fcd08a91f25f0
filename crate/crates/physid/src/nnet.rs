//! From-scratch feed-forward network: forward pass, reverse-mode gradients,
//! ADAM updates and a mini-batch training loop.
//!
//! Data layout convention: matrices hold one sample per column
//! (features x samples), double precision throughout.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn eval(&self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
        }
    }

    /// Derivative expressed in terms of the activation output.
    fn deriv_from_output(&self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Feed-forward network with identity output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    #[serde(with = "matrix_list")]
    pub weights: Vec<DMatrix<f64>>,
    #[serde(with = "vector_list")]
    pub biases: Vec<DVector<f64>>,
}

mod matrix_list {
    use super::*;
    use serde::ser::SerializeSeq;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Mat {
        rows: usize,
        cols: usize,
        /// Row-major entries.
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(ms: &[DMatrix<f64>], s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(ms.len()))?;
        for m in ms {
            let mut data = Vec::with_capacity(m.nrows() * m.ncols());
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    data.push(m[(i, j)]);
                }
            }
            seq.serialize_element(&Mat { rows: m.nrows(), cols: m.ncols(), data })?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<Vec<DMatrix<f64>>, D::Error> {
        let mats = Vec::<Mat>::deserialize(d)?;
        Ok(mats
            .into_iter()
            .map(|m| DMatrix::from_row_slice(m.rows, m.cols, &m.data))
            .collect())
    }
}

mod vector_list {
    use super::*;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(vs: &[DVector<f64>], s: S) -> std::result::Result<S::Ok, S::Error> {
        let plain: Vec<Vec<f64>> = vs.iter().map(|v| v.iter().cloned().collect()).collect();
        plain.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<Vec<DVector<f64>>, D::Error> {
        let plain = Vec::<Vec<f64>>::deserialize(d)?;
        Ok(plain.into_iter().map(DVector::from_vec).collect())
    }
}

/// Glorot-style uniform initialization, zero biases, seeded.
pub fn init_mlp(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Mlp> {
    if layer_sizes.len() < 3 {
        return Err(Error::Config("init_mlp: need at least one hidden layer".into()));
    }
    if layer_sizes.iter().any(|s| *s == 0) {
        return Err(Error::Config("init_mlp: zero-size layer".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for w in layer_sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        weights.push(DMatrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-bound..bound)));
        biases.push(DVector::zeros(fan_out));
    }
    let n_hidden = layer_sizes.len() - 2;
    Ok(Mlp {
        layer_sizes: layer_sizes.to_vec(),
        activations: vec![activation; n_hidden],
        weights,
        biases,
    })
}

impl Mlp {
    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Total hidden neuron count.
    pub fn n_neurons(&self) -> usize {
        self.layer_sizes[1..self.layer_sizes.len() - 1].iter().sum()
    }

    fn check_input(&self, batch: &DMatrix<f64>) -> Result<()> {
        if batch.nrows() != self.input_dim() {
            return Err(Error::Shape(format!(
                "forward: input has {} features, expected {}",
                batch.nrows(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Forward pass on a batch (features x samples) -> (outputs x samples).
    pub fn forward(&self, batch: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.forward_cached(batch)?.output().clone())
    }

    /// Forward pass retaining per-layer activations for backprop.
    pub fn forward_cached(&self, batch: &DMatrix<f64>) -> Result<ForwardCache> {
        self.check_input(batch)?;
        let n_layers = self.weights.len();
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(batch.clone());
        for l in 0..n_layers {
            let mut z = &self.weights[l] * acts.last().unwrap();
            for j in 0..z.ncols() {
                for i in 0..z.nrows() {
                    z[(i, j)] += self.biases[l][i];
                }
            }
            if l < n_layers - 1 {
                let act = self.activations[l];
                z.apply(|v| *v = act.eval(*v));
            }
            acts.push(z);
        }
        Ok(ForwardCache { activations: acts })
    }

    /// Reverse-mode gradients of the forward computation against an upstream
    /// gradient with the shape of the output.
    pub fn backward(&self, cache: &ForwardCache, upstream: &DMatrix<f64>) -> Result<Gradients> {
        let out = cache.output();
        if upstream.shape() != out.shape() {
            return Err(Error::Shape(format!(
                "backward: upstream gradient is {:?}, output is {:?}",
                upstream.shape(),
                out.shape()
            )));
        }
        let n_layers = self.weights.len();
        let mut dw = Vec::with_capacity(n_layers);
        let mut db = Vec::with_capacity(n_layers);
        let mut delta = upstream.clone();
        for l in (0..n_layers).rev() {
            if l < n_layers - 1 {
                // chain through the activation of layer l
                let act = self.activations[l];
                let y = &cache.activations[l + 1];
                for j in 0..delta.ncols() {
                    for i in 0..delta.nrows() {
                        delta[(i, j)] *= act.deriv_from_output(y[(i, j)]);
                    }
                }
            }
            dw.push(&delta * cache.activations[l].transpose());
            db.push(DVector::from_fn(delta.nrows(), |i, _| delta.row(i).sum()));
            delta = self.weights[l].transpose() * delta;
        }
        dw.reverse();
        db.reverse();
        Ok(Gradients { dw, db, dx: delta })
    }
}

/// Per-layer activations of one forward pass; index 0 is the input batch.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub activations: Vec<DMatrix<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &DMatrix<f64> {
        self.activations.last().unwrap()
    }
}

/// Parameter and input gradients from one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub dw: Vec<DMatrix<f64>>,
    pub db: Vec<DVector<f64>>,
    pub dx: DMatrix<f64>,
}

/// ADAM optimizer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamHyper {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { alpha: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamHyper {
    pub fn with_lr(alpha: f64) -> Self {
        Self { alpha, ..Default::default() }
    }
}

/// Moment estimates for every parameter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub hyper: AdamHyper,
    pub step: usize,
    m_w: Vec<DMatrix<f64>>,
    v_w: Vec<DMatrix<f64>>,
    m_b: Vec<DVector<f64>>,
    v_b: Vec<DVector<f64>>,
}

impl AdamState {
    pub fn new(net: &Mlp, hyper: AdamHyper) -> Self {
        Self {
            hyper,
            step: 0,
            m_w: net.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            v_w: net.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            m_b: net.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
            v_b: net.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
        }
    }
}

/// One ADAM update with bias correction; errors on non-finite gradients.
pub fn adam_step(net: &mut Mlp, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    for g in grads.dw.iter().flat_map(|m| m.iter()).chain(grads.db.iter().flat_map(|v| v.iter())) {
        if !g.is_finite() {
            return Err(Error::Divergence {
                step: state.step + 1,
                detail: "non-finite gradient in adam_step".into(),
            });
        }
    }
    state.step += 1;
    let h = state.hyper;
    let t = state.step as i32;
    let bc1 = 1.0 - h.beta1.powi(t);
    let bc2 = 1.0 - h.beta2.powi(t);
    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = h.beta1 * *m + (1.0 - h.beta1) * g;
        *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= h.alpha * m_hat / (v_hat.sqrt() + h.eps);
    };
    for l in 0..net.weights.len() {
        for (i, g) in grads.dw[l].iter().enumerate() {
            update(
                &mut net.weights[l].as_mut_slice()[i],
                *g,
                &mut state.m_w[l].as_mut_slice()[i],
                &mut state.v_w[l].as_mut_slice()[i],
            );
        }
        for (i, g) in grads.db[l].iter().enumerate() {
            update(
                &mut net.biases[l].as_mut_slice()[i],
                *g,
                &mut state.m_b[l].as_mut_slice()[i],
                &mut state.v_b[l].as_mut_slice()[i],
            );
        }
    }
    Ok(())
}

/// Loss value broken into components, with the gradient w.r.t. predictions.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub total: f64,
    pub error: f64,
    pub physics: f64,
    pub grad: DMatrix<f64>,
}

/// A loss over (predictions, targets, inputs); inputs are the network's
/// input batch, which physics-aware losses inspect for the excitation.
pub trait Loss {
    fn eval(
        &self,
        pred: &DMatrix<f64>,
        targets: &DMatrix<f64>,
        inputs: &DMatrix<f64>,
    ) -> Result<LossValue>;
}

/// Plain mean-squared-error loss: (1/N) sum_k ||y_k - y_hat_k||^2.
#[derive(Debug, Clone, Copy, Default)]
pub struct MseLoss;

impl Loss for MseLoss {
    fn eval(
        &self,
        pred: &DMatrix<f64>,
        targets: &DMatrix<f64>,
        _inputs: &DMatrix<f64>,
    ) -> Result<LossValue> {
        if pred.shape() != targets.shape() {
            return Err(Error::Shape("mse: prediction/target shape mismatch".into()));
        }
        let n = pred.ncols().max(1) as f64;
        let diff = pred - targets;
        let value = diff.iter().map(|d| d * d).sum::<f64>() / n;
        let grad = diff.map(|d| 2.0 * d / n);
        Ok(LossValue { total: value, error: value, physics: 0.0, grad })
    }
}

/// Training table: columns are time-ordered samples; `segments` are column
/// ranges that are contiguous in time (physics pairing stays inside them).
#[derive(Debug, Clone)]
pub struct TrainData {
    pub inputs: DMatrix<f64>,
    pub targets: DMatrix<f64>,
    pub segments: Vec<std::ops::Range<usize>>,
}

impl TrainData {
    pub fn n_samples(&self) -> usize {
        self.inputs.ncols()
    }

    fn slice(&self, range: &std::ops::Range<usize>) -> (DMatrix<f64>, DMatrix<f64>) {
        (
            self.inputs.columns(range.start, range.len()).into_owned(),
            self.targets.columns(range.start, range.len()).into_owned(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Early-stopping patience on validation loss, in epochs.
    pub patience: usize,
    pub adam: AdamHyper,
    /// Multiplicative learning-rate decay applied after every epoch.
    #[serde(default = "default_lr_decay")]
    pub lr_decay: f64,
}

fn default_lr_decay() -> f64 {
    1.0
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            seed: 0,
            patience: 50,
            adam: AdamHyper::default(),
            lr_decay: 1.0,
        }
    }
}

/// Per-epoch loss record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_total: f64,
    pub train_error: f64,
    pub train_phy: f64,
    pub val_total: f64,
    pub val_error: f64,
    pub val_phy: f64,
}

pub type History = Vec<EpochStats>;

/// Mini-batch ADAM training with seeded shuffling of contiguous chunks and
/// early stopping on validation loss. Returns the best-validation network.
pub fn train(
    mut net: Mlp,
    train_data: &TrainData,
    val_data: &TrainData,
    loss: &dyn Loss,
    opts: &TrainOptions,
) -> Result<(Mlp, History)> {
    if opts.epochs == 0 {
        return Ok((net, Vec::new()));
    }
    if train_data.n_samples() == 0 || val_data.n_samples() == 0 {
        return Err(Error::Config("train: empty train or validation set".into()));
    }
    // batches are contiguous windows inside each segment so physics-aware
    // losses can pair consecutive predictions
    let mut chunks: Vec<std::ops::Range<usize>> = Vec::new();
    for seg in &train_data.segments {
        let mut start = seg.start;
        while start < seg.end {
            let end = (start + opts.batch_size).min(seg.end);
            chunks.push(start..end);
            start = end;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut state = AdamState::new(&net, opts.adam);
    let mut history = Vec::with_capacity(opts.epochs);
    let mut best = net.clone();
    let mut best_val = f64::INFINITY;
    let mut since_best = 0usize;

    for epoch in 0..opts.epochs {
        chunks.shuffle(&mut rng);
        for chunk in &chunks {
            let (x, y) = train_data.slice(chunk);
            let cache = net.forward_cached(&x)?;
            let lv = loss.eval(cache.output(), &y, &x)?;
            if !lv.total.is_finite() {
                return Err(Error::Divergence {
                    step: epoch,
                    detail: format!("non-finite training loss at epoch {epoch}"),
                });
            }
            let grads = net.backward(&cache, &lv.grad)?;
            adam_step(&mut net, &grads, &mut state)?;
        }
        let tr = evaluate(&net, train_data, loss)?;
        let va = evaluate(&net, val_data, loss)?;
        history.push(EpochStats {
            epoch,
            train_total: tr.0,
            train_error: tr.1,
            train_phy: tr.2,
            val_total: va.0,
            val_error: va.1,
            val_phy: va.2,
        });
        if va.0 < best_val {
            best_val = va.0;
            best = net.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > opts.patience {
                break;
            }
        }
        state.hyper.alpha *= opts.lr_decay;
    }
    Ok((best, history))
}

/// Mean loss components over a dataset, evaluated segment-wise.
pub fn evaluate(net: &Mlp, data: &TrainData, loss: &dyn Loss) -> Result<(f64, f64, f64)> {
    let mut total = 0.0;
    let mut error = 0.0;
    let mut phy = 0.0;
    let mut n = 0usize;
    for seg in &data.segments {
        let (x, y) = data.slice(seg);
        let pred = net.forward(&x)?;
        let lv = loss.eval(&pred, &y, &x)?;
        let w = seg.len();
        total += lv.total * w as f64;
        error += lv.error * w as f64;
        phy += lv.physics * w as f64;
        n += w;
    }
    let n = n.max(1) as f64;
    Ok((total / n, error / n, phy / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn single_segment(inputs: DMatrix<f64>, targets: DMatrix<f64>) -> TrainData {
        let n = inputs.ncols();
        TrainData { inputs, targets, segments: vec![0..n] }
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_mlp(&[3, 5, 2], Activation::Tanh, 9).unwrap();
        let b = init_mlp(&[3, 5, 2], Activation::Tanh, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_shapes() {
        let net = init_mlp(&[3, 5, 2], Activation::Tanh, 0).unwrap();
        assert_eq!(net.weights[0].shape(), (5, 3));
        assert_eq!(net.weights[1].shape(), (2, 5));
        assert_eq!(net.n_neurons(), 5);
    }

    #[test]
    fn init_respects_glorot_bound() {
        let net = init_mlp(&[50, 200, 1], Activation::Tanh, 1).unwrap();
        let bound0 = (6.0 / 250.0f64).sqrt();
        assert!(net.weights[0].iter().all(|w| w.abs() < bound0));
        assert!(net.weights[0].len() >= 10_000);
        assert!(net.biases.iter().all(|b| b.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn init_rejects_zero_layer() {
        assert!(init_mlp(&[3, 0, 2], Activation::Tanh, 0).is_err());
        assert!(init_mlp(&[3, 2], Activation::Tanh, 0).is_err());
    }

    #[test]
    fn forward_zero_net_is_zero() {
        let mut net = init_mlp(&[2, 4, 2], Activation::Tanh, 0).unwrap();
        for w in &mut net.weights {
            w.fill(0.0);
        }
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = net.forward(&x).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn forward_identity_linear_layer() {
        // single affine layer W = I, b = 0 via a hidden layer trick is not
        // possible (output layer is the only linear one); emulate with a
        // 2-layer net whose hidden weights invert the tanh at small scale.
        // Instead check the output layer alone: y = W2 * tanh(W1 x) with
        // W1 = 0 gives y = b2 after the bias.
        let mut net = init_mlp(&[2, 2, 2], Activation::Tanh, 0).unwrap();
        net.weights[0].fill(0.0);
        net.biases[1] = DVector::from_vec(vec![3.0, -1.0]);
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let y = net.forward(&x).unwrap();
        for j in 0..2 {
            assert_eq!(y[(0, j)], 3.0);
            assert_eq!(y[(1, j)], -1.0);
        }
    }

    /// Independent re-implementation of the same arithmetic (scalar loops).
    fn forward_oracle(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for l in 0..net.weights.len() {
            let w = &net.weights[l];
            let mut next = vec![0.0; w.nrows()];
            for i in 0..w.nrows() {
                let mut acc = net.biases[l][i];
                for j in 0..w.ncols() {
                    acc += w[(i, j)] * cur[j];
                }
                next[i] = if l < net.weights.len() - 1 {
                    net.activations[l].eval(acc)
                } else {
                    acc
                };
            }
            cur = next;
        }
        cur
    }

    #[test]
    fn forward_matches_independent_oracle() {
        let net = init_mlp(&[3, 7, 4, 2], Activation::Tanh, 13).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DMatrix::from_fn(3, 5, |_, _| rng.gen_range(-2.0..2.0));
        let y = net.forward(&x).unwrap();
        for j in 0..5 {
            let col: Vec<f64> = x.column(j).iter().cloned().collect();
            let want = forward_oracle(&net, &col);
            for i in 0..2 {
                assert_relative_eq!(y[(i, j)], want[i], max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn forward_rejects_width_mismatch() {
        let net = init_mlp(&[3, 4, 2], Activation::Tanh, 0).unwrap();
        let x = DMatrix::zeros(2, 5);
        assert!(net.forward(&x).is_err());
    }

    /// Central finite differences of a scalar loss over all parameters.
    fn finite_diff_check(net: &Mlp, x: &DMatrix<f64>, y: &DMatrix<f64>, tol: f64) {
        let loss = MseLoss;
        let cache = net.forward_cached(x).unwrap();
        let lv = loss.eval(cache.output(), y, x).unwrap();
        let grads = net.backward(&cache, &lv.grad).unwrap();
        let h = 1e-6;
        let eval = |n: &Mlp| {
            let pred = n.forward(x).unwrap();
            loss.eval(&pred, y, x).unwrap().total
        };
        for l in 0..net.weights.len() {
            for i in 0..net.weights[l].len() {
                let mut plus = net.clone();
                plus.weights[l].as_mut_slice()[i] += h;
                let mut minus = net.clone();
                minus.weights[l].as_mut_slice()[i] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let an = grads.dw[l].as_slice()[i];
                assert!(
                    (an - fd).abs() / (an.abs() + 1e-8) < tol,
                    "layer {l} weight {i}: analytic {an}, fd {fd}"
                );
            }
            for i in 0..net.biases[l].len() {
                let mut plus = net.clone();
                plus.biases[l][i] += h;
                let mut minus = net.clone();
                minus.biases[l][i] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let an = grads.db[l][i];
                assert!(
                    (an - fd).abs() / (an.abs() + 1e-8) < tol,
                    "layer {l} bias {i}: analytic {an}, fd {fd}"
                );
            }
        }
    }

    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_matches_finite_differences() {
        let net = init_mlp(&[3, 6, 5, 2], Activation::Tanh, 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = DMatrix::from_fn(3, 4, |_, _| rng.gen_range(-1.0..1.0));
        let y = DMatrix::from_fn(2, 4, |_, _| rng.gen_range(-1.0..1.0));
        finite_diff_check(&net, &x, &y, 1e-6);
    }

    #[test]
    fn backward_zero_upstream_gives_zero() {
        let net = init_mlp(&[3, 4, 2], Activation::Tanh, 0).unwrap();
        let x = DMatrix::from_element(3, 2, 0.5);
        let cache = net.forward_cached(&x).unwrap();
        let grads = net.backward(&cache, &DMatrix::zeros(2, 2)).unwrap();
        assert!(grads.dw.iter().all(|m| m.iter().all(|v| *v == 0.0)));
        assert!(grads.db.iter().all(|v| v.iter().all(|x| *x == 0.0)));
    }

    #[test]
    fn linear_net_mse_gradient_closed_form() {
        // one "hidden" relu layer held in the linear region plus identity
        // output reproduces a plain linear map for positive activations;
        // simplest closed form: output layer over a frozen hidden output.
        let mut net = init_mlp(&[2, 2, 1], Activation::Relu, 0).unwrap();
        net.weights[0] = DMatrix::identity(2, 2);
        net.biases[0] = DVector::zeros(2);
        net.weights[1] = DMatrix::from_row_slice(1, 2, &[0.3, -0.2]);
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]); // positive -> relu linear
        let y = DMatrix::from_row_slice(1, 1, &[1.0]);
        let cache = net.forward_cached(&x).unwrap();
        let pred = cache.output()[(0, 0)];
        let lv = MseLoss.eval(cache.output(), &y, &x).unwrap();
        let grads = net.backward(&cache, &lv.grad).unwrap();
        // dL/dW2 = 2 (y_hat - y) x^T
        let want = 2.0 * (pred - 1.0);
        assert_relative_eq!(grads.dw[1][(0, 0)], want * 1.0, max_relative = 1e-12);
        assert_relative_eq!(grads.dw[1][(0, 1)], want * 2.0, max_relative = 1e-12);
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut net = init_mlp(&[2, 3, 1], Activation::Tanh, 0).unwrap();
        let before = net.clone();
        let grads = Gradients {
            dw: net.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            db: net.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
            dx: DMatrix::zeros(2, 1),
        };
        let mut state = AdamState::new(&net, AdamHyper::default());
        adam_step(&mut net, &grads, &mut state).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn adam_constant_gradient_approaches_sign_step() {
        let mut net = init_mlp(&[1, 1, 1], Activation::Tanh, 0).unwrap();
        let hyper = AdamHyper::with_lr(0.01);
        let mut state = AdamState::new(&net, hyper);
        let grads = Gradients {
            dw: vec![DMatrix::from_element(1, 1, 3.0), DMatrix::from_element(1, 1, 3.0)],
            db: vec![DVector::from_element(1, 3.0), DVector::from_element(1, 3.0)],
            dx: DMatrix::zeros(1, 1),
        };
        let mut prev = net.weights[0][(0, 0)];
        let mut step_size = 0.0;
        for _ in 0..2000 {
            adam_step(&mut net, &grads, &mut state).unwrap();
            step_size = prev - net.weights[0][(0, 0)];
            prev = net.weights[0][(0, 0)];
        }
        // step magnitude tends to alpha * sign(g)
        assert_relative_eq!(step_size, 0.01, max_relative = 1e-3);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut net = init_mlp(&[1, 1, 1], Activation::Tanh, 0).unwrap();
        let mut state = AdamState::new(&net, AdamHyper::default());
        let grads = Gradients {
            dw: vec![DMatrix::from_element(1, 1, f64::NAN), DMatrix::zeros(1, 1)],
            db: vec![DVector::zeros(1), DVector::zeros(1)],
            dx: DMatrix::zeros(1, 1),
        };
        assert!(adam_step(&mut net, &grads, &mut state).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let net = init_mlp(&[2, 8, 1], Activation::Tanh, 3).unwrap();
        let x = DMatrix::from_row_slice(2, 4, &[0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let y = DMatrix::from_row_slice(1, 4, &[0.0, 1.0, 1.0, 0.0]);
        let data = single_segment(x, y);
        let opts = TrainOptions {
            epochs: 100,
            batch_size: 4,
            seed: 5,
            patience: 1000,
            adam: AdamHyper::with_lr(0.05),
            lr_decay: 1.0,
        };
        let (a, _) = train(net.clone(), &data, &data, &MseLoss, &opts).unwrap();
        let (b, _) = train(net, &data, &data, &MseLoss, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_epochs_returns_initial_net() {
        let net = init_mlp(&[2, 4, 1], Activation::Tanh, 0).unwrap();
        let data = single_segment(DMatrix::zeros(2, 3), DMatrix::zeros(1, 3));
        let opts = TrainOptions { epochs: 0, ..Default::default() };
        let (out, history) = train(net.clone(), &data, &data, &MseLoss, &opts).unwrap();
        assert_eq!(out, net);
        assert!(history.is_empty());
    }

    #[test]
    fn fits_xor() {
        let net = init_mlp(&[2, 8, 1], Activation::Tanh, 1).unwrap();
        let x = DMatrix::from_row_slice(2, 4, &[0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let y = DMatrix::from_row_slice(1, 4, &[0.0, 1.0, 1.0, 0.0]);
        let data = single_segment(x, y);
        let opts = TrainOptions {
            epochs: 5000,
            batch_size: 4,
            seed: 1,
            patience: 5000,
            adam: AdamHyper::with_lr(0.05),
            lr_decay: 1.0,
        };
        let (_net, history) = train(net, &data, &data, &MseLoss, &opts).unwrap();
        let final_loss = history.last().unwrap().train_total;
        assert!(final_loss < 1e-3, "xor loss {final_loss}");
        assert!(history.iter().all(|e| e.train_total.is_finite()));
    }

    #[test]
    fn reaches_least_squares_optimum_on_linear_task() {
        // y = 2 x1 - x2 + 0.5 + noise; optimum residual from normal equations
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 200;
        let x = DMatrix::from_fn(2, n, |_, _| rng.gen_range(-1.0..1.0));
        let y = DMatrix::from_fn(1, n, |_, j| {
            2.0 * x[(0, j)] - x[(1, j)] + 0.5 + 0.1 * rng.gen_range(-1.0f64..1.0)
        });
        // normal equations on [x; 1]
        let mut a = DMatrix::zeros(n, 3);
        for j in 0..n {
            a[(j, 0)] = x[(0, j)];
            a[(j, 1)] = x[(1, j)];
            a[(j, 2)] = 1.0;
        }
        let yt = DMatrix::from_fn(n, 1, |j, _| y[(0, j)]);
        let coef = (a.transpose() * &a).try_inverse().unwrap() * a.transpose() * &yt;
        let resid = (&a * &coef - &yt).norm_squared() / n as f64;

        let net = init_mlp(&[2, 16, 1], Activation::Tanh, 2).unwrap();
        let data = single_segment(x, y);
        let opts = TrainOptions {
            epochs: 2000,
            batch_size: 200,
            seed: 2,
            patience: 2000,
            adam: AdamHyper::with_lr(0.02),
            lr_decay: 1.0,
        };
        let (net, _) = train(net, &data, &data, &MseLoss, &opts).unwrap();
        // fine-tune at a lower learning rate to settle into the optimum
        let fine = TrainOptions { adam: AdamHyper::with_lr(0.002), ..opts };
        let (_net, history) = train(net, &data, &data, &MseLoss, &fine).unwrap();
        let final_loss = history.last().unwrap().train_total;
        assert!(
            final_loss < resid * 1.01 + 1e-6,
            "loss {final_loss} vs least-squares residual {resid}"
        );
    }

    #[test]
    fn full_batch_training_is_permutation_invariant() {
        // with a single chunk covering everything the shuffle is a no-op,
        // so different seeds give identical trajectories
        let net = init_mlp(&[2, 4, 1], Activation::Tanh, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = DMatrix::from_fn(2, 10, |_, _| rng.gen_range(-1.0..1.0));
        let y = DMatrix::from_fn(1, 10, |_, _| rng.gen_range(-1.0..1.0));
        let data = single_segment(x, y);
        let mk_opts = |seed| TrainOptions {
            epochs: 50,
            batch_size: 10,
            seed,
            patience: 100,
            adam: AdamHyper::default(),
            lr_decay: 1.0,
        };
        let (a, _) = train(net.clone(), &data, &data, &MseLoss, &mk_opts(1)).unwrap();
        let (b, _) = train(net, &data, &data, &MseLoss, &mk_opts(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_json_round_trip() {
        let net = init_mlp(&[3, 5, 2], Activation::Relu, 4).unwrap();
        let json = serde_json::to_string(&net).unwrap();
        let back: Mlp = serde_json::from_str(&json).unwrap();
        assert_eq!(net, back);
    }
}
