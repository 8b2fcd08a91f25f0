//! PGNN-L assembly: the prior physical model is simulated open loop and its
//! state feeds the network input next to the excitation and the previous
//! output. Training uses teacher forcing (measured previous output); the
//! closed-loop rollout feeds the network's own prediction back instead,
//! which is exactly the train/predict asymmetry of the reference workflow
//! and carries the usual exposure-bias risk.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::datakit::{Dataset, Split, Standardizer};
use crate::error::{Error, Result};
use crate::nnet::{self, init_mlp, Activation, History, Mlp, TrainData, TrainOptions};
use crate::physloss::{
    ComposedLoss, ComposedLossConfig, EnergyModel, GolfEnergy, InputChannel, ValveEnergy,
};
use crate::plants::{integrate, Degradation, PlantSpec, Trajectory};

/// Which blocks feed the network, in the fixed order u, x_phy, y_prev.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputLayout {
    pub use_u: bool,
    pub use_x_phy: bool,
    pub use_y_prev: bool,
}

impl Default for InputLayout {
    fn default() -> Self {
        Self { use_u: true, use_x_phy: true, use_y_prev: true }
    }
}

impl InputLayout {
    /// Plain-NN layout: excitation and previous output only.
    pub fn baseline() -> Self {
        Self { use_u: true, use_x_phy: false, use_y_prev: true }
    }

    pub fn width(&self, state_dim: usize) -> usize {
        (self.use_u as usize)
            + (self.use_x_phy as usize) * state_dim
            + (self.use_y_prev as usize) * state_dim
    }

    /// Row of the excitation channel in the input matrix, when present.
    pub fn u_row(&self) -> Option<usize> {
        self.use_u.then_some(0)
    }

    /// Assemble one input column in physical units.
    fn features(&self, u: f64, x_phy: &[f64], y_prev: &[f64]) -> Vec<f64> {
        let mut f = Vec::with_capacity(self.width(x_phy.len()));
        if self.use_u {
            f.push(u);
        }
        if self.use_x_phy {
            f.extend_from_slice(x_phy);
        }
        if self.use_y_prev {
            f.extend_from_slice(y_prev);
        }
        f
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgnnConfig {
    /// Prior physical model (typically a degraded plant).
    pub prior: PlantSpec,
    /// How the prior was derived from the true plant, for provenance.
    #[serde(default)]
    pub degradation: Option<Degradation>,
    #[serde(default)]
    pub layout: InputLayout,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    /// Physics weight lambda in [0, 1]; 0 reduces to a plain NN loss.
    pub lambda_phy: f64,
    pub dt: f64,
    #[serde(default)]
    pub train: TrainOptions,
}

impl PgnnConfig {
    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config("pgnn: dt must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda_phy) {
            return Err(Error::Config(format!(
                "pgnn: lambda_phy = {} outside [0, 1]",
                self.lambda_phy
            )));
        }
        if self.hidden.is_empty() {
            return Err(Error::Config("pgnn: need at least one hidden layer".into()));
        }
        if self.layout.width(1) == 0 {
            return Err(Error::Config("pgnn: empty input layout".into()));
        }
        Ok(())
    }
}

/// Energy bookkeeping matching the prior's plant family.
pub fn energy_for(spec: &PlantSpec) -> Result<Arc<dyn EnergyModel>> {
    spec.validate()?;
    match spec {
        PlantSpec::Golf { params, friction_sign } => {
            Ok(Arc::new(GolfEnergy { params: *params, sign: *friction_sign }))
        }
        PlantSpec::Valve { params, .. } => Ok(Arc::new(ValveEnergy { params: *params })),
    }
}

/// The supervised table in physical units, one column per step k >= 1 of
/// each trajectory, in dataset order.
pub struct TrainingTable {
    /// layout.width(l) x n_rows
    pub inputs: DMatrix<f64>,
    /// l x n_rows
    pub targets: DMatrix<f64>,
    /// Split tag of the target sample, per column.
    pub splits: Vec<Split>,
    /// (trajectory id, step index k) per column, for segment building.
    keys: Vec<(usize, usize)>,
}

impl TrainingTable {
    pub fn n_rows(&self) -> usize {
        self.inputs.ncols()
    }

    /// Column indices carrying the given split tag.
    fn split_columns(&self, split: Split) -> Vec<usize> {
        (0..self.n_rows()).filter(|&j| self.splits[j] == split).collect()
    }

    /// Standardized TrainData for one split. Segments are maximal runs of
    /// consecutive steps within one trajectory and one split, so physics
    /// pairing never straddles a boundary.
    fn train_data(
        &self,
        split: Split,
        input_std: &Standardizer,
        target_std: &Standardizer,
    ) -> Result<TrainData> {
        let cols = self.split_columns(split);
        if cols.is_empty() {
            return Err(Error::Split(format!("no rows in split '{}'", split.as_str())));
        }
        let inputs = DMatrix::from_fn(self.inputs.nrows(), cols.len(), |i, j| {
            input_std.apply_scalar(i, self.inputs[(i, cols[j])])
        });
        let targets = DMatrix::from_fn(self.targets.nrows(), cols.len(), |i, j| {
            target_std.apply_scalar(i, self.targets[(i, cols[j])])
        });
        let mut segments = Vec::new();
        let mut start = 0;
        for j in 1..=cols.len() {
            let brk = j == cols.len() || {
                let (tp, kp) = self.keys[cols[j - 1]];
                let (tc, kc) = self.keys[cols[j]];
                tc != tp || kc != kp + 1
            };
            if brk {
                segments.push(start..j);
                start = j;
            }
        }
        Ok(TrainData { inputs, targets, segments })
    }

    /// Standardizer pair (inputs, targets) fit on the train split only.
    pub fn fit_standardizers(&self) -> Result<(Standardizer, Standardizer)> {
        let cols = self.split_columns(Split::Train);
        if cols.is_empty() {
            return Err(Error::Split("no rows in split 'train'".into()));
        }
        // Standardizer::fit wants rows = samples
        let ins = DMatrix::from_fn(cols.len(), self.inputs.nrows(), |s, c| {
            self.inputs[(c, cols[s])]
        });
        let outs = DMatrix::from_fn(cols.len(), self.targets.nrows(), |s, c| {
            self.targets[(c, cols[s])]
        });
        Ok((Standardizer::fit(&ins)?, Standardizer::fit(&outs)?))
    }
}

/// Zero-order-hold lookup into a recorded input sequence.
fn u_lookup(u: &[f64], dt: f64) -> impl Fn(f64) -> f64 + '_ {
    move |t: f64| {
        let idx = (t / dt).round() as usize;
        u[idx.min(u.len() - 1)]
    }
}

/// Simulate the prior over one trajectory's grid from its measured initial
/// state, then assemble rows `[u_k, x_phy_k, y_{k-1}] -> y_k` for k >= 1.
pub fn build_training_table(cfg: &PgnnConfig, dataset: &Dataset) -> Result<TrainingTable> {
    cfg.validate()?;
    if (dataset.dt - cfg.dt).abs() > 1e-12 * cfg.dt.max(1.0) {
        return Err(Error::Config(format!(
            "training table: dataset dt {} does not match config dt {}",
            dataset.dt, cfg.dt
        )));
    }
    let prior = cfg.prior.model()?;
    let l = prior.state_dim;
    let width = cfg.layout.width(l);
    let mut inputs: Vec<f64> = Vec::new();
    let mut targets: Vec<f64> = Vec::new();
    let mut splits = Vec::new();
    let mut keys = Vec::new();
    let mut n_rows = 0usize;
    for range in dataset.trajectory_ranges() {
        let recs = &dataset.records[range.clone()];
        if recs.len() < 2 {
            continue;
        }
        for w in recs.windows(2) {
            if (w[1].t - w[0].t - cfg.dt).abs() > 1e-9 * cfg.dt.max(1.0) {
                return Err(Error::Config("training table: non-uniform sampling".into()));
            }
        }
        if recs[0].y.len() != l {
            return Err(Error::Shape(format!(
                "training table: {} output channels, prior has {} states",
                recs[0].y.len(),
                l
            )));
        }
        let u_rec: Vec<f64> = recs.iter().map(|r| r.u).collect();
        let phy = integrate(&prior, &recs[0].y, &u_lookup(&u_rec, cfg.dt), cfg.dt, recs.len() - 1)?;
        for k in 1..recs.len() {
            let x_phy: Vec<f64> = (0..l).map(|c| phy.x[(k, c)]).collect();
            inputs.extend(cfg.layout.features(recs[k].u, &x_phy, &recs[k - 1].y));
            targets.extend_from_slice(&recs[k].y);
            splits.push(recs[k].split);
            keys.push((recs[k].traj_id, k));
            n_rows += 1;
        }
    }
    if n_rows == 0 {
        return Err(Error::Shape("training table: no usable rows".into()));
    }
    // Vec is column-major here (one column pushed at a time)
    Ok(TrainingTable {
        inputs: DMatrix::from_vec(width, n_rows, inputs),
        targets: DMatrix::from_vec(l, n_rows, targets),
        splits,
        keys,
    })
}

/// Everything needed to roll the trained predictor forward.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PgnnModel {
    pub net: Mlp,
    pub layout: InputLayout,
    pub input_std: Standardizer,
    pub target_std: Standardizer,
    pub lambda_phy: f64,
    pub prior: PlantSpec,
    pub degradation: Option<Degradation>,
    pub dt: f64,
}

/// Sidecar content: the model minus the network checkpoint.
#[derive(Serialize, Deserialize)]
struct Sidecar {
    layout: InputLayout,
    input_std: Standardizer,
    target_std: Standardizer,
    lambda_phy: f64,
    prior: PlantSpec,
    degradation: Option<Degradation>,
    dt: f64,
}

impl PgnnModel {
    /// Persist as `<base>.net.json` (nnet checkpoint) plus
    /// `<base>.sidecar.json`.
    pub fn save(&self, base: &Path) -> Result<()> {
        let net = serde_json::to_string_pretty(&self.net)?;
        let sidecar = serde_json::to_string_pretty(&Sidecar {
            layout: self.layout,
            input_std: self.input_std.clone(),
            target_std: self.target_std.clone(),
            lambda_phy: self.lambda_phy,
            prior: self.prior.clone(),
            degradation: self.degradation.clone(),
            dt: self.dt,
        })?;
        crate::datakit::atomic_write(&with_suffix(base, ".net.json"), &net)?;
        crate::datakit::atomic_write(&with_suffix(base, ".sidecar.json"), &sidecar)?;
        Ok(())
    }

    pub fn load(base: &Path) -> Result<Self> {
        let net: Mlp = serde_json::from_str(&std::fs::read_to_string(with_suffix(base, ".net.json"))?)?;
        let sc: Sidecar =
            serde_json::from_str(&std::fs::read_to_string(with_suffix(base, ".sidecar.json"))?)?;
        Ok(Self {
            net,
            layout: sc.layout,
            input_std: sc.input_std,
            target_std: sc.target_std,
            lambda_phy: sc.lambda_phy,
            prior: sc.prior,
            degradation: sc.degradation,
            dt: sc.dt,
        })
    }
}

fn with_suffix(base: &Path, suffix: &str) -> std::path::PathBuf {
    let mut s = base.as_os_str().to_os_string();
    s.push(suffix);
    s.into()
}

/// Train per the composed loss; delegates to the nnet trainer with
/// physics-aware contiguous batching. `seed` drives both the parameter
/// initialization and the batch shuffling.
pub fn train_pgnn(cfg: &PgnnConfig, dataset: &Dataset, seed: u64) -> Result<(PgnnModel, History)> {
    let table = build_training_table(cfg, dataset)?;
    let (input_std, target_std) = table.fit_standardizers()?;
    let train_data = table.train_data(Split::Train, &input_std, &target_std)?;
    let val_data = table.train_data(Split::Val, &input_std, &target_std)?;

    let energy = energy_for(&cfg.prior)?;
    if cfg.lambda_phy > 0.0 && !cfg.layout.use_u {
        log::warn!("physics loss without an excitation input assumes u = 0 in the work term");
    }
    let loss = ComposedLoss {
        cfg: ComposedLossConfig::new(cfg.lambda_phy, energy, cfg.dt),
        target_std: target_std.clone(),
        input_u: cfg.layout.u_row().map(|row| InputChannel {
            row,
            mean: input_std.mean[row],
            std: input_std.std[row],
        }),
    };

    let l = target_std.mean.len();
    let mut sizes = vec![cfg.layout.width(l)];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(l);
    let net = init_mlp(&sizes, cfg.activation, seed)?;
    let opts = TrainOptions { seed, ..cfg.train.clone() };
    let (net, history) = nnet::train(net, &train_data, &val_data, &loss, &opts)?;

    Ok((
        PgnnModel {
            net,
            layout: cfg.layout,
            input_std,
            target_std,
            lambda_phy: cfg.lambda_phy,
            prior: cfg.prior.clone(),
            degradation: cfg.degradation.clone(),
            dt: cfg.dt,
        },
        history,
    ))
}

/// The solely data-driven baseline: same pipeline with layout {u, y_prev}
/// and the physics weight forced to zero.
pub fn baseline_nn_config(cfg: &PgnnConfig) -> PgnnConfig {
    PgnnConfig {
        layout: InputLayout::baseline(),
        lambda_phy: 0.0,
        ..cfg.clone()
    }
}

pub fn train_baseline_nn(
    cfg: &PgnnConfig,
    dataset: &Dataset,
    seed: u64,
) -> Result<(PgnnModel, History)> {
    train_pgnn(&baseline_nn_config(cfg), dataset, seed)
}

/// Closed-loop rollout: the prior runs open loop from `x0`; the network's
/// own (un-standardized) prediction is fed back as the y_prev block.
/// `u_sequence` must cover at least `n_steps` samples; y_hat_0 := x0.
pub fn predict_rollout(
    model: &PgnnModel,
    u_sequence: &[f64],
    x0: &[f64],
    n_steps: usize,
) -> Result<Trajectory> {
    let l = model.target_std.mean.len();
    if x0.len() != l {
        return Err(Error::Shape(format!(
            "rollout: x0 has {} channels, model predicts {}",
            x0.len(),
            l
        )));
    }
    if u_sequence.len() < n_steps {
        return Err(Error::Shape(format!(
            "rollout: {} input samples for {} steps",
            u_sequence.len(),
            n_steps
        )));
    }
    let prior = model.prior.model()?;
    let phy = integrate(&prior, x0, &u_lookup(u_sequence, model.dt), model.dt, n_steps)?;

    let mut x = DMatrix::zeros(n_steps + 1, l);
    let mut u_used = Vec::with_capacity(n_steps + 1);
    let mut y_prev = x0.to_vec();
    for c in 0..l {
        x[(0, c)] = x0[c];
    }
    u_used.push(u_sequence[0]);
    for k in 1..=n_steps {
        let u_k = u_sequence[k.min(u_sequence.len() - 1)];
        let x_phy: Vec<f64> = (0..l).map(|c| phy.x[(k, c)]).collect();
        let feats = model.input_std.apply_vec(&model.layout.features(u_k, &x_phy, &y_prev));
        let col = DMatrix::from_vec(feats.len(), 1, feats);
        let out = model.net.forward(&col)?;
        let y: Vec<f64> = model.target_std.invert_vec(out.column(0).as_slice());
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: k,
                detail: "rollout produced a non-finite prediction".into(),
            });
        }
        for c in 0..l {
            x[(k, c)] = y[c];
        }
        u_used.push(u_k);
        y_prev = y;
    }
    Ok(Trajectory {
        t: (0..=n_steps).map(|k| k as f64 * model.dt).collect(),
        u: u_used,
        x,
    })
}

/// Mean channel-1 rollout RMSE over contiguous validation runs, mirroring
/// `sindy::val_rollout_rmse` so restart selection scores both families alike.
pub fn val_rollout_rmse(model: &PgnnModel, d: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    let mut n_runs = 0usize;
    for range in d.trajectory_ranges() {
        let recs = &d.records[range.clone()];
        let mut start = None;
        for (i, r) in recs.iter().chain(std::iter::once(&recs[0])).enumerate() {
            let in_val = i < recs.len() && r.split == Split::Val;
            match (start, in_val) {
                (None, true) => start = Some(i),
                (Some(s), false) => {
                    let run = &recs[s..i];
                    if run.len() >= 2 {
                        let u: Vec<f64> = run.iter().map(|r| r.u).collect();
                        let traj = predict_rollout(model, &u, &run[0].y, run.len() - 1)?;
                        let mut sq = 0.0;
                        for (k, r) in run.iter().enumerate() {
                            let e = traj.x[(k, 0)] - r.y[0];
                            sq += e * e;
                        }
                        total += (sq / run.len() as f64).sqrt();
                        n_runs += 1;
                    }
                    start = None;
                }
                _ => {}
            }
        }
    }
    if n_runs == 0 {
        return Err(Error::Split("no validation runs of length >= 2".into()));
    }
    Ok(total / n_runs as f64)
}
