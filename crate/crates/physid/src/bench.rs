//! End-to-end benchmark harness: synthetic golf and valve studies comparing
//! {prior physical model, plain NN, SINDYc, PGNN-L} on a held-out
//! excitation, plus the reduced-data study and physics-consistency
//! statistics.
//!
//! All methods in one report consume the same training records, the same
//! evaluation input and the same dt; reports are a pure function of
//! (config, seeds) and carry a config hash for exact re-runs.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datakit::{
    atomic_write, generate_signal, simulate_measurement, split_60_20_20, Dataset, Excitation,
    ExcitationKind, SplitMode,
};
use crate::error::{Error, Result};
use crate::nnet::{Activation, TrainOptions};
use crate::pgnn::{self, InputLayout, PgnnConfig};
use crate::physloss::{physics_loss, EnergyModel};
use crate::plants::{
    degrade_spec, integrate, Degradation, PlantKind, PlantSpec, Trajectory, ValveLimits,
};
use crate::sindy::{self, LibrarySpec};

/// Network and training knobs shared by the NN baseline and PGNN-L.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub lambda_phy: f64,
    pub train: TrainOptions,
    /// Independent trainings per method; the net with the lowest
    /// validation-rollout RMSE is kept.
    #[serde(default = "default_restarts")]
    pub restarts: usize,
}

fn default_restarts() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SindyConfig {
    pub library: LibrarySpec,
    pub lambda_grid: Vec<f64>,
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// The data-generating plant.
    pub plant: PlantSpec,
    /// How the prior physical model deviates from the truth.
    pub degradation: Degradation,
    pub excitations: Vec<Excitation>,
    /// Held-out excitation; must not appear in the training suite.
    pub eval_excitation: Excitation,
    pub dt: f64,
    /// Steps per training trajectory.
    pub n_steps: usize,
    pub eval_steps: usize,
    pub noise_std: Vec<f64>,
    #[serde(default)]
    pub split_mode: SplitMode,
    pub seed: u64,
    pub net: NetConfig,
    pub sindy: SindyConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        if self.excitations.is_empty() {
            return Err(Error::Config("benchmark: no training excitations".into()));
        }
        if self.excitations.contains(&self.eval_excitation) {
            return Err(Error::Config(
                "benchmark: evaluation excitation appears in the training suite".into(),
            ));
        }
        if !(self.dt > 0.0) || self.n_steps < 2 || self.eval_steps < 2 {
            return Err(Error::Config("benchmark: bad dt or horizon".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        format!("{:x}", h.finalize())
    }

    /// Synthetic golf study: six sine/step/chirp trajectories at 1 kHz,
    /// friction parameters of the prior halved, held-out chirp.
    pub fn golf_default() -> Self {
        let sine = |freq: f64, amplitude: f64| Excitation {
            kind: ExcitationKind::Sine { freq },
            amplitude,
            offset: 0.0,
            start: 0.0,
        };
        let step = |amplitude: f64, start: f64| Excitation {
            kind: ExcitationKind::Step,
            amplitude,
            offset: 0.0,
            start,
        };
        let chirp = |f0: f64, f1: f64, amplitude: f64| Excitation {
            kind: ExcitationKind::Chirp { f0, f1 },
            amplitude,
            offset: 0.0,
            start: 0.0,
        };
        let mut degradation = Degradation::default();
        degradation.scale.insert("m".into(), 0.95);
        degradation.scale.insert("mu".into(), 0.5);
        degradation.scale.insert("d".into(), 0.5);
        Self {
            plant: PlantSpec::golf_table(),
            degradation,
            excitations: vec![
                sine(0.4, 0.35),
                sine(0.7, 0.25),
                step(0.4, 0.3),
                step(-0.3, 0.5),
                chirp(0.2, 1.2, 0.3),
                chirp(0.5, 1.5, 0.2),
            ],
            eval_excitation: chirp(0.3, 1.0, 0.32),
            dt: 1e-3,
            n_steps: 3000,
            eval_steps: 3000,
            noise_std: vec![1e-3, 2e-3],
            split_mode: SplitMode::Contiguous,
            seed: 0,
            net: NetConfig {
                hidden: vec![64],
                activation: Activation::Tanh,
                lambda_phy: 0.6,
                train: TrainOptions {
                    epochs: 600,
                    batch_size: 256,
                    patience: 600,
                    ..Default::default()
                },
                restarts: 3,
            },
            sindy: SindyConfig {
                library: LibrarySpec::golf_default(),
                lambda_grid: vec![1e-3, 1e-2, 1e-1],
                max_iter: 10,
            },
        }
    }

    fn valve_base() -> Self {
        let step = |amplitude: f64| Excitation {
            kind: ExcitationKind::Step,
            amplitude,
            offset: 0.0,
            start: 0.05,
        };
        Self {
            plant: PlantSpec::valve_table_limited(),
            degradation: Degradation::default(),
            excitations: (0..10).map(|i| step(0.5 + 0.45 * i as f64)).collect(),
            eval_excitation: step(5.0),
            dt: 5e-4,
            n_steps: 500,
            eval_steps: 600,
            noise_std: vec![2e-6, 2e-4],
            split_mode: SplitMode::Contiguous,
            seed: 0,
            net: NetConfig {
                hidden: vec![16],
                activation: Activation::Tanh,
                lambda_phy: 0.3,
                train: TrainOptions {
                    epochs: 40,
                    batch_size: 256,
                    patience: 40,
                    ..Default::default()
                },
                restarts: 3,
            },
            sindy: SindyConfig {
                library: LibrarySpec::valve_default(),
                lambda_grid: vec![0.0, 1e-6],
                max_iter: 10,
            },
        }
    }

    /// Valve study, prior variant A: limits unknown to the prior.
    pub fn valve_default_a() -> Self {
        let mut cfg = Self::valve_base();
        cfg.degradation.drop.push("limits".into());
        cfg
    }

    /// Valve study, prior variant B: limits estimated at 80% of the truth.
    pub fn valve_default_b() -> Self {
        let mut cfg = Self::valve_base();
        let limits = match &cfg.plant {
            PlantSpec::Valve { params, .. } => params.limits.expect("limited valve table"),
            _ => unreachable!(),
        };
        cfg.degradation.limits =
            Some(ValveLimits { v_max: 0.8 * limits.v_max, a_max: 0.8 * limits.a_max });
        cfg
    }
}

/// Root-mean-squared error on one channel (default: channel 1, the
/// position/angle) between two time-major state matrices.
pub fn rmse_channel(pred: &DMatrix<f64>, reference: &DMatrix<f64>, channel: usize) -> Result<f64> {
    if pred.nrows() != reference.nrows() || pred.ncols() != reference.ncols() {
        return Err(Error::Shape(format!(
            "rmse: prediction is {:?}, reference {:?}",
            pred.shape(),
            reference.shape()
        )));
    }
    if channel >= pred.ncols() {
        return Err(Error::Shape(format!("rmse: no channel {channel}")));
    }
    let n = pred.nrows();
    let sq: f64 = (0..n)
        .map(|k| {
            let e = pred[(k, channel)] - reference[(k, channel)];
            e * e
        })
        .sum();
    Ok((sq / n as f64).sqrt())
}

pub fn rmse(pred: &DMatrix<f64>, reference: &DMatrix<f64>) -> Result<f64> {
    rmse_channel(pred, reference, 0)
}

/// All-channel variant: RMSE over every entry.
pub fn rmse_all(pred: &DMatrix<f64>, reference: &DMatrix<f64>) -> Result<f64> {
    if pred.shape() != reference.shape() {
        return Err(Error::Shape("rmse: shape mismatch".into()));
    }
    let sq: f64 = pred.iter().zip(reference.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sq / pred.len() as f64).sqrt())
}

/// Per-step |energy residual| statistics of a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub mean_abs: f64,
    pub max_abs: f64,
    pub p50: f64,
    pub p95: f64,
}

/// Energy-residual statistics of a predicted trajectory in physical units.
pub fn physics_consistency_report(
    traj: &Trajectory,
    em: &dyn EnergyModel,
    dt: f64,
) -> Result<ResidualStats> {
    let (_, residuals) = physics_loss(em, &traj.x.transpose(), &traj.u, dt)?;
    let mut abs: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
    abs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pct = |p: f64| abs[((p * (abs.len() - 1) as f64).round() as usize).min(abs.len() - 1)];
    Ok(ResidualStats {
        mean_abs: abs.iter().sum::<f64>() / abs.len() as f64,
        max_abs: *abs.last().unwrap(),
        p50: pct(0.50),
        p95: pct(0.95),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub rmse_ch1: Option<f64>,
    pub rmse_all: Option<f64>,
    pub residuals: Option<ResidualStats>,
    /// Hidden neuron count for the network methods.
    pub n_neurons: Option<usize>,
    pub lambda_phy: Option<f64>,
    /// max(0, max |x2| - v_max) against the true velocity limit, when the
    /// true plant has limits.
    pub velocity_violation: Option<f64>,
    pub error: Option<String>,
}

impl MethodResult {
    fn failed(method: &str, err: &Error) -> Self {
        Self {
            method: method.into(),
            rmse_ch1: None,
            rmse_all: None,
            residuals: None,
            n_neurons: None,
            lambda_phy: None,
            velocity_violation: None,
            error: Some(err.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub plant: String,
    pub config_hash: String,
    pub seed: u64,
    pub methods: Vec<MethodResult>,
}

impl Report {
    pub fn method(&self, name: &str) -> Option<&MethodResult> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!(
            "# Benchmark report: {}\n\nseed {}, config `{}`\n\n",
            self.plant, self.seed, self.config_hash
        );
        out.push_str("| method | RMSE (ch 1) | RMSE (all) | mean |residual| | max |residual| | neurons | lambda_phy | v-violation | error |\n");
        out.push_str("|---|---|---|---|---|---|---|---|---|\n");
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4e}")).unwrap_or_else(|| "-".into());
        for m in &self.methods {
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
                m.method,
                fmt(m.rmse_ch1),
                fmt(m.rmse_all),
                fmt(m.residuals.map(|r| r.mean_abs)),
                fmt(m.residuals.map(|r| r.max_abs)),
                m.n_neurons.map(|n| n.to_string()).unwrap_or_else(|| "-".into()),
                fmt(m.lambda_phy),
                fmt(m.velocity_violation),
                m.error.as_deref().unwrap_or("-"),
            ));
        }
        out
    }
}

/// Report plus everything needed to plot or re-score it.
#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub report: Report,
    /// Noise-free true-plant evaluation trajectory.
    pub reference: Trajectory,
    pub rollouts: BTreeMap<String, Trajectory>,
    pub dataset: Dataset,
}

impl BenchOutcome {
    /// Write report.json, report.md, reference.csv and per-method rollout
    /// CSVs into a directory.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        atomic_write(&dir.join("report.json"), &serde_json::to_string_pretty(&self.report)?)?;
        atomic_write(&dir.join("report.md"), &self.report.to_markdown())?;
        atomic_write(&dir.join("reference.csv"), &self.reference.to_csv())?;
        for (name, traj) in &self.rollouts {
            atomic_write(&dir.join(format!("rollout_{name}.csv")), &traj.to_csv())?;
        }
        Ok(())
    }
}

fn zoh(u: &[f64], dt: f64) -> impl Fn(f64) -> f64 + '_ {
    move |t: f64| {
        let idx = (t / dt).round() as usize;
        u[idx.min(u.len() - 1)]
    }
}

/// Generate the training dataset for a config: one trajectory per
/// excitation, seeded noise, 60-20-20 split.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let plant = cfg.plant.model()?;
    let mut dataset: Option<Dataset> = None;
    for (i, e) in cfg.excitations.iter().enumerate() {
        let part = simulate_measurement(
            &plant,
            e,
            cfg.dt,
            cfg.n_steps,
            &cfg.noise_std,
            cfg.seed.wrapping_add(i as u64),
        )?;
        match &mut dataset {
            None => dataset = Some(part),
            Some(d) => d.extend(part)?,
        }
    }
    let mut d = dataset.expect("at least one excitation");
    split_60_20_20(&mut d, cfg.split_mode, cfg.seed)?;
    Ok(d)
}

/// True velocity limit of the data-generating plant, if any.
fn true_v_max(spec: &PlantSpec) -> Option<f64> {
    match spec {
        PlantSpec::Valve { params, .. } => params.limits.map(|l| l.v_max),
        _ => None,
    }
}

fn velocity_violation(traj: &Trajectory, v_max: f64) -> f64 {
    (0..traj.len())
        .map(|k| traj.x[(k, 1)].abs() - v_max)
        .fold(0.0f64, f64::max)
}

struct MethodRun {
    rollout: Trajectory,
    n_neurons: Option<usize>,
    lambda_phy: Option<f64>,
}

/// Train `restarts` nets from offset seeds and keep the one whose rollout over
/// the contiguous validation runs is best. One-step validation loss is a poor
/// proxy for closed-loop quality, so selection scores the rollout directly.
fn train_with_restarts(
    cfg: &ExperimentConfig,
    pgnn_cfg: &PgnnConfig,
    dataset: &Dataset,
    baseline: bool,
) -> Result<pgnn::PgnnModel> {
    let restarts = cfg.net.restarts.max(1);
    let mut best: Option<(f64, pgnn::PgnnModel)> = None;
    let mut last_err = None;
    for r in 0..restarts {
        let seed = cfg.seed.wrapping_add(1000 * r as u64);
        let trained = if baseline {
            pgnn::train_baseline_nn(pgnn_cfg, dataset, seed)
        } else {
            pgnn::train_pgnn(pgnn_cfg, dataset, seed)
        };
        match trained.and_then(|(model, _)| {
            let score = pgnn::val_rollout_rmse(&model, dataset)?;
            Ok((score, model))
        }) {
            Ok((score, model)) if score.is_finite() => {
                if best.as_ref().map_or(true, |(b, _)| score < *b) {
                    best = Some((score, model));
                }
            }
            Ok(_) => {}
            Err(e) => {
                log::warn!("benchmark: restart {r} failed: {e}");
                last_err = Some(e);
            }
        }
    }
    best.map(|(_, m)| m).ok_or_else(|| {
        last_err.unwrap_or_else(|| Error::Domain("benchmark: every restart diverged".into()))
    })
}

/// Run every method against a shared dataset and evaluation input.
pub fn run_benchmark(cfg: &ExperimentConfig) -> Result<BenchOutcome> {
    cfg.validate()?;
    let dataset = build_dataset(cfg)?;
    run_benchmark_on(cfg, dataset)
}

/// The PGNN-L configuration implied by an experiment config.
pub fn pgnn_config(cfg: &ExperimentConfig) -> Result<PgnnConfig> {
    Ok(PgnnConfig {
        prior: degrade_spec(&cfg.plant, &cfg.degradation)?,
        degradation: Some(cfg.degradation.clone()),
        layout: InputLayout::default(),
        hidden: cfg.net.hidden.clone(),
        activation: cfg.net.activation,
        lambda_phy: cfg.net.lambda_phy,
        dt: cfg.dt,
        train: cfg.net.train.clone(),
    })
}

fn run_benchmark_on(cfg: &ExperimentConfig, dataset: Dataset) -> Result<BenchOutcome> {
    let true_model = cfg.plant.model()?;
    let x0 = vec![0.0; true_model.state_dim];
    let u_eval = generate_signal(&cfg.eval_excitation, cfg.dt, cfg.eval_steps)?;
    let reference = integrate(&true_model, &x0, &zoh(&u_eval, cfg.dt), cfg.dt, cfg.eval_steps)?;

    let pgnn_cfg = pgnn_config(cfg)?;
    let prior_spec = pgnn_cfg.prior.clone();

    // the energy model of the *true* plant scores physical consistency
    let energy = pgnn::energy_for(&cfg.plant)?;
    let v_max = true_v_max(&cfg.plant);

    let runs: Vec<(&str, Result<MethodRun>)> = vec![
        ("phys_model", {
            let prior = prior_spec.model().and_then(|m| {
                integrate(&m, &x0, &zoh(&u_eval, cfg.dt), cfg.dt, cfg.eval_steps)
            });
            prior.map(|rollout| MethodRun { rollout, n_neurons: None, lambda_phy: None })
        }),
        ("nn", {
            train_with_restarts(cfg, &pgnn_cfg, &dataset, true).and_then(|model| {
                let rollout = pgnn::predict_rollout(&model, &u_eval, &x0, cfg.eval_steps)?;
                Ok(MethodRun {
                    rollout,
                    n_neurons: Some(model.net.n_neurons()),
                    lambda_phy: Some(0.0),
                })
            })
        }),
        ("sindyc", {
            sindy::select_lambda(&dataset, &cfg.sindy.library, &cfg.sindy.lambda_grid, cfg.sindy.max_iter)
                .and_then(|model| {
                    let rollout = sindy::sindy_rollout(&model, &u_eval, &x0, cfg.eval_steps)?;
                    Ok(MethodRun { rollout, n_neurons: None, lambda_phy: None })
                })
        }),
        ("pgnn_l", {
            train_with_restarts(cfg, &pgnn_cfg, &dataset, false).and_then(|model| {
                let rollout = pgnn::predict_rollout(&model, &u_eval, &x0, cfg.eval_steps)?;
                Ok(MethodRun {
                    rollout,
                    n_neurons: Some(model.net.n_neurons()),
                    lambda_phy: Some(cfg.net.lambda_phy),
                })
            })
        }),
    ];

    let mut methods = Vec::new();
    let mut rollouts = BTreeMap::new();
    for (name, run) in runs {
        match run {
            Ok(r) => {
                let result = MethodResult {
                    method: name.into(),
                    rmse_ch1: Some(rmse(&r.rollout.x, &reference.x)?),
                    rmse_all: Some(rmse_all(&r.rollout.x, &reference.x)?),
                    residuals: Some(physics_consistency_report(&r.rollout, energy.as_ref(), cfg.dt)?),
                    n_neurons: r.n_neurons,
                    lambda_phy: r.lambda_phy,
                    velocity_violation: v_max.map(|v| velocity_violation(&r.rollout, v)),
                    error: None,
                };
                rollouts.insert(name.to_string(), r.rollout);
                methods.push(result);
            }
            Err(e) => {
                log::warn!("benchmark: method {name} failed: {e}");
                methods.push(MethodResult::failed(name, &e));
            }
        }
    }

    Ok(BenchOutcome {
        report: Report {
            plant: format!("{:?}", cfg.plant.kind()),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            methods,
        },
        reference,
        rollouts,
        dataset,
    })
}

pub fn run_golf_benchmark(cfg: &ExperimentConfig) -> Result<BenchOutcome> {
    if cfg.plant.kind() != PlantKind::Golf {
        return Err(Error::Config("run_golf_benchmark: plant is not golf".into()));
    }
    run_benchmark(cfg)
}

pub fn run_valve_benchmark(cfg: &ExperimentConfig) -> Result<BenchOutcome> {
    if cfg.plant.kind() != PlantKind::Valve {
        return Err(Error::Config("run_valve_benchmark: plant is not valve".into()));
    }
    run_benchmark(cfg)
}

/// Keep the initial `fraction` of every trajectory and re-split.
pub fn reduce_dataset(d: &Dataset, fraction: f64, split_mode: SplitMode, seed: u64) -> Result<Dataset> {
    if !(0.0 < fraction && fraction <= 1.0) {
        return Err(Error::Config(format!("reduce_dataset: fraction {fraction} outside (0, 1]")));
    }
    let mut records = Vec::new();
    for range in d.trajectory_ranges() {
        let n = range.len();
        let keep = ((fraction * n as f64).ceil() as usize).clamp(1, n);
        records.extend(d.records[range.start..range.start + keep].iter().cloned());
    }
    let mut out = Dataset {
        records,
        dt: d.dt,
        seed: d.seed,
        noise_std: d.noise_std.clone(),
        standardizer: None,
    };
    split_60_20_20(&mut out, split_mode, seed)?;
    Ok(out)
}

/// Full-data and transient-only reports (SINDYc and PGNN-L are the methods
/// of interest; the other two are reported unchanged for context).
pub struct ReducedDataStudy {
    pub full: BenchOutcome,
    pub reduced: BenchOutcome,
    pub fraction: f64,
}

pub fn run_reduced_data_study(cfg: &ExperimentConfig, fraction: f64) -> Result<ReducedDataStudy> {
    cfg.validate()?;
    let dataset = build_dataset(cfg)?;
    let reduced = reduce_dataset(&dataset, fraction, cfg.split_mode, cfg.seed)?;
    Ok(ReducedDataStudy {
        full: run_benchmark_on(cfg, dataset)?,
        reduced: run_benchmark_on(cfg, reduced)?,
        fraction,
    })
}

/// Like [`run_benchmark`] but against a caller-supplied dataset, e.g. a
/// reduced variant of one already generated.
pub fn run_benchmark_on_dataset(cfg: &ExperimentConfig, dataset: Dataset) -> Result<BenchOutcome> {
    cfg.validate()?;
    run_benchmark_on(cfg, dataset)
}
