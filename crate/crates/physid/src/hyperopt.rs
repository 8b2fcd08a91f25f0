//! Hyperparameter search (random or Gaussian-process surrogate with
//! expected improvement) and the lambda_phy Pareto sweep.
//!
//! The surrogate strategy is deliberately small: isotropic squared
//! exponential kernel on configs normalized to the unit cube (length scale
//! 0.2, noise 1e-6) and the expected-improvement maximizer over 512 random
//! candidates instead of an acquisition-optimization subsystem.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datakit::Dataset;
use crate::error::{Error, Result};
use crate::nnet::History;
use crate::pgnn::{train_pgnn, PgnnConfig};

/// Domain of one searchable parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ParamDomain {
    /// Inclusive integer range.
    IntRange { lo: i64, hi: i64 },
    /// Log-uniform real on [lo, hi], lo > 0.
    LogUniform { lo: f64, hi: f64 },
    /// Uniform real on [lo, hi].
    Uniform { lo: f64, hi: f64 },
    Categorical { options: Vec<String> },
}

impl ParamDomain {
    fn validate(&self, name: &str) -> Result<()> {
        let ok = match self {
            ParamDomain::IntRange { lo, hi } => lo <= hi,
            ParamDomain::LogUniform { lo, hi } => *lo > 0.0 && lo <= hi,
            ParamDomain::Uniform { lo, hi } => lo <= hi,
            ParamDomain::Categorical { options } => !options.is_empty(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("search space: invalid domain for '{name}'")))
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> ParamValue {
        match self {
            ParamDomain::IntRange { lo, hi } => ParamValue::Int(rng.gen_range(*lo..=*hi)),
            ParamDomain::LogUniform { lo, hi } => {
                ParamValue::Real((rng.gen_range(lo.ln()..=hi.ln())).exp())
            }
            ParamDomain::Uniform { lo, hi } => ParamValue::Real(rng.gen_range(*lo..=*hi)),
            ParamDomain::Categorical { options } => {
                ParamValue::Cat(options[rng.gen_range(0..options.len())].clone())
            }
        }
    }

    fn contains(&self, v: &ParamValue) -> bool {
        match (self, v) {
            (ParamDomain::IntRange { lo, hi }, ParamValue::Int(x)) => lo <= x && x <= hi,
            (ParamDomain::LogUniform { lo, hi }, ParamValue::Real(x))
            | (ParamDomain::Uniform { lo, hi }, ParamValue::Real(x)) => lo <= x && x <= hi,
            (ParamDomain::Categorical { options }, ParamValue::Cat(c)) => options.contains(c),
            _ => false,
        }
    }

    /// Map a value into [0, 1] for the surrogate.
    fn normalize(&self, v: &ParamValue) -> f64 {
        match (self, v) {
            (ParamDomain::IntRange { lo, hi }, ParamValue::Int(x)) => {
                if hi == lo {
                    0.5
                } else {
                    (x - lo) as f64 / (hi - lo) as f64
                }
            }
            (ParamDomain::LogUniform { lo, hi }, ParamValue::Real(x)) => {
                if hi == lo {
                    0.5
                } else {
                    (x.ln() - lo.ln()) / (hi.ln() - lo.ln())
                }
            }
            (ParamDomain::Uniform { lo, hi }, ParamValue::Real(x)) => {
                if hi == lo {
                    0.5
                } else {
                    (x - lo) / (hi - lo)
                }
            }
            (ParamDomain::Categorical { options }, ParamValue::Cat(c)) => {
                let idx = options.iter().position(|o| o == c).unwrap_or(0);
                if options.len() == 1 {
                    0.5
                } else {
                    idx as f64 / (options.len() - 1) as f64
                }
            }
            _ => 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Real(f64),
    Cat(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(v) => Some(*v as f64),
            ParamValue::Real(v) => Some(*v),
            ParamValue::Cat(_) => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Cat(c) => Some(c),
            _ => None,
        }
    }
}

pub type Config = BTreeMap<String, ParamValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub params: BTreeMap<String, ParamDomain>,
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.params.is_empty() {
            return Err(Error::Config("search space: no parameters".into()));
        }
        for (name, dom) in &self.params {
            dom.validate(name)?;
        }
        Ok(())
    }

    /// Network / training space used by the benchmarks: hidden width and
    /// depth, learning rate, lambda_phy, activation.
    pub fn pgnn_default() -> Self {
        let mut params = BTreeMap::new();
        params.insert("hidden_width".into(), ParamDomain::IntRange { lo: 2, hi: 128 });
        params.insert("hidden_layers".into(), ParamDomain::IntRange { lo: 1, hi: 3 });
        params.insert("learning_rate".into(), ParamDomain::LogUniform { lo: 1e-4, hi: 1e-2 });
        params.insert("lambda_phy".into(), ParamDomain::Uniform { lo: 0.01, hi: 0.99 });
        params.insert(
            "activation".into(),
            ParamDomain::Categorical { options: vec!["tanh".into(), "relu".into()] },
        );
        Self { params }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Config {
        self.params.iter().map(|(k, d)| (k.clone(), d.sample(rng))).collect()
    }

    pub fn contains(&self, cfg: &Config) -> bool {
        cfg.len() == self.params.len()
            && cfg.iter().all(|(k, v)| self.params.get(k).is_some_and(|d| d.contains(v)))
    }

    /// Normalized coordinates in declaration (BTreeMap) order.
    pub fn normalize(&self, cfg: &Config) -> Vec<f64> {
        self.params
            .iter()
            .map(|(k, d)| cfg.get(k).map(|v| d.normalize(v)).unwrap_or(0.5))
            .collect()
    }
}

/// Outcome of one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    /// Validation objective (closed-loop rollout RMSE by convention).
    pub objective: f64,
    pub l_error: f64,
    pub l_phy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub config: Config,
    pub seed: u64,
    /// None when the trial failed or the objective was non-finite.
    pub outcome: Option<TrialOutcome>,
    pub error: Option<String>,
}

impl TrialRecord {
    pub fn is_valid(&self) -> bool {
        self.outcome.is_some_and(|o| o.objective.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    Surrogate,
}

const SURROGATE_CANDIDATES: usize = 512;
const GP_LENGTH_SCALE: f64 = 0.2;
const GP_NOISE: f64 = 1e-6;

/// Abramowitz-Stegun 7.1.26 rational approximation, |error| < 1.5e-7.
pub fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn se_kernel(a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 / (2.0 * GP_LENGTH_SCALE * GP_LENGTH_SCALE)).exp()
}

/// GP posterior over observed (points, values); predicts mean and variance.
struct Surrogate {
    points: Vec<Vec<f64>>,
    chol: Cholesky<f64, nalgebra::Dyn>,
    alpha: DVector<f64>,
    y_mean: f64,
}

impl Surrogate {
    fn fit(points: Vec<Vec<f64>>, values: &[f64]) -> Option<Self> {
        let n = points.len();
        let y_mean = values.iter().sum::<f64>() / n as f64;
        let k = DMatrix::from_fn(n, n, |i, j| {
            se_kernel(&points[i], &points[j]) + if i == j { GP_NOISE } else { 0.0 }
        });
        let chol = Cholesky::new(k)?;
        let centered = DVector::from_fn(n, |i, _| values[i] - y_mean);
        let alpha = chol.solve(&centered);
        Some(Self { points, chol, alpha, y_mean })
    }

    fn predict(&self, x: &[f64]) -> (f64, f64) {
        let n = self.points.len();
        let kx = DVector::from_fn(n, |i, _| se_kernel(&self.points[i], x));
        let mean = self.y_mean + kx.dot(&self.alpha);
        let v = self.chol.solve(&kx);
        let var = (1.0 + GP_NOISE - kx.dot(&v)).max(1e-12);
        (mean, var)
    }

    /// Expected improvement below the incumbent (minimization).
    fn expected_improvement(&self, x: &[f64], best: f64) -> f64 {
        let (mean, var) = self.predict(x);
        let sigma = var.sqrt();
        let z = (best - mean) / sigma;
        (best - mean) * normal_cdf(z) + sigma * normal_pdf(z)
    }
}

/// Minimize an objective over the space. Deterministic given `seed`; each
/// trial gets the derived seed `seed + index`. Returns (best valid trial,
/// all trials).
pub fn search(
    space: &SearchSpace,
    budget: usize,
    strategy: Strategy,
    seed: u64,
    objective: &mut dyn FnMut(&Config, u64) -> Result<TrialOutcome>,
) -> Result<(TrialRecord, Vec<TrialRecord>)> {
    space.validate()?;
    if budget == 0 {
        return Err(Error::Config("search: budget must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_init = match strategy {
        Strategy::Random => budget,
        Strategy::Surrogate => budget.min(5),
    };
    let mut records: Vec<TrialRecord> = Vec::with_capacity(budget);
    for index in 0..budget {
        let config = if index < n_init {
            space.sample(&mut rng)
        } else {
            propose_surrogate(space, &records, &mut rng)
        };
        debug_assert!(space.contains(&config));
        let trial_seed = seed.wrapping_add(index as u64);
        let record = match objective(&config, trial_seed) {
            Ok(outcome) if outcome.objective.is_finite() => TrialRecord {
                index,
                config,
                seed: trial_seed,
                outcome: Some(outcome),
                error: None,
            },
            Ok(outcome) => TrialRecord {
                index,
                config,
                seed: trial_seed,
                outcome: None,
                error: Some(format!("non-finite objective {}", outcome.objective)),
            },
            Err(e) => TrialRecord {
                index,
                config,
                seed: trial_seed,
                outcome: None,
                error: Some(e.to_string()),
            },
        };
        records.push(record);
    }
    let best = records
        .iter()
        .filter(|r| r.is_valid())
        .min_by(|a, b| {
            a.outcome
                .unwrap()
                .objective
                .partial_cmp(&b.outcome.unwrap().objective)
                .unwrap()
        })
        .cloned()
        .ok_or_else(|| {
            let summary: Vec<String> = records
                .iter()
                .filter_map(|r| r.error.as_ref())
                .map(|e| e.clone())
                .collect();
            Error::Domain(format!("search: all {} trials failed: {}", budget, summary.join("; ")))
        })?;
    Ok((best, records))
}

/// Expected-improvement maximizer over a random candidate pool; falls back
/// to plain sampling when the GP cannot be fit.
fn propose_surrogate(space: &SearchSpace, records: &[TrialRecord], rng: &mut ChaCha8Rng) -> Config {
    let valid: Vec<&TrialRecord> = records.iter().filter(|r| r.is_valid()).collect();
    if valid.len() < 2 {
        return space.sample(rng);
    }
    let points: Vec<Vec<f64>> = valid.iter().map(|r| space.normalize(&r.config)).collect();
    let values: Vec<f64> = valid.iter().map(|r| r.outcome.unwrap().objective).collect();
    let best = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let Some(gp) = Surrogate::fit(points, &values) else {
        return space.sample(rng);
    };
    let mut best_cfg = None;
    let mut best_ei = f64::NEG_INFINITY;
    for _ in 0..SURROGATE_CANDIDATES {
        let cand = space.sample(rng);
        let ei = gp.expected_improvement(&space.normalize(&cand), best);
        if ei > best_ei {
            best_ei = ei;
            best_cfg = Some(cand);
        }
    }
    best_cfg.unwrap_or_else(|| space.sample(rng))
}

/// Serialize trials as JSON lines, one record per line.
pub fn trials_to_jsonl(records: &[TrialRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// One point of the lambda_phy sweep (validation loss components at the
/// best-validation epoch).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub lambda_phy: f64,
    pub l_error: f64,
    pub l_phy: f64,
    pub nondominated: bool,
    pub error: Option<String>,
}

/// Train one PGNN-L per grid value with identical seed/architecture and
/// flag the non-dominated subset of (L_error, L_phy). Failed points are
/// recorded, not fatal.
pub fn pareto_sweep(
    lambda_grid: &[f64],
    fixed: &PgnnConfig,
    dataset: &Dataset,
    seed: u64,
) -> Result<Vec<ParetoPoint>> {
    if lambda_grid.is_empty() {
        return Err(Error::Config("pareto_sweep: empty grid".into()));
    }
    if lambda_grid.iter().any(|l| !(0.0..=1.0).contains(l)) {
        return Err(Error::Config("pareto_sweep: lambda values must lie in [0, 1]".into()));
    }
    let mut grid: Vec<f64> = Vec::new();
    for &l in lambda_grid {
        if grid.iter().any(|g| (g - l).abs() < 1e-12) {
            log::warn!("pareto_sweep: duplicate lambda {l} dropped");
        } else {
            grid.push(l);
        }
    }
    let mut points: Vec<ParetoPoint> = grid
        .iter()
        .map(|&lambda_phy| {
            let cfg = PgnnConfig { lambda_phy, ..fixed.clone() };
            match train_pgnn(&cfg, dataset, seed) {
                Ok((_, history)) => match best_epoch(&history) {
                    Some(h) => ParetoPoint {
                        lambda_phy,
                        l_error: h.val_error,
                        l_phy: h.val_phy,
                        nondominated: false,
                        error: None,
                    },
                    None => failed_point(lambda_phy, "empty training history"),
                },
                Err(e) => failed_point(lambda_phy, &e.to_string()),
            }
        })
        .collect();
    flag_nondominated(&mut points);
    Ok(points)
}

fn failed_point(lambda_phy: f64, msg: &str) -> ParetoPoint {
    ParetoPoint {
        lambda_phy,
        l_error: f64::NAN,
        l_phy: f64::NAN,
        nondominated: false,
        error: Some(msg.to_string()),
    }
}

fn best_epoch(history: &History) -> Option<&crate::nnet::EpochStats> {
    history
        .iter()
        .min_by(|a, b| a.val_total.partial_cmp(&b.val_total).unwrap_or(std::cmp::Ordering::Equal))
}

/// A point is non-dominated iff no other point is <= in both coordinates
/// and < in at least one.
fn flag_nondominated(points: &mut [ParetoPoint]) {
    let coords: Vec<Option<(f64, f64)>> = points
        .iter()
        .map(|p| (p.error.is_none() && p.l_error.is_finite() && p.l_phy.is_finite())
            .then_some((p.l_error, p.l_phy)))
        .collect();
    for i in 0..points.len() {
        let Some((ei, pi)) = coords[i] else {
            points[i].nondominated = false;
            continue;
        };
        let dominated = coords.iter().enumerate().any(|(j, c)| {
            j != i
                && c.is_some_and(|(ej, pj)| {
                    ej <= ei && pj <= pi && (ej < ei || pj < pi)
                })
        });
        points[i].nondominated = !dominated;
    }
}

/// CSV per the sweep interface: `lambda_phy,L_error,L_phy,nondominated`.
pub fn pareto_to_csv(points: &[ParetoPoint]) -> String {
    let mut out = String::from("lambda_phy,L_error,L_phy,nondominated\n");
    for p in points {
        out.push_str(&format!(
            "{:.6},{:.16e},{:.16e},{}\n",
            p.lambda_phy, p.l_error, p.l_phy, p.nondominated
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::{split_60_20_20, Excitation, ExcitationKind, SplitMode};
    use crate::nnet::TrainOptions;
    use crate::pgnn::InputLayout;
    use crate::plants::PlantSpec;

    fn toy_space() -> SearchSpace {
        let mut params = BTreeMap::new();
        params.insert("x".to_string(), ParamDomain::Uniform { lo: 0.0, hi: 1.0 });
        SearchSpace { params }
    }

    fn quadratic(cfg: &Config, _seed: u64) -> Result<TrialOutcome> {
        let x = cfg["x"].as_f64().unwrap();
        let v = (x - 0.3) * (x - 0.3);
        Ok(TrialOutcome { objective: v, l_error: v, l_phy: 0.0 })
    }

    #[test]
    fn erf_reference_values() {
        assert!(erf(0.0).abs() < 1.5e-7);
        assert!((erf(1.0) - 0.8427007929).abs() < 1e-6);
        assert!((erf(-1.0) + 0.8427007929).abs() < 1e-6);
        assert!((erf(3.0) - 0.9999779095).abs() < 1e-6);
    }

    #[test]
    fn budget_one_returns_single_trial() {
        let space = toy_space();
        let (best, records) =
            search(&space, 1, Strategy::Random, 0, &mut quadratic).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(best.index, 0);
        assert_eq!(best.config, records[0].config);
    }

    #[test]
    fn surrogate_finds_quadratic_optimum() {
        let space = toy_space();
        let (best, records) =
            search(&space, 30, Strategy::Surrogate, 42, &mut quadratic).unwrap();
        assert_eq!(records.len(), 30);
        let x = best.config["x"].as_f64().unwrap();
        assert!((x - 0.3).abs() < 0.05, "best x = {x}");
    }

    #[test]
    fn same_seed_same_trials() {
        let space = SearchSpace::pgnn_default();
        let mut obj = |cfg: &Config, _s: u64| {
            let v = cfg["lambda_phy"].as_f64().unwrap();
            Ok(TrialOutcome { objective: v, l_error: v, l_phy: v })
        };
        let (_, a) = search(&space, 12, Strategy::Surrogate, 7, &mut obj).unwrap();
        let (_, b) = search(&space, 12, Strategy::Surrogate, 7, &mut obj).unwrap();
        let ca: Vec<_> = a.iter().map(|r| r.config.clone()).collect();
        let cb: Vec<_> = b.iter().map(|r| r.config.clone()).collect();
        assert_eq!(ca, cb);
    }

    #[test]
    fn samples_stay_inside_domains() {
        let space = SearchSpace::pgnn_default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let cfg = space.sample(&mut rng);
            assert!(space.contains(&cfg));
            let lr = cfg["learning_rate"].as_f64().unwrap();
            assert!((1e-4..=1e-2).contains(&lr));
            let w = match cfg["hidden_width"] {
                ParamValue::Int(v) => v,
                _ => panic!("width not an int"),
            };
            assert!((2..=128).contains(&w));
        }
    }

    #[test]
    fn random_sampling_is_coarsely_uniform() {
        // chi-squared on 10 bins, 1000 samples; critical value for
        // p = 0.01 at 9 dof is 21.67
        let space = toy_space();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut bins = [0usize; 10];
        for _ in 0..1000 {
            let x = space.sample(&mut rng)["x"].as_f64().unwrap();
            bins[((x * 10.0) as usize).min(9)] += 1;
        }
        let expected = 100.0;
        let chi2: f64 =
            bins.iter().map(|&b| (b as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 21.67, "chi2 = {chi2}, bins {bins:?}");
    }

    #[test]
    fn all_failures_is_an_error() {
        let space = toy_space();
        let mut obj =
            |_: &Config, _: u64| -> Result<TrialOutcome> { Err(Error::Domain("boom".into())) };
        assert!(search(&space, 3, Strategy::Random, 0, &mut obj).is_err());
    }

    #[test]
    fn failed_trials_are_skipped_not_fatal() {
        let space = toy_space();
        let mut calls = 0usize;
        let mut obj = |cfg: &Config, s: u64| {
            calls += 1;
            if calls % 2 == 0 {
                Err(Error::Domain("flaky".into()))
            } else {
                quadratic(cfg, s)
            }
        };
        let (best, records) = search(&space, 6, Strategy::Random, 1, &mut obj).unwrap();
        assert_eq!(records.len(), 6);
        assert!(best.is_valid());
        assert_eq!(records.iter().filter(|r| r.error.is_some()).count(), 3);
    }

    #[test]
    fn jsonl_one_line_per_trial() {
        let space = toy_space();
        let (_, records) = search(&space, 4, Strategy::Random, 0, &mut quadratic).unwrap();
        let jsonl = trials_to_jsonl(&records).unwrap();
        assert_eq!(jsonl.lines().count(), 4);
        let first: TrialRecord = serde_json::from_str(jsonl.lines().next().unwrap()).unwrap();
        assert_eq!(first, records[0]);
    }

    #[test]
    fn nondominated_flag_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut points: Vec<ParetoPoint> = (0..40)
            .map(|_| ParetoPoint {
                lambda_phy: 0.5,
                l_error: rng.gen_range(0.0..1.0),
                l_phy: rng.gen_range(0.0..1.0),
                nondominated: false,
                error: None,
            })
            .collect();
        flag_nondominated(&mut points);
        assert!(points.iter().any(|p| p.nondominated));
        for i in 0..points.len() {
            let dominated = (0..points.len()).any(|j| {
                j != i
                    && points[j].l_error <= points[i].l_error
                    && points[j].l_phy <= points[i].l_phy
                    && (points[j].l_error < points[i].l_error
                        || points[j].l_phy < points[i].l_phy)
            });
            assert_eq!(points[i].nondominated, !dominated, "point {i}");
        }
    }

    fn tiny_golf_dataset() -> Dataset {
        let plant = PlantSpec::golf_table().model().unwrap();
        let e = Excitation {
            kind: ExcitationKind::Sine { freq: 0.5 },
            amplitude: 0.35,
            offset: 0.0,
            start: 0.0,
        };
        let mut d =
            crate::datakit::simulate_measurement(&plant, &e, 5e-3, 150, &[1e-3, 1e-3], 3).unwrap();
        split_60_20_20(&mut d, SplitMode::Contiguous, 0).unwrap();
        d
    }

    fn tiny_cfg() -> PgnnConfig {
        PgnnConfig {
            prior: PlantSpec::golf_table(),
            degradation: None,
            layout: InputLayout::default(),
            hidden: vec![6],
            activation: Default::default(),
            lambda_phy: 0.5,
            dt: 5e-3,
            train: TrainOptions { epochs: 8, batch_size: 32, patience: 8, ..Default::default() },
        }
    }

    #[test]
    fn pareto_sweep_dedupes_and_flags() {
        let d = tiny_golf_dataset();
        let points =
            pareto_sweep(&[0.1, 0.5, 0.1, 0.9], &tiny_cfg(), &d, 0).unwrap();
        assert_eq!(points.len(), 3); // duplicate dropped
        assert!(points.iter().any(|p| p.nondominated));
        assert!(points.iter().all(|p| p.error.is_none()));
        let csv = pareto_to_csv(&points);
        assert!(csv.starts_with("lambda_phy,L_error,L_phy,nondominated\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn pareto_sweep_single_zero_lambda() {
        let d = tiny_golf_dataset();
        let points = pareto_sweep(&[0.0], &tiny_cfg(), &d, 0).unwrap();
        assert_eq!(points.len(), 1);
        assert!(points[0].nondominated);
        assert!(points[0].l_phy.is_finite()); // physics term still reported
    }

    #[test]
    fn pareto_sweep_rejects_bad_grid() {
        let d = tiny_golf_dataset();
        assert!(pareto_sweep(&[], &tiny_cfg(), &d, 0).is_err());
        assert!(pareto_sweep(&[1.2], &tiny_cfg(), &d, 0).is_err());
    }
}
