//! Command-line front end: strict JSON configs in, reproducible artifacts
//! out. Every command writes its resolved configuration next to the outputs
//! and goes through `atomic_write`, so re-running with the same config and
//! seed yields byte-identical files.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{self, ExperimentConfig};
use crate::datakit::{atomic_write, generate_signal, Dataset};
use crate::error::{Error, Result};
use crate::hyperopt::{self, ParamValue, SearchSpace, Strategy, TrialOutcome};
use crate::nnet::{Activation, History};
use crate::pgnn::{self, PgnnModel};
use crate::physloss::physics_loss;
use crate::plants::integrate;
use crate::sindy;

#[derive(Debug, Parser)]
#[command(name = "physid", about = "Hybrid physics/data system identification toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the configured excitations and write the dataset artifacts.
    GenData(CommonArgs),
    /// Train one method on the configured dataset.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        method: Method,
    },
    /// Roll a saved checkpoint over the held-out excitation.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint base path as written by `train` (without `.net.json`).
        #[arg(long)]
        model: PathBuf,
    },
    /// Run every method against the configured study and write a report.
    Bench(CommonArgs),
    /// Train one PGNN-L per lambda value and write the Pareto front.
    SweepLambda(CommonArgs),
    /// Hyperparameter search over the PGNN-L space.
    Search {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 20)]
        budget: usize,
        #[arg(long, value_enum, default_value_t = SearchStrategy::Surrogate)]
        strategy: SearchStrategy,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Experiment configuration (strict JSON; unknown keys rejected).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Nn,
    #[value(name = "pgnn-l")]
    PgnnL,
    Sindyc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SearchStrategy {
    Random,
    Surrogate,
}

impl From<SearchStrategy> for Strategy {
    fn from(s: SearchStrategy) -> Self {
        match s {
            SearchStrategy::Random => Strategy::Random,
            SearchStrategy::Surrogate => Strategy::Surrogate,
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(c) => cmd_gen_data(&c),
        Command::Train { common, method } => cmd_train(&common, method),
        Command::Eval { common, model } => cmd_eval(&common, &model),
        Command::Bench(c) => cmd_bench(&c),
        Command::SweepLambda(c) => cmd_sweep_lambda(&c),
        Command::Search { common, budget, strategy } => {
            cmd_search(&common, budget, strategy.into())
        }
    }
}

/// Load the config, apply the seed override and snapshot the resolved form
/// into the output directory.
fn resolve(common: &CommonArgs) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(&common.config)?;
    let mut cfg: ExperimentConfig = serde_json::from_str(&text)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&common.out)?;
    atomic_write(
        &common.out.join("config.resolved.json"),
        &serde_json::to_string_pretty(&cfg)?,
    )?;
    Ok(cfg)
}

fn cmd_gen_data(common: &CommonArgs) -> Result<()> {
    let cfg = resolve(common)?;
    let dataset = bench::build_dataset(&cfg)?;
    atomic_write(&common.out.join("dataset.csv"), &dataset.to_csv())?;
    atomic_write(
        &common.out.join("dataset.sidecar.json"),
        &serde_json::to_string_pretty(&dataset.sidecar())?,
    )?;
    for (i, range) in dataset.trajectory_ranges().into_iter().enumerate() {
        let sub = Dataset { records: dataset.records[range].to_vec(), ..dataset.clone() };
        atomic_write(&common.out.join(format!("trajectory_{i:02}.csv")), &sub.to_csv())?;
    }
    println!(
        "gen-data: {} trajectories, {} samples, noise_std {:?}",
        dataset.n_trajectories(),
        dataset.records.len(),
        dataset.noise_std
    );
    Ok(())
}

fn history_csv(history: &History) -> String {
    let mut out = String::from("epoch,L_error,L_phy,total\n");
    for e in history {
        out.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e}\n",
            e.epoch, e.train_error, e.train_phy, e.train_total
        ));
    }
    out
}

fn cmd_train(common: &CommonArgs, method: Method) -> Result<()> {
    let cfg = resolve(common)?;
    let dataset = bench::build_dataset(&cfg)?;
    match method {
        Method::Sindyc => {
            let model = sindy::select_lambda(
                &dataset,
                &cfg.sindy.library,
                &cfg.sindy.lambda_grid,
                cfg.sindy.max_iter,
            )?;
            atomic_write(&common.out.join("model.json"), &serde_json::to_string_pretty(&model)?)?;
            println!("train sindyc: lambda {} written to model.json", model.lambda);
        }
        Method::Nn | Method::PgnnL => {
            let pgnn_cfg = bench::pgnn_config(&cfg)?;
            let trained = if method == Method::Nn {
                if cfg.net.lambda_phy != 0.0 {
                    log::warn!(
                        "train nn: lambda_phy {} in the config is ignored by the plain NN",
                        cfg.net.lambda_phy
                    );
                }
                pgnn::train_baseline_nn(&pgnn_cfg, &dataset, cfg.seed)
            } else {
                pgnn::train_pgnn(&pgnn_cfg, &dataset, cfg.seed)
            };
            let history_path = common.out.join("history.csv");
            let (model, history) = match trained {
                Ok(r) => r,
                Err(e) => {
                    // keep whatever history exists so a diverged run can be inspected
                    atomic_write(&history_path, &history_csv(&Vec::new()))?;
                    return Err(e);
                }
            };
            atomic_write(&history_path, &history_csv(&history))?;
            model.save(&common.out.join("model"))?;
            println!(
                "train {}: {} epochs, checkpoint at model.net.json",
                if method == Method::Nn { "nn" } else { "pgnn-l" },
                history.len()
            );
        }
    }
    Ok(())
}

fn cmd_eval(common: &CommonArgs, model_base: &Path) -> Result<()> {
    let cfg = resolve(common)?;
    let model = PgnnModel::load(model_base)?;
    let true_model = cfg.plant.model()?;
    let x0 = vec![0.0; true_model.state_dim];
    let u = generate_signal(&cfg.eval_excitation, cfg.dt, cfg.eval_steps)?;
    let u_fn = |t: f64| {
        let idx = (t / cfg.dt).round() as usize;
        u[idx.min(u.len() - 1)]
    };
    let reference = integrate(&true_model, &x0, &u_fn, cfg.dt, cfg.eval_steps)?;
    let rollout = pgnn::predict_rollout(&model, &u, &x0, cfg.eval_steps)?;

    let energy = pgnn::energy_for(&cfg.plant)?;
    let (_, residuals) = physics_loss(energy.as_ref(), &rollout.x.transpose(), &u, cfg.dt)?;
    let mean_abs_residual = residuals.iter().map(|r| r.abs()).sum::<f64>() / residuals.len() as f64;
    let metrics = serde_json::json!({
        "rmse": bench::rmse(&rollout.x, &reference.x)?,
        "rmse_all": bench::rmse_all(&rollout.x, &reference.x)?,
        "mean_abs_residual": mean_abs_residual,
    });
    atomic_write(&common.out.join("rollout.csv"), &rollout.to_csv())?;
    atomic_write(&common.out.join("metrics.json"), &serde_json::to_string_pretty(&metrics)?)?;
    println!("eval: metrics.json and rollout.csv written");
    Ok(())
}

fn cmd_bench(common: &CommonArgs) -> Result<()> {
    let cfg = resolve(common)?;
    let outcome = bench::run_benchmark(&cfg)?;
    outcome.save(&common.out)?;
    print!("{}", outcome.report.to_markdown());
    Ok(())
}

/// Default sweep grid: twelve lambda values spanning [0, 0.95].
pub const LAMBDA_GRID: [f64; 12] =
    [0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95];

fn cmd_sweep_lambda(common: &CommonArgs) -> Result<()> {
    let cfg = resolve(common)?;
    let dataset = bench::build_dataset(&cfg)?;
    let pgnn_cfg = bench::pgnn_config(&cfg)?;
    let points = hyperopt::pareto_sweep(&LAMBDA_GRID, &pgnn_cfg, &dataset, cfg.seed)?;
    atomic_write(&common.out.join("pareto.csv"), &hyperopt::pareto_to_csv(&points))?;
    println!(
        "sweep-lambda: {} points, {} non-dominated",
        points.len(),
        points.iter().filter(|p| p.nondominated).count()
    );
    Ok(())
}

fn key_f64(c: &hyperopt::Config, key: &str) -> Result<f64> {
    c.get(key)
        .and_then(ParamValue::as_f64)
        .ok_or_else(|| Error::Config(format!("search: trial config lacks numeric '{key}'")))
}

fn cmd_search(common: &CommonArgs, budget: usize, strategy: Strategy) -> Result<()> {
    let cfg = resolve(common)?;
    let dataset = bench::build_dataset(&cfg)?;
    let base = bench::pgnn_config(&cfg)?;
    let space = SearchSpace::pgnn_default();

    let mut objective = |c: &hyperopt::Config, seed: u64| -> Result<TrialOutcome> {
        let width = key_f64(c, "hidden_width")? as usize;
        let layers = key_f64(c, "hidden_layers")? as usize;
        let mut pc = base.clone();
        pc.hidden = vec![width; layers];
        pc.lambda_phy = key_f64(c, "lambda_phy")?;
        pc.train.adam.alpha = key_f64(c, "learning_rate")?;
        pc.activation = match c.get("activation").and_then(ParamValue::as_str) {
            Some("tanh") => Activation::Tanh,
            Some("relu") => Activation::Relu,
            other => {
                return Err(Error::Config(format!("search: unknown activation {other:?}")))
            }
        };
        let (model, history) = pgnn::train_pgnn(&pc, &dataset, seed)?;
        let objective = pgnn::val_rollout_rmse(&model, &dataset)?;
        let best = history
            .iter()
            .min_by(|a, b| a.val_total.total_cmp(&b.val_total))
            .ok_or_else(|| Error::Domain("search: empty training history".into()))?;
        Ok(TrialOutcome { objective, l_error: best.val_error, l_phy: best.val_phy })
    };

    let (best, records) = hyperopt::search(&space, budget, strategy, cfg.seed, &mut objective)?;
    atomic_write(&common.out.join("trials.jsonl"), &hyperopt::trials_to_jsonl(&records)?)?;
    atomic_write(&common.out.join("best.json"), &serde_json::to_string_pretty(&best)?)?;
    println!(
        "search: {} trials, best objective {:?}",
        records.len(),
        best.outcome.as_ref().map(|o| o.objective)
    );
    Ok(())
}
