//! SINDYc baseline: a library of candidate functions of (y, u) and a sparse
//! one-step regression Y' = Xi Psi(Y, U)^T.
//!
//! The sparsity knob lambda is realized as Sequential Thresholded Least
//! Squares (the standard SINDy solver) rather than an L1 penalty: iterate
//! {least squares on the active set; drop coefficients below lambda} to a
//! fixpoint. Deterministic and dependency-free; the active set never grows.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::datakit::{Dataset, SnapshotMatrices, Split};
use crate::error::{Error, Result};
use crate::plants::Trajectory;

/// One candidate function of (y, u).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LibraryTerm {
    Constant,
    State { index: usize },
    Input,
    Sin { index: usize },
    Cos { index: usize },
    SignState { index: usize },
    /// Product of two state components (i == j gives a square).
    Product { i: usize, j: usize },
    /// Product of a state component and the input.
    StateInput { index: usize },
}

impl LibraryTerm {
    pub fn eval(&self, y: &[f64], u: f64) -> f64 {
        match *self {
            LibraryTerm::Constant => 1.0,
            LibraryTerm::State { index } => y[index],
            LibraryTerm::Input => u,
            LibraryTerm::Sin { index } => y[index].sin(),
            LibraryTerm::Cos { index } => y[index].cos(),
            LibraryTerm::SignState { index } => {
                if y[index] > 0.0 {
                    1.0
                } else if y[index] < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            LibraryTerm::Product { i, j } => y[i] * y[j],
            LibraryTerm::StateInput { index } => y[index] * u,
        }
    }

    pub fn name(&self) -> String {
        match *self {
            LibraryTerm::Constant => "1".into(),
            LibraryTerm::State { index } => format!("y{}", index + 1),
            LibraryTerm::Input => "u".into(),
            LibraryTerm::Sin { index } => format!("sin(y{})", index + 1),
            LibraryTerm::Cos { index } => format!("cos(y{})", index + 1),
            LibraryTerm::SignState { index } => format!("sign(y{})", index + 1),
            LibraryTerm::Product { i, j } => format!("y{}*y{}", i + 1, j + 1),
            LibraryTerm::StateInput { index } => format!("y{}*u", index + 1),
        }
    }

    fn max_state_index(&self) -> Option<usize> {
        match *self {
            LibraryTerm::Constant | LibraryTerm::Input => None,
            LibraryTerm::State { index }
            | LibraryTerm::Sin { index }
            | LibraryTerm::Cos { index }
            | LibraryTerm::SignState { index }
            | LibraryTerm::StateInput { index } => Some(index),
            LibraryTerm::Product { i, j } => Some(i.max(j)),
        }
    }
}

/// Ordered candidate set; the ordering is part of the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibrarySpec {
    pub terms: Vec<LibraryTerm>,
}

impl LibrarySpec {
    pub fn kappa(&self) -> usize {
        self.terms.len()
    }

    /// Default golf candidates: states, input and trigonometric terms plus
    /// the friction-shaped ones.
    pub fn golf_default() -> Self {
        Self {
            terms: vec![
                LibraryTerm::Constant,
                LibraryTerm::State { index: 0 },
                LibraryTerm::State { index: 1 },
                LibraryTerm::Input,
                LibraryTerm::Sin { index: 0 },
                LibraryTerm::Cos { index: 0 },
                LibraryTerm::Product { i: 1, j: 1 },
                LibraryTerm::SignState { index: 1 },
            ],
        }
    }

    /// Default valve candidates: the linear terms.
    pub fn valve_default() -> Self {
        Self {
            terms: vec![
                LibraryTerm::State { index: 0 },
                LibraryTerm::State { index: 1 },
                LibraryTerm::Input,
            ],
        }
    }

    pub fn validate(&self, state_dim: usize) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::Config("library spec: no candidate terms".into()));
        }
        for term in &self.terms {
            if let Some(idx) = term.max_state_index() {
                if idx >= state_dim {
                    return Err(Error::Config(format!(
                        "library spec: term {} out of range for {} states",
                        term.name(),
                        state_dim
                    )));
                }
            }
        }
        Ok(())
    }

    /// One library row psi(y, u).
    pub fn eval_row(&self, y: &[f64], u: f64) -> Vec<f64> {
        self.terms.iter().map(|t| t.eval(y, u)).collect()
    }
}

/// Evaluate the library on snapshot columns: row s = psi(Y[:,s], U[s]).
pub fn build_library(spec: &LibrarySpec, y: &DMatrix<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>> {
    spec.validate(y.nrows())?;
    if u.len() != y.ncols() {
        return Err(Error::Shape(format!(
            "build_library: {} input samples for {} snapshots",
            u.len(),
            y.ncols()
        )));
    }
    let n = y.ncols();
    let mut psi = DMatrix::zeros(n, spec.kappa());
    for s in 0..n {
        let ys: Vec<f64> = y.column(s).iter().cloned().collect();
        for (c, term) in spec.terms.iter().enumerate() {
            psi[(s, c)] = term.eval(&ys, u[s]);
        }
    }
    Ok(psi)
}

/// STLSQ for one output row. Returns the coefficient vector (thresholded
/// entries exactly zero) and the active-set size after each iteration.
fn stlsq_row(psi: &DMatrix<f64>, rhs: &DVector<f64>, lambda: f64, max_iter: usize)
    -> Result<(DVector<f64>, Vec<usize>)> {
    let kappa = psi.ncols();
    let mut active: Vec<usize> = (0..kappa).collect();
    let mut coeffs = DVector::zeros(kappa);
    let mut history = Vec::new();
    for _ in 0..max_iter.max(1) {
        if active.is_empty() {
            break;
        }
        let sub = DMatrix::from_fn(psi.nrows(), active.len(), |r, c| psi[(r, active[c])]);
        let sol = sub
            .svd(true, true)
            .solve(rhs, 1e-14)
            .map_err(|e| Error::Domain(format!("stlsq: least-squares solve failed: {e}")))?;
        coeffs.fill(0.0);
        let survivors: Vec<usize> = active
            .iter()
            .enumerate()
            .filter(|(c, _)| sol[*c].abs() >= lambda)
            .map(|(c, &col)| {
                coeffs[col] = sol[c];
                col
            })
            .collect();
        history.push(survivors.len());
        let fixpoint = survivors.len() == active.len();
        active = survivors;
        if fixpoint {
            break;
        }
    }
    Ok((coeffs, history))
}

/// Fit Xi (l x kappa) by per-row sequential thresholded least squares.
pub fn fit_stlsq(
    psi: &DMatrix<f64>,
    y_next: &DMatrix<f64>,
    lambda: f64,
    max_iter: usize,
) -> Result<DMatrix<f64>> {
    if psi.nrows() != y_next.ncols() {
        return Err(Error::Shape(format!(
            "fit_stlsq: {} library rows vs {} targets",
            psi.nrows(),
            y_next.ncols()
        )));
    }
    if psi.nrows() < psi.ncols() {
        log::warn!(
            "fit_stlsq: underdetermined regression ({} rows, {} candidates)",
            psi.nrows(),
            psi.ncols()
        );
    }
    let l = y_next.nrows();
    let mut xi = DMatrix::zeros(l, psi.ncols());
    for i in 0..l {
        let rhs = DVector::from_fn(psi.nrows(), |s, _| y_next[(i, s)]);
        let (coeffs, _) = stlsq_row(psi, &rhs, lambda, max_iter)?;
        if coeffs.iter().all(|c| *c == 0.0) {
            log::warn!("fit_stlsq: output row {i} thresholded to zero");
        }
        xi.set_row(i, &coeffs.transpose());
    }
    Ok(xi)
}

/// Discrete one-step model y_{k+1} = Xi psi(y_k, u_k).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SindyModel {
    #[serde(with = "xi_serde")]
    pub xi: DMatrix<f64>,
    pub library: LibrarySpec,
    pub lambda: f64,
    pub dt: f64,
}

mod xi_serde {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Mat {
        rows: usize,
        cols: usize,
        /// Row-major entries.
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        Mat { rows: m.nrows(), cols: m.ncols(), data }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<DMatrix<f64>, D::Error> {
        let m = Mat::deserialize(d)?;
        Ok(DMatrix::from_row_slice(m.rows, m.cols, &m.data))
    }
}

impl SindyModel {
    pub fn state_dim(&self) -> usize {
        self.xi.nrows()
    }

    fn step(&self, y: &[f64], u: f64) -> Vec<f64> {
        let psi = self.library.eval_row(y, u);
        (0..self.xi.nrows())
            .map(|i| (0..self.xi.ncols()).map(|c| self.xi[(i, c)] * psi[c]).sum())
            .collect()
    }
}

/// Snapshot pairs restricted to one split (splits are contiguous within a
/// trajectory, so pairing stays valid on the filtered records).
pub fn snapshots_for_split(d: &Dataset, split: Split) -> Result<SnapshotMatrices> {
    let sub = Dataset {
        records: d.records.iter().filter(|r| r.split == split).cloned().collect(),
        dt: d.dt,
        seed: d.seed,
        noise_std: d.noise_std.clone(),
        standardizer: None,
    };
    if sub.records.is_empty() {
        return Err(Error::Split(format!("no records in split '{}'", split.as_str())));
    }
    crate::datakit::build_snapshots(&sub)
}

/// Fit a SINDYc model on the train split of a dataset.
pub fn fit_sindy(d: &Dataset, spec: &LibrarySpec, lambda: f64, max_iter: usize) -> Result<SindyModel> {
    let snaps = snapshots_for_split(d, Split::Train)?;
    let psi = build_library(spec, &snaps.y, &snaps.u)?;
    let xi = fit_stlsq(&psi, &snaps.y_next, lambda, max_iter)?;
    Ok(SindyModel { xi, library: spec.clone(), lambda, dt: d.dt })
}

/// Pick lambda from a grid by closed-loop rollout RMSE (channel 1) over the
/// validation stretches of the dataset.
pub fn select_lambda(
    d: &Dataset,
    spec: &LibrarySpec,
    grid: &[f64],
    max_iter: usize,
) -> Result<SindyModel> {
    if grid.is_empty() {
        return Err(Error::Config("select_lambda: empty grid".into()));
    }
    let mut best: Option<(f64, SindyModel)> = None;
    for &lambda in grid {
        let model = fit_sindy(d, spec, lambda, max_iter)?;
        let score = match val_rollout_rmse(&model, d) {
            Ok(s) if s.is_finite() => s,
            _ => continue,
        };
        if best.as_ref().map_or(true, |(b, _)| score < *b) {
            best = Some((score, model));
        }
    }
    best.map(|(_, m)| m)
        .ok_or_else(|| Error::Domain("select_lambda: every candidate diverged".into()))
}

/// Mean channel-1 rollout RMSE over contiguous validation runs.
pub fn val_rollout_rmse(model: &SindyModel, d: &Dataset) -> Result<f64> {
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
                        let traj = sindy_rollout(model, &u, &run[0].y, run.len() - 1)?;
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

/// Iterate the one-step map from y0 under a recorded input sequence.
pub fn sindy_rollout(
    model: &SindyModel,
    u_sequence: &[f64],
    y0: &[f64],
    n_steps: usize,
) -> Result<Trajectory> {
    if y0.len() != model.state_dim() {
        return Err(Error::Shape(format!(
            "sindy_rollout: y0 has {} channels, model has {}",
            y0.len(),
            model.state_dim()
        )));
    }
    if u_sequence.len() < n_steps {
        return Err(Error::Shape(format!(
            "sindy_rollout: {} input samples for {} steps",
            u_sequence.len(),
            n_steps
        )));
    }
    let l = y0.len();
    let mut x = DMatrix::zeros(n_steps + 1, l);
    let mut u_used = Vec::with_capacity(n_steps + 1);
    let mut y = y0.to_vec();
    for c in 0..l {
        x[(0, c)] = y[c];
    }
    u_used.push(u_sequence[0]);
    for k in 1..=n_steps {
        let u_k = u_sequence[k - 1];
        y = model.step(&y, u_k);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: k,
                detail: "sindy rollout produced a non-finite state".into(),
            });
        }
        for c in 0..l {
            x[(k, c)] = y[c];
        }
        u_used.push(u_sequence[k.min(u_sequence.len() - 1)]);
    }
    Ok(Trajectory {
        t: (0..=n_steps).map(|k| k as f64 * model.dt).collect(),
        u: u_used,
        x,
    })
}
