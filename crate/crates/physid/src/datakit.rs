//! Excitation signals, synthetic measurements, dataset splits,
//! standardization and snapshot matrices.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plants::{integrate, PlantModel};

/// Write through a sibling temp file and rename, so a crash never leaves a
/// partially written artifact behind.
pub fn atomic_write(path: &std::path::Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Config(format!("atomic_write: bad path {}", path.display())))?;
    let tmp = path.with_file_name(format!("{name}.tmp"));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Excitation signal shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ExcitationKind {
    Step,
    Sine { freq: f64 },
    Chirp { f0: f64, f1: f64 },
}

/// A parameterized excitation signal. The signal is zero before `start`;
/// afterwards it is `offset` plus the shaped waveform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Excitation {
    // externally tagged (no flatten): serde cannot combine `flatten` with
    // `deny_unknown_fields`, and strict config parsing wins
    pub kind: ExcitationKind,
    pub amplitude: f64,
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub start: f64,
}

impl Excitation {
    pub fn step(amplitude: f64, start: f64) -> Self {
        Self { kind: ExcitationKind::Step, amplitude, offset: 0.0, start }
    }

    pub fn sine(amplitude: f64, freq: f64) -> Self {
        Self { kind: ExcitationKind::Sine { freq }, amplitude, offset: 0.0, start: 0.0 }
    }

    pub fn chirp(amplitude: f64, f0: f64, f1: f64) -> Self {
        Self { kind: ExcitationKind::Chirp { f0, f1 }, amplitude, offset: 0.0, start: 0.0 }
    }

    pub fn validate(&self, duration: f64) -> Result<()> {
        if !self.amplitude.is_finite() {
            return Err(Error::Config("excitation: amplitude must be finite".into()));
        }
        if let ExcitationKind::Chirp { f0, f1 } = self.kind {
            if !(f0 >= 0.0 && f1 >= f0) {
                return Err(Error::Config("excitation: chirp needs f1 >= f0 >= 0".into()));
            }
        }
        if self.start < 0.0 || self.start > duration {
            return Err(Error::Config("excitation: start outside signal duration".into()));
        }
        Ok(())
    }

    /// Evaluate the signal at time `t`. For the chirp, `duration` is the
    /// sweep length (total signal length minus the start time).
    pub fn eval(&self, t: f64, duration: f64) -> f64 {
        if t < self.start {
            return 0.0;
        }
        let tau = t - self.start;
        let wave = match self.kind {
            ExcitationKind::Step => self.amplitude,
            ExcitationKind::Sine { freq } => {
                self.amplitude * (2.0 * std::f64::consts::PI * freq * tau).sin()
            }
            ExcitationKind::Chirp { f0, f1 } => {
                let sweep = (duration - self.start).max(f64::MIN_POSITIVE);
                let phase = 2.0 * std::f64::consts::PI
                    * (f0 * tau + 0.5 * (f1 - f0) * tau * tau / sweep);
                self.amplitude * phase.sin()
            }
        };
        wave + self.offset
    }
}

/// Deterministic sample sequence of an excitation on a uniform grid
/// (`n_steps + 1` samples).
pub fn generate_signal(e: &Excitation, dt: f64, n_steps: usize) -> Result<Vec<f64>> {
    if dt <= 0.0 {
        return Err(Error::Config("generate_signal: dt must be positive".into()));
    }
    let duration = n_steps as f64 * dt;
    e.validate(duration)?;
    Ok((0..=n_steps).map(|k| e.eval(k as f64 * dt, duration)).collect())
}

/// Split tag of one record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split tag '{other}'"))),
        }
    }
}

/// One measurement record (t_k, u_k, y_k).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: f64,
    pub u: f64,
    pub y: Vec<f64>,
    pub split: Split,
    pub traj_id: usize,
}

/// Per-channel standardization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fit on the rows of `data` (rows = samples, cols = channels).
    /// Constant channels get std replaced by 1 with a warning.
    pub fn fit(data: &DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::Config("standardizer: no samples to fit".into()));
        }
        let n = data.nrows() as f64;
        let mut mean = Vec::with_capacity(data.ncols());
        let mut std = Vec::with_capacity(data.ncols());
        for c in 0..data.ncols() {
            let col = data.column(c);
            let mu = col.sum() / n;
            let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            let mut s = var.sqrt();
            if s == 0.0 {
                log::warn!("standardizer: constant channel {c}, using std = 1");
                s = 1.0;
            }
            mean.push(mu);
            std.push(s);
        }
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_scalar(&self, c: usize, v: f64) -> f64 {
        (v - self.mean[c]) / self.std[c]
    }

    pub fn invert_scalar(&self, c: usize, z: f64) -> f64 {
        self.mean[c] + self.std[c] * z
    }

    pub fn apply_vec(&self, v: &[f64]) -> Vec<f64> {
        v.iter().enumerate().map(|(c, x)| self.apply_scalar(c, *x)).collect()
    }

    pub fn invert_vec(&self, z: &[f64]) -> Vec<f64> {
        z.iter().enumerate().map(|(c, x)| self.invert_scalar(c, *x)).collect()
    }

    /// Standardize a matrix whose rows are channels and columns samples.
    pub fn apply_cols(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = m.clone();
        for c in 0..m.nrows() {
            for j in 0..m.ncols() {
                out[(c, j)] = self.apply_scalar(c, m[(c, j)]);
            }
        }
        out
    }

    pub fn invert_cols(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = m.clone();
        for c in 0..m.nrows() {
            for j in 0..m.ncols() {
                out[(c, j)] = self.invert_scalar(c, m[(c, j)]);
            }
        }
        out
    }
}

/// Time-indexed measurement dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<Record>,
    pub dt: f64,
    pub seed: u64,
    pub noise_std: Vec<f64>,
    /// Output standardizer fit on the train split, if fitted.
    pub standardizer: Option<Standardizer>,
}

impl Dataset {
    pub fn output_dim(&self) -> usize {
        self.records.first().map(|r| r.y.len()).unwrap_or(0)
    }

    pub fn n_trajectories(&self) -> usize {
        self.records.iter().map(|r| r.traj_id + 1).max().unwrap_or(0)
    }

    /// Record index ranges per trajectory, in order.
    pub fn trajectory_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.records.len() {
            if i == self.records.len() || self.records[i].traj_id != self.records[start].traj_id {
                out.push(start..i);
                start = i;
            }
        }
        out
    }

    /// Concatenate another dataset, renumbering its trajectories.
    pub fn extend(&mut self, other: Dataset) -> Result<()> {
        if !self.records.is_empty() && (other.dt - self.dt).abs() > 1e-12 * self.dt.abs() {
            return Err(Error::Config("dataset extend: mixed dt".into()));
        }
        let offset = self.n_trajectories();
        for mut r in other.records {
            r.traj_id += offset;
            self.records.push(r);
        }
        Ok(())
    }

    /// Matrix of outputs for the given split (rows = samples).
    pub fn outputs(&self, split: Option<Split>) -> DMatrix<f64> {
        let dim = self.output_dim();
        let rows: Vec<&Record> = self
            .records
            .iter()
            .filter(|r| split.map_or(true, |s| r.split == s))
            .collect();
        let mut m = DMatrix::zeros(rows.len(), dim);
        for (i, r) in rows.iter().enumerate() {
            for c in 0..dim {
                m[(i, c)] = r.y[c];
            }
        }
        m
    }

    /// Fit the output standardizer on train records only.
    pub fn fit_standardizer(&mut self) -> Result<()> {
        let train = self.outputs(Some(Split::Train));
        self.standardizer = Some(Standardizer::fit(&train)?);
        Ok(())
    }

    /// Serialize records to CSV: `t,u,y1,...,split,traj_id`.
    pub fn to_csv(&self) -> String {
        let dim = self.output_dim();
        let mut out = String::from("t,u");
        for i in 0..dim {
            out.push_str(&format!(",y{}", i + 1));
        }
        out.push_str(",split,traj_id\n");
        for r in &self.records {
            out.push_str(&format!("{:.16e},{:.16e}", r.t, r.u));
            for c in 0..dim {
                out.push_str(&format!(",{:.16e}", r.y[c]));
            }
            out.push_str(&format!(",{},{}\n", r.split.as_str(), r.traj_id));
        }
        out
    }

    pub fn from_csv(csv: &str, sidecar: &DatasetSidecar) -> Result<Dataset> {
        let mut lines = csv.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Config("dataset csv: empty file".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 4 || cols[0] != "t" || cols[1] != "u" {
            return Err(Error::Config("dataset csv: unexpected header".into()));
        }
        let dim = cols.len() - 4;
        let mut records = Vec::new();
        for (ln, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols.len() {
                return Err(Error::Config(format!("dataset csv: bad row {}", ln + 2)));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::Config(format!("dataset csv: bad number '{s}'")))
            };
            let t = parse(fields[0])?;
            let u = parse(fields[1])?;
            let mut y = Vec::with_capacity(dim);
            for c in 0..dim {
                y.push(parse(fields[2 + c])?);
            }
            let split = Split::parse(fields[2 + dim])?;
            let traj_id = fields[3 + dim]
                .parse()
                .map_err(|_| Error::Config("dataset csv: bad traj_id".into()))?;
            records.push(Record { t, u, y, split, traj_id });
        }
        Ok(Dataset {
            records,
            dt: sidecar.dt,
            seed: sidecar.seed,
            noise_std: sidecar.noise_std.clone(),
            standardizer: sidecar.standardizer.clone(),
        })
    }

    pub fn sidecar(&self) -> DatasetSidecar {
        DatasetSidecar {
            dt: self.dt,
            seed: self.seed,
            noise_std: self.noise_std.clone(),
            standardizer: self.standardizer.clone(),
        }
    }
}

/// JSON sidecar accompanying the dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSidecar {
    pub dt: f64,
    pub seed: u64,
    pub noise_std: Vec<f64>,
    pub standardizer: Option<Standardizer>,
}

/// Integrate the true plant under an excitation and add seeded Gaussian
/// measurement noise on the outputs (y = x, full state).
pub fn simulate_measurement(
    true_plant: &PlantModel,
    e: &Excitation,
    dt: f64,
    n_steps: usize,
    noise_std: &[f64],
    seed: u64,
) -> Result<Dataset> {
    if noise_std.len() != true_plant.state_dim {
        return Err(Error::Shape(format!(
            "simulate_measurement: noise_std has {} channels, plant has {}",
            noise_std.len(),
            true_plant.state_dim
        )));
    }
    if noise_std.iter().any(|s| *s < 0.0) {
        return Err(Error::Config("simulate_measurement: noise_std must be >= 0".into()));
    }
    let duration = n_steps as f64 * dt;
    e.validate(duration)?;
    let traj = integrate(true_plant, &vec![0.0; true_plant.state_dim], &|t| e.eval(t, duration),
        dt, n_steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dists: Vec<Option<Normal<f64>>> = noise_std
        .iter()
        .map(|s| if *s > 0.0 { Some(Normal::new(0.0, *s).unwrap()) } else { None })
        .collect();
    let mut records = Vec::with_capacity(traj.len());
    for k in 0..traj.len() {
        let mut y = Vec::with_capacity(true_plant.state_dim);
        for c in 0..true_plant.state_dim {
            let noise = dists[c].as_ref().map(|d| d.sample(&mut rng)).unwrap_or(0.0);
            y.push(traj.x[(k, c)] + noise);
        }
        records.push(Record {
            t: traj.t[k],
            u: traj.u[k],
            y,
            split: Split::Train,
            traj_id: 0,
        });
    }
    Ok(Dataset {
        records,
        dt,
        seed,
        noise_std: noise_std.to_vec(),
        standardizer: None,
    })
}

/// Split assignment mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Per trajectory: first 60% train, next 20% val, final 20% test.
    #[default]
    Contiguous,
    /// Whole trajectories are assigned to splits (seeded shuffle).
    ByTrajectory,
}

/// Assign 60-20-20 split tags in place.
pub fn split_60_20_20(d: &mut Dataset, mode: SplitMode, seed: u64) -> Result<()> {
    if d.records.len() < 5 {
        return Err(Error::Split(format!(
            "need at least 5 records, got {}",
            d.records.len()
        )));
    }
    match mode {
        SplitMode::Contiguous => {
            for range in d.trajectory_ranges() {
                let n = range.len();
                let n_train = (0.6 * n as f64).round() as usize;
                let n_val = (0.2 * n as f64).round() as usize;
                for (i, idx) in range.enumerate() {
                    d.records[idx].split = if i < n_train {
                        Split::Train
                    } else if i < n_train + n_val {
                        Split::Val
                    } else {
                        Split::Test
                    };
                }
            }
        }
        SplitMode::ByTrajectory => {
            let ranges = d.trajectory_ranges();
            let n = ranges.len();
            if n < 3 {
                return Err(Error::Split(format!(
                    "by_trajectory split needs at least 3 trajectories, got {n}"
                )));
            }
            let n_val = ((0.2 * n as f64).floor() as usize).max(1);
            let n_test = n_val;
            let mut order: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            order.shuffle(&mut rng);
            // train gets the remainder
            for (pos, &ti) in order.iter().enumerate() {
                let split = if pos < n - n_val - n_test {
                    Split::Train
                } else if pos < n - n_test {
                    Split::Val
                } else {
                    Split::Test
                };
                for idx in ranges[ti].clone() {
                    d.records[idx].split = split;
                }
            }
        }
    }
    Ok(())
}

/// Paired snapshot matrices Y, Y' (shifted by one step) and U.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrices {
    /// l x (pairs): outputs at step k.
    pub y: DMatrix<f64>,
    /// l x (pairs): outputs at step k+1.
    pub y_next: DMatrix<f64>,
    /// 1 x (pairs): inputs at step k.
    pub u: DVector<f64>,
}

/// Build snapshot matrices; pairs never straddle trajectory boundaries.
pub fn build_snapshots(d: &Dataset) -> Result<SnapshotMatrices> {
    if d.records.is_empty() {
        return Err(Error::Config("build_snapshots: empty dataset".into()));
    }
    let ranges = d.trajectory_ranges();
    for range in &ranges {
        for w in d.records[range.clone()].windows(2) {
            let step = w[1].t - w[0].t;
            if (step - d.dt).abs() > 1e-12 * d.dt.max(1.0) {
                return Err(Error::Config("build_snapshots: non-uniform dt".into()));
            }
        }
    }
    let dim = d.output_dim();
    let n_pairs: usize = ranges.iter().map(|r| r.len().saturating_sub(1)).sum();
    let mut y = DMatrix::zeros(dim, n_pairs);
    let mut y_next = DMatrix::zeros(dim, n_pairs);
    let mut u = DVector::zeros(n_pairs);
    let mut j = 0;
    for range in &ranges {
        for idx in range.clone().take(range.len().saturating_sub(1)) {
            for c in 0..dim {
                y[(c, j)] = d.records[idx].y[c];
                y_next[(c, j)] = d.records[idx + 1].y[c];
            }
            u[j] = d.records[idx].u;
            j += 1;
        }
    }
    Ok(SnapshotMatrices { y, y_next, u })
}
