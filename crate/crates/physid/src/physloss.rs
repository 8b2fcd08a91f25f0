//! Physics-motivated loss terms: the per-step energy-balance residual, the
//! composed training loss weighting data fit against physics, and generic
//! equality/inequality constraint losses.
//!
//! The residual for one step is
//! `dE_kin + dE_pot - W_con + W_diss`, where the work terms are trapezoidal
//! quadratures over the step. On exact trajectories of the full plant the
//! residual vanishes up to quadrature error.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::datakit::Standardizer;
use crate::error::{Error, Result};
use crate::nnet::{Loss, LossValue};
use crate::plants::{FrictionSign, GolfParams, ValveParams};

/// Per-plant energy bookkeeping: point energies plus one-step work
/// integrals and their analytic gradients.
pub trait EnergyModel: Send + Sync {
    fn plant_tag(&self) -> &str;
    fn kinetic(&self, x: &[f64]) -> f64;
    fn potential(&self, x: &[f64]) -> f64;
    /// Energy supplied by the control over one step (u held at u_prev).
    fn control_work(&self, x_prev: &[f64], x_curr: &[f64], u_prev: f64) -> f64;
    /// Energy removed by dissipation over one step (trapezoidal).
    fn dissipation_work(&self, x_prev: &[f64], x_curr: &[f64]) -> f64;

    fn kinetic_grad(&self, x: &[f64]) -> Vec<f64>;
    fn potential_grad(&self, x: &[f64]) -> Vec<f64>;
    /// Gradients w.r.t. (x_prev, x_curr).
    fn control_work_grad(&self, x_prev: &[f64], x_curr: &[f64], u_prev: f64)
        -> (Vec<f64>, Vec<f64>);
    fn dissipation_work_grad(&self, x_prev: &[f64], x_curr: &[f64]) -> (Vec<f64>, Vec<f64>);
}

/// One-step energy-balance residual (J). Zero on trajectories that conserve
/// the modeled balance. `_dt` is unused by the trapezoidal quadratures but
/// kept for energy models that integrate over time instead of path.
pub fn delta_energy(
    em: &dyn EnergyModel,
    x_curr: &[f64],
    x_prev: &[f64],
    u_prev: f64,
    _dt: f64,
) -> f64 {
    let d_kin = em.kinetic(x_curr) - em.kinetic(x_prev);
    let d_pot = em.potential(x_curr) - em.potential(x_prev);
    let w_con = em.control_work(x_prev, x_curr, u_prev);
    let w_diss = em.dissipation_work(x_prev, x_curr);
    d_kin + d_pot - w_con + w_diss
}

/// Gradients of [`delta_energy`] w.r.t. (x_prev, x_curr).
pub fn delta_energy_grad(
    em: &dyn EnergyModel,
    x_curr: &[f64],
    x_prev: &[f64],
    u_prev: f64,
) -> (Vec<f64>, Vec<f64>) {
    let dim = x_curr.len();
    let kc = em.kinetic_grad(x_curr);
    let kp = em.kinetic_grad(x_prev);
    let pc = em.potential_grad(x_curr);
    let pp = em.potential_grad(x_prev);
    let (con_p, con_c) = em.control_work_grad(x_prev, x_curr, u_prev);
    let (dis_p, dis_c) = em.dissipation_work_grad(x_prev, x_curr);
    let mut g_prev = vec![0.0; dim];
    let mut g_curr = vec![0.0; dim];
    for i in 0..dim {
        g_prev[i] = -kp[i] - pp[i] - con_p[i] + dis_p[i];
        g_curr[i] = kc[i] + pc[i] - con_c[i] + dis_c[i];
    }
    (g_prev, g_curr)
}

/// Energy bookkeeping for the golf robot.
///
/// kinetic = J/2 x2^2, potential = m g a (1 - cos x1) (zero at the hanging
/// position), control work = 4 u dphi, dissipation = trapezoidal friction
/// work over dphi.
pub struct GolfEnergy {
    pub params: GolfParams,
    pub sign: FrictionSign,
}

impl GolfEnergy {
    pub fn new(params: GolfParams) -> Self {
        Self { params, sign: FrictionSign::Hard }
    }

    fn friction(&self, x: &[f64]) -> f64 {
        crate::plants::golf_friction(x, &self.params, self.sign)
    }

    fn friction_grad(&self, x: &[f64]) -> [f64; 2] {
        let p = &self.params;
        let s = self.sign.eval(x[1]);
        let ds = self.sign.eval_deriv(x[1]);
        let normal = p.m * x[1] * x[1] * p.a + p.m * p.g * x[0].cos();
        [
            -p.r * p.mu * s * p.m * p.g * x[0].sin(),
            p.d + p.r * p.mu * (s * 2.0 * p.m * x[1] * p.a + ds * normal),
        ]
    }
}

/// Golf energy model from validated parameters.
pub fn golf_energy_model(params: GolfParams) -> Result<GolfEnergy> {
    params.validate()?;
    Ok(GolfEnergy::new(params))
}

impl EnergyModel for GolfEnergy {
    fn plant_tag(&self) -> &str {
        "golf"
    }

    fn kinetic(&self, x: &[f64]) -> f64 {
        0.5 * self.params.j * x[1] * x[1]
    }

    fn potential(&self, x: &[f64]) -> f64 {
        let p = &self.params;
        p.m * p.g * p.a * (1.0 - x[0].cos())
    }

    fn control_work(&self, x_prev: &[f64], x_curr: &[f64], u_prev: f64) -> f64 {
        4.0 * u_prev * (x_curr[0] - x_prev[0])
    }

    fn dissipation_work(&self, x_prev: &[f64], x_curr: &[f64]) -> f64 {
        0.5 * (self.friction(x_prev) + self.friction(x_curr)) * (x_curr[0] - x_prev[0])
    }

    fn kinetic_grad(&self, x: &[f64]) -> Vec<f64> {
        vec![0.0, self.params.j * x[1]]
    }

    fn potential_grad(&self, x: &[f64]) -> Vec<f64> {
        let p = &self.params;
        vec![p.m * p.g * p.a * x[0].sin(), 0.0]
    }

    fn control_work_grad(
        &self,
        _x_prev: &[f64],
        _x_curr: &[f64],
        u_prev: f64,
    ) -> (Vec<f64>, Vec<f64>) {
        (vec![-4.0 * u_prev, 0.0], vec![4.0 * u_prev, 0.0])
    }

    fn dissipation_work_grad(&self, x_prev: &[f64], x_curr: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let fp = self.friction(x_prev);
        let fc = self.friction(x_curr);
        let gp = self.friction_grad(x_prev);
        let gc = self.friction_grad(x_curr);
        let dphi = x_curr[0] - x_prev[0];
        let avg = 0.5 * (fp + fc);
        (
            vec![0.5 * gp[0] * dphi - avg, 0.5 * gp[1] * dphi],
            vec![0.5 * gc[0] * dphi + avg, 0.5 * gc[1] * dphi],
        )
    }
}

/// Energy analog of the valve lag, obtained by multiplying the dynamics by
/// the slider velocity: kinetic = x2^2/2, potential = x1^2/(2 T^2),
/// control work = (K/T^2) u dx1, dissipation = (2 D/T) x2 dx1.
pub struct ValveEnergy {
    pub params: ValveParams,
}

pub fn valve_energy_model(params: ValveParams) -> Result<ValveEnergy> {
    params.validate()?;
    Ok(ValveEnergy { params })
}

impl EnergyModel for ValveEnergy {
    fn plant_tag(&self) -> &str {
        "valve"
    }

    fn kinetic(&self, x: &[f64]) -> f64 {
        0.5 * x[1] * x[1]
    }

    fn potential(&self, x: &[f64]) -> f64 {
        let t = self.params.t_v();
        x[0] * x[0] / (2.0 * t * t)
    }

    fn control_work(&self, x_prev: &[f64], x_curr: &[f64], u_prev: f64) -> f64 {
        let t = self.params.t_v();
        (self.params.k_v / (t * t)) * u_prev * (x_curr[0] - x_prev[0])
    }

    fn dissipation_work(&self, x_prev: &[f64], x_curr: &[f64]) -> f64 {
        let t = self.params.t_v();
        let c = 2.0 * self.params.d_v / t;
        0.5 * c * (x_prev[1] + x_curr[1]) * (x_curr[0] - x_prev[0])
    }

    fn kinetic_grad(&self, x: &[f64]) -> Vec<f64> {
        vec![0.0, x[1]]
    }

    fn potential_grad(&self, x: &[f64]) -> Vec<f64> {
        let t = self.params.t_v();
        vec![x[0] / (t * t), 0.0]
    }

    fn control_work_grad(
        &self,
        _x_prev: &[f64],
        _x_curr: &[f64],
        u_prev: f64,
    ) -> (Vec<f64>, Vec<f64>) {
        let t = self.params.t_v();
        let k = (self.params.k_v / (t * t)) * u_prev;
        (vec![-k, 0.0], vec![k, 0.0])
    }

    fn dissipation_work_grad(&self, x_prev: &[f64], x_curr: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let t = self.params.t_v();
        let c = 2.0 * self.params.d_v / t;
        let dx1 = x_curr[0] - x_prev[0];
        let avg = 0.5 * c * (x_prev[1] + x_curr[1]);
        (vec![-avg, 0.5 * c * dx1], vec![avg, 0.5 * c * dx1])
    }
}

/// Mean squared per-step energy residual over a predicted state sequence in
/// physical units (columns = time steps). Also returns the per-step
/// residuals for diagnostics.
pub fn physics_loss(
    em: &dyn EnergyModel,
    x: &DMatrix<f64>,
    u: &[f64],
    dt: f64,
) -> Result<(f64, Vec<f64>)> {
    let n = x.ncols();
    if n < 2 {
        return Err(Error::Shape("physics_loss: need at least 2 samples".into()));
    }
    if u.len() < n - 1 {
        return Err(Error::Shape(format!(
            "physics_loss: {} inputs for {} state samples",
            u.len(),
            n
        )));
    }
    let mut residuals = Vec::with_capacity(n - 1);
    for k in 1..n {
        let prev: Vec<f64> = x.column(k - 1).iter().cloned().collect();
        let curr: Vec<f64> = x.column(k).iter().cloned().collect();
        let r = delta_energy(em, &curr, &prev, u[k - 1], dt);
        if !r.is_finite() {
            return Err(Error::Domain(format!("physics_loss: non-finite residual at step {k}")));
        }
        residuals.push(r);
    }
    let loss = residuals.iter().map(|r| r * r).sum::<f64>() / (n - 1) as f64;
    Ok((loss, residuals))
}

/// Constraint kind per the physics-loss formulation: equality contributes
/// `h^2`, inequality contributes `ReLU(h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    Equality,
    Inequality,
}

/// A scalar constraint h(prediction, input) with optional analytic gradient
/// w.r.t. the prediction.
pub struct ConstraintSpec {
    pub kind: ConstraintKind,
    pub h: Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>,
    pub h_grad: Option<Arc<dyn Fn(&[f64], f64) -> Vec<f64> + Send + Sync>>,
}

/// Mean constraint loss over columns of a prediction matrix in physical
/// units.
pub fn constraint_loss(spec: &ConstraintSpec, pred: &DMatrix<f64>, u: &[f64]) -> f64 {
    let n = pred.ncols();
    if n == 0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for j in 0..n {
        let col: Vec<f64> = pred.column(j).iter().cloned().collect();
        let h = (spec.h)(&col, u.get(j).copied().unwrap_or(0.0));
        acc += match spec.kind {
            ConstraintKind::Equality => h * h,
            ConstraintKind::Inequality => h.max(0.0),
        };
    }
    acc / n as f64
}

/// Configuration of the composed loss
/// `L = (1 - lambda) L_error + lambda (L_phy + constraints)`.
pub struct ComposedLossConfig {
    pub lambda_phy: f64,
    pub energy: Arc<dyn EnergyModel>,
    pub constraints: Vec<ConstraintSpec>,
    pub dt: f64,
}

impl ComposedLossConfig {
    pub fn new(lambda_phy: f64, energy: Arc<dyn EnergyModel>, dt: f64) -> Self {
        if !(0.0..=1.0).contains(&lambda_phy) {
            log::warn!("lambda_phy = {lambda_phy} outside [0, 1]");
        }
        Self { lambda_phy, energy, constraints: Vec::new(), dt }
    }
}

/// Scalar standardization of the excitation channel inside the network
/// input matrix: `(row index, mean, std)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputChannel {
    pub row: usize,
    pub mean: f64,
    pub std: f64,
}

impl InputChannel {
    pub fn invert(&self, z: f64) -> f64 {
        self.mean + self.std * z
    }
}

/// The composed loss operating on standardized predictions. Predictions are
/// un-standardized through `target_std` before the energy terms are
/// evaluated; the gradient chains back through that map. The batch columns
/// are assumed to be consecutive time steps (the trainer guarantees this);
/// batches with fewer than two columns contribute no physics term.
pub struct ComposedLoss {
    pub cfg: ComposedLossConfig,
    pub target_std: Standardizer,
    /// Where the (standardized) excitation lives in the input matrix; when
    /// absent, u = 0 is assumed for the control-work term.
    pub input_u: Option<InputChannel>,
}

impl ComposedLoss {
    fn extract_u(&self, inputs: &DMatrix<f64>) -> Vec<f64> {
        match self.input_u {
            Some(ch) => (0..inputs.ncols()).map(|j| ch.invert(inputs[(ch.row, j)])).collect(),
            None => vec![0.0; inputs.ncols()],
        }
    }

    /// Full evaluation: (total, error term, physics term, gradient w.r.t.
    /// standardized predictions).
    pub fn eval_parts(
        &self,
        pred_std: &DMatrix<f64>,
        targets_std: &DMatrix<f64>,
        u_phys: &[f64],
    ) -> Result<(f64, f64, f64, DMatrix<f64>)> {
        if pred_std.shape() != targets_std.shape() {
            return Err(Error::Shape("composed_loss: prediction/target shape mismatch".into()));
        }
        let n = pred_std.ncols();
        let dim = pred_std.nrows();
        let lambda = self.cfg.lambda_phy;

        // data-fit term (Eq. mean squared error over samples)
        let nf = n.max(1) as f64;
        let diff = pred_std - targets_std;
        let l_error = diff.iter().map(|d| d * d).sum::<f64>() / nf;
        let grad_error = diff.map(|d| 2.0 * d / nf);

        // physics term on un-standardized predictions
        let pred_phys = self.target_std.invert_cols(pred_std);
        let mut l_phy = 0.0;
        let mut grad_phy = DMatrix::zeros(dim, n);
        if n >= 2 {
            let em = self.cfg.energy.as_ref();
            let cols: Vec<Vec<f64>> = (0..n)
                .map(|j| pred_phys.column(j).iter().cloned().collect())
                .collect();
            let npairs = (n - 1) as f64;
            for k in 1..n {
                let r = delta_energy(em, &cols[k], &cols[k - 1], u_phys[k - 1], self.cfg.dt);
                if !r.is_finite() {
                    return Err(Error::Domain(format!(
                        "composed_loss: non-finite residual at pair {k}"
                    )));
                }
                l_phy += r * r / npairs;
                let (g_prev, g_curr) = delta_energy_grad(em, &cols[k], &cols[k - 1], u_phys[k - 1]);
                let scale = 2.0 * r / npairs;
                for i in 0..dim {
                    grad_phy[(i, k - 1)] += scale * g_prev[i];
                    grad_phy[(i, k)] += scale * g_curr[i];
                }
            }
            for spec in &self.cfg.constraints {
                l_phy += constraint_eval(spec, &pred_phys, u_phys, &mut grad_phy)?;
            }
            // chain through x = mean + std * z
            for i in 0..dim {
                for j in 0..n {
                    grad_phy[(i, j)] *= self.target_std.std[i];
                }
            }
        }

        // endpoint identities are exact by construction
        let (total, grad) = if lambda == 0.0 {
            (l_error, grad_error)
        } else if lambda == 1.0 {
            (l_phy, grad_phy)
        } else {
            (
                (1.0 - lambda) * l_error + lambda * l_phy,
                grad_error.map(|g| (1.0 - lambda) * g) + grad_phy.map(|g| lambda * g),
            )
        };
        Ok((total, l_error, l_phy, grad))
    }
}

/// Accumulate one constraint's mean loss and gradient into `grad`.
fn constraint_eval(
    spec: &ConstraintSpec,
    pred_phys: &DMatrix<f64>,
    u: &[f64],
    grad: &mut DMatrix<f64>,
) -> Result<f64> {
    let n = pred_phys.ncols();
    if n == 0 {
        return Ok(0.0);
    }
    let nf = n as f64;
    let mut acc = 0.0;
    for j in 0..n {
        let col: Vec<f64> = pred_phys.column(j).iter().cloned().collect();
        let uj = u.get(j).copied().unwrap_or(0.0);
        let h = (spec.h)(&col, uj);
        let (value, dh_scale) = match spec.kind {
            ConstraintKind::Equality => (h * h, 2.0 * h),
            ConstraintKind::Inequality => {
                if h > 0.0 {
                    (h, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
        };
        acc += value / nf;
        if dh_scale != 0.0 {
            let hg = spec
                .h_grad
                .as_ref()
                .ok_or_else(|| {
                    Error::Config("composed_loss: constraint without gradient".into())
                })?;
            let g = hg(&col, uj);
            for i in 0..grad.nrows() {
                grad[(i, j)] += dh_scale * g[i] / nf;
            }
        }
    }
    Ok(acc)
}

impl Loss for ComposedLoss {
    fn eval(
        &self,
        pred: &DMatrix<f64>,
        targets: &DMatrix<f64>,
        inputs: &DMatrix<f64>,
    ) -> Result<LossValue> {
        let u = self.extract_u(inputs);
        let (total, error, physics, grad) = self.eval_parts(pred, targets, &u)?;
        Ok(LossValue { total, error, physics, grad })
    }
}

/// Per-step residual diagnostics CSV:
/// `k,dE_kin,dE_pot,W_con,W_diss,residual`.
pub fn residual_diagnostics_csv(
    em: &dyn EnergyModel,
    x: &DMatrix<f64>,
    u: &[f64],
    dt: f64,
) -> Result<String> {
    let n = x.ncols();
    if n < 2 {
        return Err(Error::Shape("residual diagnostics: need at least 2 samples".into()));
    }
    let mut out = String::from("k,dE_kin,dE_pot,W_con,W_diss,residual\n");
    for k in 1..n {
        let prev: Vec<f64> = x.column(k - 1).iter().cloned().collect();
        let curr: Vec<f64> = x.column(k).iter().cloned().collect();
        let d_kin = em.kinetic(&curr) - em.kinetic(&prev);
        let d_pot = em.potential(&curr) - em.potential(&prev);
        let w_con = em.control_work(&prev, &curr, u[k - 1]);
        let w_diss = em.dissipation_work(&prev, &curr);
        let r = delta_energy(em, &curr, &prev, u[k - 1], dt);
        out.push_str(&format!(
            "{k},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            d_kin, d_pot, w_con, w_diss, r
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::Standardizer;
    use crate::plants::{integrate, Degradation, PlantSpec};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn golf_em() -> GolfEnergy {
        golf_energy_model(GolfParams::table()).unwrap()
    }

    #[test]
    fn no_state_change_no_residual() {
        let em = golf_em();
        let x = [0.3, 0.0];
        assert_eq!(delta_energy(&em, &x, &x, 0.0, 1e-3), 0.0);
    }

    #[test]
    fn golf_reference_energies() {
        let em = golf_em();
        assert_eq!(em.kinetic(&[0.0, 0.0]), 0.0);
        assert_eq!(em.potential(&[0.0, 0.0]), 0.0);
        // potential at the upright position: 2 m g a
        assert_relative_eq!(
            em.potential(&[std::f64::consts::PI, 0.0]),
            4.8349923084,
            max_relative = 1e-12
        );
    }

    fn frictionless_golf() -> PlantSpec {
        let mut deg = Degradation::default();
        deg.params.insert("d".into(), 0.0);
        deg.params.insert("mu".into(), 0.0);
        crate::plants::degrade_spec(&PlantSpec::golf_table(), &deg).unwrap()
    }

    /// Max per-step |residual| along an unforced trajectory at the given dt.
    fn golf_conservation_residual(dt: f64) -> f64 {
        let spec = frictionless_golf();
        let model = spec.model().unwrap();
        let n = (1.0 / dt).round() as usize;
        let traj = integrate(&model, &[1.0, 0.0], &|_| 0.0, dt, n).unwrap();
        let params = match spec {
            PlantSpec::Golf { params, .. } => params,
            _ => unreachable!(),
        };
        let em = golf_energy_model(params).unwrap();
        let mut max_r: f64 = 0.0;
        for k in 1..traj.len() {
            let prev = [traj.x[(k - 1, 0)], traj.x[(k - 1, 1)]];
            let curr = [traj.x[(k, 0)], traj.x[(k, 1)]];
            max_r = max_r.max(delta_energy(&em, &curr, &prev, 0.0, dt).abs());
        }
        max_r
    }

    #[test]
    fn golf_conservation_order() {
        let r1 = golf_conservation_residual(1e-2);
        let r2 = golf_conservation_residual(5e-3);
        assert!(r1 < 10.0 * 1e-2f64.powi(3), "residual {r1}");
        let slope = (r1 / r2).log2();
        assert!(slope >= 2.8, "empirical order {slope}");
    }

    fn valve_conservation_residual(dt: f64) -> f64 {
        let params = ValveParams { d_v: 1e-12, ..ValveParams::table() };
        // d_v must be positive for validation; effectively undamped
        let em = valve_energy_model(params).unwrap();
        let spec = PlantSpec::Valve {
            params,
            limit_placement: Default::default(),
        };
        let model = spec.model().unwrap();
        let n = (2e-3 / dt).round() as usize;
        let traj = integrate(&model, &[1e-4, 0.0], &|_| 0.0, dt, n).unwrap();
        let mut max_r: f64 = 0.0;
        for k in 1..traj.len() {
            let prev = [traj.x[(k - 1, 0)], traj.x[(k - 1, 1)]];
            let curr = [traj.x[(k, 0)], traj.x[(k, 1)]];
            max_r = max_r.max(delta_energy(&em, &curr, &prev, 0.0, dt).abs());
        }
        max_r
    }

    #[test]
    fn valve_conservation_order() {
        let r1 = valve_conservation_residual(5e-5);
        let r2 = valve_conservation_residual(2.5e-5);
        let slope = (r1 / r2).log2();
        assert!(slope >= 2.8, "empirical order {slope} ({r1} vs {r2})");
    }

    #[test]
    fn valve_steady_state_residual_zero() {
        let params = ValveParams::table();
        let em = valve_energy_model(params).unwrap();
        let u = 1e-3;
        let x = [params.k_v * u, 0.0];
        assert_eq!(delta_energy(&em, &x, &x, u, 5e-4), 0.0);
        assert_eq!(em.kinetic(&[0.0, 0.0]), 0.0);
        assert_eq!(em.potential(&[0.0, 0.0]), 0.0);
    }

    /// Mean |residual| along a forced, damped true-model trajectory.
    fn forced_mean_residual_golf(dt: f64) -> f64 {
        let spec = PlantSpec::golf_table();
        let model = spec.model().unwrap();
        let n = (2.0 / dt).round() as usize;
        let u = |t: f64| 0.4 * (2.0 * std::f64::consts::PI * 0.5 * t).sin();
        let traj = integrate(&model, &[0.0, 0.0], &u, dt, n).unwrap();
        let em = golf_em();
        let (loss, residuals) =
            physics_loss(&em, &traj.x.transpose(), &traj.u, dt).unwrap();
        assert!(loss.is_finite());
        residuals.iter().map(|r| r.abs()).sum::<f64>() / residuals.len() as f64
    }

    #[test]
    fn forced_golf_residual_below_pinned_tolerance() {
        // pinned from a one-time reference run at dt = 1e-3 (observed
        // 2.6e-8), with margin
        let mean = forced_mean_residual_golf(1e-3);
        assert!(mean < 1e-7, "mean |residual| = {mean:e}");
    }

    #[test]
    fn forced_valve_residual_below_pinned_tolerance() {
        let params = ValveParams::table();
        let spec = PlantSpec::Valve { params, limit_placement: Default::default() };
        let model = spec.model().unwrap();
        let dt = 2e-5;
        let n = 2000;
        let u = |t: f64| if t >= 0.004 { 2e-3 } else { 0.0 };
        let traj = integrate(&model, &[0.0, 0.0], &u, dt, n).unwrap();
        let em = valve_energy_model(params).unwrap();
        let (_, residuals) = physics_loss(&em, &traj.x.transpose(), &traj.u, dt).unwrap();
        let mean = residuals.iter().map(|r| r.abs()).sum::<f64>() / residuals.len() as f64;
        // pinned from a one-time reference run (observed 6.5e-9), with margin
        assert!(mean < 1e-7, "mean |residual| = {mean:e}");
    }

    #[test]
    fn dissipation_nonnegative_on_damped_trajectory() {
        let model = PlantSpec::golf_table().model().unwrap();
        let u = |t: f64| 0.3 * (2.0 * std::f64::consts::PI * 0.4 * t).sin();
        let traj = integrate(&model, &[0.0, 0.0], &u, 1e-3, 3000).unwrap();
        let em = golf_em();
        for k in 1..traj.len() {
            let prev = [traj.x[(k - 1, 0)], traj.x[(k - 1, 1)]];
            let curr = [traj.x[(k, 0)], traj.x[(k, 1)]];
            let w = em.dissipation_work(&prev, &curr);
            // trapezoid over a within-step velocity sign change can dip
            // slightly negative; anything beyond quadrature error is a bug
            assert!(w >= -1e-7, "step {k}: dissipation {w}");
        }
    }

    #[test]
    fn physics_loss_rejects_single_sample() {
        let em = golf_em();
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 0.0]);
        assert!(physics_loss(&em, &x, &[], 1e-3).is_err());
    }

    #[test]
    fn physics_loss_constant_state_zero() {
        let em = golf_em();
        let x = DMatrix::from_fn(2, 5, |i, _| if i == 0 { 0.4 } else { 0.0 });
        let (loss, residuals) = physics_loss(&em, &x, &[0.0; 4], 1e-3).unwrap();
        assert_eq!(loss, 0.0);
        assert!(residuals.iter().all(|r| *r == 0.0));
    }

    #[test]
    fn physics_loss_ignores_targets() {
        // by signature: no targets are passed at all; the composed loss
        // physics term must not change when targets change
        let loss = composed(0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pred = DMatrix::from_fn(2, 6, |_, _| rng.gen_range(-1.0..1.0));
        let t1 = DMatrix::from_fn(2, 6, |_, _| rng.gen_range(-1.0..1.0));
        let t2 = DMatrix::from_fn(2, 6, |_, _| rng.gen_range(-1.0..1.0));
        let u = vec![0.1; 6];
        let (_, _, phy1, _) = loss.eval_parts(&pred, &t1, &u).unwrap();
        let (_, _, phy2, _) = loss.eval_parts(&pred, &t2, &u).unwrap();
        assert_eq!(phy1, phy2);
    }

    fn composed(lambda: f64) -> ComposedLoss {
        let em = Arc::new(golf_em());
        ComposedLoss {
            cfg: ComposedLossConfig::new(lambda, em, 1e-3),
            target_std: Standardizer { mean: vec![0.1, -0.2], std: vec![0.7, 1.3] },
            input_u: None,
        }
    }

    #[test]
    fn composed_endpoints_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pred = DMatrix::from_fn(2, 8, |_, _| rng.gen_range(-1.0..1.0));
        let targets = DMatrix::from_fn(2, 8, |_, _| rng.gen_range(-1.0..1.0));
        let u = vec![0.2; 8];

        let l0 = composed(0.0);
        let (total, err, _, grad) = l0.eval_parts(&pred, &targets, &u).unwrap();
        assert_eq!(total, err);
        let mse = crate::nnet::MseLoss;
        let lv = crate::nnet::Loss::eval(&mse, &pred, &targets, &pred).unwrap();
        assert_eq!(total, lv.total);
        assert_eq!(grad, lv.grad);

        let l1 = composed(1.0);
        let (total1, _, phy1, _) = l1.eval_parts(&pred, &targets, &u).unwrap();
        assert_eq!(total1, phy1);
    }

    #[test]
    fn composed_midpoint_and_gradient() {
        let loss = composed(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // keep velocities away from the friction sign discontinuity
        let pred = DMatrix::from_fn(2, 6, |i, _| {
            if i == 1 {
                1.0 + rng.gen_range(0.0..1.0)
            } else {
                rng.gen_range(-1.0..1.0)
            }
        });
        let targets = DMatrix::from_fn(2, 6, |_, _| rng.gen_range(-1.0..1.0));
        let u = vec![0.3; 6];
        let (total, err, phy, grad) = loss.eval_parts(&pred, &targets, &u).unwrap();
        assert_relative_eq!(total, 0.5 * err + 0.5 * phy, max_relative = 1e-14);

        // central finite differences over every prediction entry
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..6 {
                let mut plus = pred.clone();
                plus[(i, j)] += h;
                let mut minus = pred.clone();
                minus[(i, j)] -= h;
                let (tp, ..) = loss.eval_parts(&plus, &targets, &u).unwrap();
                let (tm, ..) = loss.eval_parts(&minus, &targets, &u).unwrap();
                let fd = (tp - tm) / (2.0 * h);
                let an = grad[(i, j)];
                assert!(
                    (an - fd).abs() / (an.abs() + 1e-8) < 1e-6,
                    "entry ({i},{j}): analytic {an}, fd {fd}"
                );
            }
        }
    }

    #[test]
    fn constraint_losses() {
        let zero = ConstraintSpec {
            kind: ConstraintKind::Equality,
            h: Arc::new(|_, _| 0.0),
            h_grad: None,
        };
        let pred = DMatrix::from_element(2, 4, 0.5);
        assert_eq!(constraint_loss(&zero, &pred, &[0.0; 4]), 0.0);

        let inside = ConstraintSpec {
            kind: ConstraintKind::Inequality,
            h: Arc::new(|y, _| y[0].abs() - 1.0),
            h_grad: None,
        };
        assert_eq!(constraint_loss(&inside, &pred, &[0.0; 4]), 0.0);

        let offset = ConstraintSpec {
            kind: ConstraintKind::Equality,
            h: Arc::new(|y, _| y[0] - 2.0),
            h_grad: None,
        };
        let pred3 = DMatrix::from_element(2, 4, 3.0);
        assert_eq!(constraint_loss(&offset, &pred3, &[0.0; 4]), 1.0);
    }

    #[test]
    fn diagnostics_csv_schema() {
        let em = golf_em();
        let x = DMatrix::from_row_slice(2, 3, &[0.0, 0.1, 0.2, 0.0, 0.5, 0.4]);
        let csv = residual_diagnostics_csv(&em, &x, &[0.1, 0.1], 1e-3).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "k,dE_kin,dE_pot,W_con,W_diss,residual");
        assert_eq!(lines.count(), 2);
    }
}
