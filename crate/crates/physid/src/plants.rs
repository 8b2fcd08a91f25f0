//! Continuous-time plant definitions and fixed-step integration.
//!
//! Two plants are provided: a single-link golf robot with stick-slip friction
//! and a servo valve modelled as a second-order lag with optional slider
//! limits. Each plant exists in a "true" variant and, via [`make_prior`],
//! in degraded "prior" variants with overridden parameters or dropped terms.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the golf robot pendulum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GolfParams {
    /// Mass of the club head (kg).
    pub m: f64,
    /// Length from center of gravity to rotation axis (m).
    pub a: f64,
    /// Moment of inertia (kg m^2).
    pub j: f64,
    /// Damping constant (kg/s).
    pub d: f64,
    /// Distance from friction point to rotation axis (m).
    pub r: f64,
    /// Friction coefficient (-).
    pub mu: f64,
    /// Gravity (m/s^2).
    pub g: f64,
}

impl GolfParams {
    /// Nominal test-rig parameter set.
    pub fn table() -> Self {
        Self {
            m: 0.5241,
            a: 0.4702,
            j: 0.1445,
            d: 0.0132,
            r: 0.0245,
            mu: 1.5136,
            g: 9.81,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m > 0.0 && self.a > 0.0 && self.j > 0.0 && self.g > 0.0) {
            return Err(Error::Config("golf params: m, a, J, g must be positive".into()));
        }
        if self.d < 0.0 || self.r < 0.0 || self.mu < 0.0 {
            return Err(Error::Config("golf params: d, r, mu must be nonnegative".into()));
        }
        Ok(())
    }
}

/// How sign(x2) in the friction term is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrictionSign {
    /// Hard sign with sign(0) = 0.
    Hard,
    /// Smooth surrogate tanh(x2 / eps); keeps fixed-step integration stable
    /// near sticking.
    Smooth { eps: f64 },
}

impl Default for FrictionSign {
    fn default() -> Self {
        FrictionSign::Hard
    }
}

impl FrictionSign {
    pub fn eval(&self, v: f64) -> f64 {
        match self {
            FrictionSign::Hard => {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            FrictionSign::Smooth { eps } => (v / eps).tanh(),
        }
    }

    /// Derivative of the sign evaluation (zero for the hard variant).
    pub fn eval_deriv(&self, v: f64) -> f64 {
        match self {
            FrictionSign::Hard => 0.0,
            FrictionSign::Smooth { eps } => {
                let t = (v / eps).tanh();
                (1.0 - t * t) / eps
            }
        }
    }
}

/// Friction torque F_G of the golf robot.
pub fn golf_friction(x: &[f64], p: &GolfParams, sign: FrictionSign) -> f64 {
    let (x1, x2) = (x[0], x[1]);
    p.d * x2 + p.r * p.mu * sign.eval(x2) * (p.m * x2 * x2 * p.a + p.m * p.g * x1.cos())
}

/// Right-hand side of the golf robot dynamics.
pub fn golf_dynamics(x: &[f64], u: f64, p: &GolfParams) -> Result<[f64; 2]> {
    golf_dynamics_with(x, u, p, FrictionSign::Hard)
}

pub fn golf_dynamics_with(
    x: &[f64],
    u: f64,
    p: &GolfParams,
    sign: FrictionSign,
) -> Result<[f64; 2]> {
    if !x.iter().all(|v| v.is_finite()) || !u.is_finite() {
        return Err(Error::Domain("golf_dynamics: non-finite input".into()));
    }
    let f_g = golf_friction(x, p, sign);
    let acc = (-p.m * p.g * p.a * x[0].sin() - f_g + 4.0 * u) / p.j;
    Ok([x[1], acc])
}

/// Velocity/acceleration bounds of the valve slider.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValveLimits {
    /// Velocity bound (m/s).
    pub v_max: f64,
    /// Acceleration bound (m/s^2).
    pub a_max: f64,
}

/// Where the valve limits are applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LimitPlacement {
    /// Clamp state and acceleration inside the ODE right-hand side and
    /// project the state after every integration step.
    #[default]
    InsideOde,
    /// Only project the emitted state samples after each step.
    OutputSaturation,
}

/// Parameters of the servo valve second-order lag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValveParams {
    /// Natural frequency (Hz).
    pub f_v: f64,
    /// Damping ratio (-).
    pub d_v: f64,
    /// Gain factor (-).
    pub k_v: f64,
    /// Admissible input voltage interval (V).
    pub u_range: (f64, f64),
    /// Maximal slider position (m).
    pub y_max: f64,
    /// Supply pressure (bar); recorded but unused by the lag dynamics.
    pub p_supply: f64,
    /// Optional velocity/acceleration bounds.
    pub limits: Option<ValveLimits>,
}

impl ValveParams {
    /// Nominal parameter set, without limits.
    pub fn table() -> Self {
        Self {
            f_v: 350.0,
            d_v: 0.5,
            k_v: 0.1,
            u_range: (-10.0, 10.0),
            y_max: 4.2672e-4,
            p_supply: 280.0,
            limits: None,
        }
    }

    /// Nominal parameter set with default limit magnitudes. The magnitudes
    /// are placeholders at a plausible scale; tests only rely on clamping
    /// behaviour, never on these values.
    pub fn table_limited() -> Self {
        let mut p = Self::table();
        let v_max = 2.0 * p.y_max * 2.0 * std::f64::consts::PI * p.f_v * 0.05;
        p.limits = Some(ValveLimits {
            v_max,
            a_max: v_max * 2.0 * std::f64::consts::PI * p.f_v * 0.1,
        });
        p
    }

    /// Time constant T = 1 / (2 pi f).
    pub fn t_v(&self) -> f64 {
        1.0 / (2.0 * std::f64::consts::PI * self.f_v)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f_v > 0.0 && self.d_v > 0.0 && self.y_max > 0.0) {
            return Err(Error::Config("valve params: f_V, D_V, y_max must be positive".into()));
        }
        if self.u_range.0 >= self.u_range.1 {
            return Err(Error::Config("valve params: u_range must be a nonempty interval".into()));
        }
        if let Some(l) = self.limits {
            if !(l.v_max > 0.0 && l.a_max > 0.0) {
                return Err(Error::Config("valve params: limits must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Right-hand side of the valve dynamics. With limits configured the
/// position, velocity and returned acceleration are clamped.
pub fn valve_dynamics(x: &[f64], u: f64, p: &ValveParams) -> Result<[f64; 2]> {
    if !x.iter().all(|v| v.is_finite()) || !u.is_finite() {
        return Err(Error::Domain("valve_dynamics: non-finite input".into()));
    }
    let t = p.t_v();
    let mut x1 = x[0];
    let mut x2 = x[1];
    if let Some(l) = p.limits {
        x1 = x1.clamp(-p.y_max, p.y_max);
        x2 = x2.clamp(-l.v_max, l.v_max);
    }
    let mut acc = -(2.0 * p.d_v / t) * x2 - x1 / (t * t) + (p.k_v / (t * t)) * u;
    if let Some(l) = p.limits {
        acc = acc.clamp(-l.a_max, l.a_max);
    }
    Ok([x2, acc])
}

/// A parameterized continuous plant: derivative function plus an optional
/// per-step state projection (used to enforce hard state bounds).
#[derive(Clone)]
pub struct PlantModel {
    pub id: String,
    pub state_dim: usize,
    pub labels: Vec<String>,
    rhs: Arc<dyn Fn(&[f64], f64, f64) -> Result<Vec<f64>> + Send + Sync>,
    project: Option<Arc<dyn Fn(&mut [f64]) + Send + Sync>>,
}

impl PlantModel {
    pub fn new(
        id: impl Into<String>,
        state_dim: usize,
        labels: Vec<String>,
        rhs: impl Fn(&[f64], f64, f64) -> Result<Vec<f64>> + Send + Sync + 'static,
    ) -> Self {
        Self {
            id: id.into(),
            state_dim,
            labels,
            rhs: Arc::new(rhs),
            project: None,
        }
    }

    pub fn with_projection(mut self, f: impl Fn(&mut [f64]) + Send + Sync + 'static) -> Self {
        self.project = Some(Arc::new(f));
        self
    }

    /// Evaluate the state derivative at (x, u, t).
    pub fn rhs(&self, x: &[f64], u: f64, t: f64) -> Result<Vec<f64>> {
        (self.rhs)(x, u, t)
    }

    pub fn project(&self, x: &mut [f64]) {
        if let Some(p) = &self.project {
            p(x);
        }
    }
}

impl std::fmt::Debug for PlantModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PlantModel")
            .field("id", &self.id)
            .field("state_dim", &self.state_dim)
            .finish()
    }
}

/// Which plant a configuration refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    Golf,
    Valve,
}

/// A concrete plant configuration from which [`PlantModel`]s are built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "plant", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantSpec {
    Golf {
        params: GolfParams,
        #[serde(default)]
        friction_sign: FrictionSign,
    },
    Valve {
        params: ValveParams,
        #[serde(default)]
        limit_placement: LimitPlacement,
    },
}

impl PlantSpec {
    pub fn golf_table() -> Self {
        PlantSpec::Golf {
            params: GolfParams::table(),
            friction_sign: FrictionSign::default(),
        }
    }

    pub fn valve_table_limited() -> Self {
        PlantSpec::Valve {
            params: ValveParams::table_limited(),
            limit_placement: LimitPlacement::default(),
        }
    }

    pub fn kind(&self) -> PlantKind {
        match self {
            PlantSpec::Golf { .. } => PlantKind::Golf,
            PlantSpec::Valve { .. } => PlantKind::Valve,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PlantSpec::Golf { params, .. } => params.validate(),
            PlantSpec::Valve { params, .. } => params.validate(),
        }
    }

    /// Build the runnable plant model.
    pub fn model(&self) -> Result<PlantModel> {
        self.validate()?;
        match self.clone() {
            PlantSpec::Golf { params, friction_sign } => Ok(PlantModel::new(
                "golf",
                2,
                vec!["phi [rad]".into(), "phi_dot [rad/s]".into()],
                move |x, u, _t| {
                    let d = golf_dynamics_with(x, u, &params, friction_sign)?;
                    Ok(d.to_vec())
                },
            )),
            PlantSpec::Valve { params, limit_placement } => {
                let labels = vec!["y_V [m]".into(), "y_V_dot [m/s]".into()];
                let model = match limit_placement {
                    LimitPlacement::InsideOde => PlantModel::new(
                        "valve",
                        2,
                        labels,
                        move |x, u, _t| Ok(valve_dynamics(x, u, &params)?.to_vec()),
                    ),
                    LimitPlacement::OutputSaturation => {
                        // Dynamics without internal clamping; limits act only
                        // through the per-step projection.
                        let unlimited = ValveParams { limits: None, ..params };
                        PlantModel::new("valve", 2, labels, move |x, u, _t| {
                            Ok(valve_dynamics(x, u, &unlimited)?.to_vec())
                        })
                    }
                };
                if let Some(l) = params.limits {
                    let y_max = params.y_max;
                    Ok(model.with_projection(move |x| {
                        x[0] = x[0].clamp(-y_max, y_max);
                        x[1] = x[1].clamp(-l.v_max, l.v_max);
                    }))
                } else {
                    Ok(model)
                }
            }
        }
    }
}

/// Parameter overrides and dropped terms for building a prior model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Degradation {
    /// Absolute parameter overrides, e.g. {"mu": 0.0}.
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    /// Multiplicative parameter scalings, e.g. {"d": 0.5}.
    #[serde(default)]
    pub scale: BTreeMap<String, f64>,
    /// Terms to drop; currently only "limits" (valve).
    #[serde(default)]
    pub drop: Vec<String>,
    /// Replacement limit estimate (valve), e.g. imperfect measured bounds.
    #[serde(default)]
    pub limits: Option<ValveLimits>,
}

impl Degradation {
    pub fn is_empty(&self) -> bool {
        self == &Degradation::default()
    }
}

fn golf_field<'a>(p: &'a mut GolfParams, key: &str) -> Option<&'a mut f64> {
    match key {
        "m" => Some(&mut p.m),
        "a" => Some(&mut p.a),
        "j" => Some(&mut p.j),
        "d" => Some(&mut p.d),
        "r" => Some(&mut p.r),
        "mu" => Some(&mut p.mu),
        "g" => Some(&mut p.g),
        _ => None,
    }
}

fn valve_field<'a>(p: &'a mut ValveParams, key: &str) -> Option<&'a mut f64> {
    match key {
        "f_v" => Some(&mut p.f_v),
        "d_v" => Some(&mut p.d_v),
        "k_v" => Some(&mut p.k_v),
        "y_max" => Some(&mut p.y_max),
        _ => None,
    }
}

/// Apply a degradation to a plant spec, yielding the prior variant.
pub fn degrade_spec(spec: &PlantSpec, deg: &Degradation) -> Result<PlantSpec> {
    let mut out = spec.clone();
    match &mut out {
        PlantSpec::Golf { params, .. } => {
            for (k, v) in &deg.params {
                *golf_field(params, k)
                    .ok_or_else(|| Error::Config(format!("unknown golf parameter '{k}'")))? = *v;
            }
            for (k, s) in &deg.scale {
                let f = golf_field(params, k)
                    .ok_or_else(|| Error::Config(format!("unknown golf parameter '{k}'")))?;
                *f *= s;
            }
            if !deg.drop.is_empty() || deg.limits.is_some() {
                return Err(Error::Config("golf plant has no droppable terms or limits".into()));
            }
        }
        PlantSpec::Valve { params, .. } => {
            for (k, v) in &deg.params {
                *valve_field(params, k)
                    .ok_or_else(|| Error::Config(format!("unknown valve parameter '{k}'")))? = *v;
            }
            for (k, s) in &deg.scale {
                let f = valve_field(params, k)
                    .ok_or_else(|| Error::Config(format!("unknown valve parameter '{k}'")))?;
                *f *= s;
            }
            for term in &deg.drop {
                match term.as_str() {
                    "limits" => params.limits = None,
                    other => {
                        return Err(Error::Config(format!("unknown valve term '{other}'")));
                    }
                }
            }
            if let Some(l) = deg.limits {
                params.limits = Some(l);
            }
        }
    }
    Ok(out)
}

/// Build the prior plant model for a degradation of the given spec.
pub fn make_prior(spec: &PlantSpec, deg: &Degradation) -> Result<PlantModel> {
    degrade_spec(spec, deg)?.model()
}

/// Uniformly sampled trajectory: rows of `x` are time samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub u: Vec<f64>,
    pub x: DMatrix<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn dt(&self) -> f64 {
        if self.t.len() < 2 {
            0.0
        } else {
            self.t[1] - self.t[0]
        }
    }

    /// Serialize to CSV with header `t,u,x1,x2,...`, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let dim = self.x.ncols();
        let mut out = String::from("t,u");
        for i in 0..dim {
            out.push_str(&format!(",x{}", i + 1));
        }
        out.push('\n');
        for k in 0..self.len() {
            out.push_str(&format!("{:.16e},{:.16e}", self.t[k], self.u[k]));
            for i in 0..dim {
                out.push_str(&format!(",{:.16e}", self.x[(k, i)]));
            }
            out.push('\n');
        }
        out
    }
}

/// Fixed-step integration scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Rk4,
    Euler,
}

/// Integrate `model` from `x0` under the input signal `u_of_t` with a
/// zero-order hold per step. Returns `n_steps + 1` samples.
pub fn integrate(
    model: &PlantModel,
    x0: &[f64],
    u_of_t: &dyn Fn(f64) -> f64,
    dt: f64,
    n_steps: usize,
) -> Result<Trajectory> {
    integrate_scheme(model, x0, u_of_t, dt, n_steps, Scheme::Rk4)
}

pub fn integrate_scheme(
    model: &PlantModel,
    x0: &[f64],
    u_of_t: &dyn Fn(f64) -> f64,
    dt: f64,
    n_steps: usize,
    scheme: Scheme,
) -> Result<Trajectory> {
    if dt <= 0.0 {
        return Err(Error::Config("integrate: dt must be positive".into()));
    }
    if x0.len() != model.state_dim {
        return Err(Error::Shape(format!(
            "integrate: x0 has length {}, expected {}",
            x0.len(),
            model.state_dim
        )));
    }
    let dim = model.state_dim;
    let mut x = x0.to_vec();
    model.project(&mut x);
    let mut t_out = Vec::with_capacity(n_steps + 1);
    let mut u_out = Vec::with_capacity(n_steps + 1);
    let mut rows: Vec<f64> = Vec::with_capacity((n_steps + 1) * dim);
    let push = |rows: &mut Vec<f64>, x: &[f64]| rows.extend_from_slice(x);

    let mut t = 0.0;
    t_out.push(t);
    u_out.push(u_of_t(t));
    push(&mut rows, &x);

    for step in 0..n_steps {
        let u = u_of_t(t);
        let next = match scheme {
            Scheme::Euler => {
                let k1 = model.rhs(&x, u, t)?;
                x.iter().zip(&k1).map(|(xi, ki)| xi + dt * ki).collect::<Vec<_>>()
            }
            Scheme::Rk4 => {
                let k1 = model.rhs(&x, u, t)?;
                let x2: Vec<f64> =
                    x.iter().zip(&k1).map(|(xi, ki)| xi + 0.5 * dt * ki).collect();
                let k2 = model.rhs(&x2, u, t + 0.5 * dt)?;
                let x3: Vec<f64> =
                    x.iter().zip(&k2).map(|(xi, ki)| xi + 0.5 * dt * ki).collect();
                let k3 = model.rhs(&x3, u, t + 0.5 * dt)?;
                let x4: Vec<f64> = x.iter().zip(&k3).map(|(xi, ki)| xi + dt * ki).collect();
                let k4 = model.rhs(&x4, u, t + dt)?;
                (0..dim)
                    .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                    .collect()
            }
        };
        x = next;
        model.project(&mut x);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence {
                step: step + 1,
                detail: format!("non-finite state in plant '{}'", model.id),
            });
        }
        t = (step + 1) as f64 * dt;
        t_out.push(t);
        u_out.push(u_of_t(t));
        push(&mut rows, &x);
    }

    Ok(Trajectory {
        t: t_out,
        u: u_out,
        x: DMatrix::from_row_slice(n_steps + 1, dim, &rows),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn golf_equilibrium_is_exact() {
        let p = GolfParams::table();
        let d = golf_dynamics(&[0.0, 0.0], 0.0, &p).unwrap();
        assert_eq!(d, [0.0, 0.0]);
    }

    #[test]
    fn golf_torque_at_rest() {
        let p = GolfParams::table();
        let d = golf_dynamics(&[0.0, 0.0], 1.0, &p).unwrap();
        assert_eq!(d[0], 0.0);
        // 4 / J with J = 0.1445
        assert_relative_eq!(d[1], 27.68166089965398, max_relative = 1e-12);
    }

    #[test]
    fn golf_pinned_state() {
        // Independent hand evaluation at x = (pi/2, 1), u = 0.
        let p = GolfParams::table();
        let d = golf_dynamics(&[std::f64::consts::FRAC_PI_2, 1.0], 0.0, &p).unwrap();
        assert_relative_eq!(d[0], 1.0, max_relative = 1e-15);
        assert_relative_eq!(d[1], -16.8846687520237, max_relative = 1e-12);
    }

    #[test]
    fn golf_rejects_non_finite() {
        let p = GolfParams::table();
        assert!(golf_dynamics(&[f64::NAN, 0.0], 0.0, &p).is_err());
        assert!(golf_dynamics(&[0.0, 0.0], f64::INFINITY, &p).is_err());
    }

    #[test]
    fn valve_steady_state() {
        let p = ValveParams::table();
        let u = 2.0e-3;
        let d = valve_dynamics(&[p.k_v * u, 0.0], u, &p).unwrap();
        assert_relative_eq!(d[0], 0.0);
        assert!(d[1].abs() < 1e-9);
    }

    #[test]
    fn valve_gain_at_origin() {
        let p = ValveParams::table();
        let d = valve_dynamics(&[0.0, 0.0], 1.0, &p).unwrap();
        assert_eq!(d[0], 0.0);
        // K / T^2 with T = 1/(2 pi 350)
        assert_relative_eq!(d[1], 483610.6156533785, max_relative = 1e-12);
    }

    #[test]
    fn valve_velocity_clamped() {
        let p = ValveParams::table_limited();
        let v_max = p.limits.unwrap().v_max;
        let d = valve_dynamics(&[0.0, 10.0 * v_max], 0.0, &p).unwrap();
        assert_eq!(d[0], v_max);
    }

    #[test]
    fn valve_linearity_without_limits() {
        let p = ValveParams::table();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let u: f64 = rng.gen_range(-1.0..1.0);
            let alpha: f64 = rng.gen_range(-3.0..3.0);
            let d1 = valve_dynamics(&x, u, &p).unwrap();
            let xs = [alpha * x[0], alpha * x[1]];
            let d2 = valve_dynamics(&xs, alpha * u, &p).unwrap();
            for i in 0..2 {
                assert_relative_eq!(alpha * d1[i], d2[i], max_relative = 1e-12, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn rk4_zero_rhs_is_constant() {
        let model = PlantModel::new("zero", 2, vec![], |_x, _u, _t| Ok(vec![0.0, 0.0]));
        let traj = integrate(&model, &[1.5, -2.0], &|_| 0.0, 0.1, 10).unwrap();
        assert_eq!(traj.len(), 11);
        for k in 0..11 {
            assert_eq!(traj.x[(k, 0)], 1.5);
            assert_eq!(traj.x[(k, 1)], -2.0);
        }
    }

    fn oscillator() -> PlantModel {
        PlantModel::new("osc", 2, vec![], |x, _u, _t| Ok(vec![x[1], -x[0]]))
    }

    #[test]
    fn rk4_oscillator_accuracy() {
        let model = oscillator();
        let dt = 0.01;
        let n = (2.0 * std::f64::consts::PI / dt).round() as usize;
        let traj = integrate(&model, &[1.0, 0.0], &|_| 0.0, dt, n).unwrap();
        let max_err = traj
            .t
            .iter()
            .enumerate()
            .map(|(k, t)| (traj.x[(k, 0)] - t.cos()).abs())
            .fold(0.0, f64::max);
        // C * dt^4 with a generous constant
        assert!(max_err < 10.0 * dt.powi(4), "max_err = {max_err}");
    }

    #[test]
    fn rk4_convergence_order() {
        let model = oscillator();
        let t_end = 1.0;
        let err_at = |dt: f64| {
            let n = (t_end / dt).round() as usize;
            let traj = integrate(&model, &[1.0, 0.0], &|_| 0.0, dt, n).unwrap();
            let k = traj.len() - 1;
            ((traj.x[(k, 0)] - t_end.cos()).powi(2) + (traj.x[(k, 1)] + t_end.sin()).powi(2))
                .sqrt()
        };
        let e1 = err_at(0.02);
        let e2 = err_at(0.01);
        let ratio = e1 / e2;
        assert!(ratio > 12.0 && ratio < 20.0, "ratio = {ratio}");
    }

    #[test]
    fn euler_scheme_available() {
        let model = oscillator();
        let rk = integrate_scheme(&model, &[1.0, 0.0], &|_| 0.0, 0.01, 100, Scheme::Rk4).unwrap();
        let eu =
            integrate_scheme(&model, &[1.0, 0.0], &|_| 0.0, 0.01, 100, Scheme::Euler).unwrap();
        assert!((rk.x[(100, 0)] - eu.x[(100, 0)]).abs() > 1e-6);
    }

    #[test]
    fn divergence_reports_step() {
        let model = PlantModel::new("blowup", 1, vec![], |x, _u, _t| Ok(vec![x[0] * x[0]]));
        let err = integrate(&model, &[5.0], &|_| 0.0, 1.0, 50).unwrap_err();
        match err {
            Error::Divergence { step, .. } => assert!(step > 0 && step <= 50),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn limited_valve_trajectory_respects_bounds() {
        let spec = PlantSpec::valve_table_limited();
        let model = spec.model().unwrap();
        let (y_max, v_max) = match &spec {
            PlantSpec::Valve { params, .. } => (params.y_max, params.limits.unwrap().v_max),
            _ => unreachable!(),
        };
        let traj = integrate(&model, &[0.0, 0.0], &|t| if t >= 0.002 { 5.0 } else { 0.0 },
            5e-4, 400)
            .unwrap();
        for k in 0..traj.len() {
            assert!(traj.x[(k, 0)].abs() <= y_max + 1e-15);
            assert!(traj.x[(k, 1)].abs() <= v_max + 1e-15);
        }
        // the step actually drives the slider to its bound
        assert!(traj.x[(traj.len() - 1, 0)] > 0.9 * y_max);
    }

    #[test]
    fn make_prior_identity() {
        let spec = PlantSpec::golf_table();
        let true_model = spec.model().unwrap();
        let prior = make_prior(&spec, &Degradation::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = [rng.gen_range(-3.0..3.0), rng.gen_range(-5.0..5.0)];
            let u = rng.gen_range(-1.0..1.0);
            assert_eq!(
                true_model.rhs(&x, u, 0.0).unwrap(),
                prior.rhs(&x, u, 0.0).unwrap()
            );
        }
    }

    #[test]
    fn make_prior_drops_friction() {
        let spec = PlantSpec::golf_table();
        let mut deg = Degradation::default();
        deg.params.insert("mu".into(), 0.0);
        let prior = make_prior(&spec, &deg).unwrap();
        // with mu = 0 only viscous damping remains
        let p = GolfParams { mu: 0.0, ..GolfParams::table() };
        let want = golf_dynamics(&[0.4, 1.2], 0.3, &p).unwrap();
        assert_eq!(prior.rhs(&[0.4, 1.2], 0.3, 0.0).unwrap(), want.to_vec());
    }

    #[test]
    fn make_prior_drops_valve_limits() {
        let spec = PlantSpec::valve_table_limited();
        let deg = Degradation { drop: vec!["limits".into()], ..Default::default() };
        let degraded = degrade_spec(&spec, &deg).unwrap();
        match degraded {
            PlantSpec::Valve { params, .. } => assert!(params.limits.is_none()),
            _ => panic!(),
        }
    }

    #[test]
    fn make_prior_rejects_unknown_key() {
        let spec = PlantSpec::golf_table();
        let mut deg = Degradation::default();
        deg.params.insert("bogus".into(), 1.0);
        assert!(make_prior(&spec, &deg).is_err());
    }

    #[test]
    fn trajectory_csv_round_trip_precision() {
        let model = oscillator();
        let traj = integrate(&model, &[1.0, 0.0], &|_| 0.0, 0.1, 3).unwrap();
        let csv = traj.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "t,u,x1,x2");
        let row: Vec<f64> = lines
            .nth(2)
            .unwrap()
            .split(',')
            .map(|s| s.parse().unwrap())
            .collect();
        assert_eq!(row[2], traj.x[(2, 0)]);
    }
}
