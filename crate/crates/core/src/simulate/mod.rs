//! Constrained forward simulation, reference trajectories, validation
//! replays, the computed-torque tracking experiment and excitation design.

mod excitation;
mod forward;
mod reference;
mod tracking;
mod validate;

pub use excitation::{design_excitation, excitation_condition, ExcitationConfig, ExcitationResult};
pub use forward::{
    augmented_mass_matrix, forward_dynamics, smooth_friction, total_energy, ForwardConfig,
    ForwardSolution,
};
pub use reference::{
    parse_reference_spec, ReferenceKind, ReferenceTrajectory, LIMIT_CHECK_RATE_HZ,
};
pub use tracking::{
    run_tracking, run_with, tracking_metrics, ComputedTorque, GainSet, TrackingMetrics, TrackingRun,
};
pub use validate::{
    l2_norm, validate_forward, validate_torque, ForwardValidation, SegmentResult, TorqueValidation,
    DEFAULT_SEGMENT_LEN,
};

use nalgebra::{DMatrix, DVector};

use crate::constraint::{constraint_jacobian, constraint_value, projection_matrix, solve_ik};
use crate::error::{Error, Result};
use crate::model::{RobotModel, StandardParams};
use crate::signal::{Stage, TrajectoryDataset};

/// Constraint residual above which the state is projected back onto the
/// constraint manifold after an output interval.
pub const PROJECTION_TRIGGER: f64 = 1e-8;
/// Largest constraint residual tolerated along an accepted trajectory.
pub const CONSTRAINT_TOL: f64 = 1e-6;
const MIN_STEP: f64 = 1e-12;

/// Time stepping scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Integrator {
    /// Classical Runge–Kutta with `substeps` equal steps per output interval.
    Rk4 { substeps: usize },
    /// Dormand–Prince 5(4) with error control.
    Rk45 { rtol: f64, atol: f64 },
}

impl Default for Integrator {
    fn default() -> Self {
        Integrator::Rk45 {
            rtol: 1e-8,
            atol: 1e-10,
        }
    }
}

/// Simulation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub integrator: Integrator,
    /// Logging period (s).
    pub dt_output: f64,
    /// Simulated duration (s).
    pub horizon: f64,
    pub forward: ForwardConfig,
    /// Re-solve the loop closure when the residual exceeds
    /// [`PROJECTION_TRIGGER`].
    pub project: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            integrator: Integrator::default(),
            dt_output: 1e-3,
            horizon: 1.0,
            forward: ForwardConfig::default(),
            project: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.dt_output) {
            return Err(Error::InvalidArgument("dt_output must be positive".into()));
        }
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return Err(Error::InvalidArgument("horizon must be nonnegative".into()));
        }
        if !ok(self.forward.sign_smoothing_eps) {
            return Err(Error::InvalidArgument(
                "sign smoothing width must be positive".into(),
            ));
        }
        if !(self.forward.baumgarte_alpha >= 0.0 && self.forward.baumgarte_beta >= 0.0) {
            return Err(Error::InvalidArgument(
                "Baumgarte gains must be nonnegative".into(),
            ));
        }
        match self.integrator {
            Integrator::Rk4 { substeps } if substeps == 0 => Err(Error::InvalidArgument(
                "RK4 needs at least one substep".into(),
            )),
            Integrator::Rk45 { rtol, atol } if !ok(rtol) || !ok(atol) => Err(
                Error::InvalidArgument("RK45 tolerances must be positive".into()),
            ),
            _ => Ok(()),
        }
    }

    /// Number of logged intervals: `round(horizon / dt_output)`.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt_output + 1e-9).floor() as usize
    }
}

/// Actuator torques as a function of time and state.
pub trait TorqueSource {
    fn torque(&mut self, t: f64, q: &DVector<f64>, qd: &DVector<f64>) -> Result<DVector<f64>>;

    /// `Some(h)` when the torque is held constant over intervals of length
    /// `h` starting at `t = 0`; it is then evaluated once per interval, at
    /// the interval start.
    fn hold_period(&self) -> Option<f64> {
        None
    }
}

impl<F> TorqueSource for F
where
    F: FnMut(f64, &DVector<f64>, &DVector<f64>) -> Result<DVector<f64>>,
{
    fn torque(&mut self, t: f64, q: &DVector<f64>, qd: &DVector<f64>) -> Result<DVector<f64>> {
        self(t, q, qd)
    }
}

/// Zero-order hold over a recorded torque log (one row per sample).
#[derive(Debug, Clone)]
pub struct ZohTorque {
    pub dt: f64,
    pub u: DMatrix<f64>,
}

impl ZohTorque {
    pub fn new(dt: f64, u: DMatrix<f64>) -> Result<Self> {
        if !(dt > 0.0) || u.nrows() == 0 {
            return Err(Error::InvalidArgument(
                "ZOH needs a positive period and at least one sample".into(),
            ));
        }
        Ok(Self { dt, u })
    }

    /// Row held at time `t` (clamped to the log).
    pub fn index_at(&self, t: f64) -> usize {
        let k = (t / self.dt + 1e-9).floor().max(0.0) as usize;
        k.min(self.u.nrows() - 1)
    }
}

impl TorqueSource for ZohTorque {
    fn torque(&mut self, t: f64, _q: &DVector<f64>, _qd: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.u.row(self.index_at(t)).transpose())
    }

    fn hold_period(&self) -> Option<f64> {
        Some(self.dt)
    }
}

/// Torques that are identically zero.
pub fn zero_torque(n_a: usize) -> impl TorqueSource {
    move |_t: f64, _q: &DVector<f64>, _qd: &DVector<f64>| Ok(DVector::zeros(n_a))
}

struct Rhs<'a> {
    model: &'a RobotModel,
    theta: &'a StandardParams,
    cfg: &'a ForwardConfig,
}

impl Rhs<'_> {
    fn eval(&self, y: &DVector<f64>, u: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let n = self.model.n();
        let q = y.rows(0, n).into_owned();
        let qd = y.rows(n, n).into_owned();
        let sol = forward_dynamics(self.model, self.theta, &q, &qd, u, self.cfg)?;
        let mut dy = DVector::zeros(2 * n);
        dy.rows_mut(0, n).copy_from(&qd);
        dy.rows_mut(n, n).copy_from(&sol.qdd);
        Ok((dy, sol.qdd))
    }
}

fn split(y: &DVector<f64>, n: usize) -> (DVector<f64>, DVector<f64>) {
    (y.rows(0, n).into_owned(), y.rows(n, n).into_owned())
}

fn torque_at(
    source: &mut dyn TorqueSource,
    held: Option<&DVector<f64>>,
    t: f64,
    y: &DVector<f64>,
    n: usize,
) -> Result<DVector<f64>> {
    match held {
        Some(u) => Ok(u.clone()),
        None => {
            let (q, qd) = split(y, n);
            source.torque(t, &q, &qd)
        }
    }
}

fn rk4_step(
    rhs: &Rhs,
    source: &mut dyn TorqueSource,
    held: Option<&DVector<f64>>,
    t: f64,
    y: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>> {
    let n = rhs.model.n();
    let mut f = |tt: f64, yy: &DVector<f64>| -> Result<DVector<f64>> {
        let u = torque_at(source, held, tt, yy, n)?;
        Ok(rhs.eval(yy, &u)?.0)
    };
    let k1 = f(t, y)?;
    let k2 = f(t + 0.5 * h, &(y + &k1 * (0.5 * h)))?;
    let k3 = f(t + 0.5 * h, &(y + &k2 * (0.5 * h)))?;
    let k4 = f(t + h, &(y + &k3 * h))?;
    Ok(y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

// Dormand–Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Advances `y` from `t0` to `t1` with error-controlled steps; `h` carries
/// the step-size suggestion between calls.
#[allow(clippy::too_many_arguments)]
fn rk45_interval(
    rhs: &Rhs,
    source: &mut dyn TorqueSource,
    held: Option<&DVector<f64>>,
    t0: f64,
    t1: f64,
    y: &DVector<f64>,
    h: &mut f64,
    rtol: f64,
    atol: f64,
) -> Result<DVector<f64>> {
    let n = rhs.model.n();
    let mut t = t0;
    let mut y = y.clone();
    let span = t1 - t0;
    *h = h.min(span);
    let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);
    while t1 - t > 1e-12 * span.max(1.0) {
        let step = h.min(t1 - t);
        if step < MIN_STEP {
            return Err(Error::Integration {
                t,
                reason: format!("step size underflow ({step:e} s)"),
            });
        }
        k.clear();
        for s in 0..7 {
            let mut ys = y.clone();
            for (r, kr) in k.iter().enumerate() {
                if DP_A[s][r] != 0.0 {
                    ys += kr * (step * DP_A[s][r]);
                }
            }
            let u = torque_at(source, held, t + DP_C[s] * step, &ys, n)?;
            k.push(rhs.eval(&ys, &u)?.0);
        }
        let mut y5 = y.clone();
        let mut err = 0.0f64;
        for s in 0..7 {
            y5 += &k[s] * (step * DP_B5[s]);
        }
        for i in 0..y.len() {
            let e: f64 = (0..7).map(|s| (DP_B5[s] - DP_B4[s]) * k[s][i]).sum::<f64>() * step;
            let scale = atol + rtol * y[i].abs().max(y5[i].abs());
            err = err.max((e / scale).abs());
        }
        if !err.is_finite() {
            return Err(Error::Integration {
                t,
                reason: "non-finite state".into(),
            });
        }
        if err <= 1.0 {
            t += step;
            y = y5;
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        // keep the suggestion from collapsing onto a clipped final step
        *h = (step * factor).min(span.max(step));
    }
    Ok(y)
}

/// Brings `(q, q̇)` back onto the constraint manifold when it has drifted.
fn project_state(model: &RobotModel, y: &mut DVector<f64>, t: f64) -> Result<()> {
    let n = model.n();
    let (q, qd) = split(y, n);
    let c = constraint_value(model, &q);
    if c.amax() <= PROJECTION_TRIGGER {
        return Ok(());
    }
    let qa = model.actuated_part(&q);
    let ik = solve_ik(model, &qa, &model.unactuated_part(&q)).map_err(|e| Error::Integration {
        t,
        reason: format!("constraint projection failed: {e}"),
    })?;
    let q_new = model.assemble(&qa, &ik.qu);
    let g = projection_matrix(model, &q_new).map_err(|e| Error::Integration {
        t,
        reason: format!("constraint projection failed: {e}"),
    })?;
    let qd_new = g * model.actuated_part(&qd);
    y.rows_mut(0, n).copy_from(&q_new);
    y.rows_mut(n, n).copy_from(&qd_new);
    Ok(())
}

/// Checks that `(q, q̇)` satisfies the loop closure at position and velocity
/// level within [`CONSTRAINT_TOL`].
pub fn check_feasible(model: &RobotModel, q: &DVector<f64>, qd: &DVector<f64>) -> Result<()> {
    if q.len() != model.n() || qd.len() != model.n() {
        return Err(Error::DimensionMismatch(format!(
            "initial state must have {} joints",
            model.n()
        )));
    }
    if model.n_c() == 0 {
        return Ok(());
    }
    let c = constraint_value(model, q).amax();
    let v = (constraint_jacobian(model, q) * qd).amax();
    if !(c <= CONSTRAINT_TOL && v <= CONSTRAINT_TOL) {
        return Err(Error::Validation(format!(
            "initial state violates the loop closure (|c| = {c:e}, |J q̇| = {v:e})"
        )));
    }
    Ok(())
}

/// Integrates the constrained dynamics from `(q0, q̇0)` and logs every
/// `dt_output`. The result is a raw-stage dataset whose `q`, `qd`, `qdd` and
/// `qdda` channels hold the simulated truth; `u` holds the torque applied at
/// each sample time.
pub fn integrate(
    model: &RobotModel,
    theta: &StandardParams,
    q0: &DVector<f64>,
    qd0: &DVector<f64>,
    source: &mut dyn TorqueSource,
    cfg: &SimConfig,
) -> Result<TrajectoryDataset> {
    cfg.validate()?;
    if theta.len() != model.n_params() {
        return Err(Error::DimensionMismatch(format!(
            "theta has {} entries, model needs {}",
            theta.len(),
            model.n_params()
        )));
    }
    check_feasible(model, q0, qd0)?;
    let hold = source.hold_period();
    if let Some(h) = hold {
        if ((h - cfg.dt_output) / cfg.dt_output).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "torque hold period {h} s differs from the output period {} s",
                cfg.dt_output
            )));
        }
    }
    let n = model.n();
    let na = model.n_a();
    let steps = cfg.steps();
    let rows = steps + 1;
    let rhs = Rhs {
        model,
        theta,
        cfg: &cfg.forward,
    };
    let mut t_log = Vec::with_capacity(rows);
    let mut q_log = DMatrix::zeros(rows, n);
    let mut qd_log = DMatrix::zeros(rows, n);
    let mut qdd_log = DMatrix::zeros(rows, n);
    let mut u_log = DMatrix::zeros(rows, na);
    let mut y = DVector::zeros(2 * n);
    y.rows_mut(0, n).copy_from(q0);
    y.rows_mut(n, n).copy_from(qd0);
    let mut h_suggest = cfg.dt_output;
    let can_project = cfg.project && model.n_c() > 0 && model.is_fully_actuated();
    for i in 0..rows {
        let t = i as f64 * cfg.dt_output;
        let (q, qd) = split(&y, n);
        let u = source.torque(t, &q, &qd)?;
        if u.len() != na {
            return Err(Error::DimensionMismatch(format!(
                "torque source returned {} entries, expected {na}",
                u.len()
            )));
        }
        let (_, qdd) = rhs.eval(&y, &u).map_err(|e| Error::Integration {
            t,
            reason: e.to_string(),
        })?;
        t_log.push(t);
        q_log.set_row(i, &q.transpose());
        qd_log.set_row(i, &qd.transpose());
        qdd_log.set_row(i, &qdd.transpose());
        u_log.set_row(i, &u.transpose());
        if i == steps {
            break;
        }
        let held = hold.map(|_| u.clone());
        let t1 = (i + 1) as f64 * cfg.dt_output;
        y = match cfg.integrator {
            Integrator::Rk4 { substeps } => {
                let h = cfg.dt_output / substeps as f64;
                let mut yy = y.clone();
                for s in 0..substeps {
                    yy = rk4_step(&rhs, source, held.as_ref(), t + s as f64 * h, &yy, h)?;
                }
                yy
            }
            Integrator::Rk45 { rtol, atol } => rk45_interval(
                &rhs,
                source,
                held.as_ref(),
                t,
                t1,
                &y,
                &mut h_suggest,
                rtol,
                atol,
            )?,
        };
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration {
                t: t1,
                reason: "non-finite state".into(),
            });
        }
        if can_project {
            project_state(model, &mut y, t1)?;
        }
        if model.n_c() > 0 {
            let c = constraint_value(model, &y.rows(0, n).into_owned()).amax();
            if !(c <= CONSTRAINT_TOL) {
                return Err(Error::Integration {
                    t: t1,
                    reason: format!("constraint violation {c:e} exceeds {CONSTRAINT_TOL:e}"),
                });
            }
        }
    }
    let qdda = qdd_log.select_columns(model.actuated_indices());
    Ok(TrajectoryDataset {
        t: t_log,
        qa: q_log.select_columns(model.actuated_indices()),
        qda: qd_log.select_columns(model.actuated_indices()),
        u: u_log,
        qdda: Some(qdda),
        q: Some(q_log),
        qd: Some(qd_log),
        qdd: Some(qdd_log),
        ea: None,
        stage: Stage::Raw,
    })
}

/// Largest loop-closure residual over the logged configurations.
pub fn max_constraint_violation(model: &RobotModel, ds: &TrajectoryDataset) -> Result<f64> {
    let q = ds.q.as_ref().ok_or_else(|| Error::StageMismatch {
        expected: "lifted".into(),
        found: ds.stage.to_string(),
    })?;
    Ok((0..q.nrows())
        .map(|i| constraint_value(model, &q.row(i).transpose()).amax())
        .fold(0.0, f64::max))
}

/// Adds independent Gaussian noise to the measured channels.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NoiseLevels {
    pub qa: f64,
    pub qda: f64,
    pub u: f64,
}

impl NoiseLevels {
    pub fn is_zero(&self) -> bool {
        self.qa == 0.0 && self.qda == 0.0 && self.u == 0.0
    }

    /// Measured channels of `ds` with noise added, as a raw dataset.
    pub fn apply(&self, ds: &TrajectoryDataset, seed: u64) -> Result<TrajectoryDataset> {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        for (s, name) in [(self.qa, "qa"), (self.qda, "qda"), (self.u, "u")] {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "noise level for {name} must be nonnegative"
                )));
            }
        }
        let mut out = ds.raw_channels();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let std = Normal::new(0.0, 1.0).expect("unit normal");
        for (m, s) in [
            (&mut out.qa, self.qa),
            (&mut out.qda, self.qda),
            (&mut out.u, self.u),
        ] {
            // always draw so each channel's stream is independent of the others' levels
            for v in m.iter_mut() {
                *v += s * std.sample(&mut rng);
            }
        }
        Ok(out)
    }
}
