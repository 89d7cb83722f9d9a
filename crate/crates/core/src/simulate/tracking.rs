//! Computed-torque tracking of a reference on the actuated joints.

use nalgebra::{DMatrix, DVector};

use super::{integrate, ReferenceTrajectory, SimConfig, TorqueSource};
use crate::constraint::{assembled_home, constrained_inverse_dynamics, lift_state};
use crate::error::{Error, Result};
use crate::model::{RobotModel, StandardParams};
use crate::signal::TrajectoryDataset;

/// Diagonal PD gains on the actuated joints.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSet {
    /// Position gains (N·m/rad).
    pub kp: Vec<f64>,
    /// Velocity gains (N·m·s/rad); not the regrouping matrix.
    pub kd_gain: Vec<f64>,
}

impl GainSet {
    pub fn uniform(n_a: usize, kp: f64, kd_gain: f64) -> Self {
        Self {
            kp: vec![kp; n_a],
            kd_gain: vec![kd_gain; n_a],
        }
    }

    /// Finite, nonnegative, one entry per joint. Zero gains are allowed for
    /// open-loop experiments; [`GainSet::is_positive_definite`] tells them
    /// apart.
    pub fn validate(&self, n_a: usize) -> Result<()> {
        if self.kp.len() != n_a || self.kd_gain.len() != n_a {
            return Err(Error::DimensionMismatch(format!(
                "gains must have {n_a} entries"
            )));
        }
        if self
            .kp
            .iter()
            .chain(&self.kd_gain)
            .any(|g| !(g.is_finite() && *g >= 0.0))
        {
            return Err(Error::InvalidArgument(
                "gains must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }

    pub fn is_positive_definite(&self) -> bool {
        self.kp.iter().chain(&self.kd_gain).all(|g| *g > 0.0)
    }
}

/// `u = Gᵀ(q_d)·W(s_d)·θ_ctrl + K_p·e_a + K_d·ė_a`, with `s_d` the lifted
/// desired state.
pub struct ComputedTorque<'a> {
    model: &'a RobotModel,
    theta_ctrl: &'a StandardParams,
    reference: &'a ReferenceTrajectory,
    gains: &'a GainSet,
    /// Unactuated part of the last lifted desired configuration.
    guess: DVector<f64>,
    hold: Option<f64>,
}

impl<'a> ComputedTorque<'a> {
    /// `start` seeds the IK branch of the desired state.
    pub fn new(
        model: &'a RobotModel,
        theta_ctrl: &'a StandardParams,
        reference: &'a ReferenceTrajectory,
        gains: &'a GainSet,
        start: &DVector<f64>,
    ) -> Result<Self> {
        gains.validate(model.n_a())?;
        let s0 = reference.lift(model, &[0.0], start)?;
        Ok(Self {
            model,
            theta_ctrl,
            reference,
            gains,
            guess: model.unactuated_part(&s0[0].q),
            hold: None,
        })
    }

    /// Evaluates the law once per `period` and holds it (digital controller).
    pub fn with_hold(mut self, period: f64) -> Self {
        self.hold = Some(period);
        self
    }

    /// Desired full state at `t`.
    pub fn desired(&mut self, t: f64) -> Result<crate::dynamics::JointState> {
        let (qa, qda, qdda) = self.reference.eval(t);
        let s = lift_state(self.model, &qa, &qda, &qdda, &self.guess)?;
        self.guess = self.model.unactuated_part(&s.q);
        Ok(s)
    }
}

impl TorqueSource for ComputedTorque<'_> {
    fn torque(&mut self, t: f64, q: &DVector<f64>, qd: &DVector<f64>) -> Result<DVector<f64>> {
        let sd = self.desired(t).map_err(|e| Error::Integration {
            t,
            reason: format!("desired state: {e}"),
        })?;
        let ff = constrained_inverse_dynamics(self.model, self.theta_ctrl, &sd)?;
        let e = self.model.actuated_part(&sd.q) - self.model.actuated_part(q);
        let ed = self.model.actuated_part(&sd.qd) - self.model.actuated_part(qd);
        Ok(DVector::from_iterator(
            ff.len(),
            (0..ff.len()).map(|k| ff[k] + self.gains.kp[k] * e[k] + self.gains.kd_gain[k] * ed[k]),
        ))
    }

    fn hold_period(&self) -> Option<f64> {
        self.hold
    }
}

/// Mean and maximum of `|e_a|` per actuated joint, in degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingMetrics {
    pub mean_deg: Vec<f64>,
    pub max_deg: Vec<f64>,
}

/// Summarizes a tracking-error log (one row per sample, radians).
pub fn tracking_metrics(ea: &DMatrix<f64>) -> Result<TrackingMetrics> {
    if ea.nrows() == 0 {
        return Err(Error::InvalidArgument("empty tracking log".into()));
    }
    let n = ea.nrows() as f64;
    let cols = 0..ea.ncols();
    Ok(TrackingMetrics {
        mean_deg: cols
            .clone()
            .map(|j| ea.column(j).iter().map(|e| e.abs()).sum::<f64>() / n)
            .map(f64::to_degrees)
            .collect(),
        max_deg: cols.map(|j| ea.column(j).amax().to_degrees()).collect(),
    })
}

/// Closed-loop log plus its metrics.
#[derive(Debug, Clone)]
pub struct TrackingRun {
    /// Plant trajectory with `ea` filled.
    pub log: TrajectoryDataset,
    pub metrics: TrackingMetrics,
}

/// Simulates the `theta_true` plant under computed torque with feedforward
/// from `theta_ctrl`, starting on the desired state at `t = 0`. `start` seeds
/// the IK branch (the assembled home by default).
pub fn run_tracking(
    model: &RobotModel,
    theta_true: &StandardParams,
    theta_ctrl: &StandardParams,
    reference: &ReferenceTrajectory,
    gains: &GainSet,
    cfg: &SimConfig,
    start: Option<&DVector<f64>>,
) -> Result<TrackingRun> {
    let start = match start {
        Some(s) => s.clone(),
        None => assembled_home(model)?,
    };
    let mut ctrl = ComputedTorque::new(model, theta_ctrl, reference, gains, &start)?;
    run_with(model, theta_true, &mut ctrl, cfg)
}

/// As [`run_tracking`] with a prepared controller.
pub fn run_with(
    model: &RobotModel,
    theta_true: &StandardParams,
    ctrl: &mut ComputedTorque,
    cfg: &SimConfig,
) -> Result<TrackingRun> {
    let s0 = ctrl.desired(0.0)?;
    let reference = ctrl.reference;
    let mut log = integrate(model, theta_true, &s0.q, &s0.qd, ctrl, cfg)?;
    let mut ea = DMatrix::zeros(log.len(), model.n_a());
    for (i, &t) in log.t.iter().enumerate() {
        let (qa_d, _, _) = reference.eval(t);
        ea.set_row(i, &(qa_d - log.qa.row(i).transpose()).transpose());
    }
    let metrics = tracking_metrics(&ea)?;
    log.ea = Some(ea);
    Ok(TrackingRun { log, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{inverse_dynamics, regressor};
    use crate::fixtures;
    use crate::regroup::{analyze, sample_states};

    #[test]
    fn metrics_examples() {
        let m = tracking_metrics(&DMatrix::from_element(5, 1, 0.0174533)).unwrap();
        assert!((m.mean_deg[0] - 1.0).abs() < 1e-5 && (m.max_deg[0] - 1.0).abs() < 1e-5);
        let z = tracking_metrics(&DMatrix::zeros(4, 2)).unwrap();
        assert_eq!(z.mean_deg, vec![0.0, 0.0]);
        assert_eq!(z.max_deg, vec![0.0, 0.0]);
        let x = 0.02;
        let n = 100001;
        let saw = DMatrix::from_fn(n, 1, |i, _| -x * i as f64 / (n - 1) as f64);
        let s = tracking_metrics(&saw).unwrap();
        assert!((s.mean_deg[0] - (x / 2.0).to_degrees()).abs() < 1e-9);
        assert!((s.max_deg[0] - x.to_degrees()).abs() < 1e-12);
        assert!(tracking_metrics(&DMatrix::zeros(0, 1)).is_err());
    }

    #[test]
    fn metrics_ignore_time_shift() {
        let ea = DMatrix::from_fn(50, 2, |i, j| ((i + j) as f64 * 0.3).sin() * 1e-3);
        let a = tracking_metrics(&ea).unwrap();
        // the same log with shifted time stamps has the same rows
        let b = tracking_metrics(&ea.clone()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gains_are_checked() {
        assert!(GainSet::uniform(1, -1.0, 1.0).validate(1).is_err());
        assert!(GainSet::uniform(2, 1.0, 1.0).validate(1).is_err());
        assert!(!GainSet::uniform(1, 0.0, 1.0).is_positive_definite());
        assert!(GainSet::uniform(1, 3.0, 1.0).is_positive_definite());
    }

    fn sine() -> ReferenceTrajectory {
        ReferenceTrajectory::sine(vec![1.0], vec![0.3], vec![0.5], vec![0.3]).unwrap()
    }

    #[test]
    fn exact_feedforward_tracks() {
        let model = fixtures::fourbar();
        let theta = fixtures::fourbar_ground_truth();
        let cfg = SimConfig {
            horizon: 10.0,
            ..SimConfig::default()
        };
        let run = run_tracking(
            &model,
            &theta,
            &theta,
            &sine(),
            &GainSet::uniform(1, 100.0, 20.0),
            &cfg,
            None,
        )
        .unwrap();
        assert!(
            run.metrics.max_deg[0] <= 1e-3,
            "max error {} deg",
            run.metrics.max_deg[0]
        );
        assert_eq!(run.log.len(), 10001);
    }

    #[test]
    fn perturbed_feedforward_is_worse_but_beats_pure_pd() {
        let model = fixtures::fourbar();
        let theta = fixtures::fourbar_ground_truth();
        let heavy = fixtures::scale_inertial(&theta, 1.5);
        let gains = GainSet::uniform(1, 100.0, 20.0);
        let cfg = SimConfig {
            horizon: 4.0,
            ..SimConfig::default()
        };
        let exact = run_tracking(&model, &theta, &theta, &sine(), &gains, &cfg, None).unwrap();
        let pert = run_tracking(&model, &theta, &heavy, &sine(), &gains, &cfg, None).unwrap();
        let pd = run_tracking(
            &model,
            &theta,
            &StandardParams::zeros(3),
            &sine(),
            &gains,
            &cfg,
            None,
        )
        .unwrap();
        assert!(pert.metrics.max_deg[0] > exact.metrics.max_deg[0]);
        assert!(pert.metrics.max_deg[0] < pd.metrics.max_deg[0]);
    }

    #[test]
    fn open_loop_feedforward_stays_close() {
        let model = fixtures::fourbar();
        let theta = fixtures::fourbar_ground_truth();
        let cfg = SimConfig {
            horizon: 2.0,
            ..SimConfig::default()
        };
        let run = run_tracking(
            &model,
            &theta,
            &theta,
            &sine(),
            &GainSet::uniform(1, 0.0, 0.0),
            &cfg,
            None,
        )
        .unwrap();
        assert!(
            run.metrics.max_deg[0] <= 0.5,
            "max error {} deg",
            run.metrics.max_deg[0]
        );
    }

    #[test]
    fn standard_and_base_feedforward_agree() {
        // W·θ over all joints and Y·π after regrouping give the same torques
        let model = fixtures::fourbar();
        let theta = fixtures::fourbar_ground_truth();
        let states = sample_states(&model, 60, 3.0, 5).unwrap();
        let maps = analyze(&model, &states, 1e-8).unwrap();
        let (pi, _) = maps.params_to_base(&theta).unwrap();
        for s in states.iter().take(10) {
            let g = crate::constraint::projection_matrix(&model, &s.q).unwrap();
            let w = g.transpose() * regressor(&model, s);
            let via_base =
                maps.base_regressor(&w).unwrap() * &pi + maps.fixed_contribution(&w).unwrap();
            let via_theta = g.transpose() * inverse_dynamics(&model, &theta, s);
            assert!((via_base - via_theta).amax() < 1e-9);
        }
    }
}
