//! Held-out validation: torque residuals and segmented forward replays.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{integrate, SimConfig, ZohTorque};
use crate::constraint::{constrained_inverse_dynamics, projection_matrix};
use crate::error::{Error, Result};
use crate::model::{RobotModel, StandardParams};
use crate::signal::TrajectoryDataset;
use crate::sysid::moving_samples;

/// Default length of a forward-replay segment (s).
pub const DEFAULT_SEGMENT_LEN: f64 = 0.5;

/// Torque residuals `u − GᵀWθ` of the used samples and their RMS per
/// actuated joint.
#[derive(Debug, Clone)]
pub struct TorqueValidation {
    pub rms: Vec<f64>,
    /// Row indices into the dataset that entered the statistics.
    pub samples: Vec<usize>,
    pub residuals: DMatrix<f64>,
}

/// Compares measured torques with the model prediction on a lifted dataset.
/// Samples where some joint moves slower than `min_joint_speed` are skipped.
pub fn validate_torque(
    model: &RobotModel,
    theta: &StandardParams,
    ds: &TrajectoryDataset,
    min_joint_speed: f64,
) -> Result<TorqueValidation> {
    if !ds.is_lifted() {
        return Err(Error::StageMismatch {
            expected: "lifted".into(),
            found: ds.stage.to_string(),
        });
    }
    let samples = moving_samples(ds, min_joint_speed)?;
    if samples.is_empty() {
        return Err(Error::DegenerateData(
            "no sample passes the velocity deadband".into(),
        ));
    }
    let rows: Vec<DVector<f64>> = samples
        .par_iter()
        .map(|&i| {
            let s = ds.state(i)?;
            let pred = constrained_inverse_dynamics(model, theta, &s)
                .map_err(|e| Error::at_sample(i, e))?;
            Ok(ds.u.row(i).transpose() - pred)
        })
        .collect::<Result<_>>()?;
    let na = model.n_a();
    let mut residuals = DMatrix::zeros(rows.len(), na);
    for (r, v) in rows.iter().enumerate() {
        residuals.set_row(r, &v.transpose());
    }
    let rms = (0..na)
        .map(|j| (residuals.column(j).norm_squared() / rows.len() as f64).sqrt())
        .collect();
    Ok(TorqueValidation {
        rms,
        samples,
        residuals,
    })
}

/// `sqrt(Σ_i (a_i − b_i)²)` per column.
pub fn l2_norm(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    (0..a.ncols())
        .map(|j| (a.column(j) - b.column(j)).norm())
        .collect()
}

/// One forward replay.
#[derive(Debug, Clone)]
pub struct SegmentResult {
    pub start_index: usize,
    pub t0: f64,
    /// Simulated actuated positions, one row per sample of the segment
    /// (empty if the integration failed).
    pub simulated_qa: DMatrix<f64>,
    pub l2: Vec<f64>,
    /// `q_sim − q_meas` on the actuated joints at the segment end.
    pub endpoint_error: Vec<f64>,
    pub failure: Option<String>,
}

/// Per-segment and overall L2 errors of forward replays.
#[derive(Debug, Clone)]
pub struct ForwardValidation {
    pub segments: Vec<SegmentResult>,
    /// Per actuated joint over the samples of every successful segment.
    pub l2: Vec<f64>,
    pub samples_per_segment: usize,
}

impl ForwardValidation {
    pub fn failed(&self) -> usize {
        self.segments.iter().filter(|s| s.failure.is_some()).count()
    }
}

/// Splits the data into consecutive segments of `segment_len` seconds and
/// integrates each from its measured initial state under a zero-order hold
/// of the recorded torques.
pub fn validate_forward(
    model: &RobotModel,
    theta: &StandardParams,
    ds: &TrajectoryDataset,
    segment_len: f64,
    sim: &SimConfig,
) -> Result<ForwardValidation> {
    if !ds.is_lifted() {
        return Err(Error::StageMismatch {
            expected: "lifted".into(),
            found: ds.stage.to_string(),
        });
    }
    if !(segment_len > 0.0) {
        return Err(Error::InvalidArgument(
            "segment length must be positive".into(),
        ));
    }
    let dt = ds.dt();
    if ds.len() < 2 || ds.duration() + 1e-9 < segment_len {
        return Err(Error::InvalidArgument(format!(
            "data spans {:.3} s, shorter than one {segment_len} s segment",
            ds.duration()
        )));
    }
    let per = (segment_len / dt).round() as usize;
    if per == 0 || ((per as f64 * dt - segment_len) / segment_len).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "segment length {segment_len} s is not a multiple of the sample period {dt} s"
        )));
    }
    let count = (ds.duration() / segment_len + 1e-9).floor() as usize;
    let q = ds.q.as_ref().expect("lifted");
    let segments: Vec<SegmentResult> = (0..count)
        .into_par_iter()
        .map(|k| {
            let i0 = k * per;
            let meas = ds.qa.rows(i0, per + 1).into_owned();
            let run = || -> Result<DMatrix<f64>> {
                let q0 = q.row(i0).transpose();
                let g = projection_matrix(model, &q0).map_err(|e| Error::at_sample(i0, e))?;
                let qd0 = g * ds.qda.row(i0).transpose();
                let mut zoh = ZohTorque::new(dt, ds.u.rows(i0, per + 1).into_owned())?;
                let cfg = SimConfig {
                    dt_output: dt,
                    horizon: per as f64 * dt,
                    ..sim.clone()
                };
                Ok(integrate(model, theta, &q0, &qd0, &mut zoh, &cfg)?.qa)
            };
            match run() {
                Ok(sim_qa) => {
                    let end = (sim_qa.row(per) - meas.row(per)).transpose();
                    SegmentResult {
                        start_index: i0,
                        t0: ds.t[i0],
                        l2: l2_norm(&sim_qa, &meas),
                        endpoint_error: end.iter().copied().collect(),
                        simulated_qa: sim_qa,
                        failure: None,
                    }
                }
                Err(e) => SegmentResult {
                    start_index: i0,
                    t0: ds.t[i0],
                    simulated_qa: DMatrix::zeros(0, ds.n_a()),
                    l2: vec![f64::NAN; ds.n_a()],
                    endpoint_error: vec![f64::NAN; ds.n_a()],
                    failure: Some(e.to_string()),
                },
            }
        })
        .collect();
    let l2 = (0..ds.n_a())
        .map(|j| {
            segments
                .iter()
                .filter(|s| s.failure.is_none())
                .map(|s| s.l2[j] * s.l2[j])
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    Ok(ForwardValidation {
        segments,
        l2,
        samples_per_segment: per + 1,
    })
}
