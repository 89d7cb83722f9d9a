//! Desired trajectories for the actuated joints.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::constraint::{ik_continuation, lift_state};
use crate::dynamics::JointState;
use crate::error::{Error, Result};
use crate::model::RobotModel;

/// Sampling rate of the dense limit check.
pub const LIMIT_CHECK_RATE_HZ: f64 = 1000.0;

/// Shape of the reference, per actuated joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ReferenceKind {
    /// `amplitude·sin(2π·frequency·t + phase)`.
    Sine {
        amplitude: Vec<f64>,
        frequency: Vec<f64>,
        phase: Vec<f64>,
    },
    /// `Σ_k sin[j][k]·sin(kωt) + cos[j][k]·cos(kωt)`, `ω = 2π/period`, `k = 1..`.
    Fourier {
        period: f64,
        sin: Vec<Vec<f64>>,
        cos: Vec<Vec<f64>>,
    },
}

/// `q_d(t) = offset + shape(t)` on the actuated joints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    pub offset: Vec<f64>,
    #[serde(flatten)]
    pub kind: ReferenceKind,
}

impl ReferenceTrajectory {
    pub fn sine(
        offset: Vec<f64>,
        amplitude: Vec<f64>,
        frequency: Vec<f64>,
        phase: Vec<f64>,
    ) -> Result<Self> {
        let r = Self {
            offset,
            kind: ReferenceKind::Sine {
                amplitude,
                frequency,
                phase,
            },
        };
        r.validate()?;
        Ok(r)
    }

    pub fn fourier(
        offset: Vec<f64>,
        period: f64,
        sin: Vec<Vec<f64>>,
        cos: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let r = Self {
            offset,
            kind: ReferenceKind::Fourier { period, sin, cos },
        };
        r.validate()?;
        Ok(r)
    }

    pub fn n_a(&self) -> usize {
        self.offset.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.offset.len();
        let bad = |what: &str| Err(Error::Validation(format!("reference: {what}")));
        if n == 0 {
            return bad("no joints");
        }
        if self.offset.iter().any(|v| !v.is_finite()) {
            return bad("non-finite offset");
        }
        match &self.kind {
            ReferenceKind::Sine {
                amplitude,
                frequency,
                phase,
            } => {
                if amplitude.len() != n || frequency.len() != n || phase.len() != n {
                    return bad("sine parameters must have one entry per actuated joint");
                }
                if amplitude.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
                    return bad("amplitudes must be finite and nonnegative");
                }
                if frequency.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
                    return bad("frequencies must be positive");
                }
                if phase.iter().any(|p| !p.is_finite()) {
                    return bad("non-finite phase");
                }
            }
            ReferenceKind::Fourier { period, sin, cos } => {
                if !(period.is_finite() && *period > 0.0) {
                    return bad("period must be positive");
                }
                if sin.len() != n || cos.len() != n {
                    return bad("Fourier coefficients must have one row per actuated joint");
                }
                let h = sin[0].len();
                if h == 0 || sin.iter().chain(cos.iter()).any(|r| r.len() != h) {
                    return bad("every joint needs the same nonzero number of harmonics");
                }
                if sin
                    .iter()
                    .chain(cos.iter())
                    .flatten()
                    .any(|v| !v.is_finite())
                {
                    return bad("non-finite coefficient");
                }
            }
        }
        Ok(())
    }

    /// Position, velocity and acceleration of the actuated joints at `t`.
    pub fn eval(&self, t: f64) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let n = self.n_a();
        let mut q = DVector::from_column_slice(&self.offset);
        let mut qd = DVector::zeros(n);
        let mut qdd = DVector::zeros(n);
        match &self.kind {
            ReferenceKind::Sine {
                amplitude,
                frequency,
                phase,
            } => {
                for j in 0..n {
                    let w = 2.0 * PI * frequency[j];
                    let (s, c) = (w * t + phase[j]).sin_cos();
                    q[j] += amplitude[j] * s;
                    qd[j] = amplitude[j] * w * c;
                    qdd[j] = -amplitude[j] * w * w * s;
                }
            }
            ReferenceKind::Fourier { period, sin, cos } => {
                let w0 = 2.0 * PI / period;
                for j in 0..n {
                    for k in 0..sin[j].len() {
                        let w = w0 * (k + 1) as f64;
                        let (s, c) = (w * t).sin_cos();
                        let (a, b) = (sin[j][k], cos[j][k]);
                        q[j] += a * s + b * c;
                        qd[j] += w * (a * c - b * s);
                        qdd[j] -= w * w * (a * s + b * c);
                    }
                }
            }
        }
        (q, qd, qdd)
    }

    /// Length of one repetition (the slowest joint's period for sines).
    pub fn period(&self) -> f64 {
        match &self.kind {
            ReferenceKind::Sine { frequency, .. } => {
                frequency.iter().map(|f| 1.0 / f).fold(0.0, f64::max)
            }
            ReferenceKind::Fourier { period, .. } => *period,
        }
    }

    /// Peak speed per joint: `amplitude·2π·frequency` for sines, dense
    /// sampling over one period otherwise.
    pub fn max_velocity(&self) -> Vec<f64> {
        match &self.kind {
            ReferenceKind::Sine {
                amplitude,
                frequency,
                ..
            } => amplitude
                .iter()
                .zip(frequency)
                .map(|(a, f)| a * 2.0 * PI * f)
                .collect(),
            ReferenceKind::Fourier { .. } => {
                let mut best = vec![0.0f64; self.n_a()];
                for t in dense_times(self.period()) {
                    let (_, qd, _) = self.eval(t);
                    for j in 0..best.len() {
                        best[j] = best[j].max(qd[j].abs());
                    }
                }
                best
            }
        }
    }

    /// Lifted desired states at `times`, the IK continued from `start`.
    pub fn lift(
        &self,
        model: &RobotModel,
        times: &[f64],
        start: &DVector<f64>,
    ) -> Result<Vec<JointState>> {
        if self.n_a() != model.n_a() {
            return Err(Error::DimensionMismatch(format!(
                "reference drives {} joints, model has {} actuated",
                self.n_a(),
                model.n_a()
            )));
        }
        let mut out = Vec::with_capacity(times.len());
        let mut guess = model.unactuated_part(start);
        for (i, &t) in times.iter().enumerate() {
            let (qa, qda, qdda) = self.eval(t);
            if i == 0 {
                let q0 =
                    ik_continuation(model, start, &qa, 20).map_err(|e| Error::at_sample(0, e))?;
                guess = model.unactuated_part(&q0);
            }
            let s =
                lift_state(model, &qa, &qda, &qdda, &guess).map_err(|e| Error::at_sample(i, e))?;
            guess = model.unactuated_part(&s.q);
            out.push(s);
        }
        Ok(out)
    }

    /// Dense check, at [`LIMIT_CHECK_RATE_HZ`] over one period, of position
    /// limits on every joint (unactuated ones through the IK) and velocity
    /// limits on the actuated joints.
    pub fn check_limits(&self, model: &RobotModel, start: &DVector<f64>) -> Result<()> {
        self.validate()?;
        let times = dense_times(self.period());
        let act = model.actuated_indices();
        for &t in &times {
            let (qa, qda, _) = self.eval(t);
            for (k, &j) in act.iter().enumerate() {
                let l = &model.links()[j];
                if qa[k] < l.pos_limits.0 || qa[k] > l.pos_limits.1 {
                    return Err(Error::Validation(format!(
                        "reference leaves the position limits of joint {} at t = {t:.3} s",
                        j + 1
                    )));
                }
                if qda[k].abs() > l.vel_limit {
                    return Err(Error::Validation(format!(
                        "reference exceeds the velocity limit of joint {} at t = {t:.3} s",
                        j + 1
                    )));
                }
            }
        }
        if model.n_u() == 0 {
            return Ok(());
        }
        let states = self
            .lift(model, &times, start)
            .map_err(|e| Error::Validation(format!("reference is not reachable: {e}")))?;
        for (s, &t) in states.iter().zip(&times) {
            for &j in model.unactuated_indices() {
                let l = &model.links()[j];
                if s.q[j] < l.pos_limits.0 || s.q[j] > l.pos_limits.1 {
                    return Err(Error::Validation(format!(
                        "reference drives passive joint {} out of its limits at t = {t:.3} s",
                        j + 1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reference serializes");
        s.push('\n');
        s
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let r: Self =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("reference file: {e}")))?;
        r.validate()?;
        Ok(r)
    }
}

fn dense_times(period: f64) -> Vec<f64> {
    let count = (period * LIMIT_CHECK_RATE_HZ).ceil() as usize;
    (0..=count)
        .map(|i| i as f64 / LIMIT_CHECK_RATE_HZ)
        .collect()
}

fn parse_values(key: &str, text: &str, n: usize) -> Result<Vec<f64>> {
    let vals: Vec<f64> = text
        .split('/')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("reference spec: bad number '{s}' for {key}")))
        })
        .collect::<Result<_>>()?;
    match vals.len() {
        1 => Ok(vec![vals[0]; n]),
        m if m == n => Ok(vals),
        m => Err(Error::Parse(format!(
            "reference spec: {key} has {m} values, expected 1 or {n}"
        ))),
    }
}

/// Parses `sine:key=value,...` (keys `amp`, `freq`, `phase`, `offset`,
/// `maxvel`; a value is one number or `/`-separated per joint) or loads a
/// reference JSON file. `maxvel` fixes `amp·2π·freq`: it sets whichever of
/// `amp`/`freq` is missing, `amp` defaulting to 0.5 rad. The offset defaults
/// to `home_qa`.
pub fn parse_reference_spec(spec: &str, home_qa: &DVector<f64>) -> Result<ReferenceTrajectory> {
    let n = home_qa.len();
    let Some(body) = spec.strip_prefix("sine:") else {
        let path = Path::new(spec);
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: spec.to_string(),
            source: e,
        })?;
        let r = ReferenceTrajectory::from_json_str(&text)?;
        if r.n_a() != n {
            return Err(Error::Validation(format!(
                "reference file drives {} joints, model has {n}",
                r.n_a()
            )));
        }
        return Ok(r);
    };
    let (mut amp, mut freq, mut phase, mut offset, mut maxvel) = (None, None, None, None, None);
    for item in body.split(',').filter(|s| !s.trim().is_empty()) {
        let (k, v) = item.split_once('=').ok_or_else(|| {
            Error::Parse(format!("reference spec: expected key=value, got '{item}'"))
        })?;
        let vals = parse_values(k.trim(), v, n)?;
        let slot = match k.trim() {
            "amp" => &mut amp,
            "freq" => &mut freq,
            "phase" => &mut phase,
            "offset" => &mut offset,
            "maxvel" => &mut maxvel,
            other => {
                return Err(Error::Parse(format!(
                    "reference spec: unknown key '{other}'"
                )))
            }
        };
        *slot = Some(vals);
    }
    let (amp, freq) = match (amp, freq, maxvel) {
        (Some(a), Some(f), None) => (a, f),
        (Some(_), Some(_), Some(_)) => {
            return Err(Error::InvalidArgument(
                "reference spec: maxvel conflicts with amp and freq".into(),
            ))
        }
        (a, None, Some(v)) => {
            let a = a.unwrap_or_else(|| vec![0.5; n]);
            let f = a.iter().zip(&v).map(|(a, v)| v / (2.0 * PI * a)).collect();
            (a, f)
        }
        (None, Some(f), Some(v)) => {
            let a = f.iter().zip(&v).map(|(f, v)| v / (2.0 * PI * f)).collect();
            (a, f)
        }
        _ => {
            return Err(Error::InvalidArgument(
                "reference spec: give amp and freq, or maxvel".into(),
            ))
        }
    };
    ReferenceTrajectory::sine(
        offset.unwrap_or_else(|| home_qa.iter().copied().collect()),
        amp,
        freq,
        phase.unwrap_or_else(|| vec![0.0; n]),
    )
}
