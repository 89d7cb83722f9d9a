//! Constrained observation system and physically-consistent identification
//! with iterative reweighting and multistart.

mod solver;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraint::constrained_regressor;
use crate::error::{Error, Result};
use crate::model::{
    is_physically_consistent, ConsistencyReport, RobotModel, StandardParams, DEFAULT_EPS_PD,
};
use crate::regroup::{negligible_columns, RegroupingMaps};
use crate::signal::{Stage, TrajectoryDataset};
use solver::Problem;

/// Default velocity deadband (rad/s) of the observation.
pub const DEFAULT_MIN_JOINT_SPEED: f64 = 0.05;

/// Stacked `GY·π = U` over the samples of a processed dataset.
#[derive(Debug, Clone)]
pub struct ObservationSystem {
    pub gy: DMatrix<f64>,
    pub u: DVector<f64>,
    pub weights: DVector<f64>,
    pub joint_of_row: Vec<usize>,
    /// Dataset row of each sample block.
    pub samples: Vec<usize>,
    pub cond: f64,
}

impl ObservationSystem {
    pub fn rows(&self) -> usize {
        self.u.len()
    }

    pub fn n_joints(&self) -> usize {
        self.joint_of_row.iter().copied().max().map_or(0, |j| j + 1)
    }

    /// Per-joint RMS of `GY·π − U`.
    pub fn residual_rms(&self, pi: &DVector<f64>) -> Vec<f64> {
        let r = &self.gy * pi - &self.u;
        let nj = self.n_joints();
        let mut sum = vec![0.0; nj];
        let mut cnt = vec![0usize; nj];
        for (i, &j) in self.joint_of_row.iter().enumerate() {
            sum[j] += r[i] * r[i];
            cnt[j] += 1;
        }
        sum.iter()
            .zip(&cnt)
            .map(|(s, &c)| (s / c.max(1) as f64).sqrt())
            .collect()
    }
}

/// Rows whose joints all move at least `min_speed` (every row if zero).
pub fn moving_samples(ds: &TrajectoryDataset, min_speed: f64) -> Result<Vec<usize>> {
    if !(min_speed >= 0.0) {
        return Err(Error::InvalidArgument(
            "velocity deadband must be nonnegative".into(),
        ));
    }
    let qd = ds.qd.as_ref().ok_or_else(|| Error::StageMismatch {
        expected: "lifted".into(),
        found: ds.stage.to_string(),
    })?;
    Ok((0..ds.len())
        .filter(|&i| qd.row(i).iter().all(|v| v.abs() >= min_speed))
        .collect())
}

/// Builds the observation from a downsampled, lifted dataset. Samples where
/// some joint moves slower than `min_joint_speed` are left out, since the
/// Coulomb term is discontinuous there.
pub fn assemble_observation(
    model: &RobotModel,
    maps: &RegroupingMaps,
    ds: &TrajectoryDataset,
    min_joint_speed: f64,
) -> Result<ObservationSystem> {
    if ds.stage != Stage::Downsampled {
        return Err(Error::StageMismatch {
            expected: Stage::Downsampled.to_string(),
            found: ds.stage.to_string(),
        });
    }
    if !ds.is_lifted() {
        return Err(Error::StageMismatch {
            expected: "lifted".into(),
            found: ds.stage.to_string(),
        });
    }
    if maps.n_params() != model.n_params() || ds.n_a() != model.n_a() {
        return Err(Error::DimensionMismatch(
            "dataset, model and maps disagree".into(),
        ));
    }
    let samples = moving_samples(ds, min_joint_speed)?;
    let na = model.n_a();
    let blocks: Vec<(DMatrix<f64>, DVector<f64>)> = samples
        .par_iter()
        .map(|&i| {
            let s = ds.state(i)?;
            let w = constrained_regressor(model, &s).map_err(|e| Error::at_sample(i, e))?;
            let y = maps.base_regressor(&w)?;
            let u = ds.u.row(i).transpose() - maps.fixed_contribution(&w)?;
            Ok((y, u))
        })
        .collect::<Result<_>>()?;
    let rows = na * blocks.len();
    let mut gy = DMatrix::zeros(rows, maps.n_id());
    let mut u = DVector::zeros(rows);
    for (k, (y, uk)) in blocks.iter().enumerate() {
        gy.view_mut((k * na, 0), (na, maps.n_id())).copy_from(y);
        u.rows_mut(k * na, na).copy_from(uk);
    }
    let mut obs = ObservationSystem {
        gy,
        u,
        weights: DVector::from_element(rows, 1.0),
        joint_of_row: (0..rows).map(|r| r % na).collect(),
        samples,
        cond: f64::INFINITY,
    };
    obs.cond = condition_number(&obs);
    Ok(obs)
}

/// Largest over smallest singular value of the weighted GY with unit-norm
/// columns; `+∞` for an empty, rank-deficient or zero-column matrix (zero
/// up to rounding, see [`negligible_columns`]).
pub fn condition_number(obs: &ObservationSystem) -> f64 {
    let sw = obs.weights.map(|w| w.max(0.0).sqrt());
    let mut a = obs.gy.clone();
    for (mut row, w) in a.row_iter_mut().zip(sw.iter()) {
        row *= *w;
    }
    matrix_condition(&a)
}

pub(crate) fn matrix_condition(a: &DMatrix<f64>) -> f64 {
    if a.nrows() < a.ncols() || a.ncols() == 0 {
        return f64::INFINITY;
    }
    if negligible_columns(a).into_iter().any(|z| z) {
        return f64::INFINITY;
    }
    let mut a = a.clone();
    for mut col in a.column_iter_mut() {
        let n = col.norm();
        col /= n;
    }
    let sv = a.singular_values();
    let (hi, lo) = (sv.max(), sv.min());
    if !(lo > hi * f64::EPSILON) {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentificationConfig {
    pub eps_pd: f64,
    /// Box for the random initial guesses of each column-normalized base
    /// parameter.
    pub init_bounds: (f64, f64),
    pub multistart_count: usize,
    pub irwls_max_iter: usize,
    /// Stop once the largest relative weight change falls below this.
    pub irwls_tol: f64,
    pub weight_floor: f64,
    pub seed: u64,
    /// Weight ρ of `ρ‖θ − θ_ref‖²` toward the model's reference parameters.
    pub regularization: f64,
    /// Velocity deadband of the observation (rad/s).
    pub min_joint_speed: f64,
}

impl Default for IdentificationConfig {
    fn default() -> Self {
        Self {
            eps_pd: DEFAULT_EPS_PD,
            init_bounds: (-10.0, 10.0),
            multistart_count: 100,
            irwls_max_iter: 20,
            irwls_tol: 1e-4,
            weight_floor: 1e-12,
            seed: 0,
            regularization: 0.0,
            min_joint_speed: DEFAULT_MIN_JOINT_SPEED,
        }
    }
}

impl IdentificationConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.init_bounds;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidArgument(
                "initial-guess bounds must be finite with lower < upper".into(),
            ));
        }
        if self.multistart_count == 0 {
            return Err(Error::InvalidArgument(
                "multistart count must be at least 1".into(),
            ));
        }
        if self.irwls_max_iter == 0 {
            return Err(Error::InvalidArgument(
                "at least one IRWLS iteration is needed".into(),
            ));
        }
        if !(self.eps_pd >= 0.0
            && self.irwls_tol > 0.0
            && self.weight_floor > 0.0
            && self.regularization >= 0.0)
        {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        if !(self.min_joint_speed >= 0.0) {
            return Err(Error::InvalidArgument(
                "velocity deadband must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Identified parameters and diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationResult {
    pub pi0: Vec<f64>,
    pub theta_d0: Vec<f64>,
    pub theta0: StandardParams,
    /// Per actuated joint, N·m.
    pub residual_rms: Vec<f64>,
    /// `Σ w_i (GY·π₀ − U)_i²` with the final weights.
    pub objective: f64,
    pub cond: f64,
    pub irwls_iterations: usize,
    /// Final weight of each actuated joint's rows.
    pub joint_weights: Vec<f64>,
    /// Objective reached by each restart of the last solve (`None` if the
    /// restart failed).
    pub restarts: Vec<Option<f64>>,
    pub min_eig: Vec<f64>,
    pub consistent: bool,
    pub n_samples: usize,
}

impl IdentificationResult {
    pub fn consistency(&self, eps_pd: f64) -> ConsistencyReport {
        is_physically_consistent(&self.theta0, eps_pd)
    }
}

/// Result file: the identification plus the maps and config that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultFile {
    pub model: String,
    pub result: IdentificationResult,
    pub maps: RegroupingMaps,
    pub config: IdentificationConfig,
}

impl ResultFile {
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("result serializes");
        s.push('\n');
        s
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("result file: {e}")))
    }

    pub fn read(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let p = path.as_ref();
        let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
            path: p.display().to_string(),
            source: e,
        })?;
        Self::from_json_str(&text)
    }
}

/// Column norms of `gy`, 1 for negligible columns.
fn column_scales(gy: &DMatrix<f64>) -> DVector<f64> {
    let zero = negligible_columns(gy);
    DVector::from_iterator(
        gy.ncols(),
        gy.column_iter()
            .zip(zero)
            .map(|(c, z)| if z { 1.0 } else { c.norm() }),
    )
}

struct SolveOutput {
    pi: DVector<f64>,
    theta_d: DVector<f64>,
    restarts: Vec<Option<f64>>,
}

/// Weighted objective `Σ w_i r_i²`.
fn weighted_sse(obs: &ObservationSystem, pi: &DVector<f64>) -> f64 {
    let r = &obs.gy * pi - &obs.u;
    r.iter()
        .zip(obs.weights.iter())
        .map(|(r, w)| w * r * r)
        .sum()
}

fn solve_inner(
    obs: &ObservationSystem,
    maps: &RegroupingMaps,
    model: &RobotModel,
    cfg: &IdentificationConfig,
    col_scale: &DVector<f64>,
) -> Result<SolveOutput> {
    if obs.rows() < maps.n_id() {
        return Err(Error::DegenerateData(format!(
            "{} observation rows cannot determine {} base parameters",
            obs.rows(),
            maps.n_id()
        )));
    }
    if obs.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::InvalidArgument("weights must be positive".into()));
    }
    let reference = model
        .reference_theta()
        .cloned()
        .unwrap_or_else(|| StandardParams::zeros(model.n()));
    let reg = if cfg.regularization > 0.0 {
        let r = model.reference_theta().ok_or_else(|| {
            Error::InvalidArgument("regularization needs reference parameters in the model".into())
        })?;
        Some((cfg.regularization, r))
    } else {
        None
    };
    let prob = Problem::new(
        &obs.gy,
        &obs.u,
        &obs.weights,
        col_scale,
        maps,
        cfg.eps_pd,
        &reference,
        reg,
    )?;
    let (_, td_ref) = maps.params_to_base(&reference)?;
    let (lo, hi) = cfg.init_bounds;
    let n_id = maps.n_id();
    let starts: Vec<DVector<f64>> = (0..cfg.multistart_count)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(
                cfg.seed
                    .wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            );
            let mut x = DVector::zeros(prob.dim());
            for i in 0..n_id {
                x[i] = rng.random_range(lo..hi);
            }
            x.rows_mut(n_id, td_ref.len()).copy_from(&td_ref);
            x
        })
        .collect();
    let sols: Vec<Option<solver::Solution>> = starts
        .par_iter()
        .map(|x0| prob.solve_from(x0, maps))
        .collect();
    let mut best: Option<&solver::Solution> = None;
    for s in sols.iter().flatten() {
        if best.is_none_or(|b| s.f < b.f) {
            best = Some(s);
        }
    }
    let best = best.ok_or_else(|| {
        Error::NoFeasiblePoint(format!(
            "all {} restarts failed feasibility restoration",
            cfg.multistart_count
        ))
    })?;
    let (pi, theta_d) = prob.split(&best.x);
    let restarts = sols
        .iter()
        .map(|s| {
            s.as_ref().map(|s| {
                let (p, _) = prob.split(&s.x);
                weighted_sse(obs, &p)
            })
        })
        .collect();
    Ok(SolveOutput {
        pi,
        theta_d,
        restarts,
    })
}

fn finish(
    obs: &ObservationSystem,
    maps: &RegroupingMaps,
    cfg: &IdentificationConfig,
    out: SolveOutput,
    iterations: usize,
) -> Result<IdentificationResult> {
    let theta0 = maps.base_to_params(&out.pi, &out.theta_d)?;
    let report = is_physically_consistent(&theta0, cfg.eps_pd);
    if !report.consistent {
        return Err(Error::NoFeasiblePoint(format!(
            "solver returned inconsistent parameters:\n{report}"
        )));
    }
    let nj = obs.n_joints();
    let joint_weights = (0..nj)
        .map(|j| {
            obs.joint_of_row
                .iter()
                .position(|&k| k == j)
                .map_or(1.0, |r| obs.weights[r])
        })
        .collect();
    Ok(IdentificationResult {
        residual_rms: obs.residual_rms(&out.pi),
        objective: weighted_sse(obs, &out.pi),
        cond: condition_number(obs),
        irwls_iterations: iterations,
        joint_weights,
        restarts: out.restarts,
        min_eig: report.links.iter().map(|l| l.min_eig).collect(),
        consistent: report.consistent,
        n_samples: obs.samples.len(),
        pi0: out.pi.iter().copied().collect(),
        theta_d0: out.theta_d.iter().copied().collect(),
        theta0,
    })
}

/// One constrained weighted least-squares solve with the observation's
/// weights: the best of `multistart_count` restarts.
pub fn solve_identification(
    obs: &ObservationSystem,
    maps: &RegroupingMaps,
    model: &RobotModel,
    cfg: &IdentificationConfig,
) -> Result<IdentificationResult> {
    cfg.validate()?;
    let out = solve_inner(obs, maps, model, cfg, &column_scales(&obs.gy))?;
    finish(obs, maps, cfg, out, 1)
}

/// Alternates constrained solves with per-joint inverse-variance weights
/// `1/max(σ̂_j², floor)` until the weights settle.
pub fn irwls_identify(
    model: &RobotModel,
    maps: &RegroupingMaps,
    processed: &TrajectoryDataset,
    cfg: &IdentificationConfig,
) -> Result<IdentificationResult> {
    cfg.validate()?;
    let obs = assemble_observation(model, maps, processed, cfg.min_joint_speed)?;
    irwls_on(obs, maps, model, cfg)
}

/// [`irwls_identify`] on an assembled observation.
pub fn irwls_on(
    mut obs: ObservationSystem,
    maps: &RegroupingMaps,
    model: &RobotModel,
    cfg: &IdentificationConfig,
) -> Result<IdentificationResult> {
    cfg.validate()?;
    let col_scale = column_scales(&obs.gy);
    let nj = obs.n_joints();
    let mut joint_w = vec![1.0; nj];
    let mut k = 0;
    loop {
        k += 1;
        for (r, &j) in obs.joint_of_row.iter().enumerate() {
            obs.weights[r] = joint_w[j];
        }
        let out = solve_inner(&obs, maps, model, cfg, &col_scale)?;
        let sigma2 = obs
            .residual_rms(&out.pi)
            .iter()
            .map(|r| r * r)
            .collect::<Vec<_>>();
        let new_w: Vec<f64> = sigma2
            .iter()
            .map(|s| 1.0 / s.max(cfg.weight_floor))
            .collect();
        let change = new_w
            .iter()
            .zip(&joint_w)
            .map(|(n, o)| ((n - o) / o).abs())
            .fold(0.0, f64::max);
        if change < cfg.irwls_tol || k >= cfg.irwls_max_iter {
            return finish(&obs, maps, cfg, out, k);
        }
        joint_w = new_w;
    }
}
