//! Fourier excitation trajectories that keep the observation well conditioned.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::ReferenceTrajectory;
use crate::constraint::{assembled_home, constrained_regressor};
use crate::dynamics::JointState;
use crate::error::{Error, Result};
use crate::model::RobotModel;
use crate::regroup::RegroupingMaps;
use crate::sysid::matrix_condition;

/// Search settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationConfig {
    pub base_period: f64,
    pub n_harmonics: usize,
    /// Total candidate evaluations (random phase plus local descent).
    pub budget: usize,
    /// Random candidates drawn before the local descent (capped by budget).
    pub random_candidates: usize,
    /// Sampling period of the observation whose condition is minimized.
    pub dt_sample: f64,
    /// Largest first-harmonic coefficient as a fraction of each actuated
    /// joint's range.
    pub amplitude_fraction: f64,
    /// Speed bound (rad/s) on every joint, passive ones included, at the
    /// sample times. Keeps the motion well below the low-pass cutoff: the
    /// passive joints of a linkage move much faster than the cranks near
    /// its quick-return postures.
    pub max_speed: f64,
    pub seed: u64,
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        Self {
            base_period: 10.0,
            n_harmonics: 5,
            budget: 200,
            random_candidates: 100,
            dt_sample: 0.05,
            amplitude_fraction: 0.15,
            max_speed: 2.0,
            seed: 0,
        }
    }
}

/// Best trajectory found.
#[derive(Debug, Clone)]
pub struct ExcitationResult {
    pub reference: ReferenceTrajectory,
    pub cond: f64,
    /// Best condition number among the random candidates alone.
    pub random_best_cond: f64,
    pub evaluations: usize,
    pub feasible_candidates: usize,
}

/// Condition number of the base observation along one period of `r`
/// sampled every `dt`, after the dense limit check. Returns `+∞` for a
/// rank-deficient observation.
pub fn excitation_condition(
    model: &RobotModel,
    maps: &RegroupingMaps,
    r: &ReferenceTrajectory,
    dt: f64,
    start: &DVector<f64>,
) -> Result<f64> {
    let states = sampled_states(model, r, dt, start)?;
    observation_condition(model, maps, &states)
}

fn sampled_states(
    model: &RobotModel,
    r: &ReferenceTrajectory,
    dt: f64,
    start: &DVector<f64>,
) -> Result<Vec<JointState>> {
    r.check_limits(model, start)?;
    let count = (r.period() / dt).round().max(1.0) as usize;
    let times: Vec<f64> = (0..count).map(|i| i as f64 * dt).collect();
    r.lift(model, &times, start)
}

fn observation_condition(
    model: &RobotModel,
    maps: &RegroupingMaps,
    states: &[JointState],
) -> Result<f64> {
    let na = model.n_a();
    let mut stack = DMatrix::zeros(na * states.len(), maps.n_id());
    for (i, s) in states.iter().enumerate() {
        let w = constrained_regressor(model, s).map_err(|e| Error::at_sample(i, e))?;
        stack
            .view_mut((i * na, 0), (na, maps.n_id()))
            .copy_from(&maps.base_regressor(&w)?);
    }
    Ok(matrix_condition(&stack))
}

struct Search<'a> {
    model: &'a RobotModel,
    maps: &'a RegroupingMaps,
    cfg: &'a ExcitationConfig,
    offset: Vec<f64>,
    start: DVector<f64>,
}

impl Search<'_> {
    fn n_coef(&self) -> usize {
        self.model.n_a() * self.cfg.n_harmonics * 2
    }

    fn build(&self, c: &[f64]) -> Result<ReferenceTrajectory> {
        let (na, h) = (self.model.n_a(), self.cfg.n_harmonics);
        let sin = (0..na)
            .map(|j| c[j * 2 * h..j * 2 * h + h].to_vec())
            .collect();
        let cos = (0..na)
            .map(|j| c[j * 2 * h + h..(j + 1) * 2 * h].to_vec())
            .collect();
        ReferenceTrajectory::fourier(self.offset.clone(), self.cfg.base_period, sin, cos)
    }

    /// `+∞` for infeasible candidates.
    fn cost(&self, c: &[f64]) -> f64 {
        let Ok(states) = self
            .build(c)
            .and_then(|r| sampled_states(self.model, &r, self.cfg.dt_sample, &self.start))
        else {
            return f64::INFINITY;
        };
        if states.iter().any(|s| s.qd.amax() > self.cfg.max_speed) {
            return f64::INFINITY;
        }
        observation_condition(self.model, self.maps, &states).unwrap_or(f64::INFINITY)
    }

    fn random(&self, k: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.cfg
                .seed
                .wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        );
        let (na, h) = (self.model.n_a(), self.cfg.n_harmonics);
        let mut c = vec![0.0; self.n_coef()];
        for j in 0..na {
            let a = self.scale(j);
            for k in 0..h {
                let damp = a / (k + 1) as f64;
                c[j * 2 * h + k] = rng.random_range(-damp..damp);
                c[j * 2 * h + h + k] = rng.random_range(-damp..damp);
            }
        }
        c
    }

    fn scale(&self, j: usize) -> f64 {
        let l = &self.model.links()[self.model.actuated_indices()[j]];
        self.cfg.amplitude_fraction * (l.pos_limits.1 - l.pos_limits.0)
    }
}

/// Random multistart over Fourier coefficients followed by a coordinate
/// pattern search, minimizing the observation's condition number. The
/// offset is the actuated part of the assembled home configuration.
pub fn design_excitation(
    model: &RobotModel,
    maps: &RegroupingMaps,
    cfg: &ExcitationConfig,
) -> Result<ExcitationResult> {
    if cfg.n_harmonics == 0 {
        return Err(Error::InvalidArgument(
            "at least one harmonic is needed".into(),
        ));
    }
    if cfg.budget == 0 {
        return Err(Error::InvalidArgument(
            "evaluation budget must be positive".into(),
        ));
    }
    if !(cfg.base_period > 0.0
        && cfg.dt_sample > 0.0
        && cfg.amplitude_fraction > 0.0
        && cfg.max_speed > 0.0)
    {
        return Err(Error::InvalidArgument(
            "period, sample spacing, amplitude and speed bound must be positive".into(),
        ));
    }
    let start = assembled_home(model)?;
    let search = Search {
        model,
        maps,
        cfg,
        offset: model.actuated_part(&start).iter().copied().collect(),
        start,
    };
    let n_random = cfg.random_candidates.clamp(1, cfg.budget);
    let candidates: Vec<Vec<f64>> = (0..n_random).map(|k| search.random(k)).collect();
    let costs: Vec<f64> = candidates.par_iter().map(|c| search.cost(c)).collect();
    let feasible_candidates = costs.iter().filter(|c| c.is_finite()).count();
    let mut best_k = None;
    for (k, &c) in costs.iter().enumerate() {
        if c.is_finite() && best_k.is_none_or(|b: usize| c < costs[b]) {
            best_k = Some(k);
        }
    }
    let Some(best_k) = best_k else {
        return Err(Error::NoFeasiblePoint(format!(
            "none of {n_random} random excitation candidates respects the limits"
        )));
    };
    let random_best_cond = costs[best_k];
    let mut best = candidates[best_k].clone();
    let mut best_cost = random_best_cond;
    let mut evals = n_random;
    let mut step = 0.25
        * (0..model.n_a())
            .map(|j| search.scale(j))
            .fold(0.0, f64::max);
    let min_step = step * 1e-3;
    'outer: while evals < cfg.budget && step > min_step {
        let mut improved = false;
        for i in 0..best.len() {
            for dir in [1.0, -1.0] {
                if evals >= cfg.budget {
                    break 'outer;
                }
                let mut trial = best.clone();
                trial[i] += dir * step;
                evals += 1;
                let c = search.cost(&trial);
                if c < best_cost {
                    best = trial;
                    best_cost = c;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok(ExcitationResult {
        reference: search.build(&best)?,
        cond: best_cost,
        random_best_cond,
        evaluations: evals,
        feasible_candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::regroup::{analyze, sample_states};

    fn setup() -> (RobotModel, RegroupingMaps) {
        let model = fixtures::fourbar();
        let states = sample_states(&model, 80, 3.0, 2).unwrap();
        let maps = analyze(&model, &states, 1e-8).unwrap();
        (model, maps)
    }

    fn small(budget: usize) -> ExcitationConfig {
        ExcitationConfig {
            base_period: 4.0,
            n_harmonics: 3,
            budget,
            random_candidates: 12,
            dt_sample: 0.05,
            amplitude_fraction: 0.05,
            ..ExcitationConfig::default()
        }
    }

    #[test]
    fn constant_posture_is_degenerate() {
        let (model, maps) = setup();
        let start = assembled_home(&model).unwrap();
        let r = ReferenceTrajectory::fourier(
            vec![start[0]],
            4.0,
            vec![vec![0.0; 2]],
            vec![vec![0.0; 2]],
        )
        .unwrap();
        assert_eq!(
            excitation_condition(&model, &maps, &r, 0.05, &start).unwrap(),
            f64::INFINITY
        );
    }

    #[test]
    fn descent_never_loses_to_its_random_phase() {
        let (model, maps) = setup();
        let a = design_excitation(&model, &maps, &small(12)).unwrap();
        let b = design_excitation(&model, &maps, &small(40)).unwrap();
        assert_eq!(a.random_best_cond, b.random_best_cond);
        assert!(b.cond <= a.cond);
        assert!(b.evaluations <= 40);
        assert!(a.cond.is_finite());
        // the returned spec reproduces its condition number
        let start = assembled_home(&model).unwrap();
        let again = excitation_condition(&model, &maps, &b.reference, 0.05, &start).unwrap();
        assert!((again - b.cond).abs() <= 1e-9 * b.cond);
        let states = sampled_states(&model, &b.reference, 0.05, &start).unwrap();
        assert!(states.iter().all(|s| s.qd.amax() <= small(40).max_speed));
    }

    #[test]
    fn same_seed_same_result() {
        let (model, maps) = setup();
        let a = design_excitation(&model, &maps, &small(20)).unwrap();
        let b = design_excitation(&model, &maps, &small(20)).unwrap();
        assert_eq!(a.reference, b.reference);
    }

    #[test]
    fn zero_budget_is_invalid() {
        let (model, maps) = setup();
        assert!(matches!(
            design_excitation(&model, &maps, &small(0)),
            Err(Error::InvalidArgument(_))
        ));
    }
}
