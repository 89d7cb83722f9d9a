//! Numerical regrouping of the standard parameters into base parameters.
//!
//! The projected regressor `GᵀW` is stacked over many states. A pivoted QR
//! gives the numerical rank; the base set is then the lexicographically first
//! set of independent columns, which makes the choice reproducible across
//! different sample sets. Dependent columns are expressed as
//! `W_d = W_b·K_d`, so that `W·θ = Y·π` with `π = θ_b + K_d·θ_d`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraint::{assembled_home, constrained_regressor, ik_continuation, lift_state};
use crate::dynamics::JointState;
use crate::error::{Error, Result};
use crate::model::{ParameterMask, RobotModel, StandardParams};

/// Default relative rank tolerance.
pub const DEFAULT_TOL_RANK: f64 = 1e-8;

const SNAP_TOL: f64 = 1e-8;
const SNAP_MAX_DEN: i64 = 100;

/// Relation between θ and the base/dependent split `(π, θ_d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MapsFile", into = "MapsFile")]
pub struct RegroupingMaps {
    n_params: usize,
    idx_b: Vec<usize>,
    idx_d: Vec<usize>,
    kd: DMatrix<f64>,
    fixed_idx: Vec<usize>,
    fixed_values: Vec<f64>,
    tol_rank: f64,
}

#[derive(Serialize, Deserialize)]
struct MapsFile {
    n_params: usize,
    tol_rank: f64,
    idx_b: Vec<usize>,
    idx_d: Vec<usize>,
    /// Row-major, `n_id` rows of `n_d` entries.
    kd: Vec<Vec<f64>>,
    fixed_idx: Vec<usize>,
    fixed_values: Vec<f64>,
}

impl From<RegroupingMaps> for MapsFile {
    fn from(m: RegroupingMaps) -> Self {
        let kd = (0..m.kd.nrows())
            .map(|r| m.kd.row(r).iter().copied().collect())
            .collect();
        Self {
            n_params: m.n_params,
            tol_rank: m.tol_rank,
            idx_b: m.idx_b,
            idx_d: m.idx_d,
            kd,
            fixed_idx: m.fixed_idx,
            fixed_values: m.fixed_values,
        }
    }
}

impl TryFrom<MapsFile> for RegroupingMaps {
    type Error = String;

    fn try_from(f: MapsFile) -> std::result::Result<Self, String> {
        let (nb, nd) = (f.idx_b.len(), f.idx_d.len());
        if f.kd.len() != nb || f.kd.iter().any(|r| r.len() != nd) {
            return Err(format!("kd must be {nb}×{nd}"));
        }
        if nb + nd + f.fixed_idx.len() != f.n_params || f.fixed_idx.len() != f.fixed_values.len() {
            return Err("index sets do not partition the parameters".into());
        }
        let mut seen = vec![false; f.n_params];
        for &k in f.idx_b.iter().chain(&f.idx_d).chain(&f.fixed_idx) {
            if k >= f.n_params || std::mem::replace(&mut seen[k], true) {
                return Err(format!("index {k} repeated or out of range"));
            }
        }
        let kd = DMatrix::from_fn(nb, nd, |r, c| f.kd[r][c]);
        Ok(Self {
            n_params: f.n_params,
            idx_b: f.idx_b,
            idx_d: f.idx_d,
            kd,
            fixed_idx: f.fixed_idx,
            fixed_values: f.fixed_values,
            tol_rank: f.tol_rank,
        })
    }
}

/// Options for [`analyze_with`].
#[derive(Debug, Clone)]
pub struct AnalyzeOptions {
    pub tol_rank: f64,
    /// Snap `K_d` entries to nearby rationals with small denominators.
    pub snap_rational: bool,
    /// Reject the result unless both halves of the sample set give the same
    /// base set.
    pub check_stability: bool,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self {
            tol_rank: DEFAULT_TOL_RANK,
            snap_rational: false,
            check_stability: true,
        }
    }
}

impl RegroupingMaps {
    pub fn n_id(&self) -> usize {
        self.idx_b.len()
    }
    pub fn n_d(&self) -> usize {
        self.idx_d.len()
    }
    pub fn n_params(&self) -> usize {
        self.n_params
    }
    pub fn idx_b(&self) -> &[usize] {
        &self.idx_b
    }
    pub fn idx_d(&self) -> &[usize] {
        &self.idx_d
    }
    pub fn kd(&self) -> &DMatrix<f64> {
        &self.kd
    }
    pub fn fixed_indices(&self) -> &[usize] {
        &self.fixed_idx
    }
    pub fn fixed_values(&self) -> &[f64] {
        &self.fixed_values
    }
    pub fn tol_rank(&self) -> f64 {
        self.tol_rank
    }

    fn check_cols(&self, w: &DMatrix<f64>) -> Result<()> {
        if w.ncols() != self.n_params {
            return Err(Error::DimensionMismatch(format!(
                "regressor has {} columns, maps expect {}",
                w.ncols(),
                self.n_params
            )));
        }
        Ok(())
    }

    /// `Y = W·P_b`.
    pub fn base_regressor(&self, w_full: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_cols(w_full)?;
        Ok(w_full.select_columns(&self.idx_b))
    }

    /// `W·P_d`.
    pub fn dependent_regressor(&self, w_full: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_cols(w_full)?;
        Ok(w_full.select_columns(&self.idx_d))
    }

    /// Contribution of masked-out (fixed) parameters, `W[:, fixed]·θ_fixed`.
    pub fn fixed_contribution(&self, w_full: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_cols(w_full)?;
        let mut out = DVector::zeros(w_full.nrows());
        for (&k, &v) in self.fixed_idx.iter().zip(&self.fixed_values) {
            out.axpy(v, &w_full.column(k), 1.0);
        }
        Ok(out)
    }

    /// `θ_d = θ[idx_d]`, `π = θ[idx_b] + K_d·θ_d`.
    pub fn params_to_base(&self, theta: &StandardParams) -> Result<(DVector<f64>, DVector<f64>)> {
        if theta.len() != self.n_params {
            return Err(Error::DimensionMismatch(
                "θ length does not match maps".into(),
            ));
        }
        let t = theta.as_slice();
        let theta_d = DVector::from_iterator(self.n_d(), self.idx_d.iter().map(|&k| t[k]));
        let theta_b = DVector::from_iterator(self.n_id(), self.idx_b.iter().map(|&k| t[k]));
        let pi = theta_b + &self.kd * &theta_d;
        Ok((pi, theta_d))
    }

    /// `θ[idx_b] = π − K_d·θ_d`, `θ[idx_d] = θ_d`, fixed entries restored.
    pub fn base_to_params(
        &self,
        pi: &DVector<f64>,
        theta_d: &DVector<f64>,
    ) -> Result<StandardParams> {
        if pi.len() != self.n_id() || theta_d.len() != self.n_d() {
            return Err(Error::DimensionMismatch(format!(
                "expected π of length {} and θ_d of length {}",
                self.n_id(),
                self.n_d()
            )));
        }
        let mut t = vec![0.0; self.n_params];
        let theta_b = pi - &self.kd * theta_d;
        for (v, &k) in theta_b.iter().zip(&self.idx_b) {
            t[k] = *v;
        }
        for (v, &k) in theta_d.iter().zip(&self.idx_d) {
            t[k] = *v;
        }
        for (v, &k) in self.fixed_values.iter().zip(&self.fixed_idx) {
            t[k] = *v;
        }
        StandardParams::from_vec(self.n_params / crate::model::N_PER_LINK, t)
    }
}

/// Numerical rank of `m` from a column-pivoted QR: diagonal entries above
/// `tol·|R_11|`.
pub fn pivoted_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    if m.ncols() == 0 || m.nrows() == 0 {
        return 0;
    }
    let r = m.clone().col_piv_qr().unpack_r();
    let diag: Vec<f64> = (0..r.nrows().min(r.ncols()))
        .map(|k| r[(k, k)].abs())
        .collect();
    let r11 = diag[0];
    if !(r11 > 0.0) {
        return 0;
    }
    diag.iter().take_while(|&&d| d > tol * r11).count()
}

/// Lexicographically first independent columns among `cols`, by Householder
/// elimination in index order on unit-normalized columns.
fn first_independent(m: &DMatrix<f64>, cols: &[usize], tol: f64) -> Vec<usize> {
    let max_norm = cols.iter().map(|&k| m.column(k).norm()).fold(0.0, f64::max);
    if max_norm == 0.0 {
        return Vec::new();
    }
    let rows = m.nrows();
    let mut reflectors: Vec<DVector<f64>> = Vec::new();
    let mut chosen = Vec::new();
    for &k in cols {
        let norm = m.column(k).norm();
        if norm <= 1e-12 * max_norm {
            continue;
        }
        let mut v: DVector<f64> = m.column(k) / norm;
        for (i, h) in reflectors.iter().enumerate() {
            let s = 2.0 * h.rows(i, rows - i).dot(&v.rows(i, rows - i));
            let mut tail = v.rows_mut(i, rows - i);
            tail.axpy(-s, &h.rows(i, rows - i), 1.0);
        }
        let i = reflectors.len();
        if i >= rows {
            break;
        }
        let resid = v.rows(i, rows - i).norm();
        if resid <= tol {
            continue;
        }
        // reflector mapping v[i..] to ±resid·e_i
        let mut h = DVector::zeros(rows);
        let alpha = if v[i] >= 0.0 { -resid } else { resid };
        for r in i..rows {
            h[r] = v[r];
        }
        h[i] -= alpha;
        let hn = h.norm();
        h /= hn;
        reflectors.push(h);
        chosen.push(k);
    }
    chosen
}

fn snap(x: f64) -> f64 {
    for den in 1..=SNAP_MAX_DEN {
        let p = (x * den as f64).round();
        let r = p / den as f64;
        if (x - r).abs() <= SNAP_TOL {
            return r;
        }
    }
    x
}

fn base_set(m: &DMatrix<f64>, free: &[usize], tol: f64) -> Result<Vec<usize>> {
    let sub = m.select_columns(free);
    let normalized = normalize_columns(&sub);
    let rank = pivoted_rank(&normalized, tol);
    let picked: Vec<usize> =
        first_independent(&normalized, &(0..free.len()).collect::<Vec<_>>(), tol)
            .into_iter()
            .map(|c| free[c])
            .collect();
    if picked.len() != rank {
        return Err(Error::DegenerateData(format!(
            "ordered elimination found {} independent columns but the pivoted QR rank is {rank}",
            picked.len()
        )));
    }
    Ok(picked)
}

/// Columns whose norm is below this fraction of the largest column norm are
/// rounding noise and count as zero.
pub const NEGLIGIBLE_COLUMN: f64 = 1e-10;

/// `true` for every column of `m` that is zero up to rounding.
pub fn negligible_columns(m: &DMatrix<f64>) -> Vec<bool> {
    let norms: Vec<f64> = m.column_iter().map(|c| c.norm()).collect();
    let top = norms.iter().copied().fold(0.0, f64::max);
    norms
        .iter()
        .map(|&n| !(n > NEGLIGIBLE_COLUMN * top))
        .collect()
}

/// Unit-norm columns, negligible ones zeroed.
fn normalize_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    let zero = negligible_columns(m);
    for (mut c, z) in out.column_iter_mut().zip(zero) {
        if z {
            c.fill(0.0);
        } else {
            let n = c.norm();
            c /= n;
        }
    }
    out
}

/// Stacks `Gᵀ(q_i)·W(s_i)` over the given lifted states.
pub fn stack_constrained(model: &RobotModel, states: &[JointState]) -> Result<DMatrix<f64>> {
    let blocks: Vec<DMatrix<f64>> = states
        .par_iter()
        .enumerate()
        .map(|(i, s)| constrained_regressor(model, s).map_err(|e| Error::at_sample(i, e)))
        .collect::<Result<_>>()?;
    let na = model.n_a();
    let mut m = DMatrix::zeros(na * blocks.len(), model.n_params());
    for (i, b) in blocks.iter().enumerate() {
        m.view_mut((i * na, 0), (na, model.n_params())).copy_from(b);
    }
    Ok(m)
}

/// Random lifted states: actuated positions uniform within 90% of the limit
/// range, velocities within the velocity limits, accelerations in ±`acc`.
pub fn sample_states(
    model: &RobotModel,
    count: usize,
    acc: f64,
    seed: u64,
) -> Result<Vec<JointState>> {
    let home = assembled_home(model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<(DVector<f64>, DVector<f64>, DVector<f64>)> = (0..count)
        .map(|_| {
            let mut qa = DVector::zeros(model.n_a());
            let mut qda = DVector::zeros(model.n_a());
            let mut qdda = DVector::zeros(model.n_a());
            for (k, &j) in model.actuated_indices().iter().enumerate() {
                let link = &model.links()[j];
                let (lo, hi) = link.pos_limits;
                let m = 0.05 * (hi - lo);
                qa[k] = rng.random_range(lo + m..hi - m);
                qda[k] = rng.random_range(-link.vel_limit..link.vel_limit);
                qdda[k] = rng.random_range(-acc..acc);
            }
            (qa, qda, qdda)
        })
        .collect();
    draws
        .par_iter()
        .enumerate()
        .map(|(i, (qa, qda, qdda))| {
            let q = ik_continuation(model, &home, qa, 20)?;
            lift_state(model, qa, qda, qdda, &model.unactuated_part(&q))
                .map_err(|e| Error::at_sample(i, e))
        })
        .collect()
}

/// Regrouping over all parameters with default options.
pub fn analyze(model: &RobotModel, states: &[JointState], tol_rank: f64) -> Result<RegroupingMaps> {
    analyze_with(
        model,
        states,
        None,
        &AnalyzeOptions {
            tol_rank,
            ..AnalyzeOptions::default()
        },
    )
}

/// Regrouping restricted to the free entries of `mask` (all entries when
/// `None`).
pub fn analyze_with(
    model: &RobotModel,
    states: &[JointState],
    mask: Option<&ParameterMask>,
    opts: &AnalyzeOptions,
) -> Result<RegroupingMaps> {
    let m = stack_constrained(model, states)?;
    analyze_matrix(&m, model.n_a(), mask, opts)
}

/// Regrouping of an already stacked regressor matrix made of blocks of
/// `rows_per_sample` rows.
pub fn analyze_matrix(
    m: &DMatrix<f64>,
    rows_per_sample: usize,
    mask: Option<&ParameterMask>,
    opts: &AnalyzeOptions,
) -> Result<RegroupingMaps> {
    let p = m.ncols();
    let (free, fixed_idx, fixed_values) = match mask {
        Some(mask) => {
            mask.validate(p)?;
            let fixed = mask.fixed_indices();
            let vals = fixed
                .iter()
                .map(|&k| mask.fixed_values.as_slice()[k])
                .collect();
            (mask.free_indices(), fixed, vals)
        }
        None => ((0..p).collect(), Vec::new(), Vec::new()),
    };
    let idx_b = base_set(m, &free, opts.tol_rank)?;
    if idx_b.is_empty() {
        return Err(Error::DegenerateData(
            "stacked regressor is zero on the free parameters".into(),
        ));
    }
    if opts.check_stability {
        let rows_per = rows_per_sample.max(1);
        if m.nrows() < 2 * rows_per {
            return Err(Error::DegenerateData(
                "need at least two samples to check stability".into(),
            ));
        }
        // Two interleaved halves of whole samples.
        for half in 0..2 {
            let rows: Vec<usize> = (0..m.nrows())
                .filter(|r| (r / rows_per) % 2 == half)
                .collect();
            let sub = m.select_rows(&rows);
            let other = base_set(&sub, &free, opts.tol_rank)?;
            if other != idx_b {
                return Err(Error::DegenerateData(format!(
                    "base set differs between disjoint halves of the data ({} vs {} parameters)",
                    idx_b.len(),
                    other.len()
                )));
            }
        }
    }
    let idx_d: Vec<usize> = free
        .iter()
        .copied()
        .filter(|k| !idx_b.contains(k))
        .collect();
    let mb = m.select_columns(&idx_b);
    let md = m.select_columns(&idx_d);
    let mut kd = if idx_d.is_empty() {
        DMatrix::zeros(idx_b.len(), 0)
    } else {
        let qr = mb.clone().qr();
        let qtd = qr.q().transpose() * &md;
        qr.r()
            .solve_upper_triangular(&qtd)
            .ok_or_else(|| Error::DegenerateData("base columns are numerically dependent".into()))?
    };
    if opts.snap_rational {
        kd.iter_mut().for_each(|v| *v = snap(*v));
    }
    Ok(RegroupingMaps {
        n_params: p,
        idx_b,
        idx_d,
        kd,
        fixed_idx,
        fixed_values,
        tol_rank: opts.tol_rank,
    })
}
