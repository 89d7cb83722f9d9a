//! Weighted least squares over `(π, θ_d)` with the physical-consistency
//! constraints enforced by a log-det barrier.
//!
//! Decision variables are `x = [π̃; θ_d]` with `π̃ = D·π` (unit-norm columns
//! of the observation matrix). `θ(x)` is affine, so every LMI block and
//! friction bound is affine in `x` and the problem is convex.

use nalgebra::{Cholesky, DMatrix, DVector, Matrix4, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{
    is_physically_consistent, lmi_matrix, lmi_to_block, StandardParams, N_FRICTION, N_INERTIAL,
};
use crate::regroup::{negligible_columns, RegroupingMaps};

const MU_START: f64 = 1e-1;
const MU_END: f64 = 1e-20;
const MU_FACTOR: f64 = 0.1;
const MAX_NEWTON: usize = 60;
const ACTIVE_TOL: f64 = 1e-6;
/// Weight of the proximal term `½‖x_k − ref_k‖²` on the coordinates the
/// data does not see (θ_d and zero columns). It enters with the barrier, so
/// it keeps the central path bounded and vanishes with μ.
const PROX_WEIGHT: f64 = 1.0;

struct LmiBlock {
    /// `LMI(θ_0 block) − ε·I`.
    base: Matrix4<f64>,
    dirs: Vec<(usize, Matrix4<f64>)>,
}

struct Scalar {
    c0: f64,
    row: Vec<(usize, f64)>,
}

/// The convex program for one set of weights.
pub(crate) struct Problem {
    m: usize,
    n_id: usize,
    /// Scaled objective `½‖A·x − b‖²`; `P = AᵀA`, `q = Aᵀb` drive the
    /// Newton steps, `A` itself the final solve.
    p: DMatrix<f64>,
    q: DVector<f64>,
    a_ls: DMatrix<f64>,
    b_ls: DVector<f64>,
    /// `θ = T·x + t0`.
    t_map: DMatrix<f64>,
    t0: DVector<f64>,
    lmis: Vec<LmiBlock>,
    scalars: Vec<Scalar>,
    /// `(coordinate, anchor)` of the proximal term.
    prox: Vec<(usize, f64)>,
    /// π̃ columns the data sees; the others are left to the barrier.
    data_free: Vec<bool>,
    /// Column scales `D`.
    pub(crate) col_scale: DVector<f64>,
    eps_pd: f64,
    n_links: usize,
}

/// Output of one restart.
#[derive(Debug, Clone)]
pub(crate) struct Solution {
    pub x: DVector<f64>,
    /// Scaled objective.
    pub f: f64,
}

impl Problem {
    /// `gy`/`u`/`weights` from the observation; `prox_ref` is the θ the
    /// proximal term anchors θ_d to; `reg` adds `ρ‖θ_free − θ_ref‖²`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        gy: &DMatrix<f64>,
        u: &DVector<f64>,
        weights: &DVector<f64>,
        col_scale: &DVector<f64>,
        maps: &RegroupingMaps,
        eps_pd: f64,
        prox_ref: &StandardParams,
        reg: Option<(f64, &StandardParams)>,
    ) -> Result<Self> {
        let n_id = maps.n_id();
        let n_d = maps.n_d();
        let m = n_id + n_d;
        let n_params = maps.n_params();
        let n_links = n_params / (N_INERTIAL + N_FRICTION);
        if gy.ncols() != n_id || gy.nrows() != u.len() || weights.len() != u.len() {
            return Err(Error::DimensionMismatch(
                "observation does not match the regrouping maps".into(),
            ));
        }
        // weighted, column-scaled data
        let w_mean = weights.mean();
        let sw = weights.map(|w| (w / w_mean).sqrt());
        let mut a = gy.clone();
        let zero = negligible_columns(gy);
        for c in 0..n_id {
            if zero[c] {
                a.column_mut(c).fill(0.0);
                continue;
            }
            let s = col_scale[c];
            a.column_mut(c)
                .iter_mut()
                .zip(sw.iter())
                .for_each(|(v, w)| *v *= w / s);
        }
        let mut b = u.component_mul(&sw);
        // μ is relative: the data rows (and regularization) are normalized
        // so that the zero parameter vector costs ½
        let scale = b.norm().max(f64::MIN_POSITIVE.sqrt());
        a /= scale;
        b /= scale;

        // affine map θ(x)
        let zero_pi = DVector::zeros(n_id);
        let zero_d = DVector::zeros(n_d);
        let t0 = maps.base_to_params(&zero_pi, &zero_d)?.to_dvector();
        let mut t_map = DMatrix::zeros(n_params, m);
        for k in 0..m {
            let mut pi = zero_pi.clone();
            let mut td = zero_d.clone();
            if k < n_id {
                pi[k] = 1.0 / col_scale[k];
            } else {
                td[k - n_id] = 1.0;
            }
            let col = maps.base_to_params(&pi, &td)?.to_dvector() - &t0;
            t_map.set_column(k, &col);
        }

        // the objective is ½‖A·x − b‖² over data rows and regularization rows
        let (_, td_ref) = maps.params_to_base(prox_ref)?;
        let mut prox: Vec<(usize, f64)> = (0..n_d).map(|k| (n_id + k, td_ref[k])).collect();
        let mut data_free = vec![true; n_id];
        for k in 0..n_id {
            if a.column(k).iter().all(|v| *v == 0.0) {
                prox.push((k, 0.0));
                data_free[k] = false;
            }
        }
        let mut reg_rows = None;
        if let Some((rho, target)) = reg {
            if rho > 0.0 {
                let free: Vec<usize> = (0..n_params)
                    .filter(|&i| t_map.row(i).iter().any(|v| *v != 0.0))
                    .collect();
                let sr = rho.sqrt() / scale;
                let tf = t_map.select_rows(&free) * sr;
                let d = DVector::from_iterator(
                    free.len(),
                    free.iter().map(|&i| sr * (target.as_slice()[i] - t0[i])),
                );
                reg_rows = Some((tf, d));
            }
        }
        let extra = reg_rows.as_ref().map_or(0, |(t, _)| t.nrows());
        let data_rows = a.nrows();
        let mut a_ls = DMatrix::zeros(data_rows + extra, m);
        let mut b_ls = DVector::zeros(data_rows + extra);
        a_ls.view_mut((0, 0), (data_rows, n_id)).copy_from(&a);
        b_ls.rows_mut(0, data_rows).copy_from(&b);
        let at = data_rows;
        if let Some((tf, d)) = reg_rows {
            a_ls.view_mut((at, 0), (tf.nrows(), m)).copy_from(&tf);
            b_ls.rows_mut(at, d.len()).copy_from(&d);
        }
        let p = a_ls.transpose() * &a_ls;
        let q = a_ls.transpose() * &b_ls;

        let mut lmis = Vec::new();
        for j in 0..n_links {
            let o = StandardParams::inertial_offset(j);
            let block0: Vec<f64> = (0..N_INERTIAL).map(|i| t0[o + i]).collect();
            let base = lmi_matrix(&block0) - Matrix4::identity() * eps_pd;
            let mut dirs = Vec::new();
            for k in 0..m {
                let col: Vec<f64> = (0..N_INERTIAL).map(|i| t_map[(o + i, k)]).collect();
                if col.iter().any(|v| *v != 0.0) {
                    dirs.push((k, lmi_matrix(&col)));
                }
            }
            if dirs.is_empty() {
                if base.cholesky().is_none() {
                    return Err(Error::NoFeasiblePoint(format!(
                        "fixed inertial parameters of link {} are not physically consistent",
                        j + 1
                    )));
                }
                continue;
            }
            lmis.push(LmiBlock { base, dirs });
        }
        let mut scalars = Vec::new();
        for j in 0..n_links {
            let o = StandardParams::friction_offset(n_links, j);
            for i in 0..3 {
                let row: Vec<(usize, f64)> = (0..m)
                    .filter_map(|k| {
                        let v = t_map[(o + i, k)];
                        (v != 0.0).then_some((k, v))
                    })
                    .collect();
                if row.is_empty() {
                    if t0[o + i] < 0.0 {
                        return Err(Error::NoFeasiblePoint(format!(
                            "fixed friction parameter {} of joint {} is negative",
                            i + 1,
                            j + 1
                        )));
                    }
                    continue;
                }
                scalars.push(Scalar { c0: t0[o + i], row });
            }
        }
        Ok(Self {
            m,
            n_id,
            p,
            q,
            a_ls,
            b_ls,
            t_map,
            t0,
            lmis,
            scalars,
            prox,
            data_free,
            col_scale: col_scale.clone(),
            eps_pd,
            n_links,
        })
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn theta(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.t_map * x + &self.t0
    }

    /// `(π, θ_d)` in physical units.
    pub fn split(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let pi = x.rows(0, self.n_id).component_div(&self.col_scale);
        (pi, x.rows(self.n_id, self.m - self.n_id).into_owned())
    }

    pub fn join(&self, pi: &DVector<f64>, theta_d: &DVector<f64>) -> DVector<f64> {
        let mut x = DVector::zeros(self.m);
        x.rows_mut(0, self.n_id)
            .copy_from(&pi.component_mul(&self.col_scale));
        x.rows_mut(self.n_id, self.m - self.n_id).copy_from(theta_d);
        x
    }

    fn quad(&self, x: &DVector<f64>) -> f64 {
        0.5 * (&self.a_ls * x - &self.b_ls).norm_squared()
    }

    fn lmi_value(&self, b: &LmiBlock, x: &DVector<f64>) -> Matrix4<f64> {
        let mut m = b.base;
        for (k, a) in &b.dirs {
            m += a * x[*k];
        }
        m
    }

    fn scalar_value(s: &Scalar, x: &DVector<f64>) -> f64 {
        s.c0 + s.row.iter().map(|(k, v)| v * x[*k]).sum::<f64>()
    }

    /// Strict feasibility of the barrier domain.
    pub fn feasible(&self, x: &DVector<f64>) -> bool {
        self.scalars.iter().all(|s| Self::scalar_value(s, x) > 0.0)
            && self
                .lmis
                .iter()
                .all(|b| self.lmi_value(b, x).cholesky().is_some())
    }

    /// Barrier value (proximal term included), or `None` outside the domain.
    fn barrier(&self, x: &DVector<f64>) -> Option<f64> {
        let mut phi: f64 = self
            .prox
            .iter()
            .map(|&(k, r)| 0.5 * PROX_WEIGHT * (x[k] - r).powi(2))
            .sum();
        for s in &self.scalars {
            let g = Self::scalar_value(s, x);
            if !(g > 0.0) {
                return None;
            }
            phi -= g.ln();
        }
        for b in &self.lmis {
            let ch = self.lmi_value(b, x).cholesky()?;
            phi -= 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        }
        Some(phi)
    }

    fn barrier_derivatives(&self, x: &DVector<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let mut g = DVector::zeros(self.m);
        let mut h = DMatrix::zeros(self.m, self.m);
        for &(k, r) in &self.prox {
            g[k] += PROX_WEIGHT * (x[k] - r);
            h[(k, k)] += PROX_WEIGHT;
        }
        for s in &self.scalars {
            let v = Self::scalar_value(s, x);
            for &(a, ta) in &s.row {
                g[a] -= ta / v;
                for &(b, tb) in &s.row {
                    h[(a, b)] += ta * tb / (v * v);
                }
            }
        }
        for blk in &self.lmis {
            let minv = self.lmi_value(blk, x).cholesky()?.inverse();
            let bs: Vec<Matrix4<f64>> = blk.dirs.iter().map(|(_, a)| minv * a).collect();
            for (i, (a, _)) in blk.dirs.iter().enumerate() {
                g[*a] -= bs[i].trace();
                for (j, (b, _)) in blk.dirs.iter().enumerate().skip(i) {
                    let v = (bs[i] * bs[j]).trace();
                    h[(*a, *b)] += v;
                    if i != j {
                        h[(*b, *a)] += v;
                    }
                }
            }
        }
        Some((g, h))
    }

    /// Moves an arbitrary point into the strict interior by clipping LMI
    /// eigenvalues and friction terms in θ-space; fails if fixed entries
    /// prevent it.
    pub fn restore(&self, x: &DVector<f64>, maps: &RegroupingMaps) -> Option<DVector<f64>> {
        if self.feasible(x) {
            return Some(x.clone());
        }
        let mut theta = StandardParams::from_dvector(self.n_links, &self.theta(x)).ok()?;
        for j in 0..self.n_links {
            let m = lmi_matrix(theta.inertial(j));
            let eig = SymmetricEigen::new(m);
            let top = eig.eigenvalues.amax().max(1e-6);
            let floor = self.eps_pd + 1e-3 * top;
            if eig.eigenvalues.min() < floor {
                let clipped = eig.eigenvalues.map(|l| l.max(floor));
                let rebuilt = eig.eigenvectors
                    * Matrix4::from_diagonal(&clipped)
                    * eig.eigenvectors.transpose();
                let rebuilt = 0.5 * (rebuilt + rebuilt.transpose());
                theta
                    .inertial_mut(j)
                    .copy_from_slice(&lmi_to_block(&rebuilt));
            }
            let f = theta.friction_mut(j);
            let scale = f[..3].iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-6);
            for v in f[..3].iter_mut() {
                if *v < 1e-3 * scale {
                    *v = 1e-3 * scale;
                }
            }
        }
        let (pi, td) = maps.params_to_base(&theta).ok()?;
        let y = self.join(&pi, &td);
        self.feasible(&y).then_some(y)
    }

    /// Barrier path following from a strictly feasible `x0`. Returns the
    /// iterate at the end of every μ stage, last stage last.
    pub fn solve_barrier(&self, x0: &DVector<f64>) -> Vec<DVector<f64>> {
        let mut x = x0.clone();
        let mut stages = Vec::new();
        let mut mu = MU_START;
        while mu >= MU_END * 0.999 {
            for _ in 0..MAX_NEWTON {
                let Some(phi) = self.barrier(&x) else { break };
                let f0 = self.quad(&x) + mu * phi;
                let Some((gb, hb)) = self.barrier_derivatives(&x) else {
                    break;
                };
                let grad = &self.p * &x - &self.q + gb * mu;
                let hess = &self.p + hb * mu;
                let Some(dx) = newton_direction(&hess, &grad) else {
                    break;
                };
                let dec = -grad.dot(&dx);
                if !(dec > 1e-12 * mu) {
                    break;
                }
                let mut t = 1.0;
                let mut accepted = false;
                for _ in 0..80 {
                    let xn = &x + &dx * t;
                    if let Some(pn) = self.barrier(&xn) {
                        let fn_ = self.quad(&xn) + mu * pn;
                        if fn_ <= f0 - 0.25 * t * dec {
                            x = xn;
                            accepted = true;
                            break;
                        }
                    }
                    t *= 0.5;
                }
                if !accepted || 0.5 * dec <= 1e-10 * mu {
                    break;
                }
            }
            stages.push(x.clone());
            mu *= MU_FACTOR;
        }
        stages
    }

    /// Re-solves the π̃ block exactly with θ_d held, treating friction bounds
    /// that sit on a single π̃ entry as equalities. `None` if that point is
    /// not strictly inside the LMI domain or breaks a bound.
    pub fn polish(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        let n_id = self.n_id;
        let mut pinned = vec![false; n_id];
        for s in &self.scalars {
            let v = Self::scalar_value(s, x);
            if v > ACTIVE_TOL * (1.0 + s.c0.abs()) {
                continue;
            }
            let pi_terms: Vec<&(usize, f64)> = s.row.iter().filter(|(k, _)| *k < n_id).collect();
            let rest: f64 = s.c0
                + s.row
                    .iter()
                    .filter(|(k, _)| *k >= n_id)
                    .map(|(k, t)| t * x[*k])
                    .sum::<f64>();
            if pi_terms.len() != 1 || rest != 0.0 {
                return None;
            }
            pinned[pi_terms[0].0] = true;
        }
        let free: Vec<usize> = (0..n_id)
            .filter(|&k| !pinned[k] && self.data_free[k])
            .collect();
        let mut y = x.clone();
        for k in 0..n_id {
            if pinned[k] {
                y[k] = 0.0;
            }
        }
        if !free.is_empty() {
            let others: Vec<usize> = (0..self.m).filter(|k| !free.contains(k)).collect();
            let xo = DVector::from_iterator(others.len(), others.iter().map(|&k| y[k]));
            let rhs = &self.b_ls - self.a_ls.select_columns(&others) * xo;
            let af = self.a_ls.select_columns(&free);
            if af.nrows() < af.ncols() {
                return None;
            }
            let qr = af.qr();
            let sol = qr.r().solve_upper_triangular(&(qr.q().transpose() * rhs))?;
            for (i, &k) in free.iter().enumerate() {
                y[k] = sol[i];
            }
        }
        let lmi_ok = self
            .lmis
            .iter()
            .all(|b| self.lmi_value(b, &y).cholesky().is_some());
        let bounds_ok = self
            .scalars
            .iter()
            .all(|s| Self::scalar_value(s, &y) >= 0.0);
        (lmi_ok && bounds_ok && y.iter().all(|v| v.is_finite())).then_some(y)
    }

    /// Full solve from one starting point: restoration, barrier path,
    /// polish, post-hoc consistency check.
    pub fn solve_from(&self, start: &DVector<f64>, maps: &RegroupingMaps) -> Option<Solution> {
        let x0 = self.restore(start, maps)?;
        let stages = self.solve_barrier(&x0);
        let consistent = |x: &DVector<f64>| {
            let (pi, td) = self.split(x);
            maps.base_to_params(&pi, &td)
                .map(|th| is_physically_consistent(&th, self.eps_pd).consistent)
                .unwrap_or(false)
        };
        let last = stages.last()?.clone();
        if let Some(y) = self.polish(&last) {
            if consistent(&y) && self.quad(&y) <= self.quad(&last) * (1.0 + 1e-9) + 1e-300 {
                return Some(Solution {
                    f: self.quad(&y),
                    x: y,
                });
            }
        }
        stages
            .iter()
            .rev()
            .find(|x| consistent(x))
            .map(|x| Solution {
                f: self.quad(x),
                x: x.clone(),
            })
    }
}

/// Solves `H·d = −g` after symmetric diagonal scaling (Newton steps are
/// invariant under it, the factorization is not), with a growing diagonal
/// shift when the scaled matrix is not numerically positive definite.
fn newton_direction(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let n = h.nrows();
    let d = DVector::from_iterator(
        n,
        (0..n).map(|i| {
            let v = h[(i, i)];
            if v > 0.0 {
                1.0 / v.sqrt()
            } else {
                1.0
            }
        }),
    );
    let mut hs = h.clone();
    for i in 0..n {
        for j in 0..n {
            hs[(i, j)] *= d[i] * d[j];
        }
    }
    let gs = -g.component_mul(&d);
    let mut shift = 0.0;
    for _ in 0..12 {
        let mut m = hs.clone();
        for i in 0..n {
            m[(i, i)] += shift;
        }
        if let Some(ch) = Cholesky::new(m) {
            let y = ch.solve(&gs);
            if y.iter().all(|v| v.is_finite()) {
                return Some(y.component_mul(&d));
            }
        }
        shift = if shift == 0.0 { 1e-14 } else { shift * 100.0 };
    }
    None
}
