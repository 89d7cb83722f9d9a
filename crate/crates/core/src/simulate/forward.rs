//! Constrained forward dynamics via the KKT saddle-point system.

use nalgebra::{DMatrix, DVector};

use crate::constraint::eval_constraints;
use crate::dynamics::{bias_forces, kinetic_energy, mass_matrix, potential_energy};
use crate::error::{Error, Result};
use crate::model::{RobotModel, StandardParams};

/// Solver-side settings of the forward dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardConfig {
    /// Width of the `tanh` that replaces `sign(q̇)` in the Coulomb term (rad/s).
    pub sign_smoothing_eps: f64,
    /// Baumgarte velocity gain α.
    pub baumgarte_alpha: f64,
    /// Baumgarte position gain β.
    pub baumgarte_beta: f64,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        Self {
            sign_smoothing_eps: 1e-3,
            baumgarte_alpha: 20.0,
            baumgarte_beta: 100.0,
        }
    }
}

/// Smallest reciprocal pivot ratio accepted from the KKT factorization.
const MIN_RCOND: f64 = 1e-14;

/// Joint accelerations and constraint forces.
#[derive(Debug, Clone)]
pub struct ForwardSolution {
    pub qdd: DVector<f64>,
    pub lambda: DVector<f64>,
}

/// Friction without the `I_a·q̈` term, Coulomb part smoothed.
pub fn smooth_friction(theta: &StandardParams, qd: &DVector<f64>, eps: f64) -> DVector<f64> {
    DVector::from_iterator(
        qd.len(),
        (0..qd.len()).map(|j| {
            let f = theta.friction(j);
            f[0] * (qd[j] / eps).tanh() + f[1] * qd[j] + f[3]
        }),
    )
}

/// `H + diag(I_a)`.
pub fn augmented_mass_matrix(
    model: &RobotModel,
    theta: &StandardParams,
    q: &DVector<f64>,
) -> DMatrix<f64> {
    let mut h = mass_matrix(model, theta, q);
    for j in 0..model.n() {
        h[(j, j)] += theta.friction(j)[2];
    }
    h
}

/// Solves `[H_aug, Jᵀ; J, 0]·[q̈; −λ] = [B·u − bias − F; −J̇q̇ − 2α·Jq̇ − β²·c]`.
pub fn forward_dynamics(
    model: &RobotModel,
    theta: &StandardParams,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    u: &DVector<f64>,
    cfg: &ForwardConfig,
) -> Result<ForwardSolution> {
    let n = model.n();
    let nc = model.n_c();
    let h = augmented_mass_matrix(model, theta, q);
    let rhs_top = model.transmission() * u
        - bias_forces(model, theta, q, qd)
        - smooth_friction(theta, qd, cfg.sign_smoothing_eps);
    let mut kkt = DMatrix::zeros(n + nc, n + nc);
    kkt.view_mut((0, 0), (n, n)).copy_from(&h);
    let mut rhs = DVector::zeros(n + nc);
    rhs.rows_mut(0, n).copy_from(&rhs_top);
    if nc > 0 {
        let ev = eval_constraints(model, q, qd);
        kkt.view_mut((n, 0), (nc, n)).copy_from(&ev.j);
        kkt.view_mut((0, n), (n, nc)).copy_from(&ev.j.transpose());
        let (a, b) = (cfg.baumgarte_alpha, cfg.baumgarte_beta);
        let stab = -&ev.jdot_qd - (&ev.j * qd) * (2.0 * a) - &ev.c * (b * b);
        rhs.rows_mut(n, nc).copy_from(&stab);
    }
    let lu = kkt.lu();
    let u_diag = lu.u().diagonal().abs();
    let rcond = if u_diag.max() > 0.0 {
        u_diag.min() / u_diag.max()
    } else {
        0.0
    };
    if !(rcond >= MIN_RCOND) {
        return Err(Error::SingularKkt { rcond });
    }
    let x = lu.solve(&rhs).ok_or(Error::SingularKkt { rcond })?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularKkt { rcond });
    }
    Ok(ForwardSolution {
        qdd: x.rows(0, n).into_owned(),
        lambda: -x.rows(n, nc).into_owned(),
    })
}

/// Kinetic energy including transmission inertia, plus gravitational potential.
pub fn total_energy(
    model: &RobotModel,
    theta: &StandardParams,
    q: &DVector<f64>,
    qd: &DVector<f64>,
) -> f64 {
    let ia: f64 = (0..model.n())
        .map(|j| 0.5 * theta.friction(j)[2] * qd[j] * qd[j])
        .sum();
    kinetic_energy(model, theta, q, qd) + ia + potential_energy(model, theta, q)
}
