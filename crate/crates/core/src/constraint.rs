//! Loop-closure constraints: residual, Jacobian, inverse kinematics, the
//! projection `G` onto actuated coordinates, and the projected inverse
//! dynamics.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, LU};

use crate::dynamics::{self, forward_pass, link_poses, JointState};
use crate::error::{Error, Result};
use crate::model::{RobotModel, StandardParams};

/// Newton tolerance on `‖c‖∞`.
pub const IK_TOL: f64 = 1e-10;
pub const IK_MAX_ITER: usize = 50;
/// `|det J_u|` below this counts as singular.
pub const SINGULAR_DET: f64 = 1e-12;

/// `c(q)`, `J(q)` and `J̇(q)q̇`.
#[derive(Debug, Clone)]
pub struct ConstraintEval {
    pub c: DVector<f64>,
    pub j: DMatrix<f64>,
    pub jdot_qd: DVector<f64>,
}

/// `G(q)` and `Ġ(q)q̇_a`.
#[derive(Debug, Clone)]
pub struct Projection {
    pub g: DMatrix<f64>,
    pub gdot_qda: DVector<f64>,
}

fn is_ancestor_or_self(model: &RobotModel, k: usize, body: Option<usize>) -> bool {
    let mut cur = body;
    while let Some(b) = cur {
        if b == k {
            return true;
        }
        cur = model.links()[b].parent;
    }
    false
}

type Poses = Vec<(Matrix3<f64>, Vector3<f64>)>;

fn point_world(poses: &Poses, body: Option<usize>, point: &Vector3<f64>) -> Vector3<f64> {
    match body {
        Some(b) => poses[b].1 + poses[b].0 * point,
        None => *point,
    }
}

/// Constraint residual only.
pub fn constraint_value(model: &RobotModel, q: &DVector<f64>) -> DVector<f64> {
    let poses = link_poses(model, q);
    let mut c = DVector::zeros(model.n_c());
    let mut row = 0;
    for spec in model.constraints() {
        let d = point_world(&poses, spec.body_p, &spec.point_p)
            - point_world(&poses, spec.body_s, &spec.point_s);
        for a in &spec.axes {
            c[row] = d[a.index()];
            row += 1;
        }
    }
    c
}

fn jacobian_with(model: &RobotModel, poses: &Poses) -> DMatrix<f64> {
    let n = model.n();
    let mut jac = DMatrix::zeros(model.n_c(), n);
    let mut row = 0;
    for spec in model.constraints() {
        let xp = point_world(poses, spec.body_p, &spec.point_p);
        let xs = point_world(poses, spec.body_s, &spec.point_s);
        for k in 0..n {
            let (r, o) = &poses[k];
            let z = r * model.links()[k].axis;
            let mut col = Vector3::zeros();
            if is_ancestor_or_self(model, k, spec.body_p) {
                col += z.cross(&(xp - o));
            }
            if is_ancestor_or_self(model, k, spec.body_s) {
                col -= z.cross(&(xs - o));
            }
            for (i, a) in spec.axes.iter().enumerate() {
                jac[(row + i, k)] = col[a.index()];
            }
        }
        row += spec.axes.len();
    }
    jac
}

/// Constraint Jacobian `∂c/∂q`.
pub fn constraint_jacobian(model: &RobotModel, q: &DVector<f64>) -> DMatrix<f64> {
    jacobian_with(model, &link_poses(model, q))
}

/// Full constraint evaluation at `(q, q̇)`.
pub fn eval_constraints(model: &RobotModel, q: &DVector<f64>, qd: &DVector<f64>) -> ConstraintEval {
    let poses = link_poses(model, q);
    let j = jacobian_with(model, &poses);
    // J̇q̇ is the relative point acceleration at zero joint acceleration.
    let motion = forward_pass(model, q, qd, &DVector::zeros(model.n()), false);
    let accel = |body: Option<usize>, r: &Vector3<f64>| -> Vector3<f64> {
        match body {
            Some(b) => {
                let m = &motion[b];
                poses[b].0 * (m.accel + m.omega_dot.cross(r) + m.omega.cross(&m.omega.cross(r)))
            }
            None => Vector3::zeros(),
        }
    };
    let mut c = DVector::zeros(model.n_c());
    let mut jdot_qd = DVector::zeros(model.n_c());
    let mut row = 0;
    for spec in model.constraints() {
        let d = point_world(&poses, spec.body_p, &spec.point_p)
            - point_world(&poses, spec.body_s, &spec.point_s);
        let a = accel(spec.body_p, &spec.point_p) - accel(spec.body_s, &spec.point_s);
        for ax in &spec.axes {
            c[row] = d[ax.index()];
            jdot_qd[row] = a[ax.index()];
            row += 1;
        }
    }
    ConstraintEval { c, j, jdot_qd }
}

/// Splits the columns of `J` into `(J_a, J_u)`.
pub fn split_columns(model: &RobotModel, j: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    (
        j.select_columns(model.actuated_indices()),
        j.select_columns(model.unactuated_indices()),
    )
}

fn factor_ju(ju: DMatrix<f64>, q: &DVector<f64>) -> Result<LU<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    let lu = ju.lu();
    let det = lu.determinant();
    if !(det.abs() >= SINGULAR_DET) {
        return Err(Error::SingularJu {
            det: det.abs(),
            last_iterate: q.clone(),
        });
    }
    Ok(lu)
}

/// Result of [`solve_ik`].
#[derive(Debug, Clone)]
pub struct IkSolution {
    pub qu: DVector<f64>,
    /// Residual evaluations performed; 1 when the guess already satisfies the
    /// tolerance.
    pub iterations: usize,
    pub residual: f64,
}

/// Newton iteration on `c(q_a, q_u) = 0` for `q_u`, starting at `guess`.
pub fn solve_ik(model: &RobotModel, qa: &DVector<f64>, guess: &DVector<f64>) -> Result<IkSolution> {
    model.require_fully_actuated()?;
    if qa.len() != model.n_a() || guess.len() != model.n_u() {
        return Err(Error::DimensionMismatch(format!(
            "solve_ik expects q_a of length {} and guess of length {}",
            model.n_a(),
            model.n_u()
        )));
    }
    let mut qu = guess.clone();
    let mut residual = f64::INFINITY;
    for it in 1..=IK_MAX_ITER + 1 {
        let q = model.assemble(qa, &qu);
        let poses = link_poses(model, &q);
        let jac = jacobian_with(model, &poses);
        let lu = factor_ju(jac.select_columns(model.unactuated_indices()), &q)?;
        let c = constraint_value(model, &q);
        residual = c.amax();
        if residual <= IK_TOL {
            return Ok(IkSolution {
                qu,
                iterations: it,
                residual,
            });
        }
        if it > IK_MAX_ITER || !residual.is_finite() {
            break;
        }
        let step = lu.solve(&c).expect("nonsingular J_u");
        qu -= step;
    }
    Err(Error::NoConvergence {
        residual,
        last_iterate: model.assemble(qa, &qu),
    })
}

/// `G(q)` alone.
pub fn projection_matrix(model: &RobotModel, q: &DVector<f64>) -> Result<DMatrix<f64>> {
    model.require_fully_actuated()?;
    let jac = constraint_jacobian(model, q);
    let (ja, ju) = split_columns(model, &jac);
    let lu = factor_ju(ju, q)?;
    let gu = -lu.solve(&ja).expect("nonsingular J_u");
    Ok(assemble_g(model, &gu))
}

fn assemble_g(model: &RobotModel, gu: &DMatrix<f64>) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(model.n(), model.n_a());
    for (k, &j) in model.actuated_indices().iter().enumerate() {
        g[(j, k)] = 1.0;
    }
    for (r, &j) in model.unactuated_indices().iter().enumerate() {
        g.row_mut(j).copy_from(&gu.row(r));
    }
    g
}

/// `G(q)` and `Ġ(q)q̇_a`, using the actuated entries of `qd` as `q̇_a`.
pub fn projection(model: &RobotModel, q: &DVector<f64>, qd: &DVector<f64>) -> Result<Projection> {
    model.require_fully_actuated()?;
    let jac = constraint_jacobian(model, q);
    let (ja, ju) = split_columns(model, &jac);
    let lu = factor_ju(ju, q)?;
    let gu = -lu.solve(&ja).expect("nonsingular J_u");
    let g = assemble_g(model, &gu);
    let qd_full = &g * model.actuated_part(qd);
    let ev = eval_constraints(model, q, &qd_full);
    let corr = -lu.solve(&ev.jdot_qd).expect("nonsingular J_u");
    let gdot_qda = model.assemble(&DVector::zeros(model.n_a()), &corr);
    Ok(Projection { g, gdot_qda })
}

/// Full state consistent with the constraints from actuated motion.
pub fn lift_state(
    model: &RobotModel,
    qa: &DVector<f64>,
    qda: &DVector<f64>,
    qdda: &DVector<f64>,
    guess: &DVector<f64>,
) -> Result<JointState> {
    let ik = solve_ik(model, qa, guess)?;
    let q = model.assemble(qa, &ik.qu);
    let qd0 = model.assemble(qda, &DVector::zeros(model.n_u()));
    let p = projection(model, &q, &qd0)?;
    let qd = &p.g * qda;
    let qdd = &p.g * qdda + p.gdot_qda;
    Ok(JointState { q, qd, qdd })
}

/// IK from `from` (a feasible full configuration) to `qa_target`, walking the
/// actuated coordinates in `steps` equal increments so the branch is kept.
pub fn ik_continuation(
    model: &RobotModel,
    from: &DVector<f64>,
    qa_target: &DVector<f64>,
    steps: usize,
) -> Result<DVector<f64>> {
    let qa0 = model.actuated_part(from);
    let mut qu = model.unactuated_part(from);
    let steps = steps.max(1);
    for s in 1..=steps {
        let f = s as f64 / steps as f64;
        let qa = &qa0 + (qa_target - &qa0) * f;
        qu = solve_ik(model, &qa, &qu)?.qu;
    }
    Ok(model.assemble(qa_target, &qu))
}

/// The model's home configuration closed by IK.
pub fn assembled_home(model: &RobotModel) -> Result<DVector<f64>> {
    let home = model.home();
    let qa = model.actuated_part(&home);
    let ik = solve_ik(model, &qa, &model.unactuated_part(&home))?;
    Ok(model.assemble(&qa, &ik.qu))
}

/// `u = Gᵀ(q)·W(s)·θ`.
pub fn constrained_inverse_dynamics(
    model: &RobotModel,
    theta: &StandardParams,
    s: &JointState,
) -> Result<DVector<f64>> {
    let g = projection_matrix(model, &s.q)?;
    Ok(g.transpose() * dynamics::inverse_dynamics(model, theta, s))
}

/// Projected regressor `Gᵀ(q)·W(s)` (n_a × 14n).
pub fn constrained_regressor(model: &RobotModel, s: &JointState) -> Result<DMatrix<f64>> {
    let g = projection_matrix(model, &s.q)?;
    Ok(g.transpose() * dynamics::regressor(model, s))
}

/// `λ = J_u⁻ᵀ·(W(s)θ − B·u)_U`.
pub fn constraint_forces(
    model: &RobotModel,
    theta: &StandardParams,
    s: &JointState,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    model.require_fully_actuated()?;
    let tau = dynamics::inverse_dynamics(model, theta, s) - model.transmission() * u;
    let jac = constraint_jacobian(model, &s.q);
    let ju = jac.select_columns(model.unactuated_indices());
    factor_ju(ju.clone(), &s.q)?;
    let lu = ju.transpose().lu();
    Ok(lu
        .solve(&model.unactuated_part(&tau))
        .expect("nonsingular J_u"))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::dynamics::tests::random_vec;
    use crate::fixtures;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// Upper-branch four-bar closure by circle intersection.
    fn fourbar_oracle(
        theta: f64,
        crank: f64,
        coupler: f64,
        rocker: f64,
        ground: f64,
    ) -> (f64, f64) {
        let a = Vector3::new(crank * theta.cos(), crank * theta.sin(), 0.0);
        let o = Vector3::new(ground, 0.0, 0.0);
        let d = (o - a).norm();
        let x = (coupler * coupler - rocker * rocker + d * d) / (2.0 * d);
        let h = (coupler * coupler - x * x).sqrt();
        let e = (o - a) / d;
        let p = a + e * x + Vector3::new(-e.y, e.x, 0.0) * h;
        let q1 = (p.y - a.y).atan2(p.x - a.x) - theta;
        let q2 = p.y.atan2(p.x - ground);
        (q1, q2)
    }

    fn wrap(x: f64) -> f64 {
        (x + PI).rem_euclid(2.0 * PI) - PI
    }

    pub(crate) fn random_feasible(model: &RobotModel, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let home = assembled_home(model).unwrap();
        let qa = DVector::from_iterator(
            model.n_a(),
            model.actuated_indices().iter().map(|&j| {
                let (lo, hi) = model.links()[j].pos_limits;
                let m = 0.05 * (hi - lo);
                rng.random_range(lo + m..hi - m)
            }),
        );
        ik_continuation(model, &home, &qa, 20).unwrap()
    }

    pub(crate) fn random_lifted(model: &RobotModel, rng: &mut ChaCha8Rng) -> JointState {
        let q = random_feasible(model, rng);
        let qa = model.actuated_part(&q);
        let qda = random_vec(rng, model.n_a(), 2.0);
        let qdda = random_vec(rng, model.n_a(), 5.0);
        lift_state(model, &qa, &qda, &qdda, &model.unactuated_part(&q)).unwrap()
    }

    #[test]
    fn ik_matches_circle_intersection() {
        let model = fixtures::fourbar();
        let qa = DVector::from_element(1, PI / 3.0);
        let sol = solve_ik(&model, &qa, &DVector::from_vec(vec![-0.5, 1.3])).unwrap();
        let (q1, q2) = fourbar_oracle(PI / 3.0, 1.0, 2.0, 1.5, 2.0);
        assert!((wrap(sol.qu[0] - q1)).abs() < 1e-9, "{} vs {q1}", sol.qu[0]);
        assert!((wrap(sol.qu[1] - q2)).abs() < 1e-9);
        let c = constraint_value(&model, &model.assemble(&qa, &sol.qu));
        assert!(c.amax() <= 1e-10);
        // warm start from the solution
        let again = solve_ik(&model, &qa, &sol.qu).unwrap();
        assert_eq!(again.iterations, 1);
        assert_eq!(again.qu, sol.qu);
    }

    #[test]
    fn ik_over_crank_circle() {
        let model = fixtures::fourbar();
        let mut q = assembled_home(&model).unwrap();
        for k in 0..60 {
            let th = -3.0 + 6.0 * k as f64 / 59.0;
            q = ik_continuation(&model, &q, &DVector::from_element(1, th), 4).unwrap();
            let (q1, q2) = fourbar_oracle(th, 1.0, 2.0, 1.5, 2.0);
            assert!(
                wrap(q[1] - q1).abs() < 1e-9 && wrap(q[2] - q2).abs() < 1e-9,
                "crank {th}"
            );
        }
    }

    #[test]
    fn ik_at_tangency_is_singular() {
        let model = fixtures::fourbar_tangent();
        // Oracle: bisection on the crank angle where |A − O| = coupler + rocker.
        let dist =
            |th: f64| ((2.0 - 1.5 * th.cos()).powi(2) + (1.5 * th.sin()).powi(2)).sqrt() - 2.0;
        let (mut lo, mut hi) = (0.1, 3.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if dist(lo) * dist(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let th = 0.5 * (lo + hi);
        assert!((th.cos() - 0.375).abs() < 1e-12);
        let a = Vector3::new(1.5 * th.cos(), 1.5 * th.sin(), 0.0);
        let phi = (0.0 - a.y).atan2(2.0 - a.x);
        let guess = DVector::from_vec(vec![phi - th, phi + PI]);
        let q = model.assemble(&DVector::from_element(1, th), &guess);
        assert!(constraint_value(&model, &q).amax() < 1e-12);
        let err = solve_ik(&model, &DVector::from_element(1, th), &guess).unwrap_err();
        match err {
            Error::SingularJu { det, last_iterate } => {
                assert!(det < SINGULAR_DET);
                assert_eq!(last_iterate, q);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn ik_reports_no_convergence() {
        let model = fixtures::fourbar();
        // crank angle where the chain cannot close with the coupler this short is
        // impossible for a Grashof linkage, so stretch the target instead
        let err = solve_ik(
            &model,
            &DVector::from_element(1, 0.3),
            &DVector::from_vec(vec![40.0, -25.0]),
        );
        if let Err(e) = err {
            assert!(matches!(
                e,
                Error::NoConvergence { .. } | Error::SingularJu { .. }
            ));
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for model in [fixtures::fourbar(), fixtures::spatial5()] {
            for _ in 0..100 {
                let q = random_feasible(&model, &mut rng);
                assert!(constraint_value(&model, &q).amax() <= 1e-10);
                let jac = constraint_jacobian(&model, &q);
                let h = 1e-6;
                for k in 0..model.n() {
                    let mut qp = q.clone();
                    let mut qm = q.clone();
                    qp[k] += h;
                    qm[k] -= h;
                    let fd =
                        (constraint_value(&model, &qp) - constraint_value(&model, &qm)) / (2.0 * h);
                    assert!((jac.column(k) - fd).amax() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn jdot_qd_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for model in [fixtures::fourbar(), fixtures::spatial5()] {
            let q = random_feasible(&model, &mut rng);
            let qd = random_vec(&mut rng, model.n(), 2.0);
            let ev = eval_constraints(&model, &q, &qd);
            let h = 1e-6;
            let fd = (constraint_jacobian(&model, &(&q + &qd * h))
                - constraint_jacobian(&model, &(&q - &qd * h)))
                * &qd
                / (2.0 * h);
            assert!((&ev.jdot_qd - fd).amax() < 1e-6);
            let zero = eval_constraints(&model, &q, &DVector::zeros(model.n()));
            assert_eq!(zero.jdot_qd, DVector::zeros(model.n_c()));
        }
    }

    #[test]
    fn projection_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for model in [fixtures::fourbar(), fixtures::spatial5()] {
            for _ in 0..50 {
                let q = random_feasible(&model, &mut rng);
                let g = projection_matrix(&model, &q).unwrap();
                let jac = constraint_jacobian(&model, &q);
                assert!((&jac * &g).amax() <= 1e-9 * (1.0 + jac.amax()));
                assert_eq!(
                    g.select_rows(model.actuated_indices()),
                    DMatrix::identity(model.n_a(), model.n_a())
                );
                let u = random_vec(&mut rng, model.n_a(), 10.0);
                assert_eq!(g.transpose() * model.transmission() * &u, u);
            }
        }
    }

    #[test]
    fn g_u_matches_ik_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for model in [fixtures::fourbar(), fixtures::spatial5()] {
            for _ in 0..20 {
                let q = random_feasible(&model, &mut rng);
                let qa = model.actuated_part(&q);
                let qu = model.unactuated_part(&q);
                let v = random_vec(&mut rng, model.n_a(), 1.0);
                let h = 1e-5;
                let up = solve_ik(&model, &(&qa + &v * h), &qu).unwrap().qu;
                let dn = solve_ik(&model, &(&qa - &v * h), &qu).unwrap().qu;
                let fd = (up - dn) / (2.0 * h);
                let g = projection_matrix(&model, &q).unwrap();
                let gu = g.select_rows(model.unactuated_indices());
                assert!((gu * &v - fd).amax() < 1e-6);
            }
        }
    }

    #[test]
    fn lifted_states_satisfy_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for model in [fixtures::fourbar(), fixtures::spatial5()] {
            for _ in 0..50 {
                let s = random_lifted(&model, &mut rng);
                let ev = eval_constraints(&model, &s.q, &s.qd);
                assert!(ev.c.amax() <= 1e-10);
                assert!((&ev.j * &s.qd).amax() <= 1e-9 * (1.0 + s.qd.amax()));
                let acc = &ev.j * &s.qdd + &ev.jdot_qd;
                assert!(acc.amax() <= 1e-7 * (1.0 + s.qdd.amax()));
            }
            let q = assembled_home(&model).unwrap();
            let z = DVector::zeros(model.n_a());
            let s = lift_state(
                &model,
                &model.actuated_part(&q),
                &z,
                &z,
                &model.unactuated_part(&q),
            )
            .unwrap();
            assert_eq!(s.qd, DVector::zeros(model.n()));
            assert_eq!(s.qdd, DVector::zeros(model.n()));
        }
    }

    #[test]
    fn gdot_matches_finite_difference_along_path() {
        let model = fixtures::spatial5();
        let home = assembled_home(&model).unwrap();
        let qa0 = model.actuated_part(&home);
        let v = DVector::from_vec(vec![0.3, -0.2]);
        let q_at = |t: f64| ik_continuation(&model, &home, &(&qa0 + &v * t), 2).unwrap();
        let h = 1e-5;
        let t = 0.1;
        let g_dot = (projection_matrix(&model, &q_at(t + h)).unwrap()
            - projection_matrix(&model, &q_at(t - h)).unwrap())
            / (2.0 * h);
        let p = projection(&model, &q_at(t), &model.assemble(&v, &DVector::zeros(3))).unwrap();
        assert!((g_dot * &v - p.gdot_qda).amax() < 1e-5);
    }

    /// Eliminates λ from the unactuated rows of the constrained equations and
    /// substitutes it into the actuated rows.
    fn lambda_elimination(
        model: &RobotModel,
        theta: &StandardParams,
        s: &JointState,
    ) -> DVector<f64> {
        let tau = dynamics::inverse_dynamics(model, theta, s);
        let jac = constraint_jacobian(model, &s.q);
        let (ja, ju) = split_columns(model, &jac);
        let lambda = ju
            .transpose()
            .lu()
            .solve(&model.unactuated_part(&tau))
            .unwrap();
        model.actuated_part(&tau) - ja.transpose() * lambda
    }

    #[test]
    fn projected_dynamics_equals_lambda_elimination() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for (model, theta) in [
            (fixtures::fourbar(), fixtures::fourbar_ground_truth()),
            (fixtures::spatial5(), fixtures::spatial5_ground_truth()),
        ] {
            for _ in 0..50 {
                let s = random_lifted(&model, &mut rng);
                let u = constrained_inverse_dynamics(&model, &theta, &s).unwrap();
                let oracle = lambda_elimination(&model, &theta, &s);
                assert!((&u - &oracle).amax() <= 1e-9 * (1.0 + u.amax()));
                // full residual of the constrained equations of motion
                let lambda = constraint_forces(&model, &theta, &s, &u).unwrap();
                let jac = constraint_jacobian(&model, &s.q);
                let res = dynamics::inverse_dynamics(&model, &theta, &s)
                    - model.transmission() * &u
                    - jac.transpose() * &lambda;
                assert!(res.amax() <= 1e-8 * (1.0 + u.amax()));
            }
        }
    }

    #[test]
    fn zero_cases() {
        let model = fixtures::fourbar();
        let q = assembled_home(&model).unwrap();
        let s = JointState::at_rest(q);
        let lambda =
            constraint_forces(&model, &StandardParams::zeros(3), &s, &DVector::zeros(1)).unwrap();
        assert_eq!(lambda, DVector::zeros(2));
        let zg = RobotModel::new(
            "zg",
            Vector3::zeros(),
            model.links().to_vec(),
            model.constraints().to_vec(),
            None,
            None,
            None,
        )
        .unwrap();
        let mut theta = fixtures::fourbar_ground_truth();
        for j in 0..3 {
            theta.friction_mut(j)[3] = 0.0;
        }
        assert_eq!(
            constrained_inverse_dynamics(&zg, &theta, &s).unwrap(),
            DVector::zeros(1)
        );
    }

    #[test]
    fn static_fourbar_cut_force() {
        // Planar statics oracle: the rocker alone is in moment balance about its
        // pivot under gravity and the cut force; the coupler+crank subsystem
        // is balanced by the crank torque.
        let model = fixtures::fourbar();
        let theta = fixtures::fourbar_ground_truth().without_friction();
        let q = assembled_home(&model).unwrap();
        let s = JointState::at_rest(q.clone());
        let u = constrained_inverse_dynamics(&model, &theta, &s).unwrap();
        let lambda = constraint_forces(&model, &theta, &s, &u).unwrap();
        let g = 9.81;
        let poses = link_poses(&model, &q);
        // λ acts on the coupler at the closure point and −λ on the rocker.
        let f = Vector3::new(lambda[0], lambda[1], 0.0);
        let cut = poses[2].1 + poses[2].0 * Vector3::new(1.5, 0.0, 0.0);
        let rocker_com = poses[2].1 + poses[2].0 * Vector3::new(0.75, 0.0, 0.0);
        let pivot = poses[2].1;
        let m_grav = (rocker_com - pivot)
            .cross(&Vector3::new(0.0, -1.5 * g, 0.0))
            .z;
        let m_cut = (cut - pivot).cross(&(-f)).z;
        assert!((m_grav + m_cut).abs() < 1e-9, "{m_grav} {m_cut}");
        // coupler moment balance about its own joint
        let coupler_com = poses[1].1 + poses[1].0 * Vector3::new(1.0, 0.0, 0.0);
        let joint = poses[1].1;
        let m_c = (coupler_com - joint)
            .cross(&Vector3::new(0.0, -2.0 * g, 0.0))
            .z
            + (cut - joint).cross(&f).z;
        assert!(m_c.abs() < 1e-9);
    }
}
