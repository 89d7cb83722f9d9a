//! Recursive Newton-Euler inverse dynamics on the kinematic tree and the
//! standard regressor.
//!
//! Quantities are propagated in link frames. The link frame of joint `i` sits
//! at the joint origin and rotates with the joint, so the joint axis `z_i` is
//! constant in it. Gravity enters as an upward acceleration of the ground.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::model::{
    shifted_inertia, RobotModel, StandardParams, N_FRICTION, N_INERTIAL, N_PER_LINK,
};

/// Joint positions, velocities and accelerations of all `n` joints.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub qdd: DVector<f64>,
}

impl JointState {
    pub fn new(q: DVector<f64>, qd: DVector<f64>, qdd: DVector<f64>) -> Self {
        Self { q, qd, qdd }
    }

    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            q,
            qd: DVector::zeros(n),
            qdd: DVector::zeros(n),
        }
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }
}

/// `sign` with `sign(0) = 0`.
pub fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Joint friction `F_c·sign(q̇) + F_v·q̇ + I_a·q̈ + β`.
pub fn friction_force(qd: f64, qdd: f64, theta_f: &[f64]) -> f64 {
    theta_f[0] * sign0(qd) + theta_f[1] * qd + theta_f[2] * qdd + theta_f[3]
}

/// Per-joint friction torques.
pub fn friction_vector(
    theta: &StandardParams,
    qd: &DVector<f64>,
    qdd: &DVector<f64>,
) -> DVector<f64> {
    DVector::from_iterator(
        qd.len(),
        (0..qd.len()).map(|j| friction_force(qd[j], qdd[j], theta.friction(j))),
    )
}

/// Link-frame motion from the forward pass.
#[derive(Debug, Clone)]
pub(crate) struct LinkMotion {
    /// Rotation taking link-frame coordinates to parent-frame coordinates.
    pub rot: Matrix3<f64>,
    /// Joint origin in the parent frame.
    pub offset: Vector3<f64>,
    pub omega: Vector3<f64>,
    pub omega_dot: Vector3<f64>,
    /// Linear acceleration of the frame origin, gravity included.
    pub accel: Vector3<f64>,
}

pub(crate) fn forward_pass(
    model: &RobotModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    qdd: &DVector<f64>,
    with_gravity: bool,
) -> Vec<LinkMotion> {
    let ground_accel = if with_gravity {
        -model.gravity()
    } else {
        Vector3::zeros()
    };
    let mut out: Vec<LinkMotion> = Vec::with_capacity(model.n());
    for (i, link) in model.links().iter().enumerate() {
        let (w_p, wd_p, a_p) = match link.parent {
            Some(p) => (out[p].omega, out[p].omega_dot, out[p].accel),
            None => (Vector3::zeros(), Vector3::zeros(), ground_accel),
        };
        let rot = link.rotation(q[i]);
        let rt = rot.transpose();
        let z = link.axis;
        let p = link.origin_xyz;
        let w_in = rt * w_p;
        let omega = w_in + z * qd[i];
        let omega_dot = rt * wd_p + w_in.cross(&z) * qd[i] + z * qdd[i];
        let accel = rt * (a_p + wd_p.cross(&p) + w_p.cross(&w_p.cross(&p)));
        out.push(LinkMotion {
            rot,
            offset: p,
            omega,
            omega_dot,
            accel,
        });
    }
    out
}

/// Wrench `(f, n)` about the link origin needed to produce the link's motion.
fn link_wrench(m: &LinkMotion, block: &[f64]) -> (Vector3<f64>, Vector3<f64>) {
    let l = shifted_inertia(block);
    let h = Vector3::new(block[6], block[7], block[8]);
    let mass = block[9];
    let (w, wd, a) = (&m.omega, &m.omega_dot, &m.accel);
    let f = a * mass + wd.cross(&h) + w.cross(&w.cross(&h));
    let n = l * wd + w.cross(&(l * w)) + h.cross(a);
    (f, n)
}

/// Rigid-body part of inverse dynamics (no friction).
fn rigid_torques(
    model: &RobotModel,
    theta: &StandardParams,
    motion: &[LinkMotion],
) -> DVector<f64> {
    let n = model.n();
    let mut f: Vec<Vector3<f64>> = Vec::with_capacity(n);
    let mut nn: Vec<Vector3<f64>> = Vec::with_capacity(n);
    for (i, m) in motion.iter().enumerate() {
        let (fi, ni) = link_wrench(m, theta.inertial(i));
        f.push(fi);
        nn.push(ni);
    }
    let mut tau = DVector::zeros(n);
    for i in (0..n).rev() {
        let link = &model.links()[i];
        tau[i] = link.axis.dot(&nn[i]);
        if let Some(p) = link.parent {
            let m = &motion[i];
            let fp = m.rot * f[i];
            let np = m.rot * nn[i] + m.offset.cross(&fp);
            f[p] += fp;
            nn[p] += np;
        }
    }
    tau
}

/// `H(q)q̈ + C(q,q̇)q̇ + g(q) + F(q̇,q̈)`.
pub fn inverse_dynamics(
    model: &RobotModel,
    theta: &StandardParams,
    s: &JointState,
) -> DVector<f64> {
    let motion = forward_pass(model, &s.q, &s.qd, &s.qdd, true);
    rigid_torques(model, theta, &motion) + friction_vector(theta, &s.qd, &s.qdd)
}

/// Joint-space inertia matrix without transmission inertia.
pub fn mass_matrix(model: &RobotModel, theta: &StandardParams, q: &DVector<f64>) -> DMatrix<f64> {
    let n = model.n();
    let zero = DVector::zeros(n);
    let mut h = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut e = DVector::zeros(n);
        e[k] = 1.0;
        let motion = forward_pass(model, q, &zero, &e, false);
        h.set_column(k, &rigid_torques(model, theta, &motion));
    }
    h
}

/// `C(q,q̇)q̇ + g(q)`.
pub fn bias_forces(
    model: &RobotModel,
    theta: &StandardParams,
    q: &DVector<f64>,
    qd: &DVector<f64>,
) -> DVector<f64> {
    let motion = forward_pass(model, q, qd, &DVector::zeros(model.n()), true);
    rigid_torques(model, theta, &motion)
}

/// Standard regressor `W` (n × 14n) with `W·θ = inverse_dynamics(θ)`.
///
/// Column `k` is the inverse dynamics of the unit parameter vector `e_k`:
/// only link `i` carries mass, so its wrench is propagated up its ancestors.
pub fn regressor(model: &RobotModel, s: &JointState) -> DMatrix<f64> {
    let n = model.n();
    let motion = forward_pass(model, &s.q, &s.qd, &s.qdd, true);
    let mut w = DMatrix::zeros(n, N_PER_LINK * n);
    let mut unit = [0.0; N_INERTIAL];
    for i in 0..n {
        for c in 0..N_INERTIAL {
            unit.iter_mut().for_each(|v| *v = 0.0);
            unit[c] = 1.0;
            let (mut f, mut nn) = link_wrench(&motion[i], &unit);
            let col = StandardParams::inertial_offset(i) + c;
            let mut j = i;
            loop {
                let link = &model.links()[j];
                w[(j, col)] = link.axis.dot(&nn);
                match link.parent {
                    Some(p) => {
                        let m = &motion[j];
                        let fp = m.rot * f;
                        nn = m.rot * nn + m.offset.cross(&fp);
                        f = fp;
                        j = p;
                    }
                    None => break,
                }
            }
        }
    }
    for j in 0..n {
        let o = StandardParams::friction_offset(n, j);
        let row = [sign0(s.qd[j]), s.qd[j], s.qdd[j], 1.0];
        for (c, v) in row.iter().enumerate().take(N_FRICTION) {
            w[(j, o + c)] = *v;
        }
    }
    w
}

/// World pose `(R, o)` of every link frame at `q`.
pub fn link_poses(model: &RobotModel, q: &DVector<f64>) -> Vec<(Matrix3<f64>, Vector3<f64>)> {
    let mut out: Vec<(Matrix3<f64>, Vector3<f64>)> = Vec::with_capacity(model.n());
    for (i, link) in model.links().iter().enumerate() {
        let (r_p, o_p) = match link.parent {
            Some(p) => out[p],
            None => (Matrix3::identity(), Vector3::zeros()),
        };
        out.push((r_p * link.rotation(q[i]), o_p + r_p * link.origin_xyz));
    }
    out
}

/// Kinetic energy `½q̇ᵀHq̇` of the rigid bodies.
pub fn kinetic_energy(
    model: &RobotModel,
    theta: &StandardParams,
    q: &DVector<f64>,
    qd: &DVector<f64>,
) -> f64 {
    0.5 * qd.dot(&(mass_matrix(model, theta, q) * qd))
}

/// Gravitational potential `−Σ g·(m·o + R·h)`.
pub fn potential_energy(model: &RobotModel, theta: &StandardParams, q: &DVector<f64>) -> f64 {
    let g = model.gravity();
    link_poses(model, q)
        .iter()
        .enumerate()
        .map(|(i, (r, o))| {
            let b = theta.inertial(i);
            let h = Vector3::new(b[6], b[7], b[8]);
            -g.dot(&(o * b[9] + r * h))
        })
        .sum()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::{is_physically_consistent, Link};
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_vec(rng: &mut impl Rng, n: usize, scale: f64) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
    }

    pub(crate) fn random_theta(rng: &mut impl Rng, n: usize) -> StandardParams {
        StandardParams::from_vec(
            n,
            (0..N_PER_LINK * n)
                .map(|_| rng.random_range(-2.0..2.0))
                .collect(),
        )
        .unwrap()
    }

    fn pendulum(mass: f64, len: f64) -> (RobotModel, StandardParams) {
        let link = Link::new(
            "p",
            None,
            Vector3::y(),
            Vector3::zeros(),
            Vector3::zeros(),
            true,
            (-4.0, 4.0),
            10.0,
        );
        let model = RobotModel::new(
            "pendulum",
            Vector3::new(0.0, 0.0, -9.81),
            vec![link],
            vec![],
            None,
            None,
            None,
        )
        .unwrap();
        let mut theta = StandardParams::zeros(1);
        let b = theta.inertial_mut(0);
        // point mass at (l, 0, 0)
        b[3] = mass * len * len;
        b[5] = mass * len * len;
        b[6] = mass * len;
        b[9] = mass;
        (model, theta)
    }

    #[test]
    fn pendulum_gravity_torque() {
        let (m, l, g) = (2.0, 0.7, 9.81);
        let (model, theta) = pendulum(m, l);
        for q in [0.0, 0.4, -1.1, 2.5] {
            let s = JointState::at_rest(DVector::from_element(1, q));
            let tau = inverse_dynamics(&model, &theta, &s)[0];
            // Oracle: com at (l cos q, 0, −l sin q), V = −m g l sin q, τ = dV/dq.
            let expected = -m * g * l * q.cos();
            assert!(
                (tau - expected).abs() < 1e-12,
                "q = {q}: {tau} vs {expected}"
            );
        }
        let s = JointState::new(
            DVector::from_element(1, 0.3),
            DVector::from_element(1, 1.2),
            DVector::from_element(1, 0.5),
        );
        let tau = inverse_dynamics(&model, &theta, &s)[0];
        let expected = m * l * l * 0.5 - m * g * l * 0.3f64.cos();
        assert!((tau - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_parameters_give_zero_force() {
        let model = fixtures::spatial5();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = JointState::new(
            random_vec(&mut rng, 5, 2.0),
            random_vec(&mut rng, 5, 2.0),
            random_vec(&mut rng, 5, 2.0),
        );
        assert_eq!(
            inverse_dynamics(&model, &StandardParams::zeros(5), &s),
            DVector::zeros(5)
        );
        let w = regressor(&model, &s);
        assert_eq!(w * DVector::zeros(70), DVector::zeros(5));
    }

    #[test]
    fn friction_examples() {
        assert_eq!(friction_force(0.0, 0.0, &[1.0, 2.0, 3.0, 0.5]), 0.5);
        assert_eq!(friction_force(2.0, -1.0, &[1.0, 0.5, 0.25, 0.0]), 1.75);
        assert!((friction_force(-3.0, 0.0, &[2.0, 1.0, 0.0, 0.1]) - -4.9).abs() < 1e-15);
    }

    #[test]
    fn regressor_friction_row() {
        let model = fixtures::fourbar();
        let s = JointState::new(
            DVector::from_vec(vec![0.1, 0.2, 1.3]),
            DVector::from_vec(vec![2.0, -1.0, 0.0]),
            DVector::from_vec(vec![1.0, 0.0, 0.0]),
        );
        let w = regressor(&model, &s);
        let o = StandardParams::friction_offset(3, 0);
        assert_eq!(
            w.view((0, o), (1, 4)).iter().copied().collect::<Vec<_>>(),
            vec![1.0, 2.0, 1.0, 1.0]
        );
        // other joints' rows are zero in joint 1's friction block
        assert_eq!(w[(1, o)], 0.0);
        assert_eq!(w[(2, o + 3)], 0.0);
        let o3 = StandardParams::friction_offset(3, 2);
        assert_eq!(w[(2, o3)], 0.0);
    }

    pub(crate) fn regressor_identity_error(model: &RobotModel, rng: &mut ChaCha8Rng) -> f64 {
        let n = model.n();
        let s = JointState::new(
            random_vec(rng, n, 3.0),
            random_vec(rng, n, 3.0),
            random_vec(rng, n, 5.0),
        );
        let theta = random_theta(rng, n);
        let tau = inverse_dynamics(model, &theta, &s);
        let wt = regressor(model, &s) * theta.to_dvector();
        (tau - wt).amax() / (1.0 + inverse_dynamics(model, &theta, &s).amax())
    }

    #[test]
    fn regressor_matches_inverse_dynamics() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for model in [fixtures::fourbar(), fixtures::spatial5()] {
            for _ in 0..200 {
                let e = regressor_identity_error(&model, &mut rng);
                assert!(e <= 1e-10, "{e}");
            }
        }
    }

    #[test]
    fn regressor_columns_are_unit_parameter_inverse_dynamics() {
        let model = fixtures::spatial5();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = JointState::new(
            random_vec(&mut rng, 5, 2.0),
            random_vec(&mut rng, 5, 2.0),
            random_vec(&mut rng, 5, 2.0),
        );
        let w = regressor(&model, &s);
        for k in 0..70 {
            let col = inverse_dynamics(&model, &StandardParams::unit(5, k), &s);
            assert!((w.column(k) - col).amax() < 1e-12, "column {k}");
        }
    }

    #[test]
    fn mass_matrix_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (model, theta) in [
            (fixtures::fourbar(), fixtures::fourbar_ground_truth()),
            (fixtures::spatial5(), fixtures::spatial5_ground_truth()),
        ] {
            assert!(is_physically_consistent(&theta, 1e-8).consistent);
            let n = model.n();
            for _ in 0..100 {
                let q = random_vec(&mut rng, n, 3.0);
                let h = mass_matrix(&model, &theta, &q);
                assert!((&h - h.transpose()).amax() < 1e-12);
                assert!(SymmetricEigen::new(h.clone()).eigenvalues.min() > 0.0);
                // defining identity: column k = ID(q,0,e_k) − ID(q,0,0), friction zeroed
                let nf = theta.without_friction();
                let base = inverse_dynamics(&model, &nf, &JointState::at_rest(q.clone()));
                for k in 0..n {
                    let mut e = DVector::zeros(n);
                    e[k] = 1.0;
                    let col = inverse_dynamics(
                        &model,
                        &nf,
                        &JointState::new(q.clone(), DVector::zeros(n), e),
                    ) - &base;
                    assert!((h.column(k) - col).amax() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn decomposition_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = fixtures::spatial5();
        for _ in 0..100 {
            let s = JointState::new(
                random_vec(&mut rng, 5, 3.0),
                random_vec(&mut rng, 5, 3.0),
                random_vec(&mut rng, 5, 3.0),
            );
            let theta = random_theta(&mut rng, 5);
            let lhs = inverse_dynamics(&model, &theta, &s);
            let rhs = mass_matrix(&model, &theta, &s.q) * &s.qdd
                + bias_forces(&model, &theta, &s.q, &s.qd)
                + friction_vector(&theta, &s.qd, &s.qdd);
            assert!((&lhs - rhs).amax() <= 1e-10 * (1.0 + lhs.amax()));
        }
        let q = random_vec(&mut rng, 5, 3.0);
        let theta = random_theta(&mut rng, 5);
        let g = bias_forces(&model, &theta, &q, &DVector::zeros(5));
        let id = inverse_dynamics(
            &model,
            &theta.without_friction(),
            &JointState::at_rest(q.clone()),
        );
        assert!((g - id).amax() < 1e-14);
        assert_eq!(
            bias_forces(
                &model,
                &StandardParams::zeros(5),
                &q,
                &random_vec(&mut rng, 5, 1.0)
            ),
            DVector::zeros(5)
        );
    }

    #[test]
    fn gravity_torque_is_potential_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = fixtures::spatial5();
        let theta = fixtures::spatial5_ground_truth();
        let q = random_vec(&mut rng, 5, 1.5);
        let g = bias_forces(&model, &theta, &q, &DVector::zeros(5));
        let h = 1e-6;
        for k in 0..5 {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[k] += h;
            qm[k] -= h;
            let fd = (potential_energy(&model, &theta, &qp)
                - potential_energy(&model, &theta, &qm))
                / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-7, "joint {k}: {fd} vs {}", g[k]);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn regressor_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
                let model = fixtures::fourbar();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let s = JointState::new(random_vec(&mut rng, 3, 3.0), random_vec(&mut rng, 3, 3.0), random_vec(&mut rng, 3, 3.0));
                let t1 = random_theta(&mut rng, 3).to_dvector();
                let t2 = random_theta(&mut rng, 3).to_dvector();
                let w = regressor(&model, &s);
                let lhs = &w * (&t1 * a + &t2 * b);
                let rhs = (&w * &t1) * a + (&w * &t2) * b;
                prop_assert!((&lhs - &rhs).amax() <= 1e-12 * (1.0 + lhs.amax()));
            }
        }
    }
}
