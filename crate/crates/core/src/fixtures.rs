//! Built-in closed-chain models used by the tests and the CLI examples.
//!
//! * `fourbar`: planar crank-rocker (crank 1.0 m, coupler 2.0 m, rocker
//!   1.5 m, ground offset 2.0 m), crank actuated, gravity along −y.
//! * `spatial5`: two serial arms joined at their tips by a 3-axis closure,
//!   two actuated joints (yaw + pitch of the first arm).
//!
//! Ground truth uses solid cuboids and positive friction; the reference
//! ("manufacturer") parameters scale every inertial block by 1.5.

use std::f64::consts::PI;

use nalgebra::{DVector, Vector3};

use crate::model::{Axis, ConstraintSpec, Link, RobotModel, StandardParams};

const BAR_SECTION: f64 = 0.05;

/// Inertial scale applied to ground truth to form the reference parameters.
pub const REFERENCE_MASS_SCALE: f64 = 1.5;

fn bar_x(mass: f64, len: f64) -> [f64; 10] {
    StandardParams::cuboid_block(
        mass,
        Vector3::new(len, BAR_SECTION, BAR_SECTION),
        Vector3::new(0.5 * len, 0.0, 0.0),
    )
}

fn post_z(mass: f64, height: f64) -> [f64; 10] {
    StandardParams::cuboid_block(
        mass,
        Vector3::new(BAR_SECTION, BAR_SECTION, height),
        Vector3::new(0.0, 0.0, 0.5 * height),
    )
}

fn assemble(blocks: &[[f64; 10]], friction: &[[f64; 4]]) -> StandardParams {
    let n = blocks.len();
    let mut theta = StandardParams::zeros(n);
    for j in 0..n {
        theta.inertial_mut(j).copy_from_slice(&blocks[j]);
        theta.friction_mut(j).copy_from_slice(&friction[j]);
    }
    theta
}

/// Ground truth with every inertial entry scaled; friction unchanged.
pub fn scale_inertial(theta: &StandardParams, scale: f64) -> StandardParams {
    let mut out = theta.clone();
    for j in 0..out.n_links() {
        out.inertial_mut(j).iter_mut().for_each(|v| *v *= scale);
    }
    out
}

fn zero() -> Vector3<f64> {
    Vector3::zeros()
}

pub fn fourbar_ground_truth() -> StandardParams {
    assemble(
        &[bar_x(1.0, 1.0), bar_x(2.0, 2.0), bar_x(1.5, 1.5)],
        &[
            [0.2, 0.1, 0.05, 0.05],
            [0.02, 0.01, 0.005, 0.01],
            [0.03, 0.02, 0.01, 0.01],
        ],
    )
}

pub fn fourbar() -> RobotModel {
    let z = Vector3::z();
    let links = vec![
        Link::new("crank", None, z, zero(), zero(), true, (-PI, PI), 10.0),
        Link::new(
            "coupler",
            Some(0),
            z,
            Vector3::new(1.0, 0.0, 0.0),
            zero(),
            false,
            (-4.0, 4.0),
            20.0,
        ),
        // The rocker limits admit only the upper assembly branch.
        Link::new(
            "rocker",
            None,
            z,
            Vector3::new(2.0, 0.0, 0.0),
            zero(),
            false,
            (0.5, 3.0),
            20.0,
        ),
    ];
    let constraints = vec![ConstraintSpec {
        body_p: Some(1),
        point_p: Vector3::new(2.0, 0.0, 0.0),
        body_s: Some(2),
        point_s: Vector3::new(1.5, 0.0, 0.0),
        axes: vec![Axis::X, Axis::Y],
    }];
    let truth = fourbar_ground_truth();
    RobotModel::new(
        "fourbar",
        Vector3::new(0.0, -9.81, 0.0),
        links,
        constraints,
        Some(scale_inertial(&truth, REFERENCE_MASS_SCALE)),
        Some(truth),
        Some(DVector::from_vec(vec![
            1.0,
            -0.7011071416590047,
            1.2649653959657061,
        ])),
    )
    .expect("fourbar fixture is valid")
}

/// Non-Grashof four-bar (crank 1.5, coupler 1.0, rocker 1.0, ground 2.0)
/// whose coupler and rocker become collinear at `cos(q_a) = 3/8`.
pub fn fourbar_tangent() -> RobotModel {
    let z = Vector3::z();
    let links = vec![
        Link::new("crank", None, z, zero(), zero(), true, (-PI, PI), 10.0),
        Link::new(
            "coupler",
            Some(0),
            z,
            Vector3::new(1.5, 0.0, 0.0),
            zero(),
            false,
            (-4.0, 4.0),
            20.0,
        ),
        Link::new(
            "rocker",
            None,
            z,
            Vector3::new(2.0, 0.0, 0.0),
            zero(),
            false,
            (-4.0, 4.0),
            20.0,
        ),
    ];
    let constraints = vec![ConstraintSpec {
        body_p: Some(1),
        point_p: Vector3::new(1.0, 0.0, 0.0),
        body_s: Some(2),
        point_s: Vector3::new(1.0, 0.0, 0.0),
        axes: vec![Axis::X, Axis::Y],
    }];
    RobotModel::new(
        "fourbar_tangent",
        Vector3::new(0.0, -9.81, 0.0),
        links,
        constraints,
        None,
        None,
        None,
    )
    .expect("tangent fixture is valid")
}

pub fn spatial5_ground_truth() -> StandardParams {
    assemble(
        &[
            post_z(1.0, 0.5),
            bar_x(1.5, 1.0),
            bar_x(1.0, 1.0),
            post_z(0.8, 0.5),
            bar_x(0.8, 1.0),
        ],
        &[
            [0.15, 0.08, 0.04, 0.03],
            [0.25, 0.12, 0.06, -0.02],
            [0.02, 0.01, 0.005, 0.0],
            [0.03, 0.015, 0.005, 0.0],
            [0.02, 0.01, 0.004, 0.0],
        ],
    )
}

pub fn spatial5() -> RobotModel {
    let (y, z) = (Vector3::y(), Vector3::z());
    let links = vec![
        Link::new("yaw1", None, z, zero(), zero(), true, (-0.3, 0.3), 5.0),
        Link::new(
            "pitch1",
            Some(0),
            y,
            Vector3::new(0.0, 0.0, 0.5),
            zero(),
            true,
            (-0.8, -0.1),
            5.0,
        ),
        Link::new(
            "elbow1",
            Some(1),
            y,
            Vector3::new(1.0, 0.0, 0.0),
            zero(),
            false,
            (0.5, 2.5),
            20.0,
        ),
        Link::new(
            "yaw2",
            None,
            z,
            Vector3::new(2.2, 0.0, 0.0),
            Vector3::new(0.0, 0.0, PI),
            false,
            (-1.2, 1.2),
            20.0,
        ),
        Link::new(
            "pitch2",
            Some(3),
            y,
            Vector3::new(0.0, 0.0, 0.5),
            zero(),
            false,
            (-0.4, 1.3),
            20.0,
        ),
    ];
    let constraints = vec![ConstraintSpec {
        body_p: Some(2),
        point_p: Vector3::new(1.0, 0.0, 0.0),
        body_s: Some(4),
        point_s: Vector3::new(1.0, 0.0, 0.0),
        axes: vec![Axis::X, Axis::Y, Axis::Z],
    }];
    let truth = spatial5_ground_truth();
    RobotModel::new(
        "spatial5",
        Vector3::new(0.0, 0.0, -9.81),
        links,
        constraints,
        Some(scale_inertial(&truth, REFERENCE_MASS_SCALE)),
        Some(truth),
        Some(DVector::from_vec(vec![
            0.0,
            -0.5,
            1.63853897,
            0.0,
            0.442939201,
        ])),
    )
    .expect("spatial5 fixture is valid")
}
