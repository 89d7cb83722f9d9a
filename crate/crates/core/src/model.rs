//! Robot description, the standard parameter layout, and physical-consistency
//! predicates.
//!
//! A model is a kinematic tree of revolute joints rooted at a fixed ground
//! frame, plus a list of point-coincidence closures that turn the tree into
//! closed chains. Link `j` carries ten inertial parameters expressed about its
//! joint-frame origin and four friction parameters for its joint.

use std::fmt;
use std::path::Path;

use nalgebra::{DVector, Matrix3, Matrix4, Rotation3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inertial entries per link.
pub const N_INERTIAL: usize = 10;
/// Friction entries per joint.
pub const N_FRICTION: usize = 4;
/// Standard parameters per link (inertial + friction).
pub const N_PER_LINK: usize = N_INERTIAL + N_FRICTION;

/// Default positive-definiteness margin for the LMI check.
pub const DEFAULT_EPS_PD: f64 = 1e-8;

const AXIS_NORM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// One revolute joint and the link it moves.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub name: String,
    /// `None` attaches the link to ground.
    pub parent: Option<usize>,
    /// Unit rotation axis in the joint frame.
    pub axis: Vector3<f64>,
    pub origin_xyz: Vector3<f64>,
    pub origin_rpy: Vector3<f64>,
    pub actuated: bool,
    pub pos_limits: (f64, f64),
    pub vel_limit: f64,
    origin_rot: Matrix3<f64>,
}

impl Link {
    /// Fixed rotation from the parent frame to the joint frame (before the
    /// joint angle is applied).
    pub fn origin_rotation(&self) -> &Matrix3<f64> {
        &self.origin_rot
    }

    /// Orientation of the link frame in its parent frame at joint angle `q`.
    pub fn rotation(&self, q: f64) -> Matrix3<f64> {
        let axis = nalgebra::Unit::new_unchecked(self.axis);
        self.origin_rot * Rotation3::from_axis_angle(&axis, q).into_inner()
    }
}

/// World-frame coincidence of two body-fixed points along selected axes.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSpec {
    /// `None` is the ground frame.
    pub body_p: Option<usize>,
    pub point_p: Vector3<f64>,
    pub body_s: Option<usize>,
    pub point_s: Vector3<f64>,
    pub axes: Vec<Axis>,
}

impl ConstraintSpec {
    pub fn rows(&self) -> usize {
        self.axes.len()
    }
}

/// Standard dynamic parameters: `[θ_ip,1 .. θ_ip,n, θ_f,1 .. θ_f,n]`.
///
/// Per link the inertial block is `[XX, XY, XZ, YY, YZ, ZZ, m·px, m·py, m·pz, m]`
/// about the joint-frame origin; per joint the friction block is
/// `[F_c, F_v, I_a, β]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StandardParams(Vec<f64>);

impl StandardParams {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; N_PER_LINK * n])
    }

    pub fn from_vec(n: usize, v: Vec<f64>) -> Result<Self> {
        if v.len() != N_PER_LINK * n {
            return Err(Error::DimensionMismatch(format!(
                "parameter vector has length {}, expected {}",
                v.len(),
                N_PER_LINK * n
            )));
        }
        Ok(Self(v))
    }

    pub fn from_dvector(n: usize, v: &DVector<f64>) -> Result<Self> {
        Self::from_vec(n, v.iter().copied().collect())
    }

    /// Unit vector `e_k`.
    pub fn unit(n: usize, k: usize) -> Self {
        let mut p = Self::zeros(n);
        p.0[k] = 1.0;
        p
    }

    pub fn n_links(&self) -> usize {
        self.0.len() / N_PER_LINK
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }

    pub fn inertial_offset(j: usize) -> usize {
        N_INERTIAL * j
    }

    pub fn friction_offset(n: usize, j: usize) -> usize {
        N_INERTIAL * n + N_FRICTION * j
    }

    pub fn inertial(&self, j: usize) -> &[f64] {
        let o = Self::inertial_offset(j);
        &self.0[o..o + N_INERTIAL]
    }

    pub fn inertial_mut(&mut self, j: usize) -> &mut [f64] {
        let o = Self::inertial_offset(j);
        &mut self.0[o..o + N_INERTIAL]
    }

    pub fn friction(&self, j: usize) -> &[f64] {
        let o = Self::friction_offset(self.n_links(), j);
        &self.0[o..o + N_FRICTION]
    }

    pub fn friction_mut(&mut self, j: usize) -> &mut [f64] {
        let o = Self::friction_offset(self.n_links(), j);
        &mut self.0[o..o + N_FRICTION]
    }

    /// Copy with every friction entry set to zero.
    pub fn without_friction(&self) -> Self {
        let mut p = self.clone();
        let n = p.n_links();
        for v in &mut p.0[N_INERTIAL * n..] {
            *v = 0.0;
        }
        p
    }

    /// Inertial block of a solid cuboid with edge lengths `size` whose center
    /// sits at `com` in the link frame, axes aligned with the link frame.
    pub fn cuboid_block(mass: f64, size: Vector3<f64>, com: Vector3<f64>) -> [f64; N_INERTIAL] {
        let (a, b, c) = (size.x, size.y, size.z);
        let i_com = Matrix3::from_diagonal(&Vector3::new(
            mass * (b * b + c * c) / 12.0,
            mass * (a * a + c * c) / 12.0,
            mass * (a * a + b * b) / 12.0,
        ));
        let shift = mass * (com.norm_squared() * Matrix3::identity() - com * com.transpose());
        let l = i_com + shift;
        let h = mass * com;
        [
            l[(0, 0)],
            l[(0, 1)],
            l[(0, 2)],
            l[(1, 1)],
            l[(1, 2)],
            l[(2, 2)],
            h.x,
            h.y,
            h.z,
            mass,
        ]
    }
}

/// Shifted inertia tensor assembled from `[XX, XY, XZ, YY, YZ, ZZ]`.
pub fn shifted_inertia(block: &[f64]) -> Matrix3<f64> {
    Matrix3::new(
        block[0], block[1], block[2], //
        block[1], block[3], block[4], //
        block[2], block[4], block[5],
    )
}

/// The 4×4 consistency matrix `[[tr(L)/2·I − L, m·p], [(m·p)ᵀ, m]]`.
pub fn lmi_matrix(block: &[f64]) -> Matrix4<f64> {
    let l = shifted_inertia(block);
    let half_tr = 0.5 * l.trace();
    let mut out = Matrix4::zeros();
    for r in 0..3 {
        for c in 0..3 {
            out[(r, c)] = if r == c { half_tr } else { 0.0 } - l[(r, c)];
        }
        out[(r, 3)] = block[6 + r];
        out[(3, r)] = block[6 + r];
    }
    out[(3, 3)] = block[9];
    out
}

/// Inverse of [`lmi_matrix`]: recovers the inertial block from a symmetric 4×4.
pub fn lmi_to_block(m: &Matrix4<f64>) -> [f64; N_INERTIAL] {
    let s = m.fixed_view::<3, 3>(0, 0).into_owned();
    // tr(Σ) = tr(L)/2, so L = tr(Σ)·I − Σ.
    let l = s.trace() * Matrix3::identity() - s;
    [
        l[(0, 0)],
        l[(0, 1)],
        l[(0, 2)],
        l[(1, 1)],
        l[(1, 2)],
        l[(2, 2)],
        m[(0, 3)],
        m[(1, 3)],
        m[(2, 3)],
        m[(3, 3)],
    ]
}

/// Smallest eigenvalue of a symmetric 4×4.
pub fn min_eigenvalue(m: &Matrix4<f64>) -> f64 {
    SymmetricEigen::new(*m).eigenvalues.min()
}

/// First violated physical-consistency condition of a link.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    CoulombNegative(f64),
    ViscousNegative(f64),
    TransmissionInertiaNegative(f64),
    NotPositiveDefinite { min_eig: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::CoulombNegative(v) => write!(f, "F_c ≥ 0 violated (F_c = {v})"),
            Violation::ViscousNegative(v) => write!(f, "F_v ≥ 0 violated (F_v = {v})"),
            Violation::TransmissionInertiaNegative(v) => {
                write!(f, "I_a ≥ 0 violated (I_a = {v})")
            }
            Violation::NotPositiveDefinite { min_eig } => {
                write!(f, "LMI ≻ 0 violated (min eigenvalue {min_eig:e})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkConsistency {
    pub min_eig: f64,
    pub violation: Option<Violation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub consistent: bool,
    pub links: Vec<LinkConsistency>,
}

impl fmt::Display for ConsistencyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (j, link) in self.links.iter().enumerate() {
            match &link.violation {
                Some(v) => writeln!(f, "joint {}: {}", j + 1, v)?,
                None => writeln!(f, "joint {}: ok (min eig {:e})", j + 1, link.min_eig)?,
            }
        }
        Ok(())
    }
}

/// Checks nonnegative Coulomb/viscous/transmission terms and
/// `min eig(LMI_j) ≥ eps_pd` for every link.
pub fn is_physically_consistent(theta: &StandardParams, eps_pd: f64) -> ConsistencyReport {
    let n = theta.n_links();
    let links: Vec<LinkConsistency> = (0..n)
        .map(|j| {
            let fr = theta.friction(j);
            let min_eig = min_eigenvalue(&lmi_matrix(theta.inertial(j)));
            let violation = if fr[0] < 0.0 {
                Some(Violation::CoulombNegative(fr[0]))
            } else if fr[1] < 0.0 {
                Some(Violation::ViscousNegative(fr[1]))
            } else if fr[2] < 0.0 {
                Some(Violation::TransmissionInertiaNegative(fr[2]))
            } else if !(min_eig >= eps_pd) {
                Some(Violation::NotPositiveDefinite { min_eig })
            } else {
                None
            };
            LinkConsistency { min_eig, violation }
        })
        .collect();
    ConsistencyReport {
        consistent: links.iter().all(|l| l.violation.is_none()),
        links,
    }
}

/// Which entries of θ are decision variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterMask {
    pub free: Vec<bool>,
    /// Values used for entries where `free` is false.
    pub fixed_values: StandardParams,
}

impl ParameterMask {
    pub fn all_free(n: usize) -> Self {
        Self {
            free: vec![true; N_PER_LINK * n],
            fixed_values: StandardParams::zeros(n),
        }
    }

    /// Inertial blocks fixed to `reference`, friction free.
    pub fn friction_only(reference: &StandardParams) -> Self {
        let n = reference.n_links();
        let free = (0..N_PER_LINK * n).map(|k| k >= N_INERTIAL * n).collect();
        Self {
            free,
            fixed_values: reference.clone(),
        }
    }

    /// Only the friction blocks of actuated joints are free.
    pub fn actuated_friction_only(model: &RobotModel, reference: &StandardParams) -> Self {
        let n = reference.n_links();
        let mut free = vec![false; N_PER_LINK * n];
        for j in model.actuated_indices() {
            let o = StandardParams::friction_offset(n, *j);
            free[o..o + N_FRICTION].iter_mut().for_each(|f| *f = true);
        }
        Self {
            free,
            fixed_values: reference.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.free.len()
    }

    pub fn is_empty(&self) -> bool {
        self.free.is_empty()
    }

    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.free.len()).filter(|&k| self.free[k]).collect()
    }

    pub fn fixed_indices(&self) -> Vec<usize> {
        (0..self.free.len()).filter(|&k| !self.free[k]).collect()
    }

    /// Splits θ into (free entries, fixed entries), both in ascending index order.
    pub fn split(&self, theta: &StandardParams) -> Result<(DVector<f64>, DVector<f64>)> {
        self.check(theta.len())?;
        let t = theta.as_slice();
        let free: Vec<f64> = self.free_indices().into_iter().map(|k| t[k]).collect();
        let fixed: Vec<f64> = self.fixed_indices().into_iter().map(|k| t[k]).collect();
        Ok((DVector::from_vec(free), DVector::from_vec(fixed)))
    }

    /// Inverse of [`ParameterMask::split`].
    pub fn merge(&self, free: &DVector<f64>, fixed: &DVector<f64>) -> Result<StandardParams> {
        let fi = self.free_indices();
        let xi = self.fixed_indices();
        if free.len() != fi.len() || fixed.len() != xi.len() {
            return Err(Error::DimensionMismatch(format!(
                "merge expects {} free and {} fixed entries, got {} and {}",
                fi.len(),
                xi.len(),
                free.len(),
                fixed.len()
            )));
        }
        let mut out = vec![0.0; self.free.len()];
        for (v, &k) in free.iter().zip(&fi) {
            out[k] = *v;
        }
        for (v, &k) in fixed.iter().zip(&xi) {
            out[k] = *v;
        }
        StandardParams::from_vec(self.free.len() / N_PER_LINK, out)
    }

    fn check(&self, len: usize) -> Result<()> {
        if self.free.len() != len || self.fixed_values.len() != len {
            return Err(Error::DimensionMismatch(format!(
                "mask length {} does not match parameter length {len}",
                self.free.len()
            )));
        }
        if !self.free.iter().any(|&f| f) {
            return Err(Error::InvalidArgument(
                "mask fixes every parameter; nothing to identify".into(),
            ));
        }
        Ok(())
    }

    /// Validates the mask against a parameter length.
    pub fn validate(&self, len: usize) -> Result<()> {
        self.check(len)
    }
}

/// Kinematic tree plus loop closures.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    name: String,
    gravity: Vector3<f64>,
    links: Vec<Link>,
    constraints: Vec<ConstraintSpec>,
    reference_theta: Option<StandardParams>,
    ground_truth_theta: Option<StandardParams>,
    home: Option<DVector<f64>>,
    actuated: Vec<usize>,
    unactuated: Vec<usize>,
    n_c: usize,
    warnings: Vec<String>,
}

impl RobotModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        gravity: Vector3<f64>,
        links: Vec<Link>,
        constraints: Vec<ConstraintSpec>,
        reference_theta: Option<StandardParams>,
        ground_truth_theta: Option<StandardParams>,
        home: Option<DVector<f64>>,
    ) -> Result<Self> {
        let n = links.len();
        if n == 0 {
            return Err(Error::Validation("model has no links".into()));
        }
        for (j, link) in links.iter().enumerate() {
            if let Some(p) = link.parent {
                if p >= j {
                    return Err(Error::Validation(format!(
                        "link {j}: parent {p} does not precede it (tree order or cycle)"
                    )));
                }
            }
            if (link.axis.norm() - 1.0).abs() > AXIS_NORM_TOL {
                return Err(Error::Validation(format!(
                    "link {j}: non-unit axis (norm {})",
                    link.axis.norm()
                )));
            }
            if !(link.pos_limits.0 < link.pos_limits.1) {
                return Err(Error::Validation(format!(
                    "link {j}: empty position limits"
                )));
            }
            if !(link.vel_limit > 0.0) {
                return Err(Error::Validation(format!(
                    "link {j}: velocity limit must be > 0"
                )));
            }
        }
        for (i, c) in constraints.iter().enumerate() {
            if c.body_p == c.body_s {
                return Err(Error::Validation(format!(
                    "constraint {i}: body_p and body_s coincide"
                )));
            }
            for b in [c.body_p, c.body_s].into_iter().flatten() {
                if b >= n {
                    return Err(Error::Validation(format!(
                        "constraint {i}: body index {b} out of range"
                    )));
                }
            }
            if c.axes.is_empty() {
                return Err(Error::Validation(format!(
                    "constraint {i}: no axes selected"
                )));
            }
            let mut seen = [false; 3];
            for a in &c.axes {
                if std::mem::replace(&mut seen[a.index()], true) {
                    return Err(Error::Validation(format!("constraint {i}: repeated axis")));
                }
            }
        }
        for (label, th) in [
            ("reference_theta", &reference_theta),
            ("ground_truth_theta", &ground_truth_theta),
        ] {
            if let Some(th) = th {
                if th.len() != N_PER_LINK * n {
                    return Err(Error::Validation(format!(
                        "{label} has length {}, expected {}",
                        th.len(),
                        N_PER_LINK * n
                    )));
                }
            }
        }
        if let Some(h) = &home {
            if h.len() != n {
                return Err(Error::Validation(format!(
                    "home has length {}, expected {n}",
                    h.len()
                )));
            }
        }
        let actuated: Vec<usize> = (0..n).filter(|&j| links[j].actuated).collect();
        let unactuated: Vec<usize> = (0..n).filter(|&j| !links[j].actuated).collect();
        if actuated.is_empty() {
            return Err(Error::Validation("model has no actuated joints".into()));
        }
        let n_c = constraints.iter().map(ConstraintSpec::rows).sum();
        let mut warnings = Vec::new();
        if unactuated.len() != n_c {
            warnings.push(format!(
                "not fully actuated: n_u = {} but n_c = {n_c}",
                unactuated.len()
            ));
        }
        Ok(Self {
            name: name.into(),
            gravity,
            links,
            constraints,
            reference_theta,
            ground_truth_theta,
            home,
            actuated,
            unactuated,
            n_c,
            warnings,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn gravity(&self) -> &Vector3<f64> {
        &self.gravity
    }
    pub fn links(&self) -> &[Link] {
        &self.links
    }
    pub fn constraints(&self) -> &[ConstraintSpec] {
        &self.constraints
    }
    pub fn reference_theta(&self) -> Option<&StandardParams> {
        self.reference_theta.as_ref()
    }
    pub fn ground_truth_theta(&self) -> Option<&StandardParams> {
        self.ground_truth_theta.as_ref()
    }
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }
    /// Joint count `n`.
    pub fn n(&self) -> usize {
        self.links.len()
    }
    pub fn n_a(&self) -> usize {
        self.actuated.len()
    }
    pub fn n_u(&self) -> usize {
        self.unactuated.len()
    }
    pub fn n_c(&self) -> usize {
        self.n_c
    }
    pub fn n_params(&self) -> usize {
        N_PER_LINK * self.n()
    }
    /// Index set A (ascending).
    pub fn actuated_indices(&self) -> &[usize] {
        &self.actuated
    }
    /// Index set U (ascending).
    pub fn unactuated_indices(&self) -> &[usize] {
        &self.unactuated
    }
    pub fn is_fully_actuated(&self) -> bool {
        self.unactuated.len() == self.n_c
    }

    pub fn require_fully_actuated(&self) -> Result<()> {
        if self.is_fully_actuated() {
            Ok(())
        } else {
            Err(Error::NotFullyActuated {
                n_u: self.n_u(),
                n_c: self.n_c,
            })
        }
    }

    /// Home configuration; midpoints of the joint limits when the file gives none.
    pub fn home(&self) -> DVector<f64> {
        self.home.clone().unwrap_or_else(|| {
            DVector::from_iterator(
                self.n(),
                self.links
                    .iter()
                    .map(|l| 0.5 * (l.pos_limits.0 + l.pos_limits.1)),
            )
        })
    }

    pub fn with_reference_theta(mut self, theta: StandardParams) -> Result<Self> {
        if theta.len() != self.n_params() {
            return Err(Error::DimensionMismatch("reference_theta length".into()));
        }
        self.reference_theta = Some(theta);
        Ok(self)
    }

    pub fn with_ground_truth_theta(mut self, theta: StandardParams) -> Result<Self> {
        if theta.len() != self.n_params() {
            return Err(Error::DimensionMismatch("ground_truth_theta length".into()));
        }
        self.ground_truth_theta = Some(theta);
        Ok(self)
    }

    /// Gathers the actuated entries of a length-`n` vector.
    pub fn actuated_part(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.n_a(), self.actuated.iter().map(|&j| v[j]))
    }

    pub fn unactuated_part(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.n_u(), self.unactuated.iter().map(|&j| v[j]))
    }

    /// Scatters actuated and unactuated parts into one length-`n` vector.
    pub fn assemble(&self, va: &DVector<f64>, vu: &DVector<f64>) -> DVector<f64> {
        let mut v = DVector::zeros(self.n());
        for (k, &j) in self.actuated.iter().enumerate() {
            v[j] = va[k];
        }
        for (k, &j) in self.unactuated.iter().enumerate() {
            v[j] = vu[k];
        }
        v
    }

    /// Transmission matrix B (n × n_a).
    pub fn transmission(&self) -> nalgebra::DMatrix<f64> {
        let mut b = nalgebra::DMatrix::zeros(self.n(), self.n_a());
        for (k, &j) in self.actuated.iter().enumerate() {
            b[(j, k)] = 1.0;
        }
        b
    }
}

// ---------------------------------------------------------------------------
// Model file

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OriginFile {
    #[serde(default)]
    xyz: [f64; 3],
    #[serde(default)]
    rpy: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LimitsFile {
    pos: [f64; 2],
    vel: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    parent: Option<usize>,
    axis: [f64; 3],
    origin: OriginFile,
    actuated: bool,
    limits: LimitsFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstraintFile {
    body_p: Option<usize>,
    point_p: [f64; 3],
    body_s: Option<usize>,
    point_s: [f64; 3],
    axes: Vec<Axis>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gravity: Option<[f64; 3]>,
    links: Vec<LinkFile>,
    #[serde(default)]
    constraints: Vec<ConstraintFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    home: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reference_theta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ground_truth_theta: Option<Vec<f64>>,
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

fn a3(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

impl Link {
    pub fn new(
        name: impl Into<String>,
        parent: Option<usize>,
        axis: Vector3<f64>,
        origin_xyz: Vector3<f64>,
        origin_rpy: Vector3<f64>,
        actuated: bool,
        pos_limits: (f64, f64),
        vel_limit: f64,
    ) -> Self {
        let origin_rot =
            Rotation3::from_euler_angles(origin_rpy.x, origin_rpy.y, origin_rpy.z).into_inner();
        Self {
            name: name.into(),
            parent,
            axis,
            origin_xyz,
            origin_rpy,
            actuated,
            pos_limits,
            vel_limit,
            origin_rot,
        }
    }
}

impl RobotModel {
    /// Parses a model from its JSON text.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("model file: {e}")))?;
        let n = file.links.len();
        let links = file
            .links
            .into_iter()
            .enumerate()
            .map(|(j, l)| {
                Link::new(
                    l.name.unwrap_or_else(|| format!("joint{}", j + 1)),
                    l.parent,
                    v3(l.axis),
                    v3(l.origin.xyz),
                    v3(l.origin.rpy),
                    l.actuated,
                    (l.limits.pos[0], l.limits.pos[1]),
                    l.limits.vel,
                )
            })
            .collect();
        let constraints = file
            .constraints
            .into_iter()
            .map(|c| ConstraintSpec {
                body_p: c.body_p,
                point_p: v3(c.point_p),
                body_s: c.body_s,
                point_s: v3(c.point_s),
                axes: c.axes,
            })
            .collect();
        let theta = |v: Option<Vec<f64>>, label: &str| -> Result<Option<StandardParams>> {
            v.map(|v| {
                StandardParams::from_vec(n, v)
                    .map_err(|e| Error::Validation(format!("{label}: {e}")))
            })
            .transpose()
        };
        Self::new(
            file.name,
            file.gravity
                .map(v3)
                .unwrap_or_else(|| Vector3::new(0.0, 0.0, -9.81)),
            links,
            constraints,
            theta(file.reference_theta, "reference_theta")?,
            theta(file.ground_truth_theta, "ground_truth_theta")?,
            file.home.map(DVector::from_vec),
        )
    }

    pub fn to_json_string(&self) -> String {
        let file = ModelFile {
            name: self.name.clone(),
            gravity: Some(a3(&self.gravity)),
            links: self
                .links
                .iter()
                .map(|l| LinkFile {
                    name: Some(l.name.clone()),
                    parent: l.parent,
                    axis: a3(&l.axis),
                    origin: OriginFile {
                        xyz: a3(&l.origin_xyz),
                        rpy: a3(&l.origin_rpy),
                    },
                    actuated: l.actuated,
                    limits: LimitsFile {
                        pos: [l.pos_limits.0, l.pos_limits.1],
                        vel: l.vel_limit,
                    },
                })
                .collect(),
            constraints: self
                .constraints
                .iter()
                .map(|c| ConstraintFile {
                    body_p: c.body_p,
                    point_p: a3(&c.point_p),
                    body_s: c.body_s,
                    point_s: a3(&c.point_s),
                    axes: c.axes.clone(),
                })
                .collect(),
            home: self.home.as_ref().map(|h| h.iter().copied().collect()),
            reference_theta: self.reference_theta.as_ref().map(|t| t.as_slice().to_vec()),
            ground_truth_theta: self
                .ground_truth_theta
                .as_ref()
                .map(|t| t.as_slice().to_vec()),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("model serializes");
        s.push('\n');
        s
    }
}

/// Reads and validates a model file.
pub fn load_model(path: impl AsRef<Path>) -> Result<RobotModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    RobotModel::from_json_str(&text)
}
