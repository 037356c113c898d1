//! Coordinate transforms, angles, wavenumber, RIS steering vectors, and
//! bistatic range functions shared by all other modules.
//!
//! Conventions: azimuth is measured in the x-y plane from the x axis and
//! lies in (-pi, pi]; elevation is measured from the z axis and lies in
//! [0, pi]. Rotations are active and applied as `R * v`. RIS elements live
//! on the x-y plane of the local frame, indexed row-major
//! (`i = row * cols + col`).

use nalgebra::Matrix3;
use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// 3D position or direction in meters.
pub type Vec3 = nalgebra::Vector3<f64>;

/// Shorthand constructor for [`Vec3`].
#[inline]
pub fn vec3(x: f64, y: f64, z: f64) -> Vec3 {
    Vec3::new(x, y, z)
}

/// Tolerance for the orthonormality and determinant checks on [`Rotation`].
pub const ROTATION_TOL: f64 = 1e-12;

/// A proper rotation (orthonormal, det = +1) mapping global coordinates to a
/// local frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    /// Identity rotation (local frame aligned with the global frame).
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wrap a matrix, checking `R^T R = I` and `det R = +1` within
    /// [`ROTATION_TOL`].
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let gram = m.transpose() * m;
        let ortho_err = (gram - Matrix3::identity()).norm();
        let det_err = (m.determinant() - 1.0).abs();
        if ortho_err > ROTATION_TOL || det_err > ROTATION_TOL {
            return Err(Error::DegenerateGeometry(format!(
                "matrix is not a proper rotation (orthonormality error {ortho_err:.3e}, \
                 determinant error {det_err:.3e})"
            )));
        }
        Ok(Rotation(m))
    }

    /// Build from Z-Y-X Euler angles in radians: `R = Rz(yaw) Ry(pitch) Rx(roll)`.
    pub fn from_euler_zyx(yaw: f64, pitch: f64, roll: f64) -> Self {
        Rotation(*nalgebra::Rotation3::from_euler_angles(roll, pitch, yaw).matrix())
    }

    /// The underlying 3x3 matrix.
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Apply the rotation to a vector.
    #[inline]
    pub fn apply(&self, v: Vec3) -> Vec3 {
        self.0 * v
    }
}

/// Azimuth/elevation pair in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnglePair {
    /// Azimuth in (-pi, pi], measured in the x-y plane from the x axis.
    pub azimuth: f64,
    /// Elevation in [0, pi], measured from the z axis.
    pub elevation: f64,
}

impl AnglePair {
    pub fn new(azimuth: f64, elevation: f64) -> Self {
        AnglePair { azimuth, elevation }
    }

    /// Unit vector pointing along this direction.
    pub fn unit_vector(&self) -> Vec3 {
        vec3(
            self.elevation.sin() * self.azimuth.cos(),
            self.elevation.sin() * self.azimuth.sin(),
            self.elevation.cos(),
        )
    }
}

/// Uniform planar array geometry of a RIS: `rows x cols` elements with
/// spacing `spacing` on the local x-y plane, operating at `wavelength`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RisGeometry {
    pub rows: usize,
    pub cols: usize,
    /// Element spacing in meters.
    pub spacing: f64,
    /// Carrier wavelength in meters.
    pub wavelength: f64,
}

impl RisGeometry {
    pub fn new(rows: usize, cols: usize, spacing: f64, wavelength: f64) -> Result<Self> {
        let g = RisGeometry {
            rows,
            cols,
            spacing,
            wavelength,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::DegenerateGeometry(
                "RIS must have at least one element per axis".into(),
            ));
        }
        if !(self.spacing > 0.0) || !(self.wavelength > 0.0) {
            return Err(Error::DegenerateGeometry(
                "RIS spacing and wavelength must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Total element count `W = rows * cols`.
    pub fn element_count(&self) -> usize {
        self.rows * self.cols
    }
}

/// Direction from the user to an anchor, expressed in the user's local frame:
/// `R * (anchor - ue)`.
pub fn local_direction(rotation: &Rotation, anchor: Vec3, ue: Vec3) -> Result<Vec3> {
    let diff = anchor - ue;
    if diff.norm() == 0.0 {
        return Err(Error::DegenerateGeometry(
            "anchor and user positions coincide".into(),
        ));
    }
    Ok(rotation.apply(diff))
}

/// Azimuth/elevation of a direction vector.
///
/// At the poles (elevation 0 or pi) the azimuth is conventionally 0.
pub fn angles_of(w: Vec3) -> Result<AnglePair> {
    let norm = w.norm();
    if norm == 0.0 {
        return Err(Error::DegenerateGeometry(
            "cannot take angles of a zero vector".into(),
        ));
    }
    let azimuth = if w.x == 0.0 && w.y == 0.0 {
        0.0
    } else {
        let az = w.y.atan2(w.x);
        // atan2 can return -pi; fold it onto +pi so azimuth stays in (-pi, pi].
        if az <= -PI {
            PI
        } else {
            az
        }
    };
    let elevation = (w.z / norm).clamp(-1.0, 1.0).acos();
    Ok(AnglePair { azimuth, elevation })
}

/// Wavenumber vector `k(psi) = (2 pi / lambda) [sin el cos az, sin el sin az, cos el]`.
pub fn wavenumber(psi: AnglePair, wavelength: f64) -> Vec3 {
    psi.unit_vector() * (2.0 * PI / wavelength)
}

/// Per-axis steering factor: unit-modulus phases `exp(j (i - (n-1)/2) d k)`
/// for `i = 0..n`. Centering the phases makes the first and last entries
/// conjugate pairs.
fn axis_steering(n: usize, spacing: f64, k_component: f64) -> Vec<Complex64> {
    let centering = -((n as f64 - 1.0) / 2.0) * spacing * k_component;
    (0..n)
        .map(|i| Complex64::from_polar(1.0, centering + i as f64 * spacing * k_component))
        .collect()
}

/// Row-axis steering vector of the RIS at angle `psi` (length `rows`).
pub fn steering_rows(psi: AnglePair, g: &RisGeometry) -> Vec<Complex64> {
    let k = wavenumber(psi, g.wavelength);
    axis_steering(g.rows, g.spacing, k.x)
}

/// Column-axis steering vector of the RIS at angle `psi` (length `cols`).
pub fn steering_cols(psi: AnglePair, g: &RisGeometry) -> Vec<Complex64> {
    let k = wavenumber(psi, g.wavelength);
    axis_steering(g.cols, g.spacing, k.y)
}

/// Full steering vector `a(psi) = a_rows(psi) (x) a_cols(psi)` of length
/// `rows * cols`, entry `i = row * cols + col`.
pub fn steering_vector(psi: AnglePair, g: &RisGeometry) -> Vec<Complex64> {
    let rows = steering_rows(psi, g);
    let cols = steering_cols(psi, g);
    let mut out = Vec::with_capacity(g.element_count());
    for ar in &rows {
        for ac in &cols {
            out.push(ar * ac);
        }
    }
    out
}

/// Sum of the distances from the transmitter `p0` to `x` and from `x` to the
/// receiver `pm`. Constant-value surfaces are ellipsoids with foci `p0`, `pm`.
pub fn bistatic_range(x: Vec3, p0: Vec3, pm: Vec3) -> f64 {
    (p0 - x).norm() + (x - pm).norm()
}

/// Gradient of [`bistatic_range`] with respect to `x`: the sum of the unit
/// vectors from each focus toward `x`. Undefined at the foci themselves.
pub fn bistatic_gradient(x: Vec3, p0: Vec3, pm: Vec3) -> Result<Vec3> {
    let d0 = (x - p0).norm();
    let dm = (x - pm).norm();
    if d0 == 0.0 || dm == 0.0 {
        return Err(Error::DegenerateGeometry(
            "range gradient evaluated at a focus".into(),
        ));
    }
    Ok((x - p0) / d0 + (x - pm) / dm)
}
