//! Charts on the unit sphere.
//!
//! Bearings live on S². Filtering happens in a two-dimensional chart: the
//! tangent plane at a reference bearing, coordinatised by an orthonormal
//! [`TangentBasis`]. [`log_map`] and [`exp_map`] convert between the sphere
//! and chart coordinates, and [`parallel_transport`] re-expresses tangent
//! vectors when the chart is re-anchored.

use nalgebra::{Matrix2, Matrix3x2, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bearings closer than this to antipodal have no well-defined log map.
pub const EPS_ANTIPODAL: f64 = 1e-6;

/// Below this chart radius the exponential map switches to its first-order form.
pub const EPS_SMALL_ANGLE: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeometryError {
    #[error("bearing is antipodal to the chart reference (dot = {dot}); displacement direction undefined")]
    Antipodal { dot: f64 },
    #[error("tangent coordinates of norm {norm} leave the chart domain (must be < pi)")]
    ChartDomain { norm: f64 },
    #[error("cannot normalise a zero-length vector into a bearing")]
    ZeroVector,
}

/// A direction on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct UnitBearing(Vector3<f64>);

impl UnitBearing {
    /// Normalises `v`. Fails only for the zero vector (or non-finite input).
    ///
    /// Vectors already unit length to within rounding are kept bit for bit,
    /// so normalising is idempotent and serialized bearings read back exactly.
    pub fn new(v: Vector3<f64>) -> Result<Self, GeometryError> {
        let n = v.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(GeometryError::ZeroVector);
        }
        if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
            return Ok(Self(v));
        }
        Ok(Self(v / n))
    }

    pub fn from_xyz(x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        Self::new(Vector3::new(x, y, z))
    }

    /// Bearing at the given azimuth (from +x towards +y) and elevation (towards +z).
    pub fn from_azimuth_elevation(azimuth: f64, elevation: f64) -> Self {
        let (sa, ca) = azimuth.sin_cos();
        let (se, ce) = elevation.sin_cos();
        // Already unit length up to rounding; renormalise anyway.
        Self::new(Vector3::new(ce * ca, ce * sa, se)).expect("trigonometric vector is non-zero")
    }

    #[inline]
    pub fn as_vector(&self) -> &Vector3<f64> {
        &self.0
    }

    #[inline]
    pub fn dot(&self, other: &UnitBearing) -> f64 {
        self.0.dot(&other.0)
    }

    /// Azimuth in (-pi, pi], measured from +x towards +y.
    pub fn azimuth(&self) -> f64 {
        self.0.y.atan2(self.0.x)
    }

    /// Elevation above the x-y plane in [-pi/2, pi/2].
    pub fn elevation(&self) -> f64 {
        self.0.z.clamp(-1.0, 1.0).asin()
    }

    /// Great-circle angle to `other`, in [0, pi].
    pub fn angle_to(&self, other: &UnitBearing) -> f64 {
        self.0.cross(&other.0).norm().atan2(self.dot(other))
    }
}

impl TryFrom<[f64; 3]> for UnitBearing {
    type Error = GeometryError;

    fn try_from(v: [f64; 3]) -> Result<Self, Self::Error> {
        Self::new(Vector3::from(v))
    }
}

impl From<UnitBearing> for [f64; 3] {
    fn from(b: UnitBearing) -> Self {
        [b.0.x, b.0.y, b.0.z]
    }
}

/// Orthonormal frame `[b1, b2]` of the tangent plane at an anchoring bearing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentBasis {
    pub b1: Vector3<f64>,
    pub b2: Vector3<f64>,
}

impl TangentBasis {
    /// The basis as a 3x2 matrix with `b1`, `b2` as columns.
    pub fn matrix(&self) -> Matrix3x2<f64> {
        Matrix3x2::from_columns(&[self.b1, self.b2])
    }

    /// Tangent-plane vector `B w` for chart coordinates `w`.
    #[inline]
    pub fn embed(&self, w: &Vector2<f64>) -> Vector3<f64> {
        self.b1 * w.x + self.b2 * w.y
    }

    /// Chart coordinates `B^T v` of an ambient vector.
    #[inline]
    pub fn project(&self, v: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.b1.dot(v), self.b2.dot(v))
    }
}

/// Chart coordinates, in radians of angular displacement.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TangentCoords(pub Vector2<f64>);

impl TangentCoords {
    pub fn new(w1: f64, w2: f64) -> Self {
        Self(Vector2::new(w1, w2))
    }

    pub fn zero() -> Self {
        Self::default()
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

/// Deterministic tangent basis at `g`.
///
/// Picks the canonical axis least aligned with `g` (lowest index on ties),
/// then `b1 = normalize(e x g)` and `b2 = g x b1`.
pub fn make_tangent_basis(g: &UnitBearing) -> TangentBasis {
    let v = g.as_vector();
    let mut axis = 0;
    let mut best = v[0].abs();
    for i in 1..3 {
        if v[i].abs() < best {
            best = v[i].abs();
            axis = i;
        }
    }
    let e = Vector3::ith(axis, 1.0);
    let b1 = e.cross(v).normalize();
    let b2 = v.cross(&b1);
    TangentBasis { b1, b2 }
}

/// Chart coordinates of `g` in the tangent plane at `g_ref`.
///
/// The returned vector has norm equal to the great-circle angle between the
/// two bearings.
pub fn log_map(g_ref: &UnitBearing, basis: &TangentBasis, g: &UnitBearing) -> Result<TangentCoords, GeometryError> {
    let r = g_ref.as_vector();
    let dot = r.dot(g.as_vector());
    if dot <= -1.0 + EPS_ANTIPODAL {
        return Err(GeometryError::Antipodal { dot });
    }
    let p = g.as_vector() - r * dot;
    let p_norm = p.norm();
    if p_norm == 0.0 {
        return Ok(TangentCoords::zero());
    }
    // atan2 keeps full precision near 0 where acos(dot) does not.
    let theta = p_norm.atan2(dot);
    Ok(TangentCoords(basis.project(&p) * (theta / p_norm)))
}

/// Bearing reached by walking `w` from `g_ref` along the geodesic.
pub fn exp_map(g_ref: &UnitBearing, basis: &TangentBasis, w: &TangentCoords) -> Result<UnitBearing, GeometryError> {
    let theta = w.norm();
    if !(theta < std::f64::consts::PI) {
        return Err(GeometryError::ChartDomain { norm: theta });
    }
    if theta == 0.0 {
        return Ok(*g_ref);
    }
    let step = basis.embed(&w.0);
    let g = if theta < EPS_SMALL_ANGLE {
        g_ref.as_vector() + step
    } else {
        g_ref.as_vector() * theta.cos() + step * (theta.sin() / theta)
    };
    UnitBearing::new(g)
}

/// Frame change `T = B_to^T B_from` carrying tangent vectors expressed in
/// `from` into `to` coordinates: `v_to = T v_from`.
pub fn parallel_transport(from: &TangentBasis, to: &TangentBasis) -> Matrix2<f64> {
    Matrix2::new(to.b1.dot(&from.b1), to.b1.dot(&from.b2), to.b2.dot(&from.b1), to.b2.dot(&from.b2))
}
