//! Embedded surfaces of ℝ³ with closed-form nearest-point projection.
//!
//! Three kinds are supported: a sphere centred at the origin, a torus of
//! revolution about the `e₃` axis and an affine plane. Every kind is a
//! connected boundaryless surface, so the intrinsic dimension is always 2.

use nalgebra::{Matrix3, Matrix3x2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the defining-equation residual for a point to count as on the manifold.
pub const ON_MANIFOLD_TOL: f64 = 1e-10;

/// Relative distance to the medial axis below which projection is refused.
const AMBIGUITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Manifold {
    Sphere { radius: f64 },
    /// Torus of revolution about `e₃`: tube radius `minor` around a core circle of radius `major`.
    Torus { major: f64, minor: f64 },
    AffinePlane { point: [f64; 3], normal: [f64; 3] },
}

impl Manifold {
    pub fn sphere(radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidInput(format!("sphere radius must be > 0, got {radius}")));
        }
        Ok(Manifold::Sphere { radius })
    }

    pub fn torus(major: f64, minor: f64) -> Result<Self> {
        if !(minor > 0.0 && minor < major && major.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "torus needs 0 < r < R, got R = {major}, r = {minor}"
            )));
        }
        Ok(Manifold::Torus { major, minor })
    }

    pub fn plane(point: [f64; 3], normal: [f64; 3]) -> Result<Self> {
        let n = Vector3::from(normal);
        let len = n.norm();
        if !(len > 0.0 && len.is_finite()) {
            return Err(Error::InvalidInput("plane normal must be nonzero".into()));
        }
        let n = n / len;
        Ok(Manifold::AffinePlane { point, normal: [n.x, n.y, n.z] })
    }

    /// Checks the parameter invariants of a manifold built without the constructors
    /// (e.g. deserialized).
    pub fn validate(&self) -> Result<Self> {
        match *self {
            Manifold::Sphere { radius } => Manifold::sphere(radius),
            Manifold::Torus { major, minor } => Manifold::torus(major, minor),
            Manifold::AffinePlane { point, normal } => Manifold::plane(point, normal),
        }
    }

    pub fn dim(&self) -> usize {
        2
    }

    /// Radius of the tubular neighbourhood on which the projection is single valued.
    pub fn reach(&self) -> f64 {
        match *self {
            Manifold::Sphere { radius } => radius,
            Manifold::Torus { major, minor } => minor.min(major - minor),
            Manifold::AffinePlane { .. } => f64::INFINITY,
        }
    }

    /// Absolute residual of the defining equation, in units of length.
    pub fn residual(&self, s: &Vector3<f64>) -> f64 {
        match *self {
            Manifold::Sphere { radius } => (s.norm() - radius).abs(),
            Manifold::Torus { major, minor } => {
                let rho = (s.x * s.x + s.y * s.y).sqrt();
                ((rho - major).hypot(s.z) - minor).abs()
            }
            Manifold::AffinePlane { point, normal } => {
                (s - Vector3::from(point)).dot(&Vector3::from(normal)).abs()
            }
        }
    }

    /// Nearest point of the manifold to `x`.
    pub fn nearest_point(&self, x: &Vector3<f64>) -> Result<Vector3<f64>> {
        match *self {
            Manifold::Sphere { radius } => {
                let len = x.norm();
                if len <= AMBIGUITY_TOL * radius {
                    return Err(ambiguous(x));
                }
                Ok(x * (radius / len))
            }
            Manifold::Torus { major, minor } => {
                let rho = (x.x * x.x + x.y * x.y).sqrt();
                if rho <= AMBIGUITY_TOL * major {
                    return Err(ambiguous(x));
                }
                let core = Vector3::new(x.x / rho * major, x.y / rho * major, 0.0);
                let d = x - core;
                let dn = d.norm();
                if dn <= AMBIGUITY_TOL * minor {
                    return Err(ambiguous(x));
                }
                Ok(core + d * (minor / dn))
            }
            Manifold::AffinePlane { point, normal } => {
                let n = Vector3::from(normal);
                Ok(x - n * (x - Vector3::from(point)).dot(&n))
            }
        }
    }

    /// Unit normal at a point on (or near) the manifold.
    pub fn normal_at(&self, s: &Vector3<f64>) -> Result<Vector3<f64>> {
        match *self {
            Manifold::Sphere { radius } => {
                let len = s.norm();
                if len <= AMBIGUITY_TOL * radius {
                    return Err(ambiguous(s));
                }
                Ok(s / len)
            }
            Manifold::Torus { major, minor } => {
                let rho = (s.x * s.x + s.y * s.y).sqrt();
                if rho <= AMBIGUITY_TOL * major {
                    return Err(ambiguous(s));
                }
                let core = Vector3::new(s.x / rho * major, s.y / rho * major, 0.0);
                let d = s - core;
                let dn = d.norm();
                if dn <= AMBIGUITY_TOL * minor {
                    return Err(ambiguous(s));
                }
                Ok(d / dn)
            }
            Manifold::AffinePlane { normal, .. } => Ok(Vector3::from(normal)),
        }
    }

    /// Orthonormal tangent frame at `s`; `s` must satisfy the defining equation to 1e-10.
    pub fn tangent_frame(&self, s: &Vector3<f64>) -> Result<TangentFrame> {
        let residual = self.residual(s);
        if residual > ON_MANIFOLD_TOL {
            return Err(Error::NotOnManifold { point: [s.x, s.y, s.z], residual });
        }
        let normal = self.normal_at(s)?;
        Ok(TangentFrame::from_normal(*s, normal))
    }
}

fn ambiguous(x: &Vector3<f64>) -> Error {
    Error::AmbiguousProjection { point: [x.x, x.y, x.z] }
}

/// Orthonormal basis of `T_s(M)` together with the orthogonal projection onto it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentFrame {
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub basis: [Vector3<f64>; 2],
    pub proj: Matrix3<f64>,
}

impl TangentFrame {
    /// Builds the frame from a unit normal. The first basis vector is the
    /// coordinate axis least aligned with the normal, orthogonalized; the
    /// second completes a right-handed triple with the normal.
    pub fn from_normal(point: Vector3<f64>, normal: Vector3<f64>) -> Self {
        let mut axis = 0;
        for i in 1..3 {
            if normal[i].abs() < normal[axis].abs() {
                axis = i;
            }
        }
        let helper = Vector3::ith(axis, 1.0);
        let b1 = (helper - normal * normal.dot(&helper)).normalize();
        let b2 = normal.cross(&b1);
        let proj = b1 * b1.transpose() + b2 * b2.transpose();
        TangentFrame { point, normal, basis: [b1, b2], proj }
    }

    /// `[b₁ | b₂]` as a 3×2 matrix.
    pub fn basis_matrix(&self) -> Matrix3x2<f64> {
        Matrix3x2::from_columns(&self.basis)
    }

    pub fn project(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.proj * v
    }

    pub fn coords(&self, v: &Vector3<f64>) -> [f64; 2] {
        [self.basis[0].dot(v), self.basis[1].dot(v)]
    }

    pub fn from_coords(&self, c: [f64; 2]) -> Vector3<f64> {
        self.basis[0] * c[0] + self.basis[1] * c[1]
    }

    /// Largest normal component among the columns of `m`.
    pub fn normal_residual(&self, m: &Matrix3x2<f64>) -> f64 {
        m.column_iter().map(|c| c.dot(&self.normal).abs()).fold(0.0, f64::max)
    }
}

/// Nearest-point projection `Π`.
pub fn nearest_point(m: &Manifold, x: &Vector3<f64>) -> Result<Vector3<f64>> {
    m.nearest_point(x)
}

pub fn tangent_frame(m: &Manifold, s: &Vector3<f64>) -> Result<TangentFrame> {
    m.tangent_frame(s)
}

/// Columnwise tangent projection `[P ξ₁ | P ξ₂ | P ξ₃]`.
pub fn matrix_tangent_projection(frame: &TangentFrame, xi: &Matrix3<f64>) -> Matrix3<f64> {
    frame.proj * xi
}

/// Smallest rotation taking the unit vector `from` to the unit vector `to`.
///
/// Used to carry tangent vectors between nearby tangent planes isometrically.
/// Antipodal arguments have no unique minimal rotation; the identity is returned
/// there and callers only use this between nearby points.
pub fn minimal_rotation(from: &Vector3<f64>, to: &Vector3<f64>) -> Matrix3<f64> {
    let v = from.cross(to);
    let c = from.dot(to);
    if c <= -1.0 + 1e-12 {
        return Matrix3::identity();
    }
    let vx = v.cross_matrix();
    Matrix3::identity() + vx + vx * vx / (1.0 + c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &Vector3<f64>, b: &Vector3<f64>, tol: f64) -> bool {
        (a - b).amax() <= tol
    }

    #[test]
    fn nearest_point_examples() {
        let s = Manifold::sphere(1.0).unwrap();
        let p = s.nearest_point(&Vector3::new(0.0, 0.0, 2.0)).unwrap();
        assert!(close(&p, &Vector3::new(0.0, 0.0, 1.0), 1e-15));

        let pl = Manifold::plane([0.0; 3], [0.0, 0.0, 1.0]).unwrap();
        let p = pl.nearest_point(&Vector3::new(1.0, 2.0, 5.0)).unwrap();
        assert!(close(&p, &Vector3::new(1.0, 2.0, 0.0), 1e-15));

        let t = Manifold::torus(2.0, 1.0).unwrap();
        let p = t.nearest_point(&Vector3::new(4.0, 0.0, 0.0)).unwrap();
        assert!(close(&p, &Vector3::new(3.0, 0.0, 0.0), 1e-15));
    }

    #[test]
    fn medial_axis_is_reported() {
        let s = Manifold::sphere(1.0).unwrap();
        assert!(matches!(
            s.nearest_point(&Vector3::zeros()),
            Err(Error::AmbiguousProjection { .. })
        ));
        let t = Manifold::torus(2.0, 1.0).unwrap();
        assert!(t.nearest_point(&Vector3::new(0.0, 0.0, 0.3)).is_err());
        assert!(t.nearest_point(&Vector3::new(2.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn frame_examples() {
        let s = Manifold::sphere(1.0).unwrap();
        let f = s.tangent_frame(&Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(f.proj, Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0)));

        let pl = Manifold::plane([0.0; 3], [0.0, 0.0, 1.0]).unwrap();
        let f = pl.tangent_frame(&Vector3::new(3.0, -1.0, 0.0)).unwrap();
        assert_eq!(f.proj, Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0)));

        let t = Manifold::torus(2.0, 1.0).unwrap();
        let f = t.tangent_frame(&Vector3::new(3.0, 0.0, 0.0)).unwrap();
        assert_eq!(f.proj, Matrix3::from_diagonal(&Vector3::new(0.0, 1.0, 1.0)));
    }

    #[test]
    fn frame_rejects_off_manifold_points() {
        let s = Manifold::sphere(1.0).unwrap();
        let err = s.tangent_frame(&Vector3::new(0.0, 0.0, 1.0 + 1e-6)).unwrap_err();
        assert!(matches!(err, Error::NotOnManifold { .. }));
    }

    #[test]
    fn matrix_projection_examples() {
        let s = Manifold::sphere(1.0).unwrap();
        let f = s.tangent_frame(&Vector3::new(0.0, 0.0, 1.0)).unwrap();
        let id = Matrix3::identity();
        assert_eq!(
            matrix_tangent_projection(&f, &id),
            Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0))
        );
        let normal_cols = Matrix3::from_columns(&[Vector3::z(); 3]);
        assert_eq!(matrix_tangent_projection(&f, &normal_cols), Matrix3::zeros());
        // e₃⊗e₁ + e₁⊗e₂
        let mut xi = Matrix3::zeros();
        xi[(2, 0)] = 1.0;
        xi[(0, 1)] = 1.0;
        let mut expect = Matrix3::zeros();
        expect[(0, 1)] = 1.0;
        assert_eq!(matrix_tangent_projection(&f, &xi), expect);
    }

    #[test]
    fn invalid_parameters() {
        assert!(Manifold::sphere(0.0).is_err());
        assert!(Manifold::torus(1.0, 1.0).is_err());
        assert!(Manifold::plane([0.0; 3], [0.0; 3]).is_err());
    }

    #[test]
    fn minimal_rotation_maps_normals() {
        let a = Vector3::new(0.1, 0.0, 1.0).normalize();
        let b = Vector3::z();
        let r = minimal_rotation(&a, &b);
        assert!(close(&(r * a), &b, 1e-14));
        assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-14);
    }
}
