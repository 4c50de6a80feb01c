use nalgebra::{Matrix3x2, Vector2, Vector3};

use super::{FilmProblem, PlanarField};
use crate::discretization::{seed_field, Constraint, DiscreteField, Init, LateralBc};
use crate::error::{Error, Result};

/// Inputs of the oscillating recovery fields built around a planar field.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryParams {
    pub s0: Vector3<f64>,
    /// Cell minimizer at `(s₀, ξ₀)`, tangent-valued and periodic over a unit cell.
    pub corrector: DiscreteField,
    /// Radius of the manifold cut-off around `s₀`.
    pub delta: f64,
    /// Also fade the oscillation out over a strip of width `h` at the lateral
    /// boundary, so that the result keeps the film datum.
    pub lateral_cutoff: bool,
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Radial profile equal to 1 on `[0, δ/4]`, 0 beyond `δ/2`, C¹, slope at most `6/δ`.
pub fn cutoff(r: f64, delta: f64) -> f64 {
    1.0 - smoothstep((r - 0.25 * delta) / (0.25 * delta))
}

/// Trilinear value of a field at `(y₁, y₂, x₃)`, extended periodically in `y_α`
/// with the period of its grid.
pub fn sample_periodic(field: &DiscreteField, y: Vector2<f64>, x3: f64) -> Vector3<f64> {
    let g = &field.grid;
    let h = g.spacing();
    let mut cell = [0usize; 3];
    let mut frac = [0.0; 3];
    for d in 0..3 {
        let v = if d < 2 { y[d] } else { x3 };
        let mut u = (v - g.origin[d]) / h[d];
        if d < 2 {
            let period = (g.nodes[d] - 1) as f64;
            u = u.rem_euclid(period);
        } else {
            u = u.clamp(0.0, (g.nodes[d] - 1) as f64);
        }
        let i = (u.floor() as usize).min(g.nodes[d] - 2);
        cell[d] = i;
        frac[d] = u - i as f64;
    }
    let mut out = Vector3::zeros();
    for c in 0..8usize {
        let b = [(c >> 2) & 1, (c >> 1) & 1, c & 1];
        let w: f64 = (0..3).map(|d| if b[d] == 1 { frac[d] } else { 1.0 - frac[d] }).product();
        if w != 0.0 {
            out += field.values[g.index(cell[0] + b[0], cell[1] + b[1], cell[2] + b[2])] * w;
        }
    }
    out
}

/// `u_k = Π(u + h·ζ(|u − s₀|)·φ(x_α/h, x₃))` at the nodes of the film grid.
///
/// The planar field is sampled bilinearly and projected. With the lateral
/// cut-off, boundary nodes are set to the film datum exactly.
pub fn build_recovery_sequence(u: &PlanarField, params: &RecoveryParams, problem: &FilmProblem) -> Result<DiscreteField> {
    let h = problem.h;
    let manifold = problem.manifold;
    if !(params.delta > 0.0 && params.delta < 1.0) {
        return Err(Error::InvalidInput(format!("cut-off radius must lie in (0,1), got {}", params.delta)));
    }
    if 2.0 * params.delta >= manifold.reach() {
        return Err(Error::PreconditionViolated(format!(
            "ball of radius 2δ = {} exceeds the projection neighbourhood",
            2.0 * params.delta
        )));
    }
    if u.manifold != manifold {
        return Err(Error::InvalidInput("planar field and film use different manifolds".into()));
    }
    let amp = params.corrector.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let bound = h * amp * (6.0 / params.delta).max(2.0 / params.delta);
    if bound >= 1.0 {
        return Err(Error::PreconditionViolated(format!("h·‖φ‖∞·max(‖∇ζ‖∞, 2/δ) = {bound} ≥ 1")));
    }

    let mut field = seed_field(
        problem.domain(),
        problem.nodes,
        Constraint::ManifoldValued(manifold),
        LateralBc::None,
        Init::ProjectedAffine { s0: params.s0, xi: Matrix3x2::zeros() },
    )?;
    for idx in 0..field.len() {
        let x = field.grid.position(idx);
        let base = u.sample_projected(x[0], x[1])?;
        let mut weight = cutoff((base - params.s0).norm(), params.delta);
        if params.lateral_cutoff {
            let dist = (0.5 - x[0].abs()).min(0.5 - x[1].abs()).max(0.0);
            weight *= smoothstep(dist / h);
        }
        field.values[idx] = if weight == 0.0 {
            base
        } else {
            let phi = sample_periodic(&params.corrector, Vector2::new(x[0] / h, x[1] / h), x[2]);
            manifold.nearest_point(&(base + phi * (h * weight)))?
        };
    }
    if params.lateral_cutoff {
        field.lateral_bc = problem.lateral_bc();
        field.enforce()?;
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::SlabDomain;
    use crate::film::Datum;
    use crate::geometry::Manifold;
    use crate::integrand::{CoefficientField, IntegrandSpec};

    fn setup(h: f64) -> (FilmProblem, PlanarField, DiscreteField) {
        let spec = IntegrandSpec::isotropic(CoefficientField::Constant { a0: 1.0 }, 2.0).unwrap();
        let sphere = Manifold::sphere(1.0).unwrap();
        let d = Datum { s0: [0.0, 0.0, 1.0], xi: [[0.1, 0.0, 0.0], [0.0; 3]] };
        let p = FilmProblem::new(spec, sphere, h, Some(d), 4).unwrap();
        let u = PlanarField::from_datum(sphere, &d, [9, 9]).unwrap();
        let phi = seed_field(SlabDomain::Cell { t: 1 }, [5, 5, 2], Constraint::Free, LateralBc::Periodic, Init::Zero).unwrap();
        (p, u, phi)
    }

    #[test]
    fn cutoff_profile() {
        assert_eq!(cutoff(0.0, 0.4), 1.0);
        assert_eq!(cutoff(0.1, 0.4), 1.0);
        assert_eq!(cutoff(0.2, 0.4), 0.0);
        assert_eq!(cutoff(0.5, 0.4), 0.0);
        let slope = (1..400).map(|i| (cutoff(i as f64 * 1e-3, 0.4) - cutoff((i - 1) as f64 * 1e-3, 0.4)).abs() / 1e-3);
        assert!(slope.fold(0.0, f64::max) <= 6.0 / 0.4 + 1e-6);
    }

    #[test]
    fn zero_corrector_reproduces_planar_field() {
        let (p, u, phi) = setup(0.25);
        let params = RecoveryParams { s0: Vector3::z(), corrector: phi, delta: 0.4, lateral_cutoff: false };
        let r = build_recovery_sequence(&u, &params, &p).unwrap();
        for idx in 0..r.len() {
            let x = r.grid.position(idx);
            assert!((r.values[idx] - u.sample_projected(x[0], x[1]).unwrap()).norm() < 1e-15);
        }
    }

    #[test]
    fn periodic_sampling_wraps() {
        let (_, _, mut phi) = setup(0.25);
        for idx in 0..phi.len() {
            let x = phi.grid.position(idx);
            phi.values[idx] = Vector3::new((2.0 * std::f64::consts::PI * x[0]).cos(), 0.0, 0.0);
        }
        phi.enforce().unwrap();
        let a = sample_periodic(&phi, Vector2::new(0.3, 0.1), 0.0);
        let b = sample_periodic(&phi, Vector2::new(3.3, -4.9), 0.0);
        assert!((a - b).norm() < 1e-12);
    }

    #[test]
    fn smallness_condition_enforced() {
        let (p, u, mut phi) = setup(0.5);
        phi.values.iter_mut().for_each(|v| *v = Vector3::new(1.0, 0.0, 0.0));
        let params = RecoveryParams { s0: Vector3::z(), corrector: phi, delta: 0.4, lateral_cutoff: false };
        assert!(matches!(build_recovery_sequence(&u, &params, &p), Err(Error::PreconditionViolated(_))));
    }

    #[test]
    fn lateral_cutoff_keeps_datum() {
        let (p, u, mut phi) = setup(0.25);
        phi.values.iter_mut().for_each(|v| *v = Vector3::new(0.05, 0.0, 0.0));
        let params = RecoveryParams { s0: Vector3::z(), corrector: phi, delta: 0.4, lateral_cutoff: true };
        let r = build_recovery_sequence(&u, &params, &p).unwrap();
        assert!(r.bc_residual().unwrap() < 1e-14);
        assert!(r.constraint_residual() < 1e-12);
    }
}
