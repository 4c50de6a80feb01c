use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use tqhom::*;

fn manifolds() -> impl Strategy<Value = Manifold> {
    prop_oneof![
        (0.5f64..3.0).prop_map(|r| Manifold::sphere(r).unwrap()),
        (1.5f64..3.0, 0.3f64..1.0).prop_map(|(big, small)| Manifold::torus(big, small).unwrap()),
        (prop::array::uniform3(-1.0f64..1.0), prop::array::uniform3(-1.0f64..1.0))
            .prop_filter("nonzero normal", |(_, n)| Vector3::from(*n).norm() > 0.1)
            .prop_map(|(p, n)| Manifold::plane(p, n).unwrap()),
    ]
}

fn vec3(r: f64) -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-r..r).prop_map(Vector3::from)
}

fn mat3(r: f64) -> impl Strategy<Value = Matrix3<f64>> {
    prop::array::uniform9(-r..r).prop_map(|a| Matrix3::from_row_slice(&a))
}

/// A point on the manifold and an offset of at most 40% of its reach.
fn point_near(m: Manifold) -> impl Strategy<Value = (Manifold, Vector3<f64>, Vector3<f64>)> {
    (vec3(3.0), vec3(1.0)).prop_filter_map("projectable seed", move |(x, d)| {
        let s = m.nearest_point(&x).ok()?;
        let off = if d.norm() > 1e-9 { d / d.norm() * (0.4 * m.reach().min(1.0) * d.norm().min(1.0)) } else { d };
        Some((m, s, off))
    })
}

fn coefficients() -> impl Strategy<Value = CoefficientField> {
    prop_oneof![
        (0.2f64..5.0).prop_map(|a0| CoefficientField::Constant { a0 }),
        (0.2f64..5.0, 0.2f64..5.0, 0.05f64..0.95, 1u8..=2).prop_map(|(a1, a2, theta, axis)| CoefficientField::Laminate {
            a1,
            a2,
            theta,
            axis
        }),
        (0.2f64..5.0, 0.2f64..5.0).prop_map(|(a1, a2)| CoefficientField::Checkerboard { a1, a2 }),
    ]
}

fn specs() -> impl Strategy<Value = IntegrandSpec> {
    let forms = prop_oneof![
        Just(Form::Isotropic),
        prop::array::uniform3(0.2f64..3.0).prop_map(|weights| Form::ColumnWeighted { weights }),
    ];
    (coefficients(), 1.2f64..4.0, forms).prop_map(|(c, p, f)| IntegrandSpec::new(c, p, f).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn projection_is_idempotent((m, s, off) in manifolds().prop_flat_map(point_near)) {
        let p = m.nearest_point(&(s + off)).unwrap();
        let q = m.nearest_point(&p).unwrap();
        prop_assert!((p - q).norm() <= 1e-12 * (1.0 + p.norm()));
        prop_assert!(m.residual(&p) <= 1e-10);
    }

    #[test]
    fn manifold_points_are_fixed((m, s, _) in manifolds().prop_flat_map(point_near)) {
        let p = m.nearest_point(&s).unwrap();
        prop_assert!((p - s).norm() <= 1e-12 * (1.0 + s.norm()));
    }

    #[test]
    fn offset_is_normal_to_the_manifold((m, s, off) in manifolds().prop_flat_map(point_near)) {
        // x − Π(x) is normal at Π(x), so |x − y|² = |x − Π(x)|² + |Π(x) − y|² for y on the tangent plane.
        let x = s + off;
        let p = m.nearest_point(&x).unwrap();
        let frame = m.tangent_frame(&p).unwrap();
        let t = frame.project(&(x - p));
        prop_assert!(t.norm() <= 1e-9 * (1.0 + (x - p).norm()));
        let y = p + frame.basis[0] * 0.3 - frame.basis[1] * 0.2;
        let lhs = (x - y).norm_squared();
        let rhs = (x - p).norm_squared() + (p - y).norm_squared();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs));
    }

    #[test]
    fn projection_derivative_is_tangent_projection((m, s, off) in manifolds().prop_flat_map(point_near)) {
        let v = off / off.norm().max(1e-12);
        let h = 1e-6;
        let d = (m.nearest_point(&(s + v * h)).unwrap() - m.nearest_point(&(s - v * h)).unwrap()) / (2.0 * h);
        let frame = m.tangent_frame(&s).unwrap();
        prop_assert!((d - frame.project(&v)).norm() <= 1e-6);
    }

    #[test]
    fn density_is_periodic(spec in specs(), x in vec3(2.0), xi in mat3(2.0), shift in (-3i32..3, -3i32..3)) {
        let y = x + Vector3::new(shift.0 as f64, shift.1 as f64, 0.0);
        let (a, b) = (eval_f(&spec, &x, &xi), eval_f(&spec, &y, &xi));
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn density_growth_bounds(spec in specs(), x in vec3(2.0), xi in mat3(3.0)) {
        let (alpha, beta) = growth_constants(&spec);
        let f = eval_f(&spec, &x, &xi);
        let r = xi.norm().powf(spec.p);
        prop_assert!(alpha * r <= f * (1.0 + 1e-12) + 1e-300);
        prop_assert!(f <= beta * (1.0 + r) * (1.0 + 1e-12));
    }

    #[test]
    fn perturbed_density_envelope(spec in specs(), (m, s, _) in manifolds().prop_flat_map(point_near), x in vec3(2.0), xi in mat3(3.0)) {
        let c = spec.perturbed_growth_constant();
        let frame = m.tangent_frame(&s).unwrap();
        let pert = PerturbedIntegrand::new(spec.clone(), m);
        let f = eval_fbar(&pert, &x, &frame, &xi);
        let r = xi.norm().powf(spec.p);
        prop_assert!(r / c <= f * (1.0 + 1e-12) + 1e-300);
        prop_assert!(f <= c * (1.0 + r) * (1.0 + 1e-12));
    }

    #[test]
    fn perturbed_density_agrees_on_tangent_matrices(spec in specs(), (m, s, _) in manifolds().prop_flat_map(point_near), x in vec3(2.0), xi in mat3(3.0)) {
        let frame = m.tangent_frame(&s).unwrap();
        let t = matrix_tangent_projection(&frame, &xi);
        let pert = PerturbedIntegrand::new(spec.clone(), m);
        let a = eval_fbar(&pert, &x, &frame, &t);
        let b = eval_f(&spec, &x, &t);
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
    }
}
