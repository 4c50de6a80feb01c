use nalgebra::{Matrix3x2, Vector2, Vector3};
use tqhom::film::sample_periodic;
use tqhom::*;

fn unit() -> IntegrandSpec {
    IntegrandSpec::isotropic(CoefficientField::Constant { a0: 1.0 }, 2.0).unwrap()
}

fn laminate() -> IntegrandSpec {
    IntegrandSpec::isotropic(CoefficientField::Laminate { a1: 1.0, a2: 4.0, theta: 0.5, axis: 1 }, 2.0).unwrap()
}

fn sphere() -> Manifold {
    Manifold::sphere(1.0).unwrap()
}

fn laminate_table(xi_max: f64) -> DensityTable {
    let settings = TableSettings { xi_max, m: 5, n: 8, t_list: vec![1], ..Default::default() };
    build_density_table(&laminate(), &sphere(), &[Vector3::z()], &settings).unwrap()
}

#[test]
fn thickness_linear_tangent_field_has_unit_energy() {
    // v = Π(s₀ + h·x₃·τ): the 1/h in the scaled gradient cancels the amplitude.
    let tau = Vector3::x();
    for h in [1e-2, 1e-3] {
        let p = FilmProblem::new(unit(), sphere(), h, None, 1).unwrap();
        let p = FilmProblem { nodes: [5, 5, 2], ..p };
        let grid = Grid::new(&p.domain(), p.nodes).unwrap();
        let values = (0..grid.len())
            .map(|i| sphere().nearest_point(&(Vector3::z() + tau * (h * grid.position(i).z))).unwrap())
            .collect();
        let u = seed_field(p.domain(), p.nodes, Constraint::ManifoldValued(sphere()), LateralBc::None, Init::Nodal(values)).unwrap();
        let e = eval_film_energy(&u, &p).unwrap();
        assert!((e - 1.0).abs() < 10.0 * h * h, "h = {h}: {e}");
    }
}

#[test]
fn constant_coefficient_energy_depends_on_thickness_only_through_scaling() {
    let p1 = FilmProblem { nodes: [5, 5, 2], ..FilmProblem::new(unit(), sphere(), 0.5, None, 1).unwrap() };
    let p2 = FilmProblem { h: 0.25, ..p1.clone() };
    let grid = Grid::new(&p1.domain(), p1.nodes).unwrap();
    let values = (0..grid.len())
        .map(|i| {
            let x = grid.position(i);
            sphere().nearest_point(&Vector3::new(0.2 * x.x, 0.1 * x.y, 1.0)).unwrap()
        })
        .collect();
    let u = seed_field(p1.domain(), p1.nodes, Constraint::ManifoldValued(sphere()), LateralBc::None, Init::Nodal(values)).unwrap();
    let u2 = DiscreteField { domain: p2.domain(), ..u.clone() };
    // x₃-independent field: only in-plane derivatives, which are not rescaled.
    let (a, b) = (eval_film_energy(&u, &p1).unwrap(), eval_film_energy(&u2, &p2).unwrap());
    assert!((a - b).abs() < 1e-14 * a);
}

#[test]
fn film_minimization_descends_and_stays_on_sphere() {
    let datum = Datum { s0: [0.0, 0.0, 1.0], xi: [[0.2, 0.0, 0.0], [0.0; 3]] };
    let mut p = FilmProblem::new(laminate(), sphere(), 0.5, Some(datum), 4).unwrap();
    p.settings.tol = 1e-7;
    let sol = minimize_film(&p, None).unwrap();
    assert!(sol.log.windows(2).all(|w| w[1].energy <= w[0].energy));
    assert!(sol.field.constraint_residual() <= 1e-8);
    assert!(sol.field.bc_residual().unwrap() <= 1e-10);
    let start = eval_film_energy(&p.datum_extension(Vector3::z()).unwrap(), &p).unwrap();
    assert!(sol.energy <= start);
}

#[test]
fn limit_energy_of_laminate_datum_matches_harmonic_mean() {
    let table = laminate_table(0.4);
    let d = Datum { s0: [0.0, 0.0, 1.0], xi: [[0.2, 0.0, 0.0], [0.0; 3]] };
    let u = PlanarField::from_datum(sphere(), &d, [33, 33]).unwrap();
    let e = eval_limit_energy(&u, &table).unwrap();
    assert_eq!(e.out_of_range, 0);
    assert!((e.value - 1.6 * 0.04).abs() <= 0.03 * 1.6 * 0.04, "{}", e.value);
}

#[test]
fn limit_energy_flags_out_of_range_points() {
    let table = laminate_table(0.1);
    let d = Datum { s0: [0.0, 0.0, 1.0], xi: [[0.3, 0.0, 0.0], [0.0; 3]] };
    let u = PlanarField::from_datum(sphere(), &d, [5, 5]).unwrap();
    assert!(eval_limit_energy(&u, &table).unwrap().out_of_range > 0);
}

#[test]
fn recovery_of_constant_field_stays_within_corrector_amplitude() {
    let mut corrector =
        seed_field(SlabDomain::Cell { t: 1 }, [9, 9, 2], Constraint::Free, LateralBc::Periodic, Init::Zero).unwrap();
    for i in 0..corrector.len() {
        let x = corrector.grid.position(i);
        let w = 2.0 * std::f64::consts::PI;
        corrector.values[i] = Vector3::new(0.05 * (w * x.x).sin(), 0.03 * (w * x.y).cos(), 0.0);
    }
    corrector.enforce().unwrap();
    let amp = corrector.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let u = PlanarField::constant(sphere(), Vector3::z(), [3, 3]).unwrap();
    let params = RecoveryParams { s0: Vector3::z(), corrector: corrector.clone(), delta: 0.4, lateral_cutoff: false };
    for h in [0.25, 0.125, 0.0625] {
        let p = FilmProblem::new(unit(), sphere(), h, None, 8).unwrap();
        let r = build_recovery_sequence(&u, &params, &p).unwrap();
        let dist = r.values.iter().map(|v| (v - Vector3::z()).norm()).fold(0.0, f64::max);
        assert!(dist <= h * amp * (1.0 + 1e-12), "h = {h}: {dist}");
        assert!(dist >= 0.9 * h * amp);
        assert!(r.constraint_residual() <= 1e-8);
    }
    // Periodic extension of the corrector.
    let a = sample_periodic(&corrector, Vector2::new(0.1, 0.2), 0.0);
    let b = sample_periodic(&corrector, Vector2::new(2.1, -0.8), 0.0);
    assert!((a - b).norm() < 1e-14);
}

#[test]
fn recovery_energy_decreases_toward_limit() {
    let table = laminate_table(0.4);
    let d = Datum { s0: [0.0, 0.0, 1.0], xi: [[0.2, 0.0, 0.0], [0.0; 3]] };
    let cfg = GammaConfig::new(laminate(), sphere(), d);
    let rows = run_recovery_study(&cfg, &table, &[0.25, 0.125, 0.0625]).unwrap();
    let last = rows.last().unwrap();
    assert!((last.energy - last.limit_energy).abs() <= 0.05 * last.limit_energy);
    let csv = tqhom::verify::recovery_csv(&rows);
    assert!(csv.starts_with("k,h_k,sup_dist,energy,limit_energy\n"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn datum_outside_projection_neighbourhood_rejected() {
    let d = Datum { s0: [0.0, 0.0, 1.0], xi: [[1.2, 0.0, 0.0], [0.9, 0.0, 0.0]] };
    assert!(matches!(d.validate(&sphere()), Err(Error::IncompatibleBc(_))));
    let normal = Datum { s0: [0.0, 0.0, 1.0], xi: [[0.0, 0.0, 0.1], [0.0; 3]] };
    assert!(normal.validate(&sphere()).is_err());
    let _ = Matrix3x2::<f64>::zeros();
}
