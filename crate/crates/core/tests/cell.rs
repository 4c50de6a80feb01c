use nalgebra::{Matrix3x2, Vector3};
use tqhom::cell::TableMeta;
use tqhom::*;

fn laminate() -> IntegrandSpec {
    IntegrandSpec::isotropic(CoefficientField::Laminate { a1: 1.0, a2: 4.0, theta: 0.5, axis: 1 }, 2.0).unwrap()
}

fn sphere() -> Manifold {
    Manifold::sphere(1.0).unwrap()
}

#[test]
fn zero_trace_cells_lie_above_periodic_ones() {
    let xi = Matrix3x2::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let p = CellProblem::new(laminate(), sphere(), Vector3::z(), xi, 1, 16);
    let periodic = solve_cell(&p).unwrap();
    let zero = solve_cell(&p.clone().with_boundary(CellBoundary::ZeroTrace)).unwrap();
    assert!((periodic.value - 1.6).abs() < 1e-8);
    assert!(zero.value > periodic.value);
    assert!(zero.value <= zero.zero_field_value);
    assert!(zero.status.converged());
}

#[test]
fn larger_cells_approach_the_periodic_value() {
    let xi = Matrix3x2::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let p = CellProblem::new(laminate(), sphere(), Vector3::z(), xi, 1, 8).with_boundary(CellBoundary::ZeroTrace);
    let est = estimate_hom_density(&p, &[1, 2, 4]).unwrap();
    let v: Vec<f64> = est.per_t.iter().map(|(_, v)| *v).collect();
    assert!(v.windows(2).all(|w| w[1] < w[0]), "{v:?}");
    assert!(v[2] > 1.6);
}

#[test]
fn off_pole_base_points_rotate_consistently() {
    // The laminate density only sees the in-plane gradient, so any tangent
    // plane with the same in-plane column gives the same value.
    let s = Vector3::new(0.0, 0.6, 0.8);
    let frame = sphere().tangent_frame(&s).unwrap();
    let xi = Matrix3x2::from_columns(&[Vector3::x(), Vector3::zeros()]);
    assert!(frame.normal_residual(&xi) < 1e-15);
    let v = solve_cell(&CellProblem::new(laminate(), sphere(), s, xi, 1, 16)).unwrap().value;
    assert!((v - 1.6).abs() < 1e-8, "{v}");
}

#[test]
fn table_csv_roundtrip_through_files() {
    let settings = TableSettings { xi_max: 0.5, m: 3, n: 4, t_list: vec![1], ..Default::default() };
    let t = build_density_table(&laminate(), &sphere(), &[Vector3::z()], &settings).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("table.csv");
    let meta = dir.path().join("table.json");
    std::fs::write(&csv, t.to_csv()).unwrap();
    std::fs::write(&meta, serde_json::to_string(&t.meta()).unwrap()).unwrap();
    let meta: TableMeta = serde_json::from_str(&std::fs::read_to_string(&meta).unwrap()).unwrap();
    let back = DensityTable::from_csv(&meta, &std::fs::read_to_string(&csv).unwrap()).unwrap();
    for (a, b) in back.values[0].iter().zip(&t.values[0]) {
        assert!((a - b).abs() <= 1e-15 * (1.0 + b.abs()));
    }
    assert!(t.converged[0].iter().all(|c| *c));
}
