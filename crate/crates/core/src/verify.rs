//! Pass/fail suites over density tables, and the thin-film convergence experiment.

use nalgebra::{Matrix3x2, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cell::{solve_cell, CellProblem, DensityTable, Formulation};
use crate::discretization::DiscreteField;
use crate::error::{Error, Result};
use crate::film::{
    build_recovery_sequence, eval_film_energy, eval_limit_energy, minimize_film, minimize_limit, Datum, FilmProblem,
    PlanarField, RecoveryParams,
};
use crate::geometry::Manifold;
use crate::integrand::IntegrandSpec;
use crate::optim::{SolveStatus, SolverSettings};

/// Outcome of a sampled inequality check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub name: String,
    pub samples: usize,
    /// Largest signed relative violation; negative when every sample holds with room.
    pub worst_violation: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Settings needed to reproduce the run.
    pub provenance: serde_json::Value,
}

impl PropertyReport {
    fn new(name: &str, samples: usize, worst_violation: f64, tolerance: f64, provenance: serde_json::Value) -> Self {
        PropertyReport {
            name: name.into(),
            samples,
            worst_violation,
            tolerance,
            pass: worst_violation <= tolerance,
            provenance,
        }
    }
}

fn table_provenance(table: &DensityTable) -> serde_json::Value {
    json!({
        "xi_max": table.settings.xi_max,
        "m": table.settings.m,
        "n": table.settings.n,
        "t_list": table.settings.t_list,
        "solver_tol": table.settings.solver.tol,
        "base_points": table.base_points.len(),
    })
}

fn check_range(flags: impl Iterator<Item = bool>) -> Result<()> {
    let count = flags.filter(|f| *f).count();
    if count > 0 {
        return Err(Error::OutOfTableRange { count });
    }
    Ok(())
}

// Test functions are bilinear on a 4×4 element grid over the unit square,
// vanish on its boundary and take tangent values.
const TEST_ELEMENTS: usize = 4;
const GAUSS: [f64; 2] = [0.5 - 0.288_675_134_594_812_9, 0.5 + 0.288_675_134_594_812_9];

/// Gradients of a test function at the Gauss points, as tangent coordinates
/// `[∂₁ψ, ∂₂ψ]` in the frame basis.
fn test_gradients(nodal: &[[f64; 2]]) -> Vec<[[f64; 2]; 2]> {
    let n = TEST_ELEMENTS;
    let h = 1.0 / n as f64;
    let at = |i: usize, j: usize| nodal[i * (n + 1) + j];
    let mut out = Vec::with_capacity(n * n * 4);
    for i in 0..n {
        for j in 0..n {
            for &a in &GAUSS {
                for &b in &GAUSS {
                    let mut g = [[0.0; 2]; 2];
                    for c in 0..2 {
                        g[0][c] = ((at(i + 1, j)[c] - at(i, j)[c]) * (1.0 - b) + (at(i + 1, j + 1)[c] - at(i, j + 1)[c]) * b) / h;
                        g[1][c] = ((at(i, j + 1)[c] - at(i, j)[c]) * (1.0 - a) + (at(i + 1, j + 1)[c] - at(i + 1, j)[c]) * a) / h;
                    }
                    out.push(g);
                }
            }
        }
    }
    out
}

fn random_test_function(rng: &mut ChaCha8Rng, amplitude: f64) -> Vec<[f64; 2]> {
    let n = TEST_ELEMENTS;
    let mut nodal = vec![[0.0; 2]; (n + 1) * (n + 1)];
    for i in 1..n {
        for j in 1..n {
            nodal[i * (n + 1) + j] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        }
    }
    let top = test_gradients(&nodal).iter().flat_map(|g| g.iter().flatten().map(|v| v.abs())).fold(0.0, f64::max);
    let scale = if top > 0.0 { amplitude * rng.random_range(0.1..1.0) / top } else { 0.0 };
    nodal.iter_mut().for_each(|v| *v = [v[0] * scale, v[1] * scale]);
    nodal
}

/// Mean of the table density over `ξ_α + ∇_α ψ` against its value at `ξ_α`,
/// for random zero-trace tangent `ψ` whose gradient coordinates stay below
/// `0.3·ξmax`. Violations are `(T(ξ) − mean)/T(ξ)`.
pub fn verify_quasiconvexity(
    table: &DensityTable,
    s: &Vector3<f64>,
    xi: &Matrix3x2<f64>,
    n_tests: usize,
    seed: u64,
    slack: f64,
) -> Result<PropertyReport> {
    let frame = table.manifold.tangent_frame(s)?;
    let left = table.lookup(s, xi)?;
    check_range(std::iter::once(left.out_of_range))?;
    let amplitude = 0.3 * table.settings.xi_max;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tests: Vec<Vec<[f64; 2]>> = (0..n_tests).map(|_| random_test_function(&mut rng, amplitude)).collect();
    let weight = 0.25 / (TEST_ELEMENTS * TEST_ELEMENTS) as f64;
    let rights: Vec<Result<f64>> = tests
        .par_iter()
        .map(|nodal| {
            let mut sum = 0.0;
            let mut flags = Vec::new();
            for g in test_gradients(nodal) {
                let d = Matrix3x2::from_columns(&[frame.from_coords(g[0]), frame.from_coords(g[1])]);
                let l = table.lookup(s, &(xi + d))?;
                flags.push(l.out_of_range);
                sum += weight * l.value;
            }
            check_range(flags.into_iter())?;
            Ok(sum)
        })
        .collect();
    let scale = left.value.abs().max(1e-12);
    let mut worst = if n_tests == 0 { 0.0 } else { f64::NEG_INFINITY };
    for r in rights {
        worst = f64::max(worst, (left.value - r?) / scale);
    }
    Ok(PropertyReport::new(
        "tangential_quasiconvexity",
        n_tests,
        worst,
        slack,
        json!({
            "s": [s.x, s.y, s.z],
            "xi": xi.as_slice(),
            "seed": seed,
            "test_elements": TEST_ELEMENTS,
            "amplitude": amplitude,
            "table": table_provenance(table),
        }),
    ))
}

/// Largest `|T(ξ) − T(ξ′)| / ((1 + |ξ|^{p−1} + |ξ′|^{p−1})·|ξ − ξ′|)` over all
/// entry pairs at each base point. Pairs closer than `1e−9` are skipped.
pub fn lipschitz_ratio(table: &DensityTable) -> f64 {
    let p = table.spec.p;
    let entries = table.entries();
    let coords: Vec<[f64; 4]> = (0..entries).map(|e| table.coords(e)).collect();
    let norms: Vec<f64> = coords.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mut best: f64 = 0.0;
    for vals in &table.values {
        for a in 0..entries {
            for b in a + 1..entries {
                let dist = (0..4).map(|d| (coords[a][d] - coords[b][d]).powi(2)).sum::<f64>().sqrt();
                if dist <= 1e-9 {
                    continue;
                }
                let w = (1.0 + norms[a].powf(p - 1.0) + norms[b].powf(p - 1.0)) * dist;
                best = best.max((vals[a] - vals[b]).abs() / w);
            }
        }
    }
    best
}

const ROUNDING: f64 = 1e-12;

/// Growth envelope `|ξ|ᵖ/C ≤ T ≤ C(1 + |ξ|ᵖ)` on every entry, plus the drift of the
/// empirical Lipschitz ratio against `refined` (at most 10 %).
///
/// The signed violation is the larger of the envelope excess relative to
/// `1 + |ξ|ᵖ` and the ratio drift minus 10 %.
pub fn verify_lipschitz_growth_against(table: &DensityTable, refined: Option<&DensityTable>) -> PropertyReport {
    let p = table.spec.p;
    let c = table.envelope_constant();
    let mut envelope: f64 = f64::NEG_INFINITY;
    let mut samples = 0;
    for vals in &table.values {
        for (e, v) in vals.iter().enumerate() {
            let r = table.coords(e).iter().map(|x| x * x).sum::<f64>().powf(0.5 * p);
            let excess = (r / c - v).max(v - c * (1.0 + r));
            envelope = envelope.max(excess / (1.0 + r));
            samples += 1;
        }
    }
    let ratio = lipschitz_ratio(table);
    let (drift, refined_ratio) = match refined {
        Some(t) => {
            let r2 = lipschitz_ratio(t);
            ((r2 - ratio).abs() / ratio.max(1e-300), Some(r2))
        }
        None => (0.0, None),
    };
    let worst = envelope.max(drift - 0.10);
    PropertyReport::new(
        "lipschitz_growth",
        samples,
        worst,
        ROUNDING,
        json!({
            "envelope_constant": c,
            "envelope_excess": envelope,
            "lipschitz_ratio": ratio,
            "refined_ratio": refined_ratio,
            "ratio_drift": drift,
            "drift_tolerance": 0.10,
            "table": table_provenance(table),
        }),
    )
}

/// [`verify_lipschitz_growth_against`] with the table rebuilt at twice the cell resolution.
pub fn verify_lipschitz_growth(table: &DensityTable) -> Result<PropertyReport> {
    let refined = table.rebuild_refined()?;
    Ok(verify_lipschitz_growth_against(table, Some(&refined)))
}

/// Midpoint convexity of the table density along random tangent rank-one
/// segments `ξ_α ± λ a⊗ν`. Violations are `(T(mid) − mean of ends)/T(mid)`.
pub fn verify_rank_one(table: &DensityTable, s: &Vector3<f64>, n_segments: usize, seed: u64, slack: f64) -> Result<PropertyReport> {
    let frame = table.manifold.tangent_frame(s)?;
    let half = 0.5 * table.settings.xi_max;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut segments = Vec::with_capacity(n_segments);
    for _ in 0..n_segments {
        let c: [f64; 4] = std::array::from_fn(|_| rng.random_range(-half..half));
        let ta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let tn: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let len = rng.random_range(0.0..half);
        let a = frame.from_coords([ta.cos(), ta.sin()]);
        let nu = Vector2::new(tn.cos(), tn.sin());
        let xi = Matrix3x2::from_columns(&[frame.from_coords([c[0], c[1]]), frame.from_coords([c[2], c[3]])]);
        segments.push((xi, a * nu.transpose() * len));
    }
    let results: Vec<Result<f64>> = segments
        .par_iter()
        .map(|(xi, d)| {
            let mid = table.lookup(s, xi)?;
            let plus = table.lookup(s, &(xi + d))?;
            let minus = table.lookup(s, &(xi - d))?;
            check_range([mid.out_of_range, plus.out_of_range, minus.out_of_range].into_iter())?;
            Ok((mid.value - 0.5 * (plus.value + minus.value)) / mid.value.abs().max(1e-12))
        })
        .collect();
    let mut worst = if n_segments == 0 { 0.0 } else { f64::NEG_INFINITY };
    for r in results {
        worst = worst.max(r?);
    }
    Ok(PropertyReport::new(
        "rank_one_convexity",
        n_segments,
        worst,
        slack,
        json!({ "s": [s.x, s.y, s.z], "seed": seed, "table": table_provenance(table) }),
    ))
}

/// Film setup shared by the convergence experiment and the recovery study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaConfig {
    pub spec: IntegrandSpec,
    pub manifold: Manifold,
    pub datum: Datum,
    /// In-plane film elements per coefficient period.
    pub elements_per_period: usize,
    /// Elements per side of the planar limit grid.
    pub limit_elements: usize,
    /// Radius of the manifold cut-off in the recovery fields.
    pub delta: f64,
    /// Cell elements per unit length of the corrector; should equal `elements_per_period`.
    pub corrector_n: usize,
    pub film_solver: SolverSettings,
    pub limit_solver: SolverSettings,
    /// Largest relative gap accepted at the smallest thickness.
    pub gap_tolerance: f64,
}

impl GammaConfig {
    pub fn new(spec: IntegrandSpec, manifold: Manifold, datum: Datum) -> Self {
        GammaConfig {
            spec,
            manifold,
            datum,
            elements_per_period: 8,
            limit_elements: 32,
            delta: 0.45,
            corrector_n: 8,
            film_solver: SolverSettings { tol: 1e-7, max_iter: 5000, ..Default::default() },
            limit_solver: SolverSettings { tol: 1e-7, max_iter: 5000, ..Default::default() },
            gap_tolerance: 0.05,
        }
    }

    fn film_problem(&self, h: f64, datum: Option<Datum>) -> Result<FilmProblem> {
        let mut p = FilmProblem::new(self.spec.clone(), self.manifold, h, datum, self.elements_per_period)?;
        p.settings = self.film_solver;
        Ok(p)
    }

    /// Constrained periodic cell minimizer at the datum's base point and gradient.
    pub fn corrector(&self) -> Result<DiscreteField> {
        let mut cell = CellProblem::new(self.spec.clone(), self.manifold, self.datum.s0(), self.datum.xi(), 1, self.corrector_n)
            .with_formulation(Formulation::Constrained);
        cell.nz = 1;
        Ok(solve_cell(&cell)?.argmin)
    }

    fn recovery_params(&self, corrector: DiscreteField, lateral_cutoff: bool) -> RecoveryParams {
        RecoveryParams { s0: self.datum.s0(), corrector, delta: self.delta, lateral_cutoff }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaRow {
    pub h: f64,
    pub film_energy: f64,
    /// Film energy of the recovery field, an upper bound for `film_energy`.
    pub recovery_energy: f64,
    pub gap: f64,
    pub iterations: usize,
    pub status: Option<SolveStatus>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaReport {
    pub ladder: Vec<f64>,
    pub rows: Vec<GammaRow>,
    pub limit_energy: f64,
    pub limit_status: SolveStatus,
    pub limit_iterations: usize,
    pub limit_drift: f64,
    pub limit_out_of_range: usize,
    pub recovery_bound_holds: bool,
    /// Gap at the smallest thickness is no larger than at the largest.
    pub gap_nonincreasing: bool,
    pub final_gap: f64,
    pub gap_tolerance: f64,
    pub pass: bool,
}

impl GammaReport {
    /// CSV with header `h,E_h,E_limit,gap,iters,flags`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("h,E_h,E_limit,gap,iters,flags\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{:e},{:e},{:e},{},{}\n",
                r.h,
                r.film_energy,
                self.limit_energy,
                r.gap,
                r.iterations,
                r.flags.join(";")
            ));
        }
        s
    }
}

fn gamma_row(config: &GammaConfig, h: f64, limit: &PlanarField, params: &RecoveryParams, e_star: f64) -> GammaRow {
    let mut row = GammaRow {
        h,
        film_energy: f64::NAN,
        recovery_energy: f64::NAN,
        gap: f64::NAN,
        iterations: 0,
        status: None,
        flags: Vec::new(),
    };
    let run = |row: &mut GammaRow| -> Result<()> {
        let problem = config.film_problem(h, Some(config.datum))?;
        let rec = build_recovery_sequence(limit, params, &problem)?;
        row.recovery_energy = eval_film_energy(&rec, &problem)?;
        let sol = minimize_film(&problem, Some(&rec))?;
        row.film_energy = sol.energy;
        row.iterations = sol.iterations;
        row.status = Some(sol.status);
        if !sol.status.converged() {
            row.flags.push(format!("{:?}", sol.status).to_lowercase());
        }
        row.gap = (sol.energy - e_star).abs() / e_star.max(1e-12);
        Ok(())
    };
    if let Err(e) = run(&mut row) {
        row.flags.push(format!("error: {e}"));
    }
    row
}

/// Film minima over a ladder of thicknesses against the minimum of the
/// table-based planar limit energy with the same datum. Each film solve starts
/// from the recovery field built on the planar minimizer, whose energy is
/// reported as an upper bound.
pub fn run_gamma_experiment(config: &GammaConfig, table: &DensityTable, ladder: &[f64]) -> Result<GammaReport> {
    if ladder.is_empty() || ladder.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidInput("thickness ladder must be nonempty and strictly decreasing".into()));
    }
    if table.manifold != config.manifold {
        return Err(Error::InvalidInput("table and film use different manifolds".into()));
    }
    config.datum.validate(&config.manifold)?;
    let limit = minimize_limit(table, &config.datum, config.limit_elements, &config.limit_solver)?;
    let e_star = limit.energy.value;
    let params = config.recovery_params(config.corrector()?, true);
    let rows: Vec<GammaRow> = ladder.par_iter().map(|&h| gamma_row(config, h, &limit.field, &params, e_star)).collect();

    let recovery_bound_holds = rows.iter().all(|r| r.film_energy <= r.recovery_energy);
    let first = rows[0].gap;
    let final_gap = rows[rows.len() - 1].gap;
    let gap_nonincreasing = final_gap <= first;
    let pass = recovery_bound_holds && gap_nonincreasing && final_gap <= config.gap_tolerance;
    Ok(GammaReport {
        ladder: ladder.to_vec(),
        rows,
        limit_energy: e_star,
        limit_status: limit.status,
        limit_iterations: limit.iterations,
        limit_drift: limit.energy.max_drift,
        limit_out_of_range: limit.energy.out_of_range,
        recovery_bound_holds,
        gap_nonincreasing,
        final_gap,
        gap_tolerance: config.gap_tolerance,
        pass,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub k: usize,
    pub h: f64,
    /// `max |u_k − u|` over film nodes.
    pub sup_dist: f64,
    pub energy: f64,
    pub limit_energy: f64,
}

/// Recovery fields around the datum's planar field (no lateral cut-off) for
/// each thickness, with their distance to it and their film energies.
pub fn run_recovery_study(config: &GammaConfig, table: &DensityTable, ladder: &[f64]) -> Result<Vec<RecoveryRow>> {
    let u = PlanarField::from_datum(config.manifold, &config.datum, [config.limit_elements + 1; 2])?;
    let limit_energy = eval_limit_energy(&u, table)?.value;
    let params = config.recovery_params(config.corrector()?, false);
    ladder
        .par_iter()
        .enumerate()
        .map(|(k, &h)| {
            let problem = config.film_problem(h, None)?;
            let rec = build_recovery_sequence(&u, &params, &problem)?;
            let mut sup_dist: f64 = 0.0;
            for idx in 0..rec.len() {
                let x = rec.grid.position(idx);
                sup_dist = sup_dist.max((rec.values[idx] - u.sample_projected(x[0], x[1])?).norm());
            }
            let energy = eval_film_energy(&rec, &problem)?;
            Ok(RecoveryRow { k: k + 1, h, sup_dist, energy, limit_energy })
        })
        .collect()
}

/// CSV with header `k,h_k,sup_dist,energy,limit_energy`.
pub fn recovery_csv(rows: &[RecoveryRow]) -> String {
    let mut s = String::from("k,h_k,sup_dist,energy,limit_energy\n");
    for r in rows {
        s.push_str(&format!("{},{},{:e},{:e},{:e}\n", r.k, r.h, r.sup_dist, r.energy, r.limit_energy));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::{build_density_table, TableSettings};
    use crate::integrand::CoefficientField;

    fn quadratic_table() -> DensityTable {
        let spec = IntegrandSpec::isotropic(CoefficientField::Constant { a0: 1.0 }, 2.0).unwrap();
        let sphere = Manifold::sphere(1.0).unwrap();
        let settings = TableSettings { m: 3, xi_max: 1.0, t_list: vec![1], n: 4, ..Default::default() };
        build_density_table(&spec, &sphere, &[Vector3::z()], &settings).unwrap()
    }

    #[test]
    fn convex_table_is_quasiconvex() {
        let t = quadratic_table();
        let xi = Matrix3x2::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let r = verify_quasiconvexity(&t, &Vector3::z(), &xi, 20, 7, 0.0).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.worst_violation < 0.0);
    }

    #[test]
    fn zero_test_function_has_zero_violation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let psi = random_test_function(&mut rng, 0.0);
        assert!(test_gradients(&psi).iter().all(|g| g.iter().flatten().all(|v| *v == 0.0)));
    }

    #[test]
    fn test_gradients_average_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let psi = random_test_function(&mut rng, 0.3);
        let g = test_gradients(&psi);
        for d in 0..2 {
            for c in 0..2 {
                let mean: f64 = g.iter().map(|q| q[d][c]).sum::<f64>() / g.len() as f64;
                assert!(mean.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn quadratic_envelope_with_unit_constant() {
        let t = quadratic_table();
        assert_eq!(t.envelope_constant(), 1.0);
        let r = verify_lipschitz_growth_against(&t, Some(&t));
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn quadratic_table_is_rank_one_convex() {
        let t = quadratic_table();
        let r = verify_rank_one(&t, &Vector3::z(), 50, 11, 1e-12).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn deterministic_reports() {
        let t = quadratic_table();
        let xi = Matrix3x2::zeros();
        let a = verify_quasiconvexity(&t, &Vector3::z(), &xi, 10, 5, 0.0).unwrap();
        let b = verify_quasiconvexity(&t, &Vector3::z(), &xi, 10, 5, 0.0).unwrap();
        assert_eq!(a, b);
    }
}
