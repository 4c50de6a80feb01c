use nalgebra::{Matrix3x2, Vector3};
use serde::{Deserialize, Serialize};

use super::Datum;
use crate::cell::DensityTable;
use crate::error::{Error, Result};
use crate::geometry::Manifold;
use crate::optim::{minimize, AxisKind, IterRecord, Objective, SolveStatus, SolverSettings, SpectralPreconditioner};

const FD_STEP: f64 = 1e-6;

/// Manifold-valued bilinear field on `ω = (−½, ½)²`, independent of `x₃`.
/// Node `(i, j)` has flat index `i·n₂ + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarField {
    pub nodes: [usize; 2],
    pub values: Vec<Vector3<f64>>,
    pub manifold: Manifold,
}

impl PlanarField {
    pub fn from_fn(manifold: Manifold, nodes: [usize; 2], f: impl Fn(f64, f64) -> Result<Vector3<f64>>) -> Result<Self> {
        if nodes[0] < 2 || nodes[1] < 2 {
            return Err(Error::InvalidInput(format!("planar grid needs at least 2×2 nodes, got {nodes:?}")));
        }
        let mut values = Vec::with_capacity(nodes[0] * nodes[1]);
        for i in 0..nodes[0] {
            for j in 0..nodes[1] {
                let [x, y] = position(nodes, i, j);
                values.push(f(x, y)?);
            }
        }
        Ok(PlanarField { nodes, values, manifold })
    }

    /// `Π(s₀ + ξ_α x_α)` at every node.
    pub fn from_datum(manifold: Manifold, datum: &Datum, nodes: [usize; 2]) -> Result<Self> {
        datum.validate(&manifold)?;
        let (s0, xi) = (datum.s0(), datum.xi());
        Self::from_fn(manifold, nodes, |x, y| manifold.nearest_point(&(s0 + xi * nalgebra::Vector2::new(x, y))))
    }

    pub fn constant(manifold: Manifold, s: Vector3<f64>, nodes: [usize; 2]) -> Result<Self> {
        Self::from_fn(manifold, nodes, |_, _| Ok(s))
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.nodes[1] + j
    }

    pub fn position(&self, i: usize, j: usize) -> [f64; 2] {
        position(self.nodes, i, j)
    }

    pub fn spacing(&self) -> [f64; 2] {
        [1.0 / (self.nodes[0] - 1) as f64, 1.0 / (self.nodes[1] - 1) as f64]
    }

    /// Bilinear interpolation at `(x, y) ∈ ω̄` (not projected).
    pub fn sample(&self, x: f64, y: f64) -> Vector3<f64> {
        let h = self.spacing();
        let locate = |v: f64, h: f64, n: usize| {
            let u = ((v + 0.5) / h).clamp(0.0, (n - 1) as f64);
            let i = (u.floor() as usize).min(n - 2);
            (i, u - i as f64)
        };
        let (i, a) = locate(x, h[0], self.nodes[0]);
        let (j, b) = locate(y, h[1], self.nodes[1]);
        self.values[self.index(i, j)] * ((1.0 - a) * (1.0 - b))
            + self.values[self.index(i + 1, j)] * (a * (1.0 - b))
            + self.values[self.index(i, j + 1)] * ((1.0 - a) * b)
            + self.values[self.index(i + 1, j + 1)] * (a * b)
    }

    /// Nearest-point projection of the bilinear interpolant.
    pub fn sample_projected(&self, x: f64, y: f64) -> Result<Vector3<f64>> {
        let v = self.sample(x, y);
        let on_node = self.values.iter().find(|n| **n == v);
        match on_node {
            Some(n) => Ok(*n),
            None => self.manifold.nearest_point(&v),
        }
    }

    pub fn manifold_residual(&self) -> f64 {
        self.values.iter().map(|v| self.manifold.residual(v)).fold(0.0, f64::max)
    }
}

fn position(nodes: [usize; 2], i: usize, j: usize) -> [f64; 2] {
    [-0.5 + i as f64 / (nodes[0] - 1) as f64, -0.5 + j as f64 / (nodes[1] - 1) as f64]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitEnergy {
    pub value: f64,
    /// Largest relative normal part of `∇_α u` removed before lookup.
    pub max_drift: f64,
    /// Quadrature points whose tangent coordinates fell outside the table.
    pub out_of_range: usize,
}

const GAUSS: [f64; 2] = [0.5 - 0.288_675_134_594_812_9, 0.5 + 0.288_675_134_594_812_9];

struct QuadPoint {
    corners: [usize; 4],
    shape: [f64; 4],
    dshape: [[f64; 2]; 4],
    weight: f64,
}

fn quad_points(nodes: [usize; 2]) -> Vec<QuadPoint> {
    let h = [1.0 / (nodes[0] - 1) as f64, 1.0 / (nodes[1] - 1) as f64];
    let mut out = Vec::new();
    for i in 0..nodes[0] - 1 {
        for j in 0..nodes[1] - 1 {
            for &a in &GAUSS {
                for &b in &GAUSS {
                    let corners = [i * nodes[1] + j, (i + 1) * nodes[1] + j, i * nodes[1] + j + 1, (i + 1) * nodes[1] + j + 1];
                    let shape = [(1.0 - a) * (1.0 - b), a * (1.0 - b), (1.0 - a) * b, a * b];
                    let dshape = [
                        [-(1.0 - b) / h[0], -(1.0 - a) / h[1]],
                        [(1.0 - b) / h[0], -a / h[1]],
                        [-b / h[0], (1.0 - a) / h[1]],
                        [b / h[0], a / h[1]],
                    ];
                    out.push(QuadPoint { corners, shape, dshape, weight: 0.25 * h[0] * h[1] });
                }
            }
        }
    }
    out
}

fn local(q: &QuadPoint, values: &[Vector3<f64>]) -> (Vector3<f64>, Matrix3x2<f64>) {
    let mut u = Vector3::zeros();
    let mut g = Matrix3x2::zeros();
    for a in 0..4 {
        let v = values[q.corners[a]];
        u += v * q.shape[a];
        g.column_mut(0).axpy(q.dshape[a][0], &v, 1.0);
        g.column_mut(1).axpy(q.dshape[a][1], &v, 1.0);
    }
    (u, g)
}

fn check_manifold(u: &PlanarField, table: &DensityTable) -> Result<()> {
    if u.manifold != table.manifold {
        return Err(Error::InvalidInput("planar field and table use different manifolds".into()));
    }
    Ok(())
}

/// `∫_ω T(u, ∇_α u)` with the table density, Gauss 2×2 per element.
pub fn eval_limit_energy(u: &PlanarField, table: &DensityTable) -> Result<LimitEnergy> {
    check_manifold(u, table)?;
    let mut value = 0.0;
    let mut max_drift: f64 = 0.0;
    let mut out_of_range = 0;
    for q in quad_points(u.nodes) {
        let (s, g) = local(&q, &u.values);
        let n = u.manifold.normal_at(&s)?;
        let normal_part = (n.transpose() * g).norm();
        let norm = g.norm();
        if norm > 0.0 {
            max_drift = max_drift.max(normal_part / norm);
        }
        let l = table.lookup(&s, &g)?;
        out_of_range += l.out_of_range as usize;
        value += q.weight * l.value;
    }
    Ok(LimitEnergy { value, max_drift, out_of_range })
}

struct LimitObjective<'a> {
    table: &'a DensityTable,
    template: PlanarField,
    fixed: bool,
    dof_of: Vec<Option<usize>>,
    rep: Vec<usize>,
    area: Vec<f64>,
    quad: Vec<QuadPoint>,
    precond: SpectralPreconditioner,
}

impl<'a> LimitObjective<'a> {
    fn new(table: &'a DensityTable, template: PlanarField, fixed: bool) -> Result<Self> {
        let [n1, n2] = template.nodes;
        let mut dof_of = vec![None; n1 * n2];
        let mut rep = Vec::new();
        let mut area = Vec::new();
        let h = template.spacing();
        for i in 0..n1 {
            for j in 0..n2 {
                let boundary = i == 0 || j == 0 || i + 1 == n1 || j + 1 == n2;
                if fixed && boundary {
                    continue;
                }
                dof_of[i * n2 + j] = Some(rep.len());
                rep.push(i * n2 + j);
                let wx = if i == 0 || i + 1 == n1 { 0.5 } else { 1.0 };
                let wy = if j == 0 || j + 1 == n2 { 0.5 } else { 1.0 };
                area.push(wx * wy * h[0] * h[1]);
            }
        }
        let kind = if fixed { AxisKind::Dirichlet } else { AxisKind::Natural };
        let scale = 2.0 * table.spec.coeff.mean();
        let precond = SpectralPreconditioner::new([n1, n2, 1], [h[0], h[1], 1.0], [kind, kind, AxisKind::Natural], [1.0; 3], scale)?;
        Ok(LimitObjective { table, quad: quad_points(template.nodes), template, fixed, dof_of, rep, area, precond })
    }

    fn values(&self, x: &[f64]) -> Vec<Vector3<f64>> {
        self.template
            .values
            .iter()
            .enumerate()
            .map(|(n, v)| match self.dof_of[n] {
                Some(d) => Vector3::new(x[3 * d], x[3 * d + 1], x[3 * d + 2]),
                None => *v,
            })
            .collect()
    }

    fn unknowns(&self, f: &PlanarField) -> Vec<f64> {
        self.rep.iter().flat_map(|&n| f.values[n].iter().copied().collect::<Vec<_>>()).collect()
    }

    fn project(&self, x: &[f64], v: &mut [f64]) -> Result<()> {
        for d in 0..self.rep.len() {
            let s = Vector3::new(x[3 * d], x[3 * d + 1], x[3 * d + 2]);
            let n = self.template.manifold.normal_at(&s)?;
            let w = Vector3::new(v[3 * d], v[3 * d + 1], v[3 * d + 2]);
            let t = w - n * n.dot(&w);
            v[3 * d..3 * d + 3].copy_from_slice(t.as_slice());
        }
        Ok(())
    }

    fn point_values(&self, values: &[Vector3<f64>]) -> Result<Vec<f64>> {
        self.quad
            .iter()
            .map(|q| {
                let (s, g) = local(q, values);
                Ok(self.table.lookup(&s, &g)?.value)
            })
            .collect()
    }
}

impl Objective for LimitObjective<'_> {
    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let values = self.values(x);
        let mut e = 0.0;
        let mut gn = vec![Vector3::zeros(); values.len()];
        for q in &self.quad {
            let (s, g) = local(q, &values);
            let k = self.table.nearest_base(&s);
            let l = self.table.lookup_at(k, &s, &g)?;
            e += q.weight * l.value;
            let mut ds = Vector3::zeros();
            for r in 0..3 {
                let mut sp = s;
                sp[r] += FD_STEP;
                let mut sm = s;
                sm[r] -= FD_STEP;
                ds[r] = (self.table.lookup_at(k, &sp, &g)?.value - self.table.lookup_at(k, &sm, &g)?.value) / (2.0 * FD_STEP);
            }
            for a in 0..4 {
                let contrib = l.grad.column(0) * q.dshape[a][0] + l.grad.column(1) * q.dshape[a][1] + ds * q.shape[a];
                gn[q.corners[a]] += contrib * q.weight;
            }
        }
        let mut out = vec![0.0; 3 * self.rep.len()];
        for (n, g) in gn.iter().enumerate() {
            if let Some(d) = self.dof_of[n] {
                out[3 * d..3 * d + 3].copy_from_slice(g.as_slice());
            }
        }
        self.project(x, &mut out)?;
        Ok((e, out))
    }

    fn delta(&self, x0: &[f64], x1: &[f64]) -> Result<f64> {
        let a = self.point_values(&self.values(x0))?;
        let b = self.point_values(&self.values(x1))?;
        Ok(self.quad.iter().zip(a.iter().zip(&b)).map(|(q, (u, v))| q.weight * (v - u)).sum())
    }

    fn retract(&self, x: &[f64], d: &[f64], step: f64) -> Result<Vec<f64>> {
        let mut y: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + step * b).collect();
        for k in 0..self.rep.len() {
            let p = self.template.manifold.nearest_point(&Vector3::new(y[3 * k], y[3 * k + 1], y[3 * k + 2]))?;
            y[3 * k..3 * k + 3].copy_from_slice(p.as_slice());
        }
        Ok(y)
    }

    fn transport(&self, x: &[f64], v: &mut [f64]) -> Result<()> {
        self.project(x, v)
    }

    fn precondition(&self, x: &[f64], g: &[f64]) -> Result<Vec<f64>> {
        let mut r = self.precond.apply(g, 3);
        self.project(x, &mut r)?;
        Ok(r)
    }

    fn residual(&self, g: &[f64]) -> f64 {
        (0..self.rep.len())
            .map(|d| (g[3 * d].powi(2) + g[3 * d + 1].powi(2) + g[3 * d + 2].powi(2)).sqrt() / self.area[d])
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitSolution {
    pub field: PlanarField,
    pub energy: LimitEnergy,
    pub residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    pub log: Vec<IterRecord>,
}

/// Minimizes the table-based limit energy over planar manifold-valued fields
/// with the lateral datum, on a grid of `elements × elements`.
pub fn minimize_limit(table: &DensityTable, datum: &Datum, elements: usize, settings: &SolverSettings) -> Result<LimitSolution> {
    let start = PlanarField::from_datum(table.manifold, datum, [elements + 1, elements + 1])?;
    let obj = LimitObjective::new(table, start.clone(), true)?;
    debug_assert!(obj.fixed);
    let out = minimize(&obj, obj.unknowns(&start), settings)?;
    let field = PlanarField { values: obj.values(&out.x), ..start };
    let energy = eval_limit_energy(&field, table)?;
    Ok(LimitSolution { field, energy, residual: out.residual, iterations: out.iterations, status: out.status, log: out.log })
}


#[cfg(test)]
mod gradient_tests {
    use super::*;
    use crate::cell::{build_density_table, TableSettings};
    use crate::integrand::{CoefficientField, IntegrandSpec};

    #[test]
    fn limit_gradient_matches_differences_on_sphere() {
        let spec = IntegrandSpec::isotropic(CoefficientField::Laminate { a1: 1.0, a2: 4.0, theta: 0.5, axis: 1 }, 2.0).unwrap();
        let sphere = Manifold::sphere(1.0).unwrap();
        let settings = TableSettings { m: 5, xi_max: 0.4, t_list: vec![1], n: 4, ..Default::default() };
        let t = build_density_table(&spec, &sphere, &[Vector3::z()], &settings).unwrap();
        let d = Datum { s0: [0.0, 0.0, 1.0], xi: [[0.13, 0.02, 0.0], [0.01, 0.07, 0.0]] };
        let start = PlanarField::from_datum(sphere, &d, [5, 5]).unwrap();
        let obj = LimitObjective::new(&t, start.clone(), true).unwrap();
        let x = obj.unknowns(&start);
        let (_, g) = obj.value_grad(&x).unwrap();
        let dir: Vec<f64> = (0..x.len()).map(|i| ((i * 37 % 11) as f64 - 5.0) * 1e-2).collect();
        let mut dir_t = dir.clone();
        obj.project(&x, &mut dir_t).unwrap();
        let e = |s: f64| {
            let y: Vec<f64> = x.iter().zip(&dir_t).map(|(a, b)| a + s * b).collect();
            obj.value_grad(&y).unwrap().0
        };
        let step = 1e-6;
        let fd = (e(step) - e(-step)) / (2.0 * step);
        let an: f64 = g.iter().zip(&dir_t).map(|(a, b)| a * b).sum();
        assert!((fd - an).abs() < 1e-5 * an.abs().max(1e-8), "fd {fd} analytic {an}");
    }
}
