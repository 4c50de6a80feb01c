use nalgebra::{Matrix2x3, Matrix3, Matrix3x2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{estimate_hom_density, CellBoundary, CellProblem, Formulation};
use crate::error::{Error, Result};
use crate::geometry::{minimal_rotation, Manifold, TangentFrame};
use crate::integrand::IntegrandSpec;
use crate::optim::SolverSettings;

/// Resolution and solver settings used to fill a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSettings {
    pub xi_max: f64,
    /// Grid points per tangent-coordinate axis.
    pub m: usize,
    pub t_list: Vec<usize>,
    /// Cell elements per unit length.
    pub n: usize,
    pub nz: usize,
    pub eps: f64,
    pub quad_order: usize,
    pub boundary: CellBoundary,
    pub solver: SolverSettings,
}

impl Default for TableSettings {
    fn default() -> Self {
        TableSettings {
            xi_max: 1.0,
            m: 5,
            t_list: vec![1, 2, 4],
            n: 8,
            nz: 2,
            eps: 1e-6,
            quad_order: 2,
            boundary: CellBoundary::Periodic,
            solver: SolverSettings::default(),
        }
    }
}

/// Homogenized density sampled on `[−ξmax, ξmax]⁴` in the tangent
/// coordinates `(c₀, c₁, c₂, c₃)` of `ξ_α = [c₀b₁ + c₁b₂ | c₂b₁ + c₃b₂]` at
/// each base point. Queries use the nearest base point and multilinear
/// interpolation; a tangent matrix at another point `s` is carried to the base
/// point's plane by the minimal rotation between the normals.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityTable {
    pub manifold: Manifold,
    pub spec: IntegrandSpec,
    pub base_points: Vec<Vector3<f64>>,
    pub frames: Vec<TangentFrame>,
    pub settings: TableSettings,
    /// `values[k][e]` for base point `k` and flat entry `e`.
    pub values: Vec<Vec<f64>>,
    pub converged: Vec<Vec<bool>>,
}

/// Result of a table query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lookup {
    pub value: f64,
    /// Derivative with respect to the in-plane gradient (ambient columns).
    pub grad: Matrix3x2<f64>,
    pub base: usize,
    pub out_of_range: bool,
}

impl DensityTable {
    pub fn entries(&self) -> usize {
        self.settings.m.pow(4)
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.settings.xi_max / (self.settings.m - 1) as f64
    }

    pub fn digits(&self, e: usize) -> [usize; 4] {
        let m = self.settings.m;
        [e / (m * m * m), (e / (m * m)) % m, (e / m) % m, e % m]
    }

    pub fn coords(&self, e: usize) -> [f64; 4] {
        let h = self.spacing();
        self.digits(e).map(|i| -self.settings.xi_max + i as f64 * h)
    }

    /// Tangent matrix of entry `e` at base point `k`.
    pub fn xi_at(&self, k: usize, e: usize) -> Matrix3x2<f64> {
        xi_from_coords(&self.frames[k], self.coords(e))
    }

    pub fn nearest_base(&self, s: &Vector3<f64>) -> usize {
        let mut best = 0;
        let mut dist = f64::INFINITY;
        for (k, b) in self.base_points.iter().enumerate() {
            let d = (b - s).norm_squared();
            if d < dist {
                dist = d;
                best = k;
            }
        }
        best
    }

    /// Linear map from an ambient tangent vector at `s` to coordinates at base `k`.
    pub fn coordinate_map(&self, k: usize, s: &Vector3<f64>) -> Result<Matrix2x3<f64>> {
        let n = self.manifold.normal_at(s)?;
        let frame = &self.frames[k];
        let proj = Matrix3::identity() - n * n.transpose();
        let rot = minimal_rotation(&n, &frame.normal);
        let b = frame.basis_matrix();
        Ok(b.transpose() * rot * proj)
    }

    /// Multilinear interpolation in tangent coordinates at base `k`, with the
    /// coordinate gradient. Coordinates outside the range are clamped and flagged.
    pub fn interpolate(&self, k: usize, c: [f64; 4]) -> (f64, [f64; 4], bool) {
        let m = self.settings.m;
        let h = self.spacing();
        let xmax = self.settings.xi_max;
        let mut out = false;
        let mut cell = [0usize; 4];
        let mut frac = [0f64; 4];
        for d in 0..4 {
            let mut u = (c[d] + xmax) / h;
            if u < -1e-9 || u > (m - 1) as f64 + 1e-9 {
                out = true;
            }
            u = u.clamp(0.0, (m - 1) as f64);
            let r = u.round();
            if (u - r).abs() < 1e-9 {
                u = r;
            }
            let i = (u.floor() as usize).min(m - 2);
            cell[d] = i;
            frac[d] = u - i as f64;
        }
        let vals = &self.values[k];
        let mut value = 0.0;
        let mut grad = [0.0; 4];
        for corner in 0..16usize {
            let bits = [(corner >> 3) & 1, (corner >> 2) & 1, (corner >> 1) & 1, corner & 1];
            let w: [f64; 4] = std::array::from_fn(|d| if bits[d] == 1 { frac[d] } else { 1.0 - frac[d] });
            let weight = w[0] * w[1] * w[2] * w[3];
            let idx = (0..4).fold(0, |acc, d| acc * m + cell[d] + bits[d]);
            if weight != 0.0 {
                value += weight * vals[idx];
            }
            for d in 0..4 {
                let dw = if bits[d] == 1 { 1.0 } else { -1.0 } / h;
                let others: f64 = (0..4).filter(|&o| o != d).map(|o| w[o]).product();
                grad[d] += dw * others * vals[idx];
            }
        }
        (value, grad, out)
    }

    /// Density at `(s, ξ_α)`; `s` need only be close to the manifold.
    pub fn lookup(&self, s: &Vector3<f64>, xi: &Matrix3x2<f64>) -> Result<Lookup> {
        let k = self.nearest_base(s);
        self.lookup_at(k, s, xi)
    }

    /// Density at `(s, ξ_α)` read from base point `k`.
    pub fn lookup_at(&self, k: usize, s: &Vector3<f64>, xi: &Matrix3x2<f64>) -> Result<Lookup> {
        let l = self.coordinate_map(k, s)?;
        let c1 = l * xi.column(0);
        let c2 = l * xi.column(1);
        let (value, g, out) = self.interpolate(k, [c1[0], c1[1], c2[0], c2[1]]);
        let col1 = l.transpose() * nalgebra::Vector2::new(g[0], g[1]);
        let col2 = l.transpose() * nalgebra::Vector2::new(g[2], g[3]);
        Ok(Lookup { value, grad: Matrix3x2::from_columns(&[col1, col2]), base: k, out_of_range: out })
    }

    /// `C` with `|ξ|ᵖ/C ≤ value ≤ C(1 + |ξ|ᵖ)` certified for the exact homogenized density.
    pub fn envelope_constant(&self) -> f64 {
        let (alpha, beta) = self.spec.growth_constants();
        beta.max(1.0 / alpha)
    }

    /// CSV with header `s_index,xi0,xi1,xi2,xi3,value,converged,t_max,n`.
    pub fn to_csv(&self) -> String {
        let t_max = self.settings.t_list.last().copied().unwrap_or(0);
        let mut s = String::from("s_index,xi0,xi1,xi2,xi3,value,converged,t_max,n\n");
        for k in 0..self.base_points.len() {
            for e in 0..self.entries() {
                let c = self.coords(e);
                s.push_str(&format!(
                    "{k},{:e},{:e},{:e},{:e},{:e},{},{t_max},{}\n",
                    c[0], c[1], c[2], c[3], self.values[k][e], self.converged[k][e], self.settings.n
                ));
            }
        }
        s
    }

    /// Metadata needed to restore a table from its CSV.
    pub fn meta(&self) -> TableMeta {
        TableMeta {
            manifold: self.manifold,
            spec: self.spec.clone(),
            base_points: self.base_points.iter().map(|p| [p.x, p.y, p.z]).collect(),
            settings: self.settings.clone(),
        }
    }

    pub fn from_csv(meta: &TableMeta, csv: &str) -> Result<Self> {
        let mut table = empty_table(meta)?;
        let mut lines = csv.lines();
        let header = lines.next().unwrap_or_default();
        if header.trim() != "s_index,xi0,xi1,xi2,xi3,value,converged,t_max,n" {
            return Err(Error::Parse(format!("unexpected table header {header:?}")));
        }
        let mut seen = vec![vec![false; table.entries()]; table.base_points.len()];
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(Error::Parse(format!("table row has {} fields: {line:?}", f.len())));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{s:?}: {e}")));
            let k: usize = f[0].trim().parse().map_err(|e| Error::Parse(format!("{:?}: {e}", f[0])))?;
            if k >= table.base_points.len() {
                return Err(Error::Parse(format!("base index {k} out of range")));
            }
            let c = [num(f[1])?, num(f[2])?, num(f[3])?, num(f[4])?];
            let h = table.spacing();
            let mut e = 0;
            for d in 0..4 {
                let i = ((c[d] + table.settings.xi_max) / h).round();
                if i < 0.0 || i as usize >= table.settings.m {
                    return Err(Error::Parse(format!("coordinate {} off the table grid", c[d])));
                }
                e = e * table.settings.m + i as usize;
            }
            table.values[k][e] = num(f[5])?;
            table.converged[k][e] = f[6].trim() == "true";
            seen[k][e] = true;
        }
        if seen.iter().flatten().any(|s| !s) {
            return Err(Error::Parse("table CSV is missing entries".into()));
        }
        Ok(table)
    }

    /// The same table recomputed with twice the cell resolution.
    pub fn rebuild_refined(&self) -> Result<DensityTable> {
        let settings = TableSettings { n: 2 * self.settings.n, ..self.settings.clone() };
        build_density_table(&self.spec, &self.manifold, &self.base_points, &settings)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableMeta {
    pub manifold: Manifold,
    pub spec: IntegrandSpec,
    pub base_points: Vec<[f64; 3]>,
    pub settings: TableSettings,
}

fn xi_from_coords(frame: &TangentFrame, c: [f64; 4]) -> Matrix3x2<f64> {
    Matrix3x2::from_columns(&[frame.from_coords([c[0], c[1]]), frame.from_coords([c[2], c[3]])])
}

fn empty_table(meta: &TableMeta) -> Result<DensityTable> {
    let s = &meta.settings;
    if s.m < 3 {
        return Err(Error::InvalidInput(format!("table needs m ≥ 3, got {}", s.m)));
    }
    if !(s.xi_max > 0.0 && s.xi_max.is_finite()) {
        return Err(Error::InvalidInput(format!("xi_max must be > 0, got {}", s.xi_max)));
    }
    if meta.base_points.is_empty() {
        return Err(Error::InvalidInput("table needs at least one base point".into()));
    }
    let base_points: Vec<Vector3<f64>> = meta.base_points.iter().map(|p| Vector3::from(*p)).collect();
    let frames = base_points.iter().map(|p| meta.manifold.tangent_frame(p)).collect::<Result<Vec<_>>>()?;
    let entries = s.m.pow(4);
    Ok(DensityTable {
        manifold: meta.manifold,
        spec: meta.spec.clone(),
        frames,
        values: vec![vec![0.0; entries]; base_points.len()],
        converged: vec![vec![false; entries]; base_points.len()],
        base_points,
        settings: s.clone(),
    })
}

/// Fills a table with penalized-cell estimates at every grid point.
///
/// The catalogue densities are even in `ξ`, so each pair of entries related
/// by `ξ_α ↦ −ξ_α` is computed once.
pub fn build_density_table(
    spec: &IntegrandSpec,
    manifold: &Manifold,
    base_points: &[Vector3<f64>],
    settings: &TableSettings,
) -> Result<DensityTable> {
    let meta = TableMeta {
        manifold: *manifold,
        spec: spec.clone(),
        base_points: base_points.iter().map(|p| [p.x, p.y, p.z]).collect(),
        settings: settings.clone(),
    };
    let mut table = empty_table(&meta)?;
    let entries = table.entries();
    let mirror = |e: usize| entries - 1 - e;
    let tasks: Vec<(usize, usize)> = (0..base_points.len())
        .flat_map(|k| (0..entries).filter(move |&e| e <= mirror(e)).map(move |e| (k, e)))
        .collect();
    let results: Vec<Result<(f64, bool)>> = tasks
        .par_iter()
        .map(|&(k, e)| {
            let problem = CellProblem {
                spec: spec.clone(),
                manifold: *manifold,
                s: table.base_points[k],
                xi: table.xi_at(k, e),
                t: 1,
                formulation: Formulation::Penalized,
                n: settings.n,
                nz: settings.nz,
                boundary: settings.boundary,
                eps: settings.eps,
                quad_order: settings.quad_order,
                settings: settings.solver,
            };
            let est = estimate_hom_density(&problem, &settings.t_list)?;
            Ok((est.estimate, est.converged && est.solves_converged))
        })
        .collect();
    for (&(k, e), r) in tasks.iter().zip(results) {
        let (v, ok) = r?;
        for idx in [e, mirror(e)] {
            table.values[k][idx] = v;
            table.converged[k][idx] = ok;
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrand::CoefficientField;

    fn quadratic_table() -> DensityTable {
        let spec = IntegrandSpec::isotropic(CoefficientField::Constant { a0: 1.0 }, 2.0).unwrap();
        let settings = TableSettings { m: 3, t_list: vec![1], n: 4, ..Default::default() };
        build_density_table(&spec, &Manifold::sphere(1.0).unwrap(), &[Vector3::z()], &settings).unwrap()
    }

    #[test]
    fn quadratic_entries_are_squared_norms() {
        let t = quadratic_table();
        for e in 0..t.entries() {
            let c = t.coords(e);
            let exact: f64 = c.iter().map(|v| v * v).sum();
            assert!((t.values[0][e] - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn lookup_at_grid_point_is_exact() {
        let t = quadratic_table();
        for e in 0..t.entries() {
            let (v, _, out) = t.interpolate(0, t.coords(e));
            assert_eq!(v, t.values[0][e]);
            assert!(!out);
            let l = t.lookup(&Vector3::z(), &t.xi_at(0, e)).unwrap();
            assert!((l.value - t.values[0][e]).abs() < 1e-14);
        }
    }

    #[test]
    fn midpoint_is_neighbour_average() {
        let t = quadratic_table();
        let (v, _, _) = t.interpolate(0, [0.5, 0.0, 0.0, 0.0]);
        assert!((v - 0.5 * (t.values[0][40] + t.values[0][67])).abs() < 1e-14);
    }

    #[test]
    fn out_of_range_flagged() {
        let t = quadratic_table();
        assert!(t.interpolate(0, [1.5, 0.0, 0.0, 0.0]).2);
    }

    #[test]
    fn csv_roundtrip() {
        let t = quadratic_table();
        let back = DensityTable::from_csv(&t.meta(), &t.to_csv()).unwrap();
        assert_eq!(back.values, t.values);
        assert_eq!(back.converged, t.converged);
    }

    #[test]
    fn lookup_gradient_matches_differences() {
        let t = quadratic_table();
        let s = Vector3::new(0.1, -0.05, 1.0).normalize();
        let frame = Manifold::sphere(1.0).unwrap().tangent_frame(&s).unwrap();
        let xi = Matrix3x2::from_columns(&[frame.from_coords([0.3, -0.2]), frame.from_coords([0.1, 0.45])]);
        let l = t.lookup(&s, &xi).unwrap();
        let h = 1e-6;
        for r in 0..3 {
            for c in 0..2 {
                let mut p = xi;
                p[(r, c)] += h;
                let mut m = xi;
                m[(r, c)] -= h;
                let fd = (t.lookup(&s, &p).unwrap().value - t.lookup(&s, &m).unwrap().value) / (2.0 * h);
                assert!((fd - l.grad[(r, c)]).abs() < 1e-6, "{r} {c}");
            }
        }
    }
}
