//! Piecewise-trilinear fields on uniform tensor grids over slabs of unit
//! height, energy assembly with an anisotropically scaled gradient, and
//! dyadic refinement.

mod assembly;
mod io;

pub use assembly::{assemble_energy, assemble_gradient, Assembler, DensityKind};
pub use io::{parse_field_text, FieldText};

use nalgebra::{Matrix3x2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{Manifold, TangentFrame};

/// Residual allowed for tangent-subspace nodal values.
pub const TANGENT_TOL: f64 = 1e-12;
/// Residual allowed for manifold-valued nodal values.
pub const MANIFOLD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SlabDomain {
    /// `(−t/2, t/2)² × (−½, ½)`.
    Cell { t: usize },
    /// `(−½, ½)³`, the rescaled film over the unit square with thickness `h`.
    Film { h: f64 },
}

impl SlabDomain {
    pub fn origin(&self) -> [f64; 3] {
        match *self {
            SlabDomain::Cell { t } => [-0.5 * t as f64, -0.5 * t as f64, -0.5],
            SlabDomain::Film { .. } => [-0.5, -0.5, -0.5],
        }
    }

    pub fn lengths(&self) -> [f64; 3] {
        match *self {
            SlabDomain::Cell { t } => [t as f64, t as f64, 1.0],
            SlabDomain::Film { .. } => [1.0, 1.0, 1.0],
        }
    }

    /// Factor applied to `x_α` before the coefficient lookup.
    pub fn coefficient_scale(&self) -> f64 {
        match *self {
            SlabDomain::Cell { .. } => 1.0,
            SlabDomain::Film { h } => 1.0 / h,
        }
    }

    /// Per-direction derivative scaling of the natural gradient.
    pub fn gradient_scale(&self) -> [f64; 3] {
        match *self {
            SlabDomain::Cell { .. } => [1.0, 1.0, 1.0],
            SlabDomain::Film { h } => [1.0, 1.0, 1.0 / h],
        }
    }

    /// Energy normalization: `1/t²` on cells, 1 on films.
    pub fn normalization(&self) -> f64 {
        match *self {
            SlabDomain::Cell { t } => 1.0 / (t * t) as f64,
            SlabDomain::Film { .. } => 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            SlabDomain::Cell { t } if t == 0 => Err(Error::InvalidInput("cell size t must be ≥ 1".into())),
            SlabDomain::Film { h } if !(h > 0.0 && h <= 1.0) => {
                Err(Error::InvalidInput(format!("film thickness must lie in (0,1], got {h}")))
            }
            _ => Ok(()),
        }
    }
}

/// Node layout of a uniform tensor grid. Node `(i, j, k)` has flat index
/// `(i·n₂ + j)·n₃ + k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub nodes: [usize; 3],
    pub origin: [f64; 3],
    pub lengths: [f64; 3],
}

impl Grid {
    pub fn new(domain: &SlabDomain, nodes: [usize; 3]) -> Result<Self> {
        domain.validate()?;
        if nodes[0] < 3 || nodes[1] < 3 || nodes[2] < 2 {
            return Err(Error::InvalidInput(format!("grid must have at least (3,3,2) nodes, got {nodes:?}")));
        }
        Ok(Grid { nodes, origin: domain.origin(), lengths: domain.lengths() })
    }

    pub fn len(&self) -> usize {
        self.nodes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> [f64; 3] {
        [0, 1, 2].map(|d| self.lengths[d] / (self.nodes[d] - 1) as f64)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.nodes[1] + j) * self.nodes[2] + k
    }

    #[inline]
    pub fn ijk(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.nodes[2];
        let ij = idx / self.nodes[2];
        [ij / self.nodes[1], ij % self.nodes[1], k]
    }

    pub fn position(&self, idx: usize) -> Vector3<f64> {
        let ijk = self.ijk(idx);
        let h = self.spacing();
        Vector3::new(
            self.origin[0] + ijk[0] as f64 * h[0],
            self.origin[1] + ijk[1] as f64 * h[1],
            self.origin[2] + ijk[2] as f64 * h[2],
        )
    }

    pub fn is_lateral(&self, idx: usize) -> bool {
        let [i, j, _] = self.ijk(idx);
        i == 0 || j == 0 || i + 1 == self.nodes[0] || j + 1 == self.nodes[1]
    }

    /// Lumped nodal volume (half weights on faces).
    pub fn nodal_volume(&self, idx: usize) -> f64 {
        let ijk = self.ijk(idx);
        let h = self.spacing();
        (0..3)
            .map(|d| if ijk[d] == 0 || ijk[d] + 1 == self.nodes[d] { 0.5 * h[d] } else { h[d] })
            .product()
    }

    pub fn elements(&self) -> [usize; 3] {
        [self.nodes[0] - 1, self.nodes[1] - 1, self.nodes[2] - 1]
    }

    /// Grid with `2N − 1` nodes per axis over the same box.
    pub fn refined(&self) -> Grid {
        Grid { nodes: self.nodes.map(|n| 2 * n - 1), ..*self }
    }
}

/// Tensor Gauss rule on the reference cube `[0,1]³`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 3]>,
    /// Reference weights; they sum to 1.
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn gauss(order: usize) -> Result<Self> {
        let (pts, wts): (Vec<f64>, Vec<f64>) = match order {
            1 => (vec![0.5], vec![1.0]),
            2 => {
                let d = 0.5 / 3f64.sqrt();
                (vec![0.5 - d, 0.5 + d], vec![0.5, 0.5])
            }
            _ => return Err(Error::InvalidInput(format!("quadrature order must be 1 or 2, got {order}"))),
        };
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (a, wa) in pts.iter().zip(&wts) {
            for (b, wb) in pts.iter().zip(&wts) {
                for (c, wc) in pts.iter().zip(&wts) {
                    points.push([*a, *b, *c]);
                    weights.push(wa * wb * wc);
                }
            }
        }
        Ok(QuadratureRule { points, weights })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Weights scaled to an element of the given spacing; they sum to its volume.
    pub fn physical_weights(&self, spacing: [f64; 3]) -> Vec<f64> {
        let vol = spacing[0] * spacing[1] * spacing[2];
        self.weights.iter().map(|w| w * vol).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    Free,
    TangentSubspace(TangentFrame),
    ManifoldValued(Manifold),
}

/// Condition on the lateral faces `∂ω × (−½, ½)`; top and bottom are always natural.
#[derive(Debug, Clone, PartialEq)]
pub enum LateralBc {
    None,
    Zero,
    /// Boundary values `ξ_α x_α`.
    Affine(Matrix3x2<f64>),
    /// Boundary values `Π(s₀ + ξ_α x_α)`.
    Projected { s0: Vector3<f64>, xi: Matrix3x2<f64> },
    /// Values on opposite lateral faces are tied.
    Periodic,
}

impl LateralBc {
    pub fn is_dirichlet(&self) -> bool {
        matches!(self, LateralBc::Zero | LateralBc::Affine(_) | LateralBc::Projected { .. })
    }

    fn boundary_value(&self, x: &Vector3<f64>, constraint: &Constraint) -> Result<Option<Vector3<f64>>> {
        let xa = nalgebra::Vector2::new(x.x, x.y);
        Ok(match self {
            LateralBc::Zero => Some(Vector3::zeros()),
            LateralBc::Affine(xi) => Some(xi * xa),
            LateralBc::Projected { s0, xi } => match constraint {
                Constraint::ManifoldValued(m) => Some(m.nearest_point(&(s0 + xi * xa))?),
                _ => unreachable!("checked by compatibility"),
            },
            LateralBc::None | LateralBc::Periodic => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Zero,
    Affine(Matrix3x2<f64>),
    ProjectedAffine { s0: Vector3<f64>, xi: Matrix3x2<f64> },
    Nodal(Vec<Vector3<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteField {
    pub grid: Grid,
    pub values: Vec<Vector3<f64>>,
    pub domain: SlabDomain,
    pub constraint: Constraint,
    pub lateral_bc: LateralBc,
}

fn check_compatible(constraint: &Constraint, bc: &LateralBc) -> Result<()> {
    match (constraint, bc) {
        (Constraint::TangentSubspace(frame), LateralBc::Affine(xi)) => {
            let r = frame.normal_residual(xi);
            if r > 1e-10 {
                return Err(Error::IncompatibleBc(format!(
                    "affine datum has normal component {r:e} outside the tangent subspace"
                )));
            }
        }
        (Constraint::ManifoldValued(m), LateralBc::Zero) => {
            if m.residual(&Vector3::zeros()) > MANIFOLD_TOL {
                return Err(Error::IncompatibleBc("zero datum is not on the manifold".into()));
            }
        }
        (Constraint::ManifoldValued(_), LateralBc::Affine(_)) => {
            return Err(Error::IncompatibleBc(
                "manifold-valued fields take a projected affine datum, not a plain affine one".into(),
            ));
        }
        (Constraint::ManifoldValued(m), LateralBc::Projected { s0, .. }) => {
            if m.residual(s0) > MANIFOLD_TOL {
                return Err(Error::IncompatibleBc("datum base point is not on the manifold".into()));
            }
        }
        (_, LateralBc::Projected { .. }) => {
            return Err(Error::IncompatibleBc("projected datum needs a manifold-valued field".into()));
        }
        _ => {}
    }
    Ok(())
}

impl DiscreteField {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Whether node `idx` carries a prescribed value.
    pub fn is_fixed(&self, idx: usize) -> bool {
        self.lateral_bc.is_dirichlet() && self.grid.is_lateral(idx)
    }

    /// Brings values back onto the constraint and the lateral condition.
    pub fn enforce(&mut self) -> Result<()> {
        for idx in 0..self.values.len() {
            let v = self.values[idx];
            self.values[idx] = match &self.constraint {
                Constraint::Free => v,
                Constraint::TangentSubspace(frame) => frame.project(&v),
                Constraint::ManifoldValued(m) => m.nearest_point(&v)?,
            };
            if self.grid.is_lateral(idx) {
                if let Some(b) = self.lateral_bc.boundary_value(&self.grid.position(idx), &self.constraint)? {
                    self.values[idx] = b;
                }
            }
        }
        if self.lateral_bc == LateralBc::Periodic {
            let [n1, n2, n3] = self.grid.nodes;
            for i in 0..n1 {
                for k in 0..n3 {
                    self.values[self.grid.index(i, n2 - 1, k)] = self.values[self.grid.index(i, 0, k)];
                }
            }
            for j in 0..n2 {
                for k in 0..n3 {
                    let jj = if j + 1 == n2 { 0 } else { j };
                    self.values[self.grid.index(n1 - 1, j, k)] = self.values[self.grid.index(0, jj, k)];
                }
            }
        }
        Ok(())
    }

    /// Largest violation of the constraint over all nodes.
    pub fn constraint_residual(&self) -> f64 {
        self.values
            .iter()
            .map(|v| match &self.constraint {
                Constraint::Free => 0.0,
                Constraint::TangentSubspace(frame) => v.dot(&frame.normal).abs(),
                Constraint::ManifoldValued(m) => m.residual(v),
            })
            .fold(0.0, f64::max)
    }

    /// Largest deviation from the lateral datum over the lateral nodes.
    pub fn bc_residual(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for idx in 0..self.values.len() {
            if !self.grid.is_lateral(idx) {
                continue;
            }
            if let Some(b) = self.lateral_bc.boundary_value(&self.grid.position(idx), &self.constraint)? {
                worst = worst.max((self.values[idx] - b).amax());
            }
        }
        Ok(worst)
    }

    /// Field with the same layout and constraint but new nodal values.
    pub fn with_values(&self, values: Vec<Vector3<f64>>) -> DiscreteField {
        DiscreteField { values, ..self.clone() }
    }

    pub fn sup_distance(&self, other: &DiscreteField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }
}

/// Builds a field on `domain` satisfying the constraint and lateral condition.
pub fn seed_field(
    domain: SlabDomain,
    nodes: [usize; 3],
    constraint: Constraint,
    lateral_bc: LateralBc,
    init: Init,
) -> Result<DiscreteField> {
    let grid = Grid::new(&domain, nodes)?;
    check_compatible(&constraint, &lateral_bc)?;
    let values = match init {
        Init::Zero => vec![Vector3::zeros(); grid.len()],
        Init::Affine(xi) => (0..grid.len())
            .map(|idx| {
                let x = grid.position(idx);
                xi * nalgebra::Vector2::new(x.x, x.y)
            })
            .collect(),
        Init::ProjectedAffine { s0, xi } => {
            let m = match &constraint {
                Constraint::ManifoldValued(m) => *m,
                _ => return Err(Error::IncompatibleBc("projected initial data needs a manifold-valued field".into())),
            };
            (0..grid.len())
                .map(|idx| {
                    let x = grid.position(idx);
                    m.nearest_point(&(s0 + xi * nalgebra::Vector2::new(x.x, x.y)))
                })
                .collect::<Result<_>>()?
        }
        Init::Nodal(v) => {
            if v.len() != grid.len() {
                return Err(Error::InvalidInput(format!("{} nodal values for {} nodes", v.len(), grid.len())));
            }
            v
        }
    };
    let mut field = DiscreteField { grid, values, domain, constraint, lateral_bc };
    field.enforce()?;
    Ok(field)
}

/// Trilinear interpolation onto the grid with `2N − 1` nodes per axis; the
/// constraint and lateral condition are re-applied afterwards.
pub fn refine_field(field: &DiscreteField) -> Result<DiscreteField> {
    let coarse = &field.grid;
    let fine = coarse.refined();
    let [m1, m2, m3] = fine.nodes;
    let mut values = Vec::with_capacity(fine.len());
    for i in 0..m1 {
        for j in 0..m2 {
            for k in 0..m3 {
                let axes = [i, j, k].map(|f| (f / 2, f % 2 == 1));
                let mut acc = Vector3::zeros();
                let mut count = 0.0;
                for di in 0..=axes[0].1 as usize {
                    for dj in 0..=axes[1].1 as usize {
                        for dk in 0..=axes[2].1 as usize {
                            acc += field.values[coarse.index(axes[0].0 + di, axes[1].0 + dj, axes[2].0 + dk)];
                            count += 1.0;
                        }
                    }
                }
                values.push(acc / count);
            }
        }
    }
    let mut out = DiscreteField { grid: fine, values, ..field.clone() };
    out.enforce()?;
    Ok(out)
}

/// Unit-period grid resolution aligned with the coefficient's pieces.
pub fn aligned_resolution(requested: usize, pieces: usize) -> usize {
    let pieces = pieces.max(1);
    requested.div_ceil(pieces) * pieces
}
