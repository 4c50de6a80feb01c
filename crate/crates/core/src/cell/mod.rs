//! Finite-cell problems for the homogenized density and their tabulation.
//!
//! A cell problem minimizes
//! `(1/t²) ∫ f(x, ξ_α + ∇_α φ | ∇₃ φ)` over the slab `(−t/2, t/2)² × (−½, ½)`,
//! with `φ` either tangent-valued (constrained), free with the penalized
//! density (penalized), or free with the plain density (unconstrained).

mod table;

pub use table::{build_density_table, DensityTable, Lookup, TableMeta, TableSettings};

use nalgebra::{Matrix3x2, Vector3};
use serde::{Deserialize, Serialize};

use crate::discretization::{
    seed_field, Assembler, Constraint, DensityKind, DiscreteField, Init, LateralBc, SlabDomain,
};
use crate::error::{Error, Result};
use crate::geometry::{Manifold, TangentFrame};
use crate::integrand::IntegrandSpec;
use crate::optim::{minimize, FieldObjective, IterRecord, SolveStatus, SolverSettings};

/// Residual allowed for `ξ_α` to count as tangent.
pub const TANGENT_INPUT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    /// `φ` with values in `T_s(M)`, density `f`.
    Constrained,
    /// `φ` with values in ℝ³, density `f̄`.
    Penalized,
    /// `φ` with values in ℝ³, density `f`.
    Unconstrained,
}

/// Condition on the lateral faces of the cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellBoundary {
    /// `φ` periodic in `x₁`, `x₂` with period `t`.
    #[default]
    Periodic,
    /// `φ = 0` on the lateral faces.
    ZeroTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellProblem {
    pub spec: IntegrandSpec,
    pub manifold: Manifold,
    pub s: Vector3<f64>,
    /// In-plane gradient `[ξ₁ | ξ₂]`, columns tangent at `s`.
    pub xi: Matrix3x2<f64>,
    pub t: usize,
    pub formulation: Formulation,
    /// Elements per unit length in-plane.
    pub n: usize,
    /// Elements across the thickness.
    pub nz: usize,
    pub boundary: CellBoundary,
    pub eps: f64,
    pub quad_order: usize,
    pub settings: SolverSettings,
}

impl CellProblem {
    /// Problem with the default thickness resolution, boundary, quadrature and solver.
    pub fn new(spec: IntegrandSpec, manifold: Manifold, s: Vector3<f64>, xi: Matrix3x2<f64>, t: usize, n: usize) -> Self {
        CellProblem {
            spec,
            manifold,
            s,
            xi,
            t,
            formulation: Formulation::Penalized,
            n,
            nz: 2,
            boundary: CellBoundary::Periodic,
            eps: 1e-6,
            quad_order: 2,
            settings: SolverSettings::default(),
        }
    }

    pub fn with_formulation(mut self, formulation: Formulation) -> Self {
        self.formulation = formulation;
        self
    }

    pub fn with_boundary(mut self, boundary: CellBoundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn frame(&self) -> Result<TangentFrame> {
        self.manifold.tangent_frame(&self.s)
    }

    pub fn nodes(&self) -> [usize; 3] {
        [self.t * self.n + 1, self.t * self.n + 1, self.nz + 1]
    }

    fn validate(&self) -> Result<TangentFrame> {
        if self.t == 0 {
            return Err(Error::IncompatibleProblem("cell size t must be ≥ 1".into()));
        }
        if self.n < 4 || self.nz < 1 {
            return Err(Error::IncompatibleProblem(format!(
                "need n ≥ 4 and nz ≥ 1, got n = {}, nz = {}",
                self.n, self.nz
            )));
        }
        let frame = self.frame()?;
        let r = frame.normal_residual(&self.xi);
        if r > TANGENT_INPUT_TOL {
            return Err(Error::IncompatibleProblem(format!("ξ_α has normal component {r:e}")));
        }
        Ok(frame)
    }

    fn setup(&self, frame: &TangentFrame) -> Result<(DiscreteField, Assembler)> {
        let constraint = match self.formulation {
            Formulation::Constrained => Constraint::TangentSubspace(*frame),
            _ => Constraint::Free,
        };
        let kind = match self.formulation {
            Formulation::Penalized => DensityKind::Perturbed(*frame),
            _ => DensityKind::Plain,
        };
        let bc = match self.boundary {
            CellBoundary::Periodic => LateralBc::Periodic,
            CellBoundary::ZeroTrace => LateralBc::Zero,
        };
        let field = seed_field(SlabDomain::Cell { t: self.t }, self.nodes(), constraint, bc, Init::Zero)?;
        let asm = Assembler::for_field(&field, &self.spec, kind, self.eps, Some(self.xi), self.quad_order)?;
        Ok((field, asm))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSolution {
    /// Normalized discrete infimum.
    pub value: f64,
    pub argmin: DiscreteField,
    pub gradient_residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    pub formulation: Formulation,
    pub t: usize,
    pub n: usize,
    pub nodes: [usize; 3],
    /// Energy of the admissible field `φ = 0`.
    pub zero_field_value: f64,
    pub log: Vec<IterRecord>,
}

/// Solves the cell problem by descent from `φ = 0`.
pub fn solve_cell(problem: &CellProblem) -> Result<CellSolution> {
    solve_cell_from(problem, None)
}

/// Solves the cell problem by descent from `init` (same grid), or from `φ = 0`.
pub fn solve_cell_from(problem: &CellProblem, init: Option<&DiscreteField>) -> Result<CellSolution> {
    let frame = problem.validate()?;
    let (zero, asm) = problem.setup(&frame)?;
    let zero_field_value = asm.energy(&zero.values)?;
    let start = match init {
        Some(f) => {
            if f.grid.nodes != zero.grid.nodes {
                return Err(Error::InvalidInput(format!(
                    "initial field has {:?} nodes, problem needs {:?}",
                    f.grid.nodes, zero.grid.nodes
                )));
            }
            let mut s = zero.with_values(f.values.clone());
            s.enforce()?;
            s
        }
        None => zero,
    };
    let obj = FieldObjective::new(start.clone(), asm)?;
    let out = minimize(&obj, obj.unknowns(&start), &problem.settings)?;
    Ok(CellSolution {
        value: out.energy,
        argmin: obj.field(&out.x),
        gradient_residual: out.residual,
        iterations: out.iterations,
        status: out.status,
        formulation: problem.formulation,
        t: problem.t,
        n: problem.n,
        nodes: problem.nodes(),
        zero_field_value,
        log: out.log,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EqualityReport {
    pub constrained: f64,
    pub penalized: f64,
    /// `|Tf_t − f̄_t| / max(Tf_t, 1e−12)`.
    pub gap: f64,
    pub both_converged: bool,
}

/// Solves the constrained and penalized problems on the same grid.
pub fn check_constrained_penalized_equality(problem: &CellProblem) -> Result<EqualityReport> {
    let c = solve_cell(&problem.clone().with_formulation(Formulation::Constrained))?;
    let p = solve_cell(&problem.clone().with_formulation(Formulation::Penalized))?;
    Ok(EqualityReport {
        constrained: c.value,
        penalized: p.value,
        gap: (c.value - p.value).abs() / c.value.max(1e-12),
        both_converged: c.status.converged() && p.status.converged(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomEstimate {
    /// Value at the largest cell size.
    pub estimate: f64,
    pub per_t: Vec<(usize, f64)>,
    /// Last two values agree to `max(1%, 1e−8)`.
    pub converged: bool,
    /// Every solve reached its tolerance.
    pub solves_converged: bool,
}

/// Penalized solves at each cell size in `t_list` (increasing); the estimate
/// is the last value, reported without extrapolation.
pub fn estimate_hom_density(problem: &CellProblem, t_list: &[usize]) -> Result<HomEstimate> {
    if t_list.is_empty() || t_list.windows(2).any(|w| w[1] <= w[0]) || t_list[0] == 0 {
        return Err(Error::InvalidInput(format!("t_list must be increasing positive integers, got {t_list:?}")));
    }
    let mut per_t = Vec::with_capacity(t_list.len());
    let mut solves_converged = true;
    for &t in t_list {
        let p = CellProblem { t, formulation: Formulation::Penalized, ..problem.clone() };
        let sol = solve_cell(&p)?;
        solves_converged &= sol.status.converged();
        per_t.push((t, sol.value));
    }
    let last = per_t[per_t.len() - 1].1;
    let converged = match per_t.len() {
        1 => true,
        k => (last - per_t[k - 2].1).abs() <= (0.01 * last).max(1e-8),
    };
    Ok(HomEstimate { estimate: last, per_t, converged, solves_converged })
}
