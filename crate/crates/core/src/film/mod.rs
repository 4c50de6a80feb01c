//! The rescaled thin-film energy over `Ω = (−½, ½)³`, its minimization over
//! manifold-valued fields, the planar limit energy read from a density table,
//! and the recovery fields built from a cell corrector.

mod limit;
mod recovery;

pub use limit::{eval_limit_energy, minimize_limit, LimitEnergy, LimitSolution, PlanarField};
pub use recovery::{build_recovery_sequence, cutoff, sample_periodic, RecoveryParams};

use nalgebra::{Matrix3x2, Vector3};
use serde::{Deserialize, Serialize};

use crate::discretization::{seed_field, Assembler, Constraint, DensityKind, DiscreteField, Init, LateralBc, SlabDomain};
use crate::error::{Error, Result};
use crate::geometry::Manifold;
use crate::integrand::IntegrandSpec;
use crate::optim::{minimize, FieldObjective, IterRecord, SolveStatus, SolverSettings};

/// Largest deviation from the lateral datum accepted by the energy evaluation.
pub const BC_TOL: f64 = 1e-10;

/// Lateral datum `x_α ↦ Π(s₀ + ξ_α x_α)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Datum {
    pub s0: [f64; 3],
    /// Columns `ξ₁`, `ξ₂`, tangent at `s₀`.
    pub xi: [[f64; 3]; 2],
}

impl Datum {
    pub fn s0(&self) -> Vector3<f64> {
        Vector3::from(self.s0)
    }

    pub fn xi(&self) -> Matrix3x2<f64> {
        Matrix3x2::from_columns(&[Vector3::from(self.xi[0]), Vector3::from(self.xi[1])])
    }

    pub fn bc(&self) -> LateralBc {
        LateralBc::Projected { s0: self.s0(), xi: self.xi() }
    }

    /// Checks that `s₀` is on the manifold, `ξ_α` is tangent there, and the
    /// affine map stays inside the region where `Π` is single-valued on `ω`.
    pub fn validate(&self, manifold: &Manifold) -> Result<()> {
        let frame = manifold.tangent_frame(&self.s0())?;
        let r = frame.normal_residual(&self.xi());
        if r > 1e-10 {
            return Err(Error::IncompatibleBc(format!("datum gradient has normal component {r:e}")));
        }
        // |ξ_α x_α| ≤ |ξ_α|·|x_α| ≤ |ξ_α|/√2 on ω.
        let reach = manifold.reach();
        if self.xi().norm() / 2f64.sqrt() >= reach {
            return Err(Error::IncompatibleBc("datum leaves the projection neighbourhood".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilmProblem {
    pub spec: IntegrandSpec,
    pub manifold: Manifold,
    pub h: f64,
    pub datum: Option<Datum>,
    pub nodes: [usize; 3],
    pub eps: f64,
    pub quad_order: usize,
    pub settings: SolverSettings,
}

impl FilmProblem {
    /// Grid with `elements_per_period` elements per coefficient period `h`
    /// in-plane and a single element across the thickness.
    pub fn new(spec: IntegrandSpec, manifold: Manifold, h: f64, datum: Option<Datum>, elements_per_period: usize) -> Result<Self> {
        if !(h > 0.0 && h <= 1.0) {
            return Err(Error::InvalidInput(format!("film thickness must lie in (0,1], got {h}")));
        }
        let per_unit = (elements_per_period as f64 / h).round() as usize;
        let per_unit = per_unit.max(2);
        Ok(FilmProblem {
            spec,
            manifold,
            h,
            datum,
            nodes: [per_unit + 1, per_unit + 1, 2],
            eps: 1e-6,
            quad_order: 2,
            settings: SolverSettings::default(),
        })
    }

    pub fn domain(&self) -> SlabDomain {
        SlabDomain::Film { h: self.h }
    }

    pub fn lateral_bc(&self) -> LateralBc {
        self.datum.map(|d| d.bc()).unwrap_or(LateralBc::None)
    }

    pub fn assembler(&self) -> Result<Assembler> {
        let g = crate::discretization::Grid::new(&self.domain(), self.nodes)?;
        Assembler::new(
            &g,
            &self.domain(),
            &self.spec,
            DensityKind::Plain,
            self.eps,
            None,
            self.domain().gradient_scale(),
            self.quad_order,
        )
    }

    /// `Π(s₀ + ξ_α x_α)` at every node (constant `s₀` without a datum).
    pub fn datum_extension(&self, fallback: Vector3<f64>) -> Result<DiscreteField> {
        let constraint = Constraint::ManifoldValued(self.manifold);
        match &self.datum {
            Some(d) => {
                d.validate(&self.manifold)?;
                seed_field(self.domain(), self.nodes, constraint, d.bc(), Init::ProjectedAffine { s0: d.s0(), xi: d.xi() })
            }
            None => seed_field(
                self.domain(),
                self.nodes,
                constraint,
                LateralBc::None,
                Init::ProjectedAffine { s0: fallback, xi: Matrix3x2::zeros() },
            ),
        }
    }
}

/// `∫_Ω f(x_α/h, x₃, ∇_h u)` for a manifold-valued field satisfying the datum.
pub fn eval_film_energy(u: &DiscreteField, problem: &FilmProblem) -> Result<f64> {
    if u.grid.nodes != problem.nodes || u.domain != problem.domain() {
        return Err(Error::InvalidInput("field layout does not match the film problem".into()));
    }
    if let Some(d) = &problem.datum {
        let probe = DiscreteField { lateral_bc: d.bc(), constraint: Constraint::ManifoldValued(problem.manifold), ..u.clone() };
        let dev = probe.bc_residual()?;
        if dev > BC_TOL {
            return Err(Error::BcViolation(dev));
        }
    }
    problem.assembler()?.energy(&u.values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilmSolution {
    pub field: DiscreteField,
    pub energy: f64,
    pub residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    pub log: Vec<IterRecord>,
}

/// Minimizes the film energy by retracted descent, from `init` or from the datum extension.
pub fn minimize_film(problem: &FilmProblem, init: Option<&DiscreteField>) -> Result<FilmSolution> {
    let start = match init {
        Some(f) => {
            let mut s = f.clone();
            s.constraint = Constraint::ManifoldValued(problem.manifold);
            s.lateral_bc = problem.lateral_bc();
            let dev = s.bc_residual()?;
            if dev > BC_TOL {
                return Err(Error::BcViolation(dev));
            }
            s
        }
        None => {
            let s0 = problem.datum.map(|d| d.s0()).ok_or_else(|| {
                Error::InvalidInput("film minimization without a datum needs an initial field".into())
            })?;
            problem.datum_extension(s0)?
        }
    };
    if start.grid.nodes != problem.nodes {
        return Err(Error::InvalidInput("initial field layout does not match the film problem".into()));
    }
    let obj = FieldObjective::new(start.clone(), problem.assembler()?)?;
    let out = minimize(&obj, obj.unknowns(&start), &problem.settings)?;
    Ok(FilmSolution {
        field: obj.field(&out.x),
        energy: out.energy,
        residual: out.residual,
        iterations: out.iterations,
        status: out.status,
        log: out.log,
    })
}
