//! Numerical homogenization and thin-film reduction for manifold-valued
//! energies: cell problems, homogenized density tables, film minimization,
//! recovery sequences and property checks.

pub mod cell;
pub mod discretization;
pub mod error;
pub mod film;
pub mod geometry;
pub mod integrand;
pub mod optim;
pub mod verify;

pub use cell::{
    build_density_table, check_constrained_penalized_equality, estimate_hom_density, solve_cell,
    CellBoundary, CellProblem, CellSolution, DensityTable, EqualityReport, Formulation, HomEstimate,
    TableSettings,
};
pub use discretization::{
    refine_field, seed_field, Constraint, DiscreteField, Grid, Init, LateralBc, QuadratureRule,
    SlabDomain,
};
pub use error::{Error, Result};
pub use film::{
    build_recovery_sequence, eval_film_energy, eval_limit_energy, minimize_film, minimize_limit, Datum,
    FilmProblem, FilmSolution, LimitEnergy, LimitSolution, PlanarField, RecoveryParams,
};
pub use geometry::{matrix_tangent_projection, nearest_point, tangent_frame, Manifold, TangentFrame};
pub use integrand::{eval_f, eval_fbar, growth_constants, CoefficientField, Form, IntegrandSpec, PerturbedIntegrand};
pub use optim::{SolveStatus, SolverSettings, StepRule};
pub use verify::{
    run_gamma_experiment, run_recovery_study, verify_lipschitz_growth, verify_lipschitz_growth_against,
    verify_quasiconvexity, verify_rank_one, GammaConfig, GammaReport, PropertyReport, RecoveryRow,
};
