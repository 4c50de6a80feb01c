//! Run configuration: a JSON document with a strict schema. Every default is
//! materialized on parse so the echoed document reproduces the run.

use std::path::PathBuf;

use nalgebra::{Matrix3x2, Vector3};
use serde::{Deserialize, Serialize};
use tqhom::optim::StepRule;
use tqhom::{CellBoundary, CoefficientField, Datum, Form, Formulation, IntegrandSpec, Manifold, SolverSettings};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ManifoldConfig {
    Sphere {
        radius: f64,
    },
    Torus {
        #[serde(rename = "R")]
        major: f64,
        #[serde(rename = "r")]
        minor: f64,
    },
    Plane {
        point: [f64; 3],
        normal: [f64; 3],
    },
}

impl ManifoldConfig {
    pub fn build(&self) -> Result<Manifold, CliError> {
        let m = match *self {
            ManifoldConfig::Sphere { radius } => Manifold::sphere(radius),
            ManifoldConfig::Torus { major, minor } => Manifold::torus(major, minor),
            ManifoldConfig::Plane { point, normal } => Manifold::plane(point, normal),
        };
        m.map_err(|e| CliError::Range(format!("manifold: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoeffConfig {
    Constant {
        a0: f64,
    },
    Laminate {
        a1: f64,
        a2: f64,
        theta: f64,
        #[serde(default = "one_u8")]
        axis: u8,
    },
    Checkerboard {
        a1: f64,
        a2: f64,
    },
    GridSampled {
        dims: [usize; 3],
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormKind {
    #[default]
    Isotropic,
    ColumnWeighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrandConfig {
    #[serde(default)]
    pub form: FormKind,
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<[f64; 3]>,
    pub coeff: CoeffConfig,
}

impl IntegrandConfig {
    pub fn build(&self) -> Result<IntegrandSpec, CliError> {
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(CliError::Range(format!(
                "integrand.p = {} is out of range: the growth exponent must satisfy 1 < p < ∞",
                self.p
            )));
        }
        let coeff = match self.coeff.clone() {
            CoeffConfig::Constant { a0 } => CoefficientField::Constant { a0 },
            CoeffConfig::Laminate { a1, a2, theta, axis } => {
                if !(theta > 0.0 && theta < 1.0) {
                    return Err(CliError::Range(format!("integrand.coeff.theta = {theta} must lie in (0, 1)")));
                }
                CoefficientField::Laminate { a1, a2, theta, axis }
            }
            CoeffConfig::Checkerboard { a1, a2 } => CoefficientField::Checkerboard { a1, a2 },
            CoeffConfig::GridSampled { dims, values } => CoefficientField::GridSampled { dims, values },
        };
        let form = match (self.form, self.weights) {
            (FormKind::Isotropic, None) => Form::Isotropic,
            (FormKind::ColumnWeighted, Some(weights)) => Form::ColumnWeighted { weights },
            (FormKind::Isotropic, Some(_)) => {
                return Err(CliError::Range("integrand.weights only apply to the column_weighted form".into()))
            }
            (FormKind::ColumnWeighted, None) => {
                return Err(CliError::Range("integrand.weights are required by the column_weighted form".into()))
            }
        };
        IntegrandSpec::new(coeff, self.p, form).map_err(|e| CliError::Range(format!("integrand: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    pub s: [f64; 3],
    /// Columns `ξ₁`, `ξ₂`.
    pub xi_alpha: [[f64; 3]; 2],
    #[serde(default = "default_t_list")]
    pub t_list: Vec<usize>,
    #[serde(default = "default_cell_n")]
    pub n: usize,
    #[serde(default = "default_nz")]
    pub nz: usize,
    #[serde(default = "default_formulation")]
    pub formulation: Formulation,
    #[serde(default)]
    pub boundary: CellBoundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableConfig {
    pub s_list: Vec<[f64; 3]>,
    #[serde(default = "one")]
    pub xi_max: f64,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_t_list")]
    pub t_list: Vec<usize>,
    #[serde(default = "default_table_n")]
    pub n: usize,
    #[serde(default = "default_nz")]
    pub nz: usize,
    #[serde(default)]
    pub boundary: CellBoundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatumConfig {
    pub s0: [f64; 3],
    pub xi0: [[f64; 3]; 2],
}

impl DatumConfig {
    pub fn build(&self) -> Datum {
        Datum { s0: self.s0, xi: self.xi0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilmGridConfig {
    #[serde(default = "default_epp")]
    pub elements_per_period: usize,
    #[serde(default = "default_limit_elements")]
    pub limit_elements: usize,
}

impl Default for FilmGridConfig {
    fn default() -> Self {
        FilmGridConfig { elements_per_period: default_epp(), limit_elements: default_limit_elements() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilmConfig {
    pub h_list: Vec<f64>,
    pub datum: DatumConfig,
    #[serde(default)]
    pub grid: FilmGridConfig,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_gap")]
    pub gap_tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Quasiconvexity,
    Lipschitz,
    RankOne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlackConfig {
    #[serde(default = "default_slack")]
    pub quasiconvexity: f64,
    #[serde(default = "default_slack")]
    pub rank_one: f64,
}

impl Default for SlackConfig {
    fn default() -> Self {
        SlackConfig { quasiconvexity: default_slack(), rank_one: default_slack() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    #[serde(default = "all_suites")]
    pub suites: Vec<Suite>,
    #[serde(default)]
    pub slack_overrides: SlackConfig,
    /// Tangent coordinates of the quasiconvexity test points, as fractions of `xi_max`.
    #[serde(default = "default_points")]
    pub points: Vec<[f64; 4]>,
    #[serde(default = "default_tests")]
    pub n_tests: usize,
    #[serde(default = "default_segments")]
    pub n_segments: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_rule")]
    pub rule: StepRule,
    #[serde(default = "default_memory")]
    pub memory: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { tol: default_tol(), max_iter: default_max_iter(), rule: default_rule(), memory: default_memory() }
    }
}

impl SolverConfig {
    pub fn build(&self) -> SolverSettings {
        SolverSettings { tol: self.tol, max_iter: self.max_iter, rule: self.rule, memory: self.memory }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifold: ManifoldConfig,
    pub integrand: IntegrandConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<CellConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<TableConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub film: Option<FilmConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check: Option<CheckConfig>,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    #[serde(default = "default_quadrature")]
    pub quadrature_order: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub solver: SolverConfig,
}

fn one() -> f64 {
    1.0
}
fn one_u8() -> u8 {
    1
}
fn default_t_list() -> Vec<usize> {
    vec![1, 2, 4]
}
fn default_cell_n() -> usize {
    32
}
fn default_table_n() -> usize {
    8
}
fn default_nz() -> usize {
    2
}
fn default_m() -> usize {
    5
}
fn default_formulation() -> Formulation {
    Formulation::Penalized
}
fn default_epp() -> usize {
    8
}
fn default_limit_elements() -> usize {
    32
}
fn default_delta() -> f64 {
    0.45
}
fn default_gap() -> f64 {
    0.05
}
fn default_slack() -> f64 {
    0.005
}
fn all_suites() -> Vec<Suite> {
    vec![Suite::Quasiconvexity, Suite::Lipschitz, Suite::RankOne]
}
fn default_points() -> Vec<[f64; 4]> {
    vec![[0.5, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.5], [0.5, 0.0, 0.0, -0.5]]
}
fn default_tests() -> usize {
    50
}
fn default_segments() -> usize {
    100
}
fn default_tol() -> f64 {
    1e-8
}
fn default_max_iter() -> usize {
    20_000
}
fn default_rule() -> StepRule {
    StepRule::Lbfgs
}
fn default_memory() -> usize {
    10
}
fn default_eps() -> f64 {
    1e-6
}
fn default_quadrature() -> usize {
    2
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Tagged enums buffer their content, so an unknown key inside one is reported
/// at the enum itself; the key is appended from the message in that case.
fn schema_path(err: &serde_path_to_error::Error<serde_json::Error>) -> String {
    let mut path = match err.path().to_string().as_str() {
        "." => String::new(),
        p => format!(".{p}"),
    };
    let msg = err.inner().to_string();
    if let Some(key) = msg.strip_prefix("unknown field `").and_then(|r| r.split('`').next()) {
        if !path.ends_with(&format!(".{key}")) {
            path.push('.');
            path.push_str(key);
        }
    }
    if path.is_empty() {
        ".".into()
    } else {
        path
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let message = e.inner().to_string();
        CliError::Schema { path: schema_path(&e), message }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let manifold = self.manifold.build()?;
        self.integrand.build()?;
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(CliError::Range(format!("epsilon = {} must be > 0", self.epsilon)));
        }
        if !matches!(self.quadrature_order, 1 | 2) {
            return Err(CliError::Range(format!("quadrature_order = {} must be 1 or 2", self.quadrature_order)));
        }
        if !(self.solver.tol > 0.0) || self.solver.memory == 0 {
            return Err(CliError::Range("solver.tol must be > 0 and solver.memory ≥ 1".into()));
        }
        let increasing = |l: &[usize]| !l.is_empty() && l[0] > 0 && l.windows(2).all(|w| w[1] > w[0]);
        if let Some(c) = &self.cell {
            if !increasing(&c.t_list) {
                return Err(CliError::Range("cell.t_list must be increasing positive integers".into()));
            }
            if c.n < 4 || c.nz < 1 {
                return Err(CliError::Range("cell.n must be ≥ 4 and cell.nz ≥ 1".into()));
            }
        }
        if let Some(t) = &self.table {
            if t.s_list.is_empty() || !increasing(&t.t_list) || t.m < 3 || !(t.xi_max > 0.0) || t.n < 4 {
                return Err(CliError::Range(
                    "table needs a nonempty s_list, increasing t_list, m ≥ 3, xi_max > 0 and n ≥ 4".into(),
                ));
            }
        }
        if let Some(f) = &self.film {
            if f.h_list.is_empty() || f.h_list.iter().any(|h| !(*h > 0.0 && *h <= 1.0)) {
                return Err(CliError::Range("film.h_list entries must lie in (0, 1]".into()));
            }
            if f.h_list.windows(2).any(|w| w[1] >= w[0]) {
                return Err(CliError::Range("film.h_list must be strictly decreasing".into()));
            }
            if !(f.delta > 0.0 && f.delta < 1.0) {
                return Err(CliError::Range(format!("film.delta = {} must lie in (0, 1)", f.delta)));
            }
            f.datum.build().validate(&manifold).map_err(|e| CliError::Range(format!("film.datum: {e}")))?;
        }
        if let Some(c) = &self.check {
            if c.points.iter().flatten().any(|v| v.abs() > 0.7) {
                return Err(CliError::Range("check.points fractions must lie in [−0.7, 0.7]".into()));
            }
        }
        Ok(())
    }

    pub fn manifold(&self) -> Result<Manifold, CliError> {
        self.manifold.build()
    }

    pub fn spec(&self) -> Result<IntegrandSpec, CliError> {
        self.integrand.build()
    }

    /// The configuration with every default written out.
    pub fn echo(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }
}

pub fn xi_matrix(cols: &[[f64; 3]; 2]) -> Matrix3x2<f64> {
    Matrix3x2::from_columns(&[Vector3::from(cols[0]), Vector3::from(cols[1])])
}
