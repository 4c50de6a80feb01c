use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3x2, Vector3};
use serde::Serialize;
use tqhom::verify::recovery_csv;
use tqhom::{
    build_density_table, minimize_film, run_gamma_experiment, run_recovery_study, solve_cell, verify_lipschitz_growth,
    verify_quasiconvexity, verify_rank_one, CellProblem, DensityTable, FilmProblem, GammaConfig, PropertyReport,
    TableSettings,
};

use crate::config::{xi_matrix, RunConfig, Suite};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    /// Cell problems at each cell size.
    Cell,
    /// Homogenized density table.
    Table,
    /// Film minimization at each thickness.
    Film,
    /// Film minima against the planar limit.
    Gamma,
    /// Property checks on a density table.
    Check,
    /// Recovery fields around the datum-affine planar field.
    Recover,
}

/// Command-line values that replace configuration entries.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub ok: bool,
    pub artifacts: Vec<PathBuf>,
    pub summary: String,
}

struct Writer {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.display().to_string(), source })?;
        Ok(Writer { dir: dir.to_path_buf(), written: Vec::new() })
    }

    /// Writes to a sibling temporary file, then renames over the target.
    fn put(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let target = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.tmp"));
        let io = |source| CliError::Io { path: target.display().to_string(), source };
        fs::write(&tmp, contents).map_err(io)?;
        fs::rename(&tmp, &target).map_err(io)?;
        self.written.push(target);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("report serializes");
        text.push('\n');
        self.put(name, &text)
    }
}

/// Runs one command and writes its artifacts plus `config.json`, the
/// configuration with defaults and overrides applied.
pub fn execute(command: Command, config: &RunConfig, overrides: &Overrides) -> Result<Outcome, CliError> {
    let mut cfg = config.clone();
    if let Some(out) = &overrides.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let mut w = Writer::new(&cfg.out)?;
    w.put("config.json", &(cfg.echo() + "\n"))?;
    let (ok, summary) = match command {
        Command::Cell => run_cell(&cfg, &mut w)?,
        Command::Table => {
            let table = build_table(&cfg)?;
            write_table(&table, &mut w)?;
            let n = table.converged.iter().flatten().filter(|c| !**c).count();
            (n == 0, format!("{} entries, {n} unconverged", table.converged.iter().flatten().count()))
        }
        Command::Film => run_film(&cfg, &mut w)?,
        Command::Gamma => run_gamma(&cfg, &mut w)?,
        Command::Check => run_check(&cfg, &mut w)?,
        Command::Recover => run_recover(&cfg, &mut w)?,
    };
    Ok(Outcome { ok, artifacts: w.written, summary })
}

fn run_cell(cfg: &RunConfig, w: &mut Writer) -> Result<(bool, String), CliError> {
    let c = cfg.cell.as_ref().ok_or(CliError::MissingSection("cell"))?;
    let base = CellProblem {
        formulation: c.formulation,
        nz: c.nz,
        boundary: c.boundary,
        eps: cfg.epsilon,
        quad_order: cfg.quadrature_order,
        settings: cfg.solver.build(),
        ..CellProblem::new(cfg.spec()?, cfg.manifold()?, Vector3::from(c.s), xi_matrix(&c.xi_alpha), 1, c.n)
    };
    let mut csv = String::from("t,n,formulation,boundary,value,zero_field_value,residual,iterations,status\n");
    let mut all = true;
    let mut last = f64::NAN;
    for &t in &c.t_list {
        let sol = solve_cell(&CellProblem { t, ..base.clone() })?;
        all &= sol.status.converged();
        last = sol.value;
        writeln!(
            csv,
            "{t},{},{},{},{},{},{:e},{},{}",
            c.n,
            snake(&c.formulation),
            snake(&c.boundary),
            sol.value,
            sol.zero_field_value,
            sol.gradient_residual,
            sol.iterations,
            snake(&sol.status)
        )
        .unwrap();
    }
    w.put("cell.csv", &csv)?;
    Ok((all, format!("value {last} at t = {}", c.t_list.last().unwrap())))
}

fn snake<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|j| j.as_str().map(str::to_owned)).unwrap_or_default()
}

fn build_table(cfg: &RunConfig) -> Result<DensityTable, CliError> {
    let t = cfg.table.as_ref().ok_or(CliError::MissingSection("table"))?;
    let settings = TableSettings {
        xi_max: t.xi_max,
        m: t.m,
        t_list: t.t_list.clone(),
        n: t.n,
        nz: t.nz,
        eps: cfg.epsilon,
        quad_order: cfg.quadrature_order,
        boundary: t.boundary,
        solver: cfg.solver.build(),
    };
    let points: Vec<Vector3<f64>> = t.s_list.iter().map(|s| Vector3::from(*s)).collect();
    Ok(build_density_table(&cfg.spec()?, &cfg.manifold()?, &points, &settings)?)
}

fn write_table(table: &DensityTable, w: &mut Writer) -> Result<(), CliError> {
    w.put("table.csv", &table.to_csv())?;
    w.json("table_meta.json", &table.meta())
}

fn run_film(cfg: &RunConfig, w: &mut Writer) -> Result<(bool, String), CliError> {
    let f = cfg.film.as_ref().ok_or(CliError::MissingSection("film"))?;
    let mut csv = String::from("h,energy,residual,iterations,status\n");
    let mut all = true;
    for (i, &h) in f.h_list.iter().enumerate() {
        let mut problem =
            FilmProblem::new(cfg.spec()?, cfg.manifold()?, h, Some(f.datum.build()), f.grid.elements_per_period)?;
        problem.eps = cfg.epsilon;
        problem.quad_order = cfg.quadrature_order;
        problem.settings = cfg.solver.build();
        let sol = minimize_film(&problem, None)?;
        all &= sol.status.converged();
        writeln!(csv, "{h},{:e},{:e},{},{}", sol.energy, sol.residual, sol.iterations, snake(&sol.status)).unwrap();
        w.put(&format!("film_{i}.txt"), &sol.field.to_text())?;
    }
    w.put("film.csv", &csv)?;
    Ok((all, format!("{} thicknesses", f.h_list.len())))
}

fn gamma_config(cfg: &RunConfig) -> Result<(GammaConfig, Vec<f64>), CliError> {
    let f = cfg.film.as_ref().ok_or(CliError::MissingSection("film"))?;
    let mut g = GammaConfig::new(cfg.spec()?, cfg.manifold()?, f.datum.build());
    g.elements_per_period = f.grid.elements_per_period;
    g.corrector_n = f.grid.elements_per_period;
    g.limit_elements = f.grid.limit_elements;
    g.delta = f.delta;
    g.gap_tolerance = f.gap_tolerance;
    g.film_solver = cfg.solver.build();
    g.limit_solver = cfg.solver.build();
    Ok((g, f.h_list.clone()))
}

fn run_gamma(cfg: &RunConfig, w: &mut Writer) -> Result<(bool, String), CliError> {
    let (g, ladder) = gamma_config(cfg)?;
    let table = build_table(cfg)?;
    let report = run_gamma_experiment(&g, &table, &ladder)?;
    w.json("gamma.json", &report)?;
    w.put("gamma.csv", &report.to_csv())?;
    let flagged = report.rows.iter().any(|r| !r.flags.is_empty());
    Ok((report.pass && !flagged, format!("final gap {:.4}, pass {}", report.final_gap, report.pass)))
}

fn run_recover(cfg: &RunConfig, w: &mut Writer) -> Result<(bool, String), CliError> {
    let (g, ladder) = gamma_config(cfg)?;
    let table = build_table(cfg)?;
    let rows = run_recovery_study(&g, &table, &ladder)?;
    w.put("recovery.csv", &recovery_csv(&rows))?;
    Ok((true, format!("{} recovery fields", rows.len())))
}

#[derive(Serialize)]
struct CheckReport {
    all_pass: bool,
    reports: Vec<PropertyReport>,
}

fn run_check(cfg: &RunConfig, w: &mut Writer) -> Result<(bool, String), CliError> {
    let check = cfg.check.as_ref().ok_or(CliError::MissingSection("check"))?;
    let table = build_table(cfg)?;
    let manifold = table.manifold;
    let s = table.base_points[0];
    let frame = manifold.tangent_frame(&s)?;
    let mut reports = Vec::new();
    for suite in &check.suites {
        match suite {
            Suite::Quasiconvexity => {
                for (i, c) in check.points.iter().enumerate() {
                    let c = c.map(|v| v * table.settings.xi_max);
                    let col = |a: f64, b: f64| frame.basis[0] * a + frame.basis[1] * b;
                    let xi = Matrix3x2::from_columns(&[col(c[0], c[1]), col(c[2], c[3])]);
                    let seed = cfg.seed.wrapping_add(i as u64);
                    reports.push(verify_quasiconvexity(
                        &table,
                        &s,
                        &xi,
                        check.n_tests,
                        seed,
                        check.slack_overrides.quasiconvexity,
                    )?);
                }
            }
            Suite::Lipschitz => reports.push(verify_lipschitz_growth(&table)?),
            Suite::RankOne => {
                reports.push(verify_rank_one(&table, &s, check.n_segments, cfg.seed, check.slack_overrides.rank_one)?)
            }
        }
    }
    let all_pass = reports.iter().all(|r| r.pass);
    let failed = reports.iter().filter(|r| !r.pass).count();
    w.json("check.json", &CheckReport { all_pass, reports })?;
    Ok((all_pass, format!("{failed} failing checks")))
}
