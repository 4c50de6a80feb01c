use nalgebra::Vector3;

use super::precond::SpectralPreconditioner;
use super::Objective;
use crate::discretization::{Assembler, Constraint, DiscreteField, Grid, LateralBc};
use crate::error::{Error, Result};

/// Treatment of one grid axis by the unknown layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisKind {
    /// Last node tied to the first.
    Periodic,
    /// End nodes prescribed.
    Dirichlet,
    /// Every node free.
    Natural,
}

/// Map from grid nodes to unknown blocks: prescribed nodes carry none,
/// periodically tied nodes share one. Blocks are in tensor order so the
/// spectral preconditioner can act on them directly.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub kinds: [AxisKind; 3],
    pub counts: [usize; 3],
    node_dof: Vec<Option<usize>>,
    representative: Vec<usize>,
    volume: Vec<f64>,
}

fn axis_dof(kind: AxisKind, nodes: usize, i: usize) -> Option<usize> {
    match kind {
        AxisKind::Periodic => Some(i % (nodes - 1)),
        AxisKind::Dirichlet => (i > 0 && i + 1 < nodes).then(|| i - 1),
        AxisKind::Natural => Some(i),
    }
}

impl DofMap {
    pub fn new(grid: &Grid, bc: &LateralBc) -> Self {
        let lateral = match bc {
            LateralBc::Periodic => AxisKind::Periodic,
            b if b.is_dirichlet() => AxisKind::Dirichlet,
            _ => AxisKind::Natural,
        };
        let kinds = [lateral, lateral, AxisKind::Natural];
        let counts: [usize; 3] = std::array::from_fn(|d| match kinds[d] {
            AxisKind::Periodic => grid.nodes[d] - 1,
            AxisKind::Dirichlet => grid.nodes[d] - 2,
            AxisKind::Natural => grid.nodes[d],
        });
        let n_dof = counts.iter().product();
        let mut node_dof = vec![None; grid.len()];
        let mut representative = vec![usize::MAX; n_dof];
        let mut volume = vec![0.0; n_dof];
        for (idx, slot) in node_dof.iter_mut().enumerate() {
            let ijk = grid.ijk(idx);
            let d: [Option<usize>; 3] = std::array::from_fn(|a| axis_dof(kinds[a], grid.nodes[a], ijk[a]));
            if let [Some(a), Some(b), Some(c)] = d {
                let dof = (a * counts[1] + b) * counts[2] + c;
                *slot = Some(dof);
                if representative[dof] == usize::MAX {
                    representative[dof] = idx;
                }
                volume[dof] += grid.nodal_volume(idx);
            }
        }
        DofMap { kinds, counts, node_dof, representative, volume }
    }

    pub fn len(&self) -> usize {
        self.representative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.representative.is_empty()
    }

    pub fn dof_of(&self, node: usize) -> Option<usize> {
        self.node_dof[node]
    }
}

enum Param {
    Ambient,
    Tangent([Vector3<f64>; 2]),
    Manifold(crate::geometry::Manifold),
}

/// Discrete energy of a field as a function of its free unknowns.
///
/// Free fields use three ambient coordinates per block, tangent-subspace
/// fields two frame coordinates, and manifold-valued fields three ambient
/// coordinates kept on the surface by nearest-point retraction.
pub struct FieldObjective {
    template: DiscreteField,
    asm: Assembler,
    dofs: DofMap,
    param: Param,
    ncomp: usize,
    precond: SpectralPreconditioner,
}

impl FieldObjective {
    pub fn new(template: DiscreteField, asm: Assembler) -> Result<Self> {
        if template.grid != *asm.grid() {
            return Err(Error::InvalidInput("field grid differs from the assembler grid".into()));
        }
        let dofs = DofMap::new(&template.grid, &template.lateral_bc);
        let (param, ncomp) = match &template.constraint {
            Constraint::Free => (Param::Ambient, 3),
            Constraint::TangentSubspace(frame) => (Param::Tangent(frame.basis), 2),
            Constraint::ManifoldValued(m) => (Param::Manifold(*m), 3),
        };
        let scale = 2.0 * asm.mean_coefficient().max(1e-12) * asm.normalization();
        let precond = SpectralPreconditioner::new(
            template.grid.nodes,
            template.grid.spacing(),
            dofs.kinds,
            template.domain.gradient_scale(),
            scale,
        )?;
        Ok(FieldObjective { template, asm, dofs, param, ncomp, precond })
    }

    pub fn assembler(&self) -> &Assembler {
        &self.asm
    }

    pub fn template(&self) -> &DiscreteField {
        &self.template
    }

    /// Unknowns of a field with the template's layout.
    pub fn unknowns(&self, field: &DiscreteField) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dofs.len() * self.ncomp);
        for &node in &self.dofs.representative {
            let v = field.values[node];
            match &self.param {
                Param::Tangent(b) => {
                    x.push(b[0].dot(&v));
                    x.push(b[1].dot(&v));
                }
                _ => x.extend_from_slice(v.as_slice()),
            }
        }
        x
    }

    fn block(&self, x: &[f64], dof: usize) -> Vector3<f64> {
        match &self.param {
            Param::Tangent(b) => b[0] * x[2 * dof] + b[1] * x[2 * dof + 1],
            _ => Vector3::new(x[3 * dof], x[3 * dof + 1], x[3 * dof + 2]),
        }
    }

    pub fn nodal_values(&self, x: &[f64]) -> Vec<Vector3<f64>> {
        self.template
            .values
            .iter()
            .enumerate()
            .map(|(node, v)| match self.dofs.node_dof[node] {
                Some(dof) => self.block(x, dof),
                None => *v,
            })
            .collect()
    }

    pub fn field(&self, x: &[f64]) -> DiscreteField {
        self.template.with_values(self.nodal_values(x))
    }

    fn project_blocks(&self, x: &[f64], v: &mut [f64]) -> Result<()> {
        if let Param::Manifold(m) = &self.param {
            for dof in 0..self.dofs.len() {
                let n = m.normal_at(&self.block(x, dof))?;
                let w = Vector3::new(v[3 * dof], v[3 * dof + 1], v[3 * dof + 2]);
                let t = w - n * n.dot(&w);
                v[3 * dof..3 * dof + 3].copy_from_slice(t.as_slice());
            }
        }
        Ok(())
    }
}

impl Objective for FieldObjective {
    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (e, gn) = self.asm.energy_gradient(&self.nodal_values(x))?;
        let mut acc = vec![Vector3::zeros(); self.dofs.len()];
        for (node, g) in gn.iter().enumerate() {
            if let Some(dof) = self.dofs.node_dof[node] {
                acc[dof] += g;
            }
        }
        let mut out = Vec::with_capacity(x.len());
        for g in &acc {
            match &self.param {
                Param::Tangent(b) => {
                    out.push(b[0].dot(g));
                    out.push(b[1].dot(g));
                }
                _ => out.extend_from_slice(g.as_slice()),
            }
        }
        self.project_blocks(x, &mut out)?;
        Ok((e, out))
    }

    fn delta(&self, x0: &[f64], x1: &[f64]) -> Result<f64> {
        self.asm.delta(&self.nodal_values(x0), &self.nodal_values(x1))
    }

    fn retract(&self, x: &[f64], d: &[f64], step: f64) -> Result<Vec<f64>> {
        let mut y: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + step * b).collect();
        if let Param::Manifold(m) = &self.param {
            for dof in 0..self.dofs.len() {
                let p = m.nearest_point(&self.block(&y, dof))?;
                y[3 * dof..3 * dof + 3].copy_from_slice(p.as_slice());
            }
        }
        Ok(y)
    }

    fn transport(&self, x: &[f64], v: &mut [f64]) -> Result<()> {
        self.project_blocks(x, v)
    }

    fn precondition(&self, x: &[f64], g: &[f64]) -> Result<Vec<f64>> {
        let mut r = self.precond.apply(g, self.ncomp);
        self.project_blocks(x, &mut r)?;
        Ok(r)
    }

    /// Sup over blocks of `|g| / (normalization · nodal volume)`.
    fn residual(&self, g: &[f64]) -> f64 {
        let norm = self.asm.normalization();
        (0..self.dofs.len())
            .map(|dof| {
                let b = &g[dof * self.ncomp..(dof + 1) * self.ncomp];
                b.iter().map(|v| v * v).sum::<f64>().sqrt() / (norm * self.dofs.volume[dof])
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{seed_field, DensityKind, Init, SlabDomain};
    use crate::integrand::{CoefficientField, IntegrandSpec};
    use crate::optim::{minimize, SolverSettings};

    #[test]
    fn periodic_map_ties_faces() {
        let g = Grid::new(&SlabDomain::Cell { t: 1 }, [5, 5, 3]).unwrap();
        let m = DofMap::new(&g, &LateralBc::Periodic);
        assert_eq!(m.len(), 4 * 4 * 3);
        assert_eq!(m.dof_of(g.index(4, 1, 2)), m.dof_of(g.index(0, 1, 2)));
        let total: f64 = m.volume.iter().sum();
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn dirichlet_map_drops_lateral_nodes() {
        let g = Grid::new(&SlabDomain::Cell { t: 1 }, [5, 5, 3]).unwrap();
        let m = DofMap::new(&g, &LateralBc::Zero);
        assert_eq!(m.len(), 3 * 3 * 3);
        assert_eq!(m.dof_of(g.index(0, 2, 1)), None);
    }

    #[test]
    fn free_cell_with_dirichlet_data_relaxes_to_zero() {
        let spec = IntegrandSpec::isotropic(CoefficientField::Constant { a0: 1.0 }, 2.0).unwrap();
        let n = 9 * 9 * 3;
        let vals: Vec<_> = (0..n).map(|i| Vector3::new((i as f64).sin(), 0.3, -(i as f64).cos())).collect();
        let f = seed_field(SlabDomain::Cell { t: 1 }, [9, 9, 3], Constraint::Free, LateralBc::Zero, Init::Nodal(vals)).unwrap();
        let asm = Assembler::for_field(&f, &spec, DensityKind::Plain, 0.0, None, 2).unwrap();
        let obj = FieldObjective::new(f.clone(), asm).unwrap();
        let out = minimize(&obj, obj.unknowns(&f), &SolverSettings::default()).unwrap();
        assert!(out.status.converged(), "{:?}", out.status);
        assert!(out.energy < 1e-12);
        assert!(out.iterations < 30, "{}", out.iterations);
    }
}
