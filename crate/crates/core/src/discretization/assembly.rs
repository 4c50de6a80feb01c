use nalgebra::{Matrix3, Matrix3x2, Vector3};

use super::{Constraint, DiscreteField, Grid, QuadratureRule, SlabDomain};
use crate::error::{Error, Result};
use crate::geometry::TangentFrame;
use crate::integrand::{Form, IntegrandSpec, PowerLaw};

/// Which density is integrated.
#[derive(Debug, Clone, PartialEq)]
pub enum DensityKind {
    /// `f(x, ξ)`.
    Plain,
    /// `f(x, 𝐏ξ) + |ξ − 𝐏ξ|ᵖ` for a fixed tangent frame.
    Perturbed(TangentFrame),
}

/// Quadrature of `∫ f(x̂, ξ₀ + ∇ₛu)` over a grid, where `∇ₛ` scales each
/// derivative direction and `x̂` rescales `x_α` for the coefficient lookup.
///
/// Coefficient samples and shape-function gradients are cached on construction.
#[derive(Debug, Clone)]
pub struct Assembler {
    grid: Grid,
    spec: IntegrandSpec,
    law: PowerLaw,
    kind: DensityKind,
    offset: Matrix3<f64>,
    norm: f64,
    weights: Vec<f64>,
    dshape: Vec<[Vector3<f64>; 8]>,
    coeff: Vec<f64>,
}

#[inline]
fn corner(a: usize) -> [usize; 3] {
    [(a >> 2) & 1, (a >> 1) & 1, a & 1]
}

#[inline]
fn hat(bit: usize, u: f64) -> (f64, f64) {
    if bit == 0 {
        (1.0 - u, -1.0)
    } else {
        (u, 1.0)
    }
}

impl Assembler {
    /// `offset` is the constant in-plane matrix `ξ_α` added to the first two
    /// gradient columns; `eps` regularizes the power law (ignored for `p = 2`).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: &Grid,
        domain: &SlabDomain,
        spec: &IntegrandSpec,
        kind: DensityKind,
        eps: f64,
        offset: Option<Matrix3x2<f64>>,
        gradient_scale: [f64; 3],
        quad_order: usize,
    ) -> Result<Self> {
        if gradient_scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::ScaleMismatch(gradient_scale));
        }
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::InvalidInput(format!("regularization must be ≥ 0, got {eps}")));
        }
        spec.validate()?;
        let rule = QuadratureRule::gauss(quad_order)?;
        let h = grid.spacing();
        let weights = rule.physical_weights(h);
        let dshape = rule
            .points
            .iter()
            .map(|q| {
                std::array::from_fn(|a| {
                    let c = corner(a);
                    let f: [(f64, f64); 3] = std::array::from_fn(|d| hat(c[d], q[d]));
                    Vector3::new(
                        f[0].1 / h[0] * f[1].0 * f[2].0 * gradient_scale[0],
                        f[0].0 * f[1].1 / h[1] * f[2].0 * gradient_scale[1],
                        f[0].0 * f[1].0 * f[2].1 / h[2] * gradient_scale[2],
                    )
                })
            })
            .collect();
        let cs = domain.coefficient_scale();
        let [e1, e2, e3] = grid.elements();
        let mut coeff = Vec::with_capacity(e1 * e2 * e3 * rule.len());
        for i in 0..e1 {
            for j in 0..e2 {
                for k in 0..e3 {
                    for q in &rule.points {
                        let x = Vector3::new(
                            (grid.origin[0] + (i as f64 + q[0]) * h[0]) * cs,
                            (grid.origin[1] + (j as f64 + q[1]) * h[1]) * cs,
                            grid.origin[2] + (k as f64 + q[2]) * h[2],
                        );
                        coeff.push(spec.coeff.value(&x));
                    }
                }
            }
        }
        let mut off = Matrix3::zeros();
        if let Some(xi) = offset {
            off.fixed_view_mut::<3, 2>(0, 0).copy_from(&xi);
        }
        let law = if spec.p == 2.0 { PowerLaw::exact(2.0) } else { PowerLaw::regularized(spec.p, eps) };
        Ok(Assembler {
            grid: *grid,
            spec: spec.clone(),
            law,
            kind,
            offset: off,
            norm: domain.normalization(),
            weights,
            dshape,
            coeff,
        })
    }

    /// Assembler for a field using its domain's gradient scaling.
    pub fn for_field(
        field: &DiscreteField,
        spec: &IntegrandSpec,
        kind: DensityKind,
        eps: f64,
        offset: Option<Matrix3x2<f64>>,
        quad_order: usize,
    ) -> Result<Self> {
        Self::new(&field.grid, &field.domain, spec, kind, eps, offset, field.domain.gradient_scale(), quad_order)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn normalization(&self) -> f64 {
        self.norm
    }

    pub fn spec(&self) -> &IntegrandSpec {
        &self.spec
    }

    fn form_value(&self, m: &Matrix3<f64>) -> f64 {
        self.spec.form_value(m, &self.law)
    }

    fn form_grad(&self, m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
        match self.spec.form {
            Form::Isotropic => Ok(m * (2.0 * self.law.slope(m.norm_squared())?)),
            Form::ColumnWeighted { weights } => {
                let mut g = *m;
                for j in 0..3 {
                    let s = 2.0 * weights[j] * self.law.slope(m.column(j).norm_squared())?;
                    g.column_mut(j).scale_mut(s);
                }
                Ok(g)
            }
        }
    }

    fn form_delta(&self, m: &Matrix3<f64>, d: &Matrix3<f64>) -> f64 {
        match self.spec.form {
            Form::Isotropic => self.law.difference(m.norm_squared(), 2.0 * m.dot(d) + d.norm_squared()),
            Form::ColumnWeighted { weights } => (0..3)
                .map(|j| {
                    let (mj, dj) = (m.column(j), d.column(j));
                    weights[j] * self.law.difference(mj.norm_squared(), 2.0 * mj.dot(&dj) + dj.norm_squared())
                })
                .sum(),
        }
    }

    fn point_value(&self, a: f64, g: &Matrix3<f64>) -> f64 {
        match &self.kind {
            DensityKind::Plain => a * self.form_value(g),
            DensityKind::Perturbed(frame) => {
                let t = frame.proj * g;
                let n = g - t;
                a * self.form_value(&t) + self.law.value(n.norm_squared())
            }
        }
    }

    fn point_grad(&self, a: f64, g: &Matrix3<f64>) -> Result<(f64, Matrix3<f64>)> {
        match &self.kind {
            DensityKind::Plain => Ok((a * self.form_value(g), self.form_grad(g)? * a)),
            DensityKind::Perturbed(frame) => {
                let t = frame.proj * g;
                let n = g - t;
                let r2 = n.norm_squared();
                let value = a * self.form_value(&t) + self.law.value(r2);
                let grad = frame.proj * self.form_grad(&t)? * a + n * (2.0 * self.law.slope(r2)?);
                Ok((value, grad))
            }
        }
    }

    fn point_delta(&self, a: f64, g: &Matrix3<f64>, d: &Matrix3<f64>) -> f64 {
        match &self.kind {
            DensityKind::Plain => a * self.form_delta(g, d),
            DensityKind::Perturbed(frame) => {
                let (tg, td) = (frame.proj * g, frame.proj * d);
                let (ng, nd) = (g - tg, d - td);
                a * self.form_delta(&tg, &td)
                    + self.law.difference(ng.norm_squared(), 2.0 * ng.dot(&nd) + nd.norm_squared())
            }
        }
    }

    fn check_len(&self, values: &[Vector3<f64>]) -> Result<()> {
        if values.len() != self.grid.len() {
            return Err(Error::InvalidInput(format!(
                "field has {} nodes, assembler expects {}",
                values.len(),
                self.grid.len()
            )));
        }
        Ok(())
    }

    /// Visits every element with its corner node indices.
    #[inline]
    fn for_each_element(&self, mut visit: impl FnMut(usize, &[usize; 8]) -> Result<()>) -> Result<()> {
        let [e1, e2, e3] = self.grid.elements();
        let g = &self.grid;
        let mut e = 0;
        for i in 0..e1 {
            for j in 0..e2 {
                for k in 0..e3 {
                    let nodes = std::array::from_fn(|a| {
                        let c = corner(a);
                        g.index(i + c[0], j + c[1], k + c[2])
                    });
                    visit(e, &nodes)?;
                    e += 1;
                }
            }
        }
        Ok(())
    }

    #[inline]
    fn local_gradient(&self, q: usize, u: &[Vector3<f64>; 8]) -> Matrix3<f64> {
        let mut g = Matrix3::zeros();
        for (ua, da) in u.iter().zip(&self.dshape[q]) {
            g += ua * da.transpose();
        }
        g
    }

    pub fn energy(&self, values: &[Vector3<f64>]) -> Result<f64> {
        self.check_len(values)?;
        let nq = self.weights.len();
        let mut total = 0.0;
        self.for_each_element(|e, nodes| {
            let u = nodes.map(|n| values[n]);
            for q in 0..nq {
                let g = self.offset + self.local_gradient(q, &u);
                total += self.weights[q] * self.point_value(self.coeff[e * nq + q], &g);
            }
            Ok(())
        })?;
        Ok(self.norm * total)
    }

    /// Energy and its partial derivatives with respect to every nodal value.
    pub fn energy_gradient(&self, values: &[Vector3<f64>]) -> Result<(f64, Vec<Vector3<f64>>)> {
        self.check_len(values)?;
        let nq = self.weights.len();
        let mut total = 0.0;
        let mut grad = vec![Vector3::zeros(); values.len()];
        self.for_each_element(|e, nodes| {
            let u = nodes.map(|n| values[n]);
            for q in 0..nq {
                let g = self.offset + self.local_gradient(q, &u);
                let (v, dg) = self.point_grad(self.coeff[e * nq + q], &g)?;
                let w = self.weights[q] * self.norm;
                total += self.weights[q] * v;
                for (n, da) in nodes.iter().zip(&self.dshape[q]) {
                    grad[*n] += dg * da * w;
                }
            }
            Ok(())
        })?;
        Ok((self.norm * total, grad))
    }

    /// `E(v₁) − E(v₀)` evaluated pointwise from the increment, free of the
    /// cancellation in subtracting two nearly equal totals.
    pub fn delta(&self, v0: &[Vector3<f64>], v1: &[Vector3<f64>]) -> Result<f64> {
        self.check_len(v0)?;
        self.check_len(v1)?;
        let nq = self.weights.len();
        let mut total = 0.0;
        self.for_each_element(|e, nodes| {
            let u = nodes.map(|n| v0[n]);
            let du = nodes.map(|n| v1[n] - v0[n]);
            if du.iter().all(|d| *d == Vector3::zeros()) {
                return Ok(());
            }
            for q in 0..nq {
                let g = self.offset + self.local_gradient(q, &u);
                let d = self.local_gradient(q, &du);
                total += self.weights[q] * self.point_delta(self.coeff[e * nq + q], &g, &d);
            }
            Ok(())
        })?;
        Ok(self.norm * total)
    }

    /// Mean coefficient, used to scale preconditioners.
    pub fn mean_coefficient(&self) -> f64 {
        self.coeff.iter().sum::<f64>() / self.coeff.len() as f64
    }
}

fn check_layout(field: &DiscreteField, asm: &Assembler) -> Result<()> {
    if field.grid != asm.grid {
        return Err(Error::InvalidInput("field grid differs from the assembler grid".into()));
    }
    Ok(())
}

/// Discrete energy of a field.
pub fn assemble_energy(field: &DiscreteField, asm: &Assembler) -> Result<f64> {
    check_layout(field, asm)?;
    asm.energy(&field.values)
}

/// `∂E/∂(nodal value)` for every node; zero at prescribed lateral nodes and
/// projected onto the subspace for tangent-subspace fields.
pub fn assemble_gradient(field: &DiscreteField, asm: &Assembler) -> Result<Vec<Vector3<f64>>> {
    check_layout(field, asm)?;
    let (_, mut g) = asm.energy_gradient(&field.values)?;
    for (idx, gi) in g.iter_mut().enumerate() {
        if field.is_fixed(idx) {
            *gi = Vector3::zeros();
        } else if let Constraint::TangentSubspace(frame) = &field.constraint {
            *gi = frame.project(gi);
        }
    }
    Ok(g)
}
