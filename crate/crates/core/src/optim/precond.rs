use nalgebra::{DMatrix, DVector};

use super::field::AxisKind;
use crate::error::{Error, Result};

/// Generalized eigenpairs `K v = λ M v` of a 1D linear-element stiffness and
/// mass pair, normalized so that `Vᵀ M V = I`.
#[derive(Debug, Clone)]
struct AxisEigen {
    v: DMatrix<f64>,
    lambda: Vec<f64>,
}

impl AxisEigen {
    fn build(nodes: usize, spacing: f64, kind: AxisKind) -> Result<Self> {
        if nodes == 1 {
            // A collapsed axis contributes a unit mass and no stiffness.
            return Ok(AxisEigen { v: DMatrix::identity(1, 1), lambda: vec![0.0] });
        }
        let (count, map): (usize, Box<dyn Fn(usize) -> Option<usize>>) = match kind {
            AxisKind::Periodic => (nodes - 1, Box::new(move |i| Some(i % (nodes - 1)))),
            AxisKind::Dirichlet => (nodes - 2, Box::new(move |i| (i > 0 && i + 1 < nodes).then(|| i - 1))),
            AxisKind::Natural => (nodes, Box::new(Some)),
        };
        let mut k: DMatrix<f64> = DMatrix::zeros(count, count);
        let mut m: DMatrix<f64> = DMatrix::zeros(count, count);
        let ke = [[1.0f64, -1.0], [-1.0, 1.0]].map(|r| r.map(|v| v / spacing));
        let me = [[2.0f64, 1.0], [1.0, 2.0]].map(|r| r.map(|v| v * spacing / 6.0));
        for e in 0..nodes - 1 {
            let dofs = [map(e), map(e + 1)];
            for a in 0..2 {
                for b in 0..2 {
                    if let (Some(p), Some(q)) = (dofs[a], dofs[b]) {
                        k[(p, q)] += ke[a][b];
                        m[(p, q)] += me[a][b];
                    }
                }
            }
        }
        let chol = m
            .cholesky()
            .ok_or_else(|| Error::InvalidInput("mass matrix is not positive definite".into()))?;
        let l = chol.l();
        let linv = l
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidInput("singular mass factor".into()))?;
        let c: DMatrix<f64> = &linv * k * linv.transpose();
        let c = (&c + c.transpose()) * 0.5;
        let eig = c.symmetric_eigen();
        let v = linv.transpose() * eig.eigenvectors;
        let lambda = eig.eigenvalues.iter().map(|l| l.max(0.0)).collect();
        Ok(AxisEigen { v, lambda })
    }
}

/// Exact inverse of the constant-coefficient trilinear Laplacian
/// `Σ_d s_d² (K_d ⊗ M ⊗ M)` on the dof grid, applied per vector component.
///
/// Directions in its null space (constants under periodic or natural
/// conditions) are left at zero.
#[derive(Debug, Clone)]
pub struct SpectralPreconditioner {
    axes: [AxisEigen; 3],
    counts: [usize; 3],
    inv_eigen: Vec<f64>,
}

impl SpectralPreconditioner {
    /// `scale` multiplies the operator, typically twice the mean coefficient times the energy normalization.
    pub fn new(nodes: [usize; 3], spacing: [f64; 3], kinds: [AxisKind; 3], gradient_scale: [f64; 3], scale: f64) -> Result<Self> {
        let axes = [
            AxisEigen::build(nodes[0], spacing[0], kinds[0])?,
            AxisEigen::build(nodes[1], spacing[1], kinds[1])?,
            AxisEigen::build(nodes[2], spacing[2], kinds[2])?,
        ];
        let counts = [axes[0].lambda.len(), axes[1].lambda.len(), axes[2].lambda.len()];
        let s2 = gradient_scale.map(|s| s * s);
        let mut eig = Vec::with_capacity(counts.iter().product());
        for a in &axes[0].lambda {
            for b in &axes[1].lambda {
                for c in &axes[2].lambda {
                    eig.push(scale * (s2[0] * a + s2[1] * b + s2[2] * c));
                }
            }
        }
        let top = eig.iter().copied().fold(0.0, f64::max);
        let inv_eigen = eig.iter().map(|&e| if e > 1e-10 * top { 1.0 / e } else { 0.0 }).collect();
        Ok(SpectralPreconditioner { axes, counts, inv_eigen })
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    fn transform(&self, data: &mut [f64], axis: usize, transpose: bool) {
        let [c0, c1, c2] = self.counts;
        let v = &self.axes[axis].v;
        let n = self.counts[axis];
        let stride = match axis {
            0 => c1 * c2,
            1 => c2,
            _ => 1,
        };
        let (outer, inner) = match axis {
            0 => (1, c1 * c2),
            1 => (c0, c2),
            _ => (c0 * c1, 1),
        };
        let block = n * stride;
        let mut line: DVector<f64> = DVector::zeros(n);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * block + i;
                for p in 0..n {
                    line[p] = data[base + p * stride];
                }
                let out = if transpose { v.tr_mul(&line) } else { v * &line };
                for p in 0..n {
                    data[base + p * stride] = out[p];
                }
            }
        }
    }

    /// Applies the inverse to a scalar field laid out in dof order.
    pub fn apply_scalar(&self, data: &mut [f64]) {
        for axis in 0..3 {
            self.transform(data, axis, true);
        }
        data.iter_mut().zip(&self.inv_eigen).for_each(|(d, w)| *d *= w);
        for axis in 0..3 {
            self.transform(data, axis, false);
        }
    }

    /// Applies the inverse to each of `ncomp` interleaved components.
    pub fn apply(&self, r: &[f64], ncomp: usize) -> Vec<f64> {
        let n = self.inv_eigen.len();
        let mut out = vec![0.0; r.len()];
        let mut buf = vec![0.0; n];
        for c in 0..ncomp {
            for i in 0..n {
                buf[i] = r[i * ncomp + c];
            }
            self.apply_scalar(&mut buf);
            for i in 0..n {
                out[i * ncomp + c] = buf[i];
            }
        }
        out
    }
}
