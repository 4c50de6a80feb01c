//! Power-law densities `f(x, ξ)` with periodic coefficients, and the
//! penalized density `f̄(x, s, ξ) = f(x, 𝐏_s ξ) + |ξ − 𝐏_s ξ|ᵖ`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{matrix_tangent_projection, Manifold, TangentFrame};

/// Coefficient `a(x)`, 1-periodic in `x₁` and `x₂`.
///
/// Piecewise-constant kinds use half-open cells `[k/n, (k+1)/n)` so the value
/// on an interface is the one of the cell to its right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefficientField {
    Constant { a0: f64 },
    /// `a₁` on the first fraction `theta` of each period along `axis` (1 or 2), `a₂` on the rest.
    Laminate { a1: f64, a2: f64, theta: f64, axis: u8 },
    /// `a₁` on the squares `[0,½)²` and `[½,1)²` of each period, `a₂` elsewhere.
    Checkerboard { a1: f64, a2: f64 },
    /// Row-major `n1 × n2 × n3` samples over `Q′ × (−½, ½)`; periodic in-plane only.
    GridSampled { dims: [usize; 3], values: Vec<f64> },
}

#[inline]
fn frac(x: f64) -> f64 {
    x - x.floor()
}

#[inline]
fn cell_index(u: f64, n: usize) -> usize {
    ((u * n as f64).floor() as usize).min(n - 1)
}

impl CoefficientField {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("coefficient {name} must be > 0, got {v}")))
            }
        };
        match self {
            CoefficientField::Constant { a0 } => positive(*a0, "a0"),
            CoefficientField::Laminate { a1, a2, theta, axis } => {
                positive(*a1, "a1")?;
                positive(*a2, "a2")?;
                if !(*theta > 0.0 && *theta < 1.0) {
                    return Err(Error::InvalidInput(format!("theta must lie in (0,1), got {theta}")));
                }
                if *axis != 1 && *axis != 2 {
                    return Err(Error::InvalidInput(format!("laminate axis must be 1 or 2, got {axis}")));
                }
                Ok(())
            }
            CoefficientField::Checkerboard { a1, a2 } => {
                positive(*a1, "a1")?;
                positive(*a2, "a2")
            }
            CoefficientField::GridSampled { dims, values } => {
                if dims.iter().any(|&d| d == 0) || dims.iter().product::<usize>() != values.len() {
                    return Err(Error::InvalidInput(format!(
                        "grid coefficient has dims {dims:?} but {} values",
                        values.len()
                    )));
                }
                values.iter().try_for_each(|&v| positive(v, "sample"))
            }
        }
    }

    pub fn value(&self, x: &Vector3<f64>) -> f64 {
        match self {
            CoefficientField::Constant { a0 } => *a0,
            CoefficientField::Laminate { a1, a2, theta, axis } => {
                let u = frac(if *axis == 1 { x.x } else { x.y });
                if u < *theta {
                    *a1
                } else {
                    *a2
                }
            }
            CoefficientField::Checkerboard { a1, a2 } => {
                let i = cell_index(frac(x.x), 2);
                let j = cell_index(frac(x.y), 2);
                if (i + j) % 2 == 0 {
                    *a1
                } else {
                    *a2
                }
            }
            CoefficientField::GridSampled { dims, values } => {
                let i = cell_index(frac(x.x), dims[0]);
                let j = cell_index(frac(x.y), dims[1]);
                let k = cell_index((x.z + 0.5).clamp(0.0, 1.0), dims[2]);
                values[(i * dims[1] + j) * dims[2] + k]
            }
        }
    }

    pub fn min(&self) -> f64 {
        match self {
            CoefficientField::Constant { a0 } => *a0,
            CoefficientField::Laminate { a1, a2, .. } | CoefficientField::Checkerboard { a1, a2 } => {
                a1.min(*a2)
            }
            CoefficientField::GridSampled { values, .. } => {
                values.iter().copied().fold(f64::INFINITY, f64::min)
            }
        }
    }

    pub fn max(&self) -> f64 {
        match self {
            CoefficientField::Constant { a0 } => *a0,
            CoefficientField::Laminate { a1, a2, .. } | CoefficientField::Checkerboard { a1, a2 } => {
                a1.max(*a2)
            }
            CoefficientField::GridSampled { values, .. } => {
                values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            }
        }
    }

    /// Average over one period cell (used to scale solver preconditioners).
    pub fn mean(&self) -> f64 {
        match self {
            CoefficientField::Constant { a0 } => *a0,
            CoefficientField::Laminate { a1, a2, theta, .. } => theta * a1 + (1.0 - theta) * a2,
            CoefficientField::Checkerboard { a1, a2 } => 0.5 * (a1 + a2),
            CoefficientField::GridSampled { values, .. } => {
                values.iter().sum::<f64>() / values.len() as f64
            }
        }
    }

    /// Reads a grid coefficient: a first line `n1,n2,n3`, then the
    /// `n1·n2·n3` positive samples in row-major order, separated by commas,
    /// whitespace or newlines.
    pub fn grid_from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty coefficient file".into()))?;
        let dims: Vec<usize> = header
            .split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("bad header {header:?}: {e}")))?;
        if dims.len() != 3 {
            return Err(Error::Parse(format!("header must hold n1,n2,n3, got {header:?}")));
        }
        let mut values = Vec::with_capacity(dims.iter().product());
        for line in lines {
            for tok in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
                values.push(tok.parse::<f64>().map_err(|e| Error::Parse(format!("bad sample {tok:?}: {e}")))?);
            }
        }
        let field = CoefficientField::GridSampled { dims: [dims[0], dims[1], dims[2]], values };
        field.validate()?;
        Ok(field)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum Form {
    /// `a(x) |ξ|ᵖ`
    Isotropic,
    /// `a(x) Σⱼ wⱼ |ξⱼ|ᵖ` over the columns of `ξ`.
    ColumnWeighted { weights: [f64; 3] },
}

/// `f(x, ξ)` from the catalogue: a periodic coefficient times a power law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrandSpec {
    pub coeff: CoefficientField,
    pub p: f64,
    pub form: Form,
}

impl IntegrandSpec {
    pub fn new(coeff: CoefficientField, p: f64, form: Form) -> Result<Self> {
        let spec = IntegrandSpec { coeff, p, form };
        spec.validate()?;
        Ok(spec)
    }

    pub fn isotropic(coeff: CoefficientField, p: f64) -> Result<Self> {
        Self::new(coeff, p, Form::Isotropic)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(Error::InvalidInput(format!("growth exponent must satisfy 1 < p < ∞, got {}", self.p)));
        }
        if let Form::ColumnWeighted { weights } = self.form {
            if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
                return Err(Error::InvalidInput(format!("column weights must be > 0, got {weights:?}")));
            }
        }
        self.coeff.validate()
    }

    /// Exact (unregularized) `f(x, ξ)`.
    pub fn eval(&self, x: &Vector3<f64>, xi: &Matrix3<f64>) -> f64 {
        self.coeff.value(x) * self.form_value(xi, &PowerLaw::exact(self.p))
    }

    /// `ξ ↦ f(x, ξ) / a(x)` with the given power kernel.
    pub(crate) fn form_value(&self, xi: &Matrix3<f64>, law: &PowerLaw) -> f64 {
        match self.form {
            Form::Isotropic => law.value(xi.norm_squared()),
            Form::ColumnWeighted { weights } => (0..3)
                .map(|j| weights[j] * law.value(xi.column(j).norm_squared()))
                .sum(),
        }
    }

    /// Certified `(α, β)` with `α|ξ|ᵖ ≤ f(x, ξ) ≤ β(1 + |ξ|ᵖ)`.
    pub fn growth_constants(&self) -> (f64, f64) {
        let (amin, amax) = (self.coeff.min(), self.coeff.max());
        match self.form {
            Form::Isotropic => (amin, amax),
            Form::ColumnWeighted { weights } => {
                // Σⱼ|ξⱼ|ᵖ lies between min(1, 3^{1-p/2})|ξ|ᵖ and max(1, 3^{1-p/2})|ξ|ᵖ.
                let c = 3f64.powf(1.0 - 0.5 * self.p);
                let wmin = weights.iter().copied().fold(f64::INFINITY, f64::min);
                let wmax = weights.iter().copied().fold(0.0, f64::max);
                (amin * wmin * c.min(1.0), amax * wmax * c.max(1.0))
            }
        }
    }

    /// Constant `C` with `|ξ|ᵖ/C ≤ f̄(x, s, ξ) ≤ C(1 + |ξ|ᵖ)` for every tangent frame.
    pub fn perturbed_growth_constant(&self) -> f64 {
        let (alpha, beta) = self.growth_constants();
        let p = self.p;
        let lower = alpha.min(1.0) * 2f64.powf(-(0.5 * p - 1.0).max(0.0));
        (beta.max(1.0) * 2f64.powf(p)).max(1.0 / lower)
    }
}

/// Pointwise density `f(x, ξ)`.
pub fn eval_f(spec: &IntegrandSpec, x: &Vector3<f64>, xi: &Matrix3<f64>) -> f64 {
    spec.eval(x, xi)
}

pub fn growth_constants(spec: &IntegrandSpec) -> (f64, f64) {
    spec.growth_constants()
}

/// `f̄` bound to a target manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedIntegrand {
    pub base: IntegrandSpec,
    pub manifold: Manifold,
}

impl PerturbedIntegrand {
    pub fn new(base: IntegrandSpec, manifold: Manifold) -> Self {
        PerturbedIntegrand { base, manifold }
    }

    pub fn eval(&self, x: &Vector3<f64>, frame: &TangentFrame, xi: &Matrix3<f64>) -> f64 {
        let t = matrix_tangent_projection(frame, xi);
        let n = xi - t;
        self.base.eval(x, &t) + PowerLaw::exact(self.base.p).value(n.norm_squared())
    }
}

pub fn eval_fbar(pert: &PerturbedIntegrand, x: &Vector3<f64>, frame: &TangentFrame, xi: &Matrix3<f64>) -> f64 {
    pert.eval(x, frame, xi)
}

/// The scalar kernel `ρ(r²) = (ε² + r²)^{p/2} − εᵖ`; `ε = 0` gives `rᵖ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLaw {
    pub p: f64,
    pub eps: f64,
}

impl PowerLaw {
    pub fn exact(p: f64) -> Self {
        PowerLaw { p, eps: 0.0 }
    }

    pub fn regularized(p: f64, eps: f64) -> Self {
        PowerLaw { p, eps }
    }

    #[inline]
    fn is_quadratic(&self) -> bool {
        self.p == 2.0
    }

    #[inline]
    pub fn value(&self, r2: f64) -> f64 {
        if self.is_quadratic() {
            return r2;
        }
        let e2 = self.eps * self.eps;
        (e2 + r2).powf(0.5 * self.p) - e2.powf(0.5 * self.p)
    }

    /// `dρ/d(r²)`; fails where the kernel is not differentiable.
    #[inline]
    pub fn slope(&self, r2: f64) -> Result<f64> {
        if self.is_quadratic() {
            return Ok(1.0);
        }
        let q = self.eps * self.eps + r2;
        if q == 0.0 {
            return if self.p < 2.0 { Err(Error::NonSmoothPoint) } else { Ok(0.0) };
        }
        Ok(0.5 * self.p * q.powf(0.5 * self.p - 1.0))
    }

    /// `ρ(r₀² + Δ) − ρ(r₀²)` without cancellation when `Δ` is small.
    #[inline]
    pub fn difference(&self, r2: f64, delta: f64) -> f64 {
        if self.is_quadratic() {
            return delta;
        }
        let q = self.eps * self.eps + r2;
        if q == 0.0 {
            return self.value(r2 + delta) - self.value(r2);
        }
        q.powf(0.5 * self.p) * ((0.5 * self.p) * (delta / q).ln_1p()).exp_m1()
    }
}
