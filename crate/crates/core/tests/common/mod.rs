//! Reference values computed independently of the library.

#![allow(dead_code)]

/// Laminate coefficient: `a1` on `[0, θ)` of each unit period, `a2` elsewhere.
pub fn laminate(a1: f64, a2: f64, theta: f64, y: f64) -> f64 {
    if y - y.floor() < theta {
        a1
    } else {
        a2
    }
}

/// Thomas algorithm for a tridiagonal system (`lower[0]` and `upper[n-1]` unused).
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * c[i - 1];
        c[i] = if i + 1 < n { upper[i] / m } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Minimum over periodic `φ` of `∫₀¹ a(y)(1 + φ′)² dy`, by a finite-difference
/// solve on `cells` intervals with midpoint coefficients.
///
/// Translation invariance is removed by pinning `φ` to 0 at the first node, which
/// the periodic tie also imposes at the last one; the interior flux balance is
/// then tridiagonal.
pub fn periodic_laminate_fd(a: impl Fn(f64) -> f64, cells: usize) -> f64 {
    let h = 1.0 / cells as f64;
    let am: Vec<f64> = (0..cells).map(|i| a((i as f64 + 0.5) * h)).collect();
    let n = cells - 1;
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    // Node i (1..cells-1): a_{i-1/2}(1 + (φ_i − φ_{i−1})/h) = a_{i+1/2}(1 + (φ_{i+1} − φ_i)/h).
    for r in 0..n {
        let i = r + 1;
        let (w, e) = (am[i - 1], am[i]);
        diag[r] = (w + e) / h;
        if r > 0 {
            lower[r] = -w / h;
        }
        if r + 1 < n {
            upper[r] = -e / h;
        }
        rhs[r] = e - w;
    }
    let inner = solve_tridiagonal(&lower, &diag, &upper, &rhs);
    let phi = |i: usize| if i == 0 || i == cells { 0.0 } else { inner[i - 1] };
    (0..cells).map(|i| am[i] * (1.0 + (phi(i + 1) - phi(i)) / h).powi(2) * h).sum()
}

/// `∫₀¹ a(y) dy` by the midpoint rule.
pub fn arithmetic_mean(a: impl Fn(f64) -> f64, cells: usize) -> f64 {
    let h = 1.0 / cells as f64;
    (0..cells).map(|i| a((i as f64 + 0.5) * h) * h).sum()
}

/// Small deterministic generator so oracles do not share the library's RNG.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_f64(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in `[lo, hi)`.
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}
