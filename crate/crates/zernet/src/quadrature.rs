//! Reference quadrature for integrals over the unit disk.
//!
//! Gauss–Legendre in the radial direction (mapped to `[0,1]`, measure `r dr`)
//! crossed with a uniform angular grid (trapezoid rule, exact for periodic
//! integrands of bounded frequency). This is the independent integrator the
//! test suites check basis orthonormality and convolution identities against;
//! nothing in the fitting or network paths goes through it.

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
///
/// Newton iteration on the Legendre recurrence, Chebyshev-spaced starting
/// guesses. Accurate to machine precision for the node counts used here.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Quadrature grid over the unit disk for the measure `r dr dθ`.
///
/// Holds the flattened node list `(r, θ)` and a weight per node; summing
/// `w · f(r, θ)` approximates `∬ f r dr dθ`.
pub struct DiskQuadrature {
    pub radial: Vec<f64>,
    pub angular: Vec<f64>,
    radial_weights: Vec<f64>,
}

impl DiskQuadrature {
    /// Build a grid with `n_radial` Gauss–Legendre nodes and `n_angular`
    /// uniformly spaced angles.
    pub fn new(n_radial: usize, n_angular: usize) -> Self {
        let (x, w) = gauss_legendre(n_radial);
        // Map [-1,1] -> [0,1]; fold the Jacobian 1/2 and the measure weight r
        // into the radial weights.
        let radial: Vec<f64> = x.iter().map(|&x| 0.5 * (x + 1.0)).collect();
        let radial_weights: Vec<f64> = w
            .iter()
            .zip(&radial)
            .map(|(&w, &r)| 0.5 * w * r)
            .collect();
        let dtheta = 2.0 * std::f64::consts::PI / n_angular as f64;
        let angular: Vec<f64> = (0..n_angular).map(|j| j as f64 * dtheta).collect();
        DiskQuadrature {
            radial,
            angular,
            radial_weights,
        }
    }

    /// Default oracle resolution: 64 radial x 256 angular nodes, exact to
    /// roundoff for polynomial-in-r, trigonometric-in-θ integrands far beyond
    /// the orders used anywhere in this crate.
    pub fn oracle() -> Self {
        DiskQuadrature::new(64, 256)
    }

    /// Integrate `f(r, θ)` against `r dr dθ` over the unit disk.
    pub fn integrate(&self, mut f: impl FnMut(f64, f64) -> f64) -> f64 {
        let dtheta = 2.0 * std::f64::consts::PI / self.angular.len() as f64;
        let mut total = 0.0;
        for (&r, &wr) in self.radial.iter().zip(&self.radial_weights) {
            let mut ring = 0.0;
            for &theta in &self.angular {
                ring += f(r, theta);
            }
            total += wr * ring * dtheta;
        }
        total
    }

    /// All `(r, θ, w)` triples of the grid.
    pub fn nodes(&self) -> Vec<(f64, f64, f64)> {
        let dtheta = 2.0 * std::f64::consts::PI / self.angular.len() as f64;
        let mut out = Vec::with_capacity(self.radial.len() * self.angular.len());
        for (&r, &wr) in self.radial.iter().zip(&self.radial_weights) {
            for &theta in &self.angular {
                out.push((r, theta, wr * dtheta));
            }
        }
        out
    }
}
