//! Orthonormal Zernike bases on the unit disk.
//!
//! Evaluation, least-squares decomposition, reconstruction, coefficient
//! rotation, and inner products. Functions on a disk patch are represented by
//! their coefficient vectors against the truncated basis; because the basis is
//! orthonormal under the measure `r dr dθ`, the disk inner product of two
//! functions is the plain dot product of their coefficient vectors, and
//! rotating a function about the disk center acts on coefficients through
//! 2x2 blocks mixing each (cos, sin) pair of equal radial and azimuthal order.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Hard cap on the radial order; factorial tables and conditioning are tuned
/// for small orders.
pub const MAX_ORDER_CAP: u32 = 12;

/// Index of one basis function: radial order `n`, signed azimuthal order `m`.
///
/// `m >= 0` selects the cosine branch, `m < 0` the sine branch of order `|m|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ZernikeIndex {
    n: u32,
    m: i32,
}

impl ZernikeIndex {
    pub fn new(n: u32, m: i32) -> Result<Self> {
        if m.unsigned_abs() > n {
            return Err(Error::Domain(format!("|m| = {} exceeds n = {n}", m.abs())));
        }
        if (n - m.unsigned_abs()) % 2 != 0 {
            return Err(Error::Domain(format!("n - |m| must be even, got n={n} m={m}")));
        }
        Ok(ZernikeIndex { n, m })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn m(&self) -> i32 {
        self.m
    }

    /// Position in the single-index ordering, `j = (n(n+2) + m) / 2`.
    pub fn linear_index(&self) -> usize {
        ((self.n * (self.n + 2)) as i32 + self.m) as usize / 2
    }
}

/// Point on the closed unit disk in polar coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiskPoint {
    r: f64,
    theta: f64,
}

impl DiskPoint {
    /// Validates `0 <= r <= 1` and wraps `theta` into `[0, 2π)`.
    pub fn new(r: f64, theta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::Domain(format!("radial distance {r} outside [0, 1]")));
        }
        let tau = 2.0 * std::f64::consts::PI;
        let mut theta = theta.rem_euclid(tau);
        if theta >= tau {
            theta = 0.0;
        }
        Ok(DiskPoint { r, theta })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }
}

/// Zernike radial polynomial `R_n^m` as a dense polynomial in `r`.
///
/// The factorial ratios are carried out in exact integer arithmetic once per
/// `(n, m)`; evaluation is Horner in `r²` times `r^m`.
#[derive(Debug, Clone)]
struct RadialPoly {
    m: u32,
    /// Coefficients of the polynomial in `s = r²`, highest power first.
    horner: Vec<f64>,
}

impl RadialPoly {
    fn build(n: u32, m: u32) -> Self {
        debug_assert!(m <= n && (n - m) % 2 == 0);
        let half = ((n - m) / 2) as i64;
        let mut horner = Vec::with_capacity(half as usize + 1);
        for k in 0..=half {
            let num = factorial(n as i64 - k);
            let den = factorial(k)
                * factorial(((n + m) / 2) as i64 - k)
                * factorial(((n - m) / 2) as i64 - k);
            let sign = if k % 2 == 0 { 1 } else { -1 };
            horner.push((sign * num / den) as f64);
        }
        RadialPoly { m, horner }
    }

    fn eval(&self, r: f64) -> f64 {
        let s = r * r;
        let mut acc = 0.0;
        for &c in &self.horner {
            acc = acc * s + c;
        }
        acc * r.powi(self.m as i32)
    }
}

fn factorial(k: i64) -> i64 {
    debug_assert!((0..=20).contains(&k));
    (1..=k).product()
}

/// One (cos, sin) index pair sharing `(n, |m|)`, `m > 0`.
#[derive(Debug, Clone, Copy)]
pub struct RotationPair {
    pub m: u32,
    pub cos_idx: usize,
    pub sin_idx: usize,
}

/// The truncated orthonormal basis up to `max_order`, with cached radial
/// tables, normalization factors, and the pair structure used for rotations.
#[derive(Debug, Clone)]
pub struct ZernikeBasisSet {
    max_order: u32,
    indices: Vec<ZernikeIndex>,
    norm_factors: Vec<f64>,
    radial: Vec<RadialPoly>,
    pairs: Vec<RotationPair>,
    zero_m: Vec<usize>,
}

impl ZernikeBasisSet {
    pub fn new(max_order: u32) -> Result<Self> {
        if max_order > MAX_ORDER_CAP {
            return Err(Error::Domain(format!(
                "max_order {max_order} exceeds cap {MAX_ORDER_CAP}"
            )));
        }
        let count = ((max_order + 1) * (max_order + 2) / 2) as usize;
        let mut indices = vec![ZernikeIndex { n: 0, m: 0 }; count];
        for n in 0..=max_order {
            let mut m = -(n as i32);
            while m <= n as i32 {
                let idx = ZernikeIndex { n, m };
                indices[idx.linear_index()] = idx;
                m += 2;
            }
        }
        let norm_factors: Vec<f64> = indices.iter().map(|i| norm_factor(i.n, i.m)).collect();
        let radial: Vec<RadialPoly> = indices
            .iter()
            .map(|i| RadialPoly::build(i.n, i.m.unsigned_abs()))
            .collect();
        let mut pairs = Vec::new();
        let mut zero_m = Vec::new();
        for (j, idx) in indices.iter().enumerate() {
            if idx.m == 0 {
                zero_m.push(j);
            } else if idx.m > 0 {
                let sin_idx = ZernikeIndex {
                    n: idx.n,
                    m: -idx.m,
                }
                .linear_index();
                pairs.push(RotationPair {
                    m: idx.m as u32,
                    cos_idx: j,
                    sin_idx,
                });
            }
        }
        Ok(ZernikeBasisSet {
            max_order,
            indices,
            norm_factors,
            radial,
            pairs,
            zero_m,
        })
    }

    pub fn max_order(&self) -> u32 {
        self.max_order
    }

    /// Number of basis functions, `(max_order+1)(max_order+2)/2`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[ZernikeIndex] {
        &self.indices
    }

    /// Indices with `m = 0` (rotation-invariant) and the (cos, sin) pairs.
    pub fn rotation_structure(&self) -> (&[usize], &[RotationPair]) {
        (&self.zero_m, &self.pairs)
    }

    /// Evaluate basis function `j` at a disk point, through the cached tables.
    pub fn eval(&self, j: usize, p: DiskPoint) -> f64 {
        let idx = self.indices[j];
        let radial = self.radial[j].eval(p.r);
        self.norm_factors[j] * radial * angular_factor(idx.m, p.theta)
    }
}

fn angular_factor(m: i32, theta: f64) -> f64 {
    if m >= 0 {
        (m as f64 * theta).cos()
    } else {
        ((-m) as f64 * theta).sin()
    }
}

/// Radial polynomial `R_n^m(r)` for `0 <= m <= n`, `0 <= r <= 1`.
///
/// Zero when `n - m` is odd.
pub fn radial_poly(n: u32, m: u32, r: f64) -> Result<f64> {
    if m > n {
        return Err(Error::Domain(format!("m = {m} exceeds n = {n}")));
    }
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Domain(format!("radial distance {r} outside [0, 1]")));
    }
    if (n - m) % 2 != 0 {
        return Ok(0.0);
    }
    Ok(RadialPoly::build(n, m).eval(r))
}

/// Normalization factor `sqrt((n+1)(2 - δ(|m|,0)) / π)` making the basis
/// unit-norm under `r dr dθ`.
pub fn norm_factor(n: u32, m: i32) -> f64 {
    let neumann = if m == 0 { 1.0 } else { 2.0 };
    ((n as f64 + 1.0) * neumann / std::f64::consts::PI).sqrt()
}

/// Normalized basis function at a disk point.
pub fn eval_basis(idx: ZernikeIndex, p: DiskPoint) -> Result<f64> {
    let radial = radial_poly(idx.n, idx.m.unsigned_abs(), p.r)?;
    Ok(norm_factor(idx.n, idx.m) * radial * angular_factor(idx.m, p.theta))
}

/// Coefficient vector against a `ZernikeBasisSet`, in linear-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientVector(Vec<f64>);

impl CoefficientVector {
    pub fn new(values: Vec<f64>) -> Self {
        CoefficientVector(values)
    }

    pub fn zeros(len: usize) -> Self {
        CoefficientVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for CoefficientVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl From<Vec<f64>> for CoefficientVector {
    fn from(v: Vec<f64>) -> Self {
        CoefficientVector(v)
    }
}

/// Evaluation matrix: entry `(s, j)` is basis function `j` at `points[s]`.
pub fn eval_matrix(basis: &ZernikeBasisSet, points: &[DiskPoint]) -> Result<DMatrix<f64>> {
    if points.is_empty() {
        return Err(Error::Domain("empty point list".into()));
    }
    if basis.is_empty() {
        return Err(Error::Domain("empty basis set".into()));
    }
    let mut mat = DMatrix::zeros(points.len(), basis.len());
    for (s, &p) in points.iter().enumerate() {
        for j in 0..basis.len() {
            mat[(s, j)] = basis.eval(j, p);
        }
    }
    Ok(mat)
}

/// Relative singular-value cutoff below which a fit is flagged rank deficient.
pub const RANK_CUTOFF: f64 = 1e-10;

/// Least-squares decomposition result.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub coefficients: CoefficientVector,
    pub rank: usize,
    /// Set when the evaluation matrix dropped rank; the minimum-norm solution
    /// is returned in that case.
    pub rank_deficient: bool,
}

/// Fit coefficients to scattered samples by rank-revealing least squares.
pub fn fit_coefficients(
    basis: &ZernikeBasisSet,
    points: &[DiskPoint],
    samples: &[f64],
) -> Result<FitResult> {
    if points.len() != samples.len() {
        return Err(Error::LengthMismatch {
            expected: points.len(),
            got: samples.len(),
            context: "samples per point".into(),
        });
    }
    if points.len() < basis.len() {
        return Err(Error::Underdetermined {
            points: points.len(),
            basis_len: basis.len(),
        });
    }
    let design = eval_matrix(basis, points)?;
    let rhs = DVector::from_column_slice(samples);
    solve_least_squares(&design, &rhs, basis.len())
}

pub(crate) fn solve_least_squares(
    design: &DMatrix<f64>,
    rhs: &DVector<f64>,
    basis_len: usize,
) -> Result<FitResult> {
    let svd = design.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let cutoff = RANK_CUTOFF * sigma_max;
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    let solution = svd
        .solve(rhs, cutoff)
        .map_err(|e| Error::Geometry(format!("svd solve failed: {e}")))?;
    Ok(FitResult {
        coefficients: CoefficientVector(solution.as_slice().to_vec()),
        rank,
        rank_deficient: rank < basis_len,
    })
}

/// Sum the series at one disk point.
pub fn reconstruct(basis: &ZernikeBasisSet, a: &CoefficientVector, p: DiskPoint) -> Result<f64> {
    if a.len() != basis.len() {
        return Err(Error::LengthMismatch {
            expected: basis.len(),
            got: a.len(),
            context: "coefficient vector vs basis".into(),
        });
    }
    let mut sum = 0.0;
    for j in 0..basis.len() {
        sum += a[j] * basis.eval(j, p);
    }
    Ok(sum)
}

/// Coefficient rotation matrix `R(Δθ)`.
///
/// Satisfies `reconstruct(R(Δθ)·a)(r, θ) = reconstruct(a)(r, θ + Δθ)`: rows
/// with `m = 0` are identity, and each (cos, sin) pair mixes through
///
/// ```text
/// a'_cos =  cos(mΔθ)·a_cos + sin(mΔθ)·a_sin
/// a'_sin = -sin(mΔθ)·a_cos + cos(mΔθ)·a_sin
/// ```
///
/// The matrix is orthogonal and `R(α)·R(β) = R(α+β)`.
pub fn rotation_matrix(basis: &ZernikeBasisSet, dtheta: f64) -> DMatrix<f64> {
    let n = basis.len();
    let mut mat = DMatrix::zeros(n, n);
    let (zero_m, pairs) = basis.rotation_structure();
    for &j in zero_m {
        mat[(j, j)] = 1.0;
    }
    for pair in pairs {
        let phi = pair.m as f64 * dtheta;
        let (s, c) = phi.sin_cos();
        mat[(pair.cos_idx, pair.cos_idx)] = c;
        mat[(pair.cos_idx, pair.sin_idx)] = s;
        mat[(pair.sin_idx, pair.cos_idx)] = -s;
        mat[(pair.sin_idx, pair.sin_idx)] = c;
    }
    mat
}

/// Apply `R(Δθ)` to a coefficient slice in place, without forming the matrix.
pub fn rotate_coefficients_in_place(basis: &ZernikeBasisSet, dtheta: f64, coeffs: &mut [f64]) {
    debug_assert_eq!(coeffs.len(), basis.len());
    let (_, pairs) = basis.rotation_structure();
    for pair in pairs {
        let phi = pair.m as f64 * dtheta;
        let (s, c) = phi.sin_cos();
        let a_cos = coeffs[pair.cos_idx];
        let a_sin = coeffs[pair.sin_idx];
        coeffs[pair.cos_idx] = c * a_cos + s * a_sin;
        coeffs[pair.sin_idx] = -s * a_cos + c * a_sin;
    }
}

/// Dot product of two coefficient vectors.
///
/// Equals the disk integral of the product of the reconstructed functions.
pub fn coeff_dot(a: &CoefficientVector, b: &CoefficientVector) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            got: b.len(),
            context: "coefficient vectors".into(),
        });
    }
    Ok(a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x * y)
        .sum())
}
