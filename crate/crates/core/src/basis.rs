//! One-dimensional quadrature rules, polynomial bases and shape matrices.
//!
//! Everything lives on the reference interval `[0, 1]`. Matrices are stored
//! row-major with the quadrature index as the row.

use nalgebra::DMatrix;

use crate::error::{invalid, DgError, Result};

const NEWTON_TOL: f64 = 1e-15;
const NEWTON_MAX_ITER: usize = 100;
const SYMMETRY_TOL: f64 = 1e-10;

/// Quadrature rule on `[0, 1]`, symmetric about the midpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Quadrature1D {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Quadrature1D {
    /// Builds a rule from explicit data, rejecting rules that are not
    /// increasing, not inside `[0, 1]` or not symmetric.
    pub fn new(points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return invalid("quadrature needs matching, non-empty point and weight lists");
        }
        if points.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return invalid("quadrature points must lie in [0, 1]");
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("quadrature points must be strictly increasing");
        }
        let n = points.len();
        for i in 0..n {
            if (points[i] + points[n - 1 - i] - 1.0).abs() > 1e-14 || (weights[i] - weights[n - 1 - i]).abs() > 1e-14 {
                return Err(DgError::Unsupported("non-symmetric quadrature rules are not supported".into()));
            }
        }
        Ok(Quadrature1D { points, weights })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Integrates `f` over `[0, 1]`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Legendre polynomial `P_m(x)` and its derivative on `[-1, 1]`.
fn legendre(m: usize, x: f64) -> (f64, f64) {
    if m == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for j in 1..m {
        let jf = j as f64;
        let p2 = ((2.0 * jf + 1.0) * x * p1 - jf * p0) / (jf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let mf = m as f64;
    let dp = mf * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Mirrors the lower half of a rule given on `[-1, 1]` (largest roots first)
/// onto `[0, 1]` so that the result is exactly symmetric.
fn symmetric_rule(n: usize, half: &[(f64, f64)], middle_weight: Option<f64>) -> Quadrature1D {
    let mut points = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for (i, &(x, w)) in half.iter().enumerate() {
        points[i] = 0.5 * (1.0 - x);
        weights[i] = 0.5 * w;
        points[n - 1 - i] = 1.0 - points[i];
        weights[n - 1 - i] = weights[i];
    }
    if let Some(w) = middle_weight {
        points[n / 2] = 0.5;
        weights[n / 2] = 0.5 * w;
    }
    Quadrature1D { points, weights }
}

/// Gauss–Legendre rule with `n` points, exact for degree `2n - 1`.
pub fn gauss_quadrature(n: usize) -> Result<Quadrature1D> {
    if n == 0 {
        return invalid("Gauss quadrature needs at least one point");
    }
    let mut half = Vec::with_capacity(n / 2);
    for i in 0..n / 2 {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..NEWTON_MAX_ITER {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < NEWTON_TOL {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        half.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    let middle = (n % 2 == 1).then(|| {
        let (_, dp) = legendre(n, 0.0);
        2.0 / (dp * dp)
    });
    Ok(symmetric_rule(n, &half, middle))
}

/// Gauss–Lobatto–Legendre rule with `n` points including both end points,
/// exact for degree `2n - 3`.
pub fn gauss_lobatto_quadrature(n: usize) -> Result<Quadrature1D> {
    if n < 2 {
        return invalid("Gauss-Lobatto quadrature needs at least two points");
    }
    let m = n - 1;
    let mf = m as f64;
    let end_weight = 2.0 / (n as f64 * mf);
    let mut half = vec![(1.0, end_weight)];
    for i in 1..n / 2 {
        let mut x = (std::f64::consts::PI * i as f64 / mf).cos();
        for _ in 0..NEWTON_MAX_ITER {
            let (p, dp) = legendre(m, x);
            let ddp = (2.0 * x * dp - mf * (mf + 1.0) * p) / (1.0 - x * x);
            let dx = dp / ddp;
            x -= dx;
            if dx.abs() < NEWTON_TOL {
                break;
            }
        }
        let (p, _) = legendre(m, x);
        half.push((x, end_weight / (p * p)));
    }
    let middle = (n % 2 == 1).then(|| {
        let (p, _) = legendre(m, 0.0);
        end_weight / (p * p)
    });
    Ok(symmetric_rule(n, &half, middle))
}

/// Value of the `j`-th Lagrange polynomial on `nodes` at `x`.
pub fn lagrange_value(nodes: &[f64], j: usize, x: f64) -> f64 {
    let mut v = 1.0;
    for (m, &xm) in nodes.iter().enumerate() {
        if m != j {
            v *= (x - xm) / (nodes[j] - xm);
        }
    }
    v
}

/// Derivative of the `j`-th Lagrange polynomial on `nodes` at `x`.
pub fn lagrange_derivative(nodes: &[f64], j: usize, x: f64) -> f64 {
    let mut sum = 0.0;
    for (n, &xn) in nodes.iter().enumerate() {
        if n == j {
            continue;
        }
        let mut term = 1.0 / (nodes[j] - xn);
        for (m, &xm) in nodes.iter().enumerate() {
            if m != j && m != n {
                term *= (x - xm) / (nodes[j] - xm);
            }
        }
        sum += term;
    }
    sum
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BasisKind {
    /// Lagrange polynomials in the Gauss–Lobatto points.
    LagrangeGaussLobatto,
    /// Lagrange polynomials in the Gauss points (collocation with Gauss quadrature).
    LagrangeGauss,
    /// Endpoint value/derivative basis with at most two nonzero face entries.
    HermiteLike,
}

impl BasisKind {
    pub fn name(self) -> &'static str {
        match self {
            BasisKind::LagrangeGaussLobatto => "lagrange_gauss_lobatto",
            BasisKind::LagrangeGauss => "lagrange_gauss",
            BasisKind::HermiteLike => "hermite_like",
        }
    }
}

/// How many coefficient layers a face evaluation touches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FaceAccess {
    NodalOnFaces,
    HermiteType,
    Generic,
}

/// A one-dimensional polynomial basis with `k = degree + 1` functions.
#[derive(Clone, Debug)]
pub struct Basis1D {
    pub kind: BasisKind,
    pub degree: usize,
    pub face_access: FaceAccess,
    /// Nodes of the underlying Lagrange representation.
    nodes: Vec<f64>,
    /// Hermite-like functions as combinations of the Lagrange polynomials (row per function).
    combination: Option<Vec<f64>>,
}

/// Interior auxiliary nodes of the Hermite-like basis (Chebyshev–Gauss points).
fn auxiliary_nodes(n: usize) -> Vec<f64> {
    (0..n)
        .map(|m| {
            let theta = std::f64::consts::PI * (2 * m + 1) as f64 / (2 * n) as f64;
            0.5 * (1.0 - theta.cos())
        })
        .collect()
}

pub fn make_basis(kind: BasisKind, degree: usize) -> Result<Basis1D> {
    let k = degree + 1;
    match kind {
        BasisKind::LagrangeGaussLobatto => {
            if degree == 0 {
                return invalid("Gauss-Lobatto Lagrange basis needs degree >= 1");
            }
            Ok(Basis1D {
                kind,
                degree,
                face_access: FaceAccess::NodalOnFaces,
                nodes: gauss_lobatto_quadrature(k)?.points,
                combination: None,
            })
        }
        BasisKind::LagrangeGauss => Ok(Basis1D {
            kind,
            degree,
            face_access: FaceAccess::Generic,
            nodes: gauss_quadrature(k)?.points,
            combination: None,
        }),
        BasisKind::HermiteLike => {
            if degree < 3 {
                return Err(DgError::UnsupportedBasis(format!("hermite_like needs degree >= 3, got {degree}")));
            }
            let nodes = gauss_lobatto_quadrature(k)?.points;
            let aux = auxiliary_nodes(k - 4);
            // Row j holds the j-th defining functional applied to each Lagrange polynomial.
            let functional = |j: usize, m: usize| -> f64 {
                if j == 0 {
                    lagrange_value(&nodes, m, 0.0)
                } else if j == 1 {
                    lagrange_derivative(&nodes, m, 0.0)
                } else if j == k - 2 {
                    -lagrange_derivative(&nodes, m, 1.0)
                } else if j == k - 1 {
                    lagrange_value(&nodes, m, 1.0)
                } else {
                    lagrange_value(&nodes, m, aux[j - 2])
                }
            };
            let a = DMatrix::from_fn(k, k, functional);
            let inv = a
                .try_inverse()
                .ok_or_else(|| DgError::UnsupportedBasis("singular Hermite-like interpolation system".into()))?;
            // combination = (A^T)^{-1} = (A^{-1})^T
            let mut combination = vec![0.0; k * k];
            for i in 0..k {
                for m in 0..k {
                    combination[i * k + m] = inv[(m, i)];
                }
            }
            Ok(Basis1D { kind, degree, face_access: FaceAccess::HermiteType, nodes, combination: Some(combination) })
        }
    }
}

impl Basis1D {
    pub fn n_functions(&self) -> usize {
        self.degree + 1
    }

    pub fn value(&self, j: usize, x: f64) -> f64 {
        match &self.combination {
            None => lagrange_value(&self.nodes, j, x),
            Some(c) => {
                let k = self.n_functions();
                (0..k).map(|m| c[j * k + m] * lagrange_value(&self.nodes, m, x)).sum()
            }
        }
    }

    pub fn derivative(&self, j: usize, x: f64) -> f64 {
        match &self.combination {
            None => lagrange_derivative(&self.nodes, j, x),
            Some(c) => {
                let k = self.n_functions();
                (0..k).map(|m| c[j * k + m] * lagrange_derivative(&self.nodes, m, x)).sum()
            }
        }
    }

    /// Values and derivatives of all functions at `ξ = 0` and `ξ = 1`.
    ///
    /// For the Hermite-like basis the rows are exact by construction.
    pub fn face_rows(&self) -> ([Vec<f64>; 2], [Vec<f64>; 2]) {
        let k = self.n_functions();
        if self.kind == BasisKind::HermiteLike {
            let unit = |i: usize, s: f64| {
                let mut v = vec![0.0; k];
                v[i] = s;
                v
            };
            return ([unit(0, 1.0), unit(k - 1, 1.0)], [unit(1, 1.0), unit(k - 2, -1.0)]);
        }
        let vals = |x: f64| (0..k).map(|j| self.value(j, x)).collect::<Vec<_>>();
        let ders = |x: f64| (0..k).map(|j| self.derivative(j, x)).collect::<Vec<_>>();
        ([vals(0.0), vals(1.0)], [ders(0.0), ders(1.0)])
    }
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix1D {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix1D {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix1D { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.data[r * cols + c] = f(r, c);
            }
        }
        m
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    #[inline(always)]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix1D {
        Matrix1D::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn matmul(&self, other: &Matrix1D) -> Matrix1D {
        assert_eq!(self.cols, other.rows);
        Matrix1D::from_fn(self.rows, other.cols, |r, c| (0..self.cols).map(|m| self.get(r, m) * other.get(m, c)).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, &b| a.max(b.abs()))
    }

    /// Largest deviation from `M[n-1-r][m-1-c] = sign * M[r][c]`, relative to the largest entry.
    pub fn symmetry_defect(&self, sign: f64) -> f64 {
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        let mut defect: f64 = 0.0;
        for r in 0..self.rows {
            for c in 0..self.cols {
                let mirror = self.get(self.rows - 1 - r, self.cols - 1 - c);
                defect = defect.max((mirror - sign * self.get(r, c)).abs());
            }
        }
        defect / scale
    }

    /// Makes the matrix exactly (skew-)symmetric by mirroring its upper rows.
    fn symmetrize(&mut self, sign: f64) {
        let (n, m) = (self.rows, self.cols);
        if n % 2 == 1 {
            let r = n / 2;
            for c in 0..m / 2 {
                let avg = 0.5 * (self.get(r, c) + sign * self.get(r, m - 1 - c));
                self.data[r * m + c] = avg;
                self.data[r * m + m - 1 - c] = sign * avg;
            }
            if m % 2 == 1 && sign < 0.0 {
                self.data[r * m + m / 2] = 0.0;
            }
        }
        for r in 0..n / 2 {
            for c in 0..m {
                self.data[(n - 1 - r) * m + (m - 1 - c)] = sign * self.get(r, c);
            }
        }
    }

    /// Inverse of a square matrix.
    pub fn inverse(&self) -> Result<Matrix1D> {
        if self.rows != self.cols {
            return invalid("only square matrices can be inverted");
        }
        let n = self.rows;
        let m = DMatrix::from_fn(n, n, |r, c| self.get(r, c));
        let inv = m.try_inverse().ok_or_else(|| DgError::InvalidArgument("singular matrix".into()))?;
        Ok(Matrix1D::from_fn(n, n, |r, c| inv[(r, c)]))
    }
}

/// Even-odd packed form of a matrix with `M[n-1-r][m-1-c] = sign * M[r][c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EvenOddMatrix {
    pub rows: usize,
    pub cols: usize,
    /// `+1` for value-type (even) matrices, `-1` for derivative-type (odd) ones.
    pub sign: f64,
    /// The first `ceil(rows/2)` rows verbatim; the unique entries.
    pub half: Vec<f64>,
    /// Coefficients multiplying the even input part (plus the middle input, if any).
    pub even: Vec<f64>,
    /// Coefficients multiplying the odd input part.
    pub odd: Vec<f64>,
}

impl EvenOddMatrix {
    pub fn new(m: &Matrix1D, sign: f64) -> Result<Self> {
        let scale = m.max_abs();
        if scale > 0.0 && m.symmetry_defect(sign) > 1e-12 {
            return Err(DgError::Unsupported("even-odd form requires a (skew-)symmetric matrix".into()));
        }
        let (n, k) = (m.rows, m.cols);
        let (hi, mi) = (k / 2, k % 2);
        let (ho, mo) = (n / 2, n % 2);
        let half = m.data[..(ho + mo) * k].to_vec();
        let even_rows = if sign > 0.0 { ho + mo } else { ho };
        let odd_rows = if sign > 0.0 { ho } else { ho + mo };
        let ecols = hi + mi;
        let mut even = vec![0.0; even_rows * ecols];
        for r in 0..even_rows {
            for c in 0..hi {
                even[r * ecols + c] = 0.5 * (m.get(r, c) + m.get(r, k - 1 - c));
            }
            if mi == 1 {
                even[r * ecols + hi] = m.get(r, hi);
            }
        }
        let mut odd = vec![0.0; odd_rows * hi];
        for r in 0..odd_rows {
            for c in 0..hi {
                odd[r * hi + c] = 0.5 * (m.get(r, c) - m.get(r, k - 1 - c));
            }
        }
        Ok(EvenOddMatrix { rows: n, cols: k, sign, half, even, odd })
    }

    /// Full matrix rebuilt from the stored unique entries.
    pub fn reconstruct(&self) -> Matrix1D {
        let (n, k) = (self.rows, self.cols);
        let stored = n.div_ceil(2);
        Matrix1D::from_fn(n, k, |r, c| {
            if r < stored {
                self.half[r * k + c]
            } else {
                self.sign * self.half[(n - 1 - r) * k + (k - 1 - c)]
            }
        })
    }
}

/// A 1D operator in plain and, when the symmetry allows, even-odd form.
#[derive(Clone, Debug)]
pub struct Op1D {
    pub plain: Matrix1D,
    pub even_odd: Option<EvenOddMatrix>,
}

impl Op1D {
    pub fn new(plain: Matrix1D, sign: f64) -> Self {
        let even_odd = EvenOddMatrix::new(&plain, sign).ok();
        Op1D { plain, even_odd }
    }

    pub fn rows(&self) -> usize {
        self.plain.rows
    }

    pub fn cols(&self) -> usize {
        self.plain.cols
    }
}

/// Shape matrices of a basis evaluated in a quadrature rule.
#[derive(Clone, Debug)]
pub struct ShapeMatrices1D {
    pub basis: Basis1D,
    pub quadrature: Quadrature1D,
    /// Number of basis functions `k`.
    pub n_basis: usize,
    /// Number of quadrature points `l`.
    pub n_q: usize,
    /// `S`, `l x k`.
    pub values: Op1D,
    /// `S^T`, `k x l`.
    pub values_t: Op1D,
    /// `D`, `l x k`.
    pub gradients: Op1D,
    pub gradients_t: Op1D,
    /// `D^co`, `l x l`: derivative of the Lagrange basis on the quadrature points.
    pub colloc: Op1D,
    pub colloc_t: Op1D,
    /// `S^{-1}` and its transpose when `k = l`.
    pub inverse_values: Option<Op1D>,
    pub inverse_values_t: Option<Op1D>,
    /// Basis values at `ξ = 0` and `ξ = 1`.
    pub face_values: [Vec<f64>; 2],
    /// Basis derivatives at `ξ = 0` and `ξ = 1`.
    pub face_gradients: [Vec<f64>; 2],
}

fn evaluate_symmetric(rows: usize, cols: usize, sign: f64, f: impl Fn(usize, usize) -> f64) -> (Matrix1D, bool) {
    let mut m = Matrix1D::from_fn(rows, cols, f);
    let symmetric = m.symmetry_defect(sign) < SYMMETRY_TOL;
    if symmetric {
        m.symmetrize(sign);
    }
    (m, symmetric)
}

pub fn shape_matrices(basis: &Basis1D, quad: &Quadrature1D) -> Result<ShapeMatrices1D> {
    let k = basis.n_functions();
    let l = quad.len();
    if l < k {
        return invalid(format!("need at least as many quadrature points ({l}) as basis functions ({k})"));
    }
    let q = &quad.points;
    let (s, _) = evaluate_symmetric(l, k, 1.0, |r, c| basis.value(c, q[r]));
    let (d, _) = evaluate_symmetric(l, k, -1.0, |r, c| basis.derivative(c, q[r]));
    let (dco, _) = evaluate_symmetric(l, l, -1.0, |r, c| lagrange_derivative(q, c, q[r]));
    let (inverse_values, inverse_values_t) = if k == l {
        let mut inv = s.inverse()?;
        if inv.symmetry_defect(1.0) < SYMMETRY_TOL {
            inv.symmetrize(1.0);
        }
        let inv_t = inv.transpose();
        (Some(Op1D::new(inv, 1.0)), Some(Op1D::new(inv_t, 1.0)))
    } else {
        (None, None)
    };
    let (face_values, face_gradients) = basis.face_rows();
    Ok(ShapeMatrices1D {
        basis: basis.clone(),
        quadrature: quad.clone(),
        n_basis: k,
        n_q: l,
        values_t: Op1D::new(s.transpose(), 1.0),
        values: Op1D::new(s, 1.0),
        gradients_t: Op1D::new(d.transpose(), -1.0),
        gradients: Op1D::new(d, -1.0),
        colloc_t: Op1D::new(dco.transpose(), -1.0),
        colloc: Op1D::new(dco, -1.0),
        inverse_values,
        inverse_values_t,
        face_values,
        face_gradients,
    })
}

impl ShapeMatrices1D {
    /// Coefficient layers (indices along the normal) read at `side` for
    /// values and, if `derivative`, normal derivatives.
    pub fn face_layers(&self, side: usize, derivative: bool) -> Vec<usize> {
        (0..self.n_basis)
            .filter(|&j| self.face_values[side][j] != 0.0 || (derivative && self.face_gradients[side][j] != 0.0))
            .collect()
    }
}
