//! Geometric factors at quadrature points.
//!
//! Four storage representations are supported:
//!
//! * `G1` keeps the mapping support points of each cell and evaluates the
//!   Jacobian on the fly with sum factorization,
//! * `G2` keeps the physical quadrature point coordinates and differentiates
//!   them with the collocation derivative,
//! * `G3` keeps `J^{-T}` and `det(J) w_q` per point,
//! * `G4` keeps the effective coefficient the integrand needs.
//!
//! `Compressed` detects Cartesian and affine cell batches and stores one
//! entry per cell for those; other batches fall back to `G3` storage.
//! Face data is always stored per face quadrature point.

use std::collections::HashMap;
use std::sync::Arc;

use crate::basis::{
    gauss_lobatto_quadrature, lagrange_derivative, lagrange_value, Matrix1D, Quadrature1D, ShapeMatrices1D,
};
use crate::counters::Sweep;
use crate::dof::{DofLayout, FaceInfoBatch};
use crate::error::{invalid, DgError, Result};
use crate::lanes::{Lanes, Number};
use crate::mesh::{CellMapping, Mesh, RawFace};
use crate::tensor::{gradient_sweeps, sweep, Kernel};

/// Operator being evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Equation {
    Mass,
    InverseMass,
    Advection,
    Laplacian,
}

impl Equation {
    pub fn name(self) -> &'static str {
        match self {
            Equation::Mass => "mass",
            Equation::InverseMass => "invmass",
            Equation::Advection => "advection",
            Equation::Laplacian => "laplace",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mass" => Ok(Equation::Mass),
            "invmass" | "inverse_mass" => Ok(Equation::InverseMass),
            "advection" => Ok(Equation::Advection),
            "laplace" | "laplacian" => Ok(Equation::Laplacian),
            _ => invalid(format!("unknown operator '{s}'")),
        }
    }
}

pub type VectorFn = Arc<dyn Fn([f64; 3]) -> [f64; 3] + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn([f64; 3]) -> f64 + Send + Sync>;

/// Transport direction `c(x)`.
#[derive(Clone)]
pub enum VectorField {
    Constant([f64; 3]),
    Function(VectorFn),
}

impl VectorField {
    pub fn eval(&self, x: [f64; 3]) -> [f64; 3] {
        match self {
            VectorField::Constant(c) => *c,
            VectorField::Function(f) => f(x),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, VectorField::Constant(_))
    }
}

impl std::fmt::Debug for VectorField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            VectorField::Constant(c) => write!(f, "Constant({c:?})"),
            VectorField::Function(_) => write!(f, "Function(..)"),
        }
    }
}

/// Storage representation of the cell geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GeometryVariant {
    Compressed,
    G1,
    G2,
    G3,
    G4,
}

impl GeometryVariant {
    pub const ALL: [GeometryVariant; 5] = [
        GeometryVariant::Compressed,
        GeometryVariant::G1,
        GeometryVariant::G2,
        GeometryVariant::G3,
        GeometryVariant::G4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GeometryVariant::Compressed => "cartesian",
            GeometryVariant::G1 => "g1",
            GeometryVariant::G2 => "g2",
            GeometryVariant::G3 => "g3",
            GeometryVariant::G4 => "g4",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| DgError::InvalidArgument(format!("unknown geometry variant '{s}'")))
    }
}

/// Compression tag of one cell batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Compression {
    Cartesian,
    Affine,
    General,
}

/// Mapping data at one reference point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointGeometry {
    pub x: [f64; 3],
    /// `J[a][b] = ∂x_a/∂ξ_b`.
    pub jac: [[f64; 3]; 3],
    pub jinvt: [[f64; 3]; 3],
    pub det: f64,
}

/// Inverse transpose and determinant of a `d x d` Jacobian.
pub fn invert_jacobian<N: Number>(d: usize, j: &[[N; 3]; 3]) -> ([[N; 3]; 3], N) {
    let mut out = [[N::zero(); 3]; 3];
    match d {
        1 => {
            let det = j[0][0];
            out[0][0] = N::splat(1.0) / det;
            (out, det)
        }
        2 => {
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            let inv = N::splat(1.0) / det;
            out[0][0] = j[1][1] * inv;
            out[0][1] = -(j[1][0] * inv);
            out[1][0] = -(j[0][1] * inv);
            out[1][1] = j[0][0] * inv;
            (out, det)
        }
        _ => {
            let mut cof = [[N::zero(); 3]; 3];
            for (a, row) in cof.iter_mut().enumerate() {
                let (a1, a2) = ((a + 1) % 3, (a + 2) % 3);
                for (b, c) in row.iter_mut().enumerate() {
                    let (b1, b2) = ((b + 1) % 3, (b + 2) % 3);
                    *c = j[a1][b1] * j[a2][b2] - j[a1][b2] * j[a2][b1];
                }
            }
            let det = j[0][0] * cof[0][0] + j[0][1] * cof[0][1] + j[0][2] * cof[0][2];
            let inv = N::splat(1.0) / det;
            for a in 0..3 {
                for b in 0..3 {
                    out[a][b] = cof[a][b] * inv;
                }
            }
            (out, det)
        }
    }
}

/// Evaluates the cell mapping at `xi`.
pub fn point_geometry(map: &CellMapping, xi: [f64; 3]) -> Result<PointGeometry> {
    let (x, jac) = map.evaluate(xi);
    let d = map.dim;
    let mut jl = [[Lanes::<1>::zero(); 3]; 3];
    for a in 0..d {
        for b in 0..d {
            jl[a][b] = Lanes::splat(jac[a][b]);
        }
    }
    let (inv, det) = invert_jacobian(d, &jl);
    let det = det.lane(0);
    if det.is_nan() || det <= 0.0 {
        return Err(DgError::InvalidMesh(format!("non-positive Jacobian determinant {det} at {xi:?}")));
    }
    let mut jinvt = [[0.0; 3]; 3];
    for a in 0..d {
        for b in 0..d {
            jinvt[a][b] = inv[a][b].lane(0);
        }
    }
    Ok(PointGeometry { x, jac, jinvt, det })
}

/// Reference coordinates of the tensor quadrature points, first axis fastest.
pub fn tensor_points(d: usize, quad: &Quadrature1D) -> (Vec<[f64; 3]>, Vec<f64>) {
    let l = quad.len();
    let n = l.pow(d as u32);
    let mut pts = Vec::with_capacity(n);
    let mut wts = Vec::with_capacity(n);
    for q in 0..n {
        let mut xi = [0.0; 3];
        let mut w = 1.0;
        let mut rest = q;
        for v in xi.iter_mut().take(d) {
            let i = rest % l;
            rest /= l;
            *v = quad.points[i];
            w *= quad.weights[i];
        }
        pts.push(xi);
        wts.push(w);
    }
    (pts, wts)
}

/// Axes spanning a face with normal `axis`, ascending.
pub fn tangential_axes(d: usize, axis: usize) -> Vec<usize> {
    (0..d).filter(|&a| a != axis).collect()
}

/// Reference point on face `face_number` with tangential coordinates `t`.
pub fn face_reference_point(d: usize, face_number: usize, t: &[f64]) -> [f64; 3] {
    let axis = face_number / 2;
    let mut xi = [0.0; 3];
    xi[axis] = (face_number % 2) as f64;
    for (i, a) in tangential_axes(d, axis).into_iter().enumerate() {
        xi[a] = t[i];
    }
    xi
}

/// Mapping data at one face quadrature point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FacePointGeometry {
    pub x: [f64; 3],
    /// Unit normal pointing out of the interior cell.
    pub normal: [f64; 3],
    /// Surface element `h(ξ)`.
    pub area: f64,
    pub jinvt_minus: [[f64; 3]; 3],
    pub jinvt_plus: Option<[[f64; 3]; 3]>,
    /// `n · J^{-T}` on the interior side, face-local order (tangential axes, then normal).
    pub jn_minus: [f64; 3],
    /// `n · J^{-T}` on the exterior side with the interior normal, face-local order.
    pub jn_plus: [f64; 3],
}

fn face_local(d: usize, axis: usize, v: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (i, a) in tangential_axes(d, axis).into_iter().enumerate() {
        out[i] = v[a];
    }
    out[d - 1] = v[axis];
    out
}

fn normal_times_jinvt(d: usize, n: [f64; 3], jinvt: &[[f64; 3]; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (b, o) in out.iter_mut().enumerate().take(d) {
        *o = (0..d).map(|a| n[a] * jinvt[a][b]).sum();
    }
    out
}

/// Evaluates face data at tangential coordinates `t`.
pub fn face_point_geometry(mesh: &Mesh, face: &RawFace, t: &[f64]) -> Result<FacePointGeometry> {
    let d = mesh.dim;
    let fm = face.interior_face_number as usize;
    let axis = fm / 2;
    let gm = point_geometry(&mesh.cell_mapping(face.interior_cell), face_reference_point(d, fm, t))?;
    let sign = if fm % 2 == 1 { 1.0 } else { -1.0 };
    let mut nv = [0.0; 3];
    for (a, v) in nv.iter_mut().enumerate().take(d) {
        *v = sign * gm.jinvt[a][axis];
    }
    let len = nv.iter().map(|v| v * v).sum::<f64>().sqrt();
    let normal = nv.map(|v| v / len);
    let area = gm.det * len;
    let jn_minus = face_local(d, axis, normal_times_jinvt(d, normal, &gm.jinvt));
    let (jinvt_plus, jn_plus) = match face.exterior_cell {
        Some(c) => {
            let fp = face.exterior_face_number as usize;
            let gp = point_geometry(&mesh.cell_mapping(c), face_reference_point(d, fp, t))?;
            (Some(gp.jinvt), face_local(d, axis, normal_times_jinvt(d, normal, &gp.jinvt)))
        }
        None => (None, jn_minus),
    };
    Ok(FacePointGeometry { x: gm.x, normal, area, jinvt_minus: gm.jinvt, jinvt_plus, jn_minus, jn_plus })
}

/// Volume of a cell by quadrature.
pub fn cell_volume(mesh: &Mesh, cell: usize, quad: &Quadrature1D) -> Result<f64> {
    let map = mesh.cell_mapping(cell);
    let (pts, wts) = tensor_points(mesh.dim, quad);
    let mut v = 0.0;
    for (xi, w) in pts.iter().zip(&wts) {
        v += point_geometry(&map, *xi)?.det * w;
    }
    Ok(v)
}

/// Area of a face by quadrature.
pub fn face_area(mesh: &Mesh, face: &RawFace, quad: &Quadrature1D) -> Result<f64> {
    let (pts, wts) = tensor_points(mesh.dim - 1, quad);
    let mut a = 0.0;
    for (t, w) in pts.iter().zip(&wts) {
        a += face_point_geometry(mesh, face, t)?.area * w;
    }
    Ok(a)
}

/// Interior penalty `(p+1)^2 (A/V⁻ + A/V⁺) / 2`; boundary faces use the
/// interior cell on both sides.
pub fn penalty_parameter(mesh: &Mesh, face: &RawFace, degree: usize, quad: &Quadrature1D) -> Result<f64> {
    let area = face_area(mesh, face, quad)?;
    let vm = cell_volume(mesh, face.interior_cell, quad)?;
    let vp = match face.exterior_cell {
        Some(c) => cell_volume(mesh, c, quad)?,
        None => vm,
    };
    let k = (degree + 1) as f64;
    Ok(k * k * 0.5 * (area / vm + area / vp))
}

/// Doubles stored per quadrature point in `d` dimensions for the variants
/// with per-point storage, excluding coefficient coordinates.
pub fn model_doubles_per_qpoint(variant: GeometryVariant, equation: Equation, d: usize) -> Option<usize> {
    match variant {
        GeometryVariant::G2 => Some(d),
        GeometryVariant::G3 => Some(d * d + 1),
        GeometryVariant::G4 => Some(match equation {
            Equation::Laplacian => d * (d + 1) / 2,
            Equation::Advection => d,
            Equation::Mass | Equation::InverseMass => 1,
        }),
        GeometryVariant::Compressed | GeometryVariant::G1 => None,
    }
}

fn packed_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Index pairs of the packed symmetric tensor: diagonal first, then upper.
fn packed_pairs(d: usize) -> Vec<(usize, usize)> {
    let mut p: Vec<_> = (0..d).map(|a| (a, a)).collect();
    for a in 0..d {
        for b in a + 1..d {
            p.push((a, b));
        }
    }
    p
}

/// `J^{-1} J^{-T} det(J)` in packed form.
fn laplace_tensor(d: usize, g: &PointGeometry) -> Vec<f64> {
    packed_pairs(d)
        .into_iter()
        .map(|(a, b)| (0..d).map(|c| g.jinvt[c][a] * g.jinvt[c][b]).sum::<f64>() * g.det)
        .collect()
}

/// `J^{-1} c det(J)`.
fn advection_vector(d: usize, g: &PointGeometry, c: [f64; 3]) -> Vec<f64> {
    (0..d).map(|b| (0..d).map(|a| g.jinvt[a][b] * c[a]).sum::<f64>() * g.det).collect()
}

/// Lanes-layout array: `((entry * comps) + comp) * lanes + lane`.
#[derive(Clone, Debug, Default, PartialEq)]
struct LaneArray {
    comps: usize,
    data: Vec<f64>,
}

impl LaneArray {
    fn new(comps: usize) -> Self {
        LaneArray { comps, data: Vec::new() }
    }

    fn entries(&self, lanes: usize) -> usize {
        self.data.len() / (self.comps * lanes)
    }

    fn push_entry(&mut self, lanes: usize, values: impl Fn(usize, usize) -> f64) {
        for c in 0..self.comps {
            for l in 0..lanes {
                self.data.push(values(l, c));
            }
        }
    }
}

/// First entry of a batch in each lane array.
#[derive(Clone, Copy, Debug, Default)]
struct EntryStart {
    jinvt: usize,
    jxw: usize,
    x: usize,
    coef: usize,
    affine: usize,
}

/// Cell geometry of one rank's cell batches.
#[derive(Clone, Debug)]
pub struct CellGeometry {
    pub variant: GeometryVariant,
    pub equation: Equation,
    pub dim: usize,
    pub lanes: usize,
    /// Quadrature points per cell.
    pub n_q: usize,
    pub compression: Vec<Compression>,
    entry_start: Vec<EntryStart>,
    jinvt: LaneArray,
    jxw: LaneArray,
    x: LaneArray,
    coef: LaneArray,
    affine: LaneArray,
    support: LaneArray,
    n_support: usize,
    mapping_values: Matrix1D,
    mapping_gradients: Matrix1D,
    pub(crate) weights: Vec<f64>,
    pub(crate) points: Vec<[f64; 3]>,
    pub field: VectorField,
}

fn detect_compression(d: usize, pts: &[PointGeometry]) -> Compression {
    let scale = pts[0].jac.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * scale;
    let constant = pts.iter().all(|p| (0..d).all(|a| (0..d).all(|b| (p.jac[a][b] - pts[0].jac[a][b]).abs() <= tol)));
    if !constant {
        return Compression::General;
    }
    let diagonal = (0..d).all(|a| (0..d).all(|b| a == b || pts[0].jac[a][b].abs() <= tol));
    if diagonal {
        Compression::Cartesian
    } else {
        Compression::Affine
    }
}

/// Precomputes the cell geometry of all cell batches of `layout`.
pub fn precompute_cell_geometry(
    mesh: &Mesh,
    layout: &DofLayout,
    quad: &Quadrature1D,
    variant: GeometryVariant,
    equation: Equation,
    field: VectorField,
) -> Result<CellGeometry> {
    let d = mesh.dim;
    let w = layout.lanes;
    let l = quad.len();
    let (points, weights) = tensor_points(d, quad);
    let nq = points.len();
    let m = mesh.mapping_degree();
    let nodes = gauss_lobatto_quadrature(m + 1)?.points;
    let mapping_values = Matrix1D::from_fn(l, m + 1, |q, j| lagrange_value(&nodes, j, quad.points[q]));
    let mapping_gradients = Matrix1D::from_fn(l, m + 1, |q, j| lagrange_derivative(&nodes, j, quad.points[q]));
    if variant == GeometryVariant::G2 && l < m + 1 {
        return Err(DgError::Unsupported(format!(
            "g2 differentiates the mapping at {l} points per direction, mapping degree {m} needs {}",
            m + 1
        )));
    }
    let n_support = (m + 1).pow(d as u32);
    let needs_x = equation == Equation::Advection && !field.is_constant();

    let mut geo = CellGeometry {
        variant,
        equation,
        dim: d,
        lanes: w,
        n_q: nq,
        compression: Vec::new(),
        entry_start: Vec::new(),
        jinvt: LaneArray::new(d * d),
        jxw: LaneArray::new(1),
        x: LaneArray::new(d),
        coef: LaneArray::new(match equation {
            Equation::Laplacian => packed_len(d),
            Equation::Advection => d,
            _ => 1,
        }),
        affine: LaneArray::new(d + d * d),
        support: LaneArray::new(d),
        n_support,
        mapping_values,
        mapping_gradients,
        weights: weights.clone(),
        points: points.clone(),
        field,
    };
    for batch in &layout.cell_batches {
        let cells: Vec<usize> = (0..w).map(|l| batch.cells[if l < batch.n_filled { l } else { 0 }] as usize).collect();
        let maps: Vec<CellMapping> = cells.iter().map(|&c| mesh.cell_mapping(c)).collect();
        let pg: Vec<Vec<PointGeometry>> =
            maps.iter().map(|mp| points.iter().map(|&xi| point_geometry(mp, xi)).collect()).collect::<Result<_>>()?;
        geo.entry_start.push(EntryStart {
            jinvt: geo.jinvt.entries(w),
            jxw: geo.jxw.entries(w),
            x: geo.x.entries(w),
            coef: geo.coef.entries(w),
            affine: geo.affine.entries(w),
        });
        let tag = pg.iter().map(|p| detect_compression(d, p)).max().unwrap_or(Compression::General);
        match variant {
            GeometryVariant::Compressed if tag != Compression::General => {
                geo.compression.push(tag);
                geo.jinvt.push_entry(w, |l, c| pg[l][0].jinvt[c / d][c % d]);
                geo.jxw.push_entry(w, |l, _| pg[l][0].det);
                geo.affine.push_entry(w, |l, c| {
                    let p = &pg[l][0];
                    if c < d {
                        // Image of the reference origin.
                        p.x[c] - (0..d).map(|b| p.jac[c][b] * points[0][b]).sum::<f64>()
                    } else {
                        p.jac[(c - d) / d][(c - d) % d]
                    }
                });
                if equation == Equation::Laplacian {
                    let t: Vec<Vec<f64>> = pg.iter().map(|p| laplace_tensor(d, &p[0])).collect();
                    geo.coef.push_entry(w, |l, c| t[l][c]);
                }
            }
            GeometryVariant::Compressed | GeometryVariant::G3 => {
                geo.compression.push(Compression::General);
                for q in 0..nq {
                    geo.jinvt.push_entry(w, |l, c| pg[l][q].jinvt[c / d][c % d]);
                    geo.jxw.push_entry(w, |l, _| pg[l][q].det * weights[q]);
                    if needs_x {
                        geo.x.push_entry(w, |l, c| pg[l][q].x[c]);
                    }
                }
            }
            GeometryVariant::G1 => {
                geo.compression.push(Compression::General);
                for j in 0..n_support {
                    geo.support.push_entry(w, |l, c| maps[l].points[j][c]);
                }
            }
            GeometryVariant::G2 => {
                geo.compression.push(Compression::General);
                for q in 0..nq {
                    geo.x.push_entry(w, |l, c| pg[l][q].x[c]);
                }
            }
            GeometryVariant::G4 => {
                geo.compression.push(Compression::General);
                for q in 0..nq {
                    let vals: Vec<Vec<f64>> = pg
                        .iter()
                        .map(|p| match equation {
                            Equation::Laplacian => laplace_tensor(d, &p[q]).iter().map(|v| v * weights[q]).collect(),
                            Equation::Advection => advection_vector(d, &p[q], geo.field.eval(p[q].x))
                                .iter()
                                .map(|v| v * weights[q])
                                .collect(),
                            _ => vec![p[q].det * weights[q]],
                        })
                        .collect();
                    geo.coef.push_entry(w, |l, c| vals[l][c]);
                }
            }
        }
    }
    Ok(geo)
}

/// Per-batch scratch for the variants that compute the Jacobian on the fly.
#[derive(Clone, Debug, Default)]
pub struct GeometryScratch {
    jinvt: Vec<f64>,
    jxw: Vec<f64>,
    x: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
enum ViewKind {
    Constant { diagonal: bool },
    PerPoint,
    Coefficient,
}

/// Geometry of one cell batch as consumed by the quadrature-point operations.
#[derive(Clone, Copy, Debug)]
pub struct CellBatchGeometry<'a> {
    kind: ViewKind,
    d: usize,
    jinvt: &'a [f64],
    jxw: &'a [f64],
    x: &'a [f64],
    coef: &'a [f64],
    affine: &'a [f64],
    weights: &'a [f64],
    points: &'a [[f64; 3]],
    field: &'a VectorField,
}

impl CellGeometry {
    fn slice(arr: &LaneArray, w: usize, start: usize, count: usize) -> &[f64] {
        let per = arr.comps * w;
        if arr.data.is_empty() {
            return &[];
        }
        &arr.data[start * per..(start + count) * per]
    }

    /// Doubles stored per cell for the geometry itself and for coefficient
    /// coordinates, averaged over the batches.
    pub fn stored_doubles_per_cell(&self) -> (f64, f64) {
        let nb = self.compression.len().max(1) as f64;
        let w = self.lanes as f64;
        let geom = (self.jinvt.data.len()
            + self.jxw.data.len()
            + self.coef.data.len()
            + self.affine.data.len()
            + self.support.data.len()) as f64;
        let x = self.x.data.len() as f64;
        match self.variant {
            GeometryVariant::G2 => ((geom + x) / (nb * w), 0.0),
            _ => (geom / (nb * w), x / (nb * w)),
        }
    }

    /// Geometry doubles per quadrature point, excluding coefficient coordinates.
    pub fn stored_doubles_per_qpoint(&self) -> f64 {
        self.stored_doubles_per_cell().0 / self.n_q as f64
    }

    /// View of batch `b`; `G1` and `G2` evaluate the Jacobians into `scratch`.
    pub fn batch<'a, N: Number>(
        &'a self,
        b: usize,
        shapes: &ShapeMatrices1D,
        scratch: &'a mut GeometryScratch,
    ) -> CellBatchGeometry<'a> {
        let w = self.lanes;
        let d = self.dim;
        let nq = self.n_q;
        let start = self.entry_start[b];
        let base = CellBatchGeometry {
            kind: ViewKind::PerPoint,
            d,
            jinvt: &[],
            jxw: &[],
            x: &[],
            coef: &[],
            affine: &[],
            weights: &self.weights,
            points: &self.points,
            field: &self.field,
        };
        match self.variant {
            GeometryVariant::Compressed if self.compression[b] != Compression::General => CellBatchGeometry {
                kind: ViewKind::Constant { diagonal: self.compression[b] == Compression::Cartesian },
                jinvt: Self::slice(&self.jinvt, w, start.jinvt, 1),
                jxw: Self::slice(&self.jxw, w, start.jxw, 1),
                affine: Self::slice(&self.affine, w, start.affine, 1),
                coef: Self::slice(&self.coef, w, start.coef, 1),
                ..base
            },
            GeometryVariant::Compressed | GeometryVariant::G3 => CellBatchGeometry {
                jinvt: Self::slice(&self.jinvt, w, start.jinvt, nq),
                jxw: Self::slice(&self.jxw, w, start.jxw, nq),
                x: Self::slice(&self.x, w, start.x, nq),
                ..base
            },
            GeometryVariant::G4 => CellBatchGeometry {
                kind: ViewKind::Coefficient,
                coef: Self::slice(&self.coef, w, start.coef, nq),
                ..base
            },
            GeometryVariant::G1 | GeometryVariant::G2 => {
                let needs_x = self.equation == Equation::Advection && !self.field.is_constant();
                scratch.jinvt.resize(nq * d * d * w, 0.0);
                scratch.jxw.resize(nq * w, 0.0);
                scratch.x.resize(if needs_x { nq * d * w } else { 0 }, 0.0);
                let (x_out, jac) = if self.variant == GeometryVariant::G1 {
                    let sup = Self::slice(&self.support, w, b * self.n_support, self.n_support);
                    self.jacobians_from_support::<N>(sup, needs_x)
                } else {
                    let xq = Self::slice(&self.x, w, start.x, nq);
                    let mut field = vec![N::zero(); d * nq];
                    for q in 0..nq {
                        for a in 0..d {
                            field[a * nq + q] = N::load(&xq[(q * d + a) * w..]);
                        }
                    }
                    let jac = cell_jacobians_from_qpoints(d, shapes, &field);
                    (if needs_x { field } else { Vec::new() }, jac)
                };
                for q in 0..nq {
                    let mut j = [[N::zero(); 3]; 3];
                    for a in 0..d {
                        for bb in 0..d {
                            j[a][bb] = jac[(a * d + bb) * nq + q];
                        }
                    }
                    let (inv, det) = invert_jacobian(d, &j);
                    for a in 0..d {
                        for bb in 0..d {
                            inv[a][bb].store(&mut scratch.jinvt[((q * d * d) + a * d + bb) * w..]);
                        }
                    }
                    det.scale(self.weights[q]).store(&mut scratch.jxw[q * w..]);
                    if needs_x {
                        for a in 0..d {
                            x_out[a * nq + q].store(&mut scratch.x[(q * d + a) * w..]);
                        }
                    }
                }
                CellBatchGeometry { jinvt: &scratch.jinvt, jxw: &scratch.jxw, x: &scratch.x, ..base }
            }
        }
    }

    /// Positions (if requested) and Jacobian entries `J[a][b]` at the
    /// quadrature points, component-major, from mapping support points.
    fn jacobians_from_support<N: Number>(&self, sup: &[f64], with_x: bool) -> (Vec<N>, Vec<N>) {
        let d = self.dim;
        let w = self.lanes;
        let ns = self.mapping_values.cols;
        let l = self.mapping_values.rows;
        let nq = self.n_q;
        let val = Kernel::Plain(&self.mapping_values);
        let der = Kernel::Plain(&self.mapping_gradients);
        let big = ns.max(l).pow(d as u32);
        let mut s0 = vec![N::zero(); big];
        let mut s1 = vec![N::zero(); big];
        let mut x = if with_x { vec![N::zero(); d * nq] } else { Vec::new() };
        let mut jac = vec![N::zero(); d * d * nq];
        let mut coord = vec![N::zero(); self.n_support];
        let mut n_sweeps = 0;
        for a in 0..d {
            for (j, c) in coord.iter_mut().enumerate() {
                *c = N::load(&sup[(j * d + a) * w..]);
            }
            let targets = (0..d).map(Some).chain(with_x.then_some(None));
            for deriv in targets {
                // Axis-by-axis with the derivative matrix on `deriv`.
                s0[..coord.len()].copy_from_slice(&coord);
                for ax in 0..d {
                    let k = if Some(ax) == deriv { der } else { val };
                    let pre = l.pow(ax as u32);
                    let post = ns.pow((d - 1 - ax) as u32);
                    sweep(k, pre, post, &s0, &mut s1, false);
                    std::mem::swap(&mut s0, &mut s1);
                    n_sweeps += 1;
                }
                let out = match deriv {
                    Some(bb) => &mut jac[(a * d + bb) * nq..(a * d + bb + 1) * nq],
                    None => &mut x[a * nq..(a + 1) * nq],
                };
                out.copy_from_slice(&s0[..nq]);
            }
        }
        crate::counters::record_sweeps(Sweep::Geometry, n_sweeps);
        (x, jac)
    }
}

/// Jacobian entries `J[a][b] = ∂x_a/∂ξ_b` at the quadrature points from the
/// component-major quadrature point coordinates, by collocation derivative.
/// Requires the collocation quadrature of `shapes`.
pub fn cell_jacobians_from_qpoints<N: Number>(d: usize, shapes: &ShapeMatrices1D, x: &[N]) -> Vec<N> {
    let nq = shapes.n_q.pow(d as u32);
    let kernel = Kernel::Plain(&shapes.colloc.plain);
    let mut jac = vec![N::zero(); d * d * nq];
    for a in 0..d {
        gradient_sweeps(
            d,
            kernel,
            &x[a * nq..(a + 1) * nq],
            &mut jac[a * d * nq..(a + 1) * d * nq],
            false,
            Sweep::Geometry,
        );
    }
    jac
}

impl<'a> CellBatchGeometry<'a> {
    #[inline(always)]
    fn ld<N: Number>(arr: &[f64], idx: usize) -> N {
        N::load(&arr[idx * N::LANES..])
    }

    /// `det(J) w_q`.
    #[inline(always)]
    pub fn jxw<N: Number>(&self, q: usize) -> N {
        match self.kind {
            ViewKind::Constant { .. } => Self::ld::<N>(self.jxw, 0).scale(self.weights[q]),
            ViewKind::PerPoint => Self::ld(self.jxw, q),
            ViewKind::Coefficient => Self::ld(self.coef, q),
        }
    }

    /// `J^{-1} J^{-T} det(J) w_q` times the reference gradient `g`.
    #[inline(always)]
    pub fn laplace_flux<N: Number>(&self, q: usize, g: [N; 3]) -> [N; 3] {
        let d = self.d;
        let mut t = [N::zero(); 3];
        match self.kind {
            ViewKind::Constant { diagonal: true } => {
                let w = self.weights[q];
                for a in 0..d {
                    t[a] = g[a] * Self::ld::<N>(self.coef, a).scale(w);
                }
            }
            ViewKind::Constant { diagonal: false } => {
                let h = packed_apply(d, |i| Self::ld::<N>(self.coef, i), g);
                let w = self.weights[q];
                for a in 0..d {
                    t[a] = h[a].scale(w);
                }
            }
            ViewKind::Coefficient => {
                let n = packed_len(d);
                t = packed_apply(d, |i| Self::ld::<N>(self.coef, q * n + i), g);
            }
            ViewKind::PerPoint => {
                let base = q * d * d;
                let jxw: N = Self::ld(self.jxw, q);
                let mut h = [N::zero(); 3];
                for a in 0..d {
                    let mut acc = g[0] * Self::ld::<N>(self.jinvt, base + a * d);
                    for b in 1..d {
                        acc = g[b].fma(Self::ld(self.jinvt, base + a * d + b), acc);
                    }
                    h[a] = acc * jxw;
                }
                for b in 0..d {
                    let mut acc = h[0] * Self::ld::<N>(self.jinvt, base + b);
                    for a in 1..d {
                        acc = h[a].fma(Self::ld(self.jinvt, base + a * d + b), acc);
                    }
                    t[b] = acc;
                }
            }
        }
        t
    }

    /// Physical position of quadrature point `q` on every lane.
    fn position(&self, q: usize, lanes: usize) -> Vec<[f64; 3]> {
        let d = self.d;
        (0..lanes)
            .map(|l| {
                let mut x = [0.0; 3];
                match self.kind {
                    ViewKind::Constant { .. } => {
                        let xi = self.points[q];
                        for (a, xa) in x.iter_mut().enumerate().take(d) {
                            *xa = self.affine[a * lanes + l]
                                + (0..d).map(|b| self.affine[(d + a * d + b) * lanes + l] * xi[b]).sum::<f64>();
                        }
                    }
                    _ => {
                        for (a, xa) in x.iter_mut().enumerate().take(d) {
                            *xa = self.x[(q * d + a) * lanes + l];
                        }
                    }
                }
                x
            })
            .collect()
    }

    /// `J^{-1} c(x_q) det(J) w_q u`.
    #[inline(always)]
    pub fn advection_flux<N: Number>(&self, q: usize, u: N) -> [N; 3] {
        let d = self.d;
        let mut t = [N::zero(); 3];
        if let ViewKind::Coefficient = self.kind {
            for (a, ta) in t.iter_mut().enumerate().take(d) {
                *ta = Self::ld::<N>(self.coef, q * d + a) * u;
            }
            return t;
        }
        let mut c = [N::zero(); 3];
        match self.field {
            VectorField::Constant(v) => {
                for a in 0..d {
                    c[a] = N::splat(v[a]);
                }
            }
            VectorField::Function(f) => {
                let xs = self.position(q, N::LANES);
                let vals: Vec<[f64; 3]> = xs.into_iter().map(|x| f(x)).collect();
                for a in 0..d {
                    c[a] = N::from_fn(|l| vals[l][a]);
                }
            }
        }
        let base = match self.kind {
            ViewKind::Constant { .. } => 0,
            _ => q * d * d,
        };
        let s = self.jxw::<N>(q) * u;
        for b in 0..d {
            let mut acc = c[0] * Self::ld::<N>(self.jinvt, base + b);
            for a in 1..d {
                acc = c[a].fma(Self::ld(self.jinvt, base + a * d + b), acc);
            }
            t[b] = acc * s;
        }
        t
    }
}

#[inline(always)]
fn packed_apply<N: Number>(d: usize, c: impl Fn(usize) -> N, g: [N; 3]) -> [N; 3] {
    let mut t = [N::zero(); 3];
    match d {
        1 => t[0] = c(0) * g[0],
        2 => {
            let off = c(2);
            t[0] = g[1].fma(off, c(0) * g[0]);
            t[1] = g[0].fma(off, c(1) * g[1]);
        }
        _ => {
            let (c01, c02, c12) = (c(3), c(4), c(5));
            t[0] = g[2].fma(c02, g[1].fma(c01, c(0) * g[0]));
            t[1] = g[2].fma(c12, g[0].fma(c01, c(1) * g[1]));
            t[2] = g[1].fma(c12, g[0].fma(c02, c(2) * g[2]));
        }
    }
    t
}

/// Face data of one rank's face batches, per face quadrature point.
#[derive(Clone, Debug)]
pub struct FaceGeometry {
    pub dim: usize,
    pub lanes: usize,
    pub n_q: usize,
    jxw: LaneArray,
    normal: LaneArray,
    jn_minus: LaneArray,
    jn_plus: LaneArray,
    x: LaneArray,
    tau: LaneArray,
}

/// Geometry of one face batch.
#[derive(Clone, Copy, Debug)]
pub struct FaceBatchGeometry<'a> {
    d: usize,
    jxw: &'a [f64],
    normal: &'a [f64],
    jn_minus: &'a [f64],
    jn_plus: &'a [f64],
    x: &'a [f64],
    tau: &'a [f64],
}

pub fn precompute_face_geometry(
    mesh: &Mesh,
    faces: &[RawFace],
    batches: &[FaceInfoBatch],
    lanes: usize,
    degree: usize,
    quad: &Quadrature1D,
) -> Result<FaceGeometry> {
    let d = mesh.dim;
    let (pts, wts) = tensor_points(d - 1, quad);
    let nq = pts.len();
    let mut g = FaceGeometry {
        dim: d,
        lanes,
        n_q: nq,
        jxw: LaneArray::new(1),
        normal: LaneArray::new(d),
        jn_minus: LaneArray::new(d),
        jn_plus: LaneArray::new(d),
        x: LaneArray::new(d),
        tau: LaneArray::new(1),
    };
    let mut volumes: HashMap<usize, f64> = HashMap::new();
    let mut volume = |c: usize| -> Result<f64> {
        if let Some(v) = volumes.get(&c) {
            return Ok(*v);
        }
        let v = cell_volume(mesh, c, quad)?;
        volumes.insert(c, v);
        Ok(v)
    };
    let k2 = ((degree + 1) * (degree + 1)) as f64;
    for b in batches {
        let ids: Vec<usize> = (0..lanes).map(|l| b.faces[if l < b.n_lanes_filled { l } else { 0 }]).collect();
        let fp: Vec<Vec<FacePointGeometry>> = ids
            .iter()
            .map(|&f| pts.iter().map(|t| face_point_geometry(mesh, &faces[f], t)).collect())
            .collect::<Result<_>>()?;
        let mut taus = Vec::with_capacity(lanes);
        for (l, &f) in ids.iter().enumerate() {
            let area: f64 = fp[l].iter().zip(&wts).map(|(p, w)| p.area * w).sum();
            let vm = volume(faces[f].interior_cell)?;
            let vp = match faces[f].exterior_cell {
                Some(c) => volume(c)?,
                None => vm,
            };
            taus.push(k2 * 0.5 * (area / vm + area / vp));
        }
        g.tau.push_entry(lanes, |l, _| taus[l]);
        for q in 0..nq {
            g.jxw.push_entry(lanes, |l, _| fp[l][q].area * wts[q]);
            g.normal.push_entry(lanes, |l, c| fp[l][q].normal[c]);
            g.jn_minus.push_entry(lanes, |l, c| fp[l][q].jn_minus[c]);
            g.jn_plus.push_entry(lanes, |l, c| fp[l][q].jn_plus[c]);
            g.x.push_entry(lanes, |l, c| fp[l][q].x[c]);
        }
    }
    Ok(g)
}

impl FaceGeometry {
    /// Total doubles held in the face data arrays.
    pub fn stored_doubles(&self) -> usize {
        [&self.jxw, &self.normal, &self.jn_minus, &self.jn_plus, &self.x, &self.tau].iter().map(|a| a.data.len()).sum()
    }

    pub fn batch(&self, b: usize) -> FaceBatchGeometry<'_> {
        let w = self.lanes;
        let nq = self.n_q;
        fn s(a: &LaneArray, b: usize, nq: usize, w: usize) -> &[f64] {
            &a.data[b * nq * a.comps * w..(b + 1) * nq * a.comps * w]
        }
        FaceBatchGeometry {
            d: self.dim,
            jxw: s(&self.jxw, b, nq, w),
            normal: s(&self.normal, b, nq, w),
            jn_minus: s(&self.jn_minus, b, nq, w),
            jn_plus: s(&self.jn_plus, b, nq, w),
            x: s(&self.x, b, nq, w),
            tau: &self.tau.data[b * w..(b + 1) * w],
        }
    }
}

impl<'a> FaceBatchGeometry<'a> {
    #[inline(always)]
    pub fn jxw<N: Number>(&self, q: usize) -> N {
        N::load(&self.jxw[q * N::LANES..])
    }

    #[inline(always)]
    pub fn tau<N: Number>(&self) -> N {
        N::load(self.tau)
    }

    #[inline(always)]
    pub fn normal<N: Number>(&self, q: usize) -> [N; 3] {
        vec3(self.normal, self.d, q)
    }

    /// `n⁻ · J^{-T}` of the given side in face-local order.
    #[inline(always)]
    pub fn jn<N: Number>(&self, exterior: bool, q: usize) -> [N; 3] {
        vec3(if exterior { self.jn_plus } else { self.jn_minus }, self.d, q)
    }

    /// Physical positions of point `q` on every lane.
    pub fn position(&self, q: usize, lanes: usize) -> Vec<[f64; 3]> {
        (0..lanes)
            .map(|l| {
                let mut x = [0.0; 3];
                for (a, xa) in x.iter_mut().enumerate().take(self.d) {
                    *xa = self.x[(q * self.d + a) * lanes + l];
                }
                x
            })
            .collect()
    }
}

#[inline(always)]
fn vec3<N: Number>(arr: &[f64], d: usize, q: usize) -> [N; 3] {
    let w = N::LANES;
    let mut v = [N::zero(); 3];
    for (a, va) in v.iter_mut().enumerate().take(d) {
        *va = N::load(&arr[(q * d + a) * w..]);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{gauss_quadrature, make_basis, shape_matrices, BasisKind};
    use crate::dof::build_dof_layout;
    use crate::mesh::{all_dirichlet, enumerate_faces, Mapping, Partition};

    type L4 = Lanes<4>;

    fn deformed(d: usize, n: usize, m: usize) -> Mesh {
        Mesh::unit_box(d, n, Mapping::PolynomialDeformation { degree: m, amplitude: 0.08 }, all_dirichlet()).unwrap()
    }

    #[test]
    fn cartesian_point() {
        let m =
            crate::mesh::build_mesh(2, &[2, 4], &[0.0, 0.0], &[1.0, 1.0], Mapping::Cartesian, all_dirichlet()).unwrap();
        let g = point_geometry(&m.cell_mapping(3), [0.3, 0.7, 0.0]).unwrap();
        assert!((g.jinvt[0][0] - 2.0).abs() < 1e-14);
        assert!((g.jinvt[1][1] - 4.0).abs() < 1e-14);
        assert!(g.jinvt[0][1].abs() < 1e-14);
        assert!((g.det - 0.125).abs() < 1e-15);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = deformed(3, 2, 3);
        let map = m.cell_mapping(5);
        let xi = [0.31, 0.62, 0.47];
        let g = point_geometry(&map, xi).unwrap();
        let h = 1e-7;
        for b in 0..3 {
            let (mut p, mut q) = (xi, xi);
            p[b] += h;
            q[b] -= h;
            let (xp, _) = map.evaluate(p);
            let (xq, _) = map.evaluate(q);
            for a in 0..3 {
                assert!(((xp[a] - xq[a]) / (2.0 * h) - g.jac[a][b]).abs() < 1e-6);
            }
        }
        // J^{-T} J^T = I.
        for a in 0..3 {
            for b in 0..3 {
                let v: f64 = (0..3).map(|c| g.jinvt[a][c] * g.jac[b][c]).sum();
                assert!((v - f64::from(u8::from(a == b))).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unit_cube_laplace_coefficient_is_weight() {
        let m = Mesh::unit_box(3, 1, Mapping::Cartesian, all_dirichlet()).unwrap();
        let p = Partition::slabs(&m, 1).unwrap();
        let layout = build_dof_layout(&m, &p, 0, 3, 1).unwrap();
        let quad = gauss_quadrature(3).unwrap();
        let g = precompute_cell_geometry(
            &m,
            &layout,
            &quad,
            GeometryVariant::G4,
            Equation::Laplacian,
            VectorField::Constant([0.0; 3]),
        )
        .unwrap();
        let shapes = shape_matrices(&make_basis(BasisKind::LagrangeGauss, 2).unwrap(), &quad).unwrap();
        let mut s = GeometryScratch::default();
        let v = g.batch::<Lanes<1>>(0, &shapes, &mut s);
        let t = v.laplace_flux(4, [Lanes::<1>::splat(1.0), Lanes::splat(2.0), Lanes::splat(3.0)]);
        let w = g.weights[4];
        for a in 0..3 {
            assert!((t[a].lane(0) - (a + 1) as f64 * w).abs() < 1e-15);
        }
    }

    #[test]
    fn variants_agree_on_deformed_mesh() {
        for d in [2, 3] {
            let p = 3;
            let m = deformed(d, 2, 2);
            let part = Partition::slabs(&m, 1).unwrap();
            let layout = build_dof_layout(&m, &part, 0, p + 1, 4).unwrap();
            let quad = gauss_quadrature(p + 1).unwrap();
            let shapes = shape_matrices(&make_basis(BasisKind::HermiteLike, p).unwrap(), &quad).unwrap();
            let field = VectorField::Function(Arc::new(|x: [f64; 3]| [1.0 + x[1], 0.5 - x[0], 0.3]));
            for eq in [Equation::Laplacian, Equation::Advection, Equation::Mass] {
                let reference =
                    precompute_cell_geometry(&m, &layout, &quad, GeometryVariant::G3, eq, field.clone()).unwrap();
                for variant in GeometryVariant::ALL {
                    let g = precompute_cell_geometry(&m, &layout, &quad, variant, eq, field.clone()).unwrap();
                    for b in 0..layout.cell_batches.len() {
                        let mut s1 = GeometryScratch::default();
                        let mut s2 = GeometryScratch::default();
                        let vr = reference.batch::<L4>(b, &shapes, &mut s1);
                        let vg = g.batch::<L4>(b, &shapes, &mut s2);
                        for q in 0..g.n_q {
                            let gr = [L4::splat(0.3), L4::splat(-1.1), L4::splat(0.7)];
                            let (a, c) = match eq {
                                Equation::Laplacian => (vr.laplace_flux(q, gr), vg.laplace_flux(q, gr)),
                                Equation::Advection => {
                                    (vr.advection_flux(q, L4::splat(1.3)), vg.advection_flux(q, L4::splat(1.3)))
                                }
                                _ => ([vr.jxw(q), L4::zero(), L4::zero()], [vg.jxw(q), L4::zero(), L4::zero()]),
                            };
                            for i in 0..d {
                                for l in 0..4 {
                                    assert!((a[i].lane(l) - c[i].lane(l)).abs() < 1e-12, "{variant:?} {eq:?} d={d}");
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn qpoint_jacobians_exact_for_polynomial_mapping() {
        let d = 2;
        let m = deformed(d, 3, 2);
        let quad = gauss_quadrature(4).unwrap();
        let shapes = shape_matrices(&make_basis(BasisKind::LagrangeGaussLobatto, 3).unwrap(), &quad).unwrap();
        let (pts, _) = tensor_points(d, &quad);
        let map = m.cell_mapping(4);
        let pg: Vec<_> = pts.iter().map(|&xi| point_geometry(&map, xi).unwrap()).collect();
        let nq = pts.len();
        let mut x = vec![Lanes::<1>::zero(); d * nq];
        for q in 0..nq {
            for a in 0..d {
                x[a * nq + q] = Lanes::splat(pg[q].x[a]);
            }
        }
        let jac = cell_jacobians_from_qpoints(d, &shapes, &x);
        for q in 0..nq {
            for a in 0..d {
                for b in 0..d {
                    assert!((jac[(a * d + b) * nq + q].lane(0) - pg[q].jac[a][b]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn compression_detected() {
        let m = Mesh::unit_box(2, 3, Mapping::Cartesian, all_dirichlet()).unwrap();
        let part = Partition::slabs(&m, 1).unwrap();
        let layout = build_dof_layout(&m, &part, 0, 3, 4).unwrap();
        let quad = gauss_quadrature(3).unwrap();
        let g = precompute_cell_geometry(
            &m,
            &layout,
            &quad,
            GeometryVariant::Compressed,
            Equation::Laplacian,
            VectorField::Constant([0.0; 3]),
        )
        .unwrap();
        assert!(g.compression.iter().all(|&c| c == Compression::Cartesian));
        let md = deformed(2, 3, 2);
        let g = precompute_cell_geometry(
            &md,
            &layout,
            &quad,
            GeometryVariant::Compressed,
            Equation::Laplacian,
            VectorField::Constant([0.0; 3]),
        )
        .unwrap();
        assert!(g.compression.iter().all(|&c| c == Compression::General));
    }

    #[test]
    fn byte_model_in_3d() {
        let m = deformed(3, 2, 2);
        let part = Partition::slabs(&m, 1).unwrap();
        let layout = build_dof_layout(&m, &part, 0, 3, 4).unwrap();
        let quad = gauss_quadrature(3).unwrap();
        let c = VectorField::Constant([1.0, 0.5, 0.2]);
        let count =
            |v, e| precompute_cell_geometry(&m, &layout, &quad, v, e, c.clone()).unwrap().stored_doubles_per_qpoint();
        assert_eq!(count(GeometryVariant::G2, Equation::Laplacian), 3.0);
        assert_eq!(count(GeometryVariant::G3, Equation::Laplacian), 10.0);
        assert_eq!(count(GeometryVariant::G4, Equation::Laplacian), 6.0);
        assert_eq!(count(GeometryVariant::G4, Equation::Advection), 3.0);
        assert_eq!(model_doubles_per_qpoint(GeometryVariant::G3, Equation::Advection, 3), Some(10));
    }

    #[test]
    fn face_normals_and_jn() {
        let m = deformed(2, 3, 2);
        let quad = gauss_quadrature(3).unwrap();
        for f in enumerate_faces(&m) {
            let fp = face_point_geometry(&m, &f, &[0.37]).unwrap();
            let len: f64 = fp.normal.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((len - 1.0).abs() < 1e-12);
            assert!(fp.area > 0.0);
            // j_n · ∇ξφ = n · (J^{-T} ∇ξφ) for an arbitrary reference gradient.
            let axis = f.axis();
            let gref = [0.4, -1.3, 0.0];
            let phys: Vec<f64> = (0..2).map(|a| (0..2).map(|b| fp.jinvt_minus[a][b] * gref[b]).sum()).collect();
            let dn: f64 = (0..2).map(|a| fp.normal[a] * phys[a]).sum();
            let local = face_local(2, axis, gref);
            let via_jn: f64 = (0..2).map(|i| fp.jn_minus[i] * local[i]).sum();
            assert!((dn - via_jn).abs() < 1e-12);
            if let Some(c) = f.exterior_cell {
                let fp2 = face_point_geometry(
                    &m,
                    &RawFace {
                        interior_cell: c,
                        exterior_cell: Some(f.interior_cell),
                        interior_face_number: f.exterior_face_number,
                        exterior_face_number: f.interior_face_number,
                        ..f
                    },
                    &[0.37],
                )
                .unwrap();
                for a in 0..2 {
                    assert!((fp.normal[a] + fp2.normal[a]).abs() < 1e-12);
                }
            }
            assert!(penalty_parameter(&m, &f, 2, &quad).unwrap() > 0.0);
        }
    }
}
