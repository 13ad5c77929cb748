//! Brute-force references: explicit Kronecker products and assembled
//! operator matrices built by quadrature over all basis pairs.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::basis::{gauss_quadrature, make_basis, Basis1D, Matrix1D};
use crate::error::{invalid, DgError, Result};
use crate::geometry::{
    face_point_geometry, face_reference_point, penalty_parameter, point_geometry, tensor_points, Equation, ScalarFn,
};
use crate::mesh::{enumerate_faces, Mesh};
use crate::operators::OperatorConfig;

/// Largest number of unknowns the assembler accepts.
pub const MAX_ORACLE_DOFS: usize = 20_000;
/// Largest dense matrix handed to the eigensolver.
pub const MAX_EIGEN_DOFS: usize = 4_000;

/// Applies `factors[d-1] ⊗ … ⊗ factors[0]` by forming the full matrix.
/// The first factor acts on the fastest index.
pub fn dense_kronecker_apply(factors: &[&Matrix1D], input: &[f64]) -> Result<Vec<f64>> {
    let d = factors.len();
    if d == 0 || d > 3 || factors.iter().any(|f| f.rows > 8 || f.cols > 8) {
        return Err(DgError::GuardExceeded("dense Kronecker product needs d <= 3 and factors of size <= 8".into()));
    }
    let rows: usize = factors.iter().map(|f| f.rows).product();
    let cols: usize = factors.iter().map(|f| f.cols).product();
    if input.len() != cols {
        return invalid(format!("input has {} entries, expected {cols}", input.len()));
    }
    let mut full = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let (mut ii, mut jj, mut v) = (i, j, 1.0);
            for f in factors {
                v *= f.get(ii % f.rows, jj % f.cols);
                ii /= f.rows;
                jj /= f.cols;
            }
            full[i * cols + j] = v;
        }
    }
    Ok((0..rows).map(|i| (0..cols).map(|j| full[i * cols + j] * input[j]).sum()).collect())
}

/// Assembled operator stored as dense cell-to-cell blocks, rows and columns
/// in natural numbering (`cell * block + j`).
#[derive(Clone, Debug)]
pub struct AssembledMatrix {
    pub n: usize,
    pub block: usize,
    pub blocks: BTreeMap<(usize, usize), Vec<f64>>,
}

impl AssembledMatrix {
    fn new(n_cells: usize, block: usize) -> Self {
        AssembledMatrix { n: n_cells * block, block, blocks: BTreeMap::new() }
    }

    fn block_mut(&mut self, row: usize, col: usize) -> &mut Vec<f64> {
        let b = self.block;
        self.blocks.entry((row, col)).or_insert_with(|| vec![0.0; b * b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let b = self.block;
        self.blocks.get(&(i / b, j / b)).map_or(0.0, |m| m[(i % b) * b + j % b])
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let b = self.block;
        let mut y = vec![0.0; self.n];
        for (&(r, c), m) in &self.blocks {
            let xs = &x[c * b..(c + 1) * b];
            for (i, yi) in y[r * b..(r + 1) * b].iter_mut().enumerate() {
                *yi += m[i * b..(i + 1) * b].iter().zip(xs).map(|(a, v)| a * v).sum::<f64>();
            }
        }
        y
    }

    pub fn transpose(&self) -> AssembledMatrix {
        let b = self.block;
        let mut t = AssembledMatrix { n: self.n, block: b, blocks: BTreeMap::new() };
        for (&(r, c), m) in &self.blocks {
            let tb = t.block_mut(c, r);
            for i in 0..b {
                for j in 0..b {
                    tb[j * b + i] = m[i * b + j];
                }
            }
        }
        t
    }

    /// Largest entry of `A - Aᵀ`.
    pub fn asymmetry(&self) -> f64 {
        let t = self.transpose();
        let mut worst: f64 = 0.0;
        for (key, m) in &self.blocks {
            match t.blocks.get(key) {
                Some(mt) => worst = m.iter().zip(mt).fold(worst, |w, (a, b)| w.max((a - b).abs())),
                None => worst = m.iter().fold(worst, |w, a| w.max(a.abs())),
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks.values().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.apply(&vec![1.0; self.n])
    }

    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        if self.n > MAX_EIGEN_DOFS {
            return Err(DgError::GuardExceeded(format!("{} unknowns exceed the dense limit {MAX_EIGEN_DOFS}", self.n)));
        }
        Ok(DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j)))
    }

    /// Eigenvalues of the symmetric part, ascending.
    pub fn symmetric_eigenvalues(&self) -> Result<Vec<f64>> {
        let a = self.to_dense()?;
        let sym = (&a + a.transpose()) * 0.5;
        let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        Ok(ev)
    }

    /// Writes nonzero entries as `row col value` lines.
    pub fn write_triplets(&self, mut out: impl Write) -> Result<()> {
        let b = self.block;
        for (&(r, c), m) in &self.blocks {
            for i in 0..b {
                for j in 0..b {
                    let v = m[i * b + j];
                    if v != 0.0 {
                        writeln!(out, "{} {} {:.17e}", r * b + i, c * b + j, v)
                            .map_err(|e| DgError::Io(e.to_string()))?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Tensor-product basis values and reference gradients at a point.
fn eval_basis(basis: &Basis1D, d: usize, xi: [f64; 3]) -> (Vec<f64>, Vec<[f64; 3]>) {
    let k = basis.n_functions();
    let n = k.pow(d as u32);
    let mut v1 = [[0.0; 32]; 3];
    let mut g1 = [[0.0; 32]; 3];
    for a in 0..d {
        for j in 0..k {
            v1[a][j] = basis.value(j, xi[a]);
            g1[a][j] = basis.derivative(j, xi[a]);
        }
    }
    let mut vals = vec![0.0; n];
    let mut grads = vec![[0.0; 3]; n];
    for i in 0..n {
        let mut idx = [0; 3];
        let mut r = i;
        for ia in idx.iter_mut().take(d) {
            *ia = r % k;
            r /= k;
        }
        vals[i] = (0..d).map(|a| v1[a][idx[a]]).product();
        for b in 0..d {
            grads[i][b] = (0..d).map(|a| if a == b { g1[a][idx[a]] } else { v1[a][idx[a]] }).product();
        }
    }
    (vals, grads)
}

fn physical(d: usize, jinvt: &[[f64; 3]; 3], g: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (a, o) in out.iter_mut().enumerate().take(d) {
        *o = (0..d).map(|b| jinvt[a][b] * g[b]).sum();
    }
    out
}

fn dot(d: usize, a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..d).map(|i| a[i] * b[i]).sum()
}

fn check_size(config: &OperatorConfig, mesh: &Mesh) -> Result<usize> {
    config.validate()?;
    if mesh.dim != config.dim {
        return invalid("mesh and operator dimensions differ");
    }
    let n = mesh.n_cells() * config.dofs_per_cell();
    if n > MAX_ORACLE_DOFS {
        return Err(DgError::GuardExceeded(format!("{n} unknowns exceed the oracle limit {MAX_ORACLE_DOFS}")));
    }
    Ok(n)
}

/// Assembles the operator described by `config` on `mesh`.
pub fn assemble_operator(config: &OperatorConfig, mesh: &Mesh) -> Result<AssembledMatrix> {
    check_size(config, mesh)?;
    let d = config.dim;
    let k = config.degree + 1;
    let nb = config.dofs_per_cell();
    let basis = make_basis(config.basis, config.degree)?;
    let quad = gauss_quadrature(k)?;
    let (points, weights) = tensor_points(d, &quad);
    let cell_basis: Vec<_> = points.iter().map(|xi| eval_basis(&basis, d, *xi)).collect();
    let mut m = AssembledMatrix::new(mesh.n_cells(), nb);

    for cell in 0..mesh.n_cells() {
        let map = mesh.cell_mapping(cell);
        let mut blk = vec![0.0; nb * nb];
        for (q, xi) in points.iter().enumerate() {
            let pg = point_geometry(&map, *xi)?;
            let jxw = pg.det * weights[q];
            let (vals, rgrads) = &cell_basis[q];
            match config.equation {
                Equation::Mass | Equation::InverseMass => {
                    for i in 0..nb {
                        for j in 0..nb {
                            blk[i * nb + j] += vals[i] * vals[j] * jxw;
                        }
                    }
                }
                Equation::Laplacian => {
                    let g: Vec<_> = rgrads.iter().map(|r| physical(d, &pg.jinvt, *r)).collect();
                    for i in 0..nb {
                        for j in 0..nb {
                            blk[i * nb + j] += dot(d, g[i], g[j]) * jxw;
                        }
                    }
                }
                Equation::Advection => {
                    let c = config.transport.eval(pg.x);
                    for i in 0..nb {
                        let cg = dot(d, c, physical(d, &pg.jinvt, rgrads[i]));
                        for j in 0..nb {
                            blk[i * nb + j] -= cg * vals[j] * jxw;
                        }
                    }
                }
            }
        }
        if config.equation == Equation::InverseMass {
            let inv = DMatrix::from_row_slice(nb, nb, &blk)
                .try_inverse()
                .ok_or_else(|| DgError::InvalidMesh(format!("singular mass block on cell {cell}")))?;
            for i in 0..nb {
                for j in 0..nb {
                    blk[i * nb + j] = inv[(i, j)];
                }
            }
        }
        *m.block_mut(cell, cell) = blk;
    }

    if matches!(config.equation, Equation::Mass | Equation::InverseMass) {
        return Ok(m);
    }

    let (tpts, twts) = tensor_points(d - 1, &quad);
    for face in enumerate_faces(mesh) {
        let fm = face.interior_face_number as usize;
        let cm = face.interior_cell;
        let tau = penalty_parameter(mesh, &face, config.degree, &quad)?;
        // Blocks indexed [test side][trial side], side 0 interior.
        let mut blocks = [[vec![0.0; nb * nb], vec![0.0; nb * nb]], [vec![0.0; nb * nb], vec![0.0; nb * nb]]];
        for (t, tw) in tpts.iter().zip(&twts) {
            let fg = face_point_geometry(mesh, &face, &t[..d - 1])?;
            let jxw = fg.area * tw;
            let n = fg.normal;
            let (vm, gm) = eval_basis(&basis, d, face_reference_point(d, fm, &t[..d - 1]));
            let dn_m: Vec<f64> = gm.iter().map(|g| dot(d, n, physical(d, &fg.jinvt_minus, *g))).collect();
            let (vp, dn_p) = match (face.exterior_cell, fg.jinvt_plus) {
                (Some(_), Some(jp)) => {
                    let (vp, gp) =
                        eval_basis(&basis, d, face_reference_point(d, face.exterior_face_number as usize, &t[..d - 1]));
                    let dn: Vec<f64> = gp.iter().map(|g| dot(d, n, physical(d, &jp, *g))).collect();
                    (vp, dn)
                }
                _ => (Vec::new(), Vec::new()),
            };
            let boundary = face.exterior_cell.is_none();
            match config.equation {
                Equation::Advection => {
                    let cn = dot(d, config.transport.eval(fg.x), n);
                    let up = 0.5 * (cn - cn.abs());
                    let down = 0.5 * (cn + cn.abs());
                    for i in 0..nb {
                        for j in 0..nb {
                            if boundary {
                                // Exterior trace -u⁻.
                                blocks[0][0][i * nb + j] += vm[i] * (down - up) * vm[j] * jxw;
                            } else {
                                // Flux down·u⁻ + up·u⁺ tested with [v].
                                blocks[0][0][i * nb + j] += vm[i] * down * vm[j] * jxw;
                                blocks[0][1][i * nb + j] += vm[i] * up * vp[j] * jxw;
                                blocks[1][0][i * nb + j] -= vp[i] * down * vm[j] * jxw;
                                blocks[1][1][i * nb + j] -= vp[i] * up * vp[j] * jxw;
                            }
                        }
                    }
                }
                Equation::Laplacian => {
                    for i in 0..nb {
                        for j in 0..nb {
                            if boundary {
                                // [u] = 2u⁻, {∂n u} = ∂n u⁻.
                                let a = 2.0 * tau * vm[i] * vm[j] - vm[i] * dn_m[j] - dn_m[i] * vm[j];
                                blocks[0][0][i * nb + j] += a * jxw;
                            } else {
                                // τ[v][u] − [v]{∂n u} − {∂n v}[u]
                                let sides = [(&vm, &dn_m, 1.0), (&vp, &dn_p, -1.0)];
                                for (si, (vi, di, si_sign)) in sides.iter().enumerate() {
                                    for (sj, (vj, dj, sj_sign)) in sides.iter().enumerate() {
                                        let a = tau * si_sign * vi[i] * sj_sign * vj[j]
                                            - si_sign * vi[i] * 0.5 * dj[j]
                                            - 0.5 * di[i] * sj_sign * vj[j];
                                        blocks[si][sj][i * nb + j] += a * jxw;
                                    }
                                }
                            }
                        }
                    }
                }
                _ => unreachable!(),
            }
        }
        let cells = [Some(cm), face.exterior_cell];
        for (si, row) in blocks.into_iter().enumerate() {
            for (sj, blk) in row.into_iter().enumerate() {
                if let (Some(r), Some(c)) = (cells[si], cells[sj]) {
                    for (dst, v) in m.block_mut(r, c).iter_mut().zip(&blk) {
                        *dst += v;
                    }
                }
            }
        }
    }
    Ok(m)
}

/// Right-hand side for forcing `f` and Dirichlet data `g`.
pub fn assemble_rhs(config: &OperatorConfig, mesh: &Mesh, f: &ScalarFn, g: &ScalarFn) -> Result<Vec<f64>> {
    let n = check_size(config, mesh)?;
    let d = config.dim;
    let k = config.degree + 1;
    let nb = config.dofs_per_cell();
    let basis = make_basis(config.basis, config.degree)?;
    let quad = gauss_quadrature(k)?;
    let (points, weights) = tensor_points(d, &quad);
    let mut out = vec![0.0; n];
    for cell in 0..mesh.n_cells() {
        let map = mesh.cell_mapping(cell);
        for (xi, w) in points.iter().zip(&weights) {
            let pg = point_geometry(&map, *xi)?;
            let (vals, _) = eval_basis(&basis, d, *xi);
            let fx = f(pg.x) * pg.det * w;
            for i in 0..nb {
                out[cell * nb + i] += vals[i] * fx;
            }
        }
    }
    if matches!(config.equation, Equation::Mass | Equation::InverseMass) {
        return Ok(out);
    }
    let (tpts, twts) = tensor_points(d - 1, &quad);
    for face in enumerate_faces(mesh).into_iter().filter(|f| f.exterior_cell.is_none()) {
        let fm = face.interior_face_number as usize;
        let tau = penalty_parameter(mesh, &face, config.degree, &quad)?;
        for (t, tw) in tpts.iter().zip(&twts) {
            let fg = face_point_geometry(mesh, &face, &t[..d - 1])?;
            let jxw = fg.area * tw;
            let gx = g(fg.x);
            let (vm, gm) = eval_basis(&basis, d, face_reference_point(d, fm, &t[..d - 1]));
            for i in 0..nb {
                let v = match config.equation {
                    Equation::Advection => {
                        let cn = dot(d, config.transport.eval(fg.x), fg.normal);
                        -(cn - cn.abs()) * gx * vm[i]
                    }
                    _ => {
                        let dn = dot(d, fg.normal, physical(d, &fg.jinvt_minus, gm[i]));
                        2.0 * tau * gx * vm[i] - gx * dn
                    }
                };
                out[face.interior_cell * nb + i] += v * jxw;
            }
        }
    }
    Ok(out)
}
