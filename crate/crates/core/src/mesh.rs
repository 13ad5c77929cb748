//! Structured quad/hex meshes, face enumeration and rank partitioning.

use std::collections::BTreeMap;

use crate::basis::{gauss_lobatto_quadrature, lagrange_derivative, lagrange_value};
use crate::error::{invalid, Result};

/// Boundary condition on one side of the box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryKind {
    Dirichlet(u8),
    Periodic,
}

/// Geometry of the cells.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mapping {
    Cartesian,
    /// `x = ξ + a ∏ sin(π ξ_i)` in every component (ξ normalized to the box),
    /// interpolated per cell by polynomials of the given degree.
    PolynomialDeformation {
        degree: usize,
        amplitude: f64,
    },
}

/// A structured `d`-dimensional box of cells.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub dim: usize,
    pub cells_per_dim: [usize; 3],
    pub lower: [f64; 3],
    pub upper: [f64; 3],
    pub mapping: Mapping,
    /// `boundary[axis][side]`, side 0 is the lower end.
    pub boundary: [[BoundaryKind; 2]; 3],
}

/// Dirichlet on every side, boundary id `2 * axis + side`.
pub fn all_dirichlet() -> [[BoundaryKind; 2]; 3] {
    let mut b = [[BoundaryKind::Periodic; 2]; 3];
    for (a, sides) in b.iter_mut().enumerate() {
        for (s, kind) in sides.iter_mut().enumerate() {
            *kind = BoundaryKind::Dirichlet((2 * a + s) as u8);
        }
    }
    b
}

pub fn all_periodic() -> [[BoundaryKind; 2]; 3] {
    [[BoundaryKind::Periodic; 2]; 3]
}

pub fn build_mesh(
    dim: usize,
    cells_per_dim: &[usize],
    lower: &[f64],
    upper: &[f64],
    mapping: Mapping,
    boundary: [[BoundaryKind; 2]; 3],
) -> Result<Mesh> {
    if !(1..=3).contains(&dim) {
        return invalid(format!("dimension {dim} not supported"));
    }
    if cells_per_dim.len() < dim || lower.len() < dim || upper.len() < dim {
        return invalid("need one cell count and extent per dimension");
    }
    let mut cells = [1; 3];
    let (mut lo, mut hi) = ([0.0; 3], [1.0; 3]);
    for a in 0..dim {
        if cells_per_dim[a] == 0 {
            return invalid("at least one cell per dimension is required");
        }
        if upper[a].partial_cmp(&lower[a]) != Some(std::cmp::Ordering::Greater) {
            return invalid("box extent must be positive");
        }
        cells[a] = cells_per_dim[a];
        lo[a] = lower[a];
        hi[a] = upper[a];
        let periodic = boundary[a].map(|b| b == BoundaryKind::Periodic);
        if periodic[0] != periodic[1] {
            return invalid("periodic sides must come in opposing pairs");
        }
    }
    if let Mapping::PolynomialDeformation { degree, amplitude } = mapping {
        if degree == 0 {
            return invalid("deformation degree must be at least 1");
        }
        if !(0.0..=0.1).contains(&amplitude.abs()) {
            return invalid("deformation amplitude must satisfy |a| <= 0.1");
        }
    }
    Ok(Mesh { dim, cells_per_dim: cells, lower: lo, upper: hi, mapping, boundary })
}

impl Mesh {
    /// Unit box `[0,1]^d` with `n` cells per direction.
    pub fn unit_box(dim: usize, n: usize, mapping: Mapping, boundary: [[BoundaryKind; 2]; 3]) -> Result<Mesh> {
        build_mesh(dim, &[n; 3][..dim], &[0.0; 3][..dim], &[1.0; 3][..dim], mapping, boundary)
    }

    pub fn n_cells(&self) -> usize {
        self.cells_per_dim[..self.dim].iter().product()
    }

    /// Integer coordinates of a cell.
    pub fn cell_coords(&self, cell: usize) -> [usize; 3] {
        let mut c = [0; 3];
        let mut rest = cell;
        for (a, ca) in c.iter_mut().enumerate().take(self.dim) {
            *ca = rest % self.cells_per_dim[a];
            rest /= self.cells_per_dim[a];
        }
        c
    }

    pub fn cell_index(&self, coords: [usize; 3]) -> usize {
        let mut idx = 0;
        for a in (0..self.dim).rev() {
            idx = idx * self.cells_per_dim[a] + coords[a];
        }
        idx
    }

    /// Maps a point of the normalized box `[0,1]^d` to physical space.
    pub fn global_map(&self, y: [f64; 3]) -> [f64; 3] {
        let mut x = [0.0; 3];
        let shift = match self.mapping {
            Mapping::Cartesian => 0.0,
            Mapping::PolynomialDeformation { amplitude, .. } => {
                amplitude * (0..self.dim).map(|a| (std::f64::consts::PI * y[a]).sin()).product::<f64>()
            }
        };
        for a in 0..self.dim {
            x[a] = self.lower[a] + (self.upper[a] - self.lower[a]) * (y[a] + shift);
        }
        x
    }

    /// Degree of the per-cell polynomial mapping.
    pub fn mapping_degree(&self) -> usize {
        match self.mapping {
            Mapping::Cartesian => 1,
            Mapping::PolynomialDeformation { degree, .. } => degree,
        }
    }

    /// Mapping support points of a cell: Gauss–Lobatto nodes of the mapping
    /// degree, lexicographic with the first axis fastest.
    pub fn cell_mapping(&self, cell: usize) -> CellMapping {
        let m = self.mapping_degree();
        let nodes = gauss_lobatto_quadrature(m + 1).expect("degree >= 1").points;
        let coords = self.cell_coords(cell);
        let n = m + 1;
        let count = n.pow(self.dim as u32);
        let mut points = Vec::with_capacity(count);
        for i in 0..count {
            let mut y = [0.0; 3];
            let mut rest = i;
            for a in 0..self.dim {
                let j = rest % n;
                rest /= n;
                y[a] = (coords[a] as f64 + nodes[j]) / self.cells_per_dim[a] as f64;
            }
            points.push(self.global_map(y));
        }
        CellMapping { dim: self.dim, degree: m, nodes, points }
    }

    /// Cell across face `face` of `cell` (wrapping for periodic sides) and
    /// whether the face lies on a non-periodic boundary.
    pub fn neighbor(&self, cell: usize, face: usize) -> Option<usize> {
        let (a, s) = (face / 2, face % 2);
        let mut c = self.cell_coords(cell);
        let n = self.cells_per_dim[a];
        if s == 1 {
            if c[a] + 1 < n {
                c[a] += 1;
            } else if self.boundary[a][1] == BoundaryKind::Periodic {
                c[a] = 0;
            } else {
                return None;
            }
        } else if c[a] > 0 {
            c[a] -= 1;
        } else if self.boundary[a][0] == BoundaryKind::Periodic {
            c[a] = n - 1;
        } else {
            return None;
        }
        Some(self.cell_index(c))
    }
}

/// Polynomial description of one cell's mapping.
#[derive(Clone, Debug, PartialEq)]
pub struct CellMapping {
    pub dim: usize,
    pub degree: usize,
    /// 1D support nodes on `[0, 1]`.
    pub nodes: Vec<f64>,
    pub points: Vec<[f64; 3]>,
}

impl CellMapping {
    /// Position and Jacobian `J[a][b] = ∂x_a/∂ξ_b` at the reference point `xi`.
    pub fn evaluate(&self, xi: [f64; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
        let n = self.degree + 1;
        let d = self.dim;
        let mut val = [[0.0; 32]; 3];
        let mut der = [[0.0; 32]; 3];
        for a in 0..d {
            for j in 0..n {
                val[a][j] = lagrange_value(&self.nodes, j, xi[a]);
                der[a][j] = lagrange_derivative(&self.nodes, j, xi[a]);
            }
        }
        let mut x = [0.0; 3];
        let mut jac = [[0.0; 3]; 3];
        for (i, p) in self.points.iter().enumerate() {
            let mut idx = [0; 3];
            let mut rest = i;
            for ia in idx.iter_mut().take(d) {
                *ia = rest % n;
                rest /= n;
            }
            let v: f64 = (0..d).map(|a| val[a][idx[a]]).product();
            for b in 0..d {
                let g: f64 = (0..d).map(|a| if a == b { der[a][idx[a]] } else { val[a][idx[a]] }).product();
                for a in 0..d {
                    jac[a][b] += g * p[a];
                }
            }
            for a in 0..d {
                x[a] += v * p[a];
            }
        }
        (x, jac)
    }
}

/// A face between two cells, or a boundary face.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RawFace {
    pub interior_cell: usize,
    pub exterior_cell: Option<usize>,
    pub interior_face_number: u8,
    /// Face number on the exterior cell, or the boundary id.
    pub exterior_face_number: u8,
    pub subface_index: u8,
    pub orientation: u8,
}

impl RawFace {
    pub fn is_boundary(&self) -> bool {
        self.exterior_cell.is_none()
    }

    /// Normal axis of the face.
    pub fn axis(&self) -> usize {
        self.interior_face_number as usize / 2
    }
}

/// All faces, each interior face once with the lower cell as `e⁻`.
pub fn enumerate_faces(mesh: &Mesh) -> Vec<RawFace> {
    let mut faces = Vec::new();
    for cell in 0..mesh.n_cells() {
        let coords = mesh.cell_coords(cell);
        for a in 0..mesh.dim {
            if coords[a] == 0 {
                if let BoundaryKind::Dirichlet(id) = mesh.boundary[a][0] {
                    faces.push(boundary_face(cell, 2 * a, id));
                }
            }
            let upper = 2 * a + 1;
            match mesh.neighbor(cell, upper) {
                None => {
                    let BoundaryKind::Dirichlet(id) = mesh.boundary[a][1] else { unreachable!() };
                    faces.push(boundary_face(cell, upper, id));
                }
                Some(nb) if coords[a] + 1 < mesh.cells_per_dim[a] => {
                    faces.push(inner_face(cell, upper, nb, 2 * a));
                }
                // Periodic wrap: the lower-end cell (with its lower face) is e⁻.
                Some(nb) => faces.push(inner_face(nb, 2 * a, cell, upper)),
            }
        }
    }
    faces
}

fn boundary_face(cell: usize, face: usize, id: u8) -> RawFace {
    RawFace {
        interior_cell: cell,
        exterior_cell: None,
        interior_face_number: face as u8,
        exterior_face_number: id,
        subface_index: 255,
        orientation: 0,
    }
}

fn inner_face(minus: usize, fm: usize, plus: usize, fp: usize) -> RawFace {
    RawFace {
        interior_cell: minus,
        exterior_cell: Some(plus),
        interior_face_number: fm as u8,
        exterior_face_number: fp as u8,
        subface_index: 255,
        orientation: 0,
    }
}

/// Cell ownership, face computing ranks and ghost layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub n_ranks: usize,
    pub cell_owner: Vec<usize>,
    pub faces: Vec<RawFace>,
    /// Rank computing each face of `faces`; empty until face owners are assigned.
    pub face_rank: Vec<usize>,
    /// Off-rank cells needed by each rank, sorted by (owner, cell).
    pub ghosts: Vec<Vec<usize>>,
}

/// Contiguous lexicographic slabs whose sizes differ by at most one.
pub fn partition_cells(mesh: &Mesh, n_ranks: usize) -> Result<Partition> {
    let n = mesh.n_cells();
    if n_ranks == 0 || n_ranks > n {
        return invalid(format!("cannot split {n} cells over {n_ranks} ranks"));
    }
    let (base, extra) = (n / n_ranks, n % n_ranks);
    let mut owner = Vec::with_capacity(n);
    for r in 0..n_ranks {
        owner.extend(std::iter::repeat_n(r, base + usize::from(r < extra)));
    }
    partition_from_owners(mesh, owner, n_ranks)
}

/// Partition with an explicit owner per cell; face owners are not yet assigned.
pub fn partition_from_owners(mesh: &Mesh, owner: Vec<usize>, n_ranks: usize) -> Result<Partition> {
    if owner.len() != mesh.n_cells() || owner.iter().any(|&r| r >= n_ranks) {
        return invalid("owner list must name a valid rank for every cell");
    }
    Ok(Partition {
        n_ranks,
        cell_owner: owner,
        faces: enumerate_faces(mesh),
        face_rank: Vec::new(),
        ghosts: vec![Vec::new(); n_ranks],
    })
}

/// Decides which rank computes every face and derives the ghost layers.
///
/// Faces inside one rank and boundary faces stay with the owner. For a rank
/// pair, faces sharing a cell of one rank are computed by the other rank, so
/// that the cell's data is sent once; the remaining faces are alternated to
/// balance the pair.
pub fn assign_face_owners(mesh: &Mesh, partition: &Partition) -> Partition {
    let _ = mesh;
    let owner = &partition.cell_owner;
    let faces = &partition.faces;
    let mut face_rank = vec![usize::MAX; faces.len()];
    let mut pairs: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (f, face) in faces.iter().enumerate() {
        let ri = owner[face.interior_cell];
        match face.exterior_cell.map(|c| owner[c]) {
            Some(re) if re != ri => pairs.entry((ri.min(re), ri.max(re))).or_default().push(f),
            _ => face_rank[f] = ri,
        }
    }
    for ((ri, rj), list) in pairs {
        let side_cells = |f: usize| {
            let face = &faces[f];
            let (a, b) = (face.interior_cell, face.exterior_cell.unwrap());
            if owner[a] == ri {
                (a, b)
            } else {
                (b, a)
            }
        };
        let mut multiplicity: BTreeMap<usize, usize> = BTreeMap::new();
        for &f in &list {
            let (ci, cj) = side_cells(f);
            *multiplicity.entry(ci).or_default() += 1;
            *multiplicity.entry(cj).or_default() += 1;
        }
        let mut count = [0usize; 2];
        let mut remaining = Vec::new();
        for &f in &list {
            let (ci, cj) = side_cells(f);
            if multiplicity[&ci] >= 2 {
                face_rank[f] = rj;
                count[1] += 1;
            } else if multiplicity[&cj] >= 2 {
                face_rank[f] = ri;
                count[0] += 1;
            } else {
                remaining.push(f);
            }
        }
        for f in remaining {
            let to_i = count[0] < count[1];
            face_rank[f] = if to_i { ri } else { rj };
            count[usize::from(!to_i)] += 1;
        }
    }
    let mut ghosts = vec![Vec::new(); partition.n_ranks];
    for (f, face) in faces.iter().enumerate() {
        let r = face_rank[f];
        for c in [Some(face.interior_cell), face.exterior_cell].into_iter().flatten() {
            if owner[c] != r {
                ghosts[r].push(c);
            }
        }
    }
    for g in ghosts.iter_mut() {
        g.sort_by_key(|&c| (owner[c], c));
        g.dedup();
    }
    Partition { face_rank, ghosts, ..partition.clone() }
}

impl Partition {
    /// Cells owned by `rank` in ascending order.
    pub fn owned_cells(&self, rank: usize) -> Vec<usize> {
        (0..self.cell_owner.len()).filter(|&c| self.cell_owner[c] == rank).collect()
    }

    /// Indices (into `faces`) of the faces computed by `rank`.
    pub fn faces_of(&self, rank: usize) -> Vec<usize> {
        (0..self.faces.len()).filter(|&f| self.face_rank[f] == rank).collect()
    }

    /// Convenience: slab partition with face owners assigned.
    pub fn slabs(mesh: &Mesh, n_ranks: usize) -> Result<Partition> {
        Ok(assign_face_owners(mesh, &partition_cells(mesh, n_ranks)?))
    }
}
