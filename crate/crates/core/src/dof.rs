//! Degree-of-freedom numbering interleaved over lane batches, face batching
//! and index-storage classification for vectorized gather/scatter.
//!
//! Within a full batch of `W` owned cells, dof `j` of lane `L` lives at
//! `start + j * W + L`. A trailing partial batch with `n` cells uses stride
//! `n`. Ghost cells follow the owned range in (owner rank, cell) order; ghost
//! cells coming from the same remote batch keep their relative interleaving,
//! so their stride equals the number of such cells.

use std::collections::HashMap;

use crate::counters::record_reads;
use crate::error::{invalid, DgError, Result};
use crate::lanes::Number;
use crate::mesh::{Mesh, Partition, RawFace};

/// Marker for unused lanes and missing exterior cells.
pub const INVALID_CELL: u32 = u32::MAX;

/// Location of one cell's coefficients: dof `j` at `start + j * stride`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellAccess {
    pub start: u32,
    pub stride: u32,
}

impl CellAccess {
    #[inline(always)]
    pub fn index(&self, j: usize) -> usize {
        self.start as usize + j * self.stride as usize
    }
}

/// A batch of up to `W` owned cells.
#[derive(Clone, Debug, PartialEq)]
pub struct CellBatch {
    /// Global cell ids, [`INVALID_CELL`] on unfilled lanes.
    pub cells: Vec<u32>,
    pub n_filled: usize,
}

/// Rank-local dof numbering.
#[derive(Clone, Debug)]
pub struct DofLayout {
    pub rank: usize,
    pub lanes: usize,
    pub dim: usize,
    pub k: usize,
    pub dofs_per_cell: usize,
    pub owned_cells: Vec<usize>,
    pub cell_batches: Vec<CellBatch>,
    pub ghost_cells: Vec<usize>,
    pub n_owned: usize,
    pub n_ghost: usize,
    access: HashMap<usize, CellAccess>,
}

pub fn build_dof_layout(mesh: &Mesh, partition: &Partition, rank: usize, k: usize, lanes: usize) -> Result<DofLayout> {
    if ![1, 2, 4, 8].contains(&lanes) {
        return invalid(format!("lane width {lanes} not in {{1, 2, 4, 8}}"));
    }
    if rank >= partition.n_ranks {
        return invalid("rank out of range");
    }
    let n = k.pow(mesh.dim as u32);
    let owned = partition.owned_cells(rank);
    let mut access = HashMap::new();
    let mut cell_batches = Vec::new();
    for (b, chunk) in owned.chunks(lanes).enumerate() {
        let start = b * lanes * n;
        let stride = chunk.len();
        let mut cells = vec![INVALID_CELL; lanes];
        for (l, &c) in chunk.iter().enumerate() {
            cells[l] = c as u32;
            access.insert(c, CellAccess { start: (start + l) as u32, stride: stride as u32 });
        }
        cell_batches.push(CellBatch { cells, n_filled: chunk.len() });
    }
    let n_owned = owned.len() * n;

    // Position of every cell within its owner's ordering, to recover the
    // remote batch of each ghost.
    let mut position = vec![0usize; partition.cell_owner.len()];
    let mut counters = vec![0usize; partition.n_ranks];
    for (c, &r) in partition.cell_owner.iter().enumerate() {
        position[c] = counters[r];
        counters[r] += 1;
    }
    let ghosts = partition.ghosts.get(rank).cloned().unwrap_or_default();
    let mut offset = n_owned;
    let mut i = 0;
    while i < ghosts.len() {
        let key = |c: usize| (partition.cell_owner[c], position[c] / lanes);
        let mut j = i;
        while j < ghosts.len() && key(ghosts[j]) == key(ghosts[i]) {
            j += 1;
        }
        let group = j - i;
        for (pos, &c) in ghosts[i..j].iter().enumerate() {
            access.insert(c, CellAccess { start: (offset + pos) as u32, stride: group as u32 });
        }
        offset += group * n;
        i = j;
    }
    if offset > u32::MAX as usize {
        return invalid("local vector exceeds 32-bit indexing");
    }
    Ok(DofLayout {
        rank,
        lanes,
        dim: mesh.dim,
        k,
        dofs_per_cell: n,
        owned_cells: owned,
        cell_batches,
        ghost_cells: ghosts,
        n_owned,
        n_ghost: offset - n_owned,
        access,
    })
}

impl DofLayout {
    pub fn cell_access(&self, cell: usize) -> Option<CellAccess> {
        self.access.get(&cell).copied()
    }

    /// Rank-local index of dof `j` of `cell`.
    pub fn local_index(&self, cell: usize, j: usize) -> Option<usize> {
        self.cell_access(cell).map(|a| a.index(j))
    }

    pub fn is_ghost(&self, cell: usize) -> bool {
        self.cell_access(cell).is_some_and(|a| a.start as usize >= self.n_owned)
    }

    pub fn new_vector(&self) -> GhostedVector {
        GhostedVector::new(self.n_owned, self.n_ghost)
    }

    /// Copies this rank's owned cells out of a vector in natural numbering
    /// (`cell * dofs_per_cell + j`).
    pub fn import_natural(&self, natural: &[f64], v: &mut GhostedVector) {
        let n = self.dofs_per_cell;
        for &c in &self.owned_cells {
            let a = self.access[&c];
            for j in 0..n {
                v.data[a.index(j)] = natural[c * n + j];
            }
        }
    }

    /// Writes this rank's owned cells into a vector in natural numbering.
    pub fn export_natural(&self, v: &GhostedVector, natural: &mut [f64]) {
        let n = self.dofs_per_cell;
        for &c in &self.owned_cells {
            let a = self.access[&c];
            for j in 0..n {
                natural[c * n + j] = v.data[a.index(j)];
            }
        }
    }

    /// Access descriptor for the cells of one lane batch.
    pub fn classify(&self, cells: &[u32]) -> Result<DofAccess> {
        classify_index_storage(cells, self)
    }
}

/// Storage scheme used to address the dofs of a lane batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum IndexStorage {
    /// Single lane, dofs contiguous.
    Contiguous,
    /// The lanes form one interleaved batch: one block of `n * W` values.
    InterleavedContiguous,
    /// Every lane has dof stride `W`, starts arbitrary.
    InterleavedContiguousStrided,
    /// Per-lane starts and strides.
    InterleavedContiguousMixedStrides,
    /// Explicit index list per lane and dof.
    Full,
}

/// Index information for one side of a face batch or one cell batch.
#[derive(Clone, Debug, PartialEq)]
pub struct DofAccess {
    pub variant: IndexStorage,
    pub starts: Vec<u32>,
    pub strides: Vec<u32>,
    pub n_filled: usize,
    /// Explicit indices, `full[j * W + L]`, always built as the reference path.
    pub full: Vec<u32>,
    /// Whether any filled lane refers to a ghost cell.
    pub touches_ghosts: bool,
}

pub fn classify_index_storage(cells: &[u32], layout: &DofLayout) -> Result<DofAccess> {
    let w = layout.lanes;
    if cells.len() != w {
        return invalid("cell list must have one entry per lane");
    }
    let n_filled = cells.iter().take_while(|&&c| c != INVALID_CELL).count();
    if n_filled == 0 || cells[n_filled..].iter().any(|&c| c != INVALID_CELL) {
        return invalid("filled lanes must be leading and non-empty");
    }
    let mut starts = vec![0u32; w];
    let mut strides = vec![0u32; w];
    let mut touches_ghosts = false;
    for l in 0..w {
        let c = cells[if l < n_filled { l } else { 0 }] as usize;
        let a = layout
            .cell_access(c)
            .ok_or_else(|| DgError::InvalidArgument(format!("cell {c} not present on rank {}", layout.rank)))?;
        starts[l] = a.start;
        strides[l] = a.stride;
        touches_ghosts |= l < n_filled && a.start as usize >= layout.n_owned;
    }
    let n = layout.dofs_per_cell;
    let mut full = vec![0u32; n * w];
    for j in 0..n {
        for l in 0..w {
            full[j * w + l] = starts[l] + (j as u32) * strides[l];
        }
    }
    let all_w = strides.iter().all(|&s| s as usize == w);
    let variant = if w == 1 {
        IndexStorage::Contiguous
    } else if n_filled == w && all_w && (0..w).all(|l| starts[l] == starts[0] + l as u32) {
        IndexStorage::InterleavedContiguous
    } else if n_filled == w && all_w {
        IndexStorage::InterleavedContiguousStrided
    } else {
        IndexStorage::InterleavedContiguousMixedStrides
    };
    Ok(DofAccess { variant, starts, strides, n_filled, full, touches_ghosts })
}

/// Exchange state of a [`GhostedVector`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExchangeState {
    Clean,
    GhostsValid,
    HasRemoteContributions,
}

/// Owned values followed by ghost values.
#[derive(Clone, Debug, PartialEq)]
pub struct GhostedVector {
    pub(crate) data: Vec<f64>,
    n_owned: usize,
    state: ExchangeState,
}

impl GhostedVector {
    pub fn new(n_owned: usize, n_ghost: usize) -> Self {
        GhostedVector { data: vec![0.0; n_owned + n_ghost], n_owned, state: ExchangeState::Clean }
    }

    /// Length seen by solvers: the owned range only.
    pub fn len(&self) -> usize {
        self.n_owned
    }

    pub fn is_empty(&self) -> bool {
        self.n_owned == 0
    }

    pub fn n_ghost(&self) -> usize {
        self.data.len() - self.n_owned
    }

    pub fn owned(&self) -> &[f64] {
        &self.data[..self.n_owned]
    }

    pub fn owned_mut(&mut self) -> &mut [f64] {
        &mut self.data[..self.n_owned]
    }

    pub fn ghosts(&self) -> &[f64] {
        &self.data[self.n_owned..]
    }

    pub fn state(&self) -> ExchangeState {
        self.state
    }

    pub(crate) fn set_state(&mut self, s: ExchangeState) {
        self.state = s;
    }

    pub(crate) fn ghosts_mut(&mut self) -> &mut [f64] {
        let n = self.n_owned;
        &mut self.data[n..]
    }

    /// Drops imported ghost values.
    pub fn zero_out_ghosts(&mut self) {
        self.ghosts_mut().iter_mut().for_each(|v| *v = 0.0);
        self.state = ExchangeState::Clean;
    }

    /// Marks imported ghost values as stale without touching them.
    pub fn reset_ghost_state(&mut self) {
        if self.state == ExchangeState::GhostsValid {
            self.state = ExchangeState::Clean;
        }
    }

    /// Full storage including ghosts.
    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    fn check_readable(&self, access: &DofAccess) -> Result<()> {
        if access.touches_ghosts && self.state != ExchangeState::GhostsValid {
            return Err(DgError::ContractViolation("ghost values read without a preceding ghost update".into()));
        }
        Ok(())
    }
}

/// Reads all `n` dofs of each lane.
pub fn gather_cell<N: Number>(v: &GhostedVector, access: &DofAccess, n: usize, out: &mut [N]) -> Result<()> {
    v.check_readable(access)?;
    gather_unchecked(&v.data, access, n, out);
    Ok(())
}

#[inline]
pub(crate) fn gather_unchecked<N: Number>(data: &[f64], access: &DofAccess, n: usize, out: &mut [N]) {
    let w = N::LANES;
    debug_assert_eq!(w, access.starts.len());
    match access.variant {
        IndexStorage::Contiguous => {
            let s = access.starts[0] as usize;
            for (j, o) in out.iter_mut().enumerate().take(n) {
                *o = N::load(&data[s + j..]);
            }
        }
        IndexStorage::InterleavedContiguous => {
            let s = access.starts[0] as usize;
            let block = &data[s..s + n * w];
            for (j, o) in out.iter_mut().enumerate().take(n) {
                *o = N::load(&block[j * w..]);
            }
        }
        IndexStorage::InterleavedContiguousStrided => {
            for (j, o) in out.iter_mut().enumerate().take(n) {
                *o = N::from_fn(|l| data[access.starts[l] as usize + j * w]);
            }
        }
        IndexStorage::InterleavedContiguousMixedStrides => {
            for (j, o) in out.iter_mut().enumerate().take(n) {
                *o = N::from_fn(|l| data[access.starts[l] as usize + j * access.strides[l] as usize]);
            }
        }
        IndexStorage::Full => {
            for (j, o) in out.iter_mut().enumerate().take(n) {
                *o = N::from_fn(|l| data[access.full[j * w + l] as usize]);
            }
        }
    }
}

/// Writes (`add = false`) or accumulates all `n` dofs of the filled lanes.
pub fn scatter_cell<N: Number>(v: &mut GhostedVector, access: &DofAccess, n: usize, vals: &[N], add: bool) {
    scatter_unchecked(&mut v.data, access, n, vals, add);
}

#[inline]
pub(crate) fn scatter_unchecked<N: Number>(data: &mut [f64], access: &DofAccess, n: usize, vals: &[N], add: bool) {
    let w = N::LANES;
    match access.variant {
        IndexStorage::Contiguous => {
            let s = access.starts[0] as usize;
            for (j, v) in vals.iter().enumerate().take(n) {
                if add {
                    data[s + j] += v.lane(0);
                } else {
                    data[s + j] = v.lane(0);
                }
            }
        }
        IndexStorage::InterleavedContiguous => {
            let s = access.starts[0] as usize;
            let block = &mut data[s..s + n * w];
            for (j, v) in vals.iter().enumerate().take(n) {
                if add {
                    let cur = N::load(&block[j * w..]);
                    (cur + *v).store(&mut block[j * w..]);
                } else {
                    v.store(&mut block[j * w..]);
                }
            }
        }
        _ => {
            for (j, v) in vals.iter().enumerate().take(n) {
                for l in 0..access.n_filled {
                    let idx = match access.variant {
                        IndexStorage::Full => access.full[j * w + l] as usize,
                        _ => access.starts[l] as usize + j * access.strides[l] as usize,
                    };
                    if add {
                        data[idx] += v.lane(l);
                    } else {
                        data[idx] = v.lane(l);
                    }
                }
            }
        }
    }
}

/// Reads only the listed dofs (the face-relevant layers) into `out` at the
/// same positions; other entries of `out` are left untouched.
pub fn read_face_dofs<N: Number>(v: &GhostedVector, access: &DofAccess, dofs: &[usize], out: &mut [N]) -> Result<()> {
    v.check_readable(access)?;
    read_dofs_unchecked(&v.data, access, dofs, out);
    Ok(())
}

#[inline]
pub(crate) fn read_dofs_unchecked<N: Number>(data: &[f64], access: &DofAccess, dofs: &[usize], out: &mut [N]) {
    let w = N::LANES;
    record_reads(dofs.len() as u64);
    match access.variant {
        IndexStorage::Contiguous => {
            let s = access.starts[0] as usize;
            for &j in dofs {
                out[j] = N::load(&data[s + j..]);
            }
        }
        IndexStorage::InterleavedContiguous => {
            let s = access.starts[0] as usize;
            for &j in dofs {
                out[j] = N::load(&data[s + j * w..]);
            }
        }
        IndexStorage::InterleavedContiguousStrided => {
            for &j in dofs {
                out[j] = N::from_fn(|l| data[access.starts[l] as usize + j * w]);
            }
        }
        IndexStorage::InterleavedContiguousMixedStrides => {
            for &j in dofs {
                out[j] = N::from_fn(|l| data[access.starts[l] as usize + j * access.strides[l] as usize]);
            }
        }
        IndexStorage::Full => {
            for &j in dofs {
                out[j] = N::from_fn(|l| data[access.full[j * w + l] as usize]);
            }
        }
    }
}

/// Accumulates the listed dofs of the filled lanes.
#[inline]
pub(crate) fn add_dofs_unchecked<N: Number>(data: &mut [f64], access: &DofAccess, dofs: &[usize], vals: &[N]) {
    let w = N::LANES;
    match access.variant {
        IndexStorage::Contiguous => {
            let s = access.starts[0] as usize;
            for &j in dofs {
                data[s + j] += vals[j].lane(0);
            }
        }
        IndexStorage::InterleavedContiguous => {
            let s = access.starts[0] as usize;
            for &j in dofs {
                let cur = N::load(&data[s + j * w..]);
                (cur + vals[j]).store(&mut data[s + j * w..]);
            }
        }
        _ => {
            for &j in dofs {
                for l in 0..access.n_filled {
                    let idx = match access.variant {
                        IndexStorage::Full => access.full[j * w + l] as usize,
                        _ => access.starts[l] as usize + j * access.strides[l] as usize,
                    };
                    data[idx] += vals[j].lane(l);
                }
            }
        }
    }
}

/// Public form of the face-restricted accumulation.
pub fn scatter_add_face_dofs<N: Number>(v: &mut GhostedVector, access: &DofAccess, dofs: &[usize], vals: &[N]) {
    add_dofs_unchecked(&mut v.data, access, dofs, vals);
}

/// Dof indices of a `k^d` cell whose index along the normal axis of
/// `face_number` lies in `layers`, ascending.
pub fn face_dofs(d: usize, k: usize, face_number: usize, layers: &[usize]) -> Vec<usize> {
    let axis = face_number / 2;
    let stride = k.pow(axis as u32);
    (0..k.pow(d as u32)).filter(|&i| layers.contains(&((i / stride) % k))).collect()
}

/// A batch of faces with identical face numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceInfoBatch {
    pub interior_cell_numbers: Vec<u32>,
    pub exterior_cell_numbers: Vec<u32>,
    pub interior_face_number: u8,
    /// Exterior face number, or the boundary id for boundary batches.
    pub exterior_face_number: u8,
    pub subface_index: u8,
    pub face_orientation: u8,
    pub n_lanes_filled: usize,
    pub boundary: bool,
    /// Indices of the faces in the partition's face list.
    pub faces: Vec<usize>,
}

/// Groups faces into lane batches: interior faces first, then boundary
/// faces, each stably sorted by (interior face number, exterior face number,
/// subface, orientation).
pub fn batch_faces(all_faces: &[RawFace], face_ids: &[usize], lanes: usize) -> Vec<FaceInfoBatch> {
    let key = |f: &usize| {
        let r = &all_faces[*f];
        (r.is_boundary(), r.interior_face_number, r.exterior_face_number, r.subface_index, r.orientation)
    };
    let mut ids = face_ids.to_vec();
    ids.sort_by_key(key);
    let mut batches = Vec::new();
    let mut i = 0;
    while i < ids.len() {
        let k0 = key(&ids[i]);
        let mut j = i;
        while j < ids.len() && j - i < lanes && key(&ids[j]) == k0 {
            j += 1;
        }
        let mut interior = vec![INVALID_CELL; lanes];
        let mut exterior = vec![INVALID_CELL; lanes];
        for (l, &f) in ids[i..j].iter().enumerate() {
            interior[l] = all_faces[f].interior_cell as u32;
            exterior[l] = all_faces[f].exterior_cell.map_or(INVALID_CELL, |c| c as u32);
        }
        let r = &all_faces[ids[i]];
        batches.push(FaceInfoBatch {
            interior_cell_numbers: interior,
            exterior_cell_numbers: exterior,
            interior_face_number: r.interior_face_number,
            exterior_face_number: r.exterior_face_number,
            subface_index: r.subface_index,
            face_orientation: r.orientation,
            n_lanes_filled: j - i,
            boundary: r.is_boundary(),
            faces: ids[i..j].to_vec(),
        });
        i = j;
    }
    batches
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lanes::Lanes;
    use crate::mesh::{all_dirichlet, assign_face_owners, partition_from_owners, Mapping};

    fn square(n: usize) -> Mesh {
        Mesh::unit_box(2, n, Mapping::Cartesian, all_dirichlet()).unwrap()
    }

    #[test]
    fn interleaved_numbering() {
        let m = square(4);
        let p = Partition::slabs(&m, 1).unwrap();
        let layout = build_dof_layout(&m, &p, 0, 4, 4).unwrap();
        assert_eq!(layout.local_index(0, 0), Some(0));
        assert_eq!(layout.local_index(1, 0), Some(1));
        assert_eq!(layout.local_index(0, 1), Some(4));
        assert_eq!(layout.local_index(4, 0), Some(64));
        let plain = build_dof_layout(&m, &p, 0, 4, 1).unwrap();
        assert_eq!(plain.local_index(3, 5), Some(3 * 16 + 5));
    }

    #[test]
    fn partial_batch() {
        let m = build_mesh6();
        let p = Partition::slabs(&m, 1).unwrap();
        let layout = build_dof_layout(&m, &p, 0, 2, 4).unwrap();
        assert_eq!(layout.cell_batches.len(), 2);
        assert_eq!(layout.cell_batches[1].n_filled, 2);
        let a = layout.classify(&layout.cell_batches[1].cells).unwrap();
        assert_eq!(a.variant, IndexStorage::InterleavedContiguousMixedStrides);
        assert_eq!(a.strides[..2], [2, 2]);
    }

    fn build_mesh6() -> Mesh {
        crate::mesh::build_mesh(2, &[3, 2], &[0.0, 0.0], &[1.0, 1.0], Mapping::Cartesian, all_dirichlet()).unwrap()
    }

    #[test]
    fn worked_example_classification() {
        let m =
            crate::mesh::build_mesh(2, &[8, 1], &[0.0, 0.0], &[1.0, 1.0], Mapping::Cartesian, all_dirichlet()).unwrap();
        let p = Partition::slabs(&m, 1).unwrap();
        let layout = build_dof_layout(&m, &p, 0, 4, 4).unwrap();
        let inner = layout.classify(&[0, 1, 2, 3]).unwrap();
        assert_eq!(inner.variant, IndexStorage::InterleavedContiguous);
        let outer = layout.classify(&[1, 4, 3, 6]).unwrap();
        assert_eq!(outer.variant, IndexStorage::InterleavedContiguousStrided);
        assert_eq!(outer.full[..8], [1, 64, 3, 66, 5, 68, 7, 70]);
    }

    #[test]
    fn three_rank_corner_gives_mixed_strides() {
        // Row 0: e1 e2 | e5 e6, row 1: e3 e4 | e7 e8 with ranks {0, 1, 2}.
        let m =
            crate::mesh::build_mesh(2, &[4, 2], &[0.0, 0.0], &[2.0, 1.0], Mapping::Cartesian, all_dirichlet()).unwrap();
        let owners = vec![0, 0, 2, 2, 1, 1, 2, 2];
        let p = assign_face_owners(&m, &partition_from_owners(&m, owners, 3).unwrap());
        let layout = build_dof_layout(&m, &p, 2, 3, 2).unwrap();
        // Only e2 (cell 1) of rank 0's batch {e1, e2} is ghosted on rank 2.
        assert_eq!(layout.ghost_cells, vec![1, 5]);
        let a = layout.cell_access(1).unwrap();
        assert_eq!(a.stride, 1);
        let acc = layout.classify(&[1, 5]).unwrap();
        assert_eq!(acc.variant, IndexStorage::InterleavedContiguousMixedStrides);
    }

    #[test]
    fn face_batches() {
        let m = square(4);
        let p = Partition::slabs(&m, 1).unwrap();
        let ids = p.faces_of(0);
        let batches = batch_faces(&p.faces, &ids, 4);
        for b in &batches {
            assert!(b.n_lanes_filled <= 4);
            for f in &b.faces {
                let r = &p.faces[*f];
                assert_eq!(r.interior_face_number, b.interior_face_number);
                assert_eq!(r.exterior_face_number, b.exterior_face_number);
                assert_eq!(r.is_boundary(), b.boundary);
            }
            assert!(b.interior_cell_numbers[b.n_lanes_filled..].iter().all(|&c| c == INVALID_CELL));
        }
        let total: usize = batches.iter().map(|b| b.n_lanes_filled).sum();
        assert_eq!(total, 40);
    }

    #[test]
    fn gather_scatter_round_trip() {
        let m = build_mesh6();
        let p = Partition::slabs(&m, 1).unwrap();
        let layout = build_dof_layout(&m, &p, 0, 3, 4).unwrap();
        let mut v = layout.new_vector();
        for (i, x) in v.owned_mut().iter_mut().enumerate() {
            *x = i as f64 * 0.5 - 3.0;
        }
        let before = v.clone();
        let mut buf = vec![Lanes::<4>::default(); 9];
        for b in &layout.cell_batches {
            let a = layout.classify(&b.cells).unwrap();
            gather_cell(&v, &a, 9, &mut buf).unwrap();
            scatter_cell(&mut v, &a, 9, &buf, false);
        }
        assert_eq!(v, before);
    }

    #[test]
    fn face_dof_selection() {
        assert_eq!(face_dofs(2, 3, 0, &[0]), vec![0, 3, 6]);
        assert_eq!(face_dofs(2, 3, 3, &[2]), vec![6, 7, 8]);
        assert_eq!(face_dofs(3, 4, 4, &[0]).len(), 16);
    }
}
