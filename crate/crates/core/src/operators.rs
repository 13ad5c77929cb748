//! Matrix-free mass, inverse mass, upwind advection and symmetric interior
//! penalty Laplacian operators.
//!
//! One rank walks its cell batches in order; after each cell batch it runs
//! the face batches whose owned cells are all done. Cell integrals write
//! their result, face integrals add to it. Ghost values are imported before
//! the first face batch that reads them, and contributions to ghost cells
//! are sent back to their owners at the end.

use crate::basis::{gauss_quadrature, make_basis, shape_matrices, BasisKind, ShapeMatrices1D};
use crate::counters::{self, KernelCounters, Sweep};
use crate::dof::{
    add_dofs_unchecked, batch_faces, build_dof_layout, face_dofs, gather_unchecked, read_dofs_unchecked,
    scatter_unchecked, DofAccess, DofLayout, ExchangeState, FaceInfoBatch, GhostedVector,
};
use crate::error::{invalid, DgError, Result};
use crate::exchange::{
    build_exchange_plans, compress, create_world, finish_update, start_update, Endpoint, ExchangePlan, FaceNeeds,
    PlanKind,
};
use crate::geometry::{
    point_geometry, precompute_cell_geometry, precompute_face_geometry, tensor_points, CellBatchGeometry, CellGeometry,
    FaceBatchGeometry, FaceGeometry, GeometryScratch, GeometryVariant, ScalarFn, VectorField,
};
use crate::lanes::{Lanes, Number, Tally};
use crate::mesh::{Mesh, Partition};
use crate::tensor::{
    divergence_sweeps, face_integrate_layers, face_interpolate_layers, gradient_sweeps, laplacian_scratch_len,
    scratch_len, tensor_sweeps, tiled_cell_laplacian, Kernel, KernelForm,
};

pub use crate::geometry::Equation;

/// Basis used when none is requested: the Hermite-like basis for the
/// Laplacian from degree 3, Gauss–Lobatto Lagrange otherwise.
pub fn default_basis(equation: Equation, degree: usize) -> BasisKind {
    match equation {
        Equation::Laplacian if degree >= 3 => BasisKind::HermiteLike,
        _ => BasisKind::LagrangeGaussLobatto,
    }
}

/// Operator setup shared by all ranks.
#[derive(Clone, Debug)]
pub struct OperatorConfig {
    pub equation: Equation,
    pub dim: usize,
    pub degree: usize,
    pub basis: BasisKind,
    pub geometry: GeometryVariant,
    pub lanes: usize,
    pub form: KernelForm,
    pub transport: VectorField,
    pub plan: PlanKind,
}

impl OperatorConfig {
    pub fn new(equation: Equation, dim: usize, degree: usize) -> Self {
        OperatorConfig {
            equation,
            dim,
            degree,
            basis: default_basis(equation, degree),
            geometry: GeometryVariant::Compressed,
            lanes: 4,
            form: KernelForm::EvenOdd,
            transport: VectorField::Constant([1.0, 0.6, 0.3]),
            plan: PlanKind::Slim,
        }
    }

    pub fn with_basis(mut self, basis: BasisKind) -> Self {
        self.basis = basis;
        self
    }

    pub fn with_geometry(mut self, geometry: GeometryVariant) -> Self {
        self.geometry = geometry;
        self
    }

    pub fn with_lanes(mut self, lanes: usize) -> Self {
        self.lanes = lanes;
        self
    }

    pub fn with_form(mut self, form: KernelForm) -> Self {
        self.form = form;
        self
    }

    pub fn with_transport(mut self, transport: VectorField) -> Self {
        self.transport = transport;
        self
    }

    pub fn with_plan(mut self, plan: PlanKind) -> Self {
        self.plan = plan;
        self
    }

    pub fn face_needs(&self) -> FaceNeeds {
        match self.equation {
            Equation::Mass | Equation::InverseMass => FaceNeeds::None,
            Equation::Advection => FaceNeeds::Values,
            Equation::Laplacian => FaceNeeds::ValuesAndFirstDerivatives,
        }
    }

    pub fn dofs_per_cell(&self) -> usize {
        (self.degree + 1).pow(self.dim as u32)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dim) {
            return invalid(format!("dimension {} not supported", self.dim));
        }
        if ![1, 2, 4, 8].contains(&self.lanes) {
            return invalid(format!("lane width {} not in {{1, 2, 4, 8}}", self.lanes));
        }
        if self.basis == BasisKind::HermiteLike && self.degree < 3 {
            return Err(DgError::UnsupportedBasis(format!(
                "Hermite-like basis needs degree >= 3, got {}",
                self.degree
            )));
        }
        if self.degree + 1 > crate::tensor::MAX_1D {
            return invalid(format!("degree {} too high", self.degree));
        }
        Ok(())
    }
}

struct FaceSetup {
    minus: DofAccess,
    plus: Option<DofAccess>,
    face_minus: usize,
    face_plus: usize,
    layers_minus: Vec<usize>,
    layers_plus: Vec<usize>,
    dofs_minus: Vec<usize>,
    dofs_plus: Vec<usize>,
}

impl FaceSetup {
    fn touches_ghosts(&self) -> bool {
        self.minus.touches_ghosts || self.plus.as_ref().is_some_and(|p| p.touches_ghosts)
    }
}

/// Counted operations per batch for each part of the operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PartCounts {
    pub cell: KernelCounters,
    pub inner_face: Option<KernelCounters>,
    pub boundary_face: Option<KernelCounters>,
}

/// The operator on one rank.
pub struct RankOperator {
    pub config: OperatorConfig,
    pub rank: usize,
    pub layout: DofLayout,
    pub shapes: ShapeMatrices1D,
    pub cell_geometry: CellGeometry,
    pub face_geometry: FaceGeometry,
    pub plan: ExchangePlan,
    pub face_batches: Vec<FaceInfoBatch>,
    cell_access: Vec<DofAccess>,
    faces: Vec<FaceSetup>,
    /// Face batches processed after each cell batch.
    schedule: Vec<Vec<usize>>,
}

/// Buffers reused across batches.
struct Workspace<N> {
    cell_in: Vec<N>,
    cell_out: Vec<N>,
    qv: Vec<N>,
    grads: Vec<N>,
    scratch: Vec<N>,
    cell_minus: Vec<N>,
    cell_plus: Vec<N>,
    face_buf: Vec<N>,
    val_minus: Vec<N>,
    val_plus: Vec<N>,
    grad_minus: Vec<N>,
    grad_plus: Vec<N>,
    face_scratch: Vec<N>,
}

impl<N: Number> Workspace<N> {
    fn new(d: usize, k: usize) -> Self {
        let nc = k.pow(d as u32);
        let nf = k.pow(d as u32 - 1);
        let z = |n: usize| vec![N::zero(); n];
        Workspace {
            cell_in: z(nc),
            cell_out: z(nc),
            qv: z(nc),
            grads: z(d * nc),
            scratch: z(scratch_len(d, k).max(laplacian_scratch_len(k))),
            cell_minus: z(nc),
            cell_plus: z(nc),
            face_buf: z(2 * nf),
            val_minus: z(nf),
            val_plus: z(nf),
            grad_minus: z(d * nf),
            grad_plus: z(d * nf),
            face_scratch: z(scratch_len(d - 1, k).max(1)),
        }
    }
}

#[derive(Clone, Copy)]
struct Kernels<'a> {
    s: Kernel<'a>,
    st: Kernel<'a>,
    dco: Kernel<'a>,
    dcot: Kernel<'a>,
}

impl RankOperator {
    /// Sets up rank `rank`; `plan` must come from the same partition.
    pub fn new(
        config: &OperatorConfig,
        mesh: &Mesh,
        partition: &Partition,
        rank: usize,
        plan: ExchangePlan,
    ) -> Result<Self> {
        config.validate()?;
        if mesh.dim != config.dim {
            return invalid("mesh and operator dimensions differ");
        }
        let k = config.degree + 1;
        let d = config.dim;
        let basis = make_basis(config.basis, config.degree)?;
        let quad = gauss_quadrature(k)?;
        let shapes = shape_matrices(&basis, &quad)?;
        let layout = build_dof_layout(mesh, partition, rank, k, config.lanes)?;
        let cell_geometry =
            precompute_cell_geometry(mesh, &layout, &quad, config.geometry, config.equation, config.transport.clone())?;
        let cell_access = layout.cell_batches.iter().map(|b| layout.classify(&b.cells)).collect::<Result<Vec<_>>>()?;

        let needs = config.face_needs();
        let face_ids = if needs == FaceNeeds::None { Vec::new() } else { partition.faces_of(rank) };
        let face_batches = batch_faces(&partition.faces, &face_ids, config.lanes);
        let face_geometry =
            precompute_face_geometry(mesh, &partition.faces, &face_batches, config.lanes, config.degree, &quad)?;
        let deriv = needs == FaceNeeds::ValuesAndFirstDerivatives;
        let mut faces = Vec::with_capacity(face_batches.len());
        for fb in &face_batches {
            let fm = fb.interior_face_number as usize;
            let fp = fb.exterior_face_number as usize;
            let layers_minus = shapes.face_layers(fm % 2, deriv);
            let plus = if fb.boundary { None } else { Some(layout.classify(&fb.exterior_cell_numbers)?) };
            let layers_plus = if fb.boundary { Vec::new() } else { shapes.face_layers(fp % 2, deriv) };
            faces.push(FaceSetup {
                minus: layout.classify(&fb.interior_cell_numbers)?,
                plus,
                face_minus: fm,
                face_plus: fp,
                dofs_minus: face_dofs(d, k, fm, &layers_minus),
                dofs_plus: if fb.boundary { Vec::new() } else { face_dofs(d, k, fp, &layers_plus) },
                layers_minus,
                layers_plus,
            });
        }

        let mut batch_of = std::collections::HashMap::new();
        for (b, cb) in layout.cell_batches.iter().enumerate() {
            for &c in &cb.cells[..cb.n_filled] {
                batch_of.insert(c as usize, b);
            }
        }
        let mut schedule = vec![Vec::new(); layout.cell_batches.len()];
        for (f, fb) in face_batches.iter().enumerate() {
            let last = fb
                .faces
                .iter()
                .flat_map(|&i| [Some(partition.faces[i].interior_cell), partition.faces[i].exterior_cell])
                .flatten()
                .filter_map(|c| batch_of.get(&c).copied())
                .max()
                .ok_or_else(|| DgError::InvalidMesh("face batch without owned cell".into()))?;
            schedule[last].push(f);
        }
        Ok(RankOperator {
            config: config.clone(),
            rank,
            layout,
            shapes,
            cell_geometry,
            face_geometry,
            plan,
            face_batches,
            cell_access,
            faces,
            schedule,
        })
    }

    pub fn new_vector(&self) -> GhostedVector {
        self.layout.new_vector()
    }

    fn kernels(&self) -> Kernels<'_> {
        let f = self.config.form;
        Kernels {
            s: Kernel::prefer(&self.shapes.values, f),
            st: Kernel::prefer(&self.shapes.values_t, f),
            dco: Kernel::prefer(&self.shapes.colloc, f),
            dcot: Kernel::prefer(&self.shapes.colloc_t, f),
        }
    }

    /// `y = A u` on this rank. `u` must be in the clean state or have valid
    /// ghosts; `ep` is required when the rank has neighbors.
    pub fn apply(&self, u: &mut GhostedVector, y: &mut GhostedVector, ep: Option<&Endpoint>) -> Result<()> {
        match self.config.lanes {
            1 => self.apply_impl::<Lanes<1>>(u, y, ep),
            2 => self.apply_impl::<Lanes<2>>(u, y, ep),
            4 => self.apply_impl::<Lanes<4>>(u, y, ep),
            8 => self.apply_impl::<Lanes<8>>(u, y, ep),
            w => invalid(format!("lane width {w} not supported")),
        }
    }

    /// Same as [`apply`](Self::apply) with every arithmetic operation counted.
    pub fn apply_counting(&self, u: &mut GhostedVector, y: &mut GhostedVector, ep: Option<&Endpoint>) -> Result<()> {
        match self.config.lanes {
            1 => self.apply_impl::<Tally<1>>(u, y, ep),
            2 => self.apply_impl::<Tally<2>>(u, y, ep),
            4 => self.apply_impl::<Tally<4>>(u, y, ep),
            8 => self.apply_impl::<Tally<8>>(u, y, ep),
            w => invalid(format!("lane width {w} not supported")),
        }
    }

    /// Counted operations of the first cell batch, the first interior face
    /// batch and the first boundary face batch.
    pub fn part_counts(&self) -> Result<PartCounts> {
        match self.config.lanes {
            1 => self.part_counts_impl::<Tally<1>>(),
            2 => self.part_counts_impl::<Tally<2>>(),
            4 => self.part_counts_impl::<Tally<4>>(),
            8 => self.part_counts_impl::<Tally<8>>(),
            w => invalid(format!("lane width {w} not supported")),
        }
    }

    fn part_counts_impl<N: Number>(&self) -> Result<PartCounts> {
        let u = self.new_vector();
        let mut y = self.new_vector();
        let mut ws = Workspace::<N>::new(self.config.dim, self.config.degree + 1);
        let mut gs = GeometryScratch::default();
        let kern = self.kernels();
        if self.cell_access.is_empty() {
            return invalid("rank owns no cells");
        }
        let (r, cell) = counters::measure(|| self.cell_batch(0, u.raw(), &mut y.data, &mut ws, &mut gs, kern));
        r?;
        let mut face = |interior: bool| {
            self.faces
                .iter()
                .position(|f| f.plus.is_some() == interior)
                .map(|f| counters::measure(|| self.face_batch(f, u.raw(), &mut y.data, &mut ws, kern)).1)
        };
        let inner_face = face(true);
        let boundary_face = face(false);
        Ok(PartCounts { cell, inner_face, boundary_face })
    }

    fn check_vector(&self, v: &GhostedVector) -> Result<()> {
        if v.len() != self.layout.n_owned || v.n_ghost() != self.layout.n_ghost {
            return invalid("vector does not match the rank's dof layout");
        }
        Ok(())
    }

    fn apply_impl<N: Number>(&self, u: &mut GhostedVector, y: &mut GhostedVector, ep: Option<&Endpoint>) -> Result<()> {
        self.check_vector(u)?;
        self.check_vector(y)?;
        let d = self.config.dim;
        let k = self.config.degree + 1;
        let has_faces = self.config.face_needs() != FaceNeeds::None;
        y.zero_out_ghosts();
        let mut pending = false;
        if has_faces && u.state() != ExchangeState::GhostsValid {
            start_update(u, &self.plan, ep)?;
            pending = true;
        }
        let mut ws = Workspace::<N>::new(d, k);
        let mut gs = GeometryScratch::default();
        let kern = self.kernels();
        for b in 0..self.cell_access.len() {
            self.cell_batch(b, u.raw(), &mut y.data, &mut ws, &mut gs, kern)?;
            for &f in &self.schedule[b] {
                if pending && self.faces[f].touches_ghosts() {
                    finish_update(u, &self.plan, ep)?;
                    pending = false;
                }
                self.face_batch(f, u.raw(), &mut y.data, &mut ws, kern);
            }
        }
        if pending {
            finish_update(u, &self.plan, ep)?;
        }
        if has_faces {
            if y.n_ghost() > 0 {
                y.set_state(ExchangeState::HasRemoteContributions);
            }
            compress(y, &self.plan, ep)?;
        }
        u.reset_ghost_state();
        Ok(())
    }

    fn cell_batch<N: Number>(
        &self,
        b: usize,
        u: &[f64],
        y: &mut [f64],
        ws: &mut Workspace<N>,
        gs: &mut GeometryScratch,
        kern: Kernels,
    ) -> Result<()> {
        let n = self.layout.dofs_per_cell;
        let acc = &self.cell_access[b];
        gather_unchecked(u, acc, n, &mut ws.cell_in);
        let geo = self.cell_geometry.batch::<N>(b, &self.shapes, gs);
        cell_kernel(&self.config, &self.shapes, &geo, kern, ws)?;
        scatter_unchecked(y, acc, n, &ws.cell_out, false);
        Ok(())
    }

    fn face_batch<N: Number>(&self, f: usize, u: &[f64], y: &mut [f64], ws: &mut Workspace<N>, kern: Kernels) {
        let fs = &self.faces[f];
        let geo = self.face_geometry.batch(f);
        let laplace = self.config.equation == Equation::Laplacian;
        let hd = usize::from(laplace);
        let fk = FaceKernels { d: self.config.dim, shapes: &self.shapes, kern };
        let nq = self.face_geometry.n_q;
        read_dofs_unchecked(u, &fs.minus, &fs.dofs_minus, &mut ws.cell_minus);
        fk.evaluate(
            fs.face_minus,
            hd,
            &fs.layers_minus,
            &ws.cell_minus,
            &mut ws.val_minus,
            &mut ws.grad_minus,
            &mut ws.face_buf,
            &mut ws.face_scratch,
        );
        if let Some(plus) = &fs.plus {
            read_dofs_unchecked(u, plus, &fs.dofs_plus, &mut ws.cell_plus);
            fk.evaluate(
                fs.face_plus,
                hd,
                &fs.layers_plus,
                &ws.cell_plus,
                &mut ws.val_plus,
                &mut ws.grad_plus,
                &mut ws.face_buf,
                &mut ws.face_scratch,
            );
        }
        let boundary = fs.plus.is_none();
        let d = self.config.dim;
        if laplace {
            laplace_face_flux(d, nq, &geo, boundary, ws);
        } else {
            advection_face_flux(d, nq, &geo, &self.config.transport, boundary, ws);
        }
        fk.integrate(
            fs.face_minus,
            hd,
            &fs.layers_minus,
            &mut ws.val_minus,
            &mut ws.grad_minus,
            &mut ws.cell_minus,
            &mut ws.face_buf,
            &mut ws.face_scratch,
        );
        add_dofs_unchecked(y, &fs.minus, &fs.dofs_minus, &ws.cell_minus);
        if let Some(plus) = &fs.plus {
            fk.integrate(
                fs.face_plus,
                hd,
                &fs.layers_plus,
                &mut ws.val_plus,
                &mut ws.grad_plus,
                &mut ws.cell_plus,
                &mut ws.face_buf,
                &mut ws.face_scratch,
            );
            add_dofs_unchecked(y, plus, &fs.dofs_plus, &ws.cell_plus);
        }
    }

    /// Right-hand side for forcing `f` and Dirichlet data `g`, owned entries.
    pub fn assemble_rhs(&self, mesh: &Mesh, f: &ScalarFn, g: &ScalarFn) -> Result<GhostedVector> {
        match self.config.lanes {
            1 => self.rhs_impl::<Lanes<1>>(mesh, f, g),
            2 => self.rhs_impl::<Lanes<2>>(mesh, f, g),
            4 => self.rhs_impl::<Lanes<4>>(mesh, f, g),
            8 => self.rhs_impl::<Lanes<8>>(mesh, f, g),
            w => invalid(format!("lane width {w} not supported")),
        }
    }

    fn rhs_impl<N: Number>(&self, mesh: &Mesh, f: &ScalarFn, g: &ScalarFn) -> Result<GhostedVector> {
        let d = self.config.dim;
        let k = self.config.degree + 1;
        let w = N::LANES;
        let mut out = self.new_vector();
        let mut ws = Workspace::<N>::new(d, k);
        let kern = self.kernels();
        let (points, weights) = tensor_points(d, &self.shapes.quadrature);
        for (b, cb) in self.layout.cell_batches.iter().enumerate() {
            let maps: Vec<_> =
                (0..w).map(|l| mesh.cell_mapping(cb.cells[if l < cb.n_filled { l } else { 0 }] as usize)).collect();
            for (q, xi) in points.iter().enumerate() {
                let mut vals = [0.0; 8];
                for (l, map) in maps.iter().enumerate() {
                    let pg = point_geometry(map, *xi)?;
                    vals[l] = f(pg.x) * pg.det * weights[q];
                }
                ws.qv[q] = N::from_fn(|l| vals[l]);
            }
            tensor_sweeps(d, kern.st, &ws.qv, &mut ws.cell_out, &mut ws.scratch, false, Sweep::BasisChange);
            scatter_unchecked(&mut out.data, &self.cell_access[b], self.layout.dofs_per_cell, &ws.cell_out, false);
        }
        let laplace = self.config.equation == Equation::Laplacian;
        let hd = usize::from(laplace);
        let fk = FaceKernels { d, shapes: &self.shapes, kern };
        let nq = self.face_geometry.n_q;
        for (fi, fs) in self.faces.iter().enumerate() {
            if fs.plus.is_some() {
                continue;
            }
            let geo = self.face_geometry.batch(fi);
            for q in 0..nq {
                let xs = geo.position(q, w);
                let gv = N::from_fn(|l| g(xs[l]));
                let jxw: N = geo.jxw(q);
                if laplace {
                    let tau: N = geo.tau();
                    ws.val_minus[q] = (gv * tau * jxw).scale(2.0);
                    let tg = -(gv * jxw);
                    let jn = geo.jn::<N>(false, q);
                    for i in 0..d {
                        ws.grad_minus[i * nq + q] = jn[i] * tg;
                    }
                } else {
                    let cn: N = transport_normal(d, &geo, &self.config.transport, q);
                    ws.val_minus[q] = -(gv * (cn - cn.abs()) * jxw);
                }
            }
            fk.integrate(
                fs.face_minus,
                hd,
                &fs.layers_minus,
                &mut ws.val_minus,
                &mut ws.grad_minus,
                &mut ws.cell_minus,
                &mut ws.face_buf,
                &mut ws.face_scratch,
            );
            add_dofs_unchecked(&mut out.data, &fs.minus, &fs.dofs_minus, &ws.cell_minus);
        }
        Ok(out)
    }
}

fn cell_kernel<N: Number>(
    config: &OperatorConfig,
    shapes: &ShapeMatrices1D,
    geo: &CellBatchGeometry,
    kern: Kernels,
    ws: &mut Workspace<N>,
) -> Result<()> {
    let d = config.dim;
    let nq = shapes.n_q.pow(d as u32);
    let Workspace { cell_in, cell_out, qv, grads, scratch, .. } = ws;
    match config.equation {
        Equation::Mass => {
            tensor_sweeps(d, kern.s, cell_in, qv, scratch, false, Sweep::BasisChange);
            for (q, v) in qv.iter_mut().enumerate().take(nq) {
                *v = *v * geo.jxw::<N>(q);
            }
            tensor_sweeps(d, kern.st, qv, cell_out, scratch, false, Sweep::BasisChange);
        }
        Equation::InverseMass => {
            let (inv, inv_t) = match (&shapes.inverse_values, &shapes.inverse_values_t) {
                (Some(a), Some(b)) => (Kernel::prefer(a, config.form), Kernel::prefer(b, config.form)),
                _ => return Err(DgError::Unsupported("inverse mass needs as many points as basis functions".into())),
            };
            tensor_sweeps(d, inv_t, cell_in, qv, scratch, false, Sweep::BasisChange);
            for (q, v) in qv.iter_mut().enumerate().take(nq) {
                *v = *v / geo.jxw::<N>(q);
            }
            tensor_sweeps(d, inv, qv, cell_out, scratch, false, Sweep::BasisChange);
        }
        Equation::Advection => {
            tensor_sweeps(d, kern.s, cell_in, qv, scratch, false, Sweep::BasisChange);
            for q in 0..nq {
                let t = geo.advection_flux(q, -qv[q]);
                for a in 0..d {
                    grads[a * nq + q] = t[a];
                }
            }
            divergence_sweeps(d, kern.dcot, grads, qv, false, Sweep::Derivative);
            tensor_sweeps(d, kern.st, qv, cell_out, scratch, false, Sweep::BasisChange);
        }
        Equation::Laplacian if d == 3 => {
            tiled_cell_laplacian(shapes, config.form, cell_in, cell_out, scratch, |q, g| geo.laplace_flux(q, g))?;
        }
        Equation::Laplacian => {
            tensor_sweeps(d, kern.s, cell_in, qv, scratch, false, Sweep::BasisChange);
            gradient_sweeps(d, kern.dco, qv, grads, false, Sweep::Derivative);
            for q in 0..nq {
                let mut g = [N::zero(); 3];
                for a in 0..d {
                    g[a] = grads[a * nq + q];
                }
                let t = geo.laplace_flux(q, g);
                for a in 0..d {
                    grads[a * nq + q] = t[a];
                }
            }
            divergence_sweeps(d, kern.dcot, grads, qv, false, Sweep::Derivative);
            tensor_sweeps(d, kern.st, qv, cell_out, scratch, false, Sweep::BasisChange);
        }
    }
    Ok(())
}

/// `c(x_q) · n⁻` on every lane.
#[inline]
fn transport_normal<N: Number>(d: usize, geo: &FaceBatchGeometry, field: &VectorField, q: usize) -> N {
    let n = geo.normal::<N>(q);
    let c: [N; 3] = match field {
        VectorField::Constant(v) => [N::splat(v[0]), N::splat(v[1]), N::splat(v[2])],
        VectorField::Function(f) => {
            let vals: Vec<[f64; 3]> = geo.position(q, N::LANES).into_iter().map(|x| f(x)).collect();
            [N::from_fn(|l| vals[l][0]), N::from_fn(|l| vals[l][1]), N::from_fn(|l| vals[l][2])]
        }
    };
    let mut cn = c[0] * n[0];
    for a in 1..d {
        cn = c[a].fma(n[a], cn);
    }
    cn
}

/// Upwind flux; on boundary faces the exterior value is `-u⁻`.
fn advection_face_flux<N: Number>(
    d: usize,
    nq: usize,
    geo: &FaceBatchGeometry,
    field: &VectorField,
    boundary: bool,
    ws: &mut Workspace<N>,
) {
    for q in 0..nq {
        let um = ws.val_minus[q];
        let up = if boundary { -um } else { ws.val_plus[q] };
        let cn: N = transport_normal(d, geo, field, q);
        let jxw: N = geo.jxw(q);
        let flux = (cn * (um + up) + cn.abs() * (um - up)) * jxw.scale(0.5);
        ws.val_minus[q] = flux;
        if !boundary {
            ws.val_plus[q] = -flux;
        }
    }
}

/// Interior penalty terms; on boundary faces the exterior trace mirrors the
/// interior one with the opposite value and equal normal derivative.
fn laplace_face_flux<N: Number>(d: usize, nq: usize, geo: &FaceBatchGeometry, boundary: bool, ws: &mut Workspace<N>) {
    let tau: N = geo.tau();
    for q in 0..nq {
        let jm = geo.jn::<N>(false, q);
        let mut dn_m = jm[0] * ws.grad_minus[q];
        for i in 1..d {
            dn_m = jm[i].fma(ws.grad_minus[i * nq + q], dn_m);
        }
        let jxw: N = geo.jxw(q);
        let um = ws.val_minus[q];
        if boundary {
            let jump = um + um;
            let value_test = (jump * tau - dn_m) * jxw;
            let grad_test = -(um * jxw);
            ws.val_minus[q] = value_test;
            for i in 0..d {
                ws.grad_minus[i * nq + q] = jm[i] * grad_test;
            }
        } else {
            let jp = geo.jn::<N>(true, q);
            let mut dn_p = jp[0] * ws.grad_plus[q];
            for i in 1..d {
                dn_p = jp[i].fma(ws.grad_plus[i * nq + q], dn_p);
            }
            let jump = um - ws.val_plus[q];
            let avg = (dn_m + dn_p).scale(0.5);
            let value_test = (jump * tau - avg) * jxw;
            let grad_test = (jump * jxw).scale(-0.5);
            ws.val_minus[q] = value_test;
            ws.val_plus[q] = -value_test;
            for i in 0..d {
                ws.grad_minus[i * nq + q] = jm[i] * grad_test;
                ws.grad_plus[i * nq + q] = jp[i] * grad_test;
            }
        }
    }
}

/// Face evaluation and testing for one side of a face batch.
struct FaceKernels<'a> {
    d: usize,
    shapes: &'a ShapeMatrices1D,
    kern: Kernels<'a>,
}

impl FaceKernels<'_> {
    /// Values (and the face-local reference gradient when `hd = 1`) at the
    /// face quadrature points.
    #[allow(clippy::too_many_arguments)]
    fn evaluate<N: Number>(
        &self,
        face: usize,
        hd: usize,
        layers: &[usize],
        cell: &[N],
        vals: &mut [N],
        grad: &mut [N],
        buf: &mut [N],
        scratch: &mut [N],
    ) {
        let d = self.d;
        let nf = self.shapes.n_basis.pow(d as u32 - 1);
        let nq = self.shapes.n_q.pow(d as u32 - 1);
        face_interpolate_layers(d, face / 2, face % 2, hd, self.shapes, layers, cell, buf);
        tensor_sweeps(d - 1, self.kern.s, &buf[..nf], vals, scratch, false, Sweep::BasisChange);
        if hd > 0 {
            tensor_sweeps(
                d - 1,
                self.kern.s,
                &buf[nf..2 * nf],
                &mut grad[(d - 1) * nq..d * nq],
                scratch,
                false,
                Sweep::BasisChange,
            );
            if d > 1 {
                gradient_sweeps(d - 1, self.kern.dco, vals, &mut grad[..(d - 1) * nq], false, Sweep::Derivative);
            }
        }
    }

    /// Tests values (and face-local reference gradients) against the cell
    /// basis; writes the face layers of `cell`.
    #[allow(clippy::too_many_arguments)]
    fn integrate<N: Number>(
        &self,
        face: usize,
        hd: usize,
        layers: &[usize],
        vals: &mut [N],
        grad: &mut [N],
        cell: &mut [N],
        buf: &mut [N],
        scratch: &mut [N],
    ) {
        let d = self.d;
        let nf = self.shapes.n_basis.pow(d as u32 - 1);
        let nq = self.shapes.n_q.pow(d as u32 - 1);
        if hd > 0 {
            if d > 1 {
                divergence_sweeps(d - 1, self.kern.dcot, &grad[..(d - 1) * nq], vals, true, Sweep::Derivative);
            }
            tensor_sweeps(
                d - 1,
                self.kern.st,
                &grad[(d - 1) * nq..d * nq],
                &mut buf[nf..2 * nf],
                scratch,
                false,
                Sweep::BasisChange,
            );
        }
        tensor_sweeps(d - 1, self.kern.st, vals, &mut buf[..nf], scratch, false, Sweep::BasisChange);
        face_integrate_layers(d, face / 2, face % 2, hd, self.shapes, layers, buf, cell, false);
    }
}

/// Operator on all ranks of a partition, with vectors in natural numbering
/// (`cell * dofs_per_cell + j`).
pub struct Operator {
    pub config: OperatorConfig,
    pub mesh: Mesh,
    pub partition: Partition,
    pub ranks: Vec<RankOperator>,
}

impl Operator {
    /// Slab partition over `n_ranks`.
    pub fn new(config: &OperatorConfig, mesh: &Mesh, n_ranks: usize) -> Result<Self> {
        let partition = Partition::slabs(mesh, n_ranks)?;
        Self::with_partition(config, mesh, partition)
    }

    pub fn with_partition(config: &OperatorConfig, mesh: &Mesh, partition: Partition) -> Result<Self> {
        config.validate()?;
        let k = config.degree + 1;
        let layouts = (0..partition.n_ranks)
            .map(|r| build_dof_layout(mesh, &partition, r, k, config.lanes))
            .collect::<Result<Vec<_>>>()?;
        let shapes = shape_matrices(&make_basis(config.basis, config.degree)?, &gauss_quadrature(k)?)?;
        let plans = build_exchange_plans(&partition, &layouts, &shapes, config.face_needs(), config.plan);
        let ranks = plans
            .into_iter()
            .enumerate()
            .map(|(r, plan)| RankOperator::new(config, mesh, &partition, r, plan))
            .collect::<Result<Vec<_>>>()?;
        Ok(Operator { config: config.clone(), mesh: mesh.clone(), partition, ranks })
    }

    pub fn n_dofs(&self) -> usize {
        self.mesh.n_cells() * self.config.dofs_per_cell()
    }

    /// `A u` for `u` in natural numbering.
    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.run(u, false)
    }

    /// Like [`apply`](Self::apply), with arithmetic counted on each rank thread.
    pub fn apply_counting(&self, u: &[f64]) -> Result<(Vec<f64>, Vec<KernelCounters>)> {
        let mut counts = Vec::new();
        let y = self.run_with(u, true, &mut counts)?;
        Ok((y, counts))
    }

    fn run(&self, u: &[f64], counting: bool) -> Result<Vec<f64>> {
        let mut counts = Vec::new();
        self.run_with(u, counting, &mut counts)
    }

    fn run_with(&self, u: &[f64], counting: bool, counts: &mut Vec<KernelCounters>) -> Result<Vec<f64>> {
        if u.len() != self.n_dofs() {
            return invalid(format!("vector has {} entries, expected {}", u.len(), self.n_dofs()));
        }
        let run_rank = |op: &RankOperator, ep: Option<&Endpoint>| -> Result<(GhostedVector, KernelCounters)> {
            let mut uv = op.new_vector();
            op.layout.import_natural(u, &mut uv);
            let mut yv = op.new_vector();
            let before = counters::snapshot();
            if counting {
                op.apply_counting(&mut uv, &mut yv, ep)?;
            } else {
                op.apply(&mut uv, &mut yv, ep)?;
            }
            Ok((yv, counters::snapshot().since(&before)))
        };
        let results: Vec<Result<(GhostedVector, KernelCounters)>> = if self.ranks.len() == 1 {
            vec![run_rank(&self.ranks[0], None)]
        } else {
            let world = create_world(self.ranks.len());
            std::thread::scope(|s| {
                let handles: Vec<_> = world
                    .into_iter()
                    .zip(&self.ranks)
                    .map(|(ep, op)| s.spawn(move || run_rank(op, Some(&ep))))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("rank thread panicked")).collect()
            })
        };
        let mut y = vec![0.0; u.len()];
        for (op, r) in self.ranks.iter().zip(results) {
            let (yv, c) = r?;
            op.layout.export_natural(&yv, &mut y);
            counts.push(c);
        }
        Ok(y)
    }

    /// Right-hand side in natural numbering.
    pub fn rhs(&self, f: &ScalarFn, g: &ScalarFn) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_dofs()];
        for op in &self.ranks {
            let v = op.assemble_rhs(&self.mesh, f, g)?;
            op.layout.export_natural(&v, &mut out);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{all_dirichlet, all_periodic, Mapping};
    use std::sync::Arc;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    fn interpolate(op: &Operator, f: impl Fn([f64; 3]) -> f64 + Send + Sync + 'static) -> Vec<f64> {
        // Project by solving with the inverse mass matrix.
        let mut cfg = op.config.clone();
        cfg.equation = Equation::InverseMass;
        let inv = Operator::new(&cfg, &op.mesh, 1).unwrap();
        let ff: ScalarFn = Arc::new(f);
        let zero: ScalarFn = Arc::new(|_| 0.0);
        let mut mass_cfg = cfg.clone();
        mass_cfg.equation = Equation::Mass;
        let mass = Operator::new(&mass_cfg, &op.mesh, 1).unwrap();
        let b = mass.rhs(&ff, &zero).unwrap();
        inv.apply(&b).unwrap()
    }

    #[test]
    fn inverse_mass_round_trip() {
        let mesh = Mesh::unit_box(2, 3, Mapping::PolynomialDeformation { degree: 2, amplitude: 0.08 }, all_dirichlet())
            .unwrap();
        for p in [1, 3] {
            let m = Operator::new(&OperatorConfig::new(Equation::Mass, 2, p), &mesh, 1).unwrap();
            let mi = Operator::new(&OperatorConfig::new(Equation::InverseMass, 2, p), &mesh, 1).unwrap();
            let u = random(m.n_dofs(), 3);
            let back = mi.apply(&m.apply(&u).unwrap()).unwrap();
            let err = u.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-11, "p={p} err={err}");
        }
    }

    #[test]
    fn advection_constant_in_null_space_on_periodic_mesh() {
        let mesh = Mesh::unit_box(2, 4, Mapping::PolynomialDeformation { degree: 2, amplitude: 0.05 }, all_periodic())
            .unwrap();
        let op = Operator::new(&OperatorConfig::new(Equation::Advection, 2, 3), &mesh, 1).unwrap();
        let y = op.apply(&interpolate(&op, |_| 1.0)).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1e-12), "{:?}", y.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }

    #[test]
    fn laplacian_of_linear_field_has_no_interior_face_terms() {
        // A linear field is reproduced exactly, so its jumps vanish and the
        // cell terms of neighbors cancel in the interior.
        let mesh = Mesh::unit_box(2, 3, Mapping::Cartesian, all_periodic()).unwrap();
        let op = Operator::new(&OperatorConfig::new(Equation::Laplacian, 2, 3), &mesh, 1).unwrap();
        let y = op.apply(&interpolate(&op, |_| 2.5)).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn lane_widths_agree() {
        let mesh = Mesh::unit_box(3, 3, Mapping::PolynomialDeformation { degree: 2, amplitude: 0.05 }, all_dirichlet())
            .unwrap();
        for eq in [Equation::Mass, Equation::Advection, Equation::Laplacian] {
            let base = OperatorConfig::new(eq, 3, 3);
            let ops: Vec<_> =
                [1, 2, 4, 8].iter().map(|&w| Operator::new(&base.clone().with_lanes(w), &mesh, 1).unwrap()).collect();
            let u = random(ops[0].n_dofs(), 11);
            let y1 = ops[0].apply(&u).unwrap();
            for op in &ops[1..] {
                let y = op.apply(&u).unwrap();
                let err = y.iter().zip(&y1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                let scale = y1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                assert!(err <= 1e-13 * scale, "{eq:?} W={} err={err}", op.config.lanes);
            }
        }
    }

    #[test]
    fn ranks_agree() {
        let mesh = Mesh::unit_box(2, 4, Mapping::PolynomialDeformation { degree: 2, amplitude: 0.05 }, all_dirichlet())
            .unwrap();
        for eq in [Equation::Advection, Equation::Laplacian] {
            let cfg = OperatorConfig::new(eq, 2, 3);
            let reference = Operator::new(&cfg, &mesh, 1).unwrap();
            let u = random(reference.n_dofs(), 5);
            let y1 = reference.apply(&u).unwrap();
            let scale = y1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for ranks in [2, 3, 4, 7] {
                let y = Operator::new(&cfg, &mesh, ranks).unwrap().apply(&u).unwrap();
                let err = y.iter().zip(&y1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(err <= 1e-12 * scale, "{eq:?} ranks={ranks} err={err}");
            }
        }
    }

    #[test]
    fn table_counts() {
        for d in [2, 3] {
            let mesh = Mesh::unit_box(d, 3, Mapping::Cartesian, all_dirichlet()).unwrap();
            let dm = d as u64 - 1;
            let adv = Operator::new(&OperatorConfig::new(Equation::Advection, d, 4), &mesh, 1).unwrap();
            let c = adv.ranks[0].part_counts().unwrap();
            let row = |k: KernelCounters| (k.basis_change, k.derivative, k.face_normal);
            assert_eq!(row(c.cell), (2 * d as u64, d as u64, 0));
            assert_eq!(row(c.inner_face.unwrap()), (4 * dm, 0, 4));
            assert_eq!(row(c.boundary_face.unwrap()), (2 * dm, 0, 2));
            let lap = Operator::new(&OperatorConfig::new(Equation::Laplacian, d, 4), &mesh, 1).unwrap();
            let c = lap.ranks[0].part_counts().unwrap();
            assert_eq!(row(c.cell), (2 * d as u64, 2 * d as u64, 0));
            assert_eq!(row(c.inner_face.unwrap()), (8 * dm, 4 * dm, 8));
            assert_eq!(row(c.boundary_face.unwrap()), (4 * dm, 2 * dm, 4));
        }
    }

    #[test]
    fn cell_kernel_counts() {
        for (eq, d, per_batch) in [(Equation::Advection, 3, 9), (Equation::Laplacian, 2, 8), (Equation::Mass, 3, 6)] {
            let mesh = Mesh::unit_box(d, 2, Mapping::Cartesian, all_dirichlet()).unwrap();
            let op = Operator::new(&OperatorConfig::new(eq, d, 3).with_lanes(1), &mesh, 1).unwrap();
            let r = &op.ranks[0];
            let mut ws = Workspace::<Lanes<1>>::new(d, 4);
            let mut gs = GeometryScratch::default();
            let u = r.new_vector();
            let mut y = r.new_vector();
            counters::reset();
            r.cell_batch(0, u.raw(), &mut y.data, &mut ws, &mut gs, r.kernels()).unwrap();
            assert_eq!(counters::snapshot().kernel_invocations(), per_batch, "{eq:?}");
        }
    }
}
