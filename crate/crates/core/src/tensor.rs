//! Sum-factorized tensor-product kernels on lane batches.
//!
//! Tensors are flat arrays with the first axis running fastest. A sweep
//! applies a 1D matrix along one axis to every line of the tensor; the
//! d-dimensional kernels are sequences of sweeps. All temporaries come from
//! caller-provided scratch.

use crate::basis::{EvenOddMatrix, Matrix1D, Op1D, ShapeMatrices1D};
use crate::counters::{record_sweeps, Sweep};
use crate::error::{invalid, DgError, Result};
use crate::lanes::Number;

/// Largest supported 1D extent.
pub const MAX_1D: usize = 32;

/// Inner 1D kernel form.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum KernelForm {
    Plain,
    #[default]
    EvenOdd,
}

/// A resolved 1D kernel.
#[derive(Clone, Copy, Debug)]
pub enum Kernel<'a> {
    Plain(&'a Matrix1D),
    EvenOdd(&'a EvenOddMatrix),
}

impl<'a> Kernel<'a> {
    /// Picks the requested form, failing if the even-odd form is unavailable.
    pub fn resolve(op: &'a Op1D, form: KernelForm) -> Result<Kernel<'a>> {
        match form {
            KernelForm::Plain => Ok(Kernel::Plain(&op.plain)),
            KernelForm::EvenOdd => op
                .even_odd
                .as_ref()
                .map(Kernel::EvenOdd)
                .ok_or_else(|| DgError::Unsupported("even-odd form requested for a non-symmetric matrix".into())),
        }
    }

    /// Picks the requested form, silently using the plain form when the
    /// matrix has no even-odd structure.
    pub fn prefer(op: &'a Op1D, form: KernelForm) -> Kernel<'a> {
        match (form, &op.even_odd) {
            (KernelForm::EvenOdd, Some(eo)) => Kernel::EvenOdd(eo),
            _ => Kernel::Plain(&op.plain),
        }
    }

    #[inline(always)]
    pub fn rows(&self) -> usize {
        match self {
            Kernel::Plain(m) => m.rows,
            Kernel::EvenOdd(m) => m.rows,
        }
    }

    #[inline(always)]
    pub fn cols(&self) -> usize {
        match self {
            Kernel::Plain(m) => m.cols,
            Kernel::EvenOdd(m) => m.cols,
        }
    }

    /// `y = M x` for one stripe.
    #[inline(always)]
    pub fn stripe<N: Number>(&self, x: &[N], y: &mut [N]) {
        match self {
            Kernel::Plain(m) => plain_stripe(m, x, y),
            Kernel::EvenOdd(m) => even_odd_stripe(m, x, y),
        }
    }
}

#[inline(always)]
fn plain_stripe<N: Number>(m: &Matrix1D, x: &[N], y: &mut [N]) {
    let cols = m.cols;
    for (r, yr) in y.iter_mut().enumerate().take(m.rows) {
        let row = &m.data[r * cols..(r + 1) * cols];
        let mut acc = x[0].scale(row[0]);
        for c in 1..cols {
            acc = x[c].fma_scalar(row[c], acc);
        }
        *yr = acc;
    }
}

/// Dot product of `coeffs` with `x`, or `None` for an empty sum.
#[inline(always)]
fn dot<N: Number>(coeffs: &[f64], x: &[N]) -> Option<N> {
    let (first, rest) = coeffs.split_first()?;
    let mut acc = x[0].scale(*first);
    for (c, &s) in rest.iter().enumerate() {
        acc = x[c + 1].fma_scalar(s, acc);
    }
    Some(acc)
}

#[inline(always)]
fn even_odd_stripe<N: Number>(m: &EvenOddMatrix, x: &[N], y: &mut [N]) {
    let (n_out, n_in) = (m.rows, m.cols);
    let (hi, mi) = (n_in / 2, n_in % 2);
    let (ho, mo) = (n_out / 2, n_out % 2);
    let ecols = hi + mi;
    let mut xe = [N::zero(); MAX_1D / 2 + 1];
    let mut xo = [N::zero(); MAX_1D / 2];
    for c in 0..hi {
        xe[c] = x[c] + x[n_in - 1 - c];
        xo[c] = x[c] - x[n_in - 1 - c];
    }
    if mi == 1 {
        xe[hi] = x[hi];
    }
    let positive = m.sign > 0.0;
    for r in 0..ho {
        let e = dot(&m.even[r * ecols..(r + 1) * ecols], &xe);
        let o = dot(&m.odd[r * hi..(r + 1) * hi], &xo);
        let (a, b) = match (e, o) {
            (Some(e), Some(o)) => (e + o, if positive { e - o } else { o - e }),
            (Some(e), None) => (e, if positive { e } else { -e }),
            (None, Some(o)) => (o, if positive { -o } else { o }),
            (None, None) => (N::zero(), N::zero()),
        };
        y[r] = a;
        y[n_out - 1 - r] = b;
    }
    if mo == 1 {
        y[ho] = if positive {
            dot(&m.even[ho * ecols..(ho + 1) * ecols], &xe)
        } else {
            dot(&m.odd[ho * hi..(ho + 1) * hi], &xo)
        }
        .unwrap_or_else(N::zero);
    }
}

#[inline(always)]
fn load<N: Number>(src: &[N], off: usize, stride: usize, x: &mut [N]) {
    for (c, xc) in x.iter_mut().enumerate() {
        *xc = src[off + c * stride];
    }
}

#[inline(always)]
fn store<N: Number>(dst: &mut [N], off: usize, stride: usize, y: &[N], add: bool) {
    if add {
        for (r, &yr) in y.iter().enumerate() {
            dst[off + r * stride] += yr;
        }
    } else {
        for (r, &yr) in y.iter().enumerate() {
            dst[off + r * stride] = yr;
        }
    }
}

/// One kernel along the middle axis of a `(pre, cols, post)` tensor,
/// producing a `(pre, rows, post)` tensor.
#[inline]
pub(crate) fn sweep<N: Number>(kernel: Kernel, pre: usize, post: usize, input: &[N], output: &mut [N], add: bool) {
    let (ni, no) = (kernel.cols(), kernel.rows());
    debug_assert!(ni <= MAX_1D && no <= MAX_1D);
    debug_assert!(input.len() >= pre * ni * post && output.len() >= pre * no * post);
    let mut x = [N::zero(); MAX_1D];
    let mut y = [N::zero(); MAX_1D];
    for p in 0..post {
        for i in 0..pre {
            load(input, p * pre * ni + i, pre, &mut x[..ni]);
            kernel.stripe(&x[..ni], &mut y[..no]);
            store(output, p * pre * no + i, pre, &y[..no], add);
        }
    }
}

/// In-place variant of [`sweep`] for square kernels.
#[inline]
pub(crate) fn sweep_in_place<N: Number>(kernel: Kernel, pre: usize, post: usize, data: &mut [N]) {
    let n = kernel.cols();
    debug_assert_eq!(n, kernel.rows());
    let mut x = [N::zero(); MAX_1D];
    let mut y = [N::zero(); MAX_1D];
    for p in 0..post {
        for i in 0..pre {
            let off = p * pre * n + i;
            load(data, off, pre, &mut x[..n]);
            kernel.stripe(&x[..n], &mut y[..n]);
            store(data, off, pre, &y[..n], false);
        }
    }
}

/// Scratch entries needed by the d-dimensional kernels for 1D extent `n`.
pub fn scratch_len(d: usize, n: usize) -> usize {
    2 * n.pow(d as u32)
}

/// Applies `kernel` along every axis of a `cols^d` tensor, giving `rows^d`.
pub(crate) fn tensor_sweeps<N: Number>(
    d: usize,
    kernel: Kernel,
    input: &[N],
    output: &mut [N],
    scratch: &mut [N],
    add: bool,
    kind: Sweep,
) {
    let (ni, no) = (kernel.cols(), kernel.rows());
    if d == 0 {
        store(output, 0, 1, &input[..1], add);
        return;
    }
    record_sweeps(kind, d as u64);
    let big = ni.max(no).pow(d as u32);
    let (s0, rest) = scratch.split_at_mut(big);
    let s1 = &mut rest[..big];
    for a in 0..d {
        let pre = no.pow(a as u32);
        let post = ni.pow((d - 1 - a) as u32);
        let last = a + 1 == d;
        // Sweep a writes s0 (even a) or s1 (odd a); the last one writes `output`.
        let (src, dst): (&[N], &mut [N]) = match (a, last) {
            (0, true) => (input, &mut *output),
            (0, false) => (input, &mut *s0),
            (_, true) => (if a % 2 == 1 { &*s0 } else { &*s1 }, &mut *output),
            (_, false) => {
                if a % 2 == 1 {
                    (&*s0, &mut *s1)
                } else {
                    (&*s1, &mut *s0)
                }
            }
        };
        sweep(kernel, pre, post, src, dst, add && last);
    }
}

fn check_len(name: &str, got: usize, want: usize) -> Result<()> {
    if got < want {
        return invalid(format!("{name} has {got} entries, need {want}"));
    }
    Ok(())
}

/// Change of basis between `k^d` coefficients and `l^d` quadrature values.
///
/// With `interpolate` the value matrix `S` is applied along all axes,
/// otherwise its transpose.
#[allow(clippy::too_many_arguments)]
pub fn basis_change<N: Number>(
    d: usize,
    interpolate: bool,
    add: bool,
    shapes: &ShapeMatrices1D,
    form: KernelForm,
    input: &[N],
    output: &mut [N],
    scratch: &mut [N],
) -> Result<()> {
    let (k, l) = (shapes.n_basis, shapes.n_q);
    let (op, n_in, n_out) = if interpolate { (&shapes.values, k, l) } else { (&shapes.values_t, l, k) };
    check_len("input", input.len(), n_in.pow(d as u32))?;
    check_len("output", output.len(), n_out.pow(d as u32))?;
    check_len("scratch", scratch.len(), scratch_len(d, l))?;
    let kernel = Kernel::resolve(op, form)?;
    tensor_sweeps(d, kernel, input, output, scratch, add, Sweep::BasisChange);
    Ok(())
}

/// In-place change of basis, only for `k = l`.
pub fn basis_change_in_place<N: Number>(
    d: usize,
    interpolate: bool,
    shapes: &ShapeMatrices1D,
    form: KernelForm,
    data: &mut [N],
) -> Result<()> {
    let n = shapes.n_basis;
    if n != shapes.n_q {
        return invalid("in-place basis change requires k = l");
    }
    check_len("data", data.len(), n.pow(d as u32))?;
    let op = if interpolate { &shapes.values } else { &shapes.values_t };
    let kernel = Kernel::resolve(op, form)?;
    record_sweeps(Sweep::BasisChange, d as u64);
    for a in 0..d {
        sweep_in_place(kernel, n.pow(a as u32), n.pow((d - 1 - a) as u32), data);
    }
    Ok(())
}

/// Unit-cell gradient in collocation space.
///
/// With `interpolate` the `n^d` input gives `d` consecutive gradient
/// components; otherwise `d` consecutive fields are differentiated with the
/// transposed matrix and summed into one.
#[allow(clippy::too_many_arguments)]
pub fn collocation_derivative<N: Number>(
    d: usize,
    interpolate: bool,
    add: bool,
    shapes: &ShapeMatrices1D,
    form: KernelForm,
    input: &[N],
    output: &mut [N],
) -> Result<()> {
    let n = shapes.n_q;
    let size = n.pow(d as u32);
    if interpolate {
        check_len("input", input.len(), size)?;
        check_len("output", output.len(), d * size)?;
        let kernel = Kernel::resolve(&shapes.colloc, form)?;
        gradient_sweeps(d, kernel, input, output, add, Sweep::Derivative);
    } else {
        check_len("input", input.len(), d * size)?;
        check_len("output", output.len(), size)?;
        let kernel = Kernel::resolve(&shapes.colloc_t, form)?;
        divergence_sweeps(d, kernel, input, output, add, Sweep::Derivative);
    }
    Ok(())
}

pub(crate) fn gradient_sweeps<N: Number>(
    d: usize,
    kernel: Kernel,
    input: &[N],
    output: &mut [N],
    add: bool,
    kind: Sweep,
) {
    let n = kernel.cols();
    let size = n.pow(d as u32);
    record_sweeps(kind, d as u64);
    for a in 0..d {
        let out = &mut output[a * size..(a + 1) * size];
        sweep(kernel, n.pow(a as u32), n.pow((d - 1 - a) as u32), input, out, add);
    }
}

pub(crate) fn divergence_sweeps<N: Number>(
    d: usize,
    kernel: Kernel,
    input: &[N],
    output: &mut [N],
    add: bool,
    kind: Sweep,
) {
    let n = kernel.cols();
    let size = n.pow(d as u32);
    record_sweeps(kind, d as u64);
    for a in 0..d {
        let inp = &input[a * size..(a + 1) * size];
        sweep(kernel, n.pow(a as u32), n.pow((d - 1 - a) as u32), inp, output, add || a > 0);
    }
}

/// Index helper for the face-normal kernels: the `k^d` tensor is split as
/// `(pre, k, post)` around the normal axis.
#[inline(always)]
fn normal_split(d: usize, direction: usize, k: usize) -> (usize, usize) {
    (k.pow(direction as u32), k.pow((d - 1 - direction) as u32))
}

/// Interpolates values (and normal derivatives when `highest_derivative = 1`)
/// of the `k^d` coefficients onto the face `side` of axis `direction`.
///
/// `output` receives `k^{d-1}` values followed by `k^{d-1}` derivatives. Only
/// the coefficient layers with nonzero face entries are read.
#[allow(clippy::too_many_arguments)]
pub fn face_normal_interpolate<N: Number>(
    d: usize,
    direction: usize,
    side: usize,
    highest_derivative: usize,
    shapes: &ShapeMatrices1D,
    input: &[N],
    output: &mut [N],
) -> Result<()> {
    let k = shapes.n_basis;
    if direction >= d {
        return invalid(format!("face-normal direction {direction} out of range for d={d}"));
    }
    let nf = k.pow(d as u32 - 1);
    check_len("input", input.len(), k.pow(d as u32))?;
    check_len("output", output.len(), (highest_derivative + 1) * nf)?;
    let layers = shapes.face_layers(side, highest_derivative > 0);
    face_interpolate_layers(d, direction, side, highest_derivative, shapes, &layers, input, output);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn face_interpolate_layers<N: Number>(
    d: usize,
    direction: usize,
    side: usize,
    highest_derivative: usize,
    shapes: &ShapeMatrices1D,
    layers: &[usize],
    input: &[N],
    output: &mut [N],
) {
    let k = shapes.n_basis;
    let (pre, post) = normal_split(d, direction, k);
    let nf = pre * post;
    let rows: [&[f64]; 2] = [&shapes.face_values[side], &shapes.face_gradients[side]];
    record_sweeps(Sweep::FaceNormal, highest_derivative as u64 + 1);
    for (q, row) in rows.iter().enumerate().take(highest_derivative + 1) {
        let out = &mut output[q * nf..(q + 1) * nf];
        let used: Vec<usize> = layers.iter().copied().filter(|&j| row[j] != 0.0).collect();
        if used.is_empty() {
            out.iter_mut().for_each(|v| *v = N::zero());
            continue;
        }
        let copy = used.len() == 1 && row[used[0]] == 1.0;
        for p in 0..post {
            for i in 0..pre {
                let base = i + pre * k * p;
                let f = i + pre * p;
                out[f] = if copy {
                    input[base + pre * used[0]]
                } else {
                    let mut acc = input[base + pre * used[0]].scale(row[used[0]]);
                    for &j in &used[1..] {
                        acc = input[base + pre * j].fma_scalar(row[j], acc);
                    }
                    acc
                };
            }
        }
    }
}

/// Transpose of [`face_normal_interpolate`]: tests face values (and normal
/// derivatives) against the `k^d` basis. Without `add` the output is
/// overwritten (entries off the face layers become zero).
#[allow(clippy::too_many_arguments)]
pub fn face_normal_integrate<N: Number>(
    d: usize,
    direction: usize,
    side: usize,
    highest_derivative: usize,
    add: bool,
    shapes: &ShapeMatrices1D,
    input: &[N],
    output: &mut [N],
) -> Result<()> {
    let k = shapes.n_basis;
    if direction >= d {
        return invalid(format!("face-normal direction {direction} out of range for d={d}"));
    }
    let nf = k.pow(d as u32 - 1);
    check_len("input", input.len(), (highest_derivative + 1) * nf)?;
    check_len("output", output.len(), k.pow(d as u32))?;
    if !add {
        output.iter_mut().for_each(|v| *v = N::zero());
    }
    let layers = shapes.face_layers(side, highest_derivative > 0);
    face_integrate_layers(d, direction, side, highest_derivative, shapes, &layers, input, output, true);
    Ok(())
}

/// Writes (or adds) only the entries on `layers`.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn face_integrate_layers<N: Number>(
    d: usize,
    direction: usize,
    side: usize,
    highest_derivative: usize,
    shapes: &ShapeMatrices1D,
    layers: &[usize],
    input: &[N],
    output: &mut [N],
    add: bool,
) {
    let k = shapes.n_basis;
    let (pre, post) = normal_split(d, direction, k);
    let nf = pre * post;
    let sv = &shapes.face_values[side];
    let sd = &shapes.face_gradients[side];
    record_sweeps(Sweep::FaceNormal, highest_derivative as u64 + 1);
    for &j in layers {
        let (cv, cd) = (sv[j], if highest_derivative > 0 { sd[j] } else { 0.0 });
        for p in 0..post {
            for i in 0..pre {
                let f = i + pre * p;
                let idx = i + pre * (j + k * p);
                let contrib = match (cv != 0.0, cd != 0.0) {
                    (true, true) => input[nf + f].fma_scalar(cd, input[f].scale(cv)),
                    (true, false) if cv == 1.0 => input[f],
                    (true, false) => input[f].scale(cv),
                    (false, true) => input[nf + f].scale(cd),
                    (false, false) => N::zero(),
                };
                if add {
                    output[idx] += contrib;
                } else {
                    output[idx] = contrib;
                }
            }
        }
    }
}

/// Face-normal interpolation with the direction of application selected by
/// `interpolate`; a thin wrapper over [`face_normal_interpolate`] and
/// [`face_normal_integrate`].
#[allow(clippy::too_many_arguments)]
pub fn face_normal_interpolation<N: Number>(
    d: usize,
    direction: usize,
    side: usize,
    interpolate: bool,
    highest_derivative: usize,
    shapes: &ShapeMatrices1D,
    input: &[N],
    output: &mut [N],
) -> Result<()> {
    if interpolate {
        face_normal_interpolate(d, direction, side, highest_derivative, shapes, input, output)
    } else {
        face_normal_integrate(d, direction, side, highest_derivative, false, shapes, input, output)
    }
}

/// Applies `op` (or its transpose) along axis `along` of a tensor with the
/// given input extents.
#[allow(clippy::too_many_arguments)]
pub fn apply_1d<N: Number>(
    form: KernelForm,
    op: &Op1D,
    transpose: bool,
    along: usize,
    extents: &[usize],
    input: &[N],
    output: &mut [N],
    add: bool,
) -> Result<()> {
    if along >= extents.len() {
        return invalid("axis out of range");
    }
    let transposed;
    let op = if transpose {
        let sign = op.even_odd.as_ref().map(|e| e.sign).unwrap_or(1.0);
        transposed = Op1D::new(op.plain.transpose(), sign);
        if form == KernelForm::EvenOdd && transposed.even_odd.is_none() && op.even_odd.is_some() {
            return Err(DgError::Unsupported("transpose lost symmetry".into()));
        }
        &transposed
    } else {
        op
    };
    let kernel = Kernel::resolve(op, form)?;
    if extents[along] != kernel.cols() {
        return invalid("extent along the axis does not match the matrix");
    }
    if kernel.cols() > MAX_1D || kernel.rows() > MAX_1D {
        return invalid(format!("1D extent above {MAX_1D}"));
    }
    let pre: usize = extents[..along].iter().product();
    let post: usize = extents[along + 1..].iter().product();
    check_len("input", input.len(), pre * kernel.cols() * post)?;
    check_len("output", output.len(), pre * kernel.rows() * post)?;
    sweep(kernel, pre, post, input, output, add);
    Ok(())
}

/// Scratch entries needed by [`tiled_cell_laplacian`] and [`untiled_cell_laplacian`].
pub fn laplacian_scratch_len(k: usize) -> usize {
    6 * k * k * k + k * k
}

/// Cell Laplacian-type evaluation for `d = 3`, tiled over planes of the last direction.
///
/// `qop(q, grad)` maps the reference gradient at quadrature point `q` to the
/// flux that is tested against reference gradients. Requires `k = l`.
pub fn tiled_cell_laplacian<N: Number>(
    shapes: &ShapeMatrices1D,
    form: KernelForm,
    input: &[N],
    output: &mut [N],
    scratch: &mut [N],
    mut qop: impl FnMut(usize, [N; 3]) -> [N; 3],
) -> Result<()> {
    let k = shapes.n_basis;
    if k != shapes.n_q {
        return invalid("tiled Laplacian requires as many quadrature points as basis functions");
    }
    let (k2, k3) = (k * k, k * k * k);
    check_len("input", input.len(), k3)?;
    check_len("output", output.len(), k3)?;
    check_len("scratch", scratch.len(), laplacian_scratch_len(k))?;
    let s = Kernel::resolve(&shapes.values, form)?;
    let st = Kernel::resolve(&shapes.values_t, form)?;
    let dco = Kernel::resolve(&shapes.colloc, form)?;
    let dcot = Kernel::resolve(&shapes.colloc_t, form)?;
    record_sweeps(Sweep::BasisChange, 6);
    record_sweeps(Sweep::Derivative, 6);

    let (val, rest) = scratch.split_at_mut(k3);
    let (gz, rest) = rest.split_at_mut(k3);
    let (acc, rest) = rest.split_at_mut(k3);
    let (tmp, rest) = rest.split_at_mut(k2);
    let gy = &mut rest[..k2];
    let mut x = [N::zero(); MAX_1D];
    let mut y = [N::zero(); MAX_1D];
    let mut gx = [N::zero(); MAX_1D];

    // Per z-layer: S_1 along x, then S_2 along y.
    for iz in 0..k {
        let layer = iz * k2..(iz + 1) * k2;
        sweep(s, 1, k, &input[layer.clone()], tmp, false);
        sweep(s, k, 1, tmp, &mut val[layer], false);
    }
    // Per (x, y) column: S_3 along z in place, then D_3 along z.
    for i in 0..k2 {
        load(val, i, k2, &mut x[..k]);
        s.stripe(&x[..k], &mut y[..k]);
        store(val, i, k2, &y[..k], false);
        dco.stripe(&y[..k], &mut x[..k]);
        store(gz, i, k2, &x[..k], false);
    }
    // Per z-layer: D_2 along y, fused x-lines, then D_2^T along y.
    for iz in 0..k {
        let off = iz * k2;
        sweep(dco, k, 1, &val[off..off + k2], gy, false);
        for iy in 0..k {
            let line = off + iy * k;
            dco.stripe(&val[line..line + k], &mut gx[..k]);
            for ix in 0..k {
                let q = line + ix;
                let t = qop(q, [gx[ix], gy[iy * k + ix], gz[q]]);
                gx[ix] = t[0];
                gy[iy * k + ix] = t[1];
                gz[q] = t[2];
            }
            dcot.stripe(&gx[..k], &mut acc[line..line + k]);
        }
        sweep(dcot, k, 1, gy, &mut acc[off..off + k2], true);
    }
    // Per (x, y) column: D_3^T along z summed in, then S_3^T in place.
    for i in 0..k2 {
        load(gz, i, k2, &mut x[..k]);
        dcot.stripe(&x[..k], &mut y[..k]);
        load(acc, i, k2, &mut x[..k]);
        for j in 0..k {
            x[j] += y[j];
        }
        st.stripe(&x[..k], &mut y[..k]);
        store(acc, i, k2, &y[..k], false);
    }
    // Per z-layer: S_2^T along y, then S_1^T along x.
    for iz in 0..k {
        let layer = iz * k2..(iz + 1) * k2;
        sweep(st, k, 1, &acc[layer.clone()], tmp, false);
        sweep(st, 1, k, tmp, &mut output[layer], false);
    }
    Ok(())
}

/// Reference for [`tiled_cell_laplacian`]: full-cell sweeps in the order
/// basis change, collocation derivative, quadrature operation, transposes.
pub fn untiled_cell_laplacian<N: Number>(
    shapes: &ShapeMatrices1D,
    form: KernelForm,
    input: &[N],
    output: &mut [N],
    scratch: &mut [N],
    mut qop: impl FnMut(usize, [N; 3]) -> [N; 3],
) -> Result<()> {
    let k = shapes.n_basis;
    let l = shapes.n_q;
    let n = l * l * l;
    check_len("scratch", scratch.len(), laplacian_scratch_len(l))?;
    let (vals, rest) = scratch.split_at_mut(n);
    let (grads, rest) = rest.split_at_mut(3 * n);
    basis_change(3, true, false, shapes, form, &input[..k * k * k], vals, rest)?;
    collocation_derivative(3, true, false, shapes, form, vals, grads)?;
    for q in 0..n {
        let t = qop(q, [grads[q], grads[n + q], grads[2 * n + q]]);
        grads[q] = t[0];
        grads[n + q] = t[1];
        grads[2 * n + q] = t[2];
    }
    collocation_derivative(3, false, false, shapes, form, grads, vals)?;
    basis_change(3, false, false, shapes, form, vals, output, rest)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{gauss_quadrature, make_basis, shape_matrices, BasisKind};
    use crate::counters;
    use crate::lanes::{Lanes, Tally};

    type L4 = Lanes<4>;

    fn shapes(kind: BasisKind, p: usize, l: usize) -> ShapeMatrices1D {
        shape_matrices(&make_basis(kind, p).unwrap(), &gauss_quadrature(l).unwrap()).unwrap()
    }

    fn pseudo_random(n: usize, seed: u64) -> Vec<L4> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..n)
            .map(|_| {
                L4::from_fn(|_| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
                })
            })
            .collect()
    }

    #[test]
    fn collocation_basis_change_is_identity() {
        let sh = shapes(BasisKind::LagrangeGauss, 3, 4);
        let input = pseudo_random(64, 1);
        let mut out = vec![L4::zero(); 64];
        let mut scratch = vec![L4::zero(); scratch_len(3, 4)];
        basis_change(3, true, false, &sh, KernelForm::EvenOdd, &input, &mut out, &mut scratch).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn partition_of_unity_2d() {
        let sh = shapes(BasisKind::LagrangeGaussLobatto, 4, 6);
        let input = vec![L4::splat(1.0); 25];
        let mut out = vec![L4::zero(); 36];
        let mut scratch = vec![L4::zero(); scratch_len(2, 6)];
        basis_change(2, true, false, &sh, KernelForm::Plain, &input, &mut out, &mut scratch).unwrap();
        assert!(out.iter().all(|v| v.0.iter().all(|x| (x - 1.0).abs() < 1e-13)));
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let sh = shapes(BasisKind::LagrangeGaussLobatto, 2, 3);
        let input = vec![L4::zero(); 5];
        let mut out = vec![L4::zero(); 27];
        let mut scratch = vec![L4::zero(); 54];
        assert!(basis_change(3, true, false, &sh, KernelForm::Plain, &input, &mut out, &mut scratch).is_err());
    }

    #[test]
    fn linear_field_derivative() {
        let sh = shapes(BasisKind::LagrangeGauss, 3, 4);
        let q = &sh.quadrature.points;
        let input: Vec<L4> = (0..16).map(|i| L4::splat(q[i / 4])).collect();
        let mut out = vec![L4::zero(); 32];
        collocation_derivative(2, true, false, &sh, KernelForm::EvenOdd, &input, &mut out).unwrap();
        for i in 0..16 {
            assert!(out[i].0[0].abs() < 1e-13);
            assert!((out[16 + i].0[0] - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn even_odd_k4_counts() {
        let sh = shapes(BasisKind::LagrangeGaussLobatto, 3, 4);
        let x = vec![Tally::<1>::splat(0.5); 4];
        let mut y = vec![Tally::<1>::zero(); 4];
        let eo = Kernel::resolve(&sh.values, KernelForm::EvenOdd).unwrap();
        let (_, c) = counters::measure(|| eo.stripe(&x, &mut y));
        assert_eq!((c.adds, c.mults, c.fmas), (8, 4, 4));
    }

    #[test]
    fn face_layers_are_sparse() {
        let sh = shapes(BasisKind::HermiteLike, 4, 5);
        let mut input = pseudo_random(125, 3);
        for v in input.iter_mut().take(2 * 25) {
            *v = L4::zero();
        }
        // Normal axis 2 has layers of 25 entries; the first two layers are zero.
        let mut out = vec![L4::splat(9.0); 50];
        face_normal_interpolate(3, 2, 0, 1, &sh, &input, &mut out).unwrap();
        assert!(out.iter().all(|v| v.0 == [0.0; 4]));
    }

    #[test]
    fn tiled_matches_untiled_small() {
        let sh = shapes(BasisKind::HermiteLike, 3, 4);
        let input = pseudo_random(64, 7);
        let mut a = vec![L4::zero(); 64];
        let mut b = vec![L4::zero(); 64];
        let mut scratch = vec![L4::zero(); laplacian_scratch_len(4)];
        let qop = |_q: usize, g: [L4; 3]| [g[0].scale(2.0), g[1] + g[0], g[2].scale(0.5)];
        tiled_cell_laplacian(&sh, KernelForm::EvenOdd, &input, &mut a, &mut scratch, qop).unwrap();
        untiled_cell_laplacian(&sh, KernelForm::EvenOdd, &input, &mut b, &mut scratch, qop).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for l in 0..4 {
                assert!((x.0[l] - y.0[l]).abs() < 1e-13 * (1.0 + y.0[l].abs()));
            }
        }
    }
}
