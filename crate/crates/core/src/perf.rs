//! Throughput measurement, operation and traffic models, CSV records and
//! roofline classification.

use std::path::Path;
use std::sync::Barrier;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::basis::{gauss_quadrature, make_basis, shape_matrices};
use crate::counters::KernelCounters;
use crate::dof::GhostedVector;
use crate::error::{DgError, Result};
use crate::exchange::create_world;
use crate::mesh::enumerate_faces;
use crate::operators::{Equation, Operator, OperatorConfig};
use crate::tensor::{Kernel, KernelForm};

pub const CSV_HEADER: &str =
    "operator,dim,degree,cells,geometry,lanes,ranks,n_dofs,time_s,dofs_per_s,flops,bytes,intensity";

/// One benchmark result; field order is the CSV column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub operator: String,
    pub dim: usize,
    pub degree: usize,
    pub cells: usize,
    pub geometry: String,
    pub lanes: usize,
    pub ranks: usize,
    pub n_dofs: usize,
    /// Seconds per operator application.
    pub time_s: f64,
    pub dofs_per_s: f64,
    /// Counted floating point operations per application, FMA as two.
    pub flops: u64,
    /// Modeled bytes moved per application.
    pub bytes: u64,
    pub intensity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimingPlan {
    pub warmup: Duration,
    pub repetitions: usize,
    /// Shortest duration of one timed repetition; short applications are
    /// repeated inside a repetition to reach it.
    pub min_repetition: Duration,
}

impl Default for TimingPlan {
    fn default() -> Self {
        TimingPlan { warmup: Duration::from_millis(500), repetitions: 5, min_repetition: Duration::from_millis(20) }
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Times `f`: warm-up, then the median over repetitions of the time per call.
pub fn time_calls(plan: TimingPlan, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let start = Instant::now();
    let mut calls = 0usize;
    while calls == 0 || start.elapsed() < plan.warmup {
        f()?;
        calls += 1;
    }
    let per_call = start.elapsed().as_secs_f64() / calls as f64;
    let inner = ((plan.min_repetition.as_secs_f64() / per_call).ceil() as usize).max(1);
    let mut samples = Vec::with_capacity(plan.repetitions);
    for _ in 0..plan.repetitions.max(5) {
        let t = Instant::now();
        for _ in 0..inner {
            f()?;
        }
        samples.push(t.elapsed().as_secs_f64() / inner as f64);
    }
    Ok(median(&mut samples))
}

/// Seconds per application of `op`, with every rank on its own thread.
pub fn time_operator(op: &Operator, plan: TimingPlan) -> Result<f64> {
    let inputs: Vec<GhostedVector> = op
        .ranks
        .iter()
        .map(|r| {
            let mut v = r.new_vector();
            for (i, x) in v.owned_mut().iter_mut().enumerate() {
                *x = ((i * 7919) % 1000) as f64 * 1e-3 - 0.5;
            }
            v
        })
        .collect();
    if op.ranks.len() == 1 {
        let r = &op.ranks[0];
        let mut u = inputs.into_iter().next().expect("one rank");
        let mut y = r.new_vector();
        return time_calls(plan, || r.apply(&mut u, &mut y, None));
    }
    // Every rank runs the same number of applications; rank 0 decides the
    // counts and broadcasts them through the barrier-protected cell.
    let world = create_world(op.ranks.len());
    let barrier = Barrier::new(op.ranks.len());
    let calls = std::sync::Mutex::new((0usize, 0usize));
    let results: Vec<Result<f64>> = std::thread::scope(|s| {
        let handles: Vec<_> = world
            .into_iter()
            .zip(&op.ranks)
            .zip(inputs)
            .map(|((ep, r), mut u)| {
                let (barrier, calls) = (&barrier, &calls);
                s.spawn(move || -> Result<f64> {
                    let mut y = r.new_vector();
                    let mut run = |n: usize| -> Result<f64> {
                        let t = Instant::now();
                        for _ in 0..n {
                            r.apply(&mut u, &mut y, Some(&ep))?;
                        }
                        Ok(t.elapsed().as_secs_f64())
                    };
                    let probe = run(1)?;
                    if r.rank == 0 {
                        let warm = ((plan.warmup.as_secs_f64() / probe).ceil() as usize).max(1);
                        let inner = ((plan.min_repetition.as_secs_f64() / probe).ceil() as usize).max(1);
                        *calls.lock().expect("lock") = (warm, inner);
                    }
                    barrier.wait();
                    let (warm, inner) = *calls.lock().expect("lock");
                    run(warm)?;
                    let mut samples = Vec::new();
                    for _ in 0..plan.repetitions.max(5) {
                        barrier.wait();
                        samples.push(run(inner)? / inner as f64);
                    }
                    Ok(median(&mut samples))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("rank thread panicked")).collect()
    });
    let mut worst: f64 = 0.0;
    for r in results {
        worst = worst.max(r?);
    }
    Ok(worst)
}

/// Useful arithmetic of one application, summed over ranks: the operator
/// is rebuilt with one lane so padded lanes of partial batches do not count.
pub fn count_operator(op: &Operator) -> Result<KernelCounters> {
    let scalar = Operator::with_partition(&op.config.clone().with_lanes(1), &op.mesh, op.partition.clone())?;
    let u = vec![0.5; scalar.n_dofs()];
    let (_, per_rank) = scalar.apply_counting(&u)?;
    let mut total = KernelCounters::default();
    for c in per_rank {
        total = total.plus(&c);
    }
    Ok(total)
}

/// Vector traffic (two reads, one write) plus stored cell geometry, in bytes.
pub fn model_bytes(op: &Operator) -> u64 {
    let vectors = 3 * op.n_dofs() * 8;
    let geometry: f64 = op
        .ranks
        .iter()
        .map(|r| {
            let (g, c) = r.cell_geometry.stored_doubles_per_cell();
            (g + c) * r.layout.owned_cells.len() as f64 * 8.0
        })
        .sum();
    vectors as u64 + geometry.round() as u64
}

/// Flops of one stripe of a `rows × cols` kernel as implemented.
pub fn stripe_flops(form: KernelForm, rows: usize, cols: usize) -> u64 {
    let (r, c) = (rows as u64, cols as u64);
    match form {
        KernelForm::Plain => r * (2 * c - 1),
        KernelForm::EvenOdd => {
            let (hi, mi) = (c / 2, c % 2);
            let (ho, mo) = (r / 2, r % 2);
            let ecols = hi + mi;
            let dot = |n: u64| if n == 0 { 0 } else { 2 * n - 1 };
            let pre = 2 * hi;
            let pairs = ho * (dot(ecols) + dot(hi) + 2);
            let middle = mo * dot(ecols);
            pre + pairs + middle
        }
    }
}

/// Flop prediction per cell from the kernel schedule: per-call stripe costs
/// of the resolved kernels times the number of kernel calls, plus the
/// face-normal contractions. Pointwise quadrature work is not modeled.
pub fn model_flops(config: &OperatorConfig, op: &Operator) -> Result<u64> {
    let d = config.dim as u32;
    let k = config.degree + 1;
    let basis = make_basis(config.basis, config.degree)?;
    let shapes = shape_matrices(&basis, &gauss_quadrature(k)?)?;
    let form_of = |m: &crate::basis::Op1D| match Kernel::prefer(m, config.form) {
        Kernel::Plain(_) => KernelForm::Plain,
        Kernel::EvenOdd(_) => KernelForm::EvenOdd,
    };
    let s = stripe_flops(form_of(&shapes.values), k, k);
    let dco = stripe_flops(form_of(&shapes.colloc), k, k);
    let cell_stripes = k.pow(d - 1) as u64;
    let n_cells = op.mesh.n_cells() as u64;
    let faces = enumerate_faces(&op.mesh);
    let n_inner = faces.iter().filter(|f| f.exterior_cell.is_some()).count() as u64;
    let n_bdry = faces.len() as u64 - n_inner;
    let dd = d as u64;
    let face_stripes = if d >= 2 { k.pow(d - 2) as u64 } else { 0 };
    let face_points = k.pow(d - 1) as u64;
    let layers = |deriv: bool| {
        let l = shapes.face_layers(0, deriv).len() as u64;
        face_points * (2 * l - 1)
    };
    let per_side = match config.equation {
        Equation::Mass | Equation::InverseMass => return Ok(n_cells * 2 * dd * cell_stripes * s),
        Equation::Advection => 2 * (dd - 1) * face_stripes * s + 2 * layers(false),
        Equation::Laplacian => 4 * (dd - 1) * face_stripes * s + 2 * (dd - 1) * face_stripes * dco + 4 * layers(true),
    };
    let cell = match config.equation {
        Equation::Advection => 2 * dd * cell_stripes * s + dd * cell_stripes * dco,
        _ => 2 * dd * cell_stripes * s + 2 * dd * cell_stripes * dco,
    };
    Ok(n_cells * cell + (2 * n_inner + n_bdry) * per_side)
}

/// Times and counts one configuration.
pub fn run_bench(op: &Operator, plan: TimingPlan) -> Result<BenchRecord> {
    let time_s = time_operator(op, plan)?;
    let counts = count_operator(op)?;
    let bytes = model_bytes(op);
    let flops = counts.flops();
    Ok(BenchRecord {
        operator: op.config.equation.name().to_string(),
        dim: op.config.dim,
        degree: op.config.degree,
        cells: op.mesh.n_cells(),
        geometry: op.config.geometry.name().to_string(),
        lanes: op.config.lanes,
        ranks: op.ranks.len(),
        n_dofs: op.n_dofs(),
        time_s,
        dofs_per_s: op.n_dofs() as f64 / time_s,
        flops,
        bytes,
        intensity: flops as f64 / bytes as f64,
    })
}

/// Appends records, writing the header when the file is new or empty.
pub fn append_csv(path: &Path, records: &[BenchRecord]) -> Result<()> {
    let io = |e: std::io::Error| DgError::Io(format!("{}: {e}", path.display()));
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in records {
        w.serialize(r).map_err(|e| DgError::Io(e.to_string()))?;
    }
    w.flush().map_err(io)
}

pub fn read_csv(path: &Path) -> Result<Vec<BenchRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| DgError::Io(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| DgError::Io(e.to_string()))?.iter().collect::<Vec<_>>().join(",");
    if headers != CSV_HEADER {
        return Err(DgError::Io(format!("unexpected CSV header `{headers}`")));
    }
    rdr.deserialize().map(|r| r.map_err(|e| DgError::Io(e.to_string()))).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bound {
    Compute,
    Memory,
}

impl Bound {
    pub fn label(self) -> &'static str {
        match self {
            Bound::Compute => "compute-bound",
            Bound::Memory => "memory-bound",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RooflinePoint {
    pub intensity: f64,
    pub achieved_flops: f64,
    pub ceiling: f64,
    pub bound: Bound,
}

/// Places a record under the roofline with the given peak flop rate and
/// memory bandwidth (bytes per second).
pub fn roofline(record: &BenchRecord, peak: f64, bandwidth: f64) -> RooflinePoint {
    let knee = peak / bandwidth;
    RooflinePoint {
        intensity: record.intensity,
        achieved_flops: record.flops as f64 / record.time_s,
        ceiling: peak.min(record.intensity * bandwidth),
        bound: if record.intensity >= knee { Bound::Compute } else { Bound::Memory },
    }
}
