//! Manufactured-solution convergence studies for the Laplacian and the
//! advection operator.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::basis::{gauss_quadrature, make_basis};
use crate::error::{invalid, Result};
use crate::geometry::{point_geometry, tensor_points, ScalarFn, VectorField};
use crate::mesh::{all_dirichlet, Mapping, Mesh};
use crate::operators::{Equation, Operator, OperatorConfig};
use crate::solvers::{cg, gmres, SolverControl};

const SHIFT: [f64; 3] = [0.1, 0.2, 0.3];
/// Transport velocity of the advection problem.
pub const TRANSPORT: [f64; 3] = [1.0, 0.6, 0.3];

fn factor(a: usize, x: f64) -> (f64, f64) {
    let s = PI * (x + SHIFT[a]);
    if a == 1 {
        (s.cos(), -PI * s.sin())
    } else {
        (s.sin(), PI * s.cos())
    }
}

/// `sin(π(x+0.1)) cos(π(y+0.2)) sin(π(z+0.3))`, truncated to `d` factors.
pub fn exact_solution(d: usize, x: [f64; 3]) -> f64 {
    (0..d).map(|a| factor(a, x[a]).0).product()
}

pub fn exact_gradient(d: usize, x: [f64; 3]) -> [f64; 3] {
    let mut g = [0.0; 3];
    for (b, gb) in g.iter_mut().enumerate().take(d) {
        *gb = (0..d).map(|a| if a == b { factor(a, x[a]).1 } else { factor(a, x[a]).0 }).product();
    }
    g
}

/// Forcing for `-Δu = f` or `c·∇u = f` with the exact solution above.
pub fn forcing(equation: Equation, d: usize) -> ScalarFn {
    match equation {
        Equation::Advection => Arc::new(move |x| {
            let g = exact_gradient(d, x);
            (0..d).map(|a| TRANSPORT[a] * g[a]).sum()
        }),
        _ => Arc::new(move |x| d as f64 * PI * PI * exact_solution(d, x)),
    }
}

/// L2 error of a natural-numbering vector against `exact`, integrated with
/// two extra Gauss points per direction.
pub fn l2_error(config: &OperatorConfig, mesh: &Mesh, u: &[f64], exact: &dyn Fn([f64; 3]) -> f64) -> Result<f64> {
    let d = config.dim;
    let k = config.degree + 1;
    let nb = config.dofs_per_cell();
    if u.len() != mesh.n_cells() * nb {
        return invalid("vector length does not match the mesh");
    }
    let basis = make_basis(config.basis, config.degree)?;
    let quad = gauss_quadrature(k + 2)?;
    let (points, weights) = tensor_points(d, &quad);
    let tables: Vec<Vec<f64>> = points
        .iter()
        .map(|xi| {
            (0..nb)
                .map(|i| {
                    let (mut r, mut v) = (i, 1.0);
                    for &x in xi.iter().take(d) {
                        v *= basis.value(r % k, x);
                        r /= k;
                    }
                    v
                })
                .collect()
        })
        .collect();
    let mut sum = 0.0;
    for cell in 0..mesh.n_cells() {
        let map = mesh.cell_mapping(cell);
        let coef = &u[cell * nb..(cell + 1) * nb];
        for ((xi, w), phi) in points.iter().zip(&weights).zip(&tables) {
            let pg = point_geometry(&map, *xi)?;
            let uh: f64 = coef.iter().zip(phi).map(|(c, p)| c * p).sum();
            let e = uh - exact(pg.x);
            sum += e * e * pg.det * w;
        }
    }
    Ok(sum.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub cells_per_dim: usize,
    pub n_dofs: usize,
    pub iterations: usize,
    pub l2_error: f64,
    /// Observed rate against the previous row.
    pub rate: Option<f64>,
}

/// Solves the manufactured problem on `2^level` cells per direction for each
/// level and reports errors and observed rates.
pub fn run_convergence(
    equation: Equation,
    d: usize,
    degree: usize,
    levels: std::ops::RangeInclusive<u32>,
    mapping: Mapping,
    lanes: usize,
) -> Result<Vec<ConvergenceRow>> {
    if !matches!(equation, Equation::Laplacian | Equation::Advection) {
        return invalid("convergence studies exist for the Laplacian and advection only");
    }
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for level in levels {
        let n = 1usize << level;
        let mesh = Mesh::unit_box(d, n, mapping, all_dirichlet())?;
        let cfg =
            OperatorConfig::new(equation, d, degree).with_lanes(lanes).with_transport(VectorField::Constant(TRANSPORT));
        let op = Operator::new(&cfg, &mesh, 1)?;
        let mut inv_cfg = cfg.clone();
        inv_cfg.equation = Equation::InverseMass;
        inv_cfg.basis = cfg.basis;
        let inv = Operator::new(&inv_cfg, &mesh, 1)?;
        let g: ScalarFn = Arc::new(move |x| exact_solution(d, x));
        let b = op.rhs(&forcing(equation, d), &g)?;
        let mut x = vec![0.0; op.n_dofs()];
        let control = SolverControl { rel_tol: 1e-10, max_iter: 20_000 };
        let stats = match equation {
            Equation::Laplacian => cg(|v| op.apply(v), |r| inv.apply(r), &b, &mut x, control)?,
            _ => gmres(|v| op.apply(v), |r| inv.apply(r), &b, &mut x, 30, control)?,
        };
        let err = l2_error(&cfg, &mesh, &x, &|p| exact_solution(d, p))?;
        let rate = rows.last().map(|prev| (prev.l2_error / err).log2() / (n as f64 / prev.cells_per_dim as f64).log2());
        rows.push(ConvergenceRow {
            cells_per_dim: n,
            n_dofs: op.n_dofs(),
            iterations: stats.iterations,
            l2_error: err,
            rate,
        });
    }
    Ok(rows)
}
