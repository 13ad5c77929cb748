use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensordg::geometry::GeometryVariant;
use tensordg::mesh::{all_dirichlet, all_periodic, Mapping, Mesh};
use tensordg::operators::{Equation, Operator, OperatorConfig};
use tensordg::oracle::assemble_operator;

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

fn random_input(n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn check(eq: Equation, d: usize, p: usize, n: usize, deformed: bool, periodic: bool) -> f64 {
    let mapping = if deformed {
        Mapping::PolynomialDeformation { degree: p.min(2), amplitude: 0.06 }
    } else {
        Mapping::Cartesian
    };
    let bc = if periodic { all_periodic() } else { all_dirichlet() };
    let mesh = Mesh::unit_box(d, n, mapping, bc).unwrap();
    let cfg = OperatorConfig::new(eq, d, p);
    let a = assemble_operator(&cfg, &mesh).unwrap();
    let u = random_input(a.n);
    let reference = a.apply(&u);
    let mut worst: f64 = 0.0;
    for variant in GeometryVariant::ALL {
        let op = Operator::new(&cfg.clone().with_geometry(variant), &mesh, 1).unwrap();
        worst = worst.max(rel_err(&op.apply(&u).unwrap(), &reference));
    }
    worst
}

#[test]
fn quick_equivalence() {
    for eq in [Equation::Mass, Equation::InverseMass, Equation::Advection, Equation::Laplacian] {
        for (d, p, n) in [(1, 2, 4), (2, 1, 3), (2, 3, 3), (3, 2, 2), (3, 3, 2)] {
            for deformed in [false, true] {
                for periodic in [false, true] {
                    let e = check(eq, d, p, n, deformed, periodic);
                    assert!(e <= 1e-11, "{eq:?} d={d} p={p} deformed={deformed} periodic={periodic}: {e:e}");
                }
            }
        }
    }
}

#[test]
fn batches_mixing_affine_and_curved_cells() {
    // A degree-one deformation leaves some cells affine and bends others.
    let mesh =
        Mesh::unit_box(3, 3, Mapping::PolynomialDeformation { degree: 1, amplitude: 0.06 }, all_dirichlet()).unwrap();
    for eq in [Equation::Mass, Equation::Advection, Equation::Laplacian] {
        let cfg = OperatorConfig::new(eq, 3, 1);
        let a = assemble_operator(&cfg, &mesh).unwrap();
        let u = random_input(a.n);
        let reference = a.apply(&u);
        for lanes in [1, 2, 4, 8] {
            let op = Operator::new(&cfg.clone().with_lanes(lanes), &mesh, 2).unwrap();
            let e = rel_err(&op.apply(&u).unwrap(), &reference);
            assert!(e <= 1e-11, "{eq:?} W={lanes}: {e:e}");
        }
    }
}
