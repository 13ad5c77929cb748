use proptest::prelude::*;

use tensordg::basis::{gauss_quadrature, make_basis, shape_matrices, BasisKind, Matrix1D, Op1D};
use tensordg::dof::{build_dof_layout, gather_cell, scatter_cell, DofLayout, GhostedVector};
use tensordg::lanes::{Lanes, Number};
use tensordg::mesh::{
    all_dirichlet, all_periodic, assign_face_owners, partition_from_owners, Mapping, Mesh, Partition,
};
use tensordg::operators::{Equation, Operator, OperatorConfig};
use tensordg::oracle::dense_kronecker_apply;
use tensordg::tensor::{basis_change, scratch_len, Kernel, KernelForm};

fn rel_linf(a: &[f64], reference: &[f64]) -> f64 {
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(reference).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn lanes1(v: &[f64]) -> Vec<Lanes<1>> {
    v.iter().map(|&x| Lanes::splat(x)).collect()
}

fn copy_by_batches<N: Number>(layout: &DofLayout, v: &GhostedVector) -> GhostedVector {
    let n = layout.dofs_per_cell;
    let mut w = layout.new_vector();
    let mut buf = vec![N::zero(); n];
    for batch in &layout.cell_batches {
        let access = layout.classify(&batch.cells).unwrap();
        gather_cell(v, &access, n, &mut buf).unwrap();
        scatter_cell(&mut w, &access, n, &buf, false);
    }
    w
}

fn values(k: usize, len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, len * k)
}

fn input(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn even_odd_matches_plain(
        (k, m, x) in (2usize..=16).prop_flat_map(|k| (Just(k), values(k, k), values(k, 1))),
        antisymmetric in any::<bool>(),
    ) {
        let sign = if antisymmetric { -1.0 } else { 1.0 };
        let mat = Matrix1D::from_fn(k, k, |i, j| m[i * k + j] + sign * m[(k - 1 - i) * k + (k - 1 - j)]);
        let op = Op1D::new(mat, sign);
        let x = lanes1(&x);
        let (mut a, mut b) = (vec![Lanes::<1>::zero(); k], vec![Lanes::<1>::zero(); k]);
        Kernel::resolve(&op, KernelForm::Plain).unwrap().stripe(&x, &mut a);
        Kernel::resolve(&op, KernelForm::EvenOdd).unwrap().stripe(&x, &mut b);
        let a: Vec<f64> = a.iter().map(|v| v.0[0]).collect();
        let b: Vec<f64> = b.iter().map(|v| v.0[0]).collect();
        prop_assert!(rel_linf(&b, &a) <= 1e-13);
    }

    #[test]
    fn basis_change_matches_kronecker_product(d in 1usize..=3, k in 2usize..=7, raw in input(343)) {
        let basis = make_basis(BasisKind::LagrangeGauss, k - 1).unwrap();
        let sh = shape_matrices(&basis, &gauss_quadrature(k).unwrap()).unwrap();
        let n = k.pow(d as u32);
        let u = &raw[..n];
        let mut out = vec![Lanes::<1>::zero(); n];
        let mut scratch = vec![Lanes::<1>::zero(); scratch_len(d, k)];
        basis_change(d, true, false, &sh, KernelForm::Plain, &lanes1(u), &mut out, &mut scratch).unwrap();
        let dense = dense_kronecker_apply(&vec![&sh.values.plain; d], u).unwrap();
        let out: Vec<f64> = out.iter().map(|v| v.0[0]).collect();
        prop_assert!(rel_linf(&out, &dense) <= 1e-13);
    }

    #[test]
    fn gather_then_scatter_round_trips(
        n in 2usize..=5,
        ranks in 1usize..=4,
        lanes in prop::sample::select(vec![1usize, 2, 4, 8]),
        seed in any::<u64>(),
    ) {
        let mesh = Mesh::unit_box(2, n, Mapping::Cartesian, all_dirichlet()).unwrap();
        let partition = Partition::slabs(&mesh, ranks.min(mesh.n_cells())).unwrap();
        let k = 3;
        let natural: Vec<f64> = (0..mesh.n_cells() * k * k).map(|i| ((i as u64 ^ seed) % 1000) as f64).collect();
        let mut back = vec![f64::NAN; natural.len()];
        for r in 0..partition.n_ranks {
            let layout = build_dof_layout(&mesh, &partition, r, k, lanes).unwrap();
            let mut v = layout.new_vector();
            layout.import_natural(&natural, &mut v);
            let w = match lanes {
                1 => copy_by_batches::<Lanes<1>>(&layout, &v),
                2 => copy_by_batches::<Lanes<2>>(&layout, &v),
                4 => copy_by_batches::<Lanes<4>>(&layout, &v),
                _ => copy_by_batches::<Lanes<8>>(&layout, &v),
            };
            layout.export_natural(&w, &mut back);
        }
        prop_assert_eq!(back, natural);
    }

    #[test]
    fn result_does_not_depend_on_cell_ownership(
        owners in prop::collection::vec(0usize..5, 16),
        equation in prop::sample::select(vec![Equation::Advection, Equation::Laplacian]),
        u in input(16 * 9),
    ) {
        let mesh = Mesh::unit_box(2, 4, Mapping::PolynomialDeformation { degree: 2, amplitude: 0.05 }, all_periodic()).unwrap();
        let cfg = OperatorConfig::new(equation, 2, 2);
        let reference = Operator::new(&cfg, &mesh, 1).unwrap().apply(&u).unwrap();
        let partition = assign_face_owners(&mesh, &partition_from_owners(&mesh, owners, 5).unwrap());
        let y = Operator::with_partition(&cfg, &mesh, partition).unwrap().apply(&u).unwrap();
        prop_assert!(rel_linf(&y, &reference) <= 1e-12);
    }

    #[test]
    fn laplacian_is_symmetric(u in input(27 * 8), v in input(27 * 8)) {
        let mesh = Mesh::unit_box(3, 3, Mapping::PolynomialDeformation { degree: 1, amplitude: 0.05 }, all_dirichlet()).unwrap();
        let op = Operator::new(&OperatorConfig::new(Equation::Laplacian, 3, 1), &mesh, 2).unwrap();
        let (au, av) = (op.apply(&u).unwrap(), op.apply(&v).unwrap());
        let (a, b) = (dot(&v, &au), dot(&u, &av));
        prop_assert!((a - b).abs() <= 1e-11 * a.abs().max(b.abs()).max(1.0));
    }

    #[test]
    fn inverse_mass_undoes_mass(u in input(16 * 16), deformed in any::<bool>()) {
        let mapping = if deformed { Mapping::PolynomialDeformation { degree: 2, amplitude: 0.05 } } else { Mapping::Cartesian };
        let mesh = Mesh::unit_box(2, 4, mapping, all_dirichlet()).unwrap();
        let mass = Operator::new(&OperatorConfig::new(Equation::Mass, 2, 3), &mesh, 1).unwrap();
        let inv = Operator::new(&OperatorConfig::new(Equation::InverseMass, 2, 3), &mesh, 1).unwrap();
        let back = inv.apply(&mass.apply(&u).unwrap()).unwrap();
        prop_assert!(rel_linf(&back, &u) <= 1e-12);
    }
}
