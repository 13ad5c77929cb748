use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use tensordg::geometry::GeometryVariant;
use tensordg::mesh::{all_dirichlet, Mapping, Mesh};
use tensordg::operators::{Equation, Operator, OperatorConfig};
use tensordg_bench::random_vector;

fn apply(c: &mut Criterion) {
    let cartesian = Mesh::unit_box(3, 4, Mapping::Cartesian, all_dirichlet()).unwrap();
    let curved =
        Mesh::unit_box(3, 4, Mapping::PolynomialDeformation { degree: 2, amplitude: 0.05 }, all_dirichlet()).unwrap();
    for equation in [Equation::Mass, Equation::Advection, Equation::Laplacian] {
        let mut group = c.benchmark_group(format!("apply/{}", equation.name()));
        group.sample_size(20);
        for p in [2, 4, 6] {
            for (variant, mesh) in [
                (GeometryVariant::Compressed, &cartesian),
                (GeometryVariant::G2, &curved),
                (GeometryVariant::G3, &curved),
                (GeometryVariant::G4, &curved),
            ] {
                let cfg = OperatorConfig::new(equation, 3, p).with_geometry(variant);
                let op = Operator::new(&cfg, mesh, 1).unwrap();
                let u = random_vector(op.n_dofs(), 5);
                group.throughput(Throughput::Elements(op.n_dofs() as u64));
                group.bench_with_input(BenchmarkId::new(variant.name(), p), &p, |b, _| {
                    b.iter(|| op.apply(black_box(&u)).unwrap())
                });
            }
        }
        group.finish();
    }
}

criterion_group!(benches, apply);
criterion_main!(benches);
