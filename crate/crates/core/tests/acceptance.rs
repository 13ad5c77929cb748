//! End-to-end acceptance criteria. Each criterion prints one PASS/FAIL line
//! straight to stdout so the report is visible without `--nocapture`.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tensordg::basis::{gauss_quadrature, make_basis, shape_matrices, BasisKind, Matrix1D, Op1D, ShapeMatrices1D};
use tensordg::convergence::run_convergence;
use tensordg::counters;
use tensordg::exchange::PlanKind;
use tensordg::geometry::{model_doubles_per_qpoint, GeometryVariant};
use tensordg::lanes::{Lanes, Number, Tally};
use tensordg::mesh::{all_dirichlet, Mapping, Mesh};
use tensordg::operators::{Equation, Operator, OperatorConfig};
use tensordg::oracle::{assemble_operator, dense_kronecker_apply};
use tensordg::perf::{time_calls, time_operator, TimingPlan};
use tensordg::tensor::{
    basis_change, collocation_derivative, laplacian_scratch_len, scratch_len, tiled_cell_laplacian,
    untiled_cell_laplacian, Kernel, KernelForm,
};

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_vec(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
}

fn rel_linf(a: &[f64], reference: &[f64]) -> f64 {
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    a.iter().zip(reference).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

fn deformed(p: usize) -> Mapping {
    Mapping::PolynomialDeformation { degree: p.min(2), amplitude: 0.06 }
}

fn shapes(kind: BasisKind, degree: usize, n_q: usize) -> ShapeMatrices1D {
    shape_matrices(&make_basis(kind, degree).unwrap(), &gauss_quadrature(n_q).unwrap()).unwrap()
}

fn scalars(v: &[f64]) -> Vec<Lanes<1>> {
    v.iter().map(|&x| Lanes::splat(x)).collect()
}

fn unscalars(v: &[Lanes<1>]) -> Vec<f64> {
    v.iter().map(|x| x.0[0]).collect()
}

fn symmetric_op(k: usize, r: &mut ChaCha8Rng) -> Op1D {
    let v = random_vec(r, k * k);
    Op1D::new(Matrix1D::from_fn(k, k, |i, j| v[i * k + j] + v[(k - 1 - i) * k + (k - 1 - j)]), 1.0)
}

fn oracle_equivalence() -> Outcome {
    let mut cases: Vec<(usize, usize, usize)> = (1..=5).map(|p| (2, p, 4)).collect();
    cases.extend((1..=3).map(|p| (3, p, 3)));
    let mut worst: f64 = 0.0;
    let mut runs = 0;
    for (d, p, n) in cases {
        for mapping in [Mapping::Cartesian, deformed(p)] {
            let mesh = Mesh::unit_box(d, n, mapping, all_dirichlet()).unwrap();
            for eq in [Equation::Mass, Equation::Advection, Equation::Laplacian] {
                let base = OperatorConfig::new(eq, d, p);
                let a = assemble_operator(&base, &mesh).unwrap();
                let u = random_vec(&mut rng(17 + p as u64), a.n);
                let reference = a.apply(&u);
                for variant in GeometryVariant::ALL {
                    for lanes in [1, 4] {
                        for ranks in [1, 2, 4] {
                            let cfg = base.clone().with_geometry(variant).with_lanes(lanes);
                            let y = Operator::new(&cfg, &mesh, ranks).unwrap().apply(&u).unwrap();
                            worst = worst.max(rel_linf(&y, &reference));
                            runs += 1;
                        }
                    }
                }
            }
        }
    }
    (worst <= 1e-11, format!("{runs} configurations, max rel err {worst:.2e} (<= 1e-11)"))
}

fn kernel_counts() -> Outcome {
    let mut bad = Vec::new();
    let mut checked = 0;
    for d in [2usize, 3] {
        let mesh = Mesh::unit_box(d, 3, Mapping::Cartesian, all_dirichlet()).unwrap();
        let (du, dm) = (d as u64, d as u64 - 1);
        let rows = [
            (Equation::Advection, BasisKind::LagrangeGaussLobatto, [(2 * du, du, 0), (4 * dm, 0, 4), (2 * dm, 0, 2)]),
            (
                Equation::Laplacian,
                BasisKind::HermiteLike,
                [(2 * du, 2 * du, 0), (8 * dm, 4 * dm, 8), (4 * dm, 2 * dm, 4)],
            ),
        ];
        for (eq, basis, expect) in rows {
            let cfg = OperatorConfig::new(eq, d, 4).with_basis(basis);
            let parts = Operator::new(&cfg, &mesh, 1).unwrap().ranks[0].part_counts().unwrap();
            for (got, want) in [Some(parts.cell), parts.inner_face, parts.boundary_face].into_iter().zip(expect) {
                let got = got.map(|c| (c.basis_change, c.derivative, c.face_normal));
                checked += 1;
                if got != Some(want) {
                    bad.push((eq.name(), d, got, want));
                }
            }
        }
    }
    (bad.is_empty(), format!("{checked} table rows checked, mismatches {bad:?}"))
}

fn stripe_flops() -> Outcome {
    let mut bad = Vec::new();
    for k in 2..=16usize {
        let op = symmetric_op(k, &mut rng(k as u64));
        let kern = Kernel::resolve(&op, KernelForm::EvenOdd).unwrap();
        let x = vec![Tally::<1>::splat(0.25); k];
        let mut y = vec![Tally::<1>::zero(); k];
        let (_, c) = counters::measure(|| kern.stripe(&x, &mut y));
        let k64 = k as u64;
        let want = (2 * k64, k64, k64 * (k64 - 2) / 2);
        if (c.adds, c.mults, c.fmas) != want {
            bad.push((k, (c.adds, c.mults, c.fmas), want));
        }
    }
    let odd_only = bad.iter().all(|b| b.0 % 2 == 1);
    let note = if !bad.is_empty() && odd_only { "even k exact; odd k differ" } else { "" };
    (bad.is_empty(), format!("k=2..16 against (2k, k, floor(k(k-2)/2)); {note} (k, got, want) {bad:?}"))
}

fn even_odd_equals_plain() -> Outcome {
    let mut r = rng(5);
    let mut worst: f64 = 0.0;
    for k in 2..=16 {
        let op = symmetric_op(k, &mut r);
        let plain = Kernel::resolve(&op, KernelForm::Plain).unwrap();
        let eo = Kernel::resolve(&op, KernelForm::EvenOdd).unwrap();
        for _ in 0..1000 {
            let x = scalars(&random_vec(&mut r, k));
            let (mut a, mut b) = (vec![Lanes::<1>::zero(); k], vec![Lanes::<1>::zero(); k]);
            plain.stripe(&x, &mut a);
            eo.stripe(&x, &mut b);
            worst = worst.max(rel_linf(&unscalars(&b), &unscalars(&a)));
        }
    }
    (worst <= 1e-13, format!("1000 stripes per k=2..16, max rel diff {worst:.2e} (<= 1e-13)"))
}

fn collocation_gradient() -> Outcome {
    let mut r = rng(11);
    let mut worst: f64 = 0.0;
    for d in 1..=3 {
        for k in 2..=8 {
            let sh = shapes(BasisKind::LagrangeGaussLobatto, k - 1, k);
            let n = k.pow(d as u32);
            let u = random_vec(&mut r, n);
            let mut vals = vec![Lanes::<1>::zero(); n];
            let mut scratch = vec![Lanes::<1>::zero(); scratch_len(d, k)];
            basis_change(d, true, false, &sh, KernelForm::EvenOdd, &scalars(&u), &mut vals, &mut scratch).unwrap();
            let mut grad = vec![Lanes::<1>::zero(); d * n];
            collocation_derivative(d, true, false, &sh, KernelForm::EvenOdd, &vals, &mut grad).unwrap();
            for a in 0..d {
                let factors: Vec<&Matrix1D> =
                    (0..d).map(|b| if a == b { &sh.gradients.plain } else { &sh.values.plain }).collect();
                let naive = dense_kronecker_apply(&factors, &u).unwrap();
                worst = worst.max(rel_linf(&unscalars(&grad[a * n..(a + 1) * n]), &naive));
            }
        }
    }
    (worst <= 1e-13, format!("d=1..3, k=2..8, max rel diff {worst:.2e} (<= 1e-13)"))
}

fn tiling() -> Outcome {
    let mut r = rng(9);
    let mut worst: f64 = 0.0;
    for k in 2..=8 {
        let sh = shapes(BasisKind::LagrangeGaussLobatto, k - 1, k);
        let coef = random_vec(&mut r, 9 * k * k * k);
        let qop = |q: usize, g: [Lanes<1>; 3]| {
            let c = &coef[9 * q..9 * q + 9];
            let mut t = [Lanes::<1>::zero(); 3];
            for (a, ta) in t.iter_mut().enumerate() {
                *ta = g[0].scale(c[3 * a]) + g[1].scale(c[3 * a + 1]) + g[2].scale(c[3 * a + 2]);
            }
            t
        };
        let u = scalars(&random_vec(&mut r, k * k * k));
        let (mut a, mut b) = (vec![Lanes::<1>::zero(); k * k * k], vec![Lanes::<1>::zero(); k * k * k]);
        let mut scratch = vec![Lanes::<1>::zero(); laplacian_scratch_len(k)];
        tiled_cell_laplacian(&sh, KernelForm::EvenOdd, &u, &mut a, &mut scratch, qop).unwrap();
        untiled_cell_laplacian(&sh, KernelForm::EvenOdd, &u, &mut b, &mut scratch, qop).unwrap();
        worst = worst.max(rel_linf(&unscalars(&a), &unscalars(&b)));
    }
    (worst <= 1e-13, format!("d=3, k=2..8, max rel diff {worst:.2e} (<= 1e-13)"))
}

fn slim_exchange() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for d in [2usize, 3] {
        let p = 4;
        let k = p + 1;
        let mesh = Mesh::unit_box(d, if d == 2 { 8 } else { 4 }, deformed(p), all_dirichlet()).unwrap();
        for (eq, basis, per_cell) in [
            (Equation::Advection, BasisKind::LagrangeGaussLobatto, k.pow(d as u32 - 1)),
            (Equation::Laplacian, BasisKind::HermiteLike, 2 * k.pow(d as u32 - 1)),
        ] {
            let cfg = OperatorConfig::new(eq, d, p).with_basis(basis);
            let slim = Operator::new(&cfg, &mesh, 2).unwrap();
            let counts: Vec<usize> =
                slim.ranks.iter().flat_map(|r| r.plan.values_per_ghost_cell()).map(|c| c.1).collect();
            let counts_ok = !counts.is_empty() && counts.iter().all(|&c| c == per_cell);
            let full = Operator::new(&cfg.clone().with_plan(PlanKind::Full), &mesh, 2).unwrap();
            let u = random_vec(&mut rng(3), slim.n_dofs());
            let slim_y = slim.apply(&u).unwrap();
            let slim_full = rel_linf(&slim_y, &full.apply(&u).unwrap());
            let reference = Operator::new(&cfg, &mesh, 1).unwrap().apply(&u).unwrap();
            let ranks = [2, 4, 7]
                .iter()
                .map(|&r| rel_linf(&Operator::new(&cfg, &mesh, r).unwrap().apply(&u).unwrap(), &reference))
                .fold(0.0f64, f64::max);
            ok &= counts_ok && slim_full <= 1e-13 && ranks <= 1e-12;
            notes.push(format!(
                "{} d={d}: {}x{per_cell} values {}, slim/full {slim_full:.1e}, ranks {ranks:.1e}",
                basis.name(),
                counts.len(),
                if counts_ok { "ok" } else { "WRONG" }
            ));
        }
    }
    (ok, notes.join("; "))
}

fn sip_properties() -> Outcome {
    let mut ok = true;
    let mut worst_asym: f64 = 0.0;
    let mut min_ev = f64::INFINITY;
    for (p, n) in [(1, 10), (2, 6), (3, 5)] {
        for mapping in [Mapping::Cartesian, deformed(p)] {
            let mesh = Mesh::unit_box(2, n, mapping, all_dirichlet()).unwrap();
            let a = assemble_operator(&OperatorConfig::new(Equation::Laplacian, 2, p), &mesh).unwrap();
            assert!(a.n <= 400);
            let asym = a.asymmetry();
            let ev = a.symmetric_eigenvalues().unwrap()[0];
            worst_asym = worst_asym.max(asym);
            min_ev = min_ev.min(ev);
            ok &= asym <= 1e-11 && ev >= -1e-10;
        }
    }
    (ok, format!("d=2 p=1..3, max asymmetry {worst_asym:.2e} (<= 1e-11), min eigenvalue {min_ev:.3e} (>= -1e-10)"))
}

fn convergence() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for (eq, margin) in [(Equation::Laplacian, 0.9), (Equation::Advection, 0.5)] {
        for p in [2, 3] {
            let rows = run_convergence(eq, 2, p, 2..=5, Mapping::Cartesian, 4).unwrap();
            let rate = rows.last().and_then(|r| r.rate).unwrap_or(f64::NAN);
            ok &= rate >= p as f64 + margin;
            notes.push(format!("{} p={p} rate {rate:.2} (>= {})", eq.name(), p as f64 + margin));
        }
    }
    (ok, notes.join(", "))
}

fn performance() -> Outcome {
    let plan =
        TimingPlan { warmup: Duration::from_millis(300), repetitions: 5, min_repetition: Duration::from_millis(20) };
    let mesh = Mesh::unit_box(3, 4, Mapping::Cartesian, all_dirichlet()).unwrap();
    let cfg = OperatorConfig::new(Equation::Laplacian, 3, 5);
    let op = Operator::new(&cfg, &mesh, 1).unwrap();
    let a = assemble_operator(&cfg, &mesh).unwrap();
    let u = random_vec(&mut rng(1), op.n_dofs());
    let fast = time_operator(&op, plan).unwrap();
    let dense = time_calls(plan, || {
        std::hint::black_box(a.apply(&u));
        Ok(())
    })
    .unwrap();
    let speedup = dense / fast;

    let curved = Mesh::unit_box(3, 6, deformed(3), all_dirichlet()).unwrap();
    let mut ratios = Vec::new();
    for p in 3..=7 {
        let time = |w: usize| {
            let cfg = OperatorConfig::new(Equation::Laplacian, 3, p).with_lanes(w);
            time_operator(&Operator::new(&cfg, &curved, 1).unwrap(), plan).unwrap()
        };
        ratios.push(time(1) / time(4));
    }
    let slow: Vec<usize> = ratios.iter().enumerate().filter(|(_, r)| **r < 1.5).map(|(i, _)| i + 3).collect();
    let warn = if slow.is_empty() { String::new() } else { format!(" WARN: W=4 below 1.5x for p={slow:?}") };
    let ratios: Vec<String> = ratios.iter().map(|r| format!("{r:.2}")).collect();
    (speedup >= 5.0, format!("speedup vs assembled {speedup:.1} (>= 5), W4/W1 p=3..7 [{}]{warn}", ratios.join(", ")))
}

fn geometry_bytes() -> Outcome {
    let mesh = Mesh::unit_box(3, 2, deformed(3), all_dirichlet()).unwrap();
    let mut ok = true;
    let mut notes = Vec::new();
    for (variant, eq, want) in [
        (GeometryVariant::G2, Equation::Laplacian, 3),
        (GeometryVariant::G3, Equation::Laplacian, 10),
        (GeometryVariant::G4, Equation::Laplacian, 6),
        (GeometryVariant::G4, Equation::Advection, 3),
    ] {
        let model = model_doubles_per_qpoint(variant, eq, 3);
        let op = Operator::new(&OperatorConfig::new(eq, 3, 3).with_geometry(variant), &mesh, 1).unwrap();
        let stored = op.ranks[0].cell_geometry.stored_doubles_per_qpoint();
        ok &= model == Some(want) && stored == want as f64;
        notes.push(format!("{}-{} {stored}", variant.name(), eq.name()));
    }
    (ok, format!("stored doubles per point: {}", notes.join(", ")))
}

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 11] = [
        ("oracle equivalence", oracle_equivalence),
        ("kernel call counts", kernel_counts),
        ("even-odd stripe flops", stripe_flops),
        ("even-odd equals plain", even_odd_equals_plain),
        ("collocation gradient", collocation_gradient),
        ("tiled cell Laplacian", tiling),
        ("slim ghost exchange", slim_exchange),
        ("SIP symmetry and definiteness", sip_properties),
        ("convergence rates", convergence),
        ("performance sanity", performance),
        ("geometry byte model", geometry_bytes),
    ];
    let mut failed = Vec::new();
    let mut stdout = std::io::stdout();
    writeln!(stdout).unwrap();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = run();
        let status = if ok { "PASS" } else { "FAIL" };
        writeln!(stdout, "{status} {:>2} {name:<30} {detail} [{:.1}s]", i + 1, start.elapsed().as_secs_f64()).unwrap();
        if !ok {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}
