use std::process::{Command, Output};

fn dgbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dgbench")).args(args).output().expect("dgbench runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn no_arguments_is_a_usage_error() {
    assert_eq!(dgbench(&[]).status.code(), Some(2));
}

#[test]
fn unknown_operator_is_a_usage_error() {
    let o = dgbench(&["bench", "--operator", "stokes", "--dim", "2", "--degree", "2", "--cells", "2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_lane_width_is_a_usage_error() {
    let o = dgbench(&["bench", "--operator", "mass", "--dim", "2", "--degree", "2", "--cells", "2", "--lanes", "3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn hermite_below_degree_three_is_a_usage_error() {
    let o = dgbench(&[
        "bench",
        "--operator",
        "laplace",
        "--dim",
        "3",
        "--degree",
        "2",
        "--cells",
        "2",
        "--basis",
        "hermite",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("degree"));
}

#[test]
fn bench_appends_csv_records_under_one_header() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("runs.csv");
    let csv_arg = csv.to_str().unwrap();
    for geometry in ["cartesian", "g3"] {
        let o = dgbench(&[
            "bench",
            "--operator",
            "advection",
            "--dim",
            "2",
            "--degree",
            "2",
            "--cells",
            "4",
            "--geometry",
            geometry,
            "--warmup-ms",
            "10",
            "--csv",
            csv_arg,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(
        lines[0],
        "operator,dim,degree,cells,geometry,lanes,ranks,n_dofs,time_s,dofs_per_s,flops,bytes,intensity"
    );
    assert!(lines[1].starts_with("advection,2,2,16,cartesian,4,1,144,"));
    assert!(lines[2].starts_with("advection,2,2,16,g3,4,1,144,"));

    let o = dgbench(&["roofline", "--peak", "1e11", "--bw", "1e10", "--csv", csv_arg]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("knee at 10.000 flop/byte"));
    assert_eq!(out.lines().filter(|l| l.ends_with("-bound")).count(), 2);
}

#[test]
fn roofline_without_csv_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let o = dgbench(&["roofline", "--peak", "1e11", "--bw", "1e10", "--csv", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn roofline_rejects_foreign_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("other.csv");
    std::fs::write(&csv, "a,b,c\n1,2,3\n").unwrap();
    let o = dgbench(&["roofline", "--peak", "1e11", "--bw", "1e10", "--csv", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn count_suite_passes() {
    let o = dgbench(&["verify", "--suite", "counts"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.lines().any(|l| l.starts_with("PASS")));
    assert!(!out.lines().any(|l| l.starts_with("FAIL")));
}

#[test]
fn convergence_prints_rates() {
    let o = dgbench(&["convergence", "--operator", "laplace", "--dim", "2", "--degree", "2", "--levels", "1..3"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let rates: Vec<f64> = out.lines().skip(2).filter_map(|l| l.split_whitespace().last()?.parse().ok()).collect();
    assert_eq!(rates.len(), 2);
    assert!(rates[1] > 2.5, "{out}");
}

#[test]
fn convergence_rejects_mass() {
    let o = dgbench(&["convergence", "--operator", "mass", "--degree", "2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn stored_jacobians_lower_the_intensity() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("g.csv");
    let csv_arg = csv.to_str().unwrap();
    for geometry in ["g2", "g3"] {
        let args = ["bench", "--operator", "laplace", "--dim", "3", "--degree", "3", "--cells", "2", "--geometry"];
        let o = dgbench(&[&args[..], &[geometry, "--warmup-ms", "10", "--csv", csv_arg]].concat());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let text = std::fs::read_to_string(&csv).unwrap();
    let intensity: Vec<f64> = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert!(intensity[1] < intensity[0], "g3 {} vs g2 {}", intensity[1], intensity[0]);
}
