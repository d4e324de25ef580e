use std::process::{Command, Output};

fn stheat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stheat")).args(args).output().expect("binary runs")
}

const HEADER: &str = "iteration,dim_x,dim_xbar,dim_y,residual_norm,beta,pcg_iters,solve_ms,estimate_ms,mark_ms,refine_ms,opcount_solve,opcount_estimate";

#[test]
fn adaptive_run_writes_one_row_per_iteration() {
    let out = stheat(&["--problem", "smooth", "--max-dofs", "300"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(HEADER));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert!(rows.len() >= 3);
    for (k, r) in rows.iter().enumerate() {
        assert_eq!(r.len(), 13);
        assert_eq!(r[0], k as f64);
        assert!(r[4].is_finite() && r[4] >= 0.0);
        assert!(r[2] >= r[1]);
    }
    assert!(rows.windows(2).all(|w| w[1][1] > w[0][1]));
    assert!(rows.last().unwrap()[1] >= 300.0);
}

#[test]
fn output_file_and_mesh_dump() {
    let dir = std::env::temp_dir().join(format!("stheat-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let (csv, mesh) = (dir.join("run.csv"), dir.join("mesh.txt"));
    let out = stheat(&[
        "--problem",
        "singular",
        "--max-dofs",
        "100",
        "--out",
        csv.to_str().unwrap(),
        "--dump-mesh",
        mesh.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with(HEADER));
    assert!(!std::fs::read_to_string(&mesh).unwrap().is_empty());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn invalid_arguments_exit_with_usage_error() {
    let out = stheat(&["--problem", "wave"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("moving-peak"));
    assert_eq!(stheat(&[]).status.code(), Some(2));
    assert_eq!(stheat(&["--problem", "smooth", "--max-dofs", "-3"]).status.code(), Some(2));
}

#[test]
fn out_of_range_parameters_are_runtime_errors() {
    for args in [["--theta", "0"], ["--xi", "1"], ["--mg-cycles", "0"]] {
        let out = stheat(&["--problem", "smooth", args[0], args[1]]);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("stheat:"));
    }
    let out = stheat(&["--problem", "smooth", "--out", "/nonexistent-dir/x.csv"]);
    assert_eq!(out.status.code(), Some(1));
}
