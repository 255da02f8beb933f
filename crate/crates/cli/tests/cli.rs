use std::path::Path;
use std::process::{Command, Output};

fn pkdmf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pkdmf"))
        .args(args)
        .output()
        .expect("run pkdmf")
}

fn ok(args: &[&str]) -> String {
    let out = pkdmf(args);
    assert!(
        out.status.success(),
        "pkdmf {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn data_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_writes_header_comment_and_all_grid_points() {
    let text = ok(&["simulate", "--seed", "3"]);
    assert!(text.starts_with("# seed=3 "));
    let rows = data_lines(&text);
    assert_eq!(rows[0], "t,q,c");
    assert_eq!(rows[1], "0,5,0");
    assert_eq!(rows.len(), 1 + 18);
}

#[test]
fn filter_reads_simulated_output() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim.csv");
    let ens = dir.path().join("ens.csv");
    ok(&["simulate", "--seed", "5", "--out", path(&sim)]);

    for kind in ["ekf", "dmf"] {
        let text = ok(&[
            "filter",
            "--input",
            path(&sim),
            "--filter",
            kind,
            "--particles",
            "50",
            "--dump-ensemble",
            path(&ens),
        ]);
        let rows = data_lines(&text);
        assert_eq!(rows[0], "t,q_true,q_filt,sigma_filt");
        assert_eq!(rows.len(), 1 + 17);
        let first: Vec<f64> = rows[1].split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(first[0], 5.0);
        assert!((first[2] - first[1]).abs() < 0.5);
        assert!(first[3] >= 0.0);
    }
    let dumped = std::fs::read_to_string(&ens).unwrap();
    let rows = data_lines(&dumped);
    assert_eq!(rows[0], "step,particle_index,q,weight");
    assert_eq!(rows.len(), 1 + 17 * 50);
}

#[test]
fn filter_without_truth_column_leaves_it_empty() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("obs.csv");
    std::fs::write(&input, "t,c\n5,0.26\n10,0.43\n").unwrap();
    let text = ok(&["filter", "--input", path(&input), "--filter", "ekf"]);
    let rows = data_lines(&text);
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("5,,3.75247678"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "# small run\nreplicates = 4\nparticles = 60\nseed = 9\n").unwrap();
    let text = ok(&["compare", "--config", path(&cfg), "--seed", "11"]);
    let header = text.lines().next().unwrap();
    assert!(header.contains("seed=11"), "{header}");
    assert!(header.contains("replicates=4"));
    assert!(header.contains("particles=60"));
    let rows = data_lines(&text);
    assert!(rows[0].starts_with("series,0.05,"));
    let names: Vec<&str> = rows[1..].iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(names, ["DMF", "EKF", "RD"]);
}

#[test]
fn estimate_small_run_writes_table_and_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let bounds = dir.path().join("bounds.txt");
    std::fs::write(
        &bounds,
        "v_max 0.5 2\nk_m 10 20\nv 3 7\nc_l 0.02 0.1\nsigma_q2 0.0001 0.0004\nsigma_c2 0.00001 0.0001\n",
    )
    .unwrap();
    let table = dir.path().join("t.csv");
    let est = dir.path().join("e.csv");
    ok(&[
        "estimate",
        "--filter",
        "ekf",
        "--replicates",
        "2",
        "--pop-size",
        "20",
        "--max-loops",
        "3",
        "--m-replicates",
        "5",
        "--bounds-file",
        path(&bounds),
        "--out",
        path(&table),
        "--estimates-out",
        path(&est),
    ]);
    let text = std::fs::read_to_string(&table).unwrap();
    assert!(text.lines().any(|l| l.starts_with("# maep=")));
    assert!(text.contains("bounds-lower=0.5,10,3,"));
    assert_eq!(data_lines(&text).len(), 1 + 6);
    let est = std::fs::read_to_string(&est).unwrap();
    let rows = data_lines(&est);
    assert_eq!(rows[0], "estimate,v_max,k_m,v,c_l,sigma_q2,sigma_c2");
    assert_eq!(rows.len(), 3);
    for r in &rows[1..] {
        let v: Vec<f64> = r.split(',').skip(1).map(|x| x.parse().unwrap()).collect();
        assert!((0.5..=2.0).contains(&v[0]) && (10.0..=20.0).contains(&v[1]));
    }
}

#[test]
fn bad_input_is_reported() {
    let out = pkdmf(&["compare", "--replicates", "0"]);
    assert!(!out.status.success());
    let out = pkdmf(&["estimate", "--filter", "ukf"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("ukf"));
    let out = pkdmf(&["filter", "--input", "/nonexistent/obs.csv"]);
    assert!(!out.status.success());
}
