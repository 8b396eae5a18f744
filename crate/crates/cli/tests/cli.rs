use std::path::Path;
use std::process::{Command, Output};

fn bsdelta(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bsdelta"))
        .args(args)
        .env_remove("BSDELTA_THREADS")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn example(name: &str) -> String {
    format!("{}/examples/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

const SQRT_CLIP: &str = r#""terminal": {"expression": "sign(w1) * min(sqrt(abs(w1)), 1)", "bound": 1}"#;

#[test]
fn same_config_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = bsdelta(&[
            "duality",
            "--config",
            &example("duality.json"),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let read = |p: &Path| std::fs::read(p.join("duality.json")).unwrap();
    assert_eq!(read(&a), read(&b));

    let run = || bsdelta(&["converge", "--config", &example("converge.json")]).stdout;
    assert_eq!(run(), run());
    let seeded = |s: &str| bsdelta(&["duality", "--config", &example("duality.json"), "--seed", s]).stdout;
    assert_eq!(seeded("3"), seeded("3"));
}

#[test]
fn quadratic_counterexample_table() {
    let out = bsdelta(&[
        "counterexample",
        "--config",
        &example("counterexample_quadratic.json"),
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "N,a,oracle_Y0,solver_Y0,rel_error,lower_bound,comparison_violation"
    );
    let row10: Vec<&str> = lines.find(|l| l.starts_with("10,")).unwrap().split(',').collect();
    let y0: f64 = row10[3].parse().unwrap();
    let lower: f64 = row10[5].parse().unwrap();
    assert!(y0 >= 27.94 && (lower - 3.0 * 1.25f64.powi(10)).abs() < 1e-12);
    assert_eq!(row10[6], "true");
}

#[test]
fn empty_convergence_table_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &format!(
            r#"{{"lattice": {{"steps_list": []}}, "driver": {{"builtin": {{"name": "zero"}}}}, {SQRT_CLIP}}}"#
        ),
    );
    let out = bsdelta(&["converge", "--config", &cfg]);
    assert!(out.status.success());
    assert_eq!(out.stdout, b"N,Y0,diff,seconds\n");
}

#[test]
fn one_step_solve_has_documented_shape() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "s.json",
        r#"{"lattice": {"steps": 1, "dim": 2}, "driver": {"builtin": {"name": "zero"}},
            "terminal": {"expression": "w1 + 2 * w2", "bound": 3}}"#,
    );
    let v = stdout_json(&bsdelta(&["solve", "--config", &cfg]));
    assert_eq!(v["y0"].as_f64(), Some(0.0));
    // Z = (1, 2) exactly, dM = 0 per branch
    let z = v["fields"]["z"].as_array().unwrap();
    assert_eq!(z.len(), 1);
    assert_eq!(z[0].as_array().unwrap().len(), 1);
    let z00: Vec<f64> = z[0][0]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    assert!((z00[0] - 1.0).abs() < 1e-15 && (z00[1] - 2.0).abs() < 1e-15);
    assert_eq!(v["z0"], z[0][0]);
    let dm = v["fields"]["dm"][0][0].as_array().unwrap();
    assert_eq!(dm.len(), 4);
    assert!(dm.iter().all(|x| x.as_f64().unwrap().abs() < 1e-15));
    let y = v["fields"]["y"].as_array().unwrap();
    // recombining product lattice: (i + 1)^d nodes at level i
    assert_eq!((y.len(), y[1].as_array().unwrap().len()), (2, 4));
}

#[test]
fn schema_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write_config(
        dir.path(),
        "u.json",
        r#"{"lattice": {"steps": 4}, "colour": "red"}"#,
    );
    let out = bsdelta(&["solve", "--config", &unknown]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));

    let syntax = write_config(
        dir.path(),
        "p.json",
        r#"{"lattice": {"steps": 4}, "driver": {"expression": "y +", "constants": {"k": 1, "q": 1, "l_y": 1, "l_z": 0}},
            "terminal": {"expression": "w1", "bound": 5}}"#,
    );
    assert_eq!(bsdelta(&["solve", "--config", &syntax]).status.code(), Some(2));
    assert_eq!(
        bsdelta(&["solve", "--config", "/nonexistent.json"]).status.code(),
        Some(2)
    );
    assert_eq!(
        bsdelta(&["checks", "--config", &example("solve.json")])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn contract_errors_exit_1_with_context() {
    let dir = tempfile::tempdir().unwrap();
    // declared L_y = 1 but the driver is 3y
    let lie = write_config(
        dir.path(),
        "l.json",
        r#"{"lattice": {"steps": 4}, "driver": {"expression": "3 * y", "constants": {"k": 3, "q": 1, "l_y": 1, "l_z": 0}},
            "terminal": {"expression": "w1", "bound": 5}}"#,
    );
    let out = bsdelta(&["solve", "--config", &lie]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("declared constant violated"));

    // one step of length 1 with L_y = 2
    let coarse = write_config(
        dir.path(),
        "c.json",
        r#"{"lattice": {"steps": 1}, "driver": {"builtin": {"name": "linear_y_power_z", "k1": 2, "k2": 0, "p": 1.5}},
            "terminal": {"expression": "w1", "bound": 1}}"#,
    );
    let out = bsdelta(&["solve", "--config", &coarse]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("step-size condition"));
}

#[test]
fn checks_on_a_fine_two_dimensional_lattice() {
    let v = stdout_json(&bsdelta(&["checks", "--config", &example("checks.json")]));
    assert_eq!(v["lattice"]["steps"], 100);
    assert_eq!(v["lattice"]["dim"], 2);
    for key in [
        "w1",
        "w2",
        "comparison_thresholds",
        "duality_threshold",
        "solvability",
    ] {
        assert_eq!(v[key]["ok"], true, "{key}");
    }
    assert_eq!(v["all_ok"], true);
    // (1/100)^{(2 - 1.5)/4}
    assert!((v["w1"]["ratio"].as_f64().unwrap() - 0.01f64.powf(0.125)).abs() < 1e-15);

    // a coarse lattice fails the thresholds: report still written, exit 1
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(example("checks.json"))
        .unwrap()
        .replace("\"steps\": 100", "\"steps\": 1");
    let coarse = write_config(dir.path(), "c.json", &text.replace("0.01", "1.0"));
    let out = bsdelta(&["checks", "--config", &coarse]);
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["all_ok"], false);
}

#[test]
fn converge_sqrt_clip_differences_decrease() {
    let out = bsdelta(&["converge", "--config", &example("converge.json")]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let diffs: Vec<f64> = text
        .lines()
        .skip(2)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(diffs.len(), 5);
    assert!(diffs.windows(2).all(|w| w[1] < w[0]), "{diffs:?}");
    assert!(
        text.lines().skip(1).all(|l| l.ends_with(',')),
        "no timings by default"
    );
}

#[test]
fn report_commands_on_examples() {
    let v = stdout_json(&bsdelta(&["compare", "--config", &example("compare.json")]));
    assert_eq!(v["verdict"]["kind"], "ordered");
    assert!(v["min_gap"].as_f64().unwrap() >= -1e-10);

    let v = stdout_json(&bsdelta(&["stability", "--config", &example("stability.json")]));
    assert_eq!(v["within_bound"], true);

    let v = stdout_json(&bsdelta(&["duality", "--config", &example("duality.json")]));
    assert!(v["gap"].as_f64().unwrap().abs() < 1e-10);
    assert_eq!(v["weak_duality"]["holds"], true);
    assert_eq!(v["entropy"]["holds_everywhere"], true);

    let out = bsdelta(&[
        "counterexample",
        "--config",
        &example("z_blowup.json"),
        "--format",
        "json",
    ]);
    let v = stdout_json(&out);
    for row in v["rows"].as_array().unwrap() {
        let (a, b) = (
            row["closed_form_z"].as_f64().unwrap(),
            row["solver_z"].as_f64().unwrap(),
        );
        assert!((a - b).abs() < 1e-12 * a);
    }
    assert_eq!(
        bsdelta(&["compare", "--config", &example("compare.json"), "--format", "csv"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn node_dump_is_written_to_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = bsdelta(&[
        "solve",
        "--config",
        &example("solve_expression.json"),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("nodes.csv")).unwrap();
    assert!(csv.starts_with("level,node,t,w1,w2,y,z1,z2,dm_0,dm_1,dm_2,dm_3\n"));
    assert!(!csv.contains('\r'));
    // full tree with 4 branches and 6 steps
    assert_eq!(csv.lines().count(), 1 + (4usize.pow(7) - 1) / 3);
    assert!(dir.path().join("solve.json").exists());
    // without a directory the requested dump cannot be written
    assert_eq!(
        bsdelta(&["solve", "--config", &example("solve_expression.json")])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn thread_cap_is_validated() {
    let out = Command::new(env!("CARGO_BIN_EXE_bsdelta"))
        .args(["solve", "--config", &example("solve.json")])
        .env("BSDELTA_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let capped = Command::new(env!("CARGO_BIN_EXE_bsdelta"))
        .args(["solve", "--config", &example("solve.json")])
        .env("BSDELTA_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(
        capped.stdout,
        bsdelta(&["solve", "--config", &example("solve.json")]).stdout
    );
}
