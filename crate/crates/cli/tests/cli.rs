use std::path::Path;
use std::process::Command;

fn pamlab(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_pamlab"))
        .args(args)
        .env("PAMLAB_WORKERS", "1")
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn verify_exits_zero_and_records_pass() {
    let dir = tempfile::tempdir().unwrap();
    let out = pamlab(&["verify", "--output-dir", "v"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let m = manifest(&dir.path().join("v"));
    assert_eq!(m["pass"], true);
    assert_eq!(m["subcommand"], "verify");
    assert!(String::from_utf8_lossy(&out.stdout)
        .lines()
        .all(|l| l.starts_with("PASS")));
}

#[test]
fn missing_n_list_exits_two_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "seed = 1\nreplicas = 200\nt_list = [0.5]\n").unwrap();
    let out = pamlab(&["clt", "--config", "c.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("N_list"));
}

#[test]
fn unknown_keys_and_bad_workers_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "N_list = [10.0]\nt_list = [0.5]\nsede = 1\n").unwrap();
    let out = pamlab(&["oracle", "--config", "c.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sede"));
    let out = Command::new(env!("CARGO_BIN_EXE_pamlab"))
        .arg("verify")
        .env("PAMLAB_WORKERS", "zero")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solver_rejections_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    // t is not a whole number of steps
    std::fs::write(
        dir.path().join("c.toml"),
        "seed = 1\nreplicas = 2\nN_list = [5.0]\nt_list = [0.0305]\nfield_kind = \"pam\"\n",
    )
    .unwrap();
    let out = pamlab(&["simulate", "--config", "c.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_is_byte_identical_for_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "seed = 42\nreplicas = 20\nN_list = [5.0, 10.0]\nt_list = [0.1, 0.2]\nfield_kind = \"pam\"\n";
    std::fs::write(dir.path().join("c.toml"), cfg).unwrap();
    for d in ["a", "b"] {
        let out = pamlab(&["simulate", "--config", "c.toml", "--output-dir", d], dir.path());
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["simulate_N5.csv", "simulate_N10.csv"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("replica,t,S\n"));
        assert_eq!(text.lines().count(), 1 + 20 * 2);
    }
    let m = manifest(&dir.path().join("a"));
    assert_eq!(m["config"]["resolution"]["dt"], 1e-3);
    assert_eq!(m["config"]["N_list"][1], 10.0);
}

#[test]
fn clt_writes_the_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "seed = 3\nreplicas = 200\nN_list = [10.0, 20.0]\nt_list = [0.5]\nfield_kind = \"gaussian_proxy\"\n";
    std::fs::write(dir.path().join("c.toml"), cfg).unwrap();
    let out = pamlab(&["clt", "--config", "c.toml"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("clt.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("N,t,replicas,emp_var_ratio,emp_var_se,oracle_var_ratio,ks_stat,ks_crit_1pct")
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), 8);
    assert_eq!(row[0].parse::<f64>().unwrap(), 10.0);
    assert_eq!(row[2], "200");
}

#[test]
fn fdd_ergodic_and_local_run() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, body: &str| std::fs::write(dir.path().join(name), body).unwrap();
    write("f.toml", "seed = 3\nreplicas = 200\nN_list = [20.0]\nt_list = [0.25, 0.5]\nfield_kind = \"gaussian_proxy\"\noutput_dir = \"f\"\n");
    write("e.toml", "seed = 3\nreplicas = 100\nN_list = [5.0, 10.0]\nt_list = [0.1]\nfield_kind = \"pam\"\noutput_dir = \"e\"\n[resolution]\ndt = 2e-3\ndx = 2e-2\n");
    write("l.toml", "seed = 3\nreplicas = 200\nN_list = [20.0]\nt_list = [0.05, 0.1]\nfield_kind = \"gaussian_proxy\"\noutput_dir = \"l\"\n");
    for (cmd, cfg, file, header) in [
        (
            "fdd",
            "f.toml",
            "f/fdd_N20.csv",
            "t_i,t_j,emp_scaled_cov,se,oracle_scaled_cov,limit_2min",
        ),
        (
            "ergodic",
            "e.toml",
            "e/ergodic.csv",
            "N,t,replicas,rms,rms_se,oracle_rms,scheme_rms,bound_constant",
        ),
        (
            "local",
            "l.toml",
            "l/local.csv",
            "N,t,replicas,mean_R,mean_R_se,oracle_mean_R,pz_fraction,pz_fraction_se,pz_bound,pz_bound_se",
        ),
    ] {
        let out = pamlab(&[cmd, "--config", cfg], dir.path());
        assert_eq!(
            out.status.code(),
            Some(0),
            "{cmd}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let text = std::fs::read_to_string(dir.path().join(file)).unwrap();
        assert_eq!(text.lines().next(), Some(header));
    }
    let text = std::fs::read_to_string(dir.path().join("f/fdd_N20.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 3);
}
