use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn out_dir(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("kdvnf-{name}-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kdvnf")).args(args).arg("--out").arg(out).output().unwrap()
}

fn read_json(p: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn quick_verify_passes() {
    let d = out_dir("verify");
    let o = run(&["verify", "--quick"], &d);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}");
    assert!(stdout.lines().filter(|l| l.starts_with("[PASS]")).count() >= 6);
    let v = read_json(d.join("verify.json"));
    assert_eq!(v["command"], "verify");
    std::fs::remove_dir_all(d).unwrap();
}

#[test]
fn lame_spectrum_has_one_gap() {
    let d = out_dir("spectrum");
    let o = run(&["spectrum", "--potential", "lame:0.5", "--nmax", "6"], &d);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(d.join("spectrum.csv")).unwrap();
    let gammas: Vec<f64> = csv.lines().skip(2).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(gammas.len(), 6);
    assert!(gammas[0] > 1.0);
    assert!(gammas[1..].iter().all(|g| g.abs() < 1e-6), "{gammas:?}");
    std::fs::remove_dir_all(d).unwrap();
}

#[test]
fn expand_reports_remainder_table() {
    let d = out_dir("expand");
    let o = run(&["expand", "--potential", "lame:0.5", "--family", "W", "--N", "2", "--nset", "8,11,16,23"], &d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(d.join("expand.json"));
    let table = v["result"]["sup_remainder_table"].as_array().unwrap();
    assert_eq!(table.len(), 4);
    assert!(table.iter().all(|r| r["sup_remainder"].as_f64().unwrap().is_finite()));
    assert!(d.join("expand_W.dat").exists());
    std::fs::remove_dir_all(d).unwrap();
}

#[test]
fn bad_configuration_exits_with_one() {
    let d = out_dir("bad");
    for args in [
        &["spectrum", "--potential", "nonsense"][..],
        &["spectrum", "--nmax", "x"],
        &["expand", "--family", "nope"],
        &["corrector", "--potential", "zero"],
    ] {
        assert_eq!(run(args, &d).status.code(), Some(1), "{args:?}");
    }
    std::fs::remove_dir_all(d).unwrap();
}

#[test]
fn json_output_is_deterministic() {
    let (a, b) = (out_dir("det-a"), out_dir("det-b"));
    for d in [&a, &b] {
        assert!(run(&["floquet", "--potential", "lame:0.4", "--nmax", "5"], d).status.success());
    }
    // only the output directory differs between the two runs
    let load = |d: &PathBuf| {
        let mut j = read_json(d.join("floquet.json"));
        j["config"]["out"] = Value::Null;
        j
    };
    assert_eq!(load(&a), load(&b));
    std::fs::remove_dir_all(a).unwrap();
    std::fs::remove_dir_all(b).unwrap();
}
