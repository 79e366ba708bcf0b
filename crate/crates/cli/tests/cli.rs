use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mgaopt::bodies::BodyCatalog;
use tempfile::TempDir;

fn mgaopt(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mgaopt"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("MGA_CATALOG")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

/// Every CSV starts with a units comment followed by a header row, and the
/// manifest lists each output with its hash.
fn check_outputs(dir: &Path) -> serde_json::Value {
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    for entry in manifest["outputs"].as_array().unwrap() {
        let name = entry["file"].as_str().unwrap();
        let bytes = fs::read(dir.join(name)).unwrap();
        assert_eq!(entry["bytes"].as_u64().unwrap() as usize, bytes.len());
        let hash = sha256(&bytes);
        assert_eq!(entry["sha256"].as_str().unwrap(), hash, "{name}");
        if name.ends_with(".csv") {
            let text = String::from_utf8(bytes).unwrap();
            let mut lines = text.lines();
            assert!(lines.next().unwrap().starts_with("# units: "), "{name}");
            let header = lines.next().unwrap();
            assert!(!header.is_empty() && header.chars().next().unwrap().is_ascii_alphabetic(), "{name}");
        }
    }
    manifest
}

fn sha256(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

const EVMEJ: [&str; 7] = [
    "phase-search",
    "--sequence",
    "E,V,M,E,J",
    "--revs",
    "1,0,0,0",
    "--window",
    "2009-01-01:2011-12-31",
];

#[test]
fn help_exits_zero() {
    let o = Command::new(env!("CARGO_BIN_EXE_mgaopt")).args(["sot-search", "--help"]).output().unwrap();
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("--v-target"));
}

#[test]
fn phase_search_writes_ranked_candidates() {
    let dir = TempDir::new().unwrap();
    let o = mgaopt(&EVMEJ, dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = check_outputs(dir.path());
    assert_eq!(m["status"], "ok");
    assert_eq!(m["exit_code"], 0);
    let text = fs::read_to_string(dir.path().join("phasing.csv")).unwrap();
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 100);
    let merits: Vec<f64> = rows.iter().map(|r| r[6].parse().unwrap()).collect();
    assert!(merits.windows(2).all(|w| w[0] <= w[1]));
    let launch: f64 = rows[0][1].parse().unwrap();
    assert!((launch - 3692.0).abs() < 100.0);
    assert_eq!(&rows[0][2], "2010-02-09");
}

#[test]
fn calendar_and_mjd_windows_agree() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    assert_eq!(code(&mgaopt(&EVMEJ, a.path())), 0);
    let mut args = EVMEJ.to_vec();
    args[6] = "3287.5:4381.5";
    assert_eq!(code(&mgaopt(&args, b.path())), 0);
    assert_eq!(
        fs::read(a.path().join("phasing.csv")).unwrap(),
        fs::read(b.path().join("phasing.csv")).unwrap()
    );
}

#[test]
fn capture_map_is_reproducible() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let args = ["capture-map", "--moon", "ganymede", "--altitude", "300"];
    assert_eq!(code(&mgaopt(&args, a.path())), 0);
    assert_eq!(code(&mgaopt(&args, b.path())), 0);
    let (ma, mb) = (check_outputs(a.path()), check_outputs(b.path()));
    assert_eq!(ma["inputs_sha256"], mb["inputs_sha256"]);
    assert_eq!(ma["outputs"], mb["outputs"]);
    let text = fs::read_to_string(a.path().join("capture_map.csv")).unwrap();
    assert_eq!(text.lines().count(), 2 + 91 * 81);
    let limit = fs::read_to_string(a.path().join("capture_limit.csv")).unwrap();
    let v: f64 = limit.lines().nth(2).unwrap().split(',').nth(3).unwrap().parse().unwrap();
    assert!((v - 4.8).abs() < 0.15, "{v}");
}

#[test]
fn sot_search_reproduces_calibrated_tour() {
    let dir = TempDir::new().unwrap();
    let args = ["sot-search", "--moon", "europa", "--v-rel", "4.3", "--rho-min", "2.75", "--v-target", "14.85"];
    let o = mgaopt(&args, dir.path());
    assert_eq!(code(&o), 0);
    check_outputs(dir.path());
    let text = fs::read_to_string(dir.path().join("sot_legs.csv")).unwrap();
    let res: Vec<&str> = text.lines().skip(2).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(res, ["3:1", "5:2", "2:1", "8:5"]);
}

#[test]
fn unreachable_tour_exits_one_with_manifest() {
    let dir = TempDir::new().unwrap();
    let args = ["sot-search", "--moon", "ganymede", "--v-rel", "6.6", "--alpha0-deg", "60", "--v-target", "1", "--max-depth", "2"];
    let o = mgaopt(&args, dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no tour reaches"));
    let m = check_outputs(dir.path());
    assert_eq!(m["exit_code"], 1);
}

#[test]
fn configuration_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let unknown = ["sot-search", "--moon", "pluto", "--v-rel", "1", "--alpha0-deg", "3", "--v-target", "2"];
    assert_eq!(code(&mgaopt(&unknown, dir.path())), 2);
    let window = ["phase-search", "--sequence", "E,V", "--window", "2010-01-01"];
    assert_eq!(code(&mgaopt(&window, dir.path())), 2);
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "elements = 4\nbogus = 1\n").unwrap();
    let o = mgaopt(&["dfet-solve", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
    let o = Command::new(env!("CARGO_BIN_EXE_mgaopt")).arg("no-such-command").output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn catalog_comes_from_the_environment() {
    let dir = TempDir::new().unwrap();
    let text = BodyCatalog::default_catalog().to_toml_string().unwrap();
    let mut table: toml::Table = text.parse().unwrap();
    table["ganymede"]
        .as_table_mut()
        .unwrap()
        .insert("min_flyby_altitude".into(), toml::Value::Float(500.0));
    let path = dir.path().join("bodies.toml");
    fs::write(&path, toml::to_string(&table).unwrap()).unwrap();
    let args = ["capture-map", "--moon", "ganymede", "--altitude", "300", "--out"];
    let run = |env: Option<&Path>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_mgaopt"));
        c.args(args).arg(dir.path().join("out")).env_remove("MGA_CATALOG");
        if let Some(p) = env {
            c.env("MGA_CATALOG", p);
        }
        c.output().unwrap()
    };
    assert_eq!(code(&run(None)), 0);
    let o = run(Some(&path));
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("floor"));
}

#[test]
fn json_tables() {
    let dir = TempDir::new().unwrap();
    let o = mgaopt(&["power-curve", "--steps", "5", "--format", "json"], dir.path());
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("power.json")).unwrap()).unwrap();
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    assert!(v["units"].as_str().unwrap().contains("AU"));
    let p: Vec<f64> = rows.iter().map(|r| r["p_in"].as_f64().unwrap()).collect();
    assert!(p.windows(2).all(|w| w[1] <= w[0]));
}

fn fast_config(dir: &Path) -> String {
    let path = dir.join("fast.toml");
    fs::write(&path, "elements = 6\norder = 4\nobjective = \"feasibility\"\n").unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn dfet_solve_writes_node_table_and_report() {
    let dir = TempDir::new().unwrap();
    let cfg = fast_config(dir.path());
    let o = mgaopt(&["dfet-solve", "--config", &cfg], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = check_outputs(dir.path());
    assert!(m["timings_ms"]["dfet"].as_f64().unwrap() > 0.0);
    let nodes = fs::read_to_string(dir.path().join("dfet_nodes.csv")).unwrap();
    assert_eq!(nodes.lines().count(), 2 + 6 * 4);
    let report = fs::read_to_string(dir.path().join("dfet_report.txt")).unwrap();
    assert!(report.contains("feasibility_stage.converged = true"));
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(nodes.as_bytes());
    for r in rdr.records() {
        let r = r.unwrap();
        let (thrust, f_max): (f64, f64) = (r[12].parse().unwrap(), r[13].parse().unwrap());
        assert!(thrust <= f_max * (1.0 + 1e-6));
    }
}

#[test]
fn pipeline_persists_every_stage() {
    let dir = TempDir::new().unwrap();
    let cfg = fast_config(dir.path());
    let mut args = EVMEJ.to_vec();
    args[0] = "pipeline";
    args.extend(["--candidates", "1", "--dfet-config", &cfg]);
    let o = mgaopt(&args, dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = check_outputs(dir.path());
    for f in ["phasing.csv", "bs3_summary.csv", "bs3_legs.csv", "bs3_flybys.csv", "capture_limit.csv", "dfet_nodes.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    for stage in ["phasing", "impulsive", "capture_limit", "dfet"] {
        assert!(m["timings_ms"][stage].is_number(), "{stage}");
    }
}
