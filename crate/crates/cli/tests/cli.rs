use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bym2(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bym2")).args(args).env("BYM2_THREADS", "1").output().expect("binary runs")
}

fn schema(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas").join(name);
    let v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&v).unwrap()
}

fn assert_valid(schema_name: &str, doc: &Value) {
    let v = schema(schema_name);
    let errors: Vec<String> = v.iter_errors(doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{schema_name}: {errors:?}");
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn scale_p2_reports_quarter() {
    let dir = tempfile::tempdir().unwrap();
    let g = write(dir.path(), "p2.txt", "2\n1 1 2\n2 1 1\n");
    let prefix = dir.path().join("p2");
    let out = bym2(&["scale", s(&g), "--out", s(&prefix)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let meta: Value = serde_json::from_str(&fs::read_to_string(prefix.with_extension("json")).unwrap()).unwrap();
    assert_valid("scale_meta.schema.json", &meta);
    assert!((meta["scale_factors"][0].as_f64().unwrap() - 0.25).abs() < 1e-6);
    let mtx = fs::read_to_string(prefix.with_extension("mtx")).unwrap();
    assert_eq!(mtx.lines().count(), 3);
    assert!(mtx.starts_with("1 1 "));
}

#[test]
fn scale_single_node_lists_singleton() {
    let dir = tempfile::tempdir().unwrap();
    let g = write(dir.path(), "one.txt", "1\n1 0\n");
    let out = bym2(&["scale", s(&g)]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let meta: Value = serde_json::from_str(text.lines().next().unwrap().trim_start_matches("# ")).unwrap();
    assert_eq!(meta["block_dim"], 0);
    assert_eq!(meta["singleton_regions"], serde_json::json!([0]));
    assert_eq!(text.lines().count(), 1);
}

#[test]
fn malformed_graph_exits_2_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let g = write(dir.path(), "bad.txt", "3\n1 1 2\n2 2 1 zz\n3 0\n");
    let out = bym2(&["scale", s(&g)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn prior_phi_table_integrates_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let g = write(dir.path(), "p2.txt", "2\n1 1 2\n2 1 1\n");
    let table = |alpha: &str| -> Vec<(f64, f64, f64)> {
        let out = bym2(&["prior-phi", s(&g), "--u", "0.5", "--alpha", alpha, "--points", "4001"]);
        assert!(out.status.success());
        String::from_utf8(out.stdout)
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| {
                let v: Vec<f64> = l.split(',').map(|t| t.parse().unwrap()).collect();
                (v[0], v[1], v[2])
            })
            .collect()
    };
    let t = table("0.6666666666666666");
    // trapezoid in logit φ: density times dφ/dlogit = φ(1 − φ)
    let f: Vec<f64> = t.iter().map(|(p, _, l)| l.exp() * p * (1.0 - p)).collect();
    let h = t[1].1 - t[0].1;
    let mass = h * (f.iter().sum::<f64>() - 0.5 * (f[0] + f[f.len() - 1]));
    assert!((mass - 1.0).abs() < 1e-3, "{mass}");
    let other = table("0.5");
    assert!(t.iter().zip(&other).any(|(a, b)| (a.2 - b.2).abs() > 1e-3));
}

#[test]
fn prior_phi_rejects_u_outside_unit_interval() {
    let dir = tempfile::tempdir().unwrap();
    let g = write(dir.path(), "p2.txt", "2\n1 1 2\n2 1 1\n");
    let out = bym2(&["prior-phi", s(&g), "--u", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
}

fn lattice_graph(dir: &Path) -> PathBuf {
    let g = bym2::Graph::lattice(4, 4).unwrap();
    write(dir, "lattice.txt", &g.serialize())
}

#[test]
fn fit_on_expected_counts_has_zero_intercept() {
    let dir = tempfile::tempdir().unwrap();
    let g = lattice_graph(dir.path());
    let mut data = String::from("y E SMR\n");
    for i in 0..16 {
        let e = 20.0 + i as f64;
        data.push_str(&format!("{e} {e} 1\n"));
    }
    let d = write(dir.path(), "data.txt", &data);
    for model in ["bym2", "iid"] {
        let out_json = dir.path().join(format!("{model}.json"));
        let table = dir.path().join(format!("{model}.csv"));
        let out = bym2(&[
            "fit", s(&g), s(&d), "--model", model, "--dz", "0.75", "--diff-logdens", "6", "--out", s(&out_json), "--table",
            s(&table),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let res: Value = serde_json::from_str(&fs::read_to_string(&out_json).unwrap()).unwrap();
        assert_valid("fit_result.schema.json", &res);
        assert!(res["fixed_effects"][0]["mean"].as_f64().unwrap().abs() < 0.02);
        assert!(res["diagnostics"]["dic"].is_number());
        assert!(res["diagnostics"]["log_score"].is_number());
        let header = fs::read_to_string(&table).unwrap();
        assert!(header.starts_with("parameter,mean,sd,q025,median,q975,mode"));
    }
}

#[test]
fn fit_with_mismatched_rows_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let g = lattice_graph(dir.path());
    let d = write(dir.path(), "data.txt", "y E\n1 1\n2 2\n");
    assert_eq!(bym2(&["fit", s(&g), s(&d)]).status.code(), Some(2));
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = bym2(&["simulate", "--lattice", "5x5", "--risk", "structured", "--seed", "11", "--replicates", "2", "--out-dir", s(&out_dir)]);
        assert!(out.status.success());
        out_dir
    };
    let (a, b) = (run("a"), run("b"));
    let manifest: Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_valid("simulate_manifest.schema.json", &manifest);
    for f in ["structured_E60_r000.txt", "structured_E60_r001.txt"] {
        assert_eq!(fs::read_to_string(a.join(f)).unwrap(), fs::read_to_string(b.join(f)).unwrap());
    }
    assert_ne!(fs::read_to_string(a.join("structured_E60_r000.txt")).unwrap(), fs::read_to_string(a.join("structured_E60_r001.txt")).unwrap());
}

#[test]
fn study_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let config = serde_json::json!({
        "scenarios": [
            {"risk": "constant", "sigma": 0.0, "expected": 60.0},
            {"risk": "iid", "sigma": 0.5, "expected": 15.0}
        ],
        "models": [
            {"label": "iid", "spec": {"kind": "iid", "tau_prior": {"kind": "gamma", "shape": 1.0, "rate": 0.01}}},
            {"label": "bym2_pc", "spec": {"kind": "bym2", "tau_prior": {"kind": "pc", "u": 1.0, "alpha": 0.01}, "phi_prior": {"kind": "pc", "u": 0.5, "alpha": 0.6666666666666666}}}
        ],
        "replicates": 2,
        "lattice": [4, 4]
    });
    assert_valid("study_config.schema.json", &config);
    let cfg = write(dir.path(), "study.json", &config.to_string());
    let summary = dir.path().join("summary.csv");
    let records = dir.path().join("records.jsonl");
    let run = || {
        let out = bym2(&["study", "--config", s(&cfg), "--summary", s(&summary), "--records", s(&records)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        (fs::read_to_string(&summary).unwrap(), fs::read_to_string(&records).unwrap())
    };
    let (csv, jsonl) = run();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(2) == Some("2")));
    assert_eq!(jsonl.lines().count(), 2 * 2 * 2);
    for l in jsonl.lines() {
        assert_valid("replicate_record.schema.json", &serde_json::from_str(l).unwrap());
    }
    assert_eq!(run(), (csv, jsonl));
}
