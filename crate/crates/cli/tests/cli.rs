use std::f64::consts::{FRAC_PI_2, LN_2, PI};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::{json, Value};

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

impl Run {
    fn report(&self) -> Value {
        serde_json::from_str(&self.stdout)
            .unwrap_or_else(|e| panic!("bad JSON ({e}): {}", self.stdout))
    }
}

fn qtmin(cmd: &str, config: &Value, dir: &Path) -> Run {
    let cfg = dir.join(format!("{cmd}.config.json"));
    fs::write(&cfg, serde_json::to_vec_pretty(config).unwrap()).unwrap();
    run_file(cmd, &cfg, None)
}

fn run_file(cmd: &str, cfg: &Path, out: Option<&Path>) -> Run {
    let mut c = Command::new(env!("CARGO_BIN_EXE_qtmin"));
    c.arg(cmd).arg("--config").arg(cfg);
    if let Some(o) = out {
        c.arg("--out").arg(o);
    }
    let o = c.output().unwrap();
    Run {
        code: o.status.code().unwrap(),
        stdout: String::from_utf8(o.stdout).unwrap(),
        stderr: String::from_utf8(o.stderr).unwrap(),
    }
}

fn docs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs")
}

fn schema(name: &str) -> jsonschema::JSONSchema {
    let v: Value = serde_json::from_str(&fs::read_to_string(docs().join(name)).unwrap()).unwrap();
    jsonschema::JSONSchema::compile(&v).unwrap()
}

fn assert_valid(schema: &jsonschema::JSONSchema, v: &Value) {
    if let Err(errs) = schema.validate(v) {
        let msgs: Vec<String> = errs
            .map(|e| format!("{e} at {}", e.instance_path))
            .collect();
        panic!("schema violations: {msgs:?}\n{v:#}");
    }
}

/// Checks the config against the config schema, runs the command, and checks
/// the report against the output schema.
fn checked(cmd: &str, config: Value, dir: &Path) -> Run {
    assert_valid(&schema("config.schema.json"), &config);
    let mut config = config;
    config["output"] = json!({ "dir": "out" });
    let r = qtmin(cmd, &config, dir);
    if r.code == 0 || r.code == 2 {
        assert_valid(&schema("output.schema.json"), &r.report());
        let saved: Value =
            serde_json::from_slice(&fs::read(dir.join("out/report.json")).unwrap()).unwrap();
        assert_eq!(saved, r.report());
    }
    r
}

fn worked_pair() -> Value {
    json!({ "start": { "bloch": [0.3, 0.0, 0.4] }, "target": { "bloch": [0.0, 0.6, 0.0] } })
}

#[test]
#[allow(clippy::approx_constant)]
fn bounds_from_the_center() {
    let dir = tempfile::tempdir().unwrap();
    let r = checked(
        "bounds",
        json!({
            "params": { "omega": 20.0, "kappa": 1.0, "gamma": 1.0 },
            "problem": { "start": { "radius": 0.0 }, "target": { "radius": 0.5 } }
        }),
        dir.path(),
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    let b = r.report();
    assert!((b["lower"].as_f64().unwrap() - 0.693147).abs() < 1e-6);
    assert!((b["upper"].as_f64().unwrap() - 3.568509).abs() < 1e-6);
    assert!((b["lower"].as_f64().unwrap() - LN_2).abs() < 1e-12);
}

#[test]
fn bounds_equal_radii_and_state_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let r = checked(
        "bounds",
        json!({ "problem": {
            "start": { "density": { "rho00": 0.8, "rho11": 0.2, "rho01_re": 0.0, "rho01_im": 0.0 } },
            "target": { "bloch": [0.0, 0.6, 0.0] }
        }}),
        dir.path(),
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!((r.report()["mu0"].as_f64().unwrap() - 0.6).abs() < 1e-15);
    assert_eq!(r.report()["lower"], json!(0.0));

    let r = checked(
        "bounds",
        json!({ "problem": { "start": { "purity": 0.5 }, "target": { "purity": 0.625 } } }),
        dir.path(),
    );
    assert!((r.report()["lower"].as_f64().unwrap() - LN_2).abs() < 1e-12);
}

#[test]
fn pure_target_is_unreachable() {
    let dir = tempfile::tempdir().unwrap();
    let r = checked(
        "bounds",
        json!({ "problem": { "start": { "radius": 0.2 }, "target": { "radius": 1.0 } } }),
        dir.path(),
    );
    assert_eq!(r.code, 3);
    assert!(r.stdout.is_empty());
    assert!(
        r.stderr.contains("unreachable in finite time"),
        "{}",
        r.stderr
    );
}

#[test]
fn target_beyond_cap_is_partial() {
    let dir = tempfile::tempdir().unwrap();
    let r = checked(
        "bounds",
        json!({ "problem": { "start": { "radius": 0.9 }, "target": { "radius": 0.99 } } }),
        dir.path(),
    );
    assert_eq!(r.code, 2);
    let b = r.report();
    assert!((b["lower"].as_f64().unwrap() - (0.1f64 / 0.01).ln()).abs() < 1e-12);
    assert_eq!(b["upper"], Value::Null);
    assert_eq!(b["feasible_upper"], json!(false));

    let r = checked(
        "protocol",
        json!({ "problem": { "start": { "bloch": [0.9, 0.0, 0.0] }, "target": { "bloch": [0.0, 0.0, 0.99] } } }),
        dir.path(),
    );
    assert_eq!(r.code, 2);
    assert!(r.report().get("plan").is_none());
}

#[test]
fn unknown_keys_and_bad_input_fail() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({ "problem": { "start": { "radius": 0.0 }, "target": { "radius": 0.5 } }, "gama": 1.0 });
    assert!(!schema("config.schema.json").is_valid(&cfg));
    let r = qtmin("bounds", &cfg, dir.path());
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("unknown field"), "{}", r.stderr);

    let r = qtmin(
        "bounds",
        &json!({ "params": { "omega": -1.0, "kappa": 1.0, "gamma": 1.0 } }),
        dir.path(),
    );
    assert_eq!(r.code, 1);
    let r = qtmin("bounds", &json!({}), dir.path());
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("problem.start"), "{}", r.stderr);
    let r = run_file("bounds", &dir.path().join("missing.json"), None);
    assert_eq!(r.code, 1);
}

#[test]
fn protocol_worked_pair_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let r = checked("protocol", json!({ "problem": worked_pair() }), dir.path());
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = r.report();
    assert!((rep["plan"]["total_time"].as_f64().unwrap() - 0.271151418272998).abs() < 1e-12);
    assert!(rep["validation"]["endpoint_error"].as_f64().unwrap() <= 1e-6);
    assert_eq!(rep["validation"]["within_bounds"], json!(true));

    // Replaying the saved u schedule in the Bloch equations lands on the target.
    let out = dir.path().join("out");
    for f in ["theta_schedule.json", "v_schedule.json", "u_schedule.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let sim = checked(
        "simulate",
        json!({
            "problem": { "start": { "bloch": [0.3, 0.0, 0.4] } },
            "simulate": { "schedule": "out/u_schedule.json" }
        }),
        dir.path(),
    );
    assert_eq!(sim.code, 0, "{}", sim.stderr);
    let fin: Vec<f64> = serde_json::from_value(sim.report()["final_state"].clone()).unwrap();
    let err = (fin[0].powi(2) + (fin[1] - 0.6).powi(2) + fin[2].powi(2)).sqrt();
    assert!(err < 1e-6, "{fin:?}");
}

#[test]
fn protocol_random_pairs_are_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({ "seed": 7, "protocol": { "random_pairs": 6, "samples_per_phase": 400 } });
    let a = checked("protocol", cfg.clone(), dir.path());
    assert_eq!(a.code, 0, "{}", a.stderr);
    assert_eq!(a.report()["passed"], json!(6));
    assert!(a.report()["max_endpoint_error"].as_f64().unwrap() <= 1e-6);
    let b = checked("protocol", cfg, dir.path());
    assert_eq!(a.stdout, b.stdout);
    let c = checked(
        "protocol",
        json!({ "seed": 8, "protocol": { "random_pairs": 6, "samples_per_phase": 400 } }),
        dir.path(),
    );
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn simulate_free_decay_and_zero_horizon() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("free.json"),
        r#"{"signal": "u", "horizon": 1.5}"#,
    )
    .unwrap();
    let r = checked(
        "simulate",
        json!({
            "tolerances": { "rtol": 1e-12, "atol": 1e-14 },
            "problem": { "start": { "bloch": [0.3, 0.0, 0.4] } },
            "simulate": { "schedule": "free.json", "dt": 0.05 }
        }),
        dir.path(),
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    let fin: Vec<f64> = serde_json::from_value(r.report()["final_state"].clone()).unwrap();
    let t = 1.5;
    let transverse = 0.3 * (-t / 2.0f64).exp();
    assert!((fin[0].hypot(fin[1]) - transverse).abs() < 1e-9);
    assert!((fin[0] - transverse * (20.0 * t).cos()).abs() < 1e-9);
    assert!((fin[2] - (1.0 - 0.6 * (-t).exp())).abs() < 1e-9);
    let rows = fs::read_to_string(dir.path().join("out/trajectory.csv")).unwrap();
    assert!(rows.starts_with("t,r_x,r_y,r_z\n"));
    assert_eq!(rows.lines().count(), 1 + 31);

    fs::write(
        dir.path().join("zero.json"),
        r#"{"signal": "u", "horizon": 0.0}"#,
    )
    .unwrap();
    let r = checked(
        "simulate",
        json!({
            "problem": { "start": { "bloch": [0.3, 0.0, 0.4] } },
            "simulate": { "schedule": "zero.json" }
        }),
        dir.path(),
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(r.report()["final_state"], json!([0.3, 0.0, 0.4]));
    assert_eq!(r.report()["final_time"], json!(0.0));
}

#[test]
fn simulate_purity_motion() {
    let dir = tempfile::tempdir().unwrap();
    let t = ((1.0f64 - 0.2) / (1.0 - 0.5)).ln();
    let sched = json!({ "signal": "theta", "horizon": t, "smooth": [{ "t0": 0.0, "t1": t, "kind": "constant", "data": FRAC_PI_2 }] });
    fs::write(dir.path().join("hold.json"), sched.to_string()).unwrap();
    let r = checked(
        "simulate",
        json!({
            "problem": { "start": { "bloch": [0.0, 0.0, 0.2] } },
            "simulate": { "schedule": "hold.json", "system": "auxiliary" }
        }),
        dir.path(),
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(r.report()["coords"], json!("cylindrical"));
    let fin: Vec<f64> = serde_json::from_value(r.report()["final_state"].clone()).unwrap();
    assert!(fin[0].abs() < 1e-9);
    assert!((fin[1] - 0.5).abs() < 1e-6);
    let head = fs::read_to_string(dir.path().join("out/trajectory.csv")).unwrap();
    assert!(head.starts_with("t,r_x,R,theta\n"), "{}", &head[..40]);
}

#[test]
fn extremal_worked_pair() {
    let dir = tempfile::tempdir().unwrap();
    let r = checked("extremal", json!({ "problem": worked_pair() }), dir.path());
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = r.report();
    let t = rep["shot"]["T_star"].as_f64().unwrap();
    assert!(t >= rep["bounds"]["lower"].as_f64().unwrap() - 1e-9);
    assert!(t <= 0.271151418272998 + 1e-9);
    assert!(rep["shot"]["residual"].as_f64().unwrap() <= 1e-9);
    let csv = fs::read_to_string(dir.path().join("out/extremal.csv")).unwrap();
    assert!(csv.starts_with("t,r_x,R,p,q,theta_M\n"));
}

#[test]
fn extremal_pure_target_is_unreachable() {
    let dir = tempfile::tempdir().unwrap();
    let r = checked(
        "extremal",
        json!({ "problem": { "start": { "bloch": [0.3, 0.0, 0.4] }, "target": { "bloch": [0.0, 1.0, 0.0] } } }),
        dir.path(),
    );
    assert_eq!(r.code, 3, "{}", r.stderr);
}

#[test]
fn oracle_single_rung_and_study() {
    let dir = tempfile::tempdir().unwrap();
    let problem = json!({ "start": { "radius": 0.0 }, "target": { "radius": 0.5 } });
    let r = checked(
        "oracle",
        json!({ "problem": problem, "oracle": { "ladder": [{ "n": 100 }] } }),
        dir.path(),
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    let res = &r.report()["result"];
    let (est, slack) = (
        res["estimate"].as_f64().unwrap(),
        res["slack"].as_f64().unwrap(),
    );
    assert!(est >= LN_2 - 1e-9 && est <= LN_2 + slack, "{est} {slack}");
    let csv = fs::read_to_string(dir.path().join("out/oracle.csv")).unwrap();
    assert!(csv.starts_with("resolution,estimate,slack\n100,"));

    let r = checked(
        "oracle",
        json!({ "problem": problem, "oracle": { "ladder": [{ "n": 50 }, { "n": 100 }, { "n": 200 }] } }),
        dir.path(),
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(r.report()["study"]["antitone"], json!(true));
    let csv = fs::read_to_string(dir.path().join("out/oracle.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    let r = checked(
        "oracle",
        json!({ "problem": problem, "oracle": { "ladder": [{ "n": 50 }, { "n": 100 }] } }),
        dir.path(),
    );
    assert_eq!(r.code, 1);
}

#[test]
fn figure1_grid_file() {
    let dir = tempfile::tempdir().unwrap();
    let r = checked("figure1", json!({ "figure1": { "n": 5 } }), dir.path());
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = r.report();
    assert!((rep["mu_max"].as_f64().unwrap() - (1.0 - PI / 40.0)).abs() < 1e-12);
    let csv = fs::read_to_string(dir.path().join("out/figure1.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "P0,P1,lower,upper,upper_neglect_pi_over_omega");
    assert_eq!(lines.len(), 26);
    assert!(lines[1].starts_with("0.5,0.5,0,"));
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().into_string().unwrap(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn outputs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (
            "oracle",
            json!({ "problem": worked_pair(), "oracle": { "ladder": [{ "n": 40 }, { "n": 60 }, { "n": 80 }] } }),
        ),
        ("figure1", json!({ "figure1": { "n": 9 } })),
        (
            "protocol",
            json!({ "seed": 3, "protocol": { "random_pairs": 4, "samples_per_phase": 200 } }),
        ),
        ("extremal", json!({ "problem": worked_pair() })),
    ];
    for (cmd, cfg) in cases {
        let mut outputs = Vec::new();
        for exec in ["parallel", "parallel", "sequential"] {
            let mut c = cfg.clone();
            c["execution"] = json!(exec);
            let cfg_path = dir.path().join(format!("{cmd}.json"));
            fs::write(&cfg_path, c.to_string()).unwrap();
            let out = dir.path().join(format!("{cmd}-{}", outputs.len()));
            let r = run_file(cmd, &cfg_path, Some(&out));
            assert_eq!(r.code, 0, "{cmd}: {}", r.stderr);
            outputs.push((r.stdout, snapshot(&out)));
        }
        assert!(
            outputs.windows(2).all(|w| w[0] == w[1]),
            "{cmd} output differs between runs"
        );
    }
}

#[test]
fn shipped_example_config() {
    let path = docs().join("example.json");
    let v: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_valid(&schema("config.schema.json"), &v);
    let dir = tempfile::tempdir().unwrap();
    let r = run_file("bounds", &path, Some(dir.path()));
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_valid(&schema("output.schema.json"), &r.report());
}
