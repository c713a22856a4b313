use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use engage_core::data::DesignTag;
use engage_core::scm::{self, presets};
use engage_core::verifier::{builtin_scenario, Expectation};
use engage_core::{CompositeDataset, SamplingDesign, TrueEstimands};
use serde_json::Value;
use tempfile::TempDir;

const D6: &str = "id,x1,s,a,y\n1,0,1,1,1\n2,0,1,0,0\n3,1,1,1,1\n4,1,1,0,1\n5,0,0,,\n6,1,0,,\n";
const OM_ALL: &str = r#"{"estimand":"usual_care_all","method":"outcome_model"}"#;

fn engage(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_engage")).args(args).current_dir(cwd).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(o: &Output) -> Value {
    assert_eq!(code(o), 0, "stderr: {}", stderr(o));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn workdir() -> TempDir {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("d6.csv"), D6).unwrap();
    fs::write(dir.path().join("om_all.json"), OM_ALL).unwrap();
    dir
}

#[test]
fn simulate_round_trips_the_composite_dataset() {
    let dir = workdir();
    let o = engage(&["simulate", "--spec", "o1", "--n", "1000", "--seed", "7", "--out", "d"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = dir.path().join("d");
    for f in ["composite.csv", "potential_outcomes.csv", "truth.json", "conditions.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }

    let spec = presets::o1();
    let pod = scm::generate(&spec, 1000, 7).unwrap();
    let expected = scm::to_composite(&pod, &SamplingDesign::Nested, false, 7).unwrap();
    let parsed =
        CompositeDataset::read_csv(fs::File::open(out.join("composite.csv")).unwrap(), DesignTag::Nested)
            .unwrap();
    assert_eq!(parsed, expected);

    let truth: TrueEstimands =
        serde_json::from_str(&fs::read_to_string(out.join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth, scm::true_estimands(&spec).unwrap());
}

#[test]
fn simulate_is_reproducible_from_seed() {
    let dir = workdir();
    for out in ["a", "b"] {
        let o = engage(
            &["simulate", "--spec", "o3", "--n", "500", "--seed", "3", "--out", out, "--design", "non-nested",
              "--f-target", "0.5"],
            dir.path(),
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["composite.csv", "potential_outcomes.csv"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap());
    }
}

#[test]
fn simulate_accepts_spec_files() {
    let dir = workdir();
    fs::write(dir.path().join("o2.json"), serde_json::to_string(&presets::o2()).unwrap()).unwrap();
    let o = engage(&["simulate", "--spec", "o2.json", "--n", "50", "--seed", "1", "--out", "d"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = engage(&["simulate", "--spec", "nope", "--n", "50", "--seed", "1", "--out", "d"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn estimate_d6() {
    let dir = workdir();
    let r = json(&engage(&["estimate", "--data", "d6.csv", "--config", "om_all.json"], dir.path()));
    assert_eq!(r["point"].as_f64().unwrap(), 0.5);
    assert_eq!(r["estimand"], "usual_care_all");
    assert_eq!(r["rows"]["total"], 6);

    fs::write(dir.path().join("ipw.json"), r#"{"estimand":"usual_care_all","method":"ipw"}"#).unwrap();
    let r = json(&engage(&["estimate", "--data", "d6.csv", "--config", "ipw.json"], dir.path()));
    assert!((r["point"].as_f64().unwrap() - 0.5).abs() < 1e-12);

    let o = engage(&["estimate", "--data", "d6.csv", "--config", "om_all.json", "--out", "r/report.json"], dir.path());
    assert_eq!(code(&o), 0);
    let r: Value = serde_json::from_slice(&fs::read(dir.path().join("r/report.json")).unwrap()).unwrap();
    assert_eq!(r["point"].as_f64().unwrap(), 0.5);
}

#[test]
fn outcome_on_non_participant_row_is_rejected_with_its_line() {
    let dir = workdir();
    fs::write(dir.path().join("bad.csv"), "id,x1,s,a,y\n1,0,1,1,1\n5,0,0,1,1\n").unwrap();
    let o = engage(&["estimate", "--data", "bad.csv", "--config", "om_all.json"], dir.path());
    assert_eq!(code(&o), 2);
    let msg = stderr(&o);
    assert!(msg.contains("line 3") && msg.contains("non-participant"), "{msg}");
}

#[test]
fn control_flagged_rows_only_for_relative_scale() {
    let dir = workdir();
    let mut csv = String::from("id,x1,s,a,y,control\n");
    let mut id = 0;
    for x in 0..2 {
        for k in 0..5 {
            for (s, a, y, c) in [(1, "1", u8::from(k < 3), 0), (1, "0", u8::from(k < 1), 0), (0, "", u8::from(k < 2), 1)] {
                id += 1;
                csv.push_str(&format!("{id},{x},{s},{a},{y},{c}\n"));
            }
        }
    }
    fs::write(dir.path().join("ctl.csv"), csv).unwrap();
    fs::write(dir.path().join("rel.json"), r#"{"estimand":"usual_care_relative"}"#).unwrap();
    // q0 = 0.4, ratio 3 in both cells: 0.4 * (3 - 1).
    let r = json(&engage(&["estimate", "--data", "ctl.csv", "--config", "rel.json"], dir.path()));
    assert!((r["point"].as_f64().unwrap() - 0.8).abs() < 1e-12, "{r}");

    let o = engage(&["estimate", "--data", "ctl.csv", "--config", "om_all.json"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("control-flagged"));
}

#[test]
fn bootstrap_needs_a_seed_and_is_reproducible() {
    let dir = workdir();
    let o = engage(&["simulate", "--spec", "o1", "--n", "2000", "--seed", "5", "--out", "d"], dir.path());
    assert_eq!(code(&o), 0);
    fs::write(
        dir.path().join("boot.json"),
        r#"{"estimand":"usual_care_all","method":"ipw","bootstrap":{"replicates":120,"level":0.9}}"#,
    )
    .unwrap();
    let args = ["estimate", "--data", "d/composite.csv", "--config", "boot.json"];
    assert_eq!(code(&engage(&args, dir.path())), 1);

    let seeded: Vec<&str> = args.iter().copied().chain(["--seed", "9"]).collect();
    let a = json(&engage(&seeded, dir.path()));
    let b = json(&engage(&seeded, dir.path()));
    assert_eq!(a, b);
    let ci = &a["ci"];
    assert!(ci["lower"].as_f64().unwrap() <= a["point"].as_f64().unwrap());
    assert!(ci["upper"].as_f64().unwrap() >= a["point"].as_f64().unwrap());
    assert_eq!(ci["replicates"], 120);
}

#[test]
fn unsupported_estimator_combination_is_a_validation_error() {
    let dir = workdir();
    fs::write(dir.path().join("c.json"), r#"{"estimand":"trial_context","method":"ipw"}"#).unwrap();
    assert_eq!(code(&engage(&["estimate", "--data", "d6.csv", "--config", "c.json"], dir.path())), 2);
    fs::write(dir.path().join("c.json"), r#"{"estimand":"usual_care_all","bogus":1}"#).unwrap();
    assert_eq!(code(&engage(&["estimate", "--data", "d6.csv", "--config", "c.json"], dir.path())), 2);
    assert_eq!(code(&engage(&["estimate", "--data", "missing.csv", "--config", "om_all.json"], dir.path())), 2);
}

#[test]
fn verify_s2_passes_as_biased() {
    let dir = workdir();
    let o = engage(&["verify", "--scenario", "S2", "--seed", "11", "--out", "v"], dir.path());
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(code(&o), 0, "{text}\n{}", stderr(&o));
    let line = text.lines().find(|l| l.starts_with("S2")).unwrap();
    assert!(line.contains("biased-by +0.2000") && line.ends_with("pass"), "{line}");

    let report: Value = serde_json::from_slice(&fs::read(dir.path().join("v/s2.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(report["seed"], 11);
    let csv = fs::read_to_string(dir.path().join("v/s2_replicates.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("replicate,estimate,ci_lower,ci_upper,covered"));
    assert_eq!(csv.lines().count(), 501);
}

#[test]
fn verify_failure_exits_3() {
    let dir = workdir();
    let mut sc = builtin_scenario("S1").unwrap().with_size(4000, 40);
    sc.expectation = Expectation::BiasedBy { offset: 0.25 };
    fs::write(dir.path().join("sc.json"), serde_json::to_string(&sc).unwrap()).unwrap();
    let o = engage(&["verify", "--file", "sc.json"], dir.path());
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn verify_usage_errors() {
    let dir = workdir();
    assert_eq!(code(&engage(&["verify", "--scenario", "S9"], dir.path())), 1);
    assert_eq!(code(&engage(&["verify"], dir.path())), 1);
    fs::write(dir.path().join("sc.json"), "{").unwrap();
    assert_eq!(code(&engage(&["verify", "--file", "sc.json"], dir.path())), 2);
}

#[test]
fn graph_queries() {
    let dir = workdir();
    let g = r#"{"nodes":[{"name":"U","latent":true},{"name":"X"},{"name":"A"},{"name":"Y"}],
               "edges":[["U","A"],["U","Y"],["X","A"],["A","Y"]]}"#;
    fs::write(dir.path().join("g.json"), g).unwrap();
    let q = |query: &str, extra: &[&str]| {
        let mut args = vec!["graph", "--file", "g.json", "--query", query];
        args.extend_from_slice(extra);
        engage(&args, dir.path())
    };
    assert_eq!(json(&q("X,U|", &[]))["d_separated"], true);
    assert_eq!(json(&q("X,U|A", &[]))["d_separated"], false);
    assert_eq!(json(&q("X,Y|A;U", &["--allow-latent"]))["d_separated"], true);
    assert_eq!(code(&q("X,Y|A;U", &[])), 2);
    assert_eq!(code(&q("X,Q|", &[])), 2);
    assert_eq!(code(&q("X U", &[])), 1);

    fs::write(dir.path().join("cyc.json"), r#"{"nodes":[{"name":"A"},{"name":"B"}],"edges":[["A","B"],["B","A"]]}"#)
        .unwrap();
    assert_eq!(code(&engage(&["graph", "--file", "cyc.json"], dir.path())), 2);
}

#[test]
fn canonical_claims_hold() {
    let dir = workdir();
    let r = json(&engage(&["graph", "--claims"], dir.path()));
    let claims = r["claims"].as_array().unwrap();
    assert_eq!(claims.len(), 7);
    assert!(claims.iter().all(|c| c["matches"] == true));
}

#[test]
fn diagnose_writes_json_and_plot_csv() {
    let dir = workdir();
    let o = engage(&["diagnose", "--data", "d6.csv", "--csv", "m.csv", "--out", "diag.json"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("m.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("stratum,metric,value,se"));
    let r: Value = serde_json::from_slice(&fs::read(dir.path().join("diag.json")).unwrap()).unwrap();
    assert_eq!(r["positivity"]["total"], 6);
    assert!(r.get("interaction").is_none());

    let r = json(&engage(&["diagnose", "--spec", "o2", "--n", "4000", "--seed", "2"], dir.path()));
    assert_eq!(r["conditions"]["a7_holds"], false);
    assert_eq!(r["dual_scale"]["class"]["class"], "neither");
    let r = json(&engage(&["diagnose", "--spec", "multiplicative", "--n", "4000", "--seed", "2"], dir.path()));
    assert_eq!(r["dual_scale"]["class"]["class"], "multiplicative-only");

    assert_eq!(code(&engage(&["diagnose"], dir.path())), 1);
    assert_eq!(code(&engage(&["diagnose", "--spec", "o1"], dir.path())), 1);
}

#[test]
fn usage_and_help_exit_codes() {
    let dir = workdir();
    assert_eq!(code(&engage(&["--help"], dir.path())), 0);
    assert_eq!(code(&engage(&["--version"], dir.path())), 0);
    assert_eq!(code(&engage(&["estimate", "--help"], dir.path())), 0);
    assert_eq!(code(&engage(&["frobnicate"], dir.path())), 1);
    assert_eq!(code(&engage(&["simulate", "--spec", "o1", "--n", "10", "--out", "d"], dir.path())), 1);
    assert_eq!(code(&engage(&["estimate", "--data", "d6.csv", "--config", "om_all.json", "--bogus"], dir.path())), 1);
}
