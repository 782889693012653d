use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use regulus_core::family::{gen_clustered_family, gen_sl2_example, ParamBox, StripFamily};

fn regulus(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regulus"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn committed(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn small_sl2() -> StripFamily {
    gen_sl2_example(1.0 / 16.0, &ParamBox::new([1.0, 2.0], [-1.0, 0.0], [-1.0, 0.0]), 1).unwrap()
}

#[test]
fn committed_corpus_passes() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let out = regulus(&["--quiet", "regress", "--corpus", path_str(&committed("corpus")), "--report", path_str(&report)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(json["passed"], true);
}

#[test]
fn injected_violation_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let family = small_sl2();
    family.write(dir.path().join("sl2_small.json")).unwrap();
    let out = regulus(&["--quiet", "regress", "--corpus", path_str(dir.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let cluster = gen_clustered_family(family.delta, family.rho, 0.1, 1200, 3).unwrap();
    let cores: Vec<_> = family.cores().chain(cluster.cores()).copied().collect();
    StripFamily::new(family.delta, family.rho, cores)
        .unwrap()
        .write(dir.path().join("sl2_small.json"))
        .unwrap();
    let out = regulus(&["--quiet", "regress", "--corpus", path_str(dir.path())]);
    assert_eq!(code(&out), 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("conditions.ball_condition_count"), "{stderr}");
}

#[test]
fn bad_corpus_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&regulus(&["regress", "--corpus", path_str(dir.path())])), 2);
    assert_eq!(code(&regulus(&["regress", "--corpus", path_str(&dir.path().join("missing"))])), 2);
    std::fs::write(dir.path().join("sl2_bad.json"), "{").unwrap();
    assert_eq!(code(&regulus(&["regress", "--corpus", path_str(dir.path())])), 2);
}

#[test]
fn scaling_csv_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    std::fs::write(
        &config,
        r#"{"experiment": "single", "kind": "single", "deltas": [0.0625, 0.03125, 0.015625],
            "rho": "auto", "box": null, "lambda": null, "method": "mc", "res_factor": 0.5,
            "samples": 20000, "seeds": [1, 2]}"#,
    )
    .unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for p in [&a, &b] {
        let out = regulus(&["--quiet", "scaling", "--config", path_str(&config), "--out", path_str(p)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let text = std::fs::read(&a).unwrap();
    assert_eq!(text, std::fs::read(&b).unwrap());
    let text = String::from_utf8(text).unwrap();
    assert!(text.starts_with("name,delta,rho,n_strips,lambda,method,value,stderr\n"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn malformed_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    std::fs::write(&config, r#"{"experiment": "x", "kind": "sl2", "deltas": [0.0001], "method": "grid"}"#).unwrap();
    assert_eq!(code(&regulus(&["scaling", "--config", path_str(&config)])), 2);
    assert_eq!(code(&regulus(&["scaling", "--config", path_str(&dir.path().join("none.json"))])), 2);
    assert_eq!(code(&regulus(&["measure"])), 2);
}

#[test]
fn gen_check_and_measure() {
    let dir = tempfile::tempdir().unwrap();
    let fam = dir.path().join("f.json");
    let out = regulus(&[
        "--quiet", "--threads", "1", "gen", "--kind", "sl2", "--delta", "0.0625", "--box", "1,2,-1,0,-1,0", "--out",
        path_str(&fam),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(StripFamily::read(&fam).unwrap().len(), 64);

    let report = dir.path().join("ball.csv");
    let out = regulus(&["--quiet", "check-ball", "--family", path_str(&fam), "--report", path_str(&report)]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.starts_with("r,form,observed,bound,ratio,pass\n"));

    let out = regulus(&["--quiet", "measure", "--family", path_str(&fam), "--method", "both", "--samples", "20000"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().nth(1).unwrap().starts_with("f,0.0625,0.25,64,,grid,"));
}

#[test]
fn clustered_family_fails_the_check() {
    let dir = tempfile::tempdir().unwrap();
    let fam = dir.path().join("c.json");
    let out = regulus(&[
        "--quiet", "gen", "--kind", "clustered", "--delta", "0.0625", "--rho", "0.25", "--r", "0.25", "--out",
        path_str(&fam),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(code(&regulus(&["--quiet", "check-ball", "--family", path_str(&fam)])), 1);
}

#[test]
fn random_generation_exhaustion_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = regulus(&[
        "--quiet", "gen", "--kind", "random", "--delta", "0.015625", "--n", "5120", "--out",
        path_str(&dir.path().join("r.json")),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn shading_and_kakeya() {
    let dir = tempfile::tempdir().unwrap();
    let fam = dir.path().join("f.json");
    small_sl2().write(&fam).unwrap();
    let sh = dir.path().join("s.json");
    let out = regulus(&[
        "--quiet", "shading", "--family", path_str(&fam), "--mode", "random", "--lambda", "0.5", "--regularize",
        "--out", path_str(&sh),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&sh).unwrap()).unwrap();
    assert!(json["selected"].as_object().is_some_and(|m| !m.is_empty()));
    let out = regulus(&["kakeya", "--family", path_str(&fam), "--shading", path_str(&sh)]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("lambda,lhs,rhs_basis,ratio\n"));
    let out = regulus(&["--quiet", "shading", "--family", path_str(&fam), "--mode", "region", "--out", path_str(&sh)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn verification_commands() {
    let out = regulus(&["duality-verify"]);
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    assert_eq!(text.lines().count(), 8);
    assert!(text.lines().any(|l| l.starts_with("reference_xi_prime") && l.ends_with("FAIL")));
    assert!(text.lines().filter(|l| l.ends_with("PASS")).count() == 7);
    assert_eq!(code(&out), 1);

    let dir = tempfile::tempdir().unwrap();
    let fam = dir.path().join("f.json");
    small_sl2().write(&fam).unwrap();
    let report = dir.path().join("slices.csv");
    let out = regulus(&["--quiet", "slice-verify", "--family", path_str(&fam), "--t-samples", "3", "--report", path_str(&report)]);
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::read_to_string(&report).unwrap().lines().count(), 4);

    let nik = dir.path().join("nik.csv");
    let out = regulus(&["--quiet", "nikodym", "--delta", "0.25", "--res", "0.25", "--f", "tube", "--out", path_str(&nik)]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(&nik).unwrap();
    assert!(text.starts_with("delta,p,f_kind,lp_ratio,net_step\n0.25,6.0,tube,"), "{text}");
    assert_eq!(code(&regulus(&["nikodym", "--delta", "0.25", "--f", "cone"])), 2);
}
