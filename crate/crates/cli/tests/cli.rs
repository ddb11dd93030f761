use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn pnnid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pnnid"))
        .args(args)
        .env_remove("PNNID_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout))
    })
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Runs a command that writes its main document to `name` in `dir`.
fn to_file(dir: &TempDir, name: &str, args: &[&str]) -> (PathBuf, Output) {
    let path = dir.path().join(name);
    let mut full = args.to_vec();
    full.extend(["-o", path_str(&path)]);
    let out = pnnid(&full);
    (path, out)
}

fn numbers(v: &Value) -> Vec<f64> {
    match v {
        Value::Number(n) => vec![n.as_f64().unwrap()],
        Value::Array(items) => items.iter().flat_map(numbers).collect(),
        _ => Vec::new(),
    }
}

fn max_gap(a: &Value, b: &Value) -> f64 {
    let (x, y) = (numbers(a), numbers(b));
    assert_eq!(x.len(), y.len());
    x.iter().zip(&y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

#[test]
fn architecture_verdicts_map_to_exit_codes() {
    let out = pnnid(&["certify-arch", "--widths", "3,2,2", "--degrees", "2"]);
    assert_eq!(code(&out), 0);
    let cert = stdout_json(&out);
    assert_eq!(cert["format"], "cert-v1");
    assert_eq!(cert["overall"], "UNIQUE_CERTIFIED");

    let out = pnnid(&["certify-arch", "--widths", "2,5,2,2", "--degrees", "2,2"]);
    assert_eq!(code(&out), 2);
    assert_eq!(stdout_json(&out)["overall"], "INCONCLUSIVE");

    // a single output needs an activation degree of at least 3
    let out = pnnid(&["certify-arch", "--widths", "3,2,1", "--degrees", "2"]);
    assert_eq!(code(&out), 3);
    assert!(!stdout_json(&out)["hypotheses_unmet"].as_array().unwrap().is_empty());
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(code(&pnnid(&["--bogus"])), 64);
    assert_eq!(code(&pnnid(&["certify-arch"])), 64);
    assert_eq!(code(&pnnid(&["certify-arch", "--widths", "3,2,2", "--degrees", "2,2"])), 64);
    assert_eq!(code(&pnnid(&["random", "--widths", "3,2,2", "--degrees", "2", "--companion", "x.json"])), 64);
    let help = pnnid(&["--help"]);
    assert_eq!(code(&help), 0);
    assert!(String::from_utf8_lossy(&help.stdout).contains("Exit codes"));
}

#[test]
fn malformed_and_missing_inputs_are_data_errors() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"widths\": [2, 2], \"degrees\": []").unwrap();
    assert_eq!(code(&pnnid(&["expand", path_str(&bad)])), 65);
    fs::write(&bad, "{\"widths\": [2, 2], \"degrees\": [], \"weights\": [[[1, 2]]]}").unwrap();
    assert_eq!(code(&pnnid(&["certify-weights", path_str(&bad)])), 65);
    let missing = dir.path().join("missing.json");
    assert_eq!(code(&pnnid(&["canonicalize", path_str(&missing)])), 65);
}

#[test]
fn random_draws_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let args = ["random", "--widths", "4,3,2", "--degrees", "2", "--seed", "7"];
    let (a, out_a) = to_file(&dir, "a.json", &args);
    let (b, out_b) = to_file(&dir, "b.json", &args);
    assert_eq!((code(&out_a), code(&out_b)), (0, 0));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let from_env = Command::new(env!("CARGO_BIN_EXE_pnnid"))
        .args(["random", "--widths", "4,3,2", "--degrees", "2"])
        .env("PNNID_SEED", "7")
        .output()
        .unwrap();
    assert_eq!(from_env.stdout, fs::read(&a).unwrap());

    let other = pnnid(&["random", "--widths", "4,3,2", "--degrees", "2", "--seed", "8"]);
    assert_ne!(other.stdout, fs::read(&a).unwrap());
}

#[test]
fn augmented_pair_shares_polynomial_and_is_not_unique() {
    let dir = TempDir::new().unwrap();
    let companion = dir.path().join("companion.json");
    let (net, out) = to_file(
        &dir,
        "net.json",
        &[
            "random", "--widths", "3,2,2", "--degrees", "2", "--seed", "3", "--augment", "1", "--companion",
            path_str(&companion),
        ],
    );
    assert_eq!(code(&out), 0);
    assert_eq!(read_json(&net)["widths"], serde_json::json!([3, 3, 2]));
    assert_ne!(read_json(&net)["weights"], read_json(&companion)["weights"]);

    let p = pnnid(&["expand", path_str(&net)]);
    let q = pnnid(&["expand", path_str(&companion)]);
    assert!(max_gap(&stdout_json(&p)["outputs"], &stdout_json(&q)["outputs"]) <= 1e-12);

    let cert = pnnid(&["certify-weights", path_str(&net)]);
    assert_eq!(code(&cert), 1);
    assert_eq!(stdout_json(&cert)["overall"], "NOT_UNIQUE");
}

#[test]
fn borderline_weights_are_inconclusive() {
    let dir = TempDir::new().unwrap();
    let net = dir.path().join("near.json");
    fs::write(
        &net,
        r#"{"widths": [3, 2, 2], "degrees": [2], "weights": [[[1, 0, 0], [1, 3e-9, 0]], [[1, 2], [3, -1]]]}"#,
    )
    .unwrap();
    let out = pnnid(&["certify-weights", path_str(&net)]);
    assert_eq!(code(&out), 2);
    let cert = stdout_json(&out);
    assert_eq!(cert["blocks"][0]["low_confidence"], true);
    assert!(cert["blocks"][0]["note"].as_str().unwrap().starts_with("LOW_CONFIDENCE"));
}

#[test]
fn homogenize_and_truncate_pipeline() {
    let dir = TempDir::new().unwrap();
    let args = ["random", "--widths", "2,3,2", "--degrees", "3", "--bias", "--seed", "5"];
    let (net, _) = to_file(&dir, "net.json", &args);
    let (poly, out) = to_file(&dir, "poly.json", &["expand", path_str(&net)]);
    assert_eq!(code(&out), 0);
    assert_eq!(read_json(&poly)["homogeneous"], false);

    let (lifted_poly, _) = to_file(&dir, "hpoly.json", &["homogenize", path_str(&poly)]);
    let (lifted_net, _) = to_file(&dir, "hnet.json", &["homogenize", path_str(&net)]);
    assert_eq!(read_json(&lifted_net)["widths"], serde_json::json!([3, 4, 2]));
    let expanded = stdout_json(&pnnid(&["expand", path_str(&lifted_net)]));
    assert!(max_gap(&expanded["outputs"], &read_json(&lifted_poly)["outputs"]) <= 1e-10);

    let back = stdout_json(&pnnid(&["dehomogenize", path_str(&lifted_poly)]));
    assert_eq!(back["outputs"], read_json(&poly)["outputs"]);

    let top = stdout_json(&pnnid(&["truncate", path_str(&poly)]));
    assert_eq!(top["homogeneous"], true);
    assert_eq!(top["degree"], 3);
}

#[test]
fn dimension_and_threshold() {
    let out = pnnid(&["dimension", "--widths", "3,2,2", "--degrees", "2", "--rank"]);
    assert_eq!(code(&out), 0);
    let report = stdout_json(&out);
    assert_eq!(report["expected_dim"], 8);
    assert_eq!(report["numeric_rank"], 8);

    let out = pnnid(&["threshold", "--widths", "4,4,4,4"]);
    assert_eq!(code(&out), 0);
    let degrees: Vec<u64> = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(degrees.len(), 2);
    let widths: Vec<String> = degrees.iter().map(u64::to_string).collect();
    let cert = pnnid(&["certify-arch", "--widths", "4,4,4,4", "--degrees", &widths.join(",")]);
    assert_eq!(code(&cert), 0);
}

#[test]
fn recovery_round_trip_matches_canonical_form() {
    let dir = TempDir::new().unwrap();
    let (net, _) = to_file(&dir, "net.json", &["random", "--widths", "3,2,2", "--degrees", "2", "--seed", "11"]);
    let (poly, _) = to_file(&dir, "poly.json", &["expand", path_str(&net)]);
    let (recovered, out) = to_file(
        &dir,
        "rec.json",
        &["recover", path_str(&poly), "--widths", "3,2,2", "--degrees", "2"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = stdout_json(&out);
    assert!(report["residual"].as_f64().unwrap() <= 1e-6);

    let truth = stdout_json(&pnnid(&["canonicalize", path_str(&net)]));
    let found = stdout_json(&pnnid(&["canonicalize", path_str(&recovered)]));
    assert!(max_gap(&truth["weights"], &found["weights"]) <= 1e-6);
    assert!(max_gap(&truth["weights"], &report["canonical"]["weights"]) <= 1e-6);
}

#[test]
fn recovery_of_a_biased_network() {
    let dir = TempDir::new().unwrap();
    let args = ["random", "--widths", "3,2,2", "--degrees", "2", "--bias", "--seed", "4"];
    let (net, _) = to_file(&dir, "net.json", &args);
    let (poly, _) = to_file(&dir, "poly.json", &["expand", path_str(&net)]);
    let (recovered, out) = to_file(
        &dir,
        "rec.json",
        &["recover", path_str(&poly), "--widths", "3,2,2", "--degrees", "2", "--bias"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rec = read_json(&recovered);
    assert_eq!(rec["has_bias"], true);
    let again = stdout_json(&pnnid(&["expand", path_str(&recovered)]));
    assert!(max_gap(&again["outputs"], &read_json(&poly)["outputs"]) <= 1e-6);
}

#[test]
fn recovery_with_wrong_architecture_fails_without_output() {
    let dir = TempDir::new().unwrap();
    let (net, _) = to_file(&dir, "net.json", &["random", "--widths", "3,2,2", "--degrees", "2", "--seed", "2"]);
    let (poly, _) = to_file(&dir, "poly.json", &["expand", path_str(&net)]);
    let (recovered, out) = to_file(
        &dir,
        "rec.json",
        &["recover", path_str(&poly), "--widths", "3,3,2", "--degrees", "2"],
    );
    assert_eq!(code(&out), 4);
    assert!(!recovered.exists());

    let wrong_shape = pnnid(&["recover", path_str(&poly), "--widths", "4,2,2", "--degrees", "2"]);
    assert_eq!(code(&wrong_shape), 65);
}
