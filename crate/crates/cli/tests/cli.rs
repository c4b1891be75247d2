use std::path::PathBuf;
use std::process::Command;

use serde_json::Value;

use sfm_cli::json::to_canonical_string;
use sfm_cli::{run_command, CommandOutcome, EXIT_DATA, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE};
use sfm_core::classify::published;
use sfm_core::dataset::{bundled, growth_series};
use sfm_core::model::{ModelOptions, ModelParams};
use sfm_core::moments::{estimate_moments, VarianceConvention};
use sfm_core::solver::rank_diagnostics;

fn data_path() -> String {
    concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/mp_1889_1978.csv").to_string()
}

fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn run(args: &[&str]) -> CommandOutcome {
    run_command(std::iter::once("sfm").chain(args.iter().copied()))
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert_eq!(out.exit_code, EXIT_OK, "stderr: {}", out.stderr);
    out.stdout
}

fn assert_canonical(text: &str) -> Value {
    let v: Value = serde_json::from_str(text).unwrap();
    assert_eq!(to_canonical_string(&v), text, "re-emitted JSON differs");
    v
}

/// Numbers compared to 1e-9 relative (plus a small absolute floor for values
/// that are zero up to rounding), everything else exactly.
fn assert_close(actual: &Value, expected: &Value, path: &str) {
    match (actual, expected) {
        (Value::Number(a), Value::Number(e)) => {
            let (a, e) = (a.as_f64().unwrap(), e.as_f64().unwrap());
            assert!(
                (a - e).abs() <= 1e-9 * e.abs().max(1e-6),
                "{path}: {a} vs {e}"
            );
        }
        (Value::Array(a), Value::Array(e)) => {
            assert_eq!(a.len(), e.len(), "{path}: length");
            for (i, (x, y)) in a.iter().zip(e).enumerate() {
                assert_close(x, y, &format!("{path}[{i}]"));
            }
        }
        (Value::Object(a), Value::Object(e)) => {
            assert_eq!(
                a.keys().collect::<Vec<_>>(),
                e.keys().collect::<Vec<_>>(),
                "{path}: keys"
            );
            for (k, v) in a {
                assert_close(v, &e[k], &format!("{path}.{k}"));
            }
        }
        _ => assert_eq!(actual, expected, "{path}"),
    }
}

/// Compares against a stored fixture; `SFM_UPDATE_FIXTURES=1` rewrites it.
fn check_fixture(name: &str, text: &str) {
    let path = fixture_path(name);
    if std::env::var_os("SFM_UPDATE_FIXTURES").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, text).unwrap();
        return;
    }
    let stored =
        std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let expected: Value = serde_json::from_str(&stored).unwrap();
    let actual: Value = serde_json::from_str(text).unwrap();
    assert_close(&actual, &expected, name);
}

#[test]
fn every_json_output_round_trips() {
    let data = data_path();
    let outputs = [
        run_ok(&["moments", "--data", &data]),
        run_ok(&["moments", "--data", &data, "--variance", "population"]),
        run_ok(&["solve", "--data", &data, "--format", "json"]),
        run_ok(&[
            "solve",
            "--data",
            &data,
            "--format",
            "json",
            "--eq3",
            "rederived",
            "--lnex",
            "lognormal",
        ]),
        run_ok(&[
            "manifold",
            "--data",
            &data,
            "--tau-min",
            "0.5",
            "--tau-max",
            "4",
            "--steps",
            "7",
        ]),
        run_ok(&["validate", "--draws", "20000", "--format", "json"]),
        run_ok(&[
            "classify",
            "--data",
            &data,
            "--year",
            "1977",
            "--beta",
            "0.9581",
            "--tau",
            "1.0319",
            "--sfom-equity",
            "1.0013",
            "--sfom-riskfree",
            "1.0657",
            "--format",
            "json",
        ]),
    ];
    for text in &outputs {
        assert_canonical(text);
    }
}

#[test]
fn moments_report_gap_and_convention() {
    let v = assert_canonical(&run_ok(&["moments", "--data", &data_path()]));
    assert_eq!(v["n_obs"], 89);
    assert_eq!(v["convention"], "sample");
    assert!(v["gap"].as_f64().unwrap() < 0.0);
}

#[test]
fn solve_reaches_the_floor() {
    let v = assert_canonical(&run_ok(&[
        "solve",
        "--data",
        &data_path(),
        "--format",
        "json",
    ]));
    let norm = v["residuals"]["norm"].as_f64().unwrap();
    let floor = v["residual_floor"].as_f64().unwrap();
    assert!((norm - floor).abs() <= 1e-6 * floor);
    assert_eq!(v["rank"], 3);
    assert_eq!(v["options"]["eq3"], "printed");
    assert_eq!(v["options"]["lnex"], "arithmetic");
}

#[test]
fn solve_table_agrees_with_json() {
    let data = data_path();
    let v = assert_canonical(&run_ok(&["solve", "--data", &data, "--format", "json"]));
    let table = run_ok(&["solve", "--data", &data]);
    for key in ["beta", "omega", "delta", "tau"] {
        let x = v["params"][key].as_f64().unwrap();
        assert!(
            table.contains(&format!("{x:.4}")),
            "{key} = {x:.4} missing from\n{table}"
        );
    }
    assert!(table.contains("Equity"));
    assert!(table.contains("Risk-free asset"));
}

#[test]
fn solve_is_reproducible_and_matches_fixture() {
    let data = data_path();
    let a = run_ok(&["solve", "--data", &data, "--format", "json"]);
    let b = run_ok(&["solve", "--data", &data, "--format", "json"]);
    assert_eq!(a, b);
    check_fixture("solve_canonical.json", &a);
}

#[test]
fn rank_report_at_published_point_matches_fixture() {
    let m = estimate_moments(&growth_series(&bundled()), VarianceConvention::Sample).unwrap();
    let p = ModelParams::new(
        published::BETA,
        published::SFOM_RISKFREE,
        published::SFOM_EQUITY,
        published::TAU,
    )
    .unwrap();
    let report = rank_diagnostics(&m, &p, ModelOptions::default()).unwrap();
    assert_eq!(report.numerical_rank, 3);
    let text = to_canonical_string(&serde_json::to_value(report).unwrap());
    check_fixture("rank_report_published.json", &text);
}

#[test]
fn validate_matches_fixture() {
    let text = run_ok(&["validate", "--format", "json"]);
    let v = assert_canonical(&text);
    assert_eq!(v["all_pass"], true);
    assert_eq!(v["draws"], 1_000_000);
    assert_eq!(v["seed"], 42);
    check_fixture("validate_1e6_seed42.json", &text);
}

#[test]
fn manifold_points_and_target_distance() {
    let v = assert_canonical(&run_ok(&[
        "manifold",
        "--data",
        &data_path(),
        "--tau-min",
        "0.5",
        "--tau-max",
        "4",
        "--steps",
        "7",
        "--target",
        "0.9581,1.0657,1.0013,1.0319",
    ]));
    let points = v["points"].as_array().unwrap();
    assert_eq!(points.len(), 8);
    for p in points {
        for r in ["r2", "r3", "r4"] {
            assert!(p["residuals"][r].as_f64().unwrap().abs() < 1e-10);
        }
    }
    assert!(v["target_distance"].as_f64().unwrap() > 0.0);
}

#[test]
fn manifold_table_lists_every_point() {
    let table = run_ok(&[
        "manifold",
        "--data",
        &data_path(),
        "--tau-min",
        "1",
        "--tau-max",
        "2",
        "--steps",
        "4",
        "--format",
        "table",
    ]);
    for tau in ["1.0000", "1.2500", "1.5000", "1.7500", "2.0000"] {
        assert!(table.contains(tau), "{tau} missing from\n{table}");
    }
}

#[test]
fn classify_table_and_json_agree() {
    let data = data_path();
    let args = [
        "classify",
        "--data",
        &data,
        "--year",
        "1977",
        "--beta",
        "0.9581",
        "--tau",
        "1.0319",
        "--sfom-equity",
        "1.0013",
        "--sfom-riskfree",
        "1.0657",
    ];
    let table = run_ok(&args);
    let mut json_args = args.to_vec();
    json_args.extend(["--format", "json"]);
    let v = assert_canonical(&run_ok(&json_args));
    assert!(table.contains("Type of investor Year 1977"));
    for row in v["rows"].as_array().unwrap() {
        let certain = row["certain_utility"].as_f64().unwrap();
        let uncertain = row["uncertain_utility"].as_f64().unwrap();
        assert!(table.contains(&format!("{certain:.8}")));
        assert!(table.contains(&format!("{uncertain:.8}")));
        assert!((certain - published::CERTAIN_UTILITY).abs() < 1e-6);
    }
}

#[test]
fn exit_codes() {
    let data = data_path();
    let cases: Vec<(Vec<&str>, i32)> = vec![
        (vec!["--help"], EXIT_OK),
        (vec![], EXIT_USAGE),
        (vec!["frobnicate"], EXIT_USAGE),
        (vec!["solve", "--data", &data, "--bogus"], EXIT_USAGE),
        (vec!["solve", "--data", &data, "--eq3", "maybe"], EXIT_USAGE),
        (vec!["moments"], EXIT_USAGE),
        (vec!["validate", "--draws", "100"], EXIT_USAGE),
        (
            vec![
                "manifold",
                "--data",
                &data,
                "--tau-min",
                "1",
                "--tau-max",
                "2",
                "--steps",
                "2",
                "--target",
                "1,2",
            ],
            EXIT_USAGE,
        ),
        (
            vec!["moments", "--data", "/nonexistent/series.csv"],
            EXIT_DATA,
        ),
        (vec!["solve", "--data", &data, "--beta0", "-1"], EXIT_DATA),
        (
            vec![
                "manifold",
                "--data",
                &data,
                "--tau-min",
                "0",
                "--tau-max",
                "1",
                "--steps",
                "2",
            ],
            EXIT_NUMERICAL,
        ),
        (
            vec!["solve", "--data", &data, "--max-iterations", "2"],
            EXIT_NUMERICAL,
        ),
    ];
    for (args, expected) in cases {
        let out = run(&args);
        assert_eq!(out.exit_code, expected, "{args:?}: {}", out.stderr);
        if expected != EXIT_OK {
            assert!(out.stdout.is_empty(), "{args:?} wrote to stdout");
            assert!(!out.stderr.is_empty(), "{args:?} gave no diagnostic");
        }
    }
}

#[test]
fn malformed_csv_is_a_data_error() {
    let dir = std::env::temp_dir().join(format!("sfm-cli-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("bad.csv");
    std::fs::write(
        &path,
        "year,consumption,equity_return,riskfree_return\n1900,1,1.1,1.0\n1901,x,1.0,1.0\n",
    )
    .unwrap();
    let out = run(&["moments", "--data", path.to_str().unwrap()]);
    std::fs::remove_dir_all(&dir).ok();
    assert_eq!(out.exit_code, EXIT_DATA);
    assert!(out.stdout.is_empty());
    assert!(out.stderr.contains("line 3"), "{}", out.stderr);
}

#[test]
fn binary_exit_codes_and_streams() {
    let bin = env!("CARGO_BIN_EXE_sfm");
    let ok = Command::new(bin)
        .args(["moments", "--data", &data_path()])
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(EXIT_OK));
    assert_eq!(
        String::from_utf8(ok.stdout).unwrap(),
        run_ok(&["moments", "--data", &data_path()])
    );

    let missing = Command::new(bin)
        .args(["moments", "--data", "/nonexistent.csv"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(EXIT_DATA));
    assert!(missing.stdout.is_empty());
    assert!(!missing.stderr.is_empty());
}
