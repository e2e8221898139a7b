use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gwer_cli::error::CliError;

fn gwer(args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gwer"));
    cmd.args(args).env_remove("GWER_SEED");
    if let Some(s) = seed_env {
        cmd.env("GWER_SEED", s);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn schema() -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/output.schema.json");
    let schema: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

fn config_value(csv: &str, key: &str) -> Option<String> {
    let prefix = format!("# config {key}=");
    csv.lines()
        .find_map(|l| l.strip_prefix(prefix.as_str()))
        .map(str::to_string)
}

const VELOCITY: &[&str] = &[
    "velocity", "--dist", "2:0.5,3:0.5", "--alphas", "-0.3,0.4", "--replicas", "40", "--horizon", "40",
];

#[test]
fn missing_dist_is_a_usage_error() {
    let o = gwer(&["einstein", "--alphas", "-0.1,0.1"], None);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("--dist"), "{err}");
    assert!(err.contains("Usage: gwer einstein"), "{err}");
}

#[test]
fn invalid_values_are_usage_errors() {
    for args in [
        &["spine", "--check", "nonsense"][..],
        &["velocity", "--dist", "2:0.5,3:0.4", "--alphas", "0.1"],
        &["velocity", "--dist", "2:1", "--alphas", "0.1", "--replicas", "0"],
        &["velocity", "--dist", "2:1", "--alphas", "0.1", "--format", "xml"],
        &["zjbis", "--bogus"],
    ] {
        assert_eq!(code(&gwer(args, None)), 1, "{args:?}");
    }
}

#[test]
fn check_failure_exits_two() {
    assert_eq!(code(&gwer(&["zjbis", "--n", "8", "--trials", "100", "--tol", "1e-10"], None)), 0);
    assert_eq!(code(&gwer(&["zjbis", "--tol", "1e-300"], None)), 2);
}

#[test]
fn caps_map_to_exit_three() {
    let overflow = CliError::Core(gwer_core::Error::ArenaOverflow { cap: 10 });
    assert_eq!(overflow.exit_code(), 3);
    let wrapped = CliError::Core(gwer_core::Error::Replica {
        replica: 4,
        failures: 1,
        source: Box::new(gwer_core::Error::NoConvergence { depth: 64 }),
    });
    assert_eq!(wrapped.exit_code(), 3);
    assert_eq!(CliError::Usage("x".into()).exit_code(), 1);
}

#[test]
fn seed_precedence_is_file_then_env_then_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# trial config\nseed = 3\nn = 6\ntrials = 20\n").unwrap();
    let out = dir.path().join("o.csv");
    let run = |extra: &[&str], env: Option<&str>| {
        let mut args = vec!["zjbis", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        assert_eq!(code(&gwer(&args, env)), 0);
        fs::read_to_string(&out).unwrap()
    };
    let text = run(&[], None);
    assert_eq!(config_value(&text, "seed").as_deref(), Some("3"));
    assert_eq!(config_value(&text, "n").as_deref(), Some("6"));
    assert_eq!(config_value(&run(&[], Some("5")), "seed").as_deref(), Some("5"));
    assert_eq!(config_value(&run(&["--seed", "9"], Some("5")), "seed").as_deref(), Some("9"));
}

#[test]
fn output_file_replays_as_config() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first.csv");
    let second = dir.path().join("second.csv");
    let mut args = VELOCITY.to_vec();
    args.extend(["--seed", "17", "--out", first.to_str().unwrap()]);
    assert_eq!(code(&gwer(&args, None)), 0);
    let replay = [
        "velocity",
        "--config",
        first.to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
        "--parallelism",
        "3",
    ];
    assert_eq!(code(&gwer(&replay, Some("999"))), 0);
    let a = fs::read(&first).unwrap();
    let b = fs::read(&second).unwrap();
    // GWER_SEED outranks the file, so the replay differs unless it is unset.
    assert_ne!(a, b);
    assert_eq!(code(&gwer(&replay, None)), 0);
    assert_eq!(a, fs::read(&second).unwrap());
}

#[test]
fn thread_count_never_changes_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for p in ["1", "4"] {
        for fmt in ["csv", "json"] {
            let out = dir.path().join(format!("v{p}.{fmt}"));
            let mut args = VELOCITY.to_vec();
            args.extend(["--parallelism", p, "--format", fmt, "--out", out.to_str().unwrap()]);
            assert_eq!(code(&gwer(&args, None)), 0);
            files.push(fs::read(out).unwrap());
        }
    }
    assert_eq!(files[0], files[2]);
    assert_eq!(files[1], files[3]);
}

#[test]
fn json_output_matches_schema() {
    let dir = tempfile::tempdir().unwrap();
    let validator = schema();
    let runs: [&[&str]; 3] = [
        VELOCITY,
        &["zjbis", "--trials", "10"],
        &["env", "--dist", "2:0.5,3:0.5", "--alphas", "-0.5", "--check", "velocity", "--replicas", "20", "--horizon", "20"],
    ];
    for (i, run) in runs.iter().enumerate() {
        let out = dir.path().join(format!("{i}.json"));
        let mut args = run.to_vec();
        args.extend(["--format", "json", "--out", out.to_str().unwrap()]);
        let o = gwer(&args, None);
        assert!(code(&o) == 0 || code(&o) == 2, "{}", stderr(&o));
        let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
        let errors: Vec<String> = validator.iter_errors(&doc).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{run:?}: {errors:?}");
        let cols = doc["columns"].as_array().unwrap().len();
        assert!(doc["rows"].as_array().unwrap().iter().all(|r| r.as_array().unwrap().len() == cols));
    }
    let mut broken: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("1.json")).unwrap(),
    )
    .unwrap();
    broken.as_object_mut().unwrap().remove("checks");
    assert!(!validator.is_valid(&broken));
}

#[test]
fn report_summarizes_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    let bad = dir.path().join("bad.csv");
    assert_eq!(code(&gwer(&["zjbis", "--format", "json", "--out", good.to_str().unwrap()], None)), 0);
    assert_eq!(code(&gwer(&["zjbis", "--tol", "1e-300", "--out", bad.to_str().unwrap()], None)), 2);
    let o = gwer(&["report", good.to_str().unwrap()], None);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("file,command,passed,total,status\n"));
    assert!(text.contains(",zjbis,1,1,PASS"), "{text}");
    let o = gwer(&["report", good.to_str().unwrap(), bad.to_str().unwrap()], None);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8(o.stdout).unwrap().contains(",zjbis,0,1,FAIL"));
}
