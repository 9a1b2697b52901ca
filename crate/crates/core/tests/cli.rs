use std::path::PathBuf;

use bbc::cli::{dispatch, EXIT_INCONCLUSIVE, EXIT_NEGATIVE, EXIT_OK, EXIT_USAGE};
use serde_json::Value;

fn corpus(file: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "corpus", file].iter().collect();
    p.to_string_lossy().into_owned()
}

fn bbc(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = dispatch(std::iter::once("bbc").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn assert_schema(schema: &str, output: &str) {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "schemas", schema].iter().collect();
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let value: Value = serde_json::from_str(output).unwrap_or_else(|e| panic!("{e}: {output}"));
    let errors: Vec<String> = validator.iter_errors(&value).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}\n{output}");
}

#[test]
fn missing_file_is_a_usage_error() {
    let (code, out, err) = bbc(&["parse", "nosuchfile.bbc"]);
    assert_eq!(code, EXIT_USAGE);
    assert!(out.is_empty());
    assert!(err.contains("nosuchfile.bbc"));
}

#[test]
fn bad_flags_are_usage_errors() {
    assert_eq!(bbc(&["frobnicate"]).0, EXIT_USAGE);
    assert_eq!(bbc(&["states", &corpus("sec33.bbc"), "--max-states", "0"]).0, EXIT_USAGE);
    assert_eq!(bbc(&["--format", "dot", "parse", &corpus("sec33.bbc")]).0, EXIT_USAGE);
}

#[test]
fn syntax_errors_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.bbc");
    std::fs::write(&path, "net = l::[a!<x>.").unwrap();
    let (code, _, err) = bbc(&["parse", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("1:"), "{err}");
}

#[test]
fn worked_example_steps() {
    let (code, out, _) = bbc(&["step", &corpus("sec33.bbc"), "--mode", "exhaustive"]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(out.lines().filter(|l| l.contains("Coll a {")).count(), 3, "{out}");
    let (code, out, _) = bbc(&["--format", "json", "step", &corpus("sec33.bbc")]);
    assert_eq!(code, EXIT_OK);
    assert_schema("steps.json", &out);
    let steps: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(steps.as_array().unwrap().len(), 1);
    assert_eq!(steps[0]["label"]["senders"], serde_json::json!(["l1", "l2"]));
}

#[test]
fn typecheck_verdicts() {
    assert_eq!(bbc(&["typecheck", &corpus("sec33.bbc")]).0, EXIT_NEGATIVE);
    let (code, out, _) = bbc(&["--format", "json", "typecheck", &corpus("sec33.bbc")]);
    assert_eq!(code, EXIT_NEGATIVE);
    assert_schema("typecheck.json", &out);
    for file in ["hierarchy_d1.bbc", "hierarchy_d1_flat.bbc", "hierarchy_d1_repeat.bbc", "electoral_n2.bbc", "electoral_n3.bbc"] {
        let (code, out, _) = bbc(&["--format", "json", "typecheck", &corpus(file)]);
        assert_eq!(code, EXIT_OK, "{file}");
        assert_schema("typecheck.json", &out);
    }
}

#[test]
fn json_outputs_follow_schemas() {
    let sec33 = corpus("sec33.bbc");
    let (_, out, _) = bbc(&["--format", "json", "parse", &sec33]);
    assert_schema("program.json", &out);
    let (_, out, _) = bbc(&["--format", "json", "normalize", &sec33]);
    assert_schema("normal_form.json", &out);
    let (_, out, _) = bbc(&["--format", "json", "run", &sec33, "--seed", "7", "--mode", "exhaustive"]);
    assert_schema("run.json", &out);
    let (_, out, _) = bbc(&["--format", "json", "states", &corpus("electoral_n2.bbc")]);
    assert_schema("state_graph.json", &out);
    let (code, out, _) = bbc(&["--format", "json", "states", &corpus("electoral_n2.bbc"), "--max-states", "3"]);
    assert_eq!(code, EXIT_OK);
    assert_schema("state_graph.json", &out);
    let (_, out, _) = bbc(&["--format", "json", "gen", "electoral", "--n", "2"]);
    assert_schema("program.json", &out);
}

#[test]
fn bisim_exit_codes_and_trace_file() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.json");
    let trace = trace.to_str().unwrap();
    let (h, f) = (corpus("hierarchy_d1.bbc"), corpus("hierarchy_d1_flat.bbc"));
    let (code, out, _) = bbc(&["--format", "json", "bisim", &h, &f, "--barb-mode", "weak", "--trace-out", trace]);
    assert_eq!(code, EXIT_OK);
    assert_schema("verdict.json", &out);
    assert!(!std::path::Path::new(trace).exists());
    let (code, out, _) = bbc(&["--format", "json", "bisim", &h, &f, "--trace-out", trace]);
    assert_eq!(code, EXIT_NEGATIVE);
    assert_schema("verdict.json", &out);
    assert_schema("trace_file.json", &std::fs::read_to_string(trace).unwrap());
    let (code, out, _) = bbc(&["--format", "json", "bisim", &h, &f, "--max-states", "5", "--barb-mode", "weak"]);
    assert_eq!(code, EXIT_INCONCLUSIVE);
    assert_schema("verdict.json", &out);
    let (code, out, _) = bbc(&["bisim", &h, &f, "--barb-mode", "weak", "--full", "--trace-out", trace]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("Bisimilar"));
}

#[test]
fn corpus_matches_generators() {
    let cases: [(&str, &[&str]); 7] = [
        ("hierarchy_d1.bbc", &["gen", "hierarchy", "--depth", "1", "--branching", "2"]),
        ("hierarchy_d1_flat.bbc", &["gen", "hierarchy", "--depth", "1", "--branching", "2", "--flat"]),
        ("hierarchy_d2.bbc", &["gen", "hierarchy", "--depth", "2", "--branching", "2,2"]),
        ("hierarchy_d2_flat.bbc", &["gen", "hierarchy", "--depth", "2", "--branching", "2,2", "--flat"]),
        ("hierarchy_d1_repeat.bbc", &["gen", "hierarchy", "--depth", "1", "--rounds", "repeat", "--leaf-body", "inert"]),
        ("electoral_n2.bbc", &["gen", "electoral", "--n", "2"]),
        ("electoral_n3.bbc", &["gen", "electoral", "--n", "3"]),
    ];
    for (file, args) in cases {
        let (code, out, _) = bbc(args);
        assert_eq!(code, EXIT_OK);
        assert_eq!(out, std::fs::read_to_string(corpus(file)).unwrap(), "{file}");
    }
}

#[test]
fn output_is_deterministic() {
    let invocations: [&[&str]; 4] = [
        &["--format", "json", "run", "SEC33", "--seed", "3", "--mode", "exhaustive"],
        &["--format", "json", "states", "SEC33", "--mode", "exhaustive"],
        &["--format", "dot", "states", "SEC33", "--reduced"],
        &["normalize", "SEC33"],
    ];
    let sec33 = corpus("sec33.bbc");
    for args in invocations {
        let args: Vec<&str> = args.iter().map(|a| if *a == "SEC33" { sec33.as_str() } else { a }).collect();
        let first = bbc(&args);
        assert_eq!(first.0, EXIT_OK);
        assert_eq!(first, bbc(&args));
    }
}

#[test]
fn states_can_be_written_to_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.dot");
    let (code, _, _) = bbc(&["--format", "dot", "states", &corpus("sec33.bbc"), "--out", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    assert!(std::fs::read_to_string(path).unwrap().starts_with("digraph"));
}

#[test]
#[should_panic]
fn schemas_reject_malformed_output() {
    assert_schema("typecheck.json", r#"{"ok": "yes", "error": null}"#);
}
