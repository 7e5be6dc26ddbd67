use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use stancegraph_core::markov::MarkovModel;
use stancegraph_core::planner::{ActionRequest, MetaPlan, Schedule, UsageCounters};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stancegraph"))
}

fn here(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(rel)
}

fn core_fixture(name: &str) -> PathBuf {
    here("../core/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr_json(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stderr)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap_or_else(|e| panic!("not JSON: {l}: {e}")))
        .collect()
}

/// (fixture, expected exit code)
const VALIDATE_CASES: [(&str, i32); 10] = [
    ("good_desk.json", 0),
    ("good_single_stance.json", 0),
    ("good_unknown_fields.json", 0),
    ("bad_syntax.json", 2),
    ("bad_looping_gesture.json", 1),
    ("bad_duplicate_id.json", 1),
    ("bad_missing_target.json", 1),
    ("bad_start_stance.json", 1),
    ("bad_layer_mismatch.json", 1),
    ("bad_blend_timing.json", 1),
];

#[test]
fn validate_exit_codes() {
    for (name, expected) in VALIDATE_CASES {
        let path = here("tests/fixtures/validate").join(name);
        let out = run(&["validate", s(&path)]);
        assert_eq!(out.status.code(), Some(expected), "{name}");
        assert!(out.stdout.is_empty());
        let diags = stderr_json(&out);
        let errors = diags
            .iter()
            .filter(|d| d["severity"] == "error" || d.get("error").is_some())
            .count();
        assert_eq!(errors > 0, expected != 0, "{name}: {diags:?}");
    }
}

#[test]
fn validate_names_the_offending_field() {
    let out = run(&["validate", s(&here("tests/fixtures/validate/bad_looping_gesture.json"))]);
    let diags = stderr_json(&out);
    let err = diags.iter().find(|d| d["severity"] == "error").unwrap();
    assert_eq!(err["clip"], "beat");
    assert!(err["message"].as_str().unwrap().contains("looping"));
}

#[test]
fn strict_mode_rejects_unknown_fields() {
    let path = here("tests/fixtures/validate/good_unknown_fields.json");
    assert_eq!(run(&["validate", "--strict", s(&path)]).status.code(), Some(1));
}

#[test]
fn missing_manifest_is_unreadable() {
    let out = run(&["validate", "/nonexistent/manifest.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)[0]["error"], "io");
}

#[test]
fn shipped_fixtures_validate() {
    for name in ["desk.manifest.json", "conversation.manifest.json"] {
        assert_eq!(
            run(&["validate", "--strict", s(&core_fixture(name))]).status.code(),
            Some(0)
        );
    }
}

#[test]
fn expand_prints_machine() {
    let out = run(&["expand", s(&core_fixture("desk.manifest.json")), "--start", "desk_rest"]);
    assert!(out.status.success());
    let machine: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(machine["entry"], "desk_rest");
    assert_eq!(machine["nodes"].as_array().unwrap().len(), 7);
    // 2 stance loops + 2 per gesture/fidget (3) + 2 per transition (2)
    assert_eq!(machine["edges"].as_array().unwrap().len(), 12);

    let dot = run(&[
        "expand",
        s(&core_fixture("desk.manifest.json")),
        "--start",
        "desk_rest",
        "--dot",
    ]);
    assert!(String::from_utf8(dot.stdout).unwrap().starts_with("digraph"));

    let bad = run(&["expand", s(&core_fixture("desk.manifest.json")), "--start", "nowhere"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr_json(&bad)[0]["message"].is_string());
}

#[test]
fn empty_requests_give_empty_plan() {
    let dir = tempfile::tempdir().unwrap();
    let req = dir.path().join("requests.json");
    std::fs::write(&req, "[]").unwrap();
    let out = run(&["plan", s(&core_fixture("desk.manifest.json")), s(&req)]);
    assert!(out.status.success());
    let plan: MetaPlan = serde_json::from_slice(&out.stdout).unwrap();
    assert!(plan.is_empty());
}

#[test]
fn learn_generate_plan_sample_compose() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    let manifest = core_fixture("conversation.manifest.json");

    let out = run(&["learn", s(&core_fixture("conversation.tsvann")), "--layer", "arms"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let model: MarkovModel = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(model.states().len(), 9);
    std::fs::write(p("model.json"), &out.stdout).unwrap();

    let out = run(&["generate", s(&p("model.json")), "--horizon", "30", "--seed", "3"]);
    assert!(out.status.success());
    let requests: Vec<ActionRequest> = serde_json::from_slice(&out.stdout).unwrap();
    assert!(!requests.is_empty());
    std::fs::write(p("requests.json"), &out.stdout).unwrap();

    let out = run(&["plan", s(&manifest), s(&p("requests.json"))]);
    assert!(out.status.success());
    let plan: MetaPlan = serde_json::from_slice(&out.stdout).unwrap();
    assert!(plan.is_conflict_free());
    std::fs::write(p("plan.json"), &out.stdout).unwrap();

    let sample = |seed: &str| run(&["sample", s(&manifest), s(&p("plan.json")), "--seed", seed]);
    let a = sample("7");
    assert!(a.status.success());
    assert_eq!(a.stdout, sample("7").stdout);
    let schedule: Schedule = serde_json::from_slice(&a.stdout).unwrap();
    assert!(!schedule.is_empty());
    std::fs::write(p("schedule.json"), &a.stdout).unwrap();

    let out = run(&[
        "compose",
        s(&manifest),
        s(&p("schedule.json")),
        "--fps",
        "10",
        "--duration",
        "4",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let frames: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(frames["frames"].as_array().unwrap().len(), 41);
    assert_eq!(frames["frames"][40]["time"], 4.0);
}

#[test]
fn sample_updates_counter_file() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.json");
    std::fs::write(
        &plan,
        r#"{"arms": [{"id": 0, "abstract_kind": "gesture", "layer": "arms", "start": 0.0, "duration": 3.0, "priority": 1}]}"#,
    )
    .unwrap();
    let counters = dir.path().join("counters.json");
    let args = |alpha: &'static str| {
        vec![
            "sample".to_string(),
            s(&core_fixture("desk.manifest.json")).to_string(),
            s(&plan).to_string(),
            "--seed".into(),
            "1".into(),
            "--counters".into(),
            s(&counters).to_string(),
            "--alpha".into(),
            alpha.into(),
        ]
    };
    assert!(bin().args(args("2")).output().unwrap().status.success());
    let c: UsageCounters = serde_json::from_str(&std::fs::read_to_string(&counters).unwrap()).unwrap();
    assert_eq!(c.alpha, 2.0);
    assert_eq!(c.counts.values().sum::<f64>(), 2.0);
    // the file wins over the flag once it exists
    assert!(bin().args(args("9")).output().unwrap().status.success());
    let c: UsageCounters = serde_json::from_str(&std::fs::read_to_string(&counters).unwrap()).unwrap();
    assert_eq!(c.counts.values().sum::<f64>(), 4.0);
}

#[test]
fn errors_are_json() {
    let dir = tempfile::tempdir().unwrap();
    let req = dir.path().join("requests.json");
    std::fs::write(&req, "[{\"type\": \"nonsense\"}]").unwrap();
    let out = run(&["plan", s(&core_fixture("desk.manifest.json")), s(&req)]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)[0]["error"], "parse");

    let bad = dir.path().join("bad.tsvann");
    std::fs::write(&bad, "duration\t5\nlegs\t1\t2\tgesture\n").unwrap();
    let out = run(&["learn", s(&bad), "--layer", "body"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)[0]["details"]["line"], 2);

    let out = run(&["learn", s(&core_fixture("conversation.tsvann")), "--layer", "arms"]);
    std::fs::write(dir.path().join("m.json"), &out.stdout).unwrap();
    let out = run(&[
        "generate",
        s(&dir.path().join("m.json")),
        "--horizon",
        "0",
        "--seed",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)[0]["error"], "generate");
}
