use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use webtable_core::skills::SkillBank;
use webtable_core::tools::{FixtureRecord, SearchHit};

const MOONS: &str = "List the Galilean moons of Jupiter. Columns: Moon, Discovered, Diameter (km).";
const MOONS_GOLD: &str = "| Moon | Discovered | Diameter (km) |\n| --- | --- | --- |\n| Io | 1610 | 3643 |\n| Europa | 1610 | 3122 |\n| Ganymede | 1610 | 5268 |\n| Callisto | 1610 | 4821 |\n";
const RINGS: &str = "List the main rings of Saturn discovered between 1610 and 1980. Columns: Ring, Inner Radius (km).";
const RINGS_GOLD: &str = "| Ring | Inner Radius (km) |\n| --- | --- |\n| C | 74658 |\n| B | 92000 |\n| A | 122170 |\n";
/// First answer for the rings query: one cell is wrong.
const RINGS_LOSSY: &str = "| Ring | Inner Radius (km) |\n| --- | --- |\n| C | 74658 |\n| B | 92000 |\n| A | 99999 |\n";

struct World {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl World {
    fn path(&self, p: &str) -> PathBuf {
        self.root.join(p)
    }
}

fn search(q: &str) -> Value {
    json!({"tool": "search", "args": {"query": q}}).to_string().into()
}

fn respond(markdown: &str) -> Value {
    json!({"response": markdown}).to_string().into()
}

/// A corpus, a playbook, an empty banks directory and a dataset.
fn world() -> World {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let corpus = root.join("corpus");
    for (q, url) in [("galilean moons", "https://ref.example.org/moons"), ("saturn rings", "https://ref.example.org/rings")] {
        FixtureRecord::search(q, &[SearchHit { title: q.into(), url: url.into(), snippet: "reference".into() }])
            .save(&corpus)
            .unwrap();
    }
    let playbook = json!({"rules": [
        {"when": "TASK: decompose", "responses": [json!({"partitions": [{"name": "all items", "target": [3, 5]}]}).to_string()]},
        {"when": "Instruction:\nList the Galilean", "responses": [search("galilean moons"), respond(MOONS_GOLD)]},
        {"when": "Instruction:\nList the main rings", "responses": [search("saturn rings"), respond(RINGS_LOSSY), search("saturn rings"), respond(RINGS_GOLD)]},
        {"when": "Instruction:\nList nothing", "responses": [respond("I could not find anything.")]},
    ]});
    std::fs::write(root.join("playbook.json"), playbook.to_string()).unwrap();
    std::fs::create_dir_all(root.join("banks")).unwrap();
    let lines = [
        json!({"query": MOONS, "gold": MOONS_GOLD}),
        json!({"query": RINGS, "gold_file": "rings.md"}),
    ];
    std::fs::write(root.join("rings.md"), RINGS_GOLD).unwrap();
    write_dataset(&root.join("dataset.jsonl"), &lines);
    World { _dir: dir, root }
}

fn write_dataset(path: &Path, lines: &[Value]) {
    let text: String = lines.iter().map(|l| format!("{l}\n")).collect();
    std::fs::write(path, text).unwrap();
}

fn webtable(w: &World, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_webtable"))
        .current_dir(&w.root)
        .env_remove("BACKEND_WORKER_URL")
        .env_remove("SEARCH_API_URL")
        .args(args)
        .output()
        .unwrap()
}

fn base<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["--banks", "banks", "--corpus", "corpus", "--backend-playbook", "playbook.json"];
    v.extend_from_slice(extra);
    v
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn error_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stderr).unwrap_or_else(|_| panic!("stderr is not JSON: {}", String::from_utf8_lossy(&o.stderr)))
}

#[test]
fn infer_on_fixture_matches_gold() {
    let w = world();
    let o = webtable(&w, &base(&["infer", "--query", MOONS, "--run-dir", "run"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    std::fs::write(w.path("gold.md"), MOONS_GOLD).unwrap();
    std::fs::copy(w.path("run/output.md"), w.path("pred.md")).unwrap();
    for f in ["board.md", "output.md", "run.json", "invocation.json", "traj/t1.jsonl"] {
        assert!(w.path("run").join(f).exists(), "{f}");
    }
    assert!(stdout(&o).contains("| Ganymede | 1610 | 5268 |"));

    let s = webtable(&w, &["score", "--pred", "pred.md", "--gold", "gold.md"]);
    assert!(s.status.success());
    let report: Value = serde_json::from_str(&stdout(&s)).unwrap();
    assert_eq!(report["success"], json!(true));
    assert_eq!(report["item_f1"], json!(1.0));

    let r = webtable(&w, &["replay", "--run-dir", "run", "--worker", "t1"]);
    assert!(r.status.success());
    let text = stdout(&r);
    assert!(text.starts_with("== t1 (2 steps)") && text.contains("search"), "{text}");
}

#[test]
fn cold_start_uses_fallback_router() {
    let w = world();
    let o = webtable(&w, &base(&["infer", "--query", RINGS, "--run-dir", "run"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run: Value = serde_json::from_slice(&std::fs::read(w.path("run/run.json")).unwrap()).unwrap();
    assert_eq!(run["route"]["via"], json!("fallback"));
}

#[test]
fn missing_corpus_is_a_config_error_before_dispatch() {
    let w = world();
    let o = webtable(
        &w,
        &["--banks", "banks", "--corpus", "nowhere", "--backend-playbook", "playbook.json", "infer", "--query", MOONS, "--run-dir", "run"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"], json!("config"));
    assert!(!w.path("run").exists());
}

#[test]
fn credentials_in_the_file_are_refused() {
    let w = world();
    std::fs::write(w.path("run.toml"), "[backends.worker]\nkind = \"http\"\nurl = \"http://localhost:9\"\napi_key = \"sk-live\"\n").unwrap();
    let o = webtable(&w, &["--config", "run.toml", "--corpus", "corpus", "infer", "--query", MOONS, "--run-dir", "run"]);
    assert_eq!(o.status.code(), Some(2));
    let err = error_json(&o);
    assert!(err["message"].as_str().unwrap().contains("BACKEND_{ROLE}_KEY"), "{err}");
}

#[test]
fn config_file_paths_and_overrides() {
    let w = world();
    std::fs::write(
        w.path("run.toml"),
        "banks = \"banks\"\nseed = 7\n[env]\nmode = \"fixture\"\ncorpus = \"corpus\"\n[backends.orchestrator]\nkind = \"scripted\"\nplaybook = \"playbook.json\"\n[backends.worker]\nkind = \"scripted\"\nplaybook = \"playbook.json\"\n[worker]\nmax_steps = 1\n",
    )
    .unwrap();
    // One step is not enough to search and then answer, so the first worker
    // fails and Round 2 makes up the shortfall.
    let o = webtable(&w, &["--config", "run.toml", "infer", "--query", MOONS, "--run-dir", "a"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run: Value = serde_json::from_slice(&std::fs::read(w.path("a/run.json")).unwrap()).unwrap();
    assert_eq!(run["workers"][0]["status"], json!("failed"));
    assert_eq!(run["round2"].as_array().unwrap().len(), 1);
    let o = webtable(&w, &["--config", "run.toml", "--max-steps", "5", "infer", "--query", MOONS, "--run-dir", "b"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run: Value = serde_json::from_slice(&std::fs::read(w.path("b/run.json")).unwrap()).unwrap();
    assert!(run["round2"].as_array().unwrap().is_empty());
    let inv: Value = serde_json::from_slice(&std::fs::read(w.path("b/invocation.json")).unwrap()).unwrap();
    assert_eq!(inv["seed"], json!(7));
    assert_eq!(inv["fake_clock"], json!(true));
}

#[test]
fn empty_answer_exits_one() {
    let w = world();
    let o = webtable(&w, &base(&["infer", "--query", "List nothing at all. Columns: A, B.", "--run-dir", "run"]));
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_json(&o)["error"], json!("empty_result"));
    assert!(w.path("run/invocation.json").exists());
}

#[test]
fn require_frozen_is_honoured() {
    let w = world();
    let o = webtable(&w, &base(&["infer", "--query", MOONS, "--run-dir", "run", "--require-frozen"]));
    assert_eq!(o.status.code(), Some(2));
}

fn train(w: &World, banks: &str, out: &str, extra: &[&str]) -> Output {
    let mut args = vec!["--banks", banks, "--corpus", "corpus", "--backend-playbook", "playbook.json", "--seed", "3"];
    args.extend_from_slice(&["train", "--dataset", "dataset.jsonl", "--out", out]);
    args.extend_from_slice(extra);
    webtable(w, &args)
}

fn metrics(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn train_writes_one_metrics_record_per_episode() {
    let w = world();
    let o = train(&w, "banks", "out", &["--episodes", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = metrics(&w.path("out/metrics.jsonl"));
    assert_eq!(m.len(), 2);
    assert_eq!(m[0]["utility"], json!(1.0));
    assert!(m[1]["utility"].as_f64().unwrap() < 1.0);
    assert!(SkillBank::open_read_only(w.path("banks/strategies")).unwrap().is_frozen());
    for f in ["board.md", "output.md", "gold.md", "report.json", "traj/t1.jsonl"] {
        assert!(w.path("out/episodes/1").join(f).exists(), "{f}");
    }
    // Trained banks serve a frozen-only inference.
    let o = webtable(&w, &base(&["infer", "--query", MOONS, "--run-dir", "run", "--require-frozen"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn training_reruns_are_identical() {
    let w = world();
    for (banks, out) in [("b1", "o1"), ("b2", "o2")] {
        std::fs::create_dir_all(w.path(banks)).unwrap();
        assert!(train(&w, banks, out, &["--episodes", "2"]).status.success());
    }
    assert_eq!(
        std::fs::read(w.path("o1/metrics.jsonl")).unwrap(),
        std::fs::read(w.path("o2/metrics.jsonl")).unwrap()
    );
    for tier in ["strategies", "workers"] {
        let a = SkillBank::open_read_only(w.path("b1").join(tier)).unwrap();
        let b = SkillBank::open_read_only(w.path("b2").join(tier)).unwrap();
        assert_eq!(a.bank_hash().unwrap(), b.bank_hash().unwrap(), "{tier}");
    }
}

#[test]
fn malformed_gold_fails_only_its_episode() {
    let w = world();
    write_dataset(
        &w.path("dataset.jsonl"),
        &[json!({"query": MOONS, "gold": "no table here"}), json!({"query": RINGS, "gold": RINGS_GOLD})],
    );
    let o = train(&w, "banks", "out", &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = metrics(&w.path("out/metrics.jsonl"));
    assert_eq!(m.len(), 2);
    assert_eq!(m[0]["utility"], json!(0.0));
    assert!(m[0]["error"].as_str().unwrap().contains("gold"));
    assert!(m[1]["error"].is_null() && m[1]["utility"].as_f64().unwrap() > 0.0);
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["failed"], json!([0]));
}

#[test]
fn empty_dataset_is_a_config_error() {
    let w = world();
    std::fs::write(w.path("dataset.jsonl"), "\n").unwrap();
    let o = train(&w, "banks", "out", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"], json!("empty_dataset"));
}

fn lines(o: &Output) -> Vec<String> {
    stdout(o).lines().map(String::from).collect()
}

#[test]
fn skills_list_show_and_diff() {
    let w = world();
    assert!(train(&w, "banks", "o1", &["--episodes", "1", "--no-freeze"]).status.success());
    let snap = webtable(&w, &["--banks", "banks", "skills", "snapshot"]);
    assert!(snap.status.success());
    std::fs::write(w.path("before.json"), &snap.stdout).unwrap();
    assert!(train(&w, "banks", "o2", &["--episodes", "2"]).status.success());

    let bank = SkillBank::open_read_only(w.path("banks/strategies")).unwrap();
    let list = webtable(&w, &["--banks", "banks", "skills", "list"]);
    assert_eq!(lines(&list).len(), bank.len());
    let first = &bank.list()[0];
    assert!(lines(&list)[0].starts_with(&format!("{}\t{}\tv{}\t", first.name, first.kind, first.version)));

    let show = webtable(&w, &["--banks", "banks", "skills", "show", &first.name]);
    assert!(stdout(&show).starts_with(first.body.trim_end()));

    let before: webtable_core::skills::BankSnapshot = serde_json::from_slice(&snap.stdout).unwrap();
    let expected: Vec<String> =
        before.added_in(&bank.snapshot().unwrap()).iter().map(|id| format!("{}\t{}", id.name, id.version)).collect();
    assert!(!expected.is_empty());
    let diff = webtable(&w, &["skills", "diff", "before.json", "banks/strategies"]);
    assert_eq!(lines(&diff), expected);

    let missing = webtable(&w, &["--banks", "banks", "skills", "show", "no-such-skill"]);
    assert_eq!(missing.status.code(), Some(1));
    assert_eq!(error_json(&missing)["error"], json!("unknown_skill"));

    let workers = webtable(&w, &["--banks", "banks", "skills", "--tier", "workers", "list"]);
    assert_eq!(lines(&workers).len(), SkillBank::open_read_only(w.path("banks/workers")).unwrap().len());
}
