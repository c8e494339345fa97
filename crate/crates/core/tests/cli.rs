use std::path::Path;
use std::process::{Command, Output};

use consistency_checker::bench::{self, BenchmarkFile, RootSpec};
use consistency_checker::testing::{StubResponse, StubServer};
use consistency_checker::TaskKind;
use serde_json::Value;

const CLI: &str = env!("CARGO_BIN_EXE_consistency-checker");

fn cli(args: &[&str], dir: &Path) -> Output {
    Command::new(CLI)
        .args(args)
        .current_dir(dir)
        .env_remove("CC_WORKER")
        .env_remove("CC_API_KEY")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout {}\nstderr {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn echo_server() -> StubServer {
    StubServer::start(|req| {
        let body = req.json().unwrap();
        StubResponse::chat(body["messages"][1]["content"].as_str().unwrap())
    })
}

fn paragraph_bench(dir: &Path, paragraphs: &[&str]) -> std::path::PathBuf {
    let file = BenchmarkFile {
        task: TaskKind::Translation,
        evaluator: "fixture".into(),
        pairs: bench::default_operation_pairs(TaskKind::Translation),
        roots: paragraphs
            .iter()
            .map(|p| RootSpec {
                problem: None,
                code: format!("def main():\n    return {}\n", serde_json::to_string(p).unwrap()),
                inputs: vec![],
            })
            .collect(),
    };
    let path = dir.join("bench.yaml");
    bench::save_benchmark(&file, &path).unwrap();
    path
}

#[test]
fn offline_pipeline_is_reproducible_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&cli(&["gen-bench", "--task", "translation", "--roots", "4", "--out", "tr.yaml"], d));
    ok(&cli(&["gen-bench", "--task", "translation", "--roots", "4", "--out", "tr2.yaml"], d));
    assert_eq!(read(d.join("tr.yaml")), read(d.join("tr2.yaml")));

    for out in ["a", "b"] {
        let run = cli(&["run", "--bench", "tr.yaml", "--out", out, "--mock", "drop-last-words:1", "--runs", "2"], d);
        assert!(ok(&run).contains("built 8 trees"));
        ok(&cli(&["score", "--out", out, "--metric", "bleu", "--metric", "embedding"], d));
    }
    assert_eq!(read(d.join("a/score.json")), read(d.join("b/score.json")));
    assert_eq!(read(d.join("a/forest-1.json")), read(d.join("b/forest-1.json")));

    let table = read(d.join("a/score.txt"));
    assert!(table.starts_with("evaluatee | root anchor, 2 runs"));
    let report: Value = serde_json::from_str(&read(d.join("a/score.json"))).unwrap();
    let bleu = &report["metrics"][0]["forest"];
    let means: Vec<f64> = (0..3).map(|j| bleu[j]["mean"].as_f64().unwrap()).collect();
    assert!(means[0] > means[1] && means[1] > means[2], "{means:?}");

    // losing one tree file and rerunning rebuilds only that tree
    let forest_before = read(d.join("a/forest-1.json"));
    std::fs::remove_file(d.join("a/run-1/tree-2.json")).unwrap();
    let rerun = ok(&cli(&["run", "--bench", "tr.yaml", "--out", "a", "--mock", "drop-last-words:1", "--runs", "2"], d));
    assert!(rerun.contains("built 1 trees, resumed 7, failed 0"), "{rerun}");
    assert_eq!(read(d.join("a/forest-1.json")), forest_before);

    // a different configuration refuses to reuse the directory
    let clash = cli(&["run", "--bench", "tr.yaml", "--out", "a", "--mock", "identity", "--runs", "2"], d);
    assert_eq!(clash.status.code(), Some(1));
}

#[test]
fn programming_benchmark_scores_identity_as_fully_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&cli(&["gen-bench", "--task", "programming", "--roots", "3", "--out", "p.yaml"], d));
    let file = bench::load_benchmark(&d.join("p.yaml")).unwrap();
    assert!(file.roots.iter().all(|r| r.inputs.len() == 20));
    ok(&cli(&["run", "--bench", "p.yaml", "--out", "r", "--mock", "identity", "--runs", "1", "--depth", "2", "--n-max", "2"], d));
    let table = ok(&cli(&["score", "--out", "r", "--metric", "levenshtein"], d));
    assert!(table.contains("100.0±0.0 | 100.0±0.0"), "{table}");
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&cli(&["gen-bench", "--task", "translation", "--roots", "2", "--out", "t.yaml"], d));
    let out = cli(&["run", "--bench", "t.yaml", "--out", "r", "--mock", "identity", "--branching", "2"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("branching"));
    let out = cli(&["run", "--bench", "t.yaml", "--out", "r", "--mock", "identity", "--n-max", "4"], d);
    assert_eq!(out.status.code(), Some(1));
    let out = cli(&["run", "--bench", "missing.yaml", "--out", "r", "--mock", "identity"], d);
    assert_eq!(out.status.code(), Some(1));
    let out = cli(&["run", "--bench", "t.yaml", "--out", "r"], d);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn echoing_gateway_evaluatee_is_fully_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let server = echo_server();
    paragraph_bench(d, &["The river rose overnight and the bridge was closed.", "Prices fell for a third month."]);
    let url = server.base_url();
    ok(&cli(
        &["run", "--bench", "bench.yaml", "--out", "r", "--evaluatee-base-url", &url, "--evaluatee-model", "echo", "--runs", "1", "--depth", "2", "--n-max", "2"],
        d,
    ));
    // two trees of 1 + 3 + 9 nodes, two calls per edge
    assert_eq!(server.requests().len(), 2 * 12 * 2);
    let first = server.requests()[0].json().unwrap();
    assert_eq!(first["temperature"], 0.6);
    assert_eq!(first["seed"], 42);
    let manifest = read(d.join("r/manifest.json"));
    assert!(manifest.contains("\"echo\"") && !manifest.to_lowercase().contains("api_key"));
    let table = ok(&cli(&["score", "--out", "r", "--metric", "bleu", "--metric", "embedding"], d));
    assert_eq!(table.matches("100.0±0.0").count(), 4, "{table}");
}

#[test]
fn gateway_failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    paragraph_bench(d, &["poison paragraph here.", "A perfectly ordinary sentence."]);
    let server = StubServer::start(|req| {
        let body = req.json().unwrap();
        let user = body["messages"][1]["content"].as_str().unwrap().to_string();
        if user.contains("poison") {
            StubResponse::status(400, "rejected")
        } else {
            StubResponse::chat(&user)
        }
    });
    let url = server.base_url();
    let base = ["run", "--bench", "bench.yaml", "--evaluatee-base-url", &url, "--evaluatee-model", "m", "--runs", "1", "--depth", "1", "--n-max", "1", "--max-retries", "0"];
    let mut partial = base.to_vec();
    partial.extend(["--out", "partial"]);
    let out = cli(&partial, d);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: Value = serde_json::from_str(&read(d.join("partial/manifest.json"))).unwrap();
    assert_eq!(manifest["trees"][0]["status"], "failed");
    assert_eq!(manifest["trees"][1]["status"], "done");

    let mut only_poison = base.to_vec();
    only_poison.extend(["--out", "none", "--trees", "1"]);
    assert_eq!(cli(&only_poison, d).status.code(), Some(3));
}

#[test]
fn dump_lists_every_node() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    paragraph_bench(d, &["one two three four five six"]);
    ok(&cli(&["run", "--bench", "bench.yaml", "--out", "r", "--mock", "drop-last-words:1", "--runs", "1", "--depth", "2", "--n-max", "2"], d));
    let text = ok(&cli(&["dump", "--out", "r", "--metric", "levenshtein"], d));
    assert_eq!(text.matches("Node ").count(), 13);
    assert!(text.starts_with("Node root (Level 0, similarity to root 1.0000)\none two three four five six"));
    assert!(text.contains("Node 2-1 (Level 2"));
}

#[test]
fn correlate_reads_fixture_and_substitutes_scores() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let fixture = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/wmt_cs_uk.csv");
    let table = ok(&cli(&["correlate", "--fixture", fixture], d));
    assert!(table.contains("-autorank"));
    let json: Value = serde_json::from_str(&ok(&cli(&["correlate", "--fixture", fixture, "--json"], d))).unwrap();
    let cell = json["cells"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["internal"] == "c3_emb" && c["external"] == "cometkiwi")
        .unwrap();
    assert!(cell["pearson"].as_f64().unwrap() > 0.7);

    paragraph_bench(d, &["alpha beta gamma delta epsilon zeta eta theta"]);
    ok(&cli(&["run", "--bench", "bench.yaml", "--out", "r", "--mock", "identity", "--runs", "2"], d));
    ok(&cli(&["score", "--out", "r", "--metric", "embedding"], d));
    let subst = format!("Phi-3={}", d.join("r/score.json").display());
    let json: Value = serde_json::from_str(&ok(&cli(&["correlate", "--fixture", fixture, "--json", "--scores", &subst], d))).unwrap();
    let cell = json["cells"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["internal"] == "c3_emb" && c["external"] == "cometkiwi")
        .unwrap();
    // a perfect score for the weakest model breaks the agreement
    assert!(cell["pearson"].as_f64().unwrap() < 0.0);
    let bad = cli(&["correlate", "--fixture", fixture, "--scores", "Nobody=x.json"], d);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn gateway_embedder_scores_through_the_cache() {
    use consistency_checker::gateway::HashedBowEmbedder;
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let server = StubServer::start(|req| {
        let text = req.json().unwrap()["input"].as_str().unwrap().to_string();
        StubResponse::embedding(HashedBowEmbedder::vectorize(&text).values())
    });
    paragraph_bench(d, &["one two three four five six seven eight"]);
    ok(&cli(&["run", "--bench", "bench.yaml", "--out", "r", "--mock", "drop-last-words:1", "--runs", "1"], d));
    let local = ok(&cli(&["score", "--out", "r", "--metric", "embedding"], d));
    let url = server.base_url();
    let remote = ok(&cli(&["score", "--out", "r", "--metric", "embedding", "--embedder-base-url", &url, "--embedder-model", "e"], d));
    assert_eq!(local, remote);
    // one request per distinct text: the root and one text per depth
    assert_eq!(server.requests().len(), 4);
    assert!(server.requests().iter().all(|r| r.path == "/embeddings"));
}
