use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
[data]
n_items = 300
[embedding]
epochs = 2
embedding_dim = 8
[sampling]
triplets_per_attribute = 200
val_triplets_per_attribute = 50
test_triplets_per_attribute = 50
platt_pairs_per_attribute = 300
train_pairs_per_attribute = 20
test_pairs_per_attribute = 3
[dqn]
episodes = 3
batch_size = 16
replay_capacity = 200
target_sync_every = 10
hidden = [16, 8]
[bench]
max_steps = 15
"#;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("small.toml"), SMALL).unwrap();
        Workspace { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_attrsearch"))
            .args(args)
            .env("ATTRSEARCH_CONFIG", self.path("small.toml"))
            .env("ATTRSEARCH_LOG", "warn")
            .env_remove("ATTRSEARCH_DATA")
            .env_remove("ATTRSEARCH_MODEL")
            .env_remove("ATTRSEARCH_DQN")
            .current_dir(self.dir.path())
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}\n{}",
            String::from_utf8_lossy(&out.stderr),
            String::from_utf8_lossy(&out.stdout)
        );
        String::from_utf8(out.stdout).unwrap()
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    let w = Workspace::new();
    assert_eq!(code(&w.run(&["frobnicate"])), 2);
    assert_eq!(code(&w.run(&["gen-data"])), 2);
    assert_eq!(
        code(&w.run(&["gen-data", "-o", "x.txt", "--items", "many"])),
        2
    );
    assert_eq!(
        code(&w.run(&["eval-emb", "--data", "x.txt", "--model", "m.json", "--split", "sideways"])),
        2
    );
}

#[test]
fn file_errors_have_their_own_codes() {
    let w = Workspace::new();
    let out = w.run(&["eval-emb", "--data", "missing.txt", "--model", "m.json"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));

    std::fs::write(w.path("bad.txt"), "not a dataset\n").unwrap();
    assert_eq!(
        code(&w.run(&["eval-emb", "--data", "bad.txt", "--model", "m.json"])),
        4
    );

    std::fs::write(w.path("bad.toml"), "[dqn]\nepisodez = 1\n").unwrap();
    assert_eq!(
        code(&w.run(&["-c", "bad.toml", "gen-data", "-o", "x.txt"])),
        4
    );

    std::fs::write(w.path("zero.toml"), "[embedding]\nembedding_dim = 0\n").unwrap();
    assert_eq!(
        code(&w.run(&["-c", "zero.toml", "gen-data", "-o", "x.txt"])),
        2
    );
}

#[test]
fn flags_override_the_config_file() {
    let w = Workspace::new();
    let out = w.ok(&[
        "gen-data",
        "-o",
        "items.txt",
        "--items",
        "60",
        "--seed",
        "4",
    ]);
    assert!(out.contains("60 items"), "{out}");
    let text = std::fs::read_to_string(w.path("items.txt")).unwrap();
    let header: serde_json::Value =
        serde_json::from_str(text.lines().next().unwrap().trim_start_matches("# ")).unwrap();
    assert_eq!(header["config"]["data"]["n_items"], 60);
    assert_eq!(header["config"]["data"]["seed"], 4);
    assert_eq!(header["config"]["embedding"]["epochs"], 2);

    let resolved = w.ok(&["config"]);
    assert!(resolved.contains("n_items = 300"), "{resolved}");
}

#[test]
fn full_workflow() {
    let w = Workspace::new();
    w.ok(&["gen-data", "-o", "items.txt"]);
    for variant in ["csn", "constrained", "global"] {
        w.ok(&[
            "train-emb",
            "--data",
            "items.txt",
            "-o",
            &format!("{variant}.json"),
            "--variant",
            variant,
        ]);
        assert!(w.path(&format!("{variant}.platt.json")).exists());
    }
    let ck = json(&w.path("global.json"));
    assert_eq!(ck["run"]["command"], "train-emb");
    assert_eq!(ck["run"]["config"]["variant"], "global");
    assert_eq!(
        ck["run"]["config"]["sampling"]["triplets_per_attribute"],
        200
    );

    // One row per model in the ablation order, one column per attribute plus overall.
    let table = w.ok(&[
        "eval-emb",
        "--data",
        "items.txt",
        "--model",
        "csn.json",
        "--model",
        "constrained.json",
        "--model",
        "global.json",
        "--json",
        "eval.json",
    ]);
    let lines: Vec<&str> = table.lines().collect();
    assert!(
        lines[1].starts_with("Method") && lines[1].trim_end().ends_with("Overall"),
        "{table}"
    );
    assert!(lines[2].starts_with("CSN "));
    assert!(lines[3].starts_with("CSN + constraints "));
    assert!(lines[4].starts_with("CSN + constraints + global similarity"));
    let eval = json(&w.path("eval.json"));
    assert_eq!(eval["models"].as_array().unwrap().len(), 3);
    let overall = eval["models"][2]["overall"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&overall));

    w.ok(&[
        "train-dqn",
        "--data",
        "items.txt",
        "--model",
        "global.json",
        "-o",
        "q.json",
    ]);
    assert_eq!(
        json(&w.path("q.json"))["run"]["config"]["dqn"]["episodes"],
        3
    );
    let episodes = std::fs::read_to_string(w.path("q.episodes.jsonl")).unwrap();
    assert_eq!(episodes.lines().count(), 3);

    let summary = w.ok(&[
        "simulate",
        "--data",
        "items.txt",
        "--model",
        "global.json",
        "--strategy",
        "eer",
        "--log",
        "s.jsonl",
    ]);
    assert!(summary.starts_with("FCS+EER: "), "{summary}");
    let log = std::fs::read_to_string(w.path("s.jsonl")).unwrap();
    assert!(log.lines().next().unwrap().contains("\"kind\":\"header\""));
    assert_eq!(json(&w.path("s.run.json"))["inputs"]["strategy"], "eer");

    let table = w.ok(&[
        "bench",
        "--data",
        "items.txt",
        "--model",
        "global.json",
        "--dqn",
        "q.json",
        "-o",
        "bench",
    ]);
    let rows: Vec<&str> = table
        .lines()
        .skip_while(|l| !l.starts_with("Method"))
        .skip(1)
        .take(4)
        .collect();
    let labels: Vec<&str> = rows
        .iter()
        .map(|r| r.split("  ").next().unwrap().trim())
        .collect();
    assert_eq!(labels, ["NN", "FCS", "FCS+EER", "FCS+DQN"], "{table}");
    let report = json(&w.path("bench/report.json"));
    assert_eq!(report["strategies"].as_array().unwrap().len(), 4);
    assert_eq!(report["pairs"], 12);
    assert_eq!(report["config"]["command"], "bench");
    assert!(w.path("bench/curves.csv").exists());
    for name in ["nn", "fcs", "fcs-eer", "fcs-dqn"] {
        let logs = std::fs::read_to_string(w.path(&format!("bench/logs/{name}.jsonl"))).unwrap();
        assert_eq!(
            logs.lines()
                .filter(|l| l.contains("\"kind\":\"header\""))
                .count(),
            12
        );
    }

    // Same inputs, same report.
    w.ok(&[
        "bench",
        "--data",
        "items.txt",
        "--model",
        "global.json",
        "--dqn",
        "q.json",
        "-o",
        "bench2",
    ]);
    let a = std::fs::read_to_string(w.path("bench/report.json")).unwrap();
    let b = std::fs::read_to_string(w.path("bench2/report.json")).unwrap();
    assert_eq!(a, b);

    // Without --dqn the dqn strategy is a usage error.
    assert_eq!(
        code(&w.run(&[
            "bench",
            "--data",
            "items.txt",
            "--model",
            "global.json",
            "-o",
            "bench3"
        ])),
        2
    );
    // A model trained on another schema or width is rejected.
    w.ok(&["gen-data", "-o", "wide.txt", "--dim", "40"]);
    assert_eq!(
        code(&w.run(&[
            "bench",
            "--data",
            "wide.txt",
            "--model",
            "global.json",
            "-o",
            "bench4"
        ])),
        4
    );
}

#[test]
fn simulate_matches_the_benchmark_log() {
    let w = Workspace::new();
    w.ok(&["gen-data", "-o", "items.txt"]);
    w.ok(&["train-emb", "--data", "items.txt", "-o", "m.json"]);
    w.ok(&[
        "bench",
        "--data",
        "items.txt",
        "--model",
        "m.json",
        "--strategies",
        "fcs",
        "-o",
        "bench",
    ]);
    let logs = std::fs::read_to_string(w.path("bench/logs/fcs.jsonl")).unwrap();
    let header: serde_json::Value = serde_json::from_str(logs.lines().next().unwrap()).unwrap();
    let (q, t) = (
        header["query"].as_str().unwrap(),
        header["target"].as_str().unwrap(),
    );
    let first_session: String = {
        let mut out = String::new();
        for (i, line) in logs.lines().enumerate() {
            if i > 0 && line.contains("\"kind\":\"header\"") {
                break;
            }
            out.push_str(line);
            out.push('\n');
        }
        out
    };
    let single = w.ok(&[
        "simulate",
        "--data",
        "items.txt",
        "--model",
        "m.json",
        "--query",
        q,
        "--target",
        t,
    ]);
    assert_eq!(single, first_session);
}
