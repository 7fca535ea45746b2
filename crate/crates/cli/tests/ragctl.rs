use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_ragctl");

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

struct Env {
    dir: tempfile::TempDir,
}

impl Env {
    fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let cfg = format!("[collections.docs]\nstore_path = \"docs.ragv\"\n{extra}");
        std::fs::write(dir.path().join("rag.toml"), cfg).unwrap();
        Self { dir }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn cmd(&self, args: &[&str]) -> Command {
        let mut c = Command::new(BIN);
        c.current_dir(self.path())
            .env_remove("RUST_LOG")
            .args(["--config", "rag.toml"])
            .args(args);
        c
    }

    fn run(&self, args: &[&str]) -> Output {
        self.cmd(args).output().unwrap()
    }

    fn run_stdin(&self, args: &[&str], stdin: &str) -> Output {
        let mut child = self
            .cmd(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
        child.wait_with_output().unwrap()
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path().join(name);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).unwrap();
        }
        std::fs::write(&p, text).unwrap();
        p
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn chunk_count(line: &str) -> usize {
    let tail = line.rsplit(", ").next().unwrap();
    tail.split(' ').next().unwrap().parse().unwrap()
}

#[test]
fn ingest_one_text_file() {
    let env = Env::new("");
    env.write("note.txt", "hello world");
    let o = env.run(&["ingest", "docs", "note.txt"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), "note.txt: 1 document, 1 chunk\n");
    assert!(env.path().join("docs.ragv").exists());
}

#[test]
fn ingest_dress_code() {
    let env = Env::new("");
    let p = fixture("dress_code_standards.txt");
    let o = env.run(&["ingest", "docs", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains(": 1 document, "), "{out}");
    assert!(chunk_count(out.trim_end()) >= 7, "{out}");
}

#[test]
fn ingest_partial_and_total_failure() {
    let env = Env::new("");
    env.write("good.txt", "the good file");
    let o = env.run(&["ingest", "docs", "missing.txt", "good.txt"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stdout(&o), "good.txt: 1 document, 1 chunk\n");
    assert!(stderr(&o).contains("missing.txt: error: file not found"));
    let q = env.run(&["query", "docs", "good?", "--show-sources"]);
    assert!(stdout(&q).contains("good.txt #0"));

    let o = env.run(&["ingest", "docs", "missing.txt", "also-missing.txt"]);
    assert_eq!(o.status.code(), Some(1));
    let o = env.run(&["ingest", "nope", "good.txt"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown collection"));
}

#[test]
fn query_empty_collection_fails() {
    let env = Env::new("");
    let o = env.run(&["query", "docs", "anything?"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("empty"), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
}

#[test]
fn query_echo_sources_and_idempotence() {
    let env = Env::new("");
    let corpus = fixture("refund_corpus");
    let paths: Vec<String> = ["returns_policy.txt", "shipping_guide.txt", "warranty_terms.txt"]
        .iter()
        .map(|f| corpus.join(f).display().to_string())
        .collect();
    let mut args = vec!["ingest", "docs"];
    args.extend(paths.iter().map(String::as_str));
    assert_eq!(env.run(&args).status.code(), Some(0));

    let q = "How long is the refund window for returns?";
    let first = env.run(&["query", "docs", q, "--show-sources"]);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    let out = stdout(&first);
    assert!(out.contains(q));
    let listed: Vec<&str> = out
        .split("\nSources:\n")
        .nth(1)
        .unwrap()
        .lines()
        .filter(|l| !l.is_empty())
        .collect();
    assert!(!listed.is_empty() && listed.len() <= 4, "{listed:?}");
    assert!(listed.iter().all(|l| l.contains("returns_policy.txt")));

    let second = env.run(&["query", "docs", q, "--show-sources"]);
    assert_eq!(first.stdout, second.stdout);

    let narrow = env.run(&["query", "docs", q, "--k", "1", "--show-sources"]);
    assert_eq!(stdout(&narrow).matches("(score ").count(), 1);
    let plain = env.run(&["query", "docs", q]);
    assert!(!stdout(&plain).contains("Sources:"));
}

#[test]
fn chat_session() {
    let env = Env::new("");
    env.write("pets.txt", "Cats sleep a lot. Dogs need walks every day.");
    env.run(&["ingest", "docs", "pets.txt"]);
    let o = env.run_stdin(
        &["chat", "docs"],
        "do cats sleep?\n\nand dogs?\n/sources\nwhat else?\n/quit\nnever reached\n",
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    // One prompt per line read, the blank line included.
    assert_eq!(out.matches("> ").count(), 6);
    let answers: Vec<&str> = out.split("> ").filter(|s| s.starts_with("ECHO:")).collect();
    assert_eq!(answers.len(), 3, "{out}");
    assert!(!answers[0].contains("Conversation so far"));
    assert!(answers[1].starts_with("ECHO:Conversation so far:\nUser: do cats sleep?\nAssistant: ECHO:"));
    assert!(answers[1].trim_end().ends_with("Question: and dogs?\nAnswer:"));
    assert!(answers[2].contains("User: and dogs?"));
    assert!(!answers[1].contains("Sources:"));
    assert!(answers[2].contains("\nSources:\n  1. pets.txt #0 (score "));
    assert!(out.contains("sources on"));
    assert!(!out.contains("never reached"));

    let o = env.run_stdin(&["chat", "docs"], "");
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn eval_reports_citation_accuracy() {
    let env = Env::new("");
    env.write("empty.json", "[]");
    let o = env.run(&["eval", "docs", "empty.json", "--out", "empty-report.json"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("cases: 0\n"));
    assert!(stdout(&o).contains("citation accuracy: 100.0%"));

    let topics: Vec<Value> = serde_json::from_str(&std::fs::read_to_string(fixture("topics.json")).unwrap()).unwrap();
    let mut args = vec!["ingest".to_string(), "docs".to_string()];
    for t in &topics {
        let p = env.write(t["source"].as_str().unwrap(), t["text"].as_str().unwrap());
        args.push(p.display().to_string());
    }
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    assert_eq!(env.run(&args).status.code(), Some(0));

    let seeded = fixture("eval_topics.json");
    let o = env.run(&["eval", "docs", seeded.to_str().unwrap(), "--out", "report.json"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("cases: 10\n"));
    assert!(stdout(&o).contains("citation accuracy: 100.0%"), "{}", stdout(&o));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(env.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["accuracy_percent"], 100.0);
    assert_eq!(report["results"].as_array().unwrap().len(), 10);

    let mut cases: Vec<Value> = serde_json::from_str(&std::fs::read_to_string(&seeded).unwrap()).unwrap();
    cases.push(serde_json::json!({"question": "Where is the zebra saddle kept?", "expected_source": "topics/zebra.txt"}));
    env.write("impossible.json", &serde_json::to_string(&cases).unwrap());
    let o = env.run(&["eval", "docs", "impossible.json"]);
    let out = stdout(&o);
    assert!(out.contains("passed: 10\n"), "{out}");
    assert!(out.contains("citation accuracy: 90.9%"), "{out}");
    assert!(out.contains("FAIL \"Where is the zebra saddle kept?\""));
}

#[test]
fn invalid_config_exits_1() {
    let env = Env::new("[collections.docs.splitter]\nchunk_size = 100\nchunk_overlap = 100\n");
    let o = env.run(&["serve"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("invalid config field collections.docs.splitter"), "{err}");

    let missing = Env::new("");
    let o = missing.cmd(&["serve"]).args(["--config", "nope.toml"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn api_key_comes_from_env_file_and_stays_hidden() {
    let key = "sk-cli-test-9f8e7d6c";
    let env = Env::new(
        "[chat]\nbackend = \"remote\"\nendpoint = \"http://127.0.0.1:9/v1\"\napi_key_ref = \"RAGCTL_TEST_CHAT_KEY\"\n",
    );
    env.write("note.txt", "hello world");

    let o = env.cmd(&["query", "docs", "hi?"]).env_remove("RAGCTL_TEST_CHAT_KEY").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("RAGCTL_TEST_CHAT_KEY"));

    env.write(".env", &format!("# secrets\nRAGCTL_TEST_CHAT_KEY={key}\n"));
    env.run(&["ingest", "docs", "note.txt"]);
    let o = env
        .cmd(&["query", "docs", "hi?"])
        .env_remove("RAGCTL_TEST_CHAT_KEY")
        .env("RUST_LOG", "trace")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("chat"), "{err}");
    assert!(!err.contains(key) && !stdout(&o).contains(key));
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn start_server(env: &Env) -> (Server, String) {
    let mut child = env
        .cmd(&["serve"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let base = line
        .trim()
        .strip_prefix("listening on ")
        .unwrap_or_else(|| panic!("unexpected output {line:?}"))
        .to_string();
    (Server(child), base)
}

fn http() -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(20))
        .build()
        .unwrap()
}

#[test]
fn serve_survives_kill_after_ingest() {
    let env = Env::new("[service]\nport = 0\n");
    let (mut server, base) = start_server(&env);
    let client = http();
    let health: Value = client.get(format!("{base}/v1/health")).send().unwrap().json().unwrap();
    assert_eq!(health["status"], "ok");
    assert_eq!(client.get(format!("{base}/v1/healthz")).send().unwrap().status(), 404);

    let resp = client
        .post(format!("{base}/v1/collections/docs/ingest"))
        .json(&serde_json::json!({"path": fixture("dress_code_standards.txt")}))
        .send()
        .unwrap();
    assert_eq!(resp.status(), 200);
    let body: Value = resp.json().unwrap();
    let n = body["chunk_count"].as_u64().unwrap();
    assert!(n >= 7);

    server.0.kill().unwrap();
    server.0.wait().unwrap();

    let (_server, base) = start_server(&env);
    let health: Value = client.get(format!("{base}/v1/health")).send().unwrap().json().unwrap();
    assert_eq!(health["collections"][0]["chunk_count"].as_u64().unwrap(), n);
    let q = env.run(&["query", "docs", "What is the work dress code for male employees?"]);
    assert_eq!(q.status.code(), Some(0));
}

#[test]
fn serve_port_busy_exits_1() {
    let busy = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = busy.local_addr().unwrap().port();
    let env = Env::new(&format!("[service]\nport = {port}\n"));
    let start = Instant::now();
    let o = env.run(&["serve"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("cannot bind"), "{}", stderr(&o));
    assert!(start.elapsed() < Duration::from_secs(10));
}
