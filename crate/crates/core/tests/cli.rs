use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BAOZI: &str = "six baozi in a bamboo steamer";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_promptsearch"));
    c.env_remove("RUST_LOG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn optimize(out: &Path) -> Output {
    run(&["optimize", "--prompt", BAOZI, "--seed", "7", "--out", out.to_str().unwrap()])
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(String::from).collect()
}

#[test]
fn help_version_and_usage_errors() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    assert_eq!(run(&["--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["optimize"]).status.code(), Some(2));
    assert_eq!(run(&["optimize", "--prompt", "x", "--clusters", "0"]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--backend", "http", "--tasks", "1"]).status.code(), Some(2));
}

#[test]
fn optimize_writes_the_run_and_export_matches_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = optimize(&out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["run.jsonl", "final.json", "metadata.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert!(fs::read_dir(out.join("images")).unwrap().count() > 0);
    let fin: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("final.json")).unwrap()).unwrap();
    assert_eq!(fin["final_score"], 5.0);
    assert!(fin["calls"]["chat_calls"].as_u64().unwrap() <= fin["chat_call_budget"].as_u64().unwrap());

    let again = optimize(&out);
    assert_eq!(again.status.code(), Some(2));

    let resumed = run(&["optimize", "--resume", "--out", out.to_str().unwrap()]);
    assert_eq!(resumed.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&resumed.stdout).contains("nothing to resume"));

    let e = run(&["export", "--run", out.to_str().unwrap()]);
    assert_eq!(e.status.code(), Some(0), "{}", String::from_utf8_lossy(&e.stderr));
    let rows = lines(&out.join("clusters.csv"));
    assert_eq!(rows[0], "iteration,candidate,x,y,cluster,score,cluster_posterior,sampled");
    let log: Vec<serde_json::Value> =
        lines(&out.join("run.jsonl")).iter().map(|l| serde_json::from_str(l).unwrap()).collect();
    let iterations: Vec<&serde_json::Value> = log.iter().filter(|e| e["event"] == "iteration").collect();
    let reports: usize = iterations.iter().map(|r| r["reports"].as_array().unwrap().len()).sum();
    assert_eq!(rows.len(), reports + 1);
    assert_eq!(reports, 20);
    for row in &rows[1..] {
        let cols: Vec<&str> = row.split(',').collect();
        let it: usize = cols[0].parse().unwrap();
        let cand: u64 = cols[1].parse().unwrap();
        let record = iterations.iter().find(|r| r["iteration"] == it).unwrap();
        let sampled = record["sampled"].as_array().unwrap().iter().any(|v| v.as_u64() == Some(cand));
        assert_eq!(cols[7] == "true", sampled);
    }
}

#[test]
fn corrupt_log_line_is_fatal_on_resume() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(optimize(&out).status.code(), Some(0));
    let log = out.join("run.jsonl");
    let mut ls = lines(&log);
    ls.pop();
    ls[1] = "{\"event\": \"stage1_done\", garbage".into();
    fs::write(&log, ls.join("\n") + "\n").unwrap();
    let o = run(&["optimize", "--resume", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn interrupted_run_resumes_to_the_same_result() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(optimize(&out).status.code(), Some(0));
    let log = out.join("run.jsonl");
    let full = lines(&log);
    let cut = full.iter().position(|l| l.contains("\"event\":\"stage1_done\"")).unwrap() + 1;
    let mut partial = full[..cut].join("\n") + "\n";
    partial.push_str("{\"event\":\"memory_app");
    fs::write(&log, partial).unwrap();
    fs::remove_file(out.join("final.json")).unwrap();
    let o = run(&["optimize", "--resume", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(lines(&log)[1..], full[1..]);
}

#[test]
fn simulate_is_deterministic() {
    let a = run(&["simulate", "--tasks", "4", "--seed", "2"]);
    let b = run(&["simulate", "--tasks", "4", "--seed", "2"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert!(String::from_utf8_lossy(&a.stdout).contains("full"));
}

#[test]
fn prompt_files_get_one_directory_per_prompt() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("prompts.txt");
    fs::write(&file, "two cups on a wooden table\na red apple beside a blue cup\n").unwrap();
    let out = dir.path().join("out");
    let o = run(&["analyze", "--prompt-file", file.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("p1/metadata.json").is_file());
    assert!(out.join("p2/metadata.json").is_file());
}

#[test]
fn secrets_never_reach_disk() {
    let secret = "sk-test-4f1c9e77d2";
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(
        &cfg,
        format!("[chat]\napi_key_env = \"PS_TEST_KEY\"\nbase_url = \"https://h.example/v1?k={secret}\"\n"),
    )
    .unwrap();
    let out = dir.path().join("run");
    let o = bin()
        .env("PS_TEST_KEY", secret)
        .args(["optimize", "--config", cfg.to_str().unwrap(), "--prompt", BAOZI, "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let mut files = vec![out.join("run.jsonl"), out.join("final.json"), out.join("metadata.json")];
    let mut stack = vec![out.join("images")];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    for f in files {
        let bytes = fs::read(&f).unwrap();
        assert!(!bytes.windows(secret.len()).any(|w| w == secret.as_bytes()), "{}", f.display());
    }
    assert!(fs::read_to_string(out.join("run.jsonl")).unwrap().contains("PS_TEST_KEY"));
    assert!(!String::from_utf8_lossy(&o.stdout).contains(secret));
}
