use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use replykit::pipeline::PipelineConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_replykit"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let config = dir.join("config.toml");
    bin().arg("--config").arg(&config).args(args).output().expect("spawn replykit")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// A demo workspace taken through every training stage once, with a
/// scorer small enough to train in a few seconds.
fn workspace() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        let out = bin()
            .args(["synth-corpus", "--pairs", "800", "--seed", "3", "--out-dir"])
            .arg(&dir)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        for f in ["corpus.jsonl", "pairs.jsonl", "seeds.json", "config.toml"] {
            assert!(dir.join(f).exists(), "{f} missing");
        }
        let path = dir.join("config.toml");
        let mut c = PipelineConfig::load(&path).unwrap();
        c.scorer.recurrent.embed_dim = 8;
        c.scorer.recurrent.hidden_dim = 16;
        c.scorer.recurrent.projection_dim = 8;
        c.scorer.recurrent.epochs = 1;
        c.eval.beam_messages = 20;
        std::fs::write(&path, c.to_toml()).unwrap();

        let stats: serde_json::Value = serde_json::from_str(&ok(&dir, &["ingest"])).unwrap();
        assert!(stats.is_object());
        let summary: serde_json::Value = serde_json::from_str(&ok(&dir, &["build-response-set"])).unwrap();
        assert!(summary.is_object());
        ok(&dir, &["train-scorer"]);
        ok(&dir, &["train-trigger"]);
        let cal: serde_json::Value = serde_json::from_str(&ok(&dir, &["calibrate-trigger", "--target", "0.5"])).unwrap();
        assert!(cal["threshold"].is_number(), "{cal}");
        for f in ["vocab.json", "processed_pairs.jsonl", "response_set.json", "scorer.rfsm", "trigger.rfsm"] {
            assert!(dir.join(f).exists(), "{f} missing");
        }
        dir
    })
}

fn write_message(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    let msg = serde_json::json!({"id": name, "subject": "lunch", "body": body});
    std::fs::write(&path, msg.to_string()).unwrap();
    path
}

#[test]
fn suggest_is_byte_identical_across_invocations() {
    let dir = workspace();
    let msg = write_message(dir, "q.json", "Are you free for the lunch on Friday?");
    let msg = msg.to_str().unwrap();
    let a = ok(dir, &["suggest", "--message-file", msg]);
    let b = ok(dir, &["suggest", "--message-file", msg]);
    assert_eq!(a, b);
    let r: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(r["id"], "q.json");
    assert!(r.get("timings").is_none());
    let timed: serde_json::Value =
        serde_json::from_str(&ok(dir, &["suggest", "--timings", "--message-file", msg])).unwrap();
    if timed["triggered"] == true {
        assert!(timed["timings"].is_object());
    }
}

#[test]
fn suggest_reads_json_lines_from_stdin() {
    use std::io::Write;
    let dir = workspace();
    let mut child = bin()
        .arg("--config")
        .arg(dir.join("config.toml"))
        .args(["suggest", "--stdin"])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let input = [
        serde_json::json!({"id": "a", "body": "Can we move the lunch from Monday to Friday?"}),
        serde_json::json!({"id": "b", "body": "Thanks for the review notes from Tuesday."}),
    ];
    {
        let mut stdin = child.stdin.take().unwrap();
        for m in &input {
            writeln!(stdin, "{m}").unwrap();
        }
    }
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let lines: Vec<serde_json::Value> =
        String::from_utf8(out.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["id"], "a");
    assert_eq!(lines[1]["id"], "b");
}

#[test]
fn eval_and_bench_beam_report() {
    let dir = workspace();
    let out = run(dir, &["eval"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let ppl = &report["perplexity"];
    assert!(ppl["uniform"].as_f64().unwrap() > 1.0);
    assert!(ppl["recurrent"].as_f64().unwrap() > 1.0);
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty(), "table expected on stderr");

    let curve: serde_json::Value = serde_json::from_str(&ok(dir, &["bench-beam", "--beams", "1,4,16"])).unwrap();
    let points = curve.as_array().unwrap();
    assert_eq!(points.len(), 3);
    let rates: Vec<f64> = points.iter().map(|p| p["match_rate"].as_f64().unwrap()).collect();
    assert!(rates.windows(2).all(|w| w[1] >= w[0]), "{rates:?}");
}

#[test]
fn katz_scorer_trains_from_the_command_line() {
    let dir = workspace();
    let copy = tempfile::tempdir().unwrap();
    for f in ["config.toml", "vocab.json", "processed_pairs.jsonl", "response_set.json", "trigger.rfsm", "corpus.jsonl"] {
        std::fs::copy(dir.join(f), copy.path().join(f)).unwrap();
    }
    ok(copy.path(), &["train-scorer", "--kind", "katz"]);
    let msg = write_message(copy.path(), "m.json", "Are you free for the lunch on Monday?");
    ok(copy.path(), &["suggest", "--message-file", msg.to_str().unwrap()]);
}

#[test]
fn usage_errors_exit_one() {
    let out = bin().arg("no-such-command").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin().arg("ingest").output().unwrap();
    assert_eq!(out.status.code(), Some(1), "missing --config");
    let out = bin().args(["--config", "x.toml", "bench-beam", "--beams", "0"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("config.toml"), "not_a_field = 1\n").unwrap();
    assert_eq!(run(dir.path(), &["ingest"]).status.code(), Some(1));
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("config.toml"), "").unwrap();
    let out = run(dir.path(), &["ingest"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(dir.path(), &["suggest", "--message-file", "missing.json"]);
    assert_eq!(out.status.code(), Some(2));
}
