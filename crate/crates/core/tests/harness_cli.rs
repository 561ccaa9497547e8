mod common;

use std::io::Cursor;
use std::path::Path;
use std::process::Command;

use common::Stub;
use grounded_observer::harness::cli::run;
use grounded_observer::harness::corpus::ingest_corpus;
use grounded_observer::harness::report::{parse_trigger_rows, TriggerRates};
use grounded_observer::EvaluationRecord;
use serde_json::json;
use tempfile::TempDir;

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn observer(args: &[&str], stdin: &str) -> Out {
    let mut input = Cursor::new(stdin.as_bytes().to_vec());
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut argv = vec!["observer"];
    argv.extend_from_slice(args);
    let code = run(argv, &mut input, &mut out, &mut err);
    Out {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const CORPUS: &str = r#"{"conv":"c1","turn":0,"speaker":"human","text":"Hi! How was your weekend?"}
{"conv":"c1","turn":1,"speaker":"agent","text":"Great, I went hiking near the lake. You?"}
{"conv":"c1","turn":2,"speaker":"human","text":"Nice. I mostly read a book."}
{"conv":"c1","turn":3,"speaker":"agent","text":"Which book? I love a good mystery novel."}
{"conv":"c2","turn":0,"speaker":"human","text":"Hey there."}
{"conv":"c2","turn":1,"speaker":"agent","text":"Hello! What are you up to today?"}
{"conv":"c2","turn":2,"speaker":"human","text":"Cooking pasta for friends."}
{"conv":"c2","turn":3,"speaker":"agent","text":"Sounds delicious, what sauce?"}
"#;

fn scripted_config(dir: &Path, replies: &[String]) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    let doc = toml::to_string(&json!({"base_provider": {"kind": "scripted", "responses": replies}})).unwrap();
    std::fs::write(&path, doc).unwrap();
    path
}

#[test]
fn help_and_usage_errors() {
    let help = observer(&["--help"], "");
    assert_eq!(help.code, 0);
    for sub in ["chat", "serve", "eval", "score", "stats"] {
        assert!(help.stdout.contains(sub), "{sub}");
    }
    assert_eq!(observer(&[], "").code, 1);
    assert_eq!(observer(&["frobnicate"], "").code, 1);
    assert_eq!(observer(&["stats"], "").code, 1);
    assert_eq!(observer(&["eval", "--corpus", "x.jsonl", "--out", "o", "--mode", "maybe"], "").code, 1);
}

#[test]
fn stats_outputs_one_row_per_test_and_criterion() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("pairs.csv");
    let mut csv = String::from("id,criterion,a,b\n");
    for i in 0..9 {
        let i = f64::from(i);
        csv.push_str(&format!("c{i},brevity,{},{}\n", 3.0 + i * 0.1, 2.0 + (i * 0.37) % 1.0));
        csv.push_str(&format!("c{i},tone,{},{}\n", 1.0 + (i * 0.61) % 2.0, 1.5 + (i * 0.23) % 1.3));
    }
    std::fs::write(&input, csv).unwrap();
    let out = observer(&["stats", "--in", p(&input), "--holm"], "");
    assert_eq!(out.code, 0, "{}", out.stderr);
    let mut rdr = csv::Reader::from_reader(out.stdout.as_bytes());
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>(),
        ["test", "criterion", "n", "statistic", "p", "p_holm"]
    );
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        let (p, h): (f64, f64) = (r[4].parse().unwrap(), r[5].parse().unwrap());
        assert!((0.0..=1.0).contains(&p) && h >= p - 1e-6 && h <= 1.0);
    }

    let only = observer(&["stats", "--in", p(&input), "--tests", "t"], "");
    assert_eq!(only.code, 0);
    assert_eq!(only.stdout.lines().count(), 3);
    assert!(only.stdout.lines().nth(1).unwrap().ends_with(','));
}

#[test]
fn stats_error_codes() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("pairs.csv");
    std::fs::write(&input, "id,criterion,a,b\nx,tone,1,2\n").unwrap();
    assert_eq!(observer(&["stats", "--in", p(&input), "--tests", "anova"], "").code, 1);
    assert_eq!(observer(&["stats", "--in", p(&dir.path().join("none.csv"))], "").code, 2);
    std::fs::write(&input, "id,criterion,a,b\nx,tone,1,notanumber\n").unwrap();
    let bad = observer(&["stats", "--in", p(&input)], "");
    assert_eq!(bad.code, 2);
    assert!(bad.stderr.contains(":2:"), "{}", bad.stderr);
}

#[test]
fn score_prints_likeness_and_writes_report() {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    std::fs::write(&corpus, CORPUS).unwrap();
    let out_dir = dir.path().join("scored");
    let out = observer(&["score", "--corpus", p(&corpus), "--out", p(&out_dir)], "");
    assert_eq!(out.code, 0, "{}", out.stderr);
    let mut lines = out.stdout.lines();
    assert_eq!(lines.next(), Some("conv,criterion,human_likeness"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 8);
    for r in rows {
        let v: f64 = r.rsplit(',').next().unwrap().parse().unwrap();
        assert!((0.0..=4.0).contains(&v));
    }
    let scores = std::fs::read_to_string(out_dir.join("scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 9);
    assert!(out_dir.join("report.md").exists() && out_dir.join("report.csv").exists());
}

#[test]
fn score_with_annotations() {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    std::fs::write(&corpus, CORPUS).unwrap();
    let ann = dir.path().join("ann.jsonl");
    std::fs::write(
        &ann,
        concat!(
            r#"{"conv":"c1","turn":0,"rater":"r1","criterion":"tone","score":5}"#,
            "\n",
            r#"{"conv":"c1","turn":1,"rater":"r1","criterion":"tone","score":1}"#,
            "\n",
        ),
    )
    .unwrap();
    let out = observer(&["score", "--corpus", p(&corpus), "--annotations", p(&ann)], "");
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert_eq!(out.stdout, "conv,criterion,human_likeness\nc1,tone,4.000000\n");

    std::fs::write(&ann, r#"{"conv":"c1","turn":9,"rater":"r1","criterion":"tone","score":5}"#).unwrap();
    assert_eq!(observer(&["score", "--corpus", p(&corpus), "--annotations", p(&ann)], "").code, 2);
}

#[test]
fn score_rejects_malformed_corpus() {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    std::fs::write(&corpus, "{\"conv\":\"c1\",\"turn\":0,\"speaker\":\"human\"}\n").unwrap();
    let out = observer(&["score", "--corpus", p(&corpus)], "");
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("corpus.jsonl:1"), "{}", out.stderr);
}

#[test]
fn eval_writes_traces_transcripts_and_report() {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    std::fs::write(&corpus, CORPUS).unwrap();
    let replies: Vec<String> = (0..40).map(|i| format!("That is nice, tell me more about it {i}.")).collect();
    let config = scripted_config(dir.path(), &replies);
    let out_dir = dir.path().join("eval");
    let out = observer(
        &["eval", "--corpus", p(&corpus), "--out", p(&out_dir), "--config", p(&config), "--seed", "5"],
        "",
    );
    assert_eq!(out.code, 0, "{}", out.stderr);

    let traces = std::fs::read_to_string(out_dir.join("traces.jsonl")).unwrap();
    let records: Vec<EvaluationRecord> = traces.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 4);
    let transcripts = ingest_corpus(&out_dir.join("transcripts.jsonl")).unwrap();
    assert_eq!(transcripts.conversations.len(), 2);
    assert!(transcripts.conversations.iter().all(|c| c.turns.len() == 4));

    let report = std::fs::read_to_string(out_dir.join("report.csv")).unwrap();
    let rows = parse_trigger_rows(&report);
    let rates = TriggerRates::from_records(&records);
    assert_eq!(rows["turns"], rates.turns.to_string());
    assert_eq!(rows["regenerations"], rates.regenerations.to_string());
    assert_eq!(rows["forced_turns"], rates.forced_turns.to_string());
    assert!(std::fs::read_to_string(out_dir.join("report.md")).unwrap().contains("(observer)"));
}

#[test]
fn eval_base_mode_never_regenerates() {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    std::fs::write(&corpus, CORPUS).unwrap();
    let long = vec![common::words(90); 4];
    let config = scripted_config(dir.path(), &long);
    let out_dir = dir.path().join("eval");
    let out = observer(
        &["eval", "--corpus", p(&corpus), "--out", p(&out_dir), "--config", p(&config), "--mode", "base"],
        "",
    );
    assert_eq!(out.code, 0, "{}", out.stderr);
    let rows = parse_trigger_rows(&std::fs::read_to_string(out_dir.join("report.csv")).unwrap());
    assert_eq!(rows["regenerations"], "0");
    assert_eq!(rows["turns"], "4");
}

#[test]
fn eval_upstream_failure_exits_3_with_partial_outputs() {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    std::fs::write(&corpus, CORPUS).unwrap();
    let config = scripted_config(dir.path(), &["Hello!".to_string()]);
    let out_dir = dir.path().join("eval");
    let out = observer(
        &["eval", "--corpus", p(&corpus), "--out", p(&out_dir), "--config", p(&config), "--mode", "base"],
        "",
    );
    assert_eq!(out.code, 3, "{}", out.stderr);
    assert!(out_dir.join("traces.jsonl").exists());
    let transcripts = std::fs::read_to_string(out_dir.join("transcripts.jsonl")).unwrap();
    let kept: Vec<&str> = transcripts.lines().collect();
    assert_eq!(kept.len(), 4);
    assert!(kept.iter().all(|l| !l.contains("\"agent\"") || l.contains("Hello!")));
}

#[test]
fn eval_bad_config_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    std::fs::write(&corpus, CORPUS).unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "max_regenerations = -1\n").unwrap();
    let out = observer(
        &["eval", "--corpus", p(&corpus), "--out", p(&dir.path().join("o")), "--config", p(&config)],
        "",
    );
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("bad.toml"), "{}", out.stderr);
}

#[test]
fn chat_talks_to_upstream_without_leaking_the_key() {
    let secret = "sk-cli-0f1e2d3c4b";
    std::env::set_var("HARNESS_CLI_CHAT_KEY", secret);
    let stub = Stub::echo("Nice to meet you!");
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("c.toml");
    std::fs::write(
        &config,
        "[base_provider]\napi_key_env = \"HARNESS_CLI_CHAT_KEY\"\nbackoff_ms = 1\n",
    )
    .unwrap();
    let out = observer(
        &["chat", "--config", p(&config), "--base-url", &stub.url],
        "hello\n\nhow are you\n/quit\nignored\n",
    );
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert_eq!(out.stdout, "Nice to meet you!\nNice to meet you!\n");
    let seen = stub.seen();
    assert_eq!(seen.len(), 2);
    assert_eq!(seen[0].authorization.as_deref(), Some(&*format!("Bearer {secret}")));

    let down = Stub::start(|_, _| (500, json!({})));
    let fail = observer(
        &["chat", "--config", p(&config), "--base-url", &down.url],
        "hello\n",
    );
    assert_eq!(fail.code, 3);
    assert!(!fail.stderr.contains(secret) && !fail.stdout.contains(secret));
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_observer");
    let dir = TempDir::new().unwrap();
    let status = |args: &[&str]| Command::new(bin).args(args).output().unwrap().status.code();
    assert_eq!(status(&["--version"]), Some(0));
    assert_eq!(status(&["bogus"]), Some(1));
    assert_eq!(status(&["score", "--corpus", p(&dir.path().join("missing.jsonl"))]), Some(2));
}
