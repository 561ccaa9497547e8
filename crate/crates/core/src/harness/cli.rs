use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use super::corpus::{ingest_corpus, write_corpus, Corpus, Criterion, TurnRecord};
use super::report::{render, write_report, ReportInput, TestRow};
use super::scoring::{auto_score, human_likeness, likeness_from_scores, HumanLikenessScore, TurnScores};
use super::stats::{brown_forsythe, holm_correct, paired_t, wilcoxon_signed_rank};
use crate::client::ProviderKind;
use crate::config::{default_rules, load_config, parse_rules, EngineConfig, RuleSet};
use crate::conversation::Speaker;
use crate::engine::{run_session, Engine, SessionState};
use crate::service::{self, Service, ServiceOptions, API_KEY_VAR_ENV};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Upstream(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Upstream(_) => 3,
        }
    }
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "observer", version, about = "Gated chat proxy and evaluation harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Chat with the gated engine on stdin/stdout.
    Chat(ChatArgs),
    /// Run the HTTP proxy.
    Serve(ServeArgs),
    /// Replay a corpus's human turns through the engine and report.
    Eval(EvalArgs),
    /// Auto-score a corpus and compute human-likeness.
    Score(ScoreArgs),
    /// Paired tests over a CSV of `id,criterion,a,b` rows.
    Stats(StatsArgs),
}

#[derive(Debug, clap::Args)]
pub struct EngineArgs {
    /// Engine config (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overlay rules (TOML `[[rule]]` tables).
    #[arg(long)]
    pub rules: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct ChatArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Base chat-completions endpoint; overrides the config.
    #[arg(long)]
    pub base_url: Option<String>,
}

#[derive(Debug, clap::Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long, default_value = "observer-store")]
    pub store_dir: PathBuf,
    /// Concurrent turns before requests get 429.
    #[arg(long, default_value_t = 64)]
    pub max_sessions: usize,
    /// Environment variable holding a bearer token clients must send.
    #[arg(long)]
    pub auth_token_env: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// No overlays; every first candidate is accepted.
    Base,
    Observer,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "observer")]
    pub mode: Mode,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, clap::Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Likert annotations (JSONL); used for human-likeness when given.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for scores.csv and the report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct StatsArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Comma-separated subset of wilcoxon, t, bf.
    #[arg(long, value_delimiter = ',', default_value = "wilcoxon,t,bf")]
    pub tests: Vec<String>,
    /// Holm-adjust each test's p values across criteria.
    #[arg(long)]
    pub holm: bool,
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Config and rules from the given files (defaults otherwise), with the
/// upstream credential variable taken from the environment when named there.
pub fn load_engine_inputs(args: &EngineArgs) -> Result<(EngineConfig, RuleSet), CliError> {
    let mut config = match &args.config {
        Some(p) => load_config(&read(p)?).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?,
        None => EngineConfig::default(),
    };
    if let Ok(var) = std::env::var(API_KEY_VAR_ENV) {
        if !var.is_empty() {
            config.base_provider.api_key_env = Some(var.clone());
            if let Some(o) = config.observer_provider.as_mut() {
                o.api_key_env = Some(var);
            }
        }
    }
    let rules = match &args.rules {
        Some(p) => parse_rules(&read(p)?).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?,
        None => default_rules(&config),
    };
    Ok((config, rules))
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run<I, T>(args: I, stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(stdout, "{text}") } else { write!(stderr, "{text}") };
            return code;
        }
    };
    let result = match cli.command {
        Command::Chat(a) => chat(a, stdin, stdout, stderr),
        Command::Serve(a) => serve(a),
        Command::Eval(a) => eval(a, stderr),
        Command::Score(a) => score(a, stdout),
        Command::Stats(a) => stats(a, stdout, stderr),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn chat(a: ChatArgs, stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let (mut config, rules) = load_engine_inputs(&a.engine)?;
    if let Some(url) = a.base_url {
        config.base_provider.kind = ProviderKind::HttpChat;
        config.base_provider.endpoint = url;
    }
    if let Some(seed) = a.seed {
        config.rng_seed = seed;
    }
    let seed = config.rng_seed;
    let engine = Engine::from_config(config, rules);
    let mut session = SessionState::new("chat", seed, engine.clock().now());
    let mut failures = 0usize;
    for line in stdin.lines() {
        let line = line.map_err(data)?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if text == "/quit" {
            break;
        }
        match session.step(&engine, text) {
            Ok(r) => {
                let _ = writeln!(stdout, "{}", r.accepted_text);
                if r.forced_count > 0 || r.flagged_implicit() {
                    let _ = writeln!(
                        stderr,
                        "[{} candidate(s), {} forced{}]",
                        r.candidates.len(),
                        r.forced_count,
                        if r.flagged_implicit() { ", implicit advice queued" } else { "" }
                    );
                }
            }
            Err(e) => {
                failures += 1;
                let _ = writeln!(stderr, "error: {e}");
            }
        }
        let _ = stdout.flush();
    }
    if failures > 0 {
        return Err(CliError::Upstream(format!("{failures} turn(s) failed")));
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    let (config, rules) = load_engine_inputs(&a.engine)?;
    let auth_token = match &a.auth_token_env {
        Some(var) => Some(
            std::env::var(var).map_err(|_| CliError::Usage(format!("environment variable `{var}` is not set")))?,
        ),
        None => None,
    };
    let opts = ServiceOptions {
        store_dir: a.store_dir,
        max_concurrent: a.max_sessions,
        auth_token,
    };
    let svc = Service::open(Engine::from_config(config, rules), opts).map_err(data)?;
    let rt = tokio::runtime::Runtime::new().map_err(data)?;
    rt.block_on(service::serve(svc, a.addr))
        .map_err(|e| CliError::Usage(format!("cannot serve on {}: {e}", a.addr)))
}

/// Per-conversation mean human and agent score for each criterion.
fn paired_means(scores: &[TurnScores]) -> BTreeMap<Criterion, (Vec<f64>, Vec<f64>)> {
    let mut by_conv: BTreeMap<&str, Vec<&TurnScores>> = BTreeMap::new();
    for s in scores {
        by_conv.entry(s.conv.as_str()).or_default().push(s);
    }
    let mut out: BTreeMap<Criterion, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for group in by_conv.values() {
        for c in Criterion::ALL {
            let mean = |sp: Speaker| {
                let xs: Vec<f64> = group
                    .iter()
                    .filter(|s| s.speaker == sp)
                    .map(|s| f64::from(s.scores.get(c)))
                    .collect();
                (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
            };
            if let (Some(h), Some(g)) = (mean(Speaker::Human), mean(Speaker::Agent)) {
                let e = out.entry(c).or_default();
                e.0.push(h);
                e.1.push(g);
            }
        }
    }
    out
}

fn wilcoxon_rows(scores: &[TurnScores]) -> Vec<TestRow> {
    let mut rows: Vec<TestRow> = paired_means(scores)
        .into_iter()
        .filter_map(|(c, (h, g))| {
            let r = wilcoxon_signed_rank(&h, &g).ok()?;
            Some(TestRow {
                test: "wilcoxon".into(),
                criterion: c.as_str().into(),
                n: r.n,
                statistic: r.w,
                p: r.p,
                p_holm: None,
            })
        })
        .collect();
    let ps: Vec<f64> = rows.iter().map(|r| r.p).collect();
    if let Ok(adj) = holm_correct(&ps) {
        for (r, a) in rows.iter_mut().zip(adj) {
            r.p_holm = Some(a);
        }
    }
    rows
}

fn eval(a: EvalArgs, stderr: &mut dyn Write) -> Result<(), CliError> {
    let corpus = ingest_corpus(&a.corpus).map_err(data)?;
    let (mut config, mut rules) = load_engine_inputs(&a.engine)?;
    if let Some(seed) = a.seed {
        config.rng_seed = seed;
    }
    if a.mode == Mode::Base {
        rules = RuleSet::default();
    }
    let seed = config.rng_seed;
    let engine = Engine::from_config(config.clone(), rules);

    let mut traces = String::new();
    let mut transcripts: Vec<TurnRecord> = Vec::new();
    let mut records = Vec::new();
    let mut scores = Vec::new();
    let mut likeness = Vec::new();
    let mut upstream_failures = 0usize;
    for conv in &corpus.conversations {
        let humans: Vec<&str> = conv
            .turns
            .iter()
            .filter(|t| t.speaker == Speaker::Human)
            .map(|t| t.text.as_str())
            .collect();
        let out = run_session(&engine, &conv.id, seed, humans);
        for (turn, msg) in &out.errors {
            upstream_failures += 1;
            let _ = writeln!(stderr, "conv `{}` turn {turn}: {msg}", conv.id);
        }
        for r in &out.records {
            traces.push_str(&serde_json::to_string(r).expect("records serialize"));
            traces.push('\n');
        }
        // Transcripts stop at the first failed turn so indices stay contiguous.
        let mut generated = out.conversation.clone();
        if let Some(cut) = generated.turns.iter().position(|t| t.placeholder) {
            generated.turns.truncate(cut);
        }
        transcripts.extend(generated.turns.iter().map(|t| TurnRecord {
            conv: conv.id.clone(),
            turn: t.index,
            speaker: t.speaker,
            text: t.text.clone(),
        }));
        let s = auto_score(&generated, &config, engine.extractors()).map_err(data)?;
        likeness.extend(likeness_from_scores(&conv.id, &s));
        scores.extend(s);
        records.extend(out.records);
    }

    let tests = wilcoxon_rows(&scores);
    let mode = match a.mode {
        Mode::Base => "base",
        Mode::Observer => "observer",
    };
    let title = format!("Evaluation report ({mode})");
    let report = render(&ReportInput {
        title: &title,
        records: &records,
        scores: &scores,
        likeness: &likeness,
        tests: &tests,
    });
    std::fs::create_dir_all(&a.out).map_err(data)?;
    std::fs::write(a.out.join("traces.jsonl"), traces).map_err(data)?;
    std::fs::write(a.out.join("transcripts.jsonl"), write_corpus(&transcripts)).map_err(data)?;
    write_report(&a.out, &report).map_err(data)?;
    if upstream_failures > 0 {
        return Err(CliError::Upstream(format!(
            "{upstream_failures} turn(s) failed; outputs written to {}",
            a.out.display()
        )));
    }
    Ok(())
}

/// Human-likeness from annotations: every rating of a human turn against
/// every rating of an agent turn, per conversation and criterion.
fn likeness_from_annotations(corpus: &Corpus) -> Result<Vec<HumanLikenessScore>, CliError> {
    let mut out = Vec::new();
    for conv in &corpus.conversations {
        for c in Criterion::ALL {
            let side = |sp: Speaker| -> Vec<u8> {
                corpus
                    .annotations
                    .iter()
                    .filter(|a| a.conv == conv.id && a.criterion == c && conv.turns[a.turn].speaker == sp)
                    .map(|a| a.score)
                    .collect()
            };
            let (h, g) = (side(Speaker::Human), side(Speaker::Agent));
            if h.is_empty() || g.is_empty() {
                continue;
            }
            out.push(human_likeness(&conv.id, c, &h, &g).map_err(data)?);
        }
    }
    Ok(out)
}

fn score(a: ScoreArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut corpus = ingest_corpus(&a.corpus).map_err(data)?;
    if let Some(p) = &a.annotations {
        let extra = ingest_corpus(p).map_err(data)?;
        if !extra.conversations.is_empty() {
            return Err(CliError::Data(format!("{}: annotation file holds turn records", p.display())));
        }
        corpus.annotations.extend(extra.annotations);
    }
    corpus.check_annotations().map_err(data)?;
    let config = match &a.config {
        Some(p) => load_config(&read(p)?).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?,
        None => EngineConfig::default(),
    };
    let extractors = crate::extract::Extractors::standard(config.embedding_dim);
    let mut scores = Vec::new();
    for conv in &corpus.conversations {
        scores.extend(auto_score(conv, &config, &extractors).map_err(data)?);
    }
    let likeness = if corpus.annotations.is_empty() {
        corpus
            .conversations
            .iter()
            .flat_map(|c| {
                let own: Vec<TurnScores> = scores.iter().filter(|s| s.conv == c.id).cloned().collect();
                likeness_from_scores(&c.id, &own)
            })
            .collect()
    } else {
        likeness_from_annotations(&corpus)?
    };

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["conv", "criterion", "human_likeness"]).map_err(data)?;
    for l in &likeness {
        w.write_record([l.conv.as_str(), l.criterion.as_str(), &format!("{:.6}", l.value)])
            .map_err(data)?;
    }
    stdout.write_all(&w.into_inner().map_err(data)?).map_err(data)?;

    if let Some(out) = &a.out {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["conv", "turn", "speaker", "brevity", "tone", "specificity", "coherence"])
            .map_err(data)?;
        for s in &scores {
            let speaker = match s.speaker {
                Speaker::Human => "human",
                Speaker::Agent => "agent",
            };
            let mut row = vec![s.conv.clone(), s.turn.to_string(), speaker.to_string()];
            row.extend(Criterion::ALL.iter().map(|&c| s.scores.get(c).to_string()));
            w.write_record(&row).map_err(data)?;
        }
        std::fs::create_dir_all(out).map_err(data)?;
        std::fs::write(out.join("scores.csv"), w.into_inner().map_err(data)?).map_err(data)?;
        let tests = wilcoxon_rows(&scores);
        let report = render(&ReportInput {
            title: "Scoring report",
            records: &[],
            scores: &scores,
            likeness: &likeness,
            tests: &tests,
        });
        write_report(out, &report).map_err(data)?;
    }
    Ok(())
}

#[derive(Debug, serde::Deserialize)]
struct PairRow {
    #[allow(dead_code)]
    id: String,
    criterion: String,
    a: f64,
    b: f64,
}

fn stats(a: StatsArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    for t in &a.tests {
        if !matches!(t.as_str(), "wilcoxon" | "t" | "bf") {
            return Err(CliError::Usage(format!("unknown test `{t}` (expected wilcoxon, t, bf)")));
        }
    }
    let text = read(&a.input)?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut groups: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    for (i, row) in rdr.deserialize::<PairRow>().enumerate() {
        let row = row.map_err(|e| CliError::Data(format!("{}:{}: {e}", a.input.display(), i + 2)))?;
        match groups.iter_mut().find(|g| g.0 == row.criterion) {
            Some(g) => {
                g.1.push(row.a);
                g.2.push(row.b);
            }
            None => groups.push((row.criterion, vec![row.a], vec![row.b])),
        }
    }

    let mut rows: Vec<TestRow> = Vec::new();
    for test in &a.tests {
        let mut family = Vec::new();
        for (criterion, xs, ys) in &groups {
            let res = match test.as_str() {
                "wilcoxon" => wilcoxon_signed_rank(xs, ys).map(|r| (r.n, r.w, r.p)),
                "t" => paired_t(xs, ys).map(|r| (xs.len(), r.t, r.p)),
                _ => brown_forsythe(&[xs.clone(), ys.clone()]).map(|r| (xs.len() + ys.len(), r.f, r.p)),
            };
            match res {
                Ok((n, statistic, p)) => family.push(TestRow {
                    test: test.clone(),
                    criterion: criterion.clone(),
                    n,
                    statistic,
                    p,
                    p_holm: None,
                }),
                Err(e) => {
                    let _ = writeln!(stderr, "skipped {test} on {criterion}: {e}");
                }
            }
        }
        if a.holm {
            let ps: Vec<f64> = family.iter().map(|r| r.p).collect();
            for (r, adj) in family.iter_mut().zip(holm_correct(&ps).map_err(data)?) {
                r.p_holm = Some(adj);
            }
        }
        rows.extend(family);
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["test", "criterion", "n", "statistic", "p", "p_holm"]).map_err(data)?;
    for r in &rows {
        w.write_record([
            r.test.clone(),
            r.criterion.clone(),
            r.n.to_string(),
            format!("{:.6}", r.statistic),
            format!("{:.6}", r.p),
            r.p_holm.map(|h| format!("{h:.6}")).unwrap_or_default(),
        ])
        .map_err(data)?;
    }
    stdout.write_all(&w.into_inner().map_err(data)?).map_err(data)?;
    Ok(())
}
