use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::corpus::Criterion;
use super::scoring::{HumanLikenessScore, TurnScores};
use crate::conversation::Speaker;
use crate::engine::EvaluationRecord;

/// Observer intervention counts over a set of agent turns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerRates {
    pub turns: usize,
    /// Turns accepted with implicit feedback.
    pub implicit_turns: usize,
    /// Turns with at least one forced regeneration.
    pub forced_turns: usize,
    /// Regenerations summed over all turns.
    pub regenerations: usize,
}

impl TriggerRates {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a EvaluationRecord>) -> Self {
        let mut r = Self::default();
        for rec in records {
            r.turns += 1;
            r.implicit_turns += usize::from(rec.flagged_implicit());
            r.forced_turns += usize::from(rec.forced_count > 0);
            r.regenerations += rec.regenerations();
        }
        r
    }

    fn frac(x: usize, n: usize) -> f64 {
        if n == 0 {
            0.0
        } else {
            x as f64 / n as f64
        }
    }

    pub fn implicit_fraction(&self) -> f64 {
        Self::frac(self.implicit_turns, self.turns)
    }

    pub fn forced_fraction(&self) -> f64 {
        Self::frac(self.forced_turns, self.turns)
    }

    /// Mean regenerations among turns that had any.
    pub fn mean_forced_per_forced_turn(&self) -> f64 {
        Self::frac(self.regenerations, self.forced_turns)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRow {
    pub test: String,
    pub criterion: String,
    pub n: usize,
    pub statistic: f64,
    pub p: f64,
    pub p_holm: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReportInput<'a> {
    pub title: &'a str,
    pub records: &'a [EvaluationRecord],
    pub scores: &'a [TurnScores],
    pub likeness: &'a [HumanLikenessScore],
    pub tests: &'a [TestRow],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub markdown: String,
    pub csv: String,
}

fn num(x: f64) -> String {
    format!("{x:.6}")
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Renders the markdown and long-format CSV reports. Output depends only on
/// the input, so identical inputs give byte-identical files.
pub fn render(input: &ReportInput<'_>) -> Report {
    let mut md = String::new();
    let mut csv = csv::Writer::from_writer(Vec::new());
    let mut row = |section: &str, key: &str, criterion: &str, value: String| {
        csv.write_record([section, key, criterion, &value]).expect("in-memory write");
    };
    row("section", "key", "criterion", "value".into());

    let title = if input.title.is_empty() { "Evaluation report" } else { input.title };
    let _ = writeln!(md, "# {title}\n");

    let rates = TriggerRates::from_records(input.records);
    let _ = writeln!(md, "## Trigger rates\n\n| metric | value |\n|---|---|");
    let trigger = [
        ("turns", rates.turns.to_string()),
        ("implicit_turns", rates.implicit_turns.to_string()),
        ("forced_turns", rates.forced_turns.to_string()),
        ("regenerations", rates.regenerations.to_string()),
        ("implicit_fraction", num(rates.implicit_fraction())),
        ("forced_fraction", num(rates.forced_fraction())),
        ("mean_forced_per_forced_turn", num(rates.mean_forced_per_forced_turn())),
    ];
    if !input.records.is_empty() {
        for (k, v) in &trigger {
            let _ = writeln!(md, "| {k} | {v} |");
            row("trigger", k, "", v.clone());
        }
    }

    let _ = writeln!(md, "\n## Human-likeness\n\n| criterion | n | mean | sd |\n|---|---|---|---|");
    for c in Criterion::ALL {
        let vals: Vec<f64> = input
            .likeness
            .iter()
            .filter(|l| l.criterion == c)
            .map(|l| l.value)
            .collect();
        if vals.is_empty() {
            continue;
        }
        let (m, sd) = mean_sd(&vals);
        let _ = writeln!(md, "| {c} | {} | {} | {} |", vals.len(), num(m), num(sd));
        row("likeness", "n", c.as_str(), vals.len().to_string());
        row("likeness", "mean", c.as_str(), num(m));
        row("likeness", "sd", c.as_str(), num(sd));
    }

    let _ = writeln!(
        md,
        "\n## Agent scores by turn index\n\n| turn | brevity | tone | specificity | coherence |\n|---|---|---|---|---|"
    );
    let mut by_index: BTreeMap<usize, Vec<&TurnScores>> = BTreeMap::new();
    for s in input.scores.iter().filter(|s| s.speaker == Speaker::Agent) {
        by_index.entry(s.turn).or_default().push(s);
    }
    for (turn, group) in &by_index {
        let means: Vec<String> = Criterion::ALL
            .iter()
            .map(|&c| {
                let xs: Vec<f64> = group.iter().map(|s| f64::from(s.scores.get(c))).collect();
                let m = num(mean_sd(&xs).0);
                row("per_index", &turn.to_string(), c.as_str(), m.clone());
                m
            })
            .collect();
        let _ = writeln!(md, "| {turn} | {} |", means.join(" | "));
    }

    let _ = writeln!(
        md,
        "\n## Tests\n\n| test | criterion | n | statistic | p | p (Holm) |\n|---|---|---|---|---|---|"
    );
    for t in input.tests {
        let holm = t.p_holm.map(num).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {holm} |",
            t.test,
            t.criterion,
            t.n,
            num(t.statistic),
            num(t.p)
        );
        row("test", &format!("{}.n", t.test), &t.criterion, t.n.to_string());
        row("test", &format!("{}.statistic", t.test), &t.criterion, num(t.statistic));
        row("test", &format!("{}.p", t.test), &t.criterion, num(t.p));
        if let Some(h) = t.p_holm {
            row("test", &format!("{}.p_holm", t.test), &t.criterion, num(h));
        }
    }

    let csv = String::from_utf8(csv.into_inner().expect("in-memory flush")).expect("utf-8");
    Report { markdown: md, csv }
}

/// Writes `report.md` and `report.csv` into `dir`.
pub fn write_report(dir: &Path, report: &Report) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.md"), &report.markdown)?;
    std::fs::write(dir.join("report.csv"), &report.csv)
}

/// Reads the trigger section of a rendered CSV report back into numbers.
pub fn parse_trigger_rows(csv_text: &str) -> BTreeMap<String, String> {
    let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
    rdr.records()
        .filter_map(Result::ok)
        .filter(|r| &r[0] == "trigger")
        .map(|r| (r[1].to_string(), r[3].to_string()))
        .collect()
}
