//! Scoring and gap reporting over line-delimited prediction/gold files.

use super::{header, out_path};
use crate::config::PipelineConfig;
use anyhow::Context;
use ctxsynth::record::{read_jsonl, write_text, JsonlWriter};
use ctxsynth::scoring::{
    aggregate, gap_report, score_em, score_f1, score_rouge_l, Metric, SampleScore, ScoreReport,
};
use std::collections::BTreeMap;
use std::path::PathBuf;

fn string_field<'a>(row: &'a serde_json::Value, names: &[&str]) -> Option<&'a str> {
    names.iter().find_map(|n| row.get(n).and_then(|v| v.as_str()))
}

/// Gold rows carry a task and one or more reference answers: either a
/// `gold_values` array or a single `answer` string.
struct GoldRow {
    task: String,
    references: Vec<String>,
}

fn parse_gold(row: &serde_json::Value, line: usize, path: &std::path::Path) -> anyhow::Result<(String, GoldRow)> {
    let id = string_field(row, &["sample_id", "id", "pair_id"])
        .with_context(|| format!("{}:{line}: gold row has no id field", path.display()))?;
    let task = string_field(row, &["task", "variant"]).unwrap_or("all").to_string();
    let references: Vec<String> = match row.get("gold_values").and_then(|v| v.as_array()) {
        Some(values) => values.iter().filter_map(|v| v.as_str().map(str::to_string)).collect(),
        None => string_field(row, &["answer"]).map(|a| vec![a.to_string()]).unwrap_or_default(),
    };
    anyhow::ensure!(
        !references.is_empty(),
        "{}:{line}: gold row `{id}` has neither gold_values nor answer",
        path.display()
    );
    Ok((id.to_string(), GoldRow { task, references }))
}

pub fn score(
    config: PipelineConfig,
    predictions: PathBuf,
    gold: PathBuf,
    metric: String,
    output: Option<String>,
) -> anyhow::Result<()> {
    let metric: Metric = metric.parse().map_err(anyhow::Error::msg)?;
    let (_, pred_rows): (_, Vec<serde_json::Value>) = read_jsonl(&predictions)?;
    let (_, gold_rows): (_, Vec<serde_json::Value>) = read_jsonl(&gold)?;
    anyhow::ensure!(!pred_rows.is_empty(), "no predictions in {}", predictions.display());

    let mut golds: BTreeMap<String, GoldRow> = BTreeMap::new();
    for (idx, row) in gold_rows.iter().enumerate() {
        let (id, parsed) = parse_gold(row, idx + 1, &gold)?;
        golds.insert(id, parsed);
    }

    let mut by_task: BTreeMap<String, Vec<SampleScore>> = BTreeMap::new();
    for (idx, row) in pred_rows.iter().enumerate() {
        let line = idx + 1;
        let id = string_field(row, &["sample_id", "id", "pair_id"])
            .with_context(|| format!("{}:{line}: prediction has no id field", predictions.display()))?;
        let text = string_field(row, &["prediction", "text", "output"])
            .with_context(|| format!("{}:{line}: prediction `{id}` has no text field", predictions.display()))?;
        let gold_row = golds
            .get(id)
            .with_context(|| format!("prediction `{id}` has no row in {}", gold.display()))?;
        // EM checks all references at once; text overlap takes the best one.
        let value = match metric {
            Metric::Em => score_em(text, &gold_row.references),
            Metric::F1 => best_over(&gold_row.references, |r| score_f1(text, r)),
            Metric::RougeL => best_over(&gold_row.references, |r| score_rouge_l(text, r)),
        };
        by_task
            .entry(gold_row.task.clone())
            .or_default()
            .push(SampleScore { sample_id: id.to_string(), score: value });
    }

    let reports: Vec<ScoreReport> = by_task
        .into_iter()
        .map(|(task, scores)| aggregate(scores, &task, metric))
        .collect::<Result<_, _>>()?;

    let base = output.unwrap_or_else(|| format!("score_{}", metric.as_str()));
    let out = out_path(&config, &format!("{base}.jsonl"))?;
    let mut writer = JsonlWriter::create(&out, Some(&header(&config, None)))?;
    for report in &reports {
        writer.write(report)?;
    }
    writer.finish()?;
    write_text(&out_path(&config, &format!("{base}.txt"))?, &score_table(&reports))?;

    println!("scored {} predictions across {} tasks to {}", pred_rows.len(), reports.len(), out.display());
    Ok(())
}

fn best_over(references: &[String], f: impl Fn(&str) -> f64) -> f64 {
    references.iter().map(|r| f(r)).fold(0.0, f64::max)
}

fn score_table(reports: &[ScoreReport]) -> String {
    let task_width = reports.iter().map(|r| r.task.len()).max().unwrap_or(4).max(4);
    let mut out = format!("{:<task_width$}  {:>7}  {:>5}  {:>6}\n", "task", "metric", "n", "mean");
    for report in reports {
        out.push_str(&format!(
            "{:<task_width$}  {:>7}  {:>5}  {:>6}\n",
            report.task,
            report.metric.as_str(),
            report.n,
            report.display_mean()
        ));
    }
    out
}

pub fn gap(
    config: PipelineConfig,
    included: PathBuf,
    free: PathBuf,
    threshold: Option<f64>,
) -> anyhow::Result<()> {
    let threshold = threshold.unwrap_or(config.scoring.gap_threshold);
    let (_, included_reports): (_, Vec<ScoreReport>) = read_jsonl(&included)?;
    let (_, free_reports): (_, Vec<ScoreReport>) = read_jsonl(&free)?;
    let report = gap_report(&free_reports, &included_reports, threshold)?;

    let out = out_path(&config, "gap.jsonl")?;
    let mut writer = JsonlWriter::create(&out, Some(&header(&config, None)))?;
    for row in &report.rows {
        writer.write(row)?;
    }
    writer.finish()?;

    let task_width = report.rows.iter().map(|r| r.task.len()).max().unwrap_or(4).max(4);
    let mut table = format!(
        "{:<task_width$}  {:>10}  {:>10}  {:>8}  {}\n",
        "task", "free", "included", "gap", "low_coherence"
    );
    for row in &report.rows {
        table.push_str(&format!(
            "{:<task_width$}  {:>10.2}  {:>10.2}  {:>8.2}  {}\n",
            row.task, row.context_free_mean, row.context_included_mean, row.gap, row.low_coherence
        ));
    }
    write_text(&out_path(&config, "gap.txt")?, &table)?;

    let flagged = report.rows.iter().filter(|r| r.low_coherence).count();
    println!(
        "gap report over {} tasks ({} flagged at threshold {}) at {}",
        report.rows.len(),
        flagged,
        threshold,
        out.display()
    );
    Ok(())
}
