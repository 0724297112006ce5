//! Consolidated leakage / utility table.

use std::fmt::Write;

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageRow {
    pub stage: String,
    /// Held-out leakage gap per attribute; `None` when the stage is missing.
    pub gaps: Vec<Option<f64>>,
    /// Hit@k per configured `k`.
    pub hits: Option<Vec<f64>>,
}

impl StageRow {
    pub fn missing(stage: &str, attributes: usize) -> Self {
        StageRow {
            stage: stage.to_string(),
            gaps: vec![None; attributes],
            hits: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportTable {
    pub attributes: Vec<String>,
    pub hit_ks: Vec<usize>,
    pub negatives: usize,
    pub rows: Vec<StageRow>,
    /// Artifacts that were not found.
    pub missing: Vec<String>,
}

impl ReportTable {
    pub fn row(&self, stage: &str) -> Option<&StageRow> {
        self.rows.iter().find(|r| r.stage == stage)
    }
}

const NOTE: &str = "Literature context only, not computed here: the fine-tuned LLM backbone \
recommender on MovieLens-1M (sequential task) reports Hit@1 58.03 and gender leakage gap 21.90 (percent).";

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

pub fn render_report(t: &ReportTable) -> String {
    let mut out = String::new();
    let mut header = format!("{:<10}", "stage");
    for a in &t.attributes {
        let _ = write!(header, " {:>12}", format!("gap:{a}"));
    }
    for k in &t.hit_ks {
        let _ = write!(header, " {:>8}", format!("Hit@{k}"));
    }
    let _ = writeln!(out, "{header}");
    let _ = writeln!(out, "{}", "-".repeat(header.len()));
    for row in &t.rows {
        let _ = write!(out, "{:<10}", row.stage);
        for g in &row.gaps {
            let _ = write!(out, " {:>12}", cell(*g));
        }
        for i in 0..t.hit_ks.len() {
            let v = row.hits.as_ref().map(|h| h[i]);
            let _ = write!(out, " {:>8}", cell(v));
        }
        out.push('\n');
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "Hit@k: one positive against {} sampled negatives.", t.negatives);
    if !t.missing.is_empty() {
        let _ = writeln!(out, "Missing artifacts: {}", t.missing.join(", "));
    }
    let _ = writeln!(out, "{NOTE}");
    out
}
