use serde_json::Value;

use crate::datamodel::MetricReport;

fn pct(v: f64) -> String {
    format!("{:.1}", v * 100.0)
}

/// Plain-text table: one row per present metric. Rate metrics are shown as
/// percentages with one decimal; coverage is shown as the raw mean.
pub fn render_table(report: &MetricReport) -> String {
    let mut rows: Vec<(String, String)> = Vec::new();
    if let Some(v) = report.em {
        rows.push(("EM".into(), pct(v)));
    }
    for (k, v) in &report.recall_at_k {
        rows.push((format!("Recall@{k}"), pct(*v)));
    }
    if let Some(v) = report.answer_coverage {
        rows.push(("Coverage".into(), format!("{v:.2}")));
    }
    if let Some(v) = report.accuracy {
        rows.push(("Accuracy".into(), pct(v)));
    }
    if let Some(v) = report.f1 {
        rows.push(("F1".into(), pct(v)));
    }
    if let Some(v) = report.rouge_l {
        rows.push(("Rouge-L".into(), pct(v)));
    }
    let width = rows
        .iter()
        .map(|(n, _)| n.len())
        .max()
        .unwrap_or(0)
        .max("metric".len());
    let mut out = format!(
        "dataset {} ({} examples)\n",
        report.dataset_id, report.n_examples
    );
    out.push_str(&format!("{:<width$}  value\n", "metric"));
    for (name, value) in rows {
        out.push_str(&format!("{name:<width$}  {value:>5}\n"));
    }
    if report.unmappable_predictions > 0 {
        out.push_str(&format!(
            "unmappable predictions: {}\n",
            report.unmappable_predictions
        ));
    }
    out
}

/// Table text plus the JSON form of the report (full precision).
pub fn render_report(report: &MetricReport) -> (String, Value) {
    let json = serde_json::to_value(report).expect("metric reports serialize");
    (render_table(report), json)
}
