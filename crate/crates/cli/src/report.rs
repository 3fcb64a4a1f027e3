use comatch_core::model::QuestionType;
use comatch_core::train::{Bucket, EvalReport};
use serde_json::{json, Value};

/// Row labels in display order: the two subsets, the whole split, then one
/// row per question type.
pub fn rows(report: &EvalReport) -> Vec<(String, Bucket)> {
    let mut out = vec![
        ("RACE-M".to_string(), report.middle),
        ("RACE-H".to_string(), report.high),
        ("RACE".to_string(), report.overall),
    ];
    for q in QuestionType::ALL {
        let b = report.by_type.get(&q).copied().unwrap_or_default();
        out.push((q.name().to_string(), b));
    }
    out
}

/// Accuracy is shown as a fraction with four decimals; "-" marks an empty
/// bucket.
pub fn table(report: &EvalReport) -> String {
    let rows = rows(report);
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
    let mut out = format!(
        "{:<width$}  {:>8}  {:>8}  {:>8}\n",
        "bucket", "correct", "count", "accuracy"
    );
    for (name, b) in rows {
        let acc = b
            .accuracy
            .map_or_else(|| "-".to_string(), |a| format!("{a:.4}"));
        out.push_str(&format!(
            "{name:<width$}  {:>8}  {:>8}  {acc:>8}\n",
            b.correct, b.count
        ));
    }
    out
}

/// `{"split", "rows": [{"name", "correct", "count", "accuracy"}]}`;
/// `accuracy` is null for an empty bucket.
pub fn json(split: &str, report: &EvalReport) -> Value {
    let rows: Vec<Value> = rows(report)
        .into_iter()
        .map(|(name, b)| {
            json!({
                "name": name,
                "correct": b.correct,
                "count": b.count,
                "accuracy": b.accuracy,
            })
        })
        .collect();
    json!({ "split": split, "rows": rows })
}

/// Max-subtracted softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
