use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub task: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
    pub metric: f64,
    pub dev_metric: f64,
    pub split_checksum: String,
    #[serde(rename = "config-json")]
    pub config_json: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub task: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub seeds: usize,
    pub mean: f64,
    /// Population standard deviation over seeds.
    pub std: f64,
}

/// Per-seed test metrics of one method on one task and K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub rows: Vec<ReportRow>,
    pub aggregate: Aggregate,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl RunReport {
    pub fn from_rows(method: &str, task: &str, k: usize, rows: Vec<ReportRow>) -> Self {
        let metrics: Vec<f64> = rows.iter().map(|r| r.metric).collect();
        let (mean, std) = mean_std(&metrics);
        Self {
            aggregate: Aggregate {
                method: method.to_string(),
                task: task.to_string(),
                k,
                seeds: rows.len(),
                mean,
                std,
            },
            rows,
        }
    }

    pub fn metrics(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.metric).collect()
    }

    /// Display form `mean (std)` in percent.
    pub fn summary(&self) -> String {
        format!("{:.1} ({:.1})", 100.0 * self.aggregate.mean, 100.0 * self.aggregate.std)
    }
}

/// CSV with one row per seed across reports.
pub fn reports_to_csv(reports: &[RunReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        for row in &r.rows {
            w.serialize(row).map_err(csv_error)?;
        }
    }
    if reports.iter().all(|r| r.rows.is_empty()) {
        w.write_record([
            "method",
            "task",
            "K",
            "seed",
            "metric",
            "dev_metric",
            "split_checksum",
            "config-json",
        ])
        .map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn rows_from_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(csv_error)).collect()
}

pub fn aggregates_to_json(reports: &[RunReport]) -> Result<String> {
    let aggs: Vec<&Aggregate> = reports.iter().map(|r| &r.aggregate).collect();
    Ok(serde_json::to_string_pretty(&aggs)?)
}

pub fn csv_error(e: csv::Error) -> crate::DartError {
    crate::DartError::Io(std::io::Error::other(e.to_string()))
}

/// Micro-averaged F1 over all classes. With one label per example every
/// false positive is another class's false negative, so this equals
/// accuracy.
pub fn micro_f1(predictions: &[usize], gold: &[usize], n_classes: usize) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for c in 0..n_classes {
        for (&p, &g) in predictions.iter().zip(gold) {
            match (p == c, g == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
    }
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fneg) as f64;
    2.0 * precision * recall / (precision + recall)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64, metric: f64) -> ReportRow {
        ReportRow {
            method: "dart".into(),
            task: "easy".into(),
            k: 16,
            seed,
            metric,
            dev_metric: 1.0,
            split_checksum: "ab".into(),
            config_json: r#"{"lambda":1.0,"epochs":3}"#.into(),
        }
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[0.9, 0.95, 1.0]);
        assert!((m - 0.95).abs() < 1e-12);
        assert!((s - (0.005f64 / 3.0).sqrt()).abs() < 1e-12);
        let r = RunReport::from_rows("dart", "easy", 16, vec![row(1, 0.93), row(2, 0.94)]);
        assert_eq!(r.summary(), "93.5 (0.5)");
    }

    #[test]
    fn csv_round_trip_quotes_config() {
        let r = RunReport::from_rows("dart", "easy", 16, vec![row(13, 0.5), row(21, 0.75)]);
        let text = reports_to_csv(std::slice::from_ref(&r)).unwrap();
        assert!(text.starts_with("method,task,K,seed,metric,dev_metric,split_checksum,config-json\n"));
        assert_eq!(rows_from_csv(&text).unwrap(), r.rows);
        let empty = reports_to_csv(&[]).unwrap();
        assert_eq!(empty.lines().count(), 1);
    }

    #[test]
    fn micro_f1_equals_accuracy() {
        let p = [0, 1, 2, 2, 1, 0, 0];
        let g = [0, 1, 1, 2, 0, 0, 2];
        let acc = 4.0 / 7.0;
        assert!((micro_f1(&p, &g, 3) - acc).abs() < 1e-12);
    }
}
