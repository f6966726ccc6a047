//! Evaluation reports: per-run attack/clean metrics with stable
//! serialization, plus CSV and markdown emission.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::defense::DefenseReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseSummary {
    pub method: String,
    pub edges_removed: usize,
    pub labels_discarded: usize,
    pub nodes_removed: usize,
    pub trigger_hit_rate: f64,
}

impl DefenseSummary {
    pub fn from_report(method: &str, report: &DefenseReport) -> Self {
        DefenseSummary {
            method: method.to_string(),
            edges_removed: report.edges_removed_count,
            labels_discarded: report.labels_discarded.len(),
            nodes_removed: report.nodes_removed.len(),
            trigger_hit_rate: report.trigger_hit_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilaritySummary {
    pub clean_mean: Option<f64>,
    pub connection_mean: Option<f64>,
    pub internal_mean: Option<f64>,
}

/// One run's results: one victim architecture under one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub arch: String,
    pub seed: u64,
    pub asr_per_category: Vec<f64>,
    /// Always the exact mean of `asr_per_category`.
    pub asr_avg: f64,
    pub clean_accuracy: f64,
    pub defense: Option<DefenseSummary>,
    pub similarity: Option<SimilaritySummary>,
}

impl EvalReport {
    pub fn new(
        config_hash: String,
        arch: String,
        seed: u64,
        asr_per_category: Vec<f64>,
        clean_accuracy: f64,
        defense: Option<DefenseSummary>,
        similarity: Option<SimilaritySummary>,
    ) -> Self {
        let asr_avg = if asr_per_category.is_empty() {
            0.0
        } else {
            asr_per_category.iter().sum::<f64>() / asr_per_category.len() as f64
        };
        EvalReport {
            config_hash,
            arch,
            seed,
            asr_per_category,
            asr_avg,
            clean_accuracy,
            defense,
            similarity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mean = if self.asr_per_category.is_empty() {
            0.0
        } else {
            self.asr_per_category.iter().sum::<f64>() / self.asr_per_category.len() as f64
        };
        if mean != self.asr_avg {
            return Err(Error::Config(format!(
                "report: asr_avg {} is not the mean {mean}",
                self.asr_avg
            )));
        }
        for (name, v) in self
            .asr_per_category
            .iter()
            .map(|v| ("asr", *v))
            .chain([("asr_avg", self.asr_avg), ("clean_accuracy", self.clean_accuracy)])
        {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("report: {name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Canonical JSON for a report list; byte-stable for fixed inputs.
pub fn reports_json(reports: &[EvalReport]) -> Result<String> {
    serde_json::to_string_pretty(reports).map_err(|e| Error::Config(format!("report json: {e}")))
}

pub fn write_reports(reports: &[EvalReport], path: &Path) -> Result<()> {
    std::fs::write(path, reports_json(reports)?)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_reports(path: &Path) -> Result<Vec<EvalReport>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        line: 0,
        detail: e.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Option<ReportFormat> {
        match s {
            "csv" => Some(ReportFormat::Csv),
            "markdown" | "md" => Some(ReportFormat::Markdown),
            _ => None,
        }
    }
}

/// Per-architecture aggregate over seeds; spread is the population
/// standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub arch: String,
    pub runs: usize,
    pub asr_mean: f64,
    pub asr_sd: f64,
    pub clean_mean: f64,
    pub clean_sd: f64,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Group reports by architecture, preserving first-seen order.
pub fn aggregate(reports: &[EvalReport]) -> Vec<AggregateRow> {
    let mut order: Vec<&str> = Vec::new();
    for r in reports {
        if !order.contains(&r.arch.as_str()) {
            order.push(&r.arch);
        }
    }
    order
        .into_iter()
        .map(|arch| {
            let asr: Vec<f64> = reports
                .iter()
                .filter(|r| r.arch == arch)
                .map(|r| r.asr_avg)
                .collect();
            let clean: Vec<f64> = reports
                .iter()
                .filter(|r| r.arch == arch)
                .map(|r| r.clean_accuracy)
                .collect();
            let (asr_mean, asr_sd) = mean_sd(&asr);
            let (clean_mean, clean_sd) = mean_sd(&clean);
            AggregateRow {
                arch: arch.to_string(),
                runs: asr.len(),
                asr_mean,
                asr_sd,
                clean_mean,
                clean_sd,
            }
        })
        .collect()
}

/// Render raw rows (CSV) or the aggregated table (markdown) to a file.
pub fn emit_report(reports: &[EvalReport], format: ReportFormat, path: &Path) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("no reports to emit".into()));
    }
    let categories = reports[0].asr_per_category.len();
    if reports.iter().any(|r| r.asr_per_category.len() != categories) {
        return Err(Error::InvalidArgument(
            "reports disagree on the number of categories".into(),
        ));
    }
    let mut file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let io = |e| Error::io(path.display().to_string(), e);
    match format {
        ReportFormat::Csv => {
            let asr_cols: String = (0..categories).map(|k| format!(",asr_{k}")).collect();
            writeln!(
                file,
                "arch,seed,asr_avg,clean_accuracy{asr_cols},defense,edges_removed,nodes_removed,labels_discarded,trigger_hit_rate,config_hash"
            )
            .map_err(io)?;
            for r in reports {
                let asr_vals: String = r
                    .asr_per_category
                    .iter()
                    .map(|v| format!(",{v}"))
                    .collect();
                let (method, edges, nodes, labels, hit) = match &r.defense {
                    Some(d) => (
                        d.method.as_str(),
                        d.edges_removed,
                        d.nodes_removed,
                        d.labels_discarded,
                        d.trigger_hit_rate,
                    ),
                    None => ("none", 0, 0, 0, 0.0),
                };
                writeln!(
                    file,
                    "{},{},{},{}{asr_vals},{method},{edges},{nodes},{labels},{hit},{}",
                    r.arch, r.seed, r.asr_avg, r.clean_accuracy, r.config_hash
                )
                .map_err(io)?;
            }
        }
        ReportFormat::Markdown => {
            writeln!(file, "| Model | ASR | Clean Accuracy | Runs |").map_err(io)?;
            writeln!(file, "|-------|-----|----------------|------|").map_err(io)?;
            for row in aggregate(reports) {
                writeln!(
                    file,
                    "| {} | {:.4} ± {:.4} | {:.4} ± {:.4} | {} |",
                    row.arch, row.asr_mean, row.asr_sd, row.clean_mean, row.clean_sd, row.runs
                )
                .map_err(io)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(arch: &str, seed: u64, asr: Vec<f64>, clean: f64) -> EvalReport {
        EvalReport::new("abc123".into(), arch.into(), seed, asr, clean, None, None)
    }

    #[test]
    fn asr_avg_is_exact_mean() {
        let r = report("gcn", 0, vec![0.5, 0.75, 1.0, 0.25], 0.9);
        assert_eq!(r.asr_avg, (0.5 + 0.75 + 1.0 + 0.25) / 4.0);
        r.validate().unwrap();
    }

    #[test]
    fn validate_rejects_out_of_range_and_wrong_mean() {
        let mut r = report("gcn", 0, vec![0.5, 0.7], 0.9);
        r.asr_avg = 0.99;
        assert!(r.validate().is_err());
        let r2 = report("gcn", 0, vec![0.5, 1.5], 0.9);
        assert!(r2.validate().is_err());
    }

    #[test]
    fn json_round_trip_is_byte_stable() {
        let reports = vec![
            report("gcn", 0, vec![0.5, 0.75], 0.9),
            report("sage", 1, vec![1.0, 0.0], 0.85),
        ];
        let a = reports_json(&reports).unwrap();
        let b = reports_json(&serde_json::from_str::<Vec<EvalReport>>(&a).unwrap()).unwrap();
        assert_eq!(a, b);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reports.json");
        write_reports(&reports, &path).unwrap();
        assert_eq!(read_reports(&path).unwrap(), reports);
    }

    #[test]
    fn aggregate_groups_by_arch() {
        let reports = vec![
            report("gcn", 0, vec![0.8, 0.6], 0.9),
            report("gcn", 1, vec![1.0, 0.8], 0.8),
            report("sage", 0, vec![0.5, 0.5], 0.7),
        ];
        let rows = aggregate(&reports);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].arch, "gcn");
        assert_eq!(rows[0].runs, 2);
        assert!((rows[0].asr_mean - 0.8).abs() < 1e-12);
        assert!((rows[0].asr_sd - 0.1).abs() < 1e-12);
        assert_eq!(rows[1].arch, "sage");
        assert_eq!(rows[1].clean_mean, 0.7);
        assert_eq!(rows[1].clean_sd, 0.0);
    }

    #[test]
    fn csv_and_markdown_emission() {
        let reports = vec![
            report("gcn", 0, vec![0.8, 0.6], 0.9),
            report("gcn", 1, vec![0.9, 0.7], 0.88),
        ];
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("r.csv");
        emit_report(&reports, ReportFormat::Csv, &csv_path).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("arch,seed,asr_avg,clean_accuracy,asr_0,asr_1"));
        assert!(lines[1].starts_with("gcn,0,"));

        let md_path = dir.path().join("r.md");
        emit_report(&reports, ReportFormat::Markdown, &md_path).unwrap();
        let text = std::fs::read_to_string(&md_path).unwrap();
        assert!(text.contains("| Model | ASR | Clean Accuracy | Runs |"));
        assert!(text.contains("| gcn |"));
    }

    #[test]
    fn emission_rejects_mixed_category_counts() {
        let reports = vec![
            report("gcn", 0, vec![0.8, 0.6], 0.9),
            report("gcn", 1, vec![0.9], 0.88),
        ];
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_report(&reports, ReportFormat::Csv, &dir.path().join("x.csv")).is_err());
    }
}
