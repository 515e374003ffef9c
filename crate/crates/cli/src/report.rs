//! Challenge-style result tables, rendered as CSV or JSON.
//!
//! CSV rounds every floating value to 4 decimals for readability; the JSON
//! form keeps full precision so numbers re-parse bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cli::ReportFormat;
use crate::config::Config;
use crate::{io_error, RunError};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Case id used for the summary lines of the CSV form.
pub const SUMMARY_CASE_ID: &str = "MEAN";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub case_id: String,
    pub region: String,
    pub dsc: f64,
    pub hd95_mm: f64,
    pub lw_dsc: f64,
    pub lw_hd95_mm: f64,
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_count: usize,
    pub fp: usize,
}

/// Column means over the scored cases for one region, or across the region
/// means for the trailing "Avg" entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub region: String,
    pub dsc: f64,
    pub hd95_mm: f64,
    pub lw_dsc: f64,
    pub lw_hd95_mm: f64,
    pub tp: f64,
    #[serde(rename = "fn")]
    pub fn_count: f64,
    pub fp: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseFailure {
    pub case_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub summary: Vec<SummaryRow>,
    #[serde(default)]
    pub failures: Vec<CaseFailure>,
    pub config_echo: Config,
    pub tool_version: String,
}

/// Per-region means in the given region order, then an "Avg" entry
/// averaging the region means.
pub fn summarize(rows: &[ReportRow], region_order: &[String]) -> Vec<SummaryRow> {
    let mut summary = Vec::new();
    for region in region_order {
        let picked: Vec<&ReportRow> = rows.iter().filter(|r| &r.region == region).collect();
        if picked.is_empty() {
            continue;
        }
        let n = picked.len() as f64;
        summary.push(SummaryRow {
            region: region.clone(),
            dsc: picked.iter().map(|r| r.dsc).sum::<f64>() / n,
            hd95_mm: picked.iter().map(|r| r.hd95_mm).sum::<f64>() / n,
            lw_dsc: picked.iter().map(|r| r.lw_dsc).sum::<f64>() / n,
            lw_hd95_mm: picked.iter().map(|r| r.lw_hd95_mm).sum::<f64>() / n,
            tp: picked.iter().map(|r| r.tp as f64).sum::<f64>() / n,
            fn_count: picked.iter().map(|r| r.fn_count as f64).sum::<f64>() / n,
            fp: picked.iter().map(|r| r.fp as f64).sum::<f64>() / n,
        });
    }
    if !summary.is_empty() {
        let n = summary.len() as f64;
        let avg = SummaryRow {
            region: "Avg".to_string(),
            dsc: summary.iter().map(|s| s.dsc).sum::<f64>() / n,
            hd95_mm: summary.iter().map(|s| s.hd95_mm).sum::<f64>() / n,
            lw_dsc: summary.iter().map(|s| s.lw_dsc).sum::<f64>() / n,
            lw_hd95_mm: summary.iter().map(|s| s.lw_hd95_mm).sum::<f64>() / n,
            tp: summary.iter().map(|s| s.tp).sum::<f64>() / n,
            fn_count: summary.iter().map(|s| s.fn_count).sum::<f64>() / n,
            fp: summary.iter().map(|s| s.fp).sum::<f64>() / n,
        };
        summary.push(avg);
    }
    summary
}

fn f4(v: f64) -> String {
    format!("{v:.4}")
}

pub fn render_csv(report: &Report) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "case_id",
        "region",
        "dsc",
        "hd95_mm",
        "lw_dsc",
        "lw_hd95_mm",
        "tp",
        "fn",
        "fp",
    ])
    .expect("csv in memory");
    for r in &report.rows {
        w.write_record([
            r.case_id.clone(),
            r.region.clone(),
            f4(r.dsc),
            f4(r.hd95_mm),
            f4(r.lw_dsc),
            f4(r.lw_hd95_mm),
            r.tp.to_string(),
            r.fn_count.to_string(),
            r.fp.to_string(),
        ])
        .expect("csv in memory");
    }
    for s in &report.summary {
        w.write_record([
            SUMMARY_CASE_ID.to_string(),
            s.region.clone(),
            f4(s.dsc),
            f4(s.hd95_mm),
            f4(s.lw_dsc),
            f4(s.lw_hd95_mm),
            f4(s.tp),
            f4(s.fn_count),
            f4(s.fp),
        ])
        .expect("csv in memory");
    }
    String::from_utf8(w.into_inner().expect("csv in memory")).expect("csv is utf-8")
}

pub fn render_json(report: &Report) -> String {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    text
}

pub fn write_report(
    report: &Report,
    format: ReportFormat,
    out: Option<&Path>,
) -> Result<(), RunError> {
    let text = match format {
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Json => render_json(report),
    };
    write_text(&text, out)
}

pub fn write_text(text: &str, out: Option<&Path>) -> Result<(), RunError> {
    match out {
        Some(path) => {
            fs::write(path, text).map_err(|e| io_error(format!("{}: {e}", path.display())))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn parse_json_report(path: &Path) -> Result<Report, RunError> {
    let text =
        fs::read_to_string(path).map_err(|e| io_error(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| io_error(format!("{}: not a JSON report: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(case_id: &str, region: &str, dsc: f64) -> ReportRow {
        ReportRow {
            case_id: case_id.to_string(),
            region: region.to_string(),
            dsc,
            hd95_mm: 2.0,
            lw_dsc: dsc,
            lw_hd95_mm: 2.0,
            tp: 1,
            fn_count: 0,
            fp: 0,
        }
    }

    fn regions() -> Vec<String> {
        ["ET", "TC", "WT"].map(String::from).to_vec()
    }

    fn report(rows: Vec<ReportRow>) -> Report {
        let summary = summarize(&rows, &regions());
        Report {
            rows,
            summary,
            failures: Vec::new(),
            config_echo: Config::default(),
            tool_version: TOOL_VERSION.to_string(),
        }
    }

    #[test]
    fn csv_header_is_fixed() {
        let rep = report(vec![row("c1", "ET", 0.5)]);
        let csv = render_csv(&rep);
        assert_eq!(
            csv.lines().next().unwrap(),
            "case_id,region,dsc,hd95_mm,lw_dsc,lw_hd95_mm,tp,fn,fp"
        );
    }

    #[test]
    fn floats_render_with_exactly_four_decimals() {
        let rep = report(vec![row("c1", "ET", 1.0)]);
        let csv = render_csv(&rep);
        let line = csv.lines().nth(1).unwrap();
        assert_eq!(line, "c1,ET,1.0000,2.0000,1.0000,2.0000,1,0,0");
    }

    #[test]
    fn summary_covers_each_region_then_the_average() {
        let rows = vec![
            row("c1", "ET", 0.8),
            row("c1", "TC", 0.9),
            row("c1", "WT", 1.0),
            row("c2", "ET", 0.6),
            row("c2", "TC", 0.7),
            row("c2", "WT", 0.8),
        ];
        let summary = summarize(&rows, &regions());
        let names: Vec<&str> = summary.iter().map(|s| s.region.as_str()).collect();
        assert_eq!(names, ["ET", "TC", "WT", "Avg"]);
        assert!((summary[0].dsc - 0.7).abs() < 1e-12);
        assert!((summary[3].dsc - (0.7 + 0.8 + 0.9) / 3.0).abs() < 1e-12);
        assert!((summary[3].tp - 1.0).abs() < 1e-12);
    }

    #[test]
    fn summary_case_id_marks_the_mean_lines() {
        let rep = report(vec![row("c1", "ET", 0.5)]);
        let csv = render_csv(&rep);
        let mean_lines: Vec<&str> = csv.lines().filter(|l| l.starts_with("MEAN,")).collect();
        assert_eq!(mean_lines.len(), 2);
        assert_eq!(mean_lines[0], "MEAN,ET,0.5000,2.0000,0.5000,2.0000,1.0000,0.0000,0.0000");
        assert!(mean_lines[1].starts_with("MEAN,Avg,"));
    }

    #[test]
    fn json_numbers_survive_a_round_trip_bit_for_bit() {
        let mut rep = report(vec![row("c1", "ET", 0.1 + 0.2), row("c1", "TC", 1.0 / 3.0)]);
        rep.rows[0].hd95_mm = 2.0f64.sqrt();
        rep.summary = summarize(&rep.rows, &regions());
        let text = render_json(&rep);
        let back: Report = serde_json::from_str(&text).unwrap();
        for (a, b) in rep.rows.iter().zip(&back.rows) {
            assert_eq!(a.dsc.to_bits(), b.dsc.to_bits());
            assert_eq!(a.hd95_mm.to_bits(), b.hd95_mm.to_bits());
            assert_eq!(a.lw_dsc.to_bits(), b.lw_dsc.to_bits());
            assert_eq!(a.lw_hd95_mm.to_bits(), b.lw_hd95_mm.to_bits());
            assert_eq!((a.tp, a.fn_count, a.fp), (b.tp, b.fn_count, b.fp));
        }
        for (a, b) in rep.summary.iter().zip(&back.summary) {
            assert_eq!(a.dsc.to_bits(), b.dsc.to_bits());
            assert_eq!(a.tp.to_bits(), b.tp.to_bits());
        }
    }
}
