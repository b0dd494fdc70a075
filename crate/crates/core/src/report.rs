//! Run outputs: ablation tables, metrics files, loss curves and the run
//! manifest tying them together.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::LabelKind;
use crate::losses::LossBreakdown;
use crate::metrics::EvalReport;
use crate::training::TrainHistory;

pub const HISTORY_COLUMNS: [&str; 6] = ["epoch", "L_A", "L_PP", "L_U", "L_d", "L_total"];

/// `MCC/Macro-F1` at three decimals, e.g. `0.592/0.762`.
pub fn format_cell(mcc: f64, f1: f64) -> String {
    format!("{mcc:.3}/{f1:.3}")
}

/// Parses a table cell; accepts a bare leading point (`.592/.762`).
pub fn parse_cell(cell: &str) -> Result<(f64, f64)> {
    let bad = || Error::invalid(format!("malformed cell `{cell}`"));
    let (a, b) = cell.trim().split_once('/').ok_or_else(bad)?;
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    Ok((num(a)?, num(b)?))
}

/// One row per variant; columns are the activity, context and user heads.
pub fn render_ablation_table(rows: &[(String, EvalReport)]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::invalid("ablation table needs at least one variant"));
    }
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(7);
    let mut out = String::new();
    let _ = writeln!(out, "| {:width$} | {:>11} | {:>11} | {:>11} |", "variant", "activity", "context", "user");
    let _ = writeln!(out, "|{}|{}|{}|{}|", "-".repeat(width + 2), "-".repeat(13), "-".repeat(13), "-".repeat(13));
    for (name, r) in rows {
        let cells: Vec<String> = r.heads().iter().map(|h| format_cell(h.macro_mcc, h.macro_f1)).collect();
        let _ = writeln!(out, "| {name:width$} | {:>11} | {:>11} | {:>11} |", cells[0], cells[1], cells[2]);
    }
    Ok(out)
}

/// Parsed ablation row: variant name and `(MCC, F1)` per head.
pub type AblationRow = (String, [(f64, f64); 3]);

pub fn parse_ablation_table(text: &str) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for line in text.lines().skip(2) {
        let cells: Vec<&str> = line.trim().trim_matches('|').split('|').map(str::trim).collect();
        if cells.len() != 4 {
            return Err(Error::invalid(format!("ablation row needs 4 cells: `{line}`")));
        }
        rows.push((cells[0].to_string(), [parse_cell(cells[1])?, parse_cell(cells[2])?, parse_cell(cells[3])?]));
    }
    Ok(rows)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path, e))?;
    write_text(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::parse(path, e))
}

/// Per-epoch training losses at full precision.
pub fn write_history_csv(history: &TrainHistory, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
    let wrap = |e: csv::Error| Error::parse(path, e);
    w.write_record(HISTORY_COLUMNS).map_err(wrap)?;
    for e in &history.epochs {
        let l = e.train;
        w.write_record([e.epoch.to_string(), l.l_a.to_string(), l.l_pp.to_string(), l.l_u.to_string(), l.l_d.to_string(), l.total.to_string()])
            .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_history_csv(path: &Path) -> Result<Vec<(usize, LossBreakdown)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
    let header = r.headers().map_err(|e| Error::parse(path, e))?.clone();
    if header.iter().ne(HISTORY_COLUMNS) {
        return Err(Error::parse(path, format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::parse(path, e))?;
        let f = |i: usize| rec[i].parse::<f64>().map_err(|e| Error::parse(path, e));
        let epoch = rec[0].parse::<usize>().map_err(|e| Error::parse(path, e))?;
        out.push((epoch, LossBreakdown { l_a: f(1)?, l_pp: f(2)?, l_u: f(3)?, l_d: f(4)?, total: f(5)? }));
    }
    Ok(out)
}

const CURVE_COLOURS: [&str; 5] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#222222"];

/// Line plot of the five loss components. With `alpha_zero` the L_d
/// curve is dashed and marked as not part of the total.
pub fn render_loss_svg(history: &TrainHistory, alpha_zero: bool) -> Result<String> {
    if history.epochs.is_empty() {
        return Err(Error::invalid("empty history"));
    }
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let series: Vec<Vec<f64>> = (0..5)
        .map(|k| {
            history
                .epochs
                .iter()
                .map(|e| [e.train.l_a, e.train.l_pp, e.train.l_u, e.train.l_d, e.train.total][k])
                .collect()
        })
        .collect();
    let y_max = series.iter().flatten().copied().fold(0.0f64, f64::max).max(1e-12);
    let n = history.epochs.len();
    let x_of = |i: usize| pad + (w - 2.0 * pad) * if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
    let y_of = |v: f64| h - pad - (h - 2.0 * pad) * v / y_max;
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{pad} {pad} V{} H{}" stroke="black" fill="none"/>"#,
        h - pad,
        w - pad
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#, w / 2.0, h - 15.0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{y_max:.3}</text>"#, pad - 4.0, pad + 4.0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">0</text>"#, pad - 4.0, h - pad + 4.0);
    for (k, name) in HISTORY_COLUMNS[1..].iter().enumerate() {
        let points: Vec<String> = series[k].iter().enumerate().map(|(i, &v)| format!("{:.2},{:.2}", x_of(i), y_of(v))).collect();
        let dash = if k == 3 && alpha_zero { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"{dash}/>"#,
            points.join(" "),
            CURVE_COLOURS[k]
        );
        let label = if k == 3 && alpha_zero { format!("{name} (not in total)") } else { name.to_string() };
        let ly = pad + 16.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly}" fill="{}">{label}</text>"#,
            w - pad - 110.0,
            CURVE_COLOURS[k]
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Writes `<stem>.csv` and `<stem>.svg` into `dir`; returns both paths.
pub fn render_loss_curves(history: &TrainHistory, alpha_zero: bool, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    let svg = render_loss_svg(history, alpha_zero)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let svg_path = dir.join(format!("{stem}.svg"));
    write_history_csv(history, &csv_path)?;
    write_text(&svg_path, &svg)?;
    Ok((csv_path, svg_path))
}

/// Writes `<stem>.txt` (table) and `<stem>.csv` for an evaluation report.
pub fn write_metrics_report(report: &EvalReport, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    let txt = dir.join(format!("{stem}.txt"));
    let csv = dir.join(format!("{stem}.csv"));
    write_text(&txt, &report.to_table())?;
    report.write_csv(&csv)?;
    Ok(vec![txt, csv])
}

pub fn write_ablation_table(rows: &[(String, EvalReport)], path: &Path) -> Result<()> {
    write_text(path, &render_ablation_table(rows)?)
}

/// Index of everything one run wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub run_id: String,
    pub config: serde_json::Value,
    pub history_path: Option<PathBuf>,
    pub report_paths: Vec<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
}

impl RunArtifact {
    pub const FILE: &'static str = "run.json";

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(Self::FILE);
        write_json(&path, self)?;
        Ok(path)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        read_json(&dir.join(Self::FILE))
    }

    /// Checks that every referenced file exists and parses.
    pub fn verify(&self) -> Result<()> {
        if let Some(p) = &self.history_path {
            read_history_csv(p)?;
        }
        for p in &self.report_paths {
            match p.extension().and_then(|e| e.to_str()) {
                Some("csv") => {
                    EvalReport::read_csv(p)?;
                }
                Some("json") => {
                    read_json::<serde_json::Value>(p)?;
                }
                _ => {
                    read_text(p)?;
                }
            }
        }
        if let Some(p) = &self.checkpoint_path {
            crate::model::load_checkpoint(p)?;
        }
        Ok(())
    }
}

/// Head-by-head summary line, e.g. for logs.
pub fn summary_line(report: &EvalReport) -> String {
    LabelKind::ALL
        .iter()
        .map(|&k| {
            let h = report.head(k);
            format!("{k} {}", format_cell(h.macro_mcc, h.macro_f1))
        })
        .collect::<Vec<_>>()
        .join("  ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{ConfusionCounts, MetricsReport};
    use crate::training::EpochRecord;

    fn report(seed: u64) -> EvalReport {
        let c = |k: u64| ConfusionCounts::new(5 + k + seed, 2 + seed % 3, 10 + k, 3);
        let names = |p: &str, n: usize| (0..n).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
        let head = |kind, p, n: usize| MetricsReport::from_counts(kind, &names(p, n), &(0..n as u64).map(c).collect::<Vec<_>>()).unwrap();
        EvalReport { activity: head(LabelKind::Activity, "a", 3), context: head(LabelKind::Context, "c", 2), user: head(LabelKind::User, "u", 4) }
    }

    fn history(n: usize) -> TrainHistory {
        let epochs = (0..n)
            .map(|i| {
                let x = 1.0 / (i as f64 + 1.0);
                EpochRecord {
                    epoch: i,
                    train: LossBreakdown { l_a: x, l_pp: x / 3.0, l_u: 0.1 * x, l_d: 0.7, total: x * 1.4333 + 0.1 },
                    val: report(i as u64),
                }
            })
            .collect();
        TrainHistory { epochs, best_epoch: 0, stopped_early: false }
    }

    #[test]
    fn cells() {
        assert_eq!(parse_cell("0.592/0.762").unwrap(), (0.592, 0.762));
        assert_eq!(parse_cell(".592/.762").unwrap(), (0.592, 0.762));
        assert_eq!(format_cell(0.5924, 0.76249), "0.592/0.762");
        assert!(parse_cell("0.5").is_err());
        assert!(parse_cell("a/b").is_err());
    }

    #[test]
    fn ablation_table_round_trip() {
        let rows: Vec<(String, EvalReport)> = ["full", "no_UI", "no_CL", "no_TS"].iter().enumerate().map(|(i, n)| (n.to_string(), report(i as u64))).collect();
        let text = render_ablation_table(&rows).unwrap();
        assert_eq!(text.lines().count(), 6);
        let parsed = parse_ablation_table(&text).unwrap();
        assert_eq!(parsed.len(), 4);
        for ((name, r), (pname, cells)) in rows.iter().zip(&parsed) {
            assert_eq!(name, pname);
            for (h, &(m, f)) in r.heads().iter().zip(cells) {
                assert!((h.macro_mcc - m).abs() <= 5e-4);
                assert!((h.macro_f1 - f).abs() <= 5e-4);
                assert_eq!(format_cell(m, f), format_cell(h.macro_mcc, h.macro_f1));
            }
        }
        assert!(render_ablation_table(&[]).is_err());
    }

    #[test]
    fn loss_curves_round_trip() {
        let h = history(10);
        let dir = tempfile::tempdir().unwrap();
        let (csv, svg) = render_loss_curves(&h, true, dir.path(), "loss").unwrap();
        let back = read_history_csv(&csv).unwrap();
        assert_eq!(back.len(), 10);
        for ((e, l), rec) in back.iter().zip(&h.epochs) {
            assert_eq!(*e, rec.epoch);
            assert_eq!(*l, rec.train);
        }
        let text = std::fs::read_to_string(svg).unwrap();
        assert_eq!(text.matches("<polyline").count(), 5);
        assert!(text.contains("L_d (not in total)"));
        assert!(render_loss_svg(&history(0), false).is_err());
    }

    #[test]
    fn artifact_verifies_its_files() {
        let dir = tempfile::tempdir().unwrap();
        let h = history(3);
        let (csv, _) = render_loss_curves(&h, false, dir.path(), "history").unwrap();
        let reports = write_metrics_report(&report(1), dir.path(), "test_metrics").unwrap();
        let art = RunArtifact {
            run_id: "r1".into(),
            config: serde_json::json!({"seed": 1}),
            history_path: Some(csv),
            report_paths: reports,
            checkpoint_path: None,
        };
        art.write(dir.path()).unwrap();
        let back = RunArtifact::read(dir.path()).unwrap();
        assert_eq!(back, art);
        back.verify().unwrap();
        std::fs::remove_file(&back.report_paths[1]).unwrap();
        assert!(back.verify().is_err());
    }
}
