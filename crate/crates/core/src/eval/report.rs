//! Text table and machine-readable records for evaluation reports.

use super::{CellReport, ClassReport, EvalReport};

fn class_name(r: &ClassReport) -> String {
    match r.class {
        None => "overall".to_string(),
        Some(c) => format!("{c:?}").to_lowercase(),
    }
}

/// Render the recall-at-precision table as fixed-width text.
pub fn render_table(report: &EvalReport) -> String {
    let mut out = String::new();
    let targets: Vec<f64> = report
        .cells
        .first()
        .map(|c| c.overall.recall_at.iter().map(|(p, _, _)| *p).collect())
        .unwrap_or_default();
    out.push_str(&format!("{:<14}{:<12}", "cell", "class"));
    for p in &targets {
        out.push_str(&format!("R@P={:<7.2}", p));
    }
    out.push_str("tp    fp    fn\n");
    for cell in &report.cells {
        let mut rows: Vec<&ClassReport> = vec![&cell.overall];
        rows.extend(cell.per_class.iter());
        for row in rows {
            out.push_str(&format!("d={:<4} r={:<4} {:<12}", cell.d, cell.r, class_name(row)));
            for (_, rec, ok) in &row.recall_at {
                if *ok {
                    out.push_str(&format!("{:<11.4}", rec));
                } else {
                    out.push_str(&format!("{:<11}", "-"));
                }
            }
            out.push_str(&format!("{:<6}{:<6}{:<6}\n", row.tp, row.fp, row.fn_count));
        }
    }
    out
}

/// One JSON record per (cell, class, p_target).
pub fn records_json(report: &EvalReport) -> String {
    let mut out = String::new();
    for cell in &report.cells {
        let mut rows: Vec<&ClassReport> = vec![&cell.overall];
        rows.extend(cell.per_class.iter());
        for row in rows {
            for (p, rec, ok) in &row.recall_at {
                let rec_json = serde_json::json!({
                    "d": cell.d,
                    "r": cell.r,
                    "class": class_name(row),
                    "p_target": p,
                    "recall": rec,
                    "precision_reachable": ok,
                    "tp": row.tp,
                    "fp": row.fp,
                    "fn": row.fn_count,
                });
                out.push_str(&rec_json.to_string());
                out.push('\n');
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::*;

    #[test]
    fn table_contains_cells() {
        let report = EvalReport {
            cells: vec![CellReport {
                d: 1.0,
                r: 0.8,
                overall: ClassReport {
                    class: None,
                    tp: 3,
                    fp: 1,
                    fn_count: 0,
                    recall_at: vec![(0.9, 1.0, true)],
                },
                per_class: vec![],
            }],
        };
        let table = render_table(&report);
        assert!(table.contains("d=1"));
        assert!(table.contains("overall"));
        let records = records_json(&report);
        assert_eq!(records.lines().count(), 1);
        assert!(records.contains("\"recall\":1.0"));
    }
}
