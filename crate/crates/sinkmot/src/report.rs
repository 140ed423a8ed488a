//! Evaluation report rendering. IDF1 is not computed and always shows "n/a".

use std::fmt::Write as _;

use sinkmot_core::metrics::EvalReport;

const COLUMNS: [&str; 12] = ["sequence", "MOTA", "IDF1", "FP", "FN", "IDSW", "MT", "PT", "ML", "MT/ML", "GT", "tracks"];

fn ratio(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".to_string() } else { "-inf".to_string() }
    } else {
        format!("{v:.3}")
    }
}

fn row(name: &str, r: &EvalReport) -> [String; 12] {
    [
        name.to_string(),
        if r.mota.is_finite() { format!("{:.4}", r.mota) } else { ratio(r.mota) },
        "n/a".to_string(),
        r.fp.to_string(),
        r.fn_.to_string(),
        r.idsw.to_string(),
        r.mt.to_string(),
        r.pt.to_string(),
        r.ml.to_string(),
        ratio(r.mt_ml_ratio),
        r.gt_total.to_string(),
        r.gt_tracks.to_string(),
    ]
}

/// Rows for every sequence, plus an `OVERALL` row when there are several.
fn rows(reports: &[(String, EvalReport)]) -> Vec<[String; 12]> {
    let mut out: Vec<_> = reports.iter().map(|(n, r)| row(n, r)).collect();
    if reports.len() > 1 {
        let all: Vec<EvalReport> = reports.iter().map(|(_, r)| r.clone()).collect();
        out.push(row("OVERALL", &EvalReport::combine(&all)));
    }
    out
}

/// Fixed-width text table: the name column left-aligned, numbers right-aligned.
pub fn text_table(reports: &[(String, EvalReport)]) -> String {
    let body = rows(reports);
    let mut widths: Vec<usize> = COLUMNS.iter().map(|c| c.len()).collect();
    for r in &body {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.len());
        }
    }
    let mut s = String::new();
    let mut line = |cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        writeln!(s, "{}", parts.join("  ").trim_end()).expect("write to string");
    };
    line(&COLUMNS.map(String::from));
    for r in &body {
        line(r);
    }
    s
}

pub fn csv(reports: &[(String, EvalReport)]) -> String {
    let mut s = COLUMNS.join(",");
    s.push('\n');
    for r in rows(reports) {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}
