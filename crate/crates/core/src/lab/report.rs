//! Plain-text renderings of metrics tables.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::lab::stage2::{MetricsRow, MetricsTable};

/// `x` rounded half-up to one decimal, in tenths.
pub fn tenths(x: f64) -> i64 {
    (x * 10.0 + 0.5 + 1e-9).floor() as i64
}

pub fn fmt1(x: f64) -> String {
    fmt_tenths(tenths(x))
}

fn fmt_tenths(t: i64) -> String {
    let sign = if t < 0 { "-" } else { "" };
    format!("{sign}{}.{}", t.abs() / 10, t.abs() % 10)
}

/// `"89.0+0.3"`: the rounded base followed by the signed difference of the
/// rounded values.
pub fn delta_cell(base: f64, value: f64) -> String {
    let (b, v) = (tenths(base), tenths(value));
    let d = v - b;
    let sign = if d < 0 { '-' } else { '+' };
    format!("{}{sign}{}", fmt_tenths(b), fmt_tenths(d.abs()))
}

fn mean(rows: &[MetricsRow], f: impl Fn(&MetricsRow) -> f64) -> f64 {
    rows.iter().map(f).sum::<f64>() / rows.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub csv: String,
    pub table1: String,
    pub table2: String,
}

impl Report {
    pub fn text(&self) -> String {
        format!("{}\n{}", self.table1, self.table2)
    }
}

fn render(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<String>| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                let _ = write!(s, "{c:<w$}");
            } else {
                let _ = write!(s, "  {c:>w$}");
            }
        }
        s.trim_end().to_string()
    };
    let mut out = line(header.iter().map(|h| h.to_string()).collect());
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.clone()));
        out.push('\n');
    }
    out
}

/// Builds the delta table (test and validation accuracy, base vs modulated)
/// and the λ table. `base` supplies the unmodulated accuracies; its domains
/// must match `modulated` row for row.
pub fn make_report(modulated: &MetricsTable, base: &MetricsTable) -> Result<Report> {
    if modulated.rows.is_empty() {
        return Err(Error::invalid("empty metrics table"));
    }
    let names = |t: &MetricsTable| t.rows.iter().map(|r| r.domain.clone()).collect::<Vec<_>>();
    if names(modulated) != names(base) {
        return Err(Error::invalid(format!(
            "domain mismatch: {:?} vs {:?}",
            names(base),
            names(modulated)
        )));
    }
    let (m, b) = (&modulated.rows, &base.rows);

    let mut t1: Vec<Vec<String>> = b
        .iter()
        .zip(m)
        .map(|(b, m)| vec![b.domain.clone(), delta_cell(b.o_tc, m.s_tc), delta_cell(b.o_vc, m.s_vc)])
        .collect();
    t1.push(vec![
        "Avg".into(),
        delta_cell(mean(b, |r| r.o_tc), mean(m, |r| r.s_tc)),
        delta_cell(mean(b, |r| r.o_vc), mean(m, |r| r.s_vc)),
    ]);

    let mut t2: Vec<Vec<String>> = m
        .iter()
        .map(|r| {
            vec![
                r.domain.clone(),
                format!("{} -> {}", fmt1(r.lambda_learned), fmt1(r.lambda_final)),
                fmt1(r.o_vc),
                fmt1(r.o_tc),
                fmt1(r.s_vc),
                fmt1(r.s_tc),
                fmt1(r.d_vc),
                fmt1(r.d_tc),
            ]
        })
        .collect();
    let cols: [fn(&MetricsRow) -> f64; 6] = [|r| r.o_vc, |r| r.o_tc, |r| r.s_vc, |r| r.s_tc, |r| r.d_vc, |r| r.d_tc];
    let mut avg = vec!["Avg".to_string(), String::new()];
    avg.extend(cols.iter().map(|f| fmt1(mean(m, f))));
    t2.push(avg);

    Ok(Report {
        csv: modulated.to_csv(),
        table1: render(&["Domain", "Test", "Val"], &t1),
        table2: render(&["Domain", "lambda", "O_vc", "O_tc", "S_vc", "S_tc", "D_vc", "D_tc"], &t2),
    })
}
