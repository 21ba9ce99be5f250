//! Aggregation across KPIs and output as CSV or an aligned text table.

use std::collections::BTreeMap;
use std::io::Write;

use alforest_core::{QueryStrategy, UpdateStrategy};
use serde::{Deserialize, Serialize};

use crate::grid::ResultRow;

/// Mean over KPIs for one grid cell. Each KPI contributes the mean of its
/// seeds, so every KPI weighs the same.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub strategy: QueryStrategy,
    pub update: UpdateStrategy,
    pub budget: f64,
    pub kpis: usize,
    pub runs: usize,
    pub baseline_f1: f64,
    pub f1: f64,
    pub delta_f1: f64,
    /// `f1 / baseline_f1 - 1`; absent when the baseline is zero.
    pub relative_improvement: Option<f64>,
    pub mean_seconds: f64,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Groups rows by (dataset, strategy, update, budget), keeping the order
/// in which the groups first appear.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    type Key = (String, QueryStrategy, UpdateStrategy, u64);
    let mut order: Vec<Key> = Vec::new();
    let mut groups: BTreeMap<Key, BTreeMap<&str, Vec<&ResultRow>>> = BTreeMap::new();
    for row in rows {
        let key = (row.dataset.clone(), row.strategy, row.update, row.budget.to_bits());
        let per_kpi = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            BTreeMap::new()
        });
        per_kpi.entry(row.kpi.as_str()).or_default().push(row);
    }
    order
        .into_iter()
        .map(|key| {
            let per_kpi = &groups[&key];
            let kpi_mean = |f: fn(&ResultRow) -> f64| mean(per_kpi.values().map(|rs| mean(rs.iter().map(|r| f(r)))));
            let baseline_f1 = kpi_mean(|r| r.baseline_f1);
            let f1 = kpi_mean(|r| r.f1);
            SummaryRow {
                dataset: key.0.clone(),
                strategy: key.1,
                update: key.2,
                budget: f64::from_bits(key.3),
                kpis: per_kpi.len(),
                runs: per_kpi.values().map(Vec::len).sum(),
                baseline_f1,
                f1,
                delta_f1: f1 - baseline_f1,
                relative_improvement: (baseline_f1 > 0.0).then(|| f1 / baseline_f1 - 1.0),
                mean_seconds: mean(per_kpi.values().flatten().map(|r| r.seconds)),
            }
        })
        .collect()
}

pub fn write_csv<W: Write, T: Serialize>(writer: W, rows: &[T]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Left-aligned text columns separated by two spaces.
pub fn render_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: &mut dyn Iterator<Item = &str>| -> String {
        let padded: Vec<String> = cells.zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        padded.join("  ").trim_end().to_string()
    };
    let mut out = line(&mut headers.iter().copied());
    out.push('\n');
    let rules: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    out.push_str(&line(&mut rules.iter().map(String::as_str)));
    for row in rows {
        out.push('\n');
        out.push_str(&line(&mut row.iter().map(String::as_str)));
    }
    out.push('\n');
    out
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

/// Budget fraction as a percentage without float noise (0.05 -> "5%").
fn budget_label(b: f64) -> String {
    format!("{}%", (b * 100.0 * 1e6).round() / 1e6)
}

/// Strategy by update by budget view: F1 values in percent.
pub fn summary_table(summary: &[SummaryRow]) -> String {
    let rows: Vec<Vec<String>> = summary
        .iter()
        .map(|s| {
            vec![
                s.dataset.clone(),
                s.strategy.to_string(),
                s.update.to_string(),
                budget_label(s.budget),
                s.kpis.to_string(),
                pct(s.baseline_f1),
                pct(s.f1),
                format!("{:+.2}", 100.0 * s.delta_f1),
                s.relative_improvement
                    .map(|r| format!("{:+.1}%", 100.0 * r))
                    .unwrap_or_else(|| "-".into()),
                format!("{:.3}", s.mean_seconds),
            ]
        })
        .collect();
    render_table(
        &[
            "dataset", "query", "update", "budget", "kpis", "base_f1", "f1", "delta", "relative", "seconds",
        ],
        &rows,
    )
}

pub fn rows_table(rows: &[ResultRow]) -> String {
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.dataset.clone(),
                r.kpi.clone(),
                r.seed.to_string(),
                r.strategy.to_string(),
                r.update.to_string(),
                budget_label(r.budget),
                r.labeled.to_string(),
                pct(r.baseline_f1),
                pct(r.f1),
                format!("{:.4}", r.offset_before),
                format!("{:.4}", r.offset_after),
                format!("{:.3}", r.seconds),
            ]
        })
        .collect();
    render_table(
        &[
            "dataset", "kpi", "seed", "query", "update", "budget", "labeled", "base_f1", "f1", "offset0", "offset1",
            "seconds",
        ],
        &cells,
    )
}
