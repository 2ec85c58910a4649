//! Per-group means of the recorded scores, laid out with one column per σ
//! from strongest to weakest correlation.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::Serialize;

use super::ExperimentRecord;
use crate::factors::Sigma;
use crate::metrics::pairwise::median;
use crate::vae::Objective;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdaptedSummary {
    pub labels: usize,
    pub correlated: f64,
    pub median_others: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub config_hash: String,
    pub objective: Objective,
    pub beta: f64,
    pub sigma: Sigma,
    pub completed: usize,
    pub failed: usize,
    /// Seed mean of the correlated-pair entanglement score.
    pub correlated: f64,
    /// Median over seeds of each seed's median uncorrelated-pair score.
    pub median_others: Option<f64>,
    pub dci: f64,
    pub mig: f64,
    pub sap: f64,
    /// Seed mean of the correlated-pair unfairness.
    pub unfairness: f64,
    pub adapted: Vec<AdaptedSummary>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn median_of(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut v: Vec<f64> = v.flatten().collect();
    median(&mut v)
}

fn objective_rank(o: Objective) -> u8 {
    match o {
        Objective::BetaVae => 0,
        Objective::AdaGvae => 1,
    }
}

/// Groups records by (config hash, objective, β, σ). Groups without a
/// completed record are omitted. Rows are ordered by objective, β and then σ
/// ascending with ∞ last.
pub fn summarize(records: &[ExperimentRecord]) -> Vec<SummaryRow> {
    // Sigma values are positive, so their bit patterns sort like the values.
    type Key = (String, u8, u64, u64);
    let mut groups: BTreeMap<Key, Vec<&ExperimentRecord>> = BTreeMap::new();
    for r in records {
        let key = (r.config_hash.clone(), objective_rank(r.cell.objective), r.cell.beta.to_bits(), r.cell.sigma.sort_key().to_bits());
        groups.entry(key).or_default().push(r);
    }
    let mut rows = Vec::new();
    for group in groups.values() {
        let done: Vec<_> = group.iter().filter_map(|r| r.result()).collect();
        if done.is_empty() {
            continue;
        }
        let first = &group[0].cell;
        let mut labels: Vec<usize> = done.iter().flat_map(|d| d.adaptations.iter().map(|a| a.labels)).collect();
        labels.sort_unstable();
        labels.dedup();
        let adapted = labels
            .into_iter()
            .map(|m| {
                let reports: Vec<_> =
                    done.iter().filter_map(|d| d.adaptations.iter().find(|a| a.labels == m)).map(|a| &a.report).collect();
                AdaptedSummary {
                    labels: m,
                    correlated: mean(reports.iter().map(|r| r.pairwise_summary.correlated)),
                    median_others: median_of(reports.iter().map(|r| r.pairwise_summary.median_others)),
                }
            })
            .collect();
        rows.push(SummaryRow {
            config_hash: group[0].config_hash.clone(),
            objective: first.objective,
            beta: first.beta,
            sigma: first.sigma,
            completed: done.len(),
            failed: group.len() - done.len(),
            correlated: mean(done.iter().map(|d| d.report.pairwise_summary.correlated)),
            median_others: median_of(done.iter().map(|d| d.report.pairwise_summary.median_others)),
            dci: mean(done.iter().map(|d| d.report.dci)),
            mig: mean(done.iter().map(|d| d.report.mig)),
            sap: mean(done.iter().map(|d| d.report.sap)),
            unfairness: mean(done.iter().map(|d| d.report.correlated_unfairness)),
            adapted,
        });
    }
    rows
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

/// Long-format CSV, one line per row. Adapted scores use `adapted_<M>_…`
/// columns for every label budget present in any row.
pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut budgets: Vec<usize> = rows.iter().flat_map(|r| r.adapted.iter().map(|a| a.labels)).collect();
    budgets.sort_unstable();
    budgets.dedup();
    let mut out = String::from("config_hash,objective,beta,sigma,completed,failed,correlated,median_others,dci,mig,sap,unfairness");
    for m in &budgets {
        let _ = write!(out, ",adapted_{m}_correlated,adapted_{m}_median_others");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.config_hash,
            r.objective,
            r.beta,
            r.sigma,
            r.completed,
            r.failed,
            r.correlated,
            r.median_others.map_or(String::new(), |v| v.to_string()),
            r.dci,
            r.mig,
            r.sap,
            r.unfairness
        );
        for m in &budgets {
            match r.adapted.iter().find(|a| a.labels == *m) {
                Some(a) => {
                    let _ = write!(out, ",{},{}", a.correlated, a.median_others.map_or(String::new(), |v| v.to_string()));
                }
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out
}

/// Aligned text: one block per (config, objective, β), one column per σ.
pub fn summary_text(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    let mut start = 0;
    while start < rows.len() {
        let head = &rows[start];
        let end = start
            + rows[start..]
                .iter()
                .take_while(|r| r.config_hash == head.config_hash && r.objective == head.objective && r.beta == head.beta)
                .count();
        let block = &rows[start..end];
        let _ = writeln!(out, "{} beta={} (config {})", head.objective, head.beta, &head.config_hash[..head.config_hash.len().min(12)]);
        let mut lines: Vec<(String, Vec<String>)> = vec![
            ("sigma".into(), block.iter().map(|r| r.sigma.to_string()).collect()),
            ("models".into(), block.iter().map(|r| format!("{}/{}", r.completed, r.completed + r.failed)).collect()),
            ("correlated pair".into(), block.iter().map(|r| format!("{:.4}", r.correlated)).collect()),
            ("median others".into(), block.iter().map(|r| opt(r.median_others)).collect()),
        ];
        let mut budgets: Vec<usize> = block.iter().flat_map(|r| r.adapted.iter().map(|a| a.labels)).collect();
        budgets.sort_unstable();
        budgets.dedup();
        for m in budgets {
            let find = |r: &SummaryRow| r.adapted.iter().find(|a| a.labels == m).cloned();
            lines.push((format!("adapted {m} correlated"), block.iter().map(|r| find(r).map_or("-".into(), |a| format!("{:.4}", a.correlated))).collect()));
            lines.push((format!("adapted {m} others"), block.iter().map(|r| opt(find(r).and_then(|a| a.median_others))).collect()));
        }
        lines.push(("dci".into(), block.iter().map(|r| format!("{:.4}", r.dci)).collect()));
        lines.push(("mig".into(), block.iter().map(|r| format!("{:.4}", r.mig)).collect()));
        lines.push(("sap".into(), block.iter().map(|r| format!("{:.4}", r.sap)).collect()));
        lines.push(("unfairness".into(), block.iter().map(|r| format!("{:.4}", r.unfairness)).collect()));
        let label_w = lines.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
        let col_w = lines.iter().flat_map(|(_, c)| c.iter().map(String::len)).max().unwrap_or(0).max(6);
        for (label, cells) in lines {
            let _ = write!(out, "  {label:<label_w$}");
            for c in cells {
                let _ = write!(out, "  {c:>col_w$}");
            }
            out.push('\n');
        }
        out.push('\n');
        start = end;
    }
    out
}
