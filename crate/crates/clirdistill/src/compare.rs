//! Paired comparison of two runs over the same queries.

use std::fmt::Write as _;
use std::path::Path;

use clirdistill_core::eval::{judged_at_k, ndcg_at_k, recall_at_k, MetricReport, RunFile};
use clirdistill_core::stats::{paired_t_test, TTest};
use clirdistill_core::Qrels;

use crate::config::EvalSection;
use crate::error::{Error, Result};
use crate::formats::write_with;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricComparison {
    pub metric: String,
    pub queries: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub delta: f64,
    /// `100 · mean_a / mean_b`, undefined when `mean_b` is zero.
    pub percent: Option<f64>,
    pub test: TTest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub metrics: Vec<MetricComparison>,
}

impl Comparison {
    pub fn metric(&self, name: &str) -> Option<&MetricComparison> {
        self.metrics.iter().find(|m| m.metric == name)
    }
}

/// The three report metrics of a run at the configured depths.
pub fn metric_reports(run: &RunFile, qrels: &Qrels, eval: &EvalSection) -> Result<Vec<(String, MetricReport)>> {
    Ok(vec![
        (format!("ndcg@{}", eval.ndcg_depth), ndcg_at_k(run, qrels, eval.ndcg_depth)?),
        (format!("recall@{}", eval.recall_depth), recall_at_k(run, qrels, eval.recall_depth)?),
        (format!("judged@{}", eval.judged_depth), judged_at_k(run, qrels, eval.judged_depth)?),
    ])
}

/// Fails with the symmetric difference when the runs cover different queries.
pub fn check_same_queries(a: &RunFile, b: &RunFile) -> Result<()> {
    let only_a: Vec<String> = a.query_ids().filter(|q| b.ranking(q).is_none()).map(String::from).collect();
    let only_b: Vec<String> = b.query_ids().filter(|q| a.ranking(q).is_none()).map(String::from).collect();
    if only_a.is_empty() && only_b.is_empty() {
        Ok(())
    } else {
        Err(Error::QueryMismatch { only_a, only_b })
    }
}

pub fn compare_runs(a: &RunFile, b: &RunFile, qrels: &Qrels, eval: &EvalSection) -> Result<Comparison> {
    check_same_queries(a, b)?;
    let ra = metric_reports(a, qrels, eval)?;
    let rb = metric_reports(b, qrels, eval)?;
    let mut metrics = Vec::new();
    for ((name, x), (_, y)) in ra.into_iter().zip(rb) {
        // recall leaves out queries without relevant documents, identically on both sides
        let (xs, ys): (Vec<f64>, Vec<f64>) = x
            .per_query
            .iter()
            .filter_map(|(q, v)| y.per_query.get(q).map(|w| (*v, *w)))
            .unzip();
        let test = paired_t_test(&xs, &ys)?;
        metrics.push(MetricComparison {
            metric: name,
            queries: xs.len(),
            mean_a: x.mean,
            mean_b: y.mean,
            delta: x.mean - y.mean,
            percent: (y.mean != 0.0).then(|| 100.0 * x.mean / y.mean),
            test,
        });
    }
    Ok(Comparison {
        a: a.tag.clone(),
        b: b.tag.clone(),
        metrics,
    })
}

const HEADER: &str = "run_a\trun_b\tmetric\tqueries\tmean_a\tmean_b\tdelta\tpercent\tt\tdf\tp";

fn row(out: &mut String, c: &Comparison, m: &MetricComparison) {
    let percent = m.percent.map_or_else(|| "NA".to_string(), |p| format!("{p:.2}"));
    let _ = writeln!(
        out,
        "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{:.4}\t{}\t{:.4}",
        c.a, c.b, m.metric, m.queries, m.mean_a, m.mean_b, m.delta, percent, m.test.t, m.test.df, m.test.p
    );
}

/// TSV report; p-values to four decimals. The last line gives the number of
/// comparisons, for readers applying a multiple-testing correction.
pub fn render(comparisons: &[Comparison]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    let mut n = 0;
    for c in comparisons {
        for m in &c.metrics {
            row(&mut out, c, m);
            n += 1;
        }
    }
    let _ = writeln!(out, "# comparisons\t{n}");
    out
}

pub fn write_report(path: &Path, comparisons: &[Comparison]) -> Result<()> {
    let text = render(comparisons);
    write_with(path, |w| w.write_all(text.as_bytes()))
}
