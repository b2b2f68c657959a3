//! trec_eval-style effectiveness metrics and method comparison.
//!
//! nDCG uses raw grades with linear gain by default. MAP, RR and recall
//! binarize grades at [`EvalOptions::relevance_threshold`] (default 2, the
//! TREC DL passage convention). Unjudged documents count as grade 0. A query
//! absent from the qrels, or with only zero grades, is excluded from every
//! mean.

mod run;
mod stats;

pub use run::{RunEntry, RunFile};
pub use stats::{
    bonferroni, ln_gamma, paired_ttest, regularized_incomplete_beta, student_t_two_tailed, TTest,
};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::qrels::{Grade, Qrels};

pub type Judgments = BTreeMap<String, Grade>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Gain {
    /// `gain = grade`, as trec_eval.
    #[default]
    Linear,
    /// `gain = 2^grade - 1`.
    Exponential,
}

impl Gain {
    fn of(self, grade: Grade) -> f64 {
        match self {
            Gain::Linear => grade as f64,
            Gain::Exponential => 2f64.powi(grade as i32) - 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub relevance_threshold: Grade,
    pub gain: Gain,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            relevance_threshold: 2,
            gain: Gain::Linear,
        }
    }
}

fn is_judged(judgments: Option<&Judgments>) -> Option<&Judgments> {
    judgments.filter(|j| j.values().any(|&g| g > 0))
}

/// nDCG at `cutoff`; `None` when the query has no positive judgment.
pub fn ndcg_at(ranking: &[&str], judgments: &Judgments, cutoff: usize, gain: Gain) -> Option<f64> {
    assert!(cutoff >= 1, "nDCG cutoff must be at least 1");
    let mut ideal: Vec<Grade> = judgments.values().copied().filter(|&g| g > 0).collect();
    if ideal.is_empty() {
        return None;
    }
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let idcg: f64 = ideal
        .iter()
        .take(cutoff)
        .enumerate()
        .map(|(i, &g)| gain.of(g) * discount(i))
        .sum();
    let dcg: f64 = ranking
        .iter()
        .take(cutoff)
        .enumerate()
        .map(|(i, d)| gain.of(judgments.get(*d).copied().unwrap_or(0)) * discount(i))
        .sum();
    Some(dcg / idcg)
}

fn relevant_count(judgments: &Judgments, threshold: Grade) -> usize {
    judgments
        .values()
        .filter(|&&g| g > 0 && g >= threshold)
        .count()
}

fn is_relevant(judgments: &Judgments, doc: &str, threshold: Grade) -> bool {
    judgments.get(doc).is_some_and(|&g| g > 0 && g >= threshold)
}

/// Average precision over the whole ranking.
pub fn average_precision(ranking: &[&str], judgments: &Judgments, threshold: Grade) -> f64 {
    let total = relevant_count(judgments, threshold);
    if total == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, d) in ranking.iter().enumerate() {
        if is_relevant(judgments, d, threshold) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / total as f64
}

pub fn reciprocal_rank(ranking: &[&str], judgments: &Judgments, threshold: Grade) -> f64 {
    ranking
        .iter()
        .position(|d| is_relevant(judgments, d, threshold))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

pub fn recall_at(ranking: &[&str], judgments: &Judgments, threshold: Grade, cutoff: usize) -> f64 {
    let total = relevant_count(judgments, threshold);
    if total == 0 {
        return 0.0;
    }
    let found = ranking
        .iter()
        .take(cutoff)
        .filter(|d| is_relevant(judgments, d, threshold))
        .count();
    found as f64 / total as f64
}

pub const METRIC_NAMES: [&str; 7] = [
    "MAP", "RR", "R@1000", "nDCG@1", "nDCG@3", "nDCG@10", "nDCG@100",
];
pub const NDCG10: usize = 5;

pub type MetricRow = [f64; 7];

/// The fixed metric family for one query, in [`METRIC_NAMES`] order.
pub fn query_metrics(
    ranking: &[&str],
    judgments: &Judgments,
    opts: EvalOptions,
) -> Option<MetricRow> {
    let t = opts.relevance_threshold;
    let ndcg = |c| ndcg_at(ranking, judgments, c, opts.gain);
    Some([
        average_precision(ranking, judgments, t),
        reciprocal_rank(ranking, judgments, t),
        recall_at(ranking, judgments, t, 1000),
        ndcg(1)?,
        ndcg(3)?,
        ndcg(10)?,
        ndcg(100)?,
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub tag: String,
    pub per_query: BTreeMap<String, MetricRow>,
    pub means: MetricRow,
    /// Run queries without any positive judgment.
    pub excluded: Vec<String>,
}

impl MetricReport {
    pub fn mean(&self, metric: usize) -> f64 {
        self.means[metric]
    }

    pub fn column(&self, metric: usize) -> Vec<f64> {
        self.per_query.values().map(|r| r[metric]).collect()
    }
}

/// Evaluates every query of `run`. Judged queries missing from the run are
/// ignored, as trec_eval does without `-c`.
pub fn evaluate(run: &RunFile, qrels: &Qrels, opts: EvalOptions) -> MetricReport {
    let mut per_query = BTreeMap::new();
    let mut excluded = Vec::new();
    for (qid, entries) in run.iter() {
        let ranking: Vec<&str> = entries.iter().map(|e| e.docid.as_str()).collect();
        match is_judged(qrels.for_query(qid)).and_then(|j| query_metrics(&ranking, j, opts)) {
            Some(row) => {
                per_query.insert(qid.to_owned(), row);
            }
            None => {
                log::warn!("query {qid} has no positive judgments; excluded from means");
                excluded.push(qid.to_owned());
            }
        }
    }
    let mut means = [0.0; 7];
    if !per_query.is_empty() {
        for row in per_query.values() {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = per_query.len() as f64;
        for m in &mut means {
            *m /= n;
        }
    }
    MetricReport {
        tag: run.tag.clone(),
        per_query,
        means,
        excluded,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub tests: [TTest; 7],
    /// Bonferroni-adjusted over the seven-metric family.
    pub adjusted_p: [f64; 7],
    pub significant: [bool; 7],
}

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

/// Paired comparison of `b` against baseline `a` on every metric.
pub fn compare(a: &MetricReport, b: &MetricReport) -> Result<Comparison> {
    let only_a: Vec<&String> = a
        .per_query
        .keys()
        .filter(|q| !b.per_query.contains_key(*q))
        .collect();
    let only_b: Vec<&String> = b
        .per_query
        .keys()
        .filter(|q| !a.per_query.contains_key(*q))
        .collect();
    if !only_a.is_empty() || !only_b.is_empty() {
        return Err(Error::Validation(format!(
            "runs cover different query sets; only in {}: {only_a:?}; only in {}: {only_b:?}",
            a.tag, b.tag
        )));
    }
    let mut tests = [TTest {
        t: 0.0,
        p: 1.0,
        degenerate: true,
    }; 7];
    for (m, slot) in tests.iter_mut().enumerate() {
        *slot = paired_ttest(&b.column(m), &a.column(m))?;
    }
    let raw: Vec<f64> = tests.iter().map(|t| t.p).collect();
    let adjusted: [f64; 7] = bonferroni(&raw, 7).try_into().unwrap();
    Ok(Comparison {
        tests,
        adjusted_p: adjusted,
        significant: adjusted.map(|p| p < SIGNIFICANCE_LEVEL),
    })
}

/// Tab-separated metric table. With a comparison, adds the second run's
/// means, adjusted p-values and a `*` where significant.
pub fn format_table(a: &MetricReport, b: Option<(&MetricReport, &Comparison)>) -> String {
    let mut out = String::new();
    match b {
        None => {
            writeln!(out, "metric\t{}", a.tag).unwrap();
            for (m, name) in METRIC_NAMES.iter().enumerate() {
                writeln!(out, "{name}\t{:.4}", a.means[m]).unwrap();
            }
        }
        Some((b, cmp)) => {
            writeln!(out, "metric\t{}\t{}\tp_bonferroni\tsig", a.tag, b.tag).unwrap();
            for (m, name) in METRIC_NAMES.iter().enumerate() {
                writeln!(
                    out,
                    "{name}\t{:.4}\t{:.4}\t{:.4}\t{}",
                    a.means[m],
                    b.means[m],
                    cmp.adjusted_p[m],
                    if cmp.significant[m] { "*" } else { "" }
                )
                .unwrap();
            }
        }
    }
    out
}
