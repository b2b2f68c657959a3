//! Exact maximum-inner-product search.
//!
//! A full scan with a bounded heap. Results are ordered by descending score,
//! ties broken by ascending passage id, so rankings are reproducible across
//! platforms and thread counts.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::error::{ensure, Result};
use crate::store::VectorStore;

/// Inner product, accumulated left to right in `f32`.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub id: String,
    /// Row of the passage in the searched store.
    pub row: u32,
    pub score: f32,
}

/// Ranked result for one query, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredList {
    pub query_id: String,
    pub hits: Vec<Hit>,
}

impl ScoredList {
    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.hits.iter().map(|h| h.id.as_str())
    }
}

/// Ranking order: `Less` means `a` ranks ahead of `b`.
pub fn rank_order(a_score: f32, a_id: &str, b_score: f32, b_id: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_id.cmp(b_id))
}

struct Candidate<'a> {
    score: f32,
    id: &'a str,
    row: u32,
}

// Heap order puts the worst-ranked candidate on top.
impl Ord for Candidate<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order(self.score, self.id, other.score, other.id)
    }
}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate<'_> {}

pub fn search(store: &VectorStore, query_id: &str, query: &[f32], k: usize) -> Result<ScoredList> {
    ensure!(k >= 1, Validation, "k must be at least 1");
    ensure!(
        query.len() == store.dim(),
        Validation,
        "query {query_id:?} has dimension {}, store has {}",
        query.len(),
        store.dim()
    );
    ensure!(
        query.iter().all(|v| v.is_finite()),
        Validation,
        "query {query_id:?} has non-finite entries"
    );

    let mut heap: BinaryHeap<Candidate<'_>> = BinaryHeap::with_capacity(k + 1);
    for (row, vector) in store.rows().enumerate() {
        let cand = Candidate {
            score: dot(query, vector),
            id: store.id(row),
            row: row as u32,
        };
        if heap.len() < k {
            heap.push(cand);
        } else if let Some(mut worst) = heap.peek_mut() {
            if cand < *worst {
                *worst = cand;
            }
        }
    }
    let hits = heap
        .into_sorted_vec()
        .into_iter()
        .map(|c| Hit {
            id: c.id.to_owned(),
            row: c.row,
            score: c.score,
        })
        .collect();
    Ok(ScoredList {
        query_id: query_id.to_owned(),
        hits,
    })
}

/// Searches every row of `queries`. Output order matches query order.
pub fn batch_search(
    store: &VectorStore,
    queries: &VectorStore,
    k: usize,
) -> Result<Vec<ScoredList>> {
    (0..queries.len())
        .into_par_iter()
        .map(|i| search(store, queries.id(i), queries.row(i), k))
        .collect()
}
