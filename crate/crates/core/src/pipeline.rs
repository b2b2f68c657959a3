//! Two-round PRF retrieval: first-round search, query rewrite from the top-k
//! feedback vectors, second-round search over the full corpus index.

use rayon::prelude::*;

use crate::error::{ensure, Result};
use crate::index::{search, ScoredList};
use crate::model::{encode, Parameters};
use crate::prf::{average_prf, rocchio_prf, RocchioParams};
use crate::store::VectorStore;

#[derive(Debug, Clone)]
pub enum Rewrite<'a> {
    /// Single-round retrieval with the raw query.
    None,
    Average,
    Rocchio(RocchioParams),
    Tprf(&'a Parameters<f32>),
}

impl Rewrite<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Rewrite::None => "none",
            Rewrite::Average => "avg",
            Rewrite::Rocchio(_) => "rocchio",
            Rewrite::Tprf(_) => "tprf",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Pipeline<'a> {
    pub corpus: &'a VectorStore,
    pub rewrite: Rewrite<'a>,
    /// PRF depth k.
    pub prf_depth: usize,
    /// Depth of the first-round ranking; feedback is its top `prf_depth`.
    pub first_stage_k: usize,
    pub final_k: usize,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        corpus: &'a VectorStore,
        rewrite: Rewrite<'a>,
        prf_depth: usize,
        final_k: usize,
    ) -> Result<Self> {
        let p = Self {
            corpus,
            rewrite,
            prf_depth,
            first_stage_k: prf_depth,
            final_k,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.final_k >= 1, Config, "final_k must be at least 1");
        if !matches!(self.rewrite, Rewrite::None) {
            ensure!(
                self.prf_depth >= 1,
                Config,
                "PRF depth k must be at least 1"
            );
            ensure!(
                self.first_stage_k >= self.prf_depth,
                Config,
                "first_stage_k ({}) is smaller than PRF depth ({})",
                self.first_stage_k,
                self.prf_depth
            );
        }
        if let Rewrite::Tprf(p) = self.rewrite {
            ensure!(
                p.config().dim() == self.corpus.dim(),
                Validation,
                "checkpoint dim {} does not match corpus dim {}",
                p.config().dim(),
                self.corpus.dim()
            );
        }
        Ok(())
    }

    /// The rewritten query vector for one query (the raw query for `None`).
    pub fn rewrite_query(&self, query_id: &str, query: &[f32]) -> Result<Vec<f32>> {
        if let Rewrite::None = self.rewrite {
            return Ok(query.to_vec());
        }
        let first = search(self.corpus, query_id, query, self.first_stage_k)?;
        let feedback: Vec<&[f32]> = first
            .hits
            .iter()
            .take(self.prf_depth)
            .map(|h| self.corpus.row(h.row as usize))
            .collect();
        match &self.rewrite {
            Rewrite::None => unreachable!(),
            Rewrite::Average => average_prf(query, &feedback),
            Rewrite::Rocchio(p) => rocchio_prf(query, &feedback, *p),
            Rewrite::Tprf(params) => encode(query, &feedback, *params),
        }
    }

    pub fn run_query(&self, query_id: &str, query: &[f32]) -> Result<ScoredList> {
        let q = self.rewrite_query(query_id, query)?;
        search(self.corpus, query_id, &q, self.final_k)
    }

    /// Runs every query; output order follows `queries`.
    pub fn run(&self, queries: &VectorStore) -> Result<Vec<ScoredList>> {
        (0..queries.len())
            .into_par_iter()
            .map(|i| self.run_query(queries.id(i), queries.row(i)))
            .collect()
    }
}
