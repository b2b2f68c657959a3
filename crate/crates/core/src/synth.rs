//! Seeded clustered corpora for desk-scale experiments.
//!
//! Each cluster has a unit-norm center. The first `relevant_per_cluster`
//! passages of a cluster are the center plus per-component Gaussian noise and
//! carry grade [`SYNTHETIC_GRADE`] for every query of that cluster; the rest
//! are uniform random unit vectors with no judgment. Queries are the center
//! plus their own per-component noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure, Result};
use crate::qrels::{Grade, Qrels};
use crate::store::VectorStore;

/// Grade given to synthetic relevant passages. Relevant under both the
/// `>= 1` and `>= 2` binarization conventions.
pub const SYNTHETIC_GRADE: Grade = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_clusters: usize,
    pub passages_per_cluster: usize,
    pub relevant_per_cluster: usize,
    pub dim: usize,
    pub sigma_rel: f64,
    pub sigma_query: f64,
    /// Queries drawn per cluster; 1 gives one query per cluster.
    pub queries_per_cluster: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_clusters: 8,
            passages_per_cluster: 100,
            relevant_per_cluster: 5,
            dim: 64,
            sigma_rel: 0.3,
            sigma_query: 0.6,
            queries_per_cluster: 1,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.n_clusters > 0
                && self.passages_per_cluster > 0
                && self.relevant_per_cluster > 0
                && self.dim > 0
                && self.queries_per_cluster > 0,
            Config,
            "synthetic counts and dim must be positive: {self:?}"
        );
        ensure!(
            self.relevant_per_cluster <= self.passages_per_cluster,
            Config,
            "relevant_per_cluster ({}) exceeds passages_per_cluster ({})",
            self.relevant_per_cluster,
            self.passages_per_cluster
        );
        ensure!(
            self.sigma_rel.is_finite()
                && self.sigma_query.is_finite()
                && self.sigma_rel >= 0.0
                && self.sigma_query >= 0.0,
            Config,
            "noise scales must be finite and non-negative"
        );
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSet {
    pub corpus: VectorStore,
    pub queries: VectorStore,
    pub qrels: Qrels,
}

pub fn passage_id(cluster: usize, j: usize) -> String {
    format!("c{cluster:03}-p{j:04}")
}

pub fn query_id(cluster: usize, r: usize) -> String {
    format!("c{cluster:03}-q{r:03}")
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = cfg.dim;

    let centers: Vec<Vec<f64>> = (0..cfg.n_clusters)
        .map(|_| unit_vector(&mut rng, dim))
        .collect();

    let mut ids = Vec::with_capacity(cfg.n_clusters * cfg.passages_per_cluster);
    let mut data = Vec::with_capacity(ids.capacity() * dim);
    let mut qrels = Qrels::new();
    let mut relevant_ids: Vec<Vec<String>> = vec![Vec::new(); cfg.n_clusters];
    for (c, center) in centers.iter().enumerate() {
        for j in 0..cfg.passages_per_cluster {
            let id = passage_id(c, j);
            if j < cfg.relevant_per_cluster {
                data.extend(noisy(&mut rng, center, cfg.sigma_rel));
                relevant_ids[c].push(id.clone());
            } else {
                data.extend(unit_vector(&mut rng, dim).into_iter().map(|v| v as f32));
            }
            ids.push(id);
        }
    }
    let corpus = VectorStore::new(dim, ids, data)?;

    let mut qids = Vec::with_capacity(cfg.n_clusters * cfg.queries_per_cluster);
    let mut qdata = Vec::with_capacity(qids.capacity() * dim);
    for (c, center) in centers.iter().enumerate() {
        for r in 0..cfg.queries_per_cluster {
            let qid = query_id(c, r);
            qdata.extend(noisy(&mut rng, center, cfg.sigma_query));
            for pid in &relevant_ids[c] {
                qrels.insert(&qid, pid, SYNTHETIC_GRADE)?;
            }
            qids.push(qid);
        }
    }
    let queries = VectorStore::new(dim, qids, qdata)?;

    Ok(SyntheticSet {
        corpus,
        queries,
        qrels,
    })
}

/// Splits a query store into (kept, held out), holding out every
/// `every`-th row starting from the last of each block.
pub fn holdout(queries: &VectorStore, every: usize) -> (VectorStore, VectorStore) {
    assert!(every >= 2, "holdout period must be at least 2");
    let (held, kept): (Vec<usize>, Vec<usize>) =
        (0..queries.len()).partition(|i| i % every == every - 1);
    (queries.select(&kept), queries.select(&held))
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn noisy<'a>(
    rng: &'a mut ChaCha8Rng,
    center: &'a [f64],
    sigma: f64,
) -> impl Iterator<Item = f32> + 'a {
    center.iter().map(move |&c| {
        let n: f64 = rng.sample(StandardNormal);
        (c + sigma * n) as f32
    })
}
