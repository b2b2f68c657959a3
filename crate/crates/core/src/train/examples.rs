//! Training example construction with hard negatives from the first-round
//! ranking.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainConfig;
use crate::error::Result;
use crate::index::batch_search;
use crate::qrels::Qrels;
use crate::store::VectorStore;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub query_id: String,
    pub query: Vec<f32>,
    /// First-round top-k passages, best first.
    pub feedback: Vec<Vec<f32>>,
    pub positive_id: String,
    pub positive: Vec<f32>,
    pub negative_ids: Vec<String>,
    pub negatives: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExampleSet {
    pub examples: Vec<TrainingExample>,
    /// Queries dropped for lack of a judged-relevant passage in the corpus
    /// (or an empty negative window).
    pub skipped: usize,
    /// Queries whose rank window held fewer than `n_negatives` candidates.
    pub short_windows: usize,
}

/// One example per usable query, in query order. Deterministic per
/// `cfg.seed`.
pub fn build_examples(
    corpus: &VectorStore,
    queries: &VectorStore,
    qrels: &Qrels,
    cfg: &TrainConfig,
) -> Result<ExampleSet> {
    cfg.validate()?;
    let (low, high) = cfg.negative_rank_range;
    let depth = high.max(cfg.prf_depth);
    let rankings = batch_search(corpus, queries, depth)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut set = ExampleSet::default();

    for (qi, ranking) in rankings.iter().enumerate() {
        let qid = queries.id(qi);
        let relevant: Vec<&str> = qrels
            .relevant(qid, 1)
            .into_iter()
            .filter(|d| corpus.row_index(d).is_some())
            .collect();
        if relevant.is_empty() {
            log::warn!("query {qid}: no judged-relevant passage in the corpus; skipped");
            set.skipped += 1;
            continue;
        }
        let relevant_set: HashSet<&str> = relevant.iter().copied().collect();
        // ranks are 1-based and inclusive at both ends
        let pool: Vec<&str> = ranking
            .hits
            .iter()
            .enumerate()
            .filter(|(i, h)| {
                (low..=high).contains(&(i + 1)) && !relevant_set.contains(h.id.as_str())
            })
            .map(|(_, h)| h.id.as_str())
            .collect();
        if pool.is_empty() {
            log::warn!("query {qid}: no candidates in ranks {low}..={high}; skipped");
            set.skipped += 1;
            continue;
        }
        if pool.len() < cfg.n_negatives {
            log::warn!(
                "query {qid}: only {} candidates in ranks {low}..={high}, wanted {}",
                pool.len(),
                cfg.n_negatives
            );
            set.short_windows += 1;
        }

        let positive_id = *relevant.choose(&mut rng).expect("non-empty");
        let mut negative_ids: Vec<&str> = pool;
        negative_ids.shuffle(&mut rng);
        negative_ids.truncate(cfg.n_negatives);

        let row = |id: &str| corpus.get(id).expect("id from corpus").to_vec();
        set.examples.push(TrainingExample {
            query_id: qid.to_owned(),
            query: queries.row(qi).to_vec(),
            feedback: ranking
                .hits
                .iter()
                .take(cfg.prf_depth)
                .map(|h| corpus.row(h.row as usize).to_vec())
                .collect(),
            positive_id: positive_id.to_owned(),
            positive: row(positive_id),
            negatives: negative_ids.iter().map(|id| row(id)).collect(),
            negative_ids: negative_ids.into_iter().map(String::from).collect(),
        });
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::search;
    use crate::synth::{generate, SyntheticConfig};

    #[test]
    fn negatives_come_from_rank_window() {
        let s = generate(&SyntheticConfig {
            queries_per_cluster: 2,
            ..Default::default()
        })
        .unwrap();
        let cfg = TrainConfig::default();
        let set = build_examples(&s.corpus, &s.queries, &s.qrels, &cfg).unwrap();
        assert_eq!(set.examples.len(), 16);
        assert_eq!(set.skipped, 0);
        for ex in &set.examples {
            assert_eq!(ex.negatives.len(), 20);
            assert_eq!(ex.feedback.len(), 3);
            assert!(!ex.negative_ids.contains(&ex.positive_id));
            let q = s.queries.get(&ex.query_id).unwrap();
            let full = search(&s.corpus, &ex.query_id, q, s.corpus.len()).unwrap();
            for id in &ex.negative_ids {
                let rank = full.ids().position(|d| d == id).unwrap() + 1;
                assert!((10..=200).contains(&rank), "rank {rank}");
                assert_eq!(s.qrels.grade(&ex.query_id, id), 0);
            }
            assert_eq!(s.qrels.grade(&ex.query_id, &ex.positive_id), 2);
        }
    }

    #[test]
    fn single_relevant_forces_positive_and_seed_is_deterministic() {
        let s = generate(&SyntheticConfig {
            relevant_per_cluster: 1,
            ..Default::default()
        })
        .unwrap();
        let cfg = TrainConfig::default();
        let a = build_examples(&s.corpus, &s.queries, &s.qrels, &cfg).unwrap();
        for ex in &a.examples {
            let cluster = &ex.query_id[..4];
            assert_eq!(ex.positive_id, format!("{cluster}-p0000"));
        }
        let b = build_examples(&s.corpus, &s.queries, &s.qrels, &cfg).unwrap();
        assert_eq!(a, b);
        let c = build_examples(
            &s.corpus,
            &s.queries,
            &s.qrels,
            &TrainConfig { seed: 99, ..cfg },
        )
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn unjudged_queries_are_skipped_and_short_windows_counted() {
        let s = generate(&SyntheticConfig::default()).unwrap();
        let mut partial = Qrels::new();
        partial.insert("c000-q000", "c000-p0000", 2).unwrap();
        let cfg = TrainConfig {
            negative_rank_range: (795, 900),
            ..Default::default()
        };
        let set = build_examples(&s.corpus, &s.queries, &partial, &cfg).unwrap();
        assert_eq!(set.examples.len(), 1);
        assert_eq!(set.skipped, 7);
        assert_eq!(set.short_windows, 1);
        assert!(set.examples[0].negatives.len() <= 6);
    }
}
