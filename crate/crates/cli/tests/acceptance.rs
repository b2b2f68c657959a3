//! Acceptance suite: one check per criterion, each printing a single
//! `PASS`/`FAIL` line. Runs without the libtest harness so the lines always
//! reach the output; `cargo test -p tprf-cli --test acceptance`.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};
use tprf_core::bench::{measure_latency, TextPrfCostModel};
use tprf_core::index::search;
use tprf_core::metrics::{
    average_precision, ndcg_at, paired_ttest, recall_at, reciprocal_rank, Gain, Judgments, NDCG10,
};
use tprf_core::model::encode;
use tprf_core::train::{gradient_check, loss_from_scores, validation_ndcg10, TrainingExample};
use tprf_core::*;

struct Verdict {
    name: &'static str,
    ok: bool,
    detail: String,
}

fn verdict(name: &'static str, ok: bool, detail: String) -> Verdict {
    Verdict { name, ok, detail }
}

fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
    (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

fn gradient_correctness() -> Verdict {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut entries = 0;
    for layers in 1..=2 {
        let cfg = ModelConfig::new(layers, 2, 8, 16)
            .unwrap()
            .with_dropout(0.0)
            .unwrap();
        let params = init_params(&cfg, 100 + layers as u64).cast::<f64>();
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ex = TrainingExample {
                query_id: "q".into(),
                query: random_vec(&mut rng, 8),
                feedback: (0..2).map(|_| random_vec(&mut rng, 8)).collect(),
                positive_id: "p".into(),
                positive: random_vec(&mut rng, 8),
                negative_ids: (0..6).map(|i| format!("n{i}")).collect(),
                negatives: (0..6).map(|_| random_vec(&mut rng, 8)).collect(),
            };
            let c = gradient_check(&params, &ex, 1e-4);
            assert_eq!(c.entries as u64, cfg.param_count());
            entries += c.entries;
            if c.max_rel_error > worst.0 {
                worst = (c.max_rel_error, format!("l={layers} {}", c.worst));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "gradient correctness",
        worst.0 < 1e-4 && secs < 60.0,
        format!(
            "{entries} entries, max relative error {:.2e} at {}, {secs:.2}s",
            worst.0, worst.1
        ),
    )
}

fn loss_oracle() -> Verdict {
    let ln2 = loss_from_scores(0.7, &[0.7]).unwrap();
    let ln21 = loss_from_scores(-1.3, &[-1.3; 20]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_perm = 0.0f64;
    let mut worst_shift = 0.0f64;
    for _ in 0..200 {
        let pos = rng.random_range(-20.0..20.0);
        let mut negs: Vec<f64> = (0..rng.random_range(1..30))
            .map(|_| rng.random_range(-20.0..20.0))
            .collect();
        let base = loss_from_scores(pos, &negs).unwrap();
        let c = rng.random_range(-50.0..50.0);
        let shifted: Vec<f64> = negs.iter().map(|s| s + c).collect();
        worst_shift = worst_shift.max((loss_from_scores(pos + c, &shifted).unwrap() - base).abs());
        for i in (1..negs.len()).rev() {
            negs.swap(i, rng.random_range(0..=i));
        }
        worst_perm = worst_perm.max((loss_from_scores(pos, &negs).unwrap() - base).abs());
    }
    let (e2, e21) = ((ln2 - 2f64.ln()).abs(), (ln21 - 21f64.ln()).abs());
    verdict(
        "loss oracle",
        e2 < 1e-9 && e21 < 1e-9 && worst_perm < 1e-9 && worst_shift < 1e-9,
        format!("|ln2 err| {e2:.1e}, |ln21 err| {e21:.1e}, permutation {worst_perm:.1e}, shift {worst_shift:.1e}"),
    )
}

fn exact_search_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut agree = 0;
    for case in 0..50 {
        let dim = rng.random_range(1..24);
        let n = rng.random_range(0..400);
        // a coarse value grid forces score ties
        let rows: Vec<(String, Vec<f32>)> = (0..n)
            .map(|i| {
                let v = (0..dim)
                    .map(|_| rng.random_range(-4i32..=4) as f32 * 0.25)
                    .collect();
                (format!("d{:04}", (i * 7919) % 10007), v)
            })
            .collect();
        let store = VectorStore::from_rows(dim, rows.clone()).unwrap();
        let q: Vec<f32> = (0..dim)
            .map(|_| rng.random_range(-4i32..=4) as f32 * 0.25)
            .collect();
        let k = rng.random_range(1..=n.max(1) + 5);
        let got: Vec<String> = search(&store, "q", &q, k)
            .unwrap()
            .ids()
            .map(str::to_owned)
            .collect();

        let mut naive: Vec<(f32, String)> = rows
            .iter()
            .map(|(id, v)| {
                (
                    v.iter().zip(&q).map(|(a, b)| a * b).sum::<f32>(),
                    id.clone(),
                )
            })
            .collect();
        naive.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        let want: Vec<String> = naive.into_iter().take(k).map(|x| x.1).collect();
        if got == want {
            agree += 1;
        } else {
            println!("case {case} differs");
        }
    }
    verdict(
        "exact search oracle",
        agree == 50,
        format!("{agree}/50 cases id-identical"),
    )
}

fn judg(pairs: &[(&str, u32)]) -> Judgments {
    pairs.iter().map(|(d, g)| (d.to_string(), *g)).collect()
}

fn metric_oracles() -> Verdict {
    let l = |n: f64| n.log2();
    let j1 = judg(&[("a", 2), ("b", 2), ("c", 1)]);
    let j2 = judg(&[("r", 1)]);
    let j3 = judg(&[("a", 2), ("b", 2), ("c", 2), ("d", 2), ("e", 2)]);
    let j4 = judg(&[("a", 3), ("b", 2), ("c", 1)]);
    let filler: Vec<String> = (0..1000).map(|i| format!("x{i}")).collect();
    let mut deep: Vec<&str> = filler.iter().map(String::as_str).collect();
    deep.push("a");
    let mut at100: Vec<&str> = filler[..99].iter().map(String::as_str).collect();
    at100.push("r");

    let ideal1 = 2.0 + 2.0 / l(3.0) + 0.5;
    // (label, computed, hand value)
    let cases: Vec<(&str, f64, f64)> = vec![
        (
            "AP perfect",
            average_precision(&["a", "b", "c"], &j1, 2),
            1.0,
        ),
        (
            "nDCG@3 perfect",
            ndcg_at(&["a", "b", "c"], &j1, 3, Gain::Linear).unwrap(),
            1.0,
        ),
        (
            "AP interleaved",
            average_precision(&["x", "a", "y", "b"], &j1, 2),
            0.5,
        ),
        (
            "RR interleaved",
            reciprocal_rank(&["x", "a", "y", "b"], &j1, 2),
            0.5,
        ),
        (
            "nDCG@10 interleaved",
            ndcg_at(&["x", "a", "y", "b"], &j1, 10, Gain::Linear).unwrap(),
            (2.0 / l(3.0) + 2.0 / l(5.0)) / ideal1,
        ),
        (
            "AP grade-1 only",
            average_precision(&["c", "x", "y"], &j1, 2),
            0.0,
        ),
        (
            "nDCG@1 grade-1 first",
            ndcg_at(&["c", "x"], &j1, 1, Gain::Linear).unwrap(),
            0.5,
        ),
        ("recall empty ranking", recall_at(&[], &j1, 2, 1000), 0.0),
        ("AP single hit", average_precision(&["b"], &j1, 2), 0.5),
        ("R@1000 single hit", recall_at(&["b"], &j1, 2, 1000), 0.5),
        (
            "nDCG@10 second",
            ndcg_at(&["x", "r"], &j2, 10, Gain::Linear).unwrap(),
            1.0 / l(3.0),
        ),
        ("RR threshold 1", reciprocal_rank(&["x", "r"], &j2, 1), 0.5),
        (
            "R@1000 three of five",
            recall_at(&["a", "x", "c", "e"], &j3, 2, 1000),
            0.6,
        ),
        (
            "AP three of five",
            average_precision(&["a", "x", "c", "e"], &j3, 2),
            (1.0 + 2.0 / 3.0 + 0.75) / 5.0,
        ),
        (
            "nDCG@3 reversed",
            ndcg_at(&["c", "b", "a"], &j4, 3, Gain::Linear).unwrap(),
            (1.0 + 2.0 / l(3.0) + 3.0 / 2.0) / (3.0 + 2.0 / l(3.0) + 0.5),
        ),
        (
            "nDCG@2 exponential",
            ndcg_at(&["b", "a"], &j4, 2, Gain::Exponential).unwrap(),
            (3.0 + 7.0 / l(3.0)) / (7.0 + 3.0 / l(3.0)),
        ),
        ("R@1000 cutoff", recall_at(&deep, &j3, 2, 1000), 0.0),
        (
            "nDCG@100 at rank 100",
            ndcg_at(&at100, &j2, 100, Gain::Linear).unwrap(),
            1.0 / l(101.0),
        ),
    ];
    let bad: Vec<String> = cases
        .iter()
        .filter(|(_, got, want)| (got - want).abs() >= 1e-9)
        .map(|(n, got, want)| format!("{n} {got} vs {want}"))
        .collect();

    // paired t-test against statrs' Student t distribution
    let samples: [(&[f64], &[f64]); 5] = [
        (
            &[0.52, 0.61, 0.47, 0.70, 0.58],
            &[0.50, 0.55, 0.49, 0.62, 0.51],
        ),
        (&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 5]),
        (
            &[0.31, 0.12, 0.98, 0.44, 0.27, 0.65, 0.73],
            &[0.29, 0.20, 0.91, 0.47, 0.30, 0.60, 0.61],
        ),
        (
            &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
            &[0.12, 0.18, 0.33, 0.41, 0.52, 0.55, 0.69, 0.83, 0.88, 0.97],
        ),
        (&[3.2, 1.7, 4.4], &[1.1, 2.9, 0.8]),
    ];
    let mut worst_p = 0.0f64;
    for (a, b) in samples {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let t = mean / (sd / n.sqrt());
        let dist = StudentsT::new(0.0, 1.0, n - 1.0).unwrap();
        let p = 2.0 * (1.0 - dist.cdf(t.abs()));
        let got = paired_ttest(a, b).unwrap();
        worst_p = worst_p.max((got.p - p).abs()).max((got.t - t).abs());
    }
    verdict(
        "metric oracles",
        bad.is_empty() && worst_p < 1e-6,
        format!(
            "{}/{} toy rankings within 1e-9{}; t-test max deviation {worst_p:.1e} over 5 samples",
            cases.len() - bad.len(),
            cases.len(),
            if bad.is_empty() {
                String::new()
            } else {
                format!(" (off: {})", bad.join("; "))
            }
        ),
    )
}

/// The pinned corpus: 8 clusters of 100 passages in 64 dimensions, 40
/// queries per cluster with every fourth held out for validation.
fn pinned() -> (SyntheticSet, VectorStore, VectorStore) {
    let set = generate(&SyntheticConfig {
        queries_per_cluster: 40,
        ..Default::default()
    })
    .unwrap();
    let (train_q, val_q) = holdout(&set.queries, 4);
    (set, train_q, val_q)
}

fn end_to_end_learning() -> Verdict {
    let start = Instant::now();
    let (set, train_q, val_q) = pinned();
    let model = ModelConfig::new(2, 4, 64, 128).unwrap();
    let cfg = TrainConfig {
        lr: 1e-3,
        batch_size: 16,
        epochs: 20,
        seed: 1,
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let data = TrainData {
        corpus: &set.corpus,
        train_queries: &train_q,
        train_qrels: &set.qrels,
        val_queries: &val_q,
        val_qrels: &set.qrels,
    };
    let out = train(data, &model, &cfg, dir.path()).unwrap();
    let raw = {
        let p = Pipeline::new(&set.corpus, Rewrite::None, 3, 100).unwrap();
        let run = RunFile::from_lists("none", &p.run(&val_q).unwrap());
        evaluate(&run, &set.qrels, EvalOptions::default()).mean(NDCG10)
    };
    let reloaded = load_checkpoint(&out.best_checkpoint).unwrap();
    let again = validation_ndcg10(&set.corpus, &val_q, &set.qrels, &reloaded, 3).unwrap();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "end-to-end learning",
        out.best_ndcg10 > out.initial_ndcg10 && out.best_ndcg10 > raw && again == out.best_ndcg10 && secs < 600.0,
        format!(
            "val nDCG@10 trained {:.4} (epoch {}) vs untrained {:.4} vs raw query {raw:.4}; {} epochs in {secs:.1}s",
            out.best_ndcg10,
            out.best_epoch,
            out.initial_ndcg10,
            out.log.len()
        ),
    )
}

fn baseline_prf_recall() -> Verdict {
    let (set, _, _) = pinned();
    let recall = |rewrite| {
        let p = Pipeline::new(&set.corpus, rewrite, 3, 100).unwrap();
        let lists = p.run(&set.queries).unwrap();
        let sum: f64 = lists
            .iter()
            .map(|l| {
                let ids: Vec<&str> = l.ids().collect();
                recall_at(&ids, set.qrels.for_query(&l.query_id).unwrap(), 2, 100)
            })
            .sum();
        sum / lists.len() as f64
    };
    let (none, avg) = (recall(Rewrite::None), recall(Rewrite::Average));
    verdict(
        "baseline PRF recall",
        avg >= none,
        format!(
            "mean Recall@100 over {} queries: avg {avg:.4} vs raw {none:.4}",
            set.queries.len()
        ),
    )
}

fn scalability() -> Verdict {
    let model = ModelConfig::new(2, 4, 64, 128).unwrap();
    let params = init_params(&model, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let q = random_vec(&mut rng, 64);
    let fb: Vec<Vec<f32>> = (0..100).map(|_| random_vec(&mut rng, 64)).collect();
    let encoded = encode::<f32, _>(&q, &fb, &params)
        .map(|v| v.len() == 64 && v.iter().all(|x| x.is_finite()));

    // a corpus large enough that search, not the encoder, dominates
    let big = generate(&SyntheticConfig {
        n_clusters: 100,
        passages_per_cluster: 1000,
        queries_per_cluster: 2,
        ..Default::default()
    })
    .unwrap();
    let at = |k| {
        let p = Pipeline::new(&big.corpus, Rewrite::Tprf(&params), k, 1000).unwrap();
        measure_latency(&p, &big.queries, 100, 10, 0)
            .unwrap()
            .mean_ms
    };
    let (k3, k100) = (at(3), at(100));
    let ratio = k100 / k3;
    let cost = TextPrfCostModel::default();
    let plateau = cost.plateau_depth();
    let flat = (5..=100).all(|k| cost.cost(k) == cost.cost(5)) && cost.cost(4) < cost.cost(5);
    verdict(
        "scalability",
        matches!(encoded, Ok(true)) && ratio <= 5.0 && plateau == 5 && flat,
        format!(
            "encode at k=100 ok={}; pipeline latency k=3 {k3:.3} ms, k=100 {k100:.3} ms (ratio {ratio:.2}) on {} passages; text-PRF cost plateaus at k={plateau}",
            matches!(encoded, Ok(true)),
            big.corpus.len()
        ),
    )
}

fn size_accounting() -> Verdict {
    let count = |l, h| ModelConfig::new(l, h, 768, 1024).unwrap().param_count();
    let one = count(1, 1);
    let linear = (1..=12)
        .all(|l| ModelConfig::new(l, 4, 768, 1024).unwrap().size_bytes() == l as u64 * 4 * one);
    let head_free = [1, 2, 3, 4, 6, 8, 12].iter().all(|&h| count(1, h) == one);
    let formula = {
        let (d, f) = (768u64, 1024u64);
        4 * (d * d + d) + (d * f + f) + (f * d + d) + 4 * d
    };
    verdict(
        "size accounting",
        one == 3_943_168 && linear && head_free,
        format!(
            "param_count(l=1, d=768, ffn=1024) = {one} (stated target 3943168; the shape formula sums to {formula}); raw bytes linear in l: {linear}; independent of h: {head_free}"
        ),
    )
}

fn tprf(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_tprf"))
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

/// The log without its wall-clock column.
fn log_without_time(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes)
        .lines()
        .map(|l| l.rsplit_once('\t').map_or(l, |x| x.0).to_owned() + "\n")
        .collect()
}

fn determinism() -> Verdict {
    let root = tempfile::tempdir().unwrap();
    let p = |s: &str| root.path().join(s).to_string_lossy().into_owned();

    for d in ["s1", "s2"] {
        tprf(&[
            "synth",
            "--out-dir",
            &p(d),
            "--queries-per-cluster",
            "12",
            "--holdout",
            "4",
            "--seed",
            "11",
        ]);
    }
    let synth_same = files(&root.path().join("s1")) == files(&root.path().join("s2"));

    for out in ["r1.trec", "r2.trec"] {
        tprf(&[
            "search",
            "--corpus",
            &p("s1/corpus.dfv"),
            "--queries",
            &p("s1/queries.dfv"),
            "--prf",
            "avg",
            "--output",
            &p(out),
        ]);
    }
    let search_same = std::fs::read(p("r1.trec")).unwrap() == std::fs::read(p("r2.trec")).unwrap();

    for d in ["t1", "t2"] {
        tprf(&[
            "--threads",
            "1",
            "train",
            "--corpus",
            &p("s1/corpus.dfv"),
            "--queries",
            &p("s1/train-queries.dfv"),
            "--val-queries",
            &p("s1/val-queries.dfv"),
            "--qrels",
            &p("s1/qrels.txt"),
            "--out-dir",
            &p(d),
            "--layers",
            "1",
            "--heads",
            "2",
            "--ffn",
            "32",
            "--epochs",
            "3",
            "--batch-size",
            "8",
            "--lr",
            "1e-3",
            "--seed",
            "4",
        ]);
    }
    let (mut t1, mut t2) = (
        files(&root.path().join("t1")),
        files(&root.path().join("t2")),
    );
    let (l1, l2) = (
        t1.remove("train.log").unwrap(),
        t2.remove("train.log").unwrap(),
    );
    let train_same = t1 == t2 && t1.len() == 4 && log_without_time(&l1) == log_without_time(&l2);

    verdict(
        "determinism",
        synth_same && search_same && train_same,
        format!(
            "synth identical: {synth_same}; search identical: {search_same}; train checkpoints, pointer and log (wall_seconds excluded) identical: {train_same}"
        ),
    )
}

type Check = fn() -> Verdict;

/// Criteria run one after another so timing checks never overlap.
const CRITERIA: [(&str, Check); 9] = [
    ("gradient correctness", gradient_correctness),
    ("loss oracle", loss_oracle),
    ("exact search oracle", exact_search_oracle),
    ("metric oracles", metric_oracles),
    ("end to end learning", end_to_end_learning),
    ("baseline prf recall", baseline_prf_recall),
    ("scalability", scalability),
    ("size accounting", size_accounting),
    ("determinism", determinism),
];

fn main() {
    let mut failed = 0;
    for (name, check) in CRITERIA {
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(name, false, format!("panicked: {msg}"))
        });
        println!(
            "{} {}: {}",
            if v.ok { "PASS" } else { "FAIL" },
            v.name,
            v.detail
        );
        failed += usize::from(!v.ok);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        CRITERIA.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
