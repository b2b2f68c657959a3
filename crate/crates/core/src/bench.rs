//! Query latency harness, PRF-depth sweeps and model-size accounting.
//!
//! Timing uses [`Instant`] only. The measured path runs on the calling
//! thread, one query at a time.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Error, Result};
use crate::model::{encode, save_checkpoint, ModelConfig, Parameters};
use crate::pipeline::Pipeline;
use crate::store::VectorStore;

pub const DEFAULT_SAMPLE: usize = 100;
pub const DEFAULT_WARMUP: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub method: String,
    pub k: usize,
    pub n_queries: usize,
    pub mean_ms: f64,
    pub stddev_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub environment: String,
}

/// Core count and build profile of the running binary.
pub fn environment() -> String {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let profile = if cfg!(debug_assertions) {
        "debug"
    } else {
        "release"
    };
    format!(
        "{} {} cores={cores} profile={profile}",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

/// Mean and sample standard deviation (n − 1 denominator; 0 for one sample).
pub fn mean_stddev(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    // Welford; compared against the two-pass formula in tests
    let (mut mean, mut m2) = (0.0, 0.0);
    for (i, &x) in samples.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    let sd = if n > 1 {
        (m2 / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// `n` distinct query rows drawn without replacement, in draw order.
pub fn sample_queries(queries: &VectorStore, n: usize, seed: u64) -> Result<Vec<usize>> {
    ensure!(
        n >= 1,
        Config,
        "latency sample must hold at least one query"
    );
    ensure!(
        n <= queries.len(),
        Config,
        "asked for {n} queries but only {} are available",
        queries.len()
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample(&mut rng, queries.len(), n).into_vec())
}

fn report(method: &str, k: usize, times_ms: &[f64]) -> LatencyReport {
    let (mean_ms, stddev_ms) = mean_stddev(times_ms);
    LatencyReport {
        method: method.to_owned(),
        k,
        n_queries: times_ms.len(),
        mean_ms,
        stddev_ms,
        min_ms: times_ms.iter().copied().fold(f64::INFINITY, f64::min),
        max_ms: times_ms.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        environment: environment(),
    }
}

fn time_queries(
    rows: &[usize],
    queries: &VectorStore,
    warmup: usize,
    mut run: impl FnMut(usize) -> Result<()>,
) -> Result<Vec<f64>> {
    let mut call = |i: usize| {
        run(i).map_err(|e| Error::Validation(format!("query {}: {e}", queries.id(rows[i]))))
    };
    for i in (0..rows.len()).cycle().take(warmup) {
        call(i)?;
    }
    let mut times = Vec::with_capacity(rows.len());
    for i in 0..rows.len() {
        let start = Instant::now();
        call(i)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(times)
}

/// Per-query latency of the full pipeline (first round, rewrite, second
/// round) over a seeded sample of `n` queries.
pub fn measure_latency(
    pipeline: &Pipeline<'_>,
    queries: &VectorStore,
    n: usize,
    warmup: usize,
    seed: u64,
) -> Result<LatencyReport> {
    pipeline.validate()?;
    let rows = sample_queries(queries, n, seed)?;
    let times = time_queries(&rows, queries, warmup, |i| {
        pipeline
            .run_query(queries.id(rows[i]), queries.row(rows[i]))
            .map(drop)
    })?;
    Ok(report(pipeline.rewrite.name(), pipeline.prf_depth, &times))
}

/// Latency of the encoder alone on precomputed feedback: the first-round
/// top-k of each sampled query is retrieved outside the timed region.
pub fn measure_encode_latency(
    corpus: &VectorStore,
    params: &Parameters<f32>,
    queries: &VectorStore,
    k: usize,
    n: usize,
    warmup: usize,
    seed: u64,
) -> Result<LatencyReport> {
    let rows = sample_queries(queries, n, seed)?;
    let feedback: Vec<Vec<&[f32]>> = rows
        .iter()
        .map(|&r| {
            let hits = crate::index::search(corpus, queries.id(r), queries.row(r), k)?;
            Ok(hits
                .hits
                .iter()
                .map(|h| corpus.row(h.row as usize))
                .collect())
        })
        .collect::<Result<_>>()?;
    let times = time_queries(&rows, queries, warmup, |i| {
        encode::<f32, _>(queries.row(rows[i]), &feedback[i], params).map(drop)
    })?;
    Ok(report("tprf-encode", k, &times))
}

/// One report per depth, in the order given. `ks` must be ascending.
pub fn sweep_prf_depth(
    pipeline: &Pipeline<'_>,
    queries: &VectorStore,
    ks: &[usize],
    n: usize,
    warmup: usize,
    seed: u64,
) -> Result<Vec<LatencyReport>> {
    ensure!(!ks.is_empty(), Config, "sweep needs at least one depth");
    ensure!(
        ks.iter().all(|&k| k >= 1),
        Config,
        "PRF depths must be at least 1"
    );
    ensure!(
        ks.windows(2).all(|w| w[0] < w[1]),
        Config,
        "PRF depths must be strictly ascending"
    );
    ks.iter()
        .map(|&k| {
            let p = Pipeline {
                prf_depth: k,
                first_stage_k: pipeline.first_stage_k.max(k),
                ..pipeline.clone()
            };
            measure_latency(&p, queries, n, warmup, seed)
        })
        .collect()
}

pub const TSV_HEADER: &str =
    "method\tk\tn_queries\tmean_ms\tstddev_ms\tmin_ms\tmax_ms\tenvironment";
pub const CSV_HEADER: &str = "k,mean_ms,stddev_ms,method";

pub fn to_tsv(reports: &[LatencyReport]) -> String {
    let mut out = format!("{TSV_HEADER}\n");
    for r in reports {
        writeln!(
            out,
            "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
            r.method, r.k, r.n_queries, r.mean_ms, r.stddev_ms, r.min_ms, r.max_ms, r.environment
        )
        .unwrap();
    }
    out
}

pub fn to_csv(reports: &[LatencyReport]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in reports {
        writeln!(
            out,
            "{},{:.6},{:.6},{}",
            r.k, r.mean_ms, r.stddev_ms, r.method
        )
        .unwrap();
    }
    out
}

/// Emulated cost of a text-concatenation PRF encoder: the query plus k
/// passages are truncated to the input limit, and self-attention makes the
/// cost quadratic in the surviving length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextPrfCostModel {
    pub query_tokens: usize,
    pub passage_tokens: usize,
    pub max_tokens: usize,
}

impl Default for TextPrfCostModel {
    fn default() -> Self {
        Self {
            query_tokens: 12,
            passage_tokens: 100,
            max_tokens: 512,
        }
    }
}

impl TextPrfCostModel {
    pub fn tokens(&self, k: usize) -> usize {
        (self.query_tokens + k * self.passage_tokens).min(self.max_tokens)
    }

    /// Relative cost in squared tokens.
    pub fn cost(&self, k: usize) -> f64 {
        (self.tokens(k) as f64).powi(2)
    }

    /// Smallest depth at which the input is fully truncated.
    pub fn plateau_depth(&self) -> usize {
        (0..)
            .find(|&k| self.query_tokens + k * self.passage_tokens >= self.max_tokens)
            .expect("finite limit")
    }
}

/// Published checkpoint sizes of the original models, shown beside measured values.
pub const REFERENCE_SIZES_MB: [(&str, Option<usize>, f64); 5] = [
    ("tprf l=1 h=1", Some(1), 62.7),
    ("tprf l=6", Some(6), 299.2),
    ("tprf l=8", Some(8), 393.8),
    ("tprf l=12 (largest)", Some(12), 582.9),
    ("text-prf encoder", None, 503.4),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SizeReport {
    pub layers: usize,
    pub heads: usize,
    pub param_count: u64,
    pub raw_bytes: u64,
    pub checkpoint_bytes: u64,
    /// Published size for the same depth, if any.
    pub reference_mb: Option<f64>,
}

/// Counts and sizes for `config`; the checkpoint size comes from writing a
/// real file into `scratch_dir` (removed afterwards).
pub fn model_size_report(config: &ModelConfig, scratch_dir: &Path) -> Result<SizeReport> {
    let path = scratch_dir.join(format!(
        "size-l{}-h{}-d{}-f{}.tprf",
        config.layers(),
        config.heads(),
        config.dim(),
        config.ffn_dim()
    ));
    let params = Parameters::<f32>::zeros(config);
    let checkpoint_bytes = save_checkpoint(&params, &path)?;
    std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
    let reference_mb = REFERENCE_SIZES_MB
        .iter()
        .find(|(_, l, _)| {
            *l == Some(config.layers()) && (config.layers() != 1 || config.heads() == 1)
        })
        .map(|r| r.2);
    Ok(SizeReport {
        layers: config.layers(),
        heads: config.heads(),
        param_count: config.param_count(),
        raw_bytes: config.size_bytes(),
        checkpoint_bytes,
        reference_mb,
    })
}

pub fn size_table(reports: &[SizeReport]) -> String {
    let mut out = String::from("layers\theads\tparams\traw_mb\tcheckpoint_mb\treference_mb\n");
    for r in reports {
        let reference = r.reference_mb.map_or("-".to_owned(), |v| format!("{v:.1}"));
        writeln!(
            out,
            "{}\t{}\t{}\t{:.1}\t{:.1}\t{reference}",
            r.layers,
            r.heads,
            r.param_count,
            r.raw_bytes as f64 / 1e6,
            r.checkpoint_bytes as f64 / 1e6
        )
        .unwrap();
    }
    out
}
