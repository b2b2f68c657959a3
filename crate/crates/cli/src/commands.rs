use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use tprf_core::bench::{self, TextPrfCostModel};
use tprf_core::metrics::{compare, format_table, Gain, METRIC_NAMES};
use tprf_core::model::Pooling;
use tprf_core::store::ingest_text;
use tprf_core::synth::{generate, holdout, SyntheticConfig};
use tprf_core::train::{best_checkpoint, train, TrainData, TrainOutcome, BEST_FILE, LOG_FILE};
use tprf_core::{
    evaluate, load_checkpoint, Error, EvalOptions, ModelConfig, Parameters, Pipeline, Qrels,
    Rewrite, RocchioParams, RunFile, TrainConfig, VectorStore,
};

use crate::args::*;

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

fn write_output(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_owned(),
            source: e,
        })?;
    }
    fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })?;
    Ok(())
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(p) => write_output(p, text.as_bytes()),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn pooling(p: PoolingArg) -> Pooling {
    match p {
        PoolingArg::Query => Pooling::QueryRow,
        PoolingArg::Mean => Pooling::Mean,
    }
}

/// Checks the method flags that need no input files.
fn check_method(m: &MethodArgs) -> Result<()> {
    if m.prf == Prf::Tprf && m.checkpoint.is_none() {
        return Err(config_err("--prf tprf requires --checkpoint"));
    }
    if m.prf != Prf::None {
        if m.k < 1 {
            return Err(config_err("--k must be at least 1 for a PRF method"));
        }
        if m.first_stage_k.is_some_and(|f| f < m.k) {
            return Err(config_err("--first-stage-k must be at least --k"));
        }
    }
    if m.final_k < 1 {
        return Err(config_err("--final-k must be at least 1"));
    }
    if !(m.alpha.is_finite() && m.beta.is_finite()) {
        return Err(config_err("--alpha and --beta must be finite"));
    }
    Ok(())
}

fn load_params(m: &MethodArgs) -> Result<Option<Parameters<f32>>> {
    if m.prf != Prf::Tprf {
        return Ok(None);
    }
    let given = m.checkpoint.as_ref().expect("checked");
    // a training output directory stands for its best checkpoint
    let path = if given.is_dir() {
        best_checkpoint(given)?
    } else {
        given.clone()
    };
    let mut p =
        load_checkpoint(&path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    if let Some(pool) = m.pooling {
        p.set_pooling(pooling(pool));
    }
    Ok(Some(p))
}

fn pipeline<'a>(
    corpus: &'a VectorStore,
    m: &MethodArgs,
    params: Option<&'a Parameters<f32>>,
) -> Result<Pipeline<'a>> {
    let rewrite = match m.prf {
        Prf::None => Rewrite::None,
        Prf::Avg => Rewrite::Average,
        Prf::Rocchio => Rewrite::Rocchio(RocchioParams {
            alpha: m.alpha,
            beta: m.beta,
        }),
        Prf::Tprf => Rewrite::Tprf(params.expect("loaded")),
    };
    let p = Pipeline {
        corpus,
        rewrite,
        prf_depth: m.k,
        first_stage_k: m.first_stage_k.unwrap_or(m.k),
        final_k: m.final_k,
    };
    p.validate()?;
    Ok(p)
}

fn load_store(path: &Path) -> Result<VectorStore> {
    VectorStore::load(path).with_context(|| format!("loading store {}", path.display()))
}

pub fn ingest(a: IngestArgs) -> Result<()> {
    if a.dim == 0 {
        return Err(config_err("--dim must be positive"));
    }
    let store = ingest_text(&a.input, a.dim)?;
    store.save(&a.output)?;
    eprintln!(
        "ingested {} vectors of dim {} into {}",
        store.len(),
        store.dim(),
        a.output.display()
    );
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        n_clusters: a.clusters,
        passages_per_cluster: a.passages,
        relevant_per_cluster: a.relevant,
        dim: a.dim,
        sigma_rel: a.sigma_rel,
        sigma_query: a.sigma_query,
        queries_per_cluster: a.queries_per_cluster,
        seed: a.seed,
    };
    cfg.validate()?;
    if a.holdout.is_some_and(|n| n < 2) {
        return Err(config_err("--holdout must be at least 2"));
    }
    let set = generate(&cfg)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::Io {
        path: a.out_dir.clone(),
        source: e,
    })?;
    set.corpus.save(a.out_dir.join("corpus.dfv"))?;
    set.queries.save(a.out_dir.join("queries.dfv"))?;
    set.qrels.save(a.out_dir.join("qrels.txt"))?;
    if let Some(n) = a.holdout {
        let (train_q, val_q) = holdout(&set.queries, n);
        train_q.save(a.out_dir.join("train-queries.dfv"))?;
        val_q.save(a.out_dir.join("val-queries.dfv"))?;
    }
    eprintln!(
        "wrote {} passages, {} queries, {} judgments to {}",
        set.corpus.len(),
        set.queries.len(),
        set.qrels.len(),
        a.out_dir.display()
    );
    Ok(())
}

pub fn search(a: SearchArgs) -> Result<()> {
    check_method(&a.method)?;
    let corpus = load_store(&a.corpus)?;
    let queries = load_store(&a.queries)?;
    if queries.dim() != corpus.dim() {
        return Err(Error::Validation(format!(
            "query dim {} does not match corpus dim {}",
            queries.dim(),
            corpus.dim()
        ))
        .into());
    }
    let params = load_params(&a.method)?;
    let p = pipeline(&corpus, &a.method, params.as_ref())?;
    let lists = p.run(&queries)?;
    let tag = a.tag.unwrap_or_else(|| p.rewrite.name().to_owned());
    let run = RunFile::from_lists(tag, &lists);
    write_output(&a.output, &run.to_bytes())?;
    eprintln!("wrote {} queries to {}", run.len(), a.output.display());
    Ok(())
}

fn train_config(a: &TrainArgs) -> TrainConfig {
    TrainConfig {
        lr: a.lr,
        batch_size: a.batch_size,
        epochs: a.epochs,
        n_negatives: a.negatives,
        negative_rank_range: (a.neg_low, a.neg_high),
        prf_depth: a.k,
        seed: a.seed,
        beta1: a.beta1,
        beta2: a.beta2,
        eps: a.eps,
        weight_decay: a.weight_decay,
    }
}

/// (layers, heads) pairs of a grid run, or the single configured model.
fn grid(a: &TrainArgs) -> Result<Vec<(usize, usize)>> {
    if a.grid_layers.is_empty() != a.grid_heads.is_empty() {
        return Err(config_err("--grid-layers and --grid-heads go together"));
    }
    if a.grid_layers.is_empty() {
        if a.grid_single {
            return Err(config_err(
                "--grid-single needs --grid-layers and --grid-heads",
            ));
        }
        return Ok(vec![(a.layers, a.heads)]);
    }
    let mut out: Vec<(usize, usize)> = a
        .grid_layers
        .iter()
        .flat_map(|&l| a.grid_heads.iter().map(move |&h| (l, h)))
        .collect();
    if a.grid_single && !out.contains(&(1, 1)) {
        out.push((1, 1));
    }
    Ok(out)
}

pub fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = train_config(&a);
    cfg.validate()?;
    let shapes = grid(&a)?;
    if a.val_queries.is_none() && a.holdout < 2 {
        return Err(config_err("--holdout must be at least 2"));
    }

    let corpus = load_store(&a.corpus)?;
    let queries = load_store(&a.queries)?;
    let qrels = Qrels::load(&a.qrels)?;
    let models = shapes
        .iter()
        .map(|&(l, h)| {
            ModelConfig::new(l, h, corpus.dim(), a.ffn)
                .and_then(|m| m.with_dropout(a.dropout))
                .map(|m| m.with_pooling(pooling(a.pooling)))
        })
        .collect::<tprf_core::Result<Vec<_>>>()?;

    let (train_q, val_q) = match &a.val_queries {
        Some(p) => (queries, load_store(p)?),
        None => holdout(&queries, a.holdout),
    };
    let val_qrels = match &a.val_qrels {
        Some(p) => Qrels::load(p)?,
        None => qrels.clone(),
    };
    let data = TrainData {
        corpus: &corpus,
        train_queries: &train_q,
        train_qrels: &qrels,
        val_queries: &val_q,
        val_qrels: &val_qrels,
    };

    if models.len() == 1 {
        let out = train(data, &models[0], &cfg, &a.out_dir)?;
        report_outcome(&a.out_dir, &out);
        println!("{}", best_checkpoint(&a.out_dir)?.display());
        return Ok(());
    }

    let mut summary =
        String::from("layers\theads\tbest_epoch\tval_ndcg10\tinitial_ndcg10\tcheckpoint\n");
    for m in &models {
        let dir = a.out_dir.join(format!("l{}-h{}", m.layers(), m.heads()));
        let out = train(data, m, &cfg, &dir)?;
        report_outcome(&dir, &out);
        summary.push_str(&format!(
            "{}\t{}\t{}\t{:.6}\t{:.6}\t{}\n",
            m.layers(),
            m.heads(),
            out.best_epoch,
            out.best_ndcg10,
            out.initial_ndcg10,
            out.best_checkpoint.display()
        ));
    }
    write_output(&a.out_dir.join("grid.tsv"), summary.as_bytes())?;
    print!("{summary}");
    Ok(())
}

fn report_outcome(dir: &Path, out: &TrainOutcome) {
    eprintln!(
        "{}: {} examples, best epoch {} (val nDCG@10 {:.4}, untrained {:.4}); log {}, pointer {}",
        dir.display(),
        out.examples,
        out.best_epoch,
        out.best_ndcg10,
        out.initial_ndcg10,
        dir.join(LOG_FILE).display(),
        dir.join(BEST_FILE).display()
    );
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let opts = EvalOptions {
        relevance_threshold: a.threshold,
        gain: match a.gain {
            GainArg::Linear => Gain::Linear,
            GainArg::Exponential => Gain::Exponential,
        },
    };
    let qrels = Qrels::load(&a.qrels)?;
    let base = evaluate(&RunFile::load(&a.run)?, &qrels, opts);
    let mut text = match &a.compare {
        None => format_table(&base, None),
        Some(path) => {
            let other = evaluate(&RunFile::load(path)?, &qrels, opts);
            let cmp = compare(&base, &other)?;
            let mut t = format_table(&base, Some((&other, &cmp)));
            if a.per_query {
                t.push_str(&per_query_rows(&other));
            }
            t
        }
    };
    if a.per_query {
        text.push_str(&per_query_rows(&base));
    }
    emit(a.output.as_deref(), &text)
}

fn per_query_rows(r: &tprf_core::MetricReport) -> String {
    let mut out = format!("\nrun\tquery\t{}\n", METRIC_NAMES.join("\t"));
    for (q, row) in &r.per_query {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
        out.push_str(&format!("{}\t{q}\t{}\n", r.tag, cells.join("\t")));
    }
    out
}

pub const GRID_LAYERS: [usize; 4] = [6, 8, 10, 12];
pub const GRID_HEADS: [usize; 3] = [4, 6, 12];

fn scratch_dir() -> Result<PathBuf> {
    let dir = std::env::temp_dir().join(format!("tprf-size-{}", std::process::id()));
    fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    Ok(dir)
}

pub fn bench_cmd(a: BenchArgs) -> Result<()> {
    if a.sizes {
        let mut shapes = vec![(1, 1)];
        shapes.extend(
            GRID_LAYERS
                .iter()
                .flat_map(|&l| GRID_HEADS.iter().map(move |&h| (l, h))),
        );
        let configs = shapes
            .iter()
            .map(|&(l, h)| ModelConfig::new(l, h, a.size_dim, a.size_ffn))
            .collect::<tprf_core::Result<Vec<_>>>()?;
        let dir = scratch_dir()?;
        let reports = configs
            .iter()
            .map(|c| bench::model_size_report(c, &dir))
            .collect::<tprf_core::Result<Vec<_>>>();
        let _ = fs::remove_dir(&dir);
        let mut text = bench::size_table(&reports?);
        text.push_str("# reference_mb: checkpoint sizes reported for the original models; shown for context only\n");
        return emit(a.output.as_deref(), &text);
    }

    check_method(&a.method)?;
    if a.encode_only && a.method.prf != Prf::Tprf {
        return Err(config_err("--encode-only needs --prf tprf"));
    }
    let corpus = load_store(a.corpus.as_deref().expect("required by clap"))?;
    let queries = load_store(a.queries.as_deref().expect("required by clap"))?;
    let params = load_params(&a.method)?;
    let report = if a.encode_only {
        let p = params.as_ref().expect("tprf");
        if p.config().dim() != corpus.dim() {
            return Err(
                Error::Validation("checkpoint dim does not match corpus dim".into()).into(),
            );
        }
        bench::measure_encode_latency(&corpus, p, &queries, a.method.k, a.n, a.warmup, a.seed)?
    } else {
        let p = pipeline(&corpus, &a.method, params.as_ref())?;
        bench::measure_latency(&p, &queries, a.n, a.warmup, a.seed)?
    };
    emit(a.output.as_deref(), &bench::to_tsv(&[report]))
}

pub fn sweep(a: SweepArgs) -> Result<()> {
    let mut m = a.method.clone();
    m.k = *a.ks.first().ok_or_else(|| config_err("--ks is empty"))?;
    check_method(&m)?;
    let corpus = load_store(&a.corpus)?;
    let queries = load_store(&a.queries)?;
    let params = load_params(&m)?;
    let p = pipeline(&corpus, &m, params.as_ref())?;
    let reports = bench::sweep_prf_depth(&p, &queries, &a.ks, a.n, a.warmup, a.seed)?;
    if let Some(path) = &a.csv {
        write_output(path, bench::to_csv(&reports).as_bytes())?;
    }
    if let Some(path) = &a.cost_model {
        let model = TextPrfCostModel::default();
        let base = model.cost(0);
        let mut text = String::from("k,tokens,relative_cost\n");
        for &k in &a.ks {
            text.push_str(&format!(
                "{k},{},{:.6}\n",
                model.tokens(k),
                model.cost(k) / base
            ));
        }
        write_output(path, text.as_bytes())?;
    }
    print!("{}", bench::to_tsv(&reports));
    Ok(())
}
