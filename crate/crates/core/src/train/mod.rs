//! Supervised training of the PRF encoder: hard-negative example
//! construction, contrastive loss, tape gradients, AdamW, and per-epoch
//! checkpointing with validation-based model selection.

mod adamw;
mod examples;
mod grad;
mod loss;

pub use adamw::{adamw_step, adamw_update_slice, AdamWConfig, OptimizerState};
pub use examples::{build_examples, ExampleSet, TrainingExample};
pub use grad::{
    batch_gradient, example_gradient, gradient_check, BatchGradient, DropoutMode, GradientCheck,
    GRAD_CHECK_FLOOR,
};
pub(crate) use loss::softmax_xent;
pub use loss::{loss, loss_from_scores};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Error, Result};
use crate::metrics::{evaluate, EvalOptions, RunFile, NDCG10};
use crate::model::{init_params, save_checkpoint, ModelConfig, Parameters};
use crate::pipeline::{Pipeline, Rewrite};
use crate::qrels::Qrels;
use crate::store::VectorStore;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub n_negatives: usize,
    /// 1-based first-round ranks, inclusive at both ends.
    pub negative_rank_range: (usize, usize),
    pub prf_depth: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            batch_size: 512,
            epochs: 50,
            n_negatives: 20,
            negative_rank_range: (10, 200),
            prf_depth: 3,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let (low, high) = self.negative_rank_range;
        ensure!(
            low >= 1 && low < high,
            Config,
            "negative rank range must satisfy 1 <= low < high, got [{low}, {high}]"
        );
        // lr = 0 is allowed: it freezes the model, which is a useful control run
        ensure!(
            self.lr.is_finite() && self.lr >= 0.0,
            Config,
            "lr must be finite and non-negative"
        );
        ensure!(
            self.batch_size >= 1,
            Config,
            "batch_size must be at least 1"
        );
        ensure!(self.epochs >= 1, Config, "epochs must be at least 1");
        ensure!(
            self.n_negatives >= 1,
            Config,
            "n_negatives must be at least 1"
        );
        ensure!(self.prf_depth >= 1, Config, "prf_depth must be at least 1");
        ensure!(
            (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2),
            Config,
            "AdamW betas must lie in [0, 1)"
        );
        ensure!(
            self.eps > 0.0 && self.weight_decay >= 0.0,
            Config,
            "eps must be positive and weight_decay non-negative"
        );
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// Stores and judgments for one training run.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub corpus: &'a VectorStore,
    pub train_queries: &'a VectorStore,
    pub train_qrels: &'a Qrels,
    pub val_queries: &'a VectorStore,
    pub val_qrels: &'a Qrels,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_ndcg10: f64,
    pub wall_seconds: f64,
}

pub const LOG_HEADER: &str = "epoch\tmean_loss\tval_ndcg10\twall_seconds";
pub const LOG_FILE: &str = "train.log";
pub const BEST_FILE: &str = "best";

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch-{epoch:03}.tprf")
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best_epoch: usize,
    pub best_ndcg10: f64,
    pub best_params: Parameters<f32>,
    pub best_checkpoint: PathBuf,
    /// Validation nDCG@10 of the initial weights.
    pub initial_ndcg10: f64,
    pub log: Vec<EpochLog>,
    pub examples: usize,
}

/// Mean nDCG@10 of the TPRF pipeline over the validation queries.
pub fn validation_ndcg10(
    corpus: &VectorStore,
    queries: &VectorStore,
    qrels: &Qrels,
    params: &Parameters<f32>,
    prf_depth: usize,
) -> Result<f64> {
    let pipeline = Pipeline::new(corpus, Rewrite::Tprf(params), prf_depth, 100)?;
    let run = RunFile::from_lists("val", &pipeline.run(queries)?);
    Ok(evaluate(&run, qrels, EvalOptions::default()).mean(NDCG10))
}

/// Trains from `init_params(model, cfg.seed)`. Writes one checkpoint per
/// epoch, the TSV log and the `best` pointer into `out_dir`.
pub fn train(
    data: TrainData<'_>,
    model: &ModelConfig,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    train_from(data, init_params(model, cfg.seed), cfg, out_dir)
}

pub fn train_from(
    data: TrainData<'_>,
    initial: Parameters<f32>,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    ensure!(
        initial.config().dim() == data.corpus.dim()
            && data.train_queries.dim() == data.corpus.dim()
            && data.val_queries.dim() == data.corpus.dim(),
        Validation,
        "model, corpus and query dimensions differ"
    );
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let set = build_examples(data.corpus, data.train_queries, data.train_qrels, cfg)?;
    ensure!(
        !set.examples.is_empty(),
        Validation,
        "no usable training examples"
    );
    log::info!(
        "{} training examples ({} queries skipped, {} short negative windows)",
        set.examples.len(),
        set.skipped,
        set.short_windows
    );

    let mut params = initial;
    let validate = |p: &Parameters<f32>| {
        validation_ndcg10(
            data.corpus,
            data.val_queries,
            data.val_qrels,
            p,
            cfg.prf_depth,
        )
    };
    let initial_ndcg10 = validate(&params)?;

    let log_path = out_dir.join(LOG_FILE);
    let mut log_file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    writeln!(log_file, "{LOG_HEADER}").map_err(|e| Error::io(&log_path, e))?;

    let mut state = OptimizerState::new(&params);
    let adamw = cfg.adamw();
    let use_dropout = params.config().dropout() > 0.0;
    // separate streams for batch order and dropout masks
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(2);

    let mut order: Vec<usize> = (0..set.examples.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Parameters<f32>, PathBuf)> = None;
    let mut last_good: Option<PathBuf> = None;
    let started = Instant::now();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<TrainingExample> =
                idx.iter().map(|&i| set.examples[i].clone()).collect();
            let mode = if use_dropout {
                DropoutMode::On {
                    seed: dropout_rng.next_u64(),
                }
            } else {
                DropoutMode::Off
            };
            let g = match batch_gradient(&params.cast::<f64>(), &batch, mode) {
                Ok(g) => g,
                Err(Error::NonFiniteLoss { example }) => {
                    log::error!(
                        "non-finite loss on example {} in epoch {epoch}",
                        idx[example]
                    );
                    return Err(Error::Diverged { epoch, last_good });
                }
                Err(e) => return Err(e),
            };
            loss_sum += g.mean_loss * batch.len() as f64;
            match adamw_step(&mut params, &g.grads, &mut state, &adamw) {
                Ok(()) => {}
                Err(Error::NonFiniteGradient { tensor }) => {
                    log::error!("non-finite gradient in {tensor} in epoch {epoch}");
                    return Err(Error::Diverged { epoch, last_good });
                }
                Err(e) => return Err(e),
            }
        }
        let mean_loss = loss_sum / set.examples.len() as f64;
        if !mean_loss.is_finite() || !params.all_finite() {
            return Err(Error::Diverged { epoch, last_good });
        }

        let val = validate(&params)?;
        let path = out_dir.join(checkpoint_name(epoch));
        save_checkpoint(&params, &path)?;
        last_good = Some(path.clone());
        let entry = EpochLog {
            epoch,
            mean_loss,
            val_ndcg10: val,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        writeln!(
            log_file,
            "{}\t{}\t{}\t{:.3}",
            entry.epoch, entry.mean_loss, entry.val_ndcg10, entry.wall_seconds
        )
        .map_err(|e| Error::io(&log_path, e))?;
        log::info!("epoch {epoch}: loss {mean_loss:.6} val nDCG@10 {val:.4}");
        log.push(entry);

        if best.as_ref().is_none_or(|b| val > b.1) {
            let pointer = out_dir.join(BEST_FILE);
            fs::write(&pointer, format!("{}\n", checkpoint_name(epoch)))
                .map_err(|e| Error::io(&pointer, e))?;
            best = Some((epoch, val, params.clone(), path));
        }
    }

    let (best_epoch, best_ndcg10, best_params, best_checkpoint) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best_epoch,
        best_ndcg10,
        best_params,
        best_checkpoint,
        initial_ndcg10,
        log,
        examples: set.examples.len(),
    })
}

/// Resolves the `best` pointer in a training directory.
pub fn best_checkpoint(out_dir: &Path) -> Result<PathBuf> {
    let pointer = out_dir.join(BEST_FILE);
    let name = fs::read_to_string(&pointer).map_err(|e| Error::io(&pointer, e))?;
    Ok(out_dir.join(name.trim()))
}
