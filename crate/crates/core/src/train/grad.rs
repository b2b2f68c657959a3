//! Gradient of the mean batch loss through the encoder, via the tape.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::TrainingExample;
use crate::error::{Error, Result};
use crate::model::{dropout_mask, positional_encode, Parameters, Pooling};
use crate::tape::{Mat, Tape, Var};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Off,
    /// Example `i` of the batch draws its masks from ChaCha8 stream `i` of
    /// this seed, so results do not depend on scheduling.
    On {
        seed: u64,
    },
}

pub(crate) fn example_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Stacked, position-encoded `(k+1) × d` input for one example.
pub(crate) fn encoder_input(query: &[f32], feedback: &[Vec<f32>]) -> Mat {
    let d = query.len();
    let mut data = Vec::with_capacity((feedback.len() + 1) * d);
    data.extend(query.iter().map(|&v| v as f64));
    for f in feedback {
        data.extend(f.iter().map(|&v| v as f64));
    }
    positional_encode(&Matrix::from_vec(feedback.len() + 1, d, data))
}

/// Records the encoder forward pass on `tape`; returns the pooled `1 × d`
/// query node. Dropout masks are drawn in the same order as the inference
/// forward pass.
pub(crate) fn record_encoder(
    tape: &mut Tape<'_>,
    layer_vars: &[[Var; 16]],
    input: Mat,
    heads: usize,
    pooling: Pooling,
    mut dropout: Option<(&mut ChaCha8Rng, f64)>,
) -> Var {
    let mut x = tape.input(input);
    let d = tape.value(x).cols();
    let head_dim = d / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    for p in layer_vars {
        let [w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o, w_1, b_1, w_2, b_2, g1, n1, g2, n2] = *p;
        let q = tape.linear(x, w_q, b_q);
        let k = tape.linear(x, w_k, b_k);
        let v = tape.linear(x, w_v, b_v);
        let mut heads_out = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice_cols(q, h * head_dim, head_dim);
            let kh = tape.slice_cols(k, h * head_dim, head_dim);
            let vh = tape.slice_cols(v, h * head_dim, head_dim);
            let scores = tape.matmul_nt(qh, kh);
            let scores = tape.scale(scores, scale);
            let mut weights = tape.softmax_rows(scores);
            if let Some((rng, rate)) = dropout.as_mut() {
                let mask = dropout_mask::<f64>(*rng, tape.value(weights).len(), *rate);
                weights = tape.mul_mask(weights, mask);
            }
            heads_out.push(tape.matmul(weights, vh));
        }
        let concat = tape.concat_cols(&heads_out);
        let attn = tape.linear(concat, w_o, b_o);
        let res1 = tape.add(attn, x);
        let y1 = tape.layer_norm(res1, g1, n1);
        let pre = tape.linear(y1, w_1, b_1);
        let mut hidden = tape.relu(pre);
        if let Some((rng, rate)) = dropout.as_mut() {
            let mask = dropout_mask::<f64>(*rng, tape.value(hidden).len(), *rate);
            hidden = tape.mul_mask(hidden, mask);
        }
        let ffn = tape.linear(hidden, w_2, b_2);
        let res2 = tape.add(ffn, y1);
        x = tape.layer_norm(res2, g2, n2);
    }
    match pooling {
        Pooling::QueryRow => tape.select_row(x, 0),
        Pooling::Mean => tape.mean_rows(x),
    }
}

fn candidates(example: &TrainingExample) -> Mat {
    let d = example.positive.len();
    let mut data = Vec::with_capacity((example.negatives.len() + 1) * d);
    data.extend(example.positive.iter().map(|&v| v as f64));
    for n in &example.negatives {
        data.extend(n.iter().map(|&v| v as f64));
    }
    Matrix::from_vec(example.negatives.len() + 1, d, data)
}

/// Loss and per-tensor gradients (checkpoint order) for one example.
pub fn example_gradient(
    params: &Parameters<f64>,
    example: &TrainingExample,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> (f64, Vec<Mat>) {
    let cfg = params.config();
    let mut tape = Tape::new();
    let layer_vars: Vec<[Var; 16]> = params
        .layers
        .iter()
        .map(|l| l.tensors().map(|t| tape.param(t)))
        .collect();
    let input = encoder_input(&example.query, &example.feedback);
    let rate = cfg.dropout() as f64;
    let dropout = dropout_rng.filter(|_| rate > 0.0).map(|r| (r, rate));
    let q = record_encoder(
        &mut tape,
        &layer_vars,
        input,
        cfg.heads(),
        cfg.pooling(),
        dropout,
    );
    let loss = tape.contrastive_loss(q, candidates(example));
    let value = tape.value(loss).get(0, 0);
    (value, tape.backward(loss))
}

#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub mean_loss: f64,
    pub grads: Parameters<f64>,
}

/// Examples summed sequentially within a chunk; chunks summed in order.
const CHUNK: usize = 8;

/// Gradient of the mean loss over `batch`. The reduction order is fixed, so
/// the result is independent of the thread count.
pub fn batch_gradient(
    params: &Parameters<f64>,
    batch: &[TrainingExample],
    dropout: DropoutMode,
) -> Result<BatchGradient> {
    if batch.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    let wave = CHUNK * rayon::current_num_threads().max(1);
    let mut total = Parameters::<f64>::zeroed(params.config());
    let mut loss_sum = 0.0;

    for (wave_idx, wave_examples) in batch.chunks(wave).enumerate() {
        let base = wave_idx * wave;
        let partials: Vec<Result<(f64, Vec<Mat>)>> = wave_examples
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(ci, chunk)| {
                let mut acc: Option<(f64, Vec<Mat>)> = None;
                for (j, ex) in chunk.iter().enumerate() {
                    let index = base + ci * CHUNK + j;
                    let mut rng = match dropout {
                        DropoutMode::Off => None,
                        DropoutMode::On { seed } => Some(example_rng(seed, index)),
                    };
                    let (l, g) = example_gradient(params, ex, rng.as_mut());
                    if !l.is_finite() {
                        return Err(Error::NonFiniteLoss { example: index });
                    }
                    match &mut acc {
                        None => acc = Some((l, g)),
                        Some((al, ag)) => {
                            *al += l;
                            for (a, b) in ag.iter_mut().zip(&g) {
                                a.add_assign(b);
                            }
                        }
                    }
                }
                Ok(acc.expect("chunks are non-empty"))
            })
            .collect();
        for partial in partials {
            let (l, g) = partial?;
            loss_sum += l;
            for (t, gi) in total.iter_tensors_mut().zip(&g) {
                t.add_assign(gi);
            }
        }
    }

    let n = batch.len() as f64;
    for t in total.iter_tensors_mut() {
        t.scale_assign(1.0 / n);
    }
    Ok(BatchGradient {
        mean_loss: loss_sum / n,
        grads: total,
    })
}

/// Worst disagreement between the tape gradient and central finite
/// differences over every parameter entry.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub max_rel_error: f64,
    /// `layer{i}.{tensor}[entry]` of the worst entry.
    pub worst: String,
    pub entries: usize,
}

/// Relative error below this magnitude is measured against the floor, since
/// some gradients (the key bias, for one) are exactly zero.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compares analytic gradients against `(L(θ+h) - L(θ-h)) / 2h` for every
/// parameter, dropout off.
pub fn gradient_check(
    params: &Parameters<f64>,
    example: &TrainingExample,
    step: f64,
) -> GradientCheck {
    let (_, analytic) = example_gradient(params, example, None);
    let mut probe = params.clone();
    let mut check = GradientCheck {
        max_rel_error: 0.0,
        worst: String::new(),
        entries: 0,
    };
    let tensors_per_layer = crate::model::TENSOR_NAMES.len();
    for (flat, grad) in analytic.iter().enumerate() {
        let (li, ti) = (flat / tensors_per_layer, flat % tensors_per_layer);
        for e in 0..grad.len() {
            let original = probe.layers[li].tensors()[ti].as_slice()[e];
            let mut eval = |v: f64| {
                probe.layers[li].tensors_mut()[ti].as_mut_slice()[e] = v;
                example_gradient_loss(&probe, example)
            };
            let numeric = (eval(original + step) - eval(original - step)) / (2.0 * step);
            probe.layers[li].tensors_mut()[ti].as_mut_slice()[e] = original;
            let a = grad.as_slice()[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            check.entries += 1;
            if rel > check.max_rel_error {
                check.max_rel_error = rel;
                check.worst = format!("layer{li}.{}[{e}]", crate::model::TENSOR_NAMES[ti]);
            }
        }
    }
    check
}

fn example_gradient_loss(params: &Parameters<f64>, example: &TrainingExample) -> f64 {
    let q = crate::model::encode(&example.query, &example.feedback, params).expect("valid example");
    let dot = |v: &[f32]| q.iter().zip(v).map(|(a, &b)| a * b as f64).sum::<f64>();
    let mut scores = vec![dot(&example.positive)];
    scores.extend(example.negatives.iter().map(|n| dot(n)));
    super::loss::softmax_xent(&scores).0
}
