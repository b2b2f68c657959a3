//! Inference-path forward pass, generic over the element type.

use rand::{Rng, RngCore};

use super::{LayerParams, Parameters, Pooling};
use crate::error::{ensure, Result};
use crate::tensor::{Matrix, Scalar};

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub enum Dropout<'a> {
    Off,
    On { rate: f64, rng: &'a mut dyn RngCore },
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else
/// `1 / (1 - rate)`. One uniform draw per entry, in row-major order.
pub fn dropout_mask<T: Scalar>(rng: &mut dyn RngCore, len: usize, rate: f64) -> Vec<T> {
    let keep = T::of_f64(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect()
}

/// Adds the sinusoidal position code to each row; row `pos` is rank `pos`
/// with the query at 0.
pub fn positional_encode<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    let d = m.cols();
    let mut out = m.clone();
    for pos in 0..m.rows() {
        let row = out.row_mut(pos);
        for i in (0..d).step_by(2) {
            let angle = pos as f64 / 10000f64.powf(i as f64 / d as f64);
            row[i] = row[i] + T::of_f64(angle.sin());
            if i + 1 < d {
                row[i + 1] = row[i + 1] + T::of_f64(angle.cos());
            }
        }
    }
    out
}

pub fn softmax_rows<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

/// Row-wise layer norm. Returns the output and the normalized pre-gain
/// activations.
pub fn layer_norm<T: Scalar>(
    x: &Matrix<T>,
    gain: &Matrix<T>,
    bias: &Matrix<T>,
) -> (Matrix<T>, Matrix<T>) {
    let d = x.cols();
    let n = T::of_f64(d as f64);
    let eps = T::of_f64(LAYER_NORM_EPS);
    let mut normed = x.clone();
    let mut out = x.clone();
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let inv = T::one() / (var + eps).sqrt();
        for (c, &v) in row.iter().enumerate() {
            let h = (v - mean) * inv;
            normed.set(r, c, h);
            out.set(r, c, h * gain.get(0, c) + bias.get(0, c));
        }
    }
    (out, normed)
}

/// Intermediate values of one layer, for inspection in tests.
#[derive(Debug, Clone)]
pub struct LayerTrace<T> {
    /// Softmax weights per head, `(n × n)` each, before dropout.
    pub attention: Vec<Matrix<T>>,
    /// Normalized pre-gain activations of the output layer norm.
    pub output_normed: Matrix<T>,
}

impl<T: Scalar> Default for LayerTrace<T> {
    fn default() -> Self {
        Self {
            attention: Vec::new(),
            output_normed: Matrix::default(),
        }
    }
}

fn linear<T: Scalar>(x: &Matrix<T>, w: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let mut y = x.matmul(w);
    y.add_row_assign(b.as_slice());
    y
}

fn check_layer_shapes<T: Scalar>(
    x: &Matrix<T>,
    layer: &LayerParams<T>,
    heads: usize,
) -> Result<()> {
    let d = x.cols();
    ensure!(
        heads > 0 && d.is_multiple_of(heads),
        Validation,
        "{heads} heads do not divide width {d}"
    );
    let f = layer.w_1.cols();
    let expect = [
        (d, d),
        (1, d),
        (d, d),
        (1, d),
        (d, d),
        (1, d),
        (d, d),
        (1, d),
        (d, f),
        (1, f),
        (f, d),
        (1, d),
        (1, d),
        (1, d),
        (1, d),
        (1, d),
    ];
    for (i, (t, want)) in layer.tensors().iter().zip(expect).enumerate() {
        ensure!(
            t.shape() == want,
            Validation,
            "tensor {} has shape {:?}, expected {:?} for input width {d}",
            super::TENSOR_NAMES[i],
            t.shape(),
            want
        );
    }
    Ok(())
}

pub fn encoder_layer<T: Scalar>(
    x: &Matrix<T>,
    layer: &LayerParams<T>,
    heads: usize,
    dropout: Dropout<'_>,
) -> Result<Matrix<T>> {
    encoder_layer_traced(x, layer, heads, dropout, None)
}

/// `y₁ = LN(x + MHA(x))`, `out = LN(y₁ + FFN(y₁))`.
pub fn encoder_layer_traced<T: Scalar>(
    x: &Matrix<T>,
    layer: &LayerParams<T>,
    heads: usize,
    mut dropout: Dropout<'_>,
    mut trace: Option<&mut LayerTrace<T>>,
) -> Result<Matrix<T>> {
    check_layer_shapes(x, layer, heads)?;
    let d = x.cols();
    let head_dim = d / heads;
    let scale = T::of_f64(1.0 / (head_dim as f64).sqrt());

    let q = linear(x, &layer.w_q, &layer.b_q);
    let k = linear(x, &layer.w_k, &layer.b_k);
    let v = linear(x, &layer.w_v, &layer.b_v);

    let mut head_outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = (
            q.slice_cols(h * head_dim, head_dim),
            k.slice_cols(h * head_dim, head_dim),
            v.slice_cols(h * head_dim, head_dim),
        );
        let mut scores = qh.matmul_nt(&kh);
        scores.scale_assign(scale);
        let mut weights = softmax_rows(&scores);
        if let Some(t) = trace.as_deref_mut() {
            t.attention.push(weights.clone());
        }
        if let Dropout::On { rate, rng } = &mut dropout {
            let mask = dropout_mask::<T>(&mut **rng, weights.len(), *rate);
            for (w, m) in weights.as_mut_slice().iter_mut().zip(mask) {
                *w = *w * m;
            }
        }
        head_outputs.push(weights.matmul(&vh));
    }
    let concat = Matrix::concat_cols(&head_outputs.iter().collect::<Vec<_>>());
    let mut attn = linear(&concat, &layer.w_o, &layer.b_o);

    attn.add_assign(x);
    let (y1, _) = layer_norm(&attn, &layer.ln1_gain, &layer.ln1_bias);

    let mut hidden = linear(&y1, &layer.w_1, &layer.b_1).map(|v| v.max(T::zero()));
    if let Dropout::On { rate, rng } = &mut dropout {
        let mask = dropout_mask::<T>(&mut **rng, hidden.len(), *rate);
        for (h, m) in hidden.as_mut_slice().iter_mut().zip(mask) {
            *h = *h * m;
        }
    }
    let mut ffn = linear(&hidden, &layer.w_2, &layer.b_2);
    ffn.add_assign(&y1);
    let (out, normed) = layer_norm(&ffn, &layer.ln2_gain, &layer.ln2_bias);
    if let Some(t) = trace {
        t.output_normed = normed;
    }
    Ok(out)
}

/// Runs an already stacked `(k+1) × d` input through positional encoding and
/// every layer (dropout off), then pools to one vector.
pub fn encode_matrix<T: Scalar>(input: &Matrix<T>, params: &Parameters<T>) -> Result<Vec<T>> {
    let cfg = params.config();
    ensure!(
        input.rows() >= 2,
        Validation,
        "PRF input needs the query and at least one feedback row; with no feedback use the raw query"
    );
    ensure!(
        input.cols() == cfg.dim(),
        Validation,
        "input width {} does not match model dim {}",
        input.cols(),
        cfg.dim()
    );
    ensure!(
        input.all_finite(),
        Validation,
        "PRF input has non-finite entries"
    );
    let mut x = positional_encode(input);
    for layer in &params.layers {
        x = encoder_layer(&x, layer, cfg.heads(), Dropout::Off)?;
    }
    Ok(match cfg.pooling() {
        Pooling::QueryRow => x.row(0).to_vec(),
        Pooling::Mean => {
            let n = T::of_f64(x.rows() as f64);
            x.column_sums().into_iter().map(|s| s / n).collect()
        }
    })
}

/// New query embedding from a query and its first-stage feedback, in rank
/// order.
pub fn encode<T: Scalar, V: AsRef<[f32]>>(
    query: &[f32],
    feedback: &[V],
    params: &Parameters<T>,
) -> Result<Vec<T>> {
    ensure!(
        !feedback.is_empty(),
        Validation,
        "no feedback passages (k = 0); search with the raw query instead"
    );
    let d = query.len();
    let mut data = Vec::with_capacity((feedback.len() + 1) * d);
    data.extend(query.iter().map(|&v| T::of_f64(v as f64)));
    for (i, f) in feedback.iter().enumerate() {
        let f = f.as_ref();
        ensure!(
            f.len() == d,
            Validation,
            "feedback vector {i} has dimension {}, query has {d}",
            f.len()
        );
        data.extend(f.iter().map(|&v| T::of_f64(v as f64)));
    }
    encode_matrix(&Matrix::from_vec(feedback.len() + 1, d, data), params)
}
