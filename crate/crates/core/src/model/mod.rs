//! The transformer PRF encoder: configuration, weights, and initialization.
//!
//! The encoder maps the stacked `(k+1) × d` matrix of a query embedding and
//! its k feedback passage embeddings to a single new d-dimensional query
//! embedding. It is a stack of post-norm transformer encoder layers over
//! sinusoidally position-encoded rows; the query sits at position 0.

mod checkpoint;
mod forward;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use forward::{
    dropout_mask, encode, encode_matrix, encoder_layer, encoder_layer_traced, layer_norm,
    positional_encode, softmax_rows, Dropout, LayerTrace, LAYER_NORM_EPS,
};

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Result};
use crate::tensor::{Matrix, Scalar};

/// How the `(k+1)` transformed rows are reduced to one query vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pooling {
    /// Transformed row at the query position.
    #[default]
    QueryRow,
    /// Mean over all rows; kept for ablations.
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    layers: usize,
    heads: usize,
    dim: usize,
    ffn_dim: usize,
    dropout: f32,
    pooling: Pooling,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 6,
            heads: 4,
            dim: 768,
            ffn_dim: 1024,
            dropout: 0.2,
            pooling: Pooling::QueryRow,
        }
    }
}

impl ModelConfig {
    pub fn new(layers: usize, heads: usize, dim: usize, ffn_dim: usize) -> Result<Self> {
        let cfg = Self {
            layers,
            heads,
            dim,
            ffn_dim,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_dropout(mut self, dropout: f32) -> Result<Self> {
        self.dropout = dropout;
        self.validate()?;
        Ok(self)
    }

    pub fn with_pooling(mut self, pooling: Pooling) -> Self {
        self.pooling = pooling;
        self
    }

    fn validate(&self) -> Result<()> {
        ensure!(
            self.layers > 0 && self.heads > 0 && self.dim > 0 && self.ffn_dim > 0,
            Config,
            "layers, heads, dim and ffn_dim must be positive"
        );
        ensure!(
            self.dim.is_multiple_of(self.heads),
            Config,
            "model dim {} is not divisible by {} heads",
            self.dim,
            self.heads
        );
        ensure!(
            (0.0..1.0).contains(&self.dropout),
            Config,
            "dropout {} outside [0, 1)",
            self.dropout
        );
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn ffn_dim(&self) -> usize {
        self.ffn_dim
    }

    pub fn dropout(&self) -> f32 {
        self.dropout
    }

    pub fn pooling(&self) -> Pooling {
        self.pooling
    }

    /// Learnable scalars per layer times the number of layers.
    pub fn param_count(&self) -> u64 {
        let (d, f) = (self.dim as u64, self.ffn_dim as u64);
        let attention = 4 * (d * d + d);
        let ffn = (d * f + f) + (f * d + d);
        let norms = 4 * d;
        self.layers as u64 * (attention + ffn + norms)
    }

    /// Raw parameter bytes at 32-bit precision.
    pub fn size_bytes(&self) -> u64 {
        4 * self.param_count()
    }
}

/// Weights of one encoder layer. Projections act on row vectors (`x · W`),
/// so `W` is stored `fan_in × fan_out`; biases and norm vectors are `1 × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub w_q: Matrix<T>,
    pub b_q: Matrix<T>,
    pub w_k: Matrix<T>,
    pub b_k: Matrix<T>,
    pub w_v: Matrix<T>,
    pub b_v: Matrix<T>,
    pub w_o: Matrix<T>,
    pub b_o: Matrix<T>,
    pub w_1: Matrix<T>,
    pub b_1: Matrix<T>,
    pub w_2: Matrix<T>,
    pub b_2: Matrix<T>,
    pub ln1_gain: Matrix<T>,
    pub ln1_bias: Matrix<T>,
    pub ln2_gain: Matrix<T>,
    pub ln2_bias: Matrix<T>,
}

/// Names of the per-layer tensors in serialization order.
pub const TENSOR_NAMES: [&str; 16] = [
    "w_q", "b_q", "w_k", "b_k", "w_v", "b_v", "w_o", "b_o", "w_1", "b_1", "w_2", "b_2", "ln1_gain",
    "ln1_bias", "ln2_gain", "ln2_bias",
];

/// Whether AdamW applies weight decay to the tensor at this position in
/// [`TENSOR_NAMES`]. Only the projection matrices decay.
pub fn decays(tensor_index: usize) -> bool {
    matches!(tensor_index, 0 | 2 | 4 | 6 | 8 | 10)
}

impl<T: Scalar> LayerParams<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (d, f) = (cfg.dim, cfg.ffn_dim);
        let z = Matrix::zeros;
        Self {
            w_q: z(d, d),
            b_q: z(1, d),
            w_k: z(d, d),
            b_k: z(1, d),
            w_v: z(d, d),
            b_v: z(1, d),
            w_o: z(d, d),
            b_o: z(1, d),
            w_1: z(d, f),
            b_1: z(1, f),
            w_2: z(f, d),
            b_2: z(1, d),
            ln1_gain: Matrix::filled(1, d, T::one()),
            ln1_bias: z(1, d),
            ln2_gain: Matrix::filled(1, d, T::one()),
            ln2_bias: z(1, d),
        }
    }

    pub fn tensors(&self) -> [&Matrix<T>; 16] {
        [
            &self.w_q,
            &self.b_q,
            &self.w_k,
            &self.b_k,
            &self.w_v,
            &self.b_v,
            &self.w_o,
            &self.b_o,
            &self.w_1,
            &self.b_1,
            &self.w_2,
            &self.b_2,
            &self.ln1_gain,
            &self.ln1_bias,
            &self.ln2_gain,
            &self.ln2_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix<T>; 16] {
        [
            &mut self.w_q,
            &mut self.b_q,
            &mut self.w_k,
            &mut self.b_k,
            &mut self.w_v,
            &mut self.b_v,
            &mut self.w_o,
            &mut self.b_o,
            &mut self.w_1,
            &mut self.b_1,
            &mut self.w_2,
            &mut self.b_2,
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
        ]
    }
}

/// Full learnable weight set for a [`ModelConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<T = f32> {
    config: ModelConfig,
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Scalar> Parameters<T> {
    /// All weights zero, norm gains one.
    pub fn zeros(config: &ModelConfig) -> Self {
        Self {
            config: config.clone(),
            layers: (0..config.layers)
                .map(|_| LayerParams::zeros(config))
                .collect(),
        }
    }

    /// Every entry zero, norm gains included. Shape template for gradients
    /// and optimizer moments.
    pub fn zeroed(config: &ModelConfig) -> Self {
        let mut p = Self::zeros(config);
        for t in p.iter_tensors_mut() {
            t.as_mut_slice().fill(T::zero());
        }
        p
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn set_pooling(&mut self, pooling: Pooling) {
        self.config.pooling = pooling;
    }

    pub fn cast<U: Scalar>(&self) -> Parameters<U> {
        Parameters {
            config: self.config.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| {
                    let t = l.tensors();
                    LayerParams {
                        w_q: t[0].cast(),
                        b_q: t[1].cast(),
                        w_k: t[2].cast(),
                        b_k: t[3].cast(),
                        w_v: t[4].cast(),
                        b_v: t[5].cast(),
                        w_o: t[6].cast(),
                        b_o: t[7].cast(),
                        w_1: t[8].cast(),
                        b_1: t[9].cast(),
                        w_2: t[10].cast(),
                        b_2: t[11].cast(),
                        ln1_gain: t[12].cast(),
                        ln1_bias: t[13].cast(),
                        ln2_gain: t[14].cast(),
                        ln2_bias: t[15].cast(),
                    }
                })
                .collect(),
        }
    }

    /// Every tensor in checkpoint order: layer by layer, [`TENSOR_NAMES`]
    /// within a layer.
    pub fn iter_tensors(&self) -> impl Iterator<Item = &Matrix<T>> {
        self.layers.iter().flat_map(|l| l.tensors())
    }

    pub fn iter_tensors_mut(&mut self) -> impl Iterator<Item = &mut Matrix<T>> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut())
    }

    pub fn count(&self) -> u64 {
        self.iter_tensors().map(|t| t.len() as u64).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.iter_tensors().all(Matrix::all_finite)
    }

    pub fn sum_squares(&self) -> f64 {
        self.iter_tensors().map(|t| t.sum_squares().as_f64()).sum()
    }
}

/// Xavier-uniform projection weights, zero biases, unit norm gains.
/// Deterministic per seed.
pub fn init_params(config: &ModelConfig, seed: u64) -> Parameters<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Parameters::<f32>::zeros(config);
    for layer in &mut params.layers {
        for (i, t) in layer.tensors_mut().into_iter().enumerate() {
            if !decays(i) {
                continue;
            }
            let bound = (6.0 / (t.rows() + t.cols()) as f64).sqrt() as f32;
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            for v in t.as_mut_slice() {
                *v = dist.sample(&mut rng);
            }
        }
    }
    params
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(ModelConfig::new(1, 5, 768, 1024).is_err());
        assert!(ModelConfig::new(0, 4, 768, 1024).is_err());
        assert!(ModelConfig::new(1, 4, 768, 1024)
            .unwrap()
            .with_dropout(1.0)
            .is_err());
        for h in [1, 4, 6, 12] {
            assert!(ModelConfig::new(6, h, 768, 1024).is_ok());
        }
    }

    // Sum of the per-layer shapes listed in `LayerParams`, spelled out.
    fn shape_sum(l: u64, d: u64, f: u64) -> u64 {
        let per_layer = (d * d + d) * 4 + (d * f + f) + (f * d + d) + 2 * (d + d);
        l * per_layer
    }

    #[test]
    fn param_count_matches_shapes() {
        let one = ModelConfig::new(1, 1, 768, 1024).unwrap();
        assert_eq!(one.param_count(), shape_sum(1, 768, 1024));
        assert_eq!(one.param_count(), 3_940_096);
        let six = ModelConfig::new(6, 4, 768, 1024).unwrap();
        assert_eq!(six.param_count(), 6 * one.param_count());
        for h in [1, 4, 6, 12] {
            assert_eq!(
                ModelConfig::new(6, h, 768, 1024).unwrap().param_count(),
                six.param_count()
            );
        }
        assert_eq!(six.size_bytes(), 4 * six.param_count());
        let tiny = ModelConfig::new(2, 2, 8, 16).unwrap();
        assert_eq!(init_params(&tiny, 0).count(), tiny.param_count());
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::new(2, 2, 8, 16).unwrap();
        assert_eq!(init_params(&cfg, 42), init_params(&cfg, 42));
        assert_ne!(init_params(&cfg, 42), init_params(&cfg, 43));
        let p = init_params(&cfg, 42);
        for l in &p.layers {
            assert!(l.ln1_gain.as_slice().iter().all(|&g| g == 1.0));
            assert!(l.ln2_gain.as_slice().iter().all(|&g| g == 1.0));
            assert!(l.b_q.as_slice().iter().all(|&b| b == 0.0));
            assert!(l.ln2_bias.as_slice().iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn xavier_moments() {
        let cfg = ModelConfig::new(1, 1, 768, 1024).unwrap();
        let p = init_params(&cfg, 3);
        let w = p.layers[0].w_q.as_slice();
        let n = w.len() as f64;
        let mean = w.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = w.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        // uniform on [-b, b] has variance b²/3 = 2 / (fan_in + fan_out)
        let expected = (2.0 / (768.0 + 768.0f64)).sqrt();
        assert!(
            (var.sqrt() / expected - 1.0).abs() < 0.05,
            "std {}",
            var.sqrt()
        );
        let bound = (6.0 / 1536.0f64).sqrt() as f32;
        assert!(w.iter().all(|v| v.abs() <= bound));
    }
}
