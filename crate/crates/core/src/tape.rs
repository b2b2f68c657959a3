//! Reverse-mode differentiation over the encoder's fixed operation set.
//!
//! Every node holds an `f64` matrix. Parameters enter as borrowed leaves so a
//! fresh tape per example costs no weight copies. `backward` walks the nodes
//! in reverse creation order, which is a valid topological order because an
//! op can only reference nodes created before it.

use crate::model::LAYER_NORM_EPS;
use crate::tensor::Matrix;

pub type Mat = Matrix<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    /// Borrowed parameter, by index into the tape's parameter list.
    Param(usize),
    Input,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    AddRowBias(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    SoftmaxRows(Var),
    MulMask(Var, Vec<f64>),
    Relu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        normed: Mat,
        inv_std: Vec<f64>,
    },
    SelectRow(Var, usize),
    MeanRows(Var),
    /// Softmax cross-entropy of `q · cᵢ` with the target at candidate 0.
    ContrastiveLoss {
        q: Var,
        candidates: Mat,
        probs: Vec<f64>,
    },
}

struct Node {
    /// `None` for parameter leaves; their value lives in `Tape::params`.
    value: Option<Mat>,
    op: Op,
}

pub struct Tape<'p> {
    params: Vec<&'p Mat>,
    nodes: Vec<Node>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            nodes: Vec::new(),
        }
    }

    pub fn value(&self, v: Var) -> &Mat {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(i)) => self.params[*i],
            _ => unreachable!("only parameter nodes are stored by reference"),
        }
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, m: &'p Mat) -> Var {
        self.params.push(m);
        self.nodes.push(Node {
            value: None,
            op: Op::Param(self.params.len() - 1),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, m: Mat) -> Var {
        self.push(m, Op::Input)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_nt(self.value(b));
        self.push(v, Op::MatMulNt(a, b))
    }

    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_row_assign(self.value(bias).as_slice());
        self.push(v, Op::AddRowBias(a, bias))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_row_bias(xw, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut v = self.value(a).clone();
        v.scale_assign(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice_cols(start, len);
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Mat> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::concat_cols(&mats);
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = crate::model::softmax_rows(self.value(a));
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mul_mask(&mut self, a: Var, mask: Vec<f64>) -> Var {
        let mut v = self.value(a).clone();
        assert_eq!(mask.len(), v.len(), "mask length mismatch");
        for (x, m) in v.as_mut_slice().iter_mut().zip(&mask) {
            *x *= m;
        }
        self.push(v, Op::MulMask(a, mask))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, d) = xv.shape();
        let mut normed = Mat::zeros(rows, d);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, &v) in normed.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let g = self.value(gain);
        let mut scaled = normed.clone();
        for r in 0..rows {
            for (o, &gv) in scaled.row_mut(r).iter_mut().zip(g.as_slice()) {
                *o *= gv;
            }
        }
        let y = self.push(
            scaled,
            Op::LayerNorm {
                x,
                gain,
                normed,
                inv_std,
            },
        );
        self.add_row_bias(y, bias)
    }

    pub fn select_row(&mut self, a: Var, r: usize) -> Var {
        let v = Matrix::from_vec(1, self.value(a).cols(), self.value(a).row(r).to_vec());
        self.push(v, Op::SelectRow(a, r))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let n = m.rows() as f64;
        let v = Matrix::from_vec(
            1,
            m.cols(),
            m.column_sums().into_iter().map(|s| s / n).collect(),
        );
        self.push(v, Op::MeanRows(a))
    }

    /// `-log softmax(q · cᵢ)₀` for a `1 × d` query against constant
    /// `m × d` candidates whose row 0 is the target.
    pub fn contrastive_loss(&mut self, q: Var, candidates: Mat) -> Var {
        let scores = self.value(q).matmul_nt(&candidates);
        let (loss, probs) = crate::train::softmax_xent(scores.as_slice());
        self.push(
            Matrix::from_vec(1, 1, vec![loss]),
            Op::ContrastiveLoss {
                q,
                candidates,
                probs,
            },
        )
    }

    /// Gradients of the scalar `root` with respect to every parameter leaf,
    /// in registration order.
    pub fn backward(&self, root: Var) -> Vec<Mat> {
        assert_eq!(
            self.value(root).shape(),
            (1, 1),
            "backward needs a scalar root"
        );
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Param(_) | Op::Input => {
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul_nt(self.value(*b));
                    let db = self.value(*a).matmul_tn(&g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulNt(a, b) => {
                    let da = g.matmul(self.value(*b));
                    let db = g.matmul_tn(self.value(*a));
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::AddRowBias(a, bias) => {
                    let db = Matrix::from_vec(1, g.cols(), g.column_sums());
                    accumulate(&mut grads, *bias, db);
                    accumulate(&mut grads, *a, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(a, s) => {
                    let mut da = g;
                    da.scale_assign(*s);
                    accumulate(&mut grads, *a, da);
                }
                Op::SliceCols(a, start) => {
                    let src = self.value(*a);
                    let mut da = Mat::zeros(src.rows(), src.cols());
                    for r in 0..g.rows() {
                        da.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        accumulate(&mut grads, p, g.slice_cols(offset, w));
                        offset += w;
                    }
                }
                Op::SoftmaxRows(a) => {
                    let y = node.value.as_ref().unwrap();
                    let mut da = Mat::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (o, (&yv, &gv)) in da.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                            *o = yv * (gv - dot);
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::MulMask(a, mask) => {
                    let mut da = g;
                    for (x, m) in da.as_mut_slice().iter_mut().zip(mask) {
                        *x *= m;
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::Relu(a) => {
                    let src = self.value(*a);
                    let mut da = g;
                    for (x, &s) in da.as_mut_slice().iter_mut().zip(src.as_slice()) {
                        if s <= 0.0 {
                            *x = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    normed,
                    inv_std,
                } => {
                    let gv = self.value(*gain).as_slice();
                    let (rows, d) = normed.shape();
                    let mut dgain = vec![0.0; d];
                    let mut dx = Mat::zeros(rows, d);
                    for (r, &inv) in inv_std.iter().enumerate().take(rows) {
                        let (h, dy) = (normed.row(r), g.row(r));
                        let dh: Vec<f64> = dy.iter().zip(gv).map(|(a, b)| a * b).collect();
                        for ((acc, a), b) in dgain.iter_mut().zip(dy).zip(h) {
                            *acc += a * b;
                        }
                        let mean_dh = dh.iter().sum::<f64>() / d as f64;
                        let mean_dh_h =
                            dh.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                            *o = inv * (dh[c] - mean_dh - h[c] * mean_dh_h);
                        }
                    }
                    accumulate(&mut grads, *gain, Matrix::from_vec(1, d, dgain));
                    accumulate(&mut grads, *x, dx);
                }
                Op::SelectRow(a, r) => {
                    let src = self.value(*a);
                    let mut da = Mat::zeros(src.rows(), src.cols());
                    da.row_mut(*r).copy_from_slice(g.row(0));
                    accumulate(&mut grads, *a, da);
                }
                Op::MeanRows(a) => {
                    let src = self.value(*a);
                    let n = src.rows() as f64;
                    let mut da = Mat::zeros(src.rows(), src.cols());
                    for r in 0..src.rows() {
                        for (o, &gv) in da.row_mut(r).iter_mut().zip(g.row(0)) {
                            *o = gv / n;
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::ContrastiveLoss {
                    q,
                    candidates,
                    probs,
                } => {
                    let upstream = g.get(0, 0);
                    let mut dq = vec![0.0; candidates.cols()];
                    for (j, &p) in probs.iter().enumerate() {
                        let coeff = upstream * (p - if j == 0 { 1.0 } else { 0.0 });
                        for (o, &c) in dq.iter_mut().zip(candidates.row(j)) {
                            *o += coeff * c;
                        }
                    }
                    accumulate(&mut grads, *q, Matrix::from_vec(1, dq.len(), dq));
                }
            }
        }

        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(p) => Some((p, i)),
                _ => None,
            })
            .map(|(p, i)| {
                grads[i].take().unwrap_or_else(|| {
                    let v = self.params[p];
                    Mat::zeros(v.rows(), v.cols())
                })
            })
            .collect()
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finite_diff(f: impl Fn(&Mat) -> f64, x: &Mat) -> Mat {
        let h = 1e-6;
        let mut out = Mat::zeros(x.rows(), x.cols());
        for i in 0..x.len() {
            let mut plus = x.clone();
            plus.as_mut_slice()[i] += h;
            let mut minus = x.clone();
            minus.as_mut_slice()[i] -= h;
            out.as_mut_slice()[i] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        out
    }

    fn assert_close(a: &Mat, b: &Mat) {
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-6 * (1.0 + x.abs()), "{x} vs {y}");
        }
    }

    // sum over a fixed weighting, so every output element matters
    fn weighted_sum(t: &mut Tape<'_>, v: Var) -> Var {
        let m = t.value(v).clone();
        let w = Matrix::from_vec(
            m.cols(),
            1,
            (0..m.cols()).map(|i| 0.3 + 0.17 * i as f64).collect(),
        );
        let wv = t.input(w);
        let col = t.matmul(v, wv);
        t.mean_rows(col)
    }

    #[test]
    fn softmax_and_norm_gradients() {
        let x = Matrix::from_vec(
            3,
            4,
            (0..12).map(|i| ((i * 7) % 5) as f64 * 0.4 - 0.7).collect(),
        );
        let gain = Matrix::from_vec(1, 4, vec![1.0, 0.5, -0.3, 2.0]);
        let bias = Matrix::from_vec(1, 4, vec![0.1, 0.2, 0.3, 0.4]);
        let run = |x: &Mat, gain: &Mat| {
            let mut t = Tape::new();
            let xv = t.param(x);
            let gv = t.param(gain);
            let bv = t.param(&bias);
            let s = t.softmax_rows(xv);
            let n = t.layer_norm(s, gv, bv);
            let r = t.relu(n);
            let out = weighted_sum(&mut t, r);
            (t.value(out).get(0, 0), t.backward(out))
        };
        let (_, g) = run(&x, &gain);
        assert_close(&g[0], &finite_diff(|x| run(x, &gain).0, &x));
        assert_close(&g[1], &finite_diff(|gm| run(&x, gm).0, &gain));
    }

    #[test]
    fn matmul_family_gradients() {
        let a = Matrix::from_vec(2, 3, vec![0.1, -0.4, 0.9, 1.2, 0.3, -0.5]);
        let b = Matrix::from_vec(4, 3, (0..12).map(|i| (i as f64 - 5.0) * 0.1).collect());
        let run = |a: &Mat, b: &Mat| {
            let mut t = Tape::new();
            let av = t.param(a);
            let bv = t.param(b);
            let ab = t.matmul_nt(av, bv);
            let left = t.slice_cols(ab, 0, 2);
            let right = t.slice_cols(ab, 2, 2);
            let s = t.scale(right, 0.5);
            let cat = t.concat_cols(&[s, left]);
            let sum = t.add(cat, ab);
            let row = t.select_row(sum, 1);
            let out = weighted_sum(&mut t, row);
            (t.value(out).get(0, 0), t.backward(out))
        };
        let (_, g) = run(&a, &b);
        assert_close(&g[0], &finite_diff(|m| run(m, &b).0, &a));
        assert_close(&g[1], &finite_diff(|m| run(&a, m).0, &b));
    }

    #[test]
    fn loss_gradient() {
        let q = Matrix::from_vec(1, 3, vec![0.5, -1.0, 2.0]);
        let c = Matrix::from_vec(3, 3, vec![1.0, 0.0, 0.5, -0.2, 0.3, 0.1, 0.9, 0.9, -0.4]);
        let run = |q: &Mat| {
            let mut t = Tape::new();
            let qv = t.param(q);
            let l = t.contrastive_loss(qv, c.clone());
            (t.value(l).get(0, 0), t.backward(l))
        };
        let (_, g) = run(&q);
        assert_close(&g[0], &finite_diff(|m| run(m).0, &q));
    }
}
