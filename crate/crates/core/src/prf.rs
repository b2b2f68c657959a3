//! Training-free vector PRF rewrites: Average-PRF and Rocchio-PRF.

use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocchioParams {
    pub alpha: f32,
    pub beta: f32,
}

impl Default for RocchioParams {
    // arbitrary; tune per collection
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.5,
        }
    }
}

fn check_inputs<V: AsRef<[f32]>>(query: &[f32], feedback: &[V]) -> Result<()> {
    ensure!(
        !feedback.is_empty(),
        Validation,
        "PRF needs at least one feedback vector"
    );
    for (i, f) in feedback.iter().enumerate() {
        ensure!(
            f.as_ref().len() == query.len(),
            Validation,
            "feedback vector {i} has dimension {}, query has {}",
            f.as_ref().len(),
            query.len()
        );
    }
    Ok(())
}

fn feedback_sum<V: AsRef<[f32]>>(dim: usize, feedback: &[V]) -> Vec<f64> {
    let mut sum = vec![0.0f64; dim];
    for f in feedback {
        for (s, &v) in sum.iter_mut().zip(f.as_ref()) {
            *s += v as f64;
        }
    }
    sum
}

/// `(q + Σ fᵢ) / (k + 1)`.
pub fn average_prf<V: AsRef<[f32]>>(query: &[f32], feedback: &[V]) -> Result<Vec<f32>> {
    check_inputs(query, feedback)?;
    let n = (feedback.len() + 1) as f64;
    Ok(feedback_sum(query.len(), feedback)
        .into_iter()
        .zip(query)
        .map(|(s, &q)| ((s + q as f64) / n) as f32)
        .collect())
}

/// `α·q + β·mean(fᵢ)`. The feedback sum is normalized by k so that β keeps
/// its meaning at any depth.
pub fn rocchio_prf<V: AsRef<[f32]>>(
    query: &[f32],
    feedback: &[V],
    params: RocchioParams,
) -> Result<Vec<f32>> {
    check_inputs(query, feedback)?;
    ensure!(
        params.alpha.is_finite() && params.beta.is_finite(),
        Validation,
        "rocchio weights must be finite"
    );
    let k = feedback.len() as f64;
    let (alpha, beta) = (params.alpha as f64, params.beta as f64);
    Ok(feedback_sum(query.len(), feedback)
        .into_iter()
        .zip(query)
        .map(|(s, &q)| (alpha * q as f64 + beta * s / k) as f32)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f32], b: &[f32], tol: f32) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn average_examples() {
        assert_eq!(average_prf(&[1.0, 0.0], &[[0.0, 1.0]]).unwrap(), [0.5, 0.5]);
        let q = [0.3, -1.2, 4.0];
        assert!(close(&average_prf(&q, &[q, q, q]).unwrap(), &q, 1e-6));
        let third = 2.0f32 / 3.0;
        assert!(close(
            &average_prf(&[2.0, 0.0, 0.0], &[[0.0, 2.0, 0.0], [0.0, 0.0, 2.0]]).unwrap(),
            &[third; 3],
            1e-7
        ));
    }

    #[test]
    fn rocchio_examples() {
        let q = [0.25, -3.0];
        let fb = [[9.0, 9.0], [1.0, 2.0]];
        let id = RocchioParams {
            alpha: 1.0,
            beta: 0.0,
        };
        assert_eq!(rocchio_prf(&q, &fb, id).unwrap(), q);
        let fb_only = RocchioParams {
            alpha: 0.0,
            beta: 1.0,
        };
        assert_eq!(rocchio_prf(&q, &fb[..1], fb_only).unwrap(), fb[0]);
        assert_eq!(
            rocchio_prf(&[2.0, 0.0], &[[0.0, 2.0]], RocchioParams::default()).unwrap(),
            [1.0, 1.0]
        );
    }

    #[test]
    fn validation() {
        let empty: [[f32; 2]; 0] = [];
        assert!(average_prf(&[1.0, 0.0], &empty).is_err());
        assert!(rocchio_prf(&[1.0, 0.0], &empty, RocchioParams::default()).is_err());
        assert!(average_prf(&[1.0, 0.0], &[vec![1.0]]).is_err());
        let nan = RocchioParams {
            alpha: f32::NAN,
            beta: 1.0,
        };
        assert!(rocchio_prf(&[1.0], &[[1.0]], nan).is_err());
    }

    fn vecs(dim: usize, n: usize) -> impl Strategy<Value = Vec<Vec<f32>>> {
        prop::collection::vec(prop::collection::vec(-10.0f32..10.0, dim), n)
    }

    proptest! {
        #[test]
        fn average_is_rocchio_special_case(
            (q, fb) in (1usize..16).prop_flat_map(|d| (prop::collection::vec(-10.0f32..10.0, d), 1usize..8)
                .prop_flat_map(move |(q, k)| (Just(q), vecs(d, k))))
        ) {
            let k = fb.len() as f32;
            let p = RocchioParams { alpha: 1.0 / (k + 1.0), beta: k / (k + 1.0) };
            let a = average_prf(&q, &fb).unwrap();
            let r = rocchio_prf(&q, &fb, p).unwrap();
            prop_assert_eq!(a.len(), q.len());
            prop_assert!(close(&a, &r, 1e-5 * 10.0f32.max(1.0)));
        }

        #[test]
        fn rocchio_linear_in_query(
            q1 in prop::collection::vec(-10.0f32..10.0, 6),
            q2 in prop::collection::vec(-10.0f32..10.0, 6),
            fb in vecs(6, 3),
            alpha in -2.0f32..2.0, beta in -2.0f32..2.0,
        ) {
            let p = RocchioParams { alpha, beta };
            let sum: Vec<f32> = q1.iter().zip(&q2).map(|(a, b)| a + b).collect();
            let lhs = rocchio_prf(&sum, &fb, p).unwrap();
            let r1 = rocchio_prf(&q1, &fb, p).unwrap();
            let r2 = rocchio_prf(&q2, &fb, RocchioParams { alpha, beta: 0.0 }).unwrap();
            let rhs: Vec<f32> = r1.iter().zip(&r2).map(|(a, b)| a + b).collect();
            prop_assert!(close(&lhs, &rhs, 1e-4));
        }
    }
}
