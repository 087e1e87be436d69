//! Closed-form recovery of a single input from first-layer gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::GradientVector;
use crate::tensor::Tensor;

/// What the server observes from one client update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakedUpdate {
    pub gradient: GradientVector,
    /// Number of rows the client used, if known.
    pub batch_hint: usize,
}

/// Per-entry floor on the bias-gradient Gram term; scaled by the number of
/// entries so that a gradient with every entry at or below 1e-15 is always
/// treated as singular.
pub const GRAM_TOLERANCE: f64 = 1e-30;

#[derive(Debug, Clone, PartialEq)]
pub enum Extraction {
    Recovered(Tensor),
    /// The Gram term is singular within tolerance; `det` is its determinant.
    Singular {
        det: f64,
    },
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn determinant(a: &Tensor) -> f64 {
    let n = a.rows();
    let mut m = a.data().to_vec();
    let mut det = 1.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))
            .unwrap_or(col);
        if m[piv * n + col] == 0.0 {
            return 0.0;
        }
        if piv != col {
            for k in 0..n {
                m.swap(piv * n + k, col * n + k);
            }
            det = -det;
        }
        let p = m[col * n + col];
        det *= p;
        for r in col + 1..n {
            let f = m[r * n + col] / p;
            for k in col..n {
                m[r * n + k] -= f * m[col * n + k];
            }
        }
    }
    det
}

/// Recovers `x` from `dW = db^T x`, i.e. `x^T = dW^T db^T (db db^T)^-1`.
///
/// With a batch hint `m > 1` the bias gradient is stacked `m` times, which
/// makes the Gram matrix rank one and the recovery fails, as it must.
pub fn extract_single(update: &LeakedUpdate) -> Result<Extraction> {
    let first = update
        .gradient
        .layers
        .first()
        .ok_or_else(|| Error::Unsupported("update has no layers".into()))?;
    let (dw, db) = (&first.weight, &first.bias);
    if db.is_empty() || dw.shape().len() != 2 || db.len() != dw.rows() {
        return Err(Error::Unsupported(
            "extraction needs a first layer with a bias per output".into(),
        ));
    }
    let m = update.batch_hint.max(1);
    let out = db.len();
    let stacked = Tensor::new(vec![m, out], db.data().repeat(m))?;
    let gram = stacked.matmul(&stacked.transpose()?)?;
    let det = determinant(&gram);
    if det.abs() < GRAM_TOLERANCE * out as f64 || !det.is_finite() {
        return Ok(Extraction::Singular { det });
    }
    // Single row: x = dW^T db / (db . db).
    let dbv = Tensor::matrix(1, out, db.data().to_vec())?;
    let num = dbv.matmul(dw)?;
    let denom = db.dot(db)?;
    let x = num.scale(1.0 / denom);
    if x.first_non_finite().is_some() {
        return Ok(Extraction::Singular { det });
    }
    Ok(Extraction::Recovered(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::MlpClassifier;
    use crate::rng::{stream, uniform};

    fn leak(batch: usize, seed: u64) -> (Tensor, LeakedUpdate) {
        let mut rng = stream(seed, &[]);
        let m = MlpClassifier::new(5, 3, &mut rng).unwrap();
        let x = Tensor::matrix(batch, 5, (0..batch * 5).map(|_| uniform(&mut rng, 0.0, 1.0)).collect()).unwrap();
        let labels: Vec<usize> = (0..batch).map(|i| i % 3).collect();
        let y = crate::data::one_hot(&labels, 3);
        let g = m.gradient(&x, &y).unwrap();
        (
            x,
            LeakedUpdate {
                gradient: g,
                batch_hint: batch,
            },
        )
    }

    #[test]
    fn exact_for_one_row() {
        let (x, u) = leak(1, 1);
        match extract_single(&u).unwrap() {
            Extraction::Recovered(r) => {
                let err = r.sub(&x).unwrap().max_abs();
                assert!(err <= 1e-6, "{err}");
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn two_rows_singular() {
        let (_, u) = leak(2, 1);
        assert!(matches!(extract_single(&u).unwrap(), Extraction::Singular { .. }));
    }

    #[test]
    fn vanishing_gradient_singular() {
        let (_, mut u) = leak(1, 2);
        let s = 1e-15 / u.gradient.max_abs();
        u.gradient = u.gradient.scale(s);
        assert!(matches!(extract_single(&u).unwrap(), Extraction::Singular { .. }));
    }

    #[test]
    fn determinant_examples() {
        let a = Tensor::matrix(2, 2, vec![2.0, 1.0, 1.0, 3.0]).unwrap();
        assert!((determinant(&a) - 5.0).abs() < 1e-12);
        let r = Tensor::full(&[3, 3], 0.7);
        assert_eq!(determinant(&r), 0.0);
    }
}
