use crate::error::{Error, Result};
use crate::nn::ModelParams;

/// Parameter-wise mean. Each coordinate is summed in sorted order, so the
/// result does not depend on the order of `models` at all.
pub fn aggregate(models: &[&ModelParams]) -> Result<ModelParams> {
    let first = models
        .first()
        .ok_or_else(|| Error::Empty("no models to aggregate".into()))?;
    if let Some(i) = models.iter().position(|m| !m.same_architecture(first)) {
        return Err(Error::Architecture(format!("model {i} differs from model 0")));
    }
    let flats: Vec<Vec<f64>> = models.iter().map(|m| m.flatten()).collect();
    let k = models.len() as f64;
    let mut buf = vec![0.0; models.len()];
    let mean: Vec<f64> = (0..flats[0].len())
        .map(|j| {
            for (b, f) in buf.iter_mut().zip(&flats) {
                *b = f[j];
            }
            buf.sort_by(f64::total_cmp);
            buf.iter().sum::<f64>() / k
        })
        .collect();
    first.unflatten_like(&mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerParams;
    use crate::tensor::Tensor;

    fn model(v: f64) -> ModelParams {
        ModelParams::new(vec![LayerParams {
            weight: Tensor::full(&[1, 1], v),
            bias: Tensor::vector(vec![v]),
        }])
    }

    #[test]
    fn mean_of_two() {
        let out = aggregate(&[&model(0.0), &model(2.0)]).unwrap();
        assert_eq!(out.flatten(), vec![1.0, 1.0]);
    }

    #[test]
    fn identical_models_unchanged() {
        let m = model(0.3);
        assert_eq!(aggregate(&[&m, &m, &m]).unwrap(), m);
    }

    #[test]
    fn permutation_invariant() {
        let ms = [model(0.1), model(0.7), model(1e-17), model(3.3)];
        let a = aggregate(&[&ms[0], &ms[1], &ms[2], &ms[3]]).unwrap();
        let b = aggregate(&[&ms[3], &ms[2], &ms[0], &ms[1]]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mismatch_rejected() {
        let other = ModelParams::new(vec![LayerParams {
            weight: Tensor::zeros(&[2, 1]),
            bias: Tensor::zeros(&[2]),
        }]);
        assert!(matches!(aggregate(&[&model(0.0), &other]), Err(Error::Architecture(_))));
    }
}
