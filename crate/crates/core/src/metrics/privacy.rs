use crate::data::{FeatureKind, FeatureSchema};
use crate::error::{Error, Result};

/// Mean per-feature dissimilarity of two normalized rows: absolute
/// difference on continuous columns, 1 on discrete columns whose rounded
/// original values differ. Lies in [0, 1]; 0 means a perfect leak.
pub fn privacy_score(x: &[f64], x_rec: &[f64], schema: &FeatureSchema) -> Result<f64> {
    if x.len() != schema.dim() || x_rec.len() != schema.dim() {
        return Err(Error::Shape {
            op: "privacy_score",
            lhs: vec![x.len(), x_rec.len()],
            rhs: vec![schema.dim()],
        });
    }
    if schema.dim() == 0 {
        return Err(Error::Empty("schema has no features".into()));
    }
    let total: f64 = schema
        .features
        .iter()
        .zip(x.iter().zip(x_rec))
        .map(|(f, (&a, &b))| match f.kind {
            FeatureKind::Continuous => (a - b).abs().min(1.0),
            FeatureKind::Discrete => {
                let pa = f.denormalize(a).round();
                let pb = f.denormalize(b).round();
                if pa == pb {
                    0.0
                } else {
                    1.0
                }
            }
        })
        .sum();
    Ok(total / schema.dim() as f64)
}

/// Fraction of positions where the reconstructed label equals the truth.
pub fn label_accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::Shape {
            op: "label_accuracy",
            lhs: vec![predicted.len()],
            rhs: vec![truth.len()],
        });
    }
    if truth.is_empty() {
        return Err(Error::Empty("no labels to compare".into()));
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Feature;
    use proptest::prelude::*;

    fn schema() -> FeatureSchema {
        FeatureSchema::new(vec![
            Feature::continuous("f0", 0.0, 1.0),
            Feature::discrete("f1", 0.0, 1.0),
        ])
        .unwrap()
    }

    #[test]
    fn perfect_leak_is_zero() {
        assert_eq!(privacy_score(&[0.3, 1.0], &[0.3, 1.0], &schema()).unwrap(), 0.0);
    }

    #[test]
    fn mixed_example() {
        let s = privacy_score(&[0.2, 0.0], &[0.5, 1.0], &schema()).unwrap();
        assert!((s - 0.65).abs() < 1e-12);
    }

    #[test]
    fn label_accuracy_cases() {
        assert_eq!(label_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(label_accuracy(&[0, 2], &[1, 2]).unwrap(), 0.5);
        assert!(label_accuracy(&[], &[]).is_err());
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(a in proptest::collection::vec(0.0f64..=1.0, 2), b in proptest::collection::vec(0.0f64..=1.0, 2)) {
            let s = schema();
            let ab = privacy_score(&a, &b, &s).unwrap();
            let ba = privacy_score(&b, &a, &s).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
        }
    }
}
