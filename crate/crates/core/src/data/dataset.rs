//! Normalized feature matrix with one-hot labels.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::schema::{Feature, FeatureSchema};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// `[rows, dim]`, every value in [0, 1].
    pub x: Tensor,
    /// `[rows, n_classes]`, one-hot.
    pub y: Tensor,
    /// Ranges used to normalize `x`.
    pub schema: FeatureSchema,
    pub class_names: Vec<String>,
    pub benign_class: usize,
}

impl Dataset {
    pub fn new(
        x: Tensor,
        labels: &[usize],
        schema: FeatureSchema,
        class_names: Vec<String>,
        benign_class: usize,
    ) -> Result<Self> {
        let n = class_names.len();
        if x.shape().len() != 2 || x.cols() != schema.dim() || x.rows() != labels.len() {
            return Err(Error::Shape {
                op: "dataset",
                lhs: x.shape().to_vec(),
                rhs: vec![labels.len(), schema.dim()],
            });
        }
        if benign_class >= n {
            return Err(Error::Invalid(format!(
                "benign class {benign_class} out of {n} classes"
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
            return Err(Error::Invalid(format!("label {bad} out of {n} classes")));
        }
        if let Some(i) = x.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Invalid(format!(
                "feature value {} at {i} outside [0, 1]",
                x.data()[i]
            )));
        }
        Ok(Dataset {
            y: one_hot(labels, n),
            x,
            schema,
            class_names,
            benign_class,
        })
    }

    pub fn rows(&self) -> usize {
        self.x.rows()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.y.argmax_rows()
    }

    pub fn attack_classes(&self) -> Vec<usize> {
        (0..self.n_classes()).filter(|&c| c != self.benign_class).collect()
    }

    /// Row indices of each class.
    pub fn class_index(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_classes()];
        for (i, l) in self.labels().into_iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            y: self.y.select_rows(idx),
            schema: self.schema.clone(),
            class_names: self.class_names.clone(),
            benign_class: self.benign_class,
        }
    }

    /// Seeded shuffle then split, `train_fraction` of rows first.
    pub fn split(&self, train_fraction: f64, rng: &mut impl Rng) -> (Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.rows()).collect();
        idx.shuffle(rng);
        let cut = (self.rows() as f64 * train_fraction).round() as usize;
        (self.subset(&idx[..cut]), self.subset(&idx[cut..]))
    }

    /// Keeps at most `cap` rows, sampling each class in proportion to its
    /// size (largest remainders get the leftover rows). Order of the kept
    /// rows follows the original order.
    pub fn stratified_cap(&self, cap: usize, rng: &mut impl Rng) -> Dataset {
        if self.rows() <= cap {
            return self.clone();
        }
        let classes = self.class_index();
        let total = self.rows() as f64;
        let mut quota: Vec<(usize, f64)> = classes
            .iter()
            .map(|c| {
                let exact = c.len() as f64 * cap as f64 / total;
                (exact.floor() as usize, exact.fract())
            })
            .collect();
        let mut left = cap - quota.iter().map(|q| q.0).sum::<usize>();
        let mut order: Vec<usize> = (0..quota.len()).collect();
        order.sort_by(|&a, &b| quota[b].1.total_cmp(&quota[a].1).then(a.cmp(&b)));
        for c in order {
            if left == 0 {
                break;
            }
            if quota[c].0 < classes[c].len() {
                quota[c].0 += 1;
                left -= 1;
            }
        }
        let mut keep = Vec::with_capacity(cap);
        for (c, rows) in classes.iter().enumerate() {
            let mut r = rows.clone();
            r.shuffle(rng);
            keep.extend_from_slice(&r[..quota[c].0]);
        }
        keep.sort_unstable();
        self.subset(&keep)
    }

    /// Original-unit values of every row.
    pub fn original(&self) -> Tensor {
        let mut x = self.x.clone();
        let d = self.dim().max(1);
        for row in x.data_mut().chunks_mut(d) {
            for (v, f) in row.iter_mut().zip(&self.schema.features) {
                *v = f.denormalize(*v);
            }
        }
        x
    }

    /// Re-normalizes with min/max computed from this dataset's own rows.
    pub fn renormalized(&self) -> Dataset {
        if self.rows() == 0 {
            return self.clone();
        }
        let orig = self.original();
        let d = self.dim();
        let mut mins = vec![f64::INFINITY; d];
        let mut maxs = vec![f64::NEG_INFINITY; d];
        for row in orig.data().chunks(d) {
            for j in 0..d {
                mins[j] = mins[j].min(row[j]);
                maxs[j] = maxs[j].max(row[j]);
            }
        }
        let schema = self.schema.with_ranges(&mins, &maxs);
        self.with_schema(&orig, schema)
    }

    /// Re-normalizes into the ranges of `schema`, clamping to [0, 1].
    pub fn normalized_like(&self, schema: &FeatureSchema) -> Dataset {
        self.with_schema(&self.original(), schema.clone())
    }

    fn with_schema(&self, orig: &Tensor, schema: FeatureSchema) -> Dataset {
        let d = self.dim().max(1);
        let mut x = orig.clone();
        for row in x.data_mut().chunks_mut(d) {
            for (v, f) in row.iter_mut().zip(&schema.features) {
                *v = normalize_clamped(f, *v);
            }
        }
        Dataset {
            x,
            y: self.y.clone(),
            schema,
            class_names: self.class_names.clone(),
            benign_class: self.benign_class,
        }
    }
}

pub(crate) fn normalize_clamped(f: &Feature, v: f64) -> f64 {
    f.normalize(v).clamp(0.0, 1.0)
}

pub fn one_hot(labels: &[usize], n: usize) -> Tensor {
    let mut t = Tensor::zeros(&[labels.len(), n]);
    for (i, &l) in labels.iter().enumerate() {
        t.row_mut(i)[l] = 1.0;
    }
    t
}
