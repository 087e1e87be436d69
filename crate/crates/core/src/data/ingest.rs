//! CSV ingestion with schema-driven min/max normalization.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{normalize_clamped, Dataset};
use super::schema::FeatureSchema;
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestOptions {
    pub label_column: String,
    /// Known label values in class order. Empty means "all values seen,
    /// sorted"; otherwise an unlisted value is an error.
    pub classes: Vec<String>,
    pub benign_label: String,
    pub train_fraction: f64,
    /// Train rows kept after a stratified subsample.
    pub cap: usize,
    /// Take min/max from the training rows instead of the schema file.
    pub ranges_from_data: bool,
    pub seed: u64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            label_column: "label".into(),
            classes: Vec::new(),
            benign_label: "normal".into(),
            train_fraction: 0.7,
            cap: 20_000,
            ranges_from_data: true,
            seed: 0,
        }
    }
}

/// Train/test pair; test rows share the training normalization.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn ingest_csv(path: &Path, schema: &FeatureSchema, opts: &IngestOptions) -> Result<Ingested> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(file, path, schema, opts)
}

pub fn ingest_reader<R: std::io::Read>(
    reader: R,
    path: &Path,
    schema: &FeatureSchema,
    opts: &IngestOptions,
) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let label_at = col(&opts.label_column).ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        msg: format!("missing label column `{}`", opts.label_column),
    })?;
    let feature_at: Vec<usize> = schema
        .features
        .iter()
        .map(|f| {
            col(&f.name).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: format!("missing feature column `{}`", f.name),
            })
        })
        .collect::<Result<_>>()?;

    let dim = schema.dim();
    let mut raw = Vec::new();
    let mut raw_labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        for (f, &c) in schema.features.iter().zip(&feature_at) {
            let cell = rec.get(c).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("non-numeric value `{cell}` in column `{}`", f.name),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("non-finite value in column `{}`", f.name),
                });
            }
            raw.push(v);
        }
        raw_labels.push((line, rec.get(label_at).unwrap_or("").to_string()));
    }
    if raw_labels.is_empty() {
        return Err(Error::Empty(format!("{}: no data rows", path.display())));
    }

    let classes = if opts.classes.is_empty() {
        let mut c: Vec<String> = raw_labels.iter().map(|(_, l)| l.clone()).collect();
        c.sort();
        c.dedup();
        c
    } else {
        opts.classes.clone()
    };
    let labels: Vec<usize> = raw_labels
        .iter()
        .map(|(line, l)| {
            classes.iter().position(|c| c == l).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: *line,
                msg: format!("unknown label value `{l}`"),
            })
        })
        .collect::<Result<_>>()?;
    let benign = classes
        .iter()
        .position(|c| *c == opts.benign_label)
        .ok_or_else(|| Error::Invalid(format!("benign label `{}` not among classes", opts.benign_label)))?;

    // Split on original values first so the training rows alone fix the
    // normalization.
    let rows = labels.len();
    let mut order: Vec<usize> = (0..rows).collect();
    {
        use rand::seq::SliceRandom;
        order.shuffle(&mut stream(opts.seed, &[0x5917]));
    }
    let cut = (rows as f64 * opts.train_fraction).round() as usize;
    let (train_idx, test_idx) = order.split_at(cut);

    let schema = if opts.ranges_from_data {
        let mut mins = vec![f64::INFINITY; dim];
        let mut maxs = vec![f64::NEG_INFINITY; dim];
        for &r in train_idx {
            for j in 0..dim {
                let v = raw[r * dim + j];
                mins[j] = mins[j].min(v);
                maxs[j] = maxs[j].max(v);
            }
        }
        if train_idx.is_empty() {
            schema.clone()
        } else {
            schema.with_ranges(&mins, &maxs)
        }
    } else {
        schema.clone()
    };
    for f in &schema.features {
        if f.range() == 0.0 {
            log::warn!("column `{}` is constant; normalized to 0", f.name);
        }
    }
    let build = |idx: &[usize]| -> Result<Dataset> {
        let mut data = Vec::with_capacity(idx.len() * dim);
        for &r in idx {
            for (j, f) in schema.features.iter().enumerate() {
                data.push(normalize_clamped(f, raw[r * dim + j]));
            }
        }
        let x = Tensor::new(vec![idx.len(), dim], data)?;
        let l: Vec<usize> = idx.iter().map(|&r| labels[r]).collect();
        Dataset::new(x, &l, schema.clone(), classes.clone(), benign)
    };
    let mut train = build(train_idx)?;
    if train.rows() > opts.cap {
        train = train.stratified_cap(opts.cap, &mut stream(opts.seed, &[0xca9]));
    }
    Ok(Ingested {
        train,
        test: build(test_idx)?,
    })
}
