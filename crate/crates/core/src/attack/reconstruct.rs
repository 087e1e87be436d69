//! Extraction first, inversion as fallback.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::extract::{extract_single, Extraction, LeakedUpdate};
use super::invert::{invert_batch, invert_labels, InversionConfig};
use crate::data::{canonicalize, FeatureSchema};
use crate::error::{Error, Result};
use crate::nn::MlpClassifier;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Extraction,
    Inversion,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Extraction => "extraction",
            Method::Inversion => "inversion",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    /// Canonicalized rows.
    pub x: Tensor,
    pub y: Tensor,
    pub labels: Vec<usize>,
    pub method: Method,
    /// Final gradient-matching objective of the label (or full) inversion.
    pub objective: f64,
}

/// Tries closed-form extraction when the update claims a single row and
/// falls back to inversion otherwise. Labels always come from inversion;
/// after a successful extraction only the labels are optimized.
pub fn reconstruct(
    update: &LeakedUpdate,
    model: &MlpClassifier,
    cfg: &InversionConfig,
    schema: &FeatureSchema,
    rng: &mut impl Rng,
) -> Result<Reconstruction> {
    let extraction_note = if update.batch_hint <= 1 {
        match extract_single(update)? {
            Extraction::Recovered(x) => {
                let inv = invert_labels(update, model, cfg, schema, &x, rng)?;
                let canon = Tensor::new(x.shape().to_vec(), canonicalize(x.data(), schema))?;
                return Ok(Reconstruction {
                    x: canon,
                    y: inv.y,
                    labels: inv.labels,
                    method: Method::Extraction,
                    objective: inv.objective,
                });
            }
            Extraction::Singular { det } => format!("singular Gram term (det {det:e})"),
        }
    } else {
        format!("batch of {} rows", update.batch_hint)
    };
    match invert_batch(update, update.batch_hint.max(1), model, cfg, schema, rng) {
        Ok(inv) => Ok(Reconstruction {
            x: inv.x,
            y: inv.y,
            labels: inv.labels,
            method: Method::Inversion,
            objective: inv.objective,
        }),
        Err(e @ Error::NonFinite { .. }) => Err(Error::ReconstructionFailed {
            extraction: extraction_note,
            inversion: e.to_string(),
        }),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructedRow {
    pub probe: usize,
    pub row: usize,
    pub method: Method,
    pub objective: f64,
    pub label: usize,
    pub x: Vec<f64>,
}

impl ReconstructedRow {
    pub fn from_reconstruction(probe: usize, r: &Reconstruction) -> Vec<ReconstructedRow> {
        (0..r.x.rows())
            .map(|i| ReconstructedRow {
                probe,
                row: i,
                method: r.method,
                objective: r.objective,
                label: r.labels[i],
                x: r.x.row(i).to_vec(),
            })
            .collect()
    }
}

/// Writes rows as CSV with columns `probe,row,method,objective,label,x0..`.
pub fn write_reconstructions_csv(w: impl Write, dim: usize, rows: &[ReconstructedRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = ["probe", "row", "method", "objective", "label"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..dim).map(|j| format!("x{j}")));
    out.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.probe.to_string(),
            r.row.to_string(),
            r.method.as_str().to_string(),
            format!("{:e}", r.objective),
            r.label.to_string(),
        ];
        rec.extend(r.x.iter().map(|v| v.to_string()));
        out.write_record(&rec)?;
    }
    out.flush().map_err(|e| Error::io("<reconstructions>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::synth_schema;
    use crate::rng::{stream, uniform};

    fn leak(batch: usize) -> (MlpClassifier, Tensor, LeakedUpdate) {
        let mut rng = stream(8, &[]);
        let m = MlpClassifier::new(4, 3, &mut rng).unwrap();
        let x = Tensor::matrix(batch, 4, (0..batch * 4).map(|_| uniform(&mut rng, 0.0, 1.0)).collect()).unwrap();
        let y = crate::data::one_hot(&(0..batch).map(|i| (i + 1) % 3).collect::<Vec<_>>(), 3);
        let gradient = m.gradient(&x, &y).unwrap();
        (
            m,
            x,
            LeakedUpdate {
                gradient,
                batch_hint: batch,
            },
        )
    }

    #[test]
    fn single_row_uses_extraction() {
        let (m, x, u) = leak(1);
        let r = reconstruct(
            &u,
            &m,
            &InversionConfig::default(),
            &synth_schema(4, 0, 2),
            &mut stream(1, &[]),
        )
        .unwrap();
        assert_eq!(r.method, Method::Extraction);
        assert!(r.x.sub(&x).unwrap().max_abs() < 1e-6);
        assert_eq!(r.labels, vec![1]);
    }

    #[test]
    fn batch_uses_inversion() {
        let (m, _, u) = leak(10);
        let cfg = InversionConfig {
            steps: 5,
            restarts: 1,
            ..Default::default()
        };
        let r = reconstruct(&u, &m, &cfg, &synth_schema(4, 0, 2), &mut stream(1, &[])).unwrap();
        assert_eq!(r.method, Method::Inversion);
        assert_eq!(r.x.rows(), 10);
    }

    #[test]
    fn vanished_gradient_falls_back() {
        let (m, _, mut u) = leak(1);
        u.gradient = u.gradient.scale(1e-15 / u.gradient.max_abs());
        let cfg = InversionConfig {
            steps: 5,
            restarts: 1,
            ..Default::default()
        };
        let r = reconstruct(&u, &m, &cfg, &synth_schema(4, 0, 2), &mut stream(1, &[])).unwrap();
        assert_eq!(r.method, Method::Inversion);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let (m, _, u) = leak(1);
        let r = reconstruct(
            &u,
            &m,
            &InversionConfig::default(),
            &synth_schema(4, 0, 2),
            &mut stream(1, &[]),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_reconstructions_csv(&mut buf, 4, &ReconstructedRow::from_reconstruction(0, &r)).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("probe,row,method,objective,label,x0,x1,x2,x3\n0,0,extraction,"));
    }
}
