//! Per-feature kind and original-space range.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Continuous,
    Discrete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
    pub min: f64,
    pub max: f64,
}

impl Feature {
    pub fn continuous(name: impl Into<String>, min: f64, max: f64) -> Self {
        Feature {
            name: name.into(),
            kind: FeatureKind::Continuous,
            min,
            max,
        }
    }

    pub fn discrete(name: impl Into<String>, min: f64, max: f64) -> Self {
        Feature {
            name: name.into(),
            kind: FeatureKind::Discrete,
            min,
            max,
        }
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }

    /// Min/max scaling to [0, 1]; a constant column maps to 0.
    pub fn normalize(&self, v: f64) -> f64 {
        let r = self.range();
        if r > 0.0 {
            (v - self.min) / r
        } else {
            0.0
        }
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        self.min + v * self.range()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<Feature>,
}

impl FeatureSchema {
    pub fn new(features: Vec<Feature>) -> Result<Self> {
        let s = FeatureSchema { features };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        for f in &self.features {
            if !(f.max >= f.min) {
                errs.push(format!("feature `{}`: max {} < min {}", f.name, f.max, f.min));
            }
            if f.kind == FeatureKind::Discrete && (f.min.fract() != 0.0 || f.max.fract() != 0.0) {
                errs.push(format!("discrete feature `{}` has non-integer range", f.name));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn continuous_indices(&self) -> Vec<usize> {
        self.indices_of(FeatureKind::Continuous)
    }

    pub fn discrete_indices(&self) -> Vec<usize> {
        self.indices_of(FeatureKind::Discrete)
    }

    fn indices_of(&self, kind: FeatureKind) -> Vec<usize> {
        self.features
            .iter()
            .enumerate()
            .filter(|(_, f)| f.kind == kind)
            .map(|(i, _)| i)
            .collect()
    }

    /// Parses `name = kind,min,max` lines; `#` starts a comment.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut features = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let perr = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg,
            };
            let (name, rest) = line
                .split_once('=')
                .ok_or_else(|| perr("expected `name = kind,min,max`".into()))?;
            let parts: Vec<&str> = rest.split(',').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(perr(format!("expected 3 fields, got {}", parts.len())));
            }
            let kind = match parts[0] {
                "continuous" => FeatureKind::Continuous,
                "discrete" => FeatureKind::Discrete,
                k => return Err(perr(format!("unknown feature kind `{k}`"))),
            };
            let num = |s: &str| s.parse::<f64>().map_err(|_| perr(format!("`{s}` is not a number")));
            features.push(Feature {
                name: name.trim().to_string(),
                kind,
                min: num(parts[1])?,
                max: num(parts[2])?,
            });
        }
        FeatureSchema::new(features)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for f in &self.features {
            let kind = match f.kind {
                FeatureKind::Continuous => "continuous",
                FeatureKind::Discrete => "discrete",
            };
            let _ = writeln!(s, "{} = {},{},{}", f.name, kind, f.min, f.max);
        }
        s
    }

    /// Same kinds and names with ranges replaced by the given per-column
    /// bounds. Discrete bounds are widened to integers.
    pub fn with_ranges(&self, mins: &[f64], maxs: &[f64]) -> FeatureSchema {
        let features = self
            .features
            .iter()
            .zip(mins.iter().zip(maxs))
            .map(|(f, (&lo, &hi))| {
                let (lo, hi) = match f.kind {
                    FeatureKind::Discrete => (lo.floor(), hi.ceil()),
                    FeatureKind::Continuous => (lo, hi),
                };
                Feature {
                    name: f.name.clone(),
                    kind: f.kind,
                    min: lo,
                    max: hi,
                }
            })
            .collect();
        FeatureSchema { features }
    }
}

/// Maps a normalized row back to original feature units.
pub fn project_to_original(x: &[f64], schema: &FeatureSchema) -> Vec<f64> {
    x.iter().zip(&schema.features).map(|(&v, f)| f.denormalize(v)).collect()
}

/// Clamps to [0, 1] and snaps discrete features to the nearest legal
/// integer before normalizing again.
pub fn canonicalize(x: &[f64], schema: &FeatureSchema) -> Vec<f64> {
    x.iter()
        .zip(&schema.features)
        .map(|(&v, f)| {
            let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
            match f.kind {
                FeatureKind::Continuous => v,
                FeatureKind::Discrete => {
                    let orig = f.denormalize(v).round().clamp(f.min, f.max);
                    f.normalize(orig)
                }
            }
        })
        .collect()
}
