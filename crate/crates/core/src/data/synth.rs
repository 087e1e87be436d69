//! Deterministic synthetic datasets.
//!
//! [`synth_dataset`] draws Gaussian class clusters clipped to [0, 1];
//! [`kdd99_like`] builds a 41-feature, 23-class profile whose column names,
//! kinds and ranges follow the KDD Cup 1999 feature set.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::schema::{Feature, FeatureKind, FeatureSchema};
use crate::error::{Error, Result};
use crate::rng::{normal, stream, uniform};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub dim: usize,
    pub n_classes: usize,
    pub rows: usize,
    pub seed: u64,
    /// Per-feature cluster spread.
    pub sigma: f64,
    /// Per-feature offset between class centers, in units of `sigma`.
    pub separation: f64,
    /// Number of trailing columns that are discrete.
    pub discrete: usize,
    /// Integer levels of each discrete column.
    pub levels: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            dim: 8,
            n_classes: 2,
            rows: 1000,
            seed: 0,
            sigma: 0.1,
            separation: 3.0,
            discrete: 0,
            levels: 5,
        }
    }
}

pub fn synth_schema(dim: usize, discrete: usize, levels: usize) -> FeatureSchema {
    let first_discrete = dim - discrete.min(dim);
    let features = (0..dim)
        .map(|j| {
            if j >= first_discrete {
                Feature::discrete(format!("d{j}"), 0.0, levels.saturating_sub(1) as f64)
            } else {
                Feature::continuous(format!("c{j}"), 0.0, 1.0)
            }
        })
        .collect();
    FeatureSchema { features }
}

/// Class `c` is centered at `0.5 + s_c * separation * sigma / 2` with a
/// random sign pattern `s_c`; two-class data uses opposite patterns.
/// Rows cycle through the classes, so class sizes differ by at most one.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.dim == 0 || cfg.n_classes < 2 {
        return Err(Error::Invalid(format!(
            "synthetic data needs dim >= 1 and >= 2 classes, got {} and {}",
            cfg.dim, cfg.n_classes
        )));
    }
    if cfg.discrete > 0 && cfg.levels < 2 {
        return Err(Error::Invalid("discrete columns need >= 2 levels".into()));
    }
    let schema = synth_schema(cfg.dim, cfg.discrete, cfg.levels);
    let mut rng = stream(cfg.seed, &[0x5717]);
    let half = cfg.separation * cfg.sigma / 2.0;
    let mut signs: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_classes);
    for c in 0..cfg.n_classes {
        let s = if c == 1 && cfg.n_classes == 2 {
            signs[0].iter().map(|v: &f64| -v).collect()
        } else {
            (0..cfg.dim)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect()
        };
        signs.push(s);
    }
    let mut data = Vec::with_capacity(cfg.rows * cfg.dim);
    let mut labels = Vec::with_capacity(cfg.rows);
    for i in 0..cfg.rows {
        let c = i % cfg.n_classes;
        labels.push(c);
        for (j, f) in schema.features.iter().enumerate() {
            let v = (0.5 + signs[c][j] * half + cfg.sigma * normal(&mut rng)).clamp(0.0, 1.0);
            data.push(snap(f, v));
        }
    }
    let x = Tensor::new(vec![cfg.rows, cfg.dim], data)?;
    let names = (0..cfg.n_classes)
        .map(|c| {
            if c == 0 {
                "benign".to_string()
            } else {
                format!("attack{c}")
            }
        })
        .collect();
    Dataset::new(x, &labels, schema, names, 0)
}

fn snap(f: &Feature, v: f64) -> f64 {
    match f.kind {
        FeatureKind::Continuous => v,
        FeatureKind::Discrete => f.normalize(f.denormalize(v).round()),
    }
}

/// Column layout of the KDD Cup 1999 connection records.
pub const KDD99_FEATURES: [(&str, FeatureKind, f64); 41] = {
    use FeatureKind::{Continuous as C, Discrete as D};
    [
        ("duration", C, 58329.0),
        ("protocol_type", D, 2.0),
        ("service", D, 69.0),
        ("flag", D, 10.0),
        ("src_bytes", C, 693375640.0),
        ("dst_bytes", C, 5155468.0),
        ("land", D, 1.0),
        ("wrong_fragment", D, 3.0),
        ("urgent", D, 3.0),
        ("hot", D, 30.0),
        ("num_failed_logins", D, 5.0),
        ("logged_in", D, 1.0),
        ("num_compromised", D, 884.0),
        ("root_shell", D, 1.0),
        ("su_attempted", D, 2.0),
        ("num_root", D, 993.0),
        ("num_file_creations", D, 28.0),
        ("num_shells", D, 2.0),
        ("num_access_files", D, 8.0),
        ("num_outbound_cmds", D, 0.0),
        ("is_host_login", D, 1.0),
        ("is_guest_login", D, 1.0),
        ("count", D, 511.0),
        ("srv_count", D, 511.0),
        ("serror_rate", C, 1.0),
        ("srv_serror_rate", C, 1.0),
        ("rerror_rate", C, 1.0),
        ("srv_rerror_rate", C, 1.0),
        ("same_srv_rate", C, 1.0),
        ("diff_srv_rate", C, 1.0),
        ("srv_diff_host_rate", C, 1.0),
        ("dst_host_count", D, 255.0),
        ("dst_host_srv_count", D, 255.0),
        ("dst_host_same_srv_rate", C, 1.0),
        ("dst_host_diff_srv_rate", C, 1.0),
        ("dst_host_same_src_port_rate", C, 1.0),
        ("dst_host_srv_diff_host_rate", C, 1.0),
        ("dst_host_serror_rate", C, 1.0),
        ("dst_host_srv_serror_rate", C, 1.0),
        ("dst_host_rerror_rate", C, 1.0),
        ("dst_host_srv_rerror_rate", C, 1.0),
    ]
};

/// Class names with approximate relative frequencies of the 10% training
/// file, floored so every class has a few rows at desk scale.
pub const KDD99_CLASSES: [(&str, f64); 23] = [
    ("normal", 0.197),
    ("back", 0.0045),
    ("buffer_overflow", 0.002),
    ("ftp_write", 0.002),
    ("guess_passwd", 0.002),
    ("imap", 0.002),
    ("ipsweep", 0.0101),
    ("land", 0.002),
    ("loadmodule", 0.002),
    ("multihop", 0.002),
    ("neptune", 0.217),
    ("nmap", 0.0047),
    ("perl", 0.002),
    ("phf", 0.002),
    ("pod", 0.002),
    ("portsweep", 0.0084),
    ("rootkit", 0.002),
    ("satan", 0.0128),
    ("smurf", 0.518),
    ("spy", 0.002),
    ("teardrop", 0.002),
    ("warezclient", 0.0206),
    ("warezmaster", 0.002),
];

pub fn kdd99_schema() -> FeatureSchema {
    FeatureSchema {
        features: KDD99_FEATURES
            .iter()
            .map(|&(name, kind, max)| Feature {
                name: name.to_string(),
                kind,
                min: 0.0,
                max,
            })
            .collect(),
    }
}

/// How a KDD-style column is generated.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Profile {
    Constant,
    /// protocol, service, flag: a class-typical category.
    Categorical,
    Binary,
    /// Byte counts and duration: tiny next to the column maximum.
    HeavyTail,
    /// Rates: mostly exactly 0 or 1.
    Rate,
    /// Connection counts spread over the whole range.
    Count,
    /// Rare-event counters: usually zero.
    Sparse,
}

fn profile(f: &Feature) -> Profile {
    match f.name.as_str() {
        _ if f.range() == 0.0 => Profile::Constant,
        "protocol_type" | "service" | "flag" => Profile::Categorical,
        "duration" | "src_bytes" | "dst_bytes" => Profile::HeavyTail,
        "count" | "srv_count" | "dst_host_count" | "dst_host_srv_count" => Profile::Count,
        _ if f.kind == FeatureKind::Discrete && f.range() == 1.0 => Profile::Binary,
        _ if f.kind == FeatureKind::Discrete => Profile::Sparse,
        _ => Profile::Rate,
    }
}

/// Synthetic stand-in for a KDD99 subsample: 41 columns, 23 imbalanced
/// classes. Each class has a prototype row; rows jitter around it. Column
/// behaviour follows the real data after min/max scaling: byte counts sit
/// near zero, rates are mostly 0 or 1, rare counters are mostly zero.
pub fn kdd99_like(rows: usize, seed: u64) -> Result<Dataset> {
    let schema = kdd99_schema();
    let dim = schema.dim();
    let mut rng = stream(seed, &[0x4bdd]);
    let kinds: Vec<Profile> = schema.features.iter().map(profile).collect();
    let protos: Vec<Vec<f64>> = KDD99_CLASSES
        .iter()
        .map(|_| {
            schema
                .features
                .iter()
                .zip(&kinds)
                .map(|(f, k)| match k {
                    Profile::Constant => 0.0,
                    Profile::Categorical => rng.random_range(0..=f.range() as usize) as f64 / f.range(),
                    Profile::Binary => f64::from(u8::from(rng.random::<f64>() < 0.3)),
                    Profile::HeavyTail => (-9.0 + 2.0 * normal(&mut rng)).exp().min(1.0),
                    Profile::Rate => match rng.random::<f64>() {
                        u if u < 0.45 => 0.0,
                        u if u < 0.9 => 1.0,
                        _ => uniform(&mut rng, 0.0, 1.0),
                    },
                    Profile::Count => uniform(&mut rng, 0.0, 1.0),
                    Profile::Sparse => {
                        if rng.random::<f64>() < 0.8 {
                            0.0
                        } else {
                            uniform(&mut rng, 0.0, 0.3)
                        }
                    }
                })
                .collect()
        })
        .collect();
    let weights: Vec<f64> = KDD99_CLASSES.iter().map(|c| c.1).collect();
    let labels = allocate(rows, &weights);
    let mut data = Vec::with_capacity(rows * dim);
    for &c in &labels {
        for (j, (f, k)) in schema.features.iter().zip(&kinds).enumerate() {
            let p = protos[c][j];
            let v = match k {
                Profile::Constant => 0.0,
                Profile::Categorical => {
                    if rng.random::<f64>() < 0.9 {
                        p
                    } else {
                        rng.random_range(0..=f.range() as usize) as f64 / f.range()
                    }
                }
                Profile::Binary => {
                    let flip = rng.random::<f64>() < 0.05;
                    f64::from(u8::from((p >= 0.5) ^ flip))
                }
                Profile::HeavyTail => (p * (0.5 * normal(&mut rng)).exp()).min(1.0),
                Profile::Rate if p == 0.0 || p == 1.0 => {
                    if rng.random::<f64>() < 0.9 {
                        p
                    } else {
                        (p + 0.1 * normal(&mut rng)).clamp(0.0, 1.0)
                    }
                }
                Profile::Sparse if p == 0.0 => {
                    if rng.random::<f64>() < 0.95 {
                        0.0
                    } else {
                        uniform(&mut rng, 0.0, 0.2)
                    }
                }
                _ => (p + 0.05 * normal(&mut rng)).clamp(0.0, 1.0),
            };
            data.push(snap(f, v));
        }
    }
    let x = Tensor::new(vec![rows, dim], data)?;
    let names = KDD99_CLASSES.iter().map(|c| c.0.to_string()).collect();
    Dataset::new(x, &labels, schema, names, 0)
}

/// Deterministic label sequence with class counts proportional to
/// `weights`, every class present when `rows >= weights.len()`.
fn allocate(rows: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let mut counts: Vec<usize> = weights
        .iter()
        .map(|w| ((w / total) * rows as f64).floor().max(1.0) as usize)
        .collect();
    // Trim or pad the largest class to hit `rows` exactly.
    let big = (0..weights.len())
        .max_by(|&a, &b| weights[a].total_cmp(&weights[b]))
        .unwrap_or(0);
    let assigned: usize = counts.iter().sum();
    if assigned > rows {
        counts[big] = counts[big].saturating_sub(assigned - rows);
    } else {
        counts[big] += rows - assigned;
    }
    // Round-robin over classes with remaining quota.
    let mut out = Vec::with_capacity(rows);
    let mut left = counts.clone();
    while out.len() < rows {
        let before = out.len();
        for (c, l) in left.iter_mut().enumerate() {
            if *l > 0 && out.len() < rows {
                out.push(c);
                *l -= 1;
            }
        }
        if out.len() == before {
            break;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_contract() {
        let cfg = SynthConfig {
            dim: 6,
            rows: 50,
            discrete: 2,
            ..Default::default()
        };
        let d = synth_dataset(&cfg).unwrap();
        assert_eq!(d.x.shape(), &[50, 6]);
        assert_eq!(d.y.shape(), &[50, 2]);
        assert_eq!(d.schema.discrete_indices(), vec![4, 5]);
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = SynthConfig {
            seed: 11,
            ..Default::default()
        };
        let a = serde_json::to_vec(&synth_dataset(&cfg).unwrap()).unwrap();
        let b = serde_json::to_vec(&synth_dataset(&cfg).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn discrete_columns_on_grid() {
        let cfg = SynthConfig {
            discrete: 3,
            levels: 4,
            rows: 100,
            ..Default::default()
        };
        let d = synth_dataset(&cfg).unwrap();
        for i in 0..d.rows() {
            for &j in &d.schema.discrete_indices() {
                let v = d.x.row(i)[j] * 3.0;
                assert!((v - v.round()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kdd_profile_shape() {
        let d = kdd99_like(2000, 1).unwrap();
        assert_eq!(d.dim(), 41);
        assert_eq!(d.n_classes(), 23);
        assert!(d.class_index().iter().all(|c| !c.is_empty()));
        assert_eq!(d.class_names[d.benign_class], "normal");
    }

    #[test]
    fn allocation_is_exact() {
        let l = allocate(1000, &[0.5, 0.3, 0.2]);
        assert_eq!(l.len(), 1000);
        assert_eq!(l.iter().filter(|&&c| c == 0).count(), 500);
    }
}
