//! Client partitioning: iid shards or the benign-share plus p-attack-types
//! non-iid scheme.

use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PartitionMode {
    Iid,
    /// `attack_types = None` picks half the attack classes, rounded up.
    NonIid {
        attack_types: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub mode: PartitionMode,
    pub rows: usize,
    /// Row indices per client.
    pub clients: Vec<Vec<usize>>,
    /// Attack classes given to each client (empty in iid mode).
    pub attack_types: Vec<Vec<usize>>,
}

impl PartitionPlan {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }

    pub fn shards(&self, data: &Dataset) -> Vec<Dataset> {
        self.clients.iter().map(|idx| data.subset(idx)).collect()
    }
}

/// Splits `items` into `n` contiguous chunks whose sizes differ by at most
/// one; the first `len % n` chunks get the extra row.
fn even_chunks(items: &[usize], n: usize) -> Vec<Vec<usize>> {
    let (q, r) = (items.len() / n, items.len() % n);
    let mut out = Vec::with_capacity(n);
    let mut at = 0;
    for k in 0..n {
        let len = q + usize::from(k < r);
        out.push(items[at..at + len].to_vec());
        at += len;
    }
    out
}

pub fn partition(data: &Dataset, clients: usize, mode: PartitionMode, rng: &mut impl Rng) -> Result<PartitionPlan> {
    if clients == 0 {
        return Err(Error::Invalid("need at least one client".into()));
    }
    if clients > data.rows() {
        return Err(Error::Invalid(format!("{clients} clients exceed {} rows", data.rows())));
    }
    match mode {
        PartitionMode::Iid => {
            let mut idx: Vec<usize> = (0..data.rows()).collect();
            idx.shuffle(rng);
            let mut shards = even_chunks(&idx, clients);
            shards.iter_mut().for_each(|s| s.sort_unstable());
            Ok(PartitionPlan {
                mode,
                rows: data.rows(),
                clients: shards,
                attack_types: vec![Vec::new(); clients],
            })
        }
        PartitionMode::NonIid { attack_types } => {
            let by_class = data.class_index();
            let attacks: Vec<usize> = data
                .attack_classes()
                .into_iter()
                .filter(|&c| !by_class[c].is_empty())
                .collect();
            if attacks.is_empty() {
                return Err(Error::Invalid(
                    "non-iid partition needs at least one attack class".into(),
                ));
            }
            let p = attack_types.unwrap_or(attacks.len().div_ceil(2));
            if p == 0 || p > attacks.len() {
                return Err(Error::Invalid(format!(
                    "attack types per client must be in 1..={}, got {p}",
                    attacks.len()
                )));
            }
            let mut benign = by_class[data.benign_class].clone();
            benign.shuffle(rng);
            let mut shards = even_chunks(&benign, clients);
            let type_chunks: Vec<Vec<Vec<usize>>> = (0..data.n_classes())
                .map(|c| {
                    let mut rows = by_class[c].clone();
                    rows.shuffle(rng);
                    even_chunks(&rows, clients)
                })
                .collect();
            let mut chosen = Vec::with_capacity(clients);
            for (k, shard) in shards.iter_mut().enumerate() {
                let mut picks: Vec<usize> = attacks.choose_multiple(rng, p).copied().collect();
                picks.sort_unstable();
                for &t in &picks {
                    shard.extend_from_slice(&type_chunks[t][k]);
                }
                shard.sort_unstable();
                chosen.push(picks);
            }
            Ok(PartitionPlan {
                mode,
                rows: data.rows(),
                clients: shards,
                attack_types: chosen,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_dataset, SynthConfig};
    use crate::rng::stream;

    fn data(rows: usize, classes: usize) -> Dataset {
        synth_dataset(&SynthConfig {
            rows,
            n_classes: classes,
            dim: 3,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn single_client_gets_everything() {
        let d = data(40, 2);
        let p = partition(&d, 1, PartitionMode::Iid, &mut stream(0, &[])).unwrap();
        assert_eq!(p.clients[0], (0..40).collect::<Vec<_>>());
    }

    #[test]
    fn iid_equal_shards() {
        let d = data(1000, 2);
        let p = partition(&d, 10, PartitionMode::Iid, &mut stream(0, &[])).unwrap();
        assert!(p.clients.iter().all(|s| s.len() == 100));
    }

    #[test]
    fn too_many_clients() {
        let d = data(5, 2);
        assert!(partition(&d, 6, PartitionMode::Iid, &mut stream(0, &[])).is_err());
    }

    #[test]
    fn non_iid_needs_attacks() {
        let mut d = data(10, 2);
        d.y = crate::data::dataset::one_hot(&[0; 10], 2);
        let m = PartitionMode::NonIid { attack_types: None };
        assert!(partition(&d, 2, m, &mut stream(0, &[])).is_err());
    }

    #[test]
    fn json_roundtrip() {
        let d = data(30, 4);
        let p = partition(
            &d,
            3,
            PartitionMode::NonIid { attack_types: Some(2) },
            &mut stream(0, &[]),
        )
        .unwrap();
        let back: PartitionPlan = serde_json::from_str(&p.to_json().unwrap()).unwrap();
        assert_eq!(back, p);
    }
}
