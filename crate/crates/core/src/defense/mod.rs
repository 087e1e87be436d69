//! Client-side defenses: the FedDef input transformation, Laplace noise,
//! gradient pruning and sample mixing.

pub(crate) mod feddef;
mod gradient;
mod mix;

use serde::{Deserialize, Serialize};

pub use feddef::{feddef_objective_value, feddef_transform, FedDefConfig, FedDefOutput};
pub use gradient::{dp_perturb, dp_perturb_flat, gp_prune, gp_prune_flat, DpConfig, NoiseReading};
pub use mix::{mix_transform, MixConfig};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DefenseKind {
    #[default]
    None,
    Feddef(FedDefConfig),
    Dp(DpConfig),
    Gp {
        #[serde(default = "default_gp_rate")]
        rate: f64,
    },
    Mix(MixConfig),
}

fn default_gp_rate() -> f64 {
    0.99
}

impl DefenseKind {
    /// Short name used in report rows.
    pub fn label(&self) -> String {
        match self {
            DefenseKind::None => "none".into(),
            DefenseKind::Feddef(c) => format!("feddef(alpha={})", c.alpha),
            DefenseKind::Dp(c) => format!("dp(var={})", c.variance),
            DefenseKind::Gp { rate } => format!("gp(rate={rate})"),
            DefenseKind::Mix(c) => format!("mix(k={})", c.k),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(vec![m]));
        match self {
            DefenseKind::None => Ok(()),
            DefenseKind::Feddef(c) => c.validate(),
            DefenseKind::Dp(c) if !(c.variance > 0.0) => err(format!("dp variance must be > 0, got {}", c.variance)),
            DefenseKind::Dp(_) => Ok(()),
            DefenseKind::Gp { rate } if !(0.0..1.0).contains(rate) => {
                err(format!("gp rate must be in [0, 1), got {rate}"))
            }
            DefenseKind::Gp { .. } => Ok(()),
            DefenseKind::Mix(c) if c.k == 0 || !(0.0..=1.0).contains(&c.flip_prob) => err(format!(
                "mix needs k >= 1 and flip_prob in [0, 1], got {} and {}",
                c.k, c.flip_prob
            )),
            DefenseKind::Mix(_) => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serde_shapes() {
        let d: DefenseKind = serde_json::from_str(r#"{"kind":"gp"}"#).unwrap();
        assert_eq!(d, DefenseKind::Gp { rate: 0.99 });
        let f: DefenseKind = serde_json::from_str(r#"{"kind":"feddef","alpha":0.5}"#).unwrap();
        match f {
            DefenseKind::Feddef(c) => {
                assert_eq!(c.alpha, 0.5);
                assert_eq!(c.steps, 40);
            }
            _ => panic!(),
        }
        assert!(DefenseKind::Gp { rate: 1.0 }.validate().is_err());
    }
}
