//! Model families: the MLP classifier, the autoencoder anomaly detector and
//! the GAN pair.

pub mod autoencoder;
pub mod checkpoint;
pub mod classifier;
pub mod gan;
pub mod mlp;
pub mod params;

pub use autoencoder::AnomalyAutoencoder;
pub use classifier::{ce_loss_graph, MlpClassifier};
pub use gan::{gan_train, EpochDiagnostics, GanPair, GanProbe, GanTrainConfig, GanTrainer};
pub use mlp::{Activation, BoundParams, Mlp};
pub use params::{GradientVector, LayerParams, ModelParams};
