//! Speech-conditioned face generation: AdaIN generator, projection
//! discriminator with relativistic identity scores, and training.

mod discriminator;
mod generator;
mod latent;
mod model;
mod train;

pub use discriminator::{
    d_loss, g_loss, nonsaturating_loss, r1_penalty, r1_penalty_with_grads, relid_scores, Condition, Discriminator, RelidScores,
    PSI_PREFIX,
};
pub use generator::{adain, stack_rows, Generator, GeneratorArch, Z_DIM};
pub use latent::{sample_latent, truncate_latent};
pub use model::{DiscriminatorArch, GanModel, DISCRIMINATOR_KIND, GENERATOR_KIND, GEN_PREFIX};
pub use train::{train_gan, GanArchs, GanLogEntry, GanOutcome, GanTrainConfig, GradNorms, GAN_LOG, SAMPLES_DIR};
