//! Losses, the optimizer and the two-phase training protocol.

pub mod losses;
pub mod optim;
pub mod trainer;

pub use losses::{
    discriminator_loss, generator_loss, pixel_loss, realism_loss, Objective, PROB_EPS,
};
pub use optim::Adam;
pub use trainer::{
    adversarial_train, pretrain_generator, AdversarialTrainer, Batch, LossLog, LossReport,
    PretrainReport, TrainConfig, WindowSampler,
};
