pub mod data;
pub mod losses;
pub mod physics_op;
pub mod trainer;

pub use data::{sample_paired, sample_unpaired, scale_pk, Crop, Dataset, PairedBatch, Subject, UnpairedBatch};
pub use losses::{
    cycle_loss, cycle_terms, lsgan_discriminator_loss, lsgan_generator_loss, lsgan_losses, physics_loss,
    supervised_loss, CycleTerms, LsganLosses,
};
pub use physics_op::TkForward;
pub use trainer::{
    epoch_means, infer, infer_from_checkpoint, load_generator, read_loss_csv, train, train_in_dir, write_loss_csv,
    Inference, LossRecord, TrainConfig, TrainMode, TrainOutcome, Trainer,
};
