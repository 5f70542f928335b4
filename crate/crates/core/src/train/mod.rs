//! Adam optimisation of generator and discriminator, checkpoint files and
//! dataset evaluation.

mod adam;
mod checkpoint;
mod evaluate;
mod trainer;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{
    decode, encode, load_checkpoint, save_checkpoint, Checkpoint, DTYPE_F32, MAGIC, VERSION,
};
pub use evaluate::{evaluate, evaluate_with, load_dataset, patch_psnr, reconstruct, sigma_seed};
pub use trainer::{
    read_loss_log, train_to_dir, LossRecord, TrainConfig, Trainer, Variant, CSV_HEADER,
    DISC_SEED_OFFSET,
};
