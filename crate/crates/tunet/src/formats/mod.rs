//! On-disk formats: image tensors, dataset directories, checkpoints and CSV
//! reports.

mod bytes;
pub mod checkpoint;
pub mod dataset;
pub mod image;
pub mod tables;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use dataset::{read_dataset, write_dataset, DatasetDir};
pub use image::{read_image, write_image};
