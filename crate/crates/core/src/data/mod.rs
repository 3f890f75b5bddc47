//! Datasets, class-incremental streams and input encodings.

mod dataset;
mod events;
mod idx;
mod stream;
mod synthetic;
mod temporal;

pub use dataset::LabeledDataset;
pub use events::{integrate_events, Event, EventList};
pub use idx::{
    load_idx, load_mnist, parse_idx, write_idx_images, write_idx_labels, IDX_IMAGES_MAGIC,
    IDX_LABELS_MAGIC, MNIST_TEST_IMAGES, MNIST_TEST_LABELS, MNIST_TRAIN_IMAGES, MNIST_TRAIN_LABELS,
};
pub use stream::{split_class_incremental, StreamBatch, TaskStream};
pub use synthetic::{make_synthetic, SyntheticSpec};
pub use temporal::replicate_temporal;
