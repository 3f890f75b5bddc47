//! Bit-packed latent storage with reservoir retention.

mod bitpack;
mod buffer;
mod memory;
mod reservoir;

pub use bitpack::{pack_batch, pack_bits, pack_tensor, unpack_batch, unpack_bits, BitPackedSample};
pub use buffer::{ReplayBuffer, FORMAT_VERSION, MAGIC};
pub use memory::CompressionReport;
pub use reservoir::Reservoir;
