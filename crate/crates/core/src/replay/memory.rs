use serde::{Deserialize, Serialize};

/// Payload sizes of a buffer of binary latents relative to a wider encoding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub elements: u64,
    pub payload_bits: u64,
    pub payload_bytes: u64,
    pub reference_bits: u64,
    pub reference_bytes: u64,
    /// `reference_bits / payload_bits`, i.e. `reference_precision` for 1-bit storage.
    pub ratio: f64,
}

impl CompressionReport {
    pub fn new(elements: u64, payload_bytes: u64, reference_precision_bits: u32) -> Self {
        let reference_bits = elements * u64::from(reference_precision_bits);
        Self {
            elements,
            payload_bits: elements,
            payload_bytes,
            reference_bits,
            reference_bytes: reference_bits.div_ceil(8),
            ratio: if elements == 0 {
                0.0
            } else {
                reference_bits as f64 / elements as f64
            },
        }
    }
}
