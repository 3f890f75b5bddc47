use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{SpikeTensor, Tensor};

/// One replay entry: spikes packed eight per byte, least significant bit first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitPackedSample {
    pub bits: Vec<u8>,
    pub bit_count: usize,
    pub shape: Vec<usize>,
    pub label: usize,
}

impl BitPackedSample {
    pub fn payload_bytes(&self) -> usize {
        self.bits.len()
    }

    /// Serialized per-entry overhead: length prefix, label, rank, extents, bit count.
    pub fn header_bytes(&self) -> usize {
        4 + 4 + 4 + 4 * self.shape.len() + 8
    }

    pub fn validate(&self) -> Result<()> {
        let expected: usize = self.shape.iter().product();
        if expected != self.bit_count {
            return Err(Error::Format {
                what: "packed sample",
                detail: format!(
                    "bit count {} does not match shape {:?}",
                    self.bit_count, self.shape
                ),
            });
        }
        if self.bits.len() != self.bit_count.div_ceil(8) {
            return Err(Error::Format {
                what: "packed sample",
                detail: format!(
                    "{} payload bytes for {} bits",
                    self.bits.len(),
                    self.bit_count
                ),
            });
        }
        let used = self.bit_count % 8;
        if used != 0 && self.bits.last().is_some_and(|&b| b >> used != 0) {
            return Err(Error::Format {
                what: "packed sample",
                detail: "non-zero padding bits".into(),
            });
        }
        Ok(())
    }
}

pub fn pack_bits(z: &SpikeTensor, label: usize) -> BitPackedSample {
    let mut bits = vec![0u8; z.len().div_ceil(8)];
    for (i, on) in z.bits().enumerate() {
        if on {
            bits[i / 8] |= 1 << (i % 8);
        }
    }
    BitPackedSample {
        bits,
        bit_count: z.len(),
        shape: z.shape().to_vec(),
        label,
    }
}

/// Packs a real tensor, rejecting any element that is not exactly 0 or 1.
pub fn pack_tensor(z: &Tensor, label: usize) -> Result<BitPackedSample> {
    let spikes = SpikeTensor::try_from(z.clone())?;
    Ok(pack_bits(&spikes, label))
}

pub fn unpack_bits(s: &BitPackedSample) -> Result<SpikeTensor> {
    s.validate()?;
    let data = (0..s.bit_count)
        .map(|i| f64::from((s.bits[i / 8] >> (i % 8)) & 1))
        .collect();
    Ok(SpikeTensor::from_tensor_unchecked(Tensor::new(
        s.shape.clone(),
        data,
    )?))
}

/// Packs every sample of a time-major `[T, N, ...]` spike batch.
pub fn pack_batch(z: &SpikeTensor, labels: &[usize]) -> Result<Vec<BitPackedSample>> {
    let shape = z.shape();
    if shape.len() < 2 || shape[1] != labels.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![0, labels.len()],
            actual: shape.to_vec(),
        });
    }
    let per_sample = z.as_tensor().swap_leading_axes();
    let mut item_shape = vec![shape[0]];
    item_shape.extend_from_slice(&shape[2..]);
    labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let t = Tensor::new(item_shape.clone(), per_sample.row(i).to_vec())?;
            Ok(pack_bits(&SpikeTensor::from_tensor_unchecked(t), label))
        })
        .collect()
}

/// Unpacks samples of equal shape `[T, ...]` into a time-major `[T, N, ...]` batch.
pub fn unpack_batch<'a>(
    entries: impl IntoIterator<Item = &'a BitPackedSample>,
) -> Result<(Tensor, Vec<usize>)> {
    let mut items = Vec::new();
    let mut labels = Vec::new();
    for e in entries {
        items.push(unpack_bits(e)?.into_tensor());
        labels.push(e.label);
    }
    if items.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let refs: Vec<&Tensor> = items.iter().collect();
    Ok((Tensor::stack(&refs)?.swap_leading_axes(), labels))
}
