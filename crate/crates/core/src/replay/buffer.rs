use std::io::{Read, Write};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;

use super::bitpack::{pack_bits, unpack_batch, BitPackedSample};
use super::memory::CompressionReport;
use super::reservoir::Reservoir;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{SpikeTensor, Tensor};

pub const MAGIC: &[u8; 4] = b"SLRB";
pub const FORMAT_VERSION: u32 = 1;

/// Reservoir of bit-packed binary latents.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    inner: Reservoir<BitPackedSample>,
    rng_seed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, rng_seed: u64) -> Self {
        Self {
            inner: Reservoir::new(capacity, SeededRng::seed_from_u64(rng_seed)),
            rng_seed,
        }
    }

    pub fn capacity(&self) -> usize {
        self.inner.capacity()
    }

    pub fn seen(&self) -> u64 {
        self.inner.seen()
    }

    pub fn len(&self) -> usize {
        self.inner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.is_empty()
    }

    pub fn entries(&self) -> &[BitPackedSample] {
        self.inner.entries()
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    /// Offers one latent (`[T, ...features]`) from the stream.
    pub fn offer(&mut self, z: &SpikeTensor, label: usize) -> bool {
        self.inner.offer(pack_bits(z, label))
    }

    /// Offers an already packed latent.
    pub fn offer_packed(&mut self, sample: BitPackedSample) -> bool {
        self.inner.offer(sample)
    }

    /// Draws `n` entries and unpacks them into a `[T, n, ...features]` tensor of 0.0/1.0.
    pub fn sample_batch(&self, n: usize, rng: &mut impl Rng) -> Result<(Tensor, Vec<usize>)> {
        if self.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let idx = self.inner.sample_indices(n, rng);
        self.gather(&idx)
    }

    /// Unpacks the given entries into a time-major batch.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let entries = self.entries();
        unpack_batch(indices.iter().map(|&i| &entries[i]))
    }

    /// Sum of packed payload bytes over all entries.
    pub fn memory_footprint(&self) -> usize {
        self.entries()
            .iter()
            .map(BitPackedSample::payload_bytes)
            .sum()
    }

    /// Per-entry serialization overhead, reported apart from the payload.
    pub fn header_footprint(&self) -> usize {
        self.entries()
            .iter()
            .map(BitPackedSample::header_bytes)
            .sum()
    }

    pub fn compression_report(&self, reference_precision_bits: u32) -> CompressionReport {
        let elements: u64 = self.entries().iter().map(|e| e.bit_count as u64).sum();
        CompressionReport::new(
            elements,
            self.memory_footprint() as u64,
            reference_precision_bits,
        )
    }

    /// Count of stored entries per label, indexed by label.
    pub fn label_histogram(&self, classes: usize) -> Vec<usize> {
        let mut h = vec![0; classes];
        for e in self.entries() {
            if e.label < classes {
                h[e.label] += 1;
            }
        }
        h
    }

    /// Writes the little-endian `SLRB` layout:
    ///
    /// ```text
    /// magic "SLRB" | u32 version | u64 capacity | u64 seen | u64 count
    /// | u64 rng_seed | u128 rng word position
    /// then per entry: u32 body length | u32 label | u32 rank | rank x u32 extent
    ///                 | u64 bit count | ceil(bits / 8) payload bytes
    /// ```
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.capacity() as u64).to_le_bytes())?;
        w.write_all(&self.seen().to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&self.rng_seed.to_le_bytes())?;
        w.write_all(&self.inner_rng().get_word_pos().to_le_bytes())?;
        for e in self.entries() {
            let body = 4 + 4 + 4 * e.shape.len() + 8 + e.bits.len();
            w.write_all(&u32::try_from(body).map_err(|_| too_large())?.to_le_bytes())?;
            w.write_all(
                &u32::try_from(e.label)
                    .map_err(|_| too_large())?
                    .to_le_bytes(),
            )?;
            w.write_all(&(e.shape.len() as u32).to_le_bytes())?;
            for &d in &e.shape {
                w.write_all(&u32::try_from(d).map_err(|_| too_large())?.to_le_bytes())?;
            }
            w.write_all(&(e.bit_count as u64).to_le_bytes())?;
            w.write_all(&e.bits)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(bad(format!("bad magic {magic:?}")));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let capacity = read_u64(&mut r)? as usize;
        let seen = read_u64(&mut r)?;
        let count = read_u64(&mut r)? as usize;
        let rng_seed = read_u64(&mut r)?;
        let mut pos = [0u8; 16];
        read_exact(&mut r, &mut pos)?;
        if count > capacity || count as u64 > seen {
            return Err(bad(format!(
                "{count} entries with capacity {capacity} and {seen} seen"
            )));
        }
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let body = read_u32(&mut r)? as usize;
            let label = read_u32(&mut r)? as usize;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u32(&mut r)? as usize);
            }
            let bit_count = read_u64(&mut r)? as usize;
            let payload = bit_count.div_ceil(8);
            if body != 4 + 4 + 4 * rank + 8 + payload {
                return Err(bad(format!(
                    "entry length {body} disagrees with its header"
                )));
            }
            let mut bits = vec![0u8; payload];
            read_exact(&mut r, &mut bits)?;
            let sample = BitPackedSample {
                bits,
                bit_count,
                shape,
                label,
            };
            sample.validate()?;
            entries.push(sample);
        }
        let mut rng = SeededRng::seed_from_u64(rng_seed);
        rng.set_word_pos(u128::from_le_bytes(pos));
        Ok(Self {
            inner: Reservoir::from_parts(capacity, entries, seen, rng),
            rng_seed,
        })
    }

    fn inner_rng(&self) -> &SeededRng {
        self.inner.rng()
    }
}

fn too_large() -> Error {
    bad("value does not fit the on-disk field".into())
}

fn bad(detail: String) -> Error {
    Error::Format {
        what: "replay buffer file",
        detail,
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => bad("truncated".into()),
        _ => Error::Io(e),
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

impl PartialEq for ReplayBuffer {
    fn eq(&self, other: &Self) -> bool {
        self.capacity() == other.capacity()
            && self.seen() == other.seen()
            && self.rng_seed == other.rng_seed
            && self.entries() == other.entries()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn latent(seed: u64) -> SpikeTensor {
        let mut rng = seeded(seed);
        let bits: Vec<bool> = (0..2 * 13).map(|_| rng.gen()).collect();
        SpikeTensor::from_bools(&[2, 13], &bits).unwrap()
    }

    #[test]
    fn single_entry_sample() {
        let mut b = ReplayBuffer::new(4, 0);
        b.offer(&latent(1), 7);
        let (x, y) = b.sample_batch(1, &mut seeded(0)).unwrap();
        assert_eq!(y, vec![7]);
        assert_eq!(x.shape(), &[2, 1, 13]);
        let expect = latent(1).into_tensor().reshape(&[2, 1, 13]).unwrap();
        assert_eq!(x, expect);
    }

    #[test]
    fn empty_buffer_cannot_sample() {
        let b = ReplayBuffer::new(4, 0);
        assert!(matches!(
            b.sample_batch(1, &mut seeded(0)),
            Err(Error::EmptyBuffer)
        ));
        assert_eq!(b.memory_footprint(), 0);
        assert_eq!(b.compression_report(32).payload_bytes, 0);
    }

    #[test]
    fn file_roundtrip_resumes_identically() {
        let mut a = ReplayBuffer::new(5, 42);
        for i in 0..12 {
            a.offer(&latent(i), i as usize % 3);
        }
        let mut bytes = Vec::new();
        a.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"SLRB");
        let mut b = ReplayBuffer::read_from(&bytes[..]).unwrap();
        assert_eq!(a, b);
        for i in 12..40 {
            assert_eq!(a.offer(&latent(i), 0), b.offer(&latent(i), 0));
        }
        assert_eq!(a, b);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let mut a = ReplayBuffer::new(2, 1);
        a.offer(&latent(0), 1);
        let mut bytes = Vec::new();
        a.write_to(&mut bytes).unwrap();
        assert!(ReplayBuffer::read_from(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(ReplayBuffer::read_from(&wrong[..]).is_err());
    }
}
