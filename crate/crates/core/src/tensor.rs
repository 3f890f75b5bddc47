//! Dense row-major tensors and their binary counterpart.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_shape, Error, Result};

/// Dense real-valued tensor stored in row-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                expected: shape,
                actual: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Reinterprets the data under a new shape with the same element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::ShapeMismatch {
                expected: shape.to_vec(),
                actual: self.shape,
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Size of one slice along the leading axis.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.row_len();
        &self.data[i * n..(i + 1) * n]
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor]) -> Result<Self> {
        let first = items.first().ok_or(Error::EmptyBatch)?;
        let mut shape = vec![items.len()];
        shape.extend_from_slice(first.shape());
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            ensure_shape(first.shape(), t.shape())?;
            data.extend_from_slice(t.data());
        }
        Ok(Self { shape, data })
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        ensure_shape(&self.shape, &other.shape)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        for v in &mut self.data {
            *v *= k;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Swaps the first two axes, e.g. `[T, N, ...]` to `[N, T, ...]`.
    pub fn swap_leading_axes(&self) -> Self {
        let (a, b) = (self.shape[0], self.shape[1]);
        let inner: usize = self.shape.iter().skip(2).product();
        let mut data = vec![0.0; self.data.len()];
        for i in 0..a {
            for j in 0..b {
                let src = (i * b + j) * inner;
                let dst = (j * a + i) * inner;
                data[dst..dst + inner].copy_from_slice(&self.data[src..src + inner]);
            }
        }
        let mut shape = self.shape.clone();
        shape.swap(0, 1);
        Self { shape, data }
    }

    pub fn argmax_rows(&self) -> Vec<usize> {
        let n = self.row_len();
        self.data
            .chunks(n.max(1))
            .map(|row| {
                // first maximum wins, so ties go to the lower index
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }
}

/// Tensor whose elements are all exactly 0 or 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Tensor", into = "Tensor")]
pub struct SpikeTensor(Tensor);

impl SpikeTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self(Tensor::zeros(shape))
    }

    pub fn from_bools(shape: &[usize], bits: &[bool]) -> Result<Self> {
        let data = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Ok(Self(Tensor::new(shape.to_vec(), data)?))
    }

    pub fn shape(&self) -> &[usize] {
        self.0.shape()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        self.0.data().iter().map(|&v| v == 1.0)
    }

    pub fn count_ones(&self) -> usize {
        self.bits().filter(|&b| b).count()
    }

    pub(crate) fn from_tensor_unchecked(t: Tensor) -> Self {
        debug_assert!(t.is_binary());
        Self(t)
    }
}

impl TryFrom<Tensor> for SpikeTensor {
    type Error = Error;

    fn try_from(t: Tensor) -> Result<Self> {
        if let Some((index, &value)) = t
            .data()
            .iter()
            .enumerate()
            .find(|(_, &v)| v != 0.0 && v != 1.0)
        {
            return Err(Error::NonBinary { index, value });
        }
        Ok(Self(t))
    }
}

impl From<SpikeTensor> for Tensor {
    fn from(s: SpikeTensor) -> Tensor {
        s.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_element_count() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn spike_tensor_rejects_non_binary() {
        let t = Tensor::new(vec![3], vec![0.0, 1.0, 0.5]).unwrap();
        match SpikeTensor::try_from(t) {
            Err(Error::NonBinary { index, .. }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn swap_leading_axes_roundtrip() {
        let t = Tensor::new(vec![2, 3, 2], (0..12).map(f64::from).collect()).unwrap();
        let s = t.swap_leading_axes();
        assert_eq!(s.shape(), &[3, 2, 2]);
        assert_eq!(s.row(1), &[2.0, 3.0, 8.0, 9.0]);
        assert_eq!(s.swap_leading_axes(), t);
    }

    #[test]
    fn argmax_prefers_lower_index_on_ties() {
        let t = Tensor::new(vec![2, 3], vec![0.5, 0.5, 0.1, 0.0, 0.2, 0.2]).unwrap();
        assert_eq!(t.argmax_rows(), vec![0, 1]);
    }
}
