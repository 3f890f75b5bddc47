use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Stacks `steps` identical copies of `x` along a new leading time axis.
pub fn replicate_temporal(x: &Tensor, steps: usize) -> Result<Tensor> {
    if steps == 0 {
        return Err(Error::Config("sequence length must be at least 1".into()));
    }
    let mut shape = vec![steps];
    shape.extend_from_slice(x.shape());
    let mut data = Vec::with_capacity(x.len() * steps);
    for _ in 0..steps {
        data.extend_from_slice(x.data());
    }
    Tensor::new(shape, data)
}
