use candle_core::Tensor;
use rand::Rng;

use crate::error::Result;

/// Pool of past generator outputs fed to a discriminator in place of the
/// current fake half of the time once full.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    pub capacity: usize,
    images: Vec<Tensor>,
    pub swaps: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            images: Vec::with_capacity(capacity),
            swaps: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Tensor] {
        &self.images
    }

    pub fn restore(&mut self, images: Vec<Tensor>, swaps: u64) {
        self.images = images;
        self.swaps = swaps;
    }

    /// Takes a detached `(N, C, H, W)` batch and returns the batch to show the
    /// discriminator. Each sample is stored while filling; afterwards it is
    /// returned as-is or swapped with a random stored image, with equal odds.
    pub fn buffer_push_sample(&mut self, fakes: &Tensor, rng: &mut impl Rng) -> Result<Tensor> {
        if self.capacity == 0 {
            return Ok(fakes.clone());
        }
        let n = fakes.dim(0)?;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let img = fakes.narrow(0, i, 1)?.detach();
            if self.images.len() < self.capacity {
                self.images.push(img.clone());
                out.push(img);
            } else if rng.random::<f64>() < 0.5 {
                let j = rng.random_range(0..self.capacity);
                out.push(std::mem::replace(&mut self.images[j], img));
                self.swaps += 1;
            } else {
                out.push(img);
            }
        }
        Ok(Tensor::cat(&out, 0)?)
    }
}
