//! Two interleaved half-circles, labelled by circle.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::params::LabeledDataset;
use crate::scalar::Scalar;

/// `n` points alternating between the two moons, with Gaussian jitter of
/// standard deviation `noise`.
pub fn two_moons<T: Scalar, R: Rng + ?Sized>(
    n: usize,
    noise: f64,
    rng: &mut R,
) -> Result<LabeledDataset<T>> {
    let mut inputs = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let t = PI * rng.gen::<f64>();
        let (x, y) = if i % 2 == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        let jx: f64 = rng.sample(StandardNormal);
        let jy: f64 = rng.sample(StandardNormal);
        inputs.push(T::lit(x + noise * jx));
        inputs.push(T::lit(y + noise * jy));
        labels.push(T::from_count(i % 2));
    }
    LabeledDataset::new(inputs, labels, 2)
}
