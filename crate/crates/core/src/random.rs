//! Seeded random networks and queries.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::network::{Activation, InputBox, Layer, Network};

/// Dense ReLU network with He-scaled Gaussian weights and small Gaussian biases.
pub fn random_network<R: Rng + ?Sized>(
    rng: &mut R,
    input_size: usize,
    hidden: &[usize],
    output_size: usize,
) -> Network {
    let mut layers = Vec::with_capacity(hidden.len() + 1);
    let mut prev = input_size;
    let sizes = hidden.iter().copied().chain(std::iter::once(output_size));
    let count = hidden.len() + 1;
    for (i, size) in sizes.enumerate() {
        let w = Normal::new(0.0, (2.0 / prev as f64).sqrt()).expect("finite std");
        let b = Normal::new(0.0, 0.1).expect("finite std");
        let weights = (0..size)
            .map(|_| (0..prev).map(|_| w.sample(rng)).collect())
            .collect();
        let biases = (0..size).map(|_| b.sample(rng)).collect();
        let activation = if i + 1 == count {
            Activation::None
        } else {
            Activation::Relu
        };
        layers.push(Layer::new(weights, biases, activation));
        prev = size;
    }
    Network::new(input_size, layers).expect("generated shapes are consistent")
}

/// Random hidden layout with `layers` layers whose total size is at most `max_total`.
pub fn random_hidden_sizes<R: Rng + ?Sized>(
    rng: &mut R,
    layers: usize,
    max_total: usize,
) -> Vec<usize> {
    let mut sizes = vec![1; layers];
    let extra = rng.gen_range(0..=max_total.saturating_sub(layers));
    for _ in 0..extra {
        let i = rng.gen_range(0..layers);
        sizes[i] += 1;
    }
    sizes
}

/// Box inside `[-1, 1]^n`; nonnegative when `nonnegative` is set.
pub fn random_box<R: Rng + ?Sized>(rng: &mut R, n: usize, nonnegative: bool) -> InputBox {
    let (lo, hi) = if nonnegative { (0.0, 1.0) } else { (-1.0, 1.0) };
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    for _ in 0..n {
        let a: f64 = rng.gen_range(lo..hi);
        let b: f64 = rng.gen_range(lo..hi);
        lower.push(a.min(b));
        upper.push(a.max(b));
    }
    InputBox { lower, upper }
}

/// Uniform sample from the box.
pub fn sample_box<R: Rng + ?Sized>(rng: &mut R, input: &InputBox) -> Vec<f64> {
    input
        .lower
        .iter()
        .zip(&input.upper)
        .map(|(&l, &u)| if l == u { l } else { rng.gen_range(l..=u) })
        .collect()
}
