//! Exhaustive reference for small networks.
//!
//! Enumerates every ReLU phase pattern. On the region of a pattern the
//! network is affine, so its maximum over that region sits at a vertex: the
//! intersection of `n` hyperplanes drawn from the pattern's pre-activation
//! hyperplanes and the box faces. Every such intersection point inside the
//! box is a real input, so evaluating the network there and keeping the best
//! value yields the exact maximum of the network over the box.
//!
//! Cost grows as `2^hidden * C(hidden + 2n, n)`; meant for at most a dozen
//! hidden neurons and a handful of inputs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::network::{InputBox, Network};

pub const MAX_ORACLE_HIDDEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleMaximum {
    pub value: f64,
    pub argmax: Vec<f64>,
}

/// Exact maximum of a single-output network over a box.
pub fn max_output(net: &Network, input: &InputBox) -> Result<OracleMaximum> {
    let h = net.hidden_neuron_count();
    if h > MAX_ORACLE_HIDDEN {
        return Err(Error::Unsupported(format!(
            "exhaustive oracle limited to {MAX_ORACLE_HIDDEN} hidden neurons, got {h}"
        )));
    }
    let n = net.input_size();
    let mut best = OracleMaximum {
        value: net.evaluate_scalar(&input.lower)?,
        argmax: input.lower.clone(),
    };
    let tol = 1e-9;

    for pattern in 0u64..(1u64 << h) {
        let planes = pattern_hyperplanes(net, pattern);
        let mut all: Vec<(Vec<f64>, f64)> = planes;
        for k in 0..n {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            all.push((e.clone(), input.lower[k]));
            all.push((e, input.upper[k]));
        }
        for_each_subset(all.len(), n, |idx| {
            let a = DMatrix::from_fn(n, n, |r, c| all[idx[r]].0[c]);
            let b = DVector::from_fn(n, |r, _| all[idx[r]].1);
            let Some(x) = a.lu().solve(&b) else {
                return;
            };
            let mut x: Vec<f64> = x.iter().copied().collect();
            if x.iter().any(|v| !v.is_finite()) || !input.contains(&x, tol) {
                return;
            }
            input.clamp(&mut x);
            if let Ok(y) = net.evaluate_scalar(&x) {
                if y > best.value {
                    best = OracleMaximum {
                        value: y,
                        argmax: x,
                    };
                }
            }
        });
    }
    Ok(best)
}

/// Hyperplanes `a . x = -beta` where the pre-activations of the hidden
/// neurons vanish, given the phases encoded in the bits of `pattern`.
fn pattern_hyperplanes(net: &Network, pattern: u64) -> Vec<(Vec<f64>, f64)> {
    let n = net.input_size();
    // Current post-activation map: rows are affine forms [coeffs | constant].
    let mut map = DMatrix::<f64>::zeros(n, n + 1);
    for k in 0..n {
        map[(k, k)] = 1.0;
    }
    let mut bit = 0;
    let mut planes = Vec::new();
    let hidden = net.hidden_layer_count();
    for layer in &net.layers()[..hidden] {
        let rows = layer.size();
        let w = DMatrix::from_fn(rows, map.nrows(), |r, c| layer.weights[r][c]);
        let mut pre = &w * &map;
        for r in 0..rows {
            pre[(r, n)] += layer.biases[r];
        }
        for r in 0..rows {
            let coeffs: Vec<f64> = (0..n).map(|c| pre[(r, c)]).collect();
            planes.push((coeffs, -pre[(r, n)]));
            let active = pattern >> bit & 1 == 1;
            bit += 1;
            if !active {
                pre.row_mut(r).fill(0.0);
            }
        }
        map = pre;
    }
    planes
}

fn for_each_subset(m: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > m {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + m - k {
                break;
            }
            if i == 0 && idx[0] == m - k {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, Layer};

    #[test]
    fn subsets_are_enumerated() {
        let mut seen = Vec::new();
        for_each_subset(4, 2, |s| seen.push(s.to_vec()));
        assert_eq!(
            seen,
            vec![
                vec![0, 1],
                vec![0, 2],
                vec![0, 3],
                vec![1, 2],
                vec![1, 3],
                vec![2, 3]
            ]
        );
        let mut count = 0;
        for_each_subset(3, 3, |_| count += 1);
        assert_eq!(count, 1);
    }

    #[test]
    fn running_example_maximum() {
        let net = Network::new(
            1,
            vec![
                Layer::new(
                    vec![vec![10.0], vec![1.0]],
                    vec![0.0, 0.0],
                    Activation::Relu,
                ),
                Layer::new(vec![vec![3.0, 4.0]], vec![0.0], Activation::None),
            ],
        )
        .unwrap();
        let m = max_output(&net, &InputBox::new(vec![20.0], vec![21.0]).unwrap()).unwrap();
        assert_eq!(m.value, 714.0);
        assert_eq!(m.argmax, vec![21.0]);
    }

    #[test]
    fn interior_kink_maximum() {
        // 1 - |x0 - 0.3| - |x1 - 0.6| peaks at (0.3, 0.6), strictly inside the box.
        let net = Network::new(
            2,
            vec![
                Layer::new(
                    vec![
                        vec![1.0, 0.0],
                        vec![-1.0, 0.0],
                        vec![0.0, 1.0],
                        vec![0.0, -1.0],
                    ],
                    vec![-0.3, 0.3, -0.6, 0.6],
                    Activation::Relu,
                ),
                Layer::new(
                    vec![vec![-1.0, -1.0, -1.0, -1.0]],
                    vec![1.0],
                    Activation::None,
                ),
            ],
        )
        .unwrap();
        let m = max_output(
            &net,
            &InputBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(),
        )
        .unwrap();
        assert!((m.value - 1.0).abs() < 1e-12);
        assert!((m.argmax[0] - 0.3).abs() < 1e-12 && (m.argmax[1] - 0.6).abs() < 1e-12);
    }
}
