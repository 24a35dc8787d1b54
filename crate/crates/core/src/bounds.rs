//! Sound output bounds over an input box.
//!
//! Two methods are provided: interval bound propagation ([`ibp`]) and symbolic
//! bound tightening ([`sbt`]). SBT carries one affine lower and one affine
//! upper expression over the inputs for every neuron. A stably active ReLU
//! passes both expressions through, a stably inactive one zeroes them, and an
//! unstable one is concretized to the constant expressions `0` and `hi`.
//! The concrete SBT intervals are intersected with the IBP intervals of the
//! same pass, so SBT is never looser than IBP.
//!
//! Arithmetic is plain round-to-nearest; callers allow a small absolute slack
//! when checking soundness.

use serde::Serialize;

use crate::network::{dot, InputBox, Network};
use crate::solver::{Phase, PhaseAssignment};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64, slack: f64) -> bool {
        v >= self.lo - slack && v <= self.hi + slack
    }

    pub fn is_subset_of(&self, other: &Interval, slack: f64) -> bool {
        self.lo >= other.lo - slack && self.hi <= other.hi + slack
    }

    fn relu(self) -> Self {
        Self::new(self.lo.max(0.0), self.hi.max(0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundMethod {
    Ibp,
    #[default]
    Sbt,
}

impl std::str::FromStr for BoundMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ibp" => Ok(BoundMethod::Ibp),
            "sbt" => Ok(BoundMethod::Sbt),
            other => Err(format!(
                "unknown bound method {other:?} (expected ibp or sbt)"
            )),
        }
    }
}

impl std::fmt::Display for BoundMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BoundMethod::Ibp => "ibp",
            BoundMethod::Sbt => "sbt",
        })
    }
}

/// Concrete per-neuron intervals, indexed `[layer][neuron]` over all layers
/// (hidden layers followed by the output layer).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsMap {
    pub pre: Vec<Vec<Interval>>,
    pub post: Vec<Vec<Interval>>,
}

impl BoundsMap {
    /// Interval of the (single) output neuron.
    pub fn output(&self) -> Interval {
        self.post.last().expect("at least one layer")[0]
    }

    pub fn outputs(&self) -> &[Interval] {
        self.post.last().expect("at least one layer")
    }
}

/// Affine function `coeffs . x + constant` of the network inputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Affine {
    pub coeffs: Vec<f64>,
    pub constant: f64,
}

impl Affine {
    pub fn constant(n: usize, c: f64) -> Self {
        Self {
            coeffs: vec![0.0; n],
            constant: c,
        }
    }

    pub fn variable(n: usize, k: usize) -> Self {
        let mut coeffs = vec![0.0; n];
        coeffs[k] = 1.0;
        Self {
            coeffs,
            constant: 0.0,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        dot(&self.coeffs, x) + self.constant
    }

    /// Minimum over the box, by coefficient sign.
    pub fn min_over(&self, input: &InputBox) -> f64 {
        self.constant
            + self
                .coeffs
                .iter()
                .zip(input.lower.iter().zip(&input.upper))
                .map(|(&c, (&l, &u))| if c >= 0.0 { c * l } else { c * u })
                .sum::<f64>()
    }

    /// Maximum over the box, by coefficient sign.
    pub fn max_over(&self, input: &InputBox) -> f64 {
        self.constant
            + self
                .coeffs
                .iter()
                .zip(input.lower.iter().zip(&input.upper))
                .map(|(&c, (&l, &u))| if c >= 0.0 { c * u } else { c * l })
                .sum::<f64>()
    }

    /// A box vertex at which the maximum is attained.
    pub fn argmax_over(&self, input: &InputBox) -> Vec<f64> {
        self.coeffs
            .iter()
            .zip(input.lower.iter().zip(&input.upper))
            .map(|(&c, (&l, &u))| if c >= 0.0 { u } else { l })
            .collect()
    }

    fn axpy(&mut self, w: f64, other: &Affine) {
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += w * b;
        }
        self.constant += w * other.constant;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymbolicBounds {
    pub lower: Affine,
    pub upper: Affine,
}

/// Symbolic pre- and post-activation bounds for every neuron, indexed like
/// [`BoundsMap`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymbolicBoundsMap {
    pub pre: Vec<Vec<SymbolicBounds>>,
    pub post: Vec<Vec<SymbolicBounds>>,
    pub concrete: BoundsMap,
}

impl SymbolicBoundsMap {
    pub fn output(&self) -> &SymbolicBounds {
        &self.post.last().expect("at least one layer")[0]
    }
}

/// Interval bound propagation.
pub fn ibp(net: &Network, input: &InputBox) -> BoundsMap {
    let mut prev: Vec<Interval> = input
        .lower
        .iter()
        .zip(&input.upper)
        .map(|(&l, &u)| Interval::new(l, u))
        .collect();
    let mut pre_all = Vec::with_capacity(net.layers().len());
    let mut post_all = Vec::with_capacity(net.layers().len());
    let last = net.layers().len() - 1;
    for (i, layer) in net.layers().iter().enumerate() {
        let pre = affine_interval(&layer.weights, &layer.biases, &prev);
        let post: Vec<Interval> = if i == last {
            pre.clone()
        } else {
            pre.iter().map(|iv| iv.relu()).collect()
        };
        pre_all.push(pre);
        prev = post.clone();
        post_all.push(post);
    }
    BoundsMap {
        pre: pre_all,
        post: post_all,
    }
}

fn affine_interval(weights: &[Vec<f64>], biases: &[f64], prev: &[Interval]) -> Vec<Interval> {
    weights
        .iter()
        .zip(biases)
        .map(|(row, &b)| {
            let (mut lo, mut hi) = (b, b);
            for (&w, iv) in row.iter().zip(prev) {
                if w >= 0.0 {
                    lo += w * iv.lo;
                    hi += w * iv.hi;
                } else {
                    lo += w * iv.hi;
                    hi += w * iv.lo;
                }
            }
            Interval::new(lo, hi)
        })
        .collect()
}

/// Symbolic bound tightening.
pub fn sbt(net: &Network, input: &InputBox) -> SymbolicBoundsMap {
    sbt_with_phases(net, input, None).expect("unconstrained propagation is always feasible")
}

/// Symbolic bound tightening restricted to inputs whose ReLU phases agree with
/// `phases` (entries other than [`Phase::Unknown`]).
///
/// Returns `None` when the bounds prove that no input in the box realizes the
/// fixed phases.
pub fn sbt_with_phases(
    net: &Network,
    input: &InputBox,
    phases: Option<&PhaseAssignment>,
) -> Option<SymbolicBoundsMap> {
    let n = net.input_size();
    let mut prev_sym: Vec<SymbolicBounds> = (0..n)
        .map(|k| SymbolicBounds {
            lower: Affine::variable(n, k),
            upper: Affine::variable(n, k),
        })
        .collect();
    let mut prev_iv: Vec<Interval> = input
        .lower
        .iter()
        .zip(&input.upper)
        .map(|(&l, &u)| Interval::new(l, u))
        .collect();

    let layers = net.layers();
    let last = layers.len() - 1;
    let mut pre_sym_all = Vec::with_capacity(layers.len());
    let mut post_sym_all = Vec::with_capacity(layers.len());
    let mut pre_all = Vec::with_capacity(layers.len());
    let mut post_all = Vec::with_capacity(layers.len());

    for (i, layer) in layers.iter().enumerate() {
        let ibp_pre = affine_interval(&layer.weights, &layer.biases, &prev_iv);
        let mut pre_sym = Vec::with_capacity(layer.size());
        let mut pre_iv = Vec::with_capacity(layer.size());
        for (j, (row, &b)) in layer.weights.iter().zip(&layer.biases).enumerate() {
            let mut lower = Affine::constant(n, b);
            let mut upper = Affine::constant(n, b);
            for (&w, s) in row.iter().zip(&prev_sym) {
                if w == 0.0 {
                    continue;
                }
                if w > 0.0 {
                    lower.axpy(w, &s.lower);
                    upper.axpy(w, &s.upper);
                } else {
                    lower.axpy(w, &s.upper);
                    upper.axpy(w, &s.lower);
                }
            }
            let mut lo = lower.min_over(input).max(ibp_pre[j].lo);
            let mut hi = upper.max_over(input).min(ibp_pre[j].hi);
            if lo > hi {
                // Only rounding can cross the two sound bounds here.
                let mid = 0.5 * (lo + hi);
                lo = mid;
                hi = mid;
            }
            pre_iv.push(Interval::new(lo, hi));
            pre_sym.push(SymbolicBounds { lower, upper });
        }

        let (post_sym, post_iv) = if i == last {
            (pre_sym.clone(), pre_iv.clone())
        } else {
            let mut post_sym = Vec::with_capacity(layer.size());
            let mut post_iv = Vec::with_capacity(layer.size());
            for (j, (s, iv)) in pre_sym.iter().zip(&pre_iv).enumerate() {
                let fixed = phases.map_or(Phase::Unknown, |p| p.get(i, j));
                let phase = match fixed {
                    Phase::Active if iv.hi < 0.0 => return None,
                    Phase::Inactive if iv.lo > 0.0 => return None,
                    Phase::Unknown if iv.lo >= 0.0 => Phase::Active,
                    Phase::Unknown if iv.hi <= 0.0 => Phase::Inactive,
                    p => p,
                };
                match phase {
                    Phase::Active => {
                        post_sym.push(s.clone());
                        post_iv.push(Interval::new(iv.lo.max(0.0), iv.hi.max(0.0)));
                    }
                    Phase::Inactive => {
                        post_sym.push(SymbolicBounds {
                            lower: Affine::constant(n, 0.0),
                            upper: Affine::constant(n, 0.0),
                        });
                        post_iv.push(Interval::new(0.0, 0.0));
                    }
                    Phase::Unknown => {
                        post_sym.push(SymbolicBounds {
                            lower: Affine::constant(n, 0.0),
                            upper: Affine::constant(n, iv.hi),
                        });
                        post_iv.push(Interval::new(0.0, iv.hi));
                    }
                }
            }
            (post_sym, post_iv)
        };

        prev_sym = post_sym.clone();
        prev_iv = post_iv.clone();
        pre_sym_all.push(pre_sym);
        post_sym_all.push(post_sym);
        pre_all.push(pre_iv);
        post_all.push(post_iv);
    }

    Some(SymbolicBoundsMap {
        pre: pre_sym_all,
        post: post_sym_all,
        concrete: BoundsMap {
            pre: pre_all,
            post: post_all,
        },
    })
}

/// Output interval of a single-output network by the chosen method.
pub fn output_bounds(net: &Network, input: &InputBox, method: BoundMethod) -> Interval {
    match method {
        BoundMethod::Ibp => ibp(net, input).output(),
        BoundMethod::Sbt => sbt(net, input).concrete.output(),
    }
}

/// Certified minimal gap `d = max(0, l_abstract - u_original)`, so that
/// `original(x) + d <= abstract(x)` for every `x` in the box.
pub fn output_gap(
    abstract_net: &Network,
    original: &Network,
    input: &InputBox,
    method: BoundMethod,
) -> f64 {
    let l = output_bounds(abstract_net, input, method).lo;
    let u = output_bounds(original, input, method).hi;
    (l - u).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, Layer};

    fn fig(w_in: Vec<Vec<f64>>, w_out: Vec<Vec<f64>>) -> Network {
        let h = w_in.len();
        Network::new(
            1,
            vec![
                Layer::new(w_in, vec![0.0; h], Activation::Relu),
                Layer::new(w_out, vec![0.0], Activation::None),
            ],
        )
        .unwrap()
    }

    fn fig1() -> Network {
        fig(vec![vec![10.0], vec![1.0]], vec![vec![3.0, 4.0]])
    }

    fn fig2() -> Network {
        fig(vec![vec![10.0]], vec![vec![7.0]])
    }

    fn running_box() -> InputBox {
        InputBox::new(vec![20.0], vec![21.0]).unwrap()
    }

    #[test]
    fn ibp_running_example() {
        let b = ibp(&fig1(), &running_box());
        assert_eq!(b.post[0][0], Interval::new(200.0, 210.0));
        assert_eq!(b.post[0][1], Interval::new(20.0, 21.0));
        assert_eq!(b.output(), Interval::new(680.0, 714.0));
        assert_eq!(
            ibp(&fig2(), &running_box()).output(),
            Interval::new(1400.0, 1470.0)
        );
    }

    #[test]
    fn sbt_running_example_is_exact() {
        let s = sbt(&fig1(), &running_box());
        assert_eq!(s.concrete.output(), Interval::new(680.0, 714.0));
        assert_eq!(s.output().lower.coeffs, vec![34.0]);
        assert_eq!(s.output().upper.coeffs, vec![34.0]);
    }

    #[test]
    fn sbt_unstable_relu() {
        let net = Network::new(
            1,
            vec![
                Layer::new(vec![vec![1.0]], vec![0.0], Activation::Relu),
                Layer::new(vec![vec![1.0]], vec![0.0], Activation::None),
            ],
        )
        .unwrap();
        let s = sbt(&net, &InputBox::new(vec![-1.0], vec![1.0]).unwrap());
        assert_eq!(s.concrete.pre[0][0], Interval::new(-1.0, 1.0));
        assert_eq!(s.concrete.post[0][0], Interval::new(0.0, 1.0));
        assert_eq!(s.concrete.output(), Interval::new(0.0, 1.0));
    }

    #[test]
    fn gap_running_example() {
        assert_eq!(
            output_gap(&fig2(), &fig1(), &running_box(), BoundMethod::Ibp),
            686.0
        );
        assert_eq!(
            output_gap(&fig2(), &fig1(), &running_box(), BoundMethod::Sbt),
            686.0
        );
        assert_eq!(
            output_gap(&fig1(), &fig1(), &running_box(), BoundMethod::Ibp),
            0.0
        );
    }

    #[test]
    fn point_box_is_tight() {
        let b = ibp(&fig1(), &InputBox::point(&[20.5]));
        let y = fig1().evaluate_scalar(&[20.5]).unwrap();
        assert!(b.output().contains(y, 0.0));
        assert!(b.output().width() <= 1e-9 * y.abs().max(1.0));
    }

    #[test]
    fn forced_phase_conflict_is_infeasible() {
        let net = fig1();
        let mut phases = PhaseAssignment::unknown(&net);
        phases.set(0, 0, Phase::Inactive);
        assert!(sbt_with_phases(&net, &running_box(), Some(&phases)).is_none());
    }

    #[test]
    fn method_parsing() {
        assert_eq!("IBP".parse::<BoundMethod>().unwrap(), BoundMethod::Ibp);
        assert_eq!("sbt".parse::<BoundMethod>().unwrap(), BoundMethod::Sbt);
        assert!("deeppoly".parse::<BoundMethod>().is_err());
    }
}
