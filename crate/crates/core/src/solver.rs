//! Complete decision procedure for a single query.
//!
//! Branch and bound over ReLU phases. Every node recomputes symbolic bounds
//! under its fixed phases; nodes whose output upper bound falls below the
//! threshold are pruned. When every ReLU is fixed or stable the network is
//! affine on the node's region and the remaining question is linear
//! feasibility, answered by [`crate::simplex`].
//!
//! The strict property `y > c` is decided as `y >= c + epsilon`.

use std::time::{Duration, Instant};

use serde::Serialize;

use crate::bounds::{sbt_with_phases, Affine};
use crate::error::{Error, Result};
use crate::network::{InputBox, Network, Query};
use crate::simplex::{find_feasible, LinearConstraint, SimplexOptions};

pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Active,
    Inactive,
    Unknown,
}

/// Phase of every hidden neuron, `[layer][neuron]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseAssignment {
    phases: Vec<Vec<Phase>>,
}

impl PhaseAssignment {
    pub fn unknown(net: &Network) -> Self {
        Self {
            phases: net
                .hidden_sizes()
                .into_iter()
                .map(|s| vec![Phase::Unknown; s])
                .collect(),
        }
    }

    pub fn get(&self, layer: usize, neuron: usize) -> Phase {
        self.phases
            .get(layer)
            .and_then(|l| l.get(neuron))
            .copied()
            .unwrap_or(Phase::Unknown)
    }

    pub fn set(&mut self, layer: usize, neuron: usize, phase: Phase) {
        self.phases[layer][neuron] = phase;
    }

    pub fn layers(&self) -> &[Vec<Phase>] {
        &self.phases
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Sat,
    Unsat,
    Timeout,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::Sat => "SAT",
            Status::Unsat => "UNSAT",
            Status::Timeout => "TIMEOUT",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SolveStats {
    pub nodes: usize,
    pub leaves: usize,
    pub pruned_by_bound: usize,
    pub pruned_infeasible: usize,
    /// Pruned subtrees that, when explored anyway, contained a satisfiable
    /// leaf. Only counted with [`SolverOptions::check_pruning`].
    pub pruning_violations: usize,
    pub time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub status: Status,
    pub witness: Option<Vec<f64>>,
    pub stats: SolveStats,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub epsilon: f64,
    pub timeout: Option<Duration>,
    /// Debug mode: fully explore every pruned subtree and count the
    /// satisfiable leaves found there.
    pub check_pruning: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            timeout: None,
            check_pruning: false,
        }
    }
}

pub fn solve(query: &Query, opts: &SolverOptions) -> Result<Verdict> {
    let deadline = opts.timeout.map(|t| Instant::now() + t);
    solve_until(query, opts, deadline)
}

/// Like [`solve`], with an absolute deadline shared by the caller.
pub fn solve_until(
    query: &Query,
    opts: &SolverOptions,
    deadline: Option<Instant>,
) -> Result<Verdict> {
    let start = Instant::now();
    let mut search = Search {
        net: &query.network,
        input: &query.input,
        target: query.output.threshold + opts.epsilon,
        threshold: query.output.threshold,
        opts,
        deadline,
        stats: SolveStats::default(),
        twins: twin_classes(&query.network),
    };
    let outcome = search.run();
    let mut stats = search.stats;
    stats.time_ms = start.elapsed().as_secs_f64() * 1e3;
    let (status, witness) = match outcome? {
        Outcome::Sat(x) => (Status::Sat, Some(x)),
        Outcome::Unsat => (Status::Unsat, None),
        Outcome::Timeout => (Status::Timeout, None),
    };
    Ok(Verdict {
        status,
        witness,
        stats,
    })
}

enum Outcome {
    Sat(Vec<f64>),
    Unsat,
    Timeout,
}

enum NodeResult {
    Pruned,
    Sat(Vec<f64>),
    Branch(PhaseAssignment, PhaseAssignment),
}

struct Search<'a> {
    net: &'a Network,
    input: &'a InputBox,
    /// `threshold + epsilon`
    target: f64,
    threshold: f64,
    opts: &'a SolverOptions,
    deadline: Option<Instant>,
    stats: SolveStats,
    /// `twins[layer][j]`: smallest neuron of the layer whose pre-activation
    /// is a positive multiple of neuron `j`'s. Twins always share a phase.
    twins: Vec<Vec<usize>>,
}

impl Search<'_> {
    fn run(&mut self) -> Result<Outcome> {
        let center = self.input.center();
        if let Some(x) = self.genuine(center)? {
            return Ok(Outcome::Sat(x));
        }
        let mut stack = vec![PhaseAssignment::unknown(self.net)];
        while let Some(node) = stack.pop() {
            if self.deadline.is_some_and(|d| Instant::now() >= d) {
                return Ok(Outcome::Timeout);
            }
            match self.visit(node)? {
                NodeResult::Pruned => {}
                NodeResult::Sat(x) => return Ok(Outcome::Sat(x)),
                NodeResult::Branch(active, inactive) => {
                    stack.push(inactive);
                    stack.push(active);
                }
            }
        }
        Ok(Outcome::Unsat)
    }

    /// Returns `x` when it reaches the target output.
    fn genuine(&self, x: Vec<f64>) -> Result<Option<Vec<f64>>> {
        let y = self.net.evaluate_scalar(&x)?;
        Ok((y >= self.target).then_some(x))
    }

    fn visit(&mut self, node: PhaseAssignment) -> Result<NodeResult> {
        self.stats.nodes += 1;
        let Some(bounds) = sbt_with_phases(self.net, self.input, Some(&node)) else {
            self.stats.pruned_infeasible += 1;
            self.audit_pruned(&node)?;
            return Ok(NodeResult::Pruned);
        };
        let out = bounds.output();
        if bounds.concrete.output().hi < self.target {
            self.stats.pruned_by_bound += 1;
            self.audit_pruned(&node)?;
            return Ok(NodeResult::Pruned);
        }
        if let Some(x) = self.genuine(out.upper.argmax_over(self.input))? {
            return Ok(NodeResult::Sat(x));
        }

        // Widest unstable, unfixed neuron; ties to the lowest (layer, index).
        let mut pick: Option<(usize, usize, f64)> = None;
        let hidden = self.net.hidden_layer_count();
        for (i, layer) in bounds.concrete.pre[..hidden].iter().enumerate() {
            for (j, iv) in layer.iter().enumerate() {
                if node.get(i, j) != Phase::Unknown || iv.lo >= 0.0 || iv.hi <= 0.0 {
                    continue;
                }
                if pick.is_none_or(|(_, _, w)| iv.width() > w) {
                    pick = Some((i, j, iv.width()));
                }
            }
        }

        match pick {
            Some((i, j, _)) => {
                let rep = self.twins[i][j];
                let mut active = node.clone();
                let mut inactive = node;
                for (k, _) in self.twins[i].iter().enumerate().filter(|(_, &r)| r == rep) {
                    active.set(i, k, Phase::Active);
                    inactive.set(i, k, Phase::Inactive);
                }
                Ok(NodeResult::Branch(active, inactive))
            }
            None => {
                // Every phase is fixed or implied by the bounds.
                let mut full = node;
                for (i, layer) in bounds.concrete.pre[..hidden].iter().enumerate() {
                    for (j, iv) in layer.iter().enumerate() {
                        if full.get(i, j) == Phase::Unknown {
                            let p = if iv.lo >= 0.0 {
                                Phase::Active
                            } else {
                                Phase::Inactive
                            };
                            full.set(i, j, p);
                        }
                    }
                }
                match self.solve_leaf(&full)? {
                    Some(x) => Ok(NodeResult::Sat(x)),
                    None => Ok(NodeResult::Pruned),
                }
            }
        }
    }

    fn solve_leaf(&mut self, phases: &PhaseAssignment) -> Result<Option<Vec<f64>>> {
        self.stats.leaves += 1;
        let mut target = self.target;
        for _ in 0..2 {
            let constraints = leaf_constraints(self.net, phases, target);
            let Some(x) = find_feasible(
                &constraints,
                &self.input.lower,
                &self.input.upper,
                SimplexOptions::default(),
            )?
            else {
                return Ok(None);
            };
            // Concrete re-check of the linear solution.
            if self.net.evaluate_scalar(&x)? > self.threshold {
                return Ok(Some(x));
            }
            target += 10.0 * self.opts.epsilon;
        }
        Err(Error::Numerical(
            "leaf solution does not satisfy the property on re-evaluation".into(),
        ))
    }

    /// Debug check: explores every completion of `node` and counts the
    /// satisfiable leaves.
    fn audit_pruned(&mut self, node: &PhaseAssignment) -> Result<()> {
        if !self.opts.check_pruning {
            return Ok(());
        }
        let mut stack = vec![node.clone()];
        while let Some(p) = stack.pop() {
            let next = p.layers().iter().enumerate().find_map(|(i, l)| {
                l.iter()
                    .position(|&ph| ph == Phase::Unknown)
                    .map(|j| (i, j))
            });
            match next {
                Some((i, j)) => {
                    for ph in [Phase::Active, Phase::Inactive] {
                        let mut c = p.clone();
                        c.set(i, j, ph);
                        stack.push(c);
                    }
                }
                None => {
                    let cs = leaf_constraints(self.net, &p, self.target);
                    if find_feasible(
                        &cs,
                        &self.input.lower,
                        &self.input.upper,
                        SimplexOptions::default(),
                    )?
                    .is_some()
                    {
                        self.stats.pruning_violations += 1;
                    }
                }
            }
        }
        Ok(())
    }
}

fn twin_classes(net: &Network) -> Vec<Vec<usize>> {
    // Rows scaled so the largest magnitude is 1; duplicated neurons from
    // preprocessing normalize to bit-identical rows.
    let normalized = |w: &[f64], b: f64| -> Option<Vec<f64>> {
        let m = w
            .iter()
            .chain(std::iter::once(&b))
            .fold(0.0f64, |m, v| m.max(v.abs()));
        (m > 0.0).then(|| w.iter().chain(std::iter::once(&b)).map(|v| v / m).collect())
    };
    let hidden = net.hidden_layer_count();
    net.layers()[..hidden]
        .iter()
        .map(|layer| {
            let rows: Vec<Option<Vec<f64>>> = layer
                .weights
                .iter()
                .zip(&layer.biases)
                .map(|(w, &b)| normalized(w, b))
                .collect();
            (0..rows.len())
                .map(|j| match &rows[j] {
                    Some(r) => (0..j).find(|&k| rows[k].as_ref() == Some(r)).unwrap_or(j),
                    None => j,
                })
                .collect()
        })
        .collect()
}

/// Affine pre-activations of every layer under a complete phase pattern.
pub fn pattern_affine(net: &Network, phases: &PhaseAssignment) -> Vec<Vec<Affine>> {
    let n = net.input_size();
    let mut prev: Vec<Affine> = (0..n).map(|k| Affine::variable(n, k)).collect();
    let hidden = net.hidden_layer_count();
    let mut out = Vec::with_capacity(net.layers().len());
    for (i, layer) in net.layers().iter().enumerate() {
        let pre: Vec<Affine> = layer
            .weights
            .iter()
            .zip(&layer.biases)
            .map(|(row, &b)| {
                let mut e = Affine::constant(n, b);
                for (&w, p) in row.iter().zip(&prev) {
                    if w != 0.0 {
                        for (c, pc) in e.coeffs.iter_mut().zip(&p.coeffs) {
                            *c += w * pc;
                        }
                        e.constant += w * p.constant;
                    }
                }
                e
            })
            .collect();
        if i < hidden {
            prev = pre
                .iter()
                .enumerate()
                .map(|(j, e)| match phases.get(i, j) {
                    Phase::Inactive => Affine::constant(n, 0.0),
                    _ => e.clone(),
                })
                .collect();
        }
        out.push(pre);
    }
    out
}

fn leaf_constraints(net: &Network, phases: &PhaseAssignment, target: f64) -> Vec<LinearConstraint> {
    let pre = pattern_affine(net, phases);
    let hidden = net.hidden_layer_count();
    let mut cs = Vec::new();
    for (i, layer) in pre[..hidden].iter().enumerate() {
        for (j, e) in layer.iter().enumerate() {
            match phases.get(i, j) {
                Phase::Active => cs.push(LinearConstraint::ge(e.coeffs.clone(), -e.constant)),
                Phase::Inactive => cs.push(LinearConstraint::le(e.coeffs.clone(), -e.constant)),
                Phase::Unknown => {}
            }
        }
    }
    let out = &pre[hidden][0];
    cs.push(LinearConstraint::ge(
        out.coeffs.clone(),
        target - out.constant,
    ));
    cs
}
