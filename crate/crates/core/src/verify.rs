//! Verification loops: direct solving, network-only abstraction refinement,
//! and abstraction refinement with property tightening.
//!
//! Both abstraction loops start from the saturated abstraction of the
//! categorized network, solve the abstract query, and check any satisfying
//! input against the original query. A spurious input drives one refinement
//! step. With tightening enabled the abstract threshold is recomputed from
//! scratch against the original network after every refinement.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::abstraction::{abstract_to_saturation, AbstractionState};
use crate::bounds::BoundMethod;
use crate::error::{Error, Result};
use crate::network::{OutputProperty, Query};
use crate::preprocess::preprocess;
use crate::solver::{solve_until, SolveStats, SolverOptions, Status, Verdict};
use crate::tightening::tighten_property;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Direct,
    Cegar,
    Cegarette,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Direct, Mode::Cegar, Mode::Cegarette];
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "direct" => Ok(Mode::Direct),
            "cegar" => Ok(Mode::Cegar),
            "cegarette" => Ok(Mode::Cegarette),
            other => Err(format!(
                "unknown mode {other:?} (expected direct, cegar or cegarette)"
            )),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Direct => "direct",
            Mode::Cegar => "cegar",
            Mode::Cegarette => "cegarette",
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub mode: Mode,
    /// Bound method used for property tightening.
    pub bounds: BoundMethod,
    pub solver: SolverOptions,
    /// Constituents split out per refinement step.
    pub refine_batch: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            mode: Mode::Cegarette,
            bounds: BoundMethod::Sbt,
            solver: SolverOptions::default(),
            refine_batch: 1,
        }
    }
}

impl VerifyOptions {
    pub fn with_mode(mode: Mode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStats {
    pub mode: Mode,
    pub iterations: usize,
    pub refinement_steps: usize,
    /// `sum_g (|g| - 1)` of the initial abstraction (0 in direct mode).
    pub initial_merge_excess: usize,
    /// Hidden layer sizes of the network solved in each iteration.
    pub abstract_hidden_sizes: Vec<Vec<usize>>,
    /// Threshold of the query solved in each iteration.
    pub thresholds: Vec<f64>,
    pub solver_time_ms: Vec<f64>,
    pub total_time_ms: f64,
    pub verdict: Status,
}

pub fn verify(query: &Query, opts: &VerifyOptions) -> Result<(Verdict, RunStats)> {
    verify_observed(query, opts, &mut |_| {})
}

pub fn verify_direct(query: &Query, opts: &VerifyOptions) -> Result<(Verdict, RunStats)> {
    verify(
        query,
        &VerifyOptions {
            mode: Mode::Direct,
            ..*opts
        },
    )
}

pub fn verify_cegar(query: &Query, opts: &VerifyOptions) -> Result<(Verdict, RunStats)> {
    verify(
        query,
        &VerifyOptions {
            mode: Mode::Cegar,
            ..*opts
        },
    )
}

pub fn verify_cegarette(query: &Query, opts: &VerifyOptions) -> Result<(Verdict, RunStats)> {
    verify(
        query,
        &VerifyOptions {
            mode: Mode::Cegarette,
            ..*opts
        },
    )
}

/// Runs the selected loop, handing every abstraction state it constructs to
/// `observer`.
pub fn verify_observed(
    query: &Query,
    opts: &VerifyOptions,
    observer: &mut dyn FnMut(&AbstractionState),
) -> Result<(Verdict, RunStats)> {
    let start = Instant::now();
    let deadline = opts.solver.timeout.map(|t| start + t);
    let mut stats = RunStats {
        mode: opts.mode,
        iterations: 0,
        refinement_steps: 0,
        initial_merge_excess: 0,
        abstract_hidden_sizes: Vec::new(),
        thresholds: Vec::new(),
        solver_time_ms: Vec::new(),
        total_time_ms: 0.0,
        verdict: Status::Timeout,
    };
    let mut totals = SolveStats::default();

    if opts.mode == Mode::Direct {
        let v = solve_until(query, &opts.solver, deadline)?;
        stats.iterations = 1;
        stats
            .abstract_hidden_sizes
            .push(query.network.hidden_sizes());
        stats.thresholds.push(query.output.threshold);
        stats.solver_time_ms.push(v.stats.time_ms);
        stats.verdict = v.status;
        stats.total_time_ms = ms(start.elapsed());
        return Ok((v, stats));
    }

    let base = Arc::new(preprocess(&query.network)?);
    let mut state = abstract_to_saturation(base, &query.input);
    observer(&state);
    stats.initial_merge_excess = state.merge_excess();
    let tighten = opts.mode == Mode::Cegarette;
    let threshold_for = |state: &AbstractionState| -> OutputProperty {
        if tighten {
            tighten_property(
                state.network(),
                &query.network,
                &query.input,
                query.output,
                opts.bounds,
            )
        } else {
            query.output
        }
    };
    let mut property = threshold_for(&state);

    let outcome = loop {
        stats.iterations += 1;
        stats.abstract_hidden_sizes.push(state.hidden_sizes());
        stats.thresholds.push(property.threshold);
        let abstract_query = Query::new(state.network().clone(), query.input.clone(), property)?;
        let v = solve_until(&abstract_query, &opts.solver, deadline)?;
        stats.solver_time_ms.push(v.stats.time_ms);
        accumulate(&mut totals, &v.stats);
        match v.status {
            Status::Unsat => break (Status::Unsat, None),
            Status::Timeout => break (Status::Timeout, None),
            Status::Sat => {}
        }
        let x0 = v
            .witness
            .ok_or_else(|| Error::Internal("SAT verdict without a witness".into()))?;
        if query.output.holds(query.network.evaluate_scalar(&x0)?) {
            break (Status::Sat, Some(x0));
        }
        if deadline.is_some_and(|d| Instant::now() >= d) {
            break (Status::Timeout, None);
        }
        state = state.refine_split(&x0, opts.refine_batch)?;
        observer(&state);
        stats.refinement_steps += 1;
        property = threshold_for(&state);
    };

    if stats.iterations > 1 + stats.initial_merge_excess {
        return Err(Error::Internal(format!(
            "loop ran {} iterations with an initial merge excess of {}",
            stats.iterations, stats.initial_merge_excess
        )));
    }
    stats.verdict = outcome.0;
    stats.total_time_ms = ms(start.elapsed());
    totals.time_ms = stats.total_time_ms;
    Ok((
        Verdict {
            status: outcome.0,
            witness: outcome.1,
            stats: totals,
        },
        stats,
    ))
}

fn accumulate(total: &mut SolveStats, s: &SolveStats) {
    total.nodes += s.nodes;
    total.leaves += s.leaves;
    total.pruned_by_bound += s.pruned_by_bound;
    total.pruned_infeasible += s.pruned_infeasible;
    total.pruning_violations += s.pruning_violations;
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}
