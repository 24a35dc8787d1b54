//! Benchmark harness: robustness reduction, seeded suite generation, batch
//! runs and Table-style aggregation.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::BoundMethod;
use crate::error::{Error, Result};
use crate::io::{load_network, load_property, save_network, save_property, PropertyFile};
use crate::network::{InputBox, Layer, Network, OutputProperty, Query};
use crate::oracle::max_output;
use crate::random::{random_box, random_hidden_sizes, random_network, sample_box};
use crate::solver::{SolverOptions, Status};
use crate::verify::{verify, Mode, VerifyOptions};

/// Local robustness around `center`: every input within `radius` (per
/// coordinate) must keep the classification `label`.
#[derive(Debug, Clone)]
pub struct RobustnessSpec {
    pub network: Network,
    pub center: Vec<f64>,
    pub radius: f64,
    pub label: usize,
}

impl RobustnessSpec {
    pub fn new(network: Network, center: Vec<f64>, radius: f64, label: usize) -> Result<Self> {
        if radius.is_nan() || radius < 0.0 || radius.is_infinite() {
            return Err(Error::InvalidQuery(format!("radius {radius} must be >= 0")));
        }
        if label >= network.output_size() {
            return Err(Error::InvalidQuery(format!(
                "label {label} out of range for {} outputs",
                network.output_size()
            )));
        }
        if center.len() != network.input_size() {
            return Err(Error::DimensionMismatch {
                expected: network.input_size(),
                actual: center.len(),
            });
        }
        Ok(Self {
            network,
            center,
            radius,
            label,
        })
    }

    /// The δ-ball clipped to the network's input domain (`[0, 1]^n` when the
    /// network does not declare one).
    pub fn input_box(&self) -> InputBox {
        let n = self.network.input_size();
        let (dlo, dhi) = match self.network.input_domain() {
            Some(d) => (d.lower.clone(), d.upper.clone()),
            None => (vec![0.0; n], vec![1.0; n]),
        };
        let mut lower = Vec::with_capacity(n);
        let mut upper = Vec::with_capacity(n);
        for k in 0..n {
            let lo = (self.center[k] - self.radius).max(dlo[k]);
            let hi = (self.center[k] + self.radius).min(dhi[k]);
            // A center outside the domain collapses to the nearest face.
            let (lo, hi) = if lo > hi {
                let c = self.center[k].clamp(dlo[k], dhi[k]);
                (c, c)
            } else {
                (lo, hi)
            };
            lower.push(lo);
            upper.push(hi);
        }
        InputBox { lower, upper }
    }

    /// Whether every sample in the box keeps the label.
    pub fn survives_sampling<R: Rng + ?Sized>(&self, rng: &mut R, samples: usize) -> Result<bool> {
        let b = self.input_box();
        for _ in 0..samples {
            let x = sample_box(rng, &b);
            if argmax(&self.network.evaluate(&x)?) != self.label {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| {
            if x > bv {
                (i, x)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// One single-output query per competing label `j`, asking whether
/// `z_j - z_label > 0` somewhere in the box. The spec is robust iff all of
/// them are UNSAT.
///
/// The difference is folded into the output layer, which is already affine.
pub fn reduce_to_single_output(spec: &RobustnessSpec) -> Result<Vec<Query>> {
    let input = spec.input_box();
    let layers = spec.network.layers();
    let last = layers.last().expect("validated network");
    let t = spec.label;
    let mut out = Vec::new();
    for j in 0..spec.network.output_size() {
        if j == t {
            continue;
        }
        let row: Vec<f64> = last.weights[j]
            .iter()
            .zip(&last.weights[t])
            .map(|(a, b)| a - b)
            .collect();
        let bias = last.biases[j] - last.biases[t];
        let mut new_layers = layers[..layers.len() - 1].to_vec();
        new_layers.push(Layer::new(vec![row], vec![bias], last.activation));
        let mut net = Network::new(spec.network.input_size(), new_layers)?;
        if let Some(d) = spec.network.input_domain() {
            net = net.with_input_domain(d.clone())?;
        }
        out.push(Query::new(net, input.clone(), OutputProperty::new(0.0))?);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub id: String,
    pub query: Query,
    /// Ground truth, when known.
    pub label: Option<Status>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    network: String,
    property: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    expected: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    seed: u64,
    kind: String,
    queries: Vec<ManifestEntry>,
}

/// Shape of oracle-labeled queries on small networks.
#[derive(Debug, Clone)]
pub struct OracleSuiteParams {
    pub max_inputs: usize,
    pub max_hidden_layers: usize,
    pub max_hidden_neurons: usize,
    /// Probability that a box lies in the nonnegative orthant.
    pub nonnegative_prob: f64,
}

impl Default for OracleSuiteParams {
    fn default() -> Self {
        Self {
            max_inputs: 3,
            max_hidden_layers: 3,
            max_hidden_neurons: 8,
            nonnegative_prob: 0.5,
        }
    }
}

/// Random small queries whose verdicts come from the exhaustive oracle.
///
/// The threshold sits a random margin below (SAT) or above (UNSAT) the exact
/// maximum of the network over the box. The smallest margin is still well
/// above the solver tolerance, so no verdict hinges on it.
pub fn generate_oracle_suite(
    seed: u64,
    count: usize,
    params: &OracleSuiteParams,
) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let inputs = rng.gen_range(1..=params.max_inputs);
        let depth = rng.gen_range(1..=params.max_hidden_layers);
        let hidden = random_hidden_sizes(&mut rng, depth, params.max_hidden_neurons.max(depth));
        let net = random_network(&mut rng, inputs, &hidden, 1);
        let nonneg = rng.gen_bool(params.nonnegative_prob);
        let input = random_box(&mut rng, inputs, nonneg);
        let max = max_output(&net, &input)?;
        let scale = max.value.abs().max(0.1);
        // Log-uniform margin, from near-ties up to a third of the scale.
        let margin = scale * 10f64.powf(rng.gen_range(-4.0..-0.5));
        let sat = rng.gen_bool(0.5);
        let threshold = if sat {
            max.value - margin
        } else {
            max.value + margin
        };
        let query = Query::new(net, input, OutputProperty::new(threshold))?;
        out.push(SuiteEntry {
            id: format!("oracle-{i:04}"),
            query,
            label: Some(if sat { Status::Sat } else { Status::Unsat }),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RobustnessSuiteParams {
    pub inputs: usize,
    pub outputs: usize,
    pub hidden_layers: (usize, usize),
    pub width: (usize, usize),
    pub radii: Vec<f64>,
    /// Samples that must all keep the label before a spec is kept.
    pub samples: usize,
}

impl Default for RobustnessSuiteParams {
    fn default() -> Self {
        Self {
            inputs: 4,
            outputs: 4,
            hidden_layers: (2, 4),
            width: (10, 30),
            radii: vec![0.005, 0.01, 0.02, 0.05],
            samples: 10_000,
        }
    }
}

/// Robustness queries around random centers of random classifiers. Specs
/// with a misclassified random sample in the ball are discarded. `count`
/// counts emitted single-output queries.
pub fn generate_robustness_suite(
    seed: u64,
    count: usize,
    params: &RobustnessSuiteParams,
) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut spec_id = 0;
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > 100 * count.max(1) {
            return Err(Error::Internal(
                "could not generate enough robust specifications".into(),
            ));
        }
        let depth = rng.gen_range(params.hidden_layers.0..=params.hidden_layers.1);
        let hidden: Vec<usize> = (0..depth)
            .map(|_| rng.gen_range(params.width.0..=params.width.1))
            .collect();
        let net = random_network(&mut rng, params.inputs, &hidden, params.outputs);
        let center: Vec<f64> = (0..params.inputs)
            .map(|_| rng.gen_range(0.0..1.0))
            .collect();
        let radius = params.radii[rng.gen_range(0..params.radii.len())];
        let label = argmax(&net.evaluate(&center)?);
        let spec = RobustnessSpec::new(net, center, radius, label)?;
        if !spec.survives_sampling(&mut rng, params.samples)? {
            continue;
        }
        let label_of = |q: &Query| -> Result<Option<Status>> {
            if q.network.hidden_neuron_count() <= 8 {
                let m = max_output(&q.network, &q.input)?;
                Ok(Some(if m.value > q.output.threshold {
                    Status::Sat
                } else {
                    Status::Unsat
                }))
            } else {
                Ok(None)
            }
        };
        for (j, query) in reduce_to_single_output(&spec)?.into_iter().enumerate() {
            if out.len() == count {
                break;
            }
            let label = label_of(&query)?;
            out.push(SuiteEntry {
                id: format!("rob-{spec_id:04}-{j}"),
                query,
                label,
            });
        }
        spec_id += 1;
    }
    Ok(out)
}

fn status_name(s: Status) -> String {
    s.to_string()
}

fn parse_status(s: &str) -> Result<Status> {
    match s {
        "SAT" => Ok(Status::Sat),
        "UNSAT" => Ok(Status::Unsat),
        other => Err(Error::InvalidQuery(format!(
            "unknown expected verdict {other:?}"
        ))),
    }
}

/// Writes a suite as `manifest.json` plus one network and one property file
/// per query.
pub fn write_suite(
    dir: impl AsRef<Path>,
    seed: u64,
    kind: &str,
    entries: &[SuiteEntry],
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Manifest {
        seed,
        kind: kind.to_string(),
        queries: Vec::with_capacity(entries.len()),
    };
    for e in entries {
        let net_name = format!("{}.net.json", e.id);
        let prop_name = format!("{}.prop.json", e.id);
        save_network(&e.query.network, dir.join(&net_name))?;
        save_property(
            &PropertyFile::from_parts(&e.query.input, e.query.output),
            dir.join(&prop_name),
        )?;
        manifest.queries.push(ManifestEntry {
            id: e.id.clone(),
            network: net_name,
            property: prop_name,
            expected: e.label.map(status_name),
        });
    }
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serialization");
    text.push('\n');
    let path = dir.join("manifest.json");
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

pub fn read_suite(dir: impl AsRef<Path>) -> Result<Vec<SuiteEntry>> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.to_string()))?;
    manifest
        .queries
        .into_iter()
        .map(|m| {
            let network = load_network(dir.join(&m.network))?;
            let (input, output) = load_property(dir.join(&m.property))?.into_parts()?;
            Ok(SuiteEntry {
                id: m.id,
                query: Query::new(network, input, output)?,
                label: m.expected.as_deref().map(parse_status).transpose()?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkRecord {
    pub query_id: String,
    pub mode: Mode,
    /// `SAT`, `UNSAT`, `TIMEOUT` or `ERROR`.
    pub verdict: String,
    pub refinements: usize,
    pub iterations: usize,
    pub time_ms: f64,
    pub timeout: bool,
    /// Merge excess of the initial abstraction (JSON only).
    pub initial_merge_excess: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl BenchmarkRecord {
    pub fn finished(&self) -> bool {
        self.verdict == "SAT" || self.verdict == "UNSAT"
    }
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub modes: Vec<Mode>,
    pub bounds: BoundMethod,
    pub timeout: Option<Duration>,
    pub epsilon: f64,
    pub refine_batch: usize,
    pub jobs: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            modes: vec![Mode::Cegar, Mode::Cegarette],
            bounds: BoundMethod::Sbt,
            timeout: Some(Duration::from_secs(60)),
            epsilon: crate::solver::DEFAULT_EPSILON,
            refine_batch: 1,
            jobs: 1,
        }
    }
}

/// Runs every (query, mode) pair. Failures are recorded, not propagated.
/// Records come back ordered by suite position, then by the order of `modes`.
pub fn run_bench(entries: &[SuiteEntry], opts: &BenchOptions) -> Result<Vec<BenchmarkRecord>> {
    let pairs: Vec<(usize, Mode)> = (0..entries.len())
        .flat_map(|i| opts.modes.iter().map(move |&m| (i, m)))
        .collect();
    let run_one = |&(i, mode): &(usize, Mode)| -> BenchmarkRecord {
        let e = &entries[i];
        let vopts = VerifyOptions {
            mode,
            bounds: opts.bounds,
            solver: SolverOptions {
                epsilon: opts.epsilon,
                timeout: opts.timeout,
                check_pruning: false,
            },
            refine_batch: opts.refine_batch,
        };
        let start = std::time::Instant::now();
        match verify(&e.query, &vopts) {
            Ok((v, s)) => BenchmarkRecord {
                query_id: e.id.clone(),
                mode,
                verdict: v.status.to_string(),
                refinements: s.refinement_steps,
                iterations: s.iterations,
                time_ms: s.total_time_ms,
                timeout: v.status == Status::Timeout,
                initial_merge_excess: s.initial_merge_excess,
                error: None,
            },
            Err(err) => BenchmarkRecord {
                query_id: e.id.clone(),
                mode,
                verdict: "ERROR".into(),
                refinements: 0,
                iterations: 0,
                time_ms: start.elapsed().as_secs_f64() * 1e3,
                timeout: false,
                initial_merge_excess: 0,
                error: Some(err.to_string()),
            },
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    Ok(pool.install(|| pairs.par_iter().map(run_one).collect()))
}

/// Per-mode counts in the layout of the comparison table: timeouts, finished
/// runs, and, over queries finished by every mode, how often the mode was
/// strictly fastest and how often it used strictly the fewest refinements.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub mode: Mode,
    pub timeout: usize,
    pub finished: usize,
    pub errors: usize,
    pub faster: usize,
    pub fewer_refinements: usize,
    pub total_refinements: usize,
}

pub fn summarize(records: &[BenchmarkRecord], modes: &[Mode]) -> Vec<SummaryRow> {
    let mut by_query: BTreeMap<&str, Vec<&BenchmarkRecord>> = BTreeMap::new();
    for r in records {
        by_query.entry(&r.query_id).or_default().push(r);
    }
    let mut rows: Vec<SummaryRow> = modes
        .iter()
        .map(|&mode| {
            let mine = records.iter().filter(|r| r.mode == mode);
            SummaryRow {
                mode,
                timeout: mine.clone().filter(|r| r.timeout).count(),
                finished: mine.clone().filter(|r| r.finished()).count(),
                errors: mine.clone().filter(|r| r.verdict == "ERROR").count(),
                faster: 0,
                fewer_refinements: 0,
                total_refinements: mine.filter(|r| r.finished()).map(|r| r.refinements).sum(),
            }
        })
        .collect();
    for recs in by_query.values() {
        let all_done = modes
            .iter()
            .all(|m| recs.iter().any(|r| r.mode == *m && r.finished()));
        if !all_done || modes.len() < 2 {
            continue;
        }
        let winner = |key: &dyn Fn(&BenchmarkRecord) -> f64| -> Option<Mode> {
            let mut sorted: Vec<(f64, Mode)> = recs
                .iter()
                .filter(|r| modes.contains(&r.mode))
                .map(|r| (key(r), r.mode))
                .collect();
            sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
            (sorted[0].0 < sorted[1].0).then_some(sorted[0].1)
        };
        if let Some(m) = winner(&|r| r.time_ms) {
            rows.iter_mut().find(|row| row.mode == m).unwrap().faster += 1;
        }
        if let Some(m) = winner(&|r| r.refinements as f64) {
            rows.iter_mut()
                .find(|row| row.mode == m)
                .unwrap()
                .fewer_refinements += 1;
        }
    }
    rows
}

pub const CSV_HEADER: [&str; 7] = [
    "query_id",
    "mode",
    "verdict",
    "refinements",
    "iterations",
    "time_ms",
    "timeout",
];

pub fn records_to_csv(records: &[BenchmarkRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io_err = |e: csv::Error| Error::Internal(format!("csv: {e}"));
    w.write_record(CSV_HEADER).map_err(io_err)?;
    for r in records {
        w.write_record([
            r.query_id.clone(),
            r.mode.to_string(),
            r.verdict.clone(),
            r.refinements.to_string(),
            r.iterations.to_string(),
            format!("{:.3}", r.time_ms),
            r.timeout.to_string(),
        ])
        .map_err(io_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Internal(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn summary_to_csv(rows: &[SummaryRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io_err = |e: csv::Error| Error::Internal(format!("csv: {e}"));
    w.write_record([
        "mode",
        "timeout",
        "finished",
        "faster_verification_time",
        "fewer_refinement_steps",
        "total_refinements",
        "errors",
    ])
    .map_err(io_err)?;
    for r in rows {
        w.write_record([
            r.mode.to_string(),
            r.timeout.to_string(),
            r.finished.to_string(),
            r.faster.to_string(),
            r.fewer_refinements.to_string(),
            r.total_refinements.to_string(),
            r.errors.to_string(),
        ])
        .map_err(io_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Internal(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
