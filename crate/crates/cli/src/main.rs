use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use cegarette::bench::{
    generate_oracle_suite, generate_robustness_suite, read_suite, records_to_csv, run_bench,
    summarize, summary_to_csv, write_suite, BenchOptions, OracleSuiteParams, RobustnessSuiteParams,
};
use cegarette::bounds::{ibp, sbt};
use cegarette::io::{load_query, save_network};
use cegarette::solver::DEFAULT_EPSILON;
use cegarette::verify::verify_observed;
use cegarette::{
    abstract_to_saturation, preprocess, BoundMethod, Error, Mode, SolverOptions, Status,
    VerifyOptions,
};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

const EXIT_USAGE: u8 = 1;
const EXIT_INTERNAL: u8 = 2;
const EXIT_TIMEOUT: u8 = 124;

#[derive(Parser)]
#[command(
    name = "cegarette",
    version,
    about = "Verify ReLU networks by abstraction refinement"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decide a single query.
    Verify(VerifyArgs),
    /// Run every query of a suite in every requested mode.
    Bench(BenchArgs),
    /// Generate a seeded query suite.
    Gen(GenArgs),
    /// Write the categorized network and its saturated abstraction.
    Preprocess(PreprocessArgs),
}

#[derive(clap::Args)]
struct VerifyArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    prop: PathBuf,
    #[arg(long, default_value = "cegarette")]
    mode: Mode,
    #[arg(long, default_value = "sbt")]
    bounds: BoundMethod,
    /// Seconds; no limit when omitted.
    #[arg(long)]
    timeout: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = 1)]
    refine_batch: usize,
    /// JSON result file; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Include IBP and SBT bounds of the original network in the result.
    #[arg(long)]
    dump_bounds: bool,
    /// Include the group provenance of the final abstraction in the result.
    #[arg(long)]
    dump_groups: bool,
}

#[derive(clap::Args)]
struct BenchArgs {
    #[arg(long)]
    suite: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "cegar,cegarette")]
    modes: Vec<Mode>,
    #[arg(long, default_value = "sbt")]
    bounds: BoundMethod,
    #[arg(long, default_value_t = 60.0)]
    timeout: f64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = 1)]
    refine_batch: usize,
    /// Per-run CSV. A `.json` twin and a `.summary.csv` table are written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteKind {
    Oracle,
    Robustness,
}

#[derive(clap::Args)]
struct GenArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "oracle")]
    kind: SuiteKind,
    /// Oracle suite: largest input dimension.
    #[arg(long, default_value_t = 3)]
    max_inputs: usize,
    /// Oracle suite: largest total hidden neuron count.
    #[arg(long, default_value_t = 8)]
    max_hidden: usize,
    /// Robustness suite: input dimension.
    #[arg(long, default_value_t = 4)]
    inputs: usize,
    /// Robustness suite: number of classes.
    #[arg(long, default_value_t = 4)]
    outputs: usize,
    #[arg(long, default_value_t = 2)]
    min_layers: usize,
    #[arg(long, default_value_t = 4)]
    max_layers: usize,
    #[arg(long, default_value_t = 10)]
    min_width: usize,
    #[arg(long, default_value_t = 30)]
    max_width: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.005,0.01,0.02,0.05")]
    radii: Vec<f64>,
}

#[derive(clap::Args)]
struct PreprocessArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    prop: PathBuf,
    /// Directory receiving categorized.json, abstract.json and groups.json.
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::DimensionMismatch { .. }
            | Error::InvalidNetwork(_)
            | Error::InvalidQuery(_)
            | Error::Parse { .. }
            | Error::Io { .. }
            | Error::Unsupported(_) => Failure::Usage(e.to_string()),
            _ => Failure::Internal(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Verify(a) => cmd_verify(a),
        Command::Bench(a) => cmd_bench(a).map(|_| 0),
        Command::Gen(a) => cmd_gen(a).map(|_| 0),
        Command::Preprocess(a) => cmd_preprocess(a).map(|_| 0),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Internal(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_INTERNAL)
        }
    }
}

fn timeout(secs: f64) -> Result<Duration, Failure> {
    Duration::try_from_secs_f64(secs).map_err(|_| Failure::Usage(format!("invalid timeout {secs}")))
}

fn check_epsilon(eps: f64) -> Result<(), Failure> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Failure::Usage(format!(
            "epsilon must be positive, got {eps}"
        )))
    }
}

fn write_text(path: &PathBuf, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text)
        .map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))
}

fn cmd_verify(a: VerifyArgs) -> Result<u8, Failure> {
    check_epsilon(a.epsilon)?;
    if a.refine_batch == 0 {
        return Err(Failure::Usage("--refine-batch must be at least 1".into()));
    }
    let query = load_query(&a.net, &a.prop)?;
    let opts = VerifyOptions {
        mode: a.mode,
        bounds: a.bounds,
        solver: SolverOptions {
            epsilon: a.epsilon,
            timeout: a.timeout.map(timeout).transpose()?,
            check_pruning: false,
        },
        refine_batch: a.refine_batch,
    };
    let mut last_groups = None;
    let (verdict, stats) = verify_observed(&query, &opts, &mut |state| {
        if a.dump_groups {
            last_groups = Some(state.provenance());
        }
    })?;
    let mut doc = json!({
        "status": verdict.status,
        "witness": verdict.witness,
        "witness_output": verdict
            .witness
            .as_ref()
            .map(|x| query.network.evaluate_scalar(x))
            .transpose()?,
        "solver": verdict.stats,
        "run": stats,
    });
    if a.dump_bounds {
        doc["bounds"] = json!({
            "ibp": ibp(&query.network, &query.input),
            "sbt": sbt(&query.network, &query.input).concrete,
        });
    }
    if let Some(groups) = last_groups {
        doc["groups"] = json!(groups);
    }
    let text = serde_json::to_string_pretty(&doc).expect("result serialization") + "\n";
    match &a.out {
        Some(p) => write_text(p, &text)?,
        None => print!("{text}"),
    }
    eprintln!("{}", verdict.status);
    Ok(if verdict.status == Status::Timeout {
        EXIT_TIMEOUT
    } else {
        0
    })
}

fn cmd_bench(a: BenchArgs) -> Result<(), Failure> {
    check_epsilon(a.epsilon)?;
    if a.modes.is_empty() {
        return Err(Failure::Usage("--modes must name at least one mode".into()));
    }
    let entries = read_suite(&a.suite)?;
    let opts = BenchOptions {
        modes: a.modes.clone(),
        bounds: a.bounds,
        timeout: Some(timeout(a.timeout)?),
        epsilon: a.epsilon,
        refine_batch: a.refine_batch.max(1),
        jobs: a.jobs,
    };
    let records = run_bench(&entries, &opts)?;
    let rows = summarize(&records, &a.modes);
    write_text(&a.out, &records_to_csv(&records)?)?;
    let json_path = a.out.with_extension("json");
    let json_text = serde_json::to_string_pretty(&json!({
        "records": records,
        "summary": rows,
    }))
    .expect("records serialization")
        + "\n";
    write_text(&json_path, &json_text)?;
    let summary = summary_to_csv(&rows)?;
    write_text(&a.out.with_extension("summary.csv"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_gen(a: GenArgs) -> Result<(), Failure> {
    let (entries, kind) = match a.kind {
        SuiteKind::Oracle => {
            if a.max_inputs == 0 || a.max_hidden == 0 {
                return Err(Failure::Usage("shape parameters must be positive".into()));
            }
            let params = OracleSuiteParams {
                max_inputs: a.max_inputs,
                max_hidden_layers: 3.min(a.max_hidden),
                max_hidden_neurons: a.max_hidden,
                ..OracleSuiteParams::default()
            };
            (generate_oracle_suite(a.seed, a.count, &params)?, "oracle")
        }
        SuiteKind::Robustness => {
            if a.inputs == 0
                || a.outputs < 2
                || a.min_layers == 0
                || a.min_layers > a.max_layers
                || a.min_width == 0
                || a.min_width > a.max_width
                || a.radii.is_empty()
            {
                return Err(Failure::Usage("inconsistent shape parameters".into()));
            }
            let params = RobustnessSuiteParams {
                inputs: a.inputs,
                outputs: a.outputs,
                hidden_layers: (a.min_layers, a.max_layers),
                width: (a.min_width, a.max_width),
                radii: a.radii.clone(),
                ..RobustnessSuiteParams::default()
            };
            (
                generate_robustness_suite(a.seed, a.count, &params)?,
                "robustness",
            )
        }
    };
    write_suite(&a.out, a.seed, kind, &entries)?;
    eprintln!("wrote {} queries to {}", entries.len(), a.out.display());
    Ok(())
}

fn cmd_preprocess(a: PreprocessArgs) -> Result<(), Failure> {
    let query = load_query(&a.net, &a.prop)?;
    let base = std::sync::Arc::new(preprocess(&query.network)?);
    std::fs::create_dir_all(&a.out)
        .map_err(|e| Failure::Usage(format!("cannot create {}: {e}", a.out.display())))?;
    save_network(&base.network, a.out.join("categorized.json"))?;
    let state = abstract_to_saturation(base.clone(), &query.input);
    save_network(state.network(), a.out.join("abstract.json"))?;
    let sidecar = json!({
        "categories": base.categories,
        "origin": base.origin,
        "groups": state.provenance(),
    });
    write_text(
        &a.out.join("groups.json"),
        &(serde_json::to_string_pretty(&sidecar).expect("sidecar serialization") + "\n"),
    )
}
