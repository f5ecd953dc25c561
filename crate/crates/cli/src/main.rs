//! Command-line front end.
//!
//! `fvaal run` executes every cell of a TOML experiment plan and writes
//! per-cell round CSVs, final models, an accuracy-curve SVG, and a summary
//! table; `fvaal report` rebuilds the summary artifacts from existing
//! CSVs; `fvaal verify-one` verifies a single test sample against a saved
//! model and prints the harvest verdict sequence; `fvaal bench` times the
//! solver on seeded random networks.
//!
//! Exit codes: 0 on success, 1 on runtime failures, 2 on configuration or
//! usage errors. When `FVAAL_DATA_DIR` is set, relative dataset paths in
//! the plan resolve against it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand};

use fvaal_core::config::{self, Plan};
use fvaal_core::engine::{self, RoundRecord, RunOutput};
use fvaal_core::metrics::{self, CurvePoint, SummaryRow};
use fvaal_core::verifier::{self, HarvestParams, TraceOutcome};
use fvaal_core::{nn, Model, Pool};

#[derive(Parser)]
#[command(
    name = "fvaal",
    version,
    about = "Verification-driven active-learning experiments"
)]
struct Cli {
    /// Worker threads for candidate scoring and harvesting (default: all
    /// cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Per-round progress lines on standard error.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of an experiment plan.
    Run {
        /// Experiment plan (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for CSVs, models, and reports.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the plan's base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the per-query verification time limit.
        #[arg(long)]
        time_limit_secs: Option<f64>,
    },
    /// Rebuild summary.txt and curves.svg from an output directory.
    Report {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Verify one test sample against a saved model and print the harvest
    /// verdict sequence.
    VerifyOne {
        /// Experiment plan naming the dataset.
        #[arg(long)]
        config: PathBuf,
        /// Saved model file.
        #[arg(long)]
        model: PathBuf,
        /// Index into the test split.
        #[arg(long)]
        index: usize,
        /// Initial perturbation radius.
        #[arg(long)]
        eps: f64,
        /// Number of distinct counterexamples to request.
        #[arg(long)]
        k: usize,
        /// Override the plan's per-query time limit.
        #[arg(long)]
        time_limit_secs: Option<f64>,
    },
    /// Time solver node throughput on seeded random networks.
    Bench {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Total verification budget to spend.
        #[arg(long, default_value_t = 10.0)]
        time_limit_secs: f64,
    },
}

/// An error carrying its process exit code: 2 for configuration/usage
/// problems, 1 for runtime failures.
struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
        }
    }
}

/// Maps core errors in the configuration phase (plan parsing, dataset and
/// model loading, parameter validation) to exit code 2.
fn cfg_err(e: fvaal_core::Error) -> CliError {
    CliError::config(e.to_string())
}

/// Maps core errors during experiment execution or artifact writing to
/// exit code 1.
fn run_err(e: fvaal_core::Error) -> CliError {
    CliError::runtime(e.to_string())
}

fn main() {
    let cli = Cli::parse();
    if let Some(workers) = cli.workers {
        // Ignore failure: the global pool can only be sized once.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
    let result = match cli.command {
        Command::Run {
            config,
            out,
            seed,
            time_limit_secs,
        } => cmd_run(&config, &out, seed, time_limit_secs, cli.verbose),
        Command::Report { out } => cmd_report(&out),
        Command::VerifyOne {
            config,
            model,
            index,
            eps,
            k,
            time_limit_secs,
        } => cmd_verify_one(&config, &model, index, eps, k, time_limit_secs),
        Command::Bench {
            seed,
            time_limit_secs,
        } => cmd_bench(seed, time_limit_secs),
    };
    if let Err(e) = result {
        eprintln!("error: {}", e.message);
        std::process::exit(e.code);
    }
}

fn parse_time_limit(secs: f64) -> Result<Duration, CliError> {
    if !(secs.is_finite() && secs > 0.0 && secs <= 1e9) {
        return Err(CliError::config(format!(
            "time limit must be a positive number of seconds, got {secs}"
        )));
    }
    Ok(Duration::from_secs_f64(secs))
}

fn data_root() -> Option<PathBuf> {
    std::env::var_os("FVAAL_DATA_DIR").map(PathBuf::from)
}

fn load_plan_and_data(
    config: &Path,
    seed: Option<u64>,
    time_limit_secs: Option<f64>,
    verbose: bool,
) -> Result<(Plan, Pool, Pool), CliError> {
    let mut plan = config::load_plan(config).map_err(cfg_err)?;
    let time_limit = time_limit_secs.map(parse_time_limit).transpose()?;
    for cell in &mut plan.cells {
        if let Some(s) = seed {
            cell.config.seed = s;
        }
        if let Some(t) = time_limit {
            cell.config.harvest.time_limit = t;
        }
        cell.config.progress = verbose;
    }
    let root = data_root();
    let (train, test) = config::load_datasets(&plan.dataset, root.as_deref()).map_err(cfg_err)?;
    Ok((plan, train, test))
}

fn curve_of(records: &[RoundRecord]) -> Vec<CurvePoint> {
    records
        .iter()
        .map(|r| CurvePoint {
            budget: r.labeled as f64,
            accuracy: r.accuracy,
        })
        .collect()
}

/// Area under a run's accuracy curve; a single-point curve (zero-round
/// experiments) degenerates to its accuracy.
fn aubc_of(records: &[RoundRecord]) -> Result<f64, CliError> {
    if records.len() == 1 {
        return Ok(records[0].accuracy);
    }
    metrics::aubc(&curve_of(records)).map_err(run_err)
}

/// Pointwise mean accuracy curve across a cell's runs (truncated to the
/// shortest run when early stops differ).
fn mean_curve(per_run: &[Vec<RoundRecord>]) -> Vec<CurvePoint> {
    let rounds = per_run.iter().map(|r| r.len()).min().unwrap_or(0);
    (0..rounds)
        .map(|i| CurvePoint {
            budget: per_run[0][i].labeled as f64,
            accuracy: per_run.iter().map(|r| r[i].accuracy).sum::<f64>() / per_run.len() as f64,
        })
        .collect()
}

fn summary_row(label: &str, per_run: &[Vec<RoundRecord>], runs: &[RunOutput]) -> Result<SummaryRow, CliError> {
    let mut aubc_sum = 0.0;
    for records in per_run {
        aubc_sum += aubc_of(records)?;
    }
    let final_accuracy_mean = per_run
        .iter()
        .map(|r| r.last().map_or(0.0, |rec| rec.accuracy))
        .sum::<f64>()
        / per_run.len() as f64;
    let diversities: Vec<_> = runs.iter().filter_map(|r| r.diversity).collect();
    let diversity = if diversities.is_empty() {
        None
    } else {
        Some(metrics::aggregate_runs(&diversities).map_err(run_err)?)
    };
    Ok(SummaryRow {
        label: label.to_string(),
        aubc_mean: aubc_sum / per_run.len() as f64,
        final_accuracy_mean,
        diversity,
    })
}

fn write_reports(
    out: &Path,
    rows: &[SummaryRow],
    curves: &[(String, Vec<CurvePoint>)],
) -> Result<(), CliError> {
    metrics::render_curves_svg(curves, &out.join("curves.svg")).map_err(run_err)?;
    let summary = metrics::format_summary(rows).map_err(run_err)?;
    fs::write(out.join("summary.txt"), &summary)
        .map_err(|e| CliError::runtime(format!("cannot write summary: {e}")))?;
    print!("{summary}");
    Ok(())
}

fn cmd_run(
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    time_limit_secs: Option<f64>,
    verbose: bool,
) -> Result<(), CliError> {
    let (plan, train, test) = load_plan_and_data(config, seed, time_limit_secs, verbose)?;
    let models_dir = out.join("models");
    fs::create_dir_all(&models_dir)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", models_dir.display())))?;

    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for cell in &plan.cells {
        if verbose {
            eprintln!("=== cell {} ===", cell.name);
        }
        let runs = engine::run_experiment(&cell.config, &train, &test).map_err(run_err)?;
        let all_records: Vec<RoundRecord> =
            runs.iter().flat_map(|r| r.records.iter().cloned()).collect();
        metrics::write_csv(&all_records, &out.join(format!("{}.csv", cell.name)))
            .map_err(run_err)?;
        for run in &runs {
            nn::save_model(
                &run.final_model,
                &models_dir.join(format!("{}_run{}.bin", cell.name, run.run)),
            )
            .map_err(run_err)?;
        }
        let per_run: Vec<Vec<RoundRecord>> = runs.iter().map(|r| r.records.clone()).collect();
        rows.push(summary_row(&cell.name, &per_run, &runs)?);
        curves.push((cell.name.clone(), mean_curve(&per_run)));
    }
    write_reports(out, &rows, &curves)
}

fn cmd_report(out: &Path) -> Result<(), CliError> {
    let entries = fs::read_dir(out)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", out.display())))?;
    let mut csvs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    csvs.sort();
    if csvs.is_empty() {
        return Err(CliError::config(format!(
            "no round CSVs found in {}",
            out.display()
        )));
    }
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for path in &csvs {
        let records = metrics::read_csv(path).map_err(cfg_err)?;
        let mut by_run: BTreeMap<usize, Vec<RoundRecord>> = BTreeMap::new();
        for r in records {
            by_run.entry(r.run).or_default().push(r);
        }
        let per_run: Vec<Vec<RoundRecord>> = by_run.into_values().collect();
        if per_run.is_empty() {
            continue;
        }
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        // Diversity is not part of the CSV schema, so rebuilt summaries
        // leave that column blank.
        let mut aubc_sum = 0.0;
        for records in &per_run {
            aubc_sum += aubc_of(records)?;
        }
        let final_accuracy_mean = per_run
            .iter()
            .map(|r| r.last().map_or(0.0, |rec| rec.accuracy))
            .sum::<f64>()
            / per_run.len() as f64;
        rows.push(SummaryRow {
            label: label.clone(),
            aubc_mean: aubc_sum / per_run.len() as f64,
            final_accuracy_mean,
            diversity: None,
        });
        curves.push((label, mean_curve(&per_run)));
    }
    write_reports(out, &rows, &curves)
}

fn cmd_verify_one(
    config: &Path,
    model_path: &Path,
    index: usize,
    eps: f64,
    k: usize,
    time_limit_secs: Option<f64>,
) -> Result<(), CliError> {
    if k == 0 {
        return Err(CliError::config("k must be at least 1"));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(CliError::config(format!("eps must be positive, got {eps}")));
    }
    let (plan, _train, test) = load_plan_and_data(config, None, None, false)?;
    if index >= test.len() {
        return Err(CliError::config(format!(
            "index {index} out of range for the test split ({} samples)",
            test.len()
        )));
    }
    let model: Model = nn::load_model(model_path).map_err(cfg_err)?;
    let sample = &test.samples[index];
    if model.input_dim() != sample.features.len() {
        return Err(CliError::config(format!(
            "model expects {} inputs but the dataset has {}",
            model.input_dim(),
            sample.features.len()
        )));
    }

    let mut params: HarvestParams<f64> = plan
        .cells
        .first()
        .map(|c| c.config.harvest.clone())
        .unwrap_or_default();
    params.k = k;
    if let Some(t) = time_limit_secs {
        params.time_limit = parse_time_limit(t)?;
    }
    params.validate().map_err(cfg_err)?;

    let predicted = model.predict(&sample.features);
    println!(
        "test sample {index}: predicted class {predicted}, oracle label {}",
        sample.label
    );
    let outcome = verifier::harvest_traced(&model, &sample.features, &params, eps);
    for (i, trace) in outcome.trace.iter().enumerate() {
        let verdict = match trace.outcome {
            TraceOutcome::Sat => "SAT",
            TraceOutcome::Unsat => "UNSAT",
            TraceOutcome::Timeout => "TIMEOUT",
        };
        println!(
            "query {i}: eps={:.4} -> {verdict} ({} nodes, {} ms)",
            trace.epsilon, trace.nodes, trace.millis
        );
    }
    for (i, point) in outcome.points.iter().enumerate() {
        let linf = point
            .iter()
            .zip(&sample.features)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        println!(
            "counterexample {i}: predicted class {}, L-inf distance {linf:.6}",
            model.predict(point)
        );
    }
    println!("{} counterexamples found", outcome.points.len());
    Ok(())
}

fn cmd_bench(seed: u64, time_limit_secs: f64) -> Result<(), CliError> {
    let budget = parse_time_limit(time_limit_secs)?;
    let queries = 20usize;
    let model: Model = nn::MlpModel::init(10, 12, 3, seed);
    let data = fvaal_core::data::synthetic_blobs::<f64>(seed.wrapping_add(1), queries, 10, 3, 0.15)
        .map_err(run_err)?;
    let per_query = budget / queries as u32;
    let (mut sat, mut unsat, mut timeout) = (0u32, 0u32, 0u32);
    let mut nodes = 0u64;
    let mut spent = Duration::ZERO;
    for sample in &data.samples {
        let query = verifier::RobustnessQuery::runner_up(&model, &sample.features, 0.05)
            .map_err(run_err)?;
        let verdict = verifier::solve(&model, &query, per_query).map_err(run_err)?;
        nodes += verdict.nodes_explored;
        spent += verdict.wall_time;
        match verdict.outcome {
            verifier::Outcome::Sat(_) => sat += 1,
            verifier::Outcome::Unsat => unsat += 1,
            verifier::Outcome::Timeout => timeout += 1,
        }
    }
    let secs = spent.as_secs_f64().max(1e-9);
    println!(
        "{queries} queries: {sat} sat, {unsat} unsat, {timeout} timeout; {nodes} nodes in {secs:.3}s ({:.0} nodes/s)",
        nodes as f64 / secs
    );
    Ok(())
}
