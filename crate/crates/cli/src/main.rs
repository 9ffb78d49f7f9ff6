//! `wb`: inspect data, run leakage-safe evaluations, read their reports and
//! serve the HTTP API.
//!
//! Exit codes: 0 success, 2 usage/config/IO error, 3 the run finished with
//! failed folds (or failed after its data was loaded).

mod table;

use std::io::{IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value as Json};
use table::{num, Table};
use wb_core::cv::{EvalReport, FoldStatus, Metric};
use wb_core::importance::ImportanceReport;
use wb_core::pipeline::ParamConfig;
use wb_core::runstore::{RunRecord, SCHEMA_VERSION};
use wb_core::tabular::{global_split, load_csv, summarize, LoadOptions};
use wb_core::workflow::{self, RunControl, RunOptions, SEED_ENV};

#[derive(Parser)]
#[command(name = "wb", version, about = "Leakage-safe model evaluation for tabular data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect or split a CSV file.
    Data {
        #[command(subcommand)]
        command: DataCommand,
    },
    /// Execute a run config and write its record.
    Run(RunArgs),
    /// Show per-fold and aggregate metrics of a finished run.
    Report(ReportArgs),
    /// Show the feature importances of a finished run.
    Importance(ImportanceArgs),
    /// Re-execute a stored run and compare digests.
    Replay(ReplayArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Subcommand)]
enum DataCommand {
    /// One row of statistics per column.
    Summary(SummaryArgs),
    /// Train/test split of the rows.
    Split(SplitArgs),
}

#[derive(Args)]
struct SummaryArgs {
    csv: PathBuf,
    /// Extra tokens read as missing, in addition to the defaults.
    #[arg(long = "missing-token")]
    missing_tokens: Vec<String>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SplitArgs {
    csv: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long)]
    stratify_by: Option<String>,
    #[arg(long)]
    group_by: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the row indices here as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// The record goes to `<out>/runs/<run-id>/record.json`.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides the config seed (and `WB_SEED`).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// A run directory or its `record.json`.
    run: PathBuf,
    /// Only show these metrics.
    #[arg(long = "metric")]
    metrics: Vec<String>,
    /// Importances shown per method.
    #[arg(long, default_value_t = 10)]
    top: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ImportanceArgs {
    run: PathBuf,
    /// Only show this method (coefficients, permutation, permuted_target, shapley).
    #[arg(long)]
    method: Option<String>,
    #[arg(long, default_value_t = 20)]
    top: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ReplayArgs {
    run: PathBuf,
    /// Read the data from here instead of the recorded path.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Also write the replayed record under this directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = ".")]
    runs_dir: PathBuf,
    /// Relative dataset paths in submitted configs resolve against this.
    #[arg(long, default_value = ".")]
    base_dir: PathBuf,
    #[arg(long, default_value_t = 2)]
    workers: usize,
}

enum Failure {
    /// Exit 2.
    Error(String),
    /// Exit 3; the output has been printed.
    Partial(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Error(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Data {
            command: DataCommand::Summary(a),
        } => data_summary(a),
        Command::Data {
            command: DataCommand::Split(a),
        } => data_split(a),
        Command::Run(a) => run(a),
        Command::Report(a) => report(a),
        Command::Importance(a) => importance(a),
        Command::Replay(a) => replay(a),
        Command::Serve(a) => serve(a),
    };
    let _ = std::io::stdout().flush();
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Error(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Partial(msg)) => {
            eprintln!("warning: {msg}");
            ExitCode::from(3)
        }
    }
}

fn print_json(v: &Json) {
    println!("{}", serde_json::to_string_pretty(v).expect("JSON value"));
}

fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Error(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn data_summary(a: SummaryArgs) -> Outcome {
    let mut opts = LoadOptions::default();
    opts.missing_tokens.extend(a.missing_tokens);
    let ds = load_csv(&a.csv, &opts)?;
    let stats = ds
        .columns()
        .iter()
        .map(|c| summarize(&ds, &c.name))
        .collect::<Result<Vec<_>, _>>()?;
    if a.json {
        print_json(&json!({
            "schema_version": SCHEMA_VERSION,
            "path": a.csv,
            "n_rows": ds.n_rows(),
            "fingerprint": ds.fingerprint(),
            "columns": stats,
        }));
        return Ok(());
    }
    let mut t = Table::new([
        "column", "dtype", "n", "missing", "mean", "std", "min", "median", "max", "unique",
    ]);
    for s in &stats {
        t.row([
            s.name.clone(),
            s.dtype.as_str().to_string(),
            s.n.to_string(),
            s.n_missing.to_string(),
            num(s.mean),
            num(s.std),
            num(s.min),
            num(s.q50),
            num(s.max),
            s.n_unique.to_string(),
        ]);
    }
    print!("{}", t.render());
    println!("{} rows, fingerprint {}", ds.n_rows(), ds.fingerprint());
    Ok(())
}

fn data_split(a: SplitArgs) -> Outcome {
    let ds = load_csv(&a.csv, &LoadOptions::default())?;
    let seed = match a.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let split = global_split(
        &ds,
        a.test_fraction,
        a.stratify_by.as_deref(),
        a.group_by.as_deref(),
        seed,
    )?;
    if let Some(out) = &a.out {
        let text = serde_json::to_string_pretty(&split)?;
        std::fs::write(out, text).map_err(|e| format!("{}: {e}", out.display()))?;
    }
    if a.json {
        print_json(&json!({
            "schema_version": SCHEMA_VERSION,
            "strategy": split.strategy,
            "seed": split.seed,
            "n_train": split.train.len(),
            "n_test": split.test.len(),
            "train": split.train,
            "test": split.test,
        }));
    } else {
        let mut t = Table::new(["part", "rows"]);
        t.row(["train".to_string(), split.train.len().to_string()]);
        t.row(["test".to_string(), split.test.len().to_string()]);
        print!("{}", t.render());
        println!("strategy {}, seed {}", split.strategy, split.seed);
    }
    Ok(())
}

fn read_config(path: &Path) -> Result<(Json, PathBuf), Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let doc: Json = serde_json::from_str(&text).map_err(|e| format!("{}: invalid JSON: {e}", path.display()))?;
    let base = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    Ok((doc, base))
}

fn progress_printer(quiet: bool) -> impl Fn(&str, usize, usize) + Sync {
    let show = !quiet && std::io::stderr().is_terminal();
    move |phase: &str, done: usize, total: usize| {
        if show {
            eprintln!("{phase}: {done}/{total} outer folds");
        }
    }
}

fn outcome_of(record: &RunRecord) -> Outcome {
    if let Some(e) = &record.error {
        return Err(Failure::Partial(format!("run did not complete: {e}")));
    }
    if record.has_failures() {
        return Err(Failure::Partial("some folds failed; see the record for details".into()));
    }
    Ok(())
}

fn run(a: RunArgs) -> Outcome {
    let (doc, base_dir) = read_config(&a.config)?;
    let opts = RunOptions {
        seed: a.seed,
        base_dir,
        ..RunOptions::default()
    };
    let progress = progress_printer(a.json);
    let control = RunControl {
        jobs: a.jobs,
        cancel: None,
        progress: Some(&progress),
    };
    let record = workflow::run(doc, &opts, &control)?;
    let path = record.write(&a.out)?;
    if a.json {
        print_json(&json!({
            "schema_version": SCHEMA_VERSION,
            "run_id": record.run_id,
            "digest": record.digest,
            "status": record.status,
            "seed": record.seed,
            "record": path,
            "cv": record.reports.cv.as_ref().map(|r| &r.aggregate),
            "holdout": record.reports.holdout.as_ref().map(|r| &r.folds[0].scores),
        }));
    } else {
        if let Some(cv) = &record.reports.cv {
            print!("{}", aggregate_table(cv, &[]).render());
        }
        if let Some(h) = &record.reports.holdout {
            print!("{}", holdout_table(h, &[]).render());
        }
        println!("run_id: {}", record.run_id);
        println!("digest: {}", record.digest);
        println!("record: {}", path.display());
    }
    outcome_of(&record)
}

fn read_record(path: &Path) -> Result<RunRecord, Failure> {
    let record = RunRecord::read(path)?;
    if record.schema_version != SCHEMA_VERSION {
        return Err(Failure::Error(format!(
            "{}: record schema version {} is not supported",
            path.display(),
            record.schema_version
        )));
    }
    Ok(record)
}

fn metric_names(report: &EvalReport, filter: &[String]) -> Vec<String> {
    report
        .metrics
        .iter()
        .map(Metric::to_string)
        .filter(|m| filter.is_empty() || filter.contains(m))
        .collect()
}

fn check_metrics(record: &RunRecord, filter: &[String]) -> Outcome {
    let known: Vec<String> = [&record.reports.cv, &record.reports.holdout]
        .into_iter()
        .flatten()
        .flat_map(|r| r.metrics.iter().map(Metric::to_string))
        .collect();
    for m in filter {
        if !known.contains(m) {
            return Err(Failure::Error(format!(
                "metric `{m}` is not in this run (have: {})",
                known.join(", ")
            )));
        }
    }
    Ok(())
}

fn config_text(c: &ParamConfig) -> String {
    c.steps
        .iter()
        .map(|s| {
            if s.params.is_empty() {
                s.estimator.clone()
            } else {
                let params: Vec<String> = s.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
                format!("{}({})", s.estimator, params.join(", "))
            }
        })
        .collect::<Vec<_>>()
        .join(" > ")
}

fn fold_table(report: &EvalReport, filter: &[String]) -> Table {
    let metrics = metric_names(report, filter);
    let mut header = vec!["fold".to_string(), "n_train".into(), "n_val".into(), "status".into()];
    header.extend(metrics.iter().cloned());
    header.push("config".into());
    let last = header.len() - 1;
    let mut t = Table::new(header).left(last);
    for f in &report.folds {
        let mut row = vec![
            f.label.clone(),
            f.n_train.to_string(),
            f.n_val.to_string(),
            match f.status {
                FoldStatus::Ok => "ok".to_string(),
                _ => "failed".to_string(),
            },
        ];
        row.extend(metrics.iter().map(|m| num(f.scores.get(m).copied().flatten())));
        row.push(config_text(&f.config));
        t.row(row);
    }
    t
}

fn aggregate_table(report: &EvalReport, filter: &[String]) -> Table {
    let mut t = Table::new(["metric", "mean", "std", "n_folds"]);
    for m in metric_names(report, filter) {
        let s = &report.aggregate[&m];
        t.row([m.clone(), num(s.mean), num(s.std), s.n_folds.to_string()]);
    }
    t
}

fn holdout_table(report: &EvalReport, filter: &[String]) -> Table {
    let mut t = Table::new(["metric", "holdout"]);
    for m in metric_names(report, filter) {
        t.row([m.clone(), num(report.folds[0].scores.get(&m).copied().flatten())]);
    }
    t
}

fn group_table(report: &EvalReport, filter: &[String]) -> Option<Table> {
    let groups = report.stratified.as_ref()?;
    let metrics = metric_names(report, filter);
    let mut header = vec![groups.column.clone(), "n".into()];
    header.extend(metrics.iter().cloned());
    let mut t = Table::new(header);
    for r in &groups.rows {
        let mut row = vec![r.group.clone(), r.n.to_string()];
        row.extend(metrics.iter().map(|m| num(r.scores.get(m).copied().flatten())));
        t.row(row);
    }
    Some(t)
}

/// Feature indices ordered by decreasing absolute importance, ties by name.
fn ranked(r: &ImportanceReport) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..r.features.len()).collect();
    idx.sort_by(|&a, &b| {
        r.values[b]
            .abs()
            .total_cmp(&r.values[a].abs())
            .then_with(|| r.features[a].cmp(&r.features[b]))
    });
    idx
}

fn importance_table(r: &ImportanceReport, top: usize) -> Table {
    let mut header = vec!["feature", "value"];
    if r.p_values.is_some() {
        header.push("p_value");
    }
    let mut t = Table::new(header);
    for i in ranked(r).into_iter().take(top) {
        let mut row = vec![r.features[i].clone(), num(Some(r.values[i]))];
        if let Some(p) = &r.p_values {
            row.push(num(Some(p[i])));
        }
        t.row(row);
    }
    t
}

fn importance_json(r: &ImportanceReport, top: usize) -> Json {
    let features: Vec<Json> = ranked(r)
        .into_iter()
        .take(top)
        .map(|i| {
            json!({
                "feature": r.features[i],
                "source": r.sources[i],
                "value": r.values[i],
                "p_value": r.p_values.as_ref().map(|p| p[i]),
            })
        })
        .collect();
    json!({"method": r.method, "meta": r.meta, "base_value": r.base_value, "features": features})
}

fn filtered_scores(report: &EvalReport, filter: &[String]) -> Json {
    let metrics = metric_names(report, filter);
    let pick = |scores: &std::collections::BTreeMap<String, Option<f64>>| -> Json {
        metrics
            .iter()
            .map(|m| (m.clone(), json!(scores.get(m).copied().flatten())))
            .collect()
    };
    let folds: Vec<Json> = report
        .folds
        .iter()
        .map(|f| {
            json!({
                "fold": f.label,
                "n_train": f.n_train,
                "n_val": f.n_val,
                "status": f.status,
                "error": f.error,
                "scores": pick(&f.scores),
                "config": f.config,
            })
        })
        .collect();
    let aggregate: Json = metrics
        .iter()
        .map(|m| (m.clone(), json!(report.aggregate.get(m))))
        .collect();
    json!({
        "protocol": report.protocol,
        "folds": folds,
        "aggregate": aggregate,
        "stratified": report.stratified,
        "subset": report.subset,
        "warnings": report.warnings,
    })
}

fn report(a: ReportArgs) -> Outcome {
    let record = read_record(&a.run)?;
    check_metrics(&record, &a.metrics)?;
    if a.json {
        print_json(&json!({
            "schema_version": SCHEMA_VERSION,
            "run_id": record.run_id,
            "status": record.status,
            "seed": record.seed,
            "digest": record.digest,
            "cv": record.reports.cv.as_ref().map(|r| filtered_scores(r, &a.metrics)),
            "holdout": record.reports.holdout.as_ref().map(|r| filtered_scores(r, &a.metrics)),
            "final_config": record.final_config,
            "importance": record.importance.iter().map(|r| importance_json(r, a.top)).collect::<Vec<_>>(),
        }));
        return Ok(());
    }
    println!(
        "run {}  status {}  seed {}",
        record.run_id,
        json!(record.status).as_str().unwrap_or("?"),
        record.seed
    );
    if let Some(e) = &record.error {
        println!("error: {e}");
    }
    for (name, rep) in [("cv", &record.reports.cv), ("holdout", &record.reports.holdout)] {
        let Some(rep) = rep else { continue };
        println!("\n{name} ({})", rep.protocol);
        print!("{}", fold_table(rep, &a.metrics).render());
        if name == "cv" {
            println!();
            print!("{}", aggregate_table(rep, &a.metrics).render());
        }
        if let Some(t) = group_table(rep, &a.metrics) {
            println!();
            print!("{}", t.render());
        }
        for w in &rep.warnings {
            println!("warning: {w}");
        }
    }
    if let Some(c) = &record.final_config {
        println!("\nfinal config: {}", config_text(c));
    }
    for r in &record.importance {
        println!("\nimportance: {}", r.method);
        print!("{}", importance_table(r, a.top).render());
    }
    println!("\ndigest: {}", record.digest);
    Ok(())
}

fn importance(a: ImportanceArgs) -> Outcome {
    let record = read_record(&a.run)?;
    let reports: Vec<&ImportanceReport> = record
        .importance
        .iter()
        .filter(|r| a.method.as_ref().is_none_or(|m| &r.method == m))
        .collect();
    if let Some(m) = &a.method {
        if reports.is_empty() {
            return Err(Failure::Error(format!("run {} has no `{m}` importance", record.run_id)));
        }
    }
    if a.json {
        print_json(&json!({
            "schema_version": SCHEMA_VERSION,
            "run_id": record.run_id,
            "reports": reports.iter().map(|r| importance_json(r, a.top)).collect::<Vec<_>>(),
        }));
        return Ok(());
    }
    for (i, r) in reports.iter().enumerate() {
        if i > 0 {
            println!();
        }
        println!("{}", r.method);
        print!("{}", importance_table(r, a.top).render());
    }
    Ok(())
}

fn replay(a: ReplayArgs) -> Outcome {
    let original = read_record(&a.run)?;
    let progress = progress_printer(a.json);
    let control = RunControl {
        jobs: a.jobs,
        cancel: None,
        progress: Some(&progress),
    };
    let again = workflow::replay(&original, a.data.as_deref(), &control)?;
    let path = match &a.out {
        Some(out) => Some(again.write(out)?),
        None => None,
    };
    let matches = again.digest == original.digest;
    if a.json {
        print_json(&json!({
            "schema_version": SCHEMA_VERSION,
            "run_id": again.run_id,
            "original_digest": original.digest,
            "digest": again.digest,
            "match": matches,
            "record": path,
        }));
    } else {
        println!("run_id: {}", again.run_id);
        println!("original digest: {}", original.digest);
        println!("replay digest:   {}", again.digest);
        if let Some(p) = &path {
            println!("record: {}", p.display());
        }
        println!("{}", if matches { "digests match" } else { "digests differ" });
    }
    if !matches {
        return Err(Failure::Error("replay produced a different digest".into()));
    }
    outcome_of(&again)
}

fn serve(a: ServeArgs) -> Outcome {
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
            .await
            .map_err(|e| format!("cannot bind {}:{}: {e}", a.host, a.port))?;
        let state = wb_server::AppState::new(wb_server::ServerConfig {
            runs_dir: a.runs_dir.clone(),
            base_dir: a.base_dir.clone(),
            workers: a.workers,
        })
        .map_err(|e| format!("{}: {e}", a.runs_dir.display()))?;
        println!("listening on http://{}", listener.local_addr()?);
        std::io::stdout().flush()?;
        wb_server::serve(listener, state, shutdown_signal()).await?;
        eprintln!("shut down");
        Ok(())
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    {
        let mut term = match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(s) => s,
            Err(_) => return ctrl_c.await,
        };
        tokio::select! {
            _ = ctrl_c => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    ctrl_c.await;
}
