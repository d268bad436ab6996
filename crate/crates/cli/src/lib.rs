//! Subcommands of the `perfest` binary.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use perfest_client::{Client, ClientError};
use perfest_core::api::Overrides;
use perfest_core::config::{self, engine_config_from_kv, render_engine_config};
use perfest_core::kv::KvDoc;
use perfest_core::metrics::{self, EngineOutcome};
use perfest_core::synth::{generate_corpus, Population};
use perfest_core::trace_io::{self, load_corpus, save_corpus, TraceCorpus};
use perfest_core::{baseline_corpus, fit, replay_corpus, Action, DatasetProfile, EngineConfig, Error, SessionRegistry};

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, input files or configuration (exit code 2).
    Validation(String),
    /// I/O, network or other runtime failure (exit code 1).
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let missing_input = matches!(&e, Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound);
        if e.is_validation() || missing_input {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        if e.is_rejection() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

/// Unreadable inputs are flag errors; failures while writing are runtime errors.
fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Writes to `path`, or to stdout when no path is given.
fn emit(path: Option<&Path>, contents: &str) -> CliResult {
    match path {
        Some(p) => write(p, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

/// Reads `file` (if any) as `key=value` and applies `overrides` on top.
pub fn load_kv(file: Option<&Path>, overrides: &[String]) -> CliResult<KvDoc> {
    let mut doc = match file {
        Some(p) => KvDoc::parse(&read(p)?)?,
        None => KvDoc::default(),
    };
    for item in overrides {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| CliError::Validation(format!("expected key=value, got {item:?}")))?;
        doc.push(k.trim(), v.trim());
    }
    Ok(doc)
}

/// Engine config from an optional config file plus `key=value` overrides,
/// falling back to `profile` when the config has no inline profile.
pub fn engine_config(
    file: Option<&Path>,
    overrides: &[String],
    profile: Option<DatasetProfile>,
    extra: &[&str],
) -> CliResult<(EngineConfig, KvDoc)> {
    let doc = load_kv(file, overrides)?;
    let cfg = engine_config_from_kv(&doc, profile, extra)?;
    Ok((cfg, doc))
}

pub struct GenArgs {
    pub population: Option<PathBuf>,
    pub n: usize,
    pub profile: Option<PathBuf>,
    pub seed: u64,
    pub epochs_per_iter: Option<f64>,
    pub e_full: Option<f64>,
    pub out: PathBuf,
}

/// Writes `<out>`, its `.profile` sidecar and a `.truth.csv` ground-truth file.
pub fn gen(args: &GenArgs) -> CliResult {
    let population = match &args.population {
        Some(p) => Population::parse(&read(p)?)?,
        None => Population::default(),
    };
    let (profile, mut e, mut e_full) = match &args.profile {
        Some(p) => {
            let doc = KvDoc::parse(&read(p)?)?;
            let mut allowed = config::PROFILE_KEYS.to_vec();
            allowed.extend(["E", "e_full"]);
            doc.reject_unknown(&allowed)?;
            let profile = config::profile_from_kv(&doc)?
                .ok_or_else(|| CliError::Validation(format!("{}: profile needs num_classes", p.display())))?;
            (profile, doc.parse_value("E")?.unwrap_or(0.5), doc.parse_value("e_full")?.unwrap_or(20.0))
        }
        None => (DatasetProfile::balanced("synthetic-10", 10), 0.5, 20.0),
    };
    e = args.epochs_per_iter.unwrap_or(e);
    e_full = args.e_full.unwrap_or(e_full);
    let generated = generate_corpus(&population, args.n, &profile, e, e_full, args.seed)?;
    save_corpus(&generated.corpus, &args.out)?;
    write(&truth_path(&args.out), &generated.truth_csv())
}

pub fn truth_path(corpus: &Path) -> PathBuf {
    corpus.with_extension("truth.csv")
}

pub struct ReplayArgs {
    pub corpus: PathBuf,
    pub config: Option<PathBuf>,
    pub set: Vec<String>,
    pub out: Option<PathBuf>,
    pub remote: Option<String>,
}

pub fn replay(args: &ReplayArgs) -> CliResult {
    let corpus = load_corpus(&args.corpus)?;
    let (mut cfg, doc) = engine_config(args.config.as_deref(), &args.set, Some(corpus.profile.clone()), &[])?;
    if !doc.contains("E") && !doc.contains("epochs_per_iter") {
        cfg.analyzer.epochs_per_iter = corpus.epochs_per_iter;
        cfg.validate()?;
    }
    let outcomes = match &args.remote {
        None => replay_corpus(&corpus, &cfg)?,
        Some(url) => runtime()?.block_on(replay_remote(Client::new(url.clone()), &corpus, &cfg))?,
    };
    emit(args.out.as_deref(), &metrics::render_engine_outcomes(&outcomes))
}

fn runtime() -> CliResult<tokio::runtime::Runtime> {
    tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(format!("starting async runtime: {e}")))
}

/// Overrides that reproduce `cfg` exactly on a server with any defaults.
fn full_overrides(cfg: &EngineConfig) -> CliResult<Overrides> {
    let doc = KvDoc::parse(&render_engine_config(cfg))?;
    Ok(doc.keys().map(|k| (k.to_string(), serde_json::Value::String(doc.get(k).unwrap_or("").to_string()))).collect())
}

const REMOTE_CONCURRENCY: usize = 16;

/// Streams every trace through a remote service. Output is in model id order.
pub async fn replay_remote(client: Client, corpus: &TraceCorpus, cfg: &EngineConfig) -> CliResult<Vec<EngineOutcome>> {
    let overrides = Arc::new(full_overrides(cfg)?);
    let mut tasks = tokio::task::JoinSet::new();
    let mut out = Vec::with_capacity(corpus.traces.len());
    for trace in corpus.traces.iter().cloned() {
        if tasks.len() >= REMOTE_CONCURRENCY {
            out.push(tasks.join_next().await.expect("set is nonempty").expect("replay task panicked")?);
        }
        let client = client.clone();
        let overrides = overrides.clone();
        tasks.spawn(async move {
            client.open_session(&trace.model, (*overrides).clone()).await?;
            let mut result = None;
            let mut best = f64::NEG_INFINITY;
            let mut last_epoch = 0.0;
            for (epoch, acc, loss) in trace.measurements() {
                best = best.max(acc);
                last_epoch = epoch;
                let r = client.step(&trace.model, epoch, acc, loss).await?;
                if r.action == Action::Stop {
                    result = Some(r);
                    break;
                }
            }
            client.close_session(&trace.model).await?;
            // a trace that ends before a stop is exhausted, as in local replay
            let (stop_epoch, estimate, converged) = match result {
                Some(r) => (
                    r.stop_epoch.unwrap_or(last_epoch),
                    r.estimate.unwrap_or(best),
                    r.converged,
                ),
                None => (last_epoch, best, false),
            };
            Ok::<_, CliError>(EngineOutcome {
                model: trace.model.clone(),
                stop_epoch,
                estimate,
                converged,
                ground_truth_best: trace.best_val_acc(),
            })
        });
    }
    while let Some(done) = tasks.join_next().await {
        out.push(done.expect("replay task panicked")?);
    }
    out.sort_by(|a, b| a.model.cmp(&b.model));
    Ok(out)
}

pub struct BaselineArgs {
    pub corpus: PathBuf,
    pub patience: f64,
    pub e_max: Option<f64>,
    pub out: Option<PathBuf>,
}

pub fn baseline(args: &BaselineArgs) -> CliResult {
    let corpus = load_corpus(&args.corpus)?;
    let stops = baseline_corpus(&corpus, args.patience, args.e_max.unwrap_or(corpus.e_full))?;
    emit(args.out.as_deref(), &metrics::render_baseline(&stops))
}

pub struct MetricsArgs {
    pub outcomes: PathBuf,
    pub baseline: PathBuf,
    pub top: Vec<f64>,
    pub out: Option<PathBuf>,
}

/// Report as `key=value` to `out` (or stdout); with `out`, also writes
/// `<out stem>.hist.csv` and `<out stem>.top.csv`.
pub fn metrics_cmd(args: &MetricsArgs) -> CliResult {
    let engine = metrics::parse_engine_outcomes(&read(&args.outcomes)?)?;
    let base = metrics::parse_baseline(&read(&args.baseline)?)?;
    let joined = metrics::join_outcomes(&engine, &base)?;
    let report = metrics::report(&joined, &args.top)?;
    emit(args.out.as_deref(), &report.to_kv())?;
    if let Some(out) = &args.out {
        write(&out.with_extension("hist.csv"), &metrics::render_histogram(&report.histogram))?;
        write(&out.with_extension("top.csv"), &report.top_table_csv())?;
    }
    Ok(())
}

pub struct FitArgs {
    pub points: PathBuf,
    pub config: Option<PathBuf>,
    pub box_overrides: Vec<String>,
    pub remote: Option<String>,
}

/// Reads `x,accuracy` lines; a non-numeric first line is taken as a header.
pub fn parse_points(text: &str) -> CliResult<Vec<(f64, f64)>> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed = line.split_once(',').and_then(|(x, y)| Some((x.trim().parse().ok()?, y.trim().parse().ok()?)));
        match parsed {
            Some(p) => points.push(p),
            None if i == 0 => continue,
            None => return Err(CliError::Validation(format!("line {}: expected x,accuracy, got {line:?}", i + 1))),
        }
    }
    Ok(points)
}

pub fn fit_cmd(args: &FitArgs) -> CliResult {
    let points = parse_points(&read(&args.points)?)?;
    load_kv(None, &args.box_overrides)?.reject_unknown(config::BOX_KEYS)?;
    let doc = load_kv(args.config.as_deref(), &args.box_overrides)?;
    let cfg = engine_config_from_kv(&doc, None, &[])?;
    let r = match &args.remote {
        None => perfest_core::api::FitResponse::from(&fit(&points, &cfg.param_box, &cfg.fit)?),
        Some(url) => {
            let overrides = full_overrides(&cfg)?;
            runtime()?.block_on(Client::new(url.clone()).fit(points.clone(), overrides))?
        }
    };
    let mut out = KvDoc::default();
    out.push("points", points.len());
    out.push("a", r.params.a);
    out.push("b", r.params.b);
    out.push("c", r.params.c);
    out.push("status", &r.status);
    out.push("converged", r.converged);
    out.push("iterations", r.iterations);
    out.push("final_cost", r.final_cost);
    print!("{out}");
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transport {
    Stdio,
    Tcp,
    Http,
}

impl std::str::FromStr for Transport {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "stdio" => Ok(Transport::Stdio),
            "tcp" => Ok(Transport::Tcp),
            "http" => Ok(Transport::Http),
            other => Err(CliError::Validation(format!("unknown transport {other:?}; use stdio, tcp or http"))),
        }
    }
}

pub struct ServeArgs {
    pub transport: Option<Transport>,
    pub addr: Option<String>,
    pub config: Option<PathBuf>,
    pub set: Vec<String>,
}

pub const DEFAULT_ADDR: &str = "127.0.0.1:7878";

/// Runs the engine service. The config file may also carry `transport` and
/// `addr`; flags win.
pub fn serve(args: &ServeArgs) -> CliResult {
    let (cfg, doc) = engine_config(args.config.as_deref(), &args.set, None, &["transport", "addr"])?;
    let transport = match args.transport {
        Some(t) => t,
        None => doc.get("transport").unwrap_or("stdio").parse()?,
    };
    let addr = args.addr.clone().or_else(|| doc.get("addr").map(str::to_string)).unwrap_or(DEFAULT_ADDR.into());
    let registry = Arc::new(SessionRegistry::new(cfg)?);
    let io = |e: std::io::Error| CliError::Runtime(e.to_string());
    runtime()?.block_on(async move {
        match transport {
            Transport::Stdio => perfest_server::serve_stdio(registry).await.map_err(io),
            Transport::Tcp => perfest_server::serve_tcp(perfest_server::bind(&addr).await.map_err(io)?, registry)
                .await
                .map_err(io),
            Transport::Http => perfest_server::serve_http(perfest_server::bind(&addr).await.map_err(io)?, registry)
                .await
                .map_err(io),
        }
    })
}

/// Profile sidecar path of a corpus, re-exported for scripts and tests.
pub fn profile_path(corpus: &Path) -> PathBuf {
    trace_io::profile_path(corpus)
}
