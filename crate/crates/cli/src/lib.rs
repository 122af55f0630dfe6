//! The `idur` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 internal error.
//! Every error is written to standard error after the prefix `idur: error: `.

pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use incident_duration::domain::{read_records, record_from_fields, IncidentRecord};
use incident_duration::pipeline::{
    compare_frameworks, evaluate_framework, load_model, predict_incident, save_model, train_framework, EnrichmentTable,
    FrameworkModel, Preprocessor,
};
use incident_duration::report::Report;
use incident_duration::synthgen::{generate, sidecar_paths, write_dataset, GeneratorConfig};
use idur_service::{parse_request, AppState, PredictResponse};

pub use config::RunConfig;

pub const ERROR_PREFIX: &str = "idur: error: ";
/// Default artifact path when `--model` is not given.
pub const MODEL_ENV: &str = "IDUR_MODEL";

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

impl From<incident_duration::Error> for CliError {
    fn from(e: incident_duration::Error) -> Self {
        use incident_duration::Error as E;
        match e {
            E::NotConverged { .. } | E::NonFiniteGradient { .. } => CliError::Internal(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "idur", version, about = "Traffic incident duration: band classification then band regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// key = value settings file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic incident CSV with manifest and enrichment sidecars.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Number of incidents.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Fit encoding, imputation and the correlation filter; write the processed matrix as CSV.
    Preprocess {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// fs1 or fs2.
        #[arg(long)]
        features: Option<String>,
        #[arg(long)]
        enrichment: Option<PathBuf>,
    },
    /// Train the framework and write the model artifact plus a training report.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        features: Option<String>,
        #[arg(long)]
        enrichment: Option<PathBuf>,
        /// Training report path; defaults to `<out>.report.txt`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score a model on labelled incidents.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, env = MODEL_ENV)]
        model: Option<PathBuf>,
    },
    /// Compare the supervised, unsupervised and Tobit frameworks with and without classification.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        features: Option<String>,
        #[arg(long)]
        enrichment: Option<PathBuf>,
    },
    /// Predict one incident given as a file or as --field key=value pairs.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long, env = MODEL_ENV)]
        model: Option<PathBuf>,
        /// JSON object (.json) or incident CSV whose first row is used.
        #[arg(long, conflicts_with = "field")]
        record: Option<PathBuf>,
        /// One incident field, e.g. `event_type=crash2`.
        #[arg(long, value_name = "KEY=VALUE")]
        field: Vec<String>,
        #[arg(long)]
        detour_overhead_minutes: Option<f64>,
    },
    /// Serve predictions over HTTP.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, env = MODEL_ENV)]
        model: Option<PathBuf>,
        /// host:port, default 127.0.0.1:8080.
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        detour_overhead_minutes: Option<f64>,
    },
}

fn settings(common: &Common) -> Result<RunConfig, CliError> {
    let mut c = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    c.set("seed", common.seed);
    c.set("out", common.out.as_ref().map(|p| p.display()));
    Ok(c)
}

fn set_path(c: &mut RunConfig, key: &str, p: &Option<PathBuf>) {
    c.set(key, p.as_ref().map(|p| p.display()));
}

fn read_data(path: &Path) -> Result<Vec<IncidentRecord>, CliError> {
    if !path.exists() {
        return Err(CliError::Data(format!("data file {} does not exist", path.display())));
    }
    Ok(read_records(path)?)
}

/// The explicit table, else the generator sidecar next to the data, else one derived from the records.
fn enrichment_for(c: &RunConfig, data: &Path, records: &[IncidentRecord]) -> Result<EnrichmentTable, CliError> {
    if let Some(p) = c.path("enrichment") {
        return Ok(EnrichmentTable::read_csv(p)?);
    }
    let (_, sidecar) = sidecar_paths(data);
    if sidecar.exists() {
        return Ok(EnrichmentTable::read_csv(sidecar)?);
    }
    Ok(EnrichmentTable::from_records(records)?)
}

fn load(c: &RunConfig) -> Result<FrameworkModel, CliError> {
    let path = c.path("model").ok_or_else(|| {
        CliError::Usage(format!("--model is required (flag, config key `model` or {MODEL_ENV})"))
    })?;
    Ok(load_model(path)?)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

/// Report text with the run timestamp confined to the first line.
fn stamped(command: &str, report: &Report) -> String {
    format!("# idur {command} {}\n{report}", chrono::Local::now().to_rfc3339())
}

fn cmd_generate(c: &RunConfig) -> Result<(), CliError> {
    let out = c.require_path("out")?;
    let mut g = GeneratorConfig::default();
    if let Some(n) = c.n_records()? {
        g.n_records = n;
    }
    if let Some(s) = c.seed()? {
        g.seed = s;
    }
    g.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let ds = generate(&g)?;
    write_dataset(&ds, &out)?;
    let mut r = Report::new();
    r.push("generate.n", ds.records.len());
    r.push("generate.seed", g.seed);
    for (label, n) in ["short", "medium", "long"].iter().zip(ds.manifest.band_counts) {
        r.push(format!("generate.band.{label}"), n);
    }
    print!("{r}");
    Ok(())
}

fn cmd_preprocess(c: &RunConfig) -> Result<(), CliError> {
    let data = c.require_path("data")?;
    let out = c.require_path("out")?;
    let fc = c.framework()?;
    let records = read_data(&data)?;
    let table = enrichment_for(c, &data, &records)?;
    let enriched: Vec<IncidentRecord> = records.iter().map(|r| table.enrich(r)).collect();
    let pre = Preprocessor::fit(&enriched, fc.feature_set, fc.correlation_threshold)?;
    let m = pre.transform(&enriched)?;
    let mut w = csv::Writer::from_path(&out).map_err(|e| CliError::Data(format!("cannot write {}: {e}", out.display())))?;
    let mut header: Vec<String> = vec!["id".into()];
    header.extend(m.column_names());
    header.push("duration_minutes".into());
    let wr = |e: csv::Error| CliError::Data(format!("cannot write {}: {e}", out.display()));
    w.write_record(&header).map_err(wr)?;
    for (i, r) in enriched.iter().enumerate() {
        let mut row = vec![r.id.clone()];
        row.extend(m.row(i).iter().map(|v| v.to_string()));
        row.push(r.duration_minutes.map(|d| d.to_string()).unwrap_or_default());
        w.write_record(&row).map_err(wr)?;
    }
    w.flush().map_err(|e| CliError::Data(e.to_string()))?;
    let mut r = Report::new();
    r.push("preprocess.n", enriched.len());
    r.push("preprocess.features", fc.feature_set.label());
    r.push("preprocess.columns", m.n_cols());
    r.push("preprocess.dropped", pre.filter.dropped.join(","));
    print!("{r}");
    Ok(())
}

fn cmd_train(c: &RunConfig) -> Result<(), CliError> {
    let data = c.require_path("data")?;
    let out = c.require_path("out")?;
    let fc = c.framework()?;
    let records = read_data(&data)?;
    let table = enrichment_for(c, &data, &records)?;
    let (model, summary) = train_framework(&records, &table, &fc)?;
    save_model(&model, &out)?;
    let report_path = c.path("report").unwrap_or_else(|| {
        let mut p = out.clone().into_os_string();
        p.push(".report.txt");
        PathBuf::from(p)
    });
    let mut r = summary.to_report();
    r.push("train.model_version", &model.version);
    r.push("train.seed", model.seed);
    r.push("train.features", fc.feature_set.label());
    for (band, spec) in ["short", "medium", "long"].iter().zip(&fc.regressors) {
        r.push(format!("train.regressor.{band}"), spec);
    }
    r.push("train.classifier", fc.classifier.join("+"));
    write_text(&report_path, &stamped("train", &r))?;
    print!("{r}");
    Ok(())
}

fn cmd_evaluate(c: &RunConfig) -> Result<(), CliError> {
    let data = c.require_path("data")?;
    let model = load(c)?;
    let records = read_data(&data)?;
    let r = evaluate_framework(&model, &records)?.to_report();
    if let Some(out) = c.path("out") {
        write_text(&out, &stamped("evaluate", &r))?;
    }
    print!("{r}");
    Ok(())
}

fn cmd_compare(c: &RunConfig) -> Result<(), CliError> {
    let data = c.require_path("data")?;
    let fc = c.framework()?;
    let records = read_data(&data)?;
    let table = enrichment_for(c, &data, &records)?;
    let report = compare_frameworks(&records, &table, &fc)?;
    let r = report.to_report();
    if let Some(out) = c.path("out") {
        write_text(&out, &stamped("compare", &r))?;
    }
    print!("{}", report.table());
    Ok(())
}

fn predict_input(record: &Option<PathBuf>, fields: &[String]) -> Result<IncidentRecord, CliError> {
    if let Some(path) = record {
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            let body = std::fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
            return parse_request(&body)
                .map(|r| r.record)
                .map_err(|e| CliError::Data(format!("invalid record: fields {:?}: {}", e.fields, e.message)));
        }
        return read_data(path)?
            .into_iter()
            .next()
            .ok_or_else(|| CliError::Data(format!("{} holds no incidents", path.display())));
    }
    if fields.is_empty() {
        return Err(CliError::Usage("give --record FILE or at least one --field KEY=VALUE".into()));
    }
    let mut pairs = Vec::with_capacity(fields.len() + 1);
    for f in fields {
        let (k, v) = f.split_once('=').ok_or_else(|| CliError::Usage(format!("--field `{f}` is not KEY=VALUE")))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    if !pairs.iter().any(|(k, _)| k == "id") {
        pairs.push(("id".into(), "cli".into()));
    }
    Ok(record_from_fields(&pairs)?)
}

fn cmd_predict(c: &RunConfig, record: &Option<PathBuf>, fields: &[String]) -> Result<(), CliError> {
    let policy = c.policy()?;
    let model = load(c)?;
    let rec = predict_input(record, fields)?;
    let p = predict_incident(&model, &rec)?;
    let resp = PredictResponse::new(None, &p, &policy);
    let mut r = Report::new();
    r.push("band", &resp.band);
    r.push("probability.short", resp.band_probabilities.short);
    r.push("probability.medium", resp.band_probabilities.medium);
    r.push("probability.long", resp.band_probabilities.long);
    r.push("duration_minutes", resp.duration_minutes);
    r.push("model_version", &resp.model_version);
    r.push("feature_set_used", &resp.feature_set_used);
    r.push("recommended_actions", resp.recommended_actions.join(","));
    print!("{r}");
    Ok(())
}

fn cmd_serve(c: &RunConfig) -> Result<(), CliError> {
    let policy = c.policy()?;
    let bind = c.get("bind").unwrap_or("127.0.0.1:8080");
    let addr: SocketAddr = bind.parse().map_err(|_| CliError::Usage(format!("--bind `{bind}` is not host:port")))?;
    let model_path = c.require_path("model")?;
    let state = AppState::new(Some(load_model(&model_path)?), policy);
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Internal(e.to_string()))?;
    rt.block_on(async move {
        #[cfg(unix)]
        {
            // SIGHUP reloads the artifact; a failed load keeps the current model.
            let state = state.clone();
            let path = model_path.clone();
            let mut hup = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::hangup())
                .map_err(|e| CliError::Internal(e.to_string()))?;
            tokio::spawn(async move {
                while hup.recv().await.is_some() {
                    match load_model(&path) {
                        Ok(m) => {
                            eprintln!("idur: reloaded {} ({})", path.display(), m.version);
                            state.swap_model(m);
                        }
                        Err(e) => eprintln!("{ERROR_PREFIX}reload failed, keeping the current model: {e}"),
                    }
                }
            });
        }
        eprintln!("idur: serving on http://{addr}");
        idur_service::serve(addr, state)
            .await
            .map_err(|e| CliError::Data(format!("cannot serve on {addr}: {e}")))
    })
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { common, n } => {
            let mut c = settings(&common)?;
            c.set("n", n);
            cmd_generate(&c)
        }
        Command::Preprocess { common, data, features, enrichment } => {
            let mut c = settings(&common)?;
            set_path(&mut c, "data", &data);
            set_path(&mut c, "enrichment", &enrichment);
            c.set("features", features);
            cmd_preprocess(&c)
        }
        Command::Train { common, data, features, enrichment, report } => {
            let mut c = settings(&common)?;
            set_path(&mut c, "data", &data);
            set_path(&mut c, "enrichment", &enrichment);
            set_path(&mut c, "report", &report);
            c.set("features", features);
            cmd_train(&c)
        }
        Command::Evaluate { common, data, model } => {
            let mut c = settings(&common)?;
            set_path(&mut c, "data", &data);
            set_path(&mut c, "model", &model);
            cmd_evaluate(&c)
        }
        Command::Compare { common, data, features, enrichment } => {
            let mut c = settings(&common)?;
            set_path(&mut c, "data", &data);
            set_path(&mut c, "enrichment", &enrichment);
            c.set("features", features);
            cmd_compare(&c)
        }
        Command::Predict { common, model, record, field, detour_overhead_minutes } => {
            let mut c = settings(&common)?;
            set_path(&mut c, "model", &model);
            c.set("detour_overhead_minutes", detour_overhead_minutes);
            cmd_predict(&c, &record, &field)
        }
        Command::Serve { common, model, bind, detour_overhead_minutes } => {
            let mut c = settings(&common)?;
            set_path(&mut c, "model", &model);
            c.set("bind", bind);
            c.set("detour_overhead_minutes", detour_overhead_minutes);
            cmd_serve(&c)
        }
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let msg = msg.trim_start_matches("error: ").trim_end();
            eprintln!("{ERROR_PREFIX}{msg}");
            return 1;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{ERROR_PREFIX}{e}");
            e.exit_code()
        }
    }
}
