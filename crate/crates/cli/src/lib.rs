//! Command-line front end. Each subcommand composes library calls from
//! `omlclient`; [`run_in`] is the testable entry point.

pub mod settings;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use omlclient::arff;
use omlclient::cache::{CacheConfig, CacheError, CachedClient};
use omlclient::entities::*;
use omlclient::extension::{ExtensionError, ModelSpec};
use omlclient::protocol::routes::EntityKey;
use omlclient::protocol::{flatten_evaluations, Entity, EntitySummary, ParameterLayout, ProtocolError, ServerConfig};
use omlclient::report::{self, LogColumn, ReportError};
use omlclient::runner::{self, RunOptions, RunnerError, DEFAULT_BASE_SEED};

use settings::{Overrides, Settings};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "omlclient", version, about = "Client for an OpenML-style experiment platform")]
struct Cli {
    /// Server base URL
    #[arg(long, global = true)]
    server: Option<String>,
    /// API key for uploads
    #[arg(long, global = true)]
    apikey: Option<String>,
    /// Cache root directory
    #[arg(long, global = true)]
    cachedir: Option<PathBuf>,
    /// Serve all reads from the cache, never touch the network
    #[arg(long, global = true)]
    offline: bool,
    /// Config file (default ~/.omlclient/config)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    #[command(subcommand)]
    Datasets(DatasetsCmd),
    #[command(subcommand)]
    Tasks(TasksCmd),
    #[command(subcommand)]
    Suites(SuitesCmd),
    /// Run a model on tasks and print one accuracy line per task
    Run(RunArgs),
    #[command(subcommand)]
    Evals(EvalsCmd),
    #[command(subcommand)]
    Cache(CacheCmd),
}

#[derive(Debug, Args)]
struct ListArgs {
    /// Filter as KEY=VALUE; repeat for a conjunction
    #[arg(long = "filter", value_name = "KEY=VALUE")]
    filters: Vec<String>,
    #[arg(long, default_value_t = 0)]
    offset: usize,
    #[arg(long, default_value_t = 100)]
    limit: usize,
}

#[derive(Debug, Subcommand)]
enum DatasetsCmd {
    List {
        /// Shorthand for --filter name=NAME
        #[arg(long)]
        name: Option<String>,
        #[command(flatten)]
        list: ListArgs,
    },
    /// Print a dataset description
    Get {
        id: u64,
        /// Also download and verify the payload
        #[arg(long)]
        with_data: bool,
    },
    /// Publish a description and its ARFF payload; prints the new id
    Upload {
        #[arg(long)]
        description: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum TasksCmd {
    List {
        #[command(flatten)]
        list: ListArgs,
    },
    /// Print a task description
    Get {
        id: u64,
        /// Also download the split table
        #[arg(long)]
        with_splits: bool,
    },
    /// Create a classification task; prints the new id
    Create {
        #[arg(long)]
        dataset: u64,
        /// Target feature (default: the dataset's default target)
        #[arg(long)]
        target: Option<String>,
        #[arg(long, default_value_t = 10)]
        folds: u32,
        #[arg(long, default_value_t = 1)]
        repeats: u32,
        /// Holdout percentage instead of cross-validation
        #[arg(long)]
        holdout: Option<f64>,
    },
}

#[derive(Debug, Subcommand)]
enum SuitesCmd {
    /// Print a suite
    Get { alias: String },
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long, required_unless_present = "suite", conflicts_with = "suite")]
    task: Vec<u64>,
    #[arg(long)]
    suite: Option<String>,
    /// Model spec string, e.g. ref.pipeline:impute.mean,onehot,stump
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = DEFAULT_BASE_SEED)]
    seed: u64,
    /// Publish the flow and each run
    #[arg(long)]
    publish: bool,
    /// Fold workers; 0 uses one per CPU
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Write task_<id>/predictions.arff and run.xml here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum EvalsCmd {
    /// Export evaluations with setups to CSV, plus an SVG heatmap when
    /// exactly two log columns are given (x axis first; --log10 before --ln)
    Export {
        #[arg(long, default_value = "predictive_accuracy")]
        function: String,
        #[arg(long = "flow")]
        flows: Vec<u64>,
        #[arg(long = "task")]
        tasks: Vec<u64>,
        /// Replace a column by its base-10 logarithm
        #[arg(long, visible_alias = "log")]
        log10: Vec<String>,
        /// Replace a column by its natural logarithm
        #[arg(long)]
        ln: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum CacheCmd {
    /// Remove cached files of the configured server
    Clear {
        /// dataset, task, flow, run or suite
        #[arg(long)]
        kind: Option<String>,
        #[arg(long, requires = "kind")]
        key: Option<String>,
    },
}

/// A failed command, rendered as one JSON line on standard error.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
    pub code: Option<u32>,
    pub http_status: Option<u16>,
}

impl CliError {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
            code: None,
            http_status: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut v = serde_json::json!({ "error": self.kind, "message": self.message });
        if let Some(c) = self.code {
            v["code"] = c.into();
        }
        if let Some(s) = self.http_status {
            v["http_status"] = s.into();
        }
        v.to_string()
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        match &e {
            ProtocolError::Api(api) => CliError {
                code: Some(api.code),
                http_status: Some(api.http_status),
                ..CliError::new("api", e.to_string())
            },
            ProtocolError::Transport(_) => CliError::new("transport", e.to_string()),
            ProtocolError::Decode(_) => CliError::new("decode", e.to_string()),
            ProtocolError::InvalidArgument(_) => CliError::new("invalid_argument", e.to_string()),
        }
    }
}

impl From<CacheError> for CliError {
    fn from(e: CacheError) -> Self {
        match e {
            CacheError::Protocol(p) => p.into(),
            CacheError::Offline(_) => CliError::new("offline", e.to_string()),
            CacheError::Checksum { .. } => CliError::new("checksum", e.to_string()),
            CacheError::Io { .. } => CliError::new("io", e.to_string()),
            CacheError::Decode(_) => CliError::new("decode", e.to_string()),
            CacheError::Arff(_) => CliError::new("arff", e.to_string()),
        }
    }
}

impl From<ExtensionError> for CliError {
    fn from(e: ExtensionError) -> Self {
        CliError::new("model", e.to_string())
    }
}

impl From<RunnerError> for CliError {
    fn from(e: RunnerError) -> Self {
        match e {
            RunnerError::Cache(c) => c.into(),
            RunnerError::SplitIntegrity(_) => CliError::new("split_integrity", e.to_string()),
            RunnerError::Extension(_) | RunnerError::Fold { .. } => CliError::new("model", e.to_string()),
            _ => CliError::new("run", e.to_string()),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError::new("report", e.to_string())
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::new("io", format!("{}: {e}", path.display()))
}

/// Process environment as seen by the CLI.
#[derive(Debug, Clone, Default)]
pub struct Context {
    pub env: BTreeMap<String, String>,
}

impl Context {
    pub fn from_process() -> Self {
        Context {
            env: std::env::vars().collect(),
        }
    }
}

/// Runs with the process environment, printing to stdout and stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_in(&Context::from_process(), argv, &mut std::io::stdout(), &mut std::io::stderr())
}

/// Parses `argv` (program name first), executes, and returns the exit code.
pub fn run_in<I, T>(ctx: &Context, argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return if code == 0 { EXIT_OK } else { EXIT_USAGE };
        }
    };
    match execute(ctx, cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "{}", e.to_json());
            EXIT_DOMAIN
        }
    }
}

fn connect(settings: &Settings) -> Result<CachedClient, CliError> {
    let server = ServerConfig {
        api_key: settings.api_key.clone(),
        ..ServerConfig::new(settings.server.clone())
    };
    Ok(CachedClient::new(server, CacheConfig::new(&settings.cache_dir, settings.offline))?)
}

fn write_line(out: &mut dyn Write, text: impl std::fmt::Display) -> Result<(), CliError> {
    writeln!(out, "{text}").map_err(|e| CliError::new("io", e.to_string()))
}

fn filters(list: &ListArgs) -> Result<BTreeMap<String, String>, CliError> {
    list.filters
        .iter()
        .map(|f| {
            f.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| CliError::new("invalid_argument", format!("filter {f:?} is not KEY=VALUE")))
        })
        .collect()
}

fn print_summaries(out: &mut dyn Write, items: &[EntitySummary]) -> Result<(), CliError> {
    for s in items {
        let mut line = format!("{}\t{}", s.id, s.name);
        for (k, v) in &s.fields {
            line.push_str(&format!("\t{k}={v}"));
        }
        write_line(out, line)?;
    }
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| io_error(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| io_error(path, e))
}

fn execute(ctx: &Context, cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let overrides = Overrides {
        server: cli.server,
        api_key: cli.apikey,
        cache_dir: cli.cachedir,
        offline: cli.offline,
        config: cli.config,
    };
    let settings = settings::resolve(&overrides, &ctx.env).map_err(|m| CliError::new("config", m))?;
    let client = connect(&settings)?;
    match cli.command {
        Command::Datasets(cmd) => datasets(&client, cmd, out),
        Command::Tasks(cmd) => tasks(&client, cmd, out),
        Command::Suites(SuitesCmd::Get { alias }) => {
            write_line(out, Entity::Suite(client.get_suite(&alias)?).to_xml().trim_end())
        }
        Command::Run(args) => run_models(&client, args, out),
        Command::Evals(cmd) => evals(&client, cmd, out),
        Command::Cache(CacheCmd::Clear { kind, key }) => {
            let kind = match kind {
                Some(k) => Some(EntityKind::parse(&k).ok_or_else(|| CliError::new("invalid_argument", format!("unknown kind {k:?}")))?),
                None => None,
            };
            let key = key.as_deref().map(EntityKey::from);
            let removed = client.clear(kind, key.as_ref())?;
            write_line(out, format!("removed {removed} files"))
        }
    }
}

fn datasets(client: &CachedClient, cmd: DatasetsCmd, out: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        DatasetsCmd::List { name, list } => {
            let mut f = filters(&list)?;
            if let Some(n) = name {
                f.insert("name".into(), n);
            }
            print_summaries(out, &client.list_entities(EntityKind::Dataset, &f, list.offset, list.limit)?)
        }
        DatasetsCmd::Get { id, with_data } => {
            let d = client.get_dataset(id)?;
            if with_data {
                client.get_dataset_file(&d)?;
                client.get_dataset_features(id)?;
            }
            write_line(out, Entity::Dataset(d).to_xml().trim_end())
        }
        DatasetsCmd::Upload { description, data } => {
            let el = omlclient::protocol::xml::parse(&read_file(&description)?).map_err(ProtocolError::from)?;
            let draft = match Entity::decode_unchecked(EntityKind::Dataset, &el).map_err(ProtocolError::from)? {
                Entity::Dataset(d) => d,
                _ => unreachable!(),
            };
            let id = client.upload_dataset(&draft, &read_file(&data)?)?;
            write_line(out, id)
        }
    }
}

fn tasks(client: &CachedClient, cmd: TasksCmd, out: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        TasksCmd::List { list } => {
            print_summaries(out, &client.list_entities(EntityKind::Task, &filters(&list)?, list.offset, list.limit)?)
        }
        TasksCmd::Get { id, with_splits } => {
            let t = client.get_task(id)?;
            if with_splits {
                client.get_task_splits(id)?;
            }
            write_line(out, Entity::Task(t).to_xml().trim_end())
        }
        TasksCmd::Create {
            dataset,
            target,
            folds,
            repeats,
            holdout,
        } => {
            let d = client.get_dataset(dataset)?;
            let target = target
                .or_else(|| d.default_target_attribute.clone())
                .ok_or_else(|| CliError::new("invalid_argument", "dataset has no default target; pass --target"))?;
            let procedure = match holdout {
                Some(percentage) => EstimationProcedure {
                    resampling: Resampling::Holdout { percentage },
                    repeats,
                    splits_ref: String::new(),
                },
                None => EstimationProcedure::cross_validation(repeats, folds),
            };
            let task = Task::classification(&d, &target, procedure).map_err(|m| CliError::new("invalid_argument", m))?;
            let problems = task.validate();
            if !problems.is_empty() {
                return Err(CliError::new("invalid_argument", problems.join("; ")));
            }
            write_line(out, client.publish_task(&task)?)
        }
    }
}

fn run_models(client: &CachedClient, args: RunArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let model: ModelSpec = args.model.parse()?;
    let task_ids = match &args.suite {
        Some(alias) => client.get_suite(alias)?.task_ids,
        None => args.task.clone(),
    };
    let options = RunOptions {
        base_seed: args.seed,
        workers: args.workers,
    };
    for id in task_ids {
        let task = client.get_task(id)?;
        let mut run = runner::run_model_on_task(client, &model, &task, &options)?;
        if args.publish {
            run = runner::publish_run(client, &model, &task, &run)?;
        }
        if let Some(dir) = &args.out {
            let dir = dir.join(format!("task_{id}"));
            let predictions = arff::serialize(&runner::predictions_to_arff(&run, &task));
            write_file(&dir.join("predictions.arff"), predictions.as_bytes())?;
            write_file(&dir.join("run.xml"), Entity::Run(run.clone()).to_xml().as_bytes())?;
        }
        let accuracy = run.local_evaluations[runner::PREDICTIVE_ACCURACY];
        let mut line = format!("task {id}\t{}={accuracy}", runner::PREDICTIVE_ACCURACY);
        if let Some(run_id) = run.id {
            line.push_str(&format!("\trun {run_id}"));
        }
        write_line(out, line)?;
    }
    Ok(())
}

fn evals(client: &CachedClient, cmd: EvalsCmd, out: &mut dyn Write) -> Result<(), CliError> {
    let EvalsCmd::Export {
        function,
        flows,
        tasks,
        log10,
        ln,
        out: path,
    } = cmd;
    let records = client.list_evaluations_setups(&function, &flows, &tasks)?;
    let table = flatten_evaluations(&records, ParameterLayout::SeparateColumns);
    let log_cols: Vec<LogColumn> = log10
        .into_iter()
        .map(LogColumn::log10)
        .chain(ln.into_iter().map(LogColumn::ln))
        .collect();
    let summary = report::export_evaluations(&table, &log_cols, &path)?;
    write_line(out, format!("wrote {} rows to {}", summary.rows, path.display()))?;
    if let Some(svg) = summary.svg {
        write_line(out, format!("wrote heatmap to {}", svg.display()))?;
    }
    Ok(())
}
