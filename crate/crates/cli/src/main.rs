use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use icr_core::artifact::SelectionArtifact;
use icr_core::backend::{
    cache_clear, cache_stats, parse_embedder, BackendOptions, BackendRegistry, CachedModel, Embedder, LabelModel,
    SyntheticParams,
};
use icr_core::baselines::Retriever;
use icr_core::eval::{
    ablate_iterations, ablate_misconfidence_bins, ablate_variants, distance_analysis, evaluate, psi_case_study,
    transfer_evaluate, AblationReport, Metric, PromptSource,
};
use icr_core::manifest::RunManifest;
use icr_core::selection::InitMode;
use icr_core::strategy::{SelectContext, SelectParams, SelectorRegistry};
use icr_core::task::{DataFormat, Dataset, DatasetRole, DemonstrationSet, TaskSpec};
use icr_core::Error;
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "icr", version, about = "Pick in-context demonstrations by misconfidence and evaluate them")]
struct Cli {
    /// Response cache directory [env: ICR_CACHE_DIR, default ./.icr-cache]
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a prompt artifact or retrieval plan.
    Select(SelectArgs),
    /// Score a prompt artifact or retrieval plan on a test set.
    Eval(EvalArgs),
    /// Run one ablation experiment.
    Ablate {
        #[command(subcommand)]
        which: AblateCommand,
    },
    /// Inspect or empty the response cache.
    Cache {
        #[command(subcommand)]
        which: CacheCommand,
    },
}

#[derive(Args, Debug, Clone, Serialize)]
struct BackendArgs {
    #[arg(long, value_enum, default_value_t = BackendKind::Synthetic)]
    backend: BackendKind,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// JSON file with synthetic backend parameters (bias, alpha, temperature).
    #[arg(long)]
    synthetic_params: Option<PathBuf>,
    /// Concurrent provider calls.
    #[arg(long)]
    parallelism: Option<usize>,
    /// Embedding provider: hashing, http, or file:<path>.
    #[arg(long, default_value = "hashing")]
    embeddings: String,
    /// Model name for http embeddings; falls back to --model.
    #[arg(long)]
    embed_model: Option<String>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum BackendKind {
    Synthetic,
    Http,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum InitArg {
    Uniform,
    Stratified,
}

#[derive(Args, Debug, Clone, Serialize)]
struct SelectionArgs {
    #[arg(long, default_value_t = 16)]
    m: usize,
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    iters: usize,
    /// Stratified pool cap; 0 disables it.
    #[arg(long, default_value_t = 500)]
    pool_cap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = InitArg::Uniform)]
    init_mode: InitArg,
    #[arg(long)]
    skip_failures: bool,
}

impl SelectionArgs {
    fn validate(&self) -> Result<(), Error> {
        if self.n > self.m {
            return Err(Error::Config(format!("--n {} must not exceed --m {}", self.n, self.m)));
        }
        Ok(())
    }

    fn params(&self, embeddings: &str) -> SelectParams {
        SelectParams {
            m: self.m,
            n: self.n,
            iterations: self.iters,
            seed: self.seed,
            pool_cap: (self.pool_cap > 0).then_some(self.pool_cap),
            init_mode: match self.init_mode {
                InitArg::Uniform => InitMode::Uniform,
                InitArg::Stratified => InitMode::Stratified,
            },
            skip_failures: self.skip_failures,
            embeddings: embeddings.to_string(),
            ..SelectParams::default()
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct SelectArgs {
    /// icr, uniform, best-of-10, kate, or ambig.
    #[arg(long, default_value = "icr")]
    method: String,
    #[arg(long)]
    task: PathBuf,
    #[arg(long)]
    pool: PathBuf,
    /// Validation set for best-of-10.
    #[arg(long)]
    validation: Option<PathBuf>,
    #[command(flatten)]
    selection: SelectionArgs,
    #[command(flatten)]
    backend: BackendArgs,
    /// Demonstrations per query for kate and ambig; defaults to --m.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 100)]
    validation_size: usize,
    #[arg(long, default_value = "accuracy")]
    metric: String,
    #[arg(long, default_value = "artifact.json")]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    /// Prompt artifact or retrieval plan.
    #[arg(long)]
    artifact: PathBuf,
    /// Task the artifact is checked against; required unless --transfer.
    #[arg(long)]
    task: Option<PathBuf>,
    #[arg(long)]
    test: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long)]
    skip_failures: bool,
    /// Evaluate despite a task name or label-set mismatch.
    #[arg(long)]
    force: bool,
    /// Apply the prompt to the --target task.
    #[arg(long, requires = "target")]
    transfer: bool,
    #[arg(long)]
    target: Option<PathBuf>,
    /// SRC=DST label mapping for transfer; repeatable.
    #[arg(long, value_parser = parse_mapping)]
    label_map: Vec<(String, String)>,
    /// Target-task pool for the same-task uniform baseline.
    #[arg(long)]
    target_pool: Option<PathBuf>,
    /// Output directory for report.json, report.csv and manifest.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct AblateCommon {
    #[arg(long)]
    task: PathBuf,
    #[arg(long)]
    pool: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[command(flatten)]
    selection: SelectionArgs,
    #[command(flatten)]
    backend: BackendArgs,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum AblateCommand {
    /// Metrics after each of k ICR iterations.
    Iters {
        #[command(flatten)]
        common: AblateCommon,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Uniform prompts drawn from equal-count misconfidence bins.
    Bins {
        #[command(flatten)]
        common: AblateCommon,
        #[arg(long, default_value_t = 5)]
        bins: usize,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
    },
    /// Zero-shot initialization and full replacement against standard ICR.
    Variants {
        #[command(flatten)]
        common: AblateCommon,
    },
    /// Embedding distance of test cases whose prediction the prompt changes.
    Distance {
        #[command(flatten)]
        common: AblateCommon,
        /// Prompt artifact to analyse; ICR is run when omitted.
        #[arg(long)]
        artifact: Option<PathBuf>,
    },
    /// Per-label misconfidence histograms and confusion before and after ICR.
    Psi {
        #[command(flatten)]
        common: AblateCommon,
        #[arg(long, default_value_t = 10)]
        hist_bins: usize,
    },
}

#[derive(Subcommand, Debug)]
enum CacheCommand {
    Stats,
    Clear {
        /// Confirm deletion.
        #[arg(long)]
        yes: bool,
    },
}

fn parse_mapping(s: &str) -> Result<(String, String), String> {
    let (a, b) = s.split_once('=').ok_or_else(|| format!("expected SRC=DST, got '{s}'"))?;
    Ok((a.to_string(), b.to_string()))
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_config() { 2 } else { 1 },
            error: e.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<Error>() {
            Some(e) if e.is_config() => 2,
            _ => 1,
        };
        Failure { code, error }
    }
}

type CliResult<T> = Result<T, Failure>;

fn usage(message: impl Into<String>) -> Failure {
    Error::Config(message.into()).into()
}

struct Run {
    manifest: RunManifest,
    clock: Instant,
    cache_dir: PathBuf,
}

impl Run {
    fn start(cache_dir: Option<PathBuf>, config: &impl Serialize) -> CliResult<Self> {
        let cache_dir = cache_dir
            .or_else(|| std::env::var_os("ICR_CACHE_DIR").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(".icr-cache"));
        let started_at = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let manifest = RunManifest {
            command_line: std::env::args().collect(),
            config: serde_json::to_value(config).map_err(Error::from)?,
            started_at,
            ..RunManifest::default()
        };
        Ok(Self {
            manifest,
            clock: Instant::now(),
            cache_dir,
        })
    }

    fn task(&mut self, path: &Path) -> CliResult<TaskSpec> {
        self.manifest.record_input(path)?;
        Ok(TaskSpec::load(path)?)
    }

    fn dataset(&mut self, task: &TaskSpec, path: &Path, role: DatasetRole) -> CliResult<Dataset> {
        self.manifest.record_input(path)?;
        Ok(task.load_dataset(path, DataFormat::from_path(path), role)?)
    }

    fn backend(&mut self, args: &BackendArgs) -> CliResult<CachedModel<Box<dyn LabelModel>>> {
        let synthetic = match &args.synthetic_params {
            Some(path) => {
                self.manifest.record_input(path)?;
                let text = std::fs::read_to_string(path).map_err(Error::from)?;
                Some(serde_json::from_str::<SyntheticParams>(&text).map_err(|e| {
                    Error::Config(format!("{}: {e}", path.display()))
                })?)
            }
            None => None,
        };
        let opts = BackendOptions {
            base_url: args.base_url.clone(),
            model: args.model.clone(),
            api_key: std::env::var("ICR_API_KEY").ok(),
            synthetic,
            parallelism: args.parallelism,
            ..BackendOptions::default()
        };
        let name = match args.backend {
            BackendKind::Synthetic => "synthetic",
            BackendKind::Http => "http",
        };
        let inner = BackendRegistry::default().build(name, &opts)?;
        self.manifest.backend = Some(inner.identity());
        self.manifest.base_url = args.base_url.clone();
        log::info!("backend {name}, cache at {}", self.cache_dir.display());
        Ok(CachedModel::new(inner, &self.cache_dir)?)
    }

    fn write(&mut self, path: &Path, bytes: &[u8]) -> CliResult<()> {
        self.manifest.write_output(path, bytes)?;
        Ok(())
    }

    fn write_json(&mut self, path: &Path, value: &impl Serialize) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
        text.push('\n');
        self.write(path, text.as_bytes())
    }

    fn finish(mut self, model: Option<&CachedModel<Box<dyn LabelModel>>>, path: &Path) -> CliResult<()> {
        if let Some(m) = model {
            self.manifest.provider_calls = Some(m.misses());
            self.manifest.cache_hits = Some(m.hits());
        }
        self.manifest.duration_ms = self.clock.elapsed().as_millis() as u64;
        let mut text = serde_json::to_string_pretty(&self.manifest).map_err(Error::from)?;
        text.push('\n');
        icr_core::manifest::write_atomic(path, text.as_bytes())?;
        Ok(())
    }
}

fn embedder(args: &BackendArgs, spec: &str) -> CliResult<Box<dyn Embedder>> {
    Ok(parse_embedder(
        spec,
        args.base_url.as_deref(),
        args.embed_model.as_deref().or(args.model.as_deref()),
        std::env::var("ICR_API_KEY").ok(),
    )?)
}

fn manifest_path_for(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("artifact");
    out.with_file_name(format!("{stem}.manifest.json"))
}

fn cmd_select(args: SelectArgs, cache_dir: Option<PathBuf>) -> CliResult<()> {
    let registry = SelectorRegistry::default();
    let selector = registry.get(&args.method)?;
    if selector.name() == "icr" {
        args.selection.validate()?;
    }
    let mut run = Run::start(cache_dir, &args)?;
    let task = run.task(&args.task)?;
    let pool = run.dataset(&task, &args.pool, DatasetRole::TrainPool)?;
    let validation = match &args.validation {
        Some(p) => Some(run.dataset(&task, p, DatasetRole::Validation)?),
        None if selector.needs_validation() => {
            return Err(usage(format!("method '{}' needs --validation", args.method)))
        }
        None => None,
    };
    let metric: Metric = args.metric.parse()?;
    let params = SelectParams {
        k: args.k,
        trials: args.trials,
        validation_size: Some(args.validation_size),
        metric,
        ..args.selection.params(&args.backend.embeddings)
    };
    let model = if selector.needs_backend() {
        Some(run.backend(&args.backend)?)
    } else {
        None
    };
    run.manifest.seeds = vec![params.seed];
    let artifact = selector.select(&SelectContext {
        task: &task,
        pool: &pool,
        validation: validation.as_ref(),
        model: model.as_ref().map(|m| m as &dyn LabelModel),
        params: &params,
    })?;
    if let SelectionArtifact::Prompt(p) = &artifact {
        run.manifest.skipped_ids = p.skipped_ids.clone();
    }
    run.manifest.artifact_hash = Some(artifact.content_hash().to_string());
    let mut text = artifact.to_json()?;
    text.push('\n');
    run.write(&args.out, text.as_bytes())?;
    eprintln!("wrote {}", args.out.display());
    run.finish(model.as_ref(), &manifest_path_for(&args.out))
}

fn load_artifact(run: &mut Run, path: &Path) -> CliResult<SelectionArtifact> {
    run.manifest.record_input(path)?;
    let text = std::fs::read_to_string(path).map_err(Error::from)?;
    let artifact = SelectionArtifact::from_json(&text)?;
    if !artifact.verify()? {
        return Err(anyhow::anyhow!("{}: content hash does not match its contents", path.display()).into());
    }
    run.manifest.artifact_hash = Some(artifact.content_hash().to_string());
    Ok(artifact)
}

fn cmd_eval(args: EvalArgs, cache_dir: Option<PathBuf>) -> CliResult<()> {
    let mut run = Run::start(cache_dir, &args)?;
    let artifact = load_artifact(&mut run, &args.artifact)?;
    let source_task = match &args.task {
        Some(p) => Some(run.task(p)?),
        None if args.transfer => None,
        None => return Err(usage("eval needs --task")),
    };
    if let Some(task) = &source_task {
        artifact.check_task(task, args.force)?;
    }
    let model = run.backend(&args.backend)?;
    let report_json = args.out.join("report.json");
    let report_csv = args.out.join("report.csv");

    let report = if args.transfer {
        let SelectionArtifact::Prompt(prompt) = &artifact else {
            return Err(usage("--transfer needs a prompt artifact, not a retrieval plan"));
        };
        let target_path = args.target.as_ref().ok_or_else(|| usage("--transfer needs --target"))?;
        let target = run.task(target_path)?;
        let test = run.dataset(&target, &args.test, DatasetRole::Test)?;
        let target_pool = match &args.target_pool {
            Some(p) => Some(run.dataset(&target, p, DatasetRole::TrainPool)?),
            None => None,
        };
        let label_map: BTreeMap<String, String> = args.label_map.iter().cloned().collect();
        run.manifest.seeds = vec![prompt.seed];
        let transfer = transfer_evaluate(
            &model,
            &prompt.demonstrations,
            &target,
            &test,
            (!label_map.is_empty()).then_some(&label_map),
            target_pool.as_ref(),
            args.skip_failures,
        )?;
        run.write_json(&report_json, &transfer)?;
        if let (Some(da), Some(df)) = (transfer.delta_accuracy, transfer.delta_macro_f1) {
            println!("delta_accuracy={da:+.4} delta_macro_f1={df:+.4}");
        }
        transfer.report
    } else {
        let task = source_task.expect("checked above");
        let test = run.dataset(&task, &args.test, DatasetRole::Test)?;
        let source = match artifact {
            SelectionArtifact::Prompt(p) => {
                run.manifest.seeds = vec![p.seed];
                PromptSource::Fixed(p.demonstrations)
            }
            SelectionArtifact::Plan(plan) => {
                let embed = embedder(&args.backend, &plan.embeddings)?;
                PromptSource::Retrieval(Retriever::new(plan, embed, &task)?)
            }
        };
        let report = evaluate(&model, &task, &source, &test, args.skip_failures)?;
        run.write_json(&report_json, &report)?;
        report
    };
    run.write(&report_csv, report.to_csv()?.as_bytes())?;
    run.manifest.skipped_ids = report.skipped_ids.clone();
    run.manifest.metrics = Some(serde_json::json!({
        "accuracy": report.accuracy,
        "macro_f1": report.macro_f1,
    }));
    println!("accuracy={:.4}\nmacro_f1={:.4}", report.accuracy, report.macro_f1);
    run.finish(Some(&model), &args.out.join("manifest.json"))
}

fn cmd_ablate(which: AblateCommand, cache_dir: Option<PathBuf>) -> CliResult<()> {
    let (name, common) = match &which {
        AblateCommand::Iters { common, .. } => ("iters", common),
        AblateCommand::Bins { common, .. } => ("bins", common),
        AblateCommand::Variants { common } => ("variants", common),
        AblateCommand::Distance { common, .. } => ("distance", common),
        AblateCommand::Psi { common, .. } => ("psi", common),
    };
    common.selection.validate()?;
    let mut run = Run::start(cache_dir, common)?;
    let task = run.task(&common.task)?;
    let pool = run.dataset(&task, &common.pool, DatasetRole::TrainPool)?;
    let test = run.dataset(&task, &common.test, DatasetRole::Test)?;
    let model = run.backend(&common.backend)?;
    let params = common.selection.params(&common.backend.embeddings);
    let config = params.icr_config();
    run.manifest.seeds = vec![params.seed];

    let reports = match &which {
        AblateCommand::Iters { k, .. } => vec![ablate_iterations(&model, &task, &pool, &test, &config, *k)?],
        AblateCommand::Bins { bins, seeds, .. } => {
            run.manifest.seeds = seeds.clone();
            let pool = params.capped_pool(&task, &pool)?;
            vec![ablate_misconfidence_bins(
                &model,
                &task,
                &pool,
                &test,
                *bins,
                params.m,
                seeds,
                params.skip_failures,
            )?]
        }
        AblateCommand::Variants { .. } => ablate_variants(&model, &task, &pool, &test, &config)?,
        AblateCommand::Distance { artifact, .. } => {
            let demos: DemonstrationSet = match artifact {
                Some(path) => {
                    let artifact = load_artifact(&mut run, path)?;
                    artifact.check_task(&task, false)?;
                    let SelectionArtifact::Prompt(p) = artifact else {
                        return Err(usage("distance analysis needs a prompt artifact, not a retrieval plan"));
                    };
                    p.demonstrations
                }
                None => icr_core::selection::icr_select(&model, &task, &pool, &config)?.demos,
            };
            let embed = embedder(&common.backend, &common.backend.embeddings)?;
            vec![distance_analysis(&model, &task, &demos, &test, embed.as_ref(), params.skip_failures)?]
        }
        AblateCommand::Psi { hist_bins, .. } => vec![psi_case_study(&model, &task, &pool, &test, &config, *hist_bins)?],
    };

    for report in &reports {
        write_ablation(&mut run, &common.out, report)?;
    }
    run.finish(Some(&model), &common.out.join(format!("ablate-{name}.manifest.json")))
}

fn write_ablation(run: &mut Run, dir: &Path, report: &AblationReport) -> CliResult<()> {
    let name = report.variant_name();
    let json = dir.join(format!("{name}.json"));
    run.write_json(&json, report)?;
    run.write(&dir.join(format!("{name}.csv")), report.to_csv()?.as_bytes())?;
    if let Some(svg) = report.to_svg() {
        run.write(&dir.join(format!("{name}.svg")), svg.as_bytes())?;
    }
    eprintln!("wrote {}", json.display());
    Ok(())
}

fn cmd_cache(which: CacheCommand, cache_dir: Option<PathBuf>) -> CliResult<()> {
    let dir = cache_dir
        .or_else(|| std::env::var_os("ICR_CACHE_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(".icr-cache"));
    match which {
        CacheCommand::Stats => {
            let stats = cache_stats(&dir)?;
            println!("entries={} bytes={}", stats.entries, stats.bytes);
        }
        CacheCommand::Clear { yes: false } => {
            return Err(usage(format!("refusing to clear {} without --yes", dir.display())));
        }
        CacheCommand::Clear { yes: true } => {
            let removed = cache_clear(&dir).map_err(|e| anyhow::Error::new(e).context(format!("clearing {}", dir.display())))?;
            println!("removed={removed}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Select(args) => cmd_select(args, cli.cache_dir),
        Command::Eval(args) => cmd_eval(args, cli.cache_dir),
        Command::Ablate { which } => cmd_ablate(which, cli.cache_dir),
        Command::Cache { which } => cmd_cache(which, cli.cache_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
