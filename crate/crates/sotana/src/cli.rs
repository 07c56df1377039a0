//! Command-line front end. Settings resolve as defaults < `--config` file <
//! `--set key=value` < dedicated flags; the effective set is logged at the
//! start of every run.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sotana_core::corpus::CodegenTask;
use sotana_core::dataforge::{bootstrap_seeds, run_generation, CompletionBackend, GenerationOutcome, InstructionTriple, Origin, SeedPool};
use sotana_core::microlm::{train, TrainingHistory};

use crate::backend::{HttpBackend, MockBackend, RetryPolicy, Retrying};
use crate::checkpoint::{self, Kind};
use crate::config::RunConfig;
use crate::evaluate::{self, CodegenSample, CodegenSettings, Prediction};
use crate::exec::{ExecLimits, Runner};
use crate::infer::{self, CODEGEN_INSTRUCTION, QA_INSTRUCTION, SUMM_INSTRUCTION};
use crate::jsonl::{self, read_strict, write_json, write_jsonl};
use crate::report::{self, StudyReport};
use crate::server;
use crate::study_store::{system_clock, StudyStore};
use crate::sweep::{self, SweepSettings};

#[derive(Debug, Parser)]
#[command(name = "sotana", version, about = "Instruction data generation, LoRA tuning, evaluation and human-rating study tools")]
pub struct Cli {
    /// Flat `key = value` config file (keys in docs/config.md).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `rng_seed`.
    #[arg(long, global = true)]
    pub rng_seed: Option<u64>,
    /// Overrides `log_level`.
    #[arg(long, global = true)]
    pub log_level: Option<String>,
    /// Any config key, as `key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate instruction triples from a seed pool.
    Forge(ForgeArgs),
    /// Fine-tune adapters on a triples file.
    Train(TrainArgs),
    /// Greedy generation from a checkpoint.
    Generate(GenerateArgs),
    /// Score predictions.
    Eval(EvalArgs),
    /// Train and evaluate on growing prefixes of one dataset.
    Sweep(SweepArgs),
    /// Human-evaluation study: init, serve, report.
    Study(StudyArgs),
    /// Render report files as text and CSV tables.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Args)]
pub struct ForgeArgs {
    /// Seed pool JSONL (external demonstrations with --bootstrap).
    #[arg(long)]
    pub seeds: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub target: Option<usize>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Mock fixture JSONL.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    /// Write the filter report here as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Bootstrap mode: draw every prompt from the seeds file only and
    /// emit this many candidates for manual review.
    #[arg(long, value_name = "N")]
    pub bootstrap: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub int8: bool,
    /// Save only the adapter factors.
    #[arg(long)]
    pub adapters_only: bool,
    /// Write the per-step losses here as JSON.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Qa,
    Summ,
    Codegen,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Plain text used as the instruction, or JSONL of
    /// `{"id", "instruction", "input"}` prompts when it ends in `.jsonl`.
    #[arg(long, conflicts_with = "task")]
    pub prompt_file: Option<PathBuf>,
    /// Build prompts from an evaluation dataset instead.
    #[arg(long, value_enum, requires = "data")]
    pub task: Option<Task>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Summarization examples taken from the start of the file.
    #[arg(long, default_value_t = 100)]
    pub limit: usize,
    /// Predictions JSONL; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub max_new: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(value_enum)]
    pub task: Task,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Summarization examples taken from the start of the file.
    #[arg(long, default_value_t = 100)]
    pub limit: usize,
    #[arg(long)]
    pub k: Option<u64>,
    /// Completions per task; defaults to k.
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out triples scored after each run.
    #[arg(long)]
    pub eval: PathBuf,
    /// Comma-separated sizes; overrides `sweep.sizes`.
    #[arg(long)]
    pub sizes: Option<String>,
    /// CSV table.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[command(subcommand)]
    pub command: StudyCommand,
}

#[derive(Debug, Subcommand)]
pub enum StudyCommand {
    /// Create a study directory from a pairs file.
    Init {
        #[arg(long)]
        pairs: PathBuf,
        /// Comma-separated rater ids.
        #[arg(long, value_delimiter = ',', required = true)]
        raters: Vec<String>,
        /// Comma-separated senior ids allowed to adjudicate.
        #[arg(long, value_delimiter = ',')]
        seniors: Vec<String>,
        #[arg(long)]
        dir: PathBuf,
    },
    /// Run the rating API.
    Serve {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        port: Option<u16>,
        /// Front-end files served for non-API paths.
        #[arg(long)]
        r#static: Option<PathBuf>,
    },
    /// Aggregate scores and agreement statistics.
    Report {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Leave out pairs that lack two ratings instead of failing.
        #[arg(long)]
        exclude_incomplete: bool,
    },
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Metric, pass@k or study report JSON files.
    pub inputs: Vec<PathBuf>,
    /// Text output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for one CSV per table.
    #[arg(long)]
    pub csv_dir: Option<PathBuf>,
}

/// Resolves the effective configuration for a parsed command line.
pub fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for pair in &cli.set {
        cfg.set_pair(pair)?;
    }
    cfg.set_opt("rng_seed", cli.rng_seed)?;
    cfg.set_opt("log_level", cli.log_level.as_deref())?;
    match &cli.command {
        Command::Forge(a) => {
            cfg.set_opt("forge.target_count", a.target)?;
            cfg.set_opt("forge.backend", a.backend.map(|b| if b == BackendKind::Http { "http" } else { "mock" }))?;
            cfg.set_opt("forge.endpoint", a.endpoint.as_deref())?;
            cfg.set_opt("forge.fixture", a.fixture.as_ref().map(|p| p.display()))?;
        }
        Command::Train(a) => {
            cfg.set_opt("train.rank", a.r)?;
            cfg.set_opt("train.alpha", a.alpha)?;
            cfg.set_opt("train.learning_rate", a.lr)?;
            cfg.set_opt("train.epochs", a.epochs)?;
            if a.int8 {
                cfg.set("train.int8", "true", "flag")?;
            }
        }
        Command::Generate(a) => cfg.set_opt("generate.max_new_tokens", a.max_new)?,
        Command::Eval(a) => cfg.set_opt("eval.k", a.k)?,
        Command::Sweep(a) => cfg.set_opt("sweep.sizes", a.sizes.as_deref())?,
        Command::Study(StudyArgs { command: StudyCommand::Serve { port, .. } }) => cfg.set_opt("study.port", *port)?,
        _ => {}
    }
    Ok(cfg)
}

pub fn run(cli: Cli, cfg: &RunConfig) -> Result<()> {
    log::info!("effective config:\n{}", cfg.echo().trim_end());
    match cli.command {
        Command::Forge(a) => forge(&a, cfg),
        Command::Train(a) => train_cmd(&a, cfg),
        Command::Generate(a) => generate(&a, cfg),
        Command::Eval(a) => eval(&a, cfg),
        Command::Sweep(a) => sweep_cmd(&a, cfg),
        Command::Study(a) => study(a.command, cfg),
        Command::Report(a) => report_cmd(&a),
    }
}

fn load_triples(path: &Path, origin: Origin) -> Result<Vec<InstructionTriple>> {
    let mut ts: Vec<InstructionTriple> = read_strict(path)?;
    for t in &mut ts {
        t.origin = origin;
    }
    Ok(ts)
}

fn forge(a: &ForgeArgs, cfg: &RunConfig) -> Result<()> {
    let fc = cfg.forge_config()?;
    let policy = RetryPolicy {
        retries: cfg.u64("forge.retries")? as u32,
        initial_backoff: Duration::from_millis(cfg.u64("forge.initial_backoff_ms")?),
    };
    let seeds = load_triples(&a.seeds, Origin::Seed)?;
    let run = |backend: &mut dyn CompletionBackend| -> Result<GenerationOutcome> {
        let mut b = DynBackend(backend);
        Ok(match a.bootstrap {
            Some(n) => bootstrap_seeds(&mut b, &seeds, n, &fc)?,
            None => run_generation(&mut b, &mut SeedPool::new(seeds.clone())?, &fc)?,
        })
    };
    let outcome = match cfg.str("forge.backend") {
        "mock" => {
            let fixture = cfg.str("forge.fixture");
            if fixture.is_empty() {
                bail!("the mock backend needs a fixture (--fixture or forge.fixture)");
            }
            let mut b = Retrying::new(MockBackend::from_file(Path::new(fixture))?, policy);
            run(&mut b)?
        }
        "http" => {
            let timeout = Duration::from_secs(cfg.u64("forge.timeout_secs")?);
            let http = HttpBackend::new(cfg.str("forge.endpoint"), cfg.str("forge.model"), timeout);
            let mut b = Retrying::new(http, policy);
            run(&mut b)?
        }
        other => bail!("config key forge.backend: unknown backend {other:?} (mock or http)"),
    };
    write_jsonl(&a.out, &outcome.dataset).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(p) = &a.report {
        #[derive(Serialize)]
        struct ForgeReport<'a> {
            report: &'a sotana_core::dataforge::FilterReport,
            queries: usize,
            budget_exhausted: bool,
        }
        let r = ForgeReport { report: &outcome.report, queries: outcome.queries, budget_exhausted: outcome.budget_exhausted };
        write_json(p, &r).with_context(|| format!("writing {}", p.display()))?;
    }
    log::info!(
        "accepted {} of {} candidates in {} queries",
        outcome.report.accepted,
        outcome.report.total_candidates(),
        outcome.queries
    );
    if outcome.budget_exhausted {
        log::warn!("query budget exhausted with {} of the requested triples", outcome.dataset.len());
    }
    Ok(())
}

/// Lets one generic call serve both concrete backends.
struct DynBackend<'a>(&'a mut dyn CompletionBackend);

impl CompletionBackend for DynBackend<'_> {
    fn complete(
        &mut self,
        request: &sotana_core::dataforge::CompletionRequest,
    ) -> Result<String, sotana_core::dataforge::BackendError> {
        self.0.complete(request)
    }

    fn complete_batch(
        &mut self,
        requests: &[sotana_core::dataforge::CompletionRequest],
    ) -> Vec<Result<String, sotana_core::dataforge::BackendError>> {
        self.0.complete_batch(requests)
    }
}

fn train_cmd(a: &TrainArgs, cfg: &RunConfig) -> Result<()> {
    let tc = cfg.train_config()?;
    let mc = cfg.model_config()?;
    let data = load_triples(&a.data, Origin::Generated)?;
    let mut model = infer::adapted_model(mc, &tc, tc.rng_seed)?;
    let counts = model.count_params();
    log::info!("{} trainable / {} frozen parameters", counts.trainable, counts.frozen);
    let history: TrainingHistory = train(&mut model, &data, &tc)?;
    if let (Some(first), Some(last)) = (history.losses.first(), history.losses.last()) {
        log::info!("{} steps, loss {first:.4} -> {last:.4}", history.steps());
    }
    let kind = if a.adapters_only { Kind::Adapters } else { Kind::Full };
    checkpoint::save(&a.out, &model, tc.rng_seed, kind)?;
    if let Some(p) = &a.history {
        write_json(p, &history)?;
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct PromptRecord {
    id: String,
    instruction: String,
    #[serde(default)]
    input: String,
}

fn generate(a: &GenerateArgs, cfg: &RunConfig) -> Result<()> {
    let model = checkpoint::load(&a.ckpt)?.model;
    let max_new = cfg.usize("generate.max_new_tokens")?;
    let gen = |instruction: &str, input: &str| infer::complete(&model, instruction, input, max_new);

    let write = |lines: Vec<serde_json::Value>| -> Result<()> {
        match &a.out {
            Some(p) => write_jsonl(p, &lines).with_context(|| format!("writing {}", p.display())),
            None => {
                for l in lines {
                    println!("{l}");
                }
                Ok(())
            }
        }
    };
    if let (Some(task), Some(data)) = (a.task, &a.data) {
        let mut out = Vec::new();
        match task {
            Task::Qa | Task::Summ => {
                let examples = match task {
                    Task::Qa => evaluate::qa_examples(&jsonl::load_so_questions(data)?.0),
                    _ => evaluate::summ_examples(&jsonl::load_code_summaries(data, a.limit)?.0),
                };
                let instruction = if task == Task::Qa { QA_INSTRUCTION } else { SUMM_INSTRUCTION };
                for (id, input, _) in examples {
                    let prediction = gen(instruction, &input)?;
                    out.push(serde_json::to_value(Prediction { id, prediction })?);
                }
            }
            Task::Codegen => {
                let (tasks, _): (Vec<CodegenTask>, _) = jsonl::load_codegen_tasks(data)?;
                for t in tasks {
                    let completion = gen(CODEGEN_INSTRUCTION, &t.prompt)?;
                    out.push(serde_json::to_value(CodegenSample { task_id: t.task_id, completion })?);
                }
            }
        }
        return write(out);
    }
    let Some(pf) = &a.prompt_file else {
        bail!("generate needs --prompt-file or --task with --data");
    };
    if pf.extension().is_some_and(|e| e == "jsonl") {
        let prompts: Vec<PromptRecord> = read_strict(pf)?;
        let mut out = Vec::with_capacity(prompts.len());
        for p in prompts {
            let prediction = gen(&p.instruction, &p.input)?;
            out.push(serde_json::to_value(Prediction { id: p.id, prediction })?);
        }
        write(out)
    } else {
        let text = std::fs::read_to_string(pf).with_context(|| format!("reading {}", pf.display()))?;
        let completion = gen(text.trim(), "")?;
        match &a.out {
            Some(p) => std::fs::write(p, completion).with_context(|| format!("writing {}", p.display())),
            None => {
                println!("{completion}");
                Ok(())
            }
        }
    }
}

fn eval(a: &EvalArgs, cfg: &RunConfig) -> Result<()> {
    match a.task {
        Task::Qa | Task::Summ => {
            let examples = if a.task == Task::Qa {
                let (qs, rep) = jsonl::load_so_questions(&a.data)?;
                log::info!("{} questions loaded, {} excluded", qs.len(), rep.total_excluded());
                evaluate::qa_examples(&qs)
            } else {
                let (ps, rep) = jsonl::load_code_summaries(&a.data, a.limit)?;
                log::info!("{} summaries loaded, {} excluded", ps.len(), rep.total_excluded());
                evaluate::summ_examples(&ps)
            };
            let preds: Vec<Prediction> = read_strict(&a.pred)?;
            let report = evaluate::score_predictions(&examples, &preds)?;
            let c = &report.corpus;
            log::info!(
                "BLEU {:.2}  Meteor {:.2}  Rouge-L {:.2}  Cider {:.2}",
                c.bleu_mean,
                c.meteor_mean,
                c.rouge_l_mean,
                c.cider
            );
            write_json(&a.out, &report)?;
        }
        Task::Codegen => {
            let (tasks, _) = jsonl::load_codegen_tasks(&a.data)?;
            let samples: Vec<CodegenSample> = read_strict(&a.pred)?;
            let k = cfg.u64("eval.k")?;
            let settings = CodegenSettings {
                k,
                samples: a.samples.unwrap_or(k as usize),
                limits: ExecLimits {
                    wall: Duration::from_secs_f64(cfg.f64("eval.wall_secs")?),
                    output_bytes: cfg.usize("eval.output_bytes")?,
                },
                workers: cfg.usize("eval.workers")?,
            };
            let runner = Runner::parse(cfg.str("eval.runner"))?;
            let report = evaluate::eval_codegen(&tasks, &samples, settings, &runner)?;
            log::info!("pass@{} = {:.2}", report.pass.k, report.pass.pass_at_k);
            write_json(&a.out, &report)?;
        }
    }
    Ok(())
}

fn sweep_cmd(a: &SweepArgs, cfg: &RunConfig) -> Result<()> {
    let data = load_triples(&a.data, Origin::Generated)?;
    let eval_set = load_triples(&a.eval, Origin::Generated)?;
    let settings = SweepSettings {
        model: cfg.model_config()?,
        train: cfg.train_config()?,
        max_new_tokens: cfg.usize("generate.max_new_tokens")?,
    };
    let rows = sweep::sweep(&data, &cfg.usize_list("sweep.sizes")?, &eval_set, &settings)?;
    let file = std::fs::File::create(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    sweep::write_csv(&rows, file)?;
    Ok(())
}

fn study(cmd: StudyCommand, cfg: &RunConfig) -> Result<()> {
    match cmd {
        StudyCommand::Init { pairs, raters, seniors, dir } => {
            let s = StudyStore::init(&dir, &pairs, raters, seniors, cfg.rng_seed()?)?;
            log::info!("study with {} pairs and {} raters created in {}", s.pairs().len(), s.raters().len(), dir.display());
        }
        StudyCommand::Serve { dir, r#static, .. } => {
            let store = StudyStore::open(&dir, system_clock())?;
            let threshold = cfg.u64("study.confidence_threshold")?.min(u8::MAX as u64) as u8;
            let addr: SocketAddr = format!("{}:{}", cfg.str("study.bind"), cfg.usize("study.port")?)
                .parse()
                .context("config keys study.bind and study.port do not form a socket address")?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(server::serve(server::state(store, threshold), addr, r#static))?;
        }
        StudyCommand::Report { dir, out, exclude_incomplete } => {
            let store = StudyStore::open(&dir, system_clock())?;
            let s = store.study();
            let report = StudyReport { aggregate: s.aggregate_scores(exclude_incomplete)?, agreement: s.agreement() };
            if !report.aggregate.excluded.is_empty() {
                log::warn!("{} incomplete pairs excluded", report.aggregate.excluded.len());
            }
            write_json(&out, &report)?;
        }
    }
    Ok(())
}

fn report_cmd(a: &ReportArgs) -> Result<()> {
    let rendered = report::render_files(&a.inputs)?;
    match &a.out {
        Some(p) => std::fs::write(p, &rendered.text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{}", rendered.text),
    }
    if let Some(dir) = &a.csv_dir {
        std::fs::create_dir_all(dir)?;
        for (name, doc) in &rendered.csv {
            let p = dir.join(format!("{name}.csv"));
            std::fs::write(&p, doc).with_context(|| format!("writing {}", p.display()))?;
        }
    }
    Ok(())
}
