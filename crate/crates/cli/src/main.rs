//! `scenecause` command-line pipeline.

mod config;
mod http;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use scenecause_core::client::{ClientError, ModelClient};
use scenecause_core::cot::PromptPlan;
use scenecause_core::dataset::{compute_stats, read_dataset, sample_test_set, write_dataset, DatasetError};
use scenecause_core::eval::{run_eval, score, task_correlation, ConstantStub, EvalConfig, EvalOutcome, GoldStub, ScoreReport};
use scenecause_core::extract::{build_causal_edges, match_templates, ExtractError, PredicateLexicon};
use scenecause_core::generate::{corpus_names, DistractorLexicon, GenerateError, QuestionGenerator, TemplateLibrary};
use scenecause_core::quality::{hdd, mattr, mtld, tokenize, DEFAULT_HDD_SAMPLE, DEFAULT_MATTR_WINDOW, DEFAULT_MTLD_THRESHOLD};
use scenecause_core::robustness::{PersonaPool, Reformulator};
use scenecause_core::scene::{read_corpus, scene_to_value, Encoding, HumanLexicon, SceneError, SceneGraph};

use config::Config;

/// Input or configuration rejected; exit code 1.
#[derive(Debug)]
pub struct Validation(pub String);

impl std::fmt::Display for Validation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Validation {}

#[derive(Parser, Debug)]
#[command(name = "scenecause", version, about = "Causal question synthesis and evaluation over scene graphs")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Scene corpus encoding: ndjson or json.
    #[arg(long, global = true)]
    encoding: Option<String>,
    /// Causal predicate lexicon (TOML).
    #[arg(long, global = true)]
    lexicon: Option<PathBuf>,
    /// Person nouns, one per line.
    #[arg(long, global = true)]
    humans: Option<PathBuf>,
    /// Question templates (TOML).
    #[arg(long, global = true)]
    templates: Option<PathBuf>,
    /// Text distractor lexicon (TOML).
    #[arg(long, global = true)]
    distractors: Option<PathBuf>,
    /// Persona pool for robustness questions (TOML).
    #[arg(long, global = true)]
    personas: Option<PathBuf>,
    #[arg(long, global = true)]
    parallelism: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a scene corpus and write it back normalized.
    Ingest {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract causal graphs and template matches per scene.
    Extract {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate question records from a scene corpus.
    Generate {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also draw a test set with this many records per task.
        #[arg(long, requires = "test_out")]
        per_task: Option<usize>,
        #[arg(long)]
        test_out: Option<PathBuf>,
    },
    /// Rewrite records as indirect requests whose answer is no.
    Robustness {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-task, per-rung and per-graph statistics of a record file.
    Stats {
        input: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Lexical diversity of the question text.
    Quality {
        input: PathBuf,
        #[arg(long, value_enum)]
        metric: Option<Metric>,
        #[arg(long, default_value_t = DEFAULT_MATTR_WINDOW)]
        window: usize,
        #[arg(long, default_value_t = DEFAULT_MTLD_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value_t = DEFAULT_HDD_SAMPLE)]
        sample: usize,
    },
    /// Query a model on every record and score the answers.
    Evaluate(EvaluateArgs),
    /// Score saved outcome files and correlate tasks across models.
    Report {
        #[arg(long)]
        input: PathBuf,
        /// One outcome file per model; the file stem names the model.
        #[arg(long, num_args = 1.., required = true)]
        outcomes: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Metric {
    Mattr,
    Mtld,
    Hdd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Stub {
    /// Always answers the gold option.
    Gold,
    /// Always sends the `--reply` text.
    Constant,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    input: PathBuf,
    /// Outcome records, one JSON object per line.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Score report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Reasoning steps such as s1,s2,s3,s4, or none for a direct prompt.
    #[arg(long)]
    plan: Option<String>,
    #[arg(long, value_enum)]
    stub: Option<Stub>,
    #[arg(long, default_value = "I don't know")]
    reply: String,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    timeout_secs: Option<u64>,
    #[arg(long)]
    retries: Option<u32>,
    #[arg(long)]
    max_tokens: Option<u32>,
}

fn resolve(cli: &Cli) -> Result<Config> {
    let g = &cli.global;
    let config_path = g.config.clone().or_else(|| std::env::var_os("SCENECAUSE_CONFIG").map(PathBuf::from));
    let file = match &config_path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let mut flags = Config {
        seed: g.seed,
        encoding: g.encoding.clone(),
        lexicon: g.lexicon.clone(),
        humans: g.humans.clone(),
        templates: g.templates.clone(),
        distractors: g.distractors.clone(),
        personas: g.personas.clone(),
        parallelism: g.parallelism,
        ..Default::default()
    };
    if let Command::Evaluate(e) = &cli.command {
        flags.plan = e.plan.clone();
        flags.model = e.model.clone();
        flags.endpoint = e.endpoint.clone();
        flags.timeout_secs = e.timeout_secs;
        flags.retries = e.retries;
        flags.max_tokens = e.max_tokens;
    }
    let env = Config::from_env(|k| std::env::var(k).ok())?;
    Ok(file.overlay(&flags).overlay(&env))
}

fn humans(config: &Config) -> Result<HumanLexicon> {
    match &config.humans {
        Some(p) => Ok(HumanLexicon::load(p)?),
        None => Ok(HumanLexicon::default()),
    }
}

fn lexicon(config: &Config) -> Result<PredicateLexicon> {
    match &config.lexicon {
        Some(p) => Ok(PredicateLexicon::load(p)?),
        None => Ok(PredicateLexicon::default()),
    }
}

fn scenes(config: &Config, path: &Path) -> Result<Vec<SceneGraph>> {
    let encoding: Encoding = match &config.encoding {
        Some(e) => e.parse().map_err(Validation)?,
        None => Encoding::default(),
    };
    Ok(read_corpus(path, encoding, &humans(config)?)?)
}

fn generator(config: &Config, scenes: &[SceneGraph]) -> Result<QuestionGenerator> {
    let templates = match &config.templates {
        Some(p) => TemplateLibrary::load(p)?,
        None => TemplateLibrary::default(),
    };
    let distractors = match &config.distractors {
        Some(p) => DistractorLexicon::load(p)?,
        None => DistractorLexicon::default(),
    };
    Ok(QuestionGenerator::new(templates, distractors).with_sibling_pool(corpus_names(scenes)))
}

fn plan(config: &Config) -> Result<Option<PromptPlan>> {
    match config.plan.as_deref() {
        None => Ok(Some(PromptPlan::full())),
        Some("none") => Ok(None),
        Some(text) => Ok(Some(text.parse().map_err(|e| Validation(format!("--plan {text:?}: {e}")))?)),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// Writes one JSON value per line to `out`, or stdout when unset.
fn write_lines<T: Serialize>(items: impl IntoIterator<Item = T>, out: Option<&Path>) -> Result<usize> {
    let mut sink: Box<dyn Write> = match out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut n = 0;
    for item in items {
        serde_json::to_writer(&mut sink, &item)?;
        sink.write_all(b"\n")?;
        n += 1;
    }
    sink.flush()?;
    Ok(n)
}

fn read_outcomes(path: &Path) -> Result<Vec<EvalOutcome>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Validation(format!("{} line {}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

fn write_json(value: &impl Serialize, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ExtractedScene<'a> {
    image_id: &'a str,
    graph: scenecause_core::extract::CausalGraph,
    matches: Vec<scenecause_core::extract::TemplateMatch>,
    report: scenecause_core::extract::ExtractionReport,
}

fn model_client(args: &EvaluateArgs, config: &Config, records: &[scenecause_core::record::QuestionRecord], plan: Option<&PromptPlan>) -> Result<Arc<dyn ModelClient>> {
    if let Some(stub) = args.stub {
        return Ok(match stub {
            Stub::Gold => Arc::new(GoldStub::new(records, plan)),
            Stub::Constant => Arc::new(ConstantStub::new(args.reply.clone())),
        });
    }
    let Some(endpoint) = config.endpoint.clone() else {
        bail!(Validation("evaluate needs --stub or an endpoint".into()));
    };
    let model = config.model.clone().unwrap_or_else(|| "model".into());
    Ok(Arc::new(http::HttpModel::new(
        model,
        endpoint,
        std::env::var(http::API_KEY_VAR).ok(),
        config.max_tokens.unwrap_or(512),
        Duration::from_secs(config.timeout_secs.unwrap_or(60)),
    )))
}

fn run(cli: Cli) -> Result<()> {
    let config = resolve(&cli)?;
    log::info!("resolved config: {}", serde_json::to_string(&config)?);
    match cli.command {
        Command::Ingest { scenes: path, out } => {
            let scenes = scenes(&config, &path)?;
            let n = write_lines(scenes.iter().map(scene_to_value), out.as_deref())?;
            eprintln!("ingested {n} scenes");
        }
        Command::Extract { scenes: path, out } => {
            let scenes = scenes(&config, &path)?;
            let lexicon = lexicon(&config)?;
            let mut rows = Vec::with_capacity(scenes.len());
            for scene in &scenes {
                let extraction = build_causal_edges(scene, &lexicon);
                let matches = match_templates(&extraction.graph)?;
                rows.push(ExtractedScene {
                    image_id: scene.image_id.as_str(),
                    graph: extraction.graph,
                    matches,
                    report: extraction.report,
                });
            }
            let edges: usize = rows.iter().map(|r| r.graph.edges.len()).sum();
            let matches: usize = rows.iter().map(|r| r.matches.len()).sum();
            write_lines(&rows, out.as_deref())?;
            eprintln!("extracted {edges} edges and {matches} template matches from {} scenes", rows.len());
        }
        Command::Generate { scenes: path, out, per_task, test_out } => {
            let scenes = scenes(&config, &path)?;
            let gen = generator(&config, &scenes)?;
            let result = gen.generate_corpus(&scenes, &lexicon(&config)?, config.seed());
            for w in &result.warnings {
                log::debug!("{w:?}");
            }
            for s in &result.skipped {
                log::info!("skipped: {s}");
            }
            let n = write_dataset(&result.records, &out)?;
            eprintln!(
                "wrote {n} records ({} warnings, {} skipped) to {}",
                result.warnings.len(),
                result.skipped.len(),
                out.display()
            );
            if let (Some(k), Some(test_out)) = (per_task, test_out) {
                let test = sample_test_set(&result.records, k, config.seed())?;
                write_dataset(&test, &test_out)?;
                eprintln!("wrote {} test records to {}", test.len(), test_out.display());
            }
        }
        Command::Robustness { scenes: path, input, out } => {
            let scenes = scenes(&config, &path)?;
            let records = read_dataset(&input)?;
            let personas = match &config.personas {
                Some(p) => PersonaPool::parse(
                    &std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
                )?,
                None => PersonaPool::default(),
            };
            let (reformulated, errors) =
                Reformulator::new(personas).reformulate_all(&records, &scenes, &lexicon(&config)?, config.seed());
            for e in &errors {
                log::info!("{e}");
            }
            write_dataset(&reformulated, &out)?;
            eprintln!("wrote {} robustness records ({} sources unusable)", reformulated.len(), errors.len());
        }
        Command::Stats { input, json } => {
            let stats = compute_stats(&read_dataset(&input)?);
            if json {
                println!("{}", serde_json::to_string_pretty(&stats)?);
            } else {
                print!("{}", stats.render());
            }
        }
        Command::Quality { input, metric, window, threshold, sample } => {
            let records = read_dataset(&input)?;
            let tokens: Vec<String> = records.iter().flat_map(|r| tokenize(&r.question)).collect();
            let hdd_sample = sample.min(tokens.len());
            let row = |name: &str, v: f64| println!("{name:<6} {v:.4}");
            match metric {
                Some(Metric::Mattr) => row("mattr", mattr(&tokens, window)?),
                Some(Metric::Mtld) => row("mtld", mtld(&tokens, threshold)?),
                Some(Metric::Hdd) => row("hdd", hdd(&tokens, hdd_sample)?),
                None => {
                    let (a, b, c) = (mattr(&tokens, window)?, mtld(&tokens, threshold)?, hdd(&tokens, hdd_sample)?);
                    println!("tokens {}", tokens.len());
                    row("mattr", a);
                    row("mtld", b);
                    row("hdd", c);
                    row("mean", (a + b + c) / 3.0);
                }
            }
        }
        Command::Evaluate(args) => {
            let records = read_dataset(&args.input)?;
            let plan = plan(&config)?;
            let client = model_client(&args, &config, &records, plan.as_ref())?;
            let name = client.name().to_string();
            let eval = EvalConfig {
                parallelism: config.parallelism(),
                retries: config.retries.unwrap_or(2),
                timeout: config.timeout_secs.map(Duration::from_secs),
                plan,
                ..Default::default()
            };
            let outcomes = run_eval(&records, client, &eval);
            if let Some(out) = &args.out {
                write_lines(&outcomes, Some(out))?;
            }
            let failed = outcomes.iter().filter(|o| o.failure.is_some()).count();
            let report = score(&name, &records, &outcomes)?;
            if let Some(path) = &args.report {
                write_json(&report, path)?;
            }
            print!("{}", report.render());
            if failed > 0 && failed == outcomes.len() {
                bail!(ClientFailure(format!("all {failed} requests failed")));
            } else if failed > 0 {
                log::warn!("{failed} requests failed and were scored as unformatted");
            }
        }
        Command::Report { input, outcomes, json } => {
            let records = read_dataset(&input)?;
            let mut reports: Vec<ScoreReport> = Vec::new();
            for path in &outcomes {
                let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                reports.push(score(&name, &records, &read_outcomes(path)?)?);
            }
            let correlation = (reports.len() >= 3).then(|| task_correlation(&reports)).transpose()?;
            if json {
                let value = serde_json::json!({"reports": reports, "correlation": correlation});
                println!("{}", serde_json::to_string_pretty(&value)?);
            } else {
                for r in &reports {
                    println!("== {}", r.model);
                    print!("{}", r.render());
                    println!();
                }
                if let Some(c) = correlation {
                    print!("{:<5}", "");
                    for t in &c.tasks {
                        print!(" {:>5}", t.code());
                    }
                    println!();
                    for (t, row) in c.tasks.iter().zip(&c.values) {
                        print!("{:<5}", t.code());
                        for v in row {
                            print!(" {v:>5.2}");
                        }
                        println!();
                    }
                }
            }
        }
    }
    Ok(())
}

/// Model requests failed outright; exit code 2.
#[derive(Debug)]
struct ClientFailure(String);

impl std::fmt::Display for ClientFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ClientFailure {}

/// 2 for I/O and client failures, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let io = err.chain().any(|e| {
        e.is::<std::io::Error>()
            || e.is::<ClientFailure>()
            || e.is::<ClientError>()
            || e.is::<ureq::Error>()
            || matches!(e.downcast_ref::<DatasetError>(), Some(DatasetError::Io { .. }))
            || matches!(e.downcast_ref::<SceneError>(), Some(SceneError::Io { .. }))
            || matches!(e.downcast_ref::<ExtractError>(), Some(ExtractError::Io { .. }))
            || matches!(e.downcast_ref::<GenerateError>(), Some(GenerateError::Io { .. }))
    });
    if io {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
