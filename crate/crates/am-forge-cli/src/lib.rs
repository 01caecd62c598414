//! Command-line pipeline wiring: ingest, tokenizer training, dataset
//! building and statistics, VIT generation, the benchmark harness, and
//! LoRA verification, all sharing one declarative config file.

pub mod config;

use std::collections::{BTreeMap, HashSet};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use am_forge::bench::{self, TaskKind};
use am_forge::dataset::{self, stats};
use am_forge::ingest::{self, SegmentationRules};
use am_forge::llm::{ChatClient, RetryPolicy};
use am_forge::lora;
use am_forge::tokenizer::{train_subword, TokenizerModel};
use am_forge::vit;

use config::{EndpointConfigEntry, RunConfig};

#[derive(Parser)]
#[command(name = "am-forge", version, about = "Corpus-to-benchmark toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse raw article bundles into articles.jsonl.
    Ingest {
        #[command(flatten)]
        common: ConfigArg,
        /// Directory whose subdirectories are article bundles.
        #[arg(long)]
        bundles: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    Tokenizer {
        #[command(subcommand)]
        cmd: TokenizerCmd,
    },
    Dataset {
        #[command(subcommand)]
        cmd: DatasetCmd,
    },
    Vit {
        #[command(subcommand)]
        cmd: VitCmd,
    },
    Bench {
        #[command(subcommand)]
        cmd: BenchCmd,
    },
    Lora {
        #[command(subcommand)]
        cmd: LoraCmd,
    },
    /// Merge reports from completed runs into a comparison table.
    Report {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run directories containing report.json.
        runs: Vec<PathBuf>,
    },
}

#[derive(Subcommand)]
enum TokenizerCmd {
    /// Learn subword merges from an article corpus.
    Train {
        #[command(flatten)]
        common: ConfigArg,
        #[arg(long)]
        articles: PathBuf,
        #[arg(long)]
        num_operations: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum DatasetCmd {
    /// Emit text.jsonl, images.jsonl, and manifest.json.
    Build {
        #[command(flatten)]
        common: ConfigArg,
        #[arg(long)]
        articles: PathBuf,
        /// Trained tokenizer model file.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        chunk_len: Option<usize>,
        #[arg(long)]
        train_fraction: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Emit keyword, n-gram, and vocabulary-overlap CSVs.
    Stats {
        #[arg(long)]
        articles: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 25)]
        top_k: usize,
        #[arg(long, default_value_t = 2)]
        ngram: usize,
    },
}

#[derive(Subcommand)]
enum VitCmd {
    /// Generate description / conversation examples from images.jsonl.
    Generate {
        #[command(flatten)]
        common: ConfigArg,
        #[arg(long)]
        images: PathBuf,
        /// Trained tokenizer model file.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long = "gen-model")]
        gen_model: Option<String>,
        #[arg(long, value_delimiter = ',', default_values_t = [
            "description".to_string(), "conversation".to_string()
        ])]
        kinds: Vec<String>,
        #[arg(long, default_value_t = vit::DEFAULT_MAX_LEN)]
        max_len: usize,
    },
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Run every task found under --tasks against the candidate endpoint.
    Run {
        #[command(flatten)]
        common: ConfigArg,
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "run")]
        run_id: String,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        assets: Option<PathBuf>,
    },
    /// Re-score a saved transcript without network access.
    Rescore {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        tasks: PathBuf,
    },
}

#[derive(Subcommand)]
enum LoraCmd {
    /// Run the init / merge / gradient invariant suite.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Parses and runs one invocation. Exit codes: 0 success, 1 operational
/// error, 2 usage error.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Ingest {
            common,
            bundles,
            out,
        } => {
            let config = RunConfig::load(common.config.as_deref())?;
            let bundles = bundles
                .or(config.paths.bundles_dir)
                .context("no bundles directory given (flag --bundles or [paths] bundles_dir)")?;
            cmd_ingest(&bundles, &out)
        }
        Command::Tokenizer {
            cmd:
                TokenizerCmd::Train {
                    common,
                    articles,
                    num_operations,
                    out,
                },
        } => {
            let config = RunConfig::load(common.config.as_deref())?;
            let ops = num_operations.unwrap_or(config.tokenizer.num_operations);
            cmd_tokenizer_train(&articles, ops, &out)
        }
        Command::Dataset { cmd } => match cmd {
            DatasetCmd::Build {
                common,
                articles,
                model,
                out,
                chunk_len,
                train_fraction,
                seed,
            } => {
                let config = RunConfig::load(common.config.as_deref())?;
                cmd_dataset_build(
                    &articles,
                    &model,
                    &out,
                    chunk_len.unwrap_or(config.dataset.chunk_len),
                    train_fraction.unwrap_or(config.dataset.train_fraction),
                    seed.unwrap_or(config.dataset.seed),
                )
            }
            DatasetCmd::Stats {
                articles,
                out,
                top_k,
                ngram,
            } => cmd_dataset_stats(&articles, &out, top_k, ngram),
        },
        Command::Vit {
            cmd:
                VitCmd::Generate {
                    common,
                    images,
                    model,
                    out,
                    endpoint,
                    gen_model,
                    kinds,
                    max_len,
                },
        } => {
            let config = RunConfig::load(common.config.as_deref())?;
            let mut generator = config.endpoints.generator;
            if let Some(endpoint) = endpoint {
                generator.endpoint = endpoint;
            }
            if let Some(gen_model) = gen_model {
                generator.model = gen_model;
            }
            cmd_vit_generate(&images, &model, &out, &generator, &kinds, max_len)
        }
        Command::Bench { cmd } => match cmd {
            BenchCmd::Run {
                common,
                tasks,
                out,
                run_id,
                trials,
                endpoint,
                model,
                assets,
            } => {
                let mut config = RunConfig::load(common.config.as_deref())?;
                if let Some(trials) = trials {
                    config.bench.trials = trials;
                }
                if let Some(endpoint) = endpoint {
                    config.endpoints.candidate.endpoint = endpoint.clone();
                    config.endpoints.judge.endpoint = endpoint;
                }
                if let Some(model) = model {
                    config.endpoints.candidate.model = model;
                }
                if let Some(assets) = assets {
                    config.paths.assets_root = Some(assets);
                }
                cmd_bench_run(&config, &tasks, &out, &run_id)
            }
            BenchCmd::Rescore { run_dir, tasks } => cmd_bench_rescore(&run_dir, &tasks),
        },
        Command::Lora {
            cmd: LoraCmd::Verify { seed },
        } => cmd_lora_verify(seed),
        Command::Report { out, runs } => cmd_report(&runs, out.as_deref()),
    }
}

fn cmd_ingest(bundles_dir: &Path, out: &Path) -> anyhow::Result<()> {
    let rules = SegmentationRules::default();
    let mut entries: Vec<PathBuf> = fs::read_dir(bundles_dir)
        .with_context(|| format!("reading {}", bundles_dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    if entries.is_empty() {
        bail!("no bundle directories under {}", bundles_dir.display());
    }
    let mut articles = Vec::new();
    for dir in entries {
        let bundle = ingest::load_bundle(&dir)?;
        match ingest::ingest_bundle(&bundle, &rules) {
            Ok(article) => articles.push(article),
            Err(e) => eprintln!("skipping {}: {e}", dir.display()),
        }
    }
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent).ok();
    }
    ingest::write_articles_jsonl(&articles, out)?;
    println!("wrote {} articles to {}", articles.len(), out.display());
    Ok(())
}

fn cmd_tokenizer_train(articles: &Path, num_operations: usize, out: &Path) -> anyhow::Result<()> {
    let articles = ingest::read_articles_jsonl(articles)?;
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for article in &articles {
        for word in article.body_text.split_whitespace() {
            *counts.entry(word.to_string()).or_insert(0) += 1;
        }
    }
    let table = train_subword(
        counts.iter().map(|(w, &c)| (w.as_str(), c)),
        num_operations,
    );
    let model = TokenizerModel::with_default_specials(table);
    fs::write(out, model.to_model_string())
        .with_context(|| format!("writing {}", out.display()))?;
    println!(
        "trained {} merges, vocab size {}",
        num_operations,
        model.vocab_size()
    );
    Ok(())
}

fn load_tokenizer(path: &Path) -> anyhow::Result<TokenizerModel> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
    Ok(TokenizerModel::from_model_string(&text)?)
}

fn cmd_dataset_build(
    articles_path: &Path,
    model_path: &Path,
    out: &Path,
    chunk_len: usize,
    train_fraction: f64,
    seed: u64,
) -> anyhow::Result<()> {
    let articles = ingest::read_articles_jsonl(articles_path)?;
    let model = load_tokenizer(model_path)?;
    fs::create_dir_all(out)?;

    let chunks = dataset::chunk_corpus(&articles, &model, chunk_len);
    let chunks = dataset::assign_splits(chunks, train_fraction, seed);
    let (images, dropped) = dataset::build_images_config(&articles);
    let manifest = dataset::build_manifest(
        &chunks,
        &images,
        dropped,
        &articles,
        &model,
        train_fraction,
        seed,
    );
    dataset::audit_manifest(&manifest, &chunks, &images, &model)
        .map_err(|e| anyhow::anyhow!("manifest audit failed: {e}"))?;

    dataset::write_jsonl(&chunks, &out.join("text.jsonl"))?;
    dataset::write_jsonl(&images, &out.join("images.jsonl"))?;
    fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    println!(
        "wrote {} chunks ({} tokens), {} image records ({} captionless dropped)",
        chunks.len(),
        manifest.text_tokens,
        images.len(),
        dropped
    );
    Ok(())
}

fn cmd_dataset_stats(
    articles_path: &Path,
    out: &Path,
    top_k: usize,
    ngram: usize,
) -> anyhow::Result<()> {
    let articles = ingest::read_articles_jsonl(articles_path)?;
    fs::create_dir_all(out)?;

    let ranked = stats::keyword_top_k(&articles, top_k, &HashSet::new());
    stats::write_keyword_csv(&ranked, &out.join("keywords.csv"))?;

    let by_journal = stats::group_by_journal(&articles);
    let stopwords: HashSet<String> = stats::DEFAULT_STOPWORDS
        .iter()
        .map(|s| s.to_string())
        .collect();
    let grams = stats::ngram_frequencies(&by_journal, ngram, &stopwords, &[]);
    stats::write_ngram_csv(&grams, top_k, &out.join("ngrams.csv"))?;

    let (journals, matrix) = stats::vocabulary_overlap(&by_journal)?;
    stats::write_overlap_csv(&journals, &matrix, &out.join("overlap.csv"))?;

    println!("wrote keywords.csv, ngrams.csv, overlap.csv to {}", out.display());
    Ok(())
}

fn cmd_vit_generate(
    images_path: &Path,
    model_path: &Path,
    out: &Path,
    generator: &EndpointConfigEntry,
    kinds: &[String],
    max_len: usize,
) -> anyhow::Result<()> {
    let text = fs::read_to_string(images_path)
        .with_context(|| format!("reading {}", images_path.display()))?;
    let records: Vec<dataset::ImageCaptionRecord> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()?;
    let tokenizer = load_tokenizer(model_path)?;

    let client = ChatClient::new();
    let retry = RetryPolicy::default();
    let ctx = vit::GenContext {
        client: &client,
        endpoint: &generator.endpoint,
        model: &generator.model,
        retry: &retry,
        temperature: generator.temperature,
        max_tokens: generator.max_tokens,
    };
    let templates = vit::PromptTemplates::default();

    let mut out_records = Vec::new();
    let mut failures = 0usize;
    for record in &records {
        for kind in kinds {
            let example_id = format!("{}-{}", record.record_id, kind);
            let generated = match kind.as_str() {
                "description" => vit::gen_description(
                    &example_id,
                    &record.image_ref,
                    &record.caption,
                    &ctx,
                    &templates,
                ),
                "conversation" => vit::gen_conversation(
                    &example_id,
                    &record.image_ref,
                    &record.caption,
                    &ctx,
                    &templates,
                ),
                other => bail!("unknown kind {other:?} (expected description or conversation)"),
            };
            match generated.and_then(|ex| {
                let rendered = vit::render_chat(&ex, &tokenizer, max_len)?;
                Ok(vit::VitRecord::from_example(&ex, &rendered, record.image_ref.clone()))
            }) {
                Ok(rendered) => out_records.push(rendered),
                Err(e) => {
                    failures += 1;
                    eprintln!("skipping {example_id}: {e}");
                }
            }
        }
    }
    dataset::write_jsonl(&out_records, out)?;
    println!(
        "wrote {} vit examples to {} ({} failed)",
        out_records.len(),
        out.display(),
        failures
    );
    Ok(())
}

fn load_tasks(tasks_dir: &Path) -> anyhow::Result<BTreeMap<TaskKind, Vec<bench::BenchmarkItem>>> {
    let mut by_task = BTreeMap::new();
    for task in TaskKind::ALL {
        let path = tasks_dir.join(format!("{}.jsonl", task.slug()));
        if path.exists() {
            let items = bench::load_items(&path)?;
            if !items.is_empty() {
                by_task.insert(task, items);
            }
        }
    }
    if by_task.is_empty() {
        bail!("no task files found under {}", tasks_dir.display());
    }
    Ok(by_task)
}

fn to_endpoint(entry: &EndpointConfigEntry) -> bench::EndpointConfig {
    bench::EndpointConfig {
        endpoint: entry.endpoint.clone(),
        model: entry.model.clone(),
        temperature: entry.temperature,
        max_tokens: entry.max_tokens,
    }
}

fn cmd_bench_run(
    config: &RunConfig,
    tasks_dir: &Path,
    out: &Path,
    run_id: &str,
) -> anyhow::Result<()> {
    let by_task = load_tasks(tasks_dir)?;
    let run_dir = out.join(run_id);
    fs::create_dir_all(&run_dir)?;
    config.write_snapshot(&run_dir.join("config.toml"))?;

    let client = ChatClient::new();
    let options = bench::RunOptions {
        trials: config.bench.trials,
        max_in_flight: config.bench.max_in_flight,
        retry: RetryPolicy::default(),
    };
    let (report, transcript) = bench::run_all_tasks(
        &client,
        &to_endpoint(&config.endpoints.candidate),
        &to_endpoint(&config.endpoints.judge),
        &by_task,
        &options,
        config.paths.assets_root.as_deref(),
        run_id,
    )?;

    bench::write_transcript(&transcript, &run_dir.join("transcript.jsonl"))?;
    fs::write(run_dir.join("report.json"), report.to_json_bytes())?;
    fs::write(run_dir.join("report.md"), report.to_markdown())?;
    println!("wrote report for {} tasks to {}", report.tasks.len(), run_dir.display());
    Ok(())
}

fn cmd_bench_rescore(run_dir: &Path, tasks_dir: &Path) -> anyhow::Result<()> {
    let by_task = load_tasks(tasks_dir)?;
    let transcript = bench::read_transcript(&run_dir.join("transcript.jsonl"))?;
    let snapshot = RunConfig::load(Some(&run_dir.join("config.toml")))?;
    let run_id = run_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".to_string());
    let report = bench::rescore_transcript(
        &by_task,
        &transcript,
        &run_id,
        &snapshot.endpoints.candidate.model,
    )?;
    fs::write(run_dir.join("report.json"), report.to_json_bytes())?;
    fs::write(run_dir.join("report.md"), report.to_markdown())?;
    println!("rescored {} transcript entries", transcript.len());
    Ok(())
}

fn cmd_lora_verify(seed: u64) -> anyhow::Result<()> {
    let outcome = lora::run_verification(seed);
    for (name, ok) in &outcome.checks {
        println!("{} {name}", if *ok { "ok  " } else { "FAIL" });
    }
    println!(
        "max gradient relative error: {:.3e}",
        outcome.max_grad_rel_error
    );
    if !outcome.passed() {
        bail!("lora verification failed");
    }
    Ok(())
}

fn cmd_report(runs: &[PathBuf], out: Option<&Path>) -> anyhow::Result<()> {
    if runs.is_empty() {
        bail!("no completed run given");
    }
    let reports: Vec<bench::RunReport> = runs
        .iter()
        .map(|dir| bench::load_report(&dir.join("report.json")))
        .collect::<Result<_, _>>()?;
    let table = bench::comparison_markdown(&reports);
    match out {
        Some(path) => {
            fs::write(path, &table)?;
            println!("wrote comparison for {} runs to {}", reports.len(), path.display());
        }
        None => print!("{table}"),
    }
    Ok(())
}
