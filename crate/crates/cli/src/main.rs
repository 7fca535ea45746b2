//! `ragctl`: ingest documents, ask questions, chat, serve the HTTP API and
//! evaluate citation accuracy.
//!
//! Exit codes: 0 success, 1 failure, 2 partial ingest failure.

mod eval;

use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use rag_core::collection::{IngestSource, QueryOptions};
use rag_core::{load_config, Answer, AppConfig, ChatMessage, Engine};
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "ragctl", version, about = "Retrieval-augmented question answering over your documents")]
struct Cli {
    /// Configuration file.
    #[arg(long, global = true, default_value = "rag.toml")]
    config: PathBuf,
    /// Optional KEY=VALUE file consulted for secrets not set in the environment.
    #[arg(long, global = true, default_value = ".env")]
    env_file: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, clap::Args)]
struct RetrievalArgs {
    /// Number of chunks to retrieve (collection default when omitted).
    #[arg(long)]
    k: Option<usize>,
    /// Retrieve with generated query variants as well as the question.
    #[arg(long)]
    multi_query: bool,
}

impl RetrievalArgs {
    fn options(self) -> QueryOptions {
        QueryOptions {
            k: self.k,
            multi_query: self.multi_query.then_some(true),
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load, split, embed and store files or URLs.
    Ingest {
        collection: String,
        #[arg(required = true)]
        sources: Vec<String>,
    },
    /// Answer one question.
    Query {
        collection: String,
        question: String,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        /// Print the chunks the answer was grounded on.
        #[arg(long)]
        show_sources: bool,
    },
    /// Interactive session with conversation history.
    Chat {
        collection: String,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        #[arg(long)]
        show_sources: bool,
    },
    /// Run the HTTP service.
    Serve,
    /// Report citation accuracy for a fixture of {question, expected_source} pairs.
    Eval {
        collection: String,
        fixture: PathBuf,
        /// Also write the full report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        retrieval: RetrievalArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if matches!(cli.command, Command::Serve) { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default_level)))
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load(cli: &Cli) -> Result<(AppConfig, Engine)> {
    let cfg = load_config(&cli.config, Some(&cli.env_file))?;
    let engine = Engine::from_config(&cfg)?;
    Ok((cfg, engine))
}

fn run(cli: Cli) -> Result<ExitCode> {
    let (cfg, engine) = load(&cli)?;
    match cli.command {
        Command::Ingest { collection, sources } => ingest(&engine, &collection, &sources),
        Command::Query {
            collection,
            question,
            retrieval,
            show_sources,
        } => {
            let answer = engine.query(&collection, &question, &[], retrieval.options())?;
            let mut out = std::io::stdout().lock();
            print_answer(&mut out, &answer, show_sources)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Chat {
            collection,
            retrieval,
            show_sources,
        } => chat(&engine, &collection, retrieval.options(), show_sources),
        Command::Serve => serve(cfg, engine),
        Command::Eval {
            collection,
            fixture,
            out,
            retrieval,
        } => {
            engine.collection(&collection)?;
            let cases = eval::load_cases(&fixture)?;
            let report = eval::run(&engine, &collection, &cases, retrieval.options());
            for r in report.results.iter().filter(|r| !r.passed) {
                match &r.error {
                    Some(e) => println!("FAIL {:?}: {e}", r.question),
                    None => println!(
                        "FAIL {:?}: expected {}, cited [{}]",
                        r.question,
                        r.expected_source,
                        r.cited.join(", ")
                    ),
                }
            }
            println!("cases: {}", report.cases);
            println!("passed: {}", report.passed);
            println!("citation accuracy: {:.1}%", report.accuracy_percent);
            if let Some(path) = out {
                let json = serde_json::to_string_pretty(&report)?;
                std::fs::write(&path, json + "\n").with_context(|| format!("cannot write {}", path.display()))?;
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn source_arg(s: &str) -> IngestSource {
    if s.starts_with("http://") || s.starts_with("https://") {
        IngestSource::Url(s.to_string())
    } else {
        IngestSource::Path(PathBuf::from(s))
    }
}

fn plural(n: usize, word: &str) -> String {
    if n == 1 {
        format!("1 {word}")
    } else {
        format!("{n} {word}s")
    }
}

fn ingest(engine: &Engine, collection: &str, sources: &[String]) -> Result<ExitCode> {
    engine.collection(collection)?;
    let mut failed = 0;
    for s in sources {
        match engine.ingest(collection, &source_arg(s)) {
            Ok(r) => println!(
                "{s}: {}, {}",
                plural(r.documents.len(), "document"),
                plural(r.chunk_count(), "chunk")
            ),
            Err(e) => {
                failed += 1;
                eprintln!("{s}: error: {e}");
            }
        }
    }
    Ok(match failed {
        0 => ExitCode::SUCCESS,
        n if n == sources.len() => ExitCode::from(1),
        _ => ExitCode::from(2),
    })
}

fn print_answer(out: &mut impl Write, answer: &Answer, show_sources: bool) -> Result<()> {
    writeln!(out, "{}", answer.text)?;
    for w in &answer.warnings {
        eprintln!("warning: {w}");
    }
    if show_sources {
        writeln!(out)?;
        writeln!(out, "Sources:")?;
        for (i, s) in answer.sources.iter().enumerate() {
            writeln!(out, "  {}. {} #{} (score {:.4})", i + 1, s.source, s.seq, s.score)?;
        }
    }
    Ok(())
}

fn chat(engine: &Engine, collection: &str, opts: QueryOptions, mut show_sources: bool) -> Result<ExitCode> {
    engine.collection(collection)?;
    let stdin = std::io::stdin();
    let mut input = stdin.lock();
    let mut out = std::io::stdout().lock();
    let mut history: Vec<ChatMessage> = Vec::new();
    writeln!(out, "Chatting with {collection}. /sources toggles sources, /quit exits.")?;
    let mut line = String::new();
    loop {
        write!(out, "> ")?;
        out.flush()?;
        line.clear();
        if input.read_line(&mut line)? == 0 {
            writeln!(out)?;
            break;
        }
        match line.trim() {
            "" => continue,
            "/quit" => break,
            "/sources" => {
                show_sources = !show_sources;
                writeln!(out, "sources {}", if show_sources { "on" } else { "off" })?;
            }
            cmd if cmd.starts_with('/') => writeln!(out, "unknown command {cmd}")?,
            question => match engine.query(collection, question, &history, opts) {
                Ok(answer) => {
                    print_answer(&mut out, &answer, show_sources)?;
                    writeln!(out)?;
                    history.push(ChatMessage::user(question));
                    history.push(ChatMessage::assistant(answer.text));
                }
                Err(e) => eprintln!("error: {e}"),
            },
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn serve(cfg: AppConfig, engine: Engine) -> Result<ExitCode> {
    // The last engine reference is released after the runtime is gone:
    // blocking HTTP clients inside it must not be dropped on a runtime thread.
    let engine = Arc::new(engine);
    let app = rag_service::router(engine.clone(), &cfg.service.cors_origins)?;
    let rt = tokio::runtime::Runtime::new()?;
    let result = rt.block_on(async move {
        let listener = rag_service::bind(&cfg.service).await?;
        let addr = listener.local_addr()?;
        println!("listening on http://{addr}");
        std::io::stdout().flush()?;
        rag_service::serve(listener, app, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        anyhow::Ok(())
    });
    drop(rt);
    drop(engine);
    result?;
    Ok(ExitCode::SUCCESS)
}
