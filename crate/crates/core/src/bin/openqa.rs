// SPDX-License-Identifier: Apache-2.0

use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use openqa::jsonl;
use openqa::kb::load_triples;
use openqa::ld_solver::{
    scorer_accuracy, tagger_accuracy, train_relation_scorer, train_tagger, RelationExample,
    TaggedQuestion,
};
use openqa::nn::TrainedModel;
use openqa::pipeline::{
    build_vocabulary, evaluate, load_qa, make_selector_data, serve, AskResponse,
};
use openqa::reader::{reader_accuracy, train_reader, ReaderExample, ReaderModel};
use openqa::retrieval::{build_index, corpus_documents, load_passages};
use openqa::selector::{selector_accuracy, train_selector, SelectorExample, SelectorModel};
use openqa::text::Vocabulary;
use openqa::{System, SystemConfig};

#[derive(Parser)]
#[command(
    name = "openqa",
    version,
    about = "Hybrid open-domain question answering"
)]
struct Cli {
    /// System configuration (JSON).
    #[arg(long, global = true, env = "OPENQA_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Tagger,
    Scorer,
    Reader,
    Selector,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a triple file and report its size.
    LoadKb { tsv: PathBuf },
    /// Build the search index over the configured KB and these passages.
    Index {
        passages: PathBuf,
        /// Defaults to the configured index path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model from a JSON Lines file.
    Train {
        kind: ModelKind,
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Vocabulary file; defaults to the configured one.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Defaults to the configured model path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Answer one question.
    Ask {
        question: String,
        #[arg(long)]
        json: bool,
    },
    /// Answer questions read from stdin, one per line.
    Repl,
    /// Accuracy over a QA file.
    Eval {
        qa: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Write selector training data derived from solver output.
    MakeSelectorData { qa: PathBuf, out: PathBuf },
    /// Serve `POST /ask` and `GET /health`.
    Serve {
        #[arg(long)]
        addr: Option<String>,
    },
    /// Build a vocabulary file from KB, passage and training files.
    BuildVocab {
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

fn config_path(cli: &Cli) -> Result<&Path> {
    cli.config
        .as_deref()
        .context("no configuration: pass --config or set OPENQA_CONFIG")
}

fn config(cli: &Cli) -> Result<SystemConfig> {
    Ok(SystemConfig::load(config_path(cli)?)?)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn system(cli: &Cli) -> Result<System> {
    Ok(System::from_config(&config(cli)?)?)
}

fn print_answer(r: &AskResponse, json: bool) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string(r)?);
    } else {
        match (&r.answer, &r.solver) {
            (Some(a), Some(s)) => println!("{a}\t(confidence {:.3}, {s})", r.confidence),
            _ => println!("(no answer)"),
        }
    }
    Ok(())
}

fn report(kind: &str, trained: &TrainedModel, accuracy: f64) {
    let first = trained.epoch_losses.first().copied().unwrap_or(0.0);
    let last = trained.epoch_losses.last().copied().unwrap_or(0.0);
    println!(
        "{kind}: {} epochs, loss {first:.4} -> {last:.4}, training accuracy {:.1}%",
        trained.epoch_losses.len(),
        accuracy * 100.0
    );
}

fn train(
    cli: &Cli,
    kind: ModelKind,
    data: &Path,
    overrides: (Option<usize>, Option<f64>, Option<u64>),
    vocab: Option<&PathBuf>,
    out: Option<&PathBuf>,
) -> Result<()> {
    // The model being trained need not exist yet.
    let cfg = match &cli.config {
        Some(p) => Some(SystemConfig::read(p)?),
        None => None,
    };
    let mut hyper = cfg.as_ref().map(|c| c.hyper.clone()).unwrap_or_default();
    if let Some(e) = overrides.0 {
        hyper.epochs = e;
    }
    if let Some(lr) = overrides.1 {
        hyper.lr = lr;
    }
    if let Some(s) = overrides.2 {
        hyper.seed = s;
    }
    let vocab_path = vocab
        .cloned()
        .or_else(|| cfg.as_ref().and_then(|c| c.vocab_path.clone()))
        .context("no vocabulary: pass --vocab or configure vocab_path")?;
    let vocab = Vocabulary::load(&vocab_path).with_context(|| vocab_path.display().to_string())?;
    let configured = cfg.as_ref().and_then(|c| match kind {
        ModelKind::Tagger => c.tagger_path.clone(),
        ModelKind::Scorer => c.scorer_path.clone(),
        ModelKind::Reader => c.reader_path.clone(),
        ModelKind::Selector => c.selector_path.clone(),
    });
    let out = out
        .cloned()
        .or(configured)
        .context("no output path: pass --out or configure the model path")?;

    let trained = match kind {
        ModelKind::Tagger => {
            let rows: Vec<TaggedQuestion> = jsonl::read(data)?;
            let t = train_tagger(&rows, &vocab, &hyper)?;
            report("tagger", &t, tagger_accuracy(&t.params, &vocab, &rows)?);
            t
        }
        ModelKind::Scorer => {
            let rows: Vec<RelationExample> = jsonl::read(data)?;
            let t = train_relation_scorer(&rows, &vocab, &hyper)?;
            report("scorer", &t, scorer_accuracy(&t.params, &vocab, &rows)?);
            t
        }
        ModelKind::Reader => {
            let rows: Vec<ReaderExample> = jsonl::read(data)?;
            let t = train_reader(&rows, &vocab, &hyper)?;
            let model = ReaderModel::new(t.params.clone(), vocab.clone())?;
            report("reader", &t, reader_accuracy(&model, &rows)?);
            t
        }
        ModelKind::Selector => {
            let rows: Vec<SelectorExample> = jsonl::read(data)?;
            let t = train_selector(&rows, &vocab, &hyper)?;
            let model = SelectorModel {
                params: t.params.clone(),
                vocab: vocab.clone(),
            };
            report("selector", &t, selector_accuracy(&model, &rows)?);
            t
        }
    };
    ensure_parent(&out)?;
    trained.params.save(&out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::LoadKb { tsv } => {
            let kb = load_triples(tsv)?;
            println!(
                "{} triples, {} entities, {} predicates",
                kb.len(),
                kb.entities().len(),
                kb.predicates().len()
            );
        }
        Command::Index { passages, out } => {
            let cfg = config(cli)?;
            let out = out
                .clone()
                .or(cfg.index_path.clone())
                .context("no output path: pass --out or configure index_path")?;
            let kb = load_triples(&cfg.kb_path)?;
            let dict = openqa::kb::EntityDictionary::build(&kb);
            let passages = load_passages(passages)?;
            let index = build_index(corpus_documents(&kb, &passages, &dict)?)?;
            ensure_parent(&out)?;
            index.save(&out)?;
            println!(
                "indexed {} documents into {}",
                index.doc_count(),
                out.display()
            );
        }
        Command::Train {
            kind,
            data,
            epochs,
            lr,
            seed,
            vocab,
            out,
        } => {
            train(
                cli,
                *kind,
                data,
                (*epochs, *lr, *seed),
                vocab.as_ref(),
                out.as_ref(),
            )?;
        }
        Command::Ask { question, json } => {
            let r = system(cli)?.ask(question)?;
            print_answer(&r, *json)?;
        }
        Command::Repl => {
            let sys = system(cli)?;
            let stdin = io::stdin();
            let mut out = io::stdout();
            write!(out, "> ")?;
            out.flush()?;
            for line in stdin.lock().lines() {
                let line = line?;
                if !line.trim().is_empty() {
                    match sys.ask(&line) {
                        Ok(r) => print_answer(&r, false)?,
                        Err(e) => println!("error: {e}"),
                    }
                }
                write!(out, "> ")?;
                out.flush()?;
            }
            println!();
        }
        Command::Eval { qa, json } => {
            let r = evaluate(&system(cli)?, &load_qa(qa)?)?;
            if *json {
                println!("{}", serde_json::to_string(&r)?);
            } else {
                println!(
                    "accuracy {:.2}% ({}/{})",
                    r.accuracy * 100.0,
                    r.correct,
                    r.total
                );
                for (s, h) in &r.per_solver_hit_rate {
                    println!("  {s} hit rate {:.2}%", h * 100.0);
                }
            }
        }
        Command::MakeSelectorData { qa, out } => {
            let mut cfg = SystemConfig::read(config_path(cli)?)?;
            cfg.selector_path = None;
            let data = make_selector_data(&System::from_config(&cfg)?, &load_qa(qa)?)?;
            ensure_parent(out)?;
            data.write(out)?;
            println!(
                "wrote {} lines to {}; skipped {} with fewer than two candidates, {} with no matching candidate",
                data.examples.len(),
                out.display(),
                data.skipped_too_few,
                data.skipped_no_match
            );
        }
        Command::Serve { addr } => {
            let cfg = config(cli)?;
            let addr = addr.clone().unwrap_or_else(|| cfg.addr.clone());
            let sys = System::from_config(&cfg)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(sys, &addr))?;
        }
        Command::BuildVocab { out, inputs } => {
            let paths: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
            let vocab = build_vocabulary(&paths)?;
            ensure_parent(out)?;
            vocab.save(out)?;
            println!("wrote {} tokens to {}", vocab.len() - 4, out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
