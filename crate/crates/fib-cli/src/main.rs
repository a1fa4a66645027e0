//! `fib` — fill-in-the-blank video QA toolkit.
//!
//! One verb per pipeline stage: synthesize or ingest a corpus, generate
//! questions, build vocabularies, train, evaluate, sweep frame budgets,
//! verify gradients, and export sheets for human evaluation.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fib_core::corpus::{load_corpus, save_corpus, synth_corpus, Split, SynthSignal};
use fib_core::evaluator::{
    evaluate, export_human_eval, frame_sweep, majority_baseline, render_pct,
};
use fib_core::fibgen::{
    build_vocab, generate, load_examples, load_vocab, save_examples, save_vocab, stats,
    DEFAULT_MIN_COUNT,
};
use fib_core::model::{gradcheck_model, GradCheckSpec, ModelParams, Variant};
use fib_core::textpipe::{Lexicon, Stoplist};
use fib_core::trainer::{save_epoch_log, train, TrainConfig};

/// Default seed: fixed so every run is reproducible unless overridden.
const DEFAULT_SEED: u64 = 42;

#[derive(Parser)]
#[command(name = "fib", version, about = "fill-in-the-blank video QA toolkit")]
struct Cli {
    /// Worker threads (env: FIB_THREADS). 1 keeps runs fully deterministic.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct TextPipelineArgs {
    /// Corpus file (JSON lines).
    #[arg(long)]
    corpus: PathBuf,
    /// Stoplist file; omitted means an empty stoplist.
    #[arg(long)]
    stoplist: Option<PathBuf>,
    /// Lexicon file; omitted means the built-in lexicon.
    #[arg(long)]
    lexicon: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic corpus.
    Synth {
        /// Number of clips.
        #[arg(long)]
        n: usize,
        /// Signal structure: "none" or "feature-argmax".
        #[arg(long, default_value = "none")]
        signal: String,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Output corpus path; feature tracks go next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate fill-in-the-blank examples from a corpus.
    Generate {
        #[command(flatten)]
        text: TextPipelineArgs,
        /// Minimum training-set count for a blank candidate.
        #[arg(long, default_value_t = DEFAULT_MIN_COUNT)]
        min_count: u64,
        /// Output examples file (JSON lines).
        #[arg(long)]
        out: PathBuf,
    },
    /// Report dataset statistics for generated examples.
    Stats {
        #[command(flatten)]
        text: TextPipelineArgs,
        /// Examples file produced by `generate`.
        #[arg(long)]
        examples: PathBuf,
        /// Also write the machine-readable report here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Build input/output vocabularies from examples and corpus counts.
    Vocab {
        #[command(flatten)]
        text: TextPipelineArgs,
        #[arg(long)]
        examples: PathBuf,
        /// Keep input tokens with training count >= this.
        #[arg(long, default_value_t = 1)]
        input_min: u64,
        /// Keep output tokens with training count >= this (answers always stay).
        #[arg(long, default_value_t = 1)]
        output_min: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model variant.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        examples: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// text-only | text+2d | text+3d | text+2d+3d
        #[arg(long, default_value = "text-only")]
        variant: String,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 0.9)]
        beta1: f64,
        #[arg(long, default_value_t = 0.999)]
        beta2: f64,
        #[arg(long, default_value_t = 1e-8)]
        adam_eps: f64,
        /// Frames sampled per track per example.
        #[arg(long, default_value_t = 25)]
        frames: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Fraction of training clips to use, in (0, 1].
        #[arg(long, default_value_t = 1.0)]
        fraction: f64,
        /// Warm-start text components from this text-only checkpoint.
        #[arg(long)]
        finetune_from: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        embed_dim: usize,
        #[arg(long, default_value_t = 128)]
        hidden_q: usize,
        #[arg(long, default_value_t = 128)]
        hidden_v: usize,
        #[arg(long, default_value_t = 256)]
        clf_hidden: usize,
        /// Global gradient-norm clip.
        #[arg(long, default_value_t = 5.0)]
        clip_norm: f64,
        /// Stop early once training accuracy reaches this value.
        #[arg(long)]
        stop_train_acc: Option<f64>,
        /// Where to write the trained checkpoint.
        #[arg(long)]
        out_model: PathBuf,
        /// Where to write the per-epoch log (JSON lines).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        examples: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// train | val | test
        #[arg(long, default_value = "val")]
        split: String,
        #[arg(long, default_value_t = 25)]
        frames: usize,
        /// Print the per-answer true-positive-rate table.
        #[arg(long)]
        tpr: bool,
        /// Also report the majority baseline on this split.
        #[arg(long)]
        baseline: bool,
        /// Write the full report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Evaluate one checkpoint at several frame budgets.
    SweepFrames {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        examples: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated frame counts, e.g. 2,5,10,25.
        #[arg(long, default_value = "2,5,10,25")]
        k: String,
        #[arg(long, default_value = "val")]
        split: String,
    },
    /// Verify reverse-mode gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 8)]
        dw: usize,
        #[arg(long, default_value_t = 8)]
        dh: usize,
        #[arg(long, default_value_t = 20)]
        vin: usize,
        #[arg(long, default_value_t = 10)]
        vout: usize,
        #[arg(long, default_value_t = 4)]
        batch: usize,
        #[arg(long, default_value_t = 3)]
        qlen: usize,
        #[arg(long, default_value_t = 2)]
        tsteps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Central-difference step.
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
        /// Pass/fail threshold on the max relative error.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Write a human-evaluation sheet with shuffled answer columns.
    ExportHumanEval {
        #[arg(long)]
        examples: PathBuf,
        /// Model answers as name=path, one answer per line; repeatable.
        #[arg(long = "answers")]
        answers: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Sidecar key file mapping columns to models.
        #[arg(long)]
        key: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let threads = cli
        .threads
        .or_else(|| {
            std::env::var("FIB_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(1);
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
    {
        eprintln!("fib: could not configure {threads} threads: {e}");
        return ExitCode::from(2);
    }

    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("fib: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_text_inputs(args: &TextPipelineArgs) -> fib_core::Result<(Lexicon, Stoplist)> {
    let lexicon = match &args.lexicon {
        Some(p) => Lexicon::load(p)?,
        None => Lexicon::builtin(),
    };
    let stoplist = match &args.stoplist {
        Some(p) => Stoplist::load(p)?,
        None => Stoplist::empty(),
    };
    Ok((lexicon, stoplist))
}

fn parse_variant(s: &str) -> fib_core::Result<Variant> {
    Variant::parse(s).ok_or_else(|| {
        fib_core::Error::Config(format!(
            "unknown variant {s:?} (expected text-only, text+2d, text+3d or text+2d+3d)"
        ))
    })
}

fn parse_split(s: &str) -> fib_core::Result<Split> {
    Split::parse(s)
        .ok_or_else(|| fib_core::Error::Config(format!("unknown split {s:?}")))
}

fn split_examples(
    corpus: &fib_core::corpus::Corpus,
    examples: &[fib_core::fibgen::FibExample],
    split: Split,
) -> Vec<fib_core::fibgen::FibExample> {
    let ids: std::collections::HashSet<&str> = corpus
        .clips
        .iter()
        .filter(|c| c.split == split)
        .map(|c| c.clip_id.as_str())
        .collect();
    examples
        .iter()
        .filter(|e| ids.contains(e.clip_id.as_str()))
        .cloned()
        .collect()
}

fn run(command: Command) -> fib_core::Result<ExitCode> {
    match command {
        Command::Synth { n, signal, seed, out } => {
            let signal = SynthSignal::parse(&signal)
                .ok_or_else(|| fib_core::Error::Config(format!("unknown signal {signal:?}")))?;
            let corpus = synth_corpus(n, signal, seed);
            save_corpus(&corpus, &out)?;
            eprintln!("wrote {} clips to {}", corpus.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }

        Command::Generate {
            text,
            min_count,
            out,
        } => {
            let (lexicon, stoplist) = load_text_inputs(&text)?;
            let corpus = load_corpus(&text.corpus)?;
            let examples = generate(&corpus, &lexicon, &stoplist, min_count)?;
            save_examples(&examples, &out)?;
            let report = stats(&examples, &corpus, &lexicon);
            println!("{}", report.render_table());
            eprintln!("wrote {} examples to {}", examples.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }

        Command::Stats {
            text,
            examples,
            json,
        } => {
            let (lexicon, _) = load_text_inputs(&text)?;
            let corpus = load_corpus(&text.corpus)?;
            let examples = load_examples(&examples)?;
            let report = stats(&examples, &corpus, &lexicon);
            println!("{}", report.render_table());
            if let Some(path) = json {
                let body = serde_json::to_string_pretty(&report)
                    .map_err(|e| fib_core::Error::Validation(format!("serialize stats: {e}")))?;
                std::fs::write(&path, body).map_err(|e| fib_core::Error::io(&path, e))?;
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::Vocab {
            text,
            examples,
            input_min,
            output_min,
            out,
        } => {
            let (lexicon, _) = load_text_inputs(&text)?;
            let corpus = load_corpus(&text.corpus)?;
            let examples = load_examples(&examples)?;
            let vocab = build_vocab(&examples, &corpus, &lexicon, input_min, output_min)?;
            save_vocab(&vocab, &out)?;
            eprintln!(
                "vocabulary: {} input tokens, {} output tokens -> {}",
                vocab.input_size(),
                vocab.output_size(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Train {
            corpus,
            examples,
            vocab,
            variant,
            epochs,
            batch_size,
            lr,
            beta1,
            beta2,
            adam_eps,
            frames,
            seed,
            fraction,
            finetune_from,
            embed_dim,
            hidden_q,
            hidden_v,
            clf_hidden,
            clip_norm,
            stop_train_acc,
            out_model,
            log,
        } => {
            let corpus = load_corpus(&corpus)?;
            let examples = load_examples(&examples)?;
            let vocab = load_vocab(&vocab)?;
            let config = TrainConfig {
                learning_rate: lr,
                beta1,
                beta2,
                adam_eps,
                batch_size,
                epochs,
                frames,
                seed,
                data_fraction: fraction,
                variant: parse_variant(&variant)?,
                finetune_from,
                embed_dim,
                hidden_q,
                hidden_v,
                clf_hidden,
                clip_norm,
                early_stop_train_acc: stop_train_acc,
            };
            let outcome = train(&corpus, &examples, &vocab, &config)?;
            outcome.params.save(&out_model)?;
            if let Some(log_path) = &log {
                save_epoch_log(&outcome.log, log_path)?;
            }
            if let Some(last) = outcome.log.last() {
                println!(
                    "trained {} epochs; final train loss {:.4}{}",
                    outcome.log.len(),
                    last.train_loss,
                    last.val_acc
                        .map_or(String::new(), |a| format!(", best-val checkpoint saved ({})", render_pct(a)))
                );
            }
            eprintln!("checkpoint -> {}", out_model.display());
            Ok(ExitCode::SUCCESS)
        }

        Command::Eval {
            corpus,
            examples,
            vocab,
            model,
            split,
            frames,
            tpr,
            baseline,
            report,
        } => {
            let corpus = load_corpus(&corpus)?;
            let all_examples = load_examples(&examples)?;
            let vocab = load_vocab(&vocab)?;
            let params = ModelParams::load(&model)?;
            let split = parse_split(&split)?;
            let subset = split_examples(&corpus, &all_examples, split);
            let result = evaluate(&params, &corpus, &subset, &vocab, frames)?;
            println!(
                "{} accuracy on {}: {} ({} / {} examples)",
                params.variant.as_str(),
                split.as_str(),
                render_pct(result.accuracy),
                (result.accuracy * result.n as f64).round() as usize,
                result.n
            );
            if let Some(rho) = result.tpr_frequency_correlation {
                println!("TPR vs training-frequency rank correlation: {rho:.3}");
            }
            if baseline {
                let train_subset = split_examples(&corpus, &all_examples, Split::Train);
                let b = majority_baseline(&train_subset, &vocab)?;
                let golds: Vec<usize> = subset
                    .iter()
                    .filter_map(|e| vocab.output_id(&e.answer))
                    .collect();
                println!(
                    "majority baseline ({:?}): {}",
                    b.answer,
                    render_pct(b.accuracy_on(&golds)?)
                );
            }
            if tpr {
                println!("answer\tgold\tcorrect\ttpr\ttrain_count");
                for (answer, b) in &result.per_answer {
                    println!(
                        "{answer}\t{}\t{}\t{:.3}\t{}",
                        b.gold_count, b.correct, b.tpr, b.train_count
                    );
                }
            }
            if let Some(path) = report {
                let body = serde_json::to_string_pretty(&result)
                    .map_err(|e| fib_core::Error::Validation(format!("serialize report: {e}")))?;
                std::fs::write(&path, body).map_err(|e| fib_core::Error::io(&path, e))?;
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::SweepFrames {
            corpus,
            examples,
            vocab,
            model,
            k,
            split,
        } => {
            let corpus = load_corpus(&corpus)?;
            let all_examples = load_examples(&examples)?;
            let vocab = load_vocab(&vocab)?;
            let params = ModelParams::load(&model)?;
            let split = parse_split(&split)?;
            let subset = split_examples(&corpus, &all_examples, split);
            let ks: Vec<usize> = k
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse()
                        .map_err(|_| fib_core::Error::Config(format!("bad frame count {p:?}")))
                })
                .collect::<fib_core::Result<_>>()?;
            let sweep = frame_sweep(&params, &corpus, &subset, &vocab, &ks)?;
            println!("frames\taccuracy");
            for (k, acc) in sweep {
                println!("{k}\t{}", render_pct(acc));
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::Gradcheck {
            dw,
            dh,
            vin,
            vout,
            batch,
            qlen,
            tsteps,
            seed,
            h,
            tolerance,
        } => {
            let spec = GradCheckSpec {
                embed_dim: dw,
                hidden: dh,
                vocab_in: vin,
                vocab_out: vout,
                batch,
                question_len: qlen,
                track_steps: tsteps,
                seed,
                step_h: h,
            };
            let report = gradcheck_model(&spec)?;
            println!(
                "max relative error {:.3e} over {} parameter entries",
                report.max_rel_error, report.entries_checked
            );
            if report.max_rel_error < tolerance {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("gradient check failed at tolerance {tolerance:e}");
                Ok(ExitCode::from(2))
            }
        }

        Command::ExportHumanEval {
            examples,
            answers,
            out,
            key,
            seed,
        } => {
            let examples = load_examples(&examples)?;
            let mut model_answers = Vec::new();
            for spec in &answers {
                let (name, path) = spec.split_once('=').ok_or_else(|| {
                    fib_core::Error::Config(format!(
                        "--answers expects name=path, got {spec:?}"
                    ))
                })?;
                let body = std::fs::read_to_string(path)
                    .map_err(|e| fib_core::Error::io(path, e))?;
                let list: Vec<String> = body.lines().map(|l| l.to_string()).collect();
                model_answers.push((name.to_string(), list));
            }
            export_human_eval(&examples, &model_answers, &out, &key, seed)?;
            eprintln!(
                "wrote {} rows with {} answer columns to {}",
                examples.len(),
                model_answers.len() + 1,
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

