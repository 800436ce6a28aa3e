use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use ctcwfst::decoder::DecodeConfig;
use ctcwfst::recipe::{self, DecodePaths, Mode, RecipeConfig, WorkDir};

/// End-to-end CTC acoustic modeling with WFST decoding.
///
/// Every stage reads and writes a work directory, so stages can be rerun
/// independently and produce the same outputs.
#[derive(Debug, Parser)]
#[command(name = "ctcwfst", version)]
struct Cli {
    /// TOML recipe configuration; unset keys take the toy defaults
    /// (2 layers of 32 cells per direction).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads for data-parallel stages (0 = all cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Seed for data generation, initialization and the validation split;
    /// overrides the configuration.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// More log output; repeat for debug and trace.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct WorkArg {
    /// Work directory holding every stage's inputs and outputs.
    #[arg(long, value_name = "DIR", default_value = "work")]
    work: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write normalized features, unit label archives and label priors.
    /// Generates the synthetic corpus under <work>/data when it holds no
    /// units.txt.
    Prepare {
        #[command(flatten)]
        work: WorkArg,
        /// Inventory of a generated corpus: phoneme or character (with
        /// <space> between words). Existing data keeps its own inventory.
        #[arg(long, value_name = "MODE")]
        mode: Option<Mode>,
    },
    /// Train the BLSTM, checkpointing every epoch, and write final.mdl and
    /// train.log.
    Train {
        #[command(flatten)]
        work: WorkArg,
        /// Continue from the checkpoint in <work>/checkpoint when present.
        #[arg(long)]
        resume: bool,
        /// Initial learning rate.
        #[arg(long, value_name = "RATE")]
        learning_rate: Option<f64>,
        /// Upper bound on training epochs.
        #[arg(long, value_name = "N")]
        max_epochs: Option<usize>,
    },
    /// Compile T, L, G and the search graph S, write them under <work>/graph
    /// and print state and arc counts. The lexicon transducer follows the
    /// unit inventory: spelling with <space> when it has that unit.
    BuildGraph {
        #[command(flatten)]
        work: WorkArg,
    },
    /// Decode test features and write `<utt> <word>...` hypothesis lines.
    Decode {
        #[command(flatten)]
        work: WorkArg,
        /// Binary search graph [default: <work>/graph/S.bin].
        #[arg(long, value_name = "FILE")]
        graph: Option<PathBuf>,
        /// Decode with the lexicon-only graph <work>/graph/S_nolm.bin.
        #[arg(long, conflicts_with = "graph")]
        no_grammar: bool,
        /// Word symbol table [default: <work>/graph/words.txt].
        #[arg(long, value_name = "FILE")]
        word_symbols: Option<PathBuf>,
        /// Label priors [default: <work>/priors.txt].
        #[arg(long, value_name = "FILE")]
        priors: Option<PathBuf>,
        /// Model [default: <work>/final.mdl].
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
        /// Feature archive or directory [default: <work>/feats/test.ark].
        #[arg(long, value_name = "PATH")]
        features: Option<PathBuf>,
        /// Hypothesis output [default: <work>/decode/hyp.txt].
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
        /// Weight of acoustic scores relative to graph weights.
        #[arg(long, value_name = "X")]
        acoustic_scale: Option<f64>,
        /// Pruning beam in cost units.
        #[arg(long, value_name = "X")]
        beam: Option<f64>,
        /// Maximum active tokens per frame.
        #[arg(long, value_name = "N")]
        max_active: Option<usize>,
    },
    /// Compute word error rate and write the report.
    Score {
        #[command(flatten)]
        work: WorkArg,
        /// Hypotheses [default: <work>/decode/hyp.txt].
        #[arg(long, value_name = "FILE")]
        hyp: Option<PathBuf>,
        /// Reference transcripts [default: <work>/data/test.txt].
        #[arg(long = "ref", value_name = "FILE")]
        reference: Option<PathBuf>,
        /// Report output [default: <work>/decode/wer.txt].
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<RecipeConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| ctcwfst::Error::Io {
                path: p.clone(),
                source: e,
            })?;
            RecipeConfig::from_toml(&text)?
        }
        None => RecipeConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(j) = cli.jobs {
        ctcwfst::par::configure_jobs(j);
    }
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Prepare { work, mode } => {
            cfg.mode = mode.unwrap_or(cfg.mode);
            let s = recipe::prepare(&WorkDir::new(work.work), &cfg)?;
            println!(
                "prepared {} train and {} test utterances, feature dim {}, {} labels",
                s.train_utterances, s.test_utterances, s.feature_dim, s.num_labels
            );
        }
        Command::Train {
            work,
            resume,
            learning_rate,
            max_epochs,
        } => {
            cfg.learning_rate = learning_rate.unwrap_or(cfg.learning_rate);
            cfg.max_epochs = max_epochs.unwrap_or(cfg.max_epochs);
            let tc = cfg.train_config();
            tc.validate()?;
            let out = recipe::train(&WorkDir::new(work.work), &tc, resume, |r| println!("{r}"))?;
            println!("stopped after {} epochs, phase {}", out.schedule.epochs, out.schedule.phase.name());
        }
        Command::BuildGraph { work } => {
            let stats = recipe::build_graph(&WorkDir::new(work.work))?;
            print!("{stats}");
        }
        Command::Decode {
            work,
            graph,
            no_grammar,
            word_symbols,
            priors,
            model,
            features,
            output,
            acoustic_scale,
            beam,
            max_active,
        } => {
            let w = WorkDir::new(work.work);
            let d = DecodePaths::standard(&w, !no_grammar);
            let paths = DecodePaths {
                model: model.unwrap_or(d.model),
                features: features.unwrap_or(d.features),
                priors: priors.unwrap_or(d.priors),
                units: d.units,
                graph: graph.unwrap_or(d.graph),
                word_symbols: word_symbols.unwrap_or(d.word_symbols),
                output: output.unwrap_or(d.output),
            };
            let dc = DecodeConfig {
                beam: beam.unwrap_or(cfg.beam),
                max_active: max_active.unwrap_or(cfg.max_active),
            };
            let hyps = recipe::decode(&paths, acoustic_scale.unwrap_or(cfg.acoustic_scale), &dc)?;
            println!("decoded {} utterances into {}", hyps.len(), paths.output.display());
        }
        Command::Score {
            work,
            hyp,
            reference,
            output,
        } => {
            let w = WorkDir::new(work.work);
            let hyp = hyp.unwrap_or_else(|| w.decode("hyp.txt"));
            let reference = reference.unwrap_or_else(|| w.data("test.txt"));
            let output = output.unwrap_or_else(|| w.decode("wer.txt"));
            let r = recipe::score(&hyp, &reference, Some(&output))
                .with_context(|| format!("scoring {}", hyp.display()))?;
            print!("{}", ctcwfst::io::format_wer_report(&r).lines().next().unwrap_or_default());
            println!();
        }
    }
    Ok(())
}

fn category(err: &anyhow::Error) -> &'static str {
    err.chain()
        .find_map(|e| e.downcast_ref::<ctcwfst::Error>())
        .map_or("internal", ctcwfst::Error::category)
}

/// Context messages down to the first library error, whose own message
/// already names its cause.
fn detail(err: &anyhow::Error) -> String {
    let mut parts = Vec::new();
    for e in err.chain() {
        parts.push(e.to_string());
        if e.downcast_ref::<ctcwfst::Error>().is_some() {
            break;
        }
    }
    parts.join(": ")
}

fn one_line(s: &str) -> String {
    s.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join("; ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let detail = msg.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("error: usage: {}", one_line(detail));
            return ExitCode::from(2);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", category(&e), one_line(&detail(&e)));
            ExitCode::FAILURE
        }
    }
}
