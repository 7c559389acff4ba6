//! `crossdoc`: synthesize pair data, train, evaluate and localize.
//!
//! Exit status is 0 on success, 1 for usage and configuration errors, 2 for
//! data errors and 3 for numerical failures.

mod settings;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crossdoc::align::{joint_eval, AlignTarget, EvalOptions, PrecisionNorm, Scorer};
use crossdoc::data::{parse_pairs, write_synthetic};
use crossdoc::encoder::SentenceVectors;
use crossdoc::heatmap::{self, Format};
use crossdoc::train::{count_parameters, prepare_all, train_files};
use crossdoc::{CdaVariant, Checkpoint, EncoderKind, Error, Integration, Model};

use settings::Settings;

#[derive(Parser, Debug)]
#[command(name = "crossdoc", version, about = "Document and sentence alignment with cross-document attention")]
struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for evaluation and gradient computation (default: logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON settings file with flat dotted keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Settings override, e.g. `--set model.cda.variant=shallow`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic pair benchmark (train/dev/test plus metadata).
    GenSynth {
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a model and write its checkpoint and epoch log.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        /// Sentence vectors for the precomputed encoders.
        #[arg(long)]
        vectors: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Joint document and sentence alignment metrics on a pair file.
    Eval {
        #[command(flatten)]
        run: ScoringArgs,
        /// Sentence metrics as if every document prediction were correct.
        #[arg(long)]
        oracle: bool,
        #[arg(long, default_value = "min_gold")]
        precision_norm: PrecisionNorm,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Per-pair sentence rankings, optionally rendered as heatmaps.
    Localize {
        #[command(flatten)]
        run: ScoringArgs,
        #[arg(long)]
        heatmap: Option<Format>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Parameter counts per component.
    Params {
        #[arg(long)]
        variant: Option<CdaVariant>,
        #[arg(long)]
        integration: Option<Integration>,
        #[arg(long)]
        encoder: Option<EncoderKind>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args, Debug)]
struct ScoringArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Pair file to score.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    vectors: Option<PathBuf>,
    #[arg(long, default_value = "attention")]
    scorer: Scorer,
    /// Run the checkpoint under another CDA variant (a subset of its parameters).
    #[arg(long)]
    variant: Option<CdaVariant>,
    /// Score sentences against `d` (document) or `d̃` (final).
    #[arg(long, default_value = "document")]
    target: AlignTarget,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Run(e) if e.is_numerical() => 3,
            Failure::Run(_) => 2,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(msg) => eprintln!("error: {msg}"),
                Failure::Run(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let settings = Settings::load(cli.config.as_deref(), &cli.overrides, cli.seed).map_err(Failure::Usage)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::GenSynth { out_dir } => {
            settings.synth.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            let files = write_synthetic(&out_dir, &settings.synth)?;
            println!("wrote {}", files.train.parent().unwrap_or(&out_dir).display());
        }
        Command::Train {
            train,
            dev,
            vectors,
            out_dir,
        } => {
            let mut model_cfg = settings.model.clone();
            if model_cfg.encoder == EncoderKind::Gru {
                // the vocabulary is built from the training file
                model_cfg.vocab_size = model_cfg.vocab_size.max(3);
            }
            model_cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            settings.train.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            let vectors = load_vectors(vectors.as_deref())?;
            let out = train_files(&train, &dev, &settings.model, &settings.train, vectors.as_ref(), &out_dir)?;
            write_json(&out_dir.join("settings.json"), &settings)?;
            let best = &out.outcome.log[out.outcome.best_epoch - 1];
            println!(
                "best epoch {} dev_loss {:.6} dev_acc {:.4}",
                best.epoch, best.dev_loss, best.dev_acc
            );
        }
        Command::Eval {
            run,
            oracle,
            precision_norm,
            out_dir,
        } => {
            let (model, pairs) = load_run(&run)?;
            let opts = EvalOptions {
                scorer: run.scorer,
                oracle,
                norm: precision_norm,
                target: run.target,
                seed: cli.seed,
            };
            let (report, _) = joint_eval(&pairs, &model, &opts)?;
            fs::create_dir_all(&out_dir).map_err(|e| Error::Io {
                path: out_dir.clone(),
                source: e,
            })?;
            write_json(&out_dir.join("report.json"), &report)?;
            print!("{}", report.to_table());
        }
        Command::Localize { run, heatmap, out_dir } => {
            let (model, pairs) = load_run(&run)?;
            let raw = parse_pairs(&run.pairs)?;
            let opts = EvalOptions {
                scorer: run.scorer,
                oracle: true,
                target: run.target,
                seed: cli.seed,
                ..EvalOptions::default()
            };
            let (_, results) = joint_eval(&pairs, &model, &opts)?;
            let io = |p: &Path, e: std::io::Error| Error::Io {
                path: p.to_path_buf(),
                source: e,
            };
            fs::create_dir_all(&out_dir).map_err(|e| io(&out_dir, e))?;
            let mut lines = String::new();
            for r in &results {
                lines.push_str(&serde_json::to_string(r).map_err(Error::from)?);
                lines.push('\n');
            }
            let path = out_dir.join("alignments.jsonl");
            fs::write(&path, lines).map_err(|e| io(&path, e))?;
            if let Some(format) = heatmap {
                let dir = out_dir.join("heatmaps");
                if format == Format::Html {
                    fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
                }
                let mut stdout = std::io::stdout().lock();
                for r in &results {
                    let pair = raw.iter().find(|p| p.id == r.pair_id).expect("result of a parsed pair");
                    let side = pair.gold_side.expect("localized pairs have a side");
                    let page = heatmap::render(r, pair.doc(side), format)?;
                    match format {
                        Format::Html => {
                            let file = dir.join(format!("{}.html", file_stem(&r.pair_id)));
                            fs::write(&file, page).map_err(|e| io(&file, e))?;
                        }
                        Format::Ansi => {
                            let _ = writeln!(stdout, "{}\n{page}", r.pair_id);
                        }
                    }
                }
            }
            println!("{} pairs localized", results.len());
        }
        Command::Params {
            variant,
            integration,
            encoder,
            json,
        } => {
            let mut cfg = settings.model;
            if let Some(v) = variant {
                cfg.cda.variant = v;
            }
            if let Some(i) = integration {
                cfg.cda.integration = i;
            }
            if let Some(e) = encoder {
                cfg.encoder = e;
            }
            cfg.vocab_size = cfg.vocab_size.max(3);
            let counts = count_parameters(&cfg).map_err(|e| Failure::Usage(e.to_string()))?;
            if json {
                println!("{}", serde_json::to_string_pretty(&counts).map_err(Error::from)?);
            } else {
                print!("{}", counts.to_table());
            }
        }
    }
    Ok(())
}

fn load_vectors(path: Option<&Path>) -> Result<Option<SentenceVectors>, Failure> {
    Ok(path.map(SentenceVectors::load).transpose()?)
}

fn load_run(run: &ScoringArgs) -> Result<(Model<f32>, Vec<crossdoc::PreparedPair>), Failure> {
    let mut model = Checkpoint::load(&run.checkpoint)?.into_model()?;
    if let Some(v) = run.variant {
        model = model.with_variant(v).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let vectors = load_vectors(run.vectors.as_deref())?;
    let raw = parse_pairs(&run.pairs)?;
    let pairs = prepare_all(&model.config, &model.vocab, &raw, vectors.as_ref())?;
    Ok((model, pairs))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(path, text + "\n").map_err(|e| {
        Failure::Run(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}
