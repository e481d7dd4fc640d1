use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use xnlu::cli::commands::{self, DEFAULT_ABLATION_MODES};
use xnlu::cli::{Checkpoint, RunConfig};
use xnlu::data::{load_corpus, Grammar};
use xnlu::error::{Error, Result};
use xnlu::explain::{Granularity, DEFAULT_K_LIST};

#[derive(Parser)]
#[command(name = "xnlu", version, about = "Joint intent detection and slot filling with per-type attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint plus logs to the output directory.
    Train(RunArgs),
    /// Score a checkpoint on a labelled corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also write the metrics TSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render per-type attention heatmaps for one utterance.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Whitespace-tokenized utterance.
        #[arg(long)]
        text: String,
        /// Comma-separated slot types; all types when omitted.
        #[arg(long, value_delimiter = ',')]
        types: Option<Vec<String>>,
        #[arg(long, default_value = "explain")]
        out: PathBuf,
    },
    /// Top-k entropy of positive versus negative slot-type attention.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated percentages.
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<f64>>,
        #[arg(long, default_value = "flatten")]
        granularity: String,
        /// Count the O tag as a slot type.
        #[arg(long)]
        include_outside: bool,
        /// Entropy TSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also score attention consistency on this many synthetic originals.
        #[arg(long)]
        consistency: Option<usize>,
        #[arg(long, default_value_t = 0)]
        consistency_seed: u64,
        /// Consistency TSV path; stdout when omitted.
        #[arg(long)]
        consistency_out: Option<PathBuf>,
    },
    /// Train every ablation variant from the same seed and tabulate them.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated modes.
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<String>>,
    },
    /// Finite-difference gradient check on a tiny model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Report path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic corpus with train/ and test/ splits.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 50)]
        test_n: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Run settings. Precedence: built-in defaults, then `--config`, then flags.
#[derive(Args, Clone, Default)]
struct RunArgs {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    d_h: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    ffn_dim: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    no_aux_network: bool,
    #[arg(long)]
    no_cross_attention: bool,
    #[arg(long)]
    no_intent_concat: bool,
    #[arg(long)]
    no_aux_loss: bool,
    #[arg(long)]
    frozen_uniform: bool,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let overrides: Vec<(&str, Option<String>)> = vec![
            ("train", path(&self.train)),
            ("dev", path(&self.dev)),
            ("test", path(&self.test)),
            ("output-dir", path(&self.output_dir)),
            ("seed", self.seed.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("batch-size", self.batch_size.map(|v| v.to_string())),
            ("lr", self.lr.map(|v| v.to_string())),
            ("dropout", self.dropout.map(|v| v.to_string())),
            ("d", self.d.map(|v| v.to_string())),
            ("d-h", self.d_h.map(|v| v.to_string())),
            ("layers", self.layers.map(|v| v.to_string())),
            ("heads", self.heads.map(|v| v.to_string())),
            ("ffn-dim", self.ffn_dim.map(|v| v.to_string())),
            ("alpha", self.alpha.map(|v| v.to_string())),
            ("beta", self.beta.map(|v| v.to_string())),
            ("gamma", self.gamma.map(|v| v.to_string())),
            ("max-len", self.max_len.map(|v| v.to_string())),
            ("no-aux-network", self.no_aux_network.then(|| "true".into())),
            ("no-cross-attention", self.no_cross_attention.then(|| "true".into())),
            ("no-intent-concat", self.no_intent_concat.then(|| "true".into())),
            ("no-aux-loss", self.no_aux_loss.then(|| "true".into())),
            ("frozen-uniform", self.frozen_uniform.then(|| "true".into())),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let (_, metrics) = commands::cmd_train(&cfg, |e| eprintln!("{}", e.tsv_row()))?;
            print!("{}", commands::metrics_tsv(&metrics));
            eprintln!("wrote {}", cfg.output_dir.display());
        }
        Command::Eval { checkpoint, data, out } => {
            let m = commands::cmd_eval(&checkpoint, &data)?;
            let text = commands::metrics_tsv(&[("eval".into(), m)]);
            print!("{text}");
            if let Some(p) = out {
                emit(&text, Some(&p))?;
            }
        }
        Command::Explain { checkpoint, text, types, out } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            for p in commands::cmd_explain(&ckpt, &text, types.as_deref(), &out)? {
                println!("{}", p.display());
            }
        }
        Command::Analyze {
            checkpoint,
            data,
            k,
            granularity,
            include_outside,
            out,
            consistency,
            consistency_seed,
            consistency_out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let corpus = load_corpus(&data)?;
            let k_list = k.unwrap_or_else(|| DEFAULT_K_LIST.to_vec());
            let g: Granularity = granularity.parse()?;
            let report = commands::cmd_analyze(&ckpt, &corpus, &k_list, g, include_outside)?;
            eprintln!("utterances analysed: {}, skipped: {}", report.utterances, report.skipped);
            emit(&report.to_tsv(), out.as_deref())?;
            if let Some(n) = consistency {
                let r = commands::cmd_consistency(&ckpt, &Grammar::default_grammar(), consistency_seed, n)?;
                emit(&r.to_tsv(), consistency_out.as_deref())?;
            }
        }
        Command::Ablate { run, modes } => {
            let cfg = run.resolve()?;
            let modes: Vec<String> =
                modes.unwrap_or_else(|| DEFAULT_ABLATION_MODES.iter().map(|s| s.to_string()).collect());
            let refs: Vec<&str> = modes.iter().map(String::as_str).collect();
            let table = commands::cmd_ablate(&cfg, &refs)?;
            print!("{}", table.to_tsv());
        }
        Command::Gradcheck { seed, h, tol, out } => {
            let report = commands::gradcheck_tiny(seed, h, tol)?;
            emit(&report.render(), out.as_deref())?;
            if !report.pass {
                return Err(Error::GradCheck {
                    max_rel_error: report.max_rel_error(),
                    tol,
                });
            }
        }
        Command::Synth { seed, n, test_n, out } => {
            commands::cmd_synth(seed, n, test_n, &out)?;
            eprintln!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
