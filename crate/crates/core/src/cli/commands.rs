use std::fs;
use std::path::{Path, PathBuf};

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::train::{evaluate, train_with, EpochLog, Metrics, TrainOutcome, EPOCH_TSV_HEADER};
use crate::autodiff::{finite_diff_check, GradCheckReport, ParamSet};
use crate::data::{encode_batch, generate_synthetic_corpus, load_corpus, write_corpus, Grammar, LabelMaps, Utterance, Vocab};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::explain::{
    consistency_report, topk_entropy_analysis, write_heatmap, ConsistencyReport, EntropyReport, Explainer, Granularity,
};
use crate::model::{Ablation, JointModel, ModelConfig};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const EPOCHS_FILE: &str = "epochs.tsv";
pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.tsv";

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
    p.as_ref().ok_or_else(|| Error::Config(format!("no {what} corpus given")))
}

fn load_split(p: &Option<PathBuf>) -> Result<Option<Vec<Utterance>>> {
    p.as_ref().map(load_corpus).transpose()
}

/// Trains on `cfg.train`, writes the checkpoint, per-epoch log, resolved
/// config and final metrics into `cfg.output_dir`.
pub fn cmd_train(cfg: &RunConfig, mut on_epoch: impl FnMut(&EpochLog)) -> Result<(TrainOutcome, Vec<(String, Metrics)>)> {
    let train = load_corpus(required(&cfg.train, "train")?)?;
    let dev = load_split(&cfg.dev)?;
    let test = load_split(&cfg.test)?;
    let out = train_with(cfg, &train, dev.as_deref(), &mut on_epoch)?;
    let dir = &cfg.output_dir;
    out.checkpoint.save(&dir.join(CHECKPOINT_FILE))?;
    let mut log = format!("{EPOCH_TSV_HEADER}\n");
    for e in &out.epochs {
        log.push_str(&e.tsv_row());
        log.push('\n');
    }
    write(&dir.join(EPOCHS_FILE), &log)?;
    write(&dir.join(CONFIG_FILE), &cfg.to_file_text())?;
    let mut metrics = vec![("train".to_string(), evaluate(&out.checkpoint, &train)?)];
    if let Some(t) = test.as_deref() {
        metrics.push(("test".to_string(), evaluate(&out.checkpoint, t)?));
    }
    write(&dir.join(METRICS_FILE), &metrics_tsv(&metrics))?;
    Ok((out, metrics))
}

pub fn metrics_tsv(rows: &[(String, Metrics)]) -> String {
    let mut s = format!("split\t{}\n", Metrics::TSV_HEADER);
    for (name, m) in rows {
        s.push_str(&format!("{name}\t{}\n", m.tsv_row()));
    }
    s
}

pub fn cmd_eval(checkpoint: &Path, data: &Path) -> Result<Metrics> {
    let ckpt = Checkpoint::load(checkpoint)?;
    evaluate(&ckpt, &load_corpus(data)?)
}

fn explainer<'a>(ckpt: &'a Checkpoint, model: &'a JointModel, include_outside: bool) -> Explainer<'a> {
    Explainer {
        model,
        params: &ckpt.params,
        maps: &ckpt.maps,
        vocab: &ckpt.vocab,
        max_len: ckpt.run.max_len,
        include_outside,
    }
}

/// Writes one heatmap per requested type plus `bundle.tsv` with columns
/// `type, i, j, weight`. Returns the heatmap paths.
pub fn cmd_explain(ckpt: &Checkpoint, text: &str, types: Option<&[String]>, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
    if tokens.is_empty() {
        return Err(Error::InvalidInput("empty utterance".into()));
    }
    let model = ckpt.joint_model()?;
    let bundle = explainer(ckpt, &model, false).extract(&tokens, None)?;
    let selected: Vec<String> = match types {
        Some(t) => {
            for name in t {
                bundle.type_index(name)?;
            }
            t.to_vec()
        }
        None => bundle.type_names.clone(),
    };
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut paths = Vec::with_capacity(selected.len());
    let mut dump = String::from("type\ti\tj\tweight\n");
    for name in &selected {
        let safe: String = name
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        let path = out_dir.join(format!("heatmap_{safe}.html"));
        write_heatmap(&bundle, name, &path)?;
        paths.push(path);
        for (i, row) in bundle.matrix(name)?.iter().enumerate() {
            for (j, w) in row.iter().enumerate() {
                dump.push_str(&format!("{name}\t{i}\t{j}\t{w:.8}\n"));
            }
        }
    }
    write(&out_dir.join("bundle.tsv"), &dump)?;
    Ok(paths)
}

pub fn cmd_analyze(
    ckpt: &Checkpoint,
    corpus: &[Utterance],
    k_list: &[f64],
    granularity: Granularity,
    include_outside: bool,
) -> Result<EntropyReport> {
    let model = ckpt.joint_model()?;
    let bundles = explainer(ckpt, &model, include_outside).extract_corpus(corpus)?;
    topk_entropy_analysis(&bundles, k_list, granularity)
}

/// Modification-consistency scores on pairs drawn from `grammar`.
pub fn cmd_consistency(ckpt: &Checkpoint, grammar: &Grammar, seed: u64, originals: usize) -> Result<ConsistencyReport> {
    let pairs = crate::data::generate_modification_pairs(seed, originals, 2, grammar)?;
    let model = ckpt.joint_model()?;
    consistency_report(&explainer(ckpt, &model, false), &pairs)
}

/// Named ablation rows, in table order.
pub const ABLATION_MODES: [&str; 6] = [
    "full",
    "no-aux-network",
    "no-cross-attention",
    "no-intent-concat",
    "frozen-uniform",
    "no-aux-loss",
];

pub const DEFAULT_ABLATION_MODES: [&str; 5] = [
    "full",
    "no-aux-network",
    "no-cross-attention",
    "no-intent-concat",
    "frozen-uniform",
];

pub fn ablation_for_mode(mode: &str) -> Result<Ablation> {
    let mut a = Ablation::default();
    match mode {
        "full" => {}
        "no-aux-network" => a.no_aux_network = true,
        "no-cross-attention" => a.no_cross_attention = true,
        "no-intent-concat" => a.no_intent_concat = true,
        "frozen-uniform" => a.frozen_uniform = true,
        "no-aux-loss" => a.no_aux_loss = true,
        _ => {
            return Err(Error::Config(format!(
                "unknown ablation mode {mode:?}; valid modes: {}",
                ABLATION_MODES.join(", ")
            )))
        }
    }
    Ok(a)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub mode: String,
    pub param_count: usize,
    pub expected_param_count: usize,
    pub final_loss: f64,
    pub epochs: usize,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    /// Which split the metrics were computed on.
    pub split: String,
}

impl AblationTable {
    pub fn to_tsv(&self) -> String {
        let mut s = format!("mode\tparams\tepochs\tfinal_loss\t{}\n", Metrics::TSV_HEADER);
        for r in &self.rows {
            s.push_str(&format!(
                "{}\t{}\t{}\t{:.6}\t{}\n",
                r.mode,
                r.param_count,
                r.epochs,
                r.final_loss,
                r.metrics.tsv_row()
            ));
        }
        s
    }
}

/// Trains one model per mode from the same seed. Metrics use the test split
/// when configured, else the training split. The table is written to
/// `ablation.tsv` under the output directory.
pub fn cmd_ablate(cfg: &RunConfig, modes: &[&str]) -> Result<AblationTable> {
    let train = load_corpus(required(&cfg.train, "train")?)?;
    let test = load_split(&cfg.test)?;
    let table = ablate_on(cfg, modes, &train, test.as_deref())?;
    write(&cfg.output_dir.join("ablation.tsv"), &table.to_tsv())?;
    Ok(table)
}

pub fn ablate_on(cfg: &RunConfig, modes: &[&str], train: &[Utterance], test: Option<&[Utterance]>) -> Result<AblationTable> {
    let mut rows = Vec::with_capacity(modes.len());
    for &mode in modes {
        let mut c = cfg.clone();
        c.ablation = ablation_for_mode(mode)?;
        let out = train_with(&c, train, None, |_| {})?;
        let ckpt = &out.checkpoint;
        rows.push(AblationRow {
            mode: mode.to_string(),
            param_count: ckpt.params.numel(),
            expected_param_count: ckpt.model.param_count(),
            final_loss: out.epochs.last().map_or(f64::NAN, |e| e.total),
            epochs: out.epochs.len(),
            metrics: evaluate(ckpt, test.unwrap_or(train))?,
        });
    }
    Ok(AblationTable {
        rows,
        split: if test.is_some() { "test" } else { "train" }.into(),
    })
}

/// Gradient check of the joint loss on a tiny double-precision model
/// (d = 8, d_h = 4, two intents, three slot types, utterances of at most
/// five tokens).
pub fn gradcheck_tiny(seed: u64, h: f64, tol: f64) -> Result<GradCheckReport> {
    let corpus = vec![
        Utterance::new(
            ["fly", "to", "boston"].map(String::from).to_vec(),
            "book",
            ["O", "O", "B-city"].map(String::from).to_vec(),
        )?,
        Utterance::new(
            ["weather", "in", "new", "york", "monday"].map(String::from).to_vec(),
            "weather",
            ["O", "O", "B-city", "I-city", "B-day"].map(String::from).to_vec(),
        )?,
    ];
    let maps = LabelMaps::build(&corpus)?;
    let vocab = Vocab::build(&corpus);
    let enc = EncoderConfig {
        vocab_size: vocab.len(),
        d: 8,
        n_layers: 1,
        n_heads: 2,
        ffn_dim: 16,
        max_positions: 6,
        dropout_rate: 0.0,
    };
    let cfg = ModelConfig::new(enc, 4, &maps);
    let params: ParamSet<f64> = cfg.init_params(seed)?;
    let model = JointModel::new(cfg)?;
    let batch = encode_batch(&corpus, &maps, &vocab, 5)?;
    finite_diff_check(&params, h, tol, |_, p| {
        Ok(model.forward(p, &batch, None)?.losses.expect("labelled batch").total)
    })
}

/// Writes a synthetic train/test pair of corpora under `out`.
pub fn cmd_synth(seed: u64, n_train: usize, n_test: usize, out: &Path) -> Result<()> {
    let g = Grammar::default_grammar();
    let all = generate_synthetic_corpus(seed, n_train + n_test, &g)?;
    let (train, test) = all.split_at(n_train);
    write_corpus(out.join("train"), train)?;
    if n_test > 0 {
        write_corpus(out.join("test"), test)?;
    }
    Ok(())
}
