//! Training loop, evaluation and metric records.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use crate::autodiff::{Adam, Tape};
use crate::data::{encode_batch, extract_spans, span_f1, LabelMaps, Span, SpanScores, Utterance, Vocab};
use crate::error::{Error, Result};
use crate::model::{JointModel, Prediction};

/// Mean per-batch losses over one epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub intent: f64,
    pub aux: f64,
    pub slot: f64,
    pub total: f64,
    pub dev_intent_accuracy: Option<f64>,
    pub dev_slot_f1: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub intent_accuracy: f64,
    pub slot: SpanScores,
    pub utterances: usize,
}

impl Metrics {
    pub const TSV_HEADER: &'static str = "utterances\tintent_acc\tslot_precision\tslot_recall\tslot_f1";

    pub fn tsv_row(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            self.utterances, self.intent_accuracy, self.slot.precision, self.slot.recall, self.slot.f1
        )
    }
}

pub const EPOCH_TSV_HEADER: &str = "epoch\tintent_loss\taux_loss\tslot_loss\ttotal_loss\tdev_intent_acc\tdev_slot_f1";

impl EpochLog {
    pub fn tsv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}",
            self.epoch,
            self.intent,
            self.aux,
            self.slot,
            self.total,
            opt(self.dev_intent_accuracy),
            opt(self.dev_slot_f1)
        )
    }
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub epochs: Vec<EpochLog>,
}

/// Gold-versus-predicted scoring over label strings.
pub fn score(
    gold_intents: &[&str],
    pred_intents: &[&str],
    gold_tags: &[Vec<String>],
    pred_tags: &[Vec<String>],
) -> Result<Metrics> {
    if gold_intents.is_empty() {
        return Err(Error::InvalidInput("cannot score an empty corpus".into()));
    }
    if gold_intents.len() != pred_intents.len() || gold_tags.len() != pred_tags.len() {
        return Err(Error::InvalidInput("gold and predicted corpora differ in size".into()));
    }
    let correct = gold_intents.iter().zip(pred_intents).filter(|(g, p)| g == p).count();
    let spans = |t: &[Vec<String>]| -> Vec<BTreeSet<Span>> { t.iter().map(|s| extract_spans(s)).collect() };
    Ok(Metrics {
        intent_accuracy: correct as f64 / gold_intents.len() as f64,
        slot: span_f1(&spans(gold_tags), &spans(pred_tags))?,
        utterances: gold_intents.len(),
    })
}

/// Runs inference in chunks of `batch_size`. Gold labels must be covered by
/// the checkpoint's label maps.
pub fn predict_corpus(ckpt: &Checkpoint, model: &JointModel, corpus: &[Utterance]) -> Result<Prediction> {
    let mut all = Prediction {
        intents: Vec::new(),
        tags: Vec::new(),
    };
    for chunk in corpus.chunks(ckpt.run.batch_size.max(1)) {
        let batch = encode_batch(chunk, &ckpt.maps, &ckpt.vocab, ckpt.run.max_len)?;
        let p = model.predict(&ckpt.params, &batch)?;
        all.intents.extend(p.intents);
        all.tags.extend(p.tags);
    }
    Ok(all)
}

pub fn label_strings(maps: &LabelMaps, pred: &Prediction) -> (Vec<String>, Vec<Vec<String>>) {
    let intents = pred.intents.iter().map(|&i| maps.intents.name(i).to_string()).collect();
    let tags = pred
        .tags
        .iter()
        .map(|t| t.iter().map(|&s| maps.bio_labels.name(s).to_string()).collect())
        .collect();
    (intents, tags)
}

/// Intent accuracy and exact-match span scores of `ckpt` on `corpus`.
/// Utterances longer than the model's maximum length are scored on their
/// truncated prefix.
pub fn evaluate(ckpt: &Checkpoint, corpus: &[Utterance]) -> Result<Metrics> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate on an empty corpus".into()));
    }
    let model = ckpt.joint_model()?;
    let pred = predict_corpus(ckpt, &model, corpus)?;
    let (pi, pt) = label_strings(&ckpt.maps, &pred);
    let gold_i: Vec<&str> = corpus.iter().map(|u| u.intent.as_str()).collect();
    let pred_i: Vec<&str> = pi.iter().map(String::as_str).collect();
    let gold_t: Vec<Vec<String>> = corpus
        .iter()
        .zip(&pt)
        .map(|(u, p)| u.bio_tags[..p.len()].to_vec())
        .collect();
    score(&gold_i, &pred_i, &gold_t, &pt)
}

/// Builds the vocabulary, label maps and initial parameters for `train`.
pub fn initialize(cfg: &RunConfig, train: &[Utterance]) -> Result<Checkpoint> {
    let maps = LabelMaps::build(train)?;
    let vocab = Vocab::build(train);
    let model = cfg.model_config(vocab.len(), &maps)?;
    let params = model.init_params(cfg.seed)?;
    Ok(Checkpoint {
        run: cfg.clone(),
        model,
        maps,
        vocab,
        params,
        optimizer: Some(Adam::new(cfg.adam())),
        epoch: 0,
    })
}

/// Trains for exactly `cfg.epochs` epochs. The dev split, when given, is
/// scored after each epoch and never touches the weights.
pub fn train(cfg: &RunConfig, corpus: &[Utterance], dev: Option<&[Utterance]>) -> Result<TrainOutcome> {
    train_with(cfg, corpus, dev, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    cfg: &RunConfig,
    corpus: &[Utterance],
    dev: Option<&[Utterance]>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut ckpt = initialize(cfg, corpus)?;
    let model = ckpt.joint_model()?;
    let mut adam = ckpt.optimizer.take().expect("fresh optimizer");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        let mut batches = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            let utts: Vec<Utterance> = idx.iter().map(|&i| corpus[i].clone()).collect();
            let batch = encode_batch(&utts, &ckpt.maps, &ckpt.vocab, cfg.max_len)?;
            let tape = Tape::new();
            let p = ckpt.params.bind(&tape);
            let g = model.forward(&p, &batch, Some(&mut rng))?;
            let l = g.losses.as_ref().expect("batch has targets");
            let total = l.total.item() as f64;
            if !total.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite loss {total} at epoch {epoch}, batch {}",
                    batches + 1
                )));
            }
            sums[0] += l.intent.item() as f64;
            sums[1] += l.aux.map_or(0.0, |a| a.item() as f64);
            sums[2] += l.slot.item() as f64;
            sums[3] += total;
            tape.backward(l.total)?;
            ckpt.params.accumulate_grads(&p)?;
            adam.step(&mut ckpt.params)?;
            batches += 1;
        }
        let n = batches.max(1) as f64;
        let mut log = EpochLog {
            epoch,
            intent: sums[0] / n,
            aux: sums[1] / n,
            slot: sums[2] / n,
            total: sums[3] / n,
            ..Default::default()
        };
        if let Some(dev) = dev.filter(|d| !d.is_empty()) {
            let m = evaluate(&ckpt, dev)?;
            log.dev_intent_accuracy = Some(m.intent_accuracy);
            log.dev_slot_f1 = Some(m.slot.f1);
        }
        ckpt.epoch = epoch;
        on_epoch(&log);
        logs.push(log);
    }
    ckpt.optimizer = Some(adam);
    Ok(TrainOutcome {
        checkpoint: ckpt,
        epochs: logs,
    })
}
