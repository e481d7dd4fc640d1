use super::auxiliary::generate_aux_targets;
use super::corpus::Utterance;
use super::labels::LabelMaps;
use super::vocab::{Vocab, PAD_ID};
use crate::encoder::tokenize;
use crate::error::{Error, Result};

/// Maximum utterance length used throughout unless configured otherwise.
pub const DEFAULT_MAX_LEN: usize = 50;

/// Supervision attached to a batch. Pad positions carry `None` slot targets
/// and all-zero aux rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub intent: Vec<usize>,
    pub slot: Vec<Vec<Option<usize>>>,
    pub aux: Vec<Vec<Vec<u8>>>,
}

/// Padded `B x L` id matrix with its validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub token_ids: Vec<Vec<usize>>,
    pub mask: Vec<Vec<bool>>,
    pub lengths: Vec<usize>,
    pub targets: Option<Targets>,
    /// Number of utterances cut at `max_len`.
    pub truncated: usize,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.lengths.len()
    }

    /// Padded length `L`.
    pub fn width(&self) -> usize {
        self.token_ids.first().map_or(0, Vec::len)
    }

    /// Sum of true lengths.
    pub fn total_tokens(&self) -> usize {
        self.lengths.iter().sum()
    }
}

/// Pads and masks id rows into a batch without targets.
fn pad_ids(rows: Vec<Vec<usize>>, max_len: usize) -> Result<Batch> {
    if rows.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if max_len == 0 {
        return Err(Error::InvalidInput("max_len must be positive".into()));
    }
    let mut truncated = 0;
    let lengths: Vec<usize> = rows
        .iter()
        .map(|r| {
            if r.len() > max_len {
                truncated += 1;
            }
            r.len().min(max_len)
        })
        .collect();
    let width = *lengths.iter().max().unwrap();
    let mut ids = Vec::with_capacity(rows.len());
    let mut mask = Vec::with_capacity(rows.len());
    for (mut r, &l) in rows.into_iter().zip(&lengths) {
        r.truncate(l);
        r.resize(width, PAD_ID);
        ids.push(r);
        mask.push((0..width).map(|i| i < l).collect());
    }
    Ok(Batch {
        token_ids: ids,
        mask,
        lengths,
        targets: None,
        truncated,
    })
}

/// Encodes unlabeled token sequences for inference.
pub fn encode_tokens<S: AsRef<str>>(sentences: &[Vec<S>], vocab: &Vocab, max_len: usize) -> Result<Batch> {
    if let Some(i) = sentences.iter().position(Vec::is_empty) {
        return Err(Error::InvalidInput(format!("utterance {i} is empty")));
    }
    let rows = sentences.iter().map(|s| tokenize(s, vocab)).collect();
    pad_ids(rows, max_len)
}

/// Pads, truncates at `max_len`, maps unseen tokens to UNK and attaches
/// intent, BIO and auxiliary targets.
pub fn encode_batch(utterances: &[Utterance], maps: &LabelMaps, vocab: &Vocab, max_len: usize) -> Result<Batch> {
    let sentences: Vec<&[String]> = utterances.iter().map(|u| u.tokens.as_slice()).collect();
    if let Some(i) = sentences.iter().position(|s| s.is_empty()) {
        return Err(Error::InvalidInput(format!("utterance {i} is empty")));
    }
    let rows = sentences.iter().map(|s| tokenize(s, vocab)).collect();
    let mut batch = pad_ids(rows, max_len)?;
    let width = batch.width();
    let n_types = maps.slot_types.len();

    let mut intent = Vec::with_capacity(utterances.len());
    let mut slot = Vec::with_capacity(utterances.len());
    let mut aux = Vec::with_capacity(utterances.len());
    for (u, &l) in utterances.iter().zip(&batch.lengths) {
        if u.bio_tags.len() != u.tokens.len() {
            return Err(Error::InvalidInput("tokens and tags differ in length".into()));
        }
        intent.push(maps.intents.require(&u.intent)?);
        let tags = &u.bio_tags[..l];
        let mut s: Vec<Option<usize>> = tags
            .iter()
            .map(|t| maps.bio_labels.require(t).map(Some))
            .collect::<Result<_>>()?;
        s.resize(width, None);
        slot.push(s);
        let mut a = generate_aux_targets(tags, maps)?;
        a.resize(width, vec![0; n_types]);
        aux.push(a);
    }
    batch.targets = Some(Targets { intent, slot, aux });
    Ok(batch)
}
