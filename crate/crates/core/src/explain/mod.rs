//! Explanation tooling on top of the per-slot-type attention matrices:
//! extraction, top-k entropy analysis, modification consistency and
//! heatmap rendering.

mod consistency;
mod entropy;
mod heatmap;

use std::collections::BTreeSet;

use crate::autodiff::ParamSet;
use crate::data::{encode_tokens, Tag, Utterance, Vocab};
use crate::data::LabelMaps;
use crate::error::{Error, Result};
use crate::model::JointModel;

pub use consistency::{
    align_rows, alignment_keys, compare_attention_consistency, consistency_report, ConsistencyReport, PairScore,
};
pub use entropy::{entropy, top_k, topk_entropy_analysis, EntropyReport, EntropyRow, Granularity, DEFAULT_K_LIST};
pub use heatmap::{render_heatmap, write_heatmap};

/// Per-slot-type attention for one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBundle {
    pub tokens: Vec<String>,
    /// Tags used to split types into positive and negative: gold when
    /// supplied, otherwise predicted.
    pub tags: Vec<String>,
    /// All slot types, `O` first.
    pub type_names: Vec<String>,
    /// One `l x l` matrix per entry of `type_names`.
    pub matrices: Vec<Vec<Vec<f64>>>,
    /// Indices into `type_names` of types present in `tags`.
    pub positive: Vec<usize>,
    /// Indices of the analysed types absent from `tags`.
    pub negative: Vec<usize>,
}

impl AttentionBundle {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn type_index(&self, name: &str) -> Result<usize> {
        self.type_names.iter().position(|t| t == name).ok_or_else(|| Error::UnknownLabel {
            label: name.to_string(),
            known: self.type_names.join(", "),
        })
    }

    pub fn matrix(&self, name: &str) -> Result<&Vec<Vec<f64>>> {
        Ok(&self.matrices[self.type_index(name)?])
    }
}

/// Splits types into positive and negative for the given tag sequence. `O`
/// (index 0) is left out of both sets unless `include_outside` is set.
pub fn partition_types<S: AsRef<str>>(tags: &[S], type_names: &[String], include_outside: bool) -> (Vec<usize>, Vec<usize>) {
    let present: BTreeSet<&str> = tags
        .iter()
        .map(|t| match Tag::parse(t.as_ref()) {
            Some(Tag::Begin(x)) | Some(Tag::Inside(x)) => x,
            _ => "O",
        })
        .collect();
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (i, name) in type_names.iter().enumerate() {
        if i == 0 && !include_outside {
            continue;
        }
        if present.contains(name.as_str()) {
            pos.push(i);
        } else {
            neg.push(i);
        }
    }
    (pos, neg)
}

/// A model ready to produce attention bundles.
pub struct Explainer<'a> {
    pub model: &'a JointModel,
    pub params: &'a ParamSet<f32>,
    pub maps: &'a LabelMaps,
    pub vocab: &'a Vocab,
    pub max_len: usize,
    pub include_outside: bool,
}

impl Explainer<'_> {
    /// Bundles for a list of token sequences, with optional gold tags.
    pub fn extract_many(&self, inputs: &[(&[String], Option<&[String]>)]) -> Result<Vec<AttentionBundle>> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(32) {
            let sentences: Vec<&[String]> = chunk.iter().map(|(t, _)| *t).collect();
            let sentences: Vec<Vec<&String>> = sentences.iter().map(|s| s.iter().collect()).collect();
            let batch = encode_tokens(&sentences, self.vocab, self.max_len)?;
            let fwd = self.model.run(self.params, &batch, None)?;
            if fwd.attention.is_none() {
                return Err(Error::InvalidInput(
                    "model has no slot-type attention (generator disabled)".into(),
                ));
            }
            let pred = fwd.predict();
            for (b, (tokens, gold)) in chunk.iter().enumerate() {
                let len = batch.lengths[b];
                let tags: Vec<String> = match gold {
                    Some(g) => g[..len.min(g.len())].to_vec(),
                    None => pred.tags[b].iter().map(|&s| self.maps.bio_labels.name(s).to_string()).collect(),
                };
                let type_names = self.maps.slot_types.items().to_vec();
                let matrices = (0..type_names.len())
                    .map(|t| {
                        fwd.attention_matrix(b, t)
                            .expect("attention present")
                            .into_iter()
                            .map(|r| r.into_iter().map(f64::from).collect())
                            .collect()
                    })
                    .collect();
                let (positive, negative) = partition_types(&tags, &type_names, self.include_outside);
                out.push(AttentionBundle {
                    tokens: tokens[..len].to_vec(),
                    tags,
                    type_names,
                    matrices,
                    positive,
                    negative,
                });
            }
        }
        Ok(out)
    }

    /// Bundle for one utterance; positive types come from `gold` when given.
    pub fn extract(&self, tokens: &[String], gold: Option<&[String]>) -> Result<AttentionBundle> {
        Ok(self.extract_many(&[(tokens, gold)])?.remove(0))
    }

    /// Bundles for a labelled corpus using its gold tags.
    pub fn extract_corpus(&self, corpus: &[Utterance]) -> Result<Vec<AttentionBundle>> {
        let inputs: Vec<(&[String], Option<&[String]>)> = corpus
            .iter()
            .map(|u| (u.tokens.as_slice(), Some(u.bio_tags.as_slice())))
            .collect();
        self.extract_many(&inputs)
    }
}
