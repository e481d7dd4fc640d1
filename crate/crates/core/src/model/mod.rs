//! The joint intent and slot network: intent classifier, slot-type weight
//! and feature generator with its binary heads, and the cross-attention
//! slot classifier, plus the joint objective and argmax decoding.

pub mod blocks;
mod config;

use rand::RngCore;

use crate::autodiff::{Bound, Real, Tensor, Var};
use crate::data::Batch;
use crate::encoder::{reborrow, Encoder};
use crate::error::{Error, Result};

pub use blocks::argmax;
pub use config::{Ablation, LossWeights, ModelConfig, CROSS_PREFIX, GENERATOR_PREFIX};

/// Symbolic outputs of one utterance, still attached to the tape.
pub struct UtteranceGraph<'t, F> {
    pub intent_logits: Var<'t, F>,
    pub slot_logits: Var<'t, F>,
    pub type_logits: Option<Var<'t, F>>,
    pub type_attention: Vec<Var<'t, F>>,
}

pub struct LossGraph<'t, F> {
    pub intent: Var<'t, F>,
    pub aux: Option<Var<'t, F>>,
    pub slot: Var<'t, F>,
    pub total: Var<'t, F>,
}

/// A batch forward pass on the tape.
pub struct ForwardGraph<'t, F> {
    pub utterances: Vec<UtteranceGraph<'t, F>>,
    pub losses: Option<LossGraph<'t, F>>,
    pub width: usize,
}

/// Scalar loss values. `aux` is reported whenever the generator exists,
/// even if it does not enter `total`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValues {
    pub intent: f64,
    pub aux: Option<f64>,
    pub slot: f64,
    pub total: f64,
}

/// Detached forward results for a batch of `B` utterances padded to `L`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput<F> {
    /// `B x |I|`
    pub intent_logits: Tensor<F>,
    /// `B x L x |S|`
    pub slot_logits: Tensor<F>,
    /// `B x L x |T|`, absent without the generator.
    pub type_logits: Option<Tensor<F>>,
    /// `B x |T| x L x L`, absent without the generator.
    pub attention: Option<Tensor<F>>,
    pub lengths: Vec<usize>,
    pub losses: Option<LossValues>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prediction {
    pub intents: Vec<usize>,
    /// BIO label ids over the true length of each utterance.
    pub tags: Vec<Vec<usize>>,
}

pub struct JointModel {
    pub config: ModelConfig,
    encoder: Encoder,
}

fn stack<F: Real>(parts: &[Var<'_, F>], shape: Vec<usize>) -> Result<Tensor<F>> {
    let mut data = Vec::with_capacity(shape.iter().product());
    for v in parts {
        data.extend_from_slice(v.value().data());
    }
    Tensor::new(shape, data)
}

impl JointModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let encoder = Encoder::new(config.encoder.clone())?;
        Ok(JointModel { config, encoder })
    }

    /// Builds the graph for one padded utterance.
    pub fn forward_one<'t, F: Real>(
        &self,
        p: &Bound<'t, F>,
        ids: &[usize],
        mask: &[bool],
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<UtteranceGraph<'t, F>> {
        let cfg = &self.config;
        let ab = cfg.ablation;
        let enc = self.encoder.encode_one(p, ids, mask, reborrow(&mut rng))?;
        let intent_logits = blocks::intent_head(enc.context, p)?;
        let mut type_logits = None;
        let mut type_attention = Vec::new();
        if ab.has_generator() {
            let fused = blocks::intent_fusion(
                enc.token_states,
                (!ab.no_intent_concat).then_some(intent_logits),
                mask,
                p,
                cfg.encoder.dropout_rate,
                reborrow(&mut rng),
            )?;
            let types = blocks::slot_type_attention(fused, mask, p, cfg.n_types, ab.frozen_uniform)?;
            type_logits = Some(blocks::slot_type_heads(&types, p)?);
            type_attention = types.iter().map(|t| t.weights).collect();
        }
        let slot_input = match type_logits {
            Some(g) if ab.has_cross_attention() => blocks::fusion_cross_attention(enc.token_states, g, mask, p)?,
            _ => blocks::plain_slot_input(enc.token_states, p)?,
        };
        Ok(UtteranceGraph {
            intent_logits,
            slot_logits: blocks::slot_head(slot_input, p)?,
            type_logits,
            type_attention,
        })
    }

    /// Forward pass over a batch. Supplying `rng` turns on dropout; losses
    /// are built when the batch carries targets.
    pub fn forward<'t, F: Real>(
        &self,
        p: &Bound<'t, F>,
        batch: &Batch,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<ForwardGraph<'t, F>> {
        let utterances = batch
            .token_ids
            .iter()
            .zip(&batch.mask)
            .map(|(ids, mask)| self.forward_one(p, ids, mask, reborrow(&mut rng)))
            .collect::<Result<Vec<_>>>()?;
        let losses = match &batch.targets {
            Some(_) => Some(self.losses(&utterances, batch)?),
            None => None,
        };
        Ok(ForwardGraph {
            utterances,
            losses,
            width: batch.width(),
        })
    }

    fn losses<'t, F: Real>(&self, utts: &[UtteranceGraph<'t, F>], batch: &Batch) -> Result<LossGraph<'t, F>> {
        let cfg = &self.config;
        let targets = batch.targets.as_ref().expect("checked by caller");
        let inv_b = F::of(1.0 / utts.len() as f64);
        let aux_count = batch.total_tokens() * cfg.n_types;
        let (mut intent, mut slot, mut aux) = (None, None, None);
        let add = |acc: Option<Var<'t, F>>, v: Var<'t, F>| -> Result<Option<Var<'t, F>>> {
            Ok(Some(match acc {
                Some(a) => a.add(v)?,
                None => v,
            }))
        };
        for (b, u) in utts.iter().enumerate() {
            intent = add(intent, u.intent_logits.cross_entropy(&[Some(targets.intent[b])])?)?;
            slot = add(slot, u.slot_logits.cross_entropy(&targets.slot[b])?)?;
            if let Some(g) = u.type_logits {
                let rows = &targets.aux[b];
                if rows.iter().any(|r| r.len() != cfg.n_types) {
                    return Err(Error::Config(format!(
                        "auxiliary targets are not {} wide",
                        cfg.n_types
                    )));
                }
                let flat: Vec<F> = rows.iter().flatten().map(|&v| F::of(v as f64)).collect();
                let mask: Vec<bool> = batch.mask[b]
                    .iter()
                    .flat_map(|&m| std::iter::repeat_n(m, cfg.n_types))
                    .collect();
                aux = add(aux, g.bce_with_logits(&flat, &mask, aux_count)?)?;
            }
        }
        let intent = intent.expect("non-empty batch").scale(inv_b)?;
        let slot = slot.expect("non-empty batch").scale(inv_b)?;
        let in_total = aux.filter(|_| cfg.ablation.uses_aux_loss());
        let total = blocks::total_loss(intent, in_total, slot, cfg.weights)?;
        Ok(LossGraph {
            intent,
            aux,
            slot,
            total,
        })
    }

    /// Detached batch forward.
    pub fn run<F: Real>(
        &self,
        params: &crate::autodiff::ParamSet<F>,
        batch: &Batch,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<ForwardOutput<F>> {
        let tape = crate::autodiff::Tape::new();
        let p = params.bind(&tape);
        let g = self.forward(&p, batch, rng)?;
        g.output(&self.config, batch)
    }

    /// Argmax decoding of intents and per-token BIO labels.
    pub fn predict<F: Real>(&self, params: &crate::autodiff::ParamSet<F>, batch: &Batch) -> Result<Prediction> {
        Ok(self.run(params, batch, None)?.predict())
    }
}

impl<'t, F: Real> ForwardGraph<'t, F> {
    pub fn output(&self, cfg: &ModelConfig, batch: &Batch) -> Result<ForwardOutput<F>> {
        let b = self.utterances.len();
        let l = self.width;
        let intents: Vec<_> = self.utterances.iter().map(|u| u.intent_logits).collect();
        let slots: Vec<_> = self.utterances.iter().map(|u| u.slot_logits).collect();
        let has_gen = self.utterances.first().is_some_and(|u| u.type_logits.is_some());
        let (type_logits, attention) = if has_gen {
            let tl: Vec<_> = self.utterances.iter().filter_map(|u| u.type_logits).collect();
            let att: Vec<_> = self.utterances.iter().flat_map(|u| u.type_attention.iter().copied()).collect();
            (
                Some(stack(&tl, vec![b, l, cfg.n_types])?),
                Some(stack(&att, vec![b, cfg.n_types, l, l])?),
            )
        } else {
            (None, None)
        };
        let losses = self.losses.as_ref().map(|lg| LossValues {
            intent: lg.intent.item().as_f64(),
            aux: lg.aux.map(|a| a.item().as_f64()),
            slot: lg.slot.item().as_f64(),
            total: lg.total.item().as_f64(),
        });
        Ok(ForwardOutput {
            intent_logits: stack(&intents, vec![b, cfg.n_intents])?,
            slot_logits: stack(&slots, vec![b, l, cfg.n_labels])?,
            type_logits,
            attention,
            lengths: batch.lengths.clone(),
            losses,
        })
    }
}

impl<F: Real> ForwardOutput<F> {
    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn width(&self) -> usize {
        self.slot_logits.shape()[1]
    }

    pub fn n_types(&self) -> usize {
        self.attention.as_ref().map_or(0, |a| a.shape()[1])
    }

    /// Attention of utterance `b`, type `t`, cut to its true length.
    pub fn attention_matrix(&self, b: usize, t: usize) -> Option<Vec<Vec<F>>> {
        let att = self.attention.as_ref()?;
        let (nt, l) = (att.shape()[1], att.shape()[2]);
        let len = self.lengths[b];
        let base = (b * nt + t) * l * l;
        Some(
            (0..len)
                .map(|i| att.data()[base + i * l..base + i * l + len].to_vec())
                .collect(),
        )
    }

    pub fn predict(&self) -> Prediction {
        let ni = self.intent_logits.shape()[1];
        let intents = self.intent_logits.data().chunks(ni).map(argmax).collect();
        let (l, ns) = (self.slot_logits.shape()[1], self.slot_logits.shape()[2]);
        let tags = self
            .slot_logits
            .data()
            .chunks(l * ns)
            .zip(&self.lengths)
            .map(|(utt, &len)| utt.chunks(ns).take(len).map(argmax).collect())
            .collect();
        Prediction { intents, tags }
    }
}
