use serde::{Deserialize, Serialize};

use crate::autodiff::{Init, ParamSet, Real};
use crate::data::LabelMaps;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};

/// Parameter name prefix of the slot-type weight and feature generator.
pub const GENERATOR_PREFIX: &str = "gen.";
/// Parameter name prefix of the cross-attention fusion block.
pub const CROSS_PREFIX: &str = "cross.";

/// Independent switches that remove or freeze parts of the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// Drop the whole slot-type generator (and with it cross attention).
    pub no_aux_network: bool,
    /// Keep the generator and its loss, but feed the slot head from the
    /// encoder alone.
    pub no_cross_attention: bool,
    /// Skip concatenating the intent logits onto the token states.
    pub no_intent_concat: bool,
    /// Drop the auxiliary loss term.
    pub no_aux_loss: bool,
    /// Replace every per-type softmax with a uniform distribution.
    pub frozen_uniform: bool,
}

impl Ablation {
    pub fn has_generator(&self) -> bool {
        !self.no_aux_network
    }

    pub fn has_cross_attention(&self) -> bool {
        !self.no_aux_network && !self.no_cross_attention
    }

    pub fn uses_aux_loss(&self) -> bool {
        !self.no_aux_network && !self.no_aux_loss
    }

    /// Every one of the 32 flag combinations.
    pub fn lattice() -> Vec<Ablation> {
        (0u8..32)
            .map(|m| Ablation {
                no_aux_network: m & 1 != 0,
                no_cross_attention: m & 2 != 0,
                no_intent_concat: m & 4 != 0,
                no_aux_loss: m & 8 != 0,
                frozen_uniform: m & 16 != 0,
            })
            .collect()
    }

    /// Short label used in reports.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.no_aux_network {
            parts.push("no_aux_network");
        }
        if self.no_cross_attention {
            parts.push("no_cross_attention");
        }
        if self.no_intent_concat {
            parts.push("no_intent_concat");
        }
        if self.no_aux_loss {
            parts.push("no_aux_loss");
        }
        if self.frozen_uniform {
            parts.push("frozen_uniform");
        }
        if parts.is_empty() {
            "full".into()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub intent: f64,
    pub aux: f64,
    pub slot: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            intent: 1.0,
            aux: 1.0,
            slot: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Projection width of each slot-type attention.
    pub d_h: usize,
    pub n_intents: usize,
    pub n_types: usize,
    pub n_labels: usize,
    pub weights: LossWeights,
    pub ablation: Ablation,
}

impl ModelConfig {
    pub fn new(encoder: EncoderConfig, d_h: usize, maps: &LabelMaps) -> Self {
        ModelConfig {
            encoder,
            d_h,
            n_intents: maps.intents.len(),
            n_types: maps.slot_types.len(),
            n_labels: maps.bio_labels.len(),
            weights: LossWeights::default(),
            ablation: Ablation::default(),
        }
    }

    pub fn d(&self) -> usize {
        self.encoder.d
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.d_h == 0 {
            return Err(Error::Config("d_h must be at least 1".into()));
        }
        if self.n_intents == 0 || self.n_types == 0 || self.n_labels == 0 {
            return Err(Error::Config("label inventories must be non-empty".into()));
        }
        if self.n_labels != 2 * self.n_types - 1 {
            return Err(Error::Config(format!(
                "{} BIO labels do not match {} slot types",
                self.n_labels, self.n_types
            )));
        }
        let w = self.weights;
        for (name, v) in [("alpha", w.intent), ("beta", w.aux), ("gamma", w.slot)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} = {v} must be >= 0")));
            }
        }
        Ok(())
    }

    /// Fails when the config was built for different label inventories.
    pub fn check_maps(&self, maps: &LabelMaps) -> Result<()> {
        let got = (maps.intents.len(), maps.slot_types.len(), maps.bio_labels.len());
        let want = (self.n_intents, self.n_types, self.n_labels);
        if got != want {
            return Err(Error::Config(format!(
                "model expects (intents, types, labels) = {want:?}, label maps have {got:?}"
            )));
        }
        Ok(())
    }

    fn fusion_input(&self) -> usize {
        if self.ablation.no_intent_concat {
            self.d()
        } else {
            self.d() + self.n_intents
        }
    }

    /// Parameters of one slot type: Q, K, V projections and its binary head.
    pub fn per_type_param_count(&self) -> usize {
        3 * (self.d() * self.d_h + self.d_h) + self.d_h + 1
    }

    /// Closed-form count of all trainable scalars.
    pub fn param_count(&self) -> usize {
        let d = self.d();
        let lin = |i: usize, o: usize| i * o + o;
        let mut n = self.encoder.param_count() + lin(d, self.n_intents);
        if self.ablation.has_generator() {
            let fi = self.fusion_input();
            n += 2 * fi + lin(fi, d) + 3 * lin(d, d) + 2 * d;
            n += self.n_types * self.per_type_param_count();
        }
        if self.ablation.has_cross_attention() {
            n += lin(self.n_types, d) + 3 * lin(d, d);
        }
        n + 2 * d + lin(d, d) + lin(d, self.n_labels)
    }

    pub fn init_params<F: Real>(&self, seed: u64) -> Result<ParamSet<F>> {
        self.validate()?;
        let d = self.d();
        let mut init = Init::new(seed);
        self.encoder.init_params(&mut init)?;
        init.linear("intent", d, self.n_intents)?;
        if self.ablation.has_generator() {
            let fi = self.fusion_input();
            init.layer_norm("gen.fuse.ln_in", fi)?;
            init.linear("gen.fuse.ll", fi, d)?;
            for p in ["q", "k", "v"] {
                init.linear(&format!("gen.fuse.{p}"), d, d)?;
            }
            init.layer_norm("gen.fuse.ln_out", d)?;
            for i in 0..self.n_types {
                for p in ["q", "k", "v"] {
                    init.linear(&format!("gen.type{i}.{p}"), d, self.d_h)?;
                }
                init.linear(&format!("gen.type{i}.head"), self.d_h, 1)?;
            }
        }
        if self.ablation.has_cross_attention() {
            init.linear("cross.proj", self.n_types, d)?;
            for p in ["q", "k", "v"] {
                init.linear(&format!("cross.{p}"), d, d)?;
            }
        }
        init.layer_norm("slot.ln", d)?;
        init.linear("slot.ll", d, d)?;
        init.linear("slot.out", d, self.n_labels)?;
        Ok(init.finish())
    }
}
