//! Compact transformer encoder.
//!
//! Learned token and position embeddings, a learned classification row
//! prepended at position 0, then `n_layers` post-norm encoder blocks
//! (multi-head self-attention and a GELU feed-forward, each followed by a
//! residual add and layer norm). The classification row's output is the
//! utterance context vector; the remaining rows are the token states.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Init, Real, Var};
use crate::data::vocab::{normalize, Vocab};
use crate::error::{Error, Result};

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
    pub dropout_rate: f64,
}

impl EncoderConfig {
    pub fn desk_scale(vocab_size: usize, max_len: usize) -> Self {
        EncoderConfig {
            vocab_size,
            d: 64,
            n_layers: 2,
            n_heads: 4,
            ffn_dim: 128,
            max_positions: max_len + 1,
            dropout_rate: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n_heads == 0 || !self.d.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "model dimension {} is not divisible by {} heads",
                self.d, self.n_heads
            )));
        }
        if self.vocab_size < 2 || self.ffn_dim == 0 || self.max_positions < 2 {
            return Err(Error::Config("encoder sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let d = self.d;
        let embed = self.vocab_size * d + self.max_positions * d + d + 2 * d;
        let attn = 4 * (d * d + d);
        let ffn = d * self.ffn_dim + self.ffn_dim + self.ffn_dim * d + d;
        embed + self.n_layers * (attn + ffn + 4 * d)
    }

    pub fn init_params<F: Real>(&self, init: &mut Init<F>) -> Result<()> {
        let d = self.d;
        init.xavier("enc.tok_emb", self.vocab_size, d)?;
        init.xavier("enc.pos_emb", self.max_positions, d)?;
        init.xavier("enc.cls", 1, d)?;
        init.layer_norm("enc.emb_ln", d)?;
        for l in 0..self.n_layers {
            let p = format!("enc.layer{l}");
            for proj in ["q", "k", "v", "o"] {
                init.linear(&format!("{p}.attn.{proj}"), d, d)?;
            }
            init.layer_norm(&format!("{p}.ln1"), d)?;
            init.linear(&format!("{p}.ff1"), d, self.ffn_dim)?;
            init.linear(&format!("{p}.ff2"), self.ffn_dim, d)?;
            init.layer_norm(&format!("{p}.ln2"), d)?;
        }
        Ok(())
    }
}

/// Word ids with lowercasing and UNK fallback.
pub fn tokenize<S: AsRef<str>>(tokens: &[S], vocab: &Vocab) -> Vec<usize> {
    tokens.iter().map(|t| vocab.id(&normalize(t.as_ref()))).collect()
}

/// Encoder output for one (padded) utterance.
pub struct EncodedUtterance<'t, F> {
    /// `L x d`, classification row excluded.
    pub token_states: Var<'t, F>,
    /// `1 x d`, the classification row.
    pub context: Var<'t, F>,
    pub mask: Vec<bool>,
}

pub(crate) fn linear<'t, F: Real>(x: Var<'t, F>, p: &Bound<'t, F>, prefix: &str) -> Result<Var<'t, F>> {
    x.affine(p.get(&format!("{prefix}.w"))?, p.get(&format!("{prefix}.b"))?)
}

pub(crate) fn layer_norm<'t, F: Real>(x: Var<'t, F>, p: &Bound<'t, F>, prefix: &str) -> Result<Var<'t, F>> {
    x.layer_norm(
        p.get(&format!("{prefix}.gain"))?,
        p.get(&format!("{prefix}.bias"))?,
        F::of(LN_EPS),
    )
}

/// Single-head scaled dot-product attention; `key_mask` hides padded keys.
/// Returns the attended values and the attention weights.
pub(crate) fn attend<'t, F: Real>(
    q: Var<'t, F>,
    k: Var<'t, F>,
    v: Var<'t, F>,
    key_mask: &[bool],
) -> Result<(Var<'t, F>, Var<'t, F>)> {
    let dk = k.dims2().1 as f64;
    let scores = q.matmul(k.t()?)?.scale(F::of(1.0 / dk.sqrt()))?;
    let weights = scores.softmax_masked(key_mask)?;
    Ok((weights.matmul(v)?, weights))
}

/// Shortens an optional RNG borrow so it can be handed out repeatedly.
pub(crate) fn reborrow<'a>(rng: &'a mut Option<&mut dyn RngCore>) -> Option<&'a mut dyn RngCore> {
    match rng {
        Some(r) => Some(&mut **r),
        None => None,
    }
}

pub struct Encoder {
    pub config: EncoderConfig,
}

impl Encoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        Ok(Encoder { config })
    }

    /// Encodes one padded id row. `rng` enables dropout.
    pub fn encode_one<'t, F: Real>(
        &self,
        p: &Bound<'t, F>,
        ids: &[usize],
        mask: &[bool],
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<EncodedUtterance<'t, F>> {
        let cfg = &self.config;
        let len = ids.len();
        if len + 1 > cfg.max_positions {
            return Err(Error::Index(format!(
                "utterance of {len} tokens needs {} positions, encoder has {}",
                len + 1,
                cfg.max_positions
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= cfg.vocab_size) {
            return Err(Error::Index(format!("token id {bad} >= vocab size {}", cfg.vocab_size)));
        }
        let tape = p.get("enc.cls")?.tape();
        let tokens = tape.gather(p.get("enc.tok_emb")?, ids)?;
        let rows = tape.concat_rows(&[p.get("enc.cls")?, tokens])?;
        let positions: Vec<usize> = (0..=len).collect();
        let pos = tape.gather(p.get("enc.pos_emb")?, &positions)?;
        let mut x = layer_norm(rows.add(pos)?, p, "enc.emb_ln")?;
        x = x.dropout(cfg.dropout_rate, reborrow(&mut rng))?;

        let mut full_mask = Vec::with_capacity(len + 1);
        full_mask.push(true);
        full_mask.extend_from_slice(mask);

        let dh = cfg.d / cfg.n_heads;
        for l in 0..cfg.n_layers {
            let pre = format!("enc.layer{l}");
            let q = linear(x, p, &format!("{pre}.attn.q"))?;
            let k = linear(x, p, &format!("{pre}.attn.k"))?;
            let v = linear(x, p, &format!("{pre}.attn.v"))?;
            let mut heads = Vec::with_capacity(cfg.n_heads);
            for h in 0..cfg.n_heads {
                let (ctx, _) = attend(
                    q.slice_cols(h * dh, dh)?,
                    k.slice_cols(h * dh, dh)?,
                    v.slice_cols(h * dh, dh)?,
                    &full_mask,
                )?;
                heads.push(ctx);
            }
            let attn = linear(tape.concat_cols(&heads)?, p, &format!("{pre}.attn.o"))?
                .dropout(cfg.dropout_rate, reborrow(&mut rng))?;
            x = layer_norm(x.add(attn)?, p, &format!("{pre}.ln1"))?;
            let ff = linear(linear(x, p, &format!("{pre}.ff1"))?.gelu()?, p, &format!("{pre}.ff2"))?
                .dropout(cfg.dropout_rate, reborrow(&mut rng))?;
            x = layer_norm(x.add(ff)?, p, &format!("{pre}.ln2"))?;
        }
        Ok(EncodedUtterance {
            token_states: x.slice_rows(1, len)?,
            context: x.slice_rows(0, 1)?,
            mask: mask.to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{ParamSet, Tape};
    use crate::data::Utterance;

    fn setup() -> (Encoder, ParamSet<f32>) {
        let cfg = EncoderConfig {
            vocab_size: 12,
            d: 16,
            n_layers: 2,
            n_heads: 4,
            ffn_dim: 24,
            max_positions: 9,
            dropout_rate: 0.1,
        };
        let mut init = Init::new(3);
        cfg.init_params(&mut init).unwrap();
        (Encoder::new(cfg).unwrap(), init.finish())
    }

    #[test]
    fn tokenize_lowercases_and_falls_back() {
        let c = vec![Utterance::new(vec!["fly".into(), "boston".into()], "i", vec!["O".into(), "B-c".into()]).unwrap()];
        let v = Vocab::build(&c);
        let ids = tokenize(&["Boston", "boston", "fly", "paris"], &v);
        assert_eq!(ids[0], ids[1]);
        assert_eq!(ids[2], v.id("fly"));
        assert_eq!(ids[3], crate::data::vocab::UNK_ID);
    }

    #[test]
    fn shapes_and_param_count() {
        let (enc, ps) = setup();
        assert_eq!(ps.numel(), enc.config.param_count());
        let tape = Tape::new();
        let b = ps.bind(&tape);
        let out = enc.encode_one(&b, &[5], &[true], None).unwrap();
        assert_eq!(out.token_states.shape(), vec![1, 16]);
        assert_eq!(out.context.shape(), vec![1, 16]);
    }

    #[test]
    fn padding_does_not_change_valid_rows() {
        let (enc, ps) = setup();
        let tape = Tape::new();
        let b = ps.bind(&tape);
        let short = enc.encode_one(&b, &[4, 7, 2], &[true; 3], None).unwrap();
        let long = enc
            .encode_one(&b, &[4, 7, 2, 0, 0, 0], &[true, true, true, false, false, false], None)
            .unwrap();
        let s = short.token_states.to_tensor();
        let l = long.token_states.to_tensor();
        for i in 0..3 {
            for (a, b) in s.row(i).iter().zip(l.row(i)) {
                assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
            }
        }
        assert!(short.context.to_tensor().max_abs_diff(&long.context.to_tensor()).unwrap() <= 1e-5);
    }

    #[test]
    fn position_overflow_is_error() {
        let (enc, ps) = setup();
        let tape = Tape::new();
        let b = ps.bind(&tape);
        assert!(enc.encode_one(&b, &[2; 9], &[true; 9], None).is_err());
        assert!(enc.encode_one(&b, &[99], &[true], None).is_err());
    }

    #[test]
    fn heads_must_divide_dim() {
        let cfg = EncoderConfig {
            d: 10,
            n_heads: 4,
            ..EncoderConfig::desk_scale(10, 50)
        };
        assert!(Encoder::new(cfg).is_err());
    }
}
