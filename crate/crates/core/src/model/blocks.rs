//! The network's building blocks, each a pure function of its inputs and
//! the bound parameters.

use rand::RngCore;

use crate::autodiff::{Bound, Real, Tensor, Var};
use crate::encoder::{attend, layer_norm, linear};
use crate::error::Result;

/// Utterance context row (`1 x d`) to intent logits (`1 x |I|`).
pub fn intent_head<'t, F: Real>(context: Var<'t, F>, p: &Bound<'t, F>) -> Result<Var<'t, F>> {
    linear(context, p, "intent")
}

/// Copies the intent logits onto every one of `rows` positions.
pub fn expand_intent<'t, F: Real>(intent_logits: Var<'t, F>, rows: usize) -> Result<Var<'t, F>> {
    intent_logits.broadcast_rows(rows)
}

/// Enriches token states with the intent logits:
/// `LN(u + SA(LL(LN(drop(u) ++ intent))))`.
pub fn intent_fusion<'t, F: Real>(
    token_states: Var<'t, F>,
    intent_logits: Option<Var<'t, F>>,
    mask: &[bool],
    p: &Bound<'t, F>,
    dropout_rate: f64,
    rng: Option<&mut dyn RngCore>,
) -> Result<Var<'t, F>> {
    let rows = token_states.dims2().0;
    let mut x = token_states.dropout(dropout_rate, rng)?;
    if let Some(g) = intent_logits {
        x = x.concat_cols(expand_intent(g, rows)?)?;
    }
    let z = linear(layer_norm(x, p, "gen.fuse.ln_in")?, p, "gen.fuse.ll")?;
    let (sa, _) = attend(
        linear(z, p, "gen.fuse.q")?,
        linear(z, p, "gen.fuse.k")?,
        linear(z, p, "gen.fuse.v")?,
        mask,
    )?;
    layer_norm(token_states.add(sa)?, p, "gen.fuse.ln_out")
}

/// Output of one slot type's self-attention.
pub struct TypeAttention<'t, F> {
    /// `L x d_h` attended features.
    pub features: Var<'t, F>,
    /// `L x L` attention weights.
    pub weights: Var<'t, F>,
}

/// Row-uniform attention over valid key positions.
pub fn uniform_attention<F: Real>(mask: &[bool]) -> Tensor<F> {
    let n = mask.len();
    let valid = mask.iter().filter(|&&m| m).count().max(1);
    let w = F::of(1.0 / valid as f64);
    let row: Vec<F> = mask.iter().map(|&m| if m { w } else { F::zero() }).collect();
    Tensor::new(vec![n, n], row.repeat(n)).expect("non-empty mask")
}

/// One single-head self-attention per slot type.
pub fn slot_type_attention<'t, F: Real>(
    fused: Var<'t, F>,
    mask: &[bool],
    p: &Bound<'t, F>,
    n_types: usize,
    frozen_uniform: bool,
) -> Result<Vec<TypeAttention<'t, F>>> {
    (0..n_types)
        .map(|i| {
            let pre = format!("gen.type{i}");
            let v = linear(fused, p, &format!("{pre}.v"))?;
            if frozen_uniform {
                let weights = fused.tape().constant(uniform_attention(mask));
                return Ok(TypeAttention {
                    features: weights.matmul(v)?,
                    weights,
                });
            }
            let q = linear(fused, p, &format!("{pre}.q"))?;
            let k = linear(fused, p, &format!("{pre}.k"))?;
            let (features, weights) = attend(q, k, v, mask)?;
            Ok(TypeAttention { features, weights })
        })
        .collect()
}

/// Per-type binary logits, one column per type (`L x |T|`).
pub fn slot_type_heads<'t, F: Real>(types: &[TypeAttention<'t, F>], p: &Bound<'t, F>) -> Result<Var<'t, F>> {
    let cols = types
        .iter()
        .enumerate()
        .map(|(i, t)| linear(t.features, p, &format!("gen.type{i}.head")))
        .collect::<Result<Vec<_>>>()?;
    cols[0].tape().concat_cols(&cols)
}

/// Cross attention from token states (queries) onto projected type logits
/// (keys and values), then `LL(LN(u + cross))`.
pub fn fusion_cross_attention<'t, F: Real>(
    token_states: Var<'t, F>,
    type_logits: Var<'t, F>,
    mask: &[bool],
    p: &Bound<'t, F>,
) -> Result<Var<'t, F>> {
    let projected = linear(type_logits, p, "cross.proj")?;
    let (cross, _) = attend(
        linear(token_states, p, "cross.q")?,
        linear(projected, p, "cross.k")?,
        linear(projected, p, "cross.v")?,
        mask,
    )?;
    linear(layer_norm(token_states.add(cross)?, p, "slot.ln")?, p, "slot.ll")
}

/// Slot-classifier input without cross attention: `LL(LN(u))`.
pub fn plain_slot_input<'t, F: Real>(token_states: Var<'t, F>, p: &Bound<'t, F>) -> Result<Var<'t, F>> {
    linear(layer_norm(token_states, p, "slot.ln")?, p, "slot.ll")
}

/// `L x d` to BIO logits `L x |S|`.
pub fn slot_head<'t, F: Real>(slot_input: Var<'t, F>, p: &Bound<'t, F>) -> Result<Var<'t, F>> {
    linear(slot_input, p, "slot.out")
}

/// Weighted joint objective. `aux` is `None` when the auxiliary term is off.
pub fn total_loss<'t, F: Real>(
    intent: Var<'t, F>,
    aux: Option<Var<'t, F>>,
    slot: Var<'t, F>,
    weights: super::LossWeights,
) -> Result<Var<'t, F>> {
    let mut total = intent.scale(F::of(weights.intent))?.add(slot.scale(F::of(weights.slot))?)?;
    if let Some(a) = aux {
        total = total.add(a.scale(F::of(weights.aux))?)?;
    }
    Ok(total)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<F: Real>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
