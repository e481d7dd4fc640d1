//! Binary per-type token targets for the auxiliary classifiers.
//!
//! A non-O type column is 1 exactly at tokens tagged `B-x` or `I-x` of that
//! type. The `O` column is 1 exactly at tokens tagged `O`.

use super::corpus::Tag;
use super::labels::LabelMaps;
use crate::error::{Error, Result};

/// Returns an `l x |T|` 0/1 matrix, one row per token.
pub fn generate_aux_targets<S: AsRef<str>>(bio_tags: &[S], maps: &LabelMaps) -> Result<Vec<Vec<u8>>> {
    let n_types = maps.slot_types.len();
    bio_tags
        .iter()
        .map(|tag| {
            let s = tag.as_ref();
            let parsed = Tag::parse(s).ok_or_else(|| Error::InvalidInput(format!("malformed tag {s:?}")))?;
            let col = match parsed.slot_type() {
                None => maps.outside_type(),
                Some(ty) => maps.slot_types.require(ty)?,
            };
            let mut row = vec![0u8; n_types];
            row[col] = 1;
            Ok(row)
        })
        .collect()
}
