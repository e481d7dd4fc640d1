use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::corpus::{Tag, Utterance};
use crate::error::{Error, Result};

pub const OUTSIDE: &str = "O";

/// Ordered list with a reverse index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Inventory {
    items: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Inventory {
    fn from(items: Vec<String>) -> Self {
        let index = items.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Inventory { items, index }
    }
}

impl From<Inventory> for Vec<String> {
    fn from(inv: Inventory) -> Self {
        inv.items
    }
}

impl Inventory {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.items[id]
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    /// Like [`Inventory::id`] but reports the full inventory on failure.
    pub fn require(&self, label: &str) -> Result<usize> {
        self.id(label).ok_or_else(|| Error::UnknownLabel {
            label: label.to_string(),
            known: self.items.join(", "),
        })
    }
}

/// Intent, slot type and BIO label inventories.
///
/// Slot types always contain `O` at index 0, followed by the other types in
/// lexicographic order. BIO labels are `O` then `B-x`, `I-x` for each non-O
/// type in slot-type order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMaps {
    pub intents: Inventory,
    pub slot_types: Inventory,
    pub bio_labels: Inventory,
}

impl LabelMaps {
    pub fn from_names<I, T>(intents: I, slot_types: T) -> Self
    where
        I: IntoIterator,
        I::Item: Into<String>,
        T: IntoIterator,
        T::Item: Into<String>,
    {
        let intents: BTreeSet<String> = intents.into_iter().map(Into::into).collect();
        let types: BTreeSet<String> = slot_types
            .into_iter()
            .map(Into::into)
            .filter(|t| t != OUTSIDE)
            .collect();
        let mut t = vec![OUTSIDE.to_string()];
        t.extend(types.iter().cloned());
        let mut s = vec![OUTSIDE.to_string()];
        for ty in &types {
            s.push(format!("B-{ty}"));
            s.push(format!("I-{ty}"));
        }
        LabelMaps {
            intents: intents.into_iter().collect::<Vec<_>>().into(),
            slot_types: t.into(),
            bio_labels: s.into(),
        }
    }

    pub fn build(corpus: &[Utterance]) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::InvalidInput("cannot build label maps from an empty corpus".into()));
        }
        let mut types = BTreeSet::new();
        for u in corpus {
            for tag in &u.bio_tags {
                let parsed = Tag::parse(tag).ok_or_else(|| Error::InvalidInput(format!("malformed tag {tag:?}")))?;
                if let Some(ty) = parsed.slot_type() {
                    types.insert(ty.to_string());
                }
            }
        }
        Ok(Self::from_names(corpus.iter().map(|u| u.intent.clone()), types))
    }

    pub fn outside_type(&self) -> usize {
        0
    }

    /// Slot-type index for a BIO label id.
    pub fn type_of_label(&self, label: usize) -> usize {
        label.div_ceil(2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(tags: &[&str], intent: &str) -> Utterance {
        Utterance {
            tokens: tags.iter().map(|_| "w".to_string()).collect(),
            intent: intent.into(),
            bio_tags: tags.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn single_type() {
        let m = LabelMaps::build(&[utt(&["O", "B-city", "I-city"], "a")]).unwrap();
        assert_eq!(m.slot_types.items(), ["O", "city"]);
        assert_eq!(m.bio_labels.len(), 3);
    }

    #[test]
    fn two_types() {
        let m = LabelMaps::build(&[utt(&["B-day", "B-city"], "a"), utt(&["O"], "b")]).unwrap();
        assert_eq!(m.slot_types.len(), 3);
        assert_eq!(m.bio_labels.items(), ["O", "B-city", "I-city", "B-day", "I-day"]);
        assert_eq!(m.intents.items(), ["a", "b"]);
        for (l, name) in m.bio_labels.items().iter().enumerate() {
            let ty = m.slot_types.name(m.type_of_label(l));
            assert!(name == ty || name.ends_with(&format!("-{ty}")));
        }
    }

    #[test]
    fn order_independent() {
        let a = [utt(&["B-day"], "x"), utt(&["B-city"], "y")];
        let b = [utt(&["B-city"], "y"), utt(&["B-day"], "x")];
        assert_eq!(LabelMaps::build(&a).unwrap(), LabelMaps::build(&b).unwrap());
    }

    #[test]
    fn empty_corpus_is_error() {
        assert!(LabelMaps::build(&[]).is_err());
    }

    #[test]
    fn unknown_label_lists_inventory() {
        let m = LabelMaps::build(&[utt(&["O"], "a")]).unwrap();
        let msg = m.intents.require("zzz").unwrap_err().to_string();
        assert!(msg.contains("zzz") && msg.contains('a'));
    }

    #[test]
    fn serde_round_trip() {
        let m = LabelMaps::build(&[utt(&["B-day", "B-city"], "a")]).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        let back: LabelMaps = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.slot_types.id("day"), Some(2));
    }
}
